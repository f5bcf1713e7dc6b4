"""Executable networks built from declarative specs.

Blocks are composite modules wiring the primitive layers, including the
split/concat/shuffle branch structure that a flat sequential list cannot
express. ``gradient_check`` compares every learnable parameter's analytic
gradient against central differences, and checkpoints round-trip all
state arrays bit-exactly through ``.npz``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import arch
from .arch import BlockDef, BlockVariant, NetworkSpec, VariantTag, rcpc_init
from .layers import (
    BatchNorm,
    ChannelShuffle,
    Conv3x3,
    DepthwiseConv3x3,
    FullyConnected,
    GlobalAvgPool,
    Module,
    ParamTensor,
    PointwiseConv,
    ReLU,
    TransformPC,
    channel_split,
    concat_channels,
    softmax_cross_entropy,
)
from .transforms import TransformSpec

CHECKPOINT_VERSION = 1


class Sequential(Module):
    def __init__(self, modules: list[tuple[str, Module]]):
        self.modules = modules

    def children(self):
        return list(self.modules)

    def forward(self, x, training):
        for _, m in self.modules:
            x = m.forward(x, training)
        return x

    def backward(self, grad):
        for _, m in reversed(self.modules):
            grad = m.backward(grad)
        return grad


def _pc_stage(name: str, cin: int, cout: int, variant: BlockVariant,
              relu_default: bool, rng: np.random.Generator) -> list[tuple[str, Module]]:
    """Mixing layer + BN (+ activation) under a block variant."""
    stage: list[tuple[str, Module]] = []
    tag = variant.tag
    if tag is VariantTag.BASELINE:
        stage.append(("pc", PointwiseConv(name + ".pc", cin, cout, rng=rng)))
    elif tag is VariantTag.RCPC:
        frozen = rcpc_init(cin, cout, rng)
        stage.append(("pc", PointwiseConv(name + ".pc", cin, cout,
                                          learnable=False, weights=frozen.values)))
    else:
        spec = TransformSpec(variant.transform, cin, cout, fast=True)
        stage.append(("tpc", TransformPC(name + ".tpc", spec)))
    stage.append(("bn", BatchNorm(name + ".bn", cout)))
    keep_relu = (
        relu_default
        if tag in (VariantTag.BASELINE, VariantTag.RCPC)
        else tag is VariantTag.CTPC_RELU
    )
    if keep_relu:
        stage.append(("relu", ReLU()))
    return stage


class ShuffleUnit(Module):
    """Stride-1 unit: split, transform one half, concat, shuffle."""

    def __init__(self, block: BlockDef, rng: np.random.Generator,
                 dw_decay_group: str = "default"):
        c = block.out_channels
        half = c // 2
        name = block.name
        parts = _pc_stage(name + ".stage1", half, half, block.variant, True, rng)
        parts += [
            ("dw", DepthwiseConv3x3(name + ".dw", half, rng=rng,
                                    weight_decay_group=dw_decay_group)),
            ("dw_bn", BatchNorm(name + ".dw_bn", half)),
        ]
        parts += _pc_stage(name + ".stage2", half, half, block.variant, True, rng)
        self.branch = Sequential(parts)
        self.shuffle = ChannelShuffle(c, groups=2)
        self.half = half

    def children(self):
        return [("branch", self.branch), ("shuffle", self.shuffle)]

    def forward(self, x, training):
        keep, go = channel_split(x)
        out = concat_channels(keep, self.branch.forward(go, training))
        return self.shuffle.forward(out, training)

    def backward(self, grad):
        grad = self.shuffle.backward(grad)
        gkeep = grad[:, : self.half]
        ggo = self.branch.backward(grad[:, self.half :])
        return concat_channels(gkeep, ggo)


class ShuffleDownUnit(Module):
    """Stride-2 unit: two branches over the full input, concat, shuffle."""

    def __init__(self, block: BlockDef, rng: np.random.Generator):
        cin, cout = block.in_channels, block.out_channels
        half = cout // 2
        name = block.name
        self.branch1 = Sequential([
            ("dw", DepthwiseConv3x3(name + ".b1.dw", cin, stride=2, rng=rng)),
            ("dw_bn", BatchNorm(name + ".b1.dw_bn", cin)),
            ("pc", PointwiseConv(name + ".b1.pc", cin, half, rng=rng)),
            ("bn", BatchNorm(name + ".b1.bn", half)),
            ("relu", ReLU()),
        ])
        self.branch2 = Sequential([
            ("pc1", PointwiseConv(name + ".b2.pc1", cin, half, rng=rng)),
            ("bn1", BatchNorm(name + ".b2.bn1", half)),
            ("relu1", ReLU()),
            ("dw", DepthwiseConv3x3(name + ".b2.dw", half, stride=2, rng=rng)),
            ("dw_bn", BatchNorm(name + ".b2.dw_bn", half)),
            ("pc2", PointwiseConv(name + ".b2.pc2", half, half, rng=rng)),
            ("bn2", BatchNorm(name + ".b2.bn2", half)),
            ("relu2", ReLU()),
        ])
        self.shuffle = ChannelShuffle(cout, groups=2)
        self.half = half

    def children(self):
        return [("b1", self.branch1), ("b2", self.branch2),
                ("shuffle", self.shuffle)]

    def forward(self, x, training):
        out = concat_channels(
            self.branch1.forward(x, training), self.branch2.forward(x, training)
        )
        return self.shuffle.forward(out, training)

    def backward(self, grad):
        grad = self.shuffle.backward(grad)
        return self.branch1.backward(grad[:, : self.half]) + self.branch2.backward(
            grad[:, self.half :]
        )


class MobileSepBlock(Module):
    """Depthwise-separable block; the transform variant drops both ReLUs."""

    def __init__(self, block: BlockDef, rng: np.random.Generator,
                 dw_decay_group: str = "default"):
        cin, cout = block.in_channels, block.out_channels
        name = block.name
        parts: list[tuple[str, Module]] = [
            ("dw", DepthwiseConv3x3(name + ".dw", cin, stride=block.stride, rng=rng,
                                    weight_decay_group=dw_decay_group)),
            ("dw_bn", BatchNorm(name + ".dw_bn", cin)),
        ]
        if block.variant.tag in (VariantTag.BASELINE, VariantTag.RCPC):
            parts.append(("dw_relu", ReLU()))
        parts += _pc_stage(name, cin, cout, block.variant, True, rng)
        self.body = Sequential(parts)

    def children(self):
        return [("body", self.body)]

    def forward(self, x, training):
        return self.body.forward(x, training)

    def backward(self, grad):
        return self.body.backward(grad)


class Stem(Module):
    def __init__(self, block: BlockDef, rng: np.random.Generator):
        self.body = Sequential([
            ("conv", Conv3x3(block.name + ".conv", block.in_channels,
                             block.out_channels, stride=block.stride, rng=rng)),
            ("bn", BatchNorm(block.name + ".bn", block.out_channels)),
            ("relu", ReLU()),
        ])

    def children(self):
        return [("body", self.body)]

    def forward(self, x, training):
        return self.body.forward(x, training)

    def backward(self, grad):
        return self.body.backward(grad)


class FinalConv(Module):
    def __init__(self, block: BlockDef, rng: np.random.Generator):
        self.body = Sequential([
            ("pc", PointwiseConv(block.name + ".pc", block.in_channels,
                                 block.out_channels, rng=rng)),
            ("bn", BatchNorm(block.name + ".bn", block.out_channels)),
            ("relu", ReLU()),
        ])

    def children(self):
        return [("body", self.body)]

    def forward(self, x, training):
        return self.body.forward(x, training)

    def backward(self, grad):
        return self.body.backward(grad)


class Head(Module):
    def __init__(self, block: BlockDef, rng: np.random.Generator):
        self.pool = GlobalAvgPool()
        self.fc = FullyConnected(block.name + ".fc", block.in_channels,
                                 block.out_channels, rng=rng)

    def children(self):
        return [("pool", self.pool), ("fc", self.fc)]

    def forward(self, x, training):
        return self.fc.forward(self.pool.forward(x, training), training)

    def backward(self, grad):
        return self.pool.backward(self.fc.backward(grad))


class Network(Module):
    """Top-level executable network with parameter bookkeeping."""

    def __init__(self, spec: NetworkSpec | None, blocks: list[tuple[str, Module]]):
        self.spec = spec
        self.body = Sequential(blocks)

    def children(self):
        return self.body.children()

    def forward(self, x, training=False):
        return self.body.forward(np.asarray(x, dtype=np.float64), training)

    def backward(self, grad):
        return self.body.backward(grad)

    def parameters(self) -> list[ParamTensor]:
        return [p for _, m in iter_modules(self) for p in m.params()]

    def learnable_parameters(self) -> list[ParamTensor]:
        return [p for p in self.parameters() if p.learnable]

    def zero_grad(self):
        for p in self.parameters():
            p.grad[...] = 0.0

    def num_learnable_params(self) -> int:
        return sum(p.size for p in self.learnable_parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        state: dict[str, np.ndarray] = {}
        for _, m in iter_modules(self):
            for key, arr in m.state_arrays().items():
                if key in state:
                    raise ValueError(f"duplicate state name {key}")
                state[key] = arr
        return state

    def load_state(self, arrays: dict[str, np.ndarray]):
        state = self.state_dict()
        missing = set(state) - set(arrays)
        if missing:
            raise ValueError(f"checkpoint is missing {sorted(missing)[:3]}...")
        for key, arr in state.items():
            new = np.asarray(arrays[key])
            if new.shape != arr.shape:
                raise ValueError(
                    f"{key}: checkpoint shape {new.shape} != model shape {arr.shape}"
                )
            arr[...] = new


def iter_modules(module: Module, prefix: str = ""):
    """Depth-first (path, module) walk, including the root."""
    yield prefix, module
    for name, child in getattr(module, "children", list)():
        child_prefix = f"{prefix}.{name}" if prefix else name
        yield from iter_modules(child, child_prefix)


def find_module(root: Module, predicate) -> list[tuple[str, Module]]:
    return [(path, m) for path, m in iter_modules(root) if predicate(m)]


def attach_probe(module: Module, sink: list):
    """Record the module's forward outputs into ``sink``.

    Shadows the bound method on the instance; ``detach_probe`` restores it.
    """
    original = module.forward

    def wrapped(x, training):
        out = original(x, training)
        sink.append(out)
        return out

    module.forward = wrapped
    module._probe_original = original
    return module


def detach_probe(module: Module):
    if hasattr(module, "_probe_original"):
        module.forward = module._probe_original
        del module._probe_original


def build_network(spec: NetworkSpec, seed: int = 0) -> Network:
    """Instantiate the executable network for a validated spec."""
    arch.validate(spec)
    rng = np.random.default_rng(seed)
    eligible = spec.eligible_indices()
    last3 = set(eligible[-3:])
    blocks: list[tuple[str, Module]] = []
    for i, b in enumerate(spec.blocks):
        # depthwise weights of the last three eligible blocks form their
        # own weight-decay group (the regularization-ablation handle)
        group = "dw_last3" if i in last3 else "default"
        if b.kind == "stem":
            mod: Module = Stem(b, rng)
        elif b.kind == "shuffle_unit":
            mod = ShuffleUnit(b, rng, dw_decay_group=group)
        elif b.kind == "shuffle_down":
            mod = ShuffleDownUnit(b, rng)
        elif b.kind == "mobile_sep":
            mod = MobileSepBlock(b, rng, dw_decay_group=group)
        elif b.kind == "final_conv":
            mod = FinalConv(b, rng)
        elif b.kind == "head":
            mod = Head(b, rng)
        else:
            raise ValueError(f"unknown block kind {b.kind}")
        blocks.append((b.name, mod))
    return Network(spec, blocks)


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_group: dict[str, float]
    input_rel_error: float
    passed: bool
    failures: list[str]

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"gradient check: {status} "
                 f"(max rel error {self.max_rel_error:.3e}, "
                 f"input {self.input_rel_error:.3e})"]
        for name, err in sorted(self.per_group.items()):
            lines.append(f"  {name}: {err:.3e}")
        lines.extend(self.failures)
        return "\n".join(lines)


def gradient_check(net: Network, x: np.ndarray, labels: np.ndarray,
                   tolerance: float = 1e-4, step: float = 1e-5,
                   training: bool = True) -> GradCheckReport:
    """Central-difference check of every learnable parameter and the input.

    Relative error per entry is |analytic - numeric| scaled by the larger
    magnitude (floored at 1e-6 to keep near-zero entries meaningful).
    Running batch-norm statistics are snapshotted and restored, so the
    check leaves the network state untouched.
    """
    x = np.asarray(x, dtype=np.float64)
    snapshot = {k: v.copy() for k, v in net.state_dict().items()}

    def loss_only() -> float:
        out = net.forward(x, training=training)
        return softmax_cross_entropy(out, labels)[0]

    net.zero_grad()
    out = net.forward(x, training=training)
    loss, dlogits = softmax_cross_entropy(out, labels)
    dx = net.backward(dlogits)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss in gradient check")

    def rel(a: float, n: float) -> float:
        return abs(a - n) / max(abs(a), abs(n), 1e-6)

    per_group: dict[str, float] = {}
    failures: list[str] = []
    for p in net.learnable_parameters():
        worst = 0.0
        flat = p.values.ravel()
        gflat = p.grad.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = loss_only()
            flat[idx] = orig - step
            down = loss_only()
            flat[idx] = orig
            numeric = (up - down) / (2 * step)
            worst = max(worst, rel(gflat[idx], numeric))
        per_group[p.name] = worst
        if worst > tolerance:
            failures.append(f"  {p.name} exceeds tolerance: {worst:.3e}")
        if not np.all(np.isfinite(p.grad)):
            failures.append(f"  {p.name} has non-finite gradients")

    input_worst = 0.0
    xflat = x.ravel()
    dxflat = dx.ravel()
    for idx in range(xflat.size):
        orig = xflat[idx]
        xflat[idx] = orig + step
        up = loss_only()
        xflat[idx] = orig - step
        down = loss_only()
        xflat[idx] = orig
        numeric = (up - down) / (2 * step)
        input_worst = max(input_worst, rel(dxflat[idx], numeric))
    if input_worst > tolerance:
        failures.append(f"  input gradient exceeds tolerance: {input_worst:.3e}")

    net.load_state(snapshot)
    max_err = max([input_worst, *per_group.values()])
    return GradCheckReport(
        max_rel_error=max_err,
        per_group=per_group,
        input_rel_error=input_worst,
        passed=not failures,
        failures=failures,
    )


def save_checkpoint(net: Network, path):
    """Write all state arrays plus a version tag; round-trips bit-exactly."""
    arrays = {"state/" + k: v for k, v in net.state_dict().items()}
    np.savez(path, __version__=np.array([CHECKPOINT_VERSION]), **arrays)


def load_checkpoint(net: Network, path):
    with np.load(path) as data:
        version = int(data["__version__"][0])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        arrays = {
            k[len("state/"):]: data[k] for k in data.files if k.startswith("state/")
        }
    net.load_state(arrays)
