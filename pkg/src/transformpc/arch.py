"""Declarative builders for the baseline networks and their variants.

A NetworkSpec is an ordered list of block definitions. The same spec
drives both the executable network (``network.build_network``) and the
static cost report (``cost``). Substitution schemes rewrite eligible
blocks to one of the block variants:

* baseline   - learnable pointwise convolutions (+BN+ReLU)
* rcpc       - pointwise weights drawn once from U(-1/sqrt(N/2),
               1/sqrt(N/2)) and frozen
* ctpc_relu  - fixed-transform pointwise convolution, BN, ReLU
* ctpc       - fixed-transform pointwise convolution, BN, no activation

Scheme names follow the (transform)-(block count)-(hierarchy level)
convention, e.g. ``DWHT-6-H`` or ``DCT-3-M-Front``; ``all`` replaces every
eligible block (the full block-study substitution).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction

import numpy as np

from .layers import ParamTensor
from .transforms import TransformKind, TransformSpec, is_power_of_two


class Family(str, Enum):
    SHUFFLENET_V2 = "shufflenet_v2"
    MOBILENET_V1 = "mobilenet_v1"


class VariantTag(str, Enum):
    BASELINE = "baseline"
    RCPC = "rcpc"
    CTPC_RELU = "ctpc_relu"
    CTPC = "ctpc"


class Level(str, Enum):
    LOW = "L"
    MID_FRONT = "M-Front"
    MID_REAR = "M-Rear"
    HIGH = "H"


# the middle window sits between the first and last three eligible blocks;
# both families expose 13 eligible blocks, so this is blocks 4..10
_MID_LO, _MID_HI = 3, 10

_ALLOWED_COUNTS = {3, 6, 7, 10}
_ALLOWED_MID_COUNTS = {3, 7}


@dataclass(frozen=True)
class BlockVariant:
    tag: VariantTag
    transform: TransformKind | None = None

    def __post_init__(self):
        needs_transform = self.tag in (VariantTag.CTPC, VariantTag.CTPC_RELU)
        if needs_transform and self.transform is None:
            raise ValueError(f"{self.tag.value} blocks need a transform kind")
        if not needs_transform and self.transform is not None:
            raise ValueError(f"{self.tag.value} blocks take no transform kind")


BASELINE = BlockVariant(VariantTag.BASELINE)


@dataclass(frozen=True)
class SubstitutionScheme:
    """How many eligible blocks to replace, and where in the hierarchy."""

    count: int
    level: Level

    def __post_init__(self):
        if self.count == 0:
            return  # trivial empty substitution
        if self.count not in _ALLOWED_COUNTS:
            raise ValueError(f"count must be 0 or one of {sorted(_ALLOWED_COUNTS)}")
        if self.level in (Level.MID_FRONT, Level.MID_REAR) and (
            self.count not in _ALLOWED_MID_COUNTS
        ):
            raise ValueError(
                f"middle-level schemes only support counts {sorted(_ALLOWED_MID_COUNTS)}"
            )

    def label(self, transform: TransformKind) -> str:
        return f"{transform.value.upper()}-{self.count}-{self.level.value}"


@dataclass(frozen=True)
class BlockDef:
    kind: str  # stem | shuffle_down | shuffle_unit | mobile_sep | final_conv | head
    name: str
    in_channels: int
    out_channels: int
    stride: int = 1
    variant: BlockVariant = BASELINE
    eligible: bool = False


@dataclass(frozen=True)
class NetworkSpec:
    family: Family
    width: Fraction
    num_classes: int
    input_size: tuple[int, int]
    blocks: tuple[BlockDef, ...]

    def eligible_indices(self) -> list[int]:
        return [i for i, b in enumerate(self.blocks) if b.eligible]


_SHUFFLE_STAGE_CHANNELS = {
    Fraction(1, 2): (48, 96, 192),
    Fraction(1): (116, 232, 464),
    Fraction(11, 10): (128, 256, 512),
    Fraction(3, 2): (176, 352, 704),
}
_SHUFFLE_STEM = 24
_SHUFFLE_FINAL = 1024
_SHUFFLE_STAGE_UNITS = (3, 7, 3)

_MOBILE_BLOCKS = [
    # (base output channels, stride)
    (64, 1),
    (128, 2),
    (128, 1),
    (256, 2),
    (256, 1),
    (512, 2),
    (512, 1),
    (512, 1),
    (512, 1),
    (512, 1),
    (512, 1),
    (1024, 2),
    (1024, 1),
]
_MOBILE_STEM = 32
_MOBILE_WIDTHS = {Fraction(1, 2), Fraction(1), Fraction(2)}


def _as_width(width) -> Fraction:
    return Fraction(str(width)) if not isinstance(width, Fraction) else width


def build_shufflenet_v2(width, num_classes: int,
                        input_size: tuple[int, int] = (32, 32)) -> NetworkSpec:
    """Three-stage shuffle network adapted to small inputs.

    The stem convolution runs at stride 1 and there is no initial max
    pool, keeping 32x32 inputs workable. Width 1.1 uses the customized
    stage channels (128, 256, 512) whose power-of-two block halves admit
    the fast Walsh-Hadamard path.
    """
    width = _as_width(width)
    if width not in _SHUFFLE_STAGE_CHANNELS:
        raise ValueError(f"unsupported width {width}; pick one of 0.5, 1, 1.1, 1.5")
    stages = _SHUFFLE_STAGE_CHANNELS[width]
    blocks: list[BlockDef] = [
        BlockDef("stem", "stem", 3, _SHUFFLE_STEM, stride=1)
    ]
    c_in = _SHUFFLE_STEM
    for si, (c_out, units) in enumerate(zip(stages, _SHUFFLE_STAGE_UNITS), start=2):
        blocks.append(
            BlockDef("shuffle_down", f"stage{si}.down", c_in, c_out, stride=2)
        )
        for ui in range(units):
            blocks.append(
                BlockDef(
                    "shuffle_unit", f"stage{si}.unit{ui + 1}", c_out, c_out,
                    stride=1, eligible=True,
                )
            )
        c_in = c_out
    blocks.append(BlockDef("final_conv", "final_conv", c_in, _SHUFFLE_FINAL))
    blocks.append(BlockDef("head", "head", _SHUFFLE_FINAL, num_classes))
    return NetworkSpec(
        Family.SHUFFLENET_V2, width, num_classes, tuple(input_size), tuple(blocks)
    )


def build_mobilenet_v1(width, num_classes: int,
                       input_size: tuple[int, int] = (32, 32)) -> NetworkSpec:
    """Stem convolution plus 13 depthwise-separable blocks.

    The stem runs at stride 1 for small inputs; the 13 separable blocks
    keep their standard strides. All 13 blocks are eligible for
    substitution (stride-2 ones included).
    """
    width = _as_width(width)
    if width not in _MOBILE_WIDTHS:
        raise ValueError(f"unsupported width {width}; pick one of 0.5, 1, 2")

    def scaled(c: int) -> int:
        return int(c * width)

    blocks: list[BlockDef] = [
        BlockDef("stem", "stem", 3, scaled(_MOBILE_STEM), stride=1)
    ]
    c_in = scaled(_MOBILE_STEM)
    for bi, (c_out_base, stride) in enumerate(_MOBILE_BLOCKS, start=1):
        c_out = scaled(c_out_base)
        blocks.append(
            BlockDef(
                "mobile_sep", f"block{bi}", c_in, c_out, stride=stride,
                eligible=True,
            )
        )
        c_in = c_out
    blocks.append(BlockDef("head", "head", c_in, num_classes))
    return NetworkSpec(
        Family.MOBILENET_V1, width, num_classes, tuple(input_size), tuple(blocks)
    )


def apply_substitution(net: NetworkSpec, variant: BlockVariant,
                       scheme: SubstitutionScheme | None) -> NetworkSpec:
    """Replace eligible blocks with ``variant`` per the scheme.

    ``scheme=None`` replaces every eligible block (the full block-study
    substitution). Low/high schemes count from the first/last eligible
    block; middle schemes fill the 7-block middle window from its front
    or rear. Stride-2 shuffle blocks are never eligible; every
    depthwise-separable block is.
    """
    if variant.tag is VariantTag.BASELINE:
        return net
    eligible = net.eligible_indices()
    if scheme is None:
        chosen = eligible
    elif scheme.count == 0:
        chosen = []
    else:
        count = scheme.count
        if scheme.level in (Level.MID_FRONT, Level.MID_REAR):
            window = eligible[_MID_LO:_MID_HI]
            if count > len(window):
                raise ValueError(
                    f"count {count} exceeds the {len(window)}-block middle window"
                )
            chosen = window[:count] if scheme.level is Level.MID_FRONT else window[-count:]
        else:
            if count > len(eligible):
                raise ValueError(
                    f"count {count} exceeds {len(eligible)} eligible blocks"
                )
            chosen = eligible[:count] if scheme.level is Level.LOW else eligible[-count:]
    chosen_set = set(chosen)
    _check_substitutable(net, variant, chosen_set)
    blocks = tuple(
        replace(b, variant=variant) if i in chosen_set else b
        for i, b in enumerate(net.blocks)
    )
    return replace(net, blocks=blocks)


def _check_substitutable(net: NetworkSpec, variant: BlockVariant, chosen: set[int]):
    if variant.transform is None:
        return
    for i in chosen:
        b = net.blocks[i]
        n, m = _pc_channels(b)
        if not is_power_of_two(max(n, m)):
            raise ValueError(
                f"block {b.name}: transform length {max(n, m)} is not a power "
                "of two; fast-transform substitution needs power-of-two channels"
            )


def _pc_channels(block: BlockDef) -> tuple[int, int]:
    """Input/output channels of the pointwise stage(s) inside a block."""
    if block.kind == "shuffle_unit":
        half = block.out_channels // 2
        return half, half
    if block.kind == "mobile_sep":
        return block.in_channels, block.out_channels
    raise ValueError(f"block kind {block.kind} has no substitutable pointwise stage")


def with_num_classes(net: NetworkSpec, num_classes: int) -> NetworkSpec:
    head = net.blocks[-1]
    if head.kind != "head":
        raise ValueError("spec does not end in a classifier head")
    blocks = net.blocks[:-1] + (replace(head, out_channels=num_classes),)
    return replace(net, num_classes=num_classes, blocks=blocks)


def parse_scheme(text: str) -> tuple[TransformKind | None, SubstitutionScheme | None]:
    """Parse labels like ``DWHT-6-H``, ``DCT-3-M-Front``, ``DWHT-all``.

    A bare ``all`` (no transform prefix) parses to (None, None). A bare
    ``M`` level means the middle window filled from its front.
    """
    parts = text.strip().split("-")
    kind: TransformKind | None = None
    if parts and parts[0].lower() in ("dwht", "dct"):
        kind = TransformKind(parts[0].lower())
        parts = parts[1:]
    if not parts:
        raise ValueError(f"malformed scheme {text!r}")
    if parts[0].lower() == "all":
        return kind, None
    count = int(parts[0])
    level_text = "-".join(parts[1:])
    levels = {
        "l": Level.LOW,
        "h": Level.HIGH,
        "m": Level.MID_FRONT,
        "m-front": Level.MID_FRONT,
        "m-rear": Level.MID_REAR,
    }
    try:
        level = levels[level_text.lower()]
    except KeyError:
        raise ValueError(f"unknown hierarchy level {level_text!r} in {text!r}") from None
    return kind, SubstitutionScheme(count, level)


def rcpc_init(in_channels: int, out_channels: int,
              seed: int | np.random.Generator) -> ParamTensor:
    """Frozen random pointwise weights on U(-1/sqrt(N/2), 1/sqrt(N/2))."""
    if in_channels < 2:
        raise ValueError("rcpc_init needs at least 2 input channels")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(in_channels / 2.0)
    weights = rng.uniform(-bound, bound, size=(out_channels, in_channels))
    return ParamTensor("rcpc.weight", weights, learnable=False)


# --- flat layer expansion -------------------------------------------------

class LayerKind(str, Enum):
    CONV3 = "conv3x3"
    DWCONV3 = "dwconv3x3"
    PC = "pointwise"
    TRANSFORM_PC = "transform_pc"
    BN = "batchnorm"
    RELU = "relu"
    SHUFFLE = "channel_shuffle"
    SPLIT = "channel_split"
    CONCAT = "concat"
    POOL = "global_avg_pool"
    FC = "fully_connected"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    name: str
    in_channels: int
    out_channels: int
    out_hw: tuple[int, int]
    stride: int = 1
    learnable: bool = True
    transform: TransformSpec | None = None


def _out_hw(hw: tuple[int, int], stride: int) -> tuple[int, int]:
    return (-(-hw[0] // stride), -(-hw[1] // stride))


class _Expander:
    def __init__(self):
        self.layers: list[LayerSpec] = []

    def add(self, kind, name, cin, cout, hw, stride=1, learnable=True, transform=None):
        self.layers.append(
            LayerSpec(kind, name, cin, cout, hw, stride, learnable, transform)
        )
        return cout, hw

    def pc_stage(self, name, cin, cout, hw, variant: BlockVariant, relu_default: bool):
        """One pointwise stage under a block variant: the mixing layer,
        batch norm, and (variant-dependent) activation."""
        tag = variant.tag
        if tag in (VariantTag.BASELINE, VariantTag.RCPC):
            self.add(LayerKind.PC, name + ".pc", cin, cout, hw,
                     learnable=tag is VariantTag.BASELINE)
        else:
            spec = TransformSpec(variant.transform, cin, cout, fast=True)
            self.add(LayerKind.TRANSFORM_PC, name + ".tpc", cin, cout, hw,
                     learnable=False, transform=spec)
        self.add(LayerKind.BN, name + ".bn", cout, cout, hw)
        keep_relu = (
            relu_default
            if tag in (VariantTag.BASELINE, VariantTag.RCPC)
            else tag is VariantTag.CTPC_RELU
        )
        if keep_relu:
            self.add(LayerKind.RELU, name + ".relu", cout, cout, hw)


def expand_layers(net: NetworkSpec) -> list[LayerSpec]:
    """Flatten a NetworkSpec into primitive layers with resolved shapes.

    Raises if channel arithmetic does not compose. This flat list is the
    canonical audit surface: the cost model walks it, and the ``build``
    command prints it.
    """
    ex = _Expander()
    hw = net.input_size
    c = 3
    for block in net.blocks:
        if block.in_channels != c:
            raise ValueError(
                f"{block.name}: expects {block.in_channels} input channels, "
                f"previous block produces {c}"
            )
        c, hw = _expand_block(ex, block, hw)
    return ex.layers


def _expand_block(ex: _Expander, b: BlockDef, hw):
    name, cin, cout = b.name, b.in_channels, b.out_channels
    if b.kind == "stem":
        ohw = _out_hw(hw, b.stride)
        ex.add(LayerKind.CONV3, name + ".conv", cin, cout, ohw, b.stride)
        ex.add(LayerKind.BN, name + ".bn", cout, cout, ohw)
        ex.add(LayerKind.RELU, name + ".relu", cout, cout, ohw)
        return cout, ohw
    if b.kind == "shuffle_unit":
        if cin != cout:
            raise ValueError(f"{name}: stride-1 shuffle units keep channel count")
        if cin % 2:
            raise ValueError(f"{name}: channel count must be even to split")
        half = cin // 2
        ex.add(LayerKind.SPLIT, name + ".split", cin, half, hw)
        ex.pc_stage(name + ".stage1", half, half, hw, b.variant, relu_default=True)
        ex.add(LayerKind.DWCONV3, name + ".dw", half, half, hw)
        ex.add(LayerKind.BN, name + ".dw_bn", half, half, hw)
        ex.pc_stage(name + ".stage2", half, half, hw, b.variant, relu_default=True)
        ex.add(LayerKind.CONCAT, name + ".concat", half, cout, hw)
        ex.add(LayerKind.SHUFFLE, name + ".shuffle", cout, cout, hw)
        return cout, hw
    if b.kind == "shuffle_down":
        ohw = _out_hw(hw, 2)
        half = cout // 2
        # branch 1: depthwise down + pointwise
        ex.add(LayerKind.DWCONV3, name + ".b1.dw", cin, cin, ohw, 2)
        ex.add(LayerKind.BN, name + ".b1.dw_bn", cin, cin, ohw)
        ex.add(LayerKind.PC, name + ".b1.pc", cin, half, ohw)
        ex.add(LayerKind.BN, name + ".b1.bn", half, half, ohw)
        ex.add(LayerKind.RELU, name + ".b1.relu", half, half, ohw)
        # branch 2: pointwise, depthwise down, pointwise
        ex.add(LayerKind.PC, name + ".b2.pc1", cin, half, hw)
        ex.add(LayerKind.BN, name + ".b2.bn1", half, half, hw)
        ex.add(LayerKind.RELU, name + ".b2.relu1", half, half, hw)
        ex.add(LayerKind.DWCONV3, name + ".b2.dw", half, half, ohw, 2)
        ex.add(LayerKind.BN, name + ".b2.dw_bn", half, half, ohw)
        ex.add(LayerKind.PC, name + ".b2.pc2", half, half, ohw)
        ex.add(LayerKind.BN, name + ".b2.bn2", half, half, ohw)
        ex.add(LayerKind.RELU, name + ".b2.relu2", half, half, ohw)
        ex.add(LayerKind.CONCAT, name + ".concat", half, cout, ohw)
        ex.add(LayerKind.SHUFFLE, name + ".shuffle", cout, cout, ohw)
        return cout, ohw
    if b.kind == "mobile_sep":
        ohw = _out_hw(hw, b.stride)
        is_baselineish = b.variant.tag in (VariantTag.BASELINE, VariantTag.RCPC)
        ex.add(LayerKind.DWCONV3, name + ".dw", cin, cin, ohw, b.stride)
        ex.add(LayerKind.BN, name + ".dw_bn", cin, cin, ohw)
        if is_baselineish:
            ex.add(LayerKind.RELU, name + ".dw_relu", cin, cin, ohw)
        ex.pc_stage(name, cin, cout, ohw, b.variant, relu_default=True)
        return cout, ohw
    if b.kind == "final_conv":
        ex.add(LayerKind.PC, name + ".pc", cin, cout, hw)
        ex.add(LayerKind.BN, name + ".bn", cout, cout, hw)
        ex.add(LayerKind.RELU, name + ".relu", cout, cout, hw)
        return cout, hw
    if b.kind == "head":
        ex.add(LayerKind.POOL, name + ".pool", cin, cin, (1, 1))
        ex.add(LayerKind.FC, name + ".fc", cin, cout, (1, 1))
        return cout, (1, 1)
    raise ValueError(f"unknown block kind {b.kind}")


def validate(net: NetworkSpec) -> None:
    """Channel-arithmetic and transform-constraint validation."""
    expand_layers(net)
