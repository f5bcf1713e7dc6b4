"""Minimal layer zoo with explicit forward/backward passes.

Activations are float64 arrays in a single canonical layout: (B, C, H, W),
C-contiguous. Convolutions carry no bias (batch-norm shift plays that
role). Every module caches what its backward pass needs during forward,
so the call order is always forward -> backward within a step.
"""

from __future__ import annotations

import numpy as np

from .transforms import (
    TransformKind,
    TransformSpec,
    dct_kernel,
    dwht_fast,
    dwht_fast_channels_last,
)


class ParamTensor:
    """A named parameter with its gradient and weight-decay group.

    ``learnable=False`` parameters (frozen random pointwise weights) are
    never touched by the optimizer but still live in checkpoints.
    """

    def __init__(self, name: str, values: np.ndarray, learnable: bool = True,
                 weight_decay_group: str = "default"):
        self.name = name
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)
        self.learnable = learnable
        self.weight_decay_group = weight_decay_group

    @property
    def size(self) -> int:
        return self.values.size


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base module: parameters, state arrays, forward/backward."""

    def params(self) -> list[ParamTensor]:
        """Own (direct) parameters only; tree walks handle nesting."""
        return []

    def children(self) -> list[tuple[str, "Module"]]:
        return []

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All persistent arrays (parameters plus e.g. running stats)."""
        return {p.name: p.values for p in self.params()}

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _pc_contract(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(M, C) weights applied at every spatial location of (B, C, H, W)."""
    out = np.tensordot(w, x, axes=([1], [1]))  # (M, B, H, W)
    return np.ascontiguousarray(np.moveaxis(out, 0, 1))


def _conv_out_hw(h: int, w: int, stride: int) -> tuple[int, int]:
    return -(-h // stride), -(-w // stride)


class Conv3x3(Module):
    """Full 3x3 convolution, padding 1, no bias. Used by network stems."""

    def __init__(self, name: str, in_channels: int, out_channels: int,
                 stride: int = 1, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        fan_in = in_channels * 9
        self.weight = ParamTensor(
            name + ".weight", uniform_init(rng, (out_channels, in_channels, 3, 3), fan_in)
        )
        self._cache = None

    def params(self):
        return [self.weight]

    def forward(self, x, training):
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {x.shape[1]}")
        b, c, h, w = x.shape
        ho, wo = _conv_out_hw(h, w, self.stride)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        out = np.zeros((b, self.out_channels, ho, wo))
        s = self.stride
        for u in range(3):
            for v in range(3):
                sl = xp[:, :, u : u + s * ho : s, v : v + s * wo : s]
                out += _pc_contract(self.weight.values[:, :, u, v], sl)
        self._cache = (xp, x.shape)
        return out

    def backward(self, grad):
        xp, xshape = self._cache
        b, c, h, w = xshape
        ho, wo = grad.shape[2], grad.shape[3]
        s = self.stride
        gxp = np.zeros_like(xp)
        for u in range(3):
            for v in range(3):
                sl = xp[:, :, u : u + s * ho : s, v : v + s * wo : s]
                self.weight.grad[:, :, u, v] += np.tensordot(
                    grad, sl, axes=([0, 2, 3], [0, 2, 3])
                )
                gxp[:, :, u : u + s * ho : s, v : v + s * wo : s] += _pc_contract(
                    self.weight.values[:, :, u, v].T, grad
                )
        return gxp[:, :, 1 : 1 + h, 1 : 1 + w]


class DepthwiseConv3x3(Module):
    """Per-channel 3x3 correlation, padding 1, no bias."""

    def __init__(self, name: str, channels: int, stride: int = 1,
                 rng: np.random.Generator | None = None,
                 weight_decay_group: str = "default"):
        rng = rng or np.random.default_rng(0)
        self.channels = channels
        self.stride = stride
        self.weight = ParamTensor(
            name + ".weight", uniform_init(rng, (channels, 3, 3), 9),
            weight_decay_group=weight_decay_group,
        )
        self._cache = None

    def params(self):
        return [self.weight]

    def forward(self, x, training):
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        b, c, h, w = x.shape
        ho, wo = _conv_out_hw(h, w, self.stride)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        out = np.zeros((b, c, ho, wo))
        s = self.stride
        wv = self.weight.values
        for u in range(3):
            for v in range(3):
                sl = xp[:, :, u : u + s * ho : s, v : v + s * wo : s]
                out += wv[None, :, u, v, None, None] * sl
        self._cache = (xp, x.shape)
        return out

    def backward(self, grad):
        xp, xshape = self._cache
        b, c, h, w = xshape
        ho, wo = grad.shape[2], grad.shape[3]
        s = self.stride
        gxp = np.zeros_like(xp)
        wv = self.weight.values
        for u in range(3):
            for v in range(3):
                sl = xp[:, :, u : u + s * ho : s, v : v + s * wo : s]
                self.weight.grad[:, u, v] += np.einsum("bchw,bchw->c", grad, sl)
                gxp[:, :, u : u + s * ho : s, v : v + s * wo : s] += (
                    wv[None, :, u, v, None, None] * grad
                )
        return gxp[:, :, 1 : 1 + h, 1 : 1 + w]


class PointwiseConv(Module):
    """1x1 convolution mixing channels: out = W @ x at each location.

    ``learnable=False`` gives the frozen-random variant: weights are drawn
    once and the optimizer never updates them.
    """

    def __init__(self, name: str, in_channels: int, out_channels: int,
                 rng: np.random.Generator | None = None, learnable: bool = True,
                 weights: np.ndarray | None = None):
        rng = rng or np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        if weights is None:
            weights = uniform_init(rng, (out_channels, in_channels), in_channels)
        self.weight = ParamTensor(name + ".weight", weights, learnable=learnable)
        self._cache = None

    def params(self):
        return [self.weight]

    def forward(self, x, training):
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {x.shape[1]}")
        self._cache = x
        return _pc_contract(self.weight.values, x)

    def backward(self, grad):
        x = self._cache
        if self.weight.learnable:
            self.weight.grad += np.tensordot(grad, x, axes=([0, 2, 3], [0, 2, 3]))
        return _pc_contract(self.weight.values.T, grad)


class TransformPC(Module):
    """Pointwise convolution whose weights are a fixed transform basis.

    Contributes zero learnable parameters. The backward pass applies the
    adjoint map: zero-pad the output gradient up to the transform length,
    apply the transpose of the transform, and truncate back to the input
    channel count. The Walsh-Hadamard matrix is symmetric, so its adjoint
    is the forward butterfly again.
    """

    def __init__(self, name: str, spec: TransformSpec):
        self.name = name
        self.spec = spec
        self._kernel = None
        if spec.kind is TransformKind.DCT:
            self._kernel = dct_kernel(spec.length)

    def params(self):
        return []

    def forward(self, x, training):
        if x.shape[1] != self.spec.in_channels:
            raise ValueError(
                f"expected {self.spec.in_channels} channels, got {x.shape[1]}"
            )
        if self.spec.kind is TransformKind.DWHT:
            return dwht_fast(x, self.spec.out_channels)
        return self._dct_forward(x)

    def _dct_forward(self, x):
        moved = np.moveaxis(x, 1, -1)
        from .transforms import channel_fit, _dct2_lee

        padded = channel_fit(moved, self.spec.length)
        if self.spec.fast:
            out = _dct2_lee(np.ascontiguousarray(padded))
        else:
            out = padded @ self._kernel.T
        out = out[..., : self.spec.out_channels]
        return np.ascontiguousarray(np.moveaxis(out, -1, 1))

    def backward(self, grad):
        if grad.shape[1] != self.spec.out_channels:
            raise ValueError(
                f"expected {self.spec.out_channels} gradient channels, "
                f"got {grad.shape[1]}"
            )
        n = self.spec.in_channels
        if self.spec.kind is TransformKind.DWHT:
            # pad M -> length, symmetric butterfly, truncate to N
            return dwht_fast(grad, n)
        moved = np.moveaxis(grad, 1, -1)
        from .transforms import channel_fit

        padded = channel_fit(moved, self.spec.length)
        out = (padded @ self._kernel)[..., :n]
        return np.ascontiguousarray(np.moveaxis(out, -1, 1))


class BatchNorm(Module):
    """Per-channel batch normalization with learnable scale and shift.

    Training mode normalizes with batch statistics and updates running
    stats with momentum 0.1; inference mode uses the running stats.
    """

    def __init__(self, name: str, channels: int, momentum: float = 0.1,
                 eps: float = 1e-5):
        self.name = name
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = ParamTensor(name + ".gamma", np.ones(channels))
        self.beta = ParamTensor(name + ".beta", np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def state_arrays(self):
        return {
            self.gamma.name: self.gamma.values,
            self.beta.name: self.beta.values,
            self.name + ".running_mean": self.running_mean,
            self.name + ".running_var": self.running_var,
        }

    def forward(self, x, training):
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        axes = (0, 2, 3)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var * (m / max(m - 1, 1))
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (unbiased - self.running_var)
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = (xhat, inv_std, training)
        return self.gamma.values[None, :, None, None] * xhat + self.beta.values[
            None, :, None, None
        ]

    def backward(self, grad):
        xhat, inv_std, training = self._cache
        axes = (0, 2, 3)
        self.gamma.grad += np.sum(grad * xhat, axis=axes)
        self.beta.grad += np.sum(grad, axis=axes)
        gxhat = grad * self.gamma.values[None, :, None, None]
        if not training:
            return gxhat * inv_std[None, :, None, None]
        m = grad.shape[0] * grad.shape[2] * grad.shape[3]
        sum_g = gxhat.sum(axis=axes)[None, :, None, None]
        sum_gx = (gxhat * xhat).sum(axis=axes)[None, :, None, None]
        return (inv_std[None, :, None, None] / m) * (
            m * gxhat - sum_g - xhat * sum_gx
        )


class ReLU(Module):
    def __init__(self):
        self._mask = None

    def forward(self, x, training):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0)


class ChannelShuffle(Module):
    """Interleave channel groups (groups=2 matches the shuffle-block idiom)."""

    def __init__(self, channels: int, groups: int = 2):
        if channels % groups:
            raise ValueError("channels must divide evenly into groups")
        self.groups = groups
        per = channels // groups
        k = np.arange(channels)
        self.perm = (k % groups) * per + k // groups
        self.inv_perm = np.argsort(self.perm)

    def forward(self, x, training):
        return x[:, self.perm]

    def backward(self, grad):
        return grad[:, self.inv_perm]


def channel_split(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split channels into two equal halves."""
    c = x.shape[1]
    if c % 2:
        raise ValueError("channel split needs an even channel count")
    half = c // 2
    return x[:, :half], x[:, half:]


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.concatenate([a, b], axis=1)


class GlobalAvgPool(Module):
    """(B, C, H, W) -> (B, C) spatial mean."""

    def __init__(self):
        self._hw = None

    def forward(self, x, training):
        self._hw = x.shape[2:]
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        h, w = self._hw
        return np.broadcast_to(
            grad[:, :, None, None] / (h * w), grad.shape + (h, w)
        ).copy()


class FullyConnected(Module):
    """Affine map on (B, C) feature vectors."""

    def __init__(self, name: str, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = ParamTensor(
            name + ".weight", uniform_init(rng, (out_features, in_features), in_features)
        )
        self.bias = ParamTensor(
            name + ".bias", uniform_init(rng, (out_features,), in_features)
        )
        self._cache = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, training):
        self._cache = x
        return x @ self.weight.values.T + self.bias.values

    def backward(self, grad):
        x = self._cache
        self.weight.grad += grad.T @ x
        self.bias.grad += grad.sum(axis=0)
        return grad @ self.weight.values


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch; returns (loss, dlogits)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    b = logits.shape[0]
    nll = -np.log(probs[np.arange(b), labels] + 1e-300)
    grad = probs.copy()
    grad[np.arange(b), labels] -= 1.0
    return float(nll.mean()), grad / b
