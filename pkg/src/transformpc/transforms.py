"""Fixed channel-axis transforms used as drop-in pointwise convolutions.

Two transform families are provided:

* Walsh-Hadamard (DWHT): kernel entries are all +1/-1, so the fast
  butterfly needs additions and subtractions only.
* Cosine (DCT-II): row ``m`` of the kernel is ``cos((2x+1) m pi / 2N)``.

No normalization factor is ever applied; downstream batch norm owns the
scale. Channel counts are matched by zero-padding the input channels up to
the transform length before the transform and truncating the output
channels after it, so an N-in / M-out layer always runs a length
``max(N, M)`` transform.

Activations are carried as float64 ``(B, C, H, W)`` C-contiguous arrays
(channel vectors live along axis 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

try:
    from . import _fastwht
except ImportError:  # pure-python install; the numpy path covers everything
    _fastwht = None

MAX_ORDER_LOG2 = 16


class TransformKind(str, Enum):
    DWHT = "dwht"
    DCT = "dct"


@dataclass(frozen=True)
class TransformSpec:
    """Which fixed transform a pointwise-convolution layer applies."""

    kind: TransformKind
    in_channels: int
    out_channels: int
    fast: bool = True

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.fast and not is_power_of_two(self.length):
            raise ValueError(
                f"fast {self.kind.value} needs a power-of-two transform length, "
                f"got max({self.in_channels}, {self.out_channels}) = {self.length}"
            )

    @property
    def length(self) -> int:
        """Transform length: input padded up to max(N, M)."""
        return max(self.in_channels, self.out_channels)


@dataclass(frozen=True)
class OpCount:
    """Arithmetic operations per spatial location."""

    multiplications: int
    additions: int
    subtractions: int

    def __post_init__(self):
        if min(self.multiplications, self.additions, self.subtractions) < 0:
            raise ValueError("operation counts must be non-negative")

    @property
    def total(self) -> int:
        return self.multiplications + self.additions + self.subtractions

    def __add__(self, other: "OpCount") -> "OpCount":
        return OpCount(
            self.multiplications + other.multiplications,
            self.additions + other.additions,
            self.subtractions + other.subtractions,
        )

    def scaled(self, k: int) -> "OpCount":
        return OpCount(k * self.multiplications, k * self.additions, k * self.subtractions)


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def hadamard_matrix(order_log2: int) -> np.ndarray:
    """Recursively built 2^D x 2^D Hadamard matrix, H(0) = [[1]].

    Each doubling stacks [[H, H], [H, -H]]. Entries are int64.
    """
    if order_log2 < 0:
        raise ValueError("order_log2 must be non-negative")
    if order_log2 > MAX_ORDER_LOG2:
        raise ValueError(
            f"order_log2 = {order_log2} exceeds the size limit {MAX_ORDER_LOG2}"
        )
    h = np.array([[1]], dtype=np.int64)
    for _ in range(order_log2):
        h = np.block([[h, h], [h, -h]])
    return h


def dct_kernel(size: int) -> np.ndarray:
    """Unnormalized DCT-II basis: entry (m, x) = cos((2x+1) m pi / 2N)."""
    if size < 1:
        raise ValueError("size must be positive")
    if size > (1 << MAX_ORDER_LOG2):
        raise ValueError(f"size = {size} exceeds the limit {1 << MAX_ORDER_LOG2}")
    m = np.arange(size)[:, None]
    x = np.arange(size)[None, :]
    return np.cos((2 * x + 1) * m * np.pi / (2 * size))


def channel_fit(x: np.ndarray, target: int) -> np.ndarray:
    """Zero-pad channel vector(s) along the last axis up to ``target``.

    Shrinking never happens here: when the input is already longer, the
    transform runs at full length and only its *output* gets truncated.
    """
    if target < 1:
        raise ValueError("target must be positive")
    n = x.shape[-1]
    if n >= target:
        return x
    pad = [(0, 0)] * (x.ndim - 1) + [(0, target - n)]
    return np.pad(x, pad)


def dwht_naive(x: np.ndarray, spec: TransformSpec) -> np.ndarray:
    """Dense-matrix Walsh-Hadamard transform; oracle for the fast path.

    Accepts a channel vector or a stack of them (channels on the last
    axis). Pads to spec.length, multiplies by the full Hadamard matrix,
    truncates to spec.out_channels.
    """
    if spec.kind is not TransformKind.DWHT:
        raise ValueError("spec.kind must be DWHT")
    x = np.asarray(x)
    if x.shape[-1] != spec.in_channels:
        raise ValueError(f"expected {spec.in_channels} channels, got {x.shape[-1]}")
    padded = channel_fit(x, spec.length)
    n = padded.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"padded channel count {n} is not a power of two")
    h = hadamard_matrix(n.bit_length() - 1)
    out = padded @ h  # symmetric, so right-multiplying matches H @ x
    return out[..., : spec.out_channels]


def _fwht_passes_numpy(x: np.ndarray) -> np.ndarray:
    """Even/odd butterfly passes along the last axis (power-of-two length).

    Pass i splits channels into even- and odd-indexed halves, writes their
    sums to the first half and their differences to the second half.
    """
    n = x.shape[-1]
    for _ in range(n.bit_length() - 1):
        even = x[..., 0::2]
        odd = x[..., 1::2]
        x = np.concatenate([even + odd, even - odd], axis=-1)
    return x


def fwht_vector(values):
    """Scalar even/odd butterfly on a plain Python sequence.

    Generic over the element type (floats, ints, counting wrappers), which
    is what the instrumentation and exact-arithmetic tests rely on.
    """
    values = list(values)
    n = len(values)
    if not is_power_of_two(n):
        raise ValueError(f"length {n} is not a power of two")
    for _ in range(n.bit_length() - 1):
        even = values[0::2]
        odd = values[1::2]
        values = [a + b for a, b in zip(even, odd)] + [
            a - b for a, b in zip(even, odd)
        ]
    return values


def _fwht_last_axis(x: np.ndarray) -> np.ndarray:
    """Butterfly along the last axis, using the C kernel when it applies."""
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"channel count {n} is not a power of two")
    if (
        _fastwht is not None
        and x.dtype == np.float64
        and x.flags.c_contiguous
        and n > 1
    ):
        flat = x.reshape(-1, n)
        out = np.empty_like(flat)
        _fastwht.fwht(flat, out, flat.shape[0], n)
        return out.reshape(x.shape)
    return _fwht_passes_numpy(x)


def dwht_fast(x: np.ndarray, out_channels: int) -> np.ndarray:
    """Fast Walsh-Hadamard pointwise convolution over a (B, C, H, W) batch.

    Pads channels with zeros up to max(C, out_channels), runs log2(length)
    butterfly passes (additions and subtractions only), then keeps the
    first ``out_channels`` channels. Works on any array whose channels are
    the second axis of four, or on plain channel-last stacks via
    ``dwht_fast_channels_last``.
    """
    if x.ndim != 4:
        raise ValueError("expected a (B, C, H, W) array")
    moved = np.ascontiguousarray(np.moveaxis(x, 1, -1))
    out = dwht_fast_channels_last(moved, out_channels)
    return np.ascontiguousarray(np.moveaxis(out, -1, 1))


def dwht_fast_channels_last(x: np.ndarray, out_channels: int) -> np.ndarray:
    """Fast Walsh-Hadamard transform along the last axis with pad/truncate."""
    if out_channels < 1:
        raise ValueError("out_channels must be positive")
    length = max(x.shape[-1], out_channels)
    if not is_power_of_two(length):
        raise ValueError(f"transform length {length} is not a power of two")
    padded = channel_fit(x, length)
    return _fwht_last_axis(np.ascontiguousarray(padded))[..., :out_channels]


def _dct2_lee(v: np.ndarray) -> np.ndarray:
    """Recursive even/odd (half-size) decomposition of the unnormalized
    DCT-II along the last axis; length must be a power of two."""
    n = v.shape[-1]
    if n == 1:
        return v.copy()
    half = n // 2
    head = v[..., :half]
    tail = v[..., ::-1][..., :half]
    alpha = head + tail
    beta = (head - tail) / (2.0 * np.cos((np.arange(half) + 0.5) * np.pi / n))
    a = _dct2_lee(alpha)
    b = _dct2_lee(beta)
    out = np.empty_like(v)
    out[..., 0::2] = a
    odd = out[..., 1::2]
    odd[..., : half - 1] = b[..., : half - 1] + b[..., 1:]
    odd[..., half - 1] = b[..., half - 1]
    return out


def dct_apply(x: np.ndarray, spec: TransformSpec) -> np.ndarray:
    """Cosine-transform pointwise convolution over a (B, C, H, W) batch."""
    if spec.kind is not TransformKind.DCT:
        raise ValueError("spec.kind must be DCT")
    if x.ndim != 4:
        raise ValueError("expected a (B, C, H, W) array")
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"expected {spec.in_channels} channels, got {x.shape[1]}")
    moved = np.moveaxis(x, 1, -1)
    out = dct_apply_channels_last(moved, spec)
    return np.ascontiguousarray(np.moveaxis(out, -1, 1))


def dct_apply_channels_last(x: np.ndarray, spec: TransformSpec) -> np.ndarray:
    """DCT-II pointwise convolution along the last axis with pad/truncate.

    ``spec.fast`` selects the half-size recursive butterfly (power-of-two
    lengths only); otherwise the dense kernel multiply runs at any length.
    """
    padded = channel_fit(np.asarray(x, dtype=np.float64), spec.length)
    n = padded.shape[-1]
    if spec.fast:
        if not is_power_of_two(n):
            raise ValueError(f"fast DCT needs a power-of-two length, got {n}")
        out = _dct2_lee(np.ascontiguousarray(padded))
    else:
        out = padded @ dct_kernel(n).T
    return out[..., : spec.out_channels]


class LayerOp(str, Enum):
    """Benchmarkable per-location channel-mixing operations."""

    NAIVE_PC = "naive_pc"
    FAST_DWHT = "fast_dwht"
    NAIVE_DCT = "naive_dct"
    FAST_DCT = "fast_dct"


def op_count(layer_kind: LayerOp | str, in_channels: int, out_channels: int) -> OpCount:
    """Arithmetic cost per spatial location under the mult/add/sub rule.

    Fast paths run the full length-T butterfly (T = max(N, M)) before any
    truncation, so their cost never depends on the output channel count.
    The fast DCT counts come from the half-size recursive decomposition:
    each level splits into sum/difference halves (T/2 adds, T/2 subs),
    scales the difference half (T/2 mults), and merges odd outputs
    (T/2 - 1 adds), giving (T/2)log2(T) mults and subs and
    T log2(T) - T + 1 adds overall.
    """
    kind = LayerOp(layer_kind)
    n, m = in_channels, out_channels
    if n < 1 or m < 1:
        raise ValueError("channel counts must be positive")
    if kind is LayerOp.NAIVE_PC or kind is LayerOp.NAIVE_DCT:
        return OpCount(n * m, (n - 1) * m, 0)
    t = max(n, m)
    if not is_power_of_two(t):
        raise ValueError(f"fast transforms need power-of-two length, got {t}")
    log = t.bit_length() - 1
    if kind is LayerOp.FAST_DWHT:
        return OpCount(0, (t // 2) * log, (t // 2) * log)
    # FAST_DCT
    mults = (t // 2) * log
    adds = t * log - t + 1 if t > 1 else 0
    subs = (t // 2) * log
    return OpCount(mults, adds, subs)


class CountingValue:
    """Float wrapper that tallies arithmetic; drives instrumentation tests."""

    __slots__ = ("value", "counter")

    def __init__(self, value: float, counter: "OpCounter"):
        self.value = value
        self.counter = counter

    def __add__(self, other: "CountingValue") -> "CountingValue":
        self.counter.additions += 1
        return CountingValue(self.value + other.value, self.counter)

    def __sub__(self, other: "CountingValue") -> "CountingValue":
        self.counter.subtractions += 1
        return CountingValue(self.value - other.value, self.counter)

    def __mul__(self, other: "CountingValue") -> "CountingValue":
        self.counter.multiplications += 1
        return CountingValue(self.value * other.value, self.counter)


class OpCounter:
    """Mutable tally used with CountingValue."""

    def __init__(self):
        self.additions = 0
        self.subtractions = 0
        self.multiplications = 0

    def wrap(self, values) -> list:
        return [CountingValue(float(v), self) for v in values]

    def snapshot(self) -> OpCount:
        return OpCount(self.multiplications, self.additions, self.subtractions)


def dwht_fast_instrumented(values) -> tuple[list, OpCount]:
    """Run the scalar even/odd butterfly while counting every operation."""
    counter = OpCounter()
    wrapped = counter.wrap(values)
    out = fwht_vector(wrapped)
    return [v.value for v in out], counter.snapshot()


def next_power_of_two(n: int) -> int:
    if n < 1:
        raise ValueError("n must be positive")
    return 1 << (n - 1).bit_length()
