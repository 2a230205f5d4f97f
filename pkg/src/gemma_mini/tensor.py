"""Dense float64 kernels: matmul, row softmax, RMS norm, rotary embedding.

Everything here is pure and reentrant; all math is 64-bit. These four
kernels are the only numeric primitives the rest of the package builds on.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, MaskError, ShapeError

NEG_INF = float("-inf")


@dataclass(frozen=True)
class RopeParams:
    """Rotary embedding parameters for one attention layer kind.

    base_freq: 10_000 for sliding-window layers, 1_000_000 for full-context
    layers. scale divides positions (positional interpolation); 1 means no
    rescaling, 8 is the long-context setting.
    """

    base_freq: float
    scale: float = 1.0
    head_dim: int = 0

    def __post_init__(self):
        if self.head_dim % 2 != 0 or self.head_dim <= 0:
            raise ConfigError(f"head_dim must be positive and even, got {self.head_dim}")
        if self.base_freq <= 0:
            raise ConfigError(f"base_freq must be > 0, got {self.base_freq}")
        if self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")

    def inv_freqs(self) -> np.ndarray:
        # theta_i = base ** (-2i / head_dim), i = 0 .. head_dim/2 - 1
        i = np.arange(self.head_dim // 2, dtype=np.float64)
        return self.base_freq ** (-2.0 * i / self.head_dim)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """2-D matrix product; raises ShapeError on inner-dimension mismatch."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D inputs, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Softmax along the last axis with max-subtraction.

    -inf entries are mask sentinels and map to exactly 0. A row that is
    entirely -inf has no legal attention target and raises MaskError.
    """
    m = np.asarray(m, dtype=np.float64)
    if np.isnan(m).any() or np.isposinf(m).any():
        raise ValueError("softmax input must be finite or -inf")
    row_max = np.max(m, axis=-1, keepdims=True)
    if np.isneginf(row_max).any():
        raise MaskError("fully masked row: every entry is -inf")
    e = np.exp(m - row_max)  # exp(-inf) == 0, no nan because row_max is finite
    return e / np.sum(e, axis=-1, keepdims=True)


def rms_norm(v: np.ndarray, gain: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """out[i] = gain[i] * v[i] / sqrt(mean(v^2) + eps), along the last axis."""
    v = np.asarray(v, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    if eps <= 0:
        raise ConfigError(f"eps must be > 0, got {eps}")
    if gain.shape[-1] != v.shape[-1]:
        raise ShapeError(f"gain length {gain.shape[-1]} != vector length {v.shape[-1]}")
    ms = np.mean(v * v, axis=-1, keepdims=True)
    return gain * v / np.sqrt(ms + eps)


def rope_apply(x: np.ndarray, positions: np.ndarray, p: RopeParams) -> np.ndarray:
    """Rotate interleaved pairs (x[2i], x[2i+1]) by theta_i * position / scale.

    x: (..., n, head_dim), positions: (n,) absolute token indices. The
    rotation is orthogonal, so vector norms are preserved, and attention
    dot products depend on positions only through (m - n) / scale.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.head_dim:
        raise ShapeError(f"vector length {x.shape[-1]} != head_dim {p.head_dim}")
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 1 or positions.shape[0] != x.shape[-2]:
        raise ShapeError(f"positions shape {positions.shape} does not match x {x.shape}")
    angles = (positions[:, None] / p.scale) * p.inv_freqs()[None, :]  # (n, head_dim/2)
    cos, sin = np.cos(angles), np.sin(angles)
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def rope_unapply(x: np.ndarray, positions: np.ndarray, p: RopeParams) -> np.ndarray:
    """Inverse rotation of rope_apply; also the backward map for gradients."""
    return rope_apply(x, -np.asarray(positions, dtype=np.float64), p)
