"""Square-QAM constellations in per-real-dimension form.

A square constellation of order 4, 16 or 64 factorizes into two identical
real pulse-amplitude alphabets, one per real dimension. Everything here
works on that per-dimension alphabet: amplitude levels, Gray bit mapping,
nearest-point quantization, and the conversions between bit log-likelihood
ratios and per-level weights used by the coded detector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# LLRs are clamped before exponentiation; +/-30 leaves the resulting
# probabilities within 1e-13 of their limits while avoiding overflow.
LLR_CLAMP = 30.0

_SUPPORTED_ORDERS = (4, 16, 64)


def _gray_codes(n_bits):
    idx = np.arange(1 << n_bits)
    return idx ^ (idx >> 1)


@dataclass(frozen=True)
class Constellation:
    """Per-real-dimension amplitude alphabet with Gray bit labels.

    ``levels`` is strictly increasing and symmetric about zero, normalized
    so that ``2 * mean(levels**2) == avg_power`` (the complex-symbol power).
    ``level_bits[i]`` is the bit pattern of the i-th level, most significant
    bit first; adjacent levels differ in exactly one bit.
    """

    levels: np.ndarray
    bits_per_dim: int
    avg_power: float
    level_bits: np.ndarray = field(repr=False)
    _pattern_to_level: np.ndarray = field(repr=False)
    _midpoints: np.ndarray = field(repr=False)

    @property
    def n_levels(self):
        return self.levels.size

    @property
    def order(self):
        return self.n_levels ** 2

    def min_level(self):
        return float(self.levels[0])

    def max_level(self):
        return float(self.levels[-1])


def build_constellation(order, avg_power=0.5):
    """Build the Gray-coded alphabet for a square QAM order.

    The K = sqrt(order) levels are the odd multiples of a common amplitude,
    scaled so the average complex-symbol power equals ``avg_power``.
    """
    if order not in _SUPPORTED_ORDERS:
        raise ValueError(f"unsupported constellation order {order!r}; "
                         f"expected one of {_SUPPORTED_ORDERS}")
    if avg_power <= 0:
        raise ValueError("avg_power must be positive")
    k = int(round(np.sqrt(order)))
    bits_per_dim = int(round(np.log2(k)))
    # levels = a * (-(K-1), ..., -1, 1, ..., K-1); mean(levels^2) = a^2 (K^2-1)/3
    base = np.arange(-(k - 1), k, 2, dtype=float)
    amp = np.sqrt(avg_power / (2.0 * np.mean(base ** 2)))
    levels = amp * base

    gray = _gray_codes(bits_per_dim)
    level_bits = np.zeros((k, bits_per_dim), dtype=np.uint8)
    for i, g in enumerate(gray):
        for d in range(bits_per_dim):
            level_bits[i, d] = (g >> (bits_per_dim - 1 - d)) & 1
    pattern_to_level = np.zeros(k, dtype=np.intp)
    pattern_to_level[gray] = np.arange(k)

    return Constellation(
        levels=levels,
        bits_per_dim=bits_per_dim,
        avg_power=float(avg_power),
        level_bits=level_bits,
        _pattern_to_level=pattern_to_level,
        _midpoints=0.5 * (levels[:-1] + levels[1:]),
    )


def quantize(u_hat, c):
    """Map each component to the nearest level; ties go to the lower index.

    Returns ``(indices, values)``.
    """
    u_hat = np.asarray(u_hat, dtype=float)
    # searchsorted(side='left') sends a value equal to a midpoint to the
    # interval below it, which is exactly the lower-index tie rule.
    idx = np.searchsorted(c._midpoints, u_hat, side="left")
    return idx, c.levels[idx]


def bits_to_symbols(bits, c):
    """Map a bit sequence to per-real-dimension amplitudes (Gray labeling)."""
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    d = c.bits_per_dim
    if bits.size % d != 0:
        raise ValueError(f"bit count {bits.size} is not a multiple of {d}")
    groups = bits.reshape(-1, d)
    weights = 1 << np.arange(d - 1, -1, -1)
    patterns = groups @ weights
    return c.levels[c._pattern_to_level[patterns]]


def symbols_to_bits(u, c):
    """Inverse of :func:`bits_to_symbols` (quantizes first)."""
    idx, _ = quantize(u, c)
    return c.level_bits[idx].reshape(-1)


def llr_to_weights(llr, c):
    """Per-level weights from one dimension's bit LLRs.

    ``llr[d]`` is ln p(bit_d = 1 | y) - ln p(bit_d = 0 | y). The weight of a
    level is the product of its bits' probabilities, so the K weights sum
    to one. Inputs are clamped to +/-LLR_CLAMP first.
    """
    llr = np.clip(np.asarray(llr, dtype=float), -LLR_CLAMP, LLR_CLAMP)
    if llr.shape != (c.bits_per_dim,):
        raise ValueError(f"expected {c.bits_per_dim} LLRs, got shape {llr.shape}")
    p1 = 1.0 / (1.0 + np.exp(-llr))
    bits = c.level_bits.astype(float)
    w = np.prod(np.where(bits == 1, p1, 1.0 - p1), axis=1)
    return w / w.sum()


def weights_from_llr_matrix(llr_matrix, c):
    """Vectorized :func:`llr_to_weights` over a (n_dims, D) LLR array."""
    llr = np.clip(np.asarray(llr_matrix, dtype=float), -LLR_CLAMP, LLR_CLAMP)
    if llr.ndim != 2 or llr.shape[1] != c.bits_per_dim:
        raise ValueError("expected an (n_dims, bits_per_dim) LLR array")
    p1 = 1.0 / (1.0 + np.exp(-llr))  # (n, D)
    bits = c.level_bits.astype(float)  # (K, D)
    probs = np.where(bits[None, :, :] == 1, p1[:, None, :], 1.0 - p1[:, None, :])
    w = np.prod(probs, axis=2)
    return w / w.sum(axis=1, keepdims=True)


def soft_symbol_to_bit_llr(u_soft, residual_var, c, method="maxlog"):
    """Per-bit LLRs from soft per-dimension estimates.

    ``method='maxlog'`` uses the dominant-level approximation
    ``(min_{bit=0} (u-s)^2 - min_{bit=1} (u-s)^2) / residual_var``;
    ``method='exact'`` sums over all levels with the same exponential
    weights. Positive values favor bit '1'.
    """
    if residual_var <= 0:
        raise ValueError("residual_var must be positive")
    u = np.atleast_1d(np.asarray(u_soft, dtype=float))
    dist_sq = (u[:, None] - c.levels[None, :]) ** 2 / residual_var  # (n, K)
    bits = c.level_bits  # (K, D)
    llr = np.empty((u.size, c.bits_per_dim))
    for d in range(c.bits_per_dim):
        one = bits[:, d] == 1
        if method == "maxlog":
            llr[:, d] = dist_sq[:, ~one].min(axis=1) - dist_sq[:, one].min(axis=1)
        elif method == "exact":
            from scipy.special import logsumexp

            llr[:, d] = logsumexp(-dist_sq[:, one], axis=1) - logsumexp(
                -dist_sq[:, ~one], axis=1
            )
        else:
            raise ValueError(f"unknown demapping method {method!r}")
    return llr
