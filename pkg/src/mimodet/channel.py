"""MIMO channel generation and the complex-to-real system decomposition.

Conventions used throughout the package:

* ``noise_var`` is the variance of one complex noise component, so each of
  the two real components carries ``noise_var / 2``.
* ``snr_db = 10 log10(n_tx * avg_tx_power / noise_var)`` is the average
  received SNR per receive antenna.
* the real-valued system stacks real parts over imaginary parts, with the
  channel embedded as ``[[Re, -Im], [Im, Re]]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ComplexSystemSpec:
    """Static description of a transmission scenario."""

    n_tx: int
    n_rx: int
    rho: float = 0.0
    snr_db: float = 10.0
    avg_tx_power: float = 0.5

    def __post_init__(self):
        if self.n_tx < 1 or self.n_rx < 1:
            raise ValueError("antenna counts must be at least 1")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.avg_tx_power <= 0:
            raise ValueError("avg_tx_power must be positive")

    @property
    def noise_var(self):
        """Complex-component noise variance implied by the SNR convention."""
        return self.n_tx * self.avg_tx_power / (10.0 ** (self.snr_db / 10.0))


@dataclass
class RealLinearSystem:
    """Real-valued observation model ``y = h @ u + w``.

    ``h`` is the 2M x 2N block embedding of the complex channel, ``u_true``
    the transmitted vector when known, and ``noise_var`` the complex noise
    variance (each real component of ``w`` has ``noise_var / 2``).
    """

    y: np.ndarray
    h: np.ndarray
    noise_var: float
    u_true: np.ndarray | None = None

    @property
    def n_dims(self):
        return self.h.shape[1]

    @property
    def n_obs(self):
        return self.h.shape[0]


def _exp_correlation_sqrt(n, rho):
    """Symmetric square root of the exponential profile R_ij = rho^|i-j|."""
    if rho == 0.0:
        return np.eye(n)
    idx = np.arange(n)
    r = rho ** np.abs(idx[:, None] - idx[None, :])
    vals, vecs = np.linalg.eigh(r)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def generate_channel(spec, rng):
    """Draw a Rayleigh channel matrix, optionally Kronecker-correlated.

    Entries are zero-mean circularly symmetric complex normal with unit
    variance; with ``rho > 0`` the draw is ``R_rx^{1/2} G R_tx^{1/2}`` with
    the exponential correlation profile on both ends.
    """
    g = (rng.standard_normal((spec.n_rx, spec.n_tx))
         + 1j * rng.standard_normal((spec.n_rx, spec.n_tx))) / np.sqrt(2.0)
    if spec.rho == 0.0:
        return g
    return _exp_correlation_sqrt(spec.n_rx, spec.rho) @ g @ _exp_correlation_sqrt(
        spec.n_tx, spec.rho
    )


def to_real(y_c, h_c, u_c=None, noise_var=0.0):
    """Decompose a complex linear system into its real-valued embedding."""
    y_c = np.asarray(y_c, dtype=complex)
    h_c = np.asarray(h_c, dtype=complex)
    if h_c.ndim != 2:
        raise ValueError("channel matrix must be 2-D")
    m, n = h_c.shape
    if y_c.shape != (m,):
        raise ValueError(f"observation length {y_c.shape} does not match {m} rows")
    if u_c is not None:
        u_c = np.asarray(u_c, dtype=complex)
        if u_c.shape != (n,):
            raise ValueError(f"input length {u_c.shape} does not match {n} columns")
    h = np.block([[h_c.real, -h_c.imag], [h_c.imag, h_c.real]])
    y = np.concatenate([y_c.real, y_c.imag])
    u = None if u_c is None else np.concatenate([u_c.real, u_c.imag])
    return RealLinearSystem(y=y, h=h, noise_var=float(noise_var), u_true=u)


def real_channel(h_c):
    """Just the 2M x 2N block embedding of a complex channel matrix."""
    h_c = np.asarray(h_c, dtype=complex)
    return np.block([[h_c.real, -h_c.imag], [h_c.imag, h_c.real]])


def transmit(h, u, noise_var, rng):
    """Pass ``u`` through the real channel and add white Gaussian noise.

    Each real component of the noise has variance ``noise_var / 2``;
    ``noise_var = 0`` produces the noiseless observation.
    """
    if noise_var < 0:
        raise ValueError("noise_var must be nonnegative")
    h = np.asarray(h, dtype=float)
    u = np.asarray(u, dtype=float)
    y = h @ u
    if noise_var > 0:
        y = y + rng.standard_normal(y.shape) * np.sqrt(noise_var / 2.0)
    return y


def effective_noise_variance(noise_var, n_tx, avg_tx_power):
    """Noise inflation that models MMSE channel estimation from orthogonal pilots.

    Returns ``noise_var * (1 + 1 / (1 + noise_var / (2 n_tx P_t)))``; the
    factor tends to 2 (a 3 dB penalty) as the noise vanishes and to 1 as it
    dominates.
    """
    if noise_var <= 0 or n_tx <= 0 or avg_tx_power <= 0:
        raise ValueError("all inputs must be positive")
    factor = 1.0 + 1.0 / (1.0 + noise_var / (2.0 * n_tx * avg_tx_power))
    return noise_var * factor
