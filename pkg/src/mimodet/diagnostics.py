"""MCMC quality metrics.

Effective sample size and the potential scale reduction factor follow the
usual multi-chain estimators on post-warm-up draws. The symbol-level
metrics map each continuous draw to soft component memberships under the
mixture prior ("responsibilities") and derive from them an empirical
symbol transition matrix, its second-largest eigenvalue modulus (the
convergence rate, 0 fast / 1 stalled), and a soft symbol error rate that
upper-bounds the hard one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constellation import quantize
from .linalg import eigen_moduli


@dataclass
class DiagnosticsReport:
    """Aggregate report for one detection run.

    ``ess_per_chain`` is the *minimum* over dimensions of ESS / n_chains
    and ``r_hat`` the maximum over dimensions (both conservative);
    ``acf`` is the chain-averaged autocorrelation of the worst-ESS
    dimension. ``degenerate`` flags constant chains or never-visited
    symbols encountered along the way.
    """

    ess_per_chain: float
    r_hat: float
    conv_rate: float | None
    soft_ser: float | None
    acf: np.ndarray
    degenerate: bool = False

    def as_dict(self):
        return {
            "ess_per_chain": self.ess_per_chain,
            "r_hat": self.r_hat,
            "conv_rate": self.conv_rate,
            "soft_ser": self.soft_ser,
            "degenerate": self.degenerate,
        }


def _chain_matrix(samples, dim):
    """Draws for one dimension as a (chains, steps) matrix."""
    if hasattr(samples, "draws"):
        return samples.draws[:, :, dim]
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 2:
        return arr
    return arr[:, :, dim]


def autocorrelation(chains):
    """Autocorrelation by lag, averaged across chains.

    Each chain is centered on its own mean and normalized by its own
    variance (biased estimator). Constant chains return a zero curve.
    """
    x = np.asarray(chains, dtype=float)
    j, i = x.shape
    centered = x - x.mean(axis=1, keepdims=True)
    var = np.einsum("ji,ji->j", centered, centered)
    acf = np.zeros((j, i))
    live = var > 0
    for lag in range(i):
        prod = np.einsum("ji,ji->j", centered[:, :i - lag],
                         centered[:, lag:])
        acf[live, lag] = prod[live] / var[live]
    return acf.mean(axis=0), bool(np.all(live))


def ess(samples, dim=0):
    """Effective sample size ``I J / (1 + 2 sum_{lag<=T} ACF_lag)``.

    ``T`` is the first odd lag at which ``ACF_{T+1} + ACF_{T+2}`` turns
    negative (all available lags otherwise). Clamped to ``I J``; constant
    chains count as fully independent but are flagged degenerate.
    """
    x = _chain_matrix(samples, dim)
    j, i = x.shape
    if i < 2:
        raise ValueError("need at least 2 steps per chain")
    acf, nondegenerate = autocorrelation(x)
    if not nondegenerate:
        return float(i * j)
    t = None
    for cand in range(1, i - 2, 2):
        if acf[cand + 1] + acf[cand + 2] < 0.0:
            t = cand
            break
    if t is None:
        t = i - 3 if (i - 3) % 2 == 1 else i - 2
        t = max(t, 1)
    denom = 1.0 + 2.0 * acf[1:t + 1].sum()
    if denom <= 0.0:
        return float(i * j)
    return float(min(i * j / denom, i * j))


def r_hat(samples, dim=0):
    """Potential scale reduction: sqrt of pooled over within-chain variance.

    With zero between- and within-chain variance (all chains constant and
    identical) the statistic is defined as 1.
    """
    x = _chain_matrix(samples, dim)
    j, i = x.shape
    if j < 2:
        raise ValueError("need at least 2 chains")
    if i < 2:
        raise ValueError("need at least 2 steps per chain")
    chain_means = x.mean(axis=1)
    w = np.mean(np.var(x, axis=1, ddof=1))
    b = i * np.var(chain_means, ddof=1)
    var_plus = (i - 1) / i * w + b / i
    if w == 0.0:
        return 1.0 if b == 0.0 else np.inf
    return float(np.sqrt(var_plus / w))


def responsibilities(samples, c, prior):
    """Soft membership of each draw to each constellation level.

    Returns a ``(chains, steps, dims, K)`` array whose rows sum to one:
    the mixture posterior over components for each scalar draw, using the
    prior's Student-t shape and (possibly per-dimension) weights.
    """
    draws = samples.symbol_draws() if hasattr(samples, "symbol_draws") \
        else np.asarray(samples, dtype=float)
    z2 = ((draws[..., None] - c.levels) / prior.t_scale) ** 2
    log_t = -0.5 * (prior.t_dof + 1.0) * np.log1p(z2 / prior.t_dof)
    if prior.weights is None:
        logw = 0.0
    else:
        with np.errstate(divide="ignore"):
            logw = np.where(prior.weights > 0, np.log(prior.weights), -np.inf)
    terms = logw + log_t
    terms -= terms.max(axis=-1, keepdims=True)
    g = np.exp(terms)
    g /= g.sum(axis=-1, keepdims=True)
    return g


def transition_matrix(samples, c, prior):
    """Expected symbol transition counts, aggregated then row-normalized.

    Counts ``C[k, k'] = sum_i gamma_i^k gamma_{i+1}^{k'}`` are accumulated
    over chains and dimensions before normalization; symbols never visited
    produce an empty row that is replaced by the uniform one (flagged).
    """
    g = responsibilities(samples, c, prior)
    if g.shape[1] < 2:
        raise ValueError("need at least 2 steps per chain")
    counts = np.einsum("jink,jinl->kl", g[:, :-1], g[:, 1:])
    row_sums = counts.sum(axis=1)
    # soft responsibilities leave a trace of mass everywhere; a row whose
    # mass is negligible against the visited ones was never really entered
    empty = row_sums <= 1e-12 * max(row_sums.max(), 1e-300)
    k = c.n_levels
    mat = np.where(empty[:, None], 1.0 / k,
                   counts / np.where(empty, 1.0, row_sums)[:, None])
    return mat, bool(empty.any())


def convergence_rate(samples, c, prior):
    """Second-largest eigenvalue modulus of the symbol transition matrix."""
    mat, _ = transition_matrix(samples, c, prior)
    mods = eigen_moduli(mat)
    return float(mods[1]) if len(mods) > 1 else 0.0


def soft_ser(samples, u_true, c, prior):
    """Mean responsibility mass assigned away from the true symbols."""
    g = responsibilities(samples, c, prior)
    true_idx = quantize(np.asarray(u_true, dtype=float), c)[0]
    on_true = g[:, :, np.arange(g.shape[2]), true_idx]
    return float(np.mean(1.0 - on_true))


def diagnose(samples, c=None, prior=None, u_true=None):
    """Full report over all dimensions (see DiagnosticsReport for the
    aggregation rules)."""
    draws = samples.symbol_draws()
    n_dims = draws.shape[2]
    ess_vals = np.array([ess(draws, d) for d in range(n_dims)])
    rhat_vals = np.array([r_hat(draws, d) for d in range(n_dims)])
    worst = int(np.argmin(ess_vals))
    acf, nondeg = autocorrelation(draws[:, :, worst])
    conv = None
    flagged = not nondeg
    if c is not None and prior is not None:
        mat, empty_rows = transition_matrix(samples, c, prior)
        mods = eigen_moduli(mat)
        conv = float(mods[1]) if len(mods) > 1 else 0.0
        flagged = flagged or empty_rows
    sser = None
    if u_true is not None and c is not None and prior is not None:
        sser = soft_ser(samples, u_true, c, prior)
    return DiagnosticsReport(
        ess_per_chain=float(ess_vals.min() / draws.shape[0]),
        r_hat=float(np.max(rhat_vals)),
        conv_rate=conv,
        soft_ser=sser,
        acf=acf,
        degenerate=flagged,
    )
