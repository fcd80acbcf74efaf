"""The detector zoo.

Closed-form MMSE, a mixed Gibbs sampler with random restarts, expectation
propagation with a discrete symbol prior, and the proposed sampler-based
detector in three modes:

``uncoded``
    uniform-weight Student-t mixture prior, Gaussian likelihood, and the
    highest-likelihood quantized draw as the point estimate;
``coded_initial``
    adds the channel-adapted ridge term and returns the per-dimension
    posterior mean instead (more robust at low SNR);
``coded_subsequent``
    decoder-fed mixture weights, ridge, and the noise-scale augmented
    (heavy-tailed) likelihood; the noise-scale draws are discarded before
    the highest-likelihood selection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constellation import quantize, weights_from_llr_matrix
from .hmc import HmcConfig, run_chains_batch
from .linalg import solve_spd
from .model import PosteriorModel, PriorConfig, TUNED_PRIOR_PARAMS, \
    ridge_variance_from_svd

HMC_MODES = ("uncoded", "coded_initial", "coded_subsequent")


@dataclass
class DetectorConfig:
    """Per-detector knobs; unset fields are derived from the problem size.

    ``mgs_steps`` defaults to ``8 N K`` full sweeps, ``mgs_restarts`` to a
    total budget of roughly 10,000 sweeps, and ``mgs_restart_prob`` to
    ``1 / n_dims``. Prior scalars default to the tuned values for the
    constellation order.
    """

    kind: str = "hmc"
    mgs_steps: int | None = None
    mgs_restarts: int | None = None
    mgs_restart_prob: float | None = None
    ep_iterations: int = 10
    ep_damping: float = 0.7
    ep_var_floor: float = 1e-8
    hmc: HmcConfig | None = None
    t_scale: float | None = None
    t_dof: float | None = None
    cauchy_scale: float | None = None
    ridge_gain: float | None = None
    seed: int = 0

    def resolved_prior_scalars(self, c):
        params = TUNED_PRIOR_PARAMS[c.order]
        return {
            "t_scale": self.t_scale if self.t_scale is not None
            else params["t_scale"],
            "t_dof": self.t_dof if self.t_dof is not None
            else params["t_dof"],
            "cauchy_scale": self.cauchy_scale if self.cauchy_scale is not None
            else params["cauchy_scale"],
            "ridge_gain": self.ridge_gain if self.ridge_gain is not None
            else params["ridge_gain"],
        }

    def resolved_hmc(self, n_dims, coded):
        if self.hmc is not None:
            return self.hmc
        return HmcConfig.for_dims(n_dims, coded=coded, seed=self.seed)


@dataclass
class DetectionResult:
    """Soft and quantized estimates plus per-detector extras."""

    u_soft: np.ndarray
    u_hard: np.ndarray
    samples: object = None
    degraded: bool = False
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Linear baseline
# ---------------------------------------------------------------------------

def detect_mmse(sys, avg_power, c=None):
    """Regularized linear estimate ``(H^T H + nv/P_t I)^{-1} H^T y``."""
    h = sys.h
    hth = h.T @ h
    reg = sys.noise_var / avg_power
    u_soft = solve_spd(hth + reg * np.eye(h.shape[1]), h.T @ sys.y)
    u_hard = quantize(u_soft, c)[1] if c is not None else None
    return DetectionResult(u_soft=u_soft, u_hard=u_hard)


# ---------------------------------------------------------------------------
# Mixed Gibbs sampling with restarts
# ---------------------------------------------------------------------------

def detect_mgs(sys, c, cfg, rng=None):
    """Gibbs sampling over the discrete symbol lattice.

    Each step is one full sweep of conditional draws with the state
    re-randomized beforehand with probability ``mgs_restart_prob``; the
    whole run is repeated over independent restarts and the visited state
    with the highest likelihood (smallest residual) is returned.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    h, y, nv = sys.h, sys.y, sys.noise_var
    d = sys.n_dims
    levels = c.levels
    n_steps = cfg.mgs_steps if cfg.mgs_steps is not None \
        else 8 * (d // 2) * c.n_levels
    n_restarts = cfg.mgs_restarts if cfg.mgs_restarts is not None \
        else max(1, round(10_000 / max(n_steps, 1)))
    p_restart = cfg.mgs_restart_prob if cfg.mgs_restart_prob is not None \
        else 1.0 / d

    col_norms = np.einsum("mk,mk->k", h, h)
    lv2 = levels ** 2
    best_u, best_cost = None, np.inf

    for _ in range(n_restarts):
        u = levels[rng.integers(0, c.n_levels, size=d)]
        r = y - h @ u
        for _ in range(n_steps):
            if rng.random() < p_restart:
                u = levels[rng.integers(0, c.n_levels, size=d)]
                r = y - h @ u
            for n in range(d):
                hn = h[:, n]
                r_base = r + hn * u[n]
                proj = hn @ r_base
                logits = (2.0 * levels * proj - lv2 * col_norms[n]) / nv
                logits -= logits.max()
                p = np.exp(logits)
                k = np.searchsorted(np.cumsum(p), rng.random() * p.sum())
                u[n] = levels[min(k, c.n_levels - 1)]
                r = r_base - hn * u[n]
            cost = r @ r
            if cost < best_cost:
                best_cost, best_u = cost, u.copy()

    return DetectionResult(u_soft=best_u, u_hard=best_u.copy(),
                           info={"residual_sq": float(best_cost)})


# ---------------------------------------------------------------------------
# Expectation propagation
# ---------------------------------------------------------------------------

def detect_ep(sys, c, cfg):
    """Expectation propagation with per-dimension discrete moment matching.

    The posterior is approximated by a Gaussian whose site parameters are
    refined over ``ep_iterations`` damped parallel updates; dimensions with
    an invalid (non-positive) cavity variance keep their previous site.
    """
    h, y = sys.h, sys.y
    d = sys.n_dims
    v_w = sys.noise_var / 2.0
    a = h.T @ h / v_w
    b = h.T @ y / v_w
    v_prior = c.avg_power / 2.0
    gam = np.full(d, 1.0 / v_prior)
    delt = np.zeros(d)
    levels = c.levels
    eta = cfg.ep_damping
    floor = cfg.ep_var_floor
    mu = np.zeros(d)

    for _ in range(cfg.ep_iterations):
        sigma = np.linalg.inv(a + np.diag(gam))
        mu = sigma @ (b + delt)
        v = np.clip(np.diag(sigma), floor, None)
        denom = 1.0 / v - gam
        valid = denom > floor
        v_cav = np.where(valid, 1.0 / np.maximum(denom, floor), 1.0)
        m_cav = np.where(valid, v_cav * (mu / v - delt), 0.0)

        z = -0.5 * (levels[None, :] - m_cav[:, None]) ** 2 / v_cav[:, None]
        z -= z.max(axis=1, keepdims=True)
        w = np.exp(z)
        w /= w.sum(axis=1, keepdims=True)
        m_t = w @ levels
        v_t = np.clip(w @ levels ** 2 - m_t ** 2, floor, None)

        gam_new = 1.0 / v_t - 1.0 / v_cav
        delt_new = m_t / v_t - m_cav / v_cav
        ok = valid & (gam_new > floor)
        gam = np.where(ok, (1.0 - eta) * gam + eta * gam_new, gam)
        delt = np.where(ok, (1.0 - eta) * delt + eta * delt_new, delt)

    return DetectionResult(u_soft=mu, u_hard=quantize(mu, c)[1])


# ---------------------------------------------------------------------------
# Point estimators over chain draws
# ---------------------------------------------------------------------------

def joint_posterior_select(samples, sys, c):
    """The draw whose quantization has the highest exact likelihood.

    Every post-warm-up draw is quantized to the lattice and scored with the
    Gaussian likelihood using the cached ``H^T H`` / ``H^T y`` quadratic
    form; ties keep the first occurrence. Returns the soft (unquantized)
    winning draw.
    """
    draws = samples.symbol_draws().reshape(-1, samples.n_sym_dims)
    if draws.shape[0] == 0:
        raise ValueError("no draws to select from")
    q = quantize(draws, c)[1]
    hth = sys.h.T @ sys.h
    hty = sys.h.T @ sys.y
    # residual^2 up to the constant ||y||^2, minimized == likelihood maximized
    scores = np.einsum("sk,sk->s", q, q @ hth) - 2.0 * q @ hty
    return draws[int(np.argmin(scores))].copy()


def marginal_posterior_mean(samples):
    """Per-dimension average of the post-warm-up draws pooled over chains."""
    draws = samples.symbol_draws()
    if draws.size == 0:
        raise ValueError("no draws to average")
    return draws.mean(axis=(0, 1))


# ---------------------------------------------------------------------------
# Proposed detector
# ---------------------------------------------------------------------------

def _build_prior(sys, c, scalars, mode, llr=None):
    if mode == "uncoded":
        return PriorConfig(t_scale=scalars["t_scale"], t_dof=scalars["t_dof"])
    ridge_var = ridge_variance_from_svd(sys.noise_var, sys.h,
                                        scalars["ridge_gain"])
    if mode == "coded_initial":
        return PriorConfig(t_scale=scalars["t_scale"], t_dof=scalars["t_dof"],
                           ridge_enabled=True, ridge_var=ridge_var)
    weights = weights_from_llr_matrix(
        np.asarray(llr, dtype=float).reshape(sys.n_dims, c.bits_per_dim), c)
    return PriorConfig(t_scale=scalars["t_scale"], t_dof=scalars["t_dof"],
                       weights=weights, ridge_enabled=True,
                       ridge_var=ridge_var, temperature_enabled=True,
                       cauchy_scale=scalars["cauchy_scale"])


def detect_hmc_batch(systems, c, cfg, mode, llr_feedback=None):
    """Run the sampler-based detector on a batch of instances at once.

    All instances must share dimensions and noise variance (one SNR cell).
    ``llr_feedback`` is required in ``coded_subsequent`` mode: one flat
    per-bit LLR array per instance. Returns one DetectionResult each.
    """
    if mode not in HMC_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {HMC_MODES}")
    if (llr_feedback is None) == (mode == "coded_subsequent"):
        raise ValueError("llr_feedback is required exactly in "
                         "coded_subsequent mode")
    scalars = cfg.resolved_prior_scalars(c)
    priors = []
    for i, sys in enumerate(systems):
        llr = llr_feedback[i] if llr_feedback is not None else None
        priors.append(_build_prior(sys, c, scalars, mode, llr))
    model = PosteriorModel.stacked(list(systems), c, priors)
    hmc_cfg = cfg.resolved_hmc(model.n_sym_dims, coded=(mode != "uncoded"))
    # feedback-weighted runs start in the peaks the decoder points at
    init = "prior" if mode == "coded_subsequent" else "uniform"
    samples_list = run_chains_batch(model, hmc_cfg, init=init)

    results = []
    total_transitions = hmc_cfg.n_chains * (hmc_cfg.steps_per_chain
                                            - hmc_cfg.warmup)
    for sys, samples in zip(systems, samples_list):
        if mode == "coded_initial":
            u_soft = marginal_posterior_mean(samples)
        else:
            u_soft = joint_posterior_select(samples, sys, c)
        n_div = int(samples.divergences.sum())
        results.append(DetectionResult(
            u_soft=u_soft,
            u_hard=quantize(u_soft, c)[1],
            samples=samples,
            degraded=n_div > 0.5 * total_transitions,
            info={"divergences": n_div,
                  "max_depth_hits": int(samples.max_depth_hits.sum())},
        ))
    return results


def detect_hmc(sys, c, cfg, mode="uncoded", llr_feedback=None):
    """Single-instance front end for :func:`detect_hmc_batch`."""
    llrs = None if llr_feedback is None else [llr_feedback]
    return detect_hmc_batch([sys], c, cfg, mode, llrs)[0]
