"""Gradient-based MCMC engine: leapfrog, fixed-length HMC, a no-U-turn
sampler with dual-averaging step-size adaptation, and a multi-chain runner.

The no-U-turn transition grows a trajectory by repeated doubling and samples
from it with multinomial weights, terminating a doubling round when any
balanced sub-trajectory or the full trajectory turns back on itself
(``(u+ - u-) . r < 0`` at either end). Doubling is implemented iteratively
with a checkpoint stack rather than recursion so that every chain of every
stacked problem instance advances through the same vectorized numpy calls;
chains whose trajectory has terminated are masked out of the bookkeeping
but simply ride along in the batched evaluations.

State arrays are shaped ``(batch, chains, dim)`` and evaluation callbacks
map them to ``((batch, chains), (batch, chains, dim))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_HALF = float(np.log(0.5))


def leapfrog(u, r, eps, n_steps, grad_fn):
    """Integrate Hamilton's equations with the leapfrog scheme.

    ``grad_fn`` returns the gradient of the log-density at ``u``. ``eps``
    may be a scalar or broadcast against the leading axes of ``u``. The
    half-kick / drift / half-kick composition is reversible and volume
    preserving; non-finite gradients simply propagate so the caller can
    flag a divergence.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    u = np.array(u, dtype=float)
    r = np.array(r, dtype=float)
    eps = np.asarray(eps, dtype=float)
    half = 0.5 * eps
    for _ in range(n_steps):
        r = r + half * grad_fn(u)
        u = u + eps * r
        r = r + half * grad_fn(u)
    return u, r


def _popcount(k):
    return bin(k).count("1")


def _trailing_ones(k):
    t = 0
    while k & 1:
        t += 1
        k >>= 1
    return t


def _dot(a, b):
    return np.einsum("...k,...k->...", a, b)


def _log_uniform(rng, shape):
    # log of a Uniform(0, 1] draw without ever taking log(0)
    return -rng.exponential(size=shape)


# ---------------------------------------------------------------------------
# Step-size adaptation
# ---------------------------------------------------------------------------

class DualAveraging:
    """Nesterov dual averaging of the log step size toward a target
    acceptance statistic. Vectorized over any array of step sizes."""

    def __init__(self, eps0, target_accept=0.8, gamma=0.05, t0=10.0,
                 kappa=0.75):
        eps0 = np.asarray(eps0, dtype=float)
        self.target_accept = target_accept
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.mu = np.log(10.0 * eps0)
        self.log_eps = np.log(eps0)
        self.log_eps_bar = np.zeros_like(self.log_eps)
        self.h_bar = np.zeros_like(self.log_eps)
        self.m = 0

    def update(self, accept_stat):
        """Feed one round's acceptance statistic; returns the next eps."""
        self.m += 1
        eta = 1.0 / (self.m + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar \
            + eta * (self.target_accept - accept_stat)
        self.log_eps = self.mu - np.sqrt(self.m) / self.gamma * self.h_bar
        self.log_eps = np.clip(self.log_eps, -15.0, 8.0)
        w = self.m ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return np.exp(self.log_eps)

    @property
    def adapted_eps(self):
        return np.exp(self.log_eps_bar)


def dual_averaging_adapt(accept_history, target_accept=0.8, eps0=1.0):
    """Step-size schedule produced by dual averaging on a given history.

    Returns the array of step sizes after each acceptance observation.
    """
    da = DualAveraging(float(eps0), target_accept=target_accept)
    return np.array([float(da.update(a)) for a in accept_history])


def _find_reasonable_eps(eval_fn, state, logp, grad, rng,
                         lo=1e-10, hi=1e3, max_rounds=60):
    """Per-chain initial step size: double or halve until the one-step
    acceptance ratio crosses 1/2 (vectorized over all chains)."""
    eps = np.ones(state.shape[:-1])
    r0 = rng.standard_normal(state.shape)
    neg_h0 = logp - 0.5 * _dot(r0, r0)

    def log_ratio(e):
        step = e[..., None]
        r_half = r0 + 0.5 * step * grad
        u_new = state + step * r_half
        lp, g = eval_fn(u_new)
        r_new = r_half + 0.5 * step * g
        la = lp - 0.5 * _dot(r_new, r_new) - neg_h0
        return np.where(np.isfinite(la), la, -np.inf)

    la = log_ratio(eps)
    a = np.where(la > LOG_HALF, 1.0, -1.0)
    for _ in range(max_rounds):
        cond = (a * la > -a * np.log(2.0)) & (eps < hi) & (eps > lo)
        if not cond.any():
            break
        eps = np.where(cond, eps * 2.0 ** a, eps)
        la = np.where(cond, log_ratio(eps), la)
    return np.clip(eps, lo, hi)


# ---------------------------------------------------------------------------
# Transitions
# ---------------------------------------------------------------------------

def _hmc_transition(eval_fn, grad_fn, state, logp, grad, eps, n_leapfrog,
                    rng, div_threshold):
    """One fixed-length HMC transition for every chain in the batch.

    Interior half-kicks are merged into full kicks; the cached gradient of
    the current state seeds the first half-kick and the closing evaluation
    provides both the final half-kick and the acceptance energy.
    """
    r0 = rng.standard_normal(state.shape)
    neg_h0 = logp - 0.5 * _dot(r0, r0)
    step = np.asarray(eps)[..., None]
    with np.errstate(invalid="ignore", over="ignore"):
        r = r0 + 0.5 * step * grad
        u = state + step * r
        for _ in range(n_leapfrog - 1):
            r += step * grad_fn(u)
            u += step * r
        lp_new, g_new = eval_fn(u)
        r += 0.5 * step * g_new
        la = lp_new - 0.5 * _dot(r, r) - neg_h0
    la = np.where(np.isfinite(la), la, -np.inf)
    divergent = la < -div_threshold
    accept = _log_uniform(rng, la.shape) < la
    alpha = np.exp(np.minimum(la, 0.0))
    state = np.where(accept[..., None], u, state)
    logp = np.where(accept, lp_new, logp)
    grad = np.where(accept[..., None], g_new, grad)
    stats = {"alpha_sum": alpha, "n_alpha": np.ones_like(alpha),
             "divergent": divergent,
             "maxdepth": np.zeros(la.shape, dtype=bool)}
    return state, logp, grad, stats


def _nuts_transition(eval_fn, state, logp, grad, eps, rng, max_depth,
                     div_threshold):
    """One no-U-turn transition for every chain in the batch.

    Returns the new (state, logp, grad) plus per-chain statistics. The
    proposal starts as the current state with unit weight, so a chain whose
    very first leaf diverges keeps its state unchanged.
    """
    lead = state.shape[:-1]
    r0 = rng.standard_normal(state.shape)
    neg_h0 = logp - 0.5 * _dot(r0, r0)

    prop, prop_logp, prop_grad = state.copy(), logp.copy(), grad.copy()
    lw_tree = np.zeros(lead)
    u_minus, r_minus, g_minus = state.copy(), r0.copy(), grad.copy()
    u_plus, r_plus, g_plus = state.copy(), r0.copy(), grad.copy()

    alive = np.ones(lead, dtype=bool)
    divergent = np.zeros(lead, dtype=bool)
    alpha_sum = np.zeros(lead)
    n_alpha = np.zeros(lead)

    for depth in range(max_depth):
        if not alive.any():
            break
        fwd = rng.random(lead) < 0.5
        sign = np.where(fwd, 1.0, -1.0)
        pick = fwd[..., None]
        ue = np.where(pick, u_plus, u_minus)
        re = np.where(pick, r_plus, r_minus)
        ge = np.where(pick, g_plus, g_minus)
        step = (eps * sign)[..., None]

        sub_ok = alive.copy()
        lw_sub = np.full(lead, -np.inf)
        u_sub = np.zeros_like(state)
        lp_sub = np.zeros(lead)
        g_sub = np.zeros_like(state)
        ck_u = np.zeros((depth + 1,) + state.shape)
        ck_r = np.zeros_like(ck_u)

        for k in range(1 << depth):
            with np.errstate(invalid="ignore", over="ignore"):
                r_half = re + 0.5 * step * ge
                u_new = ue + step * r_half
                lp_new, g_new = eval_fn(u_new)
                r_new = r_half + 0.5 * step * g_new
                lw_leaf = lp_new - 0.5 * _dot(r_new, r_new) - neg_h0
            bad = ~np.isfinite(lw_leaf)
            lw_leaf = np.where(bad, -np.inf, lw_leaf)
            div_leaf = bad | (lw_leaf < -div_threshold)

            alpha_sum += np.where(sub_ok, np.exp(np.minimum(lw_leaf, 0.0)), 0.0)
            n_alpha += sub_ok
            divergent |= sub_ok & div_leaf
            grow = sub_ok & ~div_leaf
            gpick = grow[..., None]

            lw_sub_new = np.logaddexp(lw_sub, lw_leaf)
            take = grow & (_log_uniform(rng, lead) < lw_leaf - lw_sub_new)
            tpick = take[..., None]
            u_sub = np.where(tpick, u_new, u_sub)
            lp_sub = np.where(take, lp_new, lp_sub)
            g_sub = np.where(tpick, g_new, g_sub)
            lw_sub = np.where(grow, lw_sub_new, lw_sub)

            ue = np.where(gpick, u_new, ue)
            re = np.where(gpick, r_new, re)
            ge = np.where(gpick, g_new, ge)

            if k % 2 == 0:
                slot = _popcount(k)
                ck_u[slot] = ue
                ck_r[slot] = re
            else:
                # Leaf k closes balanced sub-trajectories of sizes
                # 2, 4, ..., 2^t; compare against their stored start states.
                pc = _popcount(k)
                turned = np.zeros(lead, dtype=bool)
                for m in range(1, _trailing_ones(k) + 1):
                    du = (ue - ck_u[pc - m]) * sign[..., None]
                    turned |= (_dot(du, ck_r[pc - m]) < 0.0) \
                        | (_dot(du, re) < 0.0)
                sub_ok = sub_ok & ~(grow & turned)
            sub_ok = sub_ok & ~div_leaf
            if not sub_ok.any():
                break

        # Rows whose subtree completed cleanly merge its proposal with a
        # probability proportional to the subtree weight, extend the
        # trajectory ends, and re-test the full-trajectory turn condition.
        swap = sub_ok & (_log_uniform(rng, lead) < lw_sub - lw_tree)
        spick = swap[..., None]
        prop = np.where(spick, u_sub, prop)
        prop_logp = np.where(swap, lp_sub, prop_logp)
        prop_grad = np.where(spick, g_sub, prop_grad)
        lw_tree = np.where(sub_ok, np.logaddexp(lw_tree, lw_sub), lw_tree)

        okf = (sub_ok & fwd)[..., None]
        okb = (sub_ok & ~fwd)[..., None]
        u_plus = np.where(okf, ue, u_plus)
        r_plus = np.where(okf, re, r_plus)
        g_plus = np.where(okf, ge, g_plus)
        u_minus = np.where(okb, ue, u_minus)
        r_minus = np.where(okb, re, r_minus)
        g_minus = np.where(okb, ge, g_minus)

        du_full = u_plus - u_minus
        full_turn = (_dot(du_full, r_minus) < 0.0) | (_dot(du_full, r_plus) < 0.0)
        alive = sub_ok & ~full_turn

    stats = {"alpha_sum": alpha_sum, "n_alpha": np.maximum(n_alpha, 1.0),
             "divergent": divergent, "maxdepth": alive}
    return prop, prop_logp, prop_grad, stats


def _wrap_eval(logp_grad_fn):
    def eval_fn(u):
        lp, g = logp_grad_fn(u)
        return np.asarray(lp, dtype=float), np.asarray(g, dtype=float)
    return eval_fn


def hmc_step(state, logp_grad_fn, eps, n_leapfrog, rng):
    """One Metropolis-adjusted HMC transition with ``n_leapfrog`` steps.

    ``state`` may be a single vector or a stack of chains; the proposal is
    rejected (state returned unchanged) on energy blow-up.
    """
    state = np.asarray(state, dtype=float)
    single = state.ndim == 1
    s = state[None, :] if single else state
    ev = _wrap_eval(logp_grad_fn)
    lp, g = ev(s)
    out, _, _, _ = _hmc_transition(ev, lambda u: ev(u)[1], s, lp, g,
                                   np.asarray(eps, dtype=float), n_leapfrog,
                                   rng, div_threshold=1000.0)
    return out[0] if single else out


def nuts_step(state, logp_grad_fn, eps, max_depth, rng):
    """One no-U-turn transition (see module docstring for the scheme)."""
    state = np.asarray(state, dtype=float)
    single = state.ndim == 1
    s = state[None, :] if single else state
    ev = _wrap_eval(logp_grad_fn)
    lp, g = ev(s)
    out, _, _, _ = _nuts_transition(ev, s, lp, g,
                                    np.asarray(eps, dtype=float), rng,
                                    max_depth, div_threshold=1000.0)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Multi-chain runner
# ---------------------------------------------------------------------------

@dataclass
class HmcConfig:
    """Multi-chain sampler configuration.

    The defaults follow the simulation convention of splitting a budget of
    roughly 1000 transitions into ``floor(1000 / n_dims)`` chains of
    ``n_dims`` steps each; :meth:`for_dims` applies it with small-problem
    clamps so the warm-up always fits.
    """

    n_chains: int
    steps_per_chain: int
    warmup: int
    max_tree_depth: int = 10
    target_accept: float = 0.8
    use_nuts: bool = True
    fixed_leapfrog_steps: int = 10
    divergence_threshold: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if self.n_chains < 1 or self.steps_per_chain < 1:
            raise ValueError("chain counts must be positive")
        if not 0 < self.warmup < self.steps_per_chain:
            raise ValueError("need 0 < warmup < steps_per_chain")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1 or self.fixed_leapfrog_steps < 1:
            raise ValueError("depth and leapfrog counts must be positive")

    @classmethod
    def for_dims(cls, n_dims, coded=False, seed=0, **overrides):
        """Budgeted defaults for a ``n_dims``-dimensional symbol vector.

        Coded runs cap the doubling depth: the noise-scale augmentation
        creates funnel-shaped level sets on which uncapped trajectories
        routinely reach a thousand leapfrog steps without improving the
        point estimates.
        """
        warmup = 24 if coded else 12
        steps = max(n_dims, warmup + 8)
        kw = dict(
            n_chains=max(1, 1000 // steps),
            steps_per_chain=steps,
            warmup=warmup,
            seed=seed,
        )
        if coded:
            kw["max_tree_depth"] = 6
        kw.update(overrides)
        return cls(**kw)


@dataclass
class ChainSamples:
    """Post-warm-up draws plus per-chain sampler statistics.

    ``draws`` is indexed ``[chain, step, dimension]`` and never includes
    warm-up states. For augmented runs the first ``n_sym_dims`` dimensions
    are the symbol vector and the rest the log noise-scale coefficients.
    """

    draws: np.ndarray
    n_warmup: int
    n_sym_dims: int
    accept_rate: np.ndarray
    step_sizes: np.ndarray
    step_size_trace: np.ndarray
    divergences: np.ndarray
    max_depth_hits: np.ndarray = field(default=None)

    @property
    def n_chains(self):
        return self.draws.shape[0]

    @property
    def n_steps(self):
        return self.draws.shape[1]

    def symbol_draws(self):
        """Draws restricted to the symbol dimensions (noise scales dropped)."""
        return self.draws[:, :, :self.n_sym_dims]

    def pooled(self):
        """All kept draws pooled over chains, shape (chains*steps, dim)."""
        return self.draws.reshape(-1, self.draws.shape[2])


def run_chains_batch(model, cfg, init="uniform"):
    """Run ``cfg.n_chains`` chains for every instance stacked in ``model``.

    All chains of all instances advance together through the batched
    transition kernel; the result is split back into one
    :class:`ChainSamples` per instance. Deterministic for a fixed seed.
    ``init`` selects 'uniform' (over the level range) or 'prior'
    (mixture-weight informed) chain starts.
    """
    from .perf import tune_allocator
    tune_allocator()
    rng = np.random.default_rng(cfg.seed)
    b = model.batch_size
    j = cfg.n_chains
    total = cfg.steps_per_chain
    kept = total - cfg.warmup

    if init == "uniform":
        state = model.initial_states(rng, j)
    elif init == "prior":
        state = model.prior_informed_states(rng, j)
    else:
        raise ValueError(f"unknown init scheme {init!r}")
    logp, grad = model.value_and_grad(state)
    if not np.all(np.isfinite(logp)):
        raise FloatingPointError("non-finite log-density at initialization")

    eval_fn = model.value_and_grad
    grad_fn = model.grad
    eps = _find_reasonable_eps(eval_fn, state, logp, grad, rng)
    da = DualAveraging(eps, target_accept=cfg.target_accept)

    draws = np.empty((b, j, kept, model.state_dim))
    eps_trace = np.empty((total, b, j))
    div_count = np.zeros((b, j), dtype=int)
    depth_hits = np.zeros((b, j), dtype=int)
    alpha_post = np.zeros((b, j))

    for step in range(total):
        if step == cfg.warmup:
            eps = da.adapted_eps
        eps_trace[step] = eps
        if cfg.use_nuts:
            state, logp, grad, stats = _nuts_transition(
                eval_fn, state, logp, grad, eps, rng,
                cfg.max_tree_depth, cfg.divergence_threshold)
        else:
            state, logp, grad, stats = _hmc_transition(
                eval_fn, grad_fn, state, logp, grad, eps,
                cfg.fixed_leapfrog_steps, rng, cfg.divergence_threshold)
        accept_stat = stats["alpha_sum"] / stats["n_alpha"]
        if step < cfg.warmup:
            eps = da.update(accept_stat)
        else:
            # step-size search makes warm-up blow-ups routine; only
            # post-warm-up divergences indicate sampling quality
            div_count += stats["divergent"]
            depth_hits += stats["maxdepth"]
            alpha_post += accept_stat
            draws[:, :, step - cfg.warmup] = state

    alpha_post /= kept
    out = []
    for bi in range(b):
        out.append(ChainSamples(
            draws=draws[bi],
            n_warmup=cfg.warmup,
            n_sym_dims=model.n_sym_dims,
            accept_rate=alpha_post[bi],
            step_sizes=np.asarray(eps)[bi].copy()
                if np.ndim(eps) == 2 else np.full(j, float(eps)),
            step_size_trace=eps_trace[:, bi, :].copy(),
            divergences=div_count[bi].copy(),
            max_depth_hits=depth_hits[bi].copy(),
        ))
    return out


def run_chains(model, cfg):
    """Multi-chain run for a single-instance model (see run_chains_batch)."""
    if model.batch_size != 1:
        raise ValueError("run_chains expects a single-instance model; "
                         "use run_chains_batch for stacked models")
    return run_chains_batch(model, cfg)[0]
