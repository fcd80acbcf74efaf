"""Built-in oracle battery behind ``mimodet selftest``.

Each check is a fast, deterministic version of one of the package's
independent oracles: analytic gradients against finite differences,
integrator reversibility, sampler moments on a known Gaussian target,
the closed-form linear detector, codec round trips, and the effective
sample size on a synthetic AR(1) chain.
"""

from __future__ import annotations

import numpy as np

from .channel import ComplexSystemSpec, RealLinearSystem, generate_channel, \
    real_channel, transmit
from .coding import ldpc_decode, ldpc_encode, make_toy_code
from .constellation import bits_to_symbols, build_constellation, \
    symbols_to_bits
from .detectors import DetectorConfig, detect_hmc, detect_mmse
from .diagnostics import ess, r_hat
from .hmc import HmcConfig, leapfrog, run_chains
from .model import PosteriorModel, PriorConfig
from .linalg import solve_spd


def _finite_diff_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def _make_system(rng, n=4, snr_db=10.0):
    spec = ComplexSystemSpec(n_tx=n, n_rx=n, snr_db=snr_db)
    h = real_channel(generate_channel(spec, rng))
    c = build_constellation(4, 0.5)
    bits = rng.integers(0, 2, size=2 * n)
    u = bits_to_symbols(bits, c)
    y = transmit(h, u, spec.noise_var, rng)
    return RealLinearSystem(y=y, h=h, noise_var=spec.noise_var, u_true=u), c


def check_gradients():
    rng = np.random.default_rng(1)
    sys, c = _make_system(rng)
    prior = PriorConfig.for_order(4, ridge_enabled=True, ridge_var=0.3,
                                  temperature_enabled=True)
    model = PosteriorModel(sys, c, prior)
    worst = 0.0
    for _ in range(10):
        state = rng.uniform(-1, 1, size=model.state_dim)
        val, grad = model.log_posterior_and_grad(state)
        fd = _finite_diff_grad(
            lambda s: model.log_posterior_and_grad(s)[0], state)
        denom = np.maximum(np.abs(fd), 1e-3 * np.abs(fd).max())
        worst = max(worst, np.max(np.abs(grad - fd) / denom))
    return worst < 1e-6, f"max rel gradient error {worst:.2e}"


def check_leapfrog_reversibility():
    rng = np.random.default_rng(2)
    grad_fn = lambda u: -u  # standard normal potential
    u0, r0 = rng.standard_normal(5), rng.standard_normal(5)
    u1, r1 = leapfrog(u0, r0, 0.1, 25, grad_fn)
    u2, r2 = leapfrog(u1, -r1, 0.1, 25, grad_fn)
    err = max(np.abs(u2 - u0).max(), np.abs(r2 + r0).max())
    return err < 1e-10, f"round-trip error {err:.2e}"


def check_gaussian_moments():
    rng = np.random.default_rng(3)
    sys, c = _make_system(rng, n=4, snr_db=8.0)
    prior = PriorConfig(t_scale=0.1, t_dof=2.0, mixture_enabled=False,
                        ridge_enabled=True, ridge_var=c.avg_power / 2.0)
    model = PosteriorModel(sys, c, prior)
    cfg = HmcConfig(n_chains=16, steps_per_chain=150, warmup=30, seed=3)
    samples = run_chains(model, cfg)
    v_w = sys.noise_var / 2.0
    prec = sys.h.T @ sys.h / v_w + np.eye(8) / (c.avg_power / 2.0)
    mean = solve_spd(prec, sys.h.T @ sys.y / v_w)
    pooled = samples.pooled()
    sd = np.sqrt(np.diag(np.linalg.inv(prec)))
    z = np.abs(pooled.mean(axis=0) - mean) / (sd / np.sqrt(200))
    return bool(np.all(z < 4)), f"max mean z-score {z.max():.2f}"


def check_mmse():
    rng = np.random.default_rng(4)
    sys, c = _make_system(rng)
    res = detect_mmse(sys, 0.5, c)
    direct = np.linalg.solve(sys.h.T @ sys.h + sys.noise_var / 0.5 * np.eye(8),
                             sys.h.T @ sys.y)
    err = np.abs(res.u_soft - direct).max()
    return err < 1e-10, f"max deviation from direct solve {err:.2e}"


def check_hmc_detector():
    rng = np.random.default_rng(5)
    sys, c = _make_system(rng, n=2, snr_db=18.0)
    res = detect_hmc(sys, c, DetectorConfig(seed=5), "uncoded")
    ok = bool(np.array_equal(res.u_hard, sys.u_true))
    return ok, "recovered the transmitted vector" if ok else "missed"


def check_constellation_roundtrip():
    rng = np.random.default_rng(6)
    for order in (4, 16, 64):
        c = build_constellation(order, 0.5)
        bits = rng.integers(0, 2, size=600 * c.bits_per_dim, dtype=np.uint8)
        if not np.array_equal(symbols_to_bits(bits_to_symbols(bits, c), c),
                              bits):
            return False, f"round trip failed for order {order}"
    return True, "bit round trips exact for orders 4/16/64"


def check_ldpc_toy():
    code = make_toy_code()
    for word in range(8):
        info = np.array([(word >> i) & 1 for i in range(3)], dtype=np.uint8)
        cw = ldpc_encode(info, code)
        if code.syndrome(cw).any():
            return False, f"parity violated for info {info}"
        llr = np.where(cw == 1, 8.0, -8.0)
        res = ldpc_decode(llr, code)
        if not np.array_equal(res.bits, cw):
            return False, f"decode disagreed for info {info}"
    return True, "all 8 toy codewords encode/decode exactly"


def check_ess_ar1():
    rng = np.random.default_rng(7)
    phi, i_steps, j_chains = 0.5, 4000, 8
    x = np.zeros((j_chains, i_steps))
    for t in range(1, i_steps):
        x[:, t] = phi * x[:, t - 1] + rng.standard_normal(j_chains)
    est = ess(x) / (i_steps * j_chains)
    target = (1 - phi) / (1 + phi)
    ok = abs(est - target) < 0.15 * target
    return ok, f"ESS fraction {est:.3f} vs analytic {target:.3f}"


def check_rhat_separation():
    rng = np.random.default_rng(8)
    same = rng.standard_normal((4, 2000))
    apart = same.copy()
    apart[0] += 10.0
    r_same, r_apart = r_hat(same), r_hat(apart)
    ok = r_same < 1.05 and r_apart > 1.1
    return ok, f"same-dist {r_same:.3f}, separated {r_apart:.2f}"


CHECKS = [
    ("analytic gradients vs central differences", check_gradients),
    ("leapfrog reversibility", check_leapfrog_reversibility),
    ("sampler moments on Gaussian posterior", check_gaussian_moments),
    ("closed-form linear detector", check_mmse),
    ("sampler-based detector smoke", check_hmc_detector),
    ("constellation bit round trip", check_constellation_roundtrip),
    ("toy code encode/decode", check_ldpc_toy),
    ("effective sample size on AR(1)", check_ess_ar1),
    ("scale-reduction separation", check_rhat_separation),
]


def run_selftest(verbose=True):
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        all_ok &= ok
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
