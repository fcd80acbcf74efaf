import itertools

import numpy as np
import pytest

from mimodet.channel import ComplexSystemSpec, RealLinearSystem, \
    generate_channel, real_channel, transmit
from mimodet.constellation import bits_to_symbols, build_constellation, \
    quantize, symbols_to_bits
from mimodet.detectors import DetectorConfig, detect_ep, detect_hmc, \
    detect_hmc_batch, detect_mgs, detect_mmse, joint_posterior_select, \
    marginal_posterior_mean
from mimodet.hmc import ChainSamples, HmcConfig
from mimodet.linalg import solve_spd


def make_system(rng, n=2, snr_db=15.0, order=4):
    spec = ComplexSystemSpec(n_tx=n, n_rx=n, snr_db=snr_db)
    c = build_constellation(order, 0.5)
    h = real_channel(generate_channel(spec, rng))
    bits = rng.integers(0, 2, size=2 * n * c.bits_per_dim)
    u = bits_to_symbols(bits, c)
    y = transmit(h, u, spec.noise_var, rng)
    return RealLinearSystem(y=y, h=h, noise_var=spec.noise_var, u_true=u), c


def exhaustive_ml(sys, c):
    cands = np.array(list(itertools.product(c.levels, repeat=sys.n_dims)))
    costs = np.sum((sys.y[None, :] - cands @ sys.h.T) ** 2, axis=1)
    return cands[np.argmin(costs)]


def samples_from(draws, n_sym_dims=None):
    draws = np.asarray(draws, dtype=float)
    j = draws.shape[0]
    return ChainSamples(
        draws=draws, n_warmup=0,
        n_sym_dims=n_sym_dims or draws.shape[2],
        accept_rate=np.ones(j), step_sizes=np.ones(j),
        step_size_trace=np.ones((1, j)), divergences=np.zeros(j, dtype=int),
        max_depth_hits=np.zeros(j, dtype=int))


class TestMmse:
    def test_noiseless_identity(self):
        sys = RealLinearSystem(y=np.array([0.4, -0.2]), h=np.eye(2),
                               noise_var=1e-12)
        res = detect_mmse(sys, 0.5)
        np.testing.assert_allclose(res.u_soft, sys.y, atol=1e-9)

    def test_identity_with_matched_noise(self):
        # noise_var equal to the symbol power shrinks the estimate by half
        sys = RealLinearSystem(y=np.array([1.0, -1.0]), h=np.eye(2),
                               noise_var=0.5)
        res = detect_mmse(sys, 0.5)
        np.testing.assert_allclose(res.u_soft, sys.y / 2.0)

    def test_matches_direct_solve(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            sys, c = make_system(rng, n=3, snr_db=8.0)
            res = detect_mmse(sys, 0.5, c)
            direct = np.linalg.solve(
                sys.h.T @ sys.h + sys.noise_var / 0.5 * np.eye(6),
                sys.h.T @ sys.y)
            np.testing.assert_allclose(res.u_soft, direct, atol=1e-10)

    def test_normal_equation_residual_identity(self):
        rng = np.random.default_rng(1)
        sys, c = make_system(rng, n=4, snr_db=10.0)
        res = detect_mmse(sys, 0.5, c)
        lhs = sys.h.T @ (sys.y - sys.h @ res.u_soft)
        rhs = sys.noise_var / 0.5 * res.u_soft
        np.testing.assert_allclose(lhs, rhs, atol=1e-8)

    def test_hard_output_on_lattice(self):
        rng = np.random.default_rng(2)
        sys, c = make_system(rng, n=2, snr_db=5.0, order=16)
        res = detect_mmse(sys, 0.5, c)
        assert np.all(np.isin(res.u_hard, c.levels))


class TestMgs:
    def test_high_snr_matches_ml(self):
        rng = np.random.default_rng(3)
        matches = 0
        for t in range(60):
            sys, c = make_system(rng, n=1, snr_db=18.0)
            res = detect_mgs(sys, c, DetectorConfig(
                mgs_steps=40, mgs_restarts=3, seed=t))
            matches += np.array_equal(res.u_hard, exhaustive_ml(sys, c))
        assert matches >= 57

    def test_noiseless_exact_fit(self):
        rng = np.random.default_rng(4)
        spec = ComplexSystemSpec(n_tx=2, n_rx=2, snr_db=30.0)
        c = build_constellation(4, 0.5)
        h = real_channel(generate_channel(spec, rng))
        u = bits_to_symbols(rng.integers(0, 2, 4), c)
        sys = RealLinearSystem(y=h @ u, h=h, noise_var=0.05, u_true=u)
        res = detect_mgs(sys, c, DetectorConfig(mgs_steps=60,
                                                mgs_restarts=4, seed=0))
        np.testing.assert_array_equal(res.u_hard, u)
        assert res.info["residual_sq"] == pytest.approx(0.0, abs=1e-20)

    @pytest.mark.parametrize("p_restart", [0.0, 1.0])
    def test_restart_probability_edges(self, p_restart):
        rng = np.random.default_rng(5)
        sys, c = make_system(rng, n=2, snr_db=10.0)
        res = detect_mgs(sys, c, DetectorConfig(
            mgs_steps=25, mgs_restarts=2, mgs_restart_prob=p_restart,
            seed=1))
        assert np.all(np.isin(res.u_hard, c.levels))

    @pytest.mark.slow
    def test_pure_gibbs_leaves_target_invariant(self):
        # restart-free chain on a 1-antenna problem: symbol frequencies
        # must match the exact conditional posterior
        rng = np.random.default_rng(6)
        sys, c = make_system(rng, n=1, snr_db=6.0)
        cands = np.array(list(itertools.product(c.levels, repeat=2)))
        logp = -np.sum((sys.y[None, :] - cands @ sys.h.T) ** 2,
                       axis=1) / sys.noise_var
        p = np.exp(logp - logp.max())
        p /= p.sum()
        # long chain, no restarts, count visited joint symbols
        h, y, nv = sys.h, sys.y, sys.noise_var
        u = c.levels[rng.integers(0, 2, size=2)].astype(float)
        counts = np.zeros(4)
        sweeps = 40_000
        for _ in range(sweeps):
            for n in range(2):
                hn = h[:, n]
                r_base = y - h @ u + hn * u[n]
                logits = (2 * c.levels * (hn @ r_base)
                          - c.levels ** 2 * (hn @ hn)) / nv
                pr = np.exp(logits - logits.max())
                pr /= pr.sum()
                u[n] = c.levels[rng.choice(2, p=pr)]
            idx = int(u[0] > 0) * 2 + int(u[1] > 0)
            counts[idx] += 1
        freq = counts / sweeps
        order = np.array([int(cand[0] > 0) * 2 + int(cand[1] > 0)
                          for cand in cands])
        target = np.zeros(4)
        target[order] = p
        se = np.sqrt(target * (1 - target) / sweeps) * 3 + 3 * 0.005
        assert np.all(np.abs(freq - target) < np.maximum(se, 0.02))


class TestEp:
    def test_orthogonal_channel_factorized_posterior(self):
        rng = np.random.default_rng(7)
        c = build_constellation(4, 0.5)
        h = np.eye(6)
        u = bits_to_symbols(rng.integers(0, 2, 6), c)
        nv = 0.08
        y = transmit(h, u, nv, rng)
        sys = RealLinearSystem(y=y, h=h, noise_var=nv, u_true=u)
        res = detect_ep(sys, c, DetectorConfig())
        v_w = nv / 2.0
        w = np.exp(-(y[:, None] - c.levels[None, :]) ** 2 / (2 * v_w))
        w /= w.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(res.u_soft, w @ c.levels, atol=1e-4)

    def test_noiseless_limit_recovers_point(self):
        rng = np.random.default_rng(8)
        spec = ComplexSystemSpec(n_tx=2, n_rx=2)
        c = build_constellation(4, 0.5)
        h = real_channel(generate_channel(spec, rng))
        u = bits_to_symbols(rng.integers(0, 2, 4), c)
        sys = RealLinearSystem(y=h @ u, h=h, noise_var=1e-6, u_true=u)
        res = detect_ep(sys, c, DetectorConfig())
        np.testing.assert_allclose(res.u_soft, u, atol=1e-3)

    def test_high_snr_matches_map(self):
        rng = np.random.default_rng(9)
        matches = 0
        for _ in range(500):
            sys, c = make_system(rng, n=2, snr_db=15.0)
            res = detect_ep(sys, c, DetectorConfig())
            matches += np.array_equal(res.u_hard, exhaustive_ml(sys, c))
        assert matches / 500 >= 0.95


class TestPointEstimators:
    def test_joint_select_singleton(self):
        rng = np.random.default_rng(10)
        sys, c = make_system(rng)
        draw = rng.uniform(-0.6, 0.6, size=(1, 1, 4))
        out = joint_posterior_select(samples_from(draw), sys, c)
        np.testing.assert_array_equal(out, draw[0, 0])

    def test_joint_select_likelihood_dominance(self):
        rng = np.random.default_rng(11)
        sys, c = make_system(rng, snr_db=25.0)
        good = sys.u_true + 0.01
        bad = -sys.u_true + 0.01
        draws = np.stack([good, bad])[None, :, :]
        out = joint_posterior_select(samples_from(draws), sys, c)
        np.testing.assert_array_equal(out, good)

    def test_joint_select_equals_restricted_ml(self):
        rng = np.random.default_rng(12)
        sys, c = make_system(rng, snr_db=8.0)
        draws = rng.uniform(-0.7, 0.7, size=(4, 50, 4))
        out = joint_posterior_select(samples_from(draws), sys, c)
        # brute force over the visited quantized candidates
        flat = draws.reshape(-1, 4)
        q = quantize(flat, c)[1]
        costs = np.sum((sys.y[None, :] - q @ sys.h.T) ** 2, axis=1)
        best = flat[np.argmin(costs)]
        np.testing.assert_array_equal(out, best)

    def test_joint_select_never_beaten(self):
        rng = np.random.default_rng(13)
        sys, c = make_system(rng, snr_db=8.0)
        draws = rng.uniform(-0.7, 0.7, size=(3, 40, 4))
        out = joint_posterior_select(samples_from(draws), sys, c)
        out_q = quantize(out, c)[1]
        cost_out = np.sum((sys.y - sys.h @ out_q) ** 2)
        for d in draws.reshape(-1, 4):
            cost = np.sum((sys.y - sys.h @ quantize(d, c)[1]) ** 2)
            assert cost_out <= cost + 1e-12

    def test_marginal_mean_degenerate(self):
        draws = np.tile(np.array([0.3, -0.2]), (2, 5, 1))
        np.testing.assert_allclose(marginal_posterior_mean(
            samples_from(draws)), [0.3, -0.2])

    def test_marginal_mean_symmetry(self):
        a = np.array([0.5, 0.5])
        draws = np.stack([np.tile(a, (6, 1)), np.tile(-a, (6, 1))])
        np.testing.assert_allclose(marginal_posterior_mean(
            samples_from(draws)), [0.0, 0.0], atol=1e-15)

    @pytest.mark.slow
    def test_marginal_mean_matches_gaussian_posterior(self):
        from mimodet.hmc import run_chains
        from mimodet.model import PosteriorModel, PriorConfig

        rng = np.random.default_rng(14)
        sys, c = make_system(rng, n=4, snr_db=10.0)
        prior = PriorConfig(t_scale=0.1, t_dof=2.0, mixture_enabled=False,
                            ridge_enabled=True, ridge_var=c.avg_power / 2.0)
        model = PosteriorModel(sys, c, prior)
        samples = run_chains(model, HmcConfig(
            n_chains=32, steps_per_chain=120, warmup=24, seed=4))
        v_w = sys.noise_var / 2.0
        prec = sys.h.T @ sys.h / v_w + np.eye(8) / (c.avg_power / 2.0)
        mean = solve_spd(prec, sys.h.T @ sys.y / v_w)
        sd = np.sqrt(np.diag(np.linalg.inv(prec)))
        est = marginal_posterior_mean(samples)
        n_eff = samples.pooled().shape[0] * 0.15
        assert np.all(np.abs(est - mean) < 3 * sd / np.sqrt(n_eff))


class TestDetectHmc:
    @pytest.mark.slow
    def test_uncoded_matches_ml_oracle(self):
        rng = np.random.default_rng(15)
        systems = []
        for _ in range(100):
            sys, c = make_system(rng, n=2, snr_db=15.0)
            systems.append(sys)
        results = detect_hmc_batch(systems, c, DetectorConfig(seed=0),
                                   "uncoded")
        matches = sum(
            np.array_equal(r.u_hard, exhaustive_ml(s, c))
            for r, s in zip(results, systems))
        assert matches >= 99

    def test_single_front_end(self):
        rng = np.random.default_rng(16)
        sys, c = make_system(rng, n=2, snr_db=18.0)
        res = detect_hmc(sys, c, DetectorConfig(seed=1), "uncoded")
        assert res.u_hard.shape == (4,)
        assert np.all(np.isin(res.u_hard, c.levels))
        assert res.samples is not None

    def test_mode_validation(self):
        rng = np.random.default_rng(17)
        sys, c = make_system(rng)
        with pytest.raises(ValueError):
            detect_hmc(sys, c, DetectorConfig(), "bogus")
        with pytest.raises(ValueError):
            detect_hmc(sys, c, DetectorConfig(), "coded_subsequent")
        with pytest.raises(ValueError):
            detect_hmc(sys, c, DetectorConfig(), "uncoded",
                       llr_feedback=np.zeros(4))

    @pytest.mark.slow
    def test_coded_initial_marginal_beats_joint_at_low_snr(self):
        # the posterior-mean output should have lower squared error to the
        # truth than the highest-likelihood draw when noise dominates
        rng = np.random.default_rng(18)
        mse_marg, mse_joint = 0.0, 0.0
        trials = 200
        batch = []
        for _ in range(trials):
            sys, c = make_system(rng, n=4, snr_db=0.0)
            batch.append(sys)
        res = detect_hmc_batch(batch, c, DetectorConfig(seed=2),
                               "coded_initial")
        for sys, r in zip(batch, res):
            mse_marg += np.mean((r.u_soft - sys.u_true) ** 2)
            joint = joint_posterior_select(r.samples, sys, c)
            mse_joint += np.mean((joint - sys.u_true) ** 2)
        assert mse_marg < mse_joint

    def test_oracle_llr_feedback_recovers_truth(self):
        rng = np.random.default_rng(19)
        systems, llrs = [], []
        for _ in range(8):
            sys, c = make_system(rng, n=4, snr_db=14.0)
            bits = symbols_to_bits(sys.u_true, c)
            systems.append(sys)
            llrs.append(np.where(bits == 1, 25.0, -25.0))
        res = detect_hmc_batch(systems, c, DetectorConfig(seed=3),
                               "coded_subsequent", llrs)
        wrong = sum(int(np.sum(r.u_hard != s.u_true))
                    for r, s in zip(res, systems))
        assert wrong == 0

    def test_noise_scale_draws_are_discarded(self):
        rng = np.random.default_rng(20)
        sys, c = make_system(rng, n=2, snr_db=12.0)
        bits = symbols_to_bits(sys.u_true, c)
        llr = np.where(bits == 1, 10.0, -10.0)
        res = detect_hmc(sys, c, DetectorConfig(seed=4),
                         "coded_subsequent", llr)
        assert res.u_soft.shape == (4,)
        assert res.samples.draws.shape[2] == 8  # augmented state retained
        assert res.samples.symbol_draws().shape[2] == 4


class TestDetectorConfig:
    def test_prior_scalar_defaults_by_order(self):
        c16 = build_constellation(16, 0.5)
        scalars = DetectorConfig().resolved_prior_scalars(c16)
        assert scalars["t_scale"] == 0.0621
        assert scalars["ridge_gain"] == 62.0

    def test_overrides_win(self):
        c = build_constellation(4, 0.5)
        scalars = DetectorConfig(t_scale=0.2).resolved_prior_scalars(c)
        assert scalars["t_scale"] == 0.2
        assert scalars["t_dof"] == 1.8
