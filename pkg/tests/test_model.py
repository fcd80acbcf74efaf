import numpy as np
import pytest

from mimodet.channel import ComplexSystemSpec, RealLinearSystem, \
    generate_channel, real_channel, transmit
from mimodet.constellation import bits_to_symbols, build_constellation
from mimodet.linalg import solve_spd
from mimodet.model import AugmentedState, NonFiniteLogDensity, \
    PosteriorModel, PriorConfig, TUNED_PRIOR_PARAMS, log_likelihood, \
    log_prior_half_cauchy, log_prior_mixture_t, log_prior_ridge, \
    log_posterior_and_grad, log_t_density, ridge_variance_from_svd


def make_system(rng, n=4, snr_db=10.0, order=4):
    spec = ComplexSystemSpec(n_tx=n, n_rx=n, snr_db=snr_db)
    c = build_constellation(order, 0.5)
    h = real_channel(generate_channel(spec, rng))
    bits = rng.integers(0, 2, size=2 * n * c.bits_per_dim)
    u = bits_to_symbols(bits, c)
    y = transmit(h, u, spec.noise_var, rng)
    return RealLinearSystem(y=y, h=h, noise_var=spec.noise_var, u_true=u), c


def finite_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


class TestLogLikelihood:
    def test_zero_residual_maximum(self):
        rng = np.random.default_rng(0)
        sys, _ = make_system(rng)
        peak = log_likelihood(sys.u_true, RealLinearSystem(
            y=sys.h @ sys.u_true, h=sys.h, noise_var=sys.noise_var))
        expected = -0.5 * sys.n_obs * np.log(np.pi * sys.noise_var)
        assert peak == pytest.approx(expected)
        # any other point scores lower
        other = sys.u_true + 0.1
        assert log_likelihood(other, RealLinearSystem(
            y=sys.h @ sys.u_true, h=sys.h,
            noise_var=sys.noise_var)) < peak

    def test_residual_doubling_arithmetic(self):
        rng = np.random.default_rng(1)
        sys, _ = make_system(rng)
        u0 = sys.u_true
        r = sys.y - sys.h @ u0
        v1 = log_likelihood(u0, sys)
        sys2 = RealLinearSystem(y=sys.y + r, h=sys.h, noise_var=sys.noise_var)
        v2 = log_likelihood(u0, sys2)  # doubles the residual
        assert v2 - v1 == pytest.approx(-3.0 * (r @ r) / sys.noise_var)

    def test_unit_noise_scales_match_plain(self):
        rng = np.random.default_rng(2)
        sys, _ = make_system(rng)
        plain = log_likelihood(sys.u_true, sys)
        scaled = log_likelihood(sys.u_true, sys,
                                log_temp=np.zeros(sys.n_dims))
        assert scaled == pytest.approx(plain)

    def test_augmentation_needs_square_system(self):
        rng = np.random.default_rng(3)
        spec = ComplexSystemSpec(n_tx=2, n_rx=3)
        h = real_channel(generate_channel(spec, rng))
        sys = RealLinearSystem(y=np.zeros(6), h=h, noise_var=0.1)
        with pytest.raises(ValueError):
            log_likelihood(np.zeros(4), sys, log_temp=np.zeros(4))


class TestMixturePrior:
    def test_midpoint_gradient_zero_by_symmetry(self):
        c = build_constellation(4, 0.5)
        cfg = PriorConfig.for_order(4)
        f = lambda u: log_prior_mixture_t(u, c, cfg)
        g = finite_diff(f, np.zeros(4))
        np.testing.assert_allclose(g, 0.0, atol=1e-6)

    def test_degenerate_weights_reduce_to_single_component(self):
        c = build_constellation(4, 0.5)
        w = np.zeros((3, 2))
        w[:, 0] = 1.0
        cfg = PriorConfig(t_scale=0.1242, t_dof=1.8, weights=w)
        u = np.full(3, c.levels[0])
        expected = 3 * log_t_density(c.levels[0], c.levels[0], 0.1242, 1.8)
        assert log_prior_mixture_t(u, c, cfg) == pytest.approx(expected)

    def test_tuned_qpsk_peak_beats_midpoint(self):
        c = build_constellation(4, 0.5)
        cfg = PriorConfig.for_order(4)
        assert cfg.t_scale == 0.1242 and cfg.t_dof == 1.8
        at_level = log_prior_mixture_t(np.array([c.levels[0]]), c, cfg)
        at_mid = log_prior_mixture_t(np.array([0.0]), c, cfg)
        assert at_level > at_mid

    def test_finite_far_out(self):
        c = build_constellation(16, 0.5)
        cfg = PriorConfig.for_order(16)
        val = log_prior_mixture_t(np.array([1e6, -1e6]), c, cfg)
        assert np.isfinite(val)

    def test_tuned_table_values(self):
        assert TUNED_PRIOR_PARAMS[4] == {"t_scale": 0.1242, "t_dof": 1.8,
                                         "cauchy_scale": 3.5,
                                         "ridge_gain": 15.0}
        assert TUNED_PRIOR_PARAMS[16]["t_scale"] == 0.0621
        assert TUNED_PRIOR_PARAMS[16]["cauchy_scale"] == 5.0
        assert TUNED_PRIOR_PARAMS[16]["ridge_gain"] == 62.0
        assert TUNED_PRIOR_PARAMS[64] == {"t_scale": 0.0531, "t_dof": 2.5,
                                          "cauchy_scale": 3.0,
                                          "ridge_gain": 230.0}


class TestRidge:
    def test_mode_value(self):
        v = log_prior_ridge(np.zeros(8), 0.3)
        assert v == pytest.approx(-4.0 * np.log(2 * np.pi * 0.3))

    def test_gradient_closed_form(self):
        rng = np.random.default_rng(4)
        u = rng.standard_normal(6)
        g = finite_diff(lambda x: log_prior_ridge(x, 0.5), u)
        np.testing.assert_allclose(g, -u / 0.5, atol=1e-6)

    def test_radially_decreasing(self):
        vals = [log_prior_ridge(r * np.ones(4) / 2.0, 1.0)
                for r in np.linspace(0, 3, 10)]
        assert np.all(np.diff(vals) < 0)

    def test_svd_variance_formula(self):
        h = np.diag([2.0, 1.0])
        assert ridge_variance_from_svd(0.1, h, 15.0) == pytest.approx(0.375)

    def test_svd_variance_identity_channel(self):
        assert ridge_variance_from_svd(0.2, np.eye(5), 62.0) == \
            pytest.approx(0.2 * 62.0)

    def test_gain_must_exceed_one(self):
        with pytest.raises(ValueError):
            ridge_variance_from_svd(0.1, np.eye(2), 1.0)


class TestHalfCauchy:
    def test_value_at_scale_point(self):
        s = 3.5
        got = log_prior_half_cauchy(np.array([np.log(s)]), s)
        expected = np.log(2.0 / (np.pi * s)) - np.log(2.0) + np.log(s)
        assert got == pytest.approx(expected)

    def test_interior_maximum_in_log_space(self):
        # the transformed density peaks exactly at log(scale)
        s = 2.0
        grid = np.linspace(np.log(s) - 2, np.log(s) + 2, 401)
        vals = [log_prior_half_cauchy(np.array([g]), s) for g in grid]
        assert grid[int(np.argmax(vals))] == pytest.approx(np.log(s),
                                                           abs=0.02)

    def test_matches_scipy_halfcauchy_plus_jacobian(self):
        from scipy.stats import halfcauchy
        rng = np.random.default_rng(5)
        lt = rng.uniform(-2, 3, size=50)
        for s in (0.5, 3.5, 5.0):
            ref = np.sum(halfcauchy.logpdf(np.exp(lt), scale=s) + lt)
            assert log_prior_half_cauchy(lt, s) == pytest.approx(ref)


ALL_FLAG_COMBOS = [
    dict(mixture_enabled=True),
    dict(mixture_enabled=True, ridge_enabled=True, ridge_var=0.4),
    dict(mixture_enabled=True, ridge_enabled=True, ridge_var=0.4,
         temperature_enabled=True),
    dict(mixture_enabled=False, ridge_enabled=True, ridge_var=0.25),
    dict(mixture_enabled=False),
]


class TestPosteriorModel:
    @pytest.mark.parametrize("flags", ALL_FLAG_COMBOS)
    def test_gradient_matches_finite_differences(self, flags):
        rng = np.random.default_rng(6)
        sys, c = make_system(rng)
        cfg = PriorConfig.for_order(4, **flags)
        model = PosteriorModel(sys, c, cfg)
        worst = 0.0
        for _ in range(20):
            state = rng.uniform(-1.0, 1.0, size=model.state_dim)
            _, grad = model.log_posterior_and_grad(state)
            fd = finite_diff(lambda s: model.log_posterior_and_grad(s)[0],
                             state)
            denom = np.maximum(np.abs(fd), 1e-3 * np.abs(fd).max())
            worst = max(worst, np.max(np.abs(grad - fd) / denom))
        assert worst < 1e-6

    @pytest.mark.parametrize("flags", ALL_FLAG_COMBOS)
    def test_value_equals_sum_of_terms(self, flags):
        rng = np.random.default_rng(7)
        sys, c = make_system(rng)
        model = PosteriorModel(sys, c, PriorConfig.for_order(4, **flags))
        for _ in range(10):
            state = rng.uniform(-1.0, 1.0, size=model.state_dim)
            val, _ = model.log_posterior_and_grad(state)
            assert val == pytest.approx(sum(model.logpdf_terms(state).values()),
                                        abs=1e-12 * max(1.0, abs(val)))

    def test_ridge_only_mode_is_gaussian_mean(self):
        # gradient ascent on the ridge-only posterior must land on the
        # closed-form Gaussian mean
        rng = np.random.default_rng(8)
        sys, c = make_system(rng)
        cfg = PriorConfig(t_scale=0.1, t_dof=2.0, mixture_enabled=False,
                          ridge_enabled=True, ridge_var=c.avg_power / 2.0)
        model = PosteriorModel(sys, c, cfg)
        v_w = sys.noise_var / 2.0
        prec = sys.h.T @ sys.h / v_w + np.eye(8) / (c.avg_power / 2.0)
        mean = solve_spd(prec, sys.h.T @ sys.y / v_w)
        # the closed-form mean is a stationary point ...
        _, g_at_mean = model.log_posterior_and_grad(mean)
        np.testing.assert_allclose(g_at_mean, 0.0, atol=1e-9)
        # ... and plain gradient ascent homes in on it
        x = np.zeros(8)
        step = 1.0 / np.max(np.abs(np.linalg.eigvalsh(prec)))
        for _ in range(3000):
            _, g = model.log_posterior_and_grad(x)
            x = x + step * g
        np.testing.assert_allclose(x, mean, atol=1e-4)

    def test_likelihood_only_gradient_is_least_squares(self):
        rng = np.random.default_rng(9)
        sys, c = make_system(rng)
        cfg = PriorConfig(t_scale=0.1, t_dof=2.0, mixture_enabled=False)
        model = PosteriorModel(sys, c, cfg)
        u = rng.standard_normal(8)
        _, g = model.log_posterior_and_grad(u)
        expected = 2.0 * sys.h.T @ (sys.y - sys.h @ u) / sys.noise_var
        np.testing.assert_allclose(g, expected, atol=1e-10)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(10)
        systems, cs = zip(*(make_system(rng) for _ in range(3)))
        c = cs[0]
        cfg = PriorConfig.for_order(4, ridge_enabled=True, ridge_var=0.3)
        stacked = PosteriorModel.stacked(list(systems), c, cfg)
        states = rng.uniform(-1, 1, size=(3, 5, 8))
        vals, grads = stacked.value_and_grad(states)
        for b, sys in enumerate(systems):
            single = PosteriorModel(sys, c, cfg)
            for j in range(5):
                v, g = single.log_posterior_and_grad(states[b, j])
                assert vals[b, j] == pytest.approx(v, rel=1e-12)
                np.testing.assert_allclose(grads[b, j], g, rtol=1e-10)

    def test_grad_only_path_matches(self):
        rng = np.random.default_rng(11)
        sys, c = make_system(rng)
        cfg = PriorConfig.for_order(4, ridge_enabled=True, ridge_var=0.3,
                                    temperature_enabled=True)
        model = PosteriorModel(sys, c, cfg)
        states = rng.uniform(-1, 1, size=(1, 7, model.state_dim))
        _, grads = model.value_and_grad(states)
        np.testing.assert_allclose(model.grad(states), grads, rtol=1e-12)

    def test_non_finite_reports_term(self):
        rng = np.random.default_rng(12)
        sys, c = make_system(rng)
        model = PosteriorModel(sys, c, PriorConfig.for_order(4))
        state = np.full(model.state_dim, np.inf)
        with pytest.raises(NonFiniteLogDensity):
            model.log_posterior_and_grad(state)

    def test_augmented_state_container(self):
        st = AugmentedState(u=np.array([1.0, 2.0]),
                            log_temp=np.array([0.1, -0.1]))
        np.testing.assert_allclose(st.flat(), [1.0, 2.0, 0.1, -0.1])

    def test_wrapper_function(self):
        rng = np.random.default_rng(13)
        sys, c = make_system(rng)
        cfg = PriorConfig.for_order(4)
        state = rng.uniform(-1, 1, 8)
        v1, g1 = log_posterior_and_grad(state, sys, c, cfg)
        v2, g2 = PosteriorModel(sys, c, cfg).log_posterior_and_grad(state)
        assert v1 == v2
        np.testing.assert_array_equal(g1, g2)


class TestHeavyTailBehavior:
    @pytest.mark.slow
    def test_prior_only_noise_scale_marginal_is_half_cauchy(self):
        # sampling the augmented prior alone must reproduce the half-Cauchy
        # tail mass of the noise-scale coefficients
        from mimodet.hmc import HmcConfig, run_chains

        rng = np.random.default_rng(14)
        sys, c = make_system(rng, n=2)
        s = 3.5
        cfg = PriorConfig.for_order(4, ridge_enabled=True, ridge_var=0.5,
                                    temperature_enabled=True)
        model = PosteriorModel(sys, c, cfg, likelihood_enabled=False)
        samples = run_chains(model, HmcConfig(
            n_chains=32, steps_per_chain=700, warmup=100, seed=2))
        lam = np.exp(samples.draws[:, :, 4:].reshape(-1))
        emp = np.mean(lam > 10.0 * s)
        ref = 1.0 - 2.0 / np.pi * np.arctan(10.0)
        assert emp == pytest.approx(ref, rel=0.10)
