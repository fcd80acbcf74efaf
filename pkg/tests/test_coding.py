import numpy as np
import pytest

from mimodet.channel import ComplexSystemSpec, RealLinearSystem, \
    generate_channel, real_channel, transmit
from mimodet.coding import LdpcCode, ldpc_decode, ldpc_encode, \
    load_parity_check, make_regular_code, make_toy_code, run_idd, \
    save_parity_check
from mimodet.constellation import bits_to_symbols, build_constellation
from mimodet.detectors import DetectorConfig


@pytest.fixture(scope="module")
def toy():
    return make_toy_code()


@pytest.fixture(scope="module")
def regular_small():
    # small regular (3,6) code keeps the module tests fast
    return make_regular_code(length=128, seed=2)


class TestCodeConstruction:
    def test_toy_dimensions(self, toy):
        assert toy.length == 6
        assert toy.rank == 3
        assert toy.info_length == 3
        assert toy.rate == pytest.approx(0.5)

    def test_generator_orthogonal_to_checks(self, toy):
        g = toy.generator
        assert g.shape == (3, 6)
        assert not ((g @ toy.parity_check.T) % 2).any()

    def test_regular_degrees(self, regular_small):
        h = regular_small.parity_check
        np.testing.assert_array_equal(h.sum(axis=0), 3)
        np.testing.assert_array_equal(h.sum(axis=1), 6)

    def test_regular_rate_half(self, regular_small):
        assert regular_small.rate == pytest.approx(0.5, abs=0.02)

    def test_regular_generator_orthogonality(self, regular_small):
        g = regular_small.generator
        assert not ((g @ regular_small.parity_check.T) % 2).any()

    def test_construction_deterministic(self):
        h1 = make_regular_code(length=64, seed=5).parity_check
        h2 = make_regular_code(length=64, seed=5).parity_check
        np.testing.assert_array_equal(h1, h2)

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            LdpcCode(np.array([[0, 2], [1, 0]]))


class TestEncode:
    def test_all_zero_info(self, toy):
        np.testing.assert_array_equal(ldpc_encode(np.zeros(3, dtype=np.uint8),
                                                  toy), np.zeros(6))

    def test_every_toy_word_satisfies_checks(self, toy):
        for word in range(8):
            info = np.array([(word >> i) & 1 for i in range(3)],
                            dtype=np.uint8)
            cw = ldpc_encode(info, toy)
            assert not toy.syndrome(cw).any()
            np.testing.assert_array_equal(toy.info_bits_of(cw), info)

    def test_random_words_regular_code(self, regular_small):
        rng = np.random.default_rng(0)
        for _ in range(20):
            info = rng.integers(0, 2, regular_small.info_length,
                                dtype=np.uint8)
            cw = ldpc_encode(info, regular_small)
            assert not regular_small.syndrome(cw).any()

    def test_length_mismatch(self, toy):
        with pytest.raises(ValueError):
            ldpc_encode(np.zeros(4, dtype=np.uint8), toy)

    def test_linearity(self, regular_small):
        rng = np.random.default_rng(1)
        a = rng.integers(0, 2, regular_small.info_length, dtype=np.uint8)
        b = rng.integers(0, 2, regular_small.info_length, dtype=np.uint8)
        cw_sum = (ldpc_encode(a, regular_small)
                  ^ ldpc_encode(b, regular_small))
        np.testing.assert_array_equal(cw_sum,
                                      ldpc_encode(a ^ b, regular_small))


class TestDecode:
    def test_noiseless_codeword_fixed_point(self, toy):
        cw = ldpc_encode(np.array([1, 0, 1], dtype=np.uint8), toy)
        llr = np.where(cw == 1, 7.0, -7.0)
        res = ldpc_decode(llr, toy)
        assert res.converged
        assert res.iterations <= 1
        np.testing.assert_array_equal(res.bits, cw)
        np.testing.assert_array_equal(np.sign(res.llr), np.sign(llr))

    def test_single_flip_corrected_exhaustively(self, toy):
        for word in range(8):
            info = np.array([(word >> i) & 1 for i in range(3)],
                            dtype=np.uint8)
            cw = ldpc_encode(info, toy)
            for flip in range(6):
                llr = np.where(cw == 1, 6.0, -6.0)
                llr[flip] = -0.5 * llr[flip]
                res = ldpc_decode(llr, toy, max_iter=10)
                np.testing.assert_array_equal(res.bits, cw)

    def test_all_zero_llr_not_converged(self, toy):
        res = ldpc_decode(np.zeros(6), toy, max_iter=5)
        assert not res.converged
        np.testing.assert_array_equal(res.bits, np.zeros(6))

    def test_llr_negation_flips_bits(self, regular_small):
        rng = np.random.default_rng(2)
        llr = rng.standard_normal(regular_small.length) * 3
        r1 = ldpc_decode(llr, regular_small, max_iter=3)
        r2 = ldpc_decode(-llr, regular_small, max_iter=3)
        np.testing.assert_array_equal(r1.bits, 1 - r2.bits)

    def test_decoder_fixed_points_are_codewords(self, regular_small):
        rng = np.random.default_rng(3)
        info = rng.integers(0, 2, regular_small.info_length, dtype=np.uint8)
        cw = ldpc_encode(info, regular_small)
        noisy = np.where(cw == 1, 4.0, -4.0) \
            + rng.standard_normal(regular_small.length)
        res = ldpc_decode(noisy, regular_small, max_iter=50)
        if res.converged:
            assert not regular_small.syndrome(res.bits).any()

    @pytest.mark.slow
    def test_gaussian_channel_correction(self, regular_small):
        # BPSK over AWGN at an SNR with a few percent raw errors
        rng = np.random.default_rng(4)
        sigma = 0.72
        n_words, errors, raw = 200, 0, 0
        for _ in range(n_words):
            info = rng.integers(0, 2, regular_small.info_length,
                                dtype=np.uint8)
            cw = ldpc_encode(info, regular_small)
            x = 1.0 - 2.0 * cw.astype(float)
            y = x + sigma * rng.standard_normal(cw.size)
            raw += np.sum((y < 0) != cw)
            llr = -2.0 * y / sigma ** 2  # positive favors bit 1
            res = ldpc_decode(llr, regular_small, max_iter=30)
            errors += np.sum(res.bits[regular_small._free_cols]
                             != info)
        assert raw / (n_words * 128) > 0.01
        assert errors / (n_words * regular_small.info_length) < 0.005


class TestParityCheckIo:
    def test_round_trip(self, toy, tmp_path):
        path = tmp_path / "toy.pc"
        save_parity_check(path, toy)
        loaded = load_parity_check(path)
        np.testing.assert_array_equal(loaded.parity_check, toy.parity_check)

    def test_format_is_sparse_rows(self, toy, tmp_path):
        path = tmp_path / "toy.pc"
        save_parity_check(path, toy)
        first = path.read_text().splitlines()[0]
        assert first == "0: 0 1 3"

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.pc"
        path.write_text("# nothing\n")
        with pytest.raises(ValueError):
            load_parity_check(path)


def coded_transmission(rng, code, c, n=4, snr_db=11.0):
    spec = ComplexSystemSpec(n_tx=n, n_rx=n, snr_db=snr_db)
    bits_per_use = 2 * n * c.bits_per_dim
    info = rng.integers(0, 2, code.info_length, dtype=np.uint8)
    cw = ldpc_encode(info, code)
    h = real_channel(generate_channel(spec, rng))
    systems = []
    for use in range(code.length // bits_per_use):
        seg = cw[use * bits_per_use:(use + 1) * bits_per_use]
        u = bits_to_symbols(seg, c)
        y = transmit(h, u, spec.noise_var, rng)
        systems.append(RealLinearSystem(y=y, h=h, noise_var=spec.noise_var,
                                        u_true=u))
    return systems, info, cw


class TestRunIdd:
    def test_trace_length_and_early_exit(self, regular_small):
        # good SNR: pass 0 decodes, remaining iterations pad the trace
        rng = np.random.default_rng(5)
        c = build_constellation(4, 0.5)
        systems, info, _ = coded_transmission(rng, regular_small, c,
                                              snr_db=14.0)
        state = run_idd(systems, c, regular_small, DetectorConfig(seed=0),
                        max_outer=3, true_info_bits=info)
        assert len(state.ber_trace) == 4
        assert state.converged
        assert state.detector_passes == 1
        assert state.ber_trace[0] == 0.0
        assert state.iteration == 0

    def test_max_outer_zero_is_initial_only(self, regular_small):
        rng = np.random.default_rng(6)
        c = build_constellation(4, 0.5)
        systems, info, _ = coded_transmission(rng, regular_small, c,
                                              snr_db=9.0)
        state = run_idd(systems, c, regular_small, DetectorConfig(seed=1),
                        max_outer=0, true_info_bits=info)
        assert len(state.ber_trace) == 1
        assert state.detector_passes == 1

    def test_length_compatibility_enforced(self, toy):
        rng = np.random.default_rng(7)
        c = build_constellation(4, 0.5)
        spec = ComplexSystemSpec(n_tx=4, n_rx=4)
        h = real_channel(generate_channel(spec, rng))
        sys = RealLinearSystem(y=np.zeros(8), h=h, noise_var=0.1)
        with pytest.raises(ValueError):
            run_idd([sys], c, toy, DetectorConfig(), max_outer=1)

    def test_trace_without_truth_is_none(self, regular_small):
        rng = np.random.default_rng(8)
        c = build_constellation(4, 0.5)
        systems, _, _ = coded_transmission(rng, regular_small, c,
                                           snr_db=14.0)
        state = run_idd(systems, c, regular_small, DetectorConfig(seed=2),
                        max_outer=1)
        assert state.ber_trace[0] is None

    def test_phase_modes(self, regular_small, monkeypatch):
        # pass 0 must run the uniform-weight/posterior-mean mode, feedback
        # passes the weighted/augmented one
        import mimodet.coding as coding_mod

        seen = []
        real = coding_mod.detect_hmc_batch

        def recording(systems, c, cfg, mode, llr=None):
            seen.append((mode, llr is not None))
            return real(systems, c, cfg, mode, llr)

        monkeypatch.setattr(coding_mod, "detect_hmc_batch", recording)
        rng = np.random.default_rng(9)
        c = build_constellation(4, 0.5)
        systems, info, _ = coded_transmission(rng, regular_small, c,
                                              snr_db=5.0)
        run_idd(systems, c, regular_small, DetectorConfig(seed=3),
                max_outer=2, true_info_bits=info)
        assert seen[0] == ("coded_initial", False)
        for mode, fed in seen[1:]:
            assert mode == "coded_subsequent" and fed
