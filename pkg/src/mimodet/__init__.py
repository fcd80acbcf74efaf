"""Bayesian MIMO signal detection by gradient-based MCMC.

The package turns hard-decision MIMO detection into sampling from a
continuous posterior: a Student-t mixture relaxes the discrete symbol
prior, a no-U-turn Hamiltonian sampler explores it, and point estimates
come from either the highest-likelihood quantized draw or the marginal
posterior mean. A coded pipeline feeds LDPC decoder output back into the
prior weights and widens the likelihood with half-Cauchy noise-scale
coefficients. Classical MMSE, Gibbs-sampling and expectation-propagation
detectors, chain diagnostics, and a reproducible BER benchmark harness
round out the toolbox.
"""

from .channel import ComplexSystemSpec, RealLinearSystem, \
    effective_noise_variance, generate_channel, real_channel, to_real, \
    transmit
from .constellation import Constellation, build_constellation, \
    bits_to_symbols, llr_to_weights, quantize, soft_symbol_to_bit_llr, \
    symbols_to_bits, weights_from_llr_matrix
from .model import AugmentedState, NonFiniteLogDensity, PosteriorModel, \
    PriorConfig, TUNED_PRIOR_PARAMS, log_likelihood, log_prior_half_cauchy, \
    log_prior_mixture_t, log_prior_ridge, log_posterior_and_grad, \
    ridge_variance_from_svd
from .hmc import ChainSamples, DualAveraging, HmcConfig, \
    dual_averaging_adapt, hmc_step, leapfrog, nuts_step, run_chains, \
    run_chains_batch
from .detectors import DetectionResult, DetectorConfig, detect_ep, \
    detect_hmc, detect_hmc_batch, detect_mgs, detect_mmse, \
    joint_posterior_select, marginal_posterior_mean
from .diagnostics import DiagnosticsReport, autocorrelation, \
    convergence_rate, diagnose, ess, r_hat, responsibilities, soft_ser, \
    transition_matrix
from .coding import DecodeResult, IddState, LdpcCode, ldpc_decode, \
    ldpc_encode, load_parity_check, make_regular_code, make_toy_code, \
    run_idd, save_parity_check
from .harness import CellResult, ConfigError, ExperimentConfig, TrialResult, \
    complexity_benchmark, emit_csv, emit_json, loglog_slope, read_csv, \
    read_sample_dump, resolve_code, run_experiment, siso_awgn_ber, \
    snr_at_ber, write_sample_dump
from .linalg import eigen_moduli, max_singular_value, solve_spd
from .cli import cli_main

__version__ = "0.1.0"
