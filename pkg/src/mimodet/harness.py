"""Experiment harness: seeded trial loops, SNR sweeps, aggregation, CSV/JSON.

Every trial derives its random stream from ``(master_seed, purpose, snr
index, trial index)`` so results are byte-reproducible no matter how trials
are grouped or batched; channel and payload draws are shared across
detectors within a trial so detector comparisons are paired.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import coding
from .channel import ComplexSystemSpec, RealLinearSystem, generate_channel, \
    real_channel, transmit
from .constellation import bits_to_symbols, build_constellation, quantize, \
    symbols_to_bits
from .detectors import DetectorConfig, detect_ep, detect_hmc_batch, \
    detect_mgs, detect_mmse
from .diagnostics import diagnose
from .hmc import ChainSamples, HmcConfig
from .model import PriorConfig

MODULATION_ORDERS = {"qpsk": 4, "16qam": 16, "64qam": 64}
KNOWN_DETECTORS = ("mmse", "mgs", "ep", "hmc")

CSV_HEADER = ("snr_db,detector,modulation,n_tx,n_rx,rho,coded,iteration,"
              "trials,bit_errors,total_bits,ber,ess,r_hat,conv_rate,seconds")


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the culprit."""

    def __init__(self, field_name, message):
        self.field = field_name
        super().__init__(f"config field '{field_name}': {message}")


@dataclass
class ExperimentConfig:
    modulation: str = "qpsk"
    n_tx: int = 4
    n_rx: int = 4
    rho: float = 0.0
    snr_grid_db: tuple = (10.0,)
    detectors: tuple = ("mmse",)
    trials: int = 100
    coded: bool = False
    code: object = None          # LdpcCode, named code, or parity-check path
    max_outer: int = 5
    master_seed: int = 0
    out_path: str | None = None
    avg_tx_power: float = 0.5
    t_scale: float | None = None
    t_dof: float | None = None
    cauchy_scale: float | None = None
    ridge_gain: float | None = None
    timing: bool = True
    collect_diagnostics: bool = True
    batch_trials: int | None = None
    fresh_channel_per_use: bool = False
    decoder_iterations: int = 5

    def validate(self):
        if self.modulation not in MODULATION_ORDERS:
            raise ConfigError("modulation",
                              f"unknown modulation {self.modulation!r}")
        if self.n_tx < 1 or self.n_rx < 1:
            raise ConfigError("n_tx/n_rx", "antenna counts must be positive")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError("rho", "must lie in [0, 1)")
        if len(self.snr_grid_db) == 0:
            raise ConfigError("snr_grid_db", "SNR grid must be non-empty")
        if self.trials < 1:
            raise ConfigError("trials", "must be at least 1")
        if len(self.detectors) == 0:
            raise ConfigError("detectors", "detector list must be non-empty")
        for det in self.detectors:
            if det not in KNOWN_DETECTORS:
                raise ConfigError("detectors", f"unknown detector {det!r}")
        if self.coded:
            if any(det != "hmc" for det in self.detectors):
                raise ConfigError("detectors",
                                  "coded mode supports only the 'hmc' detector")
            if self.code is None:
                raise ConfigError(
                    "code", "coded mode needs a code: pass an LdpcCode, a "
                    "named code ('toy6', 'regular1024') or a parity-check "
                    "file path")
            if self.max_outer < 0:
                raise ConfigError("max_outer", "must be nonnegative")


@dataclass
class TrialResult:
    snr_db: float
    detector: str
    iteration: int
    bit_errors: int
    total_bits: int
    symbol_errors: int
    wall_time: float
    diagnostics: dict | None = None


@dataclass
class CellResult:
    """One aggregate row of the result table."""

    snr_db: float
    detector: str
    modulation: str
    n_tx: int
    n_rx: int
    rho: float
    coded: bool
    iteration: int
    trials: int
    bit_errors: int
    total_bits: int
    ess: float | None = None
    r_hat: float | None = None
    conv_rate: float | None = None
    seconds: float = 0.0

    @property
    def ber(self):
        """None for error-free cells (excluded from BER reporting)."""
        if self.bit_errors == 0:
            return None
        return self.bit_errors / self.total_bits


def resolve_code(code_spec):
    """Turn a code selector into an LdpcCode (instance, name, or path)."""
    if isinstance(code_spec, coding.LdpcCode):
        return code_spec
    if code_spec == "toy6":
        return coding.make_toy_code()
    if code_spec == "regular1024":
        return coding.make_regular_code(1024, seed=1)
    if isinstance(code_spec, str):
        return coding.load_parity_check(code_spec)
    raise ConfigError("code", f"cannot resolve code selector {code_spec!r}")


# ---------------------------------------------------------------------------
# Deterministic per-trial randomness
# ---------------------------------------------------------------------------

def _rng_at(master_seed, *path):
    return np.random.default_rng(
        np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(path)))


def _seed_at(master_seed, *path):
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(path))
    return int(ss.generate_state(1)[0])


def _draw_uncoded_instance(cfg, c, spec, snr_idx, trial_idx):
    rng = _rng_at(cfg.master_seed, 0, snr_idx, trial_idx)
    h_c = generate_channel(spec, rng)
    h = real_channel(h_c)
    bits = rng.integers(0, 2, size=2 * cfg.n_tx * c.bits_per_dim,
                        dtype=np.uint8)
    u = bits_to_symbols(bits, c)
    y = transmit(h, u, spec.noise_var, rng)
    return RealLinearSystem(y=y, h=h, noise_var=spec.noise_var, u_true=u), bits


def _count_errors(u_hard, bits_true, u_true, c):
    bits_hat = symbols_to_bits(u_hard, c)
    bit_errors = int(np.sum(bits_hat != bits_true))
    sym_errors = int(np.sum(quantize(u_hard, c)[0] != quantize(u_true, c)[0]))
    return bit_errors, sym_errors


def _detector_config(cfg, det, seed):
    return DetectorConfig(kind=det, seed=seed, t_scale=cfg.t_scale,
                          t_dof=cfg.t_dof, cauchy_scale=cfg.cauchy_scale,
                          ridge_gain=cfg.ridge_gain)


def _auto_batch(n_dims, n_chains, state_dim, requested):
    if requested is not None:
        return max(1, requested)
    return int(np.clip(3e5 // max(n_chains * state_dim, 1), 1, 512))


# ---------------------------------------------------------------------------
# Cell runners
# ---------------------------------------------------------------------------

def _run_uncoded_cell(cfg, c, spec, det, snr_idx, det_idx):
    n_bits = 2 * cfg.n_tx * c.bits_per_dim
    trials = []

    if det == "hmc":
        d = 2 * cfg.n_tx
        hmc_cfg0 = HmcConfig.for_dims(d)
        batch = _auto_batch(d, hmc_cfg0.n_chains, d, cfg.batch_trials)
        overrides = {}
        if cfg.t_scale is not None:
            overrides["t_scale"] = cfg.t_scale
        if cfg.t_dof is not None:
            overrides["t_dof"] = cfg.t_dof
        diag_prior = PriorConfig.for_order(c.order, **overrides)
        for start in range(0, cfg.trials, batch):
            idxs = range(start, min(start + batch, cfg.trials))
            drawn = [_draw_uncoded_instance(cfg, c, spec, snr_idx, t)
                     for t in idxs]
            systems = [s for s, _ in drawn]
            det_cfg = _detector_config(
                cfg, det, _seed_at(cfg.master_seed, 1, snr_idx, det_idx, start))
            t0 = time.perf_counter()
            results = detect_hmc_batch(systems, c, det_cfg, "uncoded")
            per_trial_time = (time.perf_counter() - t0) / len(systems)
            for (sys, bits), res in zip(drawn, results):
                be, se = _count_errors(res.u_hard, bits, sys.u_true, c)
                rep = diagnose(res.samples, c, diag_prior) \
                    if cfg.collect_diagnostics else None
                trials.append(TrialResult(
                    snr_db=spec.snr_db, detector=det, iteration=0,
                    bit_errors=be, total_bits=n_bits, symbol_errors=se,
                    wall_time=per_trial_time,
                    diagnostics=rep.as_dict() if rep else None))
    else:
        for t in range(cfg.trials):
            sys, bits = _draw_uncoded_instance(cfg, c, spec, snr_idx, t)
            det_cfg = _detector_config(
                cfg, det, _seed_at(cfg.master_seed, 1, snr_idx, det_idx, t))
            t0 = time.perf_counter()
            if det == "mmse":
                res = detect_mmse(sys, cfg.avg_tx_power, c)
            elif det == "ep":
                res = detect_ep(sys, c, det_cfg)
            elif det == "mgs":
                res = detect_mgs(sys, c, det_cfg)
            else:
                raise ConfigError("detectors", f"unknown detector {det!r}")
            wall = time.perf_counter() - t0
            be, se = _count_errors(res.u_hard, bits, sys.u_true, c)
            trials.append(TrialResult(
                snr_db=spec.snr_db, detector=det, iteration=0,
                bit_errors=be, total_bits=n_bits, symbol_errors=se,
                wall_time=wall, diagnostics=None))

    def _diag_mean(key):
        vals = [t.diagnostics[key] for t in trials
                if t.diagnostics is not None and t.diagnostics[key] is not None]
        return float(np.mean(vals)) if vals else None

    return CellResult(
        snr_db=spec.snr_db, detector=det, modulation=cfg.modulation,
        n_tx=cfg.n_tx, n_rx=cfg.n_rx, rho=cfg.rho, coded=False, iteration=0,
        trials=cfg.trials,
        bit_errors=sum(t.bit_errors for t in trials),
        total_bits=sum(t.total_bits for t in trials),
        ess=_diag_mean("ess_per_chain"), r_hat=_diag_mean("r_hat"),
        conv_rate=_diag_mean("conv_rate"),
        seconds=sum(t.wall_time for t in trials))


def _draw_coded_instance(cfg, c, spec, code, snr_idx, trial_idx):
    rng = _rng_at(cfg.master_seed, 0, snr_idx, trial_idx)
    bits_per_use = 2 * cfg.n_tx * c.bits_per_dim
    n_uses = code.length // bits_per_use
    info = rng.integers(0, 2, size=code.info_length, dtype=np.uint8)
    cw = coding.ldpc_encode(info, code)
    systems = []
    h = real_channel(generate_channel(spec, rng))
    for use in range(n_uses):
        if cfg.fresh_channel_per_use and use > 0:
            h = real_channel(generate_channel(spec, rng))
        seg = cw[use * bits_per_use:(use + 1) * bits_per_use]
        u = bits_to_symbols(seg, c)
        y = transmit(h, u, spec.noise_var, rng)
        systems.append(RealLinearSystem(y=y, h=h, noise_var=spec.noise_var,
                                        u_true=u))
    return systems, info, cw


def _run_coded_cell(cfg, c, spec, code, snr_idx, det_idx):
    bits_per_use = 2 * cfg.n_tx * c.bits_per_dim
    if code.length % bits_per_use != 0:
        raise ConfigError(
            "code", f"code length {code.length} is not a multiple of "
            f"{bits_per_use} bits per channel use")
    iter_errors = np.zeros(cfg.max_outer + 1, dtype=int)
    seconds = 0.0
    for t in range(cfg.trials):
        systems, info, _ = _draw_coded_instance(cfg, c, spec, code,
                                                snr_idx, t)
        det_cfg = _detector_config(
            cfg, "hmc", _seed_at(cfg.master_seed, 1, snr_idx, det_idx, t))
        t0 = time.perf_counter()
        state = coding.run_idd(systems, c, code, det_cfg,
                               max_outer=cfg.max_outer, true_info_bits=info,
                               decoder_iterations=cfg.decoder_iterations)
        seconds += time.perf_counter() - t0
        for it, ber in enumerate(state.ber_trace):
            iter_errors[it] += int(round(ber * code.info_length))
    rows = []
    for it in range(cfg.max_outer + 1):
        rows.append(CellResult(
            snr_db=spec.snr_db, detector="hmc", modulation=cfg.modulation,
            n_tx=cfg.n_tx, n_rx=cfg.n_rx, rho=cfg.rho, coded=True,
            iteration=it, trials=cfg.trials,
            bit_errors=int(iter_errors[it]),
            total_bits=cfg.trials * code.info_length,
            # the loop is one timed unit; its cost lands on the final row
            seconds=seconds if it == cfg.max_outer else 0.0))
    return rows


def run_experiment(cfg):
    """Run the configured sweep; returns the aggregate result rows.

    Rows are ordered by (SNR index, detector index, iteration) and the
    whole table is a pure function of the configuration and master seed.
    """
    cfg.validate()
    c = build_constellation(MODULATION_ORDERS[cfg.modulation],
                            cfg.avg_tx_power)
    code = resolve_code(cfg.code) if cfg.coded else None
    rows = []
    for snr_idx, snr_db in enumerate(cfg.snr_grid_db):
        spec = ComplexSystemSpec(n_tx=cfg.n_tx, n_rx=cfg.n_rx, rho=cfg.rho,
                                 snr_db=snr_db, avg_tx_power=cfg.avg_tx_power)
        for det_idx, det in enumerate(cfg.detectors):
            if cfg.coded:
                rows.extend(_run_coded_cell(cfg, c, spec, code,
                                            snr_idx, det_idx))
            else:
                rows.append(_run_uncoded_cell(cfg, c, spec, det,
                                              snr_idx, det_idx))
    return rows


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def _fmt(value):
    if value is None:
        return "NA"
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_csv(results, timing=True):
    if not results:
        raise ValueError("refusing to emit an empty result table")
    lines = [CSV_HEADER]
    for r in results:
        lines.append(",".join([
            _fmt(float(r.snr_db)), r.detector, r.modulation, _fmt(r.n_tx),
            _fmt(r.n_rx), _fmt(float(r.rho)), _fmt(r.coded), _fmt(r.iteration),
            _fmt(r.trials), _fmt(r.bit_errors), _fmt(r.total_bits),
            _fmt(r.ber),
            _fmt(None if r.ess is None else float(r.ess)),
            _fmt(None if r.r_hat is None else float(r.r_hat)),
            _fmt(None if r.conv_rate is None else float(r.conv_rate)),
            _fmt(float(r.seconds)) if timing else "NA",
        ]))
    return "\n".join(lines) + "\n"


def emit_csv(results, path, timing=True):
    """Write the aggregate table; refuses to create a file for no rows."""
    text = format_csv(results, timing=timing)
    with open(path, "w") as fh:
        fh.write(text)
    return path


def read_csv(path):
    """Parse a file written by :func:`emit_csv` back into row dicts."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    if lines[0] != CSV_HEADER:
        raise ValueError("unrecognized CSV header")
    rows = []
    for ln in lines[1:]:
        vals = ln.split(",")
        row = dict(zip(header, vals))
        for key in ("snr_db", "rho", "ber", "ess", "r_hat", "conv_rate",
                    "seconds"):
            row[key] = None if row[key] == "NA" else float(row[key])
        for key in ("n_tx", "n_rx", "iteration", "trials", "bit_errors",
                    "total_bits"):
            row[key] = int(row[key])
        row["coded"] = row["coded"] == "1"
        rows.append(row)
    return rows


def emit_json(results, path, timing=True):
    """JSON mirror of the CSV table."""
    if not results:
        raise ValueError("refusing to emit an empty result table")
    payload = []
    for r in results:
        payload.append({
            "snr_db": float(r.snr_db), "detector": r.detector,
            "modulation": r.modulation, "n_tx": r.n_tx, "n_rx": r.n_rx,
            "rho": float(r.rho), "coded": r.coded, "iteration": r.iteration,
            "trials": r.trials, "bit_errors": r.bit_errors,
            "total_bits": r.total_bits, "ber": r.ber, "ess": r.ess,
            "r_hat": r.r_hat, "conv_rate": r.conv_rate,
            "seconds": float(r.seconds) if timing else None,
        })
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
    return path


# ---------------------------------------------------------------------------
# Sample dumps for the diag subcommand
# ---------------------------------------------------------------------------

def write_sample_dump(path, samples):
    """Flat text dump: 4 header lines (chains, steps, dims, warmup) then
    one value per line in [chain][step][dim] order."""
    d = samples.draws
    with open(path, "w") as fh:
        fh.write(f"chains {d.shape[0]}\n")
        fh.write(f"steps {d.shape[1]}\n")
        fh.write(f"dims {d.shape[2]}\n")
        fh.write(f"warmup {samples.n_warmup}\n")
        for v in d.ravel():
            fh.write(repr(float(v)) + "\n")
    return path


def read_sample_dump(path):
    with open(path) as fh:
        header = {}
        for _ in range(4):
            key, val = fh.readline().split()
            header[key] = int(val)
        values = np.array([float(ln) for ln in fh if ln.strip()])
    shape = (header["chains"], header["steps"], header["dims"])
    if values.size != int(np.prod(shape)):
        raise ValueError(f"dump holds {values.size} values, "
                         f"expected {np.prod(shape)} for shape {shape}")
    draws = values.reshape(shape)
    return ChainSamples(
        draws=draws, n_warmup=header["warmup"], n_sym_dims=header["dims"],
        accept_rate=np.full(shape[0], np.nan),
        step_sizes=np.full(shape[0], np.nan),
        step_size_trace=np.zeros((0, shape[0])),
        divergences=np.zeros(shape[0], dtype=int),
        max_depth_hits=np.zeros(shape[0], dtype=int))


# ---------------------------------------------------------------------------
# Reference curves and complexity measurement
# ---------------------------------------------------------------------------

def siso_awgn_ber(snr_db, c, n_bits=200_000, seed=0):
    """Simulated single-antenna AWGN reference BER for the constellation."""
    rng = np.random.default_rng(seed)
    n_bits -= n_bits % (2 * c.bits_per_dim)
    bits = rng.integers(0, 2, size=n_bits, dtype=np.uint8)
    u = bits_to_symbols(bits, c)
    noise_var = c.avg_power / 10.0 ** (snr_db / 10.0)
    y = u + rng.standard_normal(u.shape) * np.sqrt(noise_var / 2.0)
    bits_hat = symbols_to_bits(y, c)
    return float(np.mean(bits_hat != bits))


def snr_at_ber(snr_grid, bers, target):
    """SNR where a monotone BER curve crosses ``target`` (log-linear
    interpolation); None if the curve never crosses it."""
    pts = [(s, b) for s, b in zip(snr_grid, bers) if b is not None and b > 0]
    for (s0, b0), (s1, b1) in zip(pts, pts[1:]):
        if (b0 - target) * (b1 - target) <= 0 and b0 != b1:
            f = (np.log10(b0) - np.log10(target)) \
                / (np.log10(b0) - np.log10(b1))
            return float(s0 + f * (s1 - s0))
    return None


def loglog_slope(xs, ys):
    """Least-squares slope of log(y) against log(x)."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])


def complexity_benchmark(sizes=(8, 16, 32, 64), trials_per_size=24,
                         modulation="qpsk", snr_db=10.0, seed=0,
                         repeats=1):
    """Wall time per detection versus problem size at a fixed chain budget.

    Uses the fixed-length leapfrog engine (10 steps per transition) with
    the same chain-count x chain-length budget at every size, so the cost
    model is dominated by the per-step gradient. Returns (dims, seconds
    per trial).
    """
    c = build_constellation(MODULATION_ORDERS[modulation], 0.5)
    times = []
    dims = []
    for n in sizes:
        spec = ComplexSystemSpec(n_tx=n, n_rx=n, snr_db=snr_db)
        drawn = [_draw_uncoded_instance(
            replace(ExperimentConfig(), n_tx=n, n_rx=n, master_seed=seed),
            c, spec, 0, t) for t in range(trials_per_size)]
        systems = [s for s, _ in drawn]
        hmc_cfg = HmcConfig(n_chains=8, steps_per_chain=128, warmup=16,
                            use_nuts=False, fixed_leapfrog_steps=10,
                            seed=seed)
        det_cfg = DetectorConfig(kind="hmc", hmc=hmc_cfg, seed=seed)
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            detect_hmc_batch(systems, c, det_cfg, "uncoded")
            best = min(best, time.perf_counter() - t0)
        dims.append(2 * n)
        times.append(best / trials_per_size)
    return np.array(dims), np.array(times)
