"""Linear block LDPC codes and the iterative detection-decoding loop.

Codes are defined by an arbitrary binary parity-check matrix; a systematic
encoder is derived from its reduced row echelon form over GF(2). Two
constructions ship by default: a 6-bit toy code small enough for
exhaustive checks, and a seeded progressive-edge-growth style regular
(3,6) rate-1/2 code. Decoding is standard sum-product message passing
with the tanh rule.

The detection-decoding controller alternates the sampler-based detector
with the decoder: the first pass runs with uniform symbol weights and the
posterior-mean estimator, later passes feed the decoder's a-posteriori
bit LLRs back into the symbol prior weights and switch to the
highest-likelihood estimator with the noise-scale augmented likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .constellation import soft_symbol_to_bit_llr
from .detectors import detect_hmc_batch
from .hmc import HmcConfig

# tanh arguments are clamped here; beyond ~19.06 tanh saturates to 1.0 in
# float64 and atanh would return inf.
TANH_CLAMP = 19.0


# ---------------------------------------------------------------------------
# Code construction
# ---------------------------------------------------------------------------

def _gf2_rref(h):
    """Reduced row echelon form over GF(2); returns (rref, pivot_cols)."""
    m = h.copy().astype(np.uint8)
    rows, cols = m.shape
    pivots = []
    row = 0
    for col in range(cols):
        if row >= rows:
            break
        support = np.nonzero(m[row:, col])[0]
        if support.size == 0:
            continue
        pivot = row + support[0]
        if pivot != row:
            m[[row, pivot]] = m[[pivot, row]]
        others = np.nonzero(m[:, col])[0]
        others = others[others != row]
        m[others] ^= m[row]
        pivots.append(col)
        row += 1
    return m[:row], np.array(pivots, dtype=int)


@dataclass
class LdpcCode:
    """Binary linear code given by its parity-check matrix.

    ``info_positions`` are the free columns of the RREF (the systematic
    information bits); ``encode`` fills the pivot positions so that every
    parity check is satisfied.
    """

    parity_check: np.ndarray
    _rref: np.ndarray = field(init=False, repr=False)
    _pivot_cols: np.ndarray = field(init=False, repr=False)
    _free_cols: np.ndarray = field(init=False, repr=False)
    _edges: tuple = field(init=False, repr=False)

    def __post_init__(self):
        h = np.asarray(self.parity_check)
        if h.ndim != 2 or not np.isin(h, (0, 1)).all():
            raise ValueError("parity_check must be a binary matrix")
        self.parity_check = h.astype(np.uint8)
        self._rref, self._pivot_cols = _gf2_rref(self.parity_check)
        mask = np.ones(self.length, dtype=bool)
        mask[self._pivot_cols] = False
        self._free_cols = np.nonzero(mask)[0]
        # flat edge lists, grouped by check row and by bit column
        chk, bit = np.nonzero(self.parity_check)
        by_check = np.lexsort((bit, chk))
        by_bit = np.lexsort((chk, bit))
        check_starts = np.searchsorted(chk[by_check],
                                       np.arange(self.n_checks))
        bit_starts = np.searchsorted(bit[by_bit], np.arange(self.length))
        self._edges = (chk, bit, by_check, by_bit, check_starts, bit_starts)

    @property
    def length(self):
        return self.parity_check.shape[1]

    @property
    def n_checks(self):
        return self.parity_check.shape[0]

    @property
    def rank(self):
        return self._rref.shape[0]

    @property
    def info_length(self):
        return self.length - self.rank

    @property
    def rate(self):
        return self.info_length / self.length

    @property
    def generator(self):
        """Systematic generator matrix (info_length x length), G H^T = 0."""
        g = np.zeros((self.info_length, self.length), dtype=np.uint8)
        for i, col in enumerate(self._free_cols):
            info = np.zeros(self.info_length, dtype=np.uint8)
            info[i] = 1
            g[i] = ldpc_encode(info, self)
        return g

    def syndrome(self, bits):
        return (self.parity_check @ np.asarray(bits, dtype=np.uint8)) % 2

    def info_bits_of(self, codeword):
        return np.asarray(codeword, dtype=np.uint8)[self._free_cols]


def ldpc_encode(info_bits, code):
    """Systematic encoding: info bits land on the free columns, the pivot
    columns are solved from the parity checks."""
    info = np.asarray(info_bits, dtype=np.uint8)
    if info.shape != (code.info_length,):
        raise ValueError(f"expected {code.info_length} information bits, "
                         f"got {info.shape}")
    cw = np.zeros(code.length, dtype=np.uint8)
    cw[code._free_cols] = info
    # RREF rows: pivot bit = XOR of the row's free-column bits
    parity = (code._rref[:, code._free_cols] @ info) % 2
    cw[code._pivot_cols] = parity
    return cw


@dataclass
class DecodeResult:
    llr: np.ndarray
    bits: np.ndarray
    converged: bool
    iterations: int


def ldpc_decode(llr_in, code, max_iter=5):
    """Sum-product decoding of per-bit LLRs (positive favors '1').

    Stops as soon as the hard decision satisfies every check; a zero LLR is
    an undecided bit (hard decision falls to '0' by the tie rule) and
    blocks the converged flag.
    """
    llr_in = np.asarray(llr_in, dtype=float)
    if llr_in.shape != (code.length,):
        raise ValueError(f"expected {code.length} LLRs, got {llr_in.shape}")
    chk, bit, by_check, by_bit, check_starts, bit_starts = code._edges
    n_edges = chk.size

    def hard(llr):
        return (llr > 0).astype(np.uint8)

    def settled(llr, bits):
        return not code.syndrome(bits).any() and bool(np.all(llr != 0.0))

    bits = hard(llr_in)
    if settled(llr_in, bits):
        return DecodeResult(llr=llr_in.copy(), bits=bits, converged=True,
                            iterations=0)

    # internal sign convention: L = ln p(0)/p(1), the textbook tanh rule
    ch = -llr_in
    v2c = ch[bit]                       # variable-to-check messages per edge
    c2v = np.zeros(n_edges)
    post = -llr_in
    for it in range(1, max_iter + 1):
        # check update: product of tanh(v2c/2) over the row, excluding self
        t = np.tanh(np.clip(0.5 * v2c[by_check], -TANH_CLAMP, TANH_CLAMP))
        zero = t == 0.0
        safe = np.where(zero, 1.0, t)
        prod = np.multiply.reduceat(safe, check_starts)
        zcount = np.add.reduceat(zero.astype(np.int64), check_starts)
        row_prod = prod[chk[by_check]]
        row_zeros = zcount[chk[by_check]]
        ext = np.where(
            row_zeros - zero > 0, 0.0,
            np.where(zero, row_prod, row_prod / safe))
        c2v_sorted = 2.0 * np.arctanh(
            np.clip(ext, -0.9999999999999998, 0.9999999999999998))
        c2v = np.empty(n_edges)
        c2v[by_check] = c2v_sorted

        # variable update: channel LLR plus incoming checks, excluding self
        sums = np.add.reduceat(c2v[by_bit], bit_starts)
        post = ch + sums
        v2c = post[bit] - c2v

        bits = hard(-post)
        if settled(-post, bits):
            return DecodeResult(llr=-post, bits=bits, converged=True,
                                iterations=it)
    return DecodeResult(llr=-post, bits=bits, converged=False,
                        iterations=max_iter)


# ---------------------------------------------------------------------------
# Shipped codes and the plain-text parity-check format
# ---------------------------------------------------------------------------

def make_toy_code():
    """(6,3) code small enough to enumerate all words exhaustively."""
    h = np.array([[1, 1, 0, 1, 0, 0],
                  [0, 1, 1, 0, 1, 0],
                  [1, 0, 1, 0, 0, 1]], dtype=np.uint8)
    return LdpcCode(h)


def make_regular_code(length=1024, col_weight=3, row_weight=6, seed=0):
    """Seeded progressive-edge-growth style regular LDPC construction.

    Edges are placed one variable at a time; each new edge goes to the
    check farthest from the variable in the current graph (ties broken by
    the lowest degree, then by a seeded shuffle), subject to the row-weight
    cap. Yields exact (col_weight, row_weight) regularity.
    """
    if (length * col_weight) % row_weight != 0:
        raise ValueError("length * col_weight must be divisible by row_weight")
    n_checks = length * col_weight // row_weight
    rng = np.random.default_rng(seed)
    var_adj = [[] for _ in range(length)]
    chk_adj = [[] for _ in range(n_checks)]
    chk_deg = np.zeros(n_checks, dtype=int)

    def check_distances(v):
        dist = np.full(n_checks, np.inf)
        seen_v = {v}
        frontier = list(var_adj[v])
        level = 0
        for ck in frontier:
            dist[ck] = level
        while frontier:
            level += 1
            nxt_vars = set()
            for ck in frontier:
                for v2 in chk_adj[ck]:
                    if v2 not in seen_v:
                        seen_v.add(v2)
                        nxt_vars.add(v2)
            frontier = []
            for v2 in nxt_vars:
                for ck in var_adj[v2]:
                    if np.isinf(dist[ck]):
                        dist[ck] = level
                        frontier.append(ck)
        return dist

    order = rng.permutation(length)
    for v in order:
        for _ in range(col_weight):
            dist = check_distances(v)
            open_slots = chk_deg < row_weight
            cand = open_slots & np.isinf(dist)
            if not cand.any():
                finite = np.where(open_slots)[0]
                far = dist[finite].max()
                cand = np.zeros(n_checks, dtype=bool)
                cand[finite[dist[finite] == far]] = True
            idx = np.nonzero(cand)[0]
            idx = idx[chk_deg[idx] == chk_deg[idx].min()]
            ck = int(rng.choice(idx))
            var_adj[v].append(ck)
            chk_adj[ck].append(v)
            chk_deg[ck] += 1

    h = np.zeros((n_checks, length), dtype=np.uint8)
    for ck, vs in enumerate(chk_adj):
        h[ck, vs] = 1
    return LdpcCode(h)


def save_parity_check(path, code):
    """Write the sparse text format: ``check_index: bit bit ...`` per row."""
    with open(path, "w") as fh:
        for i, row in enumerate(code.parity_check):
            cols = " ".join(str(c) for c in np.nonzero(row)[0])
            fh.write(f"{i}: {cols}\n")


def load_parity_check(path):
    """Read the sparse text format written by :func:`save_parity_check`."""
    entries = []
    max_check = -1
    max_bit = -1
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            head, _, tail = line.partition(":")
            check = int(head)
            bits = [int(tok) for tok in tail.split()]
            entries.append((check, bits))
            max_check = max(max_check, check)
            if bits:
                max_bit = max(max_bit, max(bits))
    if max_check < 0 or max_bit < 0:
        raise ValueError(f"no parity-check rows found in {path}")
    h = np.zeros((max_check + 1, max_bit + 1), dtype=np.uint8)
    for check, bits in entries:
        h[check, bits] = 1
    return LdpcCode(h)


# ---------------------------------------------------------------------------
# Iterative detection and decoding
# ---------------------------------------------------------------------------

@dataclass
class IddState:
    """Trace of one codeword's detection-decoding run.

    ``ber_trace`` has one entry per pass (initial pass plus ``max_outer``
    feedback passes); when the decoder converges early the remaining
    entries repeat the converged value and ``detector_passes`` records how
    many passes actually ran.
    """

    iteration: int
    current_llr: np.ndarray
    decoded_bits: np.ndarray
    ber_trace: list
    converged: bool
    detector_passes: int
    degraded: bool = False


def run_idd(systems, c, code, detector_cfg, max_outer=5,
            true_info_bits=None, decoder_iterations=5):
    """Iterative detection and decoding of one codeword.

    ``systems`` is the list of channel uses carrying the codeword
    (``len(systems) * n_dims * bits_per_dim == code.length``). Pass 0
    detects with uniform weights and the posterior-mean estimator; each
    subsequent pass converts the decoder's a-posteriori LLRs to symbol
    weights and re-detects with the augmented likelihood. Stops early once
    the decoder finds a valid codeword.
    """
    n_dims = systems[0].n_dims
    bits_per_use = n_dims * c.bits_per_dim
    if len(systems) * bits_per_use != code.length:
        raise ValueError(
            f"{len(systems)} channel uses of {bits_per_use} bits cannot "
            f"carry a length-{code.length} codeword")
    residual_var = systems[0].noise_var / 2.0

    # Feedback passes refine states already started in the decoder-informed
    # peaks, so their trajectories are kept short; the initial pass keeps
    # the full budget because the marginal-mean estimate needs mixing.
    sub_hmc = detector_cfg.hmc
    if sub_hmc is None:
        sub_hmc = HmcConfig.for_dims(n_dims, coded=True,
                                     seed=detector_cfg.seed,
                                     max_tree_depth=4)

    def detect_and_decode(mode, llr_feedback, pass_idx):
        pass_seed = int(np.random.SeedSequence(
            (detector_cfg.seed, pass_idx)).generate_state(1)[0])
        cfg_pass = replace(detector_cfg, seed=pass_seed)
        if mode == "coded_subsequent":
            cfg_pass = replace(cfg_pass, hmc=replace(sub_hmc, seed=pass_seed))
        results = detect_hmc_batch(systems, c, cfg_pass, mode, llr_feedback)
        chan_llr = np.concatenate([
            soft_symbol_to_bit_llr(res.u_soft, residual_var, c).ravel()
            for res in results])
        decode = ldpc_decode(chan_llr, code, max_iter=decoder_iterations)
        degraded = any(res.degraded for res in results)
        return decode, degraded

    ber_trace = []
    degraded = False

    decode, deg = detect_and_decode("coded_initial", None, 0)
    degraded |= deg
    info_hat = code.info_bits_of(decode.bits)
    if true_info_bits is not None:
        ber_trace.append(float(np.mean(info_hat != true_info_bits)))
    else:
        ber_trace.append(None)

    passes = 1
    iteration = 0
    for it in range(1, max_outer + 1):
        if decode.converged:
            ber_trace.append(ber_trace[-1])
            continue
        llr_per_use = decode.llr.reshape(len(systems), bits_per_use)
        decode, deg = detect_and_decode("coded_subsequent",
                                        list(llr_per_use), it)
        degraded |= deg
        passes += 1
        iteration = it
        info_hat = code.info_bits_of(decode.bits)
        if true_info_bits is not None:
            ber_trace.append(float(np.mean(info_hat != true_info_bits)))
        else:
            ber_trace.append(None)

    return IddState(
        iteration=iteration,
        current_llr=decode.llr,
        decoded_bits=decode.bits,
        ber_trace=ber_trace,
        converged=decode.converged,
        detector_passes=passes,
        degraded=degraded,
    )
