"""Small dense linear-algebra kernels shared by the detectors and diagnostics.

Matrices are plain ``numpy.ndarray`` (row-major float64). The largest
singular value is computed by power iteration so that the full SVD from
``numpy`` stays available as an independent cross-check; symmetric solves
and the small eigenproblems delegate to LAPACK.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve


def max_singular_value(a, tol=1e-12, max_iter=10_000):
    """Largest singular value of ``a`` via power iteration on ``a.T @ a``.

    Converges to a relative accuracy much tighter than the 1e-8 contract on
    any nonzero matrix; raises ``ValueError`` on an all-zero input.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    if not np.any(a):
        raise ValueError("max_singular_value is undefined for a zero matrix")
    # Iterate on the Gram matrix of the thinner side.
    g = a.T @ a if a.shape[1] <= a.shape[0] else a @ a.T
    rng = np.random.default_rng(0)
    v = rng.standard_normal(g.shape[0])
    v /= np.linalg.norm(v)
    sigma_sq = 0.0
    for _ in range(max_iter):
        w = g @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # Started in the null space; reseed deterministically.
            v = rng.standard_normal(g.shape[0])
            v /= np.linalg.norm(v)
            continue
        v_new = w / norm
        sigma_sq_new = float(v_new @ (g @ v_new))
        if abs(sigma_sq_new - sigma_sq) <= tol * sigma_sq_new:
            sigma_sq = sigma_sq_new
            break
        sigma_sq = sigma_sq_new
        v = v_new
    return float(np.sqrt(sigma_sq))


def solve_spd(a, b):
    """Solve ``a @ x = b`` for symmetric positive definite ``a`` (Cholesky).

    Raises ``numpy.linalg.LinAlgError`` when a pivot fails (non-PD input).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    try:
        c, low = cho_factor(a, check_finite=False)
    except np.linalg.LinAlgError:
        raise
    except Exception as exc:  # scipy raises its own LinAlgError subclass
        raise np.linalg.LinAlgError(str(exc)) from exc
    return cho_solve((c, low), b, check_finite=False)


def eigen_moduli(a, k=None):
    """Moduli of the eigenvalues of a small square matrix, sorted descending.

    ``k`` limits how many moduli are returned (all when omitted).
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    mods = np.sort(np.abs(np.linalg.eigvals(a)))[::-1]
    if k is not None:
        mods = mods[:k]
    return mods
