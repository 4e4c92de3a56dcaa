"""Dense linear-algebra kernels.

Thin, checked wrappers around LAPACK that fix the conventions the rest of the
package relies on: LQ factors with a nonnegative diagonal, economy SVDs that
return ``V`` rather than ``V^T``, and a streaming LQ that only ever keeps the
triangular factor in memory.
"""

from __future__ import annotations

from typing import Iterable, NamedTuple

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import DefinitenessError, InputError

DEFAULT_PINV_TOL = 1e-12


class LqResult(NamedTuple):
    """Economy LQ factorization ``M = L @ Q``.

    Attributes
    ----------
    L : ndarray
        Lower-triangular (trapezoidal when ``M`` is tall) factor with a
        nonnegative diagonal.
    Q : ndarray or None
        Factor with orthonormal rows, ``None`` when it was not requested.
    """

    L: np.ndarray
    Q: np.ndarray | None = None


class SvdResult(NamedTuple):
    """Economy SVD ``M = U @ diag(S) @ V.T`` with ``S`` nonincreasing."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


def as_finite(M, name: str = "matrix") -> np.ndarray:
    """Return ``M`` as a 2-D float64 array, rejecting NaN and Inf."""
    A = np.asarray(M, dtype=np.float64)
    if A.ndim != 2:
        raise InputError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.isfinite(A).all():
        raise InputError(f"{name} contains non-finite entries")
    return A


def _fix_signs(L: np.ndarray, Q: np.ndarray | None = None) -> None:
    # Flip column j of L (and row j of Q) so that L[j, j] >= 0.
    r = min(L.shape)
    s = np.sign(np.diagonal(L)[:r])
    s[s == 0] = 1.0
    L[:, :r] *= s
    if Q is not None:
        Q[:r] *= s[:, None]


def lq(M, keep_q: bool = True, panel: int | None = None) -> LqResult:
    """Economy LQ factorization computed as a QR of ``M.T``.

    Parameters
    ----------
    M : array_like, shape (r, c)
    keep_q : bool
        Return the orthonormal factor as well. When false only ``L`` is
        formed, which is what the projection steps need.
    panel : int, optional
        When given (and ``keep_q`` is false), ``M`` is consumed in column
        panels of this width by :func:`sequential_lq`, so the working set
        stays at ``r * (r + panel)`` words.

    Returns
    -------
    LqResult
        ``L`` is ``r x r`` when ``r <= c`` and ``r x c`` otherwise.
    """
    A = as_finite(M, "lq input")
    r, c = A.shape
    if panel is not None and not keep_q and r <= c:
        if panel < 1:
            raise InputError("panel width must be positive")
        return LqResult(sequential_lq((A[:, j:j + panel] for j in range(0, c, panel)), r))
    if r == 0 or c == 0:
        L = np.zeros((r, min(r, c)))
        return LqResult(L, np.zeros((min(r, c), c)) if keep_q else None)
    if keep_q:
        Qt, R = sla.qr(A.T, mode="economic", check_finite=False)
        L, Q = np.ascontiguousarray(R.T), np.ascontiguousarray(Qt.T)
    else:
        R = sla.qr(A.T, mode="r", check_finite=False)[0]
        L, Q = np.ascontiguousarray(np.triu(R[: min(r, c)]).T), None
    _fix_signs(L, Q)
    return LqResult(L, Q)


def sequential_lq(blocks: Iterable[np.ndarray], rows: int, counter=None) -> np.ndarray:
    """Lower factor ``L`` of ``[B_1, B_2, ...]`` from a stream of column blocks.

    Each block is folded into the running triangular factor with a
    triangular-pentagonal QR (LAPACK ``tpqrt``), so only ``rows x rows``
    words persist between blocks. The result equals ``lq(hstack(blocks)).L``
    up to rounding, provided the total width is at least ``rows``.

    Parameters
    ----------
    blocks : iterable of ndarray, each of shape (rows, w_i)
    rows : int
    counter : IOCounter, optional
        Charged with the words of every block and of the running factor.
    """
    R = np.zeros((rows, rows), order="F")
    nb = max(1, min(64, rows))
    for B in blocks:
        B = as_finite(B, "block")
        if B.shape[0] != rows:
            raise InputError(f"block has {B.shape[0]} rows, expected {rows}")
        if B.shape[1] == 0:
            continue
        if counter is not None:
            counter.read(B.size + rows * rows)
            counter.write(rows * rows)
        out = lapack.dtpqrt(0, nb, R, np.asfortranarray(B.T), overwrite_a=True, overwrite_b=True)
        if out[-1] != 0:
            raise InputError(f"tpqrt failed with info={out[-1]}")
        R = out[0]
    L = np.ascontiguousarray(np.triu(R).T)
    _fix_signs(L)
    return L


def svd_econ(M) -> SvdResult:
    """Economy SVD with ``min(r, c)`` singular triples.

    Uses the divide-and-conquer driver and falls back to ``gesvd`` on the
    rare inputs where it fails to converge.
    """
    A = as_finite(M, "svd input")
    r, c = A.shape
    if r == 0 or c == 0:
        k = min(r, c)
        return SvdResult(np.zeros((r, k)), np.zeros(k), np.zeros((c, k)))
    try:
        U, S, Vt = sla.svd(A, full_matrices=False, check_finite=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        U, S, Vt = sla.svd(A, full_matrices=False, check_finite=False, lapack_driver="gesvd")
    return SvdResult(U, S, Vt.T)


def pinv(M, rel_tol: float = DEFAULT_PINV_TOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse, dropping ``sigma < rel_tol * sigma_max``."""
    if not 0.0 < rel_tol < 1.0:
        raise InputError("rel_tol must lie in (0, 1)")
    U, S, V = svd_econ(M)
    if S.size == 0 or S[0] == 0.0:
        return np.zeros((V.shape[0], U.shape[0]))
    keep = S >= rel_tol * S[0]
    return (V[:, keep] / S[keep]) @ U[:, keep].T


def cholesky_lower(M) -> np.ndarray:
    """Lower Cholesky factor of the symmetric part of ``M``.

    Raises
    ------
    DefinitenessError
        With ``pivot`` set to the 1-based order of the first leading minor
        that is not positive.
    """
    A = as_finite(M, "cholesky input")
    if A.shape[0] != A.shape[1]:
        raise InputError(f"cholesky input must be square, got {A.shape}")
    A = 0.5 * (A + A.T)
    G, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise DefinitenessError(
            f"matrix is not positive definite (leading minor {info})", pivot=int(info)
        )
    if info < 0:
        raise InputError(f"potrf rejected argument {-info}")
    return G


def numerical_rank(S, rel_tol: float = 1e-8) -> int:
    """Number of singular values with ``sigma_i >= rel_tol * sigma_1``."""
    S = np.asarray(S, dtype=float)
    if S.size == 0 or S[0] <= 0.0:
        return 0
    return int(np.count_nonzero(S >= rel_tol * S[0]))


def right_solve_lower(X, L) -> np.ndarray:
    """Return ``X @ inv(L)`` for lower-triangular ``L`` without forming the inverse."""
    return sla.solve_triangular(L, np.asarray(X).T, trans="T", lower=True, check_finite=False).T


def condition_number(S) -> float:
    """Ratio of extreme singular values, ``inf`` for a singular matrix."""
    S = np.asarray(S)
    if S.size == 0:
        return 1.0
    return float(S[0] / S[-1]) if S[-1] > 0 else float("inf")
