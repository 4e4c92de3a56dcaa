"""Model-quality metrics and IO counters."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .datamodel import TimeSeriesData
from .errors import DimensionError, UndefinedSubspaceError
from .matops import lq, svd_econ
from .statespace import StateSpaceModel


@dataclass
class IOCounter:
    """Word and message counts charged by the streaming kernels.

    One word is one float64 value moved between the data source and the
    working set. The counts are bookkeeping proxies, not hardware readings.
    """

    words_read: int = 0
    words_written: int = 0
    messages_read: int = 0
    messages_written: int = 0
    blocks_read: int = 0

    def read(self, words: int, messages: int = 1) -> None:
        self.words_read += int(words)
        self.messages_read += messages

    def write(self, words: int, messages: int = 1) -> None:
        self.words_written += int(words)
        self.messages_written += messages

    @property
    def words(self) -> int:
        return self.words_read + self.words_written


def dm_sdc(k: int, m: int, p: int, N: int, l: int, q: int, d: int) -> int:
    """Closed-form word count of the streaming compression.

    ``(q+2) 2k(m+p) N + l N`` words read plus ``4k^2(m+p)^2 + 2kl(m+p)``
    written, plus one message per read and per write ``(q+2) d``.
    """
    rows = 2 * k * (m + p)
    return (q + 2) * rows * N + l * N + rows * rows + rows * l + (q + 2) * d


# ------------------------------------------------------------------ eigenvalues


def match_eigenvalues(true_eigs, est_eigs) -> np.ndarray:
    """Reorder ``est_eigs`` so entry ``i`` is paired with ``true_eigs[i]``.

    Pairs minimize the total distance ``sum |lambda_i - lambda_hat_j|``
    (Hungarian assignment).
    """
    t = np.asarray(true_eigs, dtype=complex).ravel()
    e = np.asarray(est_eigs, dtype=complex).ravel()
    if t.size != e.size:
        raise DimensionError(f"{t.size} true eigenvalues but {e.size} estimates")
    rows, cols = linear_sum_assignment(np.abs(t[:, None] - e[None, :]))
    out = np.empty_like(e)
    out[rows] = e[cols]
    return out


def nee(true_eigs, est_eigs, return_excluded: bool = False):
    """Normalized eigenvalue error ``sum |lambda_i - lambda_hat_i|^2 / |lambda_i|^2``.

    Zero true eigenvalues cannot be normalized; they are dropped from the
    sum with a warning and counted in the optional second return value.
    """
    t = np.asarray(true_eigs, dtype=complex).ravel()
    e = match_eigenvalues(t, est_eigs)
    keep = t != 0
    excluded = int(t.size - np.count_nonzero(keep))
    if excluded:
        warnings.warn(f"{excluded} zero true eigenvalue(s) excluded from NEE", RuntimeWarning)
    val = float(np.sum(np.abs(t[keep] - e[keep]) ** 2 / np.abs(t[keep]) ** 2))
    return (val, excluded) if return_excluded else val


def aggregate_nee(true_eigs, est_runs) -> float:
    """NEE of the run-averaged estimates, each run aligned to the truth first."""
    aligned = np.array([match_eigenvalues(true_eigs, e) for e in est_runs])
    return nee(true_eigs, aligned.mean(axis=0))


# ------------------------------------------------------------------- prediction


def _check_dims(model: StateSpaceModel, ts: TimeSeriesData) -> None:
    if (model.m, model.p) != (ts.m, ts.p):
        raise DimensionError(
            f"model has (m, p) = ({model.m}, {model.p}), data has ({ts.m}, {ts.p})"
        )


def mse_per_channel(model: StateSpaceModel, ts: TimeSeriesData, predictor: bool = False) -> np.ndarray:
    """Mean squared output error of each channel on ``ts``.

    The model is simulated from the zero state with ``e = 0``; with
    ``predictor`` the one-step-ahead Kalman predictor is used instead.
    """
    _check_dims(model, ts)
    yhat = model.predict(ts.u, ts.y) if predictor else model.simulate(ts.u)
    return np.mean((ts.y - yhat) ** 2, axis=1)


def validation_mse(model: StateSpaceModel, ts: TimeSeriesData, predictor: bool = False) -> float:
    """Sum over channels of the per-channel mean squared error."""
    return float(mse_per_channel(model, ts, predictor).sum())


# ------------------------------------------------------------------- subspaces


def range_basis(M, rank_tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the column space of ``M``.

    Wide inputs are first reduced to their ``L`` factor, which has the same
    column space, then the basis is read off an SVD truncated at
    ``rank_tol * sigma_1``.
    """
    M = np.asarray(M, dtype=float)
    r, c = M.shape
    if c > r:
        M = lq(M, keep_q=False, panel=max(r, 4096)).L
    U, S, _ = svd_econ(M)
    if S.size == 0 or S[0] == 0.0:
        raise UndefinedSubspaceError("column space of a zero matrix is undefined")
    return U[:, S >= rank_tol * S[0]]


def subspace_distance(A, B, rank_tol: float = 1e-10) -> float:
    """Largest principal-angle sine ``sin(theta_max)`` between ``R(A)`` and ``R(B)``.

    Computed as ``||Q_B - Q_A Q_A^T Q_B||_2`` with the lower-rank basis in the
    role of ``Q_B``. This equals ``sqrt(1 - sigma_min(Q_A^T Q_B)^2)`` but keeps
    full relative accuracy for tiny angles.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[0] != B.shape[0]:
        raise DimensionError(f"row counts differ: {A.shape[0]} vs {B.shape[0]}")
    QA, QB = range_basis(A, rank_tol), range_basis(B, rank_tol)
    if QB.shape[1] > QA.shape[1]:
        QA, QB = QB, QA
    resid = QB - QA @ (QA.T @ QB)
    return float(min(1.0, svd_econ(resid).S[0]))


def markov_error(m1: StateSpaceModel, m2: StateSpaceModel, horizon: int) -> float:
    """Frobenius distance between Markov sequences ``G(0..horizon)``."""
    if (m1.m, m1.p) != (m2.m, m2.p):
        raise DimensionError(f"(m, p) differ: ({m1.m}, {m1.p}) vs ({m2.m}, {m2.p})")
    return float(np.linalg.norm(m1.markov(horizon) - m2.markov(horizon)))


# --------------------------------------------------------------------- reports

CSV_COLUMNS = (
    "nee", "mse", "markov_err", "subspace_dist", "act_ms",
    "io_words_read", "io_words_written", "blocks_read", "mse_per_channel",
)


@dataclass
class MetricsReport:
    """Metrics of one identification run.

    Absent metrics are ``None``; an unstable estimate reports ``mse = inf``.
    """

    nee: float | None = None
    mse: float | None = None
    mse_per_channel: list[float] = field(default_factory=list)
    markov_err: float | None = None
    subspace_dist: float | None = None
    act_ms: float | None = None
    io_words_read: int = 0
    io_words_written: int = 0
    blocks_read: int = 0

    def to_dict(self, include_absent: bool = False) -> dict:
        d = asdict(self)
        return d if include_absent else {k: v for k, v in d.items() if v is not None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), allow_nan=True)

    def csv_row(self) -> list[str]:
        """Values in :data:`CSV_COLUMNS` order; per-channel MSEs joined by ``;``."""
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return "Inf" if math.isinf(v) else repr(v)
            return str(v)

        row = [fmt(getattr(self, c)) for c in CSV_COLUMNS[:-1]]
        row.append(";".join(repr(float(v)) for v in self.mse_per_channel))
        return row
