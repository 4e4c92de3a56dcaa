"""Innovation-form state-space model.

    x(t+1) = A x(t) + B u(t) + K e(t)
    y(t)   = C x(t) + D u(t) + e(t),       e(t) ~ N(0, eta)
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.signal

from .errors import DimensionError, InputError, InstabilityError, ParseError

MODEL_VERSION = "frsid-model-1"
_OVERFLOW = 1e150


@dataclass(frozen=True)
class StateSpaceModel:
    """Matrices of an innovation-form model and its innovation covariance."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    K: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        mats = {}
        for name in ("A", "B", "C", "D", "K", "eta"):
            a = np.array(getattr(self, name), dtype=np.float64)
            if a.ndim != 2:
                raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
            if not np.isfinite(a).all():
                raise InputError(f"{name} has non-finite entries")
            a.setflags(write=False)
            mats[name] = a
            object.__setattr__(self, name, a)
        n, m, p = mats["A"].shape[0], mats["B"].shape[1], mats["C"].shape[0]
        expect = {"A": (n, n), "B": (n, m), "C": (p, n), "D": (p, m), "K": (n, p), "eta": (p, p)}
        for name, shape in expect.items():
            if mats[name].shape != shape:
                raise DimensionError(f"{name} has shape {mats[name].shape}, expected {shape}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.A) if self.n else np.zeros(0, complex)

    def spectral_radius(self) -> float:
        return float(np.abs(self.eigenvalues()).max()) if self.n else 0.0

    def predictor_radius(self) -> float:
        """Spectral radius of ``A - K C``."""
        if not self.n:
            return 0.0
        return float(np.abs(np.linalg.eigvals(self.A - self.K @ self.C)).max())

    def markov(self, horizon: int) -> np.ndarray:
        """Markov parameters ``G(0) = D, G(j) = C A^(j-1) B`` for ``j = 0..horizon``.

        Returns
        -------
        ndarray, shape (horizon + 1, p, m)
        """
        G = np.empty((horizon + 1, self.p, self.m))
        G[0] = self.D
        AjB = self.B
        for j in range(1, horizon + 1):
            G[j] = self.C @ AjB
            AjB = self.A @ AjB
        return G

    def transform(self, T) -> "StateSpaceModel":
        """Model in the state basis ``x = T x'``."""
        T = np.asarray(T, dtype=float)
        Ti = np.linalg.inv(T)
        return StateSpaceModel(Ti @ self.A @ T, Ti @ self.B, self.C @ T, self.D, Ti @ self.K, self.eta)

    def with_noise(self, K=None, eta=None) -> "StateSpaceModel":
        return StateSpaceModel(
            self.A, self.B, self.C, self.D,
            self.K if K is None else K, self.eta if eta is None else eta,
        )

    # ---------------------------------------------------------- simulation

    def simulate(self, u, e=None, x0=None) -> np.ndarray:
        """Output sequence driven by inputs ``u`` (m x N) and innovations ``e``.

        ``e`` defaults to zero and ``x0`` to the zero state.

        Raises
        ------
        InstabilityError
            If the state grows beyond 1e150 in magnitude.
        """
        u = np.asarray(u, dtype=float).reshape(self.m, -1)
        N = u.shape[1]
        y = self.D @ u
        drive = self.B @ u
        if e is not None:
            e = np.asarray(e, dtype=float).reshape(self.p, N)
            y += e
            drive += self.K @ e
        if self.n:
            X = propagate(self.A, drive, x0)
            y += self.C @ X
        return y

    def predict(self, u, y) -> np.ndarray:
        """One-step-ahead Kalman predictor output from measured ``u`` and ``y``."""
        u = np.asarray(u, dtype=float).reshape(self.m, -1)
        y = np.asarray(y, dtype=float).reshape(self.p, -1)
        yhat = self.D @ u
        if self.n:
            Ak = self.A - self.K @ self.C
            drive = (self.B - self.K @ self.D) @ u + self.K @ y
            yhat += self.C @ propagate(Ak, drive)
        return yhat

    # ------------------------------------------------------- serialization

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "n": self.n, "m": self.m, "p": self.p,
            **{k: getattr(self, k).tolist() for k in ("A", "B", "C", "D", "K", "eta")},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "StateSpaceModel":
        if doc.get("version") != MODEL_VERSION:
            raise ParseError(f"unsupported model version {doc.get('version')!r}")
        try:
            n, m, p = int(doc["n"]), int(doc["m"]), int(doc["p"])
            shapes = {"A": (n, n), "B": (n, m), "C": (p, n), "D": (p, m), "K": (n, p), "eta": (p, p)}
            mats = {k: np.array(doc[k], dtype=float).reshape(s) for k, s in shapes.items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed model document: {exc}") from None
        return cls(**mats)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "StateSpaceModel":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
        return cls.from_dict(doc)


def propagate(A: np.ndarray, drive: np.ndarray, x0=None) -> np.ndarray:
    """States of ``x(t+1) = A x(t) + drive(t)``, returned as an n x N array.

    Diagonal ``A`` is filtered channel by channel; general ``A`` uses a
    plain recursion.
    """
    n, N = drive.shape
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    if np.count_nonzero(A - np.diag(np.diagonal(A))) == 0:
        X = np.empty((n, N))
        a = np.diagonal(A)
        if np.any(np.abs(a) > 1.0) and N * np.log(np.max(np.abs(a))) > np.log(_OVERFLOW):
            raise InstabilityError(f"state overflow: spectral radius {np.abs(a).max():.6g} over {N} steps")
        for i in range(n):
            # x_i(t) = a_i x_i(t-1) + drive_i(t-1), x_i(0) = x0_i
            X[i] = scipy.signal.lfilter([0.0, 1.0], [1.0, -a[i]], drive[i], zi=[x[i]])[0]
        _check_finite_states(X)
        return X
    X = np.empty((n, N))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(N):
            X[:, t] = x
            x = A @ x + drive[:, t]
            if t % 4096 == 4095 and not np.all(np.abs(x) < _OVERFLOW):
                raise InstabilityError(f"state overflow after {t + 1} steps")
    _check_finite_states(X)
    return X


def _check_finite_states(X: np.ndarray) -> None:
    if not np.all(np.abs(X) < _OVERFLOW):
        raise InstabilityError("state overflow during simulation")
