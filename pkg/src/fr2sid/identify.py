"""Subspace identification from the (compressed) Hankel data matrix.

The stages, shared by the randomized pipeline and the conventional
baseline, act on the lower factor of ``H = L Q`` partitioned as

    [U_f]   [R11          ] [Q1]
    [W_p] = [R21 R22      ] [Q2]
    [Y_f]   [R31 R32 R33  ] [Q3]

with block sizes ``km``, ``k(m+p)`` and ``kp``.
"""

from __future__ import annotations

import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .datamodel import TimeSeriesData
from .errors import (
    ConfigError, EmptyModelError, ExcitationError, FR2SIDError, IllConditionedError,
    NoiseDegenerateError, NoiseDegenerateWarning, StabilityWarning,
)
from .matops import condition_number, lq, numerical_rank, pinv, right_solve_lower, svd_econ
from .metrics import IOCounter
from .sketch import SketchConfig, SketchedData, sketch_stream
from .statespace import StateSpaceModel

COND_LIMIT = 1e12
NOISE_FLOOR = 1e-10


@dataclass(frozen=True)
class LqFactors:
    """Block partition of the lower factor of ``H`` (or of ``Hbar``)."""

    L: np.ndarray
    k: int
    m: int
    p: int
    Q: np.ndarray | None = None

    @property
    def _cuts(self):
        km, kmp = self.k * self.m, self.k * (self.m + self.p)
        return km, km + kmp

    @property
    def R11(self):
        a, _ = self._cuts
        return self.L[:a, :a]

    @property
    def R21(self):
        a, b = self._cuts
        return self.L[a:b, :a]

    @property
    def R22(self):
        a, b = self._cuts
        return self.L[a:b, a:b]

    @property
    def R31(self):
        a, b = self._cuts
        return self.L[b:, :a]

    @property
    def R32(self):
        a, b = self._cuts
        return self.L[b:, a:b]

    @property
    def R33(self):
        _, b = self._cuts
        return self.L[b:, b:]

    def cond_r11(self) -> float:
        return condition_number(svd_econ(self.R11).S)


@dataclass(frozen=True)
class ProjectionResult:
    """Oblique projection and its SVD.

    Attributes
    ----------
    Lp : ndarray, shape (kp, k(m+p))
        ``R32 pinv(R22)``.
    zeta : ndarray, shape (kp, ncols)
        Projected future outputs ``Lp W_p``.
    R_zeta : ndarray, shape (kp, kp) or None
        Upper factor of the reduced QR of ``zeta^T`` (``None`` when the SVD
        was taken of ``zeta`` directly).
    S : ndarray
        Singular values of ``zeta``.
    V : ndarray, shape (kp, r)
        Left singular vectors of ``zeta``.
    S_direct : ndarray or None
        Singular values of ``zeta`` computed without the reduction, kept to
        check that the reduction preserves them.
    """

    Lp: np.ndarray
    zeta: np.ndarray
    R_zeta: np.ndarray | None
    S: np.ndarray
    V: np.ndarray
    S_direct: np.ndarray | None = None

    def sv_deviation(self) -> float | None:
        """``max_i |sigma_i(R_zeta) - sigma_i(zeta)| / sigma_1(zeta)``."""
        if self.S_direct is None:
            return None
        top = self.S_direct[0] if self.S_direct.size and self.S_direct[0] > 0 else 1.0
        n = min(self.S.size, self.S_direct.size)
        return float(np.max(np.abs(self.S[:n] - self.S_direct[:n]), initial=0.0) / top)


@dataclass
class Identification:
    """Estimated model together with the intermediate quantities."""

    model: StateSpaceModel
    projection: ProjectionResult
    theta: np.ndarray
    psi: np.ndarray
    diagnostics: dict = field(default_factory=dict)


# ------------------------------------------------------------------ stages


def project_lq(sk: SketchedData, keep_q: bool = False) -> LqFactors:
    """LQ factorization of the compressed matrix, partitioned into blocks."""
    res = lq(sk.Hbar, keep_q=keep_q)
    return LqFactors(res.L, sk.k, sk.m, sk.p, res.Q)


def oblique_projection(lqf: LqFactors, Wp) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Lp, zeta)`` with ``Lp = R32 pinv(R22)`` and ``zeta = Lp W_p``."""
    Lp = lqf.R32 @ pinv(lqf.R22)
    return Lp, Lp @ Wp


def reduce_and_svd(zeta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reduced QR of ``zeta^T`` followed by an SVD of the small factor.

    Returns
    -------
    R_zeta : ndarray, shape (kp, kp)
        Upper-triangular factor, ``zeta^T = Q R_zeta``.
    S : ndarray
        Singular values (equal to those of ``zeta``).
    V : ndarray
        Right singular vectors of ``R_zeta``, i.e. the left singular vectors
        of ``zeta``.
    """
    R = lq(zeta, keep_q=False).L.T
    _, S, V = svd_econ(R)
    return R, S, V


def largest_gap(S) -> int:
    """Order suggested by the largest ratio ``sigma_i / sigma_(i+1)``."""
    s = np.asarray(S, dtype=float)
    s = s[s > 0]
    if s.size < 2:
        return int(s.size)
    return int(np.argmax(np.log10(s[:-1]) - np.log10(s[1:])) + 1)


def estimate_order(S, override: int | None = None, rel_tol: float = 1e-8) -> int:
    """Model order: ``override`` if given, else the count of ``sigma_i >= rel_tol * sigma_1``."""
    if override is not None:
        if not 0 <= override <= len(S):
            raise ConfigError(f"order override {override} outside [0, {len(S)}]")
        return int(override)
    return numerical_rank(S, rel_tol)


def estimate_theta(V, S, n: int) -> np.ndarray:
    """Extended observability estimate ``V_1 Sigma_1^(1/2)``."""
    if n == 0:
        raise EmptyModelError("model order is zero; nothing to identify")
    if n > np.count_nonzero(np.asarray(S) > 0):
        raise ConfigError(f"order {n} exceeds the number of positive singular values")
    return V[:, :n] * np.sqrt(S[:n])


def _shift_pinv(theta: np.ndarray, p: int) -> tuple[np.ndarray, float]:
    if theta.shape[0] < 2 * p:
        raise ConfigError("shift invariance needs k >= 2")
    down = theta[:-p]
    S = svd_econ(down).S
    cond = condition_number(S)
    if numerical_rank(S, 1.0 / COND_LIMIT) < theta.shape[1]:
        raise IllConditionedError(
            f"shifted observability block is rank deficient (cond {cond:.3g})", cond
        )
    return pinv(down), cond


def estimate_ac(theta, p: int) -> tuple[np.ndarray, np.ndarray]:
    """``A`` from shift invariance of ``theta``, ``C`` from its first block row."""
    P, _ = _shift_pinv(theta, p)
    return P @ theta[p:], theta[:p].copy()


def estimate_psi(lqf: LqFactors) -> np.ndarray:
    """Toeplitz estimate ``(R31 - R32 pinv(R22) R21) inv(R11)``.

    Raises
    ------
    ExcitationError
        When ``R11`` is singular, i.e. the input is not persistently exciting.
    """
    R11 = lqf.R11
    if R11.size:
        cond = lqf.cond_r11()
        if not cond < COND_LIMIT:
            raise ExcitationError(
                f"R11 is singular (cond {cond:.3g}); the input is not persistently exciting"
            )
    X = lqf.R31 - lqf.R32 @ pinv(lqf.R22) @ lqf.R21
    return right_solve_lower(X, R11) if R11.size else X


def estimate_bd(psi, theta, m: int, p: int) -> tuple[np.ndarray, np.ndarray]:
    """``D`` and ``B`` from the first block column of the Toeplitz estimate."""
    M = psi[:, :m]
    P, _ = _shift_pinv(theta, p)
    return P @ M[p:], M[:p].copy()


def noise_tau(N: int, q: int, block_width: int | None = None, data_scale: float = 1.0) -> float:
    """Normalization of the residual factor.

    ``1/sqrt(N_b^(2q) N)`` where ``N_b`` is the column count whose Gram
    enters the power step, divided by ``data_scale^(2q+1)`` when ``H`` was
    scaled before compression.
    """
    nb = N if block_width is None else block_width
    return 1.0 / (np.sqrt(float(nb) ** (2 * q) * N) * data_scale ** (2 * q + 1))


def estimate_k(lqf: LqFactors, theta, tau: float, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Kalman gain and innovation covariance from the residual factor ``R33``.

    ``P = tau R33[:, :p]``, ``omega = P[:p]``, ``K = pinv(theta_down) P[p:] inv(omega)``
    and ``eta = (omega omega^T)^(1/(2q+1))``.

    Raises
    ------
    NoiseDegenerateError
        If ``R33`` is negligible next to ``L`` or ``omega`` is numerically
        singular, which is what noise-free data produce.
    """
    p = lqf.p
    R33 = lqf.R33
    if np.linalg.norm(R33) <= NOISE_FLOOR * np.linalg.norm(lqf.L):
        raise NoiseDegenerateError("residual factor is negligible; data look noise free")
    P = tau * R33[:, :p]
    omega = P[:p]
    s = svd_econ(omega).S
    if s[-1] < 1e-12 * s[0]:
        raise NoiseDegenerateError(f"omega is singular (sigma_min/sigma_max = {s[-1] / s[0]:.3g})")
    Pd, _ = _shift_pinv(theta, p)
    K = Pd @ right_solve_lower(P[p:], omega)
    w, U = np.linalg.eigh(omega @ omega.T)
    w = np.clip(w, 0.0, None) ** (1.0 / (2 * q + 1))
    eta = (U * w) @ U.T
    return K, 0.5 * (eta + eta.T)


# ---------------------------------------------------------------- pipeline


@contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except FR2SIDError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


def finish_model(lqf: LqFactors, proj: ProjectionResult, order: int | None, rel_tol: float,
                 tau: float, q: int, timings: dict) -> Identification:
    """Order selection and parameter estimation, shared by both pipelines."""
    m, p = lqf.m, lqf.p
    diag: dict = {"singular_values": proj.S.copy(), "gap_order": largest_gap(proj.S), "tau": tau}
    with _stage("estimate_order", timings):
        n = estimate_order(proj.S, order, rel_tol)
    with _stage("estimate_theta", timings):
        theta = estimate_theta(proj.V, proj.S, n)
    with _stage("estimate_ac", timings):
        A, C = estimate_ac(theta, p)
        diag["cond_theta_down"] = _shift_pinv(theta, p)[1]
    with _stage("estimate_psi", timings):
        psi = estimate_psi(lqf)
        diag["cond_R11"] = lqf.cond_r11() if lqf.R11.size else 1.0
    with _stage("estimate_bd", timings):
        B, D = estimate_bd(psi, theta, m, p)
    with _stage("estimate_k", timings):
        try:
            K, eta = estimate_k(lqf, theta, tau, q)
            diag["noise_degenerate"] = False
        except NoiseDegenerateError as exc:
            warnings.warn(f"{exc}; returning K = 0 and eta = 0", NoiseDegenerateWarning, stacklevel=3)
            K, eta = np.zeros((n, p)), np.zeros((p, p))
            diag["noise_degenerate"] = True
    model = StateSpaceModel(A, B, C, D, K, eta)
    diag["order"] = n
    diag["predictor_radius"] = model.predictor_radius()
    if not diag["noise_degenerate"] and diag["predictor_radius"] >= 1.0:
        warnings.warn(
            f"A - KC has spectral radius {diag['predictor_radius']:.6g} >= 1", StabilityWarning, stacklevel=3
        )
    diag["timings"] = timings
    return Identification(model, proj, theta, psi, diag)


def run_fr2sid(ts: TimeSeriesData, cfg: SketchConfig, order: int | None = None,
               rel_tol: float = 1e-8, counter: IOCounter | None = None,
               check_sv: bool = True) -> Identification:
    """Randomized subspace identification of ``ts``.

    Parameters
    ----------
    ts : TimeSeriesData
    cfg : SketchConfig
    order : int, optional
        Model order; estimated from the singular values when omitted.
    rel_tol : float
        Relative singular-value threshold for the order estimate.
    counter : IOCounter, optional
        Charged by the compression pass.
    check_sv : bool
        Also compute the singular values of ``zeta`` directly and record the
        deviation from those of the reduced factor in
        ``diagnostics["sv_deviation"]``.

    Returns
    -------
    Identification
        ``model`` plus projection intermediates and diagnostics (singular
        values, condition numbers, stage timings).

    Raises
    ------
    FR2SIDError
        From the first stage that fails, with ``stage`` set to its name.
    """
    timings: dict = {}
    with _stage("sketch", timings):
        sk = sketch_stream(ts, cfg, counter)
    with _stage("project_lq", timings):
        lqf = project_lq(sk)
    with _stage("oblique_projection", timings):
        Lp, zeta = oblique_projection(lqf, sk.Wp)
    with _stage("reduce_and_svd", timings):
        R, S, V = reduce_and_svd(zeta)
    S_direct = svd_econ(zeta).S if check_sv else None
    proj = ProjectionResult(Lp, zeta, R, S, V, S_direct)
    tau = noise_tau(sk.N, cfg.q, sk.block_width, sk.data_scale)
    ident = finish_model(lqf, proj, order, rel_tol, tau, cfg.q, timings)
    ident.diagnostics.update(N=sk.N, N_c=sk.n_c, sv_deviation=proj.sv_deviation())
    return ident
