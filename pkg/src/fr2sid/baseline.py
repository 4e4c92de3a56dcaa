"""Conventional subspace identification on the uncompressed data.

The LQ factor of the full Hankel matrix is accumulated panel by panel,
``zeta`` is formed over all ``N`` columns and its SVD taken directly. The
parameter estimators are the ones used by the randomized pipeline, so the
compression is the only difference between the two methods.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import BlockPartition, TimeSeriesData, check_horizon, hankel_stack, past_stack
from .errors import ConfigError, DimensionError, InstabilityError, MemoryCapError
from .identify import (
    Identification, LqFactors, ProjectionResult, _stage, finish_model, noise_tau, oblique_projection,
)
from .matops import sequential_lq, svd_econ
from .metrics import IOCounter
from .statespace import StateSpaceModel

DEFAULT_MEMORY_CAP = 4 * 1024 ** 3
BD_METHODS = ("structural", "regression")


@dataclass(frozen=True)
class BaselineConfig:
    """Settings of the conventional pipeline.

    Attributes
    ----------
    k : int
        Horizon.
    d : int
        Number of column panels folded into the sequential QR (panel width
        ``N // d``).
    order : int, optional
        Model order override.
    bd_method : str
        ``"structural"`` reads ``B, D`` off the Toeplitz estimate;
        ``"regression"`` fits them by output-error least squares over all
        samples.
    memory_cap : int
        Refuse to run when the predicted working set exceeds this many bytes.
    rel_tol : float
        Singular-value threshold for the order estimate.
    scale_hankel : bool
        Use the ``1/sqrt(N)``-scaled Hankel matrices.
    """

    k: int
    d: int = 10
    order: int | None = None
    bd_method: str = "structural"
    memory_cap: int = DEFAULT_MEMORY_CAP
    rel_tol: float = 1e-8
    scale_hankel: bool = False

    def validate(self) -> None:
        if self.d < 1:
            raise ConfigError(f"panel count d must be >= 1, got {self.d}")
        if self.bd_method not in BD_METHODS:
            raise ConfigError(f"bd_method must be one of {BD_METHODS}, got {self.bd_method!r}")
        if self.memory_cap <= 0:
            raise ConfigError("memory_cap must be positive")


def memory_estimate(k: int, m: int, p: int, N: int) -> int:
    """Bytes held by ``H``, ``W_p`` and ``zeta``: ``8 k (3m + 4p) N``."""
    return 8 * k * (3 * m + 4 * p) * N


def run_conventional(ts: TimeSeriesData, cfg: BaselineConfig,
                     counter: IOCounter | None = None) -> Identification:
    """Identify a model from the full, uncompressed Hankel matrices.

    Raises
    ------
    MemoryCapError
        Before any allocation, when :func:`memory_estimate` exceeds
        ``cfg.memory_cap``.
    """
    cfg.validate()
    timings: dict = {}
    k, m, p = cfg.k, ts.m, ts.p
    with _stage("memory_check", timings):
        N = check_horizon(ts, k)
        need = memory_estimate(k, m, p, N)
        if need > cfg.memory_cap:
            raise MemoryCapError(
                f"conventional pipeline needs about {need / 2**20:.1f} MiB, "
                f"cap is {cfg.memory_cap / 2**20:.1f} MiB",
                estimate_bytes=need, cap_bytes=cfg.memory_cap,
            )
    scale = 1.0 / np.sqrt(N) if cfg.scale_hankel else 1.0
    rows = 2 * k * (m + p)
    part = BlockPartition(min(cfg.d, N), N)
    with _stage("lq", timings):
        panels = (hankel_stack(ts, k, *part.bounds(i), scale) for i in range(part.d))
        lqf = LqFactors(sequential_lq(panels, rows, counter), k, m, p)
    with _stage("oblique_projection", timings):
        Lp, zeta = oblique_projection(lqf, past_stack(ts, k, 0, N, scale))
    with _stage("svd", timings):
        U, S, _ = svd_econ(zeta)
    proj = ProjectionResult(Lp, zeta, None, S, U)
    ident = finish_model(lqf, proj, cfg.order, cfg.rel_tol, noise_tau(N, 0, None, scale), 0, timings)
    if cfg.bd_method == "regression":
        with _stage("estimate_bd_regression", timings):
            mdl = ident.model
            stats: dict = {}
            B, D = estimate_bd_regression(ts, mdl.A, mdl.C, stats)
            ident.model = StateSpaceModel(mdl.A, B, mdl.C, D, mdl.K, mdl.eta)
            ident.diagnostics["regression_flops"] = stats["flops"]
    ident.diagnostics.update(N=N, memory_estimate=need)
    return ident


def estimate_bd_regression(ts: TimeSeriesData, A, C, stats: dict | None = None,
                           chunk: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    """Output-error least-squares fit of ``B``, ``D`` (and ``x0``) for fixed ``A``, ``C``.

    The output is linear in the unknowns,

        y(t) = C A^t x0 + sum_{j<t} C A^(t-1-j) B u(j) + D u(t),

    so the regressors are the outputs of ``n m + n`` parallel simulations
    that are carried as one ``n x (n m + n)`` state matrix. The design matrix
    is folded into a triangular factor chunk by chunk and never stored.

    Parameters
    ----------
    ts : TimeSeriesData
    A, C : array_like
    stats : dict, optional
        Receives ``"flops"`` (operation count of the regressor simulation and
        factor updates) and the fitted initial state ``"x0"``.
    chunk : int
        Time steps per factor update.

    Raises
    ------
    InstabilityError
        If ``A`` is unstable enough for the regressors to overflow.
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    n, m, p, Nt = A.shape[0], ts.m, ts.p, ts.n_samples
    if A.shape != (n, n) or C.shape != (p, n):
        raise DimensionError(f"A {A.shape} and C {C.shape} do not match n={n}, p={p}")
    if n:
        rho = float(np.abs(np.linalg.eigvals(A)).max())
        if rho > 1.0 and Nt * np.log(rho) > np.log(1e100):
            raise InstabilityError(
                f"A has spectral radius {rho:.6g}; regressors overflow over {Nt} samples, "
                "use the structural B/D method"
            )
    nb, npar = n * m, n * m + n + p * m
    Z = np.zeros((n, nb + n))
    Z[:, nb:] = np.eye(n)
    diag_rows = np.tile(np.arange(n), m)
    diag_cols = np.arange(nb)
    flops = 0
    step_flops = 2 * n * n * (nb + n) + 2 * p * n * (nb + n)

    def blocks():
        nonlocal Z, flops
        Zs = np.empty((chunk, n, nb + n))
        for t0 in range(0, Nt, chunk):
            t1 = min(Nt, t0 + chunk)
            T = t1 - t0
            for t in range(t0, t1):
                Zs[t - t0] = Z
                Z = A @ Z
                Z[diag_rows, diag_cols] += np.repeat(ts.u[:, t], n)
            if not np.all(np.abs(Z) < 1e150):
                raise InstabilityError("regressor simulation overflowed; use the structural B/D method")
            Phi = np.empty((T, p, npar + 1))
            Phi[:, :, :nb + n] = C @ Zs[:T]
            Phi[:, :, nb + n:npar] = 0.0
            for l in range(m):
                for r in range(p):
                    Phi[:, r, nb + n + l * p + r] = ts.u[l, t0:t1]
            Phi[:, :, npar] = ts.y[:, t0:t1].T
            flops += T * (step_flops + 2 * p * (npar + 1) ** 2)
            yield Phi.reshape(T * p, npar + 1).T

    L = sequential_lq(blocks(), npar + 1)
    R = L.T
    theta = np.linalg.lstsq(R[:npar, :npar], R[:npar, npar], rcond=None)[0]
    B = theta[:nb].reshape(n, m, order="F")
    x0 = theta[nb:nb + n]
    D = theta[nb + n:].reshape(p, m, order="F")
    if stats is not None:
        stats["flops"] = flops
        stats["x0"] = x0
    return B, D

