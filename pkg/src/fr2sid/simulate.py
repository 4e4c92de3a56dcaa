"""Random multi-scale systems and noisy closed-form simulations."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datamodel import TimeSeriesData
from .errors import ConfigError, GenerationError
from .matops import cholesky_lower
from .statespace import StateSpaceModel, propagate

INPUT_KINDS = ("white-gaussian", "prbs")


@dataclass(frozen=True)
class SystemSpec:
    """Recipe for a random stable system.

    Continuous-time poles are drawn as one fast pole, one slow pole and the
    rest log-uniform in magnitude between them, then mapped to discrete time
    with ``exp(s * T_s)``.

    Attributes
    ----------
    n, m, p : int
    fast_pole_range, slow_pole_range : tuple of float
        Intervals of strictly negative continuous-time poles.
    sample_time : float, optional
        Defaults to ``0.5 / |fastest pole|``.
    seed : int
    poles : tuple of float, optional
        Explicit continuous-time real poles, overriding the random draw.
    complex_pairs : int
        Number of intermediate poles replaced by complex-conjugate pairs.
    """

    n: int
    m: int
    p: int
    fast_pole_range: tuple[float, float] = (-100.0, -50.0)
    slow_pole_range: tuple[float, float] = (-0.01, -0.001)
    sample_time: float | None = None
    seed: int = 0
    poles: tuple[float, ...] | None = None
    complex_pairs: int = 0

    def validate(self) -> None:
        if self.n < 1 or self.m < 0 or self.p < 1:
            raise ConfigError(f"need n >= 1, m >= 0, p >= 1; got n={self.n}, m={self.m}, p={self.p}")
        for name in ("fast_pole_range", "slow_pole_range"):
            lo, hi = sorted(getattr(self, name))
            if hi >= 0:
                raise ConfigError(f"{name} must be strictly negative, got {getattr(self, name)}")
        if self.poles is not None:
            if len(self.poles) != self.n or any(s >= 0 for s in self.poles):
                raise ConfigError("explicit poles must be n strictly negative values")
        if self.complex_pairs < 0 or 2 * self.complex_pairs > max(0, self.n - 2):
            raise ConfigError("complex_pairs must fit between the fast and the slow pole")
        if self.sample_time is not None and self.sample_time <= 0:
            raise ConfigError("sample_time must be positive")


def _continuous_poles(spec: SystemSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.poles is not None:
        return np.asarray(spec.poles, dtype=float)
    fast = rng.uniform(*sorted(spec.fast_pole_range))
    if spec.n == 1:
        return np.array([fast])
    slow = rng.uniform(*sorted(spec.slow_pole_range))
    mid = -np.exp(rng.uniform(np.log(-slow), np.log(-fast), spec.n - 2))
    return np.concatenate([[fast], mid, [slow]])


def generate_system(spec: SystemSpec, max_attempts: int = 60) -> StateSpaceModel:
    """Random stable innovation-form model following ``spec``.

    ``A`` is block diagonal (1x1 blocks for real poles, rotation-scaling
    2x2 blocks for complex pairs). ``B, C, D, K`` have standard normal
    entries; ``K`` is then halved until ``A - K C`` is stable with a margin
    of half the distance of ``A``'s spectral radius to 1. ``eta`` is the
    identity; :func:`simulate` replaces it with the realized covariance.

    Raises
    ------
    GenerationError
        If no stable ``K`` scaling is found within ``max_attempts`` halvings.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    s = _continuous_poles(spec, rng)
    Ts = spec.sample_time or 0.5 / float(np.max(np.abs(s)))
    n = spec.n
    A = np.zeros((n, n))
    nc = spec.complex_pairs
    mids = s[1:-1]
    # each complex pair takes the magnitude of one intermediate pole and two states
    for j in range(nc):
        sigma = -mids[j]
        omega = sigma * rng.uniform(0.1, 1.0)
        r, th = math.exp(-sigma * Ts), omega * Ts
        i = 2 * j
        A[i:i + 2, i:i + 2] = [[r * math.cos(th), r * math.sin(th)], [-r * math.sin(th), r * math.cos(th)]]
    real = np.concatenate([s[:1], mids[2 * nc:], s[-1:]]) if n > 1 else s
    A[np.arange(2 * nc, n), np.arange(2 * nc, n)] = np.exp(real * Ts)
    B = rng.standard_normal((n, spec.m))
    C = rng.standard_normal((spec.p, n))
    D = rng.standard_normal((spec.p, spec.m))
    K = rng.standard_normal((n, spec.p))
    rho_a = float(np.abs(np.linalg.eigvals(A)).max())
    target = 1.0 - 0.5 * (1.0 - rho_a)
    for _ in range(max_attempts):
        if np.abs(np.linalg.eigvals(A - K @ C)).max() < target:
            return StateSpaceModel(A, B, C, D, K, np.eye(spec.p))
        K = 0.5 * K
    raise GenerationError(f"could not stabilize A - KC after {max_attempts} halvings; try another seed")


def make_input(kind: str, m: int, n_samples: int, seed: int = 0) -> np.ndarray:
    """Excitation signal of shape (m, n_samples).

    ``"white-gaussian"`` draws i.i.d. standard normal samples, ``"prbs"``
    i.i.d. equiprobable values in {-1, +1}.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be positive")
    rng = np.random.default_rng(seed)
    if kind == "white-gaussian":
        return rng.standard_normal((m, n_samples))
    if kind == "prbs":
        return 2.0 * rng.integers(0, 2, size=(m, n_samples)) - 1.0
    raise ConfigError(f"input kind must be one of {INPUT_KINDS}, got {kind!r}")


@dataclass(frozen=True)
class SimulationRun:
    """Simulated data and the exact model that produced it.

    Attributes
    ----------
    model : StateSpaceModel
        Ground truth with ``eta`` set to the injected innovation covariance.
    ts : TimeSeriesData
    e : ndarray, shape (p, N_t)
        Injected innovations.
    snr_db : float
    x0 : ndarray
    noise_var : float
        Scale ``sigma^2`` applied to the base covariance.
    y_det : ndarray
        Noise-free output component.
    """

    model: StateSpaceModel
    ts: TimeSeriesData
    e: np.ndarray
    snr_db: float
    x0: np.ndarray
    noise_var: float
    y_det: np.ndarray

    def measured_snr_db(self) -> float:
        """``10 log10`` of channel-averaged deterministic over stochastic output power."""
        noise = self.ts.y - self.y_det
        return 10.0 * math.log10(np.mean(self.y_det ** 2) / np.mean(noise ** 2))


def simulate(model: StateSpaceModel, u, snr_db: float = math.inf, seed: int = 0,
             snr_linear: bool = False, noise_var: float | None = None,
             eta=None) -> SimulationRun:
    """Simulate ``model`` from ``x0 = 0`` with white Gaussian innovations.

    Parameters
    ----------
    model : StateSpaceModel
    u : array_like, shape (m, N_t)
    snr_db : float
        Target ratio of deterministic to stochastic output power, both
        averaged over channels. ``inf`` gives noise-free data.
    seed : int
        Seed of the innovation sequence.
    snr_linear : bool
        Read ``snr_db`` as a plain power ratio instead of decibels.
    noise_var : float, optional
        Use this ``sigma^2`` directly instead of deriving it from the SNR,
        e.g. to give validation data the noise level of the training set.
    eta : array_like, optional
        Base innovation covariance (default identity); the injected
        covariance is ``sigma^2 eta``.

    Raises
    ------
    InstabilityError
        If the state overflows.
    """
    u = np.asarray(u, dtype=float).reshape(model.m, -1)
    N = u.shape[1]
    p = model.p
    y_det = model.simulate(u)
    x0 = np.zeros(model.n)
    base = np.eye(p) if eta is None else np.asarray(eta, dtype=float)
    noise_free = noise_var is None and math.isinf(snr_db) and snr_db > 0
    if noise_free or noise_var == 0.0:
        e = np.zeros((p, N))
        truth = model.with_noise(eta=np.zeros((p, p)))
        return SimulationRun(truth, TimeSeriesData(u, y_det), e, math.inf, x0, 0.0, y_det)
    rng = np.random.default_rng(seed)
    e_unit = cholesky_lower(base) @ rng.standard_normal((p, N))
    y_sto = e_unit.copy()
    if model.n:
        y_sto += model.C @ propagate(model.A, model.K @ e_unit)
    if noise_var is None:
        ratio = snr_db if snr_linear else 10.0 ** (snr_db / 10.0)
        if ratio <= 0:
            raise ConfigError("SNR ratio must be positive")
        noise_var = float(np.mean(y_det ** 2) / (np.mean(y_sto ** 2) * ratio))
    sigma = math.sqrt(noise_var)
    truth = model.with_noise(eta=noise_var * base)
    ts = TimeSeriesData(u, y_det + sigma * y_sto)
    snr = snr_db if not snr_linear else 10.0 * math.log10(snr_db)
    return SimulationRun(truth, ts, sigma * e_unit, snr, x0, noise_var, y_det)
