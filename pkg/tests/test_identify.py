import warnings

import numpy as np
import pytest
from _systems import noise_free_run, noisy_run, observability, toeplitz

from fr2sid.datamodel import TimeSeriesData, build_hankel
from fr2sid.errors import ConfigError, EmptyModelError, ExcitationError, IllConditionedError, NoiseDegenerateWarning
from fr2sid.identify import (
    LqFactors, estimate_ac, estimate_bd, estimate_order, estimate_psi, estimate_theta, largest_gap,
    oblique_projection, project_lq, reduce_and_svd, run_fr2sid,
)
from fr2sid.matops import lq, svd_econ
from fr2sid.metrics import markov_error, nee, subspace_distance, validation_mse
from fr2sid.simulate import SystemSpec, generate_system, make_input, simulate
from fr2sid.sketch import GaussianSketchSource, SketchConfig, SketchedData, sketch_stream
from fr2sid.statespace import StateSpaceModel

pytestmark = pytest.mark.filterwarnings("ignore::fr2sid.errors.NoiseDegenerateWarning")


@pytest.fixture(scope="module")
def nf():
    """Noise-free n=3, m=2, p=2 data, horizon 5, and its sketch."""
    run = noise_free_run(3, 5, 2, 2, 4000, seed=11)
    cfg = SketchConfig(k=5, d=4, seed=3)
    return run, cfg, sketch_stream(run.ts, cfg)


def test_project_lq_triangular_input():
    T = np.tril(np.arange(1.0, 17.0).reshape(4, 4)) + 4 * np.eye(4)
    Hbar = np.hstack([T, np.zeros((4, 1))])
    sk = SketchedData(Hbar, 100, 1, 1, SketchConfig(k=1, l=1), 1.0)
    lqf = project_lq(sk, keep_q=True)
    np.testing.assert_allclose(lqf.L, T, atol=1e-12)
    np.testing.assert_allclose(lqf.Q, np.eye(4, 5), atol=1e-12)


def test_project_lq_reconstruction_and_blocks(nf):
    _, _, sk = nf
    lqf = project_lq(sk, keep_q=True)
    assert np.linalg.norm(lqf.L @ lqf.Q - sk.Hbar) <= 1e-10 * np.linalg.norm(sk.Hbar)
    k, m, p = 5, 2, 2
    assert lqf.R11.shape == (k * m, k * m) and lqf.R22.shape == (k * (m + p),) * 2
    assert lqf.R31.shape == (k * p, k * m) and lqf.R33.shape == (k * p, k * p)


def test_noise_free_r33_vanishes(nf):
    _, _, sk = nf
    lqf = project_lq(sk)
    assert np.linalg.norm(lqf.R33) <= 1e-8 * np.linalg.norm(sk.Hbar)


def test_zero_r32_gives_zero_zeta():
    k, m, p = 2, 1, 1
    L = np.tril(np.ones((8, 8)))
    L[6:, 2:6] = 0.0
    lqf = LqFactors(L, k, m, p)
    _, zeta = oblique_projection(lqf, np.ones((4, 10)))
    assert not zeta.any()


def test_zeta_range_equals_observability(nf):
    run, _, sk = nf
    lqf = project_lq(sk)
    _, zeta = oblique_projection(lqf, sk.Wp)
    theta = observability(run.model.A, run.model.C, 5)
    assert subspace_distance(zeta, theta, rank_tol=1e-8) <= 1e-8


def test_compressed_and_full_zeta_share_range(nf):
    run, _, sk = nf
    hs = build_hankel(run.ts, 5)
    full = LqFactors(lq(hs.H, keep_q=False).L, 5, 2, 2)
    _, zeta = oblique_projection(full, hs.Wp)
    _, zeta_bar = oblique_projection(project_lq(sk), sk.Wp)
    assert subspace_distance(zeta, zeta_bar, rank_tol=1e-8) <= 1e-6


def test_reduce_preserves_singular_values(nf):
    _, _, sk = nf
    _, zeta = oblique_projection(project_lq(sk), sk.Wp)
    R, S, V = reduce_and_svd(zeta)
    Sd = svd_econ(zeta).S
    assert np.max(np.abs(S - Sd[:S.size])) <= 1e-10 * Sd[0]
    np.testing.assert_allclose(V.T @ V, np.eye(V.shape[1]), atol=1e-10)


def test_reduce_zero_zeta():
    _, S, _ = reduce_and_svd(np.zeros((6, 40)))
    assert not S.any()
    assert estimate_order(S) == 0


def test_synthetic_rank(rng):
    theta = rng.standard_normal((12, 4))
    X = rng.standard_normal((4, 300))
    _, S, _ = reduce_and_svd(theta @ X)
    assert estimate_order(S, rel_tol=1e-8) == 4


def test_estimate_order_examples():
    assert estimate_order([5.0, 4.0, 1e-13, 1e-14]) == 2
    assert estimate_order(np.linspace(40, 1, 40), override=35) == 35
    with pytest.raises(ConfigError):
        estimate_order([1.0, 0.5], override=3)


def test_largest_gap_on_smooth_decay():
    S = np.concatenate([10.0 ** -np.linspace(0, 1, 5), 10.0 ** -np.linspace(4, 5, 5)])
    ratios = S[:-1] / S[1:]
    assert largest_gap(S) == int(np.argmax(ratios)) + 1 == 5


def test_theta_properties(nf):
    run, _, sk = nf
    _, zeta = oblique_projection(project_lq(sk), sk.Wp)
    _, S, V = reduce_and_svd(zeta)
    theta = estimate_theta(V, S, 3)
    np.testing.assert_allclose(theta.T @ theta, np.diag(S[:3]), atol=1e-10 * S[0])
    assert np.linalg.matrix_rank(theta) == 3
    true = observability(run.model.A, run.model.C, 5)
    assert subspace_distance(theta, true) <= 1e-8
    with pytest.raises(EmptyModelError):
        estimate_theta(V, S, 0)


def test_estimate_ac_exact_and_similar(rng):
    mdl = generate_system(SystemSpec(3, 1, 2, seed=5))
    theta = observability(mdl.A, mdl.C, 4)
    A, C = estimate_ac(theta, 2)
    np.testing.assert_allclose(A, mdl.A, atol=1e-10)
    np.testing.assert_allclose(C, mdl.C, atol=1e-10)
    T = rng.standard_normal((3, 3))
    A2, _ = estimate_ac(theta @ T, 2)
    np.testing.assert_allclose(A2, np.linalg.solve(T, mdl.A @ T), atol=1e-9)


def test_estimate_ac_scalar():
    A, C = estimate_ac(np.array([[2.0], [2.0 * 0.7]]), 1)
    assert A[0, 0] == pytest.approx(0.7, abs=1e-15) and C[0, 0] == 2.0


def test_estimate_ac_rank_deficient():
    with pytest.raises(IllConditionedError):
        estimate_ac(np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]), 1)


def test_psi_matches_toeplitz(nf):
    run, _, sk = nf
    psi = estimate_psi(project_lq(sk))
    m = run.model
    want = toeplitz(m.A, m.B, m.C, m.D, 5)
    assert np.max(np.abs(psi - want)) <= 1e-8 * max(1.0, np.abs(want).max())


def test_psi_strictly_proper():
    mdl = generate_system(SystemSpec(2, 1, 1, seed=2))
    mdl = StateSpaceModel(mdl.A, mdl.B, mdl.C, np.zeros((1, 1)), mdl.K, mdl.eta)
    run = simulate(mdl, make_input("white-gaussian", 1, 3000, 4))
    psi = estimate_psi(project_lq(sketch_stream(run.ts, SketchConfig(k=4, d=3))))
    assert np.abs(psi[:1, :1]).max() <= 1e-8


def test_psi_static_gain():
    rng = np.random.default_rng(8)
    D = rng.standard_normal((2, 2))
    u = rng.standard_normal((2, 5000))
    ts = TimeSeriesData(u, D @ u)
    psi = estimate_psi(project_lq(sketch_stream(ts, SketchConfig(k=3, d=5))))
    want = np.kron(np.eye(3), D)
    np.testing.assert_allclose(psi, want, atol=1e-8)


def test_psi_requires_excitation():
    y = np.random.default_rng(0).standard_normal((1, 500))
    ts = TimeSeriesData(np.zeros((1, 500)), y)
    with pytest.raises(ExcitationError) as info:
        run_fr2sid(ts, SketchConfig(k=3, d=2), order=1)
    assert info.value.stage == "estimate_psi"
    assert "[estimate_psi]" in str(info.value)


def test_estimate_bd_exact_and_basis(rng):
    mdl = generate_system(SystemSpec(3, 2, 2, seed=9))
    k = 4
    theta = observability(mdl.A, mdl.C, k)
    psi = toeplitz(mdl.A, mdl.B, mdl.C, mdl.D, k)
    B, D = estimate_bd(psi, theta, 2, 2)
    np.testing.assert_allclose(B, mdl.B, atol=1e-10)
    np.testing.assert_allclose(D, mdl.D, atol=1e-10)
    T = rng.standard_normal((3, 3))
    B2, _ = estimate_bd(psi, theta @ T, 2, 2)
    np.testing.assert_allclose(B2, np.linalg.solve(T, mdl.B), atol=1e-9)


def test_zero_d_recovered():
    mdl = generate_system(SystemSpec(3, 2, 2, seed=4))
    mdl = StateSpaceModel(mdl.A, mdl.B, mdl.C, np.zeros((2, 2)), mdl.K, mdl.eta)
    run = simulate(mdl, make_input("white-gaussian", 2, 4000, 3))
    ident = run_fr2sid(run.ts, SketchConfig(k=5, d=4), order=3)
    assert np.linalg.norm(ident.model.D) <= 1e-8


def test_noise_free_gives_zero_gain(nf):
    run, cfg, _ = nf
    with pytest.warns(NoiseDegenerateWarning):
        ident = run_fr2sid(run.ts, cfg, order=3)
    assert not ident.model.K.any() and not ident.model.eta.any()
    assert ident.diagnostics["noise_degenerate"]


def test_reference_shape_compression_size():
    run = noise_free_run(2, 3, 5, 5, 3000, seed=1)
    ident = run_fr2sid(run.ts, SketchConfig(k=3, d=5), order=2)
    assert ident.diagnostics["N_c"] == 65


def test_noise_free_n5_nee():
    run = noise_free_run(5, 6, 3, 3, 10_000, seed=2)
    ident = run_fr2sid(run.ts, SketchConfig(k=6, d=5))
    assert ident.model.n == 5
    assert nee(run.model.eigenvalues(), ident.model.eigenvalues()) <= 1e-10


def test_seed_stability_and_similarity_invariance():
    run = noise_free_run(4, 5, 2, 2, 6000, seed=3)
    val = simulate(run.model, make_input("white-gaussian", 2, 2000, 77))
    a = run_fr2sid(run.ts, SketchConfig(k=5, d=4, seed=1), order=4).model
    b = run_fr2sid(run.ts, SketchConfig(k=5, d=4, seed=2), order=4).model
    ea, eb = np.sort_complex(a.eigenvalues()), np.sort_complex(b.eigenvalues())
    assert np.abs(ea - eb).max() <= 1e-6
    Ga, Gb = a.markov(2 * 5 - 1), b.markov(2 * 5 - 1)
    assert np.linalg.norm(Ga - Gb) <= 1e-9 * np.linalg.norm(Ga)
    ev = run.model.eigenvalues()
    assert nee(ev, ea) == pytest.approx(nee(ev, eb), abs=1e-9)
    assert validation_mse(a, val.ts) == pytest.approx(validation_mse(b, val.ts), abs=1e-9)


def test_markov_error_end_to_end():
    run = noise_free_run(3, 4, 2, 2, 5000, seed=6)
    ident = run_fr2sid(run.ts, SketchConfig(k=4, d=4), order=3)
    assert markov_error(ident.model, run.model, 8) <= 1e-8


def test_scale_equivariance_noisy():
    run = noisy_run(2, 4, 1, 1, 20_000, seed=4, snr_db=20)
    c = 7.5
    scaled = TimeSeriesData(c * run.ts.u, c * run.ts.y)
    for q in (0, 1):
        cfg = SketchConfig(k=4, q=q, d=4, seed=5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            a = run_fr2sid(run.ts, cfg, order=2).model
            b = run_fr2sid(scaled, cfg, order=2).model
        np.testing.assert_allclose(b.A, a.A, atol=1e-9)
        np.testing.assert_allclose(b.D, a.D, atol=1e-9)
        np.testing.assert_allclose(b.C @ b.B, a.C @ a.B, rtol=1e-9)
        np.testing.assert_allclose(b.C @ b.K, a.C @ a.K, rtol=1e-9)
        np.testing.assert_allclose(b.eta, c ** 2 * a.eta, rtol=1e-9)
        np.testing.assert_allclose(b.markov(8), a.markov(8), atol=1e-9 * np.abs(a.markov(8)).max())


def test_scaled_hankel_option_matches():
    run = noisy_run(2, 4, 1, 1, 20_000, seed=8, snr_db=30)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = run_fr2sid(run.ts, SketchConfig(k=4, q=1, d=4), order=2).model
        b = run_fr2sid(run.ts, SketchConfig(k=4, q=1, d=4, scale_hankel=True), order=2).model
    np.testing.assert_allclose(b.eta, a.eta, rtol=1e-8)
    np.testing.assert_allclose(b.C @ b.K, a.C @ a.K, rtol=1e-8)


def test_order_estimated_noise_free():
    run = noise_free_run(3, 5, 2, 2, 5000, seed=9)
    ident = run_fr2sid(run.ts, SketchConfig(k=5, d=4))
    assert ident.model.n == 3 and ident.diagnostics["gap_order"] == 3


def _noise_average_ratio(N, seed=0):
    # white-noise driven SISO; correlation of compressed future innovations with compressed past data
    k = 5
    mdl = StateSpaceModel([[0.8]], [[1.0]], [[1.0]], [[0.0]], [[0.5]], [[1.0]])
    u = make_input("white-gaussian", 1, N + 2 * k - 1, seed)
    run = simulate(mdl, u, noise_var=1.0, seed=seed + 1)
    hs = build_hankel(run.ts, k)
    Ef = build_hankel(TimeSeriesData(run.e, run.e), k).Yf
    C = GaussianSketchSource(seed, 2 * k * 2 + 5).rows(0, hs.N)
    Efb, Wpb = Ef @ C, hs.Wp @ C
    full = np.linalg.norm(Ef @ hs.Wp.T) / (np.linalg.norm(Ef) * np.linalg.norm(hs.Wp))
    comp = np.linalg.norm(Efb @ Wpb.T) / (np.linalg.norm(Efb) * np.linalg.norm(Wpb))
    return full, comp


def _noise_average_mean(N, which):
    return float(np.mean([_noise_average_ratio(N, seed)[which] for seed in range(4)]))


def test_uncompressed_innovation_decorrelation():
    # expected to fall like 1/sqrt(N): a factor 2 from 25k to 100k
    assert _noise_average_mean(100_000, 0) < 0.75 * _noise_average_mean(25_000, 0)


@pytest.mark.xfail(strict=True, reason="a fixed-width Gaussian sketch keeps O(1/sqrt(N_c)) correlation "
                                       "regardless of N; see the decisions ledger")
def test_compressed_innovation_decorrelation():
    assert _noise_average_mean(100_000, 1) < 0.5 * _noise_average_mean(25_000, 1)
