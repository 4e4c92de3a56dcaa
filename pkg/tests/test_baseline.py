import numpy as np
import pytest
from _systems import noise_free_run

from fr2sid.baseline import BaselineConfig, estimate_bd_regression, memory_estimate, run_conventional
from fr2sid.datamodel import TimeSeriesData
from fr2sid.errors import ConfigError, InstabilityError, MemoryCapError
from fr2sid.identify import run_fr2sid
from fr2sid.metrics import IOCounter, nee
from fr2sid.sketch import SketchConfig

pytestmark = pytest.mark.filterwarnings("ignore::fr2sid.errors.NoiseDegenerateWarning")


@pytest.fixture(scope="module")
def siso2():
    return noise_free_run(2, 4, 1, 1, 10_000, seed=21)


def test_noise_free_n2_nee(siso2):
    ident = run_conventional(siso2.ts, BaselineConfig(k=4))
    assert ident.model.n == 2
    assert nee(siso2.model.eigenvalues(), ident.model.eigenvalues()) <= 1e-10


def test_agrees_with_randomized(siso2):
    a = run_conventional(siso2.ts, BaselineConfig(k=4, order=2)).model
    b = run_fr2sid(siso2.ts, SketchConfig(k=4, d=5), order=2).model
    np.testing.assert_allclose(np.sort_complex(a.eigenvalues()), np.sort_complex(b.eigenvalues()), atol=1e-6)
    Ga, Gb = a.markov(8), b.markov(8)
    assert np.abs(Ga - Gb).max() <= 1e-8 * max(1.0, np.abs(Ga).max())


def test_panel_count_does_not_matter(siso2):
    a = run_conventional(siso2.ts, BaselineConfig(k=4, d=1, order=2)).model
    b = run_conventional(siso2.ts, BaselineConfig(k=4, d=13, order=2)).model
    np.testing.assert_allclose(a.markov(8), b.markov(8), atol=1e-9)


def test_memory_cap_refusal():
    N = 1_000_000
    ts = TimeSeriesData(np.zeros((1, N + 7)), np.zeros((1, N + 7)))
    with pytest.raises(MemoryCapError) as info:
        run_conventional(ts, BaselineConfig(k=4, memory_cap=10**6))
    assert info.value.estimate_bytes == memory_estimate(4, 1, 1, N) > 10**6
    assert info.value.stage == "memory_check"


def test_config_validation(siso2):
    for bad in (dict(d=0), dict(bd_method="x"), dict(memory_cap=0)):
        with pytest.raises(ConfigError):
            run_conventional(siso2.ts, BaselineConfig(k=4, **bad))


def test_counter_charged(siso2):
    io = IOCounter()
    run_conventional(siso2.ts, BaselineConfig(k=4, d=5, order=2), io)
    assert io.words_read >= 16 * siso2.ts.n_samples


def test_regression_static_gain():
    rng = np.random.default_rng(3)
    u = rng.standard_normal((2, 400))
    D = np.array([[1.5, -0.5]])
    y = D @ u + 0.01 * rng.standard_normal((1, 400))
    B, Dhat = estimate_bd_regression(TimeSeriesData(u, y), np.zeros((0, 0)), np.zeros((1, 0)))
    want = np.linalg.lstsq(u.T, y.T, rcond=None)[0].T
    assert B.shape == (0, 2)
    np.testing.assert_allclose(Dhat, want, atol=1e-12)


def test_regression_reproduces_markov(siso2):
    mdl = siso2.model
    stats = {}
    B, D = estimate_bd_regression(siso2.ts, mdl.A, mdl.C, stats)
    np.testing.assert_allclose(mdl.C @ B, mdl.C @ mdl.B, atol=1e-8)
    np.testing.assert_allclose(D, mdl.D, atol=1e-8)
    np.testing.assert_allclose(stats["x0"], 0.0, atol=1e-8)


def test_regression_pipeline(siso2):
    ident = run_conventional(siso2.ts, BaselineConfig(k=4, order=2, bd_method="regression"))
    assert np.abs(ident.model.markov(8) - siso2.model.markov(8)).max() <= 1e-8
    assert ident.diagnostics["regression_flops"] > 0


def test_regression_flops_linear_in_samples(siso2):
    mdl = siso2.model
    s1, s2 = {}, {}
    half = TimeSeriesData(siso2.ts.u[:, :5000], siso2.ts.y[:, :5000])
    estimate_bd_regression(half, mdl.A, mdl.C, s1)
    estimate_bd_regression(siso2.ts, mdl.A, mdl.C, s2)
    assert s2["flops"] / s1["flops"] == pytest.approx(siso2.ts.n_samples / 5000, rel=1e-12)


def test_regression_rejects_unstable():
    ts = TimeSeriesData(np.ones((1, 5000)), np.ones((1, 5000)))
    with pytest.raises(InstabilityError, match="structural"):
        estimate_bd_regression(ts, [[1.5]], [[1.0]])
