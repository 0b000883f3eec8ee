import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dhg.measures import (
    GaussianMeasure, SPDEDynamics, SimulationDiverged, burgers_training_measure, empirical_stationary,
    load_variance_csv, measure_by_name, moment_norm, normals, sample, stationary_tcc, stationary_wn,
)
from dhg.residual import trace_class_noise
from dhg.spectral import ConfigError


def test_preset_variances():
    tcc = stationary_tcc(10).variances
    assert tcc[0] == 2.0 and tcc[1] == 1 / 8 and tcc[9] == pytest.approx(2e-4, rel=1e-14)
    wn = stationary_wn(4).variances
    assert list(wn[[0, 1, 3]]) == [2.0, 0.5, 0.125]
    b = burgers_training_measure(3).variances
    assert list(b) == [1.0, 1 / 16, 1 / 81]


def test_zero_variance_is_mean():
    mu = GaussianMeasure(np.zeros(4), mean=np.array([1.0, -2.0, 0.5, 0.0]))
    X = sample(mu, 7, seed=3)
    assert np.all(X == mu.mean)


def test_single_mode_variance():
    mu = GaussianMeasure(np.array([1.0, 0.0, 0.0]))
    X = sample(mu, 100_000, seed=1)
    assert X[:, 0].var() == pytest.approx(1.0, rel=0.03)
    assert np.all(X[:, 1:] == 0.0)


@given(st.integers(0, 2**63), st.integers(1, 50), st.integers(0, 1000))
def test_rows_independent_of_batching(seed, width, start):
    full = normals(seed, "critic", start, 6, width)
    parts = np.vstack([normals(seed, "critic", start + i, 1, width) for i in range(6)])
    assert np.array_equal(full, parts)


def test_streams_and_seeds_differ():
    a = normals(0, "critic", 0, 4, 5)
    assert not np.array_equal(a, normals(0, "actor", 0, 4, 5))
    assert not np.array_equal(a, normals(1, "critic", 0, 4, 5))
    assert np.array_equal(a, normals(0, "critic", 0, 4, 5))


def test_decorrelation():
    mu = stationary_wn(6)
    K = 20_000
    X = sample(mu, K, seed=7) / np.sqrt(mu.variances)
    C = np.corrcoef(X.T)
    assert np.max(np.abs(C - np.eye(6))) < 5 / np.sqrt(K)
    lag = np.array([np.corrcoef(X[:-1, n], X[1:, n])[0, 1] for n in range(6)])
    assert np.max(np.abs(lag)) < 3 / np.sqrt(K)


def test_moment_norm():
    m = np.array([3.0, 4.0])
    assert moment_norm(GaussianMeasure(np.zeros(2), m), 3, 10, 0) == pytest.approx(5.0)
    mu = stationary_tcc(200)
    assert moment_norm(mu, 2, 50_000, 2) == pytest.approx(np.sqrt(2 * np.pi**4 / 90), rel=0.02)
    X = sample(mu, 5000, 4)
    qs = [moment_norm(mu, q, 0, 0, samples=X) for q in (1, 2, 3, 4)]
    assert all(a <= b + 1e-12 for a, b in zip(qs, qs[1:]))
    with pytest.raises(ValueError):
        moment_norm(mu, 0.5, 10, 0)


def test_measure_validation(tmp_path):
    with pytest.raises(ConfigError):
        GaussianMeasure(np.array([1.0, -1.0]))
    with pytest.raises(ConfigError):
        measure_by_name("nope", 3)
    p = tmp_path / "v.csv"
    p.write_text("n,v\n1,0.5\n3,0.25\n")
    mu = measure_by_name("custom", 4, load_variance_csv(str(p)))
    assert list(mu.variances) == [0.5, 0.0, 0.25, 0.0]
    assert mu.truncate(2).N == 2


def test_empirical_stationary_zero():
    X = empirical_stationary(SPDEDynamics(8, burgers=False), 1e-3, 50, 3, 0)
    assert np.all(X == 0)


def test_empirical_stationary_heat_variance():
    N = 8
    dyn = SPDEDynamics(N, noise_columns=trace_class_noise(N).columns, burgers=False)
    X = empirical_stationary(dyn, 0.05, 400, 2000, seed=3)  # t = 20, lam_1 t = 5
    target = stationary_tcc(N).variances
    assert np.all(np.abs(X.var(axis=0)[:5] / target[:5] - 1) < 0.10)
    assert np.array_equal(X, empirical_stationary(dyn, 0.05, 400, 2000, seed=3))


def test_empirical_stationary_divergence():
    dyn = SPDEDynamics(4, control=np.array([1e9, 0, 0, 0]), burgers=False)
    with pytest.raises(SimulationDiverged, match="dt"):
        empirical_stationary(dyn, 0.1, 10, 2, 0)
    with pytest.raises(ConfigError):
        empirical_stationary(SPDEDynamics(40), 0.1, 1, 1, 0, integrator="euler")
