import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dhg.evaluation import (
    bounded_inverse_check, bounded_inverse_report, derivative_error_norms, is_stationary_for, metric_values,
    metrics, residual_l2_norm, residual_samples,
)
from dhg.hgno import CriticNet
from dhg.measures import GaussianMeasure, stationary_tcc, stationary_wn
from dhg.oracle import QuadraticCritic, lq_for, oracle_control, reference_critic
from dhg.residual import preset

N = 40


@pytest.fixture(scope="module")
def heat():
    spec = preset("heat-tcc", N, N)
    return spec, reference_critic(spec), stationary_tcc(N)


def test_metric_examples(heat):
    spec, ref, mu = heat
    r = metrics(ref.value, ref.value, mu, 1000, 0)
    assert (r.ME, r.RMSE, r.RE1, r.RE2) == (0, 0, 0, 0)
    r = metrics(lambda X: ref.value(X) + 1, ref.value, mu, 1000, 0)
    assert r.ME == pytest.approx(1, abs=1e-12) and r.RMSE == pytest.approx(1, abs=1e-12)
    r = metrics(lambda X: 1.1 * ref.value(X), ref.value, mu, 1000, 0)
    assert r.RE1 == pytest.approx(0.1, rel=1e-12) and r.RE2 == pytest.approx(0.1, rel=1e-12)
    assert r.K == 1000 and not r.flags


def test_metric_chunking_and_seed(heat, monkeypatch):
    import dhg.evaluation as E

    _, ref, mu = heat
    f = lambda X: 0.9 * ref.value(X) + 0.01
    a = metrics(f, ref.value, mu, 5000, 3)
    monkeypatch.setattr(E, "CHUNK", 777)
    b = metrics(f, ref.value, mu, 5000, 3)
    assert a.RMSE == pytest.approx(b.RMSE, rel=1e-12) and a.RE1 == pytest.approx(b.RE1, rel=1e-12)
    assert metrics(f, ref.value, mu, 5000, 4).RMSE != a.RMSE


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.floats(-3, 3), st.integers(0, 1000))
def test_metric_properties(ref, c, seed):
    ref = np.asarray(ref)
    pred = ref + np.random.default_rng(seed).standard_normal(ref.size)
    r = metric_values(pred, ref)
    for v in (r.ME, r.RMSE):
        assert v >= 0
    assert r.RMSE >= r.ME - 1e-12
    perm = np.random.default_rng(seed).permutation(ref.size)
    r2 = metric_values(pred[perm], ref[perm])
    assert r2.RMSE == pytest.approx(r.RMSE, rel=1e-12)
    if np.sum(ref * ref) > 0:
        assert metric_values(c * ref, ref).RE2 == pytest.approx(abs(c - 1), rel=1e-9, abs=1e-12)


def test_undefined_flags_and_controls():
    r = metric_values(np.ones(3), np.zeros(3))
    assert np.isnan(r.RE1) and np.isnan(r.RE2) and len(r.flags) == 2
    assert r.to_dict()["RE2"] is None
    P, R = np.array([[3.0, 4.0], [0.0, 0.0]]), np.zeros((2, 2))
    r = metric_values(P, R)
    assert r.ME == 2.5 and r.RMSE == pytest.approx(np.sqrt(12.5))


def test_control_metrics_padding():
    spec = preset("heat-tcc", 10, 4, hjb=True)
    sol = lq_for(spec)
    mu = stationary_tcc(10)
    r = metrics(lambda X: oracle_control(sol, X)[:, :4], lambda X: oracle_control(sol, X), mu, 500, 0)
    from dhg.measures import sample
    tail = oracle_control(sol, sample(mu, 500, 0, "eval"))[:, 4:]
    assert r.RMSE == pytest.approx(np.sqrt(np.mean(np.sum(tail * tail, axis=1))), rel=1e-12)


def test_residual_norm_oracle(heat):
    spec, ref, mu = heat
    assert residual_l2_norm(ref, None, spec, mu, 10_000, 0) < 1e-8


def test_residual_norm_zero_net(heat):
    spec, _, mu = heat
    net = CriticNet.zeros(5, 3)
    v = mu.variances
    exact = np.sqrt(np.sum(v) ** 2 + 2 * np.sum(v * v))  # E|x|^4 for a diagonal Gaussian
    est = residual_l2_norm(net, None, spec, mu, 200_000, 1)
    assert est == pytest.approx(exact, rel=0.01)


def test_residual_norm_mc_scaling(heat):
    spec, _, mu = heat
    net = CriticNet.zeros(5, 3)
    small = [residual_l2_norm(net, None, spec, mu, 500, s) for s in range(40)]
    large = [residual_l2_norm(net, None, spec, mu, 2000, s + 100) for s in range(40)]
    ratio = np.std(small, ddof=1) / np.std(large, ddof=1)
    assert 1.0 < ratio < 3.0


def test_bounded_inverse_oracle_and_published_rows(heat):
    spec, ref, mu = heat
    rep = bounded_inverse_report(ref, spec, mu, 5000, 0)
    assert rep.passed and rep.certified and rep.rmse_vs_oracle < 1e-10
    assert bounded_inverse_check(0.01383, 0.01610, 1.0)[0]
    assert bounded_inverse_check(0.03810, 0.08631, 1.0)[0]
    assert not bounded_inverse_check(0.2, 0.1, 1.0, 0.001, 0.001)[0]


def test_bounded_inverse_applicability(heat):
    spec, ref, _ = heat
    assert is_stationary_for(spec, stationary_tcc(N))
    assert not is_stationary_for(spec, stationary_wn(N))
    assert not is_stationary_for(preset("heat-1d", N, N), stationary_wn(N))  # rank-one noise is not diagonal
    with pytest.warns(RuntimeWarning):
        rep = bounded_inverse_report(ref, spec, stationary_wn(N), 1000, 0)
    assert not rep.certified and not rep.passed


def test_bounded_inverse_holds_for_untrained_net(heat):
    spec, _, mu = heat
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rep = bounded_inverse_report(CriticNet.init(5, 8, seed=2), spec, mu, 20_000, 0)
    assert rep.passed and rep.rmse_vs_oracle <= rep.certified_bound


def test_derivative_errors_oracle_is_zero(heat):
    _, ref, mu = heat
    e = derivative_error_norms(ref, ref, mu, K=500)
    assert (e.value_L4, e.grad_L4, e.hess_mu_mu_4, e.hess_op_4) == (0, 0, 0, 0)


def test_derivative_errors_tail_bounds(heat):
    spec, ref, mu = heat
    d = 5
    net = CriticNet.init(d, 8, seed=1)
    e = derivative_error_norms(net, ref, mu, K=2000)
    assert e.hess_op_4 >= 2 * ref.M[d:].max()
    # zero network: the difference is -diag(2M); both Hessian norms are closed form
    z = derivative_error_norms(CriticNet.zeros(d, 3), ref, mu, K=100_000, seed=3)
    assert z.hess_op_4 == pytest.approx(2 * ref.M.max(), rel=1e-14)
    a = 4 * ref.M**2 * mu.variances
    assert z.hess_mu_mu_4 == pytest.approx((a.sum() ** 2 + 2 * np.sum(a * a)) ** 0.25, rel=0.01)


def test_derivative_errors_against_explicit_matrices(heat, rng):
    spec, ref, mu = heat
    net = CriticNet.init(3, 4, seed=4)
    small = GaussianMeasure(mu.variances[:6])
    ref6 = QuadraticCritic(ref.M[:6], ref.Q[:6], ref.R[:6])
    e = derivative_error_norms(net, ref6, small, K=50, seed=5)
    from dhg.measures import sample
    X = sample(small, 50, 5, "eval")
    H = sample(small, 50, 5, "eval2")
    ops, vecs = [], []
    for x, h in zip(X, H):
        D = -np.diag(2 * ref6.M)
        D[:3, :3] += net.hess(x[None])[0]
        ops.append(np.linalg.norm(D, 2))
        vecs.append(np.linalg.norm(D @ h))
    assert e.hess_op_4 == pytest.approx(np.mean(np.array(ops) ** 4) ** 0.25, rel=1e-10)
    assert e.hess_mu_mu_4 == pytest.approx(np.mean(np.array(vecs) ** 4) ** 0.25, rel=1e-10)
