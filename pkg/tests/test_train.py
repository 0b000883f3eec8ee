import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dhg.hgno import ActorNet, CriticNet
from dhg.measures import sample
from dhg.oracle import lq_for, oracle_control
from dhg.residual import preset, residual_batch
from dhg.spectral import ConfigError
from dhg.train import (
    OptimizerState, TrainConfig, TrainingDiverged, grad_actor, grad_dhgm, grad_qhpde, init_state, lr,
    optimizer_step, run, train_actor_critic, train_critic,
)
from fdcheck import expected_actor, expected_dhgm, expected_qhpde, rel_err, toy_instance

PROBLEMS = ["heat-tcc", "heat-1d", "heat-det", "burgers-1d", "burgers-det"]


def spec_maker(name, hjb=False):
    return lambda N, d, rng: preset(name, N, d, hjb=hjb, gamma=rng.uniform(0.5, 2), lam=rng.uniform(0.5, 2))


def test_lr_examples():
    assert lr(0, "dhgm-critic") == 0.25
    assert lr(0, "qhpde-critic") == 0.0025
    assert lr(10_000, "qhpde-critic") == pytest.approx(0.05 / 120, rel=1e-15)
    assert lr(16, "dhgm-actor") == 5 / 28
    assert lr(4, (1.0, 0.5)) == 1 / 22
    with pytest.raises(ValueError):
        lr(-1, "dhgm-critic")


@given(st.sampled_from(PROBLEMS), st.booleans(), st.integers(0, 2**32 - 1))
def test_grad_dhgm_fd(name, hjb, seed):
    rng = np.random.default_rng(seed)
    spec, net, X = toy_instance(rng, spec_maker(name, hjb))
    assert rel_err(grad_dhgm(net, spec, X), expected_dhgm(net, spec, X)) < 1e-5


@given(st.sampled_from(PROBLEMS), st.integers(0, 2**32 - 1))
def test_grad_qhpde_fd(name, seed):
    rng = np.random.default_rng(seed)
    spec, net, X = toy_instance(rng, spec_maker(name))
    assert rel_err(grad_qhpde(net, spec, X), expected_qhpde(net, spec, X)) < 1e-5


@given(st.integers(0, 2**32 - 1))
def test_grad_actor_fd(seed):
    rng = np.random.default_rng(seed)
    spec, net, X = toy_instance(rng, spec_maker("heat-tcc", hjb=True))
    actor = ActorNet.init(net.d, int(rng.integers(1, 8)), int(rng.integers(1, net.d + 1)), seed=seed % 97)
    assert rel_err(grad_actor(net, actor, spec, X), expected_actor(net, actor, spec, X)) < 1e-5
    assert rel_err(grad_dhgm(net, spec, X, actor), expected_dhgm(net, spec, X, actor)) < 1e-5


def test_zero_residual_gives_zero_direction():
    # the network equals the exact solution only in 1-D with zero noise at x=0: F = -gamma v + cost = 0
    spec = preset("heat-det", 3, 1)
    net = CriticNet.zeros(1, 2)
    X = np.zeros((4, 3))
    assert not residual_batch(net, None, spec, X).any()
    assert not grad_dhgm(net, spec, X).any()
    assert not grad_qhpde(net, spec, X).any()


def test_batch_structure(rng):
    spec = preset("heat-tcc", 6, 3)
    net = CriticNet.init(3, 5, seed=1)
    x = rng.standard_normal((1, 6))
    for g in (grad_dhgm, grad_qhpde):
        assert np.allclose(g(net, spec, np.repeat(x, 3, axis=0)), g(net, spec, x), atol=1e-14)
    X = rng.standard_normal((8, 6))
    for g in (grad_dhgm, grad_qhpde):
        halves = 0.5 * (g(net, spec, X[:4]) + g(net, spec, X[4:]))
        assert np.allclose(g(net, spec, X), halves, atol=1e-13)


def test_qhpde_two_point_expansion(rng):
    spec = preset("heat-1d", 5, 2)
    net = CriticNet.init(2, 3, seed=5)
    X = rng.standard_normal((2, 5))
    F = residual_batch(net, None, spec, X)
    by_hand = 0.5 * sum(F[m] * net.param_grad(X[m:m + 1], c_value=1.0) for m in range(2))
    assert np.allclose(grad_qhpde(net, spec, X), by_hand, atol=1e-14)


def test_qhpde_linear_in_residual(rng, monkeypatch):
    import dhg.train as T

    spec = preset("heat-tcc", 5, 2)
    net = CriticNet.init(2, 3, seed=5)
    X = rng.standard_normal((4, 5))
    base = grad_qhpde(net, spec, X)
    orig = T.assemble
    monkeypatch.setattr(T, "assemble", lambda *a, **k: 3.0 * orig(*a, **k))
    assert np.allclose(grad_qhpde(net, spec, X), 3.0 * base, rtol=1e-13)


def test_qhpde_first_order_only(monkeypatch):
    import dhg.hgno as H

    calls = []
    orig = H.tanh_derivs
    monkeypatch.setattr(H, "tanh_derivs", lambda z, order=3: calls.append(order) or orig(z, order))
    spec = preset("heat-det", 5, 2)
    grad_qhpde(CriticNet.init(2, 3), spec, np.ones((2, 5)))
    assert max(calls) <= 1


def test_actor_gradient_examples(rng):
    spec = preset("heat-tcc", 4, 2, hjb=True)
    critic = CriticNet.init(2, 3, seed=2)
    # actor output equal to -grad/(2 lam): place the critic's own gradient into an actor by fitting biases at one point
    x = rng.standard_normal((1, 4))
    G = critic.value_grad(x)[1][0]
    actor = ActorNet(np.zeros((3, 2)), np.zeros(3), np.zeros((2, 3)), -G / (2 * spec.lam))
    assert np.linalg.norm(grad_actor(critic, actor, spec, x)) < 1e-14
    big = preset("heat-tcc", 4, 2, hjb=True, lam=1e3)
    actor = ActorNet.init(2, 3, 2, seed=3)
    X = rng.standard_normal((5, 4))
    g = grad_actor(critic, actor, big, X)
    pure = actor.param_grad(X, -2e3 * actor.control(X) / 5)
    assert rel_err(g, pure) < 1e-3
    with pytest.raises(ConfigError):
        grad_actor(critic, actor, preset("heat-tcc", 4, 2), X)


def test_optimizer_properties():
    st0 = OptimizerState.zeros(3)
    p = np.array([1.0, -2.0, 3.0])
    st1, p1 = optimizer_step(st0, p, np.zeros(3), 0.1)
    assert np.array_equal(p1, p) and st1.step == 1
    st = st0
    q = p.copy()
    for _ in range(200):
        st, q_new = optimizer_step(st, q, np.array([2.0, -0.5, 1e-3]), 0.01)
        delta, q = q_new - q, q_new
    assert np.allclose(np.abs(delta), 0.01, rtol=1e-3)
    assert np.array_equal(np.sign(delta), [1, -1, 1])
    with pytest.raises(TrainingDiverged, match="iteration 7"):
        optimizer_step(st0, p, np.array([np.nan, 0, 0]), 0.1, iteration=7)
    arrays = st.to_arrays()
    back = OptimizerState.from_arrays(arrays)
    assert back.step == st.step and np.array_equal(back.m, st.m)


def small_cfg(**kw):
    base = dict(problem="heat-tcc", d=3, width=8, N=20, T=40, M=16, log_every=10, eval_batch=64)
    base.update(kw)
    return TrainConfig(**base)


def test_T_zero_returns_init():
    cfg = small_cfg(T=0)
    net, rows = train_critic(cfg)
    assert np.array_equal(net.flat(), CriticNet.init(3, 8, 0).flat()) and rows == []


def test_rate_zero_iteration_is_identity():
    cfg = small_cfg(T=3, critic_schedule=[1e-300, 0.0])
    net, _ = train_critic(cfg)
    assert np.allclose(net.flat(), CriticNet.init(3, 8, 0).flat(), atol=1e-290)


def test_determinism_and_resume():
    cfg = small_cfg(gradient="dhgm")
    a, rows = train_critic(cfg)
    b, _ = train_critic(cfg)
    assert np.array_equal(a.flat(), b.flat())
    mid, _ = run(cfg, until=17)
    c, _ = run(cfg, state=mid)
    assert np.array_equal(a.flat(), c.critic.flat())
    assert [r["iteration"] for r in rows] == [10, 20, 30, 40]
    assert not np.array_equal(a.flat(), train_critic(small_cfg(gradient="dhgm", seed=1))[0].flat())


def test_frozen_zero_actor_matches_kolmogorov():
    kol, _ = train_critic(small_cfg())
    st = init_state(small_cfg(hjb=True), with_actor=True)
    st.actor = ActorNet.zeros(3, 8, 3)
    hjb, _ = train_critic(small_cfg(hjb=True), state=st)
    assert np.array_equal(kol.flat(), hjb.flat())


def test_actor_critic_requires_hjb():
    with pytest.raises(ConfigError):
        train_actor_critic(small_cfg())


def test_config_validation():
    with pytest.raises(ConfigError):
        small_cfg(gradient="sgd")
    with pytest.raises(ConfigError):
        small_cfg(M=0)
    with pytest.raises(ConfigError):
        small_cfg(d=30)


def test_divergence_surfaced():
    cfg = small_cfg(gradient="dhgm", critic_schedule=[1e12, 0.0], T=50)
    with pytest.raises(TrainingDiverged) as info:
        train_critic(cfg)
    assert info.value.iteration >= 0


def test_toy_critic_smoke():
    cfg = TrainConfig(problem="heat-tcc", d=3, width=32, N=250, T=20_000, M=256, log_every=100, eval_batch=2000)
    _, rows = train_critic(cfg)
    res = {r["iteration"]: r["residual_l2_estimate"] for r in rows}
    assert res[20_000] < res[100] / 10


def test_toy_actor_critic_trend():
    cfg = TrainConfig(problem="heat-tcc", hjb=True, d=3, width=16, N=50, T=3000, M=64, log_every=500)
    spec = cfg.spec()
    sol = lq_for(spec)
    X = sample(cfg.mu(), 2000, 99, "probe")
    st, errs = None, []
    for until in range(300, 3001, 300):
        st, _ = run(cfg, st, until=until)
        U = st.actor(X, cfg.N) - oracle_control(sol, X)
        errs.append(np.sqrt(np.mean(np.sum(U * U, axis=1))))
    smooth = np.convolve(errs, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(smooth) < 0)
    critic, actor, _ = train_actor_critic(cfg)
    assert np.array_equal(actor.flat(), st.actor.flat()) and np.array_equal(critic.flat(), st.critic.flat())
