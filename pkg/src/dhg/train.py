"""Residual-minimization training loops (DHGM / QHPDE critic, Hilbert actor-critic).

Sign convention: every ``grad_*`` function returns the *descent direction*
(the negative gradient of the loss), and ``optimizer_step`` adds the scaled
step to the parameters. See ``descent_step`` for the single place this is
applied.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .hgno import ActorNet, CriticNet
from .measures import GaussianMeasure, measure_by_name, sample
from .residual import ProblemSpec, assemble, controls_for, dhgm_coefficients, preset, running_cost
from .spectral import ConfigError, probe_point

log = logging.getLogger(__name__)

DIVERGENCE_RESIDUAL = 1e9

# (constant, exponent) for lr(t) = c / (20 + t^e)
SCHEDULES = {
    "dhgm-critic": (5.0, 0.5),
    "dhgm-actor": (5.0, 0.75),
    "qhpde-critic": (0.05, 0.5),
    "qhpde-actor": (0.05, 0.75),
}


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


def lr(t: int, schedule) -> float:
    """c / (20 + t^e) for a named schedule or an explicit (c, e) pair."""
    c, e = SCHEDULES[schedule] if isinstance(schedule, str) else schedule
    if t < 0:
        raise ValueError("t must be >= 0")
    return c / (20.0 + float(t) ** e)


# --- Adam ------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n))

    def to_arrays(self) -> dict:
        return {"m": self.m, "v": self.v, "step": np.array(self.step),
                "consts": np.array([self.beta1, self.beta2, self.eps])}

    @classmethod
    def from_arrays(cls, a) -> "OptimizerState":
        b1, b2, eps = a["consts"]
        return cls(np.array(a["m"]), np.array(a["v"]), int(a["step"]), float(b1), float(b2), float(eps))


def optimizer_step(state: OptimizerState, params: np.ndarray, direction: np.ndarray, rate: float,
                   iteration: int | None = None):
    """Bias-corrected adaptive-moment step along a descent direction.

    Returns new (state, params); inputs are not modified.
    """
    if not np.all(np.isfinite(direction)):
        raise TrainingDiverged("non-finite gradient", state.step if iteration is None else iteration)
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * direction
    v = state.beta2 * state.v + (1.0 - state.beta2) * direction * direction
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    new_params = params + rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return OptimizerState(m, v, step, state.beta1, state.beta2, state.eps), new_params


def descent_step(net, state: OptimizerState, direction: np.ndarray, rate: float, iteration: int):
    state, theta = optimizer_step(state, net.flat(), direction, rate, iteration)
    if not np.all(np.isfinite(theta)):
        raise TrainingDiverged("non-finite parameters", iteration)
    return net.with_params(theta), state


# --- gradients ---------------------------------------------------------------

def _critic_pass(net: CriticNet, spec: ProblemSpec, X, actor=None):
    v, G = net.value_grad(X)
    S = spec.noise.cov(net.d)
    tr = net.trace(X, S) if not spec.noise.empty else np.zeros(X.shape[0])
    U = controls_for(spec, X, actor)
    return assemble(spec, X, v, G, tr, U), G, U, S


def grad_dhgm(net: CriticNet, spec: ProblemSpec, X, actor: ActorNet | None = None, return_residual=False):
    """-(1/M) sum_m F(x_m) grad_theta F(x_m)."""
    X = np.atleast_2d(X)
    F, G, U, S = _critic_pass(net, spec, X, actor)
    c_value, P = dhgm_coefficients(spec, X, G, U)
    w = -F / X.shape[0]
    out = net.param_grad(X, c_value=c_value * w, c_grad=w[:, None] * P,
                         c_hess=None if spec.noise.empty else w, S=S)
    return (out, F) if return_residual else out


def grad_qhpde(net: CriticNet, spec: ProblemSpec, X, actor: ActorNet | None = None, return_residual=False):
    """-(1/M) sum_m F(x_m) grad_theta(-v(x_m)); first-order parameter derivatives only."""
    X = np.atleast_2d(X)
    F = _critic_pass(net, spec, X, actor)[0]
    out = net.param_grad(X, c_value=F / X.shape[0])
    return (out, F) if return_residual else out


def grad_actor(critic: CriticNet, actor: ActorNet, spec: ProblemSpec, X) -> np.ndarray:
    """-(1/M) sum_m grad_phi [<Dv, u> + lam |u|^2](x_m), the only phi-dependent terms."""
    if not spec.is_hjb:
        raise ConfigError(f"actor training needs an HJB problem, got {spec.kind}")
    X = np.atleast_2d(X)
    _, G = critic.value_grad(X)
    U = actor.control(X)
    Wt = 2.0 * spec.lam * U
    k = min(actor.p, G.shape[1])
    Wt[:, :k] += G[:, :k]
    return actor.param_grad(X, -Wt / X.shape[0])


GRADIENTS = {"dhgm": grad_dhgm, "qhpde": grad_qhpde}


# --- configuration ----------------------------------------------------------

@dataclass
class TrainConfig:
    problem: str = "heat-tcc"
    hjb: bool = False
    gradient: str = "qhpde"
    d: int = 10
    p: int | None = None
    N: int = 250
    width: int = 128
    actor_width: int | None = None
    T: int = 1000
    M: int = 256
    seed: int = 0
    measure: str | None = None
    critic_schedule: str | list | None = None
    actor_schedule: str | list | None = None
    gamma: float = 1.0
    lam: float = 1.0
    log_every: int = 1000
    eval_batch: int = 2000
    checkpoint_every: int = 0
    probes: list = field(default_factory=list)

    def __post_init__(self):
        if self.gradient not in GRADIENTS:
            raise ConfigError(f"gradient must be one of {sorted(GRADIENTS)}, got {self.gradient!r}")
        for k in ("T",):
            if getattr(self, k) < 0:
                raise ConfigError(f"{k} must be >= 0")
        for k in ("M", "N", "d", "width", "log_every", "eval_batch"):
            if getattr(self, k) <= 0:
                raise ConfigError(f"{k} must be positive")
        if self.d > self.N:
            raise ConfigError("d must not exceed N")

    @property
    def critic_rate(self):
        s = self.critic_schedule or f"{self.gradient}-critic"
        return s if isinstance(s, str) else tuple(s)

    @property
    def actor_rate(self):
        s = self.actor_schedule or f"{self.gradient}-actor"
        return s if isinstance(s, str) else tuple(s)

    def spec(self) -> ProblemSpec:
        return preset(self.problem, self.N, self.d, hjb=self.hjb, gamma=self.gamma, lam=self.lam)

    def mu(self) -> GaussianMeasure:
        return measure_by_name(self.measure or self.spec().measure, self.N)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    """Everything needed to continue a run bit-for-bit."""

    t: int
    critic: CriticNet
    critic_opt: OptimizerState
    actor: ActorNet | None = None
    actor_opt: OptimizerState | None = None


def init_state(cfg: TrainConfig, with_actor: bool) -> TrainState:
    critic = CriticNet.init(cfg.d, cfg.width, cfg.seed)
    actor = actor_opt = None
    if with_actor:
        actor = ActorNet.init(cfg.d, cfg.actor_width or cfg.width, cfg.p or cfg.d, cfg.seed)
        actor_opt = OptimizerState.zeros(actor.n_params)
    return TrainState(0, critic, OptimizerState.zeros(critic.n_params), actor, actor_opt)


LOG_FIELDS = ["iteration", "wallclock_s", "lr", "residual_l2_estimate", "grad_norm"]


def _log_row(cfg, st, spec, X_eval, probes, t0, rate, gnorm):
    F = assemble(spec, X_eval, *_terms(st.critic, spec, X_eval), controls_for(spec, X_eval, st.actor))
    if not np.all(np.isfinite(F)) or np.max(np.abs(F)) > DIVERGENCE_RESIDUAL:
        raise TrainingDiverged("residual blow-up", st.t)
    row = {"iteration": st.t, "wallclock_s": time.perf_counter() - t0, "lr": rate,
           "residual_l2_estimate": float(np.sqrt(np.mean(F * F))), "grad_norm": gnorm}
    for name, x in probes:
        row[f"value_{name}"] = st.critic.value(x)
    return row


def _terms(net, spec, X):
    v, G = net.value_grad(X)
    tr = net.trace(X, spec.noise.cov(net.d)) if not spec.noise.empty else np.zeros(X.shape[0])
    return v, G, tr


def run(cfg: TrainConfig, state: TrainState | None = None, until: int | None = None,
        on_checkpoint=None, frozen_actor: bool = False):
    """Advance a run from ``state`` (fresh if None) to iteration ``until`` (default T).

    Critic batches are rows [t M, (t+1) M) of the "critic" stream; actor batches
    come from the "actor" stream. Returns (state, log rows).
    """
    spec = cfg.spec()
    mu = cfg.mu()
    with_actor = spec.is_hjb and not frozen_actor
    if state is None:
        state = init_state(cfg, with_actor or spec.is_hjb)
    until = cfg.T if until is None else until
    grad_fn = GRADIENTS[cfg.gradient]
    X_eval = sample(mu, cfg.eval_batch, cfg.seed, "eval2")
    probes = [(name, probe_point(name, cfg.N)) for name in cfg.probes]
    rows = []
    t0 = time.perf_counter()
    st = state
    while st.t < until:
        t = st.t
        rate = lr(t, cfg.critic_rate)
        X = sample(mu, cfg.M, cfg.seed, "critic", start=t * cfg.M)
        direction, F = grad_fn(st.critic, spec, X, actor=st.actor, return_residual=True)
        if not np.all(np.isfinite(F)) or np.max(np.abs(F)) > DIVERGENCE_RESIDUAL:
            raise TrainingDiverged("residual blow-up", t)
        critic, copt = descent_step(st.critic, st.critic_opt, direction, rate, t)
        actor, aopt = st.actor, st.actor_opt
        if with_actor:
            Xa = sample(mu, cfg.M, cfg.seed, "actor", start=t * cfg.M)
            adir = grad_actor(critic, actor, spec, Xa)
            actor, aopt = descent_step(actor, aopt, adir, lr(t, cfg.actor_rate), t)
        st = TrainState(t + 1, critic, copt, actor, aopt)
        if st.t % cfg.log_every == 0 or st.t == until:
            row = _log_row(cfg, st, spec, X_eval, probes, t0, rate, float(np.linalg.norm(direction)))
            rows.append(row)
            log.info("iter %d residual %.4g", st.t, row["residual_l2_estimate"])
        if on_checkpoint and cfg.checkpoint_every and st.t % cfg.checkpoint_every == 0:
            on_checkpoint(st)
    return st, rows


def train_critic(cfg: TrainConfig, state: TrainState | None = None):
    """Critic training with a fixed control: returns (critic, log rows).

    On an HJB problem the actor is held at its initial value; use
    ``train_actor_critic`` to train both.
    """
    st, rows = run(cfg, state, frozen_actor=True)
    return st.critic, rows


def train_actor_critic(cfg: TrainConfig, state: TrainState | None = None):
    """Alternating critic and actor steps on fresh batches: returns (critic, actor, log rows)."""
    if not cfg.spec().is_hjb:
        raise ConfigError("actor-critic training needs hjb=true")
    st, rows = run(cfg, state)
    return st.critic, st.actor, rows
