"""PDE residuals F v(x) for the heat and Burgers problems.

All residuals share one shape

    F v(x) = -gamma v + sum_{n<=d} (Dv)_n a_n(x) + cost(x) + 1/2 Tr[Q D^2 v] (+ inf term)

where a(x) is the drift (-lam_n x_n + u_n, plus B(x)_n for Burgers). The
pairing with the unbounded drift only needs n <= d because Dv lives on the
first d modes and A is diagonal there. The running cost uses every sampled
coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .spectral import ConfigError, burgers_B, dirichlet_energy, eigenvalues, modes

KINDS = ("heat_kolmogorov", "heat_hjb", "burgers_kolmogorov", "burgers_hjb")


@dataclass(frozen=True)
class NoiseModel:
    """Columns s_i = Q^{1/2} xi_i as rows of a (k, N) array; k = 0 means Q = 0."""

    columns: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        c = np.asarray(self.columns, dtype=np.float64)
        object.__setattr__(self, "columns", c.reshape(-1, c.shape[-1]) if c.size else np.zeros((0, 0)))

    @property
    def empty(self) -> bool:
        return self.columns.size == 0

    def cov(self, d: int) -> np.ndarray:
        """sum_i (P_d s_i)(P_d s_i)^T as a d x d matrix."""
        if self.empty:
            return np.zeros((d, d))
        C = np.zeros((self.columns.shape[0], d))
        m = min(d, self.columns.shape[1])
        C[:, :m] = self.columns[:, :m]
        return C.T @ C

    def diag(self, N: int) -> np.ndarray:
        """Per-mode variance sigma_n^2 = <Q e_n, e_n>, n = 1..N."""
        out = np.zeros(N)
        if not self.empty:
            m = min(N, self.columns.shape[1])
            out[:m] = np.sum(self.columns[:, :m] ** 2, axis=0)
        return out


def no_noise() -> NoiseModel:
    return NoiseModel(np.zeros((0, 0)), "none")


def trace_class_noise(N: int) -> NoiseModel:
    """Q = diag(1/n^2): column n is e_n / n."""
    return NoiseModel(np.diag(1.0 / modes(N)), "tcc")


def one_d_noise(N: int) -> NoiseModel:
    """Rank one, Q^{1/2} e_1 = 1/sqrt(2 pi): coefficients 2 sqrt(2)/(n pi) on odd n."""
    n = modes(N)
    s = np.where(n % 2 == 1, 2.0 * np.sqrt(2.0) / (n * np.pi), 0.0)
    return NoiseModel(s[None, :], "1d")


def noise_by_name(name: str, N: int) -> NoiseModel:
    table = {"none": no_noise, "tcc": trace_class_noise, "1d": one_d_noise}
    if name not in table:
        raise ConfigError(f"unknown noise {name!r}")
    return table[name](N) if name != "none" else no_noise()


@dataclass(frozen=True)
class ProblemSpec:
    kind: str
    N: int
    d: int
    gamma: float = 1.0
    lam: float = 1.0
    xbar: np.ndarray | None = None
    noise: NoiseModel = field(default_factory=no_noise)
    control: np.ndarray | None = None
    measure: str = "tcc"
    name: str = "custom"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown problem kind {self.kind!r}")
        if not self.gamma > 0:
            raise ConfigError("gamma must be > 0")
        if not self.lam > 0:
            raise ConfigError("lambda must be > 0")
        if not 1 <= self.d <= self.N:
            raise ConfigError(f"need 1 <= d <= N, got d={self.d}, N={self.N}")
        for attr in ("xbar", "control"):
            val = getattr(self, attr)
            v = np.zeros(self.N) if val is None else np.asarray(val, dtype=np.float64)
            if v.size < self.N:
                v = np.concatenate([v, np.zeros(self.N - v.size)])
            object.__setattr__(self, attr, v[: self.N])

    @property
    def is_hjb(self) -> bool:
        return self.kind.endswith("hjb")

    @property
    def is_burgers(self) -> bool:
        return self.kind.startswith("burgers")

    def with_kind(self, kind: str) -> "ProblemSpec":
        return replace(self, kind=kind)


# name -> (family, noise, measure)
PRESETS = {
    "heat-tcc": ("heat", "tcc", "tcc"),
    "heat-1d": ("heat", "1d", "wn"),
    "heat-det": ("heat", "none", "tcc"),
    "burgers-1d": ("burgers", "1d", "burgers4"),
    "burgers-det": ("burgers", "none", "burgers4"),
}


def preset(name: str, N: int, d: int, hjb: bool = False, gamma: float = 1.0, lam: float = 1.0) -> ProblemSpec:
    """One of the five reference problems with lambda = gamma = 1, xbar = 0, u = 0 by default."""
    if name not in PRESETS:
        raise ConfigError(f"unknown problem preset {name!r}; choose from {sorted(PRESETS)}")
    family, noise, measure = PRESETS[name]
    kind = f"{family}_{'hjb' if hjb else 'kolmogorov'}"
    return ProblemSpec(kind, N, d, gamma, lam, noise=noise_by_name(noise, N), measure=measure, name=name)


# --- core ----------------------------------------------------------------

def drift(spec: ProblemSpec, X: np.ndarray, U: np.ndarray | None = None) -> np.ndarray:
    """a(x) = -lam_n x_n (+ B(x)_n) + u_n on all N modes, shape (M, N)."""
    X = np.atleast_2d(X)
    a = -eigenvalues(X.shape[1]) * X
    if spec.is_burgers:
        a = a + burgers_B(X)
    if U is not None:
        a[:, : U.shape[1]] += U[:, : X.shape[1]]
    return a


def running_cost(spec: ProblemSpec, X: np.ndarray, U: np.ndarray | None = None) -> np.ndarray:
    X = np.atleast_2d(X)
    if spec.is_burgers:
        c = dirichlet_energy(X)
    else:
        diff = X - spec.xbar[: X.shape[1]]
        c = np.sum(diff * diff, axis=1)
    if U is not None:
        c = c + spec.lam * np.sum(U * U, axis=1)
    return c


def controls_for(spec: ProblemSpec, X: np.ndarray, actor=None) -> np.ndarray | None:
    """Control coefficients used in the residual, or None for the closed-form inf."""
    X = np.atleast_2d(X)
    if spec.is_hjb:
        return None if actor is None else np.atleast_2d(actor.control(X))
    return np.broadcast_to(spec.control[: X.shape[1]], X.shape)


def assemble(spec: ProblemSpec, X, values, grads, traces, U=None) -> np.ndarray:
    """Residual per row from critic values (M,), grads (M, d) and trace terms (M,).

    ``U`` (M, p) is the control; None on an HJB problem selects the
    closed-form infimum inf_u{<Dv,u> + lam |u|^2} = -|Dv|^2 / (4 lam).
    """
    X = np.atleast_2d(X)
    d = grads.shape[1]
    if X.shape[1] < d:
        raise ValueError(f"sample truncated at {X.shape[1]} < critic dimension {d}")
    F = -spec.gamma * values + np.sum(grads * drift(spec, X, U)[:, :d], axis=1)
    F = F + running_cost(spec, X, U) + traces
    if spec.is_hjb and U is None:
        F = F - np.sum(grads * grads, axis=1) / (4.0 * spec.lam)
    return F


def critic_terms(critic, spec: ProblemSpec, X):
    """(values, grads, trace terms) of any critic exposing value_grad and noise_trace."""
    v, G = critic.value_grad(X)
    return v, G, noise_trace(critic, X, spec.noise)


def noise_trace(critic, X, noise: NoiseModel) -> np.ndarray:
    """1/2 Tr[Q D^2 v] per row."""
    X = np.atleast_2d(X)
    if noise.empty:
        return np.zeros(X.shape[0])
    if hasattr(critic, "noise_trace"):
        return critic.noise_trace(X, noise)
    return critic.trace(X, noise.cov(critic.d))


def residual_batch(critic, actor, spec: ProblemSpec, samples) -> np.ndarray:
    """Per-sample residuals; an HJB spec without an actor uses the closed-form infimum."""
    X = np.asarray(samples, dtype=np.float64)
    if X.size == 0:
        return np.zeros(0)
    X = np.atleast_2d(X)
    v, G, tr = critic_terms(critic, spec, X)
    return assemble(spec, X, v, G, tr, controls_for(spec, X, actor))


# --- single-point forms on a CriticJet -------------------------------------

def trace_term(jet, noise: NoiseModel) -> float:
    """1/2 sum_i <hess P_d s_i, P_d s_i>."""
    if noise.empty:
        return 0.0
    H = np.asarray(jet.hess)
    return 0.5 * float(np.sum(H * noise.cov(H.shape[0])))


def _jet_residual(jet, x, spec, U):
    x = np.asarray(x, dtype=np.float64)
    return float(assemble(spec, x[None], np.array([jet.value]), np.asarray(jet.grad)[None],
                          np.array([trace_term(jet, spec.noise)]), U)[0])


def _control_row(u, N):
    u = np.zeros(N) if u is None else np.asarray(u, dtype=np.float64)
    return u[None, :N]


def residual_heat_kolmogorov(jet, x, spec: ProblemSpec) -> float:
    if spec.kind != "heat_kolmogorov":
        spec = spec.with_kind("heat_kolmogorov")
    return _jet_residual(jet, x, spec, _control_row(spec.control, spec.N))


def residual_heat_hjb(jet, u_val, x, spec: ProblemSpec) -> float:
    """Hamiltonian residual at the given control (not minimized)."""
    return _jet_residual(jet, x, spec.with_kind("heat_hjb"), _control_row(u_val, spec.N))


def residual_heat_hjb_closed(jet, x, spec: ProblemSpec) -> float:
    return _jet_residual(jet, x, spec.with_kind("heat_hjb"), None)


def residual_burgers_kolmogorov(jet, x, spec: ProblemSpec) -> float:
    return _jet_residual(jet, x, spec.with_kind("burgers_kolmogorov"), _control_row(spec.control, spec.N))


# --- parameter gradients of the residual --------------------------------

def dhgm_coefficients(spec: ProblemSpec, X, G, U=None):
    """Coefficients (c_value, c_grad) with grad_theta F = c_value grad v + grad <c_grad, Dv> + grad trace.

    The closed-form inf contributes -|Dv|^2/(4 lam), whose theta-gradient is
    grad <-Dv/(2 lam), Dv>.
    """
    d = G.shape[1]
    P = drift(spec, X, U)[:, :d]
    if spec.is_hjb and U is None:
        P = P - G / (2.0 * spec.lam)
    return -spec.gamma, P
