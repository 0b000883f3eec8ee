"""Ground truth for the heat problems and a finite-difference Monte Carlo estimator for Burgers.

Each heat mode is a scalar Ornstein-Uhlenbeck LQ problem with value
``M_n x_n^2 + Q_n x_n + R_n``. ``QuadraticCritic`` wraps such coefficients
behind the same value/grad/hess interface as a trained network so every
metric can run against it unchanged.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .measures import normals
from .residual import NoiseModel, ProblemSpec
from .spectral import TWO_PI, ConfigError, eigenvalues, synthesize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuadraticCritic:
    """v(x) = sum_{n<=N} M_n x_n^2 + Q_n x_n + R_n, with analytic jet."""

    M: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    @property
    def d(self) -> int:
        return self.M.size

    @property
    def N(self) -> int:
        return self.M.size

    def _x(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] < self.d:
            X = np.concatenate([X, np.zeros((X.shape[0], self.d - X.shape[1]))], axis=1)
        return X[:, : self.d]

    def value(self, X):
        Xd = self._x(X)
        v = (Xd * Xd) @ self.M + Xd @ self.Q + self.R.sum()
        return float(v[0]) if np.ndim(X) == 1 else v

    def value_grad(self, X):
        Xd = self._x(X)
        return (Xd * Xd) @ self.M + Xd @ self.Q + self.R.sum(), 2.0 * self.M * Xd + self.Q

    def hess_diag(self) -> np.ndarray:
        return 2.0 * self.M

    def hess(self, X):
        m = self._x(X).shape[0]
        return np.broadcast_to(np.diag(2.0 * self.M), (m, self.d, self.d))

    def noise_trace(self, X, noise: NoiseModel):
        return np.full(np.atleast_2d(X).shape[0], self.M @ noise.diag(self.d))

    def jet(self, x):
        from .hgno import CriticJet

        v, g = self.value_grad(np.asarray(x)[None])
        return CriticJet(float(v[0]), g[0], np.diag(2.0 * self.M))


@dataclass(frozen=True)
class LQSolution:
    M: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    gamma: float
    lam: float
    xbar: np.ndarray
    sigma2: np.ndarray

    @property
    def N(self) -> int:
        return self.M.size

    def critic(self) -> QuadraticCritic:
        return QuadraticCritic(self.M, self.Q, self.R)

    def identities(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-mode residuals of the Riccati, linear and constant equations."""
        lam_n = eigenvalues(self.N)
        g, lam = self.gamma, self.lam
        M, Q, R, xb = self.M, self.Q, self.R, self.xbar
        ric = -M * M / lam - (2.0 * lam_n + g) * M + 1.0
        lin = Q * (lam_n + g + M / lam) + 2.0 * xb
        const = -g * R + M * self.sigma2 + xb * xb - Q * Q / (4.0 * lam)
        return ric, lin, const


def _vec(x, N):
    v = np.zeros(N) if x is None else np.asarray(x, dtype=np.float64).ravel()
    if v.size < N:
        v = np.concatenate([v, np.zeros(N - v.size)])
    return v[:N]


def lq_solve(gamma: float, lam: float, xbar, sigma2, N: int) -> LQSolution:
    """Closed-form per-mode solution of the discounted LQ heat HJB equation."""
    if not gamma > 0 or not lam > 0:
        raise ValueError("gamma and lambda must be positive")
    lam_n = eigenvalues(N)
    xb = _vec(xbar, N)
    s2 = _vec(sigma2, N) if np.ndim(sigma2) else np.full(N, float(sigma2))
    a = 2.0 * lam_n + gamma
    M = 2.0 * lam / (lam * a + np.sqrt(lam * lam * a * a + 4.0 * lam))
    Q = -2.0 * xb / (lam_n + gamma + M / lam) + 0.0  # no signed zeros
    R = (M * s2 + xb * xb - Q * Q / (4.0 * lam)) / gamma
    return LQSolution(M, Q, R, gamma, lam, xb, s2)


def lq_for(spec: ProblemSpec) -> LQSolution:
    return lq_solve(spec.gamma, spec.lam, spec.xbar, spec.noise.diag(spec.N), spec.N)


def oracle_value(sol: LQSolution, x):
    return sol.critic().value(x)


def oracle_control(sol: LQSolution, x) -> np.ndarray:
    """u*_n = -M_n x_n / lam - Q_n / (2 lam), on all N modes."""
    X = sol.critic()._x(x)
    U = -sol.M * X / sol.lam - sol.Q / (2.0 * sol.lam)
    return U[0] if np.ndim(x) == 1 else U


def kolmogorov_critic(gamma: float, lam: float, u, xbar, sigma2, N: int) -> QuadraticCritic:
    """J(.; u) for a constant control u, as quadratic coefficients.

    Obtained by matching powers of x_n in the per-mode Kolmogorov equation
    -gamma v + v'(-lam_n x + u_n) + (x - xbar_n)^2 + lam u_n^2 + sigma_n^2 v''/2 = 0.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    lam_n = eigenvalues(N)
    u = _vec(u, N)
    xb = _vec(xbar, N)
    s2 = _vec(sigma2, N) if np.ndim(sigma2) else np.full(N, float(sigma2))
    M = 1.0 / (gamma + 2.0 * lam_n)
    Q = 2.0 * (M * u - xb) / (gamma + lam_n)
    R = (Q * u + xb * xb + lam * u * u + s2 * M) / gamma
    return QuadraticCritic(M, Q, R)


def reference_critic(spec: ProblemSpec) -> QuadraticCritic:
    """Exact solution for a heat problem: J(.; u) for Kolmogorov, V for HJB."""
    if spec.is_burgers:
        raise ConfigError("no closed-form solution for Burgers problems")
    s2 = spec.noise.diag(spec.N)
    if spec.is_hjb:
        return lq_solve(spec.gamma, spec.lam, spec.xbar, s2, spec.N).critic()
    return kolmogorov_critic(spec.gamma, spec.lam, spec.control, spec.xbar, s2, spec.N)


def kolmogorov_value(x0, u, gamma: float, lam: float, xbar, sigma2, N: int) -> float:
    """Discounted cost J(x0; u) of the constant control u, summed mode by mode."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    lam_n = eigenvalues(N)
    f = _vec(x0, N)
    a = _vec(u, N) / lam_n
    uu = _vec(u, N)
    xb = _vec(xbar, N)
    s2 = _vec(sigma2, N) if np.ndim(sigma2) else np.full(N, float(sigma2))
    terms = ((f - a) ** 2 / (gamma + 2 * lam_n)
             + 2 * (f - a) * (a - xb) / (gamma + lam_n)
             + ((a - xb) ** 2 + lam * uu * uu) / gamma
             + s2 / (gamma * (gamma + 2 * lam_n)))
    return float(np.sum(terms))


# --- finite-difference Monte Carlo for Burgers ------------------------------

class FDDiverged(RuntimeError):
    pass


@dataclass
class FDResult:
    estimate: float
    std_error: float
    paths: int
    runtime: float


def fd_burgers_value(
    x0,
    noise: NoiseModel | None = None,
    gamma: float = 1.0,
    grid_points: int = 251,
    dt: float = 1e-4,
    steps: int = 100_000,
    mc_count: int = 1,
    seed: int = 0,
    burgers: bool = True,
    implicit: bool = False,
    noise_fn=None,
    batch: int = 1000,
    blowup: float = 1e6,
) -> FDResult:
    """Discounted Dirichlet energy of the Burgers flow from x0, by explicit finite differences.

    x0 is either a callable of xi or an array of sine coefficients. Endpoints
    stay pinned at 0. Per step: centered second difference for x'', centered
    first difference for x x', a Gaussian increment built from the noise
    columns on the grid (or ``noise_fn(xi)`` for a single constant-profile
    column). The running cost is the trapezoid sum of squared centered slopes
    (one-sided at the endpoints), weighted by e^{-gamma t} at the left end of
    each step. ``implicit=True`` treats x'' backward-Euler.
    """
    t_start = time.perf_counter()
    grid = np.linspace(0.0, TWO_PI, grid_points)
    h = grid[1] - grid[0]
    if dt * 2.0 / h**2 > 1.0 and not implicit:
        warnings.warn(f"explicit scheme above stability threshold: dt*2/h^2 = {dt * 2 / h**2:.3f}", RuntimeWarning)
    u0 = np.asarray(x0(grid), dtype=np.float64) if callable(x0) else synthesize(np.asarray(x0, dtype=np.float64), grid)
    u0 = np.broadcast_to(u0, grid.shape).copy()
    u0[0] = u0[-1] = 0.0

    noisy = noise is not None and not noise.empty
    if noisy:
        if noise_fn is not None:
            prof = np.asarray(noise_fn(grid), dtype=np.float64)[None, :] * np.ones((1, grid_points))
        else:
            prof = synthesize(noise.columns, grid)
        prof[:, 0] = prof[:, -1] = 0.0
        prof = prof[:, 1:-1] * np.sqrt(dt)
    else:
        mc_count = 1

    w_trap = np.full(grid_points, h)
    w_trap[0] = w_trap[-1] = h / 2.0
    discounts = np.exp(-gamma * dt * np.arange(steps)) * dt
    if implicit:
        n_in = grid_points - 2
        r = dt / h**2
        ab = np.zeros((3, n_in))
        ab[0, 1:] = -r
        ab[1, :] = 1.0 + 2.0 * r
        ab[2, :-1] = -r

    totals = []
    for b0 in range(0, mc_count, batch):
        P = min(batch, mc_count - b0)
        X = np.tile(u0, (P, 1))
        acc = np.zeros(P)
        for k in range(steps):
            slope = np.empty_like(X)
            slope[:, 1:-1] = (X[:, 2:] - X[:, :-2]) / (2.0 * h)
            slope[:, 0] = (X[:, 1] - X[:, 0]) / h
            slope[:, -1] = (X[:, -1] - X[:, -2]) / h
            acc += discounts[k] * ((slope * slope) @ w_trap)
            inner = X[:, 1:-1]
            incr = inner * slope[:, 1:-1] if burgers else 0.0
            if implicit:
                rhs = inner + dt * incr
            else:
                lap = (X[:, 2:] - 2.0 * inner + X[:, :-2]) / h**2
                rhs = inner + dt * (lap + incr)
            if noisy:
                z = normals(seed, "fd", k * mc_count + b0, P, prof.shape[0])
                rhs = rhs + z @ prof
            if implicit:
                rhs = solve_banded((1, 1), ab, rhs.T).T
            X[:, 1:-1] = rhs
            if k % 1000 == 0:
                bad = ~np.isfinite(X).all(axis=1) | (np.abs(X).max(axis=1) > blowup)
                if bad.any():
                    raise FDDiverged(f"path {b0 + int(np.argmax(bad))} diverged at step {k}")
        totals.append(acc)
    totals = np.concatenate(totals)
    horizon = steps * dt
    log.info("fd horizon %.3g, discount tail factor e^{-gamma T} = %.3g", horizon, np.exp(-gamma * horizon))
    se = float(totals.std(ddof=1) / np.sqrt(totals.size)) if totals.size > 1 else 0.0
    return FDResult(float(totals.mean()), se, int(totals.size), time.perf_counter() - t_start)
