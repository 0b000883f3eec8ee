"""Gaussian measures on H with diagonal covariance, and reproducible sampling.

Randomness comes from Philox (counter-based). Every consumer is keyed by
``(seed, stream)``; sample ``i`` of a stream always reads the same block of
counters, so a draw does not depend on how samples are grouped into batches.
Standard normals use the inverse CDF on 53-bit midpoint uniforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .spectral import ConfigError, apply_A, burgers_B, eigenvalues, modes

STREAMS = {"init": 0, "critic": 1, "actor": 2, "eval": 3, "eval2": 4, "probe": 5, "sde": 6, "fd": 7}


class SimulationDiverged(RuntimeError):
    pass


def _key(seed: int, stream: int | str) -> np.ndarray:
    sid = STREAMS[stream] if isinstance(stream, str) else int(stream)
    return np.random.SeedSequence([int(seed) & (2**64 - 1), sid]).generate_state(2, dtype=np.uint64)


def normals(seed: int, stream: int | str, start: int, count: int, width: int) -> np.ndarray:
    """Standard normal rows ``start .. start+count-1`` of a (seed, stream) table.

    Row i of the table is a fixed function of (seed, stream, i, width).
    """
    block = -(-width // 4)  # Philox emits 4 x uint64 per counter increment
    bg = np.random.Philox(key=_key(seed, stream), counter=[start * block, 0, 0, 0])
    raw = bg.random_raw(count * block * 4).reshape(count, block * 4)[:, :width]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


@dataclass(frozen=True)
class GaussianMeasure:
    """N(mean, diag(variances)) on the first N modes."""

    variances: np.ndarray
    mean: np.ndarray | None = None
    name: str = "custom"

    def __post_init__(self):
        v = np.asarray(self.variances, dtype=np.float64)
        if v.ndim != 1 or np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ConfigError("variances must be a finite non-negative vector")
        object.__setattr__(self, "variances", v)
        m = np.zeros_like(v) if self.mean is None else np.asarray(self.mean, dtype=np.float64)
        if m.shape != v.shape:
            raise ConfigError("mean and variances must have equal length")
        object.__setattr__(self, "mean", m)

    @property
    def N(self) -> int:
        return self.variances.size

    def truncate(self, N: int) -> "GaussianMeasure":
        if N > self.N:
            raise ConfigError(f"cannot extend measure from {self.N} to {N} modes")
        return GaussianMeasure(self.variances[:N], self.mean[:N], self.name)


def sample(mu: GaussianMeasure, count: int, seed: int, stream: int | str = "eval", start: int = 0) -> np.ndarray:
    """``count`` samples as rows of a (count, N) array: mean + sqrt(v) * zeta."""
    if count < 1:
        raise ValueError("count must be >= 1")
    z = normals(seed, stream, start, count, mu.N)
    return mu.mean + np.sqrt(mu.variances) * z


def moment_norm(mu: GaussianMeasure, q: float, count: int, seed: int, samples: np.ndarray | None = None) -> float:
    """Monte Carlo (E|X|^q)^{1/q}."""
    if q < 1:
        raise ValueError("q must be >= 1")
    X = sample(mu, count, seed) if samples is None else samples
    r = np.sqrt(np.sum(X * X, axis=1))
    return float(np.mean(r**q) ** (1.0 / q))


def stationary_tcc(N: int) -> GaussianMeasure:
    """Stationary law of the heat equation with Q = diag(1/n^2): v_n = 1/(2 n^2 lam_n) = 2/n^4."""
    n = modes(N)
    return GaussianMeasure(1.0 / (2.0 * n**2 * eigenvalues(N)), name="tcc")


def stationary_wn(N: int) -> GaussianMeasure:
    """Stationary law under white noise: v_n = 1/(2 lam_n) = 2/n^2."""
    return GaussianMeasure(1.0 / (2.0 * eigenvalues(N)), name="wn")


def burgers_training_measure(N: int) -> GaussianMeasure:
    """v_n = 1/n^4."""
    return GaussianMeasure(modes(N) ** -4.0, name="burgers4")


def measure_by_name(name: str, N: int, table: np.ndarray | None = None) -> GaussianMeasure:
    if name == "tcc":
        return stationary_tcc(N)
    if name == "wn":
        return stationary_wn(N)
    if name == "burgers4":
        return burgers_training_measure(N)
    if name == "custom":
        if table is None:
            raise ConfigError("custom measure needs a variance table")
        t = np.asarray(table, dtype=np.float64)
        if t.size < N:
            t = np.concatenate([t, np.zeros(N - t.size)])
        return GaussianMeasure(t[:N], name="custom")
    raise ConfigError(f"unknown measure {name!r}")


def load_variance_csv(path: str) -> np.ndarray:
    """Variance table CSV with rows ``n,v_n`` (1-based mode, header optional)."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line[0].isalpha():
                continue
            n, v = line.split(",")[:2]
            rows.append((int(n), float(v)))
    N = max(n for n, _ in rows)
    out = np.zeros(N)
    for n, v in rows:
        out[n - 1] = v
    return out


@dataclass
class SPDEDynamics:
    """dX = (A X + B(X) + u) dt + sum_i s_i dW_i in N modes.

    ``noise_columns`` has shape (k, N); an empty array means no noise.
    """

    N: int
    control: np.ndarray | None = None
    noise_columns: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    burgers: bool = True


def empirical_stationary(
    dyn: SPDEDynamics,
    dt: float,
    steps: int,
    count: int,
    seed: int,
    integrator: str = "exponential",
    blowup: float = 1e6,
) -> np.ndarray:
    """End states of ``count`` trajectories started at 0 (rows of a (count, N) array).

    ``integrator="exponential"`` treats the diagonal part exactly:
    x <- e^{-lam dt} x + phi(dt) (B(x) + u) + noise with the exact OU covariance
    of each noise column's increment approximated per mode by its
    sqrt((1 - e^{-2 lam dt}) / (2 lam)) factor. ``"euler"`` is plain explicit Euler.
    """
    N = dyn.N
    lam = eigenvalues(N)
    u = np.zeros(N) if dyn.control is None else np.asarray(dyn.control, dtype=np.float64)[:N]
    cols = np.asarray(dyn.noise_columns, dtype=np.float64)
    k = cols.shape[0] if cols.size else 0
    if integrator == "exponential":
        decay = np.exp(-lam * dt)
        phi = -np.expm1(-lam * dt) / lam
        nscale = np.sqrt(-np.expm1(-2.0 * lam * dt) / (2.0 * lam))
    elif integrator == "euler":
        if dt * lam[-1] >= 2.0:
            raise ConfigError(f"explicit Euler unstable: dt*lam_N = {dt * lam[-1]:.3g} >= 2")
        decay = 1.0 - lam * dt
        phi = np.full(N, dt)
        nscale = np.full(N, np.sqrt(dt))
    else:
        raise ConfigError(f"unknown integrator {integrator!r}")
    X = np.zeros((count, N))
    for step in range(steps):
        drift = u + (burgers_B(X) if dyn.burgers else 0.0)
        X = decay * X + phi * drift
        if k:
            z = normals(seed, "sde", step * count, count, k)
            X += (z @ cols[:, :N]) * nscale
        if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > blowup:
            raise SimulationDiverged(f"simulation diverged at step {step} with dt={dt}")
    return X
