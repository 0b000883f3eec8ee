"""Truncated arithmetic on H = L^2([0, 2pi]) in the Dirichlet sine basis.

A point of H is a 1-D float64 array of coefficients. Storage is 0-based:
``x[n - 1]`` holds the coefficient of mode n, ``e_n(xi) = sin(n xi / 2) / sqrt(pi)``.
Eigenvalues of the Dirichlet Laplacian are ``lam_n = n**2 / 4`` so that
``A e_n = -lam_n e_n``.
"""

from __future__ import annotations

import struct
from typing import Callable

import numpy as np

N_MAX = 1 << 16
TWO_PI = 2.0 * np.pi
SQRT_PI = np.sqrt(np.pi)


class ConfigError(ValueError):
    """Invalid dimensions or settings."""


class FormatError(ValueError):
    """Malformed serialized data."""


def modes(N: int) -> np.ndarray:
    """Mode labels 1..N as floats."""
    return np.arange(1, N + 1, dtype=np.float64)


def eigenvalues(N: int) -> np.ndarray:
    """lam_n = n^2 / 4 for n = 1..N."""
    if not 1 <= N <= N_MAX:
        raise ConfigError(f"N={N} outside [1, {N_MAX}]")
    n = modes(N)
    return n * n / 4.0


def eval_basis(n: int, xi):
    """Evaluate e_n at xi (scalar or array) on [0, 2pi]."""
    if not 1 <= int(n) <= N_MAX or int(n) != n:
        raise ValueError(f"mode index {n} out of range")
    xi_arr = np.asarray(xi, dtype=np.float64)
    if np.any(xi_arr < 0.0) or np.any(xi_arr > TWO_PI):
        raise ValueError("xi outside [0, 2pi]")
    out = np.sin(n * xi_arr / 2.0) / SQRT_PI
    return float(out) if out.ndim == 0 else out


def synthesize(x: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Evaluate the sine series with coefficients ``x`` on ``grid``.

    Works for a batch of coefficient rows as well, returning shape (..., len(grid)).
    """
    x = np.asarray(x, dtype=np.float64)
    N = x.shape[-1]
    S = np.sin(np.outer(modes(N), grid) / 2.0) / SQRT_PI
    return x @ S


def synthesize_derivative(x: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Evaluate d/dxi of the sine series analytically on ``grid``."""
    x = np.asarray(x, dtype=np.float64)
    n = modes(x.shape[-1])
    C = (n[:, None] / 2.0) * np.cos(np.outer(n, grid) / 2.0) / SQRT_PI
    return x @ C


def simpson_weights(panels: int) -> np.ndarray:
    """Composite Simpson weights on ``panels + 1`` uniform nodes over [0, 2pi]."""
    if panels < 2 or panels % 2:
        raise ConfigError("Simpson needs an even number of panels >= 2")
    h = TWO_PI / panels
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def default_panels(N: int) -> int:
    return 4 * max(N, 64)


def project_function(f, N: int, panels: int | None = None) -> np.ndarray:
    """Coefficients <f, e_n>, n = 1..N, by composite Simpson quadrature.

    ``f`` is either a callable of xi or an array of values on the uniform grid of
    ``len(f)`` nodes including both endpoints (``len(f) - 1`` must be even).
    Default resolution is 4 * max(N, 64) panels.
    """
    if not 1 <= N <= N_MAX:
        raise ConfigError(f"N={N} outside [1, {N_MAX}]")
    if callable(f):
        panels = default_panels(N) if panels is None else panels
        grid = np.linspace(0.0, TWO_PI, panels + 1)
        values = np.broadcast_to(np.asarray(f(grid), dtype=np.float64), grid.shape)
    else:
        values = np.asarray(f, dtype=np.float64)
        panels = values.shape[-1] - 1
        grid = np.linspace(0.0, TWO_PI, panels + 1)
    w = simpson_weights(panels)
    S = np.sin(np.outer(grid, modes(N)) / 2.0) / SQRT_PI
    return (values * w) @ S


def _pad(x: np.ndarray, y: np.ndarray):
    n = max(x.shape[-1], y.shape[-1])
    if x.shape[-1] < n:
        x = np.concatenate([x, np.zeros(x.shape[:-1] + (n - x.shape[-1],))], axis=-1)
    if y.shape[-1] < n:
        y = np.concatenate([y, np.zeros(y.shape[:-1] + (n - y.shape[-1],))], axis=-1)
    return x, y


def inner(x, y) -> float:
    """Parseval inner product; the shorter vector is zero-padded."""
    x, y = _pad(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    return float(x @ y)


def norm(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(x @ x))


def apply_A(x: np.ndarray) -> np.ndarray:
    """Diagonal Laplacian: (A x)_n = -lam_n x_n. Accepts batches on the last axis."""
    x = np.asarray(x, dtype=np.float64)
    return -eigenvalues(x.shape[-1]) * x


def dirichlet_energy(x: np.ndarray):
    """|(-A)^{1/2} x|^2 = sum_n lam_n x_n^2, i.e. the integral of (x')^2."""
    x = np.asarray(x, dtype=np.float64)
    lx = eigenvalues(x.shape[-1]) * x
    return float(lx @ x) if x.ndim == 1 else np.einsum("...i,...i->...", lx, x)


def burgers_B(x: np.ndarray) -> np.ndarray:
    """Coefficients of x * x' truncated to the input length N.

    (B x)_n = n/(8 sqrt(pi)) sum_{m=1}^{n-1} x_m x_{n-m}
            - n/(4 sqrt(pi)) sum_{m=1}^{N-n} x_m x_{n+m}

    No aliasing correction. A single point uses direct O(N^2) sums; a batch of
    rows goes through a zero-padded FFT (same result to rounding).
    """
    x = np.asarray(x, dtype=np.float64)
    N = x.shape[-1]
    n = modes(N)
    if x.ndim == 1:
        conv = np.convolve(x, x)  # conv[n-2] = sum_{m=1}^{n-1} x_m x_{n-m}
        corr = np.correlate(x, x, mode="full")  # corr[N-1+k] = sum_m x_m x_{m+k}
        first = np.concatenate([[0.0], conv[: N - 1]])
        second = np.concatenate([corr[N:], [0.0]])
    else:
        L = 1 << int(np.ceil(np.log2(2 * N)))
        F = np.fft.rfft(x, L, axis=-1)
        conv = np.fft.irfft(F * F, L, axis=-1)
        corr = np.fft.irfft(np.conj(F) * F, L, axis=-1)  # corr[k] = sum_m x_m x_{m+k}
        first = np.concatenate([np.zeros(x.shape[:-1] + (1,)), conv[..., : N - 1]], axis=-1)
        second = np.concatenate([corr[..., 1:N], np.zeros(x.shape[:-1] + (1,))], axis=-1)
    return n / (8.0 * SQRT_PI) * first - n / (4.0 * SQRT_PI) * second


def project_Pd(x: np.ndarray, d: int) -> np.ndarray:
    """Orthogonal projection onto span{e_1..e_d}; keeps the input length."""
    x = np.asarray(x, dtype=np.float64)
    N = x.shape[-1]
    if not 1 <= d <= N:
        raise ConfigError(f"projection dimension d={d} outside [1, {N}]")
    out = x.copy()
    out[..., d:] = 0.0
    return out


def unit(n: int, N: int) -> np.ndarray:
    """e_n as a length-N coefficient vector."""
    x = np.zeros(N)
    x[n - 1] = 1.0
    return x


# --- serialization -------------------------------------------------------

def to_bytes(x: np.ndarray) -> bytes:
    """Length-prefixed (uint64) little-endian float64 array."""
    x = np.ascontiguousarray(x, dtype="<f8")
    return struct.pack("<Q", x.size) + x.tobytes()


def from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise FormatError("missing length prefix")
    (n,) = struct.unpack_from("<Q", buf, 0)
    if len(buf) != 8 + 8 * n:
        raise FormatError(f"declared {n} coefficients, payload has {(len(buf) - 8) / 8}")
    return np.frombuffer(buf, dtype="<f8", offset=8).astype(np.float64)


def parse_sparse(text: str, N: int) -> np.ndarray:
    """Parse ``n1,c1;n2,c2;...`` into a length-N vector."""
    x = np.zeros(N)
    for item in filter(None, (s.strip() for s in text.split(";"))):
        try:
            n_str, c_str = item.split(",")
            n = int(n_str)
            c = float(c_str)
        except ValueError as exc:
            raise FormatError(f"bad sparse entry {item!r}") from exc
        if not 1 <= n <= N:
            raise FormatError(f"mode {n} outside 1..{N}")
        x[n - 1] += c
    return x


def format_sparse(x: np.ndarray) -> str:
    return ";".join(f"{i + 1},{c!r}" for i, c in enumerate(np.asarray(x).tolist()) if c != 0.0)


# --- named closed-form functions used as probe points ---------------------

PROBE_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "zero": lambda xi: np.zeros_like(xi),
    "sin1": lambda xi: np.sin(xi) / SQRT_PI,
    "sin2": lambda xi: np.sin(2 * xi) / SQRT_PI,
    "sin3": lambda xi: np.sin(3 * xi) / SQRT_PI,
    "parabola": lambda xi: xi / TWO_PI * (TWO_PI - xi),
    "one-minus-cos": lambda xi: 1.0 - np.cos(xi),
    "one-minus-cos2": lambda xi: 1.0 - np.cos(2 * xi),
    "const-invsqrt2pi": lambda xi: np.full_like(xi, 1.0 / np.sqrt(TWO_PI)),
}


def probe_point(name: str, N: int) -> np.ndarray:
    """A named probe function projected onto N modes, or an inline sparse vector."""
    if name in PROBE_FUNCTIONS:
        return project_function(PROBE_FUNCTIONS[name], N)
    if "," in name:
        return parse_sparse(name, N)
    raise ConfigError(f"unknown probe point {name!r}")
