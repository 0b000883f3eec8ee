"""Accuracy metrics, residual norms and the bounded-inverse certificate.

Monte Carlo estimates are computed over chunks of i.i.d. samples from the
"eval" stream, so a result depends only on (mu, K, seed), not on chunk size.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .measures import GaussianMeasure, sample
from .residual import ProblemSpec, residual_batch
from .spectral import eigenvalues

log = logging.getLogger(__name__)

CHUNK = 20_000


def _chunks(mu: GaussianMeasure, K: int, seed: int, stream: str = "eval"):
    for start in range(0, K, CHUNK):
        yield sample(mu, min(CHUNK, K - start), seed, stream, start=start)


@dataclass
class MetricReport:
    ME: float
    RMSE: float
    RE1: float
    RE2: float
    K: int
    seed: int
    probe: str = ""
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in asdict(self).items()}


def _abs(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return np.abs(a) if a.ndim == 1 else np.sqrt(np.sum(a * a, axis=1))


def _from_norms(err: np.ndarray, mag: np.ndarray, seed: int, probe: str) -> MetricReport:
    flags = []
    if np.any(mag == 0.0):
        flags.append("RE1 undefined: reference vanishes at a sample")
        re1 = float("nan")
    else:
        with np.errstate(over="ignore"):
            re1 = float(np.mean(err / mag))
    denom = float(np.sum(mag * mag))
    if denom == 0.0:
        flags.append("RE2 undefined: reference is identically zero")
        re2 = float("nan")
    else:
        re2 = float(np.sqrt(np.sum(err * err) / denom))
    return MetricReport(float(np.mean(err)), float(np.sqrt(np.mean(err * err))), re1, re2,
                        int(err.size), seed, probe, flags)


def _pair_norms(pred, ref):
    P, R = np.asarray(pred, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if P.ndim == 2 or R.ndim == 2:
        P, R = _match_width(np.atleast_2d(P), np.atleast_2d(R))
    return _abs(P - R), _abs(R)


def metric_values(pred: np.ndarray, ref: np.ndarray, seed: int = 0, probe: str = "") -> MetricReport:
    """ME, RMSE, RE1, RE2 from paired predictions (scalars, or H-valued rows)."""
    return _from_norms(*_pair_norms(pred, ref), seed, probe)


def metrics(predict, reference, mu: GaussianMeasure, K: int, seed: int, probe: str = "") -> MetricReport:
    """The four accuracy metrics of ``predict`` against ``reference`` over K samples of mu.

    Both callables map a (k, N) sample array to values (k,) or controls (k, p).
    Controls are reduced to row norms chunk by chunk.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    errs, mags = [], []
    for X in _chunks(mu, K, seed):
        e, m = _pair_norms(predict(X), reference(X))
        errs.append(e)
        mags.append(m)
    return _from_norms(np.concatenate(errs), np.concatenate(mags), seed, probe)


def _match_width(a, b):
    n = max(a.shape[1], b.shape[1])
    pad = lambda z: np.pad(z, ((0, 0), (0, n - z.shape[1])))
    return pad(a), pad(b)


def residual_samples(critic, actor, spec: ProblemSpec, mu: GaussianMeasure, K: int, seed: int) -> np.ndarray:
    return np.concatenate([residual_batch(critic, actor, spec, X) for X in _chunks(mu, K, seed)])


def residual_l2_norm(critic, actor, spec: ProblemSpec, mu: GaussianMeasure, K: int, seed: int) -> float:
    """sqrt((1/K) sum_k F(x_k)^2)."""
    F = residual_samples(critic, actor, spec, mu, K, seed)
    return float(np.sqrt(np.mean(F * F)))


def rms_with_se(e: np.ndarray) -> tuple[float, float]:
    """Root mean square and its delta-method standard error."""
    sq = e * e
    m = float(np.mean(sq))
    r = np.sqrt(m)
    if r == 0.0 or sq.size < 2:
        return float(r), 0.0
    return float(r), float(np.std(sq, ddof=1) / np.sqrt(sq.size) / (2.0 * r))


def is_stationary_for(spec: ProblemSpec, mu: GaussianMeasure, rtol: float = 1e-10) -> bool:
    """True when mu is the invariant law of the uncontrolled heat dynamics of ``spec``."""
    if spec.kind != "heat_kolmogorov" or np.any(spec.control != 0.0) or np.any(mu.mean != 0.0):
        return False
    N = min(spec.N, mu.N)
    C = spec.noise.cov(N)
    if np.any(C - np.diag(np.diag(C))):
        return False
    target = np.diag(C) / (2.0 * eigenvalues(N))
    return bool(np.allclose(mu.variances[:N], target, rtol=rtol, atol=0.0)) and np.any(target > 0)


@dataclass
class BoundedInverseReport:
    rmse_vs_oracle: float
    residual_norm: float
    certified_bound: float
    passed: bool
    certified: bool
    mc_slack: float
    rmse_se: float
    residual_se: float

    def to_dict(self) -> dict:
        return asdict(self)


def bounded_inverse_check(rmse: float, residual_norm: float, omega: float,
                          rmse_se: float = 0.0, residual_se: float = 0.0) -> tuple[bool, float]:
    """rmse <= (residual_norm / omega) (1 + slack), slack = 3 * combined SE / bound."""
    bound = residual_norm / omega
    combined = float(np.hypot(rmse_se, residual_se / omega))
    slack = 3.0 * combined / bound if bound > 0 else np.inf if combined > 0 else 0.0
    if bound == 0.0:
        return bool(rmse <= 3.0 * combined), slack
    return bool(rmse <= bound * (1.0 + slack)), slack


def bounded_inverse_report(critic, spec: ProblemSpec, mu: GaussianMeasure, K: int, seed: int,
                           omega: float | None = None, oracle=None) -> BoundedInverseReport:
    """Compare ||v - w||_mu with the certificate ||F w||_mu / omega (omega = gamma by default)."""
    from .oracle import reference_critic

    omega = spec.gamma if omega is None else omega
    ref = reference_critic(spec) if oracle is None else oracle
    certified = is_stationary_for(spec, mu)
    if not certified:
        warnings.warn("sampling measure is not the stationary law of the uncontrolled dynamics; "
                      "bound is reported but not certified", RuntimeWarning)
    errs, res = [], []
    for X in _chunks(mu, K, seed):
        errs.append(critic.value(X) - ref.value(X))
        res.append(residual_batch(critic, None, spec, X))
    rmse, rmse_se = rms_with_se(np.concatenate(errs))
    rnorm, rse = rms_with_se(np.concatenate(res))
    passed, slack = bounded_inverse_check(rmse, rnorm, omega, rmse_se, rse)
    return BoundedInverseReport(rmse, rnorm, rnorm / omega, bool(passed and certified), bool(certified),
                                float(slack), rmse_se, rse)


# --- derivative errors ---------------------------------------------------

def _hess_parts(critic, N: int):
    """(block size b, block(X) -> (k, b, b), diagonal beyond the block of length N)."""
    if hasattr(critic, "hess_diag"):
        diag = np.zeros(N)
        h = critic.hess_diag()[:N]
        diag[: h.size] = h
        return 0, None, diag
    return critic.d, critic.hess, np.zeros(N)


def _hess_difference(net, oracle, X, N):
    """Block (k, b, b) and tail diagonal (N - b,) of D^2 net - D^2 oracle."""
    b1, f1, t1 = _hess_parts(net, N)
    b2, f2, t2 = _hess_parts(oracle, N)
    b = max(b1, b2)
    k = X.shape[0]
    block = np.zeros((k, b, b))
    if b:
        if f1 is not None:
            block[:, :b1, :b1] += f1(X)
        if f2 is not None:
            block[:, :b2, :b2] -= f2(X)
        idx = np.arange(b)
        block[:, idx, idx] += (t1 - t2)[:b]
    return block, (t1 - t2)[b:]


def _grad_full(critic, X, N):
    _, G = critic.value_grad(X)
    out = np.zeros((X.shape[0], N))
    m = min(N, G.shape[1])
    out[:, :m] = G[:, :m]
    return out


@dataclass
class DerivativeErrors:
    value_L4: float
    grad_L4: float
    hess_mu_mu_4: float
    hess_op_4: float

    @property
    def hess_ratio(self) -> float:
        return self.hess_mu_mu_4 / self.hess_op_4 if self.hess_op_4 > 0 else float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hess_ratio"] = self.hess_ratio
        return d


def derivative_error_norms(net, oracle, mu: GaussianMeasure, mu2: GaussianMeasure | None = None,
                           K: int = 10_000, seed: int = 0) -> DerivativeErrors:
    """L^4(mu) errors of value and gradient, and the two Hessian error norms.

    (4; mu, mu'): (E_{x~mu, h~mu'} |(D^2 net(x) - D^2 oracle(x)) h|^4)^{1/4}.
    (4; Op):      (E_{x~mu} ||D^2 net(x) - D^2 oracle(x)||_op^4)^{1/4}, where the
    difference is a dense block on the network's modes plus a diagonal tail, so
    the operator norm is max(spectral norm of the block, max |tail|). The block
    norm uses a dense symmetric eigensolver.
    """
    mu2 = mu if mu2 is None else mu2
    N = mu.N
    v4 = g4 = h4 = o4 = 0.0
    for start in range(0, K, CHUNK):
        k = min(CHUNK, K - start)
        X = sample(mu, k, seed, "eval", start=start)
        Hh = sample(mu2, k, seed, "eval2", start=start)
        dv = net.value(X) - oracle.value(X)
        dg = _grad_full(net, X, N) - _grad_full(oracle, X, N)
        block, tail = _hess_difference(net, oracle, X, N)
        b = block.shape[1]
        Dh_sq = np.sum(np.einsum("kij,kj->ki", block, Hh[:, :b]) ** 2, axis=1) + (Hh[:, b:] ** 2) @ (tail**2)
        tail_max = float(np.max(np.abs(tail))) if tail.size else 0.0
        block_norm = np.max(np.abs(np.linalg.eigvalsh(block)), axis=1) if b else np.zeros(k)
        op = np.maximum(block_norm, tail_max)
        v4 += np.sum(dv**4)
        g4 += np.sum(np.sum(dg * dg, axis=1) ** 2)
        h4 += np.sum(Dh_sq**2)
        o4 += np.sum(op**4)
    r = lambda s: float((s / K) ** 0.25)
    return DerivativeErrors(r(v4), r(g4), r(h4), r(o4))
