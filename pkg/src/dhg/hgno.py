"""Hilbert-Galerkin neural operators with one hidden layer.

The critic reads the first d coefficients of a point, ``y = E_d(x)``, and returns

    v(x) = w2 . act(W1 y + b1) + b2.

Input derivatives and all parameter derivatives are closed form. Derivatives
of the input gradient and Hessian with respect to parameters need act'' and
act''', which tanh has in closed form.

Flat parameter layout (``ParamVector``): W1 row-major, b1, w2 (or W2
row-major), b2.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .measures import normals
from .spectral import ConfigError, FormatError

MAGIC = b"HGNO"
VERSION = 1
_HEADER = struct.Struct("<4sHBBIIIQ")
_KIND_CRITIC, _KIND_ACTOR = 0, 1
ACTIVATIONS = {"tanh": 1}


def tanh_derivs(z: np.ndarray, order: int = 3):
    """act and its derivatives up to ``order`` for act = tanh."""
    t = np.tanh(z)
    s = 1.0 - t * t
    out = [t, s]
    if order >= 2:
        out.append(-2.0 * t * s)
    if order >= 3:
        out.append(-2.0 * s * (1.0 - 3.0 * t * t))
    return out


def _encode(X: np.ndarray, d: int) -> np.ndarray:
    if X.shape[-1] < d:
        raise ValueError(f"point truncated at N={X.shape[-1]} < encoder dimension d={d}")
    return np.ascontiguousarray(X[..., :d])


@dataclass(frozen=True)
class CriticJet:
    value: float
    grad: np.ndarray
    hess: np.ndarray


@dataclass(frozen=True)
class CriticNet:
    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    activation: str = "tanh"

    @property
    def d(self) -> int:
        return self.W1.shape[1]

    @property
    def width(self) -> int:
        return self.W1.shape[0]

    @property
    def n_params(self) -> int:
        return self.W1.size + 2 * self.width + 1

    @classmethod
    def init(cls, d: int, width: int, seed: int = 0, stream: int | str = "init") -> "CriticNet":
        z = normals(seed, stream, 0, 1, width * d + width).ravel()
        W1 = z[: width * d].reshape(width, d) / np.sqrt(d)
        w2 = z[width * d:] / np.sqrt(width)
        return cls(W1, np.zeros(width), w2, 0.0)

    @classmethod
    def zeros(cls, d: int, width: int) -> "CriticNet":
        return cls(np.zeros((width, d)), np.zeros(width), np.zeros(width), 0.0)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.w2, [self.b2]])

    def with_params(self, theta: np.ndarray) -> "CriticNet":
        W, d = self.W1.shape
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        i = W * d
        return CriticNet(theta[:i].reshape(W, d).copy(), theta[i:i + W].copy(),
                         theta[i + W:i + 2 * W].copy(), float(theta[-1]), self.activation)

    # --- batched evaluation; X has shape (M, N) -------------------------

    def _pre(self, X):
        Y = _encode(np.atleast_2d(X), self.d)
        return Y, Y @ self.W1.T + self.b1

    def value(self, X):
        """v at each row of X (scalar for a single point)."""
        _, Z = self._pre(X)
        v = np.tanh(Z) @ self.w2 + self.b2
        return float(v[0]) if np.ndim(X) == 1 else v

    def value_grad(self, X):
        """(v, Dv restricted to e_1..e_d) for each row."""
        _, Z = self._pre(X)
        t, s = tanh_derivs(Z, 1)
        return t @ self.w2 + self.b2, (s * self.w2) @ self.W1

    def hess(self, X):
        """D^2 v on span{e_1..e_d}: W1^T diag(w2 act''(z)) W1, shape (M, d, d)."""
        _, Z = self._pre(X)
        c = tanh_derivs(Z, 2)[2] * self.w2
        H = np.einsum("mk,ki,kj->mij", c, self.W1, self.W1)
        return 0.5 * (H + H.transpose(0, 2, 1))

    def trace(self, X, S: np.ndarray):
        """1/2 <S, D^2 v>_F per row, for a symmetric d x d weight S."""
        _, Z = self._pre(X)
        c = np.einsum("ki,ij,kj->k", self.W1, S, self.W1)
        return 0.5 * (tanh_derivs(Z, 2)[2] * self.w2) @ c

    def jet(self, x) -> CriticJet:
        x = np.asarray(x, dtype=np.float64)
        v, g = self.value_grad(x[None])
        return CriticJet(float(v[0]), g[0], self.hess(x[None])[0])

    # --- parameter derivatives -----------------------------------------

    def param_grad(self, X, c_value=None, c_grad=None, c_hess=None, S=None) -> np.ndarray:
        """Weighted sum of parameter gradients over rows of X.

        Returns sum_m [ c_value[m] grad_theta v(x_m)
                      + grad_theta <c_grad[m], Dv(x_m)>
                      + c_hess[m] grad_theta 1/2 <S, D^2 v(x_m)>_F ]
        as a flat vector. Coefficients are held fixed (not differentiated).
        """
        Y, Z = self._pre(X)
        M = Y.shape[0]
        order = 3 if c_hess is not None else 2 if c_grad is not None else 1
        t0, t1, t2, t3 = (tanh_derivs(Z, order) + [None, None])[:4]
        w2 = self.w2
        coefY = np.zeros_like(Z)  # multiplies y in dW1
        db1 = np.zeros(self.width)
        dw2 = np.zeros(self.width)
        dW1 = np.zeros_like(self.W1)
        db2 = 0.0
        if c_value is not None:
            cv = np.broadcast_to(np.asarray(c_value, dtype=np.float64), (M,))
            coefY += cv[:, None] * (t1 * w2)
            dw2 += cv @ t0
            db2 += cv.sum()
        if c_grad is not None:
            P = np.atleast_2d(np.asarray(c_grad, dtype=np.float64))
            r = P @ self.W1.T  # r[m, k] = W1_k . p_m
            coefY += w2 * t2 * r
            dw2 += np.sum(t1 * r, axis=0)
            dW1 += (w2 * t1).T @ P
        if c_hess is not None:
            ch = np.broadcast_to(np.asarray(c_hess, dtype=np.float64), (M,))
            WS = self.W1 @ S
            c = np.sum(WS * self.W1, axis=1)
            coefY += 0.5 * ch[:, None] * w2 * t3 * c
            dw2 += 0.5 * c * (ch @ t2)
            alpha = w2 * (ch @ t2)
            dW1 += alpha[:, None] * WS  # 1/2 * d(W1_k S W1_k)/dW1_k = S W1_k
        db1 += coefY.sum(axis=0)
        dW1 += coefY.T @ Y
        return np.concatenate([dW1.ravel(), db1, dw2, [db2]])


class ParamJet:
    """Parameter derivatives of a critic's (value, grad, hess) at one point."""

    def __init__(self, net: CriticNet, x):
        self.net = net
        self.x = np.asarray(x, dtype=np.float64)[None]

    def value(self) -> np.ndarray:
        return self.net.param_grad(self.x, c_value=1.0)

    def grad_dot(self, p) -> np.ndarray:
        """grad_theta <p, Dv(x)>."""
        return self.net.param_grad(self.x, c_grad=np.asarray(p, dtype=np.float64)[None])

    def hess_dot(self, S) -> np.ndarray:
        """grad_theta <S, D^2 v(x)>_F (note: no 1/2)."""
        return 2.0 * self.net.param_grad(self.x, c_hess=1.0, S=np.asarray(S, dtype=np.float64))

    def grad_matrix(self) -> np.ndarray:
        """d x |theta| matrix whose row i is grad_theta (Dv)_i."""
        return np.stack([self.grad_dot(e) for e in np.eye(self.net.d)])


def critic_param_grad_value(net: CriticNet, x) -> np.ndarray:
    return net.param_grad(np.asarray(x)[None], c_value=1.0)


def critic_param_grad_jet(net: CriticNet, x) -> ParamJet:
    return ParamJet(net, x)


@dataclass(frozen=True)
class ActorNet:
    """u(x) = sum_{j<=p} [W2 act(W1 E_d x + b1) + b2]_j e_j."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    activation: str = "tanh"

    @property
    def d(self) -> int:
        return self.W1.shape[1]

    @property
    def width(self) -> int:
        return self.W1.shape[0]

    @property
    def p(self) -> int:
        return self.W2.shape[0]

    @property
    def n_params(self) -> int:
        return self.W1.size + self.width + self.W2.size + self.p

    @classmethod
    def init(cls, d: int, width: int, p: int, seed: int = 0, stream: int | str = "init") -> "ActorNet":
        # offset past the critic's rows of the same stream
        z = normals(seed, stream, 1, 1, width * d + p * width).ravel()
        W1 = z[: width * d].reshape(width, d) / np.sqrt(d)
        W2 = z[width * d:].reshape(p, width) / np.sqrt(width)
        return cls(W1, np.zeros(width), W2, np.zeros(p))

    @classmethod
    def zeros(cls, d: int, width: int, p: int) -> "ActorNet":
        return cls(np.zeros((width, d)), np.zeros(width), np.zeros((p, width)), np.zeros(p))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), self.b2])

    def with_params(self, phi: np.ndarray) -> "ActorNet":
        W, d, p = self.width, self.d, self.p
        phi = np.asarray(phi, dtype=np.float64)
        if phi.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {phi.size}")
        i = W * d
        j = i + W
        k = j + p * W
        return ActorNet(phi[:i].reshape(W, d).copy(), phi[i:j].copy(),
                        phi[j:k].reshape(p, W).copy(), phi[k:].copy(), self.activation)

    def control(self, X):
        """Coefficients of u on e_1..e_p, shape (M, p) (or (p,) for one point)."""
        Y = _encode(np.atleast_2d(X), self.d)
        U = np.tanh(Y @ self.W1.T + self.b1) @ self.W2.T + self.b2
        return U[0] if np.ndim(X) == 1 else U

    def __call__(self, X, N: int | None = None):
        """u(x) as a point of H with N coefficients (modes above p are zero)."""
        U = np.atleast_2d(self.control(X))
        N = max(self.p, np.shape(X)[-1]) if N is None else N
        out = np.zeros(U.shape[:-1] + (N,))
        m = min(self.p, N)
        out[..., :m] = U[..., :m]
        return out[0] if np.ndim(X) == 1 else out

    def param_grad(self, X, Wt) -> np.ndarray:
        """sum_m grad_phi <w_m, u(x_m)> with w_m the rows of Wt (first p modes)."""
        Y = _encode(np.atleast_2d(X), self.d)
        Wt = np.atleast_2d(np.asarray(Wt, dtype=np.float64))[:, : self.p]
        t0, t1 = tanh_derivs(Y @ self.W1.T + self.b1, 1)
        back = (Wt @ self.W2) * t1
        return np.concatenate([(back.T @ Y).ravel(), back.sum(axis=0), (Wt.T @ t0).ravel(), Wt.sum(axis=0)])


def actor_eval(net: ActorNet, x):
    return net(x)


def actor_param_grad(net: ActorNet, x, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    wp = np.zeros(net.p)
    wp[: min(net.p, w.size)] = w[: net.p]
    return net.param_grad(np.asarray(x)[None], wp[None])


# --- checkpoint format -------------------------------------------------

def serialize(net) -> bytes:
    """``.hgno`` bytes: little-endian header (magic, version, kind, act id, d, W, p, count) + float64 params."""
    kind = _KIND_ACTOR if isinstance(net, ActorNet) else _KIND_CRITIC
    p = net.p if kind == _KIND_ACTOR else 1
    theta = np.ascontiguousarray(net.flat(), dtype="<f8")
    head = _HEADER.pack(MAGIC, VERSION, kind, ACTIVATIONS[net.activation], net.d, net.width, p, theta.size)
    return head + theta.tobytes()


def deserialize(buf: bytes):
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, kind, act, d, W, p, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError("bad magic")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    names = {v: k for k, v in ACTIVATIONS.items()}
    if act not in names:
        raise FormatError(f"unknown activation id {act}")
    if len(buf) != _HEADER.size + 8 * count:
        raise FormatError(f"payload length {len(buf) - _HEADER.size} != {8 * count}")
    theta = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    if kind == _KIND_CRITIC:
        net = CriticNet.zeros(d, W)
    elif kind == _KIND_ACTOR:
        net = ActorNet.zeros(d, W, p)
    else:
        raise FormatError(f"unknown network kind {kind}")
    if count != net.n_params:
        raise FormatError(f"header sizes imply {net.n_params} parameters, found {count}")
    return net.with_params(theta)


def save(net, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(net))


def load(path):
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def check_dims(net, d: int | None = None, width: int | None = None) -> None:
    if d is not None and net.d != d:
        raise ConfigError(f"checkpoint encoder dimension {net.d} != configured d={d}")
    if width is not None and net.width != width:
        raise ConfigError(f"checkpoint width {net.width} != configured W={width}")
