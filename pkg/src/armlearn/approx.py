"""Function approximators with hand-written gradients, Adam, and Polyak tracking.

All parameters live in one flat float64 vector (:class:`ParamSet`). Each
approximator knows how to slice that vector into its layers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ParamSet",
    "Table",
    "Linear",
    "MLP",
    "make_approximator",
    "forward_v",
    "forward_q",
    "backward",
    "AdamState",
    "adam_step",
    "polyak_update",
    "gradient_check",
    "save_params",
    "load_params",
    "ROLES",
]

ROLES = ("state_value", "cumulative_q", "target", "q_online", "q_target", "policy", "critic")
KINDS = ("table", "linear", "mlp")


@dataclass
class ParamSet:
    values: np.ndarray
    shape: tuple
    role: str
    kind: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown approximator kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        self.shape = tuple(int(s) for s in self.shape)
        expected = _n_params(self.kind, self.shape)
        if self.values.shape != (expected,):
            raise ValueError(
                f"{self.kind} with shape {self.shape} needs {expected} parameters, "
                f"got {self.values.shape}"
            )

    def copy(self, role: str | None = None) -> "ParamSet":
        return ParamSet(self.values.copy(), self.shape, role or self.role, self.kind)


def _n_params(kind, shape):
    if kind == "table":
        n_ids, n_out = shape
        return n_ids * n_out
    if kind == "linear":
        n_in, n_out = shape
        return n_in * n_out + n_out
    n_in, n_hidden, n_out = shape
    return n_in * n_hidden + n_hidden + n_hidden * n_out + n_out


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Table:
    """Lookup table indexed by observation id."""

    kind = "table"
    uses_ids = True

    def __init__(self, n_ids: int, n_out: int):
        if n_ids > 5_000_000:
            raise ValueError(f"table with {n_ids} observation ids is too large")
        self.shape = (int(n_ids), int(n_out))
        self.n_out = int(n_out)

    def init_params(self, rng, role):
        return ParamSet(np.zeros(_n_params("table", self.shape)), self.shape, role, "table")

    def _check(self, w, x):
        x = np.asarray(x)
        if x.ndim != 1 or not np.issubdtype(x.dtype, np.integer):
            raise ValueError("table inputs must be a 1-D array of observation ids")
        if x.size and (x.min() < 0 or x.max() >= self.shape[0]):
            raise ValueError("observation id out of range for table")
        return w.reshape(self.shape), x

    def forward(self, w, x, return_cache=False):
        table, ids = self._check(w, x)
        out = table[ids]
        return (out, None) if return_cache else out

    def backward(self, w, x, grad_out, cache=None):
        _, ids = self._check(w, x)
        grad = np.zeros(self.shape)
        np.add.at(grad, ids, np.asarray(grad_out, dtype=float).reshape(len(ids), self.n_out))
        return grad.ravel()


class Linear:
    """Affine map ``x @ W + b`` on feature vectors."""

    kind = "linear"
    uses_ids = False

    def __init__(self, n_in: int, n_out: int):
        self.shape = (int(n_in), int(n_out))
        self.n_out = int(n_out)

    def init_params(self, rng, role):
        n_in, n_out = self.shape
        w = np.concatenate([_glorot(rng, n_in, n_out).ravel(), np.zeros(n_out)])
        return ParamSet(w, self.shape, role, "linear")

    def _split(self, w):
        n_in, n_out = self.shape
        return w[: n_in * n_out].reshape(n_in, n_out), w[n_in * n_out :]

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.shape[0]:
            raise ValueError(f"expected features of shape (n, {self.shape[0]}), got {x.shape}")
        return x

    def forward(self, w, x, return_cache=False):
        W, b = self._split(w)
        out = self._check(x) @ W + b
        return (out, None) if return_cache else out

    def backward(self, w, x, grad_out, cache=None):
        x = self._check(x)
        g = np.asarray(grad_out, dtype=float).reshape(x.shape[0], self.n_out)
        return np.concatenate([(x.T @ g).ravel(), g.sum(axis=0)])


class MLP:
    """One hidden layer of rectified-linear units."""

    kind = "mlp"
    uses_ids = False

    def __init__(self, n_in: int, n_out: int, n_hidden: int = 64):
        self.shape = (int(n_in), int(n_hidden), int(n_out))
        self.n_out = int(n_out)

    def init_params(self, rng, role):
        n_in, n_h, n_out = self.shape
        w = np.concatenate(
            [
                _glorot(rng, n_in, n_h).ravel(),
                np.zeros(n_h),
                _glorot(rng, n_h, n_out).ravel(),
                np.zeros(n_out),
            ]
        )
        return ParamSet(w, self.shape, role, "mlp")

    def _split(self, w):
        n_in, n_h, n_out = self.shape
        i = n_in * n_h
        W1 = w[:i].reshape(n_in, n_h)
        b1 = w[i : i + n_h]
        i += n_h
        W2 = w[i : i + n_h * n_out].reshape(n_h, n_out)
        b2 = w[i + n_h * n_out :]
        return W1, b1, W2, b2

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.shape[0]:
            raise ValueError(f"expected features of shape (n, {self.shape[0]}), got {x.shape}")
        return x

    def forward(self, w, x, return_cache=False):
        W1, b1, W2, b2 = self._split(w)
        x = self._check(x)
        pre = x @ W1 + b1
        hidden = np.maximum(pre, 0.0)
        out = hidden @ W2 + b2
        return (out, hidden) if return_cache else out

    def backward(self, w, x, grad_out, cache=None):
        W1, b1, W2, b2 = self._split(w)
        x = self._check(x)
        hidden = cache if cache is not None else np.maximum(x @ W1 + b1, 0.0)
        g = np.asarray(grad_out, dtype=float).reshape(x.shape[0], self.n_out)
        g_hidden = (g @ W2.T) * (hidden > 0.0)
        return np.concatenate(
            [(x.T @ g_hidden).ravel(), g_hidden.sum(axis=0), (hidden.T @ g).ravel(), g.sum(axis=0)]
        )


def make_approximator(kind: str, n_in: int, n_out: int, n_hidden: int = 64):
    """``n_in`` is the id count for tables and the feature width otherwise."""
    if kind == "table":
        return Table(n_in, n_out)
    if kind == "linear":
        return Linear(n_in, n_out)
    if kind == "mlp":
        return MLP(n_in, n_out, n_hidden)
    raise ValueError(f"unknown approximator {kind!r}; expected one of {KINDS}")


def forward_v(approx, params: ParamSet, x) -> np.ndarray:
    return approx.forward(params.values, x)[:, 0]


def forward_q(approx, params: ParamSet, x) -> np.ndarray:
    return approx.forward(params.values, x)


def backward(approx, params: ParamSet, x, grad_out) -> np.ndarray:
    return approx.backward(params.values, x, grad_out)


@dataclass
class AdamState:
    """Bias-corrected adaptive moment estimates for one parameter vector."""

    m: np.ndarray
    v: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = field(default=0)

    @classmethod
    def for_params(cls, params: ParamSet, lr=1e-3, **kw) -> "AdamState":
        n = params.values.size
        return cls(np.zeros(n), np.zeros(n), lr=lr, **kw)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.lr, self.beta1, self.beta2, self.eps, self.t)


def adam_step(state: AdamState, params: ParamSet, grad: np.ndarray):
    """Update ``params`` and ``state`` in place; returns both."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.values.shape or state.m.shape != grad.shape:
        raise ValueError("gradient, moments and parameters must share one shape")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    params.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def polyak_update(target: ParamSet, source: ParamSet, tau: float) -> ParamSet:
    """``target <- target + tau * (source - target)`` in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if target.values.shape != source.values.shape:
        raise ValueError("target and source parameter shapes differ")
    if tau == 1.0:
        target.values[:] = source.values
    elif tau > 0.0:
        target.values += tau * (source.values - target.values)
    return target


def gradient_check(approx, params: ParamSet, x, grad_out, h: float = 1e-5) -> float:
    """Relative error between :func:`backward` and central finite differences."""
    grad_out = np.asarray(grad_out, dtype=float)
    analytic = approx.backward(params.values, x, grad_out)
    w = params.values.copy()
    numeric = np.empty_like(w)
    for i in range(w.size):
        orig = w[i]
        w[i] = orig + h
        f_plus = np.sum(grad_out * approx.forward(w, x))
        w[i] = orig - h
        f_minus = np.sum(grad_out * approx.forward(w, x))
        w[i] = orig
        numeric[i] = (f_plus - f_minus) / (2.0 * h)
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-300)
    return float(np.linalg.norm(analytic - numeric) / scale)


_MAGIC = b"ARMP"
_VERSION = 1


def save_params(path, params: ParamSet) -> None:
    """Write a flat little-endian float64 vector behind a small header."""
    header = _MAGIC + struct.pack(
        "<BBBB",
        _VERSION,
        ROLES.index(params.role),
        KINDS.index(params.kind),
        len(params.shape),
    )
    header += struct.pack(f"<{len(params.shape)}I", *params.shape)
    header += struct.pack("<Q", params.values.size)
    Path(path).write_bytes(header + params.values.astype("<f8").tobytes())


def load_params(path) -> ParamSet:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError("not a parameter checkpoint")
    version, role, kind, ndim = struct.unpack_from("<BBBB", data, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 8
    shape = struct.unpack_from(f"<{ndim}I", data, off)
    off += 4 * ndim
    (count,) = struct.unpack_from("<Q", data, off)
    off += 8
    values = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
    return ParamSet(values, shape, ROLES[role], KINDS[kind])
