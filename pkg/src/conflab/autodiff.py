"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every :func:`apply` call made while it is active.
:func:`backward` walks the recorded nodes in reverse and returns a
:class:`GradientMap` keyed by the trainable leaves that fed the graph.

Only the operations needed by the dual-head network and its losses are
provided. Broadcasting is limited to adding a row-vector bias; every other
binary op requires identical shapes.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .exceptions import ContractError, DomainError

__all__ = [
    "Tensor",
    "Tape",
    "GradientMap",
    "apply",
    "backward",
    "grad_check",
    "OPS",
]

_ids = itertools.count()
_local = threading.local()

LOG_FLOOR = 1e-12


class Tensor:
    """Immutable dense array with a process-unique id.

    Parameters
    ----------
    data : array_like
        Values, converted to a read-only float64 array.
    trainable : bool
        Whether :func:`backward` should report a gradient for this leaf.
    """

    __slots__ = ("data", "trainable", "id")

    def __init__(self, data: Any, trainable: bool = False) -> None:
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.trainable = trainable
        self.id = next(_ids)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # op outputs are freshly allocated, skip the defensive copy
        t = cls.__new__(cls)
        arr = np.asarray(arr)
        arr.flags.writeable = False
        t.data = arr
        t.trainable = False
        t.id = next(_ids)
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs one element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = ", trainable" if self.trainable else ""
        return f"Tensor(shape={self.shape}{tag})"


@dataclass
class Node:
    op: str
    inputs: list[Tensor]
    output: Tensor
    saved: dict[str, Any]
    params: dict[str, Any]


class GradientMap:
    """Mapping from trainable leaf to its gradient array."""

    def __init__(self, grads: dict[int, np.ndarray], leaves: dict[int, Tensor]) -> None:
        self._grads = grads
        self._leaves = leaves

    def __getitem__(self, leaf: Tensor) -> np.ndarray:
        # a trainable leaf the output never touched has zero gradient
        if leaf.id not in self._grads and leaf.trainable:
            return np.zeros_like(leaf.data)
        return self._grads[leaf.id]

    def __contains__(self, leaf: Tensor) -> bool:
        return leaf.id in self._grads

    def __len__(self) -> int:
        return len(self._grads)

    def get(self, leaf: Tensor, default=None):
        return self._grads.get(leaf.id, default)

    def items(self):
        for key, grad in self._grads.items():
            yield self._leaves[key], grad


@dataclass
class Tape:
    """Ordered record of operations; use as a context manager to activate."""

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = _stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        stack.pop()

    def _record(self, node: Node) -> None:
        self.nodes.append(node)

    def is_topological(self) -> bool:
        produced = {}
        for i, node in enumerate(self.nodes):
            for t in node.inputs:
                if t.id in produced and produced[t.id] >= i:
                    return False
            produced[node.output.id] = i
        return True

    def replay(self) -> bool:
        """Re-run every node from its leaves; True if all outputs match bit-exactly."""
        values: dict[int, np.ndarray] = {}
        for node in self.nodes:
            arrays = [values.get(t.id, t.data) for t in node.inputs]
            forward = OPS[node.op][0]
            params = dict(node.params)
            if node.op == "dropout":
                params["mask"] = node.saved.get("mask")
            out, _ = forward(arrays, **params)
            if out.shape != node.output.shape or not np.array_equal(out, node.output.data):
                return False
            values[node.output.id] = out
        return True


def _stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


# ---------------------------------------------------------------------------
# op kernels: forward(arrays, **params) -> (out, saved)
#             backward(g, arrays, out, saved, **params) -> list of grads
# ---------------------------------------------------------------------------


def _same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ContractError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _matmul_fwd(x, **_):
    a, b = x
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    return a @ b, {}


def _matmul_bwd(g, x, out, saved, **_):
    a, b = x
    return [g @ b.T, a.T @ g]


def _add_fwd(x, **_):
    a, b = x
    if a.shape != b.shape:
        row_bias = a.ndim == 2 and (b.shape == (a.shape[1],) or b.shape == (1, a.shape[1]))
        if not row_bias:
            raise ContractError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return a + b, {}


def _add_bwd(g, x, out, saved, **_):
    a, b = x
    if a.shape == b.shape:
        return [g, g]
    return [g, g.sum(axis=0).reshape(b.shape)]


def _sub_fwd(x, **_):
    a, b = x
    _same_shape("sub", a, b)
    return a - b, {}


def _sub_bwd(g, x, out, saved, **_):
    return [g, -g]


def _mul_fwd(x, **_):
    a, b = x
    _same_shape("mul", a, b)
    return a * b, {}


def _mul_bwd(g, x, out, saved, **_):
    a, b = x
    return [g * b, g * a]


def _mul_scalar_fwd(x, scalar, **_):
    return x[0] * float(scalar), {}


def _mul_scalar_bwd(g, x, out, saved, scalar, **_):
    return [g * float(scalar)]


def _add_scalar_fwd(x, scalar, **_):
    return x[0] + float(scalar), {}


def _add_scalar_bwd(g, x, out, saved, **_):
    return [g]


def _relu_fwd(x, **_):
    return np.maximum(x[0], 0.0), {}


def _relu_bwd(g, x, out, saved, **_):
    return [g * (x[0] > 0.0)]


def _sigmoid_fwd(x, **_):
    z = x[0]
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out, {}


def _sigmoid_bwd(g, x, out, saved, **_):
    return [g * out * (1.0 - out)]


def _softmax_fwd(x, **_):
    z = x[0]
    if z.ndim != 2:
        raise ContractError(f"softmax_rows: expected 2-d input, got {z.shape}")
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True), {}


def _softmax_bwd(g, x, out, saved, **_):
    return [out * (g - (g * out).sum(axis=1, keepdims=True))]


def _log_fwd(x, **_):
    a = x[0]
    if np.any(a <= 0.0):
        raise DomainError("log: input must be strictly positive (clamp first)")
    return np.log(a), {}


def _log_bwd(g, x, out, saved, **_):
    return [g / x[0]]


def _clamp_min_fwd(x, floor, **_):
    return np.maximum(x[0], float(floor)), {}


def _clamp_min_bwd(g, x, out, saved, floor, **_):
    return [g * (x[0] > float(floor))]


def _square_fwd(x, **_):
    return x[0] * x[0], {}


def _square_bwd(g, x, out, saved, **_):
    return [2.0 * x[0] * g]


def _sqrt_fwd(x, **_):
    a = x[0]
    if np.any(a < 0.0):
        raise DomainError("sqrt: input must be nonnegative")
    return np.sqrt(a), {}


def _sqrt_bwd(g, x, out, saved, **_):
    # subgradient 0 at the origin keeps collapsed spreads finite
    safe = np.where(out > 0.0, out, 1.0)
    return [np.where(out > 0.0, 0.5 * g / safe, 0.0)]


def _mean_fwd(x, axis=None, **_):
    a = x[0]
    if axis is None:
        return np.asarray(a.mean()), {}
    return a.mean(axis=axis), {}


def _mean_bwd(g, x, out, saved, axis=None, **_):
    a = x[0]
    if axis is None:
        return [np.full(a.shape, float(g) / a.size)]
    return [np.broadcast_to(np.expand_dims(g, axis) / a.shape[axis], a.shape).copy()]


def _sum_fwd(x, axis=None, **_):
    a = x[0]
    if axis is None:
        return np.asarray(a.sum()), {}
    return a.sum(axis=axis), {}


def _sum_bwd(g, x, out, saved, axis=None, **_):
    a = x[0]
    if axis is None:
        return [np.full(a.shape, float(g))]
    return [np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()]


def _concat_fwd(x, **_):
    cols = {a.shape[1:] for a in x}
    if len(cols) != 1:
        raise ContractError(f"concat_rows: trailing shapes differ {sorted(cols)}")
    return np.concatenate(x, axis=0), {}


def _concat_bwd(g, x, out, saved, **_):
    grads, start = [], 0
    for a in x:
        grads.append(g[start:start + a.shape[0]])
        start += a.shape[0]
    return grads


def _batchnorm_fwd(x, mode="eval", running_mean=None, running_var=None, eps=1e-5, **_):
    a, gamma, beta = x
    if a.ndim != 2 or gamma.shape != (a.shape[1],) or beta.shape != (a.shape[1],):
        raise ContractError(
            f"batchnorm: input {a.shape} with gamma {gamma.shape}, beta {beta.shape}"
        )
    if mode == "train":
        if a.shape[0] < 2:
            raise ContractError("batchnorm: train mode needs at least 2 rows")
        mu = a.mean(axis=0)
        var = a.var(axis=0)
    else:
        mu = np.asarray(running_mean, dtype=np.float64)
        var = np.asarray(running_var, dtype=np.float64)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (a - mu) * inv_std
    return xhat * gamma + beta, {"xhat": xhat, "inv_std": inv_std, "mean": mu, "var": var}


def _batchnorm_bwd(g, x, out, saved, mode="eval", **_):
    a, gamma, beta = x
    xhat, inv_std = saved["xhat"], saved["inv_std"]
    dgamma = (g * xhat).sum(axis=0)
    dbeta = g.sum(axis=0)
    dxhat = g * gamma
    if mode == "train":
        n = a.shape[0]
        dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    else:
        dx = dxhat * inv_std
    return [dx, dgamma, dbeta]


def _dropout_fwd(x, p=0.1, mode="eval", rng=None, mask=None, **_):
    a = x[0]
    if mode != "train" or p == 0.0:
        return a.copy(), {"mask": None}
    if mask is None:
        if rng is None:
            raise ContractError("dropout: train mode requires an rng")
        mask = (rng.random(a.shape) >= p) / (1.0 - p)
    return a * mask, {"mask": mask}


def _dropout_bwd(g, x, out, saved, **_):
    mask = saved["mask"]
    return [g if mask is None else g * mask]


OPS: dict[str, tuple[Callable, Callable]] = {
    "matmul": (_matmul_fwd, _matmul_bwd),
    "add": (_add_fwd, _add_bwd),
    "sub": (_sub_fwd, _sub_bwd),
    "mul": (_mul_fwd, _mul_bwd),
    "mul_scalar": (_mul_scalar_fwd, _mul_scalar_bwd),
    "add_scalar": (_add_scalar_fwd, _add_scalar_bwd),
    "relu": (_relu_fwd, _relu_bwd),
    "sigmoid": (_sigmoid_fwd, _sigmoid_bwd),
    "softmax_rows": (_softmax_fwd, _softmax_bwd),
    "log": (_log_fwd, _log_bwd),
    "clamp_min": (_clamp_min_fwd, _clamp_min_bwd),
    "square": (_square_fwd, _square_bwd),
    "sqrt": (_sqrt_fwd, _sqrt_bwd),
    "mean": (_mean_fwd, _mean_bwd),
    "sum": (_sum_fwd, _sum_bwd),
    "concat_rows": (_concat_fwd, _concat_bwd),
    "batchnorm": (_batchnorm_fwd, _batchnorm_bwd),
    "dropout": (_dropout_fwd, _dropout_bwd),
}

_ARITY = {"add": 2, "sub": 2, "mul": 2, "matmul": 2, "batchnorm": 3}


def apply(
    op: str,
    inputs: Sequence[Tensor],
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    **params: Any,
) -> Tensor:
    """Evaluate ``op`` on ``inputs`` and record it on the active tape, if any.

    ``mode`` is consumed by ``dropout`` and ``batchnorm`` only. Extra keyword
    parameters are op specific (``scalar``, ``axis``, ``floor``, ``p``,
    ``running_mean``, ``running_var``, ``eps``).
    """
    if op not in OPS:
        raise ContractError(f"unknown op {op!r}")
    expected = _ARITY.get(op)
    if expected is not None and len(inputs) != expected:
        raise ContractError(f"{op}: expected {expected} inputs, got {len(inputs)}")
    if op != "concat_rows" and expected is None and len(inputs) != 1:
        raise ContractError(f"{op}: expected 1 input, got {len(inputs)}")
    if op in ("batchnorm", "dropout"):
        params["mode"] = mode
    forward = OPS[op][0]
    arrays = [t.data for t in inputs]
    if op == "dropout":
        out, saved = forward(arrays, rng=rng, **params)
    else:
        out, saved = forward(arrays, **params)
    result = Tensor._wrap(out)
    tape = active_tape()
    if tape is not None:
        tape._record(Node(op, list(inputs), result, saved, params))
    return result


def backward(output: Tensor, tape: Tape | None = None) -> GradientMap:
    """Gradients of a one-element ``output`` w.r.t. every trainable leaf on the tape."""
    tape = tape if tape is not None else active_tape()
    if tape is None:
        raise ContractError("backward: no tape given and none active")
    if output.data.size != 1 or output.data.ndim > 1:
        raise ContractError(f"backward: output must be a scalar, got shape {output.shape}")
    produced = {node.output.id for node in tape.nodes}
    if output.id not in produced:
        raise ContractError("backward: output was not recorded on this tape")

    grads: dict[int, np.ndarray] = {output.id: np.ones_like(output.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        for t in node.inputs:
            if t.trainable and t.id not in produced:
                leaves[t.id] = t
        g = grads.get(node.output.id)
        if g is None:
            continue
        back = OPS[node.op][1]
        in_grads = back(g, [t.data for t in node.inputs], node.output.data, node.saved, **node.params)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None:
                continue
            if t.id in grads:
                grads[t.id] = grads[t.id] + gi
            else:
                grads[t.id] = gi

    out = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        out[key] = np.zeros(leaf.shape) if g is None else np.asarray(g).reshape(leaf.shape)
    return GradientMap(out, leaves)


def grad_check(
    function: Callable[..., Tensor],
    point: Sequence[Tensor | np.ndarray],
    eps: float = 1e-6,
) -> float:
    """Max relative error between :func:`backward` and central differences.

    ``function`` receives one trainable :class:`Tensor` per entry of ``point``
    and must return a scalar tensor built with :func:`apply`. The relative
    error uses ``max(|a|, |b|, 1e-8)`` as denominator.
    """
    if not 0.0 < eps <= 1e-3:
        raise ContractError(f"grad_check: eps must be in (0, 1e-3], got {eps}")
    base = [np.array(p.data if isinstance(p, Tensor) else p, dtype=np.float64) for p in point]

    leaves = [Tensor(b, trainable=True) for b in base]
    with Tape() as tape:
        out = function(*leaves)
    grads = backward(out, tape)

    def value(arrays):
        return function(*[Tensor(a) for a in arrays]).item()

    worst = 0.0
    for i, b in enumerate(base):
        analytic = grads[leaves[i]]
        for idx in np.ndindex(b.shape):
            plus = [a.copy() for a in base]
            minus = [a.copy() for a in base]
            plus[i][idx] += eps
            minus[i][idx] -= eps
            numeric = (value(plus) - value(minus)) / (2.0 * eps)
            a = float(analytic[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# thin helpers so model and loss code reads like arithmetic


def matmul(a, b):
    return apply("matmul", [a, b])


def add(a, b):
    return apply("add", [a, b])


def sub(a, b):
    return apply("sub", [a, b])


def mul(a, b):
    return apply("mul", [a, b])


def scale(a, s):
    return apply("mul_scalar", [a], scalar=s)


def shift(a, s):
    return apply("add_scalar", [a], scalar=s)


def relu(a):
    return apply("relu", [a])


def sigmoid(a):
    return apply("sigmoid", [a])


def softmax_rows(a):
    return apply("softmax_rows", [a])


def log(a):
    return apply("log", [a])


def safe_log(a, floor=LOG_FLOOR):
    """log with the input clamped to ``floor`` first."""
    return apply("log", [apply("clamp_min", [a], floor=floor)])


def square(a):
    return apply("square", [a])


def sqrt(a):
    return apply("sqrt", [a])


def mean(a, axis=None):
    return apply("mean", [a], axis=axis)


def total(a, axis=None):
    return apply("sum", [a], axis=axis)


def concat_rows(tensors):
    return apply("concat_rows", list(tensors))
