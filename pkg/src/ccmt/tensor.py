"""Dense tensors with reverse-mode automatic differentiation.

Small, closed op set: exactly what the cascaded fusion model and the
baseline fusers need, nothing more. Arrays are numpy (float32 by default);
gradient checking reruns the same graphs in float64. Each op records its
inputs and a vector-Jacobian closure on the produced tensor; ``backward``
replays the records in reverse topological order and accumulates into
``grad`` of every reachable leaf tensor (one the caller created with
``requires_grad=True``); interior results carry gradients onward without
allocating buffers of their own.

Forward passes are deterministic: the same inputs and parameters give
bit-identical outputs (all reductions happen in numpy's fixed order).
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

GELU_CUBIC_COEFF = 0.044715
SQRT_2_OVER_PI = 0.7978845608028654  # sqrt(2/pi) in double precision


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class GraphError(ValueError):
    """Graph contract violation (e.g. backward from a non-scalar)."""


class _OpRecord:
    __slots__ = ("inputs", "vjp", "name")

    def __init__(self, inputs, vjp, name):
        self.inputs = inputs
        self.vjp = vjp
        self.name = name


class Tensor:
    """A numpy array plus optional gradient buffer and graph record."""

    __slots__ = ("data", "requires_grad", "grad", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None and getattr(data, "dtype", None) not in (np.float32, np.float64):
            dtype = np.float32  # python lists/floats default to single precision
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.op: Optional[_OpRecord] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"


def _result(data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable, name: str) -> Tensor:
    out = Tensor(data)
    if any(t.requires_grad or t.op is not None for t in inputs):
        out.requires_grad = True
        out.op = _OpRecord(tuple(inputs), vjp, name)
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor, seed_grad: float = 1.0) -> None:
    """Populate grads of every requires_grad tensor reachable from ``loss``.

    ``loss`` must be scalar; ``seed_grad`` scales the whole pass (used for
    mini-batch averaging). Repeated calls accumulate into existing grads.
    """
    if loss.data.shape != ():
        raise GraphError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    # Iterative topological order over the op DAG.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or node.op is None:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.op.inputs:
            if parent.op is not None and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.asarray(seed_grad, dtype=loss.data.dtype)}
    if loss.requires_grad and loss.op is None:
        _accumulate(loss, grads[id(loss)])

    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node.op.inputs, node.op.vjp(g)):
            if pg is None:
                continue
            if parent.op is not None:
                # Interior node: route onward through the graph.
                if id(parent) in grads:
                    grads[id(parent)] += pg
                else:
                    grads[id(parent)] = np.asarray(pg, dtype=parent.data.dtype).copy()
            elif parent.requires_grad:
                # Leaf parameter: accumulate into its grad buffer.
                _accumulate(parent, np.asarray(pg))


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _result(out, (a, b), vjp, "matmul")


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.data.shape}")

    def vjp(g):
        return (g.T,)

    return _result(x.data.T.copy(), (x,), vjp, "transpose")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")

    def vjp(g):
        return g, g

    return _result(a.data + b.data, (a, b), vjp, "add")


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Row-broadcast add: X[m,n] + b[n]."""
    if x.data.ndim != 2 or bias.data.ndim != 1 or x.data.shape[1] != bias.data.shape[0]:
        raise ShapeError(f"add_bias: shape mismatch {x.data.shape} vs {bias.data.shape}")

    def vjp(g):
        return g, g.sum(axis=0)

    return _result(x.data + bias.data, (x, bias), vjp, "add_bias")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def vjp(g):
        return (g * c,)

    return _result(x.data * c, (x,), vjp, "scale")


def row_softmax(x: Tensor) -> Tensor:
    """Per-row softmax with max subtraction for stability."""
    if x.data.ndim != 2:
        raise ShapeError(f"row_softmax expects a matrix, got shape {x.data.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _result(y, (x,), vjp, "row_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization with population variance (divisor n)."""
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm expects a matrix, got shape {x.data.shape}")
    n = x.data.shape[1]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise ShapeError(
            f"layer_norm: gain/bias shapes {gain.data.shape}/{bias.data.shape} do not match width {n}"
        )
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mean = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std

    def vjp(g):
        dxhat = g * gain.data
        m1 = dxhat.sum(axis=1, keepdims=True)
        m2 = (dxhat * xhat).sum(axis=1, keepdims=True)
        dx = inv_std / n * (n * dxhat - m1 - xhat * m2)
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _result(xhat * gain.data + bias.data, (x, gain, bias), vjp, "layer_norm")


def gelu(x: Tensor) -> Tensor:
    """tanh-approximate GELU: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    u = SQRT_2_OVER_PI * (x.data + GELU_CUBIC_COEFF * x.data**3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def vjp(g):
        du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC_COEFF * x.data**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * du),)

    return _result(out, (x,), vjp, "gelu")


def tensor_sum(x: Tensor) -> Tensor:
    def vjp(g):
        return (np.full_like(x.data, g),)

    return _result(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), vjp, "sum")


def mean_rows(x: Tensor) -> Tensor:
    """Column-wise mean over rows: X[m,n] -> [1,n]."""
    if x.data.ndim != 2:
        raise ShapeError(f"mean_rows expects a matrix, got shape {x.data.shape}")
    m = x.data.shape[0]

    def vjp(g):
        return (np.repeat(g / m, m, axis=0),)

    return _result(x.data.mean(axis=0, keepdims=True), (x,), vjp, "mean_rows")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape

    def vjp(g):
        return (g.reshape(old),)

    return _result(x.data.reshape(shape), (x,), vjp, "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp, "concat")


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows (with repetition allowed); backward scatter-adds."""
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a matrix, got shape {x.data.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("gather_rows expects a flat index list")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {x.data.shape[0]} rows")

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _result(x.data[idx], (x,), vjp, "gather_rows")


def bce_with_logits(logit: Tensor, target) -> Tensor:
    """Elementwise sigmoid binary cross-entropy, stable log-sum-exp form.

    loss = max(x, 0) - x*y + log(1 + exp(-|x|)); d/dx = sigmoid(x) - y.
    ``target`` is a constant (no gradient flows into it).
    """
    x = logit.data
    y = np.asarray(target, dtype=x.dtype)
    if y.shape != x.shape:
        raise ShapeError(f"bce_with_logits: target shape {y.shape} vs logit {x.shape}")
    out = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))

    def vjp(g):
        return (g * (_stable_sigmoid(x) - y),)

    return _result(out, (logit,), vjp, "bce_with_logits")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # exp only ever sees non-positive arguments: no overflow at any |x|
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _result(s, (x,), vjp, "sigmoid")
