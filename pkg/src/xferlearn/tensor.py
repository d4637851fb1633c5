"""Dense n-d arrays with reverse-mode automatic differentiation.

The graph is recorded dynamically: every op that touches a tensor with
``requires_grad=True`` appends a node holding the backward closure.  Nodes
are ordered by creation, so the backward pass is a simple reverse sweep.
Storage is float32 by default; ``use_float64()`` switches the whole module
to double precision for gradient checking.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np

_DTYPE = np.float32
_DETERMINISTIC = False


def current_dtype():
    return _DTYPE


def set_dtype(dtype) -> None:
    global _DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _DTYPE = dtype


def set_deterministic(flag: bool) -> None:
    global _DETERMINISTIC
    _DETERMINISTIC = bool(flag)


@contextlib.contextmanager
def use_float64():
    """Temporarily run every new tensor and op in double precision."""
    prev = _DTYPE
    set_dtype(np.float64)
    try:
        yield
    finally:
        set_dtype(prev)


class ShapeError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class GraphNode:
    """One recorded op: output tensor, input tensors, backward closure."""

    __slots__ = ("op", "inputs", "backward_fn")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward_fn: Callable):
        self.op = op
        self.inputs = tuple(inputs)
        # backward_fn(grad_out) -> tuple of grads aligned with inputs (None allowed)
        self.backward_fn = backward_fn


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.node: GraphNode | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, op: str, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(t.requires_grad or t.node is not None for t in inputs):
        out.requires_grad = True
        out.node = GraphNode(op, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise ops ----------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(a.data + b.data, "add", (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(a.data - b.data, "sub", (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(a.data * b.data, "mul", (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _make(a.data / b.data, "div", (a, b), bwd)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bwd(g):
        return (g * out_data,)

    return _make(out_data, "exp", (a,), bwd)


def log(a: Tensor) -> Tensor:
    def bwd(g):
        return (g / a.data,)

    return _make(np.log(a.data), "log", (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def bwd(g):
        return (g / (2.0 * out_data),)

    return _make(out_data, "sqrt", (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # gradient at exactly 0 is 0

    def bwd(g):
        return (g * mask,)

    return _make(np.maximum(a.data, 0), "relu", (a,), bwd)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    # gradient at exactly 0 defined as slope
    factor = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)

    def bwd(g):
        return (g * factor,)

    return _make(np.where(a.data > 0, a.data, slope * a.data), "leaky_relu", (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    out_data = np.where(
        a.data >= 0,
        1.0 / (1.0 + np.exp(-np.clip(a.data, -500, 500))),
        np.exp(np.clip(a.data, -500, 500)) / (1.0 + np.exp(np.clip(a.data, -500, 500))),
    )

    def bwd(g):
        return (g * out_data * (1.0 - out_data),)

    return _make(out_data, "sigmoid", (a,), bwd)


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) without overflow for large |x|."""
    x = a.data
    out_data = np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))), x - np.log1p(np.exp(-np.abs(x))))

    def bwd(g):
        # d/dx log sigmoid(x) = sigmoid(-x)
        s = np.where(
            x >= 0,
            np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))),
            1.0 / (1.0 + np.exp(-np.abs(x))),
        )
        return (g * s,)

    return _make(out_data, "log_sigmoid", (a,), bwd)


# -- shape ops ----------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old_shape = a.data.shape

    def bwd(g):
        return (g.reshape(old_shape),)

    return _make(a.data.reshape(shape), "reshape", (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), "concat", tensors, bwd)


def index_select(a: Tensor, indices, axis: int = 0) -> Tensor:
    idx = np.asarray(indices)

    def bwd(g):
        out = np.zeros_like(a.data)
        np.add.at(out, (slice(None),) * axis + (idx,), g)
        return (out,)

    return _make(np.take(a.data, idx, axis=axis), "index_select", (a,), bwd)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    in_shape = a.data.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, in_shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, in_shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), "sum", (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    in_shape = a.data.shape
    if axis is None:
        count = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([in_shape[i] for i in ax]))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / count, in_shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g / count, in_shape).copy(),)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), "mean", (a,), bwd)


# -- linear algebra -----------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} x {b.data.shape}")

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, "matmul", (a, b), bwd)


# -- convolution / pooling ----------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    n, c, h, w = x.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        i_end = i + stride * ho
        for j in range(kw):
            j_end = j + stride * wo
            cols[:, :, i, j] = x[:, :, i:i_end:stride, j:j_end:stride]
    return cols.reshape(n, c * kh * kw, ho * wo), ho, wo


def _col2im(cols: np.ndarray, x_shape, kh, kw, stride, padding, ho, wo):
    n, c, h, w = x_shape
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    hp, wp = h + 2 * padding, w + 2 * padding
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        i_end = i + stride * ho
        for j in range(kw):
            j_end = j + stride * wo
            out[:, :, i:i_end:stride, j:j_end:stride] += cols[:, :, i, j]
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


def conv2d(x: Tensor, w: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    n, c, h, wd = x.data.shape
    f, cw, kh, kw = w.data.shape
    if c != cw:
        raise ShapeError(f"conv2d channel mismatch: input {c} vs kernel {cw}")
    if (h + 2 * padding - kh) % stride or (wd + 2 * padding - kw) % stride:
        raise ShapeError(
            f"conv2d non-integral output for input {x.data.shape}, "
            f"kernel {w.data.shape}, stride {stride}, padding {padding}"
        )
    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    wmat = w.data.reshape(f, -1)
    out_data = np.einsum("fk,nkp->nfp", wmat, cols).reshape(n, f, ho, wo)
    out_data += bias.data.reshape(1, f, 1, 1)

    def bwd(g):
        gmat = g.reshape(n, f, ho * wo)
        gw = np.einsum("nfp,nkp->fk", gmat, cols).reshape(w.data.shape)
        gb = g.sum(axis=(0, 2, 3))
        gcols = np.einsum("fk,nfp->nkp", wmat, gmat)
        gx = _col2im(gcols, x.data.shape, kh, kw, stride, padding, ho, wo)
        return gx, gw, gb

    return _make(out_data, "conv2d", (x, w, bias), bwd)


def maxpool2d(x: Tensor, size: int = 2, stride: int = 2) -> Tensor:
    if size != stride:
        raise ShapeError("maxpool2d supports size == stride only")
    n, c, h, w = x.data.shape
    if h % stride or w % stride:
        raise ShapeError(f"maxpool2d dims {h}x{w} not divisible by stride {stride}")
    ho, wo = h // stride, w // stride
    windows = x.data.reshape(n, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5)
    flat = windows.reshape(n, c, ho, wo, size * size)
    argmax = flat.argmax(axis=-1)  # first occurrence on ties (row-major window order)
    out_data = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]

    def bwd(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, argmax[..., None], g[..., None], axis=-1)
        gx = (
            gflat.reshape(n, c, ho, wo, size, size)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        return (gx,)

    return _make(out_data, "maxpool2d", (x,), bwd)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over an N x C x H x W tensor.

    In training mode the running stats arrays are updated in place.
    """
    n, c, h, w = x.data.shape
    axes = (0, 2, 3)
    if training:
        if n < 2:
            raise ParameterError("batchnorm2d needs batch size >= 2 in train mode")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = n * h * w
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        # running var uses the unbiased estimate, matching common practice
        running_var *= 1.0 - momentum
        running_var += momentum * var * m / max(m - 1, 1)
    else:
        mean = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out_data = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    def bwd(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(1, c, 1, 1)
        if training:
            m = n * h * w
            gx = (
                inv_std.reshape(1, c, 1, 1)
                / m
                * (
                    m * gxhat
                    - gxhat.sum(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
                )
            )
        else:
            gx = gxhat * inv_std.reshape(1, c, 1, 1)
        return gx, ggamma, gbeta

    return _make(out_data, "batchnorm2d", (x, gamma, beta), bwd)


# -- softmax / entropy ---------------------------------------------------


def softmax(x: Tensor, temperature: float = 1.0) -> Tensor:
    if temperature <= 0:
        raise ParameterError(f"softmax temperature must be > 0, got {temperature}")
    z = (x.data - x.data.max(axis=-1, keepdims=True)) / temperature
    e = np.exp(z)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        return (out_data * (g - dot) / temperature,)

    return _make(out_data, "softmax", (x,), bwd)


def log_softmax(x: Tensor, temperature: float = 1.0) -> Tensor:
    if temperature <= 0:
        raise ParameterError(f"softmax temperature must be > 0, got {temperature}")
    z = (x.data - x.data.max(axis=-1, keepdims=True)) / temperature
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out_data = z - lse
    p = np.exp(out_data)

    def bwd(g):
        return ((g - p * g.sum(axis=-1, keepdims=True)) / temperature,)

    return _make(out_data, "log_softmax", (x,), bwd)


def entropy(p: Tensor) -> Tensor:
    """Shannon entropy in nats along the last axis, summed over leading axes.

    0 * ln 0 is taken as 0.  Raises on negative entries or rows that do
    not sum to 1 within 1e-5.
    """
    if (p.data < 0).any():
        raise ParameterError("entropy: negative probability entries")
    sums = p.data.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-5):
        raise ParameterError("entropy: rows must sum to 1 within 1e-5")
    safe = np.maximum(p.data, 1e-30)
    logs = np.log(safe)
    out_data = -(p.data * logs).sum()

    def bwd(g):
        return (-g * (logs + 1.0),)

    return _make(np.asarray(out_data, dtype=p.data.dtype), "entropy", (p,), bwd)


# -- backward pass -------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate dloss/dleaf into .grad of every requires_grad leaf.

    The recorded graph is released afterwards so each forward pass starts
    fresh.  Repeated backward calls on re-recorded graphs accumulate.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    # topological order by DFS; creation order guarantees acyclicity
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        t, processed = stack.pop()
        if processed:
            order.append(t)
            continue
        if id(t) in seen or t.node is None:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for inp in t.node.inputs:
            stack.append((inp, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        input_grads = t.node.backward_fn(g)
        for inp, ig in zip(t.node.inputs, input_grads):
            if ig is None:
                continue
            if inp.node is not None:
                acc = grads.get(id(inp))
                grads[id(inp)] = ig if acc is None else acc + ig
            if inp.requires_grad and inp.node is None:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += ig
        t.node = None  # free the graph as we go
    # leaves that double as outputs (loss directly a leaf) need no handling:
    # a leaf has node None and is skipped above
    if loss.requires_grad and loss.node is None and id(loss) not in seen:
        if loss.grad is None:
            loss.grad = np.zeros_like(loss.data)
        loss.grad += np.ones_like(loss.data)


def grad_check(f, x: Tensor, eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    Run inside ``use_float64()`` for meaningful results.  Points where the
    central difference straddles a non-differentiability (maxpool ties)
    are the caller's responsibility to avoid.
    """
    x.requires_grad = True
    x.zero_grad()
    loss = f(x)
    backward(loss)
    analytic = x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x).item()
        flat[i] = orig - eps
        fm = f(x).item()
        flat[i] = orig
        nflat[i] = (fp - fm) / (2 * eps)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
