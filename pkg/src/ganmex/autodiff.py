"""Dense float64 tensors with reverse-mode automatic differentiation.

Graphs are built eagerly: constructing an operation computes its value
immediately and records a backward closure, so the expression graph doubles
as the tape. One backward pass per scalar root; distinct graphs are fully
independent and may be evaluated concurrently.

Numeric conventions: everything is float64; convolution is cross-correlation
(no kernel flip) with zero padding and explicit stride; the ReLU subgradient
at 0 is 0; softmax subtracts the row max before exponentiating.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class Tensor:
    """A dense float64 array plus the graph edges needed for backprop."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, _parents: tuple = (), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's value; gradients stop here."""
        return Tensor(self.data)

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into .grad for every node in the graph.

        Gradients of all participating nodes are zeroed first, so each call
        yields gradients of this root only.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar root, got shape {self.data.shape}"
            )
        order = _toposort(self)
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return tmean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, neg(_coerce(other)))

    def __rsub__(self, other):
        return add(_coerce(other), neg(self))

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, children_done = stack.pop()
        if children_done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def gradients(root: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """d(root)/d(t) for each t in wrt; root must be scalar.

    Raises if any requested tensor does not participate in root's graph.
    """
    if root.data.size != 1:
        raise ValueError(
            f"gradients requires a scalar root, got shape {root.data.shape}"
        )
    in_graph = {id(n) for n in _toposort(root)}
    for t in wrt:
        if id(t) not in in_graph:
            raise ValueError("requested tensor does not participate in the graph")
    root.backward()
    return [t.grad.copy() for t in wrt]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast dimensions so grad matches the operand's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(
            f"{op}: incompatible shapes {a.data.shape} and {b.data.shape}"
        ) from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast("add", a, b)
    out = Tensor(a.data + b.data, (a, b))

    def backward():
        a.grad += _unbroadcast(out.grad, a.data.shape)
        b.grad += _unbroadcast(out.grad, b.data.shape)

    out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast("mul", a, b)
    out = Tensor(a.data * b.data, (a, b))

    def backward():
        a.grad += _unbroadcast(out.grad * b.data, a.data.shape)
        b.grad += _unbroadcast(out.grad * a.data, b.data.shape)

    out._backward = backward
    return out


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast("div", a, b)
    out = Tensor(a.data / b.data, (a, b))

    def backward():
        a.grad += _unbroadcast(out.grad / b.data, a.data.shape)
        b.grad += _unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape)

    out._backward = backward
    return out


def neg(a) -> Tensor:
    a = _coerce(a)
    out = Tensor(-a.data, (a,))

    def backward():
        a.grad -= out.grad

    out._backward = backward
    return out


def absolute(a) -> Tensor:
    """|a| elementwise; subgradient at 0 is 0."""
    a = _coerce(a)
    out = Tensor(np.abs(a.data), (a,))

    def backward():
        a.grad += out.grad * np.sign(a.data)

    out._backward = backward
    return out


def maximum(a, floor: float) -> Tensor:
    """max(a, floor) elementwise against a constant; gradient flows where a > floor."""
    a = _coerce(a)
    out = Tensor(np.maximum(a.data, floor), (a,))

    def backward():
        a.grad += out.grad * (a.data > floor)

    out._backward = backward
    return out


def log(a) -> Tensor:
    """Natural log; rejects non-positive inputs to keep outputs finite."""
    a = _coerce(a)
    if not np.all(a.data > 0.0):
        raise ValueError("log: input must be strictly positive; clamp first")
    out = Tensor(np.log(a.data), (a,))

    def backward():
        a.grad += out.grad / a.data

    out._backward = backward
    return out


def sqrt(a) -> Tensor:
    a = _coerce(a)
    if not np.all(a.data >= 0.0):
        raise ValueError("sqrt: input must be non-negative")
    out = Tensor(np.sqrt(a.data), (a,))

    def backward():
        a.grad += out.grad * 0.5 / np.maximum(out.data, 1e-300)

    out._backward = backward
    return out


def relu(a) -> Tensor:
    a = _coerce(a)
    out = Tensor(np.maximum(a.data, 0.0), (a,))

    def backward():
        a.grad += out.grad * (a.data > 0.0)

    out._backward = backward
    return out


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    s = expit(a.data)
    out = Tensor(s, (a,))

    def backward():
        a.grad += out.grad * s * (1.0 - s)

    out._backward = backward
    return out


def softmax(a) -> Tensor:
    """Softmax over the last axis, with max subtraction for stability."""
    a = _coerce(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p, (a,))

    def backward():
        g = out.grad
        a.grad += p * (g - (g * p).sum(axis=-1, keepdims=True))

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# reductions and reshaping


def tsum(a, axis=None) -> Tensor:
    a = _coerce(a)
    out = Tensor(a.data.sum(axis=axis), (a,))

    def backward():
        g = out.grad
        if axis is not None:
            g = np.expand_dims(g, axis)
        a.grad += np.broadcast_to(g, a.data.shape)

    out._backward = backward
    return out


def tmean(a, axis=None) -> Tensor:
    a = _coerce(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis) * (1.0 / count)


def l1_norm(a) -> Tensor:
    return tsum(absolute(a))


def l2_norm(a) -> Tensor:
    return sqrt(tsum(mul(a, a)))


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    out = Tensor(a.data.reshape(shape), (a,))

    def backward():
        a.grad += out.grad.reshape(a.data.shape)

    out._backward = backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * out.grad.ndim
            idx[axis] = slice(lo, hi)
            t.grad += out.grad[tuple(idx)]

    out._backward = backward
    return out


def select_columns(a, idx) -> Tensor:
    """Pick one column per row of a 2-D tensor: out[n] = a[n, idx[n]]."""
    a = _coerce(a)
    if a.data.ndim != 2:
        raise ShapeError(f"select_columns: expected 2-D input, got {a.data.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.data.shape[0])
    out = Tensor(a.data[rows, idx], (a,))

    def backward():
        g = np.zeros_like(a.data)
        np.add.at(g, (rows, idx), out.grad)
        a.grad += g

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# matrix and convolution ops


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}"
        )
    out = Tensor(a.data @ b.data, (a, b))

    def backward():
        a.grad += out.grad @ b.data.T
        b.grad += a.data.T @ out.grad

    out._backward = backward
    return out


def _conv_windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Strided (N, C, out_h, out_w, k, k) view over an already padded input."""
    n, c, h, w = x.shape
    out_h = (h - k) // stride + 1
    out_w = (w - k) // stride + 1
    s0, s1, s2, s3 = x.strides
    return np.lib.stride_tricks.as_strided(
        x,
        (n, c, out_h, out_w, k, k),
        (s0, s1, s2 * stride, s3 * stride, s2, s3),
        writeable=False,
    )


def conv2d_input_grad(
    gout: np.ndarray,
    w: np.ndarray,
    input_shape: tuple[int, ...],
    stride: int,
    padding: int,
) -> np.ndarray:
    """Route an output-side gradient (or DeepLIFT multiplier) back through a
    convolution's weights to the input side."""
    n, c, h, width = input_shape
    k = w.shape[2]
    out_h, out_w = gout.shape[2], gout.shape[3]
    gx = np.zeros((n, c, h + 2 * padding, width + 2 * padding))
    for u in range(k):
        for v in range(k):
            contrib = np.einsum("noij,oc->ncij", gout, w[:, :, u, v])
            gx[
                :,
                :,
                u : u + out_h * stride : stride,
                v : v + out_w * stride : stride,
            ] += contrib
    if padding:
        gx = gx[:, :, padding:-padding, padding:-padding]
    return gx


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with OCkk kernels, zero padded."""
    x, w = _coerce(x), _coerce(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(
            f"conv2d: expected 4-D input and kernel, got {x.data.shape} and {w.data.shape}"
        )
    n, c, h, width = x.data.shape
    o, cw, kh, kw = w.data.shape
    if cw != c or kh != kw:
        raise ShapeError(
            f"conv2d: kernel {w.data.shape} does not match input channels {c} "
            "or is not square"
        )
    k = kh
    if h + 2 * padding < k or width + 2 * padding < k:
        raise ShapeError(
            f"conv2d: window {k}x{k} does not fit input {h}x{width} with padding {padding}"
        )
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = _conv_windows(xp, k, stride)
    val = np.einsum("ncijuv,ocuv->noij", windows, w.data, optimize=True)
    parents = [x, w]
    if b is not None:
        b = _coerce(b)
        if b.data.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {b.data.shape} != ({o},)")
        val = val + b.data[None, :, None, None]
        parents.append(b)
    out = Tensor(val, tuple(parents))

    def backward():
        g = out.grad
        w.grad += np.einsum("ncijuv,noij->ocuv", windows, g, optimize=True)
        if b is not None:
            b.grad += g.sum(axis=(0, 2, 3))
        x.grad += conv2d_input_grad(g, w.data, x.data.shape, stride, padding)

    out._backward = backward
    return out


def avg_pool2d(x, window: int) -> Tensor:
    """Non-overlapping average pooling; spatial dims must divide the window."""
    x = _coerce(x)
    if x.data.ndim != 4:
        raise ShapeError(f"avg_pool2d: expected 4-D input, got {x.data.shape}")
    n, c, h, w = x.data.shape
    if h % window or w % window:
        raise ShapeError(
            f"avg_pool2d: window {window} does not divide input {h}x{w}"
        )
    val = x.data.reshape(n, c, h // window, window, w // window, window).mean((3, 5))
    out = Tensor(val, (x,))

    def backward():
        g = np.repeat(np.repeat(out.grad, window, axis=2), window, axis=3)
        x.grad += g / (window * window)

    out._backward = backward
    return out


def upsample2d(x, factor: int = 2) -> Tensor:
    """Nearest-neighbor spatial upsampling of an NCHW tensor."""
    x = _coerce(x)
    if x.data.ndim != 4:
        raise ShapeError(f"upsample2d: expected 4-D input, got {x.data.shape}")
    out = Tensor(np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3), (x,))
    n, c, h, w = x.data.shape

    def backward():
        x.grad += out.grad.reshape(n, c, h, factor, w, factor).sum((3, 5))

    out._backward = backward
    return out


def dropout(x, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout (training-time only): kept units scaled by 1/(1-p)."""
    x = _coerce(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must be in [0, 1), got {p}")
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
    out = Tensor(x.data * mask, (x,))

    def backward():
        x.grad += out.grad * mask

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# test oracle


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(x))
        flat[i] = orig - step
        lo = float(f(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad
