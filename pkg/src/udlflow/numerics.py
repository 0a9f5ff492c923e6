"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every Tensor produced by an operation is a node of the differentiation
tape: it remembers its parents and a closure that maps its output gradient
to parent gradients. backward() topologically sorts the reachable graph
and accumulates gradients into the .grad field of tensors that require
them. The tape is implicit and rebuilt on every forward pass.

Values are always float64 and stored row-major. A checked mode
(set_check_finite) asserts finiteness after every primitive.
"""

from __future__ import annotations

import numpy as np
from scipy.special import digamma, gammaln

from .errors import ContractError, DimensionError

_CHECK_FINITE = False


def set_check_finite(flag: bool) -> None:
    """Toggle NaN/Inf detection after every primitive operation."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(flag)


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A dense array plus an optional gradient accumulator.

    Tensors are immutable after construction except for .grad, which
    backward() fills in. requires_grad marks trainable leaves; derived
    tensors participate in the tape whenever any parent does.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    # keep numpy from absorbing us in mixed expressions; reflected
    # operators below handle ndarray-on-the-left arithmetic
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _backward_fn=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward_fn = _backward_fn
        if _CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise FloatingPointError("non-finite value produced")

    # -- introspection ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() needs a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff --------------------------------------------------------

    def backward(self) -> None:
        """Populate .grad of every reachable tensor with d(self)/d(tensor).

        self must be scalar (size 1).
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in node._backward_fn(g):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return powc(self, exponent)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _binary(a, b, out_data, da, db) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(g):
        return ((a, _unbroadcast(da(g), a.data.shape)),
                (b, _unbroadcast(db(g), b.data.shape)))

    return Tensor(out_data(a.data, b.data), _parents=(a, b),
                  _backward_fn=backward_fn)


def add(a, b) -> Tensor:
    return _binary(a, b, np.add, lambda g: g, lambda g: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, np.subtract, lambda g: g, lambda g: -g)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(a, b, np.multiply,
                   lambda g: g * b.data, lambda g: g * a.data)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(a, b, np.divide,
                   lambda g: g / b.data,
                   lambda g: -g * a.data / (b.data * b.data))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}")

    def backward_fn(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return Tensor(a.data @ b.data, _parents=(a, b), _backward_fn=backward_fn)


def relu(x) -> Tensor:
    """Elementwise max(0, x). The subgradient at 0 is defined as 0."""
    x = as_tensor(x)
    mask = x.data > 0.0

    def backward_fn(g):
        return ((x, g * mask),)

    return Tensor(np.where(mask, x.data, 0.0), _parents=(x,),
                  _backward_fn=backward_fn)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def backward_fn(g):
        return ((x, g * out),)

    return Tensor(out, _parents=(x,), _backward_fn=backward_fn)


def log(x) -> Tensor:
    x = as_tensor(x)

    def backward_fn(g):
        return ((x, g / x.data),)

    return Tensor(np.log(x.data), _parents=(x,), _backward_fn=backward_fn)


def powc(x, exponent: float) -> Tensor:
    x = as_tensor(x)
    e = float(exponent)

    def backward_fn(g):
        return ((x, g * e * x.data ** (e - 1.0)),)

    return Tensor(x.data ** e, _parents=(x,), _backward_fn=backward_fn)


def absolute(x) -> Tensor:
    """Elementwise |x| with sign subgradient (0 at the kink)."""
    x = as_tensor(x)
    s = np.sign(x.data)

    def backward_fn(g):
        return ((x, g * s),)

    return Tensor(np.abs(x.data), _parents=(x,), _backward_fn=backward_fn)


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is zero outside the interval."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)

    def backward_fn(g):
        return ((x, g * inside),)

    return Tensor(np.clip(x.data, lo, hi), _parents=(x,),
                  _backward_fn=backward_fn)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.data.shape

    def backward_fn(g):
        if axis is None:
            return ((x, np.broadcast_to(g, shape).copy()),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return ((x, np.broadcast_to(g2, shape).copy()),)

    return Tensor(x.data.sum(axis=axis, keepdims=keepdims), _parents=(x,),
                  _backward_fn=backward_fn)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def tmax(x, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along an axis; gradient flows to the first argmax."""
    x = as_tensor(x)
    idx = np.argmax(x.data, axis=axis)

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        g2 = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gx, np.expand_dims(idx, axis), g2, axis=axis)
        return ((x, gx),)

    return Tensor(x.data.max(axis=axis, keepdims=keepdims), _parents=(x,),
                  _backward_fn=backward_fn)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.data.shape

    def backward_fn(g):
        return ((x, g.reshape(old)),)

    return Tensor(x.data.reshape(shape), _parents=(x,),
                  _backward_fn=backward_fn)


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError("transpose expects a 2-D tensor")

    def backward_fn(g):
        return ((x, g.T),)

    return Tensor(x.data.T, _parents=(x,), _backward_fn=backward_fn)


def solve(a, c) -> Tensor:
    """X = A^{-1} C for square A; gradients flow into both operands.

    With g the output gradient, dC = A^{-T} g and dA = -dC X^T.
    """
    a, c = as_tensor(a), as_tensor(c)
    if a.data.ndim != 2 or a.data.shape[0] != a.data.shape[1]:
        raise DimensionError("solve expects a square matrix")
    x = np.linalg.solve(a.data, c.data)

    def backward_fn(g):
        gc = np.linalg.solve(a.data.T, g)
        return ((a, -gc @ x.T), (c, gc))

    return Tensor(x, _parents=(a, c), _backward_fn=backward_fn)


def take(x, flat_indices: np.ndarray) -> Tensor:
    """Gather x.flat[flat_indices]; backward scatter-adds.

    flat_indices may have any shape; the output has that shape. Used to
    build im2col patch matrices for convolutional conditioners.
    """
    x = as_tensor(x)
    idx = np.asarray(flat_indices, dtype=np.intp)
    n = x.data.size

    def backward_fn(g):
        gx = np.zeros(n, dtype=np.float64)
        np.add.at(gx, idx.reshape(-1), g.reshape(-1))
        return ((x, gx.reshape(x.data.shape)),)

    return Tensor(x.data.reshape(-1)[idx], _parents=(x,),
                  _backward_fn=backward_fn)


def put(values, shape, flat_indices: np.ndarray) -> Tensor:
    """Place a vector of values into a zero tensor at flat indices.

    Inverse companion of take(); used to assemble diagonal matrices from
    parameter vectors.
    """
    values = as_tensor(values)
    idx = np.asarray(flat_indices, dtype=np.intp)
    if idx.size != values.data.size:
        raise DimensionError("put: index count must match value count")

    def backward_fn(g):
        return ((values, g.reshape(-1)[idx].reshape(values.data.shape)),)

    out = np.zeros(int(np.prod(shape)), dtype=np.float64)
    out[idx.reshape(-1)] = values.data.reshape(-1)
    return Tensor(out.reshape(shape), _parents=(values,),
                  _backward_fn=backward_fn)


def lgamma(x) -> Tensor:
    """log Gamma(x), gradient via the digamma function."""
    x = as_tensor(x)

    def backward_fn(g):
        return ((x, g * digamma(x.data)),)

    return Tensor(gammaln(x.data), _parents=(x,), _backward_fn=backward_fn)


def logsumexp(x, axis: int) -> Tensor:
    """Numerically stable log(sum(exp(x))) along an axis."""
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    shifted = exp(sub(x, Tensor(m)))
    return add(log(tsum(shifted, axis=axis)), Tensor(np.squeeze(m, axis=axis)))


def norm(x, k, axis: int = -1) -> Tensor:
    """l_k norm along an axis for k in {1, 2, inf}."""
    if k == 1:
        return tsum(absolute(x), axis=axis)
    if k == 2:
        return powc(tsum(powc(x, 2.0), axis=axis), 0.5)
    if k == np.inf or k == "inf":
        return tmax(absolute(x), axis=axis)
    raise ContractError(f"unsupported norm order {k!r}")


def numeric_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of an array.

    Independent oracle used by the gradient-check tests; keep free of any
    tape machinery.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
