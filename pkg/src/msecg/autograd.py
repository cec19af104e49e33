"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every op builds a node holding its parents and a closure mapping the output
gradient to per-parent gradients. ``backward`` replays the recorded graph in
reverse topological order, accumulating gradients over fan-out.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Sequence

import numpy as np

_grad_enabled = contextvars.ContextVar("msecg_grad_enabled", default=True)


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


@contextlib.contextmanager
def no_grad():
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- operator sugar ---------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value produced by {op}")


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ---------------------------------------------------

def _pair(a, b) -> tuple[Tensor, Tensor]:
    # plain scalars adopt the dtype of the tensor operand
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=as_tensor(b).dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                 "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def reciprocal(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data == 0):
        raise ZeroDivisionError("reciprocal of zero")
    inv = 1.0 / a.data
    return _make(inv, (a,), lambda g: (-g * inv * inv,), "reciprocal")


# -- unary maps ---------------------------------------------------------------

def _max_log(dtype) -> float:
    # exp saturates at the largest finite value instead of overflowing
    return float(np.log(np.finfo(dtype).max)) - 1.0


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(np.minimum(a.data, _max_log(a.dtype)))
    return _make(out, (a,), lambda g: (g * out,), "exp")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _make(a.data * s, (a,), lambda g: (g * s * (1.0 + a.data * (1.0 - s)),), "silu")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data).astype(a.dtype, copy=False)
    return _make(out, (a,), lambda g: (g * _sigmoid(a.data),), "softplus")


_UNARY = {"silu": silu, "sigmoid": sigmoid, "softplus": softplus, "exp": exp, "neg": neg}


def map_unary(x, f: str) -> Tensor:
    try:
        fn = _UNARY[f]
    except KeyError:
        raise ValueError(f"unknown unary map {f!r}; expected one of {sorted(_UNARY)}") from None
    return fn(x)


# -- reductions and shape ops -------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[i] for i in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, ax1, ax2), (a,),
                 lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def flip(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.flip(a.data, axis=axis).copy(), (a,),
                 lambda g: (np.flip(g, axis=axis).copy(),), "flip")


def expand_dims(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.expand_dims(a.data, axis), (a,),
                 lambda g: (np.squeeze(g, axis=axis),), "expand_dims")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    basic = isinstance(index, (int, slice, type(Ellipsis))) or (
        isinstance(index, tuple)
        and all(isinstance(i, (int, slice, type(Ellipsis))) or i is None for i in index))

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(a.data[index]), (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def pad(a, widths, axis: int = -1) -> Tensor:
    """Zero-pad one axis by ``widths = (before, after)``."""
    a = as_tensor(a)
    axis = axis % a.ndim
    spec = [(0, 0)] * a.ndim
    spec[axis] = tuple(widths)
    lo, hi = widths

    def backward(g):
        sl = [slice(None)] * a.ndim
        sl[axis] = slice(lo, g.shape[axis] - hi)
        return (g[tuple(sl)],)

    return _make(np.pad(a.data, spec), (a,), backward, "pad")


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """``a[..., m, k] @ b[k, n]``; leading dims of ``a`` act as a batch."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def conv1d(x, w, bias=None, padding: str = "same", groups: int = 1) -> Tensor:
    """Grouped 1-D cross-correlation.

    x: [C_in, L] or [B, C_in, L]; w: [C_out, C_in // groups, k]; bias: [C_out].
    ``padding`` is ``same`` (odd k, output length L), ``valid`` or ``causal``
    (k - 1 zeros on the left, output length L).
    """
    x, w = as_tensor(x), as_tensor(w)
    squeeze = x.ndim == 2
    if squeeze:
        x = expand_dims(x, 0)
    if x.ndim != 3 or w.ndim != 3:
        raise ValueError(f"conv1d expects x [B, C, L] and w [O, I, k], got {x.shape}, {w.shape}")
    B, C_in, L = x.shape
    C_out, C_per, k = w.shape
    if groups < 1 or C_in % groups or C_out % groups or C_per != C_in // groups:
        raise ValueError(f"conv1d channel/group mismatch: C_in={C_in}, w={w.shape}, groups={groups}")
    if padding == "same":
        if k % 2 == 0:
            raise ValueError("same padding requires an odd kernel")
        lo = hi = k // 2
    elif padding == "causal":
        lo, hi = k - 1, 0
    elif padding == "valid":
        if k > L:
            raise ValueError(f"kernel {k} longer than signal {L} in valid mode")
        lo = hi = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (lo, hi)))
    L_out = xp.shape[-1] - k + 1
    G, O_g = groups, C_out // groups
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=-1)  # [B, C_in, L_out, k]
    win = win.reshape(B, G, C_per, L_out, k)
    wg = w.data.reshape(G, O_g, C_per, k)
    out = np.einsum("bgcnk,gock->bgon", win, wg, optimize=True).reshape(B, C_out, L_out)
    parents = [x, w]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None]
        parents.append(bias)

    def backward(g):
        gg = g.reshape(B, G, O_g, L_out)
        gw = np.einsum("bgon,bgcnk->gock", gg, win, optimize=True).reshape(w.shape)
        gwin = np.einsum("bgon,gock->bgcnk", gg, wg, optimize=True).reshape(B, C_in, L_out, k)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[..., j:j + L_out] += gwin[..., j]
        gx = gxp[..., lo:lo + L]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    y = _make(out, parents, backward, "conv1d")
    if squeeze:
        y = reshape(y, y.shape[1:])
    return y


def conv_transpose1d(x, w, bias=None, stride: int = 1) -> Tensor:
    """Transposed 1-D convolution without padding.

    x: [B, C_in, L]; w: [C_in, C_out, k]; output length (L - 1) * stride + k.
    """
    x, w = as_tensor(x), as_tensor(w)
    B, C_in, L = x.shape
    C_w, C_out, k = w.shape
    if C_w != C_in:
        raise ValueError(f"conv_transpose1d channel mismatch: {x.shape} vs {w.shape}")
    L_out = (L - 1) * stride + k
    contrib = np.einsum("bcn,cok->bonk", x.data, w.data, optimize=True)
    out = np.zeros((B, C_out, L_out), dtype=np.result_type(x.data, w.data))
    span = (L - 1) * stride + 1
    for j in range(k):
        out[:, :, j:j + span:stride] += contrib[..., j]
    parents = [x, w]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[None, :, None]
        parents.append(bias)

    def backward(g):
        gc = np.stack([g[:, :, j:j + span:stride] for j in range(k)], axis=-1)  # [B, O, L, k]
        gx = np.einsum("bonk,cok->bcn", gc, w.data, optimize=True)
        gw = np.einsum("bonk,bcn->cok", gc, x.data, optimize=True)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return _make(out, parents, backward, "conv_transpose1d")


def custom_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Register an op whose backward is supplied by the caller."""
    return _make(data, [as_tensor(p) for p in parents], backward, op)


# -- backward -----------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Populate ``.grad`` on every leaf reachable from scalar ``loss``.

    Returns a map from each requires-grad leaf to its gradient.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            leaves[node] = node.grad
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=parent.dtype)
    return leaves
