"""Reverse-mode automatic differentiation over numpy float64 arrays.

A Tensor records, for each operation, the parents that still need gradients
and a closure that scatters the output cotangent back onto them. Calling
``backward()`` on a scalar output walks the tape in reverse topological
order. Operations whose inputs all have ``requires_grad=False`` produce
constant tensors with no tape entry, so a forward pass through frozen
weights costs exactly the underlying numpy work.

Only the primitives the package needs are implemented; shapes follow the
conventions used throughout (features are (C, H, W), weight matrices are
2-D, reductions accept an axis tuple).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ._kernels import col2im3, im2col3

Array = np.ndarray


def _as_array(value) -> Array:
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a cotangent down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Array node on the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data: Array = _as_array(data)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], None] | None = None

    # -- construction ------------------------------------------------------

    @staticmethod
    def constant(data) -> "Tensor":
        return Tensor(data, requires_grad=False)

    @staticmethod
    def parameter(data) -> "Tensor":
        return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # -- introspection -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # -- backward ----------------------------------------------------------

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a cotangent needs a scalar output")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        _accum(self, _as_array(grad))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

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

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- method sugar ------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)

    @property
    def T(self) -> "Tensor":
        return transpose(self, None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def abs(self) -> "Tensor":
        return tabs(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def leaky_relu(self, slope: float = 0.2) -> "Tensor":
        return leaky_relu(self, slope)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor.constant(value)


def _accum(node: Tensor, grad: Array) -> None:
    node.grad = grad if node.grad is None else node.grad + grad


def _make(data: Array, parents: Sequence[Tensor], backward: Callable[[Array], None]) -> Tensor:
    """Build the output node; skip the tape when no parent needs gradients."""
    tracked = tuple(p for p in parents if p.requires_grad)
    out = Tensor(data)
    if tracked:
        out.requires_grad = True
        out._parents = tracked
        out._backward = backward
    return out


# -- pointwise arithmetic --------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data - b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data / b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), backward)


# -- shape ops -------------------------------------------------------------


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = _wrap(x)
    src_shape = x.data.shape
    data = x.data.reshape(shape)

    def backward(g: Array) -> None:
        _accum(x, g.reshape(src_shape))

    return _make(data, (x,), backward)


def transpose(x: Tensor, axes: tuple[int, ...] | None) -> Tensor:
    x = _wrap(x)
    data = x.data.transpose(axes) if axes is not None else x.data.T
    if axes is None:
        inv: tuple[int, ...] | None = None
    else:
        inv = tuple(int(i) for i in np.argsort(axes))

    def backward(g: Array) -> None:
        _accum(x, g.transpose(inv) if inv is not None else g.T)

    return _make(data, (x,), backward)


def getitem(x: Tensor, idx) -> Tensor:
    """Basic (non-repeating) indexing; the adjoint scatters into zeros."""
    x = _wrap(x)
    data = x.data[idx]
    src_shape = x.data.shape

    def backward(g: Array) -> None:
        full = np.zeros(src_shape, dtype=np.float64)
        full[idx] += g
        _accum(x, full)

    return _make(np.array(data, copy=True), (x,), backward)


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_wrap(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g: Array) -> None:
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if part.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(int(lo), int(hi))
                _accum(part, g[tuple(index)])

    return _make(data, parts, backward)


# -- reductions ------------------------------------------------------------


def _expand_reduced(g: Array, shape: tuple[int, ...], axis, keepdims: bool) -> Array:
    if axis is None:
        return np.broadcast_to(g, shape).copy() if np.ndim(g) == 0 else np.full(shape, g)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(a % len(shape) for a in axes)
        kshape = tuple(1 if i in axes else n for i, n in enumerate(shape))
        g = g.reshape(kshape)
    return np.broadcast_to(g, shape).copy()


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: Array) -> None:
        _accum(x, _expand_reduced(g, x.data.shape, axis, keepdims))

    return _make(data, (x,), backward)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for a in axes:
            count *= x.data.shape[a % x.data.ndim]

    def backward(g: Array) -> None:
        _accum(x, _expand_reduced(g, x.data.shape, axis, keepdims) / count)

    return _make(data, (x,), backward)


# -- elementwise nonlinearities -------------------------------------------


def tabs(x: Tensor) -> Tensor:
    x = _wrap(x)
    data = np.abs(x.data)

    def backward(g: Array) -> None:
        _accum(x, g * np.sign(x.data))

    return _make(data, (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    x = _wrap(x)
    data = np.sqrt(x.data)

    def backward(g: Array) -> None:
        _accum(x, g / (2.0 * data))

    return _make(data, (x,), backward)


def exp(x: Tensor) -> Tensor:
    x = _wrap(x)
    data = np.exp(x.data)

    def backward(g: Array) -> None:
        _accum(x, g * data)

    return _make(data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic; never exponentiates a positive argument."""
    x = _wrap(x)
    v = x.data
    data = np.empty_like(v)
    pos = v >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ez = np.exp(v[~pos])
    data[~pos] = ez / (1.0 + ez)

    def backward(g: Array) -> None:
        _accum(x, g * data * (1.0 - data))

    return _make(data, (x,), backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    x = _wrap(x)
    mask = x.data >= 0
    data = np.where(mask, x.data, slope * x.data)

    def backward(g: Array) -> None:
        _accum(x, g * np.where(mask, 1.0, slope))

    return _make(data, (x,), backward)


def l2norm(x: Tensor) -> Tensor:
    """Euclidean norm of the flattened input, with subgradient 0 at the origin."""
    x = _wrap(x)
    norm = float(np.sqrt(np.sum(x.data * x.data)))
    data = np.float64(norm)

    def backward(g: Array) -> None:
        if norm > 0.0:
            _accum(x, (g / norm) * x.data)
        else:
            _accum(x, np.zeros_like(x.data))

    return _make(data, (x,), backward)


# -- linear algebra --------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    data = a.data @ b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(data, (a, b), backward)


# -- spatial ops -----------------------------------------------------------


def conv3x3(x: Tensor, weight: Tensor) -> Tensor:
    """Same-padded stride-1 3x3 convolution: (Cin,H,W) x (Cout,Cin,3,3) -> (Cout,H,W).

    Runs as im2col followed by one BLAS matmul. The column matrix is kept
    alive only when the weight needs a gradient.
    """
    x, weight = _wrap(x), _wrap(weight)
    cin, h, w = x.data.shape
    cout = weight.data.shape[0]
    if weight.data.shape != (cout, cin, 3, 3):
        raise ValueError(
            f"conv3x3 weight shape {weight.data.shape} does not match input channels {cin}"
        )
    cols = im2col3(x.data)
    wmat = weight.data.reshape(cout, cin * 9)
    data = (wmat @ cols).reshape(cout, h, w)
    kept_cols = cols if weight.requires_grad else None

    def backward(g: Array) -> None:
        gmat = g.reshape(cout, h * w)
        if x.requires_grad:
            _accum(x, col2im3(wmat.T @ gmat, h, w))
        if weight.requires_grad:
            _accum(weight, (gmat @ kept_cols.T).reshape(cout, cin, 3, 3))

    return _make(data, (x, weight), backward)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of (C,H,W); adjoint is a 2x2 box sum."""
    x = _wrap(x)
    data = x.data.repeat(2, axis=-2).repeat(2, axis=-1)
    c, h, w = x.data.shape

    def backward(g: Array) -> None:
        _accum(x, g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)))

    return _make(data, (x,), backward)


_INTERP_CACHE: dict[tuple[str, int, int], Array] = {}


def _interp_matrix(n_in: int, n_out: int, mode: str) -> Array:
    """Half-pixel-centre resampling weights as an (n_out, n_in) matrix."""
    key = (mode, n_in, n_out)
    cached = _INTERP_CACHE.get(key)
    if cached is not None:
        return cached
    if n_in == n_out:
        mat = np.eye(n_in, dtype=np.float64)
    else:
        scale = n_in / n_out
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        mat = np.zeros((n_out, n_in), dtype=np.float64)
        rows = np.arange(n_out)
        if mode == "nearest":
            picks = np.minimum(np.floor(src + 0.5).astype(np.intp), n_in - 1)
            mat[rows, picks] = 1.0
        else:
            lo = np.floor(src).astype(np.intp)
            hi = np.minimum(lo + 1, n_in - 1)
            frac = src - lo
            np.add.at(mat, (rows, lo), 1.0 - frac)
            np.add.at(mat, (rows, hi), frac)
    _INTERP_CACHE[key] = mat
    return mat


def _resize(x: Tensor, size: tuple[int, int], mode: str) -> Tensor:
    x = _wrap(x)
    c, h, w = x.data.shape
    hout, wout = size
    ah = _interp_matrix(h, hout, mode)
    aw = _interp_matrix(w, wout, mode)
    data = np.tensordot(ah, x.data, axes=(1, 1)).transpose(1, 0, 2) @ aw.T

    def backward(g: Array) -> None:
        _accum(x, np.tensordot(ah.T, g, axes=(1, 1)).transpose(1, 0, 2) @ aw)

    return _make(np.ascontiguousarray(data), (x,), backward)


def resize_bilinear(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Bilinear resize of (C,H,W) to (C,*size) via cached interpolation matrices."""
    return _resize(x, size, "bilinear")


def resize_nearest(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Nearest-neighbour resize of (C,H,W); same matrix machinery, 0/1 weights."""
    return _resize(x, size, "nearest")


def blend(orig: Tensor, mapped: Tensor, mask: Tensor) -> Tensor:
    """Maskwise convex mix of two feature maps, exact at the mask endpoints.

    Where the mask is exactly 1 the mapped features pass through untouched,
    where it is exactly 0 the originals do; bits are preserved in both cases.
    The derivatives are those of orig + mask*(mapped - orig) everywhere.
    """
    orig, mapped, mask = _wrap(orig), _wrap(mapped), _wrap(mask)
    m = mask.data
    data = np.where(m == 1.0, mapped.data, np.where(m == 0.0, orig.data, orig.data + m * (mapped.data - orig.data)))

    def backward(g: Array) -> None:
        if orig.requires_grad:
            _accum(orig, _unbroadcast(g * (1.0 - m), orig.data.shape))
        if mapped.requires_grad:
            _accum(mapped, _unbroadcast(g * m, mapped.data.shape))
        if mask.requires_grad:
            _accum(mask, _unbroadcast(g * (mapped.data - orig.data), mask.data.shape))

    return _make(data, (orig, mapped, mask), backward)
