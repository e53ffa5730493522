"""Dense f64 tensors with tape-based reverse-mode differentiation.

Operations run eagerly on numpy arrays.  When a :class:`Tape` is active and at
least one operand requires a gradient, the op appends a node to the tape; the
recording order is a topological order, so :meth:`Tape.backward` simply walks
the node list in reverse.  Outside a tape every op is a plain forward
computation and the result carries no graph.
"""
from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

LEAKY_SLOPE = (1.0 / 8.0 + 1.0 / 3.0) / 2.0
COSINE_EPS = 1e-12


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class NumericalError(FloatingPointError):
    pass


class TapeError(RuntimeError):
    pass


_local = threading.local()


def active_tape() -> Optional["Tape"]:
    return getattr(_local, "tape", None)


class Tensor:
    """A row-major f64 array plus an optional handle onto the active tape."""

    __slots__ = ("data", "requires_grad", "node_id", "tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.node_id: Optional[int] = None
        self.tape: Optional[Tape] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, grad={self.requires_grad})"

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self.node_id is not None

    # operator sugar; all route through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Ordered record of differentiable ops for one forward/backward pass.

    Use as a context manager; ops recorded inside reference this tape.  A tape
    can be consumed by :meth:`backward` exactly once.
    """

    def __init__(self):
        self.nodes: list[tuple[Callable, tuple, Tensor]] = []
        self.grads: dict[int, np.ndarray] = {}
        self._used = False
        self._prev: Optional[Tape] = None

    def __enter__(self) -> "Tape":
        self._prev = active_tape()
        _local.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _local.tape = self._prev
        self._prev = None

    def record(self, out: Tensor, inputs: tuple, backward_fn: Callable) -> None:
        out.node_id = len(self.nodes)
        out.tape = self
        self.nodes.append((backward_fn, inputs, out))

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Populate gradients of ``loss`` for every leaf that requires grad.

        Returns a map ``id(leaf) -> gradient``; use :meth:`grad` to query a
        tensor directly.
        """
        if self._used:
            raise TapeError("tape already consumed; record a new forward pass")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self:
            raise TapeError("loss was not recorded on this tape")
        self._used = True
        node_grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        leaf_grads: dict[int, np.ndarray] = {}
        leaves: dict[int, Tensor] = {}
        for idx in range(loss.node_id, -1, -1):
            g = node_grads.pop(idx, None)
            node = self.nodes[idx]
            # release the node: tape <-> tensor is a cycle that would otherwise
            # keep every intermediate array alive until the cycle collector runs
            self.nodes[idx] = None
            if g is None:
                continue
            backward_fn, inputs, _ = node
            contribs = backward_fn(g)
            for inp, c in zip(inputs, contribs):
                if c is None or not isinstance(inp, Tensor):
                    continue
                if inp.node_id is not None:
                    if inp.tape is not self:
                        raise TapeError("graph contains a tensor from a different tape")
                    prev = node_grads.get(inp.node_id)
                    node_grads[inp.node_id] = c if prev is None else prev + c
                elif inp.requires_grad:
                    key = id(inp)
                    leaves[key] = inp
                    prev = leaf_grads.get(key)
                    leaf_grads[key] = c if prev is None else prev + c
        self.nodes.clear()
        self.grads = leaf_grads
        self._leaves = leaves
        return leaf_grads

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient of the last backward pass w.r.t. leaf ``t`` (zeros if unused)."""
        g = self.grads.get(id(t))
        return np.zeros_like(t.data) if g is None else g


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    if loss.tape is None:
        raise TapeError("loss is detached: it was not recorded on any tape")
    return loss.tape.backward(loss)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, opname: str) -> None:
    # a finite sum implies finite entries (nan/inf propagate); the elementwise
    # scan, which allocates a mask, only runs when the sum overflows or is nan
    with np.errstate(over="ignore", invalid="ignore"):
        if np.isfinite(np.sum(arr)):
            return
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite value produced by {opname}")


def _make(out_data: np.ndarray, inputs: tuple, backward_fn: Callable, opname: str) -> Tensor:
    _check_finite(out_data, opname)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = False
    out.node_id = None
    out.tape = None
    out.name = None
    tape = active_tape()
    if tape is not None and any(isinstance(i, Tensor) and i.tracked for i in inputs):
        for i in inputs:
            if isinstance(i, Tensor) and i.node_id is not None and i.tape is not tape:
                raise TapeError(f"{opname}: operand belongs to a different tape")
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, opname: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- binary ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0.0):
        raise DomainError("division by zero")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, a.shape), _unbroadcast(-g * out / bd, b.shape)),
        "div",
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D operands (``a`` may also be 1-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        if ad.ndim == 1:
            return g @ bd.T, np.outer(ad, g)
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), bw, "matmul")


# ----------------------------------------------------------- unary pointwise


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    x = a.data
    factor = np.where(x >= 0, 1.0, slope)
    return _make(x * factor, (a,), lambda g: (g * factor,), "leaky_relu")


def relu(a: Tensor) -> Tensor:
    return leaky_relu(a, 0.0)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow is reported by _make
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0):
        raise DomainError("log of non-positive value")
    return _make(np.log(x), (a,), lambda g: (g / x,), "log")


def sqrt(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x < 0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(x)
    safe = np.where(out > 0, out, np.inf)
    return _make(out, (a,), lambda g: (0.5 * g / safe,), "sqrt")


def clamp(a: Tensor, lo: float = -np.inf, hi: float = np.inf) -> Tensor:
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return _make(np.clip(x, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def acos(a: Tensor) -> Tensor:
    """Arc-cosine with the argument clamped into [-1, 1].

    Out-of-domain drift is clamped but the derivative of the boundary value is
    still passed through (bounded at 1e6) so training never sees NaN.
    """
    x = np.clip(a.data, -1.0, 1.0)
    d = -1.0 / np.sqrt(np.maximum(1.0 - x * x, 1e-12))
    return _make(np.arccos(x), (a,), lambda g: (g * d,), "acos")


def asin(a: Tensor) -> Tensor:
    x = np.clip(a.data, -1.0, 1.0)
    d = 1.0 / np.sqrt(np.maximum(1.0 - x * x, 1e-12))
    return _make(np.arcsin(x), (a,), lambda g: (g * d,), "asin")


def elementwise(kind: str, *operands, **params) -> Tensor:
    """Dispatch by name, e.g. ``elementwise("leaky_relu", x, slope=0.2)``."""
    table = {
        "add": add,
        "sub": sub,
        "mul": mul,
        "sigmoid": sigmoid,
        "leaky_relu": leaky_relu,
        "log": log,
        "exp": exp,
        "clamp": clamp,
        "tanh": tanh,
    }
    if kind not in table:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return table[kind](*operands, **params)


# ------------------------------------------------------------------ shaping


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
        "concat",
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    n = len(tensors)
    return _make(
        np.stack([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
        "stack",
    )


def total(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Sum (named to avoid shadowing the builtin)."""
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(total(a, axis=axis), 1.0 / n)


def _scatter_rows(idx: np.ndarray, values: np.ndarray, num_rows: int) -> np.ndarray:
    """``out[idx[i]] += values[i]`` via one flat bincount (much faster than ufunc.at)."""
    values = np.asarray(values, dtype=np.float64)
    width = int(np.prod(values.shape[1:], dtype=np.int64))
    if width == 0 or len(idx) == 0:
        return np.zeros((num_rows,) + values.shape[1:])
    flat = (idx[:, None] * width + np.arange(width)).ravel()
    out = np.bincount(flat, weights=values.reshape(-1), minlength=num_rows * width)
    return out.reshape((num_rows,) + values.shape[1:])


def gather_rows(a: Tensor, idx) -> Tensor:
    """``a[idx]`` along the first axis; backward scatters with accumulation."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def bw(g):
        return (_scatter_rows(idx.reshape(-1), g.reshape((-1,) + shape[1:]), shape[0]),)

    return _make(a.data[idx], (a,), bw, "gather_rows")


def take(a: Tensor, flat_idx) -> Tensor:
    """Pick elements of the flattened tensor; result has ``flat_idx``'s shape."""
    flat_idx = np.asarray(flat_idx, dtype=np.int64)
    shape = a.shape

    def bw(g):
        return (_scatter_rows(flat_idx.ravel(), g.ravel(), a.data.size).reshape(shape),)

    return _make(a.data.reshape(-1)[flat_idx], (a,), bw, "take")


def index_add(src: Tensor, idx, num_rows: int) -> Tensor:
    """Segment sum: ``out[idx[i]] += src[i]`` into ``num_rows`` rows."""
    idx = np.asarray(idx, dtype=np.int64)
    if len(idx) != src.shape[0]:
        raise ShapeError(f"index_add: {len(idx)} indices for {src.shape[0]} rows")
    out = _scatter_rows(idx, src.data, num_rows)
    return _make(out, (src,), lambda g: (g[idx],), "index_add")


# ------------------------------------------------------------ compound ops


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = e / s
    return _make(out, (a,), lambda g: (np.expand_dims(g, axis) * soft,), "logsumexp")


def circular_correlation(a: Tensor, b: Tensor) -> Tensor:
    """``out[..., k] = sum_i a[..., i] * b[..., (i + k) mod d]``; rowwise for 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"circular_correlation: length mismatch {a.shape} vs {b.shape}")
    d = a.shape[-1]
    ar = np.arange(d)
    fwd = (ar[:, None] + ar[None, :]) % d  # [i, k] -> (i + k) mod d
    rev = (ar[:, None] - ar[None, :]) % d  # [j, k] -> (j - k) mod d
    ad, bd = a.data, b.data
    b_sh = bd[..., fwd]
    out = np.einsum("...i,...ik->...k", ad, b_sh)

    def bw(g):
        ga = np.einsum("...k,...ik->...i", g, b_sh)
        gb = np.einsum("...k,...jk->...j", g, ad[..., rev])
        return ga, gb

    return _make(out, (a, b), bw, "circular_correlation")


def row_norm(a: Tensor) -> Tensor:
    """Euclidean norm along the last axis."""
    x = a.data
    n = np.sqrt((x * x).sum(axis=-1))
    safe = np.where(n > 0, n, 1.0)

    def bw(g):
        return (np.expand_dims(g / safe, -1) * x * np.expand_dims(n > 0, -1),)

    return _make(n, (a,), bw, "row_norm")


def cosine_matrix(a: Tensor, b: Tensor, eps: float = COSINE_EPS) -> Tensor:
    """Pairwise cosine similarities between rows of ``a`` (m×d) and ``b`` (n×d)."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine_matrix: incompatible shapes {a.shape}, {b.shape}")
    na = np.sqrt((a.data**2).sum(axis=1))
    nb = np.sqrt((b.data**2).sum(axis=1))
    if np.any(na <= eps) or np.any(nb <= eps):
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    ua = a.data / na[:, None]
    ub = b.data / nb[:, None]
    out = ua @ ub.T

    def bw(g):
        # d cos(x, y)/dx = (u_y - cos * u_x) / |x|
        ga = (g @ ub - (g * out).sum(axis=1)[:, None] * ua) / na[:, None]
        gb = (g.T @ ua - (g * out).sum(axis=0)[:, None] * ub) / nb[:, None]
        return ga, gb

    return _make(out, (a, b), bw, "cosine_matrix")


def cosine_sim(a: Tensor, b: Tensor, eps: float = COSINE_EPS) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"cosine_sim: expected equal 1-D shapes, got {a.shape}, {b.shape}")
    m = cosine_matrix(reshape(a, (1, -1)), reshape(b, (1, -1)), eps)
    return reshape(m, ())


def conv1d_same(x: Tensor, kernels: Tensor) -> Tensor:
    """Multi-channel 1-D convolution (cross-correlation) with zero 'same' padding.

    ``x``: (B, Cin, L); ``kernels``: (Cout, Cin, w) with odd ``w``.
    Returns (B, Cout, L).
    """
    if x.ndim != 3 or kernels.ndim != 3 or x.shape[1] != kernels.shape[1]:
        raise ShapeError(f"conv1d_same: bad shapes {x.shape}, {kernels.shape}")
    w = kernels.shape[2]
    if w % 2 != 1:
        raise ShapeError("conv1d_same needs an odd kernel width")
    B, cin, L = x.shape
    pad = w // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    # cols[b, c, t, l] = xp[b, c, l + t]
    cols = np.stack([xp[:, :, t : t + L] for t in range(w)], axis=2)
    kd = kernels.data
    out = np.einsum("oct,bctl->bol", kd, cols)

    def bw(g):
        gk = np.einsum("bol,bctl->oct", g, cols)
        gcols = np.einsum("oct,bol->bctl", kd, g)
        gxp = np.zeros_like(xp)
        for t in range(w):
            gxp[:, :, t : t + L] += gcols[:, :, t, :]
        return gxp[:, :, pad : pad + L], gk

    return _make(out, (x, kernels), bw, "conv1d_same")
