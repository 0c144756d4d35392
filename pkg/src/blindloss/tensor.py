"""Minimal dense tensors with define-by-run reverse-mode differentiation.

Every value is a float64 numpy array. Operations record their parents and an
adjoint closure; :func:`backward` walks the recorded graph in reverse
topological order and accumulates gradients into leaves with
``requires_grad=True``.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np


class ContractError(ValueError):
    """An operation was called with inputs that violate its preconditions."""


class DomainError(ArithmeticError):
    """An operation was evaluated outside its mathematical domain."""


Adjoint = Callable[[np.ndarray], tuple]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_adjoint", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if not np.all(np.isfinite(arr)):
            raise DomainError("tensor values must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple = ()
        self._adjoint: Adjoint | None = None
        self.op = "leaf"

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple, adjoint: Adjoint, op: str, check: bool = True) -> "Tensor":
        # a finite sum implies finite entries; the full scan runs only when it is not
        if check and not math.isfinite(data.sum()) and not np.all(np.isfinite(data)):
            raise DomainError(f"{op} produced non-finite values")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._adjoint = adjoint
        else:
            out.requires_grad = False
            out._parents = ()
            out._adjoint = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._adjoint is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(self, other)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: shift(neg(self), other)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(self, other)
    __truediv__ = lambda self, other: div(self, other)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, other: matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer)) and not isinstance(x, bool)


def _binary_operand(a: Tensor, b, op: str):
    if _is_scalar(b):
        return float(b)
    if not isinstance(b, Tensor):
        raise ContractError(f"{op}: second argument must be a Tensor or a scalar")
    if b.shape != a.shape:
        raise ContractError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    return b


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b) -> Tensor:
    if _is_scalar(a):
        a, b = b, a
    b = _binary_operand(a, b, "add")
    if isinstance(b, float):
        return shift(a, b)
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    b = _binary_operand(a, b, "sub")
    if isinstance(b, float):
        return shift(a, -b)
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b) -> Tensor:
    if _is_scalar(a):
        a, b = b, a
    b = _binary_operand(a, b, "mul")
    if isinstance(b, float):
        return scale(a, b)
    ad, bd = a.data, b.data
    return Tensor._from_op(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a: Tensor, b) -> Tensor:
    b = _binary_operand(a, b, "div")
    if isinstance(b, float):
        if b == 0.0:
            raise DomainError("div: division by zero")
        return scale(a, 1.0 / b)
    if np.any(b.data == 0.0):
        raise DomainError("div: division by zero")
    ad, bd = a.data, b.data
    out = ad / bd
    return Tensor._from_op(out, (a, b), lambda g: (g / bd, -g * out / bd), "div")


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg", check=False)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return Tensor._from_op(a.data * s, (a,), lambda g: (g * s,), "scale")


def shift(a: Tensor, s: float) -> Tensor:
    return Tensor._from_op(a.data + float(s), (a,), lambda g: (g,), "shift")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log: argument must be positive")
    ad = a.data
    return Tensor._from_op(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a: Tensor) -> Tensor:
    """Square root; the adjoint at an exact zero is taken as 0 (subgradient)."""
    if np.any(a.data < 0.0):
        raise DomainError("sqrt: argument must be non-negative")
    out = np.sqrt(a.data)

    def adjoint(g):
        safe = np.where(out > 0.0, out, 1.0)
        return (np.where(out > 0.0, g / (2.0 * safe), 0.0),)

    return Tensor._from_op(out, (a,), adjoint, "sqrt")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return Tensor._from_op(a.data * mask, (a,), lambda g: (g * mask,), "relu", check=False)


def clamp_min(a: Tensor, lo: float) -> Tensor:
    """max(a, lo) elementwise; gradient flows only where a > lo."""
    mask = a.data > lo
    return Tensor._from_op(np.where(mask, a.data, lo), (a,), lambda g: (g * mask,), "clamp_min", check=False)


_UNARY = {"exp": exp, "log": log, "sqrt": sqrt, "relu": relu, "neg": neg}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div, "scale": scale, "shift": shift}


def elementwise(kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch an elementwise operation by name."""
    if kind in _UNARY:
        if b is not None:
            raise ContractError(f"{kind} takes a single operand")
        return _UNARY[kind](a)
    if kind in _BINARY:
        if b is None:
            raise ContractError(f"{kind} needs a second operand")
        return _BINARY[kind](a, b)
    raise ContractError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading axes (if any) are batch axes and must agree."""
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise ContractError(f"matmul: need two matrices or equal-rank batches, got {a.shape}, {b.shape}")
    if a.shape[:-2] != b.shape[:-2]:
        raise ContractError(f"matmul: batch extents differ {a.shape[:-2]} vs {b.shape[:-2]}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul: inner extents differ {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def adjoint(g):
        return (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g)

    return Tensor._from_op(ad @ bd, (a, b), adjoint, "matmul")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._from_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose", check=False)


def swap_last(a: Tensor) -> Tensor:
    """Transpose the last two axes."""
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def diagonal(a: Tensor) -> Tensor:
    """Diagonal of the trailing square matrix (batched over leading axes)."""
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ContractError(f"diagonal: trailing axes must be square, got {a.shape}")
    n = a.shape[-1]
    idx = np.arange(n)

    def adjoint(g):
        out = np.zeros(a.shape)
        out[..., idx, idx] = g
        return (out,)

    return Tensor._from_op(a.data[..., idx, idx].copy(), (a,), adjoint, "diagonal", check=False)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for x (N, I), w (I, O), b (O,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ContractError(f"linear: incompatible shapes {x.shape}, {w.shape}, {b.shape}")
    xd, wd = x.data, w.data

    def adjoint(g):
        return (g @ wd.T if x.requires_grad else None, xd.T @ g, g.sum(axis=0))

    out = xd @ wd
    out += b.data
    return Tensor._from_op(out, (x, w, b), adjoint, "linear")


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Rows of x divided by max(||row||_2, eps)."""
    if x.ndim != 2:
        raise ContractError(f"l2_normalize: expected (N, D), got {x.shape}")
    norms = np.sqrt(np.einsum("ij,ij->i", x.data, x.data))
    big = norms > eps
    denom = np.where(big, norms, eps)[:, None]
    out = x.data / denom
    all_big = bool(big.all())

    def adjoint(g):
        radial = np.einsum("ij,ij->i", g, out)
        if not all_big:
            radial[~big] = 0.0
        gx = out * radial[:, None]
        np.subtract(g, gx, out=gx)
        gx /= denom
        return (gx,)

    return Tensor._from_op(out, (x,), adjoint, "l2_normalize", check=False)


# ---------------------------------------------------------------- reductions and shape


def _norm_axes(a: Tensor, axes) -> tuple:
    if axes is None:
        return tuple(range(a.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(sorted({ax % a.ndim if a.ndim else ax for ax in axes}))
    if not axes and a.ndim > 0:
        raise ContractError("reduce: empty axis set")
    for ax in axes:
        if not 0 <= ax < max(a.ndim, 1):
            raise ContractError(f"reduce: axis {ax} invalid for shape {a.shape}")
    return axes


def _expand_grad(g: np.ndarray, shape: tuple, axes: tuple, keepdims: bool) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def reduce_sum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(a, axes)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)
    return Tensor._from_op(np.asarray(out), (a,), lambda g: (_expand_grad(g, shape, axes, keepdims),), "sum")


def reduce_mean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(a, axes)
    shape = a.shape
    count = int(np.prod([shape[ax] for ax in axes])) if shape else 1
    out = a.data.sum(axis=axes, keepdims=keepdims) / count
    return Tensor._from_op(
        np.asarray(out), (a,), lambda g: (_expand_grad(g, shape, axes, keepdims) / count,), "mean"
    )


def reduce_max(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    """Max reduction; the subgradient goes to the lowest flat index among ties."""
    axes = _norm_axes(a, axes)
    shape = a.shape
    keep = [ax for ax in range(a.ndim) if ax not in axes]
    moved = np.transpose(a.data, keep + list(axes))
    lead = moved.shape[: len(keep)]
    flat = moved.reshape(lead + (-1,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    if keepdims:
        out = np.expand_dims(out, axes)

    def adjoint(g):
        if keepdims:
            g = np.squeeze(g, axis=axes)
        gflat = np.zeros(flat.shape)
        np.put_along_axis(gflat, arg[..., None], np.asarray(g)[..., None], axis=-1)
        gmoved = gflat.reshape(moved.shape)
        return (np.transpose(gmoved, np.argsort(keep + list(axes))),)

    return Tensor._from_op(np.asarray(out, dtype=np.float64), (a,), adjoint, "max", check=False)


_REDUCE = {"sum": reduce_sum, "mean": reduce_mean, "max": reduce_max}


def reduce(kind: str, a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    if kind not in _REDUCE:
        raise ContractError(f"unknown reduction {kind!r}")
    return _REDUCE[kind](a, axes, keepdims)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ContractError(f"reshape: cannot view {src} as {tuple(shape)}") from exc
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(src),), "reshape", check=False)


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Broadcast size-1 axes of ``a`` up to ``shape`` (same rank required)."""
    shape = tuple(shape)
    if len(shape) != a.ndim or any(s != t and s != 1 for s, t in zip(a.shape, shape)):
        raise ContractError(f"expand: cannot broadcast {a.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s == 1 and t != 1)
    out = np.broadcast_to(a.data, shape)
    return Tensor._from_op(out, (a,), lambda g: (g.sum(axis=axes, keepdims=True),), "expand", check=False)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ContractError("concat: nothing to join")
    axis = axis % parts[0].ndim
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    out = np.concatenate([p.data for p in parts], axis=axis)
    return Tensor._from_op(out, parts, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat", check=False)


def take_rows(a: Tensor, index) -> Tensor:
    """Gather along axis 0 with an integer index array of any shape."""
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ContractError(f"take_rows: index out of range for extent {a.shape[0]}")
    shape = a.shape

    def adjoint(g):
        return (_scatter_rows(index.reshape(-1), g.reshape((-1,) + shape[1:]), shape),)

    return Tensor._from_op(a.data[index], (a,), adjoint, "take_rows", check=False)


def _scatter_rows(index: np.ndarray, rows: np.ndarray, shape: tuple) -> np.ndarray:
    out = np.zeros(shape)
    if index.size == 0:
        return out
    order = np.argsort(index, kind="stable")
    sorted_idx = index[order]
    starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
    if len(starts) == len(index):
        out[index] = rows
    else:
        out[sorted_idx[starts]] = np.add.reduceat(rows[order], starts, axis=0)
    return out


def block_gram(a: Tensor, left, blocks: int) -> Tensor:
    """Dot products of selected rows against every row of their block.

    ``a`` is (N, D) and is read as (S, B, M, D) with ``B = left.shape[0]``
    and ``S = blocks``. Returns (S, B, I, M) with
    ``out[s, b, i, m] = a[left[b, i]] . a4[s, b, m]``.
    """
    left = np.asarray(left, dtype=np.intp)
    if a.ndim != 2 or left.ndim != 2 or blocks < 1 or a.shape[0] % (blocks * max(left.shape[0], 1)):
        raise ContractError(f"block_gram: cannot split {a.shape} into {blocks} x {left.shape[0]} blocks")
    if left.size and (left.min() < 0 or left.max() >= a.shape[0]):
        raise ContractError(f"block_gram: index out of range for extent {a.shape[0]}")
    n, d = a.shape
    bsz = left.shape[0]
    a4 = a.data.reshape(blocks, bsz, -1, d)
    lhs = a.data[left]

    def adjoint(g):
        out = np.matmul(np.swapaxes(g, -1, -2), lhs[None]).reshape(n, d)
        np.add.at(out, left, np.matmul(g, a4).sum(axis=0))
        return (out,)

    return Tensor._from_op(np.matmul(lhs[None], np.swapaxes(a4, -1, -2)), (a,), adjoint, "block_gram", check=False)


def take_flat(a: Tensor, index) -> Tensor:
    """Gather elements of the flattened tensor; output has the index's shape."""
    index = np.asarray(index, dtype=np.intp)
    size = a.data.size
    if index.size and (index.min() < 0 or index.max() >= size):
        raise ContractError(f"take_flat: index out of range for {size} elements")
    shape = a.shape

    def adjoint(g):
        return (np.bincount(index.reshape(-1), weights=g.reshape(-1), minlength=size).reshape(shape),)

    return Tensor._from_op(a.data.reshape(-1)[index], (a,), adjoint, "take_flat", check=False)


def detach(a: Tensor) -> Tensor:
    """Same values, cut from the graph."""
    out = Tensor.__new__(Tensor)
    out.data = a.data
    out.requires_grad = False
    out.grad = None
    out._parents = ()
    out._adjoint = None
    out.op = "detach"
    return out


# ---------------------------------------------------------------- convolution


def _patches(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(B, Ho, Wo, k, k, C) strided view of k x k windows."""
    b, _, _, c = xp.shape
    s0, s1, s2, s3 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, shape=(b, ho, wo, k, k, c), strides=(s0, s1 * stride, s2 * stride, s1, s2, s3), writeable=False
    )


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0, bias: Tensor | None = None) -> Tensor:
    """2-D convolution (cross-correlation) in channels-last layout.

    Args:
        x: input of shape (B, H, W, C_in).
        w: kernel of shape (k, k, C_in, C_out).
        stride: spatial stride.
        pad: zero padding on each border.
        bias: optional (C_out,) vector added to every output position.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ContractError(f"conv2d: expected (B,H,W,C) input and (k,k,Ci,Co) kernel, got {x.shape}, {w.shape}")
    k, k2, ci, co = w.shape
    if k != k2 or x.shape[3] != ci:
        raise ContractError(f"conv2d: kernel {w.shape} incompatible with input {x.shape}")
    b, h, wd, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x.data
    hp, wp = xp.shape[1], xp.shape[2]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ContractError("conv2d: kernel larger than padded input")
    cols = _patches(xp, k, stride, ho, wo).reshape(b * ho * wo, k * k * ci)
    wmat = w.data.reshape(k * k * ci, co)
    out = (cols @ wmat).reshape(b, ho, wo, co)
    if bias is not None:
        if bias.shape != (co,):
            raise ContractError(f"conv2d: bias must have shape ({co},), got {bias.shape}")
        out += bias.data
    need_x = x.requires_grad

    def adjoint(g):
        g2 = g.reshape(b * ho * wo, co)
        gw = (cols.T @ g2).reshape(w.shape)
        gb = g2.sum(axis=0)
        if not need_x:
            return (None, gw, gb)
        if stride == 1 and pad <= k - 1:
            # input gradient is a full correlation of g with the flipped kernel
            p = k - 1 - pad
            gp = np.zeros((b, h + k - 1, wd + k - 1, co))
            gp[:, p : p + ho, p : p + wo] = g
            wflip = w.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(k * k * co, ci)
            gx = (_patches(gp, k, 1, h, wd).reshape(b * h * wd, k * k * co) @ wflip).reshape(x.shape)
            return (gx, gw, gb)
        gcols = (g2 @ wmat.T).reshape(b, ho, wo, k, k, ci)
        gxp = np.zeros(xp.shape)
        for di in range(k):
            for dj in range(k):
                gxp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride, :] += gcols[:, :, :, di, dj, :]
        gx = gxp[:, pad : pad + h, pad : pad + wd, :] if pad else gxp
        return (gx, gw, gb)

    parents = (x, w) if bias is None else (x, w, bias)
    return Tensor._from_op(out, parents, adjoint, "conv2d")


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of a (B, H, W, C) tensor."""
    if x.ndim != 4:
        raise ContractError(f"upsample2x: expected (B,H,W,C), got {x.shape}")
    b, h, w, c = x.shape
    out = np.broadcast_to(x.data[:, :, None, :, None, :], (b, h, 2, w, 2, c)).reshape(b, 2 * h, 2 * w, c)
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(b, h, 2, w, 2, c).sum(axis=(2, 4)),), "upsample2x", check=False)


# ---------------------------------------------------------------- reverse mode


class ComputationRecord:
    """Operations reachable from a root, in topological (execution) order."""

    def __init__(self, root: Tensor):
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.nodes = order

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def reversed(self):
        return reversed(self.nodes)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every leaf that requires grad."""
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    record = ComputationRecord(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in record.reversed():
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._adjoint is None:
            node.grad = node.grad + g if node.grad is not None else np.array(g, dtype=np.float64)
            continue
        for parent, pg in zip(node._parents, node._adjoint(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------- verification


def central_difference(f: Callable[[Tensor], Tensor], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor(x)).data)
        flat[i] = orig - h
        fm = float(f(Tensor(x)).data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DomainError("grad_check: function returned a non-finite value")
        out.reshape(-1)[i] = (fp - fm) / (2.0 * h)
    return out


def analytic_grad(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    leaf = Tensor(x, requires_grad=True)
    val = f(leaf)
    if not np.all(np.isfinite(val.data)):
        raise DomainError("grad_check: function returned a non-finite value")
    backward(val)
    return leaf.grad


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    The error of component k is |a_k - c_k| / max(|a_k|, |c_k|, 1e-8).
    """
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("grad_check: x must be finite")
    a = analytic_grad(f, x)
    c = central_difference(f, x, h)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(c)), 1e-8)
    return float(np.max(np.abs(a - c) / denom)) if a.size else 0.0
