"""Differentiable array substrate: numpy storage plus a reverse-mode tape.

Every higher-level block composes the operations defined here, so shape
rules and gradients only have to be right once.  Tests run everything in
float64; float32 inputs are preserved for throughput-oriented callers.
Non-finite values are an error condition and are trapped at op outputs
rather than silently propagated.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidValueError, ShapeError

_FINITE_CHECKS = [True]


@contextmanager
def finite_checks(enabled: bool):
    """Toggle the NaN/Inf guard on op outputs within a scope."""
    _FINITE_CHECKS.append(bool(enabled))
    try:
        yield
    finally:
        _FINITE_CHECKS.pop()


def _guard(data: np.ndarray, ctx: str) -> None:
    if _FINITE_CHECKS[-1] and not np.isfinite(data).all():
        raise InvalidValueError(f"non-finite values produced by {ctx}")


class Tensor:
    """N-d numeric array with optional participation in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        _guard(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- introspection -------------------------------------------------
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
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------
    def backward(self, seed: np.ndarray | None = None) -> None:
        """Run reverse-mode accumulation from this node.

        Without an explicit seed the node must be a scalar.
        """
        if seed is None:
            if self.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(seed, dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor/tensor division is not supported; multiply by a constant reciprocal")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)

    # -- reductions / views --------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def t(self):
        return transpose2d(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward, ctx: str) -> Tensor:
    """Build an op output, recording the tape edge only when needed."""
    _guard(data, ctx)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accum(p: Tensor, g: np.ndarray) -> None:
    if not p.requires_grad:
        return
    p.grad = g if p.grad is None else p.grad + g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _result(out_data, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(out_data, (a, b), backward, "mul")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0)

    def backward(g):
        _accum(a, g * (a.data > 0))

    return _result(out_data, (a,), backward, "relu")


# -- linear algebra ----------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result(out_data, (a, b), backward, "matmul")


def transpose2d(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose2d expects a 2-D tensor")

    def backward(g):
        _accum(a, g.T)

    return _result(a.data.T.copy(), (a,), backward, "transpose")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _result(out_data, (a,), backward, "reshape")


# -- reductions --------------------------------------------------------

def _restore_axes(g, axis, keepdims, in_shape):
    if axis is None or keepdims:
        return g
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    shape = list(in_shape)
    for ax in axes:
        shape[ax % len(in_shape)] = 1
    return g.reshape(shape)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = _restore_axes(np.asarray(g), axis, keepdims, a.data.shape)
        _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    return _result(np.asarray(out_data), (a,), backward, "sum")


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))

    def backward(g):
        gg = _restore_axes(np.asarray(g), axis, keepdims, a.data.shape)
        _accum(a, np.broadcast_to(gg, a.data.shape) / count)

    return _result(np.asarray(out_data), (a,), backward, "mean")


# -- indexing ----------------------------------------------------------

def _getitem(a: Tensor, key):
    if isinstance(key, Tensor):
        raise ShapeError("index tensors are not supported; pass a numpy index array")
    if isinstance(key, (list, np.ndarray)):
        return take_rows(a, np.asarray(key))
    out_data = a.data[key]

    def backward(g):
        gx = np.zeros_like(a.data)
        gx[key] = g
        _accum(a, gx)

    return _result(np.array(out_data, copy=True), (a,), backward, "getitem")


def take_rows(a, idx) -> Tensor:
    """Gather rows along axis 0; duplicate indices are allowed."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    out_data = a.data[idx]

    def backward(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, idx, g)
        _accum(a, gx)

    return _result(out_data, (a,), backward, "take_rows")


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("slice_cols expects a 2-D tensor")
    out_data = a.data[:, start:stop].copy()

    def backward(g):
        gx = np.zeros_like(a.data)
        gx[:, start:stop] = g
        _accum(a, gx)

    return _result(out_data, (a,), backward, "slice_cols")


def concat(tensors, axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(p, g[tuple(sl)])

    return _result(out_data, tuple(parts), backward, "concat")


def stack0(tensors) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    out_data = np.stack([p.data for p in parts], axis=0)

    def backward(g):
        for i, p in enumerate(parts):
            _accum(p, g[i])

    return _result(out_data, tuple(parts), backward, "stack0")


def repeat_rows(a, n: int) -> Tensor:
    """Tile a [1, d] tensor into [n, d]."""
    a = _as_tensor(a)
    if a.ndim != 2 or a.shape[0] != 1:
        raise ShapeError("repeat_rows expects a [1, d] tensor")
    out_data = np.repeat(a.data, n, axis=0)

    def backward(g):
        _accum(a, g.sum(axis=0, keepdims=True))

    return _result(out_data, (a,), backward, "repeat_rows")


def assemble_rows(n_rows: int, pieces) -> Tensor:
    """Build an [n_rows, d] tensor from (index array, tensor) pieces.

    The index arrays must partition range(n_rows) exactly.
    """
    parts = [(np.asarray(idx, dtype=np.intp), _as_tensor(t)) for idx, t in pieces]
    cover = np.zeros(n_rows, dtype=np.intp)
    for idx, t in parts:
        if len(idx) != t.shape[0]:
            raise ShapeError("assemble_rows piece length does not match its index set")
        np.add.at(cover, idx, 1)
    if not (cover == 1).all():
        raise ShapeError("assemble_rows pieces must cover every row exactly once")
    tail = parts[0][1].data.shape[1:]
    out_data = np.empty((n_rows,) + tail, dtype=parts[0][1].data.dtype)
    for idx, t in parts:
        out_data[idx] = t.data

    def backward(g):
        for idx, t in parts:
            _accum(t, g[idx])

    return _result(out_data, tuple(t for _, t in parts), backward, "assemble_rows")


# -- softmax -----------------------------------------------------------

def softmax(a) -> Tensor:
    """Row-stable softmax over the last axis (max-subtraction form)."""
    a = _as_tensor(a)
    if a.data.shape[-1] < 1:
        raise ShapeError("softmax needs a non-empty last axis")
    if np.isnan(a.data).any():
        raise InvalidValueError("softmax received NaN input")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        _accum(a, (g - dot) * p)

    return _result(p, (a,), backward, "softmax")


def masked_softmax(a, visible: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to `visible` positions.

    Hidden positions get probability exactly 0; this is the negative
    infinity masking written without materialising infinities.
    """
    a = _as_tensor(a)
    visible = np.asarray(visible, dtype=bool)
    if visible.shape != a.data.shape:
        raise ShapeError("mask shape must match the score shape")
    if np.isnan(a.data).any():
        raise InvalidValueError("masked_softmax received NaN input")
    if not visible.any(axis=-1).all():
        from .errors import MaskError

        raise MaskError("a softmax row has no visible entries")
    masked = np.where(visible, a.data, -np.inf)
    shifted = masked - masked.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        _accum(a, (g - dot) * p)

    return _result(p, (a,), backward, "masked_softmax")


# -- padding -----------------------------------------------------------

def pad_rows_edge(a, before: int, after: int) -> Tensor:
    """Replicate the first/last row of a [L, d] tensor."""
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("pad_rows_edge expects a 2-D tensor")
    if before == 0 and after == 0:
        return a
    out_data = np.pad(a.data, ((before, after), (0, 0)), mode="edge")
    L = a.data.shape[0]

    def backward(g):
        gx = g[before:before + L].copy()
        if before:
            gx[0] += g[:before].sum(axis=0)
        if after:
            gx[-1] += g[before + L:].sum(axis=0)
        _accum(a, gx)

    return _result(out_data, (a,), backward, "pad_rows_edge")


def pad2d_end_edge(a, pad_h: int, pad_w: int) -> Tensor:
    """Replicate the bottom row / right column of a [C, H, W] tensor."""
    a = _as_tensor(a)
    if a.ndim != 3:
        raise ShapeError("pad2d_end_edge expects a [C, H, W] tensor")
    if pad_h == 0 and pad_w == 0:
        return a
    out_data = np.pad(a.data, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")
    _, H, W = a.data.shape

    def backward(g):
        g2 = g[:, :, :W].copy()
        if pad_w:
            g2[:, :, -1] += g[:, :, W:].sum(axis=2)
        gx = g2[:, :H].copy()
        if pad_h:
            gx[:, -1] += g2[:, H:].sum(axis=1)
        _accum(a, gx)

    return _result(out_data, (a,), backward, "pad2d_end_edge")


# -- convolution and pooling -------------------------------------------

def _conv1d_valid(xp: Tensor, w: Tensor, bias: Tensor | None) -> Tensor:
    Lp, cin = xp.data.shape
    cout, cin_w, k = w.data.shape
    if cin != cin_w:
        raise ShapeError(f"conv1d channel mismatch: input has {cin}, kernel expects {cin_w}")
    if Lp < k:
        raise ShapeError("conv1d kernel is wider than the (padded) input")
    L = Lp - k + 1
    out_data = np.zeros((L, cout), dtype=xp.data.dtype)
    for j in range(k):
        out_data += xp.data[j:j + L] @ w.data[:, :, j].T
    parents: tuple[Tensor, ...] = (xp, w)
    if bias is not None:
        out_data = out_data + bias.data
        parents = (xp, w, bias)

    def backward(g):
        gx = np.zeros_like(xp.data)
        gw = np.zeros_like(w.data)
        for j in range(k):
            gx[j:j + L] += g @ w.data[:, :, j]
            gw[:, :, j] = g.T @ xp.data[j:j + L]
        _accum(xp, gx)
        _accum(w, gw)
        if bias is not None:
            _accum(bias, g.sum(axis=0))

    return _result(out_data, parents, backward, "conv1d")


def conv1d(x, w, bias=None, padding: str = "same") -> Tensor:
    """1-D convolution over a [L, c_in] sequence with a [c_out, c_in, k] kernel.

    `same` pads (k-1)//2 replicated rows on each side, preserving length;
    it requires an odd kernel width.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if bias is not None:
        bias = _as_tensor(bias)
    if x.ndim != 2 or w.ndim != 3:
        raise ShapeError("conv1d expects x:[L,c_in] and w:[c_out,c_in,k]")
    k = w.data.shape[2]
    if padding == "same":
        if k % 2 == 0:
            raise ShapeError("same-length conv1d padding needs an odd kernel width")
        p = (k - 1) // 2
        return _conv1d_valid(pad_rows_edge(x, p, p), w, bias)
    if padding == "valid":
        return _conv1d_valid(x, w, bias)
    raise ConfigError(f"unknown conv1d padding {padding!r}")


def _conv2d_valid(xp: Tensor, w: Tensor, bias: Tensor | None) -> Tensor:
    cin, Hp, Wp = xp.data.shape
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d channel mismatch: input has {cin}, kernel expects {cin_w}")
    if Hp < kh or Wp < kw:
        raise ShapeError("conv2d kernel exceeds the (padded) input extents")
    H, W = Hp - kh + 1, Wp - kw + 1
    out_data = np.zeros((cout, H, W), dtype=xp.data.dtype)
    for di in range(kh):
        for dj in range(kw):
            patch = xp.data[:, di:di + H, dj:dj + W]
            out_data += np.tensordot(w.data[:, :, di, dj], patch, axes=([1], [0]))
    parents: tuple[Tensor, ...] = (xp, w)
    if bias is not None:
        out_data = out_data + bias.data[:, None, None]
        parents = (xp, w, bias)

    def backward(g):
        gx = np.zeros_like(xp.data)
        gw = np.zeros_like(w.data)
        for di in range(kh):
            for dj in range(kw):
                patch = xp.data[:, di:di + H, dj:dj + W]
                gw[:, :, di, dj] = np.tensordot(g, patch, axes=([1, 2], [1, 2]))
                gx[:, di:di + H, dj:dj + W] += np.tensordot(
                    w.data[:, :, di, dj], g, axes=([0], [0])
                )
        _accum(xp, gx)
        _accum(w, gw)
        if bias is not None:
            _accum(bias, g.sum(axis=(1, 2)))

    return _result(out_data, parents, backward, "conv2d")


def conv2d(x, w, bias=None, padding: str = "same") -> Tensor:
    """2-D convolution over [c_in, H, W] with a [c_out, c_in, kh, kw] kernel.

    `same` appends kh-1 replicated rows and kw-1 replicated columns at
    the trailing edges so the spatial extents are preserved.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if bias is not None:
        bias = _as_tensor(bias)
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError("conv2d expects x:[c_in,H,W] and w:[c_out,c_in,kh,kw]")
    kh, kw = w.data.shape[2], w.data.shape[3]
    if padding == "same":
        return _conv2d_valid(pad2d_end_edge(x, kh - 1, kw - 1), w, bias)
    if padding == "valid":
        return _conv2d_valid(x, w, bias)
    raise ConfigError(f"unknown conv2d padding {padding!r}")


def maxpool2d(x, kh: int, kw: int) -> Tensor:
    """Disjoint-window 2-D max pooling with kernel == stride == (kh, kw)."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeError("maxpool2d expects a [C, H, W] tensor")
    C, H, W = x.data.shape
    if H % kh or W % kw:
        raise ShapeError(
            f"maxpool2d extents ({H}, {W}) are not divisible by the kernel ({kh}, {kw}); "
            "pad before pooling"
        )
    Ho, Wo = H // kh, W // kw
    windows = (
        x.data.reshape(C, Ho, kh, Wo, kw).transpose(0, 1, 3, 2, 4).reshape(C, Ho, Wo, kh * kw)
    )
    am = windows.argmax(axis=3)
    out_data = np.take_along_axis(windows, am[..., None], axis=3)[..., 0]

    def backward(g):
        gw = np.zeros_like(windows)
        np.put_along_axis(gw, am[..., None], g[..., None], axis=3)
        gx = gw.reshape(C, Ho, Wo, kh, kw).transpose(0, 1, 3, 2, 4).reshape(C, H, W)
        _accum(x, gx)

    return _result(out_data, (x,), backward, "maxpool2d")


def avgpool1d_moving(x, window: int) -> Tensor:
    """Centered moving average over axis 0 of [L, d] with edge replication.

    The first and last rows are replicated (window-1)/2 times so the
    output has the input's shape.  The window must be odd and positive.
    """
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ShapeError("avgpool1d_moving expects a [L, d] tensor")
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"moving-average window must be odd and positive, got {window}")
    if window == 1:
        return x * 1.0
    L, d = x.data.shape
    pad = (window - 1) // 2
    padded = np.pad(x.data, ((pad, pad), (0, 0)), mode="edge")
    view = np.lib.stride_tricks.sliding_window_view(padded, window, axis=0)
    out_data = view.mean(axis=-1)

    def backward(g):
        gp = np.zeros_like(padded)
        scaled = g / window
        for k in range(window):
            gp[k:k + L] += scaled
        gx = gp[pad:pad + L].copy()
        gx[0] += gp[:pad].sum(axis=0)
        gx[-1] += gp[pad + L:].sum(axis=0)
        _accum(x, gx)

    return _result(out_data, (x,), backward, "avgpool1d_moving")


def cumsum0(x) -> Tensor:
    """Cumulative sum along axis 0."""
    x = _as_tensor(x)
    out_data = np.cumsum(x.data, axis=0)

    def backward(g):
        _accum(x, np.flip(np.cumsum(np.flip(g, axis=0), axis=0), axis=0))

    return _result(out_data, (x,), backward, "cumsum0")


# -- gradient checking -------------------------------------------------

@dataclass
class GradientReport:
    """Outcome of comparing tape gradients against finite differences.

    `rel_error` uses a guarded denominator max(|a|, |b|, 1e-3) so that
    near-zero gradients are held to an absolute 1e-7-scale bound rather
    than an ill-conditioned ratio.
    """

    max_rel_error: float
    pass_fraction: float
    n_checked: int
    tolerance: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.pass_fraction >= 0.95


def grad_check(
    fn,
    params: dict[str, Tensor],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_entries_per_param: int | None = None,
    seed: int = 0,
) -> GradientReport:
    """Compare reverse-mode gradients with central finite differences.

    `fn` must evaluate the computation fresh on each call and return a
    scalar Tensor; `params` are perturbed in place.  When a parameter has
    more entries than `max_entries_per_param`, a seeded subset is checked.
    """
    out = fn()
    if not isinstance(out, Tensor) or out.size != 1:
        raise ShapeError("grad_check requires fn() to return a scalar Tensor")
    for p in params.values():
        p.grad = None
    out.backward()
    grads = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    rng = np.random.default_rng(seed)
    n_checked = 0
    n_pass = 0
    max_rel = 0.0
    per_param: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries_per_param is not None and flat.size > max_entries_per_param:
            idxs = np.sort(rng.choice(flat.size, size=max_entries_per_param, replace=False))
        worst = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            f_hi = fn().item()
            flat[i] = orig - step
            f_lo = fn().item()
            flat[i] = orig
            fd = (f_hi - f_lo) / (2.0 * step)
            ad = float(grads[name].reshape(-1)[i])
            rel = abs(ad - fd) / max(abs(ad), abs(fd), 1e-3)
            worst = max(worst, rel)
            n_checked += 1
            if rel <= tolerance:
                n_pass += 1
        per_param[name] = worst
        max_rel = max(max_rel, worst)
    return GradientReport(
        max_rel_error=max_rel,
        pass_fraction=(n_pass / n_checked) if n_checked else 1.0,
        n_checked=n_checked,
        tolerance=tolerance,
        per_param=per_param,
    )
