"""Dense tensors with a reverse-mode tape.

A :class:`Tape` records every operation whose inputs are tracked while it is
active. ``tape.backward(loss)`` replays the records in reverse order and
leaves a gradient on every watched leaf (zeros when the leaf is not
reachable from the loss).

Only full scalar broadcasting is supported: binary ops take two tensors of
identical shape, or one tensor and a scalar.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

Array = np.ndarray
BackwardFn = Callable[[Array], Sequence["Array | None"]]

_ACTIVE: list["Tape"] = []


class ShapeError(ValueError):
    pass


class Tensor:
    """An N-d float array, optionally watched by the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "_gid")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32 if dtype is None else dtype)
        self.data: Array = arr
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self._tape: Tape | None = None
        self._gid: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

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
        if isinstance(other, Tensor):
            raise TypeError("only division by a Python scalar is supported")
        return div_scalar(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)


class Tape:
    """Ordered record of operations; use as a context manager."""

    def __init__(self):
        self._nodes: list[tuple[tuple[int | None, ...], int, BackwardFn]] = []
        self._leaves: list[Tensor] = []
        self._next = 0

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self._nodes)

    def _new_id(self) -> int:
        self._next += 1
        return self._next

    def watch(self, t: Tensor) -> int:
        """Register a leaf tensor; returns its handle on this tape."""
        if t._tape is not self:
            t._tape = self
            t._gid = self._new_id()
            self._leaves.append(t)
        return t._gid

    def _handle(self, t) -> int | None:
        if not isinstance(t, Tensor):
            return None
        if t._tape is self:
            return t._gid
        if t.requires_grad:
            return self.watch(t)
        # outputs of other tapes and plain tensors are constants here
        return None

    def record(self, inputs: Iterable, out: Tensor, backward: BackwardFn) -> Tensor:
        handles = tuple(self._handle(t) for t in inputs)
        if any(h is not None for h in handles):
            out._tape = self
            out._gid = self._new_id()
            self._nodes.append((handles, out._gid, backward))
        return out

    def backward(self, loss: Tensor) -> dict[int, Array]:
        """Populate ``.grad`` on every watched leaf; return grads keyed by ``id(leaf)``."""
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ValueError("loss was not produced on this tape")
        grads: dict[int, Array] = {loss._gid: np.ones_like(loss.data)}
        for handles, out_id, fn in reversed(self._nodes):
            g = grads.pop(out_id, None)
            if g is None:
                continue
            for h, gi in zip(handles, fn(g)):
                if h is None or gi is None:
                    continue
                if h in grads:
                    grads[h] = grads[h] + gi
                else:
                    grads[h] = gi
        # the records hold every intermediate array; release them
        self._nodes = []
        result = {}
        for leaf in self._leaves:
            g = grads.get(leaf._gid)
            leaf.grad = np.zeros_like(leaf.data) if g is None else g.astype(leaf.dtype, copy=False)
            result[id(leaf)] = leaf.grad
        return result


def _tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def _make(data: Array, inputs: Sequence, backward: BackwardFn) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    tape = _tape()
    if tape is not None:
        tape.record(inputs, out, backward)
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _operands(a, b):
    """Coerce to (array, array, a_is_scalar, b_is_scalar) with shape checking."""
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("at least one operand must be a Tensor")
    ref = a if isinstance(a, Tensor) else b
    dt = ref.dtype
    ad = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=dt)
    bd = b.data if isinstance(b, Tensor) else np.asarray(b, dtype=dt)
    a_sc, b_sc = ad.ndim == 0, bd.ndim == 0
    if not (a_sc or b_sc) and ad.shape != bd.shape:
        raise ShapeError(f"shape mismatch: {ad.shape} vs {bd.shape}")
    return ad, bd, a_sc and not b_sc, b_sc and not a_sc


def _reduce_to(g: Array, scalar: bool) -> Array:
    return np.asarray(g.sum(), dtype=g.dtype) if scalar else g


def add(a, b) -> Tensor:
    ad, bd, a_sc, b_sc = _operands(a, b)

    def backward(g):
        return _reduce_to(g, a_sc), _reduce_to(g, b_sc)

    return _make(ad + bd, (a, b), backward)


def sub(a, b) -> Tensor:
    ad, bd, a_sc, b_sc = _operands(a, b)

    def backward(g):
        return _reduce_to(g, a_sc), _reduce_to(-g, b_sc)

    return _make(ad - bd, (a, b), backward)


def mul(a, b) -> Tensor:
    ad, bd, a_sc, b_sc = _operands(a, b)

    def backward(g):
        return _reduce_to(g * bd, a_sc), _reduce_to(g * ad, b_sc)

    return _make(ad * bd, (a, b), backward)


mul_elementwise = mul


def blend(w: Tensor, a: Tensor, b: Tensor) -> Tensor:
    """Convex combination w * a + (1 - w) * b for w in [0, 1].

    The forward value is clamped to [min(a, b), max(a, b)], which only
    removes last-place rounding excursions; the gradient is that of the
    unclamped expression.
    """
    wd, ad, bd = w.data, a.data, b.data
    if not wd.shape == ad.shape == bd.shape:
        raise ShapeError(f"blend shapes differ: {wd.shape}, {ad.shape}, {bd.shape}")
    out = wd * ad + (1 - wd) * bd
    np.clip(out, np.minimum(ad, bd), np.maximum(ad, bd), out=out)

    def backward(g):
        return g * (ad - bd), g * wd, g * (1 - wd)

    return _make(out, (w, a, b), backward)


def scalar_mul(a: Tensor, s: float) -> Tensor:
    return mul(a, s)


def div_scalar(a: Tensor, s: float) -> Tensor:
    sd = np.asarray(s, dtype=a.dtype)
    return _make(a.data / sd, (a,), lambda g: (g / sd,))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along axis 1; ``a`` occupies the leading channel block."""
    if a.ndim != b.ndim or a.ndim < 2:
        raise ShapeError(f"concat needs equal rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[:1] + a.shape[2:] != b.shape[:1] + b.shape[2:]:
        raise ShapeError(f"non-channel extents differ: {a.shape} vs {b.shape}")
    ca = a.shape[1]

    def backward(g):
        return g[:, :ca], g[:, ca:]

    return _make(np.concatenate([a.data, b.data], axis=1), (a, b), backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[:, start:stop] = g
        return (gx,)

    return _make(np.ascontiguousarray(x.data[:, start:stop]), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return _make(s, (x,), lambda g: (g * s * (1 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _make(t, (x,), lambda g: (g * (1 - t * t),))


def _swish_grad(x: Array, s: Array) -> Array:
    return s + x * s * (1 - s)


def swish(x: Tensor) -> Tensor:
    """Self-gating activation x * sigmoid(x)."""
    xd = x.data
    s = expit(xd)
    return _make(xd * s, (x,), lambda g: (g * _swish_grad(xd, s),))


def log1p(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.log1p(xd), (x,), lambda g: (g / (1 + xd),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    xd = x.data
    mask = (xd >= lo) & (xd <= hi)
    return _make(np.clip(xd, lo, hi), (x,), lambda g: (g * mask,))


def reduce_mean(x: Tensor) -> Tensor:
    n = x.size
    shape, dt = x.shape, x.dtype

    def backward(g):
        return (np.full(shape, g / n, dtype=dt),)

    return _make(np.asarray(x.data.mean(), dtype=x.dtype), (x,), backward)


def _im2col(xp: Array, k: int, dilation: int, h: int, w: int) -> Array:
    b, c = xp.shape[:2]
    cols = np.empty((c, k, k, b, h, w), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            oy, ox = i * dilation, j * dilation
            cols[:, i, j] = xp[:, :, oy:oy + h, ox:ox + w].transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, b * h * w)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, dilation: int = 1) -> Tensor:
    """Same-padded 2-D cross-correlation plus per-channel bias.

    x is (B, C, H, W), kernel (O, C, k, k) with odd k, bias (O,).
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape}, {kernel.shape}")
    o, c, kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"kernel must be square with odd extent, got {kh}x{kw}")
    if x.shape[1] != c:
        raise ShapeError(f"channel mismatch: input has {x.shape[1]}, kernel expects {c}")
    if bias.shape != (o,):
        raise ShapeError(f"bias shape {bias.shape} does not match {o} output channels")
    if dilation < 1:
        raise ValueError("dilation must be positive")
    b, _, h, w = x.shape
    k = kh
    pad = dilation * (k - 1) // 2
    kd = kernel.data
    if k == 1:
        cols = x.data.transpose(1, 0, 2, 3).reshape(c, b * h * w)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        cols = _im2col(xp, k, dilation, h, w)
    out = (kd.reshape(o, -1) @ cols).reshape(o, b, h, w).transpose(1, 0, 2, 3)
    out = out + bias.data[None, :, None, None]
    xd = x.data

    def backward(g):
        gm = g.transpose(1, 0, 2, 3).reshape(o, b * h * w)
        if k == 1:
            cols_ = xd.transpose(1, 0, 2, 3).reshape(c, b * h * w)
        else:
            cols_ = _im2col(np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))), k, dilation, h, w)
        gk = (gm @ cols_.T).reshape(kd.shape)
        gb = g.sum(axis=(0, 2, 3))
        gcols = (kd.reshape(o, -1).T @ gm).reshape(c, k, k, b, h, w)
        if k == 1:
            gx = gcols[:, 0, 0].transpose(1, 0, 2, 3)
        else:
            gxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    oy, ox = i * dilation, j * dilation
                    gxp[:, :, oy:oy + h, ox:ox + w] += gcols[:, i, j].transpose(1, 0, 2, 3)
            gx = gxp[:, :, pad:pad + h, pad:pad + w]
        return np.ascontiguousarray(gx), gk, gb

    return _make(np.ascontiguousarray(out), (x, kernel, bias), backward)
