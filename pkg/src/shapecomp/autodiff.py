"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tape` records every primitive application as a Wengert list entry;
:func:`grad` walks the list backwards accumulating vector-Jacobian products.
The primitive set is deliberately small: elementwise add/sub/mul, 2-D matmul,
3-D convolution (odd kernel, same padding, stride 1 or 2, optional bias),
nearest-neighbour up/downsampling of 5-D grids, the logistic function, sum and
mean reductions, and elementwise binary cross entropy with input clamping.
Everything else (tanh, losses over masks, ...) is composed from these.

Arrays are float32 or float64 and keep their dtype through every op. There is
no general broadcasting: elementwise ops take equal shapes or one scalar
operand. Ops called on un-taped arrays just compute values and record nothing,
which is the inference fast path.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Array",
    "Tape",
    "TapeError",
    "ShapeError",
    "add",
    "sub",
    "mul",
    "matmul",
    "conv3d",
    "upsample_nn",
    "downsample_nn",
    "logistic",
    "reduce_sum",
    "reduce_mean",
    "bce",
    "tanh",
    "grad",
    "sgd_step",
]

BCE_EPS = 1e-7


class TapeError(RuntimeError):
    """Raised for structural misuse of a tape (wrong tape, missing node, ...)."""


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for a primitive."""

    def __init__(self, op: str, *shapes: tuple) -> None:
        super().__init__(f"{op}: incompatible operand shapes {shapes}")
        self.op = op
        self.shapes = shapes


class Array:
    """A numpy array, optionally tracked on a tape.

    Do not mutate ``.value`` in place once the array participated in an op;
    the tape stores references, not copies.
    """

    __slots__ = ("value", "tape", "nid", "epoch")

    def __init__(self, value: np.ndarray, tape: "Tape | None" = None, nid: int | None = None,
                 epoch: int = 0):
        self.value = value
        self.tape = tape
        self.nid = nid
        self.epoch = epoch

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def dtype(self) -> np.dtype:
        return self.value.dtype

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        tag = "" if self.tape is None else f", node={self.nid}"
        return f"Array(shape={self.value.shape}, dtype={self.value.dtype}{tag})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


class _Entry:
    __slots__ = ("out", "parents", "fwd", "vjp", "name")

    def __init__(self, out, parents, fwd, vjp, name):
        self.out = out
        self.parents = parents  # node ids, aligned with vjp outputs
        self.fwd = fwd  # recomputes the output from parent values
        self.vjp = vjp  # (cotangent, want flags) -> per-parent cotangents
        self.name = name


class Tape:
    """Wengert list of primitive applications."""

    def __init__(self) -> None:
        self._entries: list[_Entry] = []
        self._values: list[np.ndarray] = []
        self._epoch = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __bool__(self) -> bool:
        # an empty tape must still be truthy, "if tape:" guards recording
        return True

    def input(self, value: np.ndarray | float, name: str = "input") -> Array:
        """Register a leaf array (parameter, activation input, or constant)."""
        arr = np.asarray(value)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        nid = len(self._values)
        self._values.append(arr)
        return Array(arr, self, nid, self._epoch)

    def reset(self) -> None:
        """Drop all recorded entries and values. Invalidates issued Arrays."""
        self._entries.clear()
        self._values.clear()
        self._epoch += 1

    def _record(self, value, parents, fwd, vjp, name) -> Array:
        nid = len(self._values)
        self._values.append(value)
        self._entries.append(_Entry(nid, parents, fwd, vjp, name))
        return Array(value, self, nid, self._epoch)

    def gradients(self, loss: Array, wrts: Sequence[Array]) -> list[np.ndarray]:
        """Cotangents of a scalar ``loss`` with respect to each array in ``wrts``.

        One backward sweep serves all requested arrays. Arrays that do not
        influence the loss get zero gradients; arrays from another tape raise.
        """
        if loss.tape is not self or loss.epoch != self._epoch:
            raise TapeError("loss does not live on this tape")
        if loss.value.ndim != 0:
            raise TapeError(f"loss must be a scalar, got shape {loss.value.shape}")
        for w in wrts:
            if w.tape is not self or w.epoch != self._epoch or w.nid is None \
                    or w.nid >= len(self._values):
                raise TapeError("gradient target does not live on this tape")
        # restrict the sweep to nodes on a wrt -> loss path so expensive
        # cotangents (conv weight grads during latent optimization) are skipped
        downstream = {w.nid for w in wrts}
        for entry in self._entries:
            if any(p in downstream for p in entry.parents):
                downstream.add(entry.out)
        needed = {loss.nid} & downstream
        for entry in reversed(self._entries):
            if entry.out in needed:
                needed.update(p for p in entry.parents if p in downstream)
        cotangents: dict[int, np.ndarray] = {loss.nid: np.ones((), dtype=loss.value.dtype)}
        for entry in reversed(self._entries):
            g = cotangents.pop(entry.out, None)
            if g is None:
                continue
            want = tuple(p in needed for p in entry.parents)
            if not any(want):
                continue
            for pid, pg in zip(entry.parents, entry.vjp(g, want)):
                if pg is None:
                    continue
                acc = cotangents.get(pid)
                cotangents[pid] = pg if acc is None else acc + pg
        out = []
        for w in wrts:
            g = cotangents.get(w.nid)
            out.append(np.zeros_like(w.value) if g is None else np.asarray(g, dtype=w.value.dtype))
        return out

    def replay(self) -> int:
        """Recompute every entry from recorded parent values and compare bitwise.

        Returns the number of entries checked. Raises :class:`TapeError` naming
        the first mismatching op; with deterministic kernels this only fires if
        someone mutated a recorded array in place.
        """
        for i, entry in enumerate(self._entries):
            ref = self._values[entry.out]
            new = entry.fwd(*[self._values[p] for p in entry.parents])
            if new.shape != ref.shape or new.dtype != ref.dtype or new.tobytes() != ref.tobytes():
                raise TapeError(f"replay mismatch at entry {i} ({entry.name})")
        return len(self._entries)


def grad(tape: Tape, loss: Array, wrt: Array) -> np.ndarray:
    """Gradient of a scalar loss with respect to one array on the tape."""
    return tape.gradients(loss, [wrt])[0]


def _as_operand(x, op: str, like: Array | None):
    """Normalize an op argument to (ndarray value, Array-or-None node)."""
    if isinstance(x, Array):
        return x.value, x
    arr = np.asarray(x)
    if like is not None and arr.ndim == 0:
        arr = arr.astype(like.value.dtype)
    return arr, None


def _shared_tape(op: str, *xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Array) and x.tape is not None:
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise TapeError(f"{op}: operands live on different tapes")
    return tape


def _node_id(tape: Tape, value: np.ndarray, node: Array | None) -> int:
    """Node id for a parent, registering raw constants as fresh leaves."""
    if node is not None and node.tape is tape:
        return node.nid
    nid = len(tape._values)
    tape._values.append(value)
    return nid


def _elementwise(op: str, a, b, fwd: Callable, vjp_builder: Callable) -> Array:
    tape = _shared_tape(op, a, b)
    like = a if isinstance(a, Array) else (b if isinstance(b, Array) else None)
    av, an = _as_operand(a, op, like)
    bv, bn = _as_operand(b, op, like)
    if av.shape != bv.shape and av.ndim != 0 and bv.ndim != 0:
        raise ShapeError(op, av.shape, bv.shape)
    out = fwd(av, bv)
    if tape is None:
        return Array(out)
    pids = (_node_id(tape, av, an), _node_id(tape, bv, bn))
    return tape._record(out, pids, fwd, vjp_builder(av, bv), op)


def add(a, b) -> Array:
    def fwd(x, y):
        return x + y

    def make(av, bv):
        def vjp(g, want):
            ga = (g if av.ndim else np.sum(g)) if want[0] else None
            gb = (g if bv.ndim else np.sum(g)) if want[1] else None
            return ga, gb

        return vjp

    return _elementwise("add", a, b, fwd, make)


def sub(a, b) -> Array:
    def fwd(x, y):
        return x - y

    def make(av, bv):
        def vjp(g, want):
            ga = (g if av.ndim else np.sum(g)) if want[0] else None
            gb = (-g if bv.ndim else -np.sum(g)) if want[1] else None
            return ga, gb

        return vjp

    return _elementwise("sub", a, b, fwd, make)


def mul(a, b) -> Array:
    def fwd(x, y):
        return x * y

    def make(av, bv):
        def vjp(g, want):
            ga = (g * bv if av.ndim else np.sum(g * bv)) if want[0] else None
            gb = (g * av if bv.ndim else np.sum(g * av)) if want[1] else None
            return ga, gb

        return vjp

    return _elementwise("mul", a, b, fwd, make)


def matmul(a, b) -> Array:
    """2-D matrix product. Higher ranks are out of scope for the backbone."""
    tape = _shared_tape("matmul", a, b)
    like = a if isinstance(a, Array) else (b if isinstance(b, Array) else None)
    av, an = _as_operand(a, "matmul", like)
    bv, bn = _as_operand(b, "matmul", like)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError("matmul", av.shape, bv.shape)

    def fwd(x, y):
        return x @ y

    out = fwd(av, bv)
    if tape is None:
        return Array(out)

    def vjp(g, want):
        return g @ bv.T if want[0] else None, av.T @ g if want[1] else None

    pids = (_node_id(tape, av, an), _node_id(tape, bv, bn))
    return tape._record(out, pids, fwd, vjp, "matmul")


def logistic(x) -> Array:
    tape = _shared_tape("logistic", x)
    xv, xn = _as_operand(x, "logistic", None)

    def fwd(v):
        return expit(v)

    out = fwd(xv)
    if tape is None:
        return Array(out)

    def vjp(g, want):
        return (g * out * (1.0 - out),)

    return tape._record(out, (_node_id(tape, xv, xn),), fwd, vjp, "logistic")


def tanh(x) -> Array:
    """Composite: tanh(x) = 2*logistic(2x) - 1. Lands on the tape as 3 entries."""
    return sub(mul(logistic(mul(x, 2.0)), 2.0), 1.0)


def reduce_sum(x) -> Array:
    tape = _shared_tape("reduce_sum", x)
    xv, xn = _as_operand(x, "reduce_sum", None)

    def fwd(v):
        return np.sum(v)

    out = fwd(xv)
    if tape is None:
        return Array(out)

    def vjp(g, want):
        return (np.full(xv.shape, g, dtype=xv.dtype),)

    return tape._record(out, (_node_id(tape, xv, xn),), fwd, vjp, "reduce_sum")


def reduce_mean(x) -> Array:
    tape = _shared_tape("reduce_mean", x)
    xv, xn = _as_operand(x, "reduce_mean", None)

    def fwd(v):
        return np.mean(v)

    out = fwd(xv)
    if tape is None:
        return Array(out)
    scale = 1.0 / xv.size

    def vjp(g, want):
        return (np.full(xv.shape, g * scale, dtype=xv.dtype),)

    return tape._record(out, (_node_id(tape, xv, xn),), fwd, vjp, "reduce_mean")


def bce(p, target) -> Array:
    """Elementwise binary cross entropy with probabilities clamped to
    [BCE_EPS, 1 - BCE_EPS]. ``target`` is data, not a differentiable input.
    """
    tape = _shared_tape("bce", p)
    pv, pn = _as_operand(p, "bce", None)
    tv = np.asarray(target, dtype=pv.dtype)
    if tv.shape != pv.shape:
        raise ShapeError("bce", pv.shape, tv.shape)

    def fwd(v):
        q = np.clip(v, BCE_EPS, 1.0 - BCE_EPS)
        return -(tv * np.log(q) + (1.0 - tv) * np.log1p(-q))

    out = fwd(pv)
    if tape is None:
        return Array(out)

    def vjp(g, want):
        q = np.clip(pv, BCE_EPS, 1.0 - BCE_EPS)
        inside = (pv > BCE_EPS) & (pv < 1.0 - BCE_EPS)
        return (g * inside * (q - tv) / (q * (1.0 - q)),)

    return tape._record(out, (_node_id(tape, pv, pn),), fwd, vjp, "bce")


# ---------------------------------------------------------------------------
# 3-D convolution
#
# Grids are channels-last: (batch, depth, height, width, channels). Forward
# uses one of two equivalent kernels chosen by shape: a single GEMM scattered
# over kernel offsets (cheap when k^3*Cout <= Cin, e.g. a decoder head) or a
# gather loop over kernel offsets, one GEMM per offset. im2col was measured
# and loses: the window copy is cache-hostile at these extents. Both paths are
# exercised by the finite-difference tests.
# ---------------------------------------------------------------------------


def _offsets(k: int):
    return [(a, b, c) for a in range(k) for b in range(k) for c in range(k)]


def _pad_spatial(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p), (p, p), (0, 0)))


def _conv3d_scatter(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    b, d, h, wd, ci = x.shape
    k = w.shape[0]
    co = w.shape[4]
    p = k // 2
    wmat = w.transpose(3, 0, 1, 2, 4).reshape(ci, k * k * k * co)
    y = (x.reshape(-1, ci) @ wmat).reshape(b, d, h, wd, k * k * k, co)
    # offset-major copy so each scatter slice reads contiguously
    y = np.ascontiguousarray(np.moveaxis(y, 4, 0))
    outp = np.zeros((b, d + 2 * p, h + 2 * p, wd + 2 * p, co), dtype=x.dtype)
    for i, (a, bb, c) in enumerate(_offsets(k)):
        outp[:, 2 * p - a : 2 * p - a + d, 2 * p - bb : 2 * p - bb + h, 2 * p - c : 2 * p - c + wd, :] += y[i]
    return np.ascontiguousarray(outp[:, p : p + d, p : p + h, p : p + wd, :])


def _conv3d_im2col(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # only competitive for small Cin: the gathered window matrix stays narrow
    b, d, h, wd, ci = x.shape
    k = w.shape[0]
    co = w.shape[4]
    xp = _pad_spatial(x, k // 2)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))
    cols = win.reshape(b * d * h * wd, ci * k * k * k)
    wmat = np.ascontiguousarray(w.transpose(3, 0, 1, 2, 4)).reshape(ci * k * k * k, co)
    return (cols @ wmat).reshape(b, d, h, wd, co)


def _conv3d_loop(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    b, d, h, wd, ci = x.shape
    k = w.shape[0]
    co = w.shape[4]
    xp = _pad_spatial(x, k // 2)
    do, ho, wo = ((s - 1) // stride + 1 for s in (d, h, wd))
    acc = np.zeros((b * do * ho * wo, co), dtype=x.dtype)
    for a, bb, c in _offsets(k):
        xs = xp[:, a : a + stride * (do - 1) + 1 : stride,
                bb : bb + stride * (ho - 1) + 1 : stride,
                c : c + stride * (wo - 1) + 1 : stride, :]
        acc += xs.reshape(-1, ci) @ w[a, bb, c]
    return acc.reshape(b, do, ho, wo, co)


def _conv3d_raw(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    k = w.shape[0]
    ci, co = w.shape[3], w.shape[4]
    if stride == 1:
        if k * k * k * co <= ci:
            return _conv3d_scatter(x, w)
        if ci <= 4:
            return _conv3d_im2col(x, w)
    return _conv3d_loop(x, w, stride)


def _conv3d_grad_x(g: np.ndarray, w: np.ndarray, x_shape: tuple, stride: int) -> np.ndarray:
    k = w.shape[0]
    p = k // 2
    if stride == 1:
        # data gradient of a same-padded conv is a conv with the flipped,
        # channel-transposed kernel
        wt = np.ascontiguousarray(w[::-1, ::-1, ::-1].transpose(0, 1, 2, 4, 3))
        return _conv3d_raw(g, wt, 1)
    b, d, h, wd, ci = x_shape
    do, ho, wo = g.shape[1:4]
    co = g.shape[4]
    gm = g.reshape(-1, co)
    gxp = np.zeros((b, d + 2 * p, h + 2 * p, wd + 2 * p, ci), dtype=g.dtype)
    for a, bb, c in _offsets(k):
        piece = (gm @ w[a, bb, c].T).reshape(b, do, ho, wo, ci)
        gxp[:, a : a + stride * (do - 1) + 1 : stride,
            bb : bb + stride * (ho - 1) + 1 : stride,
            c : c + stride * (wo - 1) + 1 : stride, :] += piece
    return np.ascontiguousarray(gxp[:, p : p + d, p : p + h, p : p + wd, :])


def _conv3d_grad_w(g: np.ndarray, x: np.ndarray, k: int, stride: int) -> np.ndarray:
    b, d, h, wd, ci = x.shape
    co = g.shape[4]
    xp = _pad_spatial(x, k // 2)
    do, ho, wo = g.shape[1:4]
    gm = g.reshape(-1, co)
    gw = np.empty((k, k, k, ci, co), dtype=g.dtype)
    for a, bb, c in _offsets(k):
        xs = xp[:, a : a + stride * (do - 1) + 1 : stride,
                bb : bb + stride * (ho - 1) + 1 : stride,
                c : c + stride * (wo - 1) + 1 : stride, :]
        gw[a, bb, c] = xs.reshape(-1, ci).T @ gm
    return gw


def conv3d(x, w, bias=None, stride: int = 1) -> Array:
    """3-D convolution with same padding.

    ``x`` is (B, D, H, W, Cin), ``w`` is (k, k, k, Cin, Cout) with odd k, and
    ``bias`` (optional, differentiable) is (Cout,) or (Cout, 1); a (Cout, 1)
    bias lets matmul-produced embedding projections feed in directly. Stride 1
    preserves the spatial extent, stride 2 halves it (ceil division).
    """
    args = (x, w) if bias is None else (x, w, bias)
    tape = _shared_tape("conv3d", *args)
    xv, xn = _as_operand(x, "conv3d", None)
    wv, wn = _as_operand(w, "conv3d", None)
    if xv.ndim != 5 or wv.ndim != 5 or wv.shape[0] != wv.shape[1] or wv.shape[0] != wv.shape[2]:
        raise ShapeError("conv3d", xv.shape, wv.shape)
    k = wv.shape[0]
    if k % 2 != 1:
        raise ShapeError("conv3d", xv.shape, wv.shape)
    if xv.shape[4] != wv.shape[3]:
        raise ShapeError("conv3d", xv.shape, wv.shape)
    if stride not in (1, 2):
        raise ValueError(f"conv3d: stride must be 1 or 2, got {stride}")
    co = wv.shape[4]
    bv = bn = None
    if bias is not None:
        bv, bn = _as_operand(bias, "conv3d", None)
        if bv.shape not in ((co,), (co, 1)):
            raise ShapeError("conv3d.bias", bv.shape, (co,))

    def fwd(xa, wa, *rest):
        out = _conv3d_raw(xa, wa, stride)
        if rest:
            out = out + rest[0].reshape(co)
        return out

    out = fwd(xv, wv) if bias is None else fwd(xv, wv, bv)
    if tape is None:
        return Array(out)

    def vjp(g, want):
        g = np.ascontiguousarray(g)
        gx = _conv3d_grad_x(g, wv, xv.shape, stride) if want[0] else None
        gw = _conv3d_grad_w(g, xv, k, stride) if want[1] else None
        if bv is None:
            return gx, gw
        gb = g.sum(axis=(0, 1, 2, 3)).reshape(bv.shape) if want[2] else None
        return gx, gw, gb

    pids = [_node_id(tape, xv, xn), _node_id(tape, wv, wn)]
    if bv is not None:
        pids.append(_node_id(tape, bv, bn))
    return tape._record(out, tuple(pids), fwd, vjp, "conv3d")


def upsample_nn(x, factor: int = 2) -> Array:
    """Nearest-neighbour upsampling of the three spatial axes of (B,D,H,W,C)."""
    tape = _shared_tape("upsample_nn", x)
    xv, xn = _as_operand(x, "upsample_nn", None)
    if xv.ndim != 5:
        raise ShapeError("upsample_nn", xv.shape)
    if factor < 1:
        raise ValueError(f"upsample_nn: factor must be >= 1, got {factor}")
    b, d, h, wd, c = xv.shape
    f = factor

    def fwd(v):
        e = np.broadcast_to(v[:, :, None, :, None, :, None, :], (b, d, f, h, f, wd, f, c))
        return e.reshape(b, d * f, h * f, wd * f, c)

    out = fwd(xv)
    if tape is None:
        return Array(out)

    def vjp(g, want):
        return (g.reshape(b, d, f, h, f, wd, f, c).sum(axis=(2, 4, 6)),)

    return tape._record(out, (_node_id(tape, xv, xn),), fwd, vjp, "upsample_nn")


def downsample_nn(x, factor: int = 2) -> Array:
    """Nearest-neighbour downsampling: keeps the first sample of each block."""
    tape = _shared_tape("downsample_nn", x)
    xv, xn = _as_operand(x, "downsample_nn", None)
    if xv.ndim != 5:
        raise ShapeError("downsample_nn", xv.shape)
    if factor < 1:
        raise ValueError(f"downsample_nn: factor must be >= 1, got {factor}")
    for s in xv.shape[1:4]:
        if s % factor:
            raise ShapeError("downsample_nn", xv.shape)
    f = factor

    def fwd(v):
        return np.ascontiguousarray(v[:, ::f, ::f, ::f, :])

    out = fwd(xv)
    if tape is None:
        return Array(out)

    def vjp(g, want):
        gx = np.zeros(xv.shape, dtype=g.dtype)
        gx[:, ::f, ::f, ::f, :] = g
        return (gx,)

    return tape._record(out, (_node_id(tape, xv, xn),), fwd, vjp, "downsample_nn")


def sgd_step(params, grads, lr: float):
    """One step of plain gradient descent: p <- p - lr * g.

    Pure function: returns fresh arrays (list in, list out; dict in, dict out).
    Rejects shape mismatches and non-finite gradients.
    """
    if isinstance(params, dict) != isinstance(grads, dict):
        raise TypeError("sgd_step: params and grads must both be dicts or both sequences")
    if isinstance(params, dict):
        if params.keys() != grads.keys():
            raise ValueError("sgd_step: params and grads have different keys")
        items = [(k, params[k], grads[k]) for k in params]
    else:
        if len(params) != len(grads):
            raise ValueError("sgd_step: params and grads have different lengths")
        items = [(i, p, g) for i, (p, g) in enumerate(zip(params, grads))]
    out = {} if isinstance(params, dict) else []
    for key, p, g in items:
        p = np.asarray(p)
        g = np.asarray(g)
        if p.shape != g.shape:
            raise ShapeError(f"sgd_step[{key}]", p.shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise ValueError(f"sgd_step[{key}]: non-finite gradient")
        stepped = p - lr * g
        if isinstance(out, dict):
            out[key] = stepped
        else:
            out.append(stepped)
    return out
