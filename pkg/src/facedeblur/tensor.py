"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` (one per thread)
only when at least one input is tracked, so inference outside a tape costs
nothing beyond the numpy arithmetic.

    w = Tensor(np.ones((1, 1, 3, 3)), requires_grad=True)
    with Tape():
        loss = mean_all(conv2d(x, w))
        backward(loss)
    w.grad  # d loss / d w
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class GradientError(RuntimeError):
    """Backward pass requested on something that cannot be differentiated."""


class OracleError(RuntimeError):
    """Finite-difference evaluation produced a non-finite value."""


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class _Node:
    __slots__ = ("tape", "generation", "index", "parents", "backward")

    def __init__(self, tape, index, parents, backward):
        self.tape = tape
        self.generation = tape.generation
        self.index = index
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as operations execute, so parents always precede
    children. A tape may be replayed backward once; call :meth:`reset` (or
    open a new tape) before the next backward pass.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False
        self.generation = 0

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def reset(self) -> None:
        self.nodes = []
        self.consumed = False
        self.generation += 1

    def _record(self, parents, backward) -> _Node:
        node = _Node(self, len(self.nodes), parents, backward)
        self.nodes.append(node)
        return node


class Tensor:
    """n-dimensional float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "node")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0:
            raise DimensionError("tensors must have positive dimension sizes")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self.node is not None

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self.shape))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.shape))

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__


def _as_tensor(x, shape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.broadcast_to(np.asarray(x, dtype=np.float64), shape))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.node = None
    tape = _active_tape()
    if tape is not None and any(p.tracked for p in parents):
        out.node = tape._record(tuple(parents), backward)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss.node
    if node is None:
        raise GradientError("loss is detached: it was not built on an active tape")
    tape = node.tape
    if node.generation != tape.generation:
        raise GradientError("loss belongs to a tape that has since been reset")
    if tape.consumed:
        raise GradientError("tape already replayed; reset it before calling backward again")
    tape.consumed = True

    pending: dict[int, np.ndarray] = {node.index: np.ones_like(loss.data)}
    for current in reversed(tape.nodes[: node.index + 1]):
        g = pending.pop(current.index, None)
        if g is None:
            continue
        for parent, pg in zip(current.parents, current.backward(g)):
            if pg is None:
                continue
            pn = parent.node
            if pn is not None and pn.tape is tape:
                if pn.index in pending:
                    pending[pn.index] = pending[pn.index] + pg
                else:
                    pending[pn.index] = pg
            elif parent.requires_grad:
                if parent.grad is None:
                    parent.grad = np.array(pg, dtype=np.float64)
                else:
                    parent.grad = parent.grad + pg
    # one-shot: drop recorded closures so activations are freed without the cycle collector
    tape.nodes = []


def zero_grad(params) -> None:
    for p in params:
        p.grad = None


# elementwise and reductions

def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def square(t: Tensor) -> Tensor:
    x = t.data
    return _result(x * x, (t,), lambda g: (2.0 * x * g,))


def scale(t: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(t.data * c, (t,), lambda g: (g * c,))


def sum_all(t: Tensor) -> Tensor:
    shape = t.shape
    return _result(np.array([t.data.sum()]), (t,), lambda g: (np.full(shape, g[0]),))


def mean_all(t: Tensor) -> Tensor:
    shape, n = t.shape, t.data.size
    return _result(np.array([t.data.sum() / n]), (t,), lambda g: (np.full(shape, g[0] / n),))


def leaky_relu(t: Tensor, slope: float = 0.01) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = t.data
    factor = np.where(x >= 0.0, 1.0, slope)
    return _result(x * factor, (t,), lambda g: (g * factor,))


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("concat_channels needs at least one part")
    ref = parts[0].shape
    for p in parts:
        if p.data.ndim != 4 or p.shape[0] != ref[0] or p.shape[2:] != ref[2:]:
            raise DimensionError(f"concat_channels: incompatible part {p.shape} vs {ref}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw(g):
        return tuple(g[:, bounds[i]: bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bw)


def slice_axis(t: Tensor, axis: int, start: int, stop: int, step: int = 1) -> Tensor:
    """``t[..., start:stop:step, ...]`` along one axis."""
    index = [slice(None)] * t.data.ndim
    index[axis] = slice(start, stop, step)
    index = tuple(index)
    out = t.data[index]
    if out.size == 0:
        raise DimensionError(f"slice along axis {axis} is empty for shape {t.shape}")
    shape = t.shape

    def bw(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _result(np.ascontiguousarray(out), (t,), bw)


def mean_spatial(t: Tensor) -> Tensor:
    """Global average over H, W: [N, C, H, W] -> [N, C]."""
    if t.data.ndim != 4:
        raise DimensionError(f"mean_spatial expects NCHW, got {t.shape}")
    n, c, h, w = t.shape

    def bw(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)).copy(),)

    return _result(t.data.mean(axis=(2, 3)), (t,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """[N, K] @ [K, M] -> [N, M]."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    x, y = a.data, b.data
    return _result(x @ y, (a, b), lambda g: (g @ y.T, x.T @ g))


# convolution

def same_padding(k: int) -> tuple[int, int]:
    """Leading/trailing padding that keeps the output size; even k pads one less at the end."""
    return k // 2, k - 1 - k // 2


def pad_edge(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    top, bottom = same_padding(kh)
    left, right = same_padding(kw)
    widths = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    return np.pad(x, widths, mode="edge")


def pad_edge_adjoint(gp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Adjoint of :func:`pad_edge`: fold padded-border gradients onto the edge pixels."""
    top, bottom = same_padding(kh)
    left, right = same_padding(kw)
    h = gp.shape[-2] - top - bottom
    w = gp.shape[-1] - left - right
    rows = gp[..., top: top + h, :].copy()
    if top:
        rows[..., 0, :] += gp[..., :top, :].sum(axis=-2)
    if bottom:
        rows[..., -1, :] += gp[..., top + h:, :].sum(axis=-2)
    out = rows[..., left: left + w].copy()
    if left:
        out[..., 0] += rows[..., :left].sum(axis=-1)
    if right:
        out[..., -1] += rows[..., left + w:].sum(axis=-1)
    return out


def _row_columns(xp: np.ndarray, u: int, h: int, kw: int) -> np.ndarray:
    # [N, C, H, Wp] window rows -> [N, C*kw, H*W] patch matrix for kernel row u
    n, c = xp.shape[:2]
    win = sliding_window_view(xp[:, :, u: u + h, :], kw, axis=3)  # N,C,H,W,kw
    w = win.shape[3]
    return win.transpose(0, 1, 4, 2, 3).reshape(n, c * kw, h * w)


def _conv_same(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    if kh == 1 and kw == 1:
        return np.matmul(w[:, :, 0, 0], x.reshape(n, c, h * wd)).reshape(n, o, h, wd)
    xp = pad_edge(x, kh, kw)
    out = np.zeros((n, o, h * wd))
    for u in range(kh):
        out += np.matmul(w[:, :, u, :].reshape(o, c * kw), _row_columns(xp, u, h, kw))
    return out.reshape(n, o, h, wd)


def _conv_same_grads(x: np.ndarray, w: np.ndarray, g: np.ndarray):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    g2 = g.reshape(n, o, h * wd)
    if kh == 1 and kw == 1:
        x2 = x.reshape(n, c, h * wd)
        gw = np.einsum("noq,ncq->oc", g2, x2)[:, :, None, None]
        gx = np.matmul(w[:, :, 0, 0].T, g2).reshape(n, c, h, wd)
        return gx, gw
    xp = pad_edge(x, kh, kw)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for u in range(kh):
        cols = _row_columns(xp, u, h, kw)
        gw[:, :, u, :] = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(o, c, kw)
        gcols = np.matmul(w[:, :, u, :].reshape(o, c * kw).T, g2).reshape(n, c, kw, h, wd)
        for v in range(kw):
            gxp[:, :, u: u + h, v: v + wd] += gcols[:, :, v]
    return pad_edge_adjoint(gxp, kh, kw), gw


def conv2d(x: Tensor, weight: Tensor, stride: int = 1) -> Tensor:
    """Cross-correlation with edge-replicated "same" padding.

    ``x`` is [N, C_in, H, W] and ``weight`` is [C_out, C_in, kH, kW]. With
    ``stride`` > 1 the same-size response is subsampled at every
    ``stride``-th row and column starting from 0.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d operands, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"conv2d: input has {x.shape[1]} channels, weight expects {weight.shape[1]}"
        )
    if stride < 1:
        raise ValueError("stride must be >= 1")
    xd, wd = x.data, weight.data
    full = _conv_same(xd, wd)
    out = full if stride == 1 else np.ascontiguousarray(full[:, :, ::stride, ::stride])

    def bw(g):
        if stride != 1:
            gf = np.zeros_like(full)
            gf[:, :, ::stride, ::stride] = g
            g = gf
        return _conv_same_grads(xd, wd, g)

    return _result(out, (x, weight), bw)


def conv2d_reference(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Loop-nest "same" cross-correlation on plain arrays; slow, used as the reference path."""
    n, c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    if c != c2:
        raise DimensionError(f"conv2d_reference: channel mismatch {c} vs {c2}")
    xp = pad_edge(x, kh, kw)
    out = np.zeros((n, o, h, wd))
    for b in range(n):
        for f in range(o):
            for i in range(h):
                for j in range(wd):
                    out[b, f, i, j] = np.sum(xp[b, :, i: i + kh, j: j + kw] * w[f])
    return out


def correlate2d_fft(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Single-plane "same" cross-correlation with edge replication, via real FFTs."""
    if x.ndim != 2 or k.ndim != 2:
        raise DimensionError("correlate2d_fft works on 2-d planes")
    kh, kw = k.shape
    h, w = x.shape
    xp = pad_edge(x, kh, kw)
    shape = (xp.shape[0] + kh - 1, xp.shape[1] + kw - 1)
    spec = np.fft.rfft2(xp, shape) * np.fft.rfft2(k[::-1, ::-1], shape)
    full = np.fft.irfft2(spec, shape)
    return full[kh - 1: kh - 1 + h, kw - 1: kw - 1 + w]


def correlate2d_direct(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Single-plane "same" cross-correlation by shift-and-add over kernel taps."""
    kh, kw = k.shape
    h, w = x.shape
    xp = pad_edge(x, kh, kw)
    out = np.zeros((h, w))
    for u in range(kh):
        for v in range(kw):
            if k[u, v] != 0.0:
                out += k[u, v] * xp[u: u + h, v: v + w]
    return out


# gradient oracle

def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    at: Tensor,
    h: float = 1e-5,
    indices: Sequence[int] | None = None,
) -> float:
    """Max relative error between the tape gradient and central differences.

    ``f`` must build a scalar from ``at`` (and anything it closes over).
    The error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    ``indices`` restricts the comparison to a subset of flat coordinates.
    """
    leaf = Tensor(at.data.copy(), requires_grad=True)
    with Tape():
        out = f(leaf)
        if out.node is not None:
            backward(out)
    analytic = np.zeros(leaf.shape) if leaf.grad is None else leaf.grad
    flat = leaf.data.reshape(-1)
    coords = range(flat.size) if indices is None else indices
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        plus = f(leaf).item()
        flat[i] = orig - h
        minus = f(leaf).item()
        flat[i] = orig
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise OracleError(f"non-finite evaluation at coordinate {i}")
        numeric = (plus - minus) / (2.0 * h)
        a = analytic.reshape(-1)[i]
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
