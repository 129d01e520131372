"""Dense float64 tensors with a reverse-mode tape, Adam, and dropout.

Every op computes its value eagerly with numpy. When a :class:`Tape` is
active and at least one input requires a gradient, the op appends a record
holding its backward closure; :func:`backward` replays the records in
reverse. Tensors are treated as immutable values.
"""
from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

DTYPE = np.float64

_ids = itertools.count()
_local = threading.local()


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class Tensor:
    __slots__ = ("data", "requires_grad", "id", "name")
    # make numpy defer to our reflected operators (ndarray + Tensor -> Tensor)
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# tape


@dataclass
class TapeRecord:
    op: str
    input_ids: tuple[int, ...]
    input_needs: tuple[bool, ...]
    output_id: int
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered op records for one forward pass. Use as a context manager."""

    records: list[TapeRecord] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def record(self, op, inputs, output, backward_fn) -> None:
        self.records.append(
            TapeRecord(
                op,
                tuple(t.id for t in inputs),
                tuple(t.requires_grad for t in inputs),
                output.id,
                backward_fn,
            )
        )


def _tape_stack() -> list[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def current_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _emit(op: str, value: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if needs:
        tape = current_tape()
        if tape is not None:
            tape.record(op, inputs, out, backward_fn)
    return out


def backward(tape: Tape, loss: Tensor, wrt: Mapping[str, Tensor] | None = None):
    """Reverse-mode sweep over ``tape`` seeded at the scalar ``loss``.

    Returns a map from tensor id to gradient, or, when ``wrt`` is given, a map
    from the same keys as ``wrt`` to gradients (zeros for tensors the loss
    does not reach).
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.get(rec.output_id)
        if g is None:
            continue
        in_grads = rec.backward(g)
        for tid, need, gi in zip(rec.input_ids, rec.input_needs, in_grads):
            if not need or gi is None:
                continue
            if tid in grads:
                grads[tid] = grads[tid] + gi
            else:
                grads[tid] = gi
    if wrt is None:
        return grads
    out = {}
    for key, t in wrt.items():
        g = grads.get(t.id)
        out[key] = np.zeros_like(t.data) if g is None else g.reshape(t.shape)
    return out


# --------------------------------------------------------------------------
# ops


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _emit(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _emit(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _emit(
        "mul",
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _emit("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def gram(x: Tensor) -> Tensor:
    """``x @ x.T`` evaluated entrywise, so it is exactly symmetric and
    exactly equivariant under row permutations (blocked BLAS is neither)."""
    x = as_tensor(x)
    xd = x.data
    return _emit("gram", np.einsum("ik,jk->ij", xd, xd), (x,), lambda g: ((g + g.T) @ xd,))


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _emit("transpose", x.data.T.copy(), (x,), lambda g: (g.T,))


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _emit("relu", np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _emit("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return _emit("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def softmax_rows(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ValueError("softmax_rows expects a 2-D tensor")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _emit("softmax_rows", y, (x,), bw)


def log(x: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log; inputs below ``floor`` are clamped and pass no gradient."""
    x = as_tensor(x)
    keep = x.data > floor
    clamped = np.where(keep, x.data, floor)
    with np.errstate(divide="ignore"):
        y = np.log(clamped)
    return _emit("log", y, (x,), lambda g: (np.where(keep, g / clamped, 0.0),))


def power(x: Tensor, p: float) -> Tensor:
    x = as_tensor(x)
    xd = x.data

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = p * xd ** (p - 1)
        # subgradient 0 where the derivative blows up at x == 0
        return (g * np.where(np.isfinite(d), d, 0.0),)

    return _emit("power", xd**p, (x,), bw)


def sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bw)


def mean(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return mul(sum(x), 1.0 / x.data.size)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ValueError(f"concat_cols row mismatch: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _emit("concat_cols", np.concatenate([p.data for p in parts], axis=1), parts, bw)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    cols = {p.shape[1:] for p in parts}
    if len(cols) != 1:
        raise ValueError(f"concat_rows column mismatch: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def bw(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _emit("concat_rows", np.concatenate([p.data for p in parts], axis=0), parts, bw)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _emit("slice_cols", x.data[:, start:stop].copy(), (x,), bw)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _emit("slice_rows", x.data[start:stop].copy(), (x,), bw)


def pick(x: Tensor, index: Sequence[int]) -> Tensor:
    """Per-row gather: ``out[i] = x[i, index[i]]``."""
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)
    rows = np.arange(len(idx))
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[rows, idx] = g
        return (full,)

    return _emit("pick", x.data[rows, idx].copy(), (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    var = xd.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    gd = gain.data
    d = xd.shape[1]

    def bw(g):
        dxhat = g * gd
        dx = inv / d * (d * dxhat - dxhat.sum(axis=1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _emit("layer_norm", xhat * gd + bias.data, (x, gain, bias), bw)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _emit("dropout", x.data * mask, (x,), lambda g: (g * mask,))


def row_normalize(x: Tensor) -> Tensor:
    """Scale each row to unit L2 norm; all-zero rows stay zero."""
    x = as_tensor(x)
    norms = np.sqrt((x.data**2).sum(axis=1, keepdims=True))
    nz = norms > 0
    safe = np.where(nz, norms, 1.0)
    y = np.where(nz, x.data / safe, 0.0)

    def bw(g):
        return (np.where(nz, (g - y * (g * y).sum(axis=1, keepdims=True)) / safe, 0.0),)

    return _emit("row_normalize", y, (x,), bw)


def angular_similarity(cos: Tensor) -> Tensor:
    """Elementwise ``1 - arccos(clip(c, -1, 1)) / pi``."""
    cos = as_tensor(cos)
    c = np.clip(cos.data, -1.0, 1.0)
    y = 1.0 - np.arccos(c) / math.pi
    inside = np.abs(cos.data) < 1.0

    def bw(g):
        denom = np.sqrt(np.where(inside, 1.0 - c * c, 1.0))
        return (np.where(inside, g / (math.pi * denom), 0.0),)

    return _emit("angular_similarity", y, (cos,), bw)


def lstm(x: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Single-direction LSTM unrolled over the rows of ``x``.

    Gate column blocks of ``w_x``/``w_h``/``b`` are ordered (input, forget,
    cell, output). Output row ``i`` is the hidden state after consuming row
    ``i``; with ``reverse`` the sequence is consumed from the last row.
    """
    x, w_x, w_h, b = (as_tensor(t) for t in (x, w_x, w_h, b))
    n, d_in = x.shape
    hid = w_h.shape[0]
    if w_x.shape != (d_in, 4 * hid) or w_h.shape != (hid, 4 * hid) or b.shape != (4 * hid,):
        raise ValueError(
            f"lstm shape mismatch: x {x.shape}, w_x {w_x.shape}, w_h {w_h.shape}, b {b.shape}"
        )
    order = range(n - 1, -1, -1) if reverse else range(n)
    xw = x.data @ w_x.data + b.data
    wh = w_h.data
    hs = np.zeros((n, hid))
    cs = np.zeros((n, hid))
    gates = np.zeros((n, 4 * hid))
    prev = {}
    h = np.zeros(hid)
    c = np.zeros(hid)
    for t in order:
        prev[t] = (h, c)
        z = xw[t] + h @ wh
        i = _sigmoid(z[:hid])
        f = _sigmoid(z[hid : 2 * hid])
        gg = np.tanh(z[2 * hid : 3 * hid])
        o = _sigmoid(z[3 * hid :])
        c = f * c + i * gg
        h = o * np.tanh(c)
        gates[t] = np.concatenate([i, f, gg, o])
        hs[t] = h
        cs[t] = c

    def bw(gout):
        dxw = np.zeros_like(xw)
        dwh = np.zeros_like(wh)
        dh_next = np.zeros(hid)
        dc_next = np.zeros(hid)
        for t in reversed(list(order)):
            h_prev, c_prev = prev[t]
            i, f, gg, o = (gates[t, k * hid : (k + 1) * hid] for k in range(4))
            tc = np.tanh(cs[t])
            dh = gout[t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = np.concatenate(
                [
                    dc * gg * i * (1.0 - i),
                    dc * c_prev * f * (1.0 - f),
                    dc * i * (1.0 - gg * gg),
                    do * o * (1.0 - o),
                ]
            )
            dc_next = dc * f
            dwh += np.outer(h_prev, dz)
            dh_next = wh @ dz
            dxw[t] = dz
        return dxw @ w_x.data.T, x.data.T @ dxw, dwh, dxw.sum(axis=0)

    return _emit("lstm", hs, (x, w_x, w_h, b), bw)


def one_hot(index: Sequence[int], size: int) -> np.ndarray:
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise ValueError(f"index out of range for one-hot of size {size}")
    out = np.zeros((len(idx), size))
    out[np.arange(len(idx)), idx] = 1.0
    return out


# --------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    lr: float = 3e-4
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState
) -> dict[str, Tensor]:
    """One bias-corrected Adam update. Returns fresh parameter tensors."""
    for name, p in params.items():
        if name in grads and np.shape(grads[name]) != p.shape:
            raise ValueError(f"gradient shape {np.shape(grads[name])} != parameter {name} {p.shape}")
    state.t += 1
    t = state.t
    c1 = 1.0 - state.b1**t
    c2 = 1.0 - state.b2**t
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.b1 * m + (1.0 - state.b1) * g
        v = state.b2 * v + (1.0 - state.b2) * g * g
        state.m[name] = m
        state.v[name] = v
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        out[name] = Tensor(p.data - step, requires_grad=True, name=name)
    return out


def numeric_gradient(f: Callable[[], float], array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``f`` w.r.t. ``array`` (mutated in place, then restored)."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = array[idx]
        array[idx] = orig + h
        fp = f()
        array[idx] = orig - h
        fm = f()
        array[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad
