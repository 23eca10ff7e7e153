"""Reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every primitive applied to :class:`Var` values
together with a closure for its vector-Jacobian product. ``backward`` walks
the record in reverse and leaves gradients on the leaves.

Forward values of taped primitives are computed by the same numpy code as
their untaped counterparts in :mod:`viewsynth.imagebuf`, so they agree
bit-for-bit.

Piecewise operations (``abs``, ``clamp``, ``amin``, comparisons, bilinear
cell selection, guarded division) append their discrete decision to
``Tape.branches``; :func:`gradcheck` uses that to skip finite-difference
probes that cross a kink.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import geometry, imagebuf
from .errors import InvalidArgumentError

DIV_GUARD = 1e-12


class Var:
    __slots__ = ("value", "tape", "id", "needs_grad", "grad")
    __array_priority__ = 100
    __array_ufunc__ = None

    def __init__(self, value, tape: Tape, needs_grad: bool):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.needs_grad = needs_grad
        self.id = tape._next_id()
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.shape}, needs_grad={self.needs_grad})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, k):
        if k == 2:
            return mul(self, self)
        raise NotImplementedError("only squaring is supported")

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


class Tape:
    """Recording of primitive operations.

    ``record=False`` evaluates values only (no closures are kept), which is
    what finite-difference probes use.
    """

    def __init__(self, record: bool = True, track_branches: bool = False):
        self.record = record
        self.track_branches = track_branches
        self.nodes: list[tuple[Var, tuple, Callable]] = []
        self.branches: list[np.ndarray] = []
        self._count = 0

    def _next_id(self) -> int:
        self._count += 1
        return self._count

    def var(self, value, requires_grad: bool = True) -> Var:
        return Var(value, self, requires_grad and self.record)

    def const(self, value) -> Var:
        return Var(value, self, False)

    def lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise InvalidArgumentError("operands live on different tapes")
            return x
        return self.const(x)

    def push(self, value, parents: tuple, vjp: Callable) -> Var:
        """Record an op. ``vjp(g)`` returns one cotangent per parent."""
        needs = self.record and any(p.needs_grad for p in parents)
        out = Var(value, self, needs)
        if needs:
            self.nodes.append((out, parents, vjp))
        return out

    def branch(self, decision) -> None:
        if self.track_branches:
            self.branches.append(np.array(decision, copy=True))

    def backward(self, loss: Var, leaves=None) -> None:
        if loss.tape is not self:
            raise InvalidArgumentError("loss belongs to another tape")
        if loss.value.size != 1:
            raise InvalidArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {loss.id: np.ones_like(loss.value)}
        for out, parents, vjp in reversed(self.nodes):
            g = grads.pop(out.id, None)
            if g is None:
                continue
            for p, gp in zip(parents, vjp(g)):
                if not p.needs_grad or gp is None:
                    continue
                gp = _unbroadcast(np.asarray(gp, dtype=np.float64), p.shape)
                if p.id in grads:
                    grads[p.id] = grads[p.id] + gp
                else:
                    grads[p.id] = gp
        for leaf in leaves or ():
            leaf.grad = grads.get(leaf.id, np.zeros_like(leaf.value))
        self._last_grads = grads

    def signature(self) -> list[np.ndarray]:
        return list(self.branches)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise InvalidArgumentError("at least one operand must be a Var")


def _lift2(a, b):
    t = _tape_of(a, b)
    return t, t.lift(a), t.lift(b)


def value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


# elementwise arithmetic -----------------------------------------------------


def add(a, b) -> Var:
    t, a, b = _lift2(a, b)
    return t.push(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Var:
    t, a, b = _lift2(a, b)
    return t.push(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Var:
    t, a, b = _lift2(a, b)
    av, bv = a.value, b.value
    return t.push(av * bv, (a, b), lambda g: (g * bv, g * av))


def guard_denominator(b: np.ndarray) -> np.ndarray:
    return np.where(np.abs(b) < DIV_GUARD, np.where(b < 0, -DIV_GUARD, DIV_GUARD), b)


def safe_div(a, b) -> np.ndarray:
    """Untaped division with the same denominator guard as :func:`div`."""
    return np.asarray(a, dtype=np.float64) / guard_denominator(np.asarray(b, dtype=np.float64))


def div(a, b) -> Var:
    t, a, b = _lift2(a, b)
    tiny = np.abs(b.value) < DIV_GUARD
    t.branch(tiny)
    bv = guard_denominator(b.value)
    out = a.value / bv
    return t.push(out, (a, b), lambda g: (g / bv, np.where(tiny, 0.0, -g * out / bv)))


def exp(x: Var) -> Var:
    out = np.exp(x.value)
    return x.tape.push(out, (x,), lambda g: (g * out,))


def log(x: Var) -> Var:
    xv = x.value
    return x.tape.push(np.log(xv), (x,), lambda g: (g / xv,))


def sqrt(x: Var) -> Var:
    out = np.sqrt(x.value)
    return x.tape.push(out, (x,), lambda g: (g * 0.5 / out,))


def sin(x: Var) -> Var:
    xv = x.value
    return x.tape.push(np.sin(xv), (x,), lambda g: (g * np.cos(xv),))


def cos(x: Var) -> Var:
    xv = x.value
    return x.tape.push(np.cos(xv), (x,), lambda g: (-g * np.sin(xv),))


def abs_(x: Var) -> Var:
    s = np.sign(x.value)
    x.tape.branch(s)
    return x.tape.push(np.abs(x.value), (x,), lambda g: (g * s,))


def clamp(x: Var, lo=None, hi=None) -> Var:
    xv = x.value
    inside = np.ones(xv.shape, dtype=bool)
    if lo is not None:
        inside &= xv >= lo
    if hi is not None:
        inside &= xv <= hi
    x.tape.branch(inside)
    return x.tape.push(np.clip(xv, lo, hi), (x,), lambda g: (g * inside,))


def where(cond, a, b) -> Var:
    """Select with a constant boolean condition."""
    t, a, b = _lift2(a, b)
    c = np.asarray(value(cond), dtype=bool)
    t.branch(c)
    return t.push(np.where(c, a.value, b.value), (a, b), lambda g: (np.where(c, g, 0.0), np.where(c, 0.0, g)))


def stop_gradient(x: Var) -> Var:
    """Same value, no gradient flows back through this node."""
    return x.tape.const(x.value)


# comparisons produce constant masks ----------------------------------------


def less(a, b) -> np.ndarray:
    out = (value(a) < value(b)).astype(np.float64)
    t = a.tape if isinstance(a, Var) else (b.tape if isinstance(b, Var) else None)
    if t is not None:
        t.branch(out)
    return out


def greater(a, b) -> np.ndarray:
    return less(b, a)


# reductions and shape ops ---------------------------------------------------


def sum_(x: Var, axis=None) -> Var:
    shape = x.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return x.tape.push(np.sum(x.value, axis=axis), (x,), vjp)


def mean(x: Var, axis=None) -> Var:
    shape = x.shape
    n = x.value.size if axis is None else np.prod([shape[a] for a in np.atleast_1d(axis)])

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape),)

    return x.tape.push(np.mean(x.value, axis=axis), (x,), vjp)


def amin(x: Var) -> Var:
    """Global minimum; the gradient goes to the first minimizing element."""
    k = int(np.argmin(x.value))
    x.tape.branch(k)
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        out.flat[k] = g
        return (out,)

    return x.tape.push(x.value.flat[k], (x,), vjp)


def reshape(x: Var, shape) -> Var:
    old = x.shape
    return x.tape.push(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Var) -> Var:
    return x.tape.push(x.value.T, (x,), lambda g: (g.T,))


def getitem(x: Var, idx) -> Var:
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return x.tape.push(x.value[idx], (x,), vjp)


def stack(xs, axis: int = 0) -> Var:
    t = _tape_of(*xs)
    xs = tuple(t.lift(x) for x in xs)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return t.push(np.stack([x.value for x in xs], axis=axis), xs, vjp)


def matmul(a, b) -> Var:
    """2-D @ 2-D or 2-D @ 1-D."""
    t, a, b = _lift2(a, b)
    av, bv = a.value, b.value

    def vjp(g):
        if bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return t.push(av @ bv, (a, b), vjp)


# image primitives -----------------------------------------------------------


def bilinear_sample(img: Var, u, v) -> tuple[Var, np.ndarray]:
    """Differentiable in the image values and in both coordinates."""
    t = _tape_of(img, u, v)
    img, u, v = t.lift(img), t.lift(u), t.lift(v)
    flat = img.ndim == 2
    grid = img.value[:, :, None] if flat else img.value
    H, W = grid.shape[:2]
    s = imagebuf.bilinear_stencil(u.value, v.value, H, W)
    t.branch(s.rows)
    t.branch(s.cols)
    t.branch(s.valid)
    out = imagebuf._gather(grid, s)
    r0, c0 = s.rows, s.cols
    r1, c1 = np.minimum(r0 + 1, H - 1), np.minimum(c0 + 1, W - 1)
    fu, fv = s.fu[..., None], s.fv[..., None]
    ok = s.valid[..., None]

    def vjp(g):
        g = g[..., None] if flat else g
        g = np.where(ok, g, 0.0)
        gimg = np.zeros_like(grid)
        np.add.at(gimg, (r0, c0), g * (1 - fu) * (1 - fv))
        np.add.at(gimg, (r0, c1), g * fu * (1 - fv))
        np.add.at(gimg, (r1, c0), g * (1 - fu) * fv)
        np.add.at(gimg, (r1, c1), g * fu * fv)
        i00, i01, i10, i11 = grid[r0, c0], grid[r0, c1], grid[r1, c0], grid[r1, c1]
        du = ((i01 - i00) * (1 - fv) + (i11 - i10) * fv) * g
        dv = ((i10 - i00) * (1 - fu) + (i11 - i01) * fu) * g
        return (gimg[:, :, 0] if flat else gimg), du.sum(-1), dv.sum(-1)

    res = t.push(out[..., 0] if flat else out, (img, u, v), vjp)
    return res, s.valid


def box_mean(x: Var, radius: int = 1) -> Var:
    return x.tape.push(imagebuf.box_mean(x.value, radius), (x,), lambda g: (imagebuf.box_mean_adjoint(g, radius),))


def upsample(x: Var, size) -> Var:
    if tuple(size) == x.shape[:2]:
        return x
    Mh = imagebuf.interp_matrix(x.shape[0], size[0])
    Mw = imagebuf.interp_matrix(x.shape[1], size[1])
    out = imagebuf.upsample(x.value, size)
    return x.tape.push(out, (x,), lambda g: (np.einsum("ij,il...,lk->jk...", Mh, g, Mw),))


def rodrigues_coeffs(s: Var) -> tuple[Var, Var, Var]:
    (A, B, C), (dA, dB, dC) = geometry.rodrigues_coeffs(s.value)
    t = s.tape
    return (
        t.push(A, (s,), lambda g: (g * dA,)),
        t.push(B, (s,), lambda g: (g * dB,)),
        t.push(C, (s,), lambda g: (g * dC,)),
    )


# gradient checking ----------------------------------------------------------


@dataclass
class GradcheckReport:
    """Per-leaf maximum relative error and the number of probes used."""

    max_rel_error: dict[str, float]
    checked: dict[str, int]
    skipped: dict[str, int]

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def _same_signature(a, b) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(
    build: Callable[[Tape, dict], Var],
    leaves: dict[str, np.ndarray],
    h: float = 1e-5,
    floor: float = 1e-6,
    indices: dict[str, np.ndarray] | None = None,
) -> GradcheckReport:
    """Compare taped gradients with central finite differences.

    ``build(tape, vars)`` must construct the scalar loss from the leaf Vars.
    Relative error is ``|g_ad - g_fd| / max(|g_ad|, |g_fd|, floor)``. A probe
    is skipped when the branch record at ``x + h`` or ``x - h`` differs from
    the one at ``x``, i.e. when the perturbation crosses a non-differentiable
    point (mask flip, bilinear cell change, sign change, argmin change).
    ``indices`` optionally restricts which flat entries of a leaf are probed.
    """
    tape = Tape(record=True, track_branches=True)
    vars_ = {k: tape.var(np.array(v, dtype=np.float64)) for k, v in leaves.items()}
    loss = build(tape, vars_)
    tape.backward(loss, leaves=vars_.values())
    base_sig = tape.signature()

    def probe(name, flat_i, delta):
        vals = {k: np.array(v, dtype=np.float64) for k, v in leaves.items()}
        vals[name].flat[flat_i] += delta
        t = Tape(record=False, track_branches=True)
        out = build(t, {k: t.const(v) for k, v in vals.items()})
        return float(out.value), t.signature()

    worst, checked, skipped = {}, {}, {}
    for name, arr in leaves.items():
        ad = vars_[name].grad
        idx = range(np.size(arr)) if indices is None or name not in indices else indices[name]
        worst[name], checked[name], skipped[name] = 0.0, 0, 0
        for i in idx:
            fp, sp = probe(name, i, h)
            fm, sm = probe(name, i, -h)
            if not (_same_signature(sp, base_sig) and _same_signature(sm, base_sig)):
                skipped[name] += 1
                continue
            fd = (fp - fm) / (2 * h)
            g = float(ad.flat[i])
            err = abs(g - fd) / max(abs(g), abs(fd), floor)
            worst[name] = max(worst[name], err)
            checked[name] += 1
    return GradcheckReport(worst, checked, skipped)
