"""Tape-based reverse-mode differentiation and a finite-difference checker.

Operations run eagerly on numpy arrays. While a :class:`Tape` is active,
every operation with at least one input that requires a gradient is
appended to it together with a closure mapping the output cotangent to
input cotangents::

    w = Variable(np.ones((3, 4, 5)), requires_grad=True, name="w")
    with Tape() as tape:
        loss = ad_sum(cdgc_matrix(x, adj, w, 0.3))
    grads = backward(loss, tape)
    grads[w]  # same shape as w.data
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from cdgc import ops
from cdgc import tensor as tc
from cdgc.errors import DimensionError, NumericError

PASS_TOL = 1e-6
WARN_TOL = 1e-4
DEFAULT_H = 1e-5


class Variable:
    """A value in the computation, optionally a trainable leaf."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Variable{label}(shape={self.data.shape}, requires_grad={self.requires_grad})"


@dataclass
class _Record:
    out: Variable
    inputs: tuple
    vjp: Callable


class Tape:
    """Ordered record of operations; usable as a context manager."""

    _active: list["Tape"] = []

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self):
        Tape._active.append(self)
        return self

    def __exit__(self, *exc):
        Tape._active.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    @classmethod
    def current(cls) -> "Tape | None":
        return cls._active[-1] if cls._active else None

    def leaves(self) -> list[Variable]:
        produced = {id(r.out) for r in self.records}
        seen: dict[int, Variable] = {}
        for r in self.records:
            for v in r.inputs:
                if isinstance(v, Variable) and v.requires_grad and id(v) not in produced:
                    seen.setdefault(id(v), v)
        return list(seen.values())


class GradBundle(dict):
    """Gradients keyed by leaf :class:`Variable` (identity)."""

    def by_name(self) -> dict[str, np.ndarray]:
        return {v.name: g for v, g in self.items()}


def value(v) -> np.ndarray:
    return v.data if isinstance(v, Variable) else v


def _needs_grad(v) -> bool:
    return isinstance(v, Variable) and v.requires_grad


def record(out, inputs: Sequence, vjp: Callable) -> Variable:
    """Wrap ``out`` and, if a tape is active and any input needs a gradient, log the op.

    ``vjp(g)`` must return one cotangent (or ``None``) per entry of ``inputs``.
    """
    tape = Tape.current()
    needs = any(_needs_grad(v) for v in inputs)
    result = Variable(out, requires_grad=needs)
    if tape is not None and needs:
        tape.records.append(_Record(result, tuple(inputs), vjp))
    return result


def backward(loss: Variable, tape: Tape, wrt: Iterable[Variable] | None = None) -> GradBundle:
    """Reverse sweep over ``tape`` from the scalar ``loss``.

    Returns gradients for ``wrt`` (or for every leaf on the tape). Leaves
    the loss does not depend on get exact zeros.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None or not _needs_grad(inp):
                continue
            gi = np.asarray(gi, dtype=np.float64).reshape(inp.data.shape)
            key = id(inp)
            grads[key] = grads[key] + gi if key in grads else gi
    targets = tape.leaves() if wrt is None else list(wrt)
    out = GradBundle()
    for v in targets:
        g = grads.get(id(v))
        out[v] = np.zeros_like(v.data) if g is None else g
    return out


# -- elementary ops ---------------------------------------------------------------

def add(a, b) -> Variable:
    av, bv = value(a), value(b)
    if av.shape != bv.shape:
        raise DimensionError(f"add: shapes {av.shape} and {bv.shape} differ")
    return record(av + bv, (a, b), lambda g: (g, g))


def mul(a, b) -> Variable:
    """Element-wise product of equal shapes, or with a 0-d scalar."""
    av, bv = np.asarray(value(a)), np.asarray(value(b))
    if av.shape != bv.shape and bv.ndim != 0 and av.ndim != 0:
        raise DimensionError(f"mul: shapes {av.shape} and {bv.shape} differ")

    def vjp(g):
        ga = g * bv
        gb = g * av
        if av.ndim == 0:
            ga = np.sum(ga)
        if bv.ndim == 0:
            gb = np.sum(gb)
        return ga, gb

    return record(av * bv, (a, b), vjp)


def ad_sum(a) -> Variable:
    av = value(a)
    return record(np.sum(av), (a,), lambda g: (np.full(av.shape, float(g)),))


def relu(x) -> Variable:
    xv = value(x)
    return record(tc.relu(xv), (x,), lambda g: (tc.relu_backward(g, xv),))


def batchnorm(x, gamma, beta, eps: float = 1e-5, per_vertex: bool = False,
              mean=None, var=None) -> Variable:
    """Training-mode BN when ``mean``/``var`` are omitted.

    With fixed statistics (inference) the result is not recorded: there is
    no gradient path through frozen-statistics BN.
    """
    xv, gv = value(x), value(gamma)
    y, (xhat, inv_std) = tc.batchnorm_forward(xv, gv, value(beta), eps, per_vertex, mean, var)
    if mean is not None:
        return Variable(y)
    return record(y, (x, gamma, beta), lambda g: tc.batchnorm_backward(g, xhat, inv_std, gv, per_vertex))


# -- graph operators ----------------------------------------------------------------

def vanilla_gconv(x, adj, weights) -> Variable:
    xv, wv = tc.as_feature_map(value(x)), value(weights)
    y = ops.vanilla_gconv(xv, adj, ops.CdgcLayerParams(wv, 0.0))
    return record(y, (x, weights), lambda g: ops.vanilla_gconv_vjp(g, xv, adj, wv))


def cdgc_matrix(x, adj, weights, alpha) -> Variable:
    """``alpha`` is a float (fixed) or a scalar :class:`Variable` (learnable)."""
    xv, wv = tc.as_feature_map(value(x)), value(weights)
    a = float(value(alpha))
    ops.check_graph_input(xv, adj, wv)
    z = ops.cdgc_features(xv, adj, a)
    y = ops.mix_subsets(z, wv)

    def vjp(g):
        dx, dw, da = ops.cdgc_matrix_vjp(g, xv, adj, wv, a, z=z, need_alpha=_needs_grad(alpha))
        return dx, dw, np.asarray(da)

    return record(y, (x, weights, alpha), vjp)


def accelerated_cdgc(x0, weight, mask, alpha) -> Variable:
    xv, wv, mv = tc.as_feature_map(value(x0)), value(weight), value(mask)
    a = float(value(alpha))
    ops.check_shift_input(xv, wv, mv)
    d = ops.shift_difference(xv, a)
    e = tc.hadamard(d, mv)
    y = ops.pointwise(e, wv)

    def vjp(g):
        dx, dw, dm, da = ops.accelerated_cdgc_vjp(g, xv, wv, mv, a, d=d, e=e)
        return dx, dw, dm, np.asarray(da)

    return record(y, (x0, weight, mask, alpha), vjp)


def pointwise(x, weight) -> Variable:
    xv, wv = value(x), value(weight)
    if xv.shape[1] != wv.shape[0]:
        raise DimensionError(f"pointwise: input has {xv.shape[1]} channels, weight expects {wv.shape[0]}")
    return record(ops.pointwise(xv, wv), (x, weight), lambda g: ops.pointwise_vjp(g, xv, wv))


# -- finite differences --------------------------------------------------------------

def relative_error(analytic, numeric) -> np.ndarray:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def classify(error: float, pass_tol: float = PASS_TOL, warn_tol: float = WARN_TOL) -> str:
    if error < pass_tol:
        return "pass"
    if error < warn_tol:
        return "warn"
    return "fail"


@dataclass
class GradCheckReport:
    max_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    worst_param: str | None = None
    worst_index: tuple | None = None

    def status(self, pass_tol: float = PASS_TOL) -> str:
        return classify(self.max_error, pass_tol)


def finite_difference_check(f: Callable[[], Variable], params: Sequence[Variable],
                            h: float = DEFAULT_H) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` with central differences.

    ``f`` takes no arguments and reads the current values of ``params``;
    each coordinate is perturbed in place by ``+-h`` and restored.
    The error per coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    with Tape() as tape:
        loss = f()
    analytic = backward(loss, tape, params)
    report = GradCheckReport(0.0)
    for k, p in enumerate(params):
        name = p.name or f"param{k}"
        numeric = np.zeros_like(p.data)
        for coord in np.ndindex(p.data.shape):
            orig = p.data[coord]
            p.data[coord] = orig + h
            fp = float(f().data)
            p.data[coord] = orig - h
            fm = float(f().data)
            p.data[coord] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError(f"non-finite loss perturbing {name}{list(coord)}")
            numeric[coord] = (fp - fm) / (2.0 * h)
        err = relative_error(analytic[p], numeric)
        worst = float(err.max()) if err.size else 0.0
        report.per_param[name] = worst
        if worst >= report.max_error and err.size:
            report.max_error = worst
            report.worst_param = name
            report.worst_index = tuple(int(i) for i in np.unravel_index(int(err.argmax()), p.data.shape))
    return report
