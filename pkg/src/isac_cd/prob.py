"""Finite-alphabet probability tables and information measures.

All information quantities are in nats. Tables are dense numpy arrays whose
axes carry names, so callers can marginalize and condition by name instead of
by position.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

MASS_TOL = 1e-10
ROW_TOL = 1e-12
MAX_ENTRIES = 10**8


class AxisError(ValueError):
    """Unknown, duplicated or overlapping axis names."""


class StochasticError(ValueError):
    """A kernel row does not sum to one or has negative entries."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


def _check_entries(shape):
    size = int(np.prod(shape, dtype=np.int64)) if len(shape) else 1
    if size > MAX_ENTRIES:
        raise MemoryError(f"table with {size} entries exceeds the {MAX_ENTRIES} entry cap")


def check_stochastic(table, n_out, tol=ROW_TOL, name="kernel"):
    """Raise StochasticError naming the first bad row of a kernel.

    The last ``n_out`` axes of ``table`` are the output axes; every other axis
    indexes the conditioning tuple.
    """
    table = np.asarray(table, dtype=float)
    if np.any(~np.isfinite(table)):
        idx = tuple(int(i) for i in np.argwhere(~np.isfinite(table))[0])
        raise StochasticError(f"{name}: non-finite entry at {idx}", row=idx)
    if np.any(table < 0):
        idx = tuple(int(i) for i in np.argwhere(table < 0)[0])
        raise StochasticError(f"{name}: negative entry at {idx}", row=idx[: table.ndim - n_out])
    out_axes = tuple(range(table.ndim - n_out, table.ndim))
    sums = table.sum(axis=out_axes) if n_out else table
    bad = np.abs(sums - 1.0) > tol
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0]) if np.ndim(sums) else ()
        total = float(sums[idx]) if idx else float(sums)
        raise StochasticError(f"{name}: row {idx} sums to {total!r}, not 1", row=idx)


@dataclass(frozen=True)
class JointDist:
    """Dense joint pmf over named finite axes."""

    axes: tuple
    probs: np.ndarray

    def __post_init__(self):
        axes = tuple(self.axes)
        probs = np.asarray(self.probs, dtype=float)
        if len(set(axes)) != len(axes):
            raise AxisError(f"duplicate axis names in {axes}")
        if probs.ndim != len(axes):
            raise AxisError(f"{len(axes)} axis names for a {probs.ndim}-d table")
        _check_entries(probs.shape)
        if np.any(probs < 0):
            raise StochasticError("joint has negative entries")
        if abs(probs.sum() - 1.0) > MASS_TOL:
            raise StochasticError(f"joint mass {probs.sum()!r} is not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "probs", probs)

    @property
    def sizes(self):
        return dict(zip(self.axes, self.probs.shape))

    def index(self, axis):
        try:
            return self.axes.index(axis)
        except ValueError:
            raise AxisError(f"unknown axis {axis!r}; have {self.axes}") from None

    def reorder(self, axes):
        axes = tuple(axes)
        if sorted(axes) != sorted(self.axes):
            raise AxisError(f"{axes} is not a permutation of {self.axes}")
        perm = [self.index(a) for a in axes]
        return JointDist(axes, np.transpose(self.probs, perm))


def _as_axes(axes):
    if isinstance(axes, str):
        return (axes,)
    return tuple(axes)


def joint_from_factors(factors, sizes=None):
    """Multiply conditional tables into a joint distribution.

    ``factors`` is a sequence of ``(table, cond_axes, out_axes)``. Each table has
    shape ``cond sizes + out sizes`` and must be row-stochastic over its output
    axes. Every axis must be produced exactly once, and a factor may only
    condition on axes produced by earlier factors. The result's axes are in
    order of production.
    """
    produced = []
    subscripts = []
    operands = []
    letters = {}
    shape_of = dict(sizes or {})

    def letter(ax):
        if ax not in letters:
            if len(letters) >= 52:
                raise AxisError("too many axes")
            letters[ax] = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"[len(letters)]
        return letters[ax]

    for k, (table, cond, out) in enumerate(factors):
        cond, out = _as_axes(cond), _as_axes(out)
        table = np.asarray(table, dtype=float)
        if table.ndim != len(cond) + len(out):
            raise AxisError(
                f"factor {k}: table has {table.ndim} dims but wiring names {len(cond) + len(out)} axes"
            )
        for ax in cond:
            if ax not in produced:
                raise AxisError(f"factor {k} conditions on {ax!r} before it is produced")
        for ax in out:
            if ax in produced:
                raise AxisError(f"axis {ax!r} produced twice (factor {k})")
        for ax, n in zip(cond + out, table.shape):
            if shape_of.setdefault(ax, n) != n:
                raise AxisError(f"factor {k}: axis {ax!r} has size {n}, expected {shape_of[ax]}")
        check_stochastic(table, len(out), name=f"factor {k}")
        produced.extend(out)
        subscripts.append("".join(letter(a) for a in cond + out))
        operands.append(table)

    if sizes is not None:
        missing = set(sizes) - set(produced)
        if missing:
            raise AxisError(f"axes never produced: {sorted(missing)}")
    _check_entries(tuple(shape_of[a] for a in produced))
    expr = ",".join(subscripts) + "->" + "".join(letters[a] for a in produced)
    probs = np.einsum(expr, *operands, optimize=True)
    return JointDist(tuple(produced), probs)


def marginal(j: JointDist, axes) -> JointDist:
    """Sum out every axis not in ``axes``; result axes follow ``axes`` order."""
    axes = _as_axes(axes)
    if not axes:
        raise AxisError("marginal needs at least one axis")
    if len(set(axes)) != len(axes):
        raise AxisError(f"duplicate axes {axes}")
    keep = [j.index(a) for a in axes]
    drop = tuple(i for i in range(len(j.axes)) if i not in keep)
    p = j.probs.sum(axis=drop) if drop else j.probs
    kept_order = [a for a in j.axes if a in axes]
    perm = [kept_order.index(a) for a in axes]
    return JointDist(axes, np.transpose(p, perm))


def _xlogx_ratio(p, q):
    # sum p*log(p/q), 0*log(0/q) = 0
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def entropy(j: JointDist, axes=None) -> float:
    p = j.probs if axes is None else marginal(j, axes).probs
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def _split(j, axes_a, axes_b, axes_c=()):
    a, b, c = _as_axes(axes_a), _as_axes(axes_b), _as_axes(axes_c)
    for ax in a + b + c:
        j.index(ax)
    if set(a) & set(b):
        raise AxisError(f"overlapping axis sets {a} and {b}")
    # conditioning on an axis makes it constant inside the slice
    a = tuple(x for x in a if x not in c)
    b = tuple(x for x in b if x not in c)
    return a, b, c


def mutual_information(j: JointDist, axes_a, axes_b) -> float:
    """I(A;B) in nats."""
    a, b, _ = _split(j, axes_a, axes_b)
    if not a or not b:
        raise AxisError("both axis sets must be non-empty")
    pab = marginal(j, a + b).probs
    pa = pab.sum(axis=tuple(range(len(a), len(a) + len(b))), keepdims=True)
    pb = pab.sum(axis=tuple(range(len(a))), keepdims=True)
    return _xlogx_ratio(pab, np.broadcast_to(pa * pb, pab.shape))


def conditional_mutual_information(j: JointDist, axes_a, axes_b, axes_c) -> float:
    """I(A;B|C) in nats. Axes of A or B that also appear in C are dropped."""
    a, b, c = _split(j, axes_a, axes_b, axes_c)
    if not c:
        return mutual_information(j, a, b) if a and b else 0.0
    if not a or not b:
        return 0.0
    na, nb, nc = len(a), len(b), len(c)
    pcab = marginal(j, c + a + b).probs
    pc = pcab.sum(axis=tuple(range(nc, nc + na + nb)), keepdims=True)
    pca = pcab.sum(axis=tuple(range(nc + na, nc + na + nb)), keepdims=True)
    pcb = pcab.sum(axis=tuple(range(nc, nc + na)), keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.broadcast_to(pca * pcb, pcab.shape) / np.broadcast_to(pc, pcab.shape)
    return _xlogx_ratio(pcab, q)


def density_table(j: JointDist, axes_a, axes_b, axes_c=()):
    """Per-outcome information density log P(a,b|c) / (P(a|c) P(b|c)).

    Returns ``(table, axes)`` where ``axes = c + a + b`` and entries with zero
    joint probability are ``nan``.
    """
    a, b, c = _split(j, axes_a, axes_b, axes_c)
    axes = c + a + b
    p = marginal(j, axes).probs
    nc, na, nb = len(c), len(a), len(b)
    pc = p.sum(axis=tuple(range(nc, nc + na + nb)), keepdims=True)
    pca = p.sum(axis=tuple(range(nc + na, nc + na + nb)), keepdims=True)
    pcb = p.sum(axis=tuple(range(nc, nc + na)), keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.log(p) + np.log(pc) - np.log(pca) - np.log(pcb)
    dens = np.where(p > 0, dens, np.nan)
    return dens, axes


def information_density(j: JointDist, axes_a, axes_b, outcome: Mapping, axes_c=()) -> float:
    """Single-outcome log P(b|a)/P(b) (conditioned on C when given).

    ``outcome`` maps axis name to index and must cover A, B and C.
    """
    table, axes = density_table(j, axes_a, axes_b, axes_c)
    try:
        idx = tuple(int(outcome[ax]) for ax in axes)
    except KeyError as exc:
        raise AxisError(f"outcome misses axis {exc.args[0]!r}") from None
    value = table[idx]
    if np.isnan(value):
        raise ValueError(f"outcome {dict(zip(axes, idx))} has zero probability")
    return float(value)


def product_joint(dists: Sequence[np.ndarray], axes: Iterable[str]) -> JointDist:
    """Independent product of 1-d pmfs."""
    axes = tuple(axes)
    factors = [(np.asarray(p, dtype=float), (), (ax,)) for p, ax in zip(dists, axes)]
    return joint_from_factors(factors)


def binary_entropy(p: float) -> float:
    """h(p) in nats."""
    if p <= 0 or p >= 1:
        return 0.0
    return float(-p * np.log(p) - (1 - p) * np.log1p(-p))
