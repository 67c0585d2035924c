"""Empirical spectral inf/sup information rates for i.i.d. and mixed processes.

Each draw is one n-block. Its normalized information density is computed
exactly from the known single-letter law(s). For a mixture the component is
drawn once per block and the density uses the mixture laws of whole blocks.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from .model import Policy, assemble_joint
from .prob import AxisError, JointDist, marginal, conditional_mutual_information, mutual_information
from .solver import MixedModel

DEFAULT_DELTA = 0.005
SENSITIVITY_DELTAS = (0.001, 0.01)
MIN_SAMPLES = 1000
_CHUNK = 512


@dataclass(frozen=True)
class ProcessModel:
    """i.i.d. process (one component) or a block-level finite mixture."""

    components: tuple  # ((weight, JointDist), ...)
    axes_a: tuple
    axes_b: tuple
    axes_c: tuple = ()
    _cells: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        comps = tuple((float(w), j) for w, j in self.components)
        if not comps:
            raise ValueError("process needs at least one component")
        ws = np.array([w for w, _ in comps])
        if np.any(ws <= 0) or abs(ws.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights {ws.tolist()} must be positive and sum to 1")
        a, b, c = (tuple([x] if isinstance(x, str) else x) for x in (self.axes_a, self.axes_b, self.axes_c))
        if not a or not b:
            raise AxisError("axes_a and axes_b must be non-empty")
        if set(a) & set(b) or set(c) & (set(a) | set(b)):
            raise AxisError(f"axis sets {a}, {b}, {c} overlap")
        first = comps[0][1]
        for _, j in comps[1:]:
            if set(j.axes) != set(first.axes) or any(j.sizes[x] != first.sizes[x] for x in j.axes):
                raise AxisError("mixture components must share axis names and sizes")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "axes_a", a)
        object.__setattr__(self, "axes_b", b)
        object.__setattr__(self, "axes_c", c)
        object.__setattr__(self, "_cells", _cell_tables(comps, a, b, c))

    @classmethod
    def iid(cls, joint: JointDist, axes_a, axes_b, axes_c=()):
        return cls(((1.0, joint),), axes_a, axes_b, axes_c)

    @classmethod
    def mixture(cls, pairs: Sequence, axes_a, axes_b, axes_c=()):
        return cls(tuple(pairs), axes_a, axes_b, axes_c)

    @property
    def is_iid(self):
        return len(self.components) == 1

    @property
    def weights(self):
        return np.array([w for w, _ in self.components])

    def component_mi(self):
        """Single-letter (conditional) mutual information of every component."""
        out = []
        for _, j in self.components:
            if self.axes_c:
                out.append(conditional_mutual_information(j, self.axes_a, self.axes_b, self.axes_c))
            else:
                out.append(mutual_information(j, self.axes_a, self.axes_b))
        return np.array(out)


def _cell_tables(comps, a, b, c):
    # flatten the (c, a, b) marginal into cells; per component keep log-probs
    # of the joint, c, (c,a) and (c,b) evaluated at every cell
    axes = c + a + b
    nc, na = len(c), len(a)
    logs = {"j": [], "c": [], "ca": [], "cb": []}
    cdfs = []
    for _, joint in comps:
        p = marginal(joint, axes).probs
        pc = p.sum(axis=tuple(range(nc, p.ndim)), keepdims=True)
        pca = p.sum(axis=tuple(range(nc + na, p.ndim)), keepdims=True)
        pcb = p.sum(axis=tuple(range(nc, nc + na)), keepdims=True)
        for key, q in (("j", p), ("c", pc), ("ca", pca), ("cb", pcb)):
            logs[key].append(np.broadcast_to(q, p.shape).ravel())
        cdf = np.cumsum(p.ravel())
        cdfs.append(cdf / cdf[-1])
    tables = {k: np.array(v) for k, v in logs.items()}  # (K components, cells)
    cell_density = None
    if len(comps) == 1:
        # single-letter log ratio per cell; ratios that equal 1 up to round-off are
        # snapped so independent axes give exactly zero
        j, pc, pca, pcb = (tables[k][0] for k in ("j", "c", "ca", "cb"))
        num, den = j * pc, pca * pcb
        with np.errstate(divide="ignore", invalid="ignore"):
            cell_density = np.where(j > 0, np.log(num) - np.log(den), 0.0)
        cell_density[(j > 0) & (np.abs(num - den) <= 8 * np.finfo(float).eps * num)] = 0.0
    return {"logs": tables, "cdfs": np.array(cdfs), "shape": p.shape, "cell_density": cell_density}


def _block_logprob(counts, probs):
    # counts (draws, cells), probs (K, cells) -> (draws, K) log of the product law
    zero = probs <= 0
    with np.errstate(divide="ignore"):
        lp = np.where(zero, 0.0, np.log(np.where(zero, 1.0, probs)))
    out = counts @ lp.T
    impossible = (counts @ zero.T.astype(float)) > 0
    out[impossible] = -np.inf
    return out


def _densities_from_counts(process: ProcessModel, counts, n):
    if process._cells["cell_density"] is not None:
        return counts @ process._cells["cell_density"] / n
    tabs = process._cells["logs"]
    logw = np.log(process.weights)
    terms = {k: logsumexp(_block_logprob(counts, v) + logw, axis=1) for k, v in tabs.items()}
    return (terms["j"] + terms["c"] - terms["ca"] - terms["cb"]) / n


def _draw_counts(process: ProcessModel, n, seed, indices):
    cdfs = process._cells["cdfs"]
    k_count, cells = cdfs.shape
    counts = np.zeros((len(indices), cells))
    w_cdf = np.cumsum(process.weights)
    for row, i in enumerate(indices):
        rng = np.random.default_rng([seed, int(i)])
        k = 0 if k_count == 1 else min(int(np.searchsorted(w_cdf, rng.random(), side="right")), k_count - 1)
        draw = np.minimum(np.searchsorted(cdfs[k], rng.random(n), side="right"), cells - 1)
        counts[row] = np.bincount(draw, minlength=cells)
    return counts


def sample_density(process: ProcessModel, n: int, rng) -> float:
    """One normalized block information density (nats per symbol)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cdfs = process._cells["cdfs"]
    cells = cdfs.shape[1]
    k = 0
    if not process.is_iid:
        k = min(int(np.searchsorted(np.cumsum(process.weights), rng.random(), side="right")), len(cdfs) - 1)
    draw = np.minimum(np.searchsorted(cdfs[k], rng.random(n), side="right"), cells - 1)
    counts = np.bincount(draw, minlength=cells)[None, :].astype(float)
    return float(_densities_from_counts(process, counts, n)[0])


def sample_densities(process: ProcessModel, n: int, samples: int, seed: int = 0, threads=None) -> np.ndarray:
    """``samples`` block densities; draw i uses the stream seeded by (seed, i)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    chunks = [range(s, min(s + _CHUNK, samples)) for s in range(0, samples, _CHUNK)]

    def work(idx):
        return _densities_from_counts(process, _draw_counts(process, n, seed, idx), n)

    threads = threads or 1
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, os.cpu_count() or 1)) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    return np.concatenate(parts) if parts else np.zeros(0)


class SpectralEstimate(NamedTuple):
    inf_rate: float
    sup_rate: float
    n: int
    samples: int
    delta: float
    mean: float
    stderr: float
    sensitivity: dict  # delta -> (inf_rate, sup_rate)


def _quantiles(d, delta):
    lo, hi = np.quantile(d, [delta, 1.0 - delta])
    return float(lo), float(hi)


def estimate_spectral_rates(process: ProcessModel, n: int, samples: int = 10000,
                            delta: float = DEFAULT_DELTA, seed: int = 0, threads=None,
                            return_samples=False):
    """Quantile surrogates of the p-liminf / p-limsup of the normalized density.

    inf_rate is the ``delta`` quantile and sup_rate the ``1 - delta`` quantile.
    With ``return_samples`` the raw densities are returned alongside.
    """
    if not 0 < delta < 0.5:
        raise ValueError(f"delta must lie in (0, 0.5), got {delta}")
    if samples < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {samples}")
    d = sample_densities(process, n, samples, seed, threads)
    lo, hi = _quantiles(d, delta)
    sens = {dl: _quantiles(d, dl) for dl in SENSITIVITY_DELTAS}
    est = SpectralEstimate(lo, hi, n, samples, delta, float(d.mean()),
                           float(d.std(ddof=1) / np.sqrt(samples)), sens)
    return (est, d) if return_samples else est


class ConsistencyReport(NamedTuple):
    passed: bool
    inf_rate: float
    sup_rate: float
    mi_min: float
    mi_max: float
    inf_margin: float  # tol - |inf_rate - mi_min|
    sup_margin: float
    component_mi: np.ndarray  # (2, 2) I(A,U;Y,S_d) per (state, channel) component
    estimate: SpectralEstimate


def mixed_process(mixed: MixedModel, policy: Policy) -> ProcessModel:
    """Block mixture of the four (state i, channel j) joints with weights alpha_i beta_j."""
    pairs = []
    for i in range(2):
        for j in range(2):
            w = mixed.alpha[i] * mixed.beta[j]
            if w > 0:
                pairs.append((w, assemble_joint(mixed.component(i, j), policy)))
    return ProcessModel.mixture(pairs, ("A", "U"), ("Y", "S_d"))


def mixed_rate_consistency(mixed: MixedModel, policy: Policy, n: int, samples: int = 10000,
                           seed: int = 0, delta: float = DEFAULT_DELTA, tol: float = 0.02,
                           threads=None) -> ConsistencyReport:
    """Check inf ~ min and sup ~ max of the component I(A,U;Y,S_d) values.

    Only components with positive weight take part in the min and max.
    """
    proc = mixed_process(mixed, policy)
    est = estimate_spectral_rates(proc, n, samples, delta, seed, threads)
    mis = np.full((2, 2), np.nan)
    for i in range(2):
        for j in range(2):
            mis[i, j] = mutual_information(assemble_joint(mixed.component(i, j), policy),
                                           ("A", "U"), ("Y", "S_d"))
    active = np.outer(mixed.alpha, mixed.beta) > 0
    lo, hi = float(mis[active].min()), float(mis[active].max())
    m_inf = tol - abs(est.inf_rate - lo)
    m_sup = tol - abs(est.sup_rate - hi)
    return ConsistencyReport(bool(m_inf >= 0 and m_sup >= 0), est.inf_rate, est.sup_rate,
                             lo, hi, float(m_inf), float(m_sup), mis, est)


def binary_symmetric_joint(p: float, p_x: float = 0.5) -> JointDist:
    """Joint of (X, Y) for a BSC(p) with P(X=1) = p_x."""
    px = np.array([1 - p_x, p_x])
    w = np.array([[1 - p, p], [p, 1 - p]])
    return JointDist(("X", "Y"), px[:, None] * w)


def binary_erasure_joint(eps: float) -> JointDist:
    """Joint of (X, Y) for a BEC(eps) with uniform input; Y = 2 is the erasure."""
    w = np.array([[1 - eps, 0.0, eps], [0.0, 1 - eps, eps]])
    return JointDist(("X", "Y"), 0.5 * w)
