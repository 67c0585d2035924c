"""Desk-scale Monte Carlo of the random-binning ISAC coding scheme.

Codebooks are drawn i.i.d. from the policy's generation laws. The encoder
selects a bin codeword using the eta-functions, the decoder scans all
codewords with an information-density threshold, and the receiver-side
estimator is the optimal symbolwise table.

The asymptotic thresholds of the scheme (spectral inf/sup rates and the
p-limsup distortion) are replaced by their single-letter values, which is
the natural surrogate for memoryless instances. Every report carries this
label in ``threshold_note``.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .estimator import optimal_estimator
from .model import IsacModel, Policy, check_policy, u_given_a
from .solver import evaluate_policy

MAX_CODEWORDS = 2**20
MAX_ENUM_BITS = 20
QUANT = 1e-11
FLOOR = -1e3  # stands in for log 0 inside exact sum laws
CMP_TOL = 1e-9
SURROGATE_NOTE = "thresholds use single-letter I and D values (memoryless surrogate)"


class ResourceError(ValueError):
    """Requested codebook exceeds the simulator's resource cap."""


class Estimate(NamedTuple):
    value: float
    stderr: float
    exact: bool


@dataclass
class SchemeConfig:
    model: IsacModel
    policy: Policy
    n: int
    rate_bits: float
    bin_rate_bits: float
    gamma: float
    trials: int = 1000
    seed: int = 0
    variant: str = "average"  # or "maximal"
    mc_samples: int = 4000
    threads: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("blocklength must be >= 1")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.variant not in ("average", "maximal"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.rate_bits < 0 or self.bin_rate_bits < 0:
            raise ValueError("rates must be non-negative")
        check_policy(self.model, self.policy)

    @property
    def messages(self):
        return max(1, int(math.floor(2.0 ** (self.n * self.rate_bits) + 1e-9)))

    @property
    def bin_size(self):
        return max(1, int(math.floor(2.0 ** (self.n * self.bin_rate_bits) + 1e-9)))


class TrialOutcome(NamedTuple):
    decoded_ok: bool
    distortion: float
    in_b: bool
    fallback: bool


@dataclass
class ExperimentReport:
    n: int
    variant: str
    trials: int
    messages: int
    bin_size: int
    error_rate: float
    error_stderr: float
    mean_distortion: float
    distortion_stderr: float
    bin_failure_rate: float
    fallback_rate: float
    distortion_cdf: tuple  # (sorted distinct values, cumulative fractions)
    d_target: float
    pi1: float
    pi2: float
    density_threshold: float
    distortion_threshold: float
    outcomes: list = field(repr=False, default_factory=list)
    threshold_note: str = SURROGATE_NOTE

    def tail_fraction(self, level):
        """Fraction of trials whose blockwise distortion exceeds ``level``."""
        d = np.array([o.distortion for o in self.outcomes])
        return float(np.mean(d > level + CMP_TOL))


def rates_inside(model, policy, gamma, margin=4.0):
    """(R, R') in bits with R = I(A,U;Y,S_d) - I(U;S_e|A) - margin*gamma, R' = I(U;S_e|A) + 2*gamma."""
    rep = evaluate_policy(model, policy)
    r = max(rep.i_auy - rep.i_use - margin * gamma, 0.0)
    return r / math.log(2), (rep.i_use + 2 * gamma) / math.log(2)


# -- single-letter tables --------------------------------------------------------

class _Tables:
    def __init__(self, cfg: SchemeConfig):
        m, p = cfg.model, cfg.policy
        self.cfg = cfg
        sz = m.sizes
        self.n_o = sz["Y"] * sz["S_d"]
        est = optimal_estimator(m)
        self.ghat = est.table
        k = m.state_kernel  # (A, Se, S, Sd)
        pse = m.p_se_given_a
        with np.errstate(invalid="ignore", divide="ignore"):
            self.p_s_sd = np.where(pse[:, :, None, None] > 0, k / pse[:, :, None, None], 0.0)
        self.pse = pse
        self.pu_a = u_given_a(m, p)  # (A, U)
        wy = m.p_y_given_xs  # (X, S, Y)
        # P(o | a, u, se) with o = (y, sd)
        po = np.einsum("uex,aesd,xsy->aueyd", p.p_x, self.p_s_sd, wy)
        self.po_ause = po.reshape(sz["A"], p.u_size, sz["S_e"], self.n_o)
        joint = np.einsum("a,ae,aeu,aueo->auo", p.p_a, pse, p.p_u, self.po_ause)
        pau = joint.sum(axis=2)
        po_m = joint.sum(axis=(0, 1))
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = np.log(joint) - np.log(pau[:, :, None]) - np.log(po_m[None, None, :])
        self.density = np.where(joint > 0, dens, -np.inf)  # i(a, u, o)
        self.joint_auo = joint
        rep = evaluate_policy(m, p)
        self.i_auy = rep.i_auy
        self.d_bar = rep.distortion
        # per-letter distortion law given (a, u, se): values d(s, g*(a, x, se, z))
        pz = m.p_z_given_xs  # (X, S, Z)
        ps = self.p_s_sd.sum(axis=3)  # (A, Se, S)
        dsel = m.distortion.T[self.ghat]  # (A, X, Se, Z, S)
        self.dist_law = {}
        for a in range(sz["A"]):
            for u in range(p.u_size):
                for e in range(sz["S_e"]):
                    w = np.einsum("x,s,xsz->xzs", p.p_x[u, e], ps[a, e], pz)
                    vals = dsel[a, :, e, :, :]
                    self.dist_law[a, u, e] = _compact(vals.ravel(), w.ravel())
        self.density_law = {}
        for a in range(sz["A"]):
            for u in range(p.u_size):
                for e in range(sz["S_e"]):
                    q = self.po_ause[a, u, e]
                    self.density_law[a, u, e] = _compact(np.maximum(self.density[a, u], FLOOR), q)
        self.joint_ause = np.einsum("a,ae,aeu->aue", p.p_a, pse, p.p_u)
        # cumulative tables for sampling
        self.cdf_a = np.cumsum(p.p_a)
        self.cdf_u_a = np.cumsum(self.pu_a, axis=-1)
        self.cdf_state = np.cumsum(k.reshape(sz["A"], -1), axis=-1)
        self.state_shape = k.shape[1:]
        self.cdf_x = np.cumsum(p.p_x, axis=-1)
        ch = m.channel_kernel
        self.cdf_yz = np.cumsum(ch.reshape(sz["X"], sz["S"], -1), axis=-1)
        self.yz_shape = ch.shape[2:]


def _compact(values, probs):
    mask = probs > 0
    v, p = np.asarray(values, float)[mask], np.asarray(probs, float)[mask]
    return v, p


def _merge(values, probs):
    keys = np.round(values / QUANT).astype(np.int64)
    uniq, inv = np.unique(keys, return_inverse=True)
    return uniq * QUANT, np.bincount(inv, weights=probs)


def _sum_law(laws_with_counts):
    """Exact law of a sum of independent letters, grouped by class counts."""
    vals, probs = np.zeros(1), np.ones(1)
    for (v, p), k in laws_with_counts:
        for _ in range(k):
            vals, probs = _merge((vals[:, None] + v[None, :]).ravel(), (probs[:, None] * p[None, :]).ravel())
    return vals, probs


def _sample(cdf_rows, rng):
    r = rng.random(cdf_rows.shape[0])
    idx = (r[:, None] >= cdf_rows).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


class _Scheme:
    """Shared computations with memoized eta values keyed by letter-class counts."""

    def __init__(self, cfg: SchemeConfig):
        self.cfg = cfg
        self.t = _Tables(cfg)
        n = cfg.n
        self.dens_thr = n * (self.t.i_auy - cfg.gamma)
        self.dist_thr = n * (self.t.d_bar + cfg.gamma)
        self.exact = n * math.log2(max(self.t.n_o, 1)) <= MAX_ENUM_BITS if self.t.n_o > 1 else True
        self._eta1 = {}
        self._eta2 = {}
        self.pi1 = self._pi(self.t.density, self.t.joint_auo, below=True)
        self.pi2 = self._pi_dist()

    # exact block-level tail probabilities over i.i.d. letters
    def _pi(self, values, probs, below):
        v, p = _compact(np.maximum(values, FLOOR).ravel(), probs.ravel())
        vals, pr = _sum_law([((v, p), self.cfg.n)])
        return float(pr[vals < self.dens_thr - CMP_TOL].sum())

    def _pi_dist(self):
        t = self.t
        vs, ps = [], []
        for (a, u, e), (v, p) in t.dist_law.items():
            w = t.joint_ause[a, u, e]
            if w > 0:
                vs.append(v)
                ps.append(p * w)
        v, p = _compact(np.concatenate(vs), np.concatenate(ps))
        vals, pr = _sum_law([((v, p), self.cfg.n)])
        return float(pr[vals > self.dist_thr + CMP_TOL].sum())

    def _classes(self, u_block, a_block, se_block):
        return tuple(sorted(Counter(zip(a_block.tolist(), u_block.tolist(), se_block.tolist())).items()))

    def eta1(self, u_block, a_block, se_block, rng=None):
        key = self._classes(u_block, a_block, se_block)
        if self.exact:
            if key not in self._eta1:
                vals, pr = _sum_law([(self.t.density_law[c], k) for c, k in key])
                self._eta1[key] = float(pr[vals < self.dens_thr - CMP_TOL].sum())
            return Estimate(self._eta1[key], 0.0, True)
        return self._eta1_mc(u_block, a_block, se_block, rng)

    def _eta1_mc(self, u_block, a_block, se_block, rng):
        rng = rng if rng is not None else np.random.default_rng([self.cfg.seed, 1])
        t, ns = self.t, self.cfg.mc_samples
        cdf = np.cumsum(t.po_ause[a_block, u_block, se_block], axis=-1)  # (n, O)
        r = rng.random((ns, len(a_block)))
        o = np.minimum((r[..., None] >= cdf[None]).sum(axis=-1), t.n_o - 1)
        dens = t.density[a_block[None, :], u_block[None, :], o].sum(axis=1)
        hit = dens < self.dens_thr - CMP_TOL
        p = float(hit.mean())
        return Estimate(p, math.sqrt(max(p * (1 - p), 0.0) / ns), False)

    def eta2_average(self, u_block, a_block, se_block):
        # per-symbol normalized expected distortion given (u, a, s_e)
        t = self.t
        e = np.array([np.dot(*t.dist_law[c][::-1]) for c in zip(a_block, u_block, se_block)])
        return Estimate(float(e.mean()), 0.0, True)

    def eta2_maximal(self, u_block, a_block, se_block, rng=None):
        key = self._classes(u_block, a_block, se_block)
        if self.cfg.n <= 16:
            if key not in self._eta2:
                vals, pr = _sum_law([(self.t.dist_law[c], k) for c, k in key])
                self._eta2[key] = float(pr[vals > self.dist_thr + CMP_TOL].sum())
            return Estimate(self._eta2[key], 0.0, True)
        rng = rng if rng is not None else np.random.default_rng([self.cfg.seed, 2])
        ns = self.cfg.mc_samples
        tot = np.zeros(ns)
        for c in zip(a_block, u_block, se_block):
            v, p = self.t.dist_law[c]
            tot += v[np.minimum(np.searchsorted(np.cumsum(p), rng.random(ns), side="right"), len(v) - 1)]
        hit = tot > self.dist_thr + CMP_TOL
        q = float(hit.mean())
        return Estimate(q, math.sqrt(q * (1 - q) / ns), False)

    # -- one trial ---------------------------------------------------------------
    def trial(self, k):
        cfg, t = self.cfg, self.t
        rng = np.random.default_rng([cfg.seed, k])
        n, M, L = cfg.n, cfg.messages, cfg.bin_size
        a_cb = _sample(np.broadcast_to(t.cdf_a, (M * n, len(t.cdf_a))), rng).reshape(M, n)
        cdf_u = np.broadcast_to(t.cdf_u_a[a_cb][:, None], (M, L, n, t.cdf_u_a.shape[1]))
        u_cb = _sample(cdf_u.reshape(M * L * n, -1), rng).reshape(M, L, n)
        msg = int(rng.integers(M))
        a = a_cb[msg]
        st = _sample(t.cdf_state[a], rng)
        se, s, sd = np.unravel_index(st, t.state_shape)
        # encoder
        eta1 = np.array([self.eta1(u_cb[msg, l], a, se, rng).value for l in range(L)])
        in_b = eta1 <= math.sqrt(self.pi1) + 1e-15
        fallback = False
        if cfg.variant == "average":
            eta2 = np.array([self.eta2_average(u_cb[msg, l], a, se).value for l in range(L)])
            pool = np.flatnonzero(in_b)
            if len(pool) == 0:
                pool = np.arange(L)
                fallback = True
            best = eta2[pool].min()
            l_sel = int(pool[np.argmax(eta2[pool] <= best + 1e-12)])
        else:
            eta2 = np.array([self.eta2_maximal(u_cb[msg, l], a, se, rng).value for l in range(L)])
            in_b &= eta2 <= math.sqrt(self.pi2) + 1e-15
            pool = np.flatnonzero(in_b)
            if len(pool):
                l_sel = int(pool[0])
            else:
                l_sel, fallback = 0, True
        u = u_cb[msg, l_sel]
        x = _sample(t.cdf_x[u, se], rng)
        yz = _sample(t.cdf_yz[x, s], rng)
        y, z = np.unravel_index(yz, t.yz_shape)
        o = y * cfg.model.sizes["S_d"] + sd
        # decoder: density of every codeword against the received block
        dens = t.density[a_cb[:, None, :], u_cb, o[None, None, :]].sum(axis=2)
        hits = np.flatnonzero((dens >= self.dens_thr - CMP_TOL).any(axis=1))
        ok = len(hits) == 1 and int(hits[0]) == msg
        s_hat = t.ghat[a, x, se, z]
        dist = float(cfg.model.distortion[s, s_hat].mean())
        return TrialOutcome(ok, dist, bool(in_b[l_sel]), fallback)


def eta1(config: SchemeConfig, u_block, a_block, se_block, rng=None) -> Estimate:
    """Probability that the decoding density test fails given (u, a, s_e)."""
    return _Scheme(config).eta1(*(np.asarray(b, dtype=int) for b in (u_block, a_block, se_block)), rng=rng)


def eta2(config: SchemeConfig, u_block, a_block, se_block, rng=None) -> Estimate:
    """Average variant: expected per-symbol distortion. Maximal variant: excess probability."""
    sch = _Scheme(config)
    blocks = [np.asarray(b, dtype=int) for b in (u_block, a_block, se_block)]
    if config.variant == "average":
        return sch.eta2_average(*blocks)
    return sch.eta2_maximal(*blocks, rng=rng)


def eta1_monte_carlo(config: SchemeConfig, u_block, a_block, se_block, samples=20000, seed=0) -> Estimate:
    """Monte Carlo estimate of eta1 regardless of block size (used for cross-checks)."""
    sch = _Scheme(config)
    sch.cfg = SchemeConfig(**{**config.__dict__, "mc_samples": samples})
    blocks = [np.asarray(b, dtype=int) for b in (u_block, a_block, se_block)]
    return sch._eta1_mc(*blocks, np.random.default_rng(seed))


def check_resources(config: SchemeConfig):
    total = config.messages * config.bin_size
    if total > MAX_CODEWORDS:
        raise ResourceError(f"{config.messages} messages x {config.bin_size} codewords exceeds the 2^20 cap")


def run_experiment(config: SchemeConfig, d_target: float | None = None) -> ExperimentReport:
    """Simulate ``config.trials`` independent codebook/message/state draws."""
    check_resources(config)
    sch = _Scheme(config)
    if config.threads and config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            outcomes = list(pool.map(sch.trial, range(config.trials)))
    else:
        outcomes = [sch.trial(k) for k in range(config.trials)]
    T = len(outcomes)
    err = np.array([not o.decoded_ok for o in outcomes], dtype=float)
    d = np.array([o.distortion for o in outcomes])
    vals, counts = np.unique(d, return_counts=True)
    return ExperimentReport(
        n=config.n, variant=config.variant, trials=T,
        messages=config.messages, bin_size=config.bin_size,
        error_rate=float(err.mean()), error_stderr=float(err.std(ddof=1) / math.sqrt(T)) if T > 1 else 0.0,
        mean_distortion=float(d.mean()), distortion_stderr=float(d.std(ddof=1) / math.sqrt(T)) if T > 1 else 0.0,
        bin_failure_rate=float(np.mean([not o.in_b for o in outcomes])),
        fallback_rate=float(np.mean([o.fallback for o in outcomes])),
        distortion_cdf=(vals, np.cumsum(counts) / T),
        d_target=sch.t.d_bar if d_target is None else float(d_target),
        pi1=sch.pi1, pi2=sch.pi2,
        density_threshold=sch.dens_thr / config.n, distortion_threshold=sch.dist_thr / config.n,
        outcomes=outcomes,
    )


class TailCheck(NamedTuple):
    passed: bool
    tails: tuple
    margin: float
    monotone: bool


def distortion_tail_check(reports, d_target, gamma, ceiling=0.1) -> TailCheck:
    """Tail fraction above d_target + gamma must end below ``ceiling`` and decrease along the sweep."""
    if isinstance(reports, ExperimentReport):
        reports = [reports]
    reports = sorted(reports, key=lambda r: r.n)
    tails = tuple(r.tail_fraction(d_target + gamma) for r in reports)
    monotone = all(b < a or (a == 0 and b == 0) for a, b in zip(tails, tails[1:]))
    margin = ceiling - tails[-1]
    return TailCheck(bool(margin >= 0 and monotone), tails, float(margin), bool(monotone))


def wilson_interval(k, n, z=1.959963984540054):
    """95% Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)
