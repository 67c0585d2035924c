"""Single-letter capacity-distortion solvers.

The objective for a policy is I(A,U; Y,S_d) - I(U; S_e | A) and the distortion
is the expected cost of the optimal symbolwise estimator. Two optimizers are
provided: certified enumeration of deterministic kernels over a simplex grid
for P_A, and multi-start exponentiated-gradient ascent on the Lagrangian.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .estimator import optimal_estimator, weighted_cost
from .model import IsacModel, ModelError, Policy, check_policy

FEAS_TOL = 1e-9


class InfeasibleError(ValueError):
    """No policy meets the distortion constraint."""

    def __init__(self, message, d_min=None):
        super().__init__(message)
        self.d_min = d_min


class ObjectiveReport(NamedTuple):
    i_auy: float
    i_use: float
    objective: float
    distortion: float
    i_uy: float


@dataclass
class SolverOptions:
    """Optimizer settings; ``u_size=None`` means |X|*|S_e| + 1."""

    u_size: int | None = None
    mode: str = "alternating"
    restarts: int = 32
    iterations: int = 400
    seed: int = 0
    grid_step: float = 0.05
    max_policies: int = 10**6
    lambda_iters: int = 50
    threads: int | None = None


@dataclass
class CapacityResult:
    capacity: float
    policy: Policy
    report: ObjectiveReport
    feasible: bool = True
    mode: str = "alternating"
    restarts_used: int = 0
    lam: float = 0.0
    certified: bool = False


@dataclass
class CDCurve:
    points: list = field(default_factory=list)  # (D, C, Policy)

    @property
    def d(self):
        return np.array([p[0] for p in self.points])

    @property
    def c(self):
        return np.array([p[1] for p in self.points])


def default_u_size(model: IsacModel) -> int:
    s = model.sizes
    return s["X"] * s["S_e"] + 1


# -- core evaluation ----------------------------------------------------------

class _Ctx:
    """Model tables reused across objective evaluations."""

    def __init__(self, model: IsacModel):
        s = model.sizes
        self.model = model
        self.A, self.Se, self.X = s["A"], s["S_e"], s["X"]
        # G[a, se, x, o] = sum_s P(se, s, sd | a) P(y | x, s), with o = (y, sd)
        g = np.einsum("aesd,xsy->aexyd", model.state_kernel, model.p_y_given_xs)
        self.G = g.reshape(self.A, self.Se, self.X, -1)
        self.pse = model.p_se_given_a
        est = optimal_estimator(model)
        self.table = est.table
        self.dmap = est.distortion_map
        self.e = weighted_cost(model, est.table)  # (A, X, Se), includes P(se|a)
        self.e_aex = np.ascontiguousarray(np.swapaxes(self.e, 1, 2))


def _chain(p_a, p_u, p_x):
    # Q[b, a, e, u, x] = P(a) P(u | a, e) P(x | u, e)
    return (p_a[:, :, None, None] * p_u)[..., None] * np.swapaxes(p_x, 1, 2)[:, None]


def _xlogy_sum(p, logratio, axes):
    return np.where(p > 0, p * logratio, 0.0).sum(axis=axes)


def _safe_log(p):
    with np.errstate(divide="ignore"):
        return np.log(p)


def _terms(ctx, p_a, p_u, p_x):
    """Batched I(A,U;O), I(U;S_e|A), I(U;O), distortion and densities."""
    with np.errstate(invalid="ignore"):
        return _terms_inner(ctx, p_a, p_u, p_x)


def _terms_inner(ctx, p_a, p_u, p_x):
    Q = _chain(p_a, p_u, p_x)
    J = np.einsum("baeux,aexo->bauo", Q, ctx.G)
    Jau = J.sum(axis=3, keepdims=True)
    Jo = J.sum(axis=(1, 2), keepdims=True)
    dens = _safe_log(J) - _safe_log(Jau) - _safe_log(Jo)
    dens = np.where(J > 0, dens, 0.0)
    i1 = _xlogy_sum(J, dens, (1, 2, 3))
    Ju = J.sum(axis=1)  # (B, U, O)
    du = _safe_log(Ju) - _safe_log(Ju.sum(axis=2, keepdims=True)) - _safe_log(Jo[:, 0])
    i_uo = _xlogy_sum(Ju, np.where(Ju > 0, du, 0.0), (1, 2))
    M = p_a[:, :, None, None] * ctx.pse[None, :, :, None] * p_u
    Ma = M.sum(axis=(2, 3), keepdims=True)
    Mae = M.sum(axis=3, keepdims=True)
    Mau = M.sum(axis=2, keepdims=True)
    cd = _safe_log(M) + _safe_log(Ma) - _safe_log(Mae) - _safe_log(Mau)
    cd = np.where(M > 0, cd, 0.0)
    i2 = _xlogy_sum(M, cd, (1, 2, 3))
    dist = np.einsum("baeux,aex->b", Q, ctx.e_aex)
    return i1, i2, i_uo, dist, dens, cd


def _report(ctx, policy):
    i1, i2, iu, dist, _, _ = _terms(ctx, policy.p_a[None], policy.p_u[None], policy.p_x[None])
    i1, i2, iu = max(float(i1[0]), 0.0), max(float(i2[0]), 0.0), max(float(iu[0]), 0.0)
    d = min(max(float(dist[0]), 0.0), ctx.model.d_max)
    return ObjectiveReport(i1, i2, i1 - i2, d, iu)


def evaluate_policy(model: IsacModel, policy: Policy) -> ObjectiveReport:
    """Objective terms and g*-distortion of a policy."""
    check_policy(model, policy)
    return _report(_Ctx(model), policy)


def augment_policy(model: IsacModel, policy: Policy) -> Policy:
    """Relabel the auxiliary as U' = (U, A), index u' = u * |A| + a."""
    check_policy(model, policy)
    n_a = model.sizes["A"]
    n_u = policy.u_size
    n_se = model.sizes["S_e"]
    p_u = np.zeros((n_a, n_se, n_u * n_a))
    p_x = np.zeros((n_u * n_a, n_se, model.sizes["X"]))
    for a in range(n_a):
        idx = np.arange(n_u) * n_a + a
        p_u[a][:, idx] = policy.p_u[a]
        p_x[idx] = policy.p_x
    return Policy(policy.p_a.copy(), p_u, p_x)


# -- minimum distortion -------------------------------------------------------

def min_distortion(model: IsacModel):
    """Smallest achievable distortion and a policy attaining it."""
    ctx = _Ctx(model)
    return _min_distortion(ctx, 1)


def _min_distortion(ctx, u_size):
    # per (a, se) the best input; then the best action
    best_x = np.argmin(ctx.dmap, axis=1)  # (A, Se), lowest index on ties
    per_a = (ctx.pse * np.min(ctx.dmap, axis=1)).sum(axis=1)
    a_star = int(np.argmin(per_a))
    p_a = np.zeros(ctx.A)
    p_a[a_star] = 1.0
    p_u = np.zeros((ctx.A, ctx.Se, u_size))
    p_u[..., 0] = 1.0
    p_x = np.zeros((u_size, ctx.Se, ctx.X))
    p_x[:, np.arange(ctx.Se), best_x[a_star]] = 1.0
    return float(per_a[a_star]), Policy(p_a, p_u, p_x)


# -- exhaustive mode ------------------------------------------------------------

def simplex_grid(k, step):
    """All points of the k-simplex with coordinates on multiples of ``step``."""
    m = int(round(1.0 / step))
    if abs(m * step - 1.0) > 1e-12:
        raise ValueError("grid step must divide 1")
    pts = [c for c in itertools.product(range(m + 1), repeat=k - 1) if sum(c) <= m]
    return np.array([list(c) + [m - sum(c)] for c in pts], dtype=float) / m


def count_exhaustive(model, u_size, step):
    s = model.sizes
    n_grid = math.comb(int(round(1 / step)) + s["A"] - 1, s["A"] - 1)
    return u_size ** (s["A"] * s["S_e"]) * s["X"] ** (u_size * s["S_e"]) * n_grid


def _onehot(choice, n):
    out = np.zeros(choice.shape + (n,))
    np.put_along_axis(out, choice[..., None], 1.0, axis=-1)
    return out


def _exhaustive(ctx, D, u_size, opts):
    total = count_exhaustive(ctx.model, u_size, opts.grid_step)
    if total > opts.max_policies:
        raise ValueError(f"exhaustive mode would enumerate {total} policies (cap {opts.max_policies})")
    grid = simplex_grid(ctx.A, opts.grid_step)
    u_maps = np.array(list(itertools.product(range(u_size), repeat=ctx.A * ctx.Se)))
    x_maps = np.array(list(itertools.product(range(ctx.X), repeat=u_size * ctx.Se)))
    pu_all = _onehot(u_maps.reshape(-1, ctx.A, ctx.Se), u_size)
    px_all = _onehot(x_maps.reshape(-1, u_size, ctx.Se), ctx.X)
    n_g, n_u, n_x = len(grid), len(pu_all), len(px_all)
    best = (-np.inf, None)
    chunk = max(1, 20000 // max(1, n_g * n_x))
    for start in range(0, n_u, chunk):
        iu = np.arange(start, min(n_u, start + chunk))
        # batch index order: (u map, x map, grid point)
        bu, bx, bg = np.meshgrid(iu, np.arange(n_x), np.arange(n_g), indexing="ij")
        bu, bx, bg = bu.ravel(), bx.ravel(), bg.ravel()
        i1, i2, _, dist, _, _ = _terms(ctx, grid[bg], pu_all[bu], px_all[bx])
        obj = np.where(dist <= D + FEAS_TOL, i1 - i2, -np.inf)
        k = int(np.argmax(obj))
        if obj[k] > best[0]:
            best = (float(obj[k]), Policy(grid[bg[k]], pu_all[bu[k]], px_all[bx[k]]))
    return best[1], total


# -- alternating (exponentiated-gradient) mode ----------------------------------

def _normalize_rows(p):
    s = p.sum(axis=-1, keepdims=True)
    return p / s


def _eg_step(p, g, eta):
    # p * exp(eta * g), row-normalized, computed stably
    z = eta * g
    z = z - z.max(axis=-1, keepdims=True)
    return _normalize_rows(p * np.exp(z))


def _lagrangian(ctx, lam, p_a, p_u, p_x):
    i1, i2, _, dist, dens, cd = _terms(ctx, p_a, p_u, p_x)
    return i1 - i2 - lam * dist, dens, cd


def _ascent(ctx, lam, p_a, p_u, p_x, iterations, tol=1e-13):
    """Batched block-coordinate exponentiated-gradient ascent on I1 - I2 - lam*D."""
    B = p_a.shape[0]
    eta = np.ones((3, B))
    L, dens, cd = _lagrangian(ctx, lam, p_a, p_u, p_x)
    G, e, pse = ctx.G, ctx.e_aex, ctx.pse
    for _ in range(iterations):
        L_start = L.copy()
        # block 1: P(x | u, se); gradient scaled by row mass
        w = np.einsum("ba,baeu,ae->bue", p_a, p_u, pse)
        pau = p_a[:, :, None, None] * p_u
        H = np.einsum("bauo,aexo->baeux", dens, G) - lam * e[None, :, :, None, :]
        g = np.einsum("baeux,baeu->buex", H, pau)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(w[..., None] > 0, g / w[..., None], 0.0)
        p_x, L, dens, cd = _try(ctx, lam, eta[0], L, dens, cd, (p_a, p_u, p_x), 2,
                                _eg_step(p_x, g, eta[0][:, None, None, None]))
        # block 2: P(u | a, se)
        H = np.einsum("bauo,aexo->baeux", dens, G) - lam * e[None, :, :, None, :]
        g = (np.einsum("baeux,buex->baeu", H, p_x)
             - pse[None, :, :, None] * cd)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(pse[None, :, :, None] > 0, g / pse[None, :, :, None], 0.0)
        p_u, L, dens, cd = _try(ctx, lam, eta[1], L, dens, cd, (p_a, p_u, p_x), 1,
                                _eg_step(p_u, g, eta[1][:, None, None, None]))
        # block 3: P(a)
        if ctx.A > 1:
            H = np.einsum("bauo,aexo->baeux", dens, G) - lam * e[None, :, :, None, :]
            g = (np.einsum("baeux,buex->baeu", H, p_x) - pse[None, :, :, None] * cd)
            g = (g * p_u).sum(axis=(2, 3))
            p_a, L, dens, cd = _try(ctx, lam, eta[2], L, dens, cd, (p_a, p_u, p_x), 0,
                                    _eg_step(p_a, g, eta[2][:, None]))
        if np.all(np.abs(L - L_start) <= tol * np.maximum(1.0, np.abs(L))) and np.all(eta > 1e-3):
            break
    return p_a, p_u, p_x, L


def _try(ctx, lam, eta, L, dens, cd, params, which, proposal):
    """Accept the proposal where the Lagrangian does not decrease; adapt step sizes."""
    trial = list(params)
    trial[which] = proposal
    L_new, dens_new, cd_new = _lagrangian(ctx, lam, *trial)
    ok = L_new >= L - 1e-15
    eta[ok] = np.minimum(eta[ok] * 1.25, 4.0)
    eta[~ok] *= 0.5
    shape = (-1,) + (1,) * (proposal.ndim - 1)
    merged = np.where(ok.reshape(shape), proposal, params[which])
    L_out = np.where(ok, L_new, L)
    dens_out = np.where(ok[:, None, None, None], dens_new, dens)
    cd_out = np.where(ok[:, None, None, None], cd_new, cd)
    return merged, L_out, dens_out, cd_out


def _random_starts(ctx, u_size, restarts, seed):
    p_a, p_u, p_x = [], [], []
    for k in range(restarts):
        rng = np.random.default_rng([seed, k])
        p_a.append(rng.dirichlet(np.ones(ctx.A)))
        p_u.append(rng.dirichlet(np.ones(u_size), size=(ctx.A, ctx.Se)))
        p_x.append(rng.dirichlet(np.ones(ctx.X), size=(u_size, ctx.Se)))
    return np.array(p_a), np.array(p_u), np.array(p_x)


def _smooth(policy, u_size, eps=1e-3):
    # pull a warm start slightly off the simplex boundary so EG can move it
    def mix(p):
        return (1 - eps) * p + eps / p.shape[-1]

    p_u = policy.p_u
    p_x = policy.p_x
    if p_u.shape[-1] != u_size:
        return None
    return mix(policy.p_a), mix(p_u), mix(p_x)


class _Starts:
    def __init__(self, p_a, p_u, p_x):
        self.p_a, self.p_u, self.p_x = p_a, p_u, p_x

    def with_extra(self, extra):
        if not extra:
            return self
        a, u, x = zip(*extra)
        return _Starts(np.concatenate([self.p_a, np.array(a)]),
                       np.concatenate([self.p_u, np.array(u)]),
                       np.concatenate([self.p_x, np.array(x)]))


def _solve_lambda(ctx, lam, starts, iterations):
    p_a, p_u, p_x, L = _ascent(ctx, lam, starts.p_a, starts.p_u, starts.p_x, iterations)
    i1, i2, _, dist, _, _ = _terms(ctx, p_a, p_u, p_x)
    return _Starts(p_a, p_u, p_x), i1 - i2, dist, L


def _pick(starts, k):
    return Policy(starts.p_a[k], starts.p_u[k], starts.p_x[k])


def _mix_policy(p, q, t):
    return Policy((1 - t) * p.p_a + t * q.p_a, (1 - t) * p.p_u + t * q.p_u, (1 - t) * p.p_x + t * q.p_x)


def _repair(ctx, bad, good, D):
    """Bisect on the segment from an infeasible policy to a feasible one."""
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _report(ctx, _mix_policy(bad, good, mid)).distortion <= D:
            hi = mid
        else:
            lo = mid
    return _mix_policy(bad, good, hi)


def _alternating(ctx, D, u_size, opts, warm=()):
    starts = _Starts(*_random_starts(ctx, u_size, opts.restarts, opts.seed))
    extra = [s for s in (_smooth(w, u_size) for w in warm) if s is not None]
    starts = starts.with_extra(extra)
    d_min, p_min = _min_distortion(ctx, u_size)
    candidates = [p_min]

    def record(st, obj, dist):
        k_all = np.arange(len(obj))
        feas = k_all[dist <= D + FEAS_TOL]
        if len(feas):
            candidates.append(_pick(st, int(feas[np.argmax(obj[feas])])))
        return int(np.argmax(obj))

    st0, obj, dist, _ = _solve_lambda(ctx, 0.0, starts, opts.iterations)
    k0 = record(st0, obj, dist)
    lam_used = 0.0
    if dist[k0] > D + FEAS_TOL:
        # bracket lam: find lam_hi whose best solution is feasible
        lo, hi = 0.0, 1.0
        st_lo, st_hi = st0, None
        k_lo = int(np.argmax(obj))
        while True:
            st, obj_h, dist_h, L = _solve_lambda(ctx, hi, st_lo, opts.iterations // 2)
            record(st, obj_h, dist_h)
            kb = int(np.argmax(L))
            if dist_h[kb] <= D + FEAS_TOL or hi > 1e8:
                st_hi, k_hi = st, kb
                break
            lo, st_lo, k_lo = hi, st, kb
            hi *= 4.0
        for _ in range(opts.lambda_iters):
            mid = 0.5 * (lo + hi)
            st, obj_m, dist_m, L = _solve_lambda(ctx, mid, st_hi, opts.iterations // 4)
            record(st, obj_m, dist_m)
            km = int(np.argmax(L))
            if dist_m[km] <= D + FEAS_TOL:
                hi, st_hi, k_hi = mid, st, km
            else:
                lo, st_lo, k_lo = mid, st, km
            if hi - lo <= 1e-7 * max(1.0, hi):
                break
        lam_used = hi
        good = _pick(st_hi, k_hi)
        if _report(ctx, good).distortion <= D + FEAS_TOL:
            candidates.append(_repair(ctx, _pick(st_lo, k_lo), good, D))
        candidates.append(_repair(ctx, _pick(st_lo, k_lo), p_min, D))
    reports = [_report(ctx, p) for p in candidates]
    ok = [i for i, r in enumerate(reports) if r.distortion <= D + FEAS_TOL]
    best = max(ok, key=lambda i: reports[i].objective)
    return candidates[best], len(starts.p_a), lam_used


def capacity_at(model: IsacModel, D: float, opts: SolverOptions | None = None, warm=()) -> CapacityResult:
    """Best feasible objective at distortion level D (nats)."""
    opts = opts or SolverOptions()
    if not D >= 0:
        raise ValueError(f"distortion level must be non-negative, got {D}")
    ctx = _Ctx(model)
    u_size = opts.u_size or default_u_size(model)
    d_min, _ = _min_distortion(ctx, u_size)
    if d_min > D + FEAS_TOL:
        raise InfeasibleError(f"D={D} is below the minimum achievable distortion {d_min:.12g}", d_min=d_min)
    if opts.mode == "exhaustive":
        policy, used = _exhaustive(ctx, D, u_size, opts)
        rep = _report(ctx, policy)
        return CapacityResult(rep.objective, policy, rep, True, "exhaustive", used, 0.0, True)
    if opts.mode != "alternating":
        raise ValueError(f"unknown optimizer mode {opts.mode!r}")
    policy, used, lam = _alternating(ctx, D, u_size, opts, warm)
    rep = _report(ctx, policy)
    return CapacityResult(rep.objective, policy, rep, True, "alternating", used, lam, False)


def cd_curve(model: IsacModel, d_grid, opts: SolverOptions | None = None) -> CDCurve:
    """C(D) on an increasing grid, warm-started and made monotone by a running max."""
    d_grid = [float(d) for d in d_grid]
    if not d_grid:
        raise ValueError("empty distortion grid")
    if any(b <= a for a, b in zip(d_grid, d_grid[1:])):
        raise ValueError("distortion grid must be strictly increasing")
    opts = opts or SolverOptions()
    curve = CDCurve()
    prev = None
    for D in d_grid:
        res = capacity_at(model, D, opts, warm=(prev[2],) if prev else ())
        point = (D, res.capacity, res.policy)
        if prev is not None and prev[1] > point[1]:
            point = (D, prev[1], prev[2])
        curve.points.append(point)
        prev = point
    return curve


# -- mixed models ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MixedModel:
    """Two-component state and channel mixtures sharing alphabets and distortion."""

    state_kernels: tuple
    alpha: tuple
    channel_kernels: tuple
    beta: tuple
    distortion: np.ndarray

    def __post_init__(self):
        for w in (self.alpha, self.beta):
            if len(w) != 2 or min(w) < 0 or abs(sum(w) - 1.0) > 1e-12:
                raise ModelError(f"mixture weights {w} must be two non-negative numbers summing to 1")
        if len(self.state_kernels) != 2 or len(self.channel_kernels) != 2:
            raise ModelError("mixed models have exactly two state and two channel components")
        for i in range(2):
            for j in range(2):
                self.component(i, j)

    def component(self, i, j) -> IsacModel:
        return IsacModel(self.state_kernels[i], self.channel_kernels[j], self.distortion)

    def mixture(self) -> IsacModel:
        """Single-letter model with averaged kernels."""
        st = self.alpha[0] * np.asarray(self.state_kernels[0]) + self.alpha[1] * np.asarray(self.state_kernels[1])
        ch = self.beta[0] * np.asarray(self.channel_kernels[0]) + self.beta[1] * np.asarray(self.channel_kernels[1])
        return IsacModel(st, ch, self.distortion)


class MixedRate(NamedTuple):
    rate: float
    i_auy: np.ndarray  # (2, 2): state component i, channel component j
    i_use: np.ndarray  # (2,): state component i


def mixed_rate(mixed: MixedModel, policy: Policy) -> MixedRate:
    """min_ij I(A,U;S_d,Y)_ij - max_i I(U;S_e|A)_i; weights do not enter."""
    i_auy = np.zeros((2, 2))
    i_use = np.zeros(2)
    for i in range(2):
        for j in range(2):
            rep = evaluate_policy(mixed.component(i, j), policy)
            i_auy[i, j] = rep.i_auy
            i_use[i] = rep.i_use
    return MixedRate(float(i_auy.min() - i_use.max()), i_auy, i_use)


def mixed_distortion_decomposition(mixed: MixedModel, policy: Policy):
    """(overall, D table) using the mixture-posterior estimator in every component."""
    from .estimator import policy_distortion

    mix = mixed.mixture()
    table = optimal_estimator(mix).table
    overall = policy_distortion(mix, policy, table)
    comps = np.array([[policy_distortion(mixed.component(i, j), policy, table) for j in range(2)]
                      for i in range(2)])
    return overall, comps


# -- nonstationary (time-varying) models -------------------------------------------

@dataclass
class NonstationaryResult:
    rate: float
    lam: float
    policies: list
    distortion: float
    gap_bound: float
    per_symbol: list


def _symbol_solver(ctx, u_size, opts, k):
    """Per-symbol Lagrangian maximizer with warm starts kept between calls."""
    state = {"starts": _Starts(*_random_starts(ctx, u_size, opts.restarts, opts.seed + 7919 * k))}

    def solve(lam, iterations):
        st, obj, dist, L = _solve_lambda(ctx, lam, state["starts"], iterations)
        state["starts"] = st
        kb = int(np.argmax(L))
        return float(obj[kb]), float(dist[kb]), float(L[kb]), _pick(st, kb)

    return solve


def _exhaustive_lagrangian(ctx, u_size, opts, k):
    total = count_exhaustive(ctx.model, u_size, opts.grid_step)
    if total > opts.max_policies:
        raise ValueError(f"exhaustive mode would enumerate {total} policies (cap {opts.max_policies})")
    grid = simplex_grid(ctx.A, opts.grid_step)
    u_maps = np.array(list(itertools.product(range(u_size), repeat=ctx.A * ctx.Se)))
    x_maps = np.array(list(itertools.product(range(ctx.X), repeat=u_size * ctx.Se)))
    pu = _onehot(u_maps.reshape(-1, ctx.A, ctx.Se), u_size)
    px = _onehot(x_maps.reshape(-1, u_size, ctx.Se), ctx.X)
    bu, bx, bg = (a.ravel() for a in np.meshgrid(np.arange(len(pu)), np.arange(len(px)),
                                                 np.arange(len(grid)), indexing="ij"))
    i1, i2, _, dist, _, _ = _terms(ctx, grid[bg], pu[bu], px[bx])
    obj = i1 - i2

    def solve(lam, iterations):
        L = obj - lam * dist
        kb = int(np.argmax(L))
        return float(obj[kb]), float(dist[kb]), float(L[kb]), Policy(grid[bg[kb]], pu[bu[kb]], px[bx[kb]])

    return solve


def _timeshare(lo_sol, hi_sol, budget):
    """Pick per symbol the lam_lo or lam_hi solution to maximize rate within budget."""
    n = len(lo_sol)
    gain = np.array([lo_sol[i][0] - hi_sol[i][0] for i in range(n)])
    cost = np.array([lo_sol[i][1] - hi_sol[i][1] for i in range(n)])
    base = sum(s[1] for s in hi_sol)
    best, best_set = -np.inf, ()
    if n <= 16:
        for mask in range(1 << n):
            sel = [i for i in range(n) if mask >> i & 1]
            if base + cost[sel].sum() <= budget + FEAS_TOL * n and gain[sel].sum() > best:
                best, best_set = gain[sel].sum(), tuple(sel)
    else:
        order = np.argsort(-(gain / np.maximum(cost, 1e-300)))
        used, sel = base, []
        for i in order:
            if used + cost[i] <= budget + FEAS_TOL * n:
                sel.append(int(i))
                used += cost[i]
        best_set = tuple(sel)
    return [lo_sol[i] if i in best_set else hi_sol[i] for i in range(n)]


def nonstationary_capacity(models, D: float, opts: SolverOptions | None = None) -> NonstationaryResult:
    """max (1/n) sum_i objective_i subject to (1/n) sum_i distortion_i <= D.

    Solved by Lagrangian decomposition with bisection on the multiplier and
    symbol-level time-sharing between the two bracketing solutions. The
    returned ``gap_bound`` is the dual value minus the achieved rate.
    """
    models = list(models)
    if not models:
        raise ValueError("need at least one model")
    opts = opts or SolverOptions()
    n = len(models)
    ctxs = [_Ctx(m) for m in models]
    sizes = [opts.u_size or default_u_size(m) for m in models]
    d_min = sum(_min_distortion(c, u)[0] for c, u in zip(ctxs, sizes)) / n
    if d_min > D + FEAS_TOL:
        raise InfeasibleError(f"D={D} is below the minimum average distortion {d_min:.12g}", d_min=d_min)
    make = _exhaustive_lagrangian if opts.mode == "exhaustive" else _symbol_solver
    solvers = [make(c, u, opts, k) for k, (c, u) in enumerate(zip(ctxs, sizes))]

    def solve_all(lam, iterations):
        if opts.threads and opts.threads > 1 and n > 1:
            with ThreadPoolExecutor(max_workers=opts.threads) as pool:
                return list(pool.map(lambda s: s(lam, iterations), solvers))
        return [s(lam, iterations) for s in solvers]

    budget = n * D
    sol0 = solve_all(0.0, opts.iterations)
    if sum(s[1] for s in sol0) <= budget + FEAS_TOL * n:
        rate = sum(s[0] for s in sol0) / n
        dual = sum(s[2] for s in sol0) / n
        return NonstationaryResult(rate, 0.0, [s[3] for s in sol0], sum(s[1] for s in sol0) / n,
                                   max(dual - rate, 0.0), sol0)
    lo, hi = 0.0, 1.0
    sol_lo, sol_hi = sol0, None
    while True:
        sol = solve_all(hi, opts.iterations // 2)
        if sum(s[1] for s in sol) <= budget + FEAS_TOL * n or hi > 1e8:
            sol_hi = sol
            break
        lo, sol_lo = hi, sol
        hi *= 4.0
    for _ in range(max(opts.lambda_iters, 60)):
        mid = 0.5 * (lo + hi)
        sol = solve_all(mid, opts.iterations // 4)
        if sum(s[1] for s in sol) <= budget + FEAS_TOL * n:
            hi, sol_hi = mid, sol
        else:
            lo, sol_lo = mid, sol
        if hi - lo <= 1e-10 * max(1.0, hi):
            break
    chosen = _timeshare(sol_lo, sol_hi, budget)
    rate = sum(s[0] for s in chosen) / n
    dist = sum(s[1] for s in chosen) / n
    dual = min(sum(s[2] for s in sol_hi) / n + hi * D, sum(s[2] for s in sol_lo) / n + lo * D)
    return NonstationaryResult(rate, hi, [s[3] for s in chosen], dist, max(dual - rate, 0.0), chosen)


def with_options(opts: SolverOptions | None, **kw) -> SolverOptions:
    return replace(opts or SolverOptions(), **kw)
