"""Gaussian examples: additive-state boundary point and AWGN channels with fading.

All variances are in squared signal units and rates in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.integrate import quad as _adaptive_quad
from scipy.special import erfcx

DEFAULT_NODES = 64
SCAN_POINTS = 101
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _positive(**kw):
    for name, v in kw.items():
        if not (isinstance(v, (int, float, np.floating)) and math.isfinite(v) and v > 0):
            raise ValueError(f"{name} must be a positive finite number, got {v!r}")


# -- additive state with noisy encoder CSI -----------------------------------------

@dataclass(frozen=True)
class DpcParams:
    p_x: float
    sigma: float
    sigma_z: float
    sigma_e: float
    sigma_s: float

    def __post_init__(self):
        _positive(p_x=self.p_x, sigma=self.sigma, sigma_z=self.sigma_z,
                  sigma_e=self.sigma_e, sigma_s=self.sigma_s)
        if not self.sigma_z > self.sigma:
            raise ValueError(f"need sigma_z > sigma (got {self.sigma_z} <= {self.sigma})")


class DpcPoint(NamedTuple):
    rate: float
    distortion: float
    a: float
    b: float
    c: float


def _lmmse_terms(p: DpcParams):
    den = p.sigma_s * p.sigma_z + p.sigma_e * p.sigma_s + p.sigma_e * p.sigma_z
    return den, p.sigma_s * p.sigma_e * p.sigma_z / den


def dpc_boundary(params: DpcParams) -> DpcPoint:
    """Rate-maximizing boundary point: rate, LMMSE distortion and coefficients (a, -a, c)."""
    den, dist = _lmmse_terms(params)
    a = params.sigma_e * params.sigma_s / den
    c = params.sigma_s * params.sigma_z / den
    rate = 0.5 * math.log1p(params.p_x / (params.sigma + params.sigma_e))
    return DpcPoint(rate, dist, a, -a, c)


def dpc_converse_bound(params: DpcParams) -> float:
    """Lower bound on the distortion of any scheme when the state is i.i.d. Gaussian."""
    return _lmmse_terms(params)[1]


# -- fading ---------------------------------------------------------------------

@dataclass(frozen=True)
class StateDist:
    """Law of the fading coefficient S: finite support or zero-mean Gaussian."""

    kind: str  # "finite" | "gaussian"
    values: tuple = ()
    probs: tuple = ()
    variance: float = 0.0

    def __post_init__(self):
        if self.kind == "finite":
            v = np.asarray(self.values, dtype=float)
            p = np.asarray(self.probs, dtype=float)
            if v.ndim != 1 or v.shape != p.shape or v.size == 0:
                raise ValueError("finite state law needs matching non-empty values and probs")
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12 or not np.all(np.isfinite(v)):
                raise ValueError("finite state law probabilities must be non-negative and sum to 1")
        elif self.kind == "gaussian":
            if not (self.variance >= 0 and math.isfinite(self.variance)):
                raise ValueError("Gaussian state variance must be finite and non-negative")
        else:
            raise ValueError(f"unknown state law kind {self.kind!r}")

    @classmethod
    def finite(cls, values, probs):
        return cls("finite", tuple(float(v) for v in values), tuple(float(q) for q in probs))

    @classmethod
    def gaussian(cls, variance):
        return cls("gaussian", variance=float(variance))

    @classmethod
    def constant(cls, value=1.0):
        return cls.finite([value], [1.0])

    @classmethod
    def parse(cls, text: str, sigma_s: float | None = None):
        """``gauss`` (variance sigma_s), ``gauss:V``, ``const:v`` or ``finite:v1/p1,v2/p2``."""
        kind, _, rest = text.partition(":")
        kind = kind.strip().lower()
        try:
            if kind in ("gauss", "gaussian"):
                if rest:
                    return cls.gaussian(float(rest))
                if sigma_s is None:
                    raise ValueError("gauss without a variance needs sigma_s")
                return cls.gaussian(sigma_s)
            if kind == "const":
                return cls.constant(float(rest or 1.0))
            if kind == "finite":
                pairs = [item.split("/") for item in rest.split(",") if item]
                return cls.finite([float(v) for v, _ in pairs], [float(q) for _, q in pairs])
        except (TypeError, ValueError) as exc:
            raise ValueError(f"bad state law {text!r}: {exc}") from None
        raise ValueError(f"bad state law {text!r}")

    def second_moment(self):
        if self.kind == "gaussian":
            return self.variance
        v = np.asarray(self.values)
        return float(np.dot(self.probs, v * v))

    def nodes(self, count=DEFAULT_NODES):
        """(values, weights) for expectations over S; Gauss-Hermite when Gaussian."""
        if self.kind == "finite":
            return np.asarray(self.values), np.asarray(self.probs)
        t, w = hermegauss(count)
        return math.sqrt(self.variance) * t, w / math.sqrt(2.0 * math.pi)

    def expect(self, fn, method="adaptive", count=DEFAULT_NODES):
        """E[fn(S)]; finite laws are summed exactly."""
        if self.kind == "gaussian" and method == "adaptive":
            sd = math.sqrt(self.variance)
            if sd == 0:
                return float(fn(np.zeros(1))[0])

            def integrand(t):
                return float(fn(np.array([sd * t]))[0]) * math.exp(-0.5 * t * t)

            val, _ = _adaptive_quad(integrand, 0.0, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)
            # fn is even in S for every caller here
            return 2.0 * val / math.sqrt(2.0 * math.pi)
        s, w = self.nodes(count)
        return float(np.dot(w, fn(s)))


@dataclass(frozen=True)
class FadingParams:
    p_x: float
    sigma: float
    sigma_z: float
    sigma_s: float
    s_dist: StateDist = None

    def __post_init__(self):
        _positive(p_x=self.p_x, sigma=self.sigma, sigma_z=self.sigma_z, sigma_s=self.sigma_s)
        if not self.sigma_z > self.sigma:
            raise ValueError(f"need sigma_z > sigma (got {self.sigma_z} <= {self.sigma})")
        if self.s_dist is None:
            object.__setattr__(self, "s_dist", StateDist.gaussian(self.sigma_s))
        if self.s_dist.second_moment() > self.sigma_s * (1 + 1e-12):
            raise ValueError(f"fading law has second moment {self.s_dist.second_moment()} > sigma_s")


@dataclass(frozen=True)
class QuadOptions:
    """``method="adaptive"`` uses the closed form of E[H] and adaptive quadrature
    over a Gaussian S; ``"hermite"`` uses ``nodes``-point Gauss-Hermite for both."""

    method: str = "adaptive"
    nodes: int = DEFAULT_NODES
    scan: int = SCAN_POINTS
    tol: float = 1e-12

    def __post_init__(self):
        if self.method not in ("adaptive", "hermite"):
            raise ValueError(f"unknown quadrature method {self.method!r}")


def fading_h(params: FadingParams, x):
    """Conditional MMSE of S given input x: sigma_s sigma_z / (sigma_s |x|^2 + sigma_z)."""
    x = np.abs(np.asarray(x, dtype=float))
    out = params.sigma_s * params.sigma_z / (params.sigma_s * x * x + params.sigma_z)
    return float(out) if out.ndim == 0 else out


def fading_estimator(params: FadingParams, x, z):
    """Linear MMSE reconstruction sigma_s x z / (sigma_s |x|^2 + sigma_z)."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    out = params.sigma_s * x / (params.sigma_s * x * x + params.sigma_z) * z
    return float(out) if out.ndim == 0 else out


def expected_h(params: FadingParams, alpha, quad: QuadOptions = QuadOptions()):
    """E[H(X)] for X ~ N(0, alpha P_X).

    With k = sigma_s alpha P_X / sigma_z, E[1 / (1 + k T^2)] for standard normal T
    equals sqrt(pi / 2k) erfcx(1 / sqrt(2k)).
    """
    if quad.method == "adaptive":
        k = params.sigma_s * max(alpha, 0.0) * params.p_x / params.sigma_z
        if k == 0:
            return float(params.sigma_s)
        r = 1.0 / math.sqrt(2.0 * k)
        return float(params.sigma_s * math.sqrt(math.pi) * r * erfcx(r))
    t, w = hermegauss(quad.nodes)
    x = math.sqrt(max(alpha, 0.0) * params.p_x) * t
    return float(np.dot(w, fading_h(params, x)) / math.sqrt(2.0 * math.pi))


def fading_rate(params: FadingParams, alpha, quad: QuadOptions = QuadOptions()):
    """0.5 E[log((alpha S^2 P_X + sigma) / sigma)] over the fading law."""
    c = alpha * params.p_x / params.sigma
    return 0.5 * params.s_dist.expect(lambda s: np.log1p(c * s * s), quad.method, quad.nodes)


class FadingPoint(NamedTuple):
    capacity: float  # nan when infeasible
    alpha: float     # nan when infeasible
    feasible: bool
    distortion: float  # E[H] at alpha (or the smallest attainable when infeasible)


def _maximize(objective, constraint, D, quad: QuadOptions):
    """Scan alpha in [0, 1], then refine the best feasible point.

    The refinement brackets the best scan point with its neighbours, bisects
    the feasibility frontier when a neighbour is infeasible and runs a
    golden-section search on the feasible part of the bracket.
    """
    grid = np.linspace(0.0, 1.0, quad.scan)
    cons = np.array([constraint(a) for a in grid])
    feas = cons <= D + quad.tol
    if not feas.any():
        k = int(np.argmin(cons))
        return FadingPoint(math.nan, math.nan, False, float(cons[k]))
    vals = np.array([objective(a) if f else -np.inf for a, f in zip(grid, feas)])
    k = int(np.argmax(vals))
    best_a, best_v = float(grid[k]), float(vals[k])
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]

    def frontier(a_in, a_out):
        for _ in range(60):
            mid = 0.5 * (a_in + a_out)
            if constraint(mid) <= D + quad.tol:
                a_in = mid
            else:
                a_out = mid
        return a_in

    if not feas[max(k - 1, 0)]:
        lo = frontier(grid[k], lo)
    if not feas[min(k + 1, len(grid) - 1)]:
        hi = frontier(grid[k], hi)

    def f(a):
        return objective(a) if constraint(a) <= D + quad.tol else -np.inf

    a, b = lo, hi
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(80):
        if b - a < 1e-12:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    for cand in (lo, hi, c, d):
        v = f(cand)
        if v > best_v:
            best_a, best_v = float(cand), float(v)
    return FadingPoint(best_v, best_a, True, float(constraint(best_a)))


def fading_capacity(params: FadingParams, D: float, quad: QuadOptions = QuadOptions()) -> FadingPoint:
    """C(D) = max over alpha in [0,1] with E[H(X)] <= D of the fading rate."""
    if D < 0:
        raise ValueError("D must be non-negative")
    return _maximize(lambda a: fading_rate(params, a, quad), lambda a: expected_h(params, a, quad), D, quad)


class FadingCurve(NamedTuple):
    d: np.ndarray
    c: np.ndarray
    alpha: np.ndarray
    feasible: np.ndarray


def fading_cd_curve(params: FadingParams, d_grid, quad: QuadOptions = QuadOptions()) -> FadingCurve:
    d = np.asarray(d_grid, dtype=float)
    if d.size == 0:
        raise ValueError("empty distortion grid")
    if np.any(np.diff(d) <= 0):
        raise ValueError("distortion grid must be strictly increasing")
    pts = [fading_capacity(params, float(x), quad) for x in d]
    return FadingCurve(d, np.array([p.capacity for p in pts]), np.array([p.alpha for p in pts]),
                       np.array([p.feasible for p in pts]))


class MixedFadingPoint(NamedTuple):
    rate: float
    alpha: float
    feasible: bool
    distortion: float
    rates: tuple  # per-component rates at alpha


def mixed_fading_rate(params1: FadingParams, params2: FadingParams, beta: float, D: float,
                      quad: QuadOptions = QuadOptions()) -> MixedFadingPoint:
    """Max over alpha (beta H1 + (1-beta) H2 on average <= D) of the smaller component rate."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    if params1.p_x != params2.p_x:
        raise ValueError("components must share the input power")

    def cons(a):
        return beta * expected_h(params1, a, quad) + (1 - beta) * expected_h(params2, a, quad)

    def obj(a):
        return min(fading_rate(params1, a, quad), fading_rate(params2, a, quad))

    pt = _maximize(obj, cons, D, quad)
    rates = (math.nan, math.nan) if not pt.feasible else (fading_rate(params1, pt.alpha, quad),
                                                          fading_rate(params2, pt.alpha, quad))
    return MixedFadingPoint(pt.capacity, pt.alpha, pt.feasible, pt.distortion, rates)
