import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isac_cd.gaussian import (DpcParams, FadingParams, QuadOptions, StateDist, dpc_boundary, dpc_converse_bound,
                              expected_h, fading_capacity, fading_cd_curve, fading_estimator, fading_h,
                              fading_rate, mixed_fading_rate)


def random_dpc(rng):
    sigma = rng.uniform(0.05, 3.0)
    return DpcParams(p_x=rng.uniform(0.1, 10.0), sigma=sigma, sigma_z=sigma + rng.uniform(0.01, 3.0),
                     sigma_e=rng.uniform(0.01, 3.0), sigma_s=rng.uniform(0.1, 5.0))


def rational_dpc(p: DpcParams):
    """Exact rational evaluation of distortion and coefficients from the float inputs."""
    s, e, z = Fraction(p.sigma_s), Fraction(p.sigma_e), Fraction(p.sigma_z)
    den = s * z + e * s + e * z
    return s * e * z / den, e * s / den, s * z / den


def mc_mean(samples):
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size))


# -- dirty-paper point ------------------------------------------------------------------------

def test_all_ones_point():
    pt = dpc_boundary(DpcParams(p_x=1.0, sigma=0.5, sigma_z=1.0, sigma_e=1.0, sigma_s=1.0))
    assert pt.distortion == pytest.approx(1 / 3, abs=1e-15)
    assert (pt.a, pt.b, pt.c) == pytest.approx((1 / 3, -1 / 3, 1 / 3), abs=1e-15)
    assert dpc_converse_bound(DpcParams(1.0, 0.5, 1.0, 1.0, 1.0)) == pytest.approx(1 / 3, abs=1e-15)


def test_perfect_encoder_csi_limit():
    pt = dpc_boundary(DpcParams(p_x=1.0, sigma=0.5, sigma_z=1.0, sigma_e=1e-12, sigma_s=1.0))
    assert pt.distortion < 1e-11
    assert abs(pt.c - 1) < 1e-11


def test_half_log_two_rate():
    pt = dpc_boundary(DpcParams(p_x=1.0, sigma=0.5, sigma_z=1.0, sigma_e=0.5, sigma_s=1.0))
    assert pt.rate == pytest.approx(0.5 * math.log(2), rel=1e-15)


def test_converse_example_against_rationals():
    p = DpcParams(p_x=1.0, sigma=0.5, sigma_z=2.0, sigma_e=0.5, sigma_s=1.0)
    # 1 * 0.5 * 2 / (1*2 + 0.5*1 + 0.5*2) = 1 / 3.5
    assert Fraction(dpc_converse_bound(p)).limit_denominator(100) == Fraction(2, 7)
    assert abs(dpc_converse_bound(p) - float(Fraction(2, 7))) < 1e-16


def test_hundred_random_points_match_closed_forms():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = random_dpc(rng)
        pt = dpc_boundary(p)
        dist, a, c = rational_dpc(p)
        assert abs(pt.distortion - float(dist)) <= 1e-12 * float(dist)
        assert abs(pt.a - float(a)) <= 1e-12 * float(a)
        assert pt.b == -pt.a
        assert abs(pt.c - float(c)) <= 1e-12 * float(c)
        want = 0.5 * math.log(1 + p.p_x / (p.sigma + p.sigma_e))
        assert abs(pt.rate - want) <= 1e-12 * want
        assert pt.distortion == dpc_converse_bound(p)


@given(seed=st.integers(0, 2**31))
@settings(max_examples=50, deadline=None)
def test_rate_monotonicity(seed):
    rng = np.random.default_rng(seed)
    p = random_dpc(rng)
    r = dpc_boundary(p).rate
    bump = lambda **kw: dpc_boundary(DpcParams(**{**p.__dict__, **kw})).rate  # noqa: E731
    assert bump(p_x=p.p_x * 1.1) > r
    assert bump(sigma=p.sigma * 0.9) > r
    assert bump(sigma_e=p.sigma_e * 1.1) < r


@pytest.mark.parametrize("kw", [dict(p_x=0.0), dict(sigma_e=-1.0), dict(sigma_z=0.4), dict(sigma_s=math.inf)])
def test_dpc_validation(kw):
    base = dict(p_x=1.0, sigma=0.5, sigma_z=1.0, sigma_e=1.0, sigma_s=1.0)
    with pytest.raises(ValueError):
        DpcParams(**{**base, **kw})


# -- fading: H and the estimator ---------------------------------------------------------------

UNIT = FadingParams(p_x=1.0, sigma=0.5, sigma_z=1.0, sigma_s=1.0)


def test_h_examples():
    assert fading_h(UNIT, 0.0) == 1.0
    assert fading_h(UNIT, 1.0) == 0.5
    xs = np.array([0.0, 0.5, 1.0, 10.0, 1e3, 1e6])
    h = fading_h(UNIT, xs)
    assert np.all(np.diff(h) < 0) and h[-1] < 1e-11
    assert np.array_equal(fading_h(UNIT, -xs), h)


def test_estimator_examples():
    assert fading_estimator(UNIT, 0.0, 3.0) == 0.0
    assert fading_estimator(UNIT, 1.0, 2.0) == 1.0
    sharp = FadingParams(p_x=1.0, sigma=1e-10, sigma_z=1e-9, sigma_s=1.0)
    assert fading_estimator(sharp, 2.0, 3.0) == pytest.approx(1.5, rel=1e-8)


@pytest.mark.parametrize("x", [0.0, 0.3, 1.0, 2.5])
def test_estimator_mse_equals_h(x):
    p = FadingParams(p_x=1.0, sigma=0.2, sigma_z=0.7, sigma_s=1.3)
    rng = np.random.default_rng(1)
    s = rng.normal(0, math.sqrt(p.sigma_s), 10**6)
    z = s * x + rng.normal(0, math.sqrt(p.sigma_z), s.size)
    mean, se = mc_mean((s - fading_estimator(p, x, z)) ** 2)
    assert abs(mean - fading_h(p, x)) < 3 * se


# -- fading: expectations and capacity -----------------------------------------------------------

def random_fading(rng):
    sigma = rng.uniform(0.1, 2.0)
    sigma_s = rng.uniform(0.2, 3.0)
    if rng.random() < 0.5:
        dist = None
    else:
        v = rng.uniform(0.1, 2.0, size=3)
        q = rng.dirichlet(np.ones(3))
        v *= math.sqrt(sigma_s / float(q @ (v * v))) * 0.95
        dist = StateDist.finite(v, q)
    return FadingParams(p_x=rng.uniform(0.2, 5.0), sigma=sigma, sigma_z=sigma + rng.uniform(0.05, 2.0),
                        sigma_s=sigma_s, s_dist=dist)


def draw_s(p, rng, size):
    if p.s_dist.kind == "gaussian":
        return rng.normal(0, math.sqrt(p.s_dist.variance), size)
    return rng.choice(np.asarray(p.s_dist.values), size=size, p=np.asarray(p.s_dist.probs))


def test_expected_h_closed_form_matches_monte_carlo():
    rng = np.random.default_rng(2)
    for _ in range(5):
        p = random_fading(rng)
        a = rng.uniform(0.05, 1.0)
        x = rng.normal(0, math.sqrt(a * p.p_x), 10**6)
        mean, se = mc_mean(fading_h(p, x))
        assert abs(expected_h(p, a) - mean) < 3 * se
    assert expected_h(UNIT, 0.0) == UNIT.sigma_s


def test_alpha_zero_gives_zero_rate():
    assert fading_rate(UNIT, 0.0) == 0.0


def test_vacuous_constraint_selects_full_power():
    rng = np.random.default_rng(3)
    for _ in range(5):
        p = random_fading(rng)
        pt = fading_capacity(p, p.sigma_s)
        assert pt.feasible and pt.alpha == 1.0
        assert pt.capacity == pytest.approx(fading_rate(p, 1.0), abs=1e-15)


def test_unit_fading_half_log_two():
    p = FadingParams(p_x=1.0, sigma=1.0, sigma_z=2.0, sigma_s=1.0, s_dist=StateDist.constant(1.0))
    pt = fading_capacity(p, 10.0)
    assert pt.capacity == pytest.approx(0.5 * math.log(2), abs=1e-15)
    # Monte Carlo on the rate integrand with the input drawn from N(0, P_X) is degenerate for S = 1,
    # so check the capacity against the Gaussian-input mutual information instead
    rng = np.random.default_rng(4)
    x = rng.normal(0, 1, 10**6)
    y = x + rng.normal(0, 1, x.size)
    # log p(y|x) - log p(y) with p(y) = N(0, 2)
    dens = -0.5 * (y - x) ** 2 + 0.5 * y * y / 2 + 0.5 * math.log(2)
    mean, se = mc_mean(dens)
    assert abs(pt.capacity - mean) < 3 * se


def test_infeasible_level_is_flagged():
    pt = fading_capacity(UNIT, 0.01)
    assert not pt.feasible and math.isnan(pt.capacity)
    assert pt.distortion == pytest.approx(expected_h(UNIT, 1.0))
    with pytest.raises(ValueError):
        fading_capacity(UNIT, -0.1)


def test_capacity_monotone_in_d_and_power():
    rng = np.random.default_rng(5)
    for _ in range(5):
        p = random_fading(rng)
        d_lo = expected_h(p, 1.0)
        c1 = fading_capacity(p, d_lo * 1.01).capacity
        c2 = fading_capacity(p, d_lo * 1.5).capacity
        assert c2 >= c1
        q = FadingParams(p.p_x * 1.5, p.sigma, p.sigma_z, p.sigma_s, p.s_dist)
        assert fading_capacity(q, p.sigma_s).capacity > fading_capacity(p, p.sigma_s).capacity


def test_quadrature_rate_within_three_standard_errors():
    rng = np.random.default_rng(6)
    for _ in range(10):
        p = random_fading(rng)
        D = rng.uniform(expected_h(p, 1.0), p.sigma_s)
        pt = fading_capacity(p, D)
        s = draw_s(p, rng, 10**6)
        mean, se = mc_mean(0.5 * np.log1p(pt.alpha * p.p_x * s * s / p.sigma))
        assert abs(pt.capacity - mean) < 3 * se


def test_hermite_option_agrees_for_mild_parameters():
    p = FadingParams(p_x=1.0, sigma=0.5, sigma_z=1.0, sigma_s=0.5)
    herm = QuadOptions(method="hermite", nodes=64)
    for a in (0.1, 0.5, 1.0):
        assert fading_rate(p, a, herm) == pytest.approx(fading_rate(p, a), rel=1e-6)
        assert expected_h(p, a, herm) == pytest.approx(expected_h(p, a), rel=1e-2)
    with pytest.raises(ValueError):
        QuadOptions(method="simpson")


# -- curves -----------------------------------------------------------------------------------

def test_curve_examples():
    p = FadingParams(p_x=2.0, sigma=0.5, sigma_z=1.0, sigma_s=1.0)
    flat = fading_cd_curve(p, np.linspace(1.0, 2.0, 5))
    assert np.all(flat.feasible) and np.all(flat.alpha == 1.0) and np.all(flat.c == flat.c[0])
    d0 = expected_h(p, 1.0)
    mixed = fading_cd_curve(p, np.linspace(d0 * 0.5, d0 * 2, 20))
    first = int(np.argmax(mixed.feasible))
    assert first > 0 and not mixed.feasible[:first].any() and mixed.feasible[first:].all()
    assert np.all(np.isnan(mixed.c[:first]))
    tail = mixed.c[first:]
    assert np.all(np.diff(tail) >= -1e-12)
    # midpoint concavity on the feasible tail
    assert np.all(tail[1:-1] >= 0.5 * (tail[:-2] + tail[2:]) - 1e-6)
    with pytest.raises(ValueError):
        fading_cd_curve(p, [])
    with pytest.raises(ValueError):
        fading_cd_curve(p, [0.5, 0.4])


# -- mixed fading -------------------------------------------------------------------------------

def test_identical_components_match_single_capacity():
    p = FadingParams(p_x=2.0, sigma=0.5, sigma_z=1.0, sigma_s=1.0)
    for D in (0.6, 1.0):
        mix = mixed_fading_rate(p, p, 0.3, D)
        single = fading_capacity(p, D)
        assert mix.rate == pytest.approx(single.capacity, abs=1e-12)
    assert not mixed_fading_rate(p, p, 0.3, 0.5).feasible and not fading_capacity(p, 0.5).feasible


def test_beta_one_still_takes_min_rate():
    p1 = FadingParams(p_x=2.0, sigma=0.5, sigma_z=1.0, sigma_s=4.0)
    p2 = FadingParams(p_x=2.0, sigma=0.5, sigma_z=1.0, sigma_s=1.0)
    mix = mixed_fading_rate(p1, p2, 1.0, 4.0)
    assert mix.alpha == 1.0
    assert mix.rate == min(mix.rates) == mix.rates[1]
    assert mix.distortion == pytest.approx(expected_h(p1, 1.0))


def test_weaker_fading_component_is_the_bottleneck():
    p1 = FadingParams(p_x=2.0, sigma=0.5, sigma_z=1.0, sigma_s=1.0)
    p2 = FadingParams(p_x=2.0, sigma=0.5, sigma_z=1.0, sigma_s=4.0)
    rng = np.random.default_rng(7)
    for a in (0.2, 0.6, 1.0):
        r1, r2 = fading_rate(p1, a), fading_rate(p2, a)
        assert r1 < r2
        for p, r in ((p1, r1), (p2, r2)):
            mean, se = mc_mean(0.5 * np.log1p(a * p.p_x * draw_s(p, rng, 10**6) ** 2 / p.sigma))
            assert abs(r - mean) < 3 * se
    mix = mixed_fading_rate(p1, p2, 0.5, 2.0)
    assert mix.rate == mix.rates[0]


def test_mixed_validation():
    p = FadingParams(p_x=2.0, sigma=0.5, sigma_z=1.0, sigma_s=1.0)
    with pytest.raises(ValueError):
        mixed_fading_rate(p, p, 1.5, 1.0)
    with pytest.raises(ValueError):
        mixed_fading_rate(p, FadingParams(1.0, 0.5, 1.0, 1.0), 0.5, 1.0)
    assert not mixed_fading_rate(p, p, 0.5, 1e-3).feasible


# -- parameter parsing ---------------------------------------------------------------------------

def test_state_law_parsing_and_validation():
    assert StateDist.parse("gauss", 2.0) == StateDist.gaussian(2.0)
    assert StateDist.parse("gauss:0.5") == StateDist.gaussian(0.5)
    assert StateDist.parse("const:1.5") == StateDist.constant(1.5)
    fin = StateDist.parse("finite:1/0.25,-1/0.75")
    assert fin.values == (1.0, -1.0) and fin.probs == (0.25, 0.75)
    for bad in ("laplace", "finite:1/0.3", "gauss:x"):
        with pytest.raises(ValueError):
            StateDist.parse(bad, 1.0)
    with pytest.raises(ValueError):
        FadingParams(1.0, 0.5, 1.0, 1.0, StateDist.constant(2.0))
    with pytest.raises(ValueError):
        FadingParams(1.0, 1.0, 0.5, 1.0)
