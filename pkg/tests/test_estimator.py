import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isac_cd.estimator import (UnreachableObservation, nonstationary_estimators, optimal_estimator,
                               policy_distortion, posterior)
from isac_cd.model import IsacModel

from conftest import loop_distortion, loop_joint, loop_estimator, random_model, random_policy


def bsc(p):
    return np.array([[1 - p, p], [p, 1 - p]])


def se_noisy_model(p_e=0.2, p_z=0.1):
    """Uniform S, S_e = S through BSC(p_e), Z = S through BSC(p_z), Y = X xor S."""
    st_k = np.zeros((1, 2, 2, 1))
    for s in range(2):
        for e in range(2):
            st_k[0, e, s, 0] = 0.5 * bsc(p_e)[s, e]
    ch = np.zeros((2, 2, 2, 2))
    for x, s, z in itertools.product(range(2), repeat=3):
        ch[x, s, x ^ s, z] = bsc(p_z)[s, z]
    return IsacModel(st_k, ch, 1.0 - np.eye(2))


def noiseless_z_model(rng, S=3):
    m = random_model(rng, A=2, Se=2, S=S, X=2, hamming=True)
    ch = np.zeros((2, S, 2, S))
    ych = rng.random((2, S, 2))
    ych /= ych.sum(-1, keepdims=True)
    for x, s in itertools.product(range(2), range(S)):
        ch[x, s, :, s] = ych[x, s]
    return IsacModel(m.state_kernel, ch, m.distortion)


# -- posterior ------------------------------------------------------------------------------

def test_noiseless_z_gives_point_mass():
    m = noiseless_z_model(np.random.default_rng(0))
    for a, x, e, z in itertools.product(range(2), range(2), range(2), range(3)):
        try:
            post = posterior(m, a, x, e, z)
        except UnreachableObservation:
            continue
        assert np.array_equal(post, np.eye(3)[z])


def test_flat_likelihood_returns_prior():
    rng = np.random.default_rng(1)
    p_s = rng.dirichlet(np.ones(3), size=2)
    st_k = p_s[:, None, :, None]  # S_e trivial
    ch = np.full((2, 3, 2, 2), 0.25)
    m = IsacModel(st_k, ch, rng.random((3, 3)))
    for a, x, z in itertools.product(range(2), range(2), range(2)):
        assert np.max(np.abs(posterior(m, a, x, 0, z) - p_s[a])) < 1e-15


def test_binary_posterior_matches_bayes_enumeration():
    m = se_noisy_model()
    for x, e, z in itertools.product(range(2), repeat=3):
        joint = {s: 0.5 * bsc(0.2)[s, e] * bsc(0.1)[s, z] for s in range(2)}
        tot = sum(joint.values())
        want = np.array([joint[0] / tot, joint[1] / tot])
        assert np.max(np.abs(posterior(m, 0, x, e, z) - want)) < 1e-12


def test_unreachable_observation_is_an_error():
    m = noiseless_z_model(np.random.default_rng(2), S=2)
    st_k = np.array(m.state_kernel)
    st_k[0, :, 1, :] = 0.0
    st_k[0] /= st_k[0].sum()
    m = IsacModel(st_k, m.channel_kernel, m.distortion)
    with pytest.raises(UnreachableObservation, match="zero probability"):
        posterior(m, 0, 0, 0, 1)
    res = optimal_estimator(m)
    assert res.unreachable[0, 0, 0, 1]
    assert res.table[0, 0, 0, 1] == 0


# -- optimal_estimator ----------------------------------------------------------------------

def test_noiseless_hamming_estimator_copies_z():
    m = noiseless_z_model(np.random.default_rng(3))
    res = optimal_estimator(m)
    for a, x, e, z in itertools.product(range(2), range(2), range(2), range(3)):
        if not res.unreachable[a, x, e, z]:
            assert res.table[a, x, e, z] == z
    assert np.all(res.distortion_map == 0)


def test_single_reconstruction_symbol_gives_constant_table():
    rng = np.random.default_rng(4)
    m = random_model(rng, A=2, Se=2, S=3, X=2, Z=2, Shat=1)
    res = optimal_estimator(m)
    assert np.all(res.table == 0)
    for a, x, e in itertools.product(range(2), repeat=3):
        p_s = m.state_kernel[a, e].sum(-1)
        want = (p_s @ m.distortion[:, 0]) / p_s.sum()
        assert abs(res.distortion_map[a, x, e] - want) < 1e-12


@given(seed=st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_table_matches_loop_oracle_and_map_in_range(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, A=2, Se=2, S=3, X=2, Z=2, zeros=0.2)
    res = optimal_estimator(m)
    assert np.array_equal(res.table, loop_estimator(m))
    assert res.table.min() >= 0 and res.table.max() < m.sizes["S_hat"]
    assert np.all(res.distortion_map >= 0) and np.all(res.distortion_map <= m.d_max)


def _all_tables_distortion(model, policy):
    """Distortion of every one of the |S_hat|^cells tables, by loop-built cell costs."""
    sz = model.sizes
    cells = list(itertools.product(range(sz["A"]), range(sz["X"]), range(sz["S_e"]), range(sz["Z"])))
    cost = np.zeros((len(cells), sz["S_hat"]))
    for k, (a, x, e, z) in enumerate(cells):
        q = sum(policy.p_a[a] * policy.p_u[a, e, u] * policy.p_x[u, e, x] for u in range(policy.u_size))
        for s, sh in itertools.product(range(sz["S"]), range(sz["S_hat"])):
            w = model.state_kernel[a, e, s].sum() * model.channel_kernel[x, s, :, z].sum()
            cost[k, sh] += q * w * model.distortion[s, sh]
    choices = np.array(list(itertools.product(range(sz["S_hat"]), repeat=len(cells))))
    totals = cost[np.arange(len(cells)), choices].sum(axis=1)
    return cells, cost, choices, totals


def test_exhaustive_optimality_on_binary_model():
    m = se_noisy_model()
    a_model = IsacModel(np.repeat(m.state_kernel, 2, axis=0), m.channel_kernel, m.distortion)
    pol = random_policy(np.random.default_rng(5), a_model, u_size=2)
    cells, cost, choices, totals = _all_tables_distortion(a_model, pol)
    assert len(totals) == 2**16
    g = optimal_estimator(a_model).table
    best = policy_distortion(a_model, pol, g)
    assert best <= totals.min() + 1e-12
    assert abs(best - loop_distortion(a_model, pol, g)) < 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_every_policy_prefers_g_star(seed):
    rng = np.random.default_rng(100 + seed)
    m = random_model(rng, A=1, Se=2, S=2, X=2, Z=2, zeros=0.1)
    g = optimal_estimator(m).table
    for _ in range(5):
        pol = random_policy(rng, m, u_size=2)
        _, _, choices, totals = _all_tables_distortion(m, pol)
        assert policy_distortion(m, pol, g) <= totals.min() + 1e-12


# -- nonstationary ---------------------------------------------------------------------------

def test_nonstationary_estimators():
    m1, m2 = se_noisy_model(p_z=0.1), se_noisy_model(p_z=0.45)
    assert len(nonstationary_estimators([m1] * 3)) == 3
    t = nonstationary_estimators([m1, m1])
    assert np.array_equal(t[0], t[1])
    assert np.array_equal(nonstationary_estimators([m1])[0], optimal_estimator(m1).table)
    t1, t2 = nonstationary_estimators([m1, m2])
    assert np.array_equal(t1, loop_estimator(m1))
    assert np.array_equal(t2, loop_estimator(m2))
    # strong Z-noise lets S_e win, weak Z-noise lets Z win
    assert t1[0, 0, 0, 1] == 1 and t2[0, 0, 0, 1] == 0
    with pytest.raises(ValueError):
        nonstationary_estimators([])


# -- policy_distortion -----------------------------------------------------------------------

def test_zero_distortion_and_noiseless_cases():
    rng = np.random.default_rng(6)
    m = random_model(rng, A=2, Se=2, S=2, X=2)
    zero = IsacModel(m.state_kernel, m.channel_kernel, np.zeros((2, 2)))
    pol = random_policy(rng, m)
    assert policy_distortion(zero, pol) == 0.0
    nz = noiseless_z_model(rng, S=2)
    assert abs(policy_distortion(nz, random_policy(rng, nz))) < 1e-15


@given(seed=st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_policy_distortion_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, A=2, Se=2, S=2, Sd=2, X=2, Z=2, zeros=0.15)
    pol = random_policy(rng, m, u_size=2, zeros=0.15)
    table = rng.integers(0, 2, size=(2, 2, 2, 2))
    assert abs(policy_distortion(m, pol, table) - loop_distortion(m, pol, table)) < 1e-12


def test_policy_distortion_dimension_errors():
    rng = np.random.default_rng(7)
    m = random_model(rng)
    with pytest.raises(ValueError):
        policy_distortion(m, random_policy(rng, m), np.zeros((2, 2, 2), dtype=int))
    with pytest.raises(ValueError):
        policy_distortion(m, random_policy(rng, m), np.full((2, 2, 2, 2), 5))


# -- invariants ------------------------------------------------------------------------------

# splits of a Z-marginal across |Y| = 2 that sum back to it exactly in floating point
EXACT_Y_LAWS = np.array([[0.5, 0.5], [1.0, 0.0], [0.0, 1.0]])


def _channel_with_y(rng, z_marg):
    y_law = EXACT_Y_LAWS[rng.integers(3, size=z_marg.shape[:2])]  # (X, S, Y)
    return y_law[:, :, :, None] * z_marg[:, :, None, :]


@given(seed=st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_posterior_rows_and_y_invariance(seed):
    rng = np.random.default_rng(seed)
    base = random_model(rng, A=2, Se=2, S=3, X=2, Y=2, Z=2)
    z_marg = base.channel_kernel.sum(axis=2)  # (X, S, Z)
    m = IsacModel(base.state_kernel, _channel_with_y(rng, z_marg), base.distortion)
    m2 = IsacModel(base.state_kernel, _channel_with_y(rng, z_marg), base.distortion)
    for a, x, e, z in itertools.product(range(2), repeat=4):
        p1, p2 = posterior(m, a, x, e, z), posterior(m2, a, x, e, z)
        assert abs(p1.sum() - 1) < 1e-12
        assert p1.tobytes() == p2.tobytes()
    r1, r2 = optimal_estimator(m), optimal_estimator(m2)
    for f1, f2 in zip(r1, r2):
        assert f1.tobytes() == f2.tobytes()


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_memoryless_block_distortion_is_n_times_single_letter(n):
    rng = np.random.default_rng(8)
    m = random_model(rng, A=1, Se=2, S=2, X=2, Z=2)
    pol = random_policy(rng, m)
    g = optimal_estimator(m).table
    single = {}
    for (a, u, e, s, sd, x, y, z), p in loop_joint(m, pol).items():
        key = (a, x, e, s, z)
        single[key] = single.get(key, 0.0) + p
    keys = list(single)
    probs = np.array([single[k] for k in keys])
    dist = np.array([m.distortion[s, g[a, x, e, z]] for a, x, e, s, z in keys])
    total = 0.0
    for block in itertools.product(range(len(keys)), repeat=n):
        idx = list(block)
        total += np.prod(probs[idx]) * dist[idx].sum()
    assert abs(total - n * policy_distortion(m, pol, g)) < 1e-10
