"""Shared fixtures, random-instance builders and independent brute-force oracles."""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from isac_cd.model import IsacModel, Policy, demo_model, demo_policy

# acceptance lines collected during the run and echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def demo():
    return demo_model(), demo_policy()


# -- random instances -------------------------------------------------------------------

def random_kernel(rng, cond_shape, out_shape, zeros=0.0):
    """Row-stochastic table of shape cond_shape + out_shape; ``zeros`` knocks out entries."""
    k = rng.random(tuple(cond_shape) + tuple(out_shape)) + 1e-3
    if zeros:
        mask = rng.random(k.shape) < zeros
        k = np.where(mask, 0.0, k)
    flat = k.reshape(int(np.prod(cond_shape, dtype=int)), -1)
    for row in flat:
        if row.sum() == 0:
            row[rng.integers(row.size)] = 1.0
    flat /= flat.sum(axis=1, keepdims=True)
    return flat.reshape(k.shape)


def random_model(rng, A=2, Se=2, S=2, Sd=1, X=2, Y=2, Z=2, Shat=None, zeros=0.0, hamming=False):
    Shat = S if Shat is None else Shat
    st = random_kernel(rng, (A,), (Se, S, Sd), zeros)
    ch = random_kernel(rng, (X, S), (Y, Z), zeros)
    if hamming:
        d = 1.0 - np.eye(S, Shat)
    else:
        d = rng.random((S, Shat))
    return IsacModel(st, ch, d)


def random_policy(rng, model, u_size=2, zeros=0.0):
    s = model.sizes
    return Policy(random_kernel(rng, (), (s["A"],), zeros),
                  random_kernel(rng, (s["A"], s["S_e"]), (u_size,), zeros),
                  random_kernel(rng, (u_size, s["S_e"]), (s["X"],), zeros))


# -- oracles written with plain loops, independent of the library ------------------------

def loop_joint(model, policy):
    """dict (a,u,se,s,sd,x,y,z) -> probability by nested loops."""
    sz = model.sizes
    st, ch = model.state_kernel, model.channel_kernel
    out = {}
    for a, u, se, s, sd, x, y, z in itertools.product(
            range(sz["A"]), range(policy.u_size), range(sz["S_e"]), range(sz["S"]), range(sz["S_d"]),
            range(sz["X"]), range(sz["Y"]), range(sz["Z"])):
        p = (policy.p_a[a] * st[a, se, s, sd] * policy.p_u[a, se, u] * policy.p_x[u, se, x]
             * ch[x, s, y, z])
        if p > 0:
            out[a, u, se, s, sd, x, y, z] = out.get((a, u, se, s, sd, x, y, z), 0.0) + p
    return out


def loop_marginal(joint, idx):
    out = {}
    for key, p in joint.items():
        k = tuple(key[i] for i in idx)
        out[k] = out.get(k, 0.0) + p
    return out


def loop_entropy(joint, idx):
    return -sum(p * math.log(p) for p in loop_marginal(joint, idx).values() if p > 0)


# joint key positions
A_, U_, SE_, S_, SD_, X_, Y_, Z_ = range(8)


def loop_objective(model, policy):
    """(I(A,U;Y,S_d), I(U;S_e|A)) from entropies of the loop joint."""
    j = loop_joint(model, policy)
    h = lambda *idx: loop_entropy(j, idx)  # noqa: E731
    i_auy = h(A_, U_) + h(Y_, SD_) - h(A_, U_, Y_, SD_)
    i_use = h(U_, A_) + h(SE_, A_) - h(A_) - h(U_, SE_, A_)
    return i_auy, i_use


def loop_estimator(model):
    """g*(a,x,se,z) by explicit Bayes sums with lowest-index ties; unreachable -> 0."""
    sz = model.sizes
    table = np.zeros((sz["A"], sz["X"], sz["S_e"], sz["Z"]), dtype=int)
    for a, x, se, z in itertools.product(range(sz["A"]), range(sz["X"]), range(sz["S_e"]), range(sz["Z"])):
        w = [sum(model.state_kernel[a, se, s, :]) * sum(model.channel_kernel[x, s, :, z]) for s in range(sz["S"])]
        tot = sum(w)
        if tot <= 0:
            continue
        costs = [sum(w[s] / tot * model.distortion[s, sh] for s in range(sz["S"])) for sh in range(sz["S_hat"])]
        best = min(costs)
        table[a, x, se, z] = next(i for i, c in enumerate(costs) if c <= best + 1e-12)
    return table


def loop_distortion(model, policy, table):
    j = loop_joint(model, policy)
    return sum(p * model.distortion[k[S_], table[k[A_], k[X_], k[SE_], k[Z_]]] for k, p in j.items())


def binary_entropy_bits(p):
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def state_free_bsc(p=0.1, actions=2):
    """Channel BSC(p) with a dummy binary state that Z observes perfectly.

    The action alphabet carries the input randomness for deterministic-policy
    enumeration; the state law does not depend on the action.
    """
    st = np.zeros((actions, 1, 2, 1))
    st[:, 0, :, 0] = 0.5
    ch = np.zeros((2, 2, 2, 2))
    for x in range(2):
        for s in range(2):
            ch[x, s, x, s] = 1 - p
            ch[x, s, 1 - x, s] = p
    return IsacModel(st, ch, 1.0 - np.eye(2))


def _entropy_over(p, keep):
    """Entropy of the marginal on axes ``keep`` (batch axis 0 always kept)."""
    drop = tuple(i for i in range(1, p.ndim) if i not in keep)
    m = p.sum(axis=drop).reshape(p.shape[0], -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.where(m > 0, m * np.log(m), 0.0).sum(axis=1)


def brute_force_class(model, u_size, step):
    """(objective, distortion, (grid, u_maps, x_maps, index triples)) for every deterministic policy.

    Each policy's full joint over (A,U,S_e,S,S_d,X,Y,Z) is built with einsum and
    the two information terms are read off plain entropies.
    """
    sz = model.sizes
    nA, nSe, nX = sz["A"], sz["S_e"], sz["X"]
    m = int(round(1 / step))
    grid = np.array([c + (m - sum(c),) for c in itertools.product(range(m + 1), repeat=nA - 1)
                     if sum(c) <= m], dtype=float) / m
    u_maps = list(itertools.product(range(u_size), repeat=nA * nSe))
    x_maps = list(itertools.product(range(nX), repeat=u_size * nSe))
    pu = np.zeros((len(u_maps), nA, nSe, u_size))
    for k, mp in enumerate(u_maps):
        for i, u in enumerate(mp):
            pu[k, i // nSe, i % nSe, u] = 1.0
    px = np.zeros((len(x_maps), u_size, nSe, nX))
    for k, mp in enumerate(x_maps):
        for i, x in enumerate(mp):
            px[k, i // nSe, i % nSe, x] = 1.0
    table = loop_estimator(model)
    # d_sel[a, x, s, z] summed later against the joint
    d_sel = np.zeros((nA, nX, nSe, sz["S"], sz["Z"]))
    for a, x, e, s, z in itertools.product(range(nA), range(nX), range(nSe), range(sz["S"]), range(sz["Z"])):
        d_sel[a, x, e, s, z] = model.distortion[s, table[a, x, e, z]]
    objs, dists, idx = [], [], []
    for iu in range(len(u_maps)):
        for ix in range(len(x_maps)):
            # J[g, a, u, e, s, d, x, y, z]
            j = np.einsum("ga,aesd,aeu,uex,xsyz->gauesdxyz", grid, model.state_kernel, pu[iu], px[ix],
                          model.channel_kernel)
            au, yd, auyd = (1, 2), (5, 7), (1, 2, 5, 7)
            i_auy = _entropy_over(j, au) + _entropy_over(j, yd) - _entropy_over(j, auyd)
            i_use = (_entropy_over(j, (1, 2)) + _entropy_over(j, (1, 3)) - _entropy_over(j, (1,))
                     - _entropy_over(j, (1, 2, 3)))
            dist = np.einsum("gauesdxyz,axesz->g", j, d_sel)
            objs.append(i_auy - i_use)
            dists.append(dist)
            idx += [(g, iu, ix) for g in range(len(grid))]
    return np.concatenate(objs), np.concatenate(dists), (grid, pu, px, idx)


def brute_force_capacity(model, D, u_size, step):
    obj, dist, _ = brute_force_class(model, u_size, step)
    ok = dist <= D + 1e-9
    return float(obj[ok].max()) if ok.any() else None
