"""Optimal symbolwise state estimator and distortion evaluation."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .model import IsacModel, Policy, check_policy

TIE_TOL = 1e-12


class UnreachableObservation(ValueError):
    """The conditioning tuple (a, x, s_e, z) has zero probability."""


class EstimatorResult(NamedTuple):
    table: np.ndarray               # (A, X, S_e, Z) -> s_hat index
    distortion_map: np.ndarray      # (A, X, S_e): E[d(S, g*) | a, x, s_e]
    posterior_expected: np.ndarray  # (A, X, S_e, Z): E[d(S, g*) | a, x, s_e, z]
    unreachable: np.ndarray         # (A, X, S_e, Z) boolean mask


def _weights(model: IsacModel):
    # w[a, x, se, z, s] = P(se, s | a) P(z | x, s)
    return np.einsum("aes,xsz->axezs", model.p_se_s_given_a, model.p_z_given_xs)


def posterior(model: IsacModel, a, x, s_e, z):
    """P(s | a, x, s_e, z); only the Z-marginal of the channel enters."""
    num = model.p_se_s_given_a[a, s_e, :] * model.p_z_given_xs[x, :, z]
    den = num.sum()
    if not den > 0:
        raise UnreachableObservation(f"observation (a={a}, x={x}, s_e={s_e}, z={z}) has zero probability")
    return num / den


def _lowest_argmin(cost, tol=TIE_TOL):
    # first index within tol of the minimum along the last axis
    best = cost.min(axis=-1, keepdims=True)
    return np.argmax(cost <= best + tol, axis=-1)


def optimal_estimator(model: IsacModel) -> EstimatorResult:
    """g*(a,x,s_e,z) = argmin over s_hat of the posterior-expected distortion."""
    w = _weights(model)
    den = w.sum(axis=-1)
    unreachable = ~(den > 0)
    cost = w @ model.distortion  # (A,X,Se,Z,S_hat), unnormalized
    with np.errstate(divide="ignore", invalid="ignore"):
        post_cost = np.where(unreachable[..., None], 0.0, cost / den[..., None])
    table = _lowest_argmin(post_cost)
    table[unreachable] = 0
    post_exp = np.take_along_axis(post_cost, table[..., None], axis=-1)[..., 0]
    e = np.take_along_axis(cost, table[..., None], axis=-1)[..., 0].sum(axis=-1)
    p_se = model.p_se_given_a  # (A, Se)
    with np.errstate(divide="ignore", invalid="ignore"):
        dmap = np.where(p_se[:, None, :] > 0, e / p_se[:, None, :], 0.0)
    # guard tiny negative round-off and cap at D_max
    dmap = np.clip(dmap, 0.0, model.d_max)
    for arr in (table, dmap, post_exp, unreachable):
        arr.setflags(write=False)
    return EstimatorResult(table, dmap, post_exp, unreachable)


def nonstationary_estimators(models):
    """Per-symbol optimal tables for a list of (time-varying) models."""
    models = list(models)
    if not models:
        raise ValueError("need at least one model")
    return [optimal_estimator(m).table for m in models]


def weighted_cost(model: IsacModel, table) -> np.ndarray:
    """e[a, x, s_e] = sum_{s,z} P(s_e, s | a) P(z | x, s) d(s, table[a, x, s_e, z])."""
    table = np.asarray(table)
    s = model.sizes
    shape = (s["A"], s["X"], s["S_e"], s["Z"])
    if table.shape != shape:
        raise ValueError(f"estimator table has shape {table.shape}, expected {shape}")
    if table.min() < 0 or table.max() >= s["S_hat"]:
        raise ValueError("estimator table index out of range")
    w = _weights(model)  # (A,X,Se,Z,S)
    d_sel = model.distortion.T[table]  # (A,X,Se,Z,S): d(s, table[...])
    return np.einsum("axezs,axezs->axe", w, d_sel)


def input_law(model: IsacModel, policy: Policy) -> np.ndarray:
    """q[a, s_e, x] = P(a) P(x | a, s_e) induced by a policy (without P(s_e|a))."""
    p_x_given_a_se = np.einsum("aeu,uex->aex", policy.p_u, policy.p_x)
    return policy.p_a[:, None, None] * p_x_given_a_se


def policy_distortion(model: IsacModel, policy: Policy, table=None) -> float:
    """Expected per-symbol distortion of ``table`` (default g*) under ``policy``."""
    check_policy(model, policy)
    if table is None:
        table = optimal_estimator(model).table
    e = weighted_cost(model, table)
    return float(np.einsum("aex,axe->", input_law(model, policy), e))
