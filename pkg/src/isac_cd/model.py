"""Discrete-memoryless ISAC instances: validation, JSON I/O and joint assembly."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .prob import ROW_TOL, JointDist, StochasticError, joint_from_factors

ALPHABETS = ("A", "X", "S_e", "S", "S_d", "Y", "Z", "S_hat")
JOINT_AXES = ("A", "U", "S_e", "S", "S_d", "X", "Y", "Z")


class ModelError(ValueError):
    """Malformed model or policy input; ``path`` locates the offending field."""

    def __init__(self, message, path=()):
        super().__init__(message)
        self.path = tuple(path)


@dataclass(frozen=True, eq=False)
class IsacModel:
    """State kernel P(s_e,s,s_d|a), channel kernel P(y,z|x,s), distortion d[s,s_hat].

    Shapes: ``state_kernel`` (A, S_e, S, S_d), ``channel_kernel`` (X, S, Y, Z),
    ``distortion`` (S, S_hat). Empty alphabets (no CSI, no feedback) are size 1.
    """

    state_kernel: np.ndarray
    channel_kernel: np.ndarray
    distortion: np.ndarray
    name: str = ""

    def __post_init__(self):
        for attr in ("state_kernel", "channel_kernel", "distortion"):
            arr = np.array(getattr(self, attr), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        if self.state_kernel.ndim != 4 or self.channel_kernel.ndim != 4 or self.distortion.ndim != 2:
            raise ModelError("state_kernel and channel_kernel must be 4-d, distortion 2-d")
        if self.state_kernel.shape[2] != self.channel_kernel.shape[1]:
            raise ModelError("state alphabet size differs between state and channel kernels")
        if self.distortion.shape[0] != self.state_kernel.shape[2]:
            raise ModelError("distortion rows must match the state alphabet")

    @property
    def sizes(self):
        a, se, s, sd = self.state_kernel.shape
        x, _, y, z = self.channel_kernel.shape
        return {"A": a, "X": x, "S_e": se, "S": s, "S_d": sd, "Y": y, "Z": z,
                "S_hat": self.distortion.shape[1]}

    @property
    def d_max(self):
        return float(self.distortion.max())

    # derived single-letter tables used across modules
    @property
    def p_se_given_a(self):
        return self.state_kernel.sum(axis=(2, 3))

    @property
    def p_se_s_given_a(self):
        return self.state_kernel.sum(axis=3)

    @property
    def p_z_given_xs(self):
        return self.channel_kernel.sum(axis=2)

    @property
    def p_y_given_xs(self):
        return self.channel_kernel.sum(axis=3)

    def __eq__(self, other):
        if not isinstance(other, IsacModel):
            return NotImplemented
        return (np.array_equal(self.state_kernel, other.state_kernel)
                and np.array_equal(self.channel_kernel, other.channel_kernel)
                and np.array_equal(self.distortion, other.distortion))


@dataclass(frozen=True, eq=False)
class Policy:
    """(P_A, P_{U|A,S_e}, P_{X|U,S_e}) with shapes (A,), (A,S_e,U), (U,S_e,X)."""

    p_a: np.ndarray
    p_u: np.ndarray
    p_x: np.ndarray

    def __post_init__(self):
        for attr in ("p_a", "p_u", "p_x"):
            arr = np.array(getattr(self, attr), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)

    @property
    def u_size(self):
        return self.p_u.shape[-1]

    def __eq__(self, other):
        if not isinstance(other, Policy):
            return NotImplemented
        return (np.array_equal(self.p_a, other.p_a) and np.array_equal(self.p_u, other.p_u)
                and np.array_equal(self.p_x, other.p_x))


def u_given_a(model, policy):
    """P(u|a) = sum_se P(se|a) P(u|a,se)."""
    return np.einsum("ae,aeu->au", model.p_se_given_a, policy.p_u)


def _rows_report(table, n_out, label, tol=ROW_TOL):
    problems = []
    if np.any(~np.isfinite(table)):
        for idx in np.argwhere(~np.isfinite(table)):
            problems.append(f"{label}{list(map(int, idx))}: non-finite entry")
        return problems
    for idx in np.argwhere(table < 0):
        problems.append(f"{label}{list(map(int, idx))}: negative probability {float(table[tuple(idx)])!r}")
    sums = table.sum(axis=tuple(range(table.ndim - n_out, table.ndim)))
    for idx in np.argwhere(np.abs(sums - 1.0) > tol):
        problems.append(f"{label}{list(map(int, idx))}: row sums to {float(sums[tuple(idx)])!r}")
    return problems


def validate(model: IsacModel):
    """List every violated invariant with its index path; empty when valid."""
    problems = []
    problems += _rows_report(model.state_kernel, 3, "state_kernel")
    problems += _rows_report(model.channel_kernel, 2, "channel_kernel")
    d = model.distortion
    for idx in np.argwhere(~np.isfinite(d)):
        problems.append(f"distortion{list(map(int, idx))}: non-finite entry")
    for idx in np.argwhere(d < 0):
        problems.append(f"distortion{list(map(int, idx))}: negative distortion {float(d[tuple(idx)])!r}")
    for name, n in model.sizes.items():
        if n < 1:
            problems.append(f"alphabets.{name}: size {n} < 1")
    return problems


def validate_policy(model: IsacModel, policy: Policy):
    s = model.sizes
    u = policy.u_size
    problems = []
    if policy.p_a.shape != (s["A"],):
        problems.append(f"p_a: shape {policy.p_a.shape}, expected {(s['A'],)}")
    if policy.p_u.shape != (s["A"], s["S_e"], u):
        problems.append(f"p_u_given_a_se: shape {policy.p_u.shape}, expected {(s['A'], s['S_e'], u)}")
    if policy.p_x.shape != (u, s["S_e"], s["X"]):
        problems.append(f"p_x_given_u_se: shape {policy.p_x.shape}, expected {(u, s['S_e'], s['X'])}")
    if problems:
        return problems
    problems += _rows_report(policy.p_a, 1, "p_a")
    problems += _rows_report(policy.p_u, 1, "p_u_given_a_se")
    problems += _rows_report(policy.p_x, 1, "p_x_given_u_se")
    return problems


def check_policy(model, policy):
    problems = validate_policy(model, policy)
    if problems:
        raise ModelError("; ".join(problems))


def assemble_joint(model: IsacModel, policy: Policy) -> JointDist:
    """Single-letter joint over (A, U, S_e, S, S_d, X, Y, Z)."""
    check_policy(model, policy)
    factors = [
        (policy.p_a, (), ("A",)),
        (model.state_kernel, ("A",), ("S_e", "S", "S_d")),
        (policy.p_u, ("A", "S_e"), ("U",)),
        (policy.p_x, ("U", "S_e"), ("X",)),
        (model.channel_kernel, ("X", "S"), ("Y", "Z")),
    ]
    try:
        j = joint_from_factors(factors)
    except StochasticError as exc:
        raise ModelError(str(exc)) from exc
    return j.reorder(JOINT_AXES)


# -- JSON I/O ---------------------------------------------------------------

def _load_schema(name):
    return json.loads(resources.files("isac_cd").joinpath("schema", name).read_text())


def _parse_json(text, source):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{source}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _schema_check(doc, schema_name, source):
    schema = _load_schema(schema_name)
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        err = errors[0]
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        if err.validator == "required":
            missing = [f for f in err.validator_value if isinstance(err.instance, dict) and f not in err.instance]
            path = ".".join(filter(None, [".".join(str(p) for p in err.absolute_path), missing[0] if missing else ""]))
        raise ModelError(f"{source}: schema violation at {path}: {err.message}", path=tuple(err.absolute_path))


def _nested(values, shape, field_name):
    """Convert nested lists to an array, naming the first ragged row."""

    def walk(v, depth, path):
        if depth == len(shape):
            if isinstance(v, list):
                raise ModelError(f"{field_name}{path}: too many nesting levels", path=(field_name, *path))
            return
        if not isinstance(v, list) or len(v) != shape[depth]:
            got = len(v) if isinstance(v, list) else "scalar"
            raise ModelError(
                f"{field_name}{path}: expected {shape[depth]} entries, got {got}",
                path=(field_name, *path),
            )
        for i, item in enumerate(v):
            walk(item, depth + 1, path + [i])

    walk(values, 0, [])
    return np.array(values, dtype=float)


def model_from_dict(doc, source="<model>"):
    _schema_check(doc, "model.json", source)
    al = doc["alphabets"]
    st = _nested(doc["state_kernel"], (al["A"], al["S_e"], al["S"], al["S_d"]), "state_kernel")
    ch = _nested(doc["channel_kernel"], (al["X"], al["S"], al["Y"], al["Z"]), "channel_kernel")
    d = _nested(doc["distortion"], (al["S"], al["S_hat"]), "distortion")
    return IsacModel(st, ch, d, name=doc.get("name", ""))


def model_to_dict(model: IsacModel):
    doc = {
        "alphabets": model.sizes,
        "state_kernel": model.state_kernel.tolist(),
        "channel_kernel": model.channel_kernel.tolist(),
        "distortion": model.distortion.tolist(),
    }
    if model.name:
        doc = {"name": model.name, **doc}
    return doc


def load_model(path) -> IsacModel:
    path = Path(path)
    doc = _parse_json(path.read_text(), str(path))
    return model_from_dict(doc, str(path))


def save_model(model: IsacModel, path):
    # json writes floats with repr(), which round-trips bit-exactly
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def policy_from_dict(doc, source="<policy>"):
    _schema_check(doc, "policy.json", source)
    p_a = np.array(doc["p_a"], dtype=float)
    a = len(p_a)
    u = int(doc["u_size"])
    se = len(doc["p_u_given_a_se"][0]) if a and isinstance(doc["p_u_given_a_se"][0], list) else 0
    p_u = _nested(doc["p_u_given_a_se"], (a, se, u), "p_u_given_a_se")
    try:
        x = len(doc["p_x_given_u_se"][0][0])
    except (IndexError, TypeError):
        raise ModelError("p_x_given_u_se: expected a [u][s_e][x] nested array", path=("p_x_given_u_se",)) from None
    p_x = _nested(doc["p_x_given_u_se"], (u, se, x), "p_x_given_u_se")
    return Policy(p_a, p_u, p_x)


def policy_to_dict(policy: Policy):
    return {
        "u_size": policy.u_size,
        "p_a": policy.p_a.tolist(),
        "p_u_given_a_se": policy.p_u.tolist(),
        "p_x_given_u_se": policy.p_x.tolist(),
    }


def load_policy(path) -> Policy:
    path = Path(path)
    doc = _parse_json(path.read_text(), str(path))
    return policy_from_dict(doc, str(path))


def save_policy(policy: Policy, path):
    Path(path).write_text(json.dumps(policy_to_dict(policy), indent=1) + "\n")


def demo_model() -> IsacModel:
    """The shipped binary demo instance."""
    text = resources.files("isac_cd").joinpath("data", "demo.json").read_text()
    return model_from_dict(json.loads(text), "demo.json")


def demo_policy() -> Policy:
    text = resources.files("isac_cd").joinpath("data", "demo_policy.json").read_text()
    return policy_from_dict(json.loads(text), "demo_policy.json")
