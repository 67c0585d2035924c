"""Command-line entry point: ``isac-cd <subcommand> ...``.

Results go to stdout as CSV; a JSON run manifest goes to stderr (or
``--manifest PATH``). Exit codes: 0 success, 1 domain infeasibility,
2 input or schema errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from importlib import metadata

import numpy as np

from . import codingsim, gaussian, spectrum
from .estimator import optimal_estimator
from .model import ModelError, assemble_joint, demo_model, demo_policy, load_model, load_policy, validate, validate_policy
from .solver import InfeasibleError, SolverOptions, _Ctx, _min_distortion, capacity_at, default_u_size

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT = 0, 1, 2
LN2 = math.log(2.0)


class CliError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def fmt(v):
    """Locale-independent CSV cell: '.10g' for reals, 0/1 for booleans."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    return str(v)


def _emit(out, header, rows):
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])


def _scale(units):
    return 1.0 if units == "nats" else 1.0 / LN2


def _threads(args):
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            raise CliError("--threads must be >= 1")
        return args.threads
    env = os.environ.get("ISAC_CD_THREADS")
    if env:
        try:
            k = int(env)
        except ValueError:
            raise CliError(f"ISAC_CD_THREADS must be an integer, got {env!r}") from None
        if k < 1:
            raise CliError("ISAC_CD_THREADS must be >= 1")
        return k
    return os.cpu_count() or 1


def _dgrid(text):
    """``a:b:n`` -> n evenly spaced points from a to b."""
    try:
        a, b, n = text.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like a:b:n, got {text!r}") from None
    if n < 1 or (n > 1 and not b > a):
        raise argparse.ArgumentTypeError(f"grid {text!r} needs n >= 1 and b > a")
    return list(np.linspace(a, b, n)) if n > 1 else [a]


def _load_pair(args):
    if getattr(args, "demo", False):
        return demo_model(), demo_policy()
    if not args.model or not args.policy:
        raise CliError("need --model and --policy (or --demo)")
    return _load_model(args.model), _load_policy(args.policy)


def _load_model(path):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise CliError(f"{path}: no such file") from None


def _load_policy(path):
    try:
        return load_policy(path)
    except FileNotFoundError:
        raise CliError(f"{path}: no such file") from None


def _checked_model(path):
    m = _load_model(path)
    problems = validate(m)
    if problems:
        raise CliError(f"{path}: " + "; ".join(problems))
    return m


# -- subcommands -------------------------------------------------------------------

def cmd_validate(args, out):
    m = _load_model(args.model)
    problems = validate(m)
    if args.policy:
        problems += validate_policy(m, _load_policy(args.policy))
    _emit(out, ["problem"], [[p] for p in problems])
    return EXIT_INPUT if problems else EXIT_OK


def cmd_capacity(args, out):
    m = _checked_model(args.model)
    grid = sorted(set((args.D or []) + (args.dgrid or [])))
    if not grid:
        raise CliError("give at least one distortion level with --D or --dgrid")
    u_size = args.u_size or default_u_size(m)
    d_min, _ = _min_distortion(_Ctx(m), u_size)
    low = [d for d in grid if d < d_min - 1e-9]
    if low:
        raise CliError(f"D={fmt(low[0])} is below the minimum achievable distortion {fmt(d_min)}",
                       EXIT_INFEASIBLE)
    opts = SolverOptions(u_size=u_size, mode=args.mode, restarts=args.restarts, iterations=args.iterations,
                         seed=args.seed, grid_step=args.grid_step, threads=_threads(args))
    rows, warm = [], ()
    for d in grid:
        try:
            res = capacity_at(m, d, opts, warm=warm)
        except InfeasibleError as exc:
            raise CliError(str(exc), EXIT_INFEASIBLE) from None
        warm = (res.policy,)
        rows.append([d, res.capacity, res.capacity / LN2, res.feasible, res.mode, res.restarts_used, args.seed])
    _emit(out, ["D", "C_nats", "C_bits", "feasible", "optimizer_mode", "restarts_used", "seed"], rows)
    return EXIT_OK


def cmd_estimator(args, out):
    m = _checked_model(args.model)
    est = optimal_estimator(m)
    rows = []
    for idx in np.ndindex(est.table.shape):
        rows.append([*idx, int(est.table[idx]), float(est.posterior_expected[idx])])
    _emit(out, ["a", "x", "s_e", "z", "s_hat", "posterior_expected_d"], rows)
    return EXIT_OK


def _process(args):
    if args.bsc:
        w = args.weights or [1.0 / len(args.bsc)] * len(args.bsc)
        if len(w) != len(args.bsc):
            raise CliError("--weights needs one value per --bsc")
        if any(not 0 <= p <= 1 for p in args.bsc):
            raise CliError("BSC crossover probabilities must lie in [0, 1]")
        pairs = [(wi, spectrum.binary_symmetric_joint(p)) for wi, p in zip(w, args.bsc) if wi > 0]
        return spectrum.ProcessModel.mixture(pairs, "X", "Y")
    m, pol = _load_pair(args)
    split = [tuple(filter(None, s.split(","))) for s in (args.axes_a, args.axes_b, args.axes_c or "")]
    return spectrum.ProcessModel.iid(assemble_joint(m, pol), *split)


def cmd_spectrum(args, out):
    try:
        proc = _process(args)
        est, d = spectrum.estimate_spectral_rates(proc, args.n, args.samples, args.delta, args.seed,
                                                  _threads(args), return_samples=True)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    k = _scale(args.units)
    rows = [[args.delta, est.inf_rate * k, est.sup_rate * k, est.mean * k, est.stderr * k, args.n, args.samples,
             args.units]]
    for dl, (lo, hi) in sorted(est.sensitivity.items()):
        rows.append([dl, lo * k, hi * k, est.mean * k, est.stderr * k, args.n, args.samples, args.units])
    if args.samples_out:
        with open(args.samples_out, "w", newline="") as fh:
            _emit(fh, ["draw", "density"], ((i, v * k) for i, v in enumerate(d)))
    _emit(out, ["delta", "inf_rate", "sup_rate", "mean", "stderr", "n", "samples", "units"], rows)
    return EXIT_OK


def cmd_dpc(args, out):
    try:
        p = gaussian.DpcParams(args.px, args.sigma, args.sigma_z, args.sigma_e, args.sigma_s)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    pt = gaussian.dpc_boundary(p)
    k = _scale(args.units)
    _emit(out, ["rate", "distortion", "a", "b", "c", "converse_distortion", "units"],
          [[pt.rate * k, pt.distortion, pt.a, pt.b, pt.c, gaussian.dpc_converse_bound(p), args.units]])
    return EXIT_OK


def _quad(args):
    return gaussian.QuadOptions(method=args.quad, nodes=args.nodes)


def cmd_fading(args, out):
    try:
        law = gaussian.StateDist.parse(args.dist, args.sigma_s)
        p = gaussian.FadingParams(args.px, args.sigma, args.sigma_z, args.sigma_s, law)
        curve = gaussian.fading_cd_curve(p, args.dgrid, _quad(args))
    except ValueError as exc:
        raise CliError(str(exc)) from None
    if not curve.feasible.any():
        raise CliError("every grid point lies below the smallest attainable E[H]", EXIT_INFEASIBLE)
    k = _scale(args.units)
    rows = [[d, c * k, a, f, args.units] for d, c, a, f in zip(curve.d, curve.c, curve.alpha, curve.feasible)]
    _emit(out, ["D", "C", "alpha", "feasible", "units"], rows)
    return EXIT_OK


def cmd_mixed_fading(args, out):
    try:
        p1 = gaussian.FadingParams(args.px, args.sigma, args.sigma_z, args.sigma_s1,
                                   gaussian.StateDist.parse(args.dist1, args.sigma_s1))
        p2 = gaussian.FadingParams(args.px, args.sigma, args.sigma_z, args.sigma_s2,
                                   gaussian.StateDist.parse(args.dist2, args.sigma_s2))
        pts = [gaussian.mixed_fading_rate(p1, p2, args.beta, d, _quad(args)) for d in args.dgrid]
    except ValueError as exc:
        raise CliError(str(exc)) from None
    if not any(p.feasible for p in pts):
        raise CliError("every grid point lies below the smallest attainable mixed E[H]", EXIT_INFEASIBLE)
    k = _scale(args.units)
    rows = [[d, p.rate * k, p.alpha, p.feasible, p.rates[0] * k, p.rates[1] * k, args.units]
            for d, p in zip(args.dgrid, pts)]
    _emit(out, ["D", "rate", "alpha", "feasible", "rate1", "rate2", "units"], rows)
    return EXIT_OK


def cmd_simulate(args, out):
    m, pol = _load_pair(args)
    if args.rate is None or args.bin_rate is None:
        r, rb = codingsim.rates_inside(m, pol, args.gamma, args.margin)
        rate = r if args.rate is None else args.rate
        bin_rate = rb if args.bin_rate is None else args.bin_rate
    else:
        rate, bin_rate = args.rate, args.bin_rate
    try:
        cfg = codingsim.SchemeConfig(m, pol, args.n, rate, bin_rate, args.gamma, trials=args.trials,
                                     seed=args.seed, variant=args.variant, threads=_threads(args))
        codingsim.check_resources(cfg)
        rep = codingsim.run_experiment(cfg, args.d_target)
    except (ValueError, ModelError) as exc:
        raise CliError(str(exc)) from None
    _emit(out, ["trial", "decoded_ok", "distortion", "in_B"],
          ([i, o.decoded_ok, o.distortion, o.in_b] for i, o in enumerate(rep.outcomes)))
    errors = int(round(rep.error_rate * rep.trials))
    lo, hi = codingsim.wilson_interval(errors, rep.trials)
    out.write("\n")
    _emit(out, ["n", "variant", "trials", "messages", "bin_size", "rate_bits", "bin_rate_bits", "error_rate",
                "error_ci_low", "error_ci_high", "mean_distortion", "tail_fraction", "d_target", "gamma",
                "bin_failure_rate"],
          [[rep.n, rep.variant, rep.trials, rep.messages, rep.bin_size, rate, bin_rate, rep.error_rate, lo, hi,
            rep.mean_distortion, rep.tail_fraction(rep.d_target + args.gamma), rep.d_target, args.gamma,
            rep.bin_failure_rate]])
    return EXIT_OK


# -- parser --------------------------------------------------------------------------

def _common(p, seed=True):
    p.add_argument("--manifest", metavar="PATH", help="write the run manifest here instead of stderr")
    p.add_argument("--threads", type=int, help="worker cap (default: $ISAC_CD_THREADS or all cores)")
    p.add_argument("--units", choices=("nats", "bits"), default="nats")
    if seed:
        p.add_argument("--seed", type=int, default=0)


def _pair_args(p):
    p.add_argument("--model", help="model JSON")
    p.add_argument("--policy", help="policy JSON")
    p.add_argument("--demo", action="store_true", help="use the shipped demo model and policy")


def build_parser():
    ap = argparse.ArgumentParser(prog="isac-cd", description="Capacity-distortion computations for ISAC channels.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model (and optionally a policy) file")
    p.add_argument("model")
    p.add_argument("--policy")
    _common(p, seed=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("capacity", help="C(D) by the single-letter solver")
    p.add_argument("--model", required=True)
    p.add_argument("--D", type=float, action="append", help="distortion level (repeatable)")
    p.add_argument("--dgrid", type=_dgrid, help="grid a:b:n")
    p.add_argument("--u-size", type=int)
    p.add_argument("--mode", choices=("alternating", "exhaustive"), default="alternating")
    p.add_argument("--restarts", type=int, default=32)
    p.add_argument("--iterations", type=int, default=400)
    p.add_argument("--grid-step", type=float, default=0.05)
    _common(p)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("estimator", help="optimal estimator table")
    p.add_argument("--model", required=True)
    _common(p, seed=False)
    p.set_defaults(func=cmd_estimator)

    p = sub.add_parser("spectrum", help="empirical spectral inf/sup rates")
    _pair_args(p)
    p.add_argument("--bsc", type=float, action="append", help="BSC crossover (repeat for a mixture)")
    p.add_argument("--weights", type=float, nargs="+")
    p.add_argument("--axes-a", default="A,U")
    p.add_argument("--axes-b", default="Y,S_d")
    p.add_argument("--axes-c", default="")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--delta", type=float, default=spectrum.DEFAULT_DELTA)
    p.add_argument("--samples-out", metavar="PATH", help="CSV of raw densities")
    _common(p)
    p.set_defaults(func=cmd_spectrum)

    g = sub.add_parser("gaussian", help="Gaussian closed forms").add_subparsers(dest="example", required=True)
    p = g.add_parser("dpc", help="additive-state boundary point")
    for flag in ("--px", "--sigma", "--sigma-z", "--sigma-e", "--sigma-s"):
        p.add_argument(flag, type=float, required=True)
    _common(p, seed=False)
    p.set_defaults(func=cmd_dpc)

    def quad_args(q):
        q.add_argument("--dgrid", type=_dgrid, required=True, help="grid a:b:n")
        q.add_argument("--quad", choices=("adaptive", "hermite"), default="adaptive")
        q.add_argument("--nodes", type=int, default=gaussian.DEFAULT_NODES)

    p = g.add_parser("fading", help="C(D) for AWGN with ergodic fading")
    for flag in ("--px", "--sigma", "--sigma-z", "--sigma-s"):
        p.add_argument(flag, type=float, required=True)
    p.add_argument("--dist", default="gauss", help="gauss[:var] | const:v | finite:v1/p1,v2/p2")
    quad_args(p)
    _common(p, seed=False)
    p.set_defaults(func=cmd_fading)

    p = g.add_parser("mixed-fading", help="inner bound for a two-component fading mixture")
    for flag in ("--px", "--sigma", "--sigma-z", "--sigma-s1", "--sigma-s2", "--beta"):
        p.add_argument(flag, type=float, required=True)
    p.add_argument("--dist1", default="gauss")
    p.add_argument("--dist2", default="gauss")
    quad_args(p)
    _common(p, seed=False)
    p.set_defaults(func=cmd_mixed_fading)

    p = sub.add_parser("simulate", help="random-coding Monte Carlo at one blocklength")
    _pair_args(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--gamma", type=float, default=0.05)
    p.add_argument("--margin", type=float, default=4.0, help="rate back-off in units of gamma")
    p.add_argument("--rate", type=float, help="message rate in bits (default: derived from --gamma)")
    p.add_argument("--bin-rate", type=float, help="bin rate in bits (default: derived from --gamma)")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--variant", choices=("average", "maximal"), default="average")
    p.add_argument("--d-target", type=float, help="distortion target (default: the policy's expected distortion)")
    _common(p)
    p.set_defaults(func=cmd_simulate)
    return ap


def _write_manifest(args, argv, started, code):
    params = {k: v for k, v in vars(args).items() if k not in ("func", "manifest")}
    try:
        threads = _threads(args)
    except CliError:
        threads = None
    manifest = {
        "subcommand": " ".join(filter(None, [args.command, getattr(args, "example", None)])),
        "parameters": params,
        "seed": getattr(args, "seed", None),
        "threads": threads,
        "version": _version(),
        "argv": list(argv),
        "exit_code": code,
        "duration_s": round(time.perf_counter() - started, 6),
    }
    text = json.dumps(manifest, default=str, sort_keys=True)
    if args.manifest:
        with open(args.manifest, "w") as fh:
            fh.write(text + "\n")
    else:
        sys.stderr.write(text + "\n")


def main(argv=None, out=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    out = out or sys.stdout
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse: usage errors exit 2, --help/--version exit 0
        return int(exc.code or 0)
    started = time.perf_counter()
    # buffer so that a failing subcommand never leaves partial CSV behind
    buf = io.StringIO()
    try:
        code = args.func(args, buf)
    except CliError as exc:
        sys.stderr.write(f"isac-cd: error: {exc}\n")
        code = exc.code
        buf = io.StringIO()
    except ModelError as exc:
        sys.stderr.write(f"isac-cd: error: {exc}\n")
        code = EXIT_INPUT
        buf = io.StringIO()
    out.write(buf.getvalue())
    out.flush()
    _write_manifest(args, argv, started, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
