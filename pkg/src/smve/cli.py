"""Command-line front end.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import math
import sys
import warnings

import numpy as np

from . import bounds as bd
from .errors import InputError, InvalidInput, NumericalError, Unsupported
from .estimators import constant, hard_threshold, least_squares, ls, ml, omp_estimator
from .experiments import CSV_HEADER, ExperimentConfig, default_grid, run_fourier, run_ssnm
from .matrix_io import read_matrix
from .mc import McConfig, simulate
from .model import (
    SparseProblem,
    build_model,
    coherence,
    normalize_columns,
    rip_constant,
    spark,
)
from .ssnm_exact import barankin_from_estimator, lmv_estimate

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3

# config keys and how to parse them
_CONFIG_KEYS = {
    "seed": int,
    "trials": int,
    "snr_db": lambda s: _float_list(s),
    "threshold": lambda s: _float_list(s),
    "out": str,
    "workers": int,
    "attest_spark": lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
}


def _float_list(text):
    try:
        vals = [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise InvalidInput(f"bad number list {text!r}: {exc}") from None
    if not vals or not all(math.isfinite(v) for v in vals):
        raise InvalidInput(f"number list {text!r} must be nonempty and finite")
    return vals


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise InvalidInput(f"bad index list {text!r}: {exc}") from None


def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment, dashes in keys map to underscores."""
    cfg = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InvalidInput(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInput(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONFIG_KEYS:
            raise InvalidInput(f"{path}:{lineno}: unknown key {key!r}")
        try:
            cfg[key] = _CONFIG_KEYS[key](val)
        except ValueError as exc:
            raise InvalidInput(f"{path}:{lineno}: {exc}") from None
    return cfg


def _merged(args, defaults):
    """Flag values win over the config file, which wins over defaults."""
    conf = read_config(args.config) if getattr(args, "config", None) else {}
    out = dict(defaults)
    out.update(conf)
    for key in defaults:
        v = getattr(args, key, None)
        if v is not None and v is not False:
            out[key] = v
    return out


def _emit(text, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _model_from_args(args):
    if args.matrix and args.identity:
        raise InvalidInput("give either --matrix or --identity, not both")
    if args.matrix:
        H = read_matrix(args.matrix)
    elif args.identity:
        H = np.eye(args.identity)
    else:
        raise InvalidInput("a model needs --matrix FILE or --identity N")
    return build_model(H, args.sigma2)


def _x0_from_args(args, N):
    x0 = np.array(_float_list(args.x0), dtype=float) if args.x0 else np.zeros(N)
    if x0.size != N:
        raise InvalidInput(f"--x0 has {x0.size} entries, the model has N={N}")
    return x0


def cmd_matrix_info(args):
    H = read_matrix(args.matrix)
    model = build_model(H)
    lines = [f"M: {model.M}", f"N: {model.N}", f"rank: {model.rank}"]
    unit = model.has_unit_columns()
    Hn = H if unit else normalize_columns(H)
    note = "" if unit else " (columns normalized)"
    if model.N >= 2:
        lines.append(f"coherence{note}: {coherence(Hn)!r}")
    sp = spark(H, max_n=args.max_n)
    lines.append(f"spark: {'unknown (N > %d)' % args.max_n if sp is None else sp}")
    for K in _int_list(args.rip_order):
        if not 1 <= K <= model.N:
            continue
        if math.comb(model.N, K) > args.budget:
            lines.append(f"delta_{K}{note}: skipped (budget)")
        else:
            lines.append(f"delta_{K}{note}: {rip_constant(Hn, K, args.budget)!r}")
    print("\n".join(lines))
    return EXIT_OK


def _bias_from_args(args, k):
    if args.bias == "zero":
        return bd.BiasSpec.zero()
    T = args.threshold[0] if args.threshold else 0.0
    return bd.BiasSpec.from_diagonal(hard_threshold(T), k, args.sigma2)


def cmd_bounds(args):
    model = _model_from_args(args)
    if args.bias == "ht" and not model.is_identity:
        raise Unsupported("the HT bias is defined for --identity models only")
    problem = SparseProblem(model, args.S, args.k, attest_spark=args.attest_spark)
    problem.ensure_spark()
    x0 = problem.check_x(_x0_from_args(args, model.N))
    kinds = [bd.BoundKind(k) for k in args.kind]
    sel = bd.KSelector(args.selector)
    print("kind,k,value,scale_factor,index_set,flags")
    for kind in kinds:
        if kind is bd.BoundKind.HCRB and not model.is_identity:
            continue
        ks = [args.k] if args.k is not None else list(range(model.N))
        total = []
        for k in ks:
            K = _int_list(args.K) if args.K else bd.k_selector_default(x0, k, args.S, sel)
            rep = bd.scalar_bound(kind, problem.with_k(k), _bias_from_args(args, k), x0, K, args.delta)
            total.append(rep.value)
            iset = " ".join(map(str, rep.index_set)) if rep.index_set else ""
            print(f"{kind.value},{k},{rep.value!r},{rep.scale_factor!r},{iset},{' '.join(sorted(rep.flags))}")
        if args.k is None:
            print(f"{kind.value},sum,{math.fsum(total)!r},,,")
    return EXIT_OK


def _diag_estimator(args):
    name = args.estimator
    if name == "ls":
        return least_squares()
    if name == "ht":
        return hard_threshold(args.threshold[0] if args.threshold else 0.0)
    if name == "const":
        return constant(args.constant)
    raise Unsupported(f"{name} is not a diagonal estimator; the Barankin computation needs one")


def cmd_barankin(args):
    est = _diag_estimator(args)
    x0 = np.array(_float_list(args.x0), dtype=float)
    res = barankin_from_estimator(est, x0, args.k, args.S, args.sigma2)
    mean, var = est.moments(float(x0[args.k]), args.sigma2)
    lines = [
        f"estimator: {est.label}",
        f"B_c: {res.B_c!r}",
        f"phi: {res.phi!r}",
        f"gamma_x0: {res.gamma_x0!r}",
        f"variance: {var!r}",
        f"M: {res.value!r}",
    ]
    if args.verify_trials:
        problem = SparseProblem(build_model(np.eye(x0.size), args.sigma2), args.S)
        k = args.k
        fn = lambda Y: lmv_estimate(est, Y, x0, k, args.S, args.sigma2)[:, None]
        mom = simulate(fn, problem, x0, McConfig(seed=args.seed or 0, trials=args.verify_trials, workers=args.workers))
        lines += [
            f"lmv_mean: {float(mom.mean[0])!r} (se {float(mom.se_mean[0])!r})",
            f"lmv_variance: {float(mom.variance[0])!r} (se {float(mom.se_variance[0])!r})",
        ]
    print("\n".join(lines))
    return EXIT_OK


def cmd_simulate(args):
    model = _model_from_args(args)
    problem = SparseProblem(model, args.S, attest_spark=args.attest_spark)
    x0 = problem.check_x(_x0_from_args(args, model.N))
    name = args.estimator
    if name == "ls":
        est = ls(problem)
    elif name == "ht":
        est = hard_threshold(args.threshold[0] if args.threshold else 0.0).as_vector(problem)
    elif name == "ml":
        est = ml(problem)
    else:
        est = omp_estimator(problem)
    seed = args.seed if args.seed is not None else 0
    trials = args.trials if args.trials is not None else 10_000
    mom = simulate(est, problem, x0, McConfig(seed=seed, trials=trials, workers=args.workers))
    rows = [CSV_HEADER]
    for k in range(model.N):
        rows.append(f",mean,x{k},{float(mom.mean[k])!r},{float(mom.se_mean[k])!r},{seed},{mom.trials}")
        rows.append(f",variance,x{k},{float(mom.variance[k])!r},{float(mom.se_variance[k])!r},{seed},{mom.trials}")
    rows.append(f",variance,total,{mom.total_variance!r},{mom.se_total_variance!r},{seed},{mom.trials}")
    _emit("\n".join(rows) + "\n", args.out)
    return EXIT_OK


def cmd_experiment(args):
    name = args.which
    lo, hi = (-20.0, 40.0) if name == "fourier" else (-20.0, 20.0)
    opts = _merged(
        args,
        {
            "seed": 0,
            "trials": 10_000,
            "snr_db": default_grid(lo, hi),
            "threshold": [0.0, 2.0, 3.0, 4.0],
            "out": None,
            "workers": None,
            "attest_spark": False,
        },
    )
    cfg = ExperimentConfig(
        experiment=name,
        snr_db=opts["snr_db"],
        trials=opts["trials"],
        seed=opts["seed"],
        thresholds=opts["threshold"],
        workers=opts["workers"],
        attest_spark=opts["attest_spark"],
        out=opts["out"],
    )
    text = run_fourier(cfg) if name == "fourier" else run_ssnm(cfg)
    _emit(text, cfg.out)
    return EXIT_OK


def _common_model_flags(p):
    p.add_argument("--matrix", help="matrix file (CSV or binary)")
    p.add_argument("--identity", type=int, metavar="N", help="use H = I of size N")
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--S", type=int, required=True, help="sparsity degree")
    p.add_argument("--x0", help="comma-separated parameter vector (default: zeros)")
    p.add_argument("--attest-spark", action="store_true", help="assert spark(H) > S instead of checking it")


def build_parser():
    parser = argparse.ArgumentParser(prog="smve", description="Variance bounds and Monte Carlo checks for sparse linear Gaussian models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("matrix-info", help="dimensions, rank, coherence, spark and RIP constants")
    p.add_argument("matrix")
    p.add_argument("--max-n", type=int, default=20, help="largest N for the exhaustive spark search")
    p.add_argument("--rip-order", default="2", help="comma-separated RIP orders K")
    p.add_argument("--budget", type=int, default=10**6, help="subset enumeration budget")
    p.set_defaults(func=cmd_matrix_info)

    p = sub.add_parser("bounds", help="evaluate scalar bounds (unbiased or HT bias)")
    _common_model_flags(p)
    p.add_argument("--k", type=int, help="target index (default: all, with the sum)")
    p.add_argument("--kind", action="append", choices=[k.value for k in bd.BoundKind], help="bound kind (repeatable)")
    p.add_argument("--K", help="comma-separated index set (default: from --selector)")
    p.add_argument("--selector", default="support", choices=[s.value for s in bd.KSelector])
    p.add_argument("--delta", type=float, help="delta_S for the RIP bound")
    p.add_argument("--bias", default="zero", choices=["zero", "ht"])
    p.add_argument("--threshold", type=_float_list)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("barankin", help="diagonal Barankin bound in the H = I model")
    p.add_argument("--estimator", required=True, choices=["ls", "ht", "const", "ml", "omp"])
    p.add_argument("--threshold", type=_float_list)
    p.add_argument("--constant", type=float, default=0.0)
    p.add_argument("--x0", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--S", type=int, required=True)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--verify-trials", type=int, default=0, help="also simulate the LMV estimator")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_barankin)

    p = sub.add_parser("simulate", help="Monte Carlo moments of a reference estimator")
    _common_model_flags(p)
    p.add_argument("--estimator", required=True, choices=["ls", "ht", "ml", "omp"])
    p.add_argument("--threshold", type=_float_list)
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="run a reference experiment and write CSV")
    p.add_argument("which", choices=["fourier", "ssnm"])
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--snr-db", dest="snr_db", type=_float_list, help="comma-separated SNR grid in dB")
    p.add_argument("--threshold", type=_float_list, help="HT thresholds (ssnm)")
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--workers", type=int)
    p.add_argument("--attest-spark", dest="attest_spark", action="store_true")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "command", None) == "bounds" and not args.kind:
        args.kind = [bd.BoundKind.SPARSE_CRB.value, bd.BoundKind.PROJECTION_1.value, bd.BoundKind.PROJECTION_2.value]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except (InputError, OSError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
