"""Command-line interface: ``dpmc {ingest,train,sweep,eval,noise-calc}``.

Exit status is 0 on success, 2 for invalid arguments (including
``epsilon > 2 ln(1/delta)``) and 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict

from . import data as dmod
from .baselines import PgdConfig, SvdConfig, run_private_pgd, run_private_svd, step_schedule
from .eval import ALGORITHMS, ExperimentSpec, evaluate, load_spec, run_sweep, write_results_csv, zero_model
from .fw import BACKENDS, SCHEDULES, FwConfig, run_nonprivate_fw, run_private_fw
from .models import load_model, save_model
from .privacy import MECHANISMS, PrivacyError, noise_scale, validate_params

log = logging.getLogger("dpmc")


def _float_list(s):
    return [float(x) for x in s.split(",") if x.strip()]


def _int_list(s):
    out = []
    for part in s.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def _str_list(s):
    return [x.strip() for x in s.split(",") if x.strip()]


def _delta_value(s):
    """A real (``1e-6``, ``0.000001``) or ``exp(x)`` for an exact ``e**x``."""
    s = s.strip()
    if s.startswith("exp(") and s.endswith(")"):
        return math.exp(float(s[4:-1]))
    return float(s)


def _k_value(s):
    return s if s == "auto" else float(s)


def _step_value(s):
    return s if s in ("inv", "inv_sqrt") else float(s)


def _add_algo_flags(p):
    p.add_argument("--k", type=_k_value, help="nuclear-norm bound (or 'auto' for synthetic data)")
    p.add_argument("--k-scale", type=float, help="multiplier on the true nuclear norm when --k auto")
    p.add_argument("--T", type=int, help="Frank-Wolfe iterations")
    p.add_argument("--nonprivate-T", type=int, help="iterations for fw_nonprivate (default: --T)")
    p.add_argument("--backend", choices=BACKENDS, help="eigensolver for private FW")
    p.add_argument("--oja-iters", type=int, help="Oja steps per FW iteration (oja backend)")
    p.add_argument("--beta", type=float, help="failure probability in the eigenvalue inflation")
    p.add_argument("--noise-schedule", choices=SCHEDULES, help="per-iteration noise allocation")
    p.add_argument("--r", type=int, help="rank for svd_private")
    p.add_argument("--pgd-T", type=int, help="iterations for PGD (default: --T)")
    p.add_argument("--pgd-step", type=_step_value, help="PGD step: a number, 'inv' or 'inv_sqrt'")


def build_parser():
    parser = argparse.ArgumentParser(prog="dpmc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ratings file -> observed matrix, test split and ID map")
    p.add_argument("--input", required=True, help="ratings file")
    p.add_argument("--format", choices=dmod.FORMATS, default="csv_comma")
    p.add_argument("--rating-lo", type=float, help="rating scale minimum (default: observed min)")
    p.add_argument("--rating-hi", type=float, help="rating scale maximum (default: observed max)")
    p.add_argument("--rescale-lo", type=float, help="rescale ratings to this minimum")
    p.add_argument("--rescale-hi", type=float, help="rescale ratings to this maximum")
    p.add_argument("--xi", type=int, default=80, help="max training ratings per user")
    p.add_argument("--test-frac", type=float, default=0.01, help="fraction of ratings held out")
    p.add_argument("--L", type=float, help="row bound (default: half-range * sqrt(xi))")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output prefix: PREFIX.obs.txt, PREFIX.test.tsv, PREFIX.ids.tsv")

    p = sub.add_parser("train", help="fit one algorithm on an observed matrix")
    p.add_argument("--obs", required=True, help="observed-matrix file written by ingest")
    p.add_argument("--algo", required=True, choices=ALGORITHMS)
    p.add_argument("--eps", type=float, help="privacy epsilon (private algorithms)")
    p.add_argument("--delta", type=_delta_value, default=1e-6, help="privacy delta, e.g. 1e-6 or exp(-16)")
    _add_algo_flags(p)
    p.add_argument("--seed", type=int, default=0, help="master seed for noise streams")
    p.add_argument("--out", required=True, help="model output (.npz)")
    p.add_argument("--test", help="test triplets for metrics")
    p.add_argument("--metrics", help="write metrics JSON here (default: stdout)")
    p.add_argument("--no-clip", dest="clip", action="store_false", help="do not clip predictions to the rating range")
    p.add_argument("--threads", type=int, default=1, help="worker cap for Gram accumulation")

    p = sub.add_parser("sweep", help="run an epsilon x seed grid and write a results CSV")
    p.add_argument("--config", help="JSON experiment config; flags override its keys")
    p.add_argument("--dataset")
    p.add_argument("--format", choices=dmod.FORMATS + ("synthetic",))
    p.add_argument("--rating-lo", type=float)
    p.add_argument("--rating-hi", type=float)
    p.add_argument("--rescale-lo", type=float)
    p.add_argument("--rescale-hi", type=float)
    p.add_argument("--synthetic-m", type=int)
    p.add_argument("--synthetic-n", type=int)
    p.add_argument("--synthetic-per-user", type=int)
    p.add_argument("--algorithms", type=_str_list, help="comma-separated subset of " + ",".join(ALGORITHMS))
    p.add_argument("--epsilons", type=_float_list, help="comma-separated epsilons")
    p.add_argument("--delta", type=_delta_value)
    p.add_argument("--seeds", type=_int_list, help="comma list and/or ranges, e.g. 1-10")
    p.add_argument("--xi", type=int)
    p.add_argument("--test-frac", type=float)
    p.add_argument("--L", type=float, help="row bound (default: half-range * sqrt(xi))")
    _add_algo_flags(p)
    p.add_argument("--clip", action=argparse.BooleanOptionalAction, default=None,
                   help="clip predictions to the rating range for RMSE")
    p.add_argument("--master-seed", type=int)
    p.add_argument("--threads", type=int, help="parallel seeds")
    p.add_argument("--wallclock", action=argparse.BooleanOptionalAction, default=None,
                   help="record wallclock seconds (off writes 0 so output is byte-reproducible)")
    p.add_argument("--out", help="results CSV (default: stdout)")

    p = sub.add_parser("eval", help="metrics of a saved model on test triplets")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--obs", help="training observed matrix, for empirical risk")
    p.add_argument("--no-clip", dest="clip", action="store_false")

    p = sub.add_parser("noise-calc", help="print the Gaussian noise scale sigma")
    p.add_argument("--mech", required=True, choices=MECHANISMS)
    p.add_argument("--L", type=float, required=True)
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=_delta_value, required=True, help="e.g. 1e-6 or exp(-16)")
    return parser


def _spec_overrides(args):
    keys = set(ExperimentSpec.__dataclass_fields__)
    return {k: v for k, v in vars(args).items() if k in keys and v is not None}


def _cmd_ingest(args):
    bounds = None
    if args.rating_lo is not None and args.rating_hi is not None:
        bounds = (args.rating_lo, args.rating_hi)
    with open(args.input, "rb") as fh:
        ds = dmod.parse_ratings(fh, args.format, bounds)
    if args.rescale_lo is not None and args.rescale_hi is not None:
        ds = dmod.rescale_ratings(ds, args.rescale_lo, args.rescale_hi)
    obs, test = dmod.preprocess(ds, args.xi, args.test_frac, args.seed, args.L)
    with open(args.out + ".obs.txt", "w") as fh:
        dmod.write_observed(obs, fh)
    with open(args.out + ".test.tsv", "w") as fh:
        dmod.write_triplets(test, fh)
    with open(args.out + ".ids.tsv", "w") as fh:
        dmod.write_id_map(ds, fh)
    log.info("m=%d n=%d |Omega|=%d test=%d L=%g", obs.m, obs.n, obs.nnz, len(test), obs.row_bound)
    return 0


def _cmd_train(args):
    with open(args.obs) as fh:
        obs = dmod.read_observed(fh)
    algo = args.algo
    if algo in ("fw_private", "fw_nonprivate", "pgd_private", "pgd_nonprivate") and args.k in (None, "auto"):
        raise _UsageError(f"--k is required for {algo}")
    T = args.T or 10
    if algo == "zero_baseline":
        model = zero_model(obs)
    elif algo == "fw_nonprivate":
        model = run_nonprivate_fw(obs, args.k, args.nonprivate_T or T, threads=args.threads)
    else:
        params = validate_params(args.eps, args.delta)
        if algo == "fw_private":
            cfg = FwConfig(k=args.k, T=T, L=obs.row_bound, beta=args.beta or 0.1,
                           backend=args.backend or "exact", oja_iters=args.oja_iters or 100,
                           noise_schedule=args.noise_schedule or "uniform")
            model = run_private_fw(obs, cfg, params, args.seed, threads=args.threads)
        elif algo == "svd_private":
            model = run_private_svd(obs, SvdConfig(args.r or 1, obs.row_bound), params, args.seed)
        else:
            pT = args.pgd_T or T
            cfg = PgdConfig(args.k, pT, step_schedule(args.pgd_step or 1.0, pT), obs.row_bound,
                            args.noise_schedule or "uniform")
            model = run_private_pgd(obs, cfg, params, args.seed, sigma=0.0 if algo == "pgd_nonprivate" else None)
    save_model(model, args.out)
    metrics = {"algo": algo}
    if args.test:
        with open(args.test) as fh:
            test = dmod.read_triplets(fh)
        metrics.update(asdict(evaluate(model, obs, test, args.clip)))
    elif obs.nnz:
        metrics.update(asdict(evaluate(model, obs, dmod.make_dataset([], [], [], obs.m, obs.n, 0, 0), args.clip)))
    _emit_json(metrics, args.metrics)
    return 0


def _emit_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True, default=lambda x: None if x != x else x)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _cmd_sweep(args):
    overrides = _spec_overrides(args)
    if args.config:
        spec = load_spec(args.config, overrides)
    else:
        spec = ExperimentSpec.from_dict(overrides)
    rows = run_sweep(spec)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_results_csv(rows, fh)
    else:
        write_results_csv(rows, sys.stdout)
    failed = [r for r in rows if r.error]
    for r in failed:
        print(f"error: {r.algo} eps={r.epsilon} seed={r.seed}: {r.error}", file=sys.stderr)
    return 0


def _cmd_eval(args):
    model = load_model(args.model)
    with open(args.test) as fh:
        test = dmod.read_triplets(fh)
    if args.obs:
        with open(args.obs) as fh:
            obs = dmod.read_observed(fh)
        met = asdict(evaluate(model, obs, test, args.clip))
    else:
        from .eval import test_rmse
        met = {"test_rmse": test_rmse(model, test.users, test.items, test.ratings, args.clip), "n_test": len(test)}
    _emit_json(met, None)
    return 0


def _cmd_noise_calc(args):
    params = validate_params(args.eps, args.delta)
    ns = noise_scale(args.mech, args.L, args.rounds, params)
    print(f"sigma={ns.sigma:.6f}")
    return 0


class _UsageError(Exception):
    pass


COMMANDS = {
    "ingest": _cmd_ingest,
    "train": _cmd_train,
    "sweep": _cmd_sweep,
    "eval": _cmd_eval,
    "noise-calc": _cmd_noise_calc,
}


def _validate_early(parser, args):
    """Reject privacy parameters before any work starts."""
    if args.command == "noise-calc" or (args.command == "train" and args.algo.endswith("_private")):
        if args.eps is None:
            parser.error("--eps is required for private algorithms")
        try:
            validate_params(args.eps, args.delta)
        except PrivacyError as exc:
            parser.error(str(exc))
    if args.command == "noise-calc" and not args.L > 0:
        parser.error("--L must be > 0")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _validate_early(parser, args)
    try:
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        parser.error(str(exc))
    except (OSError, ValueError) as exc:
        print(f"dpmc {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
