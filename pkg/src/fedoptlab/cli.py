"""Command-line interface.

Subcommands: ``run`` (execute a config file), ``variance`` (empirical
compression variance), ``sampling`` (importance-sampling probabilities),
``bits`` (closed-form message costs), ``od-demo`` (ordered-dropout vs
rank truncation errors).  Exit codes: 0 success, 2 validation/usage
error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .compressors import make_compressor
from .config import ConfigError, parse_config_file
from .ordered_dropout import od_train_restarts, uniform_widths, width_errors, best_rank, truncate
from .rng import RandomStream
from .runner import run_experiment
from .sampling import aocs, eso_v, improvement_factor, optimal_probs, IndependentSampling

__all__ = ["main"]


def _parse_compressor(spec: str):
    """'kind' or 'kind:key=val,key=val' -> compressor instance."""
    kind, _, tail = spec.partition(":")
    params = {}
    if tail:
        for item in tail.split(","):
            key, _, val = item.partition("=")
            if not val:
                raise ValueError(f"bad compressor parameter {item!r}")
            key = key.strip()
            params[key] = float(val) if "." in val or "e" in val.lower() else int(val)
    return make_compressor(kind.strip(), **params)


def _cmd_run(args) -> int:
    config = parse_config_file(args.config)
    paths = run_experiment(config, output_dir=args.output_dir)
    for p in paths:
        print(p)
    return 0


def _cmd_variance(args) -> int:
    comp = _parse_compressor(args.compressor)
    stream = RandomStream(args.seed, ("cli-variance",))
    gen = stream.generator()
    stats = []
    for _ in range(args.trials):
        x = gen.standard_normal(args.dim)
        c = comp(x, gen)
        stats.append(float(np.sum((c - x) ** 2) / np.sum(x ** 2)))
    stats = np.asarray(stats)
    print("stat,value")
    print(f"mean,{stats.mean():.6g}")
    print(f"median,{np.median(stats):.6g}")
    print(f"max,{stats.max():.6g}")
    return 0


def _cmd_sampling(args) -> int:
    u = np.array([float(v) for v in args.norms.split(",")])
    m = args.m
    p = optimal_probs(u, m)
    p_approx = aocs(u, m, j_max=args.j_max)
    alpha = improvement_factor(u, m)
    print("p," + ",".join(f"{v:.4f}" for v in p))
    print("p_aocs," + ",".join(f"{v:.4f}" for v in p_approx))
    print(f"alpha,{alpha:.6f}")
    active = p > 0
    if np.all(active):
        scheme = IndependentSampling(p)
        v = eso_v(scheme)
        print("v," + ",".join(f"{val:.4f}" for val in v))
        P = scheme.probability_matrix()
        for row in P:
            print("P," + ",".join(f"{val:.4f}" for val in row))
    return 0


def _cmd_bits(args) -> int:
    comp = _parse_compressor(args.compressor)
    print(comp.bits(args.dim))
    return 0


def _cmd_od_demo(args) -> int:
    gen = np.random.default_rng(args.seed)
    K = args.size
    sv = np.sort(gen.uniform(0.5, 4.0, K))[::-1]
    while sv.size > 1 and np.min(-np.diff(sv)) < 0.1:
        sv = np.sort(gen.uniform(0.5, 4.0, K))[::-1]
    q1, _ = np.linalg.qr(gen.standard_normal((K, K)))
    q2, _ = np.linalg.qr(gen.standard_normal((K, K)))
    A = q1 @ np.diag(sv) @ q2.T
    model = od_train_restarts(
        A, K, uniform_widths(K), args.steps, args.eta,
        RandomStream(args.seed, ("od-demo",)), restarts=args.restarts,
    )
    print("width,error")
    errs = width_errors(model, A)
    for b, err in enumerate(errs, start=1):
        print(f"{b},{err:.6e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedoptlab",
        description="deterministic federated-optimization experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a config file")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir", default=None)
    p_run.set_defaults(func=_cmd_run)

    p_var = sub.add_parser("variance", help="empirical compression variance")
    p_var.add_argument("--compressor", required=True)
    p_var.add_argument("--dim", type=int, default=1000)
    p_var.add_argument("--trials", type=int, default=100)
    p_var.add_argument("--seed", type=int, default=0)
    p_var.set_defaults(func=_cmd_variance)

    p_samp = sub.add_parser("sampling", help="optimal client sampling instance")
    p_samp.add_argument("--norms", required=True)
    p_samp.add_argument("--m", type=int, required=True)
    p_samp.add_argument("--j-max", type=int, default=4)
    p_samp.set_defaults(func=_cmd_sampling)

    p_bits = sub.add_parser("bits", help="closed-form message cost")
    p_bits.add_argument("--compressor", required=True)
    p_bits.add_argument("--dim", type=int, required=True)
    p_bits.set_defaults(func=_cmd_bits)

    p_od = sub.add_parser("od-demo", help="ordered dropout vs rank truncation")
    p_od.add_argument("--size", type=int, default=6)
    p_od.add_argument("--seed", type=int, default=0)
    p_od.add_argument("--steps", type=int, default=200000)
    p_od.add_argument("--eta", type=float, default=0.02)
    p_od.add_argument("--restarts", type=int, default=3)
    p_od.set_defaults(func=_cmd_od_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
