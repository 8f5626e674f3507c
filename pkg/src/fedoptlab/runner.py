"""Experiment orchestration: config -> seeded runs -> CSV metrics."""

from __future__ import annotations

import os
from typing import Dict, Optional

import numpy as np

from . import algorithms as alg
from .compressors import Identity, make_compressor
from .config import ExperimentConfig
from .problems import (
    L1Regularizer,
    conditioned_quadratic,
    counterexample_problem,
    load_logistic_csv,
    quadratic_anchors,
    synthetic_logistic,
)
from .records import RunResult
from .sampling import make_sampling

__all__ = ["build_problem", "build_compressor", "run_single", "run_experiment",
           "CSV_HEADER"]

CSV_HEADER = "round,f_gap,grad_norm_sq,dist_sq,bits_up,bits_down,participants"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def build_problem(spec: Dict[str, str]):
    kind = spec["kind"]
    if kind == "quadratic_anchors":
        counts = [int(c) for c in spec["counts"].split(",")]
        problem = quadratic_anchors(counts, int(spec.get("dim", len(counts))))
    elif kind == "counterexample":
        problem = counterexample_problem()
    elif kind == "conditioned_quadratic":
        problem = conditioned_quadratic(
            int(spec.get("dim", 50)),
            float(spec.get("kappa", 100.0)),
            seed=int(spec.get("seed", 0)),
        )
    elif kind == "logistic_synthetic":
        problem = synthetic_logistic(
            int(spec.get("clients", 4)),
            int(spec.get("samples_per_client", 25)),
            int(spec.get("dim", 10)),
            float(spec.get("l2", 0.1)),
            seed=int(spec.get("seed", 0)),
        )
    elif kind == "logistic_csv":
        problem = load_logistic_csv(
            spec["path"], float(spec.get("l2", 0.1)), int(spec.get("clients", 1))
        )
    else:
        raise ValueError(f"unknown problem kind {kind!r}")
    if "reg_l1" in spec:
        problem.regularizer = L1Regularizer(float(spec["reg_l1"]))
    return problem


def build_compressor(spec: Optional[Dict[str, str]]):
    if spec is None:
        return Identity()
    params = {}
    for key in ("k", "s"):
        if key in spec:
            params[key] = int(spec[key])
    for key in ("p", "base"):
        if key in spec:
            params[key] = float(spec[key])
    if "compress_norm" in spec:
        params["compress_norm"] = spec["compress_norm"].lower() == "true"
    return make_compressor(spec["kind"], **params)


def _build_sampling(spec, n):
    if spec is None:
        return None
    kind = spec["kind"]
    params = {}
    if "m" in spec:
        params["m"] = int(spec["m"])
    if "probs" in spec:
        params["probs"] = [float(v) for v in spec["probs"].split(",")]
    return make_sampling(kind, n, **params)


def run_single(config: ExperimentConfig, seed: int) -> RunResult:
    """One seeded run of the configured experiment."""
    problem = build_problem(config.problem)
    a = config.algorithm
    kind = a["kind"]
    rounds = int(a.get("rounds", 100))
    comp = build_compressor(config.compressor)
    master = build_compressor(config.master_compressor)
    sampling = _build_sampling(config.sampling, problem.n)

    if kind == "cgd":
        return alg.cgd(problem, comp, float(a["step_size"]), rounds, seed=seed)
    if kind == "dsgd":
        use_ef = (config.compressor or {}).get("error_feedback", "false").lower() == "true"
        stochastic = a.get("stochastic", "false").lower() == "true"
        if use_ef:
            return alg.dcsgd_ef(
                problem, comp, rounds, float(a["step_size"]), seed=seed,
                stochastic=stochastic,
            )
        return alg.dcsgd(
            problem, comp, rounds, float(a["step_size"]),
            master_compressor=master, sampling=sampling, seed=seed,
            stochastic=stochastic,
        )
    if kind == "diana":
        return alg.diana(
            problem, comp, rounds,
            alpha=float(a["alpha"]) if "alpha" in a else None,
            gamma=float(a["gamma"]) if "gamma" in a else None,
            stochastic=a.get("stochastic", "false").lower() == "true",
            seed=seed,
        )
    if kind == "vr_diana":
        return alg.vr_diana(
            problem, comp, rounds, variant=a.get("variant", "lsvrg"),
            alpha=float(a["alpha"]) if "alpha" in a else None,
            gamma=float(a["gamma"]) if "gamma" in a else None,
            seed=seed,
        )
    if kind == "svrg_diana":
        return alg.svrg_diana(
            problem, comp, rounds, int(a.get("epoch_length", 10)),
            alpha=float(a["alpha"]) if "alpha" in a else None,
            gamma=float(a["gamma"]) if "gamma" in a else None,
            seed=seed,
        )
    if kind == "dsgd_ocs":
        return alg.dsgd_ocs(
            problem, rounds, float(a["step_size"]), mode=a.get("mode", "ocs"),
            m=int(a["m"]) if "m" in a else None, seed=seed,
        )
    if kind == "fedavg_ocs":
        return alg.fedavg_ocs(
            problem, rounds, int(a.get("epochs", 1)),
            float(a["local_step_size"]), float(a.get("global_step_size", 1.0)),
            mode=a.get("mode", "ocs"), m=int(a["m"]) if "m" in a else None,
            seed=seed,
        )
    if kind == "fedshuffle":
        return alg.fedshuffle(
            problem, rounds, int(a.get("epochs", 1)),
            float(a["local_step_size"]), float(a.get("global_step_size", 1.0)),
            sampling=sampling, seed=seed,
        )
    if kind == "fedshuffle_gen":
        params = alg.preset_params(
            problem, a.get("preset", "fedshuffle"), epochs=int(a.get("epochs", 1))
        )
        return alg.fedshuffle_gen(
            problem, rounds, float(a["local_step_size"]),
            float(a.get("global_step_size", 1.0)), params,
            sampling=sampling, seed=seed,
        )
    if kind == "fedshuffle_mvr":
        return alg.fedshuffle_mvr(
            problem, rounds, int(a.get("epochs", 1)),
            float(a["local_step_size"]), float(a.get("momentum", 0.1)),
            warmup_rounds=int(a["warmup_rounds"]) if "warmup_rounds" in a else None,
            seed=seed,
        )
    raise ValueError(f"unknown algorithm kind {kind!r}")


def write_run_csv(path, result: RunResult):
    lines = [CSV_HEADER]
    for r in result.records:
        participants = ";".join(str(i) for i in r.participants)
        lines.append(
            f"{r.round},{_fmt(r.f_gap)},{_fmt(r.grad_norm_sq)},{_fmt(r.dist_sq)},"
            f"{r.bits_up},{r.bits_down},{participants}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def run_experiment(config: ExperimentConfig, output_dir: Optional[str] = None):
    """Run every configured seed; writes one CSV per seed plus a summary.

    Returns the list of written file paths.  The output directory can be
    overridden by the FEDOPTLAB_OUTPUT_DIR environment variable.
    """
    out = output_dir or os.environ.get("FEDOPTLAB_OUTPUT_DIR") or config.output_dir
    os.makedirs(out, exist_ok=True)
    paths = []
    finals = []
    for seed in config.seeds:
        result = run_single(config, seed)
        path = os.path.join(out, f"run_seed{seed}.csv")
        write_run_csv(path, result)
        paths.append(path)
        finals.append(result.final.f_gap)
    finals = np.asarray(finals, dtype=np.float64)
    q1, med, q3 = np.percentile(finals, [25, 50, 75])
    summary = os.path.join(out, "summary.csv")
    with open(summary, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("metric,value\n")
        fh.write(f"n_seeds,{len(config.seeds)}\n")
        fh.write(f"median_final_f_gap,{_fmt(med)}\n")
        fh.write(f"iqr_final_f_gap,{_fmt(q3 - q1)}\n")
    paths.append(summary)
    return paths
