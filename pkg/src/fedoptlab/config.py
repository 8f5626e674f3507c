"""Experiment configuration: a flat sectioned key = value text format.

Sections are bracketed headers; nesting uses dotted section names
(e.g. ``[compressor.master]``).  Lines starting with ``#`` or ``;`` are
comments.  Parsing collects *all* problems (syntax and semantic) and
reports them together instead of stopping at the first one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "parse_config_file"]


KNOWN_SECTIONS = {"problem", "algorithm", "compressor", "compressor.master",
                  "sampling", "run"}

PROBLEM_KINDS = {
    "quadratic_anchors": {"counts", "dim"},
    "counterexample": set(),
    "conditioned_quadratic": {"dim", "kappa", "seed"},
    "logistic_synthetic": {"clients", "samples_per_client", "dim", "l2", "seed"},
    "logistic_csv": {"path", "l2", "clients"},
}

ALGORITHM_KINDS = {
    "cgd": {"rounds", "step_size"},
    "dsgd": {"rounds", "step_size", "stochastic", "error_feedback"},
    "diana": {"rounds", "alpha", "gamma", "stochastic"},
    "vr_diana": {"rounds", "variant", "alpha", "gamma"},
    "svrg_diana": {"rounds", "epoch_length", "alpha", "gamma"},
    "dsgd_ocs": {"rounds", "step_size", "mode", "m"},
    "fedavg_ocs": {"rounds", "epochs", "local_step_size", "global_step_size",
                   "mode", "m"},
    "fedshuffle": {"rounds", "epochs", "local_step_size", "global_step_size"},
    "fedshuffle_gen": {"rounds", "epochs", "local_step_size", "global_step_size",
                       "preset"},
    "fedshuffle_mvr": {"rounds", "epochs", "local_step_size", "momentum",
                       "warmup_rounds"},
}

COMPRESSOR_KEYS = {"kind", "k", "s", "p", "base", "compress_norm", "error_feedback"}
SAMPLING_KINDS = {"full": set(), "uniform": {"m"}, "independent": {"probs"}}
RUN_KEYS = {"seeds", "output_dir"}

BIASED_COMPRESSOR_KINDS = {"top_k", "adaptive_sparse", "biased_rounding",
                           "natural_on_top_k", "top_k_natural_dither"}
UNBIASED_ALGOS_NEEDING_GUARD = {"dsgd", "dsgd_ocs", "diana", "vr_diana",
                                "svrg_diana"}


class ConfigError(ValueError):
    """Carries every validation problem found in a config."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("invalid config:\n" + "\n".join(f"  - {e}" for e in errors))


@dataclass
class ExperimentConfig:
    problem: Dict[str, str]
    algorithm: Dict[str, str]
    compressor: Optional[Dict[str, str]]
    master_compressor: Optional[Dict[str, str]]
    sampling: Optional[Dict[str, str]]
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: str = "results"


def _parse_sections(text: str, errors: List[str]):
    sections: Dict[str, Dict[str, str]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip().lower()
            if name not in KNOWN_SECTIONS:
                errors.append(f"line {lineno}: unknown section [{name}]")
                current = None
                continue
            if name in sections:
                errors.append(f"line {lineno}: duplicate section [{name}]")
            current = sections.setdefault(name, {})
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        if current is None:
            errors.append(f"line {lineno}: key outside any section")
            continue
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip()
        if key in current:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        current[key] = value
    return sections


def _check_keys(section: str, entries: Dict[str, str], allowed, errors: List[str]):
    for key in entries:
        if key not in allowed:
            errors.append(f"[{section}] unknown key {key!r}")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and fully validate; raises ConfigError listing every problem."""
    errors: List[str] = []
    sections = _parse_sections(text, errors)

    problem = sections.get("problem")
    if problem is None:
        errors.append("missing required section [problem]")
    else:
        kind = problem.get("kind")
        if kind is None:
            errors.append("[problem] missing key 'kind'")
        elif kind not in PROBLEM_KINDS:
            errors.append(f"[problem] unknown kind {kind!r}")
        else:
            _check_keys("problem", problem, PROBLEM_KINDS[kind] | {"kind", "reg_l1"},
                        errors)

    algorithm = sections.get("algorithm")
    algo_kind = None
    if algorithm is None:
        errors.append("missing required section [algorithm]")
    else:
        algo_kind = algorithm.get("kind")
        if algo_kind is None:
            errors.append("[algorithm] missing key 'kind'")
        elif algo_kind not in ALGORITHM_KINDS:
            errors.append(f"[algorithm] unknown kind {algo_kind!r}")
        else:
            _check_keys("algorithm", algorithm,
                        ALGORITHM_KINDS[algo_kind] | {"kind"}, errors)
            if "rounds" in algorithm:
                try:
                    if int(algorithm["rounds"]) < 1:
                        errors.append("[algorithm] rounds must be >= 1")
                except ValueError:
                    errors.append("[algorithm] rounds must be an integer")

    compressor = sections.get("compressor")
    if compressor is not None:
        _check_keys("compressor", compressor, COMPRESSOR_KEYS, errors)
        ckind = compressor.get("kind")
        if ckind is None:
            errors.append("[compressor] missing key 'kind'")
        else:
            from .compressors import COMPRESSOR_KINDS as KNOWN

            if ckind not in KNOWN:
                errors.append(f"[compressor] unknown kind {ckind!r}")
            ef = compressor.get("error_feedback", "false").lower() == "true"
            if (
                ckind in BIASED_COMPRESSOR_KINDS
                and algo_kind in UNBIASED_ALGOS_NEEDING_GUARD
                and not ef
            ):
                errors.append(
                    f"[compressor] kind {ckind!r} is contractive (biased): plain "
                    f"{algo_kind} can diverge exponentially on the three-client "
                    "counterexample problem (fedoptlab.problems."
                    "counterexample_problem); set error_feedback = true"
                )

    master = sections.get("compressor.master")
    if master is not None:
        _check_keys("compressor.master", master, COMPRESSOR_KEYS, errors)
        if "kind" not in master:
            errors.append("[compressor.master] missing key 'kind'")

    sampling = sections.get("sampling")
    if sampling is not None:
        skind = sampling.get("kind")
        if skind is None:
            errors.append("[sampling] missing key 'kind'")
        elif skind not in SAMPLING_KINDS:
            errors.append(f"[sampling] unknown kind {skind!r}")
        else:
            _check_keys("sampling", sampling, SAMPLING_KINDS[skind] | {"kind"}, errors)

    run = sections.get("run", {})
    _check_keys("run", run, RUN_KEYS, errors)
    seeds = [0]
    if "seeds" in run:
        try:
            seeds = [int(s) for s in run["seeds"].split(",") if s.strip() != ""]
            if not seeds:
                errors.append("[run] seeds must list at least one integer")
        except ValueError:
            errors.append("[run] seeds must be a comma-separated list of integers")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        problem=problem,
        algorithm=algorithm,
        compressor=compressor,
        master_compressor=master,
        sampling=sampling,
        seeds=seeds,
        output_dir=run.get("output_dir", "results"),
    )


def parse_config_file(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path!r}: {exc}"]) from None
    return parse_config(text)
