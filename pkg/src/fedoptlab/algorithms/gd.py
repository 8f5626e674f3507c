"""Compressed gradient descent, distributed compressed SGD, and the
error-feedback variant for contractive compressors."""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

from ..compressors import Compressor, Identity
from ..records import RunResult, measure
from ..rng import RandomStream
from ..sampling import FullParticipation, SamplingScheme
from ..problems import FiniteSumProblem

__all__ = [
    "cgd",
    "dcsgd",
    "dcsgd_ef",
    "ef_schedule",
    "DivergenceGuardError",
]


class DivergenceGuardError(ValueError):
    """Raised when a contractive compressor is used without error feedback."""


def _guard_biased(comps, allow_biased: bool):
    biased = [c.kind for c in comps if not c.unbiased]
    if biased and not allow_biased:
        raise DivergenceGuardError(
            f"worker compressor(s) {biased} are contractive (biased); plain "
            "distributed compressed gradient descent can then diverge "
            "exponentially (run fedoptlab.problems.counterexample_problem() "
            "with top_k to see it).  Enable error feedback, or pass "
            "allow_biased=True to reproduce the divergence on purpose."
        )


def _bits_or_dense(comp: Compressor, d: int) -> int:
    try:
        return comp.bits(d)
    except ValueError:
        return 32 * d


def _stochastic_grad(problem, i, x, gen):
    """With-replacement single-component stochastic gradient."""
    j = int(gen.integers(int(problem.counts[i])))
    return problem.component_grad(i, j, x)


def cgd(
    problem: FiniteSumProblem,
    compressor: Compressor,
    eta: float,
    steps: int,
    seed: int = 0,
    x0: Optional[np.ndarray] = None,
) -> RunResult:
    """Single-machine compressed gradient descent x <- x - eta C(grad f(x)).

    Requires eta <= 1/L.  Each step records the realized contraction
    constant delta_k defined by 1 - 1/delta_k = ||C(g) - g||^2 / ||g||^2
    (infinite when the compressor removes the whole gradient).
    """
    if eta <= 0 or eta > 1.0 / problem.L + 1e-15:
        raise ValueError("step size must satisfy 0 < eta <= 1/L")
    stream = RandomStream(seed, ("cgd",))
    x = np.zeros(problem.dim) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    d = problem.dim
    records = []
    deltas = []
    for k in range(steps):
        g = problem.full_grad(x)
        gnorm_sq = float(g @ g)
        if gnorm_sq == 0.0:
            c = g.copy()
            deltas.append(1.0)
        else:
            c = compressor(g, stream.derive("compress", k))
            err = float((c - g) @ (c - g)) / gnorm_sq
            deltas.append(1.0 / (1.0 - err) if err < 1.0 else math.inf)
        x = x - eta * c
        records.append(
            measure(problem, x, k, _bits_or_dense(compressor, d), 32 * d, (0,))
        )
    return RunResult(records, x, extras={"delta_k": np.array(deltas)})


def dcsgd(
    problem: FiniteSumProblem,
    worker_compressor: Compressor,
    rounds: int,
    eta,
    master_compressor: Optional[Compressor] = None,
    sampling: Optional[SamplingScheme] = None,
    seed: int = 0,
    stochastic: bool = False,
    allow_biased: bool = False,
    x0: Optional[np.ndarray] = None,
    worker_compressors: Optional[Sequence[Compressor]] = None,
) -> RunResult:
    """Distributed SGD with bidirectional compression and partial
    participation.

    Each round the sampled workers compress their (stochastic) local
    gradients, the master aggregates them with w_i / p_i scaling,
    optionally compresses the aggregate, and every worker applies the same
    step.  With identity compressors, full participation and exact
    gradients this is exactly distributed gradient descent.
    """
    n, d = problem.n, problem.dim
    master_compressor = master_compressor or Identity()
    sampling = sampling or FullParticipation(n)
    comps = list(worker_compressors) if worker_compressors is not None else [
        worker_compressor
    ] * n
    if len(comps) != n:
        raise ValueError("need one worker compressor per client")
    _guard_biased(comps, allow_biased)
    if not master_compressor.unbiased and not allow_biased:
        raise DivergenceGuardError("master compressor must be unbiased")

    eta_fn = eta if callable(eta) else (lambda k: eta)
    stream = RandomStream(seed, ("dcsgd",))
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    p = sampling.probabilities
    w = problem.weights
    records = []
    for k in range(rounds):
        subset = sampling.draw(stream.derive("sample", k))
        agg = np.zeros(d)
        bits_up = 0
        for i in subset:
            if stochastic:
                g_i = _stochastic_grad(
                    problem, i, x, stream.derive("grad", k, i).generator()
                )
            else:
                g_i = problem.client_grad(i, x)
            c_i = comps[i](g_i, stream.derive("compress", k, i))
            agg += (w[i] / p[i]) * c_i
            bits_up += _bits_or_dense(comps[i], d)
        g = master_compressor(agg, stream.derive("master", k)) if len(subset) else agg
        x = x - eta_fn(k) * g
        bits_down = _bits_or_dense(master_compressor, d)
        records.append(measure(problem, x, k, bits_up, bits_down, subset))
    return RunResult(records, x)


def ef_schedule(
    regime: str,
    problem: FiniteSumProblem,
    delta: float,
    B: float = 0.0,
    eta: Optional[float] = None,
):
    """Step-size / iterate-weight pairs for error-feedback SGD.

    ``decreasing``: eta_k = 4 / (mu (kappa + k)) with
    kappa = 56 (2 delta + B) L / mu and weights w_k = kappa + k.
    ``constant_exp``: constant eta <= 1/(14 (2 delta + B) L) with weights
    (1 - mu eta / 2)^{-(k+1)}.  ``constant``: same eta cap, unit weights.
    """
    L, mu = problem.L, problem.mu
    if regime == "decreasing":
        if mu <= 0:
            raise ValueError("decreasing schedule requires strong convexity")
        kappa = 56.0 * (2.0 * delta + B) * L / mu
        return (lambda k: 4.0 / (mu * (kappa + k))), (lambda k: kappa + k)
    cap = 1.0 / (14.0 * (2.0 * delta + B) * L)
    eta = cap if eta is None else eta
    if regime == "constant_exp":
        if mu <= 0:
            raise ValueError("exponential weights require strong convexity")
        rho = 1.0 - mu * eta / 2.0
        return (lambda k: eta), (lambda k: rho ** (-(k + 1)))
    if regime == "constant":
        return (lambda k: eta), (lambda k: 1.0)
    raise ValueError(f"unknown schedule regime {regime!r}")


def dcsgd_ef(
    problem: FiniteSumProblem,
    compressor: Compressor,
    rounds: int,
    eta,
    weights: Optional[Callable[[int], float]] = None,
    seed: int = 0,
    stochastic: bool = False,
    x0: Optional[np.ndarray] = None,
) -> RunResult:
    """Distributed SGD with biased compression and error feedback.

    Per round and worker: transmit C(e_i + eta_k g_i), keep
    e_i <- e_i + eta_k g_i - transmitted, then step by the client-weighted
    sum of the transmitted vectors (the plain 1/n average for uniform
    weights).  The returned extras contain the weighted ergodic average
    x_bar of the iterates.
    """
    n, d = problem.n, problem.dim
    eta_fn = eta if callable(eta) else (lambda k: eta)
    weight_fn = weights or (lambda k: 1.0)
    stream = RandomStream(seed, ("dcsgd_ef",))
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    e = np.zeros((n, d))
    x_bar_acc = np.zeros(d)
    w_acc = 0.0
    records = []
    for k in range(rounds):
        eta_k = eta_fn(k)
        bits_up = 0
        step = np.zeros(d)
        for i in range(n):
            if stochastic:
                g_i = _stochastic_grad(
                    problem, i, x, stream.derive("grad", k, i).generator()
                )
            else:
                g_i = problem.client_grad(i, x)
            buf = e[i] + eta_k * g_i
            sent = compressor(buf, stream.derive("compress", k, i))
            e[i] = buf - sent
            step += problem.weights[i] * sent
            bits_up += _bits_or_dense(compressor, d)
        x = x - step
        wk = weight_fn(k)
        x_bar_acc += wk * x
        w_acc += wk
        records.append(measure(problem, x, k, bits_up, 32 * d, tuple(range(n))))
    extras = {
        "x_bar": x_bar_acc / w_acc,
        "error_norm_sq": float(np.sum(e * e)),
    }
    return RunResult(records, x, extras=extras)
