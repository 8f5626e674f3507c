"""Local-update methods with random reshuffling.

The general loop is parameterized by per-client step-size normalizations
b_i, aggregation weights, and the aggregation normalization rule; the
presets recover the common baselines together with the objective weights
they implicitly optimize.  The flagship configuration scales each
client's local step by 1 / (E_i |D_i|) and uses unbiased w_i / p_i
aggregation, which keeps the optimized objective equal to the true one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..records import RunResult, measure
from ..rng import RandomStream
from ..sampling import SamplingScheme, FullParticipation
from ..problems import FiniteSumProblem

__all__ = [
    "fedshuffle",
    "fedshuffle_gen",
    "fedshuffle_mvr",
    "GenParams",
    "preset_params",
    "implied_weights",
    "sample_weighted_output",
    "PRESETS",
]

FLOAT_BITS = 32


@dataclass
class GenParams:
    """Parameters of the general reshuffling loop.

    ``b``: per-client step-size normalizations (local step is eta_l/b_i).
    ``agg_weights``: aggregation weights w~_i.
    ``q_rule``: 'unbiased' divides by p_i; 'sum_one' divides by
    (E|S|/n) * sum of sampled objective weights.
    ``epochs``: local epochs E_i.
    ``steps``: optional fixed local step count per client, overriding the
    epoch loop (sequential reshuffled passes, truncated/extended to the
    exact count).
    """

    b: np.ndarray
    agg_weights: np.ndarray
    q_rule: str
    epochs: np.ndarray
    steps: Optional[np.ndarray] = None


PRESETS = ("fedshuffle", "fedavg_rr", "fednova_rr", "fedavg_min", "fedavg_mean")


def preset_params(
    problem: FiniteSumProblem,
    preset: str,
    epochs=1,
) -> GenParams:
    """Named parameter bundles for the general loop."""
    n = problem.n
    E = np.full(n, epochs, dtype=int) if np.isscalar(epochs) else np.asarray(epochs, int)
    counts = problem.counts.astype(float)
    w = problem.weights
    tau = E * counts  # local micro-steps per client under epoch mode
    b_max = float(np.max(tau))
    if preset == "fedshuffle":
        return GenParams(b=tau.astype(float), agg_weights=w.copy(),
                         q_rule="unbiased", epochs=E)
    if preset == "fedavg_rr":
        return GenParams(b=np.full(n, b_max), agg_weights=w.copy(),
                         q_rule="sum_one", epochs=E)
    if preset == "fednova_rr":
        tau_eff = float(np.sum(w * tau))
        return GenParams(b=np.full(n, b_max), agg_weights=w * tau_eff / tau,
                         q_rule="unbiased", epochs=E)
    if preset in ("fedavg_min", "fedavg_mean"):
        # fixed-step heuristics: every client runs the same K sequential
        # reshuffled steps (a reconstruction of the fixed-steps baselines)
        if preset == "fedavg_min":
            K = int(np.min(tau))
        else:
            K = int(round(float(np.mean(tau))))
        steps = np.full(n, max(K, 1), dtype=int)
        return GenParams(b=steps.astype(float), agg_weights=w.copy(),
                         q_rule="sum_one", epochs=E, steps=steps)
    raise ValueError(f"unknown preset {preset!r}; expected one of {PRESETS}")


def sample_weighted_output(iterates: Sequence[np.ndarray], weights, rng) -> np.ndarray:
    """Pick iterate r with probability weights_r / sum(weights)."""
    from ..rng import as_generator

    w = np.asarray(weights, dtype=np.float64)
    if w.size != len(iterates) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative, matching the iterate count")
    gen = as_generator(rng)
    r = int(gen.choice(w.size, p=w / w.sum()))
    return np.asarray(iterates[r]).copy()


def _q_value(params: GenParams, subset, scheme: SamplingScheme, w, i):
    if params.q_rule == "unbiased":
        return float(scheme.probabilities[i])
    if params.q_rule == "sum_one":
        b = scheme.expected_size
        val = (b / scheme.n) * float(sum(w[j] for j in subset))
        if val <= 0:
            raise ValueError("sum-one normalization hit a zero denominator")
        return val
    raise ValueError(f"unknown aggregation rule {params.q_rule!r}")


def implied_weights(
    problem: FiniteSumProblem, params: GenParams, scheme: SamplingScheme
) -> np.ndarray:
    """Objective weights actually optimized by the general loop.

    w^_i is proportional to w~_i |D_i| E_i / (q_i b_i) with
    1/q_i = E[ 1_{i in S} / q_i^S ], evaluated by enumerating the scheme.
    For fixed-step variants the executed step count replaces |D_i| E_i.
    """
    n = problem.n
    w = problem.weights
    steps = (
        params.steps.astype(float)
        if params.steps is not None
        else params.epochs * problem.counts.astype(float)
    )
    inv_q = np.zeros(n)
    for subset, prob in scheme.subsets():
        for i in subset:
            inv_q[i] += prob / _q_value(params, subset, scheme, w, i)
    raw = params.agg_weights * steps * inv_q / params.b
    return raw / raw.sum()


def _local_pass(problem, i, y, eta_local, params, stream, rnd, direction=None):
    """Run the client's local loop in place; returns the final point."""
    m_i = int(problem.counts[i])
    if params.steps is not None:
        remaining = int(params.steps[i])
        epoch = 0
        while remaining > 0:
            perm = stream.derive("perm", rnd, epoch, i).generator().permutation(m_i)
            for j in perm[: min(m_i, remaining)]:
                g = problem.component_grad(i, int(j), y)
                y -= eta_local * (g if direction is None else direction(i, int(j), y, g))
            remaining -= min(m_i, remaining)
            epoch += 1
        return y
    for epoch in range(int(params.epochs[i])):
        perm = stream.derive("perm", rnd, epoch, i).generator().permutation(m_i)
        for j in perm:
            g = problem.component_grad(i, int(j), y)
            y -= eta_local * (g if direction is None else direction(i, int(j), y, g))
    return y


def fedshuffle_gen(
    problem: FiniteSumProblem,
    rounds: int,
    eta_l: float,
    eta_g: float,
    params: GenParams,
    sampling: Optional[SamplingScheme] = None,
    seed: int = 0,
    x0: Optional[np.ndarray] = None,
    keep_iterates: bool = False,
) -> RunResult:
    """General reshuffled local-update loop.

    Per round, each sampled client runs its local loop with step
    eta_l / b_i over freshly reshuffled components, and the master moves
    by eta_g times the aggregated progress
    sum_i (w~_i / q_i^S)(y_i - x).
    """
    n, d = problem.n, problem.dim
    sampling = sampling or FullParticipation(n)
    stream = RandomStream(seed, ("fedshuffle_gen",))
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    w = problem.weights
    records = []
    iterates = []
    for k in range(rounds):
        subset = sampling.draw(stream.derive("sample", k))
        agg = np.zeros(d)
        bits_up = 0
        for i in subset:
            y = _local_pass(
                problem, i, x.copy(), eta_l / params.b[i], params, stream, k
            )
            q = _q_value(params, subset, sampling, w, i)
            agg += (params.agg_weights[i] / q) * (y - x)
            bits_up += FLOAT_BITS * d
        x = x + eta_g * agg
        if keep_iterates:
            iterates.append(x.copy())
        records.append(measure(problem, x, k, bits_up, FLOAT_BITS * d, subset))
    extras = {"iterates": iterates} if keep_iterates else {}
    return RunResult(records, x, extras=extras)


def fedshuffle(
    problem: FiniteSumProblem,
    rounds: int,
    epochs: int,
    eta_l: float,
    eta_g: float,
    sampling: Optional[SamplingScheme] = None,
    seed: int = 0,
    x0: Optional[np.ndarray] = None,
) -> RunResult:
    """Reshuffled local steps scaled by 1/|D_i| with unbiased aggregation.

    This is the flagship loop: every micro-step moves by eta_l / |D_i|
    (the general-loop preset instead folds the epoch count into the
    normalization, i.e. eta_l / (E |D_i|) per micro-step).
    """
    params = GenParams(
        b=problem.counts.astype(float),
        agg_weights=problem.weights.copy(),
        q_rule="unbiased",
        epochs=np.full(problem.n, epochs, dtype=int),
    )
    return fedshuffle_gen(
        problem, rounds, eta_l, eta_g, params, sampling=sampling, seed=seed, x0=x0
    )


def fedshuffle_mvr(
    problem: FiniteSumProblem,
    rounds: int,
    epochs: int,
    eta_l: float,
    momentum_a: float,
    seed: int = 0,
    warmup_rounds: Optional[int] = None,
    eta_g: float = 1.0,
    x0: Optional[np.ndarray] = None,
) -> RunResult:
    """Reshuffled local updates with server momentum variance reduction.

    One client per round, sampled with probability w_i.  The local
    direction mixes the fresh component gradient with the round momentum
    and a drift correction against the round anchor; the momentum itself
    is corrected once per round with the sampled client's gradient
    difference between the current and previous anchors.  The initial
    momentum is accumulated over ``warmup_rounds`` (default: ``rounds``)
    sampled full client gradients at the starting point.
    """
    if not 0.0 <= momentum_a <= 1.0:
        raise ValueError("momentum parameter must lie in [0, 1]")
    n, d = problem.n, problem.dim
    stream = RandomStream(seed, ("fedshuffle_mvr",))
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    w = problem.weights
    a = momentum_a

    warmup = rounds if warmup_rounds is None else int(warmup_rounds)
    m_vec = np.zeros(d)
    warmup_bits = 0
    for t in range(max(warmup, 1)):
        gen = stream.derive("warmup", t).generator()
        i = int(gen.choice(n, p=w))
        m_vec += problem.client_grad(i, x)
        warmup_bits += FLOAT_BITS * d
    m_vec /= max(warmup, 1)

    counts = problem.counts
    x_prev = x.copy()
    records = []
    for k in range(rounds):
        gen = stream.derive("sample", k).generator()
        i = int(gen.choice(n, p=w))
        # momentum refresh at the start of the round (w_i/p_i = 1 here)
        g_now = problem.client_grad(i, x)
        if k > 0:
            g_prev = problem.client_grad(i, x_prev)
            m_vec = a * g_now + (1.0 - a) * m_vec + (1.0 - a) * (g_now - g_prev)
        anchor = x.copy()

        def direction(ci, j, y, g):
            g_anchor = problem.component_grad(ci, j, anchor)
            return a * g + (1.0 - a) * m_vec + (1.0 - a) * (g - g_anchor)

        y = x.copy()
        for epoch in range(epochs):
            perm = stream.derive("perm", k, epoch, i).generator().permutation(
                int(counts[i])
            )
            for j in perm:
                g = problem.component_grad(i, int(j), y)
                y -= (eta_l / counts[i]) * direction(i, int(j), y, g)
        x_prev = x.copy()
        x = x + eta_g * (y - x)  # single sampled client, w_i/p_i = 1
        bits_up = FLOAT_BITS * d * (3 if k > 0 else 2)  # update + grads
        records.append(measure(problem, x, k, bits_up, FLOAT_BITS * d, (i,)))
    res = RunResult(records, x, extras={"momentum": m_vec, "warmup_bits_up": warmup_bits})
    return res
