"""Optimizers driven by budgeted importance sampling of clients.

The simulator computes every client's update each round, derives the
participation probabilities from the update norms (full / uniform /
optimal / approximate-optimal), then samples the transmitting subset
independently.  Bits are charged only to transmitters, plus the small
norm-aggregation overhead of the approximate scheme when enabled.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..records import RunResult, measure
from ..rng import RandomStream
from ..sampling import aocs, optimal_probs, sampling_variance
from ..problems import FiniteSumProblem

__all__ = ["dsgd_ocs", "fedavg_ocs", "SAMPLING_MODES"]

SAMPLING_MODES = ("full", "uniform", "ocs", "aocs")

FLOAT_BITS = 32


def _mode_probs(mode, u, m, n, j_max):
    if mode == "full":
        return np.ones(n), 0
    if mode == "uniform":
        return np.full(n, m / n), 0
    if mode == "ocs":
        # one norm float upstream per client
        return optimal_probs(u, m), n * FLOAT_BITS
    if mode == "aocs":
        # norm float plus one probability float per rescaling round
        p = aocs(u, m, j_max)
        return p, n * FLOAT_BITS * (1 + j_max)
    raise ValueError(f"unknown sampling mode {mode!r}; expected {SAMPLING_MODES}")


def _draw_independent(p, stream):
    gen = stream.generator()
    return tuple(np.flatnonzero(gen.random(p.size) < p).tolist())


def dsgd_ocs(
    problem: FiniteSumProblem,
    rounds: int,
    eta: float,
    mode: str = "ocs",
    m: Optional[int] = None,
    seed: int = 0,
    stochastic: bool = False,
    j_max: int = 4,
    count_norm_overhead: bool = True,
    x0: Optional[np.ndarray] = None,
    track_variance: bool = False,
) -> RunResult:
    """Distributed SGD where only an importance-sampled subset transmits.

    The master update is G = sum over sampled i of (w_i / p_i) U_i with
    U_i the client (stochastic) gradient, so E[G] is the full-participation
    update for every mode.
    """
    n, d = problem.n, problem.dim
    if mode != "full":
        if m is None:
            raise ValueError("modes other than 'full' need the expected budget m")
        if not 1 <= m <= n:
            raise ValueError("need 1 <= m <= n")
    stream = RandomStream(seed, ("dsgd_ocs", mode))
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    w = problem.weights
    records = []
    variances = []
    uniform_variances = []
    for k in range(rounds):
        updates = np.zeros((n, d))
        for i in range(n):
            if stochastic:
                gen = stream.derive("grad", k, i).generator()
                j = int(gen.integers(int(problem.counts[i])))
                updates[i] = problem.component_grad(i, j, x)
            else:
                updates[i] = problem.client_grad(i, x)
        u = w * np.linalg.norm(updates, axis=1)
        if mode in ("ocs", "aocs") and not np.any(u > 0):
            p, overhead = np.ones(n), 0
        else:
            p, overhead = _mode_probs(mode, u, m, n, j_max)
        subset = _draw_independent(p, stream.derive("sample", k))
        G = np.zeros(d)
        bits_up = overhead if count_norm_overhead else 0
        for i in subset:
            G += (w[i] / p[i]) * updates[i]
            bits_up += FLOAT_BITS * d
        x = x - eta * G
        if track_variance:
            # both evaluated on the same round's update norms
            variances.append(sampling_variance(p, u))
            m_eff = m if m is not None else n
            uniform_variances.append((n - m_eff) / m_eff * float(np.sum(u ** 2)))
        records.append(measure(problem, x, k, bits_up, FLOAT_BITS * d, subset))
    extras = {}
    if track_variance:
        extras["sampling_variance"] = np.array(variances)
        extras["uniform_variance"] = np.array(uniform_variances)
    return RunResult(records, x, extras=extras)


def fedavg_ocs(
    problem: FiniteSumProblem,
    rounds: int,
    local_epochs: int,
    eta_l: float,
    eta_g: float,
    mode: str = "ocs",
    m: Optional[int] = None,
    seed: int = 0,
    j_max: int = 4,
    count_norm_overhead: bool = True,
    x0: Optional[np.ndarray] = None,
) -> RunResult:
    """Federated averaging with importance-sampled transmitters.

    Every client runs ``local_epochs`` sequential passes over its
    components, producing the update x - y_i; the probabilities are
    derived from the weighted update norms and only the sampled clients
    transmit.  The master steps by eta_g times the unbiased w_i / p_i
    aggregate.
    """
    n, d = problem.n, problem.dim
    if mode != "full":
        if m is None:
            raise ValueError("modes other than 'full' need the expected budget m")
        if not 1 <= m <= n:
            raise ValueError("need 1 <= m <= n")
    stream = RandomStream(seed, ("fedavg_ocs", mode))
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    w = problem.weights
    records = []
    for k in range(rounds):
        deltas = np.zeros((n, d))
        for i in range(n):
            y = x.copy()
            for _ in range(local_epochs):
                for j in range(int(problem.counts[i])):
                    y -= eta_l * problem.component_grad(i, j, y)
            deltas[i] = x - y
        u = w * np.linalg.norm(deltas, axis=1)
        if mode in ("ocs", "aocs") and not np.any(u > 0):
            p, overhead = np.ones(n), 0
        else:
            p, overhead = _mode_probs(mode, u, m, n, j_max)
        subset = _draw_independent(p, stream.derive("sample", k))
        agg = np.zeros(d)
        bits_up = overhead if count_norm_overhead else 0
        for i in subset:
            agg += (w[i] / p[i]) * deltas[i]
            bits_up += FLOAT_BITS * d
        x = x - eta_g * agg
        records.append(measure(problem, x, k, bits_up, FLOAT_BITS * d, subset))
    return RunResult(records, x)
