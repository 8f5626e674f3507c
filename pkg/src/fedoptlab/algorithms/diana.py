"""Shifted compressed methods: DIANA and its variance-reduced variants.

All three optimizers quantize gradient *differences* against per-client
shifts h_i; the master reconstructs the shifts incrementally, so no
uncompressed client state is ever transmitted.  The variance-reduced
variants add control variates over the local component sums (a coin-reset
anchor, a per-sample gradient table, or fixed-length anchor epochs).
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..compressors import Compressor
from ..records import RunResult, measure
from ..rng import RandomStream
from ..problems import FiniteSumProblem

__all__ = ["diana", "vr_diana", "svrg_diana", "diana_lyapunov", "vr_diana_lyapunov"]

_SHIFT_TOL = 1e-10


def _validate_alpha(alpha: float, omega: float):
    if not 0 < alpha <= 1.0 / (omega + 1.0) + 1e-12:
        raise ValueError(
            f"shift step alpha={alpha} must lie in (0, 1/(omega+1)] with omega={omega}"
        )


def diana_lyapunov(problem, x, h, alpha, gamma, omega) -> float:
    """||x - x*||^2 + (c gamma^2 / n) sum_i ||h_i - grad f_i(x*)||^2 with
    c = 4 omega / (alpha n)."""
    n = problem.n
    c = 4.0 * omega / (alpha * n)
    acc = 0.0
    for i in range(n):
        diff = h[i] - problem.client_grad(i, problem.x_star)
        acc += float(diff @ diff)
    dist = x - problem.x_star
    return float(dist @ dist) + c * gamma ** 2 / n * acc


def diana(
    problem: FiniteSumProblem,
    compressor: Compressor,
    rounds: int,
    alpha: Optional[float] = None,
    gamma: Optional[float] = None,
    seed: int = 0,
    stochastic: bool = False,
    x0: Optional[np.ndarray] = None,
    h0: Optional[np.ndarray] = None,
    track_lyapunov: bool = False,
    state_callback=None,
) -> RunResult:
    """Compressed-difference method with per-client shifts.

    Workers send C(g_i - h_i) and advance h_i by alpha times the sent
    vector; the master applies the prox step to x - gamma (h + mean of the
    sent vectors) and advances its copy of the mean shift identically, so
    h stays the exact mean of the h_i without extra communication.
    """
    n, d = problem.n, problem.dim
    omega = compressor.omega(d)
    alpha = 1.0 / (omega + 1.0) if alpha is None else alpha
    _validate_alpha(alpha, omega)
    if gamma is None:
        mu, L = problem.mu, problem.L
        if mu > 0:
            gamma = min(
                2.0 / ((mu + L) * (1.0 + 6.0 * omega / n)),
                alpha / (2.0 * mu),
            )
        else:
            gamma = 1.0 / (L * (1.0 + 2.0 * omega / n))

    stream = RandomStream(seed, ("diana",))
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    h = np.zeros((n, d)) if h0 is None else np.asarray(h0, dtype=np.float64).copy()
    h_mean = h.mean(axis=0)
    reg = problem.regularizer
    records = []
    lyap = []
    for k in range(rounds):
        hat_sum = np.zeros(d)
        bits_up = 0
        for i in range(n):
            if stochastic:
                j = int(stream.derive("component", k, i).generator().integers(
                    int(problem.counts[i])))
                g_i = problem.component_grad(i, j, x)
            else:
                g_i = problem.client_grad(i, x)
            hat = compressor(g_i - h[i], stream.derive("compress", k, i))
            h[i] = h[i] + alpha * hat
            hat_sum += hat
            bits_up += compressor.bits(d)
        g = h_mean + hat_sum / n
        x = reg.prox(gamma, x - gamma * g)
        h_mean = h_mean + alpha * hat_sum / n
        if not np.allclose(h_mean, h.mean(axis=0), atol=_SHIFT_TOL):
            raise AssertionError("mean-shift invariant violated")
        if track_lyapunov and problem.x_star is not None:
            lyap.append(diana_lyapunov(problem, x, h, alpha, gamma, omega))
        if state_callback is not None:
            state_callback(k, x, h)
        records.append(measure(problem, x, k, bits_up, 32 * d, tuple(range(n))))
    extras = {"h": h, "h_mean": h_mean, "alpha": alpha, "gamma": gamma}
    if track_lyapunov:
        extras["lyapunov"] = np.array(lyap)
    return RunResult(records, x, extras=extras)


def vr_diana_lyapunov_parts(problem, x, h, grad_table):
    """(||x - x*||^2, H, D) with H = sum_i ||h_i - grad f_i(x*)||^2 and
    D = sum_ij ||grad f_ij(w_ij) - grad f_ij(x*)||^2."""
    n = problem.n
    H = 0.0
    D = 0.0
    for i in range(n):
        diff = h[i] - problem.client_grad(i, problem.x_star)
        H += float(diff @ diff)
        for j in range(int(problem.counts[i])):
            dd = grad_table[i][j] - problem.component_grad(i, j, problem.x_star)
            D += float(dd @ dd)
    dist = x - problem.x_star
    return float(dist @ dist), H, D


def vr_diana_lyapunov(problem, x, h, grad_table, alpha, gamma, omega) -> float:
    """||x - x*||^2 + b gamma^2 H + c gamma^2 D with
    b = 4(omega+1)/(alpha n^2) and c = 16(omega+1)/(alpha n^2)."""
    n = problem.n
    b = 4.0 * (omega + 1.0) / (alpha * n ** 2)
    c = 16.0 * (omega + 1.0) / (alpha * n ** 2)
    dist_sq, H, D = vr_diana_lyapunov_parts(problem, x, h, grad_table)
    return dist_sq + b * gamma ** 2 * H + c * gamma ** 2 * D


def vr_diana(
    problem: FiniteSumProblem,
    compressor: Compressor,
    rounds: int,
    variant: str = "lsvrg",
    alpha: Optional[float] = None,
    gamma: Optional[float] = None,
    seed: int = 0,
    x0: Optional[np.ndarray] = None,
    exact_gradients: bool = False,
    track_lyapunov: bool = False,
    state_callback=None,
) -> RunResult:
    """Doubly variance-reduced DIANA.

    Variant ``lsvrg`` refreshes all control points w_ij to the current
    iterate when a shared Bernoulli(1/m) coin lands heads; variant
    ``saga`` refreshes only the sampled component per client and keeps a
    per-sample gradient table.  ``exact_gradients`` replaces the sampled
    estimator by the exact local gradient (the zero-noise regime) while
    leaving the control-variate bookkeeping untouched.
    """
    if variant not in ("lsvrg", "saga"):
        raise ValueError("variant must be 'lsvrg' or 'saga'")
    n, d = problem.n, problem.dim
    m_max = int(np.max(problem.counts))
    omega = compressor.omega(d)
    alpha = 1.0 / (omega + 1.0) if alpha is None else alpha
    _validate_alpha(alpha, omega)
    if gamma is None:
        gamma = 1.0 / (problem.L * (1.0 + 36.0 * (omega + 1.0) / n))

    stream = RandomStream(seed, ("vr_diana", variant))
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    h = np.zeros((n, d))
    # gradient table at the control points; initialized at x0
    table = [
        np.stack([problem.component_grad(i, j, x) for j in range(int(problem.counts[i]))])
        for i in range(n)
    ]
    mu_ctrl = [t.mean(axis=0) for t in table]
    reg = problem.regularizer
    records = []
    lyap = []
    parts = []
    for k in range(rounds):
        coin = stream.derive("coin", k).generator().random() < 1.0 / m_max
        h_mean_old = h.mean(axis=0)
        hat_sum = np.zeros(d)
        bits_up = 0
        for i in range(n):
            m_i = int(problem.counts[i])
            gen = stream.derive("component", k, i).generator()
            j = int(gen.integers(m_i))
            if exact_gradients:
                g_i = problem.client_grad(i, x)
            else:
                g_i = problem.component_grad(i, j, x) - table[i][j] + mu_ctrl[i]
            hat = compressor(g_i - h[i], stream.derive("compress", k, i))
            h[i] = h[i] + alpha * hat
            hat_sum += hat
            bits_up += compressor.bits(d)
            if variant == "saga":
                fresh = problem.component_grad(i, j, x)
                mu_ctrl[i] = mu_ctrl[i] + (fresh - table[i][j]) / m_i
                table[i][j] = fresh
            elif coin:
                table[i] = np.stack(
                    [problem.component_grad(i, jj, x) for jj in range(m_i)]
                )
                mu_ctrl[i] = table[i].mean(axis=0)
        g = h_mean_old + hat_sum / n
        x = reg.prox(gamma, x - gamma * g)
        if track_lyapunov and problem.x_star is not None:
            parts.append(vr_diana_lyapunov_parts(problem, x, h, table))
            lyap.append(vr_diana_lyapunov(problem, x, h, table, alpha, gamma, omega))
        if state_callback is not None:
            state_callback(k, x, h, table)
        records.append(measure(problem, x, k, bits_up, 32 * d, tuple(range(n))))
    extras = {"alpha": alpha, "gamma": gamma, "h": h}
    if track_lyapunov:
        extras["lyapunov"] = np.array(lyap)
        extras["lyapunov_parts"] = np.array(parts)  # columns: dist_sq, H, D
    return RunResult(records, x, extras=extras)


def svrg_diana(
    problem: FiniteSumProblem,
    compressor: Compressor,
    rounds: int,
    epoch_length: int,
    anchor_weights: Optional[Sequence[float]] = None,
    alpha: Optional[float] = None,
    gamma: Optional[float] = None,
    seed: int = 0,
    x0: Optional[np.ndarray] = None,
) -> RunResult:
    """Epoch-anchored variant: every ``epoch_length`` steps the anchor
    becomes the weighted average of the last window of iterates, and the
    estimator uses exact local gradients at the anchor."""
    n, d = problem.n, problem.dim
    l = int(epoch_length)
    if l < 1:
        raise ValueError("epoch length must be >= 1")
    if rounds % l != 0:
        raise ValueError("rounds must be a multiple of the epoch length")
    p_r = (
        np.full(l, 1.0 / l)
        if anchor_weights is None
        else np.asarray(anchor_weights, dtype=np.float64)
    )
    if p_r.size != l or abs(p_r.sum() - 1.0) > 1e-12:
        raise ValueError("anchor weights must have length l and sum to 1")
    omega = compressor.omega(d)
    alpha = 1.0 / (omega + 1.0) if alpha is None else alpha
    _validate_alpha(alpha, omega)
    if gamma is None:
        gamma = 1.0 / (problem.L * (1.0 + 36.0 * (omega + 1.0) / n))

    stream = RandomStream(seed, ("svrg_diana",))
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    h = np.zeros((n, d))
    z = x.copy()
    anchor_grads = [problem.client_grad(i, z) for i in range(n)]
    window = [x.copy()]
    reg = problem.regularizer
    records = []
    for k in range(1, rounds + 1):
        if k % l == 0 and len(window) >= l:
            z = np.tensordot(p_r, np.stack(window[-l:]), axes=1)
            anchor_grads = [problem.client_grad(i, z) for i in range(n)]
        h_mean_old = h.mean(axis=0)
        hat_sum = np.zeros(d)
        bits_up = 0
        for i in range(n):
            m_i = int(problem.counts[i])
            gen = stream.derive("component", k, i).generator()
            j = int(gen.integers(m_i))
            g_i = (
                problem.component_grad(i, j, x)
                - problem.component_grad(i, j, z)
                + anchor_grads[i]
            )
            hat = compressor(g_i - h[i], stream.derive("compress", k, i))
            hat_sum += hat
            h[i] = h[i] + alpha * hat
            bits_up += compressor.bits(d)
        g = h_mean_old + hat_sum / n
        x = reg.prox(gamma, x - gamma * g)
        window.append(x.copy())
        if len(window) > l:
            window.pop(0)
        records.append(measure(problem, x, k - 1, bits_up, 32 * d, tuple(range(n))))
    return RunResult(records, x, extras={"alpha": alpha, "gamma": gamma})
