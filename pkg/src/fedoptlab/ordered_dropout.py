"""Linear two-layer ordered dropout.

A width-K linear model F(x) = U V x is trained under randomly sampled
width fractions p: each step only the first ceil(p K) hidden units
participate in the forward/backward pass.  For full-rank targets with
distinct singular values the optimum of this procedure reproduces the
best rank-b approximations for every width b, which is what the
verification helpers check against an internally implemented small-matrix
SVD.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .rng import RandomStream, as_generator

__all__ = [
    "LinearODModel",
    "DropoutDistribution",
    "uniform_widths",
    "active_width",
    "truncate",
    "od_train",
    "od_train_restarts",
    "jacobi_svd",
    "best_rank",
    "width_errors",
]

_JACOBI_MAX_DIM = 64


@dataclass
class LinearODModel:
    """Two stacked linear layers, no activations or biases."""

    U: np.ndarray  # (out_dim, K)
    V: np.ndarray  # (K, in_dim)

    @property
    def hidden_width(self) -> int:
        return self.U.shape[1]


@dataclass(frozen=True)
class DropoutDistribution:
    """Discrete distribution over width fractions in (0, 1]."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        p = np.asarray(self.probs, dtype=np.float64)
        if np.any(v <= 0) or np.any(v > 1) or np.any(np.diff(v) <= 0):
            raise ValueError("width fractions must be increasing in (0, 1]")
        if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be positive and sum to 1")

    def covers_all_widths(self, K: int) -> bool:
        widths = {active_width(p, K) for p in self.values}
        return widths == set(range(1, K + 1))


def uniform_widths(k: int) -> DropoutDistribution:
    """Uniform distribution over {1/k, 2/k, ..., 1}."""
    return DropoutDistribution(
        values=tuple(i / k for i in range(1, k + 1)),
        probs=tuple(1.0 / k for _ in range(k)),
    )


def active_width(p: float, K: int) -> int:
    if p <= 0:
        raise ValueError("width fraction must be positive")
    return min(K, math.ceil(p * K))


def truncate(model: LinearODModel, p: float) -> np.ndarray:
    """The width-p linear map: first ceil(p K) hidden units only.

    Truncations are nested: a smaller p uses a prefix of the columns used
    by any larger p.
    """
    b = active_width(p, model.hidden_width)
    return model.U[:, :b] @ model.V[:b, :]


@njit(cache=True)
def _od_steps(U, V, A, widths, eta):
    for t in range(widths.shape[0]):
        b = widths[t]
        Ub = np.ascontiguousarray(U[:, :b])
        Vb = np.ascontiguousarray(V[:b, :])
        E = Ub @ Vb - A
        dU = 2.0 * (E @ Vb.T)
        dV = 2.0 * (Ub.T @ E)
        U[:, :b] -= eta * dU
        V[:b, :] -= eta * dV


def od_train(
    A,
    K: int,
    dist: DropoutDistribution,
    steps: int,
    eta: float,
    rng,
    model: Optional[LinearODModel] = None,
) -> LinearODModel:
    """Plain ordered-dropout training on the Frobenius objective.

    Each step samples a width fraction p from ``dist`` and takes one
    gradient step of ||F_p - A||_F^2 with respect to the active blocks of
    U and V only.  Warns when the target's singular-value gaps are too
    small for the width-b optima to be well separated.
    """
    A = np.asarray(A, dtype=np.float64)
    m, n = A.shape
    gen = as_generator(rng)
    sv = np.linalg.svd(A, compute_uv=False)
    if sv.size > 1 and (np.min(-np.diff(sv)) <= 1e-6 or sv[-1] <= 1e-6):
        warnings.warn(
            "target has (near-)repeated singular values; width optima may "
            "not be unique",
            stacklevel=2,
        )
    if model is None:
        bound = 1.0 / math.sqrt(K)
        model = LinearODModel(
            U=gen.uniform(-bound, bound, (m, K)),
            V=gen.uniform(-bound, bound, (K, n)),
        )
    if steps > 0:
        fractions = np.asarray(dist.values)
        picks = gen.choice(fractions.size, size=steps, p=np.asarray(dist.probs))
        widths = np.array([active_width(fractions[j], K) for j in picks], dtype=np.int64)
        _od_steps(model.U, model.V, A, widths, eta)
    return model


def od_train_restarts(
    A,
    K: int,
    dist: DropoutDistribution,
    steps: int,
    eta: float,
    stream: RandomStream,
    restarts: int = 3,
) -> LinearODModel:
    """Run several restarts and keep the best by the training objective
    (the width-averaged Frobenius error)."""
    best, best_obj = None, np.inf
    for r in range(restarts):
        model = od_train(A, K, dist, steps, eta, stream.derive("restart", r))
        obj = sum(
            prob * np.linalg.norm(truncate(model, p) - A) ** 2
            for p, prob in zip(dist.values, dist.probs)
        )
        if obj < best_obj:
            best, best_obj = model, obj
    return best


# ---------------------------------------------------------------------------
# small-matrix SVD (one-sided Jacobi) and rank truncation
# ---------------------------------------------------------------------------


def jacobi_svd(A, tol: float = 1e-13, max_sweeps: int = 60):
    """One-sided Jacobi SVD for dense matrices up to 64x64.

    Returns (U, s, Vt) with singular values descending.  Columns of the
    working copy are rotated pairwise until mutually orthogonal; the
    accumulated rotations form V.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("expected a matrix")
    if max(A.shape) > _JACOBI_MAX_DIM:
        raise ValueError(f"jacobi_svd is limited to {_JACOBI_MAX_DIM}x{_JACOBI_MAX_DIM}")
    if A.shape[0] < A.shape[1]:
        U, s, Vt = jacobi_svd(A.T, tol=tol, max_sweeps=max_sweeps)
        return Vt.T, s, U.T

    B = A.copy()
    m, n = B.shape
    V = np.eye(n)
    scale = np.linalg.norm(A)
    if scale == 0.0:
        return np.eye(m, n), np.zeros(n), np.eye(n)
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                bi, bj = B[:, i], B[:, j]
                aii = bi @ bi
                ajj = bj @ bj
                aij = bi @ bj
                if abs(aij) <= tol * scale * scale:
                    continue
                off = max(off, abs(aij))
                # Jacobi rotation zeroing the (i, j) Gram entry
                zeta = (ajj - aii) / (2.0 * aij)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                c = 1.0 / math.hypot(1.0, t)
                s_ = t * c
                B[:, i], B[:, j] = c * bi - s_ * bj, s_ * bi + c * bj
                V[:, i], V[:, j] = c * V[:, i] - s_ * V[:, j], s_ * V[:, i] + c * V[:, j]
        if off <= tol * scale * scale:
            break
    s = np.linalg.norm(B, axis=0)
    order = np.argsort(-s, kind="stable")
    s = s[order]
    B = B[:, order]
    V = V[:, order]
    U = np.zeros((m, n))
    for k in range(n):
        if s[k] > tol * scale:
            U[:, k] = B[:, k] / s[k]
        else:
            # null column: complete with any unit vector orthogonal to the rest
            u = np.zeros(m)
            u[k % m] = 1.0
            for prev in range(k):
                u -= (U[:, prev] @ u) * U[:, prev]
            norm = np.linalg.norm(u)
            U[:, k] = u / norm if norm > 0 else u
    return U, s, V.T


def best_rank(A, b: int) -> np.ndarray:
    """Best rank-b approximation via the internal Jacobi SVD."""
    A = np.asarray(A, dtype=np.float64)
    if not 1 <= b <= min(A.shape):
        raise ValueError("need 1 <= b <= min(m, n)")
    U, s, Vt = jacobi_svd(A)
    return (U[:, :b] * s[:b]) @ Vt[:b, :]


def width_errors(model: LinearODModel, A) -> np.ndarray:
    """||F_b - A_b||_F for every width b = 1..K."""
    A = np.asarray(A, dtype=np.float64)
    K = model.hidden_width
    return np.array(
        [
            np.linalg.norm(truncate(model, b / K) - best_rank(A, b))
            for b in range(1, K + 1)
        ]
    )
