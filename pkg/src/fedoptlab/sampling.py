"""Client participation machinery.

Subset distributions ("samplings") over n clients, their probability
matrices P_ij = Prob({i,j} in S), the variance certificates v with
P - p p^T <= Diag(p o v), importance sampling of clients under an expected
budget, and the unbiased / sum-one aggregation rules.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterable, Sequence

import numpy as np

from .rng import as_generator

__all__ = [
    "SamplingScheme",
    "FullParticipation",
    "UniformSampling",
    "IndependentSampling",
    "EnumeratedSampling",
    "eso_v",
    "eso_holds",
    "optimal_probs",
    "aocs",
    "improvement_factor",
    "sampling_variance",
    "unbiased_aggregate",
    "sum_one_aggregate",
    "expected_sum_one_contributions",
    "make_sampling",
]

_ENUM_LIMIT = 12  # 2**n subset enumeration cap for generic certificates


class SamplingScheme:
    """A distribution over subsets of {0, ..., n-1} with positive marginals."""

    n: int

    @property
    def probabilities(self) -> np.ndarray:
        """Marginal inclusion probabilities p_i = Prob(i in S)."""
        raise NotImplementedError

    def probability_matrix(self) -> np.ndarray:
        """P_ij = Prob({i, j} subset of S); diagonal is p."""
        raise NotImplementedError

    def draw(self, rng) -> tuple:
        """One subset, as a sorted tuple of client indices."""
        raise NotImplementedError

    def subsets(self) -> Iterable[tuple]:
        """(subset, probability) pairs; only for enumerable schemes."""
        raise NotImplementedError(f"{type(self).__name__} is not enumerable")

    @property
    def expected_size(self) -> float:
        return float(np.sum(self.probabilities))

    def validate(self):
        p = self.probabilities
        if np.any(p <= 0) or np.any(p > 1):
            raise ValueError("scheme is not proper: marginals must lie in (0, 1]")


class FullParticipation(SamplingScheme):
    def __init__(self, n: int):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = int(n)

    @property
    def probabilities(self):
        return np.ones(self.n)

    def probability_matrix(self):
        return np.ones((self.n, self.n))

    def draw(self, rng):
        return tuple(range(self.n))

    def subsets(self):
        yield tuple(range(self.n)), 1.0


class UniformSampling(SamplingScheme):
    """Uniform over all subsets of fixed size m (the m-nice sampling)."""

    def __init__(self, n: int, m: int):
        if not 1 <= m <= n:
            raise ValueError("need 1 <= m <= n")
        self.n, self.m = int(n), int(m)

    @property
    def probabilities(self):
        return np.full(self.n, self.m / self.n)

    def probability_matrix(self):
        n, m = self.n, self.m
        off = m * (m - 1) / (n * (n - 1)) if n > 1 else 1.0
        P = np.full((n, n), off)
        np.fill_diagonal(P, m / n)
        return P

    def draw(self, rng):
        gen = as_generator(rng)
        return tuple(sorted(gen.choice(self.n, size=self.m, replace=False).tolist()))

    def subsets(self):
        total = math.comb(self.n, self.m)
        for combo in itertools.combinations(range(self.n), self.m):
            yield combo, 1.0 / total


class IndependentSampling(SamplingScheme):
    """Each client participates independently with its own probability."""

    def __init__(self, probs: Sequence[float]):
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("probability vector must be 1-d and non-empty")
        self.n = p.size
        self._p = p
        self.validate()

    @property
    def probabilities(self):
        return self._p.copy()

    def probability_matrix(self):
        P = np.outer(self._p, self._p)
        np.fill_diagonal(P, self._p)
        return P

    def draw(self, rng):
        gen = as_generator(rng)
        mask = gen.random(self.n) < self._p
        return tuple(np.flatnonzero(mask).tolist())

    def subsets(self):
        if self.n > _ENUM_LIMIT:
            raise NotImplementedError(
                f"independent sampling enumeration limited to n <= {_ENUM_LIMIT}"
            )
        for bits in itertools.product([0, 1], repeat=self.n):
            prob = 1.0
            for i, b in enumerate(bits):
                prob *= self._p[i] if b else 1.0 - self._p[i]
            if prob > 0:
                yield tuple(i for i, b in enumerate(bits) if b), prob


class EnumeratedSampling(SamplingScheme):
    """Explicit list of (subset, probability) pairs."""

    def __init__(self, n: int, table: Sequence[tuple]):
        self.n = int(n)
        cleaned = []
        total = 0.0
        for subset, prob in table:
            subset = tuple(sorted(int(i) for i in subset))
            if any(i < 0 or i >= n for i in subset):
                raise ValueError("subset index out of range")
            if prob < 0:
                raise ValueError("negative subset probability")
            cleaned.append((subset, float(prob)))
            total += prob
        if abs(total - 1.0) > 1e-12:
            raise ValueError("subset probabilities must sum to 1 within 1e-12")
        self.table = cleaned
        self.validate()

    @property
    def probabilities(self):
        p = np.zeros(self.n)
        for subset, prob in self.table:
            for i in subset:
                p[i] += prob
        return p

    def probability_matrix(self):
        P = np.zeros((self.n, self.n))
        for subset, prob in self.table:
            idx = np.array(subset, dtype=int)
            if idx.size:
                P[np.ix_(idx, idx)] += prob
        return P

    def draw(self, rng):
        gen = as_generator(rng)
        probs = np.array([prob for _, prob in self.table])
        j = gen.choice(len(self.table), p=probs / probs.sum())
        return self.table[j][0]

    def subsets(self):
        yield from self.table


# ---------------------------------------------------------------------------
# variance certificates
# ---------------------------------------------------------------------------


def eso_holds(scheme: SamplingScheme, v, tol: float = 1e-9) -> bool:
    """Eigenvalue check of P - p p^T <= Diag(p o v)."""
    p = scheme.probabilities
    P = scheme.probability_matrix()
    gap = np.diag(p * np.asarray(v, dtype=np.float64)) - (P - np.outer(p, p))
    return float(np.linalg.eigvalsh(gap)[0]) >= -tol


def eso_v(scheme: SamplingScheme) -> np.ndarray:
    """A valid variance certificate v for the scheme.

    Closed forms: full participation v = 0; uniform m-of-n
    v_i = (n - m)/(n - 1); independent v_i = 1 - p_i.  Enumerated schemes
    get the smallest uniform scalar certificate found by bisection with an
    eigenvalue check; the generic bound v_i = n (1 - p_i) always works.
    """
    scheme.validate()
    n = scheme.n
    if isinstance(scheme, FullParticipation):
        return np.zeros(n)
    if isinstance(scheme, UniformSampling):
        if n == 1:
            return np.zeros(1)
        return np.full(n, (n - scheme.m) / (n - 1))
    if isinstance(scheme, IndependentSampling):
        return 1.0 - scheme.probabilities
    if isinstance(scheme, EnumeratedSampling):
        if n > _ENUM_LIMIT:
            raise ValueError(
                f"generic certificate solver limited to n <= {_ENUM_LIMIT}; "
                "use a closed-form scheme kind for larger n"
            )
        hi = float(n)
        while not eso_holds(scheme, np.full(n, hi)):
            hi *= 2.0
        lo = 0.0
        while hi - lo > 1e-9:
            mid = 0.5 * (lo + hi)
            if eso_holds(scheme, np.full(n, mid)):
                hi = mid
            else:
                lo = mid
        return np.full(n, hi)
    # generic fallback for unknown scheme classes
    return scheme.n * (1.0 - scheme.probabilities)


# ---------------------------------------------------------------------------
# optimal client sampling
# ---------------------------------------------------------------------------


def optimal_probs(u, m: int) -> np.ndarray:
    """Budgeted importance-sampling probabilities minimizing the estimator
    variance sum_i (1 - p_i)/p_i * u_i^2 over independent samplings with
    sum_i p_i <= m.

    Let the positive norms be sorted ascending with prefix sums c_l; take
    the largest l with 0 < m + l - n_pos <= c_l / u_(l).  The n_pos - l
    largest norms saturate at p = 1 and the rest get
    p_i = (m + l - n_pos) u_i / c_l.  Zero-norm clients are excluded from
    the budget and get p_i = 0 (they are deterministic non-participants
    for the round).  Ties are broken by client index.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1 or u.size < 1:
        raise ValueError("u must be a non-empty 1-d vector")
    if np.any(u < 0):
        raise ValueError("norms must be nonnegative")
    if not np.any(u > 0):
        raise ValueError("all update norms are zero")
    n = u.size
    if not 1 <= m <= n:
        raise ValueError("need 1 <= m <= n")

    p = np.zeros(n)
    pos = u > 0
    up = u[pos]
    npos = int(pos.sum())
    if m >= npos:
        p[pos] = 1.0
        return p

    order = np.argsort(up, kind="stable")  # ascending magnitudes
    us = up[order]
    csum = np.cumsum(us)
    l = None
    for cand in range(npos, 0, -1):
        budget = m + cand - npos
        if budget <= 0:
            continue
        if budget <= csum[cand - 1] / us[cand - 1]:
            l = cand
            break
    if l is None:  # unreachable for proper inputs; guards float corner cases
        l = npos - m + 1
    pp = np.ones(npos)
    pp[order[:l]] = (m + l - npos) / csum[l - 1] * us[:l]
    p[pos] = pp
    return p


def aocs(u, m: int, j_max: int = 4) -> np.ndarray:
    """Aggregate-then-rescale approximation of :func:`optimal_probs`.

    Start from p_i = min(m u_i / sum(u), 1), then perform up to j_max
    rescaling rounds p_i <- min(C p_i, 1) over non-saturated clients with
    C = (m - n_sat) / sum of non-saturated p, stopping once C <= 1.
    Equals the exact optimum whenever the fixed point is reached.
    """
    u = np.asarray(u, dtype=np.float64)
    if j_max < 1:
        raise ValueError("j_max must be >= 1")
    if np.any(u < 0):
        raise ValueError("norms must be nonnegative")
    if not np.any(u > 0):
        raise ValueError("all update norms are zero")
    n = u.size
    if not 1 <= m <= n:
        raise ValueError("need 1 <= m <= n")

    p = np.zeros(n)
    pos = u > 0
    npos = int(pos.sum())
    if m >= npos:
        p[pos] = 1.0
        return p
    q = np.minimum(m * u[pos] / np.sum(u[pos]), 1.0)
    for _ in range(j_max):
        unsat = q < 1.0
        mass = float(q[unsat].sum())
        if mass <= 0.0:
            break
        c = (m - (npos - int(unsat.sum()))) / mass
        q[unsat] = np.minimum(c * q[unsat], 1.0)
        if c <= 1.0:
            break
    p[pos] = q
    return p


def sampling_variance(p, u) -> float:
    """sum_i (1 - p_i)/p_i u_i^2, the exact variance of the independent
    importance-sampling estimator (zero-probability clients must carry
    zero norms)."""
    p = np.asarray(p, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    active = u > 0
    if np.any(active & (p <= 0)):
        raise ValueError("a client with positive norm has zero probability")
    return float(np.sum((1.0 - p[active]) / p[active] * u[active] ** 2))


def improvement_factor(u, m: int) -> float:
    """Variance ratio of optimal vs uniform m-of-n independent sampling.

    Always in [0, 1]; equals 1 when all norms coincide and 0 when at most
    m norms are nonzero.
    """
    u = np.asarray(u, dtype=np.float64)
    if not np.any(u > 0):
        raise ValueError("all update norms are zero")
    n = u.size
    var_opt = sampling_variance(optimal_probs(u, m), u)
    if var_opt == 0.0:
        return 0.0
    var_uni = (n - m) / m * float(np.sum(u ** 2))
    # optimality guarantees the true ratio <= 1; clamp float round-off
    return min(var_opt / var_uni, 1.0)


# ---------------------------------------------------------------------------
# aggregation rules
# ---------------------------------------------------------------------------


def unbiased_aggregate(subset, p, deltas, w) -> np.ndarray:
    """sum over i in subset of (w_i / p_i) * delta_i; unbiased in S."""
    p = np.asarray(p, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    out = np.zeros(deltas.shape[1], dtype=np.float64)
    for i in subset:
        if p[i] <= 0:
            raise ValueError(f"sampled client {i} has zero probability")
        out += (w[i] / p[i]) * deltas[i]
    return out


def sum_one_aggregate(subset, w, deltas) -> np.ndarray:
    """sum over i in subset of w_i / (sum_{j in subset} w_j) * delta_i.

    The traditional renormalized rule; biased under non-uniform weights.
    """
    if len(subset) == 0:
        raise ValueError("cannot aggregate an empty participant set")
    w = np.asarray(w, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    wsum = float(sum(w[i] for i in subset))
    out = np.zeros(deltas.shape[1], dtype=np.float64)
    for i in subset:
        out += (w[i] / wsum) * deltas[i]
    return out


def expected_sum_one_contributions(scheme: SamplingScheme, w) -> np.ndarray:
    """E_S[ 1_{i in S} w_i / sum_{j in S} w_j ] for each client, by exact
    enumeration of the scheme's subsets."""
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros(scheme.n)
    for subset, prob in scheme.subsets():
        if not subset:
            continue
        wsum = float(sum(w[i] for i in subset))
        for i in subset:
            out[i] += prob * w[i] / wsum
    return out


def make_sampling(kind: str, n: int, **params) -> SamplingScheme:
    """Instantiate a sampling scheme by registry name."""
    if kind == "full":
        return FullParticipation(n)
    if kind == "uniform":
        return UniformSampling(n, int(params["m"]))
    if kind == "independent":
        return IndependentSampling(params["probs"])
    if kind == "enumerated":
        return EnumeratedSampling(n, params["table"])
    raise ValueError(f"unknown sampling kind {kind!r}")
