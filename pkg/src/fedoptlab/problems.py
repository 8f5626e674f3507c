"""Synthetic finite-sum objectives with exact oracles.

Each problem is f(x) = sum_i w_i f_i(x) with f_i(x) the mean of |D_i|
component losses f_ij; all gradients are exact (no sampling inside the
oracles), problems are immutable after construction, and known optima are
stored where a closed form or a cheap high-precision solve exists.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .rng import as_generator

__all__ = [
    "Regularizer",
    "NoRegularizer",
    "L1Regularizer",
    "prox",
    "FiniteSumProblem",
    "QuadraticAnchors",
    "quadratic_anchors",
    "CounterexampleProblem",
    "counterexample_problem",
    "LogisticRegression",
    "logistic_regression",
    "synthetic_logistic",
    "load_logistic_csv",
    "ConditionedQuadratic",
    "conditioned_quadratic",
    "permute_epoch",
    "equal_partition",
]


# ---------------------------------------------------------------------------
# regularizers and prox
# ---------------------------------------------------------------------------


class Regularizer:
    def value(self, x) -> float:
        raise NotImplementedError

    def prox(self, gamma: float, x) -> np.ndarray:
        raise NotImplementedError


class NoRegularizer(Regularizer):
    def value(self, x):
        return 0.0

    def prox(self, gamma, x):
        return np.asarray(x, dtype=np.float64).copy()


class L1Regularizer(Regularizer):
    def __init__(self, lam: float):
        if lam < 0:
            raise ValueError("l1 weight must be nonnegative")
        self.lam = float(lam)

    def value(self, x):
        return self.lam * float(np.sum(np.abs(x)))

    def prox(self, gamma, x):
        # componentwise soft threshold by gamma * lam
        t = gamma * self.lam
        x = np.asarray(x, dtype=np.float64)
        return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def prox(reg: Optional[Regularizer], gamma: float, x) -> np.ndarray:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if reg is None:
        reg = NoRegularizer()
    return reg.prox(gamma, x)


# ---------------------------------------------------------------------------
# base problem
# ---------------------------------------------------------------------------


class FiniteSumProblem:
    """n clients, per-client component losses, weights summing to one."""

    dim: int
    counts: np.ndarray          # |D_i| per client
    weights: np.ndarray         # w_i, sum to 1
    L: float                    # component smoothness
    mu: float                   # strong convexity of f (0 if none)
    x_star: Optional[np.ndarray] = None
    regularizer: Regularizer = NoRegularizer()

    @property
    def n(self) -> int:
        return len(self.counts)

    # component oracles -----------------------------------------------------

    def component_grad(self, i: int, j: int, x) -> np.ndarray:
        raise NotImplementedError

    def component_loss(self, i: int, j: int, x) -> float:
        raise NotImplementedError

    def client_grad(self, i: int, x) -> np.ndarray:
        m = int(self.counts[i])
        g = np.zeros(self.dim)
        for j in range(m):
            g += self.component_grad(i, j, x)
        return g / m

    def client_loss(self, i: int, x) -> float:
        m = int(self.counts[i])
        return sum(self.component_loss(i, j, x) for j in range(m)) / m

    def full_grad(self, x) -> np.ndarray:
        g = np.zeros(self.dim)
        for i in range(self.n):
            g += self.weights[i] * self.client_grad(i, x)
        return g

    def loss(self, x) -> float:
        return sum(
            self.weights[i] * self.client_loss(i, x) for i in range(self.n)
        )

    def objective(self, x) -> float:
        return self.loss(x) + self.regularizer.value(x)

    # metadata ----------------------------------------------------------------

    @property
    def f_star(self) -> float:
        if self.x_star is None:
            return float("nan")
        return self.objective(self.x_star)

    def _check_weights(self):
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-12:
            raise ValueError("client weights must sum to 1 within 1e-12")
        if np.any(self.counts < 1):
            raise ValueError("every client needs at least one component")


# ---------------------------------------------------------------------------
# quadratic anchor problem (the objective-inconsistency testbed)
# ---------------------------------------------------------------------------


class QuadraticAnchors(FiniteSumProblem):
    """f_ij(x) = ||x - e_i||^2, repeated |D_i| times on client i.

    Weights are w_i = |D_i| / |D|, so the minimizer is
    x* = sum_i w_i e_i.  Local-update methods that run |D_i| proportional
    local steps without step-size scaling instead converge to
    x~ = sum_i |D_i|^2 e_i / sum_j |D_j|^2, which is stored for assertions.
    """

    def __init__(self, counts: Sequence[int], d: int):
        counts = np.asarray(counts, dtype=int)
        n = counts.size
        if d < n:
            raise ValueError("dimension must be at least the client count")
        self.dim = int(d)
        self.counts = counts
        self.weights = counts / counts.sum()
        self.anchors = np.eye(d)[:n]
        self.L = 2.0
        self.mu = 2.0
        self.x_star = self.weights @ self.anchors
        self.x_tilde = (counts.astype(float) ** 2 / np.sum(counts.astype(float) ** 2)) @ self.anchors
        self._check_weights()

    def component_grad(self, i, j, x):
        return 2.0 * (np.asarray(x, dtype=np.float64) - self.anchors[i])

    def component_loss(self, i, j, x):
        diff = np.asarray(x, dtype=np.float64) - self.anchors[i]
        return float(diff @ diff)

    def client_grad(self, i, x):
        return self.component_grad(i, 0, x)

    def client_loss(self, i, x):
        return self.component_loss(i, 0, x)


def quadratic_anchors(counts, d: int) -> QuadraticAnchors:
    return QuadraticAnchors(counts, d)


# ---------------------------------------------------------------------------
# three-client divergence counterexample
# ---------------------------------------------------------------------------


class CounterexampleProblem(FiniteSumProblem):
    """Three quadratics on which greedy sparsification without error
    feedback provably diverges: f_i(x) = <a_i, x>^2 + ||x||^2 / 4 with
    a_1 = (-3, 2, 2), a_2 = (2, -3, 2), a_3 = (2, 2, -3); minimizer 0.
    """

    def __init__(self):
        self.dim = 3
        self.counts = np.ones(3, dtype=int)
        self.weights = np.full(3, 1.0 / 3.0)
        self.a = np.array([[-3.0, 2, 2], [2, -3.0, 2], [2, 2, -3.0]])
        # full Hessian: (2/3) sum_i a_i a_i^T + I/2
        hess = (2.0 / 3.0) * sum(np.outer(ai, ai) for ai in self.a) + 0.5 * np.eye(3)
        eigs = np.linalg.eigvalsh(hess)
        self.L = float(eigs[-1])
        self.mu = float(eigs[0])
        self.x_star = np.zeros(3)
        self._check_weights()

    def component_grad(self, i, j, x):
        x = np.asarray(x, dtype=np.float64)
        return 2.0 * (self.a[i] @ x) * self.a[i] + 0.5 * x

    def component_loss(self, i, j, x):
        x = np.asarray(x, dtype=np.float64)
        return float((self.a[i] @ x) ** 2 + 0.25 * (x @ x))


def counterexample_problem() -> CounterexampleProblem:
    return CounterexampleProblem()


# ---------------------------------------------------------------------------
# l2-regularized logistic regression
# ---------------------------------------------------------------------------


def _sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class LogisticRegression(FiniteSumProblem):
    """Per-sample loss log(1 + exp(-b_ij A_ij^T x)) + (l2/2)||x||^2.

    L = l2 + max_j ||A_j||^2 / 4 and mu = l2.  The reference minimizer is
    computed on demand by a damped Newton solve (the problem is smooth and,
    for l2 > 0, strongly convex).
    """

    def __init__(self, features, labels, l2: float, partition: Sequence[np.ndarray],
                 regularizer: Optional[Regularizer] = None):
        A = np.asarray(features, dtype=np.float64)
        b = np.asarray(labels, dtype=np.float64)
        if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.size:
            raise ValueError("features must be (N, d) with N matching labels")
        if not np.all(np.isin(b, (-1.0, 1.0))):
            raise ValueError("labels must be +-1")
        if l2 < 0:
            raise ValueError("l2 must be nonnegative")
        self.A, self.b, self.l2 = A, b, float(l2)
        self.dim = A.shape[1]
        self.partition = [np.asarray(ix, dtype=int) for ix in partition]
        used = np.concatenate(self.partition)
        if sorted(used.tolist()) != list(range(A.shape[0])):
            raise ValueError("partition must cover every sample exactly once")
        self.counts = np.array([ix.size for ix in self.partition], dtype=int)
        self.weights = self.counts / self.counts.sum()
        self.L = self.l2 + float(np.max(np.sum(A * A, axis=1))) / 4.0
        self.mu = self.l2
        if regularizer is not None:
            self.regularizer = regularizer
        self._check_weights()
        self._x_star_cache = None

    def _margin(self, rows, x):
        return self.b[rows] * (self.A[rows] @ x)

    def component_grad(self, i, j, x):
        x = np.asarray(x, dtype=np.float64)
        row = self.partition[i][j]
        t = self.b[row] * (self.A[row] @ x)
        return -self.b[row] * _sigmoid(np.array([-t]))[0] * self.A[row] + self.l2 * x

    def component_loss(self, i, j, x):
        x = np.asarray(x, dtype=np.float64)
        row = self.partition[i][j]
        t = self.b[row] * (self.A[row] @ x)
        return float(np.logaddexp(0.0, -t) + 0.5 * self.l2 * (x @ x))

    def client_grad(self, i, x):
        x = np.asarray(x, dtype=np.float64)
        rows = self.partition[i]
        t = self._margin(rows, x)
        coeff = -self.b[rows] * _sigmoid(-t)
        return (coeff @ self.A[rows]) / rows.size + self.l2 * x

    def client_loss(self, i, x):
        x = np.asarray(x, dtype=np.float64)
        rows = self.partition[i]
        t = self._margin(rows, x)
        return float(np.mean(np.logaddexp(0.0, -t)) + 0.5 * self.l2 * (x @ x))

    def full_grad(self, x):
        x = np.asarray(x, dtype=np.float64)
        g = np.zeros(self.dim)
        for i in range(self.n):
            g += self.weights[i] * self.client_grad(i, x)
        return g

    # reference optimum -------------------------------------------------------

    def solve_reference(self, tol: float = 1e-14, max_iter: int = 200) -> np.ndarray:
        """Damped Newton solve of the weighted smooth objective."""
        if self.l2 <= 0:
            raise ValueError("reference solve requires l2 > 0")
        sample_w = np.concatenate(
            [np.full(ix.size, self.weights[i] / ix.size)
             for i, ix in enumerate(self.partition)]
        )
        rows = np.concatenate(self.partition)
        A, b = self.A[rows], self.b[rows]
        x = np.zeros(self.dim)
        for _ in range(max_iter):
            t = b * (A @ x)
            s = _sigmoid(-t)
            grad = ((-b * s * sample_w) @ A) + self.l2 * x
            if np.linalg.norm(grad) < tol:
                break
            h = s * (1.0 - s) * sample_w
            hess = (A.T * h) @ A + self.l2 * np.eye(self.dim)
            step = np.linalg.solve(hess, grad)
            # backtracking on the objective
            f0 = self.loss(x)
            alpha = 1.0
            while self.loss(x - alpha * step) > f0 and alpha > 1e-8:
                alpha *= 0.5
            x = x - alpha * step
        return x

    @property
    def x_star(self):
        if self._x_star_cache is None:
            self._x_star_cache = self.solve_reference()
        return self._x_star_cache

    @x_star.setter
    def x_star(self, value):
        self._x_star_cache = value


def logistic_regression(features, labels, l2, partition) -> LogisticRegression:
    return LogisticRegression(features, labels, l2, partition)


def equal_partition(n_samples: int, n_clients: int):
    """Contiguous near-equal split of sample indices across clients."""
    if n_clients < 1 or n_clients > n_samples:
        raise ValueError("need 1 <= clients <= samples")
    return [np.array(chunk) for chunk in np.array_split(np.arange(n_samples), n_clients)]


def synthetic_logistic(
    n_clients: int,
    samples_per_client: int,
    d: int,
    l2: float,
    seed: int = 0,
    rng=None,
) -> LogisticRegression:
    """Gaussian features with rows normalized to unit norm and labels from
    a planted direction with 10% flips; heterogeneity comes from giving
    each client's block a distinct random mean shift."""
    gen = as_generator(rng) if rng is not None else np.random.default_rng(seed)
    N = n_clients * samples_per_client
    planted = gen.standard_normal(d)
    blocks = []
    for _ in range(n_clients):
        shift = 0.5 * gen.standard_normal(d)
        blocks.append(gen.standard_normal((samples_per_client, d)) + shift)
    A = np.vstack(blocks)
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    b = np.sign(A @ planted + 1e-12)
    flip = gen.random(N) < 0.1
    b[flip] *= -1.0
    return LogisticRegression(A, b, l2, equal_partition(N, n_clients))


def load_logistic_csv(path, l2: float, n_clients: int) -> LogisticRegression:
    """Small dense CSV loader: rows are samples, the last column the +-1 label."""
    data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if data.shape[1] < 2:
        raise ValueError("need at least one feature column and a label column")
    A, b = data[:, :-1], data[:, -1]
    return LogisticRegression(A, b, l2, equal_partition(A.shape[0], n_clients))


# ---------------------------------------------------------------------------
# conditioned least-squares quadratic
# ---------------------------------------------------------------------------


class ConditionedQuadratic(FiniteSumProblem):
    """f(x) = x^T M x - y^T x with eigenvalues of M spread over
    [1, kappa]; a single-client quadratic with exact optimum
    x* = (2M)^{-1} y, used for contraction-rate checks."""

    def __init__(self, d: int, kappa: float, seed: int = 0, rng=None):
        if kappa < 1:
            raise ValueError("kappa must be >= 1")
        gen = as_generator(rng) if rng is not None else np.random.default_rng(seed)
        diag = np.linspace(1.0, kappa, d)
        q, _ = np.linalg.qr(gen.standard_normal((d, d)))
        self.M = q.T @ np.diag(diag) @ q
        self.y = gen.uniform(0.0, 1.0, d)
        self.dim = int(d)
        self.counts = np.ones(1, dtype=int)
        self.weights = np.ones(1)
        self.L = 2.0 * float(diag[-1])
        self.mu = 2.0 * float(diag[0])
        self.x_star = np.linalg.solve(2.0 * self.M, self.y)
        self._check_weights()

    def component_grad(self, i, j, x):
        x = np.asarray(x, dtype=np.float64)
        return 2.0 * (self.M @ x) - self.y

    def component_loss(self, i, j, x):
        x = np.asarray(x, dtype=np.float64)
        return float(x @ self.M @ x - self.y @ x)


def conditioned_quadratic(d: int, kappa: float, seed: int = 0) -> ConditionedQuadratic:
    return ConditionedQuadratic(d, kappa, seed=seed)


# ---------------------------------------------------------------------------
# epoch permutations
# ---------------------------------------------------------------------------


def permute_epoch(problem: FiniteSumProblem, client: int, rng) -> np.ndarray:
    """Uniform random permutation of the client's component indices."""
    if not 0 <= client < problem.n:
        raise IndexError("client index out of range")
    gen = as_generator(rng)
    return gen.permutation(int(problem.counts[client]))
