import math

import numpy as np
import pytest

from fedoptlab.problems import (
    ConditionedQuadratic,
    L1Regularizer,
    LogisticRegression,
    NoRegularizer,
    conditioned_quadratic,
    counterexample_problem,
    equal_partition,
    load_logistic_csv,
    logistic_regression,
    permute_epoch,
    prox,
    quadratic_anchors,
    synthetic_logistic,
)
from fedoptlab.rng import RandomStream

from _oracles import central_difference_grad, power_iteration_lmax


# ---------------------------------------------------------------------------
# quadratic anchors
# ---------------------------------------------------------------------------


def test_quadratic_anchors_optima():
    qa = quadratic_anchors([1, 2, 3], 3)
    assert np.allclose(qa.x_star, [1 / 6, 1 / 3, 1 / 2], atol=1e-15)
    assert np.allclose(qa.x_tilde, np.array([1, 4, 9]) / 14, atol=1e-15)
    assert np.linalg.norm(qa.full_grad(qa.x_star)) <= 1e-12


def test_quadratic_anchors_homogeneous_counts_have_no_inconsistency():
    qa = quadratic_anchors([2, 2, 2], 4)
    assert np.allclose(qa.x_tilde, qa.x_star, atol=1e-15)


def test_quadratic_anchors_client_gradient():
    qa = quadratic_anchors([1, 2], 3)
    x = np.array([1.0, 2.0, 3.0])
    assert np.allclose(qa.client_grad(0, x), 2 * (x - qa.anchors[0]))
    assert np.allclose(qa.component_grad(1, 1, x), 2 * (x - qa.anchors[1]))


def test_quadratic_anchors_requires_enough_dimensions():
    with pytest.raises(ValueError):
        quadratic_anchors([1, 1, 1], 2)


# ---------------------------------------------------------------------------
# divergence counterexample
# ---------------------------------------------------------------------------


def test_counterexample_gradients_and_optimum():
    ce = counterexample_problem()
    t = 0.37
    x = np.full(3, t)
    assert np.allclose(ce.component_grad(0, 0, x), (t / 2) * np.array([-11, 9, 9]))
    assert np.allclose(ce.component_grad(1, 0, x), (t / 2) * np.array([9, -11, 9]))
    assert ce.loss(np.zeros(3)) == 0.0
    assert np.allclose(ce.x_star, 0.0)


def test_counterexample_smoothness_via_power_iteration():
    ce = counterexample_problem()

    def hess_vec(v):
        # exact Hessian action of the mean objective
        return (2.0 / 3.0) * ce.a.T @ (ce.a @ v) + 0.5 * v

    lmax = power_iteration_lmax(hess_vec, 3, iters=2000)
    assert ce.L == pytest.approx(lmax, rel=1e-9)
    assert ce.L == pytest.approx(103.0 / 6.0)
    assert ce.mu == pytest.approx(7.0 / 6.0)


# ---------------------------------------------------------------------------
# logistic regression
# ---------------------------------------------------------------------------


def test_logistic_gradient_at_zero_is_half_signed_feature():
    A = np.array([[1.0, 2.0], [0.5, -1.0]])
    b = np.array([1.0, -1.0])
    lp = logistic_regression(A, b, 0.0, equal_partition(2, 2))
    for i in range(2):
        g = lp.component_grad(i, 0, np.zeros(2))
        assert np.allclose(g, -0.5 * b[i] * A[i])


def test_logistic_optimum_shrinks_with_heavy_regularization():
    lp = synthetic_logistic(3, 10, 4, l2=50.0, seed=0)
    x_star = lp.x_star
    max_row = float(np.max(np.linalg.norm(lp.A, axis=1)))
    assert np.linalg.norm(x_star) <= max_row / 50.0


def test_single_sample_logistic_against_bisection():
    # A=(1), b=1, l2=1: optimum solves -sigmoid(-x) + x = 0
    lp = logistic_regression(np.array([[1.0]]), np.array([1.0]), 1.0, [np.array([0])])

    def stationarity(x):
        return -1.0 / (1.0 + math.exp(x)) + x

    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = (lo + hi) / 2
        if stationarity(mid) < 0:
            lo = mid
        else:
            hi = mid
    assert lp.x_star[0] == pytest.approx(lo, abs=1e-10)
    # frozen from the bisection oracle: x = 1/(1 + e^x)
    assert lo == pytest.approx(0.4010581375, abs=1e-9)


def test_logistic_rejects_bad_labels():
    with pytest.raises(ValueError):
        logistic_regression(np.ones((2, 2)), np.array([1.0, 0.0]), 0.1,
                            equal_partition(2, 1))


def test_load_logistic_csv(tmp_path):
    path = tmp_path / "data.csv"
    rows = ["0.5,1.0,1", "-0.25,2.0,-1", "1.5,-1.0,1", "0.1,0.2,-1"]
    path.write_text("\n".join(rows) + "\n")
    lp = load_logistic_csv(path, 0.1, 2)
    assert lp.n == 2 and lp.dim == 2
    assert np.array_equal(lp.counts, [2, 2])
    assert np.array_equal(lp.b, [1, -1, 1, -1])


# ---------------------------------------------------------------------------
# gradient oracles vs finite differences
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "problem",
    [
        quadratic_anchors([1, 2, 3], 4),
        counterexample_problem(),
        synthetic_logistic(3, 6, 4, 0.1, seed=11),
        conditioned_quadratic(5, 50.0, seed=2),
    ],
    ids=["anchors", "counterexample", "logistic", "conditioned"],
)
def test_gradients_match_central_differences(problem):
    gen = RandomStream(31, ("fd",)).generator()
    for _ in range(20):
        x = gen.standard_normal(problem.dim)
        g = problem.full_grad(x)
        g_fd = central_difference_grad(problem.loss, x, h=1e-6)
        denom = max(np.linalg.norm(g), 1.0)
        assert np.linalg.norm(g - g_fd) / denom < 1e-5


@pytest.mark.parametrize(
    "problem",
    [
        quadratic_anchors([2, 3], 3),
        counterexample_problem(),
        synthetic_logistic(2, 8, 3, 0.2, seed=5),
        conditioned_quadratic(4, 20.0, seed=3),
    ],
    ids=["anchors", "counterexample", "logistic", "conditioned"],
)
def test_smoothness_and_strong_convexity_certificates(problem):
    gen = RandomStream(17, ("cert",)).generator()
    for _ in range(100):
        x = gen.standard_normal(problem.dim)
        y = gen.standard_normal(problem.dim)
        gx, gy = problem.full_grad(x), problem.full_grad(y)
        assert np.linalg.norm(gx - gy) <= problem.L * np.linalg.norm(x - y) * (1 + 1e-9)
        lower = problem.loss(x) + gx @ (y - x) + problem.mu / 2 * np.sum((y - x) ** 2)
        assert problem.loss(y) >= lower - 1e-9 * max(1.0, abs(problem.loss(y)))


# ---------------------------------------------------------------------------
# prox
# ---------------------------------------------------------------------------


def test_prox_identity_without_regularizer():
    x = np.array([1.0, -2.0])
    assert np.array_equal(prox(None, 0.5, x), x)
    assert np.array_equal(prox(NoRegularizer(), 2.0, x), x)


def test_prox_soft_threshold():
    out = prox(L1Regularizer(1.0), 1.0, np.array([2.0, -0.5]))
    assert np.allclose(out, [1.0, 0.0])


def test_prox_is_non_expansive():
    reg = L1Regularizer(0.7)
    gen = RandomStream(8).generator()
    for _ in range(50):
        x, y = gen.standard_normal(6), gen.standard_normal(6)
        px, py = reg.prox(0.3, x), reg.prox(0.3, y)
        assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-12


def test_prox_requires_positive_gamma():
    with pytest.raises(ValueError):
        prox(L1Regularizer(1.0), 0.0, np.zeros(2))


# ---------------------------------------------------------------------------
# epoch permutations
# ---------------------------------------------------------------------------


def test_permute_epoch_single_component():
    qa = quadratic_anchors([1, 3], 2)
    assert np.array_equal(permute_epoch(qa, 0, RandomStream(0)), [0])


def test_permute_epoch_uniform_over_permutations():
    qa = quadratic_anchors([1, 3], 2)
    counts = {}
    stream = RandomStream(77)
    n_draws = 100_000
    for t in range(n_draws):
        perm = tuple(permute_epoch(qa, 1, stream.derive("perm", t)))
        counts[perm] = counts.get(perm, 0) + 1
    assert len(counts) == 6
    for freq in counts.values():
        assert abs(freq / n_draws - 1 / 6) < 0.01


def test_permute_epoch_deterministic_per_seed():
    qa = quadratic_anchors([4], 4)
    a = permute_epoch(qa, 0, RandomStream(5, ("perm", 2, 0)))
    b = permute_epoch(qa, 0, RandomStream(5, ("perm", 2, 0)))
    assert np.array_equal(a, b)
    with pytest.raises(IndexError):
        permute_epoch(qa, 3, RandomStream(0))


# ---------------------------------------------------------------------------
# conditioned quadratic
# ---------------------------------------------------------------------------


def test_conditioned_quadratic_spectrum_and_optimum():
    q = conditioned_quadratic(8, 100.0, seed=1)
    eigs = np.linalg.eigvalsh(q.M)
    assert eigs[0] == pytest.approx(1.0, abs=1e-9)
    assert eigs[-1] == pytest.approx(100.0, abs=1e-7)
    assert q.L == pytest.approx(200.0) and q.mu == pytest.approx(2.0)
    assert np.linalg.norm(q.full_grad(q.x_star)) <= 1e-10
    with pytest.raises(ValueError):
        ConditionedQuadratic(3, 0.5)
