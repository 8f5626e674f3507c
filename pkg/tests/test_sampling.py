import itertools

import numpy as np
import pytest

from fedoptlab.rng import RandomStream
from fedoptlab.sampling import (
    EnumeratedSampling,
    FullParticipation,
    IndependentSampling,
    UniformSampling,
    aocs,
    eso_holds,
    eso_v,
    expected_sum_one_contributions,
    improvement_factor,
    make_sampling,
    optimal_probs,
    sampling_variance,
    sum_one_aggregate,
    unbiased_aggregate,
)

from _oracles import kkt_subset_oracle, variance_objective


# ---------------------------------------------------------------------------
# draws and probability matrices
# ---------------------------------------------------------------------------


def test_full_participation_draws_everyone():
    scheme = FullParticipation(4)
    assert scheme.draw(RandomStream(0)) == (0, 1, 2, 3)
    assert np.array_equal(scheme.probabilities, np.ones(4))


def test_degenerate_independent_draws_everyone():
    scheme = IndependentSampling([1.0, 1.0, 1.0])
    for s in range(5):
        assert scheme.draw(RandomStream(s)) == (0, 1, 2)


def test_independent_pair_probability():
    scheme = IndependentSampling([0.5, 0.5])
    gen = RandomStream(123, ("pairs",)).generator()
    both = 0
    n_draws = 100_000
    for _ in range(n_draws):
        mask = gen.random(2) < scheme.probabilities
        if mask.all():
            both += 1
    assert abs(both / n_draws - 0.25) < 0.01


@pytest.mark.parametrize(
    "scheme",
    [
        UniformSampling(5, 2),
        IndependentSampling([0.2, 0.7, 0.5, 0.9]),
        EnumeratedSampling(3, [((0,), 0.2), ((0, 1), 0.3), ((1, 2), 0.5)]),
    ],
    ids=["uniform", "independent", "enumerated"],
)
def test_probability_matrix_matches_enumeration(scheme):
    P = scheme.probability_matrix()
    n = scheme.n
    P_ref = np.zeros((n, n))
    for subset, prob in scheme.subsets():
        for i in subset:
            for j in subset:
                P_ref[i, j] += prob
    assert np.allclose(P, P_ref, atol=1e-12)
    assert abs(np.trace(P) - scheme.expected_size) < 1e-12
    p = scheme.probabilities
    assert np.all(P <= np.minimum.outer(p, p) + 1e-12)


def test_empirical_pair_frequencies_match_matrix():
    scheme = UniformSampling(5, 2)
    P = scheme.probability_matrix()
    n_draws = 1_000_000
    gen = RandomStream(7, ("freq",)).generator()
    # vectorized m-nice draws: take the 2 smallest of 5 uniforms per row
    u = gen.random((n_draws, 5))
    picks = np.argsort(u, axis=1)[:, :2]
    counts = np.zeros((5, 5))
    for a in range(5):
        for b in range(5):
            if a == b:
                counts[a, a] = np.mean(np.any(picks == a, axis=1))
            else:
                counts[a, b] = np.mean(
                    np.any(picks == a, axis=1) & np.any(picks == b, axis=1)
                )
    stderr = np.sqrt(P * (1 - P) / n_draws)
    assert np.all(np.abs(counts - P) <= 4 * stderr + 1e-9)


def test_enumerated_requires_probabilities_summing_to_one():
    with pytest.raises(ValueError):
        EnumeratedSampling(2, [((0,), 0.5), ((1,), 0.4)])


def test_improper_scheme_rejected():
    with pytest.raises(ValueError):
        IndependentSampling([0.5, 0.0])
    with pytest.raises(ValueError):
        # client 2 never appears
        EnumeratedSampling(3, [((0,), 0.5), ((1,), 0.5)])


# ---------------------------------------------------------------------------
# variance certificates
# ---------------------------------------------------------------------------


def test_eso_closed_forms():
    assert np.array_equal(eso_v(FullParticipation(5)), np.zeros(5))
    v = eso_v(UniformSampling(6, 2))
    assert np.allclose(v, (6 - 2) / (6 - 1))
    assert np.allclose(eso_v(UniformSampling(2, 1)), 1.0)
    v = eso_v(IndependentSampling([0.3, 0.7]))
    assert np.allclose(v, [0.7, 0.3])


@pytest.mark.parametrize(
    "scheme",
    [
        FullParticipation(4),
        UniformSampling(6, 2),
        UniformSampling(2, 1),
        IndependentSampling([0.3, 0.7, 0.5]),
        EnumeratedSampling(3, [((0, 1), 0.25), ((1, 2), 0.25), ((0, 2), 0.5)]),
    ],
    ids=["full", "uniform", "uniform1of2", "independent", "enumerated"],
)
def test_eso_certificate_is_psd(scheme):
    v = eso_v(scheme)
    assert eso_holds(scheme, v)
    assert np.all(v >= (1 - scheme.probabilities) - 1e-9)


def test_independent_eso_holds_with_equality():
    scheme = IndependentSampling([0.3, 0.7])
    p = scheme.probabilities
    gap = np.diag(p * (1 - p)) - (scheme.probability_matrix() - np.outer(p, p))
    assert np.allclose(gap, 0.0, atol=1e-14)


def test_enumerated_scalar_certificate_via_bisection():
    # the uniform 2-of-4 scheme written out explicitly: the bisected scalar
    # must be a valid certificate and no larger than the generic bound
    table = [(s, 1.0 / 6) for s in itertools.combinations(range(4), 2)]
    scheme = EnumeratedSampling(4, table)
    v = eso_v(scheme)
    assert eso_holds(scheme, v)
    closed = (4 - 2) / (4 - 1)
    assert v[0] <= 4 * (1 - 0.5) + 1e-6
    assert v[0] == pytest.approx(closed, abs=1e-6)


def test_eso_generic_solver_size_guard():
    table = [(tuple(range(13)), 1.0)]
    with pytest.raises(ValueError):
        eso_v(EnumeratedSampling(13, table))


def test_variance_bound_lemma_equality_for_independent():
    # enumerated LHS equals sum w^2 (1-p)/p ||zeta||^2 exactly
    gen = RandomStream(3, ("lemma",)).generator()
    n, d = 6, 4
    zeta = gen.standard_normal((n, d))
    w = gen.random(n)
    w /= w.sum()
    p = gen.uniform(0.3, 1.0, n)
    scheme = IndependentSampling(p)
    target = (w[:, None] * zeta).sum(axis=0)
    lhs = 0.0
    for subset, prob in scheme.subsets():
        est = np.zeros(d)
        for i in subset:
            est += w[i] / p[i] * zeta[i]
        diff = est - target
        lhs += prob * float(diff @ diff)
    rhs = float(np.sum(w ** 2 * (1 - p) / p * np.sum(zeta ** 2, axis=1)))
    assert lhs == pytest.approx(rhs, rel=1e-10)


# ---------------------------------------------------------------------------
# optimal client sampling
# ---------------------------------------------------------------------------


def test_optimal_probs_closed_form_examples():
    assert np.allclose(optimal_probs([1, 2, 3], 2), [1 / 3, 2 / 3, 1.0])
    assert np.allclose(optimal_probs([1, 1, 8], 2), [0.5, 0.5, 1.0])
    assert np.allclose(optimal_probs([1, 2, 3], 3), 1.0)


def test_optimal_probs_matches_kkt_oracle():
    rng = np.random.default_rng(42)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        u = rng.uniform(0.0, 3.0, n)
        if not np.any(u > 0):
            u[0] = 1.0
        m = int(rng.integers(1, n + 1))
        p = optimal_probs(u, m)
        _, best_obj = kkt_subset_oracle(u, m)
        assert variance_objective(p, u) <= best_obj + 1e-6 * max(1.0, best_obj)
        assert p.sum() <= m + 1e-9
        # KKT stationarity: the derivative -u_i^2/p_i^2 is one common
        # multiplier over non-saturated clients, i.e. u_i/p_i is constant
        interior = (p > 1e-12) & (p < 1 - 1e-12) & (u > 0)
        if interior.sum() > 1:
            ratios = u[interior] / p[interior]
            assert np.ptp(ratios) <= 1e-8 * ratios.max()


def test_optimal_probs_zero_norm_clients_excluded():
    p = optimal_probs([0.0, 2.0, 0.0, 1.0], 1)
    assert p[0] == 0.0 and p[2] == 0.0
    assert p.sum() <= 1 + 1e-12
    with pytest.raises(ValueError):
        optimal_probs([0.0, 0.0], 1)


def test_optimal_probs_tie_break_by_index():
    p = optimal_probs([2.0, 2.0, 2.0], 2)
    assert np.allclose(p, 2 / 3)


def test_aocs_examples():
    assert np.allclose(aocs([1, 2, 3], 2, j_max=4), [1 / 3, 2 / 3, 1.0])
    # hand trace: first pass truncates client 3, one rescale with C = 2.5
    assert np.allclose(aocs([1, 1, 8], 2, j_max=4), [0.5, 0.5, 1.0])
    assert np.allclose(aocs([5, 5, 5, 5], 3, j_max=4), 0.75)


def test_aocs_matches_exact_when_fixed_point_reached():
    rng = np.random.default_rng(9)
    for _ in range(50):
        n = int(rng.integers(2, 9))
        u = rng.uniform(0.1, 3.0, n)
        m = int(rng.integers(1, n + 1))
        p_exact = optimal_probs(u, m)
        p_apx = aocs(u, m, j_max=50)
        assert np.allclose(p_apx, p_exact, atol=1e-9)


def test_improvement_factor_bounds_and_examples():
    assert improvement_factor([3, 3, 3, 3], 2) == pytest.approx(1.0)
    assert improvement_factor([0, 0, 5], 1) == 0.0
    # u = (1,2,3), m = 2: var_ocs = 4, var_uniform = 7
    assert improvement_factor([1, 2, 3], 2) == pytest.approx(4.0 / 7.0)
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(2, 8))
        u = rng.uniform(0, 2, n)
        if not np.any(u > 0):
            u[0] = 1.0
        m = int(rng.integers(1, n + 1))
        assert 0.0 <= improvement_factor(u, m) <= 1.0
    # scale invariance
    u = np.array([0.5, 1.5, 2.5, 0.1])
    a1 = improvement_factor(u, 2)
    a2 = improvement_factor(10.0 * u, 2)
    assert a1 == pytest.approx(a2, rel=1e-12)


def test_improvement_factor_cross_checked_by_subset_enumeration():
    # place client updates on orthogonal axes so the estimator variance is
    # exactly enumerable over the independent sampling's subsets
    u = np.array([1.0, 2.0, 3.0])
    m = 2
    w = np.ones(3)
    p = optimal_probs(u, m)
    scheme = IndependentSampling(p)
    deltas = np.diag(u)
    target = deltas.sum(axis=0)
    var = 0.0
    for subset, prob in scheme.subsets():
        est = np.zeros(3)
        for i in subset:
            est += deltas[i] / p[i]
        var += prob * float((est - target) @ (est - target))
    assert var == pytest.approx(sampling_variance(p, u), rel=1e-12)
    p_uni = np.full(3, m / 3)
    var_uni = 0.0
    for subset, prob in IndependentSampling(p_uni).subsets():
        est = np.zeros(3)
        for i in subset:
            est += deltas[i] / p_uni[i]
        var_uni += prob * float((est - target) @ (est - target))
    assert var / var_uni == pytest.approx(improvement_factor(u, m), rel=1e-12)


# ---------------------------------------------------------------------------
# aggregation rules
# ---------------------------------------------------------------------------


def test_unbiased_aggregate_full_participation_is_weighted_sum():
    gen = RandomStream(4).generator()
    deltas = gen.standard_normal((3, 5))
    w = np.array([0.2, 0.3, 0.5])
    out = unbiased_aggregate((0, 1, 2), np.ones(3), deltas, w)
    assert np.allclose(out, (w[:, None] * deltas).sum(axis=0))


def test_unbiased_aggregate_expectation_by_enumeration():
    gen = RandomStream(5).generator()
    deltas = gen.standard_normal((3, 4))
    w = np.array([1 / 6, 2 / 6, 3 / 6])
    scheme = UniformSampling(3, 2)
    p = scheme.probabilities
    expected = np.zeros(4)
    for subset, prob in scheme.subsets():
        expected += prob * unbiased_aggregate(subset, p, deltas, w)
    assert np.allclose(expected, (w[:, None] * deltas).sum(axis=0), atol=1e-12)


def test_unbiased_aggregate_zero_probability_participant_rejected():
    with pytest.raises(ValueError):
        unbiased_aggregate((0,), np.array([0.0, 1.0]), np.ones((2, 2)), np.ones(2))


def test_sum_one_constants_for_two_of_three():
    w = np.array([1 / 6, 2 / 6, 3 / 6])
    contribs = expected_sum_one_contributions(UniformSampling(3, 2), w)
    assert np.allclose(contribs, [7 / 36, 16 / 45, 9 / 20], atol=1e-12)
    # not proportional to w: the sum-one rule is biased here
    assert not np.allclose(contribs / contribs.sum(), w, atol=1e-3)


def test_sum_one_single_client_returns_delta():
    deltas = np.array([[2.0, -1.0]])
    out = sum_one_aggregate((0,), np.array([0.4]), deltas)
    assert np.allclose(out, deltas[0])
    with pytest.raises(ValueError):
        sum_one_aggregate((), np.array([0.4]), deltas)


def test_sum_one_unbiased_under_equal_weights():
    w = np.full(4, 0.25)
    contribs = expected_sum_one_contributions(UniformSampling(4, 2), w)
    assert np.allclose(contribs, w, atol=1e-12)


def test_make_sampling_registry():
    assert isinstance(make_sampling("full", 3), FullParticipation)
    assert isinstance(make_sampling("uniform", 3, m=2), UniformSampling)
    assert isinstance(make_sampling("independent", 3, probs=[0.5, 0.5, 1.0]),
                      IndependentSampling)
    with pytest.raises(ValueError):
        make_sampling("nope", 3)
