import numpy as np
import pytest

from fedoptlab.algorithms import (
    DivergenceGuardError,
    cgd,
    dcsgd,
    dcsgd_ef,
    ef_schedule,
)
from fedoptlab.compressors import Identity, NaturalCompression, RandK, TopK
from fedoptlab.problems import (
    conditioned_quadratic,
    counterexample_problem,
    quadratic_anchors,
)
from fedoptlab.rng import RandomStream
from fedoptlab.sampling import IndependentSampling, UniformSampling

from _oracles import compressor_moments, enumerate_subsets_uniform


# ---------------------------------------------------------------------------
# compressed gradient descent
# ---------------------------------------------------------------------------


def test_cgd_identity_equals_plain_gradient_descent():
    q = conditioned_quadratic(10, 30.0, seed=4)
    eta = 1.0 / q.L
    res = cgd(q, Identity(), eta, 50)
    x = np.zeros(10)
    for _ in range(50):
        x = x - eta * q.full_grad(x)
    assert np.array_equal(res.x, x)


def test_cgd_identity_contracts_at_condition_rate():
    q = conditioned_quadratic(12, 20.0, seed=1)
    res = cgd(q, Identity(), 1.0 / q.L, 100)
    gaps = res.series("f_gap")
    rate = 1.0 - q.mu / q.L
    for k in range(1, len(gaps)):
        assert gaps[k] <= rate * gaps[k - 1] + 1e-15


def test_cgd_zero_gradient_is_fixed_point():
    q = conditioned_quadratic(6, 5.0, seed=2)
    res = cgd(q, TopK(2), 1.0 / q.L, 5, x0=q.x_star)
    assert np.allclose(res.x, q.x_star, atol=1e-12)
    assert np.all(res.series("grad_norm_sq") <= 1e-20)


def test_cgd_validates_step_size():
    q = conditioned_quadratic(4, 5.0)
    with pytest.raises(ValueError):
        cgd(q, Identity(), 2.0 / q.L, 5)


def test_cgd_top_k_per_step_contraction_with_realized_delta():
    q = conditioned_quadratic(30, 50.0, seed=7)
    res = cgd(q, TopK(5), 1.0 / q.L, 200)
    gaps = np.concatenate(([q.loss(np.zeros(30)) - q.f_star], res.series("f_gap")))
    deltas = res.extras["delta_k"]
    for k in range(200):
        bound = (1.0 - q.mu / (q.L * deltas[k])) * gaps[k]
        assert gaps[k + 1] <= bound * (1 + 1e-12) + 1e-15


# ---------------------------------------------------------------------------
# distributed compressed SGD
# ---------------------------------------------------------------------------


def test_dcsgd_reduces_to_distributed_gd():
    qa = quadratic_anchors([1, 2, 3], 3)
    eta = 0.2
    res = dcsgd(qa, Identity(), 40, eta)
    x = np.zeros(3)
    for _ in range(40):
        x = x - eta * qa.full_grad(x)
    assert np.allclose(res.x, x, atol=1e-15)


def test_dcsgd_guard_rejects_biased_compressor():
    with pytest.raises(DivergenceGuardError, match="counterexample"):
        dcsgd(counterexample_problem(), TopK(1), 10, 0.05)


def test_dcsgd_divergence_counterexample_formula():
    ce = counterexample_problem()
    eta = 0.07
    res = dcsgd(ce, TopK(1), 20, eta, allow_biased=True, x0=np.ones(3))
    expected = (1.0 + 11.0 * eta / 6.0) ** 20
    assert np.max(np.abs(res.x - expected) / expected) < 1e-12


def test_dcsgd_partial_participation_is_unbiased_by_enumeration():
    # E[master update | state] equals the full-participation update,
    # enumerating subsets (n <= 6) and rand-k outcomes (d <= 5)
    qa = quadratic_anchors([1, 1, 2], 4)
    x = np.array([0.3, -0.2, 0.5, 0.1])
    comp = RandK(2)
    scheme = UniformSampling(3, 2)
    p = scheme.probabilities
    w = qa.weights
    grads = [qa.client_grad(i, x) for i in range(3)]
    expected = np.zeros(4)
    for subset, prob in enumerate_subsets_uniform(3, 2):
        for i in subset:
            mean_i, _ = compressor_moments(comp, grads[i])
            expected += prob * (w[i] / p[i]) * mean_i
    ideal = sum(w[i] * grads[i] for i in range(3))
    assert np.allclose(expected, ideal, atol=1e-12)


def test_dcsgd_bidirectional_natural_round_count():
    # natural compression on both sides on an over-parameterized quadratic
    # (one shared minimizer, so compression noise vanishes at the optimum):
    # converges, and the extra rounds stay within the (9/8)^2 slowdown
    qa = quadratic_anchors([2, 2, 2], 3)
    qa.anchors = np.tile(qa.anchors[0], (3, 1))
    qa.x_star = qa.anchors[0].copy()
    target = 1e-8
    eta0 = 1.0 / qa.L

    base = dcsgd(qa, Identity(), 500, eta0, seed=3)
    k0 = int(np.argmax(base.series("f_gap") <= target)) + 1
    assert base.series("f_gap")[k0 - 1] <= target

    slow = (9.0 / 8.0) ** 2
    comp = dcsgd(qa, NaturalCompression(), 500, eta0 / slow, seed=3,
                 master_compressor=NaturalCompression())
    gaps = comp.series("f_gap")
    k1 = int(np.argmax(gaps <= target)) + 1
    assert gaps[k1 - 1] <= target, "compressed run must reach the target"
    assert k1 <= int(np.ceil(k0 * slow)) + 5


def test_dcsgd_sampling_scales_by_inverse_probability():
    qa = quadratic_anchors([1, 1], 2)
    scheme = IndependentSampling([1.0, 1.0])
    res = dcsgd(qa, Identity(), 5, 0.1, sampling=scheme, seed=0)
    ref = dcsgd(qa, Identity(), 5, 0.1, seed=0)
    assert np.allclose(res.x, ref.x, atol=1e-15)


def test_dcsgd_records_bits():
    qa = quadratic_anchors([1, 1, 1], 4)
    res = dcsgd(qa, RandK(2), 3, 0.1, seed=1)
    for r in res.records:
        assert r.bits_up == len(r.participants) * RandK(2).bits(4)
        assert r.bits_down == 32 * 4


# ---------------------------------------------------------------------------
# error feedback
# ---------------------------------------------------------------------------


def test_ef_with_identity_matches_dsgd_and_keeps_zero_buffers():
    qa = quadratic_anchors([1, 2, 3], 3)
    res_ef = dcsgd_ef(qa, Identity(), 30, 0.15, seed=2)
    res = dcsgd(qa, Identity(), 30, 0.15, seed=2)
    assert np.allclose(res_ef.x, res.x, atol=1e-15)
    assert res_ef.extras["error_norm_sq"] == 0.0


def test_ef_buffer_identity_holds_exactly():
    # replay the loop with the documented stream labels and check
    # e^{k+1} = e^k + eta g - C(e^k + eta g) at every round
    ce = counterexample_problem()
    comp = TopK(1)
    eta = 0.1
    rounds = 25
    res = dcsgd_ef(ce, comp, rounds, eta, seed=9, x0=np.ones(3))
    stream = RandomStream(9, ("dcsgd_ef",))
    x = np.ones(3)
    e = np.zeros((3, 3))
    for k in range(rounds):
        step = np.zeros(3)
        for i in range(3):
            g = ce.client_grad(i, x)
            buf = e[i] + eta * g
            sent = comp(buf, stream.derive("compress", k, i))
            new_e = buf - sent
            assert np.array_equal(new_e, e[i] + eta * g - sent)
            e[i] = new_e
            step += sent
        x = x - step / 3
    assert np.allclose(x, res.x, atol=1e-15)
    assert res.extras["error_norm_sq"] == pytest.approx(float(np.sum(e * e)))


def test_ef_fixes_the_divergence_counterexample():
    ce = counterexample_problem()
    res = dcsgd_ef(ce, TopK(1), 200, 0.1, seed=0, x0=np.ones(3))
    assert res.final.f_gap <= 1e-6


def test_ef_overparameterized_linear_rate():
    # every client shares the same minimizer (zero heterogeneity, exact
    # gradients): linear convergence at least as fast as the schedule bound
    qa = quadratic_anchors([1, 1, 1], 3)
    shared = qa.anchors[0]
    qa.anchors = np.tile(shared, (3, 1))
    qa.x_star = shared.copy()
    comp = TopK(1)
    delta = comp.delta(3)
    eta_fn, w_fn = ef_schedule("constant", qa, delta)
    rounds = 5000
    res = dcsgd_ef(qa, comp, rounds, eta_fn(0), weights=w_fn, seed=1)
    gaps = res.series("f_gap")
    rate_bound = 1.0 - qa.mu / (14.0 * (2.0 * delta) * qa.L)
    observed = (gaps[-1] / gaps[0]) ** (1.0 / (rounds - 1))
    assert gaps[-1] < 1e-12
    assert observed <= rate_bound


def test_ef_schedules():
    qa = quadratic_anchors([1, 2], 2)
    eta_fn, w_fn = ef_schedule("decreasing", qa, delta=2.0)
    kappa = 56.0 * 4.0 * qa.L / qa.mu
    assert eta_fn(0) == pytest.approx(4.0 / (qa.mu * kappa))
    assert w_fn(3) == pytest.approx(kappa + 3)
    eta_fn, w_fn = ef_schedule("constant_exp", qa, delta=2.0)
    eta = eta_fn(0)
    assert eta == pytest.approx(1.0 / (14.0 * 4.0 * qa.L))
    assert w_fn(1) == pytest.approx((1 - qa.mu * eta / 2) ** -2)
    with pytest.raises(ValueError):
        ef_schedule("bogus", qa, delta=2.0)
    res = dcsgd_ef(qa, TopK(1), 50, eta_fn, weights=w_fn, seed=0)
    assert "x_bar" in res.extras


def test_trajectories_are_deterministic():
    qa = quadratic_anchors([1, 2, 3], 3)
    a = dcsgd(qa, RandK(1), 20, 0.1, seed=5, stochastic=True)
    b = dcsgd(qa, RandK(1), 20, 0.1, seed=5, stochastic=True)
    assert np.array_equal(a.x, b.x)
    assert a.records == b.records
