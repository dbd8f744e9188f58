import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskcontrib import (CVaREnvelope, KernelEnvelope, KernelSet, MeasureFamily, PredictableProcess,
                         RecorderWeights, ReferenceEnvelope, axiom_suite, brownian, build_tree, coherent,
                         coherent_from_deviation, cond_expectation, deviation, deviation_from_coherent,
                         endpoint_kernels, kappa_envelope, martingale_representation, recorder_weights_from_kernels,
                         time_consistency_check, volatility_recorder)
from riskcontrib.measures import EnvelopeError, MeasureFamily as Family

CVAR_LEAVES = np.array([2.0, 1.0, -1.0, -2.0])


def test_kappa_coherent_and_deviation():
    tree = build_tree(8, 0.5)
    X = brownian(tree).terminal
    assert coherent(tree, X, kappa_envelope(0.5), 0).values[0] == pytest.approx(0.25, rel=1e-12)
    assert deviation(tree, X, kappa_envelope(0.5), 0).values[0] == pytest.approx(0.25, rel=1e-12)


def test_cvar_examples():
    tree = build_tree(2, 0.5)
    env = CVaREnvelope(0.5)
    assert coherent(tree, CVAR_LEAVES, env, 0).values[0] == pytest.approx(1.5)
    np.testing.assert_allclose(coherent(tree, CVAR_LEAVES, env, 1).values, [-1.0, 2.0])


def test_deviation_vanishes():
    tree = build_tree(5, 1.0)
    X = np.random.default_rng(1).standard_normal(tree.leaves)
    np.testing.assert_allclose(deviation(tree, X, ReferenceEnvelope(), 2).values, 0.0, atol=1e-15)
    Xt = tree.lift(np.arange(tree.size(3), dtype=float), 3, 5)
    for env in (kappa_envelope(0.7), CVaREnvelope(0.3), ReferenceEnvelope()):
        np.testing.assert_allclose(deviation(tree, Xt, env, 3).values, 0.0, atol=1e-12)


def test_invalid_envelope_rejected():
    tree = build_tree(3, 1.0)
    with pytest.raises(EnvelopeError):
        coherent(tree, np.zeros(8), KernelEnvelope(KernelSet(1.0, 2.0)), 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2 ** 32 - 1), st.data())
def test_a2_lower_bounds(steps, seed, data):
    rng = np.random.default_rng(seed)
    tree = build_tree(steps, 1.0)
    X = rng.standard_normal(tree.leaves)
    t = data.draw(st.integers(0, steps))
    for env in (kappa_envelope(rng.uniform(0, 0.9 / tree.sqrt_dt)), CVaREnvelope(rng.uniform(0.05, 1))):
        C = coherent(tree, X, env, t).values
        assert np.all(C >= cond_expectation(tree, -X, t) - 1e-12)
        assert np.all(deviation(tree, X, env, t).values >= -1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2 ** 32 - 1), st.data())
def test_correspondence_round_trip(steps, seed, data):
    rng = np.random.default_rng(seed)
    tree = build_tree(steps, 1.0)
    X = rng.standard_normal(tree.leaves)
    t = data.draw(st.integers(0, steps))
    D = deviation(tree, X, kappa_envelope(0.4), t).values
    back = deviation_from_coherent(tree, X, coherent_from_deviation(tree, X, D, t), t)
    np.testing.assert_allclose(back, D, rtol=1e-12, atol=1e-12)


def test_recorder_examples():
    tree = build_tree(8, 0.5)
    X = brownian(tree).terminal
    pm = RecorderWeights((PredictableProcess.constant(tree, 0.5), PredictableProcess.constant(tree, -0.5)))
    assert volatility_recorder(tree, X, pm, 0)[0] == pytest.approx(0.25, rel=1e-12)
    zero = RecorderWeights((PredictableProcess.constant(tree, 0.0),))
    Y = np.random.default_rng(0).standard_normal(tree.leaves)
    np.testing.assert_array_equal(volatility_recorder(tree, Y, zero, 0), 0.0)
    Xt = tree.lift(np.arange(tree.size(4), dtype=float), 4, 8)
    np.testing.assert_allclose(volatility_recorder(tree, Xt, pm, 4), 0.0)


def test_recorder_positivity():
    tree = build_tree(3, 1.0)
    with pytest.raises(ValueError):
        RecorderWeights((PredictableProcess.constant(tree, 0.2), PredictableProcess.constant(tree, 0.5)))


def test_recorder_weights_from_kernels_examples():
    tree = build_tree(2, 0.5)
    zero = recorder_weights_from_kernels(tree, [PredictableProcess.constant(tree, 0.0)])
    for k in range(2):
        np.testing.assert_array_equal(zero.weights[0][k], 0.0)
    w = recorder_weights_from_kernels(tree, [PredictableProcess.constant(tree, -0.5),
                                             PredictableProcess.constant(tree, 0.5)])
    np.testing.assert_allclose(w.weights[0][0], [0.5])
    np.testing.assert_allclose(w.weights[0][1], [0.375, 0.625])


def test_recorder_reproduces_deviation_with_worst_kernel():
    tree = build_tree(8, 0.5)
    X = brownian(tree).terminal
    ks = KernelSet.kappa(0.5)
    w = recorder_weights_from_kernels(tree, endpoint_kernels(tree, ks))
    assert volatility_recorder(tree, X, w, 0)[0] == pytest.approx(0.25, rel=1e-12)
    assert deviation(tree, X, KernelEnvelope(ks), 0).values[0] == pytest.approx(0.25, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 7), st.floats(0, 2), st.integers(0, 2 ** 32 - 1), st.data())
def test_recorder_pm_kappa_is_abs_sigma(steps, kappa, seed, data):
    tree = build_tree(steps, 1.0)
    X = np.random.default_rng(seed).standard_normal(tree.leaves)
    t = data.draw(st.integers(0, steps))
    _, sigma = martingale_representation(tree, X)
    expected = np.zeros(tree.leaves)
    for k in range(steps - 1, t - 1, -1):
        expected = (expected[0::2] + expected[1::2]) / 2 + kappa * np.abs(sigma[k]) * tree.dt
    pm = RecorderWeights((PredictableProcess.constant(tree, kappa), PredictableProcess.constant(tree, -kappa)))
    np.testing.assert_allclose(volatility_recorder(tree, X, pm, t), expected, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("env", [kappa_envelope(0.5), CVaREnvelope(0.5)])
@pytest.mark.parametrize("kind", ["coherent", "deviation"])
def test_axiom_suite_clean(env, kind):
    tree = build_tree(6, 1.0)
    rep = axiom_suite(MeasureFamily.from_envelope(tree, env, kind), tree, seed=42, trials=100)
    assert rep.ok, rep.as_dict()


def test_axiom_suite_negative_control():
    tree = build_tree(4, 1.0)
    good = MeasureFamily.from_envelope(tree, kappa_envelope(0.5), "deviation")
    broken = Family(tree, "deviation", lambda X, t: good(X, t) - 1.0, "shifted")
    rep = axiom_suite(broken, tree, seed=1, trials=20)
    assert rep.violations["D2't"] > 0
    assert not rep.ok


def test_axiom_suite_deterministic():
    tree = build_tree(4, 1.0)
    fam = MeasureFamily.from_envelope(tree, CVaREnvelope(0.3), "coherent")
    a = axiom_suite(fam, tree, seed=9, trials=20).as_dict()
    b = axiom_suite(fam, tree, seed=9, trials=20).as_dict()
    assert a == b


def test_corresponding_family():
    tree = build_tree(4, 1.0)
    fam = MeasureFamily.from_envelope(tree, kappa_envelope(0.5), "coherent")
    other = fam.corresponding()
    X = np.random.default_rng(2).standard_normal(tree.leaves)
    np.testing.assert_allclose(other(X, 1), deviation(tree, X, kappa_envelope(0.5), 1).values)
    assert other.kind == "deviation"


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 32 - 1), st.data())
def test_kappa_time_consistent(steps, seed, data):
    tree = build_tree(steps, 1.0)
    X = np.random.default_rng(seed).standard_normal(tree.leaves)
    t = data.draw(st.integers(0, steps))
    s = data.draw(st.integers(0, t))
    rep = time_consistency_check(tree, kappa_envelope(0.6), X, s, t)
    assert rep.c3_max <= 1e-9 and rep.d3_max <= 1e-9


def test_cvar_counterexample():
    tree = build_tree(2, 0.5)
    rep = time_consistency_check(tree, CVaREnvelope(0.5), CVAR_LEAVES, 0, 1)
    assert rep.c3_max == pytest.approx(0.5, abs=1e-15)


def test_measurable_payoff_consistent_for_cvar():
    tree = build_tree(4, 1.0)
    Xs = tree.lift(np.array([1.0, -3.0]), 1, 4)
    rep = time_consistency_check(tree, CVaREnvelope(0.4), Xs, 1, 3)
    assert rep.c3_max < 1e-12 and rep.d3_max < 1e-12


def test_time_consistency_order():
    with pytest.raises(ValueError):
        time_consistency_check(build_tree(3, 1.0), kappa_envelope(0.5), np.zeros(8), 2, 1)
