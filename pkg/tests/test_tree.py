import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskcontrib import (AdaptedProcess, CapacityError, PredictableProcess, brownian, build_tree,
                         cond_expectation, doleans_exponential, martingale_representation, payoff,
                         stochastic_integral)


def random_payoff(tree, seed):
    return np.random.default_rng(seed).standard_normal(tree.leaves)


def test_build_tree_small():
    tree = build_tree(2, 0.5)
    assert tree.dt == 0.25
    assert tree.leaves == 4
    one = build_tree(1, 1.0)
    assert one.leaves == 2 and one.dt == 1.0


def test_build_tree_capacity():
    with pytest.raises(CapacityError):
        build_tree(27, 1.0)
    build_tree(26, 1.0)  # at the limit: construction is lazy


@pytest.mark.parametrize("steps, horizon", [(0, 1.0), (3, 0.0), (3, -1.0)])
def test_build_tree_rejects_bad_input(steps, horizon):
    with pytest.raises(ValueError):
        build_tree(steps, horizon)


@pytest.mark.parametrize("steps, horizon", [(1, 1.0), (3, 0.7), (7, 2.5)])
def test_tree_invariants(steps, horizon):
    tree = build_tree(steps, horizon)
    assert tree.dt * steps == pytest.approx(horizon, rel=1e-15)
    for k in range(steps + 1):
        assert tree.size(k) == 2 ** k
        assert tree.prob(k) * tree.size(k) == 1.0


def test_brownian_values():
    B = brownian(build_tree(2, 0.5))
    np.testing.assert_array_equal(B[2], [1.0, 0.0, 0.0, -1.0])
    np.testing.assert_array_equal(B[1], [0.5, -0.5])
    np.testing.assert_array_equal(brownian(build_tree(1, 1.0))[1], [1.0, -1.0])


@pytest.mark.parametrize("steps", [1, 4, 9])
def test_brownian_increments(steps):
    tree = build_tree(steps, 1.3)
    B = brownian(tree)
    assert B[0][0] == 0.0
    for k in range(steps):
        inc = B[k + 1] - np.repeat(B[k], 2)
        np.testing.assert_allclose(np.abs(inc), tree.sqrt_dt, rtol=1e-14)
        assert abs(inc.mean()) < 1e-15
        assert np.mean(inc ** 2) == pytest.approx(tree.dt, rel=1e-14)
        assert abs(B[k + 1].mean()) < 1e-14


def test_cond_expectation_examples():
    tree = build_tree(2, 0.5)
    B = brownian(tree)
    np.testing.assert_allclose(cond_expectation(tree, B[2], 1), [0.5, -0.5])
    assert cond_expectation(tree, B[2] ** 2, 0)[0] == 0.5
    for t in range(3):
        np.testing.assert_array_equal(cond_expectation(tree, np.full(4, 3.25), t), 3.25)


def test_cond_expectation_level_mismatch():
    tree = build_tree(3, 1.0)
    with pytest.raises(ValueError):
        cond_expectation(tree, np.zeros(4), 3, level=2)
    with pytest.raises(ValueError):
        cond_expectation(tree, np.zeros(5), 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 32 - 1), st.data())
def test_tower_property(steps, seed, data):
    tree = build_tree(steps, 1.0)
    X = random_payoff(tree, seed)
    t1 = data.draw(st.integers(0, steps))
    t2 = data.draw(st.integers(t1, steps))
    inner = cond_expectation(tree, X, t2)
    np.testing.assert_allclose(cond_expectation(tree, inner, t1, level=t2),
                               cond_expectation(tree, X, t1), rtol=1e-12, atol=1e-12)


def test_martingale_representation_examples():
    tree = build_tree(2, 0.5)
    B = brownian(tree)
    M, sigma = martingale_representation(tree, B[2])
    assert M[0][0] == 0.0
    for s in sigma:
        np.testing.assert_allclose(s, 1.0)
    M, sigma = martingale_representation(tree, B[2] ** 2)
    assert M[0][0] == 0.5
    np.testing.assert_allclose(sigma[0], [0.0])
    np.testing.assert_allclose(sigma[1], [1.0, -1.0])


def test_martingale_representation_measurable_payoff():
    tree = build_tree(5, 1.0)
    t = 2
    X = tree.lift(np.arange(tree.size(t), dtype=float), t, tree.steps)
    _, sigma = martingale_representation(tree, X)
    for s in range(t, tree.steps):
        np.testing.assert_array_equal(sigma[s], 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(0, 2 ** 32 - 1))
def test_martingale_reconstruction(steps, seed):
    tree = build_tree(steps, 0.8)
    X = random_payoff(tree, seed)
    M, sigma = martingale_representation(tree, X)
    recon = M[0][0] + stochastic_integral(tree, sigma, brownian(tree)).terminal
    np.testing.assert_allclose(recon, X, rtol=1e-12, atol=1e-12)


def test_doleans_examples():
    tree = build_tree(2, 0.5)
    one = doleans_exponential(tree, PredictableProcess.constant(tree, 0.0))
    for level in one:
        np.testing.assert_array_equal(level, 1.0)
    E = doleans_exponential(tree, PredictableProcess.constant(tree, 0.5))
    np.testing.assert_allclose(E.terminal, [1.5625, 0.9375, 0.9375, 0.5625], rtol=1e-15)
    assert E.terminal.mean() == 1.0


def test_doleans_positivity_error():
    tree = build_tree(2, 0.5)
    with pytest.raises(ValueError, match="level 0"):
        doleans_exponential(tree, PredictableProcess.constant(tree, 4.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
def test_doleans_mean_one_martingale(steps, seed):
    tree = build_tree(steps, 1.0)
    rng = np.random.default_rng(seed)
    bound = 0.95 / tree.sqrt_dt
    phi = PredictableProcess(tree, [rng.uniform(-bound, bound, tree.size(k)) for k in range(steps)])
    E = doleans_exponential(tree, phi)
    for k in range(steps + 1):
        assert np.all(E[k] > 0)
        assert E[k].mean() == pytest.approx(1.0, rel=1e-12)
        if k < steps:
            np.testing.assert_allclose(cond_expectation(tree, E[k + 1], k, level=k + 1), E[k], rtol=1e-12)


def test_stochastic_integral_examples():
    tree = build_tree(2, 0.5)
    B = brownian(tree)
    np.testing.assert_allclose(stochastic_integral(tree, PredictableProcess.constant(tree, 1.0), B).terminal,
                               B.terminal)
    np.testing.assert_allclose(stochastic_integral(tree, PredictableProcess.constant(tree, -2.5), B).terminal,
                               -2.5 * B.terminal)
    lagged = PredictableProcess(tree, [B[k] for k in range(tree.steps)])
    I = stochastic_integral(tree, lagged, B)
    assert I[0][0] == 0.0
    assert I.terminal[0] == pytest.approx(0.25)


def test_stochastic_integral_pathwise_sum():
    tree = build_tree(2, 0.5)
    B = brownian(tree)
    lagged = PredictableProcess(tree, [B[k] for k in range(tree.steps)])
    # path-wise: sum_k B_k (B_{k+1} - B_k) on uu, ud, du, dd
    expected = [0.25, -0.25, -0.25, 0.25]
    np.testing.assert_allclose(stochastic_integral(tree, lagged, B).terminal, expected, atol=1e-15)


def test_stochastic_integral_dimension_mismatch():
    tree = build_tree(2, 1.0)
    H = PredictableProcess(tree, [np.ones((tree.size(k), 2)) for k in range(2)])
    X = AdaptedProcess(tree, [np.ones((tree.size(k), 3)) for k in range(3)])
    with pytest.raises(ValueError):
        stochastic_integral(tree, H, X)


def test_payoff_rejects_non_finite():
    tree = build_tree(2, 1.0)
    with pytest.raises(ValueError):
        payoff(tree, [0.0, np.nan, 1.0, 2.0])
    with pytest.raises(ValueError):
        payoff(tree, [0.0, 1.0])


def test_predictable_levels():
    tree = build_tree(3, 1.0)
    with pytest.raises(ValueError):
        PredictableProcess(tree, [np.zeros(tree.size(k)) for k in range(4)])
    assert len(PredictableProcess.constant(tree, 1.0)) == 3
