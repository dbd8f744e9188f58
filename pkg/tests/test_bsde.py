import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskcontrib import (CapacityError, Driver, KernelSet, RegressionBasis, brownian, build_tree,
                         cond_expectation, g_expectation, martingale_representation, simulate_paths,
                         solve_mc, solve_tree)
from riskcontrib.bsde import RegressionError, _projector


def sublinear_driver(rng):
    lo = -rng.uniform(0, 0.8)
    return Driver(KernelSet(lo, rng.uniform(0, 0.8)))


def test_constant_terminal():
    tree = build_tree(5, 1.0)
    sol = solve_tree(tree, np.full(tree.leaves, 1.5), Driver.kappa(0.3))
    for k in range(6):
        np.testing.assert_array_equal(sol.Y[k], 1.5)
    for k in range(5):
        np.testing.assert_array_equal(sol.Z[k], 0.0)


@pytest.mark.parametrize("steps", [2, 4, 8, 16])
def test_kappa_closed_form(steps):
    tree = build_tree(steps, 0.5)
    B = brownian(tree)
    sol = solve_tree(tree, -B.terminal, Driver.kappa(0.5))
    assert sol.Y[0][0] == pytest.approx(0.25, rel=1e-12)
    for k in range(steps):
        np.testing.assert_allclose(sol.Z[k], -1.0, rtol=1e-12)
    for k in range(steps + 1):
        np.testing.assert_allclose(sol.Y[k], -B[k] + 0.5 * (0.5 - k * tree.dt), atol=1e-12)


def test_zero_driver_is_martingale():
    tree = build_tree(6, 0.5)
    B = brownian(tree)
    sol = solve_tree(tree, -B.terminal, Driver.zero())
    assert abs(sol.Y[0][0]) < 1e-15
    X = np.random.default_rng(3).standard_normal(tree.leaves)
    sol = solve_tree(tree, X, Driver.zero())
    _, sigma = martingale_representation(tree, X)
    for k in range(6):
        np.testing.assert_allclose(sol.Y[k], cond_expectation(tree, X, k), atol=1e-14)
        np.testing.assert_allclose(sol.Z[k], sigma[k], atol=1e-12)


def test_non_finite_driver():
    tree = build_tree(3, 1.0)
    with pytest.raises(ValueError):
        solve_tree(tree, np.ones(8), Driver(fn=lambda k, z: np.full_like(z, np.nan)))


def test_g_expectation_examples():
    tree = build_tree(8, 0.5)
    B = brownian(tree)
    t = 4  # t * dt = 0.25
    np.testing.assert_allclose(g_expectation(tree, -B.terminal, Driver.kappa(0.5), t), -B[t] + 0.125, atol=1e-12)
    X = np.random.default_rng(0).standard_normal(tree.leaves)
    np.testing.assert_allclose(g_expectation(tree, X, Driver.zero(), 3), cond_expectation(tree, X, 3), atol=1e-14)
    Xt = tree.lift(np.arange(tree.size(t), dtype=float), t, tree.steps)
    np.testing.assert_allclose(g_expectation(tree, Xt, Driver.kappa(0.5), t), np.arange(tree.size(t)), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
def test_one_step_identity(steps, seed):
    rng = np.random.default_rng(seed)
    tree = build_tree(steps, 1.0)
    drv = sublinear_driver(rng)
    sol = solve_tree(tree, rng.standard_normal(tree.leaves), drv)
    for k in range(steps):
        nxt = sol.Y[k + 1]
        z = cond_expectation(tree, nxt * tree.increments(k + 1), k, level=k + 1) / tree.dt
        np.testing.assert_allclose(sol.Z[k], z, rtol=1e-12, atol=1e-12)
        expected = cond_expectation(tree, nxt, k, level=k + 1) + drv(k, z, steps) * tree.dt
        np.testing.assert_allclose(sol.Y[k], expected, rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
def test_comparison(steps, seed):
    rng = np.random.default_rng(seed)
    tree = build_tree(steps, 1.0)
    drv = sublinear_driver(rng)
    x1 = rng.standard_normal(tree.leaves)
    x2 = x1 + np.abs(rng.standard_normal(tree.leaves))
    s1, s2 = solve_tree(tree, x1, drv), solve_tree(tree, x2, drv)
    for k in range(steps + 1):
        assert np.all(s1.Y[k] <= s2.Y[k] + 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 32 - 1), st.data())
def test_recursiveness(steps, seed, data):
    rng = np.random.default_rng(seed)
    tree = build_tree(steps, 1.0)
    drv = sublinear_driver(rng)
    X = rng.standard_normal(tree.leaves)
    t = data.draw(st.integers(0, steps))
    s = data.draw(st.integers(0, t))
    inner = tree.lift(g_expectation(tree, X, drv, t), t, steps)
    np.testing.assert_allclose(g_expectation(tree, inner, drv, s), g_expectation(tree, X, drv, s),
                               rtol=1e-12, atol=1e-12)


def test_simulate_paths_determinism():
    a = simulate_paths(42, 50, 10_000, 0.5)
    b = simulate_paths(42, 50, 10_000, 0.5)
    assert np.array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, simulate_paths(43, 50, 10_000, 0.5).increments)
    tiny = simulate_paths(1, 1, 2, 1.0)
    assert tiny.path_count == 2 and tiny.steps == 1


def test_simulate_paths_statistics():
    ens = simulate_paths(7, 4, 200_000, 1.0, antithetic=False)
    dt = 0.25
    inc = ens.increments[:, 0]
    n = inc.size
    assert abs(inc.mean()) < 5 * np.sqrt(dt / n)
    # var of the sample variance is 2 dt^2 / n for Gaussian draws
    assert abs(inc.var() - dt) < 5 * dt * np.sqrt(2.0 / n)


def test_simulate_paths_errors():
    with pytest.raises(ValueError):
        simulate_paths(0, 0, 10, 1.0)
    with pytest.raises(ValueError):
        simulate_paths(0, 5, 1, 1.0)
    with pytest.raises(CapacityError):
        simulate_paths(0, 100, 1000, 1.0, max_cells=10_000)


def test_antithetic_pairs_stay_in_batches():
    ens = simulate_paths(3, 5, 101, 1.0)
    half = 101 // 2
    for idx in ens.batches(7):
        members = set(idx.tolist())
        for p in idx:
            if p < half:
                assert p + half in members


def test_mc_kappa_anchor():
    ens = simulate_paths(42, 50, 100_000, 0.5)
    res = solve_mc(ens, lambda B: -B[:, -1], Driver.kappa(0.5), RegressionBasis(2))
    assert abs(res.y0 - 0.25) <= 0.01 * 0.25
    assert abs(res.y0 - 0.25) <= 3 * res.stderr
    assert res.Y.shape == (100_000, 51) and res.Z.shape == (100_000, 50)


def test_mc_zero_driver():
    ens = simulate_paths(5, 20, 20_000, 0.5)
    res = solve_mc(ens, lambda B: -B[:, -1], Driver.zero())
    assert abs(res.y0) <= 4 * res.stderr + 1e-12


def test_mc_constant_terminal():
    ens = simulate_paths(5, 10, 2_000, 1.0)
    res = solve_mc(ens, lambda B: np.full(B.shape[0], 2.5), Driver.kappa(0.5))
    assert res.y0 == pytest.approx(2.5, abs=1e-12)


def test_mc_rejects_bad_terminal_and_node_kernels():
    ens = simulate_paths(5, 4, 100, 1.0)
    with pytest.raises(ValueError):
        solve_mc(ens, lambda B: np.ones(3), Driver.zero())
    with pytest.raises(ValueError):
        solve_mc(ens, lambda B: -B[:, -1], Driver(KernelSet(lambda k, n: -0.1 * n, 0.5)))


def test_projector_singular_basis():
    F = np.ones((10, 1))
    fit = _projector(F, 1e-10)
    np.testing.assert_allclose(fit(np.arange(10.0)), 4.5)
    x = np.linspace(-1, 1, 10)
    with pytest.raises(RegressionError):
        _projector(np.stack([x, 2 * x], axis=1), 0.0)
