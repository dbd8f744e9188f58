"""Backward solvers for ``-dY = g(Z) dt - Z dB``, ``Y_T = xi``.

On a scenario tree the one-step scheme is exact::

    Z_k = (Y_{k+1}(up) - Y_{k+1}(down)) / (2 sqrt(dt))
    Y_k = (Y_{k+1}(up) + Y_{k+1}(down)) / 2 + g_k(Z_k) dt

On simulated Gaussian paths conditional expectations are replaced by ridge
least-squares projections onto a regression basis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .envelopes import Driver
from .tree import AdaptedProcess, CapacityError, PredictableProcess, ScenarioTree, payoff

MAX_PATH_CELLS = 50_000_000
RIDGE = 1e-10


@dataclass(frozen=True)
class BsdeSolution:
    Y: AdaptedProcess
    Z: PredictableProcess
    driver: Driver

    def kernel(self, start: int = 0) -> PredictableProcess:
        """Subgradient selection ``phi_k in argmax phi*Z_k``, zero before ``start``."""
        tree = self.Y.tree
        levels = []
        for k in range(tree.steps):
            if k < start:
                levels.append(np.zeros(tree.size(k)))
            else:
                levels.append(self.driver.select(k, self.Z[k], tree.steps))
        return PredictableProcess(tree, levels)


def solve_tree(tree: ScenarioTree, terminal, driver: Driver) -> BsdeSolution:
    xi = payoff(tree, terminal)
    Y = [xi]
    Z = []
    for k in range(tree.steps - 1, -1, -1):
        up, down = Y[-1][0::2], Y[-1][1::2]
        z = (up - down) / (2.0 * tree.sqrt_dt)
        g = driver(k, z, tree.steps)
        if not np.all(np.isfinite(g)):
            raise ValueError(f"driver returned non-finite values at level {k}")
        Z.append(z)
        Y.append((up + down) * 0.5 + g * tree.dt)
    return BsdeSolution(AdaptedProcess(tree, Y[::-1]), PredictableProcess(tree, Z[::-1]), driver)


def g_expectation(tree: ScenarioTree, X, driver: Driver, t: int) -> np.ndarray:
    """Conditional g-expectation of ``X`` at level ``t``."""
    return solve_tree(tree, X, driver).Y[t]


@dataclass(frozen=True)
class PathEnsemble:
    """Gaussian Brownian increments, ``increments[p, k] = B_{k+1} - B_k`` on path ``p``.

    With ``antithetic=True`` the second half of the rows mirrors the first.
    """

    increments: np.ndarray
    horizon: float
    seed: int
    antithetic: bool = True

    @property
    def path_count(self) -> int:
        return self.increments.shape[0]

    @property
    def steps(self) -> int:
        return self.increments.shape[1]

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    @property
    def brownian(self) -> np.ndarray:
        out = np.zeros((self.path_count, self.steps + 1))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out

    def batches(self, count: int) -> list[np.ndarray]:
        """Split path indices into ``count`` groups, keeping antithetic pairs together."""
        P = self.path_count
        if self.antithetic:
            half = P // 2
            pairs = np.stack([np.arange(half), np.arange(half) + half], axis=1)
            groups = [g.ravel() for g in np.array_split(pairs, min(count, half))]
            if P % 2:
                groups[-1] = np.append(groups[-1], P - 1)
            return groups
        return np.array_split(np.arange(P), min(count, P))


def simulate_paths(seed: int, steps: int, path_count: int, horizon: float,
                   antithetic: bool = True, max_cells: int = MAX_PATH_CELLS) -> PathEnsemble:
    if steps < 1 or path_count < 2:
        raise ValueError(f"need steps >= 1 and path_count >= 2, got {steps}, {path_count}")
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if steps * path_count > max_cells:
        raise CapacityError(f"{path_count} paths x {steps} steps exceeds {max_cells} cells")
    rng = np.random.default_rng(seed)
    scale = np.sqrt(horizon / steps)
    if antithetic:
        half = rng.standard_normal((path_count // 2, steps))
        rows = [half, -half]
        if path_count % 2:
            rows.append(rng.standard_normal((1, steps)))
        draws = np.concatenate(rows)
    else:
        draws = rng.standard_normal((path_count, steps))
    inc = draws * scale
    inc.setflags(write=False)
    return PathEnsemble(inc, float(horizon), int(seed), antithetic)


@dataclass(frozen=True)
class RegressionBasis:
    """Feature map ``features(t, x) -> (P, F)`` with ``x`` the Brownian state at time ``t``."""

    degree: int = 2
    features: Callable | None = None

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.features is not None:
            F = np.asarray(self.features(t, x), dtype=float)
        else:
            F = np.vander(x, self.degree + 1, increasing=True)
        if F.ndim != 2 or F.shape[1] < 1:
            raise ValueError("regression basis must produce at least one feature per path")
        if not np.all(np.isfinite(F)):
            raise ValueError("regression basis produced non-finite features")
        return F


class RegressionError(np.linalg.LinAlgError):
    pass


def _projector(F: np.ndarray, ridge: float):
    """Return a function mapping targets to fitted values on the rows of ``F``.

    Constant columns are left unpenalised so constants are reproduced exactly;
    only the first non-zero constant column is kept (at ``t = 0`` every
    polynomial column of the Brownian state is constant).
    """
    varying = np.ptp(F, axis=0) > 0
    const = np.flatnonzero(~varying & np.any(F != 0, axis=0))
    keep = varying.copy()
    keep[const[:1]] = True
    F = F[:, keep]
    G = F.T @ F
    penalty = ridge * np.trace(G) * (np.ptp(F, axis=0) > 0)
    A = G + np.diag(penalty)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e15:
        raise RegressionError(f"regression Gram matrix is singular (condition number {cond:.3g})")

    def fit(y):
        return F @ np.linalg.solve(A, F.T @ y)
    return fit


@dataclass(frozen=True)
class McResult:
    y0: float
    stderr: float
    Y: np.ndarray
    Z: np.ndarray
    batch_estimates: np.ndarray

    def as_dict(self):
        return {"y0": self.y0, "stderr": self.stderr,
                "batches": int(self.batch_estimates.size),
                "batch_estimates": self.batch_estimates.tolist()}


def solve_mc(ensemble: PathEnsemble, terminal: Callable, driver: Driver,
             basis: RegressionBasis | None = None, batches: int = 20,
             ridge: float = RIDGE) -> McResult:
    """Least-squares Monte Carlo for the BSDE on an ensemble of Brownian paths.

    ``terminal`` maps the ``(P, N+1)`` array of Brownian paths to ``(P,)``
    terminal values.  ``Z_k`` is the projection of
    ``(Y_{k+1} - E_k[Y_{k+1}]) dB_{k+1} / dt``.  The ensemble is cut into
    independent batches solved separately; the estimate is the batch mean and
    the standard error comes from the spread of the batch estimates.
    """
    if driver.kernels is not None and driver.kernels.node_dependent:
        raise ValueError("node-dependent kernel rules are only defined on a scenario tree")
    basis = basis or RegressionBasis()
    B = ensemble.brownian
    dB = ensemble.increments
    N, dt = ensemble.steps, ensemble.dt
    times = ensemble.times
    xi = np.asarray(terminal(B), dtype=float)
    if xi.shape != (ensemble.path_count,) or not np.all(np.isfinite(xi)):
        raise ValueError("terminal rule must give one finite value per path")

    Y = np.empty((ensemble.path_count, N + 1))
    Z = np.empty((ensemble.path_count, N))
    estimates = []
    for idx in ensemble.batches(batches):
        y = xi[idx]
        Y[idx, N] = y
        for k in range(N - 1, -1, -1):
            fit = _projector(basis(times[k], B[idx, k]), ridge)
            y_cont = fit(y)
            z = fit((y - y_cont) * dB[idx, k] / dt)
            y = y_cont + driver(k, z, N) * dt
            Y[idx, k] = y
            Z[idx, k] = z
        estimates.append(float(np.mean(y)))
    estimates = np.asarray(estimates)
    stderr = float(np.std(estimates, ddof=1) / np.sqrt(estimates.size)) if estimates.size > 1 else float("nan")
    return McResult(float(np.mean(estimates)), stderr, Y, Z, estimates)
