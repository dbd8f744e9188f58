"""Binary scenario trees as an exact finite Brownian filtration.

Level ``k`` of a tree with ``N`` steps holds ``2**k`` nodes.  Node ``i`` at
level ``k`` has children ``2*i`` (up move, increment ``+sqrt(dt)``) and
``2*i + 1`` (down move, increment ``-sqrt(dt)``), each with conditional
probability one half.  Leaves are therefore ordered by path bits, most
significant bit first: for ``N = 2`` the leaf order is uu, ud, du, dd.

Adapted values at level ``k`` are stored as arrays of shape ``(2**k,)`` for
scalar processes or ``(2**k, d)`` for vector processes.  Predictable values
stored at level ``k`` are the ones held over the step from ``k`` to ``k + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_STEPS = 26


class CapacityError(ValueError):
    """Raised when a request exceeds a configured size limit."""


@dataclass(frozen=True)
class ScenarioTree:
    steps: int
    horizon: float

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps!r}")
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive, got {self.horizon!r}")
        if self.steps > MAX_STEPS:
            raise CapacityError(
                f"steps={self.steps} exceeds the limit of {MAX_STEPS} "
                f"(2**{self.steps} leaves)"
            )
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def sqrt_dt(self) -> float:
        return float(np.sqrt(self.dt))

    @property
    def leaves(self) -> int:
        return 1 << self.steps

    def size(self, level: int) -> int:
        self._check_level(level)
        return 1 << level

    def prob(self, level: int) -> float:
        """Probability of any single node at ``level``."""
        self._check_level(level)
        return 2.0 ** (-level)

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def increments(self, level: int) -> np.ndarray:
        """Brownian increments leading into the nodes of ``level`` (>= 1)."""
        if not 1 <= level <= self.steps:
            raise ValueError(f"increments exist for levels 1..{self.steps}, got {level}")
        return np.tile([self.sqrt_dt, -self.sqrt_dt], 1 << (level - 1))

    def lift(self, values, level: int, to_level: int) -> np.ndarray:
        """Repeat node values at ``level`` onto every descendant at ``to_level``."""
        if to_level < level:
            raise ValueError(f"cannot lift from level {level} down to {to_level}")
        values = np.asarray(values, dtype=float)
        self._check_shape(values, level)
        return np.repeat(values, 1 << (to_level - level), axis=0)

    def level_of(self, values) -> int:
        n = np.shape(values)[0]
        level = int(n).bit_length() - 1
        if n < 1 or (1 << level) != n or level > self.steps:
            raise ValueError(f"{n} values do not match any level of a {self.steps}-step tree")
        return level

    def _check_level(self, level):
        if not 0 <= level <= self.steps:
            raise ValueError(f"level {level} outside 0..{self.steps}")

    def _check_shape(self, values, level):
        self._check_level(level)
        if values.shape[0] != 1 << level:
            raise ValueError(
                f"expected {1 << level} values at level {level}, got {values.shape[0]}"
            )


def build_tree(steps: int, horizon: float) -> ScenarioTree:
    return ScenarioTree(steps, horizon)


class _NodeProcess:
    """Common storage for node-indexed processes."""

    _expected_levels = 0

    def __init__(self, tree: ScenarioTree, levels: Sequence, dim: int | None = None):
        arrays = [np.array(v, dtype=float) for v in levels]
        n_expected = tree.steps + self._expected_levels
        if len(arrays) != n_expected:
            raise ValueError(f"expected {n_expected} levels, got {len(arrays)}")
        if not arrays:
            raise ValueError("a process needs at least one level")
        vector = arrays[0].ndim == 2
        if dim is None:
            dim = arrays[0].shape[1] if vector else 1
        for k, a in enumerate(arrays):
            tree._check_shape(a, k)
            if a.shape[1:] != ((dim,) if vector else ()):
                raise ValueError(f"level {k} has shape {a.shape}, inconsistent with dim={dim}")
            a.setflags(write=False)
        self.tree = tree
        self.dim = dim
        self._levels = tuple(arrays)

    def __getitem__(self, level: int) -> np.ndarray:
        return self._levels[level]

    def __len__(self):
        return len(self._levels)

    def __iter__(self):
        return iter(self._levels)

    def lifted(self, to_level: int | None = None) -> np.ndarray:
        """All levels lifted to ``to_level`` and stacked, shape ``(levels, 2**to_level, ...)``."""
        to_level = self.tree.steps if to_level is None else to_level
        return np.stack([self.tree.lift(v, k, to_level) for k, v in enumerate(self._levels)])

    def map(self, fn):
        return type(self)(self.tree, [fn(v) for v in self._levels])

    def __repr__(self):
        return f"{type(self).__name__}(steps={self.tree.steps}, dim={self.dim})"


class AdaptedProcess(_NodeProcess):
    """One value per node for levels ``0..N``."""

    _expected_levels = 1

    @property
    def terminal(self) -> np.ndarray:
        return self._levels[-1]


class PredictableProcess(_NodeProcess):
    """One value per node for levels ``0..N-1``, held over the next step."""

    _expected_levels = 0

    @classmethod
    def constant(cls, tree: ScenarioTree, value) -> "PredictableProcess":
        value = np.asarray(value, dtype=float)
        return cls(tree, [np.broadcast_to(value, (tree.size(k),) + value.shape)
                          for k in range(tree.steps)])


def payoff(tree: ScenarioTree, values) -> np.ndarray:
    """Validate leaf values of a terminal payoff."""
    values = np.array(values, dtype=float)
    if values.shape != (tree.leaves,):
        raise ValueError(f"payoff needs {tree.leaves} leaf values, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("payoff has non-finite leaf values")
    return values


def brownian(tree: ScenarioTree) -> AdaptedProcess:
    levels = [np.zeros(1)]
    for k in range(1, tree.steps + 1):
        levels.append(np.repeat(levels[-1], 2) + tree.increments(k))
    return AdaptedProcess(tree, levels)


def _average_children(values: np.ndarray) -> np.ndarray:
    return (values[0::2] + values[1::2]) * 0.5


def cond_expectation(tree: ScenarioTree, X, t: int, level: int | None = None) -> np.ndarray:
    """Conditional expectation of node values at ``level`` given the nodes at ``t``."""
    X = np.asarray(X, dtype=float)
    level = tree.level_of(X) if level is None else level
    tree._check_shape(X, level)
    if t > level:
        raise ValueError(f"cannot condition level-{level} values on later level {t}")
    tree._check_level(t)
    for _ in range(level - t):
        X = _average_children(X)
    return X


def martingale_representation(tree: ScenarioTree, X):
    """Return ``(M, sigma)`` with ``M_k = E_k[X]`` and ``X = M_0 + sum sigma_k dB_{k+1}``."""
    X = payoff(tree, X) if np.ndim(X) == 1 else np.asarray(X, dtype=float)
    levels = [X]
    sig = []
    for _ in range(tree.steps):
        upper = levels[-1]
        sig.append((upper[0::2] - upper[1::2]) / (2.0 * tree.sqrt_dt))
        levels.append(_average_children(upper))
    return AdaptedProcess(tree, levels[::-1]), PredictableProcess(tree, sig[::-1])


def doleans_exponential(tree: ScenarioTree, phi: PredictableProcess, start: int = 0) -> AdaptedProcess:
    """Discrete stochastic exponential ``prod_{start<=j<k} (1 + phi_j dB_{j+1})``."""
    levels = [np.ones(1)]
    for k in range(tree.steps):
        p = np.asarray(phi[k], dtype=float)
        if k < start:
            p = np.zeros_like(p)
        bound = np.abs(p) * tree.sqrt_dt
        if np.any(bound >= 1.0):
            node = int(np.argmax(bound))
            raise ValueError(
                f"density loses positivity at level {k}, node {node}: "
                f"|phi|*sqrt(dt) = {bound[node]:.6g} >= 1"
            )
        levels.append(np.repeat(levels[-1] * 1.0, 2) * (1.0 + np.repeat(p, 2) * tree.increments(k + 1)))
    return AdaptedProcess(tree, levels)


def stochastic_integral(tree: ScenarioTree, H: PredictableProcess, X: AdaptedProcess) -> AdaptedProcess:
    """Discrete integral ``sum_k H_k . (X_{k+1} - X_k)``; vector dims are contracted."""
    if H.dim != X.dim:
        raise ValueError(f"dimension mismatch: H has dim {H.dim}, X has dim {X.dim}")
    levels = [np.zeros(1)]
    for k in range(tree.steps):
        dx = X[k + 1] - np.repeat(X[k], 2, axis=0)
        step = np.repeat(H[k], 2, axis=0) * dx
        if step.ndim == 2:
            step = step.sum(axis=1)
        levels.append(np.repeat(levels[-1], 2) + step)
    return AdaptedProcess(tree, levels)
