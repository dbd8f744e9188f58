"""Arithmetic asset dynamics, trading policies and wealth on a scenario tree.

Coefficient rules accept three forms:

* a constant scalar or length-``d`` vector,
* a per-level table of shape ``(N, d)`` (row ``k`` applies on the step k -> k+1),
* a callable ``rule(level, nodes)`` returning an array of shape ``(len(nodes), d)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .tree import AdaptedProcess, PredictableProcess, ScenarioTree

Rule = Union[float, np.ndarray, list, Callable]


def resolve_rule(rule, tree: ScenarioTree, level: int, dim: int, name: str = "rule") -> np.ndarray:
    """Evaluate a coefficient rule on every node of ``level``; shape ``(2**level, dim)``."""
    n = tree.size(level)
    if callable(rule):
        out = np.asarray(rule(level, np.arange(n)), dtype=float)
        if out.ndim == 1 and dim == 1 and out.shape[0] == n:
            out = out[:, None]
        out = np.broadcast_to(out, (n, dim))
    else:
        arr = np.asarray(rule, dtype=float)
        if arr.ndim <= 1:
            row = np.broadcast_to(arr, (dim,))
        elif arr.ndim == 2 and arr.shape[0] == tree.steps:
            row = np.broadcast_to(arr[level], (dim,))
        else:
            raise ValueError(
                f"{name}: expected a scalar, a length-{dim} vector or a "
                f"({tree.steps}, {dim}) table, got shape {arr.shape}"
            )
        out = np.broadcast_to(row, (n, dim))
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} produced non-finite values at level {level}")
    return np.array(out)


@dataclass(frozen=True)
class AssetModel:
    """``dS = b dt + sigma dB`` per asset, with ``sigma`` loading the single driver."""

    drift: Rule
    diffusion: Rule
    initial_prices: np.ndarray

    def __post_init__(self):
        s0 = np.atleast_1d(np.asarray(self.initial_prices, dtype=float))
        if s0.ndim != 1 or not np.all(np.isfinite(s0)):
            raise ValueError("initial_prices must be a finite vector")
        object.__setattr__(self, "initial_prices", s0)

    @property
    def asset_count(self) -> int:
        return self.initial_prices.shape[0]

    def drift_at(self, tree, level):
        return resolve_rule(self.drift, tree, level, self.asset_count, "drift")

    def diffusion_at(self, tree, level):
        return resolve_rule(self.diffusion, tree, level, self.asset_count, "diffusion")


@dataclass(frozen=True)
class Policy:
    """Shares held on each step, a predictable ``d``-vector process."""

    shares: PredictableProcess

    def __post_init__(self):
        for k, v in enumerate(self.shares):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"policy has non-finite shares at level {k}")

    @property
    def dim(self):
        return self.shares.dim

    def at(self, level) -> np.ndarray:
        v = self.shares[level]
        return v if v.ndim == 2 else v[:, None]

    @classmethod
    def from_rule(cls, tree: ScenarioTree, rule: Rule, dim: int) -> "Policy":
        return cls(PredictableProcess(
            tree, [resolve_rule(rule, tree, k, dim, "policy") for k in range(tree.steps)]))

    @classmethod
    def indicator(cls, tree: ScenarioTree, nodes, asset: int, dim: int) -> "Policy":
        """Unit share of ``asset`` on the predictable node set ``nodes`` of (level, node) pairs."""
        levels = [np.zeros((tree.size(k), dim)) for k in range(tree.steps)]
        for k, i in nodes:
            levels[k][i, asset] = 1.0
        return cls(PredictableProcess(tree, levels))

    def __add__(self, other: "Policy") -> "Policy":
        return Policy(PredictableProcess(
            self.shares.tree, [a + b for a, b in zip(self.shares, other.shares)]))


@dataclass(frozen=True)
class WealthProcess:
    initial: float
    values: AdaptedProcess

    @property
    def terminal(self) -> np.ndarray:
        return self.values.terminal


def simulate_assets(tree: ScenarioTree, model: AssetModel) -> AdaptedProcess:
    levels = [model.initial_prices[None, :]]
    for k in range(tree.steps):
        step = model.drift_at(tree, k) * tree.dt
        step = np.repeat(step, 2, axis=0) + np.repeat(model.diffusion_at(tree, k), 2, axis=0) \
            * tree.increments(k + 1)[:, None]
        levels.append(np.repeat(levels[-1], 2, axis=0) + step)
    return AdaptedProcess(tree, levels)


def asset_increments(tree: ScenarioTree, model: AssetModel, level: int) -> np.ndarray:
    """``b_k dt + sigma_k dB_{k+1}`` on the children of ``level``, shape ``(2**(level+1), d)``."""
    b = np.repeat(model.drift_at(tree, level), 2, axis=0)
    s = np.repeat(model.diffusion_at(tree, level), 2, axis=0)
    return b * tree.dt + s * tree.increments(level + 1)[:, None]


def wealth(tree: ScenarioTree, model: AssetModel, policy: Policy, x0: float = 0.0) -> WealthProcess:
    if policy.dim != model.asset_count:
        raise ValueError(
            f"dimension mismatch: policy has {policy.dim} assets, model has {model.asset_count}")
    levels = [np.full(1, float(x0))]
    for k in range(tree.steps):
        gain = (np.repeat(policy.at(k), 2, axis=0) * asset_increments(tree, model, k)).sum(axis=1)
        levels.append(np.repeat(levels[-1], 2) + gain)
    return WealthProcess(float(x0), AdaptedProcess(tree, levels))
