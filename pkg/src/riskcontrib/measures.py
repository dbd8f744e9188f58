"""Conditional coherent and deviation measures on a scenario tree.

``coherent(X)`` at level ``t`` is the worst-case expected loss
``max_Q E_t[-X Q]`` over the envelope; ``deviation(X) = coherent(X) + E_t[X]``.
Kernel envelopes are evaluated by backward induction (the g-expectation of
``-X``), CVaR by the per-node greedy density and the reference envelope by the
plain conditional expectation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bsde import solve_tree
from .envelopes import (CVaREnvelope, KernelEnvelope, KernelSet, ReferenceEnvelope,
                        RiskEnvelope, cvar_density, envelope_validate)
from .tree import (PredictableProcess, ScenarioTree, brownian, cond_expectation,
                   doleans_exponential, martingale_representation, payoff)


class EnvelopeError(ValueError):
    pass


@dataclass(frozen=True)
class MeasureResult:
    level: int
    values: np.ndarray
    kind: str
    envelope: RiskEnvelope

    def rows(self):
        return [(self.level, i, float(v)) for i, v in enumerate(self.values)]


def _check(envelope, tree):
    report = envelope_validate(envelope, tree, samples=0)
    if not report.ok:
        raise EnvelopeError("; ".join(report.messages) or "envelope failed validation")


def _coherent_values(tree, X, envelope, t):
    if isinstance(envelope, KernelEnvelope):
        return solve_tree(tree, -X, envelope.driver).Y[t]
    if isinstance(envelope, CVaREnvelope):
        Q = cvar_density(tree, X, envelope.level, t)
        return cond_expectation(tree, -X * Q, t)
    if isinstance(envelope, ReferenceEnvelope):
        return cond_expectation(tree, -X, t)
    raise TypeError(f"unsupported envelope {envelope!r}")


def coherent(tree: ScenarioTree, X, envelope: RiskEnvelope, t: int, validate: bool = True) -> MeasureResult:
    X = payoff(tree, X)
    tree._check_level(t)
    if validate:
        _check(envelope, tree)
    return MeasureResult(t, _coherent_values(tree, X, envelope, t), "coherent", envelope)


def deviation(tree: ScenarioTree, X, envelope: RiskEnvelope, t: int, validate: bool = True) -> MeasureResult:
    C = coherent(tree, X, envelope, t, validate)
    return MeasureResult(t, C.values + cond_expectation(tree, X, t), "deviation", envelope)


def deviation_from_coherent(tree, X, coherent_values, t):
    """``D_t(X) = C_t(X) - E_t[-X]``."""
    return np.asarray(coherent_values) + cond_expectation(tree, payoff(tree, X), t)


def coherent_from_deviation(tree, X, deviation_values, t):
    """``C_t(X) = D_t(X) + E_t[-X]``."""
    return np.asarray(deviation_values) - cond_expectation(tree, payoff(tree, X), t)


@dataclass(frozen=True)
class MeasureFamily:
    """A conditional measure ``(X, t) -> values at level t`` of a given kind."""

    tree: ScenarioTree
    kind: str
    evaluate: Callable
    name: str = "measure"

    def __call__(self, X, t):
        return np.asarray(self.evaluate(X, t), dtype=float)

    @classmethod
    def from_envelope(cls, tree, envelope, kind="coherent", name=None):
        _check(envelope, tree)
        fn = coherent if kind == "coherent" else deviation
        return cls(tree, kind, lambda X, t: fn(tree, X, envelope, t, validate=False).values,
                   name or f"{envelope.kind}-{kind}")

    def corresponding(self) -> "MeasureFamily":
        """The family on the other side of the coherent/deviation correspondence."""
        tree, base = self.tree, self
        if self.kind == "coherent":
            return MeasureFamily(tree, "deviation",
                                 lambda X, t: deviation_from_coherent(tree, X, base(X, t), t),
                                 f"{self.name}->deviation")
        return MeasureFamily(tree, "coherent",
                             lambda X, t: coherent_from_deviation(tree, X, base(X, t), t),
                             f"{self.name}->coherent")


@dataclass(frozen=True)
class RecorderWeights:
    """Finite set of scalar weight processes ``K`` for a volatility recorder."""

    weights: tuple

    def __post_init__(self):
        ws = tuple(self.weights)
        if not ws:
            raise ValueError("a recorder needs at least one weight process")
        object.__setattr__(self, "weights", ws)
        tree = ws[0].tree
        for k in range(tree.steps):
            stack = np.stack([w[k] for w in ws])
            bad = (stack.min(axis=0) > 0) | (stack.max(axis=0) < 0)
            if np.any(bad):
                node = int(np.argmax(bad))
                raise ValueError(
                    f"recorder weights violate positivity at level {k}, node {node}: "
                    f"all weights share one strict sign")

    def sup(self, level, sigma):
        """``max_K K * sigma`` node-wise."""
        return np.max(np.stack([w[level] * sigma for w in self.weights]), axis=0)


def volatility_recorder(tree: ScenarioTree, X, weights: RecorderWeights, t: int) -> np.ndarray:
    """``E_t[sum_{k>=t} max_K K_k sigma^X_k dt]`` from the martingale representation of ``X``."""
    _, sigma = martingale_representation(tree, payoff(tree, X))
    acc = np.zeros(tree.leaves)
    for k in range(tree.steps - 1, t - 1, -1):
        acc = (acc[0::2] + acc[1::2]) * 0.5 + weights.sup(k, sigma[k]) * tree.dt
    return acc


def endpoint_kernels(tree: ScenarioTree, kernels: KernelSet) -> list:
    """The ``lo`` and ``hi`` kernel selections as predictable processes."""
    lows, highs = zip(*(kernels.bounds(k, tree.size(k), tree.steps) for k in range(tree.steps)))
    return [PredictableProcess(tree, lows), PredictableProcess(tree, highs)]


def recorder_weights_from_kernels(tree: ScenarioTree, kernels: Sequence[PredictableProcess],
                                  start: int = 0) -> RecorderWeights:
    """Weights ``K = -phi * E(phi . B)`` for each kernel process (exponential started at ``start``)."""
    out = []
    for phi in kernels:
        dens = doleans_exponential(tree, phi, start)
        out.append(PredictableProcess(
            tree, [-np.asarray(phi[k]) * dens[k] if k >= start else np.zeros(tree.size(k))
                   for k in range(tree.steps)]))
    return RecorderWeights(tuple(out))


COHERENT_AXIOMS = ("M1t", "M2t", "C1t", "C2t")
DEVIATION_AXIOMS = ("M1t", "M2t", "D1t", "D2't")


@dataclass
class AxiomReport:
    family: str
    trials: int
    tol: float
    max_residual: dict = field(default_factory=dict)
    violations: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not any(self.violations.values())

    def as_dict(self):
        return {"family": self.family, "trials": self.trials, "tol": self.tol, "ok": self.ok,
                "max_residual": dict(self.max_residual), "violations": dict(self.violations)}


def axiom_suite(family: MeasureFamily, tree: ScenarioTree, seed: int = 0, trials: int = 100,
                tol: float = 1e-9) -> AxiomReport:
    """Probe the conditional axioms on seeded random payoffs.

    Each trial draws a level ``t``, Gaussian leaf payoffs ``X, Y``, an
    F_t-measurable cash amount ``C`` and multiplier ``lam > 0``.  Residuals
    are scaled by ``1 + max|values|``; a violation is a scaled residual above
    ``tol``.
    """
    axioms = COHERENT_AXIOMS if family.kind == "coherent" else DEVIATION_AXIOMS
    report = AxiomReport(family.name, trials, tol, {a: 0.0 for a in axioms}, {a: 0 for a in axioms})
    N = tree.steps

    def record(name, residual, *scales):
        scale = 1.0 + max(float(np.max(np.abs(s))) for s in scales)
        r = float(np.max(residual)) / scale
        report.max_residual[name] = max(report.max_residual[name], r)
        if r > tol:
            report.violations[name] += 1

    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        t = int(rng.integers(0, N))
        X = rng.standard_normal(tree.leaves)
        Y = rng.standard_normal(tree.leaves)
        C = rng.standard_normal(tree.size(t))
        lam = np.exp(rng.standard_normal(tree.size(t)))
        C_leaf = tree.lift(C, t, N)
        lam_leaf = tree.lift(lam, t, N)
        rX, rY = family(X, t), family(Y, t)

        rXY = family(X + Y, t)
        record("M1t", rXY - rX - rY, rXY, rX, rY)
        r0 = family(np.zeros(tree.leaves), t)
        rl = family(lam_leaf * X, t)
        record("M2t", np.maximum(np.abs(rl - lam * rX), np.abs(r0)), rl, lam * rX)
        rC = family(X + C_leaf, t)
        if family.kind == "coherent":
            bigger = X + np.abs(Y)
            r_big = family(bigger, t)
            record("C1t", r_big - rX, r_big, rX)
            record("C2t", np.abs(rC - (rX - C)), rC, rX, C)
        else:
            record("D1t", np.abs(rC - rX), rC, rX)
            r_cash = family(C_leaf, t)
            record("D2't", np.maximum(np.maximum(-rX, -rY), -r_cash), rX, rY, r_cash)
    return report


@dataclass(frozen=True)
class ConsistencyReport:
    s: int
    t: int
    c3: np.ndarray
    d3: np.ndarray

    @property
    def c3_max(self) -> float:
        return float(np.max(np.abs(self.c3)))

    @property
    def d3_max(self) -> float:
        return float(np.max(np.abs(self.d3)))

    def as_dict(self):
        return {"s": self.s, "t": self.t, "c3_max": self.c3_max, "d3_max": self.d3_max}


def time_consistency_check(tree: ScenarioTree, envelope: RiskEnvelope, X, s: int, t: int) -> ConsistencyReport:
    """Residuals of ``C_s(X) = C_s(-C_t(X))`` and of the deviation recursion
    ``D_s(X) = E_s[D_t(X)] + D_s(E_t[X] - D_t(X))`` at the nodes of level ``s``."""
    if s > t:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    X = payoff(tree, X)
    N = tree.steps
    C_t = coherent(tree, X, envelope, t).values
    C_s = coherent(tree, X, envelope, s).values
    c3 = C_s - coherent(tree, tree.lift(-C_t, t, N), envelope, s).values

    D_t = deviation(tree, X, envelope, t).values
    D_s = deviation(tree, X, envelope, s).values
    inner = tree.lift(cond_expectation(tree, X, t) - D_t, t, N)
    d3 = D_s - (cond_expectation(tree, D_t, s, level=t) + deviation(tree, inner, envelope, s).values)
    return ConsistencyReport(s, t, c3, d3)


def kappa_closed_form(tree: ScenarioTree, kappa: float):
    """Y_k = -B_k + kappa (T - t_k) for the terminal loss -B_T under g(z) = kappa |z|."""
    B = brownian(tree)
    return [-B[k] + kappa * (tree.horizon - k * tree.dt) for k in range(tree.steps + 1)]
