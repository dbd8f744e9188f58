"""Risk envelopes: kernel-generated density sets, CVaR, and the reference measure.

A kernel set assigns every decision node an admissible interval ``[lo, hi]``
(or a finite list of values) for the one-step kernel ``phi``.  The densities it
generates are discrete stochastic exponentials ``prod (1 + phi_k dB_{k+1})``
and the matching BSDE driver is the support function
``g(z) = max(lo * z, hi * z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .tree import (AdaptedProcess, CapacityError, PredictableProcess, ScenarioTree,
                   cond_expectation, doleans_exponential, payoff)

MAX_ENUMERATION = 1 << 20
MAX_ENUMERATION_CELLS = 1 << 26


def _eval_scalar_rule(rule, level, n, steps, name):
    if callable(rule):
        out = np.asarray(rule(level, np.arange(n)), dtype=float)
    else:
        arr = np.asarray(rule, dtype=float)
        if arr.ndim == 0:
            out = arr
        elif arr.ndim == 1 and arr.shape[0] == steps:
            out = arr[level]
        else:
            raise ValueError(f"{name}: expected a scalar or a length-{steps} table, got shape {arr.shape}")
    out = np.array(np.broadcast_to(out, (n,)), dtype=float)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} produced non-finite values at level {level}")
    return out


class KernelSet:
    """Admissible one-step kernels per node: an interval or a finite set.

    ``lo`` and ``hi`` are rules: a scalar, a per-level table of length ``N``
    or a callable ``rule(level, nodes)``.
    """

    def __init__(self, lo=None, hi=None, values: Sequence[float] | None = None):
        if values is not None:
            if lo is not None or hi is not None:
                raise ValueError("give either interval bounds or a finite set, not both")
            vals = np.unique(np.asarray(values, dtype=float))
            if vals.size == 0 or not np.all(np.isfinite(vals)):
                raise ValueError("finite kernel set must hold finite values")
            self.values = vals
            lo, hi = float(vals[0]), float(vals[-1])
        else:
            if lo is None or hi is None:
                raise ValueError("interval kernel sets need both lo and hi")
            self.values = None
        self.lo = lo
        self.hi = hi

    @classmethod
    def interval(cls, lo, hi):
        return cls(lo, hi)

    @classmethod
    def kappa(cls, kappa: float):
        if kappa < 0:
            raise ValueError(f"kappa must be non-negative, got {kappa}")
        return cls(-float(kappa), float(kappa))

    @classmethod
    def finite(cls, values):
        return cls(values=values)

    @property
    def node_dependent(self) -> bool:
        return callable(self.lo) or callable(self.hi)

    def bounds(self, level: int, n: int, steps: int):
        lo = _eval_scalar_rule(self.lo, level, n, steps, "kernel lo")
        hi = _eval_scalar_rule(self.hi, level, n, steps, "kernel hi")
        if np.any(lo > hi):
            node = int(np.argmax(lo > hi))
            raise ValueError(f"kernel bounds inverted at level {level}, node {node}: lo={lo[node]} > hi={hi[node]}")
        return lo, hi

    def tie_kernel(self, level: int, n: int, steps: int) -> np.ndarray:
        """Admissible kernel of minimal absolute value (the selection used at z = 0)."""
        if self.values is not None:
            return np.full(n, self.values[np.argmin(np.abs(self.values))])
        lo, hi = self.bounds(level, n, steps)
        return np.clip(0.0, lo, hi)

    def contains_zero(self, level: int, n: int, steps: int) -> np.ndarray:
        if self.values is not None:
            return np.full(n, bool(np.any(self.values == 0.0)))
        lo, hi = self.bounds(level, n, steps)
        return (lo <= 0.0) & (0.0 <= hi)

    def __repr__(self):
        if self.values is not None:
            return f"KernelSet.finite({self.values.tolist()})"
        return f"KernelSet.interval({self.lo!r}, {self.hi!r})"


def support_function(kernels: KernelSet, level: int, z, steps: int, nodes: int | None = None):
    """Return ``(max_phi phi*z, argmax)`` node-wise; ties at ``z == 0`` pick the minimal |phi|."""
    z = np.asarray(z, dtype=float)
    n = z.shape[0] if nodes is None else nodes
    lo, hi = kernels.bounds(level, n, steps)
    value = np.maximum(lo * z, hi * z)
    arg = np.where(z > 0, hi, lo)
    at_zero = z == 0
    if np.any(at_zero):
        arg = np.where(at_zero, kernels.tie_kernel(level, n, steps), arg)
    return value, arg


class Driver:
    """BSDE driver ``g(level, z)`` depending on ``z`` only.

    Built from a :class:`KernelSet` it is the support function and also
    provides the subgradient selector; a bare callable ``fn(level, z)`` gives
    value-only drivers.
    """

    def __init__(self, kernels: KernelSet | None = None, fn: Callable | None = None):
        if (kernels is None) == (fn is None):
            raise ValueError("a driver needs exactly one of kernels or fn")
        self.kernels = kernels
        self.fn = fn

    @classmethod
    def zero(cls):
        return cls(KernelSet(0.0, 0.0))

    @classmethod
    def kappa(cls, kappa):
        return cls(KernelSet.kappa(kappa))

    def __call__(self, level, z, steps):
        if self.kernels is None:
            return np.asarray(self.fn(level, np.asarray(z, dtype=float)), dtype=float) * np.ones(np.shape(z))
        return support_function(self.kernels, level, z, steps)[0]

    def select(self, level, z, steps):
        if self.kernels is None:
            raise ValueError("a callable driver has no subgradient selector")
        return support_function(self.kernels, level, z, steps)[1]

    def __repr__(self):
        return f"Driver({self.kernels!r})" if self.kernels is not None else f"Driver(fn={self.fn!r})"


class RiskEnvelope:
    kind = "abstract"


@dataclass(frozen=True)
class KernelEnvelope(RiskEnvelope):
    kernels: KernelSet
    kind = "kernel"

    @property
    def driver(self) -> Driver:
        return Driver(self.kernels)


@dataclass(frozen=True)
class CVaREnvelope(RiskEnvelope):
    level: float
    kind = "cvar"

    def __post_init__(self):
        if not 0.0 < self.level <= 1.0:
            raise ValueError(f"CVaR level must lie in (0, 1], got {self.level}")


@dataclass(frozen=True)
class ReferenceEnvelope(RiskEnvelope):
    kind = "reference"


def kappa_envelope(kappa: float) -> KernelEnvelope:
    return KernelEnvelope(KernelSet.kappa(kappa))


@dataclass(frozen=True)
class DensityProcess:
    """Mean-one martingale density ``D_k = E_k[Q]`` with optional generating kernel."""

    values: AdaptedProcess
    start: int = 0
    kernel: PredictableProcess | None = None

    @property
    def terminal(self) -> np.ndarray:
        return self.values.terminal

    @classmethod
    def from_terminal(cls, tree, Q, start=0):
        Q = payoff(tree, Q)
        return cls(AdaptedProcess(tree, [cond_expectation(tree, Q, k) for k in range(tree.steps + 1)]), start)

    @classmethod
    def from_kernel(cls, tree, phi: PredictableProcess, start=0):
        return cls(doleans_exponential(tree, phi, start), start, phi)


def cvar_density(tree: ScenarioTree, X, lam: float, t: int) -> np.ndarray:
    """Worst-case CVaR density for ``X`` conditional on level ``t`` (greedy sort-and-fill).

    Within each level-``t`` subtree the leaves are ranked by loss ``-X`` and
    filled with density ``1/lam`` until the conditional mass reaches one;
    ties keep leaf order.
    """
    X = payoff(tree, X)
    m = 1 << (tree.steps - t)
    losses = -X.reshape(-1, m)
    order = np.argsort(-losses, axis=1, kind="stable")
    cap = 1.0 / lam
    filled = np.clip(m - np.arange(m) * cap, 0.0, cap)
    Q = np.empty_like(losses)
    np.put_along_axis(Q, order, np.broadcast_to(filled, losses.shape), axis=1)
    return Q.ravel()


class DensityEnumeration:
    """All vertex densities of a kernel envelope conditional on level ``start``.

    ``terminal`` is an ``(S, 2**N)`` matrix of leaf densities; ``selections``
    holds the kernel value chosen at each decision node per row.
    """

    def __init__(self, tree, start, terminal, kernels=None):
        self.tree = tree
        self.start = start
        self.terminal = terminal
        self._kernels = kernels

    def __len__(self):
        return self.terminal.shape[0]

    def kernel(self, i) -> PredictableProcess | None:
        if self._kernels is None:
            return None
        return PredictableProcess(self.tree, [lvl[i] for lvl in self._kernels])

    def process(self, i) -> DensityProcess:
        phi = self.kernel(i)
        if phi is not None:
            return DensityProcess.from_kernel(self.tree, phi, self.start)
        return DensityProcess.from_terminal(self.tree, self.terminal[i], self.start)

    def __iter__(self) -> Iterator[DensityProcess]:
        return (self.process(i) for i in range(len(self)))

    def worst_case(self, X) -> float:
        """``max_Q E[-X Q]`` over the enumeration (unconditional)."""
        return float(np.max(self.terminal @ (-payoff(self.tree, X))) / self.tree.leaves)


def extreme_densities(envelope: RiskEnvelope, tree: ScenarioTree, t: int = 0, X=None,
                      max_count: int = MAX_ENUMERATION) -> DensityEnumeration:
    """Enumerate extreme densities consistent on level ``t``.

    Kernel envelopes: one density per choice of interval endpoint at every
    decision node of levels ``t..N-1`` (kernels are node-indexed, so the count
    is ``2**(free nodes)``).  CVaR: the single greedy density for payoff ``X``.
    """
    tree._check_level(t)
    N = tree.steps
    if isinstance(envelope, ReferenceEnvelope):
        return DensityEnumeration(tree, t, np.ones((1, tree.leaves)),
                                  [np.zeros((1, tree.size(k))) for k in range(N)])
    if isinstance(envelope, CVaREnvelope):
        if X is None:
            raise ValueError("CVaR extreme densities are payoff-specific; pass X")
        return DensityEnumeration(tree, t, cvar_density(tree, X, envelope.level, t)[None, :])
    if not isinstance(envelope, KernelEnvelope):
        raise TypeError(f"unsupported envelope {envelope!r}")

    kernels = envelope.kernels
    bounds = [kernels.bounds(k, tree.size(k), N) for k in range(N)]
    free = sum(int(np.count_nonzero(lo < hi)) for k, (lo, hi) in enumerate(bounds) if k >= t)
    count = 1 << free
    if count > max_count or count * tree.leaves > MAX_ENUMERATION_CELLS:
        raise CapacityError(
            f"enumeration of {count} vertex densities on {tree.leaves} leaves exceeds the bound "
            f"({max_count} densities, {MAX_ENUMERATION_CELLS} cells)")
    index = np.arange(count, dtype=np.int64)
    bit = 0
    selections = []
    Q = np.ones((count, 1))
    for k in range(N):
        lo, hi = bounds[k]
        n = tree.size(k)
        if k < t:
            phi = np.zeros((count, n))
        else:
            phi = np.broadcast_to(lo, (count, n)).copy()
            for i in np.flatnonzero(lo < hi):
                chosen = ((index >> bit) & 1).astype(bool)
                phi[chosen, i] = hi[i]
                bit += 1
        if np.any(np.abs(phi) * tree.sqrt_dt >= 1.0):
            raise ValueError(f"kernel bounds violate density positivity at level {k}")
        selections.append(phi)
        Q = np.repeat(Q, 2, axis=1) * (1.0 + np.repeat(phi, 2, axis=1) * tree.increments(k + 1))
    return DensityEnumeration(tree, t, Q, selections)


@dataclass
class ValidationReport:
    envelope: RiskEnvelope
    a2: bool = True
    positivity: bool = True
    a1: bool = True
    a1_certified: bool = False
    messages: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.a2 and self.positivity and self.a1

    def as_dict(self):
        return {"kind": self.envelope.kind, "a2": self.a2, "positivity": self.positivity,
                "a1": self.a1, "a1_certified": self.a1_certified, "ok": self.ok,
                "messages": list(self.messages)}


def envelope_validate(envelope: RiskEnvelope, tree: ScenarioTree, samples: int = 16,
                      seed: int = 0) -> ValidationReport:
    """Check A2 (reference density admissible), density positivity and A1.

    A1 (``D_t(X) <= E_t[X] - min X``) is certified for CVaR and the reference
    envelope; for kernel envelopes it is probed on seeded random payoffs and any
    violation is reported.
    """
    report = ValidationReport(envelope)
    if isinstance(envelope, (CVaREnvelope, ReferenceEnvelope)):
        report.a1_certified = True
        return report
    if not isinstance(envelope, KernelEnvelope):
        raise TypeError(f"unsupported envelope {envelope!r}")

    kernels = envelope.kernels
    for k in range(tree.steps):
        n = tree.size(k)
        lo, hi = kernels.bounds(k, n, tree.steps)
        zero_ok = kernels.contains_zero(k, n, tree.steps)
        if not np.all(zero_ok):
            report.a2 = False
            report.messages.append(
                f"A2: zero kernel not admissible at level {k}, node {int(np.argmin(zero_ok))}")
        reach = np.maximum(np.abs(lo), np.abs(hi)) * tree.sqrt_dt
        if np.any(reach >= 1.0):
            report.positivity = False
            node = int(np.argmax(reach))
            report.messages.append(
                f"positivity: |phi|*sqrt(dt) = {reach[node]:.6g} >= 1 at level {k}, node {node}")
    if not report.positivity:
        return report

    from .measures import deviation

    rng = np.random.default_rng(seed)
    for _ in range(samples):
        X = rng.standard_normal(tree.leaves)
        t = int(rng.integers(0, tree.steps + 1))
        dev = deviation(tree, X, envelope, t, validate=False).values
        bound = cond_expectation(tree, X, t) - X.min()
        excess = dev - bound
        if np.any(excess > 1e-12 * (1.0 + np.abs(bound))):
            report.a1 = False
            report.messages.append(f"A1 violated at level {t}: excess {excess.max():.3g}")
    return report
