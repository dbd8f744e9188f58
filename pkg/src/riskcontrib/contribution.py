"""Exposed faces, the Doleans loss process and continuous-time risk contributions.

Conventions: the worst-case density is written ``E(phi_hat . B)``; the price
of risk is ``-phi_hat``.  For a face conditional on level ``t*`` the density
process ``D_hat`` equals one up to ``t*``.  The loss process is

    ell_k = -b_k D_hat_k - sigma_k E_k[D_hat_{k+1} dB_{k+1}] / dt
          = -(b_k + sigma_k phi_hat_k) D_hat_k          (kernel faces)

and the marginal contributions are ``m^C = ell`` and ``m^D = ell + b``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .bsde import BsdeSolution, solve_tree
from .envelopes import (CVaREnvelope, DensityProcess, KernelEnvelope, ReferenceEnvelope,
                        RiskEnvelope, cvar_density)
from .market import AssetModel, Policy, wealth
from .measures import _check, coherent, deviation
from .tree import (CapacityError, PredictableProcess, ScenarioTree,
                   cond_expectation, payoff)

MAX_TIES = 1 << 16


@dataclass(frozen=True)
class ExposedFaceElement:
    level: int
    density: DensityProcess
    worst_kernel: PredictableProcess | None
    solution: BsdeSolution | None = None

    @property
    def terminal_density(self) -> np.ndarray:
        return self.density.terminal

    def value(self, X) -> np.ndarray:
        """``E_t*[-X Q_hat]`` at the nodes of the conditioning level."""
        tree = self.density.values.tree
        return cond_expectation(tree, -payoff(tree, X) * self.terminal_density, self.level)


def exposed_face(tree: ScenarioTree, X, envelope: RiskEnvelope, t: int) -> ExposedFaceElement:
    """One worst-case density for ``X`` conditional on level ``t``.

    Kernel envelopes use the subgradient selection made along the backward
    induction of ``-X`` (minimal |phi| where ``Z = 0``).  CVaR faces carry the
    greedy density and no kernel.
    """
    X = payoff(tree, X)
    tree._check_level(t)
    _check(envelope, tree)
    if isinstance(envelope, KernelEnvelope):
        sol = solve_tree(tree, -X, envelope.driver)
        phi = sol.kernel(start=t)
        return ExposedFaceElement(t, DensityProcess.from_kernel(tree, phi, t), phi, sol)
    if isinstance(envelope, ReferenceEnvelope):
        phi = PredictableProcess.constant(tree, 0.0)
        return ExposedFaceElement(t, DensityProcess.from_kernel(tree, phi, t), phi)
    if isinstance(envelope, CVaREnvelope):
        Q = cvar_density(tree, X, envelope.level, t)
        return ExposedFaceElement(t, DensityProcess.from_terminal(tree, Q, t), None)
    raise TypeError(f"unsupported envelope {envelope!r}")


def _cvar_face_extremes(tree, X, Y, lam, t):
    """Sup and inf of ``E_t[-Q Y]`` over all CVaR densities attaining the worst case for ``X``."""
    m = 1 << (tree.steps - t)
    cap = 1.0 / lam
    Q = cvar_density(tree, X, lam, t).reshape(-1, m)
    L = -X.reshape(-1, m)
    Ys = Y.reshape(-1, m)
    upper = np.empty(Q.shape[0])
    lower = np.empty(Q.shape[0])
    for i in range(Q.shape[0]):
        v = L[i][Q[i] > 0].min()
        tied = L[i] == v
        base = np.where(tied, 0.0, Q[i])
        mass = Q[i][tied].sum()
        gain = -Ys[i][tied]
        out = []
        for order in (np.argsort(-gain, kind="stable"), np.argsort(gain, kind="stable")):
            fill = np.clip(mass - np.arange(order.size) * cap, 0.0, cap)
            q = np.zeros(order.size)
            q[order] = fill
            out.append((np.dot(base, -Ys[i]) + np.dot(q, gain)) / m)
        upper[i], lower[i] = out
    return upper, lower


def _tie_masks(tree, face, envelope, t, tie_tol):
    masks = []
    for k in range(tree.steps):
        lo, hi = envelope.kernels.bounds(k, tree.size(k), tree.steps)
        tied = (np.abs(face.solution.Z[k]) <= tie_tol) & (lo < hi)
        masks.append(tied if k >= t else np.zeros_like(tied))
    return masks


def _face_extreme_induction(tree, face, envelope, Y, t, tied, pick):
    """Node-wise extreme of ``E_t[-Q Y]`` over the face, one step at a time."""
    W = -Y
    for k in range(tree.steps - 1, t - 1, -1):
        z = (W[0::2] - W[1::2]) / (2.0 * tree.sqrt_dt)
        lo, hi = envelope.kernels.bounds(k, tree.size(k), tree.steps)
        step = np.where(tied[k], pick(lo * z, hi * z), face.worst_kernel[k] * z)
        W = (W[0::2] + W[1::2]) * 0.5 + step * tree.dt
    return W


def _face_extremes_enumerated(tree, face, envelope, Y, t, tied, max_ties):
    free = []
    for k in range(t, tree.steps):
        lo, hi = envelope.kernels.bounds(k, tree.size(k), tree.steps)
        free.extend((k, i, lo[i], hi[i]) for i in np.flatnonzero(tied[k]))
    if len(free) > 62 or (1 << len(free)) > max_ties:
        raise CapacityError(f"{len(free)} tie nodes exceed the enumeration bound of {max_ties} vertices")
    base = [np.array(face.worst_kernel[k]) for k in range(tree.steps)]
    values = []
    for choice in itertools.product((0, 1), repeat=len(free)):
        phi = [b.copy() for b in base]
        for (k, i, lo, hi), c in zip(free, choice):
            phi[k][i] = hi if c else lo
        Q = DensityProcess.from_kernel(tree, PredictableProcess(tree, phi), t).terminal
        values.append(cond_expectation(tree, -Q * Y, t))
    values = np.stack(values)
    return values.max(axis=0), values.min(axis=0)


@dataclass(frozen=True)
class SubdifferentialBounds:
    level: int
    upper: np.ndarray
    lower: np.ndarray
    deviation_upper: np.ndarray
    deviation_lower: np.ndarray
    ties: int
    probes: dict

    @property
    def probe_ok(self) -> bool:
        return all(p["ok"] for p in self.probes.values())


def subdifferential_bounds(tree: ScenarioTree, X, Y, envelope: RiskEnvelope, t: int,
                           thetas=(1e-3, 1e-4, -1e-3, -1e-4), tie_tol: float = 0.0,
                           method: str = "induction", max_ties: int = MAX_TIES) -> SubdifferentialBounds:
    """Directional-derivative bounds of ``C_t`` at ``X`` in direction ``Y``.

    ``upper``/``lower`` are the node-wise max/min of ``E_t[-Q Y]`` over the
    exposed face of ``X``.  For kernel envelopes the face is spanned by the
    endpoint choices at tie nodes (``|Z| <= tie_tol``); ``method="induction"``
    optimises them by backward induction, ``method="enumerate"`` visits every
    endpoint combination (bounded by ``max_ties`` combinations).
    The probe compares one-sided quotients ``(C_t(X + th Y) - C_t(X)) / th``
    with ``[lower - 10|th|, upper + 10|th|]``.  ``left_face`` flags probes whose
    step is long enough that the worst case of ``X + th Y`` is outside the
    exposed face of ``X`` (a kink of ``C_t`` lies inside the step), where the
    quotient no longer reflects the directional derivative.
    """
    X, Y = payoff(tree, X), payoff(tree, Y)
    face = exposed_face(tree, X, envelope, t)
    ties = 0
    if isinstance(envelope, KernelEnvelope):
        tied = _tie_masks(tree, face, envelope, t, tie_tol)
        ties = int(sum(np.count_nonzero(m) for m in tied))
        if method == "enumerate":
            upper, lower = _face_extremes_enumerated(tree, face, envelope, Y, t, tied, max_ties)
        elif method == "induction":
            upper = _face_extreme_induction(tree, face, envelope, Y, t, tied, np.maximum)
            lower = _face_extreme_induction(tree, face, envelope, Y, t, tied, np.minimum)
        else:
            raise ValueError(f"unknown method {method!r}")
    elif isinstance(envelope, CVaREnvelope):
        upper, lower = _cvar_face_extremes(tree, X, Y, envelope.level, t)
    else:
        upper = lower = cond_expectation(tree, -Y, t)

    mean_y = cond_expectation(tree, Y, t)
    c0 = coherent(tree, X, envelope, t).values
    d0 = c0 + cond_expectation(tree, X, t)
    probes = {}
    for th in thetas:
        cq = (coherent(tree, X + th * Y, envelope, t).values - c0) / th
        dq = (deviation(tree, X + th * Y, envelope, t).values - d0) / th
        tol = 10 * abs(th)
        ok = bool(np.all((cq >= lower - tol) & (cq <= upper + tol)) and
                  np.all((dq >= lower + mean_y - tol) & (dq <= upper + mean_y + tol)))
        # the step left the exposed face of X when the perturbed worst case is no longer worst for X
        gap = c0 - exposed_face(tree, X + th * Y, envelope, t).value(X)
        left_face = bool(np.any(gap > 1e-10 * (1.0 + np.abs(c0))))
        probes[th] = {"coherent": cq, "deviation": dq, "ok": ok, "left_face": left_face}
    return SubdifferentialBounds(t, upper, lower, upper + mean_y, lower + mean_y, ties, probes)


def doleans_loss_process(tree: ScenarioTree, model: AssetModel, face: ExposedFaceElement) -> PredictableProcess:
    """Per-asset density ``ell`` of the signed measure ``E -> E[-X_T^{1_E} Q_hat]``."""
    D = face.density.values
    levels = []
    for k in range(tree.steps):
        b = model.drift_at(tree, k)
        s = model.diffusion_at(tree, k)
        tilt = (D[k + 1][0::2] - D[k + 1][1::2]) / (2.0 * tree.sqrt_dt)
        levels.append(-b * D[k][:, None] - s * tilt[:, None])
    return PredictableProcess(tree, levels)


def signed_measure(tree: ScenarioTree, model: AssetModel, face: ExposedFaceElement, nodes, asset: int) -> float:
    """``E[-X_T^{1_E} Q_hat]`` for a unit share of ``asset`` on the node set ``nodes``."""
    pol = Policy.indicator(tree, nodes, asset, model.asset_count)
    XT = wealth(tree, model, pol, 0.0).terminal
    return float(np.mean(-XT * face.terminal_density))


def loss_integral(tree: ScenarioTree, ell: PredictableProcess, nodes, asset: int) -> float:
    """``E[sum_{(k, i) in E} ell_k dt]`` for the same node set."""
    return float(sum(tree.prob(k) * ell[k][i, asset] * tree.dt for k, i in nodes))


def _accumulate(tree, per_level, t):
    """``E_t[sum_{k >= t} v_k dt]`` for scalar node values ``per_level[k]``."""
    acc = np.zeros(tree.leaves)
    for k in range(tree.steps - 1, t - 1, -1):
        acc = (acc[0::2] + acc[1::2]) * 0.5 + per_level[k] * tree.dt
    return acc


@dataclass(frozen=True)
class ContributionReport:
    level: int
    policy: Policy
    face: ExposedFaceElement
    ell: PredictableProcess
    marginal_coherent: PredictableProcess
    marginal_deviation: PredictableProcess
    marginal_deviation_alt: PredictableProcess
    contributions_coherent: PredictableProcess
    contributions_deviation: PredictableProcess
    delta: PredictableProcess
    coherent_value: np.ndarray
    deviation_value: np.ndarray
    coherent_residual: np.ndarray
    deviation_residual: np.ndarray
    delta_mean: np.ndarray

    def residual_summary(self) -> dict:
        return {"level": self.level,
                "coherent_aggregation": float(np.max(np.abs(self.coherent_residual))),
                "deviation_aggregation": float(np.max(np.abs(self.deviation_residual))),
                "delta_conditional_mean": float(np.max(np.abs(self.delta_mean))),
                "coherent": self.coherent_value.tolist(),
                "deviation": self.deviation_value.tolist()}

    def rows(self):
        """CSV rows ``level, node, asset, u, mC, mD, mD_alt, c, delta`` from the conditioning level on,
        with ``c = u * mD``."""
        tree = self.ell.tree
        for k in range(self.level, tree.steps):
            u = self.policy.at(k)
            for i in range(tree.size(k)):
                for a in range(u.shape[1]):
                    yield (k, i, a, u[i, a], self.marginal_coherent[k][i, a],
                           self.marginal_deviation[k][i, a], self.marginal_deviation_alt[k][i, a],
                           self.contributions_deviation[k][i, a], self.delta[k][i, a])


def marginal_and_total_contributions(tree: ScenarioTree, model: AssetModel, policy: Policy,
                                     envelope: RiskEnvelope, t: int, x0: float = 0.0) -> ContributionReport:
    W = wealth(tree, model, policy, x0)
    XT = W.terminal
    face = exposed_face(tree, XT, envelope, t)
    ell = doleans_loss_process(tree, model, face)
    D = face.density.values
    mD, alt, delta, cC, cD = [], [], [], [], []
    for k in range(tree.steps):
        b = model.drift_at(tree, k)
        u = policy.at(k)
        mD.append(ell[k] + b)
        delta.append(b * (1.0 - D[k][:, None]))
        alt.append(mD[-1] - delta[-1])
        cC.append(u * ell[k])
        cD.append(u * mD[-1])
    P = lambda levels: PredictableProcess(tree, levels)
    C_val = coherent(tree, XT, envelope, t).values
    D_val = deviation(tree, XT, envelope, t).values
    agg_C = _accumulate(tree, [c.sum(axis=1) for c in cC], t) - W.values[t]
    agg_D = _accumulate(tree, [c.sum(axis=1) for c in cD], t)
    dmean = _accumulate(tree, [(policy.at(k) * delta[k]).sum(axis=1) for k in range(tree.steps)], t)
    return ContributionReport(t, policy, face, ell, ell, P(mD), P(alt), P(cC), P(cD), P(delta),
                              C_val, D_val, C_val - agg_C, D_val - agg_D, dmean)


def contribution_time_consistency(tree: ScenarioTree, model: AssetModel, policy: Policy,
                                  envelope: RiskEnvelope, t1: int, t2: int, x0: float = 0.0) -> dict:
    """Compare marginal contributions from faces at ``t1`` and ``t2`` on levels ``>= max(t1, t2)``.

    ``kernel`` compares the selected worst-case kernels, ``marginal_*`` the raw
    marginals, ``rescaled_*`` the marginals after removing the density factor
    accumulated between the two conditioning levels, and ``correspondence``
    checks ``m^D - m^C - b``.
    """
    a, b_ = sorted((t1, t2))
    ra = marginal_and_total_contributions(tree, model, policy, envelope, a, x0)
    rb = marginal_and_total_contributions(tree, model, policy, envelope, b_, x0)
    scale = ra.face.density.values[b_]
    out = {"t1": t1, "t2": t2, "time_consistent_family": not isinstance(envelope, CVaREnvelope),
           "kernel": None, "marginal_coherent": 0.0, "marginal_deviation": 0.0,
           "rescaled_coherent": 0.0, "rescaled_deviation_alt": 0.0, "correspondence": 0.0}
    if ra.face.worst_kernel is not None and rb.face.worst_kernel is not None:
        out["kernel"] = max((float(np.max(np.abs(ra.face.worst_kernel[k] - rb.face.worst_kernel[k])))
                             for k in range(b_, tree.steps)), default=0.0)

    def upd(key, v):
        out[key] = max(out[key], float(np.max(np.abs(v))))

    for k in range(b_, tree.steps):
        lift = tree.lift(scale, b_, k)[:, None]
        upd("marginal_coherent", ra.marginal_coherent[k] - rb.marginal_coherent[k])
        upd("marginal_deviation", ra.marginal_deviation[k] - rb.marginal_deviation[k])
        upd("rescaled_coherent", ra.marginal_coherent[k] - lift * rb.marginal_coherent[k])
        upd("rescaled_deviation_alt", ra.marginal_deviation_alt[k] - lift * rb.marginal_deviation_alt[k])
    for r in (ra, rb):
        for k in range(tree.steps):
            upd("correspondence", r.marginal_deviation[k] - r.marginal_coherent[k] - model.drift_at(tree, k))
    return out


@dataclass(frozen=True)
class ZIdentityReport:
    level: int
    contribution_sum: np.ndarray
    z_phi: np.ndarray
    residual: np.ndarray
    residual_ell: np.ndarray
    drift_gap: np.ndarray
    z_residual: np.ndarray
    propagated_max: float
    conditional_mean: np.ndarray

    def as_dict(self):
        m = lambda v: float(np.max(np.abs(v)))
        return {"level": self.level, "residual": m(self.residual), "residual_ell": m(self.residual_ell),
                "drift_gap": m(self.drift_gap), "z_residual": m(self.z_residual),
                "propagated_max": self.propagated_max,
                "conditional_mean": m(self.conditional_mean)}


def z_identity_check(tree: ScenarioTree, model: AssetModel, policy: Policy, envelope: RiskEnvelope,
                     t: int, x0: float = 0.0) -> ZIdentityReport:
    """Compare the summed deviation contributions with ``Z phi_hat`` at level ``t``.

    ``residual`` uses ``m^D_alt = -sigma phi_hat D_hat`` and ``residual_ell``
    uses ``m^D = ell + b``; their gap ``u . b (1 - D_hat)`` is ``drift_gap``.
    ``z_residual`` is ``Z_t + (u_t . sigma_t) D_hat_t``.  On later levels the
    same comparison with the level-``t`` face is only reported
    (``propagated_max``) together with its exact conditional mean.
    """
    if not isinstance(envelope, KernelEnvelope):
        raise ValueError("the Z identity needs a kernel-generated envelope")
    rep = marginal_and_total_contributions(tree, model, policy, envelope, t, x0)
    sol = rep.face.solution
    phi = rep.face.worst_kernel
    D = rep.face.density.values
    sums_alt = [(policy.at(k) * rep.marginal_deviation_alt[k]).sum(axis=1) for k in range(tree.steps)]
    sums = [rep.contributions_deviation[k].sum(axis=1) for k in range(tree.steps)]
    zphi = [sol.Z[k] * phi[k] for k in range(tree.steps)]
    us = (policy.at(t) * model.diffusion_at(tree, t)).sum(axis=1)
    propagated = max(float(np.max(np.abs(sums_alt[k] - zphi[k]))) for k in range(t, tree.steps))
    cmean = _accumulate(tree, [sums[k] - zphi[k] for k in range(tree.steps)], t)
    return ZIdentityReport(t, sums_alt[t], zphi[t], sums_alt[t] - zphi[t], sums[t] - zphi[t],
                           sums[t] - sums_alt[t], sol.Z[t] + us * D[t], propagated, cmean)


@dataclass(frozen=True)
class StaticPortfolio:
    weights: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        L = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if L.shape != (w.size, w.size):
            raise ValueError(f"covariance shape {L.shape} does not match {w.size} weights")
        if not np.allclose(L, L.T, rtol=0, atol=1e-12 * max(1.0, np.abs(L).max())):
            raise ValueError("covariance must be symmetric")
        try:
            np.linalg.cholesky(L)
        except np.linalg.LinAlgError:
            raise ValueError("covariance must be positive definite") from None
        if not np.any(w):
            raise ValueError("weights must not all be zero")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "covariance", L)


def static_stddev_contribution(portfolio: StaticPortfolio):
    """Total ``sqrt(w' L w)``, marginals ``(L w) / total`` and contributions ``w * marginals``."""
    w, L = portfolio.weights, portfolio.covariance
    Lw = L @ w
    total = float(np.sqrt(w @ Lw))
    marginals = Lw / total
    return total, marginals, w * marginals
