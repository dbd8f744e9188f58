"""Batch front-end: ``riskcontrib <command> --config <path> [--out DIR] [--seed N] [--trials N]``.

Commands run one task each (``measure``, ``deviation``, ``contrib``, ``axioms``,
``consistency``, ``bsde-mc``, ``example-kappa``, ``stddev``); ``run`` executes
the config's task list in order.  Every invocation writes ``report.json``.

Exit status: 0 all asserted residuals within tolerance, 1 residual failure,
2 invalid config, 3 capacity bound exceeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .bsde import RegressionBasis, simulate_paths, solve_mc
from .config import (TASKS, ConfigError, build_envelope, build_model, build_policy,
                     build_tree_from, load_config, task_names, task_params)
from .contribution import (StaticPortfolio, marginal_and_total_contributions,
                           static_stddev_contribution, z_identity_check)
from .envelopes import KernelEnvelope, ReferenceEnvelope
from .market import wealth
from .measures import (MeasureFamily, RecorderWeights, axiom_suite, coherent,
                       coherent_from_deviation, deviation, time_consistency_check,
                       volatility_recorder)
from .plot import emit_plot
from .tree import CapacityError, PredictableProcess, brownian, cond_expectation

EXIT_OK, EXIT_RESIDUAL, EXIT_CONFIG, EXIT_CAPACITY = 0, 1, 2, 3


def _num(v) -> str:
    return format(float(v) + 0.0, ".17g")


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, obj):
    path.write_text(json.dumps(_clean(obj), indent=2) + "\n", encoding="utf-8")


class Context:
    """Objects built from the config, plus the run's output bookkeeping."""

    def __init__(self, config, out_dir: Path, seed: int, trials: int | None):
        self.config = config
        self.out = out_dir
        self.seed = seed
        self.trials = trials
        self.tree = build_tree_from(config)
        self.model = build_model(self.tree, config)
        self.policy = build_policy(self.tree, config, self.model.asset_count)
        self.envelope = build_envelope(self.tree, config)
        self.files = []

    def path(self, name) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.out / name

    def terminal_wealth(self):
        return wealth(self.tree, self.model, self.policy).terminal

    def payoff(self, kind):
        if kind == "wealth":
            return self.terminal_wealth()
        if kind == "brownian":
            return brownian(self.tree).terminal
        X = np.asarray(kind, dtype=float)
        if X.shape != (self.tree.leaves,):
            raise ConfigError("tasks.params.payoff", f"needs {self.tree.leaves} leaf values, got {X.size}")
        return X


def _check(residuals, name, value, tol):
    residuals[name] = {"value": float(value), "tol": tol, "ok": bool(value <= tol)}


def _levels(ctx, params, default):
    levels = params.get("levels", default)
    for t in levels:
        if not 0 <= int(t) <= ctx.tree.steps:
            raise ConfigError("tasks.params.levels", f"level {t} outside 0..{ctx.tree.steps}")
    return [int(t) for t in levels]


def task_measure(ctx: Context, params, kinds=("coherent", "deviation")):
    N = ctx.tree.steps
    X = ctx.payoff(params.get("payoff", "wealth"))
    levels = _levels(ctx, params, list(range(N + 1)))
    rows, means = [], {k: [] for k in kinds}
    residuals = {}
    worst = 0.0
    for t in levels:
        C = coherent(ctx.tree, X, ctx.envelope, t)
        D = deviation(ctx.tree, X, ctx.envelope, t, validate=False)
        worst = max(worst, float(np.max(np.abs(coherent_from_deviation(ctx.tree, X, D.values, t) - C.values))))
        for kind, res in (("coherent", C), ("deviation", D)):
            if kind in kinds:
                rows.extend((kind, lvl, node, v) for lvl, node, v in res.rows())
                means[kind].append(float(np.mean(res.values)))
    _check(residuals, "correspondence", worst, params.get("tol", 1e-9))
    write_csv(ctx.path("measures.csv"), ("kind", "level", "node", "value"), rows)
    times = np.asarray(levels) * ctx.tree.dt
    emit_plot({f"mean {k}": (times, means[k]) for k in kinds}, ctx.path("measures.svg"),
              title="Mean conditional risk", ylabel="value")
    values = {f"{k}_0": means[k][levels.index(0)] for k in kinds if 0 in levels}
    return residuals, values


def task_deviation(ctx, params):
    return task_measure(ctx, params, kinds=("deviation",))


def task_contrib(ctx: Context, params):
    tol = params.get("tol", 1e-9)
    levels = _levels(ctx, params, [0])
    rows, residuals, values = [], {}, {}
    series = {}
    for t in levels:
        if t >= ctx.tree.steps:
            raise ConfigError("tasks.params.levels", f"contribution level must be below {ctx.tree.steps}")
        rep = marginal_and_total_contributions(ctx.tree, ctx.model, ctx.policy, ctx.envelope, t)
        rows.extend((t, *r) for r in rep.rows())
        summ = rep.residual_summary()
        _check(residuals, f"coherent_aggregation_t{t}", summ["coherent_aggregation"], tol)
        _check(residuals, f"deviation_aggregation_t{t}", summ["deviation_aggregation"], tol)
        values[f"delta_conditional_mean_t{t}"] = summ["delta_conditional_mean"]
        values[f"coherent_t{t}"] = summ["coherent"]
        values[f"deviation_t{t}"] = summ["deviation"]
        ks = list(range(t, ctx.tree.steps))
        series[f"sum c^D (t={t})"] = (np.asarray(ks) * ctx.tree.dt,
                                      [float(np.mean(rep.contributions_deviation[k].sum(axis=1))) for k in ks])
    write_csv(ctx.path("contrib.csv"), ("t", "level", "node", "asset", "u", "mC", "mD", "mD_alt", "c", "delta"), rows)
    emit_plot(series, ctx.path("contrib.svg"), title="Mean deviation contribution per step", ylabel="u . m^D")
    return residuals, values


def task_axioms(ctx: Context, params):
    trials = ctx.trials if ctx.trials is not None else params.get("trials", 500)
    tol = params.get("tol", 1e-9)
    reports = []
    residuals = {}
    for kind in params.get("kinds", ["coherent", "deviation"]):
        fam = MeasureFamily.from_envelope(ctx.tree, ctx.envelope, kind)
        rep = axiom_suite(fam, ctx.tree, seed=ctx.seed, trials=trials, tol=tol)
        reports.append(rep.as_dict())
        violations = sum(rep.violations.values())
        residuals[f"{kind}_violations"] = {"value": violations, "tol": 0, "ok": violations == 0}
    write_json(ctx.path("axioms.json"), {"seed": ctx.seed, "trials": trials, "reports": reports})
    return residuals, {"trials": trials}


def _time_consistent(envelope) -> bool:
    return isinstance(envelope, (KernelEnvelope, ReferenceEnvelope))


def task_consistency(ctx: Context, params):
    tol = params.get("tol", 1e-9)
    N = ctx.tree.steps
    rng = np.random.default_rng(ctx.seed)
    payoffs = [ctx.terminal_wealth()] + [rng.standard_normal(ctx.tree.leaves)
                                         for _ in range(params.get("payoffs", 20))]
    pairs = []
    c3 = d3 = 0.0
    for s in range(N + 1):
        for t in range(s, N + 1):
            reps = [time_consistency_check(ctx.tree, ctx.envelope, X, s, t) for X in payoffs]
            pc, pd = max(r.c3_max for r in reps), max(r.d3_max for r in reps)
            pairs.append({"s": s, "t": t, "c3_max": pc, "d3_max": pd})
            c3, d3 = max(c3, pc), max(d3, pd)
    asserted = _time_consistent(ctx.envelope)
    write_json(ctx.path("consistency.json"), {"asserted": asserted, "tol": tol, "payoffs": len(payoffs),
                                              "c3_max": c3, "d3_max": d3, "pairs": pairs})
    residuals = {}
    if asserted:
        _check(residuals, "c3", c3, tol)
        _check(residuals, "d3", d3, tol)
    return residuals, {"c3_max": c3, "d3_max": d3, "asserted": asserted}


def task_bsde_mc(ctx: Context, params):
    env = ctx.envelope
    if not isinstance(env, KernelEnvelope):
        raise ConfigError("envelope.type", "bsde-mc needs a kernel envelope (kappa or interval)")
    steps = params.get("steps", 50)
    paths = params.get("paths", 100_000)
    scale = float(params.get("scale", 1.0))
    T = ctx.tree.horizon
    ens = simulate_paths(ctx.seed, steps, paths, T, antithetic=params.get("antithetic", True))
    res = solve_mc(ens, lambda B: -scale * B[:, -1], env.driver,
                   RegressionBasis(params.get("degree", 2)), batches=params.get("batches", 20))
    out = {"steps": steps, "paths": paths, "degree": params.get("degree", 2), "seed": ctx.seed,
           "payoff": f"{scale} * B_T", **res.as_dict()}
    residuals = {}
    ks = env.kernels
    lo, hi = ks.lo, ks.hi
    if np.ndim(lo) == 0 and np.ndim(hi) == 0:
        ref = T * max(-scale * lo, -scale * hi)
        err = abs(res.y0 - ref)
        out.update(reference=ref, abs_error=err)
        rel_tol = params.get("rel_tol", 0.01)
        if ref != 0:
            _check(residuals, "relative_error", err / abs(ref), rel_tol)
        _check(residuals, "error_in_stderr", err / res.stderr if res.stderr > 0 else 0.0,
               params.get("se_tol", 3.0))
    write_json(ctx.path("bsde_mc.json"), out)
    return residuals, {"y0": res.y0, "stderr": res.stderr}


def _per_level_constant(levels):
    return all(np.ptp(v) == 0 for v in levels)


def task_example_kappa(ctx: Context, params):
    env = ctx.envelope
    if ctx.config["envelope"]["type"] != "kappa":
        raise ConfigError("envelope.type", "example-kappa needs a kappa envelope")
    kappa = float(ctx.config["envelope"]["params"]["kappa"])
    tol = params.get("tol", 1e-9)
    tree, N = ctx.tree, ctx.tree.steps
    X = ctx.terminal_wealth()
    C = [coherent(tree, X, env, t).values for t in range(N + 1)]
    D = [deviation(tree, X, env, t, validate=False).values for t in range(N + 1)]
    residuals, values = {}, {"C_0": float(C[0][0]), "D_0": float(D[0][0]), "kappa": kappa}

    corr = max(float(np.max(np.abs(C[t] - D[t] - cond_expectation(tree, -X, t)))) for t in range(N + 1))
    _check(residuals, "correspondence", corr, tol)

    us = [(ctx.policy.at(k) * ctx.model.diffusion_at(tree, k)).sum(axis=1) for k in range(N)]
    b = [ctx.model.drift_at(tree, k) for k in range(N)]
    closed = _per_level_constant(us) and all(not np.any(v) for v in b)
    values["closed_form_applicable"] = closed
    if closed:
        # D_t = kappa E_t int |u.sigma| dt with a level-deterministic volatility
        tail = np.cumsum([kappa * abs(u[0]) * tree.dt for u in us][::-1])[::-1]
        tail = np.append(tail, 0.0)
        _check(residuals, "closed_form", max(float(np.max(np.abs(D[t] - tail[t]))) for t in range(N + 1)), tol)
        Z = [z for z in _solution_Z(tree, X, env)]
        _check(residuals, "z_closed_form", max(float(np.max(np.abs(Z[k] + us[k]))) for k in range(N)), tol)
        w = RecorderWeights((PredictableProcess.constant(tree, kappa), PredictableProcess.constant(tree, -kappa)))
        rec = max(float(np.max(np.abs(volatility_recorder(tree, X, w, t) - D[t]))) for t in range(N))
        _check(residuals, "recorder", rec, tol)

    agg_c = agg_d = zres = 0.0
    for t in range(N):
        rep = marginal_and_total_contributions(tree, ctx.model, ctx.policy, env, t)
        s = rep.residual_summary()
        agg_c = max(agg_c, s["coherent_aggregation"])
        agg_d = max(agg_d, s["deviation_aggregation"])
        if closed:
            zres = max(zres, z_identity_check(tree, ctx.model, ctx.policy, env, t).as_dict()["residual"])
    _check(residuals, "coherent_aggregation", agg_c, tol)
    _check(residuals, "deviation_aggregation", agg_d, tol)
    if closed:
        _check(residuals, "z_identity", zres, tol)
    tc = max(max(r.c3_max, r.d3_max) for r in
             (time_consistency_check(tree, env, X, s, t) for s in range(N + 1) for t in range(s, N + 1)))
    _check(residuals, "time_consistency", tc, tol)

    times = tree.times()
    write_csv(ctx.path("example_kappa.csv"), ("kind", "level", "node", "value"),
              [(kind, t, i, v) for kind, vals in (("coherent", C), ("deviation", D))
               for t in range(N + 1) for i, v in enumerate(vals[t])])
    emit_plot({"mean D_t": (times, [float(np.mean(d)) for d in D])}, ctx.path("kappa_deviation.svg"),
              title="kappa-ignorance: mean deviation path", ylabel="D_t")
    return residuals, values


def _solution_Z(tree, X, env):
    from .bsde import solve_tree
    return solve_tree(tree, -X, env.driver).Z


def task_stddev(ctx: Context, params):
    w = params.get("weights", [1.0, 1.0])
    L = params.get("covariance", np.eye(len(w)).tolist())
    try:
        port = StaticPortfolio(np.asarray(w, dtype=float), np.asarray(L, dtype=float))
    except ValueError as exc:
        raise ConfigError("tasks.params.covariance", str(exc)) from None
    total, marg, contrib = static_stddev_contribution(port)
    rows = [(i, port.weights[i], marg[i], contrib[i]) for i in range(port.weights.size)]
    write_csv(ctx.path("stddev.csv"), ("asset", "weight", "marginal", "contribution"), rows)
    residuals = {}
    _check(residuals, "euler_identity", abs(contrib.sum() - total) / total, params.get("tol", 1e-12))
    return residuals, {"total": total, "contributions": contrib}


RUNNERS = {"measure": task_measure, "deviation": task_deviation, "contrib": task_contrib,
           "axioms": task_axioms, "consistency": task_consistency, "bsde-mc": task_bsde_mc,
           "example-kappa": task_example_kappa, "stddev": task_stddev}


def _error(kind, exc, field=None):
    rec = {"type": kind, "message": str(exc)}
    if field is not None:
        rec["field"] = field
    return rec


def _fallback_out(config_path, out):
    if out:
        return Path(out)
    try:
        raw = json.loads(Path(config_path).read_text())
        if isinstance(raw, dict) and isinstance(raw.get("output_dir"), str) and raw["output_dir"]:
            return Path(config_path).parent / raw["output_dir"]
    except (OSError, ValueError):
        pass
    return Path(config_path).parent


def run(config_path, command: str, out=None, seed: int | None = None, trials: int | None = None,
        timings: bool = False) -> int:
    """Execute ``command`` for the config at ``config_path``; returns the exit status."""
    report = {"command": command, "status": "ok", "tasks": [], "files": []}
    out_dir = None
    try:
        config = load_config(config_path)
        out_dir = Path(out) if out else Path(config_path).parent / config["output_dir"]
        out_dir.mkdir(parents=True, exist_ok=True)
        seed = config["seed"] if seed is None else seed
        report["config"] = config
        report["seed"] = seed
        ctx = Context(config, out_dir, seed, trials)
    except ConfigError as exc:
        report.update(status="config_error", error=_error("schema", exc.message, exc.field))
        return _finish(report, out_dir or _fallback_out(config_path, out), EXIT_CONFIG, [])
    except CapacityError as exc:
        report.update(status="capacity_error", error=_error("capacity", exc))
        return _finish(report, out_dir or _fallback_out(config_path, out), EXIT_CAPACITY, [])
    except (OSError, ValueError) as exc:
        report.update(status="config_error", error=_error("config", exc))
        return _finish(report, out_dir or _fallback_out(config_path, out), EXIT_CONFIG, [])

    if command == "run":
        names = task_names(config)
        if "measure" in names and "deviation" in names:
            names.remove("deviation")
    else:
        names = [command]
    code = EXIT_OK
    for name in names:
        entry = {"task": name}
        start = time.perf_counter()
        try:
            residuals, values = RUNNERS[name](ctx, task_params(config, name))
            ok = all(r["ok"] for r in residuals.values())
            entry.update(status="ok" if ok else "residual_failure", residuals=residuals, values=values)
            if not ok:
                code = max(code, EXIT_RESIDUAL)
        except ConfigError as exc:
            entry.update(status="config_error", error=_error("schema", exc.message, exc.field))
            code = EXIT_CONFIG
        except CapacityError as exc:
            entry.update(status="capacity_error", error=_error("capacity", exc))
            code = EXIT_CAPACITY
        except ValueError as exc:
            entry.update(status="error", error=_error("value", exc))
            code = max(code, EXIT_RESIDUAL)
        if timings:
            entry["seconds"] = time.perf_counter() - start
        report["tasks"].append(entry)
        if code in (EXIT_CONFIG, EXIT_CAPACITY):
            break
    report["status"] = {EXIT_OK: "ok", EXIT_RESIDUAL: "residual_failure",
                        EXIT_CONFIG: "config_error", EXIT_CAPACITY: "capacity_error"}[code]
    return _finish(report, out_dir, code, ctx.files)


def _finish(report, out_dir: Path, code: int, files) -> int:
    report["exit_status"] = code
    report["files"] = sorted(set(files) | {"report.json"})
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(out_dir / "report.json", report)
    except OSError as exc:
        print(f"cannot write report: {exc}", file=sys.stderr)
    if "error" in report:
        print(f"error: {report['error']['message']}" +
              (f" (field {report['error']['field']})" if "field" in report["error"] else ""), file=sys.stderr)
    for entry in report["tasks"]:
        if entry["status"] != "ok":
            detail = entry.get("error", {}).get("message") or ", ".join(
                k for k, r in entry.get("residuals", {}).items() if not r["ok"])
            print(f"{entry['task']}: {entry['status']}: {detail}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="riskcontrib", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=list(TASKS) + ["run"])
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", help="output directory (default: config output_dir)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--trials", type=int, help="override the axiom trial count")
    parser.add_argument("--timings", action="store_true",
                        help="record wall-clock seconds per task in report.json (breaks byte-identical reruns)")
    args = parser.parse_args(argv)
    return run(args.config, args.command, args.out, args.seed, args.trials, args.timings)


if __name__ == "__main__":
    sys.exit(main())
