"""Command-line front end: run, sweep, check and validate.

Exit codes: 0 success, 1 a check failed, 2 invalid configuration or missing
artifacts, 3 the simulation stopped early (artifacts are kept and flagged).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, SimConfig, build, build_problem, errors, load_config, resolve, validate
from .dynamics import AlgorithmParams, NetworkState
from .integrate import Trajectory
from .simulate import decision_block, simulate

log = logging.getLogger("spsgf")

MANIFEST_VERSION = 1
_BLOCK_COLUMNS = (("x", "x"), ("v", "v"), ("y", "y"), ("z", "z"), ("lam", "lambda"), ("mu", "mu"))
_COL = re.compile(r"^([A-Za-z_]+)((?:\[\d+\])*)$")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _indexed(name: str, arr: np.ndarray) -> list[str]:
    if arr.ndim == 1:
        return [f"{name}[{k}]" for k in range(arr.shape[0])]
    return [f"{name}[{i}][{d}]" for i in range(arr.shape[0]) for d in range(arr.shape[1])]


def state_columns(state: NetworkState) -> list[str]:
    cols = []
    for attr, name in _BLOCK_COLUMNS:
        arr = getattr(state, attr)
        if arr.size:
            cols += _indexed(name, arr)
    return cols


def write_trajectory_csv(path: Path, traj: Trajectory) -> int:
    """``t``, state blocks, then ``g[k]``, ``h[l]``, ``snorm``, ``obj``; returns the row count."""
    first, d0 = traj.states[0], traj.diagnostics[0]
    header = ["t"] + state_columns(first) + _indexed("g", d0["g"]) + _indexed("h", d0["h"]) + ["snorm", "obj"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, s, d in zip(traj.times, traj.states, traj.diagnostics):
            row = [_fmt(t)]
            for attr, _ in _BLOCK_COLUMNS:
                arr = getattr(s, attr)
                row += [_fmt(v) for v in arr.ravel()]
            row += [_fmt(v) for v in d["g"]] + [_fmt(v) for v in d["h"]] + [_fmt(d["snorm"]), _fmt(d["obj"])]
            w.writerow(row)
    return len(traj.times)


def write_diagnostics_csv(path: Path, traj: Trajectory) -> None:
    """Per-step monitor output beyond the aggregate constraint values."""
    d0 = traj.diagnostics[0]
    keys = [k for k in ("active", "phi", "chi") if k in d0]
    scalars = [k for k in ("descent", "descent_bound", "snorm", "obj") if k in d0]
    header = ["t"]
    for k in keys:
        header += _indexed(k, np.asarray(d0[k]))
    header += scalars
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, d in zip(traj.times, traj.diagnostics):
            row = [_fmt(t)]
            for k in keys:
                row += [_fmt(v) for v in np.asarray(d[k], dtype=float).ravel()]
            row += [_fmt(d[k]) for k in scalars]
            w.writerow(row)


def write_columns_csv(path: Path, columns: dict) -> None:
    names = list(columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*(columns[n] for n in names)):
            w.writerow([_fmt(v) for v in row])


def read_trajectory_csv(path: Path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Times and a mapping from column group name to ``(T, ...)`` arrays."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    header, data = rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))
    groups: dict[str, list] = {}
    for c, name in enumerate(header):
        m = _COL.match(name)
        if not m:
            raise ValueError(f"unexpected column {name!r}")
        idx = tuple(int(i) for i in re.findall(r"\d+", m.group(2)))
        groups.setdefault(m.group(1), []).append((idx, c))
    out = {}
    for name, entries in groups.items():
        if entries[0][0] == ():
            out[name] = data[:, entries[0][1]]
            continue
        shape = tuple(max(e[0][k] for e in entries) + 1 for k in range(len(entries[0][0])))
        arr = np.empty((data.shape[0],) + shape)
        for idx, c in entries:
            arr[(slice(None),) + idx] = data[:, c]
        out[name] = arr
    return out.pop("t"), out


def trajectory_from_csv(path: Path, problem) -> Trajectory:
    times, cols = read_trajectory_csv(path)
    T = times.size
    N = problem.num_agents

    def blk(name, default_shape):
        return cols[name] if name in cols else np.zeros((T,) + default_shape)

    states = [
        NetworkState(blk("x", (N, 0))[k], blk("v", (0,))[k], blk("y", (0,))[k], blk("z", (0,))[k],
                     blk("lambda", (0,))[k], blk("mu", (0,))[k])
        for k in range(T)
    ]
    return Trajectory(times, states)


# running


def observed_bounds(traj: Trajectory) -> dict:
    """Per-block ``[min, max]`` over the recorded states (empirical reachable sets)."""
    out = {}
    for attr, name in _BLOCK_COLUMNS:
        if len(traj) and getattr(traj.states[0], attr).size:
            B = traj.block(attr)
            out[name] = [float(B.min()), float(B.max())]
    return out


def execute(sim: SimConfig, outdir: Path | None = None) -> tuple[Trajectory, dict]:
    """Simulate and write ``trajectory.csv``, ``diagnostics.csv`` and ``manifest.json``."""
    outdir = Path(outdir or sim.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    traj = simulate(sim.problem, sim.algorithm, sim.params, sim.initial, sim.integrator,
                    detailed=sim.algorithm == "sp-sgf")
    wall = time.perf_counter() - t0
    rows = write_trajectory_csv(outdir / "trajectory.csv", traj) if len(traj) else 0
    if len(traj):
        write_diagnostics_csv(outdir / "diagnostics.csv", traj)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "version": __version__,
        "numpy": np.__version__,
        "config": sim.resolved,
        "wall_time_s": wall,
        "rows": rows,
        "expected_rows": sim.integrator.num_steps // sim.integrator.record_every + 1,
        "truncated": not traj.ok,
        "error": traj.error,
        "artifacts": ["trajectory.csv", "diagnostics.csv"] if rows else [],
        "observed_bounds": observed_bounds(traj),
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return traj, manifest


def summary_series(traj: Trajectory, algorithm: str) -> tuple[dict, dict]:
    """Squared-coordinate sums and aggregate constraint values per recorded time."""
    X = traj.block(decision_block(algorithm))
    sums = {"t": traj.times}
    for d in range(X.shape[2]):
        sums[f"sum_sq_x[{d}]"] = (X[:, :, d] ** 2).sum(axis=1)
    cons = {"t": traj.times}
    g, h = traj.diag("g"), traj.diag("h")
    for k in range(g.shape[1]):
        cons[f"g[{k}]"] = g[:, k]
    for l in range(h.shape[1]):
        cons[f"h[{l}]"] = h[:, l]
    return sums, cons


def _sweep_job(cfg: dict) -> dict:
    sim = build(cfg)
    traj, manifest = execute(sim)
    if len(traj):
        sums, cons = summary_series(traj, sim.algorithm)
        write_columns_csv(sim.output_dir / "squares.csv", sums)
        write_columns_csv(sim.output_dir / "constraints.csv", cons)
    return {"algorithm": sim.algorithm, "tau": sim.params.tau, "dir": str(sim.output_dir),
            "truncated": manifest["truncated"], "error": manifest["error"], "wall_time_s": manifest["wall_time_s"]}


def sweep_configs(cfg: dict, taus, algorithms) -> list[dict]:
    """One resolved config per (algorithm, tau), each with its own output directory."""
    base = Path(cfg["output"]["dir"])
    out = []
    for alg in algorithms:
        for tau in taus:
            c = json.loads(json.dumps(cfg))
            c["algorithm"] = alg
            c["params"]["tau"] = float(tau)
            c["output"]["dir"] = str(base / alg / f"tau_{float(tau):g}")
            c.pop("sweep", None)
            out.append(c)
    return out


# checks


def evaluate_checks(names, cfg: dict, traj: Trajectory | None, seed: int = 0) -> list[dict]:
    """One machine-readable record per check with ``passed`` and measured values."""
    from . import verify
    from .graph import lift_feasible_point
    from .problem import RegularizedProblem, is_feasible

    problem = build_problem(cfg)
    params = AlgorithmParams(**{k: float(cfg["params"][k]) for k in ("tau", "epsilon", "alpha")})
    opts = cfg.get("checks") if isinstance(cfg.get("checks"), dict) else {}
    records = []
    oracle = None

    def get_oracle():
        nonlocal oracle
        if oracle is None:
            oracle = verify.solve_centralized(problem, params.epsilon, on_reformulation=True)
        return oracle

    for name in names:
        o = (opts or {}).get(name) or {}
        if name in ("anytime", "convergence") and traj is None:
            records.append({"check": name, "passed": False, "error": "needs a trajectory"})
            continue
        if name == "anytime":
            rec = verify.certify_anytime(traj, problem, float(o.get("tol", 1e-4))).as_record()
        elif name == "convergence":
            rec = verify.convergence_report(traj, get_oracle(), float(o.get("delta", 1e-2))).as_record()
        elif name == "oracle":
            sol = get_oracle()
            feas = is_feasible(problem, sol.x_star, 1e-8)
            rec = {"check": name, "passed": sol.kkt_residual < verify.KKT_TOL and feas,
                   "kkt_residual": sol.kkt_residual}
        elif name == "licq":
            rec = {"check": name, "passed": verify.check_licq(problem, get_oracle().x_star)}
        elif name == "sensitivity":
            eps = [float(e) for e in o.get("eps", [1e-2, 1e-3, 1e-4])]
            sweep = verify.sensitivity_sweep(problem, eps)
            d = [v for _, v in sweep]
            bound = float(o.get("bound", 1e-3))
            rec = {"check": name, "passed": all(b < a for a, b in zip(d, d[1:])) and d[-1] < bound,
                   "distances": dict((str(e), v) for e, v in sweep), "bound": bound}
        elif name == "equilibrium":
            sol = get_oracle()
            res = verify.check_equilibrium(problem, params, sol)
            pert = verify.perturbed_residuals(problem, params, sol, seed=seed)
            rec = {"check": name, "passed": res < 1e-6 and bool(np.all(pert > 1e-4)),
                   "residual": res, "min_perturbed_residual": float(pert.min())}
        elif name == "lift":
            rng = np.random.default_rng(seed)
            worst = 0.0
            reg = RegularizedProblem(problem, params.epsilon)
            for _ in range(int(o.get("count", 20))):
                x0 = verify.project_feasible(problem, 2.0 * rng.normal(size=(problem.num_agents, problem.agent_dim)))
                y, z = lift_feasible_point(problem, x0, tol=1e-8)
                G, H = reg.local_constraints(x0, y, z)
                worst = max(worst, float(np.max(G, initial=0.0)), float(np.max(np.abs(H), initial=0.0)))
            rec = {"check": name, "passed": worst <= 1e-8, "max_violation": worst}
        else:
            rec = {"check": name, "passed": False, "error": "unknown check"}
        records.append(rec)
    return records


def _print_records(records, stream=None):
    stream = stream or sys.stdout
    for rec in records:
        status = "PASS" if rec.get("passed") else "FAIL"
        detail = ", ".join(f"{k}={_short(v)}" for k, v in rec.items() if k not in ("check", "passed"))
        print(f"{status}  {rec['check']:<12} {detail}", file=stream)


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k}: {_short(x)}" for k, x in v.items()) + "}"
    return str(v)


# argument handling


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spsgf", description="Distributed anytime network optimization dynamics.")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in ("run", "sweep", "check", "validate"):
        p = sub.add_parser(verb)
        p.add_argument("--config", type=Path, help="YAML config or run manifest")
        p.add_argument("--preset", choices=["paper-example"])
        p.add_argument("--algorithm")
        p.add_argument("--tau", type=float)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--dt", type=float)
        p.add_argument("--horizon", type=float)
        p.add_argument("--out", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
        if verb == "sweep":
            p.add_argument("--taus", type=float, nargs="+", help="time-scale values (default 0.1 1 10)")
            p.add_argument("--algorithms", nargs="+", help="algorithms to compare (default: the configured one)")
            p.add_argument("--jobs", type=int, default=1)
        if verb == "check":
            p.add_argument("--run", type=Path, help="directory of a finished run")
            p.add_argument("--checks", nargs="+", help="checks to run (default: from config)")
    return ap


def _overrides(args) -> dict:
    ov: dict = {}
    if args.algorithm:
        ov["algorithm"] = args.algorithm
    for name in ("tau", "epsilon", "alpha"):
        if getattr(args, name) is not None:
            ov.setdefault("params", {})[name] = getattr(args, name)
    for name in ("dt", "horizon"):
        if getattr(args, name) is not None:
            ov.setdefault("integrator", {})[name] = getattr(args, name)
    if args.out is not None:
        ov["output"] = {"dir": str(args.out)}
    if args.seed is not None:
        ov["seed"] = args.seed
    return ov


def _config_from_args(args) -> dict:
    raw = load_config(args.config) if args.config else None
    if raw is None and args.preset is None:
        raise ConfigError("give --config or --preset")
    return resolve(raw, args.preset, _overrides(args))


def _report_violations(violations) -> None:
    for v in violations:
        print(str(v), file=sys.stderr)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.verb == "check" and args.run is not None:
        return _check_run(args)
    try:
        cfg = _config_from_args(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    if args.verb == "validate":
        vs = validate(cfg)
        _report_violations(vs)
        if not vs:
            print("config OK")
        return EXIT_INVALID if errors(vs) else EXIT_OK

    vs = validate(cfg)
    _report_violations(vs)
    if errors(vs):
        return EXIT_INVALID

    if args.verb == "run":
        sim = build(cfg)
        traj, manifest = execute(sim)
        print(f"wrote {manifest['rows']} rows to {sim.output_dir / 'trajectory.csv'} "
              f"in {manifest['wall_time_s']:.2f}s")
        if manifest["truncated"]:
            print(f"error: {manifest['error']}", file=sys.stderr)
            return EXIT_RUNTIME
        return EXIT_OK

    if args.verb == "sweep":
        taus = args.taus or (cfg.get("sweep") or {}).get("tau") or [0.1, 1.0, 10.0]
        algs = args.algorithms or (cfg.get("sweep") or {}).get("algorithms") or [cfg["algorithm"]]
        cfgs = sweep_configs(cfg, taus, algs)
        for c in cfgs:
            bad = errors(validate(c))
            if bad:
                _report_violations(bad)
                return EXIT_INVALID
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_sweep_job, cfgs))
        else:
            results = [_sweep_job(c) for c in cfgs]
        summary = Path(cfg["output"]["dir"]) / "sweep.json"
        summary.parent.mkdir(parents=True, exist_ok=True)
        summary.write_text(json.dumps(results, indent=2) + "\n", encoding="utf-8")
        for r in results:
            flag = "truncated" if r["truncated"] else "ok"
            print(f"{r['algorithm']:<16} tau={r['tau']:<8g} {flag:<10} {r['dir']}")
        return EXIT_RUNTIME if any(r["truncated"] for r in results) else EXIT_OK

    # check without a finished run: simulate in memory when a trajectory check is requested
    names = args.checks or _check_names(cfg)
    traj = None
    if any(n in ("anytime", "convergence") for n in names):
        sim = build(cfg)
        traj = simulate(sim.problem, sim.algorithm, sim.params, sim.initial, sim.integrator)
    return _finish_checks(names, cfg, traj, Path(cfg["output"]["dir"]), int(cfg.get("seed", 0)))


def _check_names(cfg) -> list[str]:
    checks = cfg.get("checks") or []
    return list(checks) if isinstance(checks, (list, dict)) else [checks]


def _check_run(args) -> int:
    run_dir = args.run
    try:
        manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
        cfg = manifest["config"]
        problem = build_problem(cfg)
        traj = trajectory_from_csv(run_dir / "trajectory.csv", problem)
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: missing or unreadable run artifacts in {run_dir}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    names = args.checks or _check_names(cfg) or ["anytime"]
    return _finish_checks(names, cfg, traj, run_dir, int(args.seed if args.seed is not None else cfg.get("seed", 0)))


def _finish_checks(names, cfg, traj, outdir: Path, seed: int) -> int:
    records = evaluate_checks(names, cfg, traj, seed)
    _print_records(records)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.json").write_text(json.dumps(records, indent=2, default=float) + "\n", encoding="utf-8")
    return EXIT_OK if all(r.get("passed") for r in records) else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
