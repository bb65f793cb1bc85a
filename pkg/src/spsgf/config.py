"""Declarative run configuration: loading, presets, validation and object building.

Configs are YAML mappings. Any mapping holding an ``include`` key is replaced by
the file it points to (resolved relative to the including file) with the
remaining keys layered on top. A run manifest is itself a valid config.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .dynamics import AlgorithmParams, NetworkState
from .integrate import SCHEMES, IntegratorConfig
from .problem import is_feasible, problem_from_spec
from .simulate import ALGORITHMS, example_initial_state

TOP_KEYS = ("problem", "graph", "algorithm", "params", "integrator", "initial", "output", "checks", "sweep", "seed")
CHECKS = ("anytime", "convergence", "oracle", "licq", "sensitivity", "equilibrium", "lift")
INITIAL_BLOCKS = ("x", "v", "y", "z", "lam", "mu")

DEFAULTS: dict[str, Any] = {
    "algorithm": "sp-sgf",
    "params": {"tau": 1.0, "epsilon": 1e-4, "alpha": 1.0},
    "integrator": {"scheme": "explicit-euler", "dt": 1e-3, "horizon": 10.0, "record_every": 1},
    "initial": {},
    "output": {"dir": "out"},
    "checks": [],
    "seed": 0,
}

PRESETS: dict[str, dict[str, Any]] = {
    "paper-example": {
        "problem": {"family": "resource_allocation", "graph": "line"},
        "algorithm": "sp-sgf",
        "params": {"tau": 1.0, "epsilon": 1e-4, "alpha": 1.0},
        "integrator": {"scheme": "explicit-euler", "dt": 1e-3, "horizon": 100.0, "record_every": 100},
        "initial": {"preset": "paper-example"},
        "checks": ["anytime", "convergence"],
    },
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Violation:
    field: str
    message: str
    severity: str = "error"

    def __str__(self):
        tag = "warning: " if self.severity == "warning" else ""
        return f"{tag}{self.message}"


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _resolve_includes(node, base_dir: Path, seen: tuple = ()):
    if isinstance(node, list):
        return [_resolve_includes(v, base_dir, seen) for v in node]
    if not isinstance(node, dict):
        return node
    node = dict(node)
    if "include" in node:
        path = (base_dir / str(node.pop("include"))).resolve()
        if path in seen:
            raise ConfigError(f"include cycle through {path}")
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read included file {path}: {exc.strerror}") from None
        loaded = yaml.safe_load(text) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"included file {path} must hold a mapping")
        inner = _resolve_includes(loaded, path.parent, seen + (path,))
        node = _merge(inner, node)
    return {k: _resolve_includes(v, base_dir, seen) for k, v in node.items()}


def load_config(path) -> dict:
    """Read a YAML config (or run manifest) and resolve includes."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    if "config" in raw and "manifest_version" in raw:
        raw = raw["config"]
    return _resolve_includes(raw, path.parent.resolve())


def resolve(raw: dict | None = None, preset: str | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then preset, then file contents, then command-line overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
        cfg = _merge(cfg, PRESETS[preset])
    if raw:
        cfg = _merge(cfg, raw)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def _to_plain(obj):
    if isinstance(obj, dict):
        return {str(k): _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass
class SimConfig:
    """Fully built run: problem, algorithm, parameters, integrator, initial state."""

    problem: Any
    algorithm: str
    params: AlgorithmParams
    integrator: IntegratorConfig
    initial: NetworkState
    output_dir: Path
    checks: list = field(default_factory=list)
    raw: dict = field(default_factory=dict)

    @property
    def resolved(self) -> dict:
        return _to_plain(self.raw)


def build_problem(cfg: dict):
    spec = cfg.get("problem")
    if spec is None:
        raise ConfigError("problem: missing problem description")
    if not isinstance(spec, dict):
        raise ConfigError("problem: must be a mapping")
    spec = dict(spec)
    if cfg.get("graph") is not None:
        spec["graph"] = cfg["graph"]
    return problem_from_spec(spec)


def build_initial(problem, algorithm: str, spec: dict, seed: int = 0) -> NetworkState:
    spec = dict(spec or {})
    preset = spec.pop("preset", None)
    if preset == "paper-example":
        state = example_initial_state(problem, algorithm)
    elif preset == "feasible-random":
        from .verify import random_feasible_start

        rng = np.random.default_rng(int(spec.pop("seed", seed)))
        st = random_feasible_start(problem, rng, float(spec.pop("scale", 0.5)))
        state = NetworkState.for_problem(problem, x0=st.x, y0=st.y, z0=st.z, algorithm=algorithm)
    elif preset is None:
        kw = {f"{k}0": spec.pop(k) for k in INITIAL_BLOCKS if k in spec}
        state = NetworkState.for_problem(problem, algorithm=algorithm, **kw)
    else:
        raise ConfigError(f"initial.preset: unknown preset {preset!r}")
    if spec:
        raise ConfigError(f"initial: unknown keys {sorted(spec)}")
    return state


def _positive(cfg, section, name, out):
    val = cfg.get(section, {}).get(name)
    try:
        ok = float(val) > 0
    except (TypeError, ValueError):
        ok = False
    if not ok:
        out.append(Violation(f"{section}.{name}", f"{section}.{name} must be > 0"))


def validate(cfg: dict) -> list[Violation]:
    """Every problem with a resolved config; an empty list means nothing to report.

    Items with ``severity == "warning"`` do not block a run.
    """
    out: list[Violation] = []
    try:
        if not isinstance(cfg, dict):
            return [Violation("", "config must be a mapping")]
        for k in cfg:
            if k not in TOP_KEYS:
                out.append(Violation(k, f"{k}: unknown setting"))
        algorithm = cfg.get("algorithm")
        if algorithm not in ALGORITHMS:
            out.append(Violation("algorithm", f"algorithm must be one of {list(ALGORITHMS)}"))
        for name in ("tau", "epsilon", "alpha"):
            _positive(cfg, "params", name, out)
        integ = cfg.get("integrator", {}) or {}
        before = len(out)
        if integ.get("scheme") not in SCHEMES:
            out.append(Violation("integrator.scheme", f"integrator.scheme must be one of {list(SCHEMES)}"))
        _positive(cfg, "integrator", "dt", out)
        _positive(cfg, "integrator", "horizon", out)
        every = integ.get("record_every")
        if not isinstance(every, int) or isinstance(every, bool) or every < 1:
            out.append(Violation("integrator.record_every", "integrator.record_every must be an integer >= 1"))
        if len(out) == before:
            try:
                ic = IntegratorConfig(integ["scheme"], float(integ["dt"]), float(integ["horizon"]), int(every))
                ratio = ic.horizon / ic.dt
                if abs(ratio - round(ratio)) > 1e-9 * max(ratio, 1.0):
                    out.append(Violation("integrator.horizon", "integrator.horizon must be a multiple of dt"))
                elif ic.num_steps % ic.record_every:
                    out.append(Violation("integrator.record_every",
                                         "integrator.record_every must divide the number of steps"))
            except (ValueError, TypeError, KeyError) as exc:
                out.append(Violation("integrator", str(exc)))
        checks = cfg.get("checks") or []
        if isinstance(checks, dict):
            checks = list(checks)
        for c in checks:
            if c not in CHECKS:
                out.append(Violation("checks", f"checks: unknown check {c!r}; known: {list(CHECKS)}"))
        outdir = (cfg.get("output") or {}).get("dir")
        if not isinstance(outdir, str) or not outdir:
            out.append(Violation("output.dir", "output.dir must be a nonempty path"))

        try:
            problem = build_problem(cfg)
        except (ConfigError, ValueError, KeyError, TypeError) as exc:
            msg = str(exc)
            out.append(Violation("problem", msg if msg.startswith("problem") else f"problem: {msg}"))
            return out
        if algorithm in ALGORITHMS:
            try:
                state = build_initial(problem, algorithm, cfg.get("initial"), int(cfg.get("seed", 0)))
            except (ConfigError, ValueError, KeyError, TypeError, RuntimeError) as exc:
                msg = str(exc)
                out.append(Violation("initial", msg if msg.startswith("initial") else f"initial: {msg}"))
                return out
            if algorithm in ("sp-sgf", "centralized-sgf") and not is_feasible(problem, state.x, 1e-9):
                out.append(Violation(
                    "initial.x",
                    "initial.x violates the original constraints; the anytime guarantee requires a feasible start",
                    severity="warning",
                ))
    except Exception as exc:  # validation never raises
        out.append(Violation("", f"invalid config: {exc}"))
    return out


def errors(violations) -> list[Violation]:
    return [v for v in violations if v.severity == "error"]


def build(cfg: dict) -> SimConfig:
    """Build a runnable configuration; raises ConfigError listing the blocking violations."""
    bad = errors(validate(cfg))
    if bad:
        raise ConfigError("; ".join(str(v) for v in bad))
    problem = build_problem(cfg)
    integ = cfg["integrator"]
    checks = cfg.get("checks") or []
    return SimConfig(
        problem=problem,
        algorithm=cfg["algorithm"],
        params=AlgorithmParams(**{k: float(cfg["params"][k]) for k in ("tau", "epsilon", "alpha")}),
        integrator=IntegratorConfig(integ["scheme"], float(integ["dt"]), float(integ["horizon"]),
                                    int(integ["record_every"])),
        initial=build_initial(problem, cfg["algorithm"], cfg.get("initial"), int(cfg.get("seed", 0))),
        output_dir=Path(cfg["output"]["dir"]),
        checks=list(checks),
        raw=copy.deepcopy(cfg),
    )
