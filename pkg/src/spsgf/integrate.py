"""Fixed-step integration of the projected vector fields."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import NetworkState
from .localqp import QpError

log = logging.getLogger(__name__)

SCHEMES = ("explicit-euler", "rk4-with-projection")

Field = Callable[[NetworkState], NetworkState]
Monitor = Callable[[NetworkState, NetworkState], dict]


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "explicit-euler"
    dt: float = 1e-3
    horizon: float = 10.0
    record_every: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"integrator.scheme must be one of {SCHEMES}")
        if not self.dt > 0:
            raise ValueError("integrator.dt must be > 0")
        if not self.horizon > self.dt:
            raise ValueError("integrator.horizon must exceed dt")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ValueError("integrator.record_every must be an integer >= 1")

    @property
    def num_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class Trajectory:
    times: np.ndarray
    states: list[NetworkState]
    diagnostics: list[dict] = field(default_factory=list)
    error: str | None = None
    error_step: int | None = None
    last_state: NetworkState | None = None

    def __len__(self):
        return len(self.states)

    @property
    def ok(self) -> bool:
        return self.error is None

    def block(self, name: str) -> np.ndarray:
        """Stack one state block over the recorded steps."""
        return np.stack([getattr(s, name) for s in self.states])

    def diag(self, name: str) -> np.ndarray:
        return np.array([d[name] for d in self.diagnostics])


def _euler(field_fn, state, dt, k1):
    return state.axpy(dt, k1).clamp_multipliers()


def _rk4(field_fn, state, dt, k1):
    k2 = field_fn(state.axpy(0.5 * dt, k1).clamp_multipliers())
    k3 = field_fn(state.axpy(0.5 * dt, k2).clamp_multipliers())
    k4 = field_fn(state.axpy(dt, k3).clamp_multipliers())
    return state.combine((dt / 6, dt / 3, dt / 3, dt / 6), (k1, k2, k3, k4)).clamp_multipliers()


def integrate(field_fn: Field, initial: NetworkState, cfg: IntegratorConfig,
              monitor: Monitor | None = None) -> Trajectory:
    """Integrate ``field_fn`` from ``initial`` over ``cfg.horizon``.

    The inequality multipliers are clamped to the nonnegative orthant after every
    step. ``monitor(state, derivative)`` is called on each recorded state.
    Failures do not raise: the returned trajectory is truncated, tagged with
    the error and keeps the last valid state.
    """
    stepper = _euler if cfg.scheme == "explicit-euler" else _rk4
    steps = cfg.num_steps
    every = int(cfg.record_every)
    state = initial.clamp_multipliers()
    times, states, diags = [], [], []
    error = error_step = None

    # overflow shows up below as a nonfinite state
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps + 1):
            try:
                deriv = field_fn(state)
            except QpError as exc:
                error, error_step = f"{type(exc).__name__} at t={k * cfg.dt:.6g}: {exc}", k
                if hasattr(exc, "time"):
                    exc.time = k * cfg.dt
                break
            if k % every == 0:
                times.append(k * cfg.dt)
                states.append(state)
                if monitor is not None:
                    diags.append(monitor(state, deriv))
            if k == steps:
                break
            try:
                nxt = stepper(field_fn, state, cfg.dt, deriv)
            except QpError as exc:
                error, error_step = f"{type(exc).__name__} at t={k * cfg.dt:.6g}: {exc}", k
                break
            if not nxt.is_finite():
                error, error_step = f"nonfinite state after step {k + 1}", k + 1
                break
            state = nxt

    if error:
        log.warning("integration stopped: %s", error)
    return Trajectory(np.array(times), states, diags, error, error_step, state)


def step_halving_check(field_fn: Field, initial: NetworkState, dt: float, T: float,
                       scheme: str = "explicit-euler",
                       extract: Callable[[NetworkState], np.ndarray] | None = None) -> float:
    """Observed convergence order from runs at ``dt``, ``dt/2`` and ``dt/4``.

    Returns ``log2(||u_dt - u_dt/2|| / ||u_dt/2 - u_dt/4||)`` for the endpoint
    ``u = extract(state(T))`` (all blocks by default); ``inf`` when the runs agree
    exactly.
    """
    extract = extract or (lambda s: np.concatenate([b.ravel() for b in s.blocks()]))
    ends = []
    for h in (dt, dt / 2, dt / 4):
        traj = integrate(field_fn, initial, IntegratorConfig(scheme, h, T, record_every=10**9))
        if not traj.ok:
            raise QpError(traj.error)
        ends.append(extract(traj.last_state))
    coarse = float(np.linalg.norm(ends[0] - ends[1]))
    fine = float(np.linalg.norm(ends[1] - ends[2]))
    if coarse == 0.0 and fine == 0.0:
        return math.inf
    if fine == 0.0:
        return math.inf
    return math.log2(coarse / fine)
