"""Runtime feedback law: bump-kernel interpolation of the stored value data
plus a derivative-free search for the control minimizing stage cost + value
of the next state."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import SystemDef, state_distance, step_forward
from .errors import ControllerStarvedError, InvalidParameterError
from .graph import Store

# Expected number of vertices inside the kernel support of a typical query
# under the store's average density; keeps the interpolation smooth without
# washing out the value landscape.
TARGET_SUPPORT_COUNT = 8.0

# simulate() declares divergence when a non-wrapped state axis leaves the
# bounds by more than this fraction of the axis extent.
DIVERGENCE_MARGIN = 0.25


@dataclass(frozen=True)
class InterpConfig:
    """Value interpolation settings: kernel scale and off-support policy.

    The kernel support radius is 1/gamma. ``fallback`` picks what happens
    when no vertex supports the query: 'nearest' returns the nearest
    finite-cost vertex's value, 'reject' returns +inf.
    """

    gamma: float
    fallback: str = "nearest"

    def __post_init__(self):
        if self.gamma <= 0:
            raise InvalidParameterError("gamma must be positive")
        if self.fallback not in ("nearest", "reject"):
            raise InvalidParameterError("fallback must be 'nearest' or 'reject'")

    @classmethod
    def for_store(cls, store: Store, fallback: str = "nearest") -> "InterpConfig":
        return cls(gamma=default_gamma(store), fallback=fallback)


def default_gamma(store: Store) -> float:
    """Density-adaptive kernel scale.

    Picks the support radius r so that a region of that radius holds
    TARGET_SUPPORT_COUNT vertices under the store's average density (sampled
    states cluster along expansion chains, so nearest-neighbor spacing
    statistics would undershoot badly). Returns gamma = 1 / r.
    """
    n_dim = store.system.n
    xb = store.system.state_bounds
    volume = float(np.prod(xb.hi - xb.lo))
    count = max(store.num_vertices, 2)
    if volume <= 0:
        return 1.0
    # unit-ball volume in n_dim dimensions
    from math import gamma as gamma_fn, pi

    ball = pi ** (n_dim / 2.0) / gamma_fn(n_dim / 2.0 + 1.0)
    radius = (TARGET_SUPPORT_COUNT * volume / (ball * count)) ** (1.0 / n_dim)
    return 1.0 / radius


@dataclass(frozen=True)
class ControlSearchConfig:
    """Pattern-search settings for the runtime controller.

    Probes move along the 2m signed unit coordinate directions; the step
    halves whenever no probe improves and the search stops at eps_alpha.
    """

    alpha0: float | None = None  # default 0.25 * control box diameter
    shrink: float = 2.0
    eps_alpha: float = 1e-4

    def __post_init__(self):
        if self.shrink <= 1:
            raise InvalidParameterError("shrink must exceed 1")
        if self.eps_alpha <= 0:
            raise InvalidParameterError("eps_alpha must be positive")
        if self.alpha0 is not None and self.alpha0 <= self.eps_alpha:
            raise InvalidParameterError("alpha0 must exceed eps_alpha")


def _bump_from_squared(t: np.ndarray) -> np.ndarray:
    """Kernel weight from t = (gamma * distance)^2; zero outside support."""
    w = np.zeros_like(t)
    inside = t < 1.0
    w[inside] = np.exp(-1.0 / (1.0 - t[inside]))
    return w


def bump(gamma: float, x, x_other, wrap_mask=None):
    """Compactly-supported smooth kernel on the wrapped state distance.

    Equals e^-1 at zero distance and vanishes at distance 1/gamma and
    beyond. ``x`` may be batched against a single ``x_other``.
    """
    if gamma <= 0:
        raise InvalidParameterError("gamma must be positive")
    x = np.asarray(x, dtype=float)
    mask = (
        np.zeros(x.shape[-1], dtype=bool)
        if wrap_mask is None
        else np.asarray(wrap_mask, dtype=bool)
    )
    d = state_distance(x, x_other, mask)
    t = np.square(gamma * np.asarray(d, dtype=float))
    w = _bump_from_squared(np.atleast_1d(t))
    return float(w[0]) if np.ndim(d) == 0 else w


def _interpolate_batch(store: Store, cfg: InterpConfig, xs: np.ndarray) -> np.ndarray:
    """Interpolated cost-to-go for each row of ``xs``; +inf when rejected."""
    costs = np.asarray(store.cost_to_go)
    finite = np.isfinite(costs)
    if not finite.any():
        raise InvalidParameterError("store has no finite-cost vertex to interpolate")
    d = state_distance(
        store.states[None, :, :], xs[:, None, :], store.system.wrap_mask
    )  # (B, N)
    t = np.square(cfg.gamma * d)
    w = _bump_from_squared(t)
    w[:, ~finite] = 0.0
    totals = w.sum(axis=1)
    values = np.empty(xs.shape[0])
    supported = totals > 0.0
    if supported.any():
        safe_costs = np.where(finite, costs, 0.0)
        values[supported] = (w[supported] @ safe_costs) / totals[supported]
    if (~supported).any():
        if cfg.fallback == "nearest":
            d_finite = d[np.ix_(~supported, finite)]
            values[~supported] = costs[finite][np.argmin(d_finite, axis=1)]
        else:
            values[~supported] = np.inf
    return values


def interpolate_value(store: Store, cfg: InterpConfig, x) -> float:
    """Bump-weighted mean of cost-to-go over vertices supporting ``x``.

    Vertices with infinite cost never contribute. The result is a convex
    combination, so it always lies between the min and max finite value it
    averages.
    """
    x = np.asarray(x, dtype=float)
    return float(_interpolate_batch(store, cfg, x[None, :])[0])


def control(
    store: Store,
    sys: SystemDef,
    icfg: InterpConfig,
    scfg: ControlSearchConfig,
    x,
) -> np.ndarray:
    """One feedback control for state ``x``.

    Pattern search from u = 0 over the 2m signed coordinate directions,
    minimizing stage cost plus interpolated value of the next state; all
    probes are clamped into the control bounds, so the result always lies
    inside them. Raises ControllerStarvedError when every probed control
    led off the value data (possible only under the 'reject' fallback).
    """
    x = sys.wrap(np.asarray(x, dtype=float))
    m = sys.m
    lo, hi = sys.control_bounds.lo, sys.control_bounds.hi
    directions = np.concatenate([np.eye(m), -np.eye(m)], axis=0)
    alpha = scfg.alpha0 if scfg.alpha0 is not None else 0.25 * sys.control_bounds.diameter

    def q_values(controls: np.ndarray) -> np.ndarray:
        states = np.tile(x, (controls.shape[0], 1))
        nxt = step_forward(sys, store.icfg, states, controls)
        g = np.asarray(sys.stage_cost(states, controls), dtype=float)
        return g + _interpolate_batch(store, icfg, nxt)

    u = np.clip(np.zeros(m), lo, hi)
    q_best = float(q_values(u[None, :])[0])
    probed = [u.copy()]
    saw_finite = np.isfinite(q_best)

    while alpha > scfg.eps_alpha:
        candidates = np.clip(u + alpha * directions, lo, hi)
        q = q_values(candidates)
        probed.extend(candidates)
        saw_finite = saw_finite or bool(np.isfinite(q).any())
        k = int(np.argmin(q))
        if q[k] < q_best:
            q_best = float(q[k])
            u = candidates[k]
        else:
            alpha /= scfg.shrink

    if not saw_finite:
        raise ControllerStarvedError(probed)
    return u


@dataclass
class TrajectoryRecord:
    """Closed-loop rollout: states has one more row than controls."""

    states: np.ndarray
    controls: np.ndarray
    stage_costs: np.ndarray
    total_cost: float
    steps_to_goal: int | None
    stabilized: bool
    diverged: bool
    goal_tol: float
    control_seconds: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def steps(self) -> int:
        return self.controls.shape[0]

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def _left_bounds(sys: SystemDef, x: np.ndarray) -> bool:
    """True when a non-wrapped axis is out of bounds by more than the margin."""
    xb = sys.state_bounds
    margin = DIVERGENCE_MARGIN * (xb.hi - xb.lo)
    free = ~sys.wrap_mask
    return bool(
        ((x < xb.lo - margin) | (x > xb.hi + margin))[free].any()
    )


def simulate(
    store: Store,
    plan_sys: SystemDef,
    exec_sys: SystemDef,
    icfg: InterpConfig,
    scfg: ControlSearchConfig,
    x0,
    horizon: int,
    goal_tol: float = 0.05,
) -> TrajectoryRecord:
    """Closed-loop rollout: plan each control on ``plan_sys`` (the system the
    store was built on), advance the state with ``exec_sys``.

    Stage costs accumulate under the executed system. ``steps_to_goal`` is
    the first state index with wrapped distance to the terminal state below
    ``goal_tol``; the run counts as stabilized when the trajectory stays
    inside that ball from then on. Leaving the state bounds by a wide margin
    marks the record diverged and stops the rollout.
    """
    x = exec_sys.wrap(np.asarray(x0, dtype=float))
    states = [x]
    controls = []
    costs = []
    ctrl_seconds = []
    diverged = False
    for _ in range(int(horizon)):
        t0 = time.perf_counter()
        u = control(store, plan_sys, icfg, scfg, x)
        ctrl_seconds.append(time.perf_counter() - t0)
        costs.append(float(exec_sys.stage_cost(x, u)))
        controls.append(u)
        x = step_forward(exec_sys, store.icfg, x, u)
        states.append(x)
        if _left_bounds(exec_sys, x):
            diverged = True
            break

    states_arr = np.asarray(states)
    goal_dist = exec_sys.distance(states_arr, exec_sys.terminal_state)
    inside = goal_dist < goal_tol
    steps_to_goal = int(np.argmax(inside)) if inside.any() else None
    stabilized = (
        steps_to_goal is not None and bool(inside[steps_to_goal:].all()) and not diverged
    )
    return TrajectoryRecord(
        states=states_arr,
        controls=np.asarray(controls).reshape(len(controls), plan_sys.m),
        stage_costs=np.asarray(costs),
        total_cost=float(np.sum(costs)),
        steps_to_goal=steps_to_goal,
        stabilized=stabilized,
        diverged=diverged,
        goal_tol=goal_tol,
        control_seconds=np.asarray(ctrl_seconds),
    )


def write_trajectory_csv(record: TrajectoryRecord, path) -> None:
    """Fixed column order: step, state components, control components,
    stage cost, cumulative cost. One row per executed step."""
    n = record.states.shape[1]
    m = record.controls.shape[1] if record.steps else 0
    header = (
        ["step"]
        + [f"x{i}" for i in range(n)]
        + [f"u{i}" for i in range(m)]
        + ["stage_cost", "cumulative_cost"]
    )
    running = 0.0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(record.steps):
            running += record.stage_costs[t]
            row = (
                [t]
                + [f"{v:.9g}" for v in record.states[t]]
                + [f"{v:.9g}" for v in record.controls[t]]
                + [f"{record.stage_costs[t]:.9g}", f"{running:.9g}"]
            )
            writer.writerow(row)
