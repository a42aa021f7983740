"""Controlled vector fields and fixed-step forward/backward integration.

States and controls are plain float64 numpy arrays. Every function here is
batch-aware: a state argument may be shaped ``(n,)`` or ``(B, n)`` and the
result keeps the shape. Batching is what keeps the planner's inner steering
loops fast, so the three bundled systems all implement their vector fields
with broadcasting-friendly numpy ops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import IntegrationDivergedError, InvalidParameterError

TWO_PI = 2.0 * np.pi


def wrap_angles(x: np.ndarray, wrap_mask: np.ndarray) -> np.ndarray:
    """Wrap the masked components of ``x`` into [-pi, pi).

    Accepts ``(..., n)`` arrays; non-wrapped components pass through.
    """
    if not wrap_mask.any():
        return x
    out = np.array(x, dtype=float, copy=True)
    out[..., wrap_mask] = np.mod(out[..., wrap_mask] + np.pi, TWO_PI) - np.pi
    return out


def state_difference(a, b, wrap_mask: np.ndarray) -> np.ndarray:
    """``a - b`` using the shortest angular difference on wrapped axes."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if wrap_mask.any():
        d = np.array(d, copy=True)
        d[..., wrap_mask] = np.mod(d[..., wrap_mask] + np.pi, TWO_PI) - np.pi
    return d


def state_distance(a, b, wrap_mask: np.ndarray) -> np.ndarray:
    """Euclidean distance with per-axis angular wrapping; broadcasts."""
    return np.linalg.norm(state_difference(a, b, wrap_mask), axis=-1)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with inclusive bounds."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InvalidParameterError("box lo/hi must be 1-D and same length")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise InvalidParameterError("box bounds must be finite")
        if (lo > hi).any():
            raise InvalidParameterError("box lo must not exceed hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def contains(self, x) -> np.ndarray:
        """Membership test; returns a bool (or bool array for batches)."""
        x = np.asarray(x, dtype=float)
        return np.logical_and(x >= self.lo, x <= self.hi).all(axis=-1)

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lo, self.hi)

    def sample(self, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
        if count is None:
            return rng.uniform(self.lo, self.hi)
        return rng.uniform(self.lo, self.hi, size=(count, self.dim))

    def intersects(self, other: "Box") -> bool:
        return bool((self.lo <= other.hi).all() and (other.lo <= self.hi).all())

    def to_json(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Box":
        return cls(np.asarray(obj["lo"], dtype=float), np.asarray(obj["hi"], dtype=float))


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step quadrature settings.

    ``step_dt`` is the macro step between graph vertices; ``sub_dt`` is the
    requested quadrature substep. The effective substep is ``step_dt / k``
    with ``k = round(step_dt / sub_dt)`` so substeps tile the macro step
    exactly. ``sub_dt=None`` defaults to ``step_dt / 10``.
    """

    step_dt: float = 0.1
    sub_dt: float | None = None

    def __post_init__(self):
        if self.step_dt <= 0:
            raise InvalidParameterError("step_dt must be positive")
        sub = self.step_dt / 10.0 if self.sub_dt is None else float(self.sub_dt)
        if not 0 < sub <= self.step_dt:
            raise InvalidParameterError("need 0 < sub_dt <= step_dt")
        object.__setattr__(self, "sub_dt", sub)

    @property
    def n_substeps(self) -> int:
        return max(1, int(round(self.step_dt / self.sub_dt)))

    @property
    def effective_sub_dt(self) -> float:
        return self.step_dt / self.n_substeps

    def to_json(self) -> dict:
        return {"step_dt": self.step_dt, "sub_dt": self.sub_dt}

    @classmethod
    def from_json(cls, obj: dict) -> "IntegratorConfig":
        return cls(step_dt=float(obj["step_dt"]), sub_dt=float(obj["sub_dt"]))


@dataclass(frozen=True)
class SystemDef:
    """A controlled dynamical system with bounds, cost and terminal state.

    ``vector_field(x, u)`` returns the state derivative and must accept
    batched inputs. ``stage_cost(x, u)`` returns a nonnegative per-step cost
    (batch-aware as well). ``params`` carries enough JSON-serializable data
    to rebuild the system when a store is loaded from disk.
    """

    name: str
    n: int
    m: int
    state_bounds: Box
    control_bounds: Box
    wrap_mask: np.ndarray
    terminal_state: np.ndarray
    vector_field: Callable[[np.ndarray, np.ndarray], np.ndarray]
    stage_cost: Callable[[np.ndarray, np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        wrap = np.asarray(self.wrap_mask, dtype=bool)
        xhat = np.asarray(self.terminal_state, dtype=float)
        if self.state_bounds.dim != self.n or self.control_bounds.dim != self.m:
            raise InvalidParameterError("bounds do not match declared dimensions")
        if wrap.shape != (self.n,) or xhat.shape != (self.n,):
            raise InvalidParameterError("wrap_mask/terminal_state must have length n")
        if not self.state_bounds.contains(xhat):
            raise InvalidParameterError("terminal state lies outside state bounds")
        object.__setattr__(self, "wrap_mask", wrap)
        object.__setattr__(self, "terminal_state", xhat)

    def distance(self, a, b) -> np.ndarray:
        """State-space metric: Euclidean with wrapping on angular axes."""
        return state_distance(a, b, self.wrap_mask)

    def wrap(self, x) -> np.ndarray:
        return wrap_angles(np.asarray(x, dtype=float), self.wrap_mask)


def _integrate(sys: SystemDef, cfg: IntegratorConfig, x, u, sign: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    dt = sign * cfg.effective_sub_dt
    state = x
    for _ in range(cfg.n_substeps):
        state = state + sys.vector_field(state, u) * dt
    state = wrap_angles(state, sys.wrap_mask)
    if not np.isfinite(state).all():
        raise IntegrationDivergedError(
            f"non-finite state after integrating {sys.name} for "
            f"{sign * cfg.step_dt:.9g}s"
        )
    return state


def step_forward(sys: SystemDef, cfg: IntegratorConfig, x, u) -> np.ndarray:
    """One macro step of explicit Euler under zero-order-hold control.

    Angular axes are wrapped into [-pi, pi) after the step. Batched when
    ``x`` is ``(B, n)`` (``u`` may then be ``(B, m)`` or a single control).
    """
    return _integrate(sys, cfg, x, u, +1.0)


def step_backward(sys: SystemDef, cfg: IntegratorConfig, x, u) -> np.ndarray:
    """One macro step backward in time: Euler with negated substeps.

    This is not an algebraic inverse of :func:`step_forward`; the pair only
    agrees up to a residual that vanishes linearly in ``sub_dt``.
    """
    return _integrate(sys, cfg, x, u, -1.0)
