"""Sampling-based approximate value functions for terminal-state-constrained
optimal control: a backward-in-time tree embedded in a rewireable graph, plus
a derivative-free interpolated feedback controller."""

from .builder import BuildConfig, BuildReport, SteerConfig, build, expand_backward, find_connections, steer, update_tree
from .controller import (
    ControlSearchConfig,
    InterpConfig,
    TrajectoryRecord,
    bump,
    control,
    default_gamma,
    interpolate_value,
    simulate,
    write_trajectory_csv,
)
from .dynamics import Box, IntegratorConfig, SystemDef, step_backward, step_forward
from .graph import NnIndex, Store, deserialize, new_store, serialize, verify_store
from .rewire import ConstraintSet, ModifyReport, apply_constraints, load_constraints, modify, rebuild_tree, save_constraints
from .systems import (
    MlpLayer,
    MlpModel,
    ObstacleSet,
    inside_obstacle,
    load_mlp,
    mlp_system,
    pendulum,
    single_integrator,
)

__version__ = "0.1.0"

__all__ = [
    "Box",
    "BuildConfig",
    "BuildReport",
    "ConstraintSet",
    "ControlSearchConfig",
    "IntegratorConfig",
    "InterpConfig",
    "MlpLayer",
    "MlpModel",
    "ModifyReport",
    "NnIndex",
    "ObstacleSet",
    "Store",
    "SteerConfig",
    "SystemDef",
    "TrajectoryRecord",
    "apply_constraints",
    "build",
    "bump",
    "control",
    "default_gamma",
    "deserialize",
    "expand_backward",
    "find_connections",
    "inside_obstacle",
    "interpolate_value",
    "load_constraints",
    "load_mlp",
    "mlp_system",
    "modify",
    "new_store",
    "pendulum",
    "rebuild_tree",
    "save_constraints",
    "serialize",
    "simulate",
    "single_integrator",
    "steer",
    "step_backward",
    "step_forward",
    "update_tree",
    "verify_store",
    "write_trajectory_csv",
]
