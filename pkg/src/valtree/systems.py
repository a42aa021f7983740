"""Benchmark systems: 2-D single integrator, torque-limited pendulum, and a
pendulum whose vector field is a small feed-forward network loaded from a
portable weight file.

Weight file schema (JSON):

    {
      "input_dim": 3,
      "output_dim": 2,
      "layers": [
        {"weights": [[...], ...], "bias": [...], "activation": "tanh"},
        ...,
        {"weights": [[...], ...], "bias": [...], "activation": "identity"}
      ],
      "train_rmse": 0.0031
    }

``weights`` is row-major with shape (rows, cols); consecutive layers must
chain (cols of layer k+1 == rows of layer k), the first layer's cols must
equal ``input_dim``, the last layer's rows must equal ``output_dim`` and its
activation must be "identity". Extra top-level fields are preserved in
``MlpModel.metadata`` but ignored by the loader.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import Box, SystemDef
from .errors import (
    InvalidParameterError,
    WeightDimensionError,
    WeightSchemaError,
)

_ACTIVATIONS = ("tanh", "identity")


def single_integrator(
    step_dt: float,
    state_bounds: Box | None = None,
    control_bounds: Box | None = None,
) -> SystemDef:
    """Planar single integrator: xdot = u, stage cost ``|u| * step_dt``.

    The cost telescopes to path length, so the optimal cost-to-go from x to
    the origin is exactly ``|x|`` whenever the speed cap allows a straight
    run. ``step_dt`` must match the integrator config used for planning
    because it is baked into the stage cost.
    """
    if step_dt <= 0:
        raise InvalidParameterError("step_dt must be positive")
    xb = state_bounds or Box(np.array([-5.0, -5.0]), np.array([5.0, 5.0]))
    ub = control_bounds or Box(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))

    def field_fn(x, u):
        out = np.empty_like(np.asarray(x, dtype=float))
        out[...] = u
        return out

    def cost_fn(x, u):
        return np.linalg.norm(np.asarray(u, dtype=float), axis=-1) * step_dt

    return SystemDef(
        name="single_integrator",
        n=2,
        m=2,
        state_bounds=xb,
        control_bounds=ub,
        wrap_mask=np.array([False, False]),
        terminal_state=np.zeros(2),
        vector_field=field_fn,
        stage_cost=cost_fn,
        params={
            "name": "single_integrator",
            "state_bounds": xb.to_json(),
            "control_bounds": ub.to_json(),
        },
    )


def _pendulum_bounds(control_limit: float, v_max: float) -> tuple[Box, Box]:
    if control_limit <= 0:
        raise InvalidParameterError("control_limit must be positive")
    if v_max <= 0:
        raise InvalidParameterError("v_max must be positive")
    xb = Box(np.array([-np.pi, -v_max]), np.array([np.pi, v_max]))
    ub = Box(np.array([-control_limit]), np.array([control_limit]))
    return xb, ub


def pendulum(control_limit: float, v_max: float = 4.0) -> SystemDef:
    """Inverted pendulum normalized to unit mass/length/gravity.

    State is (angle from upright, angular rate); xdot = (x2, sin(x1) + u).
    Quadratic stage cost x.x + u.u drives stabilization at the upright
    equilibrium (0, 0). The angle axis is periodic.
    """
    xb, ub = _pendulum_bounds(control_limit, v_max)

    def field_fn(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        out = np.empty_like(x)
        out[..., 0] = x[..., 1]
        out[..., 1] = np.sin(x[..., 0]) + u[..., 0]
        return out

    def cost_fn(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return (x * x).sum(axis=-1) + (u * u).sum(axis=-1)

    return SystemDef(
        name="pendulum",
        n=2,
        m=1,
        state_bounds=xb,
        control_bounds=ub,
        wrap_mask=np.array([True, False]),
        terminal_state=np.zeros(2),
        vector_field=field_fn,
        stage_cost=cost_fn,
        params={"name": "pendulum", "control_limit": float(control_limit), "v_max": float(v_max)},
    )


@dataclass(frozen=True)
class MlpLayer:
    weights: np.ndarray  # (rows, cols)
    bias: np.ndarray  # (rows,)
    activation: str

    def apply(self, z: np.ndarray) -> np.ndarray:
        out = z @ self.weights.T + self.bias
        if self.activation == "tanh":
            return np.tanh(out)
        return out


@dataclass(frozen=True)
class MlpModel:
    """Feed-forward network weights defining a learned vector field."""

    layers: tuple[MlpLayer, ...]
    input_dim: int
    output_dim: int
    train_rmse: float | None = None
    metadata: dict = field(default_factory=dict)

    def forward(self, z) -> np.ndarray:
        """Evaluate the network on ``(..., input_dim)`` inputs."""
        a = np.asarray(z, dtype=float)
        for layer in self.layers:
            a = layer.apply(a)
        return a

    def to_json(self) -> dict:
        obj = {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "layers": [
                {
                    "weights": layer.weights.tolist(),
                    "bias": layer.bias.tolist(),
                    "activation": layer.activation,
                }
                for layer in self.layers
            ],
        }
        if self.train_rmse is not None:
            obj["train_rmse"] = self.train_rmse
        obj.update(self.metadata)
        return obj


def mlp_from_json(obj: dict) -> MlpModel:
    """Validate a parsed weight dict and build the model.

    Raises WeightSchemaError for structural problems and the more specific
    WeightDimensionError when layer shapes do not chain.
    """
    if not isinstance(obj, dict):
        raise WeightSchemaError("weight file must contain a JSON object")
    for key in ("input_dim", "output_dim", "layers"):
        if key not in obj:
            raise WeightSchemaError(f"weight file missing required field '{key}'")
    try:
        input_dim = int(obj["input_dim"])
        output_dim = int(obj["output_dim"])
    except (TypeError, ValueError) as exc:
        raise WeightSchemaError("input_dim/output_dim must be integers") from exc
    raw_layers = obj["layers"]
    if not isinstance(raw_layers, list) or not raw_layers:
        raise WeightSchemaError("layers must be a non-empty list")

    layers: list[MlpLayer] = []
    for i, entry in enumerate(raw_layers):
        if not isinstance(entry, dict):
            raise WeightSchemaError(f"layer {i} must be an object")
        for key in ("weights", "bias", "activation"):
            if key not in entry:
                raise WeightSchemaError(f"layer {i} missing field '{key}'")
        if entry["activation"] not in _ACTIVATIONS:
            raise WeightSchemaError(
                f"layer {i} activation must be one of {_ACTIVATIONS}"
            )
        try:
            weights = np.asarray(entry["weights"], dtype=float)
            bias = np.asarray(entry["bias"], dtype=float)
        except ValueError as exc:
            raise WeightSchemaError(f"layer {i} weights/bias are not numeric") from exc
        if weights.ndim != 2 or bias.ndim != 1:
            raise WeightSchemaError(f"layer {i} weights must be 2-D, bias 1-D")
        if bias.shape[0] != weights.shape[0]:
            raise WeightSchemaError(
                f"layer {i} bias length {bias.shape[0]} != rows {weights.shape[0]}"
            )
        if not (np.isfinite(weights).all() and np.isfinite(bias).all()):
            raise WeightSchemaError(f"layer {i} contains non-finite values")
        layers.append(MlpLayer(weights=weights, bias=bias, activation=entry["activation"]))

    if layers[0].weights.shape[1] != input_dim:
        raise WeightDimensionError(
            f"first layer expects {layers[0].weights.shape[1]} inputs, "
            f"declared input_dim is {input_dim}"
        )
    for i in range(1, len(layers)):
        prev_rows = layers[i - 1].weights.shape[0]
        cols = layers[i].weights.shape[1]
        if cols != prev_rows:
            raise WeightDimensionError(
                f"layer {i} takes {cols} inputs but layer {i - 1} emits {prev_rows}"
            )
    if layers[-1].weights.shape[0] != output_dim:
        raise WeightDimensionError(
            f"last layer emits {layers[-1].weights.shape[0]} outputs, "
            f"declared output_dim is {output_dim}"
        )
    if layers[-1].activation != "identity":
        raise WeightSchemaError("last layer activation must be 'identity'")

    train_rmse = obj.get("train_rmse")
    metadata = {
        k: v
        for k, v in obj.items()
        if k not in ("input_dim", "output_dim", "layers", "train_rmse")
    }
    return MlpModel(
        layers=tuple(layers),
        input_dim=input_dim,
        output_dim=output_dim,
        train_rmse=None if train_rmse is None else float(train_rmse),
        metadata=metadata,
    )


def load_mlp(path) -> MlpModel:
    """Load and validate an MLP weight file.

    Missing files raise FileNotFoundError; malformed JSON or schema
    violations raise WeightSchemaError; shape-chain problems raise
    WeightDimensionError.
    """
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"weight file not found: {p}")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise WeightSchemaError(f"weight file is not valid JSON: {exc}") from exc
    return mlp_from_json(obj)


def mlp_system(model: MlpModel, control_limit: float, v_max: float = 4.0) -> SystemDef:
    """Pendulum-shaped system whose vector field is the network forward pass.

    The model must map (x1, x2, u) -> (x1dot, x2dot); bounds, cost and the
    terminal state are identical to :func:`pendulum`.
    """
    if model.input_dim != 3 or model.output_dim != 2:
        raise InvalidParameterError(
            f"expected a 3->2 network, got {model.input_dim}->{model.output_dim}"
        )
    xb, ub = _pendulum_bounds(control_limit, v_max)

    def field_fn(x, u):
        x = np.asarray(x, dtype=float)
        u = np.broadcast_to(np.asarray(u, dtype=float), x[..., :1].shape)
        return model.forward(np.concatenate([x, u], axis=-1))

    def cost_fn(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return (x * x).sum(axis=-1) + (u * u).sum(axis=-1)

    return SystemDef(
        name="mlp",
        n=2,
        m=1,
        state_bounds=xb,
        control_bounds=ub,
        wrap_mask=np.array([True, False]),
        terminal_state=np.zeros(2),
        vector_field=field_fn,
        stage_cost=cost_fn,
        params={
            "name": "mlp",
            "control_limit": float(control_limit),
            "v_max": float(v_max),
            "model": model.to_json(),
        },
    )


def system_from_params(params: dict, step_dt: float) -> SystemDef:
    """Rebuild a SystemDef from the ``params`` block of a store header."""
    name = params.get("name")
    if name == "single_integrator":
        return single_integrator(
            step_dt,
            state_bounds=Box.from_json(params["state_bounds"]),
            control_bounds=Box.from_json(params["control_bounds"]),
        )
    if name == "pendulum":
        return pendulum(params["control_limit"], v_max=params["v_max"])
    if name == "mlp":
        model = mlp_from_json(params["model"])
        return mlp_system(model, params["control_limit"], v_max=params["v_max"])
    raise InvalidParameterError(f"unknown system name {name!r}")


@dataclass(frozen=True)
class ObstacleSet:
    """State-space obstacles: axis-aligned boxes plus thin wall segments.

    Segments are pairs of 2-D points; a state is "inside" a wall when its
    first two components come within ``segment_margin`` of the segment.
    """

    boxes: tuple[Box, ...] = ()
    segments: tuple[tuple[np.ndarray, np.ndarray], ...] = ()
    segment_margin: float = 0.05

    def __post_init__(self):
        segs = tuple(
            (np.asarray(a, dtype=float), np.asarray(b, dtype=float))
            for a, b in self.segments
        )
        for a, b in segs:
            if a.shape != (2,) or b.shape != (2,):
                raise InvalidParameterError("wall segments must join 2-D points")
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "segments", segs)

    @property
    def empty(self) -> bool:
        return not self.boxes and not self.segments


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each 2-D point to segment ab; ``points`` is (..., 2)."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=-1)
    t = np.clip(((points - a) @ ab) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(points - closest, axis=-1)


def inside_obstacle(obs: ObstacleSet, x) -> np.ndarray:
    """True where ``x`` lies in any box or within margin of any wall.

    Batched: ``x`` may be ``(n,)`` or ``(B, n)``.
    """
    x = np.asarray(x, dtype=float)
    hit = np.zeros(x.shape[:-1], dtype=bool)
    for box in obs.boxes:
        hit |= box.contains(x)
    if obs.segments:
        xy = x[..., :2]
        for a, b in obs.segments:
            hit |= _segment_distance(xy, a, b) <= obs.segment_margin
    return hit


def validate_stage_cost(sys: SystemDef, rng: np.random.Generator, samples: int = 1000) -> float:
    """Randomized nonnegativity check of the stage cost; returns the minimum seen."""
    xs = sys.state_bounds.sample(rng, samples)
    us = sys.control_bounds.sample(rng, samples)
    g = np.asarray(sys.stage_cost(xs, us), dtype=float)
    lowest = float(g.min())
    if lowest < 0:
        raise InvalidParameterError(f"stage cost went negative ({lowest:.9g})")
    return lowest
