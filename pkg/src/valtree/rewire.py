"""Online problem modification: apply constraints to the frozen graph and
rebuild the value tree without re-sampling.

Vertices and edges are never deleted; violating edges get infinite cost and
keep their base cost, so any modification can be undone by applying an empty
constraint set.

Constraint file schema (JSON):

    {
      "format_version": 1,
      "boxes": [{"lo": [...], "hi": [...]}, ...],
      "segments": [[[x, y], [x, y]], ...],
      "segment_margin": 0.05,
      "control_limits": {"lo": [...], "hi": [...]} | null,
      "goal_vertex": int | null
    }
"""

from __future__ import annotations

import json
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dynamics import Box, SystemDef
from .errors import InvalidParameterError, StoreFormatError
from .graph import Store
from .systems import ObstacleSet, inside_obstacle

CONSTRAINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ConstraintSet:
    """Runtime problem changes: obstacles, tighter control limits, a new
    stage cost, and/or a new goal vertex."""

    obstacles: ObstacleSet = field(default_factory=ObstacleSet)
    control_limit_override: Box | None = None
    cost_override: Callable[[np.ndarray, np.ndarray], float] | None = None
    goal_override: int | None = None

    def validate(self, store: Store, sys: SystemDef) -> None:
        if self.control_limit_override is not None:
            ub = sys.control_bounds
            ov = self.control_limit_override
            if ov.dim != sys.m:
                raise InvalidParameterError(
                    f"control override has dim {ov.dim}, system has m={sys.m}"
                )
            if (ov.lo < ub.lo).any() or (ov.hi > ub.hi).any():
                raise InvalidParameterError("control override must lie within the system bounds")
        for box in self.obstacles.boxes:
            if box.dim != sys.n:
                raise InvalidParameterError(
                    f"obstacle box has dim {box.dim}, system has n={sys.n}"
                )
            if not box.intersects(sys.state_bounds):
                raise InvalidParameterError("obstacle box does not intersect the state bounds")
        if self.goal_override is not None and not (
            0 <= self.goal_override < store.num_vertices
        ):
            raise InvalidParameterError(
                f"goal vertex {self.goal_override} does not exist"
            )


@dataclass
class ModifyReport:
    edges_infinitized: int
    unreachable: int
    sweeps: int
    elapsed_seconds: float


def apply_constraints(store: Store, sys: SystemDef, cs: ConstraintSet) -> int:
    """Recompute every edge cost under the constraint set.

    An edge whose source state sits inside an obstacle, or whose control
    violates the override limits, gets infinite cost; every other edge gets
    the override cost if one is given, else its base cost. Returns the
    number of edges set to infinity.
    """
    cs.validate(store, sys)
    n_edges = len(store.edges)
    if n_edges == 0:
        return 0
    blocked = np.zeros(n_edges, dtype=bool)
    if not cs.obstacles.empty:
        sources = store.states[[e.src for e in store.edges]]
        blocked |= inside_obstacle(cs.obstacles, sources)
    limits = cs.control_limit_override
    infinitized = 0
    for i, e in enumerate(store.edges):
        if blocked[i] or (limits is not None and not limits.contains(e.control)):
            e.cost = np.inf
            infinitized += 1
        elif cs.cost_override is not None:
            e.cost = float(cs.cost_override(store.state_of(e.src), e.control))
        else:
            e.cost = e.base_cost
    return infinitized


def rebuild_tree(store: Store) -> tuple[int, int]:
    """Rebuild the whole tree over current edge costs.

    Phase 1 seeds every reachable vertex with its hop-minimal path to the
    root (breadth-first over reversed finite-cost edges). Phase 2 sweeps all
    vertices in id order, adopting any strictly cheaper parent, until a full
    sweep changes nothing. On return the stored cost-to-go equals the exact
    shortest-path distance to the root for every vertex (+inf when cut off).

    Returns (sweep count, reachable vertex count); the sweep count is
    asserted against the Bellman-Ford bound.
    """
    n = store.num_vertices
    root = store.root_id
    store.cost_to_go = [np.inf] * n
    store.tree_edge = [None] * n
    store.cost_to_go[root] = 0.0

    seen = [False] * n
    seen[root] = True
    queue = deque([root])
    while queue:
        t = queue.popleft()
        for ei in store.in_edges[t]:
            e = store.edges[ei]
            if np.isfinite(e.cost) and not seen[e.src]:
                seen[e.src] = True
                store.tree_edge[e.src] = ei
                store.cost_to_go[e.src] = e.cost + store.cost_to_go[t]
                queue.append(e.src)

    sweeps = 0
    changed = True
    while changed:
        changed = False
        sweeps += 1
        if sweeps > n:
            raise RuntimeError("tree rebuild exceeded the Bellman-Ford sweep bound")
        for v in range(n):
            if v == root:
                continue
            j_v = store.cost_to_go[v]
            best_edge = None
            for ei in store.out_edges[v]:
                e = store.edges[ei]
                candidate = e.cost + store.cost_to_go[e.dst]
                if candidate < j_v:
                    j_v = candidate
                    best_edge = ei
            if best_edge is not None:
                store.cost_to_go[v] = j_v
                store.tree_edge[v] = best_edge
                changed = True

    reachable = int(np.isfinite(np.asarray(store.cost_to_go)).sum())
    return sweeps, reachable


def modify(store: Store, sys: SystemDef, cs: ConstraintSet) -> ModifyReport:
    """Apply a constraint set and rebuild the tree; report what changed."""
    start = time.perf_counter()
    cs.validate(store, sys)
    if cs.goal_override is not None:
        store.root_id = cs.goal_override
    infinitized = apply_constraints(store, sys, cs)
    sweeps, reachable = rebuild_tree(store)
    return ModifyReport(
        edges_infinitized=infinitized,
        unreachable=store.num_vertices - reachable,
        sweeps=sweeps,
        elapsed_seconds=time.perf_counter() - start,
    )


# -- constraint file IO -------------------------------------------------------


def constraints_to_json(cs: ConstraintSet) -> dict:
    if cs.cost_override is not None:
        raise InvalidParameterError("cost overrides are API-only and cannot be serialized")
    return {
        "format_version": CONSTRAINT_FORMAT_VERSION,
        "boxes": [b.to_json() for b in cs.obstacles.boxes],
        "segments": [[a.tolist(), b.tolist()] for a, b in cs.obstacles.segments],
        "segment_margin": cs.obstacles.segment_margin,
        "control_limits": None
        if cs.control_limit_override is None
        else cs.control_limit_override.to_json(),
        "goal_vertex": cs.goal_override,
    }


def save_constraints(cs: ConstraintSet, path) -> None:
    Path(path).write_text(json.dumps(constraints_to_json(cs), indent=2, sort_keys=True))


def load_constraints(path) -> ConstraintSet:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"constraint file not found: {p}")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise StoreFormatError(f"constraint file is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise StoreFormatError("constraint file must contain a JSON object")
    version = obj.get("format_version")
    if version != CONSTRAINT_FORMAT_VERSION:
        raise StoreFormatError(f"unsupported constraint format version {version!r}")
    try:
        boxes = tuple(Box.from_json(b) for b in obj.get("boxes", []))
        segments = tuple(
            (np.asarray(a, dtype=float), np.asarray(b, dtype=float))
            for a, b in obj.get("segments", [])
        )
        obstacles = ObstacleSet(
            boxes=boxes,
            segments=segments,
            segment_margin=float(obj.get("segment_margin", 0.05)),
        )
        limits_obj = obj.get("control_limits")
        limits = None if limits_obj is None else Box.from_json(limits_obj)
        goal = obj.get("goal_vertex")
        return ConstraintSet(
            obstacles=obstacles,
            control_limit_override=limits,
            goal_override=None if goal is None else int(goal),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise StoreFormatError(f"constraint file is corrupt: {exc}") from exc
