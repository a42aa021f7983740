"""The dual store: a directed multigraph of dynamically-connected sampled
states plus the spanning value tree over the same vertices.

Vertices are dense integer ids; id assignment never changes for the life of
a store. Each vertex carries a state, a cost-to-go (``+inf`` until wired)
and at most one outgoing tree edge. Edges carry a control, the current cost
and the cost under the unconstrained problem (``base_cost``) so constraint
changes are always reversible.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import IntegratorConfig, SystemDef, state_distance, step_forward
from .errors import (
    InfeasibleEdgeError,
    OutOfBoundsError,
    StoreFormatError,
    StoreVersionError,
)
from .systems import system_from_params

STORE_FORMAT_VERSION = 1

# Controls closer than this (Euclidean) on the same (from, to) pair are
# considered duplicates and not re-added.
CONTROL_DEDUP_TOL = 1e-6


@dataclass
class Edge:
    src: int
    dst: int
    control: np.ndarray
    cost: float
    base_cost: float


class NnIndex:
    """Exact nearest-neighbor index under the wrapped state metric.

    A flat, vectorized scan over a growing array: exact for the mixed
    periodic/linear metric, trivially incremental, and fast enough for the
    store sizes this planner targets (queries stay O(N) with tiny numpy
    constants). Ties break toward the lower vertex id.
    """

    def __init__(self, dim: int, wrap_mask: np.ndarray):
        self.dim = dim
        self.wrap_mask = np.asarray(wrap_mask, dtype=bool)
        self._points = np.empty((64, dim), dtype=float)
        self._size = 0

    def __len__(self) -> int:
        return self._size

    @property
    def points(self) -> np.ndarray:
        return self._points[: self._size]

    def add(self, x: np.ndarray) -> None:
        if self._size == self._points.shape[0]:
            grown = np.empty((2 * self._size, self.dim), dtype=float)
            grown[: self._size] = self._points
            self._points = grown
        self._points[self._size] = x
        self._size += 1

    def query(self, x, k: int = 1) -> list[int]:
        """Ids of the k nearest stored points to ``x``."""
        if self._size == 0:
            raise ValueError("query on empty index")
        d = state_distance(self.points, np.asarray(x, dtype=float), self.wrap_mask)
        k = min(k, self._size)
        order = np.argsort(d, kind="stable")
        return [int(i) for i in order[:k]]

    def nearest_distances(self, xs: np.ndarray) -> np.ndarray:
        """For each row of ``xs``, distance to its nearest stored point."""
        d = state_distance(
            self.points[None, :, :], np.asarray(xs, dtype=float)[:, None, :], self.wrap_mask
        )
        return d.min(axis=1)

    def nearest_ids(self, xs: np.ndarray) -> np.ndarray:
        """For each row of ``xs``, the id of its nearest stored point."""
        d = state_distance(
            self.points[None, :, :], np.asarray(xs, dtype=float)[:, None, :], self.wrap_mask
        )
        return d.argmin(axis=1)


class Store:
    """Graph + value tree over sampled states for one system."""

    def __init__(
        self,
        system: SystemDef,
        icfg: IntegratorConfig,
        eps_connect: float = 1e-3,
        seed: int | None = None,
    ):
        self.system = system
        self.icfg = icfg
        self.eps_connect = float(eps_connect)
        self.seed = seed
        self.root_id = 0
        self.index = NnIndex(system.n, system.wrap_mask)
        self.cost_to_go: list[float] = []
        self.tree_edge: list[int | None] = []
        self.out_edges: list[list[int]] = []
        self.in_edges: list[list[int]] = []
        self.edges: list[Edge] = []
        root = system.wrap(system.terminal_state)
        self._append_vertex(root)
        self.cost_to_go[0] = 0.0

    # -- vertices ----------------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return len(self.index)

    @property
    def states(self) -> np.ndarray:
        """Read-only view of all vertex states, shape (N, n)."""
        return self.index.points

    def state_of(self, vid: int) -> np.ndarray:
        return self.index.points[vid]

    def _append_vertex(self, x: np.ndarray) -> int:
        self.index.add(x)
        self.cost_to_go.append(np.inf)
        self.tree_edge.append(None)
        self.out_edges.append([])
        self.in_edges.append([])
        return self.num_vertices - 1

    def add_vertex(self, x) -> int:
        """Add a state to the store; it stays at ``J = +inf`` until wired."""
        x = self.system.wrap(x)
        if x.shape != (self.system.n,):
            raise OutOfBoundsError(f"state must have shape ({self.system.n},)")
        if not self.system.state_bounds.contains(x):
            raise OutOfBoundsError(f"state {x.tolist()} outside state bounds")
        return self._append_vertex(np.asarray(x, dtype=float))

    # -- edges -------------------------------------------------------------

    def add_edge(self, src: int, dst: int, control) -> int:
        """Insert a one-step edge after replaying its dynamic feasibility.

        Returns the edge index. A near-duplicate control on the same vertex
        pair returns the existing edge instead of adding another.
        """
        if src == dst:
            raise InfeasibleEdgeError(residual=0.0, eps=self.eps_connect)
        u = np.asarray(control, dtype=float)
        reached = step_forward(self.system, self.icfg, self.state_of(src), u)
        residual = float(self.system.distance(reached, self.state_of(dst)))
        if residual >= self.eps_connect:
            raise InfeasibleEdgeError(residual=residual, eps=self.eps_connect)
        for ei in self.out_edges[src]:
            e = self.edges[ei]
            if e.dst == dst and np.linalg.norm(e.control - u) <= CONTROL_DEDUP_TOL:
                return ei
        cost = float(self.system.stage_cost(self.state_of(src), u))
        self.edges.append(Edge(src=src, dst=dst, control=u, cost=cost, base_cost=cost))
        ei = len(self.edges) - 1
        self.out_edges[src].append(ei)
        self.in_edges[dst].append(ei)
        return ei

    # -- queries -----------------------------------------------------------

    def nearest(self, x, k: int = 1) -> list[int]:
        return self.index.query(x, k)

    def tree_path(self, vid: int) -> list[int]:
        """Vertex ids from ``vid`` to the root following tree edges."""
        path = [vid]
        seen = {vid}
        while path[-1] != self.root_id:
            ei = self.tree_edge[path[-1]]
            if ei is None:
                raise ValueError(f"vertex {path[-1]} has no tree edge")
            nxt = self.edges[ei].dst
            if nxt in seen:
                raise ValueError(f"tree edge cycle through vertex {nxt}")
            seen.add(nxt)
            path.append(nxt)
        return path


def new_store(
    sys: SystemDef,
    icfg: IntegratorConfig | None = None,
    eps_connect: float = 1e-3,
    seed: int | None = None,
) -> Store:
    """Fresh store holding only the root vertex at the terminal state (J=0)."""
    return Store(sys, icfg or IntegratorConfig(), eps_connect=eps_connect, seed=seed)


# -- persistence -------------------------------------------------------------


def _cost_to_json(c: float):
    return "inf" if np.isinf(c) else float(c)


def _cost_from_json(c) -> float:
    if c == "inf":
        return np.inf
    return float(c)


def serialize(store: Store, path) -> None:
    """Write the store as JSON; numeric text round-trips bit-exactly."""
    obj = {
        "format_version": STORE_FORMAT_VERSION,
        "kind": "valtree-store",
        "system": store.system.params,
        "integrator": store.icfg.to_json(),
        "eps_connect": store.eps_connect,
        "seed": store.seed,
        "root_id": store.root_id,
        "vertices": store.states.tolist(),
        "cost_to_go": [_cost_to_json(c) for c in store.cost_to_go],
        "tree_edges": store.tree_edge,
        "edges": [
            [e.src, e.dst, e.control.tolist(), _cost_to_json(e.cost), e.base_cost]
            for e in store.edges
        ],
    }
    Path(path).write_text(json.dumps(obj, separators=(",", ":"), sort_keys=True))


def deserialize(path) -> Store:
    """Load a store written by :func:`serialize`."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"store file not found: {p}")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise StoreFormatError(f"store file is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or obj.get("kind") != "valtree-store":
        raise StoreFormatError("not a store file (missing kind marker)")
    version = obj.get("format_version")
    if version != STORE_FORMAT_VERSION:
        raise StoreVersionError(
            f"unsupported store format version {version!r} "
            f"(this build reads {STORE_FORMAT_VERSION})"
        )
    try:
        icfg = IntegratorConfig.from_json(obj["integrator"])
        sys = system_from_params(obj["system"], icfg.step_dt)
        store = Store(
            sys, icfg, eps_connect=float(obj["eps_connect"]), seed=obj.get("seed")
        )
        store.root_id = int(obj["root_id"])
        vertices = obj["vertices"]
        costs = obj["cost_to_go"]
        tree_edges = obj["tree_edges"]
        if not (len(vertices) == len(costs) == len(tree_edges)) or not vertices:
            raise StoreFormatError("vertex arrays have inconsistent lengths")
        # Rebuild vertex arrays directly; the root row was created by Store().
        store.index = NnIndex(sys.n, sys.wrap_mask)
        store.cost_to_go = [_cost_from_json(c) for c in costs]
        store.tree_edge = [None if t is None else int(t) for t in tree_edges]
        store.out_edges = [[] for _ in vertices]
        store.in_edges = [[] for _ in vertices]
        store.edges = []
        for row in vertices:
            x = np.asarray(row, dtype=float)
            if x.shape != (sys.n,):
                raise StoreFormatError("vertex row has wrong dimension")
            store.index.add(x)
        for row in obj["edges"]:
            src, dst, control, cost, base_cost = row
            e = Edge(
                src=int(src),
                dst=int(dst),
                control=np.asarray(control, dtype=float),
                cost=_cost_from_json(cost),
                base_cost=float(base_cost),
            )
            store.edges.append(e)
            store.out_edges[e.src].append(len(store.edges) - 1)
            store.in_edges[e.dst].append(len(store.edges) - 1)
        for ei in store.tree_edge:
            if ei is not None and not 0 <= ei < len(store.edges):
                raise StoreFormatError(f"tree edge index {ei} out of range")
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, StoreFormatError):
            raise
        raise StoreFormatError(f"store file is corrupt: {exc}") from exc
    return store


# -- invariants ---------------------------------------------------------------


def verify_store(store: Store, check_edges: bool = True) -> None:
    """Assert the structural invariants; raises AssertionError on violation.

    Checks tree consistency (J is exactly the edge cost plus the parent's J),
    acyclicity toward the root, the tree-subset property, and (optionally)
    dynamic feasibility of every edge by replaying the integrator.
    """
    n = store.num_vertices
    root = store.root_id
    assert store.cost_to_go[root] == 0.0, "root must have zero cost-to-go"
    assert store.tree_edge[root] is None, "root must not have a tree edge"
    for v in range(n):
        ei = store.tree_edge[v]
        J = store.cost_to_go[v]
        if v == root:
            continue
        if np.isfinite(J):
            assert ei is not None, f"finite-J vertex {v} lacks a tree edge"
        if ei is not None:
            e = store.edges[ei]
            assert e.src == v and ei in store.out_edges[v], (
                f"tree edge of {v} is not one of its graph out-edges"
            )
            assert J == e.cost + store.cost_to_go[e.dst], (
                f"vertex {v}: J={J!r} != edge cost {e.cost!r} + parent J "
                f"{store.cost_to_go[e.dst]!r}"
            )
            store.tree_path(v)  # raises on cycles / dangling parents
    if check_edges:
        for e in store.edges:
            reached = step_forward(store.system, store.icfg, store.state_of(e.src), e.control)
            residual = float(store.system.distance(reached, store.state_of(e.dst)))
            assert residual < store.eps_connect, (
                f"edge {e.src}->{e.dst} replay residual {residual:.3g} "
                f">= eps {store.eps_connect:.3g}"
            )
            assert e.base_cost >= 0.0
