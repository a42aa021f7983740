"""Offline store construction: backward expansion from the terminal state,
connection search with derivative-free steering, and recursive value updates.

Steering is the hot path, so the pattern searches for a whole candidate set
advance in lockstep: every round folds all still-active searches' probes into
one batched integrator call. Results are identical to running the searches
one at a time because each search only consumes its own rows (and the RNG is
always drawn in candidate-index order).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SystemDef, state_difference, state_distance, step_backward, step_forward
from .errors import InvalidParameterError
from .graph import Store

# Steering keeps refining until the residual drops below this fraction of
# eps_connect; cheap insurance that connection errors accumulate slowly
# along deep paths.
REFINE_FRACTION = 0.1
# A finished search pass whose residual is above MISS_FACTOR * eps_connect
# is treated as unreachable and not restarted.
MISS_FACTOR = 10.0
MAX_RESTARTS = 2
# Abandon a search early once the step has shrunk this far below its start
# while the residual still sits above MISS_FACTOR * eps_connect: the target
# is outside the one-step reachable set and the remaining ladder cannot
# rescue it.
EARLY_ABANDON_SHRINKS = 6
# Seeded searches start near a solution, so they open with a smaller step.
SEEDED_ALPHA_FRACTION = 0.125
# Fixed-point preimage refinement: iteration cap and residual target.
PREIMAGE_MAX_ITERS = 60


def _exact_preimage(
    sys: SystemDef,
    icfg,
    starts: np.ndarray,
    controls: np.ndarray,
    target: np.ndarray,
    tol: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Refine backward-integrated states so their forward replay hits
    ``target`` (one row per start) to within ``tol``.

    Fixed-point iteration x <- x - (f+(x, u) - target) using only forward
    evaluations; it contracts whenever ``step_dt`` times the dynamics'
    Lipschitz constant is below one, which holds for any sanely discretized
    system. Returns the refined states and their final replay residuals.
    """
    x = np.array(starts, dtype=float, copy=True)
    target = np.atleast_2d(target)
    mask = sys.wrap_mask
    resid = np.full(x.shape[0], np.inf)
    for _ in range(PREIMAGE_MAX_ITERS):
        err = state_difference(step_forward(sys, icfg, x, controls), target, mask)
        resid = np.linalg.norm(err, axis=-1)
        if (resid < tol).all():
            break
        x = sys.wrap(x - err)
    return x, resid


@dataclass(frozen=True)
class SteerConfig:
    """Pattern-search settings for one-step connection refinement.

    ``alpha0`` defaults to a quarter of the control box diameter and
    ``n_directions`` (the number of random probe directions, on top of the
    2m signed coordinate axes) defaults to 2m; both are resolved against the
    system when the search runs.
    """

    alpha0: float | None = None
    shrink: float = 2.0
    eps_alpha: float = 1e-4
    n_directions: int | None = None
    max_evals: int = 600

    def __post_init__(self):
        if self.shrink <= 1:
            raise InvalidParameterError("shrink must exceed 1")
        if self.eps_alpha <= 0:
            raise InvalidParameterError("eps_alpha must be positive")
        if self.alpha0 is not None and self.alpha0 <= self.eps_alpha:
            raise InvalidParameterError("alpha0 must exceed eps_alpha")
        if self.max_evals < 1:
            raise InvalidParameterError("max_evals must be at least 1")


@dataclass(frozen=True)
class BuildConfig:
    """Build-loop settings; exactly one stop criterion must be set."""

    max_vertices: int | None = None
    max_seconds: float | None = None
    goal_region: tuple | None = None  # (center, radius)
    controls_per_expand: int = 8
    k_parents: int = 10
    k_children: int = 10
    probes_per_connect: int = 8
    steer: SteerConfig = field(default_factory=SteerConfig)
    rng_seed: int = 0

    def __post_init__(self):
        stops = [
            self.max_vertices is not None,
            self.max_seconds is not None,
            self.goal_region is not None,
        ]
        if sum(stops) != 1:
            raise InvalidParameterError("exactly one stop criterion must be set")
        if min(self.controls_per_expand, self.k_parents, self.k_children) < 1:
            raise InvalidParameterError("sampling counts must be at least 1")
        if self.probes_per_connect < 0:
            raise InvalidParameterError("probes_per_connect must be nonnegative")


@dataclass
class BuildReport:
    iterations: int
    vertices_added: int
    edges_added: int
    tree_improvements: int
    skipped_expansions: int
    elapsed_seconds: float


def _resolve_steer(sys: SystemDef, scfg: SteerConfig) -> tuple[float, int]:
    alpha0 = scfg.alpha0
    if alpha0 is None:
        alpha0 = 0.25 * sys.control_bounds.diameter
    n_random = scfg.n_directions
    if n_random is None:
        n_random = 2 * sys.m
    elif n_random < 2 * sys.m:
        raise InvalidParameterError("n_directions must be at least 2m")
    return float(alpha0), int(n_random)


def _direction_set(m: int, n_random: int, rng: np.random.Generator) -> np.ndarray:
    """Signed coordinate axes plus mirrored random unit directions."""
    axes = np.concatenate([np.eye(m), -np.eye(m)], axis=0)
    half = (n_random + 1) // 2
    raw = rng.standard_normal((half, m))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    units = raw / norms
    rand = np.concatenate([units, -units], axis=0)[:n_random]
    return np.concatenate([axes, rand], axis=0)


def _steer_many(
    sys: SystemDef,
    icfg,
    scfg: SteerConfig,
    eps_connect: float,
    froms: np.ndarray,
    targets: np.ndarray,
    direction: str,
    rng: np.random.Generator,
    seeds: np.ndarray | None = None,
) -> list[tuple[np.ndarray | None, float]]:
    """Run independent one-step steering searches in lockstep.

    Returns one ``(control, residual)`` pair per row of ``froms``/``targets``;
    the control is None when the final residual is not below ``eps_connect``.
    """
    if direction not in ("forward", "backward"):
        raise InvalidParameterError("direction must be 'forward' or 'backward'")
    step = step_forward if direction == "forward" else step_backward
    froms = np.atleast_2d(np.asarray(froms, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    count, m = froms.shape[0], sys.m
    lo, hi = sys.control_bounds.lo, sys.control_bounds.hi
    alpha0, n_random = _resolve_steer(sys, scfg)
    stop_tol = eps_connect * REFINE_FRACTION

    if seeds is None:
        u = np.zeros((count, m))
        alpha_start = np.full(count, alpha0)
    else:
        u = np.clip(np.atleast_2d(np.asarray(seeds, dtype=float)).copy(), lo, hi)
        seeded = np.abs(u).max(axis=1) > 0.0
        alpha_start = np.where(seeded, SEEDED_ALPHA_FRACTION * alpha0, alpha0)
    resid = sys.distance(step(sys, icfg, froms, u), targets)
    evals = np.ones(count, dtype=int)
    alpha = alpha_start.copy()
    dirs = np.stack([_direction_set(m, n_random, rng) for _ in range(count)])
    restarts = np.zeros(count, dtype=int)
    done = resid <= stop_tol
    n_dirs = dirs.shape[1]
    abandon_factor = float(scfg.shrink) ** EARLY_ABANDON_SHRINKS

    while True:
        active = np.where(~done & (evals < scfg.max_evals))[0]
        if active.size == 0:
            break
        probes = u[active, None, :] + alpha[active, None, None] * dirs[active]
        np.clip(probes, lo, hi, out=probes)
        flat = probes.reshape(-1, m)
        x1 = step(sys, icfg, np.repeat(froms[active], n_dirs, axis=0), flat)
        r = sys.distance(x1, np.repeat(targets[active], n_dirs, axis=0))
        r = r.reshape(active.size, n_dirs)
        evals[active] += n_dirs
        best_k = np.argmin(r, axis=1)
        best_r = r[np.arange(active.size), best_k]
        improved = best_r < resid[active]
        moved = active[improved]
        u[moved] = probes[improved, best_k[improved], :]
        resid[moved] = best_r[improved]
        alpha[active[~improved]] /= scfg.shrink

        done |= resid <= stop_tol
        done |= (alpha < alpha_start / abandon_factor) & (
            resid > MISS_FACTOR * eps_connect
        )
        ended = np.where(~done & (alpha <= scfg.eps_alpha))[0]
        to_restart = []
        for c in ended:
            if resid[c] < eps_connect:
                done[c] = True
            elif (
                resid[c] < MISS_FACTOR * eps_connect
                and restarts[c] < MAX_RESTARTS
                and evals[c] < scfg.max_evals
            ):
                to_restart.append(c)
            else:
                done[c] = True
        if to_restart:
            for c in to_restart:  # ascending index keeps RNG use deterministic
                u[c] = rng.uniform(lo, hi)
                dirs[c] = _direction_set(m, n_random, rng)
                alpha[c] = alpha0
                alpha_start[c] = alpha0
                restarts[c] += 1
            rows = np.array(to_restart)
            r0 = sys.distance(step(sys, icfg, froms[rows], u[rows]), targets[rows])
            resid[rows] = r0
            evals[rows] += 1
            done[rows] |= resid[rows] <= stop_tol

    return [
        (u[c] if resid[c] < eps_connect else None, float(resid[c]))
        for c in range(count)
    ]


def steer(
    sys: SystemDef,
    scfg: SteerConfig,
    from_state,
    target,
    direction: str,
    *,
    icfg,
    eps_connect: float,
    rng: np.random.Generator | None = None,
    seed_control=None,
) -> np.ndarray | None:
    """Find a control taking ``from_state`` to within eps of ``target``.

    ``direction`` selects forward or backward integration. Returns the
    control, or None when the pattern search could not close the gap (a
    normal outcome for unreachable targets).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    seeds = None if seed_control is None else np.atleast_2d(seed_control)
    result = _steer_many(
        sys,
        icfg,
        scfg,
        eps_connect,
        np.atleast_2d(from_state),
        np.atleast_2d(target),
        direction,
        rng,
        seeds=seeds,
    )
    return result[0][0]


def expand_backward(
    store: Store, sys: SystemDef, cfg: BuildConfig, rng: np.random.Generator | None = None
) -> int | None:
    """One backward expansion: sample, pick the coverage-maximizing candidate,
    wire it to its forward neighbor, and return the new vertex id.

    Returns None when every candidate fell outside the state bounds or
    failed the connection polish (the iteration is skipped, not fatal).
    """
    rng = np.random.default_rng(cfg.rng_seed) if rng is None else rng
    x_sample = sys.state_bounds.sample(rng)
    near = store.nearest(x_sample, 1)[0]
    controls = sys.control_bounds.sample(rng, cfg.controls_per_expand)
    anchor = np.tile(store.state_of(near), (cfg.controls_per_expand, 1))
    candidates = step_backward(sys, store.icfg, anchor, controls)
    in_bounds = np.asarray(sys.state_bounds.contains(candidates))
    if not in_bounds.any():
        return None
    keep = np.where(in_bounds)[0]
    # Backward Euler only inverts the forward step to O(sub_dt), so pin each
    # candidate to the exact preimage of the anchor vertex under its control;
    # the stored edge then replays within any tolerance.
    tol = min(1e-9, REFINE_FRACTION * store.eps_connect)
    refined, resid = _exact_preimage(
        sys, store.icfg, candidates[keep], controls[keep], store.state_of(near), tol
    )
    usable = (
        (resid < tol)
        & np.asarray(sys.state_bounds.contains(refined))
        & np.isfinite(refined).all(axis=-1)
    )
    if not usable.any():
        return None
    spread = store.index.nearest_distances(refined)
    spread[~usable] = -np.inf
    row = int(np.argmax(spread))
    vid = store.add_vertex(refined[row])
    ei = store.add_edge(vid, near, controls[keep[row]])
    store.cost_to_go[vid] = store.edges[ei].cost + store.cost_to_go[near]
    store.tree_edge[vid] = ei
    return vid


def _nearest_excluding(store: Store, x, k: int, skip: int) -> list[int]:
    found = store.nearest(x, k + 1)
    return [i for i in found if i != skip][:k]


def _candidate_set(
    store: Store,
    sys: SystemDef,
    cfg: BuildConfig,
    v: int,
    direction: str,
    rng: np.random.Generator,
) -> tuple[list[int], np.ndarray]:
    """Candidate vertices for one-step connection from/to ``v``.

    Union of the k nearest vertices (steered from a zero seed) and the
    vertices nearest to the images of probes_per_connect sampled controls
    (steered from the control that produced the image, which lands the
    search right next to a solution whenever one exists). The image
    anchor is what keeps the graph dense: the k nearest vertices of ``v``
    are mostly outside the one-step reachable set once the store grows.
    """
    k = cfg.k_parents if direction == "forward" else cfg.k_children
    step = step_forward if direction == "forward" else step_backward
    xv = store.state_of(v)
    seeds: dict[int, np.ndarray] = {}
    for vid in _nearest_excluding(store, xv, k, v):
        seeds[vid] = np.zeros(sys.m)
    if cfg.probes_per_connect > 0:
        controls = sys.control_bounds.sample(rng, cfg.probes_per_connect)
        images = step(sys, store.icfg, np.tile(xv, (cfg.probes_per_connect, 1)), controls)
        dist = state_distance(
            store.states[None, :, :], images[:, None, :], sys.wrap_mask
        )
        dist[:, v] = np.inf  # an image's nearest vertex is usually v itself
        for row, vid in enumerate(dist.argmin(axis=1)):
            seeds[int(vid)] = controls[row]
    ids = list(seeds)
    return ids, np.array([seeds[i] for i in ids]).reshape(len(ids), sys.m)


def find_connections(
    store: Store,
    sys: SystemDef,
    cfg: BuildConfig,
    v: int,
    rng: np.random.Generator | None = None,
) -> tuple[int, int]:
    """Connect ``v`` to candidate vertices in both directions.

    Steers forward from ``v`` toward each parent candidate (success adds
    edge v -> candidate) and backward toward each child candidate (success
    adds candidate -> v, after a forward polish from the candidate so the
    stored edge replays within tolerance). Returns the number of parent and
    child edges actually added.
    """
    rng = np.random.default_rng(cfg.rng_seed) if rng is None else rng
    xv = store.state_of(v)
    parents_added = 0
    children_added = 0

    parent_ids, parent_seeds = _candidate_set(store, sys, cfg, v, "forward", rng)
    if parent_ids:
        targets = store.states[parent_ids]
        froms = np.tile(xv, (len(parent_ids), 1))
        for cand, (u, _) in zip(
            parent_ids,
            _steer_many(
                sys,
                store.icfg,
                cfg.steer,
                store.eps_connect,
                froms,
                targets,
                "forward",
                rng,
                seeds=parent_seeds,
            ),
        ):
            if u is not None:
                before = len(store.edges)
                store.add_edge(v, cand, u)
                parents_added += len(store.edges) - before

    child_ids, child_seeds = _candidate_set(store, sys, cfg, v, "backward", rng)
    if child_ids:
        targets = store.states[child_ids]
        froms = np.tile(xv, (len(child_ids), 1))
        hits = [
            (cand, u)
            for cand, (u, _) in zip(
                child_ids,
                _steer_many(
                    sys,
                    store.icfg,
                    cfg.steer,
                    store.eps_connect,
                    froms,
                    targets,
                    "backward",
                    rng,
                    seeds=child_seeds,
                ),
            )
            if u is not None
        ]
        if hits:
            # Backward steering bounds |f-(v, u) - child|; the edge invariant
            # needs the forward replay from the child, so polish that way.
            child_states = store.states[[c for c, _ in hits]]
            seeds = np.stack([u for _, u in hits])
            polished = _steer_many(
                sys,
                store.icfg,
                cfg.steer,
                store.eps_connect,
                child_states,
                np.tile(xv, (len(hits), 1)),
                "forward",
                rng,
                seeds=seeds,
            )
            for (cand, _), (u, _) in zip(hits, polished):
                if u is not None:
                    before = len(store.edges)
                    store.add_edge(cand, v, u)
                    children_added += len(store.edges) - before
    return parents_added, children_added


def update_tree(store: Store, v: int) -> int:
    """Local value relaxation starting at ``v``.

    Adopts the best outgoing edge wherever it strictly lowers cost-to-go,
    then keeps descending into in-neighbors that can improve through the
    updated vertex. Returns how many distinct vertices improved. Strict
    decrease on a finite store guarantees termination.
    """
    improved: set[int] = set()
    stack = [v]
    while stack:
        w = stack.pop()
        if w != store.root_id:
            best_edge = None
            best_val = store.cost_to_go[w]
            for ei in store.out_edges[w]:
                e = store.edges[ei]
                candidate = e.cost + store.cost_to_go[e.dst]
                if candidate < best_val:
                    best_val = candidate
                    best_edge = ei
            if best_edge is not None:
                store.cost_to_go[w] = best_val
                store.tree_edge[w] = best_edge
                improved.add(w)
        j_w = store.cost_to_go[w]
        for ei in store.in_edges[w]:
            e = store.edges[ei]
            if e.cost + j_w < store.cost_to_go[e.src]:
                stack.append(e.src)
    return len(improved)


def build(
    store: Store,
    sys: SystemDef,
    cfg: BuildConfig,
    on_iteration=None,
) -> BuildReport:
    """Run the main construction loop until the stop criterion fires.

    Anytime semantics: the store satisfies all graph invariants on return
    no matter when the criterion triggers. ``on_iteration(store, k)`` is
    called after each iteration (instrumentation hook).
    """
    rng = np.random.default_rng(cfg.rng_seed)
    store.seed = cfg.rng_seed
    start = time.perf_counter()
    vertices_before = store.num_vertices
    edges_before = len(store.edges)
    iterations = 0
    skipped = 0
    improvements = 0

    def finished() -> bool:
        if cfg.max_vertices is not None:
            return store.num_vertices >= cfg.max_vertices
        if cfg.max_seconds is not None:
            return time.perf_counter() - start >= cfg.max_seconds
        center, radius = cfg.goal_region
        costs = np.asarray(store.cost_to_go)
        dist = sys.distance(store.states, np.asarray(center, dtype=float))
        return bool(((dist < radius) & np.isfinite(costs)).any())

    while not finished():
        iterations += 1
        vid = expand_backward(store, sys, cfg, rng=rng)
        if vid is None:
            skipped += 1
        else:
            find_connections(store, sys, cfg, vid, rng=rng)
            improvements += update_tree(store, vid)
        if on_iteration is not None:
            on_iteration(store, iterations)

    return BuildReport(
        iterations=iterations,
        vertices_added=store.num_vertices - vertices_before,
        edges_added=len(store.edges) - edges_before,
        tree_improvements=improvements,
        skipped_expansions=skipped,
        elapsed_seconds=time.perf_counter() - start,
    )
