"""Figure rendering for the CLI report paths.

Figures are written next to the delimited outputs; matplotlib is imported
lazily with the Agg backend so headless runs and library users who never
plot pay nothing.
"""

from __future__ import annotations

import numpy as np

from .controller import TrajectoryRecord
from .dynamics import TWO_PI
from .graph import Store


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_values(store: Store, path, replicate_wrapped: bool = False) -> None:
    """Scatter of vertex states colored by cost-to-go.

    Unreachable (infinite-cost) vertices appear as a grey shadow. Only the
    first two state dimensions are drawn. With ``replicate_wrapped`` the
    data is repeated one period up and down every wrapped axis.
    """
    plt = _pyplot()
    states = np.array(store.states)
    costs = np.asarray(store.cost_to_go)
    if replicate_wrapped:
        for axis in np.where(store.system.wrap_mask)[0]:
            shifted = []
            for offset in (-TWO_PI, 0.0, TWO_PI):
                copy = states.copy()
                copy[:, axis] += offset
                shifted.append(copy)
            states = np.vstack(shifted)
            costs = np.tile(costs, 3)
    finite = np.isfinite(costs)

    fig, ax = plt.subplots(figsize=(7.0, 5.5))
    if (~finite).any():
        ax.scatter(
            states[~finite, 0],
            states[~finite, 1],
            c="0.7",
            marker="x",
            s=12,
            label="unreachable",
        )
    sc = ax.scatter(
        states[finite, 0], states[finite, 1], c=costs[finite], s=14, cmap="viridis"
    )
    fig.colorbar(sc, ax=ax, label="cost-to-go")
    ax.set_xlabel("x0")
    ax.set_ylabel("x1")
    ax.set_title(f"{store.system.name}: {store.num_vertices} vertices")
    if (~finite).any():
        ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_trajectory(record: TrajectoryRecord, store: Store, path) -> None:
    """State and control traces against the step index, with the goal and
    goal tolerance marked on the state panel."""
    plt = _pyplot()
    goal = store.system.terminal_state
    fig, (ax_x, ax_u) = plt.subplots(2, 1, figsize=(7.5, 6.0), sharex=True)
    steps = np.arange(record.states.shape[0])
    for i in range(record.states.shape[1]):
        ax_x.plot(steps, record.states[:, i], label=f"x{i}")
        ax_x.axhline(goal[i], color="k", linestyle="--", linewidth=0.7)
    ax_x.set_ylabel("state")
    ax_x.legend(loc="best")
    flag = "stabilized" if record.stabilized else "not stabilized"
    ax_x.set_title(
        f"total cost {record.total_cost:.9g}, {flag}, goal tol {record.goal_tol:.3g}"
    )
    if record.steps:
        for j in range(record.controls.shape[1]):
            ax_u.step(
                np.arange(record.steps), record.controls[:, j], where="post", label=f"u{j}"
            )
        ax_u.legend(loc="best")
    ax_u.set_ylabel("control")
    ax_u.set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
