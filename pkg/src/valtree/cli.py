"""Command-line surface: build stores offline, modify them online, export
plot-ready value data, and run closed-loop experiments.

Exit codes: 0 success, 1 invalid config or malformed input file, 2 usage
errors (argparse), 3 missing input file, 4 runtime failures during
simulation or integration. All numeric output is printed with 9 significant
digits. Every CSV starts with a single '#' comment line recording the seed
and config hash; the fixed header row follows.

A JSON config file passed with --config supplies defaults for any long
option (keys use underscores, e.g. {"max_vertices": 2000}); explicit
command-line flags always win.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys as _sys
from pathlib import Path

import numpy as np

from .builder import BuildConfig, SteerConfig, build
from .controller import (
    ControlSearchConfig,
    InterpConfig,
    simulate,
    write_trajectory_csv,
)
from .dynamics import TWO_PI, Box, IntegratorConfig
from .errors import (
    ControllerStarvedError,
    IntegrationDivergedError,
    InvalidParameterError,
    OutOfBoundsError,
    StoreFormatError,
    ValtreeError,
    WeightSchemaError,
)
from .graph import Store, deserialize, new_store, serialize
from .rewire import load_constraints, modify
from .systems import load_mlp, mlp_system, pendulum, single_integrator

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_RUNTIME = 4


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def _config_hash(resolved: dict) -> str:
    canon = json.dumps(resolved, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _print_report(title: str, fields: dict) -> None:
    print(f"report: {title}")
    for key, value in fields.items():
        print(f"  {key}: {_fmt(value)}")


class _Options:
    """Resolves option values as CLI flag > config file > default."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self.args = args
        self.config = config
        self.resolved: dict = {}

    def pick(self, name: str, default=None):
        value = getattr(self.args, name, None)
        if value is None:
            value = self.config.get(name, default)
        self.resolved[name] = value
        return value


def _parse_floats(text: str) -> np.ndarray:
    try:
        return np.asarray([float(v) for v in text.split(",")], dtype=float)
    except ValueError as exc:
        raise InvalidParameterError(f"expected comma-separated floats, got {text!r}") from exc


def _make_system(selector: str, step_dt: float, opts: _Options):
    if selector == "single_integrator":
        limit = float(opts.pick("control_limit", 1.0))
        half = float(opts.pick("state_half_width", 5.0))
        return single_integrator(
            step_dt,
            state_bounds=Box(np.array([-half, -half]), np.array([half, half])),
            control_bounds=Box(np.array([-limit, -limit]), np.array([limit, limit])),
        )
    if selector == "pendulum":
        limit = float(opts.pick("control_limit", 4.0))
        v_max = float(opts.pick("v_max", 4.0))
        return pendulum(limit, v_max=v_max)
    if selector.startswith("mlp:"):
        model = load_mlp(selector[len("mlp:"):])
        limit = float(opts.pick("control_limit", 4.0))
        v_max = float(opts.pick("v_max", 4.0))
        return mlp_system(model, limit, v_max=v_max)
    raise InvalidParameterError(
        f"unknown system {selector!r} (use single_integrator, pendulum or mlp:PATH)"
    )


def write_values_csv(
    store: Store,
    path,
    include_infinite: bool = False,
    replicate_wrapped: bool = False,
    meta: str | None = None,
) -> int:
    """Write one row per vertex: state components then cost-to-go.

    Infinite-cost vertices are omitted unless ``include_infinite`` is set,
    which adds a trailing ``reachable`` column and prints their J as 'inf'.
    ``replicate_wrapped`` repeats the data one period up and down each
    wrapped axis. Returns the number of data rows written.
    """
    states = np.array(store.states)
    costs = np.asarray(store.cost_to_go)
    if replicate_wrapped:
        for axis in np.where(store.system.wrap_mask)[0]:
            blocks = []
            for offset in (-TWO_PI, 0.0, TWO_PI):
                copy = states.copy()
                copy[:, axis] += offset
                blocks.append(copy)
            states = np.vstack(blocks)
            costs = np.tile(costs, 3)
    n = store.system.n
    header = [f"x{i}" for i in range(n)] + ["J"]
    if include_infinite:
        header.append("reachable")
    rows = 0
    with open(path, "w") as fh:
        if meta:
            fh.write(f"# {meta}\n")
        fh.write(",".join(header) + "\n")
        for state, cost in zip(states, costs):
            finite = bool(np.isfinite(cost))
            if not finite and not include_infinite:
                continue
            cells = [f"{v:.9g}" for v in state]
            cells.append(f"{cost:.9g}" if finite else "inf")
            if include_infinite:
                cells.append("1" if finite else "0")
            fh.write(",".join(cells) + "\n")
            rows += 1
    return rows


def _store_stats(store: Store) -> dict:
    costs = np.asarray(store.cost_to_go)
    finite = costs[np.isfinite(costs)]
    stats = {
        "system": store.system.name,
        "vertices": store.num_vertices,
        "edges": len(store.edges),
        "reachable": int(finite.size),
        "unreachable": int(store.num_vertices - finite.size),
        "root_id": store.root_id,
        "eps_connect": store.eps_connect,
        "step_dt": store.icfg.step_dt,
        "sub_dt": store.icfg.sub_dt,
        "seed": store.seed,
    }
    if finite.size:
        stats["J_min"] = float(finite.min())
        stats["J_median"] = float(np.median(finite))
        stats["J_max"] = float(finite.max())
    return stats


# -- subcommands ---------------------------------------------------------------


def _cmd_build(args: argparse.Namespace, config: dict) -> int:
    opts = _Options(args, config)
    step_dt = float(opts.pick("step_dt", 0.1))
    sub_dt = opts.pick("sub_dt", None)
    icfg = IntegratorConfig(step_dt, None if sub_dt is None else float(sub_dt))
    system = _make_system(args.system, step_dt, opts)

    max_vertices = opts.pick("max_vertices", None)
    max_seconds = opts.pick("max_seconds", None)
    goal_region = opts.pick("goal_region", None)
    stops = sum(v is not None for v in (max_vertices, max_seconds, goal_region))
    if stops > 1:
        raise InvalidParameterError("give at most one of --max-vertices/--max-seconds/--goal-region")
    if stops == 0:
        max_vertices = 1000
        opts.resolved["max_vertices"] = 1000
    region = None
    if goal_region is not None:
        vals = _parse_floats(goal_region) if isinstance(goal_region, str) else np.asarray(goal_region, dtype=float)
        if vals.shape[0] != system.n + 1:
            raise InvalidParameterError("--goal-region needs n center values plus a radius")
        region = (vals[:-1], float(vals[-1]))

    seed = int(opts.pick("seed", 0))
    bcfg = BuildConfig(
        max_vertices=None if max_vertices is None else int(max_vertices),
        max_seconds=None if max_seconds is None else float(max_seconds),
        goal_region=region,
        controls_per_expand=int(opts.pick("controls_per_expand", 8)),
        k_parents=int(opts.pick("k_parents", 10)),
        k_children=int(opts.pick("k_children", 10)),
        steer=SteerConfig(max_evals=int(opts.pick("steer_max_evals", 600))),
        rng_seed=seed,
    )
    store = new_store(system, icfg, eps_connect=float(opts.pick("eps_connect", 1e-3)), seed=seed)
    report = build(store, system, bcfg)
    serialize(store, args.out)
    fields = {
        "seed": seed,
        "config_hash": _config_hash(opts.resolved),
        "store": args.out,
        "iterations": report.iterations,
        "vertices": store.num_vertices,
        "edges": len(store.edges),
        "tree_improvements": report.tree_improvements,
        "skipped_expansions": report.skipped_expansions,
        "elapsed_seconds": report.elapsed_seconds,
    }
    fields.update({k: v for k, v in _store_stats(store).items() if k.startswith("J_")})
    _print_report("build", fields)
    return EXIT_OK


def _cmd_modify(args: argparse.Namespace, config: dict) -> int:
    opts = _Options(args, config)
    store = deserialize(args.store)
    cs = load_constraints(args.constraints)
    report = modify(store, store.system, cs)
    out = args.out or args.store
    serialize(store, out)
    _print_report(
        "modify",
        {
            "seed": store.seed,
            "config_hash": _config_hash({"constraints": str(args.constraints), **opts.resolved}),
            "store": out,
            "edges_infinitized": report.edges_infinitized,
            "unreachable": report.unreachable,
            "sweeps": report.sweeps,
            "elapsed_seconds": report.elapsed_seconds,
        },
    )
    return EXIT_OK


def _cmd_export_values(args: argparse.Namespace, config: dict) -> int:
    opts = _Options(args, config)
    store = deserialize(args.store)
    meta = f"seed={store.seed} config={_config_hash(opts.resolved)}"
    rows = write_values_csv(
        store,
        args.out,
        include_infinite=args.include_infinite,
        replicate_wrapped=args.replicate_wrapped,
        meta=meta,
    )
    fields = {"rows": rows, "csv": args.out}
    if not args.no_plot:
        from . import plotting

        fig_path = str(Path(args.out).with_suffix(".png"))
        plotting.plot_values(store, fig_path, replicate_wrapped=args.replicate_wrapped)
        fields["figure"] = fig_path
    _print_report("export-values", fields)
    return EXIT_OK


def _cmd_simulate(args: argparse.Namespace, config: dict) -> int:
    opts = _Options(args, config)
    store = deserialize(args.store)
    plan_sys = store.system
    exec_selector = opts.pick("exec_system", "same")
    if exec_selector in ("same", None):
        exec_sys = plan_sys
    elif exec_selector == "pendulum":
        # Inherit the planning limits so costs stay comparable.
        exec_sys = pendulum(
            float(plan_sys.params.get("control_limit", 4.0)),
            v_max=float(plan_sys.params.get("v_max", 4.0)),
        )
    else:
        exec_sys = _make_system(exec_selector, store.icfg.step_dt, opts)
    if exec_sys.n != plan_sys.n or exec_sys.m != plan_sys.m:
        raise InvalidParameterError("exec system dimensions do not match the store")

    x0 = _parse_floats(args.x0)
    if x0.shape[0] != plan_sys.n:
        raise InvalidParameterError(f"--x0 needs {plan_sys.n} components")
    gamma = opts.pick("gamma", None)
    icfg = (
        InterpConfig.for_store(store, fallback=opts.pick("fallback", "nearest"))
        if gamma is None
        else InterpConfig(float(gamma), fallback=opts.pick("fallback", "nearest"))
    )
    scfg = ControlSearchConfig(eps_alpha=float(opts.pick("eps_alpha", 1e-4)))
    record = simulate(
        store,
        plan_sys,
        exec_sys,
        icfg,
        scfg,
        x0,
        horizon=int(opts.pick("horizon", 600)),
        goal_tol=float(opts.pick("goal_tol", 0.05)),
    )
    meta = f"seed={store.seed} config={_config_hash(opts.resolved)}"
    fields = {
        "seed": store.seed,
        "config_hash": _config_hash(opts.resolved),
        "gamma": icfg.gamma,
        "steps": record.steps,
        "total_cost": record.total_cost,
        "steps_to_goal": record.steps_to_goal,
        "stabilized": record.stabilized,
        "diverged": record.diverged,
        "final_state": ",".join(f"{v:.9g}" for v in record.final_state),
    }
    if record.control_seconds.size:
        fields["control_seconds_mean"] = float(record.control_seconds.mean())
        fields["control_seconds_std"] = float(record.control_seconds.std())
    if args.out:
        write_trajectory_csv(record, args.out, meta=meta)
        fields["csv"] = args.out
        if not args.no_plot:
            from . import plotting

            fig_path = str(Path(args.out).with_suffix(".png"))
            plotting.plot_trajectory(record, store, fig_path)
            fields["figure"] = fig_path
    _print_report("simulate", fields)
    return EXIT_OK


def _cmd_inspect(args: argparse.Namespace, config: dict) -> int:
    store = deserialize(args.store)
    _print_report("inspect", _store_stats(store))
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="valtree",
        description="Sampled backward-in-time value trees with graph rewiring "
        "and an interpolated feedback controller.",
    )
    parser.add_argument("--config", help="JSON file supplying option defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build", help="construct a store offline")
    p_build.add_argument("--system", required=True, help="single_integrator | pendulum | mlp:PATH")
    p_build.add_argument("--out", required=True, help="store file to write")
    p_build.add_argument("--max-vertices", dest="max_vertices", type=int)
    p_build.add_argument("--max-seconds", dest="max_seconds", type=float)
    p_build.add_argument("--goal-region", dest="goal_region", help="cx,...,radius")
    p_build.add_argument("--seed", type=int)
    p_build.add_argument("--step-dt", dest="step_dt", type=float)
    p_build.add_argument("--sub-dt", dest="sub_dt", type=float)
    p_build.add_argument("--eps-connect", dest="eps_connect", type=float)
    p_build.add_argument("--control-limit", dest="control_limit", type=float)
    p_build.add_argument("--v-max", dest="v_max", type=float)
    p_build.add_argument("--state-half-width", dest="state_half_width", type=float)
    p_build.add_argument("--controls-per-expand", dest="controls_per_expand", type=int)
    p_build.add_argument("--k-parents", dest="k_parents", type=int)
    p_build.add_argument("--k-children", dest="k_children", type=int)
    p_build.add_argument("--steer-max-evals", dest="steer_max_evals", type=int)
    p_build.set_defaults(func=_cmd_build)

    p_mod = sub.add_parser("modify", help="apply constraints and rebuild the tree")
    p_mod.add_argument("--store", required=True)
    p_mod.add_argument("--constraints", required=True, help="constraint JSON file")
    p_mod.add_argument("--out", help="write here instead of updating in place")
    p_mod.set_defaults(func=_cmd_modify)

    p_exp = sub.add_parser("export-values", help="write (state..., J) CSV and figure")
    p_exp.add_argument("--store", required=True)
    p_exp.add_argument("--out", required=True, help="CSV file to write")
    p_exp.add_argument("--include-infinite", action="store_true")
    p_exp.add_argument("--replicate-wrapped", action="store_true")
    p_exp.add_argument("--no-plot", action="store_true")
    p_exp.set_defaults(func=_cmd_export_values)

    p_sim = sub.add_parser("simulate", help="closed-loop rollout with the stored policy")
    p_sim.add_argument("--store", required=True)
    p_sim.add_argument("--x0", required=True, help="comma-separated initial state")
    p_sim.add_argument("--horizon", type=int)
    p_sim.add_argument("--exec-system", dest="exec_system", help="same | pendulum | single_integrator | mlp:PATH")
    p_sim.add_argument("--goal-tol", dest="goal_tol", type=float)
    p_sim.add_argument("--gamma", type=float)
    p_sim.add_argument("--fallback", choices=["nearest", "reject"])
    p_sim.add_argument("--eps-alpha", dest="eps_alpha", type=float)
    p_sim.add_argument("--out", help="trajectory CSV file")
    p_sim.add_argument("--no-plot", action="store_true")
    p_sim.set_defaults(func=_cmd_simulate)

    p_ins = sub.add_parser("inspect", help="print store statistics")
    p_ins.add_argument("--store", required=True)
    p_ins.set_defaults(func=_cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    config = {}
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.is_file():
            print(f"error: config file not found: {cfg_path}", file=_sys.stderr)
            return EXIT_MISSING_FILE
        try:
            config = json.loads(cfg_path.read_text())
        except json.JSONDecodeError as exc:
            print(f"error: config file is not valid JSON: {exc}", file=_sys.stderr)
            return EXIT_INVALID
        if not isinstance(config, dict):
            print("error: config file must hold a JSON object", file=_sys.stderr)
            return EXIT_INVALID
    try:
        return args.func(args, config)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_MISSING_FILE
    except (ControllerStarvedError, IntegrationDivergedError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_RUNTIME
    except (
        StoreFormatError,
        WeightSchemaError,
        InvalidParameterError,
        OutOfBoundsError,
        ValtreeError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    raise SystemExit(main())
