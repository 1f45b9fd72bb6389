"""Experiment runner: config files in, CSV traces and JSON summaries out.

Subcommands
-----------
``run``    one trace per (algorithm, seed) plus a summary JSON.
``sweep``  parameter-sensitivity table per algorithm (grid or GSS tuning).
``drops``  robustness-to-message-loss table over drop probabilities.

The positional config argument is a JSON file path or the name of a packaged
preset (``case-study``, ``sensitivity``, ``drops``, ``hardware-standin``).
Exit codes: 0 success, 2 config error, 3 every run diverged, 4 incompatible
algorithm/topology pairing.
"""

from __future__ import annotations

import argparse
import json
import math
import statistics
import sys
from importlib import resources
from pathlib import Path

from .algorithms import ALGORITHM_NAMES, AlgorithmSpec, StepSchedule
from .graph import (
    GeometricGraphSpec,
    Graph,
    GraphError,
    TopologySequence,
    complete_graph,
    cycle_graph,
    generate_geometric,
    is_connected,
    path_graph,
    read_edgelist,
)
from .problem import (
    ProblemError,
    build_factored_ls,
    build_target_tracking,
    default_tracking_spec,
    random_factored_ls,
    scalar_consensus,
    simulate_target_data,
    spec_from_json,
    FactoredLeastSquaresSpec,
    TargetTrackingSpec,
)
from .simnet import CompatibilityError, StopRule, run
from .simnet import _atomic_write as atomic_write
from .tuner import SweepRow, TuneSpec, TunerError, grid_sweep, gss_tune

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ALL_DIVERGED = 3
EXIT_INCOMPATIBLE = 4

PRESETS = ("case-study", "sensitivity", "drops", "hardware-standin")
SUMMARY_SCHEMA_VERSION = 1


class ConfigError(Exception):
    """Invalid experiment config; message carries the offending field path."""


def _fail(path: str, msg: str):
    raise ConfigError(f"{path}: {msg}")


def _check_keys(obj, path: str, required: tuple, optional: tuple = ()):
    if not isinstance(obj, dict):
        _fail(path, f"expected an object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - set(required) - set(optional))
    if unknown:
        _fail(path, f"unknown keys {unknown}")
    missing = sorted(set(required) - set(obj))
    if missing:
        _fail(path, f"missing required keys {missing}")


def _get_num(obj, key, path, *, integer=False, positive=False, nonneg=False):
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        _fail(f"{path}.{key}", f"expected a number, got {val!r}")
    if integer and int(val) != val:
        _fail(f"{path}.{key}", f"expected an integer, got {val!r}")
    if positive and not val > 0:
        _fail(f"{path}.{key}", f"must be positive, got {val!r}")
    if nonneg and val < 0:
        _fail(f"{path}.{key}", f"must be >= 0, got {val!r}")
    return int(val) if integer else float(val)


# ---------------------------------------------------------------------------
# Config -> objects
# ---------------------------------------------------------------------------

def build_problem(cfg, path="problem"):
    if "file" in cfg:
        _check_keys(cfg, path, ("file",))
        spec = spec_from_json(Path(cfg["file"]).read_text())
        if isinstance(spec, TargetTrackingSpec):
            return build_target_tracking(spec)
        return build_factored_ls(spec)
    kind = cfg.get("kind")
    if kind == "target_tracking":
        _check_keys(cfg, path, ("kind", "n_robots", "timesteps", "seed"),
                    ("process_noise", "measurement_noise", "dt", "window"))
        spec = default_tracking_spec(
            n_robots=_get_num(cfg, "n_robots", path, integer=True, positive=True),
            timesteps=_get_num(cfg, "timesteps", path, integer=True, positive=True),
            seed=_get_num(cfg, "seed", path, integer=True, nonneg=True),
            dt=float(cfg.get("dt", 1.0)),
            process_noise=float(cfg.get("process_noise", 0.1)),
            measurement_noise=float(cfg.get("measurement_noise", 0.25)),
            window=cfg.get("window"))
        return build_target_tracking(simulate_target_data(spec))
    if kind == "factored_ls":
        _check_keys(cfg, path, ("kind", "n_robots", "dim", "rows", "seed"), ("noise",))
        rows = cfg["rows"]
        if not isinstance(rows, list) or not rows:
            _fail(f"{path}.rows", "expected a non-empty list of measurement counts")
        return build_factored_ls(random_factored_ls(
            n_robots=_get_num(cfg, "n_robots", path, integer=True, positive=True),
            dim=_get_num(cfg, "dim", path, integer=True, positive=True),
            rows=rows,
            seed=_get_num(cfg, "seed", path, integer=True, nonneg=True),
            noise=float(cfg.get("noise", 0.1))))
    if kind == "scalar_consensus":
        _check_keys(cfg, path, ("kind", "targets"))
        targets = cfg["targets"]
        if not isinstance(targets, list) or not targets:
            _fail(f"{path}.targets", "expected a non-empty list")
        return scalar_consensus(targets)
    _fail(f"{path}.kind", f"unknown problem kind {kind!r}; expected "
          "target_tracking, factored_ls, scalar_consensus, or a file reference")


def build_base_graph(cfg, n_robots: int, path="topology.graph") -> Graph:
    if "file" in cfg:
        _check_keys(cfg, path, ("file",))
        g = read_edgelist(cfg["file"])
    else:
        kind = cfg.get("kind")
        if kind == "complete":
            _check_keys(cfg, path, ("kind",), ("require_connected",))
            g = complete_graph(n_robots)
        elif kind == "cycle":
            _check_keys(cfg, path, ("kind",), ("require_connected",))
            g = cycle_graph(n_robots)
        elif kind == "path":
            _check_keys(cfg, path, ("kind",), ("require_connected",))
            g = path_graph(n_robots)
        elif kind == "geometric":
            _check_keys(cfg, path, ("kind", "radius"), ("seed", "require_connected"))
            g = generate_geometric(GeometricGraphSpec(
                n_vertices=n_robots,
                radius=_get_num(cfg, "radius", path, positive=True),
                seed=int(cfg.get("seed", 0))))
        else:
            _fail(f"{path}.kind", f"unknown graph kind {kind!r}")
    if g.n != n_robots:
        _fail(path, f"graph has {g.n} vertices but the problem has {n_robots} robots")
    if cfg.get("require_connected") and not is_connected(g.as_undirected()):
        _fail(path, "graph is not connected (require_connected is set); "
              "pick another seed or a larger radius")
    return g


def build_topology(cfg, n_robots: int, run_seed: int, path="topology",
                   p_override=None, model_override=None) -> TopologySequence:
    _check_keys(cfg, path, ("graph",), ("model", "p", "seed", "window_b"))
    base = build_base_graph(cfg["graph"], n_robots)
    model = model_override or cfg.get("model", "static")
    p = p_override if p_override is not None else float(cfg.get("p", 0.0))
    seed = int(cfg.get("seed", run_seed))
    try:
        return TopologySequence(base=base, model=model, p=p, seed=seed,
                                window_b=int(cfg.get("window_b", 1)))
    except GraphError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def build_algorithm(cfg, path) -> AlgorithmSpec:
    _check_keys(cfg, path, ("name",), ("schedule", "alpha", "rho"))
    name = cfg.get("name")
    if name not in ALGORITHM_NAMES:
        _fail(f"{path}.name", f"unknown algorithm {name!r}; expected one of {ALGORITHM_NAMES}")
    schedule = None
    if "schedule" in cfg:
        sc = cfg["schedule"]
        _check_keys(sc, f"{path}.schedule", ("kind", "alpha0"))
        try:
            schedule = StepSchedule(kind=sc["kind"], alpha0=float(sc["alpha0"]))
        except Exception as exc:
            raise ConfigError(f"{path}.schedule: {exc}") from exc
    try:
        return AlgorithmSpec(name=name, schedule=schedule,
                             alpha=cfg.get("alpha"), rho=cfg.get("rho"))
    except Exception as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def build_stop(cfg, path="stop", max_iters_override=None) -> StopRule:
    _check_keys(cfg, path, ("max_iters",), ("mse_threshold", "residual_threshold"))
    max_iters = _get_num(cfg, "max_iters", path, integer=True, nonneg=True)
    if max_iters_override is not None:
        max_iters = max_iters_override
    return StopRule(max_iters=max_iters,
                    mse_threshold=cfg.get("mse_threshold"),
                    residual_threshold=cfg.get("residual_threshold"))


TOP_LEVEL_REQUIRED = ("problem", "topology", "algorithms", "stop", "seeds")
TOP_LEVEL_OPTIONAL = ("weights", "payload_bytes", "out", "sweep", "drops")


def load_config(arg: str) -> dict:
    """Read a config path or packaged preset name; syntax errors carry line/column."""
    if arg in PRESETS:
        text = resources.files("meshopt").joinpath(f"presets/{arg}.json").read_text()
        source = f"preset {arg}"
    else:
        p = Path(arg)
        if not p.exists():
            raise ConfigError(f"config: no such file {arg!r} "
                              f"(packaged presets: {', '.join(PRESETS)})")
        text = p.read_text()
        source = str(p)
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    _check_keys(cfg, "config", TOP_LEVEL_REQUIRED, TOP_LEVEL_OPTIONAL)
    if not isinstance(cfg["algorithms"], list) or not cfg["algorithms"]:
        _fail("config.algorithms", "expected a non-empty list")
    if not isinstance(cfg["seeds"], list) or not all(
            isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in cfg["seeds"]):
        _fail("config.seeds", "expected a list of non-negative integers")
    if cfg.get("weights", "metropolis") not in ("metropolis", "uniform-row"):
        _fail("config.weights", f"unknown weights policy {cfg.get('weights')!r}")
    return cfg


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _median_or_none(values):
    """Median iterations across seeds; non-converged trials count as +inf."""
    if not values:
        return None
    med = statistics.median([math.inf if v is None else v for v in values])
    return None if math.isinf(med) else med


def _seeds(cfg, args):
    if args.seed_count is not None:
        return list(range(args.seed_count))
    return list(cfg["seeds"])


def _run_one(prob, spec, cfg, args, seed, *, p_override=None, model_override=None):
    topology = build_topology(cfg["topology"], prob.n_robots, seed,
                              p_override=p_override, model_override=model_override)
    stop = build_stop(cfg["stop"], max_iters_override=args.max_iters)
    payload = args.payload_bytes if args.payload_bytes is not None \
        else cfg.get("payload_bytes")
    return run(prob, spec, topology,
               weights_policy=cfg.get("weights", "metropolis"),
               stop=stop, seed=seed, payload_bytes=payload,
               allow_unsupported=args.allow_unsupported)


def cmd_run(cfg, args) -> int:
    prob = build_problem(cfg["problem"])
    specs = [build_algorithm(a, f"config.algorithms[{i}]")
             for i, a in enumerate(cfg["algorithms"])]
    seeds = _seeds(cfg, args)
    out = args.out or cfg.get("out", "meshopt-run")
    mse_threshold = cfg["stop"].get("mse_threshold")
    summary = {"schema_version": SUMMARY_SCHEMA_VERSION, "command": "run",
               "mse_threshold": mse_threshold, "seeds": seeds, "results": {}}
    any_converged = False
    all_diverged = True
    for spec in specs:
        iters_by_seed = {}
        diverged_count = 0
        for seed in seeds:
            trace = _run_one(prob, spec, cfg, args, seed)
            trace.write(f"{out}_{spec.name}_seed{seed}")
            iters = (trace.iterations_to(mse_threshold)
                     if mse_threshold is not None and not trace.diverged else None)
            iters_by_seed[str(seed)] = iters
            diverged_count += int(trace.diverged)
            all_diverged &= trace.diverged
            any_converged |= iters is not None
            status = ("diverged" if trace.diverged
                      else f"iters={iters}" if iters is not None else "not-reached")
            print(f"run {spec.name} seed={seed}: {status} final_mse={trace.final_mse:.3e}")
        summary["results"][spec.name] = {
            "params": spec.describe(),
            "median_iterations": _median_or_none(list(iters_by_seed.values())),
            "iterations": iters_by_seed,
            "diverged": diverged_count,
            "trials": len(seeds),
        }
    atomic_write(f"{out}_summary.json", json.dumps(summary, indent=1, sort_keys=True))
    print(f"summary -> {out}_summary.json")
    if all_diverged and seeds:
        return EXIT_ALL_DIVERGED
    return EXIT_OK


def cmd_sweep(cfg, args) -> int:
    sweep = cfg.get("sweep")
    if sweep is None:
        _fail("config.sweep", "the sweep command needs a sweep block")
    _check_keys(sweep, "config.sweep", (),
                ("grid", "grid_scale", "tune", "mse_threshold"))
    modes = [k for k in ("grid", "grid_scale", "tune") if k in sweep]
    if len(modes) != 1:
        _fail("config.sweep", "provide exactly one of grid, grid_scale, tune")
    if "grid" in sweep and not sweep["grid"]:
        _fail("config.sweep.grid", "grid must not be empty")
    if "grid_scale" in sweep and not sweep["grid_scale"]:
        _fail("config.sweep.grid_scale", "grid_scale must not be empty")
    prob = build_problem(cfg["problem"])
    specs = [build_algorithm(a, f"config.algorithms[{i}]")
             for i, a in enumerate(cfg["algorithms"])]
    seed = _seeds(cfg, args)[0]
    out = args.out or cfg.get("out", "meshopt-sweep")
    mse_threshold = sweep.get("mse_threshold", cfg["stop"].get("mse_threshold", 1e-6))
    max_iters = args.max_iters if args.max_iters is not None else cfg["stop"]["max_iters"]
    weights_policy = cfg.get("weights", "metropolis")
    summary = {"schema_version": SUMMARY_SCHEMA_VERSION, "command": "sweep",
               "mse_threshold": mse_threshold, "results": {}}
    total_rows = 0
    divergent_rows = 0
    for spec in specs:
        topology = build_topology(cfg["topology"], prob.n_robots, seed)
        if "tune" in sweep:
            t = sweep["tune"]
            _check_keys(t, "config.sweep.tune", ("lo", "hi", "budget"))
            tune = TuneSpec(parameter=spec.tunable, lo=float(t["lo"]),
                            hi=float(t["hi"]), budget=int(t["budget"]),
                            mse_threshold=mse_threshold, max_iters=max_iters,
                            seed=seed, weights_policy=weights_policy)
            result = gss_tune(tune, prob, spec, topology)
            rows = [SweepRow(param=p.param,
                             iters=None if not math.isfinite(p.iters) else int(p.iters),
                             diverged=p.diverged)
                    for p in result.probes]
            probe_lines = ["probe,param,iters,diverged"]
            probe_lines += [f"{p.index},{p.param!r},"
                            f"{'' if not math.isfinite(p.iters) else int(p.iters)},"
                            f"{int(p.diverged)}" for p in result.probes]
            atomic_write(f"{out}_{spec.name}_probes.csv", "\n".join(probe_lines) + "\n")
            summary["results"][spec.name] = {
                "best_param": result.best_param, "best_iters": result.best_iters}
            print(f"sweep {spec.name}: tuned {spec.tunable}={result.best_param:.6g} "
                  f"({int(result.best_iters)} iters)")
        else:
            if "grid" in sweep:
                grid = [float(v) for v in sweep["grid"]]
            else:
                center = spec.param_value()
                grid = [center * float(s) for s in sweep["grid_scale"]]
            rows = grid_sweep(grid, prob, spec, topology,
                              mse_threshold=mse_threshold, max_iters=max_iters,
                              seed=seed, weights_policy=weights_policy)
            summary["results"][spec.name] = {
                "grid": grid,
                "diverged": sum(r.diverged for r in rows),
            }
            print(f"sweep {spec.name}: {sum(r.diverged for r in rows)} divergent "
                  f"of {len(rows)} grid points")
        lines = ["param,iters,diverged"]
        for r in rows:
            lines.append(f"{r.param!r},{'' if r.iters is None else r.iters},{int(r.diverged)}")
        atomic_write(f"{out}_{spec.name}_sweep.csv", "\n".join(lines) + "\n")
        total_rows += len(rows)
        divergent_rows += sum(r.diverged for r in rows)
    atomic_write(f"{out}_summary.json", json.dumps(summary, indent=1, sort_keys=True))
    if total_rows and divergent_rows == total_rows:
        return EXIT_ALL_DIVERGED
    return EXIT_OK


def cmd_drops(cfg, args) -> int:
    drops = cfg.get("drops")
    if drops is None:
        _fail("config.drops", "the drops command needs a drops block")
    _check_keys(drops, "config.drops", ("probabilities",), ("directed_for",))
    probabilities = drops["probabilities"]
    if not isinstance(probabilities, list) or not probabilities:
        _fail("config.drops.probabilities", "expected a non-empty list")
    directed_for = drops.get("directed_for", [])
    prob = build_problem(cfg["problem"])
    specs = [build_algorithm(a, f"config.algorithms[{i}]")
             for i, a in enumerate(cfg["algorithms"])]
    for name in directed_for:
        if name not in [s.name for s in specs]:
            _fail("config.drops.directed_for", f"{name!r} is not in config.algorithms")
        if name in ("next-q", "c-admm"):
            # fail fast, before any run: these methods cannot take one-way links
            raise CompatibilityError(
                f"{name} cannot run under directed-drop: it requires "
                + ("a doubly-stochastic mixing matrix at every iteration"
                   if name == "next-q" else "bidirectional communication"))
    seeds = _seeds(cfg, args)
    out = args.out or cfg.get("out", "meshopt-drops")
    mse_threshold = cfg["stop"].get("mse_threshold", 1e-6)
    table = ["algorithm,model,p,median_iters,converged,trials"]
    all_diverged = True
    combos = []
    for spec in specs:
        for p in probabilities:
            combos.append((spec, "undirected-drop" if p > 0 else "static", float(p)))
        if spec.name in directed_for:
            for p in probabilities:
                if p > 0:
                    combos.append((spec, "directed-drop", float(p)))
    for spec, model, p in combos:
        iters_all = []
        for seed in seeds:
            trace = _run_one(prob, spec, cfg, args, seed,
                             p_override=p, model_override=model)
            trace.write(f"{out}_{spec.name}_{model}_p{p:g}_seed{seed}")
            iters = (trace.iterations_to(mse_threshold)
                     if not trace.diverged else None)
            iters_all.append(iters)
            all_diverged &= trace.diverged
        converged = sum(1 for v in iters_all if v is not None)
        med = _median_or_none(iters_all)
        table.append(f"{spec.name},{model},{p!r},"
                     f"{'' if med is None else med},{converged},{len(seeds)}")
        print(f"drops {spec.name} {model} p={p}: {converged}/{len(seeds)} converged, "
              f"median iters={med}")
    atomic_write(f"{out}_drops.csv", "\n".join(table) + "\n")
    return EXIT_ALL_DIVERGED if all_diverged else EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshopt",
        description="Distributed-optimization experiments on simulated mesh networks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("run", cmd_run), ("sweep", cmd_sweep), ("drops", cmd_drops)):
        p = sub.add_parser(name)
        p.add_argument("config",
                       help="JSON config path or preset name "
                            f"({', '.join(PRESETS)})")
        p.add_argument("--seed-count", type=int, default=None,
                       help="replace the seed list with 0..N-1")
        p.add_argument("--max-iters", type=int, default=None,
                       help="override stop.max_iters")
        p.add_argument("--out", default=None, help="output path prefix")
        p.add_argument("--allow-unsupported", action="store_true",
                       help="permit pairings outside a method's supported regime "
                            "(e.g. c-admm on a lossy network)")
        p.add_argument("--payload-bytes", type=int, default=None,
                       help="radio payload size; messages split into ceil(bytes/payload) packets")
        p.set_defaults(handler=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.handler(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ProblemError, GraphError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CompatibilityError as exc:
        print(f"compatibility error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except TunerError as exc:
        print(f"tuning failed: {exc}", file=sys.stderr)
        return EXIT_ALL_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
