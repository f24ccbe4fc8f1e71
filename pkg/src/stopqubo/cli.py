"""Command-line front end.

Every subcommand reads a JSON config, validates it completely, and writes
its outputs plus the resolved config under ``<out>/<command>-<digest>/``,
where the digest is a hash of the resolved config. Reruns with the same
config and seed therefore overwrite the same directory with identical bytes.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, qubo, solvers, spatial, topsis

log = logging.getLogger("stopqubo")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4

DEFAULTS = {
    "demand": None,
    "facilities": None,
    "r0": 500.0,
    "r1": 400.0,
    "alpha": 1.0,
    "beta": 1.0,
    "gamma": "auto",
    "p": None,
    "batch_size": 5,
    "quota": None,
    "criteria": None,
    "solver": {},
    "seed": 0,
    "out": "runs",
    "p_values": None,
    "n_instances": 30,
    "max_offset": 150.0,
    "significance": 0.05,
    "sic_mode": "local-search",
    "dwell_seconds": 45.0,
    "penalty_seconds": 0.0,
}
SOLVER_DEFAULTS = {
    "max_iterations": 20,
    "max_time": 60.0,
    "subproblem_size": 10,
    "backend": "exhaustive",
    "parallel": False,
}


class ConfigError(ValueError):
    pass


def load_config(path: str | Path | None, overrides: dict) -> dict:
    """Merge defaults, the config file and command-line overrides, then validate."""
    cfg = json.loads(json.dumps(DEFAULTS))
    base = Path(".")
    if path is not None:
        path = Path(path)
        try:
            user = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(user) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        cfg.update(user)
        base = path.parent
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("demand", "facilities"):
        if cfg[key] is not None:
            cfg[key] = str((base / cfg[key]).resolve()) if not Path(cfg[key]).is_absolute() else cfg[key]
    solver = dict(SOLVER_DEFAULTS)
    unknown = sorted(set(cfg["solver"]) - set(SOLVER_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown solver key(s): {', '.join(unknown)}")
    solver.update(cfg["solver"])
    cfg["solver"] = solver
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    for key in ("demand", "facilities"):
        if cfg[key] is None:
            raise ConfigError(f"config key {key!r} is required")
        if not Path(cfg[key]).is_file():
            raise ConfigError(f"{key} file not found: {cfg[key]}")
    for key in ("r0", "r1", "max_offset", "dwell_seconds", "penalty_seconds"):
        if not isinstance(cfg[key], (int, float)) or cfg[key] < 0:
            raise ConfigError(f"{key} must be a non-negative number")
    if not isinstance(cfg["alpha"], (int, float)) or cfg["alpha"] < 0:
        raise ConfigError("alpha must be >= 0")
    if not isinstance(cfg["beta"], (int, float)) or cfg["beta"] <= 0:
        raise ConfigError("beta must be > 0")
    if cfg["gamma"] != "auto" and (not isinstance(cfg["gamma"], (int, float)) or cfg["gamma"] <= 0):
        raise ConfigError("gamma must be 'auto' or a positive number")
    for key in ("p", "quota"):
        if cfg[key] is not None and (not isinstance(cfg[key], int) or cfg[key] < 1):
            raise ConfigError(f"{key} must be a positive integer")
    if not isinstance(cfg["batch_size"], int) or cfg["batch_size"] < 1:
        raise ConfigError("batch_size must be a positive integer")
    if cfg["p_values"] is not None and (
        not isinstance(cfg["p_values"], list) or not all(isinstance(p, int) and p >= 1 for p in cfg["p_values"])
    ):
        raise ConfigError("p_values must be a list of positive integers")
    if not isinstance(cfg["n_instances"], int) or cfg["n_instances"] < 1:
        raise ConfigError("n_instances must be a positive integer")
    if not isinstance(cfg["seed"], int) or not 0 <= cfg["seed"] < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg["sic_mode"] not in ("local-search", "exhaustive"):
        raise ConfigError("sic_mode must be 'local-search' or 'exhaustive'")
    s = cfg["solver"]
    if not isinstance(s["max_iterations"], int) or s["max_iterations"] < 1:
        raise ConfigError("solver.max_iterations must be a positive integer")
    if not isinstance(s["max_time"], (int, float)) or s["max_time"] <= 0:
        raise ConfigError("solver.max_time must be > 0")
    if not isinstance(s["subproblem_size"], int) or s["subproblem_size"] < 1:
        raise ConfigError("solver.subproblem_size must be a positive integer")
    if s["backend"] not in ("exhaustive", "sa"):
        raise ConfigError("solver.backend must be 'exhaustive' or 'sa'")
    crit = cfg["criteria"]
    if crit is not None:
        if not isinstance(crit, dict) or "names" not in crit or "weights" not in crit:
            raise ConfigError("criteria needs 'names' and 'weights'")
        try:
            topsis.CriteriaSpec(crit["names"], crit["weights"], crit.get("directions"))
        except ValueError as exc:
            raise ConfigError(f"criteria: {exc}") from None


# --- shared steps -----------------------------------------------------------


def _run_dir(cfg: dict, command: str) -> Path:
    blob = json.dumps(cfg, sort_keys=True).encode()
    digest = hashlib.sha256(command.encode() + b"\0" + blob).hexdigest()[:12]
    out = Path(cfg["out"]) / f"{command}-{digest}"
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg)
    return out


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_model(cfg: dict) -> spatial.SpatialModel:
    return spatial.load_instance(cfg["demand"], cfg["facilities"], cfg["r0"], cfg["r1"])


def _weights(cfg: dict, model: spatial.SpatialModel) -> np.ndarray:
    crit = cfg["criteria"]
    if crit is not None:
        spec = topsis.CriteriaSpec(crit["names"], crit["weights"], crit.get("directions"))
        return topsis.topsis_rank(topsis.alternatives_matrix(model.facilities, spec.names), spec)
    if all(f.weight is not None for f in model.facilities):
        return model.weights()
    log.info("no criteria and no weight column; using unit weights")
    return np.ones(model.n_facilities)


def _params(cfg: dict, p: int) -> qubo.ModelParams:
    gamma = None if cfg["gamma"] == "auto" else float(cfg["gamma"])
    return qubo.ModelParams(p, float(cfg["alpha"]), float(cfg["beta"]), gamma)


def _partition(cfg: dict, n: int, p: int) -> qubo.PartitionScheme:
    batch = min(cfg["batch_size"], n)
    if cfg["quota"] is not None:
        part = qubo.make_route_partition(n, batch, min(cfg["quota"], batch))
        if part.p != p:
            raise ConfigError(f"batch_size/quota give p={part.p}, config p={p}")
        return part
    return qubo.partition_for_p(n, p, batch)


def _solver(cfg: dict, seed: int) -> tuple[solvers.SolverConfig, solvers.AnnealerBackend]:
    s = cfg["solver"]
    config = solvers.SolverConfig(
        max_iterations=s["max_iterations"],
        max_time=float(s["max_time"]),
        subproblem_size=s["subproblem_size"],
        seed=seed,
        parallel=bool(s["parallel"]),
    )
    return config, solvers.default_backends(seed)[s["backend"]]


def _require_p(cfg: dict, model: spatial.SpatialModel) -> int:
    p = cfg["p"]
    if p is None:
        raise ConfigError("config key 'p' is required for this command")
    if p > model.n_facilities:
        raise ConfigError(f"p={p} exceeds the {model.n_facilities} facilities")
    return p


def _p_values(cfg: dict, model: spatial.SpatialModel) -> list[int]:
    pv = cfg["p_values"] or list(range(1, model.n_facilities + 1))
    bad = [p for p in pv if p > model.n_facilities]
    if bad:
        raise ConfigError(f"p_values {bad} exceed the {model.n_facilities} facilities")
    return pv


# --- commands ---------------------------------------------------------------


def cmd_ingest(cfg: dict) -> int:
    model = _load_model(cfg)
    out = _run_dir(cfg, "ingest")
    m = model.competitor_counts
    sizes = [a.size for a in model.demand_neighborhoods]
    summary = {
        "facilities": model.n_facilities,
        "demand_nodes": model.n_demand,
        "competitor_histogram": {str(k): int(v) for k, v in enumerate(np.bincount(m))},
        "demand_neighborhood_min": int(min(sizes)),
        "demand_neighborhood_max": int(max(sizes)),
        "demand_neighborhood_mean": float(np.mean(sizes)),
        "all_active_covered": analysis.coverage_profile(model, np.ones(model.n_facilities, int)).covered_count,
    }
    _write_json(out / "summary.json", summary)
    print(f"{model.n_facilities} facilities, {model.n_demand} demand nodes")
    print("competitors per facility: " + ", ".join(f"m={k}: {v}" for k, v in summary["competitor_histogram"].items()))
    print(f"demand nodes per facility: min {summary['demand_neighborhood_min']}, "
          f"max {summary['demand_neighborhood_max']}, mean {summary['demand_neighborhood_mean']:.2f}")
    print(f"demand nodes covered with every facility active: {summary['all_active_covered']}")
    return EXIT_OK


def cmd_weights(cfg: dict) -> int:
    model = _load_model(cfg)
    w = _weights(cfg, model)
    out = _run_dir(cfg, "weights")
    topsis.write_weights(out / "weights.csv", [f.id for f in model.facilities], w)
    print(f"wrote {out / 'weights.csv'}")
    return EXIT_OK


def cmd_solve(cfg: dict) -> int:
    model = _load_model(cfg)
    p = _require_p(cfg, model)
    w = _weights(cfg, model)
    params = _params(cfg, p)
    part = _partition(cfg, model.n_facilities, p)
    Q = qubo.build_unconstrained(model, w, params)
    Qhat = qubo.build_partitioned(model, w, params, part)
    config, backend = _solver(cfg, cfg["seed"])
    report = solvers.hybrid_solve(Qhat, config, backend)
    best = report.best
    x = np.asarray(best.bits, dtype=int)

    out = _run_dir(cfg, "solve")
    analysis.write_solution_csv(out / "solution.csv", model, x)
    analysis.write_coverage_geojson(out / "solution.geojson", model, x)
    prof = analysis.coverage_profile(model, x)
    analysis.write_coverage_csv(out / "coverage.csv", model, prof)
    qubo.write_qubo(Qhat, out / "qubo.txt")
    with open(out / "trace.csv", "w") as fh:
        fh.write("iteration,branch,objective\n")
        for t in report.trace:
            fh.write(f"{t.iteration},{t.branch},{t.objective!r}\n")
    eig = qubo.upper_bound_eigen(Q, p)
    objective = qubo.objective_value(Q, x)
    removed = model.n_facilities - int(x.sum())
    doc = {
        "p": p,
        "best": objective,
        "penalized_objective": best.objective,
        "exact_competition_objective": qubo.exact_competition_objective(model, w, x, params.alpha, params.beta),
        "diag_bound": qubo.upper_bound_diagonal(Q, p),
        "eigen_bound": eig,
        "ratio": objective / eig if eig else None,
        "feasible": best.feasible,
        "violation": best.violation,
        "covered_count": prof.covered_count,
        "all_active_covered": analysis.coverage_profile(model, np.ones(model.n_facilities, int)).covered_count,
        "coverage_min": prof.min,
        "coverage_median": prof.median,
        "coverage_max": prof.max,
        "removed": removed,
        "minutes_saved": analysis.travel_time_estimate(removed, cfg["dwell_seconds"], cfg["penalty_seconds"]),
        "iterations": report.iterations,
    }
    _write_json(out / "report.json", doc)
    print(f"best {objective:.6g}  eigen bound {eig:.6g}  ratio {doc['ratio']:.4f}  "
          f"covered {prof.covered_count}/{model.n_demand}  feasible {best.feasible}  ({report.wall_time:.2f}s)")
    print(f"outputs in {out}")
    if not best.feasible:
        print(f"infeasible solution: violation {best.violation}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_bound(cfg: dict) -> int:
    model = _load_model(cfg)
    p = _require_p(cfg, model)
    w = _weights(cfg, model)
    params = _params(cfg, p)
    Q = qubo.build_unconstrained(model, w, params)
    Qhat = qubo.build_partitioned(model, w, params, _partition(cfg, model.n_facilities, p))
    rep = qubo.definiteness_report(Qhat)
    doc = {
        "p": p,
        "diag_bound": qubo.upper_bound_diagonal(Q, p),
        "eigen_bound": qubo.upper_bound_eigen(Q, p),
        "min_eigenvalue": rep.min_eigenvalue,
        "max_eigenvalue": rep.max_eigenvalue,
        "positive_definite": rep.positive_definite,
    }
    out = _run_dir(cfg, "bound")
    _write_json(out / "bounds.json", doc)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep(cfg: dict) -> int:
    model = _load_model(cfg)
    w = _weights(cfg, model)
    pv = _p_values(cfg, model)
    config, backend = _solver(cfg, cfg["seed"])
    rows = analysis.bound_ratio_sweep(model, w, _params(cfg, max(pv)), pv, cfg["batch_size"], config, backend)
    out = _run_dir(cfg, "sweep")
    analysis.write_sweep_csv(out / "sweep.csv", rows)
    with open(out / "coverage_summary.csv", "w") as fh:
        fh.write("p,min,median,max,covered_count\n")
        for r in rows:
            prof = analysis.coverage_profile(model, r.bits)
            fh.write(f"{r.p},{prof.min},{prof.median},{prof.max},{prof.covered_count}\n")
    print(f"wrote {len(rows)} rows to {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_compare(cfg: dict) -> int:
    model = _load_model(cfg)
    pv = cfg["p_values"] or [45, 40, 35, 30, 25]
    pv = [p for p in pv if p <= model.n_facilities] or _p_values(cfg, model)
    config, _ = _solver(cfg, cfg["seed"])
    records, summary = analysis.run_comparison_experiment(
        model,
        n_instances=cfg["n_instances"],
        p_values=pv,
        seed=cfg["seed"],
        max_offset=cfg["max_offset"],
        alpha=float(cfg["alpha"]),
        beta=float(cfg["beta"]),
        config=config,
        sic_mode=cfg["sic_mode"],
        significance=cfg["significance"],
    )
    out = _run_dir(cfg, "compare")
    analysis.write_comparison_csv(out / "comparison.csv", summary)
    analysis.write_records_csv(out / "records.csv", records)
    for s in summary:
        print(f"p={s.p:3d}  avg d={s.avg_d:6.2f}  W={s.statistic:7.1f}  p-value={s.p_value:.4f}  reject={s.reject}")
    return EXIT_OK


def cmd_synth(cfg: dict) -> int:
    model = _load_model(cfg)
    out = _run_dir(cfg, "synth")
    seeds = analysis.instance_seeds(cfg["seed"], cfg["n_instances"])
    for i, s in enumerate(seeds):
        inst = spatial.perturb_instance(model, cfg["max_offset"], (0.0, 1.0), s)
        spatial.write_instance(inst, out / f"instance_{i:03d}_demand.csv", out / f"instance_{i:03d}_facilities.csv")
    print(f"wrote {len(seeds)} instances to {out}")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "weights": cmd_weights,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "synth": cmd_synth,
    "bound": cmd_bound,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master random seed (overrides the config)")
    common.add_argument("--out", help="output root directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="stopqubo", parents=[common], description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    logging.basicConfig(level=logging.INFO if args.get("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.get("config"), {"seed": args.get("seed"), "out": args.get("out")})
        return COMMANDS[args["command"]](cfg)
    except (ConfigError, spatial.IngestionError, topsis.RankingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except qubo.NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
