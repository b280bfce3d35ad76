"""Command-line entry point: ``csa-uep <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from . import delay, density_evolution, error_floor, graph_sim, optimizer
from .model import TABLE1, CSAError, ScenarioConfig

log = logging.getLogger("csa_uep")

SUBCOMMANDS = ("simulate", "threshold", "errorfloor", "optimize", "delay", "reproduce")
REPRODUCE_TARGETS = ("table1", "fig4", "fig56")
DEFAULT_PLR_TRIALS = 1_000_000
DEFAULT_DELAY_TRIALS = 100_000
FIG4_GRID = (0.1, 1.0, 0.05)
FIG5_LOADS = (0.2, 0.5, 0.8)
FIG6_GRID = (0.05, 1.0, 0.05)


class UsageError(CSAError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    subcommand: str
    config: Path | None = None
    target: str | None = None
    out: Path = Path(".")
    seed: int | None = None
    trials: int | None = None
    workers: int = 1
    grid: tuple[float, float, float] | None = None
    grid_step: float | None = None
    nu_max: int = error_floor.DEFAULT_NU_MAX
    minimal_only: bool = False
    require_feasible: bool = False
    catalog_cache: Path | None = None
    trace: bool = False
    trajectory: bool = False

    def __post_init__(self) -> None:
        if self.subcommand not in SUBCOMMANDS:
            raise UsageError(f"unknown subcommand {self.subcommand!r}")
        if self.trials is not None and self.trials < 1:
            raise UsageError("trials must be ≥ 1")
        if self.workers < 1:
            raise UsageError("workers must be ≥ 1")
        if self.grid is not None and not self.grid[2] > 0:
            raise UsageError("grid step must be > 0")
        if self.grid_step is not None and not self.grid_step > 0:
            raise UsageError("start-grid step must be > 0")
        if self.subcommand == "reproduce" and self.target not in REPRODUCE_TARGETS:
            raise UsageError(f"reproduce target must be one of {REPRODUCE_TARGETS}")
        if self.subcommand not in ("reproduce",) and self.config is None:
            raise UsageError(f"{self.subcommand} requires --config")


def parse_grid(text: str) -> tuple[float, float, float]:
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be START:STOP:STEP, got {text!r}") from None
    return start, stop, step


def grid_values(grid: tuple[float, float, float]) -> list[float]:
    start, stop, step = grid
    count = int((stop - start) / step + 1e-9) + 1
    return [round(start + i * step, 10) for i in range(max(count, 0))]


def parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario (or optimization problem) JSON")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--trials", type=int, help="frames per load point")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    common.add_argument("--grid", type=parse_grid, help="load sweep START:STOP:STEP (inclusive)")
    common.add_argument("--grid-step", type=float, help="optimizer start-grid spacing (default 0.1)")
    common.add_argument("--nu-max", type=int, default=error_floor.DEFAULT_NU_MAX)
    common.add_argument("--minimal-only", type=parse_bool, default=False)
    common.add_argument("--require-feasible", action="store_true")
    common.add_argument("--catalog-cache", type=Path)

    parser = argparse.ArgumentParser(prog="csa-uep", description="Multi-class coded slotted ALOHA toolkit")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo PLR per class")
    sim.add_argument("--trace", action="store_true", help="write per-frame unresolved counts as JSON lines")
    thr = sub.add_parser("threshold", parents=[common], help="density-evolution threshold")
    thr.add_argument("--trajectory", action="store_true", help="write the xi trajectory at the config load")
    sub.add_parser("errorfloor", parents=[common], help="error-floor PLR prediction per class")
    sub.add_parser("optimize", parents=[common], help="optimize per-class degree distributions")
    sub.add_parser("delay", parents=[common], help="slot-based decoding delay")
    rep = sub.add_parser("reproduce", parents=[common], help="regenerate table/figure data")
    rep.add_argument("target", choices=REPRODUCE_TARGETS)
    return parser


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    return ExperimentSpec(
        subcommand=args.subcommand,
        config=args.config,
        target=getattr(args, "target", None),
        out=args.out,
        seed=args.seed,
        trials=args.trials,
        workers=args.workers,
        grid=args.grid,
        grid_step=args.grid_step,
        nu_max=args.nu_max,
        minimal_only=args.minimal_only,
        require_feasible=args.require_feasible,
        catalog_cache=args.catalog_cache,
        trace=getattr(args, "trace", False),
        trajectory=getattr(args, "trajectory", False),
    )


# -- helpers ------------------------------------------------------------------


def _scenario(spec: ExperimentSpec) -> ScenarioConfig:
    try:
        config = ScenarioConfig.load(spec.config)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {spec.config}: {exc}") from None
    if spec.seed is not None:
        config = config.with_seed(spec.seed)
    for k, c in enumerate(config.classes):
        if c.dist[1] > 0:
            log.warning("class %d puts mass %.3g on degree 1; users normally repeat at least twice", k, c.dist[1])
    return config


def _loads(spec: ExperimentSpec, config: ScenarioConfig) -> list[float]:
    return grid_values(spec.grid) if spec.grid else [config.g]


def _catalog(spec: ExperimentSpec, d_max: int) -> error_floor.StoppingSetCatalog:
    d_max = min(max(d_max, 2), error_floor.DEGREE_LIMIT)
    return error_floor.load_or_enumerate(spec.nu_max, d_max, spec.catalog_cache)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2) + "\n")


# -- subcommands ---------------------------------------------------------------


def _simulate(spec: ExperimentSpec) -> int:
    config = _scenario(spec)
    trials = spec.trials or DEFAULT_PLR_TRIALS
    rows = []
    for g in _loads(spec, config):
        point = config.with_load(g)
        outcome = graph_sim.run_monte_carlo(point, trials, spec.workers, trace=spec.trace)
        for k, c in enumerate(outcome.per_class):
            rows.append((g, outcome.realized_load, k, c.users_observed, c.users_unresolved, c.plr, c.halfwidth))
            print(f"g={g} class={k} plr={c.plr:.6g} ±{c.halfwidth:.3g}")
        if spec.trace:
            with (spec.out / f"trace_g{g}.jsonl").open("w") as fh:
                for i, counts in enumerate(outcome.trace.tolist()):
                    fh.write(json.dumps({"frame": i, "unresolved": counts}) + "\n")
    _write_csv(
        spec.out / "simulate.csv",
        ("g", "realized_load", "class", "users_observed", "users_unresolved", "plr", "halfwidth"),
        rows,
    )
    return 0


def _threshold(spec: ExperimentSpec) -> int:
    config = _scenario(spec)
    result = density_evolution.threshold(
        config.average_distribution(), probe_load=config.g if spec.trajectory else None
    )
    print(f"g* = {result.threshold:.6f} ± {density_evolution.DEFAULT_TOL:g}")
    if spec.trajectory:
        _write_csv(spec.out / "trajectory.csv", ("iteration", "xi"), list(enumerate(result.trajectory.tolist())))
    return 0


def _errorfloor(spec: ExperimentSpec) -> int:
    config = _scenario(spec)
    catalog = _catalog(spec, max(c.dist.d for c in config.classes))
    rows = []
    for g in _loads(spec, config):
        point = config.with_load(g)
        for k in range(point.kappa):
            p = error_floor.plr_class(catalog, point.classes, point.n, point.m, k, spec.minimal_only)
            rows.append((g, k, p))
    _write_csv(spec.out / "errorfloor.csv", ("g", "class", "plr_prediction"), rows)
    for row in rows:
        print(*row, sep=",")
    return 0


def _optimize(spec: ExperimentSpec) -> int:
    try:
        problem = optimizer.OptimizationProblem.load(spec.config)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read problem {spec.config}: {exc}") from None
    problem = replace(problem, nu_max=spec.nu_max, minimal_only=spec.minimal_only)
    if spec.grid_step is not None:
        problem = replace(problem, grid_step=spec.grid_step)
    result = optimizer.optimize(problem, spec.workers)
    _write_json(spec.out / "optimize.json", {"problem": problem.to_dict(), "result": result.to_dict()})
    table = optimizer.format_table([(problem, result)])
    (spec.out / "optimize_table.txt").write_text(table)
    print(table, end="")
    if spec.require_feasible and not result.feasible:
        log.error("no candidate satisfies the PLR targets")
        return 2
    return 0


def _delay(spec: ExperimentSpec) -> int:
    config = _scenario(spec)
    trials = spec.trials or DEFAULT_DELAY_TRIALS
    stats = delay.run_delay_monte_carlo(config, trials, spec.workers)
    pmf_rows = []
    for k, s in enumerate(stats):
        pmf_rows += [(k, float(t), float(p)) for t, p in zip(s.bin_delays(), s.pmf())]
    _write_csv(spec.out / "delay_pmf.csv", ("class", "bin_center", "mass"), pmf_rows)
    mean_rows = []
    for g in _loads(spec, config):
        point_stats = stats if g == config.g else delay.run_delay_monte_carlo(config.with_load(g), trials, spec.workers)
        for k, s in enumerate(point_stats):
            mean_rows.append((g, k, s.mean, s.resolved_fraction))
            print(f"g={g} class={k} mean_delay={s.mean:.4f} resolved={s.resolved_fraction:.5f}")
    _write_csv(spec.out / "delay_mean.csv", ("g", "class", "mean", "resolved_fraction"), mean_rows)
    return 0


def _table1_problems(spec: ExperimentSpec) -> list[optimizer.OptimizationProblem]:
    return [
        optimizer.OptimizationProblem(
            n=100, g_target=0.5, alphas=(row.alpha1, round(1.0 - row.alpha1, 12)), targets=row.targets,
            nu_max=spec.nu_max, minimal_only=spec.minimal_only, grid_step=spec.grid_step or 0.1,
        )
        for row in TABLE1
    ]


def _reproduce(spec: ExperimentSpec) -> int:
    seed = 0 if spec.seed is None else spec.seed
    if spec.target == "table1":
        rows = []
        for row, problem in zip(TABLE1, _table1_problems(spec)):
            result = optimizer.optimize(problem, spec.workers)
            log.info("row %s: g* = %.4f feasible=%s", row.label, result.threshold, result.feasible)
            rows.append((problem, result))
        _write_json(
            spec.out / "table1.json",
            [{"row": r.label, "problem": p.to_dict(), "result": res.to_dict()} for r, (p, res) in zip(TABLE1, rows)],
        )
        table = optimizer.format_table(rows)
        (spec.out / "table1.txt").write_text(table)
        print(table, end="")
        if spec.require_feasible and not all(res.feasible for _, res in rows):
            return 2
        return 0

    table_b = [row for row in TABLE1 if row.label.startswith("b")]
    if spec.target == "fig4":
        trials = spec.trials or DEFAULT_PLR_TRIALS
        catalog = _catalog(spec, 8)
        rows = []
        for row in table_b:
            base = ScenarioConfig(100, 0.5, row.classes(), seed=seed)
            for g in grid_values(spec.grid or FIG4_GRID):
                point = base.with_load(g)
                outcome = graph_sim.run_monte_carlo(point, trials, spec.workers)
                for k, c in enumerate(outcome.per_class):
                    pred = error_floor.plr_class(catalog, point.classes, point.n, point.m, k, spec.minimal_only)
                    rows.append((row.label, g, k, c.plr, c.halfwidth, pred))
        _write_csv(spec.out / "fig4.csv", ("row", "g", "class", "plr_sim", "halfwidth", "plr_pred"), rows)
        return 0

    trials = spec.trials or DEFAULT_DELAY_TRIALS
    base = ScenarioConfig(100, 0.5, TABLE1[6].classes(), seed=seed)
    pmf_rows = []
    for g in FIG5_LOADS:
        for k, s in enumerate(delay.run_delay_monte_carlo(base.with_load(g), trials, spec.workers)):
            pmf_rows += [(g, k, float(t), float(p)) for t, p in zip(s.bin_delays(), s.pmf())]
    _write_csv(spec.out / "fig5_pmf.csv", ("g", "class", "bin_center", "mass"), pmf_rows)
    mean_rows = [(0.0, k, delay.mean_delay_class(c), 1.0) for k, c in enumerate(base.classes)]
    for g, stats in delay.delay_vs_load(base, grid_values(spec.grid or FIG6_GRID), trials, spec.workers):
        mean_rows += [(g, k, s.mean, s.resolved_fraction) for k, s in enumerate(stats)]
    _write_csv(spec.out / "fig6_mean.csv", ("g", "class", "mean", "resolved_fraction"), mean_rows)
    return 0


HANDLERS = {
    "simulate": _simulate,
    "threshold": _threshold,
    "errorfloor": _errorfloor,
    "optimize": _optimize,
    "delay": _delay,
    "reproduce": _reproduce,
}


def run(spec: ExperimentSpec) -> int:
    """Dispatch one experiment; returns the process exit status."""
    spec.out.mkdir(parents=True, exist_ok=True)
    return HANDLERS[spec.subcommand](spec)


def _configure_logging() -> None:
    level = os.environ.get("CSA_UEP_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    log.setLevel(levels.get(level, logging.WARNING))
    if not log.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(handler)


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return run(spec_from_args(args))
    except CSAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
