"""
Command-Line Module
Subcommands for the analytic tables, simulations, estimators, the exact oracle and the
acceptance suite. Every subcommand writes plot-ready files into the output directory.
"""

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from . import __version__
from .analytic import (
    Regime,
    classify_regime,
    hitting_time_from_zero,
    holding_time,
    stationary_pgf,
    stationary_pmf,
    stationary_tail,
)
from .config import COMMANDS, SCHEMA_VERSION, RunConfig, log_level
from .dynamics import simulate_ceiling_intervals, simulate_descents, simulate_path, write_trajectory_csv
from .errors import AcceptanceFailure, DomainError, EffcError, InvariantViolation, NumericalError
from .excursions import (
    ceiling_fraction,
    empirical_stationary,
    fit_box_dimension,
    reach_tail_exponent,
    segment,
    speed_estimate,
    write_dimension_csv,
    write_excursion_csv,
)
from .oracle import build_generator, exact_hitting_times, stationary_solve
from .streams import make_generator, run_replicas
from .validation import run_suite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_ACCEPTANCE = 3


class UsageError(Exception):
    """Bad command line"""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per workflow and shared model flags"""
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file of RunConfig fields")
    common.add_argument("--c", type=float, help="Coalescence rate per pair")
    common.add_argument("--lambda", dest="lam", type=float, help="Shatter rate per block")
    common.add_argument("--n-max", dest="n_max", type=int, help="Ceiling")
    common.add_argument("--t-end", dest="t_end", type=float, help="Simulation horizon")
    common.add_argument("--replicas", type=int, help="Independent replicas")
    common.add_argument("--seed", type=int, help="Root seed")
    common.add_argument("--k", type=int, help="Target block count")
    common.add_argument("--k-max", dest="k_max", type=int, help="Largest block count in tables")
    common.add_argument("--initial", type=int, help="Initial block count")
    common.add_argument("--scales", type=float, nargs="+", help="Box sizes")
    common.add_argument("--j-window", dest="j_window", type=int, nargs="+", help="Speed levels")
    common.add_argument("--max-events", dest="max_events", type=int, help="Event budget per trajectory")
    common.add_argument("--suite", choices=("quick", "full"), help="Acceptance suite")
    common.add_argument("--output-dir", dest="output_dir", type=Path, help="Artifact directory")
    common.add_argument("--threads", type=int, help="Worker cap")
    common.add_argument("-v", "--verbose", action="store_true", help="Log at INFO level")

    parser = _Parser(prog="effc", description="Fast fragmentation-coalescence toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        commands.add_parser(name, parents=[common])
    return parser


def parse_config(argv: Optional[Sequence[str]] = None) -> RunConfig:
    """Parse flags into a RunConfig; flags override the JSON file"""
    args = vars(build_parser().parse_args(argv))
    config_path = args.pop("config")
    args.pop("verbose")
    return RunConfig.from_sources(config_path, args)


def _write_json(path: Path, payload: Dict[str, Any]) -> Path:
    document = {"schema_version": SCHEMA_VERSION, **payload}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, sort_keys=True, allow_nan=True)
        f.write("\n")
    return path


def _finite(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


def _analytic(config: RunConfig) -> int:
    params = config.params
    regime = classify_regime(params)
    k = np.arange(1, config.k_max + 1, dtype=float)
    u = holding_time(params, k)
    rows: List[List[Any]] = []
    summary: Dict[str, Any] = {"c": params.c, "lambda": params.lam, "theta": params.theta, "regime": regime.value}
    if regime is Regime.SUBCRITICAL:
        rho = stationary_pmf(params, k)
        e = hitting_time_from_zero(params, k)
        rows = [[int(i), repr(float(r)), repr(float(h)), repr(float(w))] for i, r, h, w in zip(k, rho, e, u)]
        summary.update(
            rho1=float(rho[0]),
            tail_mass=stationary_tail(params, config.k_max),
            pgf_half=stationary_pgf(params, 0.5),
        )
    else:
        print(f"Note: theta={params.theta:g} is {regime.value}; no stationary law, only holding times are shown.")
        rows = [[int(i), "", "", repr(float(w))] for i, w in zip(k, u)]

    with open(config.output_dir / "analytic.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["k", "rho", "hitting_time", "holding_time"])
        writer.writerows(rows)
    _write_json(config.output_dir / "analytic.json", summary)

    print(f"regime={regime.value} theta={params.theta:g}")
    print(f"{'k':>6} {'rho':>14} {'e_k':>14} {'u_k':>14}")
    for row in rows:
        cells = [float(x) if x else float("nan") for x in row[1:]]
        print(f"{row[0]:>6} {cells[0]:>14.8g} {cells[1]:>14.8g} {cells[2]:>14.8g}")
    return EXIT_OK


def _simulate(config: RunConfig) -> int:
    params = config.params

    def task(rng):
        return simulate_path(params, config.n_max, config.t_end, rng, initial=config.initial,
                             max_events=config.max_events, seed=config.seed)

    if config.replicas == 1:
        trajectories = [task(make_generator(config.seed))]
    else:
        trajectories = run_replicas(task, config.seed, config.replicas, config.threads)
    records = []
    for index, trajectory in enumerate(trajectories):
        name = "trajectory.csv" if config.replicas == 1 else f"trajectory_{index:04d}.csv"
        write_trajectory_csv(trajectory, config.output_dir / name)
        records.append({
            "file": name,
            "events": trajectory.event_count,
            "t_end": trajectory.t_end,
            "truncated": trajectory.truncated,
            "ceiling_fraction": ceiling_fraction(trajectory),
        })
        print(f"{name}: {trajectory.event_count} events, ceiling fraction {records[-1]['ceiling_fraction']:.4g}")
        if trajectory.truncated:
            print(f"Note: {name} hit the event budget and stops at t={trajectory.t_end:.6g}.")
    _write_json(config.output_dir / "simulate.json", {
        "c": params.c, "lambda": params.lam, "n_max": config.n_max, "seed": config.seed, "trajectories": records,
    })
    return EXIT_OK


def _excursions(config: RunConfig) -> int:
    params = config.params

    def task(rng):
        return simulate_path(params, config.n_max, config.t_end, rng, max_events=config.max_events, seed=config.seed)

    trajectories = run_replicas(task, config.seed, config.replicas, config.threads)
    excursions = [e for trajectory in trajectories for e in segment(trajectory)]
    write_excursion_csv(excursions, config.output_dir / "excursions.csv")
    summary: Dict[str, Any] = {"c": params.c, "lambda": params.lam, "n_max": config.n_max, "excursions": len(excursions)}

    levels = [j for j in config.j_window if j < config.n_max]
    if len(levels) < len(config.j_window):
        print(f"Note: levels at or above the ceiling {config.n_max} were dropped from the speed window.")
    if levels and excursions:
        speed = speed_estimate(excursions, levels)
        summary["speed"] = [
            {"j": s.j, "mean_ratio": _finite(s.mean_ratio), "stderr": _finite(s.stderr),
             "expected_ratio": s.expected_ratio, "used": s.used, "excluded": s.excluded}
            for s in speed
        ]
        for s in speed:
            print(f"j={s.j}: c*j*phi_j/2 = {s.mean_ratio:.4f} +/- {s.stderr:.4f} ({s.used} excursions)")
    reach = reach_tail_exponent(excursions)
    summary["reach"] = {"exponent": _finite(reach.exponent), "stderr": _finite(reach.stderr), "degenerate": reach.degenerate}
    print(f"reach exponent {reach.exponent:.4f} (theta={params.theta:g})")

    pmf = empirical_stationary(trajectories)
    if classify_regime(params) is Regime.SUBCRITICAL:
        k_max = min(config.k_max, config.n_max)
        reference = stationary_pmf(params, np.arange(1, k_max + 1, dtype=float))
        summary["stationary_tv"] = pmf.restricted_tv(reference, k_max)
        print(f"TV to the stationary law on k <= {k_max}: {summary['stationary_tv']:.4f}")
    _write_json(config.output_dir / "excursions.json", summary)
    return EXIT_OK


def _dimension(config: RunConfig) -> int:
    params = config.params
    lo, hi = simulate_ceiling_intervals(params, config.n_max, config.t_end, make_generator(config.seed))
    estimate = fit_box_dimension(lo, hi, config.t_end, params, config.n_max, config.scales or None)
    write_dimension_csv(estimate, config.output_dir / "dimension.csv")
    _write_json(config.output_dir / "dimension.json", {
        "c": params.c, "lambda": params.lam, "theta": params.theta, "n_max": config.n_max, "t_end": config.t_end,
        "slope": estimate.slope, "raw_slope": estimate.raw_slope, "ci": _finite(estimate.ci),
        "r_squared": _finite(estimate.r_squared), "window": list(estimate.window), "degenerate": estimate.degenerate,
    })
    if estimate.degenerate:
        print("Note: too few usable scales; the dimension fit is degenerate.")
    print(f"box-counting slope {estimate.slope:.4f} (theta={params.theta:g}, R^2={estimate.r_squared:.4f})")
    return EXIT_OK


def _hitting(config: RunConfig) -> int:
    params = config.params
    if not 1 <= config.k < config.n_max:
        raise DomainError(f"target k={config.k} must lie below the ceiling {config.n_max}")
    records = simulate_descents(params, config.n_max, config.k, config.n_max, config.replicas, config.seed,
                                config.threads, max_steps=None if not classify_regime(params).absorbing else config.max_events)
    with open(config.output_dir / "hitting.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["replica", "time", "frag_count", "min_state", "budget_exhausted"])
        for index, r in enumerate(records):
            writer.writerow([index, repr(r.total_time), r.frag_count, r.min_state_reached, int(r.budget_exhausted)])
    finished = np.array([r.total_time for r in records if not r.budget_exhausted])
    summary: Dict[str, Any] = {"c": params.c, "lambda": params.lam, "n_max": config.n_max, "k": config.k,
                               "replicas": config.replicas, "completed": int(finished.size)}
    if finished.size:
        summary["mean"] = float(finished.mean())
        summary["stderr"] = float(finished.std(ddof=1) / math.sqrt(finished.size)) if finished.size > 1 else None
        print(f"mean hitting time of {config.k}: {summary['mean']:.6g} over {finished.size} replicas")
    if classify_regime(params) is Regime.SUBCRITICAL:
        summary["analytic"] = hitting_time_from_zero(params, config.k)
        print(f"analytic value from infinity: {summary['analytic']:.6g}")
    _write_json(config.output_dir / "hitting.json", summary)
    return EXIT_OK


def _oracle(config: RunConfig) -> int:
    params = config.params
    K = config.n_max
    generator = build_generator(params, K)
    pi = stationary_solve(generator)
    target = min(config.k, K)
    h = exact_hitting_times(generator, target)
    with open(config.output_dir / "oracle.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["k", "pi", "hitting_time"])
        for index in range(K):
            writer.writerow([index + 1, repr(float(pi[index])), repr(float(h[index]))])
    _write_json(config.output_dir / "oracle.json", {
        "c": params.c, "lambda": params.lam, "K": K, "target": target,
        "pi1": float(pi[0]), "pi_ceiling": float(pi[-1]), "hitting_from_ceiling": float(h[-1]),
    })
    print(f"pi(1)={pi[0]:.8g}  hitting time of {target} from {K}: {h[-1]:.8g}")
    return EXIT_OK


def _validate(config: RunConfig) -> int:
    report = run_suite(config.suite, config.seed, config.threads)
    document = report.model_dump(mode="json", exclude={"checks": {"__all__": {"runtime"}}})
    document["passed"] = report.passed
    _write_json(config.output_dir / "validation.json", document)
    for check in report.checks:
        print(f"{'PASS' if check.passed else 'FAIL'} {check.name} ({check.runtime:.1f}s)")
    if not report.passed:
        raise AcceptanceFailure(f"failed checks: {', '.join(report.failures)}")
    return EXIT_OK


HANDLERS = {
    "analytic": _analytic,
    "simulate": _simulate,
    "excursions": _excursions,
    "dimension": _dimension,
    "hitting": _hitting,
    "oracle": _oracle,
    "validate": _validate,
}


def run(config: RunConfig) -> int:
    """
    Execute one subcommand

    Args:
        config: Validated configuration

    Returns:
        Exit status: 0 pass, 1 usage error, 2 numerical failure, 3 acceptance failure
    """
    config.output_dir.mkdir(parents=True, exist_ok=True)
    logger.info("running %s with seed %d", config.command, config.seed)
    try:
        return HANDLERS[config.command](config)
    except AcceptanceFailure as e:
        _report(e.to_dict())
        return EXIT_ACCEPTANCE
    except (NumericalError, InvariantViolation) as e:
        _report(e.to_dict())
        return EXIT_NUMERICAL
    except EffcError as e:
        _report(e.to_dict())
        return EXIT_USAGE


def _report(payload: Dict[str, Any]) -> None:
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def configure_logging(verbose: bool = False) -> None:
    level = logging.INFO if verbose else getattr(logging, log_level(), logging.WARNING)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse the command line and run it, mapping every failure to an exit status"""
    argv = list(sys.argv[1:] if argv is None else argv)
    configure_logging("-v" in argv or "--verbose" in argv)
    try:
        config = parse_config(argv)
    except UsageError as e:
        _report({"error": "usage_error", "message": str(e)})
        return EXIT_USAGE
    except ValidationError as e:
        _report({"error": "config_error", "message": str(e), "fields": [".".join(map(str, err["loc"])) for err in e.errors()]})
        return EXIT_USAGE
    except (OSError, ValueError) as e:
        _report({"error": "config_error", "message": str(e)})
        return EXIT_USAGE
    return run(config)
