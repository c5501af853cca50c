"""
Command-line entry point.

    python -m resilient_el_consensus run --scenario scenario_C --out runs/c
    python -m resilient_el_consensus graph check graph.txt --r 3 --byz 1,5 --f 1
    python -m resilient_el_consensus graph maxr graph.txt
    python -m resilient_el_consensus graph generate --n 8 --r 3 --seed 42 --output graph.txt
"""
import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence, Tuple

from .config import settings
from .errors import (
    ConsensusSimError,
    InfeasibleRobustnessError,
    InvalidArgumentError,
    ScenarioError,
    SimulationDivergedError,
    SizeLimitError,
)
from .services.analysis import format_metrics_report, metrics_key_values
from .services.graph import generate_r_robust_digraph, is_f_local_attack, is_r_robust, max_robustness
from .services.scenario_loader import ScenarioOverrides, load_scenario
from .services.simulation import run_scenario
from .utils.file_utils import read_graph, write_graph, write_run_outputs
from .utils.helpers import slug

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


def setup_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else getattr(logging, settings.log_level, logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, SimulationDivergedError):
        return EXIT_DIVERGED
    if isinstance(exc, (ScenarioError, InvalidArgumentError, InfeasibleRobustnessError, SizeLimitError)):
        return EXIT_CONFIG
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_ERROR


# ---------------------------------------------------------------------------
# run


def run_command(scenario: str, out_dir: str, overrides: Optional[ScenarioOverrides] = None) -> int:
    """
    Load, validate and run one scenario, then write its outputs.

    Args:
        scenario: scenario file path or bundled scenario name
        out_dir: output directory, created if missing
        overrides: replacements for dt / horizon / seed / f / decimation

    Returns:
        exit status
    """
    overrides = overrides or ScenarioOverrides()
    try:
        sc = load_scenario(scenario, overrides)
        out = run_scenario(sc)
        header = {
            "scenario": sc.name,
            "source": scenario,
            "agents": sc.graph.n,
            "byzantine": sorted(sc.byzantine_ids),
            "f": sc.gains.f,
            "dt": sc.sim.dt,
            "horizon": sc.sim.horizon,
            "seed": sc.sim.seed,
            "observer_coordinates": sc.sim.observer_coordinates,
            "overrides": ", ".join(f"{k}={v}" for k, v in overrides.describe().items()) or "none",
        }
        for k, warning in enumerate(out.warnings, start=1):
            header[f"warning_{k}"] = warning
        report = format_metrics_report(out.metrics, header)
        pairs = metrics_key_values(out.metrics, {f"run.{k}": v for k, v in header.items()})
        write_run_outputs(out, sc.graph, out_dir, report, pairs)
    except (ConsensusSimError, OSError) as e:
        logger.error(f"[CLI] {scenario}: {e}")
        return exit_code_for(e)
    logger.info(f"[CLI] {sc.name}: {'consensus reached' if out.metrics.converged else 'consensus NOT reached'}")
    return EXIT_OK


def _run_job(job: Tuple[str, str, ScenarioOverrides]) -> int:
    return run_command(*job)


def run_many(scenarios: Sequence[str], out_dir: str, overrides: ScenarioOverrides, jobs: int = 1) -> int:
    """Run several scenarios, each into its own sub-directory of out_dir."""
    if len(scenarios) == 1:
        return run_command(scenarios[0], out_dir, overrides)
    names = [slug(os.path.splitext(os.path.basename(s))[0]) for s in scenarios]
    if len(set(names)) != len(names):
        logger.error("[CLI] scenario names must be distinct when running several at once")
        return EXIT_CONFIG
    work = [(s, os.path.join(out_dir, n), overrides) for s, n in zip(scenarios, names)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            codes = list(pool.map(_run_job, work))
    else:
        codes = [_run_job(w) for w in work]
    return max(codes)


# ---------------------------------------------------------------------------
# graph


def _parse_ids(raw: Optional[str]) -> List[int]:
    if not raw:
        return []
    try:
        return [int(tok) for tok in raw.replace(",", " ").split()]
    except ValueError:
        raise InvalidArgumentError(f"expected comma-separated agent ids, got {raw!r}") from None


def graph_command(args: argparse.Namespace) -> int:
    try:
        if args.graph_cmd == "check":
            g = read_graph(args.file)
            print(f"r-robust: {str(is_r_robust(g, args.r)).lower()}")
            if args.byz is not None:
                f = args.f if args.f is not None else 0
                print(f"f-local: {str(is_f_local_attack(g, _parse_ids(args.byz), f)).lower()}")
        elif args.graph_cmd == "maxr":
            print(max_robustness(read_graph(args.file)))
        else:
            g = generate_r_robust_digraph(args.n, args.r, args.seed)
            write_graph(g, args.output)
            print(f"wrote {args.n}-agent {args.r}-robust graph to {args.output}")
    except (ConsensusSimError, OSError) as e:
        logger.error(f"[CLI] graph {args.graph_cmd}: {e}")
        return exit_code_for(e)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resilient_el_consensus",
        description="Event-triggered resilient consensus of networked two-link arms under Byzantine attacks",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one or more scenarios")
    run.add_argument("--scenario", action="append", required=True,
                     help="Scenario file or bundled name (repeatable)")
    run.add_argument("--out", required=True, help="Output directory")
    run.add_argument("--dt", type=float, help="Step size (s)")
    run.add_argument("--horizon", type=float, help="Simulated duration (s)")
    run.add_argument("--seed", type=int, help="Seed for generated graphs")
    run.add_argument("--f", type=int, help="Assumed local Byzantine bound used by the resilient decision")
    run.add_argument("--decimation", type=int, help="Record every k-th step")
    run.add_argument("--coordinates", choices=["w", "eta"], help="Observer integration coordinates")
    run.add_argument("--jobs", type=int, default=1, help="Scenarios run concurrently")

    graph = sub.add_parser("graph", help="Graph utilities")
    gsub = graph.add_subparsers(dest="graph_cmd", required=True)
    check = gsub.add_parser("check", help="Check r-robustness and f-locality")
    check.add_argument("file")
    check.add_argument("--r", type=int, required=True)
    check.add_argument("--byz", help="Byzantine agent ids, e.g. 1,5")
    check.add_argument("--f", type=int)
    maxr = gsub.add_parser("maxr", help="Print the largest r for which the graph is r-robust")
    maxr.add_argument("file")
    gen = gsub.add_parser("generate", help="Write a certified r-robust graph")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--r", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--output", "-o", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    if args.command == "graph":
        return graph_command(args)
    try:
        overrides = ScenarioOverrides(dt=args.dt, horizon=args.horizon, seed=args.seed, f=args.f,
                                      decimation=args.decimation, observer_coordinates=args.coordinates)
        if args.f is not None and args.f < 0:
            raise InvalidArgumentError(f"--f must be non-negative, got {args.f}")
        if args.jobs < 1:
            raise InvalidArgumentError(f"--jobs must be at least 1, got {args.jobs}")
    except InvalidArgumentError as e:
        logger.error(f"[CLI] {e}")
        return EXIT_CONFIG
    return run_many(args.scenario, args.out, overrides, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
