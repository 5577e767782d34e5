"""
Command Line Interface for the MANET simulator.

Subcommands: ``run`` one scenario, ``sweep`` a parameter grid, ``replay``
a trace into its result row.
"""

import argparse
import asyncio
import sys
from pathlib import Path

from . import __version__
from .config import DEFAULT_PAUSE_SWEEP, ProcessorConfig, Protocol, ScenarioError, SpeedClass, SweepGrid
from .metrics import replay
from .processor import RunFailed, ScenarioProcessor
from .stages.write_results import result_csv
from .trace import TraceFormatError, read_trace
from .utils.logger import get_logger, setup_logging
from .utils.scenario_parser import ScenarioParser

logger = get_logger("cli")


def int_list(text: str) -> list[int]:
    """Comma-separated integers; ``a-b`` expands to the inclusive range."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        if sep and lo:
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def str_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser."""
    parser = argparse.ArgumentParser(
        prog="manetsim",
        description="Deterministic discrete-event MANET simulator (TORA, DSR, Preemptive DSR)",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s run scenarios/table1.scn --seed 3 --trace run.trace --out run.csv
  %(prog)s sweep scenarios/table1.scn --nodes 10,30 --speed slow,fast --pause 0 --seeds 1 --out table1/
  %(prog)s replay run.trace
        """,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable debug logging")
    parser.add_argument("--quiet", "-q", action="store_true", help="Only log warnings and errors")

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    run_parser = subparsers.add_parser("run", help="Run one scenario")
    run_parser.add_argument("scenario", type=Path, help="Scenario file")
    run_parser.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
    run_parser.add_argument("--trace", type=Path, default=None, help="Write the per-event trace here")
    run_parser.add_argument("--out", type=Path, default=None, help="Write the result CSV (and a .json summary) here")

    sweep_parser = subparsers.add_parser("sweep", help="Run a parameter sweep")
    sweep_parser.add_argument("scenario", type=Path, help="Base scenario file")
    sweep_parser.add_argument("--nodes", type=int_list, required=True, help="Node counts, e.g. 10,30")
    sweep_parser.add_argument("--speed", type=str_list, required=True, help="Speed classes, e.g. slow,fast")
    sweep_parser.add_argument(
        "--pause", type=float_list, default=list(DEFAULT_PAUSE_SWEEP),
        help="Pause times in seconds (default: 0,25,50,100,150,200)",
    )
    sweep_parser.add_argument("--seeds", type=int_list, required=True, help="Seeds, e.g. 1-10")
    sweep_parser.add_argument(
        "--protocols", type=str_list, default=[Protocol.TORA.value, Protocol.PDSR.value],
        help="Protocols to compare (default: tora,pdsr)",
    )
    sweep_parser.add_argument("--out", type=Path, required=True, help="Output directory")
    sweep_parser.add_argument("--batch-size", "-b", type=int, default=4, help="Points run concurrently (default: 4)")
    sweep_parser.add_argument("--traces", action="store_true", help="Keep one trace file per point")

    replay_parser = subparsers.add_parser("replay", help="Recompute the result row from a trace")
    replay_parser.add_argument("trace", type=Path, help="Trace file")

    return parser


async def run_command(args) -> int:
    try:
        scenario = ScenarioParser(args.scenario).parse()
    except FileNotFoundError as e:
        logger.error(str(e))
        return 1
    except ScenarioError as e:
        logger.error(f"Invalid scenario: {e}")
        return 2

    processor = ScenarioProcessor(ProcessorConfig(verbose=args.verbose))
    try:
        result = await processor.run_one(
            scenario=scenario, seed=args.seed, trace_path=args.trace, out_path=args.out,
        )
    except RunFailed as e:
        logger.error(f"Run failed: {e}")
        return 1
    sys.stdout.write(result_csv([result]))
    return 0


async def sweep_command(args) -> int:
    try:
        base = ScenarioParser(args.scenario).parse()
        grid = SweepGrid(
            nodes=args.nodes,
            speeds=[SpeedClass(s) for s in args.speed],
            pauses=args.pause,
            seeds=args.seeds,
            protocols=[Protocol(p) for p in args.protocols],
        )
        config = ProcessorConfig(
            out_dir=args.out, batch_size=args.batch_size, write_traces=args.traces, verbose=args.verbose,
        )
    except FileNotFoundError as e:
        logger.error(str(e))
        return 1
    except (ScenarioError, ValueError) as e:
        logger.error(f"Invalid sweep: {e}")
        return 2

    outcome = await ScenarioProcessor(config).sweep(base, grid)
    print(f"{outcome.rows} rows, {len(outcome.failures)} failures -> {outcome.out_dir}")
    return 0


def replay_command(args) -> int:
    try:
        with open(args.trace, encoding="utf-8") as f:
            result = replay(read_trace(f))
    except FileNotFoundError:
        logger.error(f"Trace not found: {args.trace}")
        return 1
    except (TraceFormatError, KeyError, ValueError) as e:
        logger.error(f"Cannot replay {args.trace}: {e}")
        return 1
    sys.stdout.write(result_csv([result]))
    return 0


def main(argv: list[str] | None = None) -> int:
    """Main entry point."""
    parser = create_parser()
    args = parser.parse_args(argv)

    setup_logging(verbose=args.verbose, quiet=args.quiet)

    if args.command == "run":
        return asyncio.run(run_command(args))
    if args.command == "sweep":
        return asyncio.run(sweep_command(args))
    if args.command == "replay":
        return replay_command(args)
    parser.print_help()
    return 2


if __name__ == "__main__":
    sys.exit(main())
