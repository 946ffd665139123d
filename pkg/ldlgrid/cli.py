"""
Command line entry point.

    ldlgrid run case1_full_embedded --out-dir results
    ldlgrid batch case1_sweep --workers 4
    ldlgrid report results/case1_full_embedded
    ldlgrid validate case1_nostorage case1_collocated
    ldlgrid plot results/case1_full_embedded

Exit status: 0 success, 1 simulation abort or failed batch cell, 2 configuration error.
"""
import argparse
import contextlib
import os
import sys
from dataclasses import replace
from typing import List, Optional

from ldlgrid import metrics, simlogging
from ldlgrid import simulation_structure as sim_struct
from ldlgrid.constants import ExcursionMode, OutputFormat
from ldlgrid.engine import run_batch, run_scenario
from ldlgrid.formats import write_json
from ldlgrid.errors import (
    ConfigurationError,
    InitializationError,
    NetworkSolveError,
    ScenarioValidationError,
    SimulationAbort,
)
from ldlgrid.results import load_result, save_result
from ldlgrid.scenario_io import find_scenario, load_scenario, load_sweep
from ldlgrid.utils import load_yaml, setup_dir

EXIT_OK = 0
EXIT_ABORT = 1
EXIT_CONFIG = 2
DEFAULT_OUT_DIR = "results"


def _solver_overrides(args):
    overrides = {}
    if getattr(args, "step", None) is not None:
        overrides["step"] = args.step
    if getattr(args, "horizon", None) is not None:
        overrides["horizon"] = args.horizon
    return overrides


def _with_overrides(config, overrides):
    if not overrides:
        return config
    return replace(config, solver={**config.solver, **overrides})


@contextlib.contextmanager
def output_lock(directory):
    """Holds the lock file of an output directory; a second holder gets ConfigurationError"""
    setup_dir(directory)
    lock_path = sim_struct.get_lock_path(directory)
    try:
        handle = open(lock_path, "x")
    except FileExistsError:
        raise ConfigurationError(
            f"{directory} is in use by another run (remove {lock_path} if it is stale)"
        ) from None
    try:
        handle.write(str(os.getpid()))
        handle.close()
        yield directory
    finally:
        os.remove(lock_path)


def write_run(result, run_dir, fmt):
    save_result(result, run_dir, fmt)
    report = metrics.build_report(result)
    write_json(report.to_dict(), sim_struct.get_report_path(run_dir))
    return report


def _print_report(report):
    print(
        f"{report.name}: {report.status}, TSI {report.tsi:.3f} (delta_max {report.delta_max:.1f} deg), "
        f"gen loss {report.gen_loss:.3f} GW, UFLS {report.ufls_loss:.3f} GW, "
        f"LDLs tripped {report.ldl_tripped or 'none'}"
    )


def cmd_run(args, logger):
    config = _with_overrides(load_scenario(find_scenario(args.scenario)), _solver_overrides(args))
    run_dir = sim_struct.get_run_dir(args.out_dir, config.name)
    with output_lock(run_dir):
        simlogging.flush_buffer_handler(logger, sim_struct.get_log_path(run_dir))
        try:
            result = run_scenario(config, logger, raise_on_abort=True)
        except SimulationAbort as e:
            result = e.result
            print(f"Simulation aborted: {e}", file=sys.stderr)
        report = write_run(result, run_dir, args.format)
    _print_report(report)
    print(f"Results written to {run_dir}")
    return EXIT_OK if result.completed else EXIT_ABORT


def cmd_batch(args, logger):
    overrides = _solver_overrides(args)
    cells = load_sweep(args.sweep)
    for cell in cells:
        if cell.config is not None:
            cell.config = _with_overrides(cell.config, overrides)
    batch_name = os.path.splitext(os.path.basename(args.sweep))[0]
    batch_dir = sim_struct.get_run_dir(args.out_dir, batch_name)
    with output_lock(batch_dir):
        simlogging.flush_buffer_handler(logger, sim_struct.get_log_path(batch_dir))
        batch = run_batch(cells, max_workers=args.workers, logger=logger)
        for cell in batch.cells:
            if cell.result is None:
                continue
            cell_dir = sim_struct.get_batch_cell_dir(batch_dir, cell.result.name)
            setup_dir(cell_dir)
            write_run(cell.result, cell_dir, args.format)
        with open(sim_struct.get_table_path(batch_dir), "w") as f:
            f.write(batch.table + "\n")
        write_json(metrics.table_records(batch.cells), sim_struct.get_table_path(batch_dir, json=True))
    print(batch.table)
    failed = [c for c in batch.cells if c.error is not None]
    for cell in failed:
        print(f"{cell.row}/{cell.column} failed: {cell.error}", file=sys.stderr)
    return EXIT_ABORT if failed else EXIT_OK


def cmd_report(args, logger):
    result = load_result(args.result_dir)
    report = metrics.build_report(result, args.mode)
    write_json(report.to_dict(), sim_struct.get_report_path(args.result_dir))
    _print_report(report)
    return EXIT_OK


def is_sweep_file(path):
    raw = load_yaml(path)
    return isinstance(raw, dict) and "rows" in raw and "network" not in raw


def cmd_validate(args, logger):
    status = EXIT_OK
    for scenario in args.scenarios:
        try:
            path = find_scenario(scenario)
            if is_sweep_file(path):
                cells = load_sweep(path)
                print(f"{path}: OK ({len(cells)} cells)")
            else:
                config = load_scenario(path)
                print(f"{path}: OK ({config.name})")
        except ScenarioValidationError as e:
            print(str(e), file=sys.stderr)
            status = EXIT_CONFIG
        except ConfigurationError as e:
            print(f"{scenario}: {e}", file=sys.stderr)
            status = EXIT_CONFIG
    return status


def cmd_plot(args, logger):
    from ldlgrid.plotting import plot_result

    result = load_result(args.result_dir)
    out_dir = args.out or sim_struct.get_figure_dir(args.result_dir)
    for path in plot_result(result, out_dir):
        print(path)
    return EXIT_OK


def _add_solver_args(parser):
    parser.add_argument("--step", type=float, default=None, help="integration step in s")
    parser.add_argument("--horizon", type=float, default=None, help="simulated time in s")
    parser.add_argument(
        "--out-dir", default=DEFAULT_OUT_DIR, help=f"output root (default: {DEFAULT_OUT_DIR})"
    )
    parser.add_argument(
        "--format",
        choices=list(OutputFormat.get_names()),
        default=OutputFormat.csv.value,
        help="series file format",
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ldlgrid",
        description="Transient simulation of a grid with large digital loads and grid-forming storage",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="print debug messages")
    subparsers = parser.add_subparsers(dest="command")
    subparsers.required = True

    run = subparsers.add_parser("run", help="run one scenario")
    run.add_argument("scenario", help="scenario file or shipped scenario name")
    _add_solver_args(run)
    run.set_defaults(func=cmd_run)

    batch = subparsers.add_parser("batch", help="run a sweep of scenarios and tabulate them")
    batch.add_argument("sweep", help="sweep file or shipped sweep name")
    batch.add_argument("--workers", type=int, default=1, help="parallel processes")
    _add_solver_args(batch)
    batch.set_defaults(func=cmd_batch)

    report = subparsers.add_parser("report", help="recompute the metrics of a result directory")
    report.add_argument("result_dir")
    report.add_argument(
        "--mode",
        choices=list(ExcursionMode.get_names()),
        default=ExcursionMode.pairwise.value,
        help="how the maximum angle excursion is measured",
    )
    report.set_defaults(func=cmd_report)

    validate = subparsers.add_parser("validate", help="check scenario or sweep files")
    validate.add_argument("scenarios", nargs="+")
    validate.set_defaults(func=cmd_validate)

    plot = subparsers.add_parser("plot", help="draw COI and voltage figures of a result")
    plot.add_argument("result_dir")
    plot.add_argument("--out", default=None, help="figure directory (default: <result_dir>/figures)")
    plot.set_defaults(func=cmd_plot)
    return parser


def cli_main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logger = simlogging.get_logger()
    if args.verbose:
        simlogging.set_stdout_level(logger, simlogging.logging.DEBUG)
    simlogging.add_buffer_handler(logger)
    try:
        return args.func(args, logger)
    except ScenarioValidationError as e:
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (InitializationError, NetworkSolveError) as e:
        print(f"Simulation failed: {e}", file=sys.stderr)
        return EXIT_ABORT
    finally:
        simlogging.clean_up_logger(logger)


def main():
    return cli_main()


if __name__ == "__main__":
    sys.exit(main())
