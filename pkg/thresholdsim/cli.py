"""
Command line: run <config>, validate <config>, emit-plot <report-dir> <figure>.

Exit codes: 0 success, 1 validation failure (bad config, failed gate),
2 numerical failure, 3 I/O failure.
"""

import argparse
import logging
import sys

from colorama import Fore, Style, just_fix_windows_console

from thresholdsim.config import dump_config, load_config, resolve_threads
from thresholdsim.errors import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, exit_code_for
from thresholdsim.report import FIGURES, emit_plot_data, read_report, table_to_csv, write_report
from thresholdsim.runner import run_scenario

logger = logging.getLogger("thresholdsim")

LEVEL_COLORS = {
    logging.DEBUG: Style.DIM,
    logging.INFO: Fore.CYAN,
    logging.WARNING: Fore.YELLOW,
    logging.ERROR: Fore.RED,
    logging.CRITICAL: Fore.RED + Style.BRIGHT,
}


class ColorFormatter(logging.Formatter):
    """Colours the level name; plain text when the stream is not a terminal."""

    def __init__(self, color=True):
        super().__init__("%(asctime)s [%(levelname)s] [%(name)s] %(message)s", datefmt="%Y-%m-%d %H:%M:%S")
        self.color = color

    def format(self, record):
        text = super().format(record)
        if not self.color:
            return text
        tag = f"[{record.levelname}]"
        return text.replace(tag, f"{LEVEL_COLORS.get(record.levelno, '')}{tag}{Style.RESET_ALL}", 1)


def configure_logging(verbosity="INFO", stream=None):
    stream = stream or sys.stderr
    just_fix_windows_console()
    handler = logging.StreamHandler(stream)
    handler.setFormatter(ColorFormatter(color=hasattr(stream, "isatty") and stream.isatty()))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(verbosity)


def build_parser():
    parser = argparse.ArgumentParser(prog="thresholdsim",
                                     description="Threshold detection of classical random signals: "
                                                 "analytic laws and Monte Carlo validation.")
    parser.add_argument("--verbosity", choices=["DEBUG", "INFO", "WARNING", "ERROR"], default="INFO",
                        help="logging level")
    parser.add_argument("--threads", type=int, default=None,
                        help="Monte Carlo worker threads (overrides THRESHOLDSIM_THREADS and the config)")
    parser.add_argument("--seed-override", type=int, default=None, help="replace monte_carlo.seed")
    parser.add_argument("--output-dir", default=None, help="replace output.directory")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute the scenario of a config and write its report")
    run.add_argument("config")

    validate = sub.add_parser("validate", help="parse and validate a config, print its canonical form")
    validate.add_argument("config")

    plot = sub.add_parser("emit-plot", help="write plot-ready CSV from a report directory")
    plot.add_argument("report")
    plot.add_argument("figure", help="one of " + ", ".join(sorted(FIGURES)))
    plot.add_argument("-o", "--output", default=None, help="CSV path (stdout if omitted)")
    return parser


def print_gates(report, out=None):
    out = out or sys.stdout
    gates = report.tables.get("gates")
    if gates is None:
        return
    for name, value, threshold, passed in gates.rows:
        mark = f"{Fore.GREEN}PASS{Style.RESET_ALL}" if passed else f"{Fore.RED}FAIL{Style.RESET_ALL}"
        print(f"{mark}  {name:<48} {value:>12.6g}  (threshold {threshold:.6g})", file=out)


def cmd_run(args):
    cfg = load_config(args.config).with_overrides(seed=args.seed_override, output_dir=args.output_dir)
    threads = resolve_threads(cfg, args.threads)
    logger.info("running %s from %s with %d thread(s)", cfg.scenario.value, args.config, threads)
    report = run_scenario(cfg, threads=threads, output_dir=cfg.output.directory)
    write_report(report, cfg.output.directory)
    print_gates(report)
    if not report.passed:
        logger.error("%d gate(s) failed", len(report.failed_gates))
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_validate(args):
    cfg = load_config(args.config).with_overrides(seed=args.seed_override, output_dir=args.output_dir)
    sys.stdout.write(dump_config(cfg))
    logger.info("%s is valid", args.config)
    return EXIT_OK


def cmd_emit_plot(args):
    table = emit_plot_data(read_report(args.report), args.figure, args.output)
    if args.output is None:
        sys.stdout.write(table_to_csv(table))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "emit-plot": cmd_emit_plot}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # bad usage is a validation failure, not argparse's 2
        return EXIT_OK if e.code in (0, None) else EXIT_VALIDATION
    configure_logging(args.verbosity)
    try:
        return COMMANDS[args.command](args)
    except Exception as e:
        code = exit_code_for(e)
        if code is None:
            logger.critical("unexpected error: %s", e, exc_info=True)
            return EXIT_NUMERICAL
        logger.error("%s: %s", type(e).__name__, e)
        return code
