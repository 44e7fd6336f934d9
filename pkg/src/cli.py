"""
Command Line Interface for Robust Polynomial Optimization

This module provides the robust-polyopt command: experiment runs from a
TOML config and single steps of the robust ACOPF pipeline (nominal bound,
posterior checks, power flow, case export).
"""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from tabulate import tabulate

from src.acopf import (
    ControlLayout,
    build_aro,
    default_control,
    newton_power_flow,
    nominal_sdp_bound,
    squeeze_warm_start,
)
from src.conic import BACKENDS
from src.experiment import (
    OUTPUT_FORMATS,
    ExperimentConfig,
    certificate_degree,
    format_results,
    load_config,
    run_experiment,
    run_row,
    write_results,
)
from src.matpower import export_case, load_case
from src.uncertainty import build_load_ellipsoid
from src.verify import feasibility_check, infeasibility_check

try:
    from config import DEFAULT_OUTPUT_FORMAT, SOLVER_BACKEND
except ImportError:
    DEFAULT_OUTPUT_FORMAT = "md"
    SOLVER_BACKEND = "auto"

logger = logging.getLogger(__name__)


def create_parser():
    """Create argument parser for the CLI."""
    parser = argparse.ArgumentParser(
        prog='robust-polyopt',
        description='Adjustable robust polynomial optimization for AC optimal power flow',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Reproduce the case9 table
  robust-polyopt run --config configs/case9.toml --format md

  # Nominal SDP lower bound of a published case
  robust-polyopt nominal-bound --case case30

  # Feasibility certificate of the robust solution at 10% uncertainty
  robust-polyopt feas-check --case case9 --w 0.1

  # Write the pypower copy of case118 as a MATPOWER file
  robust-polyopt export-case case118 --out data/
        """
    )
    parser.add_argument('--verbose', '-v', action='store_true', help='Debug logging')
    parser.add_argument('--backend', choices=BACKENDS, default=None,
                        help=f'Conic solver backend (default: {SOLVER_BACKEND})')

    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    run_parser = subparsers.add_parser('run', help='Run an experiment from a config file')
    run_parser.add_argument('--config', '-c', required=True, help='Experiment TOML file')
    run_parser.add_argument('--case', default=None, help='Override the case of the config')
    run_parser.add_argument('--w', type=float, nargs='*', default=None,
                            help='Override the uncertainty levels (fractions of load)')
    run_parser.add_argument('--seed', type=int, default=None, help='Override the random seed')
    run_parser.add_argument('--out', '-o', default=None, help='Write the table to this file')
    run_parser.add_argument('--format', choices=OUTPUT_FORMATS, default=DEFAULT_OUTPUT_FORMAT,
                            help=f'Table format (default: {DEFAULT_OUTPUT_FORMAT})')

    nominal_parser = subparsers.add_parser('nominal-bound', help='Nominal SDP lower bound (objective / 100)')
    nominal_parser.add_argument('--case', required=True, help='Case name or MATPOWER file')

    for verb, text in (('feas-check', 'Putinar feasibility check of a robust control'),
                       ('infeas-check', 'Putinar infeasibility check of a robust control')):
        check_parser = subparsers.add_parser(verb, help=text)
        check_parser.add_argument('--case', required=True, help='Case name or MATPOWER file')
        check_parser.add_argument('--w', type=float, required=True, help='Uncertainty as a fraction of load')
        check_parser.add_argument('--correlated', action='store_true', help='Correlated uncertainty')
        check_parser.add_argument('--degree', type=int, default=None, help='Certificate degree')
        check_parser.add_argument('--control', type=float, nargs='+', default=None,
                                  help='Control vector to check (default: one robust iteration)')
        check_parser.add_argument('--config', '-c', default=None, help='Experiment TOML for algorithm settings')
        check_parser.add_argument('--seed', type=int, default=None, help='Random seed')

    flow_parser = subparsers.add_parser('power-flow', help='Newton power flow at a control vector')
    flow_parser.add_argument('--case', required=True, help='Case name or MATPOWER file')
    flow_parser.add_argument('--control', type=float, nargs='+', default=None,
                             help='Control (t, Pg on PV buses, Vg^2 on generator buses); default: case dispatch')
    flow_parser.add_argument('--format', choices=OUTPUT_FORMATS, default=DEFAULT_OUTPUT_FORMAT,
                             help='Table format')

    export_parser = subparsers.add_parser('export-case', help='Write a case as a MATPOWER file')
    export_parser.add_argument('name', help='Bundled or pypower case name')
    export_parser.add_argument('--out', '-o', default=None, help='Target file or directory')

    return parser


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def _settings(args) -> ExperimentConfig:
    if getattr(args, 'config', None):
        cfg = load_config(args.config)
        cfg.case = args.case
    else:
        cfg = ExperimentConfig(case=args.case)
    if args.backend:
        cfg.backend = args.backend
    if getattr(args, 'seed', None) is not None:
        cfg.seed = args.seed
    return cfg


def handle_run(args):
    """Handle an experiment run."""
    cfg = load_config(args.config)
    if args.case:
        cfg.case = args.case
    if args.w is not None:
        cfg = dataclasses.replace(cfg, w=args.w)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.backend:
        cfg.backend = args.backend

    print(f"Running {cfg.case} for w = {', '.join(f'{w:g}' for w in cfg.w) or 'none'}...")
    rows = run_experiment(cfg)
    for path in write_results(rows, cfg):
        print(f"Results saved to: {path}")
    text = format_results(rows, args.format, timings=args.format == 'md' or cfg.timings)
    if args.out:
        Path(args.out).write_text(text if args.format == 'csv' else text + "\n")
        print(f"Table saved to: {args.out}")
    print(text)
    return rows


def handle_nominal_bound(args):
    """Handle the nominal SDP bound."""
    net = load_case(args.case)
    bound = nominal_sdp_bound(net, backend=args.backend)
    print(f"{net.summary()}")
    print(f"Nominal lower bound: {bound:.2f}")
    return bound


def _robust_problem(args):
    cfg = _settings(args)
    net = load_case(cfg.case)
    omega = build_load_ellipsoid(net.pd * net.base_mva, args.w, args.correlated, net.n_buses)
    prob = build_aro(net, omega)
    if args.control is not None:
        y = np.asarray(args.control, dtype=float)
        if y.size != prob.n_control:
            raise ValueError(f"Expected {prob.n_control} control values "
                             f"({', '.join(ControlLayout.of(net).labels(net))}), got {y.size}")
        return net, prob, y, cfg
    print("Computing the robust control (warm start and one outer iteration)...")
    cfg.feasibility = cfg.infeasibility = False
    warm = squeeze_warm_start(net, cfg.squeeze, cfg.refine_warm_start, backend=cfg.backend)
    row = run_row(net, args.w, cfg, warm, float('nan'))
    if row.y is None:
        raise RuntimeError(f"No robust control at w={args.w:g}: {row.flag}")
    print(f"Upper bound: {row.upper_cell}")
    return net, prob, row.y, cfg


def handle_feas_check(args):
    """Handle the feasibility check."""
    net, prob, y, cfg = _robust_problem(args)
    degree = args.degree or cfg.feasibility_degree or certificate_degree(net.n_buses)
    report = feasibility_check(prob, y, degree, cfg.sigma0_degree, cfg.chaining,
                               variable_cap=cfg.variable_cap, backend=cfg.backend)
    table = [[b.label, b.index, f"{b.value:.3e}", b.status] for b in report.bounds]
    if table:
        print(tabulate(table, headers=['Label', 'Row', 'Shift t*', 'Status'], tablefmt='github'))
    print(f"Feasibility check: {report.verdict.value} ({report.time:.1f} s)")
    return report


def handle_infeas_check(args):
    """Handle the infeasibility check."""
    net, prob, y, cfg = _robust_problem(args)
    degree = args.degree or cfg.infeasibility_degree
    report = infeasibility_check(prob, y, degree, cfg.sigma0_degree, cfg.variable_cap, cfg.backend)
    print(f"Infeasibility check: {report.verdict.value} (objective {report.objective:.3e}, {report.time:.1f} s)")
    return report


def handle_power_flow(args):
    """Handle a power flow run."""
    net = load_case(args.case)
    y = default_control(net) if args.control is None else np.asarray(args.control, dtype=float)
    x = newton_power_flow(net, y)
    n = net.n_buses
    V = x[:n] + 1j * x[n:]
    table = [[int(net.bus_ids[k]), f"{abs(V[k]):.4f}", f"{np.degrees(np.angle(V[k])):.3f}"] for k in range(n)]
    print(net.summary())
    print(tabulate(table, headers=['Bus', '|V|, p.u.', 'Angle, deg'],
                   tablefmt='github' if args.format == 'md' else 'plain'))
    return x


def handle_export_case(args):
    """Handle case export."""
    path = export_case(args.name, args.out)
    print(f"Case written to: {path}")
    return path


HANDLERS = {
    'run': handle_run,
    'nominal-bound': handle_nominal_bound,
    'feas-check': handle_feas_check,
    'infeas-check': handle_infeas_check,
    'power-flow': handle_power_flow,
    'export-case': handle_export_case,
}


def main(argv: Optional[List[str]] = None):
    """Main CLI entry point."""
    parser = create_parser()
    args = parser.parse_args(argv)

    if not hasattr(args, 'command') or args.command is None:
        parser.print_help()
        return

    configure_logging(args.verbose)
    try:
        HANDLERS[args.command](args)
    except Exception as e:
        print(f"Error: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
