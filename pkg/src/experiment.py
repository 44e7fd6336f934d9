"""
Experiment Runner Module

Runs the robust ACOPF protocol over a list of uncertainty levels w:

    load ellipsoid -> squeezed warm start -> dynamic outer loop
    -> feasibility check -> infeasibility check (when not certified)

and collects one ResultRow per w. Experiments are described by TOML files
with the tables [algorithm], [outer], [checks] and [output]; results are
written as CSV and as an aligned markdown table.
"""

import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.acopf import (
    build_aro,
    build_injection_matrices,
    nominal_sdp_bound,
    squeeze_warm_start,
)
from src.algorithms import COUPLING_MODES, ApParams, Outcome, OuterParams, dynamic_outer
from src.aro import RankDeficientError, TRUST_NORMS
from src.conic import BACKENDS
from src.matpower import PowerNetwork, load_case
from src.uncertainty import build_load_ellipsoid, validate_fraction
from src.verify import CHAINING_MODES, Verdict, feasibility_check, infeasibility_check

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

try:
    from config import (
        AP_TOL, AP_F0, AP_MAX_ITERATIONS, AP_STEP, COUPLING_MODE,
        OUTER_TOL, OUTER_NORM, OUTER_MAX_ITERATIONS,
        SIGMA0_DEGREE, CHAINING_MODE, CHECK_VARIABLE_CAP,
        SQUEEZE_FRACTION, SOLVER_BACKEND, TABLE_SCALE,
        FORMAT_PRECISION, TIME_PRECISION, DEFAULT_OUTPUT_FORMAT,
    )
except ImportError:
    AP_TOL = 1e-5
    AP_F0 = 1e5
    AP_MAX_ITERATIONS = 100
    AP_STEP = 1.0
    COUPLING_MODE = "literal"
    OUTER_TOL = 1e-5
    OUTER_NORM = "2"
    OUTER_MAX_ITERATIONS = 1
    SIGMA0_DEGREE = 2
    CHAINING_MODE = "chained"
    CHECK_VARIABLE_CAP = 40
    SQUEEZE_FRACTION = 0.005
    SOLVER_BACKEND = "auto"
    TABLE_SCALE = 100.0
    FORMAT_PRECISION = 2
    TIME_PRECISION = 1
    DEFAULT_OUTPUT_FORMAT = "md"

logger = logging.getLogger(__name__)

OUTPUT_FORMATS = ("csv", "md")

COLUMNS = ["w, %", "Nom. lower bound", "Upper bound", "Num iter", "Avg time/iter, s", "Time, s",
           "Feas check", "Feas time, s", "Infeas check", "Infeas time, s"]


def validate_output_format(fmt: str) -> None:
    if fmt not in OUTPUT_FORMATS:
        raise ValueError(f"Output format '{fmt}' is not one of {OUTPUT_FORMATS}")


def validate_choice(value: str, choices: Sequence[str], what: str) -> None:
    if value not in choices:
        raise ValueError(f"{what} '{value}' is not one of {tuple(choices)}")


def certificate_degree(n_buses: int) -> int:
    """Putinar degree of the posterior checks: 4 up to 9 buses, 2 above."""
    return 4 if n_buses <= 9 else 2


@dataclass
class ExperimentConfig:
    """One experiment: a case, the w levels and every algorithm setting."""
    case: str
    w: List[float] = field(default_factory=list)
    correlated: bool = False
    seed: int = 0
    backend: str = SOLVER_BACKEND
    ap: ApParams = field(default_factory=ApParams)
    coupling: str = COUPLING_MODE
    outer_tol: float = OUTER_TOL
    outer_norm: str = OUTER_NORM
    outer_iterations: int = OUTER_MAX_ITERATIONS
    squeeze: float = SQUEEZE_FRACTION
    refine_warm_start: bool = True
    feasibility: bool = True
    infeasibility: bool = True
    feasibility_degree: Optional[int] = None
    infeasibility_degree: int = 2
    sigma0_degree: Optional[int] = SIGMA0_DEGREE
    chaining: str = CHAINING_MODE
    variable_cap: int = CHECK_VARIABLE_CAP
    csv: Optional[str] = None
    markdown: Optional[str] = None
    timings: bool = False

    def __post_init__(self):
        for w in self.w:
            validate_fraction(w)
        validate_choice(self.backend, BACKENDS, "Solver backend")
        validate_choice(self.coupling, COUPLING_MODES, "Coupling mode")
        validate_choice(self.outer_norm, TRUST_NORMS, "Trust region norm")
        validate_choice(self.chaining, CHAINING_MODES, "Chaining mode")
        if self.outer_iterations < 1:
            raise ValueError(f"Outer iteration count must be at least 1, got {self.outer_iterations}")
        if not 0 <= self.squeeze < 1:
            raise ValueError(f"Squeeze fraction must be in [0, 1), got {self.squeeze}")
        self.w = [float(w) for w in self.w]

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Optional[Path] = None) -> "ExperimentConfig":
        """Build from the parsed TOML document; unknown keys are rejected."""
        data = dict(data)
        algorithm = dict(data.pop("algorithm", {}))
        outer = dict(data.pop("outer", {}))
        checks = dict(data.pop("checks", {}))
        output = dict(data.pop("output", {}))
        if "case" not in data:
            raise ValueError("Experiment config needs a 'case' entry")

        ap = ApParams(tol=algorithm.pop("tol", AP_TOL), f0=algorithm.pop("f0", AP_F0),
                      max_iterations=algorithm.pop("max_iterations", AP_MAX_ITERATIONS),
                      step_sequence=algorithm.pop("step_sequence", (AP_STEP,)))
        case = str(data.pop("case"))
        if base_dir is not None and case.endswith(".m") and not Path(case).is_absolute():
            case = str(base_dir / case)
        kwargs = dict(
            case=case,
            w=list(data.pop("w", [])),
            correlated=bool(data.pop("correlated", False)),
            seed=int(data.pop("seed", 0)),
            backend=data.pop("backend", SOLVER_BACKEND),
            ap=ap,
            coupling=algorithm.pop("coupling", COUPLING_MODE),
            outer_tol=outer.pop("tol", OUTER_TOL),
            outer_norm=str(outer.pop("norm", OUTER_NORM)),
            outer_iterations=int(outer.pop("max_iterations", OUTER_MAX_ITERATIONS)),
            squeeze=outer.pop("squeeze", SQUEEZE_FRACTION),
            refine_warm_start=bool(outer.pop("refine_warm_start", True)),
            feasibility=bool(checks.pop("feasibility", True)),
            infeasibility=bool(checks.pop("infeasibility", True)),
            feasibility_degree=checks.pop("degree", None),
            infeasibility_degree=int(checks.pop("infeasibility_degree", 2)),
            sigma0_degree=checks.pop("sigma0_degree", SIGMA0_DEGREE),
            chaining=checks.pop("chaining", CHAINING_MODE),
            variable_cap=int(checks.pop("variable_cap", CHECK_VARIABLE_CAP)),
            csv=output.pop("csv", None),
            markdown=output.pop("markdown", None),
            timings=bool(output.pop("timings", False)),
        )
        leftovers = {**data, **{f"algorithm.{k}": v for k, v in algorithm.items()},
                     **{f"outer.{k}": v for k, v in outer.items()},
                     **{f"checks.{k}": v for k, v in checks.items()},
                     **{f"output.{k}": v for k, v in output.items()}}
        if leftovers:
            raise ValueError(f"Unknown config keys: {', '.join(sorted(leftovers))}")
        return cls(**kwargs)


def load_config(path: str) -> ExperimentConfig:
    """Read an experiment TOML file; case paths are taken relative to it."""
    path = Path(path)
    with open(path, "rb") as f:
        data = tomllib.load(f)
    return ExperimentConfig.from_dict(data, path.parent)


@dataclass
class ResultRow:
    """
    One line of the result table. flag is "" when an upper bound was found,
    otherwise one of LNF, NC, NP and upper_bound is nan.
    """
    w: float
    nominal_bound: float
    upper_bound: float = math.nan
    flag: str = ""
    iterations: Optional[int] = None
    avg_time: Optional[float] = None
    total_time: float = 0.0
    feas_verdict: str = Verdict.SKIPPED.value
    feas_time: Optional[float] = None
    infeas_verdict: str = Verdict.SKIPPED.value
    infeas_time: Optional[float] = None
    y: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.flag and not math.isnan(self.upper_bound):
            raise ValueError("A flagged row cannot carry an upper bound")

    @property
    def upper_cell(self) -> str:
        return self.flag or f"{self.upper_bound:.{FORMAT_PRECISION}f}"


def _outer_params(cfg: ExperimentConfig, net: PowerNetwork) -> OuterParams:
    return OuterParams(tol=cfg.outer_tol, norm=cfg.outer_norm, max_iterations=cfg.outer_iterations,
                       network_size=net.n_buses, seed=cfg.seed)


def run_row(net: PowerNetwork, w: float, cfg: ExperimentConfig, warm, nominal: float, mats=None) -> ResultRow:
    """
    The full pipeline for one uncertainty level.

    A RankDeficientError from the outer loop (the equality Jacobian stays
    ill-conditioned after every trust-radius halving) is reported as flag
    NP: the table legend has no separate entry for it and it is a numerical
    failure of the linearization. The log line names it explicitly.
    """
    start = time.perf_counter()
    omega = build_load_ellipsoid(net.pd * net.base_mva, w, cfg.correlated, net.n_buses)
    prob = build_aro(net, omega, mats)
    try:
        outer = dynamic_outer(prob, warm.y, warm.x, _outer_params(cfg, net), cfg.ap, cfg.coupling, cfg.backend)
    except RankDeficientError as exc:
        logger.warning("w=%.2f: rank-deficient linearization, reported as NP: %s", w, exc)
        return ResultRow(w, nominal, flag=Outcome.NUMERICAL_PROBLEM.value, total_time=time.perf_counter() - start)
    total = time.perf_counter() - start
    best = outer.best
    if best is None:
        last = outer.history[-1] if outer.history else None
        iterations = last.ap_iterations if last and outer.outcome == Outcome.NOT_CONVERGED else None
        return ResultRow(w, nominal, flag=outer.outcome.value, iterations=iterations, total_time=total)

    iterations = sum(it.ap_iterations for it in outer.history)
    row = ResultRow(w, nominal, best.objective / TABLE_SCALE, iterations=iterations,
                    avg_time=total / max(iterations, 1), total_time=total, y=best.y)
    if cfg.feasibility:
        degree = cfg.feasibility_degree or certificate_degree(net.n_buses)
        report = feasibility_check(prob, best.y, degree, cfg.sigma0_degree, cfg.chaining,
                                   variable_cap=cfg.variable_cap, backend=cfg.backend)
        row.feas_verdict = report.verdict.value
        row.feas_time = report.time if report.verdict != Verdict.SKIPPED else None
    if cfg.infeasibility and row.feas_verdict != Verdict.FEASIBLE.value:
        report = infeasibility_check(prob, best.y, cfg.infeasibility_degree, cfg.sigma0_degree,
                                     cfg.variable_cap, cfg.backend)
        row.infeas_verdict = report.verdict.value
        row.infeas_time = report.time if report.verdict != Verdict.SKIPPED else None
    return row


def run_experiment(cfg: ExperimentConfig) -> List[ResultRow]:
    """
    Run every w level of an experiment.

    Parameters:
    - cfg: ExperimentConfig

    Returns:
    - ResultRows in w order (empty for an empty w list)

    Raises:
    - MatpowerParseError, NominalSolveError and RankDeficientError for case
      and warm-start failures; per-row failures become flags instead
    """
    net = load_case(cfg.case)
    logger.info("Experiment on %s with w = %s", net.summary(), cfg.w)
    if not cfg.w:
        return []
    mats = build_injection_matrices(net)
    nominal = nominal_sdp_bound(net, backend=cfg.backend)
    logger.info("Nominal lower bound: %.4f", nominal)
    warm = squeeze_warm_start(net, cfg.squeeze, cfg.refine_warm_start, backend=cfg.backend)
    rows = []
    for w in cfg.w:
        row = run_row(net, w, cfg, warm, nominal, mats)
        logger.info("w=%.2f: upper bound %s, feas %s, infeas %s", w, row.upper_cell,
                    row.feas_verdict, row.infeas_verdict)
        rows.append(row)
    return rows


# -- output ------------------------------------------------------------------------

def _fmt_time(value: Optional[float]) -> str:
    return "--" if value is None else f"{value:.{TIME_PRECISION}f}"


def results_frame(rows: Sequence[ResultRow], timings: bool = True) -> pd.DataFrame:
    """Result table as a DataFrame; timing columns are dropped unless timings."""
    records = []
    for row in rows:
        records.append({
            "w, %": f"{100 * row.w:g}",
            "Nom. lower bound": f"{row.nominal_bound:.{FORMAT_PRECISION}f}",
            "Upper bound": row.upper_cell,
            "Num iter": "--" if row.iterations is None else str(row.iterations),
            "Avg time/iter, s": _fmt_time(row.avg_time),
            "Time, s": _fmt_time(row.total_time),
            "Feas check": row.feas_verdict,
            "Feas time, s": _fmt_time(row.feas_time),
            "Infeas check": row.infeas_verdict,
            "Infeas time, s": _fmt_time(row.infeas_time),
        })
    frame = pd.DataFrame.from_records(records, columns=COLUMNS)
    if not timings:
        frame = frame.drop(columns=[c for c in COLUMNS if c.endswith(", s")])
    return frame


def format_results(rows: Sequence[ResultRow], fmt: str = DEFAULT_OUTPUT_FORMAT, timings: bool = True) -> str:
    """CSV or aligned markdown text of the result table."""
    validate_output_format(fmt)
    frame = results_frame(rows, timings)
    if fmt == "csv":
        return frame.to_csv(index=False, lineterminator="\n")
    return frame.to_markdown(index=False, tablefmt="pipe", stralign="right")


def write_results(rows: Sequence[ResultRow], cfg: ExperimentConfig) -> List[Path]:
    """Write the CSV and markdown outputs named in the config."""
    written = []
    for target, fmt, timings in ((cfg.csv, "csv", cfg.timings), (cfg.markdown, "md", True)):
        if not target:
            continue
        path = Path(target)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(format_results(rows, fmt, timings) + ("" if fmt == "csv" else "\n"))
        logger.info("Wrote %s", path)
        written.append(path)
    return written

