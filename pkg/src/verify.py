"""
Posterior Certification Module

Checks a candidate control y against the exact (non-linearized) second
stage:

- feasibility_check: for every robust inequality, the smallest shift t with
  G_i + t admitting a Putinar certificate on
  E_y = {(z, x) : z in Omega, L(y, z, x) = 0, x in relaxed S_x};
  verdict F when every shift is non-positive, IC otherwise
- infeasibility_check: a polynomial p in z, nonnegative on the fixed-y
  feasible set U_y, with negative integral over Omega proves that y is not
  robust feasible (verdict NF)
- global_infeasibility_check: the same with y free in S_y

Ellipsoidal uncertainty is handled in unit-ball coordinates z = c + T u.
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.aro import (
    CONTROL,
    STATE,
    UNCERTAINTY,
    AroProblem,
    ParametricPolynomial,
    PutinarCertificate,
    putinar_counterpart,
)
from src.conic import AffineExpr, ConicProgramBuilder, SolveResult, solve
from src.poly import ONE, Polynomial, monomial_basis
from src.uncertainty import Ellipsoid, Polyhedron, SemialgebraicSet, ellipsoid_moment

try:
    from config import (
        CHECK_VARIABLE_CAP, SIGMA0_DEGREE, CHAINING_MODE, CHAINING_ORDER, VERDICT_TOL, CERTIFICATE_TOL,
    )
except ImportError:
    CHECK_VARIABLE_CAP = 40
    SIGMA0_DEGREE = 2
    CHAINING_MODE = "chained"
    CHAINING_ORDER = ("P", "Q", "V", "I")
    VERDICT_TOL = 1e-7
    CERTIFICATE_TOL = 1e-7

logger = logging.getLogger(__name__)

CHAINING_MODES = ("chained", "parallel", "off")


class Verdict(Enum):
    FEASIBLE = "F"
    NOT_FEASIBLE = "NF"
    INCONCLUSIVE = "IC"
    SKIPPED = "-"


def validate_chaining(mode: str) -> None:
    if mode not in CHAINING_MODES:
        raise ValueError(f"Chaining mode '{mode}' is not one of {CHAINING_MODES}")


@dataclass
class ConstraintBound:
    label: str
    index: int
    value: float
    status: str
    time: float = 0.0

    @property
    def certified(self) -> bool:
        return self.status == "Optimal" and self.value <= VERDICT_TOL


@dataclass
class FeasibilityReport:
    verdict: Verdict
    bounds: List[ConstraintBound] = field(default_factory=list)
    time: float = 0.0

    @property
    def worst(self) -> float:
        return max((b.value for b in self.bounds), default=float("-inf"))


@dataclass
class InfeasibilityReport:
    verdict: Verdict
    objective: float = float("nan")
    coefficients: Dict[tuple, float] = field(default_factory=dict)
    status: str = ""
    time: float = 0.0


# -- set construction ------------------------------------------------------------

def uncertainty_coordinates(prob: AroProblem) -> Tuple[Callable[[Polynomial], Polynomial], SemialgebraicSet]:
    """
    Coordinate change and generators for Omega: unit-ball coordinates for an
    ellipsoid (generator 1 - ||u||^2), the defining generators otherwise.
    """
    omega = prob.uncertainty
    space = prob.space
    if isinstance(omega, Ellipsoid):
        if omega.dim == 0:
            return (lambda p: p), SemialgebraicSet(space, [], blocks=(UNCERTAINTY,))
        center, T = omega.unit_ball_map()
        ball = Ellipsoid.unit_ball(omega.dim).as_semialgebraic(space, UNCERTAINTY)
        return (lambda p: p.affine_change(UNCERTAINTY, T, center)), ball
    if isinstance(omega, Polyhedron):
        return (lambda p: p), omega.as_semialgebraic(space, UNCERTAINTY)
    return (lambda p: p), omega


def _ordered(rows: List[Tuple[str, Polynomial]], order: Sequence[str]) -> List[Tuple[int, str, Polynomial]]:
    rank = {kind: k for k, kind in enumerate(order)}
    indexed = [(i, label, p) for i, (label, p) in enumerate(rows)]
    return sorted(indexed, key=lambda row: (rank.get(row[1], len(rank)), row[0]))


def _fixed_state_set(prob: AroProblem, y: np.ndarray, include_constraints: bool) -> Tuple[SemialgebraicSet, Callable]:
    """E_y (or U_y with include_constraints) over (u, x) for a fixed control."""
    change, omega_set = uncertainty_coordinates(prob)

    def prepare(p: Polynomial) -> Polynomial:
        return change(p.fix_block(CONTROL, y))

    inequalities = list(omega_set.inequalities) + [prepare(p) for p in prob.relaxed_state_set]
    if include_constraints:
        inequalities += [prepare(p) for _, p in prob.robust_constraints()]
    equalities = list(omega_set.equalities) + [prepare(p) for p in prob.equalities]
    return SemialgebraicSet(prob.space, inequalities, equalities, blocks=(UNCERTAINTY, STATE)), prepare


def _check_cap(n_variables: int, cap: int, what: str) -> bool:
    if n_variables > cap:
        logger.info("%s skipped: %d variables above the cap of %d", what, n_variables, cap)
        return False
    return True


def _certificate_ok(cert: PutinarCertificate, result: SolveResult) -> bool:
    scale = 1.0 + max(float(np.max(np.abs(result.x))),
                      max((abs(e.constant) for e in cert.target.coefficients.values()), default=0.0))
    residual = cert.identity_residual(result.x)
    if residual > CERTIFICATE_TOL * scale:
        logger.warning("Certificate identity residual %.2e above tolerance", residual)
        return False
    return True


# -- feasibility ------------------------------------------------------------------

def _shift_bound(target: Polynomial, label: str, index: int, domain: SemialgebraicSet, degree: int,
                 sigma0_degree: Optional[int], backend: Optional[str]) -> ConstraintBound:
    start = time.perf_counter()
    builder = ConicProgramBuilder()
    t = builder.add_free(1)[0]
    h = ParametricPolynomial.from_polynomial(target).add(ONE, t)
    cert = putinar_counterpart(builder, h, domain, degree, sigma0_degree)
    builder.set_objective(t)
    result = solve(builder.build(), backend=backend)
    elapsed = time.perf_counter() - start
    if not result.is_optimal:
        return ConstraintBound(label, index, float("inf"), result.status.value, elapsed)
    if not _certificate_ok(cert, result):
        return ConstraintBound(label, index, float("inf"), "CertificateResidual", elapsed)
    return ConstraintBound(label, index, result.objective, "Optimal", elapsed)


def feasibility_check(prob: AroProblem, y: Sequence[float], degree: int = 4,
                      sigma0_degree: Optional[int] = SIGMA0_DEGREE, chaining: str = CHAINING_MODE,
                      order: Sequence[str] = CHAINING_ORDER, variable_cap: int = CHECK_VARIABLE_CAP,
                      backend: Optional[str] = None) -> FeasibilityReport:
    """
    Robust feasibility certificate of a control on the exact second stage.

    Parameters:
    - prob: the AroProblem
    - y: candidate control
    - degree: Putinar certificate degree
    - sigma0_degree: degree cap of the free SOS term
    - chaining: "chained" (append each certified G_i + t_i >= 0 to the set
      for the next subproblem), "parallel" (independent solves, then chained
      re-solves of the failures) or "off"
    - order: label order of the subproblems
    - variable_cap: checks above this many variables are skipped

    Returns:
    - FeasibilityReport with verdict F, IC or SKIPPED
    """
    validate_chaining(chaining)
    start = time.perf_counter()
    y = np.asarray(y, dtype=float).ravel()
    if not _check_cap(prob.n_uncertainty + prob.n_state, variable_cap, "Feasibility check"):
        return FeasibilityReport(Verdict.SKIPPED)
    domain, prepare = _fixed_state_set(prob, y, include_constraints=False)
    rows = _ordered(prob.robust_constraints(), order)

    bounds: Dict[int, ConstraintBound] = {}
    if chaining == "parallel":
        for index, label, p in rows:
            bounds[index] = _shift_bound(prepare(p), label, index, domain, degree, sigma0_degree, backend)
        chain = [(i, l, p) for i, l, p in rows if not bounds[i].certified]
        certified = [prepare(p) + bounds[i].value for i, _, p in rows if bounds[i].certified]
        domain = domain.with_generators(certified)
    else:
        chain = rows
    for index, label, p in chain:
        target = prepare(p)
        bound = _shift_bound(target, label, index, domain, degree, sigma0_degree, backend)
        if index not in bounds or bound.value < bounds[index].value:
            bounds[index] = bound
        if chaining != "off" and bound.status == "Optimal":
            domain = domain.with_generators([target + bound.value])
        logger.debug("Feasibility subproblem %s[%d]: t* = %.3e (%s)", label, index, bound.value, bound.status)

    ordered = [bounds[i] for i, _, _ in rows]
    verdict = Verdict.FEASIBLE if all(b.certified for b in ordered) else Verdict.INCONCLUSIVE
    elapsed = time.perf_counter() - start
    logger.info("Feasibility check: %s (worst shift %.3e, %.1fs)", verdict.value,
                max((b.value for b in ordered), default=float("-inf")), elapsed)
    return FeasibilityReport(verdict, ordered, elapsed)


# -- infeasibility ----------------------------------------------------------------

def _separating_polynomial(prob: AroProblem, domain: SemialgebraicSet, degree: int,
                           sigma0_degree: Optional[int], backend: Optional[str]) -> InfeasibilityReport:
    start = time.perf_counter()
    omega = prob.uncertainty
    if not isinstance(omega, Ellipsoid):
        raise ValueError("Infeasibility certificates need the moments of an ellipsoidal uncertainty set")
    n = omega.dim
    unit = Ellipsoid.unit_ball(n)
    offset = prob.space.slice(UNCERTAINTY).start
    basis = monomial_basis(prob.space.indices([UNCERTAINTY]), degree)
    moments = []
    for mono in basis:
        alpha = [0] * n
        for var, exp in mono:
            alpha[var - offset] = exp
        moments.append(ellipsoid_moment(alpha, unit))

    builder = ConicProgramBuilder()
    coeffs = builder.add_free(len(basis))
    builder.add_soc_constraint(AffineExpr.const(1.0), coeffs)
    h = ParametricPolynomial(prob.space, {mono: expr for mono, expr in zip(basis, coeffs)})
    cert = putinar_counterpart(builder, h, domain, degree, sigma0_degree)
    objective = AffineExpr()
    for expr, m in zip(coeffs, moments):
        objective = objective + m * expr
    builder.set_objective(objective)
    result = solve(builder.build(), backend=backend)
    elapsed = time.perf_counter() - start
    if not result.is_optimal:
        logger.info("Infeasibility certificate program: %s", result.status.value)
        return InfeasibilityReport(Verdict.INCONCLUSIVE, status=result.status.value, time=elapsed)
    values = {mono: result.value(expr) for mono, expr in zip(basis, coeffs)}
    verdict = Verdict.INCONCLUSIVE
    if result.objective < -VERDICT_TOL and _certificate_ok(cert, result):
        verdict = Verdict.NOT_FEASIBLE
    logger.info("Infeasibility check: %s (objective %.3e, %.1fs)", verdict.value, result.objective, elapsed)
    return InfeasibilityReport(verdict, result.objective, values, "Optimal", elapsed)


def infeasibility_check(prob: AroProblem, y: Sequence[float], degree: int = 2,
                        sigma0_degree: Optional[int] = SIGMA0_DEGREE,
                        variable_cap: int = CHECK_VARIABLE_CAP,
                        backend: Optional[str] = None) -> InfeasibilityReport:
    """
    Robust infeasibility certificate for a fixed control.

    Minimizes the integral over Omega of p(z) subject to p >= 0 on U_y and a
    unit coefficient norm; a negative optimum proves that some z in Omega
    admits no feasible state (verdict NF), otherwise the result is IC.
    """
    y = np.asarray(y, dtype=float).ravel()
    if not _check_cap(prob.n_uncertainty + prob.n_state, variable_cap, "Infeasibility check"):
        return InfeasibilityReport(Verdict.SKIPPED)
    domain, _ = _fixed_state_set(prob, y, include_constraints=True)
    return _separating_polynomial(prob, domain, degree, sigma0_degree, backend)


def global_infeasibility_check(prob: AroProblem, degree: int = 2,
                               sigma0_degree: Optional[int] = SIGMA0_DEGREE,
                               variable_cap: int = CHECK_VARIABLE_CAP,
                               backend: Optional[str] = None) -> InfeasibilityReport:
    """
    Infeasibility certificate valid for every control in S_y: a negative
    optimum shows that some z in Omega defeats every (y, x). Infeasibility
    caused by different z for different y is not detected.
    """
    if not _check_cap(prob.n_control + prob.n_uncertainty + prob.n_state, variable_cap,
                      "Global infeasibility check"):
        return InfeasibilityReport(Verdict.SKIPPED)
    change, omega_set = uncertainty_coordinates(prob)
    space = prob.space
    box = []
    for k in range(prob.n_control):
        yk = Polynomial.variable(space, CONTROL, k)
        if np.isfinite(prob.control_lower[k]):
            box.append(yk - float(prob.control_lower[k]))
        if np.isfinite(prob.control_upper[k]):
            box.append(float(prob.control_upper[k]) - yk)
    inequalities = (list(omega_set.inequalities) + box + list(prob.control_inequalities)
                    + [change(p) for p in prob.relaxed_state_set]
                    + [change(p) for _, p in prob.robust_constraints()])
    equalities = list(omega_set.equalities) + [change(p) for p in prob.equalities]
    domain = SemialgebraicSet(space, inequalities, equalities, blocks=(CONTROL, UNCERTAINTY, STATE))
    return _separating_polynomial(prob, domain, degree, sigma0_degree, backend)
