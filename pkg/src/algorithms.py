"""
Robust Solution Algorithms

Quadratic / ellipsoidal pipeline for the adjustable robust problem:

- sdp_lower_bound: Shor relaxation of the S-lemma counterpart, giving a lower
  bound and a starting point
- project_B / project_A: the two projections of the alternating scheme, B
  fixing gamma_i = y^T C_i y and A the convex conic set of the counterpart
- alternating_projections: alternating projections with line search
- dynamic_outer: trust-region loop re-linearizing the equalities around the
  last recovered state
"""

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence

import numpy as np

from src.aro import (
    CONTROL,
    AroProblem,
    LiftedControl,
    NoConvergenceError,
    QuadraticRobustConstraint,
    RankDeficientError,
    SingularJacobianError,
    eliminate_state,
    linearize_equalities,
    slemma_counterpart,
    solve_state,
    validate_trust_norm,
)
from src.conic import AffineExpr, ConicProgramBuilder, SolveStatus, solve
from src.poly import Polynomial
from src.uncertainty import Ellipsoid

try:
    from config import (
        AP_TOL, AP_F0, AP_MAX_ITERATIONS, AP_STEP, AP_STALL_WINDOW, AP_STALL_RATIO, COUPLING_MODE,
        OUTER_TOL, OUTER_MAX_ITERATIONS, OUTER_NORM, OUTER_RANK_RETRIES, LARGE_NETWORK_BUSES,
        PSD_EIGEN_TOL,
    )
except ImportError:
    AP_TOL = 1e-5
    AP_F0 = 1e5
    AP_MAX_ITERATIONS = 100
    AP_STEP = 1.0
    AP_STALL_WINDOW = 10
    AP_STALL_RATIO = 0.01
    COUPLING_MODE = "literal"
    OUTER_TOL = 1e-5
    OUTER_MAX_ITERATIONS = 1
    OUTER_NORM = "2"
    OUTER_RANK_RETRIES = 5
    LARGE_NETWORK_BUSES = 30
    PSD_EIGEN_TOL = 1e-9

logger = logging.getLogger(__name__)

COUPLING_MODES = ("literal", "convex")


class Outcome(Enum):
    FEASIBLE = "F"
    LOWER_BOUND_INFEASIBLE = "LNF"
    NOT_CONVERGED = "NC"
    NUMERICAL_PROBLEM = "NP"


def validate_coupling(mode: str) -> None:
    if mode not in COUPLING_MODES:
        raise ValueError(f"Coupling mode '{mode}' is not one of {COUPLING_MODES}")


@dataclass
class ApParams:
    tol: float = AP_TOL
    f0: float = AP_F0
    max_iterations: int = AP_MAX_ITERATIONS
    step_sequence: Sequence[float] = (AP_STEP,)
    stall_window: int = AP_STALL_WINDOW
    stall_ratio: float = AP_STALL_RATIO

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"AP tolerance must be positive, got {self.tol}")
        if self.max_iterations < 1:
            raise ValueError(f"AP iteration cap must be at least 1, got {self.max_iterations}")
        self.step_sequence = tuple(float(v) for v in self.step_sequence) or (1.0,)
        for nu in self.step_sequence:
            if not 0 < nu <= 1:
                raise ValueError(f"Line-search steps must lie in (0, 1], got {nu}")

    def step(self, k: int) -> float:
        return self.step_sequence[min(k, len(self.step_sequence) - 1)]


@dataclass
class OuterParams:
    """
    Outer loop settings. The trust radius is eps_rule(x) when given, else
    ||x|| / 10 below LARGE_NETWORK_BUSES buses and ||x|| / 30 from there on.
    """
    tol: float = OUTER_TOL
    norm: str = OUTER_NORM
    max_iterations: int = OUTER_MAX_ITERATIONS
    network_size: int = 0
    eps_rule: Optional[Callable[[np.ndarray], float]] = None
    rank_retries: int = OUTER_RANK_RETRIES
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"Outer tolerance must be positive, got {self.tol}")
        validate_trust_norm(self.norm)

    def radius(self, x: np.ndarray) -> float:
        if self.eps_rule is not None:
            return float(self.eps_rule(x))
        divisor = 10.0 if self.network_size < LARGE_NETWORK_BUSES else 30.0
        return float(np.linalg.norm(x)) / divisor


@dataclass(eq=False)
class ArcSubproblem:
    """
    The linearized robust counterpart over one trust region: quadratic robust
    constraints on an ellipsoid, a control box and a quadratic objective.

    Constraints are split by coupling mode: `projected` ones keep
    gamma_i = y^T C_i y through projection B, `convex_le` ones live in A as
    y^T C_i y <= gamma_i, `convex_ge` ones as gamma_i <= y^T C_i y, and
    constraints with C_i = 0 carry gamma_i = 0.
    """
    constraints: List[QuadraticRobustConstraint]
    omega: Ellipsoid
    lower: np.ndarray
    upper: np.ndarray
    objective: Polynomial
    coupling: str = COUPLING_MODE
    projected: List[int] = field(init=False)
    convex_le: List[int] = field(init=False)
    convex_ge: List[int] = field(init=False)
    nonconvex: List[int] = field(init=False)
    convex: List[int] = field(init=False)

    def __post_init__(self):
        validate_coupling(self.coupling)
        if not isinstance(self.omega, Ellipsoid):
            raise ValueError("The quadratic pipeline needs an ellipsoidal uncertainty set")
        self.lower = np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.asarray(self.upper, dtype=float).ravel()
        self.projected, self.convex_le, self.convex_ge = [], [], []
        for i, qc in enumerate(self.constraints):
            if not np.any(qc.C):
                continue
            nsd = np.linalg.eigvalsh(qc.C)[-1] <= PSD_EIGEN_TOL
            if self.coupling == "literal" and qc.psd_flag:
                self.convex_le.append(i)
            elif self.coupling == "convex" and nsd:
                self.convex_ge.append(i)
            else:
                self.projected.append(i)
        used = np.zeros(self.n_control, dtype=bool)
        for i in self.projected:
            C = self.constraints[i].C
            used |= np.any(C != 0, axis=0) | np.any(C != 0, axis=1)
        self.nonconvex = [int(k) for k in np.flatnonzero(used)]
        self.convex = [int(k) for k in np.flatnonzero(~used)]
        self._H, self._g, self._c = self.objective.quadratic_form([CONTROL])

    @classmethod
    def from_problem(cls, prob: AroProblem, constraints: List[QuadraticRobustConstraint],
                     coupling: str = COUPLING_MODE) -> "ArcSubproblem":
        return cls(constraints, prob.uncertainty, prob.control_lower, prob.control_upper,
                   prob.objective, coupling)

    @property
    def n_control(self) -> int:
        return self.lower.size

    @property
    def objective_is_convex(self) -> bool:
        return self._H.size == 0 or np.linalg.eigvalsh(self._H)[0] >= -PSD_EIGEN_TOL

    def objective_value(self, y: np.ndarray) -> float:
        return float(y @ self._H @ y + self._g @ y + self._c)

    def coupling_residual(self, point: "ArcPoint") -> float:
        """Distance of a point from B in the projected gamma coordinates."""
        if not self.projected:
            return 0.0
        diffs = [point.gamma[i] - point.y @ self.constraints[i].C @ point.y for i in self.projected]
        return float(np.linalg.norm(diffs))


@dataclass
class ArcPoint:
    y: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray

    def scaled(self, factor: float) -> "ArcPoint":
        return ArcPoint(self.y * factor, self.gamma * factor, self.lam * factor)


@dataclass
class LowerBoundResult:
    outcome: Outcome
    bound: float = math.nan
    point: Optional[ArcPoint] = None
    solve_time: float = 0.0


@dataclass
class ProjectionResult:
    status: SolveStatus
    point: Optional[ArcPoint] = None
    distance: float = math.nan


@dataclass
class ApResult:
    outcome: Outcome
    point: Optional[ArcPoint] = None
    objective: float = math.inf
    lower_bound: float = math.nan
    iterations: int = 0
    displacements: List[float] = field(default_factory=list)
    solve_time: float = 0.0

    @property
    def y(self) -> Optional[np.ndarray]:
        return None if self.point is None else self.point.y


def _outcome_of(status: SolveStatus) -> Outcome:
    if status == SolveStatus.PRIMAL_INFEASIBLE:
        return Outcome.LOWER_BOUND_INFEASIBLE
    if status == SolveStatus.DUAL_INFEASIBLE:
        logger.warning("Lower-bound relaxation is unbounded; reporting it as a numerical problem")
    return Outcome.NUMERICAL_PROBLEM


def _control_variables(builder: ConicProgramBuilder, sub: ArcSubproblem) -> List[AffineExpr]:
    y = builder.add_free(sub.n_control)
    for k in range(sub.n_control):
        if np.isfinite(sub.lower[k]):
            builder.add_inequality(y[k], float(sub.lower[k]))
        if np.isfinite(sub.upper[k]):
            builder.add_inequality(-y[k], -float(sub.upper[k]))
    return y


def _objective_le(builder: ConicProgramBuilder, sub: ArcSubproblem, y: List[AffineExpr], rhs: AffineExpr):
    if not sub.objective_is_convex:
        raise ValueError("The projection onto A needs a convex objective")
    builder.add_convex_quadratic_le(y, sub._H, sub._g, sub._c, rhs)


def sdp_lower_bound(sub: ArcSubproblem, backend: Optional[str] = None) -> LowerBoundResult:
    """
    Shor relaxation of the S-lemma counterpart: gamma_i = <Y, C_i> with
    Y = [[1, y^T], [y, Y_yy]] PSD.

    Parameters:
    - sub: the ArcSubproblem
    - backend: conic solver backend

    Returns:
    - LowerBoundResult with outcome F (bound and start point), LNF or NP
    """
    builder = ConicProgramBuilder()
    lifted = LiftedControl(builder, sub.objective.space, sub.lower, sub.upper)
    gammas, lams = [], []
    for qc in sub.constraints:
        gamma = lifted.gram(qc.C) if np.any(qc.C) else AffineExpr()
        _, lam, gamma = slemma_counterpart(builder, qc, sub.omega, lifted.y, gamma)
        gammas.append(gamma)
        lams.append(lam)
    if sub.objective_is_convex:
        epigraph = builder.add_free(1)[0]
        builder.add_convex_quadratic_le(lifted.y, sub._H, sub._g, sub._c, epigraph)
        builder.set_objective(epigraph)
    else:
        builder.set_objective(lifted.lift_polynomial(sub.objective))
    result = solve(builder.build(), backend=backend)
    if not result.is_optimal:
        logger.info("SDP lower bound: %s", result.status.value)
        return LowerBoundResult(_outcome_of(result.status), solve_time=result.solve_time)
    point = ArcPoint(np.array([result.value(e) for e in lifted.y]),
                     np.array([result.value(g) for g in gammas]),
                     np.array([result.value(l) for l in lams]))
    logger.info("SDP lower bound %.6g", result.objective)
    return LowerBoundResult(Outcome.FEASIBLE, result.objective, point, result.solve_time)


def project_B(point: ArcPoint, sub: ArcSubproblem) -> ArcPoint:
    """gamma_i := y^T C_i y on the projected constraints; y and lambda unchanged."""
    gamma = point.gamma.copy()
    for i in sub.projected:
        gamma[i] = point.y @ sub.constraints[i].C @ point.y
    return ArcPoint(point.y.copy(), gamma, point.lam.copy())


def _set_A(builder: ConicProgramBuilder, sub: ArcSubproblem, f0: Optional[float]):
    """Variables and constraints of the convex set A (optionally cut by f <= f0)."""
    y = _control_variables(builder, sub)
    gammas, lams = [], []
    for i, qc in enumerate(sub.constraints):
        if not np.any(qc.C):
            gamma = AffineExpr()
        else:
            gamma = builder.add_free(1)[0]
            if i in sub.convex_le:
                builder.add_convex_quadratic_le(y, qc.C, None, 0.0, gamma)
            elif i in sub.convex_ge:
                builder.add_convex_quadratic_le(y, -qc.C, None, 0.0, -gamma)
        _, lam, gamma = slemma_counterpart(builder, qc, sub.omega, y, gamma)
        gammas.append(gamma)
        lams.append(lam)
    if f0 is not None:
        _objective_le(builder, sub, y, AffineExpr.const(f0))
    return y, gammas, lams


def _read_point(result, y, gammas, lams) -> ArcPoint:
    return ArcPoint(np.array([result.value(e) for e in y]),
                    np.array([result.value(g) for g in gammas]),
                    np.array([result.value(l) for l in lams]))


def project_A(target: ArcPoint, sub: ArcSubproblem, f0: float, backend: Optional[str] = None) -> ProjectionResult:
    """
    Euclidean projection of (y^nc, gamma_projected) onto A intersected with {f <= f0}.

    Parameters:
    - target: point whose y^nc and projected gamma coordinates are the target
    - sub: the ArcSubproblem
    - f0: objective level

    Returns:
    - ProjectionResult (status Optimal with the full point and the distance)
    """
    builder = ConicProgramBuilder()
    y, gammas, lams = _set_A(builder, sub, f0)
    parts = [y[k] - float(target.y[k]) for k in sub.nonconvex]
    parts += [gammas[i] - float(target.gamma[i]) for i in sub.projected]
    if parts:
        distance = builder.add_free(1)[0]
        builder.add_soc_constraint(distance, parts)
        builder.set_objective(distance)
    else:
        distance = AffineExpr()
    result = solve(builder.build(), backend=backend)
    if not result.is_optimal:
        return ProjectionResult(result.status)
    return ProjectionResult(result.status, _read_point(result, y, gammas, lams), result.value(distance))


def polish_convex_part(point: ArcPoint, sub: ArcSubproblem, backend: Optional[str] = None) -> ArcPoint:
    """
    Best y^c for fixed y^nc: minimize f over A with y^nc fixed and the
    projected gamma_i set to their exact values. Returns the input point when
    the polish program is not solved to optimality.
    """
    builder = ConicProgramBuilder()
    y, gammas, lams = _set_A(builder, sub, None)
    exact = project_B(point, sub)
    for k in sub.nonconvex:
        builder.add_equality(y[k], float(point.y[k]))
    for i in sub.projected:
        builder.add_equality(gammas[i], float(exact.gamma[i]))
    epigraph = builder.add_free(1)[0]
    _objective_le(builder, sub, y, epigraph)
    builder.set_objective(epigraph)
    result = solve(builder.build(), backend=backend)
    if not result.is_optimal:
        logger.debug("Polish step not solved (%s); keeping the projected point", result.status.value)
        return exact
    polished = _read_point(result, y, gammas, lams)
    return polished if sub.objective_value(polished.y) <= sub.objective_value(exact.y) else exact


def alternating_projections(sub: ArcSubproblem, params: Optional[ApParams] = None,
                            lower: Optional[LowerBoundResult] = None,
                            backend: Optional[str] = None) -> ApResult:
    """
    Alternating projections between B and A with a line search on the
    objective level f0.

    Parameters:
    - sub: the ArcSubproblem
    - params: ApParams (tolerance, f0, iteration cap, step sequence)
    - lower: precomputed sdp_lower_bound result (computed when omitted)

    Returns:
    - ApResult with outcome F (point, objective), LNF, NC or NP
    """
    params = params or ApParams()
    start = time.perf_counter()
    lower = lower or sdp_lower_bound(sub, backend)
    if lower.outcome != Outcome.FEASIBLE:
        return ApResult(lower.outcome, solve_time=time.perf_counter() - start)
    beta = lower.bound
    f0 = params.f0
    current = lower.point
    best: Optional[ArcPoint] = None
    best_value = math.inf
    displacements: List[float] = []
    restarts = 0

    for iteration in range(1, params.max_iterations + 1):
        target = project_B(current, sub)
        projection = project_A(target, sub, f0, backend)
        if not projection.status == SolveStatus.OPTIMAL:
            outcome = (Outcome.NUMERICAL_PROBLEM if projection.status == SolveStatus.NUMERICAL_PROBLEM
                       else Outcome.NOT_CONVERGED)
            if best is not None:
                break
            logger.info("Projection onto A failed (%s) at iteration %d", projection.status.value, iteration)
            return ApResult(outcome, lower_bound=beta, iterations=iteration, displacements=displacements,
                            solve_time=time.perf_counter() - start)
        current = projection.point
        residual = sub.coupling_residual(current)
        displacements.append(projection.distance)
        logger.debug("AP iteration %d: displacement %.3e, coupling residual %.3e", iteration,
                     projection.distance, residual)

        if residual <= params.tol:
            polished = polish_convex_part(current, sub, backend)
            value = sub.objective_value(polished.y)
            if value < best_value:
                best, best_value = polished, value
            nu = params.step(restarts)
            if nu >= 1.0:
                break
            restarts += 1
            f0 = nu * value + (1.0 - nu) * beta
            current = polished.scaled(1.0 / nu)
            displacements.clear()
            logger.debug("Line search: new level f0 = %.6g", f0)
            continue

        window = params.stall_window
        if len(displacements) > window and displacements[-1] >= (1.0 - params.stall_ratio) * displacements[-1 - window]:
            logger.info("AP stalled after %d iterations", iteration)
            break

    elapsed = time.perf_counter() - start
    if best is None:
        return ApResult(Outcome.NOT_CONVERGED, lower_bound=beta, iterations=iteration,
                        displacements=displacements, solve_time=elapsed)
    logger.info("AP feasible point with objective %.6g after %d iterations", best_value, iteration)
    return ApResult(Outcome.FEASIBLE, best, best_value, beta, iteration, displacements, elapsed)


@dataclass
class OuterIterate:
    outcome: Outcome
    objective: float
    lower_bound: float
    ap_iterations: int
    eps: float
    y: Optional[np.ndarray] = None
    x: Optional[np.ndarray] = None
    time: float = 0.0


@dataclass
class OuterResult:
    history: List[OuterIterate]

    @property
    def best(self) -> Optional[OuterIterate]:
        feasible = [it for it in self.history if it.outcome == Outcome.FEASIBLE]
        return min(feasible, key=lambda it: it.objective) if feasible else None

    @property
    def outcome(self) -> Outcome:
        best = self.best
        if best is not None:
            return Outcome.FEASIBLE
        return self.history[-1].outcome if self.history else Outcome.NOT_CONVERGED


def _reanchor(prob: AroProblem, y: np.ndarray, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    warm = x + 1e-3 * max(1.0, float(np.linalg.norm(x))) * rng.standard_normal(x.size) / math.sqrt(max(x.size, 1))
    return solve_state(prob.equalities, prob.point(y=y, z=None), warm)


def dynamic_outer(prob: AroProblem, y0: Sequence[float], x0: Sequence[float],
                  params: Optional[OuterParams] = None, ap_params: Optional[ApParams] = None,
                  coupling: str = COUPLING_MODE, backend: Optional[str] = None) -> OuterResult:
    """
    Trust-region outer loop: linearize at the last state, eliminate, solve
    the subproblem by alternating projections and recover the new state by
    a Newton power-flow style solve of L(y, 0, x) = 0.

    Parameters:
    - prob: AroProblem with an ellipsoidal uncertainty set
    - y0, x0: start control and matching state (L(y0, 0, x0) = 0)
    - params: OuterParams; ap_params: ApParams

    Returns:
    - OuterResult with one OuterIterate per outer iteration
    """
    params = params or OuterParams()
    rng = np.random.default_rng(params.seed)
    y_prev = np.asarray(y0, dtype=float).ravel()
    x_prev = np.asarray(x0, dtype=float).ravel()
    f_prev = math.inf
    history: List[OuterIterate] = []

    for j in range(1, params.max_iterations + 1):
        start = time.perf_counter()
        eps = params.radius(x_prev)
        stage = None
        anchor = x_prev
        for attempt in range(params.rank_retries + 1):
            try:
                stage = linearize_equalities(prob, anchor, eps, center=anchor, norm=params.norm)
                break
            except RankDeficientError as exc:
                if attempt == params.rank_retries:
                    raise
                eps /= 2.0
                logger.warning("%s; halving the trust radius to %.3e and re-anchoring", exc, eps)
                try:
                    anchor = _reanchor(prob, y_prev, x_prev, rng)
                except (NoConvergenceError, SingularJacobianError) as newton_exc:
                    logger.debug("Re-anchoring Newton solve failed: %s", newton_exc)

        constraints, recover = eliminate_state(prob, stage)
        sub = ArcSubproblem.from_problem(prob, constraints, coupling)
        ap = alternating_projections(sub, ap_params, backend=backend)
        elapsed = time.perf_counter() - start
        if ap.outcome != Outcome.FEASIBLE:
            history.append(OuterIterate(ap.outcome, math.inf, ap.lower_bound, ap.iterations, eps, time=elapsed))
            logger.info("Outer iteration %d: %s", j, ap.outcome.value)
            break

        y_new = ap.y
        try:
            x_new = solve_state(prob.equalities, prob.point(y=y_new), recover(y_new, np.zeros(prob.n_uncertainty)))
        except (NoConvergenceError, SingularJacobianError) as exc:
            logger.warning("State recovery by Newton failed (%s); using the linear decision rule", exc)
            x_new = recover(y_new, np.zeros(prob.n_uncertainty))
        history.append(OuterIterate(Outcome.FEASIBLE, ap.objective, ap.lower_bound, ap.iterations, eps,
                                    y_new, x_new, elapsed))
        logger.info("Outer iteration %d: objective %.6g (lower bound %.6g, %d AP iterations)",
                    j, ap.objective, ap.lower_bound, ap.iterations)
        if f_prev - ap.objective <= params.tol:
            break
        f_prev = ap.objective
        y_prev, x_prev = y_new, x_new
    return OuterResult(history)
