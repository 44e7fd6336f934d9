"""
Adjustable Robust Problem Module

This module holds the two-stage adjustable robust polynomial problem

    min f(y)  s.t.  y in S_y,  and for every z in Omega there is an x with
                    L(y, z, x) = 0,  G(y, z, x) >= 0,  x in S_x

together with the tools that turn it into deterministic conic constraints:
linearization of the equalities around a state anchor, elimination of the
state through the resulting linear decision rule, and robust counterparts
from LP duality (polyhedral Omega), the S-lemma (ellipsoidal Omega,
quadratic constraints) or Putinar certificates (general semialgebraic sets).

Variables live in a VariableSpace with the blocks CONTROL ("y"),
UNCERTAINTY ("z") and STATE ("x").
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.conic import (
    AffineExpr,
    ConicProgram,
    ConicProgramBuilder,
    PsdVariable,
    affine_sum,
    svec_index,
)
from src.poly import (
    ONE,
    DegreeOverflowError,
    Monomial,
    Polynomial,
    PolynomialVector,
    VariableSpace,
    monomial_basis,
    monomial_degree,
    monomial_multiply,
    taylor1,
    validate_dimension,
)
from src.uncertainty import Ellipsoid, Polyhedron, SemialgebraicSet, UncertaintySet

try:
    from config import RANK_CONDITION_LIMIT, PSD_EIGEN_TOL, NEWTON_TOL, NEWTON_MAX_ITERATIONS, SIGMA0_DEGREE
except ImportError:
    RANK_CONDITION_LIMIT = 1e10
    PSD_EIGEN_TOL = 1e-9
    NEWTON_TOL = 1e-8
    NEWTON_MAX_ITERATIONS = 30
    SIGMA0_DEGREE = 2

logger = logging.getLogger(__name__)

CONTROL = "y"
UNCERTAINTY = "z"
STATE = "x"

TRUST_NORMS = ("2", "inf")
CERTIFICATES = ("auto", "lp", "slemma", "putinar")


class RankDeficientError(RuntimeError):
    """The equality Jacobian at the anchor is singular or badly conditioned."""


class NoConvergenceError(RuntimeError):
    """Newton iteration did not reach the residual tolerance."""


class SingularJacobianError(RuntimeError):
    """Newton iteration hit a singular Jacobian."""


def validate_trust_norm(norm: str) -> None:
    if norm not in TRUST_NORMS:
        raise ValueError(f"Trust region norm '{norm}' is not one of {TRUST_NORMS}")


def validate_certificate(certificate: str) -> None:
    if certificate not in CERTIFICATES:
        raise ValueError(f"Certificate '{certificate}' is not one of {CERTIFICATES}")


def _uses_only(p: Polynomial, allowed: set) -> bool:
    return p.variables() <= allowed


@dataclass(eq=False)
class AroProblem:
    """
    Two-stage adjustable robust polynomial problem.

    Parameters:
    - space: VariableSpace with blocks "y", "z" and "x"
    - objective: Polynomial in y
    - control_lower / control_upper: box S_y (use +-inf for free coordinates)
    - equalities: L, one entry per state coordinate, no monomial mixing x and y
    - inequalities: G in (y, z, x), with one label per entry
    - state_set: S_x generators in x (>= 0), with labels
    - relaxed_state_set: generators of the wider set used by the posterior checks
    - uncertainty: Ellipsoid, Polyhedron or SemialgebraicSet over z
    - control_inequalities: optional extra polynomial constraints of S_y
    """
    space: VariableSpace
    objective: Polynomial
    control_lower: np.ndarray
    control_upper: np.ndarray
    equalities: PolynomialVector
    inequalities: PolynomialVector
    state_set: PolynomialVector
    relaxed_state_set: PolynomialVector
    uncertainty: UncertaintySet
    inequality_labels: List[str] = field(default_factory=list)
    state_labels: List[str] = field(default_factory=list)
    control_inequalities: List[Polynomial] = field(default_factory=list)

    def __post_init__(self):
        for name in (CONTROL, UNCERTAINTY, STATE):
            self.space.block(name)
        ny, nx = self.n_control, self.n_state
        self.control_lower = np.asarray(self.control_lower, dtype=float).ravel()
        self.control_upper = np.asarray(self.control_upper, dtype=float).ravel()
        validate_dimension(ny, self.control_lower.size, "control lower bounds")
        validate_dimension(ny, self.control_upper.size, "control upper bounds")
        if np.any(self.control_lower > self.control_upper):
            raise ValueError("Control box has a lower bound above its upper bound")
        validate_dimension(nx, len(self.equalities), "equalities (one per state coordinate)")
        y_vars = set(self.space.indices([CONTROL]))
        x_vars = set(self.space.indices([STATE]))
        if not _uses_only(self.objective, y_vars):
            raise ValueError("The objective may depend on the control block only")
        for k, p in enumerate(self.equalities):
            for mono in p.terms:
                used = {v for v, _ in mono}
                if used & x_vars and used & y_vars:
                    raise ValueError(f"Equality {k} has a monomial mixing state and control variables")
        for p in list(self.state_set) + list(self.relaxed_state_set):
            if not _uses_only(p, x_vars):
                raise ValueError("State set generators may depend on the state block only")
        for p in self.control_inequalities:
            if not _uses_only(p, y_vars):
                raise ValueError("Control set generators may depend on the control block only")
        if not self.inequality_labels:
            self.inequality_labels = ["G"] * len(self.inequalities)
        if not self.state_labels:
            self.state_labels = ["V"] * len(self.state_set)
        validate_dimension(len(self.inequalities), len(self.inequality_labels), "inequality labels")
        validate_dimension(len(self.state_set), len(self.state_labels), "state set labels")
        validate_dimension(self.n_uncertainty, self.uncertainty.dim, "uncertainty set")

    @property
    def n_control(self) -> int:
        return self.space.block(CONTROL).dim

    @property
    def n_state(self) -> int:
        return self.space.block(STATE).dim

    @property
    def n_uncertainty(self) -> int:
        return self.space.block(UNCERTAINTY).dim

    def split_equalities(self) -> Tuple[PolynomialVector, PolynomialVector]:
        """L = L1(z, x) + L2(y, z): monomials with state variables go to L1."""
        x_vars = set(self.space.indices([STATE]))
        first, second = [], []
        for p in self.equalities:
            with_x = {m: c for m, c in p.terms.items() if any(v in x_vars for v, _ in m)}
            rest = {m: c for m, c in p.terms.items() if m not in with_x}
            first.append(Polynomial(self.space, with_x))
            second.append(Polynomial(self.space, rest))
        return PolynomialVector(first, self.space), PolynomialVector(second, self.space)

    def robust_constraints(self) -> List[Tuple[str, Polynomial]]:
        """G followed by S_x, with their labels."""
        return (list(zip(self.inequality_labels, self.inequalities))
                + list(zip(self.state_labels, self.state_set)))

    def with_uncertainty(self, uncertainty: UncertaintySet, space: Optional[VariableSpace] = None,
                         equalities: Optional[PolynomialVector] = None,
                         inequalities: Optional[PolynomialVector] = None) -> "AroProblem":
        """A copy with another uncertainty set (and optionally rebuilt polynomials)."""
        return AroProblem(space or self.space, self.objective, self.control_lower, self.control_upper,
                          equalities or self.equalities, inequalities or self.inequalities,
                          self.state_set, self.relaxed_state_set, uncertainty,
                          list(self.inequality_labels), list(self.state_labels),
                          list(self.control_inequalities))

    def point(self, y=None, z=None, x=None) -> Dict[str, np.ndarray]:
        """Assemble a block point, missing blocks are zero."""
        out = {}
        for name, values in ((CONTROL, y), (UNCERTAINTY, z), (STATE, x)):
            dim = self.space.block(name).dim
            out[name] = np.zeros(dim) if values is None else np.asarray(values, dtype=float).ravel()
        return out


@dataclass(eq=False)
class LinearizedStage:
    """
    Linearized equalities A x + L2hat(y, z) = 0 around an anchor, with the
    trust region ||x - center|| <= eps on which they stand in for L.
    """
    anchor: np.ndarray
    A: np.ndarray
    A_inv: np.ndarray
    offset: PolynomialVector
    center: np.ndarray
    eps: float
    norm: str = "2"

    def __post_init__(self):
        validate_trust_norm(self.norm)
        n = self.A.shape[0]
        if np.max(np.abs(self.A @ self.A_inv - np.eye(n)), initial=0.0) > 1e-8 * max(1.0, np.linalg.norm(self.A_inv)):
            raise ValueError("A_inv is not the inverse of A")
        self.state_map = self.offset.linear_combination(-self.A_inv)

    def recover(self, y: Sequence[float], z: Sequence[float]) -> np.ndarray:
        """x(y, z) = -A_inv L2hat(y, z)."""
        return self.state_map.evaluate({CONTROL: y, UNCERTAINTY: z})


def linearize_equalities(prob: AroProblem, anchor: Sequence[float], eps: float = math.inf,
                         center: Optional[Sequence[float]] = None, norm: str = "2") -> LinearizedStage:
    """
    First-order expansion of L in x around (z = 0, anchor).

    Parameters:
    - prob: the AroProblem
    - anchor: state anchor x_j
    - eps: trust radius (inf for none)
    - center: trust region center, defaults to the anchor
    - norm: "2" or "inf"

    Returns:
    - LinearizedStage

    Raises:
    - RankDeficientError when the Jacobian condition number exceeds the limit
    """
    anchor = np.asarray(anchor, dtype=float).ravel()
    amap, J = taylor1(prob.equalities, STATE, anchor)
    cond = np.linalg.cond(J) if J.size else 1.0
    if not np.isfinite(cond) or cond > RANK_CONDITION_LIMIT:
        raise RankDeficientError(f"Equality Jacobian at the anchor has condition number {cond:.3e}")
    logger.debug("Linearized %d equalities, Jacobian condition %.3e", len(J), cond)
    return LinearizedStage(anchor, J, np.linalg.inv(J), amap.offset,
                           anchor.copy() if center is None else np.asarray(center, dtype=float).ravel(),
                           float(eps), norm)


@dataclass(eq=False)
class QuadraticRobustConstraint:
    """
    z^T A z + (y^T B + b^T) z + y^T C y + c^T y + d >= 0 for all z in Omega.
    """
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    C: np.ndarray
    c: np.ndarray
    d: float
    label: str = ""
    psd_flag: bool = field(init=False)

    def __post_init__(self):
        for name in ("A", "C"):
            M = getattr(self, name)
            if M.size and np.max(np.abs(M - M.T)) > 1e-12 * max(1.0, np.max(np.abs(M))):
                raise ValueError(f"Matrix {name} of a quadratic robust constraint must be symmetric")
        self.psd_flag = bool(self.C.size == 0 or np.linalg.eigvalsh(self.C)[0] >= -PSD_EIGEN_TOL)

    @classmethod
    def from_polynomial(cls, p: Polynomial, label: str = "") -> "QuadraticRobustConstraint":
        """Read the matrices off a polynomial of degree <= 2 in (y, z)."""
        space = p.space
        ny, nz = space.block(CONTROL).dim, space.block(UNCERTAINTY).dim
        H, g, const = p.quadratic_form([CONTROL, UNCERTAINTY])
        return cls(A=H[ny:, ny:], B=2.0 * H[:ny, ny:], b=g[ny:], C=H[:ny, :ny], c=g[:ny],
                   d=float(const), label=label)

    @property
    def n_control(self) -> int:
        return self.c.size

    @property
    def n_uncertainty(self) -> int:
        return self.b.size

    def evaluate(self, y: Sequence[float], z: Sequence[float]) -> float:
        y = np.asarray(y, dtype=float).ravel()
        z = np.asarray(z, dtype=float).ravel()
        return float(z @ self.A @ z + (y @ self.B + self.b) @ z + y @ self.C @ y + self.c @ y + self.d)

    def worst_case(self, y: Sequence[float], samples: np.ndarray) -> float:
        """Smallest value over sampled uncertainty points (rows of samples)."""
        return min(self.evaluate(y, z) for z in samples)


def trust_region_polynomials(space: VariableSpace, stage: LinearizedStage) -> List[Polynomial]:
    """The trust region in x: one quadratic (2-norm) or 2 n_x linear (inf-norm) generators."""
    if not math.isfinite(stage.eps):
        return []
    x = [Polynomial.variable(space, STATE, k) for k in range(space.block(STATE).dim)]
    if stage.norm == "2":
        total = Polynomial.constant(space, stage.eps ** 2)
        for xk, ck in zip(x, stage.center):
            total = total - (xk - float(ck)) ** 2
        return [total]
    out = []
    for xk, ck in zip(x, stage.center):
        out.append(stage.eps - (xk - float(ck)))
        out.append(stage.eps + (xk - float(ck)))
    return out


def eliminated_polynomials(prob: AroProblem, stage: LinearizedStage) -> List[Tuple[str, Polynomial]]:
    """G, S_x and the trust region with x replaced by the linear decision rule."""
    rows = prob.robust_constraints() + [("T", p) for p in trust_region_polynomials(prob.space, stage)]
    replacements = list(stage.state_map)
    return [(label, p.substitute(STATE, replacements)) for label, p in rows]


def eliminate_state(prob: AroProblem, stage: LinearizedStage
                    ) -> Tuple[List[QuadraticRobustConstraint], Callable[[Sequence[float], Sequence[float]], np.ndarray]]:
    """
    Quadratic robust constraints in (y, z) after eliminating x.

    Returns:
    - (constraints, recover) with recover(y, z) -> x

    Raises:
    - DegreeOverflowError when an eliminated constraint is not quadratic
      (use counterpart_program with Putinar certificates instead)
    """
    constraints = [QuadraticRobustConstraint.from_polynomial(p, label)
                   for label, p in eliminated_polynomials(prob, stage)]
    logger.debug("Eliminated state: %d quadratic robust constraints (%d with PSD C)",
                 len(constraints), sum(qc.psd_flag for qc in constraints))
    return constraints, stage.recover


# -- certificates ----------------------------------------------------------

def robust_lp_counterpart(builder: ConicProgramBuilder, h1: AffineExpr, h2: Sequence[AffineExpr],
                          omega: Polyhedron) -> List[AffineExpr]:
    """
    h1 + z^T h2 >= 0 for all z with A z <= b, by LP duality:
    dual z_d >= 0, A^T z_d + h2 = 0 and h1 - b^T z_d >= 0.

    Returns:
    - the dual variables
    """
    validate_dimension(omega.dim, len(h2), "uncertain coefficients")
    duals = builder.add_nonneg(omega.A.shape[0])
    for j in range(omega.dim):
        builder.add_equality(affine_sum(duals, omega.A[:, j]) + h2[j])
    builder.add_inequality(h1 - affine_sum(duals, omega.b))
    return duals


def slemma_counterpart(builder: ConicProgramBuilder, qc: QuadraticRobustConstraint, omega: Ellipsoid,
                       y: Sequence[AffineExpr], gamma: Optional[AffineExpr] = None
                       ) -> Tuple[Optional[PsdVariable], AffineExpr, AffineExpr]:
    """
    Exact S-lemma reformulation of a quadratic robust constraint on an ellipsoid,
    with gamma standing in for y^T C y.

    Returns:
    - (PSD block or None for the zero set, multiplier lambda, gamma)
    """
    validate_dimension(omega.dim, qc.n_uncertainty, "ellipsoid of a robust constraint")
    if gamma is None:
        gamma = builder.add_free(1)[0]
    base = gamma + affine_sum(y, qc.c) + qc.d
    if omega.dim == 0:
        builder.add_inequality(base)
        return None, AffineExpr(), gamma
    lam = builder.add_nonneg(1)[0]
    S, center = omega.shape, omega.center
    Sc = S @ center
    n = omega.dim
    matrix: List[List[AffineExpr]] = [[AffineExpr() for _ in range(n + 1)] for _ in range(n + 1)]
    matrix[0][0] = base - lam * float(omega.radius - center @ Sc)
    for j in range(n):
        matrix[j + 1][0] = 0.5 * (affine_sum(y, qc.B[:, j]) + qc.b[j]) - lam * float(Sc[j])
        for i in range(j, n):
            matrix[i + 1][j + 1] = lam * float(S[i, j]) + float(qc.A[i, j])
    return builder.add_psd_constraint(matrix), lam, gamma


@dataclass(eq=False)
class ParametricPolynomial:
    """Polynomial whose coefficients are affine expressions in program variables."""
    space: VariableSpace
    coefficients: Dict[Monomial, AffineExpr]

    @classmethod
    def from_polynomial(cls, p: Polynomial, parameter_vars: Sequence[int] = (),
                        lift: Optional[Callable[[Monomial], AffineExpr]] = None) -> "ParametricPolynomial":
        """
        Split every monomial into its parameter part (mapped through lift) and
        the remaining variables; without parameters the coefficients are constants.
        """
        params = set(parameter_vars)
        coefficients: Dict[Monomial, AffineExpr] = {}
        for mono, coef in p.terms.items():
            par = tuple((v, e) for v, e in mono if v in params)
            rest = tuple((v, e) for v, e in mono if v not in params)
            value = lift(par) if par else AffineExpr.const(1.0)
            coefficients[rest] = coefficients.get(rest, AffineExpr()) + coef * value
        return cls(p.space, coefficients)

    def add(self, mono: Monomial, expr: AffineExpr) -> "ParametricPolynomial":
        coefficients = dict(self.coefficients)
        coefficients[mono] = coefficients.get(mono, AffineExpr()) + expr
        return ParametricPolynomial(self.space, coefficients)

    @property
    def degree(self) -> int:
        return max((monomial_degree(m) for m in self.coefficients), default=0)

    def variables(self) -> set:
        return {v for mono in self.coefficients for v, _ in mono}


@dataclass(eq=False)
class PutinarCertificate:
    """Gram blocks and equality multipliers of one Putinar certificate."""
    target: ParametricPolynomial
    grams: List[Tuple[int, List[Monomial], PsdVariable]]
    multipliers: List[Tuple[int, List[Monomial], List[AffineExpr]]]
    generators: List[Polynomial]
    equalities: List[Polynomial]
    degree: int

    def identity_residual(self, x: np.ndarray) -> float:
        """Largest coefficient mismatch of sum sigma_k g_k + sum q_j h_j - target at a point."""
        lhs: Dict[Monomial, float] = {}

        def accumulate(mono: Monomial, value: float):
            lhs[mono] = lhs.get(mono, 0.0) + value

        for k, basis, handle in self.grams:
            gen = self.generators[k]
            G = handle.value(x)
            for i, bi in enumerate(basis):
                for j, bj in enumerate(basis):
                    prod = monomial_multiply(bi, bj)
                    for gm, gc in gen.terms.items():
                        accumulate(monomial_multiply(prod, gm), G[i, j] * gc)
        for k, basis, coeffs in self.multipliers:
            eq = self.equalities[k]
            for bm, expr in zip(basis, coeffs):
                value = expr.evaluate(x)
                for hm, hc in eq.terms.items():
                    accumulate(monomial_multiply(bm, hm), value * hc)
        for mono, expr in self.target.coefficients.items():
            accumulate(mono, -expr.evaluate(x))
        return max((abs(v) for v in lhs.values()), default=0.0)


def putinar_counterpart(builder: ConicProgramBuilder, h: ParametricPolynomial, omega: SemialgebraicSet,
                        degree: int, sigma0_degree: Optional[int] = SIGMA0_DEGREE) -> PutinarCertificate:
    """
    h = sigma_0 + sum_k sigma_k g_k + sum_j q_j h_j with SOS sigma_k (Gram
    blocks over graded-lex monomial bases) and free multipliers q_j.

    Parameters:
    - builder: program under construction
    - h: target with coefficients affine in program variables
    - omega: the set (inequalities g_k, equalities h_j); needs a ball or box member
    - degree: certificate degree (rounded up to even)
    - sigma0_degree: cap on the degree of sigma_0 (None for no cap)

    Returns:
    - PutinarCertificate (Gram handles for inspection and residual checks)
    """
    if not omega.has_bounding_member():
        raise ValueError("Putinar certificates need a ball or box generator bounding every variable")
    variables = omega.variables
    if not h.variables() <= set(variables):
        raise ValueError("Target polynomial uses variables outside the certificate set")
    degree = int(degree)
    degree += degree % 2
    if h.degree > degree:
        logger.debug("Certificate degree %d below target degree %d; certificate will be infeasible",
                     degree, h.degree)

    rows: Dict[Monomial, Dict[int, float]] = {}

    def add_term(mono: Monomial, var: int, value: float):
        row = rows.setdefault(mono, {})
        row[var] = row.get(var, 0.0) + value

    generators = [Polynomial.constant(omega.space, 1.0)] + list(omega.inequalities)
    grams = []
    for k, gen in enumerate(generators):
        half = (degree - gen.degree) // 2
        if k == 0 and sigma0_degree is not None:
            half = min(half, sigma0_degree // 2)
        if half < 0:
            continue
        basis = monomial_basis(variables, half)
        handle = builder.add_psd(len(basis))
        order = len(basis)
        inv_sqrt2 = 1.0 / math.sqrt(2.0)
        for j in range(order):
            for i in range(j, order):
                prod = monomial_multiply(basis[i], basis[j])
                var = handle.start + svec_index(order, i, j)
                weight = 1.0 if i == j else 2.0 * inv_sqrt2
                for gm, gc in gen.terms.items():
                    add_term(monomial_multiply(prod, gm), var, weight * gc)
        grams.append((k, basis, handle))

    multipliers = []
    for k, eq in enumerate(omega.equalities):
        mdeg = degree - eq.degree
        if mdeg < 0:
            continue
        basis = monomial_basis(variables, mdeg)
        coeffs = builder.add_free(len(basis))
        for bm, expr in zip(basis, coeffs):
            (var, value), = expr.terms.items()
            for hm, hc in eq.terms.items():
                add_term(monomial_multiply(bm, hm), var, value * hc)
        multipliers.append((k, basis, coeffs))

    for mono in h.coefficients:
        rows.setdefault(mono, {})
    for mono in sorted(rows, key=lambda m: (monomial_degree(m), tuple((v, -e) for v, e in m))):
        terms = dict(rows[mono])
        target = h.coefficients.get(mono, AffineExpr())
        for var, value in target.terms.items():
            terms[var] = terms.get(var, 0.0) - value
        builder.add_equality_terms(terms, target.constant)
    logger.debug("Putinar certificate of degree %d: %d Gram blocks, %d multipliers, %d matching rows",
                 degree, len(grams), len(multipliers), len(rows))
    return PutinarCertificate(h, grams, multipliers, generators, list(omega.equalities), degree)


# -- Newton state solve --------------------------------------------------------

def solve_state(equalities: PolynomialVector, fixed: Mapping[str, Sequence[float]],
                warm_start: Sequence[float], block: str = STATE, tol: float = NEWTON_TOL,
                max_iterations: int = NEWTON_MAX_ITERATIONS) -> np.ndarray:
    """
    Newton iteration on L(fixed blocks, x) = 0.

    Parameters:
    - equalities: square system in the solved block
    - fixed: values of the other blocks
    - warm_start: initial state
    - tol: residual infinity-norm tolerance

    Returns:
    - the state vector

    Raises:
    - SingularJacobianError, NoConvergenceError
    """
    x = np.asarray(warm_start, dtype=float).ravel().copy()
    point = {name: np.asarray(v, dtype=float) for name, v in fixed.items()}
    for iteration in range(max_iterations + 1):
        point[block] = x
        residual = equalities.evaluate(point)
        norm = float(np.max(np.abs(residual))) if residual.size else 0.0
        if norm <= tol:
            logger.debug("Newton converged in %d iterations (residual %.2e)", iteration, norm)
            return x
        if iteration == max_iterations or not np.isfinite(norm):
            break
        J = equalities.jacobian(block, point)
        cond = np.linalg.cond(J)
        if not np.isfinite(cond) or cond > 1e16:
            raise SingularJacobianError(f"Singular Jacobian at Newton iteration {iteration}")
        x = x - np.linalg.solve(J, residual)
    raise NoConvergenceError(f"Newton did not converge in {max_iterations} iterations (residual {norm:.2e})")


# -- general counterpart ------------------------------------------------------

class LiftedControl:
    """
    Free control variables y together with the Shor block Y = [[1, y^T], [y, yy^T]]
    relaxed to Y PSD; monomials of degree <= 2 in y map to entries of Y.
    """

    def __init__(self, builder: ConicProgramBuilder, space: VariableSpace,
                 lower: np.ndarray, upper: np.ndarray):
        ny = space.block(CONTROL).dim
        self.start = space.slice(CONTROL).start
        self.y = builder.add_free(ny)
        self.Y = builder.add_psd(1 + ny)
        builder.add_equality(self.Y.entry(0, 0), 1.0)
        for i in range(ny):
            builder.add_equality(self.Y.entry(i + 1, 0) - self.y[i])
            if np.isfinite(lower[i]):
                builder.add_inequality(self.y[i], float(lower[i]))
            if np.isfinite(upper[i]):
                builder.add_inequality(-self.y[i], -float(upper[i]))

    def lift(self, mono: Monomial) -> AffineExpr:
        if not mono:
            return AffineExpr.const(1.0)
        if monomial_degree(mono) > 2:
            raise DegreeOverflowError("Control monomials above degree two cannot be lifted")
        idx = [v - self.start for v, e in mono for _ in range(e)]
        if len(idx) == 1:
            return self.y[idx[0]]
        return self.Y.entry(idx[0] + 1, idx[1] + 1)

    def lift_polynomial(self, p: Polynomial) -> AffineExpr:
        total = AffineExpr()
        for mono, coef in p.terms.items():
            total = total + coef * self.lift(mono)
        return total

    def gram(self, C: np.ndarray) -> AffineExpr:
        """<Y[1:, 1:], C>, the lifted y^T C y."""
        n = C.shape[0]
        terms = [self.Y.entry(i + 1, j + 1) for i in range(n) for j in range(n)]
        return affine_sum(terms, C.ravel())


@dataclass(eq=False)
class CounterpartProgram:
    """The lifted robust counterpart program of one linearized stage."""
    program: ConicProgram
    control: List[AffineExpr]
    lifted: PsdVariable
    kinds: List[str]

    def control_value(self, x: np.ndarray) -> np.ndarray:
        return np.array([expr.evaluate(x) for expr in self.control])


def counterpart_program(prob: AroProblem, stage: LinearizedStage, certificate: str = "auto",
                        degree: Optional[int] = None) -> CounterpartProgram:
    """
    Deterministic lifted counterpart of the linearized problem: Shor-lifted y
    and, per eliminated constraint, an LP-dual, S-lemma or Putinar block.

    Parameters:
    - prob: the AroProblem
    - stage: linearized stage (decision rule and trust region)
    - certificate: "auto", "lp", "slemma" or "putinar"
    - degree: Putinar degree (default: smallest even degree covering the constraint)

    Returns:
    - CounterpartProgram whose optimum is a lower bound of the linearized ARC
    """
    validate_certificate(certificate)
    builder = ConicProgramBuilder()
    lifted = LiftedControl(builder, prob.space, prob.control_lower, prob.control_upper)
    for p in prob.control_inequalities:
        builder.add_inequality(lifted.lift_polynomial(p))
    builder.set_objective(lifted.lift_polynomial(prob.objective))

    y_vars = prob.space.indices([CONTROL])
    z_vars = prob.space.indices([UNCERTAINTY])
    omega = prob.uncertainty
    semialgebraic = None
    kinds = []
    for label, p in eliminated_polynomials(prob, stage):
        kind = certificate
        if kind == "auto":
            if isinstance(omega, Polyhedron) and p.degree_in(UNCERTAINTY) <= 1:
                kind = "lp"
            elif isinstance(omega, Ellipsoid) and p.degree <= 2:
                kind = "slemma"
            else:
                kind = "putinar"
        if kind == "lp":
            if not isinstance(omega, Polyhedron):
                raise ValueError("LP-duality certificates need a polyhedral uncertainty set")
            param = ParametricPolynomial.from_polynomial(p, y_vars, lifted.lift)
            h1 = param.coefficients.get(ONE, AffineExpr())
            h2 = []
            for v in z_vars:
                h2.append(param.coefficients.get(((v, 1),), AffineExpr()))
            if param.degree > 1:
                raise DegreeOverflowError(f"Constraint '{label}' is not affine in the uncertainty")
            robust_lp_counterpart(builder, h1, h2, omega)
        elif kind == "slemma":
            if not isinstance(omega, Ellipsoid):
                raise ValueError("S-lemma certificates need an ellipsoidal uncertainty set")
            qc = QuadraticRobustConstraint.from_polynomial(p, label)
            slemma_counterpart(builder, qc, omega, lifted.y, lifted.gram(qc.C))
        else:
            if semialgebraic is None:
                semialgebraic = (omega if isinstance(omega, SemialgebraicSet)
                                 else omega.as_semialgebraic(prob.space, UNCERTAINTY))
            param = ParametricPolynomial.from_polynomial(p, y_vars, lifted.lift)
            need = max([param.degree] + [g.degree for g in semialgebraic.inequalities])
            putinar_counterpart(builder, param, semialgebraic, degree or need, sigma0_degree=None)
        kinds.append(kind)
    logger.info("Counterpart program: %s", {k: kinds.count(k) for k in sorted(set(kinds))})
    return CounterpartProgram(builder.build(), lifted.y, lifted.Y, kinds)
