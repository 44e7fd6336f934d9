"""
Conic Program Module

This module provides the standard-form conic program used by every
certificate in the toolkit:

    minimize  c^T x + offset   subject to  A x = b,  x in K

where K is a product of nonnegative orthants, second-order cones and PSD
cones (PSD blocks stored as the sqrt(2)-scaled lower-triangle vectorization,
column major). Programs are assembled with ConicProgramBuilder, solved by the
bundled interior-point method or through cvxpy, and can be dumped in SDPA
sparse format for cross-checking with external solvers.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

try:
    from config import (
        SOLVER_BACKEND,
        BUNDLED_MAX_VARIABLES,
        CVXPY_SOLVER,
        FEASIBILITY_TOL,
        GAP_TOL,
        MAX_SOLVER_ITERATIONS,
    )
except ImportError:
    SOLVER_BACKEND = "auto"
    BUNDLED_MAX_VARIABLES = 3000
    CVXPY_SOLVER = None
    FEASIBILITY_TOL = 1e-8
    GAP_TOL = 1e-8
    MAX_SOLVER_ITERATIONS = 200

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
BACKENDS = ("bundled", "cvxpy", "auto")


class ConeKind(Enum):
    NONNEG = "nonneg"
    SOC = "soc"
    PSD = "psd"


class SolveStatus(Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    NUMERICAL_PROBLEM = "NumericalProblem"


def validate_backend(backend: str) -> None:
    if backend not in BACKENDS:
        raise ValueError(f"Solver backend '{backend}' is not one of {BACKENDS}")


# -- symmetric vectorization ------------------------------------------------

def svec_length(order: int) -> int:
    return order * (order + 1) // 2


def svec_index(order: int, i: int, j: int) -> int:
    """Position of entry (i, j) of an order x order matrix in its svec."""
    if i < j:
        i, j = j, i
    return j * order - j * (j - 1) // 2 + (i - j)


def _tri(order: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows, cols = [], []
    for j in range(order):
        for i in range(j, order):
            rows.append(i)
            cols.append(j)
    rows, cols = np.array(rows, dtype=int), np.array(cols, dtype=int)
    scale = np.where(rows == cols, 1.0, SQRT2)
    return rows, cols, scale


_TRI_CACHE: Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def tri_indices(order: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row indices, column indices and sqrt(2) scaling of the svec layout."""
    if order not in _TRI_CACHE:
        _TRI_CACHE[order] = _tri(order)
    return _TRI_CACHE[order]


def svec(M: np.ndarray) -> np.ndarray:
    rows, cols, scale = tri_indices(M.shape[0])
    return M[rows, cols] * scale


def smat(v: np.ndarray, order: int) -> np.ndarray:
    rows, cols, scale = tri_indices(order)
    M = np.zeros((order, order))
    values = np.asarray(v, dtype=float) / scale
    M[rows, cols] = values
    M[cols, rows] = values
    return M


# -- affine expressions -------------------------------------------------------

class AffineExpr:
    """Sparse affine expression sum_i a_i x_i + constant over program variables."""

    __slots__ = ("terms", "constant")
    __array_ufunc__ = None

    def __init__(self, terms: Optional[Mapping[int, float]] = None, constant: float = 0.0):
        self.terms: Dict[int, float] = {int(k): float(v) for k, v in (terms or {}).items() if v != 0.0}
        self.constant = float(constant)

    @classmethod
    def var(cls, index: int, coefficient: float = 1.0) -> "AffineExpr":
        return cls({index: coefficient})

    @classmethod
    def const(cls, value: float) -> "AffineExpr":
        return cls({}, value)

    def _coerce(self, other) -> "AffineExpr":
        if isinstance(other, AffineExpr):
            return other
        if np.isscalar(other):
            return AffineExpr.const(float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms.get(k, 0.0) + v
        return AffineExpr(terms, self.constant + other.constant)

    __radd__ = __add__

    def __neg__(self):
        return AffineExpr({k: -v for k, v in self.terms.items()}, -self.constant)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        s = float(scalar)
        return AffineExpr({k: v * s for k, v in self.terms.items()}, self.constant * s)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def __repr__(self):
        body = " + ".join(f"{v:.6g}*v{k}" for k, v in sorted(self.terms.items()))
        return f"AffineExpr({body or '0'} + {self.constant:.6g})"

    def is_constant(self) -> bool:
        return not self.terms

    def evaluate(self, x: np.ndarray) -> float:
        return self.constant + sum(v * x[k] for k, v in self.terms.items())


def affine_sum(exprs: Sequence[AffineExpr], weights: Sequence[float]) -> AffineExpr:
    """sum_k w_k * expr_k without intermediate objects."""
    terms: Dict[int, float] = {}
    constant = 0.0
    for expr, w in zip(exprs, weights):
        if w == 0.0:
            continue
        constant += w * expr.constant
        for k, v in expr.terms.items():
            terms[k] = terms.get(k, 0.0) + w * v
    return AffineExpr(terms, constant)


# -- program container ------------------------------------------------------

@dataclass(frozen=True)
class ConeBlock:
    kind: ConeKind
    start: int
    size: int
    order: int = 0

    @property
    def stop(self) -> int:
        return self.start + self.size


@dataclass(frozen=True)
class PsdVariable:
    """Handle on a PSD block; entry(i, j) returns the matrix entry as an AffineExpr."""
    start: int
    order: int

    def entry(self, i: int, j: int) -> AffineExpr:
        weight = 1.0 if i == j else 1.0 / SQRT2
        return AffineExpr.var(self.start + svec_index(self.order, i, j), weight)

    def value(self, x: np.ndarray) -> np.ndarray:
        return smat(x[self.start:self.start + svec_length(self.order)], self.order)


def validate_program(c: np.ndarray, A: sparse.spmatrix, b: np.ndarray, cones: Sequence[ConeBlock]) -> None:
    """Reject malformed programs at build time."""
    n = c.size
    if n == 0:
        raise ValueError("A conic program needs at least one variable")
    if A.shape != (b.size, n):
        raise ValueError(f"Equality matrix shape {A.shape} does not match ({b.size}, {n})")
    owner = np.full(n, -1)
    for k, cone in enumerate(cones):
        if cone.start < 0 or cone.stop > n or cone.size <= 0:
            raise ValueError(f"Cone block {k} slice [{cone.start}, {cone.stop}) is outside the variables")
        if cone.kind == ConeKind.PSD and cone.size != svec_length(cone.order):
            raise ValueError(f"PSD block {k} of order {cone.order} must hold {svec_length(cone.order)} entries")
        if np.any(owner[cone.start:cone.stop] >= 0):
            raise ValueError(f"Cone block {k} overlaps another cone block")
        owner[cone.start:cone.stop] = k
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b)) and np.all(np.isfinite(A.data))):
        raise ValueError("Conic program data must be finite")


@dataclass(eq=False)
class ConicProgram:
    """
    minimize c^T x + offset subject to A x = b and x in the listed cone blocks
    (variables outside every block are free). `sense` records whether the
    caller asked for a maximization; c is always stored in minimization form.
    """
    c: np.ndarray
    A: sparse.csr_matrix
    b: np.ndarray
    cones: Tuple[ConeBlock, ...]
    offset: float = 0.0
    sense: str = "min"

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.A = sparse.csr_matrix(self.A, shape=(self.b.size, self.c.size))
        self.cones = tuple(self.cones)
        validate_program(self.c, self.A, self.b, self.cones)

    @property
    def n_variables(self) -> int:
        return self.c.size

    @property
    def n_equalities(self) -> int:
        return self.b.size

    def report_objective(self, minimized_value: float) -> float:
        """Objective in the caller's sense from the minimization value."""
        return -minimized_value if self.sense == "max" else minimized_value


@dataclass
class SolverTolerances:
    feasibility: float = FEASIBILITY_TOL
    gap: float = GAP_TOL
    max_iterations: int = MAX_SOLVER_ITERATIONS


@dataclass
class SolveResult:
    status: SolveStatus
    x: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    objective: float = float("nan")
    residuals: Dict[str, float] = field(default_factory=dict)
    iterations: int = 0
    backend: str = ""
    solve_time: float = 0.0

    @property
    def is_optimal(self) -> bool:
        return self.status == SolveStatus.OPTIMAL

    def value(self, expr: AffineExpr) -> float:
        if self.x is None:
            raise ValueError(f"No primal point available (status {self.status.value})")
        return expr.evaluate(self.x)

    def matrix(self, handle: PsdVariable) -> np.ndarray:
        if self.x is None:
            raise ValueError(f"No primal point available (status {self.status.value})")
        return handle.value(self.x)


# -- builder ----------------------------------------------------------------

class ConicProgramBuilder:
    """Incremental assembly of a ConicProgram from affine expressions."""

    def __init__(self):
        self._n = 0
        self._cones: List[ConeBlock] = []
        self._rows: List[Tuple[Dict[int, float], float]] = []
        self._objective = AffineExpr()
        self._sense = "min"

    @property
    def n_variables(self) -> int:
        return self._n

    def _allocate(self, count: int) -> int:
        start = self._n
        self._n += count
        return start

    def add_free(self, count: int = 1) -> List[AffineExpr]:
        start = self._allocate(count)
        return [AffineExpr.var(start + k) for k in range(count)]

    def add_nonneg(self, count: int = 1) -> List[AffineExpr]:
        start = self._allocate(count)
        if count:
            self._cones.append(ConeBlock(ConeKind.NONNEG, start, count))
        return [AffineExpr.var(start + k) for k in range(count)]

    def add_soc(self, size: int) -> List[AffineExpr]:
        """A second-order cone block (t, u): ||u|| <= t; returns [t, u_1, ...]."""
        start = self._allocate(size)
        self._cones.append(ConeBlock(ConeKind.SOC, start, size))
        return [AffineExpr.var(start + k) for k in range(size)]

    def add_psd(self, order: int) -> PsdVariable:
        size = svec_length(order)
        start = self._allocate(size)
        self._cones.append(ConeBlock(ConeKind.PSD, start, size, order))
        return PsdVariable(start, order)

    def add_equality(self, expr: AffineExpr, rhs: float = 0.0) -> None:
        """expr == rhs."""
        if expr.is_constant():
            if abs(expr.constant - rhs) > 1e-12:
                logger.debug("Constant equality %.3e == %.3e kept as an infeasible row", expr.constant, rhs)
            else:
                return
        self._rows.append((dict(expr.terms), float(rhs) - expr.constant))

    def add_equality_terms(self, terms: Mapping[int, float], rhs: float) -> None:
        """sum_k terms[k] x_k == rhs, for callers that assemble rows themselves."""
        self._rows.append(({int(k): float(v) for k, v in terms.items() if v != 0.0}, float(rhs)))

    def add_inequality(self, expr: AffineExpr, rhs: float = 0.0) -> AffineExpr:
        """expr >= rhs through a nonnegative slack; returns the slack."""
        slack = self.add_nonneg(1)[0]
        self.add_equality(expr - slack, rhs)
        return slack

    def add_soc_constraint(self, t: AffineExpr, exprs: Sequence[AffineExpr]) -> List[AffineExpr]:
        """||(exprs)|| <= t."""
        cone = self.add_soc(1 + len(exprs))
        for var, expr in zip(cone, [t] + list(exprs)):
            self.add_equality(var - expr)
        return cone

    def add_psd_constraint(self, matrix: Sequence[Sequence[AffineExpr]]) -> PsdVariable:
        """The symmetric matrix of affine expressions (lower triangle read) is PSD."""
        order = len(matrix)
        handle = self.add_psd(order)
        for j in range(order):
            for i in range(j, order):
                entry = matrix[i][j]
                if not isinstance(entry, AffineExpr):
                    entry = AffineExpr.const(float(entry))
                self.add_equality(handle.entry(i, j) - entry)
        return handle

    def add_convex_quadratic_le(self, variables: Sequence[AffineExpr], H: np.ndarray,
                                g: Optional[np.ndarray], c: float, rhs: AffineExpr) -> None:
        """
        v^T H v + g^T v + c <= rhs for H PSD, written as the rotated cone
        ||(s - 1, 2 F v)|| <= s + 1 with s = rhs - g^T v - c and H = F^T F.
        """
        H = 0.5 * (np.asarray(H, dtype=float) + np.asarray(H, dtype=float).T)
        eigvals, eigvecs = np.linalg.eigh(H) if H.size else (np.zeros(0), np.zeros((0, 0)))
        if eigvals.size and eigvals[0] < -1e-9 * max(1.0, abs(eigvals[-1])):
            raise ValueError(f"Quadratic form is not convex (min eigenvalue {eigvals[0]:.3e})")
        keep = eigvals > 1e-12 * max(1.0, abs(eigvals[-1]) if eigvals.size else 1.0)
        F = (eigvecs[:, keep] * np.sqrt(eigvals[keep])).T
        linear = affine_sum(variables, g) if g is not None else AffineExpr()
        s = rhs - linear - c
        if not F.shape[0]:
            self.add_inequality(s)
            return
        parts = [s - 1.0] + [2.0 * affine_sum(variables, row) for row in F]
        self.add_soc_constraint(s + 1.0, parts)

    def set_objective(self, expr: AffineExpr, sense: str = "min") -> None:
        if sense not in ("min", "max"):
            raise ValueError(f"Objective sense must be 'min' or 'max', got '{sense}'")
        self._objective = expr if sense == "min" else -expr
        self._sense = sense

    def build(self) -> ConicProgram:
        n = self._n
        c = np.zeros(n)
        for k, v in self._objective.terms.items():
            c[k] += v
        rows, cols, vals = [], [], []
        b = np.zeros(len(self._rows))
        for r, (terms, rhs) in enumerate(self._rows):
            for k, v in terms.items():
                rows.append(r)
                cols.append(k)
                vals.append(v)
            b[r] = rhs
        A = sparse.csr_matrix((vals, (rows, cols)), shape=(len(self._rows), n))
        A.sum_duplicates()
        return ConicProgram(c, A, b, tuple(self._cones), self._objective.constant, self._sense)


# -- verification helpers ----------------------------------------------------

def cone_margin(cone: ConeBlock, segment: np.ndarray) -> float:
    """Smallest 'distance inside' the cone: min entry, t - ||u||, or min eigenvalue."""
    if cone.kind == ConeKind.NONNEG:
        return float(np.min(segment))
    if cone.kind == ConeKind.SOC:
        return float(segment[0] - np.linalg.norm(segment[1:]))
    return float(np.linalg.eigvalsh(smat(segment, cone.order))[0])


def residuals(program: ConicProgram, x: Sequence[float]) -> Tuple[float, float]:
    """
    Constraint residual report of a candidate point.

    Returns:
    - (max |A x - b|, min cone margin over all blocks; +inf without cones)
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size != program.n_variables:
        raise ValueError(f"Dimension mismatch for point: expected {program.n_variables}, got {x.size}")
    eq = float(np.max(np.abs(program.A @ x - program.b))) if program.n_equalities else 0.0
    margins = [cone_margin(cone, x[cone.start:cone.stop]) for cone in program.cones]
    return eq, min(margins) if margins else float("inf")


# -- solving ------------------------------------------------------------------

def solve(program: ConicProgram, tolerances: Optional[SolverTolerances] = None,
          backend: Optional[str] = None) -> SolveResult:
    """
    Solve a conic program.

    Parameters:
    - program: a validated ConicProgram
    - tolerances: SolverTolerances (defaults from config)
    - backend: "bundled", "cvxpy" or "auto" (bundled up to BUNDLED_MAX_VARIABLES)

    Returns:
    - SolveResult; infeasibility and numerical trouble are statuses, not exceptions
    """
    tolerances = tolerances or SolverTolerances()
    backend = backend or SOLVER_BACKEND
    validate_backend(backend)
    if backend == "auto":
        backend = "bundled" if program.n_variables <= BUNDLED_MAX_VARIABLES else "cvxpy"
    start = time.perf_counter()
    if backend == "cvxpy":
        result = _solve_cvxpy(program, tolerances)
    else:
        from src.interior_point import solve_conic
        result = solve_conic(program, tolerances)
    result.solve_time = time.perf_counter() - start
    if result.is_optimal:
        result.objective = program.report_objective(result.objective)
    logger.debug("Solved %d vars / %d rows with %s: %s (%.2fs)", program.n_variables,
                 program.n_equalities, result.backend, result.status.value, result.solve_time)
    return result


def _svec_extraction(order: int) -> sparse.csr_matrix:
    """Sparse map from the column-major vec of a matrix to its svec."""
    rows, cols, scale = tri_indices(order)
    return sparse.csr_matrix((scale, (np.arange(rows.size), rows + cols * order)),
                             shape=(rows.size, order * order))


def _solve_cvxpy(program: ConicProgram, tolerances: SolverTolerances) -> SolveResult:
    import cvxpy as cp

    x = cp.Variable(program.n_variables)
    constraints = []
    if program.n_equalities:
        constraints.append(cp.Constant(program.A) @ x == program.b)
    for cone in program.cones:
        segment = x[cone.start:cone.stop]
        if cone.kind == ConeKind.NONNEG:
            constraints.append(segment >= 0)
        elif cone.kind == ConeKind.SOC:
            if cone.size == 1:
                constraints.append(segment >= 0)
            else:
                constraints.append(cp.SOC(segment[0], segment[1:]))
        else:
            X = cp.Variable((cone.order, cone.order), symmetric=True)
            constraints.append(X >> 0)
            vec = cp.reshape(X, (cone.order * cone.order,), order="F")
            constraints.append(segment == cp.Constant(_svec_extraction(cone.order)) @ vec)
    problem = cp.Problem(cp.Minimize(program.c @ x + program.offset), constraints)
    try:
        problem.solve(solver=CVXPY_SOLVER)
    except cp.error.SolverError as exc:
        logger.warning("cvxpy solver error: %s", exc)
        return SolveResult(SolveStatus.NUMERICAL_PROBLEM, backend="cvxpy")

    status = problem.status
    if status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        if status == cp.OPTIMAL_INACCURATE:
            logger.warning("cvxpy reports an inaccurate optimum; accepting it")
        xv = np.asarray(x.value, dtype=float)
        y = -np.asarray(constraints[0].dual_value, dtype=float) if program.n_equalities else np.zeros(0)
        eq, margin = residuals(program, xv)
        return SolveResult(SolveStatus.OPTIMAL, x=xv, y=y, z=program.c - program.A.T @ y,
                           objective=float(program.c @ xv + program.offset),
                           residuals={"primal": eq, "cone": margin},
                           iterations=int(problem.solver_stats.num_iters or 0)
                           if problem.solver_stats is not None else 0,
                           backend="cvxpy")
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return SolveResult(SolveStatus.PRIMAL_INFEASIBLE, backend="cvxpy")
    if status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
        return SolveResult(SolveStatus.DUAL_INFEASIBLE, backend="cvxpy")
    return SolveResult(SolveStatus.NUMERICAL_PROBLEM, backend="cvxpy")


# -- SDPA export ----------------------------------------------------------------

def write_sdpa(program: ConicProgram, path: str) -> None:
    """
    Dump the program in SDPA sparse format (dat-s).

    The program variables become the SDPA free variables; equalities become
    pairs of rows of one diagonal LP block together with the nonnegative
    variables, second-order cones become arrow-shaped PSD blocks and PSD
    blocks keep their matrices. The objective offset is written as a comment.
    """
    n = program.n_variables
    entries: List[Tuple[int, int, int, int, float]] = []
    lp_size = 2 * program.n_equalities
    A = program.A.tocsr()
    for r in range(program.n_equalities):
        for pos in range(A.indptr[r], A.indptr[r + 1]):
            col, val = A.indices[pos], A.data[pos]
            entries.append((col + 1, 1, 2 * r + 1, 2 * r + 1, val))
            entries.append((col + 1, 1, 2 * r + 2, 2 * r + 2, -val))
        if program.b[r] != 0.0:
            entries.append((0, 1, 2 * r + 1, 2 * r + 1, program.b[r]))
            entries.append((0, 1, 2 * r + 2, 2 * r + 2, -program.b[r]))
    sizes: List[int] = []
    for cone in program.cones:
        if cone.kind == ConeKind.NONNEG:
            for k in range(cone.size):
                lp_size += 1
                entries.append((cone.start + k + 1, 1, lp_size, lp_size, 1.0))
    block = 1
    for cone in program.cones:
        if cone.kind == ConeKind.SOC:
            block += 1
            sizes.append(cone.size)
            for i in range(cone.size):
                entries.append((cone.start + 1, block, i + 1, i + 1, 1.0))
            for i in range(1, cone.size):
                entries.append((cone.start + i + 1, block, 1, i + 1, 1.0))
        elif cone.kind == ConeKind.PSD:
            block += 1
            sizes.append(cone.order)
            rows, cols, scale = tri_indices(cone.order)
            for p, (i, j, s) in enumerate(zip(rows, cols, scale)):
                entries.append((cone.start + p + 1, block, j + 1, i + 1, 1.0 / s))
    if lp_size == 0:
        lp_size = 1  # SDPA needs a nonempty first block
    with open(path, "w") as handle:
        handle.write(f'"conic program dump, objective offset {program.offset:.17g}"\n')
        handle.write(f"{n}\n{1 + len(sizes)}\n")
        handle.write(" ".join([str(-lp_size)] + [str(s) for s in sizes]) + "\n")
        handle.write(" ".join(f"{v:.17g}" for v in program.c) + "\n")
        for mat, blk, i, j, val in entries:
            handle.write(f"{mat} {blk} {i} {j} {val:.17g}\n")
    logger.info("Wrote SDPA dump with %d variables and %d blocks to %s", n, 1 + len(sizes), path)
