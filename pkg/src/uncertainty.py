"""
Uncertainty Set Module

This module provides the representations of the uncertainty set Omega
(ellipsoid, polyhedron, general semialgebraic set), the load-scaled
ellipsoid used by the power-flow experiments, membership tests, sampling,
and Lebesgue moments of monomials over ellipsoids.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linprog
from scipy.special import gammaln

from src.poly import Polynomial, VariableBlock, VariableSpace, validate_dimension

try:
    from config import MEMBERSHIP_TOL, SAMPLE_MAX_ROUNDS
except ImportError:
    MEMBERSHIP_TOL = 1e-9
    SAMPLE_MAX_ROUNDS = 200

logger = logging.getLogger(__name__)


class EmptyUncertaintyError(ValueError):
    """Raised when an uncertainty set would have no coordinates or no points."""


def validate_fraction(w: float) -> None:
    """Validate the uncertainty level w (fraction of the nominal load)."""
    if not 0 < w <= 1:
        raise ValueError(f"Uncertainty level w={w} must be in (0, 1]")


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """
    The set {z : (z - center)^T shape (z - center) <= radius}.

    A zero-dimensional ellipsoid stands for the zero uncertainty set {0}.
    """
    center: np.ndarray
    shape: np.ndarray
    radius: float = 1.0

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float)).ravel()
        shape = np.asarray(self.shape, dtype=float).reshape(center.size, center.size)
        if center.size:
            if np.max(np.abs(shape - shape.T)) > 1e-10:
                raise ValueError("Ellipsoid shape matrix must be symmetric")
            shape = 0.5 * (shape + shape.T)
            smallest = np.linalg.eigvalsh(shape)[0]
            if smallest <= 0:
                raise ValueError(f"Ellipsoid shape matrix must be positive definite (min eig {smallest:.3e})")
        if not self.radius > 0:
            raise ValueError(f"Ellipsoid radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "radius", float(self.radius))

    @classmethod
    def point(cls) -> "Ellipsoid":
        """The zero uncertainty set {0} as a 0-dimensional ellipsoid."""
        return cls(np.zeros(0), np.zeros((0, 0)), 1.0)

    @classmethod
    def unit_ball(cls, n: int) -> "Ellipsoid":
        return cls(np.zeros(n), np.eye(n), 1.0)

    @property
    def dim(self) -> int:
        return self.center.size

    def contains(self, z: Sequence[float], tol: float = MEMBERSHIP_TOL) -> bool:
        z = np.atleast_1d(np.asarray(z, dtype=float)).ravel()
        validate_dimension(self.dim, z.size, "uncertainty point")
        d = z - self.center
        return bool(d @ self.shape @ d <= self.radius + tol)

    def unit_ball_map(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Return (center, T) such that z = center + T @ u maps the unit ball
        onto the ellipsoid; T = sqrt(radius) * shape^(-1/2).
        """
        if self.dim == 0:
            return self.center, np.zeros((0, 0))
        eigvals, eigvecs = np.linalg.eigh(self.shape)
        T = np.sqrt(self.radius) * (eigvecs * (1.0 / np.sqrt(eigvals))) @ eigvecs.T
        return self.center, T

    def as_semialgebraic(self, space: VariableSpace, block: Union[str, VariableBlock]) -> "SemialgebraicSet":
        """The ellipsoid as the single ball-type generator r - (z-c)^T S (z-c) >= 0."""
        variables = space.indices([block])
        validate_dimension(self.dim, len(variables), "ellipsoid block")
        S, c = self.shape, self.center
        g = Polynomial.quadratic(space, variables, -S, 2.0 * S @ c, self.radius - c @ S @ c)
        return SemialgebraicSet(space, [g], blocks=(space.block(block).name,))

    def sample(self, count: int, rng: np.random.Generator, boundary_fraction: float = 0.5) -> np.ndarray:
        """Points of the ellipsoid, a given fraction of them on the boundary."""
        if self.dim == 0:
            return np.zeros((count, 0))
        center, T = self.unit_ball_map()
        directions = rng.standard_normal((count, self.dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        radii = rng.uniform(size=count) ** (1.0 / self.dim)
        radii[: int(round(boundary_fraction * count))] = 1.0
        return center + (directions * radii[:, None]) @ T.T


@dataclass(frozen=True, eq=False)
class Polyhedron:
    """The set {z : A z <= b}."""
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float)).ravel()
        validate_dimension(A.shape[0], b.size, "polyhedron right-hand side")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "Polyhedron":
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        n = lower.size
        return cls(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([upper, -lower]))

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def contains(self, z: Sequence[float], tol: float = MEMBERSHIP_TOL) -> bool:
        z = np.atleast_1d(np.asarray(z, dtype=float)).ravel()
        validate_dimension(self.dim, z.size, "uncertainty point")
        return bool(np.all(self.A @ z <= self.b + tol))

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        """Coordinate-wise bounds from 2n linear programs; raises for empty or unbounded sets."""
        lower, upper = np.zeros(self.dim), np.zeros(self.dim)
        for k in range(self.dim):
            for sign, store in ((1.0, lower), (-1.0, upper)):
                c = np.zeros(self.dim)
                c[k] = sign
                res = linprog(c, A_ub=self.A, b_ub=self.b, bounds=[(None, None)] * self.dim, method="highs")
                if res.status == 2:
                    raise EmptyUncertaintyError("Polyhedral uncertainty set is empty")
                if res.status != 0:
                    raise ValueError("Polyhedral uncertainty set must be bounded")
                store[k] = sign * res.fun
        return lower, upper

    def as_semialgebraic(self, space: VariableSpace, block: Union[str, VariableBlock]) -> "SemialgebraicSet":
        """The polyhedron as linear generators b_j - a_j^T z >= 0."""
        name = space.block(block).name
        gens = [Polynomial.linear(space, name, -row, bj) for row, bj in zip(self.A, self.b)]
        return SemialgebraicSet(space, gens, blocks=(name,))

    def sample(self, count: int, rng: np.random.Generator, boundary_fraction: float = 0.0) -> np.ndarray:
        """
        Uniform points by rejection from the bounding box.

        Coordinates whose box width is within MEMBERSHIP_TOL are held at
        the box midpoint, so flat (zero-volume) polyhedra sample along
        their remaining directions.

        Raises:
        - ValueError: if SAMPLE_MAX_ROUNDS batches do not yield `count` points
        """
        lower, upper = self.bounding_box()
        # LP round-off can leave upper marginally below lower
        upper = np.maximum(upper, lower)
        flat = upper - lower <= MEMBERSHIP_TOL
        mid = 0.5 * (lower + upper)
        points: List[np.ndarray] = []
        for _ in range(SAMPLE_MAX_ROUNDS):
            batch = rng.uniform(lower, upper, size=(4 * count, self.dim))
            batch[:, flat] = mid[flat]
            points.extend(p for p in batch if self.contains(p))
            if len(points) >= count:
                return np.array(points[:count])
        raise ValueError(
            f"Rejection sampling kept {len(points)} of {count} points after "
            f"{SAMPLE_MAX_ROUNDS} rounds; the polyhedron is too thin for its bounding box"
        )


@dataclass(eq=False)
class SemialgebraicSet:
    """
    The set {v : g_j(v) >= 0, h_k(v) = 0} over the variables of some blocks.

    Parameters:
    - space: the VariableSpace of the generators
    - inequalities: generators g_j
    - equalities: optional generators h_k
    - blocks: names of the blocks the set lives over (defaults to every block used)
    """
    space: VariableSpace
    inequalities: List[Polynomial]
    equalities: List[Polynomial] = field(default_factory=list)
    blocks: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        self.inequalities = list(self.inequalities)
        self.equalities = list(self.equalities)
        for g in self.inequalities + self.equalities:
            if g.space != self.space:
                raise ValueError("Generators of a SemialgebraicSet must share its space")
        if self.blocks is None:
            used = set()
            for g in self.inequalities + self.equalities:
                used |= g.variables()
            self.blocks = tuple(b.name for b in self.space.blocks
                                if any(v in used for v in self.space.indices([b.name])))

    @property
    def variables(self) -> List[int]:
        return self.space.indices(self.blocks)

    def with_generators(self, inequalities: Sequence[Polynomial] = (),
                        equalities: Sequence[Polynomial] = ()) -> "SemialgebraicSet":
        """A new set with extra generators appended."""
        return SemialgebraicSet(self.space, self.inequalities + list(inequalities),
                                self.equalities + list(equalities), self.blocks)

    def contains(self, point, tol: float = MEMBERSHIP_TOL) -> bool:
        flat = self.space.flatten(point)
        return (all(g.evaluate(flat) >= -tol for g in self.inequalities)
                and all(abs(h.evaluate(flat)) <= tol for h in self.equalities))

    def has_bounding_member(self) -> bool:
        """
        Whether the generators visibly bound every variable: either the
        quadratic parts of the concave quadratic generators add up to a
        negative definite form, or each variable carries two-sided linear
        bounds. This is the ball-or-box precondition of Putinar certificates.
        """
        variables = self.variables
        if not variables:
            return True
        n = len(variables)
        total = np.zeros((n, n))
        lower, upper = set(), set()
        for g in self.inequalities:
            if not g.variables() <= set(variables):
                continue
            if g.degree == 2:
                H, _, _ = g.quadratic_form(self.blocks)
                if np.linalg.eigvalsh(H)[-1] <= 1e-12:
                    total += H
            elif g.degree == 1 and len(g.variables()) == 1:
                var = next(iter(g.variables()))
                (lower if g.coefficient(((var, 1),)) > 0 else upper).add(var)
        if np.linalg.eigvalsh(total)[-1] < -1e-12:
            return True
        covered = lower & upper
        uncovered = [k for k, var in enumerate(variables) if var not in covered]
        if not uncovered:
            return True
        return bool(np.linalg.eigvalsh(total[np.ix_(uncovered, uncovered)])[-1] < -1e-12)


UncertaintySet = Union[Ellipsoid, Polyhedron, SemialgebraicSet]


def contains(uncertainty_set: UncertaintySet, z, tol: float = MEMBERSHIP_TOL) -> bool:
    """Membership with absolute tolerance on the defining inequalities."""
    return uncertainty_set.contains(z, tol)


def load_coordinates(loads: Sequence[float]) -> List[int]:
    """Indices of the buses with positive active demand (one coordinate each)."""
    return [k for k, p in enumerate(loads) if p > 0]


def build_load_ellipsoid(loads: Sequence[float], w: float, correlated: bool = False,
                         n_buses: Optional[int] = None) -> Ellipsoid:
    """
    Build the load-scaled uncertainty ellipsoid (centre 0, radius 1).

    Parameters:
    - loads: per-bus active demand in MW (buses without load are skipped)
    - w: uncertainty as a fraction of the load
    - correlated: use the uniform correlation 1/n_buses between coordinates
    - n_buses: number of buses |N| (required when correlated)

    Returns:
    - Ellipsoid with shape Diag(1/(w P^d_k)^2), or its correlated variant
    """
    validate_fraction(w)
    positive = np.array([p for p in loads if p > 0], dtype=float)
    if positive.size == 0:
        raise EmptyUncertaintyError("No bus has a positive load, the uncertainty set is empty")
    sigma = 1.0 / (w * positive) ** 2
    if not correlated:
        shape = np.diag(sigma)
    else:
        if not n_buses:
            raise ValueError("Correlated uncertainty needs the number of buses")
        rho = 1.0 / n_buses
        R = np.full((positive.size, positive.size), rho)
        np.fill_diagonal(R, 1.0)
        scale = np.sqrt(sigma)
        shape = scale[:, None] * R * scale[None, :]
        if np.linalg.eigvalsh(R)[0] <= 0:
            raise ValueError(f"Correlation 1/{n_buses} gives an indefinite matrix for {positive.size} loads")
    logger.debug("Load ellipsoid: %d coordinates, w=%.3f, correlated=%s", positive.size, w, correlated)
    return Ellipsoid(np.zeros(positive.size), shape, 1.0)


def unit_ball_moment(beta: Sequence[int]) -> float:
    """
    Integral of u^beta over the n-dimensional unit ball:
    prod Gamma((beta_j+1)/2) / Gamma(|beta|/2 + n/2 + 1), zero for odd exponents.
    """
    beta = np.asarray(beta, dtype=int)
    if np.any(beta % 2):
        return 0.0
    n = beta.size
    log_value = np.sum(gammaln((beta + 1) / 2.0)) - gammaln(beta.sum() / 2.0 + n / 2.0 + 1.0)
    return float(np.exp(log_value))


def ellipsoid_moment(alpha: Sequence[int], E: Ellipsoid) -> float:
    """
    Lebesgue moment of z^alpha over an ellipsoid.

    The monomial is composed with z = center + T u, expanded, and integrated
    term by term over the unit ball; |det T| = r^(n/2) det(shape)^(-1/2) is
    the change-of-variables factor.

    Parameters:
    - alpha: nonnegative integer exponent per coordinate
    - E: the ellipsoid

    Returns:
    - the integral value
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=int)).ravel()
    if np.any(alpha < 0):
        raise ValueError(f"Exponents must be nonnegative, got {alpha.tolist()}")
    validate_dimension(E.dim, alpha.size, "moment exponent")
    n = E.dim
    if n == 0:
        return 1.0
    center, T = E.unit_ball_map()
    space = VariableSpace([VariableBlock("u", n, "auxiliary")])
    composed = Polynomial.constant(space, 1.0)
    for j, a in enumerate(alpha):
        if a:
            composed = composed * Polynomial.linear(space, "u", T[j], center[j]) ** int(a)
    total = 0.0
    for mono, coef in composed.terms.items():
        beta = np.zeros(n, dtype=int)
        for var, exp in mono:
            beta[var] = exp
        total += coef * unit_ball_moment(beta)
    return float(abs(np.linalg.det(T)) * total)


def sample(uncertainty_set: UncertaintySet, count: int, rng: np.random.Generator,
           boundary_fraction: float = 0.5) -> np.ndarray:
    """Sample points of an ellipsoid or polyhedron (boundary-biased for ellipsoids)."""
    if isinstance(uncertainty_set, SemialgebraicSet):
        raise ValueError("Sampling is only implemented for ellipsoids and polyhedra")
    return uncertainty_set.sample(count, rng, boundary_fraction)
