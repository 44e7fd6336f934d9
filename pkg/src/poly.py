"""
Sparse Multivariate Polynomial Module

This module provides the polynomial carrier used throughout the toolkit:
variables are grouped in named blocks (control y, state x, uncertainty z,
auxiliary), polynomials are immutable sparse term maps, and polynomial
vectors support evaluation, exact Jacobians, affine substitution and
first-order Taylor expansion.
"""

import itertools
import logging
from dataclasses import dataclass
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

try:
    from config import COEFFICIENT_DROP_TOL
except ImportError:
    COEFFICIENT_DROP_TOL = 1e-14

logger = logging.getLogger(__name__)

BLOCK_KINDS = ("control", "state", "uncertainty", "auxiliary")

# A monomial is a sorted tuple of (flat variable index, exponent) pairs.
Monomial = Tuple[Tuple[int, int], ...]
ONE: Monomial = ()


class DegreeOverflowError(ValueError):
    """Raised when a polynomial exceeds the degree a routine can represent."""


def validate_block_kind(kind: str) -> None:
    """Validate that a variable block kind is one of the supported tags."""
    if kind not in BLOCK_KINDS:
        raise ValueError(f"Block kind '{kind}' is not one of {BLOCK_KINDS}")


def validate_dimension(expected: int, actual: int, what: str) -> None:
    """Validate that a vector has the dimension a block or map expects."""
    if expected != actual:
        raise ValueError(f"Dimension mismatch for {what}: expected {expected}, got {actual}")


@dataclass(frozen=True)
class VariableBlock:
    """A named group of scalar variables (y, x, z, ...)."""
    name: str
    dim: int
    kind: str = "auxiliary"

    def __post_init__(self):
        validate_block_kind(self.kind)
        # dim 0 is allowed so that the zero uncertainty set {0} has a block
        if self.dim < 0:
            raise ValueError(f"Block '{self.name}' has negative dimension {self.dim}")


class VariableSpace:
    """
    Ordered collection of variable blocks with a flat variable index.

    Parameters:
    - blocks: sequence of VariableBlock with unique names
    """

    def __init__(self, blocks: Sequence[VariableBlock]):
        names = [block.name for block in blocks]
        if len(set(names)) != len(names):
            raise ValueError(f"Block names must be unique, got {names}")
        self.blocks: Tuple[VariableBlock, ...] = tuple(blocks)
        self._offsets: Dict[str, int] = {}
        offset = 0
        for block in self.blocks:
            self._offsets[block.name] = offset
            offset += block.dim
        self.nvars = offset

    def __eq__(self, other):
        return isinstance(other, VariableSpace) and self.blocks == other.blocks

    def __hash__(self):
        return hash(self.blocks)

    def __repr__(self):
        inner = ", ".join(f"{b.name}[{b.dim}]" for b in self.blocks)
        return f"VariableSpace({inner})"

    def block(self, name: Union[str, VariableBlock]) -> VariableBlock:
        """Return the block with the given name."""
        key = name.name if isinstance(name, VariableBlock) else name
        for block in self.blocks:
            if block.name == key:
                return block
        raise KeyError(f"No block named '{key}' in {self!r}")

    def slice(self, name: Union[str, VariableBlock]) -> slice:
        """Return the flat index slice of a block."""
        block = self.block(name)
        start = self._offsets[block.name]
        return slice(start, start + block.dim)

    def index(self, name: Union[str, VariableBlock], i: int) -> int:
        """Return the flat index of coordinate i of a block."""
        block = self.block(name)
        if not 0 <= i < block.dim:
            raise IndexError(f"Coordinate {i} outside block '{block.name}' of dim {block.dim}")
        return self._offsets[block.name] + i

    def indices(self, names: Iterable[Union[str, VariableBlock]]) -> List[int]:
        """Return the flat indices of several blocks, in the given order."""
        out: List[int] = []
        for name in names:
            out.extend(range(self.slice(name).start, self.slice(name).stop))
        return out

    def variable_name(self, flat: int) -> str:
        """Return the display name of a flat variable, e.g. 'y1' or 'z3'."""
        for block in self.blocks:
            start = self._offsets[block.name]
            if start <= flat < start + block.dim:
                return f"{block.name}{flat - start + 1}"
        raise IndexError(f"Flat index {flat} outside {self!r}")

    def flatten(self, point) -> np.ndarray:
        """
        Turn a point given per block (mapping name -> vector) or as a flat
        vector into a flat float array. Blocks missing from a mapping are zero.
        """
        if isinstance(point, Mapping):
            flat = np.zeros(self.nvars)
            for name, values in point.items():
                sl = self.slice(name)
                values = np.atleast_1d(np.asarray(values, dtype=float)).ravel()
                validate_dimension(sl.stop - sl.start, values.size, f"block '{name}'")
                flat[sl] = values
            return flat
        flat = np.asarray(point, dtype=float).ravel()
        validate_dimension(self.nvars, flat.size, "point")
        return flat


def _normalize_monomial(mono: Iterable[Tuple[int, int]]) -> Monomial:
    merged: Dict[int, int] = {}
    for var, exp in mono:
        if exp < 0:
            raise ValueError(f"Negative exponent {exp} on variable {var}")
        if exp:
            merged[var] = merged.get(var, 0) + int(exp)
    return tuple(sorted(merged.items()))


def monomial_multiply(a: Monomial, b: Monomial) -> Monomial:
    """Product of two monomials."""
    if not a:
        return b
    if not b:
        return a
    merged = dict(a)
    for var, exp in b:
        merged[var] = merged.get(var, 0) + exp
    return tuple(sorted(merged.items()))


def monomial_degree(mono: Monomial) -> int:
    return sum(exp for _, exp in mono)


def monomial_sort_key(mono: Monomial) -> Tuple:
    """Graded-lexicographic key: total degree, then earlier variables first."""
    return (monomial_degree(mono), tuple((var, -exp) for var, exp in mono))


def monomial_basis(variables: Sequence[int], degree: int) -> List[Monomial]:
    """
    All monomials in the given variables of total degree <= degree, in
    graded-lexicographic order (constant first).
    """
    basis: List[Monomial] = [ONE]
    ordered = sorted(variables)
    for d in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(ordered, d):
            basis.append(_normalize_monomial((var, 1) for var in combo))
    return basis


class Polynomial:
    """
    Immutable sparse polynomial over a VariableSpace.

    Parameters:
    - space: the VariableSpace the polynomial lives in
    - terms: mapping from monomial (tuple of (flat var, exponent)) to coefficient
    """

    __slots__ = ("space", "_terms")
    __array_ufunc__ = None

    def __init__(self, space: VariableSpace, terms: Optional[Mapping[Monomial, float]] = None):
        merged: Dict[Monomial, float] = {}
        for mono, coef in (terms or {}).items():
            key = _normalize_monomial(mono)
            merged[key] = merged.get(key, 0.0) + float(coef)
        for key, coef in merged.items():
            for var, _ in key:
                if not 0 <= var < space.nvars:
                    raise ValueError(f"Variable index {var} outside {space!r}")
        self.space = space
        self._terms = {k: c for k, c in merged.items() if abs(c) > COEFFICIENT_DROP_TOL}

    @classmethod
    def _raw(cls, space: VariableSpace, terms: Dict[Monomial, float]) -> "Polynomial":
        poly = cls.__new__(cls)
        poly.space = space
        poly._terms = {k: c for k, c in terms.items() if abs(c) > COEFFICIENT_DROP_TOL}
        return poly

    # -- constructors -----------------------------------------------------

    @classmethod
    def constant(cls, space: VariableSpace, value: float) -> "Polynomial":
        return cls._raw(space, {ONE: float(value)})

    @classmethod
    def zero(cls, space: VariableSpace) -> "Polynomial":
        return cls._raw(space, {})

    @classmethod
    def variable(cls, space: VariableSpace, block: Union[str, VariableBlock], i: int) -> "Polynomial":
        return cls._raw(space, {((space.index(block, i), 1),): 1.0})

    @classmethod
    def linear(cls, space: VariableSpace, block: Union[str, VariableBlock],
               coefficients: Sequence[float], constant: float = 0.0) -> "Polynomial":
        """Build c0 + sum_i a_i * block_i."""
        sl = space.slice(block)
        coefficients = np.asarray(coefficients, dtype=float).ravel()
        validate_dimension(sl.stop - sl.start, coefficients.size, "linear coefficients")
        terms: Dict[Monomial, float] = {ONE: float(constant)}
        for i, a in enumerate(coefficients):
            if a != 0.0:
                terms[((sl.start + i, 1),)] = float(a)
        return cls._raw(space, terms)

    @classmethod
    def quadratic(cls, space: VariableSpace, variables: Sequence[int], H: np.ndarray,
                  g: Optional[np.ndarray] = None, c: float = 0.0) -> "Polynomial":
        """Build v^T H v + g^T v + c over the listed flat variables."""
        H = np.asarray(H, dtype=float)
        terms: Dict[Monomial, float] = {ONE: float(c)}
        n = len(variables)
        for a in range(n):
            for b in range(a, n):
                coef = H[a, a] if a == b else H[a, b] + H[b, a]
                if coef != 0.0:
                    key = _normalize_monomial(((variables[a], 1), (variables[b], 1)))
                    terms[key] = terms.get(key, 0.0) + coef
        if g is not None:
            for a, coef in enumerate(np.asarray(g, dtype=float).ravel()):
                if coef != 0.0:
                    key = ((variables[a], 1),)
                    terms[key] = terms.get(key, 0.0) + coef
        return cls._raw(space, terms)

    # -- inspection -------------------------------------------------------

    @property
    def terms(self) -> Mapping[Monomial, float]:
        return MappingProxyType(self._terms)

    @property
    def degree(self) -> int:
        return max((monomial_degree(m) for m in self._terms), default=0)

    def degree_in(self, block: Union[str, VariableBlock]) -> int:
        """Highest total exponent carried by the variables of one block."""
        sl = self.space.slice(block)
        return max((sum(e for v, e in m if sl.start <= v < sl.stop) for m in self._terms), default=0)

    def variables(self) -> set:
        return {var for mono in self._terms for var, _ in mono}

    def is_zero(self) -> bool:
        return not self._terms

    def coefficient(self, mono: Monomial) -> float:
        return self._terms.get(_normalize_monomial(mono), 0.0)

    def sorted_terms(self) -> List[Tuple[Monomial, float]]:
        """Terms in canonical order: highest degree first, graded-lex within a degree."""
        return sorted(self._terms.items(),
                      key=lambda item: (-monomial_degree(item[0]), monomial_sort_key(item[0])[1]))

    def to_text(self) -> str:
        """Canonical text form, e.g. '3 * y1^2*z3 - 2 * x1 + 1'."""
        if not self._terms:
            return "0"
        pieces = []
        for mono, coef in self.sorted_terms():
            factors = "*".join(self.space.variable_name(v) + (f"^{e}" if e > 1 else "")
                               for v, e in mono)
            magnitude = f"{abs(coef):.12g}"
            body = f"{magnitude} * {factors}" if factors else magnitude
            if not pieces:
                pieces.append(body if coef >= 0 else f"-{body}")
            else:
                pieces.append(("+ " if coef >= 0 else "- ") + body)
        return " ".join(pieces)

    def __repr__(self):
        return f"Polynomial({self.to_text()})"

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.space == other.space and self._terms == other._terms

    __hash__ = None

    def allclose(self, other: "Polynomial", tol: float = 1e-10) -> bool:
        """Coefficient-wise comparison with an absolute tolerance."""
        diff = self - other
        return all(abs(c) <= tol for c in diff._terms.values())

    # -- arithmetic -------------------------------------------------------

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.space != self.space:
                raise ValueError("Polynomials live in different variable spaces")
            return other
        if np.isscalar(other):
            return Polynomial.constant(self.space, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = dict(self._terms)
        for mono, coef in other._terms.items():
            terms[mono] = terms.get(mono, 0.0) + coef
        return Polynomial._raw(self.space, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial._raw(self.space, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if np.isscalar(other):
            return Polynomial._raw(self.space, {m: c * float(other) for m, c in self._terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms: Dict[Monomial, float] = {}
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                key = monomial_multiply(ma, mb)
                terms[key] = terms.get(key, 0.0) + ca * cb
        return Polynomial._raw(self.space, terms)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return self * (1.0 / float(scalar))

    def __pow__(self, power: int):
        if not isinstance(power, (int, np.integer)) or power < 0:
            raise ValueError(f"Polynomial powers must be nonnegative integers, got {power}")
        result = Polynomial.constant(self.space, 1.0)
        base = self
        while power:
            if power & 1:
                result = result * base
            base = base * base
            power >>= 1
        return result

    # -- calculus and evaluation -------------------------------------------

    def evaluate(self, point) -> float:
        """Exact value at a point given per block or as a flat vector."""
        flat = self.space.flatten(point)
        total = 0.0
        for mono, coef in self._terms.items():
            value = coef
            for var, exp in mono:
                value *= flat[var] ** exp
            total += value
        return float(total)

    __call__ = evaluate

    def derivative(self, var: int) -> "Polynomial":
        """Exact partial derivative with respect to a flat variable."""
        terms: Dict[Monomial, float] = {}
        for mono, coef in self._terms.items():
            for k, (v, e) in enumerate(mono):
                if v == var:
                    reduced = mono[:k] + (((v, e - 1),) if e > 1 else ()) + mono[k + 1:]
                    terms[reduced] = terms.get(reduced, 0.0) + coef * e
        return Polynomial._raw(self.space, terms)

    def substitute(self, block: Union[str, VariableBlock],
                   replacements: Sequence["Polynomial"]) -> "Polynomial":
        """
        Replace every variable of a block by a polynomial.

        Parameters:
        - block: the block being eliminated
        - replacements: one polynomial per block coordinate (same space)

        Returns:
        - Polynomial without any variable of the eliminated block
        """
        sl = self.space.slice(block)
        validate_dimension(sl.stop - sl.start, len(replacements), f"replacements for '{block}'")
        for rep in replacements:
            if rep.space != self.space:
                raise ValueError("Replacement polynomials live in a different variable space")
            if any(sl.start <= v < sl.stop for v in rep.variables()):
                raise ValueError("Replacement polynomials may not contain the eliminated block")
        return self._substitute(sl, replacements)

    def _substitute(self, sl: slice, replacements: Sequence["Polynomial"]) -> "Polynomial":
        """Simultaneous substitution of the variables in sl."""
        powers: Dict[Tuple[int, int], Polynomial] = {}

        def power(var: int, exp: int) -> Polynomial:
            key = (var, exp)
            if key not in powers:
                rep = replacements[var - sl.start]
                powers[key] = rep if exp == 1 else power(var, exp - 1) * rep
            return powers[key]

        terms: Dict[Monomial, float] = {}
        for mono, coef in self._terms.items():
            kept = tuple((v, e) for v, e in mono if not sl.start <= v < sl.stop)
            factor = Polynomial._raw(self.space, {kept: coef})
            for v, e in mono:
                if sl.start <= v < sl.stop:
                    factor = factor * power(v, e)
            for m, c in factor._terms.items():
                terms[m] = terms.get(m, 0.0) + c
        return Polynomial._raw(self.space, terms)

    def affine_change(self, block: Union[str, VariableBlock], matrix: np.ndarray,
                      shift: Sequence[float]) -> "Polynomial":
        """Change of coordinates v := shift + matrix @ v inside one block."""
        sl = self.space.slice(block)
        n = sl.stop - sl.start
        matrix = np.asarray(matrix, dtype=float).reshape(n, n)
        shift = np.asarray(shift, dtype=float).ravel()
        validate_dimension(n, shift.size, f"shift of '{block}'")
        replacements = []
        for k in range(n):
            terms = {ONE: shift[k]}
            for j in range(n):
                if matrix[k, j] != 0.0:
                    terms[((sl.start + j, 1),)] = matrix[k, j]
            replacements.append(Polynomial(self.space, terms))
        return self._substitute(sl, replacements)

    def fix_block(self, block: Union[str, VariableBlock], values: Sequence[float]) -> "Polynomial":
        """Substitute constant values for every variable of a block."""
        values = np.atleast_1d(np.asarray(values, dtype=float)).ravel()
        return self.substitute(block, [Polynomial.constant(self.space, v) for v in values])

    def quadratic_form(self, blocks: Sequence[Union[str, VariableBlock]]) -> Tuple[np.ndarray, np.ndarray, float]:
        """
        Express the polynomial as v^T H v + g^T v + c, v the concatenation of
        the listed blocks.

        Returns:
        - (H symmetric, g, c)

        Raises:
        - DegreeOverflowError if the degree exceeds two
        - ValueError if a variable outside the listed blocks appears
        """
        if self.degree > 2:
            raise DegreeOverflowError(f"Polynomial of degree {self.degree} has no quadratic form")
        order = self.space.indices(blocks)
        position = {var: k for k, var in enumerate(order)}
        n = len(order)
        H = np.zeros((n, n))
        g = np.zeros(n)
        c = 0.0
        for mono, coef in self._terms.items():
            for var, _ in mono:
                if var not in position:
                    raise ValueError(f"Variable {self.space.variable_name(var)} outside blocks {blocks}")
            if not mono:
                c += coef
            elif len(mono) == 1 and mono[0][1] == 1:
                g[position[mono[0][0]]] += coef
            elif len(mono) == 1:
                a = position[mono[0][0]]
                H[a, a] += coef
            else:
                a, b = position[mono[0][0]], position[mono[1][0]]
                H[a, b] += coef / 2.0
                H[b, a] += coef / 2.0
        return H, g, c


class PolynomialVector:
    """
    Ordered sequence of polynomials sharing one variable space.

    Parameters:
    - entries: polynomials of the vector
    - space: required when entries is empty
    """

    def __init__(self, entries: Sequence[Polynomial], space: Optional[VariableSpace] = None):
        entries = list(entries)
        if space is None:
            if not entries:
                raise ValueError("An empty PolynomialVector needs an explicit space")
            space = entries[0].space
        for entry in entries:
            if entry.space != space:
                raise ValueError("All entries of a PolynomialVector must share one space")
        self.space = space
        self.entries: Tuple[Polynomial, ...] = tuple(entries)
        self._jacobians: Dict[str, List[List[Tuple[int, Polynomial]]]] = {}

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return PolynomialVector(self.entries[item], self.space)
        return self.entries[item]

    def __add__(self, other: "PolynomialVector") -> "PolynomialVector":
        validate_dimension(len(self), len(other), "polynomial vector sum")
        return PolynomialVector([a + b for a, b in zip(self, other)], self.space)

    def __repr__(self):
        return f"PolynomialVector({len(self)} entries over {self.space!r})"

    def concat(self, other: "PolynomialVector") -> "PolynomialVector":
        return PolynomialVector(self.entries + tuple(other.entries), self.space)

    @property
    def degree(self) -> int:
        return max((p.degree for p in self.entries), default=0)

    def evaluate(self, point) -> np.ndarray:
        flat = self.space.flatten(point)
        return np.array([p.evaluate(flat) for p in self.entries])

    __call__ = evaluate

    def jacobian(self, block: Union[str, VariableBlock], point) -> np.ndarray:
        """
        Jacobian with respect to one block, evaluated from exact symbolic
        partial derivatives (never finite differences).
        """
        name = self.space.block(block).name
        sl = self.space.slice(name)
        if name not in self._jacobians:
            rows = []
            for p in self.entries:
                used = p.variables()
                rows.append([(j, p.derivative(sl.start + j)) for j in range(sl.stop - sl.start)
                             if sl.start + j in used])
            self._jacobians[name] = rows
        flat = self.space.flatten(point)
        J = np.zeros((len(self), sl.stop - sl.start))
        for i, row in enumerate(self._jacobians[name]):
            for j, dp in row:
                J[i, j] = dp.evaluate(flat)
        return J

    def substitute(self, block: Union[str, VariableBlock],
                   replacements: Sequence[Polynomial]) -> "PolynomialVector":
        return PolynomialVector([p.substitute(block, replacements) for p in self.entries], self.space)

    def fix_block(self, block: Union[str, VariableBlock], values: Sequence[float]) -> "PolynomialVector":
        return PolynomialVector([p.fix_block(block, values) for p in self.entries], self.space)

    def linear_combination(self, matrix: np.ndarray) -> "PolynomialVector":
        """Return M @ self, one polynomial per row of M."""
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        validate_dimension(len(self), matrix.shape[1], "linear combination columns")
        rows = []
        for i in range(matrix.shape[0]):
            terms: Dict[Monomial, float] = {}
            for j, weight in enumerate(matrix[i]):
                if weight == 0.0:
                    continue
                for mono, coef in self.entries[j]._terms.items():
                    terms[mono] = terms.get(mono, 0.0) + weight * coef
            rows.append(Polynomial._raw(self.space, terms))
        return PolynomialVector(rows, self.space)


@dataclass(frozen=True, eq=False)
class AffineVectorMap:
    """
    The map  A @ source + offset, with offset a polynomial vector that does
    not involve the source block. `source` may be None for a pure offset.
    """
    matrix: np.ndarray
    source: Optional[VariableBlock]
    offset: PolynomialVector

    def __post_init__(self):
        matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if self.source is None:
            matrix = matrix.reshape(len(self.offset), 0)
        else:
            validate_dimension(self.source.dim, matrix.shape[1], "affine map columns")
            sl = self.offset.space.slice(self.source)
            for p in self.offset:
                if any(sl.start <= v < sl.stop for v in p.variables()):
                    raise ValueError(f"Offset polynomials may not involve block '{self.source.name}'")
        validate_dimension(len(self.offset), matrix.shape[0], "affine map rows")
        object.__setattr__(self, "matrix", matrix)

    @property
    def output_dim(self) -> int:
        return self.matrix.shape[0]

    def as_polynomials(self) -> PolynomialVector:
        """The map written out as one polynomial per output coordinate."""
        space = self.offset.space
        if self.source is None:
            return self.offset
        start = space.slice(self.source).start
        rows = []
        for i, base in enumerate(self.offset):
            terms = dict(base.terms)
            for j, a in enumerate(self.matrix[i]):
                if a != 0.0:
                    key = ((start + j, 1),)
                    terms[key] = terms.get(key, 0.0) + a
            rows.append(Polynomial(space, terms))
        return PolynomialVector(rows, space)


def evaluate(p: Polynomial, point) -> float:
    """Exact polynomial value at a point (mapping block -> vector, or flat)."""
    return p.evaluate(point)


def substitute_affine(p: Polynomial, block: Union[str, VariableBlock], amap: AffineVectorMap) -> Polynomial:
    """
    Compose p with block := A @ source + offset.

    Parameters:
    - p: polynomial to transform
    - block: block being eliminated
    - amap: AffineVectorMap whose output dimension equals the block dimension

    Returns:
    - Polynomial free of the eliminated block
    """
    target = p.space.block(block)
    validate_dimension(target.dim, amap.output_dim, f"affine map into '{target.name}'")
    if amap.source is not None and amap.source.name == target.name:
        raise ValueError("An affine map may not substitute a block by itself")
    return p.substitute(target, list(amap.as_polynomials()))


def taylor1(F: PolynomialVector, block: Union[str, VariableBlock],
            anchor: Sequence[float]) -> Tuple[AffineVectorMap, np.ndarray]:
    """
    First-order Taylor expansion of F in one block around an anchor.

    The Jacobian is taken at the anchor with every other block at zero; when
    F couples the block with the others only additively this is the exact
    Jacobian everywhere and the remaining blocks stay symbolic in the offset.

    Parameters:
    - F: polynomial vector to linearize
    - block: block the expansion is taken in
    - anchor: expansion point for the block

    Returns:
    - (AffineVectorMap with matrix J and offset F(anchor, .) - J @ anchor, J)
    """
    target = F.space.block(block)
    anchor = np.atleast_1d(np.asarray(anchor, dtype=float)).ravel()
    validate_dimension(target.dim, anchor.size, f"anchor for '{target.name}'")
    J = F.jacobian(target, {target.name: anchor})
    fixed = F.fix_block(target, anchor)
    shift = J @ anchor
    offset = PolynomialVector([p - float(s) for p, s in zip(fixed, shift)], F.space)
    logger.debug("Taylor expansion of %d entries in block '%s'", len(F), target.name)
    return AffineVectorMap(J, target, offset), J
