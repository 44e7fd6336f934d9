"""
Robust AC Optimal Power Flow Module

Builds the robust ACOPF instance of the adjustable robust toolkit from a
PowerNetwork:

- state x = [Re V; Im V] (2n entries), every power quantity a quadratic
  form x^T M x with M one of the real injection or branch-current matrices
- control y = (t, P^g on PV buses, V^g on generator buses), with t the
  worst-case bound on the reference generation
- uncertainty z: one active-power fluctuation (MW) per bus with positive
  load, shared among generators by participation factors

It also provides the Newton power flow, the nominal SDP lower bound and the
squeezed warm start used by the experiment runner.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from src.algorithms import OuterParams, dynamic_outer
from src.aro import (
    CONTROL,
    STATE,
    UNCERTAINTY,
    AroProblem,
    linearize_equalities,
    solve_state,
)
from src.conic import AffineExpr, ConicProgramBuilder, PsdVariable, SolveResult, affine_sum, solve
from src.matpower import PowerNetwork, load_case, parse_matpower  # noqa: F401
from src.poly import Polynomial, PolynomialVector, VariableBlock, VariableSpace
from src.uncertainty import Ellipsoid, load_coordinates

try:
    from config import SQUEEZE_FRACTION, TABLE_SCALE
except ImportError:
    SQUEEZE_FRACTION = 0.005
    TABLE_SCALE = 100.0

logger = logging.getLogger(__name__)


class NominalSolveError(RuntimeError):
    """The nominal SDP relaxation did not solve to optimality."""

    def __init__(self, status: str, message: str = ""):
        super().__init__(message or f"Nominal SDP relaxation ended with status {status}")
        self.status = status


# -- network matrices ------------------------------------------------------------

@dataclass(eq=False)
class InjectionMatrices:
    """
    Real symmetric 2n x 2n forms of the network quantities.

    active[k] / reactive[k]: injections at bus k, P_k = x^T Y_k x.
    branch[i]: squared current magnitude at one branch end, bounded by
    branch_limits[i]; branch_ends[i] = (branch index, "from" | "to").
    """
    ybus: sparse.csr_matrix
    active: List[sparse.csr_matrix]
    reactive: List[sparse.csr_matrix]
    branch: List[sparse.csr_matrix]
    branch_ends: List[Tuple[int, str]]
    branch_limits: np.ndarray

    @property
    def n_buses(self) -> int:
        return self.ybus.shape[0]

    def injections(self, x: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
        """Active and reactive injections at every bus for the voltage vector x."""
        x = np.asarray(x, dtype=float).ravel()
        return (np.array([x @ (Y @ x) for Y in self.active]),
                np.array([x @ (Y @ x) for Y in self.reactive]))


def branch_admittances(net: PowerNetwork) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(Yff, Yft, Ytf, Ytt) of every branch, pi model with off-nominal taps."""
    ys = 1.0 / (net.r + 1j * net.x)
    tap = net.tap * np.exp(1j * np.deg2rad(net.shift))
    ytt = ys + 0.5j * net.b
    yff = ytt / (tap * np.conj(tap))
    yft = -ys / np.conj(tap)
    ytf = -ys / tap
    return yff, yft, ytf, ytt


def admittance_matrix(net: PowerNetwork) -> sparse.csr_matrix:
    """Complex bus admittance matrix Y_bus, shunts included."""
    n = net.n_buses
    yff, yft, ytf, ytt = branch_admittances(net)
    f, t = net.branch_from, net.branch_to
    rows = np.concatenate([f, f, t, t, np.arange(n)])
    cols = np.concatenate([f, t, f, t, np.arange(n)])
    data = np.concatenate([yff, yft, ytf, ytt, net.gs + 1j * net.bs])
    return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))


def _sym(M: sparse.spmatrix) -> sparse.csr_matrix:
    return ((M + M.T) * 0.5).tocsr()


def _current_form(n: int, near: int, far: int, y_near: complex, y_far: complex) -> sparse.csr_matrix:
    """u_r u_r^T + u_i u_i^T for I = y_near V_near + y_far V_far."""
    u_r = np.zeros(2 * n)
    u_i = np.zeros(2 * n)
    for bus, y in ((near, y_near), (far, y_far)):
        u_r[bus] += y.real
        u_r[n + bus] -= y.imag
        u_i[bus] += y.imag
        u_i[n + bus] += y.real
    return sparse.csr_matrix(np.outer(u_r, u_r) + np.outer(u_i, u_i))


def build_injection_matrices(net: PowerNetwork) -> InjectionMatrices:
    """
    Rank-one trace forms of the network equations.

    Parameters:
    - net: PowerNetwork

    Returns:
    - InjectionMatrices with tr(Y_k x x^T) = Re(V_k conj((Y_bus V)_k)),
      tr(Ybar_k x x^T) the reactive counterpart, and one current form per
      rated branch end with limit (rate_A / baseMVA)^2
    """
    n = net.n_buses
    ybus = admittance_matrix(net)
    G = ybus.real.tocsr()
    B = ybus.imag.tocsr()
    active, reactive = [], []
    for k in range(n):
        g_row = G.getrow(k).tocoo()
        b_row = B.getrow(k).tocoo()
        cols_g, g = g_row.col, g_row.data
        cols_b, b = b_row.col, b_row.data
        rows = np.concatenate([np.full(cols_g.size, k), np.full(cols_b.size, k),
                               np.full(cols_b.size, n + k), np.full(cols_g.size, n + k)])
        cols = np.concatenate([cols_g, n + cols_b, cols_b, n + cols_g])
        M = sparse.coo_matrix((np.concatenate([g, -b, b, g]), (rows, cols)), shape=(2 * n, 2 * n))
        active.append(_sym(M))
        rows = np.concatenate([np.full(cols_g.size, n + k), np.full(cols_b.size, n + k),
                               np.full(cols_b.size, k), np.full(cols_g.size, k)])
        cols = np.concatenate([cols_g, n + cols_b, cols_b, n + cols_g])
        M = sparse.coo_matrix((np.concatenate([g, -b, -b, -g]), (rows, cols)), shape=(2 * n, 2 * n))
        reactive.append(_sym(M))

    yff, yft, ytf, ytt = branch_admittances(net)
    branch, ends, limits = [], [], []
    for l in range(net.n_branches):
        if net.rate_a[l] <= 0:
            continue
        f, t = int(net.branch_from[l]), int(net.branch_to[l])
        branch.append(_current_form(n, f, t, yff[l], yft[l]))
        ends.append((l, "from"))
        branch.append(_current_form(n, t, f, ytt[l], ytf[l]))
        ends.append((l, "to"))
        limits.extend([net.rate_a[l] ** 2] * 2)
    logger.debug("Injection matrices for %d buses, %d rated branch ends", n, len(branch))
    return InjectionMatrices(ybus, active, reactive, branch, ends, np.asarray(limits, dtype=float))


def participation_factors(net: PowerNetwork) -> np.ndarray:
    """
    alpha_k = (P_k^max - P_k^min) / sum over generators, zero at buses
    without a generator.

    Raises:
    - ValueError when every generator has an empty active-power range
    """
    ranges = np.maximum(net.pmax - net.pmin, 0.0)
    total = ranges.sum()
    if total <= 0:
        raise ValueError("Participation factors need a generator with P^max > P^min")
    alpha = np.zeros(net.n_buses)
    alpha[net.gen_bus] = ranges / total
    return alpha


def reactive_ratios(net: PowerNetwork) -> np.ndarray:
    """gamma_k = Q^d_k / P^d_k (constant load power factor), 0 where P^d_k = 0."""
    gamma = np.zeros(net.n_buses)
    loaded = net.pd > 0
    gamma[loaded] = net.qd[loaded] / net.pd[loaded]
    return gamma


# -- control layout ---------------------------------------------------------------

@dataclass(frozen=True)
class ControlLayout:
    """Positions in y = (t, P^g over PV buses, V^g over generator buses)."""
    pv: Tuple[int, ...]
    generators: Tuple[int, ...]

    @classmethod
    def of(cls, net: PowerNetwork) -> "ControlLayout":
        return cls(tuple(net.pv_buses), tuple(net.generator_buses))

    @property
    def size(self) -> int:
        return 1 + len(self.pv) + len(self.generators)

    def p_index(self, bus: int) -> int:
        return 1 + self.pv.index(bus)

    def v_index(self, bus: int) -> int:
        return 1 + len(self.pv) + self.generators.index(bus)

    def labels(self, net: PowerNetwork) -> List[str]:
        return (["t"] + [f"Pg{net.bus_ids[k]}" for k in self.pv]
                + [f"Vg{net.bus_ids[k]}" for k in self.generators])


@dataclass
class OperatingPoint:
    """A control vector with a matching voltage state."""
    y: np.ndarray
    x: np.ndarray

    @property
    def voltages(self) -> np.ndarray:
        n = self.x.size // 2
        return self.x[:n] + 1j * self.x[n:]

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.voltages)


def default_control(net: PowerNetwork) -> np.ndarray:
    """y at the dispatch stored in the case file (Pg and Vg columns)."""
    layout = ControlLayout.of(net)
    gen = net.generator_of_bus
    y = np.zeros(layout.size)
    y[0] = net.pg[gen[net.reference]]
    for k in layout.pv:
        y[layout.p_index(k)] = net.pg[gen[k]]
    for k in layout.generators:
        y[layout.v_index(k)] = net.vg[gen[k]] ** 2
    return y


def control_bounds(net: PowerNetwork) -> Tuple[np.ndarray, np.ndarray]:
    """The box S_y."""
    layout = ControlLayout.of(net)
    gen = net.generator_of_bus
    s = net.reference
    lower = np.zeros(layout.size)
    upper = np.zeros(layout.size)
    lower[0], upper[0] = net.pmin[gen[s]], net.pmax[gen[s]]
    for k in layout.pv:
        i = layout.p_index(k)
        lower[i], upper[i] = net.pmin[gen[k]], net.pmax[gen[k]]
    for k in layout.generators:
        i = layout.v_index(k)
        lower[i], upper[i] = net.vmin[k] ** 2, net.vmax[k] ** 2
    return lower, upper


def control_objective(net: PowerNetwork, y: Sequence[float]) -> float:
    """Generation cost (currency per hour) at a control vector."""
    layout = ControlLayout.of(net)
    gen = net.generator_of_bus
    y = np.asarray(y, dtype=float)
    base = net.base_mva
    total = 0.0
    for k, value in [(net.reference, y[0])] + [(k, y[layout.p_index(k)]) for k in layout.pv]:
        c2, c1, c0 = net.cost[gen[k]]
        total += c2 * (base * value) ** 2 + c1 * base * value + c0
    return float(total)


# -- robust model --------------------------------------------------------------------

def _quadratic_in(space: VariableSpace, M: sparse.spmatrix, constant: float = 0.0) -> Polynomial:
    """x^T M x + constant as a Polynomial over the state block."""
    start = space.slice(STATE).start
    coo = sparse.coo_matrix(M)
    terms: Dict[tuple, float] = {(): float(constant)}
    for a, b, v in zip(coo.row, coo.col, coo.data):
        if v == 0.0:
            continue
        a, b = int(a) + start, int(b) + start
        key = ((a, 2),) if a == b else ((min(a, b), 1), (max(a, b), 1))
        terms[key] = terms.get(key, 0.0) + float(v)
    return Polynomial(space, terms)


def _magnitude(space: VariableSpace, n: int, k: int) -> Polynomial:
    xr = Polynomial.variable(space, STATE, k)
    xi = Polynomial.variable(space, STATE, n + k)
    return xr * xr + xi * xi


def build_aro(net: PowerNetwork, omega: Ellipsoid, mats: Optional[InjectionMatrices] = None,
              alpha: Optional[np.ndarray] = None) -> AroProblem:
    """
    Robust ACOPF as an AroProblem.

    Parameters:
    - net: PowerNetwork
    - omega: uncertainty set over the MW fluctuations of the loaded buses
      (Ellipsoid.point() for the nominal problem)
    - mats: precomputed InjectionMatrices
    - alpha: participation factors (default: generator range ratios)

    Returns:
    - AroProblem with L ordered as PV active balances, PQ active balances,
      PQ reactive balances, generator voltage equalities, reference angle;
      G labelled "P" (reference window against t), "Q" (generator reactive
      windows), "I" (branch currents); S_x labelled "V" (PQ voltage windows)
    """
    mats = mats or build_injection_matrices(net)
    alpha = participation_factors(net) if alpha is None else np.asarray(alpha, dtype=float)
    coords = load_coordinates(net.pd)
    if omega.dim not in (0, len(coords)):
        raise ValueError(f"Uncertainty set has dimension {omega.dim}, the case has {len(coords)} loaded buses")
    if omega.dim == 0:
        coords = []
    n = net.n_buses
    layout = ControlLayout.of(net)
    space = VariableSpace([VariableBlock(CONTROL, layout.size, "control"),
                           VariableBlock(UNCERTAINTY, len(coords), "uncertainty"),
                           VariableBlock(STATE, 2 * n, "state")])
    base = net.base_mva
    gamma = reactive_ratios(net)

    zbus = [Polynomial.zero(space) for _ in range(n)]
    for i, k in enumerate(coords):
        zbus[k] = Polynomial.variable(space, UNCERTAINTY, i) / base
    total = Polynomial.zero(space)
    for p in zbus:
        total = total + p

    def active(k: int) -> Polynomial:
        return _quadratic_in(space, mats.active[k], net.pd[k]) - zbus[k] + alpha[k] * total

    def reactive(k: int) -> Polynomial:
        return _quadratic_in(space, mats.reactive[k], net.qd[k]) - gamma[k] * zbus[k]

    def y_var(i: int) -> Polynomial:
        return Polynomial.variable(space, CONTROL, i)

    pq = net.pq_buses
    equalities = [active(k) - y_var(layout.p_index(k)) for k in layout.pv]
    equalities += [active(k) for k in pq]
    equalities += [reactive(k) for k in pq]
    equalities += [_magnitude(space, n, k) - y_var(layout.v_index(k)) for k in layout.generators]
    equalities.append(Polynomial.variable(space, STATE, n + net.reference))

    gen = net.generator_of_bus
    s = net.reference
    p_ref = active(s)
    inequalities = [p_ref - net.pmin[gen[s]], y_var(0) - p_ref]
    labels = ["P", "P"]
    for k in layout.generators:
        q = reactive(k)
        inequalities += [q - net.qmin[gen[k]], net.qmax[gen[k]] - q]
        labels += ["Q", "Q"]
    for M, limit in zip(mats.branch, mats.branch_limits):
        inequalities.append(limit - _quadratic_in(space, M))
        labels.append("I")

    state_set = []
    for k in pq:
        mag = _magnitude(space, n, k)
        state_set += [net.vmax[k] ** 2 - mag, mag - net.vmin[k] ** 2]
    relaxed = []
    for k in range(n):
        mag = _magnitude(space, n, k)
        relaxed += [1.5 * net.vmax[k] ** 2 - mag, mag - 0.5 * net.vmin[k] ** 2]

    objective = Polynomial.zero(space)
    for k, i in [(s, 0)] + [(k, layout.p_index(k)) for k in layout.pv]:
        c2, c1, c0 = net.cost[gen[k]]
        objective = objective + (c2 * base ** 2) * y_var(i) * y_var(i) + (c1 * base) * y_var(i) + c0

    lower, upper = control_bounds(net)
    prob = AroProblem(space, objective, lower, upper,
                      PolynomialVector(equalities, space), PolynomialVector(inequalities, space),
                      PolynomialVector(state_set, space), PolynomialVector(relaxed, space),
                      omega, labels, ["V"] * len(state_set))
    logger.info("Robust ACOPF for %s: %d controls, %d uncertain loads, %d states, %d robust constraints",
                net.name, prob.n_control, prob.n_uncertainty, prob.n_state,
                len(inequalities) + len(state_set))
    return prob


def nominal_problem(net: PowerNetwork, mats: Optional[InjectionMatrices] = None) -> AroProblem:
    return build_aro(net, Ellipsoid.point(), mats)


# -- power flow --------------------------------------------------------------------

def flat_start(net: PowerNetwork, y: Sequence[float]) -> np.ndarray:
    """Re V = sqrt(V^g) on generator buses and 1 elsewhere, Im V = 0."""
    layout = ControlLayout.of(net)
    y = np.asarray(y, dtype=float)
    x = np.zeros(2 * net.n_buses)
    x[:net.n_buses] = 1.0
    for k in layout.generators:
        x[k] = np.sqrt(max(y[layout.v_index(k)], 0.0))
    return x


def newton_power_flow(net: PowerNetwork, y: Sequence[float], zeta: Optional[Sequence[float]] = None,
                      warm_start: Optional[Sequence[float]] = None,
                      prob: Optional[AroProblem] = None) -> np.ndarray:
    """
    Solve L(y, zeta, x) = 0 for the voltage state by Newton's method.

    Parameters:
    - net: PowerNetwork
    - y: control vector
    - zeta: load fluctuations in MW on the loaded buses (default none)
    - warm_start: initial state (default flat start)
    - prob: AroProblem to take L from (built on demand)

    Returns:
    - x with ||L(y, zeta, x)||_inf <= NEWTON_TOL

    Raises:
    - NoConvergenceError, SingularJacobianError
    """
    zeta = np.zeros(0) if zeta is None else np.asarray(zeta, dtype=float).ravel()
    if prob is None:
        omega = Ellipsoid.unit_ball(zeta.size) if zeta.size else Ellipsoid.point()
        prob = build_aro(net, omega)
    if zeta.size == 0:
        zeta = np.zeros(prob.n_uncertainty)
    warm = flat_start(net, y) if warm_start is None else warm_start
    return solve_state(prob.equalities, prob.point(y=y, z=zeta), warm)


def operating_point_from_state(net: PowerNetwork, x: Sequence[float],
                               mats: Optional[InjectionMatrices] = None) -> OperatingPoint:
    """Read (t, P^g, V^g) back from a nominal voltage state."""
    mats = mats or build_injection_matrices(net)
    x = np.asarray(x, dtype=float).ravel()
    layout = ControlLayout.of(net)
    p, _ = mats.injections(x)
    n = net.n_buses
    y = np.zeros(layout.size)
    y[0] = net.pd[net.reference] + p[net.reference]
    for k in layout.pv:
        y[layout.p_index(k)] = net.pd[k] + p[k]
    for k in layout.generators:
        y[layout.v_index(k)] = x[k] ** 2 + x[n + k] ** 2
    return OperatingPoint(y, x)


# -- nominal SDP ----------------------------------------------------------------------

def _trace(W: PsdVariable, M: sparse.spmatrix) -> AffineExpr:
    """<M, W> for symmetric M."""
    coo = sparse.coo_matrix(M)
    exprs, weights = [], []
    for i, j, v in zip(coo.row, coo.col, coo.data):
        if i >= j and v != 0.0:
            exprs.append(W.entry(int(i), int(j)))
            weights.append(float(v) if i == j else 2.0 * float(v))
    return affine_sum(exprs, weights)


@dataclass(eq=False)
class NominalSdp:
    result: SolveResult
    W: PsdVariable
    generation: List[AffineExpr]

    @property
    def objective(self) -> float:
        return self.result.objective

    def gram(self) -> np.ndarray:
        return self.result.matrix(self.W)


def nominal_sdp(net: PowerNetwork, mats: Optional[InjectionMatrices] = None,
                backend: Optional[str] = None) -> NominalSdp:
    """Rank relaxation of the nominal ACOPF: W >= 0 in place of x x^T."""
    mats = mats or build_injection_matrices(net)
    n = net.n_buses
    base = net.base_mva
    gen = net.generator_of_bus
    builder = ConicProgramBuilder()
    W = builder.add_psd(2 * n)
    builder.add_equality(W.entry(n + net.reference, n + net.reference))

    generation: List[AffineExpr] = []
    objective = AffineExpr()
    for k in range(n):
        p = _trace(W, mats.active[k]) + net.pd[k]
        q = _trace(W, mats.reactive[k]) + net.qd[k]
        if k in gen:
            g = gen[k]
            builder.add_inequality(p, net.pmin[g])
            builder.add_inequality(-p, -net.pmax[g])
            builder.add_inequality(q, net.qmin[g])
            builder.add_inequality(-q, -net.qmax[g])
            tau = builder.add_free(1)[0]
            c2, c1, c0 = net.cost[g]
            builder.add_convex_quadratic_le([p], np.array([[c2 * base ** 2]]), np.array([c1 * base]), c0, tau)
            objective = objective + tau
            generation.append(p)
        else:
            builder.add_equality(p)
            builder.add_equality(q)
        mag = W.entry(k, k) + W.entry(n + k, n + k)
        builder.add_inequality(mag, net.vmin[k] ** 2)
        builder.add_inequality(-mag, -net.vmax[k] ** 2)
    for M, limit in zip(mats.branch, mats.branch_limits):
        builder.add_inequality(-_trace(W, M), -limit)
    builder.set_objective(objective)
    result = solve(builder.build(), backend=backend)
    logger.info("Nominal SDP for %s: %s, objective %.6g", net.name, result.status.value, result.objective)
    return NominalSdp(result, W, generation)


def nominal_sdp_bound(net: PowerNetwork, backend: Optional[str] = None) -> float:
    """
    Nominal SDP lower bound in table units (objective / TABLE_SCALE).

    Raises:
    - NominalSolveError when the relaxation is not solved to optimality
    """
    sdp = nominal_sdp(net, backend=backend)
    if not sdp.result.is_optimal:
        raise NominalSolveError(sdp.result.status.value)
    return sdp.objective / TABLE_SCALE


# -- warm start ----------------------------------------------------------------------

def squeeze_network(net: PowerNetwork, fraction: float = SQUEEZE_FRACTION) -> PowerNetwork:
    """Every bound moved inwards by fraction of its absolute value."""
    if not 0 <= fraction < 1:
        raise ValueError(f"Squeeze fraction must be in [0, 1), got {fraction}")

    def low(v):
        return v + fraction * np.abs(v)

    def high(v):
        return v - fraction * np.abs(v)

    return replace(net, pmin=low(net.pmin), pmax=high(net.pmax), qmin=low(net.qmin), qmax=high(net.qmax),
                   vmin=low(net.vmin), vmax=high(net.vmax), rate_a=high(net.rate_a))


def _leading_state(net: PowerNetwork, W: np.ndarray) -> np.ndarray:
    n = net.n_buses
    eigvals, eigvecs = np.linalg.eigh(0.5 * (W + W.T))
    x = np.sqrt(max(eigvals[-1], 0.0)) * eigvecs[:, -1]
    s = net.reference
    angle = np.arctan2(x[n + s], x[s])
    V = (x[:n] + 1j * x[n:]) * np.exp(-1j * angle)
    logger.debug("Leading eigenvalue share of the Gram matrix: %.6f", eigvals[-1] / max(eigvals.sum(), 1e-300))
    return np.concatenate([V.real, V.imag])


def anchor_condition(net: PowerNetwork, x: Sequence[float], prob: Optional[AroProblem] = None) -> float:
    """
    Condition number of the equality Jacobian in x at (z = 0, x).

    Raises:
    - RankDeficientError above RANK_CONDITION_LIMIT
    """
    prob = prob or nominal_problem(net)
    stage = linearize_equalities(prob, x)
    return float(np.linalg.cond(stage.A))


def squeeze_warm_start(net: PowerNetwork, shrink: float = SQUEEZE_FRACTION, refine: bool = True,
                       backend: Optional[str] = None) -> OperatingPoint:
    """
    Nominal solution of the squeezed problem as a starting point.

    Solves the nominal SDP with every bound tightened by shrink, reads a
    voltage state off the leading eigenvector, fixes the controls and
    recovers the matching state by Newton. With refine the point is then
    improved by one zero-uncertainty pass of the dynamic outer loop on the
    squeezed network.

    Raises:
    - NominalSolveError when the squeezed relaxation is infeasible
    - RankDeficientError when the Jacobian at the anchor is ill-conditioned
    """
    squeezed = squeeze_network(net, shrink)
    mats = build_injection_matrices(squeezed)
    sdp = nominal_sdp(squeezed, mats, backend)
    if not sdp.result.is_optimal:
        raise NominalSolveError(sdp.result.status.value, f"Squeezed nominal problem: {sdp.result.status.value}")
    x_sdp = _leading_state(squeezed, sdp.gram())
    point = operating_point_from_state(squeezed, x_sdp, mats)
    prob = nominal_problem(squeezed, mats)
    x0 = newton_power_flow(squeezed, point.y, warm_start=x_sdp, prob=prob)
    point = operating_point_from_state(squeezed, x0, mats)

    if refine:
        outer = dynamic_outer(prob, point.y, point.x, OuterParams(network_size=net.n_buses), backend=backend)
        best = outer.best
        if best is not None:
            try:
                x1 = newton_power_flow(squeezed, best.y, warm_start=best.x, prob=prob)
                refined = operating_point_from_state(squeezed, x1, mats)
                if control_objective(squeezed, refined.y) <= control_objective(squeezed, point.y):
                    point = refined
            except RuntimeError as exc:
                logger.warning("Refined warm start rejected: %s", exc)
        else:
            logger.warning("Zero-uncertainty refinement ended with %s, keeping the SDP point", outer.outcome.value)

    cond = anchor_condition(net, point.x)
    logger.info("Warm start for %s: cost %.6g, anchor condition %.3e", net.name,
                control_objective(net, point.y), cond)
    return point
