"""
Bundled Interior-Point Solver

Infeasible-start primal-dual path-following method with the HKM search
direction and Mehrotra predictor-corrector steps, for ConicPrograms made of
nonnegative, second-order and PSD cones.

Internally every program is brought to a pure LP + PSD standard form:
free variables are split into differences of nonnegative parts, second-order
cones become arrow-shaped PSD blocks, and linearly dependent equality rows
are dropped (inconsistent rows are reported as primal infeasibility).
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy import sparse

from src.conic import (
    ConeKind,
    ConicProgram,
    SolveResult,
    SolveStatus,
    SolverTolerances,
    smat,
    svec,
    svec_index,
    svec_length,
    tri_indices,
)

try:
    from config import CERTIFICATE_TOL
except ImportError:
    CERTIFICATE_TOL = 1e-7

logger = logging.getLogger(__name__)

STEP_FACTOR = 0.99
FREE_SHRINK = 0.8
STALL_LIMIT = 5


@dataclass
class _StandardForm:
    A: sparse.csr_matrix
    b: np.ndarray
    c: np.ndarray
    n_lp: int
    psd_starts: List[int]
    psd_orders: List[int]
    T: sparse.csr_matrix
    free_pairs: np.ndarray
    kept_rows: np.ndarray
    n_rows_total: int
    inconsistency: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def nu(self) -> int:
        return self.n_lp + sum(self.psd_orders)


def _standard_form(program: ConicProgram) -> _StandardForm:
    n = program.n_variables
    cone_of = np.full(n, -1)
    for k, cone in enumerate(program.cones):
        cone_of[cone.start:cone.stop] = k

    t_rows: List[int] = []
    t_cols: List[int] = []
    t_vals: List[float] = []
    free_pairs = []
    lp = 0
    for i in range(n):
        if cone_of[i] < 0:
            t_rows += [i, i]
            t_cols += [lp, lp + 1]
            t_vals += [1.0, -1.0]
            free_pairs.append((lp, lp + 1))
            lp += 2
        elif program.cones[cone_of[i]].kind == ConeKind.NONNEG:
            t_rows.append(i)
            t_cols.append(lp)
            t_vals.append(1.0)
            lp += 1
    n_lp = lp

    pos = n_lp
    starts, orders = [], []
    extra_rows, extra_cols, extra_vals = [], [], []
    n_extra = 0
    for cone in program.cones:
        if cone.kind == ConeKind.SOC:
            order = cone.size
            t_rows.append(cone.start)
            t_cols.append(pos + svec_index(order, 0, 0))
            t_vals.append(1.0)
            for i in range(1, order):
                t_rows.append(cone.start + i)
                t_cols.append(pos + svec_index(order, i, 0))
                t_vals.append(1.0 / math.sqrt(2.0))
                # arrow structure: equal diagonal, zero inner off-diagonals
                extra_rows += [n_extra, n_extra]
                extra_cols += [pos + svec_index(order, i, i), pos + svec_index(order, 0, 0)]
                extra_vals += [1.0, -1.0]
                n_extra += 1
                for j in range(1, i):
                    extra_rows.append(n_extra)
                    extra_cols.append(pos + svec_index(order, i, j))
                    extra_vals.append(1.0)
                    n_extra += 1
        elif cone.kind == ConeKind.PSD:
            order = cone.order
            for p in range(cone.size):
                t_rows.append(cone.start + p)
                t_cols.append(pos + p)
                t_vals.append(1.0)
        else:
            continue
        starts.append(pos)
        orders.append(order)
        pos += svec_length(order)

    N = pos
    T = sparse.csr_matrix((t_vals, (t_rows, t_cols)), shape=(n, N))
    extra = sparse.csr_matrix((extra_vals, (extra_rows, extra_cols)), shape=(n_extra, N))
    A = sparse.vstack([program.A @ T, extra]).tocsr()
    b = np.concatenate([program.b, np.zeros(n_extra)])
    c = T.T @ program.c

    kept, inconsistency = _independent_rows(A, b)
    return _StandardForm(A[kept], b[kept], np.asarray(c).ravel(), n_lp, starts, orders, T,
                         np.array(free_pairs, dtype=int).reshape(-1, 2), kept, A.shape[0],
                         inconsistency)


def _independent_rows(A: sparse.csr_matrix, b: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Pivoted QR row selection; returns kept rows and a Farkas vector if inconsistent."""
    m = A.shape[0]
    if m == 0:
        return np.arange(0), None
    dense = A.toarray()
    _, R, perm = scipy.linalg.qr(dense.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(diag > 1e-10 * diag[0]))
    kept = np.sort(perm[:rank])
    if rank < m:
        logger.debug("Dropped %d dependent equality rows", m - rank)
        if rank:
            z0 = np.linalg.lstsq(dense[kept], b[kept], rcond=None)[0]
            residual = b - dense @ z0
        else:
            residual = b.copy()
        if np.linalg.norm(residual) > 1e-8 * (1.0 + np.linalg.norm(b)):
            return kept, residual
    return kept, None


class _HkmSolver:
    """Iterates of the LP + PSD standard form, kept as flat vectors."""

    def __init__(self, form: _StandardForm, tolerances: SolverTolerances):
        self.form = form
        self.tol = tolerances
        self.blocks = [(s, k, svec_length(k)) for s, k in zip(form.psd_starts, form.psd_orders)]
        self.A = form.A
        self.AT = form.A.T.tocsr()
        self.block_A = [form.A[:, s:s + size].tocsc() for s, _, size in self.blocks]
        self.lp_A = form.A[:, :form.n_lp].tocsc()

    # cone helpers
    def _identity(self) -> np.ndarray:
        e = np.zeros(self.form.n)
        e[:self.form.n_lp] = 1.0
        for s, k, size in self.blocks:
            e[s:s + size] = svec(np.eye(k))
        return e

    def _max_step(self, v: np.ndarray, dv: np.ndarray) -> float:
        step = np.inf
        n_lp = self.form.n_lp
        neg = dv[:n_lp] < 0
        if np.any(neg):
            step = min(step, float(np.min(-v[:n_lp][neg] / dv[:n_lp][neg])))
        for s, k, size in self.blocks:
            V = smat(v[s:s + size], k)
            D = smat(dv[s:s + size], k)
            try:
                L = np.linalg.cholesky(V)
            except np.linalg.LinAlgError:
                return 0.0
            Linv = scipy.linalg.solve_triangular(L, np.eye(k), lower=True)
            lam = np.linalg.eigvalsh(Linv @ D @ Linv.T)[0]
            if lam < 0:
                step = min(step, -1.0 / lam)
        return step

    def _operator(self, X: np.ndarray, Zi: np.ndarray) -> np.ndarray:
        """svec matrix of H -> (X H Zi + Zi H X) / 2."""
        k = X.shape[0]
        rows, cols, scale = tri_indices(k)
        P = np.empty((rows.size, rows.size))
        inv_sqrt2 = 1.0 / math.sqrt(2.0)
        for p, (i, j) in enumerate(zip(rows, cols)):
            if i == j:
                G = np.outer(X[:, i], Zi[i, :])
            else:
                G = (np.outer(X[:, i], Zi[j, :]) + np.outer(X[:, j], Zi[i, :])) * inv_sqrt2
            P[:, p] = svec(0.5 * (G + G.T))
        return P

    def run(self):
        form, tol = self.form, self.tol
        m, n_lp = form.b.size, form.n_lp
        nu = max(form.nu, 1)

        row_norms = np.sqrt(np.asarray(self.A.multiply(self.A).sum(axis=1)).ravel()) if m else np.zeros(0)
        xi = max(10.0, math.sqrt(nu), float(np.max((1.0 + np.abs(form.b)) / (1.0 + row_norms))) if m else 0.0)
        eta = max(10.0, math.sqrt(nu), float(np.max(row_norms)) if m else 0.0, float(np.linalg.norm(form.c)))
        e = self._identity()
        x, z, y = xi * e, eta * e, np.zeros(m)
        norm_b, norm_c = np.linalg.norm(form.b), np.linalg.norm(form.c)
        stalls = 0
        info = {"primal": float("inf"), "dual": float("inf"), "gap": float("inf")}

        for iteration in range(tol.max_iterations):
            rp = form.b - self.A @ x
            rd = form.c - self.AT @ y - z
            mu = float(x @ z) / nu
            pobj, dobj = float(form.c @ x), float(form.b @ y)
            relp = np.linalg.norm(rp) / (1.0 + norm_b)
            reld = np.linalg.norm(rd) / (1.0 + norm_c)
            gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
            info = {"primal": float(relp), "dual": float(reld), "gap": float(gap)}
            if not all(np.isfinite([relp, reld, gap, mu])):
                return SolveStatus.NUMERICAL_PROBLEM, x, y, z, iteration, info
            if relp <= tol.feasibility and reld <= tol.feasibility and gap <= tol.gap:
                return SolveStatus.OPTIMAL, x, y, z, iteration, info
            if dobj > 0 and np.linalg.norm(self.AT @ y + z) / dobj <= CERTIFICATE_TOL:
                return SolveStatus.PRIMAL_INFEASIBLE, x, y / dobj, z / dobj, iteration, info
            if pobj < 0 and m and np.linalg.norm(self.A @ x) / -pobj <= CERTIFICATE_TOL:
                return SolveStatus.DUAL_INFEASIBLE, x / -pobj, y, z, iteration, info

            Xs, Zis = [], []
            for s, k, size in self.blocks:
                Xs.append(smat(x[s:s + size], k))
                Zis.append(np.linalg.inv(smat(z[s:s + size], k)))
            ratio = x[:n_lp] / z[:n_lp]
            Ps = [self._operator(X, Zi) for X, Zi in zip(Xs, Zis)]

            def apply_P(v):
                out = np.empty_like(v)
                out[:n_lp] = ratio * v[:n_lp]
                for (s, k, size), P in zip(self.blocks, Ps):
                    out[s:s + size] = P @ v[s:s + size]
                return out

            M = np.zeros((m, m))
            if m:
                if n_lp:
                    M += (self.lp_A @ sparse.diags(ratio) @ self.lp_A.T).toarray()
                for Ab, P in zip(self.block_A, Ps):
                    W = Ab @ P
                    M += np.asarray(Ab @ np.asarray(W).T).T
                M = 0.5 * (M + M.T)
            try:
                factor = scipy.linalg.cho_factor(M + 1e-14 * max(1.0, np.trace(M) / max(m, 1)) * np.eye(m)) if m else None

                def solve_schur(rhs):
                    return scipy.linalg.cho_solve(factor, rhs) if m else np.zeros(0)
            except (np.linalg.LinAlgError, ValueError):
                logger.debug("Schur complement not positive definite at iteration %d", iteration)

                def solve_schur(rhs):
                    return np.linalg.lstsq(M, rhs, rcond=None)[0]

            P_rd = apply_P(rd)

            def direction(H):
                dy = solve_schur(rp - self.A @ H + self.A @ P_rd)
                dz = rd - self.AT @ dy
                dx = H - apply_P(dz)
                return dx, dy, dz

            # predictor
            H = -x
            dx_a, dy_a, dz_a = direction(H)
            ap = min(1.0, self._max_step(x, dx_a))
            ad = min(1.0, self._max_step(z, dz_a))
            mu_aff = float((x + ap * dx_a) @ (z + ad * dz_a)) / nu
            sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0

            # corrector
            H = np.empty_like(x)
            zl = z[:n_lp]
            H[:n_lp] = sigma * mu / zl - x[:n_lp] - dx_a[:n_lp] * dz_a[:n_lp] / zl
            for (s, k, size), X, Zi in zip(self.blocks, Xs, Zis):
                DX, DZ = smat(dx_a[s:s + size], k), smat(dz_a[s:s + size], k)
                corr = DX @ DZ @ Zi
                H[s:s + size] = svec(sigma * mu * Zi - X - 0.5 * (corr + corr.T))
            dx, dy, dz = direction(H)
            if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dz))):
                return SolveStatus.NUMERICAL_PROBLEM, x, y, z, iteration, info

            ap = min(1.0, STEP_FACTOR * self._max_step(x, dx))
            ad = min(1.0, STEP_FACTOR * self._max_step(z, dz))
            stalls = stalls + 1 if max(ap, ad) < 1e-8 else 0
            if stalls >= STALL_LIMIT:
                logger.debug("Step lengths collapsed at iteration %d", iteration)
                return SolveStatus.NUMERICAL_PROBLEM, x, y, z, iteration, info
            x = x + ap * dx
            y = y + ad * dy
            z = z + ad * dz

            if form.free_pairs.size:
                p, q = form.free_pairs[:, 0], form.free_pairs[:, 1]
                shift = FREE_SHRINK * np.minimum(x[p], x[q])
                x[p] -= shift
                x[q] -= shift

        logger.debug("Iteration cap %d reached", tol.max_iterations)
        return SolveStatus.NUMERICAL_PROBLEM, x, y, z, tol.max_iterations, info


def solve_conic(program: ConicProgram, tolerances: SolverTolerances) -> SolveResult:
    """
    Solve a ConicProgram with the bundled HKM method.

    Parameters:
    - program: the conic program
    - tolerances: relative residual / gap tolerances and iteration cap

    Returns:
    - SolveResult with status, primal x, equality duals y and dual slack z
      (objective in minimization form; conic.solve converts the sense)
    """
    form = _standard_form(program)
    if form.inconsistency is not None:
        ray = form.inconsistency[:program.n_equalities]
        scale = float(program.b @ ray)
        y = ray / scale if scale else ray
        logger.debug("Equality rows are inconsistent")
        return SolveResult(SolveStatus.PRIMAL_INFEASIBLE, y=y, backend="bundled")

    status, xs, ys, zs, iterations, info = _HkmSolver(form, tolerances).run()
    y_full = np.zeros(form.n_rows_total)
    y_full[form.kept_rows] = ys
    y = y_full[:program.n_equalities]

    if status == SolveStatus.OPTIMAL:
        x = np.asarray(form.T @ xs).ravel()
        return SolveResult(status, x=x, y=y, z=program.c - program.A.T @ y,
                           objective=float(program.c @ x + program.offset),
                           residuals=info, iterations=iterations, backend="bundled")
    if status == SolveStatus.PRIMAL_INFEASIBLE:
        return SolveResult(status, y=y, residuals=info, iterations=iterations, backend="bundled")
    if status == SolveStatus.DUAL_INFEASIBLE:
        return SolveResult(status, x=np.asarray(form.T @ xs).ravel(), residuals=info,
                           iterations=iterations, backend="bundled")
    logger.warning("Bundled solver stopped without convergence after %d iterations "
                   "(primal %.1e, dual %.1e, gap %.1e)", iterations, info["primal"], info["dual"], info["gap"])
    return SolveResult(status, residuals=info, iterations=iterations, backend="bundled")
