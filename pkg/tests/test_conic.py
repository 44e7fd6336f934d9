"""
Tests for the conic program builder, residual reports and both solver backends.
"""
import numpy as np
import pytest
from scipy import sparse

from src.conic import (
    AffineExpr,
    ConeBlock,
    ConeKind,
    ConicProgram,
    ConicProgramBuilder,
    SolveStatus,
    affine_sum,
    residuals,
    smat,
    solve,
    svec,
    svec_length,
    write_sdpa,
)

BACKENDS = ["bundled", "cvxpy"]


@pytest.mark.parametrize("backend", BACKENDS)
def test_one_dimensional_lp(backend):
    builder = ConicProgramBuilder()
    x = builder.add_free(1)[0]
    builder.add_inequality(x, 1.0)
    builder.set_objective(x)
    result = solve(builder.build(), backend=backend)
    assert result.status == SolveStatus.OPTIMAL
    assert result.objective == pytest.approx(1.0, abs=1e-6)
    assert result.value(x) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("backend", BACKENDS)
def test_fixed_diagonal_trace(backend):
    builder = ConicProgramBuilder()
    X = builder.add_psd(2)
    builder.add_equality(X.entry(0, 0), 1.0)
    builder.add_equality(X.entry(1, 1), 1.0)
    builder.add_equality(X.entry(1, 0), 0.5)
    builder.set_objective(X.entry(0, 0) + X.entry(1, 1))
    result = solve(builder.build(), backend=backend)
    assert result.is_optimal
    assert result.objective == pytest.approx(2.0, abs=1e-6)
    np.testing.assert_allclose(result.matrix(X), [[1.0, 0.5], [0.5, 1.0]], atol=1e-6)


@pytest.mark.parametrize("backend", BACKENDS)
def test_eigenvalue_condition(backend):
    builder = ConicProgramBuilder()
    lam = builder.add_free(1)[0]
    one = AffineExpr.const(1.0)
    builder.add_psd_constraint([[one, lam], [lam, one]])
    builder.set_objective(lam, sense="max")
    result = solve(builder.build(), backend=backend)
    assert result.is_optimal
    assert result.objective == pytest.approx(1.0, abs=1e-5)


@pytest.mark.parametrize("backend", BACKENDS)
def test_second_order_cone(backend):
    # min t s.t. ||(x - 3, x + 1)|| <= t  ->  x = 1, t = 2 sqrt 2
    builder = ConicProgramBuilder()
    t, x = builder.add_free(2)
    builder.add_soc_constraint(t, [x - 3.0, x + 1.0])
    builder.set_objective(t)
    result = solve(builder.build(), backend=backend)
    assert result.is_optimal
    assert result.objective == pytest.approx(2 * np.sqrt(2), abs=1e-5)
    assert result.value(x) == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("backend", BACKENDS)
def test_convex_quadratic_epigraph(backend):
    builder = ConicProgramBuilder()
    v = builder.add_free(2)
    tau = builder.add_free(1)[0]
    H = np.array([[2.0, 0.0], [0.0, 1.0]])
    builder.add_convex_quadratic_le(v, H, np.array([-4.0, 2.0]), 1.0, tau)
    builder.set_objective(tau)
    result = solve(builder.build(), backend=backend)
    # minimum of 2a^2 - 4a + b^2 + 2b + 1 at (1, -1)
    assert result.is_optimal
    assert result.objective == pytest.approx(-2.0, abs=1e-5)


@pytest.mark.parametrize("backend", BACKENDS)
def test_infeasible_program(backend):
    builder = ConicProgramBuilder()
    x = builder.add_free(1)[0]
    builder.add_inequality(x, 1.0)
    builder.add_inequality(-x, 0.0)
    builder.set_objective(x)
    result = solve(builder.build(), backend=backend)
    assert result.status == SolveStatus.PRIMAL_INFEASIBLE
    assert np.isnan(result.objective)


@pytest.mark.parametrize("backend", BACKENDS)
def test_unbounded_program(backend):
    builder = ConicProgramBuilder()
    x = builder.add_nonneg(1)[0]
    y = builder.add_free(1)[0]
    builder.add_equality(y - x)
    builder.set_objective(-1.0 * y)
    result = solve(builder.build(), backend=backend)
    assert result.status == SolveStatus.DUAL_INFEASIBLE


def test_non_convex_quadratic_rejected():
    builder = ConicProgramBuilder()
    v = builder.add_free(2)
    with pytest.raises(ValueError):
        builder.add_convex_quadratic_le(v, np.diag([1.0, -1.0]), None, 0.0, AffineExpr.const(1.0))


class TestResiduals:

    def _program(self):
        A = sparse.csr_matrix(np.array([[1.0, 1.0, 0.0, 0.0, 0.0]]))
        cones = (ConeBlock(ConeKind.NONNEG, 0, 2), ConeBlock(ConeKind.PSD, 2, 3, 2))
        return ConicProgram(np.zeros(5), A, np.array([1.0]), cones)

    def test_feasible_point(self):
        program = self._program()
        x = np.concatenate([[0.5, 0.5], svec(np.eye(2))])
        eq, margin = residuals(program, x)
        assert eq <= 1e-9
        assert margin == pytest.approx(0.5)

    def test_equality_violation(self):
        program = self._program()
        x = np.concatenate([[0.6, 0.5], svec(np.eye(2))])
        eq, _ = residuals(program, x)
        assert eq == pytest.approx(0.1)

    def test_negative_eigenvalue(self):
        program = self._program()
        x = np.concatenate([[0.5, 0.5], svec(np.diag([1.0, -0.05]))])
        _, margin = residuals(program, x)
        assert margin == pytest.approx(-0.05)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            residuals(self._program(), np.zeros(4))


class TestValidation:

    def test_overlapping_cones(self):
        cones = (ConeBlock(ConeKind.NONNEG, 0, 2), ConeBlock(ConeKind.NONNEG, 1, 2))
        with pytest.raises(ValueError):
            ConicProgram(np.zeros(3), sparse.csr_matrix((0, 3)), np.zeros(0), cones)

    def test_wrong_psd_size(self):
        cones = (ConeBlock(ConeKind.PSD, 0, 4, 2),)
        with pytest.raises(ValueError):
            ConicProgram(np.zeros(4), sparse.csr_matrix((0, 4)), np.zeros(0), cones)

    def test_non_finite_data(self):
        with pytest.raises(ValueError):
            ConicProgram(np.array([np.nan]), sparse.csr_matrix((0, 1)), np.zeros(0), ())

    def test_unknown_backend(self):
        builder = ConicProgramBuilder()
        builder.set_objective(builder.add_nonneg(1)[0])
        with pytest.raises(ValueError):
            solve(builder.build(), backend="mosek")


def test_svec_inner_product():
    A = np.array([[2.0, 1.0, 0.0], [1.0, 3.0, -1.0], [0.0, -1.0, 1.0]])
    B = np.array([[1.0, 0.5, 2.0], [0.5, 0.0, 1.0], [2.0, 1.0, 4.0]])
    assert svec(A).size == svec_length(3) == 6
    assert svec(A) @ svec(B) == pytest.approx(np.trace(A @ B))
    np.testing.assert_allclose(smat(svec(A), 3), A)


def test_affine_sum():
    a, b = AffineExpr.var(0), AffineExpr({1: 2.0}, 3.0)
    s = affine_sum([a, b], [2.0, -1.0])
    assert s.terms == {0: 2.0, 1: -2.0}
    assert s.constant == -3.0
    assert (np.float64(2.0) * a).terms == {0: 2.0}


def test_sdpa_dump(tmp_path):
    builder = ConicProgramBuilder()
    X = builder.add_psd(2)
    t = builder.add_nonneg(1)[0]
    builder.add_equality(X.entry(0, 0) + t, 1.0)
    builder.set_objective(X.entry(1, 1))
    path = tmp_path / "program.dat-s"
    write_sdpa(builder.build(), str(path))
    lines = path.read_text().splitlines()
    assert lines[0].startswith('"')
    assert lines[1] == "4"
    assert lines[2] == "2"
    assert lines[3].split() == ["-3", "2"]
