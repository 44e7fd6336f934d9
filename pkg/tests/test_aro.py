"""
Tests for the adjustable robust problem: linearization, state elimination,
robust counterparts and the Newton state solve.
"""
import math

import numpy as np
import pytest

from src.aro import (
    AroProblem,
    NoConvergenceError,
    ParametricPolynomial,
    QuadraticRobustConstraint,
    RankDeficientError,
    SingularJacobianError,
    counterpart_program,
    eliminate_state,
    linearize_equalities,
    putinar_counterpart,
    robust_lp_counterpart,
    slemma_counterpart,
    solve_state,
)
from src.conic import AffineExpr, ConicProgramBuilder, SolveStatus, solve
from src.poly import Polynomial, PolynomialVector, VariableBlock, VariableSpace
from src.uncertainty import Ellipsoid, Polyhedron, SemialgebraicSet


def make_problem(space, L, G, omega, objective=None, lower=-10.0, upper=10.0):
    y = Polynomial.variable(space, "y", 0)
    return AroProblem(space, objective if objective is not None else y, [lower], [upper],
                      PolynomialVector(L), PolynomialVector(G),
                      PolynomialVector([], space), PolynomialVector([], space), omega)


@pytest.fixture
def toy(yzx_space):
    """x = y + z, robust 1 - x^2 >= 0 for |z| <= 0.5, minimize y."""
    y = Polynomial.variable(yzx_space, "y", 0)
    z = Polynomial.variable(yzx_space, "z", 0)
    x = Polynomial.variable(yzx_space, "x", 0)
    omega = Ellipsoid([0.0], [[4.0]])
    return make_problem(yzx_space, [x - y - z], [1 - x ** 2], omega)


class TestProblem:

    def test_mixing_monomial_rejected(self, yzx_space):
        y = Polynomial.variable(yzx_space, "y", 0)
        x = Polynomial.variable(yzx_space, "x", 0)
        with pytest.raises(ValueError):
            make_problem(yzx_space, [x * y - 1], [1 - x], Ellipsoid.unit_ball(1))

    def test_objective_must_be_control_only(self, yzx_space):
        x = Polynomial.variable(yzx_space, "x", 0)
        with pytest.raises(ValueError):
            make_problem(yzx_space, [x], [1 - x], Ellipsoid.unit_ball(1), objective=x)

    def test_uncertainty_dimension_checked(self, yzx_space):
        x = Polynomial.variable(yzx_space, "x", 0)
        with pytest.raises(ValueError):
            make_problem(yzx_space, [x], [1 - x], Ellipsoid.unit_ball(2))

    def test_split_equalities(self, toy):
        first, second = toy.split_equalities()
        x = Polynomial.variable(toy.space, "x", 0)
        y = Polynomial.variable(toy.space, "y", 0)
        z = Polynomial.variable(toy.space, "z", 0)
        assert first[0] == x
        assert second[0] == -y - z

    def test_default_labels(self, toy):
        assert toy.inequality_labels == ["G"]
        assert toy.robust_constraints()[0][0] == "G"


class TestLinearization:

    def test_affine_equalities_are_exact(self, toy):
        stage = linearize_equalities(toy, [0.3])
        np.testing.assert_allclose(stage.A, [[1.0]])
        y = Polynomial.variable(toy.space, "y", 0)
        z = Polynomial.variable(toy.space, "z", 0)
        assert stage.offset[0].allclose(-y - z)
        assert stage.recover([0.2], [0.1]) == pytest.approx([0.3])

    def test_zero_jacobian(self, yzx_space):
        y = Polynomial.variable(yzx_space, "y", 0)
        x = Polynomial.variable(yzx_space, "x", 0)
        prob = make_problem(yzx_space, [x ** 2 - y], [1 - x], Ellipsoid.unit_ball(1))
        with pytest.raises(RankDeficientError):
            linearize_equalities(prob, [0.0])

    def test_invalid_norm(self, toy):
        with pytest.raises(ValueError):
            linearize_equalities(toy, [0.0], eps=1.0, norm="1")


class TestElimination:

    def test_substituted_quadratic(self, toy):
        stage = linearize_equalities(toy, [0.0])
        constraints, recover = eliminate_state(toy, stage)
        assert len(constraints) == 1
        qc = constraints[0]
        np.testing.assert_allclose(qc.A, [[-1.0]])
        np.testing.assert_allclose(qc.B, [[-2.0]])
        np.testing.assert_allclose(qc.b, [0.0])
        np.testing.assert_allclose(qc.C, [[-1.0]])
        np.testing.assert_allclose(qc.c, [0.0])
        assert qc.d == pytest.approx(1.0)
        assert not qc.psd_flag
        assert qc.evaluate([0.2], [0.3]) == pytest.approx(1 - 0.25)
        assert recover([1.0], [-0.5]) == pytest.approx([0.5])

    def test_state_free_constraint_passes_through(self, yzx_space):
        y = Polynomial.variable(yzx_space, "y", 0)
        z = Polynomial.variable(yzx_space, "z", 0)
        x = Polynomial.variable(yzx_space, "x", 0)
        G = 3 * y ** 2 - 2 * y + 5 + 4 * z ** 2
        prob = make_problem(yzx_space, [x - y - z], [G], Ellipsoid.unit_ball(1))
        (qc,), _ = eliminate_state(prob, linearize_equalities(prob, [0.0]))
        np.testing.assert_allclose(qc.C, [[3.0]])
        np.testing.assert_allclose(qc.c, [-2.0])
        np.testing.assert_allclose(qc.A, [[4.0]])
        np.testing.assert_allclose(qc.B, [[0.0]])
        assert qc.d == pytest.approx(5.0)
        assert qc.psd_flag

    def test_trust_region_is_concave_in_control(self, toy):
        stage = linearize_equalities(toy, [0.0], eps=0.5, center=[0.1])
        constraints, _ = eliminate_state(toy, stage)
        assert len(constraints) == 2
        trust = constraints[1]
        assert trust.label == "T"
        assert np.linalg.eigvalsh(trust.C)[-1] <= 0
        # 0.25 - (y + z - 0.1)^2
        assert trust.evaluate([0.1], [0.0]) == pytest.approx(0.25)

    def test_box_trust_region(self, toy):
        stage = linearize_equalities(toy, [0.0], eps=0.5, norm="inf")
        constraints, _ = eliminate_state(toy, stage)
        assert [qc.label for qc in constraints] == ["G", "T", "T"]

    def test_from_polynomial_requires_quadratic(self, yzx_space):
        from src.poly import DegreeOverflowError
        y = Polynomial.variable(yzx_space, "y", 0)
        with pytest.raises(DegreeOverflowError):
            QuadraticRobustConstraint.from_polynomial(y ** 3)


class TestCertificates:

    def test_polyhedral_duality(self):
        builder = ConicProgramBuilder()
        y = builder.add_free(1)[0]
        box = Polyhedron.box([-1, -1], [1, 1])
        robust_lp_counterpart(builder, AffineExpr.const(1.0), [y, y], box)
        builder.set_objective(y, sense="max")
        result = solve(builder.build())
        assert result.is_optimal
        assert result.objective == pytest.approx(0.5, abs=1e-6)

    def test_interval_duality(self):
        # 1 - y + z y >= 0 on [-1, 1]  <=>  1 - y - |y| >= 0
        builder = ConicProgramBuilder()
        y = builder.add_free(1)[0]
        robust_lp_counterpart(builder, 1.0 - y, [y], Polyhedron.box([-1], [1]))
        builder.set_objective(y, sense="max")
        result = solve(builder.build())
        assert result.objective == pytest.approx(0.5, abs=1e-6)
        builder = ConicProgramBuilder()
        y = builder.add_free(1)[0]
        robust_lp_counterpart(builder, 1.0 - y, [y], Polyhedron.box([-1], [1]))
        builder.set_objective(y)
        result = solve(builder.build())
        assert result.status == SolveStatus.DUAL_INFEASIBLE

    def test_slemma_without_uncertain_terms(self):
        qc = QuadraticRobustConstraint(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(1),
                                       np.zeros((1, 1)), np.array([1.0]), 2.0)
        builder = ConicProgramBuilder()
        y = builder.add_free(1)
        _, lam, gamma = slemma_counterpart(builder, qc, Ellipsoid.unit_ball(1), y, AffineExpr.const(0.0))
        builder.set_objective(y[0])
        result = solve(builder.build())
        assert result.objective == pytest.approx(-2.0, abs=1e-6)
        assert result.value(lam) == pytest.approx(0.0, abs=1e-5)

    def test_slemma_on_zero_set(self):
        qc = QuadraticRobustConstraint(np.zeros((0, 0)), np.zeros((1, 0)), np.zeros(0),
                                       np.zeros((1, 1)), np.array([1.0]), 2.0)
        builder = ConicProgramBuilder()
        y = builder.add_free(1)
        handle, _, _ = slemma_counterpart(builder, qc, Ellipsoid.point(), y, AffineExpr.const(0.0))
        assert handle is None
        builder.set_objective(y[0])
        assert solve(builder.build()).objective == pytest.approx(-2.0, abs=1e-6)

    def test_toy_counterpart_bound(self, toy):
        stage = linearize_equalities(toy, [0.0])
        counterpart = counterpart_program(toy, stage)
        assert counterpart.kinds == ["slemma"]
        result = solve(counterpart.program)
        assert result.is_optimal
        assert result.objective == pytest.approx(-0.5, abs=1e-5)
        assert counterpart.control_value(result.x) == pytest.approx([-0.5], abs=1e-4)

    def test_toy_counterpart_with_putinar(self, toy):
        stage = linearize_equalities(toy, [0.0])
        counterpart = counterpart_program(toy, stage, certificate="putinar", degree=2)
        result = solve(counterpart.program)
        assert counterpart.kinds == ["putinar"]
        assert result.objective == pytest.approx(-0.5, abs=1e-4)


class TestPutinar:

    @pytest.fixture
    def interval(self):
        space = VariableSpace([VariableBlock("z", 1, "uncertainty")])
        z = Polynomial.variable(space, "z", 0)
        return space, z, SemialgebraicSet(space, [1 - z ** 2])

    def _solve(self, h, omega, degree):
        builder = ConicProgramBuilder()
        cert = putinar_counterpart(builder, ParametricPolynomial.from_polynomial(h), omega, degree)
        builder.set_objective(AffineExpr())
        return cert, solve(builder.build())

    def test_generator_certifies_itself(self, interval):
        _, z, omega = interval
        cert, result = self._solve(1 - z ** 2, omega, 1)
        assert result.is_optimal
        assert cert.degree == 2
        assert cert.identity_residual(result.x) <= 1e-6

    def test_negative_somewhere(self, interval):
        _, z, omega = interval
        for degree in (1, 2):
            _, result = self._solve(z, omega, degree)
            assert result.status == SolveStatus.PRIMAL_INFEASIBLE

    def test_shifted_linear(self, interval):
        # 1 + z = (1 + z)^2 / 2 + (1 - z^2) / 2
        _, z, omega = interval
        cert, result = self._solve(1 + z, omega, 1)
        assert result.is_optimal
        assert cert.identity_residual(result.x) <= 1e-6

    def test_unbounded_set_rejected(self):
        space = VariableSpace([VariableBlock("z", 1, "uncertainty")])
        z = Polynomial.variable(space, "z", 0)
        with pytest.raises(ValueError):
            putinar_counterpart(ConicProgramBuilder(), ParametricPolynomial.from_polynomial(z),
                                SemialgebraicSet(space, [z]), 2)


class TestNewton:

    def test_square_root(self, yzx_space):
        y = Polynomial.variable(yzx_space, "y", 0)
        x = Polynomial.variable(yzx_space, "x", 0)
        L = PolynomialVector([x ** 2 - y])
        root = solve_state(L, {"y": [4.0], "z": [0.0]}, [1.0])
        assert root == pytest.approx([2.0], abs=1e-8)

    def test_singular_start(self, yzx_space):
        y = Polynomial.variable(yzx_space, "y", 0)
        x = Polynomial.variable(yzx_space, "x", 0)
        with pytest.raises(SingularJacobianError):
            solve_state(PolynomialVector([x ** 2 - y]), {"y": [4.0]}, [0.0])

    def test_no_real_root(self, yzx_space):
        y = Polynomial.variable(yzx_space, "y", 0)
        x = Polynomial.variable(yzx_space, "x", 0)
        with pytest.raises((NoConvergenceError, SingularJacobianError)):
            solve_state(PolynomialVector([x ** 2 + y]), {"y": [1.0]}, [0.7], max_iterations=15)


def test_unbounded_trust_radius_adds_nothing(toy):
    stage = linearize_equalities(toy, [0.0])
    assert math.isinf(stage.eps)
    constraints, _ = eliminate_state(toy, stage)
    assert len(constraints) == 1
