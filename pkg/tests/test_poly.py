"""
Tests for the sparse polynomial module.
"""
import numpy as np
import pytest

from src.poly import (
    AffineVectorMap,
    DegreeOverflowError,
    Polynomial,
    PolynomialVector,
    VariableBlock,
    VariableSpace,
    evaluate,
    monomial_basis,
    substitute_affine,
    taylor1,
)


@pytest.fixture
def xy_space():
    return VariableSpace([VariableBlock("x", 2, "state"), VariableBlock("y", 1, "control")])


def test_evaluate_square():
    space = VariableSpace([VariableBlock("x", 1, "state")])
    x = Polynomial.variable(space, "x", 0)
    assert evaluate(x ** 2, {"x": [3.0]}) == 9.0


def test_evaluate_zero_polynomial():
    space = VariableSpace([VariableBlock("x", 3, "state")])
    p = Polynomial.zero(space)
    assert p.is_zero()
    assert p.evaluate(np.array([1.0, -2.0, 7.0])) == 0.0


def test_evaluate_mixed_terms():
    space = VariableSpace([VariableBlock("x", 1, "state"), VariableBlock("y", 1, "control")])
    x = Polynomial.variable(space, "x", 0)
    y = Polynomial.variable(space, "y", 0)
    p = 2 * x * y + y ** 3
    assert p.evaluate({"x": 1.0, "y": 2.0}) == pytest.approx(12.0)
    assert p.degree == 3


def test_block_flat_indices(xy_space):
    assert xy_space.nvars == 3
    assert xy_space.index("y", 0) == 2
    assert xy_space.variable_name(1) == "x2"
    with pytest.raises(IndexError):
        xy_space.index("x", 2)
    with pytest.raises(ValueError):
        VariableBlock("w", 1, "weird")


def test_zero_dimensional_block():
    space = VariableSpace([VariableBlock("y", 1, "control"), VariableBlock("z", 0, "uncertainty")])
    assert space.nvars == 1
    assert space.indices(["z"]) == []


def test_substitute_binomial(yzx_space):
    x = Polynomial.variable(yzx_space, "x", 0)
    y = Polynomial.variable(yzx_space, "y", 0)
    z = Polynomial.variable(yzx_space, "z", 0)
    result = (x ** 2).substitute("x", [y + z])
    assert result == y ** 2 + 2 * y * z + z ** 2


def test_substitute_leaves_independent_polynomial(yzx_space):
    y = Polynomial.variable(yzx_space, "y", 0)
    p = 3 * y ** 2 - 1
    assert p.substitute("x", [y]) == p


def test_substitute_product():
    space = VariableSpace([VariableBlock("x", 2, "state"), VariableBlock("y", 1, "control")])
    x1 = Polynomial.variable(space, "x", 0)
    x2 = Polynomial.variable(space, "x", 1)
    y = Polynomial.variable(space, "y", 0)
    assert (x1 * x2).substitute("x", [2 * y, 3 * y]) == 6 * y ** 2


def test_substitute_rejects_self_reference(yzx_space):
    x = Polynomial.variable(yzx_space, "x", 0)
    with pytest.raises(ValueError):
        (x ** 2).substitute("x", [x + 1])


def test_substitute_affine_map(yzx_space):
    x = Polynomial.variable(yzx_space, "x", 0)
    z = Polynomial.variable(yzx_space, "z", 0)
    offset = PolynomialVector([z + 1])
    amap = AffineVectorMap(np.array([[2.0]]), yzx_space.block("y"), offset)
    y = Polynomial.variable(yzx_space, "y", 0)
    assert substitute_affine(x, "x", amap) == 2 * y + z + 1


def test_taylor_scalar_square():
    space = VariableSpace([VariableBlock("x", 1, "state")])
    x = Polynomial.variable(space, "x", 0)
    amap, J = taylor1(PolynomialVector([x ** 2]), "x", [1.0])
    np.testing.assert_allclose(J, [[2.0]])
    assert amap.offset[0].allclose(Polynomial.constant(space, -1.0))


def test_taylor_affine_is_exact():
    space = VariableSpace([VariableBlock("x", 1, "state")])
    x = Polynomial.variable(space, "x", 0)
    for anchor in (-4.0, 0.0, 2.5):
        amap, J = taylor1(PolynomialVector([3 * x + 5]), "x", [anchor])
        np.testing.assert_allclose(J, [[3.0]])
        assert amap.offset[0].allclose(Polynomial.constant(space, 5.0))


def test_taylor_two_by_two():
    space = VariableSpace([VariableBlock("x", 2, "state")])
    x1 = Polynomial.variable(space, "x", 0)
    x2 = Polynomial.variable(space, "x", 1)
    amap, J = taylor1(PolynomialVector([x1 ** 2 + x2, x1 * x2]), "x", [1.0, 1.0])
    np.testing.assert_allclose(J, [[2.0, 1.0], [1.0, 1.0]])
    offsets = [p.evaluate(np.zeros(2)) for p in amap.offset]
    np.testing.assert_allclose(offsets, [-1.0, -1.0])


def test_taylor_error_is_quadratic():
    # anchor (0.5, -1); on the unit ball around it the first entry errs by
    # d1^2 + 3 d1 d2 and the second by -3 d2^2 + d2^3, both within 5 |d|^2
    space = VariableSpace([VariableBlock("x", 2, "state")])
    x1 = Polynomial.variable(space, "x", 0)
    x2 = Polynomial.variable(space, "x", 1)
    F = PolynomialVector([x1 ** 2 + 3 * x1 * x2, x2 ** 3 - x1])
    anchor = np.array([0.5, -1.0])
    amap, _ = taylor1(F, "x", anchor)
    linear = amap.as_polynomials()
    rng = np.random.default_rng(0)
    for _ in range(200):
        d = rng.standard_normal(2)
        d *= rng.uniform(0.0, 1.0) / np.linalg.norm(d)
        point = anchor + d
        error = F.evaluate(point) - linear.evaluate(point)
        assert np.all(np.abs(error) <= 5.0 * (d @ d) + 1e-12)


def test_jacobian_matches_derivatives(xy_space):
    x1 = Polynomial.variable(xy_space, "x", 0)
    x2 = Polynomial.variable(xy_space, "x", 1)
    y = Polynomial.variable(xy_space, "y", 0)
    F = PolynomialVector([x1 * x2 * y, x1 ** 3 - y])
    J = F.jacobian("x", {"x": [2.0, 3.0], "y": [0.5]})
    np.testing.assert_allclose(J, [[1.5, 1.0], [12.0, 0.0]])


def test_quadratic_form_round_trip(xy_space):
    H = np.array([[2.0, 0.5, 0.0], [0.5, -1.0, 1.5], [0.0, 1.5, 3.0]])
    g = np.array([1.0, 0.0, -2.0])
    p = Polynomial.quadratic(xy_space, [0, 1, 2], H, g, 4.0)
    H2, g2, c2 = p.quadratic_form(["x", "y"])
    np.testing.assert_allclose(H2, H)
    np.testing.assert_allclose(g2, g)
    assert c2 == pytest.approx(4.0)


def test_quadratic_form_rejects_cubic(xy_space):
    x1 = Polynomial.variable(xy_space, "x", 0)
    with pytest.raises(DegreeOverflowError):
        (x1 ** 3).quadratic_form(["x"])


def test_text_form_is_canonical(yzx_space):
    y = Polynomial.variable(yzx_space, "y", 0)
    x = Polynomial.variable(yzx_space, "x", 0)
    p = 1 - 2 * x + 3 * y ** 2
    assert p.to_text() == "3 * y1^2 - 2 * x1 + 1"


def test_numpy_scalar_on_the_left(yzx_space):
    y = Polynomial.variable(yzx_space, "y", 0)
    p = np.float64(2.0) * y + np.float64(1.0)
    assert isinstance(p, Polynomial)
    assert p.evaluate({"y": 3.0}) == pytest.approx(7.0)


def test_monomial_basis_size():
    # C(n + d, d) monomials of degree <= d in n variables
    assert len(monomial_basis([0, 1, 2], 2)) == 10
    assert monomial_basis([5], 2) == [(), ((5, 1),), ((5, 2),)]


class TestPolynomialVector:

    def test_linear_combination(self, xy_space):
        x1 = Polynomial.variable(xy_space, "x", 0)
        x2 = Polynomial.variable(xy_space, "x", 1)
        F = PolynomialVector([x1, x2])
        G = F.linear_combination(np.array([[1.0, -1.0], [2.0, 0.0]]))
        assert G[0] == x1 - x2
        assert G[1] == 2 * x1

    def test_mixed_spaces_rejected(self, xy_space, yzx_space):
        with pytest.raises(ValueError):
            PolynomialVector([Polynomial.constant(xy_space, 1.0), Polynomial.constant(yzx_space, 1.0)])

    def test_empty_needs_space(self):
        with pytest.raises(ValueError):
            PolynomialVector([])
