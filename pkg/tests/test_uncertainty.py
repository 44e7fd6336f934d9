"""
Tests for uncertainty sets, membership, sampling and moments.
"""
import math

import numpy as np
import pytest

from src.poly import VariableBlock, VariableSpace
from src.uncertainty import (
    Ellipsoid,
    EmptyUncertaintyError,
    Polyhedron,
    build_load_ellipsoid,
    contains,
    ellipsoid_moment,
    load_coordinates,
    sample,
    unit_ball_moment,
)


class TestLoadEllipsoid:

    def test_case9_diagonal_shape(self):
        loads = [0, 0, 0, 0, 90, 0, 100, 0, 125]
        E = build_load_ellipsoid(loads, 0.1)
        assert E.dim == 3
        np.testing.assert_allclose(np.diag(E.shape), [1 / 81, 1 / 100, 1 / 156.25])
        assert np.count_nonzero(E.shape - np.diag(np.diag(E.shape))) == 0
        np.testing.assert_allclose(E.center, 0.0)
        assert E.radius == 1.0

    def test_single_load_half_deviation(self):
        E = build_load_ellipsoid([10.0], 0.5)
        np.testing.assert_allclose(E.shape, [[0.04]])
        assert contains(E, [5.0])
        assert contains(E, [-5.0])
        assert not contains(E, [5.01])

    def test_correlated_off_diagonals(self):
        E = build_load_ellipsoid([90, 100, 125], 0.1, correlated=True, n_buses=9)
        scale = 1.0 / (0.1 * np.array([90.0, 100.0, 125.0]))
        R = E.shape / np.outer(scale, scale)
        np.testing.assert_allclose(np.diag(R), 1.0)
        off = R[~np.eye(3, dtype=bool)]
        np.testing.assert_allclose(off, 1 / 9)

    def test_no_positive_load(self):
        with pytest.raises(EmptyUncertaintyError):
            build_load_ellipsoid([0.0, -5.0], 0.1)

    def test_nonpositive_level(self):
        with pytest.raises(ValueError):
            build_load_ellipsoid([10.0], 0.0)

    def test_correlated_needs_bus_count(self):
        with pytest.raises(ValueError):
            build_load_ellipsoid([10.0, 20.0], 0.1, correlated=True)

    def test_load_coordinates(self):
        assert load_coordinates([0, 3.0, 0, 1.5, -2]) == [1, 3]


class TestMembership:

    def test_center_is_member(self):
        E = Ellipsoid([1.0, -2.0], np.array([[2.0, 0.3], [0.3, 1.0]]), 0.5)
        assert E.contains([1.0, -2.0])

    def test_unit_ball_boundary(self):
        E = Ellipsoid.unit_ball(4)
        assert E.contains([1.0, 0, 0, 0])
        assert not E.contains([1.001, 0, 0, 0])

    def test_indefinite_shape_rejected(self):
        with pytest.raises(ValueError):
            Ellipsoid(np.zeros(2), np.diag([1.0, -1.0]))

    def test_point_set(self):
        omega = Ellipsoid.point()
        assert omega.dim == 0
        assert omega.contains([])
        assert sample(omega, 3, np.random.default_rng(0)).shape == (3, 0)

    def test_box(self):
        box = Polyhedron.box([-1, -1], [1, 1])
        assert box.contains([1.0, -1.0])
        assert not box.contains([1.1, 0.0])
        lower, upper = box.bounding_box()
        np.testing.assert_allclose(lower, [-1, -1], atol=1e-8)
        np.testing.assert_allclose(upper, [1, 1], atol=1e-8)

    def test_empty_polyhedron(self):
        empty = Polyhedron(np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0]))
        with pytest.raises(EmptyUncertaintyError):
            empty.bounding_box()


def test_samples_stay_inside():
    rng = np.random.default_rng(7)
    E = build_load_ellipsoid([90, 100, 125], 0.3, correlated=True, n_buses=9)
    points = sample(E, 200, rng)
    assert points.shape == (200, 3)
    assert all(E.contains(p, tol=1e-9) for p in points)
    boundary = [p @ E.shape @ p for p in points[:100]]
    np.testing.assert_allclose(boundary, 1.0, atol=1e-9)


def test_flat_polyhedron_samples():
    rng = np.random.default_rng(3)
    segment = Polyhedron([[1, 0], [-1, 0], [0, 1], [0, -1]], [0, 0, 1, 0])
    points = segment.sample(5, rng)
    assert points.shape == (5, 2)
    np.testing.assert_allclose(points[:, 0], 0.0, atol=1e-12)
    assert np.all((points[:, 1] >= 0.0) & (points[:, 1] <= 1.0))
    assert all(segment.contains(p) for p in points)


def test_thin_polyhedron_sampling_gives_up():
    rng = np.random.default_rng(3)
    # a diagonal sliver of width 1e-7 inside a unit box: not flat per
    # coordinate, but almost never hit by box rejection
    sliver = Polyhedron(
        [[1, -1], [-1, 1], [1, 0], [-1, 0], [0, 1], [0, -1]],
        [1e-7, 0, 1, 0, 1, 0],
    )
    with pytest.raises(ValueError, match="Rejection sampling"):
        sliver.sample(10, rng)


def test_ellipsoid_generator():
    space = VariableSpace([VariableBlock("z", 2, "uncertainty")])
    E = Ellipsoid([1.0, 0.0], np.diag([1.0, 4.0]))
    omega = E.as_semialgebraic(space, "z")
    assert omega.contains([1.0, 0.5])
    assert not omega.contains([2.1, 0.0])
    assert omega.has_bounding_member()


class TestMoments:

    def test_interval_moments(self):
        interval = Ellipsoid.unit_ball(1)
        assert ellipsoid_moment([0], interval) == pytest.approx(2.0)
        assert ellipsoid_moment([1], interval) == pytest.approx(0.0)
        assert ellipsoid_moment([2], interval) == pytest.approx(2.0 / 3.0)

    def test_odd_moments_vanish(self):
        E = Ellipsoid(np.zeros(3), np.diag([1.0, 0.25, 4.0]), 2.0)
        for alpha in ([1, 0, 0], [2, 1, 0], [3, 2, 2], [1, 1, 1]):
            assert ellipsoid_moment(alpha, E) == pytest.approx(0.0, abs=1e-12)

    def test_disk_second_moment(self):
        assert ellipsoid_moment([2, 0], Ellipsoid.unit_ball(2)) == pytest.approx(math.pi / 4)
        assert unit_ball_moment([0, 0]) == pytest.approx(math.pi)

    def test_scaled_interval_volume(self):
        # [-3, 3] as z^2 / 9 <= 1
        E = Ellipsoid([0.0], [[1.0 / 9.0]])
        assert ellipsoid_moment([0], E) == pytest.approx(6.0)
        assert ellipsoid_moment([2], E) == pytest.approx(18.0)

    def test_shifted_first_moment(self):
        # [1, 3]: integral of z is 4
        E = Ellipsoid([2.0], [[1.0]])
        assert ellipsoid_moment([1], E) == pytest.approx(4.0)

    def test_monte_carlo_agreement(self):
        rng = np.random.default_rng(1)
        E = Ellipsoid(np.zeros(2), np.array([[1.0, 0.4], [0.4, 2.0]]))
        exact = ellipsoid_moment([2, 2], E)
        volume = ellipsoid_moment([0, 0], E)
        points = E.sample(200000, rng, boundary_fraction=0.0)
        values = points[:, 0] ** 2 * points[:, 1] ** 2
        estimate = volume * values.mean()
        stderr = volume * values.std() / math.sqrt(values.size)
        assert abs(estimate - exact) < 4 * stderr
