import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hopflab.geometry import (
    DISK,
    INTERVAL,
    BoundaryPoint,
    ConfigurationError,
    DomainError,
    DomainGeometry,
    boundary_quadrature,
    build_grid,
    distance_to_boundary,
    graded_interval_grid,
    grid_boundary_points,
    inward_normal,
)


def test_interval_distance():
    assert distance_to_boundary(INTERVAL, 0.3) == pytest.approx(0.3)
    assert distance_to_boundary(INTERVAL, 0.8) == pytest.approx(0.2)
    np.testing.assert_allclose(distance_to_boundary(INTERVAL, np.array([0.0, 0.5, 1.0])), [0, 0.5, 0])


def test_disk_distance():
    assert distance_to_boundary(DISK, np.array([0.3, 0.4])) == pytest.approx(0.5)
    assert distance_to_boundary(DISK, np.array([0.0, 0.0])) == pytest.approx(1.0)


def test_outside_points_rejected():
    with pytest.raises(DomainError):
        distance_to_boundary(INTERVAL, 1.5)
    with pytest.raises(DomainError):
        distance_to_boundary(DISK, np.array([1.0, 1.0]))


@given(st.floats(0.0, 1.0))
def test_interval_distance_range(x):
    d = distance_to_boundary(INTERVAL, x)
    assert 0.0 <= d <= 0.5


@given(st.floats(0, 2 * math.pi), st.floats(0.0, 1.0))
def test_disk_distance_is_one_minus_radius(phi, r):
    p = np.array([r * math.cos(phi), r * math.sin(phi)])
    assert distance_to_boundary(DISK, p) == pytest.approx(1.0 - r, abs=1e-12)


def test_normals():
    np.testing.assert_allclose(inward_normal(INTERVAL, BoundaryPoint(INTERVAL, 0.0)), [1.0])
    np.testing.assert_allclose(inward_normal(INTERVAL, BoundaryPoint(INTERVAL, 1.0)), [-1.0])
    n = inward_normal(DISK, BoundaryPoint(DISK, math.pi / 2))
    np.testing.assert_allclose(n, [0.0, -1.0], atol=1e-15)


def test_boundary_point_validation():
    with pytest.raises(DomainError):
        BoundaryPoint(INTERVAL, 0.5)
    assert BoundaryPoint(DISK, 2 * math.pi + 1.0).coordinate == pytest.approx(1.0)


def test_domain_names():
    assert DomainGeometry.from_name("Disk") == DISK
    with pytest.raises(ConfigurationError):
        DomainGeometry.from_name("sphere")
    assert INTERVAL.boundary_measure == 2.0
    assert DISK.dimension == 2


def test_uniform_interval_grid():
    g = build_grid(INTERVAL, 10)
    assert g.size == 9
    assert g.gaps.sum() == pytest.approx(1.0)
    # trapezoid rule integrates constants exactly
    assert g.integrate(np.ones(g.size), (1.0, 1.0)) == pytest.approx(1.0)


def test_disk_grid_area():
    g = build_grid(DISK, 20, 16)
    assert g.shape == (20, 16)
    assert g.weights.sum() == pytest.approx(math.pi)
    assert g.points.shape == (320, 2)


def test_disk_default_angles_multiple_of_four():
    assert build_grid(DISK, 10).n_angles % 4 == 0


def test_resolution_too_small():
    with pytest.raises(ConfigurationError):
        build_grid(INTERVAL, 2)


def test_graded_grid_exact_endpoint_distances():
    g = graded_interval_grid(1e-80, 1.05)
    left, right = g.endpoint_distances
    assert left[0] == 1e-80
    assert right[-1] == 1e-80
    np.testing.assert_allclose(g.gaps, g.gaps[::-1])
    assert g.gaps.sum() == pytest.approx(1.0)
    # x itself saturates at 1.0 near the right end; the stored distances do not
    assert np.all(np.diff(g.x) >= 0)
    half = g.size // 2
    assert np.all(np.diff(left[:half]) > 0)
    assert np.all(np.diff(right[half:]) < 0)


def test_graded_grid_validation():
    with pytest.raises(ConfigurationError):
        graded_interval_grid(0.0)
    with pytest.raises(ConfigurationError):
        graded_interval_grid(1e-3, ratio=0.9)


def test_boundary_quadrature():
    assert sum(w for _, w in boundary_quadrature(INTERVAL)) == 2.0
    assert sum(w for _, w in boundary_quadrature(DISK, 12)) == pytest.approx(2 * math.pi)
    g = build_grid(DISK, 8, 8)
    assert len(grid_boundary_points(g)) == 8
    with pytest.raises(ConfigurationError):
        boundary_quadrature(DISK, 0)
