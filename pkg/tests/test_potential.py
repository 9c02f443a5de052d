import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hopflab.geometry import DISK, INTERVAL, BoundaryPoint, ConfigurationError, build_grid, graded_interval_grid
from hopflab.potential import (
    Constant,
    PowerLaw,
    SingularEvaluationError,
    Tabulated,
    TruncationLadder,
    Zero,
    default_ladder,
    ladder_to,
    potential_from_config,
    required_min_spacing,
    truncate,
)


def test_power_law_values():
    V = PowerLaw(2.0, 1.5)
    assert V(INTERVAL, 0.25) == pytest.approx(2.0 * 0.25**-1.5)
    assert V(INTERVAL, 0.75) == pytest.approx(2.0 * 0.25**-1.5)
    assert V(DISK, np.array([0.5, 0.0])) == pytest.approx(2.0 * 0.5**-1.5)


def test_power_law_singular_on_boundary():
    with pytest.raises(SingularEvaluationError):
        PowerLaw(1.0, 2.0)(INTERVAL, 0.0)


def test_anchor_restricts_blow_up():
    V = PowerLaw(4.0, 2.0, "left")
    assert V(INTERVAL, 0.999) == pytest.approx(4.0 / 0.999**2)
    assert V.local_exponent(INTERVAL, BoundaryPoint(INTERVAL, 1.0)) == 0.0
    assert V.local_exponent(INTERVAL, BoundaryPoint(INTERVAL, 0.0)) == 2.0


def test_graded_grid_uses_exact_distances():
    g = graded_interval_grid(1e-60, 1.05)
    v = PowerLaw(1.0, 2.0).on_grid(g)
    assert v[0] == pytest.approx(1e120)
    assert v[-1] == pytest.approx(1e120)


def test_truncation():
    V = truncate(PowerLaw(1.0, 1.0), 10.0)
    assert V(INTERVAL, 0.01) == 10.0
    assert V(INTERVAL, 0.5) == pytest.approx(2.0)
    assert V.upper_bound() == 10.0
    with pytest.raises(ConfigurationError):
        truncate(Zero(), 0.0)


@given(st.floats(1e-6, 0.5), st.floats(0.1, 1e6))
def test_truncation_is_min(x, k):
    V = PowerLaw(1.0, 1.7)
    assert truncate(V, k)(INTERVAL, x) == pytest.approx(min(V(INTERVAL, x), k))


def test_quadratic_bound():
    assert PowerLaw(3.0, 1.5).quadratic_bound() == 3.0
    assert PowerLaw(1.0, 2.5).quadratic_bound() is None
    assert Constant(4.0).quadratic_bound() == 1.0
    assert Zero().quadratic_bound() == 0.0


def test_tabulated():
    g = build_grid(DISK, 8, 8)
    T = Tabulated(g, np.arange(g.size, dtype=float))
    np.testing.assert_array_equal(T.on_grid(g), np.arange(g.size))
    assert T(DISK, g.points[5:6])[0] == 5.0
    with pytest.raises(ConfigurationError):
        Tabulated(g, -np.ones(g.size))


def test_ladders():
    lad = default_ladder(10, 4, 3)
    assert lad.levels == (10.0, 40.0, 160.0, 640.0)
    assert lad.ratio == pytest.approx(4.0)
    lad = ladder_to(1e5, 2.0)
    assert lad.levels[-1] == pytest.approx(1e5)
    assert lad.ratio == pytest.approx(2.0)
    with pytest.raises(ConfigurationError):
        TruncationLadder((5.0, 1.0))
    with pytest.raises(ConfigurationError):
        default_ladder(J=0)


def test_config():
    V = potential_from_config({"kind": "powerlaw", "C": 4, "alpha": 2, "anchor": "left"})
    assert V == PowerLaw(4.0, 2.0, "left")
    assert potential_from_config({"kind": "constant", "c": 5}) == Constant(5.0)
    with pytest.raises(ConfigurationError):
        potential_from_config({"kind": "wiggly"})
    with pytest.raises(ConfigurationError):
        potential_from_config({"C": 1})


def test_required_min_spacing():
    assert required_min_spacing(PowerLaw(1.0, 2.0), 1e120) == pytest.approx(1e-60)
    assert required_min_spacing(Constant(3.0), 1e9) == 1.0
    assert math.isinf(PowerLaw(1.0, 1.0).upper_bound())
