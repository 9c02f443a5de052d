import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cases import TOL, disk_zero, uniform_zero
from hopflab.geometry import DISK, INTERVAL, BoundaryPoint, ConfigurationError, build_grid
from hopflab.potential import Constant, PowerLaw, Zero, default_ladder
from hopflab.solver import (
    SolverError,
    SourceField,
    boundary_flux,
    conjugate_gradient,
    energy,
    majorant,
    named_source,
    resolving_interval_grid,
    solve_limit,
    solve_truncated,
    stiffness,
    system_matrix,
)


def test_torsion_midpoint():
    L = uniform_zero()
    g = L.grid
    i = int(np.argmin(np.abs(g.x - 0.5)))
    assert L.u[i] == pytest.approx(0.125, abs=1e-12)
    assert boundary_flux(L.final, BoundaryPoint(INTERVAL, 0.0)) == pytest.approx(0.5, abs=1e-12)


def test_disk_torsion_profile():
    L = disk_zero()
    g = L.grid
    u = L.u.reshape(g.shape)
    exact = (1 - g.r**2) / 4
    assert np.max(np.abs(u - exact[:, None])) < 1e-4
    # rotational symmetry
    assert np.ptp(u, axis=1).max() < 1e-12


@pytest.mark.parametrize("domain,res", [(INTERVAL, 50), (DISK, 12)])
def test_system_is_symmetric_m_matrix(domain, res):
    grid = build_grid(domain, res, 8) if domain is DISK else build_grid(domain, res)
    A = system_matrix(grid, np.ones(grid.size)).toarray()
    np.testing.assert_allclose(A, A.T, atol=1e-13)
    off = A - np.diag(np.diag(A))
    assert np.all(off <= 0)
    # weak diagonal dominance, strict on boundary-adjacent rows
    assert np.all(np.diag(A) + off.sum(axis=1) >= -1e-12)


def test_stiffness_coupling_matches_row_defect():
    grid = build_grid(INTERVAL, 20)
    S, coupling = stiffness(grid)
    np.testing.assert_allclose(np.asarray(S.sum(axis=1)).ravel(), coupling, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.0, 5.0), min_size=5, max_size=5), st.floats(0.0, 50.0))
def test_weak_maximum_principle(coeffs, c):
    grid = build_grid(INTERVAL, 60)
    x = grid.x
    f = sum(a * np.cos(j * x) ** 2 for j, a in enumerate(coeffs))
    res = solve_truncated(grid, Constant(c), None, SourceField(grid, f, name="poly"), TOL)
    assert res.u.min() >= -1e-12


def test_comparison_in_potential_and_source():
    grid = resolving_interval_grid(PowerLaw(1.0, 1.5), 1e6)
    f = named_source(grid, "one")
    lo = solve_truncated(grid, PowerLaw(1.0, 1.5), 1e6, f, TOL).u
    hi = solve_truncated(grid, PowerLaw(2.0, 1.5), 1e6, f, TOL).u
    assert np.all(hi <= lo + 1e-12)
    bigger = solve_truncated(grid, PowerLaw(1.0, 1.5), 1e6, f.scaled(1.5), TOL).u
    assert np.all(bigger >= lo - 1e-12)


def test_monotone_ladder_and_majorant():
    V = PowerLaw(1.0, 2.0)
    grid = resolving_interval_grid(V, 1e12)
    f = named_source(grid, "sin")
    L = solve_limit(grid, V, default_ladder(10, 4, 18), f, TOL, early_stop=False, keep=None)
    for prev, cur in zip(L.levels, L.levels[1:]):
        assert np.all(cur.u <= prev.u + 1e-12)
    assert L.monotone_violation <= 1e-12
    assert L.min_value >= -1e-12
    w = majorant(grid, f, TOL).u
    assert np.all(L.levels[0].u <= w + 1e-12)


def test_absorption_bounded_by_source_mass():
    V = PowerLaw(1.0, 2.5)
    grid = resolving_interval_grid(V, 1e8)
    f = named_source(grid, "one")
    L = solve_limit(grid, V, default_ladder(10, 10, 7), f, TOL, early_stop=False)
    assert np.all(L.absorption <= f.l1 + 1e-8)
    assert np.all(np.diff(L.absorption) >= -1e-10)


def test_signed_source_is_linear_combination():
    grid = build_grid(INTERVAL, 200)
    f = SourceField(grid, np.cos(3 * grid.x), name="cos")
    fp, fm = f.split()
    u = solve_truncated(grid, Constant(2.0), None, f, TOL).u
    up = solve_truncated(grid, Constant(2.0), None, fp, TOL).u
    um = solve_truncated(grid, Constant(2.0), None, fm, TOL).u
    np.testing.assert_allclose(u, up - um, atol=1e-13)


def test_solution_minimizes_energy():
    grid = build_grid(INTERVAL, 100)
    f = named_source(grid, "x")
    V = Constant(3.0)
    u = solve_truncated(grid, V, None, f, 1e-13).u
    e0 = energy(grid, V, u, f)
    rng = np.random.default_rng(0)
    for _ in range(5):
        z = rng.standard_normal(grid.size) * 1e-3
        assert energy(grid, V, u + z, f) > e0


def test_constant_potential_closed_form():
    grid = build_grid(INTERVAL, 2000)
    res = solve_truncated(grid, Constant(5.0), None, named_source(grid, "one"), TOL)
    s = math.sqrt(5.0)
    exact = (1 - np.cosh(s * (grid.x - 0.5)) / math.cosh(s / 2)) / 5
    assert np.max(np.abs(res.u - exact)) < 1e-7


def test_dirichlet_data():
    grid = build_grid(INTERVAL, 100)
    zero = SourceField(grid, np.zeros(grid.size), name="zero")
    res = solve_truncated(grid, Zero(), None, zero, TOL, boundary=np.array([1.0, 3.0]))
    np.testing.assert_allclose(res.u, 1.0 + 2.0 * grid.x, atol=1e-10)


def test_unreachable_tolerance_is_numerical_failure():
    grid = build_grid(INTERVAL, 100)
    with pytest.raises(SolverError):
        solve_truncated(grid, Zero(), None, named_source(grid, "one"), 1e-30)


def test_cg_without_preconditioner():
    grid = build_grid(DISK, 10, 8)
    A = system_matrix(grid, np.zeros(grid.size))
    b = grid.weights.copy()
    x, info = conjugate_gradient(A, b, tol=1e-12)
    assert info.residual <= 1e-12
    np.testing.assert_allclose(A @ x, b, atol=1e-10)


def test_invalid_inputs():
    grid = build_grid(INTERVAL, 10)
    f = named_source(grid, "one")
    with pytest.raises(ConfigurationError):
        solve_truncated(grid, Zero(), 0.0, f)
    with pytest.raises(ConfigurationError):
        solve_truncated(grid, Zero(), None, f, preconditioner="ilu")
    with pytest.raises(ConfigurationError):
        named_source(grid, "triangle")
