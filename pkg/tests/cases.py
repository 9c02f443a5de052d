"""Shared, cached test cases (ladders on the graded grids are reused across modules)."""

import functools
import math

from hopflab.geometry import DISK, INTERVAL, BoundaryPoint, build_grid
from hopflab.potential import Constant, PowerLaw, Zero, ladder_to
from hopflab.singular import duality_solution
from hopflab.solver import named_source, resolving_interval_grid, solve_limit, torsion_function

K_FINAL = 1e120
TOL = 1e-10

A0 = BoundaryPoint(INTERVAL, 0.0)
A1 = BoundaryPoint(INTERVAL, 1.0)

# name -> potential for the Hopf dichotomy matrix and the threshold scan
POTENTIALS = {
    "zero": Zero(),
    "const5": Constant(5.0),
    "a1": PowerLaw(1.0, 1.0),
    "a1.5": PowerLaw(1.0, 1.5),
    "a1.9": PowerLaw(1.0, 1.9),
    "a2": PowerLaw(1.0, 2.0),
    "a2C4": PowerLaw(4.0, 2.0),
    "a2.5": PowerLaw(1.0, 2.5),
}
SOURCES = ("one", "x", "sin")


@functools.lru_cache(maxsize=None)
def interval_grid(name):
    return resolving_interval_grid(POTENTIALS[name], K_FINAL)


@functools.lru_cache(maxsize=None)
def interval_limit(name, source="one"):
    grid = interval_grid(name)
    V = POTENTIALS[name]
    return solve_limit(grid, V, ladder_to(K_FINAL), named_source(grid, source), TOL)


@functools.lru_cache(maxsize=None)
def interval_torsion(name):
    return torsion_function(interval_grid(name), TOL)


@functools.lru_cache(maxsize=None)
def interval_duality(name, end=0.0):
    a = BoundaryPoint(INTERVAL, end)
    return duality_solution(interval_grid(name), POTENTIALS[name], ladder_to(K_FINAL), a, TOL,
                            interval_torsion(name))


@functools.lru_cache(maxsize=None)
def uniform_zero():
    grid = build_grid(INTERVAL, 1000)
    return solve_limit(grid, Zero(), ladder_to(1e3), named_source(grid, "one"), TOL)


@functools.lru_cache(maxsize=None)
def disk_zero():
    grid = build_grid(DISK, 100, 64)
    return solve_limit(grid, Zero(), ladder_to(1e3), named_source(grid, "one"), TOL)


def disk_points(m=16):
    return [BoundaryPoint(DISK, 2 * math.pi * j / m) for j in range(m)]


# criterion number -> "criterion N: PASS|FAIL ..." line, filled by test_acceptance
VERDICTS = {}


def report(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[number] = line
    print(line)
    return ok
