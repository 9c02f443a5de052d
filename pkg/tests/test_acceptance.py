"""End-to-end acceptance checks.

Each test records one PASS/FAIL line (shown in the terminal summary) and
then asserts, so a failing criterion fails its test as well.
"""

import csv
import io
import json
import math
import time

import numpy as np

from cases import (
    A0,
    A1,
    K_FINAL,
    POTENTIALS,
    SOURCES,
    TOL,
    disk_points,
    disk_zero,
    interval_duality,
    interval_grid,
    interval_limit,
    report,
)
from hopflab.boundary import classify_zero, pointwise_normal_derivative, sample_disk, zero_threshold
from hopflab.cli import main, read_csv_body
from hopflab.geometry import DISK, INTERVAL, BoundaryPoint, build_grid
from hopflab.oracle import ode_solve, problem_for
from hopflab.potential import PowerLaw, Zero, ladder_to
from hopflab.singular import BoundaryMeasure, ancona_integral, duality_identity_check, measure_bvp
from hopflab.solver import majorant, named_source, resolving_interval_grid, solve_limit, source_function


def _oracle(V, src="one", probes=()):
    return ode_solve(problem_for(V, "interval", source_function(src)), probes)


def _run_cli(tmp_path, command, cfg, out):
    path = tmp_path / f"{out}.json"
    path.write_text(json.dumps(cfg))
    t0 = time.perf_counter()
    code = main([command, "--config", str(path), "--out", str(tmp_path / out)])
    return code, time.perf_counter() - t0


def test_criterion_01_torsion():
    t0 = time.perf_counter()
    grid = build_grid(INTERVAL, 1000)
    L = solve_limit(grid, Zero(), ladder_to(1e3), named_source(grid, "one"), TOL)
    mid = float(np.interp(0.5, grid.x, L.u))
    g = [pointwise_normal_derivative(L, a).g for a in (A0, A1)]
    dgrid = build_grid(DISK, 100, 64)
    D = solve_limit(dgrid, Zero(), ladder_to(1e3), named_source(dgrid, "one"), TOL)
    gd = np.array([pointwise_normal_derivative(D, a).g for a in disk_points(16)])
    elapsed = time.perf_counter() - t0
    err_i = max(abs(mid - 0.125), *(abs(x - 0.5) for x in g))
    err_d = float(np.max(np.abs(gd - 0.5)))
    ok = err_i <= 1e-4 and err_d <= 1e-3 and elapsed < 10
    assert report(1, ok, f"interval err {err_i:.2e}, disk err {err_d:.2e}, {elapsed:.2f}s")


def test_criterion_02_hopf_scan(tmp_path):
    cfg = {"domain": "interval", "scan": {"alpha": [1, 1.5, 1.9, 2, 2.5], "C": [1], "extra": [{"alpha": 2, "C": 4}]}}
    code, elapsed = _run_cli(tmp_path, "hopf-scan", cfg, "scan")
    table = list(csv.DictReader(io.StringIO(read_csv_body(tmp_path / "scan" / "hopf_scan.csv"))))
    worst, bad = 0.0, []
    for row in table:
        alpha, C = float(row["alpha"]), float(row["C"])
        positive = row["hopf_positive"] == "true"
        if alpha <= 1.9:
            ref = _oracle(PowerLaw(C, alpha)).derivative[float(row["a"])]
            rel = abs(float(row["g"]) - ref) / ref
            worst = max(worst, rel)
            if not (positive and float(row["g"]) > 0 and rel <= 1e-3):
                bad.append((alpha, C, row["a"]))
        elif positive:
            bad.append((alpha, C, row["a"]))
    ok = code == 0 and len(table) == 12 and not bad and elapsed < 120
    assert report(2, ok, f"max rel err vs oracle {worst:.2e}, misclassified {bad}, {elapsed:.1f}s")


def test_criterion_03_dichotomy():
    names = ("zero", "const5", "a1", "a1.5", "a2", "a2C4")
    bad = []
    for name in names:
        outside = interval_duality(name, 0.0).verdict == "not_in_Sigma"
        pos = []
        for src in SOURCES:
            L = interval_limit(name, src)
            pw = pointwise_normal_derivative(L, A0)
            pos.append(not classify_zero(pw, zero_threshold(named_source(L.grid, src), TOL)))
        if len(set(pos)) != 1 or pos[0] != outside:
            bad.append((name, outside, pos))
    assert report(3, not bad, f"{len(names)} potentials x {len(SOURCES)} sources, mismatches {bad}")


def test_criterion_04_ancona():
    exact = 2 * (math.atanh(1 / math.sqrt(2)) - 1 / math.sqrt(2)) + math.sqrt(2)
    finite = ancona_integral(INTERVAL, PowerLaw(1.0, 1.5), A0)
    div_i = ancona_integral(INTERVAL, PowerLaw(1.0, 2.0), A0).infinite
    div_d = ancona_integral(DISK, PowerLaw(1.0, 2.0), BoundaryPoint(DISK, 0.0)).infinite
    err = abs(finite.value - exact)
    disagree = []
    for name in ("a1", "a1.5", "a1.9", "a2", "a2C4"):
        outside = interval_duality(name, 0.0).verdict == "not_in_Sigma"
        if outside == ancona_integral(INTERVAL, POTENTIALS[name], A0).infinite:
            disagree.append(name)
    ok = div_i and div_d and not finite.infinite and err <= 1e-6 and not disagree
    assert report(4, ok, f"alpha=2 flagged (interval {div_i}, disk {div_d}); alpha=1.5 err {err:.1e}; "
                         f"verdict disagreements {disagree}")


def test_criterion_05_duality():
    worst = 0.0
    for name in ("zero", "a1", "a1.5"):
        for a in (A0, A1):
            P = interval_duality(name, a.coordinate)
            sources = [named_source(P.grid, s) for s in SOURCES]
            g = [pointwise_normal_derivative(interval_limit(name, s), a).g for s in SOURCES]
            worst = max(worst, duality_identity_check(P, sources, g))
    assert report(5, worst <= 1e-3, f"max |<P_a, f> - g(a)| = {worst:.2e}")


# potentials ordered pointwise (on d <= 1/2) along each chain
ORDER_CHAINS = (("zero", "a1", "a1.5", "a1.9", "a2", "a2C4"), ("zero", "const5"), ("a2", "a2.5"))


def test_criterion_06_order():
    slack = 10 * TOL
    grid = interval_grid("a2C4")
    cut = ladder_to(K_FINAL)
    worst = {"max principle": -math.inf, "monotone ladder": -math.inf, "comparison": -math.inf,
             "majorant": -math.inf}
    for src in SOURCES:
        f = named_source(grid, src)
        w = majorant(grid, f, TOL).u
        sols = {name: solve_limit(grid, V, cut, f, TOL, early_stop=False, keep=None)
                for name, V in POTENTIALS.items()}
        for L in sols.values():
            worst["max principle"] = max(worst["max principle"], -L.min_value)
            worst["monotone ladder"] = max(worst["monotone ladder"], L.monotone_violation)
            worst["majorant"] = max(worst["majorant"], float(np.max(L.levels[0].u - w)))
        for chain in ORDER_CHAINS:
            for weak, strong in zip(chain, chain[1:]):
                for lo, hi in zip(sols[weak].levels, sols[strong].levels):
                    worst["comparison"] = max(worst["comparison"], float(np.max(hi.u - lo.u)))
    ok = all(v <= slack for v in worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert report(6, ok, f"{len(POTENTIALS)} potentials x {len(SOURCES)} sources: {detail} (slack {slack:.0e})")


def test_criterion_07_absorption():
    worst = -math.inf
    for name in POTENTIALS:
        for src in SOURCES:
            L = interval_limit(name, src)
            mass = named_source(L.grid, src).l1
            worst = max(worst, float(np.max(L.absorption)) - mass)
    assert report(7, worst <= 1e-8, f"max over solves of int V_k|u_k| - int|f| = {worst:.2e}")


def test_criterion_08_measure_defect():
    V = PowerLaw(4.0, 2.0, "left")
    grid = resolving_interval_grid(V, K_FINAL)
    lad = ladder_to(K_FINAL)
    both = measure_bvp(grid, V, lad, BoundaryMeasure(INTERVAL, ((A0, 0.5), (A1, 0.5))), TOL)
    right = measure_bvp(grid, V, lad, BoundaryMeasure(INTERVAL, ((A1, 1.0),)), TOL)
    d0 = both.defect.mass_at(A0)
    d1 = right.defect.total_mass
    ok = abs(d0 - 0.5) <= 0.02 and d1 <= 1e-3
    assert report(8, ok, f"defect at 0 = {d0:.6f}, defect of delta_1 = {d1:.2e}")


def _compare(fd, orc):
    err = abs(fd - orc)
    tol = max(1e-3 * abs(orc), 1e-6)
    return err <= tol, err / tol


def test_criterion_09_oracle():
    probes = [0.1, 0.25, 0.5, 0.75, 0.9]
    results = []
    for name in POTENTIALS:
        for src in SOURCES:
            L = interval_limit(name, src)
            ref = _oracle(POTENTIALS[name], src, probes)
            results += [_compare(float(np.interp(p, L.grid.x, L.u)), r) for p, r in zip(probes, ref.values)]
            results += [_compare(pointwise_normal_derivative(L, a).g, ref.derivative[a.coordinate])
                        for a in (A0, A1)]
    D = disk_zero()
    radii = [0.0, 0.25, 0.5, 0.75, 0.9]
    ref = ode_solve(problem_for(Zero(), "disk", lambda r: np.ones_like(r)), radii)
    U = D.u.reshape(D.grid.shape)
    for r, u_ref in zip(radii, ref.values):
        fd = float(U[0].mean()) if r < D.grid.r[0] else float(sample_disk(D.grid, D.u, r, 0.0))
        results.append(_compare(fd, u_ref))
    results += [_compare(pointwise_normal_derivative(D, a).g, ref.derivative[1.0]) for a in disk_points(16)]
    fails = sum(not ok for ok, _ in results)
    worst = max(x for _, x in results)
    assert report(9, fails == 0, f"{len(results)} comparisons, {fails} out of tolerance, "
                                 f"worst error/tolerance {worst:.2f}")


def test_criterion_10_ladder_independence():
    V = PowerLaw(1.0, 1.5)
    grid = resolving_interval_grid(V, 1e5)
    f = named_source(grid, "one")
    g = [pointwise_normal_derivative(solve_limit(grid, V, ladder_to(1e5, r), f, TOL, early_stop=False), A0).g
         for r in (2.0, 4.0)]
    diff = abs(g[0] - g[1])
    assert report(10, diff <= 1e-4, f"g(0) ratio 2 = {g[0]:.10f}, ratio 4 = {g[1]:.10f}, diff {diff:.2e}")


def test_criterion_11_determinism(tmp_path):
    cfg = {"domain": "interval", "potential": {"kind": "powerlaw", "C": 1, "alpha": 1.5}, "source": "sin",
           "perturbation": 1e-8, "seed": 3}
    bodies = []
    for run in ("first", "second"):
        code, _ = _run_cli(tmp_path, "solve", cfg, run)
        bodies.append(read_csv_body(tmp_path / run / "solution.csv") if code == 0 else None)
    ok = bodies[0] is not None and bodies[0] == bodies[1]
    assert report(11, ok, f"solution.csv bodies identical: {ok} ({len(bodies[0] or '')} bytes)")

