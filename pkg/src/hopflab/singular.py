"""Dirac boundary data, duality solutions and the exceptional set.

For a boundary point a the duality solution P_a is the decreasing limit of
the solutions v_k of -Δv + V_k v = 0 with boundary trace δ_a.  Points where
P_a vanishes form the exceptional set Σ; there the Hopf lemma fails.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .boundary import (
    PointwiseResult,
    _gauss,
    _panels,
    _shell_tail,
    extrapolate_ladder,
    truncation_exponent,
)
from .geometry import DISK, BoundaryPoint, ConfigurationError, DomainError, DomainGeometry, DomainKind, Grid
from .potential import Constant, Potential, PowerLaw, TruncationLadder, Zero
from .solver import (
    LimitSolution,
    SolveResult,
    SourceField,
    boundary_flux,
    disk_fluxes,
    solve_limit,
    solve_truncated,
    torsion_function,
)

log = logging.getLogger(__name__)

MASS_DECREASE_TOL = 1e-3
EXTINCT = 1e-12


class GridBugError(RuntimeError):
    """Torsion flux is not positive: the discretization is broken."""


# ---------------------------------------------------------------------------
# boundary measures


@dataclass(frozen=True)
class BoundaryMeasure:
    """Nonnegative measure on the boundary: point masses plus an optional density (disk only)."""

    domain: DomainGeometry
    atoms: tuple[tuple[BoundaryPoint, float], ...] = ()
    density: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    density_bound: float | None = None

    def __post_init__(self):
        atoms = tuple((a, float(m)) for a, m in self.atoms)
        for a, m in atoms:
            if a.domain != self.domain:
                raise DomainError("atom lies on another domain")
            if m < 0 or not math.isfinite(m):
                raise ConfigurationError("atom masses must be finite and nonnegative")
        if self.density is not None and self.domain.kind is DomainKind.INTERVAL:
            raise ConfigurationError("the interval boundary carries atoms only")
        object.__setattr__(self, "atoms", atoms)

    def density_mass(self, n: int = 4096) -> float:
        if self.density is None:
            return 0.0
        phi = (np.arange(n) + 0.5) * (2 * math.pi / n)
        return float(np.sum(self.density(phi)) * 2 * math.pi / n)

    @property
    def total_mass(self) -> float:
        return sum(m for _, m in self.atoms) + self.density_mass()

    def mass_at(self, a: BoundaryPoint) -> float:
        return sum(m for b, m in self.atoms if b == a)


# ---------------------------------------------------------------------------
# Dirac problems


def dirac_node(grid: Grid, a: BoundaryPoint) -> tuple[BoundaryPoint, int, float]:
    """Boundary node nearest to ``a``: (the node, its index, its quadrature weight)."""
    if grid.is_interval:
        return a, 0 if a.coordinate == 0.0 else 1, 1.0
    m = int(round(a.coordinate / grid.dphi)) % grid.n_angles
    return BoundaryPoint(grid.domain, float(grid.phi[m])), m, grid.dphi


def dirac_data(grid: Grid, a: BoundaryPoint, mass: float = 1.0) -> np.ndarray:
    node, idx, w = dirac_node(grid, a)
    data = np.zeros(2 if grid.is_interval else grid.n_angles)
    data[idx] = mass / w
    return data


def _zero_source(grid: Grid) -> SourceField:
    return SourceField(grid, np.zeros(grid.size), (0.0, 0.0), "zero")


def solve_dirac_bvp_truncated(grid: Grid, V: Potential, k: float, a: BoundaryPoint, tol: float = 1e-10) -> SolveResult:
    """-Δv + min(V, k) v = 0 with unit point mass at the boundary node nearest ``a``."""
    if not k > 0:
        raise ConfigurationError("cutoff must be positive")
    return solve_truncated(grid, V, k, _zero_source(grid), tol, boundary=dirac_data(grid, a))


# ---------------------------------------------------------------------------
# duality solutions


@dataclass(frozen=True, eq=False)
class DualitySolution:
    point: BoundaryPoint
    node: BoundaryPoint
    limit: LimitSolution = field(repr=False)
    masses: np.ndarray
    alpha_hat: float
    verdict: str
    threshold: float
    decreasing: bool

    @property
    def P(self) -> np.ndarray:
        return self.limit.u

    @property
    def grid(self) -> Grid:
        return self.limit.grid

    @property
    def mass(self) -> float:
        return float(self.masses[-1])

    @property
    def cutoffs(self) -> list[float]:
        return self.limit.cutoffs


def _decreasing(seq: np.ndarray) -> bool:
    scale = max(abs(seq[0]), np.finfo(float).tiny)
    if abs(seq[-1]) <= EXTINCT * scale:
        return True
    return bool(seq.size >= 2 and seq[-1] < seq[-2] * (1 - MASS_DECREASE_TOL))


def torsion_slope(theta: SolveResult, node: BoundaryPoint) -> float:
    """∂θ/∂n at a boundary node, with the same discrete flux as the Dirac coupling."""
    grid = theta.grid
    if grid.is_interval:
        s = boundary_flux(theta, node)
    else:
        m = int(round(node.coordinate / grid.dphi)) % grid.n_angles
        s = float(disk_fluxes(theta)[m])
    if not s > 0:
        raise GridBugError(f"torsion flux {s} at {node.label()} is not positive")
    return s


def defect_mass(P: LimitSolution, theta: SolveResult, V: Potential, node: BoundaryPoint,
                kstar: float | None = None) -> float:
    """α̂ = 1 - ∫P (1 + V_{k*} θ) / ∂θ/∂n(a) with the final-level P and a lagged cutoff k*.

    At k* equal to the final cutoff the ratio is 1 exactly (discrete Green
    identity), so the lag measures the absorption carried by the region where
    V exceeds k*, which is the mass escaping to the boundary.  The default
    k* is the middle rung of the solved ladder.
    """
    grid = P.grid
    if kstar is None:
        kstar = P.cutoffs[P.n_levels // 2]
    v = np.minimum(V.on_grid(grid), kstar)
    bv = (0.0, 0.0)
    if grid.is_interval:
        bv = tuple(float(b) for b in P.final.boundary_data)
    lhs = grid.integrate(P.u * (1.0 + v * theta.u), bv)
    return 1.0 - lhs / torsion_slope(theta, node)


def extrapolated_defect(P: LimitSolution, theta: SolveResult, V: Potential, node: BoundaryPoint) -> float:
    """Lagged defect at the three rungs below the ladder midpoint, extrapolated in k*.

    Away from Σ the lagged estimate decays like k*^-p with the same rate as
    the truncated fluxes, so the same extrapolation applies.
    """
    mid = P.n_levels // 2
    if mid < 2:
        return defect_mass(P, theta, V, node)
    ks = np.array(P.cutoffs[mid - 2: mid + 1], dtype=float)
    vals = np.array([defect_mass(P, theta, V, node, k) for k in ks])
    p = truncation_exponent(V, P.grid.domain, node)
    return extrapolate_ladder(ks, vals, p)[0] if p and p > 0 else float(vals[-1])


def mass_threshold(theta_slope: float, tol: float = 1e-10) -> float:
    """Zero threshold for duality masses, scaled by the mass of the V = 0 problem."""
    return max(10.0 * tol, 1e-3 * theta_slope)


def duality_solution(grid: Grid, V: Potential, ladder: TruncationLadder, a: BoundaryPoint, tol: float = 1e-10,
                     theta: SolveResult | None = None, early_stop: bool = True) -> DualitySolution:
    """P_a as the monotone limit over ``ladder``, with its defect and Σ verdict.

    Verdict in_Sigma: final mass below the zero threshold and still
    decreasing (or extinct).  A small mass that has stopped decreasing is
    reported not_in_Sigma with a warning; a non-monotone mass trace is
    reported uncertain.
    """
    node, _, _ = dirac_node(grid, a)
    L = solve_limit(grid, V, ladder, _zero_source(grid), tol, early_stop=early_stop, boundary=dirac_data(grid, a))
    theta = theta or torsion_function(grid, tol)
    slope = torsion_slope(theta, node)
    masses = L.integrals
    thr = mass_threshold(slope, tol)
    dec = _decreasing(masses)
    alpha = extrapolated_defect(L, theta, V, node)
    monotone = bool(np.all(np.diff(masses) <= 10 * tol * max(1.0, masses[0])))
    if not monotone:
        verdict = "uncertain"
    elif masses[-1] <= thr and dec:
        verdict = "in_Sigma"
    else:
        verdict = "not_in_Sigma"
        if masses[-1] <= thr:
            log.warning("duality mass at %s is small (%.3e) but has stopped decreasing", a.label(), masses[-1])
    return DualitySolution(a, node, L, masses, alpha, verdict, thr, dec)


def duality_pairing(P: DualitySolution, f: SourceField) -> PointwiseResult:
    """∫ P_a f over the retained ladder levels, extrapolated like the fluxes."""
    grid = P.grid
    vals = []
    for lev in P.limit.levels:
        bv = (0.0, 0.0)
        if grid.is_interval:
            bv = (lev.boundary_data[0] * f.boundary_values[0], lev.boundary_data[1] * f.boundary_values[1])
        vals.append(grid.integrate(lev.u * f.values, bv))
    vals = np.array(vals)
    cut = np.array(P.cutoffs[-vals.size:], dtype=float)
    p = truncation_exponent(P.limit.potential, grid.domain, P.point)
    g, method = extrapolate_ladder(cut, vals, p)
    return PointwiseResult(cut, vals, g, method, True, _decreasing(vals), False)


def duality_identity_check(P: DualitySolution, sources: Sequence[SourceField], g_values: Sequence[float]) -> float:
    """max over the suite of |∫ P_a f - g(a)|."""
    if len(sources) != len(g_values):
        raise ValueError("one g value per source")
    return max(abs(duality_pairing(P, f).g - g) for f, g in zip(sources, g_values))


def apriori_bound(P: DualitySolution, theta: SolveResult, V: Potential) -> tuple[float, float]:
    """(∫P + ∫V_k P d, C) with C = max ∂θ/∂n / min(1, C1), C1 = min θ/d."""
    grid = P.grid
    d = grid.distances
    v = np.minimum(V.on_grid(grid), P.cutoffs[-1])
    lhs = float(np.dot(grid.weights, P.P) + np.dot(grid.weights, v * P.P * d))
    if grid.is_interval:
        lhs += 0.5 * (grid.gaps[0] * P.limit.final.boundary_data[0] + grid.gaps[-1] * P.limit.final.boundary_data[1])
        slopes = [boundary_flux(theta, BoundaryPoint(grid.domain, t)) for t in (0.0, 1.0)]
    else:
        slopes = disk_fluxes(theta)
    c1 = float(np.min(theta.u / d))
    return lhs, float(np.max(slopes)) / min(1.0, c1)


# ---------------------------------------------------------------------------
# Ancona criterion


@dataclass
class AnconaResult:
    value: float
    infinite: bool
    shells: np.ndarray = field(repr=False, default=None)


def ancona_integral(domain: DomainGeometry, V: Potential, a: BoundaryPoint, tol: float = 1e-10,
                    depth: float | None = None) -> AnconaResult:
    """∫ d(y)^2 / |y - a|^N V(y) dy by Gauss panels graded toward the boundary.

    The integral is infinite when the shell contributions stop decaying
    geometrically or the partial sums exceed 1/tol.
    """
    if depth is None:
        depth = 1e-100 if domain.kind is DomainKind.INTERVAL else 1e-24
    if domain.kind is DomainKind.INTERVAL:
        return _ancona_interval(V, a, tol, depth)
    return _ancona_disk(V, a, tol, depth)


def _ancona_interval(V, a, tol, depth):
    total = 0.0
    infinite = False
    all_shells = []
    for side in ("left", "right"):
        near = (side == "left") == (a.coordinate == 0.0)
        shells = []
        for lo, hi in _panels(0.0, 0.5, depth):
            s, w = _gauss(lo, hi)
            # s is the distance to the endpoint on this side, so d = s on [0, 1/2]
            dist_a = s if near else 1.0 - s
            v = V.from_endpoint_distances(s, 1.0 - s) if side == "left" else V.from_endpoint_distances(1.0 - s, s)
            shells.append(float(np.dot(w, s * s / dist_a * v)))
        shells = np.array(shells)
        tail, div = _shell_tail(shells)
        infinite |= div
        total += float(shells.sum()) + (0.0 if div else tail)
        all_shells.append(shells)
    infinite |= total > 1.0 / tol
    return AnconaResult(math.inf if infinite else total, infinite, np.concatenate(all_shells))


def _ancona_disk(V, a, tol, depth):
    # coordinates s = 1 - r and t = angle from a, so that precision survives s << 1e-16
    radial = V.at_distance(np.array([0.5])) is not None
    shells = []
    for lo, hi in _panels(0.0, 1.0, depth):
        s, ws = _gauss(lo, hi)
        v_s = V.at_distance(s) if radial else None
        shell = 0.0
        for sign in (1.0, -1.0):
            for plo, phi_hi in _panels(0.0, math.pi, 0.125 * lo):
                t, wt = _gauss(plo, phi_hi)
                S, T = np.meshgrid(s, t, indexing="ij")
                dist2 = S * S + 4.0 * (1.0 - S) * np.sin(0.5 * T) ** 2
                if radial:
                    v = np.broadcast_to(v_s[:, None], S.shape)
                else:
                    phi = a.coordinate + sign * T
                    v = V(DISK, np.stack([(1 - S) * np.cos(phi), (1 - S) * np.sin(phi)], axis=-1))
                shell += float(np.sum(np.outer(ws, wt) * (1.0 - S) * S * S / dist2 * v))
        shells.append(shell)
    shells = np.array(shells)
    tail, infinite = _shell_tail(shells)
    total = float(shells.sum()) + (0.0 if infinite else tail)
    infinite |= total > 1.0 / tol
    return AnconaResult(math.inf if infinite else total, infinite, shells)


# ---------------------------------------------------------------------------
# Σ classification


@dataclass
class SigmaReport:
    point: BoundaryPoint
    ancona: AnconaResult
    masses: np.ndarray
    alpha_hat: float
    verdict: str
    consistent: bool | None
    authoritative: bool

    def row(self) -> dict:
        return {
            "a": self.point.coordinate,
            "ancona_value_or_inf": "inf" if self.ancona.infinite else self.ancona.value,
            "pa_mass_final": float(self.masses[-1]),
            "alpha_hat": self.alpha_hat,
            "verdict": self.verdict,
            "consistent": "" if self.consistent is None else self.consistent,
        }


def ancona_authoritative(V: Potential) -> bool:
    """The Ancona test decides Σ only when V <= C/d^2 holds structurally."""
    return V.quadratic_bound() is not None


def classify_sigma(domain: DomainGeometry, V: Potential, grid: Grid, ladder: TruncationLadder, a: BoundaryPoint,
                   tol: float = 1e-10, theta: SolveResult | None = None,
                   duality: DualitySolution | None = None) -> SigmaReport:
    if grid.domain != domain:
        raise DomainError("grid and domain disagree")
    P = duality or duality_solution(grid, V, ladder, a, tol, theta)
    anc = ancona_integral(domain, V, a)
    auth = ancona_authoritative(V)
    consistent = None
    if P.verdict != "uncertain":
        consistent = (P.verdict == "not_in_Sigma") == (not anc.infinite)
        if auth and not consistent:
            log.warning("Σ verdict at %s disagrees with the Ancona integral", a.label())
    if not auth:
        consistent = None
    return SigmaReport(a, anc, P.masses, P.alpha_hat, P.verdict, consistent, auth)


# ---------------------------------------------------------------------------
# measure data


@dataclass
class MeasureSolution:
    u: np.ndarray
    defect: BoundaryMeasure
    has_distributional_solution: bool
    duals: list[DualitySolution] = field(repr=False, default_factory=list)


def _is_radial(V: Potential) -> bool:
    return isinstance(V, (Zero, Constant, PowerLaw))


def _density_is_harmless(V: Potential, bound: float | None) -> bool:
    if bound is None:
        return False
    if isinstance(V, (Zero, Constant)):
        return True
    return isinstance(V, PowerLaw) and V.alpha < 2


def measure_bvp(grid: Grid, V: Potential, ladder: TruncationLadder, nu: BoundaryMeasure, tol: float = 1e-10,
                defect_tol: float = 1e-3, theta: SolveResult | None = None) -> MeasureSolution:
    """Limit solution with boundary measure ``nu`` and its defect measure.

    Atoms go through duality solutions (the field is the mass-weighted sum);
    a disk density is solved directly with its nodal values as Dirichlet data.
    The problem has a distributional solution when the defect mass is at most
    ``defect_tol`` times the total mass of ``nu``.
    """
    if nu.domain != grid.domain:
        raise DomainError("measure and grid live on different domains")
    theta = theta or torsion_function(grid, tol)
    u = np.zeros(grid.size)
    atoms = []
    duals = []
    for a, m in nu.atoms:
        if m == 0:
            continue
        P = duality_solution(grid, V, ladder, a, tol, theta)
        duals.append(P)
        u += m * P.P
        atoms.append((a, m * max(P.alpha_hat, 0.0)))
    if nu.density is not None:
        dens = np.asarray(nu.density(grid.phi), dtype=float)
        if np.any(dens < 0):
            raise ConfigurationError("density must be nonnegative")
        L = solve_limit(grid, V, ladder, _zero_source(grid), tol, boundary=dens)
        u += L.u
        if not _density_is_harmless(V, nu.density_bound):
            alphas = {}
            for phi, rho in zip(grid.phi, dens):
                if rho == 0:
                    continue
                key = 0.0 if _is_radial(V) else float(phi)
                if key not in alphas:
                    P = duality_solution(grid, V, ladder, BoundaryPoint(grid.domain, phi), tol, theta)
                    alphas[key] = max(P.alpha_hat, 0.0)
                a_hat = alphas[key]
                if a_hat > 0:
                    atoms.append((BoundaryPoint(grid.domain, phi), rho * grid.dphi * a_hat))
    defect = BoundaryMeasure(grid.domain, tuple(atoms))
    total = nu.total_mass
    ok = defect.total_mass <= defect_tol * max(total, np.finfo(float).tiny)
    return MeasureSolution(u, defect, bool(ok), duals)
