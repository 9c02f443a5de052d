"""Normal derivatives at boundary points.

Three notions are computed for a solution u of the Dirichlet problem:

* the classical quotient u(a + eps n)/eps, extrapolated to eps -> 0;
* the pointwise limit g(a) of the truncated-problem fluxes along the ladder;
* the Poisson integral ∫ K(a, y) (f - V u)(y) dy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import (
    BoundaryPoint,
    DomainError,
    DomainGeometry,
    DomainKind,
    Grid,
)
from .potential import Potential, TruncationLadder, truncate
from .solver import LimitSolution, SourceField, named_source, solve_limit

log = logging.getLogger(__name__)

# fluxes below this fraction of the first-level flux count as extinct
EXTINCT = 1e-12
# relative per-level drop that still counts as "decreasing"
DECREASE_TOL = 1e-3


class KernelSingularityError(DomainError):
    """Green function evaluated at coincident points."""


# ---------------------------------------------------------------------------
# kernels


def green_kernel(domain: DomainGeometry, x, y) -> np.ndarray | float:
    """Green function of -Δ with zero Dirichlet data."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if domain.kind is DomainKind.INTERVAL:
        if np.any(x == y):
            raise KernelSingularityError("G(x, x) is singular")
        out = np.minimum(x, y) * (1.0 - np.maximum(x, y))
        return float(out) if out.ndim == 0 else out
    diff = np.linalg.norm(x - y, axis=-1)
    if np.any(diff == 0):
        raise KernelSingularityError("G(x, x) is singular")
    # |x - y*| |y| = sqrt(|x|^2 |y|^2 - 2 x.y + 1), finite as y -> 0
    refl = np.sqrt(np.sum(x * x, axis=-1) * np.sum(y * y, axis=-1) - 2.0 * np.sum(x * y, axis=-1) + 1.0)
    out = np.log(refl / diff) / (2.0 * math.pi)
    return float(out) if np.ndim(out) == 0 else out


def poisson_kernel(domain: DomainGeometry, a: BoundaryPoint, y) -> np.ndarray | float:
    """Inward normal derivative of the Green function at ``a``."""
    y = np.asarray(y, dtype=float)
    if domain.kind is DomainKind.INTERVAL:
        out = 1.0 - y if a.coordinate == 0.0 else y.copy()
        return float(out) if np.ndim(out) == 0 else out
    p = a.position
    r2 = np.sum(y * y, axis=-1)
    d2 = np.sum((y - p) ** 2, axis=-1)
    out = (1.0 - r2) / (2.0 * math.pi * d2)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# sampling a nodal field


def sample_along_normal(grid: Grid, u: np.ndarray, a: BoundaryPoint, eps) -> np.ndarray:
    """Piecewise-linear value of the field at distance ``eps`` from ``a`` along the inward normal."""
    eps = np.asarray(eps, dtype=float)
    if grid.is_interval:
        left, right = grid.endpoint_distances
        if a.coordinate == 0.0:
            return np.interp(eps, np.concatenate([[0.0], left]), np.concatenate([[0.0], u]))
        return np.interp(eps, np.concatenate([[0.0], right[::-1]]), np.concatenate([[0.0], u[::-1]]))
    r = 1.0 - eps
    return sample_disk(grid, u, r, np.full_like(r, a.coordinate))


def sample_disk(grid: Grid, u: np.ndarray, r, phi) -> np.ndarray:
    """Bilinear interpolation in (r, phi), with u = 0 at r = 1 and constant extension below the first ring."""
    U = u.reshape(grid.shape)
    r = np.asarray(r, dtype=float)
    phi = np.mod(np.asarray(phi, dtype=float), 2 * math.pi)
    radii = np.concatenate([grid.r, [1.0]])
    ring = np.vstack([U, np.zeros((1, grid.n_angles))])
    t = phi / grid.dphi
    m0 = np.floor(t).astype(int) % grid.n_angles
    m1 = (m0 + 1) % grid.n_angles
    w = t - np.floor(t)
    rc = np.clip(r, radii[0], 1.0)
    j1 = np.clip(np.searchsorted(radii, rc, side="right"), 1, radii.size - 1)
    j0 = j1 - 1
    s = (rc - radii[j0]) / (radii[j1] - radii[j0])
    v0 = (1 - w) * ring[j0, m0] + w * ring[j0, m1]
    v1 = (1 - w) * ring[j1, m0] + w * ring[j1, m1]
    return (1 - s) * v0 + s * v1


# ---------------------------------------------------------------------------
# classical quotient


@dataclass
class QuotientResult:
    eps: np.ndarray
    quotients: np.ndarray
    limit: float
    error: float


def _cell_gap(grid: Grid, a: BoundaryPoint, eps: float) -> float:
    if not grid.is_interval:
        return grid.dr
    left, right = grid.endpoint_distances
    dist = left if a.coordinate == 0.0 else right[::-1]
    gaps = grid.gaps if a.coordinate == 0.0 else grid.gaps[::-1]
    i = int(np.searchsorted(dist, eps))
    return float(gaps[min(i, gaps.size - 1)])


def default_eps(grid: Grid, a: BoundaryPoint, eps_max: float | None = None, halvings: int = 24) -> np.ndarray:
    """Decreasing eps list snapped to node distances, each at least two local cells from ``a``.

    Halving from ``eps_max`` (0.05 on the interval, 0.4 on the disk, whose
    grids are coarser).
    """
    if eps_max is None:
        eps_max = 0.05 if grid.is_interval else 0.4
    if grid.is_interval:
        left, right = grid.endpoint_distances
        dist = left if a.coordinate == 0.0 else right[::-1]
    else:
        dist = (1.0 - grid.r)[::-1]
    out = []
    for i in range(halvings + 1):
        target = eps_max * 0.5**i
        j = int(np.argmin(np.abs(np.log(dist / target))))
        e = float(dist[j])
        if e < 2.0 * _cell_gap(grid, a, e) * (1 - 1e-12):
            break
        if not out or e < out[-1] * (1 - 1e-12):
            out.append(e)
    if len(out) < 3:
        # coarse grid: halving skips past the admissible range, so use the
        # innermost admissible node distances directly
        ok = [float(e) for e in dist if e >= 2.0 * _cell_gap(grid, a, e) * (1 - 1e-12) and e <= 0.5]
        out = ok[:4][::-1]
    return np.array(out)


def _neville(eps: np.ndarray, q: np.ndarray, stages: int) -> list[np.ndarray]:
    """Tableau of polynomial extrapolations to eps = 0 (stage s uses s + 1 points)."""
    table = [q.astype(float)]
    for s in range(1, stages + 1):
        prev = table[-1]
        if prev.size < 2:
            break
        e0, e1 = eps[: prev.size - 1], eps[s:]
        table.append((e0 * prev[1:] - e1 * prev[:-1]) / (e0 - e1))
    return table


def classical_quotient(u: LimitSolution | np.ndarray, a: BoundaryPoint, eps: Sequence[float] | None = None,
                       grid: Grid | None = None) -> QuotientResult:
    """Extrapolated limit of u(a + eps n)/eps.

    Richardson (Neville) extrapolation assuming first-order behaviour in eps,
    two stages at most.
    """
    if isinstance(u, LimitSolution):
        grid, field_ = u.grid, u.u
    else:
        field_ = np.asarray(u, dtype=float)
    eps = default_eps(grid, a) if eps is None else np.asarray(eps, dtype=float)
    if eps.size < 2 or np.any(np.diff(eps) >= 0):
        raise ValueError("eps list must be decreasing with at least two entries")
    if eps[-1] < 2.0 * _cell_gap(grid, a, eps[-1]) * (1 - 1e-9):
        raise ValueError("smallest eps is below twice the local grid spacing")
    q = sample_along_normal(grid, field_, a, eps) / eps
    table = _neville(eps, q, stages=2)
    top = table[-1]
    limit = float(top[-1])
    # disagreement between the two smallest-eps extrapolants and between the
    # two highest stages; slow non-polynomial convergence shows up in both
    err = float(abs(table[-1][-1] - table[-2][-1]))
    if top.size >= 2:
        err = max(err, float(abs(top[-1] - top[-2])))
    return QuotientResult(eps, q, limit, err)


# ---------------------------------------------------------------------------
# pointwise normal derivative


@dataclass
class PointwiseResult:
    cutoffs: np.ndarray
    fluxes: np.ndarray
    g: float
    method: str
    monotone: bool
    decreasing: bool
    extinct: bool


def flux_series(L: LimitSolution, a: BoundaryPoint) -> np.ndarray:
    """Per-level discrete fluxes of the ladder at ``a``."""
    grid = L.grid
    if grid.is_interval:
        return L.fluxes[:, 0 if a.coordinate == 0.0 else 1].copy()
    t = (a.coordinate % (2 * math.pi)) / grid.dphi
    m = int(math.floor(t))
    w = t - m
    n = grid.n_angles
    return (1 - w) * L.fluxes[:, m % n] + w * L.fluxes[:, (m + 1) % n]


def extrapolate_ladder(cutoffs: np.ndarray, fluxes: np.ndarray, exponent: float | None) -> tuple[float, str]:
    """Limit of the flux sequence along the ladder.

    exponent p in (0, inf): fit g + A k^-p + B k^-2p through the last three levels.
    exponent 0: V bounded near the point, take the last level.
    exponent None: Aitken's delta-squared on the last three levels, kept
    within [0, last value].
    """
    last = float(fluxes[-1])
    if fluxes.size < 3 or exponent == 0.0:
        return last, "last"
    if exponent is not None and exponent > 0:
        k = np.asarray(cutoffs[-3:], dtype=float)
        A = np.stack([np.ones(3), k ** (-exponent), k ** (-2 * exponent)], axis=1)
        try:
            coef = np.linalg.solve(A, fluxes[-3:])
        except np.linalg.LinAlgError:
            return last, "last"
        return float(coef[0]), f"richardson(p={exponent:.6g})"
    f0, f1, f2 = fluxes[-3:]
    den = f2 - 2 * f1 + f0
    if den == 0 or not np.isfinite(den):
        return last, "last"
    g = f2 - (f2 - f1) ** 2 / den
    return float(min(max(g, 0.0), last)) if last >= 0 else last, "aitken"


def truncation_exponent(V: Potential, domain: DomainGeometry, a: BoundaryPoint) -> float | None:
    """Rate p of k^-p convergence of the truncated fluxes, when V is a subquadratic power law near ``a``."""
    alpha = V.local_exponent(domain, a)
    if alpha is None:
        return None
    if alpha == 0.0:
        return 0.0
    if alpha < 2.0:
        return (2.0 - alpha) / alpha
    return None


def pointwise_normal_derivative(L: LimitSolution, a: BoundaryPoint, slack: float = 1e-9) -> PointwiseResult:
    """g(a): limit of the per-level fluxes at ``a`` along the ladder."""
    if L.n_levels < 2:
        raise ValueError("need a ladder with at least two solved levels")
    fl = flux_series(L, a)
    cut = np.array(L.cutoffs, dtype=float)
    monotone = bool(np.all(np.diff(fl) <= slack))
    if not monotone:
        log.warning("flux sequence at %s is not monotone (max rise %.3e); grid too coarse?",
                    a.label(), float(np.max(np.diff(fl))))
    p = truncation_exponent(L.potential, L.grid.domain, a) if L.potential is not None else None
    g, method = extrapolate_ladder(cut, fl, p)
    scale = max(abs(fl[0]), np.finfo(float).tiny)
    extinct = bool(abs(fl[-1]) <= EXTINCT * scale)
    decreasing = bool(extinct or fl[-1] < fl[-2] * (1 - DECREASE_TOL))
    return PointwiseResult(cut, fl, g, method, monotone, decreasing, extinct)


def zero_threshold(f: SourceField, tol: float = 1e-10) -> float:
    return max(10.0 * tol, 1e-3 * f.linf)


def classify_zero(pw: PointwiseResult, threshold: float) -> bool:
    """A derivative counts as 0 when small and still decreasing (or extinct) at the last level."""
    return bool(pw.g < threshold and pw.fluxes[-1] < threshold and pw.decreasing)


# ---------------------------------------------------------------------------
# Poisson integral


@dataclass
class PoissonIntegral:
    value: float
    divergent: bool
    shells: np.ndarray = field(repr=False, default=None)
    tail: float = 0.0


_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def _panels(lo: float, hi: float, depth: float, ratio: float = 0.5) -> list[tuple[float, float]]:
    """Geometric panels [hi*ratio^(m+1), hi*ratio^m] from ``hi`` until the lower end passes ``depth`` or ``lo``."""
    out = []
    b = hi
    while b > max(depth, lo):
        out.append((max(b * ratio, lo), b))
        b *= ratio
    return out


def _gauss(a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    h = 0.5 * (b - a)
    return a + h * (_GL_X + 1.0), h * _GL_W


def _shell_tail(shells: np.ndarray) -> tuple[float, bool]:
    """Geometric tail estimate from the last shell contributions; flags non-decaying shells."""
    s = shells[np.abs(shells) > 0]
    if s.size < 4:
        return 0.0, False
    r = s[-3:] / s[-4:-1]
    if np.all(r > 0) and np.all(r < 1.0):
        q = float(np.exp(np.mean(np.log(r))))
        return float(s[-1] * q / (1.0 - q)), False
    if np.all(r >= 1.0 - 1e-3):
        return math.inf, True
    return 0.0, False


def poisson_integral_value(L: LimitSolution, f: SourceField, a: BoundaryPoint, V: Potential | None = None,
                           depth: float = 1e-10, divergence_cap: float = 1e10) -> PoissonIntegral:
    """∫ K(a, y) (f - V u)(y) dy with u the final ladder field.

    V is cut at the final ladder cutoff, the level at which u was computed;
    below that scale u is not the limit field.  Quadrature runs over panels
    graded geometrically (ratio 1/2) toward the boundary down to ``depth``;
    the V u part gets a geometric tail estimate for the omitted layer and is
    flagged divergent when its shell contributions stop decaying or its
    partial sums exceed ``divergence_cap``.
    """
    V = L.potential if V is None else V
    V = truncate(V, L.cutoffs[-1])
    grid = L.grid
    if grid.is_interval:
        return _poisson_interval(grid, L.u, f, a, V, depth, divergence_cap)
    return _poisson_disk(grid, L.u, f, a, V, depth, divergence_cap)


def _source_at(f: SourceField, grid: Grid, pts: np.ndarray, dist: tuple | None = None) -> np.ndarray:
    if f.func is not None:
        return np.asarray(f.func(pts), dtype=float) * np.ones(np.shape(pts)[: 1 if grid.is_interval else -1])
    if grid.is_interval:
        return np.interp(pts, grid.x, f.values)
    r = np.hypot(pts[..., 0], pts[..., 1])
    return sample_disk(grid, f.values, r, np.arctan2(pts[..., 1], pts[..., 0]))


def _poisson_interval(grid, u, f, a, V, depth, cap):
    left, right = grid.endpoint_distances
    src_total = 0.0
    vu_total = 0.0
    divergent = False
    shells_all = []
    for side in ("left", "right"):
        # s is the distance to the endpoint on this side
        dist = left if side == "left" else right[::-1]
        vals = u if side == "left" else u[::-1]
        near = (side == "left") == (a.coordinate == 0.0)
        shells = []
        for lo, hi in _panels(0.0, 0.5, depth):
            s, w = _gauss(lo, hi)
            x = s if side == "left" else 1.0 - s
            K = 1.0 - s if near else s
            uu = np.interp(s, np.concatenate([[0.0], dist]), np.concatenate([[0.0], vals]))
            vv = V.from_endpoint_distances(s, 1.0 - s) if side == "left" else V.from_endpoint_distances(1.0 - s, s)
            src_total += float(np.dot(w, K * _source_at(f, grid, x)))
            shells.append(float(np.dot(w, K * vv * uu)))
        # the source part is bounded, so the innermost layer is integrated directly
        s, w = _gauss(0.0, depth)
        src_total += float(np.dot(w, (1.0 - s if near else s) * _source_at(f, grid, s if side == "left" else 1.0 - s)))
        shells = np.array(shells)
        tail, div = _shell_tail(shells)
        divergent |= div
        vu_total += float(shells.sum()) + (0.0 if div else tail)
        shells_all.append(shells)
    divergent |= vu_total > cap
    # a divergent V u part has no finite value
    value = math.nan if divergent else src_total - vu_total
    return PoissonIntegral(value, divergent, np.concatenate(shells_all))


def _poisson_disk(grid, u, f, a, V, depth, cap):
    phi0 = a.coordinate
    s_panels = _panels(0.0, 1.0, depth)
    ang = _panels(0.0, math.pi, depth)
    src_total = 0.0
    shells = []
    for lo, hi in s_panels:
        s, ws = _gauss(lo, hi)
        shell = 0.0
        for sign in (1.0, -1.0):
            for plo, phi_hi in ang:
                t, wt = _gauss(plo, phi_hi)
                S, T = np.meshgrid(s, t, indexing="ij")
                W = np.outer(ws, wt)
                r = 1.0 - S
                phi = phi0 + sign * T
                pts = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)
                K = poisson_kernel(grid.domain, a, pts)
                jac = r * W
                src_total += float(np.sum(jac * K * _source_at(f, grid, pts)))
                uu = sample_disk(grid, u, r, phi)
                vv = V(grid.domain, pts)
                shell += float(np.sum(jac * K * vv * uu))
        shells.append(shell)
    shells = np.array(shells)
    tail, divergent = _shell_tail(shells)
    vu = float(shells.sum()) + (0.0 if divergent else tail)
    divergent |= vu > cap
    return PoissonIntegral(math.nan if divergent else src_total - vu, divergent, shells, tail)


# ---------------------------------------------------------------------------
# reports and the set N


@dataclass
class NormalDerivativeReport:
    point: BoundaryPoint
    quotient: QuotientResult
    pointwise: PointwiseResult
    poisson: PoissonIntegral
    threshold: float
    classical_exists: bool
    representation_holds: bool
    hopf_positive: bool

    @property
    def g(self) -> float:
        return self.pointwise.g

    def row(self) -> dict:
        return {
            "a": self.point.coordinate,
            "quotient_limit": self.quotient.limit,
            "quotient_err": self.quotient.error,
            "g": self.pointwise.g,
            "poisson_value": self.poisson.value,
            "in_N": self.classical_exists and self.representation_holds,
            "hopf_positive": self.hopf_positive,
        }


def normal_derivative_report(L: LimitSolution, f: SourceField, a: BoundaryPoint, tol: float = 1e-10,
                             match_tol: float = 1e-3, eps: Sequence[float] | None = None) -> NormalDerivativeReport:
    q = classical_quotient(L, a, eps)
    pw = pointwise_normal_derivative(L, a)
    pi = poisson_integral_value(L, f, a)
    thr = zero_threshold(f, tol)
    exists = bool(np.isfinite(q.limit) and q.error <= match_tol)
    holds = bool(exists and not pi.divergent and abs(q.limit - pi.value) <= match_tol)
    return NormalDerivativeReport(a, q, pw, pi, thr, exists, holds, not classify_zero(pw, thr))


@dataclass
class MembershipN:
    verdict: str
    quotient: QuotientResult
    poisson: PoissonIntegral
    gap: float


def membership_N(domain: DomainGeometry, V: Potential, grid: Grid, a: BoundaryPoint, tol: float = 1e-3,
                 ladder: TruncationLadder | None = None, solver_tol: float = 1e-10,
                 limit: LimitSolution | None = None) -> MembershipN:
    """Compare the classical quotient and the Poisson integral of the f = 1 solution at ``a``.

    in_N: both finite and within ``tol``; uncertain: the quotient's
    extrapolation error exceeds ``tol``; otherwise not_in_N.
    """
    if grid.domain != domain:
        raise DomainError("grid and domain disagree")
    one = named_source(grid, "one")
    if limit is None:
        from .potential import default_ladder

        limit = solve_limit(grid, V, ladder or default_ladder(), one, solver_tol)
    q = classical_quotient(limit, a)
    pi = poisson_integral_value(limit, one, a, V)
    if pi.divergent or not np.isfinite(q.limit):
        return MembershipN("not_in_N", q, pi, math.inf)
    gap = abs(q.limit - pi.value)
    if q.error > tol:
        return MembershipN("uncertain", q, pi, gap)
    return MembershipN("in_N" if gap <= tol else "not_in_N", q, pi, gap)
