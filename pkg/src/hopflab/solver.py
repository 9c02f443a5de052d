"""Finite volume solver for -Δu + V_k u = f with u = 0 on the boundary.

The discrete operator is assembled in symmetric (measure-weighted) form

    S u = W f + B g,

with S = (flux stiffness) + W diag(V_k), W the control-volume measures and
B g the coupling to Dirichlet data g.  S is a symmetric positive definite
M-matrix, so the discrete weak maximum and comparison principles hold.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import BoundaryPoint, ConfigurationError, Grid, graded_interval_grid, grid_boundary_points
from .potential import Potential, TruncationLadder, Zero, required_min_spacing

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


# ---------------------------------------------------------------------------
# sources


@dataclass(frozen=True, eq=False)
class SourceField:
    """Nodal values of f plus, on the interval, its values at the endpoints."""

    grid: Grid
    values: np.ndarray
    boundary_values: tuple[float, float] = (0.0, 0.0)
    name: str = "table"
    func: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != self.grid.size or not np.all(np.isfinite(v)):
            raise ConfigurationError("source needs one finite value per node")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid, func: Callable, name: str = "custom") -> "SourceField":
        values = np.asarray(func(grid.points), dtype=float)
        values = np.broadcast_to(values, (grid.size,)).copy()
        bv = (0.0, 0.0)
        if grid.is_interval:
            bv = tuple(float(np.asarray(func(np.array([t])), dtype=float).ravel()[0]) for t in (0.0, 1.0))
        return cls(grid, values, bv, name, func)

    @property
    def linf(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def l1(self) -> float:
        return float(np.dot(self.grid.weights, np.abs(self.values)))

    @property
    def is_nonnegative(self) -> bool:
        return bool(np.all(self.values >= 0))

    def split(self) -> tuple["SourceField", "SourceField"]:
        pos = SourceField(self.grid, np.maximum(self.values, 0), tuple(max(b, 0.0) for b in self.boundary_values),
                          self.name + "+")
        neg = SourceField(self.grid, np.maximum(-self.values, 0), tuple(max(-b, 0.0) for b in self.boundary_values),
                          self.name + "-")
        return pos, neg

    def scaled(self, c: float) -> "SourceField":
        return SourceField(self.grid, c * self.values, tuple(c * b for b in self.boundary_values),
                           f"{c:g}*{self.name}")

    def abs(self) -> "SourceField":
        return SourceField(self.grid, np.abs(self.values), tuple(abs(b) for b in self.boundary_values),
                           f"|{self.name}|")


def _coordinate(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return points if points.ndim == 1 else points[..., 0]


def source_function(name: str) -> Callable:
    """Named sources: 'one', 'x', 'sin' (1 + sin(2 pi x)/2), 'indicator(l,r)'.

    On the disk 'x' and 'sin' use the first Cartesian coordinate.
    """
    key = name.replace(" ", "").lower()
    if key == "one":
        return lambda p: np.ones(np.shape(_coordinate(p)))
    if key == "x":
        return lambda p: _coordinate(p).copy()
    if key == "one_minus_x":
        return lambda p: 1.0 - _coordinate(p)
    if key == "sin":
        return lambda p: 1.0 + 0.5 * np.sin(2.0 * np.pi * _coordinate(p))
    if key.startswith("indicator(") and key.endswith(")"):
        try:
            lo, hi = (float(s) for s in key[len("indicator("):-1].split(","))
        except ValueError:
            raise ConfigurationError(f"bad indicator source {name!r}") from None
        return lambda p: ((_coordinate(p) >= lo) & (_coordinate(p) <= hi)).astype(float)
    raise ConfigurationError(f"unknown source {name!r}")


def named_source(grid: Grid, name: str) -> SourceField:
    return SourceField.from_function(grid, source_function(name), name)


# ---------------------------------------------------------------------------
# assembly


def stiffness(grid: Grid) -> tuple[sp.csr_matrix, np.ndarray]:
    """Flux stiffness of -Δ with homogeneous Dirichlet data, and boundary couplings.

    The coupling array holds, for each node, the coefficient multiplying the
    adjacent boundary value (zero for nodes not touching the boundary).
    """
    if grid.is_interval:
        inv = 1.0 / grid.gaps
        diag = inv[:-1] + inv[1:]
        off = -inv[1:-1]
        S = sp.diags([off, diag, off], [-1, 0, 1], format="csr")
        coupling = np.zeros(grid.size)
        coupling[0] = inv[0]
        coupling[-1] += inv[-1]
        return S, coupling
    nr, nphi = grid.shape
    dr, dphi = grid.dr, grid.dphi
    idx = np.arange(nr * nphi).reshape(nr, nphi)
    rows, cols, vals = [], [], []
    diag = np.zeros((nr, nphi))
    # radial faces between ring j and j+1 at radius (j+1) dr
    face = (np.arange(1, nr) * dr) * dphi / dr
    for j in range(nr - 1):
        c = face[j]
        rows += [idx[j], idx[j + 1]]
        cols += [idx[j + 1], idx[j]]
        vals += [np.full(nphi, -c)] * 2
        diag[j] += c
        diag[j + 1] += c
    # outer boundary face at r = 1, half a cell away
    c_out = 1.0 * dphi / (0.5 * dr)
    diag[-1] += c_out
    # angular faces
    ca = dr / (grid.r * dphi)
    for j in range(nr):
        nxt = np.roll(idx[j], -1)
        rows += [idx[j], nxt]
        cols += [nxt, idx[j]]
        vals += [np.full(nphi, -ca[j])] * 2
        diag[j] += 2 * ca[j]
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    S = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nr * nphi, nr * nphi))
    coupling = np.zeros(nr * nphi)
    coupling[idx[-1]] = c_out
    return S, coupling


def system_matrix(grid: Grid, v_nodes: np.ndarray) -> sp.csr_matrix:
    S, _ = stiffness(grid)
    return (S + sp.diags(grid.weights * v_nodes)).tocsr()


# ---------------------------------------------------------------------------
# linear solver


@dataclass
class CGInfo:
    iterations: int
    residual: float


def conjugate_gradient(A, b: np.ndarray, tol: float = 1e-10, precond: Callable | None = None,
                       maxiter: int | None = None, x0: np.ndarray | None = None) -> tuple[np.ndarray, CGInfo]:
    """Preconditioned conjugate gradients for SPD ``A``; stops at ||r|| <= tol ||b||."""
    n = b.size
    maxiter = maxiter or 10 * n
    x = np.zeros(n) if x0 is None else x0.copy()
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), CGInfo(0, 0.0)
    z = precond(r) if precond else r
    p = z.copy()
    rz = r @ z
    it = 0
    res = np.linalg.norm(r) / bnorm
    while res > tol and it < maxiter:
        Ap = A @ p
        step = rz / (p @ Ap)
        x += step * p
        r -= step * Ap
        it += 1
        # true residual every few steps keeps the estimate honest
        if it % 8 == 0:
            r = b - A @ x
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            break
        z = precond(r) if precond else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(b - A @ x) / bnorm
    return x, CGInfo(it, res)


def _factor_preconditioner(A: sp.csr_matrix, tridiagonal: bool) -> Callable:
    if tridiagonal:
        ab = np.zeros((2, A.shape[0]))
        ab[0, 1:] = A.diagonal(1)
        ab[1] = A.diagonal()
        cb = scipy.linalg.cholesky_banded(ab, lower=False)
        return lambda r: scipy.linalg.cho_solve_banded((cb, False), r)
    lu = spla.splu(A.tocsc())
    return lu.solve


def solve_spd(grid: Grid, A: sp.csr_matrix, rhs: np.ndarray, tol: float,
              preconditioner: str = "factor") -> tuple[np.ndarray, float, int]:
    """Solve A u = rhs by Jacobi-scaled PCG.

    Scaling by diag(A)^(-1/2) gives a unit-diagonal system whose residual is
    meaningful even when the geometric grid spans hundreds of decades.
    """
    d = 1.0 / np.sqrt(A.diagonal())
    D = sp.diags(d)
    As = (D @ A @ D).tocsr()
    bs = d * rhs
    if preconditioner == "factor":
        M = _factor_preconditioner(As, grid.is_interval)
    elif preconditioner == "none":
        M = None
    else:
        raise ConfigurationError(f"unknown preconditioner {preconditioner!r}")
    y, info = conjugate_gradient(As, bs, tol=tol, precond=M)
    if info.residual > tol:
        raise SolverError("conjugate gradient did not converge", info.residual)
    return d * y, info.residual, info.iterations


# ---------------------------------------------------------------------------
# results


@dataclass(frozen=True, eq=False)
class SolveResult:
    grid: Grid
    potential: dict
    cutoff: float | None
    source: str
    u: np.ndarray
    residual: float
    absorption: float
    v_nodes: np.ndarray = field(repr=False)
    source_field: SourceField | None = field(default=None, repr=False)
    boundary_data: np.ndarray | None = field(default=None, repr=False)

    @property
    def l1(self) -> float:
        return float(np.dot(self.grid.weights, np.abs(self.u)))

    @property
    def linf(self) -> float:
        return float(np.max(np.abs(self.u)))

    def integral(self) -> float:
        bv = (0.0, 0.0)
        if self.grid.is_interval and self.boundary_data is not None:
            bv = (float(self.boundary_data[0]), float(self.boundary_data[-1]))
        return self.grid.integrate(self.u, bv)


def _nodes_potential(grid: Grid, V: Potential, k: float | None) -> np.ndarray:
    vals = V.on_grid(grid)
    if k is not None:
        vals = np.minimum(vals, k)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ConfigurationError("potential must be finite and nonnegative at the nodes")
    return vals


def _solve_nonneg(grid, V, k, f: SourceField, tol, v_nodes, A=None, boundary=None, precond="factor"):
    if A is None:
        A = system_matrix(grid, v_nodes)
    rhs = grid.weights * f.values
    if boundary is not None:
        _, coupling = stiffness(grid)
        rhs = rhs + coupling * _boundary_to_nodes(grid, boundary)
    return solve_spd(grid, A, rhs, tol, precond)


def _boundary_to_nodes(grid: Grid, boundary: np.ndarray) -> np.ndarray:
    """Spread boundary data (2 endpoint values, or one per grid angle) onto adjacent nodes."""
    out = np.zeros(grid.size)
    if grid.is_interval:
        out[0] += boundary[0]
        out[-1] += boundary[1]
    else:
        out[-grid.n_angles:] = boundary
    return out


def solve_truncated(grid: Grid, V: Potential, k: float | None, f: SourceField, tol: float = 1e-10,
                    boundary: np.ndarray | None = None, preconditioner: str = "factor") -> SolveResult:
    """Solve -Δu + min(V, k) u = f (k=None: V sampled at the nodes as is).

    ``boundary`` optionally prescribes Dirichlet data: two endpoint values on
    the interval, one value per grid angle on the disk.
    """
    if k is not None and not k > 0:
        raise ConfigurationError("cutoff must be positive")
    if not tol > 0:
        raise ConfigurationError("tolerance must be positive")
    v_nodes = _nodes_potential(grid, V, k)
    A = system_matrix(grid, v_nodes)
    if f.is_nonnegative or boundary is not None:
        u, res, _ = _solve_nonneg(grid, V, k, f, tol, v_nodes, A, boundary, preconditioner)
    else:
        fp, fm = f.split()
        up, rp, _ = _solve_nonneg(grid, V, k, fp, tol, v_nodes, A, None, preconditioner)
        um, rm, _ = _solve_nonneg(grid, V, k, fm, tol, v_nodes, A, None, preconditioner)
        u, res = up - um, max(rp, rm)
    absorption = float(np.dot(grid.weights, v_nodes * np.abs(u)))
    return SolveResult(grid, V.describe(), k, f.name, u, res, absorption, v_nodes, f,
                       None if boundary is None else np.asarray(boundary, dtype=float))


def torsion_function(grid: Grid, tol: float = 1e-10) -> SolveResult:
    """theta with -Δθ = 1, θ = 0 on the boundary."""
    return solve_truncated(grid, Zero(), None, named_source(grid, "one"), tol)


def majorant(grid: Grid, f: SourceField, tol: float = 1e-10) -> SolveResult:
    """w with -Δw = |f|; bounds every |u_k|."""
    return solve_truncated(grid, Zero(), None, f.abs(), tol)


def energy(grid: Grid, V: Potential, z: np.ndarray, f: SourceField, cutoff: float | None = None) -> float:
    """E(z) = 1/2 ∫ |∇z|² + V z² - ∫ f z for a nodal field vanishing on the boundary."""
    z = np.asarray(z, dtype=float).ravel()
    S, _ = stiffness(grid)
    v = _nodes_potential(grid, V, cutoff)
    quad = z @ (S @ z) + np.dot(grid.weights * v, z * z)
    return float(0.5 * quad - np.dot(grid.weights * f.values, z))


def absorption_integral(result: SolveResult) -> float:
    """Discrete ∫ V_k |u_k|."""
    return result.absorption


# ---------------------------------------------------------------------------
# boundary fluxes


def boundary_flux(result: SolveResult, a: BoundaryPoint) -> float:
    """Inward normal derivative of the discrete solution at ``a``.

    Interval: (u(node) - 0)/gap plus the half-cell source term gap/2 f(a),
    which is the exact discrete flux through the endpoint (discrete Green
    identity).  Disk: the two-point
    face flux of the outer ring, interpolated linearly in angle.
    """
    grid = result.grid
    if grid.is_interval:
        f = result.source_field
        fb = 0.0 if f is None else f.boundary_values[0 if a.coordinate == 0.0 else 1]
        if a.coordinate == 0.0:
            ub = 0.0 if result.boundary_data is None else result.boundary_data[0]
            return float((result.u[0] - ub) / grid.gaps[0] + 0.5 * grid.gaps[0] * fb)
        ub = 0.0 if result.boundary_data is None else result.boundary_data[1]
        return float((result.u[-1] - ub) / grid.gaps[-1] + 0.5 * grid.gaps[-1] * fb)
    fl = disk_fluxes(result)
    return float(_angle_interp(grid, fl, a.coordinate))


def disk_fluxes(result: SolveResult) -> np.ndarray:
    """Face flux through r = 1 for every grid angle.

    This is the two-point flux of the scheme itself, (u_M - u_b)/(dr/2), so
    the fluxes satisfy the discrete Green identity exactly.
    """
    grid = result.grid
    u = result.u.reshape(grid.shape)
    ub = np.zeros(grid.n_angles) if result.boundary_data is None else result.boundary_data
    return (u[-1] - ub) / (0.5 * grid.dr)


def _angle_interp(grid: Grid, values: np.ndarray, phi: float) -> float:
    t = (phi % (2 * math.pi)) / grid.dphi
    m = int(math.floor(t))
    w = t - m
    return (1 - w) * values[m % grid.n_angles] + w * values[(m + 1) % grid.n_angles]


def all_boundary_fluxes(result: SolveResult) -> np.ndarray:
    if result.grid.is_interval:
        pts = grid_boundary_points(result.grid)
        return np.array([boundary_flux(result, a) for a, _ in pts])
    return disk_fluxes(result)


# ---------------------------------------------------------------------------
# monotone limit over a truncation ladder


@dataclass(frozen=True, eq=False)
class LimitSolution:
    """Result of a ladder sweep.

    Only the last few per-level solutions are kept in ``levels``; per-level
    scalars (cutoffs, fluxes, integrals, absorption) cover every level.
    """

    ladder: TruncationLadder
    levels: list[SolveResult]
    increments: np.ndarray
    fluxes: np.ndarray
    converged: bool
    potential: Potential = field(repr=False, default=None)
    cutoffs: list[float] = field(default_factory=list)
    integrals: np.ndarray = field(default=None, repr=False)
    absorption: np.ndarray = field(default=None, repr=False)
    monotone_violation: float = 0.0
    min_value: float = 0.0

    @property
    def u(self) -> np.ndarray:
        return self.levels[-1].u

    @property
    def grid(self) -> Grid:
        return self.levels[-1].grid

    @property
    def final(self) -> SolveResult:
        return self.levels[-1]

    @property
    def n_levels(self) -> int:
        return len(self.cutoffs)


def solve_limit(grid: Grid, V: Potential, ladder: TruncationLadder, f: SourceField, tol: float = 1e-10,
                early_stop: bool = True, boundary: np.ndarray | None = None, keep: int | None = 3) -> LimitSolution:
    """Solve along the ladder; per-level fields are non-increasing for f >= 0.

    With ``early_stop`` the ladder stops once both the relative L1 increment
    and the relative change of every boundary flux stay below
    ``ladder.stop_tol`` for two consecutive levels.  Levels above sup V are
    identical to the untruncated problem and are skipped.  ``keep`` bounds
    the number of per-level fields retained (None keeps all).
    """
    levels: list[SolveResult] = []
    cutoffs, fluxes, incs, integrals, absorption = [], [], [], [], []
    quiet = 0
    violation = 0.0
    vmin = math.inf
    vmax = V.upper_bound()
    for k in ladder.levels:
        res = solve_truncated(grid, V, k, f, tol, boundary)
        cutoffs.append(k)
        fluxes.append(all_boundary_fluxes(res))
        integrals.append(res.integral())
        absorption.append(res.absorption)
        vmin = min(vmin, float(res.u.min()))
        if levels:
            prev = levels[-1]
            violation = max(violation, float(np.max(res.u - prev.u)))
            inc = float(np.dot(grid.weights, np.abs(prev.u - res.u)))
            incs.append(inc)
            scale = max(res.l1, np.finfo(float).tiny)
            with np.errstate(over="ignore"):
                dflux = np.max(np.abs(fluxes[-2] - fluxes[-1]) / np.maximum(np.abs(fluxes[0]), 1e-300))
            quiet = quiet + 1 if (inc < ladder.stop_tol * scale and dflux < ladder.stop_tol) else 0
        levels.append(res)
        if keep is not None and len(levels) > keep:
            levels.pop(0)
        if early_stop and quiet >= 2:
            break
        if k >= vmax and len(cutoffs) >= 2:
            break
    incs_arr = np.array(incs)
    last_scale = max(levels[-1].l1, np.finfo(float).tiny)
    converged = bool(incs_arr.size == 0 or incs_arr[-1] < ladder.stop_tol * last_scale)
    return LimitSolution(ladder, levels, incs_arr, np.array(fluxes), converged, V, cutoffs,
                         np.array(integrals), np.array(absorption), violation, vmin)

def resolving_interval_grid(V: Potential, k_max: float, ratio: float = 1.02, h_max: float = 2e-3,
                            margin: float = 1e-2) -> Grid:
    """Graded interval grid fine enough to resolve min(V, k_max) near the endpoints.

    The first gap is ``margin`` times the length scale on which the
    truncation is active (or ``h_max`` for bounded potentials).
    """
    h_min = min(h_max, margin * required_min_spacing(V, k_max))
    return graded_interval_grid(h_min, ratio, h_max)
