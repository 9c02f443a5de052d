"""Domains, grids and boundary quadrature.

Two domains are supported: the unit interval (0, 1) and the unit disk in
the plane.  Interval grids store their nodes together with the gaps between
consecutive nodes (including the two gaps touching the endpoints), so uniform
and geometrically graded grids share one code path.  Disk grids are tensor
polar grids with radii staggered off the origin.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """A point lies outside the closed domain, or off the boundary."""


class ConfigurationError(ValueError):
    """Invalid discretization parameters."""


class DomainKind(enum.Enum):
    INTERVAL = "interval"
    DISK = "disk"


@dataclass(frozen=True)
class DomainGeometry:
    kind: DomainKind

    @property
    def dimension(self) -> int:
        return 1 if self.kind is DomainKind.INTERVAL else 2

    @property
    def boundary_measure(self) -> float:
        # counting measure on {0, 1} for the interval
        return 2.0 if self.kind is DomainKind.INTERVAL else 2.0 * math.pi

    @classmethod
    def from_name(cls, name: str) -> "DomainGeometry":
        try:
            return cls(DomainKind(name.lower()))
        except ValueError:
            raise ConfigurationError(f"unknown domain {name!r}; expected 'interval' or 'disk'") from None


INTERVAL = DomainGeometry(DomainKind.INTERVAL)
DISK = DomainGeometry(DomainKind.DISK)


@dataclass(frozen=True)
class BoundaryPoint:
    """A point of the boundary.

    ``coordinate`` is the endpoint (0 or 1) on the interval and the polar
    angle in [0, 2*pi) on the disk.
    """

    domain: DomainGeometry
    coordinate: float

    def __post_init__(self):
        if self.domain.kind is DomainKind.INTERVAL:
            if self.coordinate not in (0.0, 1.0):
                raise DomainError(f"interval boundary point must be 0 or 1, got {self.coordinate}")
        else:
            object.__setattr__(self, "coordinate", float(self.coordinate) % (2.0 * math.pi))

    @property
    def position(self) -> np.ndarray:
        if self.domain.kind is DomainKind.INTERVAL:
            return np.array([self.coordinate])
        return np.array([math.cos(self.coordinate), math.sin(self.coordinate)])

    def label(self) -> str:
        if self.domain.kind is DomainKind.INTERVAL:
            return f"{self.coordinate:g}"
        return f"phi={self.coordinate:.17g}"


def _as_points(domain: DomainGeometry, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if domain.kind is DomainKind.INTERVAL:
        return x
    if x.shape[-1] != 2:
        raise DomainError("disk points must have two coordinates")
    return x


def distance_to_boundary(domain: DomainGeometry, x) -> np.ndarray | float:
    """Distance from ``x`` (scalar/array of interval points, or (..., 2) disk points) to the boundary."""
    x = _as_points(domain, x)
    tol = 1e-14
    if domain.kind is DomainKind.INTERVAL:
        if np.any((x < -tol) | (x > 1.0 + tol)):
            raise DomainError("point outside [0, 1]")
        d = np.minimum(x, 1.0 - x)
    else:
        d = 1.0 - np.hypot(x[..., 0], x[..., 1])
        if np.any(d < -tol):
            raise DomainError("point outside the closed unit disk")
    d = np.maximum(d, 0.0)
    return float(d) if np.ndim(d) == 0 else d


def inward_normal(domain: DomainGeometry, a: BoundaryPoint) -> np.ndarray:
    if a.domain != domain:
        raise DomainError("boundary point belongs to another domain")
    if domain.kind is DomainKind.INTERVAL:
        return np.array([1.0 if a.coordinate == 0.0 else -1.0])
    return -a.position


@dataclass(frozen=True, eq=False)
class Grid:
    """Interior nodes of a discretization of the domain.

    Interval: ``x`` holds the n interior nodes and ``gaps`` the n + 1
    distances 0 -> x[0] -> ... -> x[-1] -> 1.
    Disk: nodes (r[j], phi[m]) flattened with index j * n_angles + m.
    """

    domain: DomainGeometry
    x: np.ndarray | None = None
    gaps: np.ndarray | None = None
    r: np.ndarray | None = None
    phi: np.ndarray | None = None
    dr: float = 0.0
    dphi: float = 0.0
    label: str = ""
    _weights: np.ndarray = field(default=None, repr=False)
    _left: np.ndarray = field(default=None, repr=False)
    _right: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.domain.kind is DomainKind.INTERVAL:
            w = 0.5 * (self.gaps[:-1] + self.gaps[1:])
            # exact distances to each endpoint; 1 - x loses them near x = 1
            left = np.cumsum(self.gaps[:-1])
            right = np.cumsum(self.gaps[::-1][:-1])[::-1]
            for arr in (left, right):
                arr.setflags(write=False)
            object.__setattr__(self, "_left", left)
            object.__setattr__(self, "_right", right)
        else:
            w = np.repeat(self.r * self.dr * self.dphi, self.phi.size)
        w.setflags(write=False)
        object.__setattr__(self, "_weights", w)

    @property
    def is_interval(self) -> bool:
        return self.domain.kind is DomainKind.INTERVAL

    @property
    def size(self) -> int:
        return self.x.size if self.is_interval else self.r.size * self.phi.size

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.x.size,) if self.is_interval else (self.r.size, self.phi.size)

    @property
    def n_angles(self) -> int:
        return self.phi.size

    @property
    def weights(self) -> np.ndarray:
        """Control-volume measure of each node (dual cell length / polar cell area)."""
        return self._weights

    @property
    def min_spacing(self) -> float:
        if self.is_interval:
            return float(self.gaps.min())
        return min(self.dr, self.r[0] * self.dphi)

    @property
    def points(self) -> np.ndarray:
        if self.is_interval:
            return self.x
        rr, pp = np.meshgrid(self.r, self.phi, indexing="ij")
        return np.stack([(rr * np.cos(pp)).ravel(), (rr * np.sin(pp)).ravel()], axis=-1)

    @property
    def endpoint_distances(self) -> tuple[np.ndarray, np.ndarray]:
        """Interval only: (distance to 0, distance to 1) of every node."""
        return self._left, self._right

    @property
    def distances(self) -> np.ndarray:
        if self.is_interval:
            return np.minimum(self._left, self._right)
        return np.repeat(1.0 - self.r, self.phi.size)

    def integrate(self, values, boundary_values: tuple[float, float] = (0.0, 0.0)) -> float:
        """Quadrature of a nodal field.

        On the interval this is the trapezoid rule including the endpoint
        values ``boundary_values``; on the disk it is the midpoint rule over
        polar cells (boundary values are not used).
        """
        total = float(np.dot(self.weights, np.asarray(values, dtype=float).ravel()))
        if self.is_interval:
            total += 0.5 * self.gaps[0] * boundary_values[0] + 0.5 * self.gaps[-1] * boundary_values[1]
        return total

    def local_spacing(self, a: BoundaryPoint) -> float:
        """Width of the gap between ``a`` and the nearest interior node."""
        if self.is_interval:
            return float(self.gaps[0] if a.coordinate == 0.0 else self.gaps[-1])
        return 0.5 * self.dr


def build_grid(domain: DomainGeometry, resolution: int, n_angles: int | None = None) -> Grid:
    """Uniform interval grid (h = 1/resolution) or staggered polar disk grid.

    The disk grid has radii (j - 1/2)/resolution, j = 1..resolution, and
    ``n_angles`` uniform angles (default 2 * resolution, rounded to a
    multiple of 4 so that the axis directions are grid angles).
    """
    if resolution < 4:
        raise ConfigurationError(f"resolution must be >= 4, got {resolution}")
    if domain.kind is DomainKind.INTERVAL:
        h = 1.0 / resolution
        x = np.arange(1, resolution) * h
        gaps = np.full(resolution, h)
        return Grid(domain, x=x, gaps=gaps, label=f"uniform({resolution})")
    if n_angles is None:
        n_angles = 4 * max(1, round(resolution / 2))
    if n_angles < 4:
        raise ConfigurationError("need at least 4 angles")
    dr = 1.0 / resolution
    r = (np.arange(1, resolution + 1) - 0.5) * dr
    dphi = 2.0 * math.pi / n_angles
    phi = np.arange(n_angles) * dphi
    return Grid(domain, r=r, phi=phi, dr=dr, dphi=dphi, label=f"polar({resolution}x{n_angles})")


def graded_interval_grid(h_min: float, ratio: float = 1.05, h_max: float = 2e-3) -> Grid:
    """Interval grid graded geometrically toward both endpoints.

    Gaps grow from ``h_min`` at each endpoint by ``ratio`` until they reach
    ``h_max``, then stay uniform; the grid is symmetric about 1/2.
    """
    if not (0.0 < h_min <= h_max < 0.25):
        raise ConfigurationError("need 0 < h_min <= h_max < 1/4")
    if ratio < 1.0:
        raise ConfigurationError("grading ratio must be >= 1")
    if ratio == 1.0 or h_min == h_max:
        left = []
    else:
        n_graded = int(math.ceil(math.log(h_max / h_min) / math.log(ratio)))
        left = list(h_min * ratio ** np.arange(n_graded))
    graded_length = float(np.sum(left))
    if graded_length >= 0.5:
        raise ConfigurationError("graded layer exceeds half the interval; lower h_max")
    n_uniform = max(1, int(math.ceil((0.5 - graded_length) / h_max)))
    h_uni = (0.5 - graded_length) / n_uniform
    half = np.array(left + [h_uni] * n_uniform)
    gaps = np.concatenate([half, half[::-1]])
    x = np.cumsum(gaps)[:-1]
    return Grid(INTERVAL, x=x, gaps=gaps, label=f"graded({h_min:.3g},{ratio:g},{h_max:g})")


def boundary_quadrature(domain: DomainGeometry, m: int = 2) -> list[tuple[BoundaryPoint, float]]:
    if m < 1:
        raise ConfigurationError("need at least one boundary node")
    if domain.kind is DomainKind.INTERVAL:
        return [(BoundaryPoint(domain, 0.0), 1.0), (BoundaryPoint(domain, 1.0), 1.0)]
    w = 2.0 * math.pi / m
    return [(BoundaryPoint(domain, k * w), w) for k in range(m)]


def grid_boundary_points(grid: Grid) -> list[tuple[BoundaryPoint, float]]:
    """Boundary quadrature matching the grid's own boundary nodes."""
    if grid.is_interval:
        return boundary_quadrature(grid.domain)
    return [(BoundaryPoint(grid.domain, p), grid.dphi) for p in grid.phi]
