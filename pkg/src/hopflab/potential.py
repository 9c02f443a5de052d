"""Nonnegative potentials and their truncations ``min(V, k)``."""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from .geometry import INTERVAL, ConfigurationError, DomainError, DomainGeometry, DomainKind, Grid

_FMAX = np.finfo(float).max


class SingularEvaluationError(DomainError):
    """A singular potential was evaluated on the boundary."""


class Potential:
    """Interface shared by all potential kinds."""

    kind: str = "abstract"

    def __call__(self, domain: DomainGeometry, x) -> np.ndarray:
        raise NotImplementedError

    def on_grid(self, grid: Grid) -> np.ndarray:
        return np.asarray(self(grid.domain, grid.points), dtype=float)

    def from_endpoint_distances(self, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        """Interval values given the distances to 0 and to 1 (exact near x = 1)."""
        return self(INTERVAL, left)

    def at_distance(self, d: np.ndarray) -> np.ndarray | None:
        """Values as a function of the distance to the boundary, for radial potentials; None otherwise."""
        return None

    def upper_bound(self) -> float:
        """Sup of V over the domain (inf when unbounded)."""
        return math.inf

    def local_exponent(self, domain: DomainGeometry, a) -> float | None:
        """Blow-up exponent alpha with V ~ C d^(-alpha) near boundary point ``a``.

        0 when V is bounded near ``a``; None when unknown.
        """
        return None

    def quadratic_bound(self) -> float | None:
        """C with V <= C / d^2 when structurally certified, else None."""
        return None

    def describe(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class Zero(Potential):
    kind = "zero"

    def __call__(self, domain, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape if domain.kind is DomainKind.INTERVAL else x.shape[:-1]
        return np.zeros(shape)

    def at_distance(self, d):
        return np.zeros(np.shape(d))

    def upper_bound(self):
        return 0.0

    def local_exponent(self, domain, a):
        return 0.0

    def quadratic_bound(self):
        return 0.0


@dataclass(frozen=True)
class Constant(Potential):
    c: float
    kind = "constant"

    def __post_init__(self):
        if not self.c >= 0:
            raise ConfigurationError("constant potential must be nonnegative")

    def __call__(self, domain, x):
        return Zero()(domain, x) + self.c

    def at_distance(self, d):
        return np.full(np.shape(d), self.c)

    def upper_bound(self):
        return self.c

    def local_exponent(self, domain, a):
        return 0.0

    def quadratic_bound(self):
        # d <= 1/2 on both domains
        return 0.25 * self.c

    def describe(self):
        return {"kind": self.kind, "c": self.c}


_ANCHORS = ("both", "left", "right")


@dataclass(frozen=True)
class PowerLaw(Potential):
    """V(x) = C * rho(x)^(-alpha).

    rho is the distance to the boundary, or on the interval with
    ``anchor`` 'left'/'right' the distance to that endpoint only (so V is
    bounded near the other one).
    """

    C: float
    alpha: float
    anchor: str = "both"
    kind = "powerlaw"

    def __post_init__(self):
        if not (self.C >= 0 and self.alpha >= 0):
            raise ConfigurationError("power law needs C >= 0 and alpha >= 0")
        if self.anchor not in _ANCHORS:
            raise ConfigurationError(f"anchor must be one of {_ANCHORS}")

    def rho(self, domain, x):
        x = np.asarray(x, dtype=float)
        if domain.kind is DomainKind.INTERVAL:
            if self.anchor == "left":
                return x
            if self.anchor == "right":
                return 1.0 - x
            return np.minimum(x, 1.0 - x)
        return 1.0 - np.hypot(x[..., 0], x[..., 1])

    def __call__(self, domain, x):
        return self._from_rho(self.rho(domain, x))

    def from_endpoint_distances(self, left, right):
        rho = {"left": left, "right": right}.get(self.anchor)
        if rho is None:
            rho = np.minimum(left, right)
        return self._from_rho(np.asarray(rho, dtype=float))

    def on_grid(self, grid):
        if grid.is_interval:
            return self.from_endpoint_distances(*grid.endpoint_distances)
        return super().on_grid(grid)

    def at_distance(self, d):
        if self.anchor != "both":
            return None
        return self._from_rho(np.asarray(d, dtype=float))

    def _from_rho(self, rho):
        if self.alpha == 0:
            return np.full(np.shape(rho), self.C)
        if np.any(rho <= 0):
            raise SingularEvaluationError("power-law potential evaluated on its singular set")
        with np.errstate(over="ignore"):
            v = self.C * rho ** (-self.alpha)
        return np.minimum(v, _FMAX)

    def local_exponent(self, domain, a):
        if self.C == 0 or self.alpha == 0:
            return 0.0
        if domain.kind is DomainKind.INTERVAL:
            if (self.anchor == "left" and a.coordinate == 1.0) or (self.anchor == "right" and a.coordinate == 0.0):
                return 0.0
        return self.alpha

    def quadratic_bound(self):
        if self.alpha > 2:
            return None
        # rho <= 1 and d <= rho, so C rho^-alpha <= C d^-2
        return self.C

    def describe(self):
        return {"kind": self.kind, "C": self.C, "alpha": self.alpha, "anchor": self.anchor}


@dataclass(frozen=True, eq=False)
class Tabulated(Potential):
    """Samples on the nodes of a grid, piecewise constant on dual cells.

    Evaluation at an arbitrary point returns the sample of the nearest node
    (interval) or of the containing polar cell (disk).
    """

    grid: Grid
    values: np.ndarray
    kind = "tabulated"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != self.grid.size:
            raise ConfigurationError("tabulated potential needs one sample per node")
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise ConfigurationError("tabulated samples must be finite and nonnegative")
        object.__setattr__(self, "values", v)

    def __call__(self, domain, x):
        g = self.grid
        x = np.asarray(x, dtype=float)
        if g.is_interval:
            edges = np.concatenate([[0.0], 0.5 * (g.x[:-1] + g.x[1:]), [1.0]])
            idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, g.x.size - 1)
            return self.values[idx]
        r = np.hypot(x[..., 0], x[..., 1])
        p = np.mod(np.arctan2(x[..., 1], x[..., 0]) + 0.5 * g.dphi, 2 * math.pi)
        j = np.clip((r / g.dr).astype(int), 0, g.r.size - 1)
        m = np.clip((p / g.dphi).astype(int), 0, g.phi.size - 1)
        return self.values[j * g.phi.size + m]

    def on_grid(self, grid):
        if grid is self.grid:
            return self.values.copy()
        return super().on_grid(grid)

    def upper_bound(self):
        return float(self.values.max())

    def local_exponent(self, domain, a):
        return 0.0

    def describe(self):
        return {"kind": self.kind, "n": int(self.values.size)}


@dataclass(frozen=True)
class Truncated(Potential):
    """min(base, k)."""

    base: Potential
    k: float
    kind = "truncated"

    def __call__(self, domain, x):
        return np.minimum(self.base(domain, x), self.k)

    def on_grid(self, grid):
        return np.minimum(self.base.on_grid(grid), self.k)

    def from_endpoint_distances(self, left, right):
        return np.minimum(self.base.from_endpoint_distances(left, right), self.k)

    def upper_bound(self):
        return min(self.k, self.base.upper_bound())

    def local_exponent(self, domain, a):
        return 0.0

    def quadratic_bound(self):
        return 0.25 * self.k

    def describe(self):
        return {"kind": self.kind, "k": self.k, "base": self.base.describe()}


def evaluate(V: Potential, domain: DomainGeometry, x):
    """V at interior point(s) ``x``."""
    return V(domain, x)


def truncate(V: Potential, k: float) -> Potential:
    if not k > 0:
        raise ConfigurationError("cutoff must be positive")
    return Truncated(V, float(k))


@dataclass(frozen=True)
class TruncationLadder:
    levels: tuple[float, ...]
    stop_tol: float = 1e-6

    def __post_init__(self):
        lv = tuple(float(k) for k in self.levels)
        if len(lv) < 2:
            raise ConfigurationError("a ladder needs at least two cutoffs")
        if any(k <= 0 for k in lv) or any(b <= a for a, b in zip(lv, lv[1:])):
            raise ConfigurationError("cutoffs must be positive and strictly increasing")
        object.__setattr__(self, "levels", lv)

    def __len__(self):
        return len(self.levels)

    @property
    def ratio(self) -> float | None:
        """Common ratio when the ladder is geometric."""
        lv = np.array(self.levels)
        q = lv[1:] / lv[:-1]
        return float(q[0]) if np.allclose(q, q[0], rtol=1e-9) else None


def default_ladder(k0: float = 10.0, ratio: float = 4.0, J: int = 5, stop_tol: float = 1e-6) -> TruncationLadder:
    """Geometric ladder k_j = k0 * ratio**j, j = 0..J."""
    if not (k0 > 0 and ratio > 1):
        raise ConfigurationError("need k0 > 0 and ratio > 1")
    if J < 1:
        raise ConfigurationError("need J >= 1")
    return TruncationLadder(tuple(k0 * ratio**j for j in range(J + 1)), stop_tol)


def ladder_to(k_final: float, ratio: float = 4.0, k0: float = 10.0, stop_tol: float = 1e-6) -> TruncationLadder:
    """Geometric ladder with the given ratio ending exactly at ``k_final``."""
    J = max(1, int(math.ceil(math.log(k_final / k0) / math.log(ratio) - 1e-9)))
    start = k_final / ratio**J
    return TruncationLadder(tuple(start * ratio**j for j in range(J + 1)), stop_tol)


def potential_from_config(spec: dict) -> Potential:
    """Build a potential from a config mapping such as {"kind": "powerlaw", "C": 1, "alpha": 2}."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigurationError("potential needs a 'kind'")
    kind = str(spec["kind"]).lower()
    if kind == "zero":
        return Zero()
    if kind == "constant":
        return Constant(float(spec.get("c", spec.get("C", 0.0))))
    if kind == "powerlaw":
        return PowerLaw(float(spec.get("C", 1.0)), float(spec["alpha"]), str(spec.get("anchor", "both")))
    raise ConfigurationError(f"unknown potential kind {kind!r}")


def required_min_spacing(V: Potential, k_max: float, floor: float = 1e-300) -> float:
    """Smallest length scale set by truncating V at ``k_max``.

    For a power law the truncation is active on d < (k_max / C)^(-1/alpha).
    """
    if isinstance(V, PowerLaw) and V.alpha > 0 and V.C > 0:
        return max(floor, (k_max / V.C) ** (-1.0 / V.alpha))
    return 1.0

