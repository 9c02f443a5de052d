"""Reference solutions of -u'' + V u = f by adaptive ODE integration.

This module deliberately shares no discretization code with the finite
volume solver.  Near a boundary point the problem is written in terms of
the distance s to that point and the logarithmic variable t = ln s.  The
solution vanishing at s = 0 satisfies the first order relation

    u' = y u + z,

where y = phi'/phi is the log-derivative of the homogeneous solution that
vanishes at s = 0 and z carries the source.  With Y = s y and zeta = z / s:

    dY/dt    = Y + s^2 V - Y^2 [+ s Y / (1 - s) on the disk]
    dzeta/dt = -f - (Y + 1) zeta [+ s zeta / (1 - s) on the disk]

Both are integrated away from the boundary, where they are stable.  The
profile w = u / s then follows from

    dw/dt = (Y - 1) w + s zeta,

integrated back toward the boundary (again the stable direction), and the
inward normal derivative is the limit of w as s -> 0.  The starting values
Y0 = (1 + sqrt(1 + 4 s0^2 V(s0))) / 2 and zeta0 = -f / (1 + Y0) are exact
for V = C / s^2 and otherwise their error decays like a power of s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp


class OracleError(RuntimeError):
    """The integrator failed at the requested tolerance."""


_LOG_S0 = -250.0 * math.log(10.0)
_Q_START = 1e6
_T_NEAR = math.log(1e-2)
_MAX_STEP_NEAR = 0.02


@dataclass(frozen=True)
class OracleProblem:
    """Closed-form data for the reference integrator.

    The potential is ``const + C * rho^(-alpha)`` (optionally ``min(., cutoff)``),
    where rho is the distance to the boundary, or on the interval the
    distance to the ``anchor`` endpoint ('left', 'right' or 'both').
    ``source`` is a vectorized callable of the coordinate x (interval) or r
    (radial disk).
    """

    geometry: str
    source: Callable[[np.ndarray], np.ndarray]
    C: float = 0.0
    alpha: float = 0.0
    const: float = 0.0
    anchor: str = "both"
    cutoff: float | None = None
    tol: float = 1e-11

    def __post_init__(self):
        if self.geometry not in ("interval", "disk"):
            raise ValueError("oracle geometry must be 'interval' or 'disk'")
        if self.tol < 1e-12:
            raise ValueError("oracle tolerance must be >= 1e-12")

    def log_v(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        with np.errstate(divide="ignore"):
            if self.C > 0:
                lv = math.log(self.C) - self.alpha * np.log(rho)
                if self.const > 0:
                    lv = np.logaddexp(lv, math.log(self.const))
            elif self.const > 0:
                lv = np.full(rho.shape, math.log(self.const))
            else:
                lv = np.full(rho.shape, -np.inf)
        if self.cutoff is not None:
            lv = np.minimum(lv, math.log(self.cutoff))
        return lv

    def kink(self) -> float | None:
        """Distance at which the cutoff becomes active, if any."""
        if self.cutoff is None or self.C <= 0 or self.alpha <= 0:
            return None
        rest = self.cutoff - self.const
        if rest <= 0:
            return 1.0
        return (rest / self.C) ** (-1.0 / self.alpha)


@dataclass
class OracleResult:
    points: np.ndarray
    values: np.ndarray
    derivative: dict[float, float]
    start_offset: dict[float, float] = field(default_factory=dict)


class _Side:
    """Riccati sweep from one boundary point up to the matching distance."""

    def __init__(self, problem: OracleProblem, q: Callable, f: Callable, s_match: float, disk: bool):
        self.problem = problem
        self.q = q  # s -> s^2 V at distance s
        self.f = f  # s -> source at distance s
        self.disk = disk
        self.t_match = math.log(s_match)
        self.t0 = self._start()
        self._sweep()

    def _start(self) -> float:
        ts = np.linspace(_LOG_S0, self.t_match, 4000)
        qs = self.q(np.exp(ts))
        if qs[0] <= _Q_START:
            return float(ts[0])
        ok = np.nonzero(qs <= _Q_START)[0]
        if ok.size == 0:
            raise OracleError("potential too large everywhere near the boundary")
        return float(ts[ok[0]])

    def _stiff(self) -> bool:
        ts = np.linspace(self.t0, self.t_match, 4000)
        return bool(np.max(self.q(np.exp(ts))) > 1e3)

    def _rhs(self, t, state):
        Y, zeta = state
        s = math.exp(t)
        q = float(self.q(np.array([s]))[0])
        f = float(self.f(np.array([s]))[0])
        dY = Y + q - Y * Y
        dz = -f - (Y + 1.0) * zeta
        if self.disk:
            c = s / (1.0 - s)
            dY += c * Y
            dz += c * zeta
        return [dY, dz]

    def _breaks(self) -> list[float]:
        pts = {self.t0, self.t_match}
        kink = self.problem.kink()
        if kink is not None and 0 < kink < 1:
            pts.add(math.log(kink))
        # the source varies on the unit scale in s: resolve s > S_NEAR with bounded steps
        pts.add(_T_NEAR)
        return sorted(t for t in pts if self.t0 <= t <= self.t_match)

    def _solve(self, fun, span, y0, dense=True):
        tol = self.problem.tol
        method = "Radau" if self._stiff() else "DOP853"
        # without a step cap the controller can step across the whole unit-scale
        # region after a long stretch where the source looks constant
        max_step = _MAX_STEP_NEAR if max(span) > _T_NEAR + 1e-12 else math.inf
        sol = solve_ivp(fun, span, y0, method=method, rtol=tol, atol=tol * 1e-3,
                        dense_output=dense, max_step=max_step)
        if not sol.success:
            raise OracleError(f"integration failed: {sol.message}")
        return sol

    def _sweep(self):
        s0 = math.exp(self.t0)
        q0 = float(self.q(np.array([s0]))[0])
        Y0 = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * q0))
        z0 = -float(self.f(np.array([s0]))[0]) / (1.0 + Y0)
        self.pieces = []
        state = [Y0, z0]
        br = self._breaks()
        for a, b in zip(br[:-1], br[1:]):
            sol = self._solve(self._rhs, (a, b), state)
            self.pieces.append((a, b, sol))
            state = list(sol.y[:, -1])
        self.Y_match, self.zeta_match = state

    def riccati(self, t: float) -> tuple[float, float]:
        for a, b, sol in self.pieces:
            if a <= t <= b:
                return tuple(sol.sol(t))
        a, b, sol = self.pieces[0] if t < self.pieces[0][0] else self.pieces[-1]
        return tuple(sol.sol(min(max(t, a), b)))

    def back_substitute(self, u_match: float, s_probe: np.ndarray) -> tuple[float, np.ndarray]:
        """Integrate w = u/s back to the start; return (limit of w, u at probes)."""

        def rhs(t, w):
            Y, zeta = self.riccati(t)
            s = math.exp(t)
            return [(Y - 1.0) * w[0] + s * zeta]

        s_match = math.exp(self.t_match)
        w_match = u_match / s_match
        s_probe = np.asarray(s_probe, dtype=float)
        t_probe = np.log(np.clip(s_probe, math.exp(self.t0), s_match))
        order = np.argsort(-t_probe)
        t_eval = t_probe[order]
        br = self._breaks()[::-1]
        w = [w_match]
        values = np.empty_like(s_probe)
        filled = np.zeros(s_probe.size, dtype=bool)
        for a, b in zip(br[:-1], br[1:]):
            sol = self._solve(rhs, (a, b), w, dense=True)
            sel = (t_eval <= a) & (t_eval >= b)
            idx = order[sel]
            if idx.size:
                values[idx] = sol.sol(t_probe[idx])[0] * s_probe[idx]
                filled[idx] = True
            w = [sol.y[0, -1]]
        values[~filled] = 0.0
        return float(w[0]), values


def _interval_sides(problem: OracleProblem):
    f = problem.source

    def q_for(side):
        def q(s):
            s = np.asarray(s, dtype=float)
            if problem.anchor == "both":
                rho = s
            elif problem.anchor == side:
                rho = s
            else:
                rho = 1.0 - s
            lv = problem.log_v(rho)
            with np.errstate(over="ignore"):
                return np.exp(np.minimum(2.0 * np.log(s) + lv, 700.0))
        return q

    left = _Side(problem, q_for("left"), lambda s: f(np.asarray(s)), 0.5, disk=False)
    right = _Side(problem, q_for("right"), lambda s: f(1.0 - np.asarray(s)), 0.5, disk=False)
    return left, right


def ode_solve(problem: OracleProblem, probes: Sequence[float] = ()) -> OracleResult:
    """Reference solution values at ``probes`` and inward derivatives at the boundary.

    Interval: ``derivative`` maps 0.0 and 1.0 to the inward derivatives.
    Disk (radial): ``derivative`` maps 1.0 (the radius of the boundary) to
    the inward derivative; probes are radii.
    """
    probes = np.asarray(probes, dtype=float)
    if problem.geometry == "interval":
        return _solve_interval(problem, probes)
    return _solve_radial(problem, probes)


def _solve_interval(problem: OracleProblem, probes: np.ndarray) -> OracleResult:
    left, right = _interval_sides(problem)
    m = 0.5
    yL, zL = left.Y_match / m, left.zeta_match * m
    yR, zR = right.Y_match / m, right.zeta_match * m
    u_m = -(zL + zR) / (yL + yR)
    on_left = probes <= m
    values = np.empty_like(probes)
    gL, vL = left.back_substitute(u_m, probes[on_left])
    gR, vR = right.back_substitute(u_m, 1.0 - probes[~on_left])
    values[on_left] = vL
    values[~on_left] = vR
    return OracleResult(probes, values, {0.0: gL, 1.0: gR},
                        {0.0: math.exp(left.t0), 1.0: math.exp(right.t0)})


def _solve_radial(problem: OracleProblem, probes: np.ndarray) -> OracleResult:
    f = problem.source
    r_match = 0.5

    def q(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore"):
            return np.exp(np.minimum(2.0 * np.log(s) + problem.log_v(s), 700.0))

    def v_of_r(r):
        return np.exp(problem.log_v(np.asarray(1.0 - r, dtype=float)))

    outer = _Side(problem, q, lambda s: f(1.0 - np.asarray(s)), 1.0 - r_match, disk=True)

    # regular part: -u'' - u'/r + V u = f from the center, two solutions
    r0 = 1e-4
    v0 = float(v_of_r(np.array([0.0]))[0])
    f0 = float(f(np.array([0.0]))[0])

    def rhs(r, y, with_source):
        u, du = y
        src = float(f(np.array([r]))[0]) if with_source else 0.0
        return [du, -du / r + float(v_of_r(np.array([r]))[0]) * u - src]

    def shoot(u0, with_source):
        src0 = f0 if with_source else 0.0
        c2 = (v0 * u0 - src0) / 4.0
        y0 = [u0 + c2 * r0 * r0, 2.0 * c2 * r0]
        sol = solve_ivp(rhs, (r0, r_match), y0, args=(with_source,), method="DOP853",
                        rtol=problem.tol, atol=problem.tol * 1e-3, dense_output=True, max_step=0.01)
        if not sol.success:
            raise OracleError(sol.message)
        return sol

    hom = shoot(1.0, False)
    par = shoot(0.0, True)
    U1, dU1 = hom.y[:, -1]
    U2, dU2 = par.y[:, -1]
    s_m = 1.0 - r_match
    y, z = outer.Y_match / s_m, outer.zeta_match * s_m
    # u'(r) = -(y u + z) at the matching radius
    a = -(dU2 + y * U2 + z) / (dU1 + y * U1)
    u_m = a * U1 + U2
    inner = probes < r_match
    values = np.empty_like(probes)
    rr = np.maximum(probes[inner], r0)
    values[inner] = a * hom.sol(rr)[0] + par.sol(rr)[0]
    # inside the starting radius use the series u = u0 + (V(0) u0 - f(0)) r^2 / 4
    centre = probes < r0
    values[centre] = a + (v0 * a - f0) * probes[centre] ** 2 / 4.0
    g, vo = outer.back_substitute(u_m, 1.0 - probes[~inner])
    values[~inner] = vo
    return OracleResult(probes, values, {1.0: g}, {1.0: math.exp(outer.t0)})


def truncation_limit_reference(problem: OracleProblem, levels: Sequence[float], a: float = 0.0,
                               exponent: float | None = None) -> tuple[float, np.ndarray]:
    """Normal derivative at ``a`` for each cutoff in ``levels`` and its extrapolated limit.

    When ``exponent`` p is given the fluxes are assumed to behave like
    g + A k^(-p) + B k^(-2p) and the last three levels are combined
    accordingly; otherwise the last value is returned.
    """
    fluxes = []
    for k in levels:
        res = ode_solve(_replace(problem, cutoff=float(k)))
        fluxes.append(res.derivative[a])
    fluxes = np.array(fluxes)
    if exponent is None or len(levels) < 3:
        return float(fluxes[-1]), fluxes
    k = np.array(levels[-3:], dtype=float)
    A = np.stack([np.ones(3), k ** (-exponent), k ** (-2 * exponent)], axis=1)
    coef = np.linalg.solve(A, fluxes[-3:])
    return float(coef[0]), fluxes


def _replace(problem: OracleProblem, **changes) -> OracleProblem:
    from dataclasses import replace

    return replace(problem, **changes)


def problem_for(potential, geometry: str, source: Callable, cutoff: float | None = None,
                tol: float = 1e-11) -> OracleProblem:
    """Translate a closed-form potential description into an oracle problem."""
    d = potential.describe()
    kind = d["kind"]
    if kind == "truncated":
        return problem_for_desc(d["base"], geometry, source, d["k"], tol)
    return problem_for_desc(d, geometry, source, cutoff, tol)


def problem_for_desc(d: dict, geometry: str, source: Callable, cutoff, tol) -> OracleProblem:
    kind = d["kind"]
    if kind == "zero":
        return OracleProblem(geometry, source, cutoff=cutoff, tol=tol)
    if kind == "constant":
        return OracleProblem(geometry, source, const=d["c"], cutoff=cutoff, tol=tol)
    if kind == "powerlaw":
        return OracleProblem(geometry, source, C=d["C"], alpha=d["alpha"], anchor=d.get("anchor", "both"),
                             cutoff=cutoff, tol=tol)
    raise ValueError(f"no closed form for potential kind {kind!r}")
