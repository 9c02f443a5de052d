"""Command line runner.

    hopflab <solve|hopf-scan|sigma|measure-bvp|oracle-compare> --config cfg.json [--out DIR]
            [--threads N] [--seed S]

Every command reads one JSON config, writes plot-ready CSV (and for some
commands a JSON side file) into ``--out`` and exits with 0 on success, 2 on
a configuration error and 3 on a numerical failure.  CSV files start with
'#' metadata lines carrying the code version and the config, followed by a
header row; floats are written with 17 significant digits and rows come in
a canonical order, so re-running a config reproduces the CSV body byte for
byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from . import __version__
from .boundary import normal_derivative_report, pointwise_normal_derivative, sample_disk
from .geometry import (
    DISK,
    BoundaryPoint,
    ConfigurationError,
    DomainError,
    DomainGeometry,
    DomainKind,
    Grid,
    build_grid,
)
from .oracle import OracleError, ode_solve, problem_for
from .potential import Potential, PowerLaw, TruncationLadder, ladder_to, potential_from_config
from .singular import BoundaryMeasure, GridBugError, classify_sigma, measure_bvp
from .solver import (
    SolverError,
    SourceField,
    energy,
    named_source,
    resolving_interval_grid,
    solve_limit,
    source_function,
)

log = logging.getLogger("hopflab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ConfigurationError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _num(value: Any, key: str) -> float:
    try:
        out = float(value) if not isinstance(value, bool) else math.nan
    except (TypeError, ValueError):
        out = math.nan
    if math.isnan(out):
        raise ConfigError(f"'{key}' must be a number (got {value!r})")
    return out


def _int(value: Any, key: str) -> int:
    x = _num(value, key)
    if x != int(x):
        raise ConfigError(f"'{key}' must be an integer (got {value!r})")
    return int(x)


def _require(cfg: dict, key: str) -> Any:
    if key not in cfg:
        raise ConfigError(f"missing required key '{key}'")
    return cfg[key]


@dataclass
class LadderSpec:
    k0: float = 10.0
    ratio: float = 4.0
    k_final: float = 1e120
    stop_tol: float = 1e-6
    early_stop: bool = True

    def build(self) -> TruncationLadder:
        return ladder_to(self.k_final, self.ratio, self.k0, self.stop_tol)


@dataclass
class ExperimentConfig:
    raw: dict
    domain: DomainGeometry
    potential: dict | None
    source: str
    grid: dict
    ladder: LadderSpec
    eps: list[float] | None
    points: list[float]
    tol: float
    seed: int

    def make_potential(self, spec: dict | None = None) -> Potential:
        try:
            return potential_from_config(_decimal_dict(spec or self.potential))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad potential: {exc}") from None

    def make_grid(self, V: Potential) -> Grid:
        g = self.grid
        if self.domain.kind is DomainKind.DISK:
            return build_grid(DISK, _int(g.get("resolution", 100), "grid.resolution"),
                              _int(g["n_angles"], "grid.n_angles") if "n_angles" in g else None)
        if "resolution" in g:
            return build_grid(self.domain, _int(g["resolution"], "grid.resolution"))
        return resolving_interval_grid(V, self.ladder.k_final, _num(g.get("ratio", 1.02), "grid.ratio"),
                                       _num(g.get("h_max", 2e-3), "grid.h_max"))

    def boundary_points(self) -> list[BoundaryPoint]:
        try:
            return [BoundaryPoint(self.domain, p) for p in self.points]
        except DomainError as exc:
            raise ConfigError(f"bad boundary point: {exc}") from None

    def make_source(self, grid: Grid) -> SourceField:
        return named_source(grid, self.source)


def _decimal_dict(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if k in ("kind", "anchor"):
            out[k] = v
        else:
            out[k] = _num(v, f"potential.{k}")
    return out


def parse_config(raw: dict, need_potential: bool = True) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    try:
        domain = DomainGeometry.from_name(str(raw.get("domain", "interval")))
    except ConfigurationError as exc:
        raise ConfigError(str(exc)) from None
    potential = _require(raw, "potential") if need_potential else raw.get("potential")
    if potential is not None and not isinstance(potential, dict):
        raise ConfigError("'potential' must be an object")
    lad = raw.get("ladder", {})
    if not isinstance(lad, dict):
        raise ConfigError("'ladder' must be an object")
    ladder = LadderSpec(
        _num(lad.get("k0", 10), "ladder.k0"),
        _num(lad.get("ratio", 4), "ladder.ratio"),
        _num(lad.get("k_final", 1e120), "ladder.k_final"),
        _num(lad.get("stop_tol", 1e-6), "ladder.stop_tol"),
        bool(lad.get("early_stop", True)),
    )
    if not (ladder.k0 > 0 and ladder.ratio > 1 and ladder.k_final > ladder.k0):
        raise ConfigError("ladder needs k0 > 0, ratio > 1 and k_final > k0")
    default_points = [0, 1] if domain.kind is DomainKind.INTERVAL else [2 * math.pi * m / 16 for m in range(16)]
    points = [_num(p, "points") for p in raw.get("points", default_points)]
    eps = raw.get("eps")
    if eps is not None:
        eps = [_num(e, "eps") for e in eps]
    tol = _num(raw.get("tol", 1e-10), "tol")
    if not tol > 0:
        raise ConfigError("'tol' must be positive")
    source = str(raw.get("source", "one"))
    try:
        source_function(source)
    except ConfigurationError as exc:
        raise ConfigError(str(exc)) from None
    grid = raw.get("grid", {})
    if not isinstance(grid, dict):
        raise ConfigError("'grid' must be an object")
    return ExperimentConfig(raw, domain, potential, source, grid, ladder, eps, points, tol,
                            _int(raw.get("seed", 0), "seed"))


# ---------------------------------------------------------------------------
# output


def fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.17g}"
    return str(x)


def write_csv(path: Path, command: str, cfg: ExperimentConfig, header: list[str], rows: Iterable[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# hopflab {__version__}\n")
        fh.write(f"# command: {command}\n")
        fh.write(f"# seed: {cfg.seed}\n")
        fh.write("# config: " + json.dumps(cfg.raw, sort_keys=True, separators=(",", ":")) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else fmt(x)
    return x


def write_json(path: Path, command: str, cfg: ExperimentConfig, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"version": __version__, "command": command, "seed": cfg.seed, "config": cfg.raw, **payload}
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def read_csv_body(path: Path) -> str:
    """CSV text without the '#' metadata lines."""
    return "".join(line for line in Path(path).read_text().splitlines(keepends=True) if not line.startswith("#"))


def _map(fn: Callable, items: list, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg: ExperimentConfig, out: Path, threads: int) -> None:
    V = cfg.make_potential()
    grid = cfg.make_grid(V)
    f = cfg.make_source(grid)
    amp = _num(cfg.raw.get("perturbation", 0.0), "perturbation")
    if amp:
        # seeded nonnegative perturbation of the source, for sensitivity runs
        rng = np.random.default_rng(cfg.seed)
        f = SourceField(grid, f.values + amp * rng.random(grid.size), f.boundary_values, f.name + "+noise")
    L = solve_limit(grid, V, cfg.ladder.build(), f, cfg.tol, cfg.ladder.early_stop)
    if grid.is_interval:
        left, right = grid.endpoint_distances
        rows = [[x, dl, dr, u] for x, dl, dr, u in zip(grid.x, left, right, L.u)]
        header = ["x", "dist_left", "dist_right", "u"]
    else:
        pts = grid.points
        rr = np.repeat(grid.r, grid.n_angles)
        pp = np.tile(grid.phi, grid.r.size)
        rows = [[r, p, xy[0], xy[1], u] for r, p, xy, u in zip(rr, pp, pts, L.u)]
        header = ["r", "phi", "x", "y", "u"]
    write_csv(out / "solution.csv", "solve", cfg, header, rows)
    ders = {}
    for a in cfg.boundary_points():
        rep = normal_derivative_report(L, f, a, cfg.tol, eps=cfg.eps)
        ders[a.label()] = rep.row() | {"method": rep.pointwise.method}
    write_json(out / "diagnostics.json", "solve", cfg, {
        "grid": grid.label,
        "nodes": grid.size,
        "cutoffs": L.cutoffs,
        "increments": L.increments,
        "absorption": L.absorption,
        "source_l1": f.l1,
        "residual": L.final.residual,
        "energy": energy(grid, V, L.u, f, L.cutoffs[-1]),
        "converged": L.converged,
        "normal_derivatives": ders,
    })


def _scan_cells(cfg: ExperimentConfig) -> list[tuple[float, float]]:
    scan = _require(cfg.raw, "scan")
    if not isinstance(scan, dict):
        raise ConfigError("'scan' must be an object")
    alphas = [_num(a, "scan.alpha") for a in _require(scan, "alpha")]
    Cs = [_num(c, "scan.C") for c in scan.get("C", [1])]
    if not alphas or not Cs:
        raise ConfigError("hopf-scan needs a non-empty 'scan.alpha' and 'scan.C'")
    cells = {(a, c) for a in alphas for c in Cs}
    for extra in scan.get("extra", []):
        cells.add((_num(_require(extra, "alpha"), "scan.extra.alpha"), _num(_require(extra, "C"), "scan.extra.C")))
    return sorted(cells)


def cmd_hopf_scan(cfg: ExperimentConfig, out: Path, threads: int) -> None:
    cells = _scan_cells(cfg)
    anchor = str(cfg.raw.get("anchor", "both"))
    points = cfg.boundary_points()

    def run(cell):
        alpha, C = cell
        V = PowerLaw(C, alpha, anchor)
        grid = cfg.make_grid(V)
        f = cfg.make_source(grid)
        L = solve_limit(grid, V, cfg.ladder.build(), f, cfg.tol, cfg.ladder.early_stop)
        rows = []
        for a in points:
            rep = normal_derivative_report(L, f, a, cfg.tol, eps=cfg.eps)
            pw = rep.pointwise
            rows.append([alpha, C, a.coordinate, pw.g, pw.fluxes[-1], rep.quotient.limit, rep.quotient.error,
                         rep.poisson.value, rep.poisson.divergent, pw.decreasing, L.n_levels, L.cutoffs[-1],
                         rep.hopf_positive, rep.classical_exists and rep.representation_holds])
        return rows

    rows = [r for rs in _map(run, cells, threads) for r in rs]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    write_csv(out / "hopf_scan.csv", "hopf-scan", cfg,
              ["alpha", "C", "a", "g", "g_last_level", "quotient", "quotient_err", "poisson", "poisson_divergent",
               "decreasing", "levels", "k_final", "hopf_positive", "in_N"], rows)


def cmd_sigma(cfg: ExperimentConfig, out: Path, threads: int) -> None:
    V = cfg.make_potential()
    grid = cfg.make_grid(V)
    ladder = cfg.ladder.build()

    def run(a):
        return classify_sigma(cfg.domain, V, grid, ladder, a, cfg.tol)

    reps = _map(run, cfg.boundary_points(), threads)
    keys = ["a", "ancona_value_or_inf", "pa_mass_final", "alpha_hat", "verdict", "consistent"]
    rows = sorted(([r.row()[k] for k in keys] for r in reps), key=lambda r: r[0])
    write_csv(out / "sigma.csv", "sigma", cfg, keys, rows)


def _measure(cfg: ExperimentConfig) -> BoundaryMeasure:
    spec = _require(cfg.raw, "measure")
    if not isinstance(spec, dict):
        raise ConfigError("'measure' must be an object")
    atoms = []
    for item in spec.get("atoms", []):
        try:
            p, m = _num(item["a"], "measure.atoms.a"), _num(item["mass"], "measure.atoms.mass")
        except (KeyError, TypeError):
            raise ConfigError("each atom needs 'a' and 'mass'") from None
        if m < 0:
            raise ConfigError("measure masses must be nonnegative")
        try:
            atoms.append((BoundaryPoint(cfg.domain, p), m))
        except DomainError as exc:
            raise ConfigError(str(exc)) from None
    density = None
    bound = None
    if "density" in spec:
        if cfg.domain.kind is not DomainKind.DISK:
            raise ConfigError("a boundary density needs the disk domain")
        d = spec["density"]
        if not isinstance(d, dict):
            raise ConfigError("'measure.density' must be an object")
        c0 = _num(d.get("constant", 0.0), "measure.density.constant")
        c1 = _num(d.get("cos", 0.0), "measure.density.cos")
        if c0 - abs(c1) < 0:
            raise ConfigError("density must be nonnegative")
        density = lambda phi: c0 + c1 * np.cos(phi)  # noqa: E731
        bound = c0 + abs(c1)
    try:
        return BoundaryMeasure(cfg.domain, tuple(atoms), density, bound)
    except ConfigurationError as exc:
        raise ConfigError(str(exc)) from None


def cmd_measure_bvp(cfg: ExperimentConfig, out: Path, threads: int) -> None:
    nu = _measure(cfg)
    V = cfg.make_potential()
    grid = cfg.make_grid(V)
    res = measure_bvp(grid, V, cfg.ladder.build(), nu, cfg.tol, _num(cfg.raw.get("defect_tol", 1e-3), "defect_tol"))
    if grid.is_interval:
        left, right = grid.endpoint_distances
        rows = [[x, dl, dr, u] for x, dl, dr, u in zip(grid.x, left, right, res.u)]
        header = ["x", "dist_left", "dist_right", "v"]
    else:
        rr = np.repeat(grid.r, grid.n_angles)
        pp = np.tile(grid.phi, grid.r.size)
        rows = [[r, p, u] for r, p, u in zip(rr, pp, res.u)]
        header = ["r", "phi", "v"]
    write_csv(out / "measure_solution.csv", "measure-bvp", cfg, header, rows)
    write_json(out / "defect.json", "measure-bvp", cfg, {
        "nu_total_mass": nu.total_mass,
        "defect_atoms": [{"a": a.coordinate, "mass": m} for a, m in res.defect.atoms],
        "defect_total_mass": res.defect.total_mass,
        "has_distributional_solution": res.has_distributional_solution,
        "atom_duals": [{"a": P.point.coordinate, "mass": P.mass, "alpha_hat": P.alpha_hat, "verdict": P.verdict,
                        "cutoffs": P.cutoffs, "masses": P.masses}
                       for P in res.duals],
    })


def _radial_check(cfg: ExperimentConfig, V: Potential) -> None:
    if cfg.domain.kind is DomainKind.DISK:
        if V.at_distance(np.array([0.5])) is None:
            raise ConfigError("oracle-compare needs a radial potential on the disk")
        if cfg.source != "one":
            raise ConfigError("oracle-compare on the disk supports only the radial source 'one'")
        if "measure" in cfg.raw:
            raise ConfigError("oracle-compare does not take boundary measures")


def cmd_oracle_compare(cfg: ExperimentConfig, out: Path, threads: int) -> None:
    V = cfg.make_potential()
    _radial_check(cfg, V)
    grid = cfg.make_grid(V)
    f = cfg.make_source(grid)
    L = solve_limit(grid, V, cfg.ladder.build(), f, cfg.tol, cfg.ladder.early_stop)
    disk = cfg.domain.kind is DomainKind.DISK
    probes = [_num(p, "probes") for p in cfg.raw.get("probes", [0.1, 0.25, 0.5, 0.75, 0.9] if not disk
                                                         else [0.0, 0.25, 0.5, 0.75, 0.9])]
    try:
        prob = problem_for(V, cfg.domain.kind.value, source_function(cfg.source),
                           tol=_num(cfg.raw.get("oracle_tol", 1e-11), "oracle_tol"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ref = ode_solve(prob, probes)
    rows = []
    for p, u_ref in zip(probes, ref.values):
        if disk:
            u_fd = float(sample_disk(grid, L.u, np.array([p]), np.array([0.0]))[0]) if p >= grid.r[0] \
                else float(np.mean(L.u.reshape(grid.shape)[0]))
        else:
            u_fd = float(np.interp(p, grid.x, L.u))
        rows.append(["u", p, u_fd, u_ref])
    for a in cfg.boundary_points():
        key = 1.0 if disk else a.coordinate
        rows.append(["g", a.coordinate, pointwise_normal_derivative(L, a).g, ref.derivative[key]])
    out_rows = []
    for q, loc, fd, orc in rows:
        err = abs(fd - orc)
        rel = err / abs(orc) if orc != 0 else math.inf
        ok = err <= max(1e-3 * abs(orc), 1e-6)
        out_rows.append([q, loc, fd, orc, err, rel, ok])
    write_csv(out / "oracle_compare.csv", "oracle-compare", cfg,
              ["quantity", "location", "fd", "oracle", "abs_err", "rel_err", "within_tolerance"], out_rows)


COMMANDS = {
    "solve": (cmd_solve, True),
    "hopf-scan": (cmd_hopf_scan, False),
    "sigma": (cmd_sigma, True),
    "measure-bvp": (cmd_measure_bvp, True),
    "oracle-compare": (cmd_oracle_compare, True),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hopflab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, type=Path, help="JSON experiment config")
    ap.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for independent cells")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn, need_potential = COMMANDS[args.command]
    try:
        raw = json.loads(args.config.read_text())
        if args.seed is not None and isinstance(raw, dict):
            raw["seed"] = args.seed
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = parse_config(raw, need_potential)
        fn(cfg, args.out, args.threads)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigurationError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, OracleError, GridBugError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
