"""Command-line entry point: config-driven experiments with file outputs.

Every subcommand except ``verify`` reads a JSON config (``--config``) and
writes its artifacts to ``--out``.  Files are written to a temporary name
and renamed into place; numbers are printed with ``%.17g`` so identical
configs give identical bytes.  Exit codes: 0 ok, 1 failed golden check,
2 configuration or I/O error, 3 numerical error.  Errors are reported as one JSON
object on stderr and, when ``--out`` exists, as ``error.json``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import analysis, dynamics, greens, planar, surface
from .errors import ConfigError, HodgeVortexError, NumericalError
from .integrator import check_tolerances

__all__ = ["main", "run", "verify", "load_config", "GoldenCheck"]

EXIT_OK, EXIT_GOLDEN, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
SUBCOMMANDS = ("simulate", "section", "equilibria", "greens-table", "annulus", "verify")


# ---------------------------------------------------------------------------
# Config and output helpers


def bundled_configs() -> list[str]:
    """Names of the configs shipped with the package."""
    root = resources.files("hodgevortex") / "configs"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def load_config(path: str | os.PathLike[str]) -> dict[str, Any]:
    """Read a JSON config; a bare bundled name such as ``two_mode_section.json`` also works."""
    p = Path(path)
    if not p.exists() and p.name == str(path) and p.name in bundled_configs():
        text = (resources.files("hodgevortex") / "configs" / p.name).read_text()
    else:
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror}", key="config") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", key="config") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object", key="config")
    return cfg


def _get(cfg: Mapping[str, Any], key: str, kind: type | tuple[type, ...], default: Any = ...) -> Any:
    if key not in cfg:
        if default is ...:
            raise ConfigError(f"missing key {key!r}", key=key)
        return default
    value = cfg[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"key {key!r} has the wrong type", key=key)
    return value


def _tolerances(cfg: Mapping[str, Any], t_end: float) -> tuple[float, float]:
    rel_tol = _get(cfg, "rel_tol", float, 1e-10)
    abs_tol = _get(cfg, "abs_tol", float, 1e-12)
    try:
        check_tolerances(rel_tol, abs_tol, t_end)
    except ValueError as exc:
        key = next((k for k in ("rel_tol", "abs_tol") if k in str(exc)), "t_end")
        raise ConfigError(str(exc), key=key) from exc
    return rel_tol, abs_tol


def _vortices(cfg: Mapping[str, Any]) -> tuple[np.ndarray, np.ndarray]:
    """Vortices as ``{"x", "y", "gamma"}`` or ``{"position": [x, y], "strength"}`` objects."""
    entries = _get(cfg, "vortices", list)
    pos, gam = [], []
    for i, v in enumerate(entries):
        if not isinstance(v, Mapping):
            raise ConfigError(f"vortex {i} must be an object", key=f"vortices[{i}]")
        try:
            if "position" in v:
                xy = v["position"]
                if not (isinstance(xy, list) and len(xy) == 2):
                    raise ConfigError(f"vortex {i} position must be [x, y]", key=f"vortices[{i}].position")
                x, y = xy
            else:
                x, y = v["x"], v["y"]
            g = v["gamma"] if "gamma" in v else v["strength"]
            pos.append([float(x), float(y)])
            gam.append(float(g))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"vortex {i} needs x, y and gamma", key=f"vortices[{i}]") from exc
    return np.array(pos, dtype=float).reshape(-1, 2), np.array(gam, dtype=float)


def _surface(cfg: Mapping[str, Any]) -> tuple[surface.Lattice, surface.ConformalFactor]:
    if "r" in cfg or "R" in cfg:
        raise ConfigError("a torus experiment cannot carry annulus keys 'r'/'R'", key="r")
    return surface.surface_from_config(cfg)


def _fmt(x: float) -> str:
    return "%.17g" % x


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: Path, header: Sequence[str], rows: np.ndarray) -> None:
    rows = np.asarray(rows, dtype=float).reshape(-1, len(header))
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    _atomic_write(path, "\n".join(lines) + "\n")


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path: Path, data: Any) -> None:
    _atomic_write(path, json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def _check_experiment(cfg: Mapping[str, Any], name: str) -> None:
    kind = cfg.get("experiment", name)
    if kind != name:
        raise ConfigError(f"config is for experiment {kind!r}, not {name!r}", key="experiment")


# ---------------------------------------------------------------------------
# Experiments


def run_simulate(cfg: Mapping[str, Any], out: Path, threads: int = 1) -> dict[str, Any]:
    """Integrate vortices on a torus; writes ``trajectory.csv`` and ``summary.json``."""
    lattice, cf = _surface(cfg)
    pos, gam = _vortices(cfg)
    eta = _get(cfg, "eta", list, [0.0, 0.0])
    t_end = _get(cfg, "t_end", float)
    sample_dt = _get(cfg, "sample_dt", float, 0.1)
    rhs = _get(cfg, "rhs", str, "complete")
    if rhs not in ("complete", "incomplete"):
        raise ConfigError("rhs must be 'complete' or 'incomplete'", key="rhs")
    rel_tol, abs_tol = _tolerances(cfg, t_end)
    try:
        state = dynamics.VortexState(pos, gam, eta)
    except ValueError as exc:
        raise ConfigError(str(exc), key="vortices") from exc
    rec = dynamics.integrate(state, cf, lattice, rhs, t_end, rel_tol, abs_tol, sample_dt)
    n = state.count
    header = ["t"] + [f"{c}{j + 1}" for j in range(n) for c in ("x", "y")] + ["eta_x", "eta_y", "H", "Hvort", "Hharm"]
    flat_pos = rec.positions.reshape(len(rec.times), -1)
    rows = np.column_stack([rec.times, flat_pos, rec.eta, rec.H, rec.H_vort, rec.H_harm])
    _write_csv(out / "trajectory.csv", header, rows)
    summary = {
        "samples": len(rec.times),
        "t_final": float(rec.times[-1]),
        "H_initial": float(rec.H[0]),
        "H_drift_max": float(np.max(np.abs(rec.H - rec.H[0]))),
        "eta_drift_max": float(np.max(np.abs(rec.eta - rec.eta[0]))),
        "momentum_drift_max": float(np.max(np.abs(rec.momenta - rec.momenta[0]))),
        "halt_reason": rec.halt_reason,
        "steps": rec.stats.steps,
        "rejections": rec.stats.rejections,
    }
    _write_json(out / "summary.json", summary)
    return summary


def run_section(cfg: Mapping[str, Any], out: Path, threads: int = 1) -> dict[str, Any]:
    """Poincaré section at ``x = 0 mod 1`` with ``eta_x > 0``.

    Initial conditions sit at ``position`` with ``eta_y = eta_norm sin(angle)``
    and ``eta_x > 0`` completed from ``energy``.  Writes ``orbit_XXX.csv``
    (columns ``y,eta_y``) per angle and ``manifest.json``.
    """
    lattice, cf = _surface(cfg)
    energy = _get(cfg, "energy", float)
    position = _get(cfg, "position", list, [0.0, 0.5])
    eta_norm = _get(cfg, "eta_norm", float, 0.5)
    angles = _get(cfg, "angles", list)
    t_end = _get(cfg, "t_end", float)
    max_crossings = _get(cfg, "max_crossings", int, 500)
    bins = _get(cfg, "bins", int, 100)
    rel_tol, abs_tol = _tolerances(cfg, t_end)
    states = []
    for i, theta in enumerate(angles):
        try:
            states.append(
                analysis.complete_eta_x([position], [1.0], eta_norm * math.sin(float(theta)), energy, cf, lattice)
            )
        except ValueError as exc:
            raise ConfigError(str(exc), key=f"angles[{i}]") from exc
    spec = analysis.SectionSpec()
    bound = analysis.harmonic_speed_bound(energy, cf, lattice)

    def work(state: dynamics.VortexState) -> analysis.SectionOrbit:
        return analysis.poincare_section(
            [state], spec, energy, cf, lattice, t_end, max_crossings, rel_tol, abs_tol, allow_empty=True
        )[0]

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        orbits = list(pool.map(work, states))
    entries = []
    for i, (theta, orbit) in enumerate(zip(angles, orbits)):
        name = f"orbit_{i:03d}.csv"
        _write_csv(out / name, ["y", "eta_y"], orbit.points)
        entries.append(
            {
                "index": i,
                "angle": float(theta),
                "file": name,
                "initial_eta": orbit.initial.eta,
                "crossings": len(orbit),
                "t_final": orbit.t_final,
                "occupancy": analysis.section_occupancy(orbit.points, (0.0, 1.0), (-bound, bound), bins)
                if len(orbit)
                else 0.0,
                "max_energy_error": float(np.max(np.abs(orbit.energy_errors))) if len(orbit) else 0.0,
            }
        )
    manifest = {"energy": energy, "eta_bound": bound, "bins": bins, "orbits": entries}
    _write_json(out / "manifest.json", manifest)
    return manifest


def run_equilibria(cfg: Mapping[str, Any], out: Path, threads: int = 1) -> dict[str, Any]:
    """Single-vortex equilibria; writes ``equilibria.json``."""
    lattice, cf = _surface(cfg)
    grid = _get(cfg, "seeds", int, 4)
    extra = _get(cfg, "random_seeds", int, 0)
    seed = _get(cfg, "seed", int, 0)
    frac = (np.arange(grid) + 0.5) / grid
    U, V = np.meshgrid(frac, frac, indexing="ij")
    pts = np.stack([U, V], axis=-1).reshape(-1, 2)
    if extra:
        pts = np.vstack([pts, np.random.default_rng(seed).random((extra, 2))])
    search = analysis.find_equilibria(cf, lattice, lattice.cartesian(pts))
    rf = greens.RobinField(cf, lattice)
    items = []
    for eq in search.equilibria:
        value, _ = rf.value_grad(eq.point)
        items.append(
            {
                "point": eq.point,
                "kind": eq.kind,
                "rhs_norm": eq.rhs_norm,
                "robin": float(value),
                "hamiltonian": 0.5 * float(value),
                "hessian_eigenvalues": eq.hessian_eigenvalues,
            }
        )
    result = {"equilibria": items, "failed_seeds": len(search.failed_seeds)}
    _write_json(out / "equilibria.json", result)
    return result


def run_greens_table(cfg: Mapping[str, Any], out: Path, threads: int = 1) -> dict[str, Any]:
    """Green function from ``source`` (``quantity: green``) or the Robin function
    (``quantity: robin``) on an ``n x n`` grid of cell centres; writes ``greens_table.csv``.
    """
    lattice, cf = _surface(cfg)
    quantity = _get(cfg, "quantity", str, "green")
    if quantity not in ("green", "robin"):
        raise ConfigError("quantity must be 'green' or 'robin'", key="quantity")
    source = np.asarray(_get(cfg, "source", list, [0.0, 0.0]), dtype=float)
    n = _get(cfg, "grid", int, 16)
    tol = _get(cfg, "tol", float, 1e-12)
    if n < 1:
        raise ConfigError("grid must be positive", key="grid")
    frac = (np.arange(n) + 0.5) / n
    U, V = np.meshgrid(frac, frac, indexing="ij")
    pts = lattice.cartesian(np.stack([U, V], axis=-1).reshape(-1, 2))
    if quantity == "green":
        rows = []
        for p in pts:
            g = greens.green_conformal(cf, lattice, p, source, tol)
            rows.append([p[0], p[1], g.value, *g.grad_first_slot])
        header = ["x", "y", "G", "Gx", "Gy"]
    else:
        value, grad = greens.robin(greens.RobinField(cf, lattice), pts[:, 0], pts[:, 1])
        rows = np.column_stack([pts, value, grad])
        header = ["x", "y", "R", "Rx", "Ry"]
    _write_csv(out / "greens_table.csv", header, np.asarray(rows))
    summary = {"quantity": quantity, "source": source, "grid": n, "rows": len(rows)}
    _write_json(out / "greens_summary.json", summary)
    return summary


def run_annulus(cfg: Mapping[str, Any], out: Path, threads: int = 1) -> dict[str, Any]:
    """Reduced vortex dynamics in an annulus; writes ``trajectory.csv`` and ``summary.json``."""
    if "lattice" in cfg:
        raise ConfigError("an annulus experiment cannot carry a 'lattice'", key="lattice")
    try:
        dom = planar.AnnulusDomain(_get(cfg, "r", float), _get(cfg, "R", float))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), key="r") from exc
    p = _get(cfg, "p", (float, list), 0.0)
    try:
        circ = planar.CirculationVector(p)
        circ.inner
    except ValueError as exc:
        raise ConfigError(str(exc), key="p") from exc
    pos, gam = _vortices(cfg)
    t_end = _get(cfg, "t_end", float)
    sample_dt = _get(cfg, "sample_dt", float, 0.1)
    rel_tol, abs_tol = _tolerances(cfg, t_end)
    traj = planar.integrate_annulus(dom, pos, gam, circ, t_end, rel_tol, abs_tol, sample_dt)
    report = planar.schottky_diagnostics(traj)
    n = len(gam)
    header = ["t"] + [f"{c}{j + 1}" for j in range(n) for c in ("x", "y")] + ["B", "H_red"]
    rows = np.column_stack([traj.times, traj.positions.reshape(len(traj.times), -1), traj.B, traj.H_red])
    _write_csv(out / "trajectory.csv", header, rows)
    cap = planar.capacity_annulus(dom)
    summary = {
        "P": cap.P,
        "Q": cap.Q,
        "p_initial": report.p_initial,
        "p_drift_max": report.p_drift_max,
        "H_drift_max": report.H_drift_max,
        "impulsive_p": report.impulsive_p,
        "halt_reason": traj.halt_reason,
    }
    _write_json(out / "summary.json", summary)
    return summary


EXPERIMENTS: dict[str, Callable[[Mapping[str, Any], Path, int], dict[str, Any]]] = {
    "simulate": run_simulate,
    "section": run_section,
    "equilibria": run_equilibria,
    "greens-table": run_greens_table,
    "annulus": run_annulus,
}


# ---------------------------------------------------------------------------
# Golden checks


@dataclass(frozen=True)
class GoldenCheck:
    """Outcome of one golden value."""

    name: str
    passed: bool
    detail: str


def _golden_items() -> list[tuple[str, Callable[[], tuple[bool, str]]]]:
    square = surface.make_lattice((1.0, 0.0), (0.0, 1.0))
    metric = surface.two_mode_metric()

    def rho_max() -> tuple[bool, str]:
        value, _ = surface.eval_rho(metric, 0.0, 0.25, square)
        return abs(float(value) - 1.5) < 1e-12, f"rho(0, 1/4) = {float(value):.12g}"

    def robin_value() -> tuple[bool, str]:
        rf = greens.RobinField(metric, square)
        value, _ = greens.robin(rf, 0.0, 0.25)
        return abs(float(value) - 0.00694) < 1e-3, f"R(0, 1/4) = {float(value):.9g}"

    def equilibria() -> tuple[bool, str]:
        found = analysis.find_equilibria(metric, square).equilibria
        expected = {(0.0, 0.25): "max", (0.0, 0.75): "saddle", (0.5, 0.25): "saddle", (0.5, 0.75): "min"}
        ok = len(found) == 4
        for eq in found:
            key = min(expected, key=lambda k: float(square.distance(eq.point, np.array(k))))
            ok &= float(square.distance(eq.point, np.array(key))) < 1e-8
            ok &= expected[key] == eq.kind and eq.rhs_norm < 1e-8
        return bool(ok), f"{len(found)} equilibria"

    def winding() -> tuple[bool, str]:
        state = dynamics.VortexState([[0.3, 0.4]], [1.0], (0.5, 0.25))
        rate = dynamics.rhs_complete(state, surface.ConformalFactor.flat(), square)
        err = float(np.max(np.abs(rate.velocities[0] - [0.5, 0.25])) + np.max(np.abs(rate.eta_dot)))
        return err < 1e-12, f"velocity error {err:.2e}"

    def hat_trick() -> tuple[bool, str]:
        base = [(0.13, 0.37), (0.61, 0.22), (0.44, 0.83)]
        rep = greens.hat_trick_check(square, "a", base)
        return rep.max_residual < 1e-6 and rep.max_jump_error < 1e-4, (
            f"residual {rep.max_residual:.2e}, jump error {rep.max_jump_error:.2e}"
        )

    def pancake() -> tuple[bool, str]:
        jumps = planar.double_disk_matching(0.4)
        mean = planar.double_disk_mean()
        return max(jumps) < 1e-8 and abs(mean) < 1e-8, f"jumps {max(jumps):.2e}, mean {mean:.2e}"

    def sphere() -> tuple[bool, str]:
        value = planar.green_sphere(0.0, 1.0).value
        expected = -(math.log(0.5) + 1) / (4 * math.pi)
        return abs(value - expected) < 1e-14, f"G(0, 1) = {value:.9g}"

    def capacity() -> tuple[bool, str]:
        dom = planar.AnnulusDomain(1.0, math.exp(math.pi))
        cap = planar.capacity_annulus(dom)
        return abs(cap.Q - 1) < 1e-14 and abs(cap.P - 1) < 1e-14, f"Q = {cap.Q:.15g}"

    def lin_circulation() -> tuple[bool, str]:
        dom = planar.AnnulusDomain(0.5, 2.0)
        w = 1.1 * complex(math.cos(0.7), math.sin(0.7))
        errs = []
        for p1 in (0.0, 1.0):
            circ = planar.boundary_circulation(dom, lambda z: planar.green_hydro(dom, z, w, p1).grad_first_slot)
            errs.append(abs(circ + p1))
        return max(errs) < 1e-6, f"circulation error {max(errs):.2e}"

    def impulsive() -> tuple[bool, str]:
        dom = planar.AnnulusDomain(0.5, 2.0)
        p1 = planar.impulsive_circulation(dom, [[dom.symmetry_radius, 0.0]], [1.0])
        return abs(p1 - 0.5) < 1e-14, f"p1 = {p1:.15g}"

    return [
        ("rho at the density maximum", rho_max),
        ("Robin value R(0, 1/4)", robin_value),
        ("four single-vortex equilibria", equilibria),
        ("flat winding geodesic velocity", winding),
        ("hat-trick differential and jump", hat_trick),
        ("disk double matching and mean", pancake),
        ("round sphere Green value", sphere),
        ("annulus capacity at log(R/r) = pi", capacity),
        ("hydrodynamic circulation", lin_circulation),
        ("impulsive-start circulation", impulsive),
    ]


def verify(stream=None) -> list[GoldenCheck]:
    """Run the golden checks and print one pass/fail line per item."""
    stream = sys.stdout if stream is None else stream
    results = []
    for name, check in _golden_items():
        start = time.perf_counter()
        try:
            passed, detail = check()
        except HodgeVortexError as exc:
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        elapsed = time.perf_counter() - start
        results.append(GoldenCheck(name, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail} ({elapsed:.2f} s)", file=stream)
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} golden checks passed", file=stream)
    return results


# ---------------------------------------------------------------------------
# Entry point


def _error_record(exc: BaseException, kind: str) -> dict[str, Any]:
    record = {"error": type(exc).__name__, "kind": kind, "message": str(exc)}
    key = getattr(exc, "key", None)
    if key is not None:
        record["key"] = key
    return record


def run(command: str, config: str | None, out: str | None, threads: int = 1) -> int:
    """Dispatch ``command``; returns the process exit code."""
    if command == "verify":
        return EXIT_OK if all(r.passed for r in verify()) else EXIT_GOLDEN
    out_dir = Path(out) if out else Path.cwd()
    try:
        if config is None:
            raise ConfigError("--config is required", key="config")
        cfg = load_config(config)
        _check_experiment(cfg, command)
        EXPERIMENTS[command](cfg, out_dir, threads)
    except ConfigError as exc:
        return _report(exc, "config", out_dir, EXIT_CONFIG)
    except NumericalError as exc:
        return _report(exc, "numerical", out_dir, EXIT_NUMERICAL)
    except ValueError as exc:
        return _report(exc, "config", out_dir, EXIT_CONFIG)
    except OSError as exc:
        return _report(exc, "io", out_dir, EXIT_CONFIG)
    return EXIT_OK


def _report(exc: BaseException, kind: str, out_dir: Path, code: int) -> int:
    record = _error_record(exc, kind)
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    try:
        _write_json(out_dir / "error.json", record)
    except OSError:
        pass
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hodgevortex", description="Point vortices with harmonic flows.")
    parser.add_argument("command", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="JSON config path or the name of a bundled config")
    parser.add_argument("--out", help="output directory (default: current directory)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for independent orbits")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        exc = ConfigError("--threads must be positive", key="threads")
        return _report(exc, "config", Path(args.out or "."), EXIT_CONFIG)
    return run(args.command, args.config, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
