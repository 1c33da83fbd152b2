"""Diagnostics built on the torus dynamics.

Poincaré sections, equilibrium search, dipole-versus-geodesic shadowing and
the divergence between the complete and the incomplete system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

from .dynamics import (
    COLLISION_THRESHOLD,
    TrajectoryRecord,
    VortexState,
    hamiltonian,
    integrate,
    rhs_complete,
    torus_model,
)
from .errors import CollisionError, NewtonDiverged, NoCrossings, NoIsolatedEquilibria, PairDissociated
from .greens import RobinField
from .integrator import check_tolerances, run_adaptive
from .surface import ConformalFactor, Lattice

__all__ = [
    "SectionSpec",
    "SectionOrbit",
    "Equilibrium",
    "EquilibriumSearch",
    "DipoleProbe",
    "Divergence",
    "complete_eta_x",
    "poincare_section",
    "section_occupancy",
    "harmonic_speed_bound",
    "find_equilibria",
    "dipole_probe",
    "geodesic",
    "complete_vs_incomplete",
]


# ---------------------------------------------------------------------------
# Poincaré sections


@dataclass(frozen=True)
class SectionSpec:
    """Crossing condition on the packed state ``[x1, y1, ..., eta_x, eta_y]``.

    A crossing is recorded when ``state[coordinate] - value`` passes an
    integer and ``state[sign_index] > 0`` there.  The recorded point is
    ``state[projection]``; position entries of the projection are reduced mod
    1.  Negative indices count from the end, so ``-2`` is ``eta_x``.  Reducing
    mod 1 assumes the matching lattice generator is a unit coordinate vector,
    as on the square torus.
    """

    coordinate: int = 0
    value: float = 0.0
    sign_index: int = -2
    projection: tuple[int, int] = (1, -1)


@dataclass(frozen=True, eq=False)
class SectionOrbit:
    """Crossings of one orbit."""

    initial: VortexState
    points: NDArray[np.float64]
    times: NDArray[np.float64]
    residuals: NDArray[np.float64]
    energy_errors: NDArray[np.float64]
    t_final: float

    def __len__(self) -> int:
        return len(self.points)


def complete_eta_x(
    positions: ArrayLike,
    strengths: ArrayLike,
    eta_y: float,
    energy: float,
    cf: ConformalFactor,
    lattice: Lattice,
) -> VortexState:
    """State with ``eta_x >= 0`` chosen so that the total energy is ``energy``."""
    trial = VortexState(np.asarray(positions, float).reshape(-1, 2), strengths, (0.0, eta_y))
    _, h_vort, _ = hamiltonian(trial, cf, lattice)
    sq = 2.0 * (energy - h_vort) - eta_y * eta_y
    if sq < 0.0:
        raise ValueError(f"energy {energy} is unreachable with eta_y={eta_y}")
    return VortexState(trial.positions, trial.strengths, (math.sqrt(sq), eta_y))


def _is_position(index: int, size: int) -> bool:
    return (index % size) < size - 2


def poincare_section(
    initial_conditions: Sequence[VortexState],
    spec: SectionSpec,
    energy: float,
    cf: ConformalFactor,
    lattice: Lattice,
    t_end: float,
    max_crossings: int | None = None,
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-12,
    energy_tol: float = 1e-10,
    allow_empty: bool = False,
    max_step: float = 0.25,
) -> list[SectionOrbit]:
    """Record section crossings of each orbit.

    Crossings are located from sign changes between accepted steps and
    refined by bisection on the dense output to ``1e-10`` in time.  Orbits
    stop at ``t_end`` or after ``max_crossings`` crossings.

    Raises
    ------
    NoCrossings
        If an orbit never crosses and ``allow_empty`` is unset.
    """
    check_tolerances(rel_tol, abs_tol, t_end)
    orbits = []
    for state in initial_conditions:
        h0, _, _ = hamiltonian(state, cf, lattice)
        if abs(h0 - energy) > energy_tol:
            raise ValueError(f"initial condition has energy {h0!r}, expected {energy!r}")
        orbits.append(
            _section_orbit(state, spec, energy, cf, lattice, t_end, max_crossings, rel_tol, abs_tol, max_step)
        )
        if not len(orbits[-1]) and not allow_empty:
            raise NoCrossings(f"orbit {len(orbits) - 1} has no crossings up to t={t_end}")
    return orbits


def _section_orbit(state, spec, energy, cf, lattice, t_end, max_crossings, rel_tol, abs_tol, max_step):
    model = torus_model(cf, lattice)
    gam = state.strengths
    size = 2 * state.count + 2
    ci, si = spec.coordinate, spec.sign_index
    pi, pj = spec.projection
    points, times, residuals, states = [], [], [], []

    def level(y: NDArray[np.float64]) -> float:
        return float(y[ci]) - spec.value

    def hook(t_old: float, t_new: float, dense) -> bool:
        c_old, c_new = level(dense(t_old)), level(dense(t_new))
        lo, hi = sorted((c_old, c_new))
        for k in range(math.floor(lo) + 1, math.floor(hi) + 1):
            a, b = t_old, t_new
            fa = level(dense(a)) - k
            while b - a > 1e-10:
                m = 0.5 * (a + b)
                fm = level(dense(m)) - k
                if (fm < 0) == (fa < 0):
                    a, fa = m, fm
                else:
                    b = m
            tc = 0.5 * (a + b)
            y = dense(tc)
            if y[si] > 0:
                p = [float(y[pi]), float(y[pj])]
                for slot, idx in enumerate((pi, pj)):
                    if _is_position(idx, size):
                        p[slot] %= 1.0
                points.append(p)
                states.append(y)
                times.append(tc)
                residuals.append(level(y) - k)
                if max_crossings is not None and len(points) >= max_crossings:
                    return True
        return False

    run = run_adaptive(
        lambda _t, y: model.rhs(y, gam, True),
        state.pack(),
        t_end,
        rel_tol,
        abs_tol,
        sample_dt=None,
        max_step=max_step,
        on_step=hook,
    )
    pts = np.array(points, dtype=float).reshape(-1, 2)
    tms = np.array(times, dtype=float)
    energy_err = np.array(
        [model.vortex_energy(y[:-2].reshape(-1, 2), gam) + 0.5 * float(y[-2:] @ y[-2:]) - energy for y in states]
    )
    return SectionOrbit(state, pts, tms, np.array(residuals), energy_err, float(run.times[-1]))


def section_occupancy(
    points: ArrayLike,
    first_range: tuple[float, float] = (0.0, 1.0),
    second_range: tuple[float, float] = (-1.0, 1.0),
    bins: int = 100,
) -> float:
    """Fraction of occupied cells of a ``bins x bins`` grid over the section."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    hist, _, _ = np.histogram2d(p[:, 0], p[:, 1], bins=bins, range=[first_range, second_range])
    return float(np.count_nonzero(hist)) / bins**2


def harmonic_speed_bound(energy: float, cf: ConformalFactor, lattice: Lattice, strength: float = 1.0) -> float:
    """Largest ``|eta|`` a single vortex can have at the given energy.

    Uses ``|eta|^2 = 2 H - G^2 R(s)`` and the minimum of the Robin function.
    """
    rf = RobinField(cf, lattice)
    n = 256
    g = np.arange(n) / n
    U, V = np.meshgrid(g, g, indexing="ij")
    pts = lattice.cartesian(np.stack([U, V], axis=-1).reshape(-1, 2))
    values, _ = rf.value_grad(pts)
    start = pts[int(np.argmin(values))]
    try:
        r_min = min(float(values.min()), _refine_min(rf, start))
    except NewtonDiverged:
        r_min = float(values.min())
    return math.sqrt(max(2.0 * energy - strength**2 * r_min, 0.0))


def _refine_min(rf: RobinField, start: NDArray[np.float64]) -> float:
    p = _newton(rf, start, 1e-13, 50)
    v, _ = rf.value_grad(p)
    return float(v)


# ---------------------------------------------------------------------------
# Equilibria


@dataclass(frozen=True)
class Equilibrium:
    """A critical point of the Robin function with ``eta = 0``."""

    point: NDArray[np.float64]
    eta: tuple[float, float]
    kind: str
    rhs_norm: float
    hessian_eigenvalues: NDArray[np.float64]


@dataclass(frozen=True)
class EquilibriumSearch:
    equilibria: list[Equilibrium]
    failed_seeds: list[tuple[NDArray[np.float64], str]] = field(default_factory=list)


def _newton(rf: RobinField, start: NDArray[np.float64], tol: float, max_iter: int) -> NDArray[np.float64]:
    p = np.array(start, dtype=float)
    for _ in range(max_iter):
        _, g = rf.value_grad(p)
        h = rf.hessian(p)
        try:
            step = np.linalg.solve(h, g)
        except np.linalg.LinAlgError as exc:
            raise NewtonDiverged("singular Hessian") from exc
        norm = float(np.hypot(*step))
        if norm > 0.1:
            step *= 0.1 / norm
        p = p - step
        if norm < tol:
            return p
    raise NewtonDiverged(f"no convergence from {tuple(start)} in {max_iter} iterations")


def find_equilibria(
    cf: ConformalFactor,
    lattice: Lattice,
    seeds: int | ArrayLike = 4,
    newton_tol: float = 1e-12,
    max_iter: int = 60,
    dedupe_tol: float = 1e-6,
) -> EquilibriumSearch:
    """Equilibria of a single vortex: critical points of the Robin function.

    Parameters
    ----------
    seeds : int or array_like
        An ``n`` gives an ``n x n`` grid of cell centres in fractional
        coordinates; otherwise an array of Cartesian seed points.
    """
    if cf.is_flat:
        raise NoIsolatedEquilibria("the Robin function of a flat torus is constant")
    if isinstance(seeds, (int, np.integer)):
        if seeds < 1:
            raise ValueError("seed grid must be nonempty")
        g = (np.arange(seeds) + 0.5) / seeds
        U, V = np.meshgrid(g, g, indexing="ij")
        seed_pts = lattice.cartesian(np.stack([U, V], axis=-1).reshape(-1, 2))
    else:
        seed_pts = np.asarray(seeds, dtype=float).reshape(-1, 2)
        if not len(seed_pts):
            raise ValueError("seed grid must be nonempty")
    rf = RobinField(cf, lattice)
    found: list[NDArray[np.float64]] = []
    failed = []
    for s in seed_pts:
        try:
            p = lattice.wrap(_newton(rf, s, newton_tol, max_iter))
        except NewtonDiverged as exc:
            failed.append((s, str(exc)))
            continue
        if all(lattice.distance(p, q) > dedupe_tol for q in found):
            found.append(p)
    out = []
    for p in sorted(found, key=lambda q: (round(float(q[0]), 9), round(float(q[1]), 9))):
        # snap exact zeros so wrapping does not print 1 - 1e-17
        p = np.where(np.abs(p) < 1e-15, 0.0, p)
        ev = np.linalg.eigvalsh(rf.hessian(p))
        if np.all(ev < 0):
            kind = "max"
        elif np.all(ev > 0):
            kind = "min"
        elif ev[0] < 0 < ev[1]:
            kind = "saddle"
        else:
            kind = "degenerate"
        rate = rhs_complete(VortexState(p[None, :], [1.0], (0.0, 0.0)), cf, lattice)
        norm = float(np.sqrt(np.sum(rate.velocities**2) + np.sum(rate.eta_dot**2)))
        out.append(Equilibrium(p, (0.0, 0.0), kind, norm, ev))
    return EquilibriumSearch(out, failed)


# ---------------------------------------------------------------------------
# Dipoles and geodesics


def _geodesic_rhs(cf: ConformalFactor, lattice: Lattice):
    rho_f = cf.field(lattice)

    def fun(_t: float, z: NDArray[np.float64]) -> NDArray[np.float64]:
        p = z[:2]
        vx, vy = z[2], z[3]
        rho, g = rho_f.value_grad(p)
        lx, ly = g[0] / rho, g[1] / rho
        ax = -0.5 * lx * (vx * vx - vy * vy) - ly * vx * vy
        ay = -0.5 * ly * (vy * vy - vx * vx) - lx * vx * vy
        return np.array([vx, vy, ax, ay, math.hypot(vx, vy)])

    return fun


def geodesic(
    cf: ConformalFactor,
    lattice: Lattice,
    start: ArrayLike,
    direction: ArrayLike,
    length: float,
    spacing: float = 1e-3,
    rel_tol: float = 1e-12,
    abs_tol: float = 1e-13,
) -> NDArray[np.float64]:
    """Polyline of the geodesic of ``rho (dx^2 + dy^2)`` from ``start``.

    The curve is traced until its flat (coordinate) length reaches
    ``length``; vertices are about ``spacing`` apart in flat length.
    """
    start = np.asarray(start, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / float(np.hypot(*d))
    rho0 = float(cf.field(lattice).value(start))
    v0 = d / math.sqrt(rho0)
    fun = _geodesic_rhs(cf, lattice)
    # sqrt(rho) |v| is constant along the geodesic, which bounds the flat speed
    rho_min, rho_max = cf.grid_extrema()
    speed0 = float(np.hypot(*v0))
    vmax = speed0 * math.sqrt(rho0 / (0.5 * rho_min))
    vmin = speed0 * math.sqrt(rho0 / (2.0 * rho_max))
    t_end = length / vmin
    sample_dt = spacing / vmax
    done = False

    def hook(_a: float, _b: float, dense) -> bool:
        nonlocal done
        done = dense(_b)[4] >= length
        return done

    run = run_adaptive(
        fun, np.array([start[0], start[1], v0[0], v0[1], 0.0]), t_end, rel_tol, abs_tol, sample_dt, on_step=hook
    )
    pts = run.states[:, :2]
    arc = run.states[:, 4]
    keep = arc <= length + spacing * 2
    return pts[keep]


def _polyline_distance(points: NDArray[np.float64], polyline: NDArray[np.float64]) -> NDArray[np.float64]:
    tree = cKDTree(polyline)
    _, idx = tree.query(points, k=4)
    best = np.full(len(points), np.inf)
    last = len(polyline) - 1
    for col in range(idx.shape[1]):
        i = idx[:, col]
        for lo in (np.maximum(i - 1, 0), i):
            hi = np.minimum(lo + 1, last)
            a, b = polyline[lo], polyline[hi]
            ab = b - a
            den = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
            t = np.clip(np.sum((points - a) * ab, axis=1) / den, 0.0, 1.0)
            dist = np.sqrt(np.sum((points - a - t[:, None] * ab) ** 2, axis=1))
            best = np.minimum(best, dist)
    return best


@dataclass(frozen=True, eq=False)
class DipoleProbe:
    """Shadowing of a geodesic by a vortex dipole."""

    separation: float
    deviation: float
    max_separation_ratio: float
    times: NDArray[np.float64]
    midpoints: NDArray[np.float64]
    geodesic: NDArray[np.float64]
    record: TrajectoryRecord


def dipole_probe(
    cf: ConformalFactor,
    lattice: Lattice,
    midpoint: ArrayLike,
    direction: ArrayLike,
    separation: float,
    t_end: float,
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-12,
    samples: int = 2000,
) -> DipoleProbe:
    """Follow a ``+1/-1`` vortex pair and measure its distance from a geodesic.

    The ``+1`` vortex sits on the left of the travel direction, so the pair
    moves along ``direction``.  The deviation is the largest flat distance
    from the sampled midpoint to the geodesic through the initial midpoint
    along the midpoint's initial velocity, computed in unwrapped coordinates.
    The velocity differs from ``direction`` by a small lattice-induced angle.
    """
    mid = np.asarray(midpoint, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / float(np.hypot(*d))
    perp = np.array([-d[1], d[0]])
    if separation <= 2 * COLLISION_THRESHOLD:
        raise ValueError("separation is below the collision threshold")
    pos = np.array([mid + 0.5 * separation * perp, mid - 0.5 * separation * perp])
    state = VortexState(pos, [1.0, -1.0], (0.0, 0.0))
    start_vel = rhs_complete(state, cf, lattice).velocities.mean(axis=0)
    heading = start_vel / float(np.hypot(*start_vel))
    rec = integrate(state, cf, lattice, "complete", t_end, rel_tol, abs_tol, sample_dt=t_end / samples)
    if rec.halt_reason is not None:
        raise CollisionError(rec.halt_reason)
    sep = np.sqrt(np.sum((rec.positions[:, 0] - rec.positions[:, 1]) ** 2, axis=1))
    ratio = float(sep.max() / separation)
    if ratio > 10.0:
        raise PairDissociated(f"pair separated to {ratio:.3g} times its initial distance")
    mids = 0.5 * (rec.positions[:, 0] + rec.positions[:, 1])
    path = float(np.sum(np.sqrt(np.sum(np.diff(mids, axis=0) ** 2, axis=1))))
    spacing = min(1e-3, path / 1e4) if path > 0 else 1e-3
    geo_rtol, geo_atol = max(rel_tol / 10, 2e-14), max(abs_tol / 10, 2e-14)
    geo = geodesic(
        cf, lattice, mid, heading, 1.1 * path + 10 * spacing, spacing=spacing, rel_tol=geo_rtol, abs_tol=geo_atol
    )
    dev = _polyline_distance(mids, geo)
    return DipoleProbe(separation, float(dev.max()), ratio, rec.times, mids, geo, rec)


# ---------------------------------------------------------------------------
# Complete versus incomplete system


@dataclass(frozen=True, eq=False)
class Divergence:
    """Phase-space distance between the complete and incomplete runs."""

    times: NDArray[np.float64]
    distance: NDArray[np.float64]
    H_vort: NDArray[np.float64]
    H_harm: NDArray[np.float64]
    complete: TrajectoryRecord
    incomplete: TrajectoryRecord


def complete_vs_incomplete(
    state: VortexState,
    cf: ConformalFactor,
    lattice: Lattice,
    t_end: float,
    sample_dt: float = 0.1,
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-12,
) -> Divergence:
    """Integrate both systems from ``state`` and compare them sample by sample.

    The distance combines the flat torus distance of every vortex with the
    Euclidean distance of the harmonic covectors.
    """
    full = integrate(state, cf, lattice, "complete", t_end, rel_tol, abs_tol, sample_dt)
    frozen = integrate(state, cf, lattice, "incomplete", t_end, rel_tol, abs_tol, sample_dt)
    n = min(len(full), len(frozen))
    pos_a, pos_b = full.positions[:n], frozen.positions[:n]
    if state.count:
        dv = np.asarray(lattice.distance(pos_a, pos_b)).reshape(n, -1)
        pos_sq = np.sum(dv**2, axis=1)
    else:
        pos_sq = np.zeros(n)
    eta_sq = np.sum((full.eta[:n] - frozen.eta[:n]) ** 2, axis=1)
    return Divergence(full.times[:n], np.sqrt(pos_sq + eta_sq), full.H_vort[:n], full.H_harm[:n], full, frozen)
