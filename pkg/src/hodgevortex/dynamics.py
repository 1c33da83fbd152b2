"""Point vortices coupled to the harmonic part of the flow on a torus.

The state is ``N`` vortex positions ``s_j`` with strengths ``G_j`` and the
constant covector ``eta = (eta_x, eta_y)`` of the harmonic flow.  With the
vortex energy ``W = sum_j G_j^2 R(s_j) / 2 + sum_{j<k} G_j G_k G_rho(s_j, s_k)``
the equations of motion are

    rho(s_j) x_j' =  dW/dy_j / G_j + eta_x
    rho(s_j) y_j' = -dW/dx_j / G_j + eta_y
    eta_x' =  sum_j G_j y_j' - G eta_y
    eta_y' = -sum_j G_j x_j' + G eta_x

where ``G`` is the total strength.  The energy ``W + |eta|^2 / 2`` is
conserved.  The incomplete system freezes ``eta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import CollisionError, CurveTooCloseToVortex, NonPositiveDensity
from .greens import FlatGreen, flat_green_tables, green_shift, poisson_solve
from .integrator import IntegratorStats, check_tolerances, run_adaptive
from .surface import ConformalFactor, Lattice

__all__ = [
    "VortexState",
    "StateRate",
    "TorusModel",
    "TrajectoryRecord",
    "ClosedCurve",
    "ConservationReport",
    "torus_model",
    "hamiltonian",
    "rhs_complete",
    "rhs_incomplete",
    "integrate",
    "conserved_report",
    "circulation",
    "initial_state",
]

COLLISION_THRESHOLD = 1e-6
RhsKind = Literal["complete", "incomplete"]


@dataclass(frozen=True, eq=False)
class VortexState:
    """Vortex positions (unwrapped Cartesian), strengths, harmonic covector, time."""

    positions: NDArray[np.float64]
    strengths: NDArray[np.float64]
    eta: NDArray[np.float64]
    time: float = 0.0

    def __post_init__(self) -> None:
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        gam = np.array(self.strengths, dtype=float).reshape(-1)
        eta = np.array(self.eta, dtype=float).reshape(-1)
        if pos.shape[0] != gam.shape[0]:
            raise ValueError("positions and strengths differ in length")
        if eta.shape != (2,):
            raise ValueError("eta must be a 2-vector")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(gam)) and np.all(np.isfinite(eta))):
            raise ValueError("state contains non-finite values")
        for arr in (pos, gam, eta):
            arr.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "strengths", gam)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "time", float(self.time))

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def total_strength(self) -> float:
        return float(np.sum(self.strengths))

    def wrapped(self, lattice: Lattice) -> NDArray[np.float64]:
        """Positions reduced to the fundamental cell."""
        return lattice.wrap(self.positions)

    def pack(self) -> NDArray[np.float64]:
        return np.concatenate([self.positions.ravel(), self.eta])

    @classmethod
    def unpack(cls, y: ArrayLike, strengths: ArrayLike, time: float = 0.0) -> "VortexState":
        y = np.asarray(y, dtype=float)
        return cls(y[:-2].reshape(-1, 2), strengths, y[-2:], time)


@dataclass(frozen=True)
class StateRate:
    """Time derivative of a :class:`VortexState`."""

    velocities: NDArray[np.float64]
    eta_dot: NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class TorusModel:
    """Precomputed fields for one conformal torus.

    Parameters
    ----------
    cf : ConformalFactor
    lattice : Lattice
    collision_threshold : float
        Pairs closer than this (flat torus distance) raise ``CollisionError``.
    """

    cf: ConformalFactor
    lattice: Lattice
    collision_threshold: float = COLLISION_THRESHOLD
    robin_const: float = 0.0
    green: FlatGreen = field(init=False, repr=False)
    _k: NDArray[np.float64] = field(init=False, repr=False)
    _c_rho: NDArray[np.complex128] = field(init=False, repr=False)
    _c_phi: NDArray[np.complex128] = field(init=False, repr=False)
    shift: float = field(init=False)
    _modes: tuple = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "green", flat_green_tables(self.lattice))
        rho_f = self.cf.field(self.lattice)
        phi_f = poisson_solve(self.cf, self.lattice).field()
        object.__setattr__(self, "_k", rho_f.wavevectors)
        object.__setattr__(self, "_c_rho", 2.0 * rho_f.coeffs)
        # both fields share the same mode ordering
        object.__setattr__(self, "_c_phi", 2.0 * phi_f.coeffs)
        object.__setattr__(self, "shift", green_shift(self.cf, self.lattice))
        modes = tuple(
            (float(k[0]), float(k[1]), complex(cr), complex(cp))
            for k, cr, cp in zip(self._k, self._c_rho, self._c_phi)
        )
        object.__setattr__(self, "_modes", modes)

    # local fields -------------------------------------------------------

    def local(self, points: NDArray[np.float64]):
        """``rho``, ``grad rho``, ``phi``, ``grad phi`` at ``points`` of shape ``(N, 2)``."""
        n = points.shape[0]
        if self._k.shape[0] == 0:
            return np.ones(n), np.zeros((n, 2)), np.zeros(n), np.zeros((n, 2))
        e = np.exp(1j * (points @ self._k.T))
        er = e * self._c_rho
        ep = e * self._c_phi
        rho = 1.0 + er.real.sum(axis=1)
        if np.any(rho <= 0.0):
            raise NonPositiveDensity("conformal factor is not positive at a vortex")
        return rho, -(er.imag @ self._k), ep.real.sum(axis=1), -(ep.imag @ self._k)

    def robin(self, points: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        rho, drho, phi, dphi = self.local(p)
        value = np.log(rho) / (4.0 * math.pi) + 2.0 * phi + self.robin_const
        grad = drho / (4.0 * math.pi * rho[:, None]) + 2.0 * dphi
        return value, grad

    # pair interactions --------------------------------------------------

    def _pairs(self, pos: NDArray[np.float64]):
        n = pos.shape[0]
        i, j = np.triu_indices(n, k=1)
        d = pos[i] - pos[j]
        if i.size:
            dist = np.sqrt(np.sum(self.lattice.min_image(d) ** 2, axis=1))
            close = dist < self.collision_threshold
            if np.any(close):
                a, b = int(i[close][0]), int(j[close][0])
                raise CollisionError(f"vortices {a} and {b} closer than {self.collision_threshold:g}")
        return i, j, d

    def energy_gradient(self, pos: NDArray[np.float64], gam: NDArray[np.float64]):
        """``rho`` at the vortices and ``dW/ds_j / G_j``-free gradients.

        Returns ``(rho, grad)`` where ``grad[j]`` is the gradient in ``s_j`` of
        ``(G_j / 2) R(s_j) + sum_{k != j} G_k G_rho(s_j, s_k)``.
        """
        rho, drho, _, dphi = self.local(pos)
        grad = (0.5 * gam / (4.0 * math.pi * rho))[:, None] * drho + gam[:, None] * dphi
        if pos.shape[0] > 1:
            i, j, d = self._pairs(pos)
            _, g = self.green.evaluate(d)
            np.add.at(grad, i, gam[j][:, None] * g)
            np.add.at(grad, j, -gam[i][:, None] * g)
            # each vortex feels phi-gradients from all the others
            others = float(np.sum(gam)) - gam
            grad += others[:, None] * dphi
        return rho, grad

    def velocities(self, pos: NDArray[np.float64], gam: NDArray[np.float64], eta: NDArray[np.float64]):
        rho, grad = self.energy_gradient(pos, gam)
        vel = np.empty_like(pos)
        vel[:, 0] = (grad[:, 1] + eta[0]) / rho
        vel[:, 1] = (-grad[:, 0] + eta[1]) / rho
        return vel

    def eta_rate(self, vel: NDArray[np.float64], gam: NDArray[np.float64], eta: NDArray[np.float64]):
        total = float(np.sum(gam))
        return np.array([gam @ vel[:, 1] - total * eta[1], -(gam @ vel[:, 0]) + total * eta[0]])

    def _single_rhs(self, y: NDArray[np.float64], gamma: float, complete: bool) -> NDArray[np.float64]:
        # scalar path for one vortex; same formulas as the vectorized path
        x, yy, ex, ey = float(y[0]), float(y[1]), float(y[2]), float(y[3])
        rho = 1.0
        rx = ry = px = py = 0.0
        for kx, ky, cr, cp in self._modes:
            th = kx * x + ky * yy
            c, s = math.cos(th), math.sin(th)
            rho += cr.real * c - cr.imag * s
            im_r = cr.real * s + cr.imag * c
            im_p = cp.real * s + cp.imag * c
            rx -= im_r * kx
            ry -= im_r * ky
            px -= im_p * kx
            py -= im_p * ky
        if rho <= 0.0:
            raise NonPositiveDensity("conformal factor is not positive at a vortex")
        f = 0.5 * gamma / (4.0 * math.pi * rho)
        gx = f * rx + gamma * px
        gy = f * ry + gamma * py
        vx = (gy + ex) / rho
        vy = (-gx + ey) / rho
        if complete:
            return np.array([vx, vy, gamma * vy - gamma * ey, -gamma * vx + gamma * ex])
        return np.array([vx, vy, 0.0, 0.0])

    def rhs(self, y: NDArray[np.float64], gam: NDArray[np.float64], complete: bool = True) -> NDArray[np.float64]:
        if y.shape[0] == 4:
            return self._single_rhs(y, float(gam[0]), complete)
        pos = y[:-2].reshape(-1, 2)
        eta = y[-2:]
        vel = self.velocities(pos, gam, eta)
        out = np.empty_like(y)
        out[:-2] = vel.ravel()
        out[-2:] = self.eta_rate(vel, gam, eta) if complete else 0.0
        return out

    # energy -----------------------------------------------------------------

    def vortex_energy(self, pos: NDArray[np.float64], gam: NDArray[np.float64]) -> float:
        r, _ = self.robin(pos)
        energy = 0.5 * float(np.sum(gam**2 * r))
        if pos.shape[0] > 1:
            i, j, d = self._pairs(pos)
            g, _ = self.green.evaluate(d)
            _, _, phi, _ = self.local(pos)
            g_rho = g + phi[i] + phi[j] - self.shift
            energy += float(np.sum(gam[i] * gam[j] * g_rho))
        return energy


@lru_cache(maxsize=32)
def torus_model(
    cf: ConformalFactor, lattice: Lattice, collision_threshold: float = COLLISION_THRESHOLD
) -> TorusModel:
    """Cached :class:`TorusModel`."""
    return TorusModel(cf, lattice, collision_threshold)


def hamiltonian(state: VortexState, cf: ConformalFactor, lattice: Lattice) -> tuple[float, float, float]:
    """Total, vortex and harmonic energy ``(H, H_vort, H_harm)``."""
    model = torus_model(cf, lattice)
    h_vort = model.vortex_energy(state.positions, state.strengths)
    h_harm = 0.5 * float(state.eta @ state.eta)
    return h_vort + h_harm, h_vort, h_harm


def rhs_complete(state: VortexState, cf: ConformalFactor, lattice: Lattice) -> StateRate:
    """Velocities and harmonic rate of the coupled system."""
    model = torus_model(cf, lattice)
    vel = model.velocities(state.positions, state.strengths, state.eta)
    return StateRate(vel, model.eta_rate(vel, state.strengths, state.eta))


def rhs_incomplete(state: VortexState, cf: ConformalFactor, lattice: Lattice) -> StateRate:
    """As :func:`rhs_complete` with the harmonic part frozen."""
    model = torus_model(cf, lattice)
    vel = model.velocities(state.positions, state.strengths, state.eta)
    return StateRate(vel, np.zeros(2))


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Sampled trajectory with its conservation ledger.

    ``positions`` has shape ``(samples, N, 2)`` in unwrapped coordinates;
    ``momenta`` holds ``(eta_x - sum G_j y_j, eta_y + sum G_j x_j)``, which is
    conserved when the total strength vanishes.
    """

    times: NDArray[np.float64]
    positions: NDArray[np.float64]
    eta: NDArray[np.float64]
    strengths: NDArray[np.float64]
    H: NDArray[np.float64]
    H_vort: NDArray[np.float64]
    H_harm: NDArray[np.float64]
    momenta: NDArray[np.float64]
    stats: IntegratorStats
    rhs: str
    halt_reason: str | None = None

    def __len__(self) -> int:
        return len(self.times)

    def state(self, index: int) -> VortexState:
        return VortexState(self.positions[index], self.strengths, self.eta[index], float(self.times[index]))

    @property
    def final(self) -> VortexState:
        return self.state(-1)


def _momenta(pos: NDArray[np.float64], gam: NDArray[np.float64], eta: NDArray[np.float64]) -> NDArray[np.float64]:
    """Linear momenta for each sample; ``pos`` is ``(S, N, 2)``."""
    return np.stack([eta[:, 0] - pos[:, :, 1] @ gam, eta[:, 1] + pos[:, :, 0] @ gam], axis=1)


def integrate(
    state: VortexState,
    cf: ConformalFactor,
    lattice: Lattice,
    rhs: RhsKind = "complete",
    t_end: float = 10.0,
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-12,
    sample_dt: float | None = 0.1,
    collision_threshold: float = COLLISION_THRESHOLD,
    max_step: float = math.inf,
) -> TrajectoryRecord:
    """Integrate the vortex system from ``state`` over ``t_end`` time units.

    A collision stops the run; the partial record carries the reason in
    ``halt_reason``.
    """
    check_tolerances(rel_tol, abs_tol, t_end)
    if rhs not in ("complete", "incomplete"):
        raise ValueError(f"rhs must be 'complete' or 'incomplete', not {rhs!r}")
    model = torus_model(cf, lattice, collision_threshold)
    gam = state.strengths
    complete = rhs == "complete"

    def fun(_t: float, y: NDArray[np.float64]) -> NDArray[np.float64]:
        return model.rhs(y, gam, complete)

    run = run_adaptive(
        fun, state.pack(), state.time + t_end, rel_tol, abs_tol, sample_dt, max_step=max_step, t0=state.time
    )
    return _record(model, run.times, run.states, gam, run.stats, rhs, run.halt_reason)


def _record(model: TorusModel, times, states, gam, stats, rhs, halt) -> TrajectoryRecord:
    n = gam.shape[0]
    pos = states[:, :-2].reshape(len(times), n, 2)
    eta = states[:, -2:]
    h_vort = np.array([model.vortex_energy(p, gam) for p in pos]) if n else np.zeros(len(times))
    h_harm = 0.5 * np.sum(eta * eta, axis=1)
    return TrajectoryRecord(
        times=np.asarray(times),
        positions=pos,
        eta=eta,
        strengths=gam.copy(),
        H=h_vort + h_harm,
        H_vort=h_vort,
        H_harm=h_harm,
        momenta=_momenta(pos, gam, eta),
        stats=stats,
        rhs=rhs,
        halt_reason=halt,
    )


# ---------------------------------------------------------------------------
# Circulation along closed curves


@dataclass(frozen=True, eq=False)
class ClosedCurve:
    """Polygon ``v_0 -> v_1 -> ... -> v_{K-1} -> v_0 + closing`` on the torus.

    ``closing`` is an integer lattice translation ``(i, j)`` meaning
    ``i a + j b``; a nonzero value gives a non-contractible loop.
    """

    vertices: NDArray[np.float64]
    closing: tuple[int, int] = (0, 0)

    def segments(self, lattice: Lattice) -> NDArray[np.float64]:
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        end = v[0] + lattice.cartesian(np.asarray(self.closing, dtype=float))
        pts = np.vstack([v, end[None, :]])
        return np.stack([pts[:-1], pts[1:]], axis=1)


_GL64 = np.polynomial.legendre.leggauss(64)
_NEIGHBOURS = np.array([[i, j] for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float)


def _nearest_image(lattice: Lattice, p: NDArray[np.float64], a: NDArray[np.float64], b: NDArray[np.float64]):
    """Image of ``p`` closest to the segment ``[a, b]`` and its distance."""
    mid = 0.5 * (a + b)
    cands = lattice.reduce(p - mid) + mid + lattice.cartesian(_NEIGHBOURS)
    ab = b - a
    t = np.clip(((cands - a) @ ab) / float(ab @ ab), 0.0, 1.0)
    dist = np.sqrt(np.sum((cands - a - t[:, None] * ab) ** 2, axis=1))
    k = int(np.argmin(dist))
    return cands[k], float(dist[k])


def _curve_distance(curve: ClosedCurve, lattice: Lattice, points: NDArray[np.float64]) -> float:
    best = math.inf
    for a, b in curve.segments(lattice):
        for p in points:
            best = min(best, _nearest_image(lattice, p, a, b)[1])
    return best


def circulation(
    state: VortexState, cf: ConformalFactor, lattice: Lattice, curve: ClosedCurve
) -> tuple[float, float]:
    """``(integral of nu, integral of *nu)`` along ``curve``.

    ``nu = -sum_k G_k * d G_rho(., s_k) + eta`` is the velocity one-form.  On
    each segment the logarithmic part of the nearest image of every vortex is
    integrated exactly (a change of angle and of log-distance); the smooth
    remainder uses 64-point Gauss-Legendre quadrature.
    """
    model = torus_model(cf, lattice)
    x, w = _GL64
    t = 0.5 * (x + 1.0)
    gam = state.strengths
    circ = star = 0.0
    for a, b in curve.segments(lattice):
        ab = b - a
        nodes = a[None, :] + t[:, None] * ab[None, :]
        grad = np.zeros_like(nodes)
        if state.count:
            _, _, _, dphi = model.local(nodes)
            for s, g in zip(state.positions, gam):
                img, dist = _nearest_image(lattice, s, a, b)
                if dist == 0.0:
                    raise CurveTooCloseToVortex("a vortex lies on the curve")
                _, gflat = model.green.evaluate(nodes - s)
                rel = nodes - img
                smooth = gflat + rel / (2.0 * math.pi * np.sum(rel * rel, axis=1))[:, None]
                grad += g * (smooth + dphi)
                u, v = a - img, b - img
                angle = math.atan2(u[0] * v[1] - u[1] * v[0], u[0] * v[0] + u[1] * v[1])
                circ += g * angle / (2.0 * math.pi)
                star -= g * math.log(math.hypot(*v) / math.hypot(*u)) / (2.0 * math.pi)
        nu = np.empty_like(nodes)
        nu[:, 0] = grad[:, 1] + state.eta[0]
        nu[:, 1] = -grad[:, 0] + state.eta[1]
        circ += 0.5 * float(w @ (nu @ ab))
        star += 0.5 * float(w @ (-nu[:, 1] * ab[0] + nu[:, 0] * ab[1]))
    return circ, star


@dataclass(frozen=True)
class ConservationReport:
    """Drifts of conserved quantities over a trajectory.

    ``circulation_residual`` is the largest difference between the time
    derivative of the circulation around the curve and ``G`` times the
    circulation of ``*nu``; ``circulation_samples`` counts where it was
    evaluated.
    """

    H_drift: float
    momentum_drift: tuple[float, float] | None
    circulation_residual: float | None = None
    circulation_samples: int = 0
    circulation_rate: NDArray[np.float64] | None = None
    star_circulation: NDArray[np.float64] | None = None


def conserved_report(
    record: TrajectoryRecord,
    cf: ConformalFactor,
    lattice: Lattice,
    curve: ClosedCurve | None = None,
    margin: float = 1e-3,
) -> ConservationReport:
    """Summarize conservation of energy, momenta and curve circulation.

    Parameters
    ----------
    curve : ClosedCurve, optional
        If given, the circulation identity is tested at every sample whose
        five-point stencil keeps all vortices at least ``margin`` away from
        the curve and lets none of them cross it.  Sampling must be uniform.
    """
    if len(record) < 2:
        raise ValueError("trajectory needs at least two samples")
    h_drift = float(np.max(np.abs(record.H - record.H[0])))
    total = float(np.sum(record.strengths))
    mom = None
    if total == 0.0:
        dm = np.max(np.abs(record.momenta - record.momenta[0]), axis=0)
        mom = (float(dm[0]), float(dm[1]))
    if curve is None:
        return ConservationReport(h_drift, mom)
    times = record.times
    dt = np.diff(times)
    if len(times) < 5 or not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12):
        raise ValueError("circulation check needs at least five uniformly spaced samples")
    h = float(dt[0])
    n_s = len(times)
    n_v = record.strengths.size
    # distance of every vortex to the curve at every sample
    dist = np.array(
        [[_curve_distance(curve, lattice, record.positions[i, k : k + 1]) for k in range(n_v)] for i in range(n_s)]
    ).reshape(n_s, n_v)
    far = np.all(dist >= margin, axis=1)
    # between consecutive samples a vortex cannot cross the curve if it moves
    # less than its distance to the curve at either end
    if n_v:
        step = np.sqrt(np.sum(np.diff(record.positions, axis=0) ** 2, axis=2))
        safe = np.all(step < np.minimum(dist[:-1], dist[1:]), axis=1)
    else:
        safe = np.ones(n_s - 1, dtype=bool)
    circ = np.full(len(times), np.nan)
    star = np.full(len(times), np.nan)
    for i in range(len(times)):
        if far[i]:
            circ[i], star[i] = circulation(record.state(i), cf, lattice, curve)
    rates, stars = [], []
    for i in range(2, len(times) - 2):
        if far[i - 2 : i + 3].all() and safe[i - 2 : i + 2].all():
            rate = (-circ[i + 2] + 8 * circ[i + 1] - 8 * circ[i - 1] + circ[i - 2]) / (12.0 * h)
            rates.append(rate)
            stars.append(star[i])
    if not rates:
        raise CurveTooCloseToVortex(f"no sample keeps the vortices {margin:g} away from the curve")
    rates_a = np.array(rates)
    stars_a = np.array(stars)
    residual = float(np.max(np.abs(rates_a - total * stars_a)))
    return ConservationReport(h_drift, mom, residual, len(rates), rates_a, stars_a)


def initial_state(
    positions: Sequence[Sequence[float]] | NDArray[np.float64],
    strengths: Sequence[float] | NDArray[np.float64],
    eta: Sequence[float] = (0.0, 0.0),
) -> VortexState:
    """Convenience constructor."""
    return VortexState(np.asarray(positions, dtype=float).reshape(-1, 2), strengths, eta)
