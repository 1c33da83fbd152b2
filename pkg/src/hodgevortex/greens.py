"""Green and Robin functions on flat and conformally flat unit-area tori.

The flat Green function ``G`` is the zero-mean solution of
``-(d_xx + d_yy) G = delta - 1``; it behaves like ``-(1/2 pi) log r`` near
the diagonal.  It is evaluated by Ewald splitting of the lattice heat kernel:
a rapidly convergent exponential-integral sum over nearby images plus a
Gaussian-damped Fourier sum.  The plain truncated Fourier series is kept as
an independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import exp1

from .errors import CoincidentPoints, NonPositiveDensity, QuadratureFailure, ToleranceNotReached
from .surface import ConformalFactor, FourierField, Lattice, gram_matrix, harmonic_basis, wavevectors

__all__ = [
    "GreenEval",
    "PoissonSolution",
    "RobinField",
    "FlatGreen",
    "HatTrickReport",
    "green_flat",
    "spectral_green_sum",
    "poisson_solve",
    "robin",
    "green_conformal",
    "conformal_hamiltonian_terms",
    "hat_trick_check",
    "cycle_potential",
]

EULER_GAMMA = 0.5772156649015329
COINCIDENCE_TOL = 1e-9
# Ewald splitting parameter; pi balances both sums on a unit-area cell.
SPLIT = math.pi
SPECTRAL_CUTOFF = 400


@dataclass(frozen=True)
class GreenEval:
    """Value of a Green function and its gradient in the first argument."""

    value: float
    grad_first_slot: NDArray[np.float64]
    method: str


def _ein(x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Entire exponential integral ``Ein(x) = E1(x) + log x + gamma``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1.0
    xs = x[small]
    term = xs.copy()
    acc = xs.copy()
    for k in range(2, 30):
        term = -term * xs / k
        acc = acc + term / k
    out[small] = acc
    xl = x[~small]
    out[~small] = exp1(xl) + np.log(xl) + EULER_GAMMA
    return out


@dataclass(frozen=True, eq=False)
class FlatGreen:
    """Precomputed Ewald tables for one lattice and accuracy target.

    Parameters
    ----------
    lattice : Lattice
    tol : float
        Absolute accuracy target for values.
    """

    lattice: Lattice
    tol: float = 1e-12
    images: NDArray[np.float64] = field(init=False, repr=False)
    kvecs: NDArray[np.float64] = field(init=False, repr=False)
    kweights: NDArray[np.float64] = field(init=False, repr=False)
    error_bound: float = field(init=False)

    def __post_init__(self) -> None:
        if not (self.tol > 0):
            raise ToleranceNotReached("tolerance must be positive")
        if self.tol < 1e-15:
            raise ToleranceNotReached(f"tolerance {self.tol:g} is below double precision")
        lat = self.lattice
        gens = lat.generators
        la, lb = (float(np.hypot(*g)) for g in gens)
        cut_exp = math.log(100.0 / self.tol)
        r_cut = math.sqrt(cut_exp / SPLIT)
        r_max = 0.5 * (la + lb)
        reach = r_cut + r_max
        ni = int(math.ceil(lb * reach)) + 1
        nj = int(math.ceil(la * reach)) + 1
        i, j = np.meshgrid(np.arange(-ni, ni + 1), np.arange(-nj, nj + 1), indexing="ij")
        L = i.reshape(-1, 1) * gens[0] + j.reshape(-1, 1) * gens[1]
        keep = np.hypot(L[:, 0], L[:, 1]) <= reach
        images = L[keep]
        # Reciprocal modes with pi q <= cut_exp, one per +-pair.
        q_cut = cut_exp * SPLIT / math.pi**2
        mm = int(math.ceil(la * math.sqrt(q_cut))) + 1
        nn = int(math.ceil(lb * math.sqrt(q_cut))) + 1
        m, n = np.meshgrid(np.arange(-mm, mm + 1), np.arange(-nn, nn + 1), indexing="ij")
        m, n = m.ravel(), n.ravel()
        half = (m > 0) | ((m == 0) & (n > 0))
        m, n = m[half], n[half]
        q = gram_matrix(lat).quadratic(m, n)
        sel = q <= q_cut
        m, n, q = m[sel], n[sel], q[sel]
        k = wavevectors(lat, np.stack([m, n], axis=1))
        k2 = 4.0 * math.pi**2 * q
        weights = 2.0 * np.exp(-k2 / (4.0 * SPLIT)) / k2
        # Tail estimates of both sums: leading omitted term times a shell count.
        tail_real = math.exp(-SPLIT * r_cut**2) / (4.0 * math.pi * SPLIT * r_cut**2) * 2 * math.pi * r_cut
        tail_recip = math.exp(-math.pi**2 * q_cut / SPLIT) / (4.0 * math.pi**2 * q_cut) * 2 * math.pi * math.sqrt(q_cut)
        bound = tail_real + tail_recip
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "kvecs", k)
        object.__setattr__(self, "kweights", weights)
        object.__setattr__(self, "error_bound", bound)
        if bound > self.tol:
            raise ToleranceNotReached(f"Ewald truncation bound {bound:.2e} exceeds {self.tol:.2e}")

    def evaluate(
        self, displacements: ArrayLike, regular: bool = False
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Green function and gradient at displacements ``z - w``.

        If ``regular`` is set, ``-(1/2 pi) log |d|`` of the nearest image is
        removed analytically, leaving a smooth function that is finite on the
        diagonal.
        """
        d = np.asarray(displacements, dtype=float)
        shape = d.shape[:-1]
        d = d.reshape(-1, 2)
        r = self.lattice.reduce(d)
        rr = r[:, None, :] + self.images[None, :, :]
        d2 = np.einsum("pik,pik->pi", rr, rr)
        x = SPLIT * d2
        with np.errstate(divide="ignore", invalid="ignore"):
            e1 = exp1(x)
            gfac = np.exp(-x) / d2
        if regular:
            near = np.argmin(d2, axis=1)
            rows = np.arange(d2.shape[0])
            xn = x[rows, near]
            e1[rows, near] = _ein(xn) - EULER_GAMMA - math.log(SPLIT)
            # (1 - e^{-x}) / d2 with the -log part removed, finite at 0
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(xn > 0, -np.expm1(-xn) / np.where(xn > 0, xn, 1.0), 1.0)
            gfac[rows, near] = -SPLIT * ratio
        value = e1.sum(axis=1) / (4.0 * math.pi)
        grad = -np.einsum("pi,pik->pk", gfac, rr) / (2.0 * math.pi)
        phase = r @ self.kvecs.T
        value += np.cos(phase) @ self.kweights - 1.0 / (4.0 * SPLIT)
        grad -= (np.sin(phase) * self.kweights) @ self.kvecs
        return value.reshape(shape), grad.reshape(shape + (2,))

    def value_grad(self, displacement: ArrayLike) -> tuple[float, NDArray[np.float64]]:
        v, g = self.evaluate(np.asarray(displacement, dtype=float)[None, :])
        return float(v[0]), g[0]

    @property
    def robin_constant(self) -> float:
        """Regular part of the flat Green function on the diagonal."""
        v, _ = self.evaluate(np.zeros((1, 2)), regular=True)
        return float(v[0])


@lru_cache(maxsize=64)
def flat_green_tables(lattice: Lattice, tol: float = 1e-12) -> FlatGreen:
    """Cached :class:`FlatGreen` for a lattice."""
    return FlatGreen(lattice, tol)


def _truncated_fourier_sum(
    lattice: Lattice, frac: NDArray[np.float64], cutoff: int
) -> tuple[float, NDArray[np.float64]]:
    idx = np.arange(-cutoff, cutoff + 1, dtype=float)
    m, n = np.meshgrid(idx, idx, indexing="ij")
    q = gram_matrix(lattice).quadratic(m, n)
    q[cutoff, cutoff] = np.inf
    w = 1.0 / (4.0 * math.pi**2 * q)
    phase = 2.0 * math.pi * (m * frac[0] + n * frac[1])
    value = float(np.sum(np.cos(phase) * w))
    sw = np.sin(phase) * w
    # gradient of the phase is 2 pi (m dalpha + n dbeta)
    dual = lattice.dual
    gx = -2.0 * math.pi * float(np.sum(sw * (m * dual[0, 0] + n * dual[1, 0])))
    gy = -2.0 * math.pi * float(np.sum(sw * (m * dual[0, 1] + n * dual[1, 1])))
    return value, np.array([gx, gy])


def spectral_green_sum(
    lattice: Lattice,
    displacement: ArrayLike,
    cutoff: int = SPECTRAL_CUTOFF,
    extrapolate: bool = True,
) -> tuple[float, NDArray[np.float64]]:
    """Directly summed Fourier series of the flat Green function.

    Sums ``exp(2 pi i (m alpha + n beta)) / (4 pi^2 q_mn)`` over the square
    ``|m|, |n| <= cutoff``.  The square truncation error decays like
    ``cutoff**-2``; with ``extrapolate`` the sums at ``cutoff`` and
    ``cutoff // 2`` are combined by Richardson extrapolation.  Slow and only
    conditionally convergent (the gradient especially); used as an oracle
    away from the diagonal.
    """
    frac = lattice.fractional(np.asarray(displacement, dtype=float))
    v1, g1 = _truncated_fourier_sum(lattice, frac, cutoff)
    if not extrapolate:
        return v1, g1
    v0, g0 = _truncated_fourier_sum(lattice, frac, cutoff // 2)
    return (4.0 * v1 - v0) / 3.0, (4.0 * g1 - g0) / 3.0


def _check_apart(lattice: Lattice, z: NDArray[np.float64], w: NDArray[np.float64]) -> NDArray[np.float64]:
    d = z - w
    if lattice.distance(z, w) < COINCIDENCE_TOL:
        raise CoincidentPoints("Green function evaluated on the diagonal")
    return d


def green_flat(
    lattice: Lattice,
    z: ArrayLike,
    w: ArrayLike,
    tol: float = 1e-12,
    method: Literal["accelerated", "spectral_sum"] = "accelerated",
) -> GreenEval:
    """Zero-mean Green function of the flat unit-area torus.

    Parameters
    ----------
    lattice : Lattice
    z, w : array_like
        Field and source points.
    tol : float
        Accuracy target of the accelerated method.
    method : {"accelerated", "spectral_sum"}
        Ewald evaluation, or the direct truncated Fourier sum.
    """
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    d = _check_apart(lattice, z, w)
    if method == "accelerated":
        v, g = flat_green_tables(lattice, float(tol)).value_grad(d)
    elif method == "spectral_sum":
        v, g = spectral_green_sum(lattice, d)
    else:
        raise ValueError(f"unknown method {method!r}")
    return GreenEval(v, g, method)


@dataclass(frozen=True)
class PoissonSolution:
    """Zero-mean solution of ``(d_xx + d_yy) phi = rho - 1`` as a Fourier series."""

    coefficients: dict[tuple[int, int], complex]
    lattice: Lattice
    mean: float = 0.0

    def field(self) -> FourierField:
        idx = [k for k in self.coefficients if k[0] > 0 or (k[0] == 0 and k[1] > 0)]
        modes = np.array(idx, dtype=np.int64).reshape(-1, 2)
        amps = np.array([self.coefficients[k] for k in idx], dtype=complex)
        return FourierField(0.0, amps, wavevectors(self.lattice, modes))


def poisson_solve(cf: ConformalFactor, lattice: Lattice) -> PoissonSolution:
    """Termwise solve ``phi_mn = -c_mn / (4 pi^2 q_mn)``."""
    gm = gram_matrix(lattice)
    coeffs = {}
    for (m, n), c in cf.coefficients.items():
        q = float(gm.quadratic(m, n))
        coeffs[(m, n)] = -c / (4.0 * math.pi**2 * q)
    return PoissonSolution(coeffs, lattice)


@dataclass(frozen=True)
class RobinField:
    """Robin function ``(1/4 pi) log rho + 2 phi + const`` of a conformal torus.

    ``const`` is an additive convention; it does not affect the dynamics.
    """

    cf: ConformalFactor
    lattice: Lattice
    const: float = 0.0

    @property
    def _fields(self) -> tuple[FourierField, FourierField]:
        return _conformal_fields(self.cf, self.lattice)

    def value_grad(self, points: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        rho_f, phi_f = self._fields
        rho, drho = rho_f.value_grad(points)
        if np.any(rho <= 0.0):
            raise NonPositiveDensity("conformal factor is not positive at the query point")
        phi, dphi = phi_f.value_grad(points)
        value = np.log(rho) / (4.0 * math.pi) + 2.0 * phi + self.const
        grad = drho / (4.0 * math.pi * rho[..., None]) + 2.0 * dphi
        return value, grad

    def hessian(self, points: ArrayLike) -> NDArray[np.float64]:
        rho_f, phi_f = self._fields
        rho, drho = rho_f.value_grad(points)
        h_rho = rho_f.hessian(points)
        outer = drho[..., :, None] * drho[..., None, :]
        r = rho[..., None, None]
        return (h_rho / r - outer / r**2) / (4.0 * math.pi) + 2.0 * phi_f.hessian(points)


@lru_cache(maxsize=64)
def _conformal_fields(cf: ConformalFactor, lattice: Lattice) -> tuple[FourierField, FourierField]:
    return cf.field(lattice), poisson_solve(cf, lattice).field()


@lru_cache(maxsize=64)
def green_shift(cf: ConformalFactor, lattice: Lattice) -> float:
    """``integral (rho - 1) phi`` over the cell, a real non-positive number."""
    phi = poisson_solve(cf, lattice).coefficients
    total = sum(c * np.conj(phi[k]) for k, c in cf.coefficients.items())
    return float(np.real(total))


def robin(rf: RobinField, x: ArrayLike, y: ArrayLike) -> tuple[NDArray[np.float64] | float, NDArray[np.float64]]:
    """Robin function value and gradient at ``(x, y)``."""
    pts = np.stack(np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float)), axis=-1)
    v, g = rf.value_grad(pts)
    if v.ndim == 0:
        return float(v), g
    return v, g


def green_conformal(
    cf: ConformalFactor, lattice: Lattice, z: ArrayLike, w: ArrayLike, tol: float = 1e-12
) -> GreenEval:
    """Zero-mean Green function of the torus with metric ``rho (dx^2 + dy^2)``.

    ``G_rho(z, w) = G(z - w) + phi(z) + phi(w) - integral (rho - 1) phi``,
    which is symmetric and integrates to zero against ``rho``.
    """
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    d = _check_apart(lattice, z, w)
    v, g = flat_green_tables(lattice, float(tol)).value_grad(d)
    _, phi_f = _conformal_fields(cf, lattice)
    pz, gz = phi_f.value_grad(z)
    pw = phi_f.value(w)
    value = v + float(pz) + float(pw) - green_shift(cf, lattice)
    return GreenEval(value, g + gz, "accelerated")


def conformal_hamiltonian_terms(
    cf: ConformalFactor, lattice: Lattice, positions: ArrayLike, strengths: ArrayLike
) -> float:
    """Extra Hamiltonian terms produced by the conformal factor.

    ``sum_j (G_j^2 / 8 pi) log rho(s_j) + G sum_j G_j phi(s_j)`` with
    ``G = sum_j G_j``; the second sum vanishes for zero total strength.
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    gam = np.asarray(strengths, dtype=float).reshape(-1)
    rho_f, phi_f = _conformal_fields(cf, lattice)
    rho = rho_f.value(pos)
    if np.any(rho <= 0.0):
        raise NonPositiveDensity("conformal factor is not positive at a vortex")
    local = float(np.sum(gam**2 * np.log(rho)) / (8.0 * math.pi))
    total = float(np.sum(gam))
    if total == 0.0:
        return local
    return local + total * float(np.sum(gam * phi_f.value(pos)))


# ---------------------------------------------------------------------------
# Harmonic forms from the Green function


def _cycle_vector(lattice: Lattice, cycle: str) -> NDArray[np.float64]:
    if cycle == "a":
        return np.asarray(lattice.a)
    if cycle == "b":
        return np.asarray(lattice.b)
    raise ValueError(f"cycle must be 'a' or 'b', not {cycle!r}")


def _distance_to_cycle(lattice: Lattice, cycle: str, s: NDArray[np.float64]) -> float:
    frac = lattice.fractional(s)
    # the a-cycle is {beta = 0}, the b-cycle is {alpha = 0}
    idx, gen = (1, lattice.a) if cycle == "a" else (0, lattice.b)
    c = frac[idx] - round(frac[idx])
    return abs(c) / float(np.hypot(*gen)) * abs(lattice.det)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def cycle_potential(
    lattice: Lattice, cycle: str, s: ArrayLike, panels: int = 16, min_distance: float = 1e-6
) -> float:
    """``U(s) = integral over the cycle of *_r d_r G(r, s)``.

    The cycle is the straight closed geodesic ``t -> t g`` for the generator
    ``g``, i.e. the line through the origin.  The logarithmic singularity of the nearest image of ``s`` is
    integrated exactly (it contributes a winding angle); the smooth
    remainder uses composite Gauss-Legendre quadrature.
    """
    s = np.asarray(s, dtype=float)
    if _distance_to_cycle(lattice, cycle, s) < min_distance:
        raise QuadratureFailure("cycle passes too close to the base point")
    g = _cycle_vector(lattice, cycle)
    frac = lattice.fractional(s)
    along, across = (0, 1) if cycle == "a" else (1, 0)
    # start the loop half a period before the foot of s so the nearest image
    # of s sits mid-segment, far from both endpoints
    start = frac[along] - 0.5
    shift = np.zeros(2)
    shift[along] = math.floor(frac[along] - start)
    shift[across] = math.floor(frac[across] + 0.5)
    sp = s - lattice.cartesian(shift)
    r0 = start * g
    v0, v1 = r0 - sp, r0 + g - sp
    angle = math.atan2(v0[0] * v1[1] - v0[1] * v1[0], v0[0] * v1[0] + v0[1] * v1[1])
    singular = -angle / (2.0 * math.pi)
    edges = np.linspace(0.0, 1.0, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    t = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    wts = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    r = r0[None, :] + t[:, None] * g[None, :]
    _, grad = flat_green_tables(lattice).evaluate(r - s)
    rel = r - sp
    grad = grad + rel / (2.0 * math.pi * np.sum(rel * rel, axis=1))[:, None]
    star = -grad[:, 1] * g[0] + grad[:, 0] * g[1]
    return singular + float(np.dot(wts, star))


@dataclass(frozen=True)
class HatTrickReport:
    """Outcome of :func:`hat_trick_check`."""

    max_residual: float
    differentials: NDArray[np.float64]
    expected: NDArray[np.float64]
    jumps: NDArray[np.float64]
    max_jump_error: float


def hat_trick_check(
    lattice: Lattice,
    cycle: str,
    base_points: ArrayLike,
    h: float = 1e-5,
    jump_offset: float = 1e-5,
) -> HatTrickReport:
    """Check that the cycle potential has differential ``beta`` (cycle a) or ``-alpha`` (cycle b).

    The differential is taken by central differences of :func:`cycle_potential`;
    the jump ``U(right side) - U(left side)`` across the cycle is measured at
    the feet of the base points on the cycle.
    """
    pts = np.asarray(base_points, dtype=float).reshape(-1, 2)
    basis = harmonic_basis(lattice)
    expected = np.asarray(basis.beta if cycle == "a" else tuple(-c for c in basis.alpha))
    g = _cycle_vector(lattice, cycle)
    normal = np.array([-g[1], g[0]]) / float(np.hypot(*g))
    diffs = np.empty_like(pts)
    jumps = np.empty(len(pts))
    for i, s in enumerate(pts):
        dist = _distance_to_cycle(lattice, cycle, s)
        if dist < 1e-6:
            raise QuadratureFailure("cycle passes within 1e-6 of a base point")
        step = min(h, 0.25 * dist)
        for k in range(2):
            e = np.zeros(2)
            e[k] = step
            diffs[i, k] = (cycle_potential(lattice, cycle, s + e) - cycle_potential(lattice, cycle, s - e)) / (
                2.0 * step
            )
        along = lattice.fractional(s)[0 if cycle == "a" else 1] % 1.0
        foot = along * g
        # the one-sided limits differ from the offset values linearly in the
        # offset; extrapolate from offsets delta and 2 delta
        gap = []
        for k in (1.0, 2.0):
            right = cycle_potential(lattice, cycle, foot - k * jump_offset * normal)
            left = cycle_potential(lattice, cycle, foot + k * jump_offset * normal)
            gap.append(right - left)
        jumps[i] = 2.0 * gap[0] - gap[1]
    residual = float(np.max(np.abs(diffs - expected))) if len(pts) else 0.0
    jump_err = float(np.max(np.abs(jumps - 1.0))) if len(pts) else 0.0
    return HatTrickReport(residual, diffs, np.broadcast_to(expected, pts.shape).copy(), jumps, jump_err)
