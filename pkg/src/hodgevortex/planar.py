"""Green functions of planar domains, their doubles and the reduced annulus dynamics.

Points are complex numbers ``z = x + iy`` (a 2-sequence is accepted as
well).  Gradients are returned as real 2-vectors in the first slot.  For a
holomorphic ``f`` the gradient of ``log|f|`` is ``conj(f'/f)`` read as
``(Re, Im)``.

Boundary orientation: the outer circle of an annulus runs counterclockwise
and the inner circle clockwise, so the domain lies on the left.  A stream
function ``psi`` carries the flow ``nu = -*dpsi`` with ``*dx = dy`` and
``*dy = -dx``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import quad

from .errors import CoincidentPoints, CollisionError, OutsideDomain, SeriesNotConverged
from .greens import GreenEval
from .integrator import IntegratorStats, check_tolerances, run_adaptive

__all__ = [
    "AnnulusDomain",
    "CirculationVector",
    "CapacityData",
    "green_electro_disk",
    "green_double_disk",
    "double_disk_matching",
    "double_disk_mean",
    "electro_from_double_check",
    "green_sphere",
    "harmonic_measure_annulus",
    "capacity_annulus",
    "capacity_quadrature",
    "green_electro_annulus",
    "robin_electro_annulus",
    "green_hydro",
    "boundary_circulation",
    "flux_pairing",
    "LinReduced",
    "lin_reduced",
    "lin_hamiltonian",
    "AnnulusTrajectory",
    "integrate_annulus",
    "SchottkyReport",
    "schottky_diagnostics",
    "impulsive_circulation",
]

PANCAKE_CONSTANT = -1.5
COINCIDENCE = 1e-12
MAX_PRODUCT_TERMS = 100_000
COLLISION_THRESHOLD = 1e-6


def _as_complex(z: complex | Sequence[float]) -> complex:
    if isinstance(z, (complex, float, int, np.number)):
        return complex(z)
    x, y = z
    return complex(float(x), float(y))


def _vec(c: complex) -> NDArray[np.float64]:
    return np.array([c.real, c.imag])


def _grad_log_abs(ratio: complex) -> NDArray[np.float64]:
    """Gradient of ``log|f|`` given the logarithmic derivative ``f'/f``."""
    return _vec(ratio.conjugate())


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class AnnulusDomain:
    """The annulus ``r <= |z| <= R``."""

    r: float
    R: float

    def __post_init__(self) -> None:
        r, R = float(self.r), float(self.R)
        if not (math.isfinite(r) and math.isfinite(R) and 0 < r < R):
            raise ValueError(f"annulus needs 0 < r < R, got r={r!r}, R={R!r}")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "R", R)

    @property
    def modulus(self) -> float:
        """``log(R / r)``."""
        return math.log(self.R / self.r)

    @property
    def ratio(self) -> float:
        """``q = r / R``, the geometric ratio of the image series."""
        return self.r / self.R

    @property
    def symmetry_radius(self) -> float:
        return math.sqrt(self.r * self.R)

    def contains(self, z: complex, closed: bool = False) -> bool:
        a = abs(z)
        return (self.r <= a <= self.R) if closed else (self.r < a < self.R)


@dataclass(frozen=True)
class CirculationVector:
    """Prescribed circulations around the inner boundary components."""

    p: tuple[float, ...]

    def __post_init__(self) -> None:
        p = tuple(float(v) for v in np.atleast_1d(np.asarray(self.p, dtype=float)))
        if not all(math.isfinite(v) for v in p):
            raise ValueError("circulations must be finite")
        object.__setattr__(self, "p", p)

    @property
    def inner(self) -> float:
        if len(self.p) != 1:
            raise ValueError("the annulus has exactly one inner boundary")
        return self.p[0]

    def outer(self, total_strength: float = 1.0) -> float:
        """Circulation around the outer boundary, ``-sum p + total strength``."""
        return -sum(self.p) + total_strength


@dataclass(frozen=True)
class CapacityData:
    """Capacity ``P`` and its inverse ``Q`` (scalars for the annulus)."""

    P: float
    Q: float

    def __post_init__(self) -> None:
        if not self.P > 0:
            raise ValueError("P must be positive")
        if abs(self.P * self.Q - 1.0) > 1e-14:
            raise ValueError("P and Q are not inverse to each other")


def _circulation_value(p: CirculationVector | float | Sequence[float]) -> float:
    if isinstance(p, CirculationVector):
        return p.inner
    return CirculationVector(p).inner


# ---------------------------------------------------------------------------
# Disk, its double and the sphere


def green_electro_disk(z: complex | Sequence[float], w: complex | Sequence[float]) -> GreenEval:
    """Dirichlet Green function of the unit disk, ``-(1/2pi) log|(z-w)/(1-z conj(w))|``."""
    z, w = _as_complex(z), _as_complex(w)
    if abs(z) >= 1 or abs(w) >= 1:
        raise OutsideDomain("both points must lie in the open unit disk")
    if abs(z - w) < COINCIDENCE:
        raise CoincidentPoints("z and w coincide")
    wc = w.conjugate()
    value = -(math.log(abs(z - w)) - math.log(abs(1 - z * wc))) / (2 * math.pi)
    grad = -(_grad_log_abs(1 / (z - w)) - _grad_log_abs(-wc / (1 - z * wc))) / (2 * math.pi)
    return GreenEval(value, grad, "closed_form")


def _double_disk_raw(z: complex, w: complex, z_outside: bool) -> tuple[float, NDArray[np.float64]]:
    """``8 pi G`` and its gradient with the face of ``z`` forced."""
    az2, aw2 = abs(z) ** 2, abs(w) ** 2
    value = -4 * math.log(abs(z - w)) + PANCAKE_CONSTANT
    grad = -4 * _grad_log_abs(1 / (z - w))
    if z_outside:
        value += 1 / az2 + 2 * math.log(az2)
        grad = grad - 2 * _vec(z) / az2**2 + 4 * _vec(z) / az2
    else:
        value += az2
        grad = grad + 2 * _vec(z)
    value += aw2 if aw2 <= 1 else 1 / aw2 + 2 * math.log(aw2)
    return value, grad


def green_double_disk(z: complex | Sequence[float], w: complex | Sequence[float]) -> GreenEval:
    """Green function of the double of the unit disk with the flat metric on both faces.

    The back face is the exterior ``|z| > 1`` with area density ``1/|z|^4``.
    Points on the unit circle use the interior branch; the branches match to
    first order there.
    """
    z, w = _as_complex(z), _as_complex(w)
    if abs(z - w) < COINCIDENCE:
        raise CoincidentPoints("z and w coincide")
    value, grad = _double_disk_raw(z, w, abs(z) > 1)
    scale = 1 / (8 * math.pi)
    return GreenEval(value * scale, grad * scale, "closed_form")


def double_disk_matching(w: complex | Sequence[float], nodes: int = 64) -> tuple[float, float]:
    """Largest jumps of value and radial derivative between the two faces on ``|z| = 1``."""
    w = _as_complex(w)
    value_jump = slope_jump = 0.0
    for t in 2 * math.pi * np.arange(nodes) / nodes:
        z = complex(math.cos(t), math.sin(t))
        v_in, g_in = _double_disk_raw(z, w, False)
        v_out, g_out = _double_disk_raw(z, w, True)
        normal = _vec(z)
        value_jump = max(value_jump, abs(v_in - v_out) / (8 * math.pi))
        slope_jump = max(slope_jump, abs(float((g_in - g_out) @ normal)) / (8 * math.pi))
    return value_jump, slope_jump


def double_disk_mean(tol: float = 1e-12) -> float:
    """Area integral of ``G(., 0)`` over both faces.

    The back face is mapped to the unit disk by ``z -> 1/z``, which turns the
    density ``1/|z|^4`` into the flat one.
    """

    def front(rad: float) -> float:
        return green_double_disk(rad, 0).value * rad if rad > 0 else 0.0

    def back(t: float) -> float:
        return green_double_disk(1 / t, 0).value * t if t > 0 else 0.0

    inner, _ = quad(front, 0.0, 1.0, epsabs=tol, epsrel=tol, limit=200)
    outer, _ = quad(back, 0.0, 1.0, epsabs=tol, epsrel=tol, limit=200)
    return 2 * math.pi * (inner + outer)


def electro_from_double_check(z: complex | Sequence[float], w: complex | Sequence[float]) -> float:
    """Residual of ``G_disk(z, w) - [G_double(z, w) - G_double(z, 1/conj(w))]``.

    At ``w = 0`` the reflected point is infinite; there the double's value
    tends to ``(|z|^2 + c) / 8pi``.
    """
    z, w = _as_complex(z), _as_complex(w)
    electro = green_electro_disk(z, w).value
    if w == 0:
        at_infinity = (abs(z) ** 2 + PANCAKE_CONSTANT) / (8 * math.pi)
        return abs(electro - (green_double_disk(z, w).value - at_infinity))
    mirror = 1 / w.conjugate()
    return abs(electro - (green_double_disk(z, w).value - green_double_disk(z, mirror).value))


def green_sphere(z: complex | Sequence[float], w: complex | Sequence[float]) -> GreenEval:
    """Green function of the unit round sphere in stereographic coordinates.

    ``-(1/4pi) (log(|z-w|^2 / ((1+|z|^2)(1+|w|^2))) + 1)``.  An infinite ``z``
    or ``w`` (the north pole) is evaluated through the limit; the gradient at
    ``z = inf`` is taken in the inverted chart ``1/z``.
    """
    z, w = _as_complex(z), _as_complex(w)
    z_inf, w_inf = not np.isfinite(z), not np.isfinite(w)
    if z_inf and w_inf:
        raise CoincidentPoints("z and w are both the point at infinity")
    if z_inf or w_inf:
        finite = w if z_inf else z
        value = -(math.log(1 / (1 + abs(finite) ** 2)) + 1) / (4 * math.pi)
        if z_inf:
            grad = _vec(finite.conjugate()) / (2 * math.pi)
            return GreenEval(value, grad, "inverted_chart")
        grad = -(-2 * _vec(z) / (1 + abs(z) ** 2)) / (4 * math.pi)
        return GreenEval(value, grad, "inverted_chart")
    if abs(z - w) < COINCIDENCE:
        raise CoincidentPoints("z and w coincide")
    az2, aw2 = abs(z) ** 2, abs(w) ** 2
    value = -(math.log(abs(z - w) ** 2 / ((1 + az2) * (1 + aw2))) + 1) / (4 * math.pi)
    grad = -(2 * _grad_log_abs(1 / (z - w)) - 2 * _vec(z) / (1 + az2)) / (4 * math.pi)
    return GreenEval(value, grad, "closed_form")


# ---------------------------------------------------------------------------
# Annulus: harmonic measure and capacity


def harmonic_measure_annulus(
    dom: AnnulusDomain, z: complex | Sequence[float]
) -> tuple[float, NDArray[np.float64]]:
    """Harmonic measure of the inner circle, ``u = log(R/|z|) / log(R/r)``, and its gradient."""
    z = _as_complex(z)
    a = abs(z)
    tol = 1e-12 * dom.R
    if not (dom.r - tol <= a <= dom.R + tol):
        raise OutsideDomain(f"|z| = {a:.6g} outside [{dom.r:.6g}, {dom.R:.6g}]")
    L = dom.modulus
    u = math.log(dom.R / a) / L
    grad = -_vec(z) / (a * a * L)
    return u, grad


def capacity_annulus(dom: AnnulusDomain) -> CapacityData:
    """Closed-form capacity ``P = pi / log(R/r)`` and ``Q = log(R/r) / pi``."""
    L = dom.modulus
    return CapacityData(math.pi / L, L / math.pi)


def capacity_quadrature(dom: AnnulusDomain, radial_nodes: int = 64, angular_nodes: int = 16) -> float:
    """``(1/2) int |grad u|^2 dA`` by Gauss-Legendre in radius and the trapezoid rule in angle."""
    xg, wg = np.polynomial.legendre.leggauss(radial_nodes)
    radii = 0.5 * (dom.R - dom.r) * xg + 0.5 * (dom.R + dom.r)
    weights = 0.5 * (dom.R - dom.r) * wg
    angles = 2 * math.pi * np.arange(angular_nodes) / angular_nodes
    total = 0.0
    for rad, wt in zip(radii, weights):
        ring = 0.0
        for th in angles:
            _, g = harmonic_measure_annulus(dom, rad * complex(math.cos(th), math.sin(th)))
            ring += float(g @ g)
        total += wt * rad * ring * 2 * math.pi / angular_nodes
    return 0.5 * total


# ---------------------------------------------------------------------------
# Annulus: Dirichlet Green function by the image product


def _term_count(q: float, tol: float) -> int:
    """Terms needed so that the neglected image factors are below ``tol``."""
    if q <= 0:
        return 0
    count = max(1, math.ceil((math.log(tol) / math.log(q) + 1) / 2) + 1)
    if count > MAX_PRODUCT_TERMS:
        raise SeriesNotConverged(f"image series needs {count} terms for q={q:.6g}")
    return count


def _log_product(x: complex, q2k: NDArray[np.float64]) -> tuple[float, complex]:
    """``log|P(x)|`` and ``P'(x)/P(x)`` for ``P(x) = (1-x) prod (1 - q^2k x)(1 - q^2k / x)``."""
    if abs(1 - x) < COINCIDENCE:
        raise CoincidentPoints("image product evaluated at a zero")
    a = 1 - q2k * x
    b = 1 - q2k / x
    value = math.log(abs(1 - x)) + float(np.sum(np.log(np.abs(a)) + np.log(np.abs(b))))
    deriv = -1 / (1 - x) + complex(np.sum(-q2k / a + (q2k / (x * x)) / b))
    return value, deriv


def _image_weights(dom: AnnulusDomain, tol: float) -> NDArray[np.float64]:
    q = dom.ratio
    k = np.arange(1, _term_count(q, tol) + 1)
    return q ** (2.0 * k)


def _check_inside(dom: AnnulusDomain, *points: complex) -> None:
    for p in points:
        if not dom.contains(p):
            raise OutsideDomain(f"|z| = {abs(p):.6g} not strictly inside ({dom.r:.6g}, {dom.R:.6g})")


def _check_closed(dom: AnnulusDomain, z: complex) -> None:
    a = abs(z)
    slack = 1e-12 * dom.R
    if not (dom.r - slack <= a <= dom.R + slack):
        raise OutsideDomain(f"|z| = {a:.6g} outside [{dom.r:.6g}, {dom.R:.6g}]")


def green_electro_annulus(
    dom: AnnulusDomain, z: complex | Sequence[float], w: complex | Sequence[float], tol: float = 1e-14
) -> GreenEval:
    """Dirichlet Green function of the annulus.

    In the scaled variable ``zeta = z / R`` (outer radius one, inner radius
    ``q``) the function is

        -(1/2pi) [log|P(zeta/omega)| + log|omega| - log|P(zeta conj(omega))|
                  - log|zeta| log|omega| / log q]

    where ``P`` is the image product.  The product is truncated once the
    factors differ from one by less than ``tol``.  The first point may lie on
    the boundary, where the function vanishes; the second must be interior.
    """
    z, w = _as_complex(z), _as_complex(w)
    _check_closed(dom, z)
    _check_inside(dom, w)
    if abs(z - w) < COINCIDENCE:
        raise CoincidentPoints("z and w coincide")
    q2k = _image_weights(dom, tol)
    zeta, omega = z / dom.R, w / dom.R
    log_q = math.log(dom.ratio)
    direct, d_direct = _log_product(zeta / omega, q2k)
    mirror, d_mirror = _log_product(zeta * omega.conjugate(), q2k)
    lz, lw = math.log(abs(zeta)), math.log(abs(omega))
    value = -(direct + lw - mirror - lz * lw / log_q) / (2 * math.pi)
    grad_zeta = (
        _grad_log_abs(d_direct / omega)
        - _grad_log_abs(d_mirror * omega.conjugate())
        - (lw / log_q) * _vec(zeta) / abs(zeta) ** 2
    )
    grad = -grad_zeta / (2 * math.pi * dom.R)
    return GreenEval(value, grad, "image_series")


def robin_electro_annulus(
    dom: AnnulusDomain, z: complex | Sequence[float], tol: float = 1e-14
) -> tuple[float, NDArray[np.float64]]:
    """Robin function ``lim [G(z, w) + (1/2pi) log|z - w|]`` and its gradient.

    The logarithm is removed analytically from the direct image factor.
    """
    z = _as_complex(z)
    _check_inside(dom, z)
    q2k = _image_weights(dom, tol)
    zeta = z / dom.R
    s = abs(zeta) ** 2
    log_q = math.log(dom.ratio)
    lz = math.log(abs(zeta))
    mirror, d_mirror = _log_product(complex(s), q2k)
    const = 2 * float(np.sum(np.log1p(-q2k)))
    value = -(const - mirror - lz * lz / log_q) / (2 * math.pi) + math.log(dom.R) / (2 * math.pi)
    # d/dzeta of s is 2 zeta as a real gradient
    grad_zeta = -d_mirror.real * 2 * _vec(zeta) - (2 * lz / log_q) * _vec(zeta) / s
    grad = -grad_zeta / (2 * math.pi * dom.R)
    return value, grad


def green_hydro(
    dom: AnnulusDomain,
    z: complex | Sequence[float],
    w: complex | Sequence[float],
    p: CirculationVector | float | Sequence[float] = 0.0,
    tol: float = 1e-14,
) -> GreenEval:
    """Hydrodynamic Green function ``G_electro + (1/2) Q (u(z) - p)(u(w) - p)``.

    With ``p = 0`` this is the Green function with zero circulation around the
    inner circle.
    """
    z, w = _as_complex(z), _as_complex(w)
    p1 = _circulation_value(p)
    base = green_electro_annulus(dom, z, w, tol)
    Q = capacity_annulus(dom).Q
    uz, duz = harmonic_measure_annulus(dom, z)
    uw, _ = harmonic_measure_annulus(dom, w)
    value = base.value + 0.5 * Q * (uz - p1) * (uw - p1)
    grad = base.grad_first_slot + 0.5 * Q * (uw - p1) * duz
    return GreenEval(value, grad, "image_series")


def _circle(radius: float, nodes: int, clockwise: bool) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
    """Nodes on a circle and the tangent ``dz/dt`` for ``t`` in ``[0, 2pi)``."""
    t = 2 * math.pi * np.arange(nodes) / nodes
    sign = -1.0 if clockwise else 1.0
    pts = radius * np.exp(1j * sign * t)
    return pts, 1j * sign * pts


def boundary_circulation(
    dom: AnnulusDomain,
    grad_field,
    boundary: str = "inner",
    nodes: int = 64,
    inset: float = 0.0,
) -> float:
    """``oint *dF`` over a boundary circle with the boundary orientation.

    ``grad_field(z)`` returns the gradient of ``F``.  Uses the periodic
    trapezoid rule; ``inset`` moves the circle into the domain by that
    distance, for fields that are only defined in the open annulus.
    """
    if boundary == "inner":
        pts, tang = _circle(dom.r + inset, nodes, clockwise=True)
    elif boundary == "outer":
        pts, tang = _circle(dom.R - inset, nodes, clockwise=False)
    else:
        raise ValueError("boundary must be 'inner' or 'outer'")
    total = 0.0
    for z, dz in zip(pts, tang):
        gx, gy = grad_field(complex(z))
        total += -gy * dz.real + gx * dz.imag
    return float(total * 2 * math.pi / nodes)


def flux_pairing(
    dom: AnnulusDomain,
    value_field,
    grad_field,
    nodes: int = 64,
    inset: float = 0.0,
) -> float:
    """``oint F *dH`` over the whole boundary, both circles with boundary orientation."""
    total = 0.0
    for radius, clockwise in ((dom.r + inset, True), (dom.R - inset, False)):
        pts, tang = _circle(radius, nodes, clockwise)
        for z, dz in zip(pts, tang):
            gx, gy = grad_field(complex(z))
            total += value_field(complex(z)) * (-gy * dz.real + gx * dz.imag)
    return float(total * 2 * math.pi / nodes)


# ---------------------------------------------------------------------------
# Reduced dynamics on the annulus


@dataclass(frozen=True, eq=False)
class LinReduced:
    """Reduced Hamiltonian, its Kirchhoff-Routh form and the equations of motion."""

    H_red: float
    H_lin: float
    velocities: NDArray[np.float64]
    B: float
    B_dot: float


def _positions(positions: ArrayLike) -> list[complex]:
    arr = np.asarray(positions)
    if np.iscomplexobj(arr):
        return [complex(v) for v in arr.reshape(-1)]
    arr = np.asarray(arr, dtype=float).reshape(-1, 2)
    return [complex(x, y) for x, y in arr]


def _pair_check(pts: list[complex], threshold: float) -> None:
    for j in range(len(pts)):
        for k in range(j):
            if abs(pts[j] - pts[k]) < threshold:
                raise CollisionError(f"vortices {k} and {j} are {abs(pts[j] - pts[k]):.3e} apart")


def lin_reduced(
    dom: AnnulusDomain,
    positions: ArrayLike,
    strengths: ArrayLike,
    p: CirculationVector | float | Sequence[float],
    B: float | None = None,
    tol: float = 1e-14,
    collision_threshold: float = COLLISION_THRESHOLD,
) -> LinReduced:
    """Reduced Hamiltonian and velocities of ``N`` vortices in the annulus.

    ``B`` defaults to ``p - sum G_k u(s_k)``.  With the flat area form the
    equations of motion are ``G_j x_j' = dH/dy_j``, ``G_j y_j' = -dH/dx_j``
    together with ``B' = -sum G_j du(s_j) . s_j'``.  The derivatives are taken
    at fixed ``p``, so ``B`` follows the vortices; this is the gradient of
    the Kirchhoff-Routh Hamiltonian.
    """
    pts = _positions(positions)
    gam = np.asarray(strengths, dtype=float).reshape(-1)
    if len(pts) != gam.size:
        raise ValueError("positions and strengths differ in length")
    _check_inside(dom, *pts)
    _pair_check(pts, collision_threshold)
    p1 = _circulation_value(p)
    Q = capacity_annulus(dom).Q
    n = len(pts)
    u = np.empty(n)
    du = np.empty((n, 2))
    rob = np.empty(n)
    drob = np.empty((n, 2))
    for j, s in enumerate(pts):
        u[j], du[j] = harmonic_measure_annulus(dom, s)
        rob[j], drob[j] = robin_electro_annulus(dom, s, tol)
    if B is None:
        B = p1 - float(gam @ u)
    pair = np.zeros((n, n))
    grad = np.zeros((n, 2))
    for j in range(n):
        for k in range(n):
            if j == k:
                continue
            g = green_electro_annulus(dom, pts[j], pts[k], tol)
            pair[j, k] = g.value
            grad[j] += gam[k] * g.grad_first_slot
    H_red = 0.5 * float(gam**2 @ rob) + 0.5 * float(gam @ pair @ gam) + 0.25 * B * Q * B
    # dH/ds_j divided by G_j at fixed p, using dB/ds_j = -G_j du_j
    force = 0.5 * gam[:, None] * drob + grad - 0.5 * B * Q * du
    vel = np.column_stack([force[:, 1], -force[:, 0]]) if n else np.zeros((0, 2))
    B_dot = -float(np.sum(gam * np.sum(du * vel, axis=1)))
    H_lin = lin_hamiltonian(dom, pts, gam, p1, tol, rob=rob, pair=pair, u=u)
    return LinReduced(H_red, H_lin, vel, float(B), B_dot)


def lin_hamiltonian(
    dom: AnnulusDomain,
    positions: ArrayLike,
    strengths: ArrayLike,
    p: CirculationVector | float | Sequence[float],
    tol: float = 1e-14,
    *,
    rob: NDArray[np.float64] | None = None,
    pair: NDArray[np.float64] | None = None,
    u: NDArray[np.float64] | None = None,
) -> float:
    """Kirchhoff-Routh Hamiltonian built from the zero-circulation Green function.

    ``sum G_j^2 R_Lin / 2 + sum_{j != k} G_j G_k G_Lin / 2 + sum G_j psi(s_j)``
    with ``R_Lin = R + u Q u / 2``, ``G_Lin = G + u Q u / 2`` and the outside
    agency ``psi = -p Q u / 2``.
    """
    pts = _positions(positions)
    gam = np.asarray(strengths, dtype=float).reshape(-1)
    p1 = _circulation_value(p)
    Q = capacity_annulus(dom).Q
    n = len(pts)
    if u is None:
        u = np.array([harmonic_measure_annulus(dom, s)[0] for s in pts])
    if rob is None:
        rob = np.array([robin_electro_annulus(dom, s, tol)[0] for s in pts])
    if pair is None:
        pair = np.zeros((n, n))
        for j in range(n):
            for k in range(n):
                if j != k:
                    pair[j, k] = green_electro_annulus(dom, pts[j], pts[k], tol).value
    r_lin = rob + 0.5 * Q * u * u
    g_lin = pair + 0.5 * Q * np.outer(u, u)
    np.fill_diagonal(g_lin, 0.0)
    psi = -0.5 * p1 * Q * u
    return 0.5 * float(gam**2 @ r_lin) + 0.5 * float(gam @ g_lin @ gam) + float(gam @ psi)


@dataclass(frozen=True, eq=False)
class AnnulusTrajectory:
    """Samples of a reduced annulus run; ``positions`` has shape ``(S, N, 2)``."""

    domain: AnnulusDomain
    times: NDArray[np.float64]
    positions: NDArray[np.float64]
    B: NDArray[np.float64]
    strengths: NDArray[np.float64]
    p: float
    H_red: NDArray[np.float64]
    stats: IntegratorStats
    halt_reason: str | None = None


def integrate_annulus(
    dom: AnnulusDomain,
    positions: ArrayLike,
    strengths: ArrayLike,
    p: CirculationVector | float | Sequence[float],
    t_end: float,
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-12,
    sample_dt: float = 0.1,
    collision_threshold: float = COLLISION_THRESHOLD,
    tol: float = 1e-14,
) -> AnnulusTrajectory:
    """Integrate the vortices together with the harmonic coordinate ``B``.

    ``B`` starts at ``p - sum G_k u(s_k)`` and is advanced by its own
    equation, so the conservation of ``B + sum G_k u(s_k)`` is a genuine check.
    """
    check_tolerances(rel_tol, abs_tol, t_end)
    pts = _positions(positions)
    gam = np.asarray(strengths, dtype=float).reshape(-1)
    p1 = _circulation_value(p)
    n = len(pts)
    start = lin_reduced(dom, pts, gam, p1, tol=tol, collision_threshold=collision_threshold)
    y0 = np.concatenate([np.array([[s.real, s.imag] for s in pts]).reshape(-1), [start.B]])

    def fun(_t: float, y: NDArray[np.float64]) -> NDArray[np.float64]:
        xy = y[:-1].reshape(n, 2)
        for x, yy in xy:
            if not dom.contains(complex(x, yy)):
                raise CollisionError(f"vortex left the annulus at |z| = {math.hypot(x, yy):.6g}")
        red = lin_reduced(dom, xy, gam, p1, B=float(y[-1]), tol=tol, collision_threshold=collision_threshold)
        return np.concatenate([red.velocities.reshape(-1), [red.B_dot]])

    run = run_adaptive(fun, y0, t_end, rel_tol, abs_tol, sample_dt=sample_dt)
    pos = run.states[:, :-1].reshape(len(run.times), n, 2)
    Bs = run.states[:, -1]
    H = np.array(
        [lin_reduced(dom, pos[i], gam, p1, B=float(Bs[i]), tol=tol, collision_threshold=0.0).H_red for i in range(len(Bs))]
    )
    return AnnulusTrajectory(dom, run.times, pos, Bs, gam, p1, H, run.stats, run.halt_reason)


@dataclass(frozen=True)
class SchottkyReport:
    """Conserved inner circulation and energy along an annulus run."""

    p_initial: float
    p_drift_max: float
    H_drift_max: float
    impulsive_p: float


def impulsive_circulation(dom: AnnulusDomain, positions: ArrayLike, strengths: ArrayLike) -> float:
    """Inner circulation created by starting from rest, ``sum G_k u(s_k)``."""
    pts = _positions(positions)
    gam = np.asarray(strengths, dtype=float).reshape(-1)
    return float(sum(g * harmonic_measure_annulus(dom, s)[0] for g, s in zip(gam, pts)))


def schottky_diagnostics(traj: AnnulusTrajectory) -> SchottkyReport:
    """Drift of ``p = B + sum G_j u(s_j)`` and of ``H_red`` along ``traj``."""
    dom = traj.domain
    series = np.array(
        [b + impulsive_circulation(dom, pos, traj.strengths) for b, pos in zip(traj.B, traj.positions)]
    )
    return SchottkyReport(
        p_initial=float(series[0]),
        p_drift_max=float(np.max(np.abs(series - series[0]))),
        H_drift_max=float(np.max(np.abs(traj.H_red - traj.H_red[0]))),
        impulsive_p=impulsive_circulation(dom, traj.positions[0], traj.strengths),
    )
