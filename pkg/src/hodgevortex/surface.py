"""Flat and conformally flat tori: lattices, conformal factors, harmonic forms.

A torus is the plane modulo the lattice spanned by two generators ``a`` and
``b`` with unit cell area.  Points are stored in Cartesian coordinates; the
fractional (lattice) coordinates of a point ``p`` are the values of the two
closed one-forms dual to the generators, ``(alpha(p), beta(p))``.

The metric is ``rho (dx^2 + dy^2)`` where the conformal factor ``rho`` is a
finite Fourier series in the fractional coordinates with unit mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ConfigError, DegenerateLattice, DetNotOne, NonPositiveDensity

__all__ = [
    "Lattice",
    "ConformalFactor",
    "HarmonicBasis",
    "GramMatrix",
    "FourierField",
    "make_lattice",
    "two_mode_metric",
    "eval_rho",
    "gram_matrix",
    "harmonic_basis",
    "harmonic_coords",
    "riemann_block_check",
    "surface_from_config",
]

DET_TOL = 1e-12
DEGENERATE_TOL = 1e-14
POSITIVITY_GRID = 128


def _vec2(value: ArrayLike, name: str) -> tuple[float, float]:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (2,) or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be a finite 2-vector", key=name)
    return float(arr[0]), float(arr[1])


@dataclass(frozen=True)
class Lattice:
    """Period lattice spanned by ``a`` and ``b`` with ``a x b = 1``."""

    a: tuple[float, float]
    b: tuple[float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", _vec2(self.a, "a"))
        object.__setattr__(self, "b", _vec2(self.b, "b"))
        if math.hypot(*self.a) == 0.0 or math.hypot(*self.b) == 0.0:
            raise DegenerateLattice("lattice generator is the zero vector")
        det = self.det
        if abs(det) < DEGENERATE_TOL:
            raise DegenerateLattice(f"lattice generators are dependent (det={det:.3e})")
        if abs(det - 1.0) > DET_TOL:
            raise DetNotOne(f"lattice determinant {det!r} is not 1")

    @property
    def det(self) -> float:
        return self.a[0] * self.b[1] - self.a[1] * self.b[0]

    @property
    def generators(self) -> NDArray[np.float64]:
        """Rows are ``a`` and ``b``."""
        return np.array([self.a, self.b], dtype=float)

    @property
    def dual(self) -> NDArray[np.float64]:
        """Rows are the gradients of the fractional coordinates."""
        ax, ay = self.a
        bx, by = self.b
        return np.array([[by, -bx], [-ay, ax]], dtype=float)

    def fractional(self, points: ArrayLike) -> NDArray[np.float64]:
        """Fractional coordinates of Cartesian points, shape ``(..., 2)``."""
        p = np.asarray(points, dtype=float)
        return p @ self.dual.T

    def cartesian(self, frac: ArrayLike) -> NDArray[np.float64]:
        """Cartesian points from fractional coordinates."""
        f = np.asarray(frac, dtype=float)
        return f @ self.generators

    def wrap(self, points: ArrayLike) -> NDArray[np.float64]:
        """Representative of each point with fractional coordinates in [0, 1)."""
        f = self.fractional(points)
        f = f - np.floor(f)
        f[f >= 1.0] = 0.0
        return self.cartesian(f)

    def reduce(self, displacements: ArrayLike) -> NDArray[np.float64]:
        """Shift displacements so that fractional coordinates lie in [-1/2, 1/2]."""
        f = self.fractional(displacements)
        return self.cartesian(f - np.round(f))

    def min_image(self, displacements: ArrayLike) -> NDArray[np.float64]:
        """Shortest lattice translate of each displacement."""
        d = self.reduce(displacements)
        best = d.copy()
        best_n2 = np.sum(d * d, axis=-1)
        gens = self.generators
        for i in (-1, 0, 1):
            for j in (-1, 0, 1):
                if i == 0 and j == 0:
                    continue
                cand = d + i * gens[0] + j * gens[1]
                n2 = np.sum(cand * cand, axis=-1)
                better = n2 < best_n2
                best = np.where(better[..., None], cand, best)
                best_n2 = np.where(better, n2, best_n2)
        return best

    def distance(self, p: ArrayLike, q: ArrayLike) -> NDArray[np.float64] | float:
        """Flat distance on the torus between points ``p`` and ``q``."""
        d = self.min_image(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))
        out = np.sqrt(np.sum(d * d, axis=-1))
        return float(out) if out.ndim == 0 else out


def make_lattice(a: ArrayLike, b: ArrayLike, rescale: bool = False) -> Lattice:
    """Build a unit-area lattice, optionally rescaling the generators.

    Parameters
    ----------
    a, b : array_like
        Generators.
    rescale : bool
        If set, both generators are multiplied by ``|det|**-0.5``.  A
        negatively oriented pair is rejected either way.
    """
    av = np.asarray(_vec2(a, "a"))
    bv = np.asarray(_vec2(b, "b"))
    det = av[0] * bv[1] - av[1] * bv[0]
    if abs(det) < DEGENERATE_TOL or not np.any(av) or not np.any(bv):
        raise DegenerateLattice(f"lattice generators are dependent (det={det:.3e})")
    if rescale:
        if det < 0:
            raise DetNotOne("lattice generators are negatively oriented")
        s = det ** -0.5
        av, bv = av * s, bv * s
    return Lattice(tuple(av), tuple(bv))


@dataclass(frozen=True)
class GramMatrix:
    """Gram matrix of the harmonic basis; also the period-matrix data."""

    M: NDArray[np.float64]

    @property
    def P(self) -> float:
        return float(self.M[0, 0])

    @property
    def Q(self) -> float:
        return float(self.M[1, 1])

    @property
    def R(self) -> float:
        return float(self.M[0, 1])

    def quadratic(self, m: ArrayLike, n: ArrayLike) -> NDArray[np.float64]:
        """``(m, n) M (m, n)^T`` elementwise."""
        m = np.asarray(m, dtype=float)
        n = np.asarray(n, dtype=float)
        M = self.M
        return M[0, 0] * m * m + 2.0 * M[0, 1] * m * n + M[1, 1] * n * n


def gram_matrix(lattice: Lattice) -> GramMatrix:
    ax, ay = lattice.a
    bx, by = lattice.b
    off = -ax * bx - ay * by
    return GramMatrix(np.array([[bx * bx + by * by, off], [off, ax * ax + ay * ay]]))


@dataclass(frozen=True)
class HarmonicBasis:
    """Closed one-forms ``alpha``, ``beta`` dual to the cycles ``a``, ``b``.

    Covectors are stored as ``(dx, dy)`` coefficients.
    """

    alpha: tuple[float, float]
    beta: tuple[float, float]

    def periods(self, lattice: Lattice) -> NDArray[np.float64]:
        """Matrix of periods ``[[alpha(a), alpha(b)], [beta(a), beta(b)]]``."""
        forms = np.array([self.alpha, self.beta])
        return forms @ lattice.generators.T

    @property
    def star_alpha(self) -> tuple[float, float]:
        return hodge_star(self.alpha)

    @property
    def star_beta(self) -> tuple[float, float]:
        return hodge_star(self.beta)


def harmonic_basis(lattice: Lattice) -> HarmonicBasis:
    ax, ay = lattice.a
    bx, by = lattice.b
    return HarmonicBasis(alpha=(by, -bx), beta=(-ay, ax))


def hodge_star(covector: ArrayLike) -> tuple[float, float]:
    """Flat Hodge star: ``p dx + q dy -> p dy - q dx``."""
    p, q = (float(c) for c in np.asarray(covector, dtype=float))
    return (-q, p)


def _wedge(u: ArrayLike, v: ArrayLike) -> float:
    """Coefficient of ``dx ^ dy`` in ``u ^ v``."""
    return float(u[0] * v[1] - u[1] * v[0])


def harmonic_coords(
    lattice: Lattice,
    eta: ArrayLike | None = None,
    periods: ArrayLike | None = None,
) -> NDArray[np.float64]:
    """Convert between covector components ``eta`` and periods ``(A, B)``.

    Exactly one of ``eta`` and ``periods`` must be given; the other pair is
    returned.  ``A`` and ``B`` are the integrals of ``eta`` over the cycles
    ``a`` and ``b``.
    """
    if (eta is None) == (periods is None):
        raise ValueError("give exactly one of eta or periods")
    ax, ay = lattice.a
    bx, by = lattice.b
    if eta is not None:
        e = np.asarray(eta, dtype=float)
        return np.stack([ax * e[..., 0] + ay * e[..., 1], bx * e[..., 0] + by * e[..., 1]], axis=-1)
    ab = np.asarray(periods, dtype=float)
    A, B = ab[..., 0], ab[..., 1]
    return np.stack([A * by - B * ay, -A * bx + B * ax], axis=-1)


def riemann_block_check(lattice: Lattice) -> NDArray[np.float64]:
    """Residual of ``[[-R, P], [-Q, R^T]]^2 + I`` for the harmonic basis.

    ``P``, ``Q`` and ``R`` are the integrals of ``alpha ^ *alpha``,
    ``beta ^ *beta`` and ``alpha ^ *beta`` over the unit cell, computed with
    the Hodge star and wedge product rather than taken from the Gram matrix.
    For a torus each block is 1x1, so the assembled matrix is 2x2; it is
    embedded in the upper-left corner of a 4x4 array padded with zeros.
    """
    basis = harmonic_basis(lattice)
    area = abs(lattice.det)
    P = _wedge(basis.alpha, basis.star_alpha) * area
    Q = _wedge(basis.beta, basis.star_beta) * area
    R = _wedge(basis.alpha, basis.star_beta) * area
    block = np.array([[-R, P], [-Q, R]])
    res = np.zeros((4, 4))
    res[:2, :2] = block @ block + np.eye(2)
    return res


@dataclass(frozen=True, eq=False)
class FourierField:
    """Real trigonometric series ``mean + 2 Re sum_k c_k exp(i k . x)``.

    Only one representative of each conjugate pair of modes is stored.
    """

    mean: float
    coeffs: NDArray[np.complex128]
    wavevectors: NDArray[np.float64]

    def _phases(self, points: NDArray[np.float64]) -> NDArray[np.complex128]:
        theta = points @ self.wavevectors.T
        return self.coeffs * np.exp(1j * theta)

    def value(self, points: ArrayLike) -> NDArray[np.float64]:
        p = np.asarray(points, dtype=float)
        if self.coeffs.size == 0:
            return np.full(p.shape[:-1], self.mean)
        e = self._phases(p)
        return self.mean + 2.0 * e.real.sum(axis=-1)

    def value_grad(self, points: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        p = np.asarray(points, dtype=float)
        if self.coeffs.size == 0:
            return np.full(p.shape[:-1], self.mean), np.zeros(p.shape)
        e = self._phases(p)
        val = self.mean + 2.0 * e.real.sum(axis=-1)
        # d/dx Re(c e^{ik.x}) = -Im(c e^{ik.x}) k
        grad = -2.0 * (e.imag @ self.wavevectors)
        return val, grad

    def hessian(self, points: ArrayLike) -> NDArray[np.float64]:
        p = np.asarray(points, dtype=float)
        if self.coeffs.size == 0:
            return np.zeros(p.shape + (2,))
        e = self._phases(p).real
        k = self.wavevectors
        kk = k[:, :, None] * k[:, None, :]
        return -2.0 * np.tensordot(e, kk, axes=([-1], [0]))

    def laplacian(self, points: ArrayLike) -> NDArray[np.float64]:
        h = self.hessian(points)
        return h[..., 0, 0] + h[..., 1, 1]


def _representative(m: int, n: int) -> bool:
    return m > 0 or (m == 0 and n > 0)


@dataclass(frozen=True)
class ConformalFactor:
    """Unit-mean conformal factor ``rho = 1 + sum c_mn exp(2 pi i (m alpha + n beta))``.

    Use :meth:`from_coefficients` to build one from a partial mapping; the
    missing conjugate modes are filled in.  Instances are hashable.

    Parameters
    ----------
    terms : tuple
        Sorted ``((m, n), c_mn)`` pairs containing both members of each
        conjugate pair.
    truncation : int
        Largest admissible ``|m|`` or ``|n|``.
    """

    terms: tuple[tuple[tuple[int, int], complex], ...] = ()
    truncation: int = 1
    check_positivity: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not isinstance(self.truncation, (int, np.integer)) or self.truncation < 1:
            raise ConfigError("truncation order must be a positive integer", key="truncation")
        coeffs = self.coefficients
        for (m, n), c in coeffs.items():
            if (m, n) == (0, 0):
                raise ConfigError("the (0, 0) mode is fixed to 1 and may not be given", key="coefficients")
            if max(abs(m), abs(n)) > self.truncation:
                raise ConfigError(
                    f"mode ({m}, {n}) exceeds truncation order {self.truncation}", key="truncation"
                )
            partner = coeffs.get((-m, -n))
            if partner is None or abs(partner - np.conj(c)) > 1e-14 * max(1.0, abs(c)):
                raise ConfigError(f"mode ({m}, {n}) violates the reality condition", key="coefficients")
        if self.check_positivity:
            low = self.grid_minimum()
            if low <= 0.0:
                raise NonPositiveDensity(f"conformal factor reaches {low:.6g} on the sample grid")

    @classmethod
    def from_coefficients(
        cls,
        coefficients: Mapping[tuple[int, int], complex] | Iterable[Any],
        truncation: int | None = None,
        check_positivity: bool = True,
    ) -> "ConformalFactor":
        """Build from ``{(m, n): c}`` or an iterable of ``[m, n, re, im]``.

        Missing conjugate modes are completed; given pairs must agree.
        """
        if isinstance(coefficients, Mapping):
            items = [((int(m), int(n)), complex(c)) for (m, n), c in coefficients.items()]
        else:
            items = []
            for entry in coefficients:
                if len(entry) != 4:
                    raise ConfigError("coefficient entries must be [m, n, re, im]", key="coefficients")
                m, n, re, im = entry
                if int(m) != m or int(n) != n:
                    raise ConfigError("mode indices must be integers", key="coefficients")
                items.append(((int(m), int(n)), complex(float(re), float(im))))
        full: dict[tuple[int, int], complex] = {}
        for key, c in items:
            if key in full:
                raise ConfigError(f"mode {key} given twice", key="coefficients")
            full[key] = c
        for (m, n), c in list(full.items()):
            partner = (-m, -n)
            if partner not in full:
                full[partner] = complex(np.conj(c))
            elif (m, n) == partner:
                pass
            elif abs(full[partner] - np.conj(c)) > 1e-14 * max(1.0, abs(c)):
                raise ConfigError(f"modes {(m, n)} and {partner} are not conjugate", key="coefficients")
        full = {k: v for k, v in full.items() if v != 0}
        order = max((max(abs(m), abs(n)) for m, n in full), default=1)
        if truncation is None:
            truncation = order
        terms = tuple(sorted(full.items()))
        return cls(terms=terms, truncation=int(truncation), check_positivity=check_positivity)

    @classmethod
    def flat(cls) -> "ConformalFactor":
        return cls()

    @property
    def coefficients(self) -> dict[tuple[int, int], complex]:
        return {(int(m), int(n)): complex(c) for (m, n), c in self.terms}

    @property
    def is_flat(self) -> bool:
        return len(self.terms) == 0

    def scaled(self, factor: float) -> "ConformalFactor":
        """Conformal factor with every non-constant mode multiplied by ``factor``."""
        return ConformalFactor.from_coefficients(
            {k: factor * c for k, c in self.coefficients.items()}, truncation=self.truncation
        )

    def half_modes(self) -> tuple[NDArray[np.int64], NDArray[np.complex128]]:
        """One representative index per conjugate pair and its amplitude."""
        idx = [(m, n) for (m, n), _ in self.terms if _representative(m, n)]
        coeffs = self.coefficients
        modes = np.array(idx, dtype=np.int64).reshape(-1, 2)
        amps = np.array([coeffs[k] for k in idx], dtype=complex)
        return modes, amps

    def on_fractional(self, frac: ArrayLike) -> NDArray[np.float64]:
        """Evaluate ``rho`` at fractional coordinates (lattice independent)."""
        f = np.asarray(frac, dtype=float)
        modes, amps = self.half_modes()
        if amps.size == 0:
            return np.ones(f.shape[:-1])
        theta = 2.0 * np.pi * (f @ modes.T.astype(float))
        return 1.0 + 2.0 * (amps * np.exp(1j * theta)).real.sum(axis=-1)

    def grid_extrema(self, n: int = POSITIVITY_GRID) -> tuple[float, float]:
        """Minimum and maximum of ``rho`` on an ``n x n`` grid of the cell."""
        g = np.arange(n) / n
        U, V = np.meshgrid(g, g, indexing="ij")
        vals = self.on_fractional(np.stack([U, V], axis=-1))
        return float(vals.min()), float(vals.max())

    def grid_minimum(self, n: int = POSITIVITY_GRID) -> float:
        """Minimum of ``rho`` on an ``n x n`` grid of the fundamental cell.

        This is a sampling heuristic, not a proof of positivity.
        """
        return self.grid_extrema(n)[0]

    def field(self, lattice: Lattice) -> FourierField:
        """``rho`` as a Cartesian trigonometric series on ``lattice``."""
        modes, amps = self.half_modes()
        return FourierField(1.0, amps, wavevectors(lattice, modes))


def wavevectors(lattice: Lattice, modes: NDArray[np.int64]) -> NDArray[np.float64]:
    """Cartesian gradients of the phases ``2 pi (m alpha + n beta)``."""
    modes = np.asarray(modes, dtype=float).reshape(-1, 2)
    return 2.0 * np.pi * (modes @ lattice.dual)


def two_mode_metric(amplitude: float = 0.25) -> ConformalFactor:
    """``rho = 1 + amplitude (cos 2 pi alpha + sin 2 pi beta)``."""
    h = 0.5 * amplitude
    return ConformalFactor.from_coefficients({(1, 0): h, (0, 1): -1j * h})


def eval_rho(
    cf: ConformalFactor, x: ArrayLike, y: ArrayLike, lattice: Lattice
) -> tuple[NDArray[np.float64] | float, NDArray[np.float64]]:
    """Conformal factor and its Cartesian gradient at ``(x, y)``.

    Raises
    ------
    NonPositiveDensity
        If ``rho <= 0`` at any query point.
    """
    pts = np.stack(np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float)), axis=-1)
    val, grad = cf.field(lattice).value_grad(pts)
    if np.any(val <= 0.0):
        raise NonPositiveDensity("conformal factor is not positive at the query point")
    if val.ndim == 0:
        return float(val), grad
    return val, grad


def surface_from_config(cfg: Mapping[str, Any]) -> tuple[Lattice, ConformalFactor]:
    """Read ``lattice.a``, ``lattice.b`` and ``conformal.coefficients``."""
    if not isinstance(cfg, Mapping):
        raise ConfigError("configuration must be a JSON object")
    if "lattice" not in cfg:
        raise ConfigError("missing key 'lattice'", key="lattice")
    lat = cfg["lattice"]
    if not isinstance(lat, Mapping):
        raise ConfigError("'lattice' must be an object", key="lattice")
    for k in ("a", "b"):
        if k not in lat:
            raise ConfigError(f"missing key 'lattice.{k}'", key=f"lattice.{k}")
    lattice = make_lattice(lat["a"], lat["b"], rescale=bool(lat.get("rescale", False)))
    conformal = cfg.get("conformal", {}) or {}
    if not isinstance(conformal, Mapping):
        raise ConfigError("'conformal' must be an object", key="conformal")
    coeffs = conformal.get("coefficients", [])
    trunc = conformal.get("truncation")
    cf = ConformalFactor.from_coefficients(coeffs, truncation=trunc)
    return lattice, cf
