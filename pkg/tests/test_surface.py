from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hodgevortex.errors import ConfigError, DegenerateLattice, DetNotOne, NonPositiveDensity
from hodgevortex.surface import (
    ConformalFactor,
    eval_rho,
    gram_matrix,
    harmonic_basis,
    harmonic_coords,
    make_lattice,
    riemann_block_check,
    surface_from_config,
    two_mode_metric,
)


def random_lattice(rng: np.random.Generator):
    while True:
        a = rng.normal(size=2)
        b = rng.normal(size=2)
        det = a[0] * b[1] - a[1] * b[0]
        if det > 0.2:
            return make_lattice(a, b, rescale=True)


# make_lattice


def test_square_lattice_is_valid(square):
    assert square.det == 1.0


def test_rescale_halves_generators():
    lat = make_lattice((2.0, 0.0), (0.0, 2.0), rescale=True)
    assert lat.a == (1.0, 0.0) and lat.b == (0.0, 1.0)


def test_sheared_lattice_has_unit_det(sheared):
    assert abs(sheared.det - 1.0) < 1e-15


def test_dependent_generators_rejected():
    with pytest.raises(DegenerateLattice):
        make_lattice((1.0, 2.0), (2.0, 4.0))


def test_non_unit_det_rejected_without_rescale():
    with pytest.raises(DetNotOne):
        make_lattice((2.0, 0.0), (0.0, 1.0))


# eval_rho


def test_rho_at_density_maximum(square, metric):
    rho, _ = eval_rho(metric, 0.0, 0.25, square)
    assert abs(rho - 1.5) < 1e-14


def test_rho_at_density_minimum(square, metric):
    rho, _ = eval_rho(metric, 0.5, 0.75, square)
    assert abs(rho - 0.5) < 1e-14


def test_flat_rho_is_one(square, flat):
    rho, grad = eval_rho(flat, 0.37, 0.81, square)
    assert rho == 1.0 and np.all(grad == 0.0)


def test_rho_matches_cosine_form(square, metric, rng):
    pts = rng.random((50, 2))
    rho, grad = eval_rho(metric, pts[:, 0], pts[:, 1], square)
    x, y = pts[:, 0], pts[:, 1]
    expected = 1 + 0.25 * (np.cos(2 * np.pi * x) + np.sin(2 * np.pi * y))
    d_expected = np.column_stack([-0.5 * np.pi * np.sin(2 * np.pi * x), 0.5 * np.pi * np.cos(2 * np.pi * y)])
    assert np.max(np.abs(rho - expected)) < 1e-14
    assert np.max(np.abs(grad - d_expected)) < 1e-13


def test_rho_integrates_to_one(square, metric):
    n = 256
    g = np.arange(n) / n
    X, Y = np.meshgrid(g, g, indexing="ij")
    rho, _ = eval_rho(metric, X, Y, square)
    assert abs(rho.mean() - 1.0) < 1e-8


def test_rho_integrates_to_one_on_sheared_lattice(sheared):
    cf = ConformalFactor.from_coefficients({(1, 1): 0.1 + 0.05j, (2, -1): 0.07})
    n = 256
    g = np.arange(n) / n
    U, V = np.meshgrid(g, g, indexing="ij")
    pts = sheared.cartesian(np.stack([U, V], axis=-1))
    rho, _ = eval_rho(cf, pts[..., 0], pts[..., 1], sheared)
    assert abs(rho.mean() - 1.0) < 1e-8


def test_nonpositive_density_rejected():
    with pytest.raises(NonPositiveDensity):
        ConformalFactor.from_coefficients({(1, 0): 0.6})


def test_reality_condition_enforced():
    with pytest.raises(ConfigError):
        ConformalFactor.from_coefficients([[1, 0, 0.1, 0.0], [-1, 0, 0.2, 0.0]])


def test_truncation_enforced():
    with pytest.raises(ConfigError):
        ConformalFactor.from_coefficients({(3, 0): 0.1}, truncation=2)


# gram_matrix


def test_square_gram_is_identity(square):
    assert np.array_equal(gram_matrix(square).M, np.eye(2))


def test_sheared_gram_matrix(sheared):
    assert np.allclose(gram_matrix(sheared).M, [[1.25, -0.5], [-0.5, 1.0]], atol=1e-15)


def test_gram_matrix_properties(rng):
    for _ in range(50):
        M = gram_matrix(random_lattice(rng)).M
        assert np.allclose(M, M.T)
        assert np.all(np.linalg.eigvalsh(M) > 0)
        assert abs(np.linalg.det(M) - 1.0) < 1e-12


def test_gram_matches_basis_inner_products(sheared):
    basis = harmonic_basis(sheared)
    alpha, beta = np.array(basis.alpha), np.array(basis.beta)
    M = gram_matrix(sheared).M
    assert np.allclose(M, [[alpha @ alpha, alpha @ beta], [beta @ alpha, beta @ beta]], atol=1e-15)


# harmonic basis and coordinates


def test_period_conditions(sheared):
    assert np.allclose(harmonic_basis(sheared).periods(sheared), np.eye(2), atol=1e-15)


def test_harmonic_coords_square(square):
    assert np.allclose(harmonic_coords(square, eta=(0.3, -0.7)), (0.3, -0.7))


def test_harmonic_coords_zero(sheared):
    assert np.all(harmonic_coords(sheared, eta=(0.0, 0.0)) == 0.0)


def test_harmonic_coords_sheared(sheared):
    ab = harmonic_coords(sheared, eta=(1.0, 0.0))
    assert np.allclose(ab, (1.0, 0.5))
    assert np.allclose(harmonic_coords(sheared, periods=ab), (1.0, 0.0))


def test_harmonic_coords_round_trip(rng):
    worst = 0.0
    count = 0
    while count < 1000:
        a, b = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        if a[0] * b[1] - a[1] * b[0] < 0.3:
            continue
        lat = make_lattice(a, b, rescale=True)
        eta = rng.uniform(-1, 1, 2)
        back = harmonic_coords(lat, periods=harmonic_coords(lat, eta=eta))
        worst = max(worst, float(np.max(np.abs(back - eta))))
        count += 1
    assert worst < 1e-14


@given(
    st.floats(-5, 5, allow_nan=False),
    st.floats(-5, 5, allow_nan=False),
    st.floats(-3, 3, allow_nan=False),
)
def test_harmonic_coords_round_trip_property(ex, ey, shear):
    lat = make_lattice((1.0, 0.0), (shear, 1.0))
    back = harmonic_coords(lat, periods=harmonic_coords(lat, eta=(ex, ey)))
    assert np.allclose(back, (ex, ey), atol=1e-12)


# Riemann block


def test_riemann_block_square(square):
    res = riemann_block_check(square)
    assert res.shape == (4, 4)
    assert np.max(np.abs(res)) < 1e-14


def test_riemann_block_sheared(sheared):
    assert np.max(np.abs(riemann_block_check(sheared))) < 1e-12


def test_riemann_block_random(rng):
    for _ in range(20):
        assert np.max(np.abs(riemann_block_check(random_lattice(rng)))) < 1e-12


def test_riemann_block_blocks_agree_with_gram(sheared):
    basis = harmonic_basis(sheared)
    a, sa = np.array(basis.alpha), np.array(basis.star_alpha)
    # alpha ^ *alpha = |alpha|^2 dx ^ dy
    assert abs((a[0] * sa[1] - a[1] * sa[0]) - gram_matrix(sheared).P) < 1e-15


# config


def test_surface_from_config_reads_coefficients():
    cfg = {
        "lattice": {"a": [1, 0], "b": [0, 1]},
        "conformal": {"coefficients": [[1, 0, 0.125, 0.0], [0, 1, 0.0, -0.125]]},
    }
    lat, cf = surface_from_config(cfg)
    assert cf == two_mode_metric()
    assert lat.a == (1.0, 0.0)


def test_surface_from_config_missing_lattice():
    with pytest.raises(ConfigError) as info:
        surface_from_config({"conformal": {}})
    assert info.value.key == "lattice"


def test_cartesian_fractional_round_trip(sheared, rng):
    p = rng.normal(size=(20, 2))
    assert np.allclose(sheared.cartesian(sheared.fractional(p)), p, atol=1e-14)


def test_wrap_lands_in_cell(sheared, rng):
    p = rng.normal(scale=5, size=(50, 2))
    f = sheared.fractional(sheared.wrap(p))
    assert np.all((f >= 0) & (f < 1))
    shift = sheared.fractional(p) - f
    assert np.allclose(shift, np.round(shift), atol=1e-12)


def test_distance_is_periodic(square):
    assert math.isclose(float(square.distance((0.05, 0.0), (0.95, 0.0))), 0.1, abs_tol=1e-15)
