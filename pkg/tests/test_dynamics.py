from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hodgevortex.dynamics import (
    ClosedCurve,
    VortexState,
    circulation,
    conserved_report,
    hamiltonian,
    initial_state,
    integrate,
    rhs_complete,
    rhs_incomplete,
)
from hodgevortex.errors import CollisionError, CurveTooCloseToVortex
from hodgevortex.greens import FlatGreen, RobinField, green_conformal, robin
from hodgevortex.surface import ConformalFactor, make_lattice

EQUILIBRIA = [(0.0, 0.25), (0.0, 0.75), (0.5, 0.25), (0.5, 0.75)]


def rate_norm(rate):
    return float(np.sqrt(np.sum(rate.velocities**2) + np.sum(rate.eta_dot**2)))


# VortexState


def test_state_rejects_mismatched_lengths():
    with pytest.raises(ValueError):
        VortexState(np.zeros((2, 2)), [1.0], (0.0, 0.0))


def test_state_pack_round_trip():
    s = initial_state([[0.1, 0.2], [0.3, 0.4]], [1.0, -2.0], (0.5, 0.25))
    back = VortexState.unpack(s.pack(), s.strengths)
    assert np.array_equal(back.positions, s.positions) and np.array_equal(back.eta, s.eta)


def test_wrapped_positions_in_cell(square):
    s = initial_state([[1.3, -0.2]], [1.0])
    w = s.wrapped(square)
    assert np.allclose(w, [[0.3, 0.8]])
    assert np.allclose(s.positions - w, np.round(s.positions - w))


# hamiltonian


def test_flat_single_vortex_energy(square, flat):
    h, h_vort, h_harm = hamiltonian(initial_state([[0.3, 0.4]], [1.0], (0.5, 0.0)), flat, square)
    assert h_harm == 0.125
    assert abs(h_vort) < 1e-15  # Robin constant convention is zero
    assert h == h_vort + h_harm


def test_single_vortex_energy_is_half_robin(square, metric):
    _, h_vort, _ = hamiltonian(initial_state([[0.0, 0.25]], [1.0]), metric, square)
    r, _ = robin(RobinField(metric, square), 0.0, 0.25)
    assert abs(h_vort - r / 2) < 1e-15
    assert abs(h_vort - 0.00347) < 1e-5


def test_pair_energy_uses_conformal_green(square, metric):
    pos = np.array([[0.1, 0.2], [0.6, 0.45]])
    gam = np.array([1.3, -0.4])
    _, h_vort, _ = hamiltonian(initial_state(pos, gam), metric, square)
    rf = RobinField(metric, square)
    r, _ = robin(rf, pos[:, 0], pos[:, 1])
    expected = 0.5 * float(np.sum(gam**2 * r)) + gam[0] * gam[1] * green_conformal(metric, square, pos[0], pos[1]).value
    assert abs(h_vort - expected) < 1e-14


def test_dipole_energy_log_slope(square, flat):
    # H_vort = -G(d) ~ (1/2pi) log d: slope against log d approaches 1/2pi
    def h(d):
        return hamiltonian(initial_state([[0.5, 0.5], [0.5 + d, 0.5]], [1.0, -1.0]), flat, square)[1]

    slope = (h(1e-2) - h(1e-3)) / (math.log(1e-2) - math.log(1e-3))
    assert abs(slope * 2 * math.pi - 1.0) < 0.05


def test_collision_below_threshold(square, metric):
    with pytest.raises(CollisionError):
        hamiltonian(initial_state([[0.2, 0.2], [0.2 + 1e-8, 0.2]], [1.0, 1.0]), metric, square)


# rhs


def test_flat_eta_rate_vanishes(square, flat, rng):
    # the pair terms cancel analytically; numerically only to round-off
    for n in (1, 2, 4):
        s = initial_state(rng.random((n, 2)), rng.normal(size=n), rng.normal(size=2))
        rate = rhs_complete(s, flat, square)
        assert np.max(np.abs(rate.eta_dot)) <= 1e-14 * max(1.0, float(np.max(np.abs(rate.velocities))))


def test_flat_eta_rate_vanishes_on_sheared_lattice(sheared, flat, rng):
    s = initial_state(rng.random((3, 2)), [1.0, 2.0, -0.5], (0.3, -0.1))
    assert np.max(np.abs(rhs_complete(s, flat, sheared).eta_dot)) < 1e-12


def test_flat_single_vortex_winds(square, flat):
    rate = rhs_complete(initial_state([[0.3, 0.7]], [1.0], (0.5, 0.25)), flat, square)
    assert np.allclose(rate.velocities, [[0.5, 0.25]], atol=1e-15)
    assert np.all(rate.eta_dot == 0.0)


@pytest.mark.parametrize("point", EQUILIBRIA)
def test_equilibria_of_both_systems(square, metric, point):
    s = initial_state([point], [1.0])
    full = rate_norm(rhs_complete(s, metric, square))
    frozen = rate_norm(rhs_incomplete(s, metric, square))
    assert full < 1e-14 and frozen < 1e-14


def test_incomplete_matches_complete_on_flat_torus(square, flat, rng):
    s = initial_state(rng.random((3, 2)), [1.0, -0.5, 2.0], (0.2, 0.1))
    a, b = rhs_complete(s, flat, square), rhs_incomplete(s, flat, square)
    assert np.array_equal(a.velocities, b.velocities) and np.array_equal(a.eta_dot, b.eta_dot)


def test_incomplete_freezes_eta_only(square, metric):
    s = initial_state([[0.2, 0.1]], [1.0], (0.5, 0.0))
    a, b = rhs_complete(s, metric, square), rhs_incomplete(s, metric, square)
    assert np.array_equal(a.velocities, b.velocities)
    assert np.all(b.eta_dot == 0.0) and np.any(a.eta_dot != 0.0)


def test_velocity_formula_single_vortex(square, metric):
    # rho x' = R_y / 2 + eta_x, rho y' = -R_x / 2 + eta_y
    p = np.array([0.2, 0.1])
    eta = np.array([0.5, -0.3])
    rate = rhs_complete(initial_state([p], [1.0], eta), metric, square)
    _, g = robin(RobinField(metric, square), p[0], p[1])
    rho = float(metric.field(square).value(p))
    expected = np.array([0.5 * g[1] + eta[0], -0.5 * g[0] + eta[1]]) / rho
    assert np.allclose(rate.velocities[0], expected, atol=1e-14)
    v = rate.velocities[0]
    assert np.allclose(rate.eta_dot, [v[1] - eta[1], -v[0] + eta[0]], atol=1e-14)


def test_pair_velocity_uses_green_gradient(square, flat):
    # flat torus: x_1' = G_2 dG/dy_1 + eta_x
    pos = np.array([[0.1, 0.2], [0.45, 0.7]])
    gam = np.array([1.0, 0.7])
    rate = rhs_complete(initial_state(pos, gam), flat, square)
    _, g = FlatGreen(square).value_grad(pos[0] - pos[1])
    assert np.allclose(rate.velocities[0], gam[1] * np.array([g[1], -g[0]]), atol=1e-14)


def test_permutation_equivariance(square, metric, rng):
    pos = rng.random((3, 2))
    gam = np.array([1.0, 1.0, -0.6])
    eta = np.array([0.1, 0.2])
    a = rhs_complete(initial_state(pos, gam, eta), metric, square)
    perm = [1, 0, 2]
    b = rhs_complete(initial_state(pos[perm], gam[perm], eta), metric, square)
    assert np.allclose(a.velocities[perm], b.velocities, atol=1e-14)
    assert np.allclose(a.eta_dot, b.eta_dot, atol=1e-14)


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(-1, 1), st.floats(-1, 1))
def test_flat_eta_constant_property(x, y, ex, ey):
    lat = make_lattice((1.0, 0.0), (0.0, 1.0))
    if math.hypot(x - 0.5, y - 0.5) < 0.01:
        return
    s = initial_state([[x, y], [0.5, 0.5]], [1.0, -0.5], (ex, ey))
    assert np.max(np.abs(rhs_complete(s, ConformalFactor.flat(), lat).eta_dot)) < 1e-13


# integrate


def test_flat_winding_run(square, flat):
    rec = integrate(initial_state([[0.1, 0.2]], [1.0], (1.0, 0.0)), flat, square, t_end=2.0)
    assert abs(rec.positions[-1, 0, 0] - 2.1) < 1e-9
    assert abs(rec.positions[-1, 0, 1] - 0.2) < 1e-12
    assert rec.halt_reason is None


def test_equilibrium_run_stays_put(square, metric):
    rec = integrate(initial_state([[0.0, 0.25]], [1.0]), metric, square, t_end=10.0)
    assert np.max(np.abs(rec.positions[:, 0] - [0.0, 0.25])) < 1e-9
    assert np.max(np.abs(rec.eta)) < 1e-9


def test_record_ledgers_have_sample_length(square, metric):
    rec = integrate(initial_state([[0.2, 0.1]], [1.0], (0.3, 0.0)), metric, square, t_end=1.0, sample_dt=0.1)
    assert len(rec) == 11
    for arr in (rec.H, rec.H_vort, rec.H_harm, rec.momenta, rec.eta):
        assert len(arr) == len(rec)
    assert np.all(np.diff(rec.times) > 0)


def test_energy_conserved_short_run(square, metric):
    rec = integrate(initial_state([[0.2, 0.1]], [1.0], (0.3, 0.1)), metric, square, t_end=10.0)
    assert np.max(np.abs(rec.H - rec.H[0])) < 1e-9


def test_energy_rate_bounded_by_tolerance(square, metric):
    # finite-difference dH/dt along the run stays within 100 x tolerance
    rec = integrate(initial_state([[0.2, 0.1], [0.7, 0.6]], [1.0, 0.5], (0.3, 0.1)), metric, square, t_end=5.0)
    rate = np.diff(rec.H) / np.diff(rec.times)
    assert np.max(np.abs(rate)) < 1e-10 * 1e2


def test_integration_is_deterministic(square, metric):
    s = initial_state([[0.2, 0.1], [0.7, 0.6]], [1.0, -1.0], (0.3, 0.1))
    a = integrate(s, metric, square, t_end=3.0)
    b = integrate(s, metric, square, t_end=3.0)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.eta, b.eta)


def test_flat_time_reversal(square, flat):
    s = initial_state([[0.2, 0.1], [0.7, 0.6], [0.3, 0.8]], [1.0, 0.5, -0.8], (0.3, 0.1))
    fwd = integrate(s, flat, square, t_end=3.0, sample_dt=None).final
    # negating strengths and eta reverses every velocity
    back = integrate(initial_state(fwd.positions, -s.strengths, -fwd.eta), flat, square, t_end=3.0, sample_dt=None)
    assert np.max(np.abs(back.final.positions - s.positions)) < 1e-8
    assert np.max(np.abs(back.final.eta + s.eta)) < 1e-12


def test_collision_at_start_raises(square, flat):
    s = initial_state([[0.5, 0.5], [0.52, 0.5]], [1.0, 1.0])
    with pytest.raises(CollisionError):
        integrate(s, flat, square, t_end=1.0, collision_threshold=0.05)


def test_collision_during_run_returns_partial_record(square, flat):
    # strengths (2, 2, -1) in this triangle collapse self-similarly
    tri = 0.5 + 0.05 * np.array([[-1.0, 0.0], [1.0, 0.0], [1.0, math.sqrt(2.0)]])
    s = initial_state(tri, [2.0, 2.0, -1.0])
    rec = integrate(s, flat, square, t_end=0.5, sample_dt=0.001, collision_threshold=0.02)
    assert rec.halt_reason is not None and "closer than" in rec.halt_reason
    assert 0.0 < rec.times[-1] < 0.05
    ok = integrate(s, flat, square, t_end=0.5, sample_dt=0.001, collision_threshold=1e-3)
    assert ok.halt_reason is None


def test_rejects_bad_tolerance(square, flat):
    with pytest.raises(ValueError):
        integrate(initial_state([[0.1, 0.1]], [1.0]), flat, square, t_end=1.0, rel_tol=1e-16)


# conservation ledger


def test_flat_dipole_momenta(square, flat):
    s = initial_state([[0.3, 0.5], [0.3, 0.55]], [1.0, -1.0], (0.1, 0.2))
    rec = integrate(s, flat, square, t_end=50.0, sample_dt=0.5)
    rep = conserved_report(rec, flat, square)
    assert rep.momentum_drift is not None and max(rep.momentum_drift) < 1e-8


def test_nonzero_total_strength_has_no_momenta(square, metric):
    rec = integrate(initial_state([[0.2, 0.1]], [1.0]), metric, square, t_end=1.0)
    assert conserved_report(rec, metric, square).momentum_drift is None


def test_report_needs_two_samples(square, metric):
    rec = integrate(initial_state([[0.2, 0.1]], [1.0]), metric, square, t_end=1.0, sample_dt=None)
    short = type(rec)(
        rec.times[:1], rec.positions[:1], rec.eta[:1], rec.strengths, rec.H[:1], rec.H_vort[:1], rec.H_harm[:1],
        rec.momenta[:1], rec.stats, rec.rhs,
    )
    with pytest.raises(ValueError):
        conserved_report(short, metric, square)


def test_harmonic_field_circulation_on_b_cycle(square, flat):
    # eta = dx: the b-cycle circulation is constant while its star circulation is 1
    curve = ClosedCurve(np.array([[0.5, 0.0]]), closing=(0, 1))
    s = initial_state([[0.1, 0.2], [0.1, 0.3]], [1.0, -1.0], (1.0, 0.0))
    circ, star = circulation(initial_state(np.zeros((0, 2)), [], (1.0, 0.0)), flat, square, curve)
    assert abs(circ) < 1e-15 and abs(star - 1.0) < 1e-14
    rec = integrate(s, flat, square, t_end=0.2, sample_dt=0.02)
    rep = conserved_report(rec, flat, square, curve=curve)
    assert rep.circulation_residual < 1e-8
    assert np.all(np.abs(rep.star_circulation) > 0.5)


def test_circulation_rate_identity_single_vortex(square, metric):
    # d/dt of the b-cycle circulation equals G times the star circulation
    curve = ClosedCurve(np.array([[0.5, 0.0]]), closing=(0, 1))
    s = initial_state([[0.15, 0.1]], [1.0], (0.2, 0.3))
    rec = integrate(s, metric, square, t_end=0.5, sample_dt=0.01)
    rep = conserved_report(rec, metric, square, curve=curve)
    assert rep.circulation_samples > 10
    assert rep.circulation_residual < 1e-6


def test_circulation_counts_enclosed_vorticity(square, flat):
    # a small square around a single vortex: circulation = Gamma minus enclosed area
    h = 0.1
    box = ClosedCurve(np.array([[0.3 - h, 0.4 - h], [0.3 + h, 0.4 - h], [0.3 + h, 0.4 + h], [0.3 - h, 0.4 + h]]))
    circ, _ = circulation(initial_state([[0.3, 0.4]], [2.0]), flat, square, box)
    assert abs(circ - 2.0 * (1.0 - (2 * h) ** 2)) < 1e-12


def test_curve_too_close(square, flat):
    curve = ClosedCurve(np.array([[0.5, 0.0]]), closing=(0, 1))
    s = initial_state([[0.5, 0.3], [0.6, 0.3]], [1.0, -1.0])
    rec = integrate(s, flat, square, t_end=0.1, sample_dt=0.01)
    with pytest.raises(CurveTooCloseToVortex):
        conserved_report(rec, flat, square, curve=curve)
