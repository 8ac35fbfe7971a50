import math

import numpy as np
import pytest

from tidecap.energy import (
    SURROGATE_KINETIC_RATIO,
    SURROGATE_POTENTIAL_RATIO,
    Fidelity,
    capture_ratio,
    decomposition_report,
    eta_scaling_fit,
    orbital_energy,
    tidal_energy,
)
from tidecap.orbit import OrbitState
from tidecap.params import DomainError, PhysicalParams
from tidecap.sphere import n_coeffs
from tidecap.tidal import ModeSpectrum

rng = np.random.default_rng(3)


def _spectrum(L, h, hd):
    t = np.arange(h.shape[0], dtype=float)
    return ModeSpectrum(L, t, h, hd, None)


def test_tidal_energy_closed_form():
    q = PhysicalParams(1, 1, 1, 10.0, 0.1)
    h = np.zeros((1, n_coeffs(2)))
    hd = np.zeros_like(h)
    h[0, 6] = 2.0
    hd[0, 4] = 3.0
    e = tidal_energy(_spectrum(2, h, hd), q)
    vol = 4 * math.pi / 3
    assert e.potential[0] == pytest.approx(4.0 / (5 * vol), rel=1e-15)
    assert e.kinetic[0] == pytest.approx(9.0 / (4 * vol), rel=1e-15)
    assert e.total[0] == pytest.approx(e.kinetic[0] + e.potential[0], rel=1e-15)


def test_surrogate_ratios_on_degree_two_data():
    q = PhysicalParams(1.3, 0.7, 1.9, 10.0, 0.1)
    h = np.zeros((6, n_coeffs(4)))
    hd = np.zeros_like(h)
    h[:, 4:9] = rng.standard_normal((6, 5))
    hd[:, 4:9] = rng.standard_normal((6, 5))
    e = tidal_energy(_spectrum(4, h, hd), q)
    assert np.allclose(e.surrogate_potential / e.potential, SURROGATE_POTENTIAL_RATIO, rtol=1e-13)
    assert np.allclose(e.surrogate_kinetic / e.kinetic, SURROGATE_KINETIC_RATIO, rtol=1e-13)


def test_higher_degrees_skip_the_ratio_check():
    q = PhysicalParams(1, 1, 1, 10.0, 0.1)
    h = rng.standard_normal((3, n_coeffs(3)))
    hd = rng.standard_normal((3, n_coeffs(3)))
    e = tidal_energy(_spectrum(3, h, hd), q)
    assert np.all(e.total > 0)


def test_orbital_energy_fidelities_agree():
    q = PhysicalParams(1, 1, 1, 10.0, 0.1)
    st = OrbitState(0.0, np.array([2.0, 1.0, -1.5]), np.array([0.1, 0.2, 0.0]), 1.0)
    point = orbital_energy(st, q)
    ball = orbital_energy(st, q, Fidelity.BALL)
    assert ball == pytest.approx(point, rel=1e-12)
    with pytest.raises(DomainError):
        orbital_energy(OrbitState(0.0, np.array([0.5, 0, 0]), np.zeros(3), 1.0), q, "ball")


@pytest.fixture(scope="module")
def report(mu20_traj, mu20_duhamel):
    return decomposition_report(mu20_traj, mu20_duhamel)


def test_decomposition_report(report, mu20_traj):
    assert report.e0 == pytest.approx(0.5 * mu20_traj.params.v0**2, rel=1e-6)
    assert report.t0 == mu20_traj.closest.t0
    # orbital energy is conserved to the integrator tolerance, so the drift of
    # the total is E_tidal plus an error set by GM/(4 r0), not by e0
    orbit_err = np.abs(report.total_drift - report.E_tidal)
    assert np.max(orbit_err) <= 1e-9 * report.GM / (4 * report.r0)
    assert np.allclose(report.E_orbital_implied + report.E_tidal, report.e0, rtol=1e-15)
    row = report.row(report.index_at(report.t0))
    assert row["m_ratio"] == pytest.approx(capture_ratio(report), rel=1e-15)


def test_capture_ratio_and_surrogate(report):
    m = capture_ratio(report)
    ms = capture_ratio(report, surrogate=True)
    assert 0 < m < 1
    # degree-2 only: surrogate/physical lies between the two fixed ratios
    assert SURROGATE_KINETIC_RATIO < ms / m < SURROGATE_POTENTIAL_RATIO


def test_capture_ratio_needs_positive_energy(report):
    from dataclasses import replace

    with pytest.raises(DomainError):
        capture_ratio(replace(report, e0=-1.0))


def test_scaling_fit(report):
    fit = eta_scaling_fit(report)
    assert 5.9 < fit.slope < 6.1
    assert fit.n >= 10
    assert 0 < fit.ratio_min <= fit.ratio_max
    with pytest.raises(ValueError, match="at least 10"):
        eta_scaling_fit(report, window=(report.r0, report.r0 * 1.0001))
