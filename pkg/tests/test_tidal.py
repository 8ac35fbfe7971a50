import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from tidecap import kepler
from tidecap.orbit import OrbitState, integrate
from tidecap.params import DomainError, PhysicalParams, from_mu
from tidecap.sphere import SphereGrid, degrees, n_coeffs, wigner_l2
from tidecap.tidal import (
    adiabatic_start,
    amplitude_bound_report,
    derivative_expansion_check,
    dtf_norm_identity,
    duhamel_mode,
    duhamel_modes,
    duhamel_spectrum,
    forcing_derivatives,
    forcing_from_trajectory,
    integrate_forced,
    integrate_modes,
    mode_energy_balance,
    mode_frequency,
    source_coefficients,
    source_projection,
    taylor_jet,
)

A = 0.8  # a_2 at G = M = R = 1
W = math.sqrt(A)


@pytest.fixture(scope="module")
def small():
    q = from_mu(4.0, 30.0)
    return integrate(q)


def test_mode_frequency():
    assert mode_frequency(0) == 0.0
    assert mode_frequency(1) == 0.0
    assert mode_frequency(2) == pytest.approx(0.8)
    assert mode_frequency(3, GM=2.0, R=2.0) == pytest.approx(2.0 / 8.0 * 12.0 / 7.0)
    with pytest.raises(ValueError):
        mode_frequency(-1)


def test_source_matches_quadrature_projection():
    q = PhysicalParams(1, 1, 1, 10.0, 0.1)
    st = OrbitState(0.0, np.array([3.0, -4.0, 12.0]), np.zeros(3), 1.0)
    src = source_coefficients(st, q, L_max=4)
    proj = source_projection(st, q, SphereGrid.gauss(12), L_max=4)
    assert np.max(np.abs(proj - src.coeffs)) < 1e-14 * np.max(np.abs(src.coeffs)) + 1e-18
    assert np.all(src.coeffs[degrees(4) != 2] == 0)


def test_source_scales_as_eta_cubed():
    q = PhysicalParams(1, 1, 1, 10.0, 0.1)
    d = np.array([0.6, 0.0, 0.8])
    c1 = source_coefficients(OrbitState(0, 10 * d, np.zeros(3), 1), q).coeffs
    c2 = source_coefficients(OrbitState(0, 20 * d, np.zeros(3), 1), q).coeffs
    assert np.allclose(c2, c1 / 8.0, rtol=1e-14)
    with pytest.raises(ValueError):
        source_coefficients(OrbitState(0, d, np.zeros(3), 1), q, L_max=1)


# --- driven oscillator closed forms ------------------------------------------

def _const(F):
    return lambda s: np.full((1, np.size(s)), F)


def test_constant_forcing_closed_form():
    t = np.linspace(0.0, 40.0, 81)
    exact = (2.0 / A) * (1.0 - np.cos(W * t))
    h, hd = duhamel_mode(A, lambda s: 2.0 * np.ones_like(s), 0.0, t)
    assert np.max(np.abs(h - exact)) < 1e-10
    assert np.max(np.abs(hd - 2.0 / W * np.sin(W * t))) < 1e-10
    h2, hd2, _ = integrate_forced(lambda s: np.array([2.0]), [A], (0.0, 40.0), t, rtol=1e-12)
    assert np.max(np.abs(h2[:, 0] - exact)) < 1e-10


def test_zero_frequency_mode():
    t = np.linspace(0.0, 5.0, 11)
    h, hd = duhamel_modes([0.0], _const(3.0), 0.0, t)
    assert np.allclose(h[:, 0], 1.5 * t * t, rtol=0, atol=1e-12)
    assert np.allclose(hd[:, 0], 3.0 * t, rtol=0, atol=1e-12)


def test_off_resonance_sine():
    nu = 0.3
    t = np.linspace(0.0, 60.0, 121)
    exact = (np.sin(nu * t) - nu / W * np.sin(W * t)) / (A - nu * nu)
    h, hd = duhamel_mode(A, lambda s: np.sin(nu * s), 0.0, t)
    assert np.max(np.abs(h - exact)) < 1e-10
    assert np.max(np.abs(hd - nu * (np.cos(nu * t) - np.cos(W * t)) / (A - nu * nu))) < 1e-10


def test_resonance_grows_linearly():
    t = np.linspace(0.0, 80.0, 161)
    exact = (np.sin(W * t) - W * t * np.cos(W * t)) / (2 * A)
    h, _ = duhamel_mode(A, lambda s: np.sin(W * s), 0.0, t)
    assert np.max(np.abs(h - exact)) < 1e-10
    h2, _, _ = integrate_forced(lambda s: np.array([math.sin(W * s)]), [A], (0.0, 80.0), t, rtol=1e-12)
    assert np.max(np.abs(h2[:, 0] - exact)) < 1e-9


def test_free_oscillation_initial_data():
    t = np.linspace(0.0, 10.0, 21)
    h, hd = duhamel_modes([A, 0.0], lambda s: np.zeros((2, np.size(s))), 0.0, t, y0=([1.0, 2.0], [0.5, -1.0]))
    assert np.allclose(h[:, 0], np.cos(W * t) + 0.5 / W * np.sin(W * t), atol=1e-14)
    assert np.allclose(h[:, 1], 2.0 - t, atol=1e-14)
    assert np.allclose(hd[:, 0], -W * np.sin(W * t) + 0.5 * np.cos(W * t), atol=1e-14)


def test_slow_forcing_is_quasi_static():
    # f = exp(-(t/T)^2) with T >> 1/w: h ~ f/a - f''/a^2 after the start-up
    T = 60.0
    t = np.linspace(-300.0, 300.0, 301)

    def f(s):
        return np.exp(-((s / T) ** 2))

    def f2(s):
        return (4 * s * s / T**4 - 2 / T**2) * f(s)

    h, _ = duhamel_mode(A, f, -400.0, t)
    approx = f(t) / A - f2(t) / A**2
    assert np.max(np.abs(h - approx)) < 2e-5 * np.max(f(t)) / A


def test_negative_frequency_rejected():
    with pytest.raises(DomainError):
        duhamel_modes([-1.0], _const(1.0), 0.0, [1.0])


# --- along an orbit ------------------------------------------------------------

def test_only_degree_two_is_driven(mu20_modes):
    other = degrees(4) != 2
    assert np.all(mu20_modes.h[:, other] == 0)
    assert np.all(mu20_modes.hdot[:, other] == 0)
    sub_h, sub_hd = mu20_modes.subdominance()
    assert np.all(sub_h == 0) and np.all(sub_hd == 0)


def test_duhamel_matches_direct(mu20_modes, mu20_duhamel):
    for attr in ("h", "hdot"):
        a, b = getattr(mu20_modes, attr), getattr(mu20_duhamel, attr)
        assert np.linalg.norm(a - b) <= 1e-6 * np.linalg.norm(a)


def test_forcing_vector_and_scalar_paths_agree(small):
    from tidecap.tidal import _scalar_forcing

    vec = forcing_from_trajectory(small, 4)
    sca = _scalar_forcing(small, 4)
    for t in np.linspace(small.t_start, small.t_end, 9):
        assert np.allclose(vec(t)[:, 0], sca(t), rtol=1e-10, atol=0)


def test_taylor_jet_and_forcing_derivatives(small):
    t = np.array([0.5 * (small.t_start + small.closest.t0), small.closest.t0])
    jet = taylor_jet(small, t)
    h = 1e-3 * math.sqrt(small.closest.r0**3)
    acc_fd = (small.velocity(t + h) - small.velocity(t - h)) / (2 * h)
    assert np.allclose(2 * jet[2], acc_fd, rtol=1e-6, atol=0)
    d = forcing_derivatives(small, t, order=3)
    f = forcing_from_trajectory(small, 2)

    def f2(s):
        return f(s)[4:9]

    d1 = (f2(t + h) - f2(t - h)) / (2 * h)
    d2 = (f2(t + h) - 2 * f2(t) + f2(t - h)) / h**2
    d3 = (f2(t + 2 * h) - 2 * f2(t + h) + 2 * f2(t - h) - f2(t - 2 * h)) / (2 * h**3)
    scale = np.max(np.abs(d), axis=(1, 2))
    assert np.max(np.abs(d[0] - f2(t))) < 1e-12 * scale[0]
    assert np.max(np.abs(d[1] - d1)) < 1e-5 * scale[1]
    assert np.max(np.abs(d[2] - d2)) < 1e-5 * scale[2]
    assert np.max(np.abs(d[3] - d3)) < 1e-4 * scale[3]
    with pytest.raises(ValueError):
        forcing_derivatives(small, t, order=4)


def test_derivative_expansion(mu20_traj, mu20_modes):
    res = derivative_expansion_check(mu20_traj, modes=mu20_modes)
    assert res.relative < 1e-5


def test_energy_balance_of_modes(small):
    modes = integrate_modes(small, 2, dense=True)
    a = [mode_frequency(int(l)) for l in degrees(2)]
    assert mode_energy_balance(modes, forcing_from_trajectory(small, 2), a) < 1e-6
    with pytest.raises(ValueError):
        mode_energy_balance(duhamel_spectrum(small, 2), forcing_from_trajectory(small, 2), a)


def test_rotation_equivariance(small):
    """Rotating the whole encounter rotates h_2 by the degree-2 Wigner matrix."""
    q = small.params
    Q = Rotation.from_euler("xyz", [0.4, -1.0, 2.2]).as_matrix()
    x0, v0 = kepler.hyperbola_state(q.b, q.v0, q.GM, q.start_distance, "in")
    rot = integrate(q, initial=(Q @ x0, Q @ v0), rtol=1e-12)
    base = integrate(q, initial=(x0, v0), rtol=1e-12)
    t = np.linspace(base.t_start, min(base.t_end, rot.t_end), 200)
    m0 = duhamel_spectrum(base, 2, t)
    m1 = duhamel_spectrum(rot, 2, t)
    D = wigner_l2(Q)
    scale = np.max(np.abs(m0.h2))
    assert np.max(np.abs(m1.h2 - m0.h2 @ D.T)) < 1e-7 * scale
    assert np.allclose(m1.norm(2), m0.norm(2), rtol=1e-6, atol=1e-9 * scale)


def test_dtf_norm_identity(mu20_traj):
    st = mu20_traj.state(0.9 * mu20_traj.closest.t0)
    lhs, parts = dtf_norm_identity(st, mu20_traj.params)
    assert abs(parts["cross_term"]) <= 1e-12 * lhs
    assert parts["eta_term_quadrature"] == pytest.approx(parts["eta_term"], rel=1e-12)
    assert parts["xi_term_quadrature"] == pytest.approx(parts["xi_term"], rel=1e-12)
    assert lhs == pytest.approx(parts["eta_term"] + parts["xi_term"], rel=1e-12)


def test_amplitude_report_structure(mu20_modes, mu20_traj):
    rep = amplitude_bound_report(mu20_modes, mu20_traj)
    for name in ("r0_10r0_in", "r0_10r0_out", "r0_2r0_in", "r0_2r0_out"):
        w = rep.windows[name]
        assert w["n"] > 10
        assert w["h_ratio"][0] > 0 and w["hdot_ratio"][0] > 0
    # the height itself follows R^2 eta^3 closely; only hdot carries the start-up oscillation
    assert rep.windows["r0_10r0_in"]["h_band"] < 1.05


def test_adiabatic_start_removes_transient(mu20_traj, mu20_times):
    h0, hd0 = adiabatic_start(mu20_traj, 4)
    assert h0.shape == (n_coeffs(4),)
    assert np.all(h0[degrees(4) != 2] == 0)
    modes = duhamel_spectrum(mu20_traj, 4, mu20_times, start="adiabatic")
    w = amplitude_bound_report(modes, mu20_traj).windows["r0_10r0_in"]
    assert w["h_band"] < 1.01
    assert w["hdot_band"] < 2.0
    with pytest.raises(ValueError):
        integrate_modes(mu20_traj, 4, start="sideways")
