"""Acceptance criteria 1-12; each test records one summary line (see conftest).

Criteria that the decoupled model cannot meet as stated are strict xfails:
they are expected to fail, and an unexpected pass is reported as an error.
"""
import math
import time

import numpy as np
import pytest

from tidecap import kepler
from tidecap.cli import operator_failures, run_sweep
from tidecap.energy import capture_ratio, decomposition_report, eta_scaling_fit
from tidecap.orbit import (
    ClosureKind,
    ForceClosure,
    StopCondition,
    accel,
    integrate,
    pointwise_remainder_ratio,
    stage_bounds_report,
    stage_thresholds,
)
from tidecap.params import PhysicalParams, derive, from_mu
from tidecap.sphere import ball_self_potential, operator_report
from tidecap.tidal import amplitude_bound_report, duhamel_mode, duhamel_spectrum, integrate_forced

KAPPA20 = math.sqrt(10.0)  # mu = 20 at alpha_exp = 1
BETAS = (1e3, 1e4, 1e5)


def _band(lo_hi):
    lo, hi = lo_hi
    return hi / lo


def test_criterion_01_kepler_limits(record):
    t = time.perf_counter()
    lam6 = kepler.closest_approach(1e6)[0]
    a4 = kepler.scattering_angle(1e4)
    alphas = [kepler.scattering_angle(p) for p in (1.0, 10.0, 1e2, 1e3, 1e4)]
    lam_small = kepler.closest_approach(1e-3)[0]
    a_small = kepler.scattering_angle(1e-3)
    dt = time.perf_counter() - t
    ok = (abs(1e6 * lam6 - 2) <= 1e-2 and abs(a4 - math.pi) <= 1e-2 and all(np.diff(alphas) > 0)
          and abs(a_small) <= 1e-2 and abs(lam_small - 1) <= 1e-3 and dt < 1.0)
    record(1, ok, f"|p lam - 2| = {abs(1e6 * lam6 - 2):.1e}, |alpha(1e4) - pi| = {abs(a4 - math.pi):.1e}, "
                  f"alpha(1e-3) = {a_small:.1e}, {dt:.3f} s")
    assert ok


def _ode_deflection(p, b=1.0):
    R1 = 1e4 * b
    q = PhysicalParams(1.0, 1.0, 1.0, b, math.sqrt(1.0 / (b * p)), R1=R1)
    tr = integrate(q, stop=StopCondition("radius", R1, "out"), rtol=1e-12)
    v0, v1 = tr.velocity(tr.t_start), tr.velocity(tr.t_end)
    return math.atan2(np.cross(v0, v1)[2], v0 @ v1)


def test_criterion_02_scattering_cross_validation(record):
    t = time.perf_counter()
    errs = {p: abs(_ode_deflection(p) - kepler.scattering_angle(p)) for p in (0.5, 2.0, 4.0, 20.0)}
    dt = time.perf_counter() - t
    worst = max(errs.values())
    ok = worst <= 1e-6 and dt < 10.0
    record(2, ok, f"max |alpha_ode - alpha_quad| = {worst:.1e} at R1 = 1e4 b, {dt:.2f} s")
    assert ok


def test_criterion_03_point_mass_conservation(record):
    t = time.perf_counter()
    q = PhysicalParams(1.0, 1.0, 1.0, 1.0, 0.5)  # p = 4
    tr = integrate(q)
    ts = tr.sample_times()
    E = tr.energy(ts)
    J = np.linalg.norm(tr.angular_momentum(ts), axis=0)
    dE = np.max(np.abs(E - E[0])) / abs(E[0])
    dJ = np.max(np.abs(J - J[0])) / J[0]
    dr = abs(tr.closest.r0 - q.r_plus_exact) / q.r_plus_exact
    end_ok = tr.radius(tr.t_end) == pytest.approx(10 * tr.closest.r0, rel=1e-9)
    dt = time.perf_counter() - t
    ok = dE <= 1e-9 and dJ <= 1e-9 and dr <= 1e-8 and end_ok and dt < 5.0
    record(3, ok, f"p = 4: dE = {dE:.1e}, dJ = {dJ:.1e}, r0 vs b lam = {dr:.1e}, {dt:.2f} s")
    assert ok


def test_criterion_04_shell_theorem(record):
    q = PhysicalParams(1.0, 1.0, 1.0, 1e4, 1e-3)
    u = np.array([0.3, 0.4, math.sqrt(0.75)])
    errs = []
    for eta in (0.05, 0.1, 0.2):
        a0 = accel(u / eta, ForceClosure(), q)
        a1 = accel(u / eta, ForceClosure(ClosureKind.BALL, 8), q)
        errs.append(np.linalg.norm(a1 - a0) / np.linalg.norm(a0))
    ratios = [pointwise_remainder_ratio(e) for e in np.geomspace(0.02, 0.2, 8)]
    lo, hi = min(ratios), max(ratios)
    ok = max(errs) <= 1e-10 and 0.1 <= lo and hi <= 0.3
    record(4, ok, f"ball vs point {max(errs):.1e}; remainder band [{lo:.3f}, {hi:.3f}] within [0.1, 0.3]")
    assert ok


def test_criterion_05_operator_spectrum(record):
    t = time.perf_counter()
    rep = operator_report(8, 32)
    fails = operator_failures(rep)
    dt = time.perf_counter() - t
    ok = not fails and dt < 30.0
    record(5, ok, f"multipliers {max(rep['multipliers'].values()):.1e}, "
                  f"oracle r = 1.5R {max(rep['offsurface_oracle'].values()):.1e}, {dt:.2f} s"
                  + (f", failed: {fails}" if fails else ""))
    assert ok


def test_criterion_06_mode_cross_method(record, mu20_modes, mu20_duhamel):
    rel = max(np.linalg.norm(getattr(mu20_modes, k) - getattr(mu20_duhamel, k)) / np.linalg.norm(
        getattr(mu20_modes, k)) for k in ("h", "hdot"))
    a, w = 0.8, math.sqrt(0.8)
    t = np.linspace(0.0, 80.0, 161)
    closed = []
    h, _ = duhamel_mode(a, lambda s: 2.0 * np.ones_like(s), 0.0, t)
    closed.append(np.max(np.abs(h - 2.0 / a * (1 - np.cos(w * t)))))
    res = (np.sin(w * t) - w * t * np.cos(w * t)) / (2 * a)
    h, _ = duhamel_mode(a, lambda s: np.sin(w * s), 0.0, t)
    closed.append(np.max(np.abs(h - res)))
    h, _, _ = integrate_forced(lambda s: np.array([math.sin(0.3 * s)]), [a], (0.0, 80.0), t, rtol=1e-12)
    closed.append(np.max(np.abs(h[:, 0] - (np.sin(0.3 * t) - 0.3 / w * np.sin(w * t)) / (a - 0.09))))
    ok = rel <= 1e-6 and max(closed) <= 1e-10
    record(6, ok, f"Duhamel vs direct L2 {rel:.1e}; closed forms {max(closed):.1e}")
    assert ok


def _bands(modes, traj):
    w = amplitude_bound_report(modes, traj).windows["r0_10r0_in"]
    return w


@pytest.mark.xfail(strict=True, reason="start-up oscillation from the rest start at R1 = 50 r+ puts the "
                                       "dh/dt band above 10; see the ledger")
def test_criterion_07_amplitude_scalings(record, mu20_traj, mu20_modes, mu20_duhamel):
    t = time.perf_counter()
    w = _bands(mu20_modes, mu20_traj)
    dt = time.perf_counter() - t
    adiabatic = _bands(duhamel_spectrum(mu20_traj, 4, mu20_modes.t, start="adiabatic"), mu20_traj)
    ok = (w["h_band"] <= 10 and w["hdot_band"] <= 10 and w["h_ratio"][0] > 0 and w["hdot_ratio"][0] > 0
          and dt < 60.0)
    record(7, ok, f"rest start: h band {w['h_band']:.2f}, dh/dt band {w['hdot_band']:.1f} "
                  f"(adiabatic start: {adiabatic['h_band']:.3f}, {adiabatic['hdot_band']:.2f})")
    assert ok


def test_criterion_07_height_band_holds(mu20_traj, mu20_modes):
    # the height part of criterion 7 holds with the default start
    w = _bands(mu20_modes, mu20_traj)
    assert w["h_band"] <= 10 and w["h_ratio"][0] > 0 and w["hdot_ratio"][0] > 0


def test_criterion_08_eta6_law(record, mu20_traj, mu20_modes):
    fit = eta_scaling_fit(decomposition_report(mu20_traj, mu20_modes))
    ok = 5.5 <= fit.slope <= 6.5
    record(8, ok, f"slope {fit.slope:.4f} over (r0, 2 r0], n = {fit.n}")
    assert ok


@pytest.fixture(scope="module")
def sweep_mu20():
    t = time.perf_counter()
    settings = {"rtol": 1e-10, "L_max": 4, "modes": "direct", "mode_start": "rest", "R1": None}
    rows = run_sweep([(b, KAPPA20, 1.0) for b in BETAS], settings)
    return rows, time.perf_counter() - t


@pytest.mark.xfail(strict=True, reason="decoupled model stays below m = 2 at capture index 31; see the ledger")
def test_criterion_09_capture_criterion(record, sweep_mu20):
    rows, dt = sweep_mu20
    m = [r["m_ratio"] for r in rows]
    ci = [r["capture_index"] for r in rows]
    increasing = all(b > a for a, b in zip(m, m[1:]))
    big = all(mi > 2 for mi, c in zip(m, ci) if c >= 1)
    ok = increasing and big and dt < 300.0
    record(9, ok, "m = " + ", ".join(f"{x:.3g}" for x in m) + " at capture index "
           + ", ".join(f"{c:.3g}" for c in ci) + f"; increasing {increasing}, m > 2 where index >= 1 {big}, "
           f"{dt:.0f} s")
    assert ok


def test_criterion_09_monotone_part(sweep_mu20):
    rows, dt = sweep_mu20
    m = [r["m_ratio"] for r in rows]
    assert all(b > a for a, b in zip(m, m[1:]))
    assert dt < 300.0


@pytest.fixture(scope="module")
def stage_reports():
    reps = {}
    for beta in BETAS:
        q = from_mu(20.0, beta)
        g = derive(q)
        q = q.with_R1(3.0 * stage_thresholds(g)["far_min"])  # start inside the far stage
        reps[beta] = stage_bounds_report(integrate(q), g)
    return reps


@pytest.mark.xfail(strict=True, reason="near-stage r1' vs sqrt(r1 - r0) fit has R^2 about 0.84; see the ledger")
def test_criterion_10_stage_bounds(record, stage_reports):
    lo = min(min(r.stages[s]["rdot_ratio"][0] for s in ("far", "mid", "near")) for r in stage_reports.values())
    hi = max(max(r.stages[s]["rdot_ratio"][1] for s in ("far", "mid", "near")) for r in stage_reports.values())
    r2 = min(r.near_fit_r2 for r in stage_reports.values())
    r2s = min(r.near_fit_r2_scaled for r in stage_reports.values())
    ok = 1 / 20 <= lo and hi <= 20 and r2 >= 0.999
    record(10, ok, f"ratios in [{lo:.3f}, {hi:.3f}]; near R^2 {r2:.3f} (r1 r1' form {r2s:.9f})")
    assert ok


def test_criterion_10_ratio_part(stage_reports):
    for rep in stage_reports.values():
        for s in ("far", "mid", "near"):
            lo, hi = rep.stages[s]["rdot_ratio"]
            assert 1 / 20 <= lo <= hi <= 20
        assert rep.near_fit_r2_scaled >= 0.999


def test_criterion_11_self_potential(record):
    closed, quad = ball_self_potential(1.0, 3.0 / (4.0 * math.pi), 1.0)
    err = abs(quad - (-4 * math.pi / 5)) / (4 * math.pi / 5)
    ok = err <= 1e-10 and closed == pytest.approx(-4 * math.pi / 5, rel=1e-15)
    record(11, ok, f"quadrature vs -4 pi/5: {err:.1e}")
    assert ok


@pytest.mark.xfail(strict=True, reason="rest-start transient depends on R1, so the criterion 7 bands move by "
                                       "more than 2%; see the ledger")
def test_criterion_12_r1_sensitivity(record, mu20):
    vals = {}
    for factor in (25, 50, 100):
        q = mu20.with_R1(factor * mu20.r_plus_exact)
        tr = integrate(q)
        modes = duhamel_spectrum(tr, 4, tr.sample_times())
        rep = decomposition_report(tr, modes)
        w = _bands(modes, tr)
        vals[factor] = {
            "m_ratio": capture_ratio(rep),
            "slope": eta_scaling_fit(rep).slope,
            "h_min": w["h_ratio"][0],
            "h_max": w["h_ratio"][1],
            "hdot_min": w["hdot_ratio"][0],
            "hdot_max": w["hdot_ratio"][1],
        }
    spread = {k: max(v[k] for v in vals.values()) / min(v[k] for v in vals.values()) - 1 for k in vals[50]}
    worst = max(spread, key=spread.get)
    ok = all(s < 0.02 for s in spread.values())
    record(12, ok, f"m {spread['m_ratio']:.1e}, slope {spread['slope']:.1e}, h min {spread['h_min']:.1%}, "
                   f"worst {worst} {spread[worst]:.0%}")
    assert ok


def test_criterion_12_energy_part_is_stable(mu20):
    # m and the eta^6 slope are insensitive to R1; only the transient-carrying bands move
    ms, slopes = [], []
    for factor in (25, 100):
        tr = integrate(mu20.with_R1(factor * mu20.r_plus_exact))
        rep = decomposition_report(tr, duhamel_spectrum(tr, 4, tr.sample_times()))
        ms.append(capture_ratio(rep))
        slopes.append(eta_scaling_fit(rep).slope)
    assert ms[1] == pytest.approx(ms[0], rel=0.02)
    assert slopes[1] == pytest.approx(slopes[0], rel=0.02)
