"""Linearised height-function modes driven by the tidal field of the partner.

Each real S_R harmonic coefficient of the height function obeys

    h'' + a_l h = f_l,      a_l = (GM/R^3) 2 l (l - 1) / (2 l + 1),

from rest at the start time.  The source is the degree-2 field

    f(t, w) = -(g eta^3 / 8) (1 - 3 (xi1 . w)^2) = (g eta^3 / 4) P_2(xi1 . w),

whose S_R coefficients are ``f_2m = (pi g R eta^3 / 5) Y_2m(xi1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .kepler import NumericalError
from .orbit import NotReached, OrbitState, Trajectory
from .params import DomainError, PhysicalParams
from .sphere import (SphereGrid, degrees, lm_index, n_coeffs, quadrupole_tensors,
                     real_sph_harm, sh_analyze)

__all__ = [
    "mode_frequency",
    "SourceTerm",
    "ModeSpectrum",
    "BoundReport",
    "source_coefficients",
    "source_projection",
    "forcing_from_trajectory",
    "integrate_forced",
    "integrate_modes",
    "adiabatic_start",
    "duhamel_mode",
    "duhamel_modes",
    "duhamel_spectrum",
    "taylor_jet",
    "forcing_derivatives",
    "derivative_expansion",
    "derivative_expansion_check",
    "amplitude_bound_report",
    "dtf_norm_identity",
    "mode_energy_balance",
]

_T2 = quadrupole_tensors()


def mode_frequency(l: int, GM: float = 1.0, R: float = 1.0) -> float:
    """Squared frequency ``a_l`` of the degree-``l`` surface mode."""
    if l < 0:
        raise ValueError("l must be non-negative")
    return GM / R**3 * 2.0 * l * (l - 1) / (2.0 * l + 1.0)


def _frequencies(L_max: int, params: PhysicalParams) -> np.ndarray:
    return np.array([mode_frequency(int(l), params.GM, params.R) for l in degrees(L_max)])


@dataclass(frozen=True)
class SourceTerm:
    g: float
    R: float
    eta: float
    xi: np.ndarray
    coeffs: np.ndarray  # S_R coefficients up to L_max

    def field(self, directions) -> np.ndarray:
        """Closed-form ``-(g eta^3/8)(1 - 3 (xi . w)^2)`` at unit directions."""
        c = np.asarray(directions, dtype=float) @ self.xi
        return -(self.g * self.eta**3 / 8.0) * (1.0 - 3.0 * c * c)


def _f2_prefactor(params: PhysicalParams) -> float:
    return math.pi * params.g * params.R**4 / 5.0


def source_coefficients(state: OrbitState, params: PhysicalParams, L_max: int = 2) -> SourceTerm:
    """Degree-2 projection by the addition theorem, zero-padded to ``L_max``."""
    if L_max < 2:
        raise ValueError("L_max must be at least 2 to hold the source")
    r = state.r1
    if r <= 0:
        raise DomainError("r1 must be positive")
    coeffs = np.zeros(n_coeffs(L_max))
    x = np.asarray(state.x1, dtype=float)
    coeffs[4:9] = _f2_prefactor(params) * np.einsum("i,mij,j->m", x, _T2, x) / r**5
    return SourceTerm(g=params.g, R=params.R, eta=params.R / r, xi=x / r, coeffs=coeffs)


def source_projection(state: OrbitState, params: PhysicalParams, grid: SphereGrid, L_max: int = 4) -> np.ndarray:
    """Quadrature projection of the closed-form source field; the oracle for :func:`source_coefficients`."""
    if abs(grid.R - params.R) > 1e-12 * params.R:
        raise ValueError("grid radius must equal R")
    src = source_coefficients(state, params)
    return sh_analyze(src.field(grid.nodes), grid, L_max)


def forcing_from_trajectory(traj: Trajectory, L_max: int = 4):
    """Vectorised ``t -> f(t)`` of shape ``(n_coeffs, len(t))`` sampled from the dense orbit."""
    n = n_coeffs(L_max)
    k = _f2_prefactor(traj.params)

    def forcing(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = traj(t)[:3]
        r2 = np.einsum("ij,ij->j", x, x)
        out = np.zeros((n, len(t)))
        out[4:9] = k * np.einsum("in,mij,jn->mn", x, _T2, x) / r2**2.5
        return out

    return forcing


def _scalar_forcing(traj: Trajectory, L_max: int):
    """Fast scalar ``t -> f(t)`` for the right-hand side of the mode integrator."""
    n = n_coeffs(L_max)
    k = _f2_prefactor(traj.params)
    pos = traj.position_evaluator()
    c2 = 0.5 * math.sqrt(15.0 / (4.0 * math.pi))
    c0 = math.sqrt(5.0 / (16.0 * math.pi))

    def forcing(t):
        x, yy, z = pos(t)
        r2 = x * x + yy * yy + z * z
        s = k / (r2 * r2 * math.sqrt(r2))
        out = np.zeros(n)
        out[4] = s * 2.0 * c2 * x * yy
        out[5] = s * 2.0 * c2 * yy * z
        out[6] = s * c0 * (2.0 * z * z - x * x - yy * yy)
        out[7] = s * 2.0 * c2 * x * z
        out[8] = s * c2 * (x * x - yy * yy)
        return out

    return forcing


@dataclass
class ModeSpectrum:
    """Time series of the height-mode coefficients in the S_R basis."""

    L_max: int
    t: np.ndarray
    h: np.ndarray  # (n_t, n_coeffs)
    hdot: np.ndarray
    sol: object = field(default=None, repr=False)

    def block(self, l: int, which: str = "h") -> np.ndarray:
        arr = self.h if which == "h" else self.hdot
        return arr[:, l * l:(l + 1) * (l + 1)]

    @property
    def h2(self) -> np.ndarray:
        return self.block(2)

    @property
    def h2dot(self) -> np.ndarray:
        return self.block(2, "hdot")

    def norm(self, l: int | None = None, which: str = "h") -> np.ndarray:
        """``||h_l||_{L2(S_R)}`` (all degrees when ``l`` is None), by Parseval."""
        arr = (self.h if which == "h" else self.hdot) if l is None else self.block(l, which)
        return np.linalg.norm(arr, axis=1)

    def subdominance(self) -> tuple[np.ndarray, np.ndarray]:
        """``||h - h_2|| / ||h_2||`` and the same for ``dh/dt``."""
        mask = degrees(self.L_max) != 2
        with np.errstate(invalid="ignore", divide="ignore"):
            a = np.linalg.norm(self.h[:, mask], axis=1) / self.norm(2)
            b = np.linalg.norm(self.hdot[:, mask], axis=1) / self.norm(2, "hdot")
        return np.nan_to_num(a), np.nan_to_num(b)


def integrate_forced(forcing, a, t_span, times, rtol: float = 1e-10, atol=None, scale: float | None = None,
                     dense: bool = False, y0=None):
    """Solve ``h'' + a h = f(t)`` with DOP853, from rest unless ``y0 = (h0, hdot0)``.

    ``forcing`` maps a scalar time to the coefficient vector; ``a`` holds one
    frequency per coefficient.  Returns ``(h, hdot, sol)`` sampled at ``times``;
    ``sol`` is the dense output when ``dense`` is set and None otherwise.
    """
    a = np.asarray(a, dtype=float)
    n = len(a)
    init = np.zeros(2 * n) if y0 is None else np.concatenate([np.asarray(y0[0], float), np.asarray(y0[1], float)])
    if atol is None:
        if scale is None:
            scale = 1.0
        atol = rtol * 1e-3 * scale

    def rhs(t, y):
        return np.concatenate([y[n:], forcing(t) - a * y[:n]])

    times = np.asarray(times, dtype=float)
    res = solve_ivp(rhs, t_span, init, method="DOP853", rtol=rtol, atol=atol,
                    dense_output=dense, t_eval=None if dense else times)
    if res.status != 0:
        raise NumericalError(f"mode integrator failed: {res.message}")
    y = res.sol(times) if dense else res.y
    return y[:n].T, y[n:].T, res.sol


def _h_scale(traj: Trajectory) -> float:
    p = traj.params
    r_min = traj.closest.r0 if traj.closest is not None else float(np.min(np.linalg.norm(traj.y_nodes[:, :3], axis=1)))
    return _f2_prefactor(p) / r_min**3 / mode_frequency(2, p.GM, p.R)


def adiabatic_start(traj: Trajectory, L_max: int = 4):
    """Mode data at the start that carries no free oscillation.

    Uses the quasi-static series ``h = f/a - f''/a^2``, ``hdot = f'/a - f'''/a^2``
    of the degree-2 modes.  This is the state a run started infinitely far
    away would have at ``R1``; ``start="rest"`` instead leaves a free
    oscillation of amplitude about ``f(T0)/a``.
    """
    a = mode_frequency(2, traj.params.GM, traj.params.R)
    d = forcing_derivatives(traj, np.array([traj.t_start]), order=3)[:, :, 0]
    h0 = np.zeros(n_coeffs(L_max))
    hd0 = np.zeros(n_coeffs(L_max))
    h0[4:9] = d[0] / a - d[2] / a**2
    hd0[4:9] = d[1] / a - d[3] / a**2
    return h0, hd0


def _initial(traj: Trajectory, L_max: int, start: str):
    if start == "rest":
        return None
    if start == "adiabatic":
        return adiabatic_start(traj, L_max)
    raise ValueError(f"start must be 'rest' or 'adiabatic', got {start!r}")


def integrate_modes(traj: Trajectory, L_max: int = 4, times=None, rtol: float = 1e-10, atol=None,
                    dense: bool = False, start: str = "rest") -> ModeSpectrum:
    """Direct integration of every mode up to ``L_max`` along ``traj``.

    The forcing is read from the trajectory's dense output.  Modes start from
    rest by default; see :func:`adiabatic_start` for the alternative.
    """
    if L_max < 2:
        raise ValueError("L_max must be at least 2")
    if times is None:
        times = traj.sample_times()
    times = np.asarray(times, dtype=float)
    a = _frequencies(L_max, traj.params)
    h, hd, sol = integrate_forced(_scalar_forcing(traj, L_max), a, (traj.t_start, traj.t_end), times,
                                  rtol=rtol, atol=atol, scale=_h_scale(traj), dense=dense,
                                  y0=_initial(traj, L_max, start))
    return ModeSpectrum(L_max, times, h, hd, sol)


def _panel_edges(t0: float, times, omega: float, extra=None, per_radian: float = 1.0) -> np.ndarray:
    t_end = float(np.max(times))
    width = per_radian / omega if omega > 0 else (t_end - t0) / 64.0
    n = max(1, int(math.ceil((t_end - t0) / width)))
    parts = [np.linspace(t0, t_end, n + 1), np.asarray(times, dtype=float)]
    if extra is not None:
        e = np.asarray(extra, dtype=float)
        parts.append(e[(e > t0) & (e < t_end)])
    edges = np.unique(np.concatenate(parts))
    return edges[edges >= t0]


def duhamel_modes(a, forcing, t0: float, times, order: int = 16, extra_edges=None, y0=None):
    """Duhamel solution for several modes sharing one forcing callable.

    ``forcing(t_array)`` returns shape ``(n_modes, len(t))``.  For ``a > 0``

        h  = (1/w) [sin(w tau) C - cos(w tau) S],   hdot = cos(w tau) C + sin(w tau) S,

    with ``tau = t - t0``, ``C = int cos(w (s - t0)) f``, ``S = int sin(w (s - t0)) f``.
    ``a = 0`` modes use the kernel ``t - s``.  Cumulative integrals use
    Gauss-Legendre panels no wider than one radian of the fastest mode.
    Initial data ``y0 = (h0, hdot0)`` adds the matching free solution.
    """
    a = np.asarray(a, dtype=float)
    times = np.asarray(times, dtype=float)
    if np.any(times < t0):
        raise NotReached("forcing does not cover the requested times")
    if np.any(a < 0):
        raise DomainError("a_l must be non-negative")
    omega = np.sqrt(a)
    edges = _panel_edges(t0, times, float(omega.max()), extra_edges)
    x, w = np.polynomial.legendre.leggauss(order)
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (lo + hi))[:, None] + half[:, None] * x[None, :]
    fvals = forcing(nodes.ravel() if nodes.size else np.zeros(0))
    fvals = np.asarray(fvals).reshape(len(a), *nodes.shape)
    tau = nodes - t0
    wts = half[:, None] * w[None, :]
    h = np.empty((len(times), len(a)))
    hd = np.empty((len(times), len(a)))
    idx = np.searchsorted(edges, times)
    for k, (ak, om) in enumerate(zip(a, omega)):
        fk = fvals[k]
        if om > 0:
            C = np.concatenate([[0.0], np.cumsum(np.sum(wts * np.cos(om * tau) * fk, axis=1))])
            S = np.concatenate([[0.0], np.cumsum(np.sum(wts * np.sin(om * tau) * fk, axis=1))])
            Ct, St = C[idx], S[idx]
            tt = times - t0
            h[:, k] = (np.sin(om * tt) * Ct - np.cos(om * tt) * St) / om
            hd[:, k] = np.cos(om * tt) * Ct + np.sin(om * tt) * St
        else:
            F0 = np.concatenate([[0.0], np.cumsum(np.sum(wts * fk, axis=1))])
            F1 = np.concatenate([[0.0], np.cumsum(np.sum(wts * tau * fk, axis=1))])
            tt = times - t0
            h[:, k] = tt * F0[idx] - F1[idx]
            hd[:, k] = F0[idx]
    if y0 is not None:
        h0, hd0 = (np.asarray(v, dtype=float) for v in y0)
        tt = (times - t0)[:, None]
        om = omega[None, :]
        safe = np.where(om > 0, om, 1.0)
        sin_term = np.where(om > 0, np.sin(om * tt) / safe, tt)
        h += h0 * np.cos(om * tt) + hd0 * sin_term
        hd += -h0 * om * np.sin(om * tt) + hd0 * np.cos(om * tt)
    return h, hd


def duhamel_spectrum(traj: Trajectory, L_max: int = 4, times=None, start: str = "rest") -> ModeSpectrum:
    """Same result as :func:`integrate_modes`, by Duhamel quadrature of the forcing."""
    if L_max < 2:
        raise ValueError("L_max must be at least 2")
    if times is None:
        times = traj.sample_times()
    times = np.asarray(times, dtype=float)
    h, hd = duhamel_modes(_frequencies(L_max, traj.params), forcing_from_trajectory(traj, L_max), traj.t_start,
                          times, extra_edges=traj.t_nodes, y0=_initial(traj, L_max, start))
    return ModeSpectrum(L_max, times, h, hd)


def duhamel_mode(a_l: float, f_series, t0: float, t):
    """Duhamel solution of ``h'' + a_l h = f`` from rest at ``t0`` for one mode.

    ``f_series`` is a vectorised callable.  Returns ``(h, hdot)`` at ``t``.
    """
    scalar = np.ndim(t) == 0
    times = np.atleast_1d(np.asarray(t, dtype=float))

    def forcing(s):
        return np.asarray(f_series(s), dtype=float).reshape(1, -1)

    h, hd = duhamel_modes([a_l], forcing, t0, times)
    if scalar:
        return float(h[0, 0]), float(hd[0, 0])
    return h[:, 0], hd[:, 0]


# --- Taylor jets ------------------------------------------------------------

def _jet_mul(a, b):
    n = a.shape[0]
    out = np.zeros_like(a * b[:1])
    for k in range(n):
        out[k] = sum(a[i] * b[k - i] for i in range(k + 1))
    return out


def _jet_pow(u, alpha):
    """Taylor coefficients of ``u^alpha`` from those of ``u`` (u[0] > 0)."""
    n = u.shape[0]
    out = np.zeros_like(u)
    out[0] = u[0] ** alpha
    for k in range(1, n):
        acc = 0.0
        for j in range(1, k + 1):
            acc = acc + (alpha * j - (k - j)) * u[j] * out[k - j]
        out[k] = acc / (k * u[0])
    return out


def taylor_jet(traj: Trajectory, t) -> np.ndarray:
    """Taylor coefficients ``[x, v, a/2, j/6]`` of the point-mass orbit at ``t``.

    Shape ``(4, 3, len(t))``.  Acceleration and jerk use the point-mass law.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    y = traj(t)
    x, v = y[:3], y[3:6]
    GM = traj.params.GM
    r = np.linalg.norm(x, axis=0)
    rd = np.einsum("ij,ij->j", x, v) / r
    acc = -GM * x / (4.0 * r**3)
    jerk = -GM * v / (4.0 * r**3) + 3.0 * GM * x * rd / (4.0 * r**4)
    return np.stack([x, v, acc / 2.0, jerk / 6.0])


def forcing_derivatives(traj: Trajectory, t, order: int = 3) -> np.ndarray:
    """``d^k f_2m / dt^k`` for ``k = 0..order`` (``order <= 3``), shape ``(order+1, 5, len(t))``."""
    if order > 3:
        raise ValueError("jets carry the orbit only to third order")
    X = taylor_jet(traj, t)[: order + 1]
    TX = np.einsum("mij,kjn->mkin", _T2, X)
    quad = np.stack([_jet_mul(X, TX[m]).sum(axis=1) for m in range(5)], axis=1)
    r2 = _jet_mul(X, X).sum(axis=1)
    inv = _jet_pow(r2, -2.5)
    coeffs = np.stack([_jet_mul(quad[:, m, :], inv) for m in range(5)], axis=1) * _f2_prefactor(traj.params)
    fact = np.array([math.factorial(k) for k in range(order + 1)], dtype=float)
    return coeffs * fact[:, None, None]


def derivative_expansion(a: float, derivs, t0: float, times, extra_edges=None) -> np.ndarray:
    """``dh/dt`` from the integrated-by-parts representation.

        hdot = f'(t)/a - a^{-3/2} int sin(w (t - s)) f'''(s) ds
               - a^{-3/2} sin(w (t - t0)) f''(t0) + a^{-1/2} sin(w (t - t0)) f(t0)
               - a^{-1} cos(w (t - t0)) f'(t0)

    ``derivs(t_array, k)`` returns the ``k``-th derivative of the forcing with
    shape ``(n_modes, len(t))``.
    """
    if a <= 0:
        raise DomainError("the expansion needs a > 0")
    times = np.asarray(times, dtype=float)
    w = math.sqrt(a)
    # the sine convolution of f''' is a Duhamel h with forcing f'''
    conv, _ = duhamel_modes(np.full(np.shape(derivs(np.array([t0]), 0))[0], a),
                            lambda s: derivs(s, 3), t0, times, extra_edges=extra_edges)
    conv = conv.T * w  # int sin(w (t - s)) f''' ds
    d0 = derivs(np.array([t0]), 0)
    d1 = derivs(np.array([t0]), 1)
    d2 = derivs(np.array([t0]), 2)
    tau = times - t0
    s, c = np.sin(w * tau), np.cos(w * tau)
    return (derivs(times, 1) / a - conv / a**1.5 - s * d2 / a**1.5 + s * d0 / w - c * d1 / a).T


@dataclass
class ExpansionResidual:
    t: np.ndarray
    expansion: np.ndarray
    direct: np.ndarray

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.expansion - self.direct)))

    @property
    def relative(self) -> float:
        scale = float(np.max(np.abs(self.direct)))
        return self.max_deviation / scale if scale > 0 else self.max_deviation


def derivative_expansion_check(traj: Trajectory, l: int = 2, modes: ModeSpectrum | None = None) -> ExpansionResidual:
    """Compare the integrated-by-parts ``dh_2/dt`` with the integrator's ``hdot``."""
    if l != 2:
        raise ValueError("only the driven degree l = 2 carries a source")
    if modes is None:
        modes = integrate_modes(traj, L_max=2)
    a = mode_frequency(2, traj.params.GM, traj.params.R)

    def derivs(s, k):
        return forcing_derivatives(traj, s, order=k)[k]

    exp = derivative_expansion(a, derivs, traj.t_start, modes.t, extra_edges=traj.t_nodes)
    return ExpansionResidual(modes.t, exp, modes.h2dot)


# --- bound and norm diagnostics ---------------------------------------------

@dataclass
class BoundReport:
    windows: dict
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"windows": self.windows, "notes": list(self.notes)}


def _window_stats(mask, h_ratio, hd_ratio, sub_h, sub_hd) -> dict:
    n = int(mask.sum())
    if n == 0:
        return {"n": 0}
    return {
        "n": n,
        "h_ratio": (float(h_ratio[mask].min()), float(h_ratio[mask].max())),
        "hdot_ratio": (float(hd_ratio[mask].min()), float(hd_ratio[mask].max())),
        "h_band": float(h_ratio[mask].max() / h_ratio[mask].min()),
        "hdot_band": float(hd_ratio[mask].max() / hd_ratio[mask].min()),
        "subdominance_h": float(sub_h[mask].max()),
        "subdominance_hdot": float(sub_hd[mask].max()),
    }


def amplitude_bound_report(modes: ModeSpectrum, traj: Trajectory) -> BoundReport:
    """Normalised ``||h_2||/(R^2 eta^3)`` and ``||dh_2/dt||/(R eta^4 |v1|)``.

    Windows: ``[r0, 10 r0]`` and ``(r0, 2 r0]``, each on the inbound and the
    outbound branch.  The inbound ``[r0, 10 r0]`` window is the primary one.
    """
    if traj.closest is None:
        raise NotReached("trajectory does not reach closest approach")
    p = traj.params
    t = modes.t
    y = traj(t)
    r = np.linalg.norm(y[:3], axis=0)
    v = np.linalg.norm(y[3:6], axis=0)
    eta = p.R / r
    h_ratio = modes.norm(2) / (p.R**2 * eta**3)
    hd_ratio = modes.norm(2, "hdot") / (p.R * eta**4 * v)
    sub_h, sub_hd = modes.subdominance()
    r0, t0 = traj.closest.r0, traj.closest.t0
    eps = 1e-12 * r0
    inb = t <= t0
    windows = {}
    for name, lo_incl, hi in (("r0_10r0", True, 10.0 * r0), ("r0_2r0", False, 2.0 * r0)):
        in_range = ((r >= r0 - eps) if lo_incl else (r > r0 + eps)) & (r <= hi * (1 + 1e-12))
        windows[f"{name}_in"] = _window_stats(in_range & inb, h_ratio, hd_ratio, sub_h, sub_hd)
        windows[f"{name}_out"] = _window_stats(in_range & ~inb, h_ratio, hd_ratio, sub_h, sub_hd)
    if windows["r0_10r0_in"]["n"] == 0:
        raise NotReached("no samples with r1 in [r0, 10 r0]")
    notes = []
    if windows["r0_10r0_out"].get("n", 0) == 0:
        notes.append("outbound branch not covered")
    return BoundReport(windows, notes)


def dtf_norm_identity(state: OrbitState, params: PhysicalParams, grid: SphereGrid | None = None):
    """``int_{S_R} |df/dt|^2`` by quadrature and its closed-form split.

    With ``eta' = -eta r1'/r1`` and ``xi1' = (v1 - r1' xi1)/r1``:

        eta-term = (9/64) g^2 eta^4 eta'^2 (16 pi R^2 / 5)
        xi-term  = (3 pi / 20) g^2 eta^6 R^2 |xi1'|^2

    and the cross term vanishes.  Returns ``(lhs, parts)``.
    """
    grid = grid or SphereGrid.gauss(12, params.R)
    r = state.r1
    xi = state.xi1
    rd = state.r1dot
    eta = params.R / r
    deta = -eta * rd / r
    dxi = (state.v1 - rd * xi) / r
    g = params.g
    c = grid.nodes @ xi
    A = (3.0 * g * eta**2 * deta / 8.0) * (3.0 * c * c - 1.0)
    B = (6.0 * g * eta**3 / 8.0) * c * (grid.nodes @ dxi)
    lhs = float(grid.integrate((A + B) ** 2))
    parts = {
        "eta_term": 9.0 / 64.0 * g**2 * eta**4 * deta**2 * 16.0 * math.pi * params.R**2 / 5.0,
        "xi_term": 3.0 * math.pi / 20.0 * g**2 * eta**6 * params.R**2 * float(dxi @ dxi),
        "cross_term": float(grid.integrate(2.0 * A * B)),
        "eta_term_quadrature": float(grid.integrate(A * A)),
        "xi_term_quadrature": float(grid.integrate(B * B)),
    }
    return lhs, parts


def mode_energy_balance(modes: ModeSpectrum, forcing, a) -> float:
    """Max relative defect of ``E(t) - E(t0) = int hdot . f`` with ``E = sum (hdot^2 + a h^2)/2``.

    Uses the dense output of the direct integration and Gauss-Legendre panels
    between consecutive samples.
    """
    if modes.sol is None:
        raise ValueError("mode spectrum carries no dense output")
    a = np.asarray(a, dtype=float)
    n = len(a)
    t = modes.t
    energy = 0.5 * np.sum(modes.hdot**2 + a * modes.h**2, axis=1)
    x, w = np.polynomial.legendre.leggauss(12)
    lo, hi = t[:-1], t[1:]
    half = 0.5 * (hi - lo)
    nodes = ((0.5 * (lo + hi))[:, None] + half[:, None] * x[None, :]).ravel()
    hd = modes.sol(nodes)[n:]
    f = forcing(nodes)
    power = np.sum(hd * f, axis=0).reshape(len(lo), -1)
    work = np.concatenate([[0.0], np.cumsum(half * (power @ w))])
    defect = energy - energy[0] - work
    return float(np.max(np.abs(defect)) / max(float(np.max(np.abs(energy))), 1e-300))
