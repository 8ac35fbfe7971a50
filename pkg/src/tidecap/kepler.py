"""Point-mass analysis of the symmetric two-body encounter.

Body 1 moves under ``x'' = -GM x / (4 |x|^3)`` (the partner sits at ``-x``),
so every formula here carries the factor 1/4 of the relative problem.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate

from .params import DomainError

__all__ = [
    "NumericalError",
    "KeplerSummary",
    "eccentricity",
    "closest_approach",
    "scattering_angle",
    "conic_radius",
    "speed_at_closest",
    "summary",
    "hyperbola_state",
    "table",
]


class NumericalError(RuntimeError):
    """A numerical routine missed its requested tolerance."""


@dataclass(frozen=True)
class KeplerSummary:
    energy_E1: float
    J: float
    eccentricity_e: float
    lambda_plus: float
    r_plus_exact: float
    alpha: float
    v_plus: float

    def as_dict(self) -> dict:
        return asdict(self)


def eccentricity(E1: float, J: float, GM: float) -> float:
    if GM <= 0:
        raise DomainError(f"GM must be positive, got {GM!r}")
    radicand = 1.0 + 32.0 * E1 * J * J / (GM * GM)
    if radicand < 0:
        raise DomainError(f"non-physical state: 1 + 32 E1 J^2/(GM)^2 = {radicand!r} < 0")
    return math.sqrt(radicand)


def closest_approach(p: float, b: float = 1.0) -> tuple[float, float]:
    """Return ``(lambda_plus, b * lambda_plus)``.

    ``lambda_plus`` is the positive root of ``l^2 + (p/2) l - 1``, written in
    the cancellation-free form ``1 / (p/4 + sqrt(p^2/16 + 1))``.
    """
    if p < 0 or b <= 0:
        raise DomainError(f"need p >= 0 and b > 0, got p={p!r}, b={b!r}")
    lam = 1.0 / (p / 4.0 + math.sqrt(p * p / 16.0 + 1.0))
    residual = lam * lam + 0.5 * p * lam - 1.0
    # relative to the size of the terms being cancelled
    if abs(residual) > 1e-12 * max(1.0, 0.5 * p * lam):
        raise NumericalError(f"closest-approach root residual {residual:.3e}")
    return lam, b * lam


def scattering_angle(p: float, tol: float = 1e-12, full_output: bool = False):
    """Scattering angle ``alpha = 2 int_{l+}^inf dl / (l sqrt(l^2 + p l/2 - 1)) - pi``.

    The square-root endpoint singularity is removed with ``l = l+ + s^2``,
    which leaves ``2 ds / ((l+ + s^2) sqrt(s^2 + l+ - l-))`` on ``s >= 0``.
    The two scales ``sqrt(l+)`` and ``sqrt(l+ - l-)`` separate for large ``p``,
    so the half line is split at their geometric mean and each piece is mapped
    onto a finite interval with ``s = scale * tan(u)``.
    """
    if p < 0:
        raise DomainError(f"p must be non-negative, got {p!r}")
    lam_p, _ = closest_approach(p)
    gap = 2.0 * math.sqrt(p * p / 16.0 + 1.0)  # l+ - l-
    k_in = math.sqrt(lam_p)
    k_out = math.sqrt(gap)
    s_mid = math.sqrt(k_in * k_out)

    def integrand(u, k):
        t = math.tan(u)
        s = k * t
        return 2.0 * k * (1.0 + t * t) / ((lam_p + s * s) * math.sqrt(s * s + gap))

    opts = dict(epsabs=tol, epsrel=tol, limit=400)
    inner, err_in = integrate.quad(integrand, 0.0, math.atan(s_mid / k_in), args=(k_in,), **opts)
    outer, err_out = integrate.quad(integrand, math.atan(s_mid / k_out), 0.5 * math.pi, args=(k_out,), **opts)
    value, err = inner + outer, err_in + err_out
    if err > 1e-9:
        raise NumericalError(f"scattering quadrature error estimate {err:.3e} exceeds 1e-9")
    alpha = 2.0 * value - math.pi
    if full_output:
        return alpha, 2.0 * err
    return alpha


def conic_radius(theta, J: float, e: float, GM: float):
    """Radius ``(4 J^2 / GM) / (1 + e cos theta)`` of the point-mass orbit."""
    denom = 1.0 + e * np.cos(theta)
    if np.any(denom <= 0):
        raise DomainError("1 + e cos(theta) <= 0: direction at or beyond an asymptote")
    r = (4.0 * J * J / GM) / denom
    return float(r) if np.ndim(r) == 0 else r


def speed_at_closest(p: float, b: float, v0: float, GM: float) -> float:
    _, r_plus = closest_approach(p, b)
    return math.sqrt(GM / (2.0 * r_plus) * (1.0 + 2.0 * v0 * v0 * r_plus / GM))


def summary(p: float, b: float = 1.0, GM: float = 1.0) -> KeplerSummary:
    """Conserved quantities and encounter geometry for strength ``p``.

    ``v0`` follows from ``p = GM / (b v0^2)``; ``p = 0`` is the free particle
    with unit speed.
    """
    if p < 0 or b <= 0 or GM <= 0:
        raise DomainError("need p >= 0, b > 0, GM > 0")
    v0 = math.sqrt(GM / (b * p)) if p > 0 else 1.0
    gm = GM if p > 0 else 0.0
    E1 = 0.5 * v0 * v0
    J = b * v0
    lam, r_plus = closest_approach(p, b)
    e = math.sqrt(1.0 + 32.0 * E1 * J * J / (gm * gm)) if gm > 0 else math.inf
    v_plus = math.sqrt(v0 * v0 + gm / (2.0 * r_plus))
    return KeplerSummary(
        energy_E1=E1,
        J=J,
        eccentricity_e=e,
        lambda_plus=lam,
        r_plus_exact=r_plus,
        alpha=scattering_angle(p),
        v_plus=v_plus,
    )


def hyperbola_state(b: float, v0: float, GM: float, r: float, branch: str = "in"):
    """Position and velocity of body 1 at distance ``r`` on the point-mass hyperbola.

    The orbit is the one whose incoming asymptote is the line ``x = -b``
    traversed in the ``-y`` direction at speed ``v0``, so the angular
    momentum is ``+b v0`` along ``z``.
    """
    if min(b, v0, GM) <= 0:
        raise DomainError("b, v0 and GM must be positive")
    E1 = 0.5 * v0 * v0
    J = b * v0
    e = eccentricity(E1, J, GM)
    semi_latus = 4.0 * J * J / GM
    r_min = semi_latus / (1.0 + e)
    if r < r_min * (1.0 - 1e-14):
        raise DomainError(f"r={r!r} is inside the closest approach {r_min!r}")
    cos_th = min(1.0, (semi_latus / r - 1.0) / e)
    theta = math.acos(cos_th)
    if branch == "in":
        theta = -theta
    elif branch != "out":
        raise ValueError(f"branch must be 'in' or 'out', got {branch!r}")
    mu = GM / 4.0
    pos = r * np.array([math.cos(theta), math.sin(theta)])
    vel = (mu / J) * np.array([-math.sin(theta), e + math.cos(theta)])
    # perifocal frame -> lab frame: incoming asymptotic direction (1, sqrt(e^2-1))/e goes to (0, -1)
    u_in = np.array([1.0, math.sqrt(e * e - 1.0)]) / e
    phi = -0.5 * math.pi - math.atan2(u_in[1], u_in[0])
    c, s = math.cos(phi), math.sin(phi)
    rot = np.array([[c, -s], [s, c]])
    x = np.zeros(3)
    v = np.zeros(3)
    x[:2] = rot @ pos
    v[:2] = rot @ vel
    return x, v


def table(pmin: float, pmax: float, n: int) -> list[dict]:
    """Rows of the ``kepler --table`` report over a log-spaced ``p`` grid."""
    if not (0 < pmin <= pmax) or n < 1:
        raise DomainError("need 0 < pmin <= pmax and n >= 1")
    rows = []
    for p in np.geomspace(pmin, pmax, n):
        p = float(p)
        lam, r_plus = closest_approach(p)
        alpha = scattering_angle(p)
        v0 = math.sqrt(1.0 / p)
        v_plus2 = 1.0 / (2.0 * r_plus) * (1.0 + 2.0 * v0 * v0 * r_plus)
        rows.append({
            "p": p,
            "lambda_plus": lam,
            "p_lambda_plus": p * lam,
            "alpha": alpha,
            "pi_minus_alpha": math.pi - alpha,
            "two_vplus2_rplus_over_GM": 2.0 * v_plus2 * r_plus,
        })
    return rows
