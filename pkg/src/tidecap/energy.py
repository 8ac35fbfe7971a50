"""Orbital and tidal energy of the decoupled model, the capture ratio and the eta^6 law.

Energies are per unit mass, like the modified total energy of the problem.
The tidal part is the deformation quadratic form

    kinetic   = R / (4 |B|) ||dh_2/dt||^2,     potential = g / (5 |B|) ||h_2||^2,

which vanishes for the unperturbed ball, so the ``3GM/(5R)`` self-energy
offset never has to appear.  The surrogate ``(GM/R^5)||h||_{H^1}^2 + ||dh/dt||^2/R^2``
is carried alongside; on pure degree-2 data it exceeds the potential part by
``140 pi / 3`` and the kinetic part by ``16 pi / 3``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .orbit import ClosureKind, NotReached, OrbitState, Trajectory, _ball_rule
from .params import DomainError, PhysicalParams
from .sphere import degrees
from .tidal import ModeSpectrum

__all__ = [
    "Fidelity",
    "TidalEnergy",
    "EnergyReport",
    "ScalingFit",
    "SURROGATE_POTENTIAL_RATIO",
    "SURROGATE_KINETIC_RATIO",
    "tidal_energy",
    "orbital_energy",
    "decomposition_report",
    "capture_ratio",
    "eta_scaling_fit",
]

SURROGATE_POTENTIAL_RATIO = 140.0 * math.pi / 3.0
SURROGATE_KINETIC_RATIO = 16.0 * math.pi / 3.0


class Fidelity(str, Enum):
    POINT = "point"
    BALL = "ball"


@dataclass(frozen=True)
class TidalEnergy:
    total: np.ndarray
    kinetic: np.ndarray
    potential: np.ndarray
    surrogate: np.ndarray
    surrogate_kinetic: np.ndarray
    surrogate_potential: np.ndarray


def _h1_weights(L_max: int) -> np.ndarray:
    ell = degrees(L_max).astype(float)
    return 1.0 + ell * (ell + 1.0)


def tidal_energy(modes: ModeSpectrum, params: PhysicalParams, check: bool = True) -> TidalEnergy:
    """Kinetic/potential tidal energy of each sample plus the surrogate form.

    With ``check`` set, verifies that on samples carrying only degree-2 data
    the surrogate parts are the fixed multiples of the physical parts.
    """
    vol = params.volume
    n2 = modes.norm(2) ** 2
    nd2 = modes.norm(2, "hdot") ** 2
    kinetic = params.R / (4.0 * vol) * nd2
    potential = params.g / (5.0 * vol) * n2
    w = _h1_weights(modes.L_max)
    sur_pot = params.GM / params.R**5 * (modes.h**2 @ w)
    sur_kin = np.sum(modes.hdot**2, axis=1) / params.R**2
    if check:
        other = degrees(modes.L_max) != 2
        pure = ~np.any(modes.h[:, other] != 0, axis=1) & ~np.any(modes.hdot[:, other] != 0, axis=1)
        if np.any(pure):
            bad_p = np.abs(sur_pot[pure] - SURROGATE_POTENTIAL_RATIO * potential[pure])
            bad_k = np.abs(sur_kin[pure] - SURROGATE_KINETIC_RATIO * kinetic[pure])
            tol = 1e-12 * (np.abs(sur_pot[pure]) + np.abs(sur_kin[pure])) + 1e-300
            if np.any(bad_p > tol) or np.any(bad_k > tol):
                raise AssertionError("surrogate and physical tidal energies are not proportional on degree-2 data")
    return TidalEnergy(kinetic + potential, kinetic, potential, sur_pot + sur_kin, sur_kin, sur_pot)


def _ball_pair_potential(x1, params: PhysicalParams, order: int) -> float:
    """``avg_{B1} avg_{B2} 1/|y - z|`` for undeformed balls."""
    rule = _ball_rule(order)
    pts = params.R * rule.points
    w = rule.weights
    d0 = 2.0 * np.asarray(x1, dtype=float)
    total = 0.0
    chunk = max(1, 200_000 // len(w))
    for i in range(0, len(w), chunk):
        d = d0 + pts[i:i + chunk, None, :] - pts[None, :, :]
        total += float(np.einsum("i,j,ij->", w[i:i + chunk], w, np.einsum("ijk,ijk->ij", d, d) ** -0.5))
    return total


def orbital_energy(state: OrbitState, params: PhysicalParams, fidelity: Fidelity | str = Fidelity.POINT,
                   order: int = 8) -> float:
    """``|x1'|^2 / 2 + (1/(2|B1|)) int_{B1} psi_2``.

    ``point`` uses ``-GM/(4 r1)`` for the potential term, exact for rigid
    balls; ``ball`` evaluates the double ball integral by quadrature.
    """
    fidelity = Fidelity(fidelity)
    r = state.r1
    kin = 0.5 * float(state.v1 @ state.v1)
    if fidelity is Fidelity.POINT:
        return kin - params.GM / (4.0 * r)
    if r <= params.R:
        raise DomainError(f"bodies overlap: r1 = {r!r} <= R")
    return kin - 0.5 * params.GM * _ball_pair_potential(state.x1, params, order)


@dataclass
class EnergyReport:
    """Energy decomposition sampled along a run (per unit mass)."""

    t: np.ndarray
    eta: np.ndarray
    r1: np.ndarray
    E_orbital: np.ndarray
    E_tidal: np.ndarray
    E_tidal_kinetic: np.ndarray
    E_tidal_potential: np.ndarray
    E_total: np.ndarray
    E_tidal_surrogate: np.ndarray
    e0: float
    t0: float | None = None
    r0: float | None = None
    GM: float = 1.0
    R: float = 1.0
    extras: dict = field(default_factory=dict)

    @property
    def m_ratio(self) -> np.ndarray:
        return self.E_tidal / self.e0

    @property
    def m_ratio_surrogate(self) -> np.ndarray:
        return self.E_tidal_surrogate / self.e0

    @property
    def E_orbital_implied(self) -> np.ndarray:
        """``e0 - E_tidal``: the orbital energy left if the total stayed at ``e0``."""
        return self.e0 - self.E_tidal

    @property
    def total_drift(self) -> np.ndarray:
        return self.E_total - self.e0

    def index_at(self, t: float) -> int:
        return int(np.argmin(np.abs(self.t - t)))

    def row(self, k: int) -> dict:
        return {
            "t": float(self.t[k]),
            "eta": float(self.eta[k]),
            "r1": float(self.r1[k]),
            "E_orbital": float(self.E_orbital[k]),
            "E_tidal": float(self.E_tidal[k]),
            "E_tidal_kinetic": float(self.E_tidal_kinetic[k]),
            "E_tidal_potential": float(self.E_tidal_potential[k]),
            "E_total": float(self.E_total[k]),
            "E_tidal_surrogate": float(self.E_tidal_surrogate[k]),
            "E_orbital_implied": float(self.E_orbital_implied[k]),
            "m_ratio": float(self.m_ratio[k]),
        }


def decomposition_report(traj: Trajectory, modes: ModeSpectrum, params: PhysicalParams | None = None) -> EnergyReport:
    """``E_total := E_orbital + E_tidal`` on the sample times of ``modes``.

    ``e0`` is the orbital energy at the start, where the bodies are
    undeformed.  In the decoupled model ``E_total - e0`` equals the tidal
    energy and is reported as a model-error diagnostic, not asserted.
    """
    params = params or traj.params
    t = modes.t
    if np.any(t < traj.t_start - 1e-9 * max(1.0, abs(traj.t_start))) or np.any(
            t > traj.t_end + 1e-9 * max(1.0, abs(traj.t_end))):
        raise ValueError("mode samples fall outside the trajectory")
    y = traj(t)
    r = np.linalg.norm(y[:3], axis=0)
    e_orb = 0.5 * np.einsum("ij,ij->j", y[3:6], y[3:6]) - params.GM / (4.0 * r)
    tid = tidal_energy(modes, params)
    s0 = traj.state(traj.t_start)
    e0 = orbital_energy(s0, params)
    return EnergyReport(
        t=t,
        eta=params.R / r,
        r1=r,
        E_orbital=e_orb,
        E_tidal=tid.total,
        E_tidal_kinetic=tid.kinetic,
        E_tidal_potential=tid.potential,
        E_total=e_orb + tid.total,
        E_tidal_surrogate=tid.surrogate,
        e0=e0,
        t0=traj.closest.t0 if traj.closest else None,
        r0=traj.closest.r0 if traj.closest else None,
        GM=params.GM,
        R=params.R,
    )


def capture_ratio(report: EnergyReport, at: float | None = None, surrogate: bool = False) -> float:
    """``m = E_tidal / e0`` at time ``at`` (default: the closest approach)."""
    if report.e0 <= 0:
        raise DomainError(f"initial total energy {report.e0!r} <= 0: not a scattering configuration")
    if at is None:
        if report.t0 is None:
            raise NotReached("report has no closest approach")
        at = report.t0
    k = report.index_at(at)
    tidal = report.E_tidal_surrogate[k] if surrogate else report.E_tidal[k]
    return float(tidal / report.e0)


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    ratio_min: float
    ratio_max: float
    n: int

    def as_dict(self) -> dict:
        return asdict(self)


def eta_scaling_fit(report: EnergyReport, window: tuple[float, float] | None = None, branch: str = "in",
                    tidal: np.ndarray | None = None) -> ScalingFit:
    """Least-squares slope of ``log E_tidal`` against ``log eta`` over a radius window.

    ``window = (lo, hi)`` selects ``lo < r1 <= hi``; default ``(r0, 2 r0]``.
    ``branch`` picks samples before (``in``), after (``out``) or around
    (``both``) the closest approach.
    """
    E = report.E_tidal if tidal is None else np.asarray(tidal)
    if window is None:
        if report.r0 is None:
            raise NotReached("no closest approach: give an explicit window")
        window = (report.r0, 2.0 * report.r0)
    lo, hi = window
    mask = (report.r1 > lo * (1 + 1e-12)) & (report.r1 <= hi * (1 + 1e-12)) & (E > 0)
    if report.t0 is not None and branch != "both":
        mask &= (report.t <= report.t0) if branch == "in" else (report.t > report.t0)
    n = int(mask.sum())
    if n < 10:
        raise ValueError(f"window holds {n} samples; at least 10 are needed")
    x, yv = np.log(report.eta[mask]), np.log(E[mask])
    slope, intercept = np.polyfit(x, yv, 1)
    ratio = E[mask] / (report.GM / report.R * report.eta[mask] ** 6)
    return ScalingFit(float(slope), float(intercept), float(ratio.min()), float(ratio.max()), n)
