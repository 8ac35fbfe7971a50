"""Centre-of-mass motion of body 1 and diagnostics along its trajectory.

The partner sits at ``x2 = -x1`` so only body 1 is integrated.  Three force
closures are available:

``point``
    ``x1'' = -GM x1 / (4 r1^3)``.
``ball``
    ``x1'' = -avg_{B1} grad psi_2`` with both balls discretised by a
    tensor-product Gauss rule.  For exact balls this equals ``point`` up to
    quadrature error.
``quadrupole``
    ``point`` plus the force between the monopole of one body and the
    linear-in-h quadrupole of the other.  The degree-2 height modes are
    integrated together with the orbit.  Off by default.

Runs start on the incoming point-mass hyperbola at distance ``R1`` with zero
deformation.
"""
from __future__ import annotations

import bisect
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.integrate import OdeSolution, solve_ivp
from scipy.optimize import brentq

from . import kepler
from .kepler import NumericalError
from .params import DerivedGroups, DomainError, PhysicalParams
from .sphere import BallRule, quadrupole_tensors

__all__ = [
    "NotReached",
    "ClosureKind",
    "ForceClosure",
    "OrbitState",
    "StopCondition",
    "ClosestApproach",
    "Trajectory",
    "PositionEvaluator",
    "StageReport",
    "ResidualSeries",
    "accel",
    "quadrupole_accel",
    "quadrupole_moment",
    "pointwise_remainder_ratio",
    "integrate",
    "detect_closest_approach",
    "stage_bounds_report",
    "stage_thresholds",
    "evolution_law_residuals",
    "eta_integration_constants",
    "third_derivative_check",
    "time_reversal_check",
    "conic_deviation",
]


class NotReached(RuntimeError):
    """The requested event does not occur within the available data."""


class ClosureKind(str, Enum):
    POINT = "point"
    BALL = "ball"
    QUADRUPOLE = "quadrupole"


@dataclass(frozen=True)
class ForceClosure:
    kind: ClosureKind = ClosureKind.POINT
    quadrature_order: int = 8

    def __post_init__(self):
        object.__setattr__(self, "kind", ClosureKind(self.kind))
        if self.kind is not ClosureKind.POINT and self.quadrature_order < 4:
            raise ValueError("quadrature_order must be >= 4 for non point-mass closures")

    @property
    def coupled(self) -> bool:
        return self.kind is ClosureKind.QUADRUPOLE

    @property
    def state_size(self) -> int:
        return 16 if self.coupled else 6


@dataclass(frozen=True)
class OrbitState:
    t: float
    x1: np.ndarray
    v1: np.ndarray
    GM: float = 1.0

    @property
    def r1(self) -> float:
        return float(np.linalg.norm(self.x1))

    @property
    def xi1(self) -> np.ndarray:
        return self.x1 / self.r1

    @property
    def r1dot(self) -> float:
        return float(self.x1 @ self.v1) / self.r1

    @property
    def J_vec(self) -> np.ndarray:
        return np.cross(self.x1, self.v1)

    @property
    def J(self) -> float:
        return float(np.linalg.norm(self.J_vec))

    @property
    def E1(self) -> float:
        return 0.5 * float(self.v1 @ self.v1) - self.GM / (4.0 * self.r1)


@dataclass(frozen=True)
class StopCondition:
    """``closest``: first closest approach, then on to ``r1 = min(10 r0, R1)``.

    ``radius``: first crossing of ``r1 = value`` on the given branch.
    ``time``: fixed horizon ``t = value``.
    """

    kind: str = "closest"
    value: float | None = None
    branch: str = "in"

    @classmethod
    def parse(cls, text: str) -> "StopCondition":
        text = text.strip()
        if text == "closest":
            return cls("closest")
        key, sep, val = text.partition("=")
        if not sep:
            raise ValueError(f"stop condition must be closest, r1=<val> or t=<val>, got {text!r}")
        try:
            value = float(val)
        except ValueError:
            raise ValueError(f"stop condition {text!r}: {val!r} is not a number") from None
        if key == "r1":
            return cls("radius", value)
        if key == "t":
            return cls("time", value)
        raise ValueError(f"unknown stop condition key {key!r}")


@dataclass(frozen=True)
class ClosestApproach:
    t0: float
    r0: float
    E1_at_t0: float
    J_at_t0: float
    r0_pred: float
    r1_ddot: float


# --- forces -----------------------------------------------------------------

_BALL_RULES: dict[int, BallRule] = {}


def _ball_rule(order: int) -> BallRule:
    if order not in _BALL_RULES:
        _BALL_RULES[order] = BallRule.make(order)
    return _BALL_RULES[order]


def _ball_average_field(x1, params: PhysicalParams, order: int) -> np.ndarray:
    """``avg_{y in B1} avg_{z in B2} (y - z)/|y - z|^3`` for undeformed balls."""
    rule = _ball_rule(order)
    pts = params.R * rule.points
    w = rule.weights
    d0 = 2.0 * np.asarray(x1, dtype=float)
    total = np.zeros(3)
    chunk = max(1, 200_000 // len(w))
    for i in range(0, len(w), chunk):
        d = d0 + pts[i:i + chunk, None, :] - pts[None, :, :]
        inv = np.einsum("ijk,ijk->ij", d, d) ** -1.5
        total += np.einsum("i,j,ij,ijk->k", w[i:i + chunk], w, inv, d)
    return total


def quadrupole_moment(h2, params: PhysicalParams) -> np.ndarray:
    """Traceless mass quadrupole ``int rho (3 x x - r^2 I)`` of a ball with height ``h2``.

    ``h2`` holds the five degree-2 coefficients in the S_R basis.
    """
    return (6.0 * params.M / 5.0) * np.tensordot(np.asarray(h2, dtype=float), quadrupole_tensors(), axes=(0, 0))


def quadrupole_accel(x1, h2, params: PhysicalParams) -> np.ndarray:
    """Acceleration of body 1 from the monopole-quadrupole coupling of both bodies.

    Both bodies carry the same quadrupole by the point symmetry of the setup.
    """
    Q = quadrupole_moment(h2, params)
    d = 2.0 * np.asarray(x1, dtype=float)
    dd = float(d @ d)
    qd = Q @ d
    return params.G * (2.0 * qd / dd**2.5 - 5.0 * float(d @ qd) * d / dd**3.5)


def accel(state, closure: ForceClosure, params: PhysicalParams, h2=None) -> np.ndarray:
    """Acceleration of body 1 at ``state`` (an :class:`OrbitState` or a position)."""
    x1 = state.x1 if isinstance(state, OrbitState) else np.asarray(state, dtype=float)
    r = float(np.linalg.norm(x1))
    if r <= 0:
        raise DomainError("r1 must be positive")
    GM = params.GM
    if closure.kind is ClosureKind.POINT:
        return -GM * x1 / (4.0 * r**3)
    if r <= params.R:
        raise DomainError(f"bodies overlap: 2 r1 = {2 * r!r} <= 2R = {2 * params.R!r}")
    if closure.kind is ClosureKind.BALL:
        return -GM * _ball_average_field(x1, params, closure.quadrature_order)
    a = -GM * x1 / (4.0 * r**3)
    if h2 is not None:
        a = a + quadrupole_accel(x1, h2, params)
    return a


def pointwise_remainder_ratio(eta: float, params: PhysicalParams | None = None, order: int = 8) -> float:
    """``max_{B1} |E1| R^2 / (GM eta^4)`` for exact balls at separation ``2R/eta``.

    ``E1`` is the remainder of the two-term expansion of ``grad psi_2`` about
    the centre of body 1.  Its ball average vanishes for exact balls but the
    pointwise value is of size ``GM eta^4 / R^2``.
    """
    params = params or PhysicalParams(1.0, 1.0, 1.0, 1.0, 1.0)
    R, GM = params.R, params.GM
    x1 = np.array([R / eta, 0.0, 0.0])
    xi = x1 / np.linalg.norm(x1)
    rule = _ball_rule(order)
    zeta = R * rule.points
    # add the surface, where the remainder is largest
    zeta = np.vstack([zeta, R * BallRule.make(1).points / np.linalg.norm(BallRule.make(1).points, axis=1)[:, None]])
    d = zeta + 2.0 * x1
    grad = GM * d / np.linalg.norm(d, axis=1)[:, None] ** 3
    lead = GM * eta**2 / (4.0 * R**2) * xi
    second = GM * eta**3 / (8.0 * R**3) * (zeta - 3.0 * (zeta @ xi)[:, None] * xi)
    E1 = grad - lead - second
    return float(np.max(np.linalg.norm(E1, axis=1)) * R**2 / (GM * eta**4))


# --- integration ------------------------------------------------------------

def _f2_scale(params: PhysicalParams) -> float:
    return math.pi * params.g * params.R**4 / 5.0


def _source_l2(x, params: PhysicalParams, T=None) -> np.ndarray:
    T = quadrupole_tensors() if T is None else T
    r2 = float(x @ x)
    return _f2_scale(params) * np.einsum("i,mij,j->m", x, T, x) / r2**2.5


def _make_rhs(closure: ForceClosure, params: PhysicalParams):
    GM = params.GM
    if closure.kind is ClosureKind.POINT:
        c = -GM / 4.0

        def rhs(t, y):
            x = y[:3]
            r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2]
            k = c / (r2 * math.sqrt(r2))
            return np.array([y[3], y[4], y[5], k * x[0], k * x[1], k * x[2]])

        return rhs
    if closure.kind is ClosureKind.BALL:
        def rhs(t, y):
            return np.concatenate([y[3:6], accel(y[:3], closure, params)])

        return rhs
    a2 = params.GM / params.R**3 * 0.8
    T = quadrupole_tensors()

    def rhs(t, y):
        x = y[:3]
        h, hd = y[6:11], y[11:16]
        a = accel(x, closure, params, h2=h)
        return np.concatenate([y[3:6], a, hd, _source_l2(x, params, T) - a2 * h])

    return rhs


def _time_scale(params: PhysicalParams) -> float:
    r = params.r_plus_exact
    return math.sqrt(r**3 / params.GM)


def _default_atol(params: PhysicalParams, closure: ForceClosure, rtol: float) -> np.ndarray:
    L = params.r_plus_exact
    V = kepler.speed_at_closest(params.p, params.b, params.v0, params.GM)
    scales = [L] * 3 + [V] * 3
    if closure.coupled:
        eta = min(params.R / L, 0.5)
        hs = _f2_scale(params) / params.R**3 * eta**3 / (0.8 * params.GM / params.R**3)
        scales += [hs] * 5 + [hs * math.sqrt(0.8 * params.GM / params.R**3)] * 5
    return rtol * 1e-3 * np.asarray(scales)


class Trajectory:
    """Dense-output trajectory of body 1 (and the co-integrated modes if coupled)."""

    def __init__(self, sol: OdeSolution, t_nodes, y_nodes, params: PhysicalParams,
                 closure: ForceClosure, rtol: float, status: str, closest: ClosestApproach | None = None):
        self.sol = sol
        self.t_nodes = np.asarray(t_nodes)
        self.y_nodes = np.asarray(y_nodes)
        self.params = params
        self.closure = closure
        self.rtol = rtol
        self.status = status
        self.closest = closest

    @property
    def t_start(self) -> float:
        return float(self.t_nodes[0])

    @property
    def t_end(self) -> float:
        return float(self.t_nodes[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t_start - 1e-12 * abs(self.t_start) - 1e-300) or np.any(
                t > self.t_end + 1e-12 * abs(self.t_end) + 1e-300):
            raise NotReached(f"time outside trajectory span [{self.t_start}, {self.t_end}]")
        return self.sol(np.clip(t, self.t_start, self.t_end))

    def position_evaluator(self) -> "PositionEvaluator":
        if getattr(self, "_pos_eval", None) is None:
            self._pos_eval = PositionEvaluator(self.sol)
        return self._pos_eval

    def state(self, t: float) -> OrbitState:
        y = self(t)
        return OrbitState(float(t), y[:3].copy(), y[3:6].copy(), self.params.GM)

    def position(self, t):
        return self(t)[:3]

    def velocity(self, t):
        return self(t)[3:6]

    def radius(self, t):
        return np.linalg.norm(self(t)[:3], axis=0)

    def radial_velocity(self, t):
        y = self(t)
        return np.einsum("i...,i...->...", y[:3], y[3:6]) / np.linalg.norm(y[:3], axis=0)

    def energy(self, t):
        y = self(t)
        return 0.5 * np.einsum("i...,i...->...", y[3:6], y[3:6]) - self.params.GM / (
            4.0 * np.linalg.norm(y[:3], axis=0))

    def angular_momentum(self, t):
        y = self(t)
        return np.cross(y[:3], y[3:6], axis=0)

    def time_at_radius(self, r: float, branch: str = "in") -> float:
        """First time on ``branch`` at which ``r1 = r`` (inbound before ``t0``)."""
        rn = np.linalg.norm(self.y_nodes[:, :3], axis=1)
        if self.closest is not None:
            split = np.searchsorted(self.t_nodes, self.closest.t0)
        else:
            split = len(rn)
        idx = np.arange(len(rn))
        mask = idx < split if branch == "in" else idx >= max(split - 1, 0)
        if branch == "out" and self.closest is None:
            raise NotReached("no closest approach: outbound branch undefined")
        tn = self.t_nodes[mask]
        rr = rn[mask] - r
        if self.closest is not None:
            edge = self.closest.t0
            tn = np.append(tn, edge) if branch == "in" else np.insert(tn, 0, edge)
            rr = np.append(rr, self.closest.r0 - r) if branch == "in" else np.insert(rr, 0, self.closest.r0 - r)
        hits = np.nonzero(np.sign(rr[:-1]) * np.sign(rr[1:]) <= 0)[0]
        if len(hits) == 0 and abs(rr[-1]) <= 1e-12 * r:
            return float(tn[-1])  # the end radius itself, up to rounding
        if len(hits) == 0:
            raise NotReached(f"r1 = {r!r} not reached on the {branch}bound branch")
        k = hits[0]
        if rr[k] == 0:
            return float(tn[k])
        return brentq(lambda s: float(self.radius(s)) - r, tn[k], tn[k + 1], xtol=1e-14 * max(1.0, abs(tn[k])),
                      rtol=4 * np.finfo(float).eps)

    def sample_times(self, n_radii: int = 200, inbound_only: bool = False) -> np.ndarray:
        """Integrator nodes merged with log-spaced radii on each branch."""
        times = [self.t_nodes]
        if self.closest is not None:
            r0 = self.closest.r0
            times.append([self.closest.t0])
            r_in = np.linalg.norm(self.y_nodes[0, :3])
            grid = np.geomspace(r0, r_in, n_radii + 1)[1:]
            grid[-1] = r_in
            times.append([self.time_at_radius(r, "in") for r in grid])
            r_out = np.linalg.norm(self.y_nodes[-1, :3])
            if not inbound_only and r_out > r0:
                grid = np.geomspace(r0, r_out, n_radii + 1)[1:]
                grid[-1] = r_out
                times.append([self.time_at_radius(r, "out") for r in grid])
        else:
            times.append(np.linspace(self.t_start, self.t_end, n_radii + 1))
        t = np.unique(np.concatenate([np.asarray(x, dtype=float) for x in times]))
        if inbound_only and self.closest is not None:
            t = t[t <= self.closest.t0]
        return t


class PositionEvaluator:
    """Scalar position lookup on a dense solution, for hot loops.

    Every segment of the dense output is resampled at Chebyshev points and
    stored as monomial coefficients in the local variable, which reproduces a
    degree <= ``degree`` interpolant exactly.  Construction checks the
    reconstruction at interior points and refuses to build otherwise.
    """

    def __init__(self, sol: OdeSolution, degree: int = 7):
        ts = np.asarray(sol.ts, dtype=float)
        if ts[-1] < ts[0]:
            raise ValueError("only forward solutions are supported")
        k = degree + 1
        u = 0.5 * (1.0 - np.cos(np.pi * (np.arange(k) + 0.5) / k))
        check = np.array([0.13, 0.47, 0.91])
        lo, hi = ts[:-1], ts[1:]
        width = hi - lo
        samples = sol((lo[:, None] + width[:, None] * u[None, :]).ravel())[:3].reshape(3, len(lo), k)
        V = np.vander(u, k)
        coef = np.linalg.solve(V, samples.transpose(2, 0, 1).reshape(k, -1)).reshape(k, 3, len(lo))
        probe = sol((lo[:, None] + width[:, None] * check[None, :]).ravel())[:3].reshape(3, len(lo), 3)
        rec = np.einsum("kcs,pk->csp", coef, np.vander(check, k))
        scale = np.max(np.abs(probe), axis=(0, 2)) + 1e-300
        if np.max(np.abs(rec - probe).max(axis=(0, 2)) / scale) > 1e-11:
            raise NumericalError("dense output is not a polynomial of the assumed degree")
        self._edges = ts.tolist()
        self._lo = lo.tolist()
        self._inv = (1.0 / width).tolist()
        # per segment: three coefficient tuples, highest power first
        self._coef = [tuple(tuple(coef[:, c, s].tolist()) for c in range(3)) for s in range(len(lo))]
        self._last = len(lo) - 1

    def __call__(self, t: float):
        s = bisect.bisect_right(self._edges, t) - 1
        s = 0 if s < 0 else (self._last if s > self._last else s)
        u = (t - self._lo[s]) * self._inv[s]
        out = []
        for cs in self._coef[s]:
            acc = 0.0
            for c in cs:
                acc = acc * u + c
            out.append(acc)
        return out


def _join(sols) -> OdeSolution:
    ts = [sols[0].ts]
    interps = list(sols[0].interpolants)
    for s in sols[1:]:
        ts.append(s.ts[1:])
        interps.extend(s.interpolants)
    return OdeSolution(np.concatenate(ts), interps)


def _time_bound(params: PhysicalParams, r_start: float) -> float:
    # generous: straight line at v0 plus free fall from r_start
    return 4.0 * (r_start / params.v0 + math.sqrt(8.0 * r_start**3 / params.GM)) + 100.0 * _time_scale(params)


def integrate(params: PhysicalParams, closure: ForceClosure | None = None, stop: StopCondition | None = None,
              rtol: float = 1e-10, atol=None, initial=None, t_start: float = 0.0) -> Trajectory:
    """Integrate body 1 from the incoming hyperbola at ``params.start_distance``.

    ``initial`` may override the start as ``(x1, v1)``.  Uses DOP853 with dense
    output; ``closest`` stops are refined with :func:`detect_closest_approach`.
    """
    closure = closure or ForceClosure()
    stop = stop or StopCondition()
    R1 = params.start_distance
    if initial is None:
        if R1 < params.r_plus_exact:
            raise DomainError(f"R1 = {R1!r} is inside the closest approach {params.r_plus_exact!r}")
        x0, v0 = kepler.hyperbola_state(params.b, params.v0, params.GM, R1, "in")
    else:
        x0, v0 = (np.asarray(a, dtype=float) for a in initial)
    if closure.kind is not ClosureKind.POINT and np.linalg.norm(x0) <= params.R:
        raise DomainError("bodies overlap at the start")
    y0 = np.concatenate([x0, v0, np.zeros(closure.state_size - 6)])
    rhs = _make_rhs(closure, params)
    if atol is None:
        atol = _default_atol(params, closure, rtol)
    opts = dict(method="DOP853", rtol=rtol, atol=atol, dense_output=True)
    r_start = float(np.linalg.norm(x0))
    t_bound = t_start + _time_bound(params, r_start)

    overlap_events = []
    if closure.kind is not ClosureKind.POINT:
        def overlap(t, y):
            return y[0] ** 2 + y[1] ** 2 + y[2] ** 2 - params.R**2

        overlap.terminal = True
        overlap.direction = -1
        overlap_events.append(overlap)

    def run(t0, y, t1, events):
        res = solve_ivp(rhs, (t0, t1), y, events=events + overlap_events, **opts)
        if res.status == -1:
            raise NumericalError(f"integrator failed: {res.message}")
        if overlap_events and len(res.t_events[-1]):
            raise DomainError(f"bodies overlap at t = {res.t_events[-1][0]!r}")
        return res

    if stop.kind == "time":
        if stop.value is None or stop.value <= t_start:
            raise ValueError("time stop must lie after the start")
        res = run(t_start, y0, stop.value, [])
        traj = Trajectory(res.sol, res.t, res.y.T, params, closure, rtol, "time")
        return _attach_closest(traj)

    if stop.kind == "radius":
        target = stop.value

        def hit(t, y):
            return math.sqrt(y[0] ** 2 + y[1] ** 2 + y[2] ** 2) - target

        hit.terminal = True
        hit.direction = -1 if stop.branch == "in" else 1
        res = run(t_start, y0, t_bound, [hit])
        status = "radius" if len(res.t_events[0]) else "horizon"
        traj = Trajectory(res.sol, res.t, res.y.T, params, closure, rtol, status)
        return _attach_closest(traj)

    if stop.kind != "closest":
        raise ValueError(f"unknown stop kind {stop.kind!r}")

    def turn(t, y):
        return y[0] * y[3] + y[1] * y[4] + y[2] * y[5]

    turn.terminal = True
    turn.direction = 1
    first = run(t_start, y0, t_bound, [turn])
    if not len(first.t_events[0]):
        raise NotReached("no closest approach before the time bound")
    t_turn = float(first.t_events[0][0])
    y_turn = first.y_events[0][0]
    r0 = float(np.linalg.norm(y_turn[:3]))
    target = min(10.0 * r0, r_start)

    def out(t, y):
        return math.sqrt(y[0] ** 2 + y[1] ** 2 + y[2] ** 2) - target

    out.terminal = True
    out.direction = 1
    second = run(t_turn, y_turn, t_turn + _time_bound(params, target), [out])
    status = "closest" if len(second.t_events[0]) else "bound"
    sol = _join([first.sol, second.sol])
    t_nodes = np.concatenate([first.t, second.t[1:]])
    y_nodes = np.concatenate([first.y.T, second.y.T[1:]])
    traj = Trajectory(sol, t_nodes, y_nodes, params, closure, rtol, status)
    traj.closest = detect_closest_approach(traj)
    return traj


def _attach_closest(traj: Trajectory) -> Trajectory:
    try:
        traj.closest = detect_closest_approach(traj)
    except NotReached:
        pass
    return traj


def detect_closest_approach(traj: Trajectory) -> ClosestApproach:
    """First upward sign change of ``r1'``, refined by bracketing on the dense output."""
    y = traj.y_nodes
    g = np.einsum("ij,ij->i", y[:, :3], y[:, 3:6])
    idx = np.nonzero((g[:-1] < 0) & (g[1:] >= 0))[0]
    if len(idx) == 0:
        raise NotReached("r1' has no sign change: orbit still inbound or data truncated")
    k = idx[0]
    ta, tb = traj.t_nodes[k], traj.t_nodes[k + 1]
    GM = traj.params.GM
    r_here = float(np.linalg.norm(y[k, :3]))
    xtol = 1e-12 * math.sqrt(r_here**3 / GM)

    def rv(t):
        s = traj.sol(t)
        return float(s[:3] @ s[3:6])

    if g[k + 1] == 0:
        t0 = float(tb)
    else:
        t0 = brentq(rv, ta, tb, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=400)
    st = traj.state(t0)
    E1, J = st.E1, st.J
    disc = GM * GM + 32.0 * E1 * J * J
    r0_pred = 4.0 * J * J / (math.sqrt(disc) + GM) if disc >= 0 else math.nan
    h2 = traj(t0)[6:11] if traj.closure.coupled else None
    a = accel(st.x1, traj.closure, traj.params, h2=h2)
    r_ddot = (float(st.v1 @ st.v1) + float(st.x1 @ a)) / st.r1 - st.r1dot**2 / st.r1
    return ClosestApproach(t0=t0, r0=st.r1, E1_at_t0=E1, J_at_t0=J, r0_pred=r0_pred, r1_ddot=r_ddot)


# --- stage bounds -----------------------------------------------------------

def stage_thresholds(groups: DerivedGroups, R: float = 1.0) -> dict:
    c0, beta = groups.c0, groups.beta
    return {
        "far_min": R * c0**-2 * beta ** (12.0 / 7.0),
        "mid_min": 3.0 * R * c0**2 * beta ** (2.0 / 7.0),
        "near_max": 4.0 * R * c0**2 * beta ** (2.0 / 7.0),
        "r0_lower": 1.5 * R * c0**2 * beta ** (2.0 / 7.0),
        "r0_upper": 2.5 * R * c0**2 * beta ** (2.0 / 7.0),
    }


@dataclass
class StageReport:
    thresholds: dict
    r0: float
    r0_in_band: bool
    stages: dict
    near_fit_r2: float
    near_fit_slope: float
    warnings: list = field(default_factory=list)
    near_fit_r2_scaled: float = math.nan

    def max_spread(self) -> float:
        """Largest ``max(ratio, 1/ratio)`` over every populated stage and ratio."""
        worst = 1.0
        for st in self.stages.values():
            for key in ("rdot_ratio", "v_ratio"):
                lo, hi = st.get(key, (math.nan, math.nan))
                if st["n"]:
                    worst = max(worst, hi, 1.0 / lo)
        return worst

    def as_dict(self) -> dict:
        return {
            "thresholds": self.thresholds,
            "r0": self.r0,
            "r0_in_band": self.r0_in_band,
            "stages": self.stages,
            "near_fit_r2": self.near_fit_r2,
            "near_fit_slope": self.near_fit_slope,
            "near_fit_r2_scaled": self.near_fit_r2_scaled,
            "warnings": list(self.warnings),
        }


def stage_bounds_report(traj: Trajectory, groups: DerivedGroups, times=None) -> StageReport:
    """Normalised ``|r1'|`` and ``|v1|`` ratios over the three inbound stages.

    Samples default to :meth:`Trajectory.sample_times` on the inbound branch.
    """
    if traj.closest is None:
        raise NotReached("trajectory does not reach closest approach")
    p = traj.params
    R, GM = p.R, p.GM
    c0, beta = groups.c0, groups.beta
    th = stage_thresholds(groups, R)
    r0 = traj.closest.r0
    warn = []
    if beta < 1e3:
        warn.append(f"beta = {beta:.3g} < 1e3: stage estimates are asymptotic in beta")
    if not th["mid_min"] < th["far_min"]:
        warn.append("stage thresholds out of order: mid stage is empty")
    if times is None:
        times = traj.sample_times(inbound_only=True)
    times = np.asarray(times)
    times = times[times <= traj.closest.t0]
    y = traj(times)
    r = np.linalg.norm(y[:3], axis=0)
    v = np.linalg.norm(y[3:6], axis=0)
    rdot = np.abs(np.einsum("ij,ij->j", y[:3], y[3:6]) / r)
    vel = math.sqrt(GM / R)
    stages = {}
    defs = {
        "far": (r >= th["far_min"], vel * c0 * beta ** (-6.0 / 7.0) * np.ones_like(r),
                vel * c0 * beta ** (-6.0 / 7.0) * np.ones_like(r)),
        "mid": ((r >= th["mid_min"]) & (r <= th["far_min"]), vel * np.sqrt(R / r), vel * np.sqrt(R / r)),
        "near": ((r > r0 * (1.0 + 1e-8)) & (r <= th["near_max"]),  # r - r0 at roundoff level is noise
                 math.sqrt(GM) / (c0**2 * R) * beta ** (-2.0 / 7.0) * np.sqrt(np.clip(r - r0, 0, None)),
                 vel / c0 * beta ** (-1.0 / 7.0) * np.ones_like(r)),
    }
    for name, (mask, rdot_norm, v_norm) in defs.items():
        n = int(mask.sum())
        entry = {"n": n, "r_range": (float(r[mask].min()), float(r[mask].max())) if n else (math.nan, math.nan)}
        if n:
            rr = rdot[mask] / rdot_norm[mask]
            vv = v[mask] / v_norm[mask]
            entry["rdot_ratio"] = (float(rr.min()), float(rr.max()))
            entry["v_ratio"] = (float(vv.min()), float(vv.max()))
        else:
            entry["rdot_ratio"] = entry["v_ratio"] = (math.nan, math.nan)
            warn.append(f"{name} stage has no samples (trajectory does not cover it)")
        stages[name] = entry
    near = defs["near"][0]
    r2 = slope = r2_scaled = math.nan
    if near.sum() >= 3:
        xs = r[near] - r0
        r2, slope = _linear_fit(xs, rdot[near] ** 2)
        # r^2 r'^2 = 2 E1 r^2 + GM r / 2 - J^2 is linear in r up to the small E1 term
        r2_scaled, _ = _linear_fit(xs, (r[near] * rdot[near]) ** 2)
    return StageReport(
        thresholds=th,
        r0=r0,
        r0_in_band=bool(th["r0_lower"] <= r0 <= th["r0_upper"]),
        stages=stages,
        near_fit_r2=r2,
        near_fit_slope=slope,
        warnings=warn,
        near_fit_r2_scaled=r2_scaled,
    )


def _linear_fit(xs, ys) -> tuple[float, float]:
    """``(R^2, slope)`` of a least-squares line with intercept."""
    coef = np.polyfit(xs, ys, 1)
    resid = ys - np.polyval(coef, xs)
    return float(1.0 - resid @ resid / np.sum((ys - ys.mean()) ** 2)), float(coef[0])


# --- evolution laws and other diagnostics ------------------------------------

@dataclass
class ResidualSeries:
    t: np.ndarray
    energy_residual: np.ndarray
    momentum_residual: np.ndarray
    energy_rate_ratio: np.ndarray

    @property
    def max_energy_residual(self) -> float:
        return float(np.max(np.abs(self.energy_residual)))

    @property
    def max_momentum_residual(self) -> float:
        return float(np.max(self.momentum_residual))


def _central(fn, t, h):
    # fourth-order first derivative
    return (fn(t - 2 * h) - 8 * fn(t - h) + 8 * fn(t + h) - fn(t + 2 * h)) / (12 * h)


def evolution_law_residuals(traj: Trajectory, closure: ForceClosure | None = None, times=None) -> ResidualSeries:
    """Residuals of ``dE1/dt = -AV(E1).v1`` and ``dJ/dt = AV(E1) x x1``.

    Derivatives of the integrated ``E1`` and ``J`` come from finite
    differences on the dense output; ``AV(E1) = a_point - a_closure``.
    """
    closure = closure or traj.closure
    p = traj.params
    if times is None:
        times = traj.t_nodes[2:-2]
    times = np.asarray(times, dtype=float)
    tau = np.sqrt(traj.radius(times) ** 3 / p.GM)
    h = 1e-3 * tau
    lo, hi = traj.t_start + 2 * h, traj.t_end - 2 * h
    keep = (times >= lo) & (times <= hi)
    times, h = times[keep], h[keep]
    dE = _central(traj.energy, times, h)
    dJ = _central(traj.angular_momentum, times, h)
    y = traj(times)
    e_res = np.empty(len(times))
    j_res = np.empty(len(times))
    ratio = np.empty(len(times))
    point = ForceClosure(ClosureKind.POINT)
    for k in range(len(times)):
        x, v = y[:3, k], y[3:6, k]
        h2 = y[6:11, k] if closure.coupled else None
        av = accel(x, point, p) - accel(x, closure, p, h2=h2)
        e_res[k] = dE[k] + av @ v
        j_res[k] = np.linalg.norm(dJ[:, k] - np.cross(av, x))
        eta = p.R / np.linalg.norm(x)
        ratio[k] = abs(dE[k]) / (p.GM * eta**4 * np.linalg.norm(v) / p.R**2)
    return ResidualSeries(times, e_res, j_res, ratio)


def _gl_cumulative(fn, edges, order: int = 8) -> np.ndarray:
    """Cumulative integral of ``fn`` at ``edges`` by Gauss-Legendre per interval."""
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b))[:, None] + half[:, None] * x[None, :]
    vals = fn(nodes.ravel()).reshape(nodes.shape)
    pieces = half * (vals @ w)
    return np.concatenate([[0.0], np.cumsum(pieces)])


def eta_integration_constants(traj: Trajectory, ms=range(1, 9)) -> dict:
    """``max_t int_{T0}^t eta^{m+1} |v1| ds / (R eta^m(t))`` on the inbound branch."""
    if traj.closest is None:
        raise NotReached("trajectory does not reach closest approach")
    R = traj.params.R
    edges = traj.sample_times(inbound_only=True)
    eta = R / traj.radius(edges)
    out = {}
    for m in ms:
        def integrand(s, m=m):
            y = traj(s)
            return (R / np.linalg.norm(y[:3], axis=0)) ** (m + 1) * np.linalg.norm(y[3:6], axis=0)

        cum = _gl_cumulative(integrand, edges)
        out[int(m)] = float(np.max(cum[1:] / (R * eta[1:] ** m)))
    return out


def third_derivative_check(traj: Trajectory, times=None) -> float:
    """Max relative deviation of a finite-difference ``r1'''`` from the point-mass formula.

    Uses ``r1''' = GM r1'/(2 r1^3) - 3 J^2 r1'/r1^4``; the remainder terms vanish
    for the point-mass closure.
    """
    p = traj.params
    if times is None:
        times = traj.t_nodes[2:-2]
    times = np.asarray(times, dtype=float)
    tau = np.sqrt(traj.radius(times) ** 3 / p.GM)
    h = 2e-3 * tau
    keep = (times - 3 * h >= traj.t_start) & (times + 3 * h <= traj.t_end)
    times, h = times[keep], h[keep]
    f = traj.radial_velocity
    # fourth-order second derivative of r1'
    fd = (-f(times - 2 * h) + 16 * f(times - h) - 30 * f(times) + 16 * f(times + h) - f(times + 2 * h)) / (12 * h * h)
    y = traj(times)
    r = np.linalg.norm(y[:3], axis=0)
    rd = np.einsum("ij,ij->j", y[:3], y[3:6]) / r
    J2 = np.sum(np.cross(y[:3], y[3:6], axis=0) ** 2, axis=0)
    exact = p.GM * rd / (2 * r**3) - 3 * J2 * rd / r**4
    scale = p.GM * np.abs(np.linalg.norm(y[3:6], axis=0)) / r**3
    return float(np.max(np.abs(fd - exact) / scale))


def time_reversal_check(traj: Trajectory, rtol: float | None = None) -> float:
    """Relative position error after reversing velocities at ``t0`` and integrating back."""
    if traj.closest is None:
        raise NotReached("trajectory does not reach closest approach")
    t0 = traj.closest.t0
    st = traj.state(t0)
    duration = t0 - traj.t_start
    back = integrate(traj.params, traj.closure, StopCondition("time", t0 + duration),
                     rtol=rtol or traj.rtol, initial=(st.x1, -st.v1), t_start=t0)
    x_end = back(t0 + duration)[:3]
    x_start = traj(traj.t_start)[:3]
    return float(np.linalg.norm(x_end - x_start) / np.linalg.norm(x_start))


def conic_deviation(traj: Trajectory, times=None) -> float:
    """Max ``|r - conic_radius(theta)| / r`` with ``theta`` measured from periapsis."""
    p = traj.params
    mu = p.GM / 4.0
    y0 = traj(traj.t_start)
    x0, v0 = y0[:3], y0[3:6]
    Jv = np.cross(x0, v0)
    J = float(np.linalg.norm(Jv))
    E1 = 0.5 * float(v0 @ v0) - mu / float(np.linalg.norm(x0))
    e = kepler.eccentricity(E1, J, p.GM)
    lrl = np.cross(v0, Jv) - mu * x0 / np.linalg.norm(x0)
    e_hat = lrl / np.linalg.norm(lrl)
    j_hat = Jv / J
    if times is None:
        times = traj.t_nodes
    x = traj(np.asarray(times))[:3]
    theta = np.arctan2(np.cross(e_hat, x, axisb=0) @ j_hat, e_hat @ x)
    r = np.linalg.norm(x, axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        conic = kepler.conic_radius(theta, J, e, p.GM)
    return float(np.max(np.abs(r - conic) / r))
