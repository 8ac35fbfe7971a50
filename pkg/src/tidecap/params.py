"""Physical parameters and the dimensionless groups derived from them.

Everything downstream works in units with G = M = R = 1.  The helpers here
carry a problem between the user's frame and that internal frame and compute
the groups that organise the encounter: the strength ``p = GM/(b v0^2)``,
``beta = b/R``, the surrogate closest approach ``r_plus = 2b/p``, and the
capture index ``eta_plus**5 * p**2``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

__all__ = [
    "DomainError",
    "PhysicalParams",
    "DerivedGroups",
    "ScaledParams",
    "derive",
    "nondimensionalize",
    "from_groups",
    "from_mu",
    "DEFAULT_R1_FACTOR",
]

#: default start distance, in units of the exact point-mass closest approach
DEFAULT_R1_FACTOR = 50.0


class DomainError(ValueError):
    """Input outside the physical domain of an operation."""


@dataclass(frozen=True)
class PhysicalParams:
    """Two equal balls of mass ``M`` and radius ``R`` on a hyperbolic encounter.

    ``R1`` is the start distance of body 1 from the common centre of mass.
    When left as ``None`` it is resolved to ``DEFAULT_R1_FACTOR`` times the
    exact closest approach ``b * lambda_plus``.
    """

    G: float
    M: float
    R: float
    b: float
    v0: float
    R1: float | None = None

    def __post_init__(self):
        for name in ("G", "M", "R", "b", "v0"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value)):
                raise DomainError(f"{name} must be a finite number, got {value!r}")
            if value <= 0:
                raise DomainError(f"{name} must be positive, got {value!r}")
        if self.R1 is not None and not (math.isfinite(self.R1) and self.R1 > 0):
            raise DomainError(f"R1 must be positive, got {self.R1!r}")

    @property
    def GM(self) -> float:
        return self.G * self.M

    @property
    def volume(self) -> float:
        return 4.0 * math.pi * self.R**3 / 3.0

    @property
    def rho(self) -> float:
        return self.M / self.volume

    @property
    def g(self) -> float:
        """Surface gravity GM/R^2."""
        return self.GM / self.R**2

    @property
    def p(self) -> float:
        return self.GM / (self.b * self.v0**2)

    @property
    def lambda_plus(self) -> float:
        p = self.p
        return 1.0 / (p / 4.0 + math.sqrt(p * p / 16.0 + 1.0))

    @property
    def r_plus_exact(self) -> float:
        return self.b * self.lambda_plus

    @property
    def start_distance(self) -> float:
        if self.R1 is not None:
            return self.R1
        return DEFAULT_R1_FACTOR * self.r_plus_exact

    def with_R1(self, R1: float | None) -> "PhysicalParams":
        return replace(self, R1=R1)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DerivedGroups:
    p: float
    beta: float
    r_plus: float
    r_plus_exact: float
    lambda_plus: float
    eta_plus: float
    kappa: float
    alpha_exp: float
    c0: float
    capture_index: float

    def as_dict(self) -> dict:
        return asdict(self)


def derive(params: PhysicalParams, alpha_exp: float = 1.0, validate_regime: bool = False) -> DerivedGroups:
    """Compute the dimensionless groups of ``params``.

    ``kappa`` is recovered from ``v0 = kappa * beta**(-alpha_exp) * sqrt(GM/R)``
    and ``c0 = kappa * beta**(6/7 - alpha_exp)``.
    """
    if not math.isfinite(alpha_exp):
        raise DomainError(f"alpha_exp must be finite, got {alpha_exp!r}")
    if validate_regime and not (6.0 / 7.0 <= alpha_exp <= 1.0):
        raise DomainError(f"alpha_exp must lie in [6/7, 1], got {alpha_exp!r}")
    GM, R, b, v0 = params.GM, params.R, params.b, params.v0
    p = GM / (b * v0**2)
    beta = b / R
    r_plus = 2.0 * b / p
    lam = 1.0 / (p / 4.0 + math.sqrt(p * p / 16.0 + 1.0))
    eta_plus = R / r_plus
    kappa = v0 / math.sqrt(GM / R) * beta**alpha_exp
    c0 = kappa * beta ** (6.0 / 7.0 - alpha_exp)
    return DerivedGroups(
        p=p,
        beta=beta,
        r_plus=r_plus,
        r_plus_exact=b * lam,
        lambda_plus=lam,
        eta_plus=eta_plus,
        kappa=kappa,
        alpha_exp=alpha_exp,
        c0=c0,
        capture_index=eta_plus**5 * p**2,
    )


@dataclass(frozen=True)
class ScaledParams:
    """``params`` rewritten in G = M = R = 1 units, plus the scale factors.

    Multiply an internal quantity by the matching scale to get it back in the
    caller's units.
    """

    params: PhysicalParams
    length: float
    time: float
    velocity: float
    energy: float  # per unit mass
    mass: float

    def to_physical(self, value: float, kind: str) -> float:
        return value * getattr(self, kind)

    def to_internal(self, value: float, kind: str) -> float:
        return value / getattr(self, kind)

    def restore(self) -> PhysicalParams:
        q = self.params
        return PhysicalParams(
            G=self.length**3 / (self.mass * self.time**2),
            M=self.mass,
            R=self.length,
            b=q.b * self.length,
            v0=q.v0 * self.velocity,
            R1=None if q.R1 is None else q.R1 * self.length,
        )


def nondimensionalize(params: PhysicalParams) -> ScaledParams:
    L = params.R
    T = math.sqrt(params.R**3 / params.GM)
    V = math.sqrt(params.GM / params.R)
    scaled = PhysicalParams(
        G=1.0,
        M=1.0,
        R=1.0,
        b=params.b / L,
        v0=params.v0 / V,
        R1=None if params.R1 is None else params.R1 / L,
    )
    return ScaledParams(scaled, length=L, time=T, velocity=V, energy=V * V, mass=params.M)


def from_groups(beta: float, kappa: float, alpha_exp: float = 1.0, R1: float | None = None,
                G: float = 1.0, M: float = 1.0, R: float = 1.0) -> PhysicalParams:
    """Build parameters from ``v0 = kappa * beta**(-alpha_exp) * sqrt(GM/R)``."""
    if beta <= 0 or kappa <= 0:
        raise DomainError("beta and kappa must be positive")
    v0 = kappa * beta ** (-alpha_exp) * math.sqrt(G * M / R)
    return PhysicalParams(G=G, M=M, R=R, b=beta * R, v0=v0, R1=R1)


def from_mu(mu: float, beta: float, R1: float | None = None,
            G: float = 1.0, M: float = 1.0, R: float = 1.0) -> PhysicalParams:
    """Parameters with surrogate closest approach ``r_plus = 2b/p = mu * R``.

    This is the ``alpha_exp = 1`` family with ``kappa = sqrt(mu / 2)``.
    """
    if mu <= 0:
        raise DomainError(f"mu must be positive, got {mu!r}")
    return from_groups(beta, math.sqrt(mu / 2.0), 1.0, R1=R1, G=G, M=M, R=R)
