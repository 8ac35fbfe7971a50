"""Real spherical harmonics on S_R and the spectral operators acting on them.

Conventions
-----------
Harmonics are real and carry no Condon-Shortley phase::

    Y_l0  = N_l0 P_l(cos t)
    Y_lm  = sqrt(2) N_lm P_l^m(cos t) cos(m f)      m > 0
    Y_l-m = sqrt(2) N_lm P_l^m(cos t) sin(m f)      m > 0

with ``N_lm = sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!)``; they are orthonormal on the
unit sphere.  On S_R the basis is ``Y_lm / R`` so that it is orthonormal for
the area measure and the L2(S_R) norm of a field is the Euclidean norm of its
coefficient vector.  The complex basis ``Y_l^m = (-1)^m N_lm P_l^m e^{imf}``
relates to the real one through ``Y_lm = sqrt(2) (-1)^m Re Y_l^m`` and
``Y_l-m = sqrt(2) (-1)^m Im Y_l^m`` for ``m > 0``.

Coefficients are stored flat with ``index(l, m) = l*l + l + m``.

On-surface layer potentials are never evaluated by quadrature here; they act
through their multipliers, and :func:`offsurface_potential_oracle` is the
independent check on those multipliers.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .params import DomainError

__all__ = [
    "SphereGrid",
    "BallRule",
    "lm_index",
    "n_coeffs",
    "degrees",
    "real_sph_harm",
    "sh_analyze",
    "sh_synthesize",
    "double_layer_apply",
    "single_layer_apply",
    "dirichlet_neumann_apply",
    "offsurface_potential_oracle",
    "ball_self_potential",
    "operator_report",
    "quadrupole_tensors",
    "l2_from_tensor",
    "wigner_l2",
]


def lm_index(l: int, m: int) -> int:
    if abs(m) > l:
        raise ValueError(f"|m| > l for (l, m) = ({l}, {m})")
    return l * l + l + m


def n_coeffs(L_max: int) -> int:
    return (L_max + 1) ** 2


@lru_cache(maxsize=None)
def _degrees(L_max: int) -> np.ndarray:
    ells = np.concatenate([np.full(2 * l + 1, l) for l in range(L_max + 1)])
    ells.setflags(write=False)
    return ells


def degrees(L_max: int) -> np.ndarray:
    """Degree ``l`` of every flat coefficient slot."""
    return _degrees(L_max)


@dataclass(frozen=True)
class SphereGrid:
    """Gauss-Legendre in ``cos(theta)`` times uniform longitude on S_R.

    A grid of degree ``D`` integrates every polynomial of total degree ``<= D``
    restricted to the sphere exactly, so products ``Y_lm Y_l'm'`` are exact for
    ``l + l' <= D``.
    """

    nodes: np.ndarray  # unit directions, shape (N, 3)
    weights: np.ndarray  # area weights on S_R, sum = 4 pi R^2
    degree: int
    R: float = 1.0

    @classmethod
    def gauss(cls, degree: int, R: float = 1.0) -> "SphereGrid":
        if degree < 0:
            raise ValueError("degree must be non-negative")
        n_theta = degree // 2 + 1
        n_phi = degree + 1
        x, w = np.polynomial.legendre.leggauss(n_theta)
        phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
        sin_t = np.sqrt(1.0 - x * x)
        nodes = np.stack([
            np.outer(sin_t, np.cos(phi)).ravel(),
            np.outer(sin_t, np.sin(phi)).ravel(),
            np.repeat(x, n_phi),
        ], axis=1)
        weights = np.repeat(w, n_phi) * (2.0 * np.pi / n_phi) * R * R
        return cls(nodes=nodes, weights=weights, degree=degree, R=float(R))

    @property
    def size(self) -> int:
        return len(self.weights)

    def integrate(self, samples) -> np.ndarray:
        return np.tensordot(self.weights, np.asarray(samples), axes=(0, 0))


def _assoc_legendre_normalized(L_max: int, x: np.ndarray) -> np.ndarray:
    """``N_lm P_l^m(x)`` for ``0 <= m <= l <= L_max``, no Condon-Shortley phase.

    Returns an array of shape ``(L_max+1, L_max+1, len(x))`` indexed ``[l, m]``.
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    out = np.zeros((L_max + 1, L_max + 1) + x.shape)
    out[0, 0] = math.sqrt(1.0 / (4.0 * math.pi))
    for m in range(1, L_max + 1):
        out[m, m] = math.sqrt((2 * m + 1) / (2.0 * m)) * s * out[m - 1, m - 1]
    for m in range(0, L_max):
        out[m + 1, m] = math.sqrt(2 * m + 3) * x * out[m, m]
    for m in range(0, L_max + 1):
        for l in range(m + 2, L_max + 1):
            a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            out[l, m] = a * (x * out[l - 1, m] - b * out[l - 2, m])
    return out


def real_sph_harm(L_max: int, directions) -> np.ndarray:
    """Unit-sphere real harmonics at ``directions``, shape ``(N, (L_max+1)^2)``."""
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    z = np.clip(d[:, 2], -1.0, 1.0)
    phi = np.arctan2(d[:, 1], d[:, 0])
    P = _assoc_legendre_normalized(L_max, z)
    Y = np.empty((d.shape[0], n_coeffs(L_max)))
    root2 = math.sqrt(2.0)
    for l in range(L_max + 1):
        Y[:, lm_index(l, 0)] = P[l, 0]
        for m in range(1, l + 1):
            Y[:, lm_index(l, m)] = root2 * P[l, m] * np.cos(m * phi)
            Y[:, lm_index(l, -m)] = root2 * P[l, m] * np.sin(m * phi)
    return Y


def sh_analyze(samples, grid: SphereGrid, L_max: int) -> np.ndarray:
    """Project grid samples onto the S_R-orthonormal basis up to ``L_max``."""
    if grid.degree < 2 * L_max:
        warnings.warn(
            f"grid degree {grid.degree} < 2*L_max = {2 * L_max}: coefficients are aliased",
            RuntimeWarning,
            stacklevel=2,
        )
    basis = real_sph_harm(L_max, grid.nodes) / grid.R
    return np.tensordot(basis * grid.weights[:, None], np.asarray(samples, dtype=float), axes=(0, 0))


def sh_synthesize(coeffs, grid_or_directions, R: float | None = None) -> np.ndarray:
    """Evaluate an S_R coefficient vector on a grid or at unit directions."""
    coeffs = np.asarray(coeffs, dtype=float)
    L_max = int(round(math.sqrt(coeffs.shape[0]))) - 1
    if n_coeffs(L_max) != coeffs.shape[0]:
        raise ValueError(f"coefficient length {coeffs.shape[0]} is not a square")
    if isinstance(grid_or_directions, SphereGrid):
        nodes, R = grid_or_directions.nodes, grid_or_directions.R
    else:
        nodes = grid_or_directions
        R = 1.0 if R is None else R
    return real_sph_harm(L_max, nodes) @ coeffs / R


def _ell_of(coeffs) -> np.ndarray:
    n = np.asarray(coeffs).shape[0]
    L_max = int(round(math.sqrt(n))) - 1
    if n_coeffs(L_max) != n:
        raise ValueError(f"coefficient length {n} is not a square")
    return degrees(L_max)


def _apply(coeffs, multiplier) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    mult = multiplier(_ell_of(coeffs).astype(float))
    return coeffs * mult.reshape((-1,) + (1,) * (coeffs.ndim - 1))


def double_layer_apply(coeffs) -> np.ndarray:
    """Double-layer potential on S_R: multiplies degree ``l`` by ``1/(2l+1)``."""
    return _apply(coeffs, lambda l: 1.0 / (2.0 * l + 1.0))


def single_layer_apply(coeffs, R: float) -> np.ndarray:
    """Single-layer potential on S_R: multiplies degree ``l`` by ``-R/(2l+1)``."""
    return _apply(coeffs, lambda l: -R / (2.0 * l + 1.0))


def dirichlet_neumann_apply(coeffs, R: float) -> np.ndarray:
    """Dirichlet-Neumann map of the ball of radius ``R``: multiplies by ``l/R``."""
    return _apply(coeffs, lambda l: l / R)


def offsurface_potential_oracle(l: int, m: int, r_ratio: float, grid: SphereGrid,
                                probes=None, full_output: bool = False):
    """Check ``(1/4pi) int Y_lm(x') / |x' - r x| dS(x') = r^{-l-1} Y_lm(x) / (2l+1)``.

    The left side is evaluated by plain quadrature at ``r_ratio > 1``, where
    the kernel is smooth.  Returns the maximum error over the probe directions
    relative to the largest value of the right side.
    """
    if r_ratio <= 1.0:
        raise DomainError("r_ratio must exceed 1; the surface itself is reached only as a limit")
    if grid.degree < 2 * l + 4:
        warnings.warn(f"grid degree {grid.degree} < 2l+4 = {2 * l + 4}", RuntimeWarning, stacklevel=2)
    if probes is None:
        probes = SphereGrid.gauss(max(2 * l, 4)).nodes
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    probes = probes / np.linalg.norm(probes, axis=1, keepdims=True)
    w = grid.weights / grid.R**2  # unit-sphere weights
    Y_src = real_sph_harm(l, grid.nodes)[:, lm_index(l, m)]
    dist = np.linalg.norm(grid.nodes[None, :, :] - r_ratio * probes[:, None, :], axis=2)
    field = (Y_src * w / dist).sum(axis=1) / (4.0 * math.pi)
    exact = r_ratio ** (-l - 1) * real_sph_harm(l, probes)[:, lm_index(l, m)] / (2 * l + 1)
    err = float(np.max(np.abs(field - exact)) / np.max(np.abs(exact)))
    if full_output:
        return err, field, exact
    return err


def ball_self_potential(R: float, rho: float, G: float, n_nodes: int = 24) -> tuple[float, float]:
    """Half the self-potential integral of a uniform ball.

    Returns ``(closed_form, quadrature)``.  The closed form is
    ``-3 G M |B_R| / (5 R)``; the quadrature builds the interior potential
    ``-4 pi G rho [ (1/r) int_0^r s^2 ds + int_r^R s ds ]`` shell by shell with
    Gauss-Legendre and integrates ``(1/2) psi`` over the ball radially.
    """
    if min(R, rho, G) <= 0:
        raise DomainError("R, rho and G must be positive")
    vol = 4.0 * math.pi * R**3 / 3.0
    M = rho * vol
    closed = -3.0 * G * M * vol / (5.0 * R)

    x, w = np.polynomial.legendre.leggauss(n_nodes)

    def gl(a, b, f):
        half = 0.5 * (b - a)
        return half * np.sum(w * f(0.5 * (b + a) + half * x))

    def psi(r):
        inner = gl(0.0, r, lambda s: s * s) / r
        outer = gl(r, R, lambda s: s)
        return -4.0 * math.pi * G * rho * (inner + outer)

    radial = gl(0.0, R, np.vectorize(lambda r: 0.5 * psi(r) * 4.0 * math.pi * r * r))
    return closed, float(radial)


@dataclass(frozen=True)
class BallRule:
    """Averaging rule over the unit ball: Gauss-Legendre in radius times a sphere grid."""

    points: np.ndarray  # shape (N, 3), inside the unit ball
    weights: np.ndarray  # sum to 1

    @classmethod
    def make(cls, order: int) -> "BallRule":
        if order < 1:
            raise ValueError("order must be positive")
        x, w = np.polynomial.legendre.leggauss(order)
        r = 0.5 * (x + 1.0)
        wr = 0.5 * w * r * r * 3.0  # int_0^1 3 r^2 dr = 1
        sph = SphereGrid.gauss(2 * order)
        ws = sph.weights / (4.0 * math.pi)
        points = (r[:, None, None] * sph.nodes[None, :, :]).reshape(-1, 3)
        weights = (wr[:, None] * ws[None, :]).ravel()
        return cls(points=points, weights=weights)


_C2 = math.sqrt(15.0 / (4.0 * math.pi))
_C0 = math.sqrt(5.0 / (16.0 * math.pi))


def quadrupole_tensors() -> np.ndarray:
    """Traceless symmetric ``T_m`` with ``Y_2m(w) = w . T_m . w``, shape ``(5, 3, 3)``.

    Ordered ``m = -2 .. 2`` to match the flat coefficient layout.
    """
    T = np.zeros((5, 3, 3))
    # m = -2: sqrt(15/4pi) x y
    T[0, 0, 1] = T[0, 1, 0] = 0.5 * _C2
    # m = -1: sqrt(15/4pi) y z
    T[1, 1, 2] = T[1, 2, 1] = 0.5 * _C2
    # m = 0: sqrt(5/16pi) (2 z^2 - x^2 - y^2)
    T[2] = _C0 * np.diag([-1.0, -1.0, 2.0])
    # m = 1: sqrt(15/4pi) x z
    T[3, 0, 2] = T[3, 2, 0] = 0.5 * _C2
    # m = 2: sqrt(15/16pi) (x^2 - y^2)
    T[4] = 0.5 * _C2 * np.diag([1.0, -1.0, 0.0])
    return T


def l2_from_tensor(A) -> np.ndarray:
    """Unit-sphere degree-2 coefficients of ``w . A . w`` for symmetric ``A``.

    Uses ``int (w.T_m.w)(w.A.w) dW = (8 pi / 15) T_m : A`` for traceless ``T_m``.
    """
    A = np.asarray(A, dtype=float)
    return (8.0 * math.pi / 15.0) * np.einsum("mij,...ij->...m", quadrupole_tensors(), A)


def wigner_l2(rotation) -> np.ndarray:
    """Matrix acting on degree-2 coefficients when a field is rotated by ``rotation``.

    If ``g(w) = f(Q^T w)`` then ``c_g = D c_f`` with
    ``D_mn = (8 pi / 15) T_m : (Q T_n Q^T)``.  ``D`` is orthogonal.
    """
    Q = np.asarray(rotation, dtype=float)
    T = quadrupole_tensors()
    rotated = np.einsum("ij,njk,lk->nil", Q, T, Q)
    return (8.0 * math.pi / 15.0) * np.einsum("mij,nij->mn", T, rotated)


def _dn_finite_difference(coeffs, grid: SphereGrid, L_max: int, step: float = 1e-3) -> np.ndarray:
    """Normal derivative of the harmonic extension, by a 4th-order radial difference."""
    ell = degrees(L_max).astype(float)
    R = grid.R

    def ext(r):
        return sh_synthesize(coeffs * (r / R) ** ell, grid)

    h = step * R
    d = (8.0 * (ext(R + h) - ext(R - h)) - (ext(R + 2 * h) - ext(R - 2 * h))) / (12.0 * h)
    return sh_analyze(d, grid, L_max)


def operator_report(L_max: int = 8, grid_degree: int = 32, R: float = 1.0, g: float | None = None,
                    oracle_degree: int = 64, oracle_lmax: int = 6, r_ratio: float = 1.5, seed: int = 0) -> dict:
    """Errors of every multiplier, identity and quadrature oracle, as plain floats.

    ``grid_degree`` drives the transform checks; the off-surface oracle uses
    its own ``oracle_degree`` because its kernel needs a finer rule than the
    band limit alone suggests.
    """
    from .tidal import mode_frequency  # tidal builds on this module

    if L_max < 0 or grid_degree < 1:
        raise ValueError("need L_max >= 0 and grid_degree >= 1")
    rng = np.random.default_rng(seed)
    n = n_coeffs(L_max)
    ell = degrees(L_max).astype(float)
    eye = np.eye(n)
    g = 4.0 * math.pi / 3.0 * R if g is None else g  # G = rho = 1
    GM_over_R3 = g / R

    def max_abs(a):
        return float(np.max(np.abs(a))) if np.size(a) else 0.0

    K = double_layer_apply(eye)
    S = single_layer_apply(eye, R)
    D = dirichlet_neumann_apply(eye, R)
    f, h = rng.standard_normal(n), rng.standard_normal(n)
    comp = g * dirichlet_neumann_apply(eye - 3.0 * K, R)
    a_l = np.array([mode_frequency(int(l), GM_over_R3 * R**3, R) for l in ell])
    multipliers = {
        "double_layer": max_abs(np.diag(K) - 1.0 / (2 * ell + 1)) + max_abs(K - np.diag(np.diag(K))),
        "single_layer": max_abs(np.diag(S) + R / (2 * ell + 1)) + max_abs(S - np.diag(np.diag(S))),
        "single_vs_double": max_abs(single_layer_apply(f, R) + R * double_layer_apply(f)),
        "dirichlet_neumann": max_abs(np.diag(D) - ell / R) + max_abs(D - np.diag(np.diag(D))),
        "composite_a_l": max_abs(np.diag(comp) - a_l) / max(1.0, max_abs(a_l)),
        "composite_closed_form": max_abs(np.diag(comp) - g * 2 * ell * (ell - 1) / (R * (2 * ell + 1)))
        / max(1.0, max_abs(a_l)),
        "self_adjoint": abs(double_layer_apply(f) @ h - f @ double_layer_apply(h)),
        "i_plus_k_inverse": max_abs(
            _apply(f + double_layer_apply(f), lambda l: (2 * l + 1) / (2 * l + 2)) - f),
    }
    grid = SphereGrid.gauss(grid_degree, R)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        round_trip = max_abs(sh_analyze(sh_synthesize(f, grid), grid, L_max) - f) / max_abs(f)
        dn_fd = max_abs(_dn_finite_difference(f, grid, L_max) - dirichlet_neumann_apply(f, R)) / max_abs(
            dirichlet_neumann_apply(f, R) + 1e-300)
    oracle_grid = SphereGrid.gauss(oracle_degree)
    oracle = {}
    for l in range(min(L_max, oracle_lmax) + 1):
        oracle[str(l)] = max(offsurface_potential_oracle(l, m, r_ratio, oracle_grid) for m in range(-l, l + 1))
    approach = {}
    probes = np.array([[0.0, 0.0, 1.0], [0.6, 0.0, 0.8], [0.0, -0.8, 0.6]])
    for r in (1.5, 1.25, 1.1):
        fine = SphereGrid.gauss(min(400, int(math.ceil(32.0 / (r - 1.0)))))
        err, field, _ = offsurface_potential_oracle(2, 0, r, fine, probes=probes, full_output=True)
        estimate = float(np.mean(field / real_sph_harm(2, probes)[:, lm_index(2, 0)]))
        approach[str(r)] = {"oracle_error": err, "multiplier_estimate": estimate,
                            "gap_to_surface_multiplier": abs(estimate - 0.2)}
    closed, quad = ball_self_potential(1.0, 3.0 / (4.0 * math.pi), 1.0)
    return {
        "L_max": L_max,
        "grid_degree": grid_degree,
        "oracle_degree": oracle_degree,
        "r_ratio": r_ratio,
        "multipliers": multipliers,
        "round_trip": round_trip,
        "dirichlet_neumann_finite_difference": dn_fd,
        "offsurface_oracle": oracle,
        "offsurface_approach_l2m0": approach,
        "ball_self_potential": {"closed_form": closed, "quadrature": quad,
                                "relative_error": abs(quad - closed) / abs(closed)},
        "aliased": grid_degree < 2 * L_max,
    }
