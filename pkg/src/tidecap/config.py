"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  Physical parameters come either
as ``G, M, R, b, v0`` or as groups: ``beta`` with one of ``kappa`` or ``mu``
(``G, M, R`` then default to 1).  Solver keys carry defaults.

    G = 1
    M = 1
    R = 1
    b = 10000
    v0 = 3.1622776601683795e-4
    # R1 = 1000            (default: 50 times the exact closest approach)
    rtol = 1e-10
    L_max = 4
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .orbit import ClosureKind, ForceClosure, StopCondition
from .params import DomainError, PhysicalParams, from_groups, from_mu

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "parse_grid", "KEYS"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _float(key, text):
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"{key}: expected a finite number, got {text!r}")
    return value


def _int(key, text):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


def _choice(options):
    def parse(key, text):
        if text not in options:
            raise ConfigError(f"{key}: expected one of {sorted(options)}, got {text!r}")
        return text

    return parse


def _stop(key, text):
    try:
        StopCondition.parse(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    return text


KEYS = {
    "G": _float,
    "M": _float,
    "R": _float,
    "b": _float,
    "v0": _float,
    "R1": _float,
    "beta": _float,
    "kappa": _float,
    "mu": _float,
    "alpha_exp": _float,
    "closure": _choice({k.value for k in ClosureKind}),
    "quadrature_order": _int,
    "rtol": _float,
    "L_max": _int,
    "grid_degree": _int,
    "stop": _stop,
    "modes": _choice({"direct", "duhamel"}),
    "mode_start": _choice({"rest", "adiabatic"}),
    "out": str,
}


@dataclass
class RunConfig:
    params: PhysicalParams
    alpha_exp: float = 1.0
    closure: str = "point"
    quadrature_order: int = 8
    rtol: float = 1e-10
    L_max: int = 4
    grid_degree: int = 32
    stop: str = "closest"
    modes: str = "direct"
    mode_start: str = "rest"
    out: str | None = None
    sweep: list = field(default_factory=list)
    raw: dict = field(default_factory=dict)

    @property
    def force_closure(self) -> ForceClosure:
        return ForceClosure(ClosureKind(self.closure), self.quadrature_order)

    @property
    def stop_condition(self) -> StopCondition:
        return StopCondition.parse(self.stop)

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("raw")
        d["params"] = self.params.as_dict()
        d["params"]["R1_resolved"] = self.params.start_distance
        return d


def _params_from(values: dict) -> PhysicalParams:
    direct = [k for k in ("b", "v0") if k in values]
    groups = [k for k in ("beta", "kappa", "mu") if k in values]
    G, M, R = values.get("G"), values.get("M"), values.get("R")
    if direct and groups:
        raise ConfigError(f"give either b, v0 or beta with kappa/mu, not both ({direct + groups})")
    try:
        if groups:
            if "beta" not in values:
                raise ConfigError("beta: required when kappa or mu is given")
            if ("kappa" in values) == ("mu" in values):
                raise ConfigError("kappa/mu: give exactly one of them")
            base = dict(G=G or 1.0, M=M or 1.0, R=R or 1.0, R1=values.get("R1"))
            if "mu" in values:
                if values.get("alpha_exp", 1.0) != 1.0:
                    raise ConfigError("mu: only defined for alpha_exp = 1")
                return from_mu(values["mu"], values["beta"], **base)
            return from_groups(values["beta"], values["kappa"], values.get("alpha_exp", 1.0), **base)
        for key in ("G", "M", "R", "b", "v0"):
            if key not in values:
                raise ConfigError(f"{key}: missing required key")
        return PhysicalParams(G=G, M=M, R=R, b=values["b"], v0=values["v0"], R1=values.get("R1"))
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        if key not in KEYS:
            raise ConfigError(f"{key}: unknown key (line {lineno})")
        if key in values:
            raise ConfigError(f"{key}: given twice (line {lineno})")
        values[key] = KEYS[key](key, val)
    params = _params_from(values)
    cfg = RunConfig(params=params, raw=values)
    for key in ("alpha_exp", "closure", "quadrature_order", "rtol", "L_max", "grid_degree", "stop", "modes",
                "mode_start", "out"):
        if key in values:
            setattr(cfg, key, values[key])
    if not 0 < cfg.rtol < 1:
        raise ConfigError(f"rtol: must lie in (0, 1), got {cfg.rtol!r}")
    if cfg.L_max < 2:
        raise ConfigError(f"L_max: must be at least 2, got {cfg.L_max!r}")
    if cfg.grid_degree < 2 * cfg.L_max:
        raise ConfigError(f"grid_degree: must be at least 2 * L_max = {2 * cfg.L_max}")
    if cfg.closure != "point" and cfg.quadrature_order < 4:
        raise ConfigError("quadrature_order: must be >= 4 for ball or quadrupole closures")
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def parse_grid(text: str) -> list[tuple[float, float, float]]:
    """Sweep grid: one ``beta kappa [alpha_exp]`` triple per line (commas allowed)."""
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].replace(",", " ").strip()
        if not line:
            continue
        parts = line.split()
        if parts[0].lower() == "beta":
            continue  # header
        if len(parts) not in (2, 3):
            raise ConfigError(f"grid line {lineno}: expected 'beta kappa [alpha_exp]', got {line!r}")
        beta = _float(f"grid line {lineno} beta", parts[0])
        kappa = _float(f"grid line {lineno} kappa", parts[1])
        alpha = _float(f"grid line {lineno} alpha_exp", parts[2]) if len(parts) == 3 else 1.0
        if beta <= 0 or kappa <= 0:
            raise ConfigError(f"grid line {lineno}: beta and kappa must be positive")
        rows.append((beta, kappa, alpha))
    if not rows:
        raise ConfigError("grid: no runs listed")
    return rows
