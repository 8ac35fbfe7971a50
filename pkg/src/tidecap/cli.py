"""``tidecap`` command line: kepler, derive, simulate, report, sweep, verify-operators.

Exit status: 0 on success, 1 when a requested check fails, 2 for usage or
configuration errors, 3 for domain or numerical errors.  CSV numbers use 17
significant digits; CSV files never carry wall-clock data.  Each run also
writes ``<out>.meta.json`` with the config echo, derived groups and version.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone

import numpy as np

from . import __version__, kepler
from .config import ConfigError, RunConfig, load_config, parse_config, parse_grid
from .energy import EnergyReport, capture_ratio, eta_scaling_fit, orbital_energy, tidal_energy
from .kepler import NumericalError
from .orbit import ClosureKind, NotReached, integrate
from .params import DomainError, derive, from_groups
from .sphere import n_coeffs, operator_report
from .tidal import ModeSpectrum, duhamel_spectrum, integrate_modes

ORBIT_COLUMNS = ["t", "x1x", "x1y", "x1z", "v1x", "v1y", "v1z", "r1", "r1dot", "eta", "J", "E1"]
MODE_COLUMNS = (
    [f"h2m_{m}" for m in range(-2, 3)]
    + [f"h2m_dot_{m}" for m in range(-2, 3)]
    + ["norm_h2", "norm_h2dot", "h_bound_ratio", "hdot_bound_ratio"]
)
SIMULATE_COLUMNS = ORBIT_COLUMNS + MODE_COLUMNS
KEPLER_COLUMNS = ["p", "lambda_plus", "p_lambda_plus", "alpha", "pi_minus_alpha", "two_vplus2_rplus_over_GM"]
SWEEP_COLUMNS = ["beta", "kappa", "alpha_exp", "capture_index", "r0", "m_ratio", "slope"]

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DOMAIN = 0, 1, 2, 3

# operator checks
MULTIPLIER_TOL = 1e-10
ORACLE_TOL = 1e-8


class CheckFailed(RuntimeError):
    pass


# --- output helpers -----------------------------------------------------------

def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return "%.17g" % float(x)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row[c]) for c in columns])
    return buf.getvalue()


def write_atomic(path, text: str) -> None:
    """Write ``text`` to a temp file next to ``path``, then rename it into place."""
    path = os.path.abspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(path, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        write_atomic(path, text)


def _finite(obj):
    """Strict JSON has no inf/nan; those become null."""
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _finite(obj.tolist())
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def to_json(obj) -> str:
    return json.dumps(_finite(obj), indent=2, default=_json_default, allow_nan=False) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if hasattr(o, "as_dict"):
        return o.as_dict()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def meta_path(out) -> str:
    return f"{out}.meta.json"


def _meta(kind: str, payload: dict, timestamp: bool) -> dict:
    meta = {"tool": "tidecap", "version": __version__, "kind": kind}
    if timestamp:
        meta["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    meta.update(payload)
    return meta


# --- simulate -----------------------------------------------------------------

def compute_modes(traj, cfg: RunConfig, times=None) -> ModeSpectrum:
    if cfg.modes == "duhamel":
        return duhamel_spectrum(traj, cfg.L_max, times, start=cfg.mode_start)
    return integrate_modes(traj, cfg.L_max, times, rtol=cfg.rtol, start=cfg.mode_start)


def simulation_rows(traj, modes: ModeSpectrum) -> list[dict]:
    p = traj.params
    t = modes.t
    y = traj(t)
    x, v = y[:3], y[3:6]
    r = np.linalg.norm(x, axis=0)
    speed = np.linalg.norm(v, axis=0)
    rdot = np.einsum("ij,ij->j", x, v) / r
    J = np.linalg.norm(np.cross(x.T, v.T), axis=1)
    E1 = 0.5 * speed**2 - p.GM / (4.0 * r)
    eta = p.R / r
    nh, nhd = modes.norm(2), modes.norm(2, "hdot")
    h_ratio = nh / (p.R**2 * eta**3)
    hd_ratio = nhd / (p.R * eta**4 * speed)
    cols = {
        "t": t, "x1x": x[0], "x1y": x[1], "x1z": x[2], "v1x": v[0], "v1y": v[1], "v1z": v[2],
        "r1": r, "r1dot": rdot, "eta": eta, "J": J, "E1": E1,
        "norm_h2": nh, "norm_h2dot": nhd, "h_bound_ratio": h_ratio, "hdot_bound_ratio": hd_ratio,
    }
    for k, m in enumerate(range(-2, 3)):
        cols[f"h2m_{m}"] = modes.h2[:, k]
        cols[f"h2m_dot_{m}"] = modes.h2dot[:, k]
    return [{c: cols[c][i] for c in SIMULATE_COLUMNS} for i in range(len(t))]


def conservation_checks(traj, cfg: RunConfig, rows) -> dict:
    """Drift of E1 and |J| against the start, plus the closest-approach radius."""
    p = traj.params
    tol = max(100.0 * cfg.rtol, 1e-12)
    checks = {}
    if cfg.closure == ClosureKind.POINT.value:
        E = np.array([r["E1"] for r in rows])
        J = np.array([r["J"] for r in rows])
        r_min = min(r["r1"] for r in rows)
        scale = max(abs(E[0]), p.GM / (4.0 * r_min))
        e_drift = float(np.max(np.abs(E - E[0])) / scale)
        j_drift = float(np.max(np.abs(J - J[0])) / J[0])
        checks["energy_drift"] = {"value": e_drift, "tol": tol, "passed": e_drift <= tol}
        checks["angular_momentum_drift"] = {"value": j_drift, "tol": tol, "passed": j_drift <= tol}
        if traj.closest is not None:
            err = abs(traj.closest.r0 - p.r_plus_exact) / p.r_plus_exact
            checks["r0_vs_conic"] = {"value": err, "tol": tol, "passed": err <= tol}
    if cfg.stop_condition.kind == "closest":
        checks["closest_found"] = {"passed": traj.closest is not None}
    return checks


def simulate(cfg: RunConfig):
    """Run orbit and modes; return ``(rows, meta_payload)``."""
    traj = integrate(cfg.params, cfg.force_closure, cfg.stop_condition, rtol=cfg.rtol)
    modes = compute_modes(traj, cfg)
    rows = simulation_rows(traj, modes)
    s0 = traj.state(traj.t_start)
    closest = None
    if traj.closest is not None:
        closest = {k: getattr(traj.closest, k) for k in ("t0", "r0", "E1_at_t0", "J_at_t0", "r0_pred")}
    payload = {
        "config": cfg.echo(),
        "derived": derive(cfg.params, cfg.alpha_exp).as_dict(),
        "status": traj.status,
        "e0": orbital_energy(s0, cfg.params),
        "t_start": traj.t_start,
        "t_end": traj.t_end,
        "closest": closest,
        "checks": conservation_checks(traj, cfg, rows),
    }
    return rows, payload


# --- report -------------------------------------------------------------------

def read_run(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in SIMULATE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ConfigError(f"{path}: missing columns {missing}")
        data = {c: [] for c in SIMULATE_COLUMNS}
        for row in reader:
            for c in SIMULATE_COLUMNS:
                data[c].append(float(row[c]))
    if not data["t"]:
        raise ConfigError(f"{path}: no rows")
    with open(meta_path(path), encoding="utf-8") as fh:
        meta = json.load(fh)
    return {c: np.array(v) for c, v in data.items()}, meta


def report_from_run(data: dict, meta: dict) -> tuple[EnergyReport, dict]:
    params = parse_config(_config_text(meta["config"])).params
    h = np.zeros((len(data["t"]), n_coeffs(2)))
    hd = np.zeros_like(h)
    for k, m in enumerate(range(-2, 3)):
        h[:, 4 + k] = data[f"h2m_{m}"]
        hd[:, 4 + k] = data[f"h2m_dot_{m}"]
    modes = ModeSpectrum(2, data["t"], h, hd)
    tid = tidal_energy(modes, params)
    closest = meta.get("closest") or {}
    rep = EnergyReport(
        t=data["t"], eta=data["eta"], r1=data["r1"], E_orbital=data["E1"], E_tidal=tid.total,
        E_tidal_kinetic=tid.kinetic, E_tidal_potential=tid.potential, E_total=data["E1"] + tid.total,
        E_tidal_surrogate=tid.surrogate, e0=float(meta["e0"]), t0=closest.get("t0"), r0=closest.get("r0"),
        GM=params.GM, R=params.R,
    )
    return rep, meta


def _config_text(echo: dict) -> str:
    p = echo["params"]
    lines = [f"{k} = {p[k]!r}" for k in ("G", "M", "R", "b", "v0")]
    if p.get("R1") is not None:
        lines.append(f"R1 = {p['R1']!r}")
    for k in ("alpha_exp", "closure", "quadrature_order", "rtol", "L_max", "grid_degree", "stop", "modes", "mode_start"):
        lines.append(f"{k} = {echo[k]}")
    return "\n".join(lines)


def report_json(rep: EnergyReport) -> dict:
    series = {
        "t": rep.t, "eta": rep.eta, "r1": rep.r1, "E_orbital": rep.E_orbital, "E_tidal": rep.E_tidal,
        "E_tidal_kinetic": rep.E_tidal_kinetic, "E_tidal_potential": rep.E_tidal_potential,
        "E_total": rep.E_total, "E_tidal_surrogate": rep.E_tidal_surrogate,
        "E_orbital_implied": rep.E_orbital_implied, "m_ratio": rep.m_ratio,
    }
    out = {"e0": rep.e0, "t0": rep.t0, "r0": rep.r0, "series": series}
    out["capture_ratio"] = capture_ratio(rep)
    out["capture_ratio_surrogate"] = capture_ratio(rep, surrogate=True)
    out["E_orbital_implied_at_t0"] = float(rep.E_orbital_implied[rep.index_at(rep.t0)])
    out["eta_scaling_fit"] = eta_scaling_fit(rep).as_dict()
    return out


# --- sweep --------------------------------------------------------------------

def _sweep_one(task):
    (beta, kappa, alpha), settings, run_dir, timestamp = task
    cfg = RunConfig(params=from_groups(beta, kappa, alpha, R1=settings.get("R1")), alpha_exp=alpha)
    for k, v in settings.items():
        if k != "R1":
            setattr(cfg, k, v)
    rows, payload = simulate(cfg)
    data = {c: np.array([r[c] for r in rows]) for c in SIMULATE_COLUMNS}
    rep, _ = report_from_run(data, payload)
    if run_dir:
        name = os.path.join(run_dir, f"run_beta{beta:g}_kappa{kappa:g}_alpha{alpha:g}.csv")
        write_atomic(name, csv_text(SIMULATE_COLUMNS, rows))
        write_atomic(meta_path(name), to_json(_meta("simulate", payload, timestamp)))
    return {
        "beta": beta,
        "kappa": kappa,
        "alpha_exp": alpha,
        "capture_index": payload["derived"]["capture_index"],
        "r0": rep.r0,
        "m_ratio": capture_ratio(rep),
        "slope": eta_scaling_fit(rep).slope,
    }


def run_sweep(grid, settings: dict, jobs: int = 1, run_dir=None, timestamp: bool = False) -> list[dict]:
    tasks = [(row, settings, run_dir, timestamp) for row in grid]
    if jobs <= 1 or len(tasks) == 1:
        return [_sweep_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_sweep_one, tasks))


# --- subcommands --------------------------------------------------------------

def cmd_kepler(args) -> int:
    if args.table is not None:
        pmin, pmax, n = args.table
        if not float(n).is_integer():
            raise ConfigError(f"table: n must be an integer, got {n!r}")
        emit(args.out, csv_text(KEPLER_COLUMNS, kepler.table(pmin, pmax, int(n))))
        return EXIT_OK
    if args.p is None:
        raise ConfigError("p: give --p or --table")
    emit(args.out, to_json(kepler.summary(args.p, args.b, args.GM).as_dict()))
    return EXIT_OK


def cmd_derive(args) -> int:
    cfg = load_config(args.config)
    emit(args.out, to_json(derive(cfg.params, cfg.alpha_exp, validate_regime=args.validate_regime).as_dict()))
    return EXIT_OK


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    for key in ("closure", "rtol", "stop", "modes", "mode_start"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    if args.stop is not None:
        try:
            cfg.stop_condition
        except ValueError as exc:
            raise ConfigError(f"stop: {exc}") from None
    if args.rtol is not None and not 0 < args.rtol < 1:
        raise ConfigError(f"rtol: must lie in (0, 1), got {args.rtol!r}")
    return cfg


def cmd_simulate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = args.out or cfg.out
    rows, payload = simulate(cfg)
    emit(out, csv_text(SIMULATE_COLUMNS, rows))
    if out and out != "-":
        write_atomic(meta_path(out), to_json(_meta("simulate", payload, not args.no_timestamp)))
    failed = [k for k, c in payload["checks"].items() if not c["passed"]]
    if args.check and failed:
        raise CheckFailed(f"checks failed: {', '.join(failed)}")
    return EXIT_OK


def cmd_report(args) -> int:
    data, meta = read_run(args.run)
    rep, _ = report_from_run(data, meta)
    emit(args.out, to_json(report_json(rep)))
    return EXIT_OK


def cmd_sweep(args) -> int:
    with open(args.grid, encoding="utf-8") as fh:
        grid = parse_grid(fh.read())
    settings = {"rtol": args.rtol, "L_max": args.L_max, "modes": args.modes, "mode_start": args.mode_start,
                "R1": None}
    if args.run_dir:
        os.makedirs(args.run_dir, exist_ok=True)
    rows = run_sweep(grid, settings, args.jobs, args.run_dir, not args.no_timestamp)
    emit(args.out, csv_text(SWEEP_COLUMNS, rows))
    if args.out and args.out != "-":
        write_atomic(meta_path(args.out), to_json(_meta("sweep", {"grid": grid, "settings": settings},
                                                        not args.no_timestamp)))
    if args.check:
        m = [r["m_ratio"] for r in rows]
        if any(b <= a for a, b in zip(m, m[1:])):
            raise CheckFailed("m_ratio is not strictly increasing along the grid")
    return EXIT_OK


def operator_failures(rep: dict) -> list[str]:
    bad = [f"multiplier {k}" for k, v in rep["multipliers"].items() if not v <= MULTIPLIER_TOL]
    if not rep["round_trip"] <= MULTIPLIER_TOL and not rep["aliased"]:
        bad.append("round_trip")
    bad += [f"offsurface l={k}" for k, v in rep["offsurface_oracle"].items() if not v <= ORACLE_TOL]
    if not rep["ball_self_potential"]["relative_error"] <= MULTIPLIER_TOL:
        bad.append("ball_self_potential")
    return bad


def cmd_verify_operators(args) -> int:
    rep = operator_report(args.lmax, args.grid_degree, oracle_degree=args.oracle_degree)
    rep["failures"] = operator_failures(rep)
    rep["passed"] = not rep["failures"]
    emit(args.out, to_json(rep))
    if rep["failures"]:
        raise CheckFailed(f"operator checks failed: {', '.join(rep['failures'])}")
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------

def _jobs_default() -> int:
    raw = os.environ.get("TIDECAP_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"TIDECAP_JOBS: expected an integer, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tidecap", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"tidecap {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    k = sub.add_parser("kepler", help="point-mass hyperbola summary or p-table")
    k.add_argument("--p", type=float)
    k.add_argument("--b", type=float, default=1.0)
    k.add_argument("--GM", type=float, default=1.0)
    k.add_argument("--table", nargs=3, type=float, metavar=("PMIN", "PMAX", "N"))
    k.add_argument("--out")
    k.set_defaults(func=cmd_kepler)

    d = sub.add_parser("derive", help="print the dimensionless groups of a config")
    d.add_argument("--config", required=True)
    d.add_argument("--validate-regime", action="store_true")
    d.add_argument("--out")
    d.set_defaults(func=cmd_derive)

    s = sub.add_parser("simulate", help="integrate the orbit and the tidal modes")
    s.add_argument("--config", required=True)
    s.add_argument("--closure", choices=[c.value for c in ClosureKind])
    s.add_argument("--rtol", type=float)
    s.add_argument("--stop", help="closest | r1=<val> | t=<val>")
    s.add_argument("--modes", choices=["direct", "duhamel"])
    s.add_argument("--mode-start", dest="mode_start", choices=["rest", "adiabatic"])
    s.add_argument("--out")
    s.add_argument("--check", action="store_true", help="exit 1 if a conservation check fails")
    s.add_argument("--no-timestamp", action="store_true")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="energy report of a simulate CSV")
    r.add_argument("--run", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)

    w = sub.add_parser("sweep", help="run a (beta, kappa, alpha_exp) grid")
    w.add_argument("--grid", required=True)
    w.add_argument("--jobs", type=int, default=None, help="parallel runs (default: $TIDECAP_JOBS or 1)")
    w.add_argument("--rtol", type=float, default=1e-10)
    w.add_argument("--L-max", dest="L_max", type=int, default=4)
    w.add_argument("--modes", choices=["direct", "duhamel"], default="direct")
    w.add_argument("--mode-start", dest="mode_start", choices=["rest", "adiabatic"], default="rest")
    w.add_argument("--run-dir", help="also write each run's CSV and sidecar here")
    w.add_argument("--out")
    w.add_argument("--check", action="store_true", help="exit 1 unless m_ratio increases along the grid")
    w.add_argument("--no-timestamp", action="store_true")
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify-operators", help="multiplier and quadrature-oracle report")
    v.add_argument("--lmax", type=int, default=8)
    v.add_argument("--grid-degree", type=int, default=32)
    v.add_argument("--oracle-degree", type=int, default=64)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify_operators)
    return ap


def _module_of(exc) -> str:
    tb = exc.__traceback__
    while tb is not None and tb.tb_next is not None:
        tb = tb.tb_next
    mod = tb.tb_frame.f_globals.get("__name__", "") if tb is not None else ""
    if not mod.startswith("tidecap"):
        mod = type(exc).__module__  # e.g. re-raised from a worker process
    return mod if mod.startswith("tidecap") else "tidecap"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "jobs", 0) is None:
            args.jobs = _jobs_default()
        return args.func(args)
    except CheckFailed as exc:
        print(f"tidecap {args.command}: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (ConfigError, OSError) as exc:
        print(f"tidecap {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, NumericalError, NotReached, ValueError, ArithmeticError) as exc:
        print(f"tidecap {args.command}: {_module_of(exc)}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
