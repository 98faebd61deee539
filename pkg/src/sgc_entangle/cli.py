"""Command-line entry point.

Subcommands: report, scan, modes, dynamics, figures.  Settings resolve as
command-line flag, then config-file key, then built-in default.  Exit codes:
0 success, 1 invalid input, 2 numerical or convergence failure.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import _csv
from .dynamics import IntegratorConfig, integrate_to_steady, oracle_grid, write_convergence_csv
from .errors import ConfigError, ParameterError, SGCError
from .measures import (
    REPORT_BACKENDS,
    _phase_fix,
    _truncate,
    entanglement_report,
    kernel_axis,
    kernel_eigen,
    kernel_photon_modes,
    schmidt_number_from,
)
from .model import ModelParams, coherence_from_r_theta
from .scan import (
    KR_HEADER,
    MEASURES,
    Axis,
    ScanSpec,
    fwhm_of_slice,
    kr_relation_scan,
    run_scan,
    schmidt_mode_report,
    write_kr_csv,
)
from .wavefunction import SteadyState, make_grid, sample

DEFAULTS = {
    "epsilon": 1.0,
    "gamma_ratio": 1.0,
    "r": 0.0,
    "theta": math.pi,
    "dk0": None,
    "backend": "auto",
    "format": None,
    "out": None,
    "grid.q_points": None,
    "grid.k_points": None,
    "grid.q_span_factor": 4.0,
    "grid.k_span": 40.0,
    "grid.fine_window_points": None,
    "scan.measures": "R",
    "scan.workers": None,
    "dynamics.dt": 0.01,
    "dynamics.t_final": None,
    "dynamics.l2_tol": 1e-3,
    "modes.n": 3,
    "modes.oversample": 2.5,
}

FLOAT_KEYS = {"delta", "eta", "epsilon", "gamma_ratio", "r", "grid.q_span_factor", "grid.k_span", "dynamics.dt",
              "dynamics.t_final", "dynamics.l2_tol", "modes.oversample"}
INT_KEYS = {"grid.q_points", "grid.k_points", "grid.fine_window_points", "scan.workers", "modes.n"}
AXIS_KEYS = {"scan.axis1", "scan.axis2"}
KNOWN_KEYS = set(DEFAULTS) | {"delta", "eta"} | AXIS_KEYS

_PI_TOKEN = re.compile(r"^([+-]?[0-9.eE+-]*?)\*?pi$")


def parse_angle(text: str) -> float:
    """Radians from a decimal, the token ``pi``, or a multiple such as ``0.5pi``."""
    s = "".join(str(text).lower().split())
    m = _PI_TOKEN.match(s)
    try:
        if m is None:
            return float(s)
        factor = {"": 1.0, "+": 1.0, "-": -1.0}.get(m.group(1))
        return (float(m.group(1)) if factor is None else factor) * math.pi
    except ValueError:
        raise ValueError(f"not an angle: {text!r} (use radians, 'pi' or e.g. '0.5pi')") from None


def parse_axis(text: str) -> Axis:
    """``name start stop count``, whitespace or colon separated; angles accept 'pi' tokens."""
    parts = text.replace(":", " ").split()
    if len(parts) != 4:
        raise ValueError(f"axis needs 'name start stop count', got {text!r}")
    name, start, stop, count = parts
    conv = parse_angle if name == "theta" else float
    return Axis(name, conv(start), conv(stop), int(count))


def _convert(key: str, value):
    if value is None:
        return None
    if key == "theta":
        return parse_angle(value)
    if key == "dk0":
        return None if str(value).strip().lower() == "auto" else float(value)
    if key in FLOAT_KEYS:
        return float(value)
    if key in INT_KEYS:
        return int(value)
    if key in AXIS_KEYS:
        return parse_axis(value) if isinstance(value, str) else value
    return value


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment; dotted keys name grid/scan/dynamics settings."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    out = {}
    for n, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=n)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}", line=n)
        if not value:
            raise ConfigError(f"empty value for {key!r}", line=n)
        try:
            out[key] = _convert(key, value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", line=n) from exc
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


FLAG_TO_KEY = {
    "delta": "delta",
    "eta": "eta",
    "epsilon": "epsilon",
    "gamma_ratio": "gamma_ratio",
    "r": "r",
    "theta": "theta",
    "dk0": "dk0",
    "backend": "backend",
    "format": "format",
    "out": "out",
    "q_points": "grid.q_points",
    "k_points": "grid.k_points",
    "q_span_factor": "grid.q_span_factor",
    "k_span": "grid.k_span",
    "fine_window_points": "grid.fine_window_points",
    "measures": "scan.measures",
    "workers": "scan.workers",
    "dt": "dynamics.dt",
    "t_final": "dynamics.t_final",
    "l2_tol": "dynamics.l2_tol",
    "n_modes": "modes.n",
    "oversample": "modes.oversample",
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    s = argparse.SUPPRESS
    common.add_argument("--config", default=s, help="flat key=value settings file")
    common.add_argument("--delta", type=float, default=s, help="level splitting in units of gamma_a")
    common.add_argument("--eta", type=float, default=s, help="recoil/linewidth ratio")
    common.add_argument("--epsilon", type=float, default=s, help="dipole alignment factor (default 1)")
    common.add_argument("--gamma-ratio", type=float, default=s, help="gamma_b/gamma_a (default 1)")
    common.add_argument("--r", type=float, default=s, help="log amplitude ratio of the initial coherence (default 0)")
    common.add_argument("--theta", type=str, default=s, help="relative phase: radians, 'pi' or '0.5pi' (default pi)")
    common.add_argument("--q-points", type=int, default=s)
    common.add_argument("--k-points", type=int, default=s)
    common.add_argument("--q-span-factor", type=float, default=s)
    common.add_argument("--k-span", type=float, default=s)
    common.add_argument("--fine-window-points", type=int, default=s)
    common.add_argument("--dk0", type=str, default=s, help="photon detection point, or 'auto' for the marginal peak")
    common.add_argument("--backend", choices=REPORT_BACKENDS, default=s)
    common.add_argument("--out", type=str, default=s, help="output file (report/scan/dynamics) or directory")
    common.add_argument("--format", choices=("csv", "json"), default=s)

    p = _Parser(prog="sgc-entangle", description="Atom-photon momentum entanglement with upper-level coherence.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("report", parents=[common], help="R, K and PE at one parameter point")
    sc = sub.add_parser("scan", parents=[common], help="sweep one or two of r, theta, eta, delta")
    sc.add_argument("--axis", action="append", default=s, help="'name start stop count', e.g. 'theta 0 2pi 61'")
    sc.add_argument("--measures", type=str, default=s, help="comma list from R,K,PE (default R)")
    sc.add_argument("--workers", type=int, default=s)
    md = sub.add_parser("modes", parents=[common], help="export Schmidt modes")
    md.add_argument("--n-modes", type=int, default=s)
    md.add_argument("--oversample", type=float, default=s)
    md.add_argument("--compare", type=str, default=s, help="config file of a second case to compare against")
    dy = sub.add_parser("dynamics", parents=[common], help="time-domain check of the steady state")
    dy.add_argument("--dt", type=float, default=s)
    dy.add_argument("--t-final", type=float, default=s)
    dy.add_argument("--l2-tol", type=float, default=s)
    sub.add_parser("figures", parents=[common], help="regenerate every figure dataset into --out")
    return p


def resolve_settings(ns: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win)."""
    cfg = dict(DEFAULTS)
    if "config" in ns:
        cfg.update(read_config(ns.config))
    flags = vars(ns)
    for flag, key in FLAG_TO_KEY.items():
        if flag in flags:
            try:
                cfg[key] = _convert(key, flags[flag])
            except ParameterError:
                raise
            except ValueError as exc:
                raise ParameterError(key, str(exc)) from exc
    if "axis" in flags:
        axes = flags["axis"]
        if len(axes) > 2:
            raise ParameterError("axis", "at most two --axis flags")
        for i in (1, 2):
            cfg.pop(f"scan.axis{i}", None)
        for i, text in enumerate(axes, start=1):
            try:
                cfg[f"scan.axis{i}"] = parse_axis(text)
            except ParameterError:
                raise
            except ValueError as exc:
                raise ParameterError("axis", str(exc)) from exc
    return cfg


def model_from(cfg: dict) -> ModelParams:
    for key in ("delta", "eta"):
        if cfg.get(key) is None:
            raise ParameterError(key, "required (flag --{0} or config key {0})".format(key))
    return ModelParams(delta=cfg["delta"], eta=cfg["eta"], epsilon=cfg["epsilon"], gamma_ratio=cfg["gamma_ratio"])


def grid_options(cfg: dict) -> dict:
    opts = {
        "q_points": cfg["grid.q_points"],
        "k_points": cfg["grid.k_points"],
        "q_span_factor": cfg["grid.q_span_factor"],
        "k_span": cfg["grid.k_span"],
        "fine_window_points": cfg["grid.fine_window_points"],
    }
    return {k: v for k, v in opts.items() if v is not None}


def _write_json(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=False, default=_json_default) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _flatten(d: dict, prefix: str = ""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        else:
            yield key, v


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, (list, tuple)):
        return json.dumps(list(v))
    return v


def cmd_report(cfg: dict) -> int:
    m = model_from(cfg)
    state = SteadyState.build(m, coherence_from_r_theta(cfg["r"], cfg["theta"]))
    q_points = cfg["grid.q_points"] if cfg["backend"] == "kernel" else None
    rep = entanglement_report(state, backend=cfg["backend"], dk0=cfg["dk0"], q_points=q_points,
                              grid_options=grid_options(cfg))
    if (cfg["format"] or "json") == "json":
        _write_json(rep.as_dict(), cfg["out"])
    else:
        rows = [(k, _csv_value(v)) for k, v in _flatten(rep.as_dict())]
        _csv.write_rows(cfg["out"] or sys.stdout, ["field", "value"], rows)
    return 0


def scan_spec_from(cfg: dict) -> ScanSpec:
    axes = [cfg[k] for k in ("scan.axis1", "scan.axis2") if cfg.get(k) is not None]
    if not axes:
        raise ParameterError("axis", "a scan needs --axis or config key scan.axis1")
    measures = tuple(s.strip() for s in str(cfg["scan.measures"]).split(",") if s.strip())
    return ScanSpec(fixed=model_from(cfg), axes=tuple(axes), measures=measures, r=cfg["r"], theta=cfg["theta"],
                    dk0=cfg["dk0"], backend=cfg["backend"])


def cmd_scan(cfg: dict) -> int:
    spec = scan_spec_from(cfg)
    res = run_scan(spec, workers=cfg["scan.workers"])
    if (cfg["format"] or "csv") == "json":
        _write_json({"header": res.header(), "rows": [list(r) for r in res.rows()]}, cfg["out"])
    else:
        res.write_csv(cfg["out"] or sys.stdout)
    if res.n_failed == len(res.status):
        print(f"error: all {res.n_failed} scan points failed; first: {res.status[0]}", file=sys.stderr)
        return 2
    if res.n_failed:
        print(f"warning: {res.n_failed} of {len(res.status)} scan points failed", file=sys.stderr)
    return 0


def cmd_modes(cfg: dict, compare: Optional[str]) -> int:
    out = Path(cfg["out"] or ".")
    n = cfg["modes.n"]
    if n < 0:
        raise ParameterError("modes.n", "must be >= 0")
    m = model_from(cfg)
    case_a = (m, coherence_from_r_theta(cfg["r"], cfg["theta"]))
    if compare is not None:
        other = dict(DEFAULTS)
        other.update(read_config(compare))
        case_b = (model_from(other), coherence_from_r_theta(other["r"], other["theta"]))
        cmp = schmidt_mode_report(case_a, case_b, n_modes=n, oversample=cfg["modes.oversample"])
        cmp.write_csvs(out / "modes_a.csv", out / "modes_b.csv")
        _write_json(cmp.summary(), out / "modes_summary.json")
        return 0
    state = SteadyState.build(*case_a)
    q, wq = kernel_axis(state, oversample=cfg["modes.oversample"], points=cfg["grid.q_points"])
    lam, psi, _ = kernel_eigen(state, q, wq, n_vectors=max(n, 1))
    retained, discarded = _truncate(lam)
    lam = lam[:retained]
    _csv.write_rows(out / "spectrum.csv", ["mode_index", "lambda"], ((i + 1, v) for i, v in enumerate(lam)),
                    comments=[f"K={schmidt_number_from(lam)!r} discarded_mass={discarded!r}"])
    if n == 0:
        return 0
    if n > retained:
        print(f"warning: {n} modes requested, only {retained} retained; clipping", file=sys.stderr)
        n = retained
    psi = psi[:n]
    rot = _phase_fix(psi)
    psi = psi * rot[:, None]
    k = make_grid(state, **grid_options(cfg)).k_nodes
    phi = kernel_photon_modes(state, psi, lam, q, wq, k)

    def rows(modes, nodes):
        for i in range(n):
            for x, v in zip(nodes, modes[i]):
                yield (i + 1, lam[i], x, v.real, v.imag)

    _csv.write_rows(out / "modes_atom.csv", ["mode_index", "lambda", "node", "re_psi", "im_psi"], rows(psi, q))
    _csv.write_rows(out / "modes_photon.csv", ["mode_index", "lambda", "node", "re_phi", "im_phi"], rows(phi, k))
    return 0


def cmd_dynamics(cfg: dict) -> int:
    m = model_from(cfg)
    c = coherence_from_r_theta(cfg["r"], cfg["theta"])
    icfg = IntegratorConfig(dt=cfg["dynamics.dt"], t_final=cfg["dynamics.t_final"])
    icfg.validate_for(m)
    grid = oracle_grid(m, q_points=cfg["grid.q_points"] or 64, k_points=cfg["grid.k_points"] or 256)
    analytic = sample(SteadyState.build(m, c), grid)
    run = integrate_to_steady(m, c, grid, icfg, analytic=analytic)
    write_convergence_csv(run, cfg["out"] or sys.stdout)
    final = run.checkpoints[-1][2]
    if not final < cfg["dynamics.l2_tol"]:
        print(f"error: final L2 distance {final:.3g} exceeds {cfg['dynamics.l2_tol']:g}", file=sys.stderr)
        return 2
    return 0


# -- figure datasets ------------------------------------------------------------

FIG3_ETAS = (0.05, 0.1, 0.2)
FIG3_EXTRA_DELTAS = (0.005, 0.01, 0.02, 0.03)
FIG4_PANELS = (
    ("a", 0.2, 0.04, "r", math.pi),
    ("b", 0.2, 0.04, "theta", 0.0),
    ("c", 0.5, 0.08, "r", 0.0),
)
FIG5_ETAS = (0.1, 0.2, 0.3, 0.5, 0.7, 1.0)
FIG5_DELTAS = (0.02, 0.03, 0.04, 0.06, 0.08)


def _fig2(path):
    spec = ScanSpec(fixed=ModelParams(delta=0.02, eta=0.1),
                    axes=(Axis("r", -3.0, 3.0, 61), Axis("theta", 0.0, 2 * math.pi, 61)), measures=("R",))
    res = run_scan(spec, workers=1)
    res.write_csv(path)
    return {"delta": 0.02, "eta": 0.1, "r": [-3.0, 3.0, 61], "theta": [0.0, 2 * math.pi, 61]}, len(res.status)


def _fig3(path):
    rows = []
    cases = [(eta, round(0.1 * eta, 12)) for eta in FIG3_ETAS]
    cases += [(eta, d) for eta in FIG3_ETAS for d in FIG3_EXTRA_DELTAS
              if d * d / eta <= 0.01 and (eta, d) not in cases]
    for eta, delta in cases:
        m = ModelParams(delta=delta, eta=eta)
        for axis in ("theta", "r"):
            try:
                fit = fwhm_of_slice(m, axis)
                rows.append((eta, delta, axis, fit.fwhm, fit.half_width, fit.center, fit.peak, fit.residual,
                             2 * delta / eta, "ok"))
            except SGCError as exc:
                rows.append((eta, delta, axis, *[math.nan] * 5, 2 * delta / eta, f"failed:{exc}"))
    _csv.write_rows(path, ["eta", "delta", "axis", "fwhm", "half_width", "center", "peak", "residual",
                           "two_delta_over_eta", "status"], rows)
    return {"cases": [list(c) for c in cases], "slice_points": 401}, len(rows)


def _fig4(path):
    rows = []
    for panel, eta, delta, axis, fixed in FIG4_PANELS:
        ax = Axis(axis, -2.0, 2.0, 41) if axis == "r" else Axis(axis, 0.0, 2 * math.pi, 41)
        spec = ScanSpec(fixed=ModelParams(delta=delta, eta=eta), axes=(ax,), measures=MEASURES,
                        r=fixed if axis == "theta" else 0.0, theta=fixed if axis == "r" else math.pi)
        res = run_scan(spec, workers=1)
        for i, point in enumerate(spec.points()):
            r = point.get("r", spec.r)
            th = point.get("theta", spec.theta)
            R, K, PE = (res.values[k][i] for k in MEASURES)
            rows.append((panel, eta, delta, r, th, R, K, PE, R / 2.2, res.status[i]))
    _csv.write_rows(path, ["panel", "eta", "delta", "r", "theta", "R", "K", "PE", "R_over_2p2", "status"], rows)
    return {"panels": [list(p) for p in FIG4_PANELS], "points_per_panel": 41}, len(rows)


def _fig5(path):
    rows = kr_relation_scan(FIG5_ETAS, FIG5_DELTAS)
    write_kr_csv(rows, path)
    return {"eta": list(FIG5_ETAS), "delta": list(FIG5_DELTAS), "columns": KR_HEADER}, len(rows)


def _fig6(path_a, path_b):
    a = (ModelParams(delta=0.1, eta=0.94), coherence_from_r_theta(0.0, math.pi))
    b = (ModelParams(delta=0.1, eta=1.0), coherence_from_r_theta(-0.4, math.pi))
    cmp = schmidt_mode_report(a, b, n_modes=3)
    cmp.write_csvs(path_a, path_b)
    return {"case_a": [0.1, 0.94, 0.0, math.pi], "case_b": [0.1, 1.0, -0.4, math.pi], "summary": cmp.summary()}, \
        3 * cmp.q.size


def cmd_figures(cfg: dict) -> int:
    out = Path(cfg["out"] or "figures")
    out.mkdir(parents=True, exist_ok=True)
    jobs = [
        ("fig2_surface", ["fig2_surface.csv"], _fig2),
        ("fig3_fwhm", ["fig3_fwhm.csv"], _fig3),
        ("fig4_slices", ["fig4_slices.csv"], _fig4),
        ("fig5_kr", ["fig5_kr.csv"], _fig5),
        ("fig6_modes", ["fig6_modes_a.csv", "fig6_modes_b.csv"], _fig6),
    ]
    manifest = {"datasets": []}
    for name, files, fn in jobs:
        t0 = time.perf_counter()
        params, n_rows = fn(*[out / f for f in files])
        manifest["datasets"].append({
            "name": name,
            "files": files,
            "parameters": params,
            "rows": n_rows,
            "runtime_s": round(time.perf_counter() - t0, 3),
        })
    _write_json(manifest, out / "manifest.json")
    return 0


def main(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        cfg = resolve_settings(ns)
        if ns.command == "report":
            return cmd_report(cfg)
        if ns.command == "scan":
            return cmd_scan(cfg)
        if ns.command == "modes":
            return cmd_modes(cfg, getattr(ns, "compare", None))
        if ns.command == "dynamics":
            return cmd_dynamics(cfg)
        return cmd_figures(cfg)
    except SGCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
