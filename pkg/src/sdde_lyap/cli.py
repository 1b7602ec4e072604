"""Batch front-end: ``sdde-lyap <command> <scenario.json> [options]``.

Exit codes: 0 success, 1 selftest checks failed, 2 invalid configuration,
3 numerical failure (a diagnostic ``error.json`` is still written).
"""

from __future__ import annotations

import argparse
import copy
import datetime
import json
import math
import os
import sys
from importlib import resources

import numpy as np

from .analysis import basin_probe, cover_detect, stability_probe
from .driving import Phase
from .errors import BlowUpError, ConfigError, ExprSyntaxError, MalformedInputError, NumericalFailure, SddeError
from .expr import compile_scalar, diff, parse
from . import __version__
from .lyapunov import estimate_exponent
from .models import get_preset
from .sdde import StepControl, integrate, model_from_dsl, omega_limit_sample
from .segment import Segment, combine

SCHEMA_VERSION = 1
COMMANDS = ("simulate", "lyapunov", "certify", "cover", "basin", "selftest")

DEFAULTS = {
    "seed": 0,
    "theta0": None,
    "initial": {"kind": "constant", "value": 1.0},
    "step": {"h": None, "fp_tol": 1e-12, "fp_maxiter": 25, "max_halvings": 8,
             "blowup_bound": 1e8},
    "simulate": {"T": 20.0, "stride": 1},
    "omega": {"T_transient": 10.0, "T_sample": 20.0, "stride": 1.0},
    "lyapunov": {"T": 50.0, "n_dirs": 32, "n_points": 4, "window": None, "with_shift": False},
    "certify": {"T": 10.0, "delta": None, "n_pert": 4, "n_points": 2, "lambda_T": 20.0},
    "cover": {"initial": [{"kind": "constant", "value": 1.0}], "T_transient": 30.0,
              "T_sample": 10.0, "stride": 1.0, "probe_time": None, "return_tol": 1e-9,
              "cluster_tol": 1e-3},
    "basin": {"probes": [{"kind": "constant", "value": 2.0}], "T": 20.0, "eps_match": 1e-3,
              "search_horizon": 0.0},
}


# ---------------------------------------------------------------------------
# configuration

def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_override(cfg: dict, item: str):
    if "=" not in item:
        raise ConfigError(item, "override must look like key=value")
    key, raw = item.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(key, f"{p!r} is not a section")
        node = nxt
    node[parts[-1]] = val


def resolve_config_path(path: str) -> str:
    if os.path.exists(path):
        return path
    name = os.path.basename(path)
    data = resources.files("sdde_lyap") / "presets" / name
    if data.is_file():
        return str(data)
    raise ConfigError("config", f"no such scenario file: {path}")


def load_config(path: str, overrides=(), seed=None) -> dict:
    try:
        with open(resolve_config_path(path)) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be an object")
    cfg = _merge(DEFAULTS, raw)
    for item in overrides:
        apply_override(cfg, item)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def _num(cfg, key, positive=True, allow_none=False):
    node = cfg
    for p in key.split("."):
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(key, "missing")
        node = node[p]
    if node is None and allow_none:
        return None
    if isinstance(node, bool) or not isinstance(node, (int, float)) or not math.isfinite(node):
        raise ConfigError(key, f"expected a number, got {node!r}")
    if positive and not node > 0:
        raise ConfigError(key, f"must be positive, got {node!r}")
    return float(node)


def build_model(cfg):
    m = cfg.get("model")
    if not isinstance(m, dict):
        raise ConfigError("model", "missing model section")
    try:
        if "preset" in m:
            return get_preset(str(m["preset"]), m.get("params"), m.get("freq"))
        for k in ("F", "tau", "freq"):
            if k not in m:
                raise ConfigError(f"model.{k}", "missing")
        r = _num(cfg, "model.r") if "r" in m else 1.0
        return model_from_dsl(m["F"], m["tau"], r, m["freq"], m.get("params"),
                              name=m.get("name", "custom"), minimal=bool(m.get("minimal")))
    except ExprSyntaxError as exc:
        raise ConfigError("model", str(exc)) from None
    except MalformedInputError as exc:
        raise ConfigError("model", str(exc)) from None


def build_segment(spec, model, key):
    r, n = model.r, model.dim
    if isinstance(spec, (int, float)):
        spec = {"kind": "constant", "value": spec}
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(key, "segment spec needs a 'kind'")
    kind = spec["kind"]
    try:
        if kind == "constant":
            val = np.atleast_1d(np.asarray(spec.get("value", 0.0), dtype=float))
            if val.size == 1 and n > 1:
                val = np.full(n, val[0])
            if val.size != n:
                raise ConfigError(f"{key}.value", f"expected {n} components")
            return Segment.constant(r, val, int(spec.get("n_intervals", 1)))
        if kind == "expr":
            srcs = spec.get("expr")
            if isinstance(srcs, str):
                srcs = [srcs]
            if not isinstance(srcs, list) or len(srcs) != n:
                raise ConfigError(f"{key}.expr", f"expected {n} expressions in s")
            es = [parse(s, params=spec.get("params", {}), allow_s=True) for s in srcs]
            f = compile_scalar(es, "s", spec.get("params"))
            df = compile_scalar([diff(e, "s") for e in es], "s", spec.get("params"))
            N = int(spec.get("n_intervals", 64))
            mesh = np.linspace(-r, 0.0, N + 1)
            vals = np.array([f(s) for s in mesh])
            ders = np.array([df(s) for s in mesh])
            return Segment(r, mesh, vals, ders)
        if kind == "nodes":
            d = {"r": r, "mesh": spec["mesh"], "values": spec["values"],
                 "derivs": spec.get("derivs")}
            if d["derivs"] is None:
                return Segment(r, spec["mesh"], spec["values"])
            return Segment.from_dict(d)
    except ConfigError:
        raise
    except (SddeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(key, str(exc)) from None
    raise ConfigError(f"{key}.kind", f"unknown segment kind {kind!r}")


def build_phase(cfg, model):
    th = cfg.get("theta0")
    if th is None:
        th = [0.0] * model.driving.dim
    th = np.atleast_1d(np.asarray(th, dtype=float))
    if th.size != model.driving.dim:
        raise ConfigError("theta0", f"expected {model.driving.dim} coordinates")
    return Phase(th)


def build_ctrl(cfg):
    s = cfg["step"]
    try:
        ctrl = StepControl(h=s.get("h"), fp_tol=float(s["fp_tol"]),
                           fp_maxiter=int(s["fp_maxiter"]), max_halvings=int(s["max_halvings"]),
                           blowup_bound=float(s["blowup_bound"]))
        return ctrl
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("step", str(exc)) from None


def _check_seed(cfg):
    seed = cfg.get("seed")
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed", f"an integer seed is required, got {seed!r}")
    return seed


def _setup(cfg):
    seed = _check_seed(cfg)
    model = build_model(cfg)
    ctrl = build_ctrl(cfg)
    try:
        ctrl.step(model.r)
    except MalformedInputError as exc:
        raise ConfigError("step.h", str(exc)) from None
    theta0 = build_phase(cfg, model)
    x0 = build_segment(cfg["initial"], model, "initial")
    return model, ctrl, theta0, x0, seed


def _base_points(cfg, model, ctrl, theta0, x0, n_points):
    Tt = _num(cfg, "omega.T_transient", positive=False)
    Ts = _num(cfg, "omega.T_sample")
    st = _num(cfg, "omega.stride")
    pts = omega_limit_sample(model, theta0, x0, Tt, Ts, st, ctrl)
    n = max(1, min(int(n_points), len(pts)))
    idx = np.linspace(0, len(pts) - 1, n).round().astype(int)
    return [pts[i] for i in idx]


# ---------------------------------------------------------------------------
# output

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def write_json(path, command, cfg, result, header=None):
    """Write the report envelope. Everything run-specific (timestamp, wall
    times) lives in ``header``; the rest is reproducible."""
    head = {"timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "tool": "sdde-lyap", "version": __version__, "command": command}
    head.update(header or {})
    doc = {
        "schema_version": SCHEMA_VERSION,
        "header": _clean(head),
        "config": _clean(cfg),
        "result": _clean(result),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(cfg, out, threads):
    model, ctrl, theta0, x0, _ = _setup(cfg)
    T = _num(cfg, "simulate.T")
    stride = int(cfg["simulate"].get("stride", 1))
    tr = integrate(model, theta0, x0, T, ctrl)
    tr.to_csv(os.path.join(out, "trajectory.csv"), stride=stride)
    res = {"horizon": tr.horizon, "blown_up": tr.blown_up, "y_end": tr.values[-1],
           "max_residual": float(tr.residuals().max()) if tr.times.size > 1 else 0.0}
    write_json(os.path.join(out, "simulate.json"), "simulate", cfg, res)
    if tr.blown_up:
        raise BlowUpError(f"solution left the blow-up bound at t={tr.horizon}",
                          t_blowup=tr.horizon)
    return res


def cmd_lyapunov(cfg, out, threads):
    model, ctrl, theta0, x0, seed = _setup(cfg)
    ly = cfg["lyapunov"]
    T = _num(cfg, "lyapunov.T")
    window = _num(cfg, "lyapunov.window", allow_none=True)
    w = model.r if window is None else window
    if w < model.r or abs(T / w - round(T / w)) > 1e-9 or round(T / w) < 2:
        raise ConfigError("lyapunov.T", f"must be a multiple (>= 2) of the window {w} "
                          f"(window >= r = {model.r})")
    pts = _base_points(cfg, model, ctrl, theta0, x0, ly.get("n_points", 4))
    n_dirs = int(ly.get("n_dirs", 32))
    rc = estimate_exponent(model, pts, T, n_dirs, window, "C", seed, ctrl, workers=threads)
    rw = estimate_exponent(model, pts, T, n_dirs, window, "W", seed, ctrl,
                           with_shift=bool(ly.get("with_shift")), workers=threads)
    rc.write_windows_csv(os.path.join(out, "windows.csv"))
    res = {"lambda_C": rc.lambda_C, "lambda_W": rw.lambda_W,
           "norm_gap": abs(rc.lambda_C - rw.lambda_W),
           "report_C": rc.to_dict(), "report_W": rw.to_dict()}
    write_json(os.path.join(out, "lyapunov.json"), "lyapunov", cfg, res)
    return res


def cmd_certify(cfg, out, threads):
    model, ctrl, theta0, x0, seed = _setup(cfg)
    c = cfg["certify"]
    pts = _base_points(cfg, model, ctrl, theta0, x0, c.get("n_points", 2))
    K = max(2, int(round(_num(cfg, "certify.lambda_T") / model.r)))
    lam = estimate_exponent(model, pts, K * model.r, 8, None, "C", seed, ctrl,
                            workers=threads).lambda_C
    delta = _num(cfg, "certify.delta", allow_none=True)
    cert = stability_probe(model, pts, delta=delta, T=_num(cfg, "certify.T"), lambda_hat=lam,
                           n_pert=int(c.get("n_pert", 4)), seed=seed, ctrl=ctrl)
    res = cert.to_dict()
    write_json(os.path.join(out, "certificate.json"), "certify", cfg, res)
    return res


def cmd_cover(cfg, out, threads):
    model, ctrl, theta0, x0, seed = _setup(cfg)
    c = cfg["cover"]
    Tt = _num(cfg, "cover.T_transient", positive=False)
    Ts = _num(cfg, "cover.T_sample")
    st = _num(cfg, "cover.stride")
    inits = c.get("initial")
    if not isinstance(inits, list) or not inits:
        raise ConfigError("cover.initial", "expected a non-empty list of segment specs")
    runs = [omega_limit_sample(model, theta0, build_segment(s, model, f"cover.initial[{i}]"),
                               Tt, Ts, st, ctrl) for i, s in enumerate(inits)]
    pt = c.get("probe_time")
    pt = Tt + 0.5 * Ts if pt is None else float(pt)
    probe = model.driving.advance(theta0, pt)
    rep = cover_detect(model, probe, runs, _num(cfg, "cover.return_tol"),
                       _num(cfg, "cover.cluster_tol"))
    res = rep.to_dict()
    res["probe_phase"] = probe.tolist()
    write_json(os.path.join(out, "cover.json"), "cover", cfg, res)
    return res


def cmd_basin(cfg, out, threads):
    model, ctrl, theta0, x0, seed = _setup(cfg)
    b = cfg["basin"]
    pts = _base_points(cfg, model, ctrl, theta0, x0, 8)
    specs = b.get("probes")
    if not isinstance(specs, list) or not specs:
        raise ConfigError("basin.probes", "expected a non-empty list of segment specs")
    probes = [(pts[0][0], build_segment(s, model, f"basin.probes[{i}]"))
              for i, s in enumerate(specs)]
    results = basin_probe(model, pts, probes, _num(cfg, "basin.T"), _num(cfg, "basin.eps_match"),
                          search_horizon=_num(cfg, "basin.search_horizon", positive=False),
                          ctrl=ctrl)
    with open(os.path.join(out, "basin.csv"), "w") as fh:
        fh.write("probe_id,attracted,t_entry,rate,final_distance,blown_up\n")
        for i, r in enumerate(results):
            fh.write(f"{i},{int(r.attracted)},{'' if r.t_entry is None else repr(r.t_entry)},"
                     f"{'' if r.rate is None else repr(r.rate)},{r.final_distance!r},"
                     f"{int(r.blown_up)}\n")
    res = {"probes": [r.to_dict() for r in results]}
    write_json(os.path.join(out, "basin.json"), "basin", cfg, res)
    return res


def cmd_selftest(cfg, out, threads):
    from .selftest import run_selftest
    seed = _check_seed(cfg)
    res, timings = run_selftest(out, seed=seed, threads=threads)
    write_json(os.path.join(out, "selftest.json"), "selftest", {"seed": seed}, res,
               header={"seconds": timings})
    return res


HANDLERS = {"simulate": cmd_simulate, "lyapunov": cmd_lyapunov, "certify": cmd_certify,
            "cover": cmd_cover, "basin": cmd_basin, "selftest": cmd_selftest}


def make_parser():
    p = argparse.ArgumentParser(prog="sdde-lyap", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("config", nargs="?", help="scenario JSON (a bare preset file name such as "
                   "presets/m0.json resolves to the bundled scenarios)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config entry (dotted key, JSON value)")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    os.makedirs(args.out_dir, exist_ok=True)
    cfg = {}
    try:
        if args.command == "selftest":
            cfg = {"seed": 0 if args.seed is None else args.seed}
            if args.config:
                cfg = load_config(args.config, args.overrides, args.seed)
        else:
            if not args.config:
                raise ConfigError("config", "a scenario file is required")
            cfg = load_config(args.config, args.overrides, args.seed)
        if args.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        res = HANDLERS[args.command](cfg, args.out_dir, args.threads)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        write_json(os.path.join(args.out_dir, "error.json"), args.command, cfg,
                   {"error": type(exc).__name__, "message": str(exc),
                    "t_blowup": getattr(exc, "t_blowup", None)})
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 3
    except SddeError as exc:
        # inputs that parse but are rejected by the library (bad horizons,
        # incompatible base points, delays out of range, ...)
        write_json(os.path.join(args.out_dir, "error.json"), args.command, cfg,
                   {"error": type(exc).__name__, "message": str(exc)})
        print(f"error: invalid input for {args.command}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 2
    if args.command == "selftest" and not res.get("all_passed", False):
        return 1
    print(json.dumps(_clean(_summary(args.command, res)), sort_keys=True))
    return 0


def _summary(command, res):
    keys = {"simulate": ("horizon", "blown_up"), "lyapunov": ("lambda_C", "lambda_W", "norm_gap"),
            "certify": ("verdict", "lambda_hat", "beta_fit", "beta_fit_W"),
            "cover": ("k", "diameters"), "basin": ("probes",), "selftest": ("all_passed",)}
    return {k: res[k] for k in keys[command] if k in res}


if __name__ == "__main__":
    sys.exit(main())
