"""Config-driven entry point for all experiments.

A run is described by one TOML file::

    [run]
    experiment = "verify-lemmas"   # or build-weight, carleman-test, ...
    output = "out/verify"          # relative to the config file
    seed = 0
    workers = 1

    [physics]
    E_min = 1.0
    E_max = 2.0
    R0 = 4.0
    s = 0.75
    n = 1

    [potential]
    kind = "square_well"
    depth = 4.0
    radius = 1.0

    [numerics]
    h_list = [0.5, 0.25]

Data files are a pure function of the config; run metadata and timings go
to ``manifest.json`` only.  Exit codes: 0 success, 1 invalid config,
2 numerical or certification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    SweepGrid,
    carleman_campaign,
    cap_doubling_change,
    resolvent_sweep,
    verify_glue,
)
from .carleman_weight import certify_phi, explicit_phi_bound, solve_riccati
from .operator1d import EPS_FLOOR, potential_from_config
from .resonances1d import find_resonances, fit_strip
from .weights import default_R0, derive_params, grid_from_spec, verify_w_lemma, verify_wpsi_and_rho

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2
WORKERS_ENV = "CARLEMAN_LAB_WORKERS"

EXPERIMENTS = ("build-weight", "verify-lemmas", "carleman-test", "resolvent-sweep",
               "resonance-scan", "glue-check")

DEFAULT_H = {
    "build-weight": [2.0**-k for k in range(1, 9)],
    "verify-lemmas": [2.0**-k for k in range(1, 9)],
    "carleman-test": [0.5, 0.25, 0.125],
    "resolvent-sweep": [0.4, 0.3, 0.2, 0.1, 0.05],
    "resonance-scan": [1.0, 0.5, 0.33, 0.25],
    "glue-check": [0.5],
}

# section -> key -> accepted python types
SCHEMA = {
    "run": {"experiment": (str,), "output": (str,), "seed": (int,), "workers": (int,)},
    "physics": {"E_min": (int, float), "E_max": (int, float), "R0": (int, float),
                "s": (int, float), "n": (int,), "V_inf": (int, float),
                "c": (int, float)},
    "numerics": {
        "h_list": (list,), "epsilon": (int, float), "E_list": (list,),
        "n_samples": (int,), "rtol": (int, float),
        "radial_count": (int,), "radial_spacing": (str,), "r_min": (int, float),
        "r_max": (int, float),
        "x_cap": (int, float), "cap_length": (int, float), "points_per_h": (int, float),
        "spacing": (int, float), "boundary": (str,), "cap_check": (bool,),
        "R_v": (int, float),
        "region": (list,),
        "x0_list": (list,), "glue_count": (int,), "glue_extent": (int, float),
    },
}
POTENTIAL_KEYS = {
    "zero": set(),
    "square_well": {"depth", "radius"},
    "step_stack": {"breaks", "values"},
    "bounded_noise": {"radius", "amplitude", "pieces", "seed"},
    "csv": {"path"},
}


# -- config -------------------------------------------------------------------

def load_config(path):
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _schema_violations(cfg):
    out = []
    for sec in cfg:
        if sec not in SCHEMA and sec != "potential":
            out.append(f"unknown section [{sec}]")
    for sec, keys in SCHEMA.items():
        body = cfg.get(sec, {})
        if not isinstance(body, dict):
            out.append(f"[{sec}] must be a table")
            continue
        for k, v in body.items():
            if k not in keys:
                out.append(f"unknown key {sec}.{k}")
            elif isinstance(v, bool) and bool not in keys[k]:
                out.append(f"{sec}.{k} has the wrong type")
            elif not isinstance(v, keys[k]):
                out.append(f"{sec}.{k} has the wrong type")
    pot = cfg.get("potential", {})
    if not isinstance(pot, dict):
        out.append("[potential] must be a table")
    else:
        kind = pot.get("kind", "zero")
        if kind not in POTENTIAL_KEYS:
            out.append(f"unknown potential kind {kind!r}")
        else:
            for k in pot:
                if k != "kind" and k not in POTENTIAL_KEYS[kind]:
                    out.append(f"unknown key potential.{k}")
            for k in POTENTIAL_KEYS[kind] - set(pot):
                out.append(f"missing field potential.{k}")
    return out


def validate(cfg) -> list:
    """Every violated precondition of ``cfg``; nothing is computed.

    Never raises: problems in building derived objects are reported as
    violations too.
    """
    try:
        return _validate(cfg)
    except Exception as exc:  # validation never throws
        return [f"config could not be interpreted: {exc}"]


def _validate(cfg):
    if not isinstance(cfg, dict):
        return ["config must be a table"]
    out = _schema_violations(cfg)
    if out:
        return out
    run = cfg.get("run", {})
    phys = cfg.get("physics", {})
    num = cfg.get("numerics", {})
    exp = run.get("experiment")
    if exp is None:
        out.append("missing field run.experiment")
    elif exp not in EXPERIMENTS:
        out.append(f"unknown experiment {exp!r}")
    if "output" not in run:
        out.append("missing field run.output")
    if run.get("workers", 1) < 1:
        out.append("run.workers must be >= 1")

    if "E_min" not in phys:
        out.append("missing field physics.E_min")
    E_min = phys.get("E_min", 1.0)
    E_max = phys.get("E_max", E_min)
    if E_min <= 0:
        out.append("E_min must be positive")
    if E_max < E_min:
        out.append("E_max must be >= E_min")
    if phys.get("s", 0.75) <= 0.5:
        out.append("s must exceed 1/2")
    if phys.get("n", 1) not in (1, 3):
        out.append("n must be 1 or 3")

    try:
        V = potential_from_config(dict(cfg.get("potential", {})))
    except (ValueError, OSError, KeyError, TypeError) as exc:
        out.append(f"potential: {exc}")
        V = None
    R0 = phys.get("R0")
    if R0 is not None and R0 <= 3:
        out.append("R0 must exceed 3")
    if V is not None:
        if R0 is None:
            R0 = default_R0(V.support_radius)
        if V.support_radius >= R0 / 2.0:
            out.append(f"support of V (radius {V.support_radius:g}) must lie in B(0, R0/2)")
        if phys.get("V_inf", V.sup_norm) < V.sup_norm:
            out.append("V_inf is below the sup norm of V")

    h_list = num.get("h_list", DEFAULT_H.get(exp, [0.5]))
    if not h_list:
        out.append("h_list is empty")
    for h in h_list:
        if not isinstance(h, (int, float)) or isinstance(h, bool) or not 0 < h <= 1:
            out.append(f"h = {h!r} must lie in (0, 1]")
    h_ok = [h for h in h_list if isinstance(h, (int, float)) and 0 < h <= 1]

    if "spacing" in num:
        for h in h_ok:
            if num["spacing"] > h / 10.0:
                out.append(f"spacing > h/10 (spacing {num['spacing']:g}, h {h:g})")
    if num.get("points_per_h", 20) < 10:
        out.append("spacing > h/10 (points_per_h below 10)")
    if "epsilon" in num:
        eps = num["epsilon"]
        if eps <= 0:
            out.append("epsilon must be positive")
        elif exp == "resolvent-sweep" and eps < EPS_FLOOR:
            out.append(f"epsilon below the floor {EPS_FLOOR:g}")
        elif eps >= 1:
            out.append("epsilon must be < 1")
    if num.get("boundary", "cap") not in ("cap", "dirichlet"):
        out.append("boundary must be 'cap' or 'dirichlet'")
    if num.get("radial_spacing", "uniform") not in ("uniform", "log"):
        out.append("radial_spacing must be 'uniform' or 'log'")
    if num.get("n_samples", 1) < 1:
        out.append("n_samples must be >= 1")
    if exp == "carleman-test" and phys.get("n", 1) != 1:
        out.append("carleman-test requires n = 1")
    if exp == "resonance-scan":
        reg = num.get("region")
        if reg is None:
            out.append("missing field numerics.region")
        elif len(reg) != 4:
            out.append("region must be [re_min, re_max, im_min, im_max]")
        elif not (0 < reg[0] < reg[1] and reg[2] < reg[3] <= 0):
            out.append("region needs 0 < re_min < re_max and im_min < im_max <= 0")
    for x0 in num.get("x0_list", []):
        if not 0.5 < abs(x0) < 0.75:
            out.append(f"shift x0 = {x0!r} must satisfy 1/2 < |x0| < 3/4")
    return out


def config_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def worker_count(cfg):
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return int(cfg.get("run", {}).get("workers", 1))


# -- experiments ----------------------------------------------------------------

class _Ctx:
    """Resolved config handed to the experiment functions."""

    def __init__(self, cfg, out_dir, workers):
        self.cfg = cfg
        self.out = out_dir
        self.workers = workers
        run = cfg.get("run", {})
        phys = cfg.get("physics", {})
        self.num = cfg.get("numerics", {})
        self.experiment = run["experiment"]
        self.seed = int(run.get("seed", 0))
        self.V = potential_from_config(dict(cfg.get("potential", {})))
        self.E_min = float(phys["E_min"])
        self.E_max = float(phys.get("E_max", self.E_min))
        self.R0 = float(phys.get("R0", default_R0(self.V.support_radius)))
        self.s = float(phys.get("s", 0.75))
        self.n = int(phys.get("n", 1))
        self.V_inf = float(phys.get("V_inf", self.V.sup_norm))
        self.c = phys.get("c")
        self.h_list = [float(h) for h in self.num.get("h_list", DEFAULT_H[self.experiment])]
        self.files = []

    def params(self, h):
        return derive_params(self.E_min, self.E_max, self.V_inf, self.R0, self.s,
                             self.n, h, self.c)

    def path(self, name):
        self.files.append(name)
        return self.out / name

    def write_json(self, name, obj):
        with open(self.path(name), "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _h_tag(i):
    return f"h{i:02d}"


def _exp_build_weight(ctx):
    rtol = float(ctx.num.get("rtol", 1e-10))
    rows = []
    weights = [(ctx.params(h), h) for h in ctx.h_list]
    solved = [(p, solve_riccati(p, rtol=rtol)) for p, _ in weights]
    ratios = [cw.phi_max / math.log(1.0 / p.h) for p, cw in solved if p.h < 1.0]
    K_fit = max(ratios) if ratios else None
    for i, (p, cw) in enumerate(solved):
        cw.to_csv(ctx.path(f"weight_{_h_tag(i)}.csv"))
        side = cw.sidecar()
        side["K_fit"] = K_fit
        ctx.write_json(f"weight_{_h_tag(i)}.json", side)
        rows.append({"h": p.h, "phi_max": cw.phi_max, "residual": cw.residual,
                     "K_explicit": cw.K_explicit})
    ctx.write_json("weights_summary.json", {"K_fit": K_fit, "rows": rows})
    return True


def _radial_grid_spec(ctx, p):
    return {
        "r_min": ctx.num.get("r_min", 1e-3),
        "r_max": ctx.num.get("r_max", 2.0 * p.R1),
        "count": ctx.num.get("radial_count", 10_000),
        "spacing": ctx.num.get("radial_spacing", "uniform"),
    }


def _exp_verify_lemmas(ctx):
    rtol = float(ctx.num.get("rtol", 1e-10))
    # one constant for the whole sweep, taken from h = 1/2
    p_half = ctx.params(0.5)
    K = explicit_phi_bound(p_half) / math.log(2.0)
    reports = {}
    ok = True
    for i, h in enumerate(ctx.h_list):
        p = ctx.params(h)
        r = grid_from_spec(_radial_grid_spec(ctx, p), p)
        rep = verify_w_lemma(p, r).merged(verify_wpsi_and_rho(p, r))
        cw = solve_riccati(p, rtol=rtol)
        rep = rep.merged(certify_phi(cw, p, K_explicit=K if h <= math.exp(-1.0) else None))
        reports[f"{h:.17g}"] = rep.to_dict()
        ok &= rep.passed
    ctx.write_json("cert_report.json", {"pass": bool(ok), "K_explicit": K,
                                        "by_h": reports})
    return ok


def _exp_carleman(ctx):
    weights = []
    for h in ctx.h_list:
        p = ctx.params(h)
        weights.append((p, solve_riccati(p)))
    rep = carleman_campaign(weights, ctx.V, ctx.E_min, int(ctx.num.get("n_samples", 100)),
                            ctx.seed, ctx.num.get("epsilon"), ctx.num.get("R_v"),
                            workers=ctx.workers)
    rep.to_csv(ctx.path("carleman.csv"))
    ctx.write_json("carleman_summary.json", rep.summary())
    return True


def _sweep_grid(ctx):
    kw = {k: ctx.num[k] for k in ("x_cap", "cap_length", "points_per_h", "spacing",
                                   "boundary") if k in ctx.num}
    return SweepGrid(radial=ctx.n == 3, **kw)


def _exp_sweep(ctx):
    p = ctx.params(ctx.h_list[0])
    grid = _sweep_grid(ctx)
    E_list = [float(e) for e in ctx.num.get("E_list", [ctx.E_min])]
    eps = float(ctx.num.get("epsilon", EPS_FLOOR))
    res = resolvent_sweep(ctx.V, E_list, eps, ctx.h_list, p.delta, grid, ctx.workers)
    res.to_csv(ctx.path("sweep.csv"))
    summary = res.summary()
    if ctx.num.get("cap_check", False):
        hmin = min(ctx.h_list)
        summary["cap_doubling_change"] = {
            f"{E:.17g}": cap_doubling_change(ctx.V, E, eps, hmin, p.delta, grid)
            for E in E_list}
    ctx.write_json("sweep_summary.json", summary)
    return True


def _exp_resonances(ctx):
    region = tuple(float(v) for v in ctx.num["region"])
    sets = [find_resonances(ctx.V, h, region) for h in ctx.h_list]
    for i, s in enumerate(sets):
        s.to_csv(ctx.path("resonances.csv") if i == 0 else ctx.out / "resonances.csv",
                 append=i > 0)
    usable = [(s.h, s.nearest_to_axis().z.imag) for s in sets if s.resonances]
    if len(usable) >= 3:
        fit = fit_strip(*zip(*usable))
        ctx.write_json("strip.json", fit.to_dict())
    return True


def _exp_glue(ctx):
    p = ctx.params(ctx.h_list[0])
    L = float(ctx.num.get("glue_extent", 50.0))
    x = np.linspace(-L, L, int(ctx.num.get("glue_count", 100_000)))
    out = {}
    ok = True
    for x0 in ctx.num.get("x0_list", [0.55, 0.6, 0.74]):
        rep = verify_glue(p, float(x0), x)
        out[f"{x0:.17g}"] = rep.to_dict()
        ok &= rep.passed
    ctx.write_json("glue_report.json", {"pass": bool(ok), "s": p.s, "by_x0": out})
    return ok


RUNNERS = {
    "build-weight": _exp_build_weight,
    "verify-lemmas": _exp_verify_lemmas,
    "carleman-test": _exp_carleman,
    "resolvent-sweep": _exp_sweep,
    "resonance-scan": _exp_resonances,
    "glue-check": _exp_glue,
}


def run(config_path) -> int:
    """Run the experiment named in ``config_path`` and return the exit code."""
    config_path = Path(config_path)
    try:
        cfg = load_config(config_path)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    problems = validate(cfg)
    if problems:
        for msg in problems:
            print(f"invalid config: {msg}", file=sys.stderr)
        return EXIT_INVALID

    out_dir = config_path.parent / cfg["run"]["output"]
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: output directory not writable: {exc}", file=sys.stderr)
        return EXIT_INVALID

    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    ctx = _Ctx(cfg, out_dir, worker_count(cfg))
    try:
        ok = RUNNERS[ctx.experiment](ctx)
        code = EXIT_OK if ok else EXIT_NUMERIC
        if not ok:
            print("certification failed; see the report in the output directory",
                  file=sys.stderr)
    except Exception as exc:  # noqa: BLE001 - every numerical failure maps to 2
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    wall = time.perf_counter() - t0

    manifest = {
        "experiment": ctx.experiment,
        "config": str(config_path.name),
        "config_sha256": config_hash(config_path),
        "version": __version__,
        "seed": ctx.seed,
        "workers": ctx.workers,
        "exit_code": code,
        "files": sorted(set(ctx.files)),
        "timestamps": {
            "start": started.isoformat(),
            "end": datetime.now(timezone.utc).isoformat(),
            "wall_time_s": wall,
        },
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="carleman-lab",
                                 description="Semiclassical resolvent experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a config")
    p_run.add_argument("config")
    p_val = sub.add_parser("validate", help="list config violations without running")
    p_val.add_argument("config")
    sub.add_parser("version", help="print the package version")
    args = ap.parse_args(argv)

    if args.command == "version":
        print(__version__)
        return EXIT_OK
    if args.command == "run":
        return run(args.config)
    try:
        cfg = load_config(args.config)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    problems = validate(cfg)
    for msg in problems:
        print(msg)
    return EXIT_INVALID if problems else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
