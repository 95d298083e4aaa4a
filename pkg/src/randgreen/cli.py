"""Command-line entry point: ``randgreen {green,simulate,estimate,variance,verify}``.

Exit codes: 0 when every executed check passes, 1 on a failed check, 2 on a
configuration error.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, acceptance
from . import green as gm
from .errors import ConfigParse, RandGreenError
from .export import dumps, write_field_csv, write_json, write_occupation_csv, write_path_csv, write_table_csv
from .kernels import GridSpec, make_kernel
from .potentials import (
    GaussianBump,
    green_box_mass,
    make_test_function,
    newtonian_potential,
    potential_exact,
    potential_mc,
    variance_report,
)
from .simulate import (
    ProcessSpec,
    SimulationSettings,
    StopRule,
    make_coefficients,
    mean_occupation,
    sample_bm_path,
    sample_cpp_path,
    sample_diffusion_path,
)

DEFAULTS = {
    "seed": None,
    "dim": 3,
    "process": {"kind": "cpp", "kernel": {"family": "gaussian", "b": 1.0}},
    "grid": {"half_extent": 8.0, "points_per_axis": 64},
    "exact_grid": {"half_extent": 32.0, "points_per_axis": 256},
    "f": {"family": "exp_abs"},
    "x0": None,
    "lambda": [1.0, 0.1, 0.01, 0.001, 0.0001],
    "n_paths": 2000,
    "horizon": 10.0,
    "adaptive": True,
    "dt": 0.001,
    "boxes": None,
    "tolerances": {"series": 1e-10, "route": 1e-4, "eps_tail": 0.02, "se_multiplier": 3.0,
                   "variance_relative": 0.05},
    "out": "runs/out",
    "profile": "full",
}
TOLERANCE_KEYS = set(DEFAULTS["tolerances"])


# ---------------------------------------------------------------------------
# configuration


def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def load_config(path: str | None) -> tuple[dict, str]:
    if path is None:
        return {}, ""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigParse(f"cannot read config: {exc}", field="--config") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParse(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(data, dict):
        raise ConfigParse("config must be a JSON object", line=1)
    return data, text


def merge_config(data: dict, text: str, args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    for key, val in data.items():
        if key not in DEFAULTS:
            raise ConfigParse(f"unknown field {key!r}", field=key, line=_line_of(text, key))
        if key == "tolerances":
            if not isinstance(val, dict):
                raise ConfigParse("tolerances must be an object", field=key, line=_line_of(text, key))
            for tk in val:
                if tk not in TOLERANCE_KEYS:
                    raise ConfigParse(f"unknown tolerance {tk!r}", field=f"tolerances.{tk}", line=_line_of(text, tk))
            cfg[key].update(val)
        else:
            cfg[key] = val
    overrides = {"seed": args.seed, "n_paths": args.paths, "horizon": args.horizon, "dt": args.dt,
                 "dim": args.dim, "out": args.out}
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    if args.lam is not None:
        try:
            cfg["lambda"] = [float(v) for v in args.lam.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigParse(f"--lambda must be a comma-separated list of numbers: {exc}", field="lambda") from exc
    if args.tol is not None:
        cfg["tolerances"]["series"] = args.tol
    if getattr(args, "profile", None) is not None:
        cfg["profile"] = args.profile
    validate_config(cfg, text)
    return cfg


def validate_config(cfg: dict, text: str = "") -> None:
    def bad(field, msg):
        raise ConfigParse(msg, field=field, line=_line_of(text, field.split(".")[-1]))

    if cfg["seed"] is None:
        bad("seed", "a seed is required (config field or --seed)")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        bad("seed", "seed must be a nonnegative integer")
    if not isinstance(cfg["dim"], int) or cfg["dim"] < 3:
        bad("dim", "dim must be an integer >= 3")
    for tk, tv in cfg["tolerances"].items():
        if not isinstance(tv, (int, float)) or not tv > 0:
            bad(f"tolerances.{tk}", f"tolerance {tk} must be > 0")
    if not isinstance(cfg["n_paths"], int) or cfg["n_paths"] < 0:
        bad("n_paths", "n_paths must be a nonnegative integer")
    for key in ("horizon", "dt"):
        if not isinstance(cfg[key], (int, float)) or not cfg[key] > 0:
            bad(key, f"{key} must be > 0")
    if any(not isinstance(v, (int, float)) or v < 0 for v in cfg["lambda"]):
        bad("lambda", "lambda values must be >= 0")
    proc = cfg["process"]
    if not isinstance(proc, dict) or proc.get("kind") not in ("cpp", "brownian", "diffusion"):
        bad("process", "process.kind must be one of cpp, brownian, diffusion")
    for g in ("grid", "exact_grid"):
        gg = cfg[g]
        if not isinstance(gg, dict) or set(gg) != {"half_extent", "points_per_axis"}:
            bad(g, f"{g} needs exactly half_extent and points_per_axis")
        n = gg["points_per_axis"]
        if not isinstance(n, int) or n < 4 or n % 4:
            bad(g, f"{g}.points_per_axis must be a multiple of 4")
        if not gg["half_extent"] > 0:
            bad(g, f"{g}.half_extent must be > 0")
    if cfg["profile"] not in ("full", "quick"):
        bad("profile", "profile must be full or quick")
    if cfg["x0"] is not None and len(cfg["x0"]) != cfg["dim"]:
        bad("x0", "x0 must have dim entries")
    for field, build in (("process", _process), ("f", lambda c: make_test_function(c["f"], c["dim"]))):
        try:
            build(cfg)
        except (ValueError, KeyError, TypeError, RandGreenError) as exc:
            bad(field, f"invalid {field}: {exc}")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(dumps(cfg).encode()).hexdigest()


def _grid(cfg, key="grid") -> GridSpec:
    g = cfg[key]
    return GridSpec(cfg["dim"], float(g["half_extent"]), int(g["points_per_axis"]))


def _kernel(cfg):
    spec = dict(cfg["process"].get("kernel", {"family": "gaussian", "b": 1.0}))
    spec["dim"] = cfg["dim"]
    return make_kernel(spec)


def _process(cfg) -> ProcessSpec:
    kind = cfg["process"]["kind"]
    d = cfg["dim"]
    if kind == "cpp":
        return ProcessSpec("cpp", d, kernel=_kernel(cfg))
    if kind == "brownian":
        return ProcessSpec("brownian", d)
    return ProcessSpec("diffusion", d, coeffs=make_coefficients(cfg["process"].get("coeffs", {}), d))


def _x0(cfg):
    return np.zeros(cfg["dim"]) if cfg["x0"] is None else np.asarray(cfg["x0"], dtype=float)


def _settings(cfg, threads) -> SimulationSettings:
    stop = StopRule(horizon=float(cfg["horizon"]), adaptive=bool(cfg["adaptive"]),
                    eps_tail=float(cfg["tolerances"]["eps_tail"]))
    return SimulationSettings(stop=stop, dt=float(cfg["dt"]), threads=threads,
                              refine_paths=min(2000, cfg["n_paths"]) if cfg["process"]["kind"] != "cpp" else 0)


def _check(name, passed, measured=None, tolerance=None, error=None) -> dict:
    return {"name": name, "passed": bool(passed), "measured": measured or {}, "tolerance": tolerance or {},
            "error": error}


# ---------------------------------------------------------------------------
# subcommands


def cmd_green(cfg, out: Path, threads: int) -> list[dict]:
    kern = _kernel(cfg)
    grid = _grid(cfg)
    tol = cfg["tolerances"]
    checks = []
    series = gm.green_series(kern, grid, tol["series"], strict=False)
    write_field_csv(out / "green_series.csv", series)
    fourier = gm.green_fourier(kern, grid)
    write_field_csv(out / "green_fourier.csv", fourier)
    m = series.within(min(3.0, grid.half_extent))
    rel = float(np.max(np.abs(series.values[m] - fourier.values[m]) / np.abs(fourier.values[m])))
    checks.append(_check("series_converged", series.truncation_info["converged"], series.truncation_info))
    checks.append(_check("route_equivalence", rel <= tol["route"], {"max_rel_gap": rel}, {"relative": tol["route"]}))
    if kern.family == "gaussian":
        import scipy.special as sp

        d = cfg["dim"]
        closed = (kern.b / (2 * math.pi)) ** (d / 2) * float(sp.zeta(d / 2))
        r = abs(series.origin_value / closed - 1.0)
        checks.append(_check("origin_closed_form", r <= tol["route"],
                             {"series_origin": series.origin_value, "closed_form": closed, "relative": r},
                             {"relative": tol["route"]}))
    rows = []
    prev = None
    mono = True
    for lam in sorted(cfg["lambda"], reverse=True):
        if lam == 0:
            continue
        g = gm.resolvent_kernel(kern, lam, grid, tol["series"])
        write_field_csv(out / f"resolvent_lambda_{lam:g}.csv", g)
        rows.append([lam, g.origin_value])
        if prev is not None:
            mono &= bool(np.all(g.values >= prev.values - 1e-8))
        prev = g
    if rows:
        write_table_csv(out / "resolvent_origin.csv", ["lambda", "G_lambda_origin"], rows)
        checks.append(_check("resolvent_monotone", mono, {"n_lambdas": len(rows)}, {"slack": 1e-8}))
    return checks


def _default_boxes(d):
    if d == 3:
        return acceptance.UNIT_BOXES
    return [([float(i)] + [0.0] * (d - 1), [float(i + 1)] + [1.0] * (d - 1)) for i in range(1, 5)]


def cmd_simulate(cfg, out: Path, threads: int) -> list[dict]:
    proc = _process(cfg)
    x0 = _x0(cfg)
    boxes = cfg["boxes"] or _default_boxes(cfg["dim"])
    lo = np.array([b[0] for b in boxes], dtype=float)
    hi = np.array([b[1] for b in boxes], dtype=float)
    checks = []
    if proc.kind == "cpp":
        n = cfg["n_paths"]
        stop = StopRule(horizon=float(cfg["horizon"]), adaptive=bool(cfg["adaptive"]),
                        eps_tail=float(cfg["tolerances"]["eps_tail"]))
        first = sample_cpp_path(proc.kernel, x0, StopRule(horizon=float(cfg["horizon"])), cfg["seed"])
        write_path_csv(out / "path_0.csv", first)
        if n >= 2:
            res = mean_occupation(proc.kernel, x0, lo, hi, n, cfg["seed"], stop, threads)
            write_occupation_csv(out / "occupation.csv", lo, hi, res["mean"],
                                 {"atom_mass": res["atom_mean"], "atom_se": res["atom_se"],
                                  "truncation_tail": res["tail"], "standard_error": res["se"], "n_paths": n,
                                  "seed": cfg["seed"]})
            k = cfg["tolerances"]["se_multiplier"]
            checks.append(_check("atom_mass_mean", abs(res["atom_mean"] - 1) <= k * res["atom_se"],
                                 {"atom_mean": res["atom_mean"], "atom_se": res["atom_se"]}, {"se_multiplier": k}))
            if not np.any(np.all((x0 >= lo) & (x0 < hi), axis=1)):
                g = gm.green_series(proc.kernel, _grid(cfg), cfg["tolerances"]["series"], strict=False)
                try:
                    exact = np.array([green_box_mass(g, a - x0, b - x0) for a, b in zip(lo, hi)])
                    z = np.abs(res["mean"] + res["tail"] - exact) / np.maximum(res["se"], 1e-300)
                    checks.append(_check("box_means", bool(np.all(z <= k)), {"z": z, "exact": exact},
                                         {"se_multiplier": k}))
                except (ValueError, RandGreenError) as exc:
                    checks.append(_check("box_means", False, error=f"{type(exc).__name__}: {exc}"))
    elif proc.kind == "brownian":
        path = sample_bm_path(x0, float(cfg["horizon"]), float(cfg["dt"]), cfg["seed"])
        write_path_csv(out / "path_0.csv", path)
    else:
        path = sample_diffusion_path(proc.coeffs, x0, float(cfg["horizon"]), float(cfg["dt"]), cfg["seed"])
        write_path_csv(out / "path_0.csv", path)
    return checks


def _exact_potential(cfg, proc, f, x0):
    """Reference value and its allowance for the configured process, or ``None``."""
    if proc.kind == "cpp":
        g = gm.green_series(proc.kernel, _grid(cfg, "exact_grid"), cfg["tolerances"]["series"], strict=False)
        ex = potential_exact(f, x0, g)
        return ex.value, ex.quadrature_error
    scale = 1.0
    if proc.kind == "diffusion":
        if proc.coeffs.constant is None or proc.coeffs.far_field_scale is None:
            return None
        scale = proc.coeffs.far_field_scale
    if getattr(f, "amplitude", 1.0) == 0.0:
        return 0.0, 0.0
    if isinstance(f, GaussianBump) and np.allclose(f.center, x0):
        return newtonian_potential(f, cfg["dim"]) / scale, 0.0
    return None


def cmd_estimate(cfg, out: Path, threads: int) -> list[dict]:
    proc = _process(cfg)
    x0 = _x0(cfg)
    f = make_test_function(cfg["f"], cfg["dim"])
    est = potential_mc(f, x0, proc, max(cfg["n_paths"], 2), cfg["seed"], _settings(cfg, threads))
    ref = _exact_potential(cfg, proc, f, x0)
    payload = {"estimate": est.to_dict(), "f": f.params(), "x0": x0}
    checks = []
    if ref is not None:
        exact, quad = ref
        k = cfg["tolerances"]["se_multiplier"]
        allow = k * est.standard_error + est.tail_estimate + quad + est.discretization_allowance
        gap = abs(est.mean - exact)
        payload["exact"] = {"value": exact, "quadrature_error": quad}
        checks.append(_check("mc_vs_exact", gap <= allow, {"mc_mean": est.mean, "exact": exact, "abs_gap": gap},
                             {"allowance": allow}))
        write_table_csv(out / "comparison.csv", ["quantity", "exact", "monte_carlo", "standard_error", "tail"],
                        [["potential", exact, est.mean, est.standard_error, est.tail_estimate]])
    write_json(out / "estimate.json", payload)
    return checks


def cmd_variance(cfg, out: Path, threads: int) -> list[dict]:
    proc = _process(cfg)
    if proc.kind != "cpp":
        raise ConfigParse("variance needs a cpp process (the exact route uses the jump Green density)",
                          field="process")
    f = make_test_function(cfg["f"], cfg["dim"])
    g = gm.green_series(proc.kernel, _grid(cfg, "exact_grid"), cfg["tolerances"]["series"], strict=False)
    est = None
    if cfg["n_paths"] >= 2:
        est = potential_mc(f, np.zeros(cfg["dim"]), proc, cfg["n_paths"], cfg["seed"], _settings(cfg, threads))
    rep = variance_report(f, g, est)
    write_json(out / "variance.json", rep.to_dict())
    rows = [["v_measure", rep.v_measure], ["v_three_term", rep.v_three_term]]
    if est is not None:
        rows.append(["v_monte_carlo", rep.v_monte_carlo])
    write_table_csv(out / "variance.csv", ["quantity", "value"], rows)
    checks = [_check("v_measure_nonnegative", rep.v_measure >= 0, {"v_measure": rep.v_measure})]
    if est is not None:
        gap = abs(rep.v_monte_carlo - rep.v_measure)
        tol = cfg["tolerances"]["variance_relative"]
        k = cfg["tolerances"]["se_multiplier"]
        # small runs are judged on their own standard error
        allow = max(tol * rep.v_measure, k * rep.mc_standard_error)
        checks.append(_check("v_measure_vs_mc", gap <= allow,
                             {"relative_gap": gap / max(rep.v_measure, 1e-300), "v_mc_standard_error":
                              rep.mc_standard_error, "three_term_gap": rep.expansion_gap},
                             {"relative": tol, "se_multiplier": k, "allowance": allow}))
    return checks


def cmd_verify(cfg, out: Path, threads: int) -> list[dict]:
    ok, msg = acceptance.self_audit()
    checks = [_check("registry_self_audit", ok, {"message": msg, "ids": sorted(acceptance.REGISTRY)})]
    if not ok:
        return checks
    ctx = acceptance.Context(seed=cfg["seed"], threads=threads, profile=cfg["profile"])
    timings = {}
    for cid in acceptance.EXPECTED_IDS:
        res = acceptance.run_criterion(cid, ctx)
        print(res.line(), flush=True)
        entry = res.to_manifest()
        entry["name"] = f"criterion_{res.id}: {res.name}"
        checks.append(entry)
        timings[str(res.id)] = res.seconds
    cmd_verify.timings = timings
    return checks


COMMANDS = {"green": cmd_green, "simulate": cmd_simulate, "estimate": cmd_estimate, "variance": cmd_variance,
            "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="randgreen", description="Green measures and random potentials")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--paths", type=int)
        sp.add_argument("--horizon", type=float)
        sp.add_argument("--dt", type=float)
        sp.add_argument("--dim", type=int)
        sp.add_argument("--lambda", dest="lam")
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--out")
        sp.add_argument("--tol", type=float)
        if name == "verify":
            sp.add_argument("--profile", choices=["full", "quick"])
    return p


def _config_error(exc: ConfigParse) -> int:
    where = []
    if exc.field:
        where.append(f"field={exc.field}")
    if exc.line:
        where.append(f"line={exc.line}")
    suffix = f" [{', '.join(where)}]" if where else ""
    print(f"config error: {exc}{suffix}", file=sys.stderr)
    return 2


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        data, text = load_config(args.config)
        cfg = merge_config(data, text, args)
    except ConfigParse as exc:
        return _config_error(exc)
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    if threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return 2
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        checks = COMMANDS[args.command](cfg, out, threads)
    except ConfigParse as exc:
        return _config_error(exc)
    except RandGreenError as exc:
        checks = [_check(f"{args.command}_failed", False, error=f"{type(exc).__name__}: {exc}")]
    wall = {"total_seconds": time.perf_counter() - t0}
    # where the files land does not change any number in them
    effective = {k: v for k, v in cfg.items() if k != "out"}
    if args.command == "verify":
        wall["per_check_seconds"] = getattr(cmd_verify, "timings", {})
    manifest = {
        "tool": "randgreen",
        "version": __version__,
        "command": args.command,
        "config_hash": config_hash(effective),
        "config": effective,
        "checks": checks,
        "all_passed": all(c["passed"] for c in checks),
        "wall_clock": wall,
    }
    write_json(out / "manifest.json", manifest)
    for c in checks:
        if args.command != "verify" or not c["name"].startswith("criterion_"):
            print(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['name']}")
    print(f"manifest: {out / 'manifest.json'}")
    return 0 if manifest["all_passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
