"""Registry of the acceptance criteria run by ``randgreen verify`` and the test suite.

Each criterion is a function ``(ctx) -> CheckResult``.  ``ctx`` carries the
seed, the thread count and the profile: ``full`` uses the published sample
sizes, ``quick`` shrinks Monte Carlo sizes for smoke runs (tolerances are
never changed).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from . import green as gm
from .errors import EllipticityViolation, RandGreenError
from .kernels import GridSpec, fourier_symbol, make_kernel
from .potentials import (
    ExpAbs,
    GaussianBump,
    green_box_mass,
    newtonian_potential,
    potential_exact,
    potential_mc,
    variance_report,
)
from .simulate import (
    ProcessSpec,
    SimulationSettings,
    StopRule,
    check_ellipticity,
    constant_coefficients,
    mean_occupation,
    simulate_functionals,
)

EXPECTED_IDS = tuple(range(1, 12))
ZETA_G0 = (2 * math.pi) ** -1.5 * float(special.zeta(1.5))

UNIT_BOXES = [
    ([1, 0, 0], [2, 1, 1]),
    ([2, 0, 0], [3, 1, 1]),
    ([3, 0, 0], [4, 1, 1]),
    ([0, 1, 0], [1, 2, 1]),
    ([0, 2, 0], [1, 3, 1]),
    ([0, 0, 1], [1, 1, 2]),
    ([-1, -1, -1], [0, 0, 0]),
    ([-2, 0, 0], [-1, 1, 1]),
    ([1, 1, 1], [2, 2, 2]),
    ([-3, -3, 0], [-2, -2, 1]),
]


@dataclass
class Context:
    seed: int = 42
    threads: int = 1
    profile: str = "full"

    def size(self, full: int, quick: int) -> int:
        return full if self.profile == "full" else quick


@dataclass
class CheckResult:
    id: int
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    tolerance: dict = field(default_factory=dict)
    error: str | None = None
    seconds: float = 0.0

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        extra = f" error={self.error}" if self.error else ""
        return f"[{verdict}] criterion {self.id:2d} {self.name} ({self.seconds:.1f}s){extra}"

    def to_manifest(self) -> dict:
        return {"id": self.id, "name": self.name, "passed": self.passed, "measured": self.measured,
                "tolerance": self.tolerance, "error": self.error}


@dataclass
class Criterion:
    id: int
    name: str
    fn: Callable[[Context], tuple[bool, dict, dict]]
    budget_seconds: float | None = None


REGISTRY: dict[int, Criterion] = {}


def criterion(cid: int, name: str, budget: float | None = None):
    def deco(fn):
        if cid in REGISTRY:
            raise RuntimeError(f"criterion {cid} registered twice")
        REGISTRY[cid] = Criterion(cid, name, fn, budget)
        return fn
    return deco


def self_audit() -> tuple[bool, str]:
    ids = tuple(sorted(REGISTRY))
    if ids != EXPECTED_IDS:
        return False, f"registered criteria {ids} differ from expected {EXPECTED_IDS}"
    return True, "ok"


def run_criterion(cid: int, ctx: Context) -> CheckResult:
    crit = REGISTRY[cid]
    t0 = time.perf_counter()
    try:
        passed, measured, tol = crit.fn(ctx)
        err = None
    except RandGreenError as exc:
        passed, measured, tol, err = False, {}, {}, f"{type(exc).__name__}: {exc}"
    secs = time.perf_counter() - t0
    if crit.budget_seconds is not None and ctx.profile == "full":
        within = secs < crit.budget_seconds
        measured["within_runtime_budget"] = within
        tol["runtime_budget_seconds"] = crit.budget_seconds
        passed = passed and within
    return CheckResult(cid, crit.name, bool(passed), measured, tol, err, secs)


def run_all(ctx: Context, ids=None) -> list[CheckResult]:
    return [run_criterion(i, ctx) for i in (ids or EXPECTED_IDS)]


def _gauss(d=3, b=1.0):
    return make_kernel({"family": "gaussian", "dim": d, "b": b})


def _exp(d=3, delta=1.0):
    return make_kernel({"family": "exp_tail", "dim": d, "delta": delta})


# ---------------------------------------------------------------------------


@criterion(1, "symbol sanity", budget=5.0)
def _c1(ctx):
    rng = np.random.default_rng(ctx.seed)
    k = rng.standard_normal((1000, 3)) * 3.0
    out = {}
    ok = True
    for name, kern in (("gaussian", _gauss()), ("exp_tail", _exp())):
        at0 = abs(fourier_symbol(kern, np.zeros(3)) - 1.0)
        mx = float(np.max(np.abs(kern.symbol(k))))
        out[name] = {"abs_symbol0_minus_1": at0, "max_abs_symbol": mx}
        ok &= at0 <= 1e-10 and mx <= 1 + 1e-12
    return ok, out, {"symbol0": 1e-10, "max_abs_symbol": 1 + 1e-12}


@criterion(2, "green route equivalence", budget=60.0)
def _c2(ctx):
    kern = _gauss()
    grid = GridSpec(3, 8.0, 64)
    s = gm.green_series(kern, grid, 1e-10)
    f = gm.green_fourier(kern, grid)
    m = s.within(3.0)
    rel = float(np.max(np.abs(s.values[m] - f.values[m]) / np.abs(f.values[m])))
    rs = abs(s.origin_value / ZETA_G0 - 1)
    rf = abs(f.origin_value / ZETA_G0 - 1)
    ok = rel <= 1e-4 and rs <= 1e-4 and rf <= 1e-4
    return ok, {"max_rel_route_gap": rel, "series_rel_to_zeta": rs, "fourier_rel_to_zeta": rf,
                "series_terms": s.truncation_info["terms"]}, {"relative": 1e-4}


def _exact_green_for_cpp(kern):
    return gm.green_series(kern, GridSpec(3, 32.0, 256), 1e-9)


@criterion(3, "potential cross-route (cpp, exp_abs)", budget=120.0)
def _c3(ctx):
    kern = _gauss()
    f = ExpAbs(3)
    g = _exact_green_for_cpp(kern)
    exact = potential_exact(f, np.zeros(3), g)
    n = ctx.size(20_000, 2_000)
    st = SimulationSettings(stop=StopRule(horizon=10.0, adaptive=True, eps_tail=0.02), threads=ctx.threads)
    est = potential_mc(f, np.zeros(3), ProcessSpec("cpp", 3, kernel=kern), n, ctx.seed, st)
    gap = abs(est.mean - exact.value)
    allow = 3 * est.standard_error + est.tail_estimate
    return gap <= allow, {"mc_mean": est.mean, "standard_error": est.standard_error,
                          "tail_estimate": est.tail_estimate, "exact": exact.value,
                          "quadrature_error": exact.quadrature_error, "abs_gap": gap, "n_paths": n}, \
        {"allowance": allow}


@criterion(4, "random Green measure mean", budget=120.0)
def _c4(ctx):
    kern = _gauss()
    lo = np.array([b[0] for b in UNIT_BOXES], dtype=float)
    hi = np.array([b[1] for b in UNIT_BOXES], dtype=float)
    n = ctx.size(20_000, 2_000)
    res = mean_occupation(kern, np.zeros(3), lo, hi, n, ctx.seed, StopRule(horizon=10.0, adaptive=True),
                          threads=ctx.threads)
    g = gm.green_series(kern, GridSpec(3, 8.0, 128), 1e-10)
    exact = np.array([green_box_mass(g, a, b) for a, b in zip(lo, hi)])
    corrected = res["mean"] + res["tail"]
    z = np.abs(corrected - exact) / res["se"]
    atom_z = abs(res["atom_mean"] - 1.0) / res["atom_se"]
    ok = bool(np.all(z <= 3.0) and atom_z <= 3.0)
    return ok, {"box_mean": res["mean"], "box_tail": res["tail"], "box_exact": exact, "box_se": res["se"],
                "box_z": z, "atom_mean": res["atom_mean"], "atom_z": atom_z, "n_paths": n}, {"z": 3.0}


@criterion(5, "variance", budget=300.0)
def _c5(ctx):
    kern = _gauss()
    f = ExpAbs(3)
    g = gm.green_series(kern, GridSpec(3, 32.0, 128), 1e-9)
    n = ctx.size(100_000, 5_000)
    st = SimulationSettings(stop=StopRule(horizon=10.0, adaptive=True, eps_tail=0.02), threads=ctx.threads)
    est = potential_mc(f, np.zeros(3), ProcessSpec("cpp", 3, kernel=kern), n, ctx.seed + 1, st)
    rep = variance_report(f, g, est)
    rel = abs(rep.v_monte_carlo - rep.v_measure) / rep.v_measure
    ok = rel <= 0.05 and rep.v_measure > 0
    return ok, {"v_measure": rep.v_measure, "v_monte_carlo": rep.v_monte_carlo,
                "v_mc_standard_error": rep.mc_standard_error, "v_three_term": rep.v_three_term,
                "three_term_signed_gap": rep.expansion_gap, "relative_gap": rel,
                "flags": rep.discrepancy_flags, "n_paths": n}, {"relative": 0.05}


@criterion(6, "resolvent limit")
def _c6(ctx):
    kern = _gauss()
    grid = GridSpec(3, 8.0, 64)
    g0 = gm.green_series(kern, grid, 1e-10)
    lams = [1.0, 0.1, 0.01, 1e-3, 1e-4]
    fields = [gm.resolvent_kernel(kern, lam, grid, 1e-10) for lam in lams]
    m = g0.within(2.0)
    mono = all(np.all(fields[i].values[m] <= fields[i + 1].values[m] + 1e-8) for i in range(len(lams) - 1))
    below = bool(np.all(fields[-1].values[m] <= g0.values[m] + 1e-8))
    rel = float(np.max(np.abs(fields[-1].values[m] - g0.values[m]) / g0.values[m]))
    ok = mono and below and rel <= 1e-3
    return ok, {"nonincreasing": mono, "below_G0": below, "max_rel_gap_lambda_1e-4": rel,
                "origin_values": [f.origin_value for f in fields], "G0_origin": g0.origin_value}, \
        {"relative": 1e-3, "slack": 1e-8}


@criterion(7, "transition density")
def _c7(ctx):
    kern = _gauss()
    grid = GridSpec(3, 16.0, 64)
    masses = {}
    ok = True
    for t in (0.1, 1.0, 10.0):
        p = gm.transition_density(kern, t, grid)
        masses[str(t)] = p.total_mass - 1.0
        ok &= abs(p.total_mass - 1.0) <= 1e-6
    ck = gm.chapman_kolmogorov_error(kern, 1.0, 2.0, grid)
    ok &= ck <= 1e-6
    big = GridSpec(3, 32.0, 128)
    T = gm.choose_horizon(kern, big)
    body, tail = gm.green_time_integral(kern, big, T)
    g0 = gm.green_series(kern, big, 1e-10)
    m = g0.within(2.0)
    rel = float(np.max(np.abs(body.values[m] + tail[m] - g0.values[m]) / g0.values[m]))
    ok &= rel <= 1e-3
    return ok, {"mass_minus_1": masses, "chapman_kolmogorov_sup": ck, "horizon": T,
                "time_integral_max_rel_gap": rel}, {"mass": 1e-6, "chapman_kolmogorov": 1e-6, "relative": 1e-3}


@criterion(8, "decay bounds")
def _c8(ctx):
    grid = GridSpec(3, 80.0, 160)
    gfit = gm.decay_fit(gm.green_series(_gauss(), grid, 1e-9), "gaussian_bound")
    efit = gm.decay_fit(gm.green_series(_exp(), grid, 1e-6), "exponential_bound")
    b_rel = abs(gfit.constants["b"] - 1.0)
    ok = (gfit.max_violation <= 0 and b_rel <= 0.25 and efit.constants["B"] > 0 and efit.max_violation <= 0)
    return ok, {"gaussian": gfit.to_dict(), "gaussian_b_rel_error": b_rel, "exp_tail": efit.to_dict()}, \
        {"b_relative": 0.25, "max_violation": 0.0}


def _bm_run(d, n, ctx, refine):
    f = GaussianBump(d)
    st = SimulationSettings(dt=1e-3, refine_paths=refine, threads=ctx.threads)
    return potential_mc(f, np.zeros(d), ProcessSpec("brownian", d), n, ctx.seed + 10 * d, st)


@criterion(9, "Brownian potential", budget=600.0)
def _c9(ctx):
    n = ctx.size(20_000, 1_000)
    refine = ctx.size(2_000, 200)
    out = {}
    ok = True
    for d in (3, 4):
        est = _bm_run(d, n, ctx, refine)
        oracle = newtonian_potential(GaussianBump(d), d)
        allow = 3 * est.standard_error + est.discretization_allowance
        gap = abs(est.mean - oracle)
        out[f"d{d}"] = {"mc_mean": est.mean, "standard_error": est.standard_error, "oracle": oracle,
                        "richardson_allowance": est.discretization_allowance, "abs_gap": gap,
                        "allowance": allow, "n_paths": n}
        ok &= gap <= allow
    return ok, out, {"se_multiplier": 3.0}


@criterion(10, "diffusion reduction")
def _c10(ctx):
    n = ctx.size(10_000, 1_000)
    f = GaussianBump(3)
    x0 = np.zeros(3)
    bm = potential_mc(f, x0, ProcessSpec("brownian", 3), n, ctx.seed,
                      SimulationSettings(dt=1e-3, threads=ctx.threads, stream=0))
    runs = {}
    for c in (1.0, 2.0):
        proc = ProcessSpec("diffusion", 3, coeffs=constant_coefficients(3, c))
        runs[c] = potential_mc(f, x0, proc, n, ctx.seed, SimulationSettings(dt=1e-3, threads=ctx.threads, stream=7))
    se1 = math.hypot(bm.standard_error, runs[1.0].standard_error)
    z1 = abs(bm.mean - runs[1.0].mean) / se1
    se2 = math.hypot(0.5 * bm.standard_error, runs[2.0].standard_error)
    z2 = abs(0.5 * bm.mean - runs[2.0].mean) / se2
    try:
        check_ellipticity(constant_coefficients(3, np.diag([1.0, 1.0, 0.0])))
        rejected = False
    except EllipticityViolation:
        rejected = True
    ok = z1 <= 3 and z2 <= 3 and rejected
    return ok, {"bm_mean": bm.mean, "identity_mean": runs[1.0].mean, "double_mean": runs[2.0].mean,
                "z_identity": z1, "z_half": z2, "degenerate_rejected": rejected, "n_paths": n}, {"z": 3.0}


@criterion(11, "thread-count determinism")
def _c11(ctx):
    kern = _gauss()
    f = ExpAbs(3)
    proc = ProcessSpec("cpp", 3, kernel=kern)
    n = 1024
    outs = []
    for threads in (1, 8):
        st = SimulationSettings(stop=StopRule(horizon=5.0), threads=threads)
        outs.append(simulate_functionals(proc, f, np.zeros(3), n, ctx.seed, st))
    same = all(np.array_equal(outs[0][k], outs[1][k], equal_nan=True) for k in outs[0])
    return same, {"bit_identical": same, "n_paths": n}, {"threads_compared": [1, 8]}
