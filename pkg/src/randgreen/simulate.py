"""Path samplers and pathwise functionals for the three process classes.

* compound Poisson process (unit jump rate, jumps from a :class:`JumpKernel`),
  simulated exactly as a jump chain;
* Brownian motion with generator the Laplacian (increments ``N(0, 2 dt I)``);
* divergence-form diffusions ``L = sum_kj d_k a_kj d_j`` by Euler-Maruyama.

Every path owns a generator seeded from ``(master seed, stream, path index)``,
paths are processed in fixed chunks and all reductions run in path-index
order, so results do not depend on the number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import EllipticityViolation, OverlappingBoxes, StepTooLarge
from .green import far_field_green
from .kernels import JumpKernel

CHUNK = 256


# ---------------------------------------------------------------------------
# seeds and scheduling


def path_seed(master: int, index: int, stream: int = 0) -> int:
    """64-bit seed for path ``index``: first word of ``SeedSequence(master, spawn_key=(stream, index))``."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(int(stream), int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


def path_rng(master: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(path_seed(master, index, stream))


def run_chunked(job: Callable[[int, int], dict], n_paths: int, threads: int = 1) -> dict:
    """Run ``job(start, stop)`` over fixed chunks and concatenate results in index order."""
    bounds = [(s, min(s + CHUNK, n_paths)) for s in range(0, n_paths, CHUNK)]
    if threads <= 1 or len(bounds) == 1:
        parts = [job(a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ab: job(*ab), bounds))
    keys = parts[0].keys()
    return {k: np.concatenate([p[k] for p in parts]) for k in keys}


# ---------------------------------------------------------------------------
# data types


@dataclass
class StopRule:
    """Horizon plus optional adaptive tail criterion.

    With ``adaptive`` the path runs to ``horizon`` and then continues window
    by window (``window`` jumps) until the position is beyond ``radius`` from
    the target center, the last window added at most ``eps_tail * s`` and
    the far-field estimate of the remaining potential is at most
    ``eps_tail * s`` as well, where ``s = max(|Y|, sup|f|)``.
    """

    horizon: float = 10.0
    adaptive: bool = False
    eps_tail: float = 0.02
    radius: float | None = None
    window: int = 64
    max_jumps: int = 5_000_000

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not self.eps_tail > 0:
            raise ValueError("eps_tail must be positive")


@dataclass
class PathSample:
    start: np.ndarray
    kind: str
    states: np.ndarray
    holding: np.ndarray | None = None
    dt: float | None = None
    seed: int = 0
    horizon: float = 0.0
    termination: str = "horizon_reached"
    breaks: tuple = ()

    @property
    def total_time(self) -> float:
        if self.kind == "jump_chain":
            return float(self.holding.sum())
        return self.dt * (len(self.states) - 1 - len(self.breaks))

    def times(self) -> np.ndarray:
        if self.kind == "jump_chain":
            return np.concatenate([[0.0], np.cumsum(self.holding)[:-1]])
        return self.dt * np.arange(len(self.states))

    def same_as(self, other: "PathSample") -> bool:
        return (
            self.kind == other.kind
            and np.array_equal(self.states, other.states)
            and (self.holding is None or np.array_equal(self.holding, other.holding))
            and self.termination == other.termination
        )


@dataclass
class OccupationMeasure:
    lower: np.ndarray
    upper: np.ndarray
    masses: np.ndarray
    atom_mass: float
    total_mass: float
    truncation_tail: np.ndarray | float = 0.0

    @property
    def unpartitioned(self) -> float:
        return self.total_mass - float(self.masses.sum())


@dataclass
class DiffusionCoefficients:
    """``x -> a(x)`` (``(m, d) -> (m, d, d)``) with optional row divergence.

    ``far_field_scale = c`` declares ``a(x) = c I`` for ``|x| >= far_field_radius``;
    it enables the exterior return shortcut for perpetual functionals.
    """

    dim: int
    matrix_field: Callable[[np.ndarray], np.ndarray]
    derivative_field: Callable[[np.ndarray], np.ndarray] | None = None
    constant: np.ndarray | None = None
    far_field_scale: float | None = None
    far_field_radius: float = 0.0
    fd_step: float = 1e-4
    ellipticity: tuple[float, float] | None = None

    def matrix(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.constant is not None:
            return np.broadcast_to(self.constant, (x.shape[0], self.dim, self.dim))
        return self.matrix_field(x)

    def divergence(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.constant is not None:
            return np.zeros_like(x)
        if self.derivative_field is not None:
            return self.derivative_field(x)
        out = np.zeros_like(x)
        h = self.fd_step
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = h
            out += (self.matrix_field(x + e)[:, :, j] - self.matrix_field(x - e)[:, :, j]) / (2 * h)
        return out


def constant_coefficients(dim: int, matrix) -> DiffusionCoefficients:
    a = np.asarray(matrix, dtype=float)
    if a.ndim == 0:
        a = float(a) * np.eye(dim)
    iso = bool(np.allclose(a, a[0, 0] * np.eye(dim), rtol=0, atol=0))
    return DiffusionCoefficients(
        dim, lambda x: np.broadcast_to(a, (x.shape[0], dim, dim)), constant=a,
        far_field_scale=float(a[0, 0]) if iso else None,
    )


def bump_coefficients(dim: int, base: float = 1.0, amplitude: float = 0.5, width: float = 1.0) -> DiffusionCoefficients:
    """``a(x) = (base + amplitude * exp(-|x|^2 / 2 w^2)) I``; isotropic far field ``base``."""
    def mat(x):
        s = base + amplitude * np.exp(-0.5 * np.sum(x * x, axis=-1) / width**2)
        return s[:, None, None] * np.eye(dim)

    def div(x):
        g = -amplitude * np.exp(-0.5 * np.sum(x * x, axis=-1) / width**2)[:, None] * x / width**2
        return g

    # a = base I to double precision beyond ~ 9 widths
    return DiffusionCoefficients(dim, mat, div, far_field_scale=base, far_field_radius=9.0 * width)


def make_coefficients(spec: dict, dim: int) -> DiffusionCoefficients:
    kind = spec.get("kind", "constant")
    if kind == "constant":
        return constant_coefficients(dim, spec.get("matrix", spec.get("scale", 1.0)))
    if kind == "bump":
        return bump_coefficients(dim, float(spec.get("base", 1.0)), float(spec.get("amplitude", 0.5)),
                                 float(spec.get("width", 1.0)))
    raise ValueError(f"unknown coefficient kind {kind!r}")


def check_ellipticity(coeffs: DiffusionCoefficients, points: np.ndarray | None = None) -> tuple[float, float]:
    """Eigenvalue range of ``a`` over a point cloud; raises on asymmetry or ``lambda_min <= 0``."""
    if points is None:
        rng = np.random.default_rng(0)
        points = rng.uniform(-10.0, 10.0, size=(512, coeffs.dim))
        points = np.vstack([np.zeros(coeffs.dim), points])
    a = np.asarray(coeffs.matrix(points), dtype=float)
    if not np.allclose(a, np.swapaxes(a, 1, 2), rtol=0, atol=1e-12):
        raise EllipticityViolation("coefficient matrix is not symmetric")
    w = np.linalg.eigvalsh(a)
    lo, hi = float(w.min()), float(w.max())
    if not lo > 0:
        raise EllipticityViolation(f"sampled eigenvalue {lo:.3g} <= 0")
    coeffs.ellipticity = (lo, hi)
    return lo, hi


# ---------------------------------------------------------------------------
# compound Poisson process


def _tail_function(sigma: np.ndarray, f) -> Callable[[np.ndarray], float]:
    """Far-field estimate of the remaining potential from position ``X``."""
    l1 = float(f.l1_norm()) if f is not None else 0.0
    center = np.asarray(getattr(f, "center", np.zeros(sigma.shape[0])), dtype=float)
    if l1 == 0.0:
        return lambda x: 0.0
    return lambda x: l1 * float(far_field_green(sigma, np.asarray(x) - center))


def _cpp_engine(kernel: JumpKernel, x0: np.ndarray, stop: StopRule, rng: np.random.Generator,
                f=None, tail_fn=None, boxes=None, record: bool = False) -> dict:
    d = kernel.dim
    x = np.array(x0, dtype=float)
    t = 0.0
    y = 0.0
    n_jumps = 0
    atom = None
    center = np.asarray(getattr(f, "center", np.zeros(d)), dtype=float) if f is not None else np.zeros(d)
    radius = stop.radius if stop.radius is not None else 0.0
    masses = np.zeros(len(boxes[0])) if boxes is not None else None
    # floor for the relative tail threshold, so paths with tiny Y still stop
    scale = float(f.sup_norm()) if f is not None and hasattr(f, "sup_norm") else 0.0
    rec_states, rec_holds = [], []
    termination = "horizon_reached"
    W = stop.window
    while True:
        holds = rng.exponential(size=W)
        jumps = kernel.sample(rng, W)
        states = np.empty((W, d))
        states[0] = x
        np.cumsum(jumps[:-1], axis=0, out=states[1:])
        states[1:] += x
        if atom is None:
            atom = float(holds[0])
        ct = t + np.cumsum(holds)
        done = False
        if not stop.adaptive and ct[-1] >= stop.horizon:
            k = int(np.searchsorted(ct, stop.horizon))
            holds = holds[:k + 1].copy()
            holds[-1] = stop.horizon - (ct[k - 1] if k > 0 else t)
            states = states[:k + 1]
            done = True
        fv = f(states) if f is not None else None
        inc = float(fv @ holds) if f is not None else 0.0
        y += inc
        if masses is not None:
            lo, hi = boxes
            inside = np.all((states[:, None, :] >= lo[None]) & (states[:, None, :] < hi[None]), axis=-1)
            masses += holds @ inside
        if record:
            rec_states.append(states)
            rec_holds.append(holds)
        n_jumps += len(holds)
        t = float(ct[len(holds) - 1]) if not done else stop.horizon
        x = states[-1] + jumps[len(holds) - 1]
        if done:
            break
        if stop.adaptive and t >= stop.horizon:
            thresh = stop.eps_tail * max(abs(y), scale)
            if (np.linalg.norm(x - center) > radius and abs(inc) <= thresh
                    and (tail_fn(x) if tail_fn else 0.0) <= thresh):
                termination = "tail_criterion_met"
                break
        if n_jumps >= stop.max_jumps:
            termination = "jump_limit"
            break
    out = {"value": y, "time": t, "atom": atom, "jumps": n_jumps, "end": x, "termination": termination,
           "masses": masses}
    if record:
        out["states"] = np.concatenate(rec_states)
        out["holding"] = np.concatenate(rec_holds)
    return out


def sample_cpp_path(kernel: JumpKernel, x0, stop: StopRule | None = None, seed: int = 0, f=None) -> PathSample:
    """Jump chain of the compound Poisson process: ``Exp(1)`` holdings, jumps drawn from ``kernel``.

    With a fixed horizon the final holding time is cut at the horizon.  An
    adaptive rule needs ``f`` to evaluate its tail criterion.
    """
    stop = stop or StopRule()
    if stop.adaptive and f is None:
        raise ValueError("adaptive stop rule needs the integrand f")
    tail_fn = _tail_function(kernel.sigma(), f) if stop.adaptive else None
    rng = np.random.default_rng(int(seed))
    res = _cpp_engine(kernel, np.asarray(x0, dtype=float), stop, rng, f, tail_fn, record=True)
    return PathSample(np.array(x0, dtype=float), "jump_chain", res["states"], res["holding"], None,
                      int(seed), stop.horizon, res["termination"])


def integrate_along_cpp(path: PathSample, f) -> float:
    """``sum_i f(state_i) * holding_i``: exact for the piecewise-constant trajectory."""
    if path.kind != "jump_chain":
        raise ValueError("integrate_along_cpp needs a jump-chain path")
    return float(np.asarray(f(path.states)) @ path.holding)


# ---------------------------------------------------------------------------
# Brownian motion and diffusions


def sample_bm_path(x0, T: float, dt: float, seed: int = 0) -> PathSample:
    """Brownian path for the generator Laplacian on ``[0, T]``: increments ``N(0, 2 dt I)``."""
    if not dt > 0 or T < dt:
        raise ValueError("need dt > 0 and T >= dt")
    x0 = np.asarray(x0, dtype=float)
    n = int(math.floor(T / dt + 1e-9))
    rng = np.random.default_rng(int(seed))
    inc = rng.standard_normal((n, x0.size)) * math.sqrt(2.0 * dt)
    states = np.vstack([x0, x0 + np.cumsum(inc, axis=0)])
    return PathSample(x0.copy(), "discretized", states, None, dt, int(seed), T, "horizon_reached")


def integrate_along_discretized(path: PathSample, f) -> float:
    """Composite trapezoid of ``f`` along the states; segments end at ``path.breaks``."""
    if path.kind != "discretized":
        raise ValueError("integrate_along_discretized needs a discretized path")
    fv = np.asarray(f(path.states), dtype=float)
    cuts = [0, *[b + 1 for b in path.breaks], len(fv)]
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        seg = fv[a:b]
        if len(seg) > 1:
            total += path.dt * (seg.sum() - 0.5 * (seg[0] + seg[-1]))
    return float(total)


def _sqrt2a(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(a)
    return (v * np.sqrt(2.0 * np.clip(w, 0.0, None))[..., None, :]) @ np.swapaxes(v, -1, -2)


def sample_diffusion_path(coeffs: DiffusionCoefficients, x0, T: float, dt: float, seed: int = 0,
                          sanity_radius: float | None = None) -> PathSample:
    """Euler-Maruyama for ``L = sum d_k a_kj d_j``: drift ``div a``, noise ``sqrt(2a) dW``."""
    if not dt > 0 or T < dt:
        raise ValueError("need dt > 0 and T >= dt")
    lo, hi = check_ellipticity(coeffs)
    x = np.asarray(x0, dtype=float)[None, :]
    n = int(math.floor(T / dt + 1e-9))
    rng = np.random.default_rng(int(seed))
    sanity = sanity_radius if sanity_radius is not None else max(1.0, 50.0 * math.sqrt(2.0 * hi * dt))
    states = np.empty((n + 1, x.shape[1]))
    states[0] = x[0]
    sq = math.sqrt(dt)
    for i in range(n):
        z = rng.standard_normal(x.shape[1])
        step = coeffs.divergence(x) * dt + (_sqrt2a(coeffs.matrix(x)) @ z[:, None])[..., 0] * sq
        if np.linalg.norm(step) > sanity:
            raise StepTooLarge(f"step of length {np.linalg.norm(step):.3g} exceeds {sanity:.3g}")
        x = x + step
        states[i + 1] = x[0]
    return PathSample(np.asarray(x0, dtype=float), "discretized", states, None, dt, int(seed), T,
                      "horizon_reached")


def exterior_return(x: np.ndarray, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Point where a path from ``|x| > radius`` first hits the sphere, given that it does.

    The hitting density is proportional to ``|xi - x*|^{-d}`` with
    ``x* = radius^2 x / |x|^2`` (Kelvin image); rejection from uniform proposals.
    """
    d = x.size
    xs = radius**2 * x / float(x @ x)
    rs = float(np.linalg.norm(xs))
    while True:
        g = rng.standard_normal((32, d))
        xi = radius * g / np.linalg.norm(g, axis=1, keepdims=True)
        acc = ((radius - rs) / np.linalg.norm(xi - xs, axis=1)) ** d
        ok = np.flatnonzero(rng.random(32) < acc)
        if ok.size:
            return xi[ok[0]]


@dataclass
class Shortcut:
    """Exterior return shortcut: at ``|x| >= outer`` jump back to the sphere ``inner`` or escape."""

    inner: float
    outer: float


def _walk_engine(x0, dt, sigma, f, rng, shortcut: Shortcut | None, horizon: float | None,
                 refine_rng: np.random.Generator | None = None, block: int = 4096,
                 max_steps: int = 50_000_000) -> dict:
    """Constant-coefficient walk ``x += sigma sqrt(dt) Z`` with trapezoid ``Y``.

    Returns ``Y`` and, with ``refine_rng``, the trapezoid on the Brownian-bridge
    refinement at ``dt/2`` of the same path.
    """
    d = x0.size
    x = np.array(x0, dtype=float)
    sq = math.sqrt(dt)
    prev = float(f(x[None])[0])
    y = 0.0
    y_fine = 0.0
    steps = 0
    returns = 0
    termination = "horizon_reached"
    mid_factor = math.sqrt(dt / 4.0)
    while True:
        z = rng.standard_normal((block, d))
        pos = x + np.cumsum(z @ sigma.T, axis=0) * sq
        k = block
        exited = False
        if shortcut is not None:
            out = np.flatnonzero(np.einsum("ij,ij->i", pos, pos) >= shortcut.outer**2)
            if out.size:
                k = int(out[0]) + 1
                exited = True
        if horizon is not None and steps + k >= round(horizon / dt):
            k = int(round(horizon / dt)) - steps
            exited = False
            hit_horizon = True
        else:
            hit_horizon = False
        use = pos[:k]
        fv = f(use)
        y += dt * (0.5 * prev + fv[:-1].sum() + 0.5 * fv[-1])
        if refine_rng is not None:
            starts = np.vstack([x[None], use[:-1]])
            mids = 0.5 * (starts + use) + (refine_rng.standard_normal((k, d)) @ sigma.T) * mid_factor
            fm = f(mids)
            y_fine += 0.5 * dt * (0.5 * prev + fm.sum() + fv[:-1].sum() + 0.5 * fv[-1])
        steps += k
        x = use[-1]
        prev = float(fv[-1])
        if hit_horizon:
            break
        if exited:
            r = float(np.linalg.norm(x))
            if rng.random() < (shortcut.inner / r) ** (d - 2):
                x = exterior_return(x, shortcut.inner, rng)
                prev = float(f(x[None])[0])
                returns += 1
            else:
                termination = "escaped"
                break
        if steps >= max_steps:
            termination = "step_limit"
            break
    return {"value": y, "fine": y_fine, "steps": steps, "returns": returns, "end": x,
            "termination": termination}


def _diffusion_batch(coeffs: DiffusionCoefficients, x0, dt, f, rngs, shortcut: Shortcut | None,
                     horizon: float | None, sanity: float, block: int = 1024,
                     max_steps: int = 50_000_000) -> dict:
    """Euler-Maruyama for a batch of paths, vectorized across paths.

    Each path draws its noise from its own generator in blocks aligned to the
    global step index, so a path's trajectory does not depend on its batch.
    """
    B, d = len(rngs), x0.size
    x = np.tile(np.asarray(x0, dtype=float), (B, 1))
    prev = f(x)
    y = np.zeros(B)
    active = np.ones(B, dtype=bool)
    steps = np.zeros(B, dtype=np.int64)
    term = np.array(["horizon_reached"] * B, dtype=object)
    sq = math.sqrt(dt)
    n_max = int(round(horizon / dt)) if horizon is not None else max_steps
    step_index = 0
    while active.any() and step_index < n_max:
        idx = np.flatnonzero(active)
        z = np.zeros((B, block, d))
        for i in idx:
            z[i] = rngs[i].standard_normal((block, d))
        for s in range(min(block, n_max - step_index)):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            xa = x[idx]
            drift = coeffs.divergence(xa)
            noise = (_sqrt2a(coeffs.matrix(xa)) @ z[idx, s, :, None])[..., 0]
            step = drift * dt + noise * sq
            if np.any(np.linalg.norm(step, axis=1) > sanity):
                raise StepTooLarge(f"Euler step exceeds sanity radius {sanity:.3g}")
            xn = xa + step
            fn = f(xn)
            y[idx] += 0.5 * dt * (prev[idx] + fn)
            x[idx] = xn
            prev[idx] = fn
            steps[idx] += 1
            if shortcut is not None:
                out = idx[np.einsum("ij,ij->i", xn, xn) >= shortcut.outer**2]
                for i in out:
                    r = float(np.linalg.norm(x[i]))
                    if rngs[i].random() < (shortcut.inner / r) ** (d - 2):
                        x[i] = exterior_return(x[i], shortcut.inner, rngs[i])
                        prev[i] = float(f(x[i][None])[0])
                    else:
                        active[i] = False
                        term[i] = "escaped"
        step_index += block
    if horizon is None:
        term[active] = "step_limit"
    return {"value": y, "steps": steps, "termination": term, "end": x}


# ---------------------------------------------------------------------------
# processes and Monte Carlo drivers


@dataclass
class ProcessSpec:
    kind: str
    dim: int
    kernel: JumpKernel | None = None
    coeffs: DiffusionCoefficients | None = None

    def __post_init__(self):
        if self.kind not in ("cpp", "brownian", "diffusion"):
            raise ValueError(f"unknown process kind {self.kind!r}")
        if self.kind == "cpp" and self.kernel is None:
            raise ValueError("cpp process needs a kernel")
        if self.kind == "diffusion" and self.coeffs is None:
            raise ValueError("diffusion process needs coefficients")


@dataclass
class SimulationSettings:
    stop: StopRule = field(default_factory=StopRule)
    dt: float = 1e-3
    threads: int = 1
    stream: int = 0
    refine_paths: int = 0
    shortcut_eps: float = 1e-4
    shortcut_ratio: float = 1.5


def _shortcut_for(f, settings: SimulationSettings, scale: float = 1.0) -> Shortcut:
    center = np.asarray(getattr(f, "center", 0.0), dtype=float)
    inner = float(f.support_radius(settings.shortcut_eps)) + float(np.linalg.norm(center))
    inner = max(inner, 1.0)
    return Shortcut(inner * scale, settings.shortcut_ratio * inner * scale)


def simulate_functionals(process: ProcessSpec, f, x0, n_paths: int, seed: int,
                         settings: SimulationSettings | None = None) -> dict:
    """Pathwise ``Y(f)`` for ``n_paths`` independent paths, in path-index order.

    Returned arrays: ``value``; ``tail`` (far-field estimate of the potential
    not yet collected at the stop); ``atom`` (first holding time, jump chains);
    ``work`` (jumps or steps); ``fine`` (dt/2 refinement for the first
    ``refine_paths`` Brownian paths, NaN elsewhere).
    """
    settings = settings or SimulationSettings()
    x0 = np.asarray(x0, dtype=float)
    d = x0.size
    stream = settings.stream

    if process.kind == "cpp":
        kernel = process.kernel
        stop = settings.stop
        if stop.adaptive and stop.radius is None:
            stop = StopRule(stop.horizon, True, stop.eps_tail, float(f.support_radius(1e-3)),
                            stop.window, stop.max_jumps)
        tail_fn = _tail_function(kernel.sigma(), f)

        def job(a, b):
            vals, tails, atoms, work = (np.zeros(b - a) for _ in range(4))
            for j, i in enumerate(range(a, b)):
                res = _cpp_engine(kernel, x0, stop, path_rng(seed, i, stream), f, tail_fn)
                vals[j], atoms[j], work[j] = res["value"], res["atom"], res["jumps"]
                tails[j] = tail_fn(res["end"])
            return {"value": vals, "tail": tails, "atom": atoms, "work": work,
                    "fine": np.full(b - a, np.nan)}

        return run_chunked(job, n_paths, settings.threads)

    if process.kind == "brownian":
        sigma = math.sqrt(2.0) * np.eye(d)
        shortcut = _shortcut_for(f, settings)

        def job(a, b):
            vals, work, fine = np.zeros(b - a), np.zeros(b - a), np.full(b - a, np.nan)
            for j, i in enumerate(range(a, b)):
                rr = path_rng(seed, i, stream + 1000) if i < settings.refine_paths else None
                res = _walk_engine(x0, settings.dt, sigma, f, path_rng(seed, i, stream), shortcut, None, rr)
                vals[j], work[j] = res["value"], res["steps"]
                if rr is not None:
                    fine[j] = res["fine"]
            return {"value": vals, "tail": np.zeros(b - a), "atom": np.zeros(b - a), "work": work,
                    "fine": fine}

        return run_chunked(job, n_paths, settings.threads)

    coeffs = process.coeffs
    lo, hi = check_ellipticity(coeffs)
    shortcut = None
    horizon = settings.stop.horizon
    if coeffs.far_field_scale is not None:
        sc = _shortcut_for(f, settings)
        if sc.inner >= coeffs.far_field_radius:
            shortcut, horizon = sc, None
    if coeffs.constant is not None and shortcut is not None:
        sigma = _sqrt2a(coeffs.constant)

        def job(a, b):
            vals, work, fine = np.zeros(b - a), np.zeros(b - a), np.full(b - a, np.nan)
            for j, i in enumerate(range(a, b)):
                rr = path_rng(seed, i, stream + 1000) if i < settings.refine_paths else None
                res = _walk_engine(x0, settings.dt, sigma, f, path_rng(seed, i, stream), shortcut, None, rr)
                vals[j], work[j] = res["value"], res["steps"]
                if rr is not None:
                    fine[j] = res["fine"]
            return {"value": vals, "tail": np.zeros(b - a), "atom": np.zeros(b - a), "work": work,
                    "fine": fine}

        return run_chunked(job, n_paths, settings.threads)

    sanity = max(1.0, 50.0 * math.sqrt(2.0 * hi * settings.dt))
    # generator c Laplacian has Green density far_field_green(2c I, .)
    tail_fn = _tail_function(2.0 * (coeffs.far_field_scale or hi) * np.eye(d), f)

    def job(a, b):
        rngs = [path_rng(seed, i, stream) for i in range(a, b)]
        res = _diffusion_batch(coeffs, x0, settings.dt, f, rngs, shortcut, horizon, sanity)
        tails = np.zeros(b - a)
        if horizon is not None:
            tails[:] = [tail_fn(e) for e in res["end"]]
        return {"value": res["value"], "tail": tails, "atom": np.zeros(b - a),
                "work": res["steps"].astype(float), "fine": np.full(b - a, np.nan)}

    return run_chunked(job, n_paths, settings.threads)


# ---------------------------------------------------------------------------
# occupation measures


def validate_partition(lower, upper) -> tuple[np.ndarray, np.ndarray]:
    lo = np.atleast_2d(np.asarray(lower, dtype=float))
    hi = np.atleast_2d(np.asarray(upper, dtype=float))
    if lo.shape != hi.shape:
        raise ValueError("box corner arrays differ in shape")
    if np.any(hi <= lo):
        raise ValueError("every box needs upper > lower")
    for i in range(len(lo)):
        overlap = np.all((lo[i] < hi[i + 1:]) & (lo[i + 1:] < hi[i]), axis=1)
        if overlap.any():
            j = i + 1 + int(np.flatnonzero(overlap)[0])
            raise OverlappingBoxes(f"boxes {i} and {j} overlap")
    return lo, hi


def occupation_measure(path: PathSample, lower, upper) -> OccupationMeasure:
    """Time spent in each half-open box ``[lower, upper)``.

    Jump chains accumulate holding times exactly; discretized paths use the
    trapezoid weights of :func:`integrate_along_discretized`.
    """
    lo, hi = validate_partition(lower, upper)
    inside = np.all((path.states[:, None, :] >= lo[None]) & (path.states[:, None, :] < hi[None]), axis=-1)
    if path.kind == "jump_chain":
        w = path.holding
        atom = float(path.holding[0])
    else:
        w = np.full(len(path.states), path.dt)
        cuts = [0, *[b + 1 for b in path.breaks], len(w)]
        for a, b in zip(cuts[:-1], cuts[1:]):
            w[a] *= 0.5
            w[b - 1] *= 0.5
        atom = 0.0
    return OccupationMeasure(lo, hi, w @ inside, atom, float(w.sum()))


def mean_occupation(kernel: JumpKernel, x0, lower, upper, n_paths: int, seed: int,
                    stop: StopRule | None = None, threads: int = 1, stream: int = 0) -> dict:
    """Monte Carlo mean of box occupation masses for the compound Poisson process.

    The adaptive stop treats the union of boxes as the integrand; the per-box
    tail is ``|box| * far-field Green density`` at the stopping position.
    """
    lo, hi = validate_partition(lower, upper)
    x0 = np.asarray(x0, dtype=float)
    sigma = kernel.sigma()
    centers = 0.5 * (lo + hi)
    vols = np.prod(hi - lo, axis=1)
    target = _BoxUnion(lo, hi)
    stop = stop or StopRule(adaptive=True)
    if stop.adaptive and stop.radius is None:
        stop = StopRule(stop.horizon, True, stop.eps_tail, target.support_radius(0.0), stop.window,
                        stop.max_jumps)
    tail_fn = _tail_function(sigma, target)

    def job(a, b):
        m = np.zeros((b - a, len(lo)))
        tails = np.zeros((b - a, len(lo)))
        atoms = np.zeros(b - a)
        for j, i in enumerate(range(a, b)):
            res = _cpp_engine(kernel, x0, stop, path_rng(seed, i, stream), target, tail_fn, boxes=(lo, hi))
            m[j] = res["masses"]
            atoms[j] = res["atom"]
            tails[j] = vols * far_field_green(sigma, res["end"][None, :] - centers)
        return {"masses": m, "tails": tails, "atom": atoms}

    out = run_chunked(job, n_paths, threads)
    n = n_paths
    return {
        "mean": out["masses"].mean(axis=0),
        "se": out["masses"].std(axis=0, ddof=1) / math.sqrt(n),
        "tail": out["tails"].mean(axis=0),
        "atom_mean": float(out["atom"].mean()),
        "atom_se": float(out["atom"].std(ddof=1) / math.sqrt(n)),
        "n_paths": n,
    }


class _BoxUnion:
    """Indicator of a union of disjoint boxes, shaped like a test function."""

    def __init__(self, lo, hi):
        self.lo, self.hi = lo, hi
        self.center = np.zeros(lo.shape[1])

    def __call__(self, x):
        x = np.atleast_2d(x)
        return np.any(np.all((x[:, None, :] >= self.lo[None]) & (x[:, None, :] < self.hi[None]), axis=-1),
                      axis=1).astype(float)

    def l1_norm(self):
        return float(np.prod(self.hi - self.lo, axis=1).sum())

    def sup_norm(self):
        return 1.0

    def support_radius(self, eps):
        corners = np.maximum(np.abs(self.lo), np.abs(self.hi))
        return float(np.max(np.linalg.norm(corners, axis=1)))
