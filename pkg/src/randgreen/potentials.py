"""Test functions, exact potentials and variances, and Monte Carlo estimates.

For a process started at ``x`` with Green measure ``delta_x + G(. - x) dy``:

    u_f(x) = E^x Y(f) = f(x) + int f(y) G(x - y) dy

and, at ``x = 0``, the variance of ``Y(f)`` is

    V(f) = f(0)^2 + 2 int f^2 G + 2 int f G (f * G) - (int f G)^2 .
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, signal, special

from .errors import NotInCL, SupportEscapesGrid, SymmetryViolation
from .green import GreenField, brownian_constant, green_series
from .kernels import GridSpec, JumpKernel
from .simulate import ProcessSpec, SimulationSettings, simulate_functionals

_GL3 = np.polynomial.legendre.leggauss(3)


# ---------------------------------------------------------------------------
# test functions


class TestFunction:
    """Base class: ``f(points)`` for points of shape ``(m, d)``."""

    __test__ = False  # not a pytest class
    family = ""
    in_cl = True

    def __init__(self, dim: int, amplitude: float = 1.0, center=None):
        self.dim = int(dim)
        self.amplitude = float(amplitude)
        self.center = np.zeros(self.dim) if center is None else np.asarray(center, dtype=float)
        if self.center.shape != (self.dim,):
            raise ValueError("center has the wrong dimension")

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self._eval(x - self.center)

    def _eval(self, y):
        raise NotImplementedError

    def sup_norm(self) -> float:
        raise NotImplementedError

    def l1_norm(self) -> float:
        raise NotImplementedError

    def support_radius(self, eps: float) -> float:
        """Radius about ``center`` beyond which ``|f| <= eps * sup|f|``."""
        raise NotImplementedError

    def outside_l1(self, radius: float) -> float:
        """Upper bound for ``int_{|y - center| > radius} |f|``."""
        raise NotImplementedError

    def cell_average(self, axes: list[np.ndarray], h: float, power: int = 1) -> np.ndarray:
        """Average of ``f^power`` over the cubes of side ``h`` centered on the product of ``axes``.

        Generic fallback: 3-point Gauss-Legendre per axis.
        """
        nodes, weights = _GL3
        mesh = np.meshgrid(*axes, indexing="ij")
        out = np.zeros(mesh[0].shape)
        for idx in np.ndindex(*(3,) * self.dim):
            pts = np.stack([m.ravel() + 0.5 * h * nodes[i] for m, i in zip(mesh, idx)], axis=-1)
            w = np.prod([weights[i] for i in idx]) / 2**self.dim
            out += w * (self(pts) ** power).reshape(out.shape)
        return out

    def translated(self, shift) -> "TestFunction":
        import copy

        g = copy.copy(self)
        g.center = self.center + np.asarray(shift, dtype=float)
        return g

    def params(self) -> dict:
        return {"family": self.family, "dim": self.dim, "amplitude": self.amplitude,
                "center": self.center.tolist()}

    def __repr__(self):
        return f"{type(self).__name__}({self.params()})"


class ExpAbs(TestFunction):
    """``A exp(-rate * sum_k |y_k - c_k|)``."""

    family = "exp_abs"

    def __init__(self, dim, rate=1.0, amplitude=1.0, center=None):
        super().__init__(dim, amplitude, center)
        if not rate > 0:
            raise NotInCL(f"exp_abs needs rate > 0 for integrability, got {rate}")
        self.rate = float(rate)

    def _eval(self, y):
        return self.amplitude * np.exp(-self.rate * np.abs(y).sum(axis=-1))

    def sup_norm(self):
        return abs(self.amplitude)

    def l1_norm(self):
        return abs(self.amplitude) * (2.0 / self.rate) ** self.dim

    def support_radius(self, eps):
        return math.log(1.0 / eps) / self.rate

    def outside_l1(self, radius):
        # |y|_1 >= |y|_2, and the l1 ball tail is a gamma tail
        return self.l1_norm() * float(special.gammaincc(self.dim, self.rate * max(radius, 0.0)))

    def cell_average(self, axes, h, power=1):
        r = self.rate * power
        out = self.amplitude**power
        for ax, c in zip(axes, self.center):
            lo, hi = ax - c - 0.5 * h, ax - c + 0.5 * h
            out = np.multiply.outer(out, _abs_exp_integral(lo, hi, r) / h) if np.ndim(out) else \
                out * _abs_exp_integral(lo, hi, r) / h
        return out

    def params(self):
        return {**super().params(), "rate": self.rate}


def _abs_exp_integral(lo, hi, r):
    """``int_lo^hi exp(-r |s|) ds`` elementwise."""
    def prim(s):
        return np.sign(s) * (1.0 - np.exp(-r * np.abs(s))) / r
    return prim(hi) - prim(lo)


class GaussianBump(TestFunction):
    """``A exp(-|y - c|^2 / (2 sigma^2))``."""

    family = "gaussian_bump"

    def __init__(self, dim, sigma=1.0, amplitude=1.0, center=None):
        super().__init__(dim, amplitude, center)
        if not sigma > 0:
            raise NotInCL(f"gaussian_bump needs sigma > 0, got {sigma}")
        self.sigma = float(sigma)

    def _eval(self, y):
        return self.amplitude * np.exp(-0.5 * np.sum(y * y, axis=-1) / self.sigma**2)

    def sup_norm(self):
        return abs(self.amplitude)

    def l1_norm(self):
        return abs(self.amplitude) * (2 * math.pi * self.sigma**2) ** (self.dim / 2)

    def support_radius(self, eps):
        return self.sigma * math.sqrt(2.0 * math.log(1.0 / eps))

    def outside_l1(self, radius):
        return self.l1_norm() * float(special.gammaincc(self.dim / 2, 0.5 * (max(radius, 0.0) / self.sigma) ** 2))

    def cell_average(self, axes, h, power=1):
        s = self.sigma / math.sqrt(power)
        out = self.amplitude**power
        for ax, c in zip(axes, self.center):
            lo, hi = (ax - c - 0.5 * h) / (s * math.sqrt(2)), (ax - c + 0.5 * h) / (s * math.sqrt(2))
            fac = s * math.sqrt(math.pi / 2) * (special.erf(hi) - special.erf(lo)) / h
            out = np.multiply.outer(out, fac) if np.ndim(out) else out * fac
        return out

    def radial_profile(self, r):
        return self.amplitude * np.exp(-0.5 * (np.asarray(r) / self.sigma) ** 2)

    def params(self):
        return {**super().params(), "sigma": self.sigma}


class BoxIndicator(TestFunction):
    """``A 1[lower <= y < upper]``; admitted for occupation checks, not in CL."""

    family = "box_indicator"
    in_cl = False

    def __init__(self, dim, lower, upper, amplitude=1.0):
        lo, hi = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
        super().__init__(dim, amplitude, 0.5 * (lo + hi))
        if np.any(hi <= lo):
            raise ValueError("box needs upper > lower")
        self.lower, self.upper = lo, hi

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = np.all((x >= self.lower) & (x < self.upper), axis=-1)
        return self.amplitude * inside.astype(float)

    def sup_norm(self):
        return abs(self.amplitude)

    def l1_norm(self):
        return abs(self.amplitude) * float(np.prod(self.upper - self.lower))

    def support_radius(self, eps):
        return 0.5 * float(np.linalg.norm(self.upper - self.lower))

    def outside_l1(self, radius):
        return 0.0 if radius >= self.support_radius(0.0) else self.l1_norm()

    def cell_average(self, axes, h, power=1):
        out = self.amplitude**power
        for ax, lo, hi in zip(axes, self.lower, self.upper):
            frac = np.clip(np.minimum(ax + 0.5 * h, hi) - np.maximum(ax - 0.5 * h, lo), 0.0, None) / h
            out = np.multiply.outer(out, frac) if np.ndim(out) else out * frac
        return out

    def translated(self, shift):
        s = np.asarray(shift, dtype=float)
        return BoxIndicator(self.dim, self.lower + s, self.upper + s, self.amplitude)

    def params(self):
        return {**super().params(), "lower": self.lower.tolist(), "upper": self.upper.tolist()}


class TabulatedFunction(TestFunction):
    """Piecewise constant on the cells of ``grid`` (cell centers at lattice points)."""

    family = "tabulated"

    def __init__(self, grid: GridSpec, values, amplitude=1.0):
        super().__init__(grid.dim, amplitude)
        v = np.asarray(values, dtype=float)
        if v.shape != grid.shape:
            raise ValueError("values do not match the grid")
        if not np.all(np.isfinite(v)):
            raise NotInCL("tabulated values must be finite")
        self.grid = grid
        self.values = v

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float)) - self.center
        h, n = self.grid.spacing, self.grid.points_per_axis
        idx = np.floor(x / h + 0.5).astype(np.int64) + n // 2
        inside = np.all((idx >= 0) & (idx < n), axis=-1)
        idx = np.clip(idx, 0, n - 1)
        return self.amplitude * np.where(inside, self.values[tuple(idx.T)], 0.0)

    def sup_norm(self):
        return abs(self.amplitude) * float(np.abs(self.values).max())

    def l1_norm(self):
        return abs(self.amplitude) * float(np.abs(self.values).sum() * self.grid.cell_volume)

    def support_radius(self, eps):
        nz = np.abs(self.values) > eps * np.abs(self.values).max()
        if not nz.any():
            return 0.0
        r = np.sqrt(self.grid.radius2())
        return float(r[nz].max() + self.grid.spacing * math.sqrt(self.dim) / 2)

    def outside_l1(self, radius):
        r = np.sqrt(self.grid.radius2())
        return abs(self.amplitude) * float(np.abs(self.values[r > radius - self.grid.spacing]).sum()
                                           * self.grid.cell_volume)

    def params(self):
        return {**super().params(), "grid": self.grid.to_dict()}


class SumFunction(TestFunction):
    """``sum_i w_i f_i``; norms are the triangle-inequality bounds."""

    family = "sum"

    def __init__(self, terms, weights):
        super().__init__(terms[0].dim)
        self.terms, self.weights = list(terms), [float(w) for w in weights]

    def __call__(self, x):
        return sum(w * t(x) for w, t in zip(self.weights, self.terms))

    def sup_norm(self):
        return sum(abs(w) * t.sup_norm() for w, t in zip(self.weights, self.terms))

    def l1_norm(self):
        return sum(abs(w) * t.l1_norm() for w, t in zip(self.weights, self.terms))

    def support_radius(self, eps):
        return max(t.support_radius(eps) + float(np.linalg.norm(t.center)) for t in self.terms)

    def outside_l1(self, radius):
        return sum(abs(w) * t.outside_l1(max(radius - float(np.linalg.norm(t.center)), 0.0))
                   for w, t in zip(self.weights, self.terms))

    def cell_average(self, axes, h, power=1):
        if power == 1:
            return sum(w * t.cell_average(axes, h, 1) for w, t in zip(self.weights, self.terms))
        return super().cell_average(axes, h, power)

    def translated(self, shift):
        return SumFunction([t.translated(shift) for t in self.terms], self.weights)

    def params(self):
        return {"family": self.family, "terms": [t.params() for t in self.terms], "weights": self.weights}


def make_test_function(spec, dim: int | None = None) -> TestFunction:
    """Build from ``{"family": ..., params}``; ``"zero"`` is exp_abs with amplitude 0."""
    if isinstance(spec, TestFunction):
        return spec
    spec = dict(spec)
    d = int(spec.get("dim", dim if dim is not None else 3))
    fam = spec.get("family")
    amp = float(spec.get("amplitude", 1.0))
    center = spec.get("center")
    if fam == "exp_abs":
        return ExpAbs(d, float(spec.get("rate", 1.0)), amp, center)
    if fam == "zero":
        return ExpAbs(d, 1.0, 0.0, center)
    if fam == "gaussian_bump":
        return GaussianBump(d, float(spec.get("sigma", 1.0)), amp, center)
    if fam == "box_indicator":
        return BoxIndicator(d, spec.get("lower", [0.0] * d), spec.get("upper", [1.0] * d), amp)
    if fam == "sum":
        terms = [make_test_function(t, d) for t in spec["terms"]]
        return SumFunction(terms, spec.get("weights", [1.0] * len(terms)))
    raise ValueError(f"unknown test function family {fam!r}")


# ---------------------------------------------------------------------------
# norms


def cl_norm(f) -> tuple[float, float, float]:
    """``(||f||_inf, ||f||_1, ||f||_inf + ||f||_1)``.

    Closed forms for the built-in families; plain callables get lattice
    quadrature with extent doubling and :class:`NotInCL` when the 1-norm keeps
    growing.
    """
    if isinstance(f, TestFunction):
        return f.sup_norm(), f.l1_norm(), f.sup_norm() + f.l1_norm()
    return _numeric_norms(f)


def _numeric_norms(fn, dim: int = 3, start: float = 4.0, doublings: int = 5, rtol: float = 1e-3):
    prev = None
    sup = 0.0
    extent = start
    for _ in range(doublings + 1):
        grid = GridSpec(dim, extent, 32)
        vals = np.abs(np.asarray(fn(grid.points()), dtype=float))
        sup = max(sup, float(vals.max()))
        l1 = float(vals.sum() * grid.cell_volume)
        if prev is not None and abs(l1 - prev) <= rtol * max(l1, 1e-300):
            return sup, l1, sup + l1
        prev, extent = l1, 2 * extent
    raise NotInCL(f"1-norm still changing under extent doubling (last {prev:.4g})")


# ---------------------------------------------------------------------------
# exact potentials and variances


@dataclass
class ExactPotential:
    value: float
    quadrature_error: float
    escaped_support: float

    def __float__(self):
        return self.value


def _lattice_potential(f: TestFunction, x: np.ndarray, grid: GridSpec, values: np.ndarray, stride: int = 1) -> float:
    g = values[(slice(None, None, stride),) * grid.dim]
    axis = grid.axis()[::stride]
    h = grid.spacing * stride
    axes = [xi - axis for xi in x]
    cells = f.cell_average(axes, h)
    return float(np.sum(g * cells) * h**grid.dim)


def potential_exact(f: TestFunction, x, green: GreenField, support_tol: float = 1e-4) -> ExactPotential:
    """``f(x) + int f(y) G(x - y) dy`` by lattice quadrature against cell averages of ``f``."""
    x = np.asarray(x, dtype=float)
    grid = green.grid
    reach = grid.half_extent - float(np.max(np.abs(x - f.center)))
    gmax = float(np.max(np.abs(green.values)))
    escaped = f.outside_l1(reach) * gmax if reach > 0 else f.l1_norm() * gmax
    if escaped > support_tol:
        raise SupportEscapesGrid(f"mass of f outside the Green grid contributes up to {escaped:.3g}")
    fine = _lattice_potential(f, x, grid, green.values)
    coarse = _lattice_potential(f, x, grid, green.values, 2) if grid.points_per_axis % 4 == 0 else fine
    return ExactPotential(float(f(x[None])[0]) + fine, abs(fine - coarse) / 3.0, escaped)


def newtonian_potential(f: GaussianBump, d: int) -> float:
    """``c_d int f(y) |y - c|^{2-d} dy`` at the bump center by radial quadrature."""
    c = brownian_constant(d)
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    val, _ = integrate.quad(lambda r: float(f.radial_profile(r)) * r, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12)
    return c * area * val


@dataclass
class VarianceReport:
    v_measure: float
    v_three_term: float
    v_monte_carlo: float | None = None
    mc_standard_error: float | None = None
    terms: dict = field(default_factory=dict)
    discrepancy_flags: list = field(default_factory=list)

    @property
    def expansion_gap(self) -> float:
        return self.v_three_term - self.v_measure

    def to_dict(self) -> dict:
        return {**asdict(self), "expansion_gap": self.expansion_gap}


def variance_terms(f: TestFunction, green: GreenField, support_tol: float = 1e-4) -> dict:
    """Pieces of the variance at ``x = 0``.

    ``f`` is averaged over lattice cells on the inner half of the Green grid;
    ``f * G`` is a zero-padded (linear) FFT convolution against the full grid,
    so no periodic wrap-around enters.
    """
    grid = green.grid
    n = grid.points_per_axis
    if n % 4:
        raise ValueError("points_per_axis must be a multiple of 4")
    m = n // 2
    inner = (slice(n // 4, n // 4 + m),) * grid.dim
    reach = grid.half_extent / 2
    gmax = float(np.max(np.abs(green.values)))
    escaped = f.outside_l1(reach - float(np.max(np.abs(f.center)))) * gmax
    if escaped > support_tol:
        raise SupportEscapesGrid(f"f leaves the inner half of the Green grid (error up to {escaped:.3g})")
    h = grid.spacing
    axes = [grid.axis()[n // 4:n // 4 + m]] * grid.dim
    f1 = f.cell_average(axes, h, 1)
    f2 = f.cell_average(axes, h, 2)
    g_in = green.values[inner]
    vol = grid.cell_volume
    conv = signal.fftconvolve(f1, green.values, mode="full")
    fg = conv[(slice(n // 2, n // 2 + m),) * grid.dim] * vol
    f0 = float(f(np.zeros((1, grid.dim)))[0])
    return {
        "f0": f0,
        "int_fG": float(np.sum(f1 * g_in) * vol),
        "int_f2G": float(np.sum(f2 * g_in) * vol),
        "int_fG_conv": float(np.sum(f1 * g_in * fg) * vol),
        "escaped_support": escaped,
    }


def variance_exact(f: TestFunction, green: GreenField, **kw) -> float:
    """``V(f)`` at ``x = 0`` from the full measure ``delta + G dy`` (all atom terms kept)."""
    t = variance_terms(f, green, **kw)
    return t["f0"] ** 2 + 2 * t["int_f2G"] + 2 * t["int_fG_conv"] - t["int_fG"] ** 2


def variance_three_term(f: TestFunction, green: GreenField, **kw) -> float:
    """Three-term expansion ``f(0)^2 + 2 int int f(y) f(y+z) G(y) G(z) - (int f G)^2``."""
    t = variance_terms(f, green, **kw)
    return t["f0"] ** 2 + 2 * t["int_fG_conv"] - t["int_fG"] ** 2


def variance_report(f: TestFunction, green: GreenField, mc: "PotentialEstimate | None" = None) -> VarianceReport:
    t = variance_terms(f, green)
    vm = t["f0"] ** 2 + 2 * t["int_f2G"] + 2 * t["int_fG_conv"] - t["int_fG"] ** 2
    vp = t["f0"] ** 2 + 2 * t["int_fG_conv"] - t["int_fG"] ** 2
    rep = VarianceReport(vm, vp, terms=t)
    if mc is not None:
        rep.v_monte_carlo = mc.sample_variance
        rep.mc_standard_error = mc.variance_standard_error
        for name, v in (("v_measure", vm), ("v_three_term", vp)):
            if abs(v - mc.sample_variance) > 3 * mc.variance_standard_error:
                rep.discrepancy_flags.append(f"{name} differs from Monte Carlo by more than 3 SE")
    return rep


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass
class PotentialEstimate:
    mean: float
    sample_variance: float
    standard_error: float
    n_paths: int
    horizon: float
    tail_estimate: float
    seed: int
    variance_standard_error: float = 0.0
    discretization_allowance: float = 0.0
    mean_work: float = 0.0
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def potential_mc(f: TestFunction, x, process: ProcessSpec, n_paths: int, seed: int,
                 settings: SimulationSettings | None = None) -> PotentialEstimate:
    """Mean and variance of pathwise ``Y(f)`` over ``n_paths`` seeded paths.

    ``tail_estimate`` is the mean far-field estimate of the potential left
    after the stop; the sample variance is computed on ``Y + tail`` per path.
    For Brownian paths with ``settings.refine_paths > 0`` the dt/2 Richardson
    allowance ``2 |mean(Y_dt - Y_dt/2)|`` is attached.
    """
    if n_paths < 2:
        raise ValueError("need at least two paths")
    settings = settings or SimulationSettings()
    res = simulate_functionals(process, f, x, n_paths, seed, settings)
    y = res["value"] + res["tail"]
    mean_raw = float(np.mean(res["value"]))
    var = float(np.var(y, ddof=1))
    # SE of the sample variance from the fourth central moment
    c = y - y.mean()
    m4 = float(np.mean(c**4))
    var_se = math.sqrt(max(m4 - var**2, 0.0) / n_paths)
    allowance = 0.0
    fine = res["fine"][np.isfinite(res["fine"])]
    if fine.size:
        allowance = 2.0 * abs(float(np.mean(res["value"][: fine.size] - fine)))
    est = PotentialEstimate(
        mean=mean_raw,
        sample_variance=var,
        standard_error=math.sqrt(var / n_paths),
        n_paths=int(n_paths),
        horizon=settings.stop.horizon,
        tail_estimate=float(np.mean(res["tail"])),
        seed=int(seed),
        variance_standard_error=var_se,
        discretization_allowance=allowance,
        mean_work=float(np.mean(res["work"])),
    )
    if fine.size:
        est.extras["refined_paths"] = int(fine.size)
        est.extras["refined_mean_diff"] = float(np.mean(res["value"][: fine.size] - fine))
    return est


# ---------------------------------------------------------------------------
# positivity


def positivity_check(kernel: JumpKernel, grid: GridSpec | None = None, f: TestFunction | None = None,
                     green: GreenField | None = None, sym_tol: float = 1e-8) -> tuple[float, bool]:
    """``V(exp_abs) > 0`` for a kernel even in each coordinate, with the symmetry of ``G`` verified."""
    if not kernel.coordinate_even:
        raise SymmetryViolation("kernel is not even in each coordinate")
    if green is None:
        grid = grid or GridSpec(kernel.dim, 32.0, 128)
        green = green_series(kernel, grid, 1e-8, strict=False) if kernel.has_closed_iterates else \
            green_series(kernel, grid, 1e-6, strict=False)
    err = green.coordinate_symmetry_error()
    if err > sym_tol:
        raise SymmetryViolation(f"G breaks coordinate symmetry by {err:.3g}")
    f = f or ExpAbs(kernel.dim)
    v = variance_exact(f, green)
    return v, bool(v > 0)


def green_box_mass(green: GreenField, lower, upper) -> float:
    """``int_box G(y) dy`` by the product trapezoid rule on lattice points in the closed box.

    Box faces must lie on lattice planes.
    """
    grid = green.grid
    h = grid.spacing
    ax = grid.axis()
    weights = []
    for lo, hi in zip(lower, upper):
        if abs(lo / h - round(lo / h)) > 1e-9 or abs(hi / h - round(hi / h)) > 1e-9:
            raise ValueError("box faces must lie on lattice planes")
        if lo < ax[0] or hi > ax[-1]:
            raise SupportEscapesGrid("box extends beyond the Green grid")
        w = np.where((ax >= lo - 1e-12) & (ax <= hi + 1e-12), h, 0.0)
        w[np.isclose(ax, lo)] *= 0.5
        w[np.isclose(ax, hi)] *= 0.5
        weights.append(w)
    out = green.values
    for w in reversed(weights):
        out = out @ w
    return float(out)
