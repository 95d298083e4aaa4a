"""Green densities of jump processes and Brownian motion.

Two independent routes compute the regular part ``G_0 = sum_{n>=1} a_n`` of
the Green measure ``delta + G_0 dx``:

* :func:`green_series` sums lattice iterates ``a_n`` and closes the series with
  the local-CLT tail ``sum_{m>N} (2 pi m)^{-d/2} det(S)^{-1/2} exp(-x.S^-1.x / 2m)``.
* :func:`green_fourier` inverts ``a_hat / (1 - a_hat)``.  The ``2/(k.S.k)``
  pole at the origin is removed with a Gaussian-damped copy whose inverse
  transform is known in closed form; the smooth remainder goes through the
  lattice inverse FFT.

Resolvent kernels ``G_lambda = sum a_n (1+lambda)^{-n}`` and transition
densities use the same machinery.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import (
    CoincidingPoints,
    DimensionTooSmall,
    GridTooSmall,
    InsufficientDecade,
    NonpositiveLambda,
    SingularityOrderViolation,
    SlowConvergence,
)
from .kernels import GridSpec, JumpKernel

EXPLICIT_TAIL_TERMS = 512


@dataclass
class GreenField:
    grid: GridSpec
    values: np.ndarray
    lam: float = 0.0
    method: str = "series"
    truncation_info: dict = field(default_factory=dict)
    kernel: dict = field(default_factory=dict)

    @property
    def origin_value(self) -> float:
        return float(self.values[self.grid.origin_index])

    def radius(self) -> np.ndarray:
        return np.sqrt(self.grid.radius2())

    def within(self, radius: float) -> np.ndarray:
        return self.grid.radius2() <= radius * radius + 1e-12

    def symmetry_error(self) -> float:
        """Max deviation from ``G(-x) = G(x)`` over paired lattice points."""
        inner = self.values[(slice(1, None),) * self.grid.dim]
        return float(np.max(np.abs(inner - inner[(slice(None, None, -1),) * self.grid.dim])))

    def coordinate_symmetry_error(self) -> float:
        inner = self.values[(slice(1, None),) * self.grid.dim]
        return float(max(np.max(np.abs(inner - np.flip(inner, axis=ax))) for ax in range(self.grid.dim)))

    def metadata(self) -> dict:
        return {
            "method": self.method,
            "lambda": self.lam,
            "grid": self.grid.to_dict(),
            "kernel": self.kernel,
            "truncation_info": self.truncation_info,
            "origin_value": self.origin_value,
        }


@dataclass
class TransitionDensity:
    t: float
    atom_weight: float
    regular: np.ndarray
    grid: GridSpec
    truncation_info: dict = field(default_factory=dict)

    @property
    def regular_mass(self) -> float:
        return float(self.regular.sum() * self.grid.cell_volume)

    @property
    def total_mass(self) -> float:
        return self.atom_weight + self.regular_mass


@dataclass
class DecayFit:
    model: str
    constants: dict
    max_violation: float
    decades: float
    fit_radii: tuple[float, float]
    ls_intercept: float

    @property
    def rate(self) -> float:
        return self.constants["b"] if self.model == "gaussian_bound" else self.constants["B"]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "constants": self.constants,
            "max_violation": self.max_violation,
            "decades": self.decades,
            "fit_radii": list(self.fit_radii),
            "ls_intercept": self.ls_intercept,
        }


# ---------------------------------------------------------------------------
# asymptotic helpers


def _whitened_radius2(grid: GridSpec, sigma: np.ndarray) -> np.ndarray:
    """``x . S^{-1} . x`` over the lattice."""
    prec = np.linalg.inv(sigma)
    mesh = grid.mesh()
    out = 0.0
    for i in range(grid.dim):
        for j in range(grid.dim):
            if prec[i, j] != 0.0:
                out = out + prec[i, j] * mesh[i] * mesh[j]
    return np.broadcast_to(out, grid.shape).copy()


def _quadratic_form_freq(grid: GridSpec, sigma: np.ndarray) -> np.ndarray:
    mesh = grid.freq_mesh()
    out = 0.0
    for i in range(grid.dim):
        for j in range(grid.dim):
            if sigma[i, j] != 0.0:
                out = out + sigma[i, j] * mesh[i] * mesh[j]
    return np.broadcast_to(out, grid.shape).copy()


def _gl_panels(upper: float, width: float = 0.5, order: int = 8):
    n_panels = max(1, int(math.ceil(upper / width)))
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, upper, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def incomplete_bessel_tail(A: np.ndarray, B: float, a: float, p: float) -> np.ndarray:
    """``int_a^inf exp(-B m) m^{-p} exp(-A/m) dm`` for ``p > 1``, elementwise in ``A >= 0``.

    ``B = 0`` uses the incomplete gamma function; ``B > 0`` integrates in
    ``u = log(m / a)`` with composite Gauss-Legendre panels.
    """
    A = np.asarray(A, dtype=float)
    if B < 0 or a <= 0 or p <= 1:
        raise ValueError("need B >= 0, a > 0, p > 1")
    if B == 0.0:
        out = np.empty_like(A)
        pos = A > 0
        ap = A[pos]
        out[pos] = ap ** (1.0 - p) * special.gamma(p - 1.0) * special.gammainc(p - 1.0, ap / a)
        out[~pos] = a ** (1.0 - p) / (p - 1.0)
        return out
    amax = float(A.max()) if A.size else 0.0
    upper = math.log(max(amax, a) / a) + min(40.0 / (p - 1.0), math.log1p(60.0 / (B * a)) + 4.0)
    # exp(-B a e^u) falls off on the scale 1/(B a) in u
    nodes, weights = _gl_panels(upper, width=min(0.5, 2.0 / (B * a)))
    m = a * np.exp(nodes)
    base = weights * np.exp(-B * m) * m ** (1.0 - p)  # includes dm = m du
    flat = A.ravel()
    out = np.empty_like(flat)
    for start in range(0, flat.size, 4096):
        chunk = flat[start:start + 4096]
        out[start:start + 4096] = np.exp(-chunk[:, None] / m[None, :]) @ base
    return out.reshape(A.shape)


def _unique_apply(values: np.ndarray, fn) -> np.ndarray:
    """Evaluate ``fn`` on the distinct entries of ``values`` only."""
    rounded = np.round(values, 9)
    uniq, inv = np.unique(rounded, return_inverse=True)
    return fn(uniq)[inv].reshape(values.shape)


def clt_density(rho2: np.ndarray, m: float, d: int, det_sigma: float) -> np.ndarray:
    return (2 * math.pi * m) ** (-d / 2) / math.sqrt(det_sigma) * np.exp(-rho2 / (2 * m))


def clt_tail(rho2: np.ndarray, first: int, d: int, det_sigma: float, lam: float = 0.0) -> np.ndarray:
    """``sum_{m >= first} (1+lam)^{-m} (2 pi m)^{-d/2} det^{-1/2} exp(-rho2 / 2m)``."""
    beta = math.log1p(lam)

    def fn(r2):
        acc = np.zeros_like(r2)
        last = first + EXPLICIT_TAIL_TERMS
        for m in range(first, last):
            acc += math.exp(-beta * m) * (2 * math.pi * m) ** (-d / 2) * np.exp(-r2 / (2 * m))
        rest = incomplete_bessel_tail(r2 / 2.0, beta, last - 0.5, d / 2.0)
        return (acc + (2 * math.pi) ** (-d / 2) * rest) / math.sqrt(det_sigma)

    return _unique_apply(rho2, fn)


def damped_pole_inverse(rho2: np.ndarray, width: float, lam: float, d: int, det_sigma: float) -> np.ndarray:
    """Inverse transform of ``exp(-k.S.k / 2 w^2) * 2 / (k.S.k + 2 lam)``.

    Equals ``det^{-1/2} 2 e^{2 lam c} int_c^inf e^{-2 lam tau} (4 pi tau)^{-d/2}
    exp(-rho2 / 4 tau) d tau`` with ``c = 1 / (2 w^2)``.
    """
    c = 1.0 / (2.0 * width**2)

    def fn(r2):
        tail = incomplete_bessel_tail(r2 / 4.0, 2.0 * lam, c, d / 2.0)
        return 2.0 * (4 * math.pi) ** (-d / 2) * math.exp(2.0 * lam * c) * tail / math.sqrt(det_sigma)

    return _unique_apply(rho2, fn)


def far_field_green(sigma: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Green density of the Gaussian limit (covariance ``sigma`` per unit time).

    ``Gamma(d/2-1) / (2 pi^{d/2} sqrt(det S)) * (z.S^{-1}.z)^{1-d/2}``: the
    large-|z| asymptote of ``G_0`` for a kernel with second moment ``sigma``.
    """
    sigma = np.asarray(sigma, dtype=float)
    d = sigma.shape[0]
    z = np.asarray(z, dtype=float)
    prec = np.linalg.inv(sigma)
    q = np.einsum("...i,ij,...j->...", z, prec, z)
    const = math.gamma(d / 2 - 1) / (2 * math.pi ** (d / 2) * math.sqrt(np.linalg.det(sigma)))
    with np.errstate(divide="ignore"):
        return const * q ** (1 - d / 2)


def _power_tail_factor(n: int, p: float, q: float) -> float:
    """``sum_{m>n} q^{m-n} (n/m)^p``."""
    m = np.arange(n + 1, n + 100_001, dtype=float)
    s = float(np.sum(np.exp((m - n) * math.log(q)) * (n / m) ** p))
    if q == 1.0:
        s += n**p * (n + 100_000.5) ** (1 - p) / (p - 1)
    return s


# ---------------------------------------------------------------------------
# series route


def green_series(
    kernel: JumpKernel,
    grid: GridSpec,
    tol: float = 1e-6,
    *,
    lam: float = 0.0,
    min_terms: int = 2,
    max_terms: int = 10_000,
    extrapolate: bool = True,
    strict: bool = True,
    closed_form: bool = True,
    mass_tol: float = 1e-3,
) -> GreenField:
    """Neumann series ``sum_n (1+lam)^{-n} a_n`` on the lattice.

    Terms are added until the estimated truncation error drops below ``tol``.
    For ``lam > 0`` the geometric bound ``||a||_inf sum_{m>N} (1+lam)^{-m}``
    may end the sum outright.  Otherwise the tail ``m > N`` is replaced by the
    local-CLT sum, and the error estimate is the sup-norm mismatch between
    ``a_N`` and its Gaussian approximation, extrapolated with the ``1/m``
    decay of that mismatch.

    Isotropic families evaluate ``a_n`` in closed form (``closed_form=True``);
    otherwise ``a_n`` comes from the lattice FFT and the number of terms is
    capped where ``a_n`` leaks more than ``mass_tol`` out of the box.
    """
    if lam < 0:
        raise NonpositiveLambda(f"lambda must be >= 0, got {lam}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if grid.dim < 3:
        raise DimensionTooSmall("the Green series diverges for d < 3")
    d = grid.dim
    q = 1.0 / (1.0 + lam)
    sigma = kernel.sigma()
    det_s = float(np.linalg.det(sigma))
    closed = closed_form and kernel.has_closed_iterates
    if closed:
        # everything is radial: work on the distinct lattice radii only
        r2_full = np.round(grid.radius2(), 9)
        r2, inverse = np.unique(r2_full, return_inverse=True)
        rho2 = r2 / sigma[0, 0]

        def term(n):
            return kernel.iterate_radial(n, r2)
    else:
        rho2 = _whitened_radius2(grid, sigma)
        state = {}

        def term(n):
            if n == 1:
                return kernel.density_on(grid)
            if "spec" not in state:
                state["spec"] = kernel.symbol_on(grid)
                state["pow"] = state["spec"].copy()
            state["pow"] *= state["spec"]
            return grid.invert(state["pow"])

    a_sup = float(kernel.density_on(grid).max())
    total = np.zeros(rho2.shape)
    n = 0
    err = math.inf
    geom = math.inf
    reason = "max_terms"
    while n < max_terms:
        if not closed and kernel.escaped_mass(n + 1, grid) > mass_tol:
            reason = "grid_limit"
            break
        n += 1
        last = term(n)
        total += q**n * last
        if lam > 0:
            geom = a_sup * q ** (n + 1) / (1.0 - q)
            if geom < tol:
                reason = "geometric_bound"
                break
        if extrapolate:
            mismatch = float(np.max(np.abs(last - clt_density(rho2, n, d, det_s))))
            err = q**n * mismatch * _power_tail_factor(n, d / 2 + 1, q)
        else:
            err = q**n * float(last.max()) * _power_tail_factor(n, d / 2, q)
        if n >= min_terms and err < tol:
            reason = "tail_estimate"
            break

    converged = reason in ("geometric_bound", "tail_estimate")
    if not converged and strict:
        raise SlowConvergence(
            f"series tail error {err:.3g} >= tol {tol:g} after {n} terms ({reason}); "
            "enlarge the grid or relax tol"
        )
    info = {"terms": n, "stop_reason": reason, "converged": converged,
            "iterates": "closed_form" if closed else "lattice_fft",
            "tail_error_estimate": 0.0 if reason == "geometric_bound" else err,
            "geometric_bound": geom if lam > 0 else None,
            "escaped_mass_last_term": 0.0 if closed else kernel.escaped_mass(max(n, 1), grid)}
    if extrapolate and reason != "geometric_bound":
        total += clt_tail(rho2, n + 1, d, det_s, lam)
        info["tail"] = "clt"
    else:
        info["tail"] = "none"
    if closed:
        total = total[inverse].reshape(grid.shape)
    return GreenField(grid, total, lam, "series", info, kernel.params())


def resolvent_kernel(kernel: JumpKernel, lam: float, grid: GridSpec, tol: float = 1e-8, **kw) -> GreenField:
    """Regular part ``G_lambda = sum_n a_n / (1+lambda)^n`` of the resolvent kernel.

    The resolvent ``(lambda - L)^{-1}`` has kernel ``(1+lambda)^{-1} (delta + G_lambda)``.
    """
    if lam < 0:
        raise NonpositiveLambda(f"lambda must be >= 0, got {lam}")
    if lam == 0 and grid.dim < 3:
        raise DimensionTooSmall("G_0 requires d >= 3")
    return green_series(kernel, grid, tol, lam=lam, **kw)


# ---------------------------------------------------------------------------
# Fourier route


def check_singularity_order(kernel: JumpKernel, sigma: np.ndarray | None = None, probe: float = 0.02) -> float:
    """Ratio ``(1 - a_hat(k)) / (k.S.k / 2)`` at small ``|k|``; must be close to 1."""
    d = kernel.dim
    sigma = kernel.sigma() if sigma is None else sigma
    if np.linalg.eigvalsh(sigma).min() <= 0:
        raise SingularityOrderViolation("degenerate second moment: 1 - a_hat vanishes faster than |k|^2")
    scale = math.sqrt(np.trace(sigma) / d)
    dirs = np.vstack([np.eye(d), np.ones((1, d)) / math.sqrt(d)])
    k = dirs * (probe / scale)
    quad = 0.5 * np.einsum("ni,ij,nj->n", k, sigma, k)
    ratio = (1.0 - kernel.symbol(k)) / quad
    if np.any(ratio < 0.5) or np.any(ratio > 1.5):
        raise SingularityOrderViolation(f"(1 - a_hat)/(k.S.k/2) = {ratio} near k = 0")
    return float(ratio.min())


def _remainder_at_origin(kernel, sigma, width, lam, subtract_first):
    """Limit of the smooth remainder at k = 0, by Richardson on small radii."""
    d = kernel.dim
    scale = math.sqrt(np.trace(sigma) / d)
    dirs = np.vstack([np.eye(d), np.ones((1, d)) / math.sqrt(d)])

    def rem(eps):
        k = dirs * eps
        ah = kernel.symbol(k)
        ksk = np.einsum("ni,ij,nj->n", k, sigma, k)
        val = ah / (1.0 - ah + lam) - np.exp(-ksk / (2 * width**2)) * 2.0 / (ksk + 2 * lam)
        if subtract_first:
            val = val - ah
        return val

    e = 2e-3 / scale
    r1, r2 = rem(e), rem(2 * e)
    return (4 * r1 - r2) / 3.0


def green_fourier(
    kernel: JumpKernel,
    grid: GridSpec,
    *,
    lam: float = 0.0,
    width: float = 0.5,
    subtract_first: bool = True,
) -> GreenField:
    """``G_lam(x) = (2 pi)^{-d} int a_hat e^{ikx} / (1 - a_hat + lam) dk`` by singular subtraction.

    ``width`` is the frequency scale of the Gaussian damping on the subtracted
    pole.  With ``subtract_first`` the slowly decaying ``a_hat`` term is
    handled in real space (exact density) instead of through the FFT.
    """
    if lam < 0:
        raise NonpositiveLambda(f"lambda must be >= 0, got {lam}")
    if grid.dim < 3:
        raise DimensionTooSmall("the inversion integral diverges for d < 3")
    d = grid.dim
    sigma = kernel.sigma()
    det_s = float(np.linalg.det(sigma))
    check_singularity_order(kernel, sigma)

    ah = kernel.symbol_on(grid)
    ksk = _quadratic_form_freq(grid, sigma)
    with np.errstate(divide="ignore", invalid="ignore"):
        remainder = ah / (1.0 - ah + lam) - np.exp(-ksk / (2 * width**2)) * 2.0 / (ksk + 2 * lam)
    if subtract_first:
        remainder -= ah
    limits = _remainder_at_origin(kernel, sigma, width, lam, subtract_first)
    zero = (0,) * d
    if lam == 0.0:
        remainder[zero] = float(np.mean(limits))

    values = grid.invert(remainder)
    if subtract_first:
        values += kernel.density_on(grid)
    rho2 = _whitened_radius2(grid, sigma)
    values += damped_pole_inverse(rho2, width, lam, d, det_s)

    kinf = np.zeros(grid.shape)
    for kk in grid.freq_mesh():
        kinf = np.maximum(kinf, np.abs(kk))
    edge = kinf >= kinf.max() - 1e-12
    dk = 2 * np.pi / (grid.points_per_axis * grid.spacing)
    cell = (dk / (2 * np.pi)) ** d
    info = {
        "width": width,
        "subtract_first": subtract_first,
        "nyquist_residual": float(np.max(np.abs(remainder[edge]))),
        "origin_limit_spread": float(np.ptp(limits)) * cell,
        "error_estimate": float(np.max(np.abs(remainder[edge]))) * np.sum(edge) * cell
        + float(np.ptp(limits)) * cell,
    }
    return GreenField(grid, values, lam, "fourier", info, kernel.params())


def resolvent_split(kernel: JumpKernel, lam: float, grid: GridSpec, **kw) -> tuple[float, GreenField]:
    """Atom weight and regular part of the resolvent kernel via the symbol split.

    ``1/(1 - a_hat + lam) = 1/(1+lam) + a_hat / ((1+lam)(1 - a_hat + lam))``:
    the first term is a point mass of weight ``1/(1+lam)`` and the second
    inverts to ``G_lam / (1+lam)``.
    """
    if lam <= 0:
        raise NonpositiveLambda("the resolvent split needs lambda > 0")
    g = green_fourier(kernel, grid, lam=lam, **kw)
    reg = GreenField(grid, g.values / (1.0 + lam), lam, "fourier_split", g.truncation_info, g.kernel)
    return 1.0 / (1.0 + lam), reg


# ---------------------------------------------------------------------------
# transition densities


def _poisson_terms(t: float, tol: float) -> int:
    """Smallest N with Chernoff bound ``P(Pois(t) > N) <= tol``."""
    n = max(1, int(math.ceil(t)))
    while True:
        k = n + 1
        if k > t:
            log_bound = -t + k * (1.0 + math.log(t) - math.log(k))
            if log_bound < math.log(tol):
                return n
        n += 1


def transition_density(
    kernel: JumpKernel,
    t: float,
    grid: GridSpec,
    *,
    method: str = "series",
    tol: float = 1e-10,
    mass_tol: float = 1e-3,
) -> TransitionDensity:
    """``p(t, .) = e^{-t} delta + p_reg(t, .)`` with ``p_reg = sum_{n>=1} Pois(n; t) a_n``.

    ``method="fourier"`` inverts ``e^{t(a_hat-1)} - e^{-t}`` instead (the
    first-order term ``t e^{-t} a`` is added in real space).
    """
    if not t > 0:
        raise ValueError("t must be positive")
    n_terms = _poisson_terms(t, tol)
    ns = np.arange(1, n_terms + 1)
    weights = np.exp(ns * math.log(t) - t - special.gammaln(ns + 1))
    leak = float(sum(w * kernel.escaped_mass(int(n), grid) for n, w in zip(ns, weights)))
    if leak > mass_tol:
        raise GridTooSmall(f"p({t}) leaks {leak:.3g} of its mass outside the box")
    atom = math.exp(-t)
    if method == "series":
        spectrum = kernel.symbol_on(grid)
        acc_spec = np.zeros(grid.shape)
        power = spectrum.copy()
        for n, w in zip(ns[1:], weights[1:]):
            power = power * spectrum
            acc_spec += w * power
        regular = weights[0] * kernel.density_on(grid) + grid.invert(acc_spec)
    elif method == "fourier":
        ah = kernel.symbol_on(grid)
        spec = math.exp(-t) * (np.expm1(t * ah) - t * ah)
        regular = grid.invert(spec) + t * math.exp(-t) * kernel.density_on(grid)
    else:
        raise ValueError(f"unknown method {method!r}")
    tail_log = -t + (n_terms + 1) * (1.0 + math.log(t) - math.log(n_terms + 1))
    info = {"terms": int(n_terms), "poisson_tail_bound": math.exp(tail_log), "escaped_mass": leak,
            "method": method}
    return TransitionDensity(t, atom, regular, grid, info)


def periodic_convolve(u: np.ndarray, v: np.ndarray, grid: GridSpec) -> np.ndarray:
    fu = np.fft.fftn(grid.to_fft_order(u))
    fv = np.fft.fftn(grid.to_fft_order(v))
    return grid.to_centered(np.fft.ifftn(fu * fv).real) * grid.cell_volume


def chapman_kolmogorov_error(kernel: JumpKernel, t: float, s: float, grid: GridSpec, **kw) -> float:
    """Sup-norm gap between ``p(t+s)`` and ``p(t) * p(s)`` with atoms handled exactly."""
    pt = transition_density(kernel, t, grid, **kw)
    ps = transition_density(kernel, s, grid, **kw)
    pts = transition_density(kernel, t + s, grid, **kw)
    composed = pt.atom_weight * ps.regular + ps.atom_weight * pt.regular + periodic_convolve(pt.regular, ps.regular, grid)
    return float(np.max(np.abs(composed - pts.regular)))


def green_time_integral(kernel: JumpKernel, grid: GridSpec, horizon: float) -> tuple[GreenField, np.ndarray]:
    """``int_0^T p_reg(t, .) dt`` and the local-CLT estimate of ``int_T^inf p_reg dt``.

    The time integral is exact per frequency:
    ``(1 - e^{-T(1-a_hat)})/(1-a_hat) - (1 - e^{-T})``.  Returns the field of
    the finite-horizon integral and the tail estimate (same lattice).
    """
    T = float(horizon)
    ah = kernel.symbol_on(grid)
    gap = 1.0 - ah
    with np.errstate(divide="ignore", invalid="ignore"):
        body = np.where(gap > 1e-12, -np.expm1(-T * gap) / gap, T - 0.5 * T * T * gap)
    body -= -math.expm1(-T)
    first = 1.0 - math.exp(-T) * (1.0 + T)
    body -= first * ah
    values = grid.invert(body) + first * kernel.density_on(grid)

    sigma = kernel.sigma()
    d = grid.dim
    rho2 = _whitened_radius2(grid, sigma)
    tail = _unique_apply(
        rho2,
        lambda r2: (2 * math.pi) ** (-d / 2) / math.sqrt(np.linalg.det(sigma))
        * incomplete_bessel_tail(r2 / 2.0, 0.0, T, d / 2.0),
    )
    info = {"horizon": T}
    return GreenField(grid, values, 0.0, "time_integral", info, kernel.params()), tail


def clt_tail_error_estimate(kernel: JumpKernel, grid: GridSpec, horizon: float) -> float:
    """Error of the Gaussian tail ``int_T^inf`` at the origin.

    The relative gap between ``p_reg(t, 0)`` and its Gaussian approximation is
    measured at the largest ``t0 <= T`` the box resolves (6 standard
    deviations) and carried to ``T`` with its ``1/t`` decay; the tail error is
    then about ``gap(T) * tail * (d-2)/d``.
    """
    d = grid.dim
    sigma = kernel.sigma()
    det_s = float(np.linalg.det(sigma))
    t0 = min(float(horizon), (grid.half_extent / 6.0) ** 2 / float(np.max(np.diag(sigma))))
    p = transition_density(kernel, t0, grid, method="fourier", mass_tol=1.0)
    clt0 = (2 * math.pi * t0) ** (-d / 2) / math.sqrt(det_s)
    gap = abs(p.regular[grid.origin_index] / clt0 - 1.0) * t0 / horizon
    tail0 = (2 * math.pi) ** (-d / 2) / math.sqrt(det_s) * horizon ** (1 - d / 2) / (d / 2 - 1)
    return gap * tail0 * (d - 2) / d


# ---------------------------------------------------------------------------
# Brownian motion


def brownian_constant(d: int) -> float:
    """``c_d = Gamma(d/2 - 1) / (4 pi^{d/2})`` for the process generated by the Laplacian."""
    if d < 3:
        raise DimensionTooSmall("Brownian motion is recurrent for d < 3")
    return math.gamma(d / 2 - 1) / (4 * math.pi ** (d / 2))


def brownian_green(d: int, x, y) -> float | np.ndarray:
    """``c_d |x - y|^{2-d}``, the Green density of the Laplacian (not Laplacian/2)."""
    c = brownian_constant(d)
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.linalg.norm(diff, axis=-1)
    if np.any(r == 0):
        raise CoincidingPoints("Green density is singular at x = y")
    out = c * r ** (2.0 - d)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# decay fits


def decay_fit(field_: GreenField, model: str = "gaussian_bound", min_decades: float = 2.0) -> DecayFit:
    """Fit an upper bound ``C exp(-b |x|^2 / 2)`` or ``A exp(-B |x|)`` to a field.

    The exponent is the least-squares slope of the log of the radial shell
    maxima (origin cell excluded); the prefactor is then raised until the
    bound covers every lattice point.
    """
    if model not in ("gaussian_bound", "exponential_bound"):
        raise ValueError(f"unknown model {model!r}")
    grid = field_.grid
    h = grid.spacing
    r = np.sqrt(grid.radius2()).ravel()
    v = field_.values.ravel()
    keep = r > 0.5 * h
    r, v = r[keep], v[keep]
    shell = np.rint(r / h).astype(np.int64)
    nshell = int(shell.max()) + 1
    env = np.full(nshell, -np.inf)
    np.maximum.at(env, shell, v)
    rad = np.zeros(nshell)
    np.maximum.at(rad, shell, r)
    ok = np.isfinite(env) & (env > 0)
    if ok.sum() < 3:
        raise InsufficientDecade("fewer than three positive shells")
    decades = float(np.log10(env[ok].max() / env[ok].min()))
    if decades < min_decades:
        raise InsufficientDecade(f"only {decades:.2f} decades of decay on the grid (need {min_decades})")
    xs = 0.5 * rad[ok] ** 2 if model == "gaussian_bound" else rad[ok]
    slope, intercept = np.polyfit(xs, np.log(env[ok]), 1)
    rate = -float(slope)
    expo = 0.5 * r**2 if model == "gaussian_bound" else r
    with np.errstate(over="ignore"):
        prefactor = float(np.max(v * np.exp(rate * expo))) * (1.0 + 1e-12)
        bound = prefactor * np.exp(-rate * expo)
    violation = float(np.max(v - bound))
    consts = {"C1": prefactor, "b": rate} if model == "gaussian_bound" else {"A": prefactor, "B": rate}
    return DecayFit(model, consts, violation, decades, (float(rad[ok].min()), float(rad[ok].max())), float(intercept))


def choose_horizon(kernel: JumpKernel, grid: GridSpec, rtol: float = 2e-4, start: float = 25.0) -> float:
    """Smallest ``T = start * 2^j`` whose Gaussian-tail error estimate at the origin is below
    ``rtol`` times the reconstructed ``G_0(0)``.

    ``T`` is capped at ``(L/2)^2 / s_max`` so that ``p(T)`` still fits in the box.
    """
    cap = (grid.half_extent / 2.0) ** 2 / float(np.max(np.diag(kernel.sigma())))
    T = start
    while True:
        body, tail = green_time_integral(kernel, grid, T)
        ref = body.origin_value + float(tail[grid.origin_index])
        if clt_tail_error_estimate(kernel, grid, T) <= rtol * ref or 2 * T > cap:
            return T
        T *= 2.0
