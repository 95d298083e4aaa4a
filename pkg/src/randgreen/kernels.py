"""Symmetric jump kernels, their Fourier symbols and iterated convolutions.

A jump kernel is a symmetric probability density ``a`` on R^d.  It drives a
compound Poisson process with unit jump rate, whose generator is
``Lf(x) = int a(x - y) (f(y) - f(x)) dy`` and whose symbol is ``a_hat(k) - 1``.

Lattice fields are stored origin-centered: along each axis the lattice points
are ``h * (j - n/2)`` for ``j = 0..n-1``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, special

from .errors import (
    AsymmetricKernel,
    DimensionTooSmall,
    GridTooSmall,
    MomentDiverges,
    NotNormalizable,
)

MIN_DIM = 3


@dataclass(frozen=True)
class GridSpec:
    """Origin-centered cubic lattice with ``points_per_axis`` points per axis."""

    dim: int
    half_extent: float
    points_per_axis: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if not self.half_extent > 0:
            raise ValueError(f"half_extent must be > 0, got {self.half_extent}")
        if self.points_per_axis < 2 or self.points_per_axis % 2:
            raise ValueError(f"points_per_axis must be even and >= 2, got {self.points_per_axis}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_extent / self.points_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def origin_index(self) -> tuple[int, ...]:
        return (self.points_per_axis // 2,) * self.dim

    def axis(self) -> np.ndarray:
        n = self.points_per_axis
        return self.spacing * (np.arange(n) - n // 2)

    def mesh(self) -> list[np.ndarray]:
        """Sparse (broadcastable) coordinate arrays."""
        ax = self.axis()
        return np.meshgrid(*([ax] * self.dim), indexing="ij", sparse=True)

    def radius2(self) -> np.ndarray:
        return sum(c * c for c in self.mesh())

    def points(self) -> np.ndarray:
        """All lattice points as an ``(n**d, d)`` array in C order."""
        mesh = np.meshgrid(*([self.axis()] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def freq_axis(self) -> np.ndarray:
        """Angular frequencies of the lattice DFT, in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.points_per_axis, d=self.spacing)

    def freq_mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*([self.freq_axis()] * self.dim), indexing="ij", sparse=True)

    def to_fft_order(self, values: np.ndarray) -> np.ndarray:
        return np.fft.ifftshift(values)

    def to_centered(self, values: np.ndarray) -> np.ndarray:
        return np.fft.fftshift(values)

    def invert(self, spectrum: np.ndarray) -> np.ndarray:
        """Lattice inverse Fourier transform ``(2 pi)^-d sum S(k) e^{ikx} dk``.

        ``spectrum`` is sampled at :meth:`freq_mesh` (FFT order); the result
        is the real part on the centered lattice.  Equivalent to trapezoidal
        quadrature of the inversion integral, i.e. it returns the periodised
        inverse transform.
        """
        return self.to_centered(np.fft.ifftn(spectrum).real) / self.cell_volume

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "half_extent": self.half_extent,
            "points_per_axis": self.points_per_axis,
            "spacing": self.spacing,
        }


@dataclass(frozen=True)
class SecondMomentMatrix:
    sigma: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError("second-moment matrix must be square")
        if not np.array_equal(s, s.T):
            raise ValueError("second-moment matrix must be exactly symmetric")

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.sigma)

    @property
    def is_nondegenerate(self) -> bool:
        return bool(self.eigenvalues.min() > 0)


class JumpKernel:
    """Base class; use :func:`make_kernel` to construct validated kernels."""

    family: str = ""
    isotropic: bool = False

    def __init__(self, dim: int):
        if dim < MIN_DIM:
            raise DimensionTooSmall(f"dimension {dim} < {MIN_DIM}: the process is recurrent")
        self.dim = int(dim)

    # subclass surface -------------------------------------------------
    def density(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def symbol(self, k: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def sigma(self) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    # shared lattice helpers ------------------------------------------
    def density_on(self, grid: GridSpec) -> np.ndarray:
        _check_dim(self, grid)
        r2 = grid.radius2()
        return self._radial_density(r2)

    def symbol_on(self, grid: GridSpec) -> np.ndarray:
        """``a_hat`` at the lattice DFT frequencies of ``grid`` (FFT order)."""
        _check_dim(self, grid)
        k2 = sum(k * k for k in grid.freq_mesh())
        return self._radial_symbol(k2)

    def escaped_mass(self, n: int, grid: GridSpec) -> float:
        """Mass of ``a_n`` outside the lattice box, via the Gaussian (CLT) profile."""
        var = n * np.diag(self.sigma())
        inside = 1.0
        for v in var:
            inside *= 1.0 - 2.0 * special.ndtr(-grid.half_extent / math.sqrt(v))
        return float(1.0 - inside)

    def iterate_density(self, n: int, x: np.ndarray) -> np.ndarray:
        """Closed-form n-fold convolution, where the family has one."""
        raise NotImplementedError(f"{self.family} kernels have no closed-form iterates")

    def iterate_radial(self, n: int, r2: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{self.family} kernels have no closed-form iterates")

    @property
    def has_closed_iterates(self) -> bool:
        return self.isotropic

    @property
    def coordinate_even(self) -> bool:
        return self.isotropic

    def quadrature_mass(self) -> float:
        """Total mass by radial quadrature with extent doubling."""
        sphere = 2.0 * math.pi ** (self.dim / 2) / math.gamma(self.dim / 2)
        scale = math.sqrt(np.trace(self.sigma()) / self.dim)
        upper = 8.0 * scale
        prev = None
        for _ in range(12):
            val, _ = integrate.quad(
                lambda r: r ** (self.dim - 1) * float(self._radial_density(r * r)),
                0.0, upper, epsabs=1e-14, epsrel=1e-13, limit=200,
            )
            val *= sphere
            if prev is not None and abs(val - prev) < 1e-9:
                return val
            prev, upper = val, 2.0 * upper
        return val

    def _radial_density(self, r2):
        raise NotImplementedError

    def _radial_symbol(self, k2):
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.params().items() if k != "values")
        return f"{type(self).__name__}({args})"


class GaussianKernel(JumpKernel):
    """``a(x) = (b / 2 pi)^{d/2} exp(-b |x|^2 / 2)``."""

    family = "gaussian"
    isotropic = True

    def __init__(self, dim: int, b: float):
        super().__init__(dim)
        if not b > 0:
            raise ValueError(f"gaussian kernel needs b > 0, got {b}")
        self.b = float(b)
        self.normalizer = (self.b / (2.0 * math.pi)) ** (self.dim / 2)

    def _radial_density(self, r2):
        return self.normalizer * np.exp(-0.5 * self.b * np.asarray(r2))

    def _radial_symbol(self, k2):
        return np.exp(-0.5 * np.asarray(k2) / self.b)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        return self._radial_density(np.sum(x * x, axis=-1))

    def symbol(self, k):
        k = np.asarray(k, dtype=float)
        return self._radial_symbol(np.sum(k * k, axis=-1))

    def sample(self, rng, size):
        return rng.standard_normal((size, self.dim)) / math.sqrt(self.b)

    def sigma(self):
        return np.eye(self.dim) / self.b

    def escaped_mass(self, n, grid):
        # exact for Gaussian iterates
        tail = 2.0 * special.ndtr(-grid.half_extent * math.sqrt(self.b / n))
        return float(-np.expm1(self.dim * np.log1p(-tail)))

    def iterate_density(self, n, x):
        x = np.asarray(x, dtype=float)
        bn = self.b / n
        return (bn / (2 * math.pi)) ** (self.dim / 2) * np.exp(-0.5 * bn * np.sum(x * x, axis=-1))

    def iterate_radial(self, n, r2):
        bn = self.b / n
        return (bn / (2 * math.pi)) ** (self.dim / 2) * np.exp(-0.5 * bn * np.asarray(r2))

    def params(self):
        return {"family": self.family, "dim": self.dim, "b": self.b}


class ExpTailKernel(JumpKernel):
    """``a(x) = c exp(-delta |x|)`` with ``c = delta^d Gamma(d/2) / (2 pi^{d/2} Gamma(d))``.

    The symbol is ``(1 + |k|^2/delta^2)^{-(d+1)/2}`` and the n-fold iterates
    are Matern densities.
    """

    family = "exp_tail"
    isotropic = True

    def __init__(self, dim: int, delta: float, profile: str = "exp"):
        super().__init__(dim)
        if not delta > 0:
            raise ValueError(f"exp_tail kernel needs delta > 0, got {delta}")
        if profile != "exp":
            raise ValueError(f"unsupported exp_tail profile {profile!r}; only 'exp' is implemented")
        self.delta = float(delta)
        self.profile = profile
        d = self.dim
        self.normalizer = self.delta**d * math.gamma(d / 2) / (2 * math.pi ** (d / 2) * math.gamma(d))

    def _radial_density(self, r2):
        return self.normalizer * np.exp(-self.delta * np.sqrt(np.asarray(r2)))

    def _radial_symbol(self, k2):
        return (1.0 + np.asarray(k2) / self.delta**2) ** (-(self.dim + 1) / 2)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        return self._radial_density(np.sum(x * x, axis=-1))

    def symbol(self, k):
        k = np.asarray(k, dtype=float)
        return self._radial_symbol(np.sum(k * k, axis=-1))

    def sample(self, rng, size):
        # radius ~ Gamma(d, 1/delta) by inverse transform, direction uniform
        u = rng.random(size)
        r = special.gammaincinv(self.dim, u) / self.delta
        g = rng.standard_normal((size, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return g * r[:, None]

    def sigma(self):
        return np.eye(self.dim) * (self.dim + 1) / self.delta**2

    def iterate_density(self, n, x):
        r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        return self.iterate_radial(n, r * r)

    def iterate_radial(self, n, r2):
        d = self.dim
        s = n * (d + 1) / 2.0
        nu = s - d / 2.0
        r = self.delta * np.sqrt(np.asarray(r2, dtype=float))
        out = np.empty_like(r)
        small = r < 1e-12
        logc = (1.0 - s) * math.log(2.0) - (d / 2) * math.log(2 * math.pi) - special.gammaln(s)
        rr = r[~small]
        out[~small] = np.exp(logc + nu * np.log(rr) + _log_kv(nu, rr))
        out[small] = math.exp(special.gammaln(nu) - special.gammaln(s) - (d / 2) * math.log(4 * math.pi))
        return self.delta**d * out

    def params(self):
        return {"family": self.family, "dim": self.dim, "delta": self.delta, "profile": self.profile}


def _log_kv(nu: float, r: np.ndarray) -> np.ndarray:
    """``log K_nu(r)``; uniform asymptotic expansion once ``kve`` would overflow."""
    if nu < 30.0:
        return np.log(special.kve(nu, r)) - r
    z = r / nu
    sq = np.sqrt(1.0 + z * z)
    t = 1.0 / sq
    eta = sq + np.log(z / (1.0 + sq))
    t2 = t * t
    u1 = t * (3.0 - 5.0 * t2) / 24.0
    u2 = t2 * (81.0 - 462.0 * t2 + 385.0 * t2 * t2) / 1152.0
    u3 = t * t2 * (30375.0 - 369603.0 * t2 + 765765.0 * t2 * t2 - 425425.0 * t2**3) / 414720.0
    series = 1.0 - u1 / nu + u2 / nu**2 - u3 / nu**3
    return 0.5 * math.log(math.pi / (2.0 * nu)) - nu * eta - 0.25 * np.log1p(z * z) + np.log(series)


class _AliasTable:
    """Walker/Vose alias table for O(1) categorical sampling."""

    def __init__(self, weights: np.ndarray):
        p = np.asarray(weights, dtype=float)
        n = p.size
        scaled = p * (n / p.sum())
        self.prob = np.ones(n)
        self.alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, l = small.pop(), large.pop()
            self.prob[s] = scaled[s]
            self.alias[s] = l
            scaled[l] -= 1.0 - scaled[s]
            (small if scaled[l] < 1.0 else large).append(l)
        self.n = n

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size) * self.n
        idx = np.minimum(u.astype(np.int64), self.n - 1)
        coin = rng.random(size)
        return np.where(coin < self.prob[idx], idx, self.alias[idx])


class TabulatedKernel(JumpKernel):
    """Piecewise-constant kernel: ``values`` are cell densities on ``grid``.

    The jump law is the cell mixture (alias table over cells plus uniform
    jitter within the cell), so the symbol carries a ``sinc(k h / 2)`` factor
    per axis and the covariance carries ``h^2/12`` on the diagonal.
    """

    family = "tabulated"

    def __init__(self, grid: GridSpec, values: np.ndarray, *, moment_rtol: float = 0.1):
        super().__init__(grid.dim)
        v = np.asarray(values, dtype=float)
        if v.shape != grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid shape {grid.shape}")
        if not np.all(np.isfinite(v)):
            raise NotNormalizable("tabulated values must be finite")
        if np.any(v < 0):
            raise ValueError("tabulated kernel values must be nonnegative")
        mass = v.sum() * grid.cell_volume
        if not mass > 0:
            raise NotNormalizable("tabulated kernel has zero mass")
        inner = v[(slice(1, None),) * grid.dim]
        if not np.allclose(inner, inner[(slice(None, None, -1),) * grid.dim], rtol=1e-12, atol=1e-14 * v.max()):
            raise AsymmetricKernel("tabulated kernel violates a(-x) = a(x)")
        self.grid = grid
        self.normalizer = 1.0 / mass
        self.values = v * self.normalizer
        self.moment_rtol = moment_rtol
        self._alias = None
        self._points = None

    @property
    def coordinate_even(self):
        inner = self.values[(slice(1, None),) * self.dim]
        for ax in range(self.dim):
            if not np.allclose(inner, np.flip(inner, axis=ax), rtol=1e-12, atol=1e-14 * self.values.max()):
                return False
        return True

    def _lattice_points(self):
        if self._points is None:
            self._points = self.grid.points()
        return self._points

    def density(self, x):
        x = np.asarray(x, dtype=float)
        h, n = self.grid.spacing, self.grid.points_per_axis
        idx = np.floor(x / h + 0.5).astype(np.int64) + n // 2
        inside = np.all((idx >= 0) & (idx < n), axis=-1)
        idx = np.clip(idx, 0, n - 1)
        out = self.values[tuple(np.moveaxis(idx, -1, 0))]
        return np.where(inside, out, 0.0)

    def _sinc(self, k):
        return np.prod(np.sinc(np.asarray(k) * self.grid.spacing / (2 * np.pi)), axis=-1)

    def symbol(self, k):
        k = np.atleast_2d(np.asarray(k, dtype=float))
        pts = self._lattice_points()
        w = self.values.ravel() * self.grid.cell_volume
        keep = w > 0
        pts, w = pts[keep], w[keep]
        out = np.empty(k.shape[0])
        for start in range(0, k.shape[0], 256):
            kk = k[start:start + 256]
            out[start:start + 256] = np.cos(kk @ pts.T) @ w
        return out * self._sinc(k)

    def _embed(self, grid: GridSpec) -> np.ndarray:
        if not math.isclose(grid.spacing, self.grid.spacing, rel_tol=1e-12):
            raise GridTooSmall(
                f"grid spacing {grid.spacing} differs from tabulated spacing {self.grid.spacing}"
            )
        n, nt = grid.points_per_axis, self.grid.points_per_axis
        if n < nt:
            raise GridTooSmall("target grid is smaller than the tabulated kernel's grid")
        off = (n - nt) // 2
        out = np.zeros(grid.shape)
        out[(slice(off, off + nt),) * self.dim] = self.values
        return out

    def density_on(self, grid):
        _check_dim(self, grid)
        return self._embed(grid)

    def symbol_on(self, grid):
        _check_dim(self, grid)
        lat = np.fft.fftn(grid.to_fft_order(self._embed(grid))).real * grid.cell_volume
        sinc = 1.0
        for kk in grid.freq_mesh():
            sinc = sinc * np.sinc(kk * grid.spacing / (2 * np.pi))
        return lat * sinc

    def escaped_mass(self, n, grid):
        if n == 1:
            return 0.0 if grid.half_extent >= self.grid.half_extent else super().escaped_mass(n, grid)
        return super().escaped_mass(n, grid)

    def sample(self, rng, size):
        if self._alias is None:
            self._alias = _AliasTable(self.values.ravel())
        cells = self._alias.draw(rng, size)
        pts = self._lattice_points()[cells]
        jitter = (rng.random((size, self.dim)) - 0.5) * self.grid.spacing
        return pts + jitter

    def _raw_sigma(self, mask=None):
        pts = self._lattice_points()
        w = self.values.ravel() * self.grid.cell_volume
        if mask is not None:
            w = w * mask
        s = (pts * w[:, None]).T @ pts
        s = 0.5 * (s + s.T)
        return s + np.eye(self.dim) * (w.sum() * self.grid.spacing**2 / 12.0)

    def sigma(self):
        full = self._raw_sigma()
        pts = self._lattice_points()
        inner_mask = (np.max(np.abs(pts), axis=1) <= self.grid.half_extent / 2).astype(float)
        inner = self._raw_sigma(inner_mask)
        outer_share = 1.0 - np.trace(inner) / np.trace(full)
        if outer_share > self.moment_rtol:
            raise MomentDiverges(
                f"outer half of the table carries {outer_share:.3g} of the second moment "
                f"(> {self.moment_rtol}); the tail is not resolved"
            )
        return full

    def quadrature_mass(self):
        return float(self.values.sum() * self.grid.cell_volume)

    def params(self):
        return {"family": self.family, "dim": self.dim, "grid": self.grid.to_dict()}


def _check_dim(kernel: JumpKernel, grid: GridSpec):
    if grid.dim != kernel.dim:
        raise ValueError(f"grid dim {grid.dim} != kernel dim {kernel.dim}")


def load_tabulated_csv(path: str | Path, dim: int) -> tuple[GridSpec, np.ndarray]:
    """Read ``x1..xd,value`` rows into an origin-centered lattice."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for line in reader:
            if not line or line[0].strip().startswith("#"):
                continue
            try:
                rows.append([float(c) for c in line])
            except ValueError:
                continue  # header
    data = np.asarray(rows)
    if data.ndim != 2 or data.shape[1] != dim + 1:
        raise ValueError(f"expected {dim + 1} columns in {path}")
    coords, vals = data[:, :dim], data[:, dim]
    ax = np.unique(coords[:, 0])
    n = ax.size
    h = float(np.median(np.diff(ax)))
    grid = GridSpec(dim, n * h / 2.0, n)
    idx = np.rint(coords / h).astype(np.int64) + n // 2
    if np.any(idx < 0) or np.any(idx >= n) or not np.allclose(grid.axis()[idx], coords, atol=1e-9 * max(1.0, h)):
        raise ValueError(f"{path} is not an origin-centered lattice with spacing {h}")
    values = np.zeros(grid.shape)
    values[tuple(idx.T)] = vals
    return grid, values


def make_kernel(spec) -> JumpKernel:
    """Build a validated kernel from a description.

    ``spec`` is either a :class:`JumpKernel` (returned unchanged) or a mapping
    with ``family`` in ``{"gaussian", "exp_tail", "tabulated"}``, ``dim`` and
    the family parameters (``b``; ``delta``; ``grid`` + ``values`` or ``path``).
    """
    if isinstance(spec, JumpKernel):
        return spec
    spec = dict(spec)
    family = spec.get("family")
    dim = int(spec.get("dim", 3))
    if dim < MIN_DIM:
        raise DimensionTooSmall(f"dimension {dim} < {MIN_DIM}: the process is recurrent")
    if family == "gaussian":
        kern = GaussianKernel(dim, float(spec.get("b", 1.0)))
    elif family == "exp_tail":
        kern = ExpTailKernel(dim, float(spec.get("delta", 1.0)), spec.get("profile", "exp"))
    elif family == "tabulated":
        if "path" in spec:
            grid, values = load_tabulated_csv(spec["path"], dim)
        else:
            g = spec["grid"]
            grid = g if isinstance(g, GridSpec) else GridSpec(dim, float(g["half_extent"]), int(g["points_per_axis"]))
            values = np.asarray(spec["values"], dtype=float).reshape(grid.shape)
        kern = TabulatedKernel(grid, values, moment_rtol=float(spec.get("moment_rtol", 0.1)))
    else:
        raise ValueError(f"unknown kernel family {family!r}")
    mass = kern.quadrature_mass()
    if not abs(mass - 1.0) <= 1e-8:
        raise NotNormalizable(f"quadrature mass {mass!r} differs from 1")
    return kern


def fourier_symbol(kernel: JumpKernel, k) -> np.ndarray | float:
    """``a_hat(k) = int exp(-i k.y) a(y) dy`` (real for symmetric kernels)."""
    k = np.asarray(k, dtype=float)
    out = kernel.symbol(k)
    return float(np.ravel(out)[0]) if k.ndim == 1 else out


def second_moment(kernel: JumpKernel) -> SecondMomentMatrix:
    return SecondMomentMatrix(np.asarray(kernel.sigma(), dtype=float))


def kfold_density(kernel: JumpKernel, n: int, grid: GridSpec, mass_tol: float = 1e-3) -> np.ndarray:
    """Lattice values of the n-fold convolution ``a^{*n}``.

    Computed as the lattice inverse transform of ``a_hat^n``; ``n = 1`` returns
    the density itself.  Raises :class:`GridTooSmall` when more than
    ``mass_tol`` of ``a_n`` lies outside the box (the wrap-around error of the
    periodic inversion is then uncontrolled).
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    escaped = kernel.escaped_mass(n, grid)
    if escaped > mass_tol:
        raise GridTooSmall(f"a_{n} leaks {escaped:.3g} of its mass outside the box (tol {mass_tol})")
    if n == 1:
        return kernel.density_on(grid)
    return grid.invert(kernel.symbol_on(grid) ** n)


def sample_jump(kernel: JumpKernel, rng: np.random.Generator) -> np.ndarray:
    """One draw from the jump density."""
    return kernel.sample(rng, 1)[0]


def sample_jumps(kernel: JumpKernel, rng: np.random.Generator, size: int) -> np.ndarray:
    return kernel.sample(rng, size)


@dataclass
class SymbolIntegrabilityReport:
    l1_on_box: float
    outer_shell_share: float
    max_on_boundary: float
    notes: list[str] = field(default_factory=list)


def symbol_integrability(kernel: JumpKernel, grid: GridSpec) -> SymbolIntegrabilityReport:
    """Report how much of ``int |a_hat|`` sits near the edge of the frequency box.

    The assumption ``a_hat in L^1`` cannot be proven from samples; a small outer
    share and boundary maximum indicate it is plausible at this resolution.
    """
    ah = np.abs(kernel.symbol_on(grid))
    dk = 2 * np.pi / (grid.points_per_axis * grid.spacing)
    w = dk**grid.dim / (2 * np.pi) ** grid.dim
    kmax = np.pi / grid.spacing
    kinf = np.zeros(grid.shape)
    for kk in grid.freq_mesh():
        kinf = np.maximum(kinf, np.abs(kk))
    total = ah.sum() * w
    outer = ah[kinf > kmax / 2].sum() * w
    boundary = float(ah[kinf >= kinf.max() - 0.5 * dk].max())
    rep = SymbolIntegrabilityReport(float(total), float(outer / total), boundary)
    if rep.outer_shell_share > 1e-3:
        rep.notes.append("symbol not resolved: refine the lattice spacing")
    return rep
