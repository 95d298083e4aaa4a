import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from randgreen.errors import AsymmetricKernel, GridTooSmall, MomentDiverges, NotNormalizable
from randgreen.kernels import (
    ExpTailKernel,
    GaussianKernel,
    GridSpec,
    TabulatedKernel,
    fourier_symbol,
    kfold_density,
    load_tabulated_csv,
    make_kernel,
    sample_jump,
    sample_jumps,
    second_moment,
    symbol_integrability,
)

finite = st.floats(-6, 6, allow_nan=False)
kvec = st.tuples(finite, finite, finite)


def test_gaussian_symbol_at_sqrt2(gauss):
    k = np.array([1.0, 1.0, 0.0])
    assert fourier_symbol(gauss, k) == pytest.approx(math.exp(-1.0), rel=1e-14)


def test_symbol_matches_lattice_quadrature(gauss, exptail):
    g = GridSpec(3, 12.0, 96)
    pts = g.points()
    w = g.cell_volume
    for kern in (gauss, exptail):
        dens = kern.density(pts)
        for k in ([0.0, 0.0, 0.0], [0.7, -0.2, 0.4], [1.5, 0.0, 0.0]):
            quad = float(np.sum(dens * np.cos(pts @ np.array(k))) * w)
            assert fourier_symbol(kern, np.array(k)) == pytest.approx(quad, abs=2e-4)


@given(kvec)
def test_symbol_bounded_by_one(k):
    for kern in (GaussianKernel(3, 1.0), ExpTailKernel(3, 1.0)):
        assert abs(fourier_symbol(kern, np.array(k))) <= 1 + 1e-12


def test_symbol_decays_along_rays(exptail):
    rng = np.random.default_rng(0)
    for _ in range(10):
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        vals = fourier_symbol(exptail, np.outer(np.linspace(0, 40, 200), u))
        assert np.all(np.diff(vals) <= 1e-15)
        assert vals[-1] < 1e-4


def test_quadratic_small_k(gauss):
    rng = np.random.default_rng(1)
    sig = second_moment(gauss).sigma
    for _ in range(50):
        k = rng.standard_normal(3)
        k *= rng.uniform(1e-3, 0.1) / np.linalg.norm(k)
        lhs = 1 - fourier_symbol(gauss, k)
        assert lhs == pytest.approx(0.5 * k @ sig @ k, rel=1e-2)


def test_second_moments():
    assert np.allclose(second_moment(GaussianKernel(3, 1.0)).sigma, np.eye(3), atol=1e-12)
    assert np.allclose(second_moment(GaussianKernel(3, 4.0)).sigma, 0.25 * np.eye(3), atol=1e-12)
    # exp_tail: E|X|^2 = (d+1) d / delta^2, split evenly over coordinates
    s = second_moment(ExpTailKernel(3, 2.0)).sigma
    assert np.allclose(s, (4 / 4.0) * np.eye(3), rtol=1e-9)
    assert np.array_equal(s, s.T)


def test_quadrature_mass(gauss, exptail):
    assert gauss.quadrature_mass() == pytest.approx(1.0, abs=1e-9)
    assert exptail.quadrature_mass() == pytest.approx(1.0, abs=1e-9)


def test_kfold_identity_and_gaussian_variance(gauss, grid64):
    a1 = kfold_density(gauss, 1, grid64)
    assert np.max(np.abs(a1 - gauss.density_on(grid64))) <= 1e-10
    g = GridSpec(3, 16.0, 64)  # variance 4 needs a box well past 6 sd
    a4 = kfold_density(gauss, 4, g)
    closed = (2 * math.pi * 4) ** -1.5 * np.exp(-g.radius2() / 8)
    assert np.max(np.abs(a4 - closed)) <= 1e-10
    assert a4.min() >= -1e-10


def test_kfold_semigroup(exptail):
    g = GridSpec(3, 24.0, 96)
    a2 = kfold_density(exptail, 2, g)
    a3 = kfold_density(exptail, 3, g)
    a5 = kfold_density(exptail, 5, g)
    conv = g.invert(np.fft.fftn(g.to_fft_order(a2)) * np.fft.fftn(g.to_fft_order(a3)) * g.cell_volume**2)
    assert np.max(np.abs(conv - a5)) <= 1e-8


def test_kfold_grid_too_small(gauss):
    with pytest.raises(GridTooSmall):
        kfold_density(gauss, 50, GridSpec(3, 4.0, 32))


def test_sampler_moments(gauss, exptail):
    for kern in (gauss, exptail):
        x = sample_jumps(kern, np.random.default_rng(7), 100_000)
        sd = np.sqrt(np.diag(second_moment(kern).sigma))
        assert np.all(np.abs(x.mean(axis=0)) <= 4 * sd / math.sqrt(len(x)))
    cov = np.cov(sample_jumps(gauss, np.random.default_rng(8), 100_000).T)
    assert np.allclose(cov, np.eye(3), atol=0.05)


def test_sampler_deterministic(exptail):
    a = [sample_jump(exptail, np.random.default_rng(3)) for _ in range(2)]
    assert np.array_equal(a[0], a[1])
    assert np.array_equal(sample_jumps(exptail, np.random.default_rng(9), 50),
                          sample_jumps(exptail, np.random.default_rng(9), 50))


def _chi2_pvalue(kern, seed):
    # radial shells: the law of |X| has a closed-form cdf via cell quadrature
    x = sample_jumps(kern, np.random.default_rng(seed), 100_000)
    r = np.linalg.norm(x, axis=1)
    edges = np.quantile(r, np.linspace(0, 1, 21))
    edges[0], edges[-1] = 0.0, np.inf
    rr = np.linspace(0, 40, 400_001)
    dens = kern.density(np.c_[rr, np.zeros_like(rr), np.zeros_like(rr)]) * 4 * np.pi * rr**2
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(rr))])
    probs = np.diff(np.interp(np.minimum(edges, 40), rr, cdf))
    counts = np.histogram(r, edges)[0]
    return stats.chisquare(counts, probs / probs.sum() * counts.sum()).pvalue


def test_sampler_chi2(gauss, exptail):
    for i, kern in enumerate((gauss, exptail)):
        assert _chi2_pvalue(kern, 100 + i) > 1e-3


def test_sampler_octant_balance(exptail):
    x = sample_jumps(exptail, np.random.default_rng(11), 100_000)
    octant = (x > 0) @ np.array([1, 2, 4])
    counts = np.bincount(octant, minlength=8)
    assert stats.chisquare(counts).pvalue > 1e-3


def _tab_grid():
    return GridSpec(3, 4.0, 16)


def test_tabulated_roundtrip(tmp_path):
    g = _tab_grid()
    vals = np.exp(-g.radius2())
    kern = TabulatedKernel(g, vals)
    assert kern.quadrature_mass() == pytest.approx(1.0, abs=1e-12)
    pts = g.points()
    path = tmp_path / "kernel.csv"
    rows = np.c_[pts, vals.reshape(-1)]
    np.savetxt(path, rows, delimiter=",", header="x1,x2,x3,value", comments="")
    g2, v2 = load_tabulated_csv(path, 3)
    assert g2 == g
    assert np.allclose(v2, vals)
    k2 = make_kernel({"family": "tabulated", "dim": 3, "path": str(path)})
    assert np.allclose(k2.values, kern.values)
    assert np.all(np.abs(sample_jumps(kern, np.random.default_rng(0), 1000)) <= g.half_extent + g.spacing)


def test_tabulated_rejects_asymmetric_and_empty():
    g = _tab_grid()
    vals = np.exp(-g.radius2())
    shifted = np.roll(vals, 2, axis=0)
    with pytest.raises(AsymmetricKernel):
        TabulatedKernel(g, shifted)
    with pytest.raises(NotNormalizable):
        TabulatedKernel(g, np.zeros(g.shape))


def test_tabulated_heavy_tail_moment():
    g = GridSpec(3, 64.0, 64)
    r = np.sqrt(g.radius2())
    with pytest.raises(MomentDiverges):
        TabulatedKernel(g, 1.0 / (1.0 + r) ** 4.5).sigma()


def test_make_kernel_errors():
    with pytest.raises(ValueError):
        make_kernel({"family": "cauchy", "dim": 3})
    with pytest.raises(ValueError):
        make_kernel({"family": "gaussian", "dim": 3, "b": -1})


def test_symbol_integrability_report(gauss):
    rep = symbol_integrability(gauss, GridSpec(3, 8.0, 64))
    # int a_hat dk / (2 pi)^3 = a(0) = (2 pi)^{-3/2}
    assert rep.l1_on_box == pytest.approx((2 * math.pi) ** -1.5, rel=1e-6)
    assert rep.outer_shell_share < 1e-3
    assert not rep.notes
