import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import GAUSS_BUMP_L1, NEWTON_BUMP
from randgreen import green as gm
from randgreen.errors import NotInCL, SupportEscapesGrid, SymmetryViolation
from randgreen.kernels import GridSpec, TabulatedKernel
from randgreen.potentials import (
    BoxIndicator,
    ExpAbs,
    GaussianBump,
    SumFunction,
    TabulatedFunction,
    cl_norm,
    green_box_mass,
    make_test_function,
    newtonian_potential,
    positivity_check,
    potential_exact,
    potential_mc,
    variance_exact,
    variance_three_term,
    variance_report,
    variance_terms,
)
from randgreen.simulate import ProcessSpec, SimulationSettings, StopRule


def _zero_field(grid, kern):
    return gm.GreenField(grid, np.zeros(grid.shape), 0.0, "series", {}, kern)


def test_cl_norms():
    assert cl_norm(ExpAbs(3)) == pytest.approx((1.0, 8.0, 9.0), rel=1e-14)
    assert cl_norm(BoxIndicator(3, [0, 0, 0], [1, 1, 1])) == pytest.approx((1.0, 1.0, 2.0))
    assert cl_norm(GaussianBump(3))[1] == pytest.approx(GAUSS_BUMP_L1, rel=1e-14)
    assert not BoxIndicator(3, [0, 0, 0], [1, 1, 1]).in_cl


def test_cl_norm_numeric_fallback():
    sup, l1, cl = cl_norm(lambda x: np.exp(-np.sum(x * x, axis=1)))
    assert sup == pytest.approx(1.0, rel=1e-2)
    assert l1 == pytest.approx(math.pi**1.5, rel=1e-3)
    with pytest.raises(NotInCL):
        cl_norm(lambda x: 1.0 / (1.0 + np.sum(x * x, axis=1)))


@given(st.floats(1.0, 3.0), st.floats(0.3, 2.0))
def test_cell_averages_integrate_to_l1(rate, sigma):
    g = GridSpec(3, 24.0, 48)
    for f in (ExpAbs(3, rate), GaussianBump(3, sigma)):
        total = f.cell_average([g.axis()] * 3, g.spacing).sum() * g.cell_volume
        assert total == pytest.approx(f.l1_norm(), rel=1e-9)


def test_make_test_function():
    assert isinstance(make_test_function({"family": "exp_abs"}, 3), ExpAbs)
    z = make_test_function({"family": "zero"}, 3)
    assert z.sup_norm() == 0.0 and z.l1_norm() == 0.0
    with pytest.raises(ValueError):
        make_test_function({"family": "sinc"}, 3)


def test_potential_exact_zero_field(gauss, grid64):
    f = ExpAbs(3)
    x = np.array([0.3, -0.2, 0.1])
    assert potential_exact(f, x, _zero_field(grid64, gauss)).value == pytest.approx(math.exp(-0.6), rel=1e-14)


def test_potential_exact_box_is_box_mass(g0_small):
    # x outside the box: only the regular part contributes
    lo, hi = [1.0, 0.0, 0.0], [2.0, 1.0, 1.0]
    u = potential_exact(BoxIndicator(3, lo, hi), np.zeros(3), g0_small)
    assert u.value == pytest.approx(green_box_mass(g0_small, lo, hi), rel=2e-3)


def test_potential_exact_support_escapes(g0_small):
    with pytest.raises(SupportEscapesGrid):
        potential_exact(ExpAbs(3, 0.3), np.zeros(3), g0_small)


# exp_abs at 0, gaussian(b=1) Green field on GridSpec(3, 32, 256)
U_EXP_ABS_FINE = 1.7153501937295101


def test_potential_exact_error_estimate(g0_wide):
    # h = 0.5 value; its stride-2 error estimate must cover the step to h = 0.25
    u = potential_exact(ExpAbs(3), np.zeros(3), g0_wide)
    assert abs(u.value - U_EXP_ABS_FINE) <= 1.05 * u.quadrature_error
    assert u.escaped_support < 1e-10


@given(alpha=st.floats(-2, 2), beta=st.floats(-2, 2))
def test_potential_linearity(g0_mid, alpha, beta):
    g = g0_mid
    f1, f2 = ExpAbs(3), GaussianBump(3, 0.8, center=[0.5, 0, 0])
    x = np.array([0.25, 0.0, -0.5])
    combo = potential_exact(SumFunction([f1, f2], [alpha, beta]), x, g)
    sep = alpha * potential_exact(f1, x, g).value + beta * potential_exact(f2, x, g).value
    assert combo.value == pytest.approx(sep, abs=1e-10)


def test_potential_boundedness_sweep(g0_mid):
    g = g0_mid
    c = max(1.0, float(g.values.max()))
    fs = [ExpAbs(3, r) for r in (0.8, 1.0, 2.0)] + [GaussianBump(3, s) for s in (0.5, 1.0, 1.5)] + \
        [ExpAbs(3, 1.0, center=[1.0, -1.0, 0.5])]
    for f in fs:
        for x in (np.zeros(3), np.array([1.0, 1.0, 1.0])):
            assert abs(potential_exact(f, x, g).value) <= c * cl_norm(f)[2]


def test_variance_zero_field(gauss, grid64):
    f = GaussianBump(3, 0.7)
    z = _zero_field(grid64, gauss)
    assert variance_exact(f, z) == pytest.approx(1.0, rel=1e-14)
    assert variance_three_term(f, z) == pytest.approx(1.0, rel=1e-14)


def test_variance_terms_against_brute_force(gauss):
    # direct O(N^2) double sums on a coarse lattice
    grid = GridSpec(3, 4.0, 16)
    vals = 0.1 * np.exp(-0.5 * grid.radius2())
    field = gm.GreenField(grid, vals, 0.0, "series", {}, gauss)
    f = GaussianBump(3, 0.35, center=[0.25, 0.0, 0.0])
    t = variance_terms(f, field, support_tol=1e-3)
    n, m, h = 16, 8, grid.spacing
    ax = grid.axis()[n // 4:n // 4 + m]
    f1 = f.cell_average([ax] * 3, h, 1)
    f2 = f.cell_average([ax] * 3, h, 2)
    idx = np.array(np.meshgrid(*[np.arange(m)] * 3, indexing="ij")).reshape(3, -1).T
    gin = vals[n // 4:n // 4 + m, n // 4:n // 4 + m, n // 4:n // 4 + m]
    vol = h**3
    f1v, gv = f1.reshape(-1), gin.reshape(-1)
    conv = np.empty(len(idx))
    for a, i in enumerate(idx):
        diff = i - idx + n // 2  # index of y - y' on the full grid
        conv[a] = vol * np.sum(f1v * vals[diff[:, 0], diff[:, 1], diff[:, 2]])
    assert t["int_fG"] == pytest.approx(np.sum(f1v * gv) * vol, rel=1e-12)
    assert t["int_f2G"] == pytest.approx(np.sum(f2.reshape(-1) * gv) * vol, rel=1e-12)
    assert t["int_fG_conv"] == pytest.approx(np.sum(f1v * gv * conv) * vol, rel=1e-10)


def test_variance_three_term_far_box(g0_wide):
    f = BoxIndicator(3, [3.0, 0.0, 0.0], [4.0, 1.0, 1.0])
    t = variance_terms(f, g0_wide)
    assert t["f0"] == 0.0
    assert variance_three_term(f, g0_wide) == pytest.approx(2 * t["int_fG_conv"] - t["int_fG"] ** 2)


def test_variance_positive_and_report(g0_wide):
    f = ExpAbs(3)
    rep = variance_report(f, g0_wide)
    assert rep.v_measure > 0
    assert rep.v_measure == pytest.approx(variance_exact(f, g0_wide))
    assert rep.expansion_gap == pytest.approx(-2 * rep.terms["int_f2G"])
    assert rep.to_dict()["expansion_gap"] == rep.expansion_gap


def test_variance_matches_small_mc(gauss, g0_wide):
    f = ExpAbs(3)
    st_ = SimulationSettings(stop=StopRule(adaptive=True), threads=4)
    est = potential_mc(f, np.zeros(3), ProcessSpec("cpp", 3, kernel=gauss), 5000, 77, st_)
    rep = variance_report(f, g0_wide, est)
    assert abs(rep.v_monte_carlo - rep.v_measure) <= 3 * rep.mc_standard_error
    assert rep.v_monte_carlo >= 0


def test_potential_mc_zero(gauss):
    f = make_test_function({"family": "zero"}, 3)
    est = potential_mc(f, np.zeros(3), ProcessSpec("cpp", 3, kernel=gauss), 50, 1,
                       SimulationSettings(stop=StopRule(horizon=5.0)))
    assert est.mean == 0.0 and est.sample_variance == 0.0 and est.standard_error == 0.0


def test_potential_mc_invariants(gauss, g0_wide):
    f = ExpAbs(3)
    est = potential_mc(f, np.zeros(3), ProcessSpec("cpp", 3, kernel=gauss), 2000, 3,
                       SimulationSettings(stop=StopRule(adaptive=True), threads=4))
    assert est.standard_error == pytest.approx(math.sqrt(est.sample_variance / est.n_paths), rel=1e-14)
    assert est.tail_estimate >= 0
    exact = potential_exact(f, np.zeros(3), g0_wide)
    assert abs(est.mean - exact.value) <= 3 * est.standard_error + est.tail_estimate + exact.quadrature_error


@pytest.mark.parametrize("d", [3, 4])
def test_newtonian_potential(d):
    assert newtonian_potential(GaussianBump(d), d) == pytest.approx(NEWTON_BUMP[d], rel=1e-10)


def test_potential_mc_brownian_small():
    f = GaussianBump(3)
    est = potential_mc(f, np.zeros(3), ProcessSpec("brownian", 3), 800, 5,
                       SimulationSettings(dt=1e-3, refine_paths=200))
    allow = 3 * est.standard_error + est.discretization_allowance
    assert abs(est.mean - NEWTON_BUMP[3]) <= allow


def test_positivity_check(gauss, g0_wide):
    v, ok = positivity_check(gauss, green=g0_wide)
    assert ok and v > 0
    assert g0_wide.coordinate_symmetry_error() <= 1e-8


def test_positivity_rejects_non_even_kernel():
    # symmetric under x -> -x but not even in each coordinate
    g = GridSpec(3, 2.0, 8)
    vals = np.zeros(g.shape)
    o = g.origin_index
    vals[o[0] + 1, o[1] + 1, o[2]] = 1.0
    vals[o[0] - 1, o[1] - 1, o[2]] = 1.0
    kern = TabulatedKernel(g, vals)
    with pytest.raises(SymmetryViolation):
        positivity_check(kern)


def test_tabulated_function():
    g = GridSpec(3, 4.0, 16)
    vals = np.exp(-g.radius2())
    f = TabulatedFunction(g, vals)
    assert f.sup_norm() == pytest.approx(1.0)
    assert f(np.zeros((1, 3)))[0] == pytest.approx(1.0)
