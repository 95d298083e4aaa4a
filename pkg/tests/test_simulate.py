import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from randgreen.errors import EllipticityViolation, OverlappingBoxes, StepTooLarge
from randgreen.kernels import GaussianKernel
from randgreen.potentials import BoxIndicator, ExpAbs, GaussianBump, green_box_mass
from randgreen.simulate import (
    CHUNK,
    DiffusionCoefficients,
    ProcessSpec,
    SimulationSettings,
    StopRule,
    bump_coefficients,
    check_ellipticity,
    constant_coefficients,
    exterior_return,
    integrate_along_cpp,
    integrate_along_discretized,
    mean_occupation,
    occupation_measure,
    path_seed,
    sample_bm_path,
    sample_cpp_path,
    sample_diffusion_path,
    simulate_functionals,
)


def _paths(kern, n, T=10.0, seed=0):
    return [sample_cpp_path(kern, np.zeros(3), StopRule(horizon=T), path_seed(seed, i)) for i in range(n)]


def test_path_seed_stable_and_distinct():
    a = [path_seed(42, i) for i in range(1000)]
    assert len(set(a)) == 1000
    assert a == [path_seed(42, i) for i in range(1000)]
    assert path_seed(42, 0) != path_seed(43, 0)
    assert path_seed(42, 0, stream=1) != path_seed(42, 0)


def test_cpp_jump_count_is_poisson(gauss):
    n = 10_000
    jumps = np.array([len(p.states) - 1 for p in _paths(gauss, n)])
    assert abs(jumps.mean() - 10.0) <= 4 * math.sqrt(10.0 / n)


def test_cpp_mean_displacement(gauss):
    n = 10_000
    ends = np.array([p.states[-1] for p in _paths(gauss, n, seed=1)])
    se = ends.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(ends.mean(axis=0)) <= 4 * se)


def test_cpp_path_invariants(exptail):
    for p in _paths(exptail, 200, T=5.0, seed=2):
        assert np.all(p.holding > 0)
        assert p.kind == "jump_chain"
        assert p.holding.sum() <= p.horizon + p.holding[-1] + 1e-12
        assert p.total_time == pytest.approx(5.0, abs=1e-12)
        assert p.termination == "horizon_reached"


def test_cpp_deterministic(gauss):
    a = sample_cpp_path(gauss, np.zeros(3), StopRule(horizon=20.0), 99)
    b = sample_cpp_path(gauss, np.zeros(3), StopRule(horizon=20.0), 99)
    assert a.same_as(b)
    f = ExpAbs(3)
    a = sample_cpp_path(gauss, np.zeros(3), StopRule(adaptive=True), 7, f=f)
    b = sample_cpp_path(gauss, np.zeros(3), StopRule(adaptive=True), 7, f=f)
    assert a.same_as(b)
    assert a.termination == "tail_criterion_met"


def test_integrate_along_cpp_basics(gauss):
    p = sample_cpp_path(gauss, np.zeros(3), StopRule(horizon=7.5), 3)
    assert integrate_along_cpp(p, lambda x: np.ones(len(x))) == pytest.approx(p.total_time, rel=1e-15)
    frozen = type(p)(np.zeros(3), "jump_chain", np.zeros((1, 3)), np.array([1.0]))
    assert integrate_along_cpp(frozen, ExpAbs(3)) == 1.0


@given(st.integers(0, 2**32), st.floats(-2, 1), st.floats(0.5, 3))
def test_indicator_equals_occupation(seed, lo, width):
    kern = GaussianKernel(3, 1.0)
    p = sample_cpp_path(kern, np.zeros(3), StopRule(horizon=15.0), seed)
    lower, upper = [lo] * 3, [lo + width] * 3
    occ = occupation_measure(p, [lower], [upper])
    assert integrate_along_cpp(p, BoxIndicator(3, lower, upper)) == occ.masses[0]
    assert occ.atom_mass == p.holding[0]


@given(st.integers(0, 2**32))
def test_occupation_bookkeeping(seed):
    kern = GaussianKernel(3, 1.0)
    p = sample_cpp_path(kern, np.zeros(3), StopRule(horizon=10.0), seed)
    lo = [[-1, -1, -1], [0, -1, -1], [-3, 0, -1]]
    hi = [[0, 0, 0], [1, 1, 1], [-1, 2, 2]]
    occ = occupation_measure(p, lo, hi)
    assert np.all(occ.masses >= 0)
    assert occ.masses.sum() + occ.unpartitioned == pytest.approx(occ.total_mass, rel=1e-12)
    whole = occupation_measure(p, [[-1e6] * 3], [[1e6] * 3])
    assert whole.masses[0] == pytest.approx(p.total_time, rel=1e-12)


def test_overlapping_boxes(gauss):
    p = sample_cpp_path(gauss, np.zeros(3), StopRule(horizon=1.0), 0)
    with pytest.raises(OverlappingBoxes):
        occupation_measure(p, [[0, 0, 0], [0.5, 0.5, 0.5]], [[1, 1, 1], [2, 2, 2]])


def test_mean_occupation_matches_green(gauss, g0_small):
    lo = np.array([[1.0, 0.0, 0.0]])
    hi = np.array([[2.0, 1.0, 1.0]])
    res = mean_occupation(gauss, np.zeros(3), lo, hi, 4000, 5, StopRule(adaptive=True), threads=4)
    exact = green_box_mass(g0_small, lo[0], hi[0])
    assert abs(res["mean"][0] + res["tail"][0] - exact) <= 3 * res["se"][0]
    assert abs(res["atom_mean"] - 1.0) <= 4 / math.sqrt(4000)


def test_transience_increments_shrink(gauss):
    f = ExpAbs(3)
    n = 2000
    ys = {}
    for T in (10.0, 20.0, 40.0, 80.0):
        ys[T] = np.array([integrate_along_cpp(sample_cpp_path(gauss, np.zeros(3), StopRule(horizon=T),
                                                              path_seed(4, i)), f) for i in range(n)])
    inc = [np.mean(ys[2 * T] - ys[T]) for T in (10.0, 20.0, 40.0)]
    assert all(i >= 0 for i in inc)
    assert inc[0] > inc[1] > inc[2]


def test_thread_count_bitwise(gauss):
    f = ExpAbs(3)
    proc = ProcessSpec("cpp", 3, kernel=gauss)
    n = 3 * CHUNK + 17
    st1 = SimulationSettings(stop=StopRule(adaptive=True), threads=1)
    st8 = SimulationSettings(stop=StopRule(adaptive=True), threads=8)
    a = simulate_functionals(proc, f, np.zeros(3), n, 42, st1)
    b = simulate_functionals(proc, f, np.zeros(3), n, 42, st8)
    for k in a:
        assert np.array_equal(a[k], b[k], equal_nan=True)


def test_bm_variance():
    n = 10_000
    ends = np.array([sample_bm_path(np.zeros(3), 1.0, 1e-2, path_seed(6, i)).states[-1] for i in range(n)])
    v = ends.var(axis=0, ddof=1)
    se = v * math.sqrt(2 / (n - 1))
    assert np.all(np.abs(v - 2.0) <= 4 * se)


def test_bm_translation_and_length():
    a = sample_bm_path(np.zeros(3), 2.0, 1e-3, 17)
    x0 = np.array([1.0, -2.0, 0.5])
    b = sample_bm_path(x0, 2.0, 1e-3, 17)
    assert np.allclose(b.states, a.states + x0, atol=1e-14)
    assert len(a.states) == math.floor(2.0 / 1e-3) + 1


def test_bm_dt_halving_marginal():
    n = 10_000
    e1 = np.array([sample_bm_path(np.zeros(3), 1.0, 0.02, path_seed(8, i)).states[-1, 0] for i in range(n)])
    e2 = np.array([sample_bm_path(np.zeros(3), 1.0, 0.01, path_seed(9, i)).states[-1, 0] for i in range(n)])
    assert stats.ks_2samp(e1, e2).pvalue > 1e-3


def test_integrate_discretized_basics():
    p = sample_bm_path(np.zeros(3), 3.0, 1e-2, 1)
    assert integrate_along_discretized(p, lambda x: np.full(len(x), 2.5)) == pytest.approx(7.5, rel=1e-12)
    frozen = type(p)(np.ones(3), "discretized", np.ones((301, 3)), None, 1e-2, 0, 3.0)
    f = GaussianBump(3)
    assert integrate_along_discretized(frozen, f) == pytest.approx(float(f(np.ones((1, 3)))[0]) * 3.0, rel=1e-12)


def test_richardson_refinement_shrinks():
    # refined walks carry Y at dt/2 on the same Brownian bridge
    f = GaussianBump(3)
    proc = ProcessSpec("brownian", 3)
    n = 400
    st = SimulationSettings(dt=4e-3, refine_paths=n)
    r = simulate_functionals(proc, f, np.zeros(3), n, 3, st)
    diff = r["value"] - r["fine"]
    assert abs(diff.mean()) <= 0.05
    assert np.all(np.isfinite(r["fine"]))


def test_diffusion_scaled_variance():
    c = 2.0
    coeffs = constant_coefficients(3, c)
    n = 1000
    ends = np.array([sample_diffusion_path(coeffs, np.zeros(3), 1.0, 0.02, path_seed(10, i)).states[-1]
                     for i in range(n)])
    v = ends.var(axis=0, ddof=1)
    assert np.all(np.abs(v - 2 * c) <= 4 * v * math.sqrt(2 / (n - 1)))


def test_diffusion_identity_matches_bm_path():
    # with a = I the Euler step is exactly the Brownian increment
    a = sample_diffusion_path(constant_coefficients(3, 1.0), np.zeros(3), 0.5, 1e-2, 5)
    b = sample_bm_path(np.zeros(3), 0.5, 1e-2, 5)
    assert a.same_as(b) or np.allclose(a.states, b.states, atol=1e-12)


def test_diffusion_deterministic():
    coeffs = bump_coefficients(3)
    a = sample_diffusion_path(coeffs, np.zeros(3), 0.2, 1e-3, 11)
    b = sample_diffusion_path(coeffs, np.zeros(3), 0.2, 1e-3, 11)
    assert a.same_as(b)


def test_ellipticity_rejects_degenerate():
    with pytest.raises(EllipticityViolation):
        check_ellipticity(constant_coefficients(3, np.diag([1.0, 1.0, 0.0])))
    lo, hi = check_ellipticity(bump_coefficients(3, 1.0, 0.5))
    assert 0 < lo <= hi <= 1.5 + 1e-12


def test_ellipticity_rejects_asymmetric():
    m = np.array([[1.0, 0.3, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(EllipticityViolation):
        check_ellipticity(constant_coefficients(3, m))


def test_step_too_large():
    coeffs = DiffusionCoefficients(3, lambda x: np.broadcast_to(np.eye(3), (len(x), 3, 3)),
                                   lambda x: np.full_like(x, 1e6))
    with pytest.raises(StepTooLarge):
        sample_diffusion_path(coeffs, np.zeros(3), 0.1, 1e-2, 0)


def test_divergence_finite_difference():
    coeffs = bump_coefficients(3, 1.0, 0.5, 1.0)
    fd = DiffusionCoefficients(3, coeffs.matrix_field)
    x = np.random.default_rng(0).normal(size=(20, 3))
    assert np.allclose(fd.divergence(x), coeffs.divergence(x), atol=1e-7)


def test_exterior_return_on_sphere():
    rng = np.random.default_rng(0)
    x = np.array([3.0, 0.0, 0.0])
    pts = np.array([exterior_return(x, 1.0, rng) for _ in range(4000)])
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)
    # harmonic measure from outside leans towards the start
    assert pts[:, 0].mean() > 0.2
    assert np.all(np.abs(pts[:, 1:].mean(axis=0)) <= 0.05)
