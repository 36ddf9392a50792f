import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ahlab.acceptance import decay_data
from ahlab.metric import ball_model, perturbed_model
from ahlab.radiation import (DT_FACTOR, CFLError, CoverageError, FloorError, RadiationTrace, WaveGrid,
                             apply_operator, decay_fit, energy, energy_identity_check, fourier_relation_check,
                             radial_dalembert, radial_trace_oracle, radiation_extract, spectral_bound, trace_fourier,
                             wave_grid, wave_solve)
from ahlab.resolvent import gaussian_bump


@pytest.fixture(scope="module")
def bump():
    return gaussian_bump(2, 0.5)


@pytest.fixture(scope="module")
def small_grid():
    return wave_grid(ball_model(2), 8.0, 0.01)


@pytest.fixture(scope="module")
def short_run(small_grid, bump):
    return wave_solve(ball_model(2), None, bump, 5.0, grid=small_grid, n_saves=6)


@pytest.fixture(scope="module")
def long_grid():
    return wave_grid(ball_model(2), 16.0, 0.01)


@pytest.fixture(scope="module")
def long_run(long_grid, bump):
    return wave_solve(ball_model(2), None, bump, 20.0, grid=long_grid)


@pytest.fixture(scope="module")
def long_trace(long_run):
    return radiation_extract(long_run)


# -- discretisation --------------------------------------------------------


def test_radial_operator_is_symmetric(small_grid, rng):
    a, b = rng.normal(size=small_grid.shape), rng.normal(size=small_grid.shape)
    lhs = small_grid.inner(apply_operator(small_grid, a), b)
    rhs = small_grid.inner(a, apply_operator(small_grid, b))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_polar_operator_is_symmetric(pert1, rng):
    g = wave_grid(pert1, 6.0, 0.05, 16)
    from ahlab.radiation import _project

    a = _project(g, rng.normal(size=g.shape))
    b = _project(g, rng.normal(size=g.shape))
    lhs = g.inner(apply_operator(g, a), b)
    rhs = g.inner(a, apply_operator(g, b))
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_spectral_bound_dominates(pert1, rng):
    g = wave_grid(pert1, 6.0, 0.05, 16)
    from ahlab.radiation import _project

    u = _project(g, rng.normal(size=g.shape))
    for _ in range(60):
        u = apply_operator(g, u)
        u /= np.sqrt(g.inner(u, u).real)
    rayleigh = abs(g.inner(apply_operator(g, u), u))
    assert rayleigh <= spectral_bound(g)


def test_cfl_guard(small_grid, bump):
    dt = 2.0 / np.sqrt(spectral_bound(small_grid))
    with pytest.raises(CFLError):
        wave_solve(ball_model(2), None, bump, 1.0, grid=small_grid, dt=dt)


def test_perturbed_n2_not_supported(pert2):
    with pytest.raises(NotImplementedError):
        wave_grid(pert2)


def test_odd_angular_resolution_rejected(ball1):
    with pytest.raises(ValueError):
        wave_grid(ball1, 4.0, 0.05, 15)


# -- wave solutions --------------------------------------------------------


def test_matches_dalembert(short_run, small_grid, bump):
    st_ = short_run[-1]
    u, ut = radial_dalembert(None, bump.radial, st_.t, small_grid.r)
    assert np.linalg.norm(st_.u - u) / np.linalg.norm(u) <= 0.01
    assert np.linalg.norm(st_.ut - ut) / np.linalg.norm(ut) <= 0.01


def test_matches_dalembert_position_data(small_grid, bump):
    run = wave_solve(ball_model(2), bump, None, 5.0, grid=small_grid, n_saves=2)
    u, _ = radial_dalembert(bump.radial, None, run[-1].t, small_grid.r)
    assert np.linalg.norm(run[-1].u - u) / np.linalg.norm(u) <= 0.01


def test_zero_data(small_grid):
    run = wave_solve(ball_model(2), None, None, 2.0, grid=small_grid)
    assert not np.any(run[-1].u) and not np.any(run.probes)


def test_time_reversal(short_run, small_grid, bump):
    st_ = short_run[-1]
    back = wave_solve(ball_model(2), st_.u, 1j * st_.ut, st_.t, grid=small_grid, dt=short_run.dt, n_saves=2)
    F = bump.radial(small_grid.r)
    assert np.max(np.abs(back[-1].u)) <= 0.01 * np.max(np.abs(st_.u))
    assert np.linalg.norm(back[-1].ut + 1j * F) <= 0.01 * np.linalg.norm(F)


def test_finite_propagation(short_run, small_grid):
    s3 = short_run[3]
    far = small_grid.r > short_run.support + s3.t + 0.5
    assert np.max(np.abs(s3.u[far])) <= 1e-12 * np.max(np.abs(s3.u))


def test_energy_conserved(short_run):
    assert short_run.energy_drift <= 1e-10
    assert short_run.energies[0] > 0


def test_energy_conserved_on_perturbed_polar_grid(pert1):
    g = wave_grid(pert1, 8.0, 0.04, 16)
    run = wave_solve(pert1, None, decay_data, 4.0, grid=g, x_levels=(0.01,))
    assert run.energy_drift <= 1e-10


def test_energy_formula_matches_stepper(short_run, small_grid):
    st_ = short_run[1]
    grid = small_grid
    Au = apply_operator(grid, st_.u)
    vh = st_.ut + 0.5 * short_run.dt * Au
    u_new = st_.u + short_run.dt * vh
    assert energy(grid, st_.u, u_new, vh) == pytest.approx(short_run.energies[0], rel=1e-10)


# -- radiation field -------------------------------------------------------


def test_trace_matches_oracle(long_trace, bump):
    exact = radial_trace_oracle(None, bump.radial, long_trace.s)
    err = np.linalg.norm(long_trace.values[:, 0] - exact) / np.linalg.norm(exact)
    assert err <= 0.01


def test_trace_of_position_data_matches_oracle(long_grid, bump):
    run = wave_solve(ball_model(2), bump, None, 20.0, grid=long_grid)
    tr = radiation_extract(run)
    exact = radial_trace_oracle(bump.radial, None, tr.s)
    assert np.linalg.norm(tr.values[:, 0] - exact) / np.linalg.norm(exact) <= 0.01


def test_sharp_huygens(long_trace, bump):
    lo, hi = np.log(2) - bump.support - 0.05, np.log(2) + bump.support + 0.05
    out = (long_trace.s < lo) | (long_trace.s > hi)
    assert np.max(np.abs(long_trace.values[out])) <= 1e-6 * np.max(np.abs(long_trace.values))


def test_extraction_levels_refinement(long_grid, long_trace, bump):
    run = wave_solve(ball_model(2), None, bump, 20.0, grid=long_grid, x_levels=(5e-3, 2.5e-3, 1.25e-3))
    tr = radiation_extract(run)
    other = np.interp(long_trace.s, tr.s, tr.values[:, 0].real)
    change = np.max(np.abs(other - long_trace.values[:, 0].real)) / np.max(np.abs(long_trace.values))
    assert change <= 5e-3


def test_level_differences_scale_with_x_squared(long_grid, bump):
    run = wave_solve(ball_model(2), None, bump, 20.0, grid=long_grid, x_levels=(0.08, 0.04, 0.02, 0.01))
    assert radiation_extract(run).level_consistency() == pytest.approx(2.0, abs=0.3)


def test_time_derivative_convention(long_trace):
    assert long_trace.dt_factor == DT_FACTOR == -1j
    assert np.max(np.abs(long_trace.values.imag)) <= 1e-12 * np.max(np.abs(long_trace.values))


def test_s_translation(long_grid, long_run, long_trace):
    st0 = long_run[5]
    sh = wave_solve(ball_model(2), st0.u, -1j * st0.ut, 20.0 - st0.t, grid=long_grid, dt=long_run.dt)
    tr = radiation_extract(sh)
    ok = (tr.s + st0.t >= long_trace.s[0]) & (tr.s + st0.t <= long_trace.s[-1])
    shifted = np.interp(tr.s[ok] + st0.t, long_trace.s, long_trace.values[:, 0].real)
    assert np.max(np.abs(tr.values[ok, 0] - shifted)) <= 1e-6 * np.max(np.abs(shifted))


@settings(max_examples=5, deadline=None)
@given(st.floats(-5.0, 5.0).filter(lambda c: abs(c) > 1e-3))
def test_trace_linear_in_data(c):
    M, f = ball_model(2), gaussian_bump(2, 0.5)
    g = wave_grid(M, 10.0, 0.02)
    a = radiation_extract(wave_solve(M, None, f, 10.0, grid=g)).values
    b = radiation_extract(wave_solve(M, None, f.scaled(c), 10.0, grid=g)).values
    np.testing.assert_allclose(b, c * a, rtol=0, atol=1e-12 * abs(c) * np.max(np.abs(a)))


def test_insensitive_to_outer_radius(long_trace, bump):
    M = ball_model(2)
    g = wave_grid(M, 20.0, 0.01)
    tr = radiation_extract(wave_solve(M, None, bump, 20.0, grid=g))
    other = np.interp(long_trace.s, tr.s, tr.values[:, 0].real)
    assert np.max(np.abs(other - long_trace.values[:, 0].real)) <= 1e-6 * np.max(np.abs(long_trace.values))


def test_unrecorded_level_is_a_coverage_error(long_run):
    with pytest.raises(CoverageError):
        radiation_extract(long_run, x_levels=(1e-2, 3e-3))
    with pytest.raises(CoverageError):
        radiation_extract(long_run, s_range=(-40.0, 0.0))


# -- decay ---------------------------------------------------------------


def _synthetic(values, s, s_clean=None):
    v = np.asarray(values, dtype=complex)[:, None]
    return RadiationTrace(s, None, v, v[None], np.array([0.0]), np.zeros(0), np.array([4 * np.pi]),
                          s[-1] if s_clean is None else s_clean)


def test_decay_fit_recovers_rate():
    s = np.linspace(0, 14, 1401)
    tr = _synthetic(np.exp(-0.7 * s) * (2 + 0.0 * s), s)
    rate = decay_fit(tr, (4, 12))
    assert rate.epsilon == pytest.approx(0.7, abs=1e-10)
    assert rate.band[0] <= 0.7 <= rate.band[1]


def test_decay_fit_floor_handling():
    s = np.linspace(0, 14, 1401)
    assert decay_fit(_synthetic(np.where(s < 2, 1.0, 0.0), s), (4, 12)).epsilon == np.inf
    with pytest.raises(FloorError):
        decay_fit(_synthetic(np.where(s < 8, 1.0, 0.0), s), (4, 12))
    with pytest.raises(CoverageError):
        decay_fit(_synthetic(np.ones_like(s), s, s_clean=10.0), (4, 12))


def test_exact_ball_decays_faster_than_exponential(long_trace):
    assert decay_fit(long_trace, (4.0, 12.0)).epsilon == np.inf


@pytest.fixture(scope="module")
def perturbed_trace(pert1):
    g = wave_grid(pert1, 16.0, 0.02, 32)
    return radiation_extract(wave_solve(pert1, None, decay_data, 19.5, grid=g))


def test_perturbed_decay_rate(perturbed_trace):
    full = decay_fit(perturbed_trace, (4.0, 12.0)).epsilon
    a = decay_fit(perturbed_trace, (4.0, 8.0)).epsilon
    b = decay_fit(perturbed_trace, (8.0, 12.0)).epsilon
    assert full >= 0.25
    assert abs(a - b) / min(a, b) <= 0.3


# -- energy identity and Fourier relation ---------------------------------


@pytest.fixture(scope="module")
def energy_ratio(bump, long_grid):
    return energy_identity_check(ball_model(2), bump, grid=long_grid)


def test_energy_ratio_is_one_half(energy_ratio):
    """||R_+ f||^2 equals half of ||f||^2 with the D_t normalisation of the data."""
    assert energy_ratio.ratio == pytest.approx(0.5, abs=0.01)
    assert energy_ratio.edge_fraction <= 0.01


def test_energy_ratio_homogeneous(energy_ratio, bump, long_grid):
    assert energy_identity_check(ball_model(2), bump.scaled(3.0), grid=long_grid).ratio == pytest.approx(
        energy_ratio.ratio, rel=1e-10)


def test_energy_ratio_domain_independent(energy_ratio, bump):
    other = energy_identity_check(ball_model(2), bump, grid=wave_grid(ball_model(2), 20.0, 0.01))
    assert other.ratio == pytest.approx(energy_ratio.ratio, rel=5e-3)


def test_energy_ratio_two_dimensional(ball1):
    f = lambda r, th: np.exp(-(r**2) / 0.5) * (r < 3)
    assert energy_identity_check(ball1, f).ratio == pytest.approx(0.5, abs=0.01)


@pytest.mark.parametrize("which", ["f1", "f2"])
def test_fourier_relation(which, bump, long_run):
    f1, f2 = (bump, None) if which == "f1" else (None, bump)
    rep = fourier_relation_check(ball_model(2), f1, f2, [2.0, 4.0, 8.0], run=None if which == "f1" else long_run)
    assert np.max(rep.residuals) <= 0.05
    if which == "f2":
        assert rep.hermitian_asymmetry <= 1e-6


def test_trace_fourier_of_gaussian():
    s = np.linspace(-12, 12, 4801)
    tr = _synthetic(np.exp(-(s**2) / 2), s)
    lams = np.array([0.5, 1.0, 2.0])
    np.testing.assert_allclose(trace_fourier(tr, lams)[:, 0], np.sqrt(2 * np.pi) * np.exp(-(lams**2) / 2),
                               rtol=1e-10)
