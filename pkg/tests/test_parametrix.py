import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ahlab.hamflow import PhasePoint, flow
from ahlab.metric import BALL, ball_distance, ball_model, perturbed_model, radius_of_x
from ahlab.parametrix import (BoxError, SpectralParams, assemble_kernel, boundary_exponent_fit, build_pair_fans,
                              cauchy_riemann_residual, eikonal_residual, indicial_roots, indicial_symbol,
                              model_kernel_h3, model_resolvent_h3, normal_operator_check,
                              phase_boundary_diagnostic, radial_operator_residual, radial_profile, transport_solve,
                              wkb_residual_order)

from conftest import random_ball_points

KERNEL_ABS = 6.771391313789565  # 100 / (4 pi sinh 1), frozen closed form


# -- spectral parameters ----------------------------------------------------


def test_box_membership():
    with pytest.raises(BoxError):
        SpectralParams(0.1, 1.5)
    with pytest.raises(BoxError):
        SpectralParams(0.1, 1 + 0.2j)
    with pytest.raises(BoxError):
        SpectralParams(1.0, 1.0)


@settings(max_examples=50)
@given(st.floats(1.5, 200.0), st.floats(-0.9, 0.9))
def test_lambda_round_trip(re, im_scale):
    lam = complex(re, im_scale)
    p = SpectralParams.from_lambda(lam)
    assert p.lam == pytest.approx(lam, rel=1e-14)
    assert p.h == pytest.approx(1 / re, rel=1e-15)


# -- model kernels ------------------------------------------------------------


def test_model_kernel_example():
    k = model_kernel_h3(SpectralParams(0.1, 1.0), 1.0)
    assert abs(k) == pytest.approx(KERNEL_ABS, rel=1e-14)
    assert np.angle(k) == pytest.approx(np.angle(np.exp(-10j)), abs=1e-12)


def test_model_kernel_decay_rate():
    r = np.linspace(8, 14, 7)
    k = model_kernel_h3(SpectralParams(0.1, 1.0), r)
    assert np.polyfit(r, np.log(np.abs(k)), 1)[0] == pytest.approx(-1.0, abs=1e-5)
    np.testing.assert_allclose(np.abs(k[-1]), 100 / (2 * np.pi) * np.exp(-r[-1]), rtol=1e-10)


@given(st.floats(0.8, 1.2))
def test_model_kernel_modulus_independent_of_real_sigma(s):
    a = model_kernel_h3(SpectralParams(0.1, s), 1.3)
    b = model_kernel_h3(SpectralParams(0.1, 1.0), 1.3)
    assert abs(a) == pytest.approx(abs(b), rel=1e-13)


def test_model_kernels_agree():
    a = 100 * model_resolvent_h3(10.0, 1.0)
    b = model_kernel_h3(SpectralParams(0.1, 1.0), 1.0)
    assert abs(a - b) <= 1e-14 * abs(b)


def test_model_resolvent_radial_ode():
    assert np.max(radial_operator_residual(2 - 0.3j, np.linspace(0.5, 3, 20))) <= 1e-6


def test_model_resolvent_decays_for_negative_imaginary_part():
    r = np.array([1.0, 2.0, 3.0])
    v = np.abs(model_resolvent_h3(5 - 0.5j, r) * np.sinh(r))
    assert np.all(np.diff(v) < 0)


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_model_kernels_reject_nonpositive_radius(bad):
    with pytest.raises(ValueError):
        model_resolvent_h3(2.0, bad)
    with pytest.raises(ValueError):
        model_kernel_h3(SpectralParams(0.1, 1.0), bad)


# -- eikonal and transport -------------------------------------------------


def test_eikonal_ball(ball2, rng):
    pairs = np.stack([random_ball_points(rng, 20, 3, 0.8), random_ball_points(rng, 20, 3, 0.8)], 1)
    assert eikonal_residual(ball2, pairs).max_residual <= 1e-6


def test_eikonal_perturbed_through_collar(pert2):
    targets = radius_of_x(0.1) * np.array([[0.8, 0.6, 0], [0, 0.6, 0.8], [0.6, 0, -0.8]])
    sources = np.array([[0.96, 0, 0.1], [0, 0.95, 0.2], [-0.1, 0.1, 0.2]])
    assert eikonal_residual(pert2, np.stack([targets, sources], 1)).max_residual <= 1e-4


def test_eikonal_near_diagonal(ball2):
    z = np.array([0.3, 0.1, 0.0])
    pair = np.array([[z + np.array([1e-3 * 0.5 * (1 - z @ z), 0, 0]), z]])
    assert ball_distance(pair[:, 0], pair[:, 1])[0] == pytest.approx(1e-3, rel=1e-3)
    assert eikonal_residual(ball2, pair).max_residual <= 1e-3


@pytest.fixture(scope="module")
def radial_trace():
    M = ball_model(2)
    tr = flow(M, PhasePoint.unit(M, BALL, np.zeros(3), np.eye(3)[0]), 6.1, t_eval=np.linspace(0, 6.1, 611))
    return M, tr


def test_transport_inverse_sinh_law(radial_trace):
    M, tr = radial_trace
    amp = transport_solve(M, tr, SpectralParams(0.1, 1.0))
    m = amp.r <= 6.0
    v = amp.a[0][m] * np.sinh(amp.r[m])
    assert np.max(np.abs(v / v[0] - 1)) <= 1e-4
    assert np.all(amp.a[0].real > 0)


def test_transport_zero_initialisation_gives_zero(radial_trace):
    M, tr = radial_trace
    amp = transport_solve(M, tr, SpectralParams(0.1, 1.0), J=1, sources=[np.zeros_like, np.zeros_like], init=[0.0, 0.0])
    assert not np.any(amp.a)


def test_first_correction_vanishes_on_the_three_ball():
    prof = radial_profile(ball_model(2), SpectralParams(0.1, 1.0), J=1, r_max=8)
    m = (prof.r > 0.1) & (prof.r < 6)
    assert np.max(np.abs(prof.a[1][m] / prof.a[0][m])) <= 1e-3


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("model", ["ball", "pert"])
def test_boundary_exponent(n, model):
    M = ball_model(n) if model == "ball" else perturbed_model(n)
    d = M.dim
    st_ = PhasePoint.unit(M, BALL, np.full(d, 0.05), np.eye(d)[0] + 0.2 * np.eye(d)[1])
    tr = flow(M, st_, 12.0, x_min=1e-4, t_eval=np.linspace(0, 12, 1201))
    slope = boundary_exponent_fit(transport_solve(M, tr, SpectralParams(0.1, 1.0)))
    assert slope == pytest.approx(n / 2, abs=0.02 if model == "ball" else 0.05)


def test_boundary_exponent_needs_boundary_samples(radial_trace):
    M, tr = radial_trace
    amp = transport_solve(M, tr, SpectralParams(0.1, 1.0))
    amp.x[:] = np.maximum(amp.x, 0.01)
    with pytest.raises(ValueError):
        boundary_exponent_fit(amp)


# -- assembled kernels ------------------------------------------------------


@pytest.mark.parametrize("h", [0.1, 0.05])
def test_kernel_matches_closed_form(ball2, rng, h):
    pairs = np.stack([random_ball_points(rng, 50, 3, 0.8), random_ball_points(rng, 50, 3, 0.8)], 1)
    p = SpectralParams(h, 1.0)
    kg = assemble_kernel(ball2, p, pairs)
    exact = model_kernel_h3(p, ball_distance(pairs[:, 0], pairs[:, 1]))
    assert np.max(np.abs(kg.values / exact - 1)) <= 1e-4


def test_kernel_symmetric_on_ball(ball2, rng):
    pairs = np.stack([random_ball_points(rng, 10, 3, 0.8), random_ball_points(rng, 10, 3, 0.8)], 1)
    p = SpectralParams(0.1, 1 + 0.02j)
    a = assemble_kernel(ball2, p, pairs).values
    b = assemble_kernel(ball2, p, pairs[:, ::-1]).values
    np.testing.assert_allclose(a, b, rtol=1e-6)


def test_kernel_cauchy_riemann(ball2, rng):
    pairs = np.stack([random_ball_points(rng, 10, 3, 0.8), random_ball_points(rng, 10, 3, 0.8)], 1)
    assert cauchy_riemann_residual(ball2, pairs, 0.1) <= 1e-4


def test_phase_splits_off_log_boundary_defining_function(pert2):
    assert phase_boundary_diagnostic(pert2, np.zeros(3), [1.0, 0.3, 0.2]).variation <= 1e-3


def test_wkb_exact_on_ball(ball2, rng):
    pairs = np.stack([random_ball_points(rng, 3, 3, 0.6), random_ball_points(rng, 3, 3, 0.6)], 1)
    hs = [0.1, 0.05, 0.025, 0.0125]
    fit = wkb_residual_order(ball2, [SpectralParams(h, 1.0) for h in hs], pairs, 0,
                             fan_kw=dict(dr=0.01, n_alpha=9, dalpha=0.05))
    assert np.max(fit.residuals) <= 1e-8


@pytest.fixture(scope="module")
def wkb_setup():
    M = perturbed_model(2)
    targets = radius_of_x(0.1) * np.array([[0.8, 0.6, 0], [0, 0.6, 0.8], [0.6, 0, -0.8]])
    srcs = np.array([[0.05, 0.0, 0.0], [0.0, 0.1, 0.05], [-0.1, 0, 0]])
    pairs = np.stack([targets, srcs], 1)
    return M, pairs, build_pair_fans(M, pairs, dict(dr=0.01, n_alpha=9, dalpha=0.05))


def test_wkb_order_gain(wkb_setup):
    M, pairs, fans = wkb_setup
    hs = [0.1, 0.05, 0.025, 0.0125]
    fits = [wkb_residual_order(M, [SpectralParams(h, 1.0) for h in hs], pairs, J, fans=fans) for J in (0, 1)]
    assert fits[1].slope - fits[0].slope == pytest.approx(1.0, abs=0.3)


def test_wkb_uniform_in_box(wkb_setup):
    M, pairs, fans = wkb_setup
    hs = [0.1, 0.05, 0.025, 0.0125]
    real = wkb_residual_order(M, [SpectralParams(h, 1.0) for h in hs], pairs, 1, fans=fans).residuals
    cplx = wkb_residual_order(M, [SpectralParams(h, 1 - 1j * h) for h in hs], pairs, 1, fans=fans).residuals
    r_span = max(f.r[-1] for f, _ in fans)
    assert np.max(cplx / real) <= np.exp(r_span)
    assert np.max(real / cplx) <= np.exp(r_span)


def test_wkb_needs_four_values(wkb_setup):
    M, pairs, fans = wkb_setup
    with pytest.raises(ValueError):
        wkb_residual_order(M, [SpectralParams(h, 1.0) for h in (0.1, 0.05)], pairs, 0, fans=fans)


# -- boundary model operators ---------------------------------------------


def test_indicial_roots_example():
    a, b = indicial_roots(2, SpectralParams(0.1, 1.0))
    assert a == 1 + 10j and b == 1 - 10j


@settings(max_examples=30)
@given(st.sampled_from([1, 2]), st.floats(0.01, 0.5), st.floats(0.8, 1.2), st.floats(-1.0, 1.0))
def test_indicial_roots_annihilate(n, h, s_re, s_im):
    p = SpectralParams(h, complex(s_re, s_im * h))
    roots = np.array(indicial_roots(n, p))
    assert np.max(np.abs(indicial_symbol(n, p, roots))) <= 1e-10 * max(1.0, abs(p.sigma) ** 2)
    assert roots[0] != roots[1]


def test_indicial_symbol_on_powers():
    """x^alpha applied to the indicial operator by finite differences in log x."""
    p = SpectralParams(0.1, 1.0 + 0.03j)
    alpha = indicial_roots(1, p)[0]
    t = np.linspace(-3, -1, 10)
    f = lambda s: np.exp(alpha * s)
    d = 1e-3
    d1 = (f(t + d) - f(t - d)) / (2 * d)
    d2 = (f(t + d) - 2 * f(t) + f(t - d)) / d**2
    val = p.h**2 * (-d2 + 1 * d1 - 0.25 * f(t)) - p.sigma**2 * f(t)
    assert np.max(np.abs(val / f(t))) <= 1e-5


@pytest.mark.parametrize("model, ff_slope", [("ball2", 1.0), ("ball1", 2.0), ("pert2", 1.0)])
def test_normal_operator_slopes(model, ff_slope, request):
    rep = normal_operator_check(request.getfixturevalue(model), SpectralParams(0.1, 1.0))
    assert rep.front_face_slope >= ff_slope - 0.1
    assert rep.front_face_slope == pytest.approx(ff_slope, abs=0.1) or model == "pert2"
    assert rep.semiclassical_slope == pytest.approx(1.0, abs=0.1)


def test_front_face_model_exact_at_boundary(ball2):
    rep = normal_operator_check(ball2, SpectralParams(0.1, 1.0), x_levels=(1e-6, 1e-7, 1e-8))
    assert np.max(rep.front_face_deviation) <= 1e-5
