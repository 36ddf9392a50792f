import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ahlab.metric import (BALL, COLLAR, COLLAR_ROT, ConfigError, CoverageError, DomainError, ball_distance,
                          ball_model, metric_from_config, perturbed_model, transition, x_of_radius)

from conftest import random_ball_points


def test_ball_metric_at_origin(ball2):
    g, gs, _ = ball2.eval(BALL, np.zeros((1, 3)), derivs=False)
    np.testing.assert_allclose(g[0], 4 * np.eye(3), rtol=0, atol=1e-15)
    np.testing.assert_allclose(gs[0], 0.25 * np.eye(3), rtol=0, atol=1e-15)


@pytest.mark.parametrize("model", ["ball", "pert"])
@pytest.mark.parametrize("n", [1, 2])
def test_inverse_metric(model, n, rng):
    M = ball_model(n) if model == "ball" else perturbed_model(n)
    z = random_ball_points(rng, 100, n + 1, 0.99)
    g, gs, _ = M.eval(BALL, z, derivs=False)
    np.testing.assert_allclose(g @ gs, np.broadcast_to(np.eye(n + 1), g.shape), atol=1e-12)
    assert np.all(np.linalg.eigvalsh(g) > 0)
    assert np.all(M.volume_density(BALL, z) > 0)


def test_ball_chart_domain(ball2):
    with pytest.raises(DomainError):
        ball2.eval(BALL, np.array([[1.0, 0.0, 0.0]]))


def test_collar_degenerates_at_x_two(ball2):
    H, _, _ = ball2.angular_metric(np.array([2.0]), np.array([[1.0, 0.5]]), derivs=False)
    assert np.max(np.abs(H)) == 0.0
    with pytest.raises(DomainError):
        ball2.collar_eval(np.array([[2.0, 1.0, 0.5]]))


def test_transition_closed_form(ball2):
    q, _ = transition(ball2, BALL, np.array([[0.3, 0.4, 0.0]]), np.array([[1.0, 0, 0]]), COLLAR)
    assert q[0, 0] == pytest.approx(2 / 3, rel=1e-14)


@pytest.mark.parametrize("n", [1, 2])
def test_metric_pullback_consistency(n, rng):
    """Collar metric pulled back through the transition equals the ball metric."""
    M = ball_model(n)
    z = random_ball_points(rng, 100, n + 1, 0.98)
    z = z[np.linalg.norm(z, axis=1) > 0.05]
    if n == 2:
        z = z[np.abs(z[:, 2]) / np.linalg.norm(z, axis=1) < 0.99]
    zeta = rng.normal(size=z.shape)
    q, zq = transition(M, BALL, z, zeta, COLLAR)
    _, gs_b, _ = M.eval(BALL, z, derivs=False)
    _, gs_c, _ = M.eval(COLLAR, q, derivs=False)
    pb = np.einsum("ni,nij,nj->n", zeta, gs_b, zeta)
    pc = np.einsum("ni,nij,nj->n", zq, gs_c, zq)
    np.testing.assert_allclose(pc, pb, rtol=1e-10)
    zb, eb = transition(M, COLLAR, q, zq, BALL)
    np.testing.assert_allclose(zb, z, atol=1e-12)
    np.testing.assert_allclose(eb, zeta, rtol=1e-10, atol=1e-12)


def test_rotated_collar_round_trip(ball2, rng):
    z = random_ball_points(rng, 50, 3, 0.95)
    z = z[np.linalg.norm(z, axis=1) > 0.05]
    zeta = rng.normal(size=z.shape)
    q, zq = transition(ball2, BALL, z, zeta, COLLAR_ROT, check=False)
    zb, eb = transition(ball2, COLLAR_ROT, q, zq, BALL)
    np.testing.assert_allclose(zb, z, atol=1e-12)
    np.testing.assert_allclose(eb, zeta, rtol=1e-10, atol=1e-12)


def test_pole_band_is_a_coverage_error(ball2):
    with pytest.raises(CoverageError):
        transition(ball2, BALL, np.array([[0.0, 0.0, 0.5]]), np.array([[1.0, 0, 0]]), COLLAR)


@given(st.floats(0.0, 0.999), st.floats(0.0, 0.999))
def test_x_monotone_in_radius(a, b):
    if a < b:
        assert x_of_radius(a) >= x_of_radius(b)
    if a + 1e-9 < b:
        assert x_of_radius(a) > x_of_radius(b)


def test_gamma_closed_form(ball2):
    x = np.linspace(0.01, 1.9, 40)
    y = np.tile([1.1, 0.4], (40, 1))
    gamma, _, _ = ball2.collar_coefficients(x, y)
    np.testing.assert_allclose(gamma, -x / (1 - x**2 / 4), rtol=1e-12)
    # central-difference cross-check of d/dx log sqrt(det H)
    d = 1e-5
    ld = lambda s: 0.5 * np.log(np.linalg.det(ball2.angular_metric(s, y, derivs=False)[0]))
    np.testing.assert_allclose((ld(x + d) - ld(x - d)) / (2 * d), gamma, rtol=1e-7, atol=1e-9)


def test_gamma_vanishes_at_boundary(ball1):
    gamma, _, _ = ball1.collar_coefficients(np.array([1e-8]), np.array([[0.3]]))
    assert abs(gamma[0]) < 1e-7


@pytest.mark.parametrize("n", [1, 2])
def test_perturbation_locality(n, rng):
    M0, M1 = ball_model(n), perturbed_model(n)
    x = np.linspace(0.2, 1.9, 30)
    y = np.column_stack([rng.uniform(0.2, 2.9, 30)] + ([rng.uniform(-3, 3, 30)] if n == 2 else []))
    for a, b in zip(M0.collar_coefficients(x, y), M1.collar_coefficients(x, y)):
        assert np.array_equal(a, b)
    inner = random_ball_points(rng, 40, n + 1, 0.8)
    assert np.array_equal(M0.eval(BALL, inner)[1], M1.eval(BALL, inner)[1])


@pytest.mark.parametrize("n", [1, 2])
def test_perturbation_is_active_and_positive(n):
    M0, M1 = ball_model(n), perturbed_model(n)
    y = np.array([[0.7] * n])
    H0 = M0.angular_metric(np.array([0.1]), y, derivs=False)[0]
    H1 = M1.angular_metric(np.array([0.1]), y, derivs=False)[0]
    assert np.max(np.abs(H1 - H0)) > 1e-3
    assert M1.positivity_margin() > 0


def test_perturbation_must_vanish_outside_support():
    with pytest.raises(ConfigError, match="x_supp"):
        perturbed_model(2, [{"amplitude": "bump(x,0,0.5)", "tensor": "p2(y)"}], x_supp=0.2)


def test_ball_distance_closed_form():
    assert ball_distance(np.zeros(3), np.array([0.5, 0, 0]))[0] == pytest.approx(np.log(3), rel=1e-15)


def test_config_round_trip():
    doc = {"n": 2, "model": "perturbed_collar", "x_supp": 0.2,
           "perturbation": [{"amplitude": "bump(x,0,0.2)", "tensor": "p2(y)"}]}
    M = metric_from_config(json.dumps(doc))
    assert metric_from_config(M.to_config()) == M
    assert metric_from_config({"n": 1}) == ball_model(1)


@pytest.mark.parametrize("doc, field", [
    ({"n": 3}, "metric.n"),
    ({"model": "sphere"}, "metric.model"),
    ({"model": "perturbed_collar", "perturbation": [{"amplitude": "wiggle(x)", "tensor": "p2(y)"}]},
     "metric.perturbation[0].amplitude"),
    ({"model": "perturbed_collar", "perturbation": [{"amplitude": "bump(x,0,0.2)", "tensor": "q(y)"}]},
     "metric.perturbation[0].tensor"),
    ({"x_supp": 1.5}, "metric.x_supp"),
])
def test_config_errors_name_the_field(doc, field):
    with pytest.raises(ConfigError) as info:
        metric_from_config(doc)
    assert info.value.path == field


def test_metric_is_immutable(ball2):
    with pytest.raises(Exception):
        ball2.n = 1


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-0.6, 0.6), min_size=3, max_size=3))
def test_ball_metric_conformal_factor(z):
    z = np.array([z])
    g, _, _ = ball_model(2).eval(BALL, z, derivs=False)
    c = 4 / (1 - np.sum(z**2)) ** 2
    np.testing.assert_allclose(g[0], c * np.eye(3), rtol=1e-13)
