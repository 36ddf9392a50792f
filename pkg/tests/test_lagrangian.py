import numpy as np
import pytest

from ahlab.hamflow import hamiltonian
from ahlab.lagrangian import (FrameError, LagrangianSample, caustic_scan, flow_commutation, flowout_distance_check,
                              isotropy_residual, lambda_lr_match, phase_gradient_check, random_cosphere,
                              sample_flowout, slice_identity_check, slice_lambda_roots)
from ahlab.metric import BALL

T_GRID = [(0.0, 0.0), (0.3, 0.5), (1.0, 2.0), (2.5, 0.7), (0.2, 3.5)]


@pytest.fixture(scope="module")
def ball_sweep(ball2):
    base = random_cosphere(ball2, 6, np.random.default_rng(3))
    sweep, failures = sample_flowout(ball2, base, T_GRID)
    assert failures == 0
    return sweep


@pytest.fixture(scope="module")
def pert_sweep(pert2):
    base = random_cosphere(pert2, 6, np.random.default_rng(4), r_max=3.0)
    sweep, failures = sample_flowout(pert2, base, T_GRID + [(2.0, 4.0)])
    assert failures == 0
    return sweep


def test_initial_set_membership(ball_sweep, ball2):
    for s in ball_sweep:
        assert hamiltonian(ball2, s.left) == pytest.approx(0.5, abs=1e-9)
        assert hamiltonian(ball2, s.right) == pytest.approx(0.5, abs=1e-9)
        if s.on_diagonal_set:
            np.testing.assert_array_equal(s.left.z, s.right.z)
            np.testing.assert_array_equal(s.left.zeta, -s.right.zeta)


def test_flowout_distance_is_total_time(ball_sweep, ball2):
    assert flowout_distance_check(ball2, ball_sweep) <= 1e-6


def test_isotropy_on_initial_set(ball_sweep):
    for s in ball_sweep:
        if s.on_diagonal_set:
            assert isotropy_residual(s) <= 1e-9


@pytest.mark.parametrize("which", ["ball_sweep", "pert_sweep"])
def test_isotropy_sweep(which, request):
    sweep = request.getfixturevalue(which)
    res = [isotropy_residual(s) for s in sweep]
    assert max(res) <= 1e-6
    # bilinearity: the residual does not depend on the frame normalisation
    for s in sweep[:5]:
        assert abs(isotropy_residual(s, orthonormalize=True) - isotropy_residual(s)) <= 1e-6


def test_frame_has_full_rank(pert_sweep):
    for s in pert_sweep:
        sv = np.linalg.svd(s.tangent_frame, compute_uv=False)
        assert sv[-1] > 1e-8 * sv[0]
        assert s.tangent_frame.shape[0] == 2 * 2 + 2


def test_degenerate_frame_rejected(ball_sweep):
    s = ball_sweep[1]
    F = s.tangent_frame.copy()
    F[1] = F[0]
    bad = LagrangianSample(s.left, s.right, s.t1, s.t2, F)
    with pytest.raises(FrameError):
        isotropy_residual(bad)


@pytest.mark.parametrize("which, model", [("ball_sweep", "ball2"), ("pert_sweep", "pert2")])
def test_no_caustics(which, model, request):
    rep = caustic_scan(request.getfixturevalue(model), request.getfixturevalue(which))
    assert rep.kappa_est == 0
    assert set(rep.histogram) == {0}
    assert rep.worst_margin >= 10
    n_diag = sum(s.on_diagonal_set for s in request.getfixturevalue(which))
    assert rep.excluded == n_diag


def test_left_right_match(pert_sweep, pert2):
    assert max(lambda_lr_match(pert2, pert_sweep, np.random.default_rng(0))) <= 1e-6


def test_flows_commute(pert2):
    base = random_cosphere(pert2, 4, np.random.default_rng(5))
    assert flow_commutation(pert2, base, 1.3, 2.1) <= 1e-7


def test_phase_gradient_radial(ball2):
    base = [(np.zeros(3), np.array([2.0, 0.0, 0.0]))]
    (s,), _ = sample_flowout(ball2, base, [(0.4, 0.9)], frames=False)
    assert max(phase_gradient_check(ball2, s)) <= 1e-6


def test_phase_gradient_swap_symmetry(ball_sweep, ball2):
    s = ball_sweep[2]
    swapped = LagrangianSample(s.right, s.left, s.t2, s.t1, None)
    a = phase_gradient_check(ball2, s)
    b = phase_gradient_check(ball2, swapped)
    assert a[0] == pytest.approx(b[1], abs=1e-6) and a[1] == pytest.approx(b[0], abs=1e-6)


def test_phase_gradient_perturbed(pert_sweep, pert2):
    near = [s for s in pert_sweep if 0 < s.t1 + s.t2 <= 3.0]
    for s in near[::3]:
            assert max(phase_gradient_check(pert2, s)) <= 1e-4


def test_slice_roots():
    np.testing.assert_allclose(sorted(np.real(slice_lambda_roots(0.0))), [-2.0, 0.0])


@pytest.mark.parametrize("model", ["ball1", "pert1", "ball2", "pert2"])
def test_slice_identity(model, request):
    M = request.getfixturevalue(model)
    rng = np.random.default_rng(1)
    grid = []
    for xp in (0.0, 0.05, 0.15, 0.5):
        for _ in range(8):
            y = [rng.uniform(-3, 3)] if M.n == 1 else [rng.uniform(0.3, 2.8), rng.uniform(-3, 3)]
            m = [1.0] if M.n == 1 else rng.normal(size=2)
            grid.append((xp, y, rng.uniform(0, np.pi), m))
    assert slice_identity_check(M, grid) <= 1e-9


def test_slice_circle_unperturbed_n1(ball1):
    """(lambda+1, mu sqrt(h)) lies on the unit circle for the exact model."""
    alphas = np.linspace(0, np.pi, 13)
    vals = slice_identity_check(ball1, [(0.0, [0.4], a, [1.0]) for a in alphas])
    assert vals <= 1e-12
