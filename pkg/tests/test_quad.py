import numpy as np
import pytest

from standoff.errors import ConfigError, InfeasibleHoverError, SingularAttitudeError
from standoff.quad import (QuadParams, UavState, continuous_dynamics,
                           euler_coriolis, euler_inertia, hover_input,
                           linearize, rotation_matrix, step_euler,
                           thrust_torque)


@pytest.fixture
def params():
    return QuadParams()


def rest_state(position=(0.0, 0.0, 0.0)):
    return UavState.at_rest(position)


def test_thrust_torque_symmetric_hover(params):
    thrust, torque = thrust_torque(np.ones(4), params)
    np.testing.assert_allclose(thrust, [0.0, 0.0, 4.0])
    np.testing.assert_allclose(torque, [0.0, 0.0, 0.0])


def test_thrust_torque_zero_input(params):
    thrust, torque = thrust_torque(np.zeros(4), params)
    np.testing.assert_allclose(thrust, 0.0)
    np.testing.assert_allclose(torque, 0.0)


def test_thrust_torque_yaw_only():
    # hand expansion: u=(0,1,0,1) spins rotors 2 and 4, pure yaw torque
    p = QuadParams(l=0.225, l_c=1.0, d_c=0.05)
    thrust, torque = thrust_torque(np.array([0.0, 1.0, 0.0, 1.0]), p)
    assert thrust[2] == pytest.approx(2.0)
    np.testing.assert_allclose(torque, [0.0, 0.0, 0.1], atol=1e-15)


def test_hover_input_value(params):
    u = hover_input(params)
    np.testing.assert_allclose(u, 0.468 * 9.81 / 4.0)
    assert u[0] == pytest.approx(1.14777, abs=1e-5)


def test_hover_input_scales_inversely_with_thrust_coeff():
    u1 = hover_input(QuadParams(l_c=1.0))
    u2 = hover_input(QuadParams(l_c=2.0))
    np.testing.assert_allclose(u2, u1 / 2.0)


def test_hover_input_must_fit_inside_box():
    with pytest.raises(InfeasibleHoverError):
        QuadParams(m=12.0 * 4.0 / 9.81)  # mg/(4 l_c) == u_max exactly


def test_tau_zero_rejected():
    with pytest.raises(ConfigError):
        QuadParams(tau=0.0)


def test_hover_equilibrium(params):
    dx = continuous_dynamics(rest_state(), hover_input(params), params)
    np.testing.assert_allclose(dx, 0.0, atol=1e-12)


def test_free_fall(params):
    dx = continuous_dynamics(rest_state(), np.zeros(4), params)
    np.testing.assert_allclose(dx[6:9], [0.0, 0.0, -9.81], atol=1e-12)
    np.testing.assert_allclose(dx[9:12], 0.0, atol=1e-15)


def test_drag_isolated(params):
    x = UavState(np.zeros(3), np.zeros(3), np.array([1.0, 0.0, 0.0]), np.zeros(3))
    dx = continuous_dynamics(x, hover_input(params), params)
    np.testing.assert_allclose(dx[6:9], [-params.drag[0] / params.m, 0.0, 0.0],
                               atol=1e-12)


def test_step_euler_hover_fixed_point(params):
    x = rest_state((1.0, -2.0, 3.0))
    nxt = step_euler(x, hover_input(params), params)
    np.testing.assert_allclose(nxt.as_vector(), x.as_vector(), atol=1e-12)


def test_step_euler_free_fall(params):
    nxt = step_euler(rest_state(), np.zeros(4), params)
    np.testing.assert_allclose(nxt.xi_dot, [0.0, 0.0, -0.981], atol=1e-12)


def test_singular_pitch_faults(params):
    x = UavState(np.zeros(3), np.array([0.0, np.pi / 2, 0.0]), np.zeros(3), np.zeros(3))
    with pytest.raises(SingularAttitudeError):
        continuous_dynamics(x, hover_input(params), params)


def test_rotation_orthonormal():
    rng = np.random.default_rng(7)
    for _ in range(50):
        eta = rng.uniform(-np.pi / 2 + 0.05, np.pi / 2 - 0.05, size=3)
        eta[2] = rng.uniform(-np.pi, np.pi)
        r = rotation_matrix(eta)
        np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


def test_coriolis_matches_lagrangian_finite_differences(params):
    # C @ eta_dot must equal dJ/dt @ eta_dot - 1/2 d(eta_dot' J eta_dot)/d(eta)
    rng = np.random.default_rng(3)
    h = 1e-6
    for _ in range(25):
        eta = rng.uniform(-1.0, 1.0, size=3)
        eta_dot = rng.uniform(-2.0, 2.0, size=3)
        c = euler_coriolis(eta, eta_dot, params)

        jdot = np.zeros((3, 3))
        grad = np.zeros(3)
        for k in range(3):
            ep = eta.copy(); ep[k] += h
            em = eta.copy(); em[k] -= h
            dj = (euler_inertia(ep, params) - euler_inertia(em, params)) / (2 * h)
            jdot += dj * eta_dot[k]
            grad[k] = (eta_dot @ euler_inertia(ep, params) @ eta_dot
                       - eta_dot @ euler_inertia(em, params) @ eta_dot) / (2 * h)
        np.testing.assert_allclose(c @ eta_dot, jdot @ eta_dot - 0.5 * grad,
                                   rtol=1e-6, atol=1e-7)


def test_ballistic_motion_matches_parabola(params):
    # zero input, zero drag: the dynamics reduce to constant acceleration.
    # Heun integration is exact for constant acceleration, so the check is
    # limited only by roundoff, far below the 1e-6 bar.
    p = QuadParams(drag=(1e-300, 1e-300, 1e-300))
    v0 = np.array([1.0, -0.5, 2.0])
    x = np.concatenate([np.zeros(3), np.zeros(3), v0, np.zeros(3)])
    dt = 1e-4
    n = int(round(1.0 / dt))
    u = np.zeros(4)
    for _ in range(n):
        f1 = continuous_dynamics(x, u, p)
        f2 = continuous_dynamics(x + dt * f1, u, p)
        x = x + 0.5 * dt * (f1 + f2)
    t = n * dt
    expect_pos = v0 * t + 0.5 * np.array([0.0, 0.0, -9.81]) * t**2
    expect_vel = v0 + np.array([0.0, 0.0, -9.81]) * t
    np.testing.assert_allclose(x[0:3], expect_pos, atol=1e-6)
    np.testing.assert_allclose(x[6:9], expect_vel, atol=1e-9)


def test_linearize_thrust_rows_at_hover(params):
    lin = linearize(rest_state(), hover_input(params), params)
    expect = params.tau * params.l_c / params.m
    np.testing.assert_allclose(lin.b_mat[8, :], expect, rtol=1e-6)


def test_linearize_small_tau_limit():
    p = QuadParams(tau=1e-12)
    lin = linearize(rest_state(), hover_input(p), p)
    np.testing.assert_allclose(lin.a_mat, np.eye(12), atol=1e-9)
    np.testing.assert_allclose(lin.b_mat, 0.0, atol=1e-9)


def test_linearization_consistency_second_order(params):
    # ||f(x+dx, u+du) - f(x,u) - Jx dx - Ju du|| <= C (||dx||+||du||)^2,
    # with C fitted at the largest perturbation and checked at smaller ones
    rng = np.random.default_rng(11)
    for _ in range(100):
        xv = np.zeros(12)
        xv[0:3] = rng.uniform(-5, 5, 3)
        xv[3:5] = rng.uniform(-0.6, 0.6, 2)
        xv[5] = rng.uniform(-np.pi, np.pi)
        xv[6:9] = rng.uniform(-2, 2, 3)
        xv[9:12] = rng.uniform(-1, 1, 3)
        u = rng.uniform(0.2, 4.0, 4)
        lin = linearize(xv, u, params)
        jx = (lin.a_mat - np.eye(12)) / params.tau
        ju = lin.b_mat / params.tau
        f0 = continuous_dynamics(xv, u, params)

        dx_dir = rng.standard_normal(12)
        dx_dir /= np.linalg.norm(dx_dir)
        du_dir = rng.standard_normal(4)
        du_dir /= np.linalg.norm(du_dir)

        def remainder(scale):
            dx, du = scale * dx_dir, scale * du_dir
            f1 = continuous_dynamics(xv + dx, u + du, params)
            return np.linalg.norm(f1 - f0 - jx @ dx - ju @ du)

        c_fit = remainder(1e-2) / (2e-2)**2 * 1.5 + 1e-4
        assert remainder(1e-3) <= c_fit * (2e-3)**2 + 1e-9
        assert remainder(1e-4) <= c_fit * (2e-4)**2 + 1e-9


def test_state_vector_round_trip():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(12)
    np.testing.assert_array_equal(UavState.from_vector(v).as_vector(), v)
