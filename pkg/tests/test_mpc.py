import numpy as np
import pytest

from standoff.errors import ConfigError
from standoff.guidance import ReferenceTrajectory, TargetState, TrackingPattern, plan_trajectory
from standoff.mpc import (LinearizedMpc, MpcConfig, NonlinearMpc, angle_selector,
                          assemble_condensed, assemble_constraints,
                          build_condensed_qp, build_offsets, expand_blocks,
                          lmpc_control, nmpc_control, rollout, rollout_cost)
from standoff.quad import Linearization, QuadParams, UavState, hover_input, linearize


def hover_reference(params, n_p, position=(0.0, 0.0, 5.0)):
    states = np.zeros((n_p + 1, 12))
    states[:, 0:3] = position
    return ReferenceTrajectory(states)


def circle_reference(xi, n_p, tau, pattern=None):
    pat = pattern or TrackingPattern()
    return plan_trajectory(xi, TargetState(np.zeros(3), np.zeros(3)), pat,
                           pat.r_d, n_p, tau)


def toy_cfg(n_p, n_c, n_state=1, n_in=1):
    return MpcConfig(n_p=n_p, n_c=n_c, q_diag=np.ones(n_state),
                     r_diag=np.ones(n_in), angle_limit=np.pi / 4)


def test_config_validation():
    with pytest.raises(ConfigError):
        MpcConfig(n_p=5, n_c=6)
    with pytest.raises(ConfigError):
        MpcConfig(r_diag=np.zeros(4))
    with pytest.raises(ConfigError):
        MpcConfig(angle_limit=2.0)


def test_offsets_zero_for_trim_reference():
    params = QuadParams()
    lin = linearize(UavState.at_rest((0, 0, 5.0)), hover_input(params), params)
    ref = hover_reference(params, 5)
    offsets = build_offsets(lin, ref, hover_input(params))
    np.testing.assert_allclose(offsets, 0.0, atol=1e-9)


def test_offsets_scalar_toy():
    lin = Linearization(np.array([[2.0]]), np.array([[1.0]]))
    states = np.ones((4, 1))
    offsets = build_offsets(lin, states, np.array([0.0]))
    np.testing.assert_allclose(offsets, 1.0)
    assert offsets.shape == (3, 1)


def test_offsets_single_step():
    lin = Linearization(np.array([[2.0]]), np.array([[1.0]]))
    offsets = build_offsets(lin, np.ones((2, 1)), np.array([0.0]))
    assert offsets.shape == (1, 1)


def test_condensed_hand_case():
    # A=2, B=1, N_p=2, N_c=1: A~=[2;4], B~=[1;3], D~=[r1; 2 r1 + r2]
    lin = Linearization(np.array([[2.0]]), np.array([[1.0]]))
    offsets = np.array([[5.0], [7.0]])
    a_t, b_t, d_t = assemble_condensed(lin, offsets, toy_cfg(2, 1))
    np.testing.assert_array_equal(a_t, [[2.0], [4.0]])
    np.testing.assert_array_equal(b_t, [[1.0], [3.0]])
    np.testing.assert_array_equal(d_t, [5.0, 17.0])


def test_condensed_no_blocking_is_block_lower_triangular():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((2, 2))
    b = rng.standard_normal((2, 1))
    lin = Linearization(a, b)
    cfg = toy_cfg(3, 3, n_state=2)
    _, b_t, _ = assemble_condensed(lin, np.zeros((3, 2)), cfg)
    np.testing.assert_allclose(b_t[0:2, 0:1], b)
    np.testing.assert_allclose(b_t[2:4, 1:2], b)
    np.testing.assert_allclose(b_t[4:6, 2:3], b)
    np.testing.assert_array_equal(b_t[0:2, 1:3], 0.0)
    np.testing.assert_array_equal(b_t[2:4, 2:3], 0.0)


def test_condensed_identity_case():
    lin = Linearization(np.eye(2), np.eye(2))
    cfg = MpcConfig(n_p=3, n_c=3, q_diag=np.ones(2), r_diag=np.ones(2))
    _, b_t, _ = assemble_condensed(lin, np.zeros((3, 2)), cfg)
    expect = np.kron(np.tril(np.ones((3, 3))), np.eye(2))
    np.testing.assert_array_equal(b_t, expect)


def test_condensed_matches_recursion_random_instances():
    # stacked prediction equals step-by-step simulation of the error model
    rng = np.random.default_rng(21)
    for _ in range(40):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(1, 3))
        n_p = int(rng.integers(1, 5))
        n_c = int(rng.integers(1, n_p + 1))
        a = rng.standard_normal((n, n))
        b = rng.standard_normal((n, m))
        lin = Linearization(a, b)
        offsets = rng.standard_normal((n_p, n))
        cfg = MpcConfig(n_p=n_p, n_c=n_c, q_diag=np.ones(n), r_diag=np.ones(m))
        a_t, b_t, d_t = assemble_condensed(lin, offsets, cfg)

        dx0 = rng.standard_normal(n)
        du = rng.standard_normal((n_c, m))
        stacked = a_t @ dx0 + b_t @ du.reshape(-1) + d_t

        dx = dx0
        for i in range(n_p):
            dx = a @ dx + b @ du[min(i, n_c - 1)] + offsets[i]
            np.testing.assert_allclose(stacked[n * i:n * (i + 1)], dx, atol=1e-10)


def test_constraint_row_count_and_box_values():
    params = QuadParams()
    cfg = MpcConfig(n_p=20, n_c=10)
    lin = linearize(UavState.at_rest((2.0, 0.0, 5.0)), hover_input(params), params)
    ref = circle_reference([2.0, 0.0, 5.0], cfg.n_p, params.tau)
    prob, _ = build_condensed_qp(lin, ref, ref.states[0], cfg, hover_input(params))
    assert prob.w_mat.shape == (4 * 20 + 8 * 10, 4 * 10)
    assert prob.w_vec.shape == (160,)
    u_ref = hover_input(params)[0]
    np.testing.assert_allclose(prob.w_vec[80:120], 12.0 - u_ref)
    np.testing.assert_allclose(prob.w_vec[120:160], u_ref)


def test_angle_rows_reduce_to_bound_without_coupling():
    # B~ = 0 and zero error/offsets: rows become 0 <= c, always feasible
    lin = Linearization(np.eye(12), np.zeros((12, 4)))
    cfg = MpcConfig(n_p=3, n_c=2)
    states = np.zeros((4, 12))
    a_t, b_t, d_t = assemble_condensed(lin, np.zeros((3, 12)), cfg)
    w_mat, w_vec = assemble_constraints(lin, a_t, b_t, d_t, states,
                                        np.zeros(12), cfg, np.full(4, 1.0))
    n_angle = 4 * cfg.n_p
    np.testing.assert_array_equal(w_mat[:n_angle], 0.0)
    np.testing.assert_allclose(w_vec[:n_angle], cfg.angle_limit)


def test_h_matrix_symmetric_positive_definite():
    params = QuadParams()
    cfg = MpcConfig()
    x = UavState.at_rest((4.0, 1.0, 4.0))
    lin = linearize(x, hover_input(params), params)
    ref = circle_reference([4.0, 1.0, 4.0], cfg.n_p, params.tau)
    prob, _ = build_condensed_qp(lin, ref, x, cfg, hover_input(params))
    assert np.max(np.abs(prob.h_mat - prob.h_mat.T)) <= 1e-10
    eig = np.linalg.eigvalsh(prob.h_mat)
    assert eig.min() >= np.min(cfg.r_diag) - 1e-8


def test_lmpc_zero_error_fixed_point():
    params = QuadParams()
    cfg = MpcConfig()
    x = UavState.at_rest((0.0, 0.0, 5.0))
    ref = hover_reference(params, cfg.n_p)
    u, diag = lmpc_control(x, ref, cfg, params)
    np.testing.assert_allclose(u, hover_input(params), atol=1e-6)
    assert not diag.fallback


def test_lmpc_returns_feasible_input_and_angle_preview():
    params = QuadParams()
    cfg = MpcConfig()
    ctrl = LinearizedMpc(cfg, params)
    rng = np.random.default_rng(3)
    for _ in range(5):
        xv = np.zeros(12)
        xv[0:3] = rng.uniform(-5, 5, 3)
        xv[2] += 5.0
        xv[3:5] = rng.uniform(-0.3, 0.3, 2)
        xv[6:9] = rng.uniform(-1, 1, 3)
        ref = circle_reference(xv[:3], cfg.n_p, params.tau)
        lin = linearize(xv, ctrl.u_prev, params)
        prob, (a_t, b_t, d_t, x0_err) = build_condensed_qp(
            lin, ref, xv, cfg, ctrl.u_ref)
        u, diag = ctrl.control(xv, ref)
        assert np.all(u >= 0.0) and np.all(u <= cfg.u_max)
        if diag.status == "solved":
            du = np.concatenate([u - ctrl.u_ref, np.zeros(4 * (cfg.n_c - 1))])
            # reconstruct the first predicted step with the applied input
            dx1 = a_t[0:12] @ x0_err + b_t[0:12] @ du + d_t[0:12]
            x1 = dx1 + ref.states[1]
            assert abs(x1[3]) <= cfg.angle_limit + 1e-6
            assert abs(x1[4]) <= cfg.angle_limit + 1e-6


def test_lmpc_blocking_constant_tail():
    params = QuadParams()
    cfg = MpcConfig(n_p=6, n_c=3)
    x = UavState.at_rest((3.0, 0.0, 4.0))
    ref = circle_reference([3.0, 0.0, 4.0], cfg.n_p, params.tau)
    ctrl = LinearizedMpc(cfg, params)
    lin = linearize(x, ctrl.u_prev, params)
    prob, _ = build_condensed_qp(lin, ref, x, cfg, ctrl.u_ref)
    from standoff import qp
    sol = qp.solve(prob.h_mat, prob.h_vec, prob.w_mat, prob.w_vec)
    du = sol.x_star.reshape(cfg.n_c, 4)
    seq = expand_blocks(du, cfg.n_p)
    for i in range(cfg.n_c - 1, cfg.n_p):
        np.testing.assert_array_equal(seq[i], du[cfg.n_c - 1])


def test_nmpc_hover_converges_immediately():
    params = QuadParams()
    cfg = MpcConfig(n_p=8, n_c=4)
    x = UavState.at_rest((0.0, 0.0, 5.0))
    ref = hover_reference(params, cfg.n_p)
    u, diag = nmpc_control(x, ref, cfg, params)
    np.testing.assert_allclose(u, hover_input(params), atol=1e-5)
    assert diag.iterations == 1
    assert diag.status == "converged"


def test_nmpc_cost_no_worse_than_lmpc():
    params = QuadParams()
    cfg = MpcConfig(n_p=10, n_c=5)
    rng = np.random.default_rng(8)
    for _ in range(3):
        xv = np.zeros(12)
        xv[0:3] = [rng.uniform(2, 4), rng.uniform(-1, 1), 5.0 + rng.uniform(-0.5, 0.5)]
        xv[6:9] = rng.uniform(-0.5, 0.5, 3)
        ref = circle_reference(xv[:3], cfg.n_p, params.tau)

        lm = LinearizedMpc(cfg, params)
        lm.control(xv, ref)
        j_l = rollout_cost(xv, lm.last_u_blocks, ref, cfg, params)

        nm = NonlinearMpc(cfg, params)
        _, diag = nm.control(xv, ref)
        j_n = rollout_cost(xv, nm.last_u_blocks, ref, cfg, params)
        assert j_n == pytest.approx(diag.cost, rel=1e-12)
        assert j_n <= j_l + 1e-9


def test_rollout_cost_matches_manual():
    params = QuadParams()
    cfg = MpcConfig(n_p=3, n_c=2)
    ref = hover_reference(params, cfg.n_p)
    u_blocks = np.tile(hover_input(params), (cfg.n_c, 1))
    x0 = UavState.at_rest((0.0, 0.0, 5.0))
    assert rollout_cost(x0, u_blocks, ref, cfg, params) == pytest.approx(0.0, abs=1e-20)
    xs = rollout(x0, u_blocks, cfg.n_p, params)
    np.testing.assert_allclose(xs, np.tile(x0.as_vector(), (4, 1)), atol=1e-12)


def test_angle_selector_rows():
    c = angle_selector()
    x = np.zeros(12)
    x[3] = 0.3
    x[4] = -0.2
    np.testing.assert_allclose(c @ x, [0.3, -0.3, -0.2, 0.2])
