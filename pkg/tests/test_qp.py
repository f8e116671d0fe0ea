import numpy as np
import pytest

from standoff.qp import (INFEASIBLE, SOLVED, QpOptions, QpSolution,
                         brute_force_oracle, solve)


def random_instance(rng, n, m, feasible=True):
    mat = rng.standard_normal((n, n))
    h_mat = mat @ mat.T + (0.1 + rng.uniform(0.0, 1.0)) * np.eye(n)
    h_vec = rng.standard_normal(n)
    w_mat = rng.standard_normal((m, n))
    if feasible:
        x0 = rng.standard_normal(n)
        w_vec = w_mat @ x0 + rng.uniform(0.05, 1.0, size=m)
    else:
        w_vec = rng.standard_normal(m)
    return h_mat, h_vec, w_mat, w_vec


def test_one_dimensional_clamp():
    # min 1/2 u^2 - u s.t. u <= 0.5 -> active at the bound, multiplier 0.5
    sol = solve(np.array([[1.0]]), np.array([-1.0]),
                np.array([[1.0]]), np.array([0.5]))
    assert sol.status == SOLVED
    assert sol.x_star[0] == pytest.approx(0.5, abs=1e-9)
    assert sol.lam[0] == pytest.approx(0.5, abs=1e-6)


def test_unconstrained_closed_form():
    rng = np.random.default_rng(2)
    mat = rng.standard_normal((5, 5))
    h_mat = mat @ mat.T + np.eye(5)
    h_vec = rng.standard_normal(5)
    sol = solve(h_mat, h_vec, np.zeros((0, 5)), np.zeros(0))
    np.testing.assert_allclose(sol.x_star, np.linalg.solve(h_mat, -h_vec),
                               rtol=1e-10)
    assert sol.status == SOLVED


def test_matches_oracle_on_random_instances():
    rng = np.random.default_rng(123)
    for trial in range(200):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(1, 11))
        h_mat, h_vec, w_mat, w_vec = random_instance(rng, n, m)
        sol = solve(h_mat, h_vec, w_mat, w_vec)
        x_ref = brute_force_oracle(h_mat, h_vec, w_mat, w_vec)
        assert sol.status == SOLVED, f"trial {trial} not solved"
        obj_solver = sol.objective(h_mat, h_vec)
        obj_oracle = 0.5 * x_ref @ h_mat @ x_ref + h_vec @ x_ref
        assert abs(obj_solver - obj_oracle) <= 1e-8, f"trial {trial}"
        # KKT certification
        assert np.max(np.abs(h_mat @ sol.x_star + h_vec + w_mat.T @ sol.lam)) <= 1e-5
        assert np.max(w_mat @ sol.x_star - w_vec) <= 1e-6
        assert abs(sol.lam @ (w_mat @ sol.x_star - w_vec)) <= 1e-6
        assert np.min(sol.lam) >= -1e-10


def test_solution_residual_fields_consistent():
    rng = np.random.default_rng(7)
    h_mat, h_vec, w_mat, w_vec = random_instance(rng, 4, 6)
    sol = solve(h_mat, h_vec, w_mat, w_vec)
    assert sol.status == SOLVED
    assert sol.primal_res <= 1e-6
    assert sol.dual_res <= 1e-5
    assert sol.comp_res <= 1e-6


def test_determinism_bit_identical():
    rng = np.random.default_rng(99)
    h_mat, h_vec, w_mat, w_vec = random_instance(rng, 5, 8)
    a = solve(h_mat, h_vec, w_mat, w_vec)
    b = solve(h_mat, h_vec, w_mat, w_vec)
    np.testing.assert_array_equal(a.x_star, b.x_star)
    np.testing.assert_array_equal(a.lam, b.lam)
    assert a.iterations == b.iterations


def test_warm_start_converges_faster():
    rng = np.random.default_rng(31)
    h_mat, h_vec, w_mat, w_vec = random_instance(rng, 6, 9)
    cold = solve(h_mat, h_vec, w_mat, w_vec)
    warm = solve(h_mat, h_vec, w_mat, w_vec,
                 QpOptions(warm_x=cold.x_star, warm_y=cold.lam))
    assert warm.status == SOLVED
    assert warm.iterations <= cold.iterations


def test_infeasible_detected():
    # u <= -1 together with -u <= -2 (u >= 2) is empty
    sol = solve(np.array([[1.0]]), np.array([0.0]),
                np.array([[1.0], [-1.0]]), np.array([-1.0, -2.0]))
    assert sol.status == INFEASIBLE


def test_oracle_clamp_case():
    x = brute_force_oracle(np.array([[1.0]]), np.array([-1.0]),
                           np.array([[1.0]]), np.array([0.5]))
    assert x[0] == pytest.approx(0.5, abs=1e-12)


def test_oracle_equality_tight_instance():
    # minimize distance to (2, 0) subject to x0 + x1 <= 1: KKT of the single
    # active constraint gives (1.5, -0.5)
    h_mat = np.eye(2)
    h_vec = np.array([-2.0, 0.0])
    w_mat = np.array([[1.0, 1.0]])
    w_vec = np.array([1.0])
    x = brute_force_oracle(h_mat, h_vec, w_mat, w_vec)
    np.testing.assert_allclose(x, [1.5, -0.5], atol=1e-12)


def test_oracle_reports_infeasible():
    x = brute_force_oracle(np.array([[1.0]]), np.array([0.0]),
                           np.array([[1.0], [-1.0]]), np.array([-1.0, -2.0]))
    assert x is None


def test_oracle_size_limit():
    with pytest.raises(ValueError):
        brute_force_oracle(np.eye(9), np.zeros(9), np.zeros((1, 9)), np.zeros(1))


def test_max_iter_returns_best_iterate():
    rng = np.random.default_rng(4)
    h_mat, h_vec, w_mat, w_vec = random_instance(rng, 5, 8)
    sol = solve(h_mat, h_vec, w_mat, w_vec, QpOptions(max_iter=3, check_every=1))
    assert sol.status in (SOLVED, "max_iter")
    assert sol.x_star.shape == (5,)


def test_objective_helper():
    sol = QpSolution(np.array([1.0]), np.zeros(1), SOLVED, 0, 0, 0, 1)
    assert sol.objective(np.array([[2.0]]), np.array([3.0])) == pytest.approx(4.0)
