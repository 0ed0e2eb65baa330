import numpy as np
import pytest

from parafun.control import (ControlProblem, ControlState, adjoint_sweep,
                             apply_propagation_matrix, assemble_propagation_matrix, cost_eval,
                             forward_sweep, gradient, gradient_step, initial_state,
                             solve_propagation_matrix, solve_steady_control,
                             uncontrolled_terminal_residual)
from parafun.errors import DimensionError, StallError
from parafun.flows import FlowSpec, Propagator, TimeGrid
from parafun.reference import laplacian_1d, sequential_fine, spd_random_shifted


def small_problem(rng, scheme="euler", n=8, p=3, s=2, n_int=4, j=10, alpha=2.0, eps=0.1):
    a = spd_random_shifted(n, seed=int(rng.integers(1000)))
    return ControlProblem(a, rng.standard_normal((n, s)), rng.standard_normal((n, p)),
                          TimeGrid(0.0, 1.0, n_int, j), alpha=alpha, epsilon=eps, scheme=scheme)


def randomize(prob, rng):
    st = initial_state(prob)
    st.u = [rng.standard_normal(u.shape) for u in st.u]
    st.lambdas = [st.lambdas[0]] + [lam + 0.1 * rng.standard_normal(lam.shape)
                                    for lam in st.lambdas[1:]]
    return st


def test_problem_validation():
    grid = TimeGrid(0.0, 1.0, 2, 2)
    with pytest.raises(ValueError):
        ControlProblem(np.eye(2), np.eye(2), np.eye(2), grid, alpha=0.0)
    with pytest.raises(DimensionError):
        ControlProblem(np.eye(2), np.eye(3), np.eye(2), grid)
    with pytest.raises(ValueError):
        ControlProblem(np.eye(2), np.eye(2), np.eye(2), grid, scheme="rk4")


def test_forward_sweep_consistent_initialization_has_no_jumps():
    a = laplacian_1d(4)
    grid = TimeGrid(0.0, 1.0, 4, 10)
    prob = ControlProblem(a, np.eye(4), np.eye(4), grid)
    flow = FlowSpec.steady_residual(a, np.eye(4))
    fine = sequential_fine(flow, grid, Propagator(flow, "euler", 10), np.zeros((4, 4)))
    st = forward_sweep(prob, initial_state(prob, fine[:-1]))
    for k in range(1, 4):
        assert np.allclose(st.y[k - 1][-1], st.lambdas[k], atol=1e-15)
    assert np.allclose(st.y[-1][-1], fine[-1], atol=1e-15)


def test_forward_sweep_coarse_initialization_jumps():
    a = laplacian_1d(3)
    grid = TimeGrid(0.0, 1.0, 3, 6)
    prob = ControlProblem(a, np.eye(3), np.eye(3), grid)
    st = forward_sweep(prob, initial_state(prob))
    flow = FlowSpec.steady_residual(a, np.eye(3))
    f = Propagator(flow, "euler", 6)
    for k in range(1, 3):
        t0, t1 = grid.interval(k - 1)
        assert np.allclose(st.y[k - 1][-1] - st.lambdas[k],
                           f(t0, t1, st.lambdas[k - 1]) - st.lambdas[k], atol=1e-14)


def test_forward_sweep_scalar_closed_form():
    # y' = 1 - y + u with constant u: Euler gives y_j = c + (1-h)^j (lam - c), c = 1 + u
    grid = TimeGrid(0.0, 1.0, 2, 20)
    prob = ControlProblem([[1.0]], [[1.0]], [[1.0]], grid)
    st = initial_state(prob, [np.array([[0.0]]), np.array([[0.3]])])
    st.u = [np.full_like(u, 0.7) for u in st.u]
    forward_sweep(prob, st)
    h, c = grid.fine_step, 1.7
    for k, lam in enumerate((0.0, 0.3)):
        expect = c + (1 - h) ** np.arange(21) * (lam - c)
        assert np.allclose(st.y[k][:, 0, 0], expect, atol=1e-10)


def test_cost_zero_at_steady_start():
    prob = ControlProblem(np.eye(2), np.eye(2), np.eye(2), TimeGrid(0.0, 1.0, 3, 4), x0=np.eye(2))
    st = initial_state(prob, [np.eye(2)] * 3)
    forward_sweep(prob, st)
    assert cost_eval(prob, st) == 0.0


def test_cost_matches_reevaluation_and_alpha_linearity(rng):
    prob = small_problem(rng)
    st = forward_sweep(prob, randomize(prob, rng))
    c = cost_eval(prob, st)
    h = prob.grid.fine_step
    y_end = st.y[-1][-1]
    term = 0.5 * prob.alpha * np.sum((prob.rhs - prob.a @ y_end) ** 2)
    ctrl = 0.5 * sum(h * np.sum(u[j] ** 2) for u in st.u for j in range(u.shape[0]))
    jumps = sum(np.sum((st.y[k - 1][-1] - st.lambdas[k]) ** 2) for k in range(1, 4))
    assert abs(c - (term + ctrl + jumps / (2 * prob.epsilon * prob.grid.coarse_step))) <= 1e-12 * c

    double = ControlProblem(prob.a, prob.rhs, prob.b_ctrl, prob.grid, alpha=2 * prob.alpha,
                            epsilon=prob.epsilon)
    st2 = forward_sweep(double, ControlState(u=st.u, lambdas=st.lambdas))
    assert np.isclose(cost_eval(double, st2) - c, term, rtol=1e-12)


def test_adjoint_trivial_cases():
    grid = TimeGrid(0.0, 1.0, 3, 5)
    prob = ControlProblem(np.eye(2), np.eye(2), np.eye(2), grid, x0=np.eye(2))
    st = adjoint_sweep(prob, forward_sweep(prob, initial_state(prob, [np.eye(2)] * 3)))
    assert all(np.all(p == 0.0) for p in st.p)

    prob = ControlProblem(np.zeros((2, 2)), np.ones((2, 1)), np.eye(2), grid)
    st = adjoint_sweep(prob, forward_sweep(prob, initial_state(prob)))
    for pk in st.p:
        assert np.all(pk == pk[-1])


def test_adjoint_scalar_closed_form():
    grid = TimeGrid(0.0, 1.0, 2, 50)
    a = 0.8
    prob = ControlProblem([[a]], [[1.0]], [[1.0]], grid, alpha=3.0)
    st = adjoint_sweep(prob, forward_sweep(prob, initial_state(prob)))
    h = grid.fine_step
    for pk in st.p:
        steps_back = np.arange(50, -1, -1)
        assert np.allclose(pk[:, 0, 0], (1 - h * a) ** steps_back * pk[-1, 0, 0], atol=1e-10)


@pytest.mark.parametrize("scheme", ["euler", "cn"])
def test_gradient_matches_finite_differences(rng, scheme):
    prob = small_problem(rng, scheme)
    st = randomize(prob, rng)
    adjoint_sweep(prob, forward_sweep(prob, st))
    du, dl = gradient(prob, st)

    def cost_along(vu, vl, t):
        trial = ControlState(u=[u + t * v for u, v in zip(st.u, vu)],
                             lambdas=[lam + t * v for lam, v in zip(st.lambdas, vl)])
        return cost_eval(prob, forward_sweep(prob, trial))

    for _ in range(5):
        vu = [rng.standard_normal(u.shape) for u in st.u]
        vl = [np.zeros_like(st.lambdas[0])] + [rng.standard_normal(x.shape) for x in st.lambdas[1:]]
        exact = sum(np.sum(g * v) for g, v in zip(du, vu)) + sum(np.sum(g * v) for g, v in zip(dl, vl))
        fd = (cost_along(vu, vl, 1e-6) - cost_along(vu, vl, -1e-6)) / 2e-6
        assert abs(fd - exact) <= 1e-5 * abs(exact)


def test_gradient_step_trivial_and_descent(rng):
    prob = small_problem(rng)
    st = randomize(prob, rng)
    adjoint_sweep(prob, forward_sweep(prob, st))
    c0 = cost_eval(prob, st)
    zero = ([np.zeros_like(u) for u in st.u], [np.zeros_like(x) for x in st.lambdas])
    same = gradient_step(prob, st, rho=0.5, grads=zero)
    assert all(np.array_equal(a, b) for a, b in zip(same.u, st.u))
    assert all(np.array_equal(a, b) for a, b in zip(same.lambdas, st.lambdas))
    tiny = gradient_step(prob, st, rho=1e-4)
    assert cost_eval(prob, forward_sweep(prob, tiny)) < c0
    assert np.array_equal(tiny.lambdas[0], st.lambdas[0])


def test_propagation_matrix_examples(rng):
    lam = [rng.standard_normal((3, 2)) for _ in range(2)]
    out = apply_propagation_matrix([np.zeros((3, 3))], lam)
    assert all(np.array_equal(a, b) for a, b in zip(out, lam))
    out = apply_propagation_matrix([np.eye(3)], lam)
    assert np.array_equal(out[1], lam[1] - lam[0])
    with pytest.raises(DimensionError):
        apply_propagation_matrix([np.eye(3), np.eye(3)], lam)


def test_propagation_matrix_inverse_and_dense(rng):
    blocks = [rng.standard_normal((3, 3)) for _ in range(3)]
    lam = [rng.standard_normal((3, 2)) for _ in range(4)]
    dense = assemble_propagation_matrix(blocks)
    stacked = np.vstack(lam)
    assert np.allclose(np.vstack(apply_propagation_matrix(blocks, lam)), dense @ stacked, atol=1e-14)
    x = solve_propagation_matrix(blocks, lam)
    assert np.allclose(np.vstack(apply_propagation_matrix(blocks, x)), stacked, atol=1e-12)
    xt = solve_propagation_matrix(blocks, lam, adjoint=True)
    assert np.allclose(dense.T @ np.vstack(xt), stacked, atol=1e-12)


def test_solve_steady_start_converges_immediately():
    prob = ControlProblem(np.eye(2), np.eye(2), np.eye(2), TimeGrid(0.0, 1.0, 2, 4), x0=np.eye(2))
    x, diag = solve_steady_control(prob, m_max=10)
    assert diag["iterations"] == 0 and np.array_equal(x, np.eye(2))


def test_scalar_validation_case():
    prob = ControlProblem([[1.0]], [[1.0]], [[1.0]], TimeGrid(0.0, 1.0, 4, 25), alpha=1000.0)
    base = uncontrolled_terminal_residual(prob)
    _, diag = solve_steady_control(prob, m_max=200)
    costs = diag["costs"]
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    assert diag["terminal_residual"] * 100 <= base


def test_laplacian_control_beats_uncontrolled_flow():
    n = 16
    prob = ControlProblem(laplacian_1d(n), np.eye(n), np.eye(n), TimeGrid(0.0, 1.0, 4, 25),
                          alpha=1000.0)
    _, diag = solve_steady_control(prob, m_max=100)
    assert diag["terminal_residual"] < uncontrolled_terminal_residual(prob)


def test_jump_shrinks_with_epsilon():
    jumps = []
    for eps in (1e-1, 1e-2, 1e-3):
        prob = ControlProblem([[1.0]], [[1.0]], [[1.0]], TimeGrid(0.0, 1.0, 4, 10),
                              alpha=10.0, epsilon=eps)
        _, diag = solve_steady_control(prob, m_max=400)
        jumps.append(diag["max_jump"])
    assert jumps[0] > jumps[1] > jumps[2]


def test_stall_is_reported():
    prob = ControlProblem([[1.0]], [[1.0]], [[1.0]], TimeGrid(0.0, 1.0, 2, 5), alpha=10.0)
    with pytest.raises(StallError):
        solve_steady_control(prob, m_max=50, max_halvings=1, stall_limit=3)
