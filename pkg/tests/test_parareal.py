import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parafun.errors import UnsupportedSchemeError
from parafun.flows import FlowSpec, Propagator, TimeGrid
from parafun.parareal import (classical_parareal, coarse_sweep, modified_parareal_homogeneous,
                              modified_parareal_inhomogeneous, parallel_map, trajectory_error)
from parafun.reference import laplacian_1d, sequential_fine, spd_random_shifted


def props(flow, grid, fine="euler", coarse="euler"):
    return (Propagator(flow, fine, grid.n_fine, interval=grid.coarse_step),
            Propagator(flow, coarse, 1, interval=grid.coarse_step))


def prefix_error(run, ref):
    scale = max(np.linalg.norm(r) for r in ref)
    worst = []
    for k, traj in enumerate(run.iterates):
        upto = min(k, len(ref) - 1)
        worst.append(max(np.linalg.norm(traj[n] - ref[n]) for n in range(upto + 1)) / scale)
    return worst


def test_parallel_map_is_ordered():
    assert parallel_map(lambda x: x * x, range(7), workers=3) == [x * x for x in range(7)]
    assert parallel_map(lambda x: -x, [1, 2], workers=1) == [-1, -2]


def test_trajectory_error():
    ref = [np.array([[2.0]]), np.array([[4.0]])]
    assert trajectory_error([np.array([[2.0]]), np.array([[3.0]])], ref) == 0.25


def test_coarse_sweep_examples():
    grid = TimeGrid(0.0, 1.0, 4, 1)
    zero = FlowSpec.linear_homogeneous(np.zeros((2, 2)))
    out = coarse_sweep(Propagator(zero), grid, np.eye(2))
    assert all(np.array_equal(u, np.eye(2)) for u in out)
    decay = FlowSpec.linear_homogeneous(np.array([[-1.0]]))
    out = coarse_sweep(Propagator(decay), grid, np.array([[1.0]]))
    assert np.allclose([u[0, 0] for u in out], 0.75 ** np.arange(5), rtol=1e-15)
    one = coarse_sweep(Propagator(decay), TimeGrid(0.0, 1.0, 1), np.array([[1.0]]))
    assert len(one) == 2 and one[1][0, 0] == 0.0


def test_classical_single_interval_exact():
    flow = FlowSpec.linear_homogeneous(np.array([[-2.0, 1.0], [0.0, -1.0]]))
    grid = TimeGrid(0.0, 1.0, 1, 50)
    f, g = props(flow, grid)
    run = classical_parareal(f, g, grid, np.eye(2), k_max=1)
    # G(u0) + (F(u0) - G(u0)) equals F(u0) up to one rounding
    assert np.allclose(run.iterates[1][1], f(0.0, 1.0, np.eye(2)), rtol=0, atol=1e-15)


def test_classical_constant_flow():
    flow = FlowSpec.linear_homogeneous(np.zeros((3, 3)))
    grid = TimeGrid(0.0, 1.0, 5, 10)
    f, g = props(flow, grid)
    u0 = np.arange(9.0).reshape(3, 3)
    run = classical_parareal(f, g, grid, u0)
    assert run.converged and run.n_iterations == 1
    assert all(np.array_equal(u, u0) for traj in run.iterates for u in traj)


def test_classical_prefix_exactness_heat():
    a = -laplacian_1d(8) * 9.0
    flow = FlowSpec.linear_homogeneous(a)
    grid = TimeGrid(0.0, 1.0, 8, 20)
    f, g = props(flow, grid)
    u0 = np.eye(8)
    ref = sequential_fine(flow, grid, f, u0)
    run = classical_parareal(f, g, grid, u0, k_max=8, stop_tol=0.0)
    assert run.n_iterations == 8
    assert max(prefix_error(run, ref)) <= 1e-12
    assert trajectory_error(run.trajectory, ref) <= 1e-13


def test_classical_k_max_validation():
    flow = FlowSpec.linear_homogeneous(np.eye(2))
    grid = TimeGrid(0.0, 1.0, 2, 2)
    f, g = props(flow, grid)
    with pytest.raises(ValueError):
        classical_parareal(f, g, grid, np.eye(2), k_max=0)


def test_classical_stops_on_increment():
    flow = FlowSpec.linear_homogeneous(-np.eye(2))
    grid = TimeGrid(0.0, 1.0, 10, 10)
    f, g = props(flow, grid)
    run = classical_parareal(f, g, grid, np.eye(2), stop_tol=1e-6)
    assert run.converged and run.n_iterations < 10
    assert run.increments[-1] <= 1e-6 * np.sqrt(2)
    assert all(np.array_equal(traj[0], np.eye(2)) for traj in run.iterates)


def test_workers_do_not_change_results():
    flow = FlowSpec.linear_homogeneous(-laplacian_1d(6) * 4)
    grid = TimeGrid(0.0, 1.0, 6, 30)
    f, g = props(flow, grid)
    r1 = classical_parareal(f, g, grid, np.eye(6), workers=1)
    r4 = classical_parareal(f, g, grid, np.eye(6), workers=4)
    assert all(np.array_equal(a, b) for t1, t4 in zip(r1.iterates, r4.iterates)
               for a, b in zip(t1, t4))
    m1 = modified_parareal_homogeneous(f, g, grid, np.eye(6), workers=1)
    m4 = modified_parareal_homogeneous(f, g, grid, np.eye(6), workers=4)
    assert all(np.array_equal(a, b) for t1, t4 in zip(m1.iterates, m4.iterates)
               for a, b in zip(t1, t4))


def test_modified_single_interval_and_constant_flow():
    flow = FlowSpec.linear_homogeneous(np.array([[-1.0, 0.3], [0.2, -0.5]]))
    grid = TimeGrid(0.0, 1.0, 1, 40)
    f, g = props(flow, grid)
    run = modified_parareal_homogeneous(f, g, grid, np.eye(2), k_max=1)
    assert np.allclose(run.iterates[1][1], f(0.0, 1.0, np.eye(2)), atol=1e-14)

    flow = FlowSpec.linear_homogeneous(np.zeros((2, 2)))
    grid = TimeGrid(0.0, 1.0, 4, 10)
    f, g = props(flow, grid)
    u0 = np.array([[1.0, 2.0], [3.0, 4.0]])
    run = modified_parareal_homogeneous(f, g, grid, u0)
    assert run.subspace_dims[0] == 1
    ref = sequential_fine(flow, grid, f, u0)
    assert trajectory_error(run.iterates[1], ref) <= 1e-15


def test_modified_requires_linear_flow():
    flow = FlowSpec.inverse_riccati(np.eye(2) * 2)
    grid = TimeGrid(0.0, 1.0, 2, 2)
    f, g = props(flow, grid)
    with pytest.raises(UnsupportedSchemeError):
        modified_parareal_homogeneous(f, g, grid, np.eye(2))
    with pytest.raises(UnsupportedSchemeError):
        modified_parareal_inhomogeneous(f, g, grid, np.eye(2))


def test_modified_beats_classical_on_small_cos_block():
    rng = np.random.default_rng(7)
    m = rng.standard_normal((4, 4))
    a = (m + m.T) / 4
    a /= np.abs(a).sum(axis=1).max()
    flow = FlowSpec.trig_block(a)
    grid = TimeGrid(0.0, 1.0, 10, 100)
    f, g = props(flow, grid)
    u0 = np.vstack((np.zeros((4, 4)), np.eye(4)))
    ref = sequential_fine(flow, grid, f, u0)
    cl = classical_parareal(f, g, grid, u0, reference=ref, stop_tol=0.0, k_max=6)
    mo = modified_parareal_homogeneous(f, g, grid, u0, reference=ref, stop_tol=0.0, k_max=6)
    # a run that stopped early keeps its last error; below 1e-13 both sit at round-off
    for k in range(1, 7):
        e_mo = mo.errors_vs_fine[min(k, len(mo.errors_vs_fine) - 1)]
        assert e_mo <= max(cl.errors_vs_fine[k], 1e-13)
    assert mo.errors_vs_fine[1] < cl.errors_vs_fine[1]
    dims = mo.subspace_dims
    assert all(b >= a for a, b in zip(dims, dims[1:]))
    assert dims[0] <= grid.n_coarse + 1
    assert all(b - a <= grid.n_coarse + 1 for a, b in zip(dims, dims[1:]))


def test_inhomogeneous_with_zero_source_matches_homogeneous():
    a = -spd_random_shifted(5, seed=2)
    grid = TimeGrid(0.0, 1.0, 5, 20)
    u0 = np.eye(5)
    for scheme in ("euler", "cn"):
        fh, gh = props(FlowSpec.linear_homogeneous(a), grid, scheme, scheme)
        fi, gi = props(FlowSpec.linear_inhomogeneous(a, np.zeros((5, 5))), grid, scheme, scheme)
        rh = modified_parareal_homogeneous(fh, gh, grid, u0, stop_tol=0.0, k_max=3)
        ri = modified_parareal_inhomogeneous(fi, gi, grid, u0, stop_tol=0.0, k_max=3)
        for th, ti in zip(rh.iterates, ri.iterates):
            assert all(np.array_equal(x, y) for x, y in zip(th, ti))


def test_inhomogeneous_exactly_integrable_flow():
    gsrc = np.array([[1.0, -2.0], [0.5, 3.0]])
    flow = FlowSpec.linear_inhomogeneous(np.zeros((2, 2)), gsrc)
    grid = TimeGrid(0.0, 1.0, 4, 8)
    f, g = props(flow, grid)
    ref = sequential_fine(flow, grid, f, np.eye(2))
    run = modified_parareal_inhomogeneous(f, g, grid, np.eye(2), reference=ref)
    assert all(e <= 1e-15 for e in run.errors_vs_fine)


@settings(max_examples=15)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["euler", "cn"]))
def test_inhomogeneous_prefix_exactness(seed, scheme):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((6, 6)) * 0.5 - np.eye(6)
    flow = FlowSpec.linear_inhomogeneous(a, rng.standard_normal((6, 6)))
    grid = TimeGrid(0.0, 1.0, 6, 10)
    f, g = props(flow, grid, scheme, scheme)
    u0 = rng.standard_normal((6, 6))
    ref = sequential_fine(flow, grid, f, u0)
    run = modified_parareal_inhomogeneous(f, g, grid, u0, stop_tol=0.0, k_max=6)
    assert max(prefix_error(run, ref)) <= 1e-11


@settings(max_examples=15)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 12))
def test_classical_prefix_exactness_property(seed, n_int, j):
    rng = np.random.default_rng(seed)
    a = -spd_random_shifted(4, seed=seed % 1000)
    flow = FlowSpec.linear_inhomogeneous(a, rng.standard_normal((4, 2)))
    grid = TimeGrid(0.0, 1.0, n_int, j)
    f, g = props(flow, grid)
    u0 = rng.standard_normal((4, 2))
    ref = sequential_fine(flow, grid, f, u0)
    run = classical_parareal(f, g, grid, u0, stop_tol=0.0)
    assert max(prefix_error(run, ref)) <= 1e-11
    assert trajectory_error(run.trajectory, ref) <= 1e-13
