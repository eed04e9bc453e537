from pathlib import Path

import numpy as np
import pytest

from ellada import kernels
from ellada.errors import DomainError
from ellada.tank import (ClosedLoopLog, OcpSpec, SubsystemDecomposition, TankModel, TrajectoryBlock,
                         build_subsystem_ocp, closed_loop, dynamics_jacobian, dynamics_rhs, load_reference,
                         plant_step, shift_plan, simulate_euler, solve_centralized)

from helpers import fd_jacobian

DATA = Path(__file__).parent / "data"
X0 = (12.6, 12.4, 5.0, 4.5)


def test_steady_state_residual(model):
    assert np.abs(dynamics_rhs(model, model.h_ss, model.v_ss)).max() <= 1e-2


def test_dynamics_jacobian_fd(model):
    h = np.array([10.0, 9.0, 3.0, 2.5])
    J = dynamics_jacobian(model, h)
    assert np.allclose(J, fd_jacobian(lambda x: dynamics_rhs(model, x, model.v_ss), h), atol=1e-8)


def test_negative_level_rejected(model):
    with pytest.raises(DomainError):
        dynamics_rhs(model, [1.0, -1.0, 1.0, 1.0], model.v_ss)
    with pytest.raises(DomainError):
        build_subsystem_ocp(model, OcpSpec(), (1.0, -1.0, 1.0, 1.0))


def test_smooth_sqrt_is_c1_at_switch():
    eps = 1e-6
    s, ds, _ = kernels.smooth_sqrt(np.array([eps * (1 - 1e-9), eps * (1 + 1e-9)]), eps)
    assert s[0] == pytest.approx(s[1], rel=1e-8)
    assert ds[0] == pytest.approx(ds[1], rel=1e-6)


def _block(model, N=5):
    ocp = OcpSpec(N=N)
    d = SubsystemDecomposition()
    return TrajectoryBlock(model, ocp, d.own[2], d.copies[2], d.inputs[2], np.array([12.4, 5.0]))


def test_transcription_derivatives_fd(model):
    blk = _block(model)
    rng = np.random.default_rng(0)
    xi = np.concatenate([2.0 + 10 * rng.random(blk.nX), 3.0 + 0.2 * rng.random(blk.N * blk.nu)])
    assert np.allclose(blk.jac_psi(xi), fd_jacobian(blk.psi, xi), atol=1e-7)
    w = rng.standard_normal(blk.psi(xi).size)
    H = blk.hess_psi(xi, w)
    assert np.allclose(H, fd_jacobian(lambda x: blk.jac_psi(x).T @ w, xi), atol=1e-6)
    assert np.allclose(blk.grad_f(xi), fd_jacobian(lambda x: np.array([blk.f(x)]), xi)[0], atol=1e-5)


def test_simulation_satisfies_transcription(model):
    ocp = OcpSpec()
    V = np.tile([3.3, 2.7], (ocp.N, 1))
    H = simulate_euler(model, ocp, X0, V)
    blk = TrajectoryBlock(model, ocp, (0, 1, 2, 3), (), (0, 1), np.array(X0))
    assert np.abs(blk.psi(blk.pack(H, V))).max() <= 1e-10


def test_implicit_euler_close_to_ode(model):
    # first-order scheme: one 10 s step differs from the ODE flow by O(dt^2) per step
    ocp = OcpSpec(N=1, dt=10.0)
    v = np.array([3.3, 2.7])
    h_euler = simulate_euler(model, ocp, X0, v[None, :])[1]
    h_ode = plant_step(model, X0, v, 10.0)
    assert np.abs(h_euler - h_ode).max() < 0.05
    fine = simulate_euler(model, OcpSpec(N=1000, dt=0.01), X0, np.tile(v, (1000, 1)))[-1]
    assert np.abs(fine - h_ode).max() < 1e-4


def test_plant_holds_steady_state(model):
    h = plant_step(model, model.h_ss, model.v_ss, 10.0)
    assert np.abs(h - np.asarray(model.h_ss)).max() < 1e-3


def test_decomposition_validation(model):
    SubsystemDecomposition().validate(model)
    with pytest.raises(ValueError, match="cannot see"):
        SubsystemDecomposition(copies={1: (), 2: (3,)}).validate(model)
    with pytest.raises(ValueError, match="cover"):
        SubsystemDecomposition(own={1: (0,), 2: (1, 2)}).validate(model)


def test_subsystem_start_is_consistent(tank_problem):
    c = tank_problem.coupling
    x = tank_problem.x0()
    overlap = c.A @ x
    for e, cols in c.edge_cols.items():
        rows = [c.blocks[ie] for ie in c.order if ie[1] == e]
        assert np.array_equal(overlap[rows[0]], overlap[rows[1]])
    assert c.n_xbar == 2 * 41
    for i, a in tank_problem.agents.items():
        assert np.all(a.phi(a.interior_point) < 0)


def test_centralized_matches_reference(model, ocp):
    ref = load_reference(DATA / "centralized_reference.json")
    sol = solve_centralized(model, ocp, ref["x0"])
    assert np.abs(sol.v - ref["v"]).max() < 1e-5
    assert np.abs(sol.H - ref["H"]).max() < 1e-4
    assert sol.cost == pytest.approx(ref["cost"], rel=1e-6)


def test_centralized_at_steady_state(model, ocp):
    sol = solve_centralized(model, ocp, model.h_ss)
    assert np.abs(sol.v - np.asarray(model.v_ss)).max() < 5e-3


def test_input_bound_active_from_high_start(model, ocp):
    sol = solve_centralized(model, ocp, (16.0, 16.0, 8.0, 8.0))
    assert np.all(sol.V >= ocp.v_min) and np.all(sol.V <= ocp.v_max)
    assert np.allclose(sol.v, ocp.v_min, atol=1e-5)


def test_shift_plan():
    V = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(shift_plan(V), [[2, 3], [4, 5], [4, 5]])


def test_closed_loop_single_step(model, tmp_path):
    ocp = OcpSpec(N=10)
    log = closed_loop(model, ocp, "decentralized", X0, 1)
    assert not log.failed and len(log.v) == 1 and len(log.h) == 2
    text = log.write_csv(tmp_path / "t.csv", timing=False).read_text().splitlines()
    assert text[0] == "t,h1,h2,h3,h4,v1,v2,solve_iters,solve_time"
    assert text[1].endswith(",")  # timing left empty
    with pytest.raises(ValueError):
        closed_loop(model, ocp, "pid", X0, 1)


def test_closed_loop_cost_definition(model, ocp):
    log = ClosedLoopLog("x", t=[0, 10], h=[np.asarray(model.h_ss), np.asarray(model.h_ss) + 1], v=[np.array(model.v_ss)])
    assert log.cost(model, ocp) == 0.0
    assert log.ultimate_deviation(model) == 1.0


def test_plant_integration_tolerance(model):
    v = np.array([3.4, 2.6])
    a = plant_step(model, X0, v, 10.0, rtol=1e-8, atol=1e-10)
    b = plant_step(model, X0, v, 10.0, rtol=1e-10, atol=1e-12)
    assert np.abs(a - b).max() <= 1e-6


def test_steady_state_trajectory_is_feasible(model, ocp):
    p = build_subsystem_ocp(model, ocp, model.h_ss)
    for i, a in p.agents.items():
        assert np.abs(a.psi(a.interior_point)).max() <= 1e-8


def test_centralized_from_low_levels(model, ocp):
    sol = solve_centralized(model, ocp, (2.0, 2.0, 1.0, 1.0))
    assert np.allclose(sol.v, ocp.v_max, atol=1e-5)
