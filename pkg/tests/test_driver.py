import numpy as np
import pytest

from ellada import anderson as aa
from ellada.driver import (BarrierSchedule, IterationLog, SolverConfig, ToleranceSchedule, default_schedules, run,
                           run_ell, run_ella, run_ellada)
from ellada.problems import decoupled_problem, monolithic_qp_solution, random_qp_problem


def floored_ell_schedule(floor=1e-7):
    """ELL schedule with round tolerances held above ``floor`` (finite-precision QP runs)."""
    base, _ = default_schedules("ell")
    return ToleranceSchedule(
        eps_outer=lambda k: tuple(max(e, floor) for e in base.eps_outer(k)[:3]) + (None, None),
        eps_final=(floor, floor, floor, None, None, None),
        nlp_fixed=(1e-7, 1e-10),
    )


@pytest.mark.parametrize("seed", range(6))
def test_ell_matches_monolithic_qp(seed):
    p = random_qp_problem(n_agents=3, dim=4, overlap=1, seed=seed)
    cfg = SolverConfig(variant="ell", schedule=floored_ell_schedule(), barrier=BarrierSchedule(fixed=1e-8))
    res = run(p, cfg)
    assert res.success, res.status
    x_ref, xbar_ref = monolithic_qp_solution(p)
    assert np.abs(res.state.x - x_ref).max() < 1e-6
    assert np.abs(res.state.x_bar - xbar_ref).max() < 1e-6


def test_decoupled_problem_single_round():
    p = decoupled_problem(n_agents=3, dim=3, seed=1)
    res = run_ell(p)
    assert res.success and res.outer_rounds == 1
    assert res.state.z.size == 0
    x_ref, _ = monolithic_qp_solution(p)
    assert np.abs(res.state.x - x_ref).max() < 1e-6


@pytest.mark.parametrize("variant", ["ell", "ella", "ellada"])
def test_variants_converge_on_qp(variant):
    res = run(random_qp_problem(seed=7, box=10.0), SolverConfig(variant=variant))
    assert res.success
    assert res.verdict.ok
    assert res.inner_total == len(res.log.inner)


def test_zero_safeguard_budget_reduces_to_plain_iteration():
    p = random_qp_problem(n_agents=3, dim=4, seed=2)
    plain = run_ella(p)
    off = run_ellada(p, SolverConfig(accel=aa.AndersonParams(eta_L=0.0)))
    assert off.success and plain.success
    assert off.inner_total == plain.inner_total
    assert not any(r.accel_accepted for r in off.log.inner)
    for i in p.agent_ids:
        assert np.array_equal(off.x_local[i], plain.x_local[i])


def test_default_schedules():
    tol, bar = default_schedules("ell")
    assert tol.eps_outer(1) == (1e-2, 1e-2, 1e-1, None, None)
    assert tol.eps_outer(3) == pytest.approx((2.5e-3, 2.5e-3, 2.5e-2, None, None)[:3] + (None, None))
    assert tol.eps_final[:3] == (1e-4, 1e-4, 1e-3)
    assert bar.first() == 1e-8 and bar.next(1.0) == 1e-8
    tol, bar = default_schedules("ella")
    e = tol.eps_outer(2)
    assert e[0] == e[1] == e[3] == 50.0 and e[2] == pytest.approx(0.05) and e[4] == pytest.approx(0.05)
    assert tol.eps_final == pytest.approx((1.0, 1.0, 1e-3, 1.0, 1e-3, 1e-4))
    assert default_schedules("ellada", fair_finals=True)[0].eps_final[:2] == (1e-4, 1e-4)
    with pytest.raises(ValueError):
        default_schedules("admm")


def test_barrier_schedule_clamps():
    bar = BarrierSchedule()
    assert bar.first() == 0.1
    assert bar.next(10.0) == 0.1
    assert bar.next(1e-2) == pytest.approx(25e-4)
    assert bar.next(1e-6) == 1e-4


def test_inner_tolerance_rules():
    tol, _ = default_schedules("ella")
    assert tol.inner_eps4(1.0, 0.5) == pytest.approx(10.0)
    assert tol.inner_eps4(1.0, 0.01) == 1.0
    lin = ToleranceSchedule(tol.eps_outer, tol.eps_final, inner_rule="linear", inner_coeff=2.0)
    assert lin.inner_eps4(0.1, 0.5) == 1.0
    with pytest.raises(ValueError):
        ToleranceSchedule(tol.eps_outer, tol.eps_final, inner_rule="cubic").inner_eps4(1, 1)


@pytest.mark.parametrize("kw", [{"variant": "admm"}, {"beta1": 0.0}, {"omega": 1.0}, {"gamma": 1.0},
                                {"mode": "async:x"}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_async_acceleration_rejected():
    with pytest.raises(ValueError, match="synchronous"):
        run(random_qp_problem(seed=0), SolverConfig(variant="ellada", mode="async:2"))


def test_inner_cap_status():
    res = run(random_qp_problem(seed=0), SolverConfig(variant="ell", max_inner=1))
    assert not res.success and res.status == "inner_cap"


def test_outer_cap_status():
    res = run(random_qp_problem(seed=0), SolverConfig(variant="ella", max_outer=2))
    assert not res.success and res.status == "outer_cap"
    assert res.outer_rounds == 2


def test_loopback_transport_same_result():
    p = random_qp_problem(seed=3)
    a = run(p, SolverConfig(variant="ella"))
    b = run(p, SolverConfig(variant="ella", transport="loopback"))
    assert a.inner_total == b.inner_total
    assert np.array_equal(a.state.x, b.state.x)


def test_log_order_and_csv(tmp_path):
    res = run(random_qp_problem(seed=1), SolverConfig(variant="ella"))
    log = res.log
    rounds = log.by_round()
    assert sorted(rounds) == [o.k for o in log.outer]
    assert all(len(rounds[o.k]) == o.inner_iterations for o in log.outer)
    with pytest.raises(ValueError):
        log.append_inner(log.inner[0])
    path = log.write_csv(tmp_path / "it.csv")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("k,r,L_b,eps1")
    assert len(lines) == len(log.inner) + 1
    s = res.summary()
    assert s["inner_iterations"] == res.inner_total and s["success"]


def test_empty_log_csv(tmp_path):
    text = IterationLog().write_csv(tmp_path / "e.csv").read_text()
    assert text.strip().count("\n") == 0
