from __future__ import annotations

import numpy as np
import pytest

from ellada.driver import SolverConfig, run
from ellada.tank import OcpSpec, TankModel, build_subsystem_ocp, closed_loop

X0 = (12.6, 12.4, 5.0, 4.5)
CLOSED_LOOP_STEPS = 20

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def model():
    return TankModel()


@pytest.fixture(scope="session")
def ocp():
    return OcpSpec()


@pytest.fixture(scope="session")
def tank_problem(model, ocp):
    return build_subsystem_ocp(model, ocp, X0)


@pytest.fixture(scope="session")
def tank_runs(tank_problem):
    """One synchronous solve per variant at the test point, shared by many tests."""
    return {v: run(tank_problem, SolverConfig(variant=v)) for v in ("ell", "ella", "ellada")}


@pytest.fixture(scope="session")
def closed_loops(model, ocp):
    cfg = SolverConfig(variant="ellada", fair_finals=True)
    logs = {}
    for name in ("centralized", "ellada", "decentralized", "feedforward"):
        logs[name] = closed_loop(model, ocp, name, X0, CLOSED_LOOP_STEPS, solver_config=cfg,
                                 record_solver=name == "ellada")
    return logs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
