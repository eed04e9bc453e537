"""Quadruple-tank benchmark: model, transcribed OCP, decomposition, closed loop.

Tanks 1 and 2 are the lower tanks, 3 and 4 the upper ones. Pump 1 feeds
tanks 1 and 4, pump 2 feeds tanks 2 and 3; tank 3 drains into 1 and tank 4
into 2. The horizon is transcribed with implicit Euler, so one agent's
variable is its state trajectory (own tanks plus a copy of the upstream
tank) followed by its input sequence.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from . import kernels
from .errors import DomainError, SolverError
from .graph import AgentSubproblem, Digraph, DistributedProblem, SelectorMatrix
from .nlp import BarrierObjective, solve_equality_nlp


@dataclass(frozen=True)
class TankModel:
    A: tuple = (28.0, 32.0, 28.0, 32.0)
    a: tuple = (3.145, 2.525, 3.145, 2.525)
    gamma: tuple = (0.43, 0.34)
    k: tuple = (3.14, 3.29)
    h_ss: tuple = (12.44, 13.17, 4.73, 4.99)
    v_ss: tuple = (3.15, 3.15)
    eps_h: float = 1e-6

    def drain_matrix(self):
        """``C`` with ``dh/dt = C sqrt(h) + G v``."""
        A, a = self.A, self.a
        C = np.zeros((4, 4))
        for i in range(4):
            C[i, i] = -a[i] / A[i]
        C[0, 2] = a[2] / A[0]
        C[1, 3] = a[3] / A[1]
        return C

    def pump_matrix(self):
        A, g, k = self.A, self.gamma, self.k
        G = np.zeros((4, 2))
        G[0, 0] = g[0] * k[0] / A[0]
        G[1, 1] = g[1] * k[1] / A[1]
        G[2, 1] = (1.0 - g[1]) * k[1] / A[2]
        G[3, 0] = (1.0 - g[0]) * k[0] / A[3]
        return G


def dynamics_rhs(model: TankModel, h, v):
    h = np.asarray(h, dtype=float)
    if np.any(h < -model.eps_h):
        raise DomainError(f"negative tank level {h.min():.3g}")
    s, _, _ = kernels.smooth_sqrt(h, model.eps_h)
    return model.drain_matrix() @ s + model.pump_matrix() @ np.asarray(v, dtype=float)


def dynamics_jacobian(model: TankModel, h):
    _, ds, _ = kernels.smooth_sqrt(np.asarray(h, dtype=float), model.eps_h)
    return model.drain_matrix() * ds[None, :]


@dataclass(frozen=True)
class OcpSpec:
    N: int = 40
    dt: float = 10.0
    q: float = 1.0
    r: float = 0.01
    v_min: float = 2.5
    v_max: float = 3.5

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon must have at least one step")
        if not self.v_min < self.v_max:
            raise ValueError("empty input box")


@dataclass(frozen=True)
class SubsystemDecomposition:
    """Agent id -> (own states, upstream copies, inputs); edges name the shared tank."""

    own: dict = field(default_factory=lambda: {1: (0, 3), 2: (1, 2)})
    copies: dict = field(default_factory=lambda: {1: (2,), 2: (3,)})
    inputs: dict = field(default_factory=lambda: {1: (0,), 2: (1,)})
    edge_state: dict = field(default_factory=lambda: {(2, 1): 2, (1, 2): 3})

    def validate(self, model: TankModel):
        states = sorted(s for v in self.own.values() for s in v)
        ins = sorted(u for v in self.inputs.values() for u in v)
        if states != [0, 1, 2, 3] or ins != [0, 1]:
            raise ValueError("decomposition must cover every state and input exactly once")
        C, G = model.drain_matrix(), model.pump_matrix()
        for i, own in self.own.items():
            local = set(own) | set(self.copies[i])
            for s in own:
                if any(C[s, j] != 0 and j not in local for j in range(4)):
                    raise ValueError(f"agent {i}: state {s} depends on a tank it cannot see")
                if any(G[s, u] != 0 and u not in self.inputs[i] for u in range(2)):
                    raise ValueError(f"agent {i}: state {s} depends on a foreign input")


class TrajectoryBlock:
    """Index bookkeeping and callbacks for one transcribed (sub)problem."""

    def __init__(self, model, ocp, own, copies, inputs, x0_own, fixed_copies=None):
        self.model, self.ocp = model, ocp
        self.own, self.copies, self.inputs = tuple(own), tuple(copies), tuple(inputs)
        self.cols = self.own + self.copies
        self.nd, self.nx, self.nu = len(self.own), len(self.cols), len(self.inputs)
        self.N = ocp.N
        self.nX = (self.N + 1) * self.nx
        self.n = self.nX + self.N * self.nu
        C, G = model.drain_matrix(), model.pump_matrix()
        self.C = C[np.ix_(self.own, self.cols)]
        self.G = G[np.ix_(self.own, self.inputs)]
        self.x0 = np.asarray(x0_own, dtype=float)
        self.h_ref = np.asarray(model.h_ss)[list(self.own)]
        self.v_ref = np.asarray(model.v_ss)[list(self.inputs)]
        self.fixed = None if fixed_copies is None else np.asarray(fixed_copies, dtype=float).reshape(self.N + 1, -1)
        w = np.zeros(self.n)
        Xw = w[: self.nX].reshape(self.N + 1, self.nx)
        Xw[:, : self.nd] = 2.0 * ocp.q
        w[self.nX:] = 2.0 * ocp.r
        self._hess_f = np.diag(w)
        m = self.N * self.nu
        Jp = np.zeros((2 * m, self.n))
        Jp[np.arange(m), self.nX + np.arange(m)] = -1.0
        Jp[m + np.arange(m), self.nX + np.arange(m)] = 1.0
        self._jac_phi = Jp
        if self.fixed is not None:
            k = self.fixed.size
            Jc = np.zeros((k, self.n))
            idx = (np.arange(self.N + 1)[:, None] * self.nx + self.nd + np.arange(len(self.copies))[None, :]).ravel()
            Jc[np.arange(k), idx] = 1.0
            self._jac_fix = Jc

    def split(self, xi):
        X = xi[: self.nX].reshape(self.N + 1, self.nx)
        V = xi[self.nX:].reshape(self.N, self.nu)
        return X, V

    def pack(self, X, V):
        return np.concatenate([np.asarray(X, dtype=float).ravel(), np.asarray(V, dtype=float).ravel()])

    def state_index(self, col):
        """Positions of local column ``col`` over ``t = 0..N``."""
        return np.arange(self.N + 1) * self.nx + col

    # callbacks
    def f(self, xi):
        X, V = self.split(xi)
        dh = X[:, : self.nd] - self.h_ref
        dv = V - self.v_ref
        return float(self.ocp.q * np.sum(dh * dh) + self.ocp.r * np.sum(dv * dv))

    def grad_f(self, xi):
        X, V = self.split(xi)
        gX = np.zeros_like(X)
        gX[:, : self.nd] = 2.0 * self.ocp.q * (X[:, : self.nd] - self.h_ref)
        gV = 2.0 * self.ocp.r * (V - self.v_ref)
        return self.pack(gX, gV)

    def hess_f(self, xi):
        return self._hess_f

    def phi(self, xi):
        V = xi[self.nX:]
        return np.concatenate([self.ocp.v_min - V, V - self.ocp.v_max])

    def jac_phi(self, xi):
        return self._jac_phi

    def hess_phi(self, xi, w):
        return np.zeros((self.n, self.n))

    def psi(self, xi):
        X, V = self.split(xi)
        r = kernels.euler_residual(X, V, self.C, self.G, self.ocp.dt, self.x0, self.model.eps_h)
        if self.fixed is None:
            return r
        return np.concatenate([r, (X[:, self.nd:] - self.fixed).ravel()])

    def jac_psi(self, xi):
        X, V = self.split(xi)
        J = kernels.euler_jacobian(X, V, self.C, self.G, self.ocp.dt, self.model.eps_h)
        if self.fixed is None:
            return J
        return np.vstack([J, self._jac_fix])

    def hess_psi(self, xi, w):
        X, V = self.split(xi)
        m = self.nd * (self.N + 1)
        d = kernels.euler_hessian_diag(X, V, self.C, np.asarray(w)[:m], self.ocp.dt, self.model.eps_h)
        return np.diag(d)

    def subproblem(self, name="", interior=None):
        return AgentSubproblem(
            n=self.n,
            f=self.f,
            grad_f=self.grad_f,
            hess_f=self.hess_f,
            phi=self.phi,
            jac_phi=self.jac_phi,
            hess_phi=self.hess_phi,
            psi=self.psi,
            jac_psi=self.jac_psi,
            hess_psi=self.hess_psi,
            interior_point=interior,
            f_lower=0.0,
            name=name,
        )


def _drain_order(C):
    """Tanks ordered so every upstream tank precedes the ones it feeds."""
    n = C.shape[0]
    order, done = [], set()
    while len(order) < n:
        ready = [i for i in range(n) if i not in done
                 and all(j in done for j in range(n) if j != i and C[i, j] != 0)]
        if not ready:
            raise ValueError("drain coupling is cyclic")
        order.extend(ready)
        done.update(ready)
    return order


def _euler_scalar(rhs, c, eps):
    """Solve ``h + c s(h) = rhs`` for the smoothed root ``s``, ``c > 0``."""
    se = np.sqrt(eps)
    root = 0.5 * (-c + np.sqrt(c * c + 4.0 * rhs)) if rhs > 0 else -1.0
    if root >= se:
        return root * root

    def g(h):
        return h + c * kernels.smooth_sqrt(np.array([h]), eps)[0][0] - rhs

    lo = min(rhs, 0.0) - 1.0
    while g(lo) > 0:
        lo = 2.0 * lo - 1.0
    return brentq(g, lo, eps, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def _implicit_euler(C, U, x0, fixed, dt, eps):
    """Implicit Euler for ``dh/dt = C s([h, c]) + u`` with known copies ``c``.

    ``C`` is ``(nd, nd + nc)``; ``U`` is ``(N, nd)``; ``fixed`` is ``(N+1, nc)``.
    Tanks are solved one at a time in upstream order, which is exact
    because the drain coupling is triangular.
    """
    nd = C.shape[0]
    order = _drain_order(C[:, :nd])
    N = U.shape[0]
    X = np.zeros((N + 1, C.shape[1]))
    X[0, :nd] = x0
    X[:, nd:] = fixed
    for t in range(N):
        s = kernels.smooth_sqrt(X[t + 1], eps)[0]
        for i in order:
            inflow = sum(C[i, j] * s[j] for j in range(C.shape[1]) if j != i)
            rhs = X[t, i] + dt * (inflow + U[t, i])
            X[t + 1, i] = _euler_scalar(rhs, -dt * C[i, i], eps)
            s[i] = kernels.smooth_sqrt(X[t + 1, i:i + 1], eps)[0][0]
        if not np.all(np.isfinite(X[t + 1])):
            raise SolverError(f"implicit Euler step {t} produced non-finite levels")
    return X


def simulate_euler(model: TankModel, ocp: OcpSpec, x_now, V):
    """Implicit-Euler state trajectory (N+1, 4) under inputs ``V`` (N, 2)."""
    C, G = model.drain_matrix(), model.pump_matrix()
    U = np.asarray(V, dtype=float) @ G.T
    return _implicit_euler(C, U, np.asarray(x_now, dtype=float), np.zeros((ocp.N + 1, 0)), ocp.dt, model.eps_h)


def _clip_inputs(ocp, V, margin=1e-3):
    return np.clip(V, ocp.v_min + margin, ocp.v_max - margin)


def default_input_plan(model, ocp):
    return np.tile(np.asarray(model.v_ss, dtype=float), (ocp.N, 1))


def shift_plan(V):
    """Drop the first input and repeat the last one."""
    V = np.asarray(V, dtype=float)
    return np.vstack([V[1:], V[-1:]])


def build_subsystem_ocp(model: TankModel, ocp: OcpSpec, x_now, decomp: Optional[SubsystemDecomposition] = None,
                        V_guess=None) -> DistributedProblem:
    """Two-agent transcription with trajectory-length overlaps.

    The starting point is an implicit-Euler simulation under ``V_guess``
    (default: the nominal inputs), so every copy agrees with its original.
    """
    decomp = decomp or SubsystemDecomposition()
    decomp.validate(model)
    x_now = np.asarray(x_now, dtype=float)
    if np.any(x_now < 0):
        raise DomainError("tank levels must be nonnegative")
    V = _clip_inputs(ocp, default_input_plan(model, ocp) if V_guess is None else V_guess)
    H = simulate_euler(model, ocp, x_now, V)
    blocks, agents, init = {}, {}, {}
    for i in sorted(decomp.own):
        blk = TrajectoryBlock(model, ocp, decomp.own[i], decomp.copies[i], decomp.inputs[i],
                              x_now[list(decomp.own[i])])
        blocks[i] = blk
        init[i] = blk.pack(H[:, list(blk.cols)], V[:, list(blk.inputs)])
        agents[i] = blk.subproblem(name=f"subsystem {i}", interior=init[i])
    edges = tuple(sorted(decomp.edge_state))
    selectors = {}
    for e, s in decomp.edge_state.items():
        for i in e:
            col = blocks[i].cols.index(s)
            selectors[(i, e)] = SelectorMatrix.from_indices(blocks[i].state_index(col), blocks[i].n)
    return DistributedProblem(
        Digraph(tuple(sorted(decomp.own)), edges),
        agents,
        selectors,
        initial_point=init,
        name="quadruple tank",
        meta={"blocks": blocks, "phi_range": 1.0, "x_now": x_now.copy()},
    )


@dataclass
class OcpSolution:
    v: np.ndarray  # first input
    H: np.ndarray  # (N+1, 4)
    V: np.ndarray  # (N, 2)
    cost: float
    iterations: int
    solve_time: float


def _rounding_floor(agent: AgentSubproblem, x, b, b_next):
    """Predicted stationarity floor at ``b_next`` from rounding in ``phi``.

    Multipliers ``mu = -b/phi`` barely move with ``b``, so an active row
    sits at ``phi = -b_next/mu`` and its barrier gradient carries a relative
    error of ``delta_phi/|phi|``.
    """
    phi = np.atleast_1d(agent.phi(x))
    if not phi.size:
        return 0.0
    J = agent.jac_phi(x)
    mu = -b / phi
    dphi = np.finfo(float).eps * (np.abs(J) @ np.abs(x) + np.abs(phi - J @ x))
    return float(np.linalg.norm(J.T @ (mu * mu * dphi))) / b_next


def solve_barrier_continuation(agent: AgentSubproblem, x0, b0=0.1, b_final=1e-8, factor=10.0, tol=1e-6,
                               tol_eq=1e-8, max_iter=200):
    """Monolithic barrier solve of one smooth problem; returns ``(x, iterations)``.

    ``tol`` bounds the final stationarity residual. Rounding in ``phi`` puts
    a floor of order ``mu^2 eps / b`` under it, so the continuation stops
    early (above ``b_final``) when the predicted floor exceeds ``tol/10``; the
    estimate runs several times below the observed stall.
    """
    x = np.array(x0, dtype=float)
    b = b0
    total = 0
    while True:
        obj = BarrierObjective(agent, b, 1.0, np.zeros(0), np.zeros((0, agent.n)))
        last = b <= b_final * (1 + 1e-12)
        res = solve_equality_nlp(x, obj, tol if last else max(tol, 10 * b), tol_eq if last else max(tol_eq, b),
                                 max_iter=max_iter)
        total += res.iterations
        if res.status not in ("converged", "descent_violated"):
            raise SolverError(f"barrier solve failed at b={b:g}: {res.status}")
        x = res.x
        if last:
            return x, total
        b_next = max(b / factor, b_final)
        if _rounding_floor(agent, x, b, b_next) > 0.1 * tol:
            b_final = b  # tight solve at the current b instead
            continue
        b = b_next


def solve_centralized(model: TankModel, ocp: OcpSpec, x_now, V_guess=None, tol=1e-6) -> OcpSolution:
    t0 = time.perf_counter()
    x_now = np.asarray(x_now, dtype=float)
    V = _clip_inputs(ocp, default_input_plan(model, ocp) if V_guess is None else V_guess)
    H = simulate_euler(model, ocp, x_now, V)
    blk = TrajectoryBlock(model, ocp, (0, 1, 2, 3), (), (0, 1), x_now)
    xi0 = blk.pack(H, V)
    xi, iters = solve_barrier_continuation(blk.subproblem("centralized"), xi0, tol=tol)
    X, Vs = blk.split(xi)
    return OcpSolution(Vs[0].copy(), X.copy(), Vs.copy(), blk.f(xi), iters, time.perf_counter() - t0)


def solve_local(model, ocp, decomp, i, x_now, fixed_copy, V_guess=None, tol=1e-6):
    """One agent's OCP with its upstream copy pinned to ``fixed_copy``."""
    x_now = np.asarray(x_now, dtype=float)
    own, cps, ins = decomp.own[i], decomp.copies[i], decomp.inputs[i]
    blk = TrajectoryBlock(model, ocp, own, cps, ins, x_now[list(own)], fixed_copies=fixed_copy)
    V = _clip_inputs(ocp, default_input_plan(model, ocp) if V_guess is None else V_guess)[:, list(ins)]
    X = _implicit_euler(blk.C, V @ blk.G.T, x_now[list(own)], blk.fixed, ocp.dt, model.eps_h)
    xi, iters = solve_barrier_continuation(blk.subproblem(f"local {i}"), blk.pack(X, V), tol=tol)
    Xs, Vs = blk.split(xi)
    return Xs, Vs, iters


# --- closed loop ----------------------------------------------------------

CONTROLLERS = ("centralized", "decentralized", "feedforward", "ellada")


@dataclass
class ClosedLoopLog:
    controller: str
    t: list = field(default_factory=list)
    h: list = field(default_factory=list)
    v: list = field(default_factory=list)
    solve_iters: list = field(default_factory=list)
    solve_time: list = field(default_factory=list)
    failed: bool = False
    message: str = ""
    solver_results: list = field(default_factory=list)

    @property
    def states(self):
        return np.array(self.h)

    @property
    def inputs(self):
        return np.array(self.v)

    def cost(self, model: TankModel, ocp: OcpSpec):
        """Closed-loop quadratic cost over the logged instants."""
        H = self.states
        V = self.inputs
        n = len(V)
        dh = H[:n] - np.asarray(model.h_ss)
        dv = V - np.asarray(model.v_ss)
        return float(ocp.q * np.sum(dh * dh) + ocp.r * np.sum(dv * dv))

    def ultimate_deviation(self, model: TankModel):
        return float(np.max(np.abs(self.states[-1] - np.asarray(model.h_ss))))

    def write_csv(self, path, timing=True):
        """One row per sampling instant; ``timing=False`` leaves ``solve_time`` empty."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "h1", "h2", "h3", "h4", "v1", "v2", "solve_iters", "solve_time"])
            for j in range(len(self.t)):
                hv = self.h[j]
                vv = self.v[j] if j < len(self.v) else (float("nan"), float("nan"))
                it = self.solve_iters[j] if j < len(self.solve_iters) else ""
                st = f"{self.solve_time[j]:.6f}" if timing and j < len(self.solve_time) else ""
                w.writerow([f"{self.t[j]:.6g}", *(f"{x:.10f}" for x in hv), *(f"{x:.10f}" for x in vv), it, st])
        return path


def plant_step(model: TankModel, h, v, dt, rtol=1e-8, atol=1e-10):
    sol = solve_ivp(lambda t, x: dynamics_rhs(model, x, v), (0.0, dt), np.asarray(h, dtype=float),
                    method="RK45", rtol=rtol, atol=atol)
    if not sol.success:
        raise SolverError(f"plant integration failed: {sol.message}")
    return sol.y[:, -1]


def closed_loop(model: TankModel, ocp: OcpSpec, controller: str, x0, steps: int, solver_config=None,
                decomp: Optional[SubsystemDecomposition] = None, record_solver=False) -> ClosedLoopLog:
    """Receding-horizon simulation; a controller failure truncates the log."""
    if controller not in CONTROLLERS:
        raise ValueError(f"unknown controller {controller!r}")
    decomp = decomp or SubsystemDecomposition()
    log = ClosedLoopLog(controller)
    h = np.asarray(x0, dtype=float)
    if np.any(h < 0):
        raise DomainError("tank levels must be nonnegative")
    V_plan = default_input_plan(model, ocp)
    prev_traj = None  # (N+1, 4) predicted states from the previous instant
    log.t.append(0.0)
    log.h.append(h.copy())
    for step in range(steps):
        t0 = time.perf_counter()
        try:
            if controller == "centralized":
                sol = solve_centralized(model, ocp, h, V_guess=shift_plan(V_plan) if step else None)
                v, V_plan, iters = sol.v, sol.V, sol.iterations
            elif controller == "ellada":
                from .driver import run_ellada, SolverConfig

                prob = build_subsystem_ocp(model, ocp, h, decomp, V_guess=shift_plan(V_plan) if step else None)
                res = run_ellada(prob, solver_config or SolverConfig(variant="ellada"))
                if record_solver:
                    log.solver_results.append(res)
                if not res.success:
                    raise SolverError(f"distributed solve ended with status {res.status}")
                V_plan = np.zeros((ocp.N, 2))
                for i, blk in prob.meta["blocks"].items():
                    _, Vi = blk.split(res.x_local[i])
                    V_plan[:, list(blk.inputs)] = Vi
                v, iters = V_plan[0].copy(), res.nlp_total
            else:
                V_new = np.zeros((ocp.N, 2))
                traj = np.zeros((ocp.N + 1, 4))
                iters = 0
                for i in sorted(decomp.own):
                    cps = list(decomp.copies[i])
                    if controller == "feedforward" and prev_traj is not None:
                        fixed = np.vstack([prev_traj[1:, cps], prev_traj[-1:, cps]])
                    else:
                        fixed = np.tile(h[cps], (ocp.N + 1, 1))
                    X, Vi, it = solve_local(model, ocp, decomp, i, h, fixed,
                                            V_guess=shift_plan(V_plan) if step else None)
                    iters += it
                    V_new[:, list(decomp.inputs[i])] = Vi
                    traj[:, list(decomp.own[i])] = X[:, : len(decomp.own[i])]
                prev_traj = traj
                V_plan = V_new
                v = V_new[0].copy()
        except (SolverError, DomainError) as exc:
            log.failed = True
            log.message = f"step {step}: {exc}"
            break
        log.solve_time.append(time.perf_counter() - t0)
        log.solve_iters.append(int(iters))
        log.v.append(np.asarray(v, dtype=float).copy())
        h = plant_step(model, h, v, ocp.dt)
        log.t.append((step + 1) * ocp.dt)
        log.h.append(h.copy())
    return log


def load_reference(path):
    with open(path) as fh:
        d = json.load(fh)
    return {k: np.asarray(v) if isinstance(v, list) else v for k, v in d.items()}
