"""Random problem generators shared by the unit and acceptance tests."""

from __future__ import annotations

import numpy as np

from ellada.graph import AgentSubproblem
from ellada.nlp import BarrierObjective, EqualityMap


def random_smooth_nlp(seed: int, feasible_start: bool = True):
    """Nonconvex smooth problem with box bounds and nonlinear equalities.

    ``f = 0.5 x'Qx + c'x + sum a_j sin(x_j)``, ``psi_c = E_c x - d_c + k_c |x|^2 / n``,
    ``|x_j| < 3``. Returns ``(objective, equality_map, x0)`` with ``x0``
    strictly inside the box.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    m = int(rng.integers(0, n))
    M = rng.standard_normal((n, n))
    Q = M @ M.T / n + 0.2 * np.eye(n)
    c = rng.standard_normal(n)
    a = 0.3 * rng.random(n)
    E = rng.standard_normal((m, n))
    kap = 0.1 * rng.standard_normal(m)
    x_feas = rng.uniform(-1.5, 1.5, n)
    d = E @ x_feas + kap * (x_feas @ x_feas) / n

    def psi(x):
        return E @ x - d + kap * (x @ x) / n

    def jac(x):
        return E + np.outer(kap, 2.0 * x / n)

    def hess_psi(x, w):
        return (2.0 / n) * float(np.asarray(w) @ kap) * np.eye(n)

    agent = AgentSubproblem(
        n=n,
        f=lambda x: 0.5 * float(x @ Q @ x) + float(c @ x) + float(a @ np.sin(x)),
        grad_f=lambda x: Q @ x + c + a * np.cos(x),
        hess_f=lambda x: Q - np.diag(a * np.sin(x)),
        phi=lambda x: np.concatenate([x - 3.0, -3.0 - x]),
        jac_phi=lambda x: np.vstack([np.eye(n), -np.eye(n)]),
        hess_phi=lambda x, w: np.zeros((n, n)),
        psi=psi,
        jac_psi=jac,
        hess_psi=hess_psi,
        interior_point=x_feas,
    )
    k = int(rng.integers(0, n + 1))
    D = np.eye(n)[rng.permutation(n)[:k]]
    v = rng.standard_normal(k)
    b = float(10.0 ** rng.uniform(-4, -1))
    rho = float(10.0 ** rng.uniform(-1, 1))
    obj = BarrierObjective(agent, b, rho, v, D)
    x0 = x_feas if feasible_start else rng.uniform(-2.5, 2.5, n)
    return obj, EqualityMap.of(agent), x0


def fd_gradient(fun, x, h=1e-6):
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def fd_jacobian(fun, x, h=1e-6):
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h))
    return np.stack(cols, axis=1)


def random_coupled_instance(seed: int):
    """Coupling matrices from a random chain plus random iterate data."""
    from ellada.problems import random_qp_problem

    rng = np.random.default_rng(seed)
    p = random_qp_problem(n_agents=int(rng.integers(2, 5)), dim=int(rng.integers(2, 5)), overlap=1, seed=seed)
    c = p.coupling
    m = c.n_rows
    return dict(
        A=c.A, B=c.B, x=rng.standard_normal(c.n_x), xbar=rng.standard_normal(c.n_xbar),
        z=rng.standard_normal(m), y=rng.standard_normal(m), lam=rng.uniform(-10, 10, m),
        beta=float(10 ** rng.uniform(-1, 2)), rho=None, coupling=c,
    )


def aug_lagrangian_plain(A, B, x, xbar, z, y, lam, rho, beta):
    """Coupling part of the augmented Lagrangian written out directly."""
    r = A @ x + B @ xbar + z
    return float(y @ r + 0.5 * rho * (r @ r) + lam @ z + 0.5 * beta * (z @ z))


def random_secant_batch(seed: int):
    """Full-rank secant pairs ``(dW, dH)`` with a well-conditioned ``dW'dH``."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 12))
    m = int(rng.integers(1, n + 1))
    while True:
        dW = rng.standard_normal((n, m))
        dH = dW + 0.5 * rng.standard_normal((n, m))
        if np.linalg.cond(dW.T @ dH) < 1e3 and np.linalg.cond(dW) < 1e2:
            return dW, dH


def blockwise_and_stacked(seed: int):
    """One coordinator round done blockwise from agent replies and on stacked vectors."""
    from ellada.coordinator import IterateState, OuterState
    from ellada.problems import random_qp_problem
    from ellada.runtime import AgentMessage, coordinator_round, selector_indices, stacked_round

    rng = np.random.default_rng(seed)
    p = random_qp_problem(n_agents=int(rng.integers(2, 6)), dim=int(rng.integers(2, 6)),
                          overlap=int(rng.integers(1, 3)), seed=seed)
    c = p.coupling
    x = rng.standard_normal(c.n_x)
    state = IterateState(x, rng.standard_normal(c.n_xbar), rng.standard_normal(c.n_rows),
                         rng.standard_normal(c.n_rows))
    outer = OuterState.initial(c.n_rows, beta=float(10 ** rng.uniform(-1, 2)), lam0=rng.uniform(-10, 10, c.n_rows))
    replies = {}
    for i in p.agent_ids:
        xi = x[c.agent_cols[i]]
        replies[i] = AgentMessage("from", i, {e: xi[idx] for e, idx in selector_indices(p, i).items()})
    return coordinator_round(c, replies, state, outer), stacked_round(c, x, state, outer)
