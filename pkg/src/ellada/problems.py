"""Small convex test problems: random chained QPs and a JSON description format.

A QP agent minimizes ``0.5 x'Qx + c'x`` subject to ``E x = d`` and an
optional box. Neighbouring agents on the chain share ``overlap`` components
(the tail of the parent equals the head of the child).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError, StructureError
from .graph import AgentSubproblem, Digraph, DistributedProblem, SelectorMatrix


def qp_agent(Q, c, E=None, d=None, lb=None, ub=None, x0=None, name=""):
    """Convex quadratic agent. Box bounds become ``phi <= 0`` rows."""
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float)
    n = c.size
    if Q.shape != (n, n):
        raise StructureError(f"Q must be {n}x{n}")
    if not np.allclose(Q, Q.T):
        raise StructureError("Q must be symmetric")
    E = np.zeros((0, n)) if E is None else np.atleast_2d(np.asarray(E, dtype=float))
    d = np.zeros(0) if d is None else np.asarray(d, dtype=float).ravel()
    if E.shape[1] != n or E.shape[0] != d.size:
        raise StructureError("equality block has inconsistent shape")
    rows, signs, offs = [], [], []
    if lb is not None:
        for j, v in enumerate(np.asarray(lb, dtype=float)):
            if np.isfinite(v):
                rows.append(j), signs.append(-1.0), offs.append(v)
    if ub is not None:
        for j, v in enumerate(np.asarray(ub, dtype=float)):
            if np.isfinite(v):
                rows.append(j), signs.append(1.0), offs.append(-v)
    rows = np.asarray(rows, dtype=int)
    signs = np.asarray(signs)
    offs = np.asarray(offs)
    Jphi = np.zeros((rows.size, n))
    Jphi[np.arange(rows.size), rows] = signs

    def phi(x):
        # sign * x_j + offset:  lb - x  or  x - ub
        return signs * np.asarray(x)[rows] + offs

    try:
        f_low = -0.5 * float(c @ np.linalg.solve(Q, c)) if np.all(np.linalg.eigvalsh(Q) > 0) else None
    except np.linalg.LinAlgError:
        f_low = None
    if x0 is None:
        x0 = np.zeros(n)
        if rows.size:
            lo = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
            hi = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
            x0 = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi),
                          np.where(np.isfinite(lo), lo + 1.0, np.where(np.isfinite(hi), hi - 1.0, 0.0)))
    zero_h = np.zeros((n, n))
    return AgentSubproblem(
        n=n,
        f=lambda x: 0.5 * float(x @ Q @ x) + float(c @ x),
        grad_f=lambda x: Q @ x + c,
        hess_f=lambda x: Q,
        phi=phi,
        jac_phi=lambda x: Jphi,
        hess_phi=lambda x, w: zero_h,
        psi=lambda x: E @ x - d,
        jac_psi=lambda x: E,
        hess_psi=lambda x, w: zero_h,
        interior_point=np.asarray(x0, dtype=float),
        f_lower=f_low,
        name=name,
    )


def random_qp_problem(n_agents=3, dim=4, overlap=1, n_eq=1, seed=0, box=None) -> DistributedProblem:
    """Chain ``1 -> 2 -> ... -> n`` of strongly convex QP agents.

    ``box`` (a positive half-width) adds bounds ``|x_j| <= box`` that are
    inactive at the generated optimum only by chance.
    """
    if overlap < 0 or overlap > dim:
        raise ValueError("overlap must lie in [0, dim]")
    if n_eq >= dim:
        raise ValueError("need fewer equalities than variables")
    rng = np.random.default_rng(seed)
    agents = {}
    for i in range(1, n_agents + 1):
        M = rng.standard_normal((dim, dim))
        Q = M @ M.T / dim + 0.5 * np.eye(dim)
        c = rng.standard_normal(dim)
        E = rng.standard_normal((n_eq, dim))
        d = rng.standard_normal(n_eq)
        lb = ub = None
        if box is not None:
            lb, ub = -np.full(dim, box), np.full(dim, box)
        x0 = None
        agents[i] = qp_agent(Q, c, E, d, lb, ub, x0=x0, name=f"qp {i}")
    edges = tuple((i, i + 1) for i in range(1, n_agents)) if overlap else ()
    selectors = {}
    for (j, i) in edges:
        selectors[(j, (j, i))] = SelectorMatrix.from_indices(np.arange(dim - overlap, dim), dim)
        selectors[(i, (j, i))] = SelectorMatrix.from_indices(np.arange(overlap), dim)
    return DistributedProblem(Digraph(tuple(agents), edges), agents, selectors, name="random qp",
                              meta={"kind": "qp", "seed": seed})


def decoupled_problem(n_agents=2, dim=3, seed=0) -> DistributedProblem:
    """Agents with no shared variables (empty coupling)."""
    return random_qp_problem(n_agents, dim, overlap=0, n_eq=1, seed=seed)


def monolithic_qp_solution(problem: DistributedProblem):
    """Direct KKT solve of the undecomposed equality-constrained QP.

    Ignores inequalities, so it is an oracle only when none are active.
    Returns ``(x, xbar)`` in the stacked ordering.
    """
    c = problem.coupling
    n_x, n_b = c.n_x, c.n_xbar
    H = np.zeros((n_x + n_b, n_x + n_b))
    g = np.zeros(n_x + n_b)
    eq_rows, eq_rhs = [], []
    for i in problem.agent_ids:
        a = problem.agents[i]
        cols = c.agent_cols[i]
        z = np.zeros(a.n)
        H[cols, cols] = a.hess_f(z)
        g[cols] = a.grad_f(z)
        J = a.jac_psi(z)
        if J.shape[0]:
            R = np.zeros((J.shape[0], n_x + n_b))
            R[:, cols] = J
            eq_rows.append(R)
            eq_rhs.append(-a.psi(z))
    if c.n_rows:
        eq_rows.append(np.hstack([c.A, c.B]))
        eq_rhs.append(np.zeros(c.n_rows))
    Eq = np.vstack(eq_rows) if eq_rows else np.zeros((0, n_x + n_b))
    rhs = np.concatenate(eq_rhs) if eq_rhs else np.zeros(0)
    m = Eq.shape[0]
    K = np.block([[H, Eq.T], [Eq, np.zeros((m, m))]])
    sol = np.linalg.lstsq(K, np.concatenate([-g, rhs]), rcond=None)[0]
    return sol[:n_x], sol[n_x:n_x + n_b]


# --- description files -----------------------------------------------------

def _node(key):
    return int(key) if isinstance(key, str) and key.lstrip("-").isdigit() else key


def problem_from_dict(desc: dict) -> DistributedProblem:
    """Build a QP problem from a description mapping.

    Layout::

        {"agents": {"1": {"Q": [[..]], "c": [..], "E": [[..]], "d": [..],
                          "lb": [..], "ub": [..], "x0": [..]}, ...},
         "edges": [[1, 2], ...],
         "selectors": [{"agent": 1, "edge": [1, 2], "indices": [3]}, ...]}
    """
    allowed = {"agents", "edges", "selectors", "name"}
    unknown = set(desc) - allowed
    if unknown:
        raise ConfigError(f"unknown problem keys: {sorted(unknown)}")
    if "agents" not in desc:
        raise ConfigError("problem description needs an 'agents' table")
    agents = {}
    for key, entry in desc["agents"].items():
        extra = set(entry) - {"Q", "c", "E", "d", "lb", "ub", "x0"}
        if extra:
            raise ConfigError(f"agent {key}: unknown keys {sorted(extra)}")
        try:
            agents[_node(key)] = qp_agent(entry["Q"], entry["c"], entry.get("E"), entry.get("d"), entry.get("lb"),
                                          entry.get("ub"), entry.get("x0"), name=str(key))
        except KeyError as exc:
            raise ConfigError(f"agent {key}: missing {exc}") from None
    edges = tuple((_node(a), _node(b)) for a, b in desc.get("edges", []))
    selectors = {}
    for s in desc.get("selectors", []):
        i, e = _node(s["agent"]), tuple(_node(v) for v in s["edge"])
        selectors[(i, e)] = SelectorMatrix.from_indices(s["indices"], agents[i].n)
    return DistributedProblem(Digraph(tuple(agents), edges), agents, selectors,
                              name=desc.get("name", "custom"), meta={"kind": "qp"})


def load_problem(path) -> DistributedProblem:
    text = Path(path).read_text()
    try:
        desc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return problem_from_dict(desc)
