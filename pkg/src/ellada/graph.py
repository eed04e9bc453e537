"""Coupling structure of a decomposed problem.

A problem is described by agents (digraph nodes) whose variables overlap
along digraph edges. Each edge becomes an overlap node owned by the
coordinator; every (agent, edge) incidence carries a selector ``D_ie`` and a
slack block, giving the stacked constraint ``A x + B xbar + z = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import StructureError

Edge = tuple  # (parent, child)
Incidence = tuple  # (agent, edge)


@dataclass(frozen=True)
class Digraph:
    """Agents ``nodes`` and edges ``(j, i)`` meaning j is a parent of i."""

    nodes: tuple
    edges: tuple = ()

    def __post_init__(self):
        nodes = tuple(self.nodes)
        edges = tuple(tuple(e) for e in self.edges)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        if len(set(nodes)) != len(nodes):
            raise StructureError("duplicate digraph nodes")
        known = set(nodes)
        seen = set()
        for e in edges:
            if len(e) != 2:
                raise StructureError(f"edge {e!r} is not a pair")
            j, i = e
            if j == i:
                raise StructureError(f"self-loop on node {j!r}")
            if j not in known or i not in known:
                raise StructureError(f"edge {e!r} references an undeclared node")
            if e in seen:
                raise StructureError(f"duplicate edge {e!r}")
            seen.add(e)

    def parents(self, i):
        return tuple(j for (j, k) in self.edges if k == i)

    def children(self, j):
        return tuple(i for (k, i) in self.edges if k == j)


@dataclass(frozen=True)
class BipartiteStructure:
    agent_nodes: tuple
    edge_nodes: tuple
    bipartite_edges: tuple

    def incident(self, agent):
        """Bipartite edges touching ``agent``, in canonical order."""
        return tuple(ie for ie in self.bipartite_edges if ie[0] == agent)

    def edge_members(self, edge):
        return tuple(ie for ie in self.bipartite_edges if ie[1] == edge)


def build_bipartite(digraph: Digraph) -> BipartiteStructure:
    """Turn digraph edges into overlap nodes linked to both endpoints.

    Ordering is canonical: agents sorted by id, overlap nodes sorted by
    (parent, child), incidences sorted by (agent, edge).
    """
    edges = list(digraph.edges)
    if len(set(edges)) != len(edges):
        raise StructureError("duplicate digraph edges")
    agent_nodes = tuple(sorted(digraph.nodes))
    edge_nodes = tuple(sorted(edges))
    incid = []
    for e in edge_nodes:
        j, i = e
        incid.append((j, e))
        incid.append((i, e))
    return BipartiteStructure(agent_nodes, edge_nodes, tuple(sorted(incid)))


class SelectorMatrix:
    """0/1 matrix picking components of an agent variable.

    Built from a dense matrix so that defective selectors can still be
    represented and reported by :func:`validate_problem`.
    """

    def __init__(self, matrix):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))

    @classmethod
    def from_indices(cls, indices, ncols):
        indices = np.asarray(indices, dtype=int)
        M = np.zeros((indices.size, ncols))
        M[np.arange(indices.size), indices] = 1.0
        return cls(M)

    @property
    def shape(self):
        return self.matrix.shape

    def defects(self):
        """Row indices that do not hold exactly one unit entry."""
        M = self.matrix
        ones = M == 1.0
        zeros = M == 0.0
        ok = (ones.sum(axis=1) == 1) & ((ones | zeros).all(axis=1))
        return [int(r) for r in np.flatnonzero(~ok)]

    def is_valid(self):
        return not self.defects()

    @property
    def indices(self):
        if not self.is_valid():
            raise StructureError("selector rows must each hold exactly one unit entry")
        return np.argmax(self.matrix, axis=1)

    def __repr__(self):
        return f"SelectorMatrix(shape={self.shape})"


@dataclass(frozen=True)
class StackedCoupling:
    """Stacked ``A`` and ``B`` with block bookkeeping.

    ``blocks[(i, e)]`` is the row slice of that incidence (shared by ``A``,
    ``B``, ``z`` and ``y``); ``agent_cols[i]`` and ``edge_cols[e]`` are the
    column slices of agent ``i`` in ``x`` and of overlap ``e`` in ``xbar``.
    """

    A: np.ndarray
    B: np.ndarray
    blocks: dict
    agent_cols: dict
    edge_cols: dict
    order: tuple

    @property
    def n_rows(self):
        return self.A.shape[0]

    @property
    def n_x(self):
        return self.A.shape[1]

    @property
    def n_xbar(self):
        return self.B.shape[1]

    def agent_rows(self, agent):
        """Row indices of all incidences of ``agent`` (canonical order)."""
        parts = [np.arange(s.start, s.stop) for (i, _), s in self.blocks.items() if i == agent]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=int)

    def agent_block(self, agent):
        """``A`` restricted to the agent's rows and columns."""
        rows = self.agent_rows(agent)
        return self.A[np.ix_(rows, np.arange(self.agent_cols[agent].start, self.agent_cols[agent].stop))]

    def BtB(self):
        return self.B.T @ self.B


def assemble_coupling(bip: BipartiteStructure, selectors: dict, dims: dict) -> StackedCoupling:
    """Stack selectors into ``A`` and overlap placements into ``B``.

    Row blocks read ``D_ie x_i - xbar_e + z_ie = 0``. ``dims`` maps agent id
    to the dimension of its variable.
    """
    agent_cols = {}
    off = 0
    for i in bip.agent_nodes:
        if i not in dims:
            raise StructureError(f"missing dimension for agent {i!r}")
        agent_cols[i] = slice(off, off + int(dims[i]))
        off += int(dims[i])
    n_x = off

    edge_dim = {}
    for ie in bip.bipartite_edges:
        if ie not in selectors:
            raise StructureError(f"missing selector for incidence {ie!r}")
        S = selectors[ie]
        i, e = ie
        if S.shape[1] != dims[i]:
            raise StructureError(
                f"selector {ie!r} has {S.shape[1]} columns but agent {i!r} has dimension {dims[i]}"
            )
        if not S.is_valid():
            raise StructureError(f"selector {ie!r} has defective rows {S.defects()}")
        if e in edge_dim and edge_dim[e] != S.shape[0]:
            raise StructureError(f"selectors on overlap {e!r} disagree on its dimension")
        edge_dim[e] = S.shape[0]

    edge_cols = {}
    off = 0
    for e in bip.edge_nodes:
        edge_cols[e] = slice(off, off + edge_dim[e])
        off += edge_dim[e]
    n_xbar = off

    blocks = {}
    off = 0
    for ie in bip.bipartite_edges:
        blocks[ie] = slice(off, off + edge_dim[ie[1]])
        off += edge_dim[ie[1]]
    n_rows = off

    A = np.zeros((n_rows, n_x))
    B = np.zeros((n_rows, n_xbar))
    for ie, rows in blocks.items():
        i, e = ie
        A[rows, agent_cols[i]] = selectors[ie].matrix
        ec = edge_cols[e]
        B[rows, ec] = -np.eye(ec.stop - ec.start)

    if n_xbar and not np.array_equal(B.T @ B, 2.0 * np.eye(n_xbar)):
        raise StructureError("B^T B != 2I; every overlap must have exactly two incidences")
    return StackedCoupling(A, B, blocks, agent_cols, edge_cols, tuple(bip.bipartite_edges))


def _empty_map(x):
    return np.zeros(0)


@dataclass
class AgentSubproblem:
    """Smooth local problem ``min f(x) s.t. phi(x) <= 0, psi(x) = 0``.

    Hessian callbacks take ``(x, weights)`` for the constraint maps and
    return ``sum_c w_c hess(map_c)`` (dense). Missing Hessians switch the
    local solver to a quasi-Newton model.
    """

    n: int
    f: Callable
    grad_f: Callable
    hess_f: Optional[Callable] = None
    phi: Callable = _empty_map
    jac_phi: Optional[Callable] = None
    hess_phi: Optional[Callable] = None
    psi: Callable = _empty_map
    jac_psi: Optional[Callable] = None
    hess_psi: Optional[Callable] = None
    interior_point: Optional[np.ndarray] = None
    f_lower: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        if self.jac_phi is None:
            self.jac_phi = lambda x: np.zeros((0, self.n))
        if self.jac_psi is None:
            self.jac_psi = lambda x: np.zeros((0, self.n))

    @property
    def has_hessians(self):
        return self.hess_f is not None and self.hess_phi is not None and self.hess_psi is not None

    def n_ineq(self, x=None):
        x = self.interior_point if x is None else x
        if x is None:
            x = np.zeros(self.n)
        return np.atleast_1d(self.phi(x)).size


@dataclass
class DistributedProblem:
    """Agents, digraph, and per-incidence selectors.

    ``initial_point`` maps agent id to a strictly interior starting point;
    when absent the agent's ``interior_point`` is used. ``g_oracle`` is a
    hook for a nonzero separable convex ``g``; ``None`` means ``g = 0`` on
    the whole space.
    """

    digraph: Digraph
    agents: dict
    selectors: dict
    initial_point: Optional[dict] = None
    g_oracle: Optional[Callable] = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    @cached_property
    def bipartite(self):
        return build_bipartite(self.digraph)

    @cached_property
    def coupling(self):
        dims = {i: a.n for i, a in self.agents.items()}
        return assemble_coupling(self.bipartite, self.selectors, dims)

    @property
    def agent_ids(self):
        return self.bipartite.agent_nodes

    def x0(self):
        """Stacked starting point."""
        c = self.coupling
        x = np.zeros(c.n_x)
        for i in self.agent_ids:
            xi = None
            if self.initial_point is not None:
                xi = self.initial_point.get(i)
            if xi is None:
                xi = self.agents[i].interior_point
            if xi is None:
                raise StructureError(f"agent {i!r} has no starting point")
            x[c.agent_cols[i]] = xi
        return x

    def f_lower(self):
        vals = [a.f_lower for a in self.agents.values()]
        return None if any(v is None for v in vals) else float(sum(vals))


def validate_problem(p: DistributedProblem) -> list:
    """Check structural declarations; returns human-readable diagnostics.

    Pure check: nothing is mutated and nothing is raised.
    """
    diags = []
    try:
        bip = build_bipartite(p.digraph)
    except StructureError as exc:
        return [f"digraph: {exc}"]
    for i in bip.agent_nodes:
        if i not in p.agents:
            diags.append(f"agent {i!r}: no subproblem declared")
    for i, agent in p.agents.items():
        if agent.f_lower is None:
            diags.append(f"agent {i!r}: no lower bound declared for the objective")
        x = agent.interior_point
        n_phi = 0
        if x is not None:
            try:
                phi = np.atleast_1d(agent.phi(np.asarray(x, dtype=float)))
            except Exception as exc:  # user callback
                diags.append(f"agent {i!r}: inequality map failed at the interior point: {exc}")
                continue
            n_phi = phi.size
            if n_phi and not np.all(phi < 0):
                diags.append(
                    f"agent {i!r}: declared interior point is not strictly feasible "
                    f"(max phi = {phi.max():.3g})"
                )
        else:
            try:
                n_phi = np.atleast_1d(agent.phi(np.zeros(agent.n))).size
            except Exception:
                n_phi = 1
            if n_phi:
                diags.append(f"agent {i!r}: inequalities without a declared interior point")
    for ie in bip.bipartite_edges:
        S = p.selectors.get(ie)
        if S is None:
            diags.append(f"incidence {ie!r}: no selector")
            continue
        bad = S.defects()
        if bad:
            diags.append(f"incidence {ie!r}: selector rows {bad} do not hold exactly one unit entry")
        agent = p.agents.get(ie[0])
        if agent is not None and S.shape[1] != agent.n:
            diags.append(
                f"incidence {ie!r}: selector has {S.shape[1]} columns, agent dimension is {agent.n}"
            )
    for e in bip.edge_nodes:
        rows = {p.selectors[ie].shape[0] for ie in bip.edge_members(e) if ie in p.selectors}
        if len(rows) > 1:
            diags.append(f"overlap {e!r}: incident selectors disagree on dimension {sorted(rows)}")
    return diags
