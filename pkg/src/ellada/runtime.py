"""Coordinator/agent execution fabric.

Agents only ever see edge-local offsets ``-xbar_e + z_ie + y_ie/rho`` and
return ``D_ie xi_i`` per incident edge. The coordinator owns
``(xbar, z, y)`` and applies the closed-form updates block by block.

Asynchrony is simulated as bounded staleness: in each round every agent
may be handed the offsets of one of the last ``S`` rounds (seeded draw).
"""

from __future__ import annotations

import json
import socket
import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .coordinator import IterateState, InnerResiduals, OuterState, g_oracle, inner_residuals, y_update, z_update
from .errors import SolverError
from .nlp import BarrierObjective, solve_equality_nlp, solve_with_continuation


@dataclass(frozen=True)
class ExecutionMode:
    kind: str = "sync"
    S: int = 0

    def __post_init__(self):
        if self.kind not in ("sync", "async"):
            raise ValueError(f"unknown execution mode {self.kind!r}")
        if self.S < 0:
            raise ValueError("staleness bound must be nonnegative")
        if self.kind == "sync" and self.S != 0:
            raise ValueError("synchronous mode has zero staleness")

    @classmethod
    def parse(cls, text: str) -> "ExecutionMode":
        text = text.strip().lower()
        if text in ("sync", "async:0"):
            return cls("sync", 0)
        if text.startswith("async:"):
            try:
                S = int(text.split(":", 1)[1])
            except ValueError:
                raise ValueError(f"bad staleness in mode {text!r}") from None
            return cls("async", S) if S > 0 else cls("sync", 0)
        raise ValueError(f"mode must be 'sync' or 'async:S', got {text!r}")

    @property
    def synchronous(self):
        return self.S == 0

    def __str__(self):
        return "sync" if self.synchronous else f"async:{self.S}"


@dataclass
class AgentMessage:
    """Wire message. ``edges`` maps overlap id to a float vector."""

    direction: str  # "to" | "from"
    agent: object
    edges: dict
    scalars: dict = field(default_factory=dict)
    tag: str = "plain"
    status: str = ""

    def __post_init__(self):
        if self.direction not in ("to", "from"):
            raise ValueError("direction must be 'to' or 'from'")


def agent_offsets(coupling, agent, xbar, z, y, rho):
    """Per-edge offsets for one agent, computed from coordinator state."""
    out = {}
    for (i, e), rows in coupling.blocks.items():
        if i != agent:
            continue
        out[e] = -xbar[coupling.edge_cols[e]] + z[rows] + y[rows] / rho
    return out


def make_to_agent(coupling, agent, state: IterateState, rho, b, eps4, eps5, tag="plain", b_start=0.0):
    edges = agent_offsets(coupling, agent, state.x_bar, state.z, state.y, rho)
    return AgentMessage("to", agent, edges, {"rho": float(rho), "b": float(b), "eps4": float(eps4),
                                             "eps5": float(eps5), "b_start": float(b_start)}, tag)


def selector_indices(problem, agent):
    """Edge id -> column indices of ``D_ie`` inside the agent's variable."""
    return {e: problem.selectors[(i, e)].indices for (i, e) in problem.bipartite.incident(agent)}


def agent_step(agent, selectors: dict, msg: AgentMessage, x_local, max_iter=200):
    """Solve the agent's block of the x-update.

    ``selectors`` maps edge id to the column indices picked by ``D_ie``.
    Returns ``(reply, x_new)``; ``x_new`` stays with the agent.
    """
    if msg.direction != "to":
        raise ValueError("agent_step expects a to-agent message")
    if set(msg.edges) != set(selectors):
        raise ValueError("message edges differ from the agent's incident edges")
    order = sorted(selectors)
    n = agent.n
    if order:
        idx = np.concatenate([np.asarray(selectors[e]) for e in order])
        v = np.concatenate([msg.edges[e] for e in order])
    else:
        idx = np.zeros(0, dtype=int)
        v = np.zeros(0)
    D = np.zeros((idx.size, n))
    D[np.arange(idx.size), idx] = 1.0
    s = msg.scalars
    obj = BarrierObjective(agent, s["b"], s["rho"], v, D)
    if s.get("b_start", 0.0) > s["b"]:
        res = solve_with_continuation(x_local, obj, s["eps4"], s["eps5"], max_iter=max_iter, b_start=s["b_start"])
    else:
        res = solve_equality_nlp(x_local, obj, s["eps4"], s["eps5"], max_iter=max_iter)
    x_new = res.x
    blocks = {e: x_new[np.asarray(selectors[e])] for e in order}
    scalars = {
        "d4": res.d4_norm,
        "d5": res.d5_norm,
        "f": float(agent.f(x_new)),
        "barrier": obj.barrier(x_new) if obj.is_interior(x_new) else float("inf"),
        "chi0": res.objective_initial,
        "chi": res.objective_final,
        "iterations": float(res.iterations),
    }
    reply = AgentMessage("from", msg.agent, blocks, scalars, msg.tag, res.status)
    return reply, x_new


def coordinator_round(coupling, replies: dict, state: IterateState, outer: OuterState):
    """Blockwise ``xbar``, ``z``, ``y`` updates from the agents' replies.

    ``state.x`` is not touched (it lives with the agents); the returned
    state carries it unchanged. Equal bit for bit to :func:`stacked_round`.
    """
    rho, beta = outer.rho, outer.beta
    xbar = np.empty_like(state.x_bar)
    z = np.empty_like(state.z)
    y = np.empty_like(state.y)
    Dx = {}
    for (i, e), rows in coupling.blocks.items():
        Dx[(i, e)] = replies[i].edges[e]
    for e, cols in coupling.edge_cols.items():
        members = [ie for ie in coupling.order if ie[1] == e]
        v = [Dx[ie] + state.z[coupling.blocks[ie]] + state.y[coupling.blocks[ie]] / rho for ie in members]
        # -(B^T v)/2 with B blocks equal to -I
        acc = np.zeros(cols.stop - cols.start)
        for vi in v:
            acc = acc + (-1.0) * vi
        xbar[cols] = -acc / 2.0
    for ie, rows in coupling.blocks.items():
        r_part = Dx[ie] + (-1.0) * xbar[coupling.edge_cols[ie[1]]]
        z[rows] = z_update(r_part, state.y[rows], outer.lam[rows], rho, beta)
        y[rows] = y_update(state.y[rows], r_part + z[rows], rho)
    return IterateState(state.x, xbar, z, y)


def stacked_round(coupling, x, state: IterateState, outer: OuterState):
    """Monolithic coordinator update on stacked vectors."""
    A, B = coupling.A, coupling.B
    rho, beta = outer.rho, outer.beta
    Ax = A @ x
    xbar = g_oracle(B, Ax + state.z + state.y / rho, rho)
    r_part = Ax + B @ xbar
    z = z_update(r_part, state.y, outer.lam, rho, beta)
    y = y_update(state.y, r_part + z, rho)
    return IterateState(x, xbar, z, y)


# --- transport -----------------------------------------------------------

_LEN = struct.Struct("<I")


def _key(obj):
    return list(obj) if isinstance(obj, tuple) else obj


def _unkey(obj):
    return tuple(_unkey(o) for o in obj) if isinstance(obj, list) else obj


def encode_frame(msg: AgentMessage) -> bytes:
    """Length-prefixed frame: JSON header then little-endian f64 payload."""
    edges = sorted(msg.edges)
    scal = sorted(msg.scalars)
    header = {
        "direction": msg.direction,
        "agent": _key(msg.agent),
        "tag": msg.tag,
        "status": msg.status,
        "edges": [[_key(e), int(np.size(msg.edges[e]))] for e in edges],
        "scalars": scal,
    }
    hb = json.dumps(header, separators=(",", ":")).encode()
    parts = [np.asarray(msg.edges[e], dtype="<f8").ravel() for e in edges]
    parts.append(np.array([msg.scalars[k] for k in scal], dtype="<f8"))
    payload = np.concatenate(parts).tobytes() if parts else b""
    body = _LEN.pack(len(hb)) + hb + payload
    return _LEN.pack(len(body)) + body


def decode_frame(data: bytes) -> AgentMessage:
    (total,) = _LEN.unpack_from(data, 0)
    if len(data) != total + 4:
        raise ValueError("frame length mismatch")
    (hl,) = _LEN.unpack_from(data, 4)
    header = json.loads(data[8:8 + hl].decode())
    vals = np.frombuffer(data[8 + hl:], dtype="<f8").astype(float)
    edges = {}
    off = 0
    for key, size in header["edges"]:
        edges[_unkey(key)] = vals[off:off + size].copy()
        off += size
    scalars = {k: float(v) for k, v in zip(header["scalars"], vals[off:])}
    return AgentMessage(header["direction"], _unkey(header["agent"]), edges, scalars,
                        header["tag"], header["status"])


class InProcessTransport:
    def deliver(self, msg: AgentMessage) -> AgentMessage:
        return msg

    def close(self):
        pass


class LoopbackTransport:
    """Pushes every message through a connected socket pair as a frame."""

    def __init__(self):
        self._a, self._b = socket.socketpair()

    def _recv_exact(self, n):
        buf = bytearray()
        while len(buf) < n:
            chunk = self._b.recv(n - len(buf))
            if not chunk:
                raise ConnectionError("loopback closed")
            buf.extend(chunk)
        return bytes(buf)

    def deliver(self, msg: AgentMessage) -> AgentMessage:
        self._a.sendall(encode_frame(msg))
        head = self._recv_exact(4)
        (n,) = _LEN.unpack(head)
        return decode_frame(head + self._recv_exact(n))

    def close(self):
        self._a.close()
        self._b.close()


# --- fabric --------------------------------------------------------------

@dataclass
class SweepOutcome:
    state: IterateState
    x_local: dict
    replies: dict
    residuals: InnerResiduals
    stale: bool
    nlp_iterations: int
    d4: float
    d5: float
    f_value: float
    barrier_value: float
    soft_failures: int


class Fabric:
    """Runs one ADMM sweep: agent x-updates then the coordinator round."""

    def __init__(self, problem, mode: ExecutionMode = ExecutionMode(), seed=0, transport=None, nlp_max_iter=200,
                 b_start=0.0):
        self.problem = problem
        self.coupling = problem.coupling
        self.mode = mode
        self.rng = np.random.default_rng(seed)
        self.transport = transport or InProcessTransport()
        self.selectors = {i: selector_indices(problem, i) for i in problem.agent_ids}
        self.history = {i: deque(maxlen=mode.S + 1) for i in problem.agent_ids}
        self.nlp_max_iter = nlp_max_iter
        self.force_fresh = False
        self.b_start = b_start

    def reset_history(self):
        for h in self.history.values():
            h.clear()

    def stack_x(self, x_local):
        x = np.zeros(self.coupling.n_x)
        for i, cols in self.coupling.agent_cols.items():
            x[cols] = x_local[i]
        return x

    def sweep(self, state: IterateState, outer: OuterState, b, eps4, eps5, x_local: dict, tag="plain"):
        """One inner iteration from ``state``; ``x_local`` is the warm start."""
        c = self.coupling
        n_agents = len(self.problem.agent_ids)
        scale = 1.0 / np.sqrt(max(n_agents, 1))
        replies, x_new = {}, {}
        stale = False
        use_history = tag == "plain" and not self.mode.synchronous
        for i in self.problem.agent_ids:
            msg = make_to_agent(c, i, state, outer.rho, b, eps4 * scale, eps5 * scale, tag, self.b_start)
            if use_history:
                self.history[i].append(msg)
                s = 0 if self.force_fresh else int(self.rng.integers(0, self.mode.S + 1))
                s = min(s, len(self.history[i]) - 1)
                if s:
                    stale = True
                msg = self.history[i][-1 - s]
            msg = self.transport.deliver(msg)
            reply, xi = agent_step(self.problem.agents[i], self.selectors[i], msg, x_local[i],
                                   self.nlp_max_iter)
            replies[i] = self.transport.deliver(reply)
            x_new[i] = xi
        self.force_fresh = False
        soft = 0
        for i, rep in replies.items():
            if rep.status == "descent_violated":
                soft += 1
            elif rep.status != "converged":
                raise SolverError(f"agent {i!r} local solve failed ({rep.status})")
        nxt = coordinator_round(c, replies, state, outer)
        nxt.x = self.stack_x(x_new)
        res = inner_residuals(c.A, c.B, state, nxt, outer.rho)
        sc = [r.scalars for r in replies.values()]
        return SweepOutcome(
            state=nxt,
            x_local=x_new,
            replies=replies,
            residuals=res,
            stale=stale,
            nlp_iterations=int(sum(s["iterations"] for s in sc)),
            d4=float(np.sqrt(sum(s["d4"] ** 2 for s in sc))),
            d5=float(np.sqrt(sum(s["d5"] ** 2 for s in sc))),
            f_value=float(sum(s["f"] for s in sc)),
            barrier_value=float(sum(s["barrier"] for s in sc)),
            soft_failures=soft,
        )
