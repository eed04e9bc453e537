"""ELL, ELLA and ELLADA: two-layer augmented Lagrangian drivers.

The outer layer updates ``lam`` and ``beta`` (method of multipliers on the
slack ``z``); the inner layer runs ADMM sweeps over ``(x, xbar, z, y)``.
ELL solves every x-update tightly, ELLA uses tolerances tied to the inner
residuals and a decreasing barrier, and ELLADA adds Anderson acceleration
of ``w = (xbar, z)``.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import anderson as aa
from .coordinator import (
    IterateState,
    OuterState,
    augmented_lagrangian,
    check_stationarity,
    g_oracle,
    inner_residuals,
    outer_update,
)
from .errors import SolverError
from .graph import DistributedProblem
from .runtime import ExecutionMode, Fabric

VARIANTS = ("ell", "ella", "ellada")


def pi_default(t):
    return t / 1e3


@dataclass(frozen=True)
class ToleranceSchedule:
    """Per-round tolerances and the final certificate.

    ``eps_outer(k)`` returns ``(eps1, eps2, eps3, eps4, eps5)`` for round
    ``k >= 1``; ``eps4``/``eps5`` are ``None`` when the x-update uses the
    fixed ``nlp_fixed`` tolerances instead.
    """

    eps_outer: Callable
    eps_final: tuple
    pi: Callable = pi_default
    inner_rule: str = "quadratic"  # or "linear"
    inner_coeff: float = 40.0
    nlp_fixed: Optional[tuple] = None

    def inner_eps4(self, eps4_k, eps1_kr):
        if self.inner_rule == "quadratic":
            return max(eps4_k, self.inner_coeff * eps1_kr ** 2)
        if self.inner_rule == "linear":
            return max(eps4_k, self.inner_coeff * eps1_kr)
        raise ValueError(f"unknown inner tolerance rule {self.inner_rule!r}")


@dataclass(frozen=True)
class BarrierSchedule:
    """``b^1 = b1``; ``b^{k+1} = min(b_max, max(b_min, coeff * (eps3^k)^2))``."""

    b1: float = 0.1
    b_min: float = 1e-4
    b_max: float = 0.1
    coeff: float = 25.0
    fixed: Optional[float] = None

    def first(self):
        return self.fixed if self.fixed is not None else self.b1

    def next(self, eps3_k):
        if self.fixed is not None:
            return self.fixed
        return min(self.b_max, max(self.b_min, self.coeff * eps3_k ** 2))


def default_schedules(variant: str, fair_finals: bool = False):
    """Benchmark defaults. ``fair_finals`` gives ELLA/ELLADA the ELL finals."""
    variant = variant.lower()
    if variant == "ell":
        tol = ToleranceSchedule(
            eps_outer=lambda k: (1e-2 / 2 ** (k - 1), 1e-2 / 2 ** (k - 1), 1e-1 / 2 ** (k - 1), None, None),
            eps_final=(1e-4, 1e-4, 1e-3, None, None, None),
            nlp_fixed=(1e-7, 1e-9),
        )
        return tol, BarrierSchedule(fixed=1e-8)
    if variant in ("ella", "ellada"):
        def outer(k):
            e = 100.0 / 2 ** (k - 1)
            return (e, e, e / 1e3, e, pi_default(e))

        final = (1e-4, 1e-4, 1e-3, 1.0, pi_default(1.0), 1e-4) if fair_finals else (
            1.0, 1.0, 1e-3, 1.0, pi_default(1.0), 1e-4)
        return ToleranceSchedule(eps_outer=outer, eps_final=final), BarrierSchedule()
    raise ValueError(f"unknown variant {variant!r}")


@dataclass
class SolverConfig:
    variant: str = "ellada"
    beta1: float = 1.0
    lam_bound: float = 10.0
    omega: float = 0.75
    gamma: float = 2.0
    max_outer: int = 100
    max_inner: int = 2000
    nlp_max_iter: int = 200
    mode: str = "sync"
    seed: int = 0
    fair_finals: bool = False
    inner_rule: str = "quadratic"
    accel: aa.AndersonParams = field(default_factory=aa.AndersonParams)
    schedule: Optional[ToleranceSchedule] = None
    barrier: Optional[BarrierSchedule] = None
    transport: str = "inprocess"
    check_conditioning: bool = True

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if not self.beta1 > 0:
            raise ValueError("initial penalty must be positive")
        if not 0 <= self.omega < 1:
            raise ValueError("omega must lie in [0, 1)")
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")
        ExecutionMode.parse(self.mode)

    def schedules(self):
        tol, bar = default_schedules(self.variant, self.fair_finals)
        if self.inner_rule != tol.inner_rule:
            tol = ToleranceSchedule(tol.eps_outer, tol.eps_final, tol.pi, self.inner_rule, tol.inner_coeff,
                                    tol.nlp_fixed)
        return self.schedule or tol, self.barrier or bar


CSV_COLUMNS = ("k", "r", "L_b", "eps1", "eps2", "eps3", "eps4", "eps5", "beta", "rho", "b", "accel_accepted",
               "nlp_iters")


@dataclass
class InnerRecord:
    k: int
    r: int
    L_b: float
    eps1: float
    eps2: float
    eps3: float
    eps4: float
    eps5: float
    beta: float
    rho: float
    b: float
    accel_accepted: bool
    nlp_iters: int
    wall_time: float
    dual_identity: float = 0.0
    link_residual: float = 0.0
    lower_bound: float = float("nan")
    stale: bool = False
    H_inv_norm: float = float("nan")


@dataclass
class OuterRecord:
    k: int
    inner_iterations: int
    L_b_initial: float
    z_norm: float
    lam_min: float
    lam_max: float
    beta: float
    b: float
    amplified: bool
    verdict: bool
    failed_checks: tuple
    L_tilde_0: float = float("nan")
    accepted_increase: float = 0.0
    accepted: int = 0
    L_b_max: float = float("nan")


@dataclass
class IterationLog:
    inner: list = field(default_factory=list)
    outer: list = field(default_factory=list)

    def append_inner(self, rec: InnerRecord):
        if self.inner:
            last = self.inner[-1]
            if (rec.k, rec.r) <= (last.k, last.r):
                raise ValueError("log records must be appended in (k, r) order")
        self.inner.append(rec)

    def by_round(self):
        out = {}
        for rec in self.inner:
            out.setdefault(rec.k, []).append(rec)
        return out

    def write_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for rec in self.inner:
                d = asdict(rec)
                row = []
                for c in CSV_COLUMNS:
                    v = d[c]
                    if isinstance(v, bool):
                        row.append(int(v))
                    elif isinstance(v, float):
                        row.append(repr(v))
                    else:
                        row.append(v)
                w.writerow(row)
        return path


@dataclass
class SolveResult:
    variant: str
    success: bool
    status: str
    state: IterateState
    outer: OuterState
    x_local: dict
    log: IterationLog
    outer_rounds: int
    inner_total: int
    nlp_total: int
    wall_time: float
    verdict: object
    soft_failures: int = 0

    def summary(self):
        v = self.verdict
        return {
            "variant": self.variant,
            "success": self.success,
            "status": self.status,
            "outer_rounds": self.outer_rounds,
            "inner_iterations": self.inner_total,
            "nlp_iterations": self.nlp_total,
            "wall_time": self.wall_time,
            "d1": v.d1 if v else None,
            "d2": v.d2 if v else None,
            "d3": v.d3 if v else None,
            "d4": v.d4 if v else None,
            "d5": v.d5 if v else None,
            "d6": v.d6 if v else None,
            "beta": self.outer.beta,
            "z_norm": float(np.linalg.norm(self.state.z)),
            "soft_nlp_failures": self.soft_failures,
        }


def _initial_state(problem: DistributedProblem, outer: OuterState):
    c = problem.coupling
    x = problem.x0()
    Ax = c.A @ x
    xbar = g_oracle(c.B, Ax)
    z = -(Ax + c.B @ xbar)
    y = -outer.lam - outer.beta * z
    return IterateState(x, xbar, z, y)


def _x_local(problem):
    x = problem.x0()
    return {i: x[problem.coupling.agent_cols[i]].copy() for i in problem.agent_ids}


def _barrier_total(problem, x_local, b):
    tot = 0.0
    for i, xi in x_local.items():
        phi = np.atleast_1d(problem.agents[i].phi(xi))
        if phi.size:
            if not np.all(phi < 0):
                return float("inf")
            tot -= b * float(np.sum(np.log(-phi)))
    return tot


def _f_total(problem, x_local):
    return float(sum(problem.agents[i].f(xi) for i, xi in x_local.items()))


def _lower_bound(problem, outer, b):
    fl = problem.f_lower()
    if fl is None:
        return float("-inf")
    span = problem.meta.get("phi_range")
    bar = 0.0
    if span is not None:
        n_phi = sum(np.atleast_1d(a.phi(a.interior_point)).size for a in problem.agents.values())
        bar = -b * n_phi * math.log(span)
    return fl + bar - float(outer.lam @ outer.lam) / (2.0 * outer.beta)


def run(problem: DistributedProblem, config: SolverConfig) -> SolveResult:
    """Run the configured variant to a certified point or a cap."""
    variant = config.variant
    tol, bar = config.schedules()
    mode = ExecutionMode.parse(config.mode)
    if variant == "ellada" and not mode.synchronous:
        raise ValueError("acceleration needs synchronous rounds")
    transport = None
    if config.transport == "loopback":
        from .runtime import LoopbackTransport

        transport = LoopbackTransport()
    fabric = Fabric(problem, mode, seed=config.seed, transport=transport, nlp_max_iter=config.nlp_max_iter)
    c = problem.coupling
    A, B = c.A, c.B
    n_xbar = c.n_xbar
    N_w = n_xbar + c.n_rows
    log_bound = aa.log_conditioning_bound(config.accel.M, config.accel.eta_theta, config.accel.eta_w, N_w)
    outer = OuterState.initial(c.n_rows, config.beta1, config.lam_bound, b=bar.first(), gamma=config.gamma,
                               omega=config.omega)
    state = _initial_state(problem, outer)
    x_local = _x_local(problem)
    log = IterationLog()
    t_start = time.perf_counter()
    inner_total = nlp_total = soft_total = 0
    eps1_last = None
    verdict = None
    status = "outer_cap"
    success = False
    accelerate = variant == "ellada"

    def lagrangian(st, xl, out, b):
        return augmented_lagrangian(A, B, st, out, _f_total(problem, xl), _barrier_total(problem, xl, b))

    try:
        for k in range(1, config.max_outer + 1):
            b = outer.b
            e1k, e2k, e3k, e4k, e5k = tol.eps_outer(k)
            # warm start
            state = IterateState(state.x, state.x_bar, state.z, -outer.lam - outer.beta * state.z)
            L_init = lagrangian(state, x_local, outer, b)
            if tol.nlp_fixed is not None:
                nlp_tol = tol.nlp_fixed
            else:
                e4 = e4k if eps1_last is None else tol.inner_eps4(e4k, eps1_last)
                nlp_tol = (e4, tol.pi(e4))
            st_acc = aa.AndersonState(N_w) if accelerate else None
            w_hist_prev = None  # w^{k,r-1}
            plain_prev = None  # h0(w^{k,r-1})
            w_trial = None  # candidate from the previous proposal (not accepted)
            prev = state
            r = 0
            L_max = L_init
            round_records = []
            while True:
                if r >= config.max_inner:
                    status = "inner_cap"
                    raise _Stop()
                w_cur = np.concatenate([state.x_bar, state.z])
                sw = fabric.sweep(state, outer, b, nlp_tol[0], nlp_tol[1], x_local)
                nxt = sw.state
                nlp_iters = sw.nlp_iterations
                soft_total += sw.soft_failures
                accepted = False
                if accelerate:
                    w_plain = np.concatenate([nxt.x_bar, nxt.z])
                    if r == 0:
                        st_acc.L_tilde_0 = aa.record_scale(state.x_bar, state.z, nxt.x_bar, nxt.z, outer.beta, B)
                    else:
                        if w_trial is None:
                            # last candidate was accepted, so the trial run equals the plain one
                            w_t, h0_t = w_cur, w_plain
                        else:
                            w_t = w_trial
                            t_state = IterateState(state.x, w_t[:n_xbar], w_t[n_xbar:],
                                                   -outer.lam - outer.beta * w_t[n_xbar:])
                            tsw = fabric.sweep(t_state, outer, b, nlp_tol[0], nlp_tol[1], x_local, tag="trial")
                            nlp_iters += tsw.nlp_iterations
                            h0_t = np.concatenate([tsw.state.x_bar, tsw.state.z])
                        dw = w_t - w_hist_prev
                        dh = (w_t - h0_t) - (w_hist_prev - plain_prev)
                        aa.push_secant(st_acc, dw, dh, config.accel)
                        cand = aa.propose(st_acc, w_cur, w_plain)
                        if config.accel.reference == "plain":
                            ref, Ax_ref = w_plain, A @ nxt.x
                        else:
                            ref, Ax_ref = w_cur, A @ state.x
                        dec = aa.safeguard(st_acc, ref, w_cur, cand, Ax_ref, outer.lam, outer.beta,
                                           outer.rho, B, n_xbar, config.accel)
                        if dec.accepted:
                            accepted = True
                            nxt = IterateState(nxt.x, cand[:n_xbar].copy(), cand[n_xbar:].copy(),
                                               -outer.lam - outer.beta * cand[n_xbar:])
                            w_trial = None
                        else:
                            w_trial = cand
                    w_hist_prev = w_cur
                    plain_prev = w_plain
                x_local = sw.x_local
                ir = inner_residuals(A, B, state, nxt, outer.rho)
                res = (ir.eps1, ir.eps2, ir.eps3)
                nxt.aug_lagrangian = lagrangian(nxt, x_local, outer, b)
                L_max = max(L_max, nxt.aug_lagrangian)
                r += 1
                inner_total += 1
                nlp_total += nlp_iters
                Hn = float(np.linalg.norm(st_acc.H_inv, 2)) if (accelerate and config.check_conditioning) else float("nan")
                if accelerate and config.check_conditioning and Hn > 0 and math.log(Hn) > log_bound:
                    raise SolverError("inverse Jacobian estimate exceeded its conditioning bound")
                rec = InnerRecord(
                    k=k, r=r, L_b=nxt.aug_lagrangian, eps1=res[0], eps2=res[1], eps3=res[2],
                    eps4=nlp_tol[0], eps5=nlp_tol[1], beta=outer.beta, rho=outer.rho, b=b,
                    accel_accepted=accepted, nlp_iters=nlp_iters, wall_time=time.perf_counter() - t_start,
                    dual_identity=float(np.linalg.norm(outer.lam + outer.beta * nxt.z + nxt.y)),
                    link_residual=float(np.linalg.norm(A @ nxt.x + B @ nxt.x_bar + nxt.z
                                                       + outer.beta / outer.rho * (nxt.z - state.z))),
                    lower_bound=_lower_bound(problem, outer, b), stale=sw.stale, H_inv_norm=Hn,
                )
                log.append_inner(rec)
                round_records.append(rec)
                d4_last = sw.d4
                d5_last = sw.d5
                prev, state = state, nxt
                eps1_last = res[0]
                # tolerance for the next x-update
                ok_inner = res[0] <= e1k and res[1] <= e2k and res[2] <= e3k
                if tol.nlp_fixed is None:
                    ok_inner = ok_inner and nlp_tol[0] <= e4k and nlp_tol[1] <= e5k
                    e4 = tol.inner_eps4(e4k, res[0])
                    nlp_tol = (e4, tol.pi(e4))
                if ok_inner and sw.stale:
                    fabric.force_fresh = True
                    ok_inner = False
                if ok_inner:
                    break
            verdict = check_stationarity(A, B, prev, state, outer, d4_last, d5_last, tol.eps_final[:5],
                                         b=b if tol.eps_final[5] is not None else None)
            final_ok = verdict.ok
            if tol.eps_final[5] is not None:
                final_ok = final_ok and b <= tol.eps_final[5]
            if tol.nlp_fixed is None:
                final_ok = final_ok and e4k <= tol.eps_final[3] and e5k <= tol.eps_final[4]
            new_outer = outer_update(outer, state.z)
            log.outer.append(OuterRecord(
                k=k, inner_iterations=r, L_b_initial=L_init, z_norm=float(np.linalg.norm(state.z)),
                lam_min=float(outer.lam.min(initial=0.0)), lam_max=float(outer.lam.max(initial=0.0)),
                beta=outer.beta, b=b, amplified=new_outer.amplified if not final_ok else False,
                verdict=bool(final_ok), failed_checks=verdict.failed,
                L_tilde_0=st_acc.L_tilde_0 if st_acc else float("nan"),
                accepted_increase=st_acc.accepted_increase if st_acc else 0.0,
                accepted=st_acc.R_plus if st_acc else 0, L_b_max=L_max,
            ))
            if final_ok:
                status = "converged"
                success = True
                break
            new_outer.b = bar.next(e3k)
            outer = new_outer
            fabric.reset_history()
    except _Stop:
        pass
    finally:
        fabric.transport.close()
    return SolveResult(
        variant=variant, success=success, status=status, state=state, outer=outer, x_local=x_local, log=log,
        outer_rounds=len(log.outer) if success else len(log.by_round()), inner_total=inner_total,
        nlp_total=nlp_total, wall_time=time.perf_counter() - t_start, verdict=verdict, soft_failures=soft_total,
    )


class _Stop(Exception):
    pass


def _with_variant(config, variant):
    if config is None:
        return SolverConfig(variant=variant)
    if config.variant != variant:
        cfg = SolverConfig(**{**config.__dict__, "variant": variant})
        return cfg
    return config


def run_ell(problem, config: Optional[SolverConfig] = None) -> SolveResult:
    return run(problem, _with_variant(config, "ell"))


def run_ella(problem, config: Optional[SolverConfig] = None) -> SolveResult:
    return run(problem, _with_variant(config, "ella"))


def run_ellada(problem, config: Optional[SolverConfig] = None) -> SolveResult:
    return run(problem, _with_variant(config, "ellada"))
