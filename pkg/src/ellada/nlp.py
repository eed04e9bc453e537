"""Equality-constrained NLP subroutine used for agent x-updates.

``solve_equality_nlp`` approximately minimizes a smooth objective subject to
``psi(x) = 0`` from a strictly interior starting point, stopping as soon as
the stationarity residual is below ``eps4`` and the equality residual below
``eps5``. Inequalities never reach the solver directly; they enter through
the log-barrier inside :class:`BarrierObjective`.

The method is a damped Newton iteration on the KKT system with
inertia-free curvature regularization, a fraction-to-boundary step cap, and
backtracking on an l1 merit function.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import DomainError
from .graph import AgentSubproblem

FRACTION_TO_BOUNDARY = 0.995
ARMIJO = 1e-4
EPS = float(np.finfo(float).eps)


class BarrierObjective:
    """``f(x) - b sum(log(-phi(x))) + (rho/2) ||D x + v||^2``.

    ``D`` stacks the agent's coupling selectors; identity when omitted.
    """

    def __init__(self, agent: AgentSubproblem, b, rho, v, D=None):
        if not b > 0:
            raise ValueError("barrier parameter must be positive")
        if not rho > 0:
            raise ValueError("penalty must be positive")
        self.agent = agent
        self.b = float(b)
        self.rho = float(rho)
        if D is None:
            D = np.eye(agent.n)
        self.D = np.asarray(D, dtype=float)
        self.v = np.asarray(v, dtype=float).ravel()
        if self.D.shape != (self.v.size, agent.n):
            raise ValueError(
                f"offset has {self.v.size} entries but coupling rows are {self.D.shape}"
            )
        self._DtD = self.D.T @ self.D
        self._Dtv = self.D.T @ self.v

    def _phi(self, x):
        phi = np.atleast_1d(np.asarray(self.agent.phi(x), dtype=float))
        if phi.size and not np.all(phi < 0):
            raise DomainError("point is not strictly inside the inequality constraints")
        return phi

    def is_interior(self, x):
        phi = np.atleast_1d(np.asarray(self.agent.phi(x), dtype=float))
        return bool(np.all(phi < 0)) and bool(np.all(np.isfinite(phi)))

    def barrier(self, x):
        phi = self._phi(x)
        return -self.b * float(np.sum(np.log(-phi)))

    def proximal(self, x):
        r = self.D @ x + self.v
        return 0.5 * self.rho * float(r @ r)

    def value(self, x):
        return float(self.agent.f(x)) + self.barrier(x) + self.proximal(x)

    def gradient(self, x):
        phi = self._phi(x)
        g = np.array(self.agent.grad_f(x), dtype=float)
        if phi.size:
            g -= self.b * (self.agent.jac_phi(x).T @ (1.0 / phi))
        g += self.rho * (self._DtD @ x + self._Dtv)
        return g

    def multipliers(self, x):
        """Barrier-implied inequality multipliers ``mu = -b / phi``."""
        phi = self._phi(x)
        return -self.b / phi

    def hessian(self, x):
        a = self.agent
        phi = self._phi(x)
        H = np.array(a.hess_f(x), dtype=float)
        if phi.size:
            Jp = a.jac_phi(x)
            H += Jp.T @ ((self.b / phi**2)[:, None] * Jp)
            H += a.hess_phi(x, -self.b / phi)
        H += self.rho * self._DtD
        return H


def build_objective(agent, b, rho, v, D=None):
    return BarrierObjective(agent, b, rho, v, D)


@dataclass
class EqualityMap:
    fun: Callable
    jac: Callable
    hess: Optional[Callable] = None  # (x, weights) -> sum_c w_c hess(psi_c)

    @classmethod
    def of(cls, agent: AgentSubproblem):
        return cls(agent.psi, agent.jac_psi, agent.hess_psi)


@dataclass
class NlpResult:
    x: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    d4_norm: float
    d5_norm: float
    objective_initial: float
    objective_final: float
    iterations: int
    success: bool
    status: str
    message: str = ""


def _lsq_multipliers(J, g):
    if J.shape[0] == 0:
        return np.zeros(0)
    nu, *_ = np.linalg.lstsq(J.T, -g, rcond=None)
    return nu


def _solve_kkt(W, J, g, c, curvature_tol=1e-10):
    """Regularized Newton-KKT solve; returns ``(d, nu_plus, tau)``."""
    n = W.shape[0]
    m = J.shape[0]
    tau = 0.0
    delta = 0.0
    while True:
        K = np.zeros((n + m, n + m))
        K[:n, :n] = W
        K[np.arange(n), np.arange(n)] += tau
        K[:n, n:] = J.T
        K[n:, :n] = J
        if delta:
            K[n + np.arange(m), n + np.arange(m)] = -delta
        rhs = np.concatenate([-g, -c])
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
                sol = scipy.linalg.solve(K, rhs, assume_a="sym", check_finite=False)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
            if m and delta == 0.0:
                delta = 1e-10
                continue
            tau = 1e-8 if tau == 0.0 else 10.0 * tau
            if tau > 1e14:
                raise np.linalg.LinAlgError("KKT system could not be regularized")
            continue
        d = sol[:n]
        dd = float(d @ d)
        if float(d @ (W @ d)) + tau * dd >= curvature_tol * dd or dd == 0.0:
            return d, sol[n:], tau
        tau = 1e-8 if tau == 0.0 else 10.0 * tau
        if tau > 1e14:
            raise np.linalg.LinAlgError("KKT system could not be regularized")


def solve_equality_nlp(
    x0,
    obj: BarrierObjective,
    eps4,
    eps5,
    psi: Optional[EqualityMap] = None,
    max_iter=200,
) -> NlpResult:
    """Approximately solve ``min obj(x) s.t. psi(x) = 0`` from ``x0``.

    On success ``d4_norm <= eps4``, ``d5_norm <= eps5`` and the objective
    did not increase. Failures return the last iterate with ``success``
    false and a ``status`` of ``"max_iter"``, ``"line_search"``,
    ``"interior_lost"`` or ``"descent_violated"``.
    """
    if not (eps4 > 0 and eps5 > 0):
        raise ValueError("tolerances must be positive")
    if psi is None:
        psi = EqualityMap.of(obj.agent)
    x = np.array(x0, dtype=float)
    if not obj.is_interior(x):
        raise DomainError("starting point must be strictly interior")

    exact = obj.agent.hess_f is not None and obj.agent.hess_phi is not None and psi.hess is not None
    n = x.size

    def c_of(z):
        return np.atleast_1d(np.asarray(psi.fun(z), dtype=float))

    chi0 = obj.value(x)
    chi = chi0
    g = obj.gradient(x)
    c = c_of(x)
    J = np.asarray(psi.jac(x), dtype=float).reshape(c.size, n)
    nu = _lsq_multipliers(J, g)
    penalty = 0.0
    B_model = None if exact else np.eye(n) + obj.rho * obj._DtD

    status = "max_iter"
    it = 0
    for it in range(max_iter + 1):
        d4 = float(np.linalg.norm(g + J.T @ nu))
        d5 = float(np.linalg.norm(c))
        if d4 <= eps4 and d5 <= eps5:
            status = "converged"
            break
        if it == max_iter:
            break

        if exact:
            W = obj.hessian(x)
            if c.size:
                W = W + psi.hess(x, nu)
        else:
            W = B_model
        try:
            d, nu_plus, _ = _solve_kkt(W, J, g, c)
        except np.linalg.LinAlgError:
            status = "line_search"
            break

        penalty = max(penalty, 1.1 * float(np.max(np.abs(nu_plus), initial=0.0)) + 1e-6)
        c1 = float(np.sum(np.abs(c)))
        slope = float(g @ d) - penalty * c1
        if slope >= 0.0 and c1 > 0.0:
            penalty = 2.0 * float(g @ d) / c1 + 1.0
            slope = float(g @ d) - penalty * c1
        merit = chi + penalty * c1

        alpha = 1.0
        if obj.agent.jac_phi is not None:
            phi = np.atleast_1d(obj.agent.phi(x))
            if phi.size:
                dphi = obj.agent.jac_phi(x) @ d
                grow = dphi > 0
                if np.any(grow):
                    with np.errstate(over="ignore"):  # denormal dphi: no cap
                        alpha = min(1.0, FRACTION_TO_BOUNDARY * float(np.min(-phi[grow] / dphi[grow])))

        accepted = False
        soc_tried = False
        # predicted decrease below merit roundoff: judge the full step by the KKT residual
        if -slope <= 1e3 * EPS * (1.0 + abs(merit)) and alpha == 1.0:
            trial = x + d
            if obj.is_interior(trial):
                c_t = c_of(trial)
                g_t = obj.gradient(trial)
                J_t = np.asarray(psi.jac(trial), dtype=float).reshape(c_t.size, n)
                d4_t = float(np.linalg.norm(g_t + J_t.T @ _lsq_multipliers(J_t, g_t)))
                if d4_t <= 0.5 * d4 and float(np.linalg.norm(c_t)) <= max(d5, 0.1 * eps5):
                    chi_t = obj.value(trial)
                    accepted = True
                    alpha = 0.0  # skip the Armijo loop
        while not accepted and alpha > 1e-14:
            trial = x + alpha * d
            if obj.is_interior(trial):
                chi_t = obj.value(trial)
                c_t = c_of(trial)
                merit_t = chi_t + penalty * float(np.sum(np.abs(c_t)))
                if merit_t <= merit + ARMIJO * alpha * slope + 1e-15 * abs(merit):
                    accepted = True
                    break
                if alpha == 1.0 and not soc_tried and c.size:
                    soc_tried = True
                    corr, *_ = np.linalg.lstsq(J, -c_t, rcond=None)
                    trial2 = trial + corr
                    if obj.is_interior(trial2):
                        chi2 = obj.value(trial2)
                        c2 = c_of(trial2)
                        merit2 = chi2 + penalty * float(np.sum(np.abs(c2)))
                        if merit2 <= merit + ARMIJO * slope:
                            trial, chi_t, c_t = trial2, chi2, c2
                            accepted = True
                            break
            alpha *= 0.5
        if not accepted:
            status = "interior_lost" if not obj.is_interior(x + 1e-14 * d) else "line_search"
            break

        x_old, g_old, J_old = x, g, J
        x = trial
        chi = chi_t
        c = c_t
        g = obj.gradient(x)
        J = np.asarray(psi.jac(x), dtype=float).reshape(c.size, n)
        nu = _lsq_multipliers(J, g)
        if not exact:
            s = x - x_old
            yv = (g + J.T @ nu_plus) - (g_old + J_old.T @ nu_plus)
            r = yv - B_model @ s
            den = float(r @ s)
            if abs(den) > 1e-8 * np.linalg.norm(r) * np.linalg.norm(s):
                B_model = B_model + np.outer(r, r) / den

    d4 = float(np.linalg.norm(g + J.T @ nu))
    d5 = float(np.linalg.norm(c))
    success = status == "converged"
    message = ""
    if success and chi > chi0:
        success = False
        status = "descent_violated"
        message = f"objective rose from {chi0:.17g} to {chi:.17g}"
    mu = obj.multipliers(x) if obj.is_interior(x) else np.zeros(0)
    return NlpResult(
        x=x,
        nu=nu,
        mu=mu,
        d4_norm=d4,
        d5_norm=d5,
        objective_initial=chi0,
        objective_final=chi,
        iterations=it,
        success=success,
        status=status,
        message=message,
    )


def solve_with_continuation(x0, obj: BarrierObjective, eps4, eps5, psi: Optional[EqualityMap] = None,
                            max_iter=200, b_start=0.1, factor=10.0) -> NlpResult:
    """Direct solve, falling back to a barrier homotopy ``b_start -> obj.b``.

    Pure primal barrier Newton stalls when ``b`` is tiny and the start is
    far from the central path; the homotopy walks the path instead.
    Iteration counts include the abandoned direct attempt.
    """
    first = solve_equality_nlp(x0, obj, eps4, eps5, psi, max_iter=max_iter)
    if first.status in ("converged", "descent_violated") or b_start <= obj.b:
        return first
    spent = first.iterations
    x = np.array(x0, dtype=float)
    b = b_start
    while b > obj.b * (1 + 1e-12):
        stage = BarrierObjective(obj.agent, b, obj.rho, obj.v, obj.D)
        res = solve_equality_nlp(x, stage, max(eps4, 10 * b), max(eps5, b), psi, max_iter=max_iter)
        spent += res.iterations
        if res.status not in ("converged", "descent_violated"):
            break
        x = res.x
        b = max(b / factor, obj.b)
    final = solve_equality_nlp(x, obj, eps4, eps5, psi, max_iter=max_iter)
    final.iterations += spent
    final.objective_initial = obj.value(np.asarray(x0, dtype=float))
    if final.success and final.objective_final > final.objective_initial:
        final.success = False
        final.status = "descent_violated"
        final.message = "homotopy ended above the starting objective"
    return final
