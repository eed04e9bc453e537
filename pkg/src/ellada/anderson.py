"""Regularized, restarted, safeguarded Type-I Anderson acceleration.

The accelerated sequence is ``w = (xbar, z)``; ``h0`` is one plain inner
sweep and ``h(w) = w - h0(w)`` its residual. The inverse Jacobian estimate
is built by rank-one Sherman-Morrison updates over Gram-Schmidt
orthogonalized secants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass(frozen=True)
class AndersonParams:
    M: int = 10
    eta_theta: float = 0.5
    eta_w: float = 0.05
    eta_L: float = 0.01
    eta_w_tilde: float = 0.01
    sigma: float = 1.0
    regularize: bool = True
    corrected_increase: bool = False  # see ``lagrangian_increase``
    reference: str = "previous"  # "previous": measure from this sweep's input w and Ax; "plain": from its output

    def __post_init__(self):
        if int(self.M) < 1:
            raise ValueError("memory M must be at least 1")
        if not 0.0 < self.eta_theta < 1.0:
            raise ValueError("eta_theta must lie in (0, 1)")
        if not 0.0 < self.eta_w < 1.0:
            raise ValueError("eta_w must lie in (0, 1)")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.eta_L < 0 or self.eta_w_tilde < 0:
            raise ValueError("safeguard scales must be nonnegative")
        if self.reference not in ("plain", "previous"):
            raise ValueError("reference must be 'plain' or 'previous'")


@dataclass
class AndersonState:
    n: int
    H_inv: np.ndarray = None
    orthogonal_secants: list = field(default_factory=list)
    m: int = 0
    R_plus: int = 0
    L_tilde_0: float = float("nan")
    accepted_increase: float = 0.0
    restarts: int = 0
    last_theta: float = 0.0

    def __post_init__(self):
        if self.H_inv is None:
            self.H_inv = np.eye(self.n)

    def restart(self):
        self.H_inv = np.eye(self.n)
        self.orthogonal_secants = []
        self.m = 0
        self.restarts += 1


def record_scale(xbar0, z0, xbar1, z1, beta, B):
    """Expected decrease of the first plain step, used as safeguard scale."""
    dBx = B @ (np.asarray(xbar1) - np.asarray(xbar0))
    dz = np.asarray(z1) - np.asarray(z0)
    return float(beta * (dBx @ dBx) + 0.5 * beta * (dz @ dz))


def regularize_theta(raw, eta):
    """``phi(raw; eta)``: perturbation weight keeping the update well posed.

    ``sign(0)`` is taken as ``+1``.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    if abs(raw) > eta:
        return 0.0
    s = 1.0 if raw >= 0 else -1.0
    return (eta * s - raw) / (1.0 - raw)


def push_secant(state: AndersonState, dw, dh, params: AndersonParams) -> AndersonState:
    """Add the secant pair ``(dw, dh)`` and update ``H_inv`` in place.

    On restart the memory and ``H_inv`` are cleared and the current secant
    becomes the first one in the new memory, so ``m == 1`` afterwards.
    """
    dw = np.asarray(dw, dtype=float)
    dh = np.asarray(dh, dtype=float)
    nw = float(np.linalg.norm(dw))
    if nw == 0.0:
        return state
    dw_hat = kernels.gram_schmidt(state.orthogonal_secants, dw)
    if state.m + 1 > params.M or np.linalg.norm(dw_hat) < params.eta_w * nw:
        state.restart()
        dw_hat = dw.copy()
    hat2 = float(dw_hat @ dw_hat)
    theta = 0.0
    if params.regularize:
        raw = float(dw_hat @ (state.H_inv @ dh)) / hat2
        theta = regularize_theta(raw, params.eta_theta)
    dh_t = (1.0 - theta) * dh + theta * dw
    denom = float(dw_hat @ (state.H_inv @ dh_t))
    if denom == 0.0 or not math.isfinite(denom):
        state.restart()
        return state
    kernels.sherman_morrison_update(state.H_inv, dw, dh_t, dw_hat)
    state.orthogonal_secants.append(dw_hat)
    state.m += 1
    state.last_theta = theta
    return state


def propose(state: AndersonState, w, h0_w):
    """``w - H_inv (w - h0(w))``."""
    w = np.asarray(w, dtype=float)
    return w - state.H_inv @ (w - np.asarray(h0_w, dtype=float))


def lagrangian_increase(w, w_tilde, Ax, lam, beta, rho, B, n_xbar, corrected=False, g=None):
    """Change of the augmented Lagrangian when ``w`` is replaced by ``w_tilde``.

    The as-written last term compares ``||Ax + B xbar~ + z~||`` with
    ``||Ax + B xbar + z~||``; ``corrected=True`` uses ``z`` in the second norm.
    """
    xb, z = w[:n_xbar], w[n_xbar:]
    xbt, zt = w_tilde[:n_xbar], w_tilde[n_xbar:]
    y = -lam - beta * z
    yt = -lam - beta * zt
    r = Ax + B @ xb + z
    rt = Ax + B @ xbt + zt
    r_last = r if corrected else Ax + B @ xb + zt
    val = (
        float(lam @ (zt - z))
        + 0.5 * beta * (float(zt @ zt) - float(z @ z))
        + float(yt @ rt)
        - float(y @ r)
        + 0.5 * rho * (float(rt @ rt) - float(r_last @ r_last))
    )
    if g is not None:
        val += float(g(xbt)) - float(g(xb))
    return val


@dataclass
class SafeguardDecision:
    accepted: bool
    increase: float
    budget: float
    step_sq: float
    step_budget: float


def safeguard(state: AndersonState, w_ref, w_base, w_candidate, Ax, lam, beta, rho, B, n_xbar,
              params: AndersonParams) -> SafeguardDecision:
    """Accept ``w_candidate`` in place of ``w_ref``?

    The Lagrangian increase is measured from ``w_ref`` at the given ``Ax``;
    the step-size test measures distance from ``w_base``. Accepting bumps
    ``R_plus`` and the running sum of accepted increases.
    """
    L0 = state.L_tilde_0
    if not (L0 > 0.0):
        inc = 0.0 if np.array_equal(w_candidate, w_ref) else float("inf")
        step = float(np.sum((np.asarray(w_candidate) - w_base) ** 2))
        ok = inc == 0.0 and step == 0.0
        return SafeguardDecision(ok, inc, 0.0, step, 0.0)
    inc = lagrangian_increase(w_ref, w_candidate, Ax, lam, beta, rho, B, n_xbar,
                              corrected=params.corrected_increase)
    budget = L0 * params.eta_L * (state.R_plus + 1) ** (-(1.0 + params.sigma))
    d = np.asarray(w_candidate) - w_base
    step = float(d @ d)
    step_budget = L0 / beta * params.eta_w_tilde / math.sqrt(1.0 + state.R_plus)
    # a zero budget (eta_L = 0) switches acceleration off
    ok = budget > 0 and inc <= budget and step <= step_budget
    if ok:
        state.R_plus += 1
        state.accepted_increase += max(inc, 0.0)
    return SafeguardDecision(bool(ok), inc, budget, step, step_budget)


def log_conditioning_bound(M, eta_theta, eta_w, N):
    """Natural log of ``theta^-M [3(1+theta+eta_w)^M eta_w^-N - 2]^(N-1)``.

    The bound itself overflows double precision for realistic ``N``.
    """
    a = M * math.log1p(eta_theta + eta_w) - N * math.log(eta_w)
    inner = a + math.log(3.0 - 2.0 * math.exp(-a))
    return -M * math.log(eta_theta) + (N - 1) * inner


def batch_inverse_jacobian(dW, dH):
    """Dense multi-secant estimate ``I + (dW - dH)(dW^T dH)^-1 dW^T``."""
    dW = np.asarray(dW, dtype=float)
    dH = np.asarray(dH, dtype=float)
    n = dW.shape[0]
    return np.eye(n) + (dW - dH) @ np.linalg.solve(dW.T @ dH, dW.T)
