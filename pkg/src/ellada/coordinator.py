"""Coordinator-side updates and residuals.

Everything here works on stacked vectors partitioned by the incidence
blocks of a :class:`~ellada.graph.StackedCoupling`. The blockwise variants
used by the runtime live in :mod:`ellada.runtime` and must agree with these
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np


@dataclass
class IterateState:
    x: np.ndarray
    x_bar: np.ndarray
    z: np.ndarray
    y: np.ndarray
    aug_lagrangian: float = float("nan")

    def copy(self):
        return IterateState(self.x.copy(), self.x_bar.copy(), self.z.copy(), self.y.copy(), self.aug_lagrangian)


@dataclass
class OuterState:
    lam: np.ndarray
    lam_lower: np.ndarray
    lam_upper: np.ndarray
    beta: float
    rho: float
    b: float = 0.0
    k: int = 1
    z_prev_norm: float = float("inf")
    gamma: float = 2.0
    omega: float = 0.75
    amplified: bool = False

    @classmethod
    def initial(cls, n_rows, beta=1.0, lam_bound=10.0, lam0=None, b=0.0, gamma=2.0, omega=0.75):
        lo = np.full(n_rows, -float(lam_bound))
        hi = np.full(n_rows, float(lam_bound))
        lam = np.zeros(n_rows) if lam0 is None else np.clip(np.asarray(lam0, dtype=float), lo, hi)
        return cls(lam, lo, hi, float(beta), 2.0 * float(beta), float(b), 1, float("inf"), float(gamma), float(omega))


@dataclass
class InnerResiduals:
    eps1: float
    eps2: float
    eps3: float


def g_oracle(B, v, rho=None, a=2.0):
    """Minimizer of ``(rho/2)||B xbar + v||^2`` when ``B^T B = a I`` and ``g = 0``.

    For the shipped structure each overlap entry is the average of its two
    incident contributions.
    """
    return -(B.T @ v) / a


def z_update(r_partial, y, lam, rho, beta):
    """Slack minimizer; ``r_partial`` is ``A x + B xbar``."""
    return -(rho / (rho + beta)) * (r_partial + y / rho) - lam / (rho + beta)


def y_update(y, residual, rho):
    """Inner dual ascent; ``residual`` is ``A x + B xbar + z``."""
    return y + rho * residual


def inner_residuals(A, B, prev: IterateState, nxt: IterateState, rho) -> InnerResiduals:
    dBx = B @ (nxt.x_bar - prev.x_bar)
    dz = nxt.z - prev.z
    eps1 = float(np.linalg.norm(rho * (A.T @ (dBx + dz))))
    eps2 = float(np.linalg.norm(rho * (B.T @ dz)))
    eps3 = float(np.linalg.norm(A @ nxt.x + B @ nxt.x_bar + nxt.z))
    return InnerResiduals(eps1, eps2, eps3)


def outer_update(outer: OuterState, z_new) -> OuterState:
    """Projected multiplier step and conditional penalty amplification."""
    z_norm = float(np.linalg.norm(z_new))
    lam = np.clip(outer.lam + outer.beta * z_new, outer.lam_lower, outer.lam_upper)
    amplify = z_norm > outer.omega * outer.z_prev_norm
    beta = outer.gamma * outer.beta if amplify else outer.beta
    return replace(
        outer,
        lam=lam,
        beta=beta,
        rho=2.0 * beta,
        k=outer.k + 1,
        z_prev_norm=z_norm,
        amplified=bool(amplify),
    )


def augmented_lagrangian(A, B, state: IterateState, outer: OuterState, f_value, barrier_value=0.0, g_value=0.0):
    """Augmented Lagrangian without indicator terms.

    ``f_value`` is the summed agent objective at ``state.x``; pass the summed
    barrier term (already multiplied by ``-b``) as ``barrier_value`` for the
    barrier variant.
    """
    r = A @ state.x + B @ state.x_bar + state.z
    z = state.z
    return (
        float(f_value)
        + float(barrier_value)
        + float(g_value)
        + float(state.y @ r)
        + 0.5 * outer.rho * float(r @ r)
        + float(outer.lam @ z)
        + 0.5 * outer.beta * float(z @ z)
    )


@dataclass
class StationarityVerdict:
    ok: bool
    d1: float
    d2: float
    d3: float
    d4: Optional[float]
    d5: Optional[float]
    d6: Optional[float]
    failed: tuple = ()


def check_stationarity(A, B, prev: IterateState, state: IterateState, outer: OuterState,
                       d4_norm, d5_norm, tol, b=None) -> StationarityVerdict:
    """Surrogate approximate-KKT test at the end of an outer round.

    ``tol`` is ``(eps1, eps2, eps3[, eps4, eps5, eps6])``; missing or ``None``
    entries are not tested. ``prev`` is the iterate before the last inner
    step (its ``x_bar``, ``z`` feed the stationarity surrogate).
    """
    tol = tuple(tol) + (None,) * (6 - len(tol))
    res = inner_residuals(A, B, prev, state, outer.rho)
    d1 = float(d4_norm) + res.eps1
    d2 = res.eps2
    d3 = float(np.linalg.norm(A @ state.x + B @ state.x_bar))
    d6 = None if b is None else float(b)
    vals = (d1, d2, d3, float(d4_norm), float(d5_norm), d6)
    failed = tuple(
        f"d{j + 1}" for j, (v, t) in enumerate(zip(vals, tol)) if t is not None and v is not None and v > t
    )
    return StationarityVerdict(not failed, d1, d2, d3, float(d4_norm), float(d5_norm), d6, failed)


def dual_identity_residual(state: IterateState, outer: OuterState):
    """``||lam + beta z + y||``; zero after every inner step."""
    return float(np.linalg.norm(outer.lam + outer.beta * state.z + state.y))
