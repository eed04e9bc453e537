import math

import numpy as np
import pytest

from ellada import anderson as aa

from helpers import random_secant_batch

NO_REG = aa.AndersonParams(regularize=False, eta_w=1e-3, M=20)


def _incremental(dW, dH, params=NO_REG):
    st = aa.AndersonState(dW.shape[0])
    for j in range(dW.shape[1]):
        aa.push_secant(st, dW[:, j], dH[:, j], params)
    return st


@pytest.mark.parametrize("seed", range(10))
def test_incremental_matches_batch(seed):
    dW, dH = random_secant_batch(seed)
    st = _incremental(dW, dH)
    assert st.restarts == 0 and st.m == dW.shape[1]
    assert np.abs(st.H_inv - aa.batch_inverse_jacobian(dW, dH)).max() <= 1e-10


def test_secant_conditions_hold():
    dW, dH = random_secant_batch(42)
    st = _incremental(dW, dH)
    assert np.allclose(st.H_inv @ dH, dW, atol=1e-10)


@pytest.mark.parametrize("raw,eta,expected", [
    (0.8, 0.5, 0.0),
    (-0.8, 0.5, 0.0),
    (0.5, 0.5, 0.0),  # boundary |raw| = eta -> (eta - raw)/(1 - raw) = 0
    (0.0, 0.5, 0.5),  # sign(0) = +1
    (0.2, 0.5, 0.3 / 0.8),
    (-0.2, 0.5, -0.3 / 1.2),
])
def test_regularize_theta(raw, eta, expected):
    assert aa.regularize_theta(raw, eta) == pytest.approx(expected)


def test_regularize_theta_bounds_denominator():
    # after perturbation |dw_hat' H dh_t| / |dw_hat|^2 >= eta
    for raw in np.linspace(-0.49, 0.49, 41):
        th = aa.regularize_theta(raw, 0.5)
        assert abs((1 - th) * raw + th) >= 0.5 - 1e-12
    with pytest.raises(ValueError):
        aa.regularize_theta(0.1, 1.0)


def test_linear_map_solved_after_two_secants():
    # h(w) = (I - T) w with fixed point 0; h0(w) = T w
    T = np.array([[0.5, 0.2], [0.0, 0.3]])
    params = aa.AndersonParams(regularize=False)
    st = aa.AndersonState(2)
    ws = [np.array([1.0, -1.0]), np.array([0.3, 2.0]), np.array([-0.7, 0.4])]
    for a, b in zip(ws, ws[1:]):
        aa.push_secant(st, b - a, (b - T @ b) - (a - T @ a), params)
    w = np.array([2.0, 3.0])
    assert np.allclose(aa.propose(st, w, T @ w), 0.0, atol=1e-12)


def test_memory_restart_keeps_current_secant():
    params = aa.AndersonParams(M=2, regularize=False, eta_w=1e-3)
    rng = np.random.default_rng(0)
    st = aa.AndersonState(5)
    pairs = [(rng.standard_normal(5), rng.standard_normal(5)) for _ in range(3)]
    for dw, dh in pairs:
        aa.push_secant(st, dw, dh, params)
    assert st.restarts == 1 and st.m == 1
    fresh = aa.AndersonState(5)
    aa.push_secant(fresh, *pairs[2], params)
    assert np.allclose(st.H_inv, fresh.H_inv)


def test_collinear_secant_restarts():
    params = aa.AndersonParams(regularize=False)
    st = aa.AndersonState(3)
    aa.push_secant(st, np.array([1.0, 0, 0]), np.array([0.5, 0.1, 0]), params)
    aa.push_secant(st, np.array([1.0, 0.01, 0]), np.array([0.4, 0.1, 0.2]), params)
    assert st.restarts == 1 and st.m == 1


def test_zero_secant_ignored():
    st = aa.AndersonState(2)
    aa.push_secant(st, np.zeros(2), np.ones(2), aa.AndersonParams())
    assert st.m == 0 and np.array_equal(st.H_inv, np.eye(2))


def test_params_validation():
    for kw in ({"M": 0}, {"eta_theta": 1.0}, {"eta_w": 0.0}, {"sigma": 0.0}, {"eta_L": -1.0},
               {"reference": "other"}):
        with pytest.raises(ValueError):
            aa.AndersonParams(**kw)


def _safeguard_case():
    B = -np.vstack([np.eye(1), np.eye(1)])
    Ax = np.array([1.0, 1.2])
    lam = np.zeros(2)
    w = np.array([1.1, -0.05, 0.05])  # (xbar, z)
    return B, Ax, lam, w


def test_safeguard_budget_decays():
    B, Ax, lam, w = _safeguard_case()
    params = aa.AndersonParams(eta_L=0.5, eta_w_tilde=10.0)
    st = aa.AndersonState(3)
    st.L_tilde_0 = 1.0
    for R in range(4):
        dec = aa.safeguard(st, w, w, w, Ax, lam, 1.0, 2.0, B, 1, params)
        assert dec.accepted
        assert dec.budget == pytest.approx(0.5 / (R + 1) ** 2)
    assert st.R_plus == 4
    # after three accepts with sigma = 1 the budget is L0 * eta_L / 16
    st2 = aa.AndersonState(3, R_plus=3, L_tilde_0=2.0)
    dec = aa.safeguard(st2, w, w, w, Ax, lam, 1.0, 2.0, B, 1, params)
    assert dec.budget == pytest.approx(2.0 * 0.5 / 16)


def test_safeguard_rejects_large_increase_and_step():
    B, Ax, lam, w = _safeguard_case()
    st = aa.AndersonState(3, L_tilde_0=1e-3)
    far = w + np.array([5.0, 0.0, 0.0])
    dec = aa.safeguard(st, w, w, far, Ax, lam, 1.0, 2.0, B, 1, aa.AndersonParams())
    assert not dec.accepted and dec.increase > dec.budget
    assert st.R_plus == 0 and st.accepted_increase == 0.0


def test_zero_eta_L_disables_acceleration():
    B, Ax, lam, w = _safeguard_case()
    st = aa.AndersonState(3, L_tilde_0=1.0)
    dec = aa.safeguard(st, w, w, w, Ax, lam, 1.0, 2.0, B, 1, aa.AndersonParams(eta_L=0.0))
    assert not dec.accepted


def test_lagrangian_increase_matches_direct_difference():
    rng = np.random.default_rng(3)
    B = -np.vstack([np.eye(2), np.eye(2)])
    Ax, lam = rng.standard_normal(4), rng.standard_normal(4)
    beta, rho = 1.5, 3.0
    w, wt = rng.standard_normal(6), rng.standard_normal(6)

    def L(v):
        xb, z = v[:2], v[2:]
        y = -lam - beta * z
        r = Ax + B @ xb + z
        return lam @ z + 0.5 * beta * z @ z + y @ r + 0.5 * rho * r @ r

    inc = aa.lagrangian_increase(w, wt, Ax, lam, beta, rho, B, 2, corrected=True)
    assert inc == pytest.approx(L(wt) - L(w), rel=1e-12)


def test_log_conditioning_bound():
    M, th, ew, N = 3, 0.5, 0.05, 2
    direct = th ** (-M) * (3 * (1 + th + ew) ** M * ew ** (-N) - 2) ** (N - 1)
    assert aa.log_conditioning_bound(M, th, ew, N) == pytest.approx(math.log(direct), rel=1e-12)


def test_regularized_inverse_norm_below_bound():
    params = aa.AndersonParams(M=4)
    rng = np.random.default_rng(11)
    n = 6
    st = aa.AndersonState(n)
    bound = aa.log_conditioning_bound(params.M, params.eta_theta, params.eta_w, n)
    for _ in range(60):
        dw = rng.standard_normal(n)
        dh = 1e-3 * rng.standard_normal(n)  # nearly singular secants
        aa.push_secant(st, dw, dh, params)
        assert math.log(np.linalg.norm(st.H_inv, 2)) <= bound
