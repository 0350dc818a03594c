import math

import numpy as np
import pytest

from dualalp.errors import InputError, SizeGuardError
from dualalp.features import MatrixFeatures
from dualalp.instances import random_unichain_mdp
from dualalp.mdp import MdpModel, Policy, stationary_distribution
from dualalp.oracle import (
    bellman_operator,
    bellman_residual,
    check_lemma1_bound,
    relative_value_iteration,
    solve_dual_lp_exact,
    surrogate_minimum,
)
from dualalp.sgd import surrogate_cost

from conftest import two_state_cycle


def test_single_state_picks_cheaper_action():
    m = MdpModel.from_dense([0.4, 0.1], [[1.0], [1.0]])
    sol = solve_dual_lp_exact(m)
    assert np.allclose(sol.mu_star, [0.0, 1.0]) and math.isclose(sol.lambda_star, 0.1)
    assert np.array_equal(sol.policy.probs, [[0.0, 1.0]])
    rvi = relative_value_iteration(m)
    assert math.isclose(rvi.lambda_star, 0.1) and np.array_equal(rvi.h_star, [0.0])


def test_forced_cycle_time_average():
    sol = solve_dual_lp_exact(two_state_cycle((0.2, 0.6)))
    assert math.isclose(sol.lambda_star, 0.4, abs_tol=1e-12)


def test_constant_loss():
    m = random_unichain_mdp(5, 3, seed=1)
    m = MdpModel(5, 3, np.full(15, 0.35), m.P_csr)
    rvi = relative_value_iteration(m)
    assert math.isclose(rvi.lambda_star, 0.35, abs_tol=1e-12)
    assert np.abs(rvi.h_star).max() <= 1e-12
    assert math.isclose(solve_dual_lp_exact(m).lambda_star, 0.35, abs_tol=1e-12)


def test_lp_and_rvi_agree():
    for seed in range(10):
        m = random_unichain_mdp(6, 2, seed=100 + seed)
        lp, rvi = solve_dual_lp_exact(m), relative_value_iteration(m)
        assert abs(lp.lambda_star - rvi.lambda_star) <= 1e-6
        assert bellman_residual(m, rvi.lambda_star, rvi.h_star) <= 1e-8
        # the greedy policy of the relative values attains the optimum
        assert abs(rvi.mu_star @ m.loss - lp.lambda_star) <= 1e-8


def test_complementary_slackness():
    for seed in range(10):
        m = random_unichain_mdp(7, 3, seed=200 + seed)
        lp, rvi = solve_dual_lp_exact(m), relative_value_iteration(m)
        _, q = bellman_operator(m, rvi.h_star)
        qmin = q.min(axis=1)
        for pair in np.flatnonzero(lp.mu_star > 1e-8):
            x, a = divmod(int(pair), m.num_actions)
            assert q[x, a] - qmin[x] <= 1e-6


def test_optimal_measure_is_stationary():
    m = random_unichain_mdp(9, 2, seed=5)
    sol = solve_dual_lp_exact(m)
    assert abs(sol.mu_star.sum() - 1) <= 1e-12
    assert np.abs(m.stationarity_residual(sol.mu_star)).sum() <= 1e-9
    mu_pi = stationary_distribution(m, sol.policy)
    assert abs(mu_pi @ m.loss - sol.lambda_star) <= 1e-8


def test_size_guard():
    m = random_unichain_mdp(2600, 2, seed=0, branching=1)
    with pytest.raises(SizeGuardError):
        solve_dual_lp_exact(m)


# -- Lemma 1 checker ----------------------------------------------------------------

def test_lemma1_exact_stationary_distribution():
    m = random_unichain_mdp(6, 2, seed=3)
    mu = stationary_distribution(m, Policy.uniform(6, 2))
    rep = check_lemma1_bound(mu, m)
    assert rep.eps_neg == 0.0 and rep.lhs <= 1e-10 and rep.holds


@pytest.mark.parametrize("delta", [1e-3, 1e-2])
def test_lemma1_two_coordinate_perturbation(delta):
    for seed in range(10):
        m = random_unichain_mdp(6, 2, seed=seed)
        rng = np.random.default_rng(seed)
        pi = Policy(rng.dirichlet(np.ones(2), size=6))
        u = stationary_distribution(m, pi)
        i = int(np.argmin(u))
        j = int(np.argmax(u))
        # drive coordinate i negative and keep the total mass at one
        shift = u[i] + delta
        u[i] -= shift
        u[j] += shift
        rep = check_lemma1_bound(u, m)
        assert rep.eps_neg > 0 and rep.holds


def test_lemma1_requires_unit_mass():
    m = random_unichain_mdp(3, 2, seed=1)
    with pytest.raises(InputError):
        check_lemma1_bound(np.full(6, 0.2), m)


# -- surrogate minimum ------------------------------------------------------------------

def test_surrogate_minimum_is_a_lower_bound():
    m = random_unichain_mdp(5, 2, seed=8)
    f = MatrixFeatures(m, np.eye(10))
    H, S = 3.0, 2.0
    sm = surrogate_minimum(f, H, S)
    assert sm.exact
    assert math.isclose(surrogate_cost(f, sm.theta, H), sm.value, abs_tol=1e-9)
    rng = np.random.default_rng(0)
    from dualalp.features import ThetaDomain

    dom = ThetaDomain.for_features(f, S)
    for _ in range(200):
        theta = dom.project(rng.standard_normal(10))
        assert surrogate_cost(f, theta, H) >= sm.value - 1e-9


def test_surrogate_minimum_matches_conic_solver():
    cp = pytest.importorskip("cvxpy")
    for seed in range(3):
        m = random_unichain_mdp(5, 2, seed=20 + seed)
        f = MatrixFeatures(m, np.eye(10))
        H, S = 10.0, 2.0
        sm = surrogate_minimum(f, H, S)
        phi = f.to_dense()
        pb = f.pb_columns(np.arange(5))
        th = cp.Variable(10)
        obj = m.loss @ phi @ th + H * cp.sum(cp.neg(phi @ th)) + H * cp.norm1(pb @ th)
        prob = cp.Problem(cp.Minimize(obj), [f.oneT_phi @ th == 1, cp.norm(th) <= S])
        prob.solve()
        assert abs(prob.value - sm.value) <= 1e-5
