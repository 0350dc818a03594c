import math

import numpy as np
import pytest
import scipy.sparse as sp

from dualalp.errors import ContractViolation, DimensionError, InputError
from dualalp.features import (
    MatrixFeatures,
    SamplingModel,
    ThetaDomain,
    pb_column_dense,
    sampling_constants,
)
from dualalp.instances import random_unichain_mdp
from dualalp.mdp import MdpModel, Policy, stationary_distribution


@pytest.fixture
def mdp4():
    return random_unichain_mdp(4, 2, seed=21)


def dense_values(model, phi, mu0, theta):
    P = model.dense_transitions()
    B = np.kron(np.eye(model.num_states), np.ones((model.num_actions, 1)))
    mu = mu0 + phi @ theta
    return mu, (P - B).T @ mu


def test_dense_and_sparse_features_agree(mdp4):
    rng = np.random.default_rng(0)
    phi = rng.standard_normal((8, 3)) * (rng.random((8, 3)) < 0.6)
    fd = MatrixFeatures(mdp4, phi)
    fs = MatrixFeatures(mdp4, sp.csr_matrix(phi))
    theta = rng.standard_normal(3)
    for p in range(8):
        assert np.array_equal(fd.row(p), fs.row(p))
    assert np.allclose(fd.values(theta), fs.values(theta), atol=1e-14)
    assert np.allclose(fd.lT_phi, fs.lT_phi, atol=1e-14)
    assert np.allclose(fd.oneT_phi, phi.sum(axis=0), atol=1e-14)
    assert np.allclose(fs.to_dense(), phi)


def test_cached_aggregates_match_definition(mdp4):
    phi = np.random.default_rng(1).random((8, 5))
    f = MatrixFeatures(mdp4, phi)
    assert np.allclose(f.lT_phi, mdp4.loss @ phi, atol=1e-10)
    assert np.allclose(f.oneT_phi, phi.sum(axis=0), atol=1e-10)


def test_feature_shape_checked(mdp4):
    with pytest.raises(DimensionError):
        MatrixFeatures(mdp4, np.ones((7, 2)))


def test_nonstationary_mu0_rejected(mdp4):
    mu0 = np.zeros(8)
    mu0[0] = 1.0
    with pytest.raises(InputError):
        MatrixFeatures(mdp4, np.ones((8, 1)), mu0=mu0)


def test_pb_column_single_state_vanishes():
    m = MdpModel.from_dense([0.3], [[1.0]])
    f = MatrixFeatures(m, np.array([[2.0, -1.0, 0.5]]))
    assert np.array_equal(f.pb_column(0), np.zeros(3))


def test_pb_column_of_stationary_feature_vanishes(mdp4):
    pi = Policy(np.random.default_rng(2).dirichlet(np.ones(2), size=4))
    mu = stationary_distribution(mdp4, pi)
    f = MatrixFeatures(mdp4, mu[:, None])
    for x in range(4):
        assert abs(f.pb_column(x)[0]) <= 1e-12


def test_pb_column_matches_dense_product(mdp4):
    phi = np.random.default_rng(3).standard_normal((8, 4))
    f = MatrixFeatures(mdp4, phi)
    for x in range(4):
        assert np.allclose(f.pb_column(x), pb_column_dense(mdp4, phi, x), atol=1e-12, rtol=0)


def test_violations_match_dense_evaluation(mdp4):
    rng = np.random.default_rng(4)
    phi = rng.standard_normal((8, 3))
    f = MatrixFeatures(mdp4, phi)
    for _ in range(10):
        theta = rng.standard_normal(3)
        mu, w = dense_values(mdp4, phi, np.zeros(8), theta)
        assert math.isclose(f.v1(theta), -mu[mu < 0].sum(), abs_tol=1e-12)
        assert math.isclose(f.v2(theta), np.abs(w).sum(), abs_tol=1e-12)
        assert math.isclose(f.objective(theta), mdp4.loss @ mu, abs_tol=1e-12)


def test_violations_vanish_for_feasible_and_zero_theta(mdp4):
    mu = stationary_distribution(mdp4, Policy.uniform(4, 2))
    f = MatrixFeatures(mdp4, mu[:, None])
    assert f.v1(np.array([1.0])) == 0.0
    assert f.v2(np.array([1.0])) <= 1e-12
    g = MatrixFeatures(mdp4, np.random.default_rng(5).standard_normal((8, 3)))
    assert g.v1(np.zeros(3)) == 0.0 and g.v2(np.zeros(3)) == 0.0


def test_violation_bounds_on_domain(mdp4):
    # columns normalized to sum to one, as the bounds assume
    rng = np.random.default_rng(6)
    d, S = 4, 2.0
    phi = rng.dirichlet(np.ones(8), size=d).T
    f = MatrixFeatures(mdp4, phi)
    dom = ThetaDomain.for_features(f, S)
    for _ in range(200):
        theta = dom.project(rng.standard_normal(d) * 5)
        assert f.v1(theta) <= 1 + S * d
        assert f.v2(theta) <= 2 + 2 * S


def test_violations_are_convex(mdp4):
    rng = np.random.default_rng(7)
    f = MatrixFeatures(mdp4, rng.standard_normal((8, 3)))
    for _ in range(100):
        t1, t2 = rng.standard_normal(3), rng.standard_normal(3)
        lam = rng.random()
        mid = lam * t1 + (1 - lam) * t2
        for V in (f.v1, f.v2):
            assert V(mid) <= lam * V(t1) + (1 - lam) * V(t2) + 1e-10


def test_pb_columns_sum_to_v2_with_stationary_mu0(mdp4):
    mu0 = stationary_distribution(mdp4, Policy.uniform(4, 2))
    rng = np.random.default_rng(8)
    phi = rng.standard_normal((8, 3))
    f = MatrixFeatures(mdp4, phi, mu0=mu0)
    theta = rng.standard_normal(3)
    total = sum(abs(f.pb_column(x) @ theta) for x in range(4))
    assert math.isclose(total, f.v2(theta), abs_tol=1e-9)


# -- sampling constants -------------------------------------------------------------

def test_uniform_constant_bound(mdp4):
    # rows with d entries of size at most Cp/(XA) give C1 <= Cp sqrt(d)
    rng = np.random.default_rng(9)
    Cp, d = 2.0, 3
    phi = rng.uniform(-1, 1, (8, d)) * Cp / 8
    f = MatrixFeatures(mdp4, phi)
    C1, _ = sampling_constants(f, np.full(8, 1 / 8), np.full(4, 1 / 4))
    assert C1 <= Cp * math.sqrt(d)


def test_single_pair_constant():
    m = MdpModel.from_dense([0.3], [[1.0]])
    f = MatrixFeatures(m, np.array([[3.0, 4.0]]))
    C1, C2 = sampling_constants(f, [1.0], [1.0])
    assert C1 == 5.0 and C2 == 0.0


def test_enumerated_constants_equal_naive_max():
    m = random_unichain_mdp(3, 2, seed=10)
    rng = np.random.default_rng(11)
    phi = rng.standard_normal((6, 2))
    f = MatrixFeatures(m, phi)
    q1 = rng.dirichlet(np.ones(6))
    q2 = rng.dirichlet(np.ones(3))
    C1, C2 = sampling_constants(f, q1, q2)
    naive1 = max(np.linalg.norm(phi[i]) / q1[i] for i in range(6))
    naive2 = max(np.linalg.norm(pb_column_dense(m, phi, x)) / q2[x] for x in range(3))
    assert math.isclose(C1, naive1, rel_tol=1e-12)
    assert math.isclose(C2, naive2, rel_tol=1e-12)


def test_zero_q_where_numerator_nonzero_raises(mdp4):
    f = MatrixFeatures(mdp4, np.ones((8, 1)))
    q1 = np.zeros(8)
    q1[0] = 1.0
    with pytest.raises(ContractViolation):
        sampling_constants(f, q1, np.full(4, 0.25))


def test_sampling_model_bounds_hold_on_sample(mdp4):
    rng = np.random.default_rng(12)
    f = MatrixFeatures(mdp4, rng.standard_normal((8, 3)))
    for s in (SamplingModel.uniform(f), SamplingModel.norm_proportional(f)):
        assert math.isclose(s.q1.sum(), 1, abs_tol=1e-10)
        assert math.isclose(s.q2.sum(), 1, abs_tol=1e-10)
        for p in s.sample_pairs(rng, 200):
            assert np.linalg.norm(f.row(p)) / s.q1[p] <= s.C1 * (1 + 1e-12)
        for x in s.sample_states(rng, 200):
            assert np.linalg.norm(f.pb_column(x)) / s.q2[x] <= s.C2 * (1 + 1e-12)


def test_sampler_frequencies(mdp4):
    rng = np.random.default_rng(13)
    q1 = rng.dirichlet(np.ones(8))
    s = SamplingModel(q1, np.full(4, 0.25), 1.0, 1.0)
    n = 100_000
    counts = np.bincount(s.sample_pairs(np.random.default_rng(0), n), minlength=8)
    sigma = np.sqrt(n * q1 * (1 - q1))
    assert np.all(np.abs(counts - n * q1) <= 3 * sigma)


def test_sampling_model_rejects_non_distribution():
    with pytest.raises(InputError):
        SamplingModel([0.5, 0.6], [1.0], 1, 1)


# -- parameter domain ------------------------------------------------------------

def test_projection_examples():
    dom = ThetaDomain(1.0, np.array([1.0, 0.0]), 0.0)
    assert np.allclose(dom.project(np.array([3.0, 0.0])), [0.0, 0.0])
    dom = ThetaDomain(0.75, np.array([1.0, 1.0]), 1.0)
    assert np.allclose(dom.project(np.array([2.0, 2.0])), [0.5, 0.5])
    with pytest.raises(InputError):
        ThetaDomain(0.6, np.array([1.0, 1.0]), 1.0)


def test_projection_identity_inside_domain():
    dom = ThetaDomain(2.0, np.array([1.0, 1.0, 1.0]), 1.0)
    theta = np.array([0.5, 0.3, 0.2])
    assert np.array_equal(dom.project(theta), theta)


def test_projection_tiebreak_is_deterministic():
    dom = ThetaDomain(1.0, np.array([1.0, 1.0]), 1.0)
    # the hyperplane projection of (3, 3) is the circle center itself
    p1 = dom.project(np.array([3.0, 3.0]))
    assert np.array_equal(p1, dom.project(np.array([3.0, 3.0])))
    assert np.allclose(p1, [0.5, 0.5])
    # tangent plane: the domain is a single point and every input maps to it
    dom = ThetaDomain(1.0, np.array([1.0, 0.0]), 1.0)
    for theta in ([5.0, 7.0], [1.0, 0.0], [-3.0, 0.0]):
        assert np.allclose(dom.project(np.array(theta)), [1.0, 0.0], atol=1e-15)


def test_projection_idempotent_and_feasible():
    rng = np.random.default_rng(14)
    a = rng.random(6)
    dom = ThetaDomain(1.5, a, 0.4)
    for _ in range(200):
        p = dom.project(rng.standard_normal(6) * 4)
        assert abs(a @ p - 0.4) <= 1e-9
        assert np.linalg.norm(p) <= 1.5 * (1 + 1e-12)
        assert np.allclose(dom.project(p), p, atol=1e-12, rtol=0)


def test_projection_matches_generic_qp():
    # the ball-plane intersection projection is the minimizer of ||t - theta||
    from scipy.optimize import minimize

    rng = np.random.default_rng(15)
    a = rng.random(4) + 0.2
    dom = ThetaDomain(1.0, a, 0.5)
    for _ in range(10):
        theta = rng.standard_normal(4) * 3
        res = minimize(
            lambda t: np.sum((t - theta) ** 2),
            np.zeros(4),
            jac=lambda t: 2 * (t - theta),
            constraints=[
                {"type": "eq", "fun": lambda t: a @ t - 0.5},
                {"type": "ineq", "fun": lambda t: 1.0 - t @ t},
            ],
            method="SLSQP",
            options={"ftol": 1e-14, "maxiter": 500},
        )
        assert np.allclose(dom.project(theta), res.x, atol=1e-6)
