"""Exact small-instance solvers used as ground truth.

Only unichain models are supported: every stationary policy must induce a
single recurrent class, otherwise the optimal average loss can depend on the
start state and neither solver below applies.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NonConvergenceError, SizeGuardError
from .lp import LpProblem, solve_lp
from .mdp import (
    Policy,
    estimate_mixing_time,
    policy_from_measure,
    stationary_distribution,
    sum_over_actions,
)

DENSE_LP_LIMIT = 5000
LOG_FLOOR = 1e-12


@dataclass
class ExactSolution:
    lambda_star: float
    mu_star: np.ndarray | None = None
    h_star: np.ndarray | None = None
    policy: Policy | None = None
    status: str = "optimal"


def dual_lp_problem(model):
    """The exact dual LP over state-action frequencies as an :class:`LpProblem`."""
    X, A = model.num_states, model.num_actions
    P = model.dense_transitions()
    B = np.kron(np.eye(X), np.ones((A, 1)))
    A_eq = np.vstack([(P - B).T, np.ones(X * A)])
    b_eq = np.zeros(X + 1)
    b_eq[-1] = 1.0
    return LpProblem(c=model.loss, A_eq=A_eq, b_eq=b_eq)


def solve_dual_lp_exact(model):
    """Minimize ``mu^T l`` over stationary state-action distributions."""
    if model.num_pairs > DENSE_LP_LIMIT:
        raise SizeGuardError(
            f"X*A = {model.num_pairs} exceeds the dense LP guard of {DENSE_LP_LIMIT}"
        )
    sol = solve_lp(dual_lp_problem(model), method="primal")
    if not sol.optimal:
        return ExactSolution(lambda_star=math.nan, status=sol.status)
    mu = np.maximum(sol.x, 0.0)
    mu /= mu.sum()
    return ExactSolution(
        lambda_star=float(mu @ model.loss),
        mu_star=mu,
        policy=policy_from_measure(mu, model.num_actions),
    )


@dataclass
class SurrogateMinimum:
    """Minimum of the surrogate over the box ``|theta_i| <= S`` intersected with the hyperplane.

    The box contains the ball of radius S, so ``value`` is a lower bound on the
    minimum over the parameter domain; it is that minimum exactly when the
    minimizer found lies in the ball (``exact``).
    """

    value: float
    theta: np.ndarray | None
    exact: bool
    status: str = "optimal"


def surrogate_minimum(features, H, S):
    """Piecewise-linear surrogate minimized as an LP with slack variables.

    Variables are ``theta`` (box-bounded), ``u >= [mu0 + Phi theta]_-`` per
    pair and ``w >= |(P - B)^T (mu0 + Phi theta)|`` per state.
    """
    model = features.model
    n, X, d = features.num_pairs, features.num_states, features.dim
    if n > DENSE_LP_LIMIT:
        raise SizeGuardError(f"X*A = {n} exceeds the dense LP guard of {DENSE_LP_LIMIT}")
    phi = features.to_dense()
    pb = features.pb_columns(np.arange(X))
    Z = np.zeros
    A_ge = np.block([
        [phi, np.eye(n), Z((n, X))],
        [-pb, Z((X, n)), np.eye(X)],
        [pb, Z((X, n)), np.eye(X)],
    ])
    b_ge = np.concatenate([-features.mu0, features.pb_mu0, -features.pb_mu0])
    c = np.concatenate([features.lT_phi, np.full(n, float(H)), np.full(X, float(H))])
    A_eq = np.concatenate([features.oneT_phi, Z(n + X)])[None, :]
    lo = np.concatenate([np.full(d, -float(S)), Z(n + X)])
    hi = np.concatenate([np.full(d, float(S)), np.full(n + X, np.inf)])
    problem = LpProblem(c=c, A_eq=A_eq, b_eq=np.array([1.0 - features.mu0.sum()]),
                        A_ge=A_ge, b_ge=b_ge, lo=lo, hi=hi)
    sol = solve_lp(problem)
    if not sol.optimal:
        return SurrogateMinimum(math.nan, None, False, sol.status)
    theta = sol.x[:d]
    value = float(model.loss @ features.mu0) + float(sol.objective_value)
    return SurrogateMinimum(value, theta, bool(np.linalg.norm(theta) <= S * (1 + 1e-9)))


def bellman_operator(model, h):
    """``(Lh)(x) = min_a [l(x,a) + sum_x' P(x,a,x') h(x')]`` and the Q-table."""
    q = (model.loss + model.P_csr @ h).reshape(model.num_states, model.num_actions)
    return q.min(axis=1), q


def relative_value_iteration(model, tol=1e-10, max_iter=1_000_000, ref_state=0):
    """Relative value iteration anchored at ``ref_state``.

    Iterates ``h <- Lh - (Lh)(ref) 1`` until ``span(Lh - h) <= tol``.
    """
    h = np.zeros(model.num_states)
    span = math.inf
    for _ in range(max_iter):
        Lh, _ = bellman_operator(model, h)
        diff = Lh - h
        span = float(diff.max() - diff.min())
        h = Lh - Lh[ref_state]
        if span <= tol:
            break
    else:
        raise NonConvergenceError(
            f"relative value iteration did not converge in {max_iter} iterations "
            f"(span {span:.3e})",
            cap=max_iter,
            residual=span,
        )
    Lh, q = bellman_operator(model, h)
    lam = float(Lh[ref_state])
    h = Lh - lam
    h -= h[ref_state]
    greedy = Policy.deterministic(q.argmin(axis=1), model.num_actions)
    try:
        mu = stationary_distribution(model, greedy)
    except NonConvergenceError:
        mu = None
    return ExactSolution(lambda_star=lam, mu_star=mu, h_star=h, policy=greedy)


def bellman_residual(model, lam, h):
    Lh, _ = bellman_operator(model, h)
    return float(np.abs(lam + h - Lh).max())


@dataclass
class Lemma1Report:
    lhs: float
    rhs: float
    eps_neg: float
    eps_stat: float
    tau: float

    @property
    def holds(self):
        return self.lhs <= self.rhs


def check_lemma1_bound(u, model, method="spectral"):
    """Compare ``||mu_u - u||_1`` against the mixing-based bound for a near-stationary ``u``.

    ``u`` sums to one but may have negative entries (total mass ``eps_neg``)
    and a stationarity residual of L1 size ``eps_stat``.  ``mu_u`` is the
    stationary distribution of the policy read off ``[u]_+``.
    """
    u = np.asarray(u, dtype=float)
    if abs(u.sum() - 1.0) > 1e-10:
        raise InputError("u must sum to 1")
    eps_neg = float(-u[u < 0].sum())
    eps_stat = float(np.abs(model.stationarity_residual(u)).sum())
    policy = policy_from_measure(u, model.num_actions)
    mu_u = stationary_distribution(model, policy)
    tau = estimate_mixing_time(model, policy, method=method).tau
    lhs = float(np.abs(mu_u - u).sum())
    log_term = math.log(1.0 / max(eps_neg, LOG_FLOOR))
    rhs = tau * log_term * (2 * eps_neg + eps_stat) + 3 * eps_neg
    return Lemma1Report(lhs=lhs, rhs=rhs, eps_neg=eps_neg, eps_stat=eps_stat, tau=tau)


def state_marginal(mu, model):
    return sum_over_actions(mu, model.num_actions)


__all__ = [
    "ExactSolution",
    "Lemma1Report",
    "SurrogateMinimum",
    "bellman_residual",
    "check_lemma1_bound",
    "dual_lp_problem",
    "relative_value_iteration",
    "solve_dual_lp_exact",
    "surrogate_minimum",
]
