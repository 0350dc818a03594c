"""Constraint sampling: solve the dual ALP restricted to randomly drawn constraints.

Two constraint families are sampled.  L1 holds one positivity row per
state-action pair, ``mu0(x,a) + Phi_(x,a) theta >= v1(x,a)``.  L2 holds two
rows per state, ``|(P - B)_{:,x}^T (mu0 + Phi theta)| <= v2(x)``.  The sampled
LP keeps the normalization equality and the box ``|theta_i| <= M``.  An audit
then measures how far the solution violates the constraints that were not
sampled.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError
from .features import ENUMERATION_LIMIT
from .lp import CERT_TOL, LpProblem, solve_lp
from .mdp import policy_from_theta, simulate_average_loss

AUDIT_HEADER = ("trial", "k1", "k2", "objective", "v1_exact_or_est", "v2_exact_or_est", "avg_loss_simulated")
AUDIT_ESTIMATE_SAMPLES = 100_000
# a constraint counts as violated only beyond the LP certification tolerance
VIOLATION_TOL = CERT_TOL


def sample_count(epsilon, delta, d):
    """``ceil((4/eps) (d ln(12/eps) + ln(2/delta)))`` constraints, natural log."""
    if not 0 < epsilon < 1 or not 0 < delta < 1:
        raise InputError("epsilon and delta must lie in (0, 1)")
    if int(d) != d or d < 1:
        raise InputError("d must be a positive integer")
    return math.ceil(4.0 / epsilon * (d * math.log(12.0 / epsilon) + math.log(2.0 / delta)))


@dataclass(frozen=True)
class CsConfig:
    """Sample sizes, violation allowances and box bound for one sampled LP.

    ``v1`` is the signed threshold in [-1, 0] (scalar or per pair); ``v2`` the
    per-state allowance in [0, 1], defaulting to ``eps_s`` everywhere.
    """

    k1: int
    k2: int
    v1: float | np.ndarray = 0.0
    v2: float | np.ndarray | None = None
    M: float = 3.0
    eps_s: float = 1e-3
    seed: int = 0
    deduplicate: bool = True

    def __post_init__(self):
        if self.k1 < 1 or self.k2 < 1:
            raise InputError("k1 and k2 must be >= 1")
        if not self.M > 0:
            raise InputError("M must be positive")
        if self.eps_s < 0:
            raise InputError("eps_s must be nonnegative")
        v1 = np.asarray(self.v1, dtype=float)
        if np.any(v1 < -1) or np.any(v1 > 0):
            raise InputError("v1 must lie in [-1, 0]")
        if self.v2 is not None:
            v2 = np.asarray(self.v2, dtype=float)
            if np.any(v2 < 0) or np.any(v2 > 1):
                raise InputError("v2 must lie in [0, 1]")

    def v1_vector(self, num_pairs):
        return _broadcast(self.v1, num_pairs, "v1")

    def v2_vector(self, num_states):
        return _broadcast(self.eps_s if self.v2 is None else self.v2, num_states, "v2")


def _broadcast(v, n, name):
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        return np.full(n, float(v))
    if v.shape != (n,):
        raise DimensionError(f"{name} has shape {v.shape}, expected ({n},)")
    return v


@dataclass(frozen=True)
class SampledConstraintSet:
    """Sampled pair indices (I1) and state indices (I2); every state yields both signs."""

    I1: np.ndarray
    I2: np.ndarray

    def unique(self):
        return SampledConstraintSet(np.unique(self.I1), np.unique(self.I2))


def sample_constraints(sampling, k1, k2, seed):
    """Draw ``k1`` pairs from q1, then ``k2`` states from q2, from one seeded stream."""
    if k1 < 1 or k2 < 1:
        raise InputError("k1 and k2 must be >= 1")
    rng = np.random.default_rng(seed)
    I1 = sampling.sample_pairs(rng, k1)
    I2 = sampling.sample_states(rng, k2)
    return SampledConstraintSet(I1, I2)


def build_sampled_lp(features, config, constraints):
    """Assemble the sampled LP in theta.

    Returns ``(problem, offset)``.  The LP objective is ``l^T Phi theta``; the
    constant ``offset = l^T mu0`` is kept outside and added back in reports.
    Identical sampled rows are merged when ``config.deduplicate`` is set,
    which leaves the feasible set unchanged.
    """
    cs = constraints.unique() if config.deduplicate else constraints
    I1 = np.asarray(cs.I1, dtype=int)
    I2 = np.asarray(cs.I2, dtype=int)
    if I1.size and (I1.min() < 0 or I1.max() >= features.num_pairs):
        raise DimensionError("pair index out of range")
    if I2.size and (I2.min() < 0 or I2.max() >= features.num_states):
        raise DimensionError("state index out of range")
    v1 = config.v1_vector(features.num_pairs)
    v2 = config.v2_vector(features.num_states)
    d = features.dim
    rows1 = features.rows(I1) if I1.size else np.zeros((0, d))
    b1 = v1[I1] - features.mu0[I1]
    cols = features.pb_columns(I2) if I2.size else np.zeros((0, d))
    pb0 = features.pb_mu0[I2]
    # -(w0 + C theta) >= -v2  and  (w0 + C theta) >= -v2
    A_ge = np.vstack([rows1, -cols, cols])
    b_ge = np.concatenate([b1, pb0 - v2[I2], -v2[I2] - pb0])
    problem = LpProblem(
        c=np.asarray(features.lT_phi, dtype=float),
        A_eq=np.asarray(features.oneT_phi, dtype=float)[None, :],
        b_eq=np.array([1.0 - float(features.mu0.sum())]),
        A_ge=A_ge,
        b_ge=b_ge,
        lo=np.full(d, -config.M),
        hi=np.full(d, config.M),
    )
    offset = float(features.model.loss @ features.mu0)
    return problem, offset


@dataclass
class CsAudit:
    """Post-hoc violation report for a sampled-LP solution.

    ``v1``/``v2`` are the total violations; ``q1_violation``/``q2_violation``
    the q-measure of violated L1/L2 constraints.  All four are exact when
    ``exact`` is set, Monte Carlo estimates otherwise.
    """

    status: str
    k1: int
    k2: int
    objective: float = math.nan
    v1: float = math.nan
    v2: float = math.nan
    q1_violation: float = math.nan
    q2_violation: float = math.nan
    exact: bool = True
    theta_norm: float = math.nan
    radius: float = math.nan
    C1: float = math.nan
    C2: float = math.nan
    v1_norm: float = 0.0
    v2_norm: float = 0.0
    # constraints inside VIOLATION_TOL count as satisfied but may still add to v1/v2
    slack1: float = 0.0
    slack2: float = 0.0

    def lemma5_bound(self, epsilon):
        """``S C1 eps + ||v1||_1`` with S the radius implied by the box."""
        return self.radius * self.C1 * epsilon + self.v1_norm

    def lemma6_bound(self, epsilon):
        return self.radius * self.C2 * epsilon + self.v2_norm

    def flagged(self, epsilon):
        """True when the sampling guarantee failed for this draw (either family)."""
        return self.q1_violation > epsilon or self.q2_violation > epsilon

    def bounds_hold(self, epsilon=None):
        """Check both violation bounds at ``epsilon``, or at the measured q-masses when None."""
        e1 = self.q1_violation if epsilon is None else epsilon
        e2 = self.q2_violation if epsilon is None else epsilon
        return (
            self.v1 <= self.lemma5_bound(e1) + self.slack1
            and self.v2 <= self.lemma6_bound(e2) + self.slack2
        )


def audit_solution(features, sampling, config, theta, seed=0):
    """Violation totals and violated q-mass of ``theta`` over the full constraint families."""
    v1 = config.v1_vector(features.num_pairs)
    v2 = config.v2_vector(features.num_states)
    if features.num_pairs <= ENUMERATION_LIMIT:
        z = features.values(theta)
        w = features.stationarity(theta)
        return dict(
            v1=float(-np.minimum(z, 0.0).sum()),
            v2=float(np.abs(w).sum()),
            q1_violation=float(sampling.q1[z < v1 - VIOLATION_TOL].sum()),
            q2_violation=float(sampling.q2[np.abs(w) > v2 + VIOLATION_TOL].sum()),
            exact=True,
        )
    # importance-weighted estimates from the same q's
    rng = np.random.default_rng(seed)
    n = AUDIT_ESTIMATE_SAMPLES
    pairs = sampling.sample_pairs(rng, n)
    states = sampling.sample_states(rng, n)
    z = features.mu0[pairs] + features.rows(pairs) @ theta
    w = features.pb_mu0[states] + features.pb_columns(states) @ theta
    return dict(
        v1=float(np.mean(-np.minimum(z, 0.0) / sampling.q1[pairs])),
        v2=float(np.mean(np.abs(w) / sampling.q2[states])),
        q1_violation=float(np.mean(z < v1[pairs] - VIOLATION_TOL)),
        q2_violation=float(np.mean(np.abs(w) > v2[states] + VIOLATION_TOL)),
        exact=False,
    )


def run_constraint_sampling(model, features, sampling, config):
    """Sample constraints, solve the sampled LP and audit the result.

    Returns ``(theta_tilde, audit)``; ``theta_tilde`` is None unless the LP
    is optimal, and the audit then carries only the status.
    """
    if features.model is not model:
        raise InputError("features are bound to a different model")
    cs = sample_constraints(sampling, config.k1, config.k2, config.seed)
    problem, offset = build_sampled_lp(features, config, cs)
    sol = solve_lp(problem)
    audit = CsAudit(status=sol.status, k1=config.k1, k2=config.k2)
    if not sol.optimal:
        return None, audit
    theta = sol.x
    audit.objective = offset + float(sol.objective_value)
    for key, val in audit_solution(features, sampling, config, theta, seed=config.seed).items():
        setattr(audit, key, val)
    audit.theta_norm = float(np.linalg.norm(theta))
    # ||theta||_inf <= M gives ||theta||_2 <= M sqrt(d)
    audit.radius = config.M * math.sqrt(features.dim)
    audit.C1, audit.C2 = sampling.C1, sampling.C2
    audit.v1_norm = float(np.abs(config.v1_vector(features.num_pairs)).sum())
    audit.v2_norm = float(np.abs(config.v2_vector(features.num_states)).sum())
    audit.slack1 = VIOLATION_TOL * features.num_pairs
    audit.slack2 = VIOLATION_TOL * features.num_states
    return theta, audit


def ladder_counts(k1_values, num_actions):
    """Pairs of (k1, k2) with states sampled ``num_actions`` times less often."""
    return [(int(k), max(1, math.ceil(k / num_actions))) for k in k1_values]


def constraint_sampling_sweep(
    model, features, sampling, ladder, trials, root_seed=0, base=None,
    sim_horizon=100_000, burn_in=10_000,
):
    """Run ``trials`` reseeded sampled LPs at every (k1, k2) of ``ladder``.

    Trials are numbered 0, 1, 2, ... across the whole sweep in ladder order,
    and trial ``k`` uses seed ``root_seed + k`` for both constraint sampling
    and policy simulation.  Returns a list of (trial, audit, avg_loss).
    """
    base = base or CsConfig(k1=1, k2=1)
    out = []
    k = 0
    for k1, k2 in ladder:
        for _ in range(trials):
            seed = root_seed + k
            cfg = CsConfig(
                k1=k1, k2=k2, v1=base.v1, v2=base.v2, M=base.M, eps_s=base.eps_s,
                seed=seed, deduplicate=base.deduplicate,
            )
            theta, audit = run_constraint_sampling(model, features, sampling, cfg)
            loss = math.nan
            if theta is not None:
                policy = policy_from_theta(features.mu0, features, theta)
                loss = simulate_average_loss(model, policy, sim_horizon, burn_in, seed)
            out.append((k, audit, loss))
            k += 1
    return out


def audit_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AUDIT_HEADER)
    for trial, audit, loss in results:
        w.writerow([
            trial, audit.k1, audit.k2,
            repr(float(audit.objective)), repr(float(audit.v1)), repr(float(audit.v2)),
            repr(float(loss)),
        ])
    return buf.getvalue()
