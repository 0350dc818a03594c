"""Finite average-cost MDPs: model, policies, stationary distributions, mixing.

State-action pairs are flattened row-major, so pair ``(x, a)`` has index
``x * A + a``.  The transition kernel is an ``(X*A, X)`` sparse matrix kept in
both CSR (row access, used for simulation) and CSC (column access, used for
the stationarity terms of the gradient estimator) layouts.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, InputError, MixingError, NonConvergenceError

ROW_SUM_TOL = 1e-12
MIXING_FLOOR = 1e-6
POWER_ITER_FALLBACK_CAP = 1_000_000
# second eigenvalue moduli below this are roundoff of an exact zero
LAMBDA2_ZERO_TOL = 1e-12


def _readonly(arr):
    arr = np.asarray(arr)
    arr.flags.writeable = False
    return arr


class MdpModel:
    """A finite MDP with losses in [0, 1] and a sparse transition kernel.

    Parameters
    ----------
    num_states, num_actions : int
    loss : array_like, shape (X*A,)
    transitions : sparse matrix or ndarray, shape (X*A, X)
        Row ``x*A + a`` is the next-state distribution of pair ``(x, a)``.
    """

    def __init__(self, num_states, num_actions, loss, transitions):
        X, A = int(num_states), int(num_actions)
        if X < 1 or A < 1:
            raise DimensionError(f"need X >= 1 and A >= 1, got X={X}, A={A}")
        loss = np.asarray(loss, dtype=float).ravel()
        if loss.shape != (X * A,):
            raise DimensionError(f"loss has length {loss.size}, expected {X * A}")
        if not np.all(np.isfinite(loss)) or loss.min() < 0 or loss.max() > 1:
            raise InputError("loss entries must lie in [0, 1]")
        P = sp.csr_matrix(transitions, dtype=float, copy=True)
        if P.shape != (X * A, X):
            raise DimensionError(f"transitions have shape {P.shape}, expected {(X * A, X)}")
        P.sum_duplicates()
        P.eliminate_zeros()
        P.sort_indices()
        if P.nnz and P.data.min() < 0:
            raise InputError("transition probabilities must be nonnegative")
        sums = np.asarray(P.sum(axis=1)).ravel()
        bad = np.abs(sums - 1.0) > ROW_SUM_TOL
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise InputError(f"row {i} of the transition kernel sums to {sums[i]!r}")
        for arr in (P.data, P.indices, P.indptr):
            arr.flags.writeable = False
        Pc = P.tocsc()
        Pc.sort_indices()
        for arr in (Pc.data, Pc.indices, Pc.indptr):
            arr.flags.writeable = False
        self.num_states = X
        self.num_actions = A
        self.loss = _readonly(loss)
        self.P_csr = P
        self.P_csc = Pc

    @property
    def num_pairs(self):
        return self.num_states * self.num_actions

    def pair_index(self, x, a):
        return x * self.num_actions + a

    def row(self, pair):
        """Sparse next-state distribution of one state-action pair."""
        lo, hi = self.P_csr.indptr[pair], self.P_csr.indptr[pair + 1]
        return self.P_csr.indices[lo:hi], self.P_csr.data[lo:hi]

    def column(self, state):
        """Pairs with positive probability of moving to ``state`` and those probabilities."""
        lo, hi = self.P_csc.indptr[state], self.P_csc.indptr[state + 1]
        return self.P_csc.indices[lo:hi], self.P_csc.data[lo:hi]

    def dense_transitions(self):
        return self.P_csr.toarray()

    def stationarity_residual(self, mu):
        """The vector ``(P - B)^T mu`` of length X."""
        mu = np.asarray(mu, dtype=float)
        return self.P_csr.T @ mu - sum_over_actions(mu, self.num_actions)

    def policy_kernel(self, policy):
        """State transition matrix ``P^pi`` as a sparse (X, X) matrix."""
        X, A = self.num_states, self.num_actions
        probs = policy.probs if isinstance(policy, Policy) else np.asarray(policy)
        M = sp.csr_matrix(
            (probs.ravel(), np.arange(X * A), np.arange(0, X * A + 1, A)), shape=(X, X * A)
        )
        return (M @ self.P_csr).tocsr()

    @classmethod
    def from_dense(cls, loss, P):
        """Build from a dense kernel of shape (X, A, X) or (X*A, X)."""
        P = np.asarray(P, dtype=float)
        if P.ndim == 3:
            X, A, _ = P.shape
            P = P.reshape(X * A, X)
        else:
            X = P.shape[1]
            A = P.shape[0] // X
        return cls(X, A, loss, sp.csr_matrix(P))

    def __repr__(self):
        return f"MdpModel(X={self.num_states}, A={self.num_actions}, nnz={self.P_csr.nnz})"

    # text serialization -------------------------------------------------

    def to_text(self):
        """Serialize to the plain-text MDP format (see README)."""
        lines = [f"{self.num_states} {self.num_actions}"]
        lines.extend(repr(float(v)) for v in self.loss)
        P = self.P_csr
        A = self.num_actions
        for i in range(self.num_pairs):
            x, a = divmod(i, A)
            for j in range(P.indptr[i], P.indptr[i + 1]):
                lines.append(f"{x} {a} {int(P.indices[j])} {float(P.data[j])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = [ln.strip() for ln in text.splitlines()]
        lines = [ln for ln in lines if ln and not ln.startswith("#")]
        if not lines:
            raise InputError("empty MDP text")
        X, A = (int(t) for t in lines[0].split())
        n = X * A
        if len(lines) < 1 + n:
            raise InputError(f"expected {n} loss lines, found {len(lines) - 1}")
        loss = [float(ln) for ln in lines[1 : 1 + n]]
        rows, cols, vals = [], [], []
        for ln in lines[1 + n :]:
            x, a, xp, p = ln.split()
            rows.append(int(x) * A + int(a))
            cols.append(int(xp))
            vals.append(float(p))
        P = sp.csr_matrix((vals, (rows, cols)), shape=(n, X))
        return cls(X, A, loss, P)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())


@dataclass(frozen=True)
class Policy:
    """Row-stochastic table ``probs[x, a] = pi(a | x)``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 2:
            raise DimensionError("policy table must be 2-D (X, A)")
        if probs.min() < 0 or np.any(np.abs(probs.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise InputError("policy rows must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", _readonly(probs))

    @property
    def num_states(self):
        return self.probs.shape[0]

    @property
    def num_actions(self):
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, X, A):
        return cls(np.full((X, A), 1.0 / A))

    @classmethod
    def deterministic(cls, actions, A):
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, A))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)


@dataclass(frozen=True)
class MixingEstimate:
    tau: float
    method: str

    def __post_init__(self):
        if not self.tau > 0:
            raise InputError("mixing constant must be positive")


def sum_over_actions(mu, num_actions):
    """State marginal ``B^T mu`` of a state-action vector."""
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1 or mu.size % num_actions:
        raise DimensionError(f"length {mu.size} is not a multiple of A={num_actions}")
    return mu.reshape(-1, num_actions).sum(axis=1)


def policy_from_measure(values, num_actions):
    """Normalize the positive part of a state-action vector into a policy.

    States whose positive part is identically zero get the uniform action
    distribution.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size % num_actions:
        raise DimensionError(f"length {values.size} is not a multiple of A={num_actions}")
    if np.isnan(values).any():
        raise InputError("NaN in state-action values")
    pos = np.maximum(values, 0.0).reshape(-1, num_actions)
    den = pos.sum(axis=1, keepdims=True)
    zero = den[:, 0] <= 0
    probs = np.divide(pos, den, out=np.full_like(pos, 1.0 / num_actions), where=~zero[:, None])
    # renormalize to absorb rounding in the division
    probs /= probs.sum(axis=1, keepdims=True)
    return Policy(probs)


def policy_from_theta(mu0, features, theta):
    """Policy induced by the (possibly infeasible) measure ``mu0 + Phi theta``."""
    theta = np.asarray(theta, dtype=float)
    if np.isnan(theta).any():
        raise InputError("NaN in theta")
    if theta.shape != (features.dim,):
        raise DimensionError(f"theta has shape {theta.shape}, expected ({features.dim},)")
    mu0 = np.zeros(features.num_pairs) if mu0 is None else np.asarray(mu0, dtype=float)
    if mu0.shape != (features.num_pairs,):
        raise DimensionError("mu0 length does not match the feature matrix")
    return policy_from_measure(mu0 + features.matvec(theta), features.num_actions)


def average_loss(mu, loss):
    return float(np.dot(mu, loss))


def _power_iteration_cap(tol, tau_hint):
    if tau_hint is None:
        return POWER_ITER_FALLBACK_CAP
    return 10 * math.ceil(tau_hint * math.log(1.0 / tol))


def stationary_distribution(model, policy, tol=1e-12, max_iter=None, tau_hint=None):
    """Stationary state-action distribution ``mu(x, a) = v(x) pi(a|x)``.

    Power iteration on the state chain ``P^pi`` started from the uniform
    distribution, stopped once ``||v P^pi - v||_1 <= tol``.
    """
    X, A = model.num_states, model.num_actions
    probs = policy.probs
    if probs.shape != (X, A):
        raise DimensionError(f"policy shape {probs.shape} does not match model ({X}, {A})")
    cap = max_iter if max_iter is not None else _power_iteration_cap(tol, tau_hint)
    PT = model.P_csr.T.tocsr()
    v = np.full(X, 1.0 / X)
    residual = np.inf
    for _ in range(cap + 1):
        w = PT @ (v[:, None] * probs).ravel()
        w /= w.sum()
        residual = np.abs(w - v).sum()
        v = w
        if residual <= tol:
            break
    else:
        raise NonConvergenceError(
            f"power iteration did not reach tol={tol:g} within {cap} iterations "
            f"(residual {residual:.3e})",
            cap=cap,
            residual=residual,
        )
    return (v[:, None] * probs).ravel()


def stationary_distribution_direct(model, policy):
    """Dense linear-system solve of ``v (I - P^pi) = 0, v 1 = 1`` (small X only)."""
    X = model.num_states
    Ppi = model.policy_kernel(policy).toarray()
    M = np.vstack([(np.eye(X) - Ppi).T, np.ones(X)])
    rhs = np.zeros(X + 1)
    rhs[-1] = 1.0
    v = np.linalg.lstsq(M, rhs, rcond=None)[0]
    return (v[:, None] * policy.probs).ravel()


def simulate_losses(model, policy, horizon, seed, start_state=None):
    """Per-step losses ``l(x_t, a_t)`` for ``t = 1..horizon`` along one trajectory.

    The start state is drawn uniformly unless given.  Deterministic in
    ``(model, policy, horizon, seed)``.
    """
    rng = np.random.default_rng(seed)
    X, A = model.num_states, model.num_actions
    cum_pi = np.cumsum(policy.probs, axis=1).ravel().tolist()
    P = model.P_csr
    indptr = P.indptr.tolist()
    nxt = P.indices.tolist()
    cum_p = []
    for i in range(model.num_pairs):
        cum_p.extend(np.cumsum(P.data[indptr[i] : indptr[i + 1]]).tolist())
    loss = model.loss.tolist()
    x = int(rng.integers(X)) if start_state is None else int(start_state)
    out = np.empty(horizon)
    chunk = 65536
    t = 0
    right = bisect.bisect_right
    while t < horizon:
        n = min(chunk, horizon - t)
        ua = rng.random(n).tolist()
        ux = rng.random(n).tolist()
        for k in range(n):
            base = x * A
            a = right(cum_pi, ua[k], base, base + A - 1) - base
            i = base + a
            out[t + k] = loss[i]
            lo, hi = indptr[i], indptr[i + 1]
            x = nxt[min(right(cum_p, ux[k], lo, hi), hi - 1)]
        t += n
    return out


def simulate_average_loss(model, policy, horizon, burn_in, seed):
    """Empirical mean loss over steps ``burn_in < t <= horizon``."""
    if not horizon > burn_in >= 0:
        raise InputError("need horizon > burn_in >= 0")
    losses = simulate_losses(model, policy, horizon, seed)
    return float(losses[burn_in:].mean())


def batch_means_stderr(samples, num_batches=50):
    """Standard error of the mean of a correlated series by batch means."""
    samples = np.asarray(samples)
    n = samples.size // num_batches * num_batches
    means = samples[:n].reshape(num_batches, -1).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(num_batches))


def _second_eigen_modulus(kernel, block=4, tol=1e-14, max_iter=100_000):
    """Largest eigenvalue modulus of ``P^pi`` on the sum-zero row-vector subspace.

    Orthogonal (block power) iteration deflated against the Perron root, with
    Rayleigh-Ritz extraction so complex-conjugate pairs are resolved.
    """
    X = kernel.shape[0]
    k = min(block, X - 1)
    KT = kernel.T.tocsr()
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((X, k))
    Z -= Z.mean(axis=0)
    Z, _ = np.linalg.qr(Z)
    prev = np.inf
    stable = 0
    for _ in range(max_iter):
        W = KT @ Z
        W -= W.mean(axis=0)
        H = Z.T @ W
        est = float(np.max(np.abs(np.linalg.eigvals(H)))) if k else 0.0
        if np.linalg.norm(W) < 1e-300:
            return 0.0
        Z, _ = np.linalg.qr(W)
        if abs(est - prev) <= tol * max(1.0, est):
            stable += 1
            if stable >= 3:
                return est
        else:
            stable = 0
        prev = est
    return est


def _dobrushin(M):
    """max over state pairs of half the L1 distance between rows."""
    X = M.shape[0]
    worst = 0.0
    for i in range(X):
        worst = max(worst, 0.5 * np.abs(M[i + 1 :] - M[i]).sum(axis=1).max(initial=0.0))
    return worst


def estimate_mixing_time(model, policy, method="spectral", max_steps=100_000):
    """Estimate the mixing constant tau of ``P^pi``.

    ``spectral``: ``-1 / ln|lambda_2|`` from deflated block power iteration.
    ``trajectory-contraction``: the smallest k such that every pair of point
    masses (which attains the worst L1 contraction) is contracted by at least
    ``e^{-1}`` after k steps.
    """
    X = model.num_states
    if X == 1:
        return MixingEstimate(MIXING_FLOOR, method)
    kernel = model.policy_kernel(policy)
    if method == "spectral":
        lam2 = _second_eigen_modulus(kernel)
        if lam2 >= 1.0 - 1e-12:
            raise MixingError(f"second eigenvalue modulus {lam2:.15f} is not below 1")
        if lam2 <= LAMBDA2_ZERO_TOL:
            return MixingEstimate(MIXING_FLOOR, method)
        return MixingEstimate(max(-1.0 / math.log(lam2), MIXING_FLOOR), method)
    if method == "trajectory-contraction":
        if X > 5000:
            raise MixingError("trajectory-contraction estimator is limited to X <= 5000")
        K = kernel.toarray()
        M = K.copy()
        for k in range(1, max_steps + 1):
            if _dobrushin(M) <= math.exp(-1.0):
                return MixingEstimate(float(k), method)
            M = M @ K
        raise MixingError(f"no contraction by e^-1 within {max_steps} steps")
    raise InputError(f"unknown mixing estimator {method!r}")
