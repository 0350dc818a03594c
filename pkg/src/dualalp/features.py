"""Feature matrices, sampling distributions and the constraint-violation functionals.

A feature model exposes exactly what the large-scale algorithms are allowed
to touch in unit time: single rows of Phi, the aggregates ``l^T Phi`` and
``1^T Phi``, single columns of ``(P - B)^T Phi`` and the offset ``mu0``.  The
full products (``values``, ``v1``, ``v2``) are O(XA) and reserved for
diagnostics and tests.
"""
from __future__ import annotations

import logging
import math

import numpy as np
import scipy.sparse as sp

from .errors import ContractViolation, DimensionError, InputError
from .mdp import sum_over_actions

log = logging.getLogger(__name__)

ENUMERATION_LIMIT = 100_000
PB_PRECOMPUTE_LIMIT = 5_000_000


class FeatureMatrix:
    """Interface for a (X*A) x d feature matrix bound to an MDP.

    Subclasses provide ``row``, ``matvec`` and ``rmatvec``; everything else is
    derived here from those plus the model's sparse column access.
    """

    def __init__(self, model, dim, mu0=None):
        self.model = model
        self.dim = int(dim)
        if self.dim < 1:
            raise DimensionError("feature dimension must be >= 1")
        n = model.num_pairs
        if mu0 is None:
            mu0 = np.zeros(n)
        mu0 = np.asarray(mu0, dtype=float)
        if mu0.shape != (n,):
            raise DimensionError(f"mu0 has shape {mu0.shape}, expected ({n},)")
        if np.any(mu0 != 0):
            if mu0.min() < 0 or abs(mu0.sum() - 1) > 1e-10:
                raise InputError("a nonzero mu0 must be a probability vector")
            if np.abs(model.stationarity_residual(mu0)).sum() > 1e-8:
                raise InputError("a nonzero mu0 must be stationary")
        mu0.flags.writeable = False
        self.mu0 = mu0
        self.pb_mu0 = model.stationarity_residual(mu0)
        self._pb_cache = None

    # unit-time access -----------------------------------------------------

    @property
    def num_pairs(self):
        return self.model.num_pairs

    @property
    def num_states(self):
        return self.model.num_states

    @property
    def num_actions(self):
        return self.model.num_actions

    def row(self, pair):
        raise NotImplementedError

    def rows(self, pairs):
        return np.array([self.row(int(i)) for i in pairs]).reshape(len(pairs), self.dim)

    def matvec(self, theta):
        """``Phi @ theta`` (length X*A)."""
        raise NotImplementedError

    def rmatvec(self, y):
        """``Phi.T @ y`` (length d)."""
        raise NotImplementedError

    def _init_aggregates(self):
        self.lT_phi = self.rmatvec(self.model.loss)
        self.oneT_phi = self.rmatvec(np.ones(self.num_pairs))
        if self.num_states * self.dim <= PB_PRECOMPUTE_LIMIT:
            self._pb_cache = self._pb_all()

    def pb_column(self, state):
        """``(P - B)_{:, state}^T Phi``: incoming rows weighted by P minus the state's own rows."""
        if self._pb_cache is not None:
            return self._pb_cache[state]
        pairs, probs = self.model.column(state)
        out = probs @ self.rows(pairs) if len(pairs) else np.zeros(self.dim)
        A = self.num_actions
        own = self.rows(np.arange(state * A, (state + 1) * A))
        return out - own.sum(axis=0)

    def pb_columns(self, states):
        if self._pb_cache is not None:
            return self._pb_cache[states]
        return np.array([self.pb_column(int(s)) for s in states]).reshape(len(states), self.dim)

    def _pb_all(self):
        """Dense (X, d) matrix ``(P - B)^T Phi`` built column by column of Phi."""
        out = np.empty((self.num_states, self.dim))
        e = np.zeros(self.dim)
        for i in range(self.dim):
            e[i] = 1.0
            out[:, i] = self.model.stationarity_residual(self.matvec(e))
            e[i] = 0.0
        return out

    # O(XA) diagnostics ----------------------------------------------------

    def values(self, theta):
        """``mu0 + Phi theta``."""
        return self.mu0 + self.matvec(np.asarray(theta, dtype=float))

    def stationarity(self, theta):
        """``(P - B)^T (mu0 + Phi theta)`` (length X)."""
        return self.model.stationarity_residual(self.values(theta))

    def v1(self, theta):
        """Total negative mass ``sum |[mu0 + Phi theta]_-|``."""
        return float(-np.minimum(self.values(theta), 0.0).sum())

    def v2(self, theta):
        """Total stationarity violation ``||(P - B)^T (mu0 + Phi theta)||_1``."""
        return float(np.abs(self.stationarity(theta)).sum())

    def objective(self, theta):
        """LP objective ``l^T (mu0 + Phi theta)``."""
        return float(self.model.loss @ self.mu0 + self.lT_phi @ np.asarray(theta, dtype=float))

    def to_dense(self):
        e = np.zeros(self.dim)
        cols = []
        for i in range(self.dim):
            e[i] = 1.0
            cols.append(self.matvec(e))
            e[i] = 0.0
        return np.column_stack(cols)


class MatrixFeatures(FeatureMatrix):
    """Feature matrix held in memory, dense ndarray or scipy sparse."""

    def __init__(self, model, phi, mu0=None):
        if sp.issparse(phi):
            phi = sp.csr_matrix(phi, dtype=float)
            phi.sort_indices()
        else:
            phi = np.array(phi, dtype=float)
            if phi.ndim == 1:
                phi = phi[:, None]
        if phi.shape[0] != model.num_pairs:
            raise DimensionError(f"Phi has {phi.shape[0]} rows, expected {model.num_pairs}")
        super().__init__(model, phi.shape[1], mu0)
        self.phi = phi
        self._sparse = sp.issparse(phi)
        if not self._sparse:
            self.phi.flags.writeable = False
        self._init_aggregates()

    def row(self, pair):
        if self._sparse:
            p = self.phi
            lo, hi = p.indptr[pair], p.indptr[pair + 1]
            out = np.zeros(self.dim)
            out[p.indices[lo:hi]] = p.data[lo:hi]
            return out
        return self.phi[pair]

    def rows(self, pairs):
        pairs = np.asarray(pairs, dtype=int)
        if self._sparse:
            return self.phi[pairs].toarray()
        return self.phi[pairs]

    def matvec(self, theta):
        return np.asarray(self.phi @ theta).ravel()

    def rmatvec(self, y):
        return np.asarray(self.phi.T @ y).ravel()


class SamplingModel:
    """Distributions q1 over state-action pairs and q2 over states, with C1, C2.

    ``C1 = max ||Phi_(x,a)|| / q1(x,a)`` and ``C2 = max ||(P-B)_{:,x}^T Phi|| / q2(x)``.
    """

    def __init__(self, q1, q2, C1, C2):
        q1 = np.asarray(q1, dtype=float)
        q2 = np.asarray(q2, dtype=float)
        for name, q in (("q1", q1), ("q2", q2)):
            if q.min() < 0 or abs(q.sum() - 1) > 1e-10:
                raise InputError(f"{name} must be a probability vector")
            q.flags.writeable = False
        self.q1, self.q2 = q1, q2
        self.C1, self.C2 = float(C1), float(C2)
        self._uniform1 = bool(np.all(q1 == q1[0]))
        self._uniform2 = bool(np.all(q2 == q2[0]))
        self._cdf1 = None if self._uniform1 else np.cumsum(q1)
        self._cdf2 = None if self._uniform2 else np.cumsum(q2)

    @staticmethod
    def _draw(rng, n, size, cdf):
        if cdf is None:
            return rng.integers(0, size, n)
        idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
        return np.minimum(idx, size - 1)

    def sample_pairs(self, rng, n):
        return self._draw(rng, n, self.q1.size, self._cdf1)

    def sample_states(self, rng, n):
        return self._draw(rng, n, self.q2.size, self._cdf2)

    @classmethod
    def uniform(cls, features, C1=None, C2=None):
        """Uniform q1, q2; C1, C2 enumerated exactly when X*A is small, else declared."""
        q1 = np.full(features.num_pairs, 1.0 / features.num_pairs)
        q2 = np.full(features.num_states, 1.0 / features.num_states)
        if C1 is None or C2 is None:
            c1, c2 = sampling_constants(features, q1, q2)
            C1 = c1 if C1 is None else C1
            C2 = c2 if C2 is None else C2
        return cls(q1, q2, C1, C2)

    @classmethod
    def norm_proportional(cls, features, floor_weight=0.1):
        """``q1 ~ ||Phi_(x,a)||``, ``q2 ~ ||B_{:,x}^T Phi||``, each mixed with uniform.

        The uniform component keeps q strictly positive where a numerator can
        be nonzero while its proposal weight is not.
        """
        _check_enumerable(features)
        phi = features.to_dense()
        r1 = np.linalg.norm(phi, axis=1)
        A = features.num_actions
        r2 = np.linalg.norm(phi.reshape(features.num_states, A, -1).sum(axis=1), axis=1)
        q1 = _mix_with_uniform(r1, floor_weight)
        q2 = _mix_with_uniform(r2, floor_weight)
        C1, C2 = sampling_constants(features, q1, q2)
        return cls(q1, q2, C1, C2)


def _mix_with_uniform(weights, floor_weight):
    n = weights.size
    total = weights.sum()
    base = weights / total if total > 0 else np.full(n, 1.0 / n)
    q = (1 - floor_weight) * base + floor_weight / n
    return q / q.sum()


def _check_enumerable(features):
    if features.num_pairs > ENUMERATION_LIMIT:
        raise ContractViolation(
            f"X*A = {features.num_pairs} exceeds the enumeration limit {ENUMERATION_LIMIT}; "
            "declare analytical C1/C2 bounds instead"
        )


def sampling_constants(features, q1, q2):
    """Exact C1, C2 by enumerating every pair and state."""
    _check_enumerable(features)
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    r1 = np.linalg.norm(features.rows(np.arange(features.num_pairs)), axis=1)
    r2 = np.linalg.norm(features.pb_columns(np.arange(features.num_states)), axis=1)
    return _ratio_max(r1, q1, "q1"), _ratio_max(r2, q2, "q2")


def _ratio_max(num, q, name):
    # tolerance for exact zeros that carry roundoff from (P - B) cancellation
    nz = num > 1e-14
    if np.any(q[nz] <= 0):
        raise ContractViolation(f"{name} is zero where the feature norm is not")
    if not nz.any():
        return 0.0
    return float(np.max(num[nz] / q[nz]))


class ThetaDomain:
    """``{theta : a^T theta = b, ||theta||_2 <= S}`` with ``a = Phi^T 1``, ``b = 1 - mu0^T 1``."""

    def __init__(self, S, a, b):
        self.S = float(S)
        if not self.S > 0:
            raise InputError("radius S must be positive")
        self.a = np.asarray(a, dtype=float)
        self.b = float(b)
        self._aa = float(self.a @ self.a)
        if self._aa == 0.0:
            if self.b != 0.0:
                raise InputError("empty domain: a = 0 but b != 0")
            self.center = np.zeros_like(self.a)
        else:
            self.center = (self.b / self._aa) * self.a
            dist = abs(self.b) / math.sqrt(self._aa)
            if dist > self.S:
                raise InputError(
                    f"empty domain: hyperplane is at distance {dist:.6g} > S = {self.S:.6g}"
                )
        self.radius = math.sqrt(max(self.S**2 - float(self.center @ self.center), 0.0))
        self._tiebreak = self._hyperplane_direction()

    @classmethod
    def for_features(cls, features, S):
        return cls(S, features.oneT_phi, 1.0 - float(features.mu0.sum()))

    def _hyperplane_direction(self):
        d = self.a.size
        if self._aa == 0.0:
            e = np.zeros(d)
            e[0] = 1.0
            return e
        k = int(np.argmin(np.abs(self.a)))
        e = np.zeros(d)
        e[k] = 1.0
        e -= (self.a[k] / self._aa) * self.a
        n = np.linalg.norm(e)
        return e / n if n > 1e-12 else np.zeros(d)

    def project(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self._aa == 0.0:
            p = theta.copy()
        else:
            p = theta - ((self.a @ theta - self.b) / self._aa) * self.a
        if p @ p <= self.S**2:
            return p
        diff = p - self.center
        n = math.sqrt(diff @ diff)
        if n == 0.0:
            return self.center + self.radius * self._tiebreak
        return self.center + (self.radius / n) * diff

    def contains(self, theta, tol=1e-9):
        theta = np.asarray(theta, dtype=float)
        return (
            abs(self.a @ theta - self.b) <= tol
            and np.linalg.norm(theta) <= self.S * (1 + 1e-12)
        )


def pb_column_dense(model, phi, state):
    """Naive ``(P - B)^T Phi`` column via the dense kernel; test oracle."""
    P = model.dense_transitions()
    A = model.num_actions
    B = np.kron(np.eye(model.num_states), np.ones((A, 1)))
    return (P - B)[:, state] @ phi


def drop_zero_columns(phi):
    keep = np.asarray(np.abs(phi).sum(axis=0)).ravel() > 0
    if not keep.all():
        log.warning("dropping %d all-zero feature columns", int((~keep).sum()))
    return keep


__all__ = [
    "FeatureMatrix",
    "MatrixFeatures",
    "SamplingModel",
    "ThetaDomain",
    "sampling_constants",
    "pb_column_dense",
    "sum_over_actions",
]
