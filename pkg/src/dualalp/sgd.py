"""Projected stochastic subgradient descent on the penalized dual ALP surrogate.

The surrogate is

    c(theta) = l^T (mu0 + Phi theta) + H * V1(theta) + H * V2(theta)

with V1 the total negative mass and V2 the total stationarity violation of
``mu0 + Phi theta``.  Each iteration samples one (or ``batch_size``) rows of
Phi from q1 and columns of ``(P - B)^T Phi`` from q2, forms an unbiased
subgradient estimate, steps, and projects back onto the parameter domain.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, InputError
from .features import ThetaDomain


@dataclass(frozen=True)
class SgdConfig:
    T: int
    H: float
    eta0: float
    S: float
    seed: int = 0
    checkpoint_every: int = 1000
    halving_period: int | None = None
    batch_size: int = 1

    def __post_init__(self):
        if self.T < 1:
            raise InputError("T must be >= 1")
        if not self.H > 0:
            raise InputError("H must be positive")
        if not self.eta0 > 0 or not self.S > 0:
            raise InputError("eta0 and S must be positive")
        if self.checkpoint_every < 1 or self.batch_size < 1:
            raise InputError("checkpoint_every and batch_size must be >= 1")
        if self.halving_period is not None and self.halving_period < 1:
            raise InputError("halving_period must be >= 1")

    def step_size(self, t):
        """Learning rate at round t (1-based)."""
        if self.halving_period is None:
            return self.eta0
        return self.eta0 * 0.5 ** ((t - 1) // self.halving_period)

    @staticmethod
    def gradient_bound(d, H, C1, C2):
        """``G' = sqrt(d) + H (C1 + C2)``."""
        return math.sqrt(d) + H * (C1 + C2)

    @classmethod
    def theorem1(cls, epsilon, S, d, C1, C2, seed=0, checkpoint_every=None, batch_size=1):
        """Constant-rate preset: T = ceil(1/eps^4), H = 1/eps, eta = S / (G' sqrt(T))."""
        if not 0 < epsilon < 1:
            raise InputError("epsilon must lie in (0, 1)")
        T = math.ceil(epsilon**-4 - 1e-9)
        H = 1.0 / epsilon
        G = cls.gradient_bound(d, H, C1, C2)
        eta = S / (G * math.sqrt(T))
        every = checkpoint_every or max(1, T // 20)
        return cls(T=T, H=H, eta0=eta, S=S, seed=seed, checkpoint_every=every, batch_size=batch_size)

    @classmethod
    def halving(cls, T, H, eta0, period, S, seed=0, checkpoint_every=1000, batch_size=1):
        """Experimental preset: start at eta0 and halve every ``period`` rounds."""
        return cls(
            T=T, H=H, eta0=eta0, S=S, seed=seed, checkpoint_every=checkpoint_every,
            halving_period=period, batch_size=batch_size,
        )


@dataclass
class SgdTrace:
    """Checkpoint diagnostics of the running-average iterate."""

    t: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    v1: list = field(default_factory=list)
    v2: list = field(default_factory=list)
    surrogate: list = field(default_factory=list)
    theta_hat: np.ndarray | None = None
    iterates: np.ndarray | None = None

    HEADER = ("t", "objective", "v1", "v2", "surrogate")

    def record(self, t, objective, v1, v2, surrogate):
        self.t.append(t)
        self.objective.append(objective)
        self.v1.append(v1)
        self.v2.append(v2)
        self.surrogate.append(surrogate)

    def rows(self):
        return list(zip(self.t, self.objective, self.v1, self.v2, self.surrogate))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for t, *vals in self.rows():
            w.writerow([t, *(repr(float(v)) for v in vals)])
        return buf.getvalue()


def surrogate_cost(features, theta, H):
    """Exact ``c(theta)`` from the full O(XA) sums."""
    return features.objective(theta) + H * features.v1(theta) + H * features.v2(theta)


def _sign(z):
    return (z > 0).astype(float) - (z < 0).astype(float)


def full_subgradient(features, theta, H):
    """Exact subgradient of the surrogate, with ``s(0) = 0`` and a strict ``< 0`` indicator."""
    theta = np.asarray(theta, dtype=float)
    model = features.model
    neg = (features.values(theta) < 0).astype(float)
    s = _sign(features.stationarity(theta))
    # sum_x' s(x') (P - B)_{:,x'}^T Phi  ==  Phi^T ((P - B) s)
    pb_s = model.P_csr @ s - np.repeat(s, model.num_actions)
    return features.lT_phi - H * features.rmatvec(neg) + H * features.rmatvec(pb_s)


def gradient_estimate(features, sampling, theta, pairs, states, H):
    """Importance-weighted subgradient estimate from sampled pairs and states.

    ``pairs`` and ``states`` may hold one index each (the plain estimator) or
    a mini-batch, in which case the sampled terms are averaged.
    """
    theta = np.asarray(theta, dtype=float)
    pairs = np.atleast_1d(pairs)
    states = np.atleast_1d(states)
    q1 = sampling.q1[pairs]
    q2 = sampling.q2[states]
    if np.any(q1 <= 0) or np.any(q2 <= 0):
        raise ContractViolation("sampled an index with zero q-mass")
    rows = features.rows(pairs)
    z = features.mu0[pairs] + rows @ theta
    w1 = (z < 0) / q1
    cols = features.pb_columns(states)
    w2 = _sign(features.pb_mu0[states] + cols @ theta) / q2
    g = features.lT_phi - (H / pairs.size) * (w1 @ rows) + (H / states.size) * (w2 @ cols)
    return g


def project_theta(theta, domain):
    return domain.project(theta)


def lemma4_bound(S, G, T, d, delta):
    """High-probability suboptimality bound of the averaged iterate after T rounds."""
    return S * G / math.sqrt(T) + math.sqrt(
        (1 + 4 * S**2 * T) / T**2 * (2 * math.log(1 / delta) + d * math.log(1 + S**2 * T / d))
    )


def run_sgd(config, features, sampling, domain=None, record_iterates=False):
    """Run the projected stochastic subgradient method.

    Returns the averaged iterate ``theta_hat_T`` and its checkpoint trace.
    Deterministic given ``config.seed``.
    """
    if domain is None:
        domain = ThetaDomain.for_features(features, config.S)
    rng = np.random.default_rng(config.seed)
    T, H, n = config.T, config.H, config.batch_size
    theta = domain.project(np.zeros(features.dim))
    theta_hat = np.zeros(features.dim)
    trace = SgdTrace()
    iterates = np.empty((T, features.dim)) if record_iterates else None
    chunk = min(T, 1 << 16)
    pairs = states = None
    for t in range(1, T + 1):
        theta_hat += (theta - theta_hat) / t
        if record_iterates:
            iterates[t - 1] = theta
        if t % config.checkpoint_every == 0 or t == T:
            trace.record(
                t,
                features.objective(theta_hat),
                features.v1(theta_hat),
                features.v2(theta_hat),
                surrogate_cost(features, theta_hat, H),
            )
        if t == T:
            break
        k = (t - 1) % chunk
        if k == 0:
            pairs = sampling.sample_pairs(rng, chunk * n).reshape(chunk, n)
            states = sampling.sample_states(rng, chunk * n).reshape(chunk, n)
        g = gradient_estimate(features, sampling, theta, pairs[k], states[k], H)
        theta = domain.project(theta - config.step_size(t) * g)
    trace.theta_hat = theta_hat
    trace.iterates = iterates
    return theta_hat, trace
