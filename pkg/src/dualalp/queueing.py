"""Four-queue, two-server re-entrant network (Rybko-Stolyar) as a finite MDP.

Customers arrive at queue 1 (prob a1) and queue 3 (prob a3).  Queue 1 feeds
queue 2 and queue 3 feeds queue 4; queues 2 and 4 exit the network.  Server 1
works on queue 1 or 4, server 2 on queue 2 or 3, and neither may idle.  A
served queue completes one job with probability d_i, provided it is nonempty
at the start of the step.  Queue lengths are capped at B_i; overflowing jobs
are lost.

Joint actions are numbered ``a = 2 * s1 + s2`` with ``s1 = 0`` serving queue
1, ``s1 = 1`` queue 4, ``s2 = 0`` queue 2 and ``s2 = 1`` queue 3.
"""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InputError, SizeGuardError
from .features import ENUMERATION_LIMIT, MatrixFeatures, SamplingModel, drop_zero_columns
from .mdp import MdpModel, Policy

NUM_ACTIONS = 4
DEFAULT_MAX_PAIRS = 2_000_000
LOSS_INTERVALS = [(5 * k + 1, 5 * k + 5) for k in range(10)]
QUEUE_INTERVALS = [(0, 10), (11, 20), (21, 25)]


@dataclass(frozen=True)
class QueueNetConfig:
    a1: float = 0.08
    a3: float = 0.08
    d1: float = 0.12
    d2: float = 0.12
    d3: float = 0.28
    d4: float = 0.28
    B1: int = 38
    B2: int = 25
    B3: int = 25
    B4: int = 38

    def __post_init__(self):
        for name in ("a1", "a3", "d1", "d2", "d3", "d4"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise InputError(f"{name} must lie in (0, 1), got {v}")
        for name in ("B1", "B2", "B3", "B4"):
            if int(getattr(self, name)) < 1:
                raise InputError(f"{name} must be a positive integer")

    @classmethod
    def reduced(cls, **kw):
        """Desk-scale benchmark with buffers (4, 3, 3, 4): X*A = 1600."""
        return cls(**{"B1": 4, "B2": 3, "B3": 3, "B4": 4, **kw})

    @property
    def caps(self):
        return np.array([self.B1, self.B2, self.B3, self.B4])

    @property
    def num_states(self):
        return int(np.prod(self.caps + 1))

    def as_dict(self):
        return asdict(self)


def queue_states(config):
    """All states as an (X, 4) integer array, in index order (queue 4 fastest)."""
    ranges = [np.arange(b + 1) for b in config.caps]
    grid = np.meshgrid(*ranges, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)


def state_index(config, q):
    q = np.asarray(q)
    B = config.caps + 1
    return ((q[..., 0] * B[1] + q[..., 1]) * B[2] + q[..., 2]) * B[3] + q[..., 3]


def build_queue_mdp(config, max_pairs=DEFAULT_MAX_PAIRS):
    """Exact transition kernel by enumerating the independent Bernoulli outcomes."""
    X = config.num_states
    if X * NUM_ACTIONS > max_pairs:
        need = X * NUM_ACTIONS * 16 * 12 * 2
        raise SizeGuardError(
            f"X*A = {X * NUM_ACTIONS} exceeds max_pairs = {max_pairs} "
            f"(roughly {need / 2**30:.1f} GiB of kernel storage)"
        )
    Q = queue_states(config)
    caps = config.caps
    nonempty = Q > 0
    arr = np.array([config.a1, config.a3])
    dep = np.array([config.d1, config.d2, config.d3, config.d4])
    rows, cols, vals = [], [], []
    for a in range(NUM_ACTIONS):
        s1, s2 = divmod(a, 2)
        served = (3 if s1 else 0, 2 if s2 else 1)
        for A1, A3, Da, Db in itertools.product((0, 1), repeat=4):
            p = (
                (arr[0] if A1 else 1 - arr[0])
                * (arr[1] if A3 else 1 - arr[1])
                * (dep[served[0]] if Da else 1 - dep[served[0]])
                * (dep[served[1]] if Db else 1 - dep[served[1]])
            )
            D = np.zeros((X, 4), dtype=int)
            D[:, served[0]] = Da
            D[:, served[1]] = Db
            D *= nonempty
            nxt = Q.copy()
            nxt[:, 0] += A1 - D[:, 0]
            nxt[:, 1] += D[:, 0] - D[:, 1]
            nxt[:, 2] += A3 - D[:, 2]
            nxt[:, 3] += D[:, 2] - D[:, 3]
            nxt = np.clip(nxt, 0, caps)
            rows.append(np.arange(X) * NUM_ACTIONS + a)
            cols.append(state_index(config, nxt))
            vals.append(np.full(X, p))
    P = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(X * NUM_ACTIONS, X),
    )
    P.sum_duplicates()
    sums = np.asarray(P.sum(axis=1)).ravel()
    P = sp.diags(1.0 / sums) @ P
    loss = np.repeat(Q.sum(axis=1) / caps.sum(), NUM_ACTIONS)
    return MdpModel(X, NUM_ACTIONS, loss, P)


def heuristic_policy(kind, config):
    """LONGER (serve the longer queue, fair coin on ties) or LBFS (downstream first)."""
    Q = queue_states(config)
    q1, q2, q3, q4 = Q.T
    if kind == "LONGER":
        p4 = np.where(q4 > q1, 1.0, np.where(q4 < q1, 0.0, 0.5))
        p3 = np.where(q3 > q2, 1.0, np.where(q3 < q2, 0.0, 0.5))
    elif kind == "LBFS":
        p4 = (q4 > 0).astype(float)
        p3 = (q2 == 0).astype(float)
    else:
        raise InputError(f"unknown heuristic {kind!r}")
    probs = np.stack([(1 - p4) * (1 - p3), (1 - p4) * p3, p4 * (1 - p3), p4 * p3], axis=1)
    return Policy(probs)


def feature_labels(num_heuristics=2):
    """Labels of every column the construction produces, before dropping."""
    labels = [f"heuristic{k}" for k in range(num_heuristics)]
    for lo, hi in LOSS_INTERVALS:
        labels.extend(f"loss[{lo},{hi}]/a{a}" for a in range(NUM_ACTIONS))
    for combo in itertools.product(range(len(QUEUE_INTERVALS)), repeat=4):
        tag = "tuple" + "".join(str(c + 1) for c in combo)
        labels.extend(f"{tag}/a{a}" for a in range(NUM_ACTIONS))
    return labels


def feature_columns(config):
    """Indicator columns (unnormalized) and their labels, before any dropping."""
    Q = queue_states(config)
    X = Q.shape[0]
    total = np.repeat(Q.sum(axis=1), NUM_ACTIONS)
    action = np.tile(np.arange(NUM_ACTIONS), X)
    Qp = np.repeat(Q, NUM_ACTIONS, axis=0)
    cols, labels = [], []
    for lo, hi in LOSS_INTERVALS:
        hit = (total >= lo) & (total <= hi)
        for a in range(NUM_ACTIONS):
            cols.append(np.flatnonzero(hit & (action == a)))
            labels.append(f"loss[{lo},{hi}]/a{a}")
    member = [
        [(Qp[:, i] >= lo) & (Qp[:, i] <= hi) for lo, hi in QUEUE_INTERVALS] for i in range(4)
    ]
    for combo in itertools.product(range(len(QUEUE_INTERVALS)), repeat=4):
        hit = member[0][combo[0]] & member[1][combo[1]] & member[2][combo[2]] & member[3][combo[3]]
        for a in range(NUM_ACTIONS):
            cols.append(np.flatnonzero(hit & (action == a)))
            labels.append("tuple" + "".join(str(c + 1) for c in combo) + f"/a{a}")
    return cols, labels


def build_features(config, model, heuristic_mus, mu0=None):
    """Heuristic stationary distributions plus loss-interval and queue-interval indicators.

    Every column is scaled to sum to one; all-zero columns are dropped.
    Returns the feature matrix and the labels of the retained columns.
    """
    n = model.num_pairs
    idx_cols, ind_labels = feature_columns(config)
    data, rows, colidx = [], [], []
    labels = []
    for k, mu in enumerate(heuristic_mus):
        mu = np.asarray(mu, dtype=float)
        nz = np.flatnonzero(mu)
        rows.append(nz)
        colidx.append(np.full(nz.size, k))
        data.append(mu[nz] / mu.sum())
        labels.append(f"heuristic{k}")
    base = len(heuristic_mus)
    for j, idx in enumerate(idx_cols):
        rows.append(idx)
        colidx.append(np.full(idx.size, base + j))
        data.append(np.full(idx.size, 1.0 / idx.size) if idx.size else np.zeros(0))
    labels.extend(ind_labels)
    phi = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(colidx))),
        shape=(n, base + len(idx_cols)),
    )
    keep = drop_zero_columns(phi)
    phi = phi[:, np.flatnonzero(keep)]
    labels = [lab for lab, k in zip(labels, keep) if k]
    return MatrixFeatures(model, phi, mu0=mu0), labels


def queue_sampling(features, kind="uniform"):
    """q1/q2 for the queue features; analytical C1/C2 bounds above the enumeration limit."""
    if kind == "norm":
        return SamplingModel.norm_proportional(features)
    if kind != "uniform":
        raise InputError(f"unknown sampler {kind!r}")
    if features.num_pairs <= ENUMERATION_LIMIT:
        return SamplingModel.uniform(features)
    C1, C2 = declared_constants(features)
    return SamplingModel.uniform(features, C1=C1, C2=C2)


def declared_constants(features, num_heuristics=2):
    """Uniform-q bounds ``C1 <= XA max||row||`` and ``C2 <= X (N + A) max||row||``.

    N is the largest number of pairs feeding any one state.  The row-norm bound
    uses each column's largest entry, so it costs O(d) after construction.
    """
    phi = features.phi.tocsc()
    colmax = np.array([phi.data[phi.indptr[j] : phi.indptr[j + 1]].max() for j in range(phi.shape[1])])
    # a row touches at most the heuristic columns, one loss interval and one tuple
    heur = colmax[:num_heuristics]
    row_bound = np.sqrt((heur**2).sum() + 2 * colmax[num_heuristics:].max() ** 2)
    model = features.model
    N = int(np.diff(model.P_csc.indptr).max())
    C1 = features.num_pairs * row_bound
    C2 = features.num_states * (N + features.num_actions) * row_bound
    return float(C1), float(C2)
