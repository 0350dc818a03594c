"""Random small MDP instances for tests and benchmarks."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .mdp import MdpModel


def random_unichain_mdp(X, A, seed, branching=3):
    """Random MDP in which every policy induces an irreducible aperiodic chain.

    Each pair ``(x, a)`` moves to a Dirichlet-weighted support containing
    ``x`` itself, ``x + 1 mod X`` and ``branching`` random states.  The cycle
    through ``x + 1`` makes every policy irreducible, the self-loop makes it
    aperiodic.  Losses are uniform on [0, 1].
    """
    rng = np.random.default_rng(seed)
    rows, cols, vals = [], [], []
    for x in range(X):
        for a in range(A):
            support = {x, (x + 1) % X}
            support.update(rng.choice(X, size=min(branching, X), replace=False).tolist())
            support = sorted(support)
            w = rng.dirichlet(np.ones(len(support)))
            rows.extend([x * A + a] * len(support))
            cols.extend(support)
            vals.extend(w.tolist())
    P = sp.csr_matrix((vals, (rows, cols)), shape=(X * A, X))
    # exact renormalization so rows sum to 1 within rounding
    sums = np.asarray(P.sum(axis=1)).ravel()
    P = sp.diags(1.0 / sums) @ P
    loss = rng.uniform(0.0, 1.0, X * A)
    return MdpModel(X, A, loss, P)
