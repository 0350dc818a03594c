"""Dense two-phase revised primal simplex with Bland's rule.

Problems are stated as

    min c^T x  s.t.  A_eq x = b_eq,  A_ge x >= b_ge,  lo <= x <= hi

and reduced to standard form ``min c^T z, A z = b, z >= 0`` by shifting,
reflecting or splitting variables.  Tall problems (many more rows than
columns, as in the sampled ALP) are solved through their LP dual, which has
one row per column of the original; the primal point is read off the dual's
simplex multipliers and re-certified.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import DimensionError, NonConvergenceError

PIVOT_TOL = 1e-9
# entering-column entries this small relative to the largest are not pivot candidates
REL_PIVOT_TOL = 1e-7
DEGENERATE_LIMIT = 50
PERTURBATION = 1e-9
CERT_TOL = 1e-8
MAX_PIVOTS = 200_000

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


def _as2d(a, n):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return np.zeros((0, n))
    return a.reshape(-1, n)


@dataclass
class LpProblem:
    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_ge: np.ndarray | None = None
    b_ge: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A_eq = _as2d(self.A_eq if self.A_eq is not None else [], n)
        self.b_eq = np.asarray(self.b_eq if self.b_eq is not None else [], dtype=float).ravel()
        self.A_ge = _as2d(self.A_ge if self.A_ge is not None else [], n)
        self.b_ge = np.asarray(self.b_ge if self.b_ge is not None else [], dtype=float).ravel()
        self.lo = np.zeros(n) if self.lo is None else np.asarray(self.lo, dtype=float).ravel()
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).ravel()
        if self.A_eq.shape[0] != self.b_eq.size or self.A_ge.shape[0] != self.b_ge.size:
            raise DimensionError("constraint rows and right-hand sides disagree in length")
        if self.lo.size != n or self.hi.size != n:
            raise DimensionError("bounds must have one entry per variable")
        for arr in (self.c, self.A_eq, self.b_eq, self.A_ge, self.b_ge, self.lo, self.hi):
            if np.isnan(arr).any():
                raise ValueError("NaN in LP data")
        for arr in (self.c, self.A_eq, self.b_eq, self.A_ge, self.b_ge):
            if not np.all(np.isfinite(arr)):
                raise ValueError("LP coefficients must be finite")

    @property
    def num_vars(self):
        return self.c.size

    def max_violation(self, x):
        """Largest absolute constraint violation of ``x`` (0 when feasible)."""
        v = [0.0]
        if self.b_eq.size:
            v.append(np.abs(self.A_eq @ x - self.b_eq).max())
        if self.b_ge.size:
            v.append((self.b_ge - self.A_ge @ x).max())
        v.append((self.lo - x).max(initial=-np.inf))
        v.append((x - self.hi).max(initial=-np.inf))
        return float(max(v))

    def to_text(self):
        """Plain-text dump: one tagged line per objective/constraint/bound vector."""
        f = lambda arr: " ".join(repr(float(v)) for v in arr)  # noqa: E731
        lines = [f"vars {self.num_vars}", f"objective {f(self.c)}"]
        for row, b in zip(self.A_eq, self.b_eq):
            lines.append(f"eq {f(row)} rhs {float(b)!r}")
        for row, b in zip(self.A_ge, self.b_ge):
            lines.append(f"ge {f(row)} rhs {float(b)!r}")
        lines.append(f"lower {f(self.lo)}")
        lines.append(f"upper {f(self.hi)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        data = {"eq": [], "ge": []}
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            tag, *rest = line.split()
            if tag == "vars":
                continue
            if tag in ("eq", "ge"):
                k = rest.index("rhs")
                data[tag].append(([float(t) for t in rest[:k]], float(rest[k + 1])))
            else:
                data[tag] = [float(t) for t in rest]
        n = len(data["objective"])
        eq, ge = data["eq"], data["ge"]
        return cls(
            c=data["objective"],
            A_eq=np.array([r for r, _ in eq]).reshape(-1, n),
            b_eq=[b for _, b in eq],
            A_ge=np.array([r for r, _ in ge]).reshape(-1, n),
            b_ge=[b for _, b in ge],
            lo=data.get("lower"),
            hi=data.get("upper"),
        )


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    objective_value: float | None = None
    dual_objective: float | None = None
    eq_duals: np.ndarray | None = None
    ge_duals: np.ndarray | None = None
    iterations: int = 0
    method: str = "primal"

    @property
    def optimal(self):
        return self.status == OPTIMAL


# ---------------------------------------------------------------------------
# standard-form core


def _bland(A, b, c, basis, num_enter, rank, count):
    """Revised simplex on ``min c^T z, A z = b, z >= 0`` from a feasible ``basis``.

    The basis is refactored at every pivot, so basic values, multipliers and
    the entering column never carry accumulated roundoff.  Pricing is
    Dantzig's (most negative reduced cost) while pivots make progress; after
    ``DEGENERATE_LIMIT`` consecutive degenerate pivots it switches to Bland's
    rule (smallest entering index, smallest ``rank`` among tied leaving rows)
    until a nondegenerate pivot occurs.  Any cycle consists of degenerate
    pivots only, so it would run entirely under Bland's rule, which cannot
    cycle; termination is therefore guaranteed.
    """
    degenerate = 0
    while True:
        lu = lu_factor(A[:, basis], check_finite=False)
        xb = lu_solve(lu, b, check_finite=False)
        y = lu_solve(lu, c[basis], trans=1, check_finite=False)
        red = c[:num_enter] - A[:, :num_enter].T @ y
        red[[k for k in basis if k < num_enter]] = 0.0
        cand = np.flatnonzero(red < -PIVOT_TOL)
        if cand.size == 0:
            return OPTIMAL, count, xb, y
        bland = degenerate >= DEGENERATE_LIMIT
        j = int(cand[0]) if bland else int(cand[np.argmin(red[cand])])
        u = lu_solve(lu, A[:, j], check_finite=False)
        pos = np.flatnonzero(u > max(PIVOT_TOL, REL_PIVOT_TOL * np.abs(u).max()))
        if pos.size == 0:
            return UNBOUNDED, count, xb, y
        # roundoff can leave degenerate basic values slightly negative
        ratios = np.maximum(xb[pos], 0.0) / u[pos]
        best = ratios.min()
        tied = pos[ratios <= best + 1e-12 * (1.0 + abs(best))]
        if bland:
            r = int(tied[np.argmin(rank[np.asarray(basis)[tied]])])
        else:
            r = int(tied[np.argmax(u[tied])])
        degenerate = degenerate + 1 if best * u[r] <= PIVOT_TOL else 0
        basis[r] = j
        count += 1
        if count > MAX_PIVOTS:
            raise NonConvergenceError(f"simplex exceeded {MAX_PIVOTS} pivots", cap=MAX_PIVOTS)


def _two_phase(c, As, bs):
    """Both phases on ``As z = bs`` (with ``bs >= 0``).

    Returns ``(status, z, ys, rows, basis, count)``: ``rows`` are the
    constraint rows that survived redundancy removal, ``ys`` their
    multipliers and ``basis`` the final basic columns.
    """
    m, n = As.shape
    # phase 1: one artificial per row; artificials rank first for leaving and
    # never re-enter once they have left
    W = np.hstack([As, np.eye(m)])
    w = np.concatenate([np.zeros(n), np.ones(m)])
    rank = np.concatenate([np.arange(n), np.arange(m) - m])
    basis = list(range(n, n + m))
    _, count, xb, _ = _bland(W, bs, w, basis, n, rank, 0)
    infeas = float(sum(xb[i] for i in range(m) if basis[i] >= n))
    if infeas > PIVOT_TOL * max(1.0, np.abs(bs).max()):
        return INFEASIBLE, None, None, None, None, count
    # drive remaining (zero-valued) artificials out; rows where that fails are redundant
    rows = np.arange(m)
    while True:
        art = [i for i, k in enumerate(basis) if k >= n]
        if not art:
            break
        i = art[0]
        lu = lu_factor(W[np.ix_(rows, basis)], check_finite=False)
        e = np.zeros(rows.size)
        e[i] = 1.0
        alpha = As[rows].T @ lu_solve(lu, e, trans=1, check_finite=False)
        alpha[[k for k in basis if k < n]] = 0.0
        nz = np.flatnonzero(np.abs(alpha) > PIVOT_TOL)
        if nz.size:
            basis[i] = int(nz[np.argmax(np.abs(alpha[nz]))])
            count += 1
        else:
            rows = rows[rows != basis[i] - n]
            del basis[i]
    if rows.size == 0:
        if np.any(c < -PIVOT_TOL):
            return UNBOUNDED, None, None, None, None, count
        return OPTIMAL, np.zeros(n), np.zeros(0), rows, [], count
    status, count, xb, ys = _bland(As[rows], bs[rows], c, basis, n, np.arange(n), count)
    if status != OPTIMAL:
        return status, None, None, None, None, count
    z = np.zeros(n)
    z[basis] = xb
    return OPTIMAL, z, ys, rows, basis, count


def _perturbed(c, As, bs):
    """Solve with ``bs + As r`` for a tiny fixed ``r > 0``, then re-verify on ``bs``.

    The perturbed right-hand side stays in the range of ``As`` and is feasible
    whenever ``bs`` is, but its vertices are almost surely nondegenerate, which
    removes the long degenerate stalls of massively degenerate problems such
    as the stationarity LP.  The optimal basis does not depend on the
    right-hand side through its reduced costs, so it is optimal for ``bs`` as
    soon as its basic values recomputed from ``bs`` are nonnegative.
    """
    m, n = As.shape
    scale = max(1.0, float(np.abs(bs).max()))
    r = PERTURBATION * scale * np.random.default_rng(0).uniform(0.5, 1.0, n)
    try:
        status, z, ys, rows, basis, count = _two_phase(c, As, bs + As @ r)
    except NonConvergenceError:
        return None
    if status != OPTIMAL or rows.size == 0:
        return None
    xb = np.linalg.solve(As[np.ix_(rows, basis)], bs[rows])
    tol = PIVOT_TOL * scale
    if xb.min() < -tol:
        return None
    z = np.zeros(n)
    z[basis] = np.maximum(xb, 0.0)
    if np.abs(As @ z - bs).max() > tol:
        return None
    return OPTIMAL, z, ys, rows, basis, count


def simplex_standard(c, A, b):
    """Solve ``min c^T z  s.t.  A z = b, z >= 0``.

    Returns ``(status, z, y, pivots)`` where ``y`` are the simplex
    multipliers (``c - A^T y >= 0`` at optimality).  A perturbed solve is
    tried first; the unperturbed two-phase method is the fallback and the sole
    authority on infeasible and unbounded verdicts.
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if m == 0:
        if np.any(c < -PIVOT_TOL):
            return UNBOUNDED, None, None, 0
        return OPTIMAL, np.zeros(n), np.zeros(0), 0
    sign = np.where(b < 0, -1.0, 1.0)
    As = A * sign[:, None]
    bs = b * sign
    res = _perturbed(c, As, bs)
    if res is None:
        res = _two_phase(c, As, bs)
    status, z, ys, rows, _, count = res
    if status != OPTIMAL:
        return status, None, None, count
    y = np.zeros(m)
    y[rows] = ys * sign[rows]
    return OPTIMAL, np.maximum(z, 0.0), y, count


# ---------------------------------------------------------------------------
# general form -> standard form


class _Standardized:
    """Variable substitution ``x = shift + M z`` with ``z >= 0``."""

    def __init__(self, p):
        n = p.num_vars
        cols, shift = [], np.zeros(n)
        extra_rows, extra_rhs = [], []
        for j in range(n):
            lo, hi = p.lo[j], p.hi[j]
            if np.isfinite(lo):
                shift[j] = lo
                cols.append((j, 1.0))
                if np.isfinite(hi):
                    extra_rows.append(len(cols) - 1)
                    extra_rhs.append(-(hi - lo))
            elif np.isfinite(hi):
                shift[j] = hi
                cols.append((j, -1.0))
            else:
                cols.append((j, 1.0))
                cols.append((j, -1.0))
        nz = len(cols)
        M = np.zeros((n, nz))
        for k, (j, s) in enumerate(cols):
            M[j, k] = s
        self.M, self.shift, self.nz = M, shift, nz
        self.const = float(p.c @ shift)
        self.c = p.c @ M
        self.E = p.A_eq @ M
        self.f = p.b_eq - p.A_eq @ shift
        nb = len(extra_rows)
        Gb = np.zeros((nb, nz))
        Gb[np.arange(nb), extra_rows] = -1.0
        self.G = np.vstack([p.A_ge @ M, Gb])
        self.g = np.concatenate([p.b_ge - p.A_ge @ shift, extra_rhs])
        self.m_eq, self.m_ge = p.b_eq.size, p.b_ge.size

    def x_of(self, z):
        return self.shift + self.M @ z


def _solve_primal(p, s):
    m1, mg = s.E.shape[0], s.G.shape[0]
    A = np.block([[s.E, np.zeros((m1, mg))], [s.G, -np.eye(mg)]])
    b = np.concatenate([s.f, s.g])
    c = np.concatenate([s.c, np.zeros(mg)])
    status, z, y, count = simplex_standard(c, A, b)
    if status != OPTIMAL:
        return LpSolution(status, iterations=count, method="primal")
    x = s.x_of(z[: s.nz])
    return LpSolution(
        OPTIMAL,
        x=x,
        objective_value=float(p.c @ x),
        dual_objective=float(b @ y + s.const),
        eq_duals=y[:m1],
        ge_duals=y[m1 : m1 + s.m_ge],
        iterations=count,
        method="primal",
    )


def _solve_via_dual(p, s):
    m1, mg, nz = s.E.shape[0], s.G.shape[0], s.nz
    A = np.hstack([s.E.T, -s.E.T, s.G.T, np.eye(nz)])
    cost = np.concatenate([-s.f, s.f, -s.g, np.zeros(nz)])
    status, v, y, count = simplex_standard(cost, A, s.c)
    if status == UNBOUNDED:
        return LpSolution(INFEASIBLE, iterations=count, method="dual")
    if status != OPTIMAL:
        return None
    z = np.maximum(-y, 0.0)
    x = s.x_of(z)
    u = v[:m1] - v[m1 : 2 * m1]
    w = v[2 * m1 : 2 * m1 + mg]
    return LpSolution(
        OPTIMAL,
        x=x,
        objective_value=float(p.c @ x),
        dual_objective=float(s.f @ u + s.g @ w + s.const),
        eq_duals=u,
        ge_duals=w[: s.m_ge],
        iterations=count,
        method="dual",
    )


def solve_lp(problem, method="auto"):
    """Solve an :class:`LpProblem`; infeasible/unbounded come back as status codes.

    ``method`` is ``"primal"``, ``"dual"`` or ``"auto"`` (dual when the
    standard form has more than twice as many rows as structural columns).
    """
    p = problem
    if np.any(p.lo > p.hi):
        return LpSolution(INFEASIBLE)
    s = _Standardized(p)
    rows = s.E.shape[0] + s.G.shape[0]
    use_dual = method == "dual" or (method == "auto" and rows > 2 * s.nz)
    if use_dual:
        sol = _solve_via_dual(p, s)
        if sol is not None and (not sol.optimal or p.max_violation(sol.x) <= CERT_TOL):
            return sol
    return _solve_primal(p, s)


def certify(problem, solution, tol=CERT_TOL):
    """Re-check an optimal solution against every constraint."""
    return solution.optimal and problem.max_violation(solution.x) <= tol
