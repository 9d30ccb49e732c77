"""Dense linear-program solver (two-phase simplex).

Solves   min c'x   s.t.  A_eq x = b_eq,  A_in x <= b_in,  lo <= x <= hi

on small dense problems. Infeasible and unbounded are reported as typed
outcomes, never as exceptions; numerical breakdown (cycling past the
iteration cap) raises :class:`LPSolverError` so callers can distinguish
"no certificate" from "solver failed".

The final basic solution is recomputed from the original data with a dense
linear solve, so primal residuals sit at the double-precision floor rather
than accumulating tableau roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "LinearProgram",
    "LPResult",
    "LPStatus",
    "LPSolverError",
    "solve_lp",
]

_PIVOT_TOL = 1e-10
_FEAS_TOL = 1e-8


class LPSolverError(RuntimeError):
    """Numerical breakdown inside the simplex loop (not infeasibility)."""


class LPStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class LinearProgram:
    """min objective'x subject to equalities, inequalities and bounds.

    ``bounds`` is a per-variable list of (lo, hi) with ``None`` meaning
    unbounded on that side; ``bounds=None`` leaves every variable free.
    """

    objective: np.ndarray
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    a_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    bounds: list[tuple[float | None, float | None]] | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        if self.objective.ndim != 1:
            raise ValueError("objective must be a vector")
        n = self.objective.size
        for name in ("a_eq", "a_in"):
            a = getattr(self, name)
            if a is not None:
                a = np.asarray(a, dtype=float)
                if a.ndim != 2 or a.shape[1] != n:
                    raise ValueError(f"{name} must be (m, {n})")
                setattr(self, name, a)
        for aname, bname in (("a_eq", "b_eq"), ("a_in", "b_in")):
            a, b = getattr(self, aname), getattr(self, bname)
            if (a is None) != (b is None):
                raise ValueError(f"{aname}/{bname} must be given together")
            if b is not None:
                b = np.asarray(b, dtype=float)
                if b.shape != (a.shape[0],):
                    raise ValueError(f"{bname} has wrong length")
                setattr(self, bname, b)
        if self.bounds is not None and len(self.bounds) != n:
            raise ValueError("bounds must have one (lo, hi) pair per variable")
        for arr in (self.objective, self.a_eq, self.b_eq, self.a_in, self.b_in):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValueError("program data must be finite")

    @property
    def n_vars(self) -> int:
        return self.objective.size


@dataclass
class LPResult:
    status: LPStatus
    x: np.ndarray | None = None
    objective: float | None = None

    @property
    def is_optimal(self) -> bool:
        return self.status is LPStatus.OPTIMAL


def _standard_form(lp: LinearProgram):
    """Rewrite as  min c'z, A z = b, z >= 0  plus the map back to x.

    Returns (A, b, c, recover) where recover(z) -> x in original variables.
    """
    n = lp.n_vars
    bounds = lp.bounds if lp.bounds is not None else [(None, None)] * n

    # Column bookkeeping: each original variable contributes one or two
    # nonnegative columns plus an affine offset.
    col_of = np.zeros(n, dtype=int)      # first std column of variable j
    neg_col = np.full(n, -1, dtype=int)  # second column for free splits
    sign = np.ones(n)                    # +1: x = off + z, -1: x = off - z
    offset = np.zeros(n)
    upper_rows: list[tuple[int, float]] = []  # (var index, ub on its z col)

    k = 0
    for j, (lo, hi) in enumerate(bounds):
        if lo is None and hi is None:
            col_of[j] = k
            neg_col[j] = k + 1
            k += 2
        elif lo is not None:
            col_of[j] = k
            offset[j] = lo
            if hi is not None:
                upper_rows.append((j, hi - lo))
            k += 1
        else:  # hi only
            col_of[j] = k
            offset[j] = hi
            sign[j] = -1.0
            k += 1
    n_std = k

    def expand(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map rows over x to rows over z; returns (rows, rhs shift)."""
        rows = np.zeros((a.shape[0], n_std))
        rows[:, col_of] = a * sign
        free = neg_col >= 0
        if np.any(free):
            rows[:, neg_col[free]] = -a[:, free]
        return rows, a @ offset

    blocks_a, blocks_b, needs_slack = [], [], []
    if lp.a_eq is not None and lp.a_eq.shape[0]:
        rows, shift = expand(lp.a_eq)
        blocks_a.append(rows)
        blocks_b.append(lp.b_eq - shift)
        needs_slack.extend([False] * rows.shape[0])
    if lp.a_in is not None and lp.a_in.shape[0]:
        rows, shift = expand(lp.a_in)
        blocks_a.append(rows)
        blocks_b.append(lp.b_in - shift)
        needs_slack.extend([True] * rows.shape[0])
    if upper_rows:
        rows = np.zeros((len(upper_rows), n_std))
        rhs = np.zeros(len(upper_rows))
        for i, (j, ub) in enumerate(upper_rows):
            rows[i, col_of[j]] = 1.0
            rhs[i] = ub
        blocks_a.append(rows)
        blocks_b.append(rhs)
        needs_slack.extend([True] * len(upper_rows))

    if blocks_a:
        a = np.vstack(blocks_a)
        b = np.concatenate(blocks_b)
    else:
        a = np.zeros((0, n_std))
        b = np.zeros(0)
    slack_mask = np.array(needs_slack, dtype=bool)

    m = a.shape[0]
    n_slack = int(slack_mask.sum())
    full = np.zeros((m, n_std + n_slack))
    full[:, :n_std] = a
    full[np.nonzero(slack_mask)[0], n_std + np.arange(n_slack)] = 1.0

    c = np.zeros(n_std + n_slack)
    c[col_of] = lp.objective * sign
    free = neg_col >= 0
    if np.any(free):
        c[neg_col[free]] = -lp.objective[free]

    def recover(z: np.ndarray) -> np.ndarray:
        x = offset + sign * z[col_of]
        if np.any(free):
            x[free] -= z[neg_col[free]]
        return x

    return full, b, c, recover


def _simplex(a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Two-phase simplex on  min c'z, A z = b, z >= 0.

    Returns (status, basis, z). Dantzig pricing with a Bland fallback once
    the iteration count suggests cycling.
    """
    m, n = a.shape
    if m == 0:
        # No constraints: optimal iff no negative cost direction.
        if np.any(c < -_PIVOT_TOL):
            return LPStatus.UNBOUNDED, None, None
        return LPStatus.OPTIMAL, np.zeros(0, dtype=int), np.zeros(n)

    neg = b < 0
    a = a.copy()
    b = b.copy()
    a[neg] *= -1.0
    b[neg] *= -1.0

    # Tableau with artificial columns appended: [A | I | b].
    t = np.empty((m + 1, n + m + 1))
    t[:m, :n] = a
    t[:m, n:n + m] = np.eye(m)
    t[:m, -1] = b
    basis = np.arange(n, n + m)

    # Phase-1 objective row: minimize sum of artificials.
    t[m, :] = 0.0
    t[m, n:n + m] = 1.0
    t[m, :] -= t[:m, :].sum(axis=0)

    def pivot_loop(allowed: int, cap: int) -> bool:
        """Run pivots on columns [0, allowed); False means unbounded."""
        bland_after = cap // 2
        for it in range(cap):
            costs = t[m, :allowed]
            if it < bland_after:
                q = int(np.argmin(costs))
                if costs[q] >= -_PIVOT_TOL:
                    return True
            else:
                below = np.nonzero(costs < -_PIVOT_TOL)[0]
                if below.size == 0:
                    return True
                q = int(below[0])
            col = t[:m, q]
            pos = col > _PIVOT_TOL
            if not np.any(pos):
                return False
            ratios = np.full(m, np.inf)
            ratios[pos] = t[:m, -1][pos] / col[pos]
            p = int(np.argmin(ratios))
            # Deterministic tie-break: smallest basis index among minima.
            ties = np.nonzero(ratios <= ratios[p] * (1 + 1e-12) + 1e-300)[0]
            if ties.size > 1:
                p = int(ties[np.argmin(basis[ties])])
            piv = t[p, q]
            t[p, :] /= piv
            col_vals = t[:, q].copy()
            col_vals[p] = 0.0
            t[:, :] -= np.outer(col_vals, t[p, :])
            t[:, q] = 0.0
            t[p, q] = 1.0
            basis[p] = q
        raise LPSolverError("simplex iteration cap exceeded")

    cap = 100 * (m + n) + 500
    pivot_loop(n + m, cap)  # phase 1 is always bounded below by 0
    if t[m, -1] < -max(_FEAS_TOL, _FEAS_TOL * abs(b).max(initial=1.0)):
        return LPStatus.INFEASIBLE, None, None

    # Drive leftover artificials out of the basis; drop redundant rows.
    for p in np.nonzero(basis >= n)[0]:
        row = t[p, :n]
        cands = np.nonzero(np.abs(row) > 1e-9)[0]
        if cands.size == 0:
            continue  # redundant row, harmless with a zero rhs
        q = int(cands[0])
        piv = t[p, q]
        t[p, :] /= piv
        col_vals = t[:, q].copy()
        col_vals[p] = 0.0
        t[:, :] -= np.outer(col_vals, t[p, :])
        t[:, q] = 0.0
        t[p, q] = 1.0
        basis[p] = q

    # Phase 2: rebuild the cost row; pricing stays off artificial columns.
    t[m, :] = 0.0
    t[m, :n] = c
    for p in range(m):
        if basis[p] < n and abs(c[basis[p]]) > 0:
            t[m, :] -= c[basis[p]] * t[p, :]
    if not pivot_loop(n, cap):
        return LPStatus.UNBOUNDED, None, None

    z = np.zeros(n)
    keep = basis < n
    z[basis[keep]] = t[:m, -1][keep]
    return LPStatus.OPTIMAL, basis, z


def solve_lp(lp: LinearProgram) -> LPResult:
    """Solve the program; see module docstring for outcome semantics."""
    a, b, c, recover = _standard_form(lp)
    status, basis, z = _simplex(a, b, c)
    if status is not LPStatus.OPTIMAL:
        return LPResult(status)

    # Refine: re-solve the basic system against the original data.
    if basis is not None and basis.size:
        keep = basis < a.shape[1]
        cols = basis[keep]
        if cols.size:
            bmat = a[:, cols]
            try:
                sol, *_ = np.linalg.lstsq(bmat, b, rcond=None)
                z_ref = np.zeros(a.shape[1])
                z_ref[cols] = sol
                if np.all(z_ref >= -1e-9):
                    resid = a @ z_ref - b
                    if np.abs(resid).max(initial=0.0) <= _FEAS_TOL:
                        z = np.maximum(z_ref, 0.0)
            except np.linalg.LinAlgError:
                pass

    x = recover(z)
    return LPResult(LPStatus.OPTIMAL, x, float(lp.objective @ x) )
