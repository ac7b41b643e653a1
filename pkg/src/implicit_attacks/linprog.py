"""Dense bounded-variable primal simplex.

Solves  min c.x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  lo <= x <= hi
with a two-phase method on a full tableau.  Dantzig pricing, switching to
Bland's rule after a run of degenerate pivots.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEAS_TOL = 1e-7
PIVOT_TOL = 1e-10
OPT_TOL = 1e-9
DEGENERATE_RUN = 1000
REFACTOR_EVERY = 50

OPTIMAL, INFEASIBLE, UNBOUNDED = "optimal", "infeasible", "unbounded"


class LpError(RuntimeError):
    pass


@dataclass(frozen=True)
class LpProblem:
    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    bounds: np.ndarray | None = None  # (n, 2); default [0, inf)

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        n = c.shape[0]
        object.__setattr__(self, "c", c)
        for A, b, name in ((self.A_eq, self.b_eq, "A_eq"), (self.A_ub, self.b_ub, "A_ub")):
            A = np.zeros((0, n)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
            b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
            if A.shape != (b.shape[0], n):
                raise ValueError(f"{name} has shape {A.shape}, expected ({b.shape[0]}, {n})")
            object.__setattr__(self, name, A)
            object.__setattr__(self, "b" + name[1:], b)
        if self.bounds is None:
            bnd = np.tile([0.0, np.inf], (n, 1))
        else:
            bnd = np.asarray(self.bounds, dtype=float).reshape(n, 2)
        if np.any(bnd[:, 0] > bnd[:, 1]) or np.any(bnd[:, 0] == np.inf) or np.any(bnd[:, 1] == -np.inf):
            raise ValueError("each variable needs lo <= hi")
        object.__setattr__(self, "bounds", bnd)

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    def violation(self, x) -> float:
        """Largest absolute constraint or bound violation at x."""
        v = [0.0]
        if len(self.b_eq):
            v.append(np.abs(self.A_eq @ x - self.b_eq).max())
        if len(self.b_ub):
            v.append((self.A_ub @ x - self.b_ub).max())
        v.append((self.bounds[:, 0] - x).max())
        v.append((x - self.bounds[:, 1]).max())
        return float(max(v))


@dataclass(frozen=True)
class LpSolution:
    status: str
    x: np.ndarray | None
    objective_value: float
    iterations: int = 0


class _Tableau:
    """Bounded simplex on  A y = b,  0 <= y <= u  (b >= 0 after row flips)."""

    def __init__(self, A, b, u, basis):
        self.A, self.b, self.u = A, b, u
        self.basis = np.array(basis)
        self.at_upper = np.zeros(A.shape[1], bool)
        self.iterations = 0
        self.refactor()

    def nonbasic_values(self):
        y = np.where(self.at_upper, self.u, 0.0)
        y[self.basis] = 0.0
        return y

    def refactor(self):
        if len(self.basis) == 0:
            self.T = np.zeros((0, self.A.shape[1]))
            self.xB = np.zeros(0)
            return
        B = self.A[:, self.basis]
        try:
            self.T = np.linalg.solve(B, self.A)
            self.xB = np.linalg.solve(B, self.b - self.A @ self.nonbasic_values())
        except np.linalg.LinAlgError as e:
            raise LpError(f"singular basis: {e}") from e

    def values(self):
        y = self.nonbasic_values()
        y[self.basis] = self.xB
        return y

    def pivot(self, r, j):
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        self.basis[r] = j

    def run(self, cost, max_iter, active=None):
        """Optimize; returns OPTIMAL or UNBOUNDED.  ``active`` masks enterable columns."""
        n = self.A.shape[1]
        idx = np.arange(n)
        movable = self.u > 0 if active is None else (self.u > 0) & active
        degenerate = 0
        since_refactor = 0
        while True:
            if self.iterations >= max_iter:
                raise LpError(f"simplex exceeded {max_iter} iterations")
            d = cost - cost[self.basis] @ self.T
            is_basic = np.zeros(n, bool)
            is_basic[self.basis] = True
            cand = movable & ~is_basic & np.where(self.at_upper, d > OPT_TOL, d < -OPT_TOL)
            if not cand.any():
                return OPTIMAL
            bland = degenerate >= DEGENERATE_RUN
            j = idx[cand][0] if bland else idx[cand][np.argmax(np.abs(d[cand]))]
            sign = -1.0 if self.at_upper[j] else 1.0
            alpha = sign * self.T[:, j]
            uB = self.u[self.basis]
            ratio = np.full(len(alpha), np.inf)
            dec = alpha > PIVOT_TOL
            ratio[dec] = np.maximum(self.xB[dec], 0) / alpha[dec]
            inc = (alpha < -PIVOT_TOL) & np.isfinite(uB)
            ratio[inc] = np.maximum(uB[inc] - self.xB[inc], 0) / -alpha[inc]
            t = ratio.min() if len(ratio) else np.inf
            if self.u[j] <= t:
                # bound flip, no basis change
                t = self.u[j]
                if not np.isfinite(t):
                    return UNBOUNDED
                self.xB -= alpha * t
                self.at_upper[j] = not self.at_upper[j]
            else:
                if not np.isfinite(t):
                    return UNBOUNDED
                ties = np.flatnonzero(ratio <= t + 1e-12)
                if bland:
                    r = ties[np.argmin(self.basis[ties])]
                else:
                    r = ties[np.argmax(np.abs(alpha[ties]))]
                leaving = self.basis[r]
                to_upper = bool(alpha[r] < 0)
                enter_val = t if sign > 0 else self.u[j] - t
                self.xB -= alpha * t
                self.pivot(r, j)
                self.xB[r] = enter_val
                self.at_upper[leaving] = to_upper
                self.at_upper[j] = False
            degenerate = degenerate + 1 if t <= 1e-12 else 0
            self.iterations += 1
            since_refactor += 1
            if since_refactor >= REFACTOR_EVERY:
                self.refactor()
                since_refactor = 0


def _standardize(p: LpProblem):
    """Map x = off + M y with y >= 0, plus slack columns for inequalities."""
    n = p.n_vars
    lo, hi = p.bounds[:, 0], p.bounds[:, 1]
    cols, off, ub = [], np.zeros(n), []
    for j in range(n):
        if np.isfinite(lo[j]):
            off[j] = lo[j]
            cols.append((j, 1.0))
            ub.append(hi[j] - lo[j])
        elif np.isfinite(hi[j]):
            off[j] = hi[j]
            cols.append((j, -1.0))
            ub.append(np.inf)
        else:
            cols.append((j, 1.0))
            ub.append(np.inf)
            cols.append((j, -1.0))
            ub.append(np.inf)
    M = np.zeros((n, len(cols)))
    for k, (j, s) in enumerate(cols):
        M[j, k] = s
    m_eq, m_ub = len(p.b_eq), len(p.b_ub)
    A = np.zeros((m_eq + m_ub, len(cols) + m_ub))
    A[:m_eq, : len(cols)] = p.A_eq @ M
    A[m_eq:, : len(cols)] = p.A_ub @ M
    A[m_eq:, len(cols):] = np.eye(m_ub)
    b = np.concatenate([p.b_eq - p.A_eq @ off, p.b_ub - p.A_ub @ off])
    u = np.concatenate([ub, np.full(m_ub, np.inf)])
    c = np.concatenate([p.c @ M, np.zeros(m_ub)])
    return A, b, u, c, M, off


def solve_lp(p: LpProblem, max_iter: int | None = None) -> LpSolution:
    A, b, u, c, M, off = _standardize(p)
    m, n = A.shape
    if max_iter is None:
        max_iter = 50 * (m + n) + 10_000
    flip = b < 0
    A[flip] *= -1
    b = np.abs(b)

    # phase 1 with one artificial per row
    A1 = np.hstack([A, np.eye(m)])
    u1 = np.concatenate([u, np.full(m, np.inf)])
    iterations = 0
    if m:
        tab = _Tableau(A1, b, u1, np.arange(n, n + m))
        cost1 = np.concatenate([np.zeros(n), np.ones(m)])
        tab.run(cost1, max_iter)
        tab.refactor()
        infeas = tab.values()[n:].sum()
        if infeas > FEAS_TOL * max(1.0, np.abs(b).max()):
            return LpSolution(INFEASIBLE, None, float("nan"), tab.iterations)
        iterations = tab.iterations
        # pivot artificials out of the basis, dropping redundant rows
        keep = np.ones(m, bool)
        for r in range(m):
            if tab.basis[r] < n:
                continue
            row = tab.T[r, :n].copy()
            row[tab.basis[tab.basis < n]] = 0.0
            cand = np.flatnonzero(np.abs(row) > 1e-9)
            if len(cand):
                j = cand[np.argmax(np.abs(row[cand]))]
                val = u[j] if tab.at_upper[j] else 0.0
                tab.pivot(r, j)
                tab.xB[r] = val
                tab.at_upper[j] = False
            else:
                keep[r] = False
        basis = tab.basis[keep]
        at_upper = tab.at_upper[:n]
        A, b = A[keep], b[keep]
    else:
        basis = np.zeros(0, int)
        at_upper = np.zeros(n, bool)

    tab2 = _Tableau.__new__(_Tableau)
    tab2.A, tab2.b, tab2.u = A, b, u
    tab2.basis, tab2.at_upper, tab2.iterations = basis, at_upper.copy(), iterations
    tab2.refactor()
    status = tab2.run(c, max_iter)
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED, None, -np.inf, tab2.iterations)
    tab2.refactor()
    y = np.clip(tab2.values(), 0, u)
    x = off + M @ y[: M.shape[1]]
    x = np.clip(x, p.bounds[:, 0], p.bounds[:, 1])
    viol = p.violation(x)
    if viol > FEAS_TOL:
        raise LpError(f"solution violates constraints by {viol:.3g}")
    return LpSolution(OPTIMAL, x, float(p.c @ x), tab2.iterations)
