"""Bounded-variable primal simplex with two-phase initialization.

Variables carry individual lower/upper bounds and nonbasic variables rest
at one of them, so the ReLU encodings' many bound constraints never become
rows. Phase 1 drives signed artificial variables to zero; phase 2 optimizes
the real objective. The tableau is dense and is refactorized from the
original data every `refactor_every` pivots to shed accumulated error.
Bland's rule takes over entering/leaving selection after a run of
degenerate pivots, which bounds the total pivot count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from .errors import InvalidArg, NumericalBreakdown

if TYPE_CHECKING:  # import for annotations only; milp depends on bounds, not on us
    from .milp import MilpProblem


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class SimplexOptions:
    feas_tol: float = 1e-7
    opt_tol: float = 1e-7
    pivot_tol: float = 1e-9
    bland_after: int = 50      # consecutive degenerate pivots before Bland's rule
    refactor_every: int = 100  # pivots between refactorizations
    max_iter: int | None = None

    def as_dict(self) -> dict:
        return {
            "feas_tol": self.feas_tol,
            "opt_tol": self.opt_tol,
            "pivot_tol": self.pivot_tol,
            "bland_after": self.bland_after,
            "refactor_every": self.refactor_every,
        }


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray | None = None          # structural variable values
    objective: float | None = None
    basis: np.ndarray | None = None
    infeasibility: float = 0.0           # phase-1 residual when Infeasible
    iterations: int = 0


_DEGEN_TOL = 1e-10


class PreparedLp:
    """One LP skeleton solved many times under changing variable bounds.

    Rows and objective stay fixed; `solve` takes the structural bounds for
    this call (branch-and-bound fixes binaries that way) and an optional
    objective override (bound tightening sweeps one).
    """

    def __init__(
        self,
        c: np.ndarray,
        maximize: bool,
        A: np.ndarray,
        senses,
        b: np.ndarray,
        options: SimplexOptions | None = None,
    ):
        self.opts = options or SimplexOptions()
        A = np.asarray(A, dtype=float)
        if A.ndim != 2:
            raise InvalidArg("A must be a matrix")
        self.m, self.n = A.shape
        self.b = np.asarray(b, dtype=float).copy()
        self.c = np.asarray(c, dtype=float).copy()
        self.maximize = maximize
        senses = list(senses)
        if len(senses) != self.m or self.b.shape != (self.m,) or self.c.shape != (self.n,):
            raise InvalidArg("row/objective shapes inconsistent")
        if not all(s in ("<=", "=", ">=") for s in senses):
            raise InvalidArg("row sense must be <=, = or >=")
        self.senses = senses
        # column layout: structurals | slacks | artificials
        self.slack_of_row = np.full(self.m, -1, dtype=int)
        slack_cols = []
        for i, s in enumerate(senses):
            if s != "=":
                self.slack_of_row[i] = self.n + len(slack_cols)
                col = np.zeros(self.m)
                col[i] = 1.0 if s == "<=" else -1.0
                slack_cols.append(col)
        self.n_slack = len(slack_cols)
        self.art0 = self.n + self.n_slack
        ncols = self.art0 + self.m
        self.A_full = np.zeros((self.m, ncols))
        self.A_full[:, : self.n] = A
        if slack_cols:
            self.A_full[:, self.n : self.art0] = np.array(slack_cols).T
        # artificial columns are +-identity; signs set per solve
        self.ncols = ncols

    # ------------------------------------------------------------------
    def solve(
        self,
        lo: np.ndarray,
        hi: np.ndarray,
        c_override: np.ndarray | None = None,
        maximize: bool | None = None,
    ) -> LpSolution:
        opts = self.opts
        m, n, ncols = self.m, self.n, self.ncols
        lo_s = np.asarray(lo, dtype=float)
        hi_s = np.asarray(hi, dtype=float)
        if lo_s.shape != (n,) or hi_s.shape != (n,):
            raise InvalidArg("bound vectors must cover the structural variables")
        if np.any(lo_s > hi_s + 1e-12) or not (np.all(np.isfinite(lo_s)) and np.all(np.isfinite(hi_s))):
            raise InvalidArg("structural bounds must be finite with lo <= hi")

        c_user = self.c if c_override is None else np.asarray(c_override, dtype=float)
        mx = self.maximize if maximize is None else maximize
        c2 = np.zeros(ncols)
        c2[:n] = c_user if mx else -c_user

        if m == 0:
            x = np.where(c2[:n] > 0, hi_s, lo_s)
            val = float(c2[:n] @ x)
            return LpSolution(
                status=LpStatus.OPTIMAL,
                x=x,
                objective=val if mx else -val,
                basis=np.zeros(0, dtype=int),
                iterations=0,
            )

        full_lo = np.zeros(ncols)
        full_hi = np.zeros(ncols)
        full_lo[:n] = lo_s
        full_hi[:n] = hi_s
        full_hi[n : self.art0] = np.inf  # slacks in [0, inf)

        # starting point: structurals at lower bound, slacks absorb what they can
        A_full = self.A_full.copy()
        act = A_full[:, :n] @ lo_s
        resid = self.b - act
        basis = np.empty(m, dtype=int)
        xB = np.empty(m)
        art_rows = []
        for i in range(m):
            sl = self.slack_of_row[i]
            v = resid[i] * (1.0 if self.senses[i] == "<=" else -1.0) if sl >= 0 else -1.0
            if sl >= 0 and v >= 0.0:
                basis[i] = sl
                xB[i] = v
            else:
                a = self.art0 + i
                sigma = 1.0 if resid[i] >= 0 else -1.0
                A_full[i, a] = sigma
                full_hi[a] = np.inf
                basis[i] = a
                xB[i] = abs(resid[i])
                art_rows.append(i)

        at_upper = np.zeros(ncols, dtype=bool)
        in_basis = np.zeros(ncols, dtype=bool)
        in_basis[basis] = True
        T = A_full.copy()  # basis is identity-like: slack (+1) and signed artificials
        for i in range(m):
            s = A_full[i, basis[i]]
            if s == -1.0:  # >= slack enters with -1; normalize the row
                T[i] = -T[i]
        state = _State(T=T, basis=basis, xB=xB, at_upper=at_upper, in_basis=in_basis)

        max_iter = opts.max_iter or (10_000 + 40 * (m + ncols))
        total_iters = 0

        if art_rows:
            c1 = np.zeros(ncols)
            c1[self.art0 :] = -1.0
            status, iters = self._iterate(state, A_full, full_lo, full_hi, c1, max_iter)
            total_iters += iters
            if status is LpStatus.UNBOUNDED:  # cannot happen: phase-1 objective <= 0
                raise NumericalBreakdown("phase 1 reported unbounded")
            basic_art = state.basis >= self.art0
            art_sum = float(np.maximum(state.xB[basic_art], 0.0).sum())
            if art_sum > opts.feas_tol:
                return LpSolution(
                    status=LpStatus.INFEASIBLE, infeasibility=art_sum, iterations=total_iters
                )
            self._expel_artificials(state, full_lo, full_hi, opts)
            full_hi[self.art0 :] = 0.0  # artificials frozen at zero for phase 2

        status, iters = self._iterate(state, A_full, full_lo, full_hi, c2, max_iter - total_iters)
        total_iters += iters
        if status is LpStatus.UNBOUNDED:
            return LpSolution(status=LpStatus.UNBOUNDED, iterations=total_iters)

        # final clean refactorization, then read the point off the basis
        self._refactor(state, A_full, full_lo, full_hi)
        x_full = np.where(state.at_upper, np.minimum(full_hi, np.finfo(float).max), full_lo)
        x_full[state.basis] = state.xB
        x = x_full[:n].copy()
        np.clip(x, lo_s, hi_s, out=x)
        val = float(c2[:n] @ x)
        return LpSolution(
            status=LpStatus.OPTIMAL,
            x=x,
            objective=val if mx else -val,
            basis=state.basis.copy(),
            iterations=total_iters,
        )

    # ------------------------------------------------------------------
    def _refactor(self, state: _State, A_full, full_lo, full_hi) -> None:
        B = A_full[:, state.basis]
        try:
            state.T = np.linalg.solve(B, A_full)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdown("singular basis during refactorization") from exc
        x_nb = np.where(state.at_upper, np.where(np.isfinite(full_hi), full_hi, 0.0), full_lo)
        x_nb[state.basis] = 0.0
        rhs = self.b - A_full @ x_nb
        try:
            state.xB = np.linalg.solve(B, rhs)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdown("singular basis during refactorization") from exc

    def _expel_artificials(self, state: _State, full_lo, full_hi, opts) -> None:
        # swap zero-valued basic artificials for real columns where a pivot
        # element exists; the primal point is unchanged, so the entering
        # variable keeps its current resting value
        for r in range(self.m):
            if state.basis[r] < self.art0:
                continue
            row = state.T[r, : self.art0]
            cand = np.flatnonzero((np.abs(row) > opts.pivot_tol) & ~state.in_basis[: self.art0])
            if cand.size:
                j = int(cand[0])
                val = full_hi[j] if state.at_upper[j] else full_lo[j]
                self._pivot(state, r, j, val)
        # rows whose artificial cannot leave are redundant; it stays basic at 0

    def _pivot(self, state: _State, r: int, j: int, new_val: float) -> None:
        T = state.T
        piv = T[r, j]
        leaving = state.basis[r]
        state.in_basis[leaving] = False
        state.in_basis[j] = True
        state.basis[r] = j
        state.xB[r] = new_val
        state.at_upper[j] = False
        T[r] = T[r] / piv
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])

    # ------------------------------------------------------------------
    def _iterate(self, state, A_full, full_lo, full_hi, c_int, max_iter) -> tuple[LpStatus, int]:
        opts = self.opts
        pivot_tol = opts.pivot_tol
        span = full_hi - full_lo
        movable = span > 0
        iters = 0
        pivots_since_refactor = 0
        degen_streak = 0
        bland = False
        while True:
            if iters >= max_iter:
                raise NumericalBreakdown(f"iteration limit {max_iter} exceeded")
            iters += 1
            d = c_int - c_int[state.basis] @ state.T
            lower_ok = (~state.in_basis) & (~state.at_upper) & movable & (d > opts.opt_tol)
            upper_ok = (~state.in_basis) & state.at_upper & movable & (d < -opts.opt_tol)
            elig = lower_ok | upper_ok
            if not elig.any():
                return LpStatus.OPTIMAL, iters
            if bland:
                j = int(np.flatnonzero(elig)[0])
            else:
                score = np.where(elig, np.abs(d), -np.inf)
                j = int(np.argmax(score))
            sigma = -1.0 if state.at_upper[j] else 1.0
            w = state.T[:, j] * sigma  # xB moves by -w * t

            lo_B = full_lo[state.basis]
            hi_B = full_hi[state.basis]
            xB = state.xB
            with np.errstate(divide="ignore", invalid="ignore"):
                down_room = np.maximum(xB - lo_B, 0.0)
                up_room = np.maximum(hi_B - xB, 0.0)
                ratios = np.where(
                    w > pivot_tol,
                    down_room / np.where(w > pivot_tol, w, 1.0),
                    np.where(w < -pivot_tol, up_room / np.where(w < -pivot_tol, -w, 1.0), np.inf),
                )
            r = -1
            t_rows = np.inf
            if np.isfinite(ratios).any():
                t_rows = float(np.min(ratios))
                ties = np.flatnonzero(ratios <= t_rows + 1e-12)
                if bland:
                    r = int(ties[np.argmin(state.basis[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(w[ties]))])
            t_own = span[j]

            if t_own <= t_rows:
                if not np.isfinite(t_own):
                    return LpStatus.UNBOUNDED, iters
                # bound flip: variable jumps to its other bound, basis unchanged
                state.xB = xB - w * t_own
                state.at_upper[j] = not state.at_upper[j]
                degen_streak = 0
                bland = False
                continue
            if r < 0:
                return LpStatus.UNBOUNDED, iters

            t = t_rows
            leaving = state.basis[r]
            state.xB = xB - w * t
            goes_upper = w[r] < 0
            new_val = (full_lo[j] + t) if sigma > 0 else (full_hi[j] - t)
            self._pivot(state, r, j, new_val)
            state.at_upper[leaving] = bool(goes_upper)

            if t <= _DEGEN_TOL:
                degen_streak += 1
                if degen_streak >= opts.bland_after:
                    bland = True
            else:
                degen_streak = 0
                bland = False
            pivots_since_refactor += 1
            if pivots_since_refactor >= opts.refactor_every:
                self._refactor(state, A_full, full_lo, full_hi)
                pivots_since_refactor = 0


@dataclass
class _State:
    T: np.ndarray
    basis: np.ndarray
    xB: np.ndarray
    at_upper: np.ndarray
    in_basis: np.ndarray


def solve_dense(
    c,
    maximize: bool,
    A,
    senses,
    b,
    lo,
    hi,
    options: SimplexOptions | None = None,
) -> LpSolution:
    """One-shot solve of a dense LP with bounded variables."""
    eng = PreparedLp(c=np.asarray(c, dtype=float), maximize=maximize, A=A, senses=senses, b=b, options=options)
    return eng.solve(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))


# ---------------------------------------------------------------------------
# problem-level entry points

def _dense_rows(p) -> tuple[np.ndarray, list, np.ndarray]:
    n = p.num_vars
    m = len(p.rows)
    A = np.zeros((m, n))
    senses, b = [], np.zeros(m)
    for i, row in enumerate(p.rows):
        A[i, row.idx] = row.coef
        senses.append(row.sense)
        b[i] = row.rhs
    return A, senses, b


def prepare(p: MilpProblem, options: SimplexOptions | None = None) -> PreparedLp:
    """Build the reusable solver skeleton for a problem's rows and objective."""
    A, senses, b = _dense_rows(p)
    c = np.zeros(p.num_vars)
    c[p.obj_idx] = p.obj_coef
    return PreparedLp(c=c, maximize=p.obj_sense == "max", A=A, senses=senses, b=b, options=options)


def relaxed_bounds(p: MilpProblem, relax: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Bounds with binaries relaxed to [0,1] or fixed per the relax map."""
    lo = p.lo.copy()
    hi = p.hi.copy()
    for j in np.flatnonzero(p.binary):
        lo[j], hi[j] = 0.0, 1.0
    if relax:
        for j, v in relax.items():
            if not p.binary[j]:
                raise InvalidArg(f"variable {j} is not binary")
            if isinstance(v, tuple):
                lo[j], hi[j] = float(v[0]), float(v[1])
            else:
                lo[j] = hi[j] = float(v)
    return lo, hi


def solve_lp(
    p: MilpProblem, relax: dict | None = None, options: SimplexOptions | None = None
) -> LpSolution:
    """Solve the LP relaxation of `p` with binaries relaxed or fixed.

    The reported objective includes the problem's constant offset and is in
    the problem's own sense.
    """
    eng = prepare(p, options)
    lo, hi = relaxed_bounds(p, relax)
    sol = eng.solve(lo, hi)
    if sol.status is LpStatus.OPTIMAL:
        sol.objective = float(sol.objective + p.obj_offset)
    return sol
