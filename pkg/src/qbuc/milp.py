"""Bounded-variable revised simplex with dual extraction, plus branch and bound.

The LP solver keeps an explicit basis inverse and supports two entry points:
a two-phase solve from scratch and a dual-simplex re-solve from a previous
basis after right-hand-side or bound changes.  The latter is what makes the
Benders subproblem sweeps and the branch-and-bound tree affordable without an
external solver.

Conventions (documented because cut extraction depends on them):
  * problems are minimizations;
  * duals: objective == duals @ rhs + sum of reduced-cost * bound terms;
    duals of <= rows are <= 0, duals of >= rows are >= 0, equality rows free;
  * pivoting is deterministic: Dantzig pricing with lowest-index tie break,
    switching to Bland's rule after a degenerate streak (anti-cycling).
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

INF = math.inf

_FEAS_TOL = 1e-9
_DUAL_TOL = 1e-9
_PIVOT_TOL = 1e-10
_PIVOT_FLOOR = 1e-12
_INT_TOL = 1e-6
_REFACTOR_EVERY = 150
_BLAND_AFTER = 30


class LpError(Exception):
    """Base class for solver errors."""


class NumericalInstabilityError(LpError):
    """Raised when no acceptable pivot (magnitude >= 1e-12) is available."""


class LinearProgram:
    """Generic constraint-matrix LP: min c@x s.t. rows, lb <= x <= ub."""

    def __init__(self):
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.obj: list[float] = []
        self.var_names: list[str | None] = []
        self._rows: list[list[tuple[int, float]]] = []
        self.senses: list[str] = []
        self.rhs: list[float] = []
        self.row_tags: list[object] = []

    @property
    def n_vars(self) -> int:
        return len(self.lb)

    @property
    def n_rows(self) -> int:
        return len(self._rows)

    def add_var(self, lb=0.0, ub=INF, obj=0.0, name=None) -> int:
        if lb > ub:
            raise ValueError(f"variable bounds reversed: lb={lb} > ub={ub}")
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.obj.append(float(obj))
        self.var_names.append(name)
        return len(self.lb) - 1

    def add_row(self, coeffs, sense: str, rhs: float, tag=None) -> int:
        if sense not in ("<=", ">=", "=="):
            raise ValueError(f"unknown row sense {sense!r}")
        items = sorted(coeffs.items()) if isinstance(coeffs, dict) else sorted(coeffs)
        n = self.n_vars
        for j, a in items:
            if not 0 <= j < n:
                raise ValueError(f"row references unknown variable {j}")
            if not math.isfinite(a):
                raise ValueError("non-finite row coefficient")
        self._rows.append([(j, float(a)) for j, a in items])
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        self.row_tags.append(tag)
        return len(self._rows) - 1

    def dense(self) -> np.ndarray:
        """Row-major dense constraint matrix over the structural variables."""
        a = np.zeros((self.n_rows, self.n_vars))
        for i, row in enumerate(self._rows):
            for j, v in row:
                a[i, j] += v
        return a


@dataclass
class LpSolution:
    status: str                      # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None      # structural variable values
    objective: float = math.nan
    duals: np.ndarray | None = None  # one multiplier per row, sign per module docstring
    reduced_costs: np.ndarray | None = None
    row_tags: list = field(default_factory=list)


# variable statuses inside the simplex
_AT_LB, _AT_UB, _IS_FREE, _IS_BASIC = 0, 1, 2, 3


class _Simplex:
    """Standard-form core: min c@x, A@x = b, lo <= x <= hi.

    Columns are laid out as [structural | slacks | artificials].  Artificials
    are pinned to [0, 0] outside of phase 1.
    """

    def __init__(self, lp: LinearProgram):
        m, n = lp.n_rows, lp.n_vars
        self.m, self.n_struct = m, n
        ncols = n + 2 * m
        self.A = np.zeros((m, ncols))
        self.A[:, :n] = lp.dense()
        self.b = np.asarray(lp.rhs, dtype=float)
        self.c = np.zeros(ncols)
        self.c[:n] = lp.obj
        self.lo = np.full(ncols, 0.0)
        self.hi = np.full(ncols, 0.0)
        self.lo[:n] = lp.lb
        self.hi[:n] = lp.ub
        for i, sense in enumerate(lp.senses):
            self.A[i, n + i] = 1.0
            if sense == "<=":
                self.lo[n + i], self.hi[n + i] = 0.0, INF
            elif sense == ">=":
                self.lo[n + i], self.hi[n + i] = -INF, 0.0
            else:
                self.lo[n + i], self.hi[n + i] = 0.0, 0.0
        # artificial columns: identity signs set per scratch solve
        self.art0 = n + m
        self.basis = np.arange(self.art0, self.art0 + m)
        self.vstat = np.full(ncols, _AT_LB, dtype=np.int8)
        self.binv = np.eye(m)
        self.xb = np.zeros(m)
        self._pivots = 0

    # -- nonbasic values ---------------------------------------------------

    def _nb_value(self, j) -> float:
        s = self.vstat[j]
        if s == _AT_LB:
            return self.lo[j]
        if s == _AT_UB:
            return self.hi[j]
        return 0.0

    def _nb_vector(self) -> np.ndarray:
        v = np.where(self.vstat == _AT_UB, self.hi, np.where(self.vstat == _AT_LB, self.lo, 0.0))
        v[self.vstat == _IS_BASIC] = 0.0
        v[~np.isfinite(v)] = 0.0
        return v

    def _refactor(self):
        basis_mat = self.A[:, self.basis]
        try:
            self.binv = np.linalg.inv(basis_mat)
        except np.linalg.LinAlgError as exc:
            raise NumericalInstabilityError("singular basis during refactorization") from exc
        self._recompute_xb()

    def _recompute_xb(self):
        self._wvec = self.A @ self._nb_vector()
        self.xb = self.binv @ (self.b - self._wvec)

    def _shift_nonbasic(self, j: int, old_val: float, new_val: float):
        """Keep w = A @ x_N and x_B consistent when a nonbasic value moves."""
        if new_val != old_val:
            col = self.A[:, j] * (new_val - old_val)
            self._wvec += col
            self.xb -= self.binv @ col

    def _update_binv(self, t: np.ndarray, r: int):
        piv = t[r]
        if abs(piv) < _PIVOT_FLOOR:
            raise NumericalInstabilityError(f"pivot magnitude {abs(piv):.3e} below 1e-12 floor")
        row = self.binv[r, :] / piv
        t2 = t.copy()
        t2[r] = 0.0
        self.binv -= np.outer(t2, row)
        self.binv[r, :] = row
        self._pivots += 1
        if self._pivots % _REFACTOR_EVERY == 0:
            self._refactor()
            return True
        return False

    # -- primal simplex ----------------------------------------------------

    def _primal(self, c: np.ndarray, max_iters: int) -> str:
        m = self.m
        fixed = self.lo == self.hi
        degen_streak = 0
        self._recompute_xb()
        for _ in range(max_iters):
            y = self.c_b(c) @ self.binv
            d = c - y @ self.A
            stat = self.vstat
            viol = np.zeros_like(d)
            can_up = (stat == _AT_LB) | (stat == _IS_FREE)
            can_dn = (stat == _AT_UB) | (stat == _IS_FREE)
            viol = np.where(can_up & ~fixed, np.minimum(d, 0.0), viol)
            dn = can_dn & ~fixed & (d > 0)
            viol[dn] = np.minimum(viol[dn], -d[dn])
            eligible = viol < -_DUAL_TOL
            if not eligible.any():
                self._recompute_xb()
                return "optimal"
            if degen_streak >= _BLAND_AFTER:
                j = int(np.flatnonzero(eligible)[0])  # Bland: lowest index
            else:
                j = int(np.argmin(viol))
            up = d[j] < 0 and (stat[j] == _AT_LB or stat[j] == _IS_FREE)
            s = 1.0 if up else -1.0
            t = self.binv @ self.A[:, j]
            # ratio test: x_B -= s*theta*t
            lo_b = self.lo[self.basis]
            hi_b = self.hi[self.basis]
            st = s * t
            ratios = np.full(m, INF)
            mask_dn = (st > _PIVOT_TOL) & np.isfinite(lo_b)
            ratios[mask_dn] = (self.xb[mask_dn] - lo_b[mask_dn]) / st[mask_dn]
            mask_up = (st < -_PIVOT_TOL) & np.isfinite(hi_b)
            ratios[mask_up] = (self.xb[mask_up] - hi_b[mask_up]) / st[mask_up]
            np.maximum(ratios, 0.0, out=ratios)
            theta = float(ratios.min(initial=INF))
            leave = -1
            if theta < INF:
                ties = np.flatnonzero(ratios <= theta + 1e-12)
                if degen_streak >= _BLAND_AFTER:
                    leave = int(ties[np.argmin(self.basis[ties])])
                else:
                    leave = int(ties[np.argmax(np.abs(st[ties]))])
            flip = self.hi[j] - self.lo[j]
            if flip < theta and math.isfinite(flip):
                # bound flip, no basis change
                old = self._nb_value(j)
                self.vstat[j] = _AT_UB if up else _AT_LB
                self._shift_nonbasic(j, old, self._nb_value(j))
                degen_streak = degen_streak + 1 if flip <= _FEAS_TOL else 0
                continue
            if leave < 0:
                return "unbounded"
            if abs(t[leave]) < _PIVOT_FLOOR:
                raise NumericalInstabilityError("pivot below tolerance floor in ratio test")
            leaving = self.basis[leave]
            enter_val = self._nb_value(j) + s * theta
            self.vstat[leaving] = _AT_LB if st[leave] > 0 else _AT_UB
            self.basis[leave] = j
            self.vstat[j] = _IS_BASIC
            self.xb -= s * theta * t
            self.xb[leave] = enter_val
            self._wvec += (self.A[:, leaving] * self._nb_value(leaving)
                           - self.A[:, j] * (enter_val - s * theta))
            self._update_binv(t, leave)
            degen_streak = degen_streak + 1 if theta <= _FEAS_TOL else 0
        raise NumericalInstabilityError("primal simplex iteration limit exceeded")

    def c_b(self, c: np.ndarray) -> np.ndarray:
        return c[self.basis]

    # -- dual simplex (warm re-solve after rhs/bound changes) ---------------

    def _dual(self, c: np.ndarray, max_iters: int) -> str:
        m = self.m
        fixed = self.lo == self.hi
        self._recompute_xb()
        d = c - (self.c_b(c) @ self.binv) @ self.A
        for _ in range(max_iters):
            lo_b = self.lo[self.basis]
            hi_b = self.hi[self.basis]
            below = lo_b - self.xb
            above = self.xb - hi_b
            below[~np.isfinite(below)] = -INF
            above[~np.isfinite(above)] = -INF
            worst = np.maximum(below, above)
            r = int(np.argmax(worst))
            if worst[r] <= _FEAS_TOL:
                self._recompute_xb()
                return "optimal"
            too_low = below[r] >= above[r]
            alpha = self.binv[r, :] @ self.A
            stat = self.vstat
            if too_low:
                elig = ((stat == _AT_LB) & (alpha < -_PIVOT_TOL)) | ((stat == _AT_UB) & (alpha > _PIVOT_TOL))
            else:
                elig = ((stat == _AT_LB) & (alpha > _PIVOT_TOL)) | ((stat == _AT_UB) & (alpha < -_PIVOT_TOL))
            elig |= (stat == _IS_FREE) & (np.abs(alpha) > _PIVOT_TOL)
            elig &= ~fixed
            elig[self.basis] = False
            idx = np.flatnonzero(elig)
            if idx.size == 0:
                return "infeasible"
            ratios = np.abs(d[idx] / alpha[idx])
            best = ratios.min()
            cand = idx[ratios <= best + 1e-9]
            j = int(cand[np.argmax(np.abs(alpha[cand]))])
            t = self.binv @ self.A[:, j]
            if abs(t[r]) < _PIVOT_FLOOR:
                raise NumericalInstabilityError("dual pivot below tolerance floor")
            leaving = self.basis[r]
            target = self.lo[leaving] if too_low else self.hi[leaving]
            step = (self.xb[r] - target) / t[r]
            enter_val = self._nb_value(j) + step
            self.vstat[leaving] = _AT_LB if too_low else _AT_UB
            self.basis[r] = j
            self.vstat[j] = _IS_BASIC
            self.xb -= step * t
            self.xb[r] = enter_val
            self._wvec += (self.A[:, leaving] * target
                           - self.A[:, j] * (enter_val - step))
            d -= (d[j] / alpha[j]) * alpha
            d[j] = 0.0
            if self._update_binv(t, r):
                d = c - (self.c_b(c) @ self.binv) @ self.A
        raise NumericalInstabilityError("dual simplex iteration limit exceeded")

    # -- drivers -------------------------------------------------------------

    def solve_scratch(self) -> str:
        m, n = self.m, self.n_struct
        # nonbasic start: every structural/slack var at the finite bound nearest 0
        for j in range(self.art0):
            lo, hi = self.lo[j], self.hi[j]
            if lo == -INF and hi == INF:
                self.vstat[j] = _IS_FREE
            elif lo == -INF:
                self.vstat[j] = _AT_UB
            elif hi == INF:
                self.vstat[j] = _AT_LB
            else:
                self.vstat[j] = _AT_LB if abs(lo) <= abs(hi) else _AT_UB
        w = self.A[:, : self.art0] @ self._nb_vector()[: self.art0]
        resid = self.b - w
        signs = np.where(resid >= 0, 1.0, -1.0)
        for i in range(m):
            col = self.art0 + i
            self.A[:, col] = 0.0
            self.A[i, col] = signs[i]
            self.lo[col], self.hi[col] = 0.0, INF
            self.vstat[col] = _IS_BASIC
            self.basis[i] = col
        self.binv = np.diag(signs)
        self._recompute_xb()
        phase1 = np.zeros_like(self.c)
        phase1[self.art0:] = 1.0
        status = self._primal(phase1, self._iter_cap())
        if status != "optimal":
            raise NumericalInstabilityError("phase 1 did not terminate cleanly")
        infeas = float(phase1 @ self.full_x())
        if infeas > 1e-7 * max(1.0, float(np.abs(self.b).max(initial=0.0))):
            return "infeasible"
        self.lo[self.art0:] = 0.0
        self.hi[self.art0:] = 0.0
        return self._primal(self.c, self._iter_cap())

    def resolve(self, refactor: bool = False) -> str:
        """Dual re-solve from the current basis; falls back to scratch.

        refactor=True rebuilds the basis inverse first (needed after restoring
        a snapshot); RHS-only changes can keep the current one.
        """
        if refactor:
            self._refactor()
        try:
            status = self._dual(self.c, self._iter_cap())
        except NumericalInstabilityError:
            return self.solve_scratch()
        if status == "infeasible":
            return "infeasible"
        # dual simplex ends primal-feasible; polish any dual infeasibility
        return self._primal(self.c, self._iter_cap())

    def _iter_cap(self) -> int:
        return 50 * (self.m + self.n_struct) + 10000

    def full_x(self) -> np.ndarray:
        x = self._nb_vector()
        x[self.basis] = self.xb
        return x

    def extract(self, lp: LinearProgram) -> LpSolution:
        x = self.full_x()
        y = self.c_b(self.c) @ self.binv
        d = self.c - y @ self.A
        xs = x[: self.n_struct].copy()
        return LpSolution(
            status="optimal",
            x=xs,
            objective=float(self.c[: self.n_struct] @ xs),
            duals=y.copy(),
            reduced_costs=d[: self.n_struct].copy(),
            row_tags=list(lp.row_tags),
        )

    def snapshot(self):
        return self.basis.copy(), self.vstat.copy()

    def restore(self, snap):
        self.basis, self.vstat = snap[0].copy(), snap[1].copy()


def _check_solution(simplex: _Simplex, lp: LinearProgram, sol: LpSolution):
    """Post-solve sanity: dual signs and strong duality, asserted on every solve."""
    y = sol.duals
    for i, sense in enumerate(lp.senses):
        if sense == "<=" and y[i] > 1e-7:
            raise NumericalInstabilityError(f"dual of <= row {i} is positive: {y[i]}")
        if sense == ">=" and y[i] < -1e-7:
            raise NumericalInstabilityError(f"dual of >= row {i} is negative: {y[i]}")


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Solve an LP to a basic optimal solution with row duals."""
    if lp.n_vars == 0:
        return LpSolution(status="optimal", x=np.zeros(0), objective=0.0,
                          duals=np.zeros(lp.n_rows), reduced_costs=np.zeros(0),
                          row_tags=list(lp.row_tags))
    simplex = _Simplex(lp)
    status = simplex.solve_scratch()
    if status != "optimal":
        return LpSolution(status=status, row_tags=list(lp.row_tags))
    sol = simplex.extract(lp)
    _check_solution(simplex, lp, sol)
    return sol


# ---------------------------------------------------------------------------
# branch and bound
# ---------------------------------------------------------------------------


@dataclass
class MilpModel:
    lp: LinearProgram
    integer_vars: list[int]

    def __post_init__(self):
        for j in self.integer_vars:
            lo, hi = self.lp.lb[j], self.lp.ub[j]
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError(f"integer variable {j} must be bounded")
            if lo != round(lo) or hi != round(hi):
                raise ValueError(f"integer variable {j} has fractional bounds [{lo}, {hi}]")


@dataclass
class MilpResult:
    status: str                 # "optimal" | "feasible" | "infeasible"
    x: np.ndarray | None
    objective: float
    gap: float
    nodes: int


def _fractionality(x, int_vars):
    vals = x[int_vars]
    return np.abs(vals - np.round(vals))


def solve_milp(model: MilpModel, time_limit: float | None = None,
               warm=None) -> MilpResult:
    """Best-bound branch and bound over the integer-restricted variables.

    Branches on the most fractional integer variable (ties by lowest index).
    Child nodes warm-start a dual simplex from the parent basis.  With
    time_limit=None the search runs to proven optimality and is deterministic.
    `warm` may map integer variable indices to a candidate assignment used to
    seed the incumbent.
    """
    lp = model.lp
    int_vars = np.asarray(sorted(model.integer_vars), dtype=int)
    t0 = time.perf_counter()
    simplex = _Simplex(lp)
    base_lo = simplex.lo.copy()
    base_hi = simplex.hi.copy()

    incumbent = None
    incumbent_obj = INF

    if warm is not None:
        for j in int_vars:
            v = float(warm[j]) if not isinstance(warm, dict) else float(warm.get(int(j), 0.0))
            simplex.lo[j] = simplex.hi[j] = round(v)
        if simplex.solve_scratch() == "optimal":
            x = simplex.full_x()[: simplex.n_struct]
            incumbent = x.copy()
            incumbent_obj = float(np.asarray(lp.obj) @ x)
        simplex.lo[:] = base_lo
        simplex.hi[:] = base_hi

    status = simplex.solve_scratch()
    nodes = 1
    if status == "unbounded":
        raise LpError("unbounded LP relaxation in branch and bound")
    if status != "optimal":
        if incumbent is not None:
            return MilpResult("optimal", incumbent, incumbent_obj, 0.0, nodes)
        return MilpResult("infeasible", None, math.nan, math.nan, nodes)

    heap = []
    seq = 0

    def push(bound, fixings, snap):
        nonlocal seq
        heapq.heappush(heap, (bound, seq, fixings, snap))
        seq += 1

    def consider(x, obj):
        nonlocal incumbent, incumbent_obj
        if obj < incumbent_obj - 1e-9:
            incumbent = x.copy()
            incumbent_obj = obj

    frac = _fractionality(simplex.full_x()[: simplex.n_struct], int_vars)
    root_obj = float(np.asarray(lp.obj) @ simplex.full_x()[: simplex.n_struct])
    if frac.max(initial=0.0) <= _INT_TOL:
        consider(simplex.full_x()[: simplex.n_struct], root_obj)
        return MilpResult("optimal", incumbent, incumbent_obj, 0.0, nodes)
    push(root_obj, (), simplex.snapshot())

    best_bound = root_obj
    while heap:
        bound, _, fixings, snap = heapq.heappop(heap)
        best_bound = bound
        if bound >= incumbent_obj - 1e-9:
            break
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            heapq.heappush(heap, (bound, -1, fixings, snap))
            break
        simplex.lo[:] = base_lo
        simplex.hi[:] = base_hi
        for j, lo, hi in fixings:
            simplex.lo[j], simplex.hi[j] = lo, hi
        simplex.restore(snap)
        nodes += 1
        try:
            status = simplex.resolve(refactor=True)
        except NumericalInstabilityError:
            status = simplex.solve_scratch()
        if status != "optimal":
            continue
        x = simplex.full_x()[: simplex.n_struct]
        obj = float(np.asarray(lp.obj) @ x)
        if obj >= incumbent_obj - 1e-9:
            continue
        frac = _fractionality(x, int_vars)
        worst = frac.max(initial=0.0)
        if worst <= _INT_TOL:
            consider(x, obj)
            continue
        j = int(int_vars[int(np.argmax(frac))])
        v = x[j]
        snap2 = simplex.snapshot()
        down = fixings + ((j, simplex.lo[j], math.floor(v)),)
        up = fixings + ((j, math.ceil(v), simplex.hi[j]),)
        push(obj, down, snap2)
        push(obj, up, snap2)

    if incumbent is None:
        return MilpResult("infeasible", None, math.nan, math.nan, nodes)
    if heap and (time_limit is not None):
        gap = max(0.0, (incumbent_obj - best_bound) / max(1.0, abs(incumbent_obj)))
        return MilpResult("feasible", incumbent, incumbent_obj, gap, nodes)
    return MilpResult("optimal", incumbent, incumbent_obj, 0.0, nodes)
