"""Model builders: the full commitment MILP, fixed-commitment dispatch LPs,
and the cut-bound IP, all derived from one shared row structure.

The dispatch subproblem's right-hand side is an affine function of the
commitment bits.  We materialize that function once per instance as
``b(u, v, w) = b_const + b_u @ u + b_v @ v + b_w @ w`` and reuse it three ways:

  * subproblem RHS for any fixed schedule,
  * the full MILP (the b_u/b_v/b_w entries move to the left-hand side),
  * optimality-cut extraction (cut coefficients are ``duals @ b_*``),

so the three artifacts cannot drift apart.

Row dual groups are tagged: "lam1" dispatch definition (rhs 0), "lam2"
segment-fraction sum, "lam3" nodal balance, "lam4" startup ramp, "lam5"
shutdown ramp, "lam6" ramp-up, "lam7" ramp-down, "lam8" line limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .instance import UcInstance
from .milp import INF, LinearProgram, LpSolution, MilpModel, _Simplex, solve_lp, solve_milp


@dataclass
class CommitmentSchedule:
    """On/off, startup and shutdown bits, shape (G, T)."""

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.int8)
        self.v = np.asarray(self.v, dtype=np.int8)
        self.w = np.asarray(self.w, dtype=np.int8)

    @classmethod
    def all_off(cls, inst: UcInstance) -> "CommitmentSchedule":
        z = np.zeros((inst.n_gens, inst.horizon), dtype=np.int8)
        sched = cls(z, z.copy(), z.copy())
        for gi, g in enumerate(inst.generators):
            if g.initial_on:
                sched.w[gi, 0] = 1
        return sched

    @classmethod
    def from_u(cls, inst: UcInstance, u: np.ndarray) -> "CommitmentSchedule":
        """Derive v/w from the on/off trajectory (logic repair)."""
        u = np.asarray(u, dtype=np.int8).reshape(inst.n_gens, inst.horizon)
        u0 = np.array([int(g.initial_on) for g in inst.generators], dtype=np.int8)
        prev = np.concatenate([u0[:, None], u[:, :-1]], axis=1)
        diff = u - prev
        return cls(u, (diff > 0).astype(np.int8), (diff < 0).astype(np.int8))

    def key(self) -> bytes:
        return self.u.tobytes() + self.v.tobytes() + self.w.tobytes()

    def hamming_u(self, other: "CommitmentSchedule") -> int:
        return int(np.sum(self.u != other.u))

    def logic_ok(self, inst: UcInstance) -> bool:
        u0 = np.array([int(g.initial_on) for g in inst.generators], dtype=np.int8)
        prev = np.concatenate([u0[:, None], self.u[:, :-1]], axis=1)
        if np.any(self.u - prev != self.v - self.w):
            return False
        return not np.any((self.v == 1) & (self.w == 1))

    def min_updown_ok(self, inst: UcInstance) -> bool:
        T = inst.horizon
        for gi, g in enumerate(inst.generators):
            for t in range(g.min_up - 1, T):
                if self.v[gi, t - g.min_up + 1: t + 1].sum() > self.u[gi, t]:
                    return False
            for t in range(g.min_down - 1, T):
                if self.w[gi, t - g.min_down + 1: t + 1].sum() > 1 - self.u[gi, t]:
                    return False
        return True


@dataclass
class DispatchSolution:
    p: np.ndarray                    # (G, T) marginal dispatch above minimum
    alpha: list                      # per generator: (T, L_g) segment fractions
    theta: np.ndarray                # (N, T) bus angles, radians
    r: np.ndarray                    # (G, T) spinning reserve
    delta_plus: np.ndarray           # (T,) overproduction, >= 0
    delta_minus: np.ndarray          # (T,) underproduction, <= 0
    cost: float                      # dispatch + shed cost


@dataclass
class SpStructure:
    """Dispatch-LP skeleton with the commitment-dependent RHS factored out."""

    inst: UcInstance
    lp: LinearProgram                # rhs corresponds to the all-zero schedule
    var: dict
    b_const: np.ndarray              # (m,)
    b_u: np.ndarray                  # (m, G*T), u in g-major order
    b_v: np.ndarray
    b_w: np.ndarray

    def rhs(self, sched: CommitmentSchedule) -> np.ndarray:
        return (self.b_const
                + self.b_u @ sched.u.reshape(-1).astype(float)
                + self.b_v @ sched.v.reshape(-1).astype(float)
                + self.b_w @ sched.w.reshape(-1).astype(float))


@lru_cache(maxsize=16)
def sp_structure(inst: UcInstance) -> SpStructure:
    G, T, N = inst.n_gens, inst.horizon, inst.n_buses
    lp = LinearProgram()
    var = {}
    for gi, g in enumerate(inst.generators):
        for t in range(T):
            var["p", gi, t] = lp.add_var(0.0, INF, 0.0, name=f"p[{g.name},{t}]")
    for gi, g in enumerate(inst.generators):
        c_floor = g.segments[0][1]
        for t in range(T):
            for li, (_, c) in enumerate(g.segments):
                var["alpha", gi, t, li] = lp.add_var(0.0, INF, c - c_floor)
    for gi in range(G):
        for t in range(T):
            var["r", gi, t] = lp.add_var(0.0, INF, 0.0)
    ref = inst.bus_index(inst.reference_bus)
    for n in range(N):
        for t in range(T):
            lo, hi = (0.0, 0.0) if n == ref else (-INF, INF)
            var["theta", n, t] = lp.add_var(lo, hi, 0.0)
    for t in range(T):
        var["dplus", t] = lp.add_var(0.0, INF, inst.penalty_cost[t])
    for t in range(T):
        var["dminus", t] = lp.add_var(-INF, 0.0, -inst.penalty_cost[t])

    gt = lambda gi, t: gi * T + t
    rows_u, rows_v, rows_w, consts = [], [], [], []

    def add(coeffs, sense, tag, const=0.0, cu=(), cv=(), cw=()):
        lp.add_row(coeffs, sense, const, tag=tag)
        consts.append(const)
        rows_u.append(tuple(cu))
        rows_v.append(tuple(cv))
        rows_w.append(tuple(cw))

    for gi, g in enumerate(inst.generators):
        levels = [lv for lv, _ in g.segments]
        for t in range(T):
            coeffs = {var["p", gi, t]: 1.0}
            for li, lv in enumerate(levels):
                coeffs[var["alpha", gi, t, li]] = -(lv - g.p_min[t])
            add(coeffs, "==", ("lam1", gi, t))
    for gi, g in enumerate(inst.generators):
        for t in range(T):
            coeffs = {var["alpha", gi, t, li]: 1.0 for li in range(g.n_segments)}
            add(coeffs, "==", ("lam2", gi, t), cu=[(gt(gi, t), 1.0)])
    by_bus = [[] for _ in range(N)]
    for gi, g in enumerate(inst.generators):
        by_bus[inst.bus_index(g.bus)].append(gi)
    incident = [[] for _ in range(N)]
    for li, ln in enumerate(inst.lines):
        a, b = inst.bus_index(ln.from_bus), inst.bus_index(ln.to_bus)
        incident[a].append((li, b, ln.susceptance))
        incident[b].append((li, a, ln.susceptance))
    for n in range(N):
        for t in range(T):
            coeffs = {}
            for gi in by_bus[n]:
                coeffs[var["p", gi, t]] = 1.0
            for _, j, B in incident[n]:
                coeffs[var["theta", n, t]] = coeffs.get(var["theta", n, t], 0.0) - B
                coeffs[var["theta", j, t]] = coeffs.get(var["theta", j, t], 0.0) + B
            coeffs[var["dplus", t]] = coeffs.get(var["dplus", t], 0.0) - 1.0
            coeffs[var["dminus", t]] = coeffs.get(var["dminus", t], 0.0) - 1.0
            add(coeffs, "==", ("lam3", n, t), const=inst.demand[n][t],
                cu=[(gt(gi, t), -inst.generators[gi].p_min[t]) for gi in by_bus[n]])
    for gi, g in enumerate(inst.generators):
        for t in range(T):
            span = g.p_max[t] - g.p_min[t]
            su = max(g.p_max[t] - g.ramp_startup, 0.0)
            add({var["p", gi, t]: 1.0, var["r", gi, t]: 1.0}, "<=", ("lam4", gi, t),
                cu=[(gt(gi, t), span)], cv=[(gt(gi, t), -su)])
    for gi, g in enumerate(inst.generators):
        for t in range(T - 1):
            span = g.p_max[t] - g.p_min[t]
            sd = max(g.p_max[t] - g.ramp_shutdown, 0.0)
            add({var["p", gi, t]: 1.0, var["r", gi, t]: 1.0}, "<=", ("lam5", gi, t),
                cu=[(gt(gi, t), span)], cw=[(gt(gi, t + 1), -sd)])
    for gi, g in enumerate(inst.generators):
        for t in range(1, T):
            add({var["p", gi, t]: 1.0, var["r", gi, t]: 1.0, var["p", gi, t - 1]: -1.0},
                "<=", ("lam6", gi, t), const=g.ramp_up)
    for gi, g in enumerate(inst.generators):
        for t in range(1, T):
            add({var["p", gi, t - 1]: 1.0, var["p", gi, t]: -1.0},
                "<=", ("lam7", gi, t), const=g.ramp_down)
    for li, ln in enumerate(inst.lines):
        a, b = inst.bus_index(ln.from_bus), inst.bus_index(ln.to_bus)
        for t in range(T):
            for sign in (1.0, -1.0):
                add({var["theta", a, t]: sign * ln.susceptance,
                     var["theta", b, t]: -sign * ln.susceptance},
                    "<=", ("lam8", li, t, int(sign)), const=ln.f_max)

    m = lp.n_rows
    b_u = np.zeros((m, G * T))
    b_v = np.zeros((m, G * T))
    b_w = np.zeros((m, G * T))
    for i in range(m):
        for k, val in rows_u[i]:
            b_u[i, k] += val
        for k, val in rows_v[i]:
            b_v[i, k] += val
        for k, val in rows_w[i]:
            b_w[i, k] += val
    return SpStructure(inst, lp, var, np.asarray(consts, dtype=float), b_u, b_v, b_w)


def build_subproblem(inst: UcInstance, sched: CommitmentSchedule) -> LinearProgram:
    """Dispatch LP for a fixed schedule, rows tagged by dual group.

    Always feasible: load imbalance is absorbed by the penalized slack pair.
    """
    s = sp_structure(inst)
    lp = LinearProgram()
    lp.lb, lp.ub, lp.obj = list(s.lp.lb), list(s.lp.ub), list(s.lp.obj)
    lp.var_names = list(s.lp.var_names)
    lp._rows = s.lp._rows
    lp.senses = list(s.lp.senses)
    lp.row_tags = list(s.lp.row_tags)
    lp.rhs = [float(x) for x in s.rhs(sched)]
    return lp


class SubproblemSolver:
    """Re-solves the dispatch LP across many schedules with a shared warm basis."""

    def __init__(self, inst: UcInstance):
        self.structure = sp_structure(inst)
        self._simplex = _Simplex(self.structure.lp)
        self._solved_once = False

    def solve(self, sched: CommitmentSchedule) -> LpSolution:
        s = self.structure
        self._simplex.b = s.rhs(sched)
        if self._solved_once:
            status = self._simplex.resolve()
        else:
            status = self._simplex.solve_scratch()
            self._solved_once = True
        if status != "optimal":
            self._solved_once = False  # basis unusable; next call starts cold
            return LpSolution(status=status, row_tags=list(s.lp.row_tags))
        return self._simplex.extract(s.lp)


def extract_dispatch(inst: UcInstance, sol: LpSolution) -> DispatchSolution:
    s = sp_structure(inst)
    G, T, N = inst.n_gens, inst.horizon, inst.n_buses
    x = sol.x
    p = np.array([[x[s.var["p", gi, t]] for t in range(T)] for gi in range(G)])
    r = np.array([[x[s.var["r", gi, t]] for t in range(T)] for gi in range(G)])
    theta = np.array([[x[s.var["theta", n, t]] for t in range(T)] for n in range(N)])
    alpha = [np.array([[x[s.var["alpha", gi, t, li]] for li in range(g.n_segments)]
                       for t in range(T)])
             for gi, g in enumerate(inst.generators)]
    dplus = np.array([x[s.var["dplus", t]] for t in range(T)])
    dminus = np.array([x[s.var["dminus", t]] for t in range(T)])
    return DispatchSolution(p, alpha, theta, r, dplus, dminus, sol.objective)


def commitment_cost(inst: UcInstance, sched: CommitmentSchedule) -> float:
    c1 = np.array([g.cost_no_load for g in inst.generators])
    c2 = np.array([g.cost_startup for g in inst.generators])
    c3 = np.array([g.cost_shutdown for g in inst.generators])
    return float(c1 @ sched.u.sum(axis=1) + c2 @ sched.v.sum(axis=1) + c3 @ sched.w.sum(axis=1))


@dataclass
class ScheduleCost:
    total: float                 # commitment + dispatch + shed penalty
    commitment: float
    dispatch: float              # subproblem objective (includes penalty)
    penalty: float               # c_pen * total imbalance, in $
    logic_ok: bool
    min_updown_ok: bool
    sp_status: str
    sp_solution: LpSolution | None = None


def evaluate_schedule_cost(inst: UcInstance, sched: CommitmentSchedule,
                           solver: SubproblemSolver | None = None,
                           with_solution: bool = False) -> ScheduleCost:
    """True objective of a schedule: commitment cost plus dispatch-LP value.

    Evaluates even commitment-infeasible schedules (neighborhood searches probe
    them); infeasibility is reported through the flags and, when the dispatch
    LP itself is infeasible (startup bit without the unit being on), through an
    infinite total.
    """
    if solver is not None:
        sol = solver.solve(sched)
    else:
        sol = solve_lp(build_subproblem(inst, sched))
    logic = sched.logic_ok(inst)
    mud = sched.min_updown_ok(inst)
    cc = commitment_cost(inst, sched)
    if sol.status != "optimal":
        return ScheduleCost(math.inf, cc, math.inf, math.inf, logic, mud, sol.status)
    s = sp_structure(inst)
    pen = 0.0
    for t in range(inst.horizon):
        pen += inst.penalty_cost[t] * (sol.x[s.var["dplus", t]] - sol.x[s.var["dminus", t]])
    return ScheduleCost(cc + sol.objective, cc, sol.objective, pen, logic, mud,
                        sol.status, sol if with_solution else None)


# ---------------------------------------------------------------------------
# full MILP
# ---------------------------------------------------------------------------


@dataclass
class FullUcModel:
    inst: UcInstance
    model: MilpModel
    var: dict                        # ("u"|"v"|"w", g, t) plus all dispatch vars
    n_commit: int                    # u/v/w column count (they come first)

    def schedule_from_x(self, x: np.ndarray) -> CommitmentSchedule:
        G, T = self.inst.n_gens, self.inst.horizon
        u = np.array([[round(x[self.var["u", gi, t]]) for t in range(T)] for gi in range(G)])
        v = np.array([[round(x[self.var["v", gi, t]]) for t in range(T)] for gi in range(G)])
        w = np.array([[round(x[self.var["w", gi, t]]) for t in range(T)] for gi in range(G)])
        return CommitmentSchedule(u, v, w)

    def dispatch_from_x(self, x: np.ndarray) -> DispatchSolution:
        inst = self.inst
        G, T, N = inst.n_gens, inst.horizon, inst.n_buses
        p = np.array([[x[self.var["p", gi, t]] for t in range(T)] for gi in range(G)])
        r = np.array([[x[self.var["r", gi, t]] for t in range(T)] for gi in range(G)])
        theta = np.array([[x[self.var["theta", n, t]] for t in range(T)] for n in range(N)])
        alpha = [np.array([[x[self.var["alpha", gi, t, li]] for li in range(g.n_segments)]
                           for t in range(T)])
                 for gi, g in enumerate(inst.generators)]
        dplus = np.array([x[self.var["dplus", t]] for t in range(T)])
        dminus = np.array([x[self.var["dminus", t]] for t in range(T)])
        cost = 0.0
        for gi, g in enumerate(inst.generators):
            floor = g.segments[0][1]
            for t in range(T):
                for li, (_, c) in enumerate(g.segments):
                    cost += (c - floor) * alpha[gi][t, li]
        for t in range(T):
            cost += inst.penalty_cost[t] * (dplus[t] - dminus[t])
        return DispatchSolution(p, alpha, theta, r, dplus, dminus, float(cost))


def _commitment_rows(lp: LinearProgram, inst: UcInstance, var: dict) -> None:
    """Logic, minimum-up and minimum-down rows over the u/v/w columns."""
    T = inst.horizon
    for gi, g in enumerate(inst.generators):
        for t in range(T):
            coeffs = {var["u", gi, t]: 1.0, var["v", gi, t]: -1.0, var["w", gi, t]: 1.0}
            rhs = float(g.initial_on) if t == 0 else 0.0
            if t > 0:
                coeffs[var["u", gi, t - 1]] = -1.0
            lp.add_row(coeffs, "==", rhs, tag=("logic", gi, t))
    for gi, g in enumerate(inst.generators):
        for t in range(g.min_up - 1, T):
            coeffs = {var["v", gi, tau]: 1.0 for tau in range(t - g.min_up + 1, t + 1)}
            coeffs[var["u", gi, t]] = coeffs.get(var["u", gi, t], 0.0) - 1.0
            lp.add_row(coeffs, "<=", 0.0, tag=("minup", gi, t))
    for gi, g in enumerate(inst.generators):
        for t in range(g.min_down - 1, T):
            coeffs = {var["w", gi, tau]: 1.0 for tau in range(t - g.min_down + 1, t + 1)}
            coeffs[var["u", gi, t]] = coeffs.get(var["u", gi, t], 0.0) + 1.0
            lp.add_row(coeffs, "<=", 1.0, tag=("mindn", gi, t))


def build_full_uc(inst: UcInstance) -> FullUcModel:
    """The complete MILP: commitment logic, dispatch, network, ramping, shed slack."""
    s = sp_structure(inst)
    G, T = inst.n_gens, inst.horizon
    lp = LinearProgram()
    var = {}
    for kind in ("u", "v", "w"):
        cost = {"u": "cost_no_load", "v": "cost_startup", "w": "cost_shutdown"}[kind]
        for gi, g in enumerate(inst.generators):
            for t in range(T):
                var[kind, gi, t] = lp.add_var(0.0, 1.0, getattr(g, cost),
                                              name=f"{kind}[{g.name},{t}]")
    n_commit = lp.n_vars
    for j in range(s.lp.n_vars):
        lp.add_var(s.lp.lb[j], s.lp.ub[j], s.lp.obj[j], name=s.lp.var_names[j])
    for key, col in s.var.items():
        var[key] = n_commit + col
    # explicit dispatch ceiling p <= p_max - p_min (implied by ramp rows; kept
    # for completeness of the stated variable domain)
    for gi, g in enumerate(inst.generators):
        for t in range(T):
            lp.ub[var["p", gi, t]] = g.p_max[t] - g.p_min[t]

    _commitment_rows(lp, inst, var)
    gt = lambda gi, t: gi * T + t
    for i, row in enumerate(s.lp._rows):
        coeffs = {n_commit + j: a for j, a in row}
        for k in range(G * T):
            gi, t = divmod(k, T)
            for mat, kind in ((s.b_u, "u"), (s.b_v, "v"), (s.b_w, "w")):
                if mat[i, k] != 0.0:
                    col = var[kind, gi, t]
                    coeffs[col] = coeffs.get(col, 0.0) - mat[i, k]
        lp.add_row(coeffs, s.lp.senses[i], float(s.b_const[i]), tag=s.lp.row_tags[i])

    integer_vars = list(range(n_commit))
    return FullUcModel(inst, MilpModel(lp, integer_vars), var, n_commit)


def full_uc_vector(fm: FullUcModel, sched: CommitmentSchedule,
                   dispatch: DispatchSolution) -> np.ndarray:
    x = np.zeros(fm.model.lp.n_vars)
    inst = fm.inst
    for gi in range(inst.n_gens):
        for t in range(inst.horizon):
            x[fm.var["u", gi, t]] = sched.u[gi, t]
            x[fm.var["v", gi, t]] = sched.v[gi, t]
            x[fm.var["w", gi, t]] = sched.w[gi, t]
            x[fm.var["p", gi, t]] = dispatch.p[gi, t]
            x[fm.var["r", gi, t]] = dispatch.r[gi, t]
            for li in range(inst.generators[gi].n_segments):
                x[fm.var["alpha", gi, t, li]] = dispatch.alpha[gi][t, li]
    for n in range(inst.n_buses):
        for t in range(inst.horizon):
            x[fm.var["theta", n, t]] = dispatch.theta[n, t]
    for t in range(inst.horizon):
        x[fm.var["dplus", t]] = dispatch.delta_plus[t]
        x[fm.var["dminus", t]] = dispatch.delta_minus[t]
    return x


def max_constraint_violation(fm: FullUcModel, x: np.ndarray) -> float:
    """Largest row or bound residual of x in the full MILP."""
    lp = fm.model.lp
    worst = 0.0
    for j in range(lp.n_vars):
        if math.isfinite(lp.lb[j]):
            worst = max(worst, lp.lb[j] - x[j])
        if math.isfinite(lp.ub[j]):
            worst = max(worst, x[j] - lp.ub[j])
    a = lp.dense()
    vals = a @ x
    for i, (sense, rhs) in enumerate(zip(lp.senses, lp.rhs)):
        if sense == "<=":
            worst = max(worst, vals[i] - rhs)
        elif sense == ">=":
            worst = max(worst, rhs - vals[i])
        else:
            worst = max(worst, abs(vals[i] - rhs))
    return float(worst)


# ---------------------------------------------------------------------------
# cut-bound IP
# ---------------------------------------------------------------------------


def build_max_eta(inst: UcInstance, cut) -> tuple[MilpModel, dict, float]:
    """Binary IP maximizing the cut's left-hand side over commitment-feasible bits.

    Returns (model, var map, constant).  The model minimizes the negated
    variable part; the caller adds the constant back.  Always bounded: every
    variable is binary.
    """
    G, T = inst.n_gens, inst.horizon
    lp = LinearProgram()
    var = {}
    for kind, coefs in (("u", cut.a_u), ("v", cut.a_v), ("w", cut.a_w)):
        for gi in range(G):
            for t in range(T):
                var[kind, gi, t] = lp.add_var(0.0, 1.0, -float(coefs[gi, t]))
    _commitment_rows(lp, inst, var)
    return MilpModel(lp, list(range(lp.n_vars))), var, float(cut.b)


def solve_max_eta(inst: UcInstance, cut) -> float:
    """Worst-case (largest) value of the cut's left-hand side."""
    model, _, const = build_max_eta(inst, cut)
    res = solve_milp(model)
    if res.status != "optimal":
        raise RuntimeError(f"cut-bound IP unexpectedly {res.status}")
    return const - res.objective


class MaxEtaSolver:
    """Re-solves the cut-bound IP for many cuts over one instance.

    Only the objective changes between cuts, so the previous optimal basis
    stays primal feasible and a primal re-solve is enough.  The commitment
    polytope described by the logic and window rows is integral, so the LP
    optimum is almost always already binary; fractional corner cases fall
    back to branch and bound.
    """

    def __init__(self, inst: UcInstance):
        self.inst = inst
        lp = LinearProgram()
        self.var = {}
        G, T = inst.n_gens, inst.horizon
        for kind in ("u", "v", "w"):
            for gi in range(G):
                for t in range(T):
                    self.var[kind, gi, t] = lp.add_var(0.0, 1.0, 0.0)
        _commitment_rows(lp, inst, self.var)
        self.lp = lp
        self._simplex = _Simplex(lp)
        self._solved_once = False

    def solve(self, cut) -> float:
        G, T = self.inst.n_gens, self.inst.horizon
        cols = np.zeros(self.lp.n_vars)
        for kind, coefs in (("u", cut.a_u), ("v", cut.a_v), ("w", cut.a_w)):
            for gi in range(G):
                for t in range(T):
                    cols[self.var[kind, gi, t]] = -float(coefs[gi, t])
        self._simplex.c[: self.lp.n_vars] = cols
        if self._solved_once:
            status = self._simplex._primal(self._simplex.c, self._simplex._iter_cap())
        else:
            status = self._simplex.solve_scratch()
            self._solved_once = True
        if status != "optimal":
            self._solved_once = False
            return solve_max_eta(self.inst, cut)
        x = self._simplex.full_x()[: self.lp.n_vars]
        if np.abs(x - np.round(x)).max(initial=0.0) > 1e-6:
            return solve_max_eta(self.inst, cut)
        return float(cut.b) - float(cols @ x)
