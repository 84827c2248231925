"""Hybrid decomposition driver: annealed QUBO master, dispatch subproblems,
largest-violation cut generation, stall-triggered neighborhood search, and a
Hamming-ball MILP recovery pass.

Stopping rules, in the order they are checked each iteration: (1) the best
shed penalty observed this iteration (neighborhood-search probes included)
falls to the configured bound; (2) the iteration cap.  A stall (window of
non-improving master objectives) does not stop the run; it triggers the
improvement/shake stage, whose probes add further cuts.

All randomness derives from one seed: the sampler seed for iteration k is
drawn from SeedSequence(seed, spawn_key=(1, k)) and the shake generator from
spawn_key=(2, k), so any stage can be replayed in isolation.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .formulation import (CommitmentSchedule, DispatchSolution, MaxEtaSolver,
                          ScheduleCost, SubproblemSolver, build_full_uc,
                          evaluate_schedule_cost)
from .instance import UcInstance
from .milp import solve_milp
from .qubo import (BendersCut, EtaEncoding, build_master_qubo, decode_sample,
                   default_penalties, eta_encoding_width, extract_raw_cut, round_cut)
from .sampler import AnnealParams, get_sampler


class RecoveryInfeasibleError(Exception):
    """No feasible commitment exists inside the Hamming ball."""


@dataclass
class LoopConfig:
    stall_window: int = 3            # consecutive non-improving iterations before shaking
    improve_eps: float | None = None  # $; None: 1e-3 x first master objective, floor 1 $
    samples: int = 20                # reads per master solve
    sweeps: int = 1000
    gvns_k1: int = 1                 # bits flipped per improvement probe
    gvns_k2: int = 3                 # bits flipped by the shake
    gvns_budget: int = 25            # improvement probes per sample
    recovery_k: int = 3              # Hamming radius of the recovery MILP
    penalty_bound: float = 1.0       # $; stop once some schedule sheds less than this
    max_iters: int = 25
    precision: int = 2               # decimal places kept when rounding is disabled
    rounding: bool = True
    sampler: str = "sa"
    sampler_opts: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.stall_window < 1:
            raise ValueError("stall_window must be >= 1")
        if self.improve_eps is not None and not self.improve_eps > 0:
            raise ValueError("improve_eps must be positive")
        if self.samples < 1 or self.sweeps < 1:
            raise ValueError("samples and sweeps must be >= 1")
        if self.gvns_k1 < 1 or self.gvns_k2 < 1 or self.gvns_budget < 0:
            raise ValueError("gvns_k1/gvns_k2 must be >= 1 and the budget >= 0")
        if self.recovery_k < 0:
            raise ValueError("recovery_k must be >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.precision < 0:
            raise ValueError("precision must be >= 0")


@dataclass
class IterationRecord:
    index: int
    master_objective: float          # commitment cost + recourse estimate, best-energy read
    best_energy: float
    q_value: float                   # subproblem value of the chosen (max violation) sample
    violation: float                 # Q - eta of that sample
    penalty: float                   # smallest shed penalty evaluated this iteration, $
    eta_star: int                    # new cut's bound (0 when no cut was added)
    eta_bits: int                    # recourse register width this iteration
    slack_bits_m: int                # new cut's integer slack width
    slack_bits_n: int                # width the same cut would need unrounded
    n_cuts: int
    n_distinct: int
    gvns: bool
    stopped: str                     # "", "penalty" or "max_iters"
    wall_build: float = 0.0
    wall_master: float = 0.0
    wall_sp: float = 0.0

    # wall-clock fields are excluded so identical runs emit identical files
    CSV_FIELDS = ("index", "master_objective", "best_energy", "q_value", "violation",
                  "penalty", "eta_star", "eta_bits", "slack_bits_m", "slack_bits_n",
                  "n_cuts", "n_distinct", "gvns", "stopped")


def detect_stall(history, window: int, eps: float) -> bool:
    """True iff the last `window` consecutive objective deltas are all <= eps."""
    if len(history) < window + 1:
        return False
    tail = history[-(window + 1):]
    return all(abs(b - a) <= eps for a, b in zip(tail, tail[1:]))


def _sampler_seed(seed: int, iteration: int) -> int:
    return int(np.random.SeedSequence(entropy=int(seed),
                                      spawn_key=(1, iteration)).generate_state(1)[0])


def _gvns_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed),
                                                        spawn_key=(2, iteration)))


def _flip_u(inst: UcInstance, sched: CommitmentSchedule, rng, k: int) -> CommitmentSchedule:
    flat = sched.u.reshape(-1).copy()
    k = min(k, flat.shape[0])
    picks = rng.choice(flat.shape[0], size=k, replace=False)
    flat[picks] ^= 1
    return CommitmentSchedule.from_u(inst, flat)


def run_gvns(samples: list[CommitmentSchedule], inst: UcInstance, cfg: LoopConfig,
             rng=None, evaluate=None) -> list[CommitmentSchedule]:
    """Improvement stage then shake, per input schedule.

    Improvement: up to gvns_budget random k1-bit flips of the on/off bits
    (startup/shutdown repaired from the logic identity), accepting every flip
    that lowers the true schedule cost.  Shake: k2 unconditional flips.
    """
    if rng is None:
        rng = _gvns_rng(cfg.seed, 0)
    if evaluate is None:
        solver = SubproblemSolver(inst)
        evaluate = lambda s: evaluate_schedule_cost(inst, s, solver=solver)
    out = []
    for sched in samples:
        cur = CommitmentSchedule.from_u(inst, sched.u)
        cur_cost = evaluate(cur).total
        for _ in range(cfg.gvns_budget):
            cand = _flip_u(inst, cur, rng, cfg.gvns_k1)
            cost = evaluate(cand).total
            if cost < cur_cost - 1e-9:
                cur, cur_cost = cand, cost
        out.append(_flip_u(inst, cur, rng, cfg.gvns_k2))
    return out


@dataclass
class BendersResult:
    incumbent: CommitmentSchedule
    incumbent_cost: ScheduleCost
    records: list
    cuts: list
    history: list
    stop_reason: str


def run_benders(inst: UcInstance, cfg: LoopConfig) -> BendersResult:
    """Cut-generation loop around the annealed master; see module docstring."""
    sample_fn = get_sampler(cfg.sampler, **cfg.sampler_opts)
    solver = SubproblemSolver(inst)
    bound_solver = MaxEtaSolver(inst)
    cache: dict[bytes, ScheduleCost] = {}

    def q_of(sched: CommitmentSchedule) -> ScheduleCost:
        key = sched.key()
        if key not in cache:
            cache[key] = evaluate_schedule_cost(inst, sched, solver=solver,
                                                with_solution=True)
        return cache[key]

    incumbent: CommitmentSchedule | None = None
    incumbent_cost: ScheduleCost | None = None

    def offer_incumbent(sched: CommitmentSchedule, cost: ScheduleCost):
        # ranked by true cost alone: the incumbent seeds the recovery ball, and
        # a cheap schedule with broken startup bits is a far better center
        # than a logically clean one that sheds load
        nonlocal incumbent, incumbent_cost
        if not math.isfinite(cost.total):
            return
        if incumbent is None or cost.total < incumbent_cost.total - 1e-9:
            incumbent, incumbent_cost = sched, cost

    def make_cut(cost: ScheduleCost) -> BendersCut:
        cut = extract_raw_cut(cost.sp_solution, inst)
        round_cut(cut)
        value = bound_solver.solve(cut)
        cut.eta_star_value = value
        cut.eta_star = max(0, math.ceil(value - 1e-9))
        cut.slack_bits = eta_encoding_width(cut.eta_star, cfg.precision, rounded=True)
        return cut

    cuts: list[BendersCut] = []
    records: list[IterationRecord] = []
    history: list[float] = []
    eps = cfg.improve_eps
    stop_reason = ""

    for it in range(1, cfg.max_iters + 1):
        t0 = time.perf_counter()
        if cuts:
            worst = max(c.eta_star for c in cuts)
            eta_bits = eta_encoding_width(worst, cfg.precision, rounded=cfg.rounding)
        else:
            eta_bits = 0
        eta_enc = EtaEncoding(eta_bits, 1.0 if cfg.rounding else 10.0 ** -cfg.precision)
        pens = default_penalties(inst, eta_enc)
        master = build_master_qubo(inst, cuts, pens, eta_enc,
                                   use_rounded=cfg.rounding, precision=cfg.precision)
        t1 = time.perf_counter()
        params = AnnealParams(num_reads=cfg.samples, sweeps=cfg.sweeps,
                              seed=_sampler_seed(cfg.seed, it))
        ss = sample_fn(master.qubo, params)
        t2 = time.perf_counter()

        decoded = [decode_sample(bits, master) for bits, _, _ in ss.records]
        distinct: dict[bytes, CommitmentSchedule] = {}
        for dec in decoded:
            distinct.setdefault(dec.schedule.key(), dec.schedule)
        pen_min = math.inf
        for sched in distinct.values():
            cost = q_of(sched)
            offer_incumbent(sched, cost)
            pen_min = min(pen_min, cost.penalty)

        chosen = None
        best_violation = -math.inf
        for dec in decoded:
            cost = cache[dec.schedule.key()]
            if not math.isfinite(cost.dispatch):
                continue
            violation = cost.dispatch - dec.eta
            if violation > best_violation:
                best_violation = violation
                chosen = (dec, cost)
        if chosen is not None:
            cut = make_cut(chosen[1])
            cuts.append(cut)
            q_val = chosen[1].dispatch
            eta_star = cut.eta_star
            m_bits = cut.slack_bits
            n_bits = eta_encoding_width(eta_star, cfg.precision, rounded=False)
        else:
            q_val, eta_star, m_bits, n_bits = math.nan, 0, 0, 0
            best_violation = math.nan

        best_dec = decoded[0]  # records are energy-sorted; [0] is the best read
        master_obj = best_dec.base_objective
        history.append(master_obj)
        if eps is None:
            eps = max(1e-3 * abs(history[0]), 1.0)

        t3 = time.perf_counter()
        gvns_ran = False
        if detect_stall(history, cfg.stall_window, eps):
            gvns_ran = True
            rng = _gvns_rng(cfg.seed, it)
            shaken = run_gvns([d.schedule for d in decoded], inst, cfg,
                              rng=rng, evaluate=q_of)
            for sched in shaken:
                cost = q_of(sched)
                offer_incumbent(sched, cost)
                pen_min = min(pen_min, cost.penalty)
                if math.isfinite(cost.dispatch) and cost.sp_solution is not None:
                    cuts.append(make_cut(cost))
        t4 = time.perf_counter()

        if pen_min <= cfg.penalty_bound:
            stop_reason = "penalty"
        elif it == cfg.max_iters:
            stop_reason = "max_iters"
        records.append(IterationRecord(
            index=it, master_objective=master_obj,
            best_energy=float(ss.records[0][1]), q_value=q_val,
            violation=best_violation, penalty=pen_min, eta_star=eta_star,
            eta_bits=eta_bits, slack_bits_m=m_bits, slack_bits_n=n_bits,
            n_cuts=len(cuts), n_distinct=len(distinct), gvns=gvns_ran,
            stopped=stop_reason,
            wall_build=t1 - t0, wall_master=t2 - t1,
            wall_sp=(t3 - t2) + (t4 - t3)))
        if stop_reason:
            break

    if incumbent is None:
        # every probe had an infeasible dispatch LP; fall back to all-off
        incumbent = CommitmentSchedule.all_off(inst)
        incumbent_cost = q_of(incumbent)
    return BendersResult(incumbent, incumbent_cost, records, cuts, history, stop_reason)


# ---------------------------------------------------------------------------
# recovery
# ---------------------------------------------------------------------------


def k_local_recovery(inst: UcInstance, u_star: CommitmentSchedule, k: int):
    """Re-optimize the full MILP inside a Hamming ball of radius k around the
    given on/off bits.  Returns (schedule, dispatch, objective)."""
    fm = build_full_uc(inst)
    lp = fm.model.lp
    coeffs = {}
    ones = 0
    for gi in range(inst.n_gens):
        for t in range(inst.horizon):
            col = fm.var["u", gi, t]
            if u_star.u[gi, t]:
                coeffs[col] = -1.0
                ones += 1
            else:
                coeffs[col] = 1.0
    lp.add_row(coeffs, "<=", float(k - ones), tag="hamming")

    warm = None
    if u_star.logic_ok(inst) and u_star.min_updown_ok(inst):
        warm = {}
        for kind, arr in (("u", u_star.u), ("v", u_star.v), ("w", u_star.w)):
            for gi in range(inst.n_gens):
                for t in range(inst.horizon):
                    warm[fm.var[kind, gi, t]] = float(arr[gi, t])
    res = solve_milp(fm.model, warm=warm)
    if res.status == "infeasible":
        raise RecoveryInfeasibleError(
            f"no commitment within Hamming distance {k} satisfies the "
            f"minimum up/down rules; consider raising k")
    sched = fm.schedule_from_x(res.x)
    dispatch = fm.dispatch_from_x(res.x)
    return sched, dispatch, float(res.objective)


@dataclass
class HybridResult:
    benders: BendersResult
    schedule: CommitmentSchedule
    dispatch: DispatchSolution
    objective: float                 # full-model objective after recovery
    pre_recovery_objective: float
    oracle_objective: float | None
    gap: float | None                # (objective - oracle) / oracle
    pre_gap: float | None
    recovery_k_used: int
    wall_total: float


def solve_oracle(inst: UcInstance) -> float:
    """Exact optimum of the full MILP (the quality yardstick)."""
    fm = build_full_uc(inst)
    res = solve_milp(fm.model)
    if res.status != "optimal":
        raise RuntimeError(f"oracle solve ended {res.status}")
    return float(res.objective)


def run_hybrid(inst: UcInstance, cfg: LoopConfig, oracle=None) -> HybridResult:
    """Full pipeline: cut-generation loop, then Hamming-ball recovery.

    oracle: True to compute the exact optimum for gap reporting, a float to
    reuse a precomputed one, None to skip.
    """
    t0 = time.perf_counter()
    benders = run_benders(inst, cfg)
    pre_obj = benders.incumbent_cost.total
    k = cfg.recovery_k
    nbits = inst.n_gens * inst.horizon
    while True:
        try:
            sched, dispatch, obj = k_local_recovery(inst, benders.incumbent, k)
            break
        except RecoveryInfeasibleError:
            if k >= nbits:
                raise
            k = min(nbits, max(2 * k, 1))
    oracle_obj = None
    if oracle is True:
        oracle_obj = solve_oracle(inst)
    elif isinstance(oracle, (int, float)) and oracle is not False:
        oracle_obj = float(oracle)
    gap = pre_gap = None
    if oracle_obj:
        gap = (obj - oracle_obj) / abs(oracle_obj)
        if math.isfinite(pre_obj):
            pre_gap = (pre_obj - oracle_obj) / abs(oracle_obj)
    return HybridResult(benders, sched, dispatch, obj, pre_obj, oracle_obj,
                        gap, pre_gap, k, time.perf_counter() - t0)
