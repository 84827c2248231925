"""QUBO form of the commitment master problem, optimality cuts, conservative
rounding, and the dynamic sizing of the slack/estimate bit registers.

Rounding note: every cut coefficient and the constant are rounded DOWN
(toward minus infinity).  Because the binary variables are nonnegative, the
rounded left-hand side is bounded above by the fractional one at every 0/1
point, so the integer cut can never tighten the master relative to the
original cut.  Rounding negative entries toward zero instead would break that
guarantee (a -2.7 coefficient rounded to -2 raises the left-hand side when
its bit is set).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .formulation import CommitmentSchedule, commitment_cost, sp_structure
from .instance import UcInstance
from .milp import LpSolution


class CutExtractionError(Exception):
    """The subproblem solution lacks the tagged duals a cut needs."""


@dataclass
class BendersCut:
    """One optimality cut: raw (fractional) and rounded (integer) halves.

    The left-hand side is ``a_u . u + a_v . v + a_w . w + b`` and the cut
    demands it stays below the master's recourse estimate.
    """

    a_u: np.ndarray                    # (G, T)
    a_v: np.ndarray
    a_w: np.ndarray
    b: float
    duals: dict = field(default_factory=dict, repr=False)   # row tag -> multiplier
    r_u: np.ndarray | None = None      # rounded integer coefficients
    r_v: np.ndarray | None = None
    r_w: np.ndarray | None = None
    r_b: int | None = None
    eta_star: int | None = None        # integer bound on the raw LHS (>= 0)
    eta_star_value: float | None = None
    slack_bits: int | None = None      # M = ceil(log2(eta_star + 1))

    def raw_lhs(self, sched: CommitmentSchedule) -> float:
        return float((self.a_u * sched.u).sum() + (self.a_v * sched.v).sum()
                     + (self.a_w * sched.w).sum() + self.b)

    def rounded_lhs(self, sched: CommitmentSchedule) -> int:
        if self.r_u is None:
            raise ValueError("cut has no rounded coefficients yet")
        return int((self.r_u * sched.u).sum() + (self.r_v * sched.v).sum()
                   + (self.r_w * sched.w).sum() + self.r_b)


def extract_raw_cut(sp_solution: LpSolution, inst: UcInstance) -> BendersCut:
    """Assemble the raw cut from tagged subproblem duals.

    The coefficients are exactly ``duals @ (RHS as a function of u, v, w)``,
    so the dispatch-definition rows (rhs 0) contribute nothing, balance duals
    land on the constant and on u with weight -p_min, and the startup/shutdown
    ramp duals produce the v and (time-shifted) w terms.
    """
    s = sp_structure(inst)
    if sp_solution.status != "optimal" or sp_solution.duals is None:
        raise CutExtractionError("subproblem solution is not optimal with duals")
    lam = np.asarray(sp_solution.duals, dtype=float)
    if lam.shape[0] != s.lp.n_rows or list(sp_solution.row_tags) != list(s.lp.row_tags):
        raise CutExtractionError("dual vector does not match the tagged subproblem rows")
    G, T = inst.n_gens, inst.horizon
    a_u = (lam @ s.b_u).reshape(G, T)
    a_v = (lam @ s.b_v).reshape(G, T)
    a_w = (lam @ s.b_w).reshape(G, T)
    b = float(lam @ s.b_const)
    duals = {tag: float(lam[i]) for i, tag in enumerate(s.lp.row_tags)}
    return BendersCut(a_u=a_u, a_v=a_v, a_w=a_w, b=b, duals=duals)


def round_cut(cut: BendersCut) -> BendersCut:
    """Fill the conservative integer half: floor every coefficient and b."""
    cut.r_u = np.floor(cut.a_u).astype(np.int64)
    cut.r_v = np.floor(cut.a_v).astype(np.int64)
    cut.r_w = np.floor(cut.a_w).astype(np.int64)
    cut.r_b = int(math.floor(cut.b))
    return cut


def eta_encoding_width(eta_star, precision: int, rounded: bool) -> int:
    """Bits needed for the cut slack: ceil(log2(eta* + 1)) once the cut is
    integer, ceil(log2(eta* 10^p + 1)) when p decimal places must survive."""
    if eta_star < 0:
        raise ValueError("eta_star must be nonnegative")
    if eta_star == 0:
        return 0
    if float(eta_star).is_integer():
        k = int(eta_star) if rounded else int(eta_star) * 10 ** precision
        return k.bit_length()
    k = float(eta_star) if rounded else float(eta_star) * 10 ** precision
    return max(0, math.ceil(math.log2(k + 1) - 1e-12))


@dataclass(frozen=True)
class EtaEncoding:
    """Unsigned binary register for the recourse estimate.

    Value = scale * sum(2^i b_i); scale is 1 $ in rounded mode and 10^-p $
    when fractional cuts are kept.
    """

    bits: int
    scale: float = 1.0

    def weights(self) -> np.ndarray:
        return self.scale * (2.0 ** np.arange(self.bits))

    @property
    def max_value(self) -> float:
        return self.scale * (2 ** self.bits - 1)

    def decode(self, bits) -> float:
        bits = np.asarray(bits)
        return float(self.weights() @ bits) if self.bits else 0.0

    def encode(self, value: float) -> np.ndarray:
        k = int(round(value / self.scale)) if self.bits else 0
        if not 0 <= k <= 2 ** self.bits - 1:
            raise ValueError(f"{value} not representable in {self.bits} bits at scale {self.scale}")
        return np.array([(k >> i) & 1 for i in range(self.bits)], dtype=np.int8)


@dataclass
class Penalties:
    p1: float
    p2: float
    p3: float
    p4: float


def cut_norm(cut) -> float:
    """Unit in which a cut's violation is measured inside its penalty block.

    eta*^0.75 keeps the squared expansion within float64 resolution for
    shed-scale cuts while leaving sub-dollar slack on ordinary ones."""
    if cut.eta_star is not None:
        scale = float(cut.eta_star)
    else:
        scale = max(abs(float(cut.b)), float(np.abs(cut.a_u).max(initial=0.0)),
                    float(np.abs(cut.a_v).max(initial=0.0)),
                    float(np.abs(cut.a_w).max(initial=0.0)))
    return max(1.0, scale) ** 0.75


def default_penalties(inst: UcInstance, eta_enc: EtaEncoding) -> Penalties:
    """Deterministic sizing: twice an upper bound on the master objective,
    so one unit of squared violation always dominates any feasible energy."""
    bound = sum(g.cost_no_load + g.cost_startup + g.cost_shutdown
                for g in inst.generators) * inst.horizon
    bound += eta_enc.scale * (2 ** eta_enc.bits)
    p = 2.0 * bound
    return Penalties(p, p, p, p)


@dataclass
class Qubo:
    """Registry of binary variables with linear/quadratic coefficients."""

    names: dict
    linear: np.ndarray
    quad: dict
    offset: float = 0.0

    @property
    def n(self) -> int:
        return self.linear.shape[0]

    def dense(self):
        """(h, S, offset) with S symmetric, zero diagonal."""
        s = np.zeros((self.n, self.n))
        for (i, j), val in self.quad.items():
            s[i, j] += val
            s[j, i] += val
        return self.linear.copy(), s, self.offset

    def energy(self, bits) -> float:
        return float(self.energies(np.asarray(bits, dtype=float)[None, :])[0])

    def energies(self, batch: np.ndarray) -> np.ndarray:
        x = np.asarray(batch, dtype=float)
        h, s, off = self._dense_cache()
        return off + x @ h + 0.5 * np.einsum("ri,ri->r", x @ s, x)

    def _dense_cache(self):
        if not hasattr(self, "_dense"):
            self._dense = self.dense()
        return self._dense


class _QuboBuilder:
    def __init__(self):
        self.names = {}
        self.linear = []
        self.quad = {}
        self.offset = 0.0

    def new_var(self, name) -> int:
        if name in self.names:
            raise ValueError(f"duplicate QUBO variable {name!r}")
        idx = len(self.linear)
        self.names[name] = idx
        self.linear.append(0.0)
        return idx

    def add_linear(self, idx, coef):
        self.linear[idx] += coef

    def add_quad(self, i, j, coef):
        if i == j:
            self.linear[i] += coef
            return
        key = (i, j) if i < j else (j, i)
        self.quad[key] = self.quad.get(key, 0.0) + coef

    def add_squared(self, terms, const, weight):
        """weight * (const + sum coef_k x_k)^2 expanded over binaries."""
        self.offset += weight * const * const
        for k, (idx, coef) in enumerate(terms):
            self.linear[idx] += weight * (2.0 * const * coef + coef * coef)
            for idx2, coef2 in terms[k + 1:]:
                self.add_quad(idx, idx2, 2.0 * weight * coef * coef2)

    def build(self) -> Qubo:
        return Qubo(self.names, np.asarray(self.linear, dtype=float), self.quad, self.offset)


@dataclass
class MasterQubo:
    """QUBO master plus the layout needed to decode samples."""

    qubo: Qubo
    inst: UcInstance
    eta_enc: EtaEncoding
    cuts: list
    penalties: Penalties
    use_rounded: bool
    precision: int
    u_cols: np.ndarray              # (G, T) column indices
    v_cols: np.ndarray
    w_cols: np.ndarray
    s1_cols: dict                   # (g, t) -> column of the min-up slack bit
    s2_cols: dict
    eta_cols: list
    slack_cols: list                # per cut: (columns, scale)


def build_master_qubo(inst: UcInstance, cuts: list, penalties: Penalties,
                      eta_enc: EtaEncoding, use_rounded: bool = True,
                      precision: int = 2) -> MasterQubo:
    """Commitment master as an unconstrained quadratic over bits.

    Objective = commitment costs + recourse estimate; squared penalty blocks
    enforce the on/off logic, the minimum up/down windows (one binary slack
    per window), and one equality block per cut with its own slack register.
    """
    G, T = inst.n_gens, inst.horizon
    qb = _QuboBuilder()
    u = np.array([[qb.new_var(("u", gi, t)) for t in range(T)] for gi in range(G)])
    v = np.array([[qb.new_var(("v", gi, t)) for t in range(T)] for gi in range(G)])
    w = np.array([[qb.new_var(("w", gi, t)) for t in range(T)] for gi in range(G)])
    s1 = {}
    s2 = {}
    for gi, g in enumerate(inst.generators):
        for t in range(g.min_up - 1, T):
            s1[gi, t] = qb.new_var(("s1", gi, t))
        for t in range(g.min_down - 1, T):
            s2[gi, t] = qb.new_var(("s2", gi, t))
    eta_cols = [qb.new_var(("eta", i)) for i in range(eta_enc.bits)]
    slack_cols = []
    for ci, cut in enumerate(cuts):
        if cut.a_u.shape != (G, T):
            raise ValueError(f"cut {ci} has shape {cut.a_u.shape}, instance needs {(G, T)}")
        if use_rounded:
            if cut.slack_bits is None:
                raise ValueError(f"cut {ci} is missing its rounded half / slack width")
            nbits, scale = cut.slack_bits, 1.0
        else:
            nbits = eta_encoding_width(cut.eta_star, precision, rounded=False)
            scale = 10.0 ** -precision
        slack_cols.append(([qb.new_var(("s3", ci, i)) for i in range(nbits)], scale))

    for gi, g in enumerate(inst.generators):
        for t in range(T):
            qb.add_linear(u[gi, t], g.cost_no_load)
            qb.add_linear(v[gi, t], g.cost_startup)
            qb.add_linear(w[gi, t], g.cost_shutdown)
    for i, wgt in enumerate(eta_enc.weights()):
        qb.add_linear(eta_cols[i], wgt)

    # on/off logic: (u_t - u_{t-1} - v_t + w_t)^2, u_0 from the initial state
    for gi, g in enumerate(inst.generators):
        for t in range(T):
            terms = [(u[gi, t], 1.0), (v[gi, t], -1.0), (w[gi, t], 1.0)]
            const = 0.0
            if t == 0:
                const = -float(g.initial_on)
            else:
                terms.append((u[gi, t - 1], -1.0))
            qb.add_squared(terms, const, penalties.p1)
    # minimum up: (sum_tau v + s1 - u_t)^2
    for gi, g in enumerate(inst.generators):
        for t in range(g.min_up - 1, T):
            terms = [(v[gi, tau], 1.0) for tau in range(t - g.min_up + 1, t + 1)]
            terms += [(s1[gi, t], 1.0), (u[gi, t], -1.0)]
            qb.add_squared(terms, 0.0, penalties.p2)
    # minimum down: (sum_tau w + s2 - 1 + u_t)^2
    for gi, g in enumerate(inst.generators):
        for t in range(g.min_down - 1, T):
            terms = [(w[gi, tau], 1.0) for tau in range(t - g.min_down + 1, t + 1)]
            terms += [(s2[gi, t], 1.0), (u[gi, t], 1.0)]
            qb.add_squared(terms, -1.0, penalties.p3)
    # one block per cut: (LHS - eta + s3)^2, measured in units of the cut's
    # own bound so the expanded coefficients stay within float64 resolution
    # (raw dollar units would square shed-scale cuts to ~1e25 and bury the
    # commitment costs in rounding noise)
    for ci, cut in enumerate(cuts):
        if use_rounded:
            cu, cv, cw, cb = cut.r_u, cut.r_v, cut.r_w, float(cut.r_b)
        else:
            cu, cv, cw, cb = cut.a_u, cut.a_v, cut.a_w, float(cut.b)
        norm = cut_norm(cut)
        terms = []
        for gi in range(G):
            for t in range(T):
                for arr, cols in ((cu, u), (cv, v), (cw, w)):
                    if arr[gi, t] != 0:
                        terms.append((cols[gi, t], float(arr[gi, t]) / norm))
        terms += [(col, -wgt / norm) for col, wgt in zip(eta_cols, eta_enc.weights())]
        cols, scale = slack_cols[ci]
        terms += [(col, scale * 2.0 ** i / norm) for i, col in enumerate(cols)]
        qb.add_squared(terms, cb / norm, penalties.p4)

    return MasterQubo(qb.build(), inst, eta_enc, list(cuts), penalties,
                      use_rounded, precision, u, v, w, s1, s2, eta_cols, slack_cols)


@dataclass
class DecodedSample:
    schedule: CommitmentSchedule
    eta: float
    slacks: list
    residuals: dict                  # squared-violation totals per penalty group
    base_objective: float            # commitment cost + eta
    energy: float


def decode_sample(bits, master: MasterQubo) -> DecodedSample:
    """Split a bit vector into schedule, recourse estimate, slacks and the
    per-group squared residuals (energy == base + sum P_j * residual_j)."""
    bits = np.asarray(bits, dtype=np.int8)
    if bits.shape[0] != master.qubo.n:
        raise ValueError(f"expected {master.qubo.n} bits, got {bits.shape[0]}")
    inst = master.inst
    G, T = inst.n_gens, inst.horizon
    u = bits[master.u_cols.reshape(-1)].reshape(G, T)
    v = bits[master.v_cols.reshape(-1)].reshape(G, T)
    w = bits[master.w_cols.reshape(-1)].reshape(G, T)
    sched = CommitmentSchedule(u, v, w)
    eta = master.eta_enc.decode(bits[master.eta_cols]) if master.eta_cols else 0.0
    r1 = 0.0
    for gi, g in enumerate(inst.generators):
        prev = float(g.initial_on)
        for t in range(T):
            r1 += (u[gi, t] - prev - v[gi, t] + w[gi, t]) ** 2
            prev = u[gi, t]
    r2 = 0.0
    for (gi, t), col in master.s1_cols.items():
        win = master.inst.generators[gi].min_up
        r2 += (v[gi, t - win + 1: t + 1].sum() + bits[col] - u[gi, t]) ** 2
    r3 = 0.0
    for (gi, t), col in master.s2_cols.items():
        win = master.inst.generators[gi].min_down
        r3 += (w[gi, t - win + 1: t + 1].sum() + bits[col] - 1 + u[gi, t]) ** 2
    r4 = 0.0
    slacks = []
    for cut, (cols, scale) in zip(master.cuts, master.slack_cols):
        s3 = scale * float((2.0 ** np.arange(len(cols))) @ bits[cols]) if cols else 0.0
        slacks.append(s3)
        lhs = cut.rounded_lhs(sched) if master.use_rounded else cut.raw_lhs(sched)
        r4 += ((lhs - eta + s3) / cut_norm(cut)) ** 2
    base = commitment_cost(inst, sched) + eta
    energy = master.qubo.energy(bits)
    return DecodedSample(sched, eta, slacks,
                         {"logic": r1, "min_up": r2, "min_down": r3, "cuts": r4},
                         base, energy)


# ---------------------------------------------------------------------------
# plain-text interchange for external samplers
# ---------------------------------------------------------------------------


def write_qubo_text(qubo: Qubo, path) -> None:
    """Sparse text form: one `i j coefficient` triple per line (i == j holds
    the linear term); the constant offset rides in a header comment."""
    with open(path, "w") as fh:
        fh.write(f"# qubo n={qubo.n} offset={qubo.offset!r}\n")
        for i, val in enumerate(qubo.linear):
            if val != 0.0:
                fh.write(f"{i} {i} {val!r}\n")
        for (i, j), val in sorted(qubo.quad.items()):
            if val != 0.0:
                fh.write(f"{i} {j} {val!r}\n")


def read_qubo_text(path) -> Qubo:
    n = 0
    offset = 0.0
    linear = {}
    quad = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                for part in line[1:].split():
                    if part.startswith("n="):
                        n = int(part[2:])
                    elif part.startswith("offset="):
                        offset = float(part[7:])
                continue
            if not line:
                continue
            i, j, val = line.split()
            i, j, val = int(i), int(j), float(val)
            if i == j:
                linear[i] = linear.get(i, 0.0) + val
            else:
                key = (min(i, j), max(i, j))
                quad[key] = quad.get(key, 0.0) + val
    lin = np.zeros(max(n, max(linear, default=-1) + 1,
                       max((k[1] + 1 for k in quad), default=0)))
    for i, valf in linear.items():
        lin[i] = valf
    return Qubo({i: i for i in range(lin.shape[0])}, lin, quad, offset)


def parse_sample_lines(text: str) -> np.ndarray:
    """Sample-list response format: one whitespace-separated 0/1 row per line."""
    rows = [line.split() for line in text.strip().splitlines() if line.strip()]
    return np.asarray(rows, dtype=np.int8)
