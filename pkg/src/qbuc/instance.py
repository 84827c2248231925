"""Unit-commitment instance model: validation, JSON files, synthetic cases.

Instances are immutable after construction and safe to share across worker
processes.  The JSON schema mirrors the dataclasses below; units are MW for
power, $ for costs, per-unit for susceptance.  See README for the schema.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

PENALTY_COST_DEFAULT = 5.0e5  # $/MW load-shed penalty


class ValidationError(Exception):
    """An instance violates a structural invariant."""


class InstanceFormatError(Exception):
    """An instance file cannot be parsed against the schema."""


@dataclass(frozen=True)
class Generator:
    name: str
    bus: str
    p_min: tuple[float, ...]          # MW floor per time step when online
    p_max: tuple[float, ...]          # MW ceiling per time step
    cost_no_load: float               # $ per online step
    cost_startup: float               # $
    cost_shutdown: float              # $
    cost_quad: float                  # $/MW^2 per step (data only; dispatch uses segments)
    cost_linear: float                # $/MW per step (data only)
    segments: tuple[tuple[float, float], ...]   # (level MW, cost $) breakpoints, first level = p_min
    min_up: int
    min_down: int
    ramp_startup: float               # MW/step
    ramp_shutdown: float
    ramp_up: float
    ramp_down: float
    initial_on: bool

    @property
    def n_segments(self) -> int:
        return len(self.segments)


@dataclass(frozen=True)
class Line:
    from_bus: str
    to_bus: str
    susceptance: float                # per-unit
    f_max: float                      # MW thermal limit


@dataclass(frozen=True)
class UcInstance:
    horizon: int
    buses: tuple[str, ...]
    reference_bus: str
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    demand: tuple[tuple[float, ...], ...]        # [bus][t], aligned with `buses`
    penalty_cost: tuple[float, ...]              # $/MW per step

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_gens(self) -> int:
        return len(self.generators)

    def bus_index(self, bus: str) -> int:
        return self.buses.index(bus)

    def demand_matrix(self) -> np.ndarray:
        return np.asarray(self.demand, dtype=float)

    def total_demand(self) -> np.ndarray:
        return self.demand_matrix().sum(axis=0)

    def max_dispatch_rate(self) -> float:
        """Steepest $/MW segment slope across all generators."""
        worst = 0.0
        for g in self.generators:
            for (lv0, c0), (lv1, c1) in zip(g.segments, g.segments[1:]):
                worst = max(worst, (c1 - c0) / (lv1 - lv0))
        return worst


def validate_instance(inst: UcInstance) -> None:
    """Check every structural invariant; raise ValidationError naming the first violation."""
    if inst.horizon < 1:
        raise ValidationError(f"horizon must be >= 1, got {inst.horizon}")
    T = inst.horizon
    if not inst.buses:
        raise ValidationError("instance has no buses")
    if len(set(inst.buses)) != len(inst.buses):
        raise ValidationError("duplicate bus names")
    if inst.reference_bus not in inst.buses:
        raise ValidationError(f"reference bus {inst.reference_bus!r} is not a bus")
    for k, ln in enumerate(inst.lines):
        if ln.from_bus == ln.to_bus:
            raise ValidationError(f"line[{k}] connects {ln.from_bus!r} to itself")
        for bus in (ln.from_bus, ln.to_bus):
            if bus not in inst.buses:
                raise ValidationError(f"line[{k}] references unknown bus {bus!r}")
        if not ln.susceptance > 0:
            raise ValidationError(f"line[{k}] susceptance must be > 0")
        if not ln.f_max > 0:
            raise ValidationError(f"line[{k}] f_max must be > 0")
    # connectivity
    adj = {b: set() for b in inst.buses}
    for ln in inst.lines:
        adj[ln.from_bus].add(ln.to_bus)
        adj[ln.to_bus].add(ln.from_bus)
    seen = {inst.buses[0]}
    stack = [inst.buses[0]]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != len(inst.buses):
        raise ValidationError("network graph is not connected")

    if not inst.generators:
        raise ValidationError("instance has no generators")
    names = [g.name for g in inst.generators]
    if len(set(names)) != len(names):
        raise ValidationError("duplicate generator names")
    for g in inst.generators:
        loc = f"generator {g.name!r}"
        if g.bus not in inst.buses:
            raise ValidationError(f"{loc}: unknown bus {g.bus!r}")
        if len(g.p_min) != T or len(g.p_max) != T:
            raise ValidationError(f"{loc}: p_min/p_max must have length {T}")
        for t in range(T):
            if g.p_min[t] > g.p_max[t]:
                raise ValidationError(f"{loc}: p_min > p_max at t={t + 1}")
            if g.p_min[t] < 0:
                raise ValidationError(f"{loc}: negative p_min at t={t + 1}")
        if g.n_segments < 1:
            raise ValidationError(f"{loc}: needs at least one cost segment")
        levels = [lv for lv, _ in g.segments]
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValidationError(f"{loc}: segment levels must be strictly increasing")
        for t in range(T):
            if abs(levels[0] - g.p_min[t]) > 1e-9 or abs(levels[-1] - g.p_max[t]) > 1e-9:
                raise ValidationError(
                    f"{loc}: segment levels must run from p_min to p_max (t={t + 1})")
        if g.min_up < 1 or g.min_down < 1:
            raise ValidationError(f"{loc}: min_up/min_down must be >= 1")
        for rname in ("ramp_startup", "ramp_shutdown", "ramp_up", "ramp_down"):
            if getattr(g, rname) < 0:
                raise ValidationError(f"{loc}: {rname} must be >= 0")
        pmin_peak = max(g.p_min)
        if g.ramp_startup < pmin_peak - 1e-9 or g.ramp_shutdown < pmin_peak - 1e-9:
            # a unit must be able to reach/leave minimum output in one step,
            # otherwise fixed-commitment dispatch can be infeasible
            raise ValidationError(
                f"{loc}: startup/shutdown ramps must be at least p_min ({pmin_peak})")

    if len(inst.demand) != len(inst.buses):
        raise ValidationError("demand must have one row per bus")
    for bi, row in enumerate(inst.demand):
        if len(row) != T:
            raise ValidationError(f"demand for bus {inst.buses[bi]!r} must have length {T}")
        if any(not math.isfinite(v) for v in row):
            raise ValidationError(f"demand for bus {inst.buses[bi]!r} has non-finite entries")
    if len(inst.penalty_cost) != T:
        raise ValidationError(f"penalty_cost must have length {T}")
    rate = inst.max_dispatch_rate()
    for t, pen in enumerate(inst.penalty_cost):
        if not pen > rate:
            raise ValidationError(
                f"penalty below max dispatch cost: penalty_cost[{t}]={pen} "
                f"<= steepest segment rate {rate}")


# ---------------------------------------------------------------------------
# JSON round trip
# ---------------------------------------------------------------------------


def _expand(value, T, where) -> tuple[float, ...]:
    if isinstance(value, (int, float)):
        return tuple(float(value) for _ in range(T))
    if isinstance(value, list):
        if len(value) != T:
            raise InstanceFormatError(f"{where}: expected scalar or list of length {T}")
        return tuple(float(v) for v in value)
    raise InstanceFormatError(f"{where}: expected number or list")


def instance_from_dict(data: dict) -> UcInstance:
    try:
        T = int(data["horizon"])
        buses = tuple(str(b) for b in data["buses"])
        ref = str(data["reference_bus"])
    except KeyError as exc:
        raise InstanceFormatError(f"missing top-level field {exc.args[0]!r}") from None
    lines = []
    for k, entry in enumerate(data.get("lines", [])):
        try:
            lines.append(Line(str(entry["from_bus"]), str(entry["to_bus"]),
                              float(entry["susceptance"]), float(entry["f_max"])))
        except KeyError as exc:
            raise InstanceFormatError(f"lines[{k}]: missing field {exc.args[0]!r}") from None
    gens = []
    for k, entry in enumerate(data.get("generators", [])):
        where = f"generators[{k}]"
        try:
            segments = tuple((float(lv), float(c)) for lv, c in entry["segments"])
            gens.append(Generator(
                name=str(entry["name"]),
                bus=str(entry["bus"]),
                p_min=_expand(entry["p_min"], T, f"{where}.p_min"),
                p_max=_expand(entry["p_max"], T, f"{where}.p_max"),
                cost_no_load=float(entry["cost_no_load"]),
                cost_startup=float(entry["cost_startup"]),
                cost_shutdown=float(entry["cost_shutdown"]),
                cost_quad=float(entry.get("cost_quad", 0.0)),
                cost_linear=float(entry.get("cost_linear", 0.0)),
                segments=segments,
                min_up=int(entry["min_up"]),
                min_down=int(entry["min_down"]),
                ramp_startup=float(entry["ramp_startup"]),
                ramp_shutdown=float(entry["ramp_shutdown"]),
                ramp_up=float(entry["ramp_up"]),
                ramp_down=float(entry["ramp_down"]),
                initial_on=bool(entry["initial_on"]),
            ))
        except KeyError as exc:
            raise InstanceFormatError(f"{where}: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise InstanceFormatError(f"{where}: {exc}") from None
    try:
        demand_map = data["demand"]
        demand = tuple(_expand(demand_map[b], T, f"demand[{b!r}]") for b in buses)
    except KeyError as exc:
        raise InstanceFormatError(f"demand: missing bus {exc.args[0]!r}") from None
    pen = _expand(data.get("penalty_cost", PENALTY_COST_DEFAULT), T, "penalty_cost")
    inst = UcInstance(horizon=T, buses=buses, reference_bus=ref, lines=tuple(lines),
                      generators=tuple(gens), demand=demand, penalty_cost=pen)
    validate_instance(inst)
    return inst


def instance_to_dict(inst: UcInstance) -> dict:
    return {
        "horizon": inst.horizon,
        "buses": list(inst.buses),
        "reference_bus": inst.reference_bus,
        "lines": [asdict(ln) for ln in inst.lines],
        "generators": [
            {**asdict(g), "p_min": list(g.p_min), "p_max": list(g.p_max),
             "segments": [list(s) for s in g.segments]}
            for g in inst.generators
        ],
        "demand": {b: list(row) for b, row in zip(inst.buses, inst.demand)},
        "penalty_cost": list(inst.penalty_cost),
    }


def load_instance(path) -> UcInstance:
    """Load and validate a JSON instance file."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InstanceFormatError(
                f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from None
    if not isinstance(data, dict):
        raise InstanceFormatError(f"{path}: top level must be an object")
    return instance_from_dict(data)


def save_instance(inst: UcInstance, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# synthetic instances
# ---------------------------------------------------------------------------


def synth_instance(n_gens: int, n_buses: int, horizon: int, seed: int) -> UcInstance:
    """Deterministic synthetic instance; same arguments + seed give identical data.

    Total demand is scaled to lie between 40% and 90% of aggregate capacity at
    every step, and the load-shed penalty is 5e5 $/MW.
    """
    if n_gens < 1 or n_buses < 1 or horizon < 1:
        raise ValueError("n_gens, n_buses and horizon must all be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(11,)))
    T = horizon
    buses = tuple(f"b{i + 1}" for i in range(n_buses))

    gens = []
    for gi in range(n_gens):
        p_max = round(float(rng.uniform(80.0, 250.0)), 1)
        p_min = round(p_max * float(rng.uniform(0.2, 0.4)), 1)
        span = p_max - p_min
        mid = round(p_min + span * float(rng.uniform(0.4, 0.6)), 1)
        rate1 = float(rng.uniform(15.0, 35.0))
        rate2 = rate1 + float(rng.uniform(3.0, 12.0))
        rate3 = rate2 + float(rng.uniform(3.0, 12.0))
        c_base = round(rate1 * p_min, 2)
        segments = ((p_min, c_base),
                    (mid, round(c_base + rate2 * (mid - p_min), 2)),
                    (p_max, round(c_base + rate2 * (mid - p_min) + rate3 * (p_max - mid), 2)))
        gens.append(Generator(
            name=f"g{gi + 1}",
            bus=buses[gi % n_buses],
            p_min=(p_min,) * T,
            p_max=(p_max,) * T,
            cost_no_load=round(float(rng.uniform(150.0, 500.0)), 2),
            cost_startup=round(float(rng.uniform(200.0, 900.0)), 2),
            cost_shutdown=round(float(rng.uniform(30.0, 150.0)), 2),
            cost_quad=round(float(rng.uniform(0.001, 0.01)), 5),
            cost_linear=round(float(rng.uniform(5.0, 20.0)), 2),
            segments=segments,
            min_up=int(rng.integers(1, min(3, T) + 1)),
            min_down=int(rng.integers(1, min(3, T) + 1)),
            ramp_startup=round(p_min + span * float(rng.uniform(0.25, 0.6)), 1),
            ramp_shutdown=round(p_min + span * float(rng.uniform(0.25, 0.6)), 1),
            ramp_up=round(max(span * float(rng.uniform(0.35, 0.7)), 1.0), 1),
            ramp_down=round(max(span * float(rng.uniform(0.35, 0.7)), 1.0), 1),
            initial_on=bool(rng.random() < 0.5),
        ))

    cap = sum(g.p_max[0] for g in gens)
    weights = rng.uniform(0.5, 1.5, size=n_buses)
    weights /= weights.sum()
    phase = float(rng.uniform(0, 2 * math.pi))
    demand_rows = [[0.0] * T for _ in range(n_buses)]
    for t in range(T):
        ratio = 0.45 + 0.35 * (0.5 + 0.5 * math.sin(2 * math.pi * t / max(T, 2) + phase))
        ratio += float(rng.uniform(-0.03, 0.03))
        ratio = min(max(ratio, 0.42), 0.88)
        total = ratio * cap
        for n in range(n_buses):
            demand_rows[n][t] = round(weights[n] * total, 3)
    demand = tuple(tuple(row) for row in demand_rows)
    peak = max(sum(demand[n][t] for n in range(n_buses)) for t in range(T))

    lines = []
    seen_pairs = set()
    for i in range(1, n_buses):
        j = int(rng.integers(0, i))
        lines.append(Line(buses[j], buses[i], round(float(rng.uniform(5.0, 15.0)), 3),
                          round(peak * float(rng.uniform(0.55, 0.95)), 1)))
        seen_pairs.add((j, i))
    for _ in range(n_buses // 3):
        i, j = sorted(rng.integers(0, n_buses, size=2).tolist())
        if i == j or (i, j) in seen_pairs:
            continue
        seen_pairs.add((i, j))
        lines.append(Line(buses[i], buses[j], round(float(rng.uniform(5.0, 15.0)), 3),
                          round(peak * float(rng.uniform(0.55, 0.95)), 1)))

    inst = UcInstance(horizon=T, buses=buses, reference_bus=buses[0], lines=tuple(lines),
                      generators=tuple(gens), demand=demand,
                      penalty_cost=(PENALTY_COST_DEFAULT,) * T)
    validate_instance(inst)
    return inst
