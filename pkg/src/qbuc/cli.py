"""Command line front end: single runs and seed sweeps with report files.

Outputs: `report.json` (config echo, per-iteration records with timings,
final/oracle objectives, cost split), `iterations.csv` (deterministic columns
only, so identical configurations produce byte-identical files), and for
sweeps `sweep.csv` (one row per seed plus `#` summary lines) together with a
per-seed `iterations_s<seed>.csv`.

Exit codes: 0 success, 2 validation/configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .instance import (InstanceFormatError, UcInstance, ValidationError,
                       instance_from_dict, instance_to_dict, load_instance,
                       synth_instance)
from .loop import HybridResult, IterationRecord, LoopConfig, run_hybrid, solve_oracle
from .milp import NumericalInstabilityError
from .sampler import SamplerError

SCHEMA_VERSION = 1


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_iterations_csv(records, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(IterationRecord.CSV_FIELDS) + "\n")
        for rec in records:
            fh.write(",".join(_fmt(getattr(rec, f)) for f in IterationRecord.CSV_FIELDS))
            fh.write("\n")


def _penalty_split(inst: UcInstance, result: HybridResult) -> tuple[float, float]:
    d = result.dispatch
    pen = sum(inst.penalty_cost[t] * (d.delta_plus[t] - d.delta_minus[t])
              for t in range(inst.horizon))
    return float(result.objective - pen), float(pen)


def build_report(inst: UcInstance, cfg: LoopConfig, result: HybridResult) -> dict:
    gen_cost, pen_cost = _penalty_split(inst, result)
    rep = {
        "schema_version": SCHEMA_VERSION,
        "config": {**{k: v for k, v in vars(cfg).items()},
                   "instance": {"buses": inst.n_buses, "generators": inst.n_gens,
                                "horizon": inst.horizon}},
        "iterations": [
            {f: getattr(rec, f) for f in IterationRecord.CSV_FIELDS}
            | {"wall_build": rec.wall_build, "wall_master": rec.wall_master,
               "wall_sp": rec.wall_sp}
            for rec in result.benders.records
        ],
        "final_objective": result.objective,
        "pre_recovery_objective": result.pre_recovery_objective,
        "generation_cost": gen_cost,
        "penalty_cost": pen_cost,
        "stop_reason": result.benders.stop_reason,
        "recovery_k_used": result.recovery_k_used,
        "wall_total": result.wall_total,
    }
    if result.oracle_objective is not None:
        rep["oracle_objective"] = result.oracle_objective
        rep["gap"] = result.gap
        rep["gap_pct"] = 100.0 * result.gap
        rep["pre_recovery_gap"] = result.pre_gap
    return rep


def _make_config(args, seed: int) -> LoopConfig:
    opts = {}
    if args.sampler == "noisy":
        opts["noise_rate"] = args.noise_rate
    return LoopConfig(
        stall_window=args.stall_window,
        improve_eps=args.improve_eps,
        samples=args.samples,
        sweeps=args.sweeps,
        gvns_k1=args.gvns_k1,
        gvns_k2=args.gvns_k2,
        gvns_budget=args.gvns_budget,
        recovery_k=args.recovery_k,
        penalty_bound=args.penalty_bound,
        max_iters=args.max_iters,
        precision=args.precision,
        rounding=not args.no_rounding,
        sampler=args.sampler,
        sampler_opts=opts,
        seed=seed,
    )


def _load_instance_from_args(args) -> UcInstance:
    if args.instance:
        return load_instance(args.instance)
    if args.synth:
        parts = [int(p) for p in args.synth.split(",")]
        if len(parts) != 3:
            raise ValidationError("--synth expects G,N,T")
        return synth_instance(parts[0], parts[1], parts[2], args.synth_seed)
    raise ValidationError("provide --instance <path> or --synth G,N,T")


def cmd_solve(args) -> int:
    inst = _load_instance_from_args(args)
    cfg = _make_config(args, args.seed)
    oracle = True if args.oracle == "on" else None
    result = run_hybrid(inst, cfg, oracle=oracle)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_iterations_csv(result.benders.records, out / "iterations.csv")
    with open(out / "report.json", "w") as fh:
        json.dump(build_report(inst, cfg, result), fh, indent=1, default=str)
        fh.write("\n")
    gap = f", gap {100 * result.gap:.4f}%" if result.gap is not None else ""
    print(f"final objective {result.objective:.2f}{gap} "
          f"({len(result.benders.records)} iterations, "
          f"stop: {result.benders.stop_reason})")
    return 0


SWEEP_FIELDS = ("seed", "final_objective", "oracle_objective", "gap", "pre_recovery_gap",
                "generation_cost", "penalty_cost", "iterations", "stop_reason",
                "recovery_k_used", "wall_time")


def _sweep_worker(payload):
    inst_dict, cfg_kwargs, seed, oracle_obj, out_dir = payload
    inst = instance_from_dict(inst_dict)
    cfg = LoopConfig(**cfg_kwargs, seed=seed)
    t0 = time.perf_counter()
    result = run_hybrid(inst, cfg, oracle=oracle_obj)
    wall = time.perf_counter() - t0
    gen_cost, pen_cost = _penalty_split(inst, result)
    if out_dir is not None:
        write_iterations_csv(result.benders.records,
                             Path(out_dir) / f"iterations_s{seed}.csv")
    return {
        "seed": seed,
        "final_objective": result.objective,
        "oracle_objective": result.oracle_objective,
        "gap": result.gap,
        "pre_recovery_gap": result.pre_gap,
        "generation_cost": gen_cost,
        "penalty_cost": pen_cost,
        "iterations": len(result.benders.records),
        "stop_reason": result.benders.stop_reason,
        "recovery_k_used": result.recovery_k_used,
        "wall_time": wall,
    }


def run_sweep(inst: UcInstance, cfg_kwargs: dict, seeds: list[int], oracle: bool,
              out_dir, workers: int | None = None) -> list[dict]:
    """Run one seed per worker, rows returned in seed order."""
    oracle_obj = solve_oracle(inst) if oracle else None
    payloads = [(instance_to_dict(inst), cfg_kwargs, s, oracle_obj, str(out_dir))
                for s in seeds]
    if workers is None:
        workers = min(len(seeds), os.cpu_count() or 1)
    if workers <= 1 or len(seeds) == 1:
        return [_sweep_worker(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_worker, payloads))


def cmd_sweep(args) -> int:
    inst = _load_instance_from_args(args)
    if ".." in args.seeds:
        a, b = args.seeds.split("..")
        seeds = list(range(int(a), int(b) + 1))
    else:
        seeds = [int(s) for s in args.seeds.split(",")]
    if not seeds:
        raise ValidationError("--seeds selected no seeds")
    cfg_kwargs = {k: v for k, v in vars(_make_config(args, 0)).items() if k != "seed"}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_sweep(inst, cfg_kwargs, seeds, args.oracle == "on", out, args.workers)
    with open(out / "sweep.csv", "w") as fh:
        fh.write(",".join(SWEEP_FIELDS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[f]) if row[f] is not None else ""
                              for f in SWEEP_FIELDS) + "\n")
        n = len(rows)
        gaps = [r["gap"] for r in rows if r["gap"] is not None]
        if gaps:
            w1 = sum(g <= 0.01 for g in gaps)
            w5 = sum(g <= 0.05 for g in gaps)
            w001 = sum(g <= 0.0001 for g in gaps)
            fh.write(f"# within_0.01pct={w001}/{n} within_1pct={w1}/{n} "
                     f"within_5pct={w5}/{n}\n")
        zero_pen = sum(r["penalty_cost"] <= 1e-6 for r in rows)
        fh.write(f"# zero_penalty={zero_pen}/{n}\n")
    print(f"swept {len(seeds)} seeds -> {out / 'sweep.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qbuc",
                                 description="hybrid annealed-master unit commitment")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--instance", help="path to a JSON instance file")
        p.add_argument("--synth", help="synthetic instance spec G,N,T")
        p.add_argument("--synth-seed", type=int, default=1,
                       help="seed for the synthetic instance data")
        p.add_argument("--sampler", default="sa",
                       help="registered sampler name (sa, noisy, exhaustive, ...)")
        p.add_argument("--noise-rate", type=float, default=0.05,
                       help="bit-flip rate for --sampler noisy")
        p.add_argument("--precision", type=int, default=2,
                       help="decimal places kept when rounding is disabled")
        p.add_argument("--no-rounding", action="store_true",
                       help="keep fractional cuts (wider slack registers)")
        p.add_argument("--stall-window", type=int, default=3)
        p.add_argument("--improve-eps", type=float, default=None)
        p.add_argument("--samples", type=int, default=20)
        p.add_argument("--sweeps", type=int, default=1000,
                       help="annealer sweeps per read")
        p.add_argument("--gvns-k1", type=int, default=1)
        p.add_argument("--gvns-k2", type=int, default=3)
        p.add_argument("--gvns-budget", type=int, default=25)
        p.add_argument("--recovery-k", type=int, default=3)
        p.add_argument("--penalty-bound", type=float, default=1.0)
        p.add_argument("--max-iters", type=int, default=25)
        p.add_argument("--oracle", choices=("on", "off"), default="on")
        p.add_argument("--out", default="out", help="output directory")

    ps = sub.add_parser("solve", help="single seeded run")
    common(ps)
    ps.add_argument("--seed", type=int, default=0)
    ps.set_defaults(fn=cmd_solve)

    pw = sub.add_parser("sweep", help="many seeds, summary CSV")
    common(pw)
    pw.add_argument("--seeds", required=True, help="range a..b or list a,b,c")
    pw.add_argument("--workers", type=int, default=None,
                    help="parallel workers (default: CPU count)")
    pw.set_defaults(fn=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, InstanceFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalInstabilityError, SamplerError, RuntimeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
