"""Seeded simulated-annealing QUBO sampler plus a named-sampler registry.

The annealer is the stand-in for annealing hardware: single-bit-flip
Metropolis sweeps under a geometric inverse-temperature ladder, independent
reads merged in seed order, fully reproducible for a fixed seed.  Alternative
samplers (a noisy wrapper emulating hardware bit-flip errors, an exhaustive
enumerator for micro problems, external adapters) register under a name and
are selected through configuration.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .qubo import Qubo

try:
    from numba import njit
    _HAVE_NUMBA = True
except ImportError:          # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*a, **k):
        def wrap(fn):
            return fn
        return wrap


class SamplerError(Exception):
    """A sampler violated its contract (count, length or energy mismatch)."""


@dataclass(frozen=True)
class AnnealParams:
    num_reads: int = 20
    sweeps: int = 1000
    beta0: float | None = None        # None: pick from the coefficient scale
    beta1: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_reads < 1:
            raise ValueError("num_reads must be >= 1")
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if self.beta0 is not None and self.beta1 is not None and not self.beta0 < self.beta1:
            raise ValueError("need beta0 < beta1")


@dataclass
class SampleSet:
    """Distinct bit vectors with recomputed energies and multiplicities,
    sorted by ascending energy (ties broken by the bit pattern)."""

    records: list                     # (bits int8 array, energy, multiplicity)
    info: dict = field(default_factory=dict)

    @property
    def num_samples(self) -> int:
        return sum(mult for _, _, mult in self.records)

    def best(self):
        bits, energy, _ = self.records[0]
        return bits, energy


def aggregate_samples(qubo: Qubo, bits: np.ndarray, info: dict) -> SampleSet:
    """Group duplicate reads, recompute energies from the QUBO, sort.

    Energies go through qubo.energy (the single-row path) so they match any
    later recomputation bit for bit.
    """
    groups = {}
    for row in bits:
        key = row.tobytes()
        if key in groups:
            groups[key][2] += 1
        else:
            groups[key] = [row.astype(np.int8), qubo.energy(row), 1]
    records = sorted(groups.values(), key=lambda g: (g[1], g[0].tobytes()))
    return SampleSet([tuple(g) for g in records], info)


@njit(cache=True)
def _anneal_kernel(h, s, betas, seeds, nreads):  # pragma: no cover - jitted
    n = h.shape[0]
    out = np.empty((nreads, n), np.int8)
    for r in range(nreads):
        np.random.seed(seeds[r])
        x = np.empty(n, np.int8)
        for j in range(n):
            x[j] = 1 if np.random.random() < 0.5 else 0
        f = h.copy()
        for j in range(n):
            if x[j] == 1:
                for i in range(n):
                    f[i] += s[i, j]
        for sw in range(betas.shape[0]):
            beta = betas[sw]
            for j in range(n):
                de = f[j] if x[j] == 0 else -f[j]
                if de <= 0.0 or np.random.random() < math.exp(-beta * de):
                    if x[j] == 0:
                        x[j] = 1
                        for i in range(n):
                            f[i] += s[i, j]
                    else:
                        x[j] = 0
                        for i in range(n):
                            f[i] -= s[i, j]
        out[r, :] = x
    return out


def _beta_range(h: np.ndarray, s: np.ndarray) -> tuple[float, float]:
    """Hot end: ~0.8 acceptance for a typical (median-bound) uphill move.
    Cold end: ~0.01 acceptance at the finest energy granularity.  Large
    penalty-expanded coefficients cancel to small cost differences, so the
    granularity is capped at 1 (one dollar here) rather than taken from the
    coefficient magnitudes alone."""
    bound = np.abs(h) + np.abs(s).sum(axis=1)
    de_max = float(bound.max(initial=0.0))
    if de_max <= 0.0:
        return 0.1, 10.0
    pos = bound[bound > 1e-12 * de_max]
    de_hot = float(np.median(pos)) if pos.size else de_max
    nz = np.concatenate([np.abs(h[h != 0.0]), np.abs(s[s != 0.0])])
    de_cold = min(1.0, float(nz.min())) if nz.size else 1.0
    beta0 = math.log(1 / 0.8) / de_hot
    beta1 = math.log(1 / 0.01) / de_cold
    if beta1 <= beta0:
        beta1 = beta0 * 1e4
    return beta0, beta1


def simulated_annealing_sample(qubo: Qubo, params: AnnealParams) -> SampleSet:
    """Independent Metropolis anneals; deterministic for a fixed seed."""
    if qubo.n == 0:
        raise ValueError("cannot sample an empty QUBO")
    t0 = time.perf_counter()
    h, s, _ = qubo.dense()
    beta0, beta1 = params.beta0, params.beta1
    if beta0 is None or beta1 is None:
        auto0, auto1 = _beta_range(h, s)
        beta0 = auto0 if beta0 is None else beta0
        beta1 = auto1 if beta1 is None else beta1
    if params.sweeps == 1:
        betas = np.array([beta1])
    else:
        betas = beta0 * (beta1 / beta0) ** (np.arange(params.sweeps) / (params.sweeps - 1))
    ss = np.random.SeedSequence(entropy=int(params.seed), spawn_key=(7,))
    seeds = ss.generate_state(params.num_reads, dtype=np.uint32).astype(np.int64)
    bits = _anneal_kernel(h, s, betas, seeds, params.num_reads)
    info = {"sampler": "sa", "num_reads": params.num_reads, "sweeps": params.sweeps,
            "beta0": float(beta0), "beta1": float(beta1), "seed": params.seed,
            "wall_time": time.perf_counter() - t0}
    return aggregate_samples(qubo, bits, info)


def exhaustive_sample(qubo: Qubo, params: AnnealParams) -> SampleSet:
    """Exact enumeration (micro problems only): the num_reads lowest-energy
    assignments, ties broken lexicographically."""
    n = qubo.n
    if n > 22:
        raise SamplerError(f"exhaustive sampler limited to 22 bits, got {n}")
    t0 = time.perf_counter()
    count = 1 << n
    codes = np.arange(count, dtype=np.uint32)
    bits = ((codes[:, None] >> np.arange(n, dtype=np.uint32)) & 1).astype(np.int8)
    energies = qubo.energies(bits)
    take = min(params.num_reads, count)
    part = np.argpartition(energies, take - 1)[:take] if take < count else codes
    order = sorted(part.tolist(), key=lambda i: (energies[i], bits[i].tobytes()))
    rows = [bits[i] for i in order]
    while len(rows) < params.num_reads:
        rows.append(rows[0])
    info = {"sampler": "exhaustive", "num_reads": params.num_reads,
            "seed": params.seed, "wall_time": time.perf_counter() - t0}
    return aggregate_samples(qubo, np.asarray(rows), info)


def make_noisy_sampler(noise_rate: float = 0.05, base=None):
    """Post-anneal independent bit flips with the given rate: a crude stand-in
    for noisy annealing hardware, used to exercise the recovery stage."""
    if not 0.0 <= noise_rate <= 1.0:
        raise ValueError("noise_rate must be within [0, 1]")
    base_fn = base or simulated_annealing_sample

    def noisy_sample(qubo: Qubo, params: AnnealParams) -> SampleSet:
        clean = base_fn(qubo, params)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=int(params.seed),
                                                           spawn_key=(13,)))
        rows = []
        for bits, _, mult in clean.records:
            for _ in range(mult):
                flips = rng.random(qubo.n) < noise_rate
                rows.append(np.where(flips, 1 - bits, bits).astype(np.int8))
        info = dict(clean.info)
        info["sampler"] = f"noisy(rate={noise_rate})"
        return aggregate_samples(qubo, np.asarray(rows), info)

    return noisy_sample


_REGISTRY: dict = {}


def register_sampler(name: str, factory) -> None:
    """Register a sampler factory: factory(**options) -> sample(qubo, params)."""
    if name in _REGISTRY:
        raise SamplerError(f"sampler {name!r} already registered")
    _REGISTRY[name] = factory


def available_samplers() -> list[str]:
    return sorted(_REGISTRY)


def get_sampler(name: str, **options):
    if name not in _REGISTRY:
        raise SamplerError(f"unknown sampler {name!r}; available: {available_samplers()}")
    fn = _REGISTRY[name](**options)

    def checked(qubo: Qubo, params: AnnealParams) -> SampleSet:
        result = fn(qubo, params)
        if result.num_samples != params.num_reads:
            raise SamplerError(
                f"sampler {name!r} returned {result.num_samples} samples, "
                f"contract requires {params.num_reads}")
        for bits, energy, _ in result.records:
            if bits.shape[0] != qubo.n:
                raise SamplerError(f"sampler {name!r} returned a {bits.shape[0]}-bit "
                                   f"vector for a {qubo.n}-bit QUBO")
            actual = qubo.energy(bits)
            if not math.isclose(energy, actual, rel_tol=1e-9, abs_tol=1e-6):
                raise SamplerError(
                    f"sampler {name!r} reported energy {energy}, recomputed {actual}")
        return result

    return checked


register_sampler("sa", lambda: simulated_annealing_sample)
register_sampler("noisy", make_noisy_sampler)
register_sampler("exhaustive", lambda: exhaustive_sample)
