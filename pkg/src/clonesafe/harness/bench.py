"""Micro-benchmarks for the cost of the clone checks.

Guarded and unguarded variants run in alternating batches so slow drift in
the machine hits both equally. Each batch gives one ns/op sample; reports
carry the median and the median absolute deviation over the batches, with
one warm-up batch per variant discarded.
"""

from __future__ import annotations

import os
import statistics
import time
from dataclasses import dataclass
from typing import Callable

from ..drbg import CtrDrbg
from ..entropy import DeterministicEntropy, SeedTree, SystemEntropy
from ..gen_device import GenIdDevice
from ..guard_memory import RegionRegistry
from ..rng import NONCE_MARKER_OFFSET, GuardCell, NonceCounter, SnapSafeRng

WORKLOADS = ("increment", "drbg", "reseed")
MIN_INCREMENT_ITERS = 10**6
MIN_BATCHES = 30
DEFAULT_ITERS = {"increment": 10**6, "drbg": 6000, "reseed": 6000}
NOISE_FACTOR = 3.0

# Figures measured on one server platform; shown for orientation, never checked.
REFERENCE = ("increment slowdown 13x; reseed of 32 bytes ~11us from the kernel pool, "
             "~0.6us from a hardware RNG instruction")


@dataclass(frozen=True)
class BenchStats:
    median_ns: float
    mad_ns: float
    samples: int


@dataclass(frozen=True)
class BenchReport:
    workload: str
    iterations: int
    batches: int
    unguarded: BenchStats
    guarded: BenchStats | None
    entropy: str
    pinned: bool

    @property
    def ratio(self) -> float | None:
        if self.guarded is None:
            return None
        return self.guarded.median_ns / self.unguarded.median_ns

    @property
    def noise_band_ns(self) -> float | None:
        if self.guarded is None:
            return None
        return NOISE_FACTOR * max(self.guarded.mad_ns, self.unguarded.mad_ns)

    @property
    def within_noise(self) -> bool | None:
        if self.guarded is None:
            return None
        return abs(self.guarded.median_ns - self.unguarded.median_ns) < self.noise_band_ns

    def render(self) -> str:
        lines = [f"workload: {self.workload}",
                 "deterministic: no (timing measurement)",
                 f"iterations: {self.iterations} per variant in {self.batches} batches",
                 f"entropy: {self.entropy}",
                 f"pinned: {'yes' if self.pinned else 'no'}",
                 f"unguarded: median {self.unguarded.median_ns:.1f} ns/op, "
                 f"MAD {self.unguarded.mad_ns:.1f}"]
        if self.guarded is not None:
            lines += [f"guarded: median {self.guarded.median_ns:.1f} ns/op, "
                      f"MAD {self.guarded.mad_ns:.1f}",
                      f"ratio: {self.ratio:.2f}",
                      f"within_noise(<{NOISE_FACTOR:g}xMAD): {'yes' if self.within_noise else 'no'}"]
        lines.append(f"reference: {REFERENCE}")
        return "\n".join(lines)


def _stats(samples: list[float]) -> BenchStats:
    med = statistics.median(samples)
    mad = statistics.median(abs(s - med) for s in samples)
    return BenchStats(med, mad, len(samples))


def _pin() -> tuple[bool, set[int] | None]:
    getter = getattr(os, "sched_getaffinity", None)
    setter = getattr(os, "sched_setaffinity", None)
    if getter is None or setter is None:
        return False, None
    try:
        before = getter(0)
        setter(0, {min(before)})
        return True, before
    except OSError:
        return False, None


def _unpin(before: set[int] | None) -> None:
    if before is not None:
        os.sched_setaffinity(0, before)


def _entropy(kind: str):
    if kind == "sys":
        return SystemEntropy()
    if kind == "test":
        return DeterministicEntropy(SeedTree(0).child("bench"))
    raise ValueError(f"entropy must be 'sys' or 'test', got {kind!r}")


def _setup(workload: str, entropy_kind: str) -> tuple[Callable[[int], None], Callable[[int], None]]:
    """Return (guarded_batch, unguarded_batch), each running n operations."""
    reg = RegionRegistry()
    guard = GuardCell.allocate(reg)
    device = GenIdDevice(bytes(range(16)))
    view = device.map_shared_view()
    entropy = _entropy(entropy_kind)

    if workload == "increment":
        rng = SnapSafeRng(entropy, guard, view)
        nguard = GuardCell(reg, guard.region_id, NONCE_MARKER_OFFSET)
        on = NonceCounter(rng, nguard, view).next_nonce
        off = NonceCounter(rng, nguard, view, check_guard=False, check_view=False).next_nonce

        def batch(f):
            def run(n: int) -> None:
                for _ in range(n):
                    f()
            return run
        return batch(on), batch(off)

    if workload == "drbg":
        on_rng = SnapSafeRng(entropy, guard, view)
        off_rng = SnapSafeRng(entropy, guard, view, check_guard=False, check_view=False)

        def batch(f):
            def run(n: int) -> None:
                for _ in range(n):
                    f(32)
            return run
        return batch(on_rng.generate), batch(off_rng.generate)

    if workload == "reseed":
        rng = SnapSafeRng(entropy, guard, view)
        raw = CtrDrbg(16, use_df=False)
        raw.instantiate(entropy.read(raw.seedlen))

        def guarded(n: int) -> None:
            for _ in range(n):
                rng.reseed()

        def unguarded(n: int) -> None:
            for _ in range(n):
                raw.reseed(entropy.read(32))
        return guarded, unguarded

    raise ValueError(f"unknown workload {workload!r}; choose from {', '.join(WORKLOADS)}")


def bench(workload: str, with_guard: bool = True, iters: int | None = None,
          entropy: str = "test", batches: int = MIN_BATCHES) -> BenchReport:
    """Time ``workload`` with and without the guard check.

    With ``with_guard=False`` only the unguarded variant is measured.
    """
    if workload not in WORKLOADS:
        raise ValueError(f"unknown workload {workload!r}; choose from {', '.join(WORKLOADS)}")
    iters = DEFAULT_ITERS[workload] if iters is None else iters
    if iters <= 0:
        raise ValueError("iterations must be positive")
    if workload == "increment" and iters < MIN_INCREMENT_ITERS:
        raise ValueError(f"increment workload needs at least {MIN_INCREMENT_ITERS} iterations")
    if batches < MIN_BATCHES:
        raise ValueError(f"need at least {MIN_BATCHES} batches")
    per_batch = max(1, iters // batches)

    guarded_run, unguarded_run = _setup(workload, entropy)
    variants = [("unguarded", unguarded_run)]
    if with_guard:
        variants.append(("guarded", guarded_run))
    samples: dict[str, list[float]] = {name: [] for name, _ in variants}

    pinned, before = _pin()
    try:
        for b in range(batches + 1):
            order = variants if b % 2 == 0 else variants[::-1]
            for name, run in order:
                t0 = time.perf_counter_ns()
                run(per_batch)
                dt = time.perf_counter_ns() - t0
                if b > 0:
                    samples[name].append(dt / per_batch)
    finally:
        _unpin(before)

    return BenchReport(
        workload=workload,
        iterations=per_batch * batches,
        batches=batches,
        unguarded=_stats(samples["unguarded"]),
        guarded=_stats(samples["guarded"]) if with_guard else None,
        entropy=entropy,
        pinned=pinned,
    )
