"""Microbenchmark harness: cache sweeps, thread scaling, model comparison.

The harness runs the compiled kernels from :mod:`ecmdot.reduction` over
working sets placed in successive cache levels and reports median cycles
per work unit, so results line up directly with the analytic model's
predictions. Results are plain frozen dataclasses with CSV emitters;
the CSV schemas are part of the public contract:

``sweep``
    ``kernel,isa,lanes,unroll,n,bytes,level,reps,cy_per_wu_median,cy_per_wu_min,perf_gups``
``scaling``
    ``kernel,isa,threads,bytes_per_thread,perf_gups,pinned``

Headers are mandatory, the decimal separator is ``.``, rows end in
``\\n``, and an optional leading comment block of ``#`` lines records
the run configuration (seed, variant, and a hash of the machine
descriptor) for reproducibility.

Wall-clock timing uses :func:`time.perf_counter_ns`; a repetition that
would run shorter than 100 timer granularities raises
:class:`TimerResolutionError` rather than returning noise.
"""

from __future__ import annotations

import hashlib
import math
import os
import statistics
import threading
import time
from dataclasses import dataclass
from typing import Callable, IO, Iterable, Sequence

import numpy as np

from .ecm import LEVELS, EcmPrediction, to_performance
from .kernelmodel import KernelDescriptor, WorkUnitCounts, expand
from .machine import IsaClass, MachineDescriptor, format_machine
from .reduction import (
    VariantConfig,
    aligned_empty,
    kahan_dot,
    naive_dot,
)

__all__ = [
    "MeasurementError",
    "TimerResolutionError",
    "Variant",
    "make_variant",
    "SweepSample",
    "ScalingSample",
    "ComparisonRow",
    "SWEEP_CSV_COLUMNS",
    "SCALING_CSV_COLUMNS",
    "classify_level",
    "sweep_sizes",
    "measure",
    "thread_scaling",
    "compare",
    "write_sweep_csv",
    "write_scaling_csv",
    "run_comment_lines",
]


class MeasurementError(RuntimeError):
    """A measurement could not be carried out trustworthily."""


class TimerResolutionError(MeasurementError):
    """A timed repetition was too short for the wall-clock granularity."""


_RUNNERS: dict[str, Callable] = {
    "naive-dot": naive_dot,
    "kahan-dot": kahan_dot,
}


@dataclass(frozen=True)
class Variant:
    """A runnable kernel variant: descriptor, ISA class, accumulator layout."""

    kernel: KernelDescriptor
    isa: IsaClass
    config: VariantConfig

    def __post_init__(self) -> None:
        self.runner  # validate that an implementation exists

    @property
    def runner(self) -> Callable:
        """The callable implementing this kernel."""
        for prefix, fn in _RUNNERS.items():
            if self.kernel.name.startswith(prefix):
                return fn
        raise ValueError(
            f"no runnable implementation for kernel {self.kernel.name!r}; "
            f"runnable kernels start with one of {sorted(_RUNNERS)}"
        )

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self.kernel.elem_bytes == 4 else np.float64)


def make_variant(
    kd: KernelDescriptor,
    isa: IsaClass,
    lanes: int | None = None,
    unroll: int = 1,
) -> Variant:
    """Build a runnable variant; ``lanes`` defaults to the ISA lane width."""
    if lanes is None:
        lanes = isa.lane_width(kd.elem_bytes)
    return Variant(kernel=kd, isa=isa, config=VariantConfig(lanes=lanes, unroll=unroll))


@dataclass(frozen=True)
class SweepSample:
    """One measured point of a working-set size sweep."""

    kernel: str
    isa: str
    lanes: int
    unroll: int
    n: int
    bytes_total: int
    level: str
    reps: int
    cy_per_wu_median: float
    cy_per_wu_min: float
    perf_gups: float

    def __post_init__(self) -> None:
        if self.n < 1 or self.bytes_total < 1:
            raise ValueError("sample must cover at least one element")
        if self.level not in LEVELS:
            raise ValueError(f"unknown level {self.level!r}")
        if self.reps < 1:
            raise ValueError("at least one repetition is required")
        if not (self.cy_per_wu_min > 0 and self.cy_per_wu_median >= self.cy_per_wu_min):
            raise ValueError(
                "cycle counts must be positive and median >= min, got "
                f"median={self.cy_per_wu_median} min={self.cy_per_wu_min}"
            )
        if self.perf_gups <= 0:
            raise ValueError(f"performance must be positive, got {self.perf_gups}")


@dataclass(frozen=True)
class ScalingSample:
    """One measured point of a thread-count scaling run."""

    kernel: str
    isa: str
    threads: int
    bytes_per_thread: int
    perf_gups: float
    pinned: bool

    def __post_init__(self) -> None:
        if self.threads < 1:
            raise ValueError(f"thread count must be positive, got {self.threads}")
        if self.bytes_per_thread < 1:
            raise ValueError("per-thread working set must be non-empty")
        if self.perf_gups <= 0:
            raise ValueError(f"performance must be positive, got {self.perf_gups}")


@dataclass(frozen=True)
class ComparisonRow:
    """Model prediction against measurement for one memory level."""

    level: str
    predicted_cy: float
    measured_cy: float
    deviation_pct: float


def classify_level(bytes_total: int, md: MachineDescriptor) -> str:
    """Cache level a working set of ``bytes_total`` bytes resides in.

    A guard factor keeps ambiguous sizes away from capacity boundaries:
    a set counts as fitting into a cache only while it is at most 60% of
    the capacity, and boundary sizes classify toward the smaller level.
    """
    if bytes_total < 1:
        raise ValueError(f"working set must be non-empty, got {bytes_total}")
    guard = 0.6
    if bytes_total <= guard * md.l1_bytes:
        return "L1"
    if bytes_total <= guard * md.l2_bytes:
        return "L2"
    if bytes_total <= guard * md.llc_bytes:
        return "L3"
    return "MEM"


def sweep_sizes(
    min_bytes: int,
    max_bytes: int,
    points: int,
    kd: KernelDescriptor,
    cacheline_bytes: int = 64,
) -> list[int]:
    """Log-spaced element counts covering ``[min_bytes, max_bytes]``.

    Byte sizes count all data streams together. Each returned value is
    a multiple of the work-unit iteration count (so measurements cover
    whole cache lines), the list is strictly increasing, and duplicates
    from rounding are dropped.
    """
    if points < 2:
        raise ValueError(f"a sweep needs at least 2 points, got {points}")
    if min_bytes < 1:
        raise ValueError(f"min_bytes must be positive, got {min_bytes}")
    if max_bytes <= min_bytes:
        raise ValueError(
            f"invalid size range: min_bytes={min_bytes} must be below "
            f"max_bytes={max_bytes}"
        )
    streams = kd.streams_loaded + kd.streams_stored
    bytes_per_iter = kd.elem_bytes * streams
    wu_iters = cacheline_bytes // kd.elem_bytes
    log_lo = math.log(min_bytes)
    log_hi = math.log(max_bytes)
    sizes: list[int] = []
    for i in range(points):
        frac = i / (points - 1)
        target = math.exp(log_lo + frac * (log_hi - log_lo))
        n = round(target / bytes_per_iter / wu_iters) * wu_iters
        n = max(wu_iters, n)
        if not sizes or n > sizes[-1]:
            sizes.append(n)
    return sizes


_TIMER_INFO = time.get_clock_info("perf_counter")
#: Wall-clock granularity in nanoseconds; mutable for tests.
TIMER_RESOLUTION_NS = max(1.0, _TIMER_INFO.resolution * 1e9)


def _work_unit_counts(variant: Variant, md: MachineDescriptor) -> WorkUnitCounts:
    return expand(variant.kernel, variant.isa, md.cacheline_bytes)


def _fill_operands(
    variant: Variant, n: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    a = aligned_empty(n, variant.dtype)
    b = aligned_empty(n, variant.dtype)
    a[:] = rng.uniform(1.0, 2.0, n)
    b[:] = rng.uniform(1.0, 2.0, n)
    return a, b


def _timed_reps(
    run: Callable[[], float],
    reps: int,
    min_time_ms: float,
) -> tuple[list[float], int, float]:
    """Time ``run`` repeatedly: ``(per-rep nanoseconds, inner calls, sink)``.

    Calibrates an inner call count so the whole measurement lasts at
    least ``min_time_ms``, then times ``reps`` repetitions of that many
    calls. Results are accumulated into a sink so the calls cannot be
    optimized away.
    """
    sink = run()  # warm-up; also triggers JIT compilation
    t0 = time.perf_counter_ns()
    sink += run()
    once_ns = max(1.0, float(time.perf_counter_ns() - t0))
    rep_target_ns = min_time_ms * 1e6 / reps
    inner = max(1, math.ceil(rep_target_ns / once_ns))
    durations: list[float] = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            sink += run()
        dt = time.perf_counter_ns() - t0
        if dt < 100 * TIMER_RESOLUTION_NS:
            raise TimerResolutionError(
                f"timed repetition lasted {dt} ns, less than 100 timer "
                f"granularities ({TIMER_RESOLUTION_NS:.0f} ns); increase "
                "min_time_ms or the working-set size"
            )
        durations.append(float(dt))
    return durations, inner, sink


def measure(
    variant: Variant,
    n: int,
    md: MachineDescriptor,
    *,
    min_time_ms: float = 50.0,
    reps: int = 5,
    seed: int = 0,
) -> SweepSample:
    """Measure one working-set size; returns a :class:`SweepSample`.

    ``n`` is the element count per stream and must cover whole work
    units (multiples of ``cacheline_bytes / elem_bytes``). The sample
    reports the median and minimum cycles per work unit over ``reps``
    (at least 5) timed repetitions, each long enough for reliable
    timing, plus the performance implied by the median.
    """
    counts = _work_unit_counts(variant, md)
    if reps < 5:
        raise ValueError(f"at least 5 repetitions are required, got {reps}")
    if min_time_ms <= 0:
        raise ValueError(f"min_time_ms must be positive, got {min_time_ms}")
    if n < 1 or n % counts.iterations != 0:
        raise ValueError(
            f"n={n} must be a positive multiple of the work-unit iteration "
            f"count {counts.iterations}"
        )
    a, b = _fill_operands(variant, n, seed)
    runner = variant.runner
    config = variant.config

    def run() -> float:
        return runner(a, b, config)

    durations, inner, sink = _timed_reps(run, reps, min_time_ms)
    if not math.isfinite(sink):
        raise MeasurementError("kernel produced a non-finite result")
    work_units = n // counts.iterations
    cy_per_rep = [ns * md.clock_ghz / (inner * work_units) for ns in durations]
    cy_median = statistics.median(cy_per_rep)
    cy_min = min(cy_per_rep)
    streams = variant.kernel.streams_loaded + variant.kernel.streams_stored
    bytes_total = n * variant.kernel.elem_bytes * streams
    return SweepSample(
        kernel=variant.kernel.name,
        isa=variant.isa.value,
        lanes=variant.config.lanes,
        unroll=variant.config.unroll,
        n=n,
        bytes_total=bytes_total,
        level=classify_level(bytes_total, md),
        reps=reps,
        cy_per_wu_median=cy_median,
        cy_per_wu_min=cy_min,
        perf_gups=to_performance(cy_median, counts.updates, md.clock_ghz),
    )


def _pin_current_thread(cpu: int) -> bool:
    try:
        os.sched_setaffinity(0, {cpu})
        return True
    except (AttributeError, OSError):
        return False


def thread_scaling(
    variant: Variant,
    threads_list: Sequence[int],
    md: MachineDescriptor,
    *,
    bytes_per_thread: int | None = None,
    min_time_ms: float = 50.0,
    seed: int = 0,
) -> list[ScalingSample]:
    """Measure aggregate performance at each requested thread count.

    Every worker owns a private working set of at least four LLC shares
    (``4 * llc_bytes / cores``) so the aggregate never fits in cache,
    starts on a shared barrier, and runs the (``nogil``) kernel
    back-to-back. A sample's ``pinned`` flag is true only when every
    worker was pinned to its own distinct CPU.
    """
    if not threads_list:
        raise ValueError("at least one thread count is required")
    counts = _work_unit_counts(variant, md)
    streams = variant.kernel.streams_loaded + variant.kernel.streams_stored
    bytes_per_iter = variant.kernel.elem_bytes * streams
    floor_bytes = -(-4 * md.llc_bytes // md.cores)  # ceil division
    if bytes_per_thread is None:
        bytes_per_thread = floor_bytes
    elif bytes_per_thread < floor_bytes:
        raise ValueError(
            f"bytes_per_thread={bytes_per_thread} is below the memory-bound "
            f"floor of {floor_bytes} (4x LLC share per core)"
        )
    n = -(-bytes_per_thread // (bytes_per_iter * counts.iterations))
    n *= counts.iterations
    actual_bytes = n * bytes_per_iter

    runner = variant.runner
    config = variant.config
    samples: list[ScalingSample] = []
    for threads in threads_list:
        if threads < 1:
            raise ValueError(f"thread count must be positive, got {threads}")
        operands = [
            _fill_operands(variant, n, seed + worker)
            for worker in range(threads)
        ]
        a0, b0 = operands[0]

        def run_once() -> float:
            return runner(a0, b0, config)

        # Calibrate the per-worker call count on one thread.
        _, inner, _ = _timed_reps(run_once, 1, min_time_ms)

        available = sorted(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else []
        barrier = threading.Barrier(threads + 1)
        pinned_flags = [False] * threads
        errors: list[BaseException] = []

        def worker(index: int) -> None:
            try:
                if index < len(available):
                    pinned_flags[index] = _pin_current_thread(available[index])
                a, b = operands[index]
                sink = runner(a, b, config)  # page-touch + JIT safety
                barrier.wait()
                for _ in range(inner):
                    sink += runner(a, b, config)
                if not math.isfinite(sink):
                    raise MeasurementError("kernel produced a non-finite result")
            except BaseException as exc:  # noqa: BLE001 - reported to caller
                errors.append(exc)
                barrier.abort()

        workers = [
            threading.Thread(target=worker, args=(i,), daemon=True)
            for i in range(threads)
        ]
        try:
            for w in workers:
                w.start()
        except RuntimeError as exc:
            raise MeasurementError(f"could not start worker threads: {exc}") from exc
        try:
            barrier.wait()
        except threading.BrokenBarrierError:
            pass
        t0 = time.perf_counter_ns()
        for w in workers:
            w.join()
        elapsed_ns = time.perf_counter_ns() - t0
        if errors:
            real = [
                e for e in errors
                if not isinstance(e, threading.BrokenBarrierError)
            ]
            cause = real[0] if real else errors[0]
            raise MeasurementError(f"worker thread failed: {cause}") from cause
        if elapsed_ns < 100 * TIMER_RESOLUTION_NS:
            raise TimerResolutionError(
                f"scaling run lasted {elapsed_ns} ns, less than 100 timer "
                "granularities; increase min_time_ms"
            )
        total_updates = threads * inner * n * variant.kernel.updates_per_iter
        samples.append(
            ScalingSample(
                kernel=variant.kernel.name,
                isa=variant.isa.value,
                threads=threads,
                bytes_per_thread=actual_bytes,
                perf_gups=total_updates / float(elapsed_ns),
                pinned=all(pinned_flags) and len(set(available[:threads])) == threads,
            )
        )
    return samples


def compare(
    samples: Iterable[SweepSample], prediction: EcmPrediction
) -> list[ComparisonRow]:
    """Median measured cycles against the model, one row per level.

    Rows come back in hierarchy order (L1 outward) for the levels that
    have samples; deviation is ``100 * (measured - predicted) /
    predicted``, so positive means slower than predicted.
    """
    rows: list[ComparisonRow] = []
    grouped: dict[str, list[float]] = {}
    for s in samples:
        grouped.setdefault(s.level, []).append(s.cy_per_wu_median)
    for level in LEVELS:
        if level not in grouped:
            continue
        measured = statistics.median(grouped[level])
        predicted = prediction.cy_at(level)
        rows.append(
            ComparisonRow(
                level=level,
                predicted_cy=predicted,
                measured_cy=measured,
                deviation_pct=100.0 * (measured - predicted) / predicted,
            )
        )
    return rows


SWEEP_CSV_COLUMNS = (
    "kernel",
    "isa",
    "lanes",
    "unroll",
    "n",
    "bytes",
    "level",
    "reps",
    "cy_per_wu_median",
    "cy_per_wu_min",
    "perf_gups",
)

SCALING_CSV_COLUMNS = (
    "kernel",
    "isa",
    "threads",
    "bytes_per_thread",
    "perf_gups",
    "pinned",
)


def _csv_num(x: float) -> str:
    return format(x, ".6g")


def run_comment_lines(
    md: MachineDescriptor,
    variant: Variant,
    *,
    seed: int,
    min_time_ms: float,
) -> list[str]:
    """Comment block describing a run, for the top of CSV output."""
    digest = hashlib.sha256(format_machine(md).encode("utf-8")).hexdigest()
    return [
        f"machine = {md.name}",
        f"machine_sha256 = {digest}",
        f"kernel = {variant.kernel.name}",
        f"isa = {variant.isa.value}",
        f"lanes = {variant.config.lanes}",
        f"unroll = {variant.config.unroll}",
        f"seed = {seed}",
        f"min_time_ms = {_csv_num(min_time_ms)}",
    ]


def write_sweep_csv(
    samples: Iterable[SweepSample],
    fh: IO[str],
    comment_lines: Iterable[str] = (),
) -> None:
    """Emit sweep samples in the fixed sweep CSV schema."""
    for line in comment_lines:
        fh.write(f"# {line}\n")
    fh.write(",".join(SWEEP_CSV_COLUMNS) + "\n")
    for s in samples:
        fh.write(
            f"{s.kernel},{s.isa},{s.lanes},{s.unroll},{s.n},{s.bytes_total},"
            f"{s.level},{s.reps},{_csv_num(s.cy_per_wu_median)},"
            f"{_csv_num(s.cy_per_wu_min)},{_csv_num(s.perf_gups)}\n"
        )


def write_scaling_csv(
    samples: Iterable[ScalingSample],
    fh: IO[str],
    comment_lines: Iterable[str] = (),
) -> None:
    """Emit scaling samples in the fixed scaling CSV schema."""
    for line in comment_lines:
        fh.write(f"# {line}\n")
    fh.write(",".join(SCALING_CSV_COLUMNS) + "\n")
    for s in samples:
        fh.write(
            f"{s.kernel},{s.isa},{s.threads},{s.bytes_per_thread},"
            f"{_csv_num(s.perf_gups)},{'true' if s.pinned else 'false'}\n"
        )
