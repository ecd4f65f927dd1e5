"""Analytic execution–cache–memory model for streaming loop kernels.

The model splits the cycles one core spends per *work unit* (one cache
line per data stream) into five contributions:

``t_ol``
    overlapping in-core work: the arithmetic pipeline,
``t_nol``
    non-overlapping in-core work: load/store issue in L1,
``t_l1l2``, ``t_l2l3``, ``t_l3mem``
    cache-line transfer times between adjacent memory levels,
``penalty``
    extra latency-induced cycles that apply only when the data comes
    from main memory.

The prediction for data resident in level ``L`` is::

    cy(L) = max(t_ol, t_nol + sum of transfer terms down to L)

where the memory-level sum additionally includes ``penalty``. Transfer
terms serialize with the load/store work but overlap with arithmetic.

Multi-core scaling assumes cycles-per-work-unit stays constant until the
memory bandwidth saturates: ``n`` cores deliver ``min(n * p1, p_roof)``
where ``p_roof`` is the bandwidth roofline, and saturation is reached at
``ceil(cy_mem / t_l3mem)`` cores.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, fields

from .kernelmodel import KernelDescriptor, WorkUnitCounts, expand, intensity
from .machine import IsaClass, MachineDescriptor, PortThroughput, t_l3mem_per_cl

__all__ = [
    "EcmError",
    "ShorthandError",
    "EcmModel",
    "EcmPrediction",
    "LEVELS",
    "in_core_times",
    "transfer_times",
    "predict",
    "to_performance",
    "roofline",
    "scale",
    "saturation_cores",
    "format_shorthand",
    "parse_shorthand",
    "model_kernel",
]

#: Memory-hierarchy levels a working set can reside in, innermost first.
LEVELS = ("L1", "L2", "L3", "MEM")


class EcmError(ValueError):
    """Raised when model inputs are inconsistent with the machine."""


class ShorthandError(ValueError):
    """Raised for malformed shorthand notation; knows the bad position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"position {position}: {message}")
        self.position = position


@dataclass(frozen=True)
class EcmModel:
    """The five cycle contributions per work unit, plus memory penalty."""

    t_ol: float
    t_nol: float
    t_l1l2: float
    t_l2l3: float
    t_l3mem: float
    penalty: float = 0.0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise EcmError(f"{f.name} must be a number, got {v!r}")
            if not math.isfinite(v) or v < 0:
                raise EcmError(
                    f"{f.name} must be finite and non-negative, got {v!r}"
                )
            object.__setattr__(self, f.name, float(v))


@dataclass(frozen=True)
class EcmPrediction:
    """Per-level cycle and performance predictions for one kernel/machine."""

    cy_l1: float
    cy_l2: float
    cy_l3: float
    cy_mem: float
    perf_l1: float
    perf_l2: float
    perf_l3: float
    perf_mem: float
    n_sat: int
    p_roofline: float

    @property
    def cy(self) -> tuple[float, float, float, float]:
        """Cycles per work unit, ordered as :data:`LEVELS`."""
        return (self.cy_l1, self.cy_l2, self.cy_l3, self.cy_mem)

    @property
    def perf(self) -> tuple[float, float, float, float]:
        """Single-core GUP/s per level, ordered as :data:`LEVELS`."""
        return (self.perf_l1, self.perf_l2, self.perf_l3, self.perf_mem)

    def cy_at(self, level: str) -> float:
        """Cycle prediction for one named level (``L1``/``L2``/``L3``/``MEM``)."""
        try:
            return self.cy[LEVELS.index(level)]
        except ValueError:
            raise EcmError(f"unknown memory level {level!r}") from None


def in_core_times(
    counts: WorkUnitCounts, ports: PortThroughput
) -> tuple[float, float]:
    """In-core cycles per work unit: ``(t_ol, t_nol)``.

    Arithmetic kinds issue on separate ports, so the overlapping time is
    the maximum of the per-kind times; likewise loads and stores for the
    non-overlapping time. A nonzero instruction count with no issue
    capacity on this machine is an error.
    """
    t_ol = max(
        _port_time(counts.adds, ports.adds_per_cy, "add"),
        _port_time(counts.muls, ports.muls_per_cy, "multiply"),
        _port_time(counts.fmas, ports.fmas_per_cy, "fused multiply-add"),
    )
    t_nol = max(
        _port_time(counts.loads, ports.loads_per_cy, "load"),
        _port_time(counts.stores, ports.stores_per_cy, "store"),
    )
    return (t_ol, t_nol)


def _port_time(count: int, per_cy: float, kind: str) -> float:
    if count == 0:
        return 0.0
    if per_cy == 0:
        raise EcmError(
            f"kernel issues {count} {kind} instructions per work unit but "
            "the machine has no issue capacity for them"
        )
    return count / per_cy


def transfer_times(
    counts: WorkUnitCounts, md: MachineDescriptor
) -> tuple[float, float, float, float]:
    """Cache-line transfer cycles per work unit, plus the memory penalty.

    Returns ``(t_l1l2, t_l2l3, t_l3mem, penalty)``. Each term is the
    number of cache lines moved per work unit times the machine's
    per-line cost for that level pair. The memory term's per-line cost
    is derived from measured bandwidth and quoted (like the descriptor
    fields) at two decimals, so model terms compose consistently.
    """
    cls = counts.cls_total
    return (
        cls * md.cy_per_cl_l1l2,
        cls * md.cy_per_cl_l2l3,
        cls * round(t_l3mem_per_cl(md), 2),
        cls * md.penalty_cy_per_cl,
    )


def predict(m: EcmModel) -> tuple[float, float, float, float]:
    """Cycles per work unit per residence level ``(L1, L2, L3, MEM)``.

    Transfer terms accumulate onto the non-overlapping time as the
    working set moves outward; the latency penalty joins the sum only at
    the memory level.
    """
    base = m.t_nol
    cy_l1 = max(m.t_ol, base)
    base += m.t_l1l2
    cy_l2 = max(m.t_ol, base)
    base += m.t_l2l3
    cy_l3 = max(m.t_ol, base)
    base += m.t_l3mem + m.penalty
    cy_mem = max(m.t_ol, base)
    return (cy_l1, cy_l2, cy_l3, cy_mem)


def to_performance(
    cy_per_wu: float, updates_per_wu: float, clock_ghz: float
) -> float:
    """Convert a cycle prediction to performance in GUP/s.

    ``updates_per_wu`` useful updates every ``cy_per_wu`` cycles at
    ``clock_ghz`` gigacycles per second.
    """
    if cy_per_wu <= 0:
        raise EcmError(f"cycles per work unit must be positive, got {cy_per_wu!r}")
    if updates_per_wu <= 0:
        raise EcmError(f"updates per work unit must be positive, got {updates_per_wu!r}")
    if clock_ghz <= 0:
        raise EcmError(f"clock must be positive, got {clock_ghz!r}")
    return updates_per_wu * clock_ghz / cy_per_wu


def roofline(intens: float, bw_gbs: float) -> float:
    """Bandwidth-limited performance cap in GUP/s.

    ``intens`` updates per byte times ``bw_gbs`` bytes per nanosecond.
    """
    if intens <= 0:
        raise EcmError(f"intensity must be positive, got {intens!r}")
    if bw_gbs <= 0:
        raise EcmError(f"bandwidth must be positive, got {bw_gbs!r}")
    return intens * bw_gbs


def scale(perf_single: float, perf_cap: float, n_cores: int) -> float:
    """Multi-core performance: linear in cores until the bandwidth cap."""
    if n_cores < 1:
        raise EcmError(f"core count must be at least 1, got {n_cores}")
    if perf_single <= 0:
        raise EcmError(f"single-core performance must be positive, got {perf_single!r}")
    if perf_cap <= 0:
        raise EcmError(f"performance cap must be positive, got {perf_cap!r}")
    return min(n_cores * perf_single, perf_cap)


def saturation_cores(cy_mem: float, t_l3mem: float) -> int:
    """Cores needed to saturate memory bandwidth.

    One core is busy for ``cy_mem`` cycles per work unit but occupies
    the memory interface only for the ``t_l3mem`` transfer cycles
    (latency penalties stall the core, not the interface — so they
    belong in ``cy_mem`` but never in ``t_l3mem``). The interface is
    full once ``ceil(cy_mem / t_l3mem)`` cores issue work units
    back-to-back. Ratios within 1e-9 of an integer count as exact.
    """
    if t_l3mem <= 0:
        raise EcmError(
            f"memory transfer time must be positive, got {t_l3mem!r}"
        )
    if cy_mem <= 0:
        raise EcmError(f"cy_mem must be positive, got {cy_mem!r}")
    ratio = cy_mem / t_l3mem
    return max(1, math.ceil(ratio - 1e-9))


def _fmt_cycles(x: float) -> str:
    """Two-decimal rendering with trailing zeros trimmed (``6.10`` → ``6.1``)."""
    s = f"{x:.2f}"
    s = s.rstrip("0").rstrip(".")
    return s if s else "0"


def format_shorthand(m: EcmModel) -> str:
    """Render a model as ``{t_ol ‖ t_nol | t_l1l2 | t_l2l3 | t_l3mem+penalty}``.

    Values are shown at two decimals with trailing zeros trimmed; a zero
    penalty is omitted entirely.
    """
    tail = _fmt_cycles(m.t_l3mem)
    if m.penalty > 0:
        tail += f"+{_fmt_cycles(m.penalty)}"
    return (
        f"{{{_fmt_cycles(m.t_ol)} ‖ {_fmt_cycles(m.t_nol)} | "
        f"{_fmt_cycles(m.t_l1l2)} | {_fmt_cycles(m.t_l2l3)} | {tail}}}"
    )


_NUMBER = re.compile(r"\d+(?:\.\d+)?")


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def expect(self, token: str, what: str) -> None:
        self.skip_ws()
        if not self.text.startswith(token, self.pos):
            raise ShorthandError(f"expected {what}", self.pos)
        self.pos += len(token)

    def number(self, what: str) -> float:
        self.skip_ws()
        match = _NUMBER.match(self.text, self.pos)
        if not match:
            raise ShorthandError(f"expected {what}", self.pos)
        self.pos = match.end()
        return float(match.group())

    def peek(self, token: str) -> bool:
        self.skip_ws()
        if self.text.startswith(token, self.pos):
            self.pos += len(token)
            return True
        return False


def parse_shorthand(text: str) -> EcmModel:
    """Parse shorthand notation back into an :class:`EcmModel`.

    Accepts the Unicode parallel bar ``‖`` or the ASCII fallback ``||``
    between the in-core terms, arbitrary spacing, and an optional
    ``+penalty`` on the memory term. Malformed input raises
    :class:`ShorthandError` carrying the character position.
    """
    sc = _Scanner(text)
    sc.expect("{", "'{'")
    t_ol = sc.number("overlapping in-core cycles")
    sc.skip_ws()
    if not (sc.peek("‖") or sc.peek("||")):
        raise ShorthandError("expected '‖' or '||'", sc.pos)
    t_nol = sc.number("non-overlapping in-core cycles")
    sc.expect("|", "'|'")
    t_l1l2 = sc.number("L1-L2 transfer cycles")
    sc.expect("|", "'|'")
    t_l2l3 = sc.number("L2-L3 transfer cycles")
    sc.expect("|", "'|'")
    t_l3mem = sc.number("L3-memory transfer cycles")
    penalty = 0.0
    if sc.peek("+"):
        penalty = sc.number("memory penalty cycles")
    sc.expect("}", "'}'")
    sc.skip_ws()
    if sc.pos != len(text):
        raise ShorthandError("unexpected trailing characters", sc.pos)
    return EcmModel(
        t_ol=t_ol,
        t_nol=t_nol,
        t_l1l2=t_l1l2,
        t_l2l3=t_l2l3,
        t_l3mem=t_l3mem,
        penalty=penalty,
    )


def model_kernel(
    kd: KernelDescriptor, isa: IsaClass, md: MachineDescriptor
) -> tuple[EcmModel, EcmPrediction]:
    """Build the full model and prediction of a kernel on a machine."""
    counts = expand(kd, isa, md.cacheline_bytes)
    t_ol, t_nol = in_core_times(counts, md.port(isa))
    t_l1l2, t_l2l3, t_l3mem, penalty = transfer_times(counts, md)
    model = EcmModel(
        t_ol=t_ol,
        t_nol=t_nol,
        t_l1l2=t_l1l2,
        t_l2l3=t_l2l3,
        t_l3mem=t_l3mem,
        penalty=penalty,
    )
    cy = predict(model)
    perf = tuple(
        to_performance(c, counts.updates, md.clock_ghz) for c in cy
    )
    prediction = EcmPrediction(
        cy_l1=cy[0],
        cy_l2=cy[1],
        cy_l3=cy[2],
        cy_mem=cy[3],
        perf_l1=perf[0],
        perf_l2=perf[1],
        perf_l3=perf[2],
        perf_mem=perf[3],
        n_sat=saturation_cores(cy[3], model.t_l3mem),
        p_roofline=roofline(intensity(kd), md.bw_loadonly_gbs),
    )
    return model, prediction
