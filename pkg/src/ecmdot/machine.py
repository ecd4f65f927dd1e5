"""Machine descriptors: per-core execution resources and memory hierarchy.

A :class:`MachineDescriptor` carries everything the analytic model needs
to predict single-core cycle counts and multi-core scaling for a
streaming kernel:

* core clock and core count,
* per-ISA-class port throughputs (loads/stores/adds/muls/fmas per cycle),
* cache-line size and cache capacities,
* inter-cache transfer costs in cycles per cache line,
* sustained memory bandwidths (load-only and peak),
* a latency penalty per cache line for memory traffic.

Descriptors are immutable. They can be built in code, loaded from the
line-oriented text format (:func:`load_machine`), or taken from the
bundled presets (:func:`builtin_machines`).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from .descfile import (
    DescriptorInvariantError,
    DescriptorParseError,
    format_number,
    parse_number,
    parse_sections,
)

__all__ = [
    "IsaClass",
    "PortThroughput",
    "MachineDescriptor",
    "load_machine",
    "load_machine_file",
    "format_machine",
    "builtin_machines",
    "builtin_machine",
    "t_l3mem_per_cl",
]


class IsaClass(enum.Enum):
    """Instruction-set class an expanded kernel targets.

    The class fixes the register width and therefore the number of
    elements processed per instruction (the lane count).
    """

    SCALAR = "scalar"
    VEC128 = "vec128"
    VEC256 = "vec256"

    @property
    def register_bytes(self) -> int:
        return _REGISTER_BYTES[self]

    def lane_width(self, elem_bytes: int) -> int:
        """Elements per instruction for ``elem_bytes``-wide elements.

        Scalar instructions always process one element regardless of
        element width; vector classes fit ``register_bytes //
        elem_bytes`` elements.
        """
        if elem_bytes <= 0:
            raise ValueError(f"elem_bytes must be positive, got {elem_bytes}")
        if self is IsaClass.SCALAR:
            return 1
        lanes = self.register_bytes // elem_bytes
        if lanes < 1 or self.register_bytes % elem_bytes != 0:
            raise ValueError(
                f"{elem_bytes}-byte elements do not pack into "
                f"{self.register_bytes}-byte {self.value} registers"
            )
        return lanes


_REGISTER_BYTES = {
    IsaClass.SCALAR: 8,
    IsaClass.VEC128: 16,
    IsaClass.VEC256: 32,
}


@dataclass(frozen=True)
class PortThroughput:
    """Sustained instruction throughputs of one ISA class, per cycle.

    A value of ``0`` means the machine cannot execute that instruction
    kind at all in this ISA class (e.g. no FMA on older cores).
    Fractional values express multi-cycle issue, e.g. ``stores_per_cy =
    0.5`` for one store every other cycle.
    """

    loads_per_cy: float
    stores_per_cy: float
    adds_per_cy: float
    muls_per_cy: float
    fmas_per_cy: float

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise DescriptorInvariantError("must be a number", f.name)
            if not math.isfinite(v) or v < 0:
                raise DescriptorInvariantError(
                    f"must be finite and non-negative, got {v!r}", f.name
                )
            object.__setattr__(self, f.name, float(v))


@dataclass(frozen=True)
class MachineDescriptor:
    """Immutable description of one CPU for the analytic model."""

    name: str
    clock_ghz: float
    cores: int
    cacheline_bytes: int
    l1_bytes: int
    l2_bytes: int
    llc_bytes: int
    cy_per_cl_l1l2: float
    cy_per_cl_l2l3: float
    bw_loadonly_gbs: float
    bw_peak_gbs: float
    penalty_cy_per_cl: float
    ports: Mapping[IsaClass, PortThroughput]

    def __post_init__(self) -> None:
        if not self.name or not isinstance(self.name, str):
            raise DescriptorInvariantError("must be a non-empty string", "name")
        _require_positive(self.clock_ghz, "clock_ghz")
        _require_positive_int(self.cores, "cores")
        _require_positive_int(self.cacheline_bytes, "cacheline_bytes")
        if self.cacheline_bytes & (self.cacheline_bytes - 1):
            raise DescriptorInvariantError(
                f"must be a power of two, got {self.cacheline_bytes}",
                "cacheline_bytes",
            )
        _require_positive_int(self.l1_bytes, "l1_bytes")
        _require_positive_int(self.l2_bytes, "l2_bytes")
        _require_positive_int(self.llc_bytes, "llc_bytes")
        if not (self.l1_bytes < self.l2_bytes < self.llc_bytes):
            raise DescriptorInvariantError(
                f"cache capacities must be strictly increasing, got "
                f"l1={self.l1_bytes} l2={self.l2_bytes} llc={self.llc_bytes}",
                "l2_bytes" if self.l1_bytes >= self.l2_bytes else "llc_bytes",
            )
        _require_non_negative(self.cy_per_cl_l1l2, "cy_per_cl_l1l2")
        _require_non_negative(self.cy_per_cl_l2l3, "cy_per_cl_l2l3")
        _require_positive(self.bw_loadonly_gbs, "bw_loadonly_gbs")
        _require_positive(self.bw_peak_gbs, "bw_peak_gbs")
        if self.bw_loadonly_gbs > self.bw_peak_gbs:
            raise DescriptorInvariantError(
                f"load-only bandwidth {self.bw_loadonly_gbs} exceeds peak "
                f"{self.bw_peak_gbs}",
                "bw_loadonly_gbs",
            )
        _require_non_negative(self.penalty_cy_per_cl, "penalty_cy_per_cl")
        for isa, pt in self.ports.items():
            if not isinstance(isa, IsaClass):
                raise DescriptorInvariantError(
                    f"keys must be IsaClass, got {isa!r}", "ports"
                )
            if not isinstance(pt, PortThroughput):
                raise DescriptorInvariantError(
                    f"values must be PortThroughput, got {pt!r}", "ports"
                )
        missing = [isa.value for isa in IsaClass if isa not in self.ports]
        if missing:
            raise DescriptorInvariantError(
                f"missing port table for {', '.join(missing)}", "ports"
            )
        object.__setattr__(self, "ports", MappingProxyType(dict(self.ports)))

    def port(self, isa: IsaClass) -> PortThroughput:
        """Port table for ``isa``; raises if the machine lacks that class."""
        try:
            return self.ports[isa]
        except KeyError:
            raise DescriptorInvariantError(
                f"machine {self.name!r} has no port table for {isa.value}",
                "ports",
            ) from None


def _require_positive(value: float, field: str) -> None:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise DescriptorInvariantError("must be a number", field)
    if not math.isfinite(value) or value <= 0:
        raise DescriptorInvariantError(
            f"must be finite and positive, got {value!r}", field
        )


def _require_non_negative(value: float, field: str) -> None:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise DescriptorInvariantError("must be a number", field)
    if not math.isfinite(value) or value < 0:
        raise DescriptorInvariantError(
            f"must be finite and non-negative, got {value!r}", field
        )


def _require_positive_int(value: int, field: str) -> None:
    if not isinstance(value, int) or isinstance(value, bool):
        raise DescriptorInvariantError(
            f"must be an integer, got {value!r}", field
        )
    if value <= 0:
        raise DescriptorInvariantError(f"must be positive, got {value}", field)


_TOP_KEYS = {
    "name": str,
    "clock_ghz": float,
    "cores": int,
    "cacheline_bytes": int,
    "l1_bytes": int,
    "l2_bytes": int,
    "llc_bytes": int,
    "cy_per_cl_l1l2": float,
    "cy_per_cl_l2l3": float,
    "bw_loadonly_gbs": float,
    "bw_peak_gbs": float,
    "penalty_cy_per_cl": float,
}

_PORT_KEYS = (
    "loads_per_cy",
    "stores_per_cy",
    "adds_per_cy",
    "muls_per_cy",
    "fmas_per_cy",
)

_ISA_SECTIONS = {f"ports.{isa.value}": isa for isa in IsaClass}


def load_machine(text: str) -> MachineDescriptor:
    """Parse machine-descriptor text into a :class:`MachineDescriptor`.

    Raises :class:`~ecmdot.descfile.DescriptorParseError` (with line
    number) for malformed text or unknown keys/sections, and
    :class:`~ecmdot.descfile.DescriptorInvariantError` (naming the
    offending field) for inconsistent values.
    """
    sections = parse_sections(text)

    top = sections.pop("")
    kwargs: dict[str, object] = {}
    for key, (raw, lineno) in top.items():
        if key not in _TOP_KEYS:
            raise DescriptorParseError(f"unknown key {key!r}", lineno)
        kind = _TOP_KEYS[key]
        if kind is str:
            kwargs[key] = raw
        elif kind is int:
            value = parse_number(raw, key=key, line=lineno)
            if value != int(value):
                raise DescriptorParseError(
                    f"key {key!r} must be an integer, got {raw!r}", lineno
                )
            kwargs[key] = int(value)
        else:
            kwargs[key] = parse_number(raw, key=key, line=lineno)
    missing = sorted(set(_TOP_KEYS) - set(kwargs))
    if missing:
        raise DescriptorParseError(
            f"missing required keys: {', '.join(missing)}", 1
        )

    ports: dict[IsaClass, PortThroughput] = {}
    for section, pairs in sections.items():
        if section not in _ISA_SECTIONS:
            first_line = min(line for _, line in pairs.values()) if pairs else 1
            raise DescriptorParseError(
                f"unknown section [{section}]", first_line
            )
        isa = _ISA_SECTIONS[section]
        values: dict[str, float] = {}
        for key, (raw, lineno) in pairs.items():
            if key not in _PORT_KEYS:
                raise DescriptorParseError(
                    f"unknown key {key!r} in section [{section}]", lineno
                )
            values[key] = parse_number(raw, key=key, line=lineno)
        missing = sorted(set(_PORT_KEYS) - set(values))
        if missing:
            raise DescriptorParseError(
                f"section [{section}] missing keys: {', '.join(missing)}", 1
            )
        ports[isa] = PortThroughput(**values)

    return MachineDescriptor(ports=ports, **kwargs)  # type: ignore[arg-type]


def load_machine_file(path: str | Path) -> MachineDescriptor:
    """Load a machine descriptor from a file path."""
    return load_machine(Path(path).read_text(encoding="utf-8"))


def format_machine(md: MachineDescriptor) -> str:
    """Serialize a descriptor to text; ``load_machine`` inverts it exactly."""
    lines = [f"name = {md.name}"]
    for key in _TOP_KEYS:
        if key == "name":
            continue
        lines.append(f"{key} = {format_number(getattr(md, key))}")
    for isa in IsaClass:
        if isa not in md.ports:
            continue
        pt = md.ports[isa]
        lines.append("")
        lines.append(f"[ports.{isa.value}]")
        for key in _PORT_KEYS:
            lines.append(f"{key} = {format_number(getattr(pt, key))}")
    return "\n".join(lines) + "\n"


def _bundled_dir() -> Path:
    return Path(resources.files(__package__) / "machines")


def builtin_machines(data_dir: str | Path | None = None) -> tuple[MachineDescriptor, ...]:
    """Load the bundled machine presets, sorted by name.

    ``data_dir`` overrides the bundled data directory (used by tests and
    the self-test's tamper detection); by default the presets shipped
    with the package are read.
    """
    directory = Path(data_dir) if data_dir is not None else _bundled_dir()
    machines = []
    for path in sorted(directory.glob("*.machine")):
        machines.append(load_machine_file(path))
    if not machines:
        raise FileNotFoundError(f"no .machine files found in {directory}")
    return tuple(machines)


def builtin_machine(name: str, data_dir: str | Path | None = None) -> MachineDescriptor:
    """Look up one bundled preset by (case-insensitive) name."""
    for md in builtin_machines(data_dir):
        if md.name == name:
            return md
    for md in builtin_machines(data_dir):
        if md.name.lower() == name.lower():
            return md
    raise KeyError(name)


def t_l3mem_per_cl(md: MachineDescriptor) -> float:
    """Cycles to move one cache line between L3 and memory, single core.

    Derived from the measured load-only bandwidth: transferring
    ``cacheline_bytes`` at ``bw_loadonly_gbs`` GB/s takes
    ``cacheline_bytes / bw`` nanoseconds, i.e. ``cacheline_bytes * clock
    / bw`` core cycles at ``clock_ghz``.
    """
    return md.cacheline_bytes * md.clock_ghz / md.bw_loadonly_gbs
