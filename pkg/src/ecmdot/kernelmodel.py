"""Abstract kernel descriptors and their expansion into work units.

A :class:`KernelDescriptor` counts, per scalar loop iteration, the
instructions and data streams of a streaming kernel — independent of any
machine. :func:`expand` turns that into a :class:`WorkUnitCounts` for a
concrete ISA class: the instruction and cache-line traffic counts for
one *work unit*, defined as processing one cache line per data stream.

Descriptors can be built in code, loaded from text (:func:`load_kernel`,
same ``key = value`` format as machine files), or taken from the bundled
presets (:func:`builtin_kernels`): naive and Kahan-compensated dot
products in single and double precision.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from .descfile import (
    DescriptorInvariantError,
    DescriptorParseError,
    format_number,
    parse_number,
    parse_sections,
)
from .machine import IsaClass

__all__ = [
    "KernelDescriptor",
    "WorkUnitCounts",
    "KernelExpandError",
    "expand",
    "intensity",
    "load_kernel",
    "load_kernel_file",
    "format_kernel",
    "builtin_kernels",
    "builtin_kernel",
]


@dataclass(frozen=True)
class KernelDescriptor:
    """Machine-independent instruction/stream counts per loop iteration."""

    name: str
    elem_bytes: int
    streams_loaded: int
    streams_stored: int
    loads_per_iter: int
    stores_per_iter: int
    adds_per_iter: int
    muls_per_iter: int
    fmas_per_iter: int
    updates_per_iter: int

    def __post_init__(self) -> None:
        if not self.name or not isinstance(self.name, str):
            raise DescriptorInvariantError("must be a non-empty string", "name")
        for f in fields(self):
            if f.name == "name":
                continue
            v = getattr(self, f.name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise DescriptorInvariantError(
                    f"must be an integer, got {v!r}", f.name
                )
            if v < 0:
                raise DescriptorInvariantError(
                    f"must be non-negative, got {v}", f.name
                )
        if self.elem_bytes not in (4, 8):
            raise DescriptorInvariantError(
                f"must be 4 (single) or 8 (double), got {self.elem_bytes}",
                "elem_bytes",
            )
        if self.streams_loaded + self.streams_stored < 1:
            raise DescriptorInvariantError(
                "kernel must touch at least one data stream", "streams_loaded"
            )
        if self.loads_per_iter < self.streams_loaded:
            raise DescriptorInvariantError(
                f"loads_per_iter={self.loads_per_iter} cannot be smaller than "
                f"streams_loaded={self.streams_loaded}",
                "loads_per_iter",
            )
        if self.stores_per_iter < self.streams_stored:
            raise DescriptorInvariantError(
                f"stores_per_iter={self.stores_per_iter} cannot be smaller "
                f"than streams_stored={self.streams_stored}",
                "stores_per_iter",
            )
        if self.updates_per_iter < 1:
            raise DescriptorInvariantError(
                "kernel must produce at least one result update per "
                "iteration", "updates_per_iter"
            )


@dataclass(frozen=True)
class WorkUnitCounts:
    """Counts for one work unit: one cache line per stream.

    ``iterations`` scalar iterations are covered by ``bundles``
    instructions of ``lanes`` elements each; the instruction counts are
    totals over the work unit, the ``cls_*`` fields count cache-line
    transfers per adjacent cache-level pair, and ``updates`` is the
    number of result updates (useful work) per work unit.
    """

    lanes: int
    iterations: int
    bundles: int
    loads: int
    stores: int
    adds: int
    muls: int
    fmas: int
    cls_loaded: int
    cls_stored: int
    updates: int

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise DescriptorInvariantError(
                    f"must be an integer, got {v!r}", f.name
                )
            if v < 0:
                raise DescriptorInvariantError(
                    f"must be non-negative, got {v}", f.name
                )
        if self.lanes < 1 or self.iterations < 1 or self.bundles < 1:
            raise DescriptorInvariantError(
                "lanes, iterations and bundles must be at least 1", "bundles"
            )
        if self.iterations != self.lanes * self.bundles:
            raise DescriptorInvariantError(
                f"iterations={self.iterations} must equal lanes*bundles="
                f"{self.lanes * self.bundles}",
                "iterations",
            )

    @property
    def cls_total(self) -> int:
        return self.cls_loaded + self.cls_stored


class KernelExpandError(ValueError):
    """Raised when a kernel cannot be expanded for an ISA class."""


def expand(
    kd: KernelDescriptor,
    isa: IsaClass,
    cacheline_bytes: int = 64,
) -> WorkUnitCounts:
    """Instruction and traffic counts of one work unit for ``isa``.

    One work unit covers ``cacheline_bytes / elem_bytes`` scalar
    iterations, so each loaded/stored stream moves exactly one cache
    line. Vector lanes must divide the iteration count evenly.
    """
    if cacheline_bytes % kd.elem_bytes != 0:
        raise KernelExpandError(
            f"cache line of {cacheline_bytes} bytes does not hold a whole "
            f"number of {kd.elem_bytes}-byte elements"
        )
    iterations = cacheline_bytes // kd.elem_bytes
    lanes = isa.lane_width(kd.elem_bytes)
    if iterations % lanes != 0:
        raise KernelExpandError(
            f"{lanes} lanes do not divide the {iterations} iterations of a "
            f"work unit for kernel {kd.name!r}"
        )
    bundles = iterations // lanes
    return WorkUnitCounts(
        lanes=lanes,
        iterations=iterations,
        bundles=bundles,
        loads=bundles * kd.loads_per_iter,
        stores=bundles * kd.stores_per_iter,
        adds=bundles * kd.adds_per_iter,
        muls=bundles * kd.muls_per_iter,
        fmas=bundles * kd.fmas_per_iter,
        cls_loaded=kd.streams_loaded,
        cls_stored=kd.streams_stored,
        updates=iterations * kd.updates_per_iter,
    )


def intensity(kd: KernelDescriptor) -> float:
    """Computational intensity in updates per byte of stream traffic."""
    streams = kd.streams_loaded + kd.streams_stored
    return kd.updates_per_iter / (kd.elem_bytes * streams)


_KERNEL_KEYS = {
    "name": str,
    "elem_bytes": int,
    "streams_loaded": int,
    "streams_stored": int,
    "loads_per_iter": int,
    "stores_per_iter": int,
    "adds_per_iter": int,
    "muls_per_iter": int,
    "fmas_per_iter": int,
    "updates_per_iter": int,
}


def load_kernel(text: str) -> KernelDescriptor:
    """Parse kernel-descriptor text (same line format as machine files)."""
    sections = parse_sections(text)
    top = sections.pop("")
    if sections:
        name = next(iter(sections))
        first = sections[name]
        lineno = min(line for _, line in first.values()) if first else 1
        raise DescriptorParseError(
            f"kernel descriptors have no sections, found [{name}]", lineno
        )
    kwargs: dict[str, object] = {}
    for key, (raw, lineno) in top.items():
        if key not in _KERNEL_KEYS:
            raise DescriptorParseError(f"unknown key {key!r}", lineno)
        if _KERNEL_KEYS[key] is str:
            kwargs[key] = raw
        else:
            value = parse_number(raw, key=key, line=lineno)
            if value != int(value):
                raise DescriptorParseError(
                    f"key {key!r} must be an integer, got {raw!r}", lineno
                )
            kwargs[key] = int(value)
    missing = sorted(set(_KERNEL_KEYS) - set(kwargs))
    if missing:
        raise DescriptorParseError(
            f"missing required keys: {', '.join(missing)}", 1
        )
    return KernelDescriptor(**kwargs)  # type: ignore[arg-type]


def load_kernel_file(path: str | Path) -> KernelDescriptor:
    """Load a kernel descriptor from a file path."""
    return load_kernel(Path(path).read_text(encoding="utf-8"))


def format_kernel(kd: KernelDescriptor) -> str:
    """Serialize a descriptor to text; ``load_kernel`` inverts it exactly."""
    lines = [f"name = {kd.name}"]
    for key in _KERNEL_KEYS:
        if key == "name":
            continue
        lines.append(f"{key} = {format_number(getattr(kd, key))}")
    return "\n".join(lines) + "\n"


def _bundled_dir() -> Path:
    return Path(resources.files(__package__) / "kernels")


def builtin_kernels(data_dir: str | Path | None = None) -> tuple[KernelDescriptor, ...]:
    """Load the bundled kernel presets, sorted by name."""
    directory = Path(data_dir) if data_dir is not None else _bundled_dir()
    kernels = []
    for path in sorted(directory.glob("*.kernel")):
        kernels.append(load_kernel_file(path))
    if not kernels:
        raise FileNotFoundError(f"no .kernel files found in {directory}")
    return tuple(kernels)


def builtin_kernel(name: str, data_dir: str | Path | None = None) -> KernelDescriptor:
    """Look up one bundled kernel preset by (case-insensitive) name."""
    for kd in builtin_kernels(data_dir):
        if kd.name == name:
            return kd
    for kd in builtin_kernels(data_dir):
        if kd.name.lower() == name.lower():
            return kd
    raise KeyError(name)
