"""Named golden self-test cases for the analytic model.

Every case checks a pure model computation — descriptor values, work-unit
expansion, cycle predictions, performance conversions — against a
hard-coded expected value with an explicit tolerance. No benchmarking is
involved, so the suite runs in milliseconds and its outcome depends only
on the code and the bundled descriptor files: a tampered preset or a
sign slip in the model shows up as a named failing case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .ecm import (
    EcmModel,
    format_shorthand,
    in_core_times,
    model_kernel,
    parse_shorthand,
    predict,
    roofline,
    saturation_cores,
    scale,
    to_performance,
    transfer_times,
)
from .kernelmodel import KernelDescriptor, builtin_kernels, expand, intensity
from .machine import IsaClass, MachineDescriptor, builtin_machines, t_l3mem_per_cl

__all__ = ["CaseResult", "list_cases", "run_selftest"]


@dataclass(frozen=True)
class CaseResult:
    name: str
    passed: bool
    detail: str


class _CaseFailure(Exception):
    pass


def _check(ok: bool, detail: str) -> str:
    if not ok:
        raise _CaseFailure(detail)
    return detail


def _approx(what: str, actual: float, expected: float, tol: float) -> str:
    ok = math.isfinite(actual) and abs(actual - expected) <= tol
    return _check(
        ok, f"{what}: expected {expected:g} ±{tol:g}, got {actual:g}"
    )


def _exact(what: str, actual, expected) -> str:
    return _check(actual == expected, f"{what}: expected {expected!r}, got {actual!r}")


class _Context:
    """Lazily loaded descriptors shared by all cases."""

    def __init__(self, machine_dir: str | Path | None):
        self._machine_dir = machine_dir
        self._machines: dict[str, MachineDescriptor] | None = None
        self._kernels: dict[str, KernelDescriptor] | None = None

    def machine(self, name: str) -> MachineDescriptor:
        if self._machines is None:
            self._machines = {m.name: m for m in builtin_machines(self._machine_dir)}
        return self._machines[name]

    def kernel(self, name: str) -> KernelDescriptor:
        if self._kernels is None:
            self._kernels = {k.name: k for k in builtin_kernels()}
        return self._kernels[name]


_CASES: list[tuple[str, Callable[[_Context], str]]] = []


def _case(name: str):
    def register(fn: Callable[[_Context], str]):
        _CASES.append((name, fn))
        return fn

    return register


# --- machine presets ---------------------------------------------------------


@_case("machine.ivb.identity")
def _(ctx):
    md = ctx.machine("IVB")
    _exact("clock_ghz", md.clock_ghz, 2.2)
    _exact("cores", md.cores, 10)
    return _exact("bw_loadonly_gbs", md.bw_loadonly_gbs, 46.1)


@_case("machine.hsw.identity")
def _(ctx):
    md = ctx.machine("HSW")
    _exact("cores", md.cores, 14)
    return _exact("cy_per_cl_l2l3", md.cy_per_cl_l2l3, 2.77)


@_case("machine.bdw.penalty")
def _(ctx):
    return _exact("penalty_cy_per_cl", ctx.machine("BDW").penalty_cy_per_cl, 0.5)


@_case("machine.t-l3mem.snb")
def _(ctx):
    return _approx("t_l3mem_per_cl", t_l3mem_per_cl(ctx.machine("SNB")), 3.96, 0.01)


@_case("machine.t-l3mem.ivb")
def _(ctx):
    return _approx("t_l3mem_per_cl", t_l3mem_per_cl(ctx.machine("IVB")), 3.05, 0.01)


@_case("machine.t-l3mem.hsw")
def _(ctx):
    return _approx("t_l3mem_per_cl", t_l3mem_per_cl(ctx.machine("HSW")), 2.43, 0.01)


@_case("machine.t-l3mem.bdw")
def _(ctx):
    return _approx("t_l3mem_per_cl", t_l3mem_per_cl(ctx.machine("BDW")), 3.49, 0.01)


# --- kernel expansion --------------------------------------------------------


@_case("kernel.kahan-sp.vec256")
def _(ctx):
    wu = expand(ctx.kernel("kahan-dot-sp"), IsaClass.VEC256)
    _exact("bundles", wu.bundles, 2)
    _exact("adds", wu.adds, 8)
    _exact("muls", wu.muls, 2)
    _exact("loads", wu.loads, 4)
    return _exact("cls_loaded", wu.cls_loaded, 2)


@_case("kernel.kahan-sp.scalar")
def _(ctx):
    wu = expand(ctx.kernel("kahan-dot-sp"), IsaClass.SCALAR)
    _exact("adds", wu.adds, 64)
    return _exact("loads", wu.loads, 32)


@_case("kernel.naive-sp.vec256")
def _(ctx):
    wu = expand(ctx.kernel("naive-dot-sp"), IsaClass.VEC256)
    _exact("adds", wu.adds, 2)
    _exact("muls", wu.muls, 2)
    return _exact("loads", wu.loads, 4)


@_case("kernel.kahan-dp.scalar")
def _(ctx):
    wu = expand(ctx.kernel("kahan-dot-dp"), IsaClass.SCALAR)
    _exact("adds", wu.adds, 32)
    return _exact("loads", wu.loads, 16)


@_case("kernel.intensity")
def _(ctx):
    _exact("sp updates/byte", intensity(ctx.kernel("naive-dot-sp")), 0.125)
    return _exact("dp updates/byte", intensity(ctx.kernel("kahan-dot-dp")), 0.0625)


# --- model building blocks ---------------------------------------------------


@_case("ecm.incore.ivb.kahan-sp.vec256")
def _(ctx):
    wu = expand(ctx.kernel("kahan-dot-sp"), IsaClass.VEC256)
    t_ol, t_nol = in_core_times(wu, ctx.machine("IVB").port(IsaClass.VEC256))
    _approx("t_ol", t_ol, 8.0, 1e-12)
    return _approx("t_nol", t_nol, 4.0, 1e-12)


@_case("ecm.incore.hsw.kahan-sp.vec256")
def _(ctx):
    wu = expand(ctx.kernel("kahan-dot-sp"), IsaClass.VEC256)
    t_ol, t_nol = in_core_times(wu, ctx.machine("HSW").port(IsaClass.VEC256))
    _approx("t_ol", t_ol, 8.0, 1e-12)
    return _approx("t_nol", t_nol, 2.0, 1e-12)


@_case("ecm.incore.ivb.kahan-sp.scalar")
def _(ctx):
    wu = expand(ctx.kernel("kahan-dot-sp"), IsaClass.SCALAR)
    t_ol, t_nol = in_core_times(wu, ctx.machine("IVB").port(IsaClass.SCALAR))
    _approx("t_ol", t_ol, 64.0, 1e-12)
    return _approx("t_nol", t_nol, 16.0, 1e-12)


@_case("ecm.transfer.ivb.kahan-sp")
def _(ctx):
    wu = expand(ctx.kernel("kahan-dot-sp"), IsaClass.VEC256)
    t12, t23, t3m, pen = transfer_times(wu, ctx.machine("IVB"))
    _approx("t_l1l2", t12, 4.0, 1e-9)
    _approx("t_l2l3", t23, 4.0, 1e-9)
    _approx("t_l3mem", t3m, 6.1, 1e-9)
    return _approx("penalty", pen, 2.9, 1e-9)


@_case("ecm.transfer.hsw.kahan-sp")
def _(ctx):
    wu = expand(ctx.kernel("kahan-dot-sp"), IsaClass.VEC256)
    t12, t23, t3m, pen = transfer_times(wu, ctx.machine("HSW"))
    _approx("t_l1l2", t12, 2.0, 1e-9)
    _approx("t_l2l3", t23, 5.54, 1e-9)
    _approx("t_l3mem", t3m, 4.86, 1e-9)
    return _approx("penalty", pen, 11.1, 1e-9)


@_case("ecm.predict.composed")
def _(ctx):
    cy = predict(EcmModel(t_ol=2, t_nol=4, t_l1l2=4, t_l2l3=4, t_l3mem=9))
    _approx("cy_l1", cy[0], 4.0, 1e-9)
    _approx("cy_l2", cy[1], 8.0, 1e-9)
    _approx("cy_l3", cy[2], 12.0, 1e-9)
    return _approx("cy_mem", cy[3], 21.0, 1e-9)


@_case("ecm.predict.in-core-bound")
def _(ctx):
    cy = predict(
        EcmModel(t_ol=64, t_nol=16, t_l1l2=4, t_l2l3=4, t_l3mem=6.1, penalty=2.9)
    )
    for what, got in zip(("cy_l1", "cy_l2", "cy_l3", "cy_mem"), cy):
        _approx(what, got, 64.0, 1e-9)
    return "arithmetic hides all transfers, penalty included"


@_case("ecm.performance.ivb")
def _(ctx):
    _approx("perf @21 cy", to_performance(21.0, 16, 2.2), 1.68, 0.01)
    return _approx("perf @8 cy", to_performance(8.0, 16, 2.2), 4.40, 0.01)


@_case("ecm.roofline.ivb")
def _(ctx):
    _approx("sp cap", roofline(1 / 8, 46.1), 5.76, 0.01)
    return _approx("dp cap", roofline(1 / 16, 46.1), 2.88, 0.01)


@_case("ecm.scale.caps")
def _(ctx):
    _approx("2 cores linear", scale(1.68, 5.7625, 2), 3.36, 1e-9)
    return _approx("4 cores capped", scale(1.68, 5.7625, 4), 5.7625, 1e-9)


@_case("ecm.saturation.examples")
def _(ctx):
    _exact("21/6.1 cores", saturation_cores(21.0, 6.1), 4)
    _exact("64/6.1 cores", saturation_cores(64.0, 6.1), 11)
    return _exact("32/6.1 cores", saturation_cores(32.0, 6.1), 6)


# --- full kernel models ------------------------------------------------------


@_case("shorthand.parse.example")
def _(ctx):
    model = parse_shorthand("{2 ‖ 4 | 4 | 4 | 9}")
    return _exact(
        "parsed model",
        model,
        EcmModel(t_ol=2, t_nol=4, t_l1l2=4, t_l2l3=4, t_l3mem=9, penalty=0),
    )


@_case("model.ivb.kahan-sp.vec256")
def _(ctx):
    model, pred = model_kernel(
        ctx.kernel("kahan-dot-sp"), IsaClass.VEC256, ctx.machine("IVB")
    )
    for what, got, want in zip(
        ("cy_l1", "cy_l2", "cy_l3", "cy_mem"), pred.cy, (8, 8, 12, 21)
    ):
        _approx(what, got, want, 0.1)
    for what, got, want in zip(
        ("perf_l1", "perf_l2", "perf_l3", "perf_mem"),
        pred.perf,
        (4.40, 4.40, 2.93, 1.68),
    ):
        _approx(what, got, want, 0.02)
    _exact("n_sat", pred.n_sat, 4)
    return _exact(
        "shorthand",
        format_shorthand(model),
        "{8 ‖ 4 | 4 | 4 | 6.1+2.9}",
    )


@_case("model.ivb.naive-sp.vec256")
def _(ctx):
    _, pred = model_kernel(
        ctx.kernel("naive-dot-sp"), IsaClass.VEC256, ctx.machine("IVB")
    )
    for what, got, want in zip(
        ("cy_l1", "cy_l2", "cy_l3", "cy_mem"), pred.cy, (4, 8, 12, 21)
    ):
        _approx(what, got, want, 0.1)
    for what, got, want in zip(
        ("perf_l1", "perf_l2", "perf_l3", "perf_mem"),
        pred.perf,
        (8.80, 4.40, 2.93, 1.68),
    ):
        _approx(what, got, want, 0.02)
    return "load-bound everywhere but L1"


@_case("model.ivb.kahan-dp.scalar")
def _(ctx):
    model, _ = model_kernel(
        ctx.kernel("kahan-dot-dp"), IsaClass.SCALAR, ctx.machine("IVB")
    )
    return _exact(
        "shorthand",
        format_shorthand(model),
        "{32 ‖ 8 | 4 | 4 | 6.1+2.9}",
    )


@_case("model.ivb.kahan-sp.vec128")
def _(ctx):
    _, pred = model_kernel(
        ctx.kernel("kahan-dot-sp"), IsaClass.VEC128, ctx.machine("IVB")
    )
    for what, got, want in zip(
        ("cy_l1", "cy_l2", "cy_l3", "cy_mem"), pred.cy, (16, 16, 16, 21)
    ):
        _approx(what, got, want, 0.1)
    for what, got, want in zip(
        ("perf_l1", "perf_l2", "perf_l3", "perf_mem"),
        pred.perf,
        (2.20, 2.20, 2.20, 1.68),
    ):
        _approx(what, got, want, 0.02)
    return "vec128 throttled by the compensated adds"


@_case("model.snb.kahan-sp.vec256")
def _(ctx):
    _, pred = model_kernel(
        ctx.kernel("kahan-dot-sp"), IsaClass.VEC256, ctx.machine("SNB")
    )
    return _approx("cy_mem", pred.cy_mem, 25.0, 0.1)


@_case("model.hsw.kahan-sp.vec256")
def _(ctx):
    _, pred = model_kernel(
        ctx.kernel("kahan-dot-sp"), IsaClass.VEC256, ctx.machine("HSW")
    )
    _approx("cy_mem", pred.cy_mem, 25.54, 0.1)
    return _approx("perf_mem", pred.perf_mem, 1.44, 0.02)


@_case("model.bdw.kahan-sp.vec256")
def _(ctx):
    _, pred = model_kernel(
        ctx.kernel("kahan-dot-sp"), IsaClass.VEC256, ctx.machine("BDW")
    )
    for what, got, want in zip(
        ("cy_l1", "cy_l2", "cy_l3", "cy_mem"), pred.cy, (8, 8, 8, 16)
    ):
        _approx(what, got, want, 0.1)
    for what, got, want in zip(
        ("perf_l1", "perf_l2", "perf_l3", "perf_mem"),
        pred.perf,
        (3.60, 3.60, 3.60, 1.80),
    ):
        _approx(what, got, want, 0.02)
    return "all cache levels hidden behind the compensated adds"


@_case("shorthand.roundtrip.ivb")
def _(ctx):
    model, _ = model_kernel(
        ctx.kernel("kahan-dot-sp"), IsaClass.VEC256, ctx.machine("IVB")
    )
    text = format_shorthand(model)
    again = parse_shorthand(text)
    return _exact("parse(format(model))", again, model)


# --- level classification and CLI surface -------------------------------------


@_case("classify.ivb.30mib")
def _(ctx):
    from .bench import classify_level

    level = classify_level(30 * 1024 * 1024, ctx.machine("IVB"))
    return _exact("30 MiB working set", level, "MEM")


def _cli_output(argv: list[str]) -> str:
    import contextlib
    import io

    from . import cli

    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = cli.main(argv)
    _check(code == 0, f"exit code {code} from {' '.join(argv)}")
    return buf.getvalue()


@_case("cli.predict.ivb.model-string")
def _(ctx):
    text = _cli_output(
        ["predict", "-m", "IVB", "-k", "kahan-dot-sp", "--isa", "vec256"]
    )
    wanted = "{8 ‖ 4 | 4 | 4 | 6.1+2.9}"
    return _check(
        wanted in text, f"expected {wanted!r} in predict output:\n{text}"
    )


@_case("cli.predict.bdw.perf-line")
def _(ctx):
    import re

    text = _cli_output(
        ["predict", "-m", "BDW", "-k", "kahan-dot-sp", "--isa", "vec256"]
    )
    match = re.search(r"perf\s*= \{([^}]*)\}", text)
    _check(match is not None, f"no perf line in predict output:\n{text}")
    values = [float(v) for v in match.group(1).split("⌉")]
    for what, got, want in zip(
        ("perf_l1", "perf_l2", "perf_l3", "perf_mem"),
        values,
        (3.60, 3.60, 3.60, 1.8),
    ):
        _approx(what, got, want, 0.02)
    return "perf line carries {3.60 ⌉ 3.60 ⌉ 3.60 ⌉ ~1.8} GUP/s"


def list_cases() -> list[str]:
    """Names of all registered self-test cases, in execution order."""
    return [name for name, _ in _CASES]


def run_selftest(
    machine_dir: str | Path | None = None,
    names: list[str] | None = None,
) -> list[CaseResult]:
    """Run all (or the named) cases; never raises for case failures.

    ``machine_dir`` overrides where the machine presets are read from,
    which lets callers verify that the shipped data files are intact.
    """
    wanted = set(names) if names is not None else None
    unknown = (wanted or set()) - {name for name, _ in _CASES}
    if unknown:
        raise ValueError(f"unknown self-test cases: {sorted(unknown)}")
    ctx = _Context(machine_dir)
    results = []
    for name, fn in _CASES:
        if wanted is not None and name not in wanted:
            continue
        try:
            detail = fn(ctx)
            results.append(CaseResult(name=name, passed=True, detail=detail))
        except _CaseFailure as fail:
            results.append(CaseResult(name=name, passed=False, detail=str(fail)))
        except Exception as exc:  # noqa: BLE001 - a broken case must not abort the suite
            results.append(
                CaseResult(
                    name=name,
                    passed=False,
                    detail=f"{type(exc).__name__}: {exc}",
                )
            )
    return results
