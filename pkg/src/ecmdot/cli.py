"""Command-line interface.

Subcommands::

    machines                 list bundled machine presets
    kernels                  list bundled kernel presets
    predict                  analytic per-level prediction for a kernel/machine
    bench sweep              measure a working-set size sweep (CSV by default)
    bench scaling            measure thread scaling (CSV by default)
    compare                  measured sweep against the model, per level
    accuracy                 rounding-error report on ill-conditioned input
    selftest                 run the named golden model checks

Machine and kernel references resolve in this order: bundled preset
name, then ``<name>`` or ``<name>.machine`` / ``<name>.kernel`` in each
directory of the ``ECMDOT_MACHINE_PATH`` environment variable
(``os.pathsep``-separated), then an existing file path. A leading ``@``
skips name lookup and forces file-path resolution.

Exit codes: 0 success, 1 self-test failure, 2 unresolvable machine or
kernel reference, 3 invalid parameters or model error, 4 measurement
error.
"""

from __future__ import annotations

import argparse
import os
import re
import sys
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, IO, Sequence

import numpy as np

from . import bench
from .descfile import DescriptorError
from .ecm import (
    EcmError,
    ShorthandError,
    format_shorthand,
    model_kernel,
    LEVELS,
)
from .kernelmodel import (
    KernelDescriptor,
    KernelExpandError,
    builtin_kernel,
    builtin_kernels,
    intensity,
    load_kernel_file,
)
from .machine import (
    IsaClass,
    MachineDescriptor,
    builtin_machine,
    builtin_machines,
    load_machine_file,
)
from .reduction import (
    VariantConfig,
    achieved_condition,
    gen_ill_conditioned,
    kahan_dot,
    naive_dot,
    oracle_dot,
)
from .selftest import list_cases, run_selftest

__all__ = ["CommandSpec", "COMMANDS", "main", "entry", "ResolutionError"]

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_RESOLUTION = 2
EXIT_PARAMS = 3
EXIT_MEASUREMENT = 4

MACHINE_PATH_VAR = "ECMDOT_MACHINE_PATH"


class ResolutionError(Exception):
    """A machine or kernel reference could not be resolved."""


class _UsageError(Exception):
    def __init__(self, parser: argparse.ArgumentParser, message: str):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D102 - argparse hook
        raise _UsageError(self, message)


def _search_dirs() -> list[Path]:
    raw = os.environ.get(MACHINE_PATH_VAR, "")
    return [Path(part) for part in raw.split(os.pathsep) if part]


def _resolve(
    ref: str,
    kind: str,
    suffix: str,
    from_builtin: Callable[[str], object],
    from_file: Callable[[Path], object],
):
    if ref.startswith("@"):
        path = Path(ref[1:])
        if not path.is_file():
            raise ResolutionError(f"{kind} file not found: {path}")
        return from_file(path)
    try:
        return from_builtin(ref)
    except KeyError:
        pass
    for directory in _search_dirs():
        for candidate in (directory / ref, directory / f"{ref}{suffix}"):
            if candidate.is_file():
                return from_file(candidate)
    path = Path(ref)
    if path.is_file():
        return from_file(path)
    raise ResolutionError(
        f"cannot resolve {kind} {ref!r}: not a bundled preset, not found "
        f"via {MACHINE_PATH_VAR}, and not an existing file"
    )


def resolve_machine(ref: str) -> MachineDescriptor:
    return _resolve(ref, "machine", ".machine", builtin_machine, load_machine_file)


def resolve_kernel(ref: str) -> KernelDescriptor:
    return _resolve(ref, "kernel", ".kernel", builtin_kernel, load_kernel_file)


_SIZE_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([a-zA-Z]*)\s*$")
_SIZE_FACTORS = {
    "": 1,
    "b": 1,
    "k": 1024,
    "kib": 1024,
    "m": 1024**2,
    "mib": 1024**2,
    "g": 1024**3,
    "gib": 1024**3,
    "kb": 1000,
    "mb": 1000**2,
    "gb": 1000**3,
}


def parse_size(text: str) -> int:
    """Byte count from ``4096``, ``64KiB``, ``2.5M``, ``1GB`` and the like."""
    match = _SIZE_RE.match(text)
    if not match:
        raise ValueError(f"invalid size {text!r}")
    value, unit = match.groups()
    try:
        factor = _SIZE_FACTORS[unit.lower()]
    except KeyError:
        raise ValueError(
            f"invalid size unit {unit!r} in {text!r}; use KiB/MiB/GiB, "
            "kB/MB/GB, or plain bytes"
        ) from None
    size = int(float(value) * factor)
    if size < 1:
        raise ValueError(f"size must be at least one byte, got {text!r}")
    return size


def parse_thread_list(text: str) -> list[int]:
    """Thread counts from a comma-separated list like ``1,2,4``."""
    threads = []
    for part in text.split(","):
        part = part.strip()
        if not part.isdigit() or int(part) < 1:
            raise ValueError(
                f"invalid thread list {text!r}; use positive integers "
                "separated by commas"
            )
        threads.append(int(part))
    if not threads:
        raise ValueError("thread list must not be empty")
    return threads


def _fmt_trim(x: float) -> str:
    s = f"{x:.2f}".rstrip("0").rstrip(".")
    return s if s else "0"


def _fmt_levels(values: Sequence[float], fixed: bool = False) -> str:
    render = (lambda v: f"{v:.2f}") if fixed else _fmt_trim
    return "{" + " ⌉ ".join(render(v) for v in values) + "}"


def _table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip()]
    for row in rows:
        lines.append(
            "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
        )
    return "\n".join(lines) + "\n"


def _num(x: float) -> str:
    if isinstance(x, int):
        return str(x)
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return format(x, ".6g")


def _out_stream(args: argparse.Namespace):
    path = getattr(args, "output", None)
    if path and path != "-":
        return open(path, "w", encoding="utf-8", newline="")
    return nullcontext(sys.stdout)


def _add_common_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "-m",
        "--machine",
        required=True,
        help="machine preset name or descriptor file (prefix with @ to force a path)",
    )
    parser.add_argument(
        "-k",
        "--kernel",
        required=True,
        help="kernel preset name or descriptor file (prefix with @ to force a path)",
    )
    parser.add_argument(
        "--isa",
        choices=[isa.value for isa in IsaClass],
        default=IsaClass.VEC256.value,
        help="instruction-set class (default: vec256)",
    )


def _add_format_flags(parser: argparse.ArgumentParser, default: str = "table") -> None:
    parser.add_argument(
        "--format",
        choices=("table", "csv"),
        default=default,
        help=f"output format (default: {default})",
    )
    parser.add_argument(
        "-o",
        "--output",
        default=None,
        help="write output to this file instead of stdout",
    )


def _add_variant_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--lanes",
        type=int,
        default=None,
        help="accumulator lanes (default: the ISA lane width)",
    )
    parser.add_argument(
        "--unroll", type=int, default=1, help="unroll factor (default: 1)"
    )


# --- machines ----------------------------------------------------------------


def _configure_machines(parser: argparse.ArgumentParser) -> None:
    _add_format_flags(parser)


_MACHINE_COLUMNS = (
    "name",
    "clock_ghz",
    "cores",
    "cacheline_bytes",
    "l1_bytes",
    "l2_bytes",
    "llc_bytes",
    "cy_per_cl_l1l2",
    "cy_per_cl_l2l3",
    "bw_loadonly_gbs",
    "bw_peak_gbs",
    "penalty_cy_per_cl",
)


def _run_machines(args: argparse.Namespace) -> int:
    rows = [
        [_num(getattr(md, col)) if col != "name" else md.name for col in _MACHINE_COLUMNS]
        for md in builtin_machines()
    ]
    with _out_stream(args) as out:
        if args.format == "csv":
            out.write(",".join(_MACHINE_COLUMNS) + "\n")
            for row in rows:
                out.write(",".join(row) + "\n")
        else:
            out.write(_table(_MACHINE_COLUMNS, rows))
    return EXIT_OK


# --- kernels -------------------------------------------------------------------


def _configure_kernels(parser: argparse.ArgumentParser) -> None:
    _add_format_flags(parser)


_KERNEL_COLUMNS = (
    "name",
    "elem_bytes",
    "streams_loaded",
    "streams_stored",
    "loads_per_iter",
    "stores_per_iter",
    "adds_per_iter",
    "muls_per_iter",
    "fmas_per_iter",
    "updates_per_iter",
    "intensity_up_per_byte",
)


def _run_kernels(args: argparse.Namespace) -> int:
    rows = []
    for kd in builtin_kernels():
        row = [
            kd.name if col == "name"
            else _num(intensity(kd)) if col == "intensity_up_per_byte"
            else _num(getattr(kd, col))
            for col in _KERNEL_COLUMNS
        ]
        rows.append(row)
    with _out_stream(args) as out:
        if args.format == "csv":
            out.write(",".join(_KERNEL_COLUMNS) + "\n")
            for row in rows:
                out.write(",".join(row) + "\n")
        else:
            out.write(_table(_KERNEL_COLUMNS, rows))
    return EXIT_OK


# --- predict -------------------------------------------------------------------


def _configure_predict(parser: argparse.ArgumentParser) -> None:
    _add_common_model_flags(parser)
    _add_format_flags(parser)


def _run_predict(args: argparse.Namespace) -> int:
    md = resolve_machine(args.machine)
    kd = resolve_kernel(args.kernel)
    isa = IsaClass(args.isa)
    model, pred = model_kernel(kd, isa, md)
    with _out_stream(args) as out:
        if args.format == "csv":
            out.write(f"# machine = {md.name}\n")
            out.write(f"# kernel = {kd.name}\n")
            out.write(f"# isa = {isa.value}\n")
            out.write(f"# model = {format_shorthand(model)}\n")
            out.write(f"# n_sat_cores = {pred.n_sat}\n")
            out.write(f"# roofline_gups = {_num(pred.p_roofline)}\n")
            out.write("level,cy_per_wu,perf_gups\n")
            for level, cy, perf in zip(LEVELS, pred.cy, pred.perf):
                out.write(f"{level},{_num(cy)},{_num(perf)}\n")
        else:
            out.write(f"machine   = {md.name}\n")
            out.write(f"kernel    = {kd.name}\n")
            out.write(f"isa       = {isa.value}\n")
            out.write(f"model     = {format_shorthand(model)}\n")
            out.write(f"cycles    = {_fmt_levels(pred.cy)}\n")
            out.write(f"perf      = {_fmt_levels(pred.perf, fixed=True)} GUP/s\n")
            out.write(f"levels    = {' '.join(LEVELS)}\n")
            out.write(f"roofline  = {pred.p_roofline:.2f} GUP/s\n")
            out.write(f"n_sat     = {pred.n_sat} cores\n")
    return EXIT_OK


# --- bench ---------------------------------------------------------------------


def _configure_bench(parser: argparse.ArgumentParser) -> None:
    sub = parser.add_subparsers(
        dest="bench_command", metavar="{sweep,scaling}", parser_class=_Parser
    )
    sub.required = True

    sweep = sub.add_parser(
        "sweep",
        help="measure cycles/work-unit across working-set sizes",
    )
    _add_common_model_flags(sweep)
    _add_variant_flags(sweep)
    sweep.add_argument("--min-bytes", default="8KiB", help="smallest working set (default: 8KiB)")
    sweep.add_argument("--max-bytes", default="256MiB", help="largest working set (default: 256MiB)")
    sweep.add_argument("--points", type=int, default=12, help="sweep points (default: 12)")
    sweep.add_argument("--seed", type=int, default=0, help="input data seed (default: 0)")
    sweep.add_argument(
        "--min-time-ms",
        type=float,
        default=50.0,
        help="minimum total timed duration per size (default: 50)",
    )
    sweep.add_argument("--reps", type=int, default=5, help="timed repetitions (default: 5)")
    _add_format_flags(sweep, default="csv")
    sweep.set_defaults(_bench_run=_run_bench_sweep)

    scaling = sub.add_parser(
        "scaling",
        help="measure aggregate performance over thread counts",
    )
    _add_common_model_flags(scaling)
    _add_variant_flags(scaling)
    scaling.add_argument(
        "--threads",
        default="1",
        help="comma-separated thread counts, e.g. 1,2,4 (default: 1)",
    )
    scaling.add_argument(
        "--bytes-per-thread",
        default=None,
        help="per-thread working set (default: 4x LLC share per core)",
    )
    scaling.add_argument("--seed", type=int, default=0, help="input data seed (default: 0)")
    scaling.add_argument(
        "--min-time-ms",
        type=float,
        default=50.0,
        help="minimum timed duration per thread count (default: 50)",
    )
    _add_format_flags(scaling, default="csv")
    scaling.set_defaults(_bench_run=_run_bench_scaling)


def _run_bench(args: argparse.Namespace) -> int:
    return args._bench_run(args)


def _make_variant(args: argparse.Namespace, kd: KernelDescriptor) -> bench.Variant:
    return bench.make_variant(
        kd, IsaClass(args.isa), lanes=args.lanes, unroll=args.unroll
    )


def _run_bench_sweep(args: argparse.Namespace) -> int:
    md = resolve_machine(args.machine)
    kd = resolve_kernel(args.kernel)
    variant = _make_variant(args, kd)
    sizes = bench.sweep_sizes(
        parse_size(args.min_bytes),
        parse_size(args.max_bytes),
        args.points,
        kd,
        md.cacheline_bytes,
    )
    samples = [
        bench.measure(
            variant,
            n,
            md,
            min_time_ms=args.min_time_ms,
            reps=args.reps,
            seed=args.seed,
        )
        for n in sizes
    ]
    comments = bench.run_comment_lines(
        md, variant, seed=args.seed, min_time_ms=args.min_time_ms
    )
    with _out_stream(args) as out:
        if args.format == "csv":
            bench.write_sweep_csv(samples, out, comments)
        else:
            headers = ("n", "bytes", "level", "reps", "cy/wu median", "cy/wu min", "GUP/s")
            rows = [
                (
                    str(s.n),
                    str(s.bytes_total),
                    s.level,
                    str(s.reps),
                    _num(s.cy_per_wu_median),
                    _num(s.cy_per_wu_min),
                    _num(s.perf_gups),
                )
                for s in samples
            ]
            out.write(_table(headers, rows))
    return EXIT_OK


def _run_bench_scaling(args: argparse.Namespace) -> int:
    md = resolve_machine(args.machine)
    kd = resolve_kernel(args.kernel)
    variant = _make_variant(args, kd)
    threads_list = parse_thread_list(args.threads)
    bytes_per_thread = (
        parse_size(args.bytes_per_thread) if args.bytes_per_thread else None
    )
    samples = bench.thread_scaling(
        variant,
        threads_list,
        md,
        bytes_per_thread=bytes_per_thread,
        min_time_ms=args.min_time_ms,
        seed=args.seed,
    )
    comments = bench.run_comment_lines(
        md, variant, seed=args.seed, min_time_ms=args.min_time_ms
    )
    with _out_stream(args) as out:
        if args.format == "csv":
            bench.write_scaling_csv(samples, out, comments)
        else:
            headers = ("threads", "bytes/thread", "GUP/s", "pinned")
            rows = [
                (
                    str(s.threads),
                    str(s.bytes_per_thread),
                    _num(s.perf_gups),
                    "yes" if s.pinned else "no",
                )
                for s in samples
            ]
            out.write(_table(headers, rows))
    return EXIT_OK


# --- compare -------------------------------------------------------------------


def _configure_compare(parser: argparse.ArgumentParser) -> None:
    _add_common_model_flags(parser)
    _add_variant_flags(parser)
    parser.add_argument("--min-bytes", default="8KiB", help="smallest working set (default: 8KiB)")
    parser.add_argument("--max-bytes", default="256MiB", help="largest working set (default: 256MiB)")
    parser.add_argument("--points", type=int, default=12, help="sweep points (default: 12)")
    parser.add_argument("--seed", type=int, default=0, help="input data seed (default: 0)")
    parser.add_argument(
        "--min-time-ms",
        type=float,
        default=50.0,
        help="minimum total timed duration per size (default: 50)",
    )
    _add_format_flags(parser)


def _run_compare(args: argparse.Namespace) -> int:
    md = resolve_machine(args.machine)
    kd = resolve_kernel(args.kernel)
    variant = _make_variant(args, kd)
    _, pred = model_kernel(kd, IsaClass(args.isa), md)
    sizes = bench.sweep_sizes(
        parse_size(args.min_bytes),
        parse_size(args.max_bytes),
        args.points,
        kd,
        md.cacheline_bytes,
    )
    samples = [
        bench.measure(variant, n, md, min_time_ms=args.min_time_ms, seed=args.seed)
        for n in sizes
    ]
    rows = bench.compare(samples, pred)
    with _out_stream(args) as out:
        if args.format == "csv":
            out.write("level,predicted_cy,measured_cy,deviation_pct\n")
            for r in rows:
                out.write(
                    f"{r.level},{_num(r.predicted_cy)},{_num(r.measured_cy)},"
                    f"{_num(r.deviation_pct)}\n"
                )
        else:
            headers = ("level", "predicted cy/wu", "measured cy/wu", "deviation %")
            out.write(
                _table(
                    headers,
                    [
                        (
                            r.level,
                            _num(r.predicted_cy),
                            _num(r.measured_cy),
                            f"{r.deviation_pct:+.1f}",
                        )
                        for r in rows
                    ],
                )
            )
    return EXIT_OK


# --- accuracy ------------------------------------------------------------------


def _configure_accuracy(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "-k",
        "--kernel",
        required=True,
        help="dot kernel preset or file; its precision selects the input dtype",
    )
    parser.add_argument("--n", type=int, default=1024, help="elements (default: 1024)")
    parser.add_argument(
        "--condition",
        type=float,
        default=1e8,
        help="target condition number (default: 1e8)",
    )
    parser.add_argument("--seed", type=int, default=42, help="generator seed (default: 42)")
    _add_variant_flags(parser)
    _add_format_flags(parser)


def _run_accuracy(args: argparse.Namespace) -> int:
    kd = resolve_kernel(args.kernel)
    dtype = np.float32 if kd.elem_bytes == 4 else np.float64
    a, b = gen_ill_conditioned(args.n, args.condition, args.seed, dtype)
    reference = oracle_dot(a, b)
    condition = achieved_condition(a, b)
    unit = float(np.finfo(dtype).eps) / 2
    lanes = args.lanes if args.lanes is not None else 8 // (kd.elem_bytes // 4)
    config = VariantConfig(lanes=lanes, unroll=args.unroll)
    rows = []
    for impl_name, impl in (("naive", naive_dot), ("kahan", kahan_dot)):
        value = impl(a, b, config)
        rel = abs(value - reference) / abs(reference)
        rows.append((impl_name, value, rel / unit))
    with _out_stream(args) as out:
        if args.format == "csv":
            out.write(
                "impl,n,dtype,lanes,unroll,condition_requested,"
                "condition_achieved,result,reference,rel_err_ulps\n"
            )
            for impl_name, value, ulps in rows:
                out.write(
                    f"{impl_name},{args.n},{np.dtype(dtype).name},{config.lanes},"
                    f"{config.unroll},{_num(args.condition)},{_num(condition)},"
                    f"{value!r},{reference!r},{_num(ulps)}\n"
                )
        else:
            out.write(
                f"n = {args.n}  dtype = {np.dtype(dtype).name}  "
                f"lanes = {config.lanes}  unroll = {config.unroll}\n"
            )
            out.write(
                f"condition: requested {_num(args.condition)}, "
                f"achieved {_num(condition)}\n"
            )
            out.write(f"reference = {reference!r}\n")
            headers = ("impl", "result", "rel err [ulp]")
            out.write(
                _table(
                    headers,
                    [(name, repr(value), _num(ulps)) for name, value, ulps in rows],
                )
            )
    return EXIT_OK


# --- selftest ------------------------------------------------------------------


def _configure_selftest(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--list", action="store_true", help="list case names and exit"
    )
    parser.add_argument(
        "--machine-dir",
        default=None,
        help="read machine presets from this directory instead of the bundled ones",
    )
    _add_format_flags(parser)


def _run_selftest(args: argparse.Namespace) -> int:
    with _out_stream(args) as out:
        if args.list:
            for name in list_cases():
                out.write(name + "\n")
            return EXIT_OK
        results = run_selftest(machine_dir=args.machine_dir)
        failed = [r for r in results if not r.passed]
        if args.format == "csv":
            import csv as _csv

            writer = _csv.writer(out, lineterminator="\n")
            writer.writerow(("case", "passed", "detail"))
            for r in results:
                writer.writerow((r.name, "true" if r.passed else "false", r.detail))
        else:
            for r in results:
                status = "PASS" if r.passed else "FAIL"
                out.write(f"{status}  {r.name}  {r.detail}\n")
            out.write(
                f"{len(results) - len(failed)} passed, {len(failed)} failed\n"
            )
    return EXIT_SELFTEST if failed else EXIT_OK


# --- entry points ----------------------------------------------------------------


@dataclass(frozen=True)
class CommandSpec:
    """One subcommand: its name, help text, flag setup and implementation."""

    name: str
    help: str
    configure: Callable[[argparse.ArgumentParser], None]
    run: Callable[[argparse.Namespace], int]


COMMANDS: tuple[CommandSpec, ...] = (
    CommandSpec("machines", "list bundled machine presets", _configure_machines, _run_machines),
    CommandSpec("kernels", "list bundled kernel presets", _configure_kernels, _run_kernels),
    CommandSpec("predict", "model a kernel on a machine", _configure_predict, _run_predict),
    CommandSpec("bench", "run microbenchmarks", _configure_bench, _run_bench),
    CommandSpec("compare", "measured sweep vs. model prediction", _configure_compare, _run_compare),
    CommandSpec("accuracy", "rounding-error report for dot kernels", _configure_accuracy, _run_accuracy),
    CommandSpec("selftest", "run the golden model checks", _configure_selftest, _run_selftest),
)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="ecmdot",
        description="Analytic performance modeling and microbenchmarks "
        "for naive and compensated reduction kernels.",
    )
    sub = parser.add_subparsers(
        dest="command", metavar="COMMAND", parser_class=_Parser
    )
    sub.required = True
    for spec in COMMANDS:
        cmd = sub.add_parser(spec.name, help=spec.help)
        spec.configure(cmd)
        cmd.set_defaults(_run=spec.run)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run the CLI; returns the exit code instead of exiting."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        err.parser.print_usage(sys.stderr)
        print(f"{err.parser.prog}: error: {err}", file=sys.stderr)
        return EXIT_PARAMS
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args._run(args)
    except ResolutionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOLUTION
    except bench.MeasurementError as exc:
        print(f"measurement error: {exc}", file=sys.stderr)
        return EXIT_MEASUREMENT
    except (
        DescriptorError,
        EcmError,
        ShorthandError,
        KernelExpandError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAMS
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAMS


def entry() -> None:
    """Console-script entry point."""
    sys.exit(main())


if __name__ == "__main__":
    entry()
