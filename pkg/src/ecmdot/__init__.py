"""Analytic performance modeling and microbenchmarks for reduction kernels.

The package has three layers:

* descriptors — immutable machine (:mod:`ecmdot.machine`) and kernel
  (:mod:`ecmdot.kernelmodel`) descriptions with a small text format and
  bundled presets,
* the analytic model (:mod:`ecmdot.ecm`) — per-cache-level cycle and
  performance predictions, multi-core scaling, and the brace shorthand
  notation,
* execution — compiled reduction kernels with controlled rounding
  behavior (:mod:`ecmdot.reduction`), a measurement harness
  (:mod:`ecmdot.bench`), golden self-tests (:mod:`ecmdot.selftest`),
  and the ``ecmdot`` command line (:mod:`ecmdot.cli`).
"""

from .bench import (
    ComparisonRow,
    MeasurementError,
    ScalingSample,
    SweepSample,
    TimerResolutionError,
    Variant,
    classify_level,
    compare,
    make_variant,
    measure,
    sweep_sizes,
    thread_scaling,
    write_scaling_csv,
    write_sweep_csv,
)
from .descfile import (
    DescriptorError,
    DescriptorInvariantError,
    DescriptorParseError,
)
from .ecm import (
    LEVELS,
    EcmError,
    EcmModel,
    EcmPrediction,
    ShorthandError,
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
from .kernelmodel import (
    KernelDescriptor,
    KernelExpandError,
    WorkUnitCounts,
    builtin_kernel,
    builtin_kernels,
    expand,
    format_kernel,
    intensity,
    load_kernel,
    load_kernel_file,
)
from .machine import (
    IsaClass,
    MachineDescriptor,
    PortThroughput,
    builtin_machine,
    builtin_machines,
    format_machine,
    load_machine,
    load_machine_file,
    t_l3mem_per_cl,
)
from .reduction import (
    VariantConfig,
    achieved_condition,
    aligned_empty,
    gen_ill_conditioned,
    kahan_dot,
    kahan_sum,
    naive_dot,
    oracle_dot,
)
from .selftest import CaseResult, list_cases, run_selftest

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # descriptors
    "DescriptorError",
    "DescriptorParseError",
    "DescriptorInvariantError",
    "IsaClass",
    "PortThroughput",
    "MachineDescriptor",
    "load_machine",
    "load_machine_file",
    "format_machine",
    "builtin_machines",
    "builtin_machine",
    "t_l3mem_per_cl",
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
    # analytic model
    "LEVELS",
    "EcmError",
    "ShorthandError",
    "EcmModel",
    "EcmPrediction",
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
    # execution
    "VariantConfig",
    "naive_dot",
    "kahan_dot",
    "kahan_sum",
    "oracle_dot",
    "gen_ill_conditioned",
    "achieved_condition",
    "aligned_empty",
    "MeasurementError",
    "TimerResolutionError",
    "Variant",
    "make_variant",
    "SweepSample",
    "ScalingSample",
    "ComparisonRow",
    "classify_level",
    "sweep_sizes",
    "measure",
    "thread_scaling",
    "compare",
    "write_sweep_csv",
    "write_scaling_csv",
    "CaseResult",
    "list_cases",
    "run_selftest",
]
