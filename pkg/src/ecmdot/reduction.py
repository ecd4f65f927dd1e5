"""Runnable reduction kernels, a high-precision oracle, and input generators.

The kernels mirror what the analytic model describes: dot products (and
a plain sum) over contiguous arrays, computed either naively or with
Kahan compensation, using ``lanes * unroll`` independent accumulator
groups exactly like a vectorized, unrolled loop would. Element ``i``
feeds accumulator group ``i mod groups``, i.e. groups take turns over
consecutive blocks of ``groups`` elements; any remainder when ``groups``
does not divide the length goes to group 0. Naive partial sums are
combined pairwise; Kahan groups are folded (``sum - compensation``) and
then combined with one final scalar Kahan pass.

The hot loops are compiled with numba (``nogil`` so thread-scaling
measurements can run them concurrently). Fast-math is deliberately left
off: value-changing reassociation would silently delete the
compensation arithmetic.

:func:`oracle_dot` evaluates the same dot product essentially exactly —
exact products plus :func:`math.fsum`'s correctly rounded summation — so
measured rounding errors can be trusted down to the last ulp.

:func:`gen_ill_conditioned` constructs inputs whose condition number
``sum(|a_i * b_i|) / |sum(a_i * b_i)|`` hits a requested target while
every intermediate of the compensated kernels stays exactly
representable; see the function docstring for the construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

__all__ = [
    "VariantConfig",
    "naive_dot",
    "kahan_dot",
    "kahan_sum",
    "oracle_dot",
    "gen_ill_conditioned",
    "achieved_condition",
    "aligned_empty",
    "CACHELINE_ALIGN",
]

#: Alignment (bytes) used for all arrays this module allocates.
CACHELINE_ALIGN = 64


@dataclass(frozen=True)
class VariantConfig:
    """Accumulator layout of a kernel variant.

    ``lanes`` models SIMD width (independent accumulators side by side
    in a register) and ``unroll`` models unroll-and-jam (independent
    registers); the kernels only see their product, the number of
    independent accumulator groups.
    """

    lanes: int = 1
    unroll: int = 1

    def __post_init__(self) -> None:
        for name in ("lanes", "unroll"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    @property
    def groups(self) -> int:
        return self.lanes * self.unroll


def aligned_empty(n: int, dtype: np.dtype, alignment: int = CACHELINE_ALIGN) -> np.ndarray:
    """Uninitialized 1-D array whose data pointer is ``alignment``-aligned."""
    if n < 0:
        raise ValueError(f"array length must be non-negative, got {n}")
    dt = np.dtype(dtype)
    # carve a non-empty aligned view first: slicing *it* to length n keeps
    # the aligned data pointer even for n == 0, whereas an empty slice of
    # the raw buffer snaps back to the buffer's own (unaligned) pointer
    buf = np.empty(max(n, 1) * dt.itemsize + alignment, dtype=np.uint8)
    offset = (-buf.ctypes.data) % alignment
    arr = buf[offset : offset + max(n, 1) * dt.itemsize].view(dt)[:n]
    assert arr.ctypes.data % alignment == 0
    return arr


def _aligned_copy(values: np.ndarray) -> np.ndarray:
    out = aligned_empty(values.shape[0], values.dtype)
    out[:] = values
    return out


@numba.njit(cache=True, nogil=True)
def _kahan_dot_impl(a, b, groups):  # pragma: no cover - compiled
    n = a.shape[0]
    s = np.zeros(groups, a.dtype)
    c = np.zeros(groups, a.dtype)
    blocks = n // groups
    for k in range(blocks):
        base = k * groups
        for g in range(groups):
            p = a[base + g] * b[base + g]
            y = p - c[g]
            t = s[g] + y
            c[g] = (t - s[g]) - y
            s[g] = t
    for i in range(blocks * groups, n):
        p = a[i] * b[i]
        y = p - c[0]
        t = s[0] + y
        c[0] = (t - s[0]) - y
        s[0] = t
    acc = np.zeros(2, a.dtype)
    for g in range(groups):
        v = s[g] - c[g]
        y = v - acc[1]
        t = acc[0] + y
        acc[1] = (t - acc[0]) - y
        acc[0] = t
    return acc[0] - acc[1]


@numba.njit(cache=True, nogil=True)
def _kahan_sum_impl(x, groups):  # pragma: no cover - compiled
    n = x.shape[0]
    s = np.zeros(groups, x.dtype)
    c = np.zeros(groups, x.dtype)
    blocks = n // groups
    for k in range(blocks):
        base = k * groups
        for g in range(groups):
            y = x[base + g] - c[g]
            t = s[g] + y
            c[g] = (t - s[g]) - y
            s[g] = t
    for i in range(blocks * groups, n):
        y = x[i] - c[0]
        t = s[0] + y
        c[0] = (t - s[0]) - y
        s[0] = t
    acc = np.zeros(2, x.dtype)
    for g in range(groups):
        v = s[g] - c[g]
        y = v - acc[1]
        t = acc[0] + y
        acc[1] = (t - acc[0]) - y
        acc[0] = t
    return acc[0] - acc[1]


@numba.njit(cache=True, nogil=True)
def _naive_dot_impl(a, b, groups):  # pragma: no cover - compiled
    n = a.shape[0]
    s = np.zeros(groups, a.dtype)
    blocks = n // groups
    for k in range(blocks):
        base = k * groups
        for g in range(groups):
            s[g] = s[g] + a[base + g] * b[base + g]
    for i in range(blocks * groups, n):
        s[0] = s[0] + a[i] * b[i]
    m = groups
    while m > 1:
        half = m // 2
        for j in range(half):
            s[j] = s[2 * j] + s[2 * j + 1]
        if m % 2 == 1:
            s[half] = s[m - 1]
            m = half + 1
        else:
            m = half
    return s[0]


_REAL_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def _validate_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    if a.dtype not in _REAL_DTYPES:
        a = a.astype(np.float64)
    if b.dtype not in _REAL_DTYPES:
        b = b.astype(np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("inputs must be one-dimensional arrays")
    if a.shape[0] != b.shape[0]:
        raise ValueError(
            f"input lengths differ: {a.shape[0]} vs {b.shape[0]}"
        )
    if a.dtype != b.dtype:
        raise ValueError(f"input dtypes differ: {a.dtype} vs {b.dtype}")
    return a, b


def _validate_one(x) -> np.ndarray:
    x = np.ascontiguousarray(x)
    if x.dtype not in _REAL_DTYPES:
        x = x.astype(np.float64)
    if x.ndim != 1:
        raise ValueError("input must be a one-dimensional array")
    return x


def naive_dot(a, b, config: VariantConfig = VariantConfig()) -> float:
    """Dot product with plain accumulation into ``config.groups`` partials."""
    a, b = _validate_pair(a, b)
    return float(_naive_dot_impl(a, b, config.groups))


def kahan_dot(a, b, config: VariantConfig = VariantConfig()) -> float:
    """Dot product with Kahan-compensated accumulator groups."""
    a, b = _validate_pair(a, b)
    return float(_kahan_dot_impl(a, b, config.groups))


def kahan_sum(x, config: VariantConfig = VariantConfig()) -> float:
    """Sum with Kahan-compensated accumulator groups."""
    x = _validate_one(x)
    return float(_kahan_sum_impl(x, config.groups))


_SPLIT = 134217729.0  # 2**27 + 1, Veltkamp splitting constant for doubles


def _two_prod(x: float, y: float) -> tuple[float, float]:
    """Exact product ``x * y = p + e`` of two doubles (Dekker/Veltkamp)."""
    p = x * y
    cx = _SPLIT * x
    hx = cx - (cx - x)
    lx = x - hx
    cy = _SPLIT * y
    hy = cy - (cy - y)
    ly = y - hy
    e = ((hx * hy - p) + hx * ly + lx * hy) + lx * ly
    return p, e


def oracle_dot(a, b) -> float:
    """Reference dot product, exact up to one final correct rounding.

    Single-precision inputs are promoted to double, where each product
    is exact, and summed with :func:`math.fsum` (exactly rounded).
    Double-precision products are split into exact ``hi + lo`` pairs
    first, so the fsum again sees an error-free term list. In both cases
    the accumulation carries at least twice the significand bits of the
    working precision — nothing is lost before the single final
    rounding. Intermediate magnitudes must stay below about ``1e280`` to
    avoid overflow in the splitting.
    """
    a, b = _validate_pair(a, b)
    if a.dtype == np.dtype(np.float32):
        prods = a.astype(np.float64) * b.astype(np.float64)
        return math.fsum(prods.tolist())
    terms: list[float] = []
    for x, y in zip(a.tolist(), b.tolist()):
        p, e = _two_prod(x, y)
        terms.append(p)
        terms.append(e)
    return math.fsum(terms)


def achieved_condition(a, b) -> float:
    """Condition number ``sum|a_i b_i| / |sum a_i b_i|`` of a dot input."""
    a, b = _validate_pair(a, b)
    prods = a.astype(np.float64) * b.astype(np.float64)
    numerator = math.fsum(np.abs(prods).tolist())
    denominator = abs(oracle_dot(a, b))
    if denominator == 0:
        return math.inf
    return numerator / denominator


# --- ill-conditioned input construction -------------------------------------
#
# The generator stages everything in integer units on an 8-grid around a
# large base magnitude B0 = 2**(p+2) (p = significand bits), where the
# unit in the last place is exactly 8. The element sequence is a series
# of self-contained "excursions", each confined to one accumulator class
# (= index mod 32) and a run of consecutive rows of a rows x 32 layout:
#
#   perch:  +B        (B = B0 + 8j, exactly representable)
#   ties:   a few values in +-{1,2,3} whose sum is +-8 (one grid step);
#           each is smaller than half an ulp of the standing B
#   close:  -(B - R)  returning the accumulator to a small multiple of 8
#
# While an excursion's big value stands, all other classes hold small
# multiples of 8, and only that excursion's own ties arrive in its
# class. Every Kahan update is then exact integer arithmetic for any
# group count dividing 32: adds of multiples of 8 onto B are exact (both
# on B's 8-ulp grid), each tie y = tie - c is captured exactly by the
# compensation term, and the close lands back on the 8-grid. The exact
# result is the sum of the residues R plus the tie mass (+-8).
#
# A naive accumulator instead rounds every tie away (|tie| < ulp(B)/2)
# and loses the entire tie mass, so its relative error is ~8/result.
# The condition number is sum(2B) / result and is dialed in by choosing
# the residues R. Products are realized as a_i = v / b_i with
# b_i = +-2^k, k in [-2, 2], which keeps every product exact.

_CLASSES = 32
_MIN_ROWS = 7  # one tie-bearing excursion (<= 6 rows) plus one carrier

_TIE_PATTERNS = (
    (3, 3, 2),
    (2, 2, 2, 2),
    (3, 2, 2, 1),
    (3, 3, 1, 1),
    (2, 3, 3),
    (1, 3, 3, 1),
    (2, 2, 3, 1),
    (3, 1, 3, 1),
)


def _normalize_dtype(dtype) -> np.dtype:
    dt = np.dtype(dtype)
    if dt not in _REAL_DTYPES:
        raise ValueError(
            f"dtype must be float32 or float64, got {dt}"
        )
    return dt


def gen_ill_conditioned(
    n: int,
    condition: float,
    seed: int,
    dtype=np.float32,
) -> tuple[np.ndarray, np.ndarray]:
    """Dot-product input ``(a, b)`` with a chosen condition number.

    The achieved condition ``sum|a_i b_i| / |sum a_i b_i|`` lands within
    a factor of 10 of ``condition`` (usually much closer); requests
    beyond what ``n`` elements of the given precision can express raise
    :class:`ValueError`. Conditions up to 10 are served by benign
    positive random inputs. The same ``(n, condition, seed, dtype)``
    always returns bitwise-identical arrays, and both arrays are
    cache-line aligned.

    Inputs are built so that the compensated kernels of this module
    (any accumulator grouping that divides 32) commit no rounding error
    at all, while plain summation loses a fixed chunk of the result;
    the construction is explained in the module source.
    """
    dt = _normalize_dtype(dtype)
    if n < 4:
        raise ValueError(f"n must be at least 4, got {n}")
    if not math.isfinite(condition) or condition < 1:
        raise ValueError(
            f"condition must be a finite number >= 1, got {condition!r}"
        )
    rng = np.random.default_rng(seed)
    if condition <= 10:
        a = rng.uniform(1.0, 2.0, n).astype(dt)
        b = rng.uniform(1.0, 2.0, n).astype(dt)
        return _aligned_copy(a), _aligned_copy(b)

    p = 24 if dt == np.dtype(np.float32) else 53
    classes = _CLASSES
    while classes > 1 and n // classes < _MIN_ROWS:
        classes //= 2
    rows = n // classes
    if rows < _MIN_ROWS:
        raise ValueError(
            f"n={n} is too small to stage an ill-conditioned input; "
            f"need at least {_MIN_ROWS} elements"
        )

    base = 1 << (p + 2)  # ulp(base) == 8 exactly
    pattern = _TIE_PATTERNS[rng.integers(0, len(_TIE_PATTERNS))]
    flip = bool(rng.integers(0, 2))
    ties = [-t for t in pattern] if flip else list(pattern)
    tie_rows = 2 + len(ties)
    n_exc = 1 + (rows - tie_rows) // 2
    bigs = [base + 8 * int(rng.integers(0, 1 << (p - 4))) for _ in range(n_exc)]

    tie_mass = -8 if flip else 8
    weight = sum(2 * b for b in bigs) + sum(abs(t) for t in ties)
    if condition / 10 > weight / 8:
        raise ValueError(
            f"condition {condition:g} is out of reach for n={n} in "
            f"{dt.name}: at most about {weight / 8:.3g} is achievable "
            "(the absolute-value mass of the cancelling elements divided "
            "by the smallest nonzero result)"
        )
    result = 8 * max(1, round(weight / condition / 8))
    if result - tie_mass < 0:
        result = 8
    residue_total = result - tie_mass
    assert residue_total >= 0 and residue_total % 8 == 0

    cap = base >> 1  # keep each close element well inside one binade
    residues = [0] * n_exc
    remaining = residue_total
    while remaining > 0:
        open_slots = [j for j in range(n_exc) if residues[j] <= cap - 8]
        if not open_slots:
            raise ValueError(
                f"condition {condition:g} is too benign for this "
                f"construction with n={n}; use a value <= 10 for "
                "well-conditioned input"
            )
        j = open_slots[int(rng.integers(0, len(open_slots)))]
        room = min(remaining, cap - residues[j])
        amount = 8 * int(rng.integers(1, room // 8 + 1))
        residues[j] += amount
        remaining -= amount

    grid = [[0] * classes for _ in range(rows)]
    row = 0
    for j in range(n_exc):
        col = int(rng.integers(0, classes))
        span = tie_rows if j == 0 else 2
        grid[row][col] = bigs[j]
        if j == 0:
            for k, t in enumerate(ties):
                grid[row + 1 + k][col] = t
        grid[row + span - 1][col] = -(bigs[j] - residues[j])
        row += span

    flat = [grid[r][c] for r in range(rows) for c in range(classes)]
    flat += [0] * (n - len(flat))
    truth = sum(flat)
    mass = sum(abs(v) for v in flat)
    assert truth == result
    achieved = mass / truth
    if not (condition / 10 <= achieved <= condition * 10):
        raise ValueError(
            f"construction landed at condition {achieved:.3g}, more than "
            f"10x away from the requested {condition:g}"
        )

    staged = np.array(flat, dtype=np.float64)
    exponents = rng.integers(-2, 3, size=n).astype(np.float64)
    signs = np.where(rng.integers(0, 2, size=n) == 0, -1.0, 1.0)
    b64 = signs * np.exp2(exponents)
    a64 = staged / b64
    a = _aligned_copy(a64.astype(dt))
    b = _aligned_copy(b64.astype(dt))
    products = a.astype(np.float64) * b.astype(np.float64)
    if not np.array_equal(products, staged):
        raise AssertionError(
            "internal error: product splitting was not exact"
        )
    return a, b
