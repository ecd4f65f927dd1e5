"""Tests for the runnable reduction kernels, oracle and input generator."""

from __future__ import annotations

import math
import statistics
from fractions import Fraction

import numpy as np
import pytest

from ecmdot.reduction import (
    CACHELINE_ALIGN,
    VariantConfig,
    achieved_condition,
    aligned_empty,
    gen_ill_conditioned,
    kahan_dot,
    kahan_sum,
    naive_dot,
    oracle_dot,
)

# odd groupings included: they exercise remainder handling and the
# unbalanced combine tree
CONFIGS = [
    VariantConfig(lanes, unroll)
    for lanes in (1, 3, 4, 8)
    for unroll in (1, 2, 4)
]

# the accuracy grid: groupings whose group count divides 32, matching
# the generator's exactness guarantee
ACC_CONFIGS = [
    VariantConfig(lanes, unroll)
    for lanes in (1, 4, 8)
    for unroll in (1, 2, 4)
]


def unit_roundoff(dtype) -> float:
    return float(np.finfo(dtype).eps) / 2


def rel_err_ulps(value: float, reference: float, dtype) -> float:
    return abs(value - reference) / abs(reference) / unit_roundoff(dtype)


# --- slow reference implementations mirroring the kernel semantics ----------


def ref_kahan_dot(a: np.ndarray, b: np.ndarray, groups: int) -> float:
    dt = a.dtype.type
    s = [dt(0)] * groups
    c = [dt(0)] * groups

    def feed(g, p):
        y = p - c[g]
        t = s[g] + y
        c[g] = (t - s[g]) - y
        s[g] = t

    n = a.shape[0]
    blocks = n // groups
    for k in range(blocks):
        for g in range(groups):
            i = k * groups + g
            feed(g, a[i] * b[i])
    for i in range(blocks * groups, n):
        feed(0, a[i] * b[i])
    acc = dt(0)
    comp = dt(0)
    for g in range(groups):
        v = s[g] - c[g]
        y = v - comp
        t = acc + y
        comp = (t - acc) - y
        acc = t
    return float(acc - comp)


def ref_naive_dot(a: np.ndarray, b: np.ndarray, groups: int) -> float:
    dt = a.dtype.type
    s = [dt(0)] * groups
    n = a.shape[0]
    blocks = n // groups
    for k in range(blocks):
        for g in range(groups):
            i = k * groups + g
            s[g] = s[g] + a[i] * b[i]
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
    return float(s[0])


# --- basic semantics ---------------------------------------------------------


class TestVariantConfig:
    def test_defaults(self):
        cfg = VariantConfig()
        assert (cfg.lanes, cfg.unroll, cfg.groups) == (1, 1, 1)

    def test_groups(self):
        assert VariantConfig(8, 4).groups == 32

    @pytest.mark.parametrize("bad", [0, -1, 1.5, True])
    def test_rejects_bad_values(self, bad):
        with pytest.raises(ValueError):
            VariantConfig(lanes=bad)


class TestAlignedEmpty:
    @pytest.mark.parametrize("n", [0, 1, 7, 1024])
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_alignment_and_shape(self, n, dtype):
        arr = aligned_empty(n, dtype)
        assert arr.shape == (n,)
        assert arr.dtype == np.dtype(dtype)
        assert arr.ctypes.data % CACHELINE_ALIGN == 0

    def test_cacheline_align_constant(self):
        assert CACHELINE_ALIGN == 64

    def test_negative_length(self):
        with pytest.raises(ValueError):
            aligned_empty(-1, np.float32)


class TestTrivialDots:
    @pytest.mark.parametrize("impl", [naive_dot, kahan_dot])
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_empty_is_zero(self, impl, dtype):
        z = np.array([], dtype=dtype)
        assert impl(z, z) == 0.0

    @pytest.mark.parametrize("impl", [naive_dot, kahan_dot])
    @pytest.mark.parametrize("cfg", CONFIGS)
    def test_ones(self, impl, cfg):
        ones = np.ones(4, dtype=np.float64)
        assert impl(ones, ones, cfg) == 4.0

    @pytest.mark.parametrize("impl", [naive_dot, kahan_dot])
    def test_length_mismatch(self, impl):
        with pytest.raises(ValueError):
            impl(np.ones(3, np.float64), np.ones(4, np.float64))

    @pytest.mark.parametrize("impl", [naive_dot, kahan_dot])
    def test_rejects_2d(self, impl):
        x = np.ones((2, 2), np.float64)
        with pytest.raises(ValueError):
            impl(x, x)

    def test_integer_input_coerced(self):
        a = np.arange(5)
        assert naive_dot(a, a) == float(np.dot(a, a))

    def test_python_sequences_accepted(self):
        assert kahan_dot([1.0, 2.0], [3.0, 4.0]) == 11.0


class TestGroupingSemantics:
    """The compiled kernels agree bitwise with a slow reference."""

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    @pytest.mark.parametrize("cfg", CONFIGS)
    @pytest.mark.parametrize("n", [1, 2, 31, 32, 33, 100])
    def test_kahan_matches_reference(self, dtype, cfg, n):
        rng = np.random.default_rng(hash((n, cfg.groups)) % 2**32)
        a = rng.uniform(-2, 2, n).astype(dtype)
        b = rng.uniform(-2, 2, n).astype(dtype)
        assert kahan_dot(a, b, cfg) == ref_kahan_dot(a, b, cfg.groups)

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    @pytest.mark.parametrize("cfg", CONFIGS)
    @pytest.mark.parametrize("n", [1, 2, 31, 32, 33, 100])
    def test_naive_matches_reference(self, dtype, cfg, n):
        rng = np.random.default_rng(hash((n, cfg.groups, 1)) % 2**32)
        a = rng.uniform(-2, 2, n).astype(dtype)
        b = rng.uniform(-2, 2, n).astype(dtype)
        assert naive_dot(a, b, cfg) == ref_naive_dot(a, b, cfg.groups)

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(-1, 1, 4096).astype(np.float32)
        b = rng.uniform(-1, 1, 4096).astype(np.float32)
        cfg = VariantConfig(8, 2)
        first = (kahan_dot(a, b, cfg), naive_dot(a, b, cfg))
        for _ in range(3):
            assert (kahan_dot(a, b, cfg), naive_dot(a, b, cfg)) == first


class TestCancellationCanaries:
    """Fixed inputs that detect loss of the compensation arithmetic.

    With correct compensated arithmetic the ten-element case below is
    exact; if compilation ever rewrites the Kahan update (for example
    under value-unsafe fast-math optimization), the compensation term
    folds away and the result collapses to the naive one, failing here.
    """

    def test_three_element_cancellation(self):
        a = np.array([1e8, 1.0, -1e8], dtype=np.float32)
        b = np.ones(3, dtype=np.float32)
        # 1.0 is absorbed into 1e8 before the cancellation: both kernels
        # lose it, matching IEEE single-precision exactly.
        assert naive_dot(a, b) == 0.0
        assert kahan_dot(a, b) == 0.0
        assert oracle_dot(a, b) == 1.0

    def test_ten_element_protection(self):
        a = np.array([1e8] + [1.0] * 8 + [-1e8], dtype=np.float32)
        b = np.ones(10, dtype=np.float32)
        assert oracle_dot(a, b) == 8.0
        assert kahan_dot(a, b) == 8.0  # compensation carries the eight 1.0s
        assert naive_dot(a, b) == 0.0  # plain summation drops them

    def test_kahan_sum_protection(self):
        x = np.array([1e8] + [1.0] * 8 + [-1e8], dtype=np.float32)
        assert kahan_sum(x) == 8.0


class TestOracle:
    def test_two_ones(self):
        one = np.ones(1, dtype=np.float32)
        assert oracle_dot(one, one) == 1.0
        two = np.ones(2, dtype=np.float64)
        assert oracle_dot(two, two) == 2.0

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_permutation_invariant(self, dtype):
        rng = np.random.default_rng(5)
        a = rng.uniform(-1, 1, 500).astype(dtype)
        b = rng.uniform(-1, 1, 500).astype(dtype)
        perm = rng.permutation(500)
        assert oracle_dot(a, b) == oracle_dot(a[perm], b[perm])

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_matches_exact_rational_arithmetic(self, dtype):
        rng = np.random.default_rng(11)
        a = rng.uniform(-3, 3, 200).astype(dtype)
        b = rng.uniform(-3, 3, 200).astype(dtype)
        exact = sum(
            (Fraction(float(x)) * Fraction(float(y)) for x, y in zip(a, b)),
            Fraction(0),
        )
        got = oracle_dot(a, b)
        # the oracle returns the correctly rounded double of the exact sum
        assert got == pytest.approx(float(exact), rel=1e-15)
        assert abs(Fraction(got) - exact) <= Fraction(abs(float(exact))) * Fraction(
            2**-52
        )

    def test_dp_products_beyond_double_rounding(self):
        # products whose low bits a plain double product would discard
        a = np.full(4, 1.0 + 2**-30, dtype=np.float64)
        b = np.full(4, 1.0 - 2**-30, dtype=np.float64)
        exact = 4 * (Fraction(1) + Fraction(2) ** -30) * (Fraction(1) - Fraction(2) ** -30)
        assert Fraction(oracle_dot(a, b)) == pytest.approx(
            float(exact), rel=1e-16, abs=0
        ) or abs(Fraction(oracle_dot(a, b)) - exact) <= abs(exact) * Fraction(2**-52)


class TestAchievedCondition:
    def test_benign(self):
        x = np.ones(8, dtype=np.float64)
        assert achieved_condition(x, x) == 1.0

    def test_cancellation_raises_condition(self):
        a = np.array([1e8, 1.0, -1e8], dtype=np.float32)
        b = np.ones(3, dtype=np.float32)
        assert achieved_condition(a, b) == pytest.approx(2e8 + 1)

    def test_zero_sum_is_infinite(self):
        a = np.array([1.0, -1.0])
        b = np.array([1.0, 1.0])
        assert achieved_condition(a, b) == math.inf


class TestGenerator:
    def test_deterministic(self):
        a1, b1 = gen_ill_conditioned(1024, 1e8, 42)
        a2, b2 = gen_ill_conditioned(1024, 1e8, 42)
        assert np.array_equal(a1, a2) and np.array_equal(b1, b2)
        assert a1.dtype == np.float32

    def test_different_seeds_differ(self):
        a1, _ = gen_ill_conditioned(1024, 1e8, 0)
        a2, _ = gen_ill_conditioned(1024, 1e8, 1)
        assert not np.array_equal(a1, a2)

    def test_benign_condition(self):
        a, b = gen_ill_conditioned(1024, 1.0, 7)
        assert achieved_condition(a, b) <= 10.0

    def test_golden_sp_1e8(self):
        a, b = gen_ill_conditioned(1024, 1e8, 42)
        assert 1e7 <= achieved_condition(a, b) <= 1e9

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    @pytest.mark.parametrize("condition", [1e2, 1e4, 1e6])
    def test_within_factor_ten(self, dtype, condition):
        a, b = gen_ill_conditioned(1024, condition, 3, dtype)
        assert condition / 10 <= achieved_condition(a, b) <= condition * 10

    def test_sp_capacity_limit(self):
        with pytest.raises(ValueError, match="achievab"):
            gen_ill_conditioned(1024, 1e10, 0, np.float32)

    def test_dp_reaches_1e10(self):
        a, b = gen_ill_conditioned(1024, 1e10, 0, np.float64)
        assert 1e9 <= achieved_condition(a, b) <= 1e11

    def test_small_n_rejected(self):
        with pytest.raises(ValueError, match="at least 4"):
            gen_ill_conditioned(3, 1e2, 0)

    def test_tiny_n_capacity(self):
        # four elements can host a benign input but not a staged one
        a, b = gen_ill_conditioned(4, 1.0, 0)
        assert achieved_condition(a, b) <= 10.0
        with pytest.raises(ValueError):
            gen_ill_conditioned(4, 1e2, 0)

    def test_alignment_and_finiteness(self):
        for cond in (1.0, 1e6):
            a, b = gen_ill_conditioned(512, cond, 9)
            assert a.ctypes.data % CACHELINE_ALIGN == 0
            assert b.ctypes.data % CACHELINE_ALIGN == 0
            assert np.isfinite(a).all() and np.isfinite(b).all()

    def test_condition_below_one_rejected(self):
        with pytest.raises(ValueError):
            gen_ill_conditioned(1024, 0.5, 0)


# --- accuracy invariants on a generated corpus -------------------------------


@pytest.fixture(scope="module")
def corpus():
    """(dtype, condition, a, b, reference) for a spread of conditions."""
    entries = []
    for dtype, conditions in (
        (np.float32, (1e2, 1e4, 1e6, 1e8)),
        (np.float64, (1e2, 1e6, 1e10)),
    ):
        for condition in conditions:
            for seed in (0, 1, 2):
                a, b = gen_ill_conditioned(1024, condition, seed, dtype)
                entries.append((dtype, condition, a, b, oracle_dot(a, b)))
    return entries


class TestAccuracyInvariants:
    def test_kahan_never_worse_than_naive(self, corpus):
        for dtype, _, a, b, ref in corpus:
            ulp = float(np.spacing(np.asarray(abs(ref), dtype=dtype)))
            k_err = abs(kahan_dot(a, b) - ref)
            n_err = abs(naive_dot(a, b) - ref)
            assert k_err <= n_err + 4 * ulp

    def test_kahan_grouping_insensitive(self, corpus):
        for dtype, _, a, b, ref in corpus:
            u = unit_roundoff(dtype)
            values = [kahan_dot(a, b, cfg) for cfg in ACC_CONFIGS]
            spread = (max(values) - min(values)) / abs(ref)
            assert spread <= 8 * u

    def test_kahan_small_on_ill_conditioned(self, corpus):
        for dtype, _, a, b, ref in corpus:
            for cfg in ACC_CONFIGS:
                assert rel_err_ulps(kahan_dot(a, b, cfg), ref, dtype) <= 4.0

    def test_naive_unroll_does_not_hurt(self, corpus):
        base, unrolled = [], []
        for dtype, _, a, b, ref in corpus:
            base.append(rel_err_ulps(naive_dot(a, b, VariantConfig(8, 1)), ref, dtype))
            unrolled.append(
                rel_err_ulps(naive_dot(a, b, VariantConfig(8, 4)), ref, dtype)
            )
        assert statistics.median(unrolled) <= statistics.median(base)

    def test_naive_large_error_on_sp_1e8(self):
        u = unit_roundoff(np.float32)
        for seed in range(3):
            a, b = gen_ill_conditioned(1024, 1e8, seed, np.float32)
            ref = oracle_dot(a, b)
            rel = abs(naive_dot(a, b) - ref) / abs(ref)
            assert rel > 100 * u

    def test_kahan_exact_on_integer_data(self):
        rng = np.random.default_rng(13)
        for dtype, bound in ((np.float64, 1000), (np.float32, 100)):
            a = rng.integers(-bound, bound, 4096).astype(dtype)
            b = rng.integers(-bound, bound, 4096).astype(dtype)
            exact = sum(int(x) * int(y) for x, y in zip(a.astype(int), b.astype(int)))
            assert kahan_dot(a, b, VariantConfig()) == exact


class TestKahanSum:
    def test_empty(self):
        assert kahan_sum(np.array([], dtype=np.float32)) == 0.0

    def test_simple(self):
        assert kahan_sum(np.array([1.0, 2.0, 3.0])) == 6.0

    @pytest.mark.parametrize("cfg", CONFIGS)
    def test_grouping(self, cfg):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, 1000).astype(np.float32)
        ref = math.fsum(x.astype(np.float64).tolist())
        ulp = float(np.spacing(np.float32(abs(ref))))
        assert abs(kahan_sum(x, cfg) - ref) <= 4 * ulp

    def test_hundred_million_small_terms(self):
        # one unit plus 1e8 copies of the nearest float32 to 1e-8
        v = np.float32(1e-8)
        x = np.empty(10**8 + 1, dtype=np.float32)
        x[0] = 1.0
        x[1:] = v
        got = kahan_sum(x)
        exact = Fraction(1) + 10**8 * Fraction(float(v))
        ulp = Fraction(float(np.spacing(np.float32(2.0))))
        assert abs(Fraction(float(got)) - exact) <= 4 * ulp
        # the compensated sum lands on 2.0; plain accumulation would stall
        # near 1.0 because 1e-8 is below half an ulp of 1.0
        assert got == 2.0

    def test_permutation_stable(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-1, 1, 100000).astype(np.float32)
        ref = math.fsum(x.astype(np.float64).tolist())
        ulp = float(np.spacing(np.float32(abs(ref))))
        assert abs(kahan_sum(x) - ref) <= 4 * ulp
        assert abs(kahan_sum(rng.permutation(x)) - ref) <= 4 * ulp
