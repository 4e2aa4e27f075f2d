from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pacq import halffloat as hf
from oracles import half_value, nearest_half

finite = st.integers(0, 0xFFFF).filter(lambda h: (h >> 10) & 0x1F != 31)


def np_bits(x) -> int:
    return int(np.float16(x).view(np.uint16))


def test_encode_examples():
    assert hf.fp16_encode(1.0) == 0x3C00
    assert hf.fmt(hf.fp16_encode(1024)) == "0|11001|0000000000"
    assert hf.fmt(hf.fp16_encode(1039)) == "0|11001|0000001111"
    assert hf.fp16_encode(1039) == 0x640F


def test_from_int_examples():
    assert hf.fmt(hf.fp16_from_int(1032)) == "0|11001|0000001000"
    assert hf.fp16_from_int(0) == 0
    assert hf.fmt(hf.fp16_from_int(2047)) == "0|11001|1111111111"
    with pytest.raises(ValueError):
        hf.fp16_from_int(2049)


def test_mul_examples():
    one, v = hf.fp16_encode(1.0), hf.fp16_encode(1039)
    assert hf.fp16_mul(one, v) == 0x640F
    assert hf.fp16_mul(hf.fp16_encode(-3.0), hf.POS_ZERO) == hf.NEG_ZERO
    assert hf.fp16_mul(hf.fp16_encode(1.5), hf.fp16_encode(1034)) == hf.fp16_encode(1551)
    assert hf.to_float(hf.fp16_encode(1551)) == 1551.0


def test_add_examples():
    flags = hf.ArithFlags()
    s = hf.fp16_add(hf.fp16_from_int(1033), hf.fp16_from_int(1034), flags)
    assert hf.to_float(s) == 2068.0
    assert flags.inexact == 1
    x = hf.fp16_encode(3.25)
    assert hf.fp16_add(x, hf.POS_ZERO) == x
    assert hf.fp16_add(hf.fp16_encode(5.0), hf.fp16_encode(-5.0)) == hf.POS_ZERO
    assert hf.fp16_add(hf.NEG_ZERO, hf.NEG_ZERO) == hf.NEG_ZERO


def test_roundtrip_exhaustive():
    for h in hf.finite_patterns():
        assert hf.fp16_encode(hf.to_float(h)) == h, hex(h)
        if h != hf.NEG_ZERO:  # a Fraction has no signed zero
            assert hf.fp16_encode(hf.fp16_decode(h)) == h, hex(h)


def test_decode_matches_numpy_exhaustive():
    for h in hf.finite_patterns():
        assert hf.fp16_decode(h) == half_value(h)


def test_normalized_formula():
    for h in (0x3C00, 0x640F, 0x0400, 0x7BFF, 0xC123):
        s, e, m = hf.sign_of(h), hf.exponent_of(h), hf.mantissa_of(h)
        assert 1 <= e <= 30
        assert hf.fp16_decode(h) == (-1) ** s * Fraction(2) ** (e - 15) * (1 + Fraction(m, 1024))


def test_overflow_encode():
    flags = hf.ArithFlags()
    assert hf.fp16_encode(70000.0, flags) == hf.POS_INF
    assert flags.overflow == 1
    assert hf.fp16_encode(65519) == 0x7BFF
    assert hf.fp16_encode(65520) == hf.POS_INF
    with pytest.raises(hf.Fp16OverflowError):
        hf.fp16_encode(-1e6, strict=True)


def test_special_values():
    flags = hf.ArithFlags()
    assert hf.is_nan(hf.fp16_mul(hf.POS_INF, hf.POS_ZERO, flags))
    assert flags.invalid == 1
    assert hf.fp16_mul(hf.NEG_INF, hf.fp16_encode(2.0)) == hf.NEG_INF
    assert hf.is_nan(hf.fp16_add(hf.POS_INF, hf.NEG_INF))
    assert hf.is_nan(hf.fp16_add(hf.QNAN, hf.POS_ZERO))
    f2 = hf.ArithFlags()
    assert hf.fp16_mul(0x7BFF, 0x4000, f2) == hf.POS_INF
    assert f2.overflow == 1


def test_subnormal_results():
    flags = hf.ArithFlags()
    tiny = hf.fp16_mul(hf.MIN_NORMAL, hf.fp16_encode(0.5), flags)
    assert tiny == 0x0200
    assert flags.underflow == 0
    # 2**-14 * 2**-11 is half the smallest subnormal: tie to even -> 0
    assert hf.fp16_mul(hf.MIN_NORMAL, hf.fp16_encode(2.0 ** -11), flags) == 0
    assert flags.underflow == 1


def test_random_corpus_against_numpy():
    rng = np.random.default_rng(1234)
    n = 1_000_000
    a = rng.integers(0, 1 << 16, n, dtype=np.uint32).astype(np.uint16)
    b = rng.integers(0, 1 << 16, n, dtype=np.uint32).astype(np.uint16)
    keep = ((a >> 10) & 0x1F != 31) & ((b >> 10) & 0x1F != 31)
    a, b = a[keep], b[keep]
    with np.errstate(over="ignore"):
        want_mul = (a.view(np.float16).astype(np.float64) * b.view(np.float16).astype(np.float64)
                    ).astype(np.float16).view(np.uint16)
        want_add = (a.view(np.float16).astype(np.float64) + b.view(np.float16).astype(np.float64)
                    ).astype(np.float16).view(np.uint16)
    mul, add = hf.fp16_mul, hf.fp16_add
    got_mul = np.fromiter((mul(int(x), int(y)) for x, y in zip(a, b)), np.uint16, len(a))
    assert np.array_equal(got_mul, want_mul)
    got_add = np.fromiter((add(int(x), int(y)) for x, y in zip(a[:200_000], b[:200_000])),
                          np.uint16, 200_000)
    # numpy gives -0 + +0 = +0 and x + -x = +0 under RNE, same rule as ours
    assert np.array_equal(got_add, want_add[:200_000])


def test_directed_edges_against_fraction_oracle():
    edges = [0x3BFF, 0x3C01, 0x0400, 0x07FF, 0x7BFF, 0x3E00, 0x0001, 0x03FF, 0x5BFF, 0x4400]
    for a in edges:
        for b in edges:
            for sa in (0, 0x8000):
                x, y = a | sa, b
                assert hf.fp16_mul(x, y) == nearest_half(half_value(x) * half_value(y))
                assert hf.fp16_add(x, y) == nearest_half(half_value(x) + half_value(y)) or (
                    half_value(x) + half_value(y) == 0)


@given(finite, finite)
def test_mul_commutes(a, b):
    assert hf.fp16_mul(a, b) == hf.fp16_mul(b, a)


@given(st.integers(-45, 45), st.integers(-45, 45))
def test_exact_integer_closure(p, q):
    if abs(p * q) > 2048:
        return
    r = hf.fp16_mul(hf.fp16_from_int(p), hf.fp16_from_int(q))
    assert hf.fp16_decode(r) == p * q


@given(st.fractions(min_value=-70000, max_value=70000, max_denominator=1 << 30))
def test_encode_matches_oracle(x):
    assert hf.fp16_encode(x) == nearest_half(x)


def test_encode_float_matches_numpy():
    rng = np.random.default_rng(7)
    xs = np.concatenate([rng.normal(0, 100, 20000), rng.normal(0, 1e-5, 20000)])
    for x in xs:
        assert hf.fp16_encode(float(x)) == np_bits(x)


def test_ulp():
    assert hf.ulp(hf.fp16_from_int(1032)) == 1
    assert hf.ulp(hf.fp16_encode(2068)) == 2
    assert hf.ulp(0) == Fraction(1, 1 << 24)


def test_pattern_counts():
    assert sum(1 for _ in hf.finite_patterns()) == 63488
    assert len(hf.normal_or_zero_patterns()) == 61442
