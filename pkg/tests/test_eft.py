import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exact import to_binary64
from reprobicg.eft import EftPair, fma_op, self_test, soft_fma, twoprod, twosum

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
# products and their error terms stay normal and finite
moderate = st.floats(min_value=-1e150, max_value=1e150, allow_nan=False).filter(
    lambda v: v == 0.0 or abs(v) > 1e-140)


def F(x):
    return Fraction(x)


def test_twosum_examples():
    assert twosum(1.0, 2.0 ** -60) == EftPair(1.0, 2.0 ** -60)
    assert twosum(3.5, 0.0) == EftPair(3.5, 0.0)
    a, b = 1.0 + 2.0 ** -52, 2.0 ** -53
    r, s = twosum(a, b)
    assert F(r) + F(s) == F(a) + F(b)
    assert r == a + b


def test_twoprod_examples():
    x = 1.0 + 2.0 ** -52
    assert twoprod(x, x) == EftPair(1.0 + 2.0 ** -51, 2.0 ** -104)
    assert twoprod(7.25, 1.0) == EftPair(7.25, 0.0)
    third = 1.0 / 3.0
    r, s = twoprod(3.0, third)
    assert r == 3.0 * third
    assert F(r) + F(s) == 3 * F(third)
    # 3 * fl(1/3) = 1 - 2**-54 exactly
    assert s == -(2.0 ** -54)


def test_fma_examples():
    x = 1.0 + 2.0 ** -52
    assert fma_op(1.0, 1.0, 1.0) == 2.0
    assert fma_op(2.0 ** -53, 2.0 ** -53, 1.0) == 1.0
    assert fma_op(x, x, -(1.0 + 2.0 ** -51)) == 2.0 ** -104


def test_self_test_passes():
    self_test()


@given(finite, finite)
def test_twosum_exact(a, b):
    r, s = twosum(a, b)
    if math.isinf(r):
        return
    assert r == a + b
    assert F(r) + F(s) == F(a) + F(b)


@given(finite, finite)
def test_twosum_commutes_in_value(a, b):
    r1, s1 = twosum(a, b)
    r2, s2 = twosum(b, a)
    if math.isinf(r1):
        return
    assert F(r1) + F(s1) == F(r2) + F(s2)


@given(moderate, moderate)
def test_twoprod_exact(a, b):
    r, s = twoprod(a, b)
    assert r == a * b
    assert F(r) + F(s) == F(a) * F(b)


@settings(max_examples=500)
@given(finite, finite, finite)
def test_fma_is_correctly_rounded(a, b, c):
    exact = F(a) * F(b) + F(c)
    ref = to_binary64(exact)
    got = fma_op(a, b, c)
    if exact == 0:
        assert got == 0.0
    else:
        assert got == ref


@given(moderate, moderate, moderate)
def test_soft_fma_agrees(a, b, c):
    assert soft_fma(a, b, c) == fma_op(a, b, c)


def test_soft_fma_zero_sign():
    assert math.copysign(1.0, soft_fma(-0.0, 1.0, -0.0)) == -1.0
    assert math.copysign(1.0, soft_fma(1.0, 1.0, -1.0)) == 1.0


@pytest.mark.parametrize("x", [0.1, 1e300, 5e-324, -2.5])
def test_twosum_identity(x):
    assert twosum(x, 0.0) == EftPair(x, 0.0)
