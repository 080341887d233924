import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from reprobicg.hexfloat import float_hex, parse_hex


@pytest.mark.parametrize("x, text", [
    (1.0, "0x1p+0"),
    (-0.0, "-0x0p+0"),
    (0.0, "0x0p+0"),
    (5e-324, "0x1p-1074"),
    (0.5, "0x1p-1"),
    (-3.0, "-0x1.8p+1"),
    (2.2250738585072014e-308, "0x1p-1022"),
    (1.7976931348623157e308, "0x1.fffffffffffffp+1023"),
    (math.inf, "inf"),
    (-math.inf, "-inf"),
])
def test_canonical_spelling(x, text):
    assert float_hex(x) == text


def test_subnormal_renormalized():
    # 3 * 2**-1074 = 0x1.8p-1073
    assert float_hex(3 * 5e-324) == "0x1.8p-1073"


def test_matches_c_style_on_normals():
    x = float.fromhex("0x1.3566ea57eaf3fp+2")
    assert float_hex(x) == "0x1.3566ea57eaf3fp+2"


@given(st.floats(allow_nan=False, width=64))
def test_round_trip(x):
    y = parse_hex(float_hex(x))
    assert y == x and math.copysign(1.0, y) == math.copysign(1.0, x)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_lowercase_and_trimmed(x):
    text = float_hex(x)
    assert text == text.lower()
    mant = text.split("p")[0]
    assert not ("." in mant and mant.endswith("0"))
