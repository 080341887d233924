"""Canonical hexadecimal spelling of binary64 values.

``float.hex`` always prints thirteen fraction digits and writes
subnormals with a leading ``0``.  Here the fraction is trimmed to its
shortest exact form and subnormals are renormalized, so equal bits
always give the same, byte-diffable text::

    >>> float_hex(1.0), float_hex(-0.0), float_hex(5e-324)
    ('0x1p+0', '-0x0p+0', '0x1p-1074')
"""
from __future__ import annotations

import math
import struct

__all__ = ["float_hex", "parse_hex"]


def float_hex(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "-inf" if x < 0 else "inf"
    bits = struct.unpack("<Q", struct.pack("<d", x))[0]
    sign = "-" if bits >> 63 else ""
    biased = (bits >> 52) & 0x7FF
    frac = bits & ((1 << 52) - 1)
    if biased == 0 and frac == 0:
        return f"{sign}0x0p+0"
    if biased == 0:
        # shift the leading one of a subnormal into the implicit position
        lead = frac.bit_length() - 1
        exp = lead - 1074
        frac = (frac << (52 - lead)) & ((1 << 52) - 1)
    else:
        exp = biased - 1023
    digits = f"{frac:013x}".rstrip("0")
    body = f"1.{digits}" if digits else "1"
    return f"{sign}0x{body}p{exp:+d}"


def parse_hex(text: str) -> float:
    return float.fromhex(text)
