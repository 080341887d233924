"""Error-free transformations and an explicit fused multiply-add.

Everything reproducible in this package is built from three primitives:

* ``twosum(a, b)`` returns ``(r, s)`` with ``r = fl(a + b)`` and
  ``a + b = r + s`` exactly;
* ``twoprod(a, b)`` returns ``(r, s)`` with ``r = fl(a * b)`` and
  ``a * b = r + s`` exactly (barring underflow of ``s``);
* ``fma_op(a, b, c)`` returns ``a * b + c`` with a single rounding.

The jitted versions (``twosum_jit`` and friends) are what the numba
kernels in the rest of the package call.  The fma is lowered straight to
``llvm.fma.f64``, which is either the hardware instruction or the libm
correctly-rounded fallback, never a separate multiply and add.

A self-test runs at import time and raises ``FloatingPointSetupError``
if the arithmetic does not behave as required (contracted statements,
non-fused fma, or a rounding mode other than nearest-even).
"""
from __future__ import annotations

from fractions import Fraction
from typing import NamedTuple

from llvmlite import ir
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic

__all__ = [
    "EftPair",
    "FloatingPointSetupError",
    "fma_op",
    "soft_fma",
    "twoprod",
    "twosum",
    "self_test",
]


class FloatingPointSetupError(RuntimeError):
    """The host arithmetic cannot support the reproducible code paths."""


class EftPair(NamedTuple):
    result: float
    error: float


@intrinsic
def _llvm_fma(typingctx, a, b, c):
    if not all(isinstance(t, types.Float) for t in (a, b, c)):
        return None
    sig = types.float64(types.float64, types.float64, types.float64)

    def codegen(context, builder, signature, args):
        d = ir.DoubleType()
        args = [context.cast(builder, v, t, types.float64)
                for v, t in zip(args, signature.args)]
        fn = cgutils.get_or_insert_function(
            builder.module, ir.FunctionType(d, [d, d, d]), "llvm.fma.f64")
        return builder.call(fn, args)

    return sig, codegen


@njit(cache=True, inline="always")
def fma_jit(a, b, c):
    return _llvm_fma(a, b, c)


@njit(cache=True, inline="always")
def twosum_jit(a, b):
    r = a + b
    z = r - a
    s = (a - (r - z)) + (b - z)
    return r, s


@njit(cache=True, inline="always")
def twoprod_jit(a, b):
    r = a * b
    s = _llvm_fma(a, b, -r)
    return r, s


@njit(cache=True)
def _fma_entry(a, b, c):
    return _llvm_fma(a, b, c)


@njit(cache=True)
def _twosum_entry(a, b):
    return twosum_jit(a, b)


@njit(cache=True)
def _twoprod_entry(a, b):
    return twoprod_jit(a, b)


@njit(cache=True)
def _mul_add_unfused(a, b, c):
    return a * b + c


def twosum(a: float, b: float) -> EftPair:
    """Knuth's branch-free two-sum.

    >>> twosum(1.0, 2.0**-60)
    EftPair(result=1.0, error=8.673617379884035e-19)
    """
    r, s = _twosum_entry(float(a), float(b))
    return EftPair(r, s)


def twoprod(a: float, b: float) -> EftPair:
    """Product and its exact rounding error, the error taken by fma."""
    r, s = _twoprod_entry(float(a), float(b))
    return EftPair(r, s)


def fma_op(a: float, b: float, c: float) -> float:
    """``a * b + c`` rounded once to nearest-even."""
    return _fma_entry(float(a), float(b), float(c))


def soft_fma(a: float, b: float, c: float) -> float:
    """Software fma on exact rationals.

    Finite inputs only.  Used to validate the hardware path at import time
    and available as a drop-in where numba is not.
    """
    exact = Fraction(a) * Fraction(b) + Fraction(c)
    if exact == 0:
        # IEEE sign of an exact zero: -0 only when both addends are -0.
        return (a * b) + c if (a * b == 0 and c == 0) else 0.0
    return float(exact)


def self_test() -> None:
    """Check contraction, fma fusion and round-to-nearest-even.

    Raises
    ------
    FloatingPointSetupError
        On the first property that does not hold.
    """
    tiny = 2.0 ** -60
    if twosum(1.0, tiny).error != tiny:
        raise FloatingPointSetupError(
            "twosum lost its error term; the statement sequence was re-associated")
    x = 1.0 + 2.0 ** -52
    if _mul_add_unfused(x, x, -(1.0 + 2.0 ** -51)) != 0.0:
        raise FloatingPointSetupError("a*b+c was contracted into an fma")
    if fma_op(x, x, -(1.0 + 2.0 ** -51)) != 2.0 ** -104:
        raise FloatingPointSetupError("fma is not fused")
    probes = [(x, x, -(1.0 + 2.0 ** -51)), (3.0, 1.0 / 3.0, -1.0),
              (0.1, 10.0, -1.0), (2.0 ** 500, 2.0 ** 500, -(2.0 ** 1000))]
    for a, b, c in probes:
        if fma_op(a, b, c) != soft_fma(a, b, c):
            raise FloatingPointSetupError(f"fma({a!r}, {b!r}, {c!r}) is not correctly rounded")
    # ties-to-even in both directions, and nearest rather than directed
    ulp = 2.0 ** -52
    if not (1.0 + ulp / 2 == 1.0 and 1.0 + 3 * ulp / 2 == 1.0 + 2 * ulp
            and -1.0 - ulp / 2 == -1.0 and 1.0 + 0.75 * ulp == 1.0 + ulp):
        raise FloatingPointSetupError("rounding mode is not round-to-nearest-even")


self_test()
