"""Floating-point expansions and the exact long accumulator.

Two accumulation substrates live here:

``Fpe``
    A fixed number of binary64 limbs whose unevaluated sum is the value
    accumulated so far.  Insertion is a twosum cascade with early exit;
    if a nonzero residue falls off the last limb the expansion is marked
    ``overflowed`` and its value is no longer exact.

``SuperAcc``
    A fixed-point register of 64-bit signed digits, each carrying
    ``DIGIT_BITS`` payload bits plus ``CARRY_BITS`` of carry headroom,
    wide enough to hold any sum of binary64 values *and* of exact
    binary64 products.  Accumulation never loses information.

``superacc_round`` is the package's exact oracle.  ``fpe_round_nearsum``
rounds an expansion correctly using only twosum and sign tests, so the
two rounding routes are independent of each other.
"""
from __future__ import annotations

import math
import struct
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .eft import fma_jit, twosum_jit

__all__ = [
    "CARRY_BITS",
    "DIGIT_BITS",
    "NDIGITS",
    "OFFSET",
    "SAFE_ADDS",
    "Fpe",
    "FpeOverflowError",
    "SuperAcc",
    "exact_dot",
    "exact_round",
    "fpe_accumulate",
    "fpe_accumulate_product",
    "fpe_flush_to_superacc",
    "fpe_merge",
    "fpe_round_nearsum",
    "superacc_accumulate",
    "superacc_add",
    "superacc_round",
]

DIGIT_BITS = 52
CARRY_BITS = 64 - DIGIT_BITS
# contributions of magnitude < 2**52 a digit can absorb before it may overflow int64
SAFE_ADDS = 1 << (CARRY_BITS - 1)
# weight of digit 0 is 2**-OFFSET; products of subnormals reach 2**-2148
OFFSET = 42 * DIGIT_BITS
# top digit reaches 2**(52*84 - 2184) = 2**2184, above any sum of 2**64 products
NDIGITS = 84
DEFAULT_FPE_SIZE = 8

_TWO53 = 9007199254740992.0
# below this the twoprod error term may be subnormal and inexact
TWOPROD_SAFE_MIN = 2.0 ** -968


class FpeOverflowError(ValueError):
    """An overflowed expansion was asked for a correctly-rounded value."""


# --------------------------------------------------------------------------
# jitted kernels

@njit(cache=True, inline="always")
def fpe_insert_jit(limbs, x):
    """Cascade ``x`` into ``limbs``; return the residue that did not fit."""
    for i in range(limbs.shape[0]):
        r, x = twosum_jit(limbs[i], x)
        limbs[i] = r
        if x == 0.0:
            return 0.0
    return x


@njit(cache=True, inline="always")
def _decompose(x):
    # |x| = mant * 2**lsb with mant < 2**53 and lsb >= -1074
    m, e = math.frexp(abs(x))
    mant = np.int64(m * _TWO53)
    lsb = e - 53
    if lsb < -1074:
        mant >>= -1074 - lsb
        lsb = -1074
    return mant, lsb


@njit(cache=True)
def sa_normalize_jit(digits, meta):
    carry = np.int64(0)
    last = digits.shape[0] - 1
    for i in range(last):
        d = digits[i] + carry
        carry = d >> DIGIT_BITS
        digits[i] = d - carry * (np.int64(1) << DIGIT_BITS)
    digits[last] += carry
    meta[0] = 1


@njit(cache=True, inline="always")
def _sa_add_int(digits, mant, lsb, negative):
    # mant: nonnegative int64 below 2**62, placed with its lsb at 2**lsb
    pos = lsb + OFFSET
    i = pos // DIGIT_BITS
    sh = pos - i * DIGIT_BITS
    while mant != 0:
        width = DIGIT_BITS - sh
        chunk = (mant & ((np.int64(1) << width) - 1)) << sh
        if negative:
            digits[i] -= chunk
        else:
            digits[i] += chunk
        mant >>= width
        sh = 0
        i += 1


@njit(cache=True, inline="always")
def _sa_reserve(digits, meta, cost):
    if meta[0] + cost > SAFE_ADDS:
        sa_normalize_jit(digits, meta)
    meta[0] += cost


@njit(cache=True)
def sa_add_double_jit(digits, meta, x):
    if x == 0.0:
        return
    _sa_reserve(digits, meta, 1)
    mant, lsb = _decompose(x)
    _sa_add_int(digits, mant, lsb, x < 0.0)


@njit(cache=True)
def sa_add_product_jit(digits, meta, a, b):
    if a == 0.0 or b == 0.0:
        return
    _sa_reserve(digits, meta, 3)
    ma, ea = _decompose(a)
    mb, eb = _decompose(b)
    neg = (a < 0.0) != (b < 0.0)
    ah = ma >> 27
    al = ma & ((np.int64(1) << 27) - 1)
    bh = mb >> 27
    bl = mb & ((np.int64(1) << 27) - 1)
    e = ea + eb
    _sa_add_int(digits, al * bl, e, neg)
    _sa_add_int(digits, ah * bl + al * bh, e + 27, neg)
    _sa_add_int(digits, ah * bh, e + 54, neg)


@njit(cache=True)
def sa_add_array_jit(digits, meta, xs):
    for k in range(xs.shape[0]):
        sa_add_double_jit(digits, meta, xs[k])


@njit(cache=True)
def sa_merge_jit(digits, meta, other, other_meta):
    if meta[0] + other_meta[0] > SAFE_ADDS:
        sa_normalize_jit(digits, meta)
        if meta[0] + other_meta[0] > SAFE_ADDS:
            sa_normalize_jit(other, other_meta)
    for i in range(digits.shape[0]):
        digits[i] += other[i]
    meta[0] += other_meta[0]


@njit(cache=True)
def fpe_accumulate_array_jit(limbs, xs):
    """Insert every ``xs[k]``; return True if any residue was lost."""
    lost = False
    for k in range(xs.shape[0]):
        if fpe_insert_jit(limbs, xs[k]) != 0.0:
            lost = True
    return lost


@njit(cache=True, inline="always")
def product_is_safe(a, b, r):
    # twoprod is exact when the product neither overflows nor leaves its
    # error term in the subnormal range
    return abs(r) >= TWOPROD_SAFE_MIN and abs(r) <= 1.7976931348623157e308


@njit(cache=True)
def fpe_dot_jit(x, y, hi, lo):
    """Two-FPE dot product; returns True if exactness was lost."""
    lost = False
    for i in range(x.shape[0]):
        a = x[i]
        b = y[i]
        if a == 0.0 or b == 0.0:
            continue
        r = a * b
        if not product_is_safe(a, b, r):
            lost = True
            continue
        s = fma_jit(a, b, -r)
        if fpe_insert_jit(hi, r) != 0.0:
            lost = True
        if s != 0.0 and fpe_insert_jit(lo, s) != 0.0:
            lost = True
    return lost


@njit(cache=True)
def exblas_dot_jit(x, y, hi, lo, digits, meta):
    """Hybrid dot: FPE fast path, exact residues and unsafe products to digits."""
    for i in range(x.shape[0]):
        a = x[i]
        b = y[i]
        if a == 0.0 or b == 0.0:
            continue
        r = a * b
        if not product_is_safe(a, b, r):
            sa_add_product_jit(digits, meta, a, b)
            continue
        s = fma_jit(a, b, -r)
        res = fpe_insert_jit(hi, r)
        if res != 0.0:
            sa_add_double_jit(digits, meta, res)
        if s != 0.0:
            res = fpe_insert_jit(lo, s)
            if res != 0.0:
                sa_add_double_jit(digits, meta, res)


@njit(cache=True)
def exact_dot_jit(x, y, digits, meta):
    for i in range(x.shape[0]):
        sa_add_product_jit(digits, meta, x[i], y[i])


# --------------------------------------------------------------------------
# floating-point expansions

class Fpe:
    """Fixed-size floating-point expansion with an overflow flag.

    Parameters
    ----------
    size : int
        Number of binary64 limbs (default 8).
    """

    __slots__ = ("limbs", "overflowed")

    def __init__(self, size: int = DEFAULT_FPE_SIZE):
        if size < 1:
            raise ValueError("an expansion needs at least one limb")
        self.limbs = np.zeros(size, dtype=np.float64)
        self.overflowed = False

    @classmethod
    def from_values(cls, values: Iterable[float], size: int = DEFAULT_FPE_SIZE) -> Fpe:
        acc = cls(size)
        for v in values:
            fpe_accumulate(acc, v)
        return acc

    @property
    def size(self) -> int:
        return self.limbs.shape[0]

    def copy(self) -> Fpe:
        other = Fpe.__new__(Fpe)
        other.limbs = self.limbs.copy()
        other.overflowed = self.overflowed
        return other

    def exact_value(self) -> Fraction:
        """Exact sum of the limbs (meaningful only while not overflowed)."""
        return sum((Fraction(v) for v in self.limbs), Fraction(0))

    def renormalized(self) -> list[float]:
        """Nonoverlapping components of the limbs, largest first."""
        return list(reversed(_expansion(self.limbs)))

    def __repr__(self):
        flag = ", overflowed" if self.overflowed else ""
        return f"Fpe({[float(v) for v in self.limbs]}{flag})"


def fpe_accumulate(acc: Fpe, x: float) -> Fpe:
    """Insert ``x`` into ``acc`` in place and return it."""
    if fpe_insert_jit(acc.limbs, float(x)) != 0.0:
        acc.overflowed = True
    return acc


def fpe_accumulate_array(acc: Fpe, xs: np.ndarray) -> Fpe:
    if fpe_accumulate_array_jit(acc.limbs, np.ascontiguousarray(xs, dtype=np.float64)):
        acc.overflowed = True
    return acc


def fpe_accumulate_product(acc_hi: Fpe, acc_lo: Fpe, a: float, b: float) -> tuple[Fpe, Fpe]:
    """Accumulate ``a*b`` as its rounded product into ``acc_hi`` and its error into ``acc_lo``."""
    x = np.array([a], dtype=np.float64)
    y = np.array([b], dtype=np.float64)
    if fpe_dot_jit(x, y, acc_hi.limbs, acc_lo.limbs):
        acc_hi.overflowed = acc_lo.overflowed = True
    return acc_hi, acc_lo


def fpe_merge(a: Fpe, b: Fpe) -> Fpe:
    """Fold every limb of ``b`` into ``a`` (in place); flags are OR-ed."""
    if fpe_accumulate_array_jit(a.limbs, b.limbs):
        a.overflowed = True
    a.overflowed = a.overflowed or b.overflowed
    return a


def fpe_round_nearsum(*accs: Fpe) -> float:
    """Correctly rounded (nearest-even) sum of all limbs of ``accs``.

    Several expansions may be passed; their exact values are summed before
    the single rounding, which is how the product and error expansions of
    a dot product are merged.

    Raises
    ------
    FpeOverflowError
        If any expansion has lost information.
    """
    if any(acc.overflowed for acc in accs):
        raise FpeOverflowError("expansion overflowed; round through a SuperAcc instead")
    values: list[float] = []
    for acc in accs:
        values.extend(float(v) for v in acc.limbs if v != 0.0)
    return exact_round(values)


# Pure-Python exact rounding.  Python float arithmetic is binary64 with
# round-to-nearest-even and no contraction, which is all twosum requires.

def _two_sum(a: float, b: float) -> tuple[float, float]:
    r = a + b
    z = r - a
    return r, (a - (r - z)) + (b - z)


def _grow(e: list[float], b: float) -> list[float]:
    # Shewchuk's grow-expansion with zero elimination; e is nonoverlapping
    # in increasing magnitude and so is the result.
    out = []
    q = b
    for c in e:
        q, h = _two_sum(q, c)
        if h != 0.0:
            out.append(h)
    if q != 0.0:
        out.append(q)
    return out


def _expansion(values: Iterable[float]) -> list[float]:
    e: list[float] = []
    for v in values:
        v = float(v)
        if v != 0.0:
            e = _grow(e, v)
    return e


def _sign_minus(e: list[float], *subtrahends: float) -> int:
    # sign of (sum(e) - sum(subtrahends)); the largest component of a
    # nonoverlapping expansion carries the sign of its sum
    for s in subtrahends:
        if s != 0.0:
            e = _grow(e, -s)
    if not e:
        return 0
    return 1 if e[-1] > 0.0 else -1


def _is_even(x: float) -> bool:
    return struct.unpack("<q", struct.pack("<d", x))[0] & 1 == 0


_MAX = 1.7976931348623157e308
_HALF_ULP_MAX = 2.0 ** 970


def exact_round(values: Sequence[float]) -> float:
    """Round the exact sum of finite binary64 ``values`` to nearest-even."""
    if any(not math.isfinite(v) for v in values):
        return sum(values, 0.0)
    e = _expansion(values)
    if not all(math.isfinite(c) for c in e):
        # a partial sum left the binary64 range; the register has room
        return superacc_round(SuperAcc().accumulate_array(values))
    if not e:
        return 0.0
    approx = 0.0
    for c in e:
        approx += c
    if math.isinf(approx):
        approx = math.copysign(_MAX, approx)
    s = _sign_minus(e, approx)
    if s == 0:
        return approx
    # walk away from the estimate until a neighbour pair brackets the sum
    step = math.inf if s > 0 else -math.inf
    near = approx
    while True:
        far = math.nextafter(near, step)
        if math.isinf(far):
            break
        t = _sign_minus(e, far)
        if t == 0:
            return far
        if t != s:
            break
        near = far
    half = math.copysign(_HALF_ULP_MAX, s) if math.isinf(far) else (far - near) * 0.5
    c = _sign_minus(e, near, half) * s
    if c < 0:
        return near
    if c > 0:
        return far
    # past the largest finite value a tie goes to infinity, as IEEE requires;
    # _MAX has an odd significand so the parity test covers that case too
    return near if _is_even(near) else far


# --------------------------------------------------------------------------
# long accumulator

class SuperAcc:
    """Exact fixed-point accumulator.

    The represented value is ``sum(digits[i] * 2**(DIGIT_BITS*i - OFFSET))``.
    ``pending`` bounds how many sub-``2**52`` contributions any digit has
    absorbed since the last normalization; it is kept in a one-element
    array so the jitted kernels can update it.
    """

    __slots__ = ("digits", "meta")

    def __init__(self):
        self.digits = np.zeros(NDIGITS, dtype=np.int64)
        self.meta = np.zeros(1, dtype=np.int64)

    @property
    def pending(self) -> int:
        return int(self.meta[0])

    def copy(self) -> SuperAcc:
        other = SuperAcc.__new__(SuperAcc)
        other.digits = self.digits.copy()
        other.meta = self.meta.copy()
        return other

    def normalize(self) -> SuperAcc:
        sa_normalize_jit(self.digits, self.meta)
        return self

    def accumulate(self, x: float) -> SuperAcc:
        sa_add_double_jit(self.digits, self.meta, float(x))
        return self

    def accumulate_array(self, xs) -> SuperAcc:
        sa_add_array_jit(self.digits, self.meta, np.ascontiguousarray(xs, dtype=np.float64))
        return self

    def accumulate_product(self, a: float, b: float) -> SuperAcc:
        """Add the exact product ``a*b``, with no intermediate rounding."""
        sa_add_product_jit(self.digits, self.meta, float(a), float(b))
        return self

    def to_int(self) -> int:
        """Signed integer ``V`` with value ``V * 2**-OFFSET``."""
        v = 0
        for d in reversed(self.digits.tolist()):
            v = (v << DIGIT_BITS) + d
        return v

    def exact_value(self) -> Fraction:
        return Fraction(self.to_int(), 1 << OFFSET)

    def is_zero(self) -> bool:
        return not self.digits.any()

    def __eq__(self, other):
        if not isinstance(other, SuperAcc):
            return NotImplemented
        a = self.copy().normalize()
        b = other.copy().normalize()
        return bool(np.array_equal(a.digits, b.digits))

    __hash__ = None

    def dump(self) -> str:
        """Normalized digits in hex, most significant first, zeros elided."""
        norm = self.copy().normalize()
        parts = [f"[{i}]={int(d) & ((1 << 64) - 1):016x}"
                 for i, d in reversed(list(enumerate(norm.digits.tolist()))) if d]
        return " ".join(parts) if parts else "0"

    def __repr__(self):
        return f"SuperAcc({self.dump()})"


def superacc_accumulate(acc: SuperAcc, x: float) -> SuperAcc:
    return acc.accumulate(x)


def superacc_add(a: SuperAcc, b: SuperAcc) -> SuperAcc:
    """Digit-wise add ``b`` into ``a`` (in place), normalizing first if the
    combined headroom would be exhausted."""
    sa_merge_jit(a.digits, a.meta, b.digits, b.meta)
    return a


def superacc_round(acc: SuperAcc) -> float:
    """Correctly rounded (nearest-even) binary64 of the accumulator.

    Values beyond the binary64 range round to a signed infinity.
    """
    v = acc.to_int()
    if v == 0:
        return 0.0
    neg = v < 0
    a = -v if neg else v
    nbits = a.bit_length()
    # keep 53 significant bits, or fewer once the result is subnormal
    shift = max(nbits - 53, OFFSET - 1074)
    if shift <= 0:
        q = a << -shift
        shift = 0
    else:
        q = a >> shift
        rem = a & ((1 << shift) - 1)
        half = 1 << (shift - 1)
        if rem > half or (rem == half and q & 1):
            q += 1
    try:
        out = math.ldexp(float(q), shift - OFFSET)
    except OverflowError:
        out = math.inf
    return -out if neg else out


def fpe_flush_to_superacc(acc: Fpe, target: SuperAcc) -> SuperAcc:
    """Add every limb of ``acc`` exactly into ``target`` (in place)."""
    target.accumulate_array(acc.limbs)
    return target


def exact_dot(x, y) -> SuperAcc:
    """Exact dot product: every product enters the register without error."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"lengths differ: {x.shape} vs {y.shape}")
    acc = SuperAcc()
    exact_dot_jit(x, y, acc.digits, acc.meta)
    return acc
