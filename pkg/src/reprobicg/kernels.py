"""Local vector kernels with a fixed rounding sequence.

Every multiply-add is an explicit fma and every loop runs in index
order, so a kernel called on the same slice always produces the same
bits, independently of how the other rows are distributed.

=============  =====================================  ==========
kernel         element ``i``                          roundings
=============  =====================================  ==========
``axpy``       ``fma(alpha, x[i], y[i])``             1
``axpylike``   ``fma(alpha, y[i], x[i])``             1
``axpy2like``  ``fma(beta, fma(-omega, s, p), r)``    2
``ewmul``      ``d[i] * v[i]``                        1
``scale``      ``c * v[i]``                           1
=============  =====================================  ==========
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .eft import fma_jit
from .sparsemat import CsrMatrix

__all__ = ["axpy", "axpy2like", "axpylike", "ewmul", "scale", "spmv_local"]


@njit(cache=True)
def _spmv_jit(row_ptr, col_idx, values, lo, hi, e, out):
    for i in range(lo, hi):
        acc = 0.0
        for k in range(row_ptr[i], row_ptr[i + 1]):
            acc = fma_jit(values[k], e[col_idx[k]], acc)
        out[i - lo] = acc


@njit(cache=True)
def _axpy_jit(alpha, x, y, out):
    for i in range(x.shape[0]):
        out[i] = fma_jit(alpha, x[i], y[i])


@njit(cache=True)
def _axpy2like_jit(omega, beta, p, s, r, out):
    neg = -omega
    for i in range(p.shape[0]):
        t = fma_jit(neg, s[i], p[i])
        out[i] = fma_jit(beta, t, r[i])


def _vec(v) -> np.ndarray:
    return np.ascontiguousarray(v, dtype=np.float64)


def _same_length(*vs):
    n = vs[0].shape
    if any(v.shape != n for v in vs[1:]):
        raise ValueError("vector lengths differ")


def spmv_local(A: CsrMatrix, e, rows: tuple[int, int] | None = None) -> np.ndarray:
    """Rows ``rows[0]:rows[1]`` of ``A @ e`` (all rows by default).

    ``e`` is the replicated full-length operand.  Each row is one fma
    chain over its columns in increasing order.
    """
    e = _vec(e)
    if e.shape != (A.n,):
        raise ValueError(f"operand length {e.shape[0]} does not match n={A.n}")
    lo, hi = rows if rows is not None else (0, A.n)
    if not 0 <= lo <= hi <= A.n:
        raise ValueError(f"row block {lo}:{hi} outside 0:{A.n}")
    out = np.empty(hi - lo)
    _spmv_jit(A.row_ptr, A.col_idx, A.values, lo, hi, e, out)
    return out


def axpy(alpha: float, x, y) -> np.ndarray:
    """``alpha*x + y`` with one rounding per element."""
    x, y = _vec(x), _vec(y)
    _same_length(x, y)
    out = np.empty_like(x)
    _axpy_jit(float(alpha), x, y, out)
    return out


def axpylike(alpha: float, x, y) -> np.ndarray:
    """``x + alpha*y`` with one rounding per element; ``r - a*s`` is
    ``axpylike(-a, r, s)``."""
    x, y = _vec(x), _vec(y)
    _same_length(x, y)
    out = np.empty_like(x)
    _axpy_jit(float(alpha), y, x, out)
    return out


def axpy2like(omega: float, beta: float, p, s, r) -> np.ndarray:
    """``r + beta*(p - omega*s)``, evaluated as ``t = fma(-omega, s, p)``
    then ``fma(beta, t, r)``."""
    p, s, r = _vec(p), _vec(s), _vec(r)
    _same_length(p, s, r)
    out = np.empty_like(p)
    _axpy2like_jit(float(omega), float(beta), p, s, r, out)
    return out


def ewmul(d, v) -> np.ndarray:
    d, v = _vec(d), _vec(v)
    _same_length(d, v)
    return d * v


def scale(c: float, v) -> np.ndarray:
    return float(c) * _vec(v)
