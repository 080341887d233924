from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from exact import to_binary64
from reprobicg.kernels import axpy, axpy2like, axpylike, ewmul, scale, spmv_local
from reprobicg.sparsemat import CsrMatrix, gen_band

F = Fraction
moderate = st.floats(min_value=-1e100, max_value=1e100, allow_nan=False)
vectors = st.lists(st.tuples(moderate, moderate, moderate), min_size=1, max_size=30)


def rounded_fma(a, b, c):
    return to_binary64(F(a) * F(b) + F(c))


def test_spmv_identity():
    x = np.array([0.1, -2.0, 3e300, 5e-324])
    assert spmv_local(CsrMatrix.identity(4), x).tobytes() == x.tobytes()


def test_spmv_single_row_is_fma_chain():
    A = CsrMatrix(2, [0, 2, 2], [0, 1], [2.0, 3.0])
    x, y = 0.1, 0.7
    out = spmv_local(A, [x, y], rows=(0, 1))
    assert out[0] == rounded_fma(3.0, y, rounded_fma(2.0, x, 0.0))


def test_spmv_random_rows_match_sequential_chain():
    rng = np.random.default_rng(5)
    dense = rng.standard_normal((50, 50)) * (rng.random((50, 50)) < 0.2)
    rows, cols = np.nonzero(dense)
    A = CsrMatrix.from_coo(50, rows, cols, dense[rows, cols])
    e = rng.standard_normal(50)
    out = spmv_local(A, e)
    for i in range(50):
        acc = 0.0
        for k in range(A.row_ptr[i], A.row_ptr[i + 1]):
            acc = rounded_fma(A.values[k], e[A.col_idx[k]], acc)
        assert out[i] == acc


def test_spmv_row_blocks_concatenate():
    A = gen_band(40, 3, seed=1, signed=True)
    e = np.random.default_rng(0).standard_normal(40)
    whole = spmv_local(A, e)
    parts = np.concatenate([spmv_local(A, e, (0, 13)), spmv_local(A, e, (13, 13)),
                            spmv_local(A, e, (13, 40))])
    assert whole.tobytes() == parts.tobytes()


def test_spmv_permutation_exact():
    perm = np.random.default_rng(2).permutation(20)
    P = CsrMatrix.from_coo(20, np.arange(20), perm, np.ones(20))
    x = np.random.default_rng(3).standard_normal(20) * 1e-300
    assert spmv_local(P, x).tobytes() == x[perm].tobytes()


def test_spmv_dimension_errors():
    A = CsrMatrix.identity(3)
    with pytest.raises(ValueError):
        spmv_local(A, np.ones(4))
    with pytest.raises(ValueError):
        spmv_local(A, np.ones(3), (2, 5))


def test_trivial_updates():
    x = np.array([1.5, -2.0, 0.1])
    y = np.array([0.3, 7.0, -1.0])
    assert axpy(0.0, x, y).tolist() == y.tolist()
    assert axpy(1.0, x, np.zeros(3)).tolist() == x.tolist()
    assert axpylike(0.0, x, y).tolist() == x.tolist()
    assert axpylike(1.0, np.zeros(3), y).tolist() == y.tolist()
    assert axpy2like(0.0, 0.0, x, y, y).tolist() == y.tolist()
    assert axpy2like(0.0, 1.0, x, y, y).tolist() == (x + y).tolist()
    assert ewmul(np.ones(3), x).tolist() == x.tolist()
    assert ewmul(x, np.zeros(3)).tolist() == [0.0, -0.0, 0.0]
    assert scale(1.0, x).tolist() == x.tolist()
    assert scale(0.0, x).tolist() == [0.0, -0.0, 0.0]


def test_length_mismatch():
    with pytest.raises(ValueError):
        axpy(1.0, np.ones(2), np.ones(3))
    with pytest.raises(ValueError):
        axpy2like(1.0, 1.0, np.ones(2), np.ones(2), np.ones(3))


@given(moderate, vectors)
def test_axpy_single_rounding(alpha, rows):
    x, y, _ = map(np.array, zip(*rows))
    out = axpy(alpha, x, y)
    assert out.tolist() == [rounded_fma(alpha, a, b) for a, b in zip(x, y)]


@given(moderate, vectors)
def test_axpylike_single_rounding(alpha, rows):
    x, y, _ = map(np.array, zip(*rows))
    out = axpylike(alpha, x, y)
    assert out.tolist() == [rounded_fma(alpha, b, a) for a, b in zip(x, y)]


@given(moderate, moderate, vectors)
def test_axpy2like_two_roundings(omega, beta, rows):
    p, s, r = map(np.array, zip(*rows))
    out = axpy2like(omega, beta, p, s, r)
    expected = [rounded_fma(beta, rounded_fma(-omega, b, a), c) for a, b, c in zip(p, s, r)]
    assert out.tolist() == expected


@given(vectors)
def test_ewmul_and_scale_single_rounding(rows):
    d, v, _ = map(np.array, zip(*rows))
    assert ewmul(d, v).tolist() == [to_binary64(F(a) * F(b)) for a, b in zip(d, v)]
    c = 1.0 / np.sqrt(len(v))
    assert scale(c, v).tolist() == [to_binary64(F(c) * F(b)) for b in v]


def test_kernels_deterministic():
    rng = np.random.default_rng(11)
    p, s, r = rng.standard_normal((3, 1000))
    a = axpy2like(0.3, 1.7, p, s, r)
    b = axpy2like(0.3, 1.7, p.copy(), s.copy(), r.copy())
    assert a.tobytes() == b.tobytes()
