"""Sparse matrices, test problems and the block-row rank layout."""
from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import IO, Iterator, Sequence, Union

import numpy as np

from .reduction import DotMode, ReductionPlan

__all__ = [
    "CsrMatrix",
    "MatrixMarketError",
    "RankWorld",
    "RowPartition",
    "allgather",
    "gen_band",
    "gen_poisson27",
    "parse_matrix_market",
    "partition_rows",
    "read_matrix_market",
    "scatter",
    "write_matrix_market",
]

# off-diagonal scaling below the diagonal that makes the 27-point operator unsymmetric
PERTURB_FACTOR = 1.0 - 0.0001


class MatrixMarketError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Square matrix in compressed sparse row form.

    Column indices are strictly increasing within each row; SpMV walks
    them in that order, so the canonical form fixes the arithmetic.
    """

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        row_ptr = np.ascontiguousarray(self.row_ptr, dtype=np.int64)
        col_idx = np.ascontiguousarray(self.col_idx, dtype=np.int64)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)
        object.__setattr__(self, "values", values)
        if row_ptr.shape != (self.n + 1,) or row_ptr[0] != 0:
            raise ValueError("row_ptr must have n+1 entries starting at 0")
        if np.any(np.diff(row_ptr) < 0):
            raise ValueError("row_ptr must be nondecreasing")
        if row_ptr[-1] != col_idx.shape[0] or col_idx.shape != values.shape:
            raise ValueError("row_ptr[n] must equal nnz")
        if col_idx.size and (col_idx.min() < 0 or col_idx.max() >= self.n):
            raise ValueError("column index out of range")
        # strictly increasing columns inside every row
        d = np.diff(col_idx)
        row_starts = row_ptr[1:-1]
        inner = np.ones(d.shape, dtype=bool)
        inner[row_starts[(row_starts > 0) & (row_starts < col_idx.size)] - 1] = False
        if np.any(d[inner] <= 0):
            raise ValueError("columns must be strictly increasing within each row")

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    @classmethod
    def from_coo(cls, n: int, rows, cols, vals) -> CsrMatrix:
        """Build canonical CSR from triplets; duplicate entries are summed
        in order of appearance."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            key = rows * n + cols
            first = np.concatenate(([True], key[1:] != key[:-1]))
            starts = np.flatnonzero(first)
            if starts.size != key.size:
                summed = np.empty(starts.size)
                bounds = np.append(starts, key.size)
                for k in range(starts.size):
                    acc = 0.0
                    for v in vals[bounds[k]:bounds[k + 1]]:
                        acc += v
                    summed[k] = acc
                vals = summed
            rows, cols = rows[starts], cols[starts]
        counts = np.bincount(rows, minlength=n) if rows.size else np.zeros(n, dtype=np.int64)
        row_ptr = np.concatenate(([0], np.cumsum(counts)))
        return cls(n, row_ptr, cols, vals)

    @classmethod
    def identity(cls, n: int, value: float = 1.0) -> CsrMatrix:
        i = np.arange(n)
        return cls(n, np.arange(n + 1), i, np.full(n, value))

    def row_block(self, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """The rows ``lo:hi`` as ``(row_ptr, col_idx, values)`` with columns kept global."""
        start, stop = self.row_ptr[lo], self.row_ptr[hi]
        return (self.row_ptr[lo:hi + 1] - start, self.col_idx[start:stop],
                self.values[start:stop])

    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.n)
        rows = np.repeat(np.arange(self.n), np.diff(self.row_ptr))
        on = rows == self.col_idx
        d[rows[on]] = self.values[on]
        return d

    def to_coo(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows = np.repeat(np.arange(self.n), np.diff(self.row_ptr))
        return rows, self.col_idx.copy(), self.values.copy()

    def transpose(self) -> CsrMatrix:
        rows, cols, vals = self.to_coo()
        return CsrMatrix.from_coo(self.n, cols, rows, vals)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        rows, cols, vals = self.to_coo()
        out[rows, cols] = vals
        return out

    def equals(self, other: CsrMatrix) -> bool:
        """Bit-for-bit equality of structure and values."""
        return (self.n == other.n
                and np.array_equal(self.row_ptr, other.row_ptr)
                and np.array_equal(self.col_idx, other.col_idx)
                and np.array_equal(self.values.view(np.int64), other.values.view(np.int64)))


# --------------------------------------------------------------------------
# Matrix Market

def parse_matrix_market(stream: IO[str]) -> CsrMatrix:
    """Read a coordinate Matrix Market matrix (real/integer, general/symmetric)."""
    header = stream.readline()
    tokens = header.strip().split()
    if len(tokens) != 5 or tokens[0] != "%%MatrixMarket":
        raise MatrixMarketError(f"malformed header: {header.strip()!r}")
    obj, fmt, fld, sym = (t.lower() for t in tokens[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixMarketError("only coordinate matrices are supported")
    if fld == "pattern":
        raise MatrixMarketError("pattern matrices carry no values")
    if fld not in ("real", "integer"):
        raise MatrixMarketError(f"unsupported field {fld!r}")
    if sym not in ("general", "symmetric"):
        raise MatrixMarketError(f"unsupported symmetry {sym!r}")

    line = stream.readline()
    while line and (line.startswith("%") or not line.strip()):
        line = stream.readline()
    try:
        nrows, ncols, nnz = (int(t) for t in line.split())
    except ValueError:
        raise MatrixMarketError(f"malformed size line: {line.strip()!r}") from None
    if nrows != ncols:
        raise MatrixMarketError(f"matrix is not square ({nrows}x{ncols})")

    body = [ln for ln in stream.read().splitlines() if ln.strip() and not ln.startswith("%")]
    if len(body) != nnz:
        raise MatrixMarketError(f"expected {nnz} entries, found {len(body)}")
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    for k, ln in enumerate(body):
        parts = ln.split()
        if len(parts) != 3:
            raise MatrixMarketError(f"malformed entry line: {ln!r}")
        rows[k] = int(parts[0])
        cols[k] = int(parts[1])
        vals[k] = float(parts[2])
    if nnz and (rows.min() < 1 or cols.min() < 1 or rows.max() > nrows or cols.max() > ncols):
        raise MatrixMarketError("entry index out of range")
    rows -= 1
    cols -= 1
    if sym == "symmetric":
        off = rows != cols
        rows, cols, vals = (np.concatenate((rows, cols[off])),
                            np.concatenate((cols, rows[off])),
                            np.concatenate((vals, vals[off])))
    return CsrMatrix.from_coo(nrows, rows, cols, vals)


def read_matrix_market(path: Union[str, os.PathLike]) -> CsrMatrix:
    with open(path) as fh:
        return parse_matrix_market(fh)


def write_matrix_market(A: CsrMatrix, stream: IO[str]) -> None:
    """Write ``A`` as a general coordinate matrix; values round-trip exactly."""
    rows, cols, vals = A.to_coo()
    stream.write("%%MatrixMarket matrix coordinate real general\n")
    stream.write(f"{A.n} {A.n} {A.nnz}\n")
    for i, j, v in zip(rows.tolist(), cols.tolist(), vals.tolist()):
        stream.write(f"{i + 1} {j + 1} {v!r}\n")


def matrix_market_text(A: CsrMatrix) -> str:
    buf = io.StringIO()
    write_matrix_market(A, buf)
    return buf.getvalue()


# --------------------------------------------------------------------------
# generators

def gen_poisson27(m: int, perturb: bool = False) -> CsrMatrix:
    """27-point Laplacian on an ``m**3`` grid: 26 on the diagonal, -1 for each
    neighbour present in the grid.  With ``perturb`` the entries below the
    diagonal are scaled by ``1 - 1e-4``.
    """
    if m < 2:
        raise ValueError("the grid needs at least 2 points per side")
    n = m ** 3
    idx = np.arange(n)
    i, j, k = idx % m, (idx // m) % m, idx // (m * m)
    rows, cols, vals = [], [], []
    for dk in (-1, 0, 1):
        for dj in (-1, 0, 1):
            for di in (-1, 0, 1):
                ii, jj, kk = i + di, j + dj, k + dk
                ok = (ii >= 0) & (ii < m) & (jj >= 0) & (jj < m) & (kk >= 0) & (kk < m)
                r = idx[ok]
                c = ii[ok] + m * jj[ok] + m * m * kk[ok]
                centre = di == 0 and dj == 0 and dk == 0
                rows.append(r)
                cols.append(c)
                vals.append(np.full(r.size, 26.0 if centre else -1.0))
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    if perturb:
        below = cols < rows
        vals[below] = vals[below] * PERTURB_FACTOR
    return CsrMatrix.from_coo(n, rows, cols, vals)


def gen_band(n: int, half_bandwidth: int, seed: int = 0, signed: bool = False) -> CsrMatrix:
    """Dense band matrix with a dominant diagonal of ``2*hb + 1``.

    Off-diagonal values are drawn from a seeded generator in ``(0, 1)``,
    or ``(-1, 1)`` with ``signed``.  Rows near the edges are truncated,
    so ``nnz = (2*hb + 1)*n - hb*(hb + 1)``.
    """
    hb = half_bandwidth
    if hb < 0 or hb >= n:
        raise ValueError("half bandwidth must satisfy 0 <= hb < n")
    rng = np.random.default_rng(seed)
    rows, cols = [], []
    for off in range(-hb, hb + 1):
        r = np.arange(max(0, -off), min(n, n - off))
        rows.append(r)
        cols.append(r + off)
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    # integers in [1, 2**53) scaled by 2**-53 lie strictly inside (0, 1)
    vals = rng.integers(1, 1 << 53, size=rows.size).astype(np.float64) * 2.0 ** -53
    if signed:
        vals *= np.where(rng.integers(0, 2, size=rows.size) == 1, 1.0, -1.0)
    vals[rows == cols] = float(2 * hb + 1)
    return CsrMatrix.from_coo(n, rows, cols, vals)


# --------------------------------------------------------------------------
# rank layout

@dataclass(frozen=True)
class RowPartition:
    """Contiguous row blocks, one per rank: rank ``k`` owns ``offsets[k]:offsets[k+1]``."""

    offsets: tuple[int, ...]

    def __post_init__(self):
        off = self.offsets
        if len(off) < 2 or off[0] != 0 or any(b < a for a, b in zip(off, off[1:])):
            raise ValueError(f"invalid partition offsets {off}")

    @property
    def nranks(self) -> int:
        return len(self.offsets) - 1

    @property
    def n(self) -> int:
        return self.offsets[-1]

    def ranges(self) -> Iterator[tuple[int, int]]:
        return zip(self.offsets[:-1], self.offsets[1:])

    def sizes(self) -> list[int]:
        return [b - a for a, b in self.ranges()]


def partition_rows(n: int, nranks: int) -> RowPartition:
    """Block sizes ``ceil(n/K)`` for the first ``n % K`` ranks, ``floor(n/K)`` after."""
    if not 1 <= nranks <= max(n, 1):
        raise ValueError(f"need 1 <= ranks <= n, got ranks={nranks}, n={n}")
    base, extra = divmod(n, nranks)
    sizes = [base + 1 if k < extra else base for k in range(nranks)]
    return RowPartition(tuple(np.concatenate(([0], np.cumsum(sizes))).tolist()))


@dataclass
class RankWorld:
    """Virtual message-passing context.

    Holds the row partition, the reduction order and the dot-product mode
    shared by all ranks.  ``events`` collects warnings raised on the way
    (FPE overflow fallbacks).
    """

    partition: RowPartition
    plan: ReductionPlan = field(default_factory=ReductionPlan)
    mode: DotMode = DotMode.EXBLAS
    fpe_size: int = 8
    events: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.mode = DotMode(self.mode)

    @classmethod
    def create(cls, n: int, nranks: int = 1, mode: DotMode | str = DotMode.EXBLAS,
               plan: ReductionPlan | None = None, fpe_size: int = 8) -> RankWorld:
        return cls(partition_rows(n, nranks), plan or ReductionPlan(), DotMode(mode), fpe_size)

    @property
    def n(self) -> int:
        return self.partition.n

    @property
    def nranks(self) -> int:
        return self.partition.nranks

    def slices(self, v: np.ndarray) -> list[np.ndarray]:
        return scatter(self, v)


def scatter(world: RankWorld, v) -> list[np.ndarray]:
    v = np.asarray(v)
    if v.shape != (world.n,):
        raise ValueError(f"vector length {v.shape} does not match n={world.n}")
    return [v[lo:hi] for lo, hi in world.partition.ranges()]


def allgather(world: RankWorld, slices: Sequence[np.ndarray]) -> np.ndarray:
    """Replicate the rank-owned slices as one vector (a copy, no arithmetic)."""
    sizes = world.partition.sizes()
    if len(slices) != len(sizes) or any(len(s) != k for s, k in zip(slices, sizes)):
        raise ValueError("slices do not match the partition")
    return np.concatenate([np.asarray(s, dtype=np.float64) for s in slices])
