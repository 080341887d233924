"""Bit-reproducible BiCGStab solvers built on exact dot products.

The package layers, bottom up:

``eft``
    twosum, twoprod and an explicit fma.
``accumulators``
    floating-point expansions (:class:`Fpe`) and the exact long
    accumulator (:class:`SuperAcc`), with correct rounding to binary64.
``reduction``
    dot products over a virtual set of ranks in ``naive``, ``fpe`` and
    ``exblas`` mode, with blocking and split reductions.
``sparsemat``
    CSR storage, Matrix Market I/O, problem generators, row partitions.
``kernels``
    fma-based SpMV and vector updates.
``solvers``
    standard and pipelined Jacobi-preconditioned BiCGStab.
"""
from .accumulators import (
    Fpe,
    FpeOverflowError,
    SuperAcc,
    exact_dot,
    fpe_accumulate,
    fpe_accumulate_product,
    fpe_flush_to_superacc,
    fpe_merge,
    fpe_round_nearsum,
    superacc_accumulate,
    superacc_add,
    superacc_round,
)
from .eft import EftPair, fma_op, twoprod, twosum
from .hexfloat import float_hex, parse_hex
from .kernels import axpy, axpy2like, axpylike, ewmul, scale, spmv_local
from .reduction import (
    DotMode,
    FpeOverflowWarning,
    ReductionPlan,
    allreduce,
    dot_global,
    dot_global_multi,
    dot_local,
    norm2,
    split_allreduce_begin,
    split_allreduce_wait,
)
from .solvers import (
    JacobiPrecond,
    SolveReport,
    SolverConfig,
    SolverState,
    Variant,
    build_rhs,
    jacobi_apply,
    jacobi_build,
    pbicgstab,
    pipelined_pbicgstab,
    solve,
)
from .sparsemat import (
    CsrMatrix,
    RankWorld,
    RowPartition,
    allgather,
    gen_band,
    gen_poisson27,
    parse_matrix_market,
    partition_rows,
    read_matrix_market,
    scatter,
    write_matrix_market,
)

__all__ = [
    "CsrMatrix",
    "DotMode",
    "EftPair",
    "Fpe",
    "FpeOverflowError",
    "FpeOverflowWarning",
    "JacobiPrecond",
    "RankWorld",
    "ReductionPlan",
    "RowPartition",
    "SolveReport",
    "SolverConfig",
    "SolverState",
    "SuperAcc",
    "Variant",
    "allgather",
    "allreduce",
    "axpy",
    "axpy2like",
    "axpylike",
    "build_rhs",
    "dot_global",
    "dot_global_multi",
    "dot_local",
    "ewmul",
    "exact_dot",
    "float_hex",
    "fma_op",
    "fpe_accumulate",
    "fpe_accumulate_product",
    "fpe_flush_to_superacc",
    "fpe_merge",
    "fpe_round_nearsum",
    "gen_band",
    "gen_poisson27",
    "jacobi_apply",
    "jacobi_build",
    "norm2",
    "parse_hex",
    "parse_matrix_market",
    "partition_rows",
    "pbicgstab",
    "pipelined_pbicgstab",
    "read_matrix_market",
    "scale",
    "scatter",
    "solve",
    "split_allreduce_begin",
    "split_allreduce_wait",
    "spmv_local",
    "superacc_accumulate",
    "superacc_add",
    "superacc_round",
    "twoprod",
    "twosum",
    "write_matrix_market",
]

__version__ = "0.1.0"
