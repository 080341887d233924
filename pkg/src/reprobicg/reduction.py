"""Distributed dot products over a virtual set of ranks.

A reproducible dot product is computed in three steps:

1. every rank accumulates its slice into a local accumulator
   (``dot_local``);
2. the accumulators are combined along an explicit binary tree over
   the ranks (``allreduce``); the tree stands in for whatever algorithm
   an MPI library would pick;
3. every rank rounds the combined accumulator to binary64 itself.

In ``fpe`` and ``exblas`` mode nothing is lost in steps 1 and 2, so the
tree cannot influence the result.  ``naive`` mode keeps a plain fma chain
per rank and a binary64 tree sum, and is order dependent by design.

The blocking calls (``dot_global``, ``dot_global_multi``) are thin
wrappers over the split pair ``split_allreduce_begin`` /
``split_allreduce_wait`` used by the pipelined solver.
"""
from __future__ import annotations

import enum
import math
import random
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING, Callable, Sequence, TypeVar, Union

import numpy as np
from numba import njit

from .accumulators import (
    DEFAULT_FPE_SIZE,
    Fpe,
    SuperAcc,
    exblas_dot_jit,
    fpe_dot_jit,
    fpe_flush_to_superacc,
    fpe_merge,
    fpe_round_nearsum,
    superacc_add,
    superacc_round,
)
from .eft import fma_jit

if TYPE_CHECKING:
    from .sparsemat import RankWorld

__all__ = [
    "DotMode",
    "FpeOverflowWarning",
    "FpePair",
    "PendingReduction",
    "ReductionPlan",
    "ReductionUsageError",
    "allreduce",
    "dot_global",
    "dot_global_multi",
    "dot_local",
    "norm2",
    "split_allreduce_begin",
    "split_allreduce_wait",
]

T = TypeVar("T")


class DotMode(str, enum.Enum):
    NAIVE = "naive"
    FPE = "fpe"
    EXBLAS = "exblas"


class FpeOverflowWarning(RuntimeWarning):
    """The FPE accumulators could not keep every bit of a dot product."""


class ReductionUsageError(RuntimeError):
    """A split reduction was waited on twice, or never started."""


# --------------------------------------------------------------------------
# reduction trees

Tree = Union[int, tuple]


@dataclass(frozen=True)
class ReductionPlan:
    """Order in which per-rank accumulators are combined.

    ``leftfold`` is ``((0+1)+2)+...``; ``balanced`` halves recursively;
    ``random`` shuffles the leaves and merges random pairs, seeded by
    ``seed`` and the rank count.
    """

    policy: str = "balanced"
    seed: int = 0

    def __post_init__(self):
        if self.policy not in ("leftfold", "balanced", "random"):
            raise ValueError(f"unknown reduction policy {self.policy!r}")

    def tree(self, nranks: int) -> Tree:
        if nranks < 1:
            raise ValueError("a reduction needs at least one rank")
        return _build_tree(self.policy, self.seed, nranks)

    def combine(self, leaves: Sequence[T], op: Callable[[T, T], T]) -> T:
        """Fold ``leaves`` (indexed by rank) with ``op`` along the tree."""
        def walk(node):
            if isinstance(node, int):
                return leaves[node]
            return op(walk(node[0]), walk(node[1]))
        return walk(self.tree(len(leaves)))

    def label(self) -> str:
        return f"random[{self.seed}]" if self.policy == "random" else self.policy


@lru_cache(maxsize=256)
def _build_tree(policy: str, seed: int, nranks: int) -> Tree:
    ids = list(range(nranks))
    if policy == "leftfold":
        node: Tree = ids[0]
        for i in ids[1:]:
            node = (node, i)
        return node
    if policy == "balanced":
        def split(chunk):
            if len(chunk) == 1:
                return chunk[0]
            mid = (len(chunk) + 1) // 2
            return (split(chunk[:mid]), split(chunk[mid:]))
        return split(ids)
    rng = random.Random(seed * 1_000_003 + nranks)
    forest: list[Tree] = ids[:]
    rng.shuffle(forest)
    while len(forest) > 1:
        i, j = sorted(rng.sample(range(len(forest)), 2))
        merged = (forest[i], forest[j]) if rng.random() < 0.5 else (forest[j], forest[i])
        forest.pop(j)
        forest[i] = merged
    return forest[0]


def tree_leaves(tree: Tree) -> list[int]:
    if isinstance(tree, int):
        return [tree]
    return tree_leaves(tree[0]) + tree_leaves(tree[1])


# --------------------------------------------------------------------------
# local accumulation

@dataclass
class FpePair:
    """Product and error expansions of one rank's partial dot product."""

    hi: Fpe
    lo: Fpe

    @property
    def overflowed(self) -> bool:
        return self.hi.overflowed or self.lo.overflowed

    def copy(self) -> FpePair:
        return FpePair(self.hi.copy(), self.lo.copy())


LocalAcc = Union[float, FpePair, SuperAcc]


@njit(cache=True)
def _naive_dot_jit(x, y):
    acc = 0.0
    for i in range(x.shape[0]):
        acc = fma_jit(x[i], y[i], acc)
    return acc


def _as_array(v) -> np.ndarray:
    return np.ascontiguousarray(v, dtype=np.float64)


def dot_local(x, y, mode: DotMode | str, fpe_size: int = DEFAULT_FPE_SIZE) -> LocalAcc:
    """Partial dot product of two equal-length slices.

    Returns a float in naive mode, an :class:`FpePair` in fpe mode and a
    :class:`SuperAcc` (expansions already flushed into it) in exblas mode.
    """
    x = _as_array(x)
    y = _as_array(y)
    if x.shape != y.shape:
        raise ValueError(f"slice lengths differ: {x.shape} vs {y.shape}")
    mode = DotMode(mode)
    if mode is DotMode.NAIVE:
        return float(_naive_dot_jit(x, y))
    hi, lo = Fpe(fpe_size), Fpe(fpe_size)
    if mode is DotMode.FPE:
        if fpe_dot_jit(x, y, hi.limbs, lo.limbs):
            hi.overflowed = True
        return FpePair(hi, lo)
    acc = SuperAcc()
    exblas_dot_jit(x, y, hi.limbs, lo.limbs, acc.digits, acc.meta)
    fpe_flush_to_superacc(hi, acc)
    fpe_flush_to_superacc(lo, acc)
    return acc


def _merge_pairs(a: FpePair, b: FpePair) -> FpePair:
    out = a.copy()
    fpe_merge(out.hi, b.hi)
    fpe_merge(out.lo, b.lo)
    return out


def _merge_superaccs(a: SuperAcc, b: SuperAcc) -> SuperAcc:
    return superacc_add(a.copy(), b)


def _naive_add(a: float, b: float) -> float:
    return a + b


def allreduce(world: RankWorld, local: Sequence[LocalAcc], mode: DotMode | str | None = None,
              fallback: Callable[[], float] | None = None) -> float:
    """Combine one accumulator per rank along ``world.plan`` and round.

    Every rank would perform the same rounding on the same combined
    accumulator; the single returned value is what all of them receive.

    In fpe mode an overflowed combination issues :class:`FpeOverflowWarning`
    and returns ``fallback()`` (an exblas recomputation); without a
    fallback it raises :class:`~reprobicg.accumulators.FpeOverflowError`.
    """
    mode = DotMode(mode or world.mode)
    if len(local) != world.nranks:
        raise ValueError(f"expected {world.nranks} accumulators, got {len(local)}")
    plan = world.plan
    if mode is DotMode.NAIVE:
        return plan.combine([float(v) for v in local], _naive_add)
    if mode is DotMode.EXBLAS:
        return superacc_round(plan.combine(local, _merge_superaccs))
    merged = plan.combine(local, _merge_pairs)
    if merged.overflowed and fallback is not None:
        msg = ("FPE accumulators overflowed (dynamic range or condition number too large); "
               "switching to the ExBLAS-based implementation is suggested")
        warnings.warn(msg, FpeOverflowWarning, stacklevel=3)
        world.events.append("fpe-overflow: recomputed with exblas")
        return fallback()
    return fpe_round_nearsum(merged.hi, merged.lo)


# --------------------------------------------------------------------------
# global dot products

@dataclass
class PendingReduction:
    """An in-flight batched reduction, created by ``split_allreduce_begin``."""

    world: RankWorld
    mode: DotMode
    pairs: list[tuple[np.ndarray, np.ndarray]]
    locals_: list[list[LocalAcc]]
    done: bool = field(default=False)


def _local_accumulators(world: RankWorld, x: np.ndarray, y: np.ndarray,
                        mode: DotMode) -> list[LocalAcc]:
    if x.shape != (world.n,) or y.shape != (world.n,):
        raise ValueError(f"vectors must have length {world.n}")
    return [dot_local(x[lo:hi], y[lo:hi], mode, world.fpe_size)
            for lo, hi in world.partition.ranges()]


def split_allreduce_begin(world: RankWorld, pairs: Sequence[tuple], mode=None) -> PendingReduction:
    """Compute the local accumulators of every pair and start the reduction."""
    mode = DotMode(mode or world.mode)
    arrays = [(_as_array(x), _as_array(y)) for x, y in pairs]
    locals_ = [_local_accumulators(world, x, y, mode) for x, y in arrays]
    if mode is DotMode.FPE:
        # kept for a possible exblas recomputation after the wait
        arrays = [(x.copy(), y.copy()) for x, y in arrays]
    return PendingReduction(world, mode, arrays, locals_)


def split_allreduce_wait(pending: PendingReduction) -> list[float]:
    """Finish a reduction started by :func:`split_allreduce_begin`."""
    if not isinstance(pending, PendingReduction):
        raise ReductionUsageError("wait called without a matching begin")
    if pending.done:
        raise ReductionUsageError("reduction already waited on")
    pending.done = True
    world = pending.world
    out = []
    for (x, y), local in zip(pending.pairs, pending.locals_):
        def recompute(x=x, y=y):
            return allreduce(world, _local_accumulators(world, x, y, DotMode.EXBLAS),
                             DotMode.EXBLAS)
        out.append(allreduce(world, local, pending.mode, fallback=recompute))
    return out


def dot_global_multi(world: RankWorld, pairs: Sequence[tuple], mode=None) -> list[float]:
    """Several independent dot products in one reduction round."""
    return split_allreduce_wait(split_allreduce_begin(world, pairs, mode))


def dot_global(world: RankWorld, x, y, mode=None) -> float:
    return dot_global_multi(world, [(x, y)], mode)[0]


def norm2(world: RankWorld, x, mode=None) -> float:
    """Euclidean norm; the square root is applied to the rounded dot."""
    return math.sqrt(dot_global(world, x, x, mode))
