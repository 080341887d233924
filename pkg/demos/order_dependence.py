"""Why a plain dot product is not reproducible across reduction trees.

Run with ``python demos/order_dependence.py``.
"""
import numpy as np

from reprobicg import RankWorld, ReductionPlan, dot_global, float_hex, twosum

# twosum recovers the rounding error of a single addition exactly
s, e = twosum(1e16, 1.0)
print(f"1e16 + 1 rounds to {s!r}, lost {e!r}")

# one element per rank, so the tree shape decides the summation order
x = np.array([1e16, 1.0, -1e16, 1.0])
y = np.ones(4)
plans = [ReductionPlan("leftfold"), ReductionPlan("balanced"),
         ReductionPlan("random", 0), ReductionPlan("random", 7)]

print(f"\n{'plan':<12}{'naive':>10}{'fpe':>10}{'exblas':>10}")
for plan in plans:
    row = [dot_global(RankWorld.create(4, 4, mode, plan), x, y)
           for mode in ("naive", "fpe", "exblas")]
    print(f"{plan.label():<12}" + "".join(f"{v:>10}" for v in row))

# a larger random case: count distinct naive results over rank counts
rng = np.random.default_rng(3)
a = rng.standard_normal(10_000) * 10.0 ** rng.integers(-10, 10, 10_000)
b = rng.standard_normal(10_000)
naive, exact = set(), set()
for k in (1, 2, 3, 5, 8, 16, 32):
    for plan in plans:
        naive.add(dot_global(RankWorld.create(a.size, k, "naive", plan), a, b))
        exact.add(dot_global(RankWorld.create(a.size, k, "exblas", plan), a, b))
print(f"\nnaive:  {len(naive)} distinct results")
print(f"exblas: {len(exact)} distinct result {float_hex(exact.pop())}")
