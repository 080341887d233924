"""Solve one system under many rank layouts and compare bit patterns.

Run with ``python demos/reproducible_solve.py``.
"""
import numpy as np

from reprobicg import (RankWorld, ReductionPlan, build_rhs, float_hex, gen_poisson27,
                       pbicgstab, pipelined_pbicgstab)

A = gen_poisson27(8, perturb=True)
b = build_rhs(A)
print(f"27-point problem: n={A.n}, nnz={A.nnz}")

layouts = [(k, plan) for k in (1, 2, 4, 8)
           for plan in (ReductionPlan("leftfold"), ReductionPlan("balanced"),
                        ReductionPlan("random", 11))]

for name, fn in (("standard", pbicgstab), ("pipelined", pipelined_pbicgstab)):
    for mode in ("naive", "exblas"):
        prints = set()
        for k, plan in layouts:
            report = fn(RankWorld.create(A.n, k, mode, plan), A, b)
            prints.add(report.fingerprint())
        print(f"{name:<10}{mode:<8}{len(layouts)} layouts -> {len(prints)} distinct run(s)")

report = pipelined_pbicgstab(RankWorld.create(A.n, 4, "exblas"), A, b)
print("\npipelined exblas residual history:")
for j, tau in report.history:
    print(f"  {j:>3}  {float_hex(tau):<24} {tau:.6e}")
print(f"max |x - A^-1 b| = {np.abs(report.x - np.linalg.solve(A.to_dense(), b)).max():.2e}")
