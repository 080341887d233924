"""Jacobi-preconditioned BiCGStab and its pipelined variant.

Both solvers run on a :class:`~reprobicg.sparsemat.RankWorld`: vectors
are full-length arrays, but every kernel is applied rank by rank on the
rank's own rows, SpMV operands are assembled with ``allgather``, and all
scalars come out of the world's reductions.  With ``fpe`` or ``exblas``
dot products the whole run (residual history, iteration count, solution)
is independent of the rank count and of the reduction tree.

Stopping rule: ``||r_j|| / ||r_0|| <= tol`` on the recursively updated
residual.  The shadow residual is the initial residual.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .eft import fma_op
from .hexfloat import float_hex
from .kernels import axpy, axpy2like, axpylike, ewmul, scale, spmv_local
from .reduction import (
    DotMode,
    ReductionPlan,
    dot_global,
    dot_global_multi,
    norm2,
    split_allreduce_begin,
    split_allreduce_wait,
)
from .sparsemat import CsrMatrix, RankWorld, allgather, scatter

__all__ = [
    "JacobiPrecond",
    "PreconditionerError",
    "SolveReport",
    "SolverConfig",
    "SolverState",
    "Variant",
    "build_rhs",
    "jacobi_apply",
    "jacobi_build",
    "pbicgstab",
    "pipelined_pbicgstab",
    "solve",
    "true_residual",
]


class PreconditionerError(ValueError):
    pass


class Variant(str, enum.Enum):
    STANDARD = "standard"
    PIPELINED = "pipelined"


@dataclass(frozen=True)
class SolverConfig:
    """Stopping control.  ``max_iters=None`` means ``20 * n``."""

    tol: float = 1e-6
    max_iters: Optional[int] = None
    variant: Variant = Variant.STANDARD

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        object.__setattr__(self, "variant", Variant(self.variant))

    def iteration_cap(self, n: int) -> int:
        return self.max_iters if self.max_iters is not None else 20 * n


@dataclass
class JacobiPrecond:
    inv_diag: np.ndarray


def jacobi_build(A: CsrMatrix) -> JacobiPrecond:
    d = A.diagonal()
    zero = np.flatnonzero(d == 0.0)
    if zero.size:
        raise PreconditionerError(f"zero diagonal entry in row {int(zero[0])}")
    return JacobiPrecond(1.0 / d)


def jacobi_apply(M: JacobiPrecond, v) -> np.ndarray:
    return ewmul(M.inv_diag, v)


@dataclass
class SolverState:
    """Snapshot handed to the per-iteration callback."""

    j: int
    vectors: dict[str, np.ndarray]
    scalars: dict[str, float]
    history: list[tuple[int, float]]


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    final_scaled_residual: float
    final_true_residual: float
    initial_residual: float
    history: list[tuple[int, float]]
    x: np.ndarray
    variant: str
    mode: str
    nranks: int
    plan: str
    warnings: list[str] = field(default_factory=list)
    breakdown: Optional[str] = None
    elapsed: float = 0.0

    def history_hex(self) -> list[str]:
        return [float_hex(tau) for _, tau in self.history]

    def fingerprint(self) -> tuple:
        """Everything that must be bit-identical across reproducible runs."""
        return (self.iterations, tuple(self.history_hex()), self.x.tobytes())

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "variant": self.variant,
            "mode": self.mode,
            "ranks": self.nranks,
            "plan": self.plan,
            "initial_residual_hex": float_hex(self.initial_residual),
            "initial_residual": repr(self.initial_residual),
            "final_scaled_residual_hex": float_hex(self.final_scaled_residual),
            "final_scaled_residual": repr(self.final_scaled_residual),
            "final_true_residual_hex": float_hex(self.final_true_residual),
            "final_true_residual": repr(self.final_true_residual),
            "breakdown": self.breakdown,
            "warnings": list(self.warnings),
            "wall_clock_seconds": round(self.elapsed, 3),
        }


# --------------------------------------------------------------------------
# distributed helpers

def _per_rank(world: RankWorld, fn: Callable, scalars: tuple, *vectors: np.ndarray) -> np.ndarray:
    out = np.empty(world.n)
    for lo, hi in world.partition.ranges():
        out[lo:hi] = fn(*scalars, *(v[lo:hi] for v in vectors))
    return out


def _spmv(world: RankWorld, A: CsrMatrix, v: np.ndarray) -> np.ndarray:
    e = allgather(world, scatter(world, v))
    out = np.empty(world.n)
    for lo, hi in world.partition.ranges():
        out[lo:hi] = spmv_local(A, e, (lo, hi))
    return out


def _precond(world: RankWorld, M: JacobiPrecond, v: np.ndarray) -> np.ndarray:
    return _per_rank(world, ewmul, (), M.inv_diag, v)


def build_rhs(A: CsrMatrix, world: RankWorld | None = None) -> np.ndarray:
    """``b = A @ ones`` followed by one scaling with ``1/sqrt(n)``."""
    world = world or RankWorld.create(A.n)
    b = _spmv(world, A, np.ones(A.n))
    return _per_rank(world, scale, (1.0 / math.sqrt(A.n),), b)


def true_residual(world: RankWorld, A: CsrMatrix, b: np.ndarray, x: np.ndarray) -> float:
    """``||b - A x||_2`` with the world's reproducible norm."""
    ax = _spmv(world, A, x)
    return norm2(world, _per_rank(world, axpylike, (-1.0,), b, ax))


def _check_problem(world: RankWorld, A: CsrMatrix, b) -> np.ndarray:
    b = np.ascontiguousarray(b, dtype=np.float64)
    if A.n != world.n or b.shape != (world.n,):
        raise ValueError(f"matrix ({A.n}), rhs {b.shape} and world ({world.n}) disagree")
    return b


class _Run:
    """Bookkeeping shared by both solvers."""

    def __init__(self, world, A, b, config, variant, callback):
        self.world, self.A, self.b = world, A, b
        self.config = config
        self.variant = variant
        self.callback = callback
        self.cap = config.iteration_cap(A.n)
        self.history: list[tuple[int, float]] = []
        self.events_start = len(world.events)
        self.t0 = time.perf_counter()
        self.tau0 = 0.0

    def record(self, j: int, tau: float) -> bool:
        """Append ``tau`` to the history; True once converged."""
        if j == 0:
            self.tau0 = tau
        self.history.append((j, tau))
        return self.scaled(tau) <= self.config.tol

    def scaled(self, tau: float) -> float:
        return tau / self.tau0 if self.tau0 != 0.0 else 0.0

    def notify(self, j, vectors, scalars):
        if self.callback is not None:
            self.callback(SolverState(j, vectors, scalars, list(self.history)))

    def report(self, x: np.ndarray, breakdown: Optional[str]) -> SolveReport:
        j, tau = self.history[-1]
        scaled = self.scaled(tau)
        return SolveReport(
            converged=scaled <= self.config.tol,
            iterations=j,
            final_scaled_residual=scaled,
            final_true_residual=true_residual(self.world, self.A, self.b, x),
            initial_residual=self.tau0,
            history=self.history,
            x=x,
            variant=self.variant.value,
            mode=self.world.mode.value,
            nranks=self.world.nranks,
            plan=self.world.plan.label(),
            warnings=self.world.events[self.events_start:],
            breakdown=breakdown,
            elapsed=time.perf_counter() - self.t0,
        )


# --------------------------------------------------------------------------
# solvers

def pbicgstab(world: RankWorld, A: CsrMatrix, b, config: SolverConfig = SolverConfig(),
              x0=None, callback: Callable[[SolverState], None] | None = None) -> SolveReport:
    """Jacobi-preconditioned BiCGStab.

    Per iteration: two preconditioner applications, two SpMVs and three
    reduction rounds (``<r0,s>``; ``<q,y>, <y,y>``; ``<r0,r>, <r,r>``).
    """
    b = _check_problem(world, A, b)
    run = _Run(world, A, b, config, Variant.STANDARD, callback)
    M = jacobi_build(A)
    x = np.zeros(world.n) if x0 is None else np.array(x0, dtype=np.float64)

    r = _per_rank(world, axpylike, (-1.0,), b, _spmv(world, A, x))
    p = r.copy()
    r0 = r.copy()
    rho = dot_global(world, r, r)
    converged = run.record(0, math.sqrt(rho))
    breakdown = None
    j = 0
    while not converged and j < run.cap:
        phat = _precond(world, M, p)                                    # S1
        s = _spmv(world, A, phat)                                       # S2
        r0s = dot_global(world, r0, s)                                  # S3
        if r0s == 0.0:
            breakdown = "<r0,s> = 0"
            break
        alpha = rho / r0s
        q = _per_rank(world, axpylike, (-alpha,), r, s)                 # S4
        qhat = _precond(world, M, q)                                    # S5
        y = _spmv(world, A, qhat)                                       # S6
        qy, yy = dot_global_multi(world, [(q, y), (y, y)])              # S7
        # y vanishes only with q, and then the half step already solved it
        omega = qy / yy if yy != 0.0 else 0.0
        x = _per_rank(world, axpy, (alpha,), phat, x)                   # S8
        x = _per_rank(world, axpy, (omega,), qhat, x)
        r = _per_rank(world, axpylike, (-omega,), q, y)                 # S9
        rho_new, rr = dot_global_multi(world, [(r0, r), (r, r)])        # S10 + S11
        j += 1
        converged = run.record(j, math.sqrt(rr))
        run.notify(j, {"x": x, "r": r, "r0": r0, "p": p, "phat": phat, "s": s, "q": q,
                       "qhat": qhat, "y": y},
                   {"alpha": alpha, "omega": omega, "rho": rho_new, "tau": math.sqrt(rr)})
        if converged:
            break
        if omega == 0.0:
            breakdown = "omega = 0"
            break
        if rho_new == 0.0:
            breakdown = "<r0,r> = 0"
            break
        beta = (rho_new / rho) * (alpha / omega)
        p = _per_rank(world, axpy2like, (omega, beta), p, s, r)         # S12
        rho = rho_new
    return run.report(x, breakdown)


def pipelined_pbicgstab(world: RankWorld, A: CsrMatrix, b, config: SolverConfig = SolverConfig(),
                        x0=None, callback: Callable[[SolverState], None] | None = None
                        ) -> SolveReport:
    """Pipelined Jacobi-preconditioned BiCGStab.

    Two split reductions per iteration, each started as soon as its
    operands exist and completed right before its results are needed, with
    a preconditioner application and an SpMV in between.  ``<r,r>`` rides
    along in the second batch so the residual norm costs no extra round.
    """
    b = _check_problem(world, A, b)
    run = _Run(world, A, b, config, Variant.PIPELINED, callback)
    M = jacobi_build(A)
    n = world.n
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)

    r = _per_rank(world, axpylike, (-1.0,), b, _spmv(world, A, x))
    r0 = r.copy()
    rhat = _precond(world, M, r)
    w = _spmv(world, A, rhat)
    what = _precond(world, M, w)
    t = _spmv(world, A, what)
    rho, r0w = dot_global_multi(world, [(r0, r), (r0, w)])
    converged = run.record(0, math.sqrt(rho))
    breakdown = None
    if not converged and r0w == 0.0:
        return run.report(x, "<r0,w> = 0")
    alpha = rho / r0w if not converged else 0.0
    beta = omega = 0.0
    phat = np.zeros(n)
    s = np.zeros(n)
    shat = np.zeros(n)
    z = np.zeros(n)
    zhat = np.zeros(n)
    v = np.zeros(n)
    j = 0
    while not converged and j < run.cap:
        phat = _per_rank(world, axpy2like, (omega, beta), phat, shat, rhat)    # S1
        s = _per_rank(world, axpy2like, (omega, beta), s, z, w)                # S2
        shat = _per_rank(world, axpy2like, (omega, beta), shat, zhat, what)    # S3
        z = _per_rank(world, axpy2like, (omega, beta), z, v, t)                # S4
        q = _per_rank(world, axpylike, (-alpha,), r, s)                        # S5
        qhat = _per_rank(world, axpylike, (-alpha,), rhat, shat)               # S6
        y = _per_rank(world, axpylike, (-alpha,), w, z)                        # S7
        pending = split_allreduce_begin(world, [(q, y), (y, y)])               # S8
        zhat = _precond(world, M, z)                                           # S9
        v = _spmv(world, A, zhat)                                              # S10
        qy, yy = split_allreduce_wait(pending)                                 # S11
        omega = qy / yy if yy != 0.0 else 0.0
        x = _per_rank(world, axpy, (alpha,), phat, x)                          # S12
        x = _per_rank(world, axpy, (omega,), qhat, x)
        r = _per_rank(world, axpylike, (-omega,), q, y)                        # S13
        rhat = _per_rank(world, axpy2like, (alpha, -omega), what, zhat, qhat)  # S14
        w = _per_rank(world, axpy2like, (alpha, -omega), t, v, y)              # S15
        pending = split_allreduce_begin(                                       # S16
            world, [(r0, r), (r0, w), (r0, s), (r0, z), (r, r)])
        what = _precond(world, M, w)                                           # S17
        t = _spmv(world, A, what)                                              # S18
        rho_new, r0w, r0s, r0z, rr = split_allreduce_wait(pending)             # S19
        j += 1
        converged = run.record(j, math.sqrt(rr))
        run.notify(j, {"x": x, "r": r, "r0": r0, "rhat": rhat, "w": w, "s": s, "z": z,
                       "q": q, "y": y},
                   {"alpha": alpha, "omega": omega, "rho": rho_new, "tau": math.sqrt(rr)})
        if converged:
            break
        if omega == 0.0:
            breakdown = "omega = 0"
            break
        if rho_new == 0.0:
            breakdown = "<r0,r> = 0"
            break
        beta = (rho_new / rho) * (alpha / omega)
        # <r0,w> + beta*<r0,s> - beta*omega*<r0,z>, fused left to right
        den = fma_op(-(beta * omega), r0z, fma_op(beta, r0s, r0w))
        if den == 0.0:
            breakdown = "alpha denominator = 0"
            break
        alpha = rho_new / den
        rho = rho_new
    return run.report(x, breakdown)


def solve(A: CsrMatrix, b=None, nranks: int = 1, mode: DotMode | str = DotMode.EXBLAS,
          plan: ReductionPlan | None = None, variant: Variant | str = Variant.STANDARD,
          tol: float = 1e-6, max_iters: int | None = None) -> SolveReport:
    """Build a world, the default right-hand side if none is given, and solve."""
    world = RankWorld.create(A.n, nranks, mode, plan)
    if b is None:
        b = build_rhs(A, world)
    config = SolverConfig(tol, max_iters, Variant(variant))
    fn = pbicgstab if config.variant is Variant.STANDARD else pipelined_pbicgstab
    return fn(world, A, b, config)
