"""Decision-vector layout and KKT assembly for the receding-horizon program.

The Lagrangian of the equality-constrained program is

    L(x_now, z) = sum_i stage(xb_i, ub_i) + terminal(xb_H)
                  + lam_0' (xb_0 - x_now)
                  + sum_i lam_{i+1}' (xb_{i+1} - step(xb_i, ub_i))

with z = [xb; ub; lam].  This module evaluates L, its gradient, and the two
second derivatives the tracking solver needs: the full Hessian d2L/dz2
(including constraint curvature, i.e. second derivatives of the dynamics
contracted with the multipliers) and the cross term d2L/dzdx_now, which is the
constant block -I in the rows of the first multiplier.

The dense factor-and-solve in :func:`solve_kkt` is the package's unit of
computational cost: every call bills exactly one "Hessian inversion" to the
supplied counter, so prediction and correction steps are charged identically.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import EvaluationError, LayoutError, LinearSolveError, SingularKktError
from .models import HorizonProblem

Array = np.ndarray

_EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class DecisionLayout:
    """Block offsets of the stacked decision vector ``z = [xb; ub; lam]``.

    Stages are 0-indexed: predicted states ``xb_0 .. xb_H`` (the first is
    pinned to the measured state), inputs ``ub_0 .. ub_{H-1}``, multipliers
    ``lam_0 .. lam_H``.  State ``xb_i`` starts at ``i*n``, input ``ub_i`` at
    ``n(H+1) + i*p``, multiplier ``lam_i`` at ``n(H+1) + pH + i*n``.
    """

    H: int
    n: int
    p: int

    @property
    def dim(self) -> int:
        return self.H * (2 * self.n + self.p) + 2 * self.n

    @property
    def u_offset(self) -> int:
        return self.n * (self.H + 1)

    @property
    def lam_offset(self) -> int:
        return self.n * (self.H + 1) + self.p * self.H

    def x_slice(self, i: int) -> slice:
        return slice(i * self.n, (i + 1) * self.n)

    def u_slice(self, i: int) -> slice:
        off = self.u_offset
        return slice(off + i * self.p, off + (i + 1) * self.p)

    def lam_slice(self, i: int) -> slice:
        off = self.lam_offset
        return slice(off + i * self.n, off + (i + 1) * self.n)

    def pack(self, xbar: Array, ubar: Array, lam: Array) -> Array:
        xbar = np.asarray(xbar, dtype=float).reshape(self.H + 1, self.n)
        ubar = np.asarray(ubar, dtype=float).reshape(self.H, self.p)
        lam = np.asarray(lam, dtype=float).reshape(self.H + 1, self.n)
        return np.concatenate([xbar.ravel(), ubar.ravel(), lam.ravel()])

    def unpack(self, z: Array) -> tuple[Array, Array, Array]:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise LayoutError(f"decision vector must have shape ({self.dim},), got {z.shape}")
        xb = z[: self.u_offset].reshape(self.H + 1, self.n)
        ub = z[self.u_offset: self.lam_offset].reshape(self.H, self.p)
        lam = z[self.lam_offset:].reshape(self.H + 1, self.n)
        return xb, ub, lam

    def first_input(self, z: Array) -> Array:
        return np.array(z[self.u_slice(0)])


@dataclass(frozen=True)
class KktSystem:
    """Gradient, Hessian and state-cross-derivative of the Lagrangian at a point."""

    grad: Array
    hess_zz: Array
    hess_zx: Array


@dataclass(frozen=True)
class LinearSolveReport:
    solution: Array
    condition_estimate: float
    inversions_counted: int = 1


class InversionCounter:
    """Mutable tally of factor-and-solve calls; one instance per simulation."""

    __slots__ = ("count",)

    def __init__(self, count: int = 0):
        self.count = count

    def add(self, k: int = 1) -> None:
        self.count += k

    def __repr__(self) -> str:
        return f"InversionCounter({self.count})"


def _check_point(problem: HorizonProblem, x_now: Array, z: Array):
    lay = problem.layout
    x_now = np.asarray(x_now, dtype=float)
    if x_now.shape != (problem.n,):
        raise LayoutError(f"state must have shape ({problem.n},), got {x_now.shape}")
    return lay, x_now, *lay.unpack(z)


def eval_lagrangian(problem: HorizonProblem, x_now: Array, z: Array) -> float:
    """Scalar Lagrangian; the independent reference for derivative checks."""
    lay, x_now, xb, ub, lam = _check_point(problem, x_now, z)
    cost = problem.cost
    total = sum(cost.stage(xb[i], ub[i]) for i in range(problem.H))
    total += cost.terminal(xb[problem.H])
    total += float(lam[0] @ (xb[0] - x_now))
    for i in range(problem.H):
        total += float(lam[i + 1] @ (xb[i + 1] - problem.plant.step(xb[i], ub[i])))
    return float(total)


def _assemble(problem: HorizonProblem, x_now: Array, z: Array, order: int):
    lay, x_now, xb, ub, lam = _check_point(problem, x_now, z)
    H, n = problem.H, problem.n
    cost, plant = problem.cost, problem.plant
    gauss_newton = plant.gauss_newton

    g = np.empty(lay.dim)
    hm = np.zeros((lay.dim, lay.dim)) if order == 2 else None
    eye = np.eye(n)

    for i in range(H):
        xi, ui, lam_next = xb[i], ub[i], lam[i + 1]
        if order == 2 and not gauss_newton:
            fx, jx, ju, hxx, hxu, huu = plant.eval_derivs(xi, ui, 2)
        else:
            fx, jx, ju = plant.eval_derivs(xi, ui, 1)
        if not np.all(np.isfinite(fx)):
            raise EvaluationError("non-finite plant step", xi, ui)

        sx, su, sl, sl1 = lay.x_slice(i), lay.u_slice(i), lay.lam_slice(i), lay.lam_slice(i + 1)
        g[sx] = cost.stage_grad_x(xi, ui) + lam[i] - jx.T @ lam_next
        g[su] = cost.stage_grad_u(xi, ui) - ju.T @ lam_next
        g[sl1] = xb[i + 1] - fx

        if order == 2:
            if gauss_newton:
                hm[sx, sx] = cost.stage_hess_xx(xi, ui)
                hm[sx, su] = cost.stage_hess_xu(xi, ui)
                hm[su, su] = cost.stage_hess_uu(xi, ui)
            else:
                hm[sx, sx] = cost.stage_hess_xx(xi, ui) - np.einsum("c,cab->ab", lam_next, hxx)
                hm[sx, su] = cost.stage_hess_xu(xi, ui) - np.einsum("c,cab->ab", lam_next, hxu)
                hm[su, su] = cost.stage_hess_uu(xi, ui) - np.einsum("c,cab->ab", lam_next, huu)
            hm[su, sx] = hm[sx, su].T
            hm[sx, sl1] = -jx.T
            hm[sl1, sx] = -jx
            hm[su, sl1] = -ju.T
            hm[sl1, su] = -ju

    sxH = lay.x_slice(H)
    g[sxH] = cost.terminal_grad(xb[H]) + lam[H]
    g[lay.lam_slice(0)] = xb[0] - x_now

    if order == 2:
        hm[sxH, sxH] = cost.terminal_hess(xb[H])
        for i in range(H + 1):
            hm[lay.x_slice(i), lay.lam_slice(i)] += eye
            hm[lay.lam_slice(i), lay.x_slice(i)] += eye
    return g, hm


def eval_gradient(problem: HorizonProblem, x_now: Array, z: Array) -> Array:
    """Analytic gradient of the Lagrangian with respect to ``z``.

    State rows carry stage-cost gradients plus the multiplier coupling, input
    rows the input gradients minus the adjoint term, and multiplier rows the
    constraint residuals (zero exactly on dynamically feasible rollouts).
    """
    return _assemble(problem, x_now, z, order=1)[0]


def eval_kkt(problem: HorizonProblem, x_now: Array, z: Array) -> KktSystem:
    """Gradient plus both second derivatives of the Lagrangian at ``(x_now, z)``.

    For plants without second derivatives the constraint-curvature term is
    dropped (Gauss-Newton mode), which changes the local convergence class;
    callers surface :attr:`PlantModel.gauss_newton` in their reports.
    """
    g, hm = _assemble(problem, x_now, z, order=2)
    lay = problem.layout
    hzx = np.zeros((lay.dim, problem.n))
    hzx[lay.lam_slice(0), :] = -np.eye(problem.n)
    return KktSystem(grad=g, hess_zz=hm, hess_zx=hzx)


def solve_kkt(matrix: Array, rhs: Array, *, counter: InversionCounter | None = None,
              jitter: float = 0.0) -> LinearSolveReport:
    """Dense LU factor-and-solve with a residual contract.

    Bills exactly one inversion per call.  A matrix that is singular to
    working precision raises :class:`SingularKktError` (no silent
    regularization; pass ``jitter`` explicitly for exploratory runs).  The
    returned solution satisfies ``|M s - rhs|_inf <= 1e-8 (1 + |rhs|_inf)``
    or the call raises.
    """
    m = np.asarray(matrix, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise LayoutError(f"KKT matrix must be square, got {m.shape}")
    if rhs.shape != (m.shape[0],):
        raise LayoutError(f"rhs must have shape ({m.shape[0]},), got {rhs.shape}")
    if not np.all(np.isfinite(m)) or not np.all(np.isfinite(rhs)):
        raise EvaluationError("non-finite entries in KKT system")
    if jitter:
        m = m + jitter * np.eye(m.shape[0])

    if counter is not None:
        counter.add(1)

    lu, piv = scipy.linalg.lu_factor(m, check_finite=False)
    gecon, = scipy.linalg.get_lapack_funcs(("gecon",), (m,))
    rcond, info = gecon(lu, np.linalg.norm(m, 1))
    if info != 0 or not np.isfinite(rcond) or rcond < _EPS:
        cond = float("inf") if rcond <= 0 else 1.0 / float(rcond)
        raise SingularKktError(
            f"KKT matrix singular to working precision (condition ~ {cond:.3e})", cond)

    sol = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
    tol = 1e-8 * (1.0 + np.max(np.abs(rhs)))
    resid = rhs - m @ sol
    if np.max(np.abs(resid)) > tol:
        sol = sol + scipy.linalg.lu_solve((lu, piv), resid, check_finite=False)
        resid = rhs - m @ sol
        if np.max(np.abs(resid)) > tol:
            raise LinearSolveError(
                f"solve residual {np.max(np.abs(resid)):.3e} exceeds contract {tol:.3e}")
    return LinearSolveReport(solution=sol, condition_estimate=1.0 / float(rcond))
