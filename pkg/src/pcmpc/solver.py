"""Prediction, correction, warm starts, and the two receding-horizon controllers.

The tracking controller seeds each new problem with a first-order prediction
of how the optimizer moves with the measured state (one factor-and-solve),
then polishes with full Newton corrections until the gradient norm falls
below the accuracy target.  The baseline controller seeds with a stage shift
of the previous solution instead and relies on corrections alone.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ColdStartError, DivergenceError, LayoutError
from .kkt import (DecisionLayout, InversionCounter, eval_gradient, eval_kkt,
                  solve_kkt)
from .models import HorizonProblem

Array = np.ndarray

PC_MPC = "pcmpc"
N_MPC = "nmpc"

JITTER_VALUE = 1e-8


@dataclass(frozen=True)
class SolverConfig:
    """Accuracy and iteration limits for the per-interval solves.

    ``epsilon`` is compared against the Euclidean norm of the Lagrangian
    gradient.  ``n_max`` caps corrections per control interval; hitting it
    without reaching ``epsilon`` is reported as not converged rather than an
    error.  The cold-start solve is damped Newton on the squared gradient
    norm with backtracking.
    """

    epsilon: float = 1e-4
    n_max: int = 50
    cold_max_iters: int = 200
    cold_armijo_c: float = 1e-4
    cold_backtrack_ratio: float = 0.5
    cold_epsilon: Optional[float] = None  # defaults to epsilon
    jitter: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {self.n_max}")

    @property
    def epsilon_cold(self) -> float:
        return self.epsilon if self.cold_epsilon is None else self.cold_epsilon

    @property
    def jitter_value(self) -> float:
        return JITTER_VALUE if self.jitter else 0.0


@dataclass(frozen=True)
class StepReport:
    """Work accounting for one control interval.

    The invariant ``hessian_inversions = corrections_used + 1`` holds for the
    prediction-correction controller (the extra solve is the prediction) and
    ``hessian_inversions = corrections_used`` for the shift-seeded baseline.
    """

    controller: str
    corrections_used: int
    hessian_inversions: int
    grad_norm_initial: float
    grad_norm_after_prediction: Optional[float]
    grad_norm_final: float
    converged: bool


@dataclass(frozen=True)
class ColdStartReport:
    iterations: int
    hessian_inversions: int
    grad_norm: float
    converged: bool


def predict(problem: HorizonProblem, x_k: Array, x_next: Array, z_k: Array, *,
            counter: InversionCounter | None = None, jitter: float = 0.0) -> Array:
    """First-order tracking update of the iterate under the state change.

    Moves ``z`` by ``-(d2L/dz2)^{-1} (d2L/dzdx) (x_next - x_k)`` evaluated at
    the old point.  Because the cross derivative is ``-I`` in the first
    multiplier rows, the right-hand side is just ``-dx`` placed there; the
    cost is a single factor-and-solve.  With ``x_next == x_k`` the update is
    the identity (up to the solve residual).
    """
    z_k = np.asarray(z_k, dtype=float)
    dx = np.asarray(x_next, dtype=float) - np.asarray(x_k, dtype=float)
    system = eval_kkt(problem, x_k, z_k)
    rhs = np.zeros(problem.layout.dim)
    rhs[problem.layout.lam_slice(0)] = -dx
    rep = solve_kkt(system.hess_zz, rhs, counter=counter, jitter=jitter)
    return z_k - rep.solution


def correct(problem: HorizonProblem, x_now: Array, z: Array, *,
            counter: InversionCounter | None = None, jitter: float = 0.0) -> Array:
    """One full (unit step) Newton iteration on the first-order conditions."""
    z = np.asarray(z, dtype=float)
    system = eval_kkt(problem, x_now, z)
    rep = solve_kkt(system.hess_zz, system.grad, counter=counter, jitter=jitter)
    return z - rep.solution


@dataclass
class CorrectionRun:
    corrections: int
    grad_norm_initial: float
    grad_norm_final: float
    converged: bool
    iterates: Optional[list] = None


def correct_until(problem: HorizonProblem, x_now: Array, z0: Array,
                  cfg: SolverConfig, *, counter: InversionCounter | None = None,
                  record_iterates: bool = False) -> tuple[Array, CorrectionRun]:
    """Run corrections while the gradient norm exceeds ``epsilon``, capped at ``n_max``.

    A non-finite iterate raises :class:`DivergenceError` with the last finite
    iterate attached; unit steps are used throughout, so divergence is
    surfaced rather than damped.
    """
    z = np.asarray(z0, dtype=float)
    jitter = cfg.jitter_value
    trail = [z.copy()] if record_iterates else None
    grad = eval_gradient(problem, x_now, z)
    gn = float(np.linalg.norm(grad))
    gn0 = gn
    j = 0
    while gn > cfg.epsilon and j < cfg.n_max:
        system = eval_kkt(problem, x_now, z)
        rep = solve_kkt(system.hess_zz, system.grad, counter=counter, jitter=jitter)
        z_new = z - rep.solution
        if not np.all(np.isfinite(z_new)):
            raise DivergenceError("correction produced a non-finite iterate", z)
        z = z_new
        j += 1
        if trail is not None:
            trail.append(z.copy())
        grad = eval_gradient(problem, x_now, z)
        gn = float(np.linalg.norm(grad))
        if not np.isfinite(gn):
            raise DivergenceError("gradient went non-finite after correction", z)
    return z, CorrectionRun(j, gn0, gn, gn <= cfg.epsilon, trail)


def shift(z: Array, layout: DecisionLayout) -> Array:
    """Stage shift of a solution: every block moves one stage forward.

    States and multipliers repeat their last (terminal) block, inputs repeat
    the last input.  A constant-block vector is a fixed point.
    """
    H, n, p = layout.H, layout.n, layout.p
    xb, ub, lam = layout.unpack(z)
    xb2 = np.vstack([xb[1:], xb[-1:]])
    ub2 = np.vstack([ub[1:], ub[-1:]]) if H > 1 else ub.copy()
    lam2 = np.vstack([lam[1:], lam[-1:]])
    return layout.pack(xb2, ub2, lam2)


def rollout_seed(problem: HorizonProblem, x0: Array, u_const: Array | None = None) -> Array:
    """Dynamically feasible seed: roll the plant forward under a constant input."""
    n, p, H = problem.n, problem.p, problem.H
    if u_const is None:
        u_const = problem.plant.u_hint
        u_const = np.zeros(p) if u_const is None else np.asarray(u_const, dtype=float)
    xb = np.empty((H + 1, n))
    xb[0] = np.asarray(x0, dtype=float)
    for i in range(H):
        xb[i + 1] = problem.plant.step(xb[i], u_const)
    ub = np.tile(u_const, (H, 1))
    return problem.layout.pack(xb, ub, np.zeros((H + 1, n)))


def cold_start(problem: HorizonProblem, x0: Array, cfg: SolverConfig, *,
               counter: InversionCounter | None = None) -> tuple[Array, ColdStartReport]:
    """Offline solve of the initial problem by globalized Newton.

    Seeds with a constant-input rollout from ``x0`` (zero multipliers), then
    iterates Newton steps: the full step is taken when it decreases the
    gradient norm, otherwise the step is backtracked until an Armijo-type
    decrease of the squared norm holds.  Near indefinite or ill-conditioned
    points the Newton direction can stall the line search; a Levenberg
    fallback on the squared gradient norm then takes over for that iteration
    (every factorization is billed).  Raises :class:`ColdStartError` with the
    best iterate when the budget runs out.
    """
    z = rollout_seed(problem, x0)
    jitter = cfg.jitter_value
    tol = cfg.epsilon_cold
    gn = float(np.linalg.norm(eval_gradient(problem, x0, z)))
    best_z, best_gn = z, gn
    iters = 0
    inversions = 0
    while gn > tol and iters < cfg.cold_max_iters:
        system = eval_kkt(problem, x0, z)
        rep = solve_kkt(system.hess_zz, system.grad, counter=counter, jitter=jitter)
        step_dir = rep.solution
        iters += 1
        inversions += 1
        t = 1.0
        z_try = z - step_dir
        gn_try = _safe_norm(problem, x0, z_try)
        if not gn_try < gn:
            # Armijo on |grad|^2 along the Newton direction
            while t > 1e-14:
                t *= cfg.cold_backtrack_ratio
                z_try = z - t * step_dir
                gn_try = _safe_norm(problem, x0, z_try)
                if gn_try**2 <= (1.0 - 2.0 * cfg.cold_armijo_c * t) * gn**2:
                    break
        if t < 1e-2:
            # Line search crawling: Levenberg step on |grad|^2.  Direction
            # (H^2 + mu I)^-1 H g is always descent and turns into a short
            # gradient step as mu grows.
            h = system.hess_zz
            hg = h @ system.grad
            mu = 1e-8 * float(np.trace(h @ h)) / h.shape[0]
            accepted = False
            for _ in range(25):
                lm = solve_kkt(h @ h + mu * np.eye(h.shape[0]), hg, counter=counter)
                inversions += 1
                z_lm = z - lm.solution
                gn_lm = _safe_norm(problem, x0, z_lm)
                if gn_lm < gn:
                    z_try, gn_try = z_lm, gn_lm
                    accepted = True
                    break
                mu *= 10.0
            if not accepted:
                raise ColdStartError(
                    f"line search stalled at gradient norm {best_gn:.3e}",
                    best_z, best_gn)
        z, gn = z_try, gn_try
        if gn < best_gn:
            best_z, best_gn = z, gn
    if gn > tol:
        raise ColdStartError(
            f"no convergence in {cfg.cold_max_iters} iterations "
            f"(gradient norm {best_gn:.3e} > {tol:.3e})", best_z, best_gn)
    return z, ColdStartReport(iters, inversions, gn, True)


def _safe_norm(problem, x0, z) -> float:
    if not np.all(np.isfinite(z)):
        return float("inf")
    try:
        g = eval_gradient(problem, x0, z)
    except Exception:
        return float("inf")
    gn = float(np.linalg.norm(g))
    return gn if np.isfinite(gn) else float("inf")


def pc_mpc_step(problem: HorizonProblem, x_k: Array, x_next: Array, z_k: Array,
                cfg: SolverConfig, *, counter: InversionCounter | None = None
                ) -> tuple[Array, Array, StepReport]:
    """One prediction-correction interval: predict at the old point, correct at the new.

    Returns the next applied input (first input block of the updated
    iterate), the iterate itself, and the work report; the prediction solve
    is included in the inversion count.
    """
    gn_initial = float(np.linalg.norm(eval_gradient(problem, x_next, z_k)))
    z0 = predict(problem, x_k, x_next, z_k, counter=counter, jitter=cfg.jitter_value)
    z1, run = correct_until(problem, x_next, z0, cfg, counter=counter)
    report = StepReport(
        controller=PC_MPC,
        corrections_used=run.corrections,
        hessian_inversions=run.corrections + 1,
        grad_norm_initial=gn_initial,
        grad_norm_after_prediction=run.grad_norm_initial,
        grad_norm_final=run.grad_norm_final,
        converged=run.converged,
    )
    return problem.layout.first_input(z1), z1, report


def n_mpc_step(problem: HorizonProblem, x_next: Array, z_k: Array,
               cfg: SolverConfig, *, counter: InversionCounter | None = None
               ) -> tuple[Array, Array, StepReport]:
    """One baseline interval: shift the previous solution, then correct.

    The shift is a permutation and is not billed; inversions equal the
    number of corrections.
    """
    seed = shift(np.asarray(z_k, dtype=float), problem.layout)
    z1, run = correct_until(problem, x_next, seed, cfg, counter=counter)
    report = StepReport(
        controller=N_MPC,
        corrections_used=run.corrections,
        hessian_inversions=run.corrections,
        grad_norm_initial=run.grad_norm_initial,
        grad_norm_after_prediction=None,
        grad_norm_final=run.grad_norm_final,
        converged=run.converged,
    )
    return problem.layout.first_input(z1), z1, report
