"""Plants, costs, and the receding-horizon problem instance.

Two benchmark systems ship with the package:

* a point mass subject to a steep velocity-dependent friction law, controlled
  by a force input, and
* a dimensionless continuous stirred-tank reactor (concentration and
  temperature states, cooling-flow input) stabilized at a steady state.

Continuous models carry analytic Jacobians and second derivatives of their
vector fields; :func:`euler_discretize` turns them into discrete plants whose
derivatives are the exact chain-rule products over the integration substeps.
All evaluations are pure functions of their arguments, so model and problem
objects are safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, EvaluationError, LayoutError

Array = np.ndarray

# Second derivatives of a vector-valued map, indexed [output, arg1, arg2].
HessTriple = tuple[Array, Array, Array]


@dataclass(frozen=True)
class ContinuousModel:
    """Continuous-time dynamics ``xdot = rhs(x, u)`` with analytic derivatives.

    ``rhs_hess`` returns the three second-derivative tensors
    ``(d2f/dx2, d2f/dxdu, d2f/du2)`` with shapes ``(n,n,n)``, ``(n,n,p)`` and
    ``(n,p,p)``; it may be ``None`` for models that only support a
    Gauss-Newton treatment of constraint curvature.
    """

    n: int
    p: int
    rhs: Callable[[Array, Array], Array]
    rhs_jac_x: Callable[[Array, Array], Array]
    rhs_jac_u: Callable[[Array, Array], Array]
    rhs_hess: Optional[Callable[[Array, Array], HessTriple]] = None
    u_hint: Optional[Array] = None      # steady input, used to seed cold starts
    x_hint: Optional[Array] = None      # operating point (setpoint) if any
    sample_box: Optional[tuple[Array, Array, Array, Array]] = None  # x_lo, x_hi, u_lo, u_hi


@dataclass(frozen=True)
class PlantModel:
    """Discrete-time plant ``x(k+1) = step(x(k), u(k))`` with derivatives.

    ``derivs(x, u, order)`` is the fused evaluation used in the solver hot
    path: it returns ``(x_next, Jx, Ju)`` for ``order=1`` and additionally the
    three second-derivative tensors for ``order=2``.
    """

    n: int
    p: int
    step: Callable[[Array, Array], Array]
    step_jac_x: Callable[[Array, Array], Array]
    step_jac_u: Callable[[Array, Array], Array]
    step_hess: Optional[Callable[[Array, Array], HessTriple]] = None
    derivs: Optional[Callable] = None
    u_hint: Optional[Array] = None
    x_hint: Optional[Array] = None
    sample_box: Optional[tuple[Array, Array, Array, Array]] = None

    def eval_derivs(self, x: Array, u: Array, order: int = 2):
        """Fused step + derivative evaluation, composing fields if needed."""
        if self.derivs is not None:
            return self.derivs(x, u, order)
        if order == 1:
            return self.step(x, u), self.step_jac_x(x, u), self.step_jac_u(x, u)
        if self.step_hess is None:
            raise EvaluationError("model provides no second derivatives", x, u)
        return (self.step(x, u), self.step_jac_x(x, u), self.step_jac_u(x, u),
                *self.step_hess(x, u))

    @property
    def gauss_newton(self) -> bool:
        """True when constraint curvature must be dropped (no second derivatives)."""
        return self.step_hess is None and self.derivs is None


@dataclass(frozen=True)
class CostSpec:
    """Stage cost ``stage(x, u)`` and terminal cost ``terminal(x)`` with derivatives.

    Shipped benchmark costs vanish at their setpoint: ``stage`` at
    ``(x_ref, u_ref)`` and ``terminal`` at ``x_ref``.
    """

    stage: Callable[[Array, Array], float]
    terminal: Callable[[Array], float]
    stage_grad_x: Callable[[Array, Array], Array]
    stage_grad_u: Callable[[Array, Array], Array]
    stage_hess_xx: Callable[[Array, Array], Array]
    stage_hess_uu: Callable[[Array, Array], Array]
    stage_hess_xu: Callable[[Array, Array], Array]
    terminal_grad: Callable[[Array], Array]
    terminal_hess: Callable[[Array], Array]


@dataclass(frozen=True)
class HorizonProblem:
    """One receding-horizon program: plant + cost + horizon length ``H``.

    The decision vector stacks ``H+1`` predicted states, ``H`` inputs and
    ``H+1`` equality multipliers, giving dimension ``H(2n+p) + 2n``.
    """

    plant: PlantModel
    cost: CostSpec
    H: int

    def __post_init__(self):
        if self.H < 1:
            raise LayoutError(f"horizon must be >= 1, got {self.H}")

    @property
    def n(self) -> int:
        return self.plant.n

    @property
    def p(self) -> int:
        return self.plant.p

    @cached_property
    def layout(self):
        from .kkt import DecisionLayout

        return DecisionLayout(self.H, self.n, self.p)


def _as_finite(v: Array, x: Array, u: Array, what: str) -> Array:
    if not np.all(np.isfinite(v)):
        raise EvaluationError(f"non-finite {what}", x, u)
    return v


def euler_discretize(model: ContinuousModel, ts: float, substeps: int = 1) -> PlantModel:
    """Forward-Euler discretization with ``substeps`` internal steps per interval.

    The input is held constant over the whole interval.  Jacobians and second
    derivatives of the resulting step map are the exact chain-rule products of
    the per-substep derivatives ``I + h * d(rhs)``, so the discrete plant stays
    consistent with finite differences to machine-level accuracy.
    """
    if ts <= 0:
        raise ValueError(f"sampling time must be positive, got {ts}")
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    n, p = model.n, model.p
    h = ts / substeps
    eye = np.eye(n)

    def step(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        for _ in range(substeps):
            x = x + h * _as_finite(model.rhs(x, u), x, u, "rhs")
        return x

    def derivs(x, u, order=2):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        jx = eye.copy()
        ju = np.zeros((n, p))
        if order >= 2:
            if model.rhs_hess is None:
                raise EvaluationError("model provides no second derivatives", x, u)
            axx = np.zeros((n, n, n))
            axu = np.zeros((n, n, p))
            auu = np.zeros((n, p, p))
        for _ in range(substeps):
            f = _as_finite(model.rhs(x, u), x, u, "rhs")
            sx = eye + h * model.rhs_jac_x(x, u)
            su = h * model.rhs_jac_u(x, u)
            if order >= 2:
                hxx, hxu, huu = model.rhs_hess(x, u)
                txx, txu, tuu = h * hxx, h * hxu, h * huu
                axx = np.einsum("cd,dab->cab", sx, axx) \
                    + np.einsum("cde,da,eb->cab", txx, jx, jx)
                axu = np.einsum("cd,dab->cab", sx, axu) \
                    + np.einsum("cde,da,eb->cab", txx, jx, ju) \
                    + np.einsum("cdb,da->cab", txu, jx)
                auu = np.einsum("cd,dab->cab", sx, auu) \
                    + np.einsum("cde,da,eb->cab", txx, ju, ju) \
                    + np.einsum("cdb,da->cab", txu, ju) \
                    + np.einsum("cda,db->cab", txu, ju) \
                    + tuu
            ju = sx @ ju + su
            jx = sx @ jx
            x = x + h * f
        if order == 1:
            return x, jx, ju
        return x, jx, ju, axx, axu, auu

    return PlantModel(
        n=n,
        p=p,
        step=step,
        step_jac_x=lambda x, u: derivs(x, u, 1)[1],
        step_jac_u=lambda x, u: derivs(x, u, 1)[2],
        step_hess=None if model.rhs_hess is None else (lambda x, u: derivs(x, u, 2)[3:]),
        derivs=derivs if model.rhs_hess is not None else None,
        u_hint=model.u_hint,
        x_hint=model.x_hint,
        sample_box=model.sample_box,
    )


# ---------------------------------------------------------------------------
# Friction benchmark: M * xddot = u - M * g * F_a(xdot)
# ---------------------------------------------------------------------------

def _sech2(y: Array) -> Array:
    # 1 - tanh^2 avoids cosh overflow for large arguments
    t = np.tanh(y)
    return 1.0 - t * t


def friction_force(v):
    """Velocity-dependent friction law used by the point-mass benchmark.

    ``F_a(v) = 0.25 (tanh(100 v) - tanh(10 v)) + 0.1 tanh(50 v) + 0.01 v``.
    Odd in ``v`` and very steep near zero, which is what makes the benchmark
    hard for warm-started Newton solvers.
    """
    return 0.25 * (np.tanh(100.0 * v) - np.tanh(10.0 * v)) + 0.1 * np.tanh(50.0 * v) + 0.01 * v


def friction_force_d1(v):
    return 25.0 * _sech2(100.0 * v) - 2.5 * _sech2(10.0 * v) + 5.0 * _sech2(50.0 * v) + 0.01


def friction_force_d2(v):
    return (-5000.0 * _sech2(100.0 * v) * np.tanh(100.0 * v)
            + 50.0 * _sech2(10.0 * v) * np.tanh(10.0 * v)
            - 500.0 * _sech2(50.0 * v) * np.tanh(50.0 * v))


def friction_model(gravity: float = 9.81, mass: float = 0.2) -> ContinuousModel:
    """Point mass on a surface with nonlinear dynamic friction.

    State is ``(position, velocity)``; the input is the applied force.
    """
    if mass <= 0:
        raise ValueError(f"mass must be positive, got {mass}")
    g = float(gravity)
    inv_m = 1.0 / float(mass)

    def rhs(x, u):
        return np.array([x[1], inv_m * u[0] - g * friction_force(x[1])])

    def jac_x(x, u):
        return np.array([[0.0, 1.0], [0.0, -g * friction_force_d1(x[1])]])

    def jac_u(x, u):
        return np.array([[0.0], [inv_m]])

    def hess(x, u):
        hxx = np.zeros((2, 2, 2))
        hxx[1, 1, 1] = -g * friction_force_d2(x[1])
        return hxx, np.zeros((2, 2, 1)), np.zeros((2, 1, 1))

    box = (np.array([-0.3, -0.3]), np.array([0.3, 0.3]),
           np.array([-3.0]), np.array([3.0]))
    return ContinuousModel(2, 1, rhs, jac_x, jac_u, hess,
                           u_hint=np.zeros(1), x_hint=np.zeros(2), sample_box=box)


def friction_cost(q_diag=(1000.0, 2.0), r_diag=(1e-3,)) -> CostSpec:
    """Half-quadratic regulation cost for the friction benchmark."""
    return quadratic_cost(np.diag(q_diag), np.diag(r_diag), scale=0.5)


# ---------------------------------------------------------------------------
# Stirred-tank reactor benchmark (dimensionless concentration/temperature)
# ---------------------------------------------------------------------------

HICKS_DEFAULTS = {
    "theta": 10.0,       # residence time
    "k0": 300.0,         # rate constant
    "ea": 25.2,          # activation energy (dimensionless)
    "nu": 1.95e-4,       # heat-transfer scaling
    "u1sf": 600.0,       # cooling-flow scaling
    "zt_feed": 3.0,      # feed temperature
    "zt_cool": 2.9,      # cooling-water temperature
}

HICKS_STEADY_STATE = np.array([0.408, 3.29763])
HICKS_STEADY_INPUT = np.array([0.6167])


def hicks_model(**overrides) -> ContinuousModel:
    """Exothermic CSTR with concentration/temperature states and cooling input.

    ``zc' = (1 - zc)/theta - k0 zc exp(-ea/zT)``
    ``zT' = (zT_feed - zT)/theta + k0 zc exp(-ea/zT) - nu u1sf u (zT - zT_cool)``

    Temperatures must stay positive: the Arrhenius term is singular at
    ``zT = 0`` and evaluation below that raises :class:`DomainError`.
    """
    params = dict(HICKS_DEFAULTS)
    unknown = set(overrides) - set(params)
    if unknown:
        raise ValueError(f"unknown reactor parameters: {sorted(unknown)}")
    params.update(overrides)
    theta, k0, ea = params["theta"], params["k0"], params["ea"]
    nu_u = params["nu"] * params["u1sf"]
    zt_feed, zt_cool = params["zt_feed"], params["zt_cool"]

    def _rate_terms(x, u):
        zc, zt = x[0], x[1]
        if zt <= 0.0:
            raise DomainError("reactor temperature must be positive", x, u)
        e = np.exp(-ea / zt)
        r = k0 * zc * e
        return zc, zt, e, r

    def rhs(x, u):
        zc, zt, e, r = _rate_terms(x, u)
        return np.array([
            (1.0 - zc) / theta - r,
            (zt_feed - zt) / theta + r - nu_u * u[0] * (zt - zt_cool),
        ])

    def jac_x(x, u):
        zc, zt, e, r = _rate_terms(x, u)
        dr_dzc = k0 * e
        dr_dzt = r * ea / zt**2
        return np.array([
            [-1.0 / theta - dr_dzc, -dr_dzt],
            [dr_dzc, -1.0 / theta + dr_dzt - nu_u * u[0]],
        ])

    def jac_u(x, u):
        zc, zt, e, r = _rate_terms(x, u)
        return np.array([[0.0], [-nu_u * (zt - zt_cool)]])

    def hess(x, u):
        zc, zt, e, r = _rate_terms(x, u)
        d2r_czt = k0 * e * ea / zt**2
        d2r_ztzt = r * (ea**2 / zt**4 - 2.0 * ea / zt**3)
        r_hess = np.array([[0.0, d2r_czt], [d2r_czt, d2r_ztzt]])
        hxx = np.stack([-r_hess, r_hess])
        hxu = np.zeros((2, 2, 1))
        hxu[1, 1, 0] = -nu_u
        return hxx, hxu, np.zeros((2, 1, 1))

    box = (HICKS_STEADY_STATE * 0.6, HICKS_STEADY_STATE * 1.4,
           np.array([0.3]), np.array([1.0]))
    return ContinuousModel(2, 1, rhs, jac_x, jac_u, hess,
                           u_hint=HICKS_STEADY_INPUT.copy(),
                           x_hint=HICKS_STEADY_STATE.copy(),
                           sample_box=box)


def hicks_cost(q_diag=(10.0, 2.0), r_diag=(1.0,),
               x_ref=HICKS_STEADY_STATE, u_ref=HICKS_STEADY_INPUT) -> CostSpec:
    """Quadratic cost in coordinates shifted to the reactor setpoint."""
    return quadratic_cost(np.diag(q_diag), np.diag(r_diag),
                          x_ref=x_ref, u_ref=u_ref, scale=1.0)


# ---------------------------------------------------------------------------
# Generic pieces: quadratic costs and linear plants (used by tests and smoke
# configurations; Newton is exact on the resulting problems)
# ---------------------------------------------------------------------------

def quadratic_cost(q: Array, r: Array, x_ref=None, u_ref=None,
                   scale: float = 1.0, q_terminal: Array | None = None) -> CostSpec:
    """Cost ``scale * ((x-x_ref)' Q (x-x_ref) + (u-u_ref)' R (u-u_ref))``.

    The terminal cost applies ``q_terminal`` (default ``Q``) to the state
    deviation only.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    qt = q if q_terminal is None else np.atleast_2d(np.asarray(q_terminal, dtype=float))
    x_ref = np.zeros(q.shape[0]) if x_ref is None else np.asarray(x_ref, dtype=float)
    u_ref = np.zeros(r.shape[0]) if u_ref is None else np.asarray(u_ref, dtype=float)
    s = float(scale)

    return CostSpec(
        stage=lambda x, u: s * (float((x - x_ref) @ q @ (x - x_ref))
                                + float((u - u_ref) @ r @ (u - u_ref))),
        terminal=lambda x: s * float((x - x_ref) @ qt @ (x - x_ref)),
        stage_grad_x=lambda x, u: 2.0 * s * (q @ (x - x_ref)),
        stage_grad_u=lambda x, u: 2.0 * s * (r @ (u - u_ref)),
        stage_hess_xx=lambda x, u: 2.0 * s * q,
        stage_hess_uu=lambda x, u: 2.0 * s * r,
        stage_hess_xu=lambda x, u: np.zeros((q.shape[0], r.shape[0])),
        terminal_grad=lambda x: 2.0 * s * (qt @ (x - x_ref)),
        terminal_hess=lambda x: 2.0 * s * qt,
    )


def linear_plant(a: Array, b: Array) -> PlantModel:
    """Discrete linear plant ``x(k+1) = A x + B u`` with constant derivatives."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    n, p = b.shape
    if a.shape != (n, n):
        raise LayoutError(f"A must be {n}x{n}, got {a.shape}")
    zero = (np.zeros((n, n, n)), np.zeros((n, n, p)), np.zeros((n, p, p)))

    def derivs(x, u, order=2):
        xn = a @ x + b @ u
        if order == 1:
            return xn, a, b
        return xn, a, b, *zero

    return PlantModel(n=n, p=p,
                      step=lambda x, u: a @ x + b @ u,
                      step_jac_x=lambda x, u: a,
                      step_jac_u=lambda x, u: b,
                      step_hess=lambda x, u: zero,
                      derivs=derivs,
                      u_hint=np.zeros(p))


# ---------------------------------------------------------------------------
# Benchmark problem builders
# ---------------------------------------------------------------------------

def friction_problem(horizon: int = 5, ts: float = 0.2, substeps: int = 1,
                     gravity: float = 9.81, mass: float = 0.2,
                     q_diag=(1000.0, 2.0), r_diag=(1e-3,)) -> HorizonProblem:
    plant = euler_discretize(friction_model(gravity, mass), ts, substeps)
    return HorizonProblem(plant, friction_cost(q_diag, r_diag), horizon)


# One unit of the reactor's dimensionless time corresponds to this many wall
# seconds; a 30 s control interval integrates 3 dimensionless units, which is
# what reproduces the benchmark's published closed-loop timescales.
HICKS_TIME_UNIT_S = 10.0


def hicks_problem(horizon: int = 10, ts: float = 30.0, substeps: int = 30,
                  q_diag=(10.0, 2.0), r_diag=(1.0,),
                  time_unit_s: float = HICKS_TIME_UNIT_S, **model_params) -> HorizonProblem:
    span = ts / time_unit_s
    plant = euler_discretize(hicks_model(**model_params), span, substeps)
    return HorizonProblem(plant, hicks_cost(q_diag, r_diag), horizon)


def lqr_problem(a, b, q_diag, r_diag, horizon: int, scale: float = 0.5) -> HorizonProblem:
    plant = linear_plant(a, b)
    cost = quadratic_cost(np.diag(q_diag), np.diag(r_diag), scale=scale)
    return HorizonProblem(plant, cost, horizon)


def eval_objective(problem: HorizonProblem, xbar: Array, ubar: Array) -> float:
    """Cumulative cost of a candidate trajectory (multipliers play no role)."""
    xbar = np.asarray(xbar, dtype=float)
    ubar = np.asarray(ubar, dtype=float)
    H, n, p = problem.H, problem.n, problem.p
    if xbar.shape != (H + 1, n):
        raise LayoutError(f"state trajectory must be {(H + 1, n)}, got {xbar.shape}")
    if ubar.shape != (H, p):
        raise LayoutError(f"input trajectory must be {(H, p)}, got {ubar.shape}")
    total = sum(problem.cost.stage(xbar[i], ubar[i]) for i in range(H))
    return float(total + problem.cost.terminal(xbar[H]))
