"""Closed-loop simulation of plant and controller, with full work accounting.

Each run owns its inversion counter; the logged trajectory is exactly
replayable (``states[k+1] == true_plant.step(states[k], inputs[k])``) and the
gradient norm at every applied input is recorded as the computable proxy for
the disturbance induced by solving the receding-horizon problem approximately.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import LayoutError, PcmpcError
from .kkt import InversionCounter, eval_kkt
from .models import HorizonProblem, PlantModel
from .solver import (N_MPC, PC_MPC, ColdStartReport, SolverConfig, StepReport,
                     cold_start, n_mpc_step, pc_mpc_step)

Array = np.ndarray


@dataclass(frozen=True)
class SimulationSpec:
    problem: HorizonProblem
    x0: Array
    steps: int
    controller: str = PC_MPC
    cfg: SolverConfig = field(default_factory=SolverConfig)
    true_plant: Optional[PlantModel] = None   # defaults to problem.plant
    ts: float = 1.0                            # control interval, for time axes
    seed: Optional[int] = None                 # provenance of sampled x0, echoed in logs
    emit_eigs: bool = False                    # log min |eig| of the Hessian (costly)
    label: str = ""

    def __post_init__(self):
        if self.steps < 1:
            raise LayoutError(f"steps must be >= 1, got {self.steps}")
        if self.controller not in (PC_MPC, N_MPC):
            raise ValueError(f"unknown controller {self.controller!r}")
        plant = self.true_plant or self.problem.plant
        if plant.n != self.problem.n or plant.p != self.problem.p:
            raise LayoutError("true plant dimensions disagree with the problem")
        if np.asarray(self.x0).shape != (self.problem.n,):
            raise LayoutError(f"x0 must have shape ({self.problem.n},)")


@dataclass
class TrajectoryLog:
    """Closed-loop record: states, inputs, solver iterates, and work counts."""

    controller: str
    ts: float
    states: Array                 # (steps+1, n)
    inputs: Array                 # (steps, p)
    iterates: Array               # (steps+1, D); iterates[k] solves the problem at states[k]
    reports: list[StepReport]     # one per controller step (produces iterates[k+1])
    cold_start: ColdStartReport
    grad_norm_applied: Array      # (steps,) accuracy of the iterate behind each applied input
    min_abs_eig: Optional[Array]  # (steps,) or None
    counter_total: int            # tallied at the solve boundary
    total_inversions: int         # cold start + per-step report arithmetic
    wall_time_s: float
    seed: Optional[int] = None
    label: str = ""
    gauss_newton: bool = False

    @property
    def steps(self) -> int:
        return self.inputs.shape[0]

    def final_state(self) -> Array:
        return self.states[-1]


def simulate(spec: SimulationSpec) -> TrajectoryLog:
    """Run the feedback loop for ``spec.steps`` control intervals.

    The initial input comes from the offline cold start; every subsequent
    interval runs one controller step at the newly observed state.  The
    controller also runs after the final observation (its input is never
    applied), so the per-step statistics cover exactly ``steps`` intervals.
    """
    problem, cfg = spec.problem, spec.cfg
    plant = spec.true_plant or spec.problem.plant
    layout = problem.layout
    counter = InversionCounter()
    t_start = time.perf_counter()

    z, cold = cold_start(problem, spec.x0, cfg, counter=counter)

    steps = spec.steps
    states = np.empty((steps + 1, problem.n))
    inputs = np.empty((steps, problem.p))
    iterates = np.empty((steps + 1, layout.dim))
    grad_applied = np.empty(steps)
    eigs = np.empty(steps) if spec.emit_eigs else None
    reports: list[StepReport] = []

    states[0] = np.asarray(spec.x0, dtype=float)
    iterates[0] = z
    x = states[0]
    for k in range(steps):
        u = layout.first_input(z)
        inputs[k] = u
        grad_applied[k] = cold.grad_norm if k == 0 else reports[-1].grad_norm_final
        x_next = plant.step(x, u)
        states[k + 1] = x_next
        if spec.controller == PC_MPC:
            _, z, rep = pc_mpc_step(problem, x, x_next, z, cfg, counter=counter)
        else:
            _, z, rep = n_mpc_step(problem, x_next, z, cfg, counter=counter)
        reports.append(rep)
        iterates[k + 1] = z
        if eigs is not None:
            system = eval_kkt(problem, x_next, z)
            eigs[k] = float(np.min(np.abs(scipy.linalg.eigvalsh(system.hess_zz))))
        x = x_next

    total = cold.hessian_inversions + sum(r.hessian_inversions for r in reports)
    return TrajectoryLog(
        controller=spec.controller,
        ts=spec.ts,
        states=states,
        inputs=inputs,
        iterates=iterates,
        reports=reports,
        cold_start=cold,
        grad_norm_applied=grad_applied,
        min_abs_eig=eigs,
        counter_total=counter.count,
        total_inversions=total,
        wall_time_s=time.perf_counter() - t_start,
        seed=spec.seed,
        label=spec.label,
        gauss_newton=problem.plant.gauss_newton,
    )


@dataclass
class BatchResult:
    logs: list[Optional[TrajectoryLog]]
    errors: list[Optional[str]]
    summary: dict


def run_batch(specs: list[SimulationSpec], jobs: int = 1) -> BatchResult:
    """Run independent simulations, tolerating per-spec failures.

    Results keep the input order.  Parallelism uses threads (model objects
    hold closures and are shared read-only); per-run counters make the
    accounting safe.
    """
    logs: list[Optional[TrajectoryLog]] = [None] * len(specs)
    errors: list[Optional[str]] = [None] * len(specs)

    def _one(idx_spec):
        idx, spec = idx_spec
        try:
            logs[idx] = simulate(spec)
        except PcmpcError as exc:
            errors[idx] = f"{type(exc).__name__}: {exc}"

    if jobs > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_one, enumerate(specs)))
    else:
        for item in enumerate(specs):
            _one(item)

    return BatchResult(logs=logs, errors=errors, summary=summarize_batch(logs))


def summarize_batch(logs: list[Optional[TrajectoryLog]]) -> dict:
    """Per-controller statistics of total inversions across a batch of runs."""
    summary: dict = {}
    by_controller: dict[str, list[int]] = {}
    for log in logs:
        if log is not None:
            by_controller.setdefault(log.controller, []).append(log.total_inversions)
    for controller, totals in sorted(by_controller.items()):
        arr = np.asarray(totals, dtype=float)
        q1, med, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
        summary[controller] = {
            "runs": len(totals),
            "total_inversions": [int(t) for t in totals],
            "mean": float(np.mean(arr)),
            "median": float(med),
            "q1": float(q1),
            "q3": float(q3),
            "min": int(np.min(arr)),
            "max": int(np.max(arr)),
        }
    return summary


def replay_states(plant: PlantModel, x0: Array, inputs: Array) -> Array:
    """Re-integrate logged inputs; must reproduce the logged states exactly."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    states = np.empty((inputs.shape[0] + 1, np.asarray(x0).shape[0]))
    states[0] = np.asarray(x0, dtype=float)
    for k in range(inputs.shape[0]):
        states[k + 1] = plant.step(states[k], inputs[k])
    return states
