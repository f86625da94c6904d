"""Prediction-correction solvers for nonlinear model predictive control."""

from .errors import (ColdStartError, ConfigError, DivergenceError,
                     DomainError, EvaluationError, LayoutError,
                     LinearSolveError, PcmpcError, SingularKktError,
                     SolverError)
from .kkt import (DecisionLayout, InversionCounter, KktSystem,
                  LinearSolveReport, eval_gradient, eval_kkt,
                  eval_lagrangian, solve_kkt)
from .models import (ContinuousModel, CostSpec, HorizonProblem, PlantModel,
                     euler_discretize, eval_objective, friction_model,
                     friction_problem, hicks_model, hicks_problem,
                     linear_plant, lqr_problem, quadratic_cost)
from .simulate import (BatchResult, SimulationSpec, TrajectoryLog, replay_states,
                       run_batch, simulate)
from .solver import (N_MPC, PC_MPC, ColdStartReport, SolverConfig, StepReport,
                     cold_start, correct, correct_until, n_mpc_step,
                     pc_mpc_step, predict, shift)

__version__ = "0.1.0"
