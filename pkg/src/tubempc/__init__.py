"""Tube-based robust nonlinear MPC with zero-order uncertainty propagation."""

from .errors import (ConfigurationError, IntegrationError, NumericalError,
                     ScenarioError, SolverError)
from .integrators import (ERK4, IRK_GL4, DiscreteStepResult, IntegratorConfig,
                          discrete_step, erk4_step, irk_gl4_step)
from .models import (DiffDriveModel, HangingChainModel, LtiModel, Model,
                     eval_dynamics, eval_jacobians, get_model)
from .ocp import (ConstraintSet, DiffDriveScenario, LeastSquaresCost, NonlinearRow,
                  Obstacle, OcpSpec, build_diff_drive_ocp, build_hanging_chain_ocp,
                  default_diff_drive_scenario, eval_constraints)
from .qp import DenseQp, QpSolution, solve_qp
from .sqp import (Iterate, SolveResult, SqpSettings, SqpSolver, StepResult,
                  constant_guess, sqp_solve)
from .zoro import (TubeState, ZoroConfig, compute_backoff, gamma_from_probability,
                   propagate_uncertainty, zoro_rti_feedback, zoro_rti_prepare,
                   zoro_sqp, zoro_update)

__version__ = "0.1.0"
