"""Potential-based longitudinal control of vehicle platoons.

Simulation, parameter optimization and a neural surrogate for the
performance-sensitive spacing potential.
"""

from .exceptions import ConstraintError, DomainError, TrainingError
from .model import ForceVector, ModelParams, PlatoonState, f_smooth, feedback_forces, g_gain
from .objective import (ObjectiveSpec, OptimizationResult, check_feasible, evaluate_objective,
                        optimize_parameters)
from .potential import (HILL_WIDTH, PotentialSpec, find_equilibria, max_abs_slope_on_hill,
                        v_eval, v_prime, v_second)
from .simulator import (SafetyCertificate, SimConfig, Trajectory, check_safe_step,
                        max_certified_horizon, simulate, step_exact)
from .surrogate import (Dataset, DatasetSpec, MlpModel, TrainConfig, generate_dataset,
                        gradient_check, predict, train)

__version__ = "0.1.0"
