"""Behavior trees driving a hierarchical stack of tasks on a mobile manipulator."""

from .errors import BtSotError, ConfigurationError, EvaluationError, InvariantViolation
from .hqp import HqpProblem, HqpSolution, damped_pinv, solve, solve_equality_recursive
from .robot import RobotModel, RobotState, forward_kinematics, geometric_jacobian
from .scenario import load_scenario
from .sim import Simulation, run

__version__ = "0.1.0"

__all__ = [
    "BtSotError", "ConfigurationError", "EvaluationError", "InvariantViolation",
    "HqpProblem", "HqpSolution", "damped_pinv", "solve", "solve_equality_recursive",
    "RobotModel", "RobotState", "forward_kinematics", "geometric_jacobian",
    "load_scenario", "Simulation", "run",
]
