"""Formation-aware trajectory optimization."""

from .costs import (
    CostGrad,
    cost_control_effort,
    cost_dynamics,
    cost_formation,
    cost_obstacle,
    cost_swarm,
)
from .lbfgs import LbfgsResult, LbfgsSettings, minimize_lbfgs
from .planner import (
    DynamicLimits,
    OptimizeReport,
    PlannerWeights,
    PlanningProblem,
    evaluate_costs,
    optimize,
    pack,
    solution_guess,
    straight_line_guess,
    time_map,
    time_map_inverse,
)

__all__ = [
    "CostGrad",
    "DynamicLimits",
    "LbfgsResult",
    "LbfgsSettings",
    "OptimizeReport",
    "PlannerWeights",
    "PlanningProblem",
    "cost_control_effort",
    "cost_dynamics",
    "cost_formation",
    "cost_obstacle",
    "cost_swarm",
    "evaluate_costs",
    "minimize_lbfgs",
    "optimize",
    "pack",
    "solution_guess",
    "straight_line_guess",
    "time_map",
    "time_map_inverse",
]
