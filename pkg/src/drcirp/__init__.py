"""Distributionally robust cyclic inventory routing: models, pricing and nested branch-and-price."""

from .ambiguity import BoundsGrid, estimate_ambiguity, robust_bounds, worst_case_lq, worst_case_var
from .bnp import InstanceInfeasible, Pattern, Solution, SolverConfig, solve
from .core_model import AmbiguityCell, CyclicInterval, Instance, ReplenishmentPlan
from .harness import GeneratorConfig, SimulationReport, generate_instance, simulate
from .inventory import InventoryCostCache, f_inv, worst_distribution
from .oracle import CapsExceeded, brute_force_solve

__all__ = [
    "AmbiguityCell", "BoundsGrid", "CapsExceeded", "CyclicInterval", "GeneratorConfig", "Instance",
    "InstanceInfeasible", "InventoryCostCache", "Pattern", "ReplenishmentPlan", "SimulationReport",
    "Solution", "SolverConfig", "brute_force_solve", "estimate_ambiguity", "f_inv", "generate_instance",
    "robust_bounds", "simulate", "solve", "worst_case_lq", "worst_case_var", "worst_distribution",
]
