"""Optimistic exploration for finite POMDPs with exact operator identities."""

from .bellman import apply_B, apply_P, build_all_B, build_B_tensor, compute_values, evaluate_J
from .estimation import TripleDataset, compute_loss, confidence_set
from .linear import build_bridge, embed_tabular
from .model import MixingPolicy, ParameterFamily, Policy, TabularModel, mix
from .planner import beta_min, optimistic_plan, plan_exact, run_optenet

__all__ = [
    "TabularModel",
    "ParameterFamily",
    "Policy",
    "MixingPolicy",
    "mix",
    "embed_tabular",
    "build_bridge",
    "build_B_tensor",
    "build_all_B",
    "apply_P",
    "apply_B",
    "compute_values",
    "evaluate_J",
    "TripleDataset",
    "compute_loss",
    "confidence_set",
    "plan_exact",
    "optimistic_plan",
    "beta_min",
    "run_optenet",
]
__version__ = "0.1.0"
