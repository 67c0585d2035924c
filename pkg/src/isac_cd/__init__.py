"""Capacity-distortion tools for action-dependent ISAC channels."""

from .estimator import EstimatorResult, optimal_estimator, policy_distortion
from .model import IsacModel, ModelError, Policy, assemble_joint, load_model, load_policy, validate
from .prob import JointDist, conditional_mutual_information, entropy, mutual_information
from .solver import (CapacityResult, InfeasibleError, MixedModel, SolverOptions, capacity_at, cd_curve,
                     evaluate_policy, mixed_rate, nonstationary_capacity)

__all__ = [
    "CapacityResult", "EstimatorResult", "InfeasibleError", "IsacModel", "JointDist", "MixedModel", "ModelError",
    "Policy", "SolverOptions", "assemble_joint", "capacity_at", "cd_curve", "conditional_mutual_information",
    "entropy", "evaluate_policy", "load_model", "load_policy", "mixed_rate", "mutual_information",
    "nonstationary_capacity", "optimal_estimator", "policy_distortion", "validate",
]
