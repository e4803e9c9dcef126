"""Proxy causal learning with two-stage ridge regression on fixed or learned features."""
from .causal import (
    Policy,
    StructuralEstimate,
    constant_policy,
    estimate_value,
    eval_bridge,
    eval_structural,
    mean_outcome_feature,
    policy_cost,
    policy_price,
    structural_estimate,
)
from .data import ObservationSet
from .datagen import GroundTruth, demand_g, gen_demand, gen_dsprite_surrogate, gen_mastouri
from .two_stage import (
    DfpvModel,
    FixedFeatureModel,
    TrainConfig,
    build_dictionaries,
    fit_fixed_feature,
    train_dfpv,
    tune_lambdas,
)

__version__ = "0.1.0"

__all__ = [
    "DfpvModel",
    "FixedFeatureModel",
    "GroundTruth",
    "ObservationSet",
    "Policy",
    "StructuralEstimate",
    "TrainConfig",
    "build_dictionaries",
    "constant_policy",
    "demand_g",
    "estimate_value",
    "eval_bridge",
    "eval_structural",
    "fit_fixed_feature",
    "gen_demand",
    "gen_dsprite_surrogate",
    "gen_mastouri",
    "mean_outcome_feature",
    "policy_cost",
    "policy_price",
    "structural_estimate",
    "train_dfpv",
    "tune_lambdas",
]
