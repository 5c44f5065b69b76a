"""Finite-type (xi, psi)-superprocess models."""
from .jumps import AtomList, JumpMeasure, LogPerturbedTail, TruncatedPowerLaw, ZeroMeasure, compensated_exp
from .serialize import dumps_model, load_model, loads_model, model_from_dict, model_to_dict, save_model
from .spec import (
    GreyResult,
    Mechanism,
    ModelError,
    ModelSpec,
    MomentKind,
    ValidationReport,
    feller,
    grey_condition,
    pi_moment,
    validate_model,
)

__all__ = [
    "AtomList", "JumpMeasure", "LogPerturbedTail", "TruncatedPowerLaw", "ZeroMeasure",
    "compensated_exp", "dumps_model", "load_model", "loads_model", "model_from_dict",
    "model_to_dict", "save_model", "GreyResult", "Mechanism", "ModelError", "ModelSpec",
    "MomentKind", "ValidationReport", "feller", "grey_condition", "pi_moment", "validate_model",
]
