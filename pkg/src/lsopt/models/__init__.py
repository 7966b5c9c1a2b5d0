"""Optimization models: weak forms, adjoints, costs and derivative tensors."""

from .base import (
    ElasticCoefficients,
    LinearProblem,
    MaterialIndicator,
    ModelProblem,
    NewtonProblem,
    as_lame,
    resolve_adjoints,
    solve_problem,
    volume_fraction,
    volume_pair,
)
from .compliance import ComplianceModel, CompliancePlusModel
from .heat import HeatModel, HeatPlusModel, HeatTerm
from .inverse import (
    InverseElasticityModel,
    MeasurementPair,
    dirichlet_extension,
    generate_measurements,
)
from .logistic import LogisticModel, default_population_guess

__all__ = [
    "ModelProblem",
    "LinearProblem",
    "NewtonProblem",
    "solve_problem",
    "resolve_adjoints",
    "MaterialIndicator",
    "ElasticCoefficients",
    "as_lame",
    "volume_fraction",
    "volume_pair",
    "ComplianceModel",
    "CompliancePlusModel",
    "HeatModel",
    "HeatPlusModel",
    "HeatTerm",
    "LogisticModel",
    "default_population_guess",
    "InverseElasticityModel",
    "MeasurementPair",
    "dirichlet_extension",
    "generate_measurements",
]
