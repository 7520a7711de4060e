"""Maximum likelihood for the destructive negative binomial cure rate model.

The likelihood is maximized by projected nonlinear conjugate gradient ascent
with an Armijo backtracking line search. The package also ships a simulation
harness for bias/RMSE studies and nonparametric bootstrap standard errors.
"""

from dnbcure.estimator import DestructiveNBCure, auto_initial_guess
from dnbcure.exceptions import (
    ConfigurationError,
    DataError,
    DNBCureError,
    DomainError,
    InferenceError,
    NotAscentDirection,
    NumericalError,
    UsageError,
)
from dnbcure.inference import BootstrapResult, bootstrap_se
from dnbcure.likelihood import grad_log_likelihood, log_likelihood, loglik_and_grad, project
from dnbcure.model import Dataset, ParamVector, Subject, cure_rate, pop_density, pop_survival
from dnbcure.optimizer import FitResult, OptimizerConfig, fit, maximize
from dnbcure.simulation import MCReport, SimSetting, gen_dataset, run_mc_study

__version__ = "0.1.0"

__all__ = [
    "BootstrapResult",
    "ConfigurationError",
    "DNBCureError",
    "DataError",
    "Dataset",
    "DestructiveNBCure",
    "DomainError",
    "FitResult",
    "InferenceError",
    "MCReport",
    "NotAscentDirection",
    "NumericalError",
    "OptimizerConfig",
    "ParamVector",
    "SimSetting",
    "Subject",
    "UsageError",
    "auto_initial_guess",
    "bootstrap_se",
    "cure_rate",
    "fit",
    "gen_dataset",
    "grad_log_likelihood",
    "log_likelihood",
    "loglik_and_grad",
    "maximize",
    "pop_density",
    "pop_survival",
    "project",
    "run_mc_study",
]
