"""Regularized multivariate analysis (PCA, CCA, OPLS) with Procrustes and eigen W-steps."""
from .core import (MvaProblem, MvaVariant, ProjectionModel, Variant, fit_closed_form, objective,
                   prepare, trace_objective)
from .dataset import Dataset, DatasetError, load_csv, load_dataset, load_segment
from .iterate import InitScheme, derive_seed, fit_iterative, stall_check
from .metrics import cef, sparsity_rate, tev
from .regularizers import Penalty, gamma_for_sparsity, u_step
from .wstep import WStepStrategy, w_step, w_step_eigen, w_step_procrustes

__version__ = "0.1.0"

__all__ = [
    "MvaProblem", "MvaVariant", "ProjectionModel", "Variant", "fit_closed_form", "objective",
    "prepare", "trace_objective", "Dataset", "DatasetError", "load_csv", "load_dataset",
    "load_segment", "InitScheme", "derive_seed", "fit_iterative", "stall_check", "cef",
    "sparsity_rate", "tev", "Penalty", "gamma_for_sparsity", "u_step", "WStepStrategy", "w_step",
    "w_step_eigen", "w_step_procrustes",
]
