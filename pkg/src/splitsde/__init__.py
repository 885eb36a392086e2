"""Splitting schemes and pseudo-likelihoods for scalar SDEs with nonlinear diffusion."""
__version__ = "0.1.0"

from .models import (MODELS, DEFAULT_PARAMS, DomainError, InverseUndefined, Unsupported,
                     ParamVector, get_model)
from .rng import StreamKey, Purpose, make_noise_grid, make_noise_matrix, coarsen
from .schemes import SchemeKind, simulate_path, simulate_paths, step
from .likelihoods import EstimatorKind, ObservationSet, nll, transition_density
from .optimize import NmConfig, fit, nelder_mead
from .analysis import (strong_error_curves, fit_order, inference_study, one_step_wasserstein,
                       normality_diagnostic)
