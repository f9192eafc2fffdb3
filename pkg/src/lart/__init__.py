"""Joint modelling of response accuracy and chain-of-thought length.

Accuracy follows a probit item response model in a latent ability ``theta``;
log lengths follow a normal factor model in a latent speed ``tau``; the two
traits are bivariate normal with correlation ``rho``.
"""

from .cat import CatSession, record_response, select_next_item, start_session
from .harness import SimConfig, gen_synthetic, rmse_report
from .io import load_dataset, load_model, save_dataset, save_model
from .kernels import RngStream, SamplingError
from .model import LatentTraits, PopulationParams, ResponseDataset, complete_log_posterior, marginal_moments, validate
from .saem import FitConfig, FitResult, fit_irt_baseline, orientation_fix, saem_fit
from .spectral import SpectralConfig, spectral_initialize
from .traits import TraitEstimate, confidence_interval, information_matrix, map_estimate, score

__all__ = [
    "CatSession", "FitConfig", "FitResult", "LatentTraits", "PopulationParams", "ResponseDataset",
    "RngStream", "SamplingError", "SimConfig", "SpectralConfig", "TraitEstimate",
    "complete_log_posterior", "confidence_interval", "fit_irt_baseline", "gen_synthetic",
    "information_matrix", "load_dataset", "load_model", "map_estimate", "marginal_moments",
    "orientation_fix", "record_response", "rmse_report", "saem_fit", "save_dataset", "save_model",
    "score", "select_next_item", "spectral_initialize", "start_session", "validate",
]
