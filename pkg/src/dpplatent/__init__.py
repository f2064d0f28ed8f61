"""Determinantal point process priors for repulsive mixtures and latent feature allocation."""

from .dpp import cardinality_pmf, enumerate_finite_dpp, log_det_psd, sample_finite_dpp
from .featalloc import FeaturePriorConfig, fit_features, simulate_feature_data
from .kernel import GaussianSpectralKernel, HammingKernel
from .mixture import MixturePriorConfig, fit_mixture, simulate_mixture_data
from .summarize import (
    adjusted_rand_index,
    coclustering_matrix,
    density_on_grid,
    feature_point_estimate,
    k_distribution,
    k_mode,
    match_and_score_features,
    point_estimate_partition,
)
from .trace import PosteriorTrace, Schedule, read_trace, write_trace

__version__ = "0.1.0"
