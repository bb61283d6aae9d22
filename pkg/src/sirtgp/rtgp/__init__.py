"""Relaxed-thresholded Gaussian-process classifier and its Gibbs sampler."""

from .config import RtgpConfig
from .draws import PosteriorDraws, load_draws, posterior_inclusion, save_draws
from .sampler import ChainData, RtgpState, fit_session, linear_predictor, run_chain

__all__ = [
    "ChainData", "PosteriorDraws", "RtgpConfig", "RtgpState", "fit_session", "linear_predictor",
    "load_draws", "posterior_inclusion", "run_chain", "save_draws",
]
