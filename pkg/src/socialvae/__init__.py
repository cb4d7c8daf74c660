"""Stochastic pedestrian trajectory prediction with a timewise VAE."""
from .data import (ObservationWindow, TrajectoryScene, make_windows, parse_trajectory_file)
from .fpc import fpc_select, sample_predictions
from .metrics import ade, best_of_k, fde, linear_baseline, nll_kde
from .model import ModelConfig, SocialVAE, encode_observation, predict, rollout, training_loss

__version__ = "0.1.0"
