"""Inverse optimal control with KL and Wasserstein control costs."""
from .core import EmpiricalMeasure, RankingOutcome, euclidean_distance, exact_w1, rank_metrics, smoothed_distance
from .cost_models import Critic, LinearFeatureCost, MLPCost, QuadraticCost, make_cost
from .errors import ConfigError, InvalidInputError, NumericError, PreconditionError, UnsupportedModeError, WiocError
from .kl_ioc import fit_kl, log_likelihood, optimal_weights
from .w_ioc import TransportOptions, fit_w, implicit_gradient, optimal_measure, transport_step

__version__ = "0.1.0"
