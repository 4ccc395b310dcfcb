# policy/__init__.py
from .rast_moe import (
    EncoderConfig, ExpertMask, RoutingResult, UtilizationCounter, RastMoePolicy,
    PolicyOutput, ActResult, bernoulli_log_prob, bernoulli_entropy, sinusoidal_2d, temporal_covariates
)

__all__ = [
    'EncoderConfig', 'ExpertMask', 'RoutingResult', 'UtilizationCounter', 'RastMoePolicy',
    'PolicyOutput', 'ActResult', 'bernoulli_log_prob', 'bernoulli_entropy', 'sinusoidal_2d', 'temporal_covariates',
]
