"""Numerical substrate: autodiff graph, Gaussian helpers, RNG streams, Adam."""
from .gaussian import (
    VARIANCE_FLOOR,
    DiagGaussian,
    gaussian_log_pdf,
    kl_diag_gaussian,
    positive_variance,
    sample_reparameterized,
)
from .graph import Graph, evaluate, forward_backward
from .optim import Adam
from .rng import child_seed, rng_stream

__all__ = [
    "Adam",
    "DiagGaussian",
    "Graph",
    "VARIANCE_FLOOR",
    "child_seed",
    "evaluate",
    "forward_backward",
    "gaussian_log_pdf",
    "kl_diag_gaussian",
    "positive_variance",
    "rng_stream",
    "sample_reparameterized",
]
