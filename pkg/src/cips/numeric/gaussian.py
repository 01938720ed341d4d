"""Diagonal Gaussian primitives used outside the autodiff graph."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, ShapeError

VARIANCE_FLOOR = 1e-6
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class DiagGaussian:
    """Gaussian with diagonal covariance.

    ``mean`` and ``variance`` share a shape: ``(d,)`` for one distribution or
    ``(n, d)`` for a batch of ``n`` independent ones.
    """

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.variance, dtype=float)
        if mean.shape != var.shape:
            raise ShapeError(f"mean {mean.shape} and variance {var.shape} differ")
        if not np.all(var > 0):
            raise DomainError("variance entries must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


def kl_diag_gaussian(q: DiagGaussian):
    """KL(q || N(0, I)) in closed form, summed over the last axis."""
    mu, var = q.mean, q.variance
    return 0.5 * np.sum(mu * mu + var - 1.0 - np.log(var), axis=-1)


def gaussian_log_pdf(x, g: DiagGaussian):
    """Log density of ``x`` under ``g``, summed over the last axis."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != g.dim:
        raise ShapeError(f"x has dim {x.shape[-1]}, distribution has dim {g.dim}")
    diff = x - g.mean
    return -0.5 * np.sum(_LOG_2PI + np.log(g.variance) + diff * diff / g.variance, axis=-1)


def sample_reparameterized(g: DiagGaussian, eps) -> np.ndarray:
    """``mean + sqrt(variance) * eps``; the noise is supplied by the caller."""
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] != g.dim:
        raise ShapeError(f"eps has dim {eps.shape[-1]}, distribution has dim {g.dim}")
    return g.mean + np.sqrt(g.variance) * eps


def positive_variance(raw):
    """Softplus plus the variance floor; the transform every variance head uses."""
    return np.logaddexp(0.0, raw) + VARIANCE_FLOOR
