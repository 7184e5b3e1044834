"""Lattice networks with spatially correlated Gaussian couplings.

Subpackages: `weights` (covariance models, circulant spectral sampling),
`sde` (quenched Euler-Maruyama), `kernels` (feature covariances, tilted
operators, Volterra resolvents), `limit` (self-consistent march, closed-form
sampler, single-site reduction), `stats` (distances, probes, convergence
ladder), `harness` (pipelines, self-test), `cli`.
"""

__version__ = "0.1.0"

from .activation import Activation, logistic4
from .lattice import LatticeTrajectories, TimeGrid
from .weights import (CovarianceModel, covariance_model, delta_model, product_model,
                      sample_truncated_weights, sample_weights, spectral_density,
                      validate, zero_model)

__all__ = [
    "Activation", "logistic4", "LatticeTrajectories", "TimeGrid",
    "CovarianceModel", "covariance_model", "delta_model", "product_model", "zero_model",
    "sample_weights", "sample_truncated_weights", "spectral_density", "validate",
    "__version__",
]
