"""Diagonal Gaussian weight distributions.

A :class:`GaussianMatrix` holds per-weight means and standard deviations for
one layer, laid out (fan_in, units) so that column ``j`` collects the incoming
weights of output unit ``j``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .numerics import ShapeError


class InvalidSigmaError(ValueError):
    """Raised when a standard deviation is not strictly positive and finite."""


def _check_sigma(sigma: np.ndarray, what: str) -> None:
    sigma = np.asarray(sigma)
    if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0.0):
        raise InvalidSigmaError(f"{what} must be strictly positive and finite")


@dataclass(frozen=True)
class GaussianMatrix:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.shape != mu.shape:
            try:
                sigma = np.broadcast_to(sigma, mu.shape)
            except ValueError:
                raise ShapeError(f"sigma shape {sigma.shape} does not match mu shape {mu.shape}") from None
        _check_sigma(sigma, "sigma")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def shape(self):
        return self.mu.shape

    @property
    def var(self) -> np.ndarray:
        return self.sigma * self.sigma


@dataclass(frozen=True)
class LayerStats:
    """Column sums of weight means (``mu_sum``) and variances (``var_sum``)."""

    mu_sum: np.ndarray
    var_sum: np.ndarray

    @property
    def chi(self) -> np.ndarray:
        """Per-unit variance growth factor of the ReLU recursion."""
        return (kernels.RELU_MEAN_SQ * self.mu_sum**2 + self.var_sum) / 2.0


def layer_stats(q: GaussianMatrix) -> LayerStats:
    mu = np.atleast_2d(q.mu)
    var = np.atleast_2d(q.var)
    return LayerStats(mu.sum(axis=0), var.sum(axis=0))


def _prior_arrays(q: GaussianMatrix, p) -> tuple[np.ndarray, np.ndarray]:
    """Accept a GaussianMatrix or an (mu, sigma) pair broadcastable to q."""
    if isinstance(p, GaussianMatrix):
        mu_p, sigma_p = p.mu, p.sigma
    else:
        mu_p, sigma_p = p
        mu_p = np.asarray(mu_p, dtype=np.float64)
        sigma_p = np.asarray(sigma_p, dtype=np.float64)
    try:
        np.broadcast_shapes(np.shape(mu_p), q.shape)
        np.broadcast_shapes(np.shape(sigma_p), q.shape)
    except ValueError:
        raise ShapeError(
            f"prior shapes {np.shape(mu_p)}/{np.shape(sigma_p)} do not broadcast to {q.shape}"
        ) from None
    _check_sigma(sigma_p, "prior sigma")
    return mu_p, sigma_p


def gaussian_product(q: GaussianMatrix, p) -> GaussianMatrix:
    """Normalised elementwise product ``q * p / Z`` of two diagonal Gaussians.

    ``p`` may carry one standard deviation per output unit (a length-``units``
    vector), which is broadcast over the incoming index.
    """
    mu_p, sigma_p = _prior_arrays(q, p)
    mu_q = np.atleast_2d(q.mu)
    sigma_q = np.atleast_2d(q.sigma)
    mu, sigma = kernels.gaussian_product(
        mu_q, sigma_q, np.broadcast_to(mu_p, q.shape).reshape(mu_q.shape),
        np.broadcast_to(sigma_p, q.shape).reshape(mu_q.shape),
    )[:2]
    return GaussianMatrix(mu.reshape(q.shape), sigma.reshape(q.shape))


def kl_diag_gaussian(q: GaussianMatrix, p) -> float:
    """Closed-form ``KL(q || p)`` summed over all weights."""
    mu_p, sigma_p = _prior_arrays(q, p)
    return kernels.kl_diag(q.mu, q.sigma, mu_p, sigma_p)[0]


def sample_reparam(g: GaussianMatrix, eps: np.ndarray) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != g.shape:
        raise ShapeError(f"noise shape {eps.shape} does not match distribution shape {g.shape}")
    return g.mu + g.sigma * eps
