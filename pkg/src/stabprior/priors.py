"""Prior strategies over layer weights.

A strategy maps the current posterior of a layer to prior parameters. Priors
marked ``forward_influence`` are also multiplied into the posterior before
weights are sampled; the others only enter the objective through the KL term.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .distributions import GaussianMatrix, kl_diag_gaussian


@dataclass(frozen=True)
class PriorLayerParams:
    """Per-weight prior means and one prior std per output unit."""

    mu_p: np.ndarray
    sigma_p_unit: np.ndarray
    flags: np.ndarray = field(default=None)

    def __post_init__(self):
        sigma = np.asarray(self.sigma_p_unit, dtype=np.float64)
        if np.any(sigma <= 0.0) or not np.all(np.isfinite(sigma)):
            raise ValueError("prior standard deviations must be positive and finite")
        object.__setattr__(self, "sigma_p_unit", sigma)
        if self.flags is None:
            object.__setattr__(self, "flags", np.zeros(sigma.shape, dtype=np.uint8))

    @property
    def n_flagged(self) -> int:
        return int(np.count_nonzero(self.flags))

    def as_gaussian(self) -> GaussianMatrix:
        return GaussianMatrix(self.mu_p, np.broadcast_to(self.sigma_p_unit, np.shape(self.mu_p)))


def stabilising_params(q: GaussianMatrix, fan_in: int | None = None) -> PriorLayerParams:
    """Prior that pins each unit's ReLU variance growth factor to one.

    The prior mean copies the posterior mean. For unit ``j`` with summed
    posterior mean ``m`` and summed posterior variance ``s``, the target layer
    variance is ``gamma = |2 - (1 - 1/pi) m^2|`` and the prior variance per
    incoming weight is ``|s * gamma / (s - gamma)| / fan_in``. ``flags`` is a
    per-unit bitmask (see ``kernels.FLAG_*``): ``s <= gamma`` (variance cannot
    be preserved), a denominator clamped to +-1e-10, or a prior std raised to
    the 1e-8 floor.

    The product posterior meets the target exactly only when a unit's incoming
    weights share one variance; with unequal variances the summed product
    variance falls short of ``gamma``.
    """
    mu = np.atleast_2d(q.mu)
    if fan_in is None:
        fan_in = mu.shape[0]
    sigma_p, flags = kernels.stabilising_sigma(mu, np.atleast_2d(q.sigma), fan_in)
    return PriorLayerParams(np.array(q.mu, dtype=np.float64), sigma_p, flags)


def empirical_bayes_update(q: GaussianMatrix) -> tuple[float, float]:
    """Tied scalar prior ``(mu_p, var_p)`` minimising ``KL(q || p)`` for one layer."""
    if q.mu.size == 0:
        raise ValueError("empty layer")
    mu_p = float(np.mean(q.mu))
    var_p = float(np.mean(q.var + (q.mu - mu_p) ** 2))
    return mu_p, var_p


def combined_params(stab: PriorLayerParams, fixed: tuple[float, float], lam: float) -> PriorLayerParams:
    """Interpolate means linearly and variances geometrically; ``lam=1`` is pure stabilising."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    mu0, var0 = fixed
    if lam == 1.0:
        return stab
    if lam == 0.0:
        shape = np.shape(stab.mu_p)
        return PriorLayerParams(
            np.broadcast_to(np.float64(mu0), shape), np.full(stab.sigma_p_unit.shape, math.sqrt(var0))
        )
    mu_p = lam * np.asarray(stab.mu_p) + (1.0 - lam) * mu0
    log_var = lam * np.log(stab.sigma_p_unit**2) + (1.0 - lam) * math.log(var0)
    return PriorLayerParams(mu_p, np.exp(0.5 * log_var), stab.flags)


class PriorStrategy:
    """Base class; subclasses implement :meth:`layer_prior`."""

    name = "base"
    forward_influence = False

    def layer_prior(self, q: GaussianMatrix) -> PriorLayerParams:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"strategy": self.name}


def _weight_var(var0: float, fan_in: int, fan_in_scaled: bool) -> float:
    return var0 / fan_in if fan_in_scaled else var0


@dataclass(frozen=True)
class FixedGaussian(PriorStrategy):
    """``N(mu0, var0 / fan_in)`` per weight (or ``var0`` when not fan-in scaled)."""

    mu0: float = 0.0
    var0: float = 1.0
    fan_in_scaled: bool = True
    name = "fixed"

    def __post_init__(self):
        if not self.var0 > 0.0:
            raise ValueError("prior variance must be positive")

    def layer_prior(self, q):
        fan_in, units = np.atleast_2d(q.mu).shape
        var = _weight_var(self.var0, fan_in, self.fan_in_scaled)
        return PriorLayerParams(np.broadcast_to(np.float64(self.mu0), q.shape), np.full(units, math.sqrt(var)))

    def describe(self):
        return {"strategy": self.name, "prior_mu": self.mu0, "prior_var": self.var0,
                "prior_fan_in_scaled": self.fan_in_scaled}


@dataclass(frozen=True)
class EmpiricalBayes(PriorStrategy):
    name = "eb"

    def layer_prior(self, q):
        mu_p, var_p = empirical_bayes_update(q)
        units = np.atleast_2d(q.mu).shape[1]
        var_p = max(var_p, kernels.SIGMA_FLOOR**2)
        return PriorLayerParams(np.broadcast_to(np.float64(mu_p), q.shape), np.full(units, math.sqrt(var_p)))


@dataclass(frozen=True)
class SelfStabilising(PriorStrategy):
    name = "stabilising"
    forward_influence = True

    def layer_prior(self, q):
        return stabilising_params(q)


@dataclass(frozen=True)
class Combined(PriorStrategy):
    """Stabilising prior blended with a fixed Gaussian; acts in the forward pass."""

    lam: float = 0.5
    mu0: float = 0.0
    var0: float = 1.0
    fan_in_scaled: bool = True
    name = "combined"
    forward_influence = True

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if not self.var0 > 0.0:
            raise ValueError("prior variance must be positive")

    def layer_prior(self, q):
        fan_in = np.atleast_2d(q.mu).shape[0]
        fixed = (self.mu0, _weight_var(self.var0, fan_in, self.fan_in_scaled))
        return combined_params(stabilising_params(q), fixed, self.lam)

    def describe(self):
        return {"strategy": self.name, "lambda": self.lam, "prior_mu": self.mu0,
                "prior_var": self.var0, "prior_fan_in_scaled": self.fan_in_scaled}


def make_strategy(name: str, *, prior_mu: float = 0.0, prior_var: float = 1.0,
                  fan_in_scaled: bool = True, lam: float = 0.5) -> PriorStrategy:
    name = name.lower()
    if name in ("fixed", "fixedgaussian", "gaussian"):
        return FixedGaussian(prior_mu, prior_var, fan_in_scaled)
    if name in ("eb", "empiricalbayes", "empirical_bayes"):
        return EmpiricalBayes()
    if name in ("stabilising", "stabilizing", "selfstabilising", "stab"):
        return SelfStabilising()
    if name in ("combined", "comb"):
        return Combined(lam, prior_mu, prior_var, fan_in_scaled)
    raise ValueError(f"unknown prior strategy {name!r}")


def layer_kl(q: GaussianMatrix, prior: PriorLayerParams) -> float:
    return kl_diag_gaussian(q, (prior.mu_p, np.broadcast_to(prior.sigma_p_unit, q.shape)))
