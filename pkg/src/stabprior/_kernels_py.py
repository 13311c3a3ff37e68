"""Pure numpy implementations of the fused elementwise kernels.

Every function here has a compiled twin in ``_kernels.pyx`` with the same
signature and the same arithmetic; ``stabprior.kernels`` picks one at import.
"""
import numpy as np

SIGMA_FLOOR = 1e-8
DENOM_CLAMP = 1e-10
RELU_MEAN_SQ = 1.0 - 1.0 / np.pi

# bits of the per-unit diagnostic flags returned by stabilising_sigma
FLAG_CLAMPED = 1       # |var_sum - gamma| below DENOM_CLAMP
FLAG_FLOORED = 2       # prior std raised to SIGMA_FLOOR
FLAG_BELOW_TARGET = 4  # var_sum <= gamma: variance cannot be preserved


def softplus_floor(rho):
    """Return ``(sigma, dsigma/drho)`` for sigma = max(softplus(rho), floor)."""
    rho = np.asarray(rho, dtype=np.float64)
    sigma = np.logaddexp(0.0, rho)
    e = np.exp(-np.abs(rho))
    deriv = np.where(rho >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    low = sigma < SIGMA_FLOOR
    if low.any():
        sigma = np.where(low, SIGMA_FLOOR, sigma)
        deriv = np.where(low, 0.0, deriv)
    return sigma, deriv


def stabilising_sigma(mu_q, sigma_q, fan_in):
    """Per-unit prior std and degenerate-unit flags for one layer.

    ``mu_q`` and ``sigma_q`` are (fan_in, units); column j holds the incoming
    weights of unit j.
    """
    mu_sum = mu_q.sum(axis=0)
    var_sum = np.square(sigma_q).sum(axis=0)
    gamma = np.abs(2.0 - RELU_MEAN_SQ * mu_sum * mu_sum)
    denom = var_sum - gamma
    flags = np.where(denom <= 0.0, FLAG_BELOW_TARGET, 0).astype(np.uint8)
    clamp = np.abs(denom) < DENOM_CLAMP
    if clamp.any():
        denom = np.where(clamp, np.where(denom < 0.0, -DENOM_CLAMP, DENOM_CLAMP), denom)
        flags |= np.where(clamp, FLAG_CLAMPED, 0).astype(np.uint8)
    layer_var = np.abs(var_sum * gamma / denom)
    sigma_p = np.sqrt(layer_var / fan_in)
    low = sigma_p < SIGMA_FLOOR
    if low.any():
        sigma_p = np.where(low, SIGMA_FLOOR, sigma_p)
        flags |= np.where(low, FLAG_FLOORED, 0).astype(np.uint8)
    return sigma_p, flags


def gaussian_product(mu_q, sigma_q, mu_p, sigma_p):
    """Normalised product of two diagonal Gaussians plus local partials.

    Returns ``(mu, sigma, dmu/dmu_q, dmu/dsigma_q, dsigma/dsigma_q)``; the
    prior side is treated as constant.
    """
    sq2 = sigma_q * sigma_q
    sp2 = sigma_p * sigma_p
    s = sp2 + sq2
    mu = (mu_q * sp2 + mu_p * sq2) / s
    sigma = sigma_p * sigma_q / np.sqrt(s)
    dmu_dmu = sp2 / s
    dmu_dsigma = 2.0 * sigma_q * (mu_p - mu) / s
    dsigma_dsigma = sigma_p * sp2 / (s * np.sqrt(s))
    return mu, sigma, dmu_dmu, dmu_dsigma, dsigma_dsigma


def kl_diag(mu_q, sigma_q, mu_p, sigma_p):
    """Return ``(KL(q || p), dKL/dmu_q, dKL/dsigma_q)`` summed over entries."""
    diff = mu_q - mu_p
    inv_p2 = 1.0 / (sigma_p * sigma_p)
    kl = np.sum(np.log(sigma_p / sigma_q) + 0.5 * (sigma_q * sigma_q + diff * diff) * inv_p2 - 0.5)
    dmu = diff * inv_p2
    dsigma = sigma_q * inv_p2 - 1.0 / sigma_q
    return float(kl), dmu, dsigma
