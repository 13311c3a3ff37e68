"""Mean-field moment propagation through ReLU layers, and empirical probes.

The analytic maps use layer-level weight statistics: ``mu_tilde`` is the sum
of a unit's incoming weight means and ``var_tilde`` the sum of their
variances. ``tau`` and ``nu`` are the mean and variance of the incoming
pre-activation signal.

The closed forms for ``tau != 0`` are those of the half-range integrals
``int_0^inf phi(z) (tau + sqrt(nu) z)^k dz``; they coincide with the exact
Gaussian ReLU moments only at ``tau = 0``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .distributions import layer_stats
from .kernels import RELU_MEAN_SQ

SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class MomentState:
    tau: float
    nu: float

    def __post_init__(self):
        if self.nu < 0.0:
            raise ValueError("signal variance must be non-negative")


@dataclass(frozen=True)
class LayerMomentParams:
    mu_tilde: float
    var_tilde: float
    mu_b: float = 0.0
    var_b: float = 0.0

    def __post_init__(self):
        if self.var_tilde < 0.0 or self.var_b < 0.0:
            raise ValueError("variances must be non-negative")


def second_moment(state: MomentState, p: LayerMomentParams) -> float:
    """``E[h^2]`` of a unit fed by a ReLU signal."""
    tau, nu = state.tau, state.nu
    relu_sq = tau * tau / 2.0 + 2.0 * tau * math.sqrt(nu) / SQRT_2PI + nu / 2.0
    return (p.mu_tilde**2 + p.var_tilde) * relu_sq + p.mu_b**2 + p.var_b


def mean_prop(state: MomentState, p: LayerMomentParams) -> float:
    return p.mu_tilde * (state.tau / 2.0 + math.sqrt(state.nu / (2.0 * math.pi))) + p.mu_b


def variance_prop_full(state: MomentState, p: LayerMomentParams) -> float:
    tau, nu = state.tau, state.nu
    root = math.sqrt(nu / (2.0 * math.pi))
    mean_part = tau * tau / 4.0 + tau * root + RELU_MEAN_SQ * nu / 2.0
    var_part = tau * tau / 2.0 + 2.0 * tau * root + nu / 2.0
    return p.mu_tilde**2 * mean_part + p.var_tilde * var_part + p.var_b


def growth_factor(mu_tilde, var_tilde):
    """Per-layer variance multiplier ``[(1 - 1/pi) mu^2 + var] / 2``."""
    return (RELU_MEAN_SQ * np.square(mu_tilde) + var_tilde) / 2.0


def variance_recursion(nu_prev: float, stats) -> float:
    """Zero-mean-input variance map ``nu -> chi * nu``.

    ``stats`` is a :class:`LayerMomentParams`, a ``(mu_tilde, var_tilde)``
    pair, or a :class:`~stabprior.distributions.LayerStats`; for the latter
    the per-unit factors are averaged over units.
    """
    if nu_prev < 0.0:
        raise ValueError("signal variance must be non-negative")
    if isinstance(stats, LayerMomentParams):
        chi = growth_factor(stats.mu_tilde, stats.var_tilde)
    elif hasattr(stats, "mu_sum"):
        chi = float(np.mean(growth_factor(stats.mu_sum, stats.var_sum)))
    else:
        chi = growth_factor(*stats)
    return float(chi * nu_prev)


def input_variance(x0) -> float:
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    return float(x0 @ x0 / x0.size)


def depth_profile(net, x0, strategy=None) -> list[float]:
    """Analytic ``nu^l`` for ``l = 1..L`` from the effective posteriors of ``net``.

    The base case is ``x0 . x0 / D0`` and every layer, the first included,
    applies the zero-mean recursion.
    """
    from .bnn import effective_posterior

    strategy = strategy or net.strategy
    nu = input_variance(x0)
    out = []
    for layer in net.layers:
        nu = variance_recursion(nu, layer_stats(effective_posterior(layer, strategy)))
        out.append(nu)
    return out


def empirical_probe(record) -> np.ndarray:
    """Population variance of each layer's pre-activation vector.

    Rows of a batched record are treated as repeated probes and their
    variances averaged.
    """
    return np.array([float(np.mean(np.var(np.atleast_2d(h), axis=1))) for h in record.preacts])


def flagged_counts(record) -> list[int]:
    return [int(np.count_nonzero(f)) for f in record.flags]


def log_variance_slope(variances: Sequence[float]) -> float:
    """Least-squares slope of ``log(variance)`` against layer index."""
    v = np.asarray(variances, dtype=np.float64)
    layers = np.arange(1, len(v) + 1, dtype=np.float64)
    return float(np.polyfit(layers, np.log(v), 1)[0])


@dataclass(frozen=True)
class TraceRow:
    step: int
    layer: int
    empirical_var: float
    analytic_var: float
    flagged_units: int


def trace_entry(step: int, record, analytic: Sequence[float]) -> list[TraceRow]:
    emp = empirical_probe(record)
    flags = flagged_counts(record)
    return [
        TraceRow(step, i + 1, float(emp[i]), float(analytic[i]), flags[i]) for i in range(len(emp))
    ]


TRACE_COLUMNS = ("step", "layer", "empirical_var", "analytic_var", "flagged_units")


def write_trace_csv(path, rows: Iterable[TraceRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow([r.step, r.layer, repr(r.empirical_var), repr(r.analytic_var), r.flagged_units])


def read_trace_csv(path) -> list[TraceRow]:
    with open(path, newline="") as fh:
        return [
            TraceRow(int(r["step"]), int(r["layer"]), float(r["empirical_var"]),
                     float(r["analytic_var"]), int(r["flagged_units"]))
            for r in csv.DictReader(fh)
        ]
