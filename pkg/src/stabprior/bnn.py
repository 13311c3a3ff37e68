"""Fully-connected Bayesian networks with mean-field Gaussian weights.

Inputs are stored one example per row and weights are shaped
``(fan_in, units)`` so a layer computes ``h = x @ W + b``. Biases are
deterministic. Each weight has a mean ``mu`` and an unconstrained ``rho`` with
``sigma = max(softplus(rho), 1e-8)``.

When the prior strategy acts in the forward pass, weights are drawn from the
normalised product of prior and posterior (``qtilde``) and the KL term of the
objective is ``KL(qtilde || prior)``; otherwise weights come from the
posterior and the KL term is ``KL(q || prior)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import gradengine as gd
from . import kernels
from .distributions import GaussianMatrix, gaussian_product
from .gradengine import Param, ParamSet, Tape
from .numerics import ShapeError
from .priors import PriorLayerParams, PriorStrategy, make_strategy

RELU = "relu"
IDENTITY = "identity"
ESTIMATORS = ("rt", "lrt")
LIKELIHOODS = ("categorical", "gaussian")
PREDICT_FROM = ("qtilde", "q")


def inv_softplus(sigma):
    sigma = np.asarray(sigma, dtype=np.float64)
    return sigma + np.log(-np.expm1(-sigma))


@dataclass
class Layer:
    mu: np.ndarray
    rho: np.ndarray
    bias: np.ndarray
    activation: str = RELU

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.rho = np.asarray(self.rho, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.mu.ndim != 2 or self.rho.shape != self.mu.shape:
            raise ShapeError(f"weight arrays must share a 2-d shape, got {self.mu.shape} and {self.rho.shape}")
        if self.bias.shape != (self.mu.shape[1],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {self.mu.shape[1]} units")
        if self.activation not in (RELU, IDENTITY):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def fan_in(self) -> int:
        return self.mu.shape[0]

    @property
    def units(self) -> int:
        return self.mu.shape[1]

    @property
    def sigma(self) -> np.ndarray:
        return kernels.softplus_floor(self.rho)[0]

    @property
    def q(self) -> GaussianMatrix:
        return GaussianMatrix(self.mu, self.sigma)


def init_layer(fan_in: int, units: int, init_var: float, rng, activation: str = RELU) -> Layer:
    """Means ~ N(0, init_var/fan_in); every std equals sqrt(init_var/fan_in); zero biases."""
    if not init_var > 0.0:
        raise ValueError("initial variance must be positive")
    scale = math.sqrt(init_var / fan_in)
    mu = rng.standard_normal((fan_in, units)) * scale
    rho = np.full((fan_in, units), float(inv_softplus(scale)))
    return Layer(mu, rho, np.zeros(units), activation)


@dataclass
class Network:
    layers: list[Layer]
    strategy: PriorStrategy
    estimator: str = "lrt"
    likelihood: str = "categorical"
    sigma_obs: float = 0.1
    predict_from: str = "qtilde"
    _params: ParamSet | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.units != b.fan_in:
                raise ShapeError(f"layer widths do not chain: {a.units} -> {b.fan_in}")
        if self.layers[-1].activation != IDENTITY:
            raise ValueError("the last layer must use the identity activation")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.likelihood not in LIKELIHOODS:
            raise ValueError(f"likelihood must be one of {LIKELIHOODS}")
        if self.predict_from not in PREDICT_FROM:
            raise ValueError(f"predict_from must be one of {PREDICT_FROM}")

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].fan_in] + [layer.units for layer in self.layers]

    @property
    def depth(self) -> int:
        return len(self.layers)

    def params(self) -> ParamSet:
        """Trainable parameters; each ``Param.value`` aliases the layer array."""
        if self._params is None:
            ps = ParamSet()
            for i, layer in enumerate(self.layers):
                ps.append(Param(i, "weight-mu", layer.mu))
                ps.append(Param(i, "weight-rho", layer.rho))
                ps.append(Param(i, "bias", layer.bias))
            self._params = ps
        return self._params

    def priors(self) -> list[PriorLayerParams]:
        return [self.strategy.layer_prior(layer.q) for layer in self.layers]


def build_network(widths, init_var: float, rng, strategy: PriorStrategy, estimator: str = "lrt",
                  likelihood: str = "categorical", sigma_obs: float = 0.1,
                  predict_from: str = "qtilde") -> Network:
    """``widths = [D0, D1, ..., DL]``; hidden layers use ReLU, the last is linear."""
    if len(widths) < 2:
        raise ValueError("widths needs an input and at least one output size")
    layers = []
    for i, (fan_in, units) in enumerate(zip(widths, widths[1:])):
        act = IDENTITY if i == len(widths) - 2 else RELU
        layers.append(init_layer(fan_in, units, init_var, rng, act))
    return Network(layers, strategy, estimator, likelihood, sigma_obs, predict_from)


def effective_posterior(layer: Layer, strategy: PriorStrategy) -> GaussianMatrix:
    """Distribution the forward pass samples from under ``strategy``."""
    q = layer.q
    if not strategy.forward_influence:
        return q
    prior = strategy.layer_prior(q)
    return gaussian_product(q, (prior.mu_p, prior.sigma_p_unit))


@dataclass
class ForwardRecord:
    preacts: list = field(default_factory=list)
    eps: list = field(default_factory=list)
    qtilde: list = field(default_factory=list)
    priors: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def __len__(self):
        return len(self.preacts)


def _forward(net: Network, x, rng, tape: Tape, estimator: str, use_prior: bool,
             with_kl: bool, record: ForwardRecord | None, priors=None):
    params = net.params()
    h_node = x if isinstance(x, gd.Node) else tape.constant(x)
    if h_node.value.ndim != 2 or h_node.value.shape[1] != net.layers[0].fan_in:
        raise ShapeError(f"input shape {h_node.shape} does not match input width {net.layers[0].fan_in}")
    kl_total = None
    for i, layer in enumerate(net.layers):
        mu = tape.leaf(None, params[3 * i])
        rho = tape.leaf(None, params[3 * i + 1])
        bias = tape.leaf(None, params[3 * i + 2])
        sigma = gd.softplus(rho)
        if priors is None:
            prior = net.strategy.layer_prior(GaussianMatrix(mu.value, sigma.value))
        else:
            prior = priors[i]
        sigma_p = np.broadcast_to(prior.sigma_p_unit, mu.shape)
        if net.strategy.forward_influence:
            mu_t, sigma_t = gd.gaussian_product(mu, sigma, prior.mu_p, sigma_p)
        else:
            mu_t, sigma_t = mu, sigma
        if with_kl:
            kl = gd.kl_gaussian(mu_t, sigma_t, prior.mu_p, sigma_p)
            kl_total = kl if kl_total is None else kl_total + kl
        if not use_prior:
            mu_t, sigma_t = mu, sigma

        if estimator == "rt":
            eps = rng.standard_normal(mu.shape)
            w = mu_t + sigma_t * eps
            pre = h_node @ w + bias
        else:
            x_val = h_node.value
            eps = rng.standard_normal((x_val.shape[0], layer.units))
            mean = h_node @ mu_t + bias
            var = gd.square(h_node) @ gd.square(sigma_t)
            pre = mean + gd.sqrt(var) * eps
        if record is not None:
            record.preacts.append(pre.value)
            record.eps.append(eps)
            record.qtilde.append((mu_t.value, sigma_t.value))
            record.priors.append(prior)
            record.flags.append(np.asarray(prior.flags, dtype=bool))
        h_node = gd.relu(pre) if layer.activation == RELU else pre
    return h_node, kl_total


def _use_prior(net: Network, predict_from: str | None) -> bool:
    return (predict_from or net.predict_from) == "qtilde"


def forward(net: Network, x, rng, estimator: str | None = None, predict_from: str | None = None):
    """Stochastic forward pass without gradients; returns ``(outputs, ForwardRecord)``."""
    tape = Tape(record_grad=False)
    record = ForwardRecord()
    out, _ = _forward(net, np.asarray(x, dtype=np.float64), rng, tape, estimator or net.estimator,
                      _use_prior(net, predict_from), with_kl=False, record=record)
    tape.release()
    return out.value, record


def forward_rt(net: Network, x, rng, predict_from: str | None = None):
    """One weight sample per layer shared by the whole batch."""
    return forward(net, x, rng, "rt", predict_from)


def forward_lrt(net: Network, x, rng, predict_from: str | None = None):
    """Pre-activations drawn from their induced Gaussian, fresh noise per row."""
    return forward(net, x, rng, "lrt", predict_from)


def log_likelihood(outputs, targets, likelihood: str = "categorical", sigma_obs: float = 0.1) -> float:
    outputs = np.asarray(outputs, dtype=np.float64)
    if likelihood == "categorical":
        targets = np.asarray(targets)
        if targets.shape != (outputs.shape[0],):
            raise ShapeError(f"{len(targets)} targets for {outputs.shape[0]} outputs")
        if targets.size and (targets.min() < 0 or targets.max() >= outputs.shape[1]):
            raise ValueError(f"target class out of range [0, {outputs.shape[1]})")
        z = outputs - outputs.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return float(logp[np.arange(len(targets)), targets].sum())
    if likelihood == "gaussian":
        targets = np.asarray(targets, dtype=np.float64).reshape(outputs.shape)
        r = targets - outputs
        return float(np.sum(-0.5 * gd.LOG_2PI - math.log(sigma_obs) - 0.5 * r * r / sigma_obs**2))
    raise ValueError(f"unknown likelihood {likelihood!r}")


def elbo_terms(net: Network, x, y, rng, n_data: int, tape: Tape | None = None,
               record: ForwardRecord | None = None, priors=None):
    """Build the minibatch ELBO on ``tape``; returns ``(elbo, loglik, kl)`` nodes.

    ``priors`` overrides the per-layer prior parameters (otherwise they are
    recomputed from the current posterior, as during training).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    tape = tape or Tape()
    out, kl = _forward(net, x, rng, tape, net.estimator, True, with_kl=True, record=record, priors=priors)
    if net.likelihood == "categorical":
        y = np.asarray(y)
        if y.size and (y.min() < 0 or y.max() >= out.shape[1]):
            raise ValueError(f"target class out of range [0, {out.shape[1]})")
        ll = gd.categorical_loglik(out, y)
    else:
        ll = gd.gaussian_loglik(out, y, net.sigma_obs)
    elbo = ll * (n_data / x.shape[0]) - kl
    return elbo, ll, kl


def elbo(net: Network, x, y, rng, n_data: int, priors=None) -> float:
    tape = Tape(record_grad=False)
    value = float(elbo_terms(net, x, y, rng, n_data, tape, priors=priors)[0].value)
    tape.release()
    return value


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict(net: Network, x, rng, n_samples: int = 1, predict_from: str | None = None):
    """Monte Carlo predictive distribution.

    Classification returns averaged class probabilities. Regression returns
    ``(mean, var)`` of the Gaussian mixture, including observation noise.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    x = np.asarray(x, dtype=np.float64)
    acc = None
    acc2 = None
    for _ in range(n_samples):
        out, _ = forward(net, x, rng, predict_from=predict_from)
        if net.likelihood == "categorical":
            p = softmax(out)
            acc = p if acc is None else acc + p
        else:
            acc = out if acc is None else acc + out
            acc2 = out * out if acc2 is None else acc2 + out * out
    if net.likelihood == "categorical":
        return acc / n_samples
    mean = acc / n_samples
    var = acc2 / n_samples - mean * mean + net.sigma_obs**2
    return mean, var


def save_checkpoint(net: Network, path, seed: int | None = None) -> None:
    meta = {
        "widths": net.widths,
        "activations": [layer.activation for layer in net.layers],
        "estimator": net.estimator,
        "likelihood": net.likelihood,
        "sigma_obs": net.sigma_obs,
        "predict_from": net.predict_from,
        "strategy": net.strategy.describe(),
        "seed": seed,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for i, layer in enumerate(net.layers):
        arrays[f"mu_{i}"] = layer.mu
        arrays[f"rho_{i}"] = layer.rho
        arrays[f"bias_{i}"] = layer.bias
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[Network, int | None]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        layers = [
            Layer(data[f"mu_{i}"].copy(), data[f"rho_{i}"].copy(), data[f"bias_{i}"].copy(), act)
            for i, act in enumerate(meta["activations"])
        ]
    s = dict(meta["strategy"])
    strategy = make_strategy(
        s.pop("strategy"),
        prior_mu=s.get("prior_mu", 0.0),
        prior_var=s.get("prior_var", 1.0),
        fan_in_scaled=s.get("prior_fan_in_scaled", True),
        lam=s.get("lambda", 0.5),
    )
    net = Network(layers, strategy, meta["estimator"], meta["likelihood"], meta["sigma_obs"], meta["predict_from"])
    return net, meta["seed"]
