"""Optimisers, the training loop, and run logs."""
from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import bnn, data, metrics, signalprop
from .config import ExperimentConfig, dump_config
from .gradengine import GradientError, Tape, forward_and_backward
from .numerics import derive_seed, make_rng
from .priors import make_strategy

# stream tags handed to derive_seed so each consumer of randomness is independent
INIT, DATA, NOISE, EVAL, PROBE = 1, 2, 3, 4, 5


def _check_finite(grads) -> None:
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient for parameter {i}")


class SGD:
    def __init__(self, lr: float = 1e-3):
        self.lr = lr
        self.t = 0

    def step(self, params, grads) -> None:
        """Descent step on the objective whose gradients are ``grads``."""
        _check_finite(grads)
        self.t += 1
        for p, g in zip(params, grads):
            p.value -= self.lr * g


class Adam:
    """Bias-corrected Adam; ``eps`` is added to the square root of the second moment."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params, grads) -> None:
        _check_finite(grads)
        if self.m is None:
            self.m = [np.zeros_like(p.value) for p in params]
            self.v = [np.zeros_like(p.value) for p in params]
        for p, m in zip(params, self.m):
            if m.shape != p.value.shape:
                raise ValueError(f"moment buffer {m.shape} does not match parameter {p.value.shape}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: ExperimentConfig):
    o = cfg.optim
    if o.optimizer == "sgd":
        return SGD(o.lr)
    return Adam(o.lr, o.beta1, o.beta2, o.eps)


@dataclass
class RunLog:
    seed: int
    config_hash: str
    n_classes: int | None
    metrics: list = field(default_factory=list)       # (epoch, split, EvalReport)
    elbo: list = field(default_factory=list)          # (step, epoch, elbo, loglik, kl)
    trace: list = field(default_factory=list)         # signalprop.TraceRow
    epoch_seconds: list = field(default_factory=list)
    diverged: bool = False
    diverged_step: int | None = None
    diverged_reason: str = ""

    @property
    def chance(self) -> float | None:
        return None if not self.n_classes else 1.0 / self.n_classes

    def accuracy_by_epoch(self, split: str = "test") -> dict[int, float]:
        return {e: r.accuracy for e, s, r in self.metrics if s == split}

    def final_accuracy(self, split: str = "test") -> float:
        """Last recorded accuracy; chance level for a diverged run."""
        if self.diverged:
            return self.chance
        acc = self.accuracy_by_epoch(split)
        return acc[max(acc)]


ELBO_COLUMNS = ("step", "epoch", "elbo", "loglik", "kl")


def write_runlog(log: RunLog, directory, cfg: ExperimentConfig, net=None) -> None:
    """Directory layout: config.ini, metrics.csv, elbo.csv, trace.csv, run.json, checkpoint.npz."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "config.ini"), "w") as fh:
        fh.write(dump_config(cfg))
    metrics.write_metrics_csv(os.path.join(directory, "metrics.csv"), log.metrics)
    with open(os.path.join(directory, "elbo.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ELBO_COLUMNS)
        for row in log.elbo:
            w.writerow([metrics.fmt(v) for v in row])
    signalprop.write_trace_csv(os.path.join(directory, "trace.csv"), log.trace)
    meta = {"seed": log.seed, "config_hash": log.config_hash, "diverged": log.diverged,
            "diverged_step": log.diverged_step, "diverged_reason": log.diverged_reason,
            "epoch_seconds": log.epoch_seconds}
    with open(os.path.join(directory, "run.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    if net is not None:
        bnn.save_checkpoint(net, os.path.join(directory, "checkpoint.npz"), log.seed)


def load_datasets(cfg: ExperimentConfig, seed: int = 0) -> tuple[data.Dataset, data.Dataset]:
    d = cfg.data
    if d.kind == "digits":
        train, test = data.load_digits_split(d.n_train, d.n_test)
    elif d.kind == "mnist":
        train, test = data.load_mnist_subset(d.path, d.n_train, d.n_test)
    elif d.kind == "moons":
        rng = make_rng(derive_seed(seed, DATA, 0))
        train = data.gen_two_moons(d.n_train, d.noise, rng, "train")
        test = data.gen_two_moons(d.n_test + d.n_test % 2, d.noise, rng, "test")
    else:
        train = data.load_csv(d.path, "train")
        test = data.load_csv(d.test_path, "test", train.num_classes) if d.test_path else train
    if d.normalise:
        stats = data.fit_normaliser(train)
        train, test = data.normalise(train, stats), data.normalise(test, stats)
    return train, test


def strategy_for(cfg: ExperimentConfig):
    p = cfg.prior
    return make_strategy(p.strategy, prior_mu=p.prior_mu, prior_var=cfg.prior_var,
                         fan_in_scaled=p.fan_in_scaled, lam=p.lam)


def build_for(cfg: ExperimentConfig, n_in: int, n_out: int, rng) -> bnn.Network:
    m = cfg.model
    strategy = strategy_for(cfg)
    widths = [n_in] + [m.width] * m.depth + [n_out]
    return bnn.build_network(widths, m.init_var, rng, strategy, m.estimator, m.likelihood,
                             m.sigma_obs, m.predict_from)


def evaluate(net: bnn.Network, ds: data.Dataset, rng, n_samples: int) -> metrics.EvalReport:
    if net.likelihood == "categorical":
        with np.errstate(over="ignore", invalid="ignore"):
            probs = bnn.predict(net, ds.inputs, rng, n_samples)
        if not np.all(np.isfinite(probs)):
            raise FloatingPointError("non-finite predictive probabilities")
        return metrics.evaluate(probs, ds.targets)
    mean, var = bnn.predict(net, ds.inputs, rng, n_samples)
    return metrics.EvalReport(None, None, None, 0.0, None, 0.0,
                              -metrics.predictive_log_density(mean, var, ds.targets), len(ds))


def zero_means(net: bnn.Network) -> None:
    for layer in net.layers:
        layer.mu[...] = 0.0
        layer.bias[...] = 0.0


def probe(net: bnn.Network, x0, rng, n_samples: int, step: int) -> list:
    """Trace rows for one probe point pushed through ``n_samples`` independent forward passes."""
    x = np.repeat(np.atleast_2d(x0), n_samples, axis=0)
    _, record = bnn.forward(net, x, rng, estimator="lrt")
    return signalprop.trace_entry(step, record, signalprop.depth_profile(net, x0))


def train_run(cfg: ExperimentConfig, seed: int, train: data.Dataset | None = None,
              test: data.Dataset | None = None, controlled: bool = False,
              probe_point=None, keep_net: bool = False):
    """Train one network; returns the :class:`RunLog` (and the network when ``keep_net``).

    Each step recomputes the prior from the current posterior, evaluates the
    minibatch ELBO, backpropagates and takes an optimiser step. A non-finite
    ELBO or gradient ends the run and marks it diverged.
    """
    if train is None:
        train, test = load_datasets(cfg, seed)
    test = test if test is not None else train
    n_out = train.num_classes if cfg.model.likelihood == "categorical" else 1
    net = build_for(cfg, train.n_features, n_out, make_rng(derive_seed(seed, INIT)))
    frozen = set()
    if controlled:
        zero_means(net)
        frozen = {"weight-mu", "bias"}
    params = net.params()
    trainable = [p for p in params if p.role not in frozen]
    opt = make_optimizer(cfg)
    data_rng = make_rng(derive_seed(seed, DATA))
    noise_rng = make_rng(derive_seed(seed, NOISE))
    eval_rng = make_rng(derive_seed(seed, EVAL))
    probe_rng = make_rng(derive_seed(seed, PROBE))
    x0 = test.inputs[0] if probe_point is None else np.asarray(probe_point, dtype=np.float64)
    every = cfg.run.probe_every
    log = RunLog(seed, cfg.digest(), train.num_classes if n_out > 1 else None)

    def record_eval(epoch):
        for split, ds in (("train", train), ("test", test)):
            log.metrics.append((epoch, split, evaluate(net, ds, eval_rng, cfg.run.eval_samples)))

    def record_probe(step):
        log.trace.extend(probe(net, x0, probe_rng, cfg.probe.probe_samples, step))

    try:
        record_eval(0)
    except FloatingPointError as exc:
        log.diverged, log.diverged_step, log.diverged_reason = True, 0, str(exc)
    if every and not log.diverged:
        record_probe(0)
    step = 0
    for epoch in range(1, cfg.run.epochs + 1):
        if log.diverged:
            break
        t0 = time.perf_counter()
        for xb, yb in data.batches(train, cfg.run.batch_size, data_rng):
            tape = Tape()
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    elbo, ll, kl = bnn.elbo_terms(net, xb, yb, noise_rng, len(train), tape)
                value = forward_and_backward(tape, elbo, params)
                opt.step(trainable, [-p.grad for p in trainable])
                tape.release()
            except (GradientError, FloatingPointError, AssertionError, ValueError) as exc:
                if isinstance(exc, ValueError) and all(np.all(np.isfinite(p.value)) for p in params):
                    raise
                log.diverged, log.diverged_step, log.diverged_reason = True, step, str(exc)
                tape.release()
                break
            step += 1
            log.elbo.append((step, epoch, value, float(ll.value), float(kl.value)))
            if every and step % every == 0:
                record_probe(step)
        if log.diverged:
            break
        try:
            record_eval(epoch)
        except FloatingPointError as exc:
            log.diverged, log.diverged_step, log.diverged_reason = True, step, str(exc)
        log.epoch_seconds.append(time.perf_counter() - t0)
    if keep_net:
        return log, net
    return log


def epochs_to_reach(curve: dict[int, float], target: float) -> int | None:
    """First epoch whose accuracy is at least ``target``."""
    for epoch in sorted(curve):
        if curve[epoch] >= target:
            return epoch
    return None


def mean_curve(logs, split: str = "test") -> dict[int, float]:
    """Seed-averaged accuracy per epoch over the epochs every run recorded."""
    curves = [log.accuracy_by_epoch(split) for log in logs]
    common = set.intersection(*(set(c) for c in curves))
    return {e: float(np.mean([c[e] for c in curves])) for e in sorted(common)}


def aggregate_metrics(logs) -> list[tuple[int, str, metrics.EvalReport]]:
    """Per-(epoch, split) average over runs; a field is absent when absent in any run."""
    groups: dict = {}
    for log in logs:
        for epoch, split, r in log.metrics:
            groups.setdefault((epoch, split), []).append(r)
    out = []
    for (epoch, split), reports in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        if len(reports) != len(logs):
            continue

        def avg(name):
            vals = [getattr(r, name) for r in reports]
            if any(v is None for v in vals):
                return None
            return float(np.mean(vals))

        out.append((epoch, split, metrics.EvalReport(
            avg("accuracy"), avg("brier"), avg("acc50"), avg("cov50"), avg("acc90"), avg("cov90"),
            avg("nll"), reports[0].n_examples)))
    return out

