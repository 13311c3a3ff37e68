"""Classification and regression scores."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

NORM_TOL = 1e-6


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    brier: float
    acc50: float | None
    cov50: float
    acc90: float | None
    cov90: float
    nll: float
    n_examples: int


def _check_probs(probs: np.ndarray) -> None:
    if probs.ndim != 2:
        raise ValueError("probabilities must be a 2-d (examples, classes) array")
    if probs.size and np.max(np.abs(probs.sum(axis=1) - 1.0)) > NORM_TOL:
        raise ValueError("rows of the probability matrix must sum to 1")


def brier(probs, targets) -> float:
    """Mean over examples of the squared distance to the one-hot target."""
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets)
    _check_probs(probs)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(targets)), targets] = 1.0
    return float(np.mean(np.sum((probs - onehot) ** 2, axis=1)))


def accuracy(probs, targets) -> float:
    probs = np.asarray(probs)
    return float(np.mean(probs.argmax(axis=1) == np.asarray(targets)))


def confident_accuracy(probs, targets, threshold: float) -> tuple[float | None, float]:
    """Accuracy over examples whose top probability is strictly above ``threshold``.

    Returns ``(accuracy, coverage)``; accuracy is ``None`` when nothing is selected.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets)
    keep = probs.max(axis=1) > threshold
    n = int(keep.sum())
    coverage = n / len(targets) if len(targets) else 0.0
    if n == 0:
        return None, coverage
    return float(np.mean(probs[keep].argmax(axis=1) == targets[keep])), coverage


def nll(probs, targets, floor: float = 1e-300) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    p = probs[np.arange(len(targets)), np.asarray(targets)]
    return float(-np.mean(np.log(np.maximum(p, floor))))


def evaluate(probs, targets) -> EvalReport:
    probs = np.asarray(probs, dtype=np.float64)
    _check_probs(probs)
    acc50, cov50 = confident_accuracy(probs, targets, 0.5)
    acc90, cov90 = confident_accuracy(probs, targets, 0.9)
    return EvalReport(accuracy(probs, targets), brier(probs, targets), acc50, cov50, acc90, cov90,
                      nll(probs, targets), len(targets))


def rmse(mean, targets) -> float:
    d = np.asarray(mean, dtype=np.float64) - np.asarray(targets, dtype=np.float64).reshape(np.shape(mean))
    return float(math.sqrt(np.mean(d * d)))


def predictive_log_density(mean, var, targets) -> float:
    """Average log density of targets under per-point Gaussians."""
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64).reshape(mean.shape)
    return float(np.mean(-0.5 * np.log(2.0 * math.pi * var) - 0.5 * (t - mean) ** 2 / var))


METRIC_COLUMNS = ("epoch", "split", "accuracy", "brier", "acc50", "cov50", "acc90", "cov90", "nll")


def fmt(v) -> str:
    """CSV cell: empty for absent values, round-trippable repr for floats."""
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_row(epoch: int, split: str, r: EvalReport) -> list[str]:
    return [str(epoch), split] + [fmt(v) for v in (r.accuracy, r.brier, r.acc50, r.cov50,
                                                   r.acc90, r.cov90, r.nll)]


def write_metrics_csv(path, rows) -> None:
    """``rows`` is an iterable of ``(epoch, split, EvalReport)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for epoch, split, report in rows:
            w.writerow(metrics_row(epoch, split, report))
