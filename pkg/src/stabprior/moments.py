"""Monte Carlo validation of the analytic ReLU moment maps.

A single wide unit ``h = sum_i w_i x_i`` is simulated with inputs
``x_i = relu(sqrt(nu) z_i)``, ``z_i ~ N(0, 1)``. Weight noise is
marginalised exactly given the inputs (``sum_i sigma_i eps_i x_i`` is
``N(0, sum_i sigma_i^2 x_i^2)``), so only per-sample input sums are stored and
one input draw serves the whole parameter sweep.

Each map is checked on the weight layout its derivation assumes, with
per-weight variances ``var_tilde / D`` throughout:

* mean: aligned means ``mu_tilde / D`` (they sum to ``mu_tilde``);
* second moment: means of magnitude ``|mu_tilde| / sqrt(D)`` with signs
  redrawn per sample, so cross terms vanish in expectation;
* variance (full map and recursion): the same magnitudes with a fixed,
  balanced sign pattern.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .numerics import make_rng
from .signalprop import (
    LayerMomentParams,
    MomentState,
    mean_prop,
    second_moment,
    variance_prop_full,
    variance_recursion,
)

DEFAULT_SWEEP = (
    (0.0, 2.0, 1.0),
    (0.0, 4.0, 1.0),
    (1.0, 1.0, 1.0),
    (0.5, 2.0, 2.0),
    (1.5, 0.5, 0.5),
    (-1.0, 3.0, 1.5),
    (2.0, 1.0, 1.0),
)

QUADRATURE_POINTS = ((1.0, 1.0, 1.0), (0.5, 2.0, 0.7), (-0.8, 1.5, 2.0))

CSV_COLUMNS = (
    "check", "mu_tilde", "var_tilde", "tau", "nu", "width",
    "analytic", "estimate", "std_err", "z_score", "ratio", "mc_ratio", "passed",
)


@dataclass(frozen=True)
class MomentCheck:
    check: str
    mu_tilde: float
    var_tilde: float
    tau: float
    nu: float
    width: int
    analytic: float
    estimate: float
    std_err: float | None
    passed: bool

    @property
    def z_score(self) -> float | None:
        if self.std_err is None or self.std_err == 0.0:
            return None
        return (self.estimate - self.analytic) / self.std_err

    @property
    def ratio(self) -> float | None:
        """Analytic variance multiplier ``Var[h] / nu`` for variance checks."""
        if self.check.startswith("variance"):
            return self.analytic / self.nu
        return None

    @property
    def mc_ratio(self) -> float | None:
        if self.check.startswith("variance"):
            return self.estimate / self.nu
        return None


def input_sums(width: int, n_samples: int, rng, chunk: int = 1024) -> dict[str, np.ndarray]:
    """Per-sample sums over ``a_i = relu(z_i)`` for a ``width``-wide input."""
    if width < 2 or width % 2:
        raise ValueError("width must be an even number >= 2")
    signs = np.ones(width)
    signs[width // 2:] = -1.0
    out = {k: np.empty(n_samples) for k in ("plain", "square", "balanced", "random")}
    words = (width + 63) // 64
    done = 0
    while done < n_samples:
        b = min(chunk, n_samples - done)
        a = rng.standard_normal((b, width))
        np.maximum(a, 0.0, out=a)
        bits = np.unpackbits(
            rng.bit_generator.random_raw(b * words).view(np.uint8).reshape(b, -1), axis=1
        )[:, :width]
        rand_signs = 2.0 * bits - 1.0
        sl = slice(done, done + b)
        out["plain"][sl] = a.sum(axis=1)
        out["square"][sl] = np.einsum("ij,ij->i", a, a)
        out["balanced"][sl] = a @ signs
        out["random"][sl] = np.einsum("ij,ij->i", a, rand_signs)
        done += b
    return out


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def _var_se(v: np.ndarray) -> tuple[float, float]:
    c = v - v.mean()
    sq = c * c
    return float(sq.sum() / (v.size - 1)), float(sq.std(ddof=1) / math.sqrt(v.size))


def monte_carlo_checks(width: int = 4096, n_samples: int = 100_000, sweep=DEFAULT_SWEEP,
                       seed: int = 0, n_se: float = 3.0) -> list[MomentCheck]:
    rng = make_rng(seed)
    sums = input_sums(width, n_samples, rng)
    noise = rng.standard_normal(n_samples)
    checks = []
    for mu_t, var_t, nu in sweep:
        state = MomentState(0.0, nu)
        p = LayerMomentParams(mu_t, var_t)
        root = math.sqrt(nu)
        weight_noise = np.sqrt(var_t / width * sums["square"]) * noise
        spread = abs(mu_t) / math.sqrt(width)

        h_mean = root * (mu_t / width * sums["plain"] + weight_noise)
        h_second = root * (spread * sums["random"] + weight_noise)
        h_var = root * (spread * sums["balanced"] + weight_noise)

        est, se = _mean_se(h_mean)
        a = mean_prop(state, p)
        checks.append(MomentCheck("mean", mu_t, var_t, 0.0, nu, width, a, est, se, abs(est - a) <= n_se * se))

        est, se = _mean_se(h_second * h_second)
        a = second_moment(state, p)
        checks.append(MomentCheck("second_moment", mu_t, var_t, 0.0, nu, width, a, est, se,
                                  abs(est - a) <= n_se * se))

        est, se = _var_se(h_var)
        for name, a in (("variance_full", variance_prop_full(state, p)),
                        ("variance_recursion", variance_recursion(nu, p))):
            checks.append(MomentCheck(name, mu_t, var_t, 0.0, nu, width, a, est, se,
                                      abs(est - a) <= n_se * se))
    return checks


def _half_range(tau: float, nu: float, power: int) -> float:
    pdf = lambda z: math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)  # noqa: E731
    val, _ = integrate.quad(lambda z: pdf(z) * (tau + math.sqrt(nu) * z) ** power, 0.0, np.inf,
                            epsabs=1e-13, epsrel=1e-13)
    return val


def quadrature_checks(points=QUADRATURE_POINTS, tol: float = 1e-9) -> list[MomentCheck]:
    """Closed forms at ``tau != 0`` against their half-range integrals."""
    checks = []
    for mu_t, var_t, tau in points:
        nu = 1.0
        state = MomentState(tau, nu)
        p = LayerMomentParams(mu_t, var_t)
        a = second_moment(state, p)
        est = (mu_t**2 + var_t) * _half_range(tau, nu, 2)
        checks.append(MomentCheck("second_moment_quad", mu_t, var_t, tau, nu, 0, a, est, None,
                                  abs(a - est) <= tol * max(1.0, abs(a))))
        a = mean_prop(state, p)
        est = mu_t * _half_range(tau, nu, 1)
        checks.append(MomentCheck("mean_quad", mu_t, var_t, tau, nu, 0, a, est, None,
                                  abs(a - est) <= tol * max(1.0, abs(a))))
    return checks


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def write_checks_csv(path, checks) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for c in checks:
            w.writerow([_fmt(v) for v in (c.check, c.mu_tilde, c.var_tilde, c.tau, c.nu, c.width,
                                          c.analytic, c.estimate, c.std_err, c.z_score, c.ratio,
                                          c.mc_ratio, c.passed)])


def format_table(checks) -> str:
    lines = [f"{'check':<20}{'mu':>7}{'var':>7}{'tau':>6}{'nu':>6}{'width':>7}"
             f"{'analytic':>13}{'estimate':>13}{'z':>8}{'ratio':>8}{'mc_ratio':>9}  result"]
    for c in checks:
        z = "" if c.z_score is None else f"{c.z_score:8.2f}"
        r = "" if c.ratio is None else f"{c.ratio:8.3f}"
        mr = "" if c.mc_ratio is None else f"{c.mc_ratio:9.3f}"
        lines.append(
            f"{c.check:<20}{c.mu_tilde:7.2f}{c.var_tilde:7.2f}{c.tau:6.2f}{c.nu:6.2f}{c.width:7d}"
            f"{c.analytic:13.6f}{c.estimate:13.6f}{z:>8}{r:>8}{mr:>9}  {'PASS' if c.passed else 'FAIL'}"
        )
    return "\n".join(lines)
