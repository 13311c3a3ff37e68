"""Command-line entry point: ``stabprior {train,grid,probe,moments}``."""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import metrics, moments, signalprop, svg, train
from .bnn import Layer, effective_posterior, inv_softplus
from .distributions import layer_stats
from .config import ConfigError, ExperimentConfig, load_config

EXIT_OK, EXIT_CHECK, EXIT_CONFIG = 0, 1, 2

GRID_COLUMNS = ("depth", "variance", "strategy", "chi", "mean_accuracy", "diverged_fraction", "n_seeds")


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "predict_from", None):
        cfg = cfg.with_("model", predict_from=args.predict_from)
    if getattr(args, "out", None):
        cfg = cfg.with_("run", out=args.out)
    return cfg


def _seed_dir(out: str, seed: int) -> str:
    return os.path.join(out, f"seed_{seed}")


def cmd_train(cfg: ExperimentConfig) -> int:
    out = cfg.run.out
    data_cache = {}
    logs = []
    for seed in cfg.run.seeds:
        if cfg.data.kind == "moons" or not data_cache:
            data_cache["d"] = train.load_datasets(cfg, seed)
        log, net = train.train_run(cfg, seed, *data_cache["d"], keep_net=True)
        train.write_runlog(log, _seed_dir(out, seed), cfg, net)
        logs.append(log)
        status = "diverged" if log.diverged else f"test accuracy {log.final_accuracy():.4f}"
        print(f"seed {seed}: {status}")
    metrics.write_metrics_csv(os.path.join(out, "metrics.csv"), train.aggregate_metrics(logs))
    return EXIT_OK


def init_chi(cfg: ExperimentConfig) -> float:
    """Per-layer factor at initialisation for a zero-mean hidden layer of ``cfg``."""
    width, var = cfg.model.width, cfg.model.init_var
    layer = Layer(np.zeros((width, 1)), np.full((width, 1), float(inv_softplus(math.sqrt(var / width)))),
                  np.zeros(1))
    strategy = train.strategy_for(cfg)
    return float(np.mean(layer_stats(effective_posterior(layer, strategy)).chi))


_WORKER_DATA: dict = {}


def _grid_cell(job):
    cfg, seed = job
    key = (cfg.data.kind, cfg.data.path, cfg.data.n_train, cfg.data.n_test, cfg.data.noise,
           cfg.data.normalise, seed if cfg.data.kind == "moons" else None)
    if key not in _WORKER_DATA:
        _WORKER_DATA.clear()
        _WORKER_DATA[key] = train.load_datasets(cfg, seed)
    log = train.train_run(cfg, seed, *_WORKER_DATA[key])
    return log.final_accuracy(), log.diverged


def grid_jobs(cfg: ExperimentConfig):
    cells = []
    for strategy in cfg.grid.strategies:
        for depth in cfg.grid.depths:
            for variance in cfg.grid.variances:
                cell = cfg.with_("prior", strategy=strategy).with_("model", depth=depth, init_var=variance)
                cells.append(((depth, variance, strategy), [(cell, s) for s in cfg.run.seeds]))
    return cells


def cmd_grid(cfg: ExperimentConfig, jobs: int = 1) -> int:
    cells = grid_jobs(cfg)
    flat = [job for _, js in cells for job in js]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_grid_cell, flat, chunksize=1))
    else:
        results = [_grid_cell(job) for job in flat]
    rows = []
    i = 0
    for (depth, variance, strategy), js in cells:
        res = results[i:i + len(js)]
        i += len(js)
        rows.append((depth, variance, strategy, init_chi(js[0][0]),
                     float(np.mean([a for a, _ in res])), float(np.mean([d for _, d in res])), len(js)))
    os.makedirs(cfg.run.out, exist_ok=True)
    path = os.path.join(cfg.run.out, "grid.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_COLUMNS)
        for r in rows:
            w.writerow([r[0], repr(r[1]), r[2], repr(r[3]), repr(r[4]), repr(r[5]), r[6]])
    plot_grid(path, cfg.run.out)
    for r in rows:
        print(f"depth {r[0]:>3} var {r[1]:<7g} {r[2]:<12} accuracy {r[4]:.3f} diverged {r[5]:.2f}")
    return EXIT_OK


def read_grid_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {"depth": int(r["depth"]), "variance": float(r["variance"]), "strategy": r["strategy"],
             "chi": float(r["chi"]), "mean_accuracy": float(r["mean_accuracy"]),
             "diverged_fraction": float(r["diverged_fraction"]), "n_seeds": int(r["n_seeds"])}
            for r in csv.DictReader(fh)
        ]


def plot_grid(csv_path, out_dir) -> list[str]:
    """One heat map per strategy (rows: depth, columns: initial variance) from ``grid.csv``."""
    rows = read_grid_csv(csv_path)
    written = []
    for strategy in dict.fromkeys(r["strategy"] for r in rows):
        sub = [r for r in rows if r["strategy"] == strategy]
        depths = sorted({r["depth"] for r in sub})
        variances = sorted({r["variance"] for r in sub})
        table = {(r["depth"], r["variance"]): r["mean_accuracy"] for r in sub}
        values = [[table.get((d, v)) for v in variances] for d in depths]
        path = os.path.join(out_dir, f"grid_{strategy}.svg")
        with open(path, "w") as fh:
            fh.write(svg.heatmap(values, depths, [f"{v:g}" for v in variances], f"test accuracy, {strategy} prior",
                                 row_name="hidden layers", col_name="initial variance"))
        written.append(path)
    return written


def plot_trace(csv_path, out_path, n_curves: int = 3) -> None:
    """Log variance against layer at a few recorded steps, analytic profile dashed."""
    rows = signalprop.read_trace_csv(csv_path)
    steps = sorted({r.step for r in rows})
    picks = sorted({steps[round(k * (len(steps) - 1) / max(n_curves - 1, 1))] for k in range(n_curves)})
    series = []
    for step in picks:
        sel = sorted((r for r in rows if r.step == step), key=lambda r: r.layer)
        layers = [r.layer for r in sel]
        series.append((f"step {step}", layers, [r.empirical_var for r in sel], False))
        series.append((f"step {step} analytic", layers, [r.analytic_var for r in sel], True))
    with open(out_path, "w") as fh:
        fh.write(svg.line_plot(series, "pre-activation variance by layer", "layer", "variance", log_y=True))


SLOPE_COLUMNS = ("step", "empirical_slope", "analytic_slope", "flagged_units")


def trace_slopes(rows, hidden_layers: int) -> list[tuple[int, float, float, int]]:
    """Per recorded step, log-variance slopes over the hidden layers."""
    out = []
    for step in sorted({r.step for r in rows}):
        sel = sorted((r for r in rows if r.step == step and r.layer <= hidden_layers), key=lambda r: r.layer)
        emp = signalprop.log_variance_slope([r.empirical_var for r in sel])
        ana = signalprop.log_variance_slope([r.analytic_var for r in sel])
        out.append((step, emp, ana, sum(r.flagged_units for r in sel)))
    return out


def cmd_probe(cfg: ExperimentConfig, controlled: bool = False) -> int:
    tr, te = train.load_datasets(cfg, cfg.run.seeds[0])
    if cfg.run.probe_every == 0:
        cfg = cfg.with_("run", probe_every=max(1, math.ceil(len(tr) / cfg.run.batch_size)))
    out = cfg.run.out
    for seed in cfg.run.seeds:
        log = train.train_run(cfg, seed, tr, te, controlled=controlled)
        d = _seed_dir(out, seed)
        train.write_runlog(log, d, cfg)
        trace_csv = os.path.join(d, "trace.csv")
        plot_trace(trace_csv, os.path.join(d, "trace.svg"))
        slopes = trace_slopes(signalprop.read_trace_csv(trace_csv), cfg.model.depth)
        with open(os.path.join(d, "slopes.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SLOPE_COLUMNS)
            for s in slopes:
                w.writerow([s[0], repr(s[1]), repr(s[2]), s[3]])
        for s in slopes:
            print(f"seed {seed} step {s[0]:>5}: log-variance slope {s[1]:+.4f} (analytic {s[2]:+.4f})")
    return EXIT_OK


def cmd_moments(width: int, n_samples: int, seed: int, out: str | None) -> int:
    checks = moments.monte_carlo_checks(width, n_samples, seed=seed) + moments.quadrature_checks()
    print(moments.format_table(checks))
    if out:
        os.makedirs(out, exist_ok=True)
        moments.write_checks_csv(os.path.join(out, "moments.csv"), checks)
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stabprior", description="Bayesian MLPs with self-stabilising priors.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, metavar="PATH")
        sp.add_argument("--out", metavar="DIR", help="output directory (overrides [run] out)")
        sp.add_argument("--predict-from", choices=("qtilde", "q"), dest="predict_from")

    common(sub.add_parser("train", help="train one network per seed"))
    g = sub.add_parser("grid", help="depth x initial-variance grid per prior strategy")
    common(g)
    g.add_argument("--jobs", type=int, default=1, metavar="N")
    pr = sub.add_parser("probe", help="record pre-activation variance through depth during training")
    common(pr)
    pr.add_argument("--controlled", action="store_true", help="zero and freeze weight means and biases")
    m = sub.add_parser("moments", help="Monte Carlo check of the analytic moment maps")
    m.add_argument("--width", type=int, default=4096)
    m.add_argument("--samples", type=int, default=100_000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", metavar="DIR")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "moments":
            if args.width < 2 or args.width % 2 or args.samples < 2:
                raise ConfigError("--width must be an even number >= 2 and --samples >= 2")
            return cmd_moments(args.width, args.samples, args.seed, args.out)
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "grid":
            if args.jobs < 1:
                raise ConfigError("--jobs must be at least 1")
            return cmd_grid(cfg, args.jobs)
        return cmd_probe(cfg, args.controlled or cfg.probe.controlled)
    except ConfigError as exc:
        print(f"stabprior: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"stabprior: missing file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
