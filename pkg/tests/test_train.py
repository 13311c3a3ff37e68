import json

import numpy as np
import pytest

from stabprior import train
from stabprior.config import parse_config
from stabprior.gradengine import GradientError, Param

MOONS = """
[experiment]
schema_version = 1
[data]
kind = moons
n_train = {n_train}
n_test = {n_test}
noise = 0.1
[model]
width = {width}
depth = 2
init_var = {init_var}
[prior]
strategy = {strategy}
[optim]
lr = {lr}
[run]
epochs = {epochs}
batch_size = {batch}
probe_every = {probe}
"""


def moons_cfg(**kw):
    args = dict(n_train=64, n_test=32, width=16, init_var=1.0, strategy="stabilising", lr=1e-3,
                epochs=2, batch=16, probe=0)
    args.update(kw)
    return parse_config(MOONS.format(**args))


class TestAdam:
    def test_first_step(self):
        p = Param(0, "weight-mu", np.array([0.0]))
        train.Adam(1e-3).step([p], [np.array([1.0])])
        assert p.value[0] == pytest.approx(-1e-3 / (1 + 1e-8), abs=1e-18)
        assert p.value[0] == pytest.approx(-9.99999995e-4, abs=1e-11)

    def test_zero_gradient(self):
        p = Param(0, "bias", np.array([0.3, -2.0]))
        opt = train.Adam()
        for _ in range(3):
            opt.step([p], [np.zeros(2)])
        np.testing.assert_array_equal(p.value, [0.3, -2.0])

    def test_non_finite(self):
        p = Param(0, "bias", np.zeros(1))
        for opt in (train.Adam(), train.SGD()):
            with pytest.raises(GradientError):
                opt.step([p], [np.array([np.nan])])

    def test_sgd(self):
        p = Param(0, "bias", np.ones(2))
        train.SGD(0.5).step([p], [np.array([1.0, -2.0])])
        np.testing.assert_array_equal(p.value, [0.5, 2.0])


def params_of(net):
    return [p.value.copy() for p in net.params()]


def test_determinism_over_100_steps():
    cfg = moons_cfg(epochs=25)
    a = train.train_run(cfg, 3, keep_net=True)
    b = train.train_run(cfg, 3, keep_net=True)
    assert len(a[0].elbo) == 100
    for x, y in zip(params_of(a[1]), params_of(b[1])):
        assert x.tobytes() == y.tobytes()
    assert [r[2] for r in a[0].elbo] == [r[2] for r in b[0].elbo]


def test_zero_epochs():
    log = train.train_run(moons_cfg(epochs=0), 0)
    assert [(e, s) for e, s, _ in log.metrics] == [(0, "train"), (0, "test")]
    assert log.elbo == [] and not log.diverged


def test_zero_learning_rate_freezes_parameters():
    cfg = moons_cfg(strategy="fixed", lr=0.0, epochs=3)
    start = train.build_for(cfg, 2, 2, train.make_rng(train.derive_seed(0, train.INIT)))
    log, net = train.train_run(cfg, 0, keep_net=True)
    for x, y in zip(params_of(start), params_of(net)):
        assert x.tobytes() == y.tobytes()
    assert len({r[4] for r in log.elbo}) == 1
    values = np.array([r[2] for r in log.elbo])
    first, second = values[:6], values[6:]
    se = np.sqrt(first.var(ddof=1) / 6 + second.var(ddof=1) / 6)
    assert abs(first.mean() - second.mean()) < 3 * se


def test_prior_refresh_reads_only():
    cfg = moons_cfg()
    _, net = train.train_run(cfg, 0, keep_net=True)
    before = params_of(net)
    for layer in net.layers:
        net.strategy.layer_prior(layer.q)
    for x, y in zip(before, params_of(net)):
        assert x.tobytes() == y.tobytes()


def test_probe_schedule_and_step_zero():
    cfg = moons_cfg(probe=2, epochs=1)
    log = train.train_run(cfg, 0)
    steps = sorted({r.step for r in log.trace})
    assert steps == [0, 2, 4]
    assert all(r.analytic_var > 0 for r in log.trace)


def test_controlled_run_keeps_means_at_zero():
    _, net = train.train_run(moons_cfg(epochs=1), 0, controlled=True, keep_net=True)
    for layer in net.layers:
        assert not layer.mu.any() and not layer.bias.any()


def test_diverged_run_serialises(tmp_path):
    cfg = moons_cfg(strategy="fixed", init_var=1e200, epochs=1)
    log = train.train_run(cfg, 0)
    assert log.diverged
    assert log.final_accuracy() == 0.5
    train.write_runlog(log, tmp_path, cfg)
    meta = json.loads((tmp_path / "run.json").read_text())
    assert meta["diverged"] is True
    assert (tmp_path / "metrics.csv").exists() and (tmp_path / "elbo.csv").exists()


def test_moons_reference_accuracy():
    cfg = parse_config(open("configs/moons.ini").read())
    log = train.train_run(cfg, 0)
    assert not log.diverged
    assert log.final_accuracy() > 0.9


@pytest.mark.parametrize("strategy", ["fixed", "eb", "stabilising", "combined"])
def test_seed_averaged_elbo_rises_from_small_variance(strategy):
    cfg = moons_cfg(n_train=400, n_test=2, width=64, init_var=1e-3, strategy=strategy, epochs=50, batch=400)
    curves = []
    for seed in range(32):
        log = train.train_run(cfg, seed)
        curves.append([r[2] for r in log.elbo])
    mean = np.mean(curves, axis=0)
    assert len(mean) == 50
    assert np.all(np.diff(mean) >= 0.0)


def test_curve_helpers():
    assert train.epochs_to_reach({0: 0.1, 1: 0.5, 2: 0.7}, 0.5) == 1
    assert train.epochs_to_reach({0: 0.1}, 0.5) is None
    a = train.RunLog(0, "h", 2)
    b = train.RunLog(1, "h", 2)
    from stabprior.metrics import EvalReport
    a.metrics = [(0, "test", EvalReport(0.5, 0.5, None, 0.0, None, 0.0, 0.7, 4))]
    b.metrics = [(0, "test", EvalReport(1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 4))]
    assert train.mean_curve([a, b]) == {0: 0.75}
    (_, _, r), = train.aggregate_metrics([a, b])
    assert r.accuracy == 0.75 and r.acc50 is None and r.cov50 == 0.5
