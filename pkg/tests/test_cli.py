import csv

import pytest

from stabprior import cli

BASE = """
[experiment]
schema_version = 1
[data]
kind = moons
n_train = 40
n_test = 20
[model]
width = 8
depth = 2
[run]
epochs = 2
batch_size = 20
seeds = {seeds}
out = {out}
probe_every = {probe}
[grid]
depths = {depths}
variances = {variances}
strategies = {strategies}
"""


def write_cfg(tmp_path, name="c.ini", seeds="1, 2", depths="2", variances="1", strategies="fixed", probe=0):
    out = tmp_path / (name + ".out")
    path = tmp_path / name
    path.write_text(BASE.format(seeds=seeds, out=out, depths=depths, variances=variances,
                                strategies=strategies, probe=probe))
    return path, out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_missing_config_exits_2(tmp_path, capsys):
    path = tmp_path / "absent.ini"
    assert cli.main(["train", "--config", str(path)]) == cli.EXIT_CONFIG
    assert str(path) in capsys.readouterr().err


def test_invalid_field_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[experiment]\nschema_version = 1\n[model]\ndepth = -3\n")
    assert cli.main(["train", "--config", str(path)]) == cli.EXIT_CONFIG
    assert "[model] depth" in capsys.readouterr().err


def test_train_two_seeds(tmp_path):
    path, out = write_cfg(tmp_path)
    assert cli.main(["train", "--config", str(path)]) == cli.EXIT_OK
    for s in (1, 2):
        d = out / f"seed_{s}"
        assert {"config.ini", "metrics.csv", "elbo.csv", "trace.csv", "run.json", "checkpoint.npz"} <= {
            p.name for p in d.iterdir()}
    rows = read_csv(out / "metrics.csv")
    assert [(r["epoch"], r["split"]) for r in rows][:2] == [("0", "test"), ("0", "train")]


def test_train_rerun_is_byte_identical(tmp_path):
    path, out = write_cfg(tmp_path)
    cli.main(["train", "--config", str(path)])
    first = {p: p.read_bytes() for p in out.rglob("*.csv")}
    cli.main(["train", "--config", str(path)])
    assert {p: p.read_bytes() for p in out.rglob("*.csv")} == first


def test_single_cell_grid_matches_train(tmp_path):
    path, out = write_cfg(tmp_path)
    cli.main(["train", "--config", str(path)])
    final = [r for r in read_csv(out / "metrics.csv") if r["epoch"] == "2" and r["split"] == "test"]
    gpath, gout = write_cfg(tmp_path, "g.ini")
    assert cli.main(["grid", "--config", str(gpath)]) == cli.EXIT_OK
    (row,) = read_csv(gout / "grid.csv")
    assert float(row["mean_accuracy"]) == pytest.approx(float(final[0]["accuracy"]), abs=1e-15)
    assert (gout / "grid_fixed.svg").exists()


def test_grid_shape_and_parallel_determinism(tmp_path):
    path, out = write_cfg(tmp_path, seeds="0", depths="1, 3", variances="0.5, 1, 4",
                          strategies="fixed, stabilising")
    assert cli.main(["grid", "--config", str(path), "--jobs", "2"]) == cli.EXIT_OK
    rows = read_csv(out / "grid.csv")
    assert len(rows) == 2 * 3 * 2
    assert list(rows[0]) == list(cli.GRID_COLUMNS)
    first = (out / "grid.csv").read_bytes()
    assert cli.main(["grid", "--config", str(path), "--jobs", "1"]) == cli.EXIT_OK
    assert (out / "grid.csv").read_bytes() == first
    assert sorted(p.name for p in out.glob("*.svg")) == ["grid_fixed.svg", "grid_stabilising.svg"]


def test_grid_svgs_regenerate_from_csv(tmp_path):
    path, out = write_cfg(tmp_path, seeds="0", variances="1, 2", strategies="fixed, stabilising")
    cli.main(["grid", "--config", str(path)])
    before = (out / "grid_fixed.svg").read_text()
    (out / "grid_fixed.svg").unlink()
    cli.plot_grid(out / "grid.csv", out)
    assert (out / "grid_fixed.svg").read_text() == before


def test_probe_outputs(tmp_path):
    path, out = write_cfg(tmp_path, seeds="0", probe=1)
    assert cli.main(["probe", "--config", str(path), "--controlled"]) == cli.EXIT_OK
    d = out / "seed_0"
    trace = read_csv(d / "trace.csv")
    assert {r["step"] for r in trace} == {str(s) for s in range(5)}
    assert (d / "trace.svg").exists()
    assert len(read_csv(d / "slopes.csv")) == 5


def test_probe_step_zero_is_fresh_network(tmp_path):
    from stabprior import train
    from stabprior.config import load_config

    path, out = write_cfg(tmp_path, seeds="0", probe=1)
    cli.main(["probe", "--config", str(path)])
    cfg = load_config(path)
    tr, te = train.load_datasets(cfg, 0)
    fresh = train.build_for(cfg, tr.n_features, 2, train.make_rng(train.derive_seed(0, train.INIT)))
    rows = train.probe(fresh, te.inputs[0], train.make_rng(train.derive_seed(0, train.PROBE)),
                       cfg.probe.probe_samples, 0)
    recorded = [r for r in read_csv(out / "seed_0" / "trace.csv") if r["step"] == "0"]
    assert [float(r["empirical_var"]) for r in recorded] == [r.empirical_var for r in rows]


def test_moments_small_width(tmp_path, capsys):
    code = cli.main(["moments", "--width", "64", "--samples", "2000", "--out", str(tmp_path)])
    assert code in (cli.EXIT_OK, cli.EXIT_CHECK)
    rows = read_csv(tmp_path / "moments.csv")
    assert "width" in rows[0] and {r["width"] for r in rows if r["check"] == "mean"} == {"64"}
    fixed = [r for r in rows if r["check"] == "variance_recursion" and r["mu_tilde"] == "0" and r["var_tilde"] == "2"]
    assert fixed and float(fixed[0]["ratio"]) == pytest.approx(1.0)
    assert "checks passed" in capsys.readouterr().out


def test_moments_bad_width():
    assert cli.main(["moments", "--width", "3"]) == cli.EXIT_CONFIG


def test_predict_from_override(tmp_path):
    path, out = write_cfg(tmp_path, seeds="0")
    assert cli.main(["train", "--config", str(path), "--predict-from", "q", "--out", str(tmp_path / "o")]) == 0
    assert "predict_from = q" in (tmp_path / "o" / "seed_0" / "config.ini").read_text()
