import numpy as np
import pytest
from hypothesis import given, strategies as st

from stabprior import metrics as m
from stabprior.numerics import make_rng


def random_probs(rng, n, k):
    logits = rng.standard_normal((n, k)) * 2
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True), rng.integers(0, k, n)


def brier_loop(probs, targets):
    total = 0.0
    for row, t in zip(probs, targets):
        total += sum((row[k] - (1.0 if k == t else 0.0)) ** 2 for k in range(len(row)))
    return total / len(targets)


def confident_loop(probs, targets, thr):
    hit = sel = 0
    for row, t in zip(probs, targets):
        best = max(range(len(row)), key=lambda k: row[k])
        if row[best] > thr:
            sel += 1
            hit += best == t
    return (hit / sel if sel else None), sel / len(targets)


class TestBrier:
    def test_examples(self):
        assert m.brier([[0.0, 1.0, 0.0]], [1]) == 0.0
        assert m.brier([[0.5, 0.5]], [0]) == 0.5
        assert m.brier([[0.2, 0.5, 0.3]], [1]) == pytest.approx(0.38, abs=1e-15)

    def test_requires_normalised_rows(self):
        with pytest.raises(ValueError):
            m.brier([[0.5, 0.6]], [0])

    @pytest.mark.parametrize("k", range(2, 11))
    def test_uniform_predictor(self, k):
        probs = np.full((7, k), 1.0 / k)
        assert m.brier(probs, np.arange(7) % k) == pytest.approx(1 - 1 / k, abs=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_loop(self, seed):
        p, y = random_probs(make_rng(seed), 40, 4)
        assert m.brier(p, y) == pytest.approx(brier_loop(p, y), abs=1e-14)

    @given(st.integers(0, 10**6), st.integers(2, 8))
    def test_range(self, seed, k):
        p, y = random_probs(make_rng(seed), 10, k)
        assert 0.0 <= m.brier(p, y) <= 2.0


class TestConfident:
    def test_empty_selection(self):
        assert m.confident_accuracy(np.tile([0.6, 0.4], (5, 1)), np.zeros(5, int), 0.9) == (None, 0.0)

    def test_saturated(self):
        assert m.confident_accuracy(np.eye(3), [0, 1, 2], 0.5) == (1.0, 1.0)

    def test_tie_excluded(self):
        assert m.confident_accuracy([[0.5, 0.5]], [0], 0.5) == (None, 0.0)

    def test_threshold_domain(self):
        for thr in (0.0, 1.0, -0.1):
            with pytest.raises(ValueError):
                m.confident_accuracy([[1.0, 0.0]], [0], thr)

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("thr", [0.3, 0.5, 0.9])
    def test_matches_loop(self, seed, thr):
        p, y = random_probs(make_rng(seed), 60, 3)
        assert m.confident_accuracy(p, y, thr) == confident_loop(p, y, thr)

    def test_small_threshold_is_accuracy(self):
        p, y = random_probs(make_rng(9), 50, 5)
        assert m.confident_accuracy(p, y, 1e-12)[0] == m.accuracy(p, y)


@given(st.integers(0, 10**6))
def test_permutation_invariance(seed):
    rng = make_rng(seed)
    p, y = random_probs(rng, 30, 4)
    perm = rng.permutation(30)
    a, b = m.evaluate(p, y), m.evaluate(p[perm], y[perm])
    assert a.accuracy == b.accuracy
    assert a.brier == pytest.approx(b.brier, abs=1e-14)
    assert a.nll == pytest.approx(b.nll, abs=1e-13)
    assert (a.acc50, a.cov50, a.acc90, a.cov90) == (b.acc50, b.cov50, b.acc90, b.cov90)


def test_nll_and_regression_scores():
    assert m.nll([[0.25, 0.75]], [1]) == pytest.approx(-np.log(0.75))
    assert m.rmse([[1.0], [3.0]], [0.0, 3.0]) == pytest.approx(np.sqrt(0.5))
    assert m.predictive_log_density([[0.0]], [[1.0]], [0.0]) == pytest.approx(-0.5 * np.log(2 * np.pi))


def test_csv_leaves_absent_cells_empty(tmp_path):
    r = m.evaluate(np.tile([0.6, 0.4], (4, 1)), [0, 0, 1, 1])
    path = tmp_path / "m.csv"
    m.write_metrics_csv(path, [(0, "test", r)])
    header, row = path.read_text().splitlines()
    assert header == ",".join(m.METRIC_COLUMNS)
    cells = row.split(",")
    assert cells[:2] == ["0", "test"]
    assert cells[6] == "" and cells[7] == "0.0"
    assert float(cells[4]) == 0.5
