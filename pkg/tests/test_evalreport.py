import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subpop_mix.evalreport import (Metrics, emit_report, kde_uncertainty, mean_std,
                                   metrics_from_predictions, select_model, silverman_bandwidth,
                                   summary_markdown)


def test_perfect_and_constant_classifiers():
    y = np.array([0, 1, 0, 1])
    g = np.array([0, 1, 0, 1])
    m = metrics_from_predictions(y, y, g)
    assert m.per_group_accuracy == (1.0, 1.0) and m.gap == 0.0
    m = metrics_from_predictions(y, np.zeros(4, dtype=int), g)
    assert m.per_group_accuracy == (1.0, 0.0)
    assert (m.average_accuracy, m.worst_accuracy, m.gap) == (0.5, 0.0, 0.5)


def test_empty_group_rejected():
    with pytest.raises(ValueError):
        metrics_from_predictions([0, 1], [0, 1], [0, 2], n_groups=3)


def brute_force(y, p, g, G):
    acc = []
    for k in range(G):
        hits = total = 0
        for yi, pi, gi in zip(y, p, g):
            if gi == k:
                total += 1
                hits += int(yi == pi)
        acc.append(hits / total)
    avg = sum(int(a == b) for a, b in zip(y, p)) / len(y)
    return acc, avg


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10_000))
def test_matches_recount_and_is_permutation_invariant(G, seed):
    rng = np.random.default_rng(seed)
    n = 40
    g = np.concatenate([np.arange(G), rng.integers(0, G, n - G)])
    y = rng.integers(0, 3, n)
    p = rng.integers(0, 3, n)
    m = metrics_from_predictions(y, p, g, G)
    acc, avg = brute_force(y, p, g, G)
    np.testing.assert_allclose(m.per_group_accuracy, acc, rtol=1e-15)
    assert m.average_accuracy == pytest.approx(avg, rel=1e-15)
    assert m.worst_accuracy == min(m.per_group_accuracy)
    assert m.gap == pytest.approx(m.average_accuracy - m.worst_accuracy)
    perm = rng.permutation(n)
    m2 = metrics_from_predictions(y[perm], p[perm], g[perm], G)
    assert m2.per_group_accuracy == pytest.approx(m.per_group_accuracy, rel=1e-15)
    assert m2.average_accuracy == pytest.approx(m.average_accuracy, rel=1e-15)


def M(worst, avg):
    return Metrics((worst, avg), avg, worst, avg - worst)


def test_select_model_examples():
    assert select_model([M(0.3, 0.5)]) == 1
    assert select_model([M(0.1, 0.5), M(0.2, 0.6), M(0.4, 0.7)]) == 3
    pair = [M(0.5, 0.6), M(0.3, 0.9)]
    assert select_model(pair, "worst") == 1
    assert select_model(pair, "average") == 2
    assert select_model([M(0.4, 0.5), M(0.4, 0.5)]) == 1
    with pytest.raises(ValueError):
        select_model([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30))
def test_select_worst_never_dominated(ws):
    recs = [M(w, 1.0) for w in ws]
    chosen = select_model(recs, "worst")
    assert all(r.worst_accuracy <= recs[chosen - 1].worst_accuracy for r in recs)


def test_kde_examples():
    c = kde_uncertainty(np.full(10, 0.5), np.zeros(10, dtype=int), bandwidth=0.05)
    assert c.mode(0) == pytest.approx(0.5)
    c = kde_uncertainty(np.array([0.0] * 5 + [1.0] * 5), np.repeat([0, 1], 5), bandwidth=0.1)
    assert c.mode(0) == 0.0 and c.mode(1) == 1.0
    rng = np.random.default_rng(0)
    u = rng.uniform(0.3, 0.7, 400)
    g = rng.integers(0, 2, 400)
    c = kde_uncertainty(u, g)
    for k in (0, 1):
        assert np.all(c.densities[k] >= 0)
        assert 0.9 <= c.integral(k) <= 1.1
    with pytest.raises(ValueError):
        kde_uncertainty(np.array([0.1, 0.2]), np.array([0, 2]))
    with pytest.raises(ValueError):
        kde_uncertainty(np.array([0.1]), np.array([0]), bandwidth=0.0)


def test_silverman_bandwidth():
    rng = np.random.default_rng(1)
    v = rng.normal(size=1000)
    iqr = np.subtract(*np.percentile(v, [75, 25]))
    expected = 0.9 * min(v.std(ddof=1), iqr / 1.34) * 1000 ** -0.2
    assert silverman_bandwidth(v) == pytest.approx(expected)
    assert silverman_bandwidth(np.zeros(5)) == 0.05


def test_emit_report_round_trip(tmp_path):
    m = metrics_from_predictions([0, 1, 1, 0], [0, 1, 0, 0], [0, 1, 1, 0])
    curve = kde_uncertainty(np.array([0.1, 0.2, 0.9, 0.8, 0.5]), np.array([0, 0, 1, 1, 2]), 0.1)
    files = emit_report(m, tmp_path / "r", theory={"x": 1}, curves=curve)
    assert {f.name for f in files} == {"metrics.json", "summary.md", "theory.json", "kde.csv"}
    assert Metrics.from_dict(json.loads((tmp_path / "r" / "metrics.json").read_text())) == m
    with (tmp_path / "r" / "kde.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["u", "group_0", "group_1", "group_2"]
    assert all(len(r) == 4 for r in rows)
    summary = (tmp_path / "r" / "summary.md").read_text()
    assert "| average | 75.0 |" in summary and "| worst | 50.0 |" in summary
    assert "| gap | 25.0 |" in summary


def test_summary_one_decimal():
    m = Metrics((0.91234, 0.5), 0.87654, 0.5, 0.37654)
    text = summary_markdown(m)
    assert "87.7" in text and "37.7" in text and "91.2" in text


def test_emit_report_io_error_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError) as info:
        emit_report(M(0.5, 0.5), blocker / "sub")
    assert str(blocker / "sub") in str(info.value)


def test_mean_std():
    assert mean_std([1.0, 3.0]) == (2.0, pytest.approx(np.sqrt(2.0)))
    assert mean_std([4.0]) == (4.0, 0.0)
