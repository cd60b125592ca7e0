import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subpop_mix.data import LabeledDataset
from subpop_mix.weighting import (TrajectoryLog, UncertaintyConfig, WeightAssignment,
                                  group_aware_weights, kappa, load_weights_csv, record_epoch,
                                  save_weights_csv, uncertainty_from_trajectory, uniform_weights,
                                  weights_from_uncertainty)


def grouped(sizes):
    g = np.concatenate([np.full(s, k) for k, s in enumerate(sizes)])
    return LabeledDataset(np.zeros((len(g), 1)), np.zeros(len(g), dtype=int), g)


def test_group_aware_examples():
    ds = grouped([100, 4])
    np.testing.assert_array_equal(group_aware_weights(ds, 0.0).weights, np.ones(104))
    w = group_aware_weights(ds, 2.0)
    # exp(2/sqrt(100)) and exp(2/sqrt(4)), evaluated independently
    assert w.weights[0] == pytest.approx(1.2214027581601699, rel=1e-15)
    assert w.weights[-1] == pytest.approx(2.718281828459045, rel=1e-15)
    assert w.mode == "group_aware" and w.params == {"C": 2.0}
    eq = group_aware_weights(grouped([7, 7, 7]), 3.0)
    assert np.all(eq.weights == eq.weights[0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 60), min_size=2, max_size=5, unique=True), st.floats(0.01, 30.0))
def test_group_aware_constant_in_group_and_decreasing_in_size(sizes, C):
    ds = grouped(sizes)
    w = group_aware_weights(ds, C).weights
    per = []
    for k in range(len(sizes)):
        wk = w[ds.group_ids == k]
        assert np.all(wk == wk[0])
        per.append(wk[0])
    order = np.argsort(sizes)
    assert np.all(np.diff(np.array(per)[order]) < 0)


def test_group_aware_needs_groups():
    ds = LabeledDataset(np.zeros((3, 1)), [0, 1, 0])
    with pytest.raises(ValueError):
        group_aware_weights(ds, 1.0)


def test_weight_assignment_invariants():
    with pytest.raises(ValueError):
        WeightAssignment(np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        WeightAssignment(np.array([1.0, np.nan]))
    w = WeightAssignment(np.array([1.0, 2.0, 6.0]), normalization="mean_one")
    assert abs(w.weights.mean() - 1.0) <= 1e-12
    assert not w.weights.flags.writeable
    assert len(uniform_weights(5)) == 5


def test_kappa_examples():
    assert kappa(1, 1) == 0
    assert kappa(0, 1) == 1
    y = np.array([0, 1, 1, 0, 1])
    p = np.array([0, 0, 1, 1, 1])
    assert kappa(y, p).sum() == np.count_nonzero(y != p)


def test_trajectory_structure():
    log = TrajectoryLog(4)
    y = np.array([0, 1, 0, 1])
    record_epoch(log, y, y)
    record_epoch(log, y, 1 - y)
    record_epoch(log, y, y)
    assert log.epoch_count == 3
    np.testing.assert_array_equal(log.correctness[0], 0)
    np.testing.assert_array_equal(log.correctness[1], 1)
    with pytest.raises(ValueError):
        log.record_epoch(y[:3], y[:3])
    log.finalize()
    with pytest.raises(RuntimeError):
        log.record_epoch(y, y)


def log_from_bits(bits):
    bits = np.asarray(bits)
    log = TrajectoryLog(bits.shape[1])
    for row in bits:
        log.record_epoch(np.zeros(bits.shape[1], dtype=int), row)
    return log.finalize()


def test_uncertainty_examples():
    bits = np.array([[1, 0, 1], [1, 0, 0], [1, 0, 1], [1, 0, 0]])
    u = uncertainty_from_trajectory(log_from_bits(bits), UncertaintyConfig(1, 3))
    np.testing.assert_array_equal(u, [1.0, 0.0, 0.5])


def test_uncertainty_window_out_of_range():
    log = log_from_bits(np.zeros((5, 2), dtype=int))
    with pytest.raises(ValueError):
        uncertainty_from_trajectory(log, UncertaintyConfig(3, 3))
    with pytest.raises(ValueError):
        UncertaintyConfig(0, 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 4), st.integers(0, 4), st.integers(0, 1000))
def test_uncertainty_ignores_epochs_outside_window(t_start, t_window, extra, seed):
    rng = np.random.default_rng(seed)
    E = t_start + t_window + extra
    bits = rng.integers(0, 2, size=(E, 6))
    other = bits.copy()
    outside = np.ones(E, dtype=bool)
    outside[t_start - 1:t_start + t_window] = False
    other[outside] = 1 - other[outside]
    cfg = UncertaintyConfig(t_start, t_window)
    u = uncertainty_from_trajectory(log_from_bits(bits), cfg)
    np.testing.assert_array_equal(u, uncertainty_from_trajectory(log_from_bits(other), cfg))
    np.testing.assert_allclose(u, bits[t_start - 1:t_start + t_window].mean(axis=0))


def test_weights_from_uncertainty_examples():
    np.testing.assert_array_equal(weights_from_uncertainty([0.2, 0.9], 0.0, 3.0).weights, [3.0, 3.0])
    np.testing.assert_array_equal(weights_from_uncertainty([0.0, 1.0], 4.0, 1.0).weights, [1.0, 5.0])
    with pytest.raises(ValueError):
        weights_from_uncertainty([0.5], 1.0, 0.0)
    with pytest.raises(ValueError):
        weights_from_uncertainty([1.5], 1.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=20), st.floats(0.0, 50.0),
       st.floats(0.01, 5.0))
def test_uncertainty_weights_monotone(u, eta, c):
    u = np.array(u)
    w = weights_from_uncertainty(u, eta, c).weights
    order = np.argsort(u, kind="stable")
    assert np.all(np.diff(w[order]) >= 0)


def test_trajectory_and_weights_files(tmp_path):
    log = log_from_bits([[1, 0, 1], [0, 0, 1]])
    log.save(tmp_path / "traj.csv", t_start=1, t_window=1)
    back = TrajectoryLog.load(tmp_path / "traj.csv")
    np.testing.assert_array_equal(back.correctness, log.correctness)
    import json
    assert json.loads((tmp_path / "traj.csv.json").read_text()) == {"epochs": 2, "n": 3, "T_s": 1, "T": 1}

    u = np.array([0.0, 0.25, 1.0])
    w = weights_from_uncertainty(u, 2.0, 1.0)
    save_weights_csv(tmp_path / "w.csv", w, [0, 1, 1], u)
    assert (tmp_path / "w.csv").read_text().splitlines()[0] == "index,group,u,w"
    w2, u2 = load_weights_csv(tmp_path / "w.csv")
    np.testing.assert_array_equal(w2.weights, w.weights)
    np.testing.assert_array_equal(u2, u)
