import math

import numpy as np
import pytest

from subpop_mix.data import LabeledDataset, gen_four_moons
from subpop_mix.mixing import MixPolicy
from subpop_mix.models import GlmModel, MlpModel, log_partition_dd
from subpop_mix.theory import (TheoryReport, bound_terms, center, empirical_gerror, estimate_rho,
                               gerror_with_se, regularizer_residual, sigma_m, sigma_m_with_se,
                               tilde_moments, weighted_covariance)
from subpop_mix.training import TrainConfig, train_baseline


def test_weighted_covariance_examples():
    n, d = 8, 3
    q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(n, d)))
    X = math.sqrt(n) * q  # X^T X = n I
    np.testing.assert_allclose(weighted_covariance(X, np.ones(n)), np.eye(d), atol=1e-14)
    w = np.zeros(n)
    w[0] = n
    np.testing.assert_allclose(weighted_covariance(X, w), np.outer(X[0], X[0]), atol=1e-14)
    w = np.random.default_rng(1).uniform(0.5, 2, n)
    np.testing.assert_allclose(weighted_covariance(X, 2 * w), 2 * weighted_covariance(X, w), rtol=1e-14)


def test_tilde_moments_closed_forms():
    m = tilde_moments(1.0, 1.0)
    # components Beta(2,1), Beta(1,2) with probability 1/2 each
    assert m["mean"] == pytest.approx(0.5)
    assert m["one_minus_sq"] == pytest.approx(1.0 / 3.0)
    for a in (0.5, 1.0, 3.0, 10.0):
        assert tilde_moments(a, a)["one_minus_sq"] == pytest.approx((a + 1) / (2 * (2 * a + 1)))


def test_sigma_m_vanilla_scalar_collapse():
    rng = np.random.default_rng(2)
    b = rng.normal(size=(4, 4))
    S = b @ b.T
    for a, bb in ((1.0, 1.0), (2.0, 1.0), (0.5, 0.5)):
        est, se = sigma_m_with_se(S, MixPolicy("vanilla", a, bb), 200_000, rng)
        target = tilde_moments(a, bb)["one_minus_sq"] * S
        assert np.all(np.abs(est - target) <= 3 * se + 1e-15)


def test_sigma_m_point_mass_at_one_vanishes():
    S = np.diag([2.0, 1.0, 0.5])
    sm = sigma_m(S, MixPolicy("vanilla", 1e4, 1e-4), 5000, np.random.default_rng(3))
    assert np.abs(sm).max() < 1e-6
    cut = sigma_m(S, MixPolicy("cutmask", 1e4, 1e-4), 2000, np.random.default_rng(3))
    assert np.abs(cut).max() == 0.0


def test_sigma_m_keeps_diagonal_structure():
    S = np.diag([3.0, 1.0, 2.0, 0.5])
    sm = sigma_m(S, MixPolicy("cutmask", 1.0, 1.0), 3000, np.random.default_rng(4))
    assert np.all(sm[~np.eye(4, dtype=bool)] == 0.0)
    assert np.all(np.diag(sm) > 0)


def test_bound_terms_examples():
    bt = bound_terms(np.eye(9), np.eye(9))
    assert bt.trace_term == pytest.approx(3.0) and bt.rank_term == 9 and bt.sqrt_d == 3.0
    assert tuple(bound_terms(np.zeros((4, 4)), np.zeros((4, 4)))) == (0.0, 0, 2.0)
    d, q = 100, 1.0 / 3.0
    v = np.random.default_rng(5).normal(size=d)
    S = np.outer(v, v) / (v @ v)
    bt = bound_terms(S, q * S)
    assert bt.trace_term == pytest.approx(math.sqrt(1 / q), rel=1e-10)
    assert bt.rank_term == 1 and bt.trace_term + bt.rank_term < 10.0
    with pytest.raises(ValueError):
        bound_terms(np.eye(2), np.eye(3))


def test_rho_examples():
    rng = np.random.default_rng(6)
    with pytest.raises(ValueError):
        estimate_rho(np.zeros((50, 3)), 8, rng)
    X = rng.uniform(-1, 1, size=(2000, 3))
    rho = estimate_rho(X, 16, rng)
    assert rho > 0
    # A'' <= 1/4, so rho <= 1 / (16 min{1, min_v E(v^T x)^2}); the smallest probed norm is 0.1
    min_second_moment = 0.1 ** 2 * np.linalg.eigvalsh(X.T @ X / len(X)).min()
    assert rho <= 1.0 / (16.0 * min(1.0, min_second_moment))
    # floor: |x^T v| <= R = 3 * sqrt(3) on the largest probed norm
    R = 3.0 * math.sqrt(3.0)
    z = np.linspace(-R, R, 10001)
    floor = float(log_partition_dd(z).min()) ** 2
    assert rho >= floor


@pytest.fixture(scope="module")
def centered_moons():
    return center(gen_four_moons([200, 200, 20, 20], 0.1, seed=0))


def test_residual_theta_zero_is_exact(centered_moons):
    glm = GlmModel.zeros(2)
    res = regularizer_residual(glm, centered_moons, np.ones(centered_moons.n),
                               MixPolicy("vanilla", 2.0, 1.0), 20_000, np.random.default_rng(0))
    assert res.loss == pytest.approx(math.log(2))
    assert res.quadratic == 0.0
    assert res.residual <= 3 * res.se + 1e-15


def test_residual_point_mass_proxy(centered_moons):
    glm = GlmModel(np.array([0.3, -0.2]))
    res = regularizer_residual(glm, centered_moons, np.ones(centered_moons.n),
                               MixPolicy("vanilla", 1e4, 1.0), 20_000, np.random.default_rng(1))
    assert abs(res.lhs - res.loss) < 1e-5
    assert res.residual <= 3 * res.se + 1e-9


def test_taylor_expectation_matches_quadratic_formula(centered_moons):
    rng = np.random.default_rng(2)
    w = rng.uniform(0.5, 3.0, centered_moons.n)
    data = center(centered_moons, w)
    glm = GlmModel(np.array([0.7, -1.1]))
    for a, b in ((9.0, 1.0), (2.0, 3.0)):
        res = regularizer_residual(glm, data, w, MixPolicy("vanilla", a, b), 1000, rng)
        assert res.taylor_expectation == pytest.approx(res.quadratic, rel=1e-10, abs=1e-16)


def test_residual_errors(centered_moons):
    glm = GlmModel.zeros(2)
    w = np.ones(centered_moons.n)
    with pytest.raises(ValueError):
        regularizer_residual(glm, centered_moons, w, MixPolicy("vanilla"), 999, np.random.default_rng(0))
    with pytest.raises(ValueError):
        regularizer_residual(glm, centered_moons, w, MixPolicy("none"), 5000, np.random.default_rng(0))
    raw = gen_four_moons([50, 50, 5, 5])
    with pytest.raises(ValueError):
        regularizer_residual(glm, raw, np.ones(raw.n), MixPolicy("vanilla"), 5000, np.random.default_rng(0))


def test_gerror_examples():
    train = gen_four_moons([100, 100, 10, 10], seed=0)
    m = MlpModel([2, 8, 2], rng=np.random.default_rng(0))
    assert empirical_gerror(m, train, train) == 0.0
    assert empirical_gerror(m, train, train, weights_fn=[1.0, 2.0, 3.0, 4.0]) == 0.0
    other = gen_four_moons([100, 100, 10, 10], seed=0, stream=(6, 3))
    glm = GlmModel.zeros(2, intercept=True)
    est = gerror_with_se(glm, train, other)
    assert abs(est.value) <= 3 * est.se + 1e-15
    with pytest.raises(ValueError):
        empirical_gerror(m, LabeledDataset(np.zeros((3, 2)), [0, 1, 0]), train, weights_fn=lambda g: 1.0)


def test_gerror_positive_when_overfit():
    train = gen_four_moons([10, 10, 10, 10], 0.1, seed=1)
    test = gen_four_moons([1000, 1000, 1000, 1000], 0.1, seed=1, stream=(6, 3))
    c = TrainConfig(epochs=400, batch_size=8, learning_rate=0.1, momentum=0.9, seed=0)
    model, _ = train_baseline(train, "erm", c, {"kind": "mlp", "hidden": [64, 64]})
    est = gerror_with_se(model, train, test)
    assert est.value > 3 * est.se


def test_report_rows_and_json():
    rep = TheoryReport(sigma_hat=np.eye(2), sigma_m=np.eye(2) / 3, trace_term=math.sqrt(6),
                       rank_term=2, sqrt_d=math.sqrt(2), rho_hat=0.01, approx_residuals=[],
                       gerror=0.05)
    d = rep.to_dict()
    for key in ("L", "B", "L_A", "gamma"):
        assert d[key] == "not estimated"
    assert "trace_term" in rep.table()
