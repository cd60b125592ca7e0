import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subpop_mix.linalg import DimensionError, NotPSDError, pinv_rank, rank_threshold, sym_eigen, trace


def power_iteration_eigs(a, iters=20000, tol=1e-13):
    """Independent oracle: shifted power iteration plus Hotelling deflation."""
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    shift = np.abs(a).sum(axis=1).max() + 1.0  # Gershgorin bound, makes a + shift*I positive definite
    b = a + shift * np.eye(n)
    rng = np.random.default_rng(123)
    out = []
    for _ in range(n):
        v = rng.normal(size=n)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(iters):
            w = b @ v
            new = float(v @ w)
            v = w / np.linalg.norm(w)
            if abs(new - lam) <= tol * abs(new):
                lam = new
                break
            lam = new
        lam = float(v @ b @ v)
        out.append(lam - shift)
        b = b - lam * np.outer(v, v)
    return np.sort(out)[::-1]


def test_eigen_examples():
    w, _ = sym_eigen([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(w, [3.0, 1.0], atol=1e-14)
    w, v = sym_eigen(np.diag([1.0, 5.0, 3.0]))
    np.testing.assert_allclose(w, [5.0, 3.0, 1.0])


def test_eigen_reconstructs_and_is_orthonormal():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(12, 12))
    a = m + m.T
    w, v = sym_eigen(a)
    np.testing.assert_allclose(v @ np.diag(w) @ v.T, a, atol=1e-10)
    np.testing.assert_allclose(v.T @ v, np.eye(12), atol=1e-12)
    assert np.all(np.diff(w) <= 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_eigen_matches_power_iteration(d, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(d, d))
    # well separated spectrum keeps the oracle's convergence fast
    q, _ = np.linalg.qr(m)
    vals = np.linspace(-3.0, 4.0, d) + 0.1 * rng.random(d)
    a = q @ np.diag(vals) @ q.T
    a = 0.5 * (a + a.T)
    w, _ = sym_eigen(a)
    assert np.max(np.abs(w - power_iteration_eigs(a))) <= 1e-6


def test_eigen_against_lapack_d30():
    rng = np.random.default_rng(7)
    m = rng.normal(size=(30, 30))
    a = m + m.T
    w, _ = sym_eigen(a)
    np.testing.assert_allclose(w, np.sort(np.linalg.eigvalsh(a))[::-1], atol=1e-9)


def test_eigen_rejects_non_symmetric_and_non_square():
    with pytest.raises(DimensionError):
        sym_eigen([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(DimensionError):
        sym_eigen(np.ones((2, 3)))


def test_pinv_examples():
    p, r = pinv_rank(np.diag([2.0, 0.0]))
    np.testing.assert_allclose(p, np.diag([0.5, 0.0]), atol=1e-15)
    assert r == 1
    p, r = pinv_rank(np.zeros((3, 3)))
    assert r == 0 and not np.any(p)
    v = np.array([1.2, -1.6, 0.0])  # norm 2
    p, r = pinv_rank(np.outer(v, v))
    np.testing.assert_allclose(p, np.outer(v, v) / 16.0, atol=1e-14)
    assert r == 1


def test_pinv_rejects_negative_eigenvalue():
    with pytest.raises(NotPSDError):
        pinv_rank(np.diag([1.0, -0.5]))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10), st.integers(0, 10), st.integers(0, 2**31 - 1))
def test_pinv_laws(d, r, seed):
    r = min(r, d)
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(d, r))
    a = b @ b.T
    p, rank = pinv_rank(a)
    w = np.linalg.eigvalsh(a)
    assert rank == int(np.sum(w > rank_threshold(w)))
    assert rank == r
    scale = max(np.abs(a).max(), 1e-300)
    assert np.abs(a @ p @ a - a).max() <= 1e-8 * scale
    if rank:
        assert np.abs(p @ a @ p - p).max() <= 1e-8 * np.abs(p).max()


def test_trace():
    assert trace([[1.0, 9.0], [9.0, 2.5]]) == 3.5
    with pytest.raises(DimensionError):
        trace(np.ones((2, 3)))
