"""Small dense symmetric linear algebra: Jacobi eigensolver, pseudo-inverse, rank."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

EPS = np.finfo(np.float64).eps


class DimensionError(ValueError):
    pass


class NotPSDError(ValueError):
    pass


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns, orthonormal


def as_matrix(a) -> np.ndarray:
    m = np.array(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def _check_symmetric(a: np.ndarray, rtol: float = 1e-10) -> None:
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"matrix must be square, got {a.shape}")
    scale = max(np.max(np.abs(a)), 1.0) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > rtol * scale:
        raise DimensionError("matrix is not symmetric")


def sym_eigen(a, tol: float = 1e-15, max_sweeps: int = 60) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in descending order with matching orthonormal
    eigenvector columns, so ``V @ diag(w) @ V.T`` reconstructs ``a``.
    """
    a = as_matrix(a)
    _check_symmetric(a)
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n <= 1:
        return EigenDecomposition(np.diag(a).copy(), v)

    fro = np.linalg.norm(a)
    if fro == 0.0:
        return EigenDecomposition(np.zeros(n), v)

    for _ in range(max_sweeps):
        # summed directly: ||A||^2 - ||diag||^2 cancels to zero while entries ~1e-8 remain
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off <= tol * fro:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300 or abs(apq) <= EPS * 1e-3 * np.sqrt(abs(a[p, p] * a[q, q])):
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J, touching rows/cols p and q only
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return EigenDecomposition(w[order], v[:, order])


def rank_threshold(eigenvalues: np.ndarray) -> float:
    d = len(eigenvalues)
    lam_max = float(np.max(np.abs(eigenvalues), initial=0.0))
    return d * lam_max * EPS


def pinv_rank(a) -> tuple[np.ndarray, int]:
    """Moore-Penrose pseudo-inverse and numerical rank of a symmetric PSD matrix.

    Eigenvalues at or below ``d * lambda_max * eps`` count as zero.
    """
    a = as_matrix(a)
    _check_symmetric(a, rtol=1e-8)
    w, v = sym_eigen(a)
    lam_max = float(np.max(np.abs(w), initial=0.0))
    if w.size and w[-1] < -1e-8 * lam_max:
        raise NotPSDError(f"negative eigenvalue {w[-1]:.3e} (lambda_max={lam_max:.3e})")
    keep = w > rank_threshold(w)
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / w[keep]
    pinv = (v * inv) @ v.T
    return 0.5 * (pinv + pinv.T), int(np.count_nonzero(keep))


def trace(a) -> float:
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"trace of non-square matrix {a.shape}")
    return float(np.trace(a))
