"""Executable checks of the GLM analysis: mixup-as-regularizer residual, bound terms,
rho-retentiveness, and the weighted generalization error.

All Monte-Carlo estimates come with a standard error taken from the same sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .data import LabeledDataset
from .linalg import DimensionError, as_matrix, pinv_rank
from .mixing import MixPolicy, sample_lambda_tilde, sample_mask
from .models import GlmModel, log_partition, log_partition_dd, per_sample_loss, sigmoid

MIN_MC = 1000
CHUNK = 50_000
RHO_NORMS = (0.1, 0.3, 1.0, 3.0)


class Estimate(NamedTuple):
    value: float
    se: float


def _weights_array(weights, n: int) -> np.ndarray:
    w = np.asarray(getattr(weights, "weights", weights), dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"{w.shape[0] if w.ndim else 1} weights for {n} samples")
    return w


def center(dataset: LabeledDataset, weights=None) -> LabeledDataset:
    """Subtract the (weighted) feature mean."""
    X = dataset.features
    w = np.ones(dataset.n) if weights is None else _weights_array(weights, dataset.n)
    mean = (w[:, None] * X).sum(axis=0) / w.sum()
    return dataset.with_features(X - mean, name=f"{dataset.name}-centered")


def _check_centered(X: np.ndarray, w: np.ndarray) -> None:
    mean = (w[:, None] * X).sum(axis=0) / w.sum()
    if np.linalg.norm(mean) > 1e-8:
        raise ValueError(f"features are not centered (weighted mean norm {np.linalg.norm(mean):.3g})")


def weighted_covariance(dataset, weights) -> np.ndarray:
    """(1/n) sum_i w_i x_i x_i^T on features assumed centered by the caller."""
    X = getattr(dataset, "features", dataset)
    X = np.asarray(X, dtype=np.float64)
    w = _weights_array(weights, X.shape[0])
    S = (X * w[:, None]).T @ X / X.shape[0]
    return 0.5 * (S + S.T)


# Mask moments -----------------------------------------------------------------

def _draw_masks(policy: MixPolicy, d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    lam, _ = sample_lambda_tilde(policy.alpha, policy.beta, rng, size=n)
    if policy.mode == "vanilla":
        return np.repeat(lam[:, None], d, axis=1)
    return np.stack([sample_mask(policy, float(l), d, rng) for l in lam])


def sigma_m_with_se(sigma, policy: MixPolicy, n_mc: int, rng: np.random.Generator):
    """Monte-Carlo E[(1-M)(1-M)^T] * Sigma with lambda from the tilde distribution, plus entrywise SE."""
    S = as_matrix(sigma)
    d = S.shape[0]
    if n_mc < 2:
        raise ValueError("n_mc must be >= 2")
    first = np.zeros((d, d))
    second = np.zeros((d, d))
    done = 0
    while done < n_mc:
        m = min(CHUNK, n_mc - done)
        U = 1.0 - _draw_masks(policy, d, m, rng)
        first += U.T @ U
        U2 = U * U
        second += U2.T @ U2
        done += m
    mean = first / n_mc
    var = np.maximum(second / n_mc - mean ** 2, 0.0) * n_mc / (n_mc - 1)
    se = np.sqrt(var / n_mc)
    return mean * S, se * np.abs(S)


def sigma_m(sigma, policy: MixPolicy, n_mc: int, rng: np.random.Generator) -> np.ndarray:
    return sigma_m_with_se(sigma, policy, n_mc, rng)[0]


def tilde_moments(alpha: float, beta: float) -> dict:
    """Closed-form moments of lambda under the tilde distribution (a two-component Beta mixture)."""
    p = alpha / (alpha + beta)
    s = alpha + beta + 1.0

    def beta_moments(a, b):
        m1 = a / (a + b)
        m2 = a * (a + 1) / ((a + b) * (a + b + 1))
        return m1, m2

    m1a, m2a = beta_moments(alpha + 1, beta)
    m1b, m2b = beta_moments(alpha, beta + 1)
    m1 = p * m1a + (1 - p) * m1b
    m2 = p * m2a + (1 - p) * m2b
    assert abs(m1 - (alpha + p) / s) < 1e-12
    return {"mean": m1, "var": m2 - m1 * m1, "one_minus_sq": 1.0 - 2.0 * m1 + m2}


# Bound terms ------------------------------------------------------------------

class BoundTerms(NamedTuple):
    trace_term: float
    rank_term: int
    sqrt_d: float


def bound_terms(sigma, sigma_m_matrix) -> BoundTerms:
    """(sqrt(tr(pinv(Sigma_M) Sigma)), rank(Sigma), sqrt(d))."""
    S = as_matrix(sigma)
    SM = as_matrix(sigma_m_matrix)
    if S.shape != SM.shape:
        raise DimensionError(f"covariances differ in shape: {S.shape} vs {SM.shape}")
    d = S.shape[0]
    if not np.any(S):
        return BoundTerms(0.0, 0, math.sqrt(d))
    pinv_m, _ = pinv_rank(SM)
    _, rank = pinv_rank(S)
    tr = float(np.sum(pinv_m * S.T))  # tr(A B) without forming the product
    return BoundTerms(math.sqrt(max(tr, 0.0)), int(rank), math.sqrt(d))


# rho-retentiveness --------------------------------------------------------------

def estimate_rho(X, n_dirs: int, rng: np.random.Generator, norms=RHO_NORMS,
                 n_mc: int | None = None) -> float:
    """min over probed v of E^2[A''(x^T v)] / min{1, E(v^T x)^2}.

    ``X`` is a sample from the distribution (rows); ``n_mc`` optionally subsamples it.
    """
    X = np.asarray(getattr(X, "features", X), dtype=np.float64)
    if X.ndim != 2 or not np.any(X):
        raise ValueError("degenerate data: rho is undefined for an all-zero distribution")
    if n_mc is not None and n_mc < X.shape[0]:
        X = X[rng.choice(X.shape[0], size=n_mc, replace=False)]
    dirs = rng.normal(size=(n_dirs, X.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    best = math.inf
    for r in norms:
        Z = X @ (r * dirs).T  # (n, n_dirs)
        num = log_partition_dd(Z).mean(axis=0) ** 2
        den = np.minimum(1.0, (Z * Z).mean(axis=0))
        ok = den > 0
        if np.any(ok):
            best = min(best, float(np.min(num[ok] / den[ok])))
    if not math.isfinite(best):
        raise ValueError("degenerate data: every probed direction is orthogonal to the sample")
    return best


# Regularizer residual -------------------------------------------------------------

@dataclass(frozen=True)
class ResidualResult:
    residual: float
    se: float
    lhs: float
    rhs: float
    loss: float  # L_n
    quadratic: float
    one_minus_lambda_sq: Estimate  # E[(1 - lambda)^2]
    lam_bar: float
    n_mc: int
    taylor_expectation: float = float("nan")  # exact E[T] from direct summation

    @property
    def scaled(self) -> float:
        return self.residual / self.one_minus_lambda_sq.value

    def to_dict(self) -> dict:
        return {"residual": self.residual, "se": self.se, "lhs": self.lhs, "rhs": self.rhs,
                "loss": self.loss, "quadratic": self.quadratic,
                "one_minus_lambda_sq": self.one_minus_lambda_sq.value,
                "one_minus_lambda_sq_se": self.one_minus_lambda_sq.se,
                "lam_bar": self.lam_bar, "n_mc": self.n_mc,
                "taylor_expectation": self.taylor_expectation}


def _glm_parts(glm: GlmModel):
    """Slope vector and intercept of the linear predictor."""
    if glm.intercept:
        return glm.theta[:-1], float(glm.theta[-1])
    return glm.theta, 0.0


def _taylor_moments(X, theta, p_r, mask_mean, mask_cov, lam_bar):
    """Per-anchor E[dz] and E[dz^2] for dz = x^_i^T theta - x_i^T theta, by direct summation.

    With a = x_i * theta and b = r * theta, x^_i^T theta = u / lam_bar where
    u = M^T (a - b) + 1^T b, M independent of r.
    """
    A = X * theta[None, :]
    S = mask_cov + np.outer(mask_mean, mask_mean)  # E[M M^T]
    mu = p_r @ A
    Q = A.T @ (A * p_r[:, None])  # E_r[b b^T]
    one = np.ones_like(mu)
    e_u = A @ mask_mean - mask_mean @ mu + one @ mu
    e_u2 = (np.einsum("ia,ab,ib->i", A, S, A) - 2.0 * A @ (S @ mu) + np.sum(S * Q)
            + 2.0 * ((A @ mask_mean) * (one @ mu) - mask_mean @ Q @ one) + one @ Q @ one)
    z0 = A.sum(axis=1)
    mean_dz = e_u / lam_bar - z0
    mean_dz2 = e_u2 / lam_bar ** 2 - 2.0 * z0 * e_u / lam_bar + z0 * z0
    return mean_dz, mean_dz2


def regularizer_residual(glm: GlmModel, dataset: LabeledDataset, weights, policy: MixPolicy,
                         n_mc: int, rng: np.random.Generator) -> ResidualResult:
    """|E[mixed weighted loss] - (L_n + quadratic regularizer)| with its Monte-Carlo SE.

    The mixed input for anchor i is x^_i = (M x_i + (1 - M) r) / lam_bar with r drawn from
    the sample proportionally to w and lambda from the tilde distribution, so E[x^_i] = x_i
    on weight-centered data.

    The left side is estimated as L_n + E[T] + mean(w_i [l(x^_i) - l(x_i) - T]) where T is the
    second-order Taylor polynomial of the loss in z^ - z. E[T] is evaluated exactly by summing
    over the data with the mask moments (a route independent of the displayed quadratic
    formula), so only the higher-order remainder is sampled.
    """
    if n_mc < MIN_MC:
        raise ValueError(f"n_mc must be >= {MIN_MC}, got {n_mc}")
    if policy.mode == "none":
        raise ValueError("mix mode 'none' has no mixing distribution")
    X = dataset.features
    y = dataset.labels.astype(np.float64)
    n, d = X.shape
    w = _weights_array(weights, n)
    _check_centered(X, w)
    if policy.mode == "cutmask":
        policy.check_dim(d)
    theta, b = _glm_parts(glm)

    # lam_bar = E[M] per coordinate; exact for vanilla, Monte-Carlo for cut masks
    moments = tilde_moments(policy.alpha, policy.beta)
    if policy.mode == "vanilla":
        lam_bar = moments["mean"]
        mask_mean = np.full(d, lam_bar)
        mask_cov = np.full((d, d), moments["var"])
        one_minus_outer = np.full((d, d), moments["one_minus_sq"])
    else:
        M = _draw_masks(policy, d, max(n_mc // 10, MIN_MC), rng)
        mask_mean = M.mean(axis=0)
        lam_bar = float(mask_mean.mean())
        mask_cov = np.cov(M, rowvar=False, bias=True).reshape(d, d)
        U = 1.0 - M
        one_minus_outer = U.T @ U / len(U)

    z = X @ theta + b
    loss_i = log_partition(z) - y * z
    L_n = float(np.mean(w * loss_i))

    # r ~ w / sum(w) has second moment Sigma_hat with the weights scaled to mean one
    sigma_hat = weighted_covariance(X, w / w.mean())
    a2 = log_partition_dd(z)
    base_quad = theta @ (one_minus_outer * sigma_hat) @ theta
    x_theta = X * theta[None, :]
    per_i = base_quad + np.einsum("ia,ab,ib->i", x_theta, mask_cov, x_theta)
    quadratic = float(np.sum(w * a2 * per_i) / (2.0 * n * lam_bar ** 2))

    p_r = w / w.sum()
    mean_dz, mean_dz2 = _taylor_moments(X, theta, p_r, mask_mean, mask_cov, lam_bar)
    a1 = sigmoid(z) - y
    added_back = float(np.mean(w * (a1 * mean_dz + 0.5 * a2 * mean_dz2)))

    total, total_sq = 0.0, 0.0
    oml_sum, oml_sq = 0.0, 0.0
    done = 0
    while done < n_mc:
        m = min(CHUNK, n_mc - done)
        i = rng.integers(0, n, size=m)
        r = rng.choice(n, size=m, p=p_r)
        if policy.mode == "vanilla":
            lam, _ = sample_lambda_tilde(policy.alpha, policy.beta, rng, size=m)
            Mm = lam[:, None]
            oml = (1.0 - lam) ** 2
        else:
            Mm = _draw_masks(policy, d, m, rng)
            oml = (1.0 - Mm.mean(axis=1)) ** 2
        xh = (Mm * X[i] + (1.0 - Mm) * X[r]) / lam_bar
        zh = xh @ theta + b
        dz = zh - z[i]
        taylor = a1[i] * dz + 0.5 * a2[i] * dz * dz
        term = w[i] * (log_partition(zh) - y[i] * zh - loss_i[i] - taylor)
        total += term.sum()
        total_sq += (term * term).sum()
        oml_sum += oml.sum()
        oml_sq += (oml * oml).sum()
        done += m

    mean = total / n_mc
    se = math.sqrt(max(total_sq / n_mc - mean * mean, 0.0) / (n_mc - 1))
    oml_mean = oml_sum / n_mc
    oml_se = math.sqrt(max(oml_sq / n_mc - oml_mean ** 2, 0.0) / (n_mc - 1))
    lhs = L_n + added_back + mean
    rhs = L_n + quadratic
    return ResidualResult(abs(lhs - rhs), se, lhs, rhs, L_n, quadratic,
                          Estimate(oml_mean, oml_se), float(lam_bar), int(n_mc), added_back)


def w_gamma_value(glm: GlmModel, dataset: LabeledDataset, weights, policy: MixPolicy,
                  n_mc: int, rng: np.random.Generator) -> float:
    """E_x[A''(theta^T x) theta^T (Sigma_M + (x x^T) * Cov(M)) theta] at the given theta."""
    X = dataset.features
    n, d = X.shape
    w = _weights_array(weights, n)
    theta, b = _glm_parts(glm)
    M = _draw_masks(policy, d, max(n_mc, 2), rng) if policy.mode != "none" else np.ones((2, d))
    mask_cov = np.cov(M, rowvar=False, bias=True).reshape(d, d)
    U = 1.0 - M
    sm = (U.T @ U / len(U)) * weighted_covariance(X, w)
    xt = X * theta[None, :]
    per_i = theta @ sm @ theta + np.einsum("ia,ab,ib->i", xt, mask_cov, xt)
    return float(np.mean(log_partition_dd(X @ theta + b) * per_i))


# Generalization error --------------------------------------------------------------

def _sample_weights(weights_fn, dataset: LabeledDataset) -> np.ndarray:
    if weights_fn is None:
        return np.ones(dataset.n)
    if callable(weights_fn):
        if not dataset.has_groups:
            raise ValueError(f"{dataset.name}: group-based weights need group ids")
        return np.array([float(weights_fn(int(g))) for g in dataset.group_ids])
    table = np.asarray(weights_fn, dtype=np.float64)
    if not dataset.has_groups:
        raise ValueError(f"{dataset.name}: group-based weights need group ids")
    return table[dataset.group_ids]


def gerror_with_se(model, train: LabeledDataset, test: LabeledDataset, weights_fn=None) -> Estimate:
    """Weighted mean test loss minus weighted mean train loss, with the SE of that difference."""
    parts = []
    for ds in (test, train):
        v = _sample_weights(weights_fn, ds) * per_sample_loss(model, ds.features, ds.labels)
        parts.append((v.mean(), v.var(ddof=1) / ds.n if ds.n > 1 else 0.0))
    return Estimate(float(parts[0][0] - parts[1][0]), math.sqrt(parts[0][1] + parts[1][1]))


def empirical_gerror(model, train: LabeledDataset, test: LabeledDataset,
                     weights_fn: Callable[[int], float] | None = None) -> float:
    return gerror_with_se(model, train, test, weights_fn).value


# Report ----------------------------------------------------------------------

NOT_ESTIMATED = "not estimated"


@dataclass
class TheoryReport:
    sigma_hat: np.ndarray
    sigma_m: np.ndarray
    trace_term: float
    rank_term: int
    sqrt_d: float
    rho_hat: float
    approx_residuals: list = field(default_factory=list)  # (label, ResidualResult)
    gerror: float | None = None
    w_gamma: float | None = None
    mc_shards: int = 1
    rank_demo: dict | None = None  # bound terms on low-rank data with their closed form

    def __post_init__(self):
        if self.trace_term < 0 or self.rho_hat < 0:
            raise ValueError("trace_term and rho_hat must be >= 0")
        if self.rank_term > self.sigma_hat.shape[0]:
            raise ValueError("rank exceeds dimension")

    def rows(self) -> list[tuple[str, str, str, str]]:
        """(term, value, comparator, pass/fail) lines for display."""
        bound = self.trace_term + self.rank_term
        out = [("trace_term + rank_term (data)", f"{bound:.4f}", f"sqrt(d) = {self.sqrt_d:.4f}", "info")]
        if self.rank_demo is not None:
            rd = self.rank_demo
            demo = rd["trace_term"] + rd["rank_term"]
            out.append((f"trace_term + rank_term (rank {rd['rank']} in d={rd['d']})", f"{demo:.4f}",
                        f"sqrt(d) = {rd['sqrt_d']:.4f}; closed form "
                        f"{rd['closed_form_trace_term'] + rd['rank']:.4f}",
                        "pass" if demo < rd["sqrt_d"] else "fail"))
        out.append(("rho_hat", f"{self.rho_hat:.4g}", "> 0", "pass" if self.rho_hat > 0 else "fail"))
        for label, res in self.approx_residuals:
            ok = res.residual <= 3 * res.se or res.residual <= abs(res.quadratic)
            out.append((f"residual {label}", f"{res.residual:.3e}",
                        f"3 SE = {3 * res.se:.3e}; quadratic = {res.quadratic:.3e}",
                        "pass" if ok else "fail"))
        if self.gerror is not None:
            out.append(("gerror", f"{self.gerror:.4g}", "", ""))
        return out

    def table(self) -> str:
        rows = [("term", "value", "comparator", "status"), *self.rows()]
        widths = [max(len(r[k]) for r in rows) for k in range(4)]
        return "\n".join("  ".join(c.ljust(wd) for c, wd in zip(r, widths)) for r in rows)

    def to_dict(self) -> dict:
        return {
            "sigma_hat": self.sigma_hat.tolist(), "sigma_m": self.sigma_m.tolist(),
            "trace_term": self.trace_term, "rank_term": self.rank_term, "sqrt_d": self.sqrt_d,
            "rho_hat": self.rho_hat,
            "approx_residuals": [{"label": lab, **res.to_dict()} for lab, res in self.approx_residuals],
            "gerror": self.gerror, "w_gamma": self.w_gamma, "mc_shards": self.mc_shards,
            "rank_demo": self.rank_demo,
            "L": NOT_ESTIMATED, "B": NOT_ESTIMATED, "L_A": NOT_ESTIMATED, "gamma": NOT_ESTIMATED,
        }
