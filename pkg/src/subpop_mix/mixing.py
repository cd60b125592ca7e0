"""Mixing template x~ = M * x_i + (1 - M) * x_j with vanilla and cut-mask masks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

MODES = ("vanilla", "cutmask", "none")


@dataclass(frozen=True)
class MixPolicy:
    mode: str = "vanilla"
    alpha: float = 1.0
    beta: float | None = None  # None -> same as alpha
    sigma: float = 1.0
    grid: tuple[int, int] | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mix mode must be one of {MODES}, got {self.mode!r}")
        if self.beta is None:
            object.__setattr__(self, "beta", self.alpha)
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"alpha and beta must be > 0, got {self.alpha}, {self.beta}")
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError(f"sigma must be in [0, 1], got {self.sigma}")
        if self.grid is not None:
            grid = tuple(int(g) for g in self.grid)
            if len(grid) != 2 or min(grid) < 1:
                raise ValueError(f"grid must be (height, width) >= 1, got {self.grid}")
            object.__setattr__(self, "grid", grid)

    def check_dim(self, d: int) -> None:
        if self.grid is not None and self.grid[0] * self.grid[1] != d:
            raise ValueError(f"grid {self.grid} does not cover {d} features")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "alpha": self.alpha, "beta": self.beta,
                "sigma": self.sigma, "grid": list(self.grid) if self.grid else None}

    @classmethod
    def from_dict(cls, d: dict) -> "MixPolicy":
        unknown = set(d) - {"mode", "alpha", "beta", "sigma", "grid"}
        if unknown:
            raise ValueError(f"unknown mix keys: {sorted(unknown)}")
        grid = d.get("grid")
        return cls(mode=d.get("mode", "vanilla"), alpha=float(d.get("alpha", 1.0)),
                   beta=None if d.get("beta") is None else float(d["beta"]),
                   sigma=float(d.get("sigma", 1.0)), grid=tuple(grid) if grid else None)


class MixDraw(NamedTuple):
    lam: float
    mask: np.ndarray


def _check_shape_params(alpha, beta):
    if not (alpha > 0 and beta > 0):
        raise ValueError(f"Beta parameters must be > 0, got alpha={alpha}, beta={beta}")


def _gamma_ratio(a, b, rng, size):
    ga = rng.standard_gamma(a, size=size)
    gb = rng.standard_gamma(b, size=size)
    total = ga + gb
    # both gammas can underflow to 0 for tiny shapes; fall back to the mean
    safe = np.where(total > 0, total, 1.0)
    return np.where(total > 0, ga / safe, np.asarray(a) / (np.asarray(a) + np.asarray(b)))


def sample_lambda(alpha: float, beta: float, rng: np.random.Generator, size=None):
    """Beta(alpha, beta) draw(s) as G_a / (G_a + G_b) with independent Gamma variates."""
    _check_shape_params(alpha, beta)
    lam = _gamma_ratio(alpha, beta, rng, size)
    return float(lam) if size is None else lam


def sample_lambda_tilde(alpha: float, beta: float, rng: np.random.Generator, size=None):
    """Joint draw of (lambda, B) with lambda ~ Beta(a, b), B | lambda ~ Bernoulli(lambda).

    By conjugacy this is B ~ Bernoulli(a / (a + b)) and
    lambda | B ~ Beta(a + B, b + 1 - B); returns ``(lam, branch)``.
    """
    _check_shape_params(alpha, beta)
    branch = (rng.random(size=size) < alpha / (alpha + beta)).astype(np.int64)
    lam = _gamma_ratio(alpha + branch, beta + 1 - branch, rng, size)
    if size is None:
        return float(lam), int(branch)
    return lam, branch


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sample_mask(policy: MixPolicy, lam: float, d: int, rng: np.random.Generator) -> np.ndarray:
    if d < 1:
        raise ValueError("d must be >= 1")
    if policy.mode == "vanilla":
        return np.full(d, lam, dtype=np.float64)
    if policy.mode == "none":
        return np.ones(d, dtype=np.float64)
    policy.check_dim(d)
    mask = np.zeros(d, dtype=np.float64)
    if policy.grid is None:
        k = min(d, max(0, _round_half_up(lam * d)))
        if k:
            mask[rng.choice(d, size=k, replace=False)] = 1.0
        return mask
    h_grid, w_grid = policy.grid
    side = math.sqrt(max(lam, 0.0))
    h = min(h_grid, _round_half_up(side * h_grid))
    w = min(w_grid, _round_half_up(side * w_grid))
    top = int(rng.integers(0, h_grid - h + 1))
    left = int(rng.integers(0, w_grid - w + 1))
    box = mask.reshape(h_grid, w_grid)
    box[top:top + h, left:left + w] = 1.0
    return mask


def draw_mix(policy: MixPolicy, d: int, rng: np.random.Generator, lam: float | None = None) -> MixDraw:
    """Draw lambda (unless given) and its mask; cut masks report their realized area."""
    if lam is None:
        lam = sample_lambda(policy.alpha, policy.beta, rng)
    mask = sample_mask(policy, lam, d, rng)
    if policy.mode == "cutmask":
        lam = float(mask.mean())
    return MixDraw(float(lam), mask)


def mix_inputs(x_i, x_j, mask) -> np.ndarray:
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if x_i.shape != x_j.shape or x_i.shape[-1] != mask.shape[-1]:
        raise ValueError(f"shape mismatch: {x_i.shape}, {x_j.shape}, mask {mask.shape}")
    return mask * x_i + (1.0 - mask) * x_j


def mix_labels(y_i, y_j, lam: float) -> np.ndarray:
    y_i = np.asarray(y_i, dtype=np.float64)
    y_j = np.asarray(y_j, dtype=np.float64)
    if y_i.shape != y_j.shape:
        raise ValueError(f"label vectors differ in length: {y_i.shape} vs {y_j.shape}")
    return lam * y_i + (1.0 - lam) * y_j


def one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape + (k,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out
