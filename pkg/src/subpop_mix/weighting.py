"""Per-sample importance weights: group-size based and training-trajectory uncertainty."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import LabeledDataset


@dataclass(frozen=True)
class WeightAssignment:
    weights: np.ndarray
    mode: str = "uniform"  # uniform | group_aware | uncertainty
    params: dict = field(default_factory=dict)
    normalization: str = "none"  # none | mean_one

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be a vector of finite positive numbers")
        if self.normalization not in ("none", "mean_one"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.normalization == "mean_one":
            w = w / w.mean()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.weights)

    def normalized(self) -> "WeightAssignment":
        return WeightAssignment(self.weights, self.mode, self.params, "mean_one")


def uniform_weights(n: int) -> WeightAssignment:
    return WeightAssignment(np.ones(n), "uniform")


def group_aware_weights(dataset: LabeledDataset, C: float,
                        normalization: str = "none") -> WeightAssignment:
    """w_i = exp(C / sqrt(n_g)) with n_g = k_g * N the training size of sample i's group."""
    if not dataset.has_groups:
        raise ValueError("group-aware weights need group ids")
    if C < 0:
        raise ValueError("C must be >= 0")
    counts = dataset.group_counts().astype(np.float64)
    per_group = np.ones_like(counts)
    present = counts > 0
    per_group[present] = np.exp(C / np.sqrt(counts[present]))
    return WeightAssignment(per_group[dataset.group_ids], "group_aware", {"C": float(C)},
                            normalization)


def kappa(y_true, y_pred):
    """0 when the prediction is correct, 1 otherwise (elementwise for arrays)."""
    out = (np.asarray(y_true) != np.asarray(y_pred)).astype(np.int8)
    return int(out) if out.ndim == 0 else out


class TrajectoryLog:
    """Append-only epochs x samples matrix of misclassification bits."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("sample count must be >= 1")
        self.sample_count = int(n)
        self._rows: list[np.ndarray] = []
        self._frozen = False

    @property
    def epoch_count(self) -> int:
        return len(self._rows)

    @property
    def correctness(self) -> np.ndarray:
        """Stored kappa bits (1 = misclassified), shape (epochs, n)."""
        if not self._rows:
            return np.zeros((0, self.sample_count), dtype=np.int8)
        return np.vstack(self._rows)

    def record_epoch(self, y_true, y_pred) -> None:
        if self._frozen:
            raise RuntimeError("trajectory log is finalized")
        y_true = np.asarray(y_true)
        y_pred = np.asarray(y_pred)
        if y_true.shape != (self.sample_count,) or y_pred.shape != (self.sample_count,):
            raise ValueError(f"expected {self.sample_count} labels and predictions, got "
                             f"{y_true.shape} and {y_pred.shape}")
        self._rows.append(kappa(y_true, y_pred))

    def finalize(self) -> "TrajectoryLog":
        self._frozen = True
        return self

    def save(self, path, t_start: int | None = None, t_window: int | None = None) -> None:
        """Bit matrix as CSV (one row per epoch) plus a JSON sidecar ``<path>.json``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for row in self._rows:
                fh.write("".join("1" if b else "0" for b in row) + "\n")
        meta = {"epochs": self.epoch_count, "n": self.sample_count, "T_s": t_start, "T": t_window}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "TrajectoryLog":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        log = cls(meta["n"])
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            if len(line) != log.sample_count or set(line) - {"0", "1"}:
                raise ValueError(f"{path}:{lineno}: malformed bit row")
            log._rows.append(np.frombuffer(line.encode(), dtype=np.uint8).astype(np.int8) - ord("0"))
        if log.epoch_count != meta["epochs"]:
            raise ValueError(f"{path}: sidecar says {meta['epochs']} epochs, found {log.epoch_count}")
        return log.finalize()


def record_epoch(log: TrajectoryLog, y_true, y_pred) -> None:
    log.record_epoch(y_true, y_pred)


@dataclass(frozen=True)
class UncertaintyConfig:
    t_start: int  # first epoch of the window, 1-based
    t_window: int  # window covers epochs t_start .. t_start + t_window inclusive
    eta: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        if self.t_start < 1 or self.t_window < 0:
            raise ValueError("t_start must be >= 1 and t_window >= 0")
        if self.eta < 0 or self.c <= 0:
            raise ValueError("eta must be >= 0 and c > 0")

    @property
    def last_epoch(self) -> int:
        return self.t_start + self.t_window


def uncertainty_from_trajectory(log: TrajectoryLog, cfg: UncertaintyConfig) -> np.ndarray:
    """Mean misclassification rate over epochs t_start..t_start+t_window (inclusive, 1-based)."""
    if cfg.last_epoch > log.epoch_count:
        raise ValueError(f"window ends at epoch {cfg.last_epoch} but only "
                         f"{log.epoch_count} epochs were recorded")
    bits = log.correctness[cfg.t_start - 1:cfg.last_epoch]
    return bits.mean(axis=0, dtype=np.float64)


def weights_from_uncertainty(u, eta: float, c: float = 1.0,
                             normalization: str = "none") -> WeightAssignment:
    """w_i = eta * u_i + c."""
    if eta < 0 or c <= 0:
        raise ValueError("eta must be >= 0 and c > 0")
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 0) or np.any(u > 1):
        raise ValueError("uncertainties must lie in [0, 1]")
    return WeightAssignment(eta * u + c, "uncertainty", {"eta": float(eta), "c": float(c)},
                            normalization)


def save_weights_csv(path, weights: WeightAssignment, group_ids=None, u=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(weights)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "group", "u", "w"])
        for i in range(n):
            w.writerow([i, "" if group_ids is None else int(group_ids[i]),
                        "" if u is None else repr(float(u[i])), repr(float(weights.weights[i]))])


def load_weights_csv(path, mode: str = "uncertainty") -> tuple[WeightAssignment, np.ndarray | None]:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or list(rows[0]) != ["index", "group", "u", "w"]:
        raise ValueError(f"{path}: expected header index,group,u,w")
    for k, r in enumerate(rows):
        if int(r["index"]) != k:
            raise ValueError(f"{path}:{k + 2}: index out of order")
    w = np.array([float(r["w"]) for r in rows])
    u = None if rows[0]["u"] == "" else np.array([float(r["u"]) for r in rows])
    return WeightAssignment(w, mode), u
