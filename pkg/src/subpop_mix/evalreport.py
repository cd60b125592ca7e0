"""Group metrics, checkpoint selection, uncertainty KDE and report files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .models import predict

CRITERIA = ("worst", "average")


@dataclass(frozen=True)
class Metrics:
    per_group_accuracy: tuple[float, ...]
    average_accuracy: float
    worst_accuracy: float
    gap: float

    def to_dict(self) -> dict:
        return {"per_group_accuracy": list(self.per_group_accuracy),
                "average_accuracy": self.average_accuracy,
                "worst_accuracy": self.worst_accuracy, "gap": self.gap}

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        return cls(tuple(float(a) for a in d["per_group_accuracy"]), float(d["average_accuracy"]),
                   float(d["worst_accuracy"]), float(d["gap"]))

    def criterion(self, name: str) -> float:
        if name == "worst":
            return self.worst_accuracy
        if name == "average":
            return self.average_accuracy
        raise ValueError(f"criterion must be one of {CRITERIA}, got {name!r}")


def metrics_from_predictions(y_true, y_pred, group_ids, n_groups: int | None = None) -> Metrics:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    g = np.asarray(group_ids, dtype=np.int64)
    G = int(g.max()) + 1 if n_groups is None else n_groups
    correct = (y_true == y_pred).astype(np.float64)
    counts = np.bincount(g, minlength=G)
    if np.any(counts == 0):
        raise ValueError(f"empty group(s): {np.flatnonzero(counts == 0).tolist()}")
    per_group = np.bincount(g, weights=correct, minlength=G) / counts
    average = float(correct.mean())
    worst = float(per_group.min())
    return Metrics(tuple(float(a) for a in per_group), average, worst, average - worst)


def evaluate(model, dataset) -> Metrics:
    if not dataset.has_groups:
        raise ValueError("evaluation needs group ids")
    return metrics_from_predictions(dataset.labels, predict(model, dataset.features),
                                    dataset.group_ids, dataset.n_groups)


def select_model(records, criterion: str = "worst") -> int:
    """1-based epoch whose validation metric is largest; ties go to the earliest epoch.

    ``records`` is a TrainRecord or a sequence of Metrics (one per epoch).
    """
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    epochs = getattr(records, "epochs", None)
    metrics = [e.val for e in epochs] if epochs is not None else list(records)
    if not metrics:
        raise ValueError("no checkpoints to select from")
    if any(m is None for m in metrics):
        raise ValueError("every checkpoint needs validation metrics")
    scores = np.array([m.criterion(criterion) for m in metrics])
    return int(np.argmax(scores)) + 1


@dataclass(frozen=True)
class KdeCurve:
    grid: np.ndarray
    densities: dict  # group id -> density on grid
    bandwidth: float

    def mode(self, group: int) -> float:
        return float(self.grid[int(np.argmax(self.densities[group]))])

    def integral(self, group: int) -> float:
        return float(np.trapezoid(self.densities[group], self.grid))


def silverman_bandwidth(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return 0.05
    std = v.std(ddof=1)
    q75, q25 = np.percentile(v, [75, 25])
    spread = min(std, (q75 - q25) / 1.34) or std
    if spread <= 0:
        return 0.05  # all values equal: no scale to infer from
    return float(0.9 * spread * v.size ** -0.2)


def kde_uncertainty(u, group_ids, bandwidth: float | None = None, grid_points: int = 201) -> KdeCurve:
    u = np.asarray(u, dtype=np.float64)
    g = np.asarray(group_ids, dtype=np.int64)
    if u.shape != g.shape:
        raise ValueError("u and group_ids differ in length")
    if np.any(u < 0) or np.any(u > 1):
        raise ValueError("uncertainties must lie in [0, 1]")
    h = silverman_bandwidth(u) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be > 0")
    grid = np.linspace(0.0, 1.0, grid_points)
    G = int(g.max()) + 1
    densities = {}
    for k in range(G):
        vals = u[g == k]
        if vals.size == 0:
            raise ValueError(f"group {k} is empty")
        z = (grid[:, None] - vals[None, :]) / h
        densities[k] = np.exp(-0.5 * z * z).sum(axis=1) / (vals.size * h * math.sqrt(2 * math.pi))
    return KdeCurve(grid, densities, h)


def write_kde_csv(curve: KdeCurve, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    groups = sorted(curve.densities)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u", *(f"group_{k}" for k in groups)])
        for i, x in enumerate(curve.grid):
            w.writerow([f"{x:.6f}", *(f"{curve.densities[k][i]:.8g}" for k in groups)])


def _pct(x: float) -> str:
    return f"{100.0 * x:.1f}"


def summary_markdown(metrics: Metrics) -> str:
    lines = ["| metric | value (%) |", "|---|---|",
             f"| average | {_pct(metrics.average_accuracy)} |",
             f"| worst | {_pct(metrics.worst_accuracy)} |",
             f"| gap | {_pct(metrics.gap)} |"]
    lines += [f"| group {g} | {_pct(a)} |" for g, a in enumerate(metrics.per_group_accuracy)]
    return "\n".join(lines) + "\n"


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def emit_report(metrics: Metrics, path, theory=None, curves: KdeCurve | None = None) -> list[Path]:
    """Write metrics.json, summary.md and, when given, theory.json and kde.csv into ``path``."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = [out / "metrics.json", out / "summary.md"]
        write_json(metrics.to_dict(), written[0])
        text = "# Evaluation summary\n\n" + summary_markdown(metrics)
        if theory is not None:
            written.append(out / "theory.json")
            write_json(theory.to_dict() if hasattr(theory, "to_dict") else theory, written[-1])
        if curves is not None:
            written.append(out / "kde.csv")
            write_kde_csv(curves, written[-1])
            text += "\n## Uncertainty modes by group\n\n"
            text += "\n".join(f"- group {k}: {curves.mode(k):.3f}" for k in sorted(curves.densities))
            text += "\n"
        written[1].write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    return written


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0
