"""Labeled datasets with group structure: generators, CSV I/O, stratified splits."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import DATA, SPLIT, make_rng

log = logging.getLogger(__name__)


class DataParseError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    group_ids: np.ndarray | None = None
    name: str = "dataset"
    n_classes: int | None = None
    n_groups: int | None = None

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"features must be a non-empty n x d matrix, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite values")
        if y.shape != (x.shape[0],):
            raise ValueError(f"labels shape {y.shape} does not match {x.shape[0]} rows")
        if not np.all(y == np.round(y)) or np.any(y < 0):
            raise ValueError("labels must be non-negative integers")
        y = y.astype(np.int64)
        k = int(y.max()) + 1 if self.n_classes is None else int(self.n_classes)
        if y.max() >= k:
            raise ValueError(f"label {y.max()} out of range for {k} classes")
        g = self.group_ids
        n_groups = None
        if g is not None:
            g = np.asarray(g)
            if g.shape != y.shape or np.any(g < 0) or not np.all(g == np.round(g)):
                raise ValueError("group_ids must be non-negative integers, one per row")
            g = g.astype(np.int64)
            n_groups = int(g.max()) + 1 if self.n_groups is None else int(self.n_groups)
            if g.max() >= n_groups:
                raise ValueError(f"group id {g.max()} out of range for {n_groups} groups")
            g.setflags(write=False)
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "group_ids", g)
        object.__setattr__(self, "n_classes", k)
        object.__setattr__(self, "n_groups", n_groups)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def has_groups(self) -> bool:
        return self.group_ids is not None

    def group_counts(self) -> np.ndarray:
        if self.group_ids is None:
            raise ValueError(f"dataset {self.name!r} has no group ids")
        return np.bincount(self.group_ids, minlength=self.n_groups)

    def group_proportions(self) -> np.ndarray:
        """k_g = n_g / n for every group."""
        return self.group_counts() / self.n

    def subset(self, idx, name: str | None = None) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(
            self.features[idx],
            self.labels[idx],
            None if self.group_ids is None else self.group_ids[idx],
            name=name or self.name,
            n_classes=self.n_classes,
            n_groups=self.n_groups,
        )

    def with_features(self, features, name: str | None = None) -> "LabeledDataset":
        return LabeledDataset(features, self.labels, self.group_ids, name or self.name,
                              self.n_classes, self.n_groups)

    def metadata(self) -> dict:
        meta = {"name": self.name, "n": self.n, "d": self.d, "K": self.n_classes,
                "G": self.n_groups}
        if self.has_groups:
            meta["k_g"] = [float(k) for k in self.group_proportions()]
            meta["n_g"] = [int(c) for c in self.group_counts()]
        return meta

    def equals(self, other: "LabeledDataset", atol: float = 0.0) -> bool:
        if self.features.shape != other.features.shape:
            return False
        if not np.array_equal(self.labels, other.labels):
            return False
        if (self.group_ids is None) != (other.group_ids is None):
            return False
        if self.group_ids is not None and not np.array_equal(self.group_ids, other.group_ids):
            return False
        return bool(np.all(np.abs(self.features - other.features) <= atol))


def _check_sizes(sizes: Sequence[int], expected: int, what: str) -> list[int]:
    sizes = [int(s) for s in sizes]
    if len(sizes) != expected:
        raise ValueError(f"{what}: expected {expected} counts, got {len(sizes)}")
    if any(s < 1 for s in sizes):
        raise ValueError(f"{what}: every group size must be >= 1, got {sizes}")
    return sizes


# Four moons -----------------------------------------------------------------

# The first pair is the usual interleaved two-moons layout (radius 1). The
# second pair is the same shape shifted by a small FOUR_MOONS_OFFSET with the
# label roles swapped, so the minority arcs lie across majority arcs of the
# other class and a boundary fitted to the majority gets most of them wrong.
FOUR_MOONS_OFFSET = (1.0, 0.25)
FOUR_MOONS_LABELS = (0, 1, 0, 1)


def four_moons_arc(group: int, t, offset=FOUR_MOONS_OFFSET) -> np.ndarray:
    """Noise-free point(s) on the arc of ``group`` at angle(s) ``t`` in [0, pi]."""
    t = np.asarray(t, dtype=np.float64)
    upper = np.stack([np.cos(t), np.sin(t)], axis=-1)
    lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=-1)
    shift = np.asarray(offset, dtype=np.float64)
    if group == 0:
        return upper
    if group == 1:
        return lower
    if group == 2:
        return lower + shift
    if group == 3:
        return upper + shift
    raise ValueError(f"four moons has groups 0..3, got {group}")


def gen_four_moons(group_sizes: Sequence[int] = (1000, 1000, 50, 50), noise_std: float = 0.1,
                   seed: int = 0, offset=FOUR_MOONS_OFFSET, name: str = "four_moons",
                   stream: Sequence[int] = ()) -> LabeledDataset:
    """``stream`` picks an independent draw for the same seed (e.g. held-out sets)."""
    sizes = _check_sizes(group_sizes, 4, "gen_four_moons")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    rng = make_rng(seed, DATA, *stream)
    xs, ys, gs = [], [], []
    for g, m in enumerate(sizes):
        t = rng.uniform(0.0, math.pi, size=m)
        pts = four_moons_arc(g, t, offset)
        if noise_std > 0:
            pts = pts + rng.normal(0.0, noise_std, size=pts.shape)
        xs.append(pts)
        ys.append(np.full(m, FOUR_MOONS_LABELS[g]))
        gs.append(np.full(m, g))
    return LabeledDataset(np.concatenate(xs), np.concatenate(ys), np.concatenate(gs),
                          name=name, n_classes=2, n_groups=4)


# Spurious-feature Gaussians ---------------------------------------------------

# group -> (label, sign of the spurious mean); groups 0/1 are the majority
# cells where the spurious sign agrees with the label.
SPURIOUS_CELLS = ((0, -1.0), (1, 1.0), (0, 1.0), (1, -1.0))


def gen_spurious_gaussian(n_per_group: Sequence[int] = (950, 950, 50, 50), core_dim: int = 2,
                          spurious_dim: int = 2, correlation_strength: float = 1.0, seed: int = 0,
                          core_margin: float = 1.0, name: str = "spurious_gaussian",
                          stream: Sequence[int] = ()) -> LabeledDataset:
    """Label x background analogue: core features carry the label, spurious
    features carry a sign that matches the label in groups 0/1 and is flipped
    in groups 2/3."""
    sizes = _check_sizes(n_per_group, 4, "gen_spurious_gaussian")
    if core_dim < 1 or spurious_dim < 1:
        raise ValueError("core_dim and spurious_dim must be >= 1")
    rng = make_rng(seed, DATA, *stream)
    xs, ys, gs = [], [], []
    for g, m in enumerate(sizes):
        label, sign = SPURIOUS_CELLS[g]
        core = rng.normal(0.0, 1.0, size=(m, core_dim)) + (2 * label - 1) * core_margin
        spur = rng.normal(0.0, 1.0, size=(m, spurious_dim)) + sign * correlation_strength
        xs.append(np.hstack([core, spur]))
        ys.append(np.full(m, label))
        gs.append(np.full(m, g))
    return LabeledDataset(np.concatenate(xs), np.concatenate(ys), np.concatenate(gs),
                          name=name, n_classes=2, n_groups=4)


# CSV ---------------------------------------------------------------------------

def save_csv(dataset: LabeledDataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [f"f{k}" for k in range(dataset.d)] + ["label"]
    if dataset.has_groups:
        header.append("group")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]] + [int(dataset.labels[i])]
            if dataset.has_groups:
                row.append(int(dataset.group_ids[i]))
            w.writerow(row)


def load_csv(path, name: str | None = None) -> LabeledDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataParseError(path, 1, "empty file")
    header = [h.strip() for h in rows[0]]
    if "label" not in header:
        raise DataParseError(path, 1, "missing 'label' column")
    li = header.index("label")
    feat_cols = header[:li]
    if feat_cols != [f"f{k}" for k in range(len(feat_cols))] or not feat_cols:
        raise DataParseError(path, 1, "header must start with f0,...,f{d-1},label")
    rest = header[li + 1:]
    if rest not in ([], ["group"]):
        raise DataParseError(path, 1, f"unexpected columns after label: {rest}")
    has_group = rest == ["group"]
    width = len(header)
    d = len(feat_cols)
    feats, labels, groups = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise DataParseError(path, lineno, f"expected {width} cells, got {len(row)}")
        try:
            feats.append([float(c) for c in row[:d]])
        except ValueError as exc:
            raise DataParseError(path, lineno, f"non-numeric feature: {exc}") from None
        try:
            labels.append(int(row[d]))
            if has_group:
                groups.append(int(row[d + 1]))
        except ValueError as exc:
            raise DataParseError(path, lineno, f"non-integer label/group: {exc}") from None
    if not feats:
        raise DataParseError(path, 2, "no data rows")
    return LabeledDataset(np.array(feats), np.array(labels), np.array(groups) if has_group else None,
                          name=name or path.stem)


# Splits ------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be positive and sum to 1, got {fr}")


@dataclass
class SplitResult:
    train: LabeledDataset
    val: LabeledDataset
    test: LabeledDataset
    indices: tuple[np.ndarray, np.ndarray, np.ndarray]
    warnings: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter((self.train, self.val, self.test))


def stratified_split(dataset: LabeledDataset, spec: SplitSpec) -> SplitResult:
    """Disjoint, exhaustive train/val/test split stratified by group (or label)."""
    strata = dataset.group_ids if dataset.has_groups else dataset.labels
    rng = make_rng(spec.seed, SPLIT)
    parts = ([], [], [])
    notes = []
    for s in np.unique(strata):
        members = np.flatnonzero(strata == s)
        m = len(members)
        if m < 3:
            msg = f"stratum {int(s)} has {m} < 3 members; all assigned to train"
            log.warning(msg)
            notes.append(msg)
            parts[0].append(members)
            continue
        perm = members[rng.permutation(m)]
        n_val = max(1, int(round(m * spec.val_frac)))
        n_test = max(1, int(round(m * spec.test_frac)))
        n_train = m - n_val - n_test
        if n_train < 1:
            n_train, n_val, n_test = 1, (m - 1) // 2, m - 1 - (m - 1) // 2
        parts[0].append(perm[:n_train])
        parts[1].append(perm[n_train:n_train + n_val])
        parts[2].append(perm[n_train + n_val:])
    idx = tuple(np.sort(np.concatenate(p)) if p else np.zeros(0, np.int64) for p in parts)
    names = ("train", "val", "test")
    sets = [dataset.subset(i, f"{dataset.name}-{nm}") if len(i) else None
            for i, nm in zip(idx, names)]
    if any(s is None for s in sets):
        raise ValueError("split produced an empty partition; dataset too small")
    return SplitResult(sets[0], sets[1], sets[2], idx, notes)
