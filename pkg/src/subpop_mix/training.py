"""Training loops: reweighted mixup, the ERM trajectory stage and the ablation baselines.

Every trainer is the same loop (``_run``) with different pairing, mixing and
weights, so reductions such as "mixup is RMix with unit weights" hold bit for
bit rather than approximately.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .data import LabeledDataset
from .evalreport import Metrics, evaluate
from .mixing import MixPolicy, draw_mix, mix_inputs
from .models import Model, batch_rmix_loss_grad, build_model, predict
from .weighting import TrajectoryLog, WeightAssignment, uniform_weights

log = logging.getLogger(__name__)

PAIRINGS = ("permutation", "replacement")
BASELINES = ("erm", "iw", "mixup", "igmix")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    mix: MixPolicy = field(default_factory=MixPolicy)
    weight_mode: str = "uniform"
    optimizer: str = "sgd_momentum"
    no_mix_uses_self: bool = False
    pairing: str = "permutation"

    def __post_init__(self):
        problems = []
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if not self.learning_rate > 0:
            problems.append("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            problems.append("momentum must be in [0, 1)")
        if self.optimizer != "sgd_momentum":
            problems.append(f"unsupported optimizer {self.optimizer!r}")
        if self.pairing not in PAIRINGS:
            problems.append(f"pairing must be one of {PAIRINGS}")
        if problems:
            raise ValueError("; ".join(problems))

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "momentum": self.momentum,
                "seed": self.seed, "mix": self.mix.to_dict(), "weight_mode": self.weight_mode,
                "optimizer": self.optimizer, "no_mix_uses_self": self.no_mix_uses_self,
                "pairing": self.pairing}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {"epochs", "batch_size", "learning_rate", "momentum", "seed", "mix",
                 "weight_mode", "optimizer", "no_mix_uses_self", "pairing"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        kw = dict(d)
        if "mix" in kw:
            kw["mix"] = MixPolicy.from_dict(kw["mix"])
        return cls(**kw)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    train_group_accuracy: list[float] | None
    val: Metrics | None = None

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "train_accuracy": self.train_accuracy,
                "train_group_accuracy": self.train_group_accuracy,
                "val": None if self.val is None else self.val.to_dict()}


@dataclass
class TrainRecord:
    epochs: list[EpochRecord] = field(default_factory=list)
    checkpoints: list[np.ndarray] = field(default_factory=list)
    model: Model | None = None
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.epochs)

    @property
    def train_loss(self) -> np.ndarray:
        return np.array([e.train_loss for e in self.epochs])

    def group_accuracy_matrix(self) -> np.ndarray:
        """Per-epoch train accuracy per group, shape (epochs, G)."""
        return np.array([e.train_group_accuracy for e in self.epochs], dtype=np.float64)

    def model_at(self, epoch: int) -> Model:
        """Model with the parameters saved after ``epoch`` (1-based)."""
        m = self.model.copy()
        m.set_flat(self.checkpoints[epoch - 1])
        return m

    def write_jsonl(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for e in self.epochs:
                fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")


class SgdMomentum:
    """v <- mu v + g; theta <- theta - lr v."""

    def __init__(self, n_params: int, lr: float, momentum: float):
        self.lr = lr
        self.momentum = momentum
        self.velocity = np.zeros(n_params)

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.velocity = self.momentum * self.velocity + grad
        return params - self.lr * self.velocity


def _partners(batch_size: int, rng: np.random.Generator, pairing: str) -> np.ndarray:
    """Position of each batch member's partner inside the batch."""
    if pairing == "replacement":
        return rng.integers(0, batch_size, size=batch_size)
    return rng.permutation(batch_size)


def _cell_partners(cells: np.ndarray, rng: np.random.Generator, pairing: str) -> np.ndarray:
    """Partners restricted to batch members in the same cell; singletons pair with themselves."""
    out = np.arange(len(cells))
    for c in np.unique(cells):
        members = np.flatnonzero(cells == c)
        out[members] = members[_partners(len(members), rng, pairing)]
    return out


def _group_accuracy(correct: np.ndarray, dataset: LabeledDataset) -> list[float] | None:
    if not dataset.has_groups:
        return None
    G = dataset.n_groups
    hits = np.bincount(dataset.group_ids, weights=correct, minlength=G)
    counts = np.bincount(dataset.group_ids, minlength=G)
    return [float(h / c) if c else float("nan") for h, c in zip(hits, counts)]


def _run(dataset: LabeledDataset, weights: WeightAssignment, cfg: TrainConfig, model_spec: dict,
         val: LabeledDataset | None = None, in_cell: bool = False,
         trajectory: TrajectoryLog | None = None) -> tuple[Model, TrainRecord]:
    n, d = dataset.n, dataset.d
    if len(weights) != n:
        raise ValueError(f"{len(weights)} weights for {n} samples")
    if in_cell and not dataset.has_groups:
        raise ValueError("in-group pairing needs group ids")
    policy = cfg.mix
    if policy.mode != "none":
        policy.check_dim(d)
    X, y, w = dataset.features, dataset.labels, weights.weights
    cells = dataset.labels * dataset.n_groups + dataset.group_ids if in_cell else None

    model = build_model(model_spec, d, dataset.n_classes, rngmod.make_rng(cfg.seed, rngmod.INIT))
    rng = rngmod.make_rng(cfg.seed, rngmod.TRAIN)
    opt = SgdMomentum(model.n_params, cfg.learning_rate, cfg.momentum)
    params = model.flat()
    record = TrainRecord(config=cfg.to_dict())

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total, steps = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            b = len(idx)
            # the draws below happen on every step so that all trainers consume
            # the stream identically whatever branch they take
            pos = (_cell_partners(cells[idx], rng, cfg.pairing) if in_cell
                   else _partners(b, rng, cfg.pairing))
            jdx = idx[pos]
            p = rng.random()
            if policy.mode != "none" and p < policy.sigma:
                draw = draw_mix(policy, d, rng)
                Xt = mix_inputs(X[idx], X[jdx], draw.mask)
                value, grad = batch_rmix_loss_grad(model, Xt, y[idx], y[jdx], draw.lam,
                                                   w[idx], w[jdx])
            else:
                # lambda = 0 leaves w_j l(x_j, y_j); the switch trains on x_i instead.
                # Under permutation pairing both are the same batch, evaluated in batch order.
                src = idx if (cfg.no_mix_uses_self or cfg.pairing == "permutation") else jdx
                value, grad = batch_rmix_loss_grad(model, X[src], y[src], y[src], 1.0,
                                                   w[src], w[src])
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            params = opt.step(params, grad)
            model.set_flat(params)
            total += value
            steps += 1

        pred = predict(model, X)
        correct = (pred == y).astype(np.float64)
        if trajectory is not None:
            trajectory.record_epoch(y, pred)
        rec = EpochRecord(epoch, total / steps, float(correct.mean()),
                          _group_accuracy(correct, dataset),
                          evaluate(model, val) if val is not None else None)
        record.epochs.append(rec)
        record.checkpoints.append(params.copy())
        log.debug("epoch %d loss %.5f acc %.4f", epoch, rec.train_loss, rec.train_accuracy)

    record.model = model
    return model, record


def train_rmix(dataset: LabeledDataset, weights: WeightAssignment, cfg: TrainConfig,
               model_spec: dict, val: LabeledDataset | None = None) -> tuple[Model, TrainRecord]:
    """Reweighted mixup: each step mixes a batch with partners and weights both halves of the loss."""
    return _run(dataset, weights, cfg, model_spec, val)


def train_erm_with_trajectory(dataset: LabeledDataset, cfg: TrainConfig, model_spec: dict,
                              val: LabeledDataset | None = None):
    """Unweighted, unmixed training that logs per-epoch misclassification bits."""
    if cfg.mix.mode != "none":
        raise ValueError("the trajectory stage trains without mixing (mix mode 'none')")
    traj = TrajectoryLog(dataset.n)
    model, record = _run(dataset, uniform_weights(dataset.n), cfg, model_spec, val,
                         trajectory=traj)
    return model, traj.finalize(), record


def train_baseline(dataset: LabeledDataset, kind: str, cfg: TrainConfig, model_spec: dict,
                   weights: WeightAssignment | None = None, val: LabeledDataset | None = None):
    if kind not in BASELINES:
        raise ValueError(f"baseline must be one of {BASELINES}, got {kind!r}")
    if kind == "iw" and weights is None:
        raise ValueError("iw needs weights")
    if kind == "igmix" and not dataset.has_groups:
        raise ValueError("igmix needs group ids")
    if kind in ("erm", "iw"):
        cfg = replace(cfg, mix=replace(cfg.mix, sigma=0.0))
    w = weights if kind == "iw" else uniform_weights(dataset.n)
    return _run(dataset, w, cfg, model_spec, val, in_cell=(kind == "igmix"))
