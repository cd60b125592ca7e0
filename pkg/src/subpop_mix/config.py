"""Experiment configuration: JSON in, validated dataclass out.

Unknown keys are rejected at every level and all problems are reported together.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .evalreport import CRITERIA
from .mixing import MODES
from .training import PAIRINGS

OUT_ENV = "SUBPOP_MIX_OUT"

METHODS = ("erm", "iw", "mixup", "igmix", "rmix_group", "rmix_uncertainty")
GENERATORS = ("four_moons", "spurious_gaussian")
WEIGHT_MODES = ("uniform", "group_aware", "uncertainty")

DEFAULTS = {
    "dataset": {
        "generator": "four_moons",
        "params": {"group_sizes": [1000, 1000, 50, 50], "noise_std": 0.1, "offset": [1.0, 0.25]},
        "heldout": {"val": [100, 100, 100, 100], "test": [250, 250, 250, 250]},
    },
    "split": {"train_frac": 0.8, "val_frac": 0.1, "test_frac": 0.1},
    "model": {"kind": "mlp", "hidden": [32]},
    "train": {"epochs": 40, "batch_size": 64, "learning_rate": 0.05, "momentum": 0.9,
              "mix": {"mode": "vanilla", "alpha": 1.0, "sigma": 1.0},
              "no_mix_uses_self": False, "pairing": "permutation"},
    "weights": {"mode": "uncertainty", "normalization": "mean_one",
                "group_aware": {"C": 20.0},
                "uncertainty": {"erm_epochs": 40, "t_start": 1, "t_window": 39, "eta": 10.0, "c": 1.0}},
    "baselines": list(METHODS),
    "selection": ["worst", "average"],
    "seeds": [0, 1, 2, 3, 4],
    "output_dir": "runs/four_moons",
    "eval": {"checkpoint": None, "data": None},
    "theory": {"theta_norm": 0.1, "ladder": [[9.0, 1.0], [19.0, 1.0], [49.0, 1.0]],
               "n_mc": 1000000, "rho_dirs": 64, "rank_demo": {"d": 100, "rank": 5, "n_mc": 20000},
               "glm_epochs": 20},
}

SCHEMA = {
    "dataset": {"generator", "params", "csv", "heldout"},
    "split": {"train_frac", "val_frac", "test_frac"},
    "model": {"kind", "hidden", "intercept"},
    "train": {"epochs", "batch_size", "learning_rate", "momentum", "mix", "weight_mode",
              "optimizer", "no_mix_uses_self", "pairing"},
    "weights": {"mode", "normalization", "group_aware", "uncertainty", "path"},
    "eval": {"checkpoint", "data"},
    "theory": {"theta_norm", "ladder", "n_mc", "rho_dirs", "rank_demo", "glm_epochs"},
}
TOP_KEYS = set(SCHEMA) | {"baselines", "selection", "seeds", "output_dir"}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _num(problems, where, value, lo=None, hi=None, integer=False, lo_open=False):
    ok_type = isinstance(value, int) if integer else isinstance(value, (int, float))
    if isinstance(value, bool) or not ok_type:
        problems.append(f"{where}: expected {'an integer' if integer else 'a number'}, got {value!r}")
        return
    if lo is not None and (value <= lo if lo_open else value < lo):
        problems.append(f"{where}: must be {'>' if lo_open else '>='} {lo}, got {value}")
    if hi is not None and value > hi:
        problems.append(f"{where}: must be <= {hi}, got {value}")


def validate(raw: dict, base_dir: Path | None = None) -> list[str]:
    problems = []
    if not isinstance(raw, dict):
        return ["top level must be a JSON object"]
    for k in sorted(set(raw) - TOP_KEYS):
        problems.append(f"unknown key '{k}'")
    for section, keys in SCHEMA.items():
        sub = raw.get(section)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            problems.append(f"{section}: expected an object")
            continue
        for k in sorted(set(sub) - keys):
            problems.append(f"unknown key '{section}.{k}'")
    cfg = _merge(DEFAULTS, {k: v for k, v in raw.items() if k in TOP_KEYS})

    ds = cfg["dataset"]
    if raw.get("dataset", {}).get("csv") is not None:
        path = Path(ds["csv"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            problems.append(f"dataset.csv: file not found: {path}")
    elif ds.get("generator") not in GENERATORS:
        problems.append(f"dataset.generator: must be one of {GENERATORS}, got {ds.get('generator')!r}")
    held = ds.get("heldout")
    if held is not None:
        if not isinstance(held, dict) or set(held) != {"val", "test"}:
            problems.append("dataset.heldout: expected an object with 'val' and 'test' group sizes")

    sp = cfg["split"]
    for k in ("train_frac", "val_frac", "test_frac"):
        _num(problems, f"split.{k}", sp[k], lo=0, hi=1, lo_open=True)

    m = cfg["model"]
    if m.get("kind") not in ("mlp", "glm"):
        problems.append(f"model.kind: must be 'mlp' or 'glm', got {m.get('kind')!r}")
    if m.get("kind") == "mlp":
        hidden = m.get("hidden", [])
        if not isinstance(hidden, list) or not all(isinstance(h, int) and h >= 1 for h in hidden):
            problems.append("model.hidden: expected a list of positive integers")

    t = cfg["train"]
    _num(problems, "train.epochs", t["epochs"], lo=1, integer=True)
    _num(problems, "train.batch_size", t["batch_size"], lo=1, integer=True)
    _num(problems, "train.learning_rate", t["learning_rate"], lo=0, lo_open=True)
    _num(problems, "train.momentum", t["momentum"], lo=0, hi=0.999999)
    if t.get("pairing", "permutation") not in PAIRINGS:
        problems.append(f"train.pairing: must be one of {PAIRINGS}")
    mix = t["mix"]
    if not isinstance(mix, dict):
        problems.append("train.mix: expected an object")
    else:
        for k in sorted(set(mix) - {"mode", "alpha", "beta", "sigma", "grid"}):
            problems.append(f"unknown key 'train.mix.{k}'")
        if mix.get("mode", "vanilla") not in MODES:
            problems.append(f"train.mix.mode: must be one of {MODES}")
        _num(problems, "train.mix.alpha", mix.get("alpha", 1.0), lo=0, lo_open=True)
        if mix.get("beta") is not None:
            _num(problems, "train.mix.beta", mix["beta"], lo=0, lo_open=True)
        _num(problems, "train.mix.sigma", mix.get("sigma", 1.0), lo=0, hi=1)

    w = cfg["weights"]
    if w.get("mode") not in WEIGHT_MODES:
        problems.append(f"weights.mode: must be one of {WEIGHT_MODES}, got {w.get('mode')!r}")
    if w.get("normalization") not in ("none", "mean_one"):
        problems.append("weights.normalization: must be 'none' or 'mean_one'")
    ga = w.get("group_aware", {})
    for k in sorted(set(ga) - {"C"}):
        problems.append(f"unknown key 'weights.group_aware.{k}'")
    _num(problems, "weights.group_aware.C", ga.get("C", 0.0), lo=0)
    un = w.get("uncertainty", {})
    for k in sorted(set(un) - {"erm_epochs", "t_start", "t_window", "eta", "c"}):
        problems.append(f"unknown key 'weights.uncertainty.{k}'")
    _num(problems, "weights.uncertainty.erm_epochs", un.get("erm_epochs"), lo=1, integer=True)
    _num(problems, "weights.uncertainty.t_start", un.get("t_start"), lo=1, integer=True)
    _num(problems, "weights.uncertainty.t_window", un.get("t_window"), lo=0, integer=True)
    _num(problems, "weights.uncertainty.eta", un.get("eta"), lo=0)
    _num(problems, "weights.uncertainty.c", un.get("c"), lo=0, lo_open=True)
    if all(isinstance(un.get(k), int) for k in ("erm_epochs", "t_start", "t_window")):
        if un["t_start"] + un["t_window"] > un["erm_epochs"]:
            problems.append("weights.uncertainty: t_start + t_window exceeds erm_epochs")

    bl = cfg["baselines"]
    if not isinstance(bl, list) or not bl or any(b not in METHODS for b in bl):
        problems.append(f"baselines: expected a non-empty list drawn from {METHODS}")
    sel = cfg["selection"]
    if not isinstance(sel, list) or not sel or any(s not in CRITERIA for s in sel):
        problems.append(f"selection: expected a non-empty list drawn from {CRITERIA}")
    seeds = cfg["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(
            isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
        problems.append("seeds: expected a non-empty list of non-negative integers")
    if not isinstance(cfg["output_dir"], str) or not cfg["output_dir"]:
        problems.append("output_dir: expected a non-empty string")

    th = cfg["theory"]
    _num(problems, "theory.theta_norm", th["theta_norm"], lo=0)
    _num(problems, "theory.n_mc", th["n_mc"], lo=1000, integer=True)
    _num(problems, "theory.rho_dirs", th["rho_dirs"], lo=1, integer=True)
    _num(problems, "theory.glm_epochs", th["glm_epochs"], lo=1, integer=True)
    lad = th["ladder"]
    if not isinstance(lad, list) or not all(
            isinstance(p, list) and len(p) == 2 and all(isinstance(v, (int, float)) and v > 0 for v in p)
            for p in lad):
        problems.append("theory.ladder: expected a list of [alpha, beta] pairs with positive entries")
    rd = th["rank_demo"]
    if not isinstance(rd, dict) or set(rd) - {"d", "rank", "n_mc"}:
        problems.append("theory.rank_demo: expected keys d, rank, n_mc")
    elif not (isinstance(rd.get("d"), int) and isinstance(rd.get("rank"), int) and 1 <= rd["rank"] <= rd["d"]):
        problems.append("theory.rank_demo: need integers 1 <= rank <= d")
    return problems


@dataclass
class ExperimentConfig:
    data: dict
    path: Path | None = None

    def __getitem__(self, key):
        return self.data[key]

    @property
    def base_dir(self) -> Path:
        return self.path.parent if self.path is not None else Path.cwd()

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"


def from_dict(raw: dict, path: Path | None = None) -> ExperimentConfig:
    problems = validate(raw, path.parent if path else None)
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(_merge(DEFAULTS, raw), path)


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}"]) from None
    return from_dict(raw, path)
