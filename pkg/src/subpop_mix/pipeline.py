"""End-to-end runs behind the CLI commands: data, weights, training, comparison, theory."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .config import ExperimentConfig
from .data import (LabeledDataset, SplitSpec, gen_four_moons, gen_spurious_gaussian, load_csv,
                   save_csv, stratified_split)
from .evalreport import (Metrics, emit_report, evaluate, kde_uncertainty, mean_std, select_model,
                         write_json, write_kde_csv)
from .mixing import MixPolicy
from .models import GlmModel, load_checkpoint, save_checkpoint
from .theory import (TheoryReport, bound_terms, estimate_rho, gerror_with_se,
                     regularizer_residual, sigma_m, tilde_moments, w_gamma_value,
                     weighted_covariance)
from .training import (TrainConfig, TrainRecord, train_baseline, train_erm_with_trajectory,
                       train_rmix)
from .weighting import (UncertaintyConfig, WeightAssignment, group_aware_weights, load_weights_csv,
                        save_weights_csv, uncertainty_from_trajectory, uniform_weights,
                        weights_from_uncertainty)

log = logging.getLogger(__name__)

METHOD_LABELS = {"erm": "ERM", "iw": "IW", "mixup": "mixup", "igmix": "IGMix",
                 "rmix_group": "RMix (group-aware)", "rmix_uncertainty": "RMix (uncertainty)"}


@dataclass
class Splits:
    train: LabeledDataset
    val: LabeledDataset
    test: LabeledDataset


def _generate(ds_cfg: dict, seed: int, sizes=None, stream=()) -> LabeledDataset:
    params = dict(ds_cfg.get("params", {}))
    gen = ds_cfg["generator"]
    if gen == "four_moons":
        if sizes is not None:
            params["group_sizes"] = sizes
        if "offset" in params:
            params["offset"] = tuple(params["offset"])
        return gen_four_moons(seed=seed, stream=stream, **params)
    if sizes is not None:
        params["n_per_group"] = sizes
    return gen_spurious_gaussian(seed=seed, stream=stream, **params)


def make_splits(cfg: ExperimentConfig, seed: int) -> Splits:
    ds_cfg = cfg["dataset"]
    if ds_cfg.get("csv"):
        full = load_csv(cfg.resolve(ds_cfg["csv"]))
        return Splits(*stratified_split(full, SplitSpec(**cfg["split"], seed=seed)))
    held = ds_cfg.get("heldout")
    if held:
        train = _generate(ds_cfg, seed)
        val = _generate(ds_cfg, seed, held["val"], (rngmod.EVAL_DATA, 1))
        test = _generate(ds_cfg, seed, held["test"], (rngmod.EVAL_DATA, 2))
        return Splits(train, val, test)
    return Splits(*stratified_split(_generate(ds_cfg, seed), SplitSpec(**cfg["split"], seed=seed)))


def train_config(cfg: ExperimentConfig, seed: int, **over) -> TrainConfig:
    t = dict(cfg["train"])
    t["seed"] = seed
    tc = TrainConfig.from_dict(t)
    return replace(tc, **over) if over else tc


def _normalization(cfg) -> str:
    return cfg["weights"]["normalization"]


def group_weights(cfg: ExperimentConfig, train: LabeledDataset) -> WeightAssignment:
    return group_aware_weights(train, float(cfg["weights"]["group_aware"]["C"]), _normalization(cfg))


@dataclass
class UncertaintyStage:
    u: np.ndarray
    weights: WeightAssignment
    erm_record: TrainRecord
    trajectory: object


def uncertainty_stage(cfg: ExperimentConfig, splits: Splits, seed: int) -> UncertaintyStage:
    """ERM run that logs the misclassification trajectory, then w = eta u + c."""
    un = cfg["weights"]["uncertainty"]
    tc = train_config(cfg, seed, epochs=un["erm_epochs"], mix=MixPolicy("none"))
    _, traj, rec = train_erm_with_trajectory(splits.train, tc, cfg["model"], val=splits.val)
    ucfg = UncertaintyConfig(un["t_start"], un["t_window"], un["eta"], un["c"])
    u = uncertainty_from_trajectory(traj, ucfg)
    w = weights_from_uncertainty(u, ucfg.eta, ucfg.c, _normalization(cfg))
    return UncertaintyStage(u, w, rec, traj)


def _selected_metrics(record: TrainRecord, test: LabeledDataset, criteria) -> dict:
    out = {}
    for crit in criteria:
        epoch = select_model(record, crit)
        out[crit] = {"epoch": epoch, "test": evaluate(record.model_at(epoch), test)}
    return out


def _seed_dir(out: Path, seed: int) -> Path:
    return out / f"seed_{seed}"


# gen-data --------------------------------------------------------------------------

def run_gen_data(cfg: ExperimentConfig, out: Path) -> list[Path]:
    written = []
    for seed in cfg["seeds"]:
        sp = make_splits(cfg, seed)
        meta = {}
        for name in ("train", "val", "test"):
            p = _seed_dir(out / "data", seed) / f"{name}.csv"
            save_csv(getattr(sp, name), p)
            written.append(p)
            meta[name] = getattr(sp, name).metadata()
        write_json(meta, _seed_dir(out / "data", seed) / "metadata.json")
        written.append(_seed_dir(out / "data", seed) / "metadata.json")
    return written


# weights -----------------------------------------------------------------------------

def weights_path(cfg: ExperimentConfig, out: Path, seed: int) -> Path:
    if cfg["weights"].get("path"):
        return cfg.resolve(str(cfg["weights"]["path"]).format(seed=seed))
    return _seed_dir(out / "weights", seed) / "weights.csv"


def run_weights(cfg: ExperimentConfig, out: Path) -> list[Path]:
    mode = cfg["weights"]["mode"]
    written = []
    for seed in cfg["seeds"]:
        sp = make_splits(cfg, seed)
        target = weights_path(cfg, out, seed)
        u = None
        if mode == "uniform":
            w = uniform_weights(sp.train.n)
        elif mode == "group_aware":
            w = group_weights(cfg, sp.train)
        else:
            stage = uncertainty_stage(cfg, sp, seed)
            u, w = stage.u, stage.weights
            un = cfg["weights"]["uncertainty"]
            stage.trajectory.save(target.parent / "trajectory.csv", un["t_start"], un["t_window"])
            stage.erm_record.write_jsonl(target.parent / "erm_records.jsonl")
            curve = kde_uncertainty(u, sp.train.group_ids)
            write_kde_csv(curve, target.parent / "kde.csv")
            written.append(target.parent / "kde.csv")
        save_weights_csv(target, w, sp.train.group_ids, u)
        written.append(target)
    return written


def load_train_weights(cfg: ExperimentConfig, out: Path, seed: int, train: LabeledDataset):
    mode = cfg["weights"]["mode"]
    if mode == "uniform":
        return uniform_weights(train.n)
    if mode == "group_aware":
        return group_weights(cfg, train)
    path = weights_path(cfg, out, seed)
    if not path.exists():
        raise FileNotFoundError(f"{path}: uncertainty weights not found; run the 'weights' command first")
    w, _ = load_weights_csv(path)
    if len(w) != train.n:
        raise ValueError(f"{path}: {len(w)} weights for {train.n} training samples")
    return w


# train ---------------------------------------------------------------------------------

def run_train(cfg: ExperimentConfig, out: Path) -> dict:
    summary = {}
    for seed in cfg["seeds"]:
        sp = make_splits(cfg, seed)
        w = load_train_weights(cfg, out, seed, sp.train)
        _, rec = train_rmix(sp.train, w, train_config(cfg, seed), cfg["model"], val=sp.val)
        sd = _seed_dir(out / "train", seed)
        rec.write_jsonl(sd / "records.jsonl")
        save_checkpoint(rec.model, sd / "final.json")
        chosen = _selected_metrics(rec, sp.test, cfg["selection"])
        for crit, info in chosen.items():
            save_checkpoint(rec.model_at(info["epoch"]), sd / f"best_{crit}.json")
        summary[str(seed)] = {c: {"epoch": v["epoch"], "test": v["test"].to_dict()}
                              for c, v in chosen.items()}
        save_csv(sp.test, sd / "test.csv")
    write_json(summary, out / "train_metrics.json")
    return summary


# eval ------------------------------------------------------------------------------------

def run_eval(checkpoint: Path, data: Path, out: Path) -> Metrics:
    model = load_checkpoint(checkpoint)
    ds = load_csv(data)
    m = evaluate(model, ds)
    emit_report(m, out)
    return m


# compare --------------------------------------------------------------------------------

def run_methods(cfg: ExperimentConfig, seed: int, methods=None) -> dict:
    """Train every requested method on one seed; returns method -> (record, extras)."""
    methods = list(methods or cfg["baselines"])
    sp = make_splits(cfg, seed)
    base = train_config(cfg, seed)
    results = {}
    stage = None
    un = cfg["weights"]["uncertainty"]
    if "rmix_uncertainty" in methods or "erm" in methods:
        stage = uncertainty_stage(cfg, sp, seed)
    if "erm" in methods:
        if un["erm_epochs"] == base.epochs:
            results["erm"] = stage.erm_record  # same code path, same seed: identical run
        else:
            results["erm"] = train_baseline(sp.train, "erm", base, cfg["model"], val=sp.val)[1]
    gw = group_weights(cfg, sp.train)
    for kind in ("iw", "mixup", "igmix"):
        if kind in methods:
            results[kind] = train_baseline(sp.train, kind, base, cfg["model"],
                                           weights=gw if kind == "iw" else None, val=sp.val)[1]
    if "rmix_group" in methods:
        results["rmix_group"] = train_rmix(sp.train, gw, base, cfg["model"], val=sp.val)[1]
    if "rmix_uncertainty" in methods:
        results["rmix_uncertainty"] = train_rmix(sp.train, stage.weights, base, cfg["model"],
                                                 val=sp.val)[1]
    return {"splits": sp, "records": results, "stage": stage}


def _fmt(mean: float, std: float) -> str:
    return f"{100 * mean:.1f} ± {100 * std:.1f}"


def run_compare(cfg: ExperimentConfig, out: Path) -> dict:
    methods = [m for m in ("erm", "iw", "mixup", "igmix", "rmix_group", "rmix_uncertainty")
               if m in cfg["baselines"]]
    criteria = list(cfg["selection"])
    per_seed = {m: {c: [] for c in criteria} for m in methods}
    uncertainty = {}
    train_group_acc = {}
    for seed in cfg["seeds"]:
        res = run_methods(cfg, seed, methods)
        sp = res["splits"]
        for m, rec in res["records"].items():
            sd = _seed_dir(out / "runs" / m, seed)
            rec.write_jsonl(sd / "records.jsonl")
            for crit, info in _selected_metrics(rec, sp.test, criteria).items():
                per_seed[m][crit].append({"seed": seed, "epoch": info["epoch"],
                                          **info["test"].to_dict()})
                save_checkpoint(rec.model_at(info["epoch"]), sd / f"best_{crit}.json")
        stage = res["stage"]
        if stage is not None:
            g = sp.train.group_ids
            curve = kde_uncertainty(stage.u, g)
            write_kde_csv(curve, _seed_dir(out / "kde", seed).with_suffix(".csv"))
            save_weights_csv(_seed_dir(out / "weights", seed) / "weights.csv", stage.weights, g,
                             stage.u)
            uncertainty[str(seed)] = {
                "group_mean_u": [float(stage.u[g == k].mean()) for k in range(sp.train.n_groups)],
                "kde_modes": [curve.mode(k) for k in range(sp.train.n_groups)],
                "kde_bandwidth": curve.bandwidth,
            }
            train_group_acc[str(seed)] = stage.erm_record.group_accuracy_matrix().tolist()

    table = {}
    for m in methods:
        table[m] = {}
        for crit in criteria:
            rows = per_seed[m][crit]
            agg = {}
            for key in ("average_accuracy", "worst_accuracy", "gap"):
                mu, sd = mean_std([r[key] for r in rows])
                agg[key] = {"mean": mu, "std": sd}
            table[m][crit] = {"aggregate": agg, "seeds": rows}
    result = {"methods": table, "seeds": list(cfg["seeds"]), "criteria": criteria,
              "uncertainty": uncertainty, "erm_train_group_accuracy": train_group_acc}
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(result, sort_keys=True, indent=1) + "\n")
    _write_tables(table, methods, criteria, out)
    return result


def _write_tables(table, methods, criteria, out: Path) -> None:
    md = ["# Comparison (test accuracy %, mean ± std over seeds)", ""]
    with (out / "comparison.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["selection", "method", "average_mean", "average_std", "worst_mean",
                    "worst_std", "gap_mean", "gap_std"])
        for crit in criteria:
            md += [f"## Model selection by {crit} validation accuracy", "",
                   "| method | average | worst | gap |", "|---|---|---|---|"]
            for m in methods:
                a = table[m][crit]["aggregate"]
                cells = [a[k] for k in ("average_accuracy", "worst_accuracy", "gap")]
                md.append(f"| {METHOD_LABELS[m]} | " + " | ".join(_fmt(c["mean"], c["std"]) for c in cells) + " |")
                w.writerow([crit, m, *(f"{100 * c[s]:.4f}" for c in cells for s in ("mean", "std"))])
            md.append("")
    (out / "comparison.md").write_text("\n".join(md))


# theory ----------------------------------------------------------------------------------

def rank_demo(d: int, rank: int, policy: MixPolicy, n_mc: int, rng: np.random.Generator):
    """Identity covariance on a random rank-r subspace of R^d and its bound terms."""
    basis, _ = np.linalg.qr(rng.normal(size=(d, rank)))
    sigma = basis @ basis.T
    sm = sigma_m(sigma, policy, n_mc, rng)
    return sigma, sm, bound_terms(sigma, sm)


def run_theory(cfg: ExperimentConfig, out: Path, seed: int | None = None) -> TheoryReport:
    th = cfg["theory"]
    seed = cfg["seeds"][0] if seed is None else seed
    sp = make_splits(cfg, seed)
    mode = cfg["weights"]["mode"]
    w = group_weights(cfg, sp.train) if mode == "group_aware" else uniform_weights(sp.train.n)
    shift = (sp.train.features * w.weights[:, None]).sum(axis=0) / w.weights.sum()
    train = sp.train.with_features(sp.train.features - shift)
    # GError needs a fresh sample from the training distribution, not the rebalanced test set
    if cfg["dataset"].get("csv"):
        fresh = sp.test
    else:
        fresh = _generate(cfg["dataset"], seed, None, (rngmod.EVAL_DATA, 3))
    fresh = fresh.with_features(fresh.features - shift)
    mc = rngmod.make_rng(seed, rngmod.MONTE_CARLO)

    direction = mc.normal(size=train.d)
    glm = GlmModel(th["theta_norm"] * direction / np.linalg.norm(direction))
    residuals = []
    for a, b in th["ladder"]:
        pol = MixPolicy("vanilla", alpha=a, beta=b)
        residuals.append((f"tilde Beta({a:g},{b:g})",
                          regularizer_residual(glm, train, w, pol, th["n_mc"], mc)))

    mix = cfg["train"]["mix"]
    policy = MixPolicy.from_dict(mix) if mix["mode"] != "none" else MixPolicy("vanilla")
    sigma_hat = weighted_covariance(train, w)
    sm = sigma_m(sigma_hat, policy, th["rank_demo"]["n_mc"], mc)
    terms = bound_terms(sigma_hat, sm)
    rd = th["rank_demo"]
    vanilla = MixPolicy("vanilla", alpha=policy.alpha, beta=policy.beta)
    _, _, demo = rank_demo(rd["d"], rd["rank"], vanilla, rd["n_mc"], mc)
    q = tilde_moments(policy.alpha, policy.beta)["one_minus_sq"]
    demo_info = {"d": rd["d"], "rank": rd["rank"], "trace_term": demo.trace_term,
                 "rank_term": demo.rank_term, "sqrt_d": demo.sqrt_d,
                 "one_minus_lambda_sq": q, "closed_form_trace_term": math.sqrt(rd["rank"] / q)}
    rho = estimate_rho(train.features, th["rho_dirs"], mc)

    # a GLM fitted with the configured mixing, for GError and the W_gamma functional
    fitted, _ = train_rmix(train, w, train_config(cfg, seed, epochs=th["glm_epochs"]),
                           {"kind": "glm", "intercept": True})
    table = None
    if mode == "group_aware":
        table = np.zeros(sp.train.n_groups)
        table[sp.train.group_ids] = w.weights
    ge = gerror_with_se(fitted, train, fresh, table)
    wg = w_gamma_value(GlmModel(fitted.theta[:-1]), train, w, policy, 20000, mc)

    report = TheoryReport(sigma_hat=sigma_hat, sigma_m=sm, trace_term=terms.trace_term,
                          rank_term=terms.rank_term, sqrt_d=terms.sqrt_d, rho_hat=rho,
                          approx_residuals=residuals, gerror=ge.value, w_gamma=wg,
                          rank_demo=demo_info)
    payload = report.to_dict()
    payload["gerror_se"] = ge.se
    out.mkdir(parents=True, exist_ok=True)
    write_json(payload, out / "theory.json")
    (out / "theory.md").write_text("```\n" + report.table() + "\n```\n")
    return report
