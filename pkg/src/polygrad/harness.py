"""Experiment harness: plans, single cells, resumable sweeps, reports.

A sweep runs one cell per (model, fraction, seed) in a fixed canonical
order (declared models x ascending fractions x declared seeds) and
appends one JSON line per cell to results.jsonl as soon as it is
known. Workers may compute cells concurrently, but a single writer
emits rows in canonical order, so the results file for a given plan is
deterministic. Resume reuses the stored lines of completed (status ok)
cells verbatim and recomputes the rest; only wall_time_seconds can
differ between a straight run and a crash+resume run.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import BaselineNet, matched_capacity
from .config import Config, config_hash
from .data import (
    Dataset,
    fit_preprocess,
    load_csv,
    make_blobs,
    make_pima_like,
    save_csv,
    stratified_split,
    subsample_fraction,
)
from .errors import ConfigError, DegenerateDistributionError, NumericOverflowError
from .linalg import Rng, derive_seed
from .metrics import (
    StatTestResult,
    bonferroni,
    input_grad_norms,
    paired_t_one_sided,
    tail_ratio,
    wilcoxon_signed_rank,
)
from .polynet import PolyNetwork
from .train import TrainConfig, evaluate_accuracy, train

__all__ = [
    "ROSTER",
    "RESULT_FIELDS",
    "ModelSpec",
    "SweepPlan",
    "plan_from_config",
    "train_config_from_file",
    "resolve_dataset",
    "build_model",
    "CellOutput",
    "train_cell",
    "run_cell",
    "sweep",
    "read_results",
    "write_results_csv",
    "stats_report",
    "render_stats_text",
]

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

ROSTER = ("cr", "vanilla", "dropout", "weight_decay", "relu_dreg")
RESULT_FIELDS = (
    "model_id",
    "fraction",
    "seed",
    "eval_accuracy",
    "tau",
    "mean_norm",
    "p99_norm",
    "final_task_loss",
    "final_penalty",
    "wall_time_seconds",
)

# Roster semantics: which knob distinguishes each baseline from vanilla.
_ROSTER_KIND = {
    "cr": "poly",
    "vanilla": "relu",
    "dropout": "relu",
    "weight_decay": "relu",
    "relu_dreg": "relu",
}


@dataclass
class ModelSpec:
    model_id: str
    kind: str  # poly | relu
    widths: list[int] | None  # None: derive by capacity matching
    train: TrainConfig


@dataclass
class SweepPlan:
    models: list[str]
    fractions: list[float]
    seeds: list[int]
    comparisons: list[tuple[str, str, str]]  # (model_a, model_b, metric)
    specs: dict[str, ModelSpec]
    data_source: str = "pima_like"  # pima_like | blobs | csv
    data_path: str | None = None
    label_column: str = "outcome"
    data_seed: int = 7
    blob_samples: int = 200
    blob_classes: int = 3
    blob_dim: int = 2
    impute: bool = True
    eval_fraction: float = 0.2
    plan_hash: str = ""

    @property
    def cells(self) -> list[tuple[str, float, int]]:
        return [(m, f, s) for m in self.models for f in self.fractions for s in self.seeds]


_MODEL_KEYS = (
    "widths",
    "epochs",
    "batch_size",
    "learning_rate",
    "lambda_dreg",
    "dropout_rate",
    "weight_decay",
    "optimizer",
    "include_head_in_penalty",
)


def _model_spec(cfg: Config, model_id: str, poly_widths: list[int]) -> ModelSpec:
    if model_id not in ROSTER:
        raise ConfigError(f"unknown roster model {model_id!r}", key=f"model.{model_id}")
    kind = _ROSTER_KIND[model_id]

    def pick(getter, key, default):
        return getter(f"model.{model_id}.{key}", getter(f"train.{key}", default))

    lambda_default = 0.1 if model_id in ("cr", "relu_dreg") else 0.0
    dropout_default = 0.2 if model_id == "dropout" else 0.0
    decay_default = 1e-4 if model_id == "weight_decay" else 0.0
    tc = TrainConfig(
        lambda_dreg=pick(cfg.get_float, "lambda_dreg", lambda_default) if model_id in ("cr", "relu_dreg") else 0.0,
        learning_rate=pick(cfg.get_float, "learning_rate", 1e-3),
        batch_size=pick(cfg.get_int, "batch_size", 32),
        epochs=pick(cfg.get_int, "epochs", 150),
        optimizer=pick(cfg.get_str, "optimizer", "adam"),
        weight_decay=pick(cfg.get_float, "weight_decay", decay_default) if model_id == "weight_decay" else 0.0,
        dropout_rate=pick(cfg.get_float, "dropout_rate", dropout_default) if model_id == "dropout" else 0.0,
        include_head_in_penalty=pick(cfg.get_bool, "include_head_in_penalty", False),
    )
    if kind == "poly":
        widths = cfg.get_int_list(f"model.{model_id}.widths", poly_widths)
    else:
        # Identical-conditions fairness: baseline widths are derived from
        # the polynomial architecture by parameter-count matching.
        widths = cfg.get_int_list(f"model.{model_id}.widths", []) or None
    return ModelSpec(model_id, kind, widths, tc)


def plan_from_config(cfg: Config) -> SweepPlan:
    models = cfg.get_list("plan.models", list(ROSTER))
    fractions = sorted(cfg.get_float_list("plan.fractions", [0.05, 0.1, 0.25, 0.5, 1.0]))
    seeds = cfg.get_int_list("plan.seeds", [0, 1, 2, 3, 4, 5])
    if not models or not fractions or not seeds:
        raise ConfigError("plan needs nonempty models, fractions, and seeds", key="plan.models")
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ConfigError(f"plan fraction {f} outside (0, 1]", key="plan.fractions")

    raw_cmp = cfg.get_list(
        "plan.comparisons",
        [f"cr:{m}:{metric}" for m in models if m != "cr" for metric in ("tau", "accuracy")]
        if "cr" in models
        else [],
    )
    comparisons = []
    for item in raw_cmp:
        parts = item.split(":")
        if len(parts) != 3:
            raise ConfigError(
                f"comparison {item!r} must be model_a:model_b:metric", key="plan.comparisons"
            )
        a, b, metric = (p.strip() for p in parts)
        if a not in models or b not in models:
            raise ConfigError(
                f"comparison {item!r} references a model outside the plan", key="plan.comparisons"
            )
        if metric not in ("tau", "accuracy"):
            raise ConfigError(f"comparison metric {metric!r} unknown", key="plan.comparisons")
        comparisons.append((a, b, metric))

    poly_widths = cfg.get_int_list("train.widths", [16, 16])
    specs = {m: _model_spec(cfg, m, poly_widths) for m in models}

    plan = SweepPlan(
        models=models,
        fractions=fractions,
        seeds=seeds,
        comparisons=comparisons,
        specs=specs,
        data_source=cfg.get_str("data.source", "pima_like"),
        data_path=cfg.get_str("data.path"),
        label_column=cfg.get_str("data.label_column", "outcome"),
        data_seed=cfg.get_int("data.seed", 7),
        blob_samples=cfg.get_int("data.n_samples", 200),
        blob_classes=cfg.get_int("data.classes", 3),
        blob_dim=cfg.get_int("data.dim", 2),
        impute=cfg.get_bool("data.impute", True),
        eval_fraction=cfg.get_float("data.eval_fraction", 0.2),
        plan_hash=config_hash(cfg),
    )
    if plan.data_source not in ("pima_like", "blobs", "csv"):
        raise ConfigError(f"unknown data.source {plan.data_source!r}", key="data.source")
    if plan.data_source == "csv" and not plan.data_path:
        raise ConfigError("data.source = csv requires data.path", key="data.path")
    _validate_keys(cfg)
    return plan


def _validate_keys(cfg: Config) -> None:
    """Reject any key outside the documented vocabulary, naming it."""
    allowed = {
        "format_version",
        "run.seed",
        "model.id",
        "data.source",
        "data.path",
        "data.label_column",
        "data.seed",
        "data.n_samples",
        "data.classes",
        "data.dim",
        "data.impute",
        "data.eval_fraction",
        "data.fraction",
        "plan.models",
        "plan.fractions",
        "plan.seeds",
        "plan.comparisons",
    }
    allowed.update(f"train.{k}" for k in _MODEL_KEYS)
    allowed.update(f"model.{m}.{k}" for m in ROSTER for k in _MODEL_KEYS)
    for key in sorted(cfg.values):
        if key not in allowed:
            raise ConfigError(f"{cfg.source}: unknown key {key!r}", key=key)


def train_config_from_file(cfg: Config) -> tuple[SweepPlan, str, float, int]:
    """Single-run view of a config: a one-cell plan plus the cell key.

    A full sweep plan file works here too: its fraction list is kept, so
    the subsample rounding context (and therefore the exact row) matches
    the sweep that declared it.
    """
    model_id = cfg.get_str("model.id", "cr")
    fraction = cfg.get_float("data.fraction", 1.0)
    seed = cfg.get_int("run.seed", 0)
    base = dict(cfg.values)
    base.setdefault("plan.models", model_id)
    base.setdefault("plan.fractions", format(fraction, "g"))
    base.setdefault("plan.seeds", str(seed))
    base.setdefault("plan.comparisons", "")
    sub = Config(base, cfg.source)
    plan = plan_from_config(sub)
    if model_id not in plan.specs:
        raise ConfigError(
            f"model.id {model_id!r} is not among the plan models {plan.models}", key="model.id"
        )
    return plan, model_id, fraction, seed


def resolve_dataset(plan: SweepPlan, out_dir: str | None = None) -> Dataset:
    """Materialize the plan's dataset, always through the CSV reader.

    Synthetic sources are written to <out_dir>/dataset.csv once and
    loaded back, so every run exercises the same ingestion path as a
    user-supplied file.
    """
    if plan.data_source == "csv":
        return load_csv(plan.data_path, plan.label_column)
    if plan.data_source == "pima_like":
        ds = make_pima_like(seed=plan.data_seed)
    else:
        ds = make_blobs(
            n_samples=plan.blob_samples,
            n_classes=plan.blob_classes,
            dim=plan.blob_dim,
            seed=plan.data_seed,
        )
    if out_dir is None:
        return ds
    path = os.path.join(out_dir, "dataset.csv")
    if not os.path.exists(path):
        save_csv(path, ds, label_column=plan.label_column)
    return load_csv(path, plan.label_column)


def build_model(spec: ModelSpec, input_dim: int, num_classes: int, init_seed: int, poly_widths: list[int]):
    rng = Rng(init_seed).spawn("init", spec.model_id)
    if spec.kind == "poly":
        return PolyNetwork.build(rng, input_dim, spec.widths, num_classes)
    widths = spec.widths
    if widths is None:
        match = matched_capacity(input_dim, poly_widths, num_classes)
        widths = match.widths
        log.info(
            "matched capacity for %s: widths %s (%d params vs %d poly, gap %.2f%%)",
            spec.model_id,
            widths,
            match.baseline_params,
            match.poly_params,
            100.0 * match.relative_gap,
        )
    return BaselineNet.build(rng, input_dim, widths, num_classes, dropout_rate=spec.train.dropout_rate)


def _cell_tag(model_id: str, fraction: float, seed: int) -> str:
    return f"{model_id}/{fraction!r}/{seed}"


@dataclass
class CellOutput:
    net: object
    preprocess: object
    train_result: object
    tail: object
    eval_accuracy: float
    active_idx: np.ndarray
    eval_idx: np.ndarray


def train_cell(ds: Dataset, plan: SweepPlan, model_id: str, fraction: float, seed: int) -> CellOutput:
    """Full pipeline for one (model, fraction, seed) cell.

    Pure function of its arguments: the split, subsample, preprocessing
    fit, initialization, and training stream are all derived from the
    cell coordinates, so any worker (or a later resume) reproduces the
    identical numbers.
    """
    spec = plan.specs[model_id]
    train_idx, eval_idx = stratified_split(ds.labels, plan.eval_fraction, seed)
    rounding = "ceil" if fraction == min(plan.fractions) else "round"
    active = subsample_fraction(train_idx, ds.labels, fraction, seed, rounding=rounding)
    stats = fit_preprocess(ds.features, ds.feature_names, active, impute=plan.impute)
    X = stats.transform(ds.features)

    poly_widths = (plan.specs.get("cr") or spec).widths or [16, 16]
    init_seed = derive_seed("init", model_id, f"{fraction!r}", str(seed))
    net = build_model(spec, ds.d, ds.class_count, init_seed, poly_widths)
    cfg = replace(spec.train, seed=derive_seed("train", model_id, f"{fraction!r}", str(seed)))

    result = train(net, X[active], ds.labels[active], X[eval_idx], ds.labels[eval_idx], cfg)
    norms = input_grad_norms(net, X[eval_idx], ds.labels[eval_idx])
    report = tail_ratio(norms, model_id=model_id, fraction=fraction, seed=seed)
    acc = evaluate_accuracy(net, X[eval_idx], ds.labels[eval_idx])
    return CellOutput(net, stats, result, report, acc, active, eval_idx)


def run_cell(ds: Dataset, plan: SweepPlan, model_id: str, fraction: float, seed: int) -> dict:
    """train_cell wrapped into a ResultRow dict; failures become rows too."""
    t0 = time.perf_counter()
    row = {
        "format_version": FORMAT_VERSION,
        "status": "ok",
        "model_id": model_id,
        "fraction": fraction,
        "seed": seed,
    }
    try:
        out = train_cell(ds, plan, model_id, fraction, seed)
        final = out.train_result.log.final
        row.update(
            eval_accuracy=out.eval_accuracy,
            tau=out.tail.tau,
            mean_norm=out.tail.mean,
            p99_norm=out.tail.p99,
            final_task_loss=final.task_loss,
            final_penalty=final.penalty,
            wall_time_seconds=time.perf_counter() - t0,
        )
    except (NumericOverflowError, DegenerateDistributionError, ValueError) as err:
        log.warning("cell %s failed: %s", _cell_tag(model_id, fraction, seed), err)
        row.update(
            status="failed",
            error=f"{type(err).__name__}: {err}",
            wall_time_seconds=time.perf_counter() - t0,
        )
    return row


def _cell_worker(args) -> dict:
    return run_cell(*args)


def read_results(path) -> list[dict]:
    """Parse a results file, tolerating a torn final line after a crash."""
    rows = []
    if not os.path.exists(path):
        return rows
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError:
                log.warning("%s: skipping unparseable line (torn write?)", path)
    return rows


def sweep(
    plan: SweepPlan,
    ds: Dataset,
    out_dir: str,
    workers: int = 1,
    resume: bool = False,
) -> list[dict]:
    """Run all plan cells, emitting results.jsonl, results.csv, stats report."""
    os.makedirs(out_dir, exist_ok=True)
    results_path = os.path.join(out_dir, "results.jsonl")

    done: dict[tuple, str] = {}
    if resume:
        for row in read_results(results_path):
            if row.get("status") == "ok":
                key = (row["model_id"], row["fraction"], row["seed"])
                done[key] = json.dumps(row, sort_keys=True)
        if done:
            log.info("resume: reusing %d completed cells", len(done))

    cells = plan.cells
    pending = [c for c in cells if c not in done]
    computed: dict[tuple, dict] = {}
    if pending and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {c: pool.submit(_cell_worker, (ds, plan, *c)) for c in pending}
            for c in pending:
                computed[c] = futures[c].result()
    else:
        for c in pending:
            computed[c] = run_cell(ds, plan, *c)

    rows = []
    with open(results_path, "w", encoding="utf-8") as fh:
        for c in cells:
            line = done.get(c) or json.dumps(computed[c], sort_keys=True)
            fh.write(line + "\n")
            fh.flush()
            rows.append(json.loads(line))

    write_results_csv(os.path.join(out_dir, "results.csv"), rows)
    report = stats_report(rows, plan.comparisons)
    with open(os.path.join(out_dir, "stats_report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(os.path.join(out_dir, "stats_report.txt"), "w", encoding="utf-8") as fh:
        fh.write(render_stats_text(report))
    return rows


def write_results_csv(path, rows: list[dict]) -> None:
    """Plot-ready projection of the ok rows, in result-field order."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(RESULT_FIELDS) + "\n")
        for row in rows:
            if row.get("status") != "ok":
                continue
            fh.write(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k]) for k in RESULT_FIELDS) + "\n")


# -- statistics over a results table ---------------------------------------


def _paired_values(by_cell: dict, a: str, b: str, fraction: float, seeds: list, metric: str):
    key = "tau" if metric == "tau" else "eval_accuracy"
    a_vals, b_vals, missing = [], [], []
    for s in seeds:
        ra = by_cell.get((a, fraction, s))
        rb = by_cell.get((b, fraction, s))
        if ra is None or rb is None:
            missing.append([a if ra is None else b, fraction, s])
            continue
        a_vals.append(ra[key])
        b_vals.append(rb[key])
    return np.asarray(a_vals), np.asarray(b_vals), missing


def stats_report(rows: list[dict], comparisons: list[tuple[str, str, str]]) -> dict:
    """Per-fraction summaries plus paired tests for each declared comparison.

    Tests are oriented so the alternative is "model_a is better": higher
    accuracy, lower tau; mean_gap > 0 favors model_a in both cases. The
    Bonferroni family is all executed (comparison x fraction) instances,
    applied per test type; the family size is recorded in the report.
    """
    ok = [r for r in rows if r.get("status") == "ok"]
    by_cell = {(r["model_id"], r["fraction"], r["seed"]): r for r in ok}
    models = sorted({r["model_id"] for r in ok})
    fractions = sorted({r["fraction"] for r in ok})
    seeds = sorted({r["seed"] for r in ok})

    summary: dict = {}
    for m in models:
        summary[m] = {}
        for f in fractions:
            cells = [r for r in ok if r["model_id"] == m and r["fraction"] == f]
            if not cells:
                continue
            block = {}
            for key in ("eval_accuracy", "tau", "mean_norm", "p99_norm"):
                vals = np.asarray([r[key] for r in cells])
                block[key] = {
                    "mean": float(vals.mean()),
                    "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                    "n": int(vals.size),
                }
            summary[m][format(f, "g")] = block

    instances = []
    for a, b, metric in comparisons:
        for f in fractions:
            a_vals, b_vals, missing = _paired_values(by_cell, a, b, f, seeds, metric)
            # "a better" direction: accuracy up, tau down.
            x, y = (a_vals, b_vals) if metric == "accuracy" else (b_vals, a_vals)
            entry = {
                "model_a": a,
                "model_b": b,
                "metric": metric,
                "fraction": f,
                "n_pairs": int(len(x)),
                "missing_cells": missing,
            }
            if len(x) >= 2:
                entry["mean_gap"] = float(np.mean(x - y))
                for name, testfn in (("t", paired_t_one_sided), ("wilcoxon", wilcoxon_signed_rank)):
                    try:
                        res = testfn(x, y)
                        entry[name] = {"statistic": res.statistic, "p_value": res.p_value}
                    except ValueError as err:
                        entry[name] = {"error": str(err)}
            else:
                entry["error"] = "insufficient paired rows"
            instances.append(entry)

    # Family-wise correction per test type over the executed instances.
    m_family = max(1, sum(1 for e in instances if "t" in e or "wilcoxon" in e))
    for e in instances:
        for name in ("t", "wilcoxon"):
            if name in e and "p_value" in e[name]:
                adj = bonferroni(
                    [StatTestResult("x", e[name]["statistic"], e[name]["p_value"], e["n_pairs"])],
                    m_family,
                )[0]
                e[name]["p_adjusted"] = adj.p_adjusted
                e[name]["bonferroni_m"] = m_family

    pooled = []
    for a, b, metric in comparisons:
        xs, ys = [], []
        for f in fractions:
            a_vals, b_vals, _ = _paired_values(by_cell, a, b, f, seeds, metric)
            x, y = (a_vals, b_vals) if metric == "accuracy" else (b_vals, a_vals)
            xs.extend(x)
            ys.extend(y)
        entry = {"model_a": a, "model_b": b, "metric": metric, "n_pairs": len(xs)}
        if len(xs) >= 2:
            xs_a, ys_a = np.asarray(xs), np.asarray(ys)
            entry["mean_gap"] = float(np.mean(xs_a - ys_a))
            try:
                res = paired_t_one_sided(xs_a, ys_a)
                entry["t"] = {"statistic": res.statistic, "p_value": res.p_value}
            except ValueError as err:
                entry["t"] = {"error": str(err)}
        pooled.append(entry)

    return {
        "format_version": FORMAT_VERSION,
        "models": models,
        "fractions": fractions,
        "seeds": seeds,
        "summary": summary,
        "comparisons": instances,
        "pooled": pooled,
        "bonferroni_m": m_family,
    }


def render_stats_text(report: dict) -> str:
    lines = ["== per-model summary (mean +/- std over seeds) =="]
    for m in report["models"]:
        for f_key, block in report["summary"].get(m, {}).items():
            acc = block["eval_accuracy"]
            tau = block["tau"]
            lines.append(
                f"{m:>12s}  f={f_key:>5s}  acc {acc['mean']:.4f} +/- {acc['std']:.4f}"
                f"  tau {tau['mean']:.4f} +/- {tau['std']:.4f}  (n={acc['n']})"
            )
    lines.append("")
    lines.append(f"== paired comparisons (alternative: model_a better; m={report['bonferroni_m']}) ==")
    for e in report["comparisons"]:
        head = f"{e['model_a']} vs {e['model_b']} [{e['metric']}] f={e['fraction']:g}"
        if "error" in e:
            lines.append(f"{head}: {e['error']}")
            continue
        parts = [f"gap {e['mean_gap']:+.4f}", f"n={e['n_pairs']}"]
        for name in ("t", "wilcoxon"):
            block = e.get(name, {})
            if "error" in block:
                parts.append(f"{name}: {block['error']}")
            elif block:
                parts.append(f"{name} p={block['p_value']:.4g} adj={block['p_adjusted']:.4g}")
        lines.append(f"{head}: " + ", ".join(parts))
    lines.append("")
    lines.append("== pooled over fractions ==")
    for e in report["pooled"]:
        head = f"{e['model_a']} vs {e['model_b']} [{e['metric']}]"
        if "mean_gap" not in e:
            lines.append(f"{head}: insufficient rows")
            continue
        t = e.get("t", {})
        p_txt = f" t p={t['p_value']:.4g}" if "p_value" in t else ""
        lines.append(f"{head}: gap {e['mean_gap']:+.4f} over {e['n_pairs']} pairs{p_txt}")
    return "\n".join(lines) + "\n"
