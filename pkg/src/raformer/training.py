"""Training loop, evaluation, N-sweeps, ablation runs, metrics export.

Everything a run emits is a pure function of (config, seed): the metrics
stream (metrics.jsonl) carries only deterministic fields and is
byte-reproducible; wall-clock timings go to the separate summary.json.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .batched import BatchedForward
from .checkpoint import apply_checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, save_config, validate_or_raise
from .model import RaFormer
from .optim import Adam
from .synthetic import (
    SyntheticDataset,
    generate_dataset,
    random_recall_baseline,
    rationale_recall,
    read_dataset,
)
from .tensor import Tape, cross_entropy

_MODEL_STREAM = 1_000_003
_SHUFFLE_STREAM = 1_000_033

ABLATION_VARIANTS = ("none", "wo_wca", "wo_la", "wo_wca_la", "wo_as", "hard_topn", "cls")


@dataclass
class Metrics:
    epoch: int
    train_loss: float
    eval_accuracy: float
    mean_critical_frames: float
    rationale_recall: float
    wall_clock_s: float

    def record(self) -> dict:
        """Deterministic fields only; timing is reported separately."""
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "eval_accuracy": self.eval_accuracy,
            "mean_critical_frames": self.mean_critical_frames,
            "rationale_recall": self.rationale_recall,
        }


@dataclass
class EvalStats:
    accuracy: float
    mean_critical_frames: float
    rationale_recall: float
    critical_counts: list[int]


def worker_count() -> int:
    raw = os.environ.get("RAFORMER_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"RAFORMER_THREADS must be an integer, got {raw!r}")


def build_model(cfg: RunConfig) -> RaFormer:
    return RaFormer(cfg.model_config(), np.random.default_rng([cfg.seed, _MODEL_STREAM]))


def load_splits(cfg: RunConfig) -> tuple[SyntheticDataset, SyntheticDataset]:
    """Either split a dataset file 80/20-style or generate both splits."""
    if cfg.dataset_path:
        data = read_dataset(cfg.dataset_path)
        needed = cfg.train_count + cfg.eval_count
        if len(data.samples) < needed:
            raise ConfigError(
                f"dataset {cfg.dataset_path} has {len(data.samples)} samples, "
                f"need {needed}"
            )
        train = SyntheticDataset(data.config, data.patterns, data.samples[: cfg.train_count])
        evalset = SyntheticDataset(
            data.config, data.patterns,
            data.samples[cfg.train_count : cfg.train_count + cfg.eval_count],
        )
        return train, evalset
    train = generate_dataset(cfg.data, cfg.train_count, start_index=0)
    evalset = generate_dataset(cfg.data, cfg.eval_count, start_index=cfg.train_count)
    return train, evalset


def evaluate_model(
    model: RaFormer,
    dataset: SyntheticDataset,
    batch_size: int = 16,
    forward: BatchedForward | None = None,
) -> EvalStats:
    forward = forward or BatchedForward(model)
    samples = dataset.samples
    correct = 0
    counts: list[int] = []
    recalls: list[float] = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        result = forward(chunk)
        preds = result.logits.data.argmax(axis=1)
        for b, sample in enumerate(chunk):
            correct += int(preds[b] == sample.label)
            frames = result.selections[b].frame_indices
            counts.append(len(frames))
            recalls.append(rationale_recall(frames, sample.planted_frames))
    n = len(samples)
    return EvalStats(
        accuracy=correct / n,
        mean_critical_frames=float(np.mean(counts)),
        rationale_recall=float(np.mean(recalls)),
        critical_counts=counts,
    )


def train(cfg: RunConfig, quiet: bool = True) -> tuple[RaFormer, list[Metrics]]:
    """Minimize cross-entropy on the train split; checkpoint best eval accuracy."""
    validate_or_raise(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.ini")

    train_data, eval_data = load_splits(cfg)
    model = build_model(cfg)
    forward = BatchedForward(model)
    optimizer = Adam(model.named_parameters(), lr=cfg.lr)

    history: list[Metrics] = []
    best_accuracy = -1.0
    started = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, _SHUFFLE_STREAM, epoch]).permutation(
            len(train_data.samples)
        )
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_data.samples[i] for i in order[start : start + cfg.batch_size]]
            labels = [s.label for s in batch]
            with Tape() as tape:
                loss = cross_entropy(forward(batch).logits, labels)
            tape.backward(loss)
            optimizer.step()
            optimizer.zero_grad()
            total += float(loss.data) * len(batch)
        stats = evaluate_model(model, eval_data, cfg.batch_size, forward)
        metrics = Metrics(
            epoch=epoch,
            train_loss=total / len(order),
            eval_accuracy=stats.accuracy,
            mean_critical_frames=stats.mean_critical_frames,
            rationale_recall=stats.rationale_recall,
            wall_clock_s=time.perf_counter() - started,
        )
        history.append(metrics)
        if not quiet:
            print(
                f"epoch {epoch}: loss {metrics.train_loss:.4f} "
                f"acc {metrics.eval_accuracy:.3f} |fc| {metrics.mean_critical_frames:.2f} "
                f"recall {metrics.rationale_recall:.3f}"
            )
        if stats.accuracy > best_accuracy:
            best_accuracy = stats.accuracy
            save_checkpoint(model.named_parameters(), out / "best.ckpt")

    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for m in history:
            fh.write(json.dumps(m.record(), sort_keys=True) + "\n")
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "best_eval_accuracy": best_accuracy,
                "epochs": cfg.epochs,
                "wall_clock_s": history[-1].wall_clock_s if history else 0.0,
            },
            fh,
            indent=2,
        )
    return model, history


def evaluate_checkpoint(cfg: RunConfig, checkpoint_path) -> EvalStats:
    validate_or_raise(cfg)
    model = build_model(cfg)
    apply_checkpoint(model.named_parameters(), load_checkpoint(checkpoint_path))
    _, eval_data = load_splits(cfg)
    return evaluate_model(model, eval_data, cfg.batch_size)


def sweep_n(
    cfg: RunConfig,
    n_values: list[int],
    checkpoint_path=None,
    csv_path=None,
) -> list[dict]:
    """Accuracy and critical-frame statistics as the sample count varies.

    With ``checkpoint_path`` the sweep re-evaluates a trained model at each
    N; otherwise each N retrains from scratch (same seed). Workers are
    capped by RAFORMER_THREADS.
    """
    for n in n_values:
        if n < 1:
            raise ConfigError(f"sweep N values must be >= 1, got {n}")

    def one(n: int) -> dict:
        sub = replace(cfg, n_interactions=n, out_dir=str(Path(cfg.out_dir) / f"n{n}"))
        if checkpoint_path is not None:
            stats = evaluate_checkpoint(sub, checkpoint_path)
            row = (stats.accuracy, stats.mean_critical_frames, stats.rationale_recall)
        else:
            _, history = train(sub)
            best = max(history, key=lambda m: m.eval_accuracy)
            row = (best.eval_accuracy, best.mean_critical_frames, best.rationale_recall)
        return {
            "n": n,
            "accuracy": row[0],
            "mean_critical_frames": row[1],
            "rationale_recall": row[2],
        }

    workers = worker_count()
    if workers > 1 and len(n_values) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, n_values))
    else:
        rows = [one(n) for n in n_values]

    if csv_path is not None:
        path = Path(csv_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["n", "accuracy", "mean_critical_frames", "rationale_recall"]
            )
            writer.writeheader()
            writer.writerows(rows)
    return rows


def variant_config(cfg: RunConfig, variant: str) -> RunConfig:
    """Swap one module behind its interface; everything else stays fixed."""
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant {variant!r}; choose from {ABLATION_VARIANTS}")
    out_dir = str(Path(cfg.out_dir) / variant)
    if variant == "none":
        return replace(cfg, out_dir=out_dir)
    if variant == "wo_wca":
        return replace(cfg, use_window_attention=False, out_dir=out_dir)
    if variant == "wo_la":
        return replace(cfg, use_leap=False, out_dir=out_dir)
    if variant == "wo_wca_la":
        return replace(cfg, use_window_attention=False, use_leap=False, out_dir=out_dir)
    if variant == "wo_as":
        return replace(cfg, sampler="none", out_dir=out_dir)
    if variant == "hard_topn":
        return replace(cfg, sampler="hard_topn", out_dir=out_dir)
    return replace(cfg, sampler="cls", out_dir=out_dir)


def ablate(cfg: RunConfig, variant: str, baseline_best: float | None = None) -> dict:
    """Train a variant and report it against the full model (same seed)."""
    variant_cfg = variant_config(cfg, variant)
    _, history = train(variant_cfg)
    variant_best = max(m.eval_accuracy for m in history)
    if baseline_best is None:
        if variant == "none":
            baseline_best = variant_best
        else:
            _, base_history = train(variant_config(cfg, "none"))
            baseline_best = max(m.eval_accuracy for m in base_history)
    report = {
        "variant": variant,
        "baseline_accuracy": baseline_best,
        "variant_accuracy": variant_best,
        "delta": variant_best - baseline_best,
        "mean_critical_frames": max(history, key=lambda m: m.eval_accuracy).mean_critical_frames,
    }
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"ablate_{variant}.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return report


def selection_stats(cfg: RunConfig, checkpoint_path, draws: int = 10000) -> dict:
    """Critical-frame statistics of a trained model vs a random baseline."""
    stats = evaluate_checkpoint(cfg, checkpoint_path)
    histogram: dict[int, int] = {}
    for count in stats.critical_counts:
        histogram[count] = histogram.get(count, 0) + 1
    baseline = random_recall_baseline(
        cfg.data.t_frames,
        cfg.data.k_planted,
        stats.critical_counts,
        np.random.default_rng([cfg.seed, 77]),
        draws=draws,
    )
    return {
        "accuracy": stats.accuracy,
        "mean_critical_frames": stats.mean_critical_frames,
        "critical_frame_histogram": {str(k): histogram[k] for k in sorted(histogram)},
        "rationale_recall": stats.rationale_recall,
        "random_baseline_recall": baseline,
        "recall_margin": stats.rationale_recall - baseline,
    }
