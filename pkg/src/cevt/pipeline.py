"""Experiment glue: train-and-evaluate runs and the files they emit."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .entropy import ClassGevBank, prediction_entropy
from .errors import CheckpointError
from .model import ModelParams, forward_classifier, save_checkpoint, transform
from .openset import MetricsReport, compute_metrics, predict_open_set_batch
from .training import TrainConfig, TrainState, train, write_loss_csv


def evaluate(params: ModelParams, bank: ClassGevBank, target: Dataset,
             delta: float | None = None) -> tuple[MetricsReport, np.ndarray, np.ndarray]:
    """Open-set labels and metrics over a labeled target set.

    Returns (report, predicted labels, class probabilities).
    """
    if params.n_classes != target.c_known:
        raise CheckpointError(
            f"class count mismatch: checkpoint has C={params.n_classes}, dataset has C={target.c_known}"
        )
    if bank.n_classes != params.n_classes:
        raise CheckpointError(
            f"class count mismatch: bank has C={bank.n_classes}, checkpoint has C={params.n_classes}"
        )
    if params.input_dim != target.dim:
        raise CheckpointError(
            f"feature dimension mismatch: checkpoint has D={params.input_dim}, dataset has D={target.dim}"
        )
    probs, _ = forward_classifier(target.video_features(), params)
    labels = predict_open_set_batch(probs, bank, delta)
    report = compute_metrics(labels, target.eval_labels(), target.c_known)
    return report, labels, probs


def report_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def bank_json(bank: ClassGevBank) -> str:
    return json.dumps(bank.to_dict(), indent=2, sort_keys=True) + "\n"


def load_bank(path: str | Path) -> ClassGevBank:
    return ClassGevBank.from_dict(json.loads(Path(path).read_text()))


def write_bank_csv(path: str | Path, bank: ClassGevBank) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "mu", "sigma", "xi", "threshold", "fallback", "n"])
        for row in bank.to_dict()["classes"]:
            w.writerow([row["class"], repr(row["mu"]), repr(row["sigma"]), repr(row["xi"]),
                        repr(row["threshold"]), int(row["fallback"]), row["n"]])


def write_entropy_groups_csv(path: str | Path, target: Dataset, params: ModelParams) -> None:
    """One row per target sample: id, predicted class, entropy, true label."""
    probs, _ = forward_classifier(target.video_features(), params)
    h = prediction_entropy(probs)
    pred = np.argmax(probs, axis=1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "predicted_class", "entropy", "label"])
        for sid, c, e, y in zip(target.ids, pred, h, target.labels):
            w.writerow([sid, int(c), repr(float(e)), int(y)])


def write_entropy_histogram_csv(path: str | Path, entropies: np.ndarray, truth: np.ndarray,
                                n_known: int, bins: int = 30) -> None:
    """Entropy histogram split into known and unknown ground truth."""
    hi = max(float(np.log(n_known)), float(np.max(entropies, initial=0.0)))
    edges = np.linspace(0.0, hi, bins + 1)
    known, _ = np.histogram(entropies[truth < n_known], bins=edges)
    unknown, _ = np.histogram(entropies[truth >= n_known], bins=edges)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "known", "unknown"])
        for lo, hi_, k, u in zip(edges[:-1], edges[1:], known, unknown):
            w.writerow([repr(float(lo)), repr(float(hi_)), int(k), int(u)])


def write_learned_features_csv(path: str | Path, data: Dataset, params: ModelParams) -> None:
    """Transform outputs for external plotting (e.g. t-SNE)."""
    _, h = transform(data.video_features(), params)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "domain", "label"] + [f"f{i}" for i in range(h.shape[1])])
        for sid, dom, y, row in zip(data.ids, data.domains, data.labels, h):
            w.writerow([sid, dom, int(y)] + [repr(float(v)) for v in row])


@dataclass
class ExperimentResult:
    state: TrainState
    bank: ClassGevBank
    report: MetricsReport


def run_experiment(source: Dataset, target: Dataset, cfg: TrainConfig,
                   out_dir: str | Path | None = None, eval_delta: float | None = None) -> ExperimentResult:
    """Train, evaluate on the target set and optionally write all artifacts."""
    state, bank = train(source, target, cfg)
    if bank is None:
        raise RuntimeError("could not fit a GEV bank on the final model")
    report, _, _ = evaluate(state.params, bank, target, eval_delta)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "checkpoint.bin", state.params)
        write_loss_csv(out / "losses.csv", state.loss_history)
        (out / "bank.json").write_text(bank_json(bank))
        write_bank_csv(out / "bank.csv", bank)
        write_entropy_groups_csv(out / "entropy_groups.csv", target, state.params)
        (out / "report.json").write_text(report_json(report))
    return ExperimentResult(state, bank, report)
