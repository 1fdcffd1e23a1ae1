"""Open-set inference with a GEV bank and the ALL/OS/OS*/UNK/HOS metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .entropy import ClassGevBank, prediction_entropy
from .errors import DomainError, MetricUndefinedError
from .gev import gev_cdf


@dataclass(frozen=True)
class OpenSetPrediction:
    sample_id: Hashable
    label: int  # n_classes means "unknown"
    known_probs: np.ndarray = field(repr=False)
    entropy: float
    cdf_value: float


def predict_open_set(probs, bank: ClassGevBank, sample_id: Hashable = None,
                     delta: float | None = None) -> OpenSetPrediction:
    """Label a sample as its argmax class, or as unknown when the GEV CDF of
    its entropy under that class exceeds ``delta`` (default: ``bank.delta``).
    """
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size != bank.n_classes:
        raise DomainError(f"probability vector of length {p.size} for a {bank.n_classes}-class bank")
    delta = bank.delta if delta is None else delta
    c = int(np.argmax(p))
    h = prediction_entropy(p)
    cdf = float(gev_cdf(h, bank.per_class[c]))
    label = bank.n_classes if cdf > delta else c
    return OpenSetPrediction(sample_id, label, p, h, cdf)


def predict_open_set_batch(probs: np.ndarray, bank: ClassGevBank, delta: float | None = None) -> np.ndarray:
    """Vectorised labels for an (N, C) probability matrix."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2 or probs.shape[1] != bank.n_classes:
        raise DomainError(f"probabilities of shape {probs.shape} for a {bank.n_classes}-class bank")
    delta = bank.delta if delta is None else delta
    pred = np.argmax(probs, axis=1)
    h = prediction_entropy(probs) if len(probs) else np.empty(0)
    labels = pred.copy()
    for c in range(bank.n_classes):
        m = pred == c
        if m.any():
            cdf = np.asarray(gev_cdf(h[m], bank.per_class[c]))
            labels[np.flatnonzero(m)[cdf > delta]] = bank.n_classes
    return labels


def harmonic_open_set_score(os_star: float, unk: float) -> float:
    """HOS: harmonic mean of known-class and unknown accuracy (0 if both are 0)."""
    if os_star + unk == 0:
        return 0.0
    return 2.0 * os_star * unk / (os_star + unk)


def open_set_score(os_star: float, unk: float, n_known: int) -> float:
    """OS: mean over the ``n_known`` known classes plus the unknown class."""
    return (n_known * os_star + unk) / (n_known + 1)


@dataclass
class MetricsReport:
    all: float
    os: float
    os_star: float
    unk: float
    hos: float
    per_class: list[float]

    def to_dict(self) -> dict:
        return {
            "all": self.all,
            "os": self.os,
            "os_star": self.os_star,
            "unk": self.unk,
            "hos": self.hos,
            "per_class": list(self.per_class),
        }

    def table(self) -> str:
        head = f"{'ALL':>7} {'OS':>7} {'OS*':>7} {'UNK':>7} {'HOS':>7}"
        row = f"{self.all:7.2f} {self.os:7.2f} {self.os_star:7.2f} {self.unk:7.2f} {self.hos:7.2f}"
        per = " ".join(f"{v:.2f}" for v in self.per_class)
        return f"{head}\n{row}\nper-class: {per}"


def compute_metrics(predicted: Sequence[int], truth: Sequence[int], n_known: int) -> MetricsReport:
    """Open-set metrics in percent. Labels run over [0, n_known], the last being unknown."""
    pred = np.asarray(predicted, dtype=int).reshape(-1)
    true = np.asarray(truth, dtype=int).reshape(-1)
    if pred.shape != true.shape:
        raise DomainError("predicted and true labels differ in length")
    if pred.size == 0:
        raise DomainError("no predictions to evaluate")
    for name, arr in (("predicted", pred), ("true", true)):
        if arr.min() < 0 or arr.max() > n_known:
            raise DomainError(f"{name} labels must lie in [0, {n_known}]")

    per_class = []
    for c in range(n_known + 1):
        m = true == c
        if not m.any():
            what = "unknown class" if c == n_known else f"class {c}"
            raise MetricUndefinedError(f"{what} (label {c}) is absent from the ground truth")
        per_class.append(100.0 * float(np.mean(pred[m] == c)))

    os_star = float(np.mean(per_class[:n_known]))
    unk = per_class[n_known]
    return MetricsReport(
        all=100.0 * float(np.mean(pred == true)),
        os=open_set_score(os_star, unk, n_known),
        os_star=os_star,
        unk=unk,
        hos=harmonic_open_set_score(os_star, unk),
        per_class=per_class,
    )
