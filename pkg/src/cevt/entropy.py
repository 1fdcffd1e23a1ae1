"""Prediction entropy, class-conditional GEV banks and instance weights."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import (
    BankConstructionError,
    DegenerateDataError,
    DomainError,
    InsufficientDataError,
)
from .gev import FitOptions, GevParams, fit_gev, gev_cdf, gev_quantile

logger = logging.getLogger(__name__)

PROB_EPS = 1e-12


@dataclass(frozen=True)
class EntropyRecord:
    sample_id: Hashable
    entropy: float
    predicted_class: int


@dataclass
class ClassGevBank:
    """Per-class GEV fits and the entropy thresholds at level ``delta``."""

    per_class: list[GevParams | None]
    thresholds: np.ndarray
    delta: float
    fallback_used: list[bool]
    h_max: float
    group_sizes: list[int] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return len(self.per_class)

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "h_max": self.h_max,
            "classes": [
                {
                    "class": i,
                    "mu": None if p is None else p.mu,
                    "sigma": None if p is None else p.sigma,
                    "xi": None if p is None else p.xi,
                    "threshold": float(self.thresholds[i]),
                    "fallback": bool(self.fallback_used[i]),
                    "n": int(self.group_sizes[i]) if self.group_sizes else None,
                }
                for i, p in enumerate(self.per_class)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassGevBank":
        rows = sorted(d["classes"], key=lambda r: r["class"])
        per_class = [
            None if r["mu"] is None else GevParams(r["mu"], r["sigma"], r["xi"]) for r in rows
        ]
        sizes = [r.get("n") for r in rows]
        return cls(
            per_class=per_class,
            thresholds=np.array([r["threshold"] for r in rows], dtype=float),
            delta=float(d["delta"]),
            fallback_used=[bool(r["fallback"]) for r in rows],
            h_max=float(d["h_max"]),
            group_sizes=[] if any(s is None for s in sizes) else [int(s) for s in sizes],
        )


def prediction_entropy(probs) -> float | np.ndarray:
    """Shannon entropy in nats of a probability vector (or of each row).

    Probabilities are clamped at ``PROB_EPS`` inside the log only.
    """
    p = np.asarray(probs, dtype=float)
    if p.ndim == 0 or p.shape[-1] == 0:
        raise DomainError("entropy of an empty probability vector is undefined")
    h = -np.sum(p * np.log(np.maximum(p, PROB_EPS)), axis=-1)
    return float(h) if p.ndim == 1 else h


def max_entropy(n_classes: int) -> float:
    """Entropy of the uniform distribution over ``n_classes``: ln C."""
    if n_classes < 1:
        raise DomainError(f"class count must be >= 1, got {n_classes}")
    return math.log(n_classes)


def partition_entropy_groups(records: Iterable[tuple[Hashable, Sequence[float]]],
                             n_classes: int | None = None) -> list[list[EntropyRecord]]:
    """Group samples by predicted class (lowest index wins ties).

    ``n_classes`` is only needed when ``records`` is empty.
    """
    records = list(records)
    if not records:
        if n_classes is None:
            raise DomainError("n_classes is required for an empty input")
        return [[] for _ in range(n_classes)]

    ids = [r[0] for r in records]
    lengths = {len(r[1]) for r in records}
    if len(lengths) != 1:
        raise DomainError(f"inconsistent probability vector lengths: {sorted(lengths)}")
    C = lengths.pop()
    if n_classes is not None and n_classes != C:
        raise DomainError(f"expected {n_classes} classes, got vectors of length {C}")

    probs = np.asarray([r[1] for r in records], dtype=float)
    # np.argmax returns the first maximum
    pred = np.argmax(probs, axis=1)
    ent = prediction_entropy(probs)
    groups: list[list[EntropyRecord]] = [[] for _ in range(C)]
    for sid, h, c in zip(ids, ent, pred):
        groups[int(c)].append(EntropyRecord(sid, float(h), int(c)))
    return groups


def _entropies(group) -> np.ndarray:
    return np.asarray(
        [r.entropy if isinstance(r, EntropyRecord) else r for r in group], dtype=float
    )


def build_gev_bank(groups: Sequence[Sequence[EntropyRecord | float]], delta: float,
                   opts: FitOptions | None = None, workers: int = 1) -> ClassGevBank:
    """Fit one GEV per entropy group and derive thresholds at level ``delta``.

    Classes whose group is too small, or whose entropies are all equal,
    get the GEV fitted on all entropies pooled (``fallback_used``).
    """
    opts = opts or FitOptions()
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    C = len(groups)
    if C < 1:
        raise DomainError("need at least one class group")
    data = [_entropies(g) for g in groups]

    def fit_one(x):
        if x.size < opts.min_samples:
            return None
        try:
            return fit_gev(x, opts)
        except DegenerateDataError:
            return None

    if workers > 1 and C > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(fit_one, data))  # map preserves class order
    else:
        fits = [fit_one(x) for x in data]

    fallback = [f is None for f in fits]
    if any(fallback):
        pooled = np.concatenate(data) if data else np.empty(0)
        try:
            pooled_fit = fit_gev(pooled, opts)
        except (InsufficientDataError, DegenerateDataError) as exc:
            raise BankConstructionError(
                f"no class group has {opts.min_samples} usable samples and the pooled "
                f"set ({pooled.size} samples) cannot be fitted: {exc}"
            ) from exc
        fits = [pooled_fit if f is None else f for f in fits]
        logger.debug("pooled fallback GEV used for classes %s",
                     [i for i, fb in enumerate(fallback) if fb])

    thresholds = np.array([gev_quantile(delta, p) for p in fits], dtype=float)
    return ClassGevBank(
        per_class=list(fits),
        thresholds=thresholds,
        delta=float(delta),
        fallback_used=fallback,
        h_max=max_entropy(C),
        group_sizes=[int(x.size) for x in data],
    )


def conditional_weight(h: float, e_i: float, h_max: float) -> float:
    """Instance weight of a sample with entropy ``h`` in a class with threshold ``e_i``.

    1 well below the threshold, 0 well above, linear over the mixture
    interval of half-width ``min(e_i, h_max - e_i) / 2`` centred at ``e_i``.
    """
    if not 0 < e_i < h_max:
        raise DomainError(f"threshold {e_i} must lie strictly inside (0, {h_max})")
    width = min(e_i, h_max - e_i)
    # explicit edge tests so the clamped regions are exact despite rounding
    if h <= e_i - width / 2:
        return 1.0
    if h >= e_i + width / 2:
        return 0.0
    return min(1.0, max(0.0, 0.5 + (e_i - h) / width))


def conditional_weights(h: np.ndarray, e: np.ndarray, h_max: float) -> np.ndarray:
    """Vectorised :func:`conditional_weight` over aligned arrays."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(e, dtype=float)
    if np.any(~(e > 0) | ~(e < h_max)):
        raise DomainError(f"thresholds must lie strictly inside (0, {h_max})")
    width = np.minimum(e, h_max - e)
    w = np.clip(0.5 + (e - h) / width, 0.0, 1.0)
    w[h <= e - width / 2] = 1.0
    w[h >= e + width / 2] = 0.0
    return w


def usable_thresholds(bank: ClassGevBank) -> np.ndarray:
    """Thresholds pulled into the open interval (0, h_max).

    A fitted quantile can land at or beyond either end of the entropy range;
    clamping keeps the weight function defined with the same limit behaviour
    (a threshold at 0 rejects every sample, one at h_max accepts all).
    """
    tiny = 1e-9 * max(bank.h_max, 1.0)
    return np.clip(bank.thresholds, tiny, bank.h_max - tiny)


def batch_weights(records: Sequence[EntropyRecord], bank: ClassGevBank) -> list[tuple[Hashable, float]]:
    """Weight every record with the threshold of its predicted class."""
    if bank.h_max <= 0:
        raise DomainError("weights need at least two classes")
    e = usable_thresholds(bank)
    out = []
    for r in records:
        if not 0 <= r.predicted_class < bank.n_classes:
            raise DomainError(
                f"predicted class {r.predicted_class} outside [0, {bank.n_classes})"
            )
        out.append((r.sample_id, conditional_weight(r.entropy, float(e[r.predicted_class]), bank.h_max)))
    return out


def weights_for(entropies: np.ndarray, predicted: np.ndarray, bank: ClassGevBank) -> np.ndarray:
    """Array form of :func:`batch_weights` used inside the training loop."""
    predicted = np.asarray(predicted)
    if predicted.size and (predicted.min() < 0 or predicted.max() >= bank.n_classes):
        raise DomainError(f"predicted class outside [0, {bank.n_classes})")
    e = usable_thresholds(bank)[predicted]
    return conditional_weights(entropies, e, bank.h_max)


def bank_cdf_at_thresholds(bank: ClassGevBank) -> np.ndarray:
    return np.array([gev_cdf(bank.thresholds[i], p) for i, p in enumerate(bank.per_class)])
