"""Losses, the adversarial training loop and periodic GEV-bank refitting."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset
from .entropy import (
    PROB_EPS,
    ClassGevBank,
    build_gev_bank,
    partition_entropy_groups,
    prediction_entropy,
    weights_for,
)
from .errors import BankConstructionError, ConfigError, DomainError
from .gev import FitOptions
from .model import (
    ADV_DIM,
    HIDDEN_DIM,
    Batch,
    ForwardCache,
    LossSpec,
    ModelParams,
    backward,
    forward_batch,
    forward_classifier,
    init_params,
    target_weights,
)

logger = logging.getLogger(__name__)

LR_ALPHA = 10.0
LR_POWER = 0.75
GRL_GAIN = 10.0

# (beta, gamma, delta) per transfer task
PRESET_FIELDS = ("beta", "gamma", "delta", "source_batch")
PRESETS = {
    "ucf_hmdb": (1.0, 0.9, 0.4, 128),
    "hmdb_ucf": (10.0, 0.7, 0.45, 128),
    "ucf_olympic": (0.19, 1.83, 0.6, 32),
    "olympic_ucf": (0.22, 5.0, 0.29, 32),
}


def classification_loss(probs, labels) -> float:
    """Mean cross entropy ``-ln p[label]`` over the batch."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    labels = np.asarray(labels, dtype=int).reshape(-1)
    n, C = probs.shape
    if labels.shape[0] != n:
        raise DomainError(f"{labels.shape[0]} labels for {n} predictions")
    if n == 0:
        raise DomainError("classification loss of an empty batch")
    if labels.min() < 0 or labels.max() >= C:
        raise DomainError(f"labels must lie in [0, {C})")
    picked = probs[np.arange(n), labels]
    return float(-np.mean(np.log(np.maximum(picked, PROB_EPS))))


def entropy_max_loss(target_probs) -> float:
    """Negative mean prediction entropy; minimising it raises target entropy."""
    probs = np.atleast_2d(np.asarray(target_probs, dtype=float))
    if probs.shape[0] == 0:
        raise DomainError("entropy loss of an empty batch")
    return float(-np.mean(prediction_entropy(probs)))


def weighted_adversarial_loss(source_dprobs, target_dprobs, target_weights) -> float:
    """Domain log-likelihood ``mean_s ln d + mean_t w ln(1 - d)``.

    ``d`` is the discriminator's probability of the source domain. Source
    samples carry weight 1; an empty side contributes 0.
    """
    ds = np.asarray(source_dprobs, dtype=float).reshape(-1)
    dt = np.asarray(target_dprobs, dtype=float).reshape(-1)
    w = np.asarray(target_weights, dtype=float).reshape(-1)
    if w.shape != dt.shape:
        raise DomainError(f"{w.size} weights for {dt.size} target predictions")
    src = float(np.mean(np.log(np.maximum(ds, PROB_EPS)))) if ds.size else 0.0
    tgt = float(np.mean(w * np.log(np.maximum(1.0 - dt, PROB_EPS)))) if dt.size else 0.0
    return src + tgt


def compute_losses(cache: ForwardCache, spec: LossSpec) -> tuple[float, float, float]:
    """(L_c, L_e, L_d) for a forward pass; disabled terms are reported as 0."""
    lc = classification_loss(cache.source_probs, cache.batch.source_y)
    le = 0.0
    if spec.use_entropy and cache.target_probs.shape[0]:
        le = entropy_max_loss(cache.target_probs)
    ld = 0.0
    if spec.use_adversarial:
        ld = weighted_adversarial_loss(cache.source_d, cache.target_d, target_weights(cache))
    return lc, le, ld


def learning_rate(lr0: float, progress: float) -> float:
    return lr0 / (1.0 + LR_ALPHA * progress) ** LR_POWER


def grl_coefficient(gamma: float, progress: float, schedule: bool = True) -> float:
    if not schedule:
        return gamma
    return gamma * (2.0 / (1.0 + math.exp(-GRL_GAIN * progress)) - 1.0)


@dataclass
class Ablation:
    disable_le: bool = False
    disable_ld: bool = False
    unweighted_ld: bool = False


@dataclass
class TrainConfig:
    beta: float = 1.0
    gamma: float = 0.9
    delta: float = 0.4
    lr0: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 1e-4
    source_batch: int = 128
    target_batch: int = 0  # 0: source_batch * N_t / N_s
    epochs: int = 30
    refit_every: int = 1
    warmup_epochs: int = 1
    grl_schedule: bool = True
    ablation: Ablation = field(default_factory=Ablation)
    seed: int = 0
    hidden_dim: int = HIDDEN_DIM
    adv_dim: int = ADV_DIM
    workers: int = 1

    def validate(self) -> None:
        if not 0 < self.delta < 1:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if self.beta < 0 or self.gamma < 0:
            raise ConfigError("beta and gamma must be >= 0")
        if not self.lr0 > 0:
            raise ConfigError("lr0 must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.source_batch < 1 or self.target_batch < 0:
            raise ConfigError("batch sizes must be positive (target_batch 0 = auto)")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.warmup_epochs < 1:
            raise ConfigError("warmup_epochs must be >= 1")
        if self.refit_every < 1:
            raise ConfigError("refit_every must be >= 1")
        if self.hidden_dim < 1 or self.adv_dim < 1:
            raise ConfigError("hidden sizes must be positive")

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        return cls(**{**dict(zip(PRESET_FIELDS, PRESETS[name])), **overrides})

    def loss_spec(self, progress: float) -> LossSpec:
        return LossSpec(
            beta=self.beta,
            gamma=self.gamma,
            lam=grl_coefficient(self.gamma, progress, self.grl_schedule),
            use_entropy=not self.ablation.disable_le,
            use_adversarial=not self.ablation.disable_ld,
        )


@dataclass
class EpochRecord:
    epoch: int
    l_c: float
    l_e: float
    l_d: float
    mean_target_weight: float


@dataclass
class TrainState:
    params: ModelParams
    velocity: ModelParams
    epoch: int = 0
    progress: float = 0.0
    bank: ClassGevBank | None = None
    loss_history: list[EpochRecord] = field(default_factory=list)
    last_weights: np.ndarray | None = None


def refit_bank(target: Dataset, params: ModelParams, cfg: TrainConfig) -> ClassGevBank:
    """Fit the class-conditional GEV bank on a full pass over ``target``."""
    if len(target) == 0:
        raise DomainError("refit_bank needs a non-empty target set")
    probs, _ = forward_classifier(target.video_features(), params)
    groups = partition_entropy_groups(zip(target.ids, probs), n_classes=params.n_classes)
    return build_gev_bank(groups, cfg.delta, FitOptions(seed=cfg.seed), workers=cfg.workers)


def _try_refit(target, params, cfg) -> ClassGevBank | None:
    try:
        return refit_bank(target, params, cfg)
    except BankConstructionError as exc:
        logger.warning("GEV bank refit failed, using unit weights: %s", exc)
        return None


def sgd_step(params: ModelParams, velocity: ModelParams, grads: ModelParams,
             lr: float, momentum: float, weight_decay: float) -> None:
    """In-place SGD with momentum and L2 weight decay on every block."""
    for name, theta in params.blocks().items():
        g = getattr(grads, name) + weight_decay * theta
        v = getattr(velocity, name)
        v *= momentum
        v += g
        theta -= lr * v


def train(source: Dataset, target: Dataset, cfg: TrainConfig) -> tuple[TrainState, ClassGevBank | None]:
    """Train the full model and return the final state and GEV bank.

    The first ``warmup_epochs`` use unit target weights. After that the bank
    is refitted every ``refit_every`` epochs and each step weights its
    target samples by their entropy relative to the bank thresholds. The
    returned bank is refitted once more on the final parameters, which is
    the one inference should use.
    """
    cfg.validate()
    C = source.c_known
    if C < 2:
        raise ConfigError(f"need at least 2 known classes, got {C}")
    xs = source.video_features()
    ys = source.labels
    xt = target.video_features()
    ns, nt = xs.shape[0], xt.shape[0]
    if ns == 0 or nt == 0:
        raise ConfigError("source and target must both be non-empty")
    if xs.shape[1] != xt.shape[1]:
        raise ConfigError("source and target feature dimensions differ")

    params = init_params(xs.shape[1], C, cfg.hidden_dim, cfg.adv_dim, seed=cfg.seed)
    state = TrainState(params=params, velocity=params.zeros_like())
    rng = np.random.default_rng([cfg.seed, 1])

    bs_s = min(cfg.source_batch, ns)
    bs_t = cfg.target_batch or max(1, round(bs_s * nt / ns))
    steps_per_epoch = math.ceil(ns / bs_s)
    total_steps = max(1, cfg.epochs * steps_per_epoch)
    use_weights = not (cfg.ablation.disable_ld or cfg.ablation.unweighted_ld)

    step = 0
    for epoch in range(cfg.epochs):
        if use_weights and epoch >= cfg.warmup_epochs and (epoch - cfg.warmup_epochs) % cfg.refit_every == 0:
            state.bank = _try_refit(target, state.params, cfg)

        perm_s = rng.permutation(ns)
        perm_t = rng.permutation(nt)
        sums = np.zeros(4)
        epoch_weights = []
        for k in range(steps_per_epoch):
            progress = step / total_steps
            spec = cfg.loss_spec(progress)
            idx_s = perm_s[k * bs_s:(k + 1) * bs_s]
            idx_t = perm_t[np.arange(k * bs_t, (k + 1) * bs_t) % nt]

            batch = Batch(xs[idx_s], ys[idx_s], xt[idx_t])
            cache = forward_batch(batch, state.params)
            if use_weights and state.bank is not None:
                probs = cache.target_probs
                w = weights_for(prediction_entropy(probs), np.argmax(probs, axis=1), state.bank)
            else:
                w = np.ones(idx_t.size)
            batch.target_w = w
            epoch_weights.append(w)

            lc, le, ld = compute_losses(cache, spec)
            grads = backward(cache, state.params, spec)
            sgd_step(state.params, state.velocity, grads, learning_rate(cfg.lr0, progress),
                     cfg.momentum, cfg.weight_decay)
            sums += (lc, le, ld, w.mean())
            step += 1
            state.progress = step / total_steps

        means = sums / steps_per_epoch
        state.loss_history.append(EpochRecord(epoch, *map(float, means)))
        state.last_weights = np.concatenate(epoch_weights)
        state.epoch = epoch + 1
        logger.info("epoch %d: L_c=%.4f L_e=%.4f L_d=%.4f w=%.3f", epoch, *means)

    state.bank = _try_refit(target, state.params, cfg)
    return state, state.bank


def write_loss_csv(path: str | Path, history: list[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "L_c", "L_e", "L_d", "mean_target_weight"])
        for r in history:
            writer.writerow([r.epoch, repr(r.l_c), repr(r.l_e), repr(r.l_d), repr(r.mean_target_weight)])


def with_ablation(cfg: TrainConfig, **flags) -> TrainConfig:
    return replace(cfg, ablation=replace(cfg.ablation, **flags))
