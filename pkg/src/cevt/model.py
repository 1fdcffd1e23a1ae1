"""Trainable stack: shared transform, classifier head, domain discriminator.

Everything is plain numpy with hand-derived gradients::

    x --[W_e, b_e, relu]--> h --[W_c, b_c]--> logits --softmax--> probs
                            h --GRL--[W_d1, b_d1, relu]--[w_d2, b_d2]--sigmoid--> P(source)

The gradient reversal layer (GRL) is the identity going forward and scales
the gradient by ``-lambda`` going back.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .entropy import PROB_EPS
from .errors import CheckpointError, DomainError, UsageError

CHECKPOINT_MAGIC = b"CEVT"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")

HIDDEN_DIM = 256
ADV_DIM = 64


@dataclass
class ModelParams:
    """Weights in declaration (and checkpoint) order."""

    W_e: np.ndarray  # (D, d_h)
    b_e: np.ndarray  # (d_h,)
    W_c: np.ndarray  # (d_h, C)
    b_c: np.ndarray  # (C,)
    W_d1: np.ndarray  # (d_h, d_a)
    b_d1: np.ndarray  # (d_a,)
    w_d2: np.ndarray  # (d_a,)
    b_d2: np.ndarray  # (1,)

    @property
    def input_dim(self) -> int:
        return self.W_e.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.W_e.shape[1]

    @property
    def adv_dim(self) -> int:
        return self.W_d1.shape[1]

    @property
    def n_classes(self) -> int:
        return self.W_c.shape[1]

    def blocks(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.blocks().items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams(**{k: np.zeros_like(v) for k, v in self.blocks().items()})

    def validate(self) -> None:
        D, dh, da, C = self.input_dim, self.hidden_dim, self.adv_dim, self.n_classes
        expected = {
            "W_e": (D, dh), "b_e": (dh,), "W_c": (dh, C), "b_c": (C,),
            "W_d1": (dh, da), "b_d1": (da,), "w_d2": (da,), "b_d2": (1,),
        }
        for name, arr in self.blocks().items():
            if arr.shape != expected[name]:
                raise DomainError(f"{name} has shape {arr.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} has non-finite entries")


# Gradients share the parameter layout.
Gradients = ModelParams


def init_params(input_dim: int, n_classes: int, hidden_dim: int = HIDDEN_DIM,
                adv_dim: int = ADV_DIM, seed: int = 0) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)

    def uniform(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return ModelParams(
        W_e=uniform(input_dim, (input_dim, hidden_dim)),
        b_e=np.zeros(hidden_dim),
        W_c=uniform(hidden_dim, (hidden_dim, n_classes)),
        b_c=np.zeros(n_classes),
        W_d1=uniform(hidden_dim, (hidden_dim, adv_dim)),
        b_d1=np.zeros(adv_dim),
        w_d2=uniform(adv_dim, (adv_dim,)),
        b_d2=np.zeros(1),
    )


def aggregate_frames(frames) -> np.ndarray:
    """Average the K frame vectors of a video: (K, D) -> (D,), or (N, K, D) -> (N, D)."""
    f = np.asarray(frames, dtype=float)
    if f.ndim not in (2, 3):
        raise DomainError(f"expected (K, D) or (N, K, D) frames, got shape {f.shape}")
    if f.shape[-2] == 0:
        raise DomainError("cannot aggregate a video with zero frames")
    return f.mean(axis=-2)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(a: np.ndarray) -> np.ndarray:
    # two-branch form avoids overflow in exp
    out = np.empty_like(a, dtype=float)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _as_batch(v, p: ModelParams) -> tuple[np.ndarray, bool]:
    x = np.asarray(v, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != p.input_dim:
        raise DomainError(f"feature shape {np.shape(v)} does not match input dim {p.input_dim}")
    return x, single


def transform(x: np.ndarray, p: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Shared feature transform; returns (pre-activation, hidden)."""
    z = x @ p.W_e + p.b_e
    return z, np.maximum(z, 0.0)


@dataclass
class ClassifierCache:
    x: np.ndarray
    z: np.ndarray
    h: np.ndarray
    logits: np.ndarray


@dataclass
class DiscriminatorCache:
    h: np.ndarray
    a1: np.ndarray
    r: np.ndarray
    out: np.ndarray


def forward_classifier(v, p: ModelParams):
    """Class probabilities for one video feature or a batch of them."""
    x, single = _as_batch(v, p)
    z, h = transform(x, p)
    logits = h @ p.W_c + p.b_c
    probs = softmax(logits)
    cache = ClassifierCache(x, z, h, logits)
    return (probs[0] if single else probs), cache


def discriminate_hidden(h: np.ndarray, p: ModelParams):
    """Discriminator on transform outputs (after the identity GRL)."""
    h = grl_forward(h)
    a1 = h @ p.W_d1 + p.b_d1
    r = np.maximum(a1, 0.0)
    out = r @ p.w_d2 + p.b_d2[0]
    return sigmoid(out), DiscriminatorCache(h, a1, r, out)


def forward_discriminator(v, p: ModelParams):
    """Probability that each input comes from the source domain."""
    x, single = _as_batch(v, p)
    _, h = transform(x, p)
    d, cache = discriminate_hidden(h, p)
    return (float(d[0]) if single else d), cache


def grl_forward(x):
    return x


def grl_backward(upstream, lam: float):
    """Gradient reversal: ``-lam * upstream``."""
    return -lam * np.asarray(upstream, dtype=float)


@dataclass
class LossSpec:
    """Coefficients of the composite objective.

    ``beta`` scales the entropy-maximisation term, ``gamma`` the
    discriminator's own objective, and ``lam`` is the GRL coefficient applied
    to the gradient flowing back into the shared transform.
    """

    beta: float = 1.0
    gamma: float = 0.9
    lam: float = 0.9
    use_entropy: bool = True
    use_adversarial: bool = True


@dataclass
class Batch:
    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    target_w: np.ndarray | None = None


@dataclass
class ForwardCache:
    batch: Batch
    source: ClassifierCache
    target: ClassifierCache
    source_probs: np.ndarray
    target_probs: np.ndarray
    source_disc: DiscriminatorCache
    target_disc: DiscriminatorCache
    source_d: np.ndarray
    target_d: np.ndarray


def forward_batch(batch: Batch, p: ModelParams) -> ForwardCache:
    xs = np.asarray(batch.source_x, dtype=float).reshape(-1, p.input_dim)
    xt = np.asarray(batch.target_x, dtype=float).reshape(-1, p.input_dim)
    ps, cs = forward_classifier(xs, p)
    pt, ct = forward_classifier(xt, p)
    ds, dcs = discriminate_hidden(cs.h, p)
    dt, dct = discriminate_hidden(ct.h, p)
    return ForwardCache(batch, cs, ct, ps, pt, dcs, dct, ds, dt)


def target_weights(cache: ForwardCache) -> np.ndarray:
    n = cache.target_d.shape[0]
    w = cache.batch.target_w
    if w is None:
        return np.ones(n)
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise DomainError(f"{w.shape[0] if w.ndim else 0} target weights for {n} target samples")
    return w


def _softmax_vjp(probs: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. probabilities back to the logits."""
    return probs * (g - np.sum(probs * g, axis=1, keepdims=True))


def backward(cache: ForwardCache | None, p: ModelParams, spec: LossSpec) -> Gradients:
    """Analytic gradients for one step.

    Classifier and transform receive the gradient of ``L_c + beta*L_e``;
    the discriminator receives the gradient of ``-gamma*L_d`` (it maximises
    the domain log-likelihood); the transform additionally receives the
    discriminator's gradient of ``-L_d`` through ``grl_backward(., lam)``.
    Target weights are constants.
    """
    if cache is None:
        raise UsageError("backward called without a forward cache")
    b = cache.batch
    ys = np.asarray(b.source_y, dtype=int)
    ns, nt = cache.source_probs.shape[0], cache.target_probs.shape[0]
    C = p.n_classes
    if ys.shape != (ns,):
        raise DomainError("source labels do not match the source batch")
    grads = p.zeros_like()

    # cross entropy on source: d/dlogits = p - onehot, zero where the log is clamped
    dlog_s = np.zeros((ns, C))
    if ns:
        py = cache.source_probs[np.arange(ns), ys]
        dlog_s = cache.source_probs.copy()
        dlog_s[np.arange(ns), ys] -= 1.0
        dlog_s[py < PROB_EPS] = 0.0
        dlog_s /= ns

    # entropy maximisation on target: L_e = -mean H
    dlog_t = np.zeros((nt, C))
    if spec.use_entropy and nt and spec.beta != 0:
        pt = cache.target_probs
        dH_dp = -(np.log(np.maximum(pt, PROB_EPS)) + (pt >= PROB_EPS))
        dlog_t = -spec.beta / nt * _softmax_vjp(pt, dH_dp)

    grads.W_c = cache.source.h.T @ dlog_s + cache.target.h.T @ dlog_t
    grads.b_c = dlog_s.sum(axis=0) + dlog_t.sum(axis=0)
    dh_s = dlog_s @ p.W_c.T
    dh_t = dlog_t @ p.W_c.T

    if spec.use_adversarial:
        # discriminator objective Ladv = -L_d, gradient w.r.t. pre-sigmoid output
        ds, dt = cache.source_d, cache.target_d
        w = target_weights(cache)
        do_s = np.zeros(ns)
        if ns:
            do_s = np.where(ds >= PROB_EPS, -(1.0 - ds), 0.0) / ns
        do_t = np.zeros(nt)
        if nt:
            do_t = np.where(1.0 - dt >= PROB_EPS, w * dt, 0.0) / nt

        gd = _disc_backward(cache.source_disc, do_s, p)
        gt = _disc_backward(cache.target_disc, do_t, p)
        grads.W_d1 = spec.gamma * (gd[0] + gt[0])
        grads.b_d1 = spec.gamma * (gd[1] + gt[1])
        grads.w_d2 = spec.gamma * (gd[2] + gt[2])
        grads.b_d2 = spec.gamma * (gd[3] + gt[3])
        dh_s = dh_s + grl_backward(gd[4], spec.lam)
        dh_t = dh_t + grl_backward(gt[4], spec.lam)

    dz_s = dh_s * (cache.source.z > 0)
    dz_t = dh_t * (cache.target.z > 0)
    grads.W_e = cache.source.x.T @ dz_s + cache.target.x.T @ dz_t
    grads.b_e = dz_s.sum(axis=0) + dz_t.sum(axis=0)
    return grads


def _disc_backward(c: DiscriminatorCache, d_out: np.ndarray, p: ModelParams):
    g_w2 = c.r.T @ d_out
    g_b2 = np.array([d_out.sum()])
    da1 = np.outer(d_out, p.w_d2) * (c.a1 > 0)
    g_W1 = c.h.T @ da1
    g_b1 = da1.sum(axis=0)
    dh = da1 @ p.W_d1.T
    return g_W1, g_b1, g_w2, g_b2, dh


def save_checkpoint(path: str | Path, p: ModelParams) -> None:
    """Write the flat little-endian binary checkpoint."""
    p.validate()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, p.input_dim,
                              p.hidden_dim, p.adv_dim, p.n_classes))
        for arr in p.blocks().values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C"))


def load_checkpoint(path: str | Path) -> ModelParams:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, D, dh, da, C = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    shapes = [(D, dh), (dh,), (dh, C), (C,), (dh, da), (da,), (da,), (1,)]
    need = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(data) != need:
        raise CheckpointError(f"{path}: expected {need} bytes, found {len(data)}")
    offset = _HEADER.size
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(shape).astype(float))
        offset += 8 * n
    params = ModelParams(*arrays)
    params.validate()
    return params
