"""Datasets: synthetic domain-shift generator, feature manifests, class splits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import expm, logm

from .errors import ConfigError, FeatureParseError
from .model import aggregate_frames

MANIFEST_MAGIC = "cevt-features"
MANIFEST_VERSION = "v1"
UNKNOWN_RADIUS_FACTOR = 1.5
_DOMAIN_CODES = {"s": "source", "t": "target"}


@dataclass
class Dataset:
    """A collection of videos from one or both domains.

    ``features`` is (N, K, D) for frame-level data and (N, D) for
    video-level data. ``labels`` holds -1 for unlabeled items. Target
    labels are only ever used for evaluation.
    """

    ids: list[str]
    features: np.ndarray
    labels: np.ndarray
    domains: np.ndarray  # "s" or "t" per item
    c_known: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        self.domains = np.asarray(self.domains, dtype="<U1")
        n = len(self.ids)
        if self.features.ndim not in (2, 3) or self.features.shape[0] != n:
            raise ValueError(f"features shape {self.features.shape} does not match {n} ids")
        if self.labels.shape != (n,) or self.domains.shape != (n,):
            raise ValueError("labels/domains must have one entry per item")
        src = self.labels[self.domains == "s"]
        if np.any((src < 0) | (src >= self.c_known)):
            raise ValueError(f"source labels must lie in [0, {self.c_known})")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def domain_tag(self) -> str:
        tags = set(self.domains.tolist())
        if tags == {"s"}:
            return "source"
        if tags == {"t"}:
            return "target"
        return "mixed" if tags else "empty"

    @property
    def is_frame_level(self) -> bool:
        return self.features.ndim == 3

    @property
    def n_frames(self) -> int:
        return self.features.shape[1] if self.is_frame_level else 1

    @property
    def dim(self) -> int:
        return self.features.shape[-1]

    def video_features(self) -> np.ndarray:
        """(N, D) video-level features; frame-level data is average-pooled."""
        if self.is_frame_level:
            if len(self) == 0:
                return np.empty((0, self.dim))
            return aggregate_frames(self.features)
        return self.features

    def subset(self, mask) -> "Dataset":
        idx = np.flatnonzero(mask)
        return Dataset(
            ids=[self.ids[i] for i in idx],
            features=self.features[idx],
            labels=self.labels[idx],
            domains=self.domains[idx],
            c_known=self.c_known,
        )

    def by_domain(self, domain: str) -> "Dataset":
        code = domain[0]
        return self.subset(self.domains == code)

    def eval_labels(self) -> np.ndarray:
        """Labels with every unknown class collapsed onto index ``c_known``."""
        return np.where(self.labels >= self.c_known, self.c_known, self.labels)


def concat(a: Dataset, b: Dataset) -> Dataset:
    if a.c_known != b.c_known:
        raise ValueError("datasets disagree on the number of known classes")
    return Dataset(
        ids=a.ids + b.ids,
        features=np.concatenate([a.features, b.features]),
        labels=np.concatenate([a.labels, b.labels]),
        domains=np.concatenate([a.domains, b.domains]),
        c_known=a.c_known,
    )


@dataclass
class SyntheticConfig:
    c_known: int = 6
    c_unknown: int = 3
    dim: int = 32
    per_class_source: int = 200
    per_class_target: int = 200
    frames_per_video: int = 4
    cluster_spread: float = 1.0
    shift_angle_scale: float = 0.1
    shift_offset_scale: float = 0.3
    noise: float = 0.5
    mean_radius: float = 4.0
    seed: int = 0

    def validate(self) -> None:
        if self.c_known < 2:
            raise ConfigError("c_known must be >= 2")
        if self.c_unknown < 0:
            raise ConfigError("c_unknown must be >= 0")
        if self.dim < 2:
            raise ConfigError("dim must be >= 2")
        for name in ("per_class_source", "per_class_target", "frames_per_video"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.cluster_spread > 0:
            raise ConfigError("cluster_spread must be > 0")
        for name in ("shift_angle_scale", "shift_offset_scale", "noise", "mean_radius"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0")


def random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random special orthogonal matrix from the QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def interpolate_rotation(q: np.ndarray, t: float) -> np.ndarray:
    """Rotation ``q**t`` along the geodesic from the identity (t=0) to ``q`` (t=1)."""
    if t == 0:
        return np.eye(q.shape[0])
    a = np.real(logm(q))
    a = 0.5 * (a - a.T)  # project onto skew-symmetric -> expm is orthogonal
    return expm(t * a)


@dataclass
class ShiftMap:
    rotation: np.ndarray
    offset: np.ndarray = field(repr=False)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x @ self.rotation.T + self.offset


def synthetic_shift(cfg: SyntheticConfig) -> ShiftMap:
    """The target-domain shift map implied by ``cfg`` (same seed stream as generation)."""
    return _draw(cfg)[1]


def _draw(cfg: SyntheticConfig):
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    c_total = cfg.c_known + cfg.c_unknown

    dirs = rng.standard_normal((c_total, cfg.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.where(np.arange(c_total) < cfg.c_known, 1.0, UNKNOWN_RADIUS_FACTOR)
    means = cfg.mean_radius * radii[:, None] * dirs

    rot = interpolate_rotation(random_rotation(cfg.dim, rng), cfg.shift_angle_scale)
    off_dir = rng.standard_normal(cfg.dim)
    offset = cfg.shift_offset_scale * off_dir / np.linalg.norm(off_dir)
    return rng, ShiftMap(rot, offset), means


def generate_synthetic(cfg: SyntheticConfig) -> tuple[Dataset, Dataset]:
    """Draw a labeled source set and a shifted open-set target set.

    Source holds the ``c_known`` classes; target holds all classes, with
    unknown classes labeled ``c_known .. c_known + c_unknown - 1``. Every
    video is expanded to ``frames_per_video`` noisy frames.
    """
    rng, shift, means = _draw(cfg)
    c_total = cfg.c_known + cfg.c_unknown
    K, D = cfg.frames_per_video, cfg.dim

    def videos(classes, per_class):
        labels = np.repeat(np.asarray(classes), per_class)
        x = means[labels] + cfg.cluster_spread * rng.standard_normal((labels.size, D))
        return x, labels

    xs, ys = videos(range(cfg.c_known), cfg.per_class_source)
    xt, yt = videos(range(c_total), cfg.per_class_target)
    xt = shift.apply(xt)

    fs = xs[:, None, :] + cfg.noise * rng.standard_normal((xs.shape[0], K, D))
    ft = xt[:, None, :] + cfg.noise * rng.standard_normal((xt.shape[0], K, D))

    source = Dataset(
        ids=[f"s{i:06d}" for i in range(len(ys))],
        features=fs, labels=ys, domains=np.full(len(ys), "s"), c_known=cfg.c_known,
    )
    target = Dataset(
        ids=[f"t{i:06d}" for i in range(len(yt))],
        features=ft, labels=yt, domains=np.full(len(yt), "t"), c_known=cfg.c_known,
    )
    return source, target


def save_features(path: str | Path, data: Dataset) -> None:
    """Write ``data`` as a text manifest (lossless float repr)."""
    K = data.n_frames
    lines = [f"{MANIFEST_MAGIC} {MANIFEST_VERSION} D={data.dim} K={K} C={data.c_known}"]
    frames = data.features if data.is_frame_level else data.features[:, None, :]
    for sid, dom, lab, video in zip(data.ids, data.domains, data.labels, frames):
        if "," in sid or not sid:
            raise ValueError(f"sample id {sid!r} must be non-empty and comma free")
        lines.append(f"{sid},{dom},{int(lab)}")
        lines.extend(",".join(repr(float(v)) for v in row) for row in video)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_header(line: str) -> tuple[int, int, int]:
    parts = line.split()
    if len(parts) != 5 or parts[0] != MANIFEST_MAGIC or parts[1] != MANIFEST_VERSION:
        raise FeatureParseError(f"expected '{MANIFEST_MAGIC} {MANIFEST_VERSION} D=.. K=.. C=..' header", 1)
    values = {}
    for token, key in zip(parts[2:], ("D", "K", "C")):
        name, _, raw = token.partition("=")
        if name != key or not raw.isdigit() or int(raw) < 1:
            raise FeatureParseError(f"bad header field {token!r}", 1)
        values[key] = int(raw)
    return values["D"], values["K"], values["C"]


def load_features(path: str | Path) -> Dataset:
    """Read a feature manifest.

    Frame-level files (K > 1) keep their (N, K, D) frames for later
    aggregation; K = 1 files are stored directly as video-level features.
    """
    path = Path(path)
    if not path.exists():
        raise FeatureParseError(f"{path}: no such file")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FeatureParseError(f"{path}: empty manifest", 1)
    D, K, C = _parse_header(lines[0])

    ids, labels, domains, videos = [], [], [], []
    i = 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        lineno = i + 1
        head = lines[i].split(",")
        if len(head) != 3:
            raise FeatureParseError("expected '<id>,<s|t>,<label>'", lineno)
        sid, dom, lab = (h.strip() for h in head)
        if dom not in _DOMAIN_CODES:
            raise FeatureParseError(f"domain must be 's' or 't', got {dom!r}", lineno)
        try:
            label = int(lab)
        except ValueError:
            raise FeatureParseError(f"label {lab!r} is not an integer", lineno) from None
        if dom == "s" and not 0 <= label < C:
            raise FeatureParseError(f"source label {label} outside [0, {C})", lineno)
        if label < -1:
            raise FeatureParseError(f"label {label} must be >= -1", lineno)

        rows = []
        for k in range(K):
            j = i + 1 + k
            if j >= len(lines):
                raise FeatureParseError(f"video {sid!r} has {k} of {K} frame rows", j + 1)
            cells = lines[j].split(",")
            if len(cells) != D:
                raise FeatureParseError(f"expected {D} values, found {len(cells)}", j + 1)
            try:
                row = [float(c) for c in cells]
            except ValueError:
                raise FeatureParseError("non-numeric feature value", j + 1) from None
            if not all(math.isfinite(v) for v in row):
                raise FeatureParseError("non-finite feature value", j + 1)
            rows.append(row)
        ids.append(sid)
        domains.append(dom)
        labels.append(label)
        videos.append(rows)
        i += 1 + K

    feats = np.asarray(videos, dtype=float).reshape(len(ids), K, D)
    if K == 1:
        feats = feats[:, 0, :]
    return Dataset(ids=ids, features=feats, labels=np.asarray(labels, dtype=int),
                   domains=np.asarray(domains, dtype="<U1"), c_known=C)


@dataclass(frozen=True)
class KnownUnknownSplit:
    known: frozenset[int]
    unknown: frozenset[int]
    mapping: dict[int, int]
    relabeled: tuple[int, ...]


def split_known_unknown(labels: Sequence[int], c_total: int) -> KnownUnknownSplit:
    """First ceil(c_total/2) classes are known; the rest map to one unknown label.

    The unknown label is the number of known classes.
    """
    if c_total < 2:
        raise ConfigError("c_total must be >= 2")
    n_known = math.ceil(c_total / 2)
    known = frozenset(range(n_known))
    unknown = frozenset(range(n_known, c_total))
    mapping = {c: (c if c < n_known else n_known) for c in range(c_total)}
    relabeled = tuple(mapping[int(y)] for y in labels)
    return KnownUnknownSplit(known, unknown, mapping, relabeled)
