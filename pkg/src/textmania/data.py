"""Long-tailed and scarce dataset views, class-set partitions and samplers."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from .errors import ConfigError, DataError

DATA_ENV = "TEXTMANIA_DATA"
MANY_THRESHOLD = 100
FEW_THRESHOLD = 20


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class LongTailSpec:
    n_max: int
    num_classes: int
    imbalance_factor: float
    seed: int = 0


@dataclass(frozen=True)
class ScarceSpec:
    per_class_count: int | None = None
    fraction: float | None = None
    seed: int = 0

    def __post_init__(self):
        if (self.per_class_count is None) == (self.fraction is None):
            raise ConfigError("give exactly one of per_class_count / fraction")


def longtail_counts(spec: LongTailSpec) -> np.ndarray:
    """Exponential profile ``n_max * IF**(-k/(K-1))``, rounded half-up, at least 1."""
    n_max, K, imb = spec.n_max, spec.num_classes, float(spec.imbalance_factor)
    if imb < 1 or n_max < 1 or K < 1:
        raise ConfigError(f"invalid long-tail spec {spec}")
    if K < 2:
        if imb > 1:
            raise ConfigError("a long tail needs at least two classes")
        return np.array([n_max], dtype=np.int64)
    mu = 1.0 / imb
    counts = [max(1, round_half_up(n_max * mu ** (k / (K - 1)))) for k in range(K)]
    return np.array(counts, dtype=np.int64)


def scarce_counts(spec: ScarceSpec, available: Sequence[int]) -> np.ndarray:
    available = np.asarray(available)
    if spec.per_class_count is not None:
        n = int(spec.per_class_count)
    else:
        n = max(1, round_half_up(spec.fraction * int(available.min())))
    return np.full(len(available), n, dtype=np.int64)


def subsample_dataset(labels, counts, seed: int) -> list[np.ndarray]:
    """Per-class uniform draw without replacement; returns sorted indices per class."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    out = []
    for k, n in enumerate(counts):
        idx = np.flatnonzero(labels == k)
        if n > len(idx):
            raise DataError(f"class {k} has {len(idx)} samples, {n} requested")
        if n == len(idx):
            out.append(idx)
        else:
            out.append(np.sort(rng.choice(idx, size=int(n), replace=False)))
    return out


@dataclass(frozen=True)
class ClassSetPartition:
    many: frozenset
    medium: frozenset
    few: frozenset
    thresholds: tuple[int, int] = (MANY_THRESHOLD, FEW_THRESHOLD)

    def set_of(self, k: int) -> str:
        for name in ("many", "medium", "few"):
            if k in getattr(self, name):
                return name
        raise KeyError(k)

    def to_dict(self) -> dict:
        return {n: sorted(getattr(self, n)) for n in ("many", "medium", "few")}


def partition_class_sets(train_counts, many: int = MANY_THRESHOLD, few: int = FEW_THRESHOLD) -> ClassSetPartition:
    """Many: count > ``many``; Medium: ``few`` <= count <= ``many``; Few: count < ``few``."""
    sets = {"many": set(), "medium": set(), "few": set()}
    for k, n in enumerate(train_counts):
        sets["many" if n > many else "few" if n < few else "medium"].add(k)
    return ClassSetPartition(*(frozenset(sets[s]) for s in ("many", "medium", "few")), thresholds=(many, few))


class ClassBalancedPairSampler:
    """Draw two classes uniformly, then one sample uniformly inside each."""

    def __init__(self, labels, rng: np.random.Generator, num_classes: int | None = None):
        labels = np.asarray(labels)
        k = int(labels.max()) + 1 if num_classes is None else num_classes
        self.by_class = [np.flatnonzero(labels == c) for c in range(k)]
        empty = [c for c, idx in enumerate(self.by_class) if len(idx) == 0]
        if empty:
            raise DataError(f"classes {empty} have no samples")
        self.rng = rng

    def _one(self, classes: np.ndarray) -> np.ndarray:
        return np.array([self.by_class[c][self.rng.integers(len(self.by_class[c]))] for c in classes], dtype=np.int64)

    def sample(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        ca = self.rng.integers(len(self.by_class), size=n)
        cb = self.rng.integers(len(self.by_class), size=n)
        return self._one(ca), self._one(cb)

    def __iter__(self) -> Iterator[tuple[int, int]]:
        while True:
            a, b = self.sample(1)
            yield int(a[0]), int(b[0])


def class_balanced_pair_sampler(labels, rng: np.random.Generator) -> Iterator[tuple[int, int]]:
    return iter(ClassBalancedPairSampler(labels, rng))


# Dataset sources -----------------------------------------------------------


@dataclass
class Split:
    x: torch.Tensor
    y: torch.Tensor

    def __len__(self):
        return len(self.y)


@dataclass
class DatasetView:
    name: str
    class_names: list[str]
    train: Split
    eval: Split
    train_indices: np.ndarray
    manifest: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def train_counts(self) -> np.ndarray:
        return np.bincount(self.train.y.numpy(), minlength=self.num_classes)

    @property
    def eval_counts(self) -> np.ndarray:
        return np.bincount(self.eval.y.numpy(), minlength=self.num_classes)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.train.x.shape[1:])


@dataclass
class DataConfig:
    base: str = "synthetic-gaussian"
    root: str | None = None
    download: bool = False
    longtail_if: float | None = None
    scarce_per_class: int | None = None
    scarce_fraction: float | None = None
    seed: int = 0
    synthetic: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def cifar100_classes(root=None, download=False) -> list[str]:
    return _load_cifar100(root, download)[0]


def _load_cifar100(root, download):
    try:
        from torchvision.datasets import CIFAR100
    except ImportError as exc:
        raise DataError("torchvision is required for cifar100") from exc
    root = root or os.environ.get(DATA_ENV) or "data"
    try:
        tr = CIFAR100(root, train=True, download=download)
        ev = CIFAR100(root, train=False, download=download)
    except RuntimeError as exc:
        raise DataError(f"CIFAR-100 not available under {root!r}: {exc}") from None
    names = [c.replace("_", " ") for c in tr.classes]

    def to_tensor(d):
        return torch.from_numpy(d.data).permute(0, 3, 1, 2).float().div_(255.0)

    return names, Split(to_tensor(tr), torch.tensor(tr.targets)), Split(to_tensor(ev), torch.tensor(ev.targets))


SYNTH_CLASSES = ("apple", "bus", "cat", "dolphin", "elephant", "forest", "girl", "house", "lamp", "mushroom")


def synthetic_gaussian(
    counts: Sequence[int] = (100, 20, 5),
    eval_per_class: int = 300,
    dim: int = 64,
    class_names: Sequence[str] | None = None,
    attributes: Sequence[str] = ("red", "green", "blue", "yellow", "small", "big"),
    attr_scale: float = 2.0,
    center_scale: float = 0.8,
    noise: float = 0.5,
    seed: int = 0,
    encoder_seed: int = 0,
):
    """Gaussian class centroids plus attribute-structured offsets.

    A sample of class ``k`` is ``mu_k + attr_scale * vec(a) + noise * eps`` where ``a``
    is a uniformly drawn attribute word and ``vec`` is the toy encoder's token vector,
    so the attribute directions coincide with toy difference vectors.
    """
    from .encoders import toy_token_vector

    K = len(counts)
    names = list(class_names or SYNTH_CLASSES[:K])
    if len(names) != K:
        raise ConfigError("class_names length must match counts")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((K, dim)) * center_scale / math.sqrt(dim) * math.sqrt(2)
    dirs = np.stack([toy_token_vector(a, dim, encoder_seed) for a in attributes]).astype(np.float64)

    def draw(n_per):
        xs, ys = [], []
        for k, n in enumerate(n_per):
            a = rng.integers(len(attributes), size=n)
            x = centers[k] + attr_scale * dirs[a] + noise * rng.standard_normal((n, dim)) / math.sqrt(dim)
            xs.append(x)
            ys.append(np.full(n, k))
        return Split(torch.tensor(np.concatenate(xs), dtype=torch.float32), torch.tensor(np.concatenate(ys)))

    train = draw(counts)
    ev = draw([eval_per_class] * K)
    return names, train, ev


def synthetic_images(num_classes: int = 4, per_class: int = 40, eval_per_class: int = 20, size: int = 16, seed: int = 0):
    """Small RGB images: a class-specific colored blob on noise. For exercising image pipelines."""
    rng = np.random.default_rng(seed)
    palette = rng.uniform(0.2, 1.0, size=(num_classes, 3))
    yy, xx = np.mgrid[0:size, 0:size] / size

    def draw(n):
        xs, ys = [], []
        for k in range(num_classes):
            cx, cy = (k + 0.5) / num_classes, 0.5
            blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / 0.02)
            imgs = rng.uniform(0, 0.3, size=(n, 3, size, size)) + palette[k][None, :, None, None] * blob[None, None]
            xs.append(np.clip(imgs, 0, 1))
            ys.append(np.full(n, k))
        return Split(torch.tensor(np.concatenate(xs), dtype=torch.float32), torch.tensor(np.concatenate(ys)))

    names = list(SYNTH_CLASSES[:num_classes])
    return names, draw(per_class), draw(eval_per_class)


def load_features(path):
    """Frozen features: npz with train_/eval_ ``features`` and ``labels`` (+ optional ``class_names``)."""
    if path is None:
        raise ConfigError("features dataset needs data.root pointing at an .npz file")
    try:
        z = np.load(path, allow_pickle=False)
        tr = Split(torch.tensor(z["train_features"], dtype=torch.float32), torch.tensor(z["train_labels"]).long())
        ev = Split(torch.tensor(z["eval_features"], dtype=torch.float32), torch.tensor(z["eval_labels"]).long())
    except (OSError, KeyError) as exc:
        raise DataError(f"cannot read features from {path}: {exc}") from None
    k = int(max(tr.y.max(), ev.y.max())) + 1
    names = [str(n) for n in z["class_names"]] if "class_names" in z.files else [f"class {i}" for i in range(k)]
    if tr.x.shape[1:] != ev.x.shape[1:]:
        raise DataError("train and eval feature dims differ")
    return names, tr, ev


def save_features(path, train_features, train_labels, eval_features, eval_labels, class_names=None):
    arrays = dict(train_features=train_features, train_labels=train_labels,
                  eval_features=eval_features, eval_labels=eval_labels)
    if class_names is not None:
        arrays["class_names"] = np.array(class_names)
    np.savez(path, **{k: np.asarray(v) for k, v in arrays.items()})


def _indices_hash(indices: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(indices, dtype="<i8").tobytes()).hexdigest()


def make_view(cfg: DataConfig) -> DatasetView:
    """Build the training view described by ``cfg``; the eval split is the untouched original."""
    if cfg.base == "cifar100":
        names, full_train, ev = _load_cifar100(cfg.root, cfg.download)
    elif cfg.base == "synthetic-gaussian":
        names, full_train, ev = synthetic_gaussian(**cfg.synthetic)
    elif cfg.base == "synthetic-images":
        names, full_train, ev = synthetic_images(**cfg.synthetic)
    elif cfg.base == "features":
        names, full_train, ev = load_features(cfg.root)
    else:
        raise ConfigError(f"unknown dataset base {cfg.base!r}")

    available = np.bincount(full_train.y.numpy(), minlength=len(names))
    if cfg.longtail_if is not None and (cfg.scarce_per_class is not None or cfg.scarce_fraction is not None):
        raise ConfigError("longtail_if and scarce options are mutually exclusive")
    if cfg.longtail_if is not None:
        counts = longtail_counts(LongTailSpec(int(available.max()), len(names), cfg.longtail_if, cfg.seed))
    elif cfg.scarce_per_class is not None or cfg.scarce_fraction is not None:
        counts = scarce_counts(ScarceSpec(cfg.scarce_per_class, cfg.scarce_fraction, cfg.seed), available)
    else:
        counts = available
    per_class = subsample_dataset(full_train.y.numpy(), counts, cfg.seed)
    indices = np.sort(np.concatenate(per_class)).astype(np.int64)
    idx_t = torch.from_numpy(indices)
    train = Split(full_train.x[idx_t], full_train.y[idx_t])
    manifest = {
        "base": cfg.base,
        "seed": cfg.seed,
        "longtail_if": cfg.longtail_if,
        "scarce_per_class": cfg.scarce_per_class,
        "scarce_fraction": cfg.scarce_fraction,
        "class_names": names,
        "counts": [int(c) for c in counts],
        "num_train": int(len(indices)),
        "num_eval": int(len(ev)),
        "indices_sha256": _indices_hash(indices),
    }
    return DatasetView(cfg.base, names, train, ev, indices, manifest)


def write_view(view: DatasetView, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "train_indices.npy", view.train_indices)
    path = out / "manifest.json"
    path.write_text(json.dumps(view.manifest, indent=2) + "\n")
    return path
