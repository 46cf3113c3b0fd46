"""Run configuration: nested dataclasses with a flat-key file form.

File keys follow ``augment.variant``, ``augment.alpha.{mean,std,min,max}``,
``augment.apply_prob``, ``augment.proj.mode``, ``augment.combine_with`` and
``baseline.{mixup,cutmix,manimixup,cutout}.*``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augment import AlphaDistribution, AugmentorConfig
from .baselines import CIFAR_STACK, DEFAULT_BETA
from .data import DataConfig
from .errors import ConfigError
from .prompts import DEFAULT_COLORS, DEFAULT_SIZES, DEFAULT_TEMPLATE

MIX_METHODS = ("none", "mixup", "cutmix", "manimixup", "cutout")


@dataclass
class TableConfig:
    path: str | None = None
    backend: str = "toy-hash"
    template: str = DEFAULT_TEMPLATE
    colors: list = field(default_factory=lambda: list(DEFAULT_COLORS))
    sizes: list = field(default_factory=lambda: list(DEFAULT_SIZES))
    combo_policy: str = "single_and_color_size_pairs"
    store_bases: bool = False


@dataclass
class BaselineConfig:
    method: str = "none"
    mixup_alpha: float = DEFAULT_BETA["mixup"]
    cutmix_alpha: float = DEFAULT_BETA["cutmix"]
    manimixup_alpha: float = DEFAULT_BETA["manimixup"]
    cutout_size: int = 16
    cutout_fill: float = 0.0
    pair_sampling: str = "batch"  # or "class_balanced"
    transforms: list = field(default_factory=list)

    def __post_init__(self):
        if self.method not in MIX_METHODS:
            raise ConfigError(f"unknown baseline method {self.method!r}; known: {MIX_METHODS}")
        if self.pair_sampling not in ("batch", "class_balanced"):
            raise ConfigError(f"unknown pair_sampling {self.pair_sampling!r}")


@dataclass
class OptimConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: str = "cosine"
    eval_every: int = 1


@dataclass
class TrainConfig:
    model: dict = field(default_factory=lambda: {"id": "linear"})
    data: DataConfig = field(default_factory=DataConfig)
    table: TableConfig = field(default_factory=TableConfig)
    augment: AugmentorConfig = field(default_factory=AugmentorConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0
    device: str = "cpu"

    def to_dict(self) -> dict:
        a = self.augment
        b = self.baseline
        return {
            "model": dict(self.model),
            "data": self.data.to_dict(),
            "table": vars(self.table).copy(),
            "augment": {
                "variant": a.variant.value,
                "alpha": {"mean": a.alpha.mean, "std": a.alpha.std, "min": a.alpha.min_clamp, "max": a.alpha.max_clamp},
                "apply_prob": a.apply_prob,
                "combo_sampling": a.combo_sampling,
                "proj": {"mode": a.proj_mode.value},
                "combine_with": b.method,
            },
            "baseline": {
                "mixup": {"alpha": b.mixup_alpha},
                "cutmix": {"alpha": b.cutmix_alpha},
                "manimixup": {"alpha": b.manimixup_alpha},
                "cutout": {"size": b.cutout_size, "fill": b.cutout_fill},
                "pair_sampling": b.pair_sampling,
                "transforms": copy.deepcopy(b.transforms),
            },
            "optim": vars(self.optim).copy(),
            "seed": self.seed,
            "device": self.device,
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _take(d: dict, key: str, default=None):
    return d.pop(key, default) if isinstance(d, dict) else default


def config_from_dict(raw: dict) -> TrainConfig:
    raw = copy.deepcopy(raw or {})
    known = {"model", "data", "table", "augment", "baseline", "optim", "seed", "device"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    try:
        aug = raw.get("augment", {}) or {}
        alpha = aug.pop("alpha", {}) or {}
        proj = aug.pop("proj", {}) or {}
        combine_with = aug.pop("combine_with", None)
        augment = AugmentorConfig(
            alpha=AlphaDistribution(
                mean=alpha.pop("mean", 0.0),
                std=alpha.pop("std", 1.0),
                min_clamp=alpha.pop("min", 0.1),
                max_clamp=alpha.pop("max", 2.0),
            ),
            proj_mode=proj.pop("mode", "learned_linear"),
            **aug,
        )
        base = raw.get("baseline", {}) or {}
        method = base.pop("method", None)
        if combine_with is not None and method is not None and combine_with != method:
            raise ConfigError(f"augment.combine_with={combine_with!r} disagrees with baseline.method={method!r}")
        bkw = dict(method=combine_with or method or "none")
        for name in ("mixup", "cutmix", "manimixup"):
            sub = base.pop(name, {}) or {}
            if "alpha" in sub:
                bkw[f"{name}_alpha"] = sub.pop("alpha")
        cut = base.pop("cutout", {}) or {}
        if "size" in cut:
            bkw["cutout_size"] = cut.pop("size")
        if "fill" in cut:
            bkw["cutout_fill"] = cut.pop("fill")
        transforms = base.pop("transforms", [])
        bkw["transforms"] = list(CIFAR_STACK) if transforms == "cifar" else transforms
        bkw.update(base)
        return TrainConfig(
            model=dict(raw.get("model") or {"id": "linear"}),
            data=DataConfig(**(raw.get("data") or {})),
            table=TableConfig(**(raw.get("table") or {})),
            augment=augment,
            baseline=BaselineConfig(**bkw),
            optim=OptimConfig(**(raw.get("optim") or {})),
            seed=int(raw.get("seed", 0)),
            device=str(raw.get("device", "cpu")),
        )
    except TypeError as exc:
        raise ConfigError(f"bad config: {exc}") from None


def load_config(path) -> TrainConfig:
    text = Path(path).read_text()
    raw = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    return config_from_dict(raw)


def set_key(raw: dict, dotted: str, value) -> dict:
    """Set ``a.b.c=value`` in a nested dict (used by ``--set`` overrides)."""
    node = raw
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return raw


# Presets -------------------------------------------------------------------

TOY_CLASSES = ["apple", "bus", "cat"]
TOY_ATTRIBUTES = ["red", "green", "blue", "yellow", "small", "big"]


def toy_preset(seed: int = 0, variant: str = "textmania") -> dict:
    """3-class Gaussian features with attribute offsets, counts 100:20:5, linear head."""
    return {
        "model": {"id": "linear"},
        "data": {
            "base": "synthetic-gaussian",
            "seed": seed,
            "synthetic": {"counts": [100, 20, 5], "class_names": TOY_CLASSES, "attributes": TOY_ATTRIBUTES, "seed": seed},
        },
        "table": {
            "backend": "toy-hash",
            "colors": ["red", "green", "blue", "yellow"],
            "sizes": ["small", "big"],
            "combo_policy": "single_only",
            "store_bases": True,
        },
        "augment": {"variant": variant, "proj": {"mode": "identity"}},
        "optim": {"epochs": 60, "batch_size": 32, "lr": 0.05, "weight_decay": 0.0, "eval_every": 10},
        "seed": seed,
    }


def cifar_preset(seed: int = 0, variant: str = "textmania", longtail_if: float | None = 100, scarce_per_class=None,
                 backend: str = "clip-vit-b32-text", method: str = "none", epochs: int = 30) -> dict:
    """Desk-scale CIFAR-100 preset (ResNet-18, SGD+cosine). Not the original schedule."""
    return {
        "model": {"id": "resnet"},
        "data": {"base": "cifar100", "longtail_if": longtail_if, "scarce_per_class": scarce_per_class, "seed": 0},
        "table": {"backend": backend},
        "augment": {"variant": variant, "proj": {"mode": "learned_linear"}, "combine_with": method},
        "baseline": {"transforms": "cifar"},
        "optim": {"epochs": epochs, "batch_size": 128, "lr": 0.1, "weight_decay": 5e-4, "eval_every": 5},
        "seed": seed,
        "device": "auto",
    }


PRESETS = {"toy": toy_preset, "cifar100-lt": cifar_preset,
           "cifar100-10": lambda seed=0, variant="textmania", **kw: cifar_preset(seed, variant, None, 50, **kw)}
