"""Training and evaluation harness.

Augmentation is injected at the penultimate feature: ``head(f + alpha * proj(delta))``.
Mix-based baselines act first (input or hidden layer), the text-driven shift last.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from . import __version__
from .augment import Projection, ProjMode, TableSource, Variant, per_batch_augment, source_dim
from .baselines import MixResult, baseline_transform_stack, cutmix, cutout, sample_lambda
from .config import TrainConfig, config_from_dict
from .data import ClassBalancedPairSampler, ClassSetPartition, DatasetView, make_view, partition_class_sets
from .delta_table import DeltaTable, build_table, load_table
from .encoders import get_backend
from .errors import ConfigError, ShapeError
from .models import Classifier, build_model
from .prompts import AttributeVocabulary, enumerate_variants, get_template

log = logging.getLogger(__name__)

# Values chosen by this package where no published setting exists.
UNPUBLISHED_DEFAULTS = (
    "augment.alpha (mean 0, std 1, clamp [0.1, 2.0])",
    "projection init (kaiming-uniform weight, zero bias)",
    "optimizer/schedule presets",
    "baseline.{mixup,cutmix,manimixup}.alpha",
)


@dataclass
class RunReport:
    top1: float
    top5: float
    per_set: dict
    per_class: list
    seed: int
    config_hash: str
    curve: list = field(default_factory=list)
    wall_time: float = 0.0
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def comparable(self) -> dict:
        """Everything except wall time, for determinism checks."""
        d = self.to_dict()
        d.pop("wall_time")
        return d

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        with open(out / "curve.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "top1"])
            for row in self.curve:
                w.writerow([row["epoch"], f"{row['train_loss']:.6f}", "" if row["top1"] is None else f"{row['top1']:.4f}"])


@dataclass
class TrainResult:
    model: Classifier
    projection: Projection | None
    report: RunReport
    view: DatasetView
    table: DeltaTable | None


# Evaluation ------------------------------------------------------------------


@torch.no_grad()
def predict_logits(model: Classifier, x: torch.Tensor, batch_size: int = 512, transform=None) -> torch.Tensor:
    was_training = model.training
    model.eval()
    device = next(model.parameters()).device
    outs = []
    for i in range(0, len(x), batch_size):
        xb = x[i : i + batch_size]
        if transform is not None and len(transform):
            xb = transform(xb, None)
        outs.append(model(xb.to(device)).cpu())
    model.train(was_training)
    return torch.cat(outs) if outs else torch.zeros(0, model.head.out_features)


def accuracy_report(logits, labels, partition: ClassSetPartition, num_classes: int) -> dict:
    """Top-1/Top-5 and per-class / per-set accuracy (percent). Empty sets give ``None``."""
    logits = torch.as_tensor(logits)
    labels = torch.as_tensor(labels).long()
    n = len(labels)
    k5 = min(5, logits.shape[1])
    top5_idx = logits.topk(k5, dim=1).indices
    correct1 = (top5_idx[:, 0] == labels).numpy()
    correct5 = (top5_idx == labels[:, None]).any(1).numpy()
    y = labels.numpy()
    per_class = []
    for c in range(num_classes):
        m = y == c
        per_class.append(float(100.0 * correct1[m].mean()) if m.any() else None)
    per_set = {}
    for name in ("many", "medium", "few"):
        m = np.isin(y, sorted(getattr(partition, name)))
        per_set[name] = float(100.0 * correct1[m].mean()) if m.any() else None
    return {
        "top1": float(100.0 * correct1.mean()) if n else 0.0,
        "top5": float(100.0 * correct5.mean()) if n else 0.0,
        "per_set": per_set,
        "per_class": per_class,
    }


def evaluate(model: Classifier, view: DatasetView, partition: ClassSetPartition | None = None, transform=None) -> dict:
    """Accuracy on the untouched eval split. No augmentation is applied here."""
    if partition is None:
        partition = partition_class_sets(view.train_counts)
    logits = predict_logits(model, view.eval.x, transform=transform)
    return accuracy_report(logits, view.eval.y, partition, view.num_classes)


# Tables ------------------------------------------------------------------------


def resolve_table(cfg: TrainConfig, class_names) -> DeltaTable | None:
    if not cfg.augment.enabled:
        return None
    tc = cfg.table
    if tc.path:
        table = load_table(tc.path)
    else:
        vocab = AttributeVocabulary(tuple(tc.colors), tuple(tc.sizes), tc.combo_policy)
        variants = enumerate_variants(list(class_names), vocab, get_template(tc.template))
        needs_bases = tc.store_bases or cfg.augment.variant in (Variant.DIRECT_EMBEDDING, Variant.CONCAT_EMBEDDING)
        table = build_table(get_backend(tc.backend), variants, store_bases=needs_bases)
    if list(table.class_names) != list(class_names):
        raise ConfigError(
            f"delta table classes ({len(table.class_names)}) do not match dataset classes ({len(class_names)})"
        )
    return table


# Training ----------------------------------------------------------------------


def resolve_device(name: str) -> torch.device:
    """``auto`` picks CUDA when present. Sampling always stays on CPU generators."""
    if name == "auto":
        name = "cuda" if torch.cuda.is_available() else "cpu"
    if name.startswith("cuda") and not torch.cuda.is_available():
        raise ConfigError(f"device {name!r} requested but CUDA is not available")
    return torch.device(name)


def _make_projection(cfg: TrainConfig, table: DeltaTable, feature_dim: int, seed: int) -> Projection:
    in_dim = source_dim(cfg.augment.variant, table)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return Projection(in_dim, feature_dim, cfg.augment.proj_mode)


def _lr_lambda(cfg: TrainConfig, total_steps: int):
    if cfg.optim.schedule == "cosine":
        return lambda s: 0.5 * (1.0 + math.cos(math.pi * min(s, total_steps) / max(1, total_steps)))
    if cfg.optim.schedule == "constant":
        return lambda s: 1.0
    raise ConfigError(f"unknown schedule {cfg.optim.schedule!r}")


def train(
    cfg: TrainConfig | dict,
    out_dir=None,
    view: DatasetView | None = None,
    table: DeltaTable | None = None,
    step_callback: Callable | None = None,
) -> TrainResult:
    """Train a classifier under ``cfg`` and evaluate it on the original eval split.

    ``step_callback(step, loss, model, projection)`` is called after every optimizer step.
    """
    if isinstance(cfg, dict):
        cfg = config_from_dict(cfg)
    t_start = time.perf_counter()
    view = view if view is not None else make_view(cfg.data)
    if cfg.augment.enabled:
        table = table if table is not None else resolve_table(cfg, view.class_names)
        if list(table.class_names) != list(view.class_names):
            raise ConfigError("delta table and dataset disagree on the class list")
    else:
        table = None
    partition = partition_class_sets(view.train_counts)

    device = resolve_device(cfg.device)
    torch.manual_seed(cfg.seed)
    model = build_model(cfg.model, view.input_shape, view.num_classes).to(device)
    proj = source = None
    params = list(model.parameters())
    if table is not None:
        proj = _make_projection(cfg, table, model.feature_dim, cfg.seed + 7).to(device)
        source = TableSource(table, cfg.augment.variant)
        params += list(proj.parameters())

    data_gen = torch.Generator().manual_seed(cfg.seed)
    aug_gen = torch.Generator().manual_seed(cfg.seed + 1)
    pair_sampler = None
    b = cfg.baseline
    if b.pair_sampling == "class_balanced" and b.method in ("mixup", "cutmix", "manimixup"):
        pair_sampler = ClassBalancedPairSampler(view.train.y.numpy(), np.random.default_rng(cfg.seed + 2), view.num_classes)
    transforms = baseline_transform_stack(b.transforms)
    eval_transform = transforms.eval_stack()

    opt = torch.optim.SGD(params, lr=cfg.optim.lr, momentum=cfg.optim.momentum, weight_decay=cfg.optim.weight_decay)
    n = len(view.train)
    bs = min(cfg.optim.batch_size, n)
    steps_per_epoch = math.ceil(n / bs)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, _lr_lambda(cfg, cfg.optim.epochs * steps_per_epoch))

    curve = []
    step = 0
    X, Y = view.train.x, view.train.y
    for epoch in range(1, cfg.optim.epochs + 1):
        model.train()
        if proj is not None:
            proj.train()
        order = torch.randperm(n, generator=data_gen)
        total, seen = 0.0, 0
        for i in range(0, n, bs):
            idx = order[i : i + bs]
            if pair_sampler is not None:
                ia, ib = pair_sampler.sample(len(idx))
                xa, ya, xb_, yb_ = X[ia], Y[ia], X[ib], Y[ib]
            else:
                xa, ya = X[idx], Y[idx]
                perm = torch.randperm(len(idx), generator=data_gen)
                xb_, yb_ = xa[perm], ya[perm]
            if len(transforms):
                xa = transforms(xa, data_gen)
                xb_ = transforms(xb_, data_gen) if pair_sampler is not None else xa[perm]
            loss = _step_loss(model, proj, source, cfg, xa, ya, xb_, yb_, data_gen, aug_gen)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            sched.step()
            step += 1
            total += float(loss.detach()) * len(idx)
            seen += len(idx)
            if step_callback is not None:
                step_callback(step, float(loss.detach()), model, proj)
        top1 = None
        if cfg.optim.eval_every and (epoch % cfg.optim.eval_every == 0 or epoch == cfg.optim.epochs):
            top1 = evaluate(model, view, partition, eval_transform)["top1"]
        curve.append({"epoch": epoch, "train_loss": total / max(seen, 1), "top1": top1})
        log.info("epoch %d loss %.4f top1 %s", epoch, total / max(seen, 1), top1)

    metrics = evaluate(model, view, partition, eval_transform)
    report = RunReport(
        top1=metrics["top1"],
        top5=metrics["top5"],
        per_set=metrics["per_set"],
        per_class=metrics["per_class"],
        seed=cfg.seed,
        config_hash=cfg.hash(),
        curve=curve,
        wall_time=time.perf_counter() - t_start,
        meta=_report_meta(cfg, view, table, proj, partition),
    )
    result = TrainResult(model, proj, report, view, table)
    if out_dir is not None:
        save_run(result, cfg, out_dir)
    return result


def _step_loss(model, proj, source, cfg: TrainConfig, xa, ya, xb, yb, data_gen, aug_gen) -> torch.Tensor:
    b = cfg.baseline
    mix: MixResult | None = None
    mix_layer = mix_fn = None
    x = xa
    if b.method == "mixup":
        lam = sample_lambda(b.mixup_alpha, data_gen)
        mix = MixResult(lam * xa + (1 - lam) * xb, ya, yb, lam)
        x = mix.mixed
    elif b.method == "cutmix":
        if xa.ndim != 4:
            raise ConfigError("cutmix needs image inputs")
        mix = cutmix(xa, ya, xb, yb, sample_lambda(b.cutmix_alpha, data_gen), data_gen)
        x = mix.mixed
    elif b.method == "manimixup":
        lam = sample_lambda(b.manimixup_alpha, data_gen)
        layer = int(torch.randint(model.num_mix_layers, (1,), generator=data_gen))
        mix = MixResult(None, ya, yb, lam, layer)
        # Both members go through one forward pass; the mix halves the batch at ``layer``.
        x, half, mix_layer = torch.cat([xa, xb]), len(xa), layer
        mix_fn = lambda h: lam * h[:half] + (1 - lam) * h[half:]  # noqa: E731
    elif b.method == "cutout":
        if xa.ndim != 4:
            raise ConfigError("cutout needs image inputs")
        x = torch.stack([cutout(img, b.cutout_size, data_gen, b.cutout_fill) for img in xa])

    device = next(model.parameters()).device
    x, ya, yb = x.to(device), ya.to(device), yb.to(device)
    if mix is not None:
        mix.y_a, mix.y_b = ya, yb
    feats = model.forward_features(x, mix_layer, mix_fn)
    if source is not None:
        # Delta is looked up for the dominant class of a mixed sample.
        delta_labels = ya if mix is None or mix.lam >= 0.5 else yb
        feats, _ = per_batch_augment(feats, delta_labels, source, cfg.augment, proj, aug_gen)
    logits = model.head(feats)
    return mix.loss(logits) if mix is not None else F.cross_entropy(logits, ya)


def _report_meta(cfg: TrainConfig, view: DatasetView, table, proj, partition) -> dict:
    return {
        "version": __version__,
        "config": cfg.to_dict(),
        "dataset": {k: v for k, v in view.manifest.items() if k != "class_names"},
        "partition_sizes": {k: len(v) for k, v in partition.to_dict().items()},
        "augment": cfg.augment.to_dict(),
        "projection": None if proj is None else proj.describe(),
        "table": None if table is None else {"backend_id": table.backend_id, "hash": table.content_hash(),
                                             "combos": len(table.combos)},
        "unpublished_defaults": list(UNPUBLISHED_DEFAULTS),
    }


def save_run(result: TrainResult, cfg: TrainConfig, out_dir) -> None:
    from . import plotting

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.report.save(out)
    torch.save(
        {
            "config": cfg.to_dict(),
            "model": result.model.state_dict(),
            "projection": None if result.projection is None else result.projection.state_dict(),
            "class_names": result.view.class_names,
            "train_counts": result.view.train_counts.tolist(),
        },
        out / "checkpoint.pt",
    )
    plotting.plot_curve(result.report.curve, out / "curve.png")
    plotting.plot_per_set({"run": result.report.per_set}, out / "per_set.png")


def evaluate_checkpoint(path) -> RunReport:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    cfg = config_from_dict(ckpt["config"])
    view = make_view(cfg.data)
    if list(view.class_names) != list(ckpt["class_names"]):
        raise ConfigError("checkpoint classes do not match the rebuilt dataset")
    model = build_model(cfg.model, view.input_shape, view.num_classes)
    model.load_state_dict(ckpt["model"])
    partition = partition_class_sets(ckpt["train_counts"])
    eval_transform = baseline_transform_stack(cfg.baseline.transforms).eval_stack()
    m = evaluate(model, view, partition, eval_transform)
    return RunReport(m["top1"], m["top5"], m["per_set"], m["per_class"], cfg.seed, cfg.hash(),
                     meta={"checkpoint": str(path)})


def linear_probe(features, augment=None, table: DeltaTable | None = None, optim=None, seed: int = 0,
                 out_dir=None) -> TrainResult:
    """Train only a linear head (and projection) on frozen features.

    ``features`` is a path to an ``.npz`` (see :func:`textmania.data.load_features`)
    or an already-built :class:`DatasetView`.
    """
    raw = {"model": {"id": "linear"}, "seed": seed, "optim": optim or {}}
    raw["augment"] = augment or {"variant": "none"}
    if isinstance(features, DatasetView):
        view = features
        raw["data"] = {"base": "features"}
    else:
        view = None
        raw["data"] = {"base": "features", "root": str(features)}
    cfg = config_from_dict(raw)
    v = view if view is not None else make_view(cfg.data)
    if table is not None and cfg.augment.proj_mode is ProjMode.IDENTITY and table.dim != v.input_shape[0]:
        raise ShapeError(f"feature dim {v.input_shape[0]} != table dim {table.dim} under identity projection")
    return train(cfg, out_dir=out_dir, view=v, table=table)
