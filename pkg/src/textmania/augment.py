"""Feature augmentation with projected text difference vectors.

The augmented feature is ``f + alpha * proj(delta)`` where ``delta`` is a row of a
:class:`~textmania.delta_table.DeltaTable` chosen by the sample's class and a
uniformly drawn attribute combo. The label is left untouched.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .delta_table import DeltaTable
from .errors import ConfigError, ShapeError


class Variant(str, enum.Enum):
    NONE = "none"
    TEXTMANIA = "textmania"
    RANDOM_NOISE = "random_noise"
    DIRECT_EMBEDDING = "direct_embedding"
    CONCAT_EMBEDDING = "concat_embedding"


class ProjMode(str, enum.Enum):
    LEARNED_LINEAR = "learned_linear"
    IDENTITY = "identity"


@dataclass
class AlphaDistribution:
    mean: float = 0.0
    std: float = 1.0
    min_clamp: float = 0.1
    max_clamp: float = 2.0

    def __post_init__(self):
        if not self.std > 0:
            raise ConfigError(f"alpha std must be > 0, got {self.std}")
        if self.min_clamp > self.max_clamp:
            raise ConfigError("alpha min_clamp exceeds max_clamp")


@dataclass
class AugmentorConfig:
    variant: Variant = Variant.TEXTMANIA
    alpha: AlphaDistribution = field(default_factory=AlphaDistribution)
    apply_prob: float = 1.0
    combo_sampling: str = "uniform_over_combos"
    proj_mode: ProjMode = ProjMode.LEARNED_LINEAR

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.proj_mode = ProjMode(self.proj_mode)
        if isinstance(self.alpha, dict):
            self.alpha = AlphaDistribution(**self.alpha)
        if not 0.0 <= self.apply_prob <= 1.0:
            raise ConfigError(f"apply_prob must lie in [0, 1], got {self.apply_prob}")
        if self.combo_sampling != "uniform_over_combos":
            raise ConfigError(f"unsupported combo_sampling {self.combo_sampling!r}")

    @property
    def enabled(self) -> bool:
        return self.variant is not Variant.NONE

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["proj_mode"] = self.proj_mode.value
        return d


def sample_alpha(dist: AlphaDistribution, rng: np.random.Generator, size=None):
    z = rng.standard_normal(size)
    return np.clip(np.abs(z * dist.std + dist.mean), dist.min_clamp, dist.max_clamp)


def sample_alpha_torch(dist: AlphaDistribution, n: int, generator: torch.Generator) -> torch.Tensor:
    z = torch.randn(n, generator=generator)
    return (z * dist.std + dist.mean).abs().clamp(dist.min_clamp, dist.max_clamp)


class Projection(nn.Module):
    """Affine map from text space (``in_dim``) to target feature space (``out_dim``).

    ``identity`` mode requires equal dims and owns no parameters.
    """

    def __init__(self, in_dim: int, out_dim: int, mode: ProjMode | str = ProjMode.LEARNED_LINEAR):
        super().__init__()
        self.in_dim, self.out_dim, self.mode = in_dim, out_dim, ProjMode(mode)
        if self.mode is ProjMode.IDENTITY:
            if in_dim != out_dim:
                raise ConfigError(f"identity projection needs equal dims, got {in_dim} -> {out_dim}")
            self.linear = None
        else:
            # nn.Linear default: Kaiming-uniform weight; bias zeroed.
            self.linear = nn.Linear(in_dim, out_dim)
            nn.init.zeros_(self.linear.bias)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        if v.shape[-1] != self.in_dim:
            raise ShapeError(f"projection expects last dim {self.in_dim}, got {tuple(v.shape)}")
        return v if self.linear is None else self.linear(v)

    def describe(self) -> dict:
        return {
            "mode": self.mode.value,
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "init": None if self.linear is None else "kaiming_uniform(a=sqrt(5)) weight, zero bias",
        }


def project(spec: Projection, v) -> torch.Tensor:
    return spec(torch.as_tensor(v))


def augment_feature(f, delta, alpha, spec: Projection) -> torch.Tensor:
    f = torch.as_tensor(f)
    p = project(spec, delta)
    if p.shape[-1] != f.shape[-1]:
        raise ShapeError(f"projected dim {p.shape[-1]} != feature dim {f.shape[-1]}")
    alpha = torch.as_tensor(alpha, dtype=p.dtype)
    if alpha.ndim == 1:
        alpha = alpha.unsqueeze(-1)
    return f + alpha * p


def source_dim(variant: Variant | str, table: DeltaTable) -> int:
    return 2 * table.dim if Variant(variant) is Variant.CONCAT_EMBEDDING else table.dim


def _check_bases(config: AugmentorConfig, table: DeltaTable):
    if config.variant is Variant.DIRECT_EMBEDDING and table.attr_embeddings is None:
        raise ConfigError("direct_embedding needs a table built with stored bases")
    if config.variant is Variant.CONCAT_EMBEDDING and not table.has_bases:
        raise ConfigError("concat_embedding needs a table built with stored bases")


def make_variant_vector(config: AugmentorConfig, table: DeltaTable, class_id: int, combo_id: int, rng) -> np.ndarray:
    """Source vector fed to the projection for one (class, combo) draw."""
    _check_bases(config, table)
    row = table.row_index(class_id, combo_id)
    v = config.variant
    if v is Variant.TEXTMANIA:
        return table.matrix[row]
    if v is Variant.RANDOM_NOISE:
        return rng.standard_normal(table.dim).astype(np.float32)
    if v is Variant.DIRECT_EMBEDDING:
        return table.attr_embeddings[combo_id]
    if v is Variant.CONCAT_EMBEDDING:
        return np.concatenate([table.base_embeddings[class_id], table.variant_embeddings[row]])
    raise ConfigError(f"variant {v.value!r} produces no vector")


class TableSource:
    """Torch-side view of a delta table used inside the training loop."""

    def __init__(self, table: DeltaTable, variant: Variant | str):
        self.variant = Variant(variant)
        self.num_classes, self.num_combos, self.dim = table.num_classes, table.num_combos, table.dim
        if self.variant is not Variant.NONE:
            _check_bases(AugmentorConfig(variant=self.variant), table)
        self.deltas = torch.from_numpy(np.array(table.matrix))
        if self.variant is Variant.DIRECT_EMBEDDING:
            self.attrs = torch.from_numpy(np.array(table.attr_embeddings))
        if self.variant is Variant.CONCAT_EMBEDDING:
            self.bases = torch.from_numpy(np.array(table.base_embeddings))
            self.t1 = torch.from_numpy(np.array(table.variant_embeddings))

    @property
    def out_dim(self) -> int:
        return 2 * self.dim if self.variant is Variant.CONCAT_EMBEDDING else self.dim

    def vectors(self, labels: torch.Tensor, combos: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
        rows = labels * self.num_combos + combos
        if self.variant is Variant.TEXTMANIA:
            return self.deltas[rows]
        if self.variant is Variant.RANDOM_NOISE:
            return torch.randn(len(labels), self.dim, generator=generator)
        if self.variant is Variant.DIRECT_EMBEDDING:
            return self.attrs[combos]
        if self.variant is Variant.CONCAT_EMBEDDING:
            return torch.cat([self.bases[labels], self.t1[rows]], dim=1)
        raise ConfigError("augmentation disabled")


def per_batch_augment(
    features: torch.Tensor,
    labels: torch.Tensor,
    source: TableSource | DeltaTable,
    config: AugmentorConfig,
    spec: Projection,
    generator: torch.Generator,
    alpha: float | None = None,
):
    """Augment each row independently with probability ``config.apply_prob``.

    Returns ``(augmented_features, labels)``; labels are passed through unchanged.
    ``alpha`` overrides sampling with a fixed weight.
    """
    if isinstance(source, DeltaTable):
        source = TableSource(source, config.variant)
    n = features.shape[0]
    if n == 0 or not config.enabled:
        return features, labels
    out_labels = torch.as_tensor(labels)
    labels = torch.as_tensor(labels).cpu()
    if labels.min() < 0 or labels.max() >= source.num_classes:
        raise KeyError(f"labels outside table classes [0, {source.num_classes})")
    # Draws happen unconditionally so the RNG stream does not depend on apply_prob.
    combos = torch.randint(source.num_combos, (n,), generator=generator)
    a = sample_alpha_torch(config.alpha, n, generator)
    gate = torch.rand(n, generator=generator) < config.apply_prob
    vec = source.vectors(labels, combos, generator)
    if alpha is not None:
        a = torch.full((n,), float(alpha))
    a = (a * gate).to(features.device, features.dtype)
    shift = a.unsqueeze(1) * spec(vec.to(features.device, features.dtype))
    return features + shift, out_labels

