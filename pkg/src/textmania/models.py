"""Classifiers exposing the penultimate feature where augmentation is injected.

Every model implements ``forward_features(x, mix_layer=None, mix_fn=None)`` and a
linear ``head``. ``mix_fn`` is applied to the activation at ``mix_layer``
(0 is the input, 1.. are stage outputs) for manifold mixup.
"""

from __future__ import annotations

import torch
from torch import nn
import torch.nn.functional as F

from .errors import ConfigError


class Classifier(nn.Module):
    feature_dim: int
    num_mix_layers: int = 1

    def forward_features(self, x, mix_layer=None, mix_fn=None):
        raise NotImplementedError

    def forward(self, x):
        return self.head(self.forward_features(x))


class LinearModel(Classifier):
    """Linear head on fixed features (linear probing / synthetic features)."""

    def __init__(self, in_dim: int, num_classes: int):
        super().__init__()
        self.feature_dim = in_dim
        self.head = nn.Linear(in_dim, num_classes)

    def forward_features(self, x, mix_layer=None, mix_fn=None):
        return mix_fn(x) if mix_fn is not None and mix_layer == 0 else x


class BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.short = nn.Sequential()
        if stride != 1 or cin != cout:
            self.short = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.short(x))


class ResNet(Classifier):
    """CIFAR-style ResNet (3x3 stem). ``blocks=(2,2,2,2), width=64`` is ResNet-18."""

    def __init__(self, num_classes: int, in_channels: int = 3, blocks=(2, 2, 2, 2), width: int = 64):
        super().__init__()
        self.stem = nn.Sequential(nn.Conv2d(in_channels, width, 3, 1, 1, bias=False), nn.BatchNorm2d(width), nn.ReLU())
        stages, cin = [], width
        for i, n in enumerate(blocks):
            cout = width * 2**i
            layers = [BasicBlock(cin, cout, 1 if i == 0 else 2)]
            layers += [BasicBlock(cout, cout, 1) for _ in range(n - 1)]
            stages.append(nn.Sequential(*layers))
            cin = cout
        self.stages = nn.ModuleList(stages)
        self.feature_dim = cin
        self.num_mix_layers = len(stages) + 1
        self.head = nn.Linear(cin, num_classes)

    def forward_features(self, x, mix_layer=None, mix_fn=None):
        if mix_fn is not None and mix_layer == 0:
            x = mix_fn(x)
        x = self.stem(x)
        for i, stage in enumerate(self.stages, start=1):
            x = stage(x)
            if mix_fn is not None and mix_layer == i:
                x = mix_fn(x)
        return torch.flatten(F.adaptive_avg_pool2d(x, 1), 1)


class TinyViT(Classifier):
    """Patch embedding + a few pre-norm transformer blocks + mean-pooled tokens."""

    def __init__(self, num_classes, in_channels=3, image_size=32, patch=4, dim=128, depth=4, heads=4):
        super().__init__()
        if image_size % patch:
            raise ConfigError("image size must be divisible by patch size")
        n = (image_size // patch) ** 2
        self.embed = nn.Conv2d(in_channels, dim, patch, patch)
        self.pos = nn.Parameter(torch.zeros(1, n, dim))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.blocks = nn.ModuleList(
            nn.TransformerEncoderLayer(dim, heads, 2 * dim, dropout=0.0, batch_first=True, norm_first=True)
            for _ in range(depth)
        )
        self.norm = nn.LayerNorm(dim)
        self.feature_dim = dim
        self.num_mix_layers = depth + 1
        self.head = nn.Linear(dim, num_classes)

    def forward_features(self, x, mix_layer=None, mix_fn=None):
        if mix_fn is not None and mix_layer == 0:
            x = mix_fn(x)
        x = self.embed(x).flatten(2).transpose(1, 2) + self.pos
        for i, blk in enumerate(self.blocks, start=1):
            x = blk(x)
            if mix_fn is not None and mix_layer == i:
                x = mix_fn(x)
        return self.norm(x).mean(1)


def build_model(model_cfg: dict, input_shape, num_classes: int) -> Classifier:
    cfg = dict(model_cfg)
    model_id = cfg.pop("id", "linear")
    if model_id == "linear":
        if len(input_shape) != 1:
            raise ConfigError(f"linear model needs flat features, got input shape {input_shape}")
        return LinearModel(input_shape[0], num_classes)
    if len(input_shape) != 3:
        raise ConfigError(f"{model_id} needs (C,H,W) inputs, got {input_shape}")
    if model_id == "resnet":
        return ResNet(num_classes, in_channels=input_shape[0], **cfg)
    if model_id == "vit":
        return TinyViT(num_classes, in_channels=input_shape[0], image_size=input_shape[-1], **cfg)
    raise ConfigError(f"unknown model id {model_id!r}")
