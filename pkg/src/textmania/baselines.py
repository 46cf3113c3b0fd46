"""Mix-based and photometric/geometric baseline augmentations.

All functions take explicit RNGs (``torch.Generator``) and leave labels alone;
mix-based ones return a :class:`MixResult` whose loss is
``lam * CE(y_a) + (1 - lam) * CE(y_b)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, ShapeError

DEFAULT_BETA = {"mixup": 1.0, "cutmix": 1.0, "manimixup": 2.0}


@dataclass
class MixResult:
    mixed: torch.Tensor
    y_a: torch.Tensor
    y_b: torch.Tensor
    lam: float
    layer_id: int | None = None

    def loss(self, logits: torch.Tensor) -> torch.Tensor:
        return self.lam * F.cross_entropy(logits, self.y_a) + (1.0 - self.lam) * F.cross_entropy(logits, self.y_b)


def _check_pair(x1, x2):
    if x1.shape != x2.shape:
        raise ShapeError(f"cannot mix shapes {tuple(x1.shape)} and {tuple(x2.shape)}")


def sample_lambda(alpha: float, generator: torch.Generator) -> float:
    if alpha <= 0:
        return 1.0
    # Seeded from the torch stream so the whole step replays from one generator.
    seed = int(torch.randint(2**62, (1,), generator=generator))
    return float(np.random.default_rng(seed).beta(alpha, alpha))


def mixup(x1, y1, x2, y2, lam: float) -> MixResult:
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    _check_pair(x1, x2)
    return MixResult(lam * x1 + (1.0 - lam) * x2, y1, y2, float(lam))


def manifold_mixup(h1, y1, h2, y2, lam: float, layer_id: int) -> MixResult:
    """Mixup on hidden activations taken at ``layer_id`` for both members."""
    res = mixup(h1, y1, h2, y2, lam)
    res.layer_id = layer_id
    return res


def cutmix_box(height: int, width: int, lam: float, generator: torch.Generator, max_tries: int = 10):
    """Box ``(y0, x0, y1, x1)`` with area about ``(1 - lam) * H * W``, clipped to the image."""
    ratio = math.sqrt(max(0.0, 1.0 - lam))
    ch, cw = int(height * ratio), int(width * ratio)
    if ch == 0 or cw == 0:
        return 0, 0, 0, 0
    for _ in range(max_tries):
        cy = int(torch.randint(height, (1,), generator=generator))
        cx = int(torch.randint(width, (1,), generator=generator))
        y0, y1 = max(cy - ch // 2, 0), min(cy + (ch - ch // 2), height)
        x0, x1 = max(cx - cw // 2, 0), min(cx + (cw - cw // 2), width)
        if y1 > y0 and x1 > x0:
            return y0, x0, y1, x1
    return 0, 0, ch, cw


def cutmix(x1, y1, x2, y2, lam: float, generator: torch.Generator | None = None, box=None) -> MixResult:
    """Paste a rectangle of ``x2`` into ``x1``; lambda is re-set to the kept-area ratio.

    Works on single images ``(C, H, W)`` or batches ``(N, C, H, W)`` (one box per batch).
    """
    _check_pair(x1, x2)
    if x1.ndim not in (3, 4):
        raise ShapeError("cutmix expects (C,H,W) or (N,C,H,W) images")
    H, W = x1.shape[-2:]
    if box is None:
        if not 0.0 <= lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
        box = cutmix_box(H, W, lam, generator if generator is not None else torch.Generator())
    y0, x0, y1_, x1_ = box
    mixed = x1.clone()
    mixed[..., y0:y1_, x0:x1_] = x2[..., y0:y1_, x0:x1_]
    area = max(0, y1_ - y0) * max(0, x1_ - x0)
    return MixResult(mixed, y1, y2, 1.0 - area / float(H * W))


def cutout(x: torch.Tensor, mask_size: int, generator: torch.Generator, fill: float = 0.0) -> torch.Tensor:
    """Fill one square (centre uniform over the image, clipped at borders)."""
    if mask_size <= 0:
        return x.clone()
    H, W = x.shape[-2:]
    cy = int(torch.randint(H, (1,), generator=generator))
    cx = int(torch.randint(W, (1,), generator=generator))
    half = mask_size // 2
    y0, y1 = max(cy - half, 0), min(cy - half + mask_size, H)
    x0, x1 = max(cx - half, 0), min(cx - half + mask_size, W)
    out = x.clone()
    out[..., y0:y1, x0:x1] = fill
    return out


# Transform stack -------------------------------------------------------------
# Each primitive maps a batch (N, C, H, W) to a batch using the given generator.


def _flip(p: float = 0.5):
    def fn(x, g):
        mask = torch.rand(x.shape[0], generator=g) < p
        out = x.clone()
        out[mask] = out[mask].flip(-1)
        return out

    return fn


def _crop(padding: int = 4):
    def fn(x, g):
        n, _, H, W = x.shape
        padded = F.pad(x, (padding,) * 4)
        oy = torch.randint(2 * padding + 1, (n,), generator=g)
        ox = torch.randint(2 * padding + 1, (n,), generator=g)
        return torch.stack([padded[i, :, oy[i] : oy[i] + H, ox[i] : ox[i] + W] for i in range(n)])

    return fn


def _rotate(degrees: float = 15.0):
    def fn(x, g):
        n = x.shape[0]
        theta = (torch.rand(n, generator=g) * 2 - 1) * math.radians(degrees)
        c, s = torch.cos(theta), torch.sin(theta)
        mat = torch.zeros(n, 2, 3, dtype=x.dtype)
        mat[:, 0, 0], mat[:, 0, 1], mat[:, 1, 0], mat[:, 1, 1] = c, -s, s, c
        grid = F.affine_grid(mat, list(x.shape), align_corners=False)
        return F.grid_sample(x, grid, align_corners=False, padding_mode="zeros")

    return fn


def _normalize(mean=(0.5071, 0.4865, 0.4409), std=(0.2673, 0.2564, 0.2762)):
    m = torch.tensor(mean).view(1, -1, 1, 1)
    s = torch.tensor(std).view(1, -1, 1, 1)

    def fn(x, g):
        return (x - m.to(x.dtype)) / s.to(x.dtype)

    return fn


def _cutout(size: int = 16, fill: float = 0.0):
    def fn(x, g):
        return torch.stack([cutout(img, size, g, fill) for img in x]) if len(x) else x

    return fn


PRIMITIVES: dict[str, Callable] = {
    "flip": _flip,
    "crop": _crop,
    "rotate": _rotate,
    "normalize": _normalize,
    "cutout": _cutout,
}
CIFAR_STACK = [
    {"name": "flip"},
    {"name": "crop", "padding": 4},
    {"name": "rotate", "degrees": 15},
    {"name": "normalize"},
]
# Deterministic steps that must also run at evaluation time.
EVAL_STEPS = {"normalize"}


class TransformStack:
    def __init__(self, steps):
        self.steps = steps

    def __call__(self, x: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
        single = x.ndim == 3
        if single:
            x = x.unsqueeze(0)
        for _, fn in self.steps:
            x = fn(x, generator)
        return x[0] if single else x

    def __len__(self):
        return len(self.steps)

    def eval_stack(self) -> "TransformStack":
        return TransformStack([(n, fn) for n, fn in self.steps if n in EVAL_STEPS])

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.steps]


def baseline_transform_stack(config=None) -> TransformStack:
    """Compose primitives from ``[{"name": ..., **params}, ...]`` (or bare names)."""
    steps = []
    for item in config or []:
        if isinstance(item, str):
            item = {"name": item}
        params = dict(item)
        name = params.pop("name", None)
        if name not in PRIMITIVES:
            raise ConfigError(f"unknown transform {name!r}; known: {sorted(PRIMITIVES)}")
        steps.append((name, PRIMITIVES[name](**params)))
    return TransformStack(steps)
