import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from textmania.baselines import (
    baseline_transform_stack,
    cutmix,
    cutmix_box,
    cutout,
    manifold_mixup,
    mixup,
    sample_lambda,
)
from textmania.errors import ConfigError, ShapeError

Y1, Y2 = torch.tensor([1]), torch.tensor([2])


def test_mixup_endpoint_and_midpoint():
    x1, x2 = torch.rand(3, 4, 4), torch.rand(3, 4, 4)
    r = mixup(x1, Y1, x2, Y2, 1.0)
    assert torch.equal(r.mixed, x1) and r.lam == 1.0
    r = mixup(torch.zeros(3, 4), Y1, torch.full((3, 4), 2.0), Y2, 0.5)
    assert torch.equal(r.mixed, torch.ones(3, 4))


@settings(max_examples=40, deadline=None)
@given(lam=st.floats(0, 1), seed=st.integers(0, 9999))
def test_mixup_convex(lam, seed):
    g = torch.Generator().manual_seed(seed)
    x1, x2 = torch.randn(2, 5, generator=g, dtype=torch.float64), torch.randn(2, 5, generator=g, dtype=torch.float64)
    r = mixup(x1, Y1, x2, Y2, lam)
    assert torch.allclose(r.mixed, lam * x1 + (1 - lam) * x2)
    lo, hi = torch.minimum(x1, x2), torch.maximum(x1, x2)
    assert (r.mixed >= lo - 1e-12).all() and (r.mixed <= hi + 1e-12).all()


def test_mixup_errors():
    with pytest.raises(ShapeError):
        mixup(torch.zeros(2), Y1, torch.zeros(3), Y2, 0.5)
    with pytest.raises(ConfigError):
        mixup(torch.zeros(2), Y1, torch.zeros(2), Y2, 1.5)


def test_mix_loss_contract():
    logits = torch.randn(4, 3)
    ya, yb = torch.tensor([0, 1, 2, 0]), torch.tensor([1, 1, 0, 2])
    r = mixup(torch.zeros(4), ya, torch.zeros(4), yb, 0.3)
    ce = torch.nn.functional.cross_entropy
    assert torch.allclose(r.loss(logits), 0.3 * ce(logits, ya) + 0.7 * ce(logits, yb))


def test_manifold_mixup():
    h1, h2 = torch.zeros(2, 8), torch.full((2, 8), 2.0)
    r = manifold_mixup(h1, Y1, h2, Y2, 0.5, layer_id=2)
    assert torch.equal(r.mixed, torch.ones(2, 8)) and r.layer_id == 2
    assert torch.equal(manifold_mixup(h1, Y1, h2, Y2, 1.0, 0).mixed, h1)
    with pytest.raises(ShapeError):
        manifold_mixup(torch.zeros(2, 8), Y1, torch.zeros(2, 4), Y2, 0.5, 1)


def test_cutmix_zero_area(gen):
    x1, x2 = torch.rand(3, 32, 32), torch.rand(3, 32, 32)
    r = cutmix(x1, Y1, x2, Y2, 1.0, gen)
    assert torch.equal(r.mixed, x1) and r.lam == 1.0


def test_cutmix_full_box():
    x1, x2 = torch.rand(3, 32, 32), torch.rand(3, 32, 32)
    r = cutmix(x1, Y1, x2, Y2, 0.0, box=(0, 0, 32, 32))
    assert torch.equal(r.mixed, x2) and r.lam == 0.0


def test_cutmix_quarter_box():
    x1, x2 = torch.zeros(3, 32, 32), torch.ones(3, 32, 32)
    r = cutmix(x1, Y1, x2, Y2, 0.5, box=(8, 8, 24, 24))
    assert r.lam == 0.75
    assert int(r.mixed[0].sum()) == 256


@settings(max_examples=50, deadline=None)
@given(lam=st.floats(0.01, 0.99), seed=st.integers(0, 9999), batch=st.booleans())
def test_cutmix_lambda_is_area_ratio(lam, seed, batch):
    g = torch.Generator().manual_seed(seed)
    shape = (2, 3, 32, 32) if batch else (3, 32, 32)
    r = cutmix(torch.zeros(shape), Y1, torch.ones(shape), Y2, lam, g)
    pasted = float(r.mixed[..., 0, :, :].reshape(-1, 32 * 32)[0].sum())
    assert r.lam == 1 - pasted / 1024


def test_cutmix_box_never_degenerate_when_cut_is_nonzero():
    g = torch.Generator().manual_seed(0)
    for lam in np.linspace(0.0, 0.99, 30):
        y0, x0, y1, x1 = cutmix_box(32, 32, float(lam), g)
        assert y1 > y0 and x1 > x0


def test_cutout_cases(gen):
    x = torch.rand(3, 32, 32) + 1.0
    assert torch.equal(cutout(x, 0, gen), x)
    full = cutout(x, 64, gen)
    assert torch.equal(full, torch.zeros_like(x))
    for seed in range(20):
        out = cutout(x, 16, torch.Generator().manual_seed(seed))
        changed = int((out[0] != x[0]).sum())
        assert 0 < changed <= 256


def test_sample_lambda_replayable():
    a = [sample_lambda(1.0, torch.Generator().manual_seed(4)) for _ in range(2)]
    assert a[0] == a[1] and 0 <= a[0] <= 1
    assert sample_lambda(0.0, torch.Generator()) == 1.0


def test_transform_stack(gen):
    assert len(baseline_transform_stack([])) == 0
    x = torch.arange(12, dtype=torch.float32).view(1, 3, 4) .expand(3, 3, 4).clone()
    assert torch.equal(baseline_transform_stack([])(x, gen), x)
    flipped = baseline_transform_stack([{"name": "flip", "p": 1.0}])(x, gen)
    assert torch.equal(flipped, x.flip(-1))
    mean, std = (0.1, 0.2, 0.3), (0.5, 0.25, 2.0)
    norm = baseline_transform_stack([{"name": "normalize", "mean": mean, "std": std}])(x, gen)
    for c in range(3):
        assert torch.allclose(norm[c], (x[c] - mean[c]) / std[c])
    with pytest.raises(ConfigError):
        baseline_transform_stack(["sharpen"])


def test_transform_stack_batch_shapes(gen):
    stack = baseline_transform_stack([{"name": "flip"}, {"name": "crop", "padding": 2},
                                      {"name": "rotate", "degrees": 10}, {"name": "cutout", "size": 4}, "normalize"])
    x = torch.rand(5, 3, 16, 16)
    assert stack(x, gen).shape == x.shape
    assert stack.eval_stack().names == ["normalize"]
