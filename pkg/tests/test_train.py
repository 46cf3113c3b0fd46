import json

import numpy as np
import pytest
import torch

from textmania.config import config_from_dict, toy_preset
from textmania.data import DataConfig, make_view, partition_class_sets, save_features, synthetic_gaussian
from textmania.delta_table import build_table
from textmania.encoders import ToyHashBackend
from textmania.errors import ConfigError
from textmania.models import build_model
from textmania.prompts import AttributeVocabulary, enumerate_variants, get_template
from textmania.train import accuracy_report, evaluate, evaluate_checkpoint, linear_probe, train


def _toy(seed=0, variant="textmania", **optim):
    cfg = toy_preset(seed, variant)
    cfg["optim"].update(optim)
    return cfg


def test_zero_epochs_is_initial_model():
    cfg = config_from_dict(_toy(epochs=0))
    res = train(cfg)
    view = make_view(cfg.data)
    torch.manual_seed(cfg.seed)
    fresh = build_model(cfg.model, view.input_shape, view.num_classes)
    assert torch.equal(fresh.head.weight, res.model.head.weight)
    m = evaluate(fresh, view)
    assert res.report.top1 == m["top1"] and res.report.per_set == m["per_set"]
    assert res.report.curve == []


def test_loss_decreases_monotonically_at_small_lr():
    cfg = _toy(epochs=1, lr=0.01, batch_size=1000, schedule="constant", eval_every=0)
    cfg["optim"]["epochs"] = 10
    view = make_view(config_from_dict(cfg).data)
    losses = []

    def record(step, loss, model, proj):
        with torch.no_grad():
            losses.append(float(torch.nn.functional.cross_entropy(model(view.train.x), view.train.y)))

    train(cfg, view=view, step_callback=record)
    assert len(losses) == 10
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_same_seed_same_report():
    a = train(_toy(seed=3, epochs=5)).report
    b = train(_toy(seed=3, epochs=5)).report
    assert a.comparable() == b.comparable()
    c = train(_toy(seed=4, epochs=5)).report
    assert c.comparable() != a.comparable()


def test_augmentation_is_strictly_additive():
    vanilla = train(_toy(variant="none", epochs=5)).report
    cfg = _toy(epochs=5)
    cfg["augment"]["apply_prob"] = 0.0
    gated = train(cfg).report
    assert gated.per_class == vanilla.per_class
    assert [r["train_loss"] for r in gated.curve] == [r["train_loss"] for r in vanilla.curve]


def test_class_mismatch_fails_before_training():
    cfg = _toy(epochs=3)
    table = build_table(ToyHashBackend(), enumerate_variants(["x", "y", "z"], AttributeVocabulary(("red",), ()),
                                                             get_template("photo")))
    steps = []
    with pytest.raises(ConfigError):
        train(cfg, table=table, step_callback=lambda *a: steps.append(a))
    assert steps == []


def test_report_invariants():
    r = train(_toy(epochs=5)).report
    assert r.top1 <= r.top5
    assert all(v is None or 0 <= v <= 100 for v in r.per_set.values())
    counts = np.array([300, 300, 300])
    overall = sum(c * a for c, a in zip(counts, r.per_class)) / counts.sum()
    assert abs(overall - r.top1) < 1e-9
    assert r.meta["unpublished_defaults"] and r.meta["augment"]["alpha"]["min_clamp"] == 0.1


def test_eval_perfect_and_constant_predictors():
    k = 10
    y = torch.arange(k).repeat(20)
    part = partition_class_sets([150] * 3 + [50] * 3 + [5] * 4)
    perfect = accuracy_report(torch.nn.functional.one_hot(y, k).float(), y, part, k)
    assert perfect["top1"] == perfect["top5"] == 100.0
    assert all(v == 100.0 for v in perfect["per_set"].values())
    const = torch.zeros(len(y), k)
    const[:, 0] = 1.0
    assert accuracy_report(const, y, part, k)["top1"] == pytest.approx(100.0 / k)


def test_eval_uniform_random_predictor():
    k, n = 100, 100_000
    g = torch.Generator().manual_seed(0)
    y = torch.randint(k, (n,), generator=g)
    r = accuracy_report(torch.rand(n, k, generator=g), y, partition_class_sets([500] * k), k)
    # Binomial SE: 0.03 (top-1) and 0.07 (top-5) points.
    assert abs(r["top1"] - 1.0) < 0.2 and abs(r["top5"] - 5.0) < 0.35


def test_eval_per_set_recombines_and_empty_set_absent():
    k = 4
    g = torch.Generator().manual_seed(1)
    y = torch.tensor([0] * 30 + [1] * 10 + [2] * 20 + [3] * 40)
    logits = torch.randn(len(y), k, generator=g)
    part = partition_class_sets([200, 200, 50, 50])
    r = accuracy_report(logits, y, part, k)
    assert r["per_set"]["few"] is None
    w = {"many": 40, "medium": 60}
    overall = sum(w[s] * r["per_set"][s] for s in w) / 100
    assert abs(overall - r["top1"]) < 1e-9


def test_linear_probe_zero_steps_and_constant_features(tmp_path):
    x = np.zeros((30, 8), np.float32)
    y = np.array([0] * 20 + [1] * 7 + [2] * 3)
    save_features(tmp_path / "f.npz", x, y, x, y, ["a", "b", "c"])
    res = linear_probe(tmp_path / "f.npz", optim={"epochs": 0})
    torch.manual_seed(0)
    assert torch.equal(res.model.head.weight, build_model({"id": "linear"}, (8,), 3).head.weight)
    res = linear_probe(tmp_path / "f.npz", optim={"epochs": 50, "lr": 0.5, "weight_decay": 0.0})
    assert res.report.top1 == pytest.approx(100 * 20 / 30)


def test_linear_probe_with_textmania_beats_plain_probe(tmp_path):
    vocab = AttributeVocabulary(("red", "green", "blue", "yellow"), ("small", "big"), "single_only")
    wins = 0
    for seed in range(5):
        names, tr, ev = synthetic_gaussian(counts=(100, 20, 5), class_names=["apple", "bus", "cat"], seed=seed)
        path = tmp_path / f"f{seed}.npz"
        save_features(path, tr.x.numpy(), tr.y.numpy(), ev.x.numpy(), ev.y.numpy(), names)
        table = build_table(ToyHashBackend(), enumerate_variants(names, vocab, get_template("photo")))
        optim = {"epochs": 60, "batch_size": 32, "lr": 0.05, "weight_decay": 0.0}
        base = linear_probe(path, optim=optim, seed=seed).report
        aug = linear_probe(path, augment={"variant": "textmania", "proj": {"mode": "identity"}}, table=table,
                           optim=optim, seed=seed).report
        wins += aug.top1 >= base.top1
    assert wins == 5


def test_linear_probe_dim_mismatch(tmp_path, toy_table):
    x = np.zeros((6, 8), np.float32)
    y = np.array([0, 1, 2] * 2)
    save_features(tmp_path / "f.npz", x, y, x, y, list(toy_table.class_names))
    from textmania.errors import ShapeError

    with pytest.raises(ShapeError):
        linear_probe(tmp_path / "f.npz", augment={"variant": "textmania", "proj": {"mode": "identity"}},
                     table=toy_table)


IMAGE_DATA = {"base": "synthetic-images", "synthetic": {"num_classes": 3, "per_class": 12, "eval_per_class": 4,
                                                         "size": 8}}


@pytest.mark.parametrize("model", [{"id": "resnet", "blocks": [1, 1], "width": 8},
                                   {"id": "vit", "patch": 4, "dim": 16, "depth": 1, "heads": 2}])
@pytest.mark.parametrize("method", ["none", "mixup", "cutmix", "manimixup", "cutout"])
def test_image_models_with_mix_baselines(model, method):
    cfg = {
        "model": model,
        "data": IMAGE_DATA,
        "table": {"colors": ["red", "blue"], "sizes": ["big"]},
        "augment": {"variant": "textmania", "combine_with": method},
        "baseline": {"transforms": "cifar", "cutout": {"size": 4}},
        "optim": {"epochs": 1, "batch_size": 8, "lr": 0.01},
    }
    r = train(cfg).report
    assert np.isfinite(r.curve[0]["train_loss"])
    assert r.meta["projection"]["mode"] == "learned_linear"


@pytest.mark.parametrize("variant", ["random_noise", "direct_embedding", "concat_embedding"])
def test_ablation_variants_train(variant):
    cfg = _toy(variant=variant, epochs=2)
    if variant == "concat_embedding":
        cfg["augment"]["proj"]["mode"] = "learned_linear"
    r = train(cfg).report
    assert r.meta["augment"]["variant"] == variant
    if variant == "concat_embedding":
        assert r.meta["projection"] is not None


def test_concat_needs_learned_projection_dims():
    cfg = _toy(variant="concat_embedding", epochs=1)
    with pytest.raises(ConfigError):
        cfg["augment"]["proj"]["mode"] = "identity"
        train(cfg)


def test_class_balanced_pair_sampling_runs():
    cfg = _toy(epochs=2)
    cfg["baseline"] = {"pair_sampling": "class_balanced"}
    cfg["augment"]["combine_with"] = "mixup"
    assert np.isfinite(train(cfg).report.top1)


def test_checkpoint_round_trip(tmp_path):
    res = train(_toy(epochs=3), out_dir=tmp_path)
    for f in ("report.json", "curve.csv", "checkpoint.pt", "curve.png", "per_set.png"):
        assert (tmp_path / f).exists()
    again = evaluate_checkpoint(tmp_path / "checkpoint.pt")
    assert again.top1 == res.report.top1 and again.per_class == res.report.per_class
    saved = json.loads((tmp_path / "report.json").read_text())
    assert saved["config_hash"] == res.report.config_hash
    lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,top1" and len(lines) == 4


def test_config_errors():
    with pytest.raises(ConfigError):
        config_from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"augment": {"combine_with": "mixup"}, "baseline": {"method": "cutmix"}})
    with pytest.raises(ConfigError):
        config_from_dict({"augment": {"apply_prob": 2.0}})
    with pytest.raises(ConfigError):
        config_from_dict({"baseline": {"method": "autoaugment"}})
