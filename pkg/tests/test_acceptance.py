"""Acceptance criteria. Each test records one PASS/FAIL/BLOCKED line in the terminal summary."""

import subprocess
import sys
import time
from pathlib import Path

import pytest
from scipy.stats import binomtest

from desk import cifar_blocker, backend_blocker, mean, pretrained_cluster_reports
from textmania.cli import ABLATION_GRID, run_ablation
from textmania.config import PRESETS, toy_preset
from textmania.train import train

pytestmark = pytest.mark.acceptance

HERE = Path(__file__).parent
SEEDS = range(5)

PROPERTY_TESTS = [
    "test_augment.py::test_augment_feature_zero_cases",
    "test_augment.py::test_alpha_within_clamp",
    "test_augment.py::test_batch_labels_preserved_and_replayable",
    "test_delta_table.py::test_round_trip",
    "test_delta_table.py::test_antisymmetry",
    "test_delta_table.py::test_toy_rows_equal_attribute_vectors",
    "test_data.py::test_longtail_properties",
    "test_data.py::test_longtail_matches_formula",
    "test_data.py::test_partition_examples",
    "test_baselines.py::test_mixup_convex",
    "test_baselines.py::test_cutmix_lambda_is_area_ratio",
    "test_augment.py::test_projection_gradient_matches_finite_differences",
]


def test_c1_property_suite(criterion):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           *(str(HERE / t) for t in PROPERTY_TESTS)], capture_output=True, text=True)
    elapsed = time.perf_counter() - t0
    ok = proc.returncode == 0 and elapsed < 120
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    criterion("C1 property suite", ok, f"{tail} in {elapsed:.1f}s (limit 120s)")
    assert ok, proc.stdout[-3000:]


@pytest.fixture(scope="module")
def toy_runs():
    runs = {}
    t0 = time.perf_counter()
    for variant in ("none", "textmania", "random_noise"):
        runs[variant] = [train(toy_preset(seed, variant)).report for seed in SEEDS]
    runs["elapsed"] = time.perf_counter() - t0
    return runs


def test_c2_synthetic_oracle(toy_runs, criterion):
    base = [r.per_set["few"] for r in toy_runs["none"]]
    tm = [r.per_set["few"] for r in toy_runs["textmania"]]
    wins = sum(t > b for t, b in zip(tm, base))
    p = binomtest(wins, len(base), 0.5, alternative="greater").pvalue
    gain = mean(tm) - mean(base)
    ok = gain > 0 and p < 0.05 and toy_runs["elapsed"] < 300
    criterion("C2 synthetic end-to-end", ok,
              f"Few {mean(base):.2f} -> {mean(tm):.2f} (gain {gain:+.2f}), wins {wins}/{len(base)}, "
              f"sign-test p={p:.4f}, {toy_runs['elapsed']:.0f}s for all toy runs")
    assert ok


def test_c7_random_noise_comparison(toy_runs, criterion):
    tm = [r.per_set["few"] for r in toy_runs["textmania"]]
    rnd = [r.per_set["few"] for r in toy_runs["random_noise"]]
    wins = sum(t >= r for t, r in zip(tm, rnd))
    ok = wins >= 4
    criterion("C7 random-noise baseline", ok,
              f"Few textmania {mean(tm):.2f} vs random_noise {mean(rnd):.2f}, textmania >= random in {wins}/5 seeds")
    assert ok


def test_c5_ablation_grid_structure(tmp_path, criterion):
    reports = run_ablation(lambda seed: toy_preset(seed), [0], tmp_path)
    rows = (tmp_path / "ablation.csv").read_text().splitlines()
    ok = list(reports) == list(ABLATION_GRID) and all(len(v) == 1 for v in reports.values()) and len(rows) == 5
    ok = ok and (tmp_path / "ablation.png").stat().st_size > 0
    criterion("C5 ablation grid structure", ok, f"rows {list(reports)}, ablation.csv has {len(rows) - 1} runs")
    assert ok


def _blocked(criterion, name, reason):
    criterion(name, None, reason)
    pytest.skip(reason)


@pytest.mark.integration
def test_c5_ablation_desk_ordering(tmp_path, criterion):
    name = "C5 ablation ordering (desk)"
    reason = cifar_blocker()
    if reason:
        _blocked(criterion, name, reason)
    reports = run_ablation(lambda seed: PRESETS["cifar100-lt"](seed=seed), [0, 1, 2], tmp_path)
    top = {k: [r.top1 for r in v] for k, v in reports.items()}
    wins = sum(b >= c and b >= s for b, c, s in zip(top["both"], top["color"], top["size"]))
    ok = wins >= 2
    criterion(name, ok, f"both >= each single in {wins}/3 seeds; means "
              + ", ".join(f"{k} {mean(v):.2f}" for k, v in top.items()))
    assert ok


@pytest.mark.integration
def test_c3_cifar100_lt(criterion):
    name = "C3 CIFAR-100-LT IF=100 (desk)"
    reason = cifar_blocker()
    if reason:
        _blocked(criterion, name, reason)
    base = [train(PRESETS["cifar100-lt"](seed=s, variant="none")).report for s in range(3)]
    tm = [train(PRESETS["cifar100-lt"](seed=s)).report for s in range(3)]
    gain = mean([r.top1 for r in tm]) - mean([r.top1 for r in base])
    few = mean([r.per_set["few"] for r in tm]) - mean([r.per_set["few"] for r in base])
    many = mean([r.per_set["many"] for r in tm]) - mean([r.per_set["many"] for r in base])
    ok = gain >= 1.0 and few > many
    criterion(name, ok, f"top1 gain {gain:+.2f} (need >= +1.00), Few change {few:+.2f} vs Many change {many:+.2f}")
    assert ok


@pytest.mark.integration
def test_c4_scarce_trend(criterion):
    name = "C4 CIFAR-100-10% trend (desk)"
    reason = cifar_blocker()
    if reason:
        _blocked(criterion, name, reason)
    preset = PRESETS["cifar100-10"]
    top = {
        "baseline": [train(preset(seed=s, variant="none")).report.top1 for s in range(3)],
        "textmania": [train(preset(seed=s)).report.top1 for s in range(3)],
        "mixup": [train(preset(seed=s, variant="none", method="mixup")).report.top1 for s in range(3)],
        "mixup+textmania": [train(preset(seed=s, method="mixup")).report.top1 for s in range(3)],
    }
    combo_wins = sum(c >= max(m, t) for c, m, t in zip(top["mixup+textmania"], top["mixup"], top["textmania"]))
    ok = mean(top["textmania"]) > mean(top["baseline"]) and combo_wins >= 2
    criterion(name, ok, ", ".join(f"{k} {mean(v):.2f}" for k, v in top.items())
              + f"; combination >= both components in {combo_wins}/3 seeds")
    assert ok


@pytest.mark.integration
def test_c6_pretrained_cluster(criterion):
    name = "C6 cluster statistic (pretrained)"
    reason = backend_blocker()
    if reason:
        _blocked(criterion, name, reason)
    reps = pretrained_cluster_reports()
    ok = all(r.within_mean > r.across_mean for r in reps.values())
    criterion(name, ok, "; ".join(f"{g}: within {r.within_mean:.4f} vs across {r.across_mean:.4f}"
                                  for g, r in reps.items()))
    assert ok
