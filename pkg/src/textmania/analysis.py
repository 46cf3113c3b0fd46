"""Embedding analyses over delta tables: clustering statistics, direct-vs-difference
cosine, and t-SNE coordinates."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .delta_table import DeltaTable
from .encoders import EncoderBackend, embed_text
from .errors import ConfigError, DataError


def cifar100_class_names() -> list[str]:
    text = resources.files("textmania").joinpath("resources/cifar100_classes.txt").read_text()
    return [line for line in text.splitlines() if line]


@dataclass
class ClusterReport:
    within_mean: float | None
    within_std: float | None
    across_mean: float | None
    across_std: float | None
    per_attribute: dict
    backend_id: str
    table_hash: str
    n_rows: int
    groups: int
    projected: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _unit_rows(v: np.ndarray):
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=1)
    ok = norms > 0
    out = np.zeros_like(v)
    out[ok] = v[ok] / norms[ok, None]
    return out, ok


def _stats(x):
    return (float(np.mean(x)), float(np.std(x))) if len(x) else (None, None)


def table_rows(table: DeltaTable, projection=None, combos: Sequence[Sequence[str]] | None = None):
    """Δ rows (optionally projected) and their combo labels, restricted to ``combos``."""
    keep = None if combos is None else {tuple(c) for c in combos}
    idx = [j for j, c in enumerate(table.combos) if keep is None or c in keep]
    rows = [ci * table.num_combos + j for ci in range(table.num_classes) for j in idx]
    labels = ["+".join(table.combos[j]) for _ in range(table.num_classes) for j in idx]
    v = np.asarray(table.matrix[rows], dtype=np.float64)
    if projection is not None:
        with torch.no_grad():
            v = projection(torch.as_tensor(v, dtype=torch.float32)).double().numpy()
    return v, labels


def cluster_score(table: DeltaTable, projection=None, combos=None) -> ClusterReport:
    """Mean/std of pairwise cosine for rows sharing an attribute combo vs. different combos.

    Zero rows have no direction and are left out of every pair.
    """
    v, labels = table_rows(table, projection, combos)
    if table.num_classes < 2 and len(set(labels)) < 2:
        raise ConfigError("need at least two classes or two attributes")
    u, ok = _unit_rows(v)
    labels = np.asarray(labels)[ok]
    u = u[ok]
    cos = np.clip(u @ u.T, -1.0, 1.0)
    iu = np.triu_indices(len(u), k=1)
    same = labels[iu[0]] == labels[iu[1]]
    pair_cos = cos[iu]
    within = pair_cos[same]
    across = pair_cos[~same]
    per_attr = {}
    for g in dict.fromkeys(labels.tolist()):
        m = (labels[iu[0]] == g) & same
        per_attr[g] = _stats(pair_cos[m])[0]
    wm, ws = _stats(within)
    am, as_ = _stats(across)
    return ClusterReport(wm, ws, am, as_, per_attr, table.backend_id, table.content_hash(), int(len(u)),
                         int(len(set(labels.tolist()))), projection is not None)


def direct_vs_delta_cosine(table: DeltaTable, backend: EncoderBackend | None = None):
    """cos(embed(attribute words), Δ(class, combo)) for every table row.

    Uses the table's stored attribute embeddings when present, else ``backend``.
    Returns ``(records, summary)``; rows with a zero Δ get ``cosine=None``.
    """
    if table.attr_embeddings is not None:
        direct = np.asarray(table.attr_embeddings, dtype=np.float64)
    elif backend is not None:
        direct = np.stack([embed_text(backend, " ".join(c)).vector for c in table.combos]).astype(np.float64)
    else:
        raise ConfigError("table has no stored attribute embeddings and no backend was given")
    records = []
    for ci, cname in enumerate(table.class_names):
        for j, combo in enumerate(table.combos):
            d = np.asarray(table.matrix[ci * table.num_combos + j], dtype=np.float64)
            a = direct[j]
            nd, na = np.linalg.norm(d), np.linalg.norm(a)
            cosv = None if nd == 0 or na == 0 else float(np.clip(d @ a / (nd * na), -1, 1))
            records.append({"class": cname, "combo": "+".join(combo), "cosine": cosv})
    vals = np.array([r["cosine"] for r in records if r["cosine"] is not None])
    summary = {
        "backend_id": table.backend_id,
        "table_hash": table.content_hash(),
        "n": int(len(vals)),
        "n_absent": int(sum(r["cosine"] is None for r in records)),
        "mean": float(vals.mean()) if len(vals) else None,
        "std": float(vals.std()) if len(vals) else None,
        "min": float(vals.min()) if len(vals) else None,
        "max": float(vals.max()) if len(vals) else None,
    }
    return records, summary


def write_cosine_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["class", "combo", "cosine"])
        w.writeheader()
        for r in records:
            w.writerow({**r, "cosine": "" if r["cosine"] is None else f"{r['cosine']:.6f}"})


def tsne_emit(vectors, group_labels, perplexity: float = 30.0, seed: int = 0, out_csv=None, png=None,
              title=None) -> np.ndarray:
    """2-D t-SNE coordinates (deterministic in ``seed``), optionally written as CSV/PNG."""
    from sklearn.manifold import TSNE

    x = np.asarray(vectors, dtype=np.float64)
    if len(x) != len(group_labels):
        raise DataError("vectors and labels differ in length")
    if len(x) < 3 * perplexity:
        raise DataError(f"t-SNE with perplexity {perplexity} needs at least {int(3 * perplexity)} points, got {len(x)}")
    coords = TSNE(n_components=2, perplexity=perplexity, random_state=seed, init="pca").fit_transform(x)
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "group"])
            for (cx, cy), g in zip(coords, group_labels):
                w.writerow([f"{cx:.6f}", f"{cy:.6f}", g])
    if png is not None:
        from .plotting import plot_tsne

        plot_tsne(coords, group_labels, png, title=title)
    return coords
