"""Command line entry point: ``textmania <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .errors import TextManiaError

log = logging.getLogger("textmania")


def _parse_value(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


# build-table -----------------------------------------------------------------


def cmd_build_table(args) -> int:
    from .analysis import cifar100_class_names
    from .delta_table import build_table, save_table
    from .encoders import get_backend, list_backends
    from .prompts import AttributeVocabulary, enumerate_variants, get_template, read_class_list, write_variants

    if args.list_backends:
        print("\n".join(list_backends()))
        return 0
    if not args.classes or not args.out:
        raise TextManiaError("--classes and --out are required")
    classes = cifar100_class_names() if args.classes == "cifar100" else read_class_list(args.classes)
    vocab = AttributeVocabulary(
        tuple(args.colors),
        tuple(args.sizes),
        args.policy,
    )
    variants = enumerate_variants(classes, vocab, get_template(args.template))
    table = build_table(get_backend(args.backend), variants, store_bases=args.store_bases, build_seed=args.seed)
    save_table(table, args.out)
    if args.variants_out:
        write_variants(variants, args.variants_out)
    print(json.dumps({"out": str(args.out), "rows": int(table.matrix.shape[0]), "dim": table.dim,
                      "backend_id": table.backend_id, "hash": table.content_hash()}))
    return 0


# make-dataset ----------------------------------------------------------------


def cmd_make_dataset(args) -> int:
    from .data import DataConfig, make_view, write_view

    cfg = DataConfig(
        base=args.base,
        root=args.root,
        download=args.download,
        longtail_if=args.longtail_if,
        scarce_per_class=args.scarce_per_class,
        scarce_fraction=args.scarce_fraction,
        seed=args.seed,
    )
    view = make_view(cfg)
    path = write_view(view, args.out)
    print(json.dumps({"manifest": str(path), "num_train": view.manifest["num_train"],
                      "indices_sha256": view.manifest["indices_sha256"]}))
    return 0


# train / eval / probe ----------------------------------------------------------


def _load_train_config(args):
    from .config import PRESETS, config_from_dict

    if args.config:
        text = Path(args.config).read_text()
        raw = json.loads(text) if args.config.endswith(".json") else yaml.safe_load(text)
    elif args.preset:
        raw = PRESETS[args.preset](seed=args.seed or 0)
    else:
        raise TextManiaError("give --config FILE or --preset NAME")
    from .config import set_key

    if args.seed is not None:
        raw["seed"] = args.seed
    for item in args.set or []:
        key, _, value = item.partition("=")
        set_key(raw, key, _parse_value(value))
    return config_from_dict(raw)


def cmd_train(args) -> int:
    from .train import train

    cfg = _load_train_config(args)
    result = train(cfg, out_dir=args.out)
    r = result.report
    print(json.dumps({"top1": r.top1, "top5": r.top5, "per_set": r.per_set, "config_hash": r.config_hash,
                      "out": args.out}))
    return 0


def cmd_eval(args) -> int:
    from .train import evaluate_checkpoint

    report = evaluate_checkpoint(args.checkpoint)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _write_json(Path(args.out) / "report.json", report.to_dict())
    print(json.dumps({"top1": report.top1, "top5": report.top5, "per_set": report.per_set}))
    return 0


def cmd_probe(args) -> int:
    from .delta_table import load_table
    from .train import linear_probe

    table = load_table(args.table) if args.table else None
    if args.variant != "none" and table is None:
        raise TextManiaError("--table is required unless --variant none")
    augment = {"variant": args.variant, "proj": {"mode": args.proj_mode}}
    optim = {"epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size, "weight_decay": 0.0}
    result = linear_probe(args.features, augment=augment, table=table, optim=optim, seed=args.seed, out_dir=args.out)
    r = result.report
    print(json.dumps({"top1": r.top1, "top5": r.top5, "per_set": r.per_set}))
    return 0


# analyze -----------------------------------------------------------------------


def cmd_analyze(args) -> int:
    import torch

    from . import plotting
    from .analysis import cluster_score, direct_vs_delta_cosine, table_rows, tsne_emit, write_cosine_csv
    from .augment import Projection
    from .delta_table import load_table
    from .encoders import get_backend

    table = load_table(args.table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    projection = None
    if args.checkpoint:
        state = torch.load(args.checkpoint, map_location="cpu", weights_only=False)["projection"]
        if state is None:
            raise TextManiaError("checkpoint has no learned projection")
        w = state["linear.weight"]
        projection = Projection(w.shape[1], w.shape[0])
        projection.load_state_dict(state)
    elif args.project_dim:
        torch.manual_seed(args.seed)
        projection = Projection(table.dim, args.project_dim)

    colors = set(args.colors or [])
    sizes = set(args.sizes or [])
    singles = [c for c in table.combos if len(c) == 1]
    groups = {"all": None}
    if colors:
        groups["color"] = [c for c in singles if c[0] in colors]
    if sizes:
        groups["size"] = [c for c in singles if c[0] in sizes]
    cluster = {}
    for name, combos in groups.items():
        if combos is not None and not combos:
            continue
        cluster[name] = cluster_score(table, projection, combos).to_dict()
    _write_json(out / "cluster.json", cluster)

    backend = None
    if table.attr_embeddings is None and args.backend:
        backend = get_backend(args.backend)
    if table.attr_embeddings is not None or backend is not None:
        records, summary = direct_vs_delta_cosine(table, backend)
        write_cosine_csv(records, out / "cosine.csv")
        _write_json(out / "cosine_summary.json", summary)
        if not args.no_plot:
            plotting.plot_cosine_hist([r["cosine"] for r in records], out / "cosine.png")

    tsne_combos = groups.get("color") or None
    vecs, labels = table_rows(table, projection, tsne_combos)
    if len(vecs) >= 3 * args.perplexity:
        tsne_emit(vecs, labels, args.perplexity, args.seed, out / "tsne.csv",
                  None if args.no_plot else out / "tsne.png", title=f"difference vectors ({table.backend_id})")
    else:
        log.warning("skipping t-SNE: %d rows < 3 x perplexity", len(vecs))
    print(json.dumps({name: {k: rep[k] for k in ("within_mean", "across_mean")} for name, rep in cluster.items()}))
    return 0


# ablate-attrs --------------------------------------------------------------------

ABLATION_GRID = ("none", "color", "size", "both")


def ablation_configs(base: dict) -> dict:
    """The four rows of the attribute ablation: no augmentation, colors only, sizes only, both."""
    import copy

    from .prompts import DEFAULT_COLORS, DEFAULT_SIZES

    table = base.get("table", {})
    colors = table.get("colors", list(DEFAULT_COLORS))
    sizes = table.get("sizes", list(DEFAULT_SIZES))
    out = {}
    for name in ABLATION_GRID:
        cfg = copy.deepcopy(base)
        cfg.setdefault("augment", {})
        cfg.setdefault("table", {})
        if name == "none":
            cfg["augment"]["variant"] = "none"
        else:
            cfg["augment"].setdefault("variant", "textmania")
            if cfg["augment"]["variant"] == "none":
                cfg["augment"]["variant"] = "textmania"
            cfg["table"]["colors"] = colors if name in ("color", "both") else []
            cfg["table"]["sizes"] = sizes if name in ("size", "both") else []
            cfg["table"].pop("path", None)
        out[name] = cfg
    return out


def run_ablation(base_for_seed, seeds, out_dir=None):
    """Train every grid row for every seed; returns ``{row: [RunReport, ...]}``."""
    from .train import train

    reports = {name: [] for name in ABLATION_GRID}
    for seed in seeds:
        for name, cfg in ablation_configs(base_for_seed(seed)).items():
            cfg["seed"] = seed
            sub = None if out_dir is None else Path(out_dir) / name / f"seed{seed}"
            reports[name].append(train(cfg, out_dir=sub).report)
    if out_dir is not None:
        from . import plotting

        rows = []
        with open(Path(out_dir) / "ablation.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["config", "seed", "top1", "top5", "many", "medium", "few"])
            for name, reps in reports.items():
                for r in reps:
                    w.writerow([name, r.seed, f"{r.top1:.4f}", f"{r.top5:.4f}",
                                *("" if r.per_set[s] is None else f"{r.per_set[s]:.4f}" for s in ("many", "medium", "few"))])
                tops = [r.top1 for r in reps]
                rows.append((name, float(np.mean(tops)), float(np.std(tops))))
        plotting.plot_ablation(rows, Path(out_dir) / "ablation.png")
    return reports


def cmd_ablate_attrs(args) -> int:
    from .config import PRESETS

    if args.config:
        text = Path(args.config).read_text()
        raw = json.loads(text) if args.config.endswith(".json") else yaml.safe_load(text)
        base = lambda seed: {**raw, "seed": seed}  # noqa: E731
    else:
        preset = PRESETS[args.preset]
        base = lambda seed: preset(seed=seed)  # noqa: E731
    reports = run_ablation(base, args.seeds, args.out)
    print(json.dumps({name: [round(r.top1, 4) for r in reps] for name, reps in reports.items()}))
    return 0


# parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .config import PRESETS
    from .prompts import DEFAULT_COLORS, DEFAULT_SIZES, TEMPLATES

    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="textmania", description=__doc__, formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("build-table", help="precompute the difference-vector lookup table", formatter_class=fmt)
    s.add_argument("--backend", default="toy-hash", help="text encoder id")
    s.add_argument("--classes", help="class list file (one per line) or 'cifar100'")
    s.add_argument("--template", default="photo", choices=sorted(TEMPLATES), help="prompt template id")
    s.add_argument("--out", help="output .tmdt path")
    s.add_argument("--store-bases", action="store_true", help="also store e(T0), e(T1) and attribute embeddings")
    s.add_argument("--colors", nargs="*", default=list(DEFAULT_COLORS), help="color words; bare --colors disables colors")
    s.add_argument("--sizes", nargs="*", default=list(DEFAULT_SIZES), help="size words; bare --sizes disables sizes")
    s.add_argument("--policy", default="single_and_color_size_pairs",
                   choices=["single_only", "single_and_color_size_pairs"], help="attribute combination policy")
    s.add_argument("--variants-out", help="also write the tab-separated variant audit file")
    s.add_argument("--seed", type=int, default=0, help="build seed recorded in the header")
    s.add_argument("--list-backends", action="store_true", help="print registered backends and exit")
    s.set_defaults(fn=cmd_build_table)

    s = sub.add_parser("make-dataset", help="build a long-tailed or scarce training view", formatter_class=fmt)
    s.add_argument("--base", default="cifar100", choices=["cifar100", "synthetic-gaussian", "synthetic-images"],
                   help="balanced source dataset")
    s.add_argument("--root", help="dataset root (default: $TEXTMANIA_DATA or ./data)")
    s.add_argument("--download", action="store_true", help="fetch CIFAR-100 if missing")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--longtail-if", type=float, help="imbalance factor N_1/N_K")
    g.add_argument("--scarce-per-class", type=int, help="samples kept per class")
    g.add_argument("--scarce-fraction", type=float, help="fraction of the smallest class kept per class")
    s.add_argument("--seed", type=int, default=0, help="subsampling seed")
    s.add_argument("--out", required=True, help="output directory for manifest.json and indices")
    s.set_defaults(fn=cmd_make_dataset)

    def add_run_args(s):
        s.add_argument("--config", help="YAML/JSON run config")
        s.add_argument("--preset", choices=sorted(PRESETS), help="built-in preset instead of --config")
        s.add_argument("--seed", type=int, default=None, help="override the config seed")
        s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. augment.variant=none")

    s = sub.add_parser("train", help="train and evaluate a classifier", formatter_class=fmt)
    add_run_args(s)
    s.add_argument("--out", required=True, help="run directory (report.json, curve.csv, figures, checkpoint)")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on the original eval split", formatter_class=fmt)
    s.add_argument("--checkpoint", required=True, help="checkpoint.pt written by train")
    s.add_argument("--out", help="directory for report.json")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("probe", help="linear probe on frozen features (.npz)", formatter_class=fmt)
    s.add_argument("--features", required=True, help="npz with train/eval features, labels and class_names")
    s.add_argument("--table", help="delta table for augmentation")
    s.add_argument("--variant", default="textmania",
                   choices=["none", "textmania", "random_noise", "direct_embedding", "concat_embedding"], help="augmentation variant")
    s.add_argument("--proj-mode", default="learned_linear", choices=["learned_linear", "identity"],
                   help="projection from text space to feature space")
    s.add_argument("--epochs", type=int, default=30, help="training epochs")
    s.add_argument("--lr", type=float, default=0.05, help="SGD learning rate")
    s.add_argument("--batch-size", type=int, default=128, help="batch size")
    s.add_argument("--seed", type=int, default=0, help="run seed")
    s.add_argument("--out", help="run directory")
    s.set_defaults(fn=cmd_probe)

    s = sub.add_parser("analyze", help="cluster statistics, direct-vs-difference cosine, t-SNE", formatter_class=fmt)
    s.add_argument("--table", required=True, help="delta table (.tmdt)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--backend", help="backend used to embed bare attribute words when the table lacks them")
    s.add_argument("--checkpoint", help="use the learned projection stored in this checkpoint")
    s.add_argument("--project-dim", type=int, help="project rows with a freshly initialised linear map to this dim")
    s.add_argument("--colors", nargs="*", default=list(DEFAULT_COLORS), help="attributes forming the color group")
    s.add_argument("--sizes", nargs="*", default=list(DEFAULT_SIZES), help="attributes forming the size group")
    s.add_argument("--perplexity", type=float, default=30.0, help="t-SNE perplexity")
    s.add_argument("--seed", type=int, default=0, help="t-SNE seed")
    s.add_argument("--no-plot", action="store_true", help="skip PNG figures")
    s.set_defaults(fn=cmd_analyze)

    s = sub.add_parser("ablate-attrs", help="attribute ablation grid (none / color / size / both)", formatter_class=fmt)
    s.add_argument("--preset", default="toy", choices=sorted(PRESETS), help="built-in base config")
    s.add_argument("--config", help="base run config instead of a preset")
    s.add_argument("--seeds", type=int, nargs="+", default=[0], help="seeds run for every grid row")
    s.add_argument("--out", help="output directory (reports, ablation.csv, ablation.png)")
    s.set_defaults(fn=cmd_ablate_attrs)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.fn(args)
    except (TextManiaError, OSError, KeyError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        if getattr(exc, "offset", None) is not None:
            err["offset"] = exc.offset
        print(json.dumps(err), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
