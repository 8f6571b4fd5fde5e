"""Command-line entry point wiring data preparation, prompt emission,
training, evaluation, and gradient checking.

Config precedence is CLI flags > --config file > built-in defaults, and every
file-emitting subcommand snapshots its effective config to run.json.  All
randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import corpus, embeddings, evaluator, experiments, prompts, trainer
from .corpus import DataSplit, ItemCatalog
from .errors import ConfigError, SchemaError, XdrecError
from .model import ModelConfig, init_model
from .trainer import TrainConfig

MODEL_KEYS = set(ModelConfig.__dataclass_fields__)
TRAIN_KEYS = set(TrainConfig.__dataclass_fields__)


def _write_run_json(out_dir: Path, subcommand: str, config: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot = {"subcommand": subcommand, **config}
    (out_dir / "run.json").write_text(json.dumps(snapshot, sort_keys=True, indent=2) + "\n",
                                      encoding="utf-8")


def _merge_config(file_path: str | None, flags: dict) -> dict:
    merged: dict = {}
    if file_path:
        merged.update(json.loads(Path(file_path).read_text(encoding="utf-8")))
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def _split_configs(merged: dict) -> tuple[ModelConfig, TrainConfig]:
    unknown = set(merged) - MODEL_KEYS - TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    mc = ModelConfig(**{k: v for k, v in merged.items() if k in MODEL_KEYS})
    tc = TrainConfig(**{k: v for k, v in merged.items() if k in TRAIN_KEYS})
    return mc, tc


def catalog_from_metadata(path: str | Path) -> ItemCatalog:
    """Rebuild the catalog from a metadata file written in catalog order
    (every X row before every Y row)."""
    items: list[tuple[str, str, str]] = []
    meta = corpus.load_metadata(path)
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            item_id = line.split("\t")[0]
            domain, title = meta[item_id]
            items.append((item_id, domain, title))
    n_x = sum(1 for _, d, _ in items if d == "X")
    for i, (_, d, _) in enumerate(items):
        if (d == "X") != (i < n_x):
            raise SchemaError(f"{path}: X items must precede Y items (row {i + 1})")
    index_of = {item_id: i + 1 for i, (item_id, _, _) in enumerate(items)}
    return ItemCatalog(items, index_of, {"X": (1, 1 + n_x), "Y": (1 + n_x, 1 + len(items))})


def _load_data_dir(data_dir: str) -> DataSplit:
    root = Path(data_dir)
    catalog = catalog_from_metadata(root / "metadata.tsv")
    interactions = corpus.load_interactions(root / "interactions.tsv")
    by_user: dict[str, list] = {}
    for r in interactions:
        if r.item_id not in catalog.index_of:
            raise SchemaError(f"interaction references unknown item {r.item_id!r}")
        by_user.setdefault(r.user_id, []).append(r)

    def seqs_for(manifest: Path) -> list:
        out = []
        for user_id in corpus.read_split_manifest(manifest):
            rows = sorted(by_user.get(user_id, []), key=lambda r: r.timestamp)
            if not rows:
                raise SchemaError(f"split user {user_id!r} has no interactions")
            merged = [(catalog.index_of[r.item_id], r.domain) for r in rows]
            out.append(corpus.make_sequence(user_id, merged, [r.timestamp for r in rows]))
        return out

    return DataSplit(train=seqs_for(root / "splits" / "train.txt"),
                     valid=seqs_for(root / "splits" / "valid.txt"),
                     test=seqs_for(root / "splits" / "test.txt"),
                     catalog=catalog)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_synthetic(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = embeddings.SyntheticWorldSpec(
        n_clusters=args.clusters,
        items_per_domain=args.items_per_domain,
        cluster_transition=experiments.transition_matrix(args.transition, args.clusters,
                                                         stay=args.stay),
        noise_sigma=args.noise,
        seed=args.seed,
        n_users=args.users,
        seq_len=args.seq_len,
        dim=args.dim,
    )
    catalog, e_img, e_tex, sequences = embeddings.gen_synthetic(spec)
    corpus.write_interactions(sequences, catalog, out / "interactions.tsv")
    corpus.write_metadata(catalog, out / "metadata.tsv")
    embeddings.write_matrix(e_img, out / "emb_img.bin", out / "emb_img.bin.idx", catalog)
    embeddings.write_matrix(e_tex, out / "emb_tex.bin", out / "emb_tex.bin.idx", catalog)
    _write_run_json(out, "gen-synthetic", {
        "users": args.users, "items_per_domain": args.items_per_domain,
        "clusters": args.clusters, "noise": args.noise, "seed": args.seed,
        "dim": args.dim, "seq_len": args.seq_len, "transition": args.transition,
        "stay": args.stay,
    })
    print(f"wrote synthetic corpus: {len(sequences)} users, "
          f"{catalog.n_items} items -> {out}")
    return 0


def cmd_prepare(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = corpus.load_metadata(args.metadata)
    titles = {item_id: title for item_id, (_, title) in meta.items()}
    log = corpus.load_interactions(args.interactions)
    sequences, catalog = corpus.filter_corpus(log, args.min_interactions,
                                              args.min_per_domain, titles)
    split = corpus.split_temporal(sequences, catalog, args.valid_frac, args.test_frac)
    corpus.write_interactions(sequences, catalog, out / "interactions.tsv")
    corpus.write_metadata(catalog, out / "metadata.tsv")
    corpus.write_split_manifests(split, out / "splits")
    _write_run_json(out, "prepare", {
        "interactions": str(args.interactions), "metadata": str(args.metadata),
        "min_interactions": args.min_interactions, "min_per_domain": args.min_per_domain,
        "valid_frac": args.valid_frac, "test_frac": args.test_frac,
    })
    stats = corpus.corpus_stats(sequences)
    n_x = catalog.domain_ranges["X"][1] - 1
    print(f"kept {stats['n_users']} users, {n_x} X items, {catalog.n_items - n_x} Y items")
    print(f"avg length: merged {stats['avg_merged_len']:.2f}, "
          f"X {stats['avg_x_len']:.2f}, Y {stats['avg_y_len']:.2f}")
    print(f"split: {len(split.train)} train / {len(split.valid)} valid / {len(split.test)} test")
    return 0


def cmd_prompts(args) -> int:
    meta = corpus.load_metadata(args.metadata)
    records = []
    for item_id, (domain, title) in sorted(meta.items()):
        records.append(prompts.make_record((item_id, domain, title),
                                           provider=args.provider))
    prompts.write_cache(records, args.out)
    print(f"wrote {len(records)} prompt commands -> {args.out}")
    return 0


def cmd_train(args) -> int:
    flags = {k: getattr(args, k) for k in
             ("q", "e", "alpha", "beta", "lambda1", "lambda2", "depth", "max_len",
              "sim_scale", "dropout", "learning_rate", "l2", "batch_size", "epochs",
              "patience", "seed", "target", "stop_metric")}
    merged = _merge_config(args.config, flags)
    model_cfg, train_cfg = _split_configs(merged)

    split = _load_data_dir(args.data)
    e_img = embeddings.load_matrix(args.emb_img, str(args.emb_img) + ".idx",
                                   split.catalog, expected_dim=model_cfg.e)
    e_tex = embeddings.load_matrix(args.emb_tex, str(args.emb_tex) + ".idx",
                                   split.catalog, expected_dim=model_cfg.e)
    model = init_model(model_cfg, split.catalog, e_img, e_tex, seed=train_cfg.seed)
    model, history = trainer.train(model, split, train_cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer.save_checkpoint(model, out / "checkpoint.emfc")
    history.to_tsv(out / "history.tsv")
    _write_run_json(out, "train", {**asdict(model_cfg), **asdict(train_cfg),
                                   "data": str(args.data), "emb_img": str(args.emb_img),
                                   "emb_tex": str(args.emb_tex)})
    best = history.records[history.best_epoch] if history.records else None
    if best is not None:
        print(f"best epoch {history.best_epoch}: loss {best.loss_total:.4f}, "
              f"valid MRR {best.valid_mrr:.4f}")
    print(f"checkpoint -> {out / 'checkpoint.emfc'}")
    return 0


def _parse_metrics(text: str) -> tuple[int, ...]:
    ks = []
    for token in text.split(","):
        token = token.strip()
        if token == "mrr":
            continue
        if token.startswith("ndcg@"):
            ks.append(int(token.split("@", 1)[1]))
        else:
            raise ConfigError(f"unknown metric {token!r}")
    return tuple(ks) or evaluator.DEFAULT_KS


def cmd_eval(args) -> int:
    split = _load_data_dir(args.data)
    model = trainer.load_checkpoint(args.ckpt, split.catalog)
    sequences = {"train": split.train, "valid": split.valid, "test": split.test}[args.split]
    report = evaluator.evaluate(model, sequences, args.target, ks=_parse_metrics(args.metrics))
    print(report.to_json())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.to_tsv(out / "report.tsv")
        (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        if args.dump_ranks:
            report.dump_ranks(out / "ranks.tsv")
        _write_run_json(out, "eval", {"ckpt": str(args.ckpt), "data": str(args.data),
                                      "target": args.target, "split": args.split,
                                      "metrics": args.metrics})
    return 0


def cmd_gradcheck(args) -> int:
    err, seconds = experiments.gradcheck_full_model(seed=args.seed,
                                                    max_coords=args.max_coords)
    ok = err < 1e-4
    print(f"gradcheck: max relative error {err:.3e} in {seconds:.1f}s "
          f"({'PASS' if ok else 'FAIL'})")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xdrec",
                                description="cross-domain sequential recommender")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="write a synthetic corpus and embeddings")
    g.add_argument("--out", required=True)
    g.add_argument("--users", type=int, default=200)
    g.add_argument("--items-per-domain", type=int, default=50)
    g.add_argument("--clusters", type=int, default=8)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dim", type=int, default=32)
    g.add_argument("--seq-len", type=int, default=16)
    g.add_argument("--transition", choices=("identity", "cyclic", "uniform"),
                   default="cyclic")
    g.add_argument("--stay", type=float, default=0.1)
    g.set_defaults(func=cmd_gen_synthetic)

    pr = sub.add_parser("prepare", help="filter interactions and build splits")
    pr.add_argument("--interactions", required=True)
    pr.add_argument("--metadata", required=True)
    pr.add_argument("--min-interactions", type=int, default=10)
    pr.add_argument("--min-per-domain", type=int, default=3)
    pr.add_argument("--valid-frac", type=float, default=0.1)
    pr.add_argument("--test-frac", type=float, default=0.1)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_prepare)

    pm = sub.add_parser("prompts", help="emit enrichment commands as a JSONL cache")
    pm.add_argument("--metadata", required=True)
    pm.add_argument("--out", required=True)
    pm.add_argument("--provider", default="none")
    pm.set_defaults(func=cmd_prompts)

    tr = sub.add_parser("train", help="train a model on a prepared data dir")
    tr.add_argument("--config", default=None, help="JSON config file")
    tr.add_argument("--data", required=True)
    tr.add_argument("--emb-img", required=True)
    tr.add_argument("--emb-tex", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--q", type=int, default=None)
    tr.add_argument("--e", type=int, default=None)
    tr.add_argument("--alpha", type=float, default=None)
    tr.add_argument("--beta", type=float, default=None)
    tr.add_argument("--lambda1", type=float, default=None)
    tr.add_argument("--lambda2", type=float, default=None)
    tr.add_argument("--depth", type=int, default=None)
    tr.add_argument("--max-len", type=int, dest="max_len", default=None)
    tr.add_argument("--sim-scale", type=float, dest="sim_scale", default=None)
    tr.add_argument("--dropout", type=float, default=None)
    tr.add_argument("--lr", type=float, dest="learning_rate", default=None)
    tr.add_argument("--l2", type=float, default=None)
    tr.add_argument("--batch-size", type=int, dest="batch_size", default=None)
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--patience", type=int, default=None)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--target", choices=("X", "Y"), default=None)
    tr.add_argument("--stop-metric", choices=("mrr", "loss"), dest="stop_metric",
                    default=None)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--target", choices=("X", "Y"), default="X")
    ev.add_argument("--metrics", default="mrr,ndcg@5,ndcg@10")
    ev.add_argument("--split", choices=("train", "valid", "test"), default="test")
    ev.add_argument("--out", default=None)
    ev.add_argument("--dump-ranks", action="store_true")
    ev.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--max-coords", type=int, default=16)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except XdrecError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: FileNotFound: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
