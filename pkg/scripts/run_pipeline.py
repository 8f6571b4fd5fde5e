#!/usr/bin/env python3
"""End-to-end walkthrough on synthetic data: generate, prepare, train, eval.

Usage: python scripts/run_pipeline.py --out /tmp/xdrec-demo [--seed 7]
"""

import argparse
from pathlib import Path

from xdrec.cli import dispatch


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--epochs", type=int, default=6)
    args = ap.parse_args()

    root = Path(args.out)
    raw, data, run = root / "raw", root / "data", root / "run"
    steps = [
        ["gen-synthetic", "--out", str(raw), "--users", "400",
         "--items-per-domain", "60", "--clusters", "6", "--noise", "0.1",
         "--seed", str(args.seed), "--dim", "16", "--seq-len", "14"],
        ["prepare", "--interactions", str(raw / "interactions.tsv"),
         "--metadata", str(raw / "metadata.tsv"),
         "--min-interactions", "2", "--min-per-domain", "3", "--out", str(data)],
        ["prompts", "--metadata", str(data / "metadata.tsv"),
         "--out", str(root / "prompts.jsonl")],
        ["train", "--data", str(data), "--emb-img", str(raw / "emb_img.bin"),
         "--emb-tex", str(raw / "emb_tex.bin"), "--out", str(run),
         "--q", "16", "--e", "16", "--max-len", "14",
         "--epochs", str(args.epochs), "--batch-size", "64",
         "--seed", str(args.seed), "--lr", "0.005"],
        ["eval", "--ckpt", str(run / "checkpoint.emfc"), "--data", str(data),
         "--target", "X", "--out", str(root / "report")],
    ]
    for argv in steps:
        print(f"$ xdrec {' '.join(argv)}")
        code = dispatch(argv)
        if code != 0:
            raise SystemExit(code)


if __name__ == "__main__":
    main()
