"""encoder-adapter command line: encode embeddings, enrich prompt caches."""

from __future__ import annotations

import argparse
import sys

from . import AdapterError
from .encode import EncodeJob, encode_batch
from .enrich import RetryPolicy, enrich_with_llm, make_provider


def cmd_encode(args) -> int:
    job = EncodeJob(metadata_path=args.metadata, out_image=args.out_img,
                    out_text=args.out_tex, image_dir=args.images,
                    cache_path=args.cache, backend=args.backend,
                    mock_dim=args.dim)
    result = encode_batch(job)
    if result.missing_images:
        print(f"warning: {len(result.missing_images)} items without images "
              f"(zero rows): {', '.join(result.missing_images[:10])}"
              f"{' ...' if len(result.missing_images) > 10 else ''}",
              file=sys.stderr)
    print(f"encoded {result.n_items} items -> {args.out_img}, {args.out_tex}")
    return 0


def cmd_enrich(args) -> int:
    provider = make_provider(args.provider)
    policy = RetryPolicy(max_attempts=args.max_attempts)
    result = enrich_with_llm(args.cache, provider, policy)
    print(f"enrich: filled {result.filled}, already present {result.skipped}, "
          f"failed {result.failed}")
    return 0 if result.complete else 3  # 3 = partial completion


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="encoder-adapter",
                                description="offline frozen-embedding producer")
    sub = p.add_subparsers(dest="command", required=True)

    en = sub.add_parser("encode", help="write image/text embedding files")
    en.add_argument("--metadata", required=True)
    en.add_argument("--out-img", required=True)
    en.add_argument("--out-tex", required=True)
    en.add_argument("--images", default=None, help="directory of <item_id>.jpg|png")
    en.add_argument("--cache", default=None, help="prompt cache with responses")
    en.add_argument("--backend", choices=("mock", "pretrained"), default="mock")
    en.add_argument("--dim", type=int, default=512)
    en.set_defaults(func=cmd_encode)

    er = sub.add_parser("enrich", help="fill prompt-cache responses")
    er.add_argument("--cache", required=True)
    er.add_argument("--provider", default="mock")
    er.add_argument("--max-attempts", type=int, default=3)
    er.set_defaults(func=cmd_enrich)
    return p


def dispatch(argv: list[str]) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except AdapterError as exc:
        print(f"error: AdapterError: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: FileNotFound: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
