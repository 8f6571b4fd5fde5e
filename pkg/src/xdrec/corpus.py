"""Interaction log ingestion, filtering, sequence building, and batching.

Item indices live in a single "row space" shared with the embedding matrices:
row 0 is the reserved pad row, real items occupy rows 1..n with every
domain-X row before every domain-Y row.  A target of 0 therefore always means
"no target here" and never collides with a real item.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, SchemaError, SplitError

PAD = 0
DOMAINS = ("X", "Y")


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    domain: str
    timestamp: int


@dataclass
class ItemCatalog:
    """All items of both domains in a fixed row order (X block, then Y block)."""

    items: list[tuple[str, str, str]]  # (item_id, domain, title) per row 1..n
    index_of: dict[str, int]
    domain_ranges: dict[str, tuple[int, int]]  # half-open row ranges

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_rows(self) -> int:
        """Embedding row count including the pad row."""
        return len(self.items) + 1

    def domain_of(self, row: int) -> str:
        for d, (lo, hi) in self.domain_ranges.items():
            if lo <= row < hi:
                return d
        raise KeyError(f"row {row} outside catalog")

    def item_id(self, row: int) -> str:
        return self.items[row - 1][0]

    def title(self, row: int) -> str:
        return self.items[row - 1][2]


@dataclass
class UserSequence:
    user_id: str
    merged: list[tuple[int, str]]  # (item row, domain), chronological
    sub_x: list[int]
    sub_y: list[int]
    timestamps: list[int]

    def sub(self, domain: str) -> list[int]:
        return self.sub_x if domain == "X" else self.sub_y


@dataclass
class DataSplit:
    train: list[UserSequence]
    valid: list[UserSequence]
    test: list[UserSequence]
    catalog: ItemCatalog


@dataclass
class Stream:
    """One behaviour stream with next-item targets (0 where no target)."""

    ids: list[int]
    targets: list[int]


@dataclass
class StreamBatch:
    ids: np.ndarray       # B x L int64, left-padded with 0
    targets: np.ndarray   # B x L int64, 0 where masked
    pad_mask: np.ndarray  # B x L bool, True at padding

    @property
    def loss_mask(self) -> np.ndarray:
        return (~self.pad_mask) & (self.targets != PAD)


@dataclass
class Batch:
    x: StreamBatch
    y: StreamBatch
    merged: StreamBatch
    user_ids: list[str]

    def stream(self, name: str) -> StreamBatch:
        return {"X": self.x, "Y": self.y, "XY": self.merged}[name]


def make_sequence(user_id: str, merged: list[tuple[int, str]],
                  timestamps: list[int]) -> UserSequence:
    sub_x = [row for row, d in merged if d == "X"]
    sub_y = [row for row, d in merged if d == "Y"]
    return UserSequence(user_id, list(merged), sub_x, sub_y, list(timestamps))


def load_interactions(path: str | Path) -> list[Interaction]:
    """Parse a UTF-8 TSV of `user_id  domain  item_id  timestamp` rows."""
    out: list[Interaction] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
            user_id, domain, item_id, ts_text = parts
            if domain not in DOMAINS:
                raise SchemaError(f"line {lineno}: unknown domain {domain!r} (expected X or Y)")
            try:
                ts = int(ts_text)
            except ValueError:
                raise ParseError(f"line {lineno}: bad timestamp {ts_text!r}") from None
            if ts < 0:
                raise ParseError(f"line {lineno}: negative timestamp {ts}")
            if not user_id or not item_id:
                raise ParseError(f"line {lineno}: empty user_id or item_id")
            out.append(Interaction(user_id, item_id, domain, ts))
    return out


def load_metadata(path: str | Path) -> dict[str, tuple[str, str]]:
    """Parse the item metadata TSV: `item_id  domain  title`."""
    meta: dict[str, tuple[str, str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
            item_id, domain, title = parts
            if domain not in DOMAINS:
                raise SchemaError(f"line {lineno}: unknown domain {domain!r}")
            meta[item_id] = (domain, title)
    return meta


def build_catalog(interactions: list[Interaction],
                  titles: dict[str, str] | None = None) -> ItemCatalog:
    """Catalog over the items present in `interactions`, X rows before Y rows,
    lexicographic item_id order within each domain."""
    titles = titles or {}
    domain_of: dict[str, str] = {}
    for r in interactions:
        prev = domain_of.setdefault(r.item_id, r.domain)
        if prev != r.domain:
            raise SchemaError(f"item {r.item_id!r} appears in both domains")
    items: list[tuple[str, str, str]] = []
    for d in DOMAINS:
        for item_id in sorted(i for i, dom in domain_of.items() if dom == d):
            items.append((item_id, d, titles.get(item_id, "")))
    index_of = {item_id: i + 1 for i, (item_id, _, _) in enumerate(items)}
    n_x = sum(1 for _, d, _ in items if d == "X")
    ranges = {"X": (1, 1 + n_x), "Y": (1 + n_x, 1 + len(items))}
    return ItemCatalog(items, index_of, ranges)


def filter_corpus(log: list[Interaction], min_interactions: int = 10,
                  min_per_domain: int = 3,
                  titles: dict[str, str] | None = None,
                  ) -> tuple[list[UserSequence], ItemCatalog]:
    """Drop sparse users/items to a joint fixed point and build sequences.

    A row survives iff its user has >= min_interactions rows, its item has
    >= min_interactions rows, and its user has >= min_per_domain rows in each
    domain; removal is iterated until nothing changes, so re-running the
    filter on its own output is the identity.
    """
    rows = list(log)
    while True:
        user_counts = Counter(r.user_id for r in rows)
        item_counts = Counter(r.item_id for r in rows)
        per_domain = Counter((r.user_id, r.domain) for r in rows)

        def ok(r: Interaction) -> bool:
            if user_counts[r.user_id] < min_interactions:
                return False
            if item_counts[r.item_id] < min_interactions:
                return False
            return all(per_domain[(r.user_id, d)] >= min_per_domain for d in DOMAINS)

        kept = [r for r in rows if ok(r)]
        if len(kept) == len(rows):
            break
        rows = kept

    catalog = build_catalog(rows, titles)
    by_user: dict[str, list[Interaction]] = defaultdict(list)
    for r in rows:
        by_user[r.user_id].append(r)

    sequences = []
    for user_id in sorted(by_user):
        ordered = sorted(by_user[user_id], key=lambda r: r.timestamp)  # stable: ties keep input order
        merged = [(catalog.index_of[r.item_id], r.domain) for r in ordered]
        ts = [r.timestamp for r in ordered]
        sequences.append(make_sequence(user_id, merged, ts))
    return sequences, catalog


def split_temporal(sequences: list[UserSequence], catalog: ItemCatalog,
                   valid_frac: float = 0.1, test_frac: float = 0.1) -> DataSplit:
    """Hold out the sequences with the most recent final interactions."""
    if valid_frac < 0 or test_frac < 0 or valid_frac + test_frac >= 1:
        raise ConfigError(f"bad split fractions valid={valid_frac} test={test_frac}")
    n = len(sequences)
    if (valid_frac > 0 or test_frac > 0) and n < 3:
        raise SplitError(f"need at least 3 sequences to split, got {n}")

    order = sorted(range(n), key=lambda i: sequences[i].timestamps[-1])
    n_test = max(1, int(n * test_frac)) if test_frac > 0 else 0
    n_valid = max(1, int(n * valid_frac)) if valid_frac > 0 else 0
    test_idx = order[n - n_test:] if n_test else []
    valid_idx = order[n - n_test - n_valid: n - n_test] if n_valid else []
    train_idx = order[: n - n_test - n_valid]
    return DataSplit(
        train=[sequences[i] for i in sorted(train_idx)],
        valid=[sequences[i] for i in sorted(valid_idx)],
        test=[sequences[i] for i in sorted(test_idx)],
        catalog=catalog,
    )


def extract_streams(seq: UserSequence) -> tuple[Stream, Stream, Stream]:
    """The three behaviour streams with aligned next-item targets."""

    def with_targets(ids: list[int]) -> Stream:
        return Stream(list(ids), list(ids[1:]) + [PAD])

    merged_ids = [row for row, _ in seq.merged]
    return with_targets(seq.sub_x), with_targets(seq.sub_y), with_targets(merged_ids)


def _pad_left(stream: Stream, max_len: int) -> tuple[list[int], list[int], list[bool]]:
    ids = stream.ids[-max_len:]
    targets = stream.targets[-max_len:]
    pad = max_len - len(ids)
    return ([PAD] * pad + ids, [PAD] * pad + targets, [True] * pad + [False] * len(ids))


def batchify(sequences: list[UserSequence], batch_size: int, max_len: int,
             seed: int = 0) -> list[Batch]:
    """Deterministically shuffled, left-padded batches of all three streams."""
    if batch_size <= 0:
        raise ConfigError(f"batch_size must be positive, got {batch_size}")
    if max_len < 2:
        raise ConfigError(f"max_len must be >= 2, got {max_len}")
    order = np.random.default_rng(seed).permutation(len(sequences))

    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [sequences[i] for i in order[start:start + batch_size]]
        per_stream = {"X": [], "Y": [], "XY": []}
        for seq in chunk:
            sx, sy, sxy = extract_streams(seq)
            for name, stream in (("X", sx), ("Y", sy), ("XY", sxy)):
                per_stream[name].append(_pad_left(stream, max_len))

        def stack(name: str) -> StreamBatch:
            ids, targets, padm = zip(*per_stream[name])
            return StreamBatch(np.array(ids, dtype=np.int64),
                               np.array(targets, dtype=np.int64),
                               np.array(padm, dtype=bool))

        batches.append(Batch(stack("X"), stack("Y"), stack("XY"),
                             [s.user_id for s in chunk]))
    return batches


def corpus_stats(sequences: list[UserSequence]) -> dict[str, float]:
    """Average lengths, reported both merged and per-domain."""
    if not sequences:
        return {"n_users": 0, "avg_merged_len": 0.0, "avg_x_len": 0.0, "avg_y_len": 0.0}
    return {
        "n_users": len(sequences),
        "avg_merged_len": float(np.mean([len(s.merged) for s in sequences])),
        "avg_x_len": float(np.mean([len(s.sub_x) for s in sequences])),
        "avg_y_len": float(np.mean([len(s.sub_y) for s in sequences])),
    }


def write_interactions(sequences: list[UserSequence], catalog: ItemCatalog,
                       path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            for (row, domain), ts in zip(seq.merged, seq.timestamps):
                fh.write(f"{seq.user_id}\t{domain}\t{catalog.item_id(row)}\t{ts}\n")


def write_metadata(catalog: ItemCatalog, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item_id, domain, title in catalog.items:
            fh.write(f"{item_id}\t{domain}\t{title}\n")


def write_split_manifests(split: DataSplit, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, seqs in (("train", split.train), ("valid", split.valid), ("test", split.test)):
        with open(out / f"{name}.txt", "w", encoding="utf-8") as fh:
            for seq in seqs:
                fh.write(seq.user_id + "\n")


def read_split_manifest(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]
