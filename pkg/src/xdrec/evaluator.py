"""Ranking metrics (MRR, NDCG@K) over target-domain candidates."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import UserSequence, make_sequence
from .errors import EvalError

DEFAULT_KS = (5, 10)


def _rank_of(scores: np.ndarray, truth: int) -> int:
    """1-based rank of `truth` under descending score, ties broken toward
    the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= truth < scores.size:
        raise EvalError(f"truth index {truth} outside candidate scope of {scores.size}")
    s = scores[truth]
    ahead = int((scores > s).sum()) + int((scores[:truth] == s).sum())
    return ahead + 1


def reciprocal_rank(scores: np.ndarray, truth: int) -> float:
    return 1.0 / _rank_of(scores, truth)


def ndcg_at_k(scores: np.ndarray, truth: int, k: int) -> float:
    """Single-relevant-item NDCG: 1/log2(1+rank) when rank <= k, else 0."""
    if k < 1:
        raise EvalError(f"k must be >= 1, got {k}")
    rank = _rank_of(scores, truth)
    return 1.0 / math.log2(1.0 + rank) if rank <= k else 0.0


@dataclass
class MetricReport:
    target: str
    mrr: float
    ndcg: dict[int, float]
    n_sequences: int
    per_sequence: list[tuple[str, int]]  # (user_id, rank of truth)

    def to_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            cols = ["target", "n_sequences", "mrr"] + [f"ndcg@{k}" for k in sorted(self.ndcg)]
            fh.write("\t".join(cols) + "\n")
            vals = [self.target, str(self.n_sequences), f"{self.mrr:.8f}"]
            vals += [f"{self.ndcg[k]:.8f}" for k in sorted(self.ndcg)]
            fh.write("\t".join(vals) + "\n")

    def to_json(self) -> str:
        return json.dumps({
            "target": self.target,
            "n_sequences": self.n_sequences,
            "mrr": self.mrr,
            "ndcg": {str(k): v for k, v in sorted(self.ndcg.items())},
        }, sort_keys=True)

    def dump_ranks(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("user_id\trank\n")
            for user_id, rank in self.per_sequence:
                fh.write(f"{user_id}\t{rank}\n")


def holdout_last(seq: UserSequence, target: str) -> tuple[UserSequence, int]:
    """Split off the final target-domain item as ground truth; the context is
    every interaction strictly before it."""
    pos = max((i for i, (_, d) in enumerate(seq.merged) if d == target), default=-1)
    if pos < 0:
        raise EvalError(f"sequence {seq.user_id!r} has no {target}-domain item")
    truth = seq.merged[pos][0]
    context = make_sequence(seq.user_id, seq.merged[:pos], seq.timestamps[:pos])
    if not context.sub(target):
        raise EvalError(f"sequence {seq.user_id!r} has no {target}-domain item beyond the first")
    return context, truth


def evaluate(model, sequences: list[UserSequence], target: str,
             ks: tuple[int, ...] = DEFAULT_KS) -> MetricReport:
    """Hold out each sequence's last target-domain item and rank the full
    target-domain catalog for it."""
    from .model import recommend  # local import to avoid a cycle

    lo, hi = model.catalog.domain_ranges[target]
    n_candidates = hi - lo
    rr_sum = 0.0
    ndcg_sums = {k: 0.0 for k in ks}
    per_sequence: list[tuple[str, int]] = []
    for seq in sequences:
        context, truth = holdout_last(seq, target)
        ranked = recommend(model, context, target, k=n_candidates)
        rank = next(i + 1 for i, (row, _) in enumerate(ranked) if row == truth)
        per_sequence.append((seq.user_id, rank))
        rr_sum += 1.0 / rank
        for k in ks:
            if rank <= k:
                ndcg_sums[k] += 1.0 / math.log2(1.0 + rank)
    n = len(sequences)
    if n == 0:
        raise EvalError("no sequences to evaluate")
    return MetricReport(target=target, mrr=rr_sum / n,
                        ndcg={k: ndcg_sums[k] / n for k in ks},
                        n_sequences=n, per_sequence=per_sequence)
