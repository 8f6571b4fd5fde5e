import numpy as np
import pytest
from hypothesis import given, strategies as st

from xdrec.corpus import (
    PAD, Interaction, batchify, corpus_stats, extract_streams,
    filter_corpus, load_interactions, load_metadata,
    read_split_manifest, split_temporal, write_interactions, write_metadata,
    write_split_manifests,
)
from xdrec.errors import ConfigError, ParseError, SchemaError, SplitError

from conftest import seq_of, tiny_catalog


def ia(user, item, domain, ts):
    return Interaction(user, item, domain, ts)


def dense_log(n_users=4, n_items=4, reps=3):
    """Every user interacts with every item in both domains, repeatedly."""
    log = []
    t = 0
    for u in range(n_users):
        for r in range(reps):
            for i in range(n_items):
                for d in ("X", "Y"):
                    log.append(ia(f"u{u}", f"{d.lower()}{i}", d, t))
                    t += 1
    return log


# ---------------------------------------------------------------------------
# load_interactions
# ---------------------------------------------------------------------------

def test_load_empty_file(tmp_path):
    p = tmp_path / "i.tsv"
    p.write_text("")
    assert load_interactions(p) == []


def test_load_single_line(tmp_path):
    p = tmp_path / "i.tsv"
    p.write_text("u1\tX\ti1\t100\n")
    assert load_interactions(p) == [Interaction("u1", "i1", "X", 100)]


def test_load_unknown_domain(tmp_path):
    p = tmp_path / "i.tsv"
    p.write_text("u1\tZ\ti1\t100\n")
    with pytest.raises(SchemaError, match="line 1"):
        load_interactions(p)


def test_load_malformed_line_numbered(tmp_path):
    p = tmp_path / "i.tsv"
    p.write_text("u1\tX\ti1\t100\nu2\tX\ti1\n")
    with pytest.raises(ParseError, match="line 2"):
        load_interactions(p)


def test_load_bad_timestamp(tmp_path):
    p = tmp_path / "i.tsv"
    p.write_text("u1\tX\ti1\tsoon\n")
    with pytest.raises(ParseError, match="timestamp"):
        load_interactions(p)


def test_load_preserves_order(tmp_path):
    p = tmp_path / "i.tsv"
    p.write_text("u1\tX\ta\t5\nu1\tY\tb\t1\n")
    got = load_interactions(p)
    assert [r.item_id for r in got] == ["a", "b"]


# ---------------------------------------------------------------------------
# filter_corpus
# ---------------------------------------------------------------------------

def test_filter_empty_log():
    seqs, catalog = filter_corpus([])
    assert seqs == [] and catalog.n_items == 0


def test_filter_user_below_min_interactions():
    # u9 has 9 interactions in total: removed at threshold 10
    log = dense_log(n_users=3, n_items=3, reps=4)  # everyone else has 24
    log += [ia("u9", f"x{i % 3}", "X", 100 + i) for i in range(5)]
    log += [ia("u9", f"y{i % 3}", "Y", 200 + i) for i in range(4)]
    seqs, _ = filter_corpus(log, min_interactions=10, min_per_domain=3)
    assert all(s.user_id != "u9" for s in seqs)
    assert len(seqs) == 3


def test_filter_user_below_min_per_domain():
    # u9 has 12 interactions but only 2 in domain Y
    log = dense_log(n_users=3, n_items=3, reps=4)
    log += [ia("u9", f"x{i % 3}", "X", 100 + i) for i in range(10)]
    log += [ia("u9", "y0", "Y", 300), ia("u9", "y1", "Y", 301)]
    seqs, _ = filter_corpus(log, min_interactions=10, min_per_domain=3)
    assert all(s.user_id != "u9" for s in seqs)
    assert len(seqs) == 3


def test_filter_fixed_point():
    rng = np.random.default_rng(0)
    log = dense_log(n_users=5, n_items=4, reps=2)
    log += [ia("u7", f"x{i}", "X", i) for i in range(4)]  # sparse straggler
    seqs, catalog = filter_corpus(log, min_interactions=6, min_per_domain=3)
    flat = []
    for s in seqs:
        for (row, d), ts in zip(s.merged, s.timestamps):
            flat.append(ia(s.user_id, catalog.item_id(row), d, ts))
    seqs2, catalog2 = filter_corpus(flat, min_interactions=6, min_per_domain=3)
    assert [s.user_id for s in seqs2] == [s.user_id for s in seqs]
    assert [s.merged for s in seqs2] == [s.merged for s in seqs]
    assert catalog2.items == catalog.items


def test_filter_sorts_by_timestamp_with_stable_ties():
    log = dense_log(n_users=1, n_items=3, reps=2)
    # all the same timestamp: input order must be preserved
    log = [ia(r.user_id, r.item_id, r.domain, 42) for r in log]
    seqs, catalog = filter_corpus(log, min_interactions=1, min_per_domain=1)
    got = [catalog.item_id(row) for row, _ in seqs[0].merged]
    assert got == [r.item_id for r in log]


def test_projection_consistency():
    log = dense_log(n_users=2, n_items=3, reps=2)
    seqs, _ = filter_corpus(log, min_interactions=3, min_per_domain=3)
    for s in seqs:
        xs, ys = iter(s.sub_x), iter(s.sub_y)
        rebuilt = [next(xs) if d == "X" else next(ys) for _, d in s.merged]
        assert rebuilt == [row for row, _ in s.merged]


# ---------------------------------------------------------------------------
# split_temporal
# ---------------------------------------------------------------------------

def _ten_sequences():
    return [seq_of(f"u{i}", [(1, "X"), (4, "Y")], ts=[0, i]) for i in range(10)]


def test_split_counts_and_recency():
    seqs = _ten_sequences()
    split = split_temporal(seqs, tiny_catalog(), 0.1, 0.1)
    assert (len(split.train), len(split.valid), len(split.test)) == (8, 1, 1)
    assert split.test[0].user_id == "u9"  # most recent held out
    assert split.valid[0].user_id == "u8"


def test_split_zero_fracs_all_train():
    seqs = _ten_sequences()
    split = split_temporal(seqs, tiny_catalog(), 0.0, 0.0)
    assert len(split.train) == 10 and not split.valid and not split.test


def test_split_too_few_sequences():
    with pytest.raises(SplitError):
        split_temporal(_ten_sequences()[:2], tiny_catalog(), 0.1, 0.1)


def test_split_bad_fracs():
    with pytest.raises(ConfigError):
        split_temporal(_ten_sequences(), tiny_catalog(), 0.6, 0.5)


def test_split_disjoint_users():
    split = split_temporal(_ten_sequences(), tiny_catalog(), 0.2, 0.2)
    groups = [set(s.user_id for s in part)
              for part in (split.train, split.valid, split.test)]
    assert not (groups[0] & groups[1] or groups[0] & groups[2] or groups[1] & groups[2])


def test_split_deterministic():
    a = split_temporal(_ten_sequences(), tiny_catalog(), 0.1, 0.1)
    b = split_temporal(_ten_sequences(), tiny_catalog(), 0.1, 0.1)
    assert [s.user_id for s in a.train] == [s.user_id for s in b.train]
    assert [s.user_id for s in a.test] == [s.user_id for s in b.test]


# ---------------------------------------------------------------------------
# extract_streams
# ---------------------------------------------------------------------------

def test_extract_streams_targets():
    # merged [x1, y1, x2] (rows 1, 4, 2)
    seq = seq_of("u", [(1, "X"), (4, "Y"), (2, "X")])
    sx, sy, sxy = extract_streams(seq)
    assert sx.ids == [1, 2] and sx.targets == [2, PAD]
    assert sy.ids == [4] and sy.targets == [PAD]
    assert sxy.ids == [1, 4, 2] and sxy.targets == [4, 2, PAD]


def test_extract_streams_single_item_stream_all_masked():
    seq = seq_of("u", [(4, "Y")])
    _, sy, _ = extract_streams(seq)
    assert sy.targets == [PAD]


def test_extract_streams_longer_merged():
    seq = seq_of("u", [(1, "X"), (2, "X"), (4, "Y"), (5, "Y"), (3, "X")])
    _, _, sxy = extract_streams(seq)
    assert sxy.targets == [2, 4, 5, 3, PAD]


@given(st.lists(st.sampled_from([(1, "X"), (2, "X"), (4, "Y"), (5, "Y")]),
                min_size=1, max_size=12))
def test_target_alignment_property(merged):
    seq = seq_of("u", merged)
    for stream in extract_streams(seq):
        for t in range(len(stream.ids) - 1):
            assert stream.targets[t] == stream.ids[t + 1]
        assert stream.targets[-1] == PAD if stream.ids else True


# ---------------------------------------------------------------------------
# batchify
# ---------------------------------------------------------------------------

def test_batchify_left_pads():
    seq = seq_of("u", [(1, "X"), (4, "Y"), (2, "X")])
    [batch] = batchify([seq], batch_size=4, max_len=5)
    assert batch.merged.ids.shape == (1, 5)
    assert list(batch.merged.ids[0]) == [0, 0, 1, 4, 2]
    assert list(batch.merged.pad_mask[0]) == [True, True, False, False, False]


def test_batchify_batch_count():
    seqs = [seq_of(f"u{i}", [(1, "X"), (4, "Y")]) for i in range(300)]
    batches = batchify(seqs, batch_size=256, max_len=4)
    assert [len(b.user_ids) for b in batches] == [256, 44]


def test_batchify_truncates_to_most_recent():
    merged = [(1 + (i % 3), "X") for i in range(80)]
    seq = seq_of("u", merged)
    [batch] = batchify([seq], batch_size=1, max_len=50)
    expected = [row for row, _ in merged[-50:]]
    assert list(batch.x.ids[0]) == expected


def test_batchify_bad_batch_size():
    with pytest.raises(ConfigError):
        batchify([], batch_size=0, max_len=4)


def test_batchify_deterministic_shuffle():
    seqs = [seq_of(f"u{i}", [(1, "X"), (4, "Y")]) for i in range(20)]
    a = batchify(seqs, 8, 4, seed=3)
    b = batchify(seqs, 8, 4, seed=3)
    assert all(pa.user_ids == pb.user_ids for pa, pb in zip(a, b))
    c = batchify(seqs, 8, 4, seed=4)
    assert any(pa.user_ids != pc.user_ids for pa, pc in zip(a, c))


def test_batch_loss_mask_excludes_pads_and_last():
    seq = seq_of("u", [(1, "X"), (2, "X")])
    [batch] = batchify([seq], 1, 4)
    assert list(batch.x.loss_mask[0]) == [False, False, True, False]


# ---------------------------------------------------------------------------
# file round-trips and stats
# ---------------------------------------------------------------------------

def test_interactions_roundtrip(tmp_path):
    log = dense_log(n_users=2, n_items=3, reps=2)
    seqs, catalog = filter_corpus(log, 3, 3)
    p = tmp_path / "i.tsv"
    write_interactions(seqs, catalog, p)
    again, catalog2 = filter_corpus(load_interactions(p), 3, 3)
    assert [s.merged for s in again] == [s.merged for s in seqs]


def test_metadata_roundtrip(tmp_path):
    catalog = tiny_catalog()
    p = tmp_path / "m.tsv"
    write_metadata(catalog, p)
    meta = load_metadata(p)
    assert meta["x0"] == ("X", "X item 0")
    assert len(meta) == catalog.n_items


def test_split_manifest_roundtrip(tmp_path):
    split = split_temporal(_ten_sequences(), tiny_catalog(), 0.1, 0.1)
    write_split_manifests(split, tmp_path / "splits")
    assert read_split_manifest(tmp_path / "splits" / "test.txt") == ["u9"]
    assert len(read_split_manifest(tmp_path / "splits" / "train.txt")) == 8


def test_corpus_stats_reports_both_averages():
    seqs = [seq_of("u", [(1, "X"), (4, "Y"), (2, "X")])]
    stats = corpus_stats(seqs)
    assert stats["avg_merged_len"] == 3.0
    assert stats["avg_x_len"] == 2.0
    assert stats["avg_y_len"] == 1.0
