import numpy as np
import pytest

from encoder_adapter import AdapterError
from encoder_adapter.backends import MockBackend, make_backend
from encoder_adapter.cli import dispatch
from encoder_adapter.encode import EncodeJob, encode_batch
from encoder_adapter.formats import read_metadata, write_embedding_file


def write_meta(tmp_path, rows=None):
    rows = rows or [("x0", "X", "First widget"), ("x1", "X", "Second widget"),
                    ("y0", "Y", "A novel"), ("y1", "Y", "Another novel")]
    p = tmp_path / "metadata.tsv"
    p.write_text("".join(f"{i}\t{d}\t{t}\n" for i, d, t in rows))
    return p


def job_for(tmp_path, **kw):
    meta = write_meta(tmp_path)
    return EncodeJob(metadata_path=str(meta),
                     out_image=str(tmp_path / "img.bin"),
                     out_text=str(tmp_path / "tex.bin"),
                     mock_dim=kw.pop("dim", 16), **kw)


def test_mock_backend_deterministic():
    b = MockBackend(dim=8)
    assert np.array_equal(b.encode_text("hello"), b.encode_text("hello"))
    assert not np.array_equal(b.encode_text("hello"), b.encode_text("other"))
    assert abs(np.linalg.norm(b.encode_text("hello")) - 1.0) < 1e-6


def test_encode_twice_byte_identical(tmp_path):
    job = job_for(tmp_path)
    encode_batch(job)
    first = {p.name: p.read_bytes() for p in tmp_path.glob("*.bin*")}
    encode_batch(job)
    second = {p.name: p.read_bytes() for p in tmp_path.glob("*.bin*")}
    assert first == second and first


def test_encode_missing_images_zero_rows_flagged(tmp_path):
    images = tmp_path / "imgs"
    images.mkdir()
    (images / "x0.jpg").write_bytes(b"fake-jpeg-bytes")
    job = job_for(tmp_path, image_dir=str(images))
    result = encode_batch(job)
    assert sorted(result.missing_images) == ["x1", "y0", "y1"]
    raw = np.frombuffer((tmp_path / "img.bin").read_bytes()[25:], dtype="<f4")
    rows = raw.reshape(5, 16)
    assert np.any(rows[1] != 0)        # x0 has an image
    assert np.all(rows[2:] == 0)       # the rest are zero rows
    assert np.all(rows[0] == 0)        # pad row


def test_encode_uses_cache_responses(tmp_path):
    import json
    cache = tmp_path / "cache.jsonl"
    cache.write_text(json.dumps({"item_id": "x0", "command": "c",
                                 "response": "rugged everyday widget"}) + "\n")
    with_cache = job_for(tmp_path, cache_path=str(cache))
    encode_batch(with_cache)
    enriched = (tmp_path / "tex.bin").read_bytes()
    without = job_for(tmp_path)
    encode_batch(without)
    plain = (tmp_path / "tex.bin").read_bytes()
    assert enriched != plain  # augmented text changes the x0 row


def test_encode_rows_unit_norm(tmp_path):
    encode_batch(job_for(tmp_path))
    raw = np.frombuffer((tmp_path / "tex.bin").read_bytes()[25:], dtype="<f4")
    rows = raw.reshape(5, 16)
    norms = np.linalg.norm(rows[1:].astype(np.float64), axis=1)
    assert np.abs(norms - 1.0).max() < 1e-6


def test_encode_writes_provenance(tmp_path):
    import json
    encode_batch(job_for(tmp_path))
    info = json.loads((tmp_path / "tex.bin.provenance.json").read_text())
    assert info["encoder"] == "mock-hash-v1" and info["dim"] == 16


def test_encode_empty_metadata_errors(tmp_path):
    p = tmp_path / "metadata.tsv"
    p.write_text("")
    with pytest.raises(AdapterError):
        encode_batch(EncodeJob(str(p), str(tmp_path / "a"), str(tmp_path / "b")))


def test_read_metadata_rejects_duplicates(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("a\tX\tA\na\tX\tA\n")
    with pytest.raises(AdapterError, match="duplicate"):
        read_metadata(p)


def test_write_embedding_rejects_nonfinite(tmp_path):
    rows = np.zeros((2, 4), dtype=np.float32)
    rows[1, 0] = np.nan
    with pytest.raises(AdapterError):
        write_embedding_file(rows, "text", tmp_path / "e.bin", tmp_path / "e.idx", ["a"])


def test_pretrained_backend_offline_message():
    with pytest.raises(AdapterError, match="mock"):
        make_backend("pretrained", 512)


def test_cli_encode_warns_on_missing_images(tmp_path, capsys):
    meta = write_meta(tmp_path)
    images = tmp_path / "imgs"
    images.mkdir()
    (images / "x0.png").write_bytes(b"png-bytes")
    code = dispatch(["encode", "--metadata", str(meta),
                     "--out-img", str(tmp_path / "i.bin"),
                     "--out-tex", str(tmp_path / "t.bin"),
                     "--images", str(images), "--dim", "8"])
    captured = capsys.readouterr()
    assert code == 0
    assert "x1" in captured.err and "zero rows" in captured.err
