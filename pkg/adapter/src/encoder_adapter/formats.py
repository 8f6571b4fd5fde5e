"""Writers and readers for the engine's file interfaces.

The adapter talks to the engine only through files: the metadata TSV it
consumes, the prompt-cache JSONL it reads and updates, and the EMB1
embedding binaries (+ index sidecars) it produces.  Embedding writes go
through a temp file and an atomic rename.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from . import AdapterError

EMB_MAGIC = b"EMB1"
EMB_VERSION = 1
MODALITY_CODES = {"id": 0, "image": 1, "text": 2}


def read_metadata(path: str | Path) -> list[tuple[str, str, str]]:
    """Item metadata TSV rows as (item_id, domain, title), file order kept."""
    items = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise AdapterError(f"{path}: line {lineno}: expected 3 fields")
            item_id, domain, title = parts
            if item_id in seen:
                raise AdapterError(f"{path}: duplicate item {item_id!r}")
            seen.add(item_id)
            items.append((item_id, domain, title))
    return items


def _atomic_write(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_embedding_file(rows: np.ndarray, modality: str, data_path: str | Path,
                         index_path: str | Path, item_ids: list[str]) -> None:
    """EMB1 binary plus sidecar; row 0 is the pad row, items start at row 1."""
    data_path, index_path = Path(data_path), Path(index_path)
    rows = np.ascontiguousarray(rows, dtype="<f4")
    if rows.ndim != 2 or rows.shape[0] != len(item_ids) + 1:
        raise AdapterError(f"need {len(item_ids) + 1} rows (pad + items), got {rows.shape}")
    if not np.isfinite(rows).all():
        raise AdapterError("non-finite embedding value")
    header = EMB_MAGIC + struct.pack("<IBQQ", EMB_VERSION, MODALITY_CODES[modality],
                                     rows.shape[0], rows.shape[1])
    _atomic_write(data_path, header + rows.tobytes())
    sidecar = "".join(f"{item_id}\t{i + 1}\n" for i, item_id in enumerate(item_ids))
    _atomic_write(index_path, sidecar.encode("utf-8"))


def write_provenance(path: str | Path, info: dict) -> None:
    _atomic_write(Path(path), (json.dumps(info, sort_keys=True, indent=2) + "\n").encode())


# --- prompt cache (JSON lines, engine field order first) -------------------

CACHE_FIELDS = ("item_id", "command", "response", "provider", "created_at",
                "template_hash")


def read_cache(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AdapterError(f"{path}: line {lineno}: bad JSON ({exc})") from None
            if "item_id" not in obj or "command" not in obj:
                raise AdapterError(f"{path}: line {lineno}: not a prompt record")
            records.append(obj)
    return records


def write_cache(records: list[dict], path: str | Path) -> None:
    lines = []
    for rec in records:
        ordered = {k: rec.get(k) for k in CACHE_FIELDS}
        ordered.update({k: v for k, v in rec.items() if k not in CACHE_FIELDS})
        lines.append(json.dumps(ordered))
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))
