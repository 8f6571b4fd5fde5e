"""Batch encoding: metadata (+ optional prompt cache and image dir) into the
engine's image and text embedding files."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import AdapterError
from .backends import make_backend
from .formats import (
    read_cache, read_metadata, write_embedding_file, write_provenance,
)

IMAGE_EXTENSIONS = (".jpg", ".png")


@dataclass
class EncodeJob:
    metadata_path: str
    out_image: str
    out_text: str
    image_dir: str | None = None
    cache_path: str | None = None
    backend: str = "mock"
    mock_dim: int = 512


@dataclass
class EncodeResult:
    n_items: int
    missing_images: list[str] = field(default_factory=list)


def _augmented_text(title: str, response: str | None) -> str:
    if response is None or not response.strip():
        return title
    return f"{title}. {response.strip()}"


def _find_image(image_dir: Path, item_id: str) -> Path | None:
    for ext in IMAGE_EXTENSIONS:
        p = image_dir / f"{item_id}{ext}"
        if p.exists():
            return p
    return None


def encode_batch(job: EncodeJob) -> EncodeResult:
    """One row per catalog item in metadata order; rows unit-normalized.

    Missing images become zero rows and are reported, so text-only corpora
    still encode.
    """
    items = read_metadata(job.metadata_path)
    if not items:
        raise AdapterError(f"{job.metadata_path}: no items")
    backend = make_backend(job.backend, job.mock_dim)

    responses: dict[str, str] = {}
    if job.cache_path:
        for rec in read_cache(job.cache_path):
            if rec.get("response"):
                responses[rec["item_id"]] = rec["response"]

    n, dim = len(items), backend.dim
    text_rows = np.zeros((n + 1, dim), dtype=np.float32)
    image_rows = np.zeros((n + 1, dim), dtype=np.float32)
    missing: list[str] = []
    image_dir = Path(job.image_dir) if job.image_dir else None

    for i, (item_id, _, title) in enumerate(items):
        text = _augmented_text(title if title else item_id, responses.get(item_id))
        text_rows[i + 1] = backend.encode_text(text)
        image = _find_image(image_dir, item_id) if image_dir else None
        if image is not None:
            image_rows[i + 1] = backend.encode_image(image)
        else:
            missing.append(item_id)  # zero row, flagged

    item_ids = [item_id for item_id, _, _ in items]
    write_embedding_file(text_rows, "text", job.out_text, str(job.out_text) + ".idx",
                         item_ids)
    write_embedding_file(image_rows, "image", job.out_image, str(job.out_image) + ".idx",
                         item_ids)
    for out in (job.out_text, job.out_image):
        write_provenance(str(out) + ".provenance.json", {
            "encoder": backend.name,
            "dim": dim,
            "items": n,
            "enriched_texts": len(responses),
        })
    return EncodeResult(n_items=n, missing_images=missing)
