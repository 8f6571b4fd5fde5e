"""Embedding matrices: binary file format, loading, and synthetic worlds.

File layout (little-endian): magic `EMB1`, u32 version=1, u8 modality code
(0=id, 1=image, 2=text), u64 rows, u64 dim, then rows*dim float32 row-major.
The index sidecar is a TSV of `item_id<TAB>row_index` with row_index >= 1;
row 0 is the all-zero pad row in every matrix.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import DOMAINS, ItemCatalog, UserSequence, make_sequence
from .errors import ConfigError, FormatError

MAGIC = b"EMB1"
VERSION = 1
MODALITIES = ("id", "image", "text")
MODALITY_CODES = {"id": 0, "image": 1, "text": 2}
_CODE_NAMES = {v: k for k, v in MODALITY_CODES.items()}

DEFAULT_ID_DIM = 256
DEFAULT_FEATURE_DIM = 512


@dataclass
class EmbeddingMatrix:
    modality: str
    rows: np.ndarray  # (n_items + 1) x dim float32; row 0 is the pad row
    frozen: bool

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @property
    def n_items(self) -> int:
        return self.rows.shape[0] - 1

    def validate(self) -> None:
        if self.modality not in MODALITIES:
            raise ConfigError(f"unknown modality {self.modality!r}")
        if self.rows.dtype != np.float32 or self.rows.ndim != 2:
            raise FormatError("embedding rows must be a 2-d float32 array")
        if not np.isfinite(self.rows).all():
            bad = int(np.argwhere(~np.isfinite(self.rows).all(axis=1))[0][0])
            raise FormatError(f"non-finite entry in row {bad}")
        if np.any(self.rows[0] != 0):
            raise FormatError("pad row 0 must be all zeros")


def _renormalize(rows: np.ndarray) -> np.ndarray:
    """Unit-normalize rows whose norm is off by more than 1e-6; rows already
    unit (or all-zero) are left bit-identical."""
    norms = np.sqrt((rows.astype(np.float64) ** 2).sum(axis=1))
    off = (norms > 0) & (np.abs(norms - 1.0) > 1e-6)
    if off.any():
        rows = rows.copy()
        rows[off] = (rows[off] / norms[off, None]).astype(np.float32)
    return rows


def write_matrix(m: EmbeddingMatrix, data_path: str | Path, index_path: str | Path,
                 catalog: ItemCatalog) -> None:
    """Serialize a matrix and its item_id -> row sidecar; byte-deterministic."""
    m.validate()
    if m.n_items != catalog.n_items:
        raise FormatError(f"matrix has {m.n_items} items, catalog has {catalog.n_items}")
    rows, dim = m.rows.shape
    header = MAGIC + struct.pack("<IBQQ", VERSION, MODALITY_CODES[m.modality], rows, dim)
    with open(data_path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(m.rows, dtype="<f4").tobytes())
    with open(index_path, "w", encoding="utf-8") as fh:
        for i, (item_id, _, _) in enumerate(catalog.items):
            fh.write(f"{item_id}\t{i + 1}\n")


def _read_header(fh, path) -> tuple[str, int, int]:
    head = fh.read(4 + 4 + 1 + 8 + 8)
    if len(head) < 25 or head[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, not an embedding file")
    version, code, rows, dim = struct.unpack("<IBQQ", head[4:])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code not in _CODE_NAMES:
        raise FormatError(f"{path}: unknown modality code {code}")
    return _CODE_NAMES[code], int(rows), int(dim)


def load_matrix(data_path: str | Path, index_path: str | Path, catalog: ItemCatalog,
                expected_dim: int | None = None) -> EmbeddingMatrix:
    """Load a matrix, permute rows into catalog order, and validate.

    Image/text rows are unit-normalized on load (no-op when already unit);
    the pad row is forced to zero.
    """
    with open(data_path, "rb") as fh:
        modality, rows, dim = _read_header(fh, data_path)
        if expected_dim is not None and dim != expected_dim:
            raise FormatError(f"{data_path}: dim {dim} does not match configured {expected_dim}")
        payload = fh.read(rows * dim * 4)
        if len(payload) != rows * dim * 4:
            raise FormatError(f"{data_path}: truncated payload")
        raw = np.frombuffer(payload, dtype="<f4").reshape(rows, dim).astype(np.float32)

    index: dict[str, int] = {}
    with open(index_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{index_path}: line {lineno}: expected item_id<TAB>row")
            item_id, row_text = parts
            row = int(row_text)
            if row < 1 or row >= rows:
                raise FormatError(f"{index_path}: line {lineno}: row {row} out of range")
            if item_id in index:
                raise FormatError(f"{index_path}: duplicate item {item_id!r}")
            index[item_id] = row

    out = np.zeros((catalog.n_items + 1, dim), dtype=np.float32)
    for item_id, cat_row in catalog.index_of.items():
        if item_id not in index:
            raise FormatError(f"{data_path}: index is missing catalog item {item_id!r}")
        out[cat_row] = raw[index[item_id]]
    bad = np.argwhere(~np.isfinite(out).all(axis=1))
    if bad.size:
        raise FormatError(f"{data_path}: non-finite entry in row {int(bad[0][0])}")
    if modality in ("image", "text"):
        out = _renormalize(out)
    out[0] = 0.0
    m = EmbeddingMatrix(modality, out, frozen=modality != "id")
    m.validate()
    return m


def init_id_matrix(n_items: int, dim: int, seed: int) -> EmbeddingMatrix:
    """Learnable ID matrix, uniform in [-1/sqrt(dim), +1/sqrt(dim)], pad row zero."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(dim)
    rows = rng.uniform(-bound, bound, size=(n_items + 1, dim)).astype(np.float32)
    rows[0] = 0.0
    return EmbeddingMatrix("id", rows, frozen=False)


# ---------------------------------------------------------------------------
# synthetic worlds
# ---------------------------------------------------------------------------

@dataclass
class SyntheticWorldSpec:
    """A planted-structure world: items cluster, users walk between clusters."""

    n_clusters: int
    items_per_domain: int
    cluster_transition: np.ndarray  # n_clusters x n_clusters, row-stochastic
    noise_sigma: float = 0.0
    seed: int = 0
    n_users: int = 100
    seq_len: int = 20
    dim: int = 64

    def validate(self) -> None:
        t = np.asarray(self.cluster_transition, dtype=np.float64)
        if t.shape != (self.n_clusters, self.n_clusters):
            raise ConfigError(f"transition matrix must be {self.n_clusters}x{self.n_clusters}")
        if np.abs(t.sum(axis=1) - 1.0).max() > 1e-9:
            raise ConfigError("transition rows must each sum to 1")
        if (t < 0).any():
            raise ConfigError("transition entries must be nonnegative")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")
        if self.n_clusters > self.dim:
            raise ConfigError(f"cannot build {self.n_clusters} orthogonal centroids in dim {self.dim}")
        if self.items_per_domain < 1 or self.n_users < 1 or self.seq_len < 1:
            raise ConfigError("items_per_domain, n_users, seq_len must be positive")


def gen_synthetic(spec: SyntheticWorldSpec) -> tuple[ItemCatalog, EmbeddingMatrix,
                                                     EmbeddingMatrix, list[UserSequence]]:
    """Deterministic synthetic catalog, frozen features, and user walks.

    Item k of a domain belongs to cluster k mod n_clusters; its image/text
    embedding is the cluster's basis vector plus Gaussian noise, renormalized.
    Each user does a Markov walk over clusters, flipping domains with
    probability 0.5 and emitting a uniform item of the current cluster.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    m, c = spec.items_per_domain, spec.n_clusters
    width = len(str(max(m - 1, 1)))

    items: list[tuple[str, str, str]] = []
    clusters: list[int] = []
    for domain in DOMAINS:
        for k in range(m):
            cluster = k % c
            item_id = f"{domain}{k:0{width}d}"
            title = f"Synthetic {domain} item {k:0{width}d} from cluster {cluster}"
            items.append((item_id, domain, title))
            clusters.append(cluster)
    index_of = {item_id: i + 1 for i, (item_id, _, _) in enumerate(items)}
    catalog = ItemCatalog(items, index_of, {"X": (1, 1 + m), "Y": (1 + m, 1 + 2 * m)})

    def feature_matrix(modality: str) -> EmbeddingMatrix:
        rows = np.zeros((2 * m + 1, spec.dim), dtype=np.float32)
        for i, cluster in enumerate(clusters):
            vec = np.zeros(spec.dim)
            vec[cluster] = 1.0
            if spec.noise_sigma > 0:
                vec = vec + rng.normal(0.0, spec.noise_sigma, size=spec.dim)
                vec = vec / np.linalg.norm(vec)
            rows[i + 1] = vec.astype(np.float32)
        return EmbeddingMatrix(modality, rows, frozen=True)

    e_img = feature_matrix("image")
    e_tex = feature_matrix("text")

    # row indices of each (domain, cluster) bucket, for uniform emission
    by_bucket: dict[tuple[str, int], list[int]] = {}
    for i, ((_, domain, _), cluster) in enumerate(zip(items, clusters)):
        by_bucket.setdefault((domain, cluster), []).append(i + 1)

    transition = np.asarray(spec.cluster_transition, dtype=np.float64)
    sequences: list[UserSequence] = []
    uw = len(str(max(spec.n_users - 1, 1)))
    for u in range(spec.n_users):
        cluster = int(rng.integers(c))
        merged: list[tuple[int, str]] = []
        for t in range(spec.seq_len):
            domain = DOMAINS[int(rng.integers(2))]
            bucket = by_bucket[(domain, cluster)]
            row = bucket[int(rng.integers(len(bucket)))]
            merged.append((row, domain))
            cluster = int(rng.choice(c, p=transition[cluster]))
        sequences.append(make_sequence(f"u{u:0{uw}d}", merged, list(range(spec.seq_len))))
    return catalog, e_img, e_tex, sequences
