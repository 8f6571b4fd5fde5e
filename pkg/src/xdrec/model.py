"""The fusion network: nine attention-encoded streams scored by cosine
similarity against three embedding matrices, with convex probability fusion,
a multi-stream training loss, and cross-stream score aggregation at serving
time.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
import numpy as np

from . import autodiff as ad
from .autodiff import AttentionParams, Tensor
from .corpus import PAD, Batch, ItemCatalog, StreamBatch, UserSequence
from .embeddings import EmbeddingMatrix
from .errors import ConfigError, EvalError, GraphError, ShapeError

STREAMS = ("X", "Y", "XY")
MODALITIES = ("id", "image", "text")


@dataclass
class ModelConfig:
    q: int = 256
    e: int = 512
    alpha: float = 1.0 / 3.0
    beta: float = 1.0 / 3.0
    lambda1: float = 0.3
    lambda2: float = 0.1
    depth: int = 1
    max_len: int = 50
    sim_scale: float = 10.0
    dropout: float = 0.3
    share_params_per_modality: bool = False
    candidate_scope: str = "domain"  # "domain" or "all"

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta > 1 + 1e-12:
            raise ConfigError(f"fusion weights invalid: alpha={self.alpha} beta={self.beta}")
        if self.sim_scale <= 0:
            raise ConfigError(f"sim_scale must be positive, got {self.sim_scale}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.max_len < 2:
            raise ConfigError(f"max_len must be >= 2, got {self.max_len}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.candidate_scope not in ("domain", "all"):
            raise ConfigError(f"candidate_scope must be 'domain' or 'all', got {self.candidate_scope!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))

    def modality_dim(self, modality: str) -> int:
        return self.q if modality == "id" else self.e


@dataclass
class Scope:
    """A contiguous candidate row range [start, stop) of the catalog."""

    start: int
    stop: int

    @property
    def size(self) -> int:
        return self.stop - self.start

    def local(self, rows: np.ndarray) -> np.ndarray:
        return rows - self.start

    def __eq__(self, other) -> bool:
        return isinstance(other, Scope) and (self.start, self.stop) == (other.start, other.stop)


@dataclass
class ProbVector:
    """A probability distribution over a candidate scope (zero elsewhere)."""

    scope: Scope
    values: np.ndarray

    def to_full(self, n_rows: int) -> np.ndarray:
        full = np.zeros(n_rows, dtype=np.float64)
        full[self.scope.start:self.scope.stop] = self.values
        return full


class ProbSumMonitor:
    """Records |sum - 1| for every probability row the model produces."""

    def __init__(self) -> None:
        self.rows = 0
        self.max_abs_dev = 0.0

    def record(self, probs: np.ndarray) -> None:
        sums = probs.reshape(-1, probs.shape[-1]).sum(axis=1, dtype=np.float64)
        self.rows += sums.size
        dev = float(np.abs(sums - 1.0).max()) if sums.size else 0.0
        self.max_abs_dev = max(self.max_abs_dev, dev)


def scope_for(catalog: ItemCatalog, stream: str) -> Scope:
    if stream == "XY":
        return Scope(1, catalog.n_items + 1)
    lo, hi = catalog.domain_ranges[stream]
    return Scope(lo, hi)


def domain_scope(catalog: ItemCatalog, domain: str) -> Scope:
    lo, hi = catalog.domain_ranges[domain]
    return Scope(lo, hi)


class Model:
    """Parameters plus the forward pass over the nine (stream, modality)
    encoder slots (three when parameters are shared per modality)."""

    def __init__(self, config: ModelConfig, catalog: ItemCatalog, e_id: Tensor,
                 e_img: Tensor, e_tex: Tensor,
                 encoders: dict[tuple[str, str], list[AttentionParams]]):
        self.config = config
        self.catalog = catalog
        self.e_id = e_id
        self.e_img = e_img
        self.e_tex = e_tex
        self.encoders = encoders
        self.prob_monitor: ProbSumMonitor | None = None

    def matrix(self, modality: str) -> Tensor:
        return {"id": self.e_id, "image": self.e_img, "text": self.e_tex}[modality]

    def encoder_stack(self, stream: str, modality: str) -> list[AttentionParams]:
        key = ("*", modality) if self.config.share_params_per_modality else (stream, modality)
        return self.encoders[key]

    def named_params(self) -> dict[str, Tensor]:
        """Learnable tensors in a fixed, checkpoint-stable order."""
        out: dict[str, Tensor] = {"e_id": self.e_id}
        for key in sorted(self.encoders):
            stream, modality = key
            for b, block in enumerate(self.encoders[key]):
                for name, t in block.tensors():
                    out[f"enc/{stream}/{modality}/{b}/{name}"] = t
        return out

    def named_tensors(self) -> dict[str, Tensor]:
        """All matrices including the frozen ones, for checkpointing."""
        out = {"e_id": self.e_id, "e_img": self.e_img, "e_tex": self.e_tex}
        out.update({k: v for k, v in self.named_params().items() if k != "e_id"})
        return out

    def cast(self, dtype) -> "Model":
        """A deep copy with every tensor in the given dtype (float64 shadow
        mode for gradient checking)."""

        def cvt(t: Tensor) -> Tensor:
            return Tensor(t.data.astype(dtype), requires_grad=t.requires_grad, dtype=dtype)

        encoders = {
            key: [AttentionParams(cvt(b.w_q), cvt(b.w_k), cvt(b.w_v), cvt(b.pos), b.d)
                  for b in stack]
            for key, stack in self.encoders.items()
        }
        return Model(self.config, self.catalog, cvt(self.e_id), cvt(self.e_img),
                     cvt(self.e_tex), encoders)


def init_model(config: ModelConfig, catalog: ItemCatalog, e_img: EmbeddingMatrix,
               e_tex: EmbeddingMatrix, seed: int = 0) -> Model:
    """Deterministically initialized model referencing the frozen matrices."""
    n_rows = catalog.n_items + 1
    for name, m in (("e_img", e_img), ("e_tex", e_tex)):
        if m.rows.shape[0] != n_rows:
            raise ShapeError(f"{name} has {m.rows.shape[0]} rows, catalog needs {n_rows}")
        if m.dim != config.e:
            raise ShapeError(f"{name} dim {m.dim} does not match config e={config.e}")

    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(config.q)
    id_rows = rng.uniform(-bound, bound, size=(n_rows, config.q)).astype(np.float32)
    id_rows[0] = 0.0
    e_id = Tensor(id_rows, requires_grad=True)

    encoders: dict[tuple[str, str], list[AttentionParams]] = {}
    stream_keys = ("*",) if config.share_params_per_modality else STREAMS
    for stream in stream_keys:
        for modality in MODALITIES:
            d = config.modality_dim(modality)
            encoders[(stream, modality)] = [
                ad.init_attention_params(d, config.max_len, rng)
                for _ in range(config.depth)
            ]
    return Model(config, catalog, e_id,
                 Tensor(e_img.rows, requires_grad=False),
                 Tensor(e_tex.rows, requires_grad=False), encoders)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def _encode(model: Model, stream: str, modality: str, ids: np.ndarray,
            train_mode: bool, rng: np.random.Generator | None) -> Tensor:
    """Encode padded id rows [B, L] into representations [B, L, d].

    Positional indices are anchored to each row's content offset (pads on
    the left don't shift them), so appending items never disturbs earlier
    positions.
    """
    ids = np.asarray(ids, dtype=np.int64)
    valid = ids != PAD
    if not valid.any(axis=-1).all():
        raise GraphError(f"encode: a row of stream {stream} is entirely padding")
    cum = np.cumsum(valid, axis=-1) - 1
    pos_index = np.where(valid, cum, 0)

    h = ad.lookup(model.matrix(modality), ids)
    for block in model.encoder_stack(stream, modality):
        h = ad.attention_block(h, block, causal=True, dropout_rate=model.config.dropout,
                               train_mode=train_mode, residual=True, rng=rng,
                               key_mask=valid, pos_index=pos_index)
    return h


def encode_stream(model: Model, stream: str, modality: str, ids,
                  train_mode: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Per-position representations [L, d] for one sequence; row t is the
    state used to predict position t+1, and the last row is the sequence
    representation used at inference."""
    if stream not in STREAMS:
        raise ConfigError(f"unknown stream {stream!r}")
    if modality not in MODALITIES:
        raise ConfigError(f"unknown modality {modality!r}")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError("encode_stream takes a flat id list")
    if ids.size and ids.max() > model.catalog.n_items:
        raise ShapeError("id out of catalog range")
    h = _encode(model, stream, modality, ids[None, :], train_mode, rng)
    return _squeeze0(h)


def _squeeze0(t: Tensor) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = t.data[0]
    out.grad = None
    out.requires_grad = False
    if t._backward is not None or t.requires_grad:
        out._parents = (t,)
        out._backward = lambda grad: (grad[None, ...],)
    else:
        out._parents = ()
        out._backward = None
    return out


def _prob_tensor(model: Model, h: Tensor, modality: str, scope: Scope) -> Tensor:
    """softmax(sim_scale * cosine(h, E[scope])) over the last axis."""
    e_scope = ad.slice_rows(model.matrix(modality), scope.start, scope.stop)
    sims = ad.matmul(ad.l2_normalize_rows(h), ad.transpose_last(ad.l2_normalize_rows(e_scope)))
    live = (e_scope.data.astype(np.float64) ** 2).sum(axis=-1) > 0
    mask = None if live.all() else np.broadcast_to(live, sims.data.shape)
    probs = ad.softmax_rows(ad.scale(sims, model.config.sim_scale), mask)
    if model.prob_monitor is not None:
        model.prob_monitor.record(probs.data)
    return probs


def stream_probs(model: Model, h, modality: str, scope: Scope) -> ProbVector:
    """Next-item distribution for one representation vector over a scope."""
    if scope.size <= 0:
        raise ConfigError("empty candidate scope")
    hv = h.data if isinstance(h, Tensor) else np.asarray(h, dtype=np.float32)
    hv = hv.reshape(1, -1)
    if float((hv.astype(np.float64) ** 2).sum()) == 0.0:
        raise GraphError("stream_probs: zero-norm representation")
    probs = _prob_tensor(model, Tensor(hv, dtype=hv.dtype), modality, scope)
    return ProbVector(scope, probs.data[0].astype(np.float64))


def fuse_probs(p_id: ProbVector, p_img: ProbVector, p_tex: ProbVector,
               alpha: float, beta: float) -> ProbVector:
    """Convex combination alpha*id + beta*image + (1-alpha-beta)*text."""
    if not (p_id.scope == p_img.scope == p_tex.scope):
        raise ShapeError("fuse_probs: scopes differ")
    if alpha < 0 or beta < 0 or alpha + beta > 1 + 1e-12:
        raise ConfigError(f"fusion weights invalid: alpha={alpha} beta={beta}")
    values = alpha * p_id.values + beta * p_img.values + (1.0 - alpha - beta) * p_tex.values
    return ProbVector(p_id.scope, values)


def _fusion_weights(config: ModelConfig) -> dict[str, float]:
    return {"id": config.alpha, "image": config.beta,
            "text": 1.0 - config.alpha - config.beta}


def _weighted_sum(parts: list[tuple[Tensor, float]]) -> Tensor:
    out = ad.scale(parts[0][0], parts[0][1])
    for t, w in parts[1:]:
        out = ad.add(out, ad.scale(t, w))
    return out


def _stream_loss(model: Model, sb: StreamBatch, stream: str, train_mode: bool,
                 rng: np.random.Generator | None) -> Tensor:
    scope = scope_for(model.catalog, stream)
    weights = _fusion_weights(model.config)
    # modalities with zero weight contribute nothing; skip their encoders
    parts = [(_prob_tensor(model, _encode(model, stream, m, sb.ids, train_mode, rng),
                           m, scope), w)
             for m, w in weights.items() if w > 0]
    fused = _weighted_sum(parts)
    mask = sb.loss_mask
    local = np.where(mask, scope.local(sb.targets), 0)
    return ad.masked_nll(fused, local, mask)


def compute_loss(model: Model, batch: Batch, train_mode: bool = False,
                 rng: np.random.Generator | None = None
                 ) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Multi-stream objective: L_X + lambda1 * L_Y + lambda2 * L_XY."""
    l_x = _stream_loss(model, batch.x, "X", train_mode, rng)
    l_y = _stream_loss(model, batch.y, "Y", train_mode, rng)
    l_xy = _stream_loss(model, batch.merged, "XY", train_mode, rng)
    total = ad.add(l_x, ad.add(ad.scale(l_y, model.config.lambda1),
                               ad.scale(l_xy, model.config.lambda2)))
    return total, l_x, l_y, l_xy


# ---------------------------------------------------------------------------
# serving
# ---------------------------------------------------------------------------

def _last_state(model: Model, stream: str, modality: str, ids: list[int]) -> np.ndarray:
    ids = ids[-model.config.max_len:]
    h = encode_stream(model, stream, modality, np.asarray(ids, dtype=np.int64))
    return h.data[-1]


def _fused_for_stream(model: Model, stream: str, ids: list[int], scope: Scope) -> ProbVector:
    weights = _fusion_weights(model.config)
    values = np.zeros(scope.size, dtype=np.float64)
    for m, w in weights.items():
        if w > 0:
            values += w * stream_probs(model, _last_state(model, stream, m, ids), m, scope).values
    return ProbVector(scope, values)


def recommend(model: Model, seq: UserSequence, target: str, k: int
              ) -> list[tuple[int, float]]:
    """Top-k target-domain items by the cross-stream aggregated score.

    score(i) = P_target(i) + lambda1 * P_other(i) + lambda2 * P_merged(i),
    with per-domain stream distributions zero-extended outside their scope;
    ties break toward the lower item row.
    """
    if target not in ("X", "Y"):
        raise ConfigError(f"target domain must be X or Y, got {target!r}")
    other = "Y" if target == "X" else "X"
    target_ids = seq.sub(target)
    if not target_ids:
        raise EvalError(f"sequence {seq.user_id!r} has no {target}-domain items")
    other_ids = seq.sub(other)
    merged_ids = [row for row, _ in seq.merged]

    cat = model.catalog
    n_rows = cat.n_items + 1
    if model.config.candidate_scope == "all":
        full_scope = scope_for(cat, "XY")
        scopes = {"target": full_scope, "other": full_scope, "merged": full_scope}
    else:
        scopes = {"target": domain_scope(cat, target),
                  "other": domain_scope(cat, other),
                  "merged": scope_for(cat, "XY")}

    score = np.zeros(n_rows, dtype=np.float64)
    score += _fused_for_stream(model, target, target_ids, scopes["target"]).to_full(n_rows)
    if other_ids:
        p_other = _fused_for_stream(model, other, other_ids, scopes["other"])
        score += model.config.lambda1 * p_other.to_full(n_rows)
    p_merged = _fused_for_stream(model, "XY", merged_ids, scopes["merged"])
    score += model.config.lambda2 * p_merged.to_full(n_rows)

    lo, hi = cat.domain_ranges[target]
    rows = np.arange(lo, hi)
    order = np.lexsort((rows, -score[lo:hi]))
    top = order[:k]
    return [(int(rows[i]), float(score[lo + i])) for i in top]
