"""Adam training loop with L2 regularization, gradient clipping, early
stopping on validation MRR, and bit-reproducible checkpoints.

All randomness (shuffles, dropout) is keyed from (seed, epoch, batch), so a
(seed, config, data) triple fully determines the resulting checkpoint.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluator
from .autodiff import Tensor, backward
from .corpus import DataSplit, batchify
from .errors import ConfigError, FormatError, ShapeError, XdrecError
from .model import Model, ModelConfig, compute_loss, init_model
from .embeddings import EmbeddingMatrix

CKPT_MAGIC = b"EMFC"
CKPT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    l2: float = 1e-4
    batch_size: int = 256
    epochs: int = 100
    patience: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_grad_norm: float = 5.0
    target: str = "X"
    stop_metric: str = "mrr"  # "mrr" or "loss"

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be nonnegative, got {self.l2}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.stop_metric not in ("mrr", "loss"):
            raise ConfigError(f"stop_metric must be mrr or loss, got {self.stop_metric!r}")
        if self.target not in ("X", "Y"):
            raise ConfigError(f"target must be X or Y, got {self.target!r}")


@dataclass
class EpochRecord:
    epoch: int
    loss_total: float
    loss_x: float
    loss_y: float
    loss_xy: float
    valid_mrr: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    def to_tsv(self, path: str | Path) -> None:
        """Epoch curve as TSV; wall time is deliberately left out so two
        identical runs emit identical bytes."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch\tloss_total\tloss_x\tloss_y\tloss_xy\tvalid_mrr\n")
            for r in self.records:
                fh.write(f"{r.epoch}\t{r.loss_total:.8f}\t{r.loss_x:.8f}\t"
                         f"{r.loss_y:.8f}\t{r.loss_xy:.8f}\t{r.valid_mrr:.8f}\n")


class AdamState:
    def __init__(self, params: dict[str, Tensor]):
        self.step = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update; L2 is added to the gradients here, so
    frozen matrices (never in `params`) are untouched."""
    state.step += 1
    t = state.step
    b1, b2 = config.adam_beta1, config.adam_beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != param {name} shape {p.data.shape}")
        if config.l2 > 0:
            g = g + config.l2 * p.data
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1 ** t)
        v_hat = state.v[name] / (1 - b2 ** t)
        p.data = p.data - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)


def _clip_global(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        factor = np.float32(max_norm / total)
        for name in grads:
            grads[name] = grads[name] * factor


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in params.items()}


def _restore(params: dict[str, Tensor], snap: dict[str, np.ndarray]) -> None:
    for k, p in params.items():
        p.data = snap[k].copy()


def _valid_loss(model: Model, split: DataSplit, config: TrainConfig) -> float:
    batches = batchify(split.valid, config.batch_size, model.config.max_len, seed=0)
    totals = [float(compute_loss(model, b, train_mode=False)[0].data) for b in batches]
    return float(np.mean(totals)) if totals else float("nan")


def train(model: Model, split: DataSplit, config: TrainConfig
          ) -> tuple[Model, TrainHistory]:
    """Optimize in place; returns the model restored to its best epoch."""
    if not split.train:
        raise ConfigError("training split is empty")
    params = model.named_params()
    state = AdamState(params)
    history = TrainHistory()
    best_metric: float | None = None
    best_snap = _snapshot(params)
    since_best = 0

    for epoch in range(config.epochs):
        t0 = time.monotonic()
        batches = batchify(split.train, config.batch_size, model.config.max_len,
                           seed=config.seed + epoch)
        sums = np.zeros(4)
        for bi, batch in enumerate(batches):
            rng = np.random.default_rng([config.seed, epoch, bi])
            total, l_x, l_y, l_xy = compute_loss(model, batch, train_mode=True, rng=rng)
            if not np.isfinite(total.data):
                raise XdrecError(f"non-finite loss at epoch {epoch}, batch {bi}")
            backward(total)
            grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                     for k, p in params.items()}
            _clip_global(grads, config.max_grad_norm)
            adam_step(params, grads, state, config)
            for p in params.values():
                p.grad = None
            sums += [float(total.data), float(l_x.data), float(l_y.data), float(l_xy.data)]
        means = sums / max(len(batches), 1)

        if split.valid:
            valid_mrr = evaluator.evaluate(model, split.valid, config.target).mrr
            metric = valid_mrr if config.stop_metric == "mrr" else -_valid_loss(model, split, config)
        else:
            valid_mrr, metric = float("nan"), None
        history.records.append(EpochRecord(epoch, *means, valid_mrr,
                                           time.monotonic() - t0))

        if metric is None:
            history.best_epoch = epoch
            best_snap = _snapshot(params)
            continue
        if best_metric is None or metric > best_metric:
            best_metric = metric
            history.best_epoch = epoch
            best_snap = _snapshot(params)
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    _restore(params, best_snap)
    return model, history


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(model: Model, path: str | Path) -> None:
    """Serialize config and every tensor (frozen matrices included) so a
    checkpoint is self-contained; byte output is deterministic."""
    config_blob = model.config.to_json().encode("utf-8")
    tensors = model.named_tensors()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, t in tensors.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", t.data.ndim))
            for dim in t.data.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path, catalog) -> Model:
    """Rebuild a model from a checkpoint, validating names and shapes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        if blob[:4] != CKPT_MAGIC:
            raise FormatError(f"{path}: bad magic, not a checkpoint")
        off = 4
        (version,) = struct.unpack_from("<I", blob, off); off += 4
        if version != CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        (clen,) = struct.unpack_from("<I", blob, off); off += 4
        config = ModelConfig.from_json(blob[off:off + clen].decode("utf-8")); off += clen
        (n_tensors,) = struct.unpack_from("<I", blob, off); off += 4
        arrays: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            (nlen,) = struct.unpack_from("<I", blob, off); off += 4
            name = blob[off:off + nlen].decode("utf-8"); off += nlen
            (rank,) = struct.unpack_from("<I", blob, off); off += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, off); off += 8 * rank
            count = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
            off += 4 * count
            arrays[name] = arr.reshape(dims).astype(np.float32)
        if off != len(blob):
            raise FormatError(f"{path}: trailing bytes after tensors")
    except (struct.error, IndexError, ValueError) as exc:
        raise FormatError(f"{path}: truncated or corrupt checkpoint ({exc})") from None

    # a skeleton with the right shapes, then overwrite every tensor
    n_rows = catalog.n_items + 1
    fresh = init_model(config, catalog,
                       EmbeddingMatrix("image", np.zeros((n_rows, config.e), np.float32), True),
                       EmbeddingMatrix("text", np.zeros((n_rows, config.e), np.float32), True),
                       seed=0)
    expected = fresh.named_tensors()
    if set(arrays) != set(expected):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise FormatError(f"{path}: tensor names mismatch (missing={missing}, extra={extra})")
    for name, t in expected.items():
        if arrays[name].shape != t.data.shape:
            raise FormatError(f"{path}: tensor {name} has shape {arrays[name].shape}, "
                              f"expected {t.data.shape}")
        t.data = arrays[name]
    return fresh
