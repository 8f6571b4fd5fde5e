"""Dense-tensor reverse-mode autodiff for the recommender's forward pass.

Covers exactly what the network needs: (batched) matmul, masked row softmax,
causal single-head attention with a learned positional table, row-wise cosine
similarity, dropout on attention weights, and masked negative log-likelihood.

Values are float32 by default; reduction denominators (softmax sums, norms,
NLL means) accumulate in float64 so distributions sum to 1 well inside 1e-6.
Running the same graph over float64 leaves is the high-precision mode the
gradient checker uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import GraphError, ShapeError


class Tensor:
    """A dense array plus the tape entry that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x, dtype=np.float32) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    if any(_needs_grad(p) for p in parents):
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast axes so a gradient matches its parent's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(grad):
        return _unbroadcast(grad, a.data.shape), _unbroadcast(grad, b.data.shape)

    return _make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(grad):
        return (_unbroadcast(grad * b.data, a.data.shape),
                _unbroadcast(grad * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    data = a.data * np.asarray(c, dtype=a.data.dtype)

    def backward(grad):
        return (grad * c,)

    return _make(data, (a,), backward)


def tsum(a: Tensor) -> Tensor:
    """Sum of all entries as a scalar (float64 accumulation)."""
    a = as_tensor(a)
    data = np.asarray(a.data.sum(dtype=np.float64), dtype=a.data.dtype)

    def backward(grad):
        return (np.broadcast_to(grad, a.data.shape).copy(),)

    return _make(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading batch dimensions broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def backward(grad):
        return (_unbroadcast(grad @ _swap(b.data), a.data.shape),
                _unbroadcast(_swap(a.data) @ grad, b.data.shape))

    return _make(data, (a, b), backward)


def transpose_last(a: Tensor) -> Tensor:
    a = as_tensor(a)

    def backward(grad):
        return (_swap(grad),)

    return _make(_swap(a.data), (a,), backward)


def lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: output[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(f"lookup index out of range for table with {table.data.shape[0]} rows")
    data = table.data[ids]

    def backward(grad):
        g = np.zeros_like(table.data)
        np.add.at(g, ids.reshape(-1), grad.reshape(-1, table.data.shape[-1]))
        return (g,)

    return _make(data, (table,), backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if not (0 <= start <= stop <= a.data.shape[0]):
        raise ShapeError(f"slice [{start}:{stop}] out of range for {a.data.shape}")
    data = a.data[start:stop]

    def backward(grad):
        g = np.zeros_like(a.data)
        g[start:stop] = grad
        return (g,)

    return _make(data, (a,), backward)


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; masked-out entries get probability zero.

    `mask` is boolean with True where an entry participates.  Each row must
    keep at least one live entry.
    """
    x = as_tensor(x)
    v = x.data
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), v.shape)
        if not m.any(axis=-1).all():
            raise GraphError("softmax_rows: fully masked row")
        shifted = np.where(m, v, -np.inf)
    else:
        shifted = v
    mx = shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted - mx)
    s = e.sum(axis=-1, keepdims=True, dtype=np.float64)
    y = (e / s).astype(v.dtype)

    def backward(grad):
        gy = grad * y
        return (gy - y * gy.sum(axis=-1, keepdims=True),)

    return _make(y, (x,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None = None,
            train_mode: bool = False) -> Tensor:
    """Inverted dropout; the identity when train_mode is off or rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise GraphError(f"dropout rate must be in [0, 1), got {rate}")
    if not train_mode or rate == 0.0:
        return x
    if rng is None:
        raise GraphError("dropout in train mode needs an explicit rng")
    keep = (rng.random(x.data.shape) >= rate)
    factor = (keep / (1.0 - rate)).astype(x.data.dtype)
    data = x.data * factor

    def backward(grad):
        return (grad * factor,)

    return _make(data, (x,), backward)


def l2_normalize_rows(x: Tensor) -> Tensor:
    """Unit-normalize the last axis; all-zero rows stay zero."""
    x = as_tensor(x)
    norms = np.sqrt((x.data.astype(np.float64) ** 2).sum(axis=-1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    y = (x.data / safe).astype(x.data.dtype)

    def backward(grad):
        dot = (grad * y).sum(axis=-1, keepdims=True)
        g = (grad - y * dot) / safe
        return (np.where(norms > 0, g, 0.0).astype(x.data.dtype),)

    return _make(y, (x,), backward)


def masked_fill_const(x: Tensor, fill_mask: np.ndarray, value: float) -> Tensor:
    """Overwrite entries where fill_mask is True with a constant."""
    x = as_tensor(x)
    m = np.broadcast_to(np.asarray(fill_mask, dtype=bool), x.data.shape)
    data = np.where(m, np.asarray(value, dtype=x.data.dtype), x.data)

    def backward(grad):
        return (np.where(m, 0.0, grad).astype(x.data.dtype),)

    return _make(data, (x,), backward)


def cosine_sim_rows(h: Tensor, e: Tensor) -> Tensor:
    """Row-wise cosine similarity of each h row against every row of e.

    All-zero rows of e (the pad row, or items with no feature) score -inf so
    downstream masking drops them; an all-zero h row is an error.
    """
    h, e = as_tensor(h), as_tensor(e)
    hd = h.data if h.data.ndim > 1 else h.data.reshape(1, -1)
    if not np.all((hd.astype(np.float64) ** 2).sum(axis=-1) > 0):
        raise GraphError("cosine_sim_rows: zero-norm query vector")
    hn = l2_normalize_rows(h if h.data.ndim > 1 else Tensor(hd, dtype=h.data.dtype))
    en = l2_normalize_rows(e)
    sims = matmul(hn, transpose_last(en))
    dead = (e.data.astype(np.float64) ** 2).sum(axis=-1) == 0
    if dead.any():
        sims = masked_fill_const(sims, np.broadcast_to(dead, sims.data.shape), -np.inf)
    return sims


def masked_nll(probs: Tensor, targets: np.ndarray, mask: np.ndarray | None = None,
               floor: float = 1e-12) -> Tensor:
    """Mean of -log p[target] over unmasked positions, clamped below at floor.

    `probs` rows are distributions over the last axis; `targets`/`mask`
    cover all leading axes flattened.
    """
    probs = as_tensor(probs)
    n = probs.data.shape[-1]
    flat = probs.data.reshape(-1, n)
    t = np.asarray(targets).reshape(-1)
    m = (np.ones(flat.shape[0], dtype=bool) if mask is None
         else np.asarray(mask, dtype=bool).reshape(-1))
    if t.shape[0] != flat.shape[0] or m.shape[0] != flat.shape[0]:
        raise ShapeError("masked_nll: targets/mask length mismatch")
    count = int(m.sum())
    if count == 0:
        raise GraphError("masked_nll: all positions masked")
    safe_t = np.where(m, t, 0)
    picked = flat[np.arange(flat.shape[0]), safe_t]
    clamped = np.maximum(picked.astype(np.float64), floor)
    loss = np.asarray(-(np.log(clamped)[m].sum() / count), dtype=probs.data.dtype)

    def backward(grad):
        g = np.zeros_like(flat)
        coef = np.where(m & (picked > floor), -1.0 / (clamped * count), 0.0)
        g[np.arange(flat.shape[0]), safe_t] = coef * float(grad)
        return (g.reshape(probs.data.shape),)

    return _make(loss, (probs,), backward)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

@dataclass
class AttentionParams:
    """One attention block: projections plus a learned positional table."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    pos: Tensor
    d: int

    def tensors(self) -> Iterator[tuple[str, Tensor]]:
        yield "w_q", self.w_q
        yield "w_k", self.w_k
        yield "w_v", self.w_v
        yield "pos", self.pos


def init_attention_params(d: int, max_len: int, rng: np.random.Generator,
                          dtype=np.float32) -> AttentionParams:
    bound = 1.0 / math.sqrt(d)

    def mk(shape):
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype)

    return AttentionParams(mk((d, d)), mk((d, d)), mk((d, d)), mk((max_len, d)), d)


def attention_block(f: Tensor, params: AttentionParams, causal: bool = True,
                    dropout_rate: float = 0.0, train_mode: bool = False,
                    residual: bool = True, rng: np.random.Generator | None = None,
                    key_mask: np.ndarray | None = None,
                    pos_index: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product self-attention over [..., L, d] inputs.

    key_mask marks real (non-pad) positions; pos_index selects positional
    rows per position (defaults to 0..L-1).  Fully padded query rows attend
    to themselves so the row softmax stays well defined; their outputs are
    masked out of any loss downstream.
    """
    f = as_tensor(f)
    L, d = f.data.shape[-2], f.data.shape[-1]
    if d != params.d:
        raise ShapeError(f"attention dim mismatch: input {d}, params {params.d}")
    if L > params.pos.data.shape[0]:
        raise ShapeError(f"sequence length {L} exceeds positional table {params.pos.data.shape[0]}")
    if not 0.0 <= dropout_rate < 1.0:
        raise GraphError(f"dropout rate must be in [0, 1), got {dropout_rate}")

    if pos_index is None:
        pos_index = np.arange(L)
    f2 = add(f, lookup(params.pos, pos_index))

    q = matmul(f2, params.w_q)
    k = matmul(f2, params.w_k)
    v = matmul(f2, params.w_v)
    scores = scale(matmul(q, transpose_last(k)), 1.0 / math.sqrt(d))

    mask = np.ones(scores.data.shape, dtype=bool)
    if causal:
        mask &= np.tril(np.ones((L, L), dtype=bool))
    if key_mask is not None:
        km = np.asarray(key_mask, dtype=bool)
        mask &= km[..., None, :]
        dead_rows = ~mask.any(axis=-1)
        if dead_rows.any():
            diag = np.zeros((L, L), dtype=bool)
            np.fill_diagonal(diag, True)
            mask |= dead_rows[..., None] & diag

    attn = softmax_rows(scores, mask)
    attn = dropout(attn, dropout_rate, rng=rng, train_mode=train_mode)
    out = matmul(attn, v)
    if residual:
        out = add(out, f2)
    return out


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return topo


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse-accumulate gradients from a scalar loss.

    Populates .grad on every tensor along the recorded graph and returns a
    map from id(leaf) to gradient for the requires_grad leaves.
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    topo = _toposort(loss)
    for node in topo:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            if g is None or not _needs_grad(parent):
                continue
            g = np.asarray(g, dtype=parent.data.dtype)
            parent.grad = g if parent.grad is None else parent.grad + g
    return {id(t): t.grad for t in topo
            if t.requires_grad and not t._parents and t.grad is not None}


def _probe_indices(size: int, max_coords: int) -> np.ndarray:
    if size <= max_coords:
        return np.arange(size)
    return np.unique(np.linspace(0, size - 1, max_coords).astype(np.int64))


def grad_check(build: Callable[[], Tensor], params: Sequence[Tensor],
               step: float = 1e-3, max_coords: int = 64) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    `build` must rebuild the loss from the live parameter values each call
    and be deterministic (dropout off); coordinates are subsampled evenly,
    at most max_coords per tensor.
    """
    first = float(build().data)
    loss = build()
    if float(loss.data) != first:
        raise GraphError("grad_check: build() is not deterministic")
    backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]

    worst = 0.0
    for p, ga_full in zip(params, analytic):
        flat = p.data.reshape(-1)
        ga_flat = ga_full.reshape(-1)
        for i in _probe_indices(flat.size, max_coords):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(build().data)
            flat[i] = orig - step
            fm = float(build().data)
            flat[i] = orig
            gn = (fp - fm) / (2.0 * step)
            ga = float(ga_flat[i])
            rel = abs(ga - gn) / max(1e-8, abs(ga) + abs(gn))
            worst = max(worst, rel)
    return worst
