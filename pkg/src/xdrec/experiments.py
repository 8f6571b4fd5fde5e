"""Synthetic-world experiments: overfit sanity run, fusion-vs-ID ablation,
and the full-model gradient check.  Shared by scripts/ and the acceptance
suite so both run the exact same configurations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .corpus import DataSplit, batchify, split_temporal
from .embeddings import SyntheticWorldSpec, gen_synthetic
from .errors import ConfigError
from .evaluator import evaluate
from .model import Model, ModelConfig, compute_loss, init_model
from .trainer import TrainConfig, TrainHistory, train


def transition_matrix(kind: str, n_clusters: int, stay: float = 0.1) -> np.ndarray:
    """identity: never leave; cyclic: advance one cluster with prob 1-stay;
    uniform: jump anywhere."""
    if kind == "identity":
        return np.eye(n_clusters)
    if kind == "uniform":
        return np.full((n_clusters, n_clusters), 1.0 / n_clusters)
    if kind == "cyclic":
        t = np.zeros((n_clusters, n_clusters))
        for c in range(n_clusters):
            t[c, c] = stay
            t[c, (c + 1) % n_clusters] = 1.0 - stay
        return t
    raise ConfigError(f"unknown transition kind {kind!r}")


# ---------------------------------------------------------------------------
# overfit sanity run: a memorizable world the model must drive to MRR >= 0.9
# ---------------------------------------------------------------------------

def overfit_world(seed: int = 0, n_sequences: int = 200):
    """Identity transitions, zero noise, one item per (cluster, domain): each
    user repeats the same two items forever, so the corpus is memorizable."""
    spec = SyntheticWorldSpec(
        n_clusters=25, items_per_domain=25,
        cluster_transition=transition_matrix("identity", 25),
        noise_sigma=0.0, seed=seed, n_users=n_sequences + 20, seq_len=16, dim=32,
    )
    catalog, e_img, e_tex, sequences = gen_synthetic(spec)
    usable = [s for s in sequences if len(s.sub_x) >= 3 and len(s.sub_y) >= 3]
    split = DataSplit(train=usable[:n_sequences], valid=[], test=[], catalog=catalog)
    config = ModelConfig(q=32, e=32, max_len=16, sim_scale=10.0, dropout=0.1)
    return split, config, e_img, e_tex


def run_overfit(seed: int = 0, epochs: int = 200
                ) -> tuple[float, Model, TrainHistory]:
    """Train on the memorizable world and report train-set MRR."""
    split, config, e_img, e_tex = overfit_world(seed)
    model = init_model(config, split.catalog, e_img, e_tex, seed=seed)
    tc = TrainConfig(learning_rate=3e-3, l2=0.0, batch_size=256, epochs=epochs,
                     patience=epochs, seed=seed, target="X")
    model, history = train(model, split, tc)
    mrr = evaluate(model, split.train, "X").mrr
    return mrr, model, history


# ---------------------------------------------------------------------------
# ablation: full three-modality fusion vs ID-only on a planted-cluster world
# ---------------------------------------------------------------------------

@dataclass
class AblationResult:
    seed: int
    full_mrr: float
    id_only_mrr: float

    @property
    def relative_improvement(self) -> float:
        return (self.full_mrr - self.id_only_mrr) / max(self.id_only_mrr, 1e-12)


def ablation_world(seed: int) -> tuple[DataSplit, tuple]:
    """Cluster-cyclic world: frozen image/text features identify the cluster
    that drives transitions, so fusion has signal the cold ID matrix lacks."""
    spec = SyntheticWorldSpec(
        n_clusters=8, items_per_domain=400,
        cluster_transition=transition_matrix("cyclic", 8, stay=0.1),
        noise_sigma=0.1, seed=seed, n_users=2000, seq_len=16, dim=32,
    )
    catalog, e_img, e_tex, sequences = gen_synthetic(spec)
    usable = [s for s in sequences if len(s.sub_x) >= 3 and len(s.sub_y) >= 3]
    split = split_temporal(usable, catalog, valid_frac=0.0, test_frac=0.1)
    return split, (e_img, e_tex)


def run_ablation_arm(split: DataSplit, e_img, e_tex, alpha: float, beta: float,
                     seed: int, epochs: int = 12) -> float:
    config = ModelConfig(q=32, e=32, alpha=alpha, beta=beta, max_len=16,
                         sim_scale=10.0, dropout=0.1)
    model = init_model(config, split.catalog, e_img, e_tex, seed=seed)
    tc = TrainConfig(learning_rate=5e-3, l2=1e-5, batch_size=128, epochs=epochs,
                     patience=epochs, seed=seed, target="X")
    model, _ = train(model, split, tc)
    return evaluate(model, split.test, "X").mrr


def run_ablation(seeds: tuple[int, ...] = (0, 1, 2), epochs: int = 12
                 ) -> list[AblationResult]:
    results = []
    for seed in seeds:
        split, (e_img, e_tex) = ablation_world(seed)
        full = run_ablation_arm(split, e_img, e_tex, 1 / 3, 1 / 3, seed, epochs)
        id_only = run_ablation_arm(split, e_img, e_tex, 1.0, 0.0, seed, epochs)
        results.append(AblationResult(seed, full, id_only))
    return results


# ---------------------------------------------------------------------------
# full-model gradient check
# ---------------------------------------------------------------------------

def gradcheck_full_model(seed: int = 0, max_coords: int = 16,
                         dims: int = 8, items_per_domain: int = 20,
                         seq_len: int = 6) -> tuple[float, float]:
    """Central-difference check of every learnable tensor on the complete
    nine-stream loss, run in float64 shadow mode.  Returns (max relative
    error, wall seconds)."""
    spec = SyntheticWorldSpec(
        n_clusters=4, items_per_domain=items_per_domain,
        cluster_transition=transition_matrix("uniform", 4),
        noise_sigma=0.3, seed=seed, n_users=4, seq_len=seq_len, dim=dims,
    )
    catalog, e_img, e_tex, sequences = gen_synthetic(spec)
    usable = [s for s in sequences if s.sub_x and s.sub_y][:2]
    config = ModelConfig(q=dims, e=dims, max_len=seq_len, sim_scale=5.0, dropout=0.0)
    model = init_model(config, catalog, e_img, e_tex, seed=seed).cast(np.float64)
    batch = batchify(usable, batch_size=2, max_len=seq_len, seed=0)[0]

    def build():
        return compute_loss(model, batch, train_mode=False)[0]

    params = list(model.named_params().values())
    t0 = time.monotonic()
    err = ad.grad_check(build, params, step=1e-5, max_coords=max_coords)
    return err, time.monotonic() - t0
