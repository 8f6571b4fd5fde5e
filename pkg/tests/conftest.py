import numpy as np
import pytest

from xdrec.corpus import ItemCatalog, make_sequence
from xdrec.embeddings import EmbeddingMatrix
from xdrec.model import ModelConfig, init_model


def tiny_catalog(n_x=3, n_y=3) -> ItemCatalog:
    items = [(f"x{i}", "X", f"X item {i}") for i in range(n_x)]
    items += [(f"y{i}", "Y", f"Y item {i}") for i in range(n_y)]
    index_of = {item_id: i + 1 for i, (item_id, _, _) in enumerate(items)}
    return ItemCatalog(items, index_of, {"X": (1, 1 + n_x), "Y": (1 + n_x, 1 + n_x + n_y)})


def random_features(n_items: int, dim: int, modality: str, seed: int) -> EmbeddingMatrix:
    rng = np.random.default_rng(seed)
    rows = rng.normal(size=(n_items + 1, dim)).astype(np.float32)
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    rows[0] = 0.0
    return EmbeddingMatrix(modality, rows, frozen=True)


@pytest.fixture
def small_world():
    """A 3+3 item catalog with a deterministic 4-dim model."""
    catalog = tiny_catalog()
    config = ModelConfig(q=4, e=4, max_len=8, sim_scale=5.0, dropout=0.0)
    e_img = random_features(catalog.n_items, 4, "image", seed=11)
    e_tex = random_features(catalog.n_items, 4, "text", seed=12)
    model = init_model(config, catalog, e_img, e_tex, seed=7)
    return catalog, model


def seq_of(user_id, rows_domains, ts=None):
    ts = ts if ts is not None else list(range(len(rows_domains)))
    return make_sequence(user_id, rows_domains, ts)
