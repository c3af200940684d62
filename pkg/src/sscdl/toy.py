"""Synthetic uncertain knowledge graphs with learnable confidence structure.

Confidences come from a hidden bilinear model, squashed so that most facts
have high confidence (as in crawled UKGs).  Only meant for tests, demos and
the built-in diagnostics.
"""
from __future__ import annotations

import numpy as np

from .dataset import DatasetSplit, QuadrupleSet, Vocabulary, split_dataset


def make_toy_ukg(n_entities: int = 50, n_relations: int = 4, n_quads: int = 400, latent: int = 4,
                 seed: int = 0, skew: float = 0.4, relation_effect: float = 0.0) -> tuple:
    """Returns ``(QuadrupleSet, Vocabulary)`` of distinct triples.

    ``relation_effect`` adds a per-relation offset to the hidden score, which
    makes confidences predictable from the relation alone to that degree.
    """
    rng = np.random.default_rng(seed)
    max_q = n_entities * n_entities * n_relations
    if n_quads > max_q // 2:
        raise ValueError("too many quadruples requested for this graph size")
    z = rng.normal(size=(n_entities, latent))
    rel = rng.normal(size=(n_relations, latent))
    codes = rng.choice(max_q, size=n_quads, replace=False)
    h = codes // (n_relations * n_entities)
    r = (codes // n_entities) % n_relations
    t = codes % n_entities
    raw = np.sum(z[h] * rel[r] * z[t], axis=1) / np.sqrt(latent)
    if relation_effect:
        offset = rng.normal(size=n_relations)
        raw = raw + relation_effect * offset[r]
    conf = (1.0 / (1.0 + np.exp(-1.5 * raw))) ** skew
    conf = np.round(conf, 3)
    vocab = Vocabulary([f"e{i}" for i in range(n_entities)], [f"r{i}" for i in range(n_relations)], frozen=True)
    text = [f"{c:.3f}" for c in conf]
    return QuadrupleSet(np.stack([h, r, t], axis=1), conf, text), vocab


def make_toy_split(seed: int = 0, **kw) -> DatasetSplit:
    quads, vocab = make_toy_ukg(seed=seed, **kw)
    return split_dataset(quads, vocab, seed=seed)
