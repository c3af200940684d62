"""Confidence-scored triple files, vocabularies, splits and negative samplers.

Files are tab-separated ``head \\t relation \\t tail \\t confidence``, one fact
per line.  Quadruples are held column-wise in :class:`QuadrupleSet` so the
samplers and losses can work on whole batches.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class SamplingError(RuntimeError):
    """Negative sampling could not find an unknown corruption."""


class Quadruple(NamedTuple):
    head: int
    relation: int
    tail: int
    confidence: float


class Vocabulary:
    """Bijective token <-> dense index maps for entities and relations.

    A vocabulary is growable while building and can be frozen, after which
    unknown tokens raise :class:`DataError`.
    """

    def __init__(self, entities=(), relations=(), frozen: bool = False):
        self.entities: list = []
        self.relations: list = []
        self._ent: dict = {}
        self._rel: dict = {}
        for e in entities:
            self._add(e, self.entities, self._ent)
        for r in relations:
            self._add(r, self.relations, self._rel)
        self.frozen = frozen

    @staticmethod
    def _add(tok, toks, index):
        if tok not in index:
            index[tok] = len(toks)
            toks.append(tok)
        return index[tok]

    def _lookup(self, tok, toks, index, kind):
        i = index.get(tok)
        if i is not None:
            return i
        if self.frozen:
            raise KeyError(f"unknown {kind} {tok!r}")
        return self._add(tok, toks, index)

    def entity_id(self, tok: str) -> int:
        return self._lookup(tok, self.entities, self._ent, "entity")

    def relation_id(self, tok: str) -> int:
        return self._lookup(tok, self.relations, self._rel, "relation")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def freeze(self) -> "Vocabulary":
        self.frozen = True
        return self

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for tok in self.entities:
            h.update(tok.encode("utf-8") + b"\x00")
        h.update(b"\x01")
        for tok in self.relations:
            h.update(tok.encode("utf-8") + b"\x00")
        return h.hexdigest()

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and (self.entities, self.relations) == (other.entities, other.relations)

    def __repr__(self):
        return f"Vocabulary({self.n_entities} entities, {self.n_relations} relations)"


@dataclass
class QuadrupleSet:
    """Column-wise quadruple list: ``triples`` (N, 3) int64, ``confidence`` (N,)."""

    triples: np.ndarray
    confidence: np.ndarray
    confidence_text: Optional[list] = None

    def __post_init__(self):
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        if len(self.triples) != len(self.confidence):
            raise ValueError("triples and confidences differ in length")

    @classmethod
    def empty(cls) -> "QuadrupleSet":
        return cls(np.zeros((0, 3), dtype=np.int64), np.zeros(0))

    @classmethod
    def from_quadruples(cls, quads) -> "QuadrupleSet":
        quads = list(quads)
        if not quads:
            return cls.empty()
        arr = np.array([(q[0], q[1], q[2]) for q in quads], dtype=np.int64)
        return cls(arr, np.array([q[3] for q in quads], dtype=np.float64))

    def __len__(self) -> int:
        return len(self.triples)

    def __iter__(self) -> Iterator[Quadruple]:
        for (h, r, t), s in zip(self.triples.tolist(), self.confidence.tolist()):
            yield Quadruple(h, r, t, s)

    def __getitem__(self, idx) -> "QuadrupleSet":
        if not isinstance(idx, slice):
            idx = np.asarray(idx)
        text = None
        if self.confidence_text is not None:
            text = [self.confidence_text[i] for i in np.arange(len(self))[idx]]
        return QuadrupleSet(self.triples[idx], self.confidence[idx], text)

    @property
    def heads(self):
        return self.triples[:, 0]

    @property
    def relations(self):
        return self.triples[:, 1]

    @property
    def tails(self):
        return self.triples[:, 2]


def load_quadruples(path, vocab: Optional[Vocabulary] = None) -> tuple:
    """Parse a quadruple file; returns ``(QuadrupleSet, Vocabulary)``.

    A frozen ``vocab`` is reused strictly (unknown tokens are an error); an
    unfrozen one is extended; ``None`` builds a fresh vocabulary.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    vocab = Vocabulary() if vocab is None else vocab
    rows, conf, text, out_of_range = [], [], [], []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            h, r, t, s_text = parts
            try:
                s = float(s_text)
            except ValueError:
                raise DataError(f"{path}:{lineno}: confidence {s_text!r} is not a number") from None
            if not (0.0 <= s <= 1.0):
                out_of_range.append(lineno)
                continue
            try:
                rows.append((vocab.entity_id(h), vocab.relation_id(r), vocab.entity_id(t)))
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: {exc.args[0]} not in the fixed vocabulary") from None
            conf.append(s)
            text.append(s_text)
    if out_of_range:
        raise DataError(
            f"{path}: {len(out_of_range)} line(s) with confidence outside [0, 1] (first at line {out_of_range[0]})"
        )
    qs = QuadrupleSet(np.array(rows, dtype=np.int64).reshape(-1, 3), np.array(conf), text)
    return qs, vocab


def write_quadruples(path, quads: QuadrupleSet, vocab: Vocabulary) -> None:
    """Inverse of :func:`load_quadruples`; original confidence text is kept when known."""
    text = quads.confidence_text or [repr(float(s)) for s in quads.confidence]
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for (h, r, t), s in zip(quads.triples.tolist(), text):
            fh.write(f"{vocab.entities[h]}\t{vocab.relations[r]}\t{vocab.entities[t]}\t{s}\n")


class KnownTriples:
    """Immutable membership index over (h, r, t) triples.

    Triples are encoded as ``(h * n_rel + r) * n_ent + t`` and kept sorted, so
    batch membership is a binary search.
    """

    def __init__(self, triples: np.ndarray, n_entities: int, n_relations: int):
        self.n_entities = int(n_entities)
        self.n_relations = int(n_relations)
        codes = self.encode(np.asarray(triples, dtype=np.int64).reshape(-1, 3))
        self.codes = np.unique(codes)
        self.codes.setflags(write=False)
        self._tails = None

    def encode(self, triples: np.ndarray) -> np.ndarray:
        triples = np.asarray(triples, dtype=np.int64)
        return (triples[..., 0] * self.n_relations + triples[..., 1]) * self.n_entities + triples[..., 2]

    def contains(self, triples: np.ndarray) -> np.ndarray:
        codes = self.encode(triples)
        pos = np.searchsorted(self.codes, codes)
        pos = np.minimum(pos, max(len(self.codes) - 1, 0))
        if not len(self.codes):
            return np.zeros(codes.shape, dtype=bool)
        return self.codes[pos] == codes

    def __contains__(self, triple) -> bool:
        return bool(self.contains(np.asarray(triple)[None, :3])[0])

    def __len__(self) -> int:
        return len(self.codes)

    def tails_of(self, head: int, relation: int) -> np.ndarray:
        """Sorted tails ``t`` with ``(head, relation, t)`` known."""
        lo = (head * self.n_relations + relation) * self.n_entities
        a, b = np.searchsorted(self.codes, [lo, lo + self.n_entities])
        return self.codes[a:b] - lo


@dataclass
class DatasetSplit:
    train: QuadrupleSet
    valid: QuadrupleSet
    test: QuadrupleSet
    vocab: Vocabulary
    known: KnownTriples = field(init=False)

    def __post_init__(self):
        self.known = KnownTriples(
            np.concatenate([self.train.triples, self.valid.triples, self.test.triples]),
            self.vocab.n_entities, self.vocab.n_relations,
        )


def split_sizes(n: int, ratios=(0.85, 0.07, 0.08)) -> tuple:
    """Floor for valid/test (at least one each), remainder to train."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    if n < 3:
        raise DataError(f"need at least 3 quadruples to split, got {n}")
    n_valid = max(1, math.floor(ratios[1] * n + 1e-9))
    n_test = max(1, math.floor(ratios[2] * n + 1e-9))
    return n - n_valid - n_test, n_valid, n_test


def split_dataset(quads: QuadrupleSet, vocab: Vocabulary, ratios=(0.85, 0.07, 0.08), seed: int = 0) -> DatasetSplit:
    """Seeded random split.  Duplicate (h, r, t) rows stay in one split."""
    n_train, n_valid, n_test = split_sizes(len(quads), ratios)
    rng = np.random.default_rng(seed)
    # permute unique triples so duplicates cannot straddle splits
    _, group = np.unique(quads.triples, axis=0, return_inverse=True)
    group = group.reshape(-1)
    order_groups = rng.permutation(group.max() + 1)
    rank = np.empty_like(order_groups)
    rank[order_groups] = np.arange(len(order_groups))
    order = np.lexsort((np.arange(len(quads)), rank[group]))
    g_sorted = rank[group][order]

    def cut(b):
        while 0 < b < len(order) and g_sorted[b] == g_sorted[b - 1]:
            b += 1
        return b

    b1 = cut(n_valid)
    b2 = cut(b1 + n_test)
    valid_idx, test_idx, train_idx = order[:b1], order[b1:b2], order[b2:]
    return DatasetSplit(quads[np.sort(train_idx)], quads[np.sort(valid_idx)], quads[np.sort(test_idx)], vocab)


def load_split(data_dir, seed: int = 0) -> DatasetSplit:
    """Load ``train/valid/test.tsv`` from ``data_dir``, or split ``data.tsv``."""
    data_dir = Path(data_dir)
    names = [data_dir / f"{p}.tsv" for p in ("train", "valid", "test")]
    if all(p.is_file() for p in names):
        vocab = Vocabulary()
        parts = [load_quadruples(p, vocab)[0] for p in names]
        return DatasetSplit(*parts, vocab=vocab.freeze())
    whole = data_dir / "data.tsv"
    if whole.is_file():
        quads, vocab = load_quadruples(whole)
        return split_dataset(quads, vocab.freeze(), seed=seed)
    raise FileNotFoundError(f"{data_dir}: expected train.tsv/valid.tsv/test.tsv or data.tsv")



def load_all(data_dir) -> tuple:
    """Every quadruple under ``data_dir`` as one ``(QuadrupleSet, Vocabulary)``."""
    data_dir = Path(data_dir)
    whole = data_dir / "data.tsv"
    if whole.is_file():
        quads, vocab = load_quadruples(whole)
        return quads, vocab.freeze()
    split = load_split(data_dir)
    parts = (split.train, split.valid, split.test)
    text = None
    if all(p.confidence_text is not None for p in parts):
        text = [c for p in parts for c in p.confidence_text]
    joined = QuadrupleSet(np.concatenate([p.triples for p in parts]),
                          np.concatenate([p.confidence for p in parts]), text)
    return joined, split.vocab


def subsample(quads: QuadrupleSet, vocab: Vocabulary, n: int, seed: int = 0) -> tuple:
    """``n`` rows drawn without replacement, re-indexed over the symbols they use.

    Entities and relations keep their original relative order, so the result
    does not depend on anything but ``seed``.
    """
    if not 0 < n <= len(quads):
        raise DataError(f"cannot draw {n} of {len(quads)} quadruples")
    rows = np.sort(np.random.default_rng(seed).choice(len(quads), size=n, replace=False))
    part = quads[rows]
    ents = np.unique(np.concatenate([part.heads, part.tails]))
    rels = np.unique(part.relations)
    e_map = np.full(vocab.n_entities, -1, dtype=np.int64)
    e_map[ents] = np.arange(len(ents))
    r_map = np.full(vocab.n_relations, -1, dtype=np.int64)
    r_map[rels] = np.arange(len(rels))
    t = part.triples
    triples = np.stack([e_map[t[:, 0]], r_map[t[:, 1]], e_map[t[:, 2]]], axis=1)
    small = Vocabulary([vocab.entities[i] for i in ents], [vocab.relations[i] for i in rels], frozen=True)
    return QuadrupleSet(triples, part.confidence, part.confidence_text), small

MAX_RESAMPLE_ROUNDS = 200


def corrupt(triples: np.ndarray, k: int, n_entities: int, known: KnownTriples, rng: np.random.Generator) -> np.ndarray:
    """``k`` head-or-tail corruptions per triple, none of them known.

    Returns shape ``(len(triples), k, 3)``.  Rejected draws are resampled
    (both the side and the entity) up to a fixed number of rounds.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if k < 1:
        raise ValueError("k must be at least 1")
    out = np.repeat(triples[:, None, :], k, axis=1)
    pending = np.ones(out.shape[:2], dtype=bool)
    for _ in range(MAX_RESAMPLE_ROUNDS):
        rows, cols = np.nonzero(pending)
        if not len(rows):
            return out
        side = np.where(rng.random(len(rows)) < 0.5, 0, 2)
        ent = rng.integers(0, n_entities, size=len(rows))
        cand = triples[rows].copy()
        cand[np.arange(len(rows)), side] = ent
        bad = known.contains(cand) | np.all(cand == triples[rows], axis=1)
        ok = ~bad
        out[rows[ok], cols[ok]] = cand[ok]
        pending[rows[ok], cols[ok]] = False
    raise SamplingError(
        f"{int(pending.sum())} corruption(s) still known after {MAX_RESAMPLE_ROUNDS} resampling rounds"
    )


def sample_ranking_negatives(positive, k: int, vocab: Vocabulary, known: KnownTriples, rng: np.random.Generator) -> np.ndarray:
    """``k`` negatives (k, 3) for one positive triple."""
    return corrupt(np.asarray(positive[:3])[None, :], k, vocab.n_entities, known, rng)[0]


def sample_unlabeled_batch(labeled: QuadrupleSet, vocab: Vocabulary, known: KnownTriples, rng: np.random.Generator) -> np.ndarray:
    """One unknown corruption per labeled quadruple, aligned 1:1, shape (B, 3)."""
    if not len(labeled):
        return np.zeros((0, 3), dtype=np.int64)
    return corrupt(labeled.triples, 1, vocab.n_entities, known, rng)[:, 0, :]


def confidence_histogram(quads: QuadrupleSet, bin_width: float) -> list:
    """Rows ``(bin_lo, bin_hi, count)`` over [0, 1]; the last bin is closed."""
    if not bin_width > 0:
        raise ValueError("bin width must be positive")
    if not len(quads):
        return []
    n_bins = max(1, int(round(1.0 / bin_width)))
    idx = np.minimum(np.floor(quads.confidence / bin_width + 1e-9).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    return [(round(i * bin_width, 12), round(min((i + 1) * bin_width, 1.0), 12), int(c)) for i, c in enumerate(counts)]


def write_histogram_csv(path, rows: list) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("bin_lo,bin_hi,count\n")
        for lo, hi, c in rows:
            fh.write(f"{lo:g},{hi:g},{c}\n")
