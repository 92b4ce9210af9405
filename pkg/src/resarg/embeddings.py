"""Pre-trained word vectors, vocabulary construction, sequence encoding.

The table matrix is frozen: row 0 is the all-zero padding row, corpus
tokens missing from the pretrained file get seed-driven random rows drawn
uniformly from [-0.05, 0.05] so their norms stay comparable to pretrained
rows.  Matching is case-sensitive first, lowercase as fallback.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence

import numpy as np

log = logging.getLogger(__name__)


class EmbeddingError(ValueError):
    pass


@dataclass
class PretrainedVectors:
    vectors: Dict[str, np.ndarray]
    dim: int


def load_vectors(path, expected_dim: int = 300) -> PretrainedVectors:
    """Read a text vector file: one ``token v1 ... v_dim`` line per token.

    Lines with the wrong field count raise, naming the line; duplicate
    tokens keep their first occurrence with a warning.
    """
    vectors: Dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            fields = line.rstrip("\n").split()
            if not fields:
                continue
            if len(fields) != expected_dim + 1:
                raise EmbeddingError(
                    f"line {lineno}: expected {expected_dim + 1} fields, "
                    f"got {len(fields)}")
            token = fields[0]
            if token in vectors:
                warnings.warn(f"duplicate token {token!r} at line {lineno}; "
                              "keeping first occurrence")
                continue
            vectors[token] = np.array([float(x) for x in fields[1:]],
                                      dtype=np.float64)
    return PretrainedVectors(vectors=vectors, dim=expected_dim)


@dataclass
class EmbeddingTable:
    """Frozen token -> row lookup; row ``pad_index`` is exactly zero."""

    vocab: Dict[str, int]
    matrix: np.ndarray
    oov_rows: frozenset
    pad_index: int = 0
    trainable: bool = False

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row_of(self, token: str) -> int:
        idx = self.vocab.get(token)
        if idx is None:
            idx = self.vocab.get(token.lower())
        if idx is None:
            raise KeyError(token)
        return idx

    def lookup(self, token: str) -> np.ndarray:
        return self.matrix[self.row_of(token)]


OOV_LOW, OOV_HIGH = -0.05, 0.05


def build_table(corpus_tokens: Iterable[str],
                pretrained: PretrainedVectors | None,
                seed: int, dim: int = 300) -> EmbeddingTable:
    """Vocabulary over the corpus tokens, in first-seen order.

    Deterministic in (token order, pretrained table, seed): out-of-vocabulary
    rows are drawn from one seeded generator in vocabulary order.
    """
    if pretrained is not None and pretrained.dim != dim:
        raise EmbeddingError(
            f"pretrained dim {pretrained.dim} != requested dim {dim}")
    ordered: List[str] = []
    seen = set()
    for tok in corpus_tokens:
        if tok not in seen:
            seen.add(tok)
            ordered.append(tok)

    rng = np.random.default_rng(seed)
    rows = [np.zeros(dim, dtype=np.float64)]  # pad row
    vocab: Dict[str, int] = {}
    oov = set()
    lookup = pretrained.vectors if pretrained is not None else {}
    for tok in ordered:
        idx = len(rows)
        vec = lookup.get(tok)
        if vec is None:
            vec = lookup.get(tok.lower())
        if vec is None:
            vec = rng.uniform(OOV_LOW, OOV_HIGH, size=dim)
            oov.add(idx)
        rows.append(np.asarray(vec, dtype=np.float64))
        vocab[tok] = idx
    matrix = np.vstack(rows) if rows else np.zeros((1, dim))
    if oov:
        log.info("embedding table: %d/%d tokens out of vocabulary",
                 len(oov), len(ordered))
    return EmbeddingTable(vocab=vocab, matrix=matrix, oov_rows=frozenset(oov))


@dataclass(frozen=True)
class TokenSequence:
    """Padded id sequence with its validity mask."""

    ids: tuple
    mask: tuple
    true_length: int


def encode(tokens: Sequence[str], table: EmbeddingTable, T: int) -> TokenSequence:
    """Encode one component's tokens to padded ids + mask of length T.

    Empty components are corpus-invariant violations and rejected here;
    over-length components (possible when a trained model meets new data)
    are tail-truncated with a warning.
    """
    if not tokens:
        raise EmbeddingError("cannot encode an empty component")
    if len(tokens) > T:
        warnings.warn(f"component of {len(tokens)} tokens truncated to T={T}")
        tokens = tokens[:T]
    ids = [table.row_of(t) for t in tokens]
    n = len(ids)
    ids = ids + [table.pad_index] * (T - n)
    mask = [1] * n + [0] * (T - n)
    return TokenSequence(ids=tuple(ids), mask=tuple(mask), true_length=n)
