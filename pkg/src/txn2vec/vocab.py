"""Vocabulary, observed edge set and the smoothed-unigram negative sampler.

Counts are measured over pair appearances (not raw transactions): that is
the distribution the trainer actually draws contexts from.  All three
structures are immutable after construction and safe for concurrent
reads.
"""

from __future__ import annotations

import logging
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .pairing import TransactionPair

logger = logging.getLogger(__name__)

MAX_REDRAWS = 10  # bounded retry before the last draw is accepted anyway


class Vocabulary:
    """Dense ids 0..N-1 for entity keys, with per-id appearance counts."""

    def __init__(self, keys: list[str], counts: np.ndarray):
        self.keys = keys
        self.key_to_id = {k: i for i, k in enumerate(keys)}
        self.counts = counts

    def __len__(self) -> int:
        return len(self.keys)

    def id_of(self, key: str) -> int:
        return self.key_to_id[key]

    def dump(self, fileobj) -> None:
        """Debugging dump: tab-separated ``id\\tentity_key\\tcount``."""
        for i, key in enumerate(self.keys):
            fileobj.write(f"{i}\t{key}\t{int(self.counts[i])}\n")


class EdgeSet:
    """Exact membership over the distinct canonical id pairs seen in training."""

    def __init__(self, edges: set[tuple[int, int]], n_entities: int):
        self._edges = edges
        self.n_entities = n_entities
        self._csr: tuple[np.ndarray, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self._edges)

    def __contains__(self, pair: tuple[int, int]) -> bool:
        a, b = pair
        return ((a, b) if a <= b else (b, a)) in self._edges

    def __iter__(self):
        return iter(self._edges)

    def neighbors_csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted adjacency in CSR form (indptr, indices), built lazily.

        Used by the training kernels, which cannot touch Python sets from
        nogil code; both directions of every edge are materialized.
        """
        if self._csr is None:
            n = self.n_entities
            degree = np.zeros(n + 1, dtype=np.int32)
            for a, b in self._edges:
                degree[a + 1] += 1
                degree[b + 1] += 1
            indptr = np.cumsum(degree, dtype=np.int32)
            indices = np.empty(indptr[-1], dtype=np.int32)
            cursor = indptr[:-1].copy()
            for a, b in self._edges:
                indices[cursor[a]] = b
                cursor[a] += 1
                indices[cursor[b]] = a
                cursor[b] += 1
            for i in range(n):
                indices[indptr[i] : indptr[i + 1]].sort()
            self._csr = (indptr, indices)
        return self._csr


def build_vocab(pairs: Sequence[TransactionPair]) -> tuple[Vocabulary, EdgeSet]:
    """Assign dense ids (first-appearance order) and collect the edge set."""
    if not pairs:
        raise DataError("empty training set: no pairs to build a vocabulary from")
    key_to_id: dict[str, int] = {}
    keys: list[str] = []
    counts: list[int] = []
    edges: set[tuple[int, int]] = set()
    for a, b in pairs:
        ia = key_to_id.get(a)
        if ia is None:
            ia = key_to_id[a] = len(keys)
            keys.append(a)
            counts.append(0)
        ib = key_to_id.get(b)
        if ib is None:
            ib = key_to_id[b] = len(keys)
            keys.append(b)
            counts.append(0)
        counts[ia] += 1
        counts[ib] += 1
        edges.add((ia, ib) if ia <= ib else (ib, ia))
    vocab = Vocabulary(keys, np.asarray(counts, dtype=np.int64))
    return vocab, EdgeSet(edges, len(keys))


class NegativeSamplingTable:
    """Smoothed unigram distribution P(i) ∝ counts[i]**alpha.

    ``draw`` maps a uniform variate through the cumulative distribution;
    rejection against true edges lives in :func:`sample_negatives`.
    """

    def __init__(self, probs: np.ndarray, alpha: float):
        self.probs = probs
        self.alpha = alpha
        cum = np.cumsum(probs)
        cum[-1] = 1.0  # guard the binary search against rounding
        self.cum = cum
        self.escape_count = 0  # bounded-retry escapes (approximate under threads)

    def __len__(self) -> int:
        return len(self.probs)

    def draw(self, rng: np.random.Generator) -> int:
        return int(np.searchsorted(self.cum, rng.random(), side="right"))


def build_sampling_table(vocab: Vocabulary, alpha: float = 0.75) -> NegativeSamplingTable:
    """Standard 3/4-smoothed unigram table (alpha=0 gives uniform)."""
    if len(vocab) == 0:
        raise DataError("empty vocabulary")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    weights = np.power(vocab.counts.astype(np.float64), alpha)
    probs = weights / weights.sum()
    return NegativeSamplingTable(probs, alpha)


def sample_negatives(
    table: NegativeSamplingTable,
    edges: EdgeSet,
    center: int,
    positive: int,
    k: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw k noise ids, rejecting the center, the positive and any true
    neighbor of the center; after MAX_REDRAWS failed redraws the last
    draw is accepted so dense neighborhoods cannot hang the sampler."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    out = np.empty(k, dtype=np.int64)
    for slot in range(k):
        for _attempt in range(MAX_REDRAWS + 1):
            cand = table.draw(rng)
            if cand != center and cand != positive and (center, cand) not in edges:
                break
        else:
            table.escape_count += 1
        out[slot] = cand
    return out
