"""Merchant co-occurrence pair generation from per-account time windows.

Each emitted pair is one positive training example; repeated pairs encode
edge weight by multiplicity, so duplicates are deliberately preserved.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

from .ingest import ResolvedTransaction

logger = logging.getLogger(__name__)

GROUPING_KEYS = ("account", "merchant")


class TransactionPair(NamedTuple):
    entity_a: str
    entity_b: str


def make_pair(a: str, b: str) -> TransactionPair:
    """Canonical unordered pair: entity_a <= entity_b lexicographically."""
    return TransactionPair(a, b) if a <= b else TransactionPair(b, a)


@dataclass(frozen=True, slots=True)
class PairingConfig:
    window_seconds: int
    grouping_key: str = "account"
    max_fanout: Optional[int] = 50  # None = unbounded

    def __post_init__(self):
        if self.window_seconds < 1:
            raise ValueError(f"window_seconds must be >= 1, got {self.window_seconds}")
        if self.grouping_key not in GROUPING_KEYS:
            raise ValueError(f"grouping_key must be one of {GROUPING_KEYS}")
        if self.max_fanout is not None and self.max_fanout < 1:
            raise ValueError(f"max_fanout must be >= 1, got {self.max_fanout}")


def generate_pairs(
    txns: Sequence[ResolvedTransaction], cfg: PairingConfig
) -> list[TransactionPair]:
    """Emit co-occurrence pairs from time-windowed transactions.

    With ``grouping_key="account"`` transactions are grouped per account
    and merchant pairs are emitted; ``"merchant"`` is the mirror
    projection producing account pairs.  For each anchor transaction the
    later transactions of the same group within ``window_seconds``
    (inclusive) contribute one pair each, up to ``max_fanout`` per
    anchor; self-pairs are skipped.
    """
    if cfg.grouping_key == "account":
        rows = [(t.account_id, t.timestamp, t.entity_key) for t in txns]
    else:
        rows = [(t.entity_key, t.timestamp, t.account_id) for t in txns]
    rows.sort(key=lambda r: (r[0], r[1]))
    fanout = cfg.max_fanout if cfg.max_fanout is not None else float("inf")
    window = cfg.window_seconds
    pairs: list[TransactionPair] = []
    n = len(rows)
    for i in range(n):
        group, ts, value = rows[i]
        emitted = 0
        j = i + 1
        while j < n and rows[j][0] == group and rows[j][1] - ts <= window:
            other = rows[j][2]
            if other != value:
                pairs.append(make_pair(value, other))
                emitted += 1
                if emitted >= fanout:
                    break
            j += 1
    return pairs


@dataclass(frozen=True, slots=True)
class PairStats:
    n_entities: int
    n_edges: int
    n_pairs: int
    weight_histogram: dict[int, int] = field(default_factory=dict)


def pair_stats(pairs: Iterable[TransactionPair]) -> PairStats:
    """Summarize a pair multiset (distinct entities/edges, weight histogram)."""
    edge_weights = Counter(make_pair(a, b) for a, b in pairs)
    entities = set()
    for a, b in edge_weights:
        entities.add(a)
        entities.add(b)
    histogram = Counter(edge_weights.values())
    return PairStats(
        n_entities=len(entities),
        n_edges=len(edge_weights),
        n_pairs=sum(edge_weights.values()),
        weight_histogram=dict(sorted(histogram.items())),
    )


def write_pairs(pairs: Iterable[TransactionPair], fileobj) -> int:
    """Write pairs as tab-separated lines; returns the number written."""
    n = 0
    for a, b in pairs:
        fileobj.write(f"{a}\t{b}\n")
        n += 1
    return n


def read_pairs(fileobj) -> list[TransactionPair]:
    pairs = []
    for lineno, line in enumerate(fileobj, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            from .errors import DataError

            raise DataError(f"pairs file line {lineno}: expected 2 columns")
        pairs.append(TransactionPair(parts[0], parts[1]))
    return pairs
