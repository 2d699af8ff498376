"""Transaction ingestion: CSV parsing, merchant entity resolution, channel
split and low-frequency filtering.

The input format is a UTF-8 CSV with header
``account_id,merchant_raw,merchant_brand,zip,timestamp,amount,channel,fraud_label``.
Parsing streams rows, so peak memory does not grow with file size; the
later stages operate on materialized lists (desk scale).
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, TextIO

from .errors import DataError

logger = logging.getLogger(__name__)

CHANNELS = ("online", "offline")
RESOLUTION_MODES = ("raw_plus_zip", "brand")

TRANSACTIONS_HEADER = [
    "account_id",
    "merchant_raw",
    "merchant_brand",
    "zip",
    "timestamp",
    "amount",
    "channel",
    "fraud_label",
]

_WS = re.compile(r"\s+")


@dataclass(frozen=True, slots=True)
class Transaction:
    account_id: str
    merchant_raw: str
    merchant_brand: str
    zip: str
    timestamp: int
    amount: float
    channel: str
    fraud_label: Optional[bool] = None


@dataclass(frozen=True, slots=True)
class ResolvedTransaction:
    account_id: str
    entity_key: str
    timestamp: int
    channel: str


def _normalize_key(name: str) -> str:
    """Collapse whitespace runs to single underscores (embedding files are
    space-delimited, so keys must not contain whitespace)."""
    return _WS.sub("_", name.strip())


def _parse_row(row: list[str], infer_channel: bool) -> Transaction:
    account_id, merchant_raw, merchant_brand, zip_code, ts, amount, channel, fraud = row
    if not account_id:
        raise ValueError("empty account_id")
    if not merchant_raw:
        raise ValueError("empty merchant_raw")
    if not merchant_brand:
        raise ValueError("empty merchant_brand")
    if len(zip_code) != 5:
        raise ValueError(f"zip must be 5 characters, got {zip_code!r}")
    timestamp = int(ts)
    if timestamp < 0:
        raise ValueError(f"negative timestamp {timestamp}")
    amount_f = float(amount)
    if not amount_f >= 0:
        raise ValueError(f"negative amount {amount}")
    if infer_channel:
        channel = "online" if merchant_raw.lower().endswith(".com") else "offline"
    elif channel not in CHANNELS:
        raise ValueError(f"channel must be one of {CHANNELS}, got {channel!r}")
    if fraud == "":
        fraud_label = None
    elif fraud in ("0", "1"):
        fraud_label = fraud == "1"
    else:
        raise ValueError(f"fraud_label must be 0, 1 or empty, got {fraud!r}")
    return Transaction(
        account_id=account_id,
        merchant_raw=merchant_raw,
        merchant_brand=merchant_brand,
        zip=zip_code,
        timestamp=timestamp,
        amount=amount_f,
        channel=channel,
        fraud_label=fraud_label,
    )


def parse_transactions(stream: TextIO, max_errors: int = 0) -> Iterator[Transaction]:
    """Stream Transactions from a CSV file object.

    Malformed rows raise a :class:`DataError` carrying the 1-based line
    number once more than ``max_errors`` of them have been seen (the
    default 0 aborts on the first bad row; silent drops would corrupt
    edge weights downstream).  A missing ``channel`` column is tolerated:
    the channel is then inferred from a ``.com`` suffix on the raw name.
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty transactions file: missing header") from None
    header = [h.strip() for h in header]
    infer_channel = False
    if header == TRANSACTIONS_HEADER:
        pass
    elif header == [h for h in TRANSACTIONS_HEADER if h != "channel"]:
        infer_channel = True
        logger.warning("channel column absent; inferring channel from '.com' suffix")
    else:
        raise DataError(f"unexpected header {header!r}")
    n_cols = len(header)
    errors = 0
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue  # blank trailing line
        try:
            if len(row) != n_cols:
                raise ValueError(f"expected {n_cols} fields, got {len(row)}")
            if infer_channel:
                row = row[:6] + [""] + row[6:]
            yield _parse_row(row, infer_channel)
        except ValueError as exc:
            errors += 1
            if errors > max_errors:
                raise DataError(f"line {lineno}: {exc}") from None
            logger.warning("skipping malformed line %d: %s", lineno, exc)


def resolve_entities(
    txns: Iterable[Transaction], mode: str
) -> list[ResolvedTransaction]:
    """Resolve each transaction's merchant to an entity key.

    ``raw_plus_zip`` appends the zip code to the raw name (franchise
    granularity); ``brand`` rolls all franchises up to the brand name.
    """
    if mode not in RESOLUTION_MODES:
        raise ValueError(f"mode must be one of {RESOLUTION_MODES}, got {mode!r}")
    out = []
    for t in txns:
        if mode == "raw_plus_zip":
            key = f"{_normalize_key(t.merchant_raw)}|{t.zip}"
        else:
            key = _normalize_key(t.merchant_brand)
        out.append(ResolvedTransaction(t.account_id, key, t.timestamp, t.channel))
    return out


def split_by_channel(
    txns: Iterable[ResolvedTransaction],
) -> tuple[list[ResolvedTransaction], list[ResolvedTransaction]]:
    """Partition into (online, offline), preserving relative order."""
    online, offline = [], []
    for t in txns:
        (online if t.channel == "online" else offline).append(t)
    return online, offline


def filter_low_frequency(
    txns: Iterable[ResolvedTransaction], min_count: int
) -> list[ResolvedTransaction]:
    """Drop every transaction of entities with fewer than ``min_count``
    total occurrences (two passes: count, then filter)."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    txns = list(txns)
    counts: dict[str, int] = {}
    for t in txns:
        counts[t.entity_key] = counts.get(t.entity_key, 0) + 1
    return [t for t in txns if counts[t.entity_key] >= min_count]
