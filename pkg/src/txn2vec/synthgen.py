"""Synthetic transaction market with planted ground truth.

Accounts carry a home region, preferred categories, a price-tier
affinity and (for a small subset) a compromised flag.  They shop in
sessions: bursts of transactions whose consecutive gaps stay within the
session window, so the time-window pairing recovers the planted
structure.  Sessions are either category-themed (same category, builds
category clusters) or tier-themed (same price tier across categories,
e.g. an outlet-mall trip — this is what makes price tier a consistent
global direction instead of a per-category artifact).  Compromised
accounts route a share of their sessions to fraud-flagged brands, so
fraud brands co-occur with each other and embeddings genuinely carry
fraud signal.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from .errors import DataError
from .ingest import TRANSACTIONS_HEADER, _normalize_key
from .sgns import Embeddings

logger = logging.getLogger(__name__)

# Market texture constants (not part of the spec surface: the knobs that
# matter for experiments live on MarketSpec).
_ONLINE_BRAND_FRACTION = 0.10
_COMPROMISED_ACCOUNT_FRACTION = 0.05
_FRAUD_SESSION_RATE = 0.6
_FRAUD_BRAND_STICKINESS = 0.85
_TIER_SESSION_RATE = 0.35
_PREFERRED_CATEGORIES = 3
_PREFERRED_CATEGORY_RATE = 0.8
_TIER_AFFINITY = 0.75
_EXPLORATION_RATE = 0.002  # most wandering stays in preferred categories
_HOME_REGION_RATE = 0.8
_SESSION_EXTRA_MEAN = 2.0  # session size = 1 + Poisson(this)
_TIME_SPAN_SECONDS = 90 * 86400


@dataclass(frozen=True, slots=True)
class MarketSpec:
    n_merchants: int = 1000
    n_brands: int = 400
    n_categories: int = 20
    n_regions: int = 10
    n_accounts: int = 5000
    price_tiers: int = 3
    txn_rate: float = 40.0
    session_window_seconds: int = 300
    fraud_merchant_fraction: float = 0.05
    fraud_txn_rate: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if self.n_categories > self.n_merchants:
            raise DataError("infeasible spec: n_categories > n_merchants")
        if self.n_brands > self.n_merchants:
            raise DataError("infeasible spec: n_brands > n_merchants")
        if self.n_brands < self.n_categories:
            raise DataError("infeasible spec: n_brands < n_categories")
        if self.price_tiers < 2:
            raise DataError("infeasible spec: price_tiers must be >= 2")
        if min(self.n_merchants, self.n_brands, self.n_categories, self.n_regions, self.n_accounts) < 1:
            raise DataError("infeasible spec: all entity counts must be positive")
        if not self.txn_rate > 0:
            raise DataError("infeasible spec: txn_rate must be positive")
        if self.session_window_seconds < 1:
            raise DataError("infeasible spec: session_window_seconds must be >= 1")
        if not 0.0 <= self.fraud_merchant_fraction < 1.0:
            raise DataError("infeasible spec: fraud_merchant_fraction outside [0, 1)")
        if not 0.0 <= self.fraud_txn_rate < 1.0:
            raise DataError("infeasible spec: fraud_txn_rate outside [0, 1)")


@dataclass(frozen=True, slots=True)
class MerchantTruth:
    category: int
    region: int
    tier: int
    brand: int
    fraud: bool


class GroundTruth:
    """entity_key -> planted attributes, at both raw and brand granularity."""

    def __init__(self, by_key: dict[str, MerchantTruth]):
        self.by_key = by_key

    def __len__(self) -> int:
        return len(self.by_key)

    def __contains__(self, key: str) -> bool:
        return key in self.by_key

    def get(self, key: str) -> MerchantTruth:
        truth = self.by_key.get(key)
        if truth is None:
            raise DataError(f"entity {key!r} missing from ground truth")
        return truth


@dataclass(frozen=True, slots=True)
class _Brand:
    name: str
    category: int
    tier: int
    home_region: int
    online: bool
    fraud: bool


@dataclass(frozen=True, slots=True)
class _Merchant:
    brand: int
    raw_name: str
    zip: str
    region: int


def _build_brands_and_merchants(
    spec: MarketSpec, rng: np.random.Generator
) -> tuple[list[_Brand], list[_Merchant], list[list[int]]]:
    n_online = min(round(_ONLINE_BRAND_FRACTION * spec.n_brands), spec.n_brands - 1)
    n_offline = spec.n_brands - n_online
    offline_ids = list(range(n_offline))
    n_fraud = round(spec.fraud_merchant_fraction * spec.n_brands)
    fraud_ids = set()
    if n_fraud:
        fraud_ids = set(rng.choice(n_offline, size=min(n_fraud, n_offline), replace=False).tolist())

    brands: list[_Brand] = []
    for b in range(spec.n_brands):
        online = b >= n_offline
        brands.append(
            _Brand(
                name=f"BRAND {b:04d}" + (" .COM" if online else ""),
                category=b % spec.n_categories,
                tier=(b // spec.n_categories) % spec.price_tiers,
                home_region=int(rng.integers(spec.n_regions)),
                online=online,
                fraud=b in fraud_ids,
            )
        )

    merchants: list[_Merchant] = []
    merchants_of_brand: list[list[int]] = [[] for _ in range(spec.n_brands)]
    remaining = spec.n_merchants - n_online
    base, extra = divmod(remaining, n_offline)
    for b in offline_ids:
        count = base + (1 if b < extra else 0)
        regions = [brands[b].home_region]
        if count > 1:
            others = [r for r in rng.permutation(spec.n_regions).tolist() if r != brands[b].home_region]
            while len(regions) < count:
                regions.extend(others)
            regions = regions[:count]
        for s, region in enumerate(regions):
            zip_code = f"{(region + 1) * 1000 + (s % 1000):05d}"
            merchants_of_brand[b].append(len(merchants))
            merchants.append(
                _Merchant(
                    brand=b,
                    raw_name=f"{brands[b].name} STORE {s:02d}",
                    zip=zip_code,
                    region=region,
                )
            )
    for b in range(n_offline, spec.n_brands):
        region = brands[b].home_region
        merchants_of_brand[b].append(len(merchants))
        merchants.append(
            _Merchant(
                brand=b,
                raw_name=brands[b].name,
                zip=f"{(region + 1) * 1000 + 999:05d}",
                region=region,
            )
        )
    return brands, merchants, merchants_of_brand


def _pools(brands: list[_Brand], spec: MarketSpec):
    by_cat: list[list[int]] = [[] for _ in range(spec.n_categories)]
    by_cat_tier: dict[tuple[int, int], list[int]] = {}
    by_tier: list[list[int]] = [[] for _ in range(spec.price_tiers)]
    for b, brand in enumerate(brands):
        by_cat[brand.category].append(b)
        by_cat_tier.setdefault((brand.category, brand.tier), []).append(b)
        by_tier[brand.tier].append(b)
    return by_cat, by_cat_tier, by_tier


def generate_market(spec: MarketSpec, txn_file: TextIO, truth_file: TextIO) -> int:
    """Write the transactions CSV and ground-truth table; returns the row
    count.  Fixed seed -> byte-identical output."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    brands, merchants, merchants_of_brand = _build_brands_and_merchants(spec, rng)
    by_cat, by_cat_tier, by_tier = _pools(brands, spec)
    fraud_brands = sorted(b for b, brand in enumerate(brands) if brand.fraud)
    merchants_in_region: dict[tuple[int, int], int] = {}
    for b in range(spec.n_brands):
        for m in merchants_of_brand[b]:
            merchants_in_region.setdefault((b, merchants[m].region), m)

    txns_per_account = max(1, round(spec.txn_rate))
    window = spec.session_window_seconds
    rows = []
    for a in range(spec.n_accounts):
        account_id = f"A{a:06d}"
        home_region = int(rng.integers(spec.n_regions))
        account_tier = int(rng.integers(spec.price_tiers))
        preferred = rng.choice(
            spec.n_categories, size=min(_PREFERRED_CATEGORIES, spec.n_categories), replace=False
        ).tolist()
        compromised = rng.random() < _COMPROMISED_ACCOUNT_FRACTION

        # tier-themed sessions walk a fixed two-category "mall route" at
        # one price tier; pinning the route per account concentrates the
        # cross-category co-occurrence weight on predictable cluster
        # pairs instead of spraying weight-1 edges over every same-tier
        # brand in the market
        route = preferred[:2]
        tier_pools: dict[int, list[int]] = {}
        for t in range(spec.price_tiers):
            pool = [b for c in route for b in by_cat_tier.get((c, t), [])]
            tier_pools[t] = pool or by_tier[t]

        remaining = txns_per_account
        while remaining > 0:
            size = min(remaining, 1 + int(rng.poisson(_SESSION_EXTRA_MEAN)))
            remaining -= size
            ts = int(rng.integers(_TIME_SPAN_SECONDS))

            fraud_session = compromised and bool(fraud_brands) and rng.random() < _FRAUD_SESSION_RATE
            if fraud_session:
                # overnight bursts: gives the baseline hour-of-day feature
                # honest (weak) fraud signal
                ts = ts - (ts % 86400) + int(rng.integers(0, 6 * 3600))
            tier_session = rng.random() < _TIER_SESSION_RATE
            if rng.random() < _PREFERRED_CATEGORY_RATE:
                cat = preferred[int(rng.integers(len(preferred)))]
            else:
                cat = int(rng.integers(spec.n_categories))
            tier = account_tier if rng.random() < _TIER_AFFINITY else int(rng.integers(spec.price_tiers))

            for j in range(size):
                if j:
                    ts += int(rng.integers(1, window + 1))
                if fraud_session and rng.random() < _FRAUD_BRAND_STICKINESS:
                    b = fraud_brands[int(rng.integers(len(fraud_brands)))]
                elif rng.random() < _EXPLORATION_RATE:
                    # wandering is mostly within familiar categories
                    # (other tiers included); fully random hops are rare
                    if rng.random() < 0.3:
                        b = int(rng.integers(spec.n_brands))
                    else:
                        pool = by_cat[preferred[int(rng.integers(len(preferred)))]]
                        b = pool[int(rng.integers(len(pool)))]
                elif tier_session:
                    pool = tier_pools[tier]
                    b = pool[int(rng.integers(len(pool)))]
                else:
                    pool = by_cat_tier.get((cat, tier)) or by_cat[cat]
                    b = pool[int(rng.integers(len(pool)))]

                candidates = merchants_of_brand[b]
                home = merchants_in_region.get((b, home_region))
                if home is not None and rng.random() < _HOME_REGION_RATE:
                    m = home
                else:
                    m = candidates[int(rng.integers(len(candidates)))]
                merchant = merchants[m]
                amount = rng.lognormal(math.log(15.0 * 3.0**brands[b].tier), 0.6)
                fraud = (
                    compromised and brands[b].fraud and rng.random() < spec.fraud_txn_rate
                )
                if fraud:
                    amount *= 1.8  # card abusers run the amount up
                rows.append(
                    (
                        ts,
                        account_id,
                        merchant.raw_name,
                        brands[b].name,
                        merchant.zip,
                        amount,
                        "online" if brands[b].online else "offline",
                        1 if fraud else 0,
                    )
                )

    rows.sort(key=lambda r: (r[0], r[1], r[2], r[4]))
    txn_file.write(",".join(TRANSACTIONS_HEADER) + "\n")
    for ts, account_id, raw, brand, zip_code, amount, channel, fraud in rows:
        txn_file.write(
            f"{account_id},{raw},{brand},{zip_code},{ts},{amount:.2f},{channel},{fraud}\n"
        )

    _write_ground_truth(brands, merchants, truth_file)
    return len(rows)


def _write_ground_truth(
    brands: list[_Brand], merchants: list[_Merchant], fileobj: TextIO
) -> None:
    fileobj.write("entity_key\tcategory\tregion\ttier\tbrand\tfraud_flag\n")
    lines = []
    for m in merchants:
        brand = brands[m.brand]
        key = f"{_normalize_key(m.raw_name)}|{m.zip}"
        lines.append((key, brand.category, m.region, brand.tier, m.brand, brand.fraud))
    for b, brand in enumerate(brands):
        regions = sorted(m.region for m in merchants if m.brand == b)
        modal = max(set(regions), key=lambda r: (regions.count(r), -r)) if regions else 0
        lines.append((_normalize_key(brand.name), brand.category, modal, brand.tier, b, brand.fraud))
    for key, cat, region, tier, b, fraud in lines:
        fileobj.write(f"{key}\t{cat}\t{region}\t{tier}\t{b}\t{1 if fraud else 0}\n")


def load_ground_truth(fileobj: TextIO) -> GroundTruth:
    header = fileobj.readline().rstrip("\n").split("\t")
    if header != ["entity_key", "category", "region", "tier", "brand", "fraud_flag"]:
        raise DataError(f"unexpected ground-truth header {header!r}")
    by_key = {}
    for lineno, line in enumerate(fileobj, start=2):
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 6:
            raise DataError(f"ground-truth line {lineno}: expected 6 columns")
        key, cat, region, tier, brand, fraud = parts
        by_key[key] = MerchantTruth(int(cat), int(region), int(tier), int(brand), fraud == "1")
    return GroundTruth(by_key)


def _topk_neighbor_ids(emb: Embeddings, top_k: int) -> np.ndarray:
    """(N, top_k) neighbor ids by cosine, self excluded, ties by key."""
    unit = emb.vectors.astype(np.float64)
    norms = np.linalg.norm(unit, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    unit = unit / norms
    sims = unit @ unit.T
    np.fill_diagonal(sims, -np.inf)
    key_rank = np.argsort(np.argsort(emb.keys))
    out = np.empty((len(emb), top_k), dtype=np.int64)
    for i in range(len(emb)):
        order = np.lexsort((key_rank, -sims[i]))
        out[i] = order[:top_k]
    return out


@dataclass(frozen=True, slots=True)
class GroundTruthMetrics:
    category_purity: float
    region_purity: float
    tier_direction_consistency: float
    n_entities: int
    n_direction_pairs: int


def tier_contrast_pairs(
    truth: GroundTruth, keys: Sequence[str], max_pairs: int = 50
) -> list[tuple[str, str]]:
    """(top-tier, bottom-tier) same-category brand pairs among the given
    keys, deterministic order, capped at max_pairs."""
    by_cat: dict[int, tuple[list[str], list[str]]] = {}
    tiers = [truth.get(k).tier for k in keys]
    top_tier, bottom_tier = max(tiers), min(tiers)
    if top_tier == bottom_tier:
        return []
    for key in sorted(keys):
        t = truth.get(key)
        highs, lows = by_cat.setdefault(t.category, ([], []))
        if t.tier == top_tier:
            highs.append(key)
        elif t.tier == bottom_tier:
            lows.append(key)
    pairs = []
    for cat in sorted(by_cat):
        highs, lows = by_cat[cat]
        if not highs or not lows:
            continue
        for i, high in enumerate(highs):
            pairs.append((high, lows[i % len(lows)]))
    return pairs[:max_pairs]


def ground_truth_metrics(
    emb: Embeddings, truth: GroundTruth, top_k: int = 5, max_direction_pairs: int = 50
) -> GroundTruthMetrics:
    """Neighbor purity at top_k for category and region, plus the planted
    tier-direction consistency; every embedded entity must have truth."""
    from .analysis import direction_consistency

    for key in emb.keys:
        truth.get(key)  # raises with the offending key
    neighbor_ids = _topk_neighbor_ids(emb, top_k)
    cats = np.array([truth.get(k).category for k in emb.keys])
    regions = np.array([truth.get(k).region for k in emb.keys])

    def _purity(attr: np.ndarray) -> float:
        matches = attr[neighbor_ids] == attr[:, None]
        return float(matches.mean())

    pairs = tier_contrast_pairs(truth, emb.keys, max_direction_pairs)
    if len(pairs) >= 2:
        consistency, _ = direction_consistency(emb, pairs)
    else:
        raise DataError("not enough cross-tier same-category pairs for direction analysis")
    return GroundTruthMetrics(
        category_purity=_purity(cats),
        region_purity=_purity(regions),
        tier_direction_consistency=consistency,
        n_entities=len(emb),
        n_direction_pairs=len(pairs),
    )
