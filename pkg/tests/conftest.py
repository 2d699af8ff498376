import io

import numpy as np
import pytest

from txn2vec import ingest, pairing, synthgen
from txn2vec.sgns import TrainConfig, model_to_embeddings, train
from txn2vec.vocab import build_sampling_table, build_vocab


def make_txn(account="A1", raw="SHOP 1", brand="SHOP", zip_code="10001",
             ts=0, amount=1.0, channel="offline", fraud=None):
    return ingest.Transaction(account, raw, brand, zip_code, ts, amount, channel, fraud)


def make_resolved(account, key, ts, channel="offline"):
    return ingest.ResolvedTransaction(account, key, ts, channel)


@pytest.fixture(scope="session")
def small_market():
    """A fast synthetic market shared across tests (~8k transactions)."""
    spec = synthgen.MarketSpec(
        n_merchants=150, n_brands=60, n_categories=6, n_regions=4,
        n_accounts=400, txn_rate=20.0, seed=11,
    )
    txn_fh, truth_fh = io.StringIO(), io.StringIO()
    synthgen.generate_market(spec, txn_fh, truth_fh)
    txn_fh.seek(0)
    truth_fh.seek(0)
    txns = list(ingest.parse_transactions(txn_fh))
    truth = synthgen.load_ground_truth(truth_fh)
    return spec, txns, truth


@pytest.fixture(scope="session")
def small_market_pairs(small_market):
    spec, txns, _ = small_market
    resolved = ingest.resolve_entities(txns, "brand")
    _, offline = ingest.split_by_channel(resolved)
    filtered = ingest.filter_low_frequency(offline, 20)
    cfg = pairing.PairingConfig(window_seconds=spec.session_window_seconds)
    return pairing.generate_pairs(filtered, cfg)


@pytest.fixture(scope="session")
def small_trained(small_market, small_market_pairs):
    """Embeddings trained on the small market (brand mode)."""
    _, _, truth = small_market
    vocab, edges = build_vocab(small_market_pairs)
    table = build_sampling_table(vocab)
    cfg = TrainConfig(dimension=12, negatives=5, epochs=3.0, seed=5)
    model = train(small_market_pairs, vocab, edges, table, cfg)
    return model, vocab, model_to_embeddings(model, vocab), truth


@pytest.fixture(scope="session")
def balanced_market():
    """Small market with the tier-session share dialed down so category
    and tier signals are both visible at this scale (the default mix is
    tuned for the full-size market)."""
    saved = synthgen._TIER_SESSION_RATE
    synthgen._TIER_SESSION_RATE = 0.10
    try:
        spec = synthgen.MarketSpec(
            n_merchants=200, n_brands=60, n_categories=6, n_regions=4,
            n_accounts=600, txn_rate=30.0, seed=11,
        )
        txn_fh, truth_fh = io.StringIO(), io.StringIO()
        synthgen.generate_market(spec, txn_fh, truth_fh)
    finally:
        synthgen._TIER_SESSION_RATE = saved
    txn_fh.seek(0)
    truth_fh.seek(0)
    txns = list(ingest.parse_transactions(txn_fh))
    truth = synthgen.load_ground_truth(truth_fh)
    resolved = ingest.resolve_entities(txns, "brand")
    _, offline = ingest.split_by_channel(resolved)
    filtered = ingest.filter_low_frequency(offline, 20)
    cfg = pairing.PairingConfig(window_seconds=spec.session_window_seconds)
    pairs = pairing.generate_pairs(filtered, cfg)
    vocab, edges = build_vocab(pairs)
    table = build_sampling_table(vocab)
    model = train(pairs, vocab, edges, table,
                  TrainConfig(dimension=12, negatives=5, epochs=3.0, seed=5))
    return model_to_embeddings(model, vocab), truth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
