"""Fraud-classification lift from embedding features.

Three arms share identical train/test rows: baseline features only,
baseline + raw merchant embedding, and baseline + a single learned
projection score (a small MLP trained separately on merchant vectors and
then frozen).  The baseline model is a declared stand-in: a logistic
model over three simple transaction features.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, TextIO

import numpy as np

from .errors import DataError
from .ingest import Transaction, resolve_entities
from .sgns import Embeddings

logger = logging.getLogger(__name__)

ARMS = ("baseline", "plus_embeddings", "plus_projection")

N_BASELINE_FEATURES = 3  # amount, hour of day, account transaction count to date


@dataclass
class LiftReport:
    aupr_baseline: float
    aupr_emb: float
    aupr_proj: float
    delta_emb_pct: float
    delta_proj_pct: float
    n_train: int
    n_test: int
    seed: int


def _baseline_features(txns: Sequence[Transaction]) -> np.ndarray:
    """Per-transaction (amount, hour-of-day, prior count for the account).

    Transactions must already be in chronological order so the running
    account count is 'to date'.
    """
    seen: dict[str, int] = {}
    out = np.empty((len(txns), N_BASELINE_FEATURES), dtype=np.float64)
    for i, t in enumerate(txns):
        count = seen.get(t.account_id, 0)
        out[i] = (t.amount, (t.timestamp // 3600) % 24, count)
        seen[t.account_id] = count + 1
    return out


def _merchant_vectors(
    txns: Sequence[Transaction], emb: Embeddings, mode: str
) -> tuple[np.ndarray, int]:
    """Embedding vector per transaction; unknown merchants get the zero
    vector (counted, never silent)."""
    resolved = resolve_entities(txns, mode)
    out = np.zeros((len(txns), emb.dimension), dtype=np.float64)
    missing = 0
    for i, r in enumerate(resolved):
        idx = emb.key_to_id.get(r.entity_key)
        if idx is None:
            missing += 1
        else:
            out[i] = emb.vectors[idx]
    if missing:
        logger.warning("%d/%d transactions had no merchant embedding (zero vector used)",
                       missing, len(txns))
    return out, missing


def _labels(txns: Sequence[Transaction]) -> np.ndarray:
    labels = np.empty(len(txns), dtype=bool)
    for i, t in enumerate(txns):
        if t.fraud_label is None:
            raise DataError(f"transaction at t={t.timestamp} has no fraud label")
        labels[i] = t.fraud_label
    return labels


def build_features(
    txns: Sequence[Transaction],
    emb: Optional[Embeddings],
    arm: str,
    mode: str = "brand",
    scorer: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix and label vector for one experiment arm."""
    if arm not in ARMS:
        raise ValueError(f"arm must be one of {ARMS}, got {arm!r}")
    if not txns:
        raise DataError("no transactions to build features from")
    y = _labels(txns)
    base = _baseline_features(txns)
    if arm == "baseline":
        return base, y
    if emb is None:
        raise ValueError(f"arm {arm!r} needs embeddings")
    vectors, _ = _merchant_vectors(txns, emb, mode)
    if arm == "plus_embeddings":
        return np.hstack([base, vectors]), y
    if scorer is None:
        raise ValueError("plus_projection arm needs a trained scorer")
    return np.hstack([base, scorer(vectors)[:, None]]), y


class MlpScorer:
    """One-hidden-layer feedforward scorer: tanh hidden, logistic output."""

    def __init__(self, w1: np.ndarray, b1: np.ndarray, w2: np.ndarray, b2: float):
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2

    def __call__(self, x: np.ndarray) -> np.ndarray:
        hidden = np.tanh(x @ self.w1 + self.b1)
        z = hidden @ self.w2 + self.b2
        return 1.0 / (1.0 + np.exp(-np.clip(z, -700, 700)))


def _mlp_loss_and_grads(
    w1: np.ndarray, b1: np.ndarray, w2: np.ndarray, b2: float,
    x: np.ndarray, y: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, float]:
    """Mean cross-entropy and its gradients (separated out so the
    gradients can be finite-difference checked)."""
    n = len(x)
    a1 = np.tanh(x @ w1 + b1)
    z2 = a1 @ w2 + b2
    p = 1.0 / (1.0 + np.exp(-np.clip(z2, -700, 700)))
    eps = 1e-12
    loss = -float(np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))
    dz2 = (p - y) / n  # (n,)
    gw2 = a1.T @ dz2
    gb2 = float(dz2.sum())
    da1 = np.outer(dz2, w2) * (1.0 - a1**2)
    gw1 = x.T @ da1
    gb1 = da1.sum(axis=0)
    return loss, gw1, gb1, gw2, gb2


def fit_mlp_scorer(
    x: np.ndarray, y: np.ndarray, hidden_width: int = 8,
    epochs: int = 300, lr: float = 1.0, seed: int = 0,
) -> MlpScorer:
    """Full-batch gradient descent on cross-entropy over raw vectors."""
    y = np.asarray(y, dtype=np.float64)
    if y.min() == y.max():
        raise DataError("projection scorer needs both classes in training data")
    rng = np.random.default_rng(seed)
    d = x.shape[1]
    w1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, hidden_width))
    b1 = np.zeros(hidden_width)
    w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden_width), size=hidden_width)
    b2 = 0.0
    for _ in range(epochs):
        _, gw1, gb1, gw2, gb2 = _mlp_loss_and_grads(w1, b1, w2, b2, x, y)
        w1 -= lr * gw1
        b1 -= lr * gb1
        w2 -= lr * gw2
        b2 -= lr * gb2
    return MlpScorer(w1, b1, w2, b2)


def project_embedding_score(
    emb: Embeddings,
    txns_train: Sequence[Transaction],
    mode: str = "brand",
    hidden_width: int = 8,
    epochs: int = 300,
    lr: float = 1.0,
    seed: int = 0,
) -> MlpScorer:
    """Train the projection scorer on (merchant vector, fraud label) rows
    and freeze it; the frozen scorer maps a merchant vector to a single
    fraud score."""
    y = _labels(txns_train).astype(np.float64)
    x, _ = _merchant_vectors(txns_train, emb, mode)
    return fit_mlp_scorer(x, y, hidden_width, epochs, lr, seed)


class LogisticModel:
    """Logistic regression over standardized features (train statistics)."""

    def __init__(self, weights: np.ndarray, bias: float, mean: np.ndarray, std: np.ndarray):
        self.weights, self.bias, self.mean, self.std = weights, bias, mean, std

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        z = ((x - self.mean) / self.std) @ self.weights + self.bias
        return 1.0 / (1.0 + np.exp(-np.clip(z, -700, 700)))


def train_classifier(
    x: np.ndarray, y: np.ndarray, seed: int = 0, iterations: int = 500, lr: float = 0.5
) -> LogisticModel:
    """Fit by full-batch gradient descent with a fixed iteration budget
    (deterministic: zero init, so the seed only matters for API parity)."""
    y = np.asarray(y, dtype=np.float64)
    if y.min() == y.max():
        raise DataError("classifier needs both classes in training rows")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0.0] = 1.0
    xs = (x - mean) / std
    n, d = xs.shape
    w = np.zeros(d)
    b = 0.0
    for _ in range(iterations):
        p = 1.0 / (1.0 + np.exp(-np.clip(xs @ w + b, -700, 700)))
        err = (p - y) / n
        w -= lr * (xs.T @ err)
        b -= lr * float(err.sum())
    return LogisticModel(w, b, mean, std)


def aupr(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Area under the precision-recall curve, step-wise interpolation.

    Scores are processed in descending order; equal scores form one block
    so ties cannot fake resolution the scorer does not have.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DataError("AUpr undefined with zero positive labels")
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    area = 0.0
    tp = 0
    fp = 0
    prev_recall = 0.0
    i = 0
    n = len(scores)
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        tp += int(sorted_labels[i : j + 1].sum())
        fp += (j - i + 1) - int(sorted_labels[i : j + 1].sum())
        recall = tp / n_pos
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return float(area)


def chronological_split(
    txns: Sequence[Transaction], train_fraction: float = 0.8
) -> tuple[list[Transaction], list[Transaction]]:
    """Sort by timestamp and split so max(train ts) <= min(test ts)."""
    ordered = sorted(txns, key=lambda t: (t.timestamp, t.account_id, t.merchant_raw))
    cut = int(round(train_fraction * len(ordered)))
    cut = min(max(cut, 1), len(ordered) - 1)
    # never split inside a timestamp tie
    while cut < len(ordered) and ordered[cut].timestamp == ordered[cut - 1].timestamp:
        cut += 1
    if cut >= len(ordered):
        raise DataError("cannot split chronologically: all timestamps equal")
    return ordered[:cut], ordered[cut:]


def lift_experiment(
    txns: Sequence[Transaction],
    emb: Optional[Embeddings],
    mode: str = "brand",
    seed: int = 0,
    scorer_epochs: int = 300,
    noise_dimension: Optional[int] = None,
) -> LiftReport:
    """Train all three arms on identical chronological train rows and
    report test AUpr with percent deltas against the baseline arm.

    ``noise_dimension`` runs the no-signal control: merchant vectors are
    replaced by fresh per-transaction Gaussian noise.  (A noisy
    per-merchant *table* would not be signal-free: fixed random vectors
    act as merchant identifiers that a classifier can memorize.)
    """
    train_txns, test_txns = chronological_split(txns)
    y_train, y_test = _labels(train_txns).astype(np.float64), _labels(test_txns)
    base_train, base_test = _baseline_features(train_txns), _baseline_features(test_txns)
    if noise_dimension is not None:
        rng = np.random.default_rng(seed)
        vec_train = rng.normal(size=(len(train_txns), noise_dimension))
        vec_test = rng.normal(size=(len(test_txns), noise_dimension))
    else:
        if emb is None:
            raise ValueError("lift_experiment needs embeddings unless noise_dimension is set")
        vec_train, _ = _merchant_vectors(train_txns, emb, mode)
        vec_test, _ = _merchant_vectors(test_txns, emb, mode)
    scorer = fit_mlp_scorer(vec_train, y_train, epochs=scorer_epochs, seed=seed)
    arm_features = {
        "baseline": (base_train, base_test),
        "plus_embeddings": (
            np.hstack([base_train, vec_train]),
            np.hstack([base_test, vec_test]),
        ),
        "plus_projection": (
            np.hstack([base_train, scorer(vec_train)[:, None]]),
            np.hstack([base_test, scorer(vec_test)[:, None]]),
        ),
    }
    auprs = {}
    for arm in ARMS:
        x_train, x_test = arm_features[arm]
        clf = train_classifier(x_train, y_train.astype(bool), seed=seed)
        auprs[arm] = aupr(clf.predict_proba(x_test), y_test)
    base = auprs["baseline"]
    return LiftReport(
        aupr_baseline=base,
        aupr_emb=auprs["plus_embeddings"],
        aupr_proj=auprs["plus_projection"],
        delta_emb_pct=100.0 * (auprs["plus_embeddings"] - base) / base,
        delta_proj_pct=100.0 * (auprs["plus_projection"] - base) / base,
        n_train=len(train_txns),
        n_test=len(test_txns),
        seed=seed,
    )


def write_lift_report(report: LiftReport, fileobj: TextIO) -> None:
    fileobj.write(f"aupr_baseline={report.aupr_baseline:.4f}\n")
    fileobj.write(f"aupr_emb={report.aupr_emb:.4f}\n")
    fileobj.write(f"aupr_proj={report.aupr_proj:.4f}\n")
    fileobj.write(f"delta_emb_pct={report.delta_emb_pct:.4f}\n")
    fileobj.write(f"delta_proj_pct={report.delta_proj_pct:.4f}\n")
    fileobj.write(f"n_train={report.n_train}\n")
    fileobj.write(f"n_test={report.n_test}\n")
    fileobj.write(f"seed={report.seed}\n")
