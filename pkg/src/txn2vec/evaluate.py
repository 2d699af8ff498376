"""Held-out link prediction: AUC, F1 at a tuned threshold, and the
dimensionality sweep."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, TextIO

import numpy as np

from .errors import DataError
from .pairing import TransactionPair, make_pair
from .sgns import EmbeddingModel, TrainConfig, logistic, train
from .vocab import build_sampling_table, build_vocab

logger = logging.getLogger(__name__)


@dataclass
class HoldoutSplit:
    train_pairs: list[TransactionPair]
    test_positive: list[TransactionPair]
    test_negative: list[TransactionPair]
    holdout_fraction: float
    seed: int


@dataclass
class EvalReport:
    lpa: float
    f1: float
    threshold: float
    n_test_pos: int
    n_test_neg: int
    seed: int
    config_echo: dict = field(default_factory=dict)


def make_holdout(
    pairs: Sequence[TransactionPair], holdout_fraction: float, seed: int
) -> HoldoutSplit:
    """Hold out a fraction of distinct edges for testing.

    Edges are sampled uniformly (seeded shuffle), skipping any whose
    removal would strand an endpoint with zero training pairs — an
    entity trained on nothing has an initialization-only vector, which
    would measure the init instead of the method.  Negative test edges
    are uniform non-edges matched 1:1 with the positives and rejected
    against the full (pre-holdout) edge set.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError(f"holdout_fraction must be in (0, 1), got {holdout_fraction}")
    pairs = list(pairs)
    if not pairs:
        raise DataError("cannot split an empty pair multiset")
    rng = np.random.default_rng(seed)
    edge_weight = Counter(make_pair(a, b) for a, b in pairs)
    edges = sorted(edge_weight)
    entity_pairs = Counter()
    for (a, b), w in edge_weight.items():
        entity_pairs[a] += w
        entity_pairs[b] += w

    target = max(1, round(holdout_fraction * len(edges)))
    order = rng.permutation(len(edges))
    held: set[TransactionPair] = set()
    remaining = dict(entity_pairs)
    for idx in order:
        e = edges[idx]
        w = edge_weight[e]
        a, b = e
        if remaining[a] - w >= 1 and remaining[b] - w >= 1:
            held.add(e)
            remaining[a] -= w
            remaining[b] -= w
            if len(held) >= target:
                break
    if not held:
        raise DataError(
            "graph too small for a holdout: every edge removal would isolate an endpoint"
        )
    if len(held) < target:
        logger.warning("holdout short: wanted %d edges, got %d", target, len(held))

    keys = sorted(entity_pairs)
    edge_set = set(edges)
    available = len(keys) * (len(keys) - 1) // 2 - len(edge_set)
    if available < len(held):
        raise DataError(
            f"graph too dense for a 1:1 holdout: need {len(held)} non-edges, "
            f"only {available} exist"
        )
    negatives: set[TransactionPair] = set()
    attempts = 0
    max_attempts = 1000 * len(held) + 1000
    while len(negatives) < len(held):
        attempts += 1
        if attempts > max_attempts:
            raise DataError("non-edge sampling stalled (graph nearly complete)")
        i, j = rng.integers(0, len(keys), size=2)
        if i == j:
            continue
        cand = make_pair(keys[i], keys[j])
        if cand in edge_set or cand in negatives:
            continue
        negatives.add(cand)

    train_pairs = [p for p in pairs if make_pair(*p) not in held]
    return HoldoutSplit(
        train_pairs=train_pairs,
        test_positive=sorted(held),
        test_negative=sorted(negatives),
        holdout_fraction=holdout_fraction,
        seed=seed,
    )


def score_edge(model: EmbeddingModel, a: int, b: int, method: str = "dot") -> float:
    """Edge score in (0, 1): logistic of the input-vector dot product
    (matches the training objective), or rescaled cosine behind a flag."""
    u = model.input_vectors[a].astype(np.float64)
    v = model.input_vectors[b].astype(np.float64)
    if method == "dot":
        return float(logistic(u.dot(v)))
    if method == "cosine":
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu == 0.0 or nv == 0.0:
            return 0.5
        return float((u.dot(v) / (nu * nv) + 1.0) / 2.0)
    raise ValueError(f"unknown scoring method {method!r}")


def link_prediction_auc(scores_pos: Sequence[float], scores_neg: Sequence[float]) -> float:
    """Exact Mann-Whitney statistic: P(random positive outscores a random
    negative), ties counted 1/2.  Computed via midranks, O(n log n)."""
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise DataError("AUC needs at least one positive and one negative score")
    allscores = np.concatenate([pos, neg])
    order = np.argsort(allscores, kind="mergesort")
    ranks = np.empty(len(allscores), dtype=np.float64)
    sorted_scores = allscores[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum_pos = ranks[: len(pos)].sum()
    n_pos, n_neg = len(pos), len(neg)
    u_stat = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def best_f1_threshold(scores_pos: np.ndarray, scores_neg: np.ndarray) -> tuple[float, float]:
    """Exhaustively find the threshold (predict positive when score >=
    threshold) maximizing F1 over the given scores."""
    pos = np.sort(np.asarray(scores_pos, dtype=np.float64))
    neg = np.sort(np.asarray(scores_neg, dtype=np.float64))
    candidates = np.unique(np.concatenate([pos, neg]))
    best = (-1.0, 0.0)
    n_pos = len(pos)
    for t in candidates:
        tp = n_pos - np.searchsorted(pos, t, side="left")
        fp = len(neg) - np.searchsorted(neg, t, side="left")
        fn = n_pos - tp
        f1 = _f1(int(tp), int(fp), int(fn))
        if f1 > best[0]:
            best = (f1, float(t))
    return best


def f1_at_best_threshold(
    scores_pos: Sequence[float],
    scores_neg: Sequence[float],
    validation_fraction: float = 0.3,
    seed: int = 0,
) -> tuple[float, float]:
    """Tune the decision threshold on a validation subset, report F1 on
    the remainder.  Raw SGNS scores are uncalibrated, so a fixed 0.5
    threshold would be arbitrary; the split is stratified per class."""
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise DataError("F1 needs at least one positive and one negative score")
    if not 0.0 < validation_fraction < 1.0:
        raise ValueError("validation_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    pos = pos[rng.permutation(len(pos))]
    neg = neg[rng.permutation(len(neg))]
    n_val_pos = min(len(pos) - 1, max(1, round(validation_fraction * len(pos))))
    n_val_neg = min(len(neg) - 1, max(1, round(validation_fraction * len(neg))))
    _, threshold = best_f1_threshold(pos[:n_val_pos], neg[:n_val_neg])
    eval_pos, eval_neg = pos[n_val_pos:], neg[n_val_neg:]
    tp = int((eval_pos >= threshold).sum())
    fp = int((eval_neg >= threshold).sum())
    fn = len(eval_pos) - tp
    return _f1(tp, fp, fn), threshold


def evaluate_split(
    split: HoldoutSplit,
    cfg: TrainConfig,
    alpha: float = 0.75,
    score_method: str = "dot",
    backend: Optional[str] = None,
) -> EvalReport:
    """Train on the split's training pairs and score the held-out edges."""
    vocab, edges = build_vocab(split.train_pairs)
    table = build_sampling_table(vocab, alpha)
    model = train(split.train_pairs, vocab, edges, table, cfg, backend=backend)

    def _scores(edge_list):
        out = np.empty(len(edge_list))
        for i, (a, b) in enumerate(edge_list):
            out[i] = score_edge(model, vocab.id_of(a), vocab.id_of(b), score_method)
        return out

    scores_pos = _scores(split.test_positive)
    scores_neg = _scores(split.test_negative)
    lpa = link_prediction_auc(scores_pos, scores_neg)
    f1, threshold = f1_at_best_threshold(scores_pos, scores_neg, seed=split.seed)
    return EvalReport(
        lpa=lpa,
        f1=f1,
        threshold=threshold,
        n_test_pos=len(scores_pos),
        n_test_neg=len(scores_neg),
        seed=split.seed,
        config_echo={
            "dim": cfg.dimension,
            "k": cfg.negatives,
            "epochs": cfg.epochs,
            "lr": cfg.initial_lr,
            "workers": cfg.workers,
            "alpha": alpha,
            "score": score_method,
            "holdout_fraction": split.holdout_fraction,
        },
    )


def dimension_sweep(
    pairs: Sequence[TransactionPair],
    dims: Sequence[int],
    cfg: TrainConfig,
    holdout_fraction: float = 0.1,
    seed: int = 0,
    backend: Optional[str] = None,
) -> list[tuple[int, float]]:
    """One train+eval cycle per dimension over a shared holdout split
    (identical test edges and negatives for every d)."""
    split = make_holdout(pairs, holdout_fraction, seed)
    out = []
    for d in dims:
        report = evaluate_split(split, replace(cfg, dimension=d), backend=backend)
        out.append((d, report.lpa))
        logger.info("sweep: d=%d lpa=%.4f", d, report.lpa)
    return out


def write_report(report: EvalReport, fileobj: TextIO) -> None:
    """Report format: one key=value per line, metrics at 4 decimals."""
    fileobj.write(f"lpa={report.lpa:.4f}\n")
    fileobj.write(f"f1={report.f1:.4f}\n")
    fileobj.write(f"threshold={report.threshold:.4f}\n")
    fileobj.write(f"n_test_pos={report.n_test_pos}\n")
    fileobj.write(f"n_test_neg={report.n_test_neg}\n")
    fileobj.write(f"seed={report.seed}\n")
    for key, value in report.config_echo.items():
        fileobj.write(f"{key}={value}\n")
