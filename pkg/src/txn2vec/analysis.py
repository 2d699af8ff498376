"""Qualitative embedding probes: nearest neighbors, PCA, analogy queries
and direction-consistency measurement for semantic contrasts such as
price point."""

from __future__ import annotations

import difflib
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, TextIO

import numpy as np

from .errors import DataError
from .sgns import Embeddings

logger = logging.getLogger(__name__)


@dataclass
class NeighborResult:
    query: str
    neighbors: list[tuple[str, float]]  # (key, cosine), descending


def _require_key(emb: Embeddings, key: str) -> int:
    idx = emb.key_to_id.get(key)
    if idx is None:
        close = difflib.get_close_matches(key, emb.keys, n=5, cutoff=0.3)
        hint = f"; closest matches: {', '.join(close)}" if close else ""
        raise DataError(f"unknown entity key {key!r}{hint}")
    return idx


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return matrix / norms


def _rank_by_cosine(
    emb: Embeddings, target: np.ndarray, exclude: set[int], top_n: int
) -> list[tuple[str, float]]:
    # exhaustive scan; ties broken by entity key ascending
    tnorm = np.linalg.norm(target)
    if tnorm == 0.0:
        sims = np.zeros(len(emb))
    else:
        sims = _unit_rows(emb.vectors.astype(np.float64)) @ (target / tnorm)
    candidates = [i for i in range(len(emb)) if i not in exclude]
    candidates.sort(key=lambda i: (-sims[i], emb.keys[i]))
    return [(emb.keys[i], float(sims[i])) for i in candidates[:top_n]]


def nearest_neighbors(emb: Embeddings, query: str, top_n: int = 10) -> NeighborResult:
    """Top-n cosine neighbors of a query entity (self excluded)."""
    if top_n < 1:
        raise ValueError(f"top_n must be >= 1, got {top_n}")
    idx = _require_key(emb, query)
    target = emb.vectors[idx].astype(np.float64)
    return NeighborResult(query, _rank_by_cosine(emb, target, {idx}, top_n))


@dataclass
class PcaResult:
    components: np.ndarray  # (m, d) orthonormal rows, variance descending
    explained_variance: np.ndarray  # (m,)
    explained_variance_ratio: np.ndarray  # (m,), vs total variance
    projections: np.ndarray  # (N, m)
    mean: np.ndarray  # (d,)


def pca(matrix: np.ndarray, n_components: int) -> PcaResult:
    """PCA of mean-centered rows via SVD.

    Sign convention: each component's largest-magnitude entry is made
    positive, so repeated runs (and different eigensolvers) agree.
    Requesting more components than the rank is allowed; the surplus
    carries ~zero variance.
    """
    x = np.asarray(matrix, dtype=np.float64)
    n, d = x.shape
    if not 1 <= n_components <= min(n, d):
        raise ValueError(f"n_components must be in [1, {min(n, d)}], got {n_components}")
    mean = x.mean(axis=0)
    xc = x - mean
    _, svals, vt = np.linalg.svd(xc, full_matrices=False)
    denom = max(n - 1, 1)
    variances = (svals**2) / denom
    total_variance = float((xc**2).sum()) / denom
    components = vt[:n_components]
    flip = np.sign(components[np.arange(n_components), np.abs(components).argmax(axis=1)])
    flip[flip == 0.0] = 1.0
    components = components * flip[:, None]
    projections = xc @ components.T
    explained = variances[:n_components]
    ratio = explained / total_variance if total_variance > 0 else np.zeros_like(explained)
    return PcaResult(components, explained, ratio, projections, mean)


def direction_consistency(
    emb: Embeddings,
    pairs: Sequence[tuple[str, str]],
    subspace: Optional[Sequence[int]] = None,
) -> tuple[float, list[np.ndarray]]:
    """Agreement of (high - low) difference vectors across contrast pairs.

    Returns the mean pairwise cosine over all difference-vector pairs,
    plus the differences themselves.  With ``subspace`` the differences
    are first projected onto the chosen PCA components of the embedding
    table (the contrast is often cleaner in a low-variance subspace than
    in the full space).  Zero difference vectors are dropped with a
    warning.
    """
    if len(pairs) < 2:
        raise ValueError("need at least 2 contrast pairs")
    basis = None
    if subspace is not None:
        subspace = list(subspace)
        result = pca(emb.vectors, max(subspace) + 1)
        basis = result.components[subspace]
    deltas = []
    for high, low in pairs:
        hi = _require_key(emb, high)
        lo = _require_key(emb, low)
        delta = emb.vectors[hi].astype(np.float64) - emb.vectors[lo].astype(np.float64)
        if basis is not None:
            delta = basis @ delta
        if np.linalg.norm(delta) == 0.0:
            logger.warning("zero difference vector for pair (%s, %s); excluded", high, low)
            continue
        deltas.append(delta)
    if len(deltas) < 2:
        raise DataError("fewer than 2 nonzero difference vectors; cannot measure consistency")
    units = [d / np.linalg.norm(d) for d in deltas]
    total = 0.0
    count = 0
    for i in range(len(units)):
        for j in range(i + 1, len(units)):
            total += float(units[i].dot(units[j]))
            count += 1
    return total / count, deltas


def best_direction_subspace(
    emb: Embeddings, pairs: Sequence[tuple[str, str]], n_components: int
) -> tuple[tuple[int, int], float]:
    """Scan all 2-component PCA subspaces for the one where the contrast
    pairs are most consistent (the informative subspace is a dataset
    property, found by search rather than fixed in advance)."""
    best_pair, best_score = (0, 1), -2.0
    for i in range(n_components):
        for j in range(i + 1, n_components):
            score, _ = direction_consistency(emb, pairs, subspace=[i, j])
            if score > best_score:
                best_pair, best_score = (i, j), score
    return best_pair, best_score


def analogy(
    emb: Embeddings, a: str, b: str, c: str, top_n: int = 10
) -> list[tuple[str, float]]:
    """Rank entities by cosine to vec(a) - vec(b) + vec(c), excluding the
    three query keys (standard additive-offset analogy)."""
    if top_n < 1:
        raise ValueError(f"top_n must be >= 1, got {top_n}")
    ia, ib, ic = (_require_key(emb, key) for key in (a, b, c))
    target = (
        emb.vectors[ia].astype(np.float64)
        - emb.vectors[ib].astype(np.float64)
        + emb.vectors[ic].astype(np.float64)
    )
    return _rank_by_cosine(emb, target, {ia, ib, ic}, top_n)


def export_projection(
    emb: Embeddings, result: PcaResult, component_x: int, component_y: int, fileobj: TextIO
) -> None:
    """Tab-separated (key, x, y) rows for external plotting."""
    m = result.projections.shape[1]
    for c in (component_x, component_y):
        if not 0 <= c < m:
            raise ValueError(f"component index {c} out of range (have {m})")
    xs = result.projections[:, component_x]
    ys = result.projections[:, component_y]
    for key, x, y in zip(emb.keys, xs, ys):
        fileobj.write(f"{key}\t{x:.6f}\t{y:.6f}\n")


def write_ranked(rows: Sequence[tuple[str, float]], fileobj: TextIO) -> None:
    """Ranked results as ``rank\\tkey\\tcosine`` lines."""
    for rank, (key, sim) in enumerate(rows, start=1):
        fileobj.write(f"{rank}\t{key}\t{sim:.6f}\n")
