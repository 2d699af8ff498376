"""Skip-gram negative-sampling trainer over the transaction pair stream.

Two embedding matrices are kept (input and context); single-matrix
skip-gram is unstable because a vector attracts itself.  The exported
embedding is the input matrix by default, with a mean-of-both option.

The hot loop lives in a compiled extension (``_sgns_inner``) with a pure
NumPy fallback (``_sgns_pure``) selected at import time; both consume the
same counter-based random stream, so results agree up to float rounding.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, replace
from typing import Optional, Sequence, TextIO

import numpy as np

from .errors import DataError, TrainingDiverged, UsageError
from .pairing import TransactionPair
from .vocab import EdgeSet, NegativeSamplingTable, Vocabulary

logger = logging.getLogger(__name__)

try:
    from . import _sgns_inner as _fast_kernel
except ImportError:  # extension not built; fall back to NumPy (much slower)
    _fast_kernel = None
from . import _sgns_pure as _pure_kernel

KERNEL_BACKEND = "cython" if _fast_kernel is not None else "python"

# counter encoding in the kernels reserves 6 bits for the negative slot
MAX_NEGATIVES = 63

LR_FLOOR_FACTOR = 1e-4
PROGRESS_STEPS = 100  # one log line / NaN check per 1% of planned visits


def kernel_module(backend: Optional[str] = None):
    """Resolve the training kernel ("cython", "python" or None = best)."""
    if backend is None:
        backend = KERNEL_BACKEND
    if backend == "cython":
        if _fast_kernel is None:
            raise UsageError("compiled kernel requested but not built")
        return _fast_kernel
    if backend == "python":
        return _pure_kernel
    raise UsageError(f"unknown kernel backend {backend!r}")


@dataclass(frozen=True, slots=True)
class TrainConfig:
    dimension: int = 16
    negatives: int = 5
    initial_lr: float = 0.025
    epochs: float = 2.0
    seed: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dimension}")
        if not 1 <= self.negatives <= MAX_NEGATIVES:
            raise ValueError(f"negatives must be in [1, {MAX_NEGATIVES}], got {self.negatives}")
        if not self.initial_lr > 0:
            raise ValueError(f"initial_lr must be > 0, got {self.initial_lr}")
        if not self.epochs > 0:
            raise ValueError(f"epochs must be > 0, got {self.epochs}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


@dataclass
class EmbeddingModel:
    input_vectors: np.ndarray
    context_vectors: np.ndarray

    def __post_init__(self):
        if self.input_vectors.shape != self.context_vectors.shape:
            raise ValueError("input and context matrices must share a shape")

    @property
    def dimension(self) -> int:
        return self.input_vectors.shape[1]

    def __len__(self) -> int:
        return self.input_vectors.shape[0]


def init_model(n_entities: int, dimension: int, seed: int) -> EmbeddingModel:
    """Input rows uniform in [-0.5/d, +0.5/d], context rows zero."""
    rng = np.random.default_rng(seed)
    inp = (rng.random((n_entities, dimension), dtype=np.float32) - 0.5) / dimension
    ctx = np.zeros((n_entities, dimension), dtype=np.float32)
    return EmbeddingModel(inp, ctx)


def logistic(x):
    """1/(1+e^-x), clamped to |x| <= 700 so exp never overflows."""
    x = np.clip(x, -700.0, 700.0)
    return 1.0 / (1.0 + np.exp(-x))


def pair_loss(model: EmbeddingModel, center: int, positive: int, negatives) -> float:
    """-log sigma(u.v+) - sum_n log(1 - sigma(u.v-_n)), computed in float64."""
    u = model.input_vectors[center].astype(np.float64)
    ctx = model.context_vectors
    loss = float(np.logaddexp(0.0, -u.dot(ctx[positive].astype(np.float64))))
    for n in negatives:
        loss += float(np.logaddexp(0.0, u.dot(ctx[n].astype(np.float64))))
    return loss


def pair_gradients(
    model: EmbeddingModel, center: int, positive: int, negatives
) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Analytic gradients of :func:`pair_loss`.

    Returns (d_loss/d_center_input_row, {context_row_id: d_loss/d_row});
    repeated context rows accumulate into one entry.
    """
    u = model.input_vectors[center].astype(np.float64)
    ctx = model.context_vectors
    d = len(u)
    grad_center = np.zeros(d)
    grad_ctx: dict[int, np.ndarray] = {}

    def _acc(row: int, g: np.ndarray) -> None:
        if row in grad_ctx:
            grad_ctx[row] = grad_ctx[row] + g
        else:
            grad_ctx[row] = g

    v = ctx[positive].astype(np.float64)
    s = float(logistic(u.dot(v)))
    grad_center += (s - 1.0) * v
    _acc(int(positive), (s - 1.0) * u)
    for n in negatives:
        v = ctx[n].astype(np.float64)
        s = float(logistic(u.dot(v)))
        grad_center += s * v
        _acc(int(n), s * u)
    return grad_center, grad_ctx


def _pairs_to_ids(
    pairs: Sequence[TransactionPair], vocab: Vocabulary
) -> tuple[np.ndarray, np.ndarray]:
    key_to_id = vocab.key_to_id
    pa = np.empty(len(pairs), dtype=np.int32)
    pb = np.empty(len(pairs), dtype=np.int32)
    try:
        for i, (a, b) in enumerate(pairs):
            pa[i] = key_to_id[a]
            pb[i] = key_to_id[b]
    except KeyError as exc:
        raise DataError(f"pair entity {exc.args[0]!r} missing from vocabulary") from None
    return pa, pb


def _check_finite(model: EmbeddingModel, vocab: Vocabulary) -> None:
    for name, matrix in (("input", model.input_vectors), ("context", model.context_vectors)):
        bad = ~np.isfinite(matrix).all(axis=1)
        if bad.any():
            row = int(np.argmax(bad))
            raise TrainingDiverged(
                f"non-finite values in {name} row for entity {vocab.keys[row]!r}"
            )


def train(
    pairs: Sequence[TransactionPair],
    vocab: Vocabulary,
    edges: EdgeSet,
    table: NegativeSamplingTable,
    cfg: TrainConfig,
    backend: Optional[str] = None,
) -> EmbeddingModel:
    """SGD over the pair stream.

    Each pair visit trains both orderings (two updates, fresh negatives
    each); the learning rate decays linearly from ``initial_lr`` to
    ``initial_lr * 1e-4`` over the planned total updates.  Fractional
    epochs cycle through the pairs.  With ``workers == 1`` and a fixed
    seed the result is deterministic; with more workers the matrices are
    shared lock-free and row races are tolerated.
    """
    kernel = kernel_module(backend)
    model = init_model(len(vocab), cfg.dimension, cfg.seed)
    planned_visits = int(round(len(pairs) * cfg.epochs))
    if planned_visits == 0:
        logger.warning("no pair visits planned (empty pairs or tiny epochs); returning init")
        return model
    pa, pb = _pairs_to_ids(pairs, vocab)
    indptr, indices = edges.neighbors_csr()
    cum = table.cum
    total_updates = 2 * planned_visits
    seed = cfg.seed & 0xFFFFFFFFFFFFFFFF
    chunk = max(1, math.ceil(planned_visits / PROGRESS_STEPS))
    inp, ctx = model.input_vectors, model.context_vectors
    done = 0
    escapes_total = 0
    while done < planned_visits:
        hi = min(done + chunk, planned_visits)
        results = []
        if cfg.workers == 1 or hi - done < cfg.workers:
            results.append(
                kernel.train_chunk(
                    inp, ctx, pa, pb, done, hi, total_updates,
                    cfg.initial_lr, cfg.negatives, cum, indptr, indices, seed,
                )
            )
        else:
            bounds = np.linspace(done, hi, cfg.workers + 1).astype(int)
            threads = []
            lock = threading.Lock()

            def _run(lo: int, up: int) -> None:
                res = kernel.train_chunk(
                    inp, ctx, pa, pb, lo, up, total_updates,
                    cfg.initial_lr, cfg.negatives, cum, indptr, indices, seed,
                )
                with lock:
                    results.append(res)

            for w in range(cfg.workers):
                t = threading.Thread(target=_run, args=(int(bounds[w]), int(bounds[w + 1])))
                t.start()
                threads.append(t)
            for t in threads:
                t.join()
        done = hi
        loss_sum = sum(r[0] for r in results)
        n_updates = sum(r[1] for r in results)
        escapes_total += sum(r[2] for r in results)
        _check_finite(model, vocab)
        g = 2 * done
        lr_now = cfg.initial_lr * max(1.0 - g / total_updates, LR_FLOOR_FACTOR)
        logger.info(
            "epoch=%d progress=%d%% lr=%.6f mean_loss=%.6f",
            done // max(1, len(pairs)),
            round(100.0 * done / planned_visits),
            lr_now,
            loss_sum / max(1, n_updates),
        )
    if escapes_total:
        table.escape_count += escapes_total
        logger.debug("negative-sampling retry escapes: %d", escapes_total)
    return model


EXPORT_MODES = ("input", "mean_of_input_and_context")


def export_embeddings(
    model: EmbeddingModel, vocab: Vocabulary, fileobj: TextIO, which: str = "input"
) -> None:
    """Write the text embedding file: header ``N d``, then one line per
    entity (key + d values, space separated, ids ascending).  Values are
    printed with 9 significant digits, enough to round-trip float32."""
    if which not in EXPORT_MODES:
        raise ValueError(f"which must be one of {EXPORT_MODES}, got {which!r}")
    _check_finite(model, vocab)
    if which == "input":
        vectors = model.input_vectors
    else:
        vectors = (model.input_vectors + model.context_vectors) / 2
    n, d = vectors.shape
    fileobj.write(f"{n} {d}\n")
    for i in range(n):
        parts = " ".join(format(float(x), ".9g") for x in vectors[i])
        fileobj.write(f"{vocab.keys[i]} {parts}\n")


class Embeddings:
    """Read-only keyed view of an exported embedding table."""

    def __init__(self, keys: list[str], vectors: np.ndarray):
        if len(keys) != vectors.shape[0]:
            raise ValueError("keys and vectors disagree on entity count")
        self.keys = keys
        self.key_to_id = {k: i for i, k in enumerate(keys)}
        self.vectors = vectors

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def __contains__(self, key: str) -> bool:
        return key in self.key_to_id

    def vector(self, key: str) -> np.ndarray:
        return self.vectors[self.key_to_id[key]]


def load_embeddings(fileobj: TextIO) -> Embeddings:
    header = fileobj.readline().split()
    if len(header) != 2:
        raise DataError("embedding file: malformed header (want 'N d')")
    n, d = int(header[0]), int(header[1])
    keys = []
    vectors = np.empty((n, d), dtype=np.float32)
    for i in range(n):
        parts = fileobj.readline().split()
        if len(parts) != d + 1:
            raise DataError(f"embedding file: row {i} has {len(parts) - 1} values, want {d}")
        keys.append(parts[0])
        vectors[i] = [np.float32(x) for x in parts[1:]]
    return Embeddings(keys, vectors)


def model_to_embeddings(model: EmbeddingModel, vocab: Vocabulary, which: str = "input") -> Embeddings:
    if which == "input":
        vectors = model.input_vectors.copy()
    else:
        vectors = (model.input_vectors + model.context_vectors) / 2
    return Embeddings(list(vocab.keys), vectors)
