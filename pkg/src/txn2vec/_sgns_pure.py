"""Pure NumPy training kernel (fallback when the compiled extension is
unavailable).

Mirrors ``_sgns_inner.pyx`` update for update: negative draws come from
the same counter-based splitmix64 stream, so both kernels see identical
negatives for a given seed and differ only in floating-point rounding.
Expect roughly an order of magnitude less throughput than the compiled
kernel (see ``benchmarks/bench_kernels.py``).
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right

import numpy as np

KERNEL_NAME = "python"

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1
_INV_2_53 = 2.0**-53
_LR_FLOOR = 1e-4
_MAX_REDRAWS = 10


def mix64(z: int) -> int:
    """splitmix64 finalizer (matches the C implementation bit for bit)."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def draw_unit(seed: int, counter: int) -> float:
    """Uniform in [0, 1) for a (seed, counter) slot of the splitmix stream."""
    return (mix64(seed + (counter + 1) * _GAMMA) >> 11) * _INV_2_53


def negative_counter(update_index: int, slot: int, attempt: int) -> int:
    """Counter encoding shared with the compiled kernel (k < 64, attempts < 16)."""
    return (update_index << 10) + (slot << 4) + attempt


def _softplus(x: float) -> float:
    # log(1 + e^x) without overflow
    if x > 0:
        return x + np.log1p(np.exp(-x))
    return float(np.log1p(np.exp(x)))


def train_chunk(
    inp: np.ndarray,
    ctx: np.ndarray,
    pa: np.ndarray,
    pb: np.ndarray,
    start_visit: int,
    end_visit: int,
    total_updates: int,
    lr0: float,
    k: int,
    cum: np.ndarray,
    indptr: np.ndarray,
    indices: np.ndarray,
    seed: int,
) -> tuple[float, int, int]:
    """Run SGD over pair visits [start_visit, end_visit).

    Visit v trains pair v mod n_pairs in both orderings (two updates with
    fresh negatives each).  Returns (loss_sum, n_updates, escape_count).
    """
    n_pairs = len(pa)
    cum_l = cum.tolist()
    indptr_l = indptr.tolist()
    indices_l = indices.tolist()
    n_entities = len(cum_l)
    loss_sum = 0.0
    escapes = 0
    n_updates = 0
    rows_idx = np.empty(k + 1, dtype=np.int64)
    labels = np.zeros(k + 1, dtype=np.float64)
    labels[0] = 1.0

    for v in range(start_visit, end_visit):
        p = v % n_pairs
        a = int(pa[p])
        b = int(pb[p])
        for order in (0, 1):
            center, positive = (a, b) if order == 0 else (b, a)
            g = 2 * v + order
            frac = 1.0 - g / total_updates
            lr = lr0 * (frac if frac > _LR_FLOOR else _LR_FLOOR)

            rows_idx[0] = positive
            base = g << 10
            for slot in range(k):
                cand = center
                for attempt in range(_MAX_REDRAWS + 1):
                    r = draw_unit(seed, base + (slot << 4) + attempt)
                    cand = bisect_right(cum_l, r)
                    if cand >= n_entities:  # r landed on the guard value
                        cand = n_entities - 1
                    if cand != center and cand != positive:
                        lo, hi = indptr_l[center], indptr_l[center + 1]
                        pos = bisect_left(indices_l, cand, lo, hi)
                        if pos == hi or indices_l[pos] != cand:
                            break
                else:
                    escapes += 1
                rows_idx[slot + 1] = cand

            u = inp[center]
            rows64 = ctx[rows_idx].astype(np.float64)
            dots = rows64 @ u.astype(np.float64)
            sig = 1.0 / (1.0 + np.exp(-np.clip(dots, -700.0, 700.0)))
            coef = lr * (labels - sig)

            loss_sum += _softplus(-dots[0])
            for j in range(1, k + 1):
                loss_sum += _softplus(dots[j])

            coef32 = coef.astype(np.float32)
            for j in range(k + 1):
                ctx[rows_idx[j]] += coef32[j] * u
            u += (coef @ rows64).astype(np.float32)
            n_updates += 1

    return loss_sum, n_updates, escapes
