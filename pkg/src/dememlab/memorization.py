"""Per-sample memorization scores, Spearman correlation, and score binning.

A sample's memorization score is the difference between its probability of
being classified correctly by models trained with it and by models trained
without it. The subsampled ensemble estimator approximates the exact
leave-one-out protocol, which needs n+1 models per repeat and is therefore
only offered for small datasets as the oracle.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .datasets import Dataset
from .errors import InputError, UsageError
from .seeding import MASK_STREAM, RESAMPLE_STREAM, mix64

Array = np.ndarray

log = logging.getLogger(__name__)

N_BINS = 21

# A training function maps (dataset, seed) to a predictor over feature rows.
TrainFn = Callable[[Dataset, int], Callable[[Array], Array]]


@dataclass
class MemorizationEstimate:
    """Per-sample scores in [-1, 1] plus the IN/OUT counts behind them.

    Samples that never appeared on one side of the split carry NaN — a
    flagged missing value, never a silent zero.
    """

    per_sample: Array
    in_counts: Array
    out_counts: Array

    @property
    def missing(self) -> Array:
        return ~np.isfinite(self.per_sample)


def from_correctness(membership: Array, correctness: Array) -> MemorizationEstimate:
    """Reduce an (models x samples) membership/correctness pair to scores."""
    membership = np.asarray(membership, dtype=bool)
    correctness = np.asarray(correctness, dtype=bool)
    if membership.shape != correctness.shape or membership.ndim != 2:
        raise InputError("membership and correctness must be equal-shape matrices")
    in_counts = membership.sum(axis=0)
    out_counts = (~membership).sum(axis=0)
    in_correct = (membership & correctness).sum(axis=0)
    out_correct = (~membership & correctness).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mem = (np.where(in_counts > 0, in_correct / np.maximum(in_counts, 1), np.nan)
               - np.where(out_counts > 0, out_correct / np.maximum(out_counts, 1), np.nan))
    return MemorizationEstimate(mem, in_counts.astype(np.int64),
                                out_counts.astype(np.int64))


def inclusion_mask(n: int, inclusion_prob: float, base_seed: int,
                   model_index: int) -> Array:
    """Bernoulli inclusion mask of ensemble member ``model_index``.

    Degenerate (empty) draws are retried on a derived seed and logged.
    """
    mask_seed = mix64(mix64(base_seed, model_index), MASK_STREAM)
    mask = np.random.default_rng(mask_seed).random(n) < inclusion_prob
    attempt = 0
    while not mask.any():
        attempt += 1
        retry_seed = mix64(mix64(mask_seed, RESAMPLE_STREAM), attempt)
        log.warning("empty subsample for model %d, resampling (attempt %d)",
                    model_index, attempt)
        mask = np.random.default_rng(retry_seed).random(n) < inclusion_prob
    return mask


def estimate_memorization(dataset: Dataset, train_fn: TrainFn, ensemble_size: int,
                          inclusion_prob: float, base_seed: int) -> MemorizationEstimate:
    """Estimate scores from models trained on Bernoulli-subsampled datasets."""
    if ensemble_size < 2:
        raise InputError(f"ensemble_size must be at least 2, got {ensemble_size}")
    if not 0.0 < inclusion_prob < 1.0:
        raise InputError(f"inclusion_prob must be in (0, 1), got {inclusion_prob}")
    membership = np.zeros((ensemble_size, dataset.n), dtype=bool)
    correctness = np.zeros((ensemble_size, dataset.n), dtype=bool)
    for m in range(ensemble_size):
        mask = inclusion_mask(dataset.n, inclusion_prob, base_seed, m)
        predictor = train_fn(dataset.subset(mask), mix64(base_seed, m))
        membership[m] = mask
        correctness[m] = predictor(dataset.features) == dataset.labels
    return from_correctness(membership, correctness)


def leave_one_out_memorization(dataset: Dataset, train_fn: TrainFn, repeats: int,
                               base_seed: int, max_n: int = 64) -> MemorizationEstimate:
    """Exact protocol: full-data model vs one model per held-out sample.

    This is the oracle for :func:`estimate_memorization`; repeats average
    over the learner's randomness.
    """
    if dataset.n > max_n:
        raise UsageError(
            f"dataset size {dataset.n} exceeds the leave-one-out bound {max_n}; "
            "use estimate_memorization instead")
    if repeats < 1:
        raise InputError(f"repeats must be at least 1, got {repeats}")
    diffs = np.zeros(dataset.n)
    for r in range(repeats):
        seed_r = mix64(base_seed, r)
        full_predict = train_fn(dataset, mix64(seed_r, 0))
        full_correct = full_predict(dataset.features) == dataset.labels
        for i in range(dataset.n):
            loo_predict = train_fn(dataset.drop(i), mix64(seed_r, i + 1))
            loo_correct = loo_predict(dataset.features[i:i + 1])[0] == dataset.labels[i]
            diffs[i] += float(full_correct[i]) - float(loo_correct)
    counts = np.full(dataset.n, repeats, dtype=np.int64)
    return MemorizationEstimate(diffs / repeats, counts, counts)


def _average_ranks(x: Array) -> Array:
    """Fractional ranks (1-based); ties receive the average of their ranks."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Rank correlation: Pearson correlation of average-tie fractional ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError("spearman expects two equal-length vectors")
    if x.size < 2:
        raise InputError("spearman needs at least 2 observations")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        raise InputError("spearman undefined for a constant vector (zero rank variance)")
    return float(rx @ ry) / denom


def bin_assign(mem: float) -> int:
    """Map a score in [0, 1] to its bin: 0 stays in bin 0, the rest of the
    range splits evenly into bins 1..21 with open-left, closed-right bounds.

    Negative estimates (sampling noise) clamp to bin 0; callers count them.
    """
    if not np.isfinite(mem):
        raise InputError(f"bin_assign needs a finite score, got {mem}")
    if mem > 1.0:
        raise InputError(f"memorization score above 1: {mem}")
    if mem <= 0.0:
        return 0
    b = int(math.ceil(N_BINS * mem))
    # ceil can overshoot by one when k/21 rounds just above k; take the
    # smallest b with mem <= b/21.
    if b > 1 and mem <= (b - 1) / N_BINS:
        b -= 1
    return min(b, N_BINS)


def assign_bins(scores: Array) -> tuple[Array, int]:
    """Vector bin assignment; returns (bins, number of clamped negatives).

    Missing (NaN) scores receive bin -1 so downstream tables can skip them.
    """
    scores = np.asarray(scores, dtype=np.float64)
    bins = np.full(scores.shape, -1, dtype=np.int64)
    clamped = 0
    for i, s in enumerate(scores):
        if not np.isfinite(s):
            continue
        if s < 0:
            clamped += 1
        bins[i] = bin_assign(float(s))
    return bins, clamped
