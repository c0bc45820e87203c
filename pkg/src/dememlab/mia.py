"""Membership-inference attacks over a shadow ensemble, and ROC metrics.

The likelihood-ratio attack fits per-sample Gaussians to logit-scaled
true-class confidences from the models that did (IN) and did not (OUT) train
on the sample, then scores a target observation by the log-density ratio.
Leakage is summarized as the true-positive rate at a fixed low
false-positive rate under a conservative step-function threshold rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CoverageError, InputError, NumericError

Array = np.ndarray

VARIANCE_FLOOR = 1e-8
_P_CLAMP = 1e-12
_LOG_2PI = math.log(2.0 * math.pi)

ATTACK_METHODS = ("lira_online", "lira_offline", "loss")
VARIANCE_MODES = ("per_example", "global")
# Per-example variance fits need a reasonably sized ensemble; below this the
# pooled global variance is the safer default.
GLOBAL_VARIANCE_BELOW = 32


@dataclass
class ShadowEnsemble:
    """Membership matrix and true-class confidences of M models x S samples."""

    membership: Array
    confidences: Array

    def __post_init__(self):
        self.membership = np.asarray(self.membership, dtype=bool)
        self.confidences = np.asarray(self.confidences, dtype=np.float64)
        if self.membership.ndim != 2 or self.membership.shape != self.confidences.shape:
            raise InputError("membership and confidences must be equal-shape M x S matrices")
        if self.confidences.size and (
                self.confidences.min() < 0.0 or self.confidences.max() > 1.0):
            raise InputError("confidences must lie in [0, 1]")

    @property
    def n_models(self) -> int:
        return self.membership.shape[0]

    @property
    def n_samples(self) -> int:
        return self.membership.shape[1]


@dataclass(frozen=True)
class GaussianStats:
    """Mean/variance fit of logit-scaled confidences on one side of a split."""

    mean: float
    var: float
    count: int

    def __post_init__(self):
        if self.var < VARIANCE_FLOOR:
            raise InputError(f"variance below floor {VARIANCE_FLOOR}: {self.var}")
        if self.count < 1:
            raise InputError("count must be at least 1")


@dataclass
class AttackScores:
    """Per-sample attack scores (higher = more member-like) plus ground truth."""

    scores: Array
    is_member: Array

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.is_member = np.asarray(self.is_member, dtype=bool)
        if self.scores.shape != self.is_member.shape or self.scores.ndim != 1:
            raise InputError("scores and is_member must be equal-length vectors")
        if not np.all(np.isfinite(self.scores)):
            raise NumericError("attack scores must be finite")


def logit_scale(p):
    """phi(p) = log(p / (1-p)), with p clamped to [1e-12, 1 - 1e-12] first.

    The numerator and complement are clamped separately so the endpoints
    evaluate to exactly +-log((1 - 1e-12) / 1e-12) without cancellation.
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise InputError("probability outside [0, 1]")
    numer = np.clip(arr, _P_CLAMP, 1.0 - _P_CLAMP)
    denom = np.clip(1.0 - arr, _P_CLAMP, 1.0 - _P_CLAMP)
    out = np.log(numer) - np.log(denom)
    return float(out) if np.isscalar(p) or arr.ndim == 0 else out


def fit_in_out(ensemble: ShadowEnsemble, sample_id: int,
               exclude_model: int | None = None) -> tuple[GaussianStats, GaussianStats]:
    """Per-sample Gaussian fits of IN and OUT logit-scaled confidences.

    Variances are population variances floored at ``VARIANCE_FLOOR``;
    fewer than 2 models on either side is a coverage error.
    """
    member = ensemble.membership[:, sample_id]
    conf = ensemble.confidences[:, sample_id]
    keep = np.ones(ensemble.n_models, dtype=bool)
    if exclude_model is not None:
        keep[exclude_model] = False
    phi = logit_scale(conf[keep])
    member = member[keep]
    stats = []
    for side, mask in (("IN", member), ("OUT", ~member)):
        if mask.sum() < 2:
            raise CoverageError(
                f"sample {sample_id} has {int(mask.sum())} {side} models, need at least 2")
        values = phi[mask]
        stats.append(GaussianStats(
            mean=float(values.mean()),
            var=max(float(values.var()), VARIANCE_FLOOR),
            count=int(mask.sum())))
    return stats[0], stats[1]


def _gaussian_logpdf(x: float, stats: GaussianStats) -> float:
    return -0.5 * (_LOG_2PI + math.log(stats.var) + (x - stats.mean) ** 2 / stats.var)


def lira_online_score(phi: float, in_stats: GaussianStats,
                      out_stats: GaussianStats) -> float:
    """log N(phi; IN) - log N(phi; OUT); higher means more member-like."""
    return _gaussian_logpdf(phi, in_stats) - _gaussian_logpdf(phi, out_stats)


def lira_offline_score(phi: float, out_stats: GaussianStats) -> float:
    """OUT-only fallback: the observation standardized against OUT models."""
    return (phi - out_stats.mean) / math.sqrt(out_stats.var)


def loss_attack_score(loss: float) -> float:
    """Negated loss: lower loss means more member-like, so higher score."""
    if not np.isfinite(loss):
        raise InputError(f"loss must be finite, got {loss}")
    return -float(loss)


def ensemble_gaussians(ensemble: ShadowEnsemble, exclude_model: int | None = None,
                       variance_mode: str = "per_example",
                       ) -> tuple[Array, Array, Array, Array, Array]:
    """Vectorized per-sample IN/OUT fits over the whole ensemble.

    Returns (in_mean, in_var, out_mean, out_var, valid) arrays of length S;
    ``valid`` marks samples with at least 2 models on both sides. In global
    variance mode the per-sample variances are replaced by the pooled
    variance of residuals on each side.
    """
    if variance_mode not in VARIANCE_MODES:
        raise InputError(f"unknown variance mode {variance_mode!r}")
    member = ensemble.membership
    phi = logit_scale(ensemble.confidences)
    if exclude_model is not None:
        keep = np.arange(ensemble.n_models) != exclude_model
        member = member[keep]
        phi = phi[keep]
    out = ~member
    in_counts = member.sum(axis=0)
    out_counts = out.sum(axis=0)
    valid = (in_counts >= 2) & (out_counts >= 2)

    def side_stats(mask: Array, counts: Array) -> tuple[Array, Array]:
        safe = np.maximum(counts, 1)
        mean = np.where(mask, phi, 0.0).sum(axis=0) / safe
        sq = np.where(mask, (phi - mean[None, :]) ** 2, 0.0).sum(axis=0)
        return mean, sq / safe

    in_mean, in_var = side_stats(member, in_counts)
    out_mean, out_var = side_stats(out, out_counts)
    if variance_mode == "global":
        def pooled(var: Array, counts: Array) -> float:
            usable = counts >= 2
            if not usable.any():
                return VARIANCE_FLOOR
            return float(np.sum(var[usable] * counts[usable]) / np.sum(counts[usable]))

        in_var = np.full_like(in_var, pooled(in_var, in_counts))
        out_var = np.full_like(out_var, pooled(out_var, out_counts))
    in_var = np.maximum(in_var, VARIANCE_FLOOR)
    out_var = np.maximum(out_var, VARIANCE_FLOOR)
    return in_mean, in_var, out_mean, out_var, valid


def score_targets(method: str, phi: Array, in_mean: Array, in_var: Array,
                  out_mean: Array, out_var: Array) -> Array:
    """Vectorized scores of one target model's observations."""
    if method == "lira_online":
        log_in = -0.5 * (_LOG_2PI + np.log(in_var) + (phi - in_mean) ** 2 / in_var)
        log_out = -0.5 * (_LOG_2PI + np.log(out_var) + (phi - out_mean) ** 2 / out_var)
        return log_in - log_out
    if method == "lira_offline":
        return (phi - out_mean) / np.sqrt(out_var)
    if method == "loss":
        # phi is monotone in the confidence, and the loss is -log(confidence),
        # so the logit-scaled observation itself ranks samples like -loss.
        raise InputError("loss attack scores come from losses, not Gaussian fits")
    raise InputError(f"unknown attack method {method!r}")


def roc_points(scores: AttackScores) -> tuple[Array, Array, Array]:
    """(thresholds desc, fpr, tpr) at every distinct threshold, ties together.

    Prediction rule: member iff score >= threshold.
    """
    n_pos = int(scores.is_member.sum())
    n_neg = int((~scores.is_member).sum())
    if n_pos == 0 or n_neg == 0:
        raise InputError("need at least one member and one non-member")
    order = np.argsort(-scores.scores, kind="stable")
    sorted_scores = scores.scores[order]
    sorted_member = scores.is_member[order]
    tp = np.cumsum(sorted_member)
    fp = np.cumsum(~sorted_member)
    # Keep the last index of each tie block so ties count together.
    last = np.nonzero(np.diff(sorted_scores, append=-np.inf))[0]
    return sorted_scores[last], fp[last] / n_neg, tp[last] / n_pos


def tpr_at_fpr_detail(scores: AttackScores, fpr_target: float,
                      ) -> tuple[float, float, float]:
    """(tpr, threshold, achieved fpr) under the conservative step rule.

    Among thresholds whose FPR does not exceed the target, the one with the
    highest TPR wins; ties prefer the larger (more conservative) threshold.
    An implicit threshold above every score (TPR = FPR = 0) guarantees
    feasibility.
    """
    if not 0.0 < fpr_target < 1.0:
        raise InputError(f"fpr_target must be in (0, 1), got {fpr_target}")
    thresholds, fpr, tpr = roc_points(scores)
    feasible = fpr <= fpr_target
    if not feasible.any():
        return 0.0, math.inf, 0.0
    candidates = np.nonzero(feasible)[0]
    # Thresholds descend, so the first candidate with the max TPR is the
    # largest such threshold.
    best = candidates[np.argmax(tpr[candidates])]
    return float(tpr[best]), float(thresholds[best]), float(fpr[best])


def tpr_at_fpr(scores: AttackScores, fpr_target: float) -> float:
    """True-positive rate at the given false-positive-rate budget."""
    return tpr_at_fpr_detail(scores, fpr_target)[0]
