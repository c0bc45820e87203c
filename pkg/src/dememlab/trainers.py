"""Training loops: standard, PGD-AT, and TRADES, with optional extras.

Two independent add-ons compose with every method:

* a loss-variance penalty — the optimized scalar becomes
  ``mean(losses) + lambda * population_variance(losses)`` over the
  mini-batch, which selectively suppresses high-loss (high-risk) samples;
* DP-SGD — per-sample gradients are clipped to an L2 norm bound and the
  averaged sum is perturbed with Gaussian noise.

``lambda = 0`` and disabled DP reproduce the plain method's parameter
trajectory bit for bit under the same seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import attacks as atk
from . import autodiff as ad
from . import models as md
from .datasets import Dataset
from .errors import InputError, NumericError, TrainingError
from .seeding import ATTACK_STREAM, EVAL_STREAM, NOISE_STREAM, SHUFFLE_STREAM, mix64

Array = np.ndarray

METHODS = ("standard", "pgd_at", "trades")


@dataclass(frozen=True)
class DpConfig:
    """DP-SGD knobs: noise multiplier sigma and per-sample clip norm C."""

    enabled: bool = False
    noise_multiplier: float = 0.0
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.enabled:
            if self.clip_norm <= 0:
                raise InputError(f"clip_norm must be positive, got {self.clip_norm}")
            if self.noise_multiplier < 0:
                raise InputError(
                    f"noise_multiplier must be non-negative, got {self.noise_multiplier}")


@dataclass(frozen=True)
class TrainConfig:
    """Full training recipe; (config, dataset, seed) determines the run."""

    method: str
    model: md.ModelConfig
    attack: atk.AttackParams
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    demem_lambda: float = 0.0
    trades_beta: float = 6.0
    dp: DpConfig = field(default_factory=DpConfig)
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise InputError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.epochs < 1:
            raise InputError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise InputError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise InputError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.demem_lambda < 0:
            raise InputError(f"demem_lambda must be non-negative, got {self.demem_lambda}")
        if self.trades_beta < 0:
            raise InputError(f"trades_beta must be non-negative, got {self.trades_beta}")


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    psi: float
    nat_acc: float
    rob_acc: float | None = None


@dataclass
class TrainHistory:
    """One record per completed epoch."""

    records: list[EpochRecord] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "mean_loss", "psi", "nat_acc", "rob_acc"])
            for r in self.records:
                rob = "" if r.rob_acc is None else repr(float(r.rob_acc))
                writer.writerow([r.epoch, repr(float(r.mean_loss)), repr(float(r.psi)),
                                 repr(float(r.nat_acc)), rob])


def demem_total_loss(per_sample: ad.Tensor, lam: float) -> ad.Tensor:
    """Scalar ``mean + lambda * variance`` of per-sample losses.

    ``lambda = 0`` returns the mean exactly, leaving the variance term out of
    both forward and backward so the plain method is reproduced bit for bit.
    """
    if lam < 0:
        raise InputError(f"lambda must be non-negative, got {lam}")
    if per_sample.data.size == 0:
        raise InputError("empty batch")
    mean = ad.mean_all(per_sample)
    if lam == 0.0:
        return mean
    return ad.add(mean, ad.scale(ad.batch_variance(per_sample), lam))


def clip_per_sample_gradient(g: Array, clip_norm: float) -> Array:
    """Scale ``g`` by ``min(1, C / ||g||_2)``; the input is returned unscaled
    (same values) whenever its norm is already within the bound."""
    if clip_norm <= 0:
        raise InputError(f"clip_norm must be positive, got {clip_norm}")
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite per-sample gradient")
    norm = float(np.linalg.norm(g))
    if norm <= clip_norm:
        return g
    return g * (clip_norm / norm)


def noisy_mean_gradient(per_sample_grads: list[Array] | Array, dp: DpConfig,
                        rng: np.random.Generator) -> Array:
    """DP-SGD aggregate: ``(sum_i clip(g_i, C) + zeta) / N`` with
    ``zeta ~ N(0, sigma^2 C^2 I)`` drawn fresh from ``rng``."""
    grads = list(per_sample_grads)
    if len(grads) == 0:
        raise InputError("no per-sample gradients")
    total = np.zeros_like(np.asarray(grads[0], dtype=np.float64))
    for g in grads:
        total += clip_per_sample_gradient(g, dp.clip_norm)
    if dp.noise_multiplier > 0:
        total = total + rng.normal(
            0.0, dp.noise_multiplier * dp.clip_norm, size=total.shape)
    return total / len(grads)


def dp_sgd_step(per_sample_grads: list[Array] | Array, dp: DpConfig, lr: float,
                rng: np.random.Generator) -> Array:
    """Parameter update ``-lr * (sum_i clip(g_i, C) + zeta) / N``."""
    if not dp.enabled:
        raise InputError("dp_sgd_step called with DP disabled")
    return -lr * noisy_mean_gradient(per_sample_grads, dp, rng)


def _per_sample_losses(model: md.Model, xb: Array, yb: Array, config: TrainConfig,
                       attack_rng: np.random.Generator, tape: ad.Tape,
                       params: list[tuple[ad.Tensor, ad.Tensor]],
                       x_adv: Array | None = None) -> tuple[ad.Tensor, Array | None]:
    """Per-sample loss vector for the configured method, on the given tape.

    Returns the losses and the adversarial batch (None for standard), so DP
    replays can reuse the same perturbed inputs.
    """
    if config.method == "standard":
        logits = md.forward(model, xb, tape, params)
        return ad.softmax_cross_entropy(logits, yb), None
    if config.method == "pgd_at":
        if x_adv is None:
            x_adv = atk.pgd(model, xb, yb, config.attack, attack_rng)
        logits = md.forward(model, x_adv, tape, params)
        return ad.softmax_cross_entropy(logits, yb), x_adv
    # trades
    if x_adv is None:
        x_adv = atk.pgd_kl(model, xb, config.attack, attack_rng)
    nat_logits = md.forward(model, xb, tape, params)
    adv_logits = md.forward(model, x_adv, tape, params)
    ce = ad.softmax_cross_entropy(nat_logits, yb)
    kl = ad.kl_divergence(nat_logits, adv_logits)
    return ad.add(ce, ad.scale(kl, config.trades_beta)), x_adv


def _flat_param_grads(params: list[tuple[ad.Tensor, ad.Tensor]]) -> Array:
    return np.concatenate([t.grad.ravel() for pair in params for t in pair])


def _loss_weights(losses: Array, lam: float) -> Array:
    """dL_total/dl_i for L_total = mean + lam * population variance."""
    n = losses.size
    w = np.full(n, 1.0 / n)
    if lam > 0:
        w = w + lam * (2.0 / n) * (losses - losses.mean())
    return w


def _ce_batch_gradient_fast(model: md.Model, xb: Array, yb: Array,
                            lam: float) -> tuple[Array, Array, float]:
    """Layered analytic gradient for cross-entropy methods (no tape).

    Matches the taped computation; the equivalence is pinned by tests. Only
    the standard and pgd_at methods qualify (single CE branch).
    """
    logits, pre = md.logits_and_preactivations(model, xb)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits in training forward pass")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(len(yb))
    losses = -log_p[rows, yb]
    psi = float(losses.var())
    dlogits = np.exp(log_p)
    dlogits[rows, yb] -= 1.0
    dlogits *= _loss_weights(losses, lam)[:, None]

    hidden = [np.asarray(xb, dtype=np.float64)]
    for z in pre[:-1]:
        hidden.append(np.maximum(z, 0.0))
    grads: list[Array] = []
    delta = dlogits
    for i in range(len(model.params) - 1, -1, -1):
        grads.append(delta.sum(axis=0))           # bias
        grads.append(hidden[i].T @ delta)          # weights
        if i > 0:
            delta = (delta @ model.params[i][0].T) * (pre[i - 1] > 0)
    grads.reverse()
    return np.concatenate([g.ravel() for g in grads]), losses, psi


def _batch_gradient(model: md.Model, xb: Array, yb: Array, config: TrainConfig,
                    attack_rng: np.random.Generator) -> tuple[Array, Array, float]:
    """Mean-loss gradient of the total objective over one batch.

    Returns (flat gradient, per-sample losses, psi).
    """
    if config.method in ("standard", "pgd_at"):
        x_eff = xb
        if config.method == "pgd_at":
            x_eff = atk.pgd(model, xb, yb, config.attack, attack_rng)
        return _ce_batch_gradient_fast(model, x_eff, yb, config.demem_lambda)
    tape = ad.Tape()
    params = md.attach(model, tape)
    losses, _ = _per_sample_losses(model, xb, yb, config, attack_rng, tape, params)
    psi = float(ad.batch_variance(ad.Tensor(losses.data)).data)
    total = demem_total_loss(losses, config.demem_lambda)
    tape.backward(total)
    return _flat_param_grads(params), losses.data.copy(), psi


def _dp_gradient(model: md.Model, xb: Array, yb: Array, config: TrainConfig,
                 attack_rng: np.random.Generator,
                 noise_rng: np.random.Generator) -> tuple[Array, Array, float]:
    """Noisy clipped gradient of the total objective over one batch.

    The variance penalty couples samples through the batch mean, so sample
    i's contribution is decomposed along its own compute path:
    ``g_i = (dL_total/dl_i) * grad_theta l_i`` with
    ``dL_total/dl_i = 1/N + lambda * (2/N) * (l_i - mean)``. The g_i sum to
    the exact batch gradient and each one is clipped before aggregation.
    """
    n = len(yb)
    # One batch pass to fix the adversarial inputs and the loss weights.
    probe_tape = ad.Tape()
    probe_params = md.attach(model, probe_tape)
    losses_t, x_adv = _per_sample_losses(
        model, xb, yb, config, attack_rng, probe_tape, probe_params)
    losses = losses_t.data.copy()
    psi = float(ad.batch_variance(ad.Tensor(losses)).data)
    # N * dL_total/dl_i; the trailing 1/N lives in noisy_mean_gradient.
    weights = np.ones(n)
    if config.demem_lambda > 0:
        weights = weights + config.demem_lambda * 2.0 * (losses - losses.mean())

    per_sample = []
    adv = xb if x_adv is None else x_adv
    for i in range(n):
        tape = ad.Tape()
        params = md.attach(model, tape)
        li, _ = _per_sample_losses(
            model, xb[i:i + 1], yb[i:i + 1], config, attack_rng, tape, params,
            x_adv=adv[i:i + 1])
        tape.backward(ad.mean_all(li))
        per_sample.append(weights[i] * _flat_param_grads(params))
    return noisy_mean_gradient(per_sample, config.dp, noise_rng), losses, psi


def train(config: TrainConfig, dataset: Dataset,
          robust_eval: atk.AttackParams | None = None,
          ) -> tuple[md.Model, TrainHistory]:
    """Train a model on a dataset; fully deterministic given (config, dataset).

    ``robust_eval`` additionally records per-epoch robust accuracy on the
    training pool, which is expensive and off by default.
    """
    if dataset.n == 0:
        raise InputError("empty dataset")
    if dataset.features.shape[1] != config.model.input_dim:
        raise InputError(
            f"dataset dim {dataset.features.shape[1]} does not match model "
            f"input width {config.model.input_dim}")
    if int(dataset.labels.max()) >= config.model.n_classes:
        raise InputError("dataset labels exceed model class count")

    model = md.init_model(config.model, md.init_seed(config.seed))
    shuffle_rng = np.random.default_rng(mix64(config.seed, SHUFFLE_STREAM))
    attack_rng = np.random.default_rng(mix64(config.seed, ATTACK_STREAM))
    noise_rng = np.random.default_rng(mix64(config.seed, NOISE_STREAM))
    eval_rng_seed = mix64(config.seed, EVAL_STREAM)

    velocity = np.zeros(model.n_params())
    x, y = dataset.features, dataset.labels
    history = TrainHistory()
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(dataset.n)
        loss_sum = 0.0
        psi_values = []
        for step, start in enumerate(range(0, dataset.n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            xb, yb = x[idx], y[idx]
            try:
                if config.dp.enabled:
                    grad, losses, psi = _dp_gradient(
                        model, xb, yb, config, attack_rng, noise_rng)
                else:
                    grad, losses, psi = _batch_gradient(
                        model, xb, yb, config, attack_rng)
            except NumericError as exc:
                raise TrainingError(f"training diverged: {exc}",
                                    epoch=epoch, step=step) from exc
            if not (np.isfinite(losses).all() and np.isfinite(psi)
                    and np.isfinite(grad).all()):
                raise TrainingError("training diverged: non-finite loss or gradient",
                                    epoch=epoch, step=step)
            velocity = config.momentum * velocity + grad
            model.assign_flat(model.flatten() - config.learning_rate * velocity)
            loss_sum += float(losses.sum())
            psi_values.append(psi)
        rob = None
        if robust_eval is not None:
            rob = atk.robust_accuracy(
                model, x, y, robust_eval,
                np.random.default_rng(mix64(eval_rng_seed, epoch)))
        history.records.append(EpochRecord(
            epoch=epoch,
            mean_loss=loss_sum / dataset.n,
            psi=float(np.mean(psi_values)),
            nat_acc=md.accuracy(model, x, y),
            rob_acc=rob))
    return model, history
