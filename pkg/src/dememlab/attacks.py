"""L-infinity adversarial example generation (FGSM, PGD) and robust accuracy.

Attacks operate on inputs normalized to [0,1] and return arrays satisfying
both the epsilon-ball and box constraints exactly. Sign ties resolve to 0,
so zero-gradient coordinates are never perturbed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import models as md
from .errors import InputError

Array = np.ndarray

# Default radii: image-like data uses the common 8/255; synthetic 2-D data
# uses 0.05 in input units.
EPSILON_IMAGE = 8.0 / 255.0
EPSILON_SYNTHETIC = 0.05


@dataclass(frozen=True)
class AttackParams:
    """L-infinity attack recipe: radius, step size, iterations, random start."""

    epsilon: float
    step_size: float
    steps: int
    random_start: bool = True

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise InputError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.step_size <= 0.0:
            raise InputError(f"step_size must be positive, got {self.step_size}")
        if self.steps < 1:
            raise InputError(f"steps must be at least 1, got {self.steps}")
        if self.epsilon > 0.0 and self.step_size > 2.0 * self.epsilon:
            warnings.warn(
                f"step_size {self.step_size} exceeds 2*epsilon ({2 * self.epsilon}); "
                "iterates will bounce between ball faces", stacklevel=2)


def train_attack(epsilon: float) -> AttackParams:
    """Training-time default: 10 steps at epsilon/4 with a random start."""
    return AttackParams(epsilon, epsilon / 4.0 if epsilon > 0 else 1e-3, 10, True)


def eval_attack(epsilon: float) -> AttackParams:
    """Evaluation-time default: 20 steps at epsilon/8 with a random start."""
    return AttackParams(epsilon, epsilon / 8.0 if epsilon > 0 else 1e-3, 20, True)


def _check_box(x: Array) -> None:
    if x.ndim != 2:
        raise InputError(f"attack input must be rank-2, got shape {x.shape}")
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise InputError("attack input must lie in [0, 1]")


def _ce_input_grad(model: md.Model, x: Array, y: Array) -> Array:
    # d mean-CE / d logits = (softmax - onehot) / N, pushed back to the input.
    logits, pre = md.logits_and_preactivations(model, x)
    dlogits = ad.softmax(logits)
    dlogits[np.arange(len(y)), y] -= 1.0
    return md.input_gradient(model, pre, dlogits / len(y))


def _kl_input_grad(model: md.Model, x_adv: Array, nat_probs: Array) -> Array:
    # d mean-KL(p || q) / d q_logits = (softmax(q) - p) / N.
    logits, pre = md.logits_and_preactivations(model, x_adv)
    dlogits = (ad.softmax(logits) - nat_probs) / len(x_adv)
    return md.input_gradient(model, pre, dlogits)


def fgsm(model: md.Model, x: Array, y: Array, epsilon: float) -> Array:
    """Single-step attack: clip(x + epsilon * sign(grad_x loss)) into the box."""
    if epsilon < 0:
        raise InputError(f"epsilon must be non-negative, got {epsilon}")
    x = np.asarray(x, dtype=np.float64)
    _check_box(x)
    grad = _ce_input_grad(model, x, np.asarray(y))
    return np.clip(x + epsilon * np.sign(grad), 0.0, 1.0)


def _pgd_iterate(grad_fn, x: Array, x_start: Array, params: AttackParams) -> Array:
    eps, alpha = params.epsilon, params.step_size
    x_adv = x_start
    for _ in range(params.steps):
        grad = grad_fn(x_adv)
        # Ball projection in delta space, then box projection; starting from
        # x with one step of size >= eps this reduces bitwise to FGSM.
        delta = np.clip((x_adv - x) + alpha * np.sign(grad), -eps, eps)
        x_adv = np.clip(x + delta, 0.0, 1.0)
    return x_adv


def _pgd_core(grad_fn, x: Array, params: AttackParams,
              rng: np.random.Generator | None) -> Array:
    if params.random_start:
        if rng is None:
            rng = np.random.default_rng(0)
        eps = params.epsilon
        x_start = np.clip(x + rng.uniform(-eps, eps, size=x.shape), 0.0, 1.0)
    else:
        x_start = x.copy()
    return _pgd_iterate(grad_fn, x, x_start, params)


def pgd(model: md.Model, x: Array, y: Array, params: AttackParams,
        rng: np.random.Generator | None = None) -> Array:
    """Iterated sign-gradient ascent on cross entropy, projected each step.

    Deterministic given (model, batch, rng); with ``random_start`` and no rng
    a fixed default generator is used.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_box(x)
    y = np.asarray(y)
    return _pgd_core(lambda xa: _ce_input_grad(model, xa, y), x, params, rng)


def pgd_kl(model: md.Model, x: Array, params: AttackParams,
           rng: np.random.Generator | None = None) -> Array:
    """PGD maximizing KL(f(x) || f(x')), the TRADES inner problem.

    The KL gradient vanishes exactly at x' = x, so without a random start the
    iterate is nudged by a tiny seeded Gaussian before ascending.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_box(x)
    nat_probs = ad.softmax(md.logits_and_preactivations(model, x)[0])
    grad_fn = lambda xa: _kl_input_grad(model, xa, nat_probs)  # noqa: E731
    if params.random_start:
        return _pgd_core(grad_fn, x, params, rng)
    if rng is None:
        rng = np.random.default_rng(0)
    eps = params.epsilon
    jitter = np.clip(1e-3 * eps * rng.standard_normal(x.shape), -eps, eps)
    x_start = np.clip(x + jitter, 0.0, 1.0)
    return _pgd_iterate(grad_fn, x, x_start, params)


def robust_accuracy(model: md.Model, x: Array, y: Array, params: AttackParams,
                    rng: np.random.Generator | None = None) -> float:
    """Fraction of samples still classified correctly under PGD.

    A sample counts as robust only if its clean prediction is also correct,
    which keeps robust accuracy at or below natural accuracy for any attack.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(y) == 0:
        raise InputError("robust_accuracy of an empty dataset")
    clean_ok = md.predict(model, x) == y
    adv_ok = md.predict(model, pgd(model, x, y, params, rng)) == y
    return float(np.mean(clean_ok & adv_ok))
