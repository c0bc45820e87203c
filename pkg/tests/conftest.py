"""Shared test utilities: finite-difference oracles and tiny trainers."""

from __future__ import annotations

import numpy as np
import pytest

import dememlab.autodiff as ad
import dememlab.models as md


def finite_difference(f, x0: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        plus, minus = x0.copy(), x0.copy()
        plus[i] += h
        minus[i] -= h
        grad[i] = (f(plus) - f(minus)) / (2.0 * h)
    return grad


def model_loss_fn(model: md.Model, x: np.ndarray, y: np.ndarray):
    """Cross-entropy mean loss as a plain function of the flat parameters."""

    def f(vec: np.ndarray) -> float:
        probe = model.copy()
        probe.assign_flat(vec)
        losses = ad.softmax_cross_entropy(md.forward(probe, x), y)
        return float(ad.mean_all(losses).data)

    return f


def model_gradient(model: md.Model, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Autodiff gradient of the cross-entropy mean loss, flattened."""
    tape = ad.Tape()
    params = md.attach(model, tape)
    losses = ad.softmax_cross_entropy(md.forward(model, x, tape, params), y)
    tape.backward(ad.mean_all(losses))
    return np.concatenate([t.grad.ravel() for pair in params for t in pair])


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)
