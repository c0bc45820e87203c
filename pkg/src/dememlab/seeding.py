"""Deterministic 64-bit seed derivation shared by every randomized component.

All derived seeds come from the SplitMix64 finalizer so that any
implementation of this scheme reproduces the same streams: ensemble member
``k`` trains with ``mix64(base_seed, k)``, its inclusion mask is drawn from
``mix64(member_seed, MASK_STREAM)``, and a training run splits its own seed
into the fixed streams below. The full table is documented in the README.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def mix64(base_seed: int, index: int) -> int:
    """Mix a base seed and a stream index into an independent 64-bit seed."""
    z = (base_seed + (index + 1) * _GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


# Stream indices. Ensemble members occupy the non-negative indices of the
# base seed (member_seed = mix64(base_seed, model_index)), so per-purpose
# streams hang off the member/run seed at fixed offsets instead.
MASK_STREAM = 1       # Bernoulli inclusion mask of an ensemble member
INIT_STREAM = 2       # model parameter initialization
SHUFFLE_STREAM = 3    # per-epoch batch order
ATTACK_STREAM = 4     # training-time attack random starts
NOISE_STREAM = 5      # DP-SGD Gaussian noise
EVAL_STREAM = 6       # evaluation-time attack random starts
RESAMPLE_STREAM = 7   # retry stream for degenerate subsamples
QUERY_STREAM = 8      # adversarial-input querying of shadow models
