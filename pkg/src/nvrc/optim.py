"""Adam optimizer and the 16-bit storage / 32-bit master-copy policy.

In mixed16 mode, weights live on disk (and in the forward pass) as IEEE
half precision; the optimizer always updates a float32 master copy with
full-precision gradients, then refreshes the half-width working copies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError, NumericsError

FULL32 = "full32"
MIXED16 = "mixed16"
PRECISION_MODES = (FULL32, MIXED16)

_HALF_MAX = np.float32(65504.0)


def validate_precision(mode: str) -> str:
    if mode not in PRECISION_MODES:
        raise InputError(f"precision must be one of {PRECISION_MODES}, got {mode!r}")
    return mode


def half_roundtrip(x):
    """Quantize to IEEE binary16 (round-to-nearest-even) and widen back.

    Values beyond the half range saturate to +/-65504 instead of
    overflowing to infinity. Idempotent.
    """
    arr = np.asarray(x, dtype=np.float32)
    clipped = np.clip(arr, -_HALF_MAX, _HALF_MAX)
    out = clipped.astype(np.float16).astype(np.float32)
    if np.isscalar(x) or arr.ndim == 0:
        return float(out)
    return out


def quantize_params(params: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Half-quantized working copies of a parameter list."""
    return [half_roundtrip(p) for p in params]


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Bias-corrected Adam over a list of arrays with per-array learning rates.

    State (step count and both moment buffers) is owned exclusively by
    the training loop that created it; `lr_scale` lets the caller apply
    a schedule without mutating the per-array base rates.
    """

    def __init__(
        self,
        shapes_like: Sequence[np.ndarray],
        lrs: float | Sequence[float] = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        n = len(shapes_like)
        if isinstance(lrs, (int, float)):
            lrs = [float(lrs)] * n
        if len(lrs) != n:
            raise InputError("need one learning rate per parameter array")
        self.lrs = [float(lr) for lr in lrs]
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in shapes_like]
        self.v = [np.zeros_like(p) for p in shapes_like]

    def step(
        self,
        params: Sequence[np.ndarray],
        grads: Sequence[np.ndarray],
        lr_scale: float = 1.0,
        grad_clip: float = 0.0,
    ) -> None:
        """One in-place update of `params` from `grads`.

        Raises NumericsError on any non-finite gradient so divergence
        surfaces at the step that produced it.
        """
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise InputError("parameter/gradient count does not match optimizer state")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NumericsError("non-finite gradient encountered")
        if grad_clip > 0.0:
            total = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
            if total > grad_clip:
                scale = grad_clip / total
                grads = [g * scale for g in grads]
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v, lr in zip(params, grads, self.m, self.v, self.lrs):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            m_hat = m / bc1
            v_hat = v / bc2
            p -= (lr * lr_scale) * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: Adam,
    lr_scale: float = 1.0,
) -> Adam:
    """Functional spelling of Adam.step; mutates params, returns the state."""
    state.step(params, grads, lr_scale=lr_scale)
    return state
