"""Small fully-connected network with hand-written forward and backward passes.

Hidden layers are affine + ReLU; the output head is linear (decoders
clamp to [0, 1] at evaluation time, never during training).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class MlpConfig:
    input_width: int
    hidden_layers: int = 2
    hidden_width: int = 64
    output_width: int = 1

    def __post_init__(self):
        if self.input_width < 1 or self.output_width < 1:
            raise InputError("widths must be >= 1")
        if self.hidden_layers < 0:
            raise InputError("hidden_layers must be >= 0")
        if self.hidden_layers > 0 and self.hidden_width < 1:
            raise InputError("hidden_width must be >= 1")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """(out, in) per affine layer, chaining input to output width."""
        widths = [self.input_width] + [self.hidden_width] * self.hidden_layers
        widths.append(self.output_width)
        return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]

    @property
    def parameter_count(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes)


@dataclass
class MlpParams:
    """Weight matrices (out, in) and bias vectors per affine layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def parameter_arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def astype(self, dtype) -> "MlpParams":
        return MlpParams(
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
        )


def init_mlp(cfg: MlpConfig, rng: np.random.Generator) -> MlpParams:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases."""
    weights = []
    biases = []
    for out_w, in_w in cfg.layer_shapes:
        bound = np.sqrt(6.0 / in_w)
        weights.append(rng.uniform(-bound, bound, size=(out_w, in_w)).astype(np.float32))
        biases.append(np.zeros(out_w, dtype=np.float32))
    return MlpParams(weights, biases)


def mlp_forward(params: MlpParams, batch: np.ndarray):
    """Predictions (n, output_width) plus the cache needed for backward.

    The cache stores each affine layer's input and, for hidden layers,
    the ReLU activation mask.
    """
    if batch.ndim != 2 or batch.shape[1] != params.weights[0].shape[1]:
        raise InputError(
            f"batch width {batch.shape} does not match network input "
            f"{params.weights[0].shape[1]}"
        )
    a = batch
    inputs = []
    masks = []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w.T + b
        if i < last:
            mask = z > 0
            a = z * mask
            masks.append(mask)
        else:
            a = z
    return a, (inputs, masks)


def mlp_backward(params: MlpParams, cache, grad_pred: np.ndarray):
    """Reverse-mode gradients for every weight/bias plus the input batch.

    Returns (weight_grads, bias_grads, grad_input); grad_input feeds the
    encoder's backward pass.
    """
    inputs, masks = cache
    weight_grads: list[np.ndarray] = [None] * len(params.weights)
    bias_grads: list[np.ndarray] = [None] * len(params.biases)
    delta = grad_pred
    for i in range(len(params.weights) - 1, -1, -1):
        weight_grads[i] = delta.T @ inputs[i]
        bias_grads[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i]
        if i > 0:
            delta = delta * masks[i - 1]
    return weight_grads, bias_grads, delta
