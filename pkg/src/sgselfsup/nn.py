"""Minimal batched MLP with manual backpropagation (float64, numpy)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .geometry import ValidationError

OUTPUT_ACTIVATIONS = ("linear", "sigmoid", "softplus")


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise ValidationError("an MLP needs at least an input and an output width")
        if any(int(w) <= 0 for w in self.layer_widths):
            raise ValidationError(f"layer widths must be positive: {self.layer_widths}")
        if self.hidden_activation != "relu":
            raise ValidationError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValidationError(f"unsupported output activation {self.output_activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    def to_dict(self) -> dict:
        return {"layer_widths": list(self.layer_widths),
                "hidden_activation": self.hidden_activation,
                "output_activation": self.output_activation}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(tuple(int(w) for w in d["layer_widths"]), d["hidden_activation"],
                   d["output_activation"])


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> list:
    """Weights and biases uniform in +-1/sqrt(fan_in)."""
    layers = []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append([W, b])
    return layers


def softplus(z):
    return np.logaddexp(0.0, z)


def mlp_forward(spec: MlpSpec, layers: list, x: np.ndarray) -> dict:
    """Returns a cache with ``pre`` (pre-activations per layer), ``act``
    (input then every hidden activation) and ``out``."""
    act = [x]
    pre = []
    h = x
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        pre.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
            act.append(h)
    z = pre[-1]
    if spec.output_activation == "sigmoid":
        out = expit(z)
    elif spec.output_activation == "softplus":
        out = softplus(z)
    else:
        out = z
    return {"pre": pre, "act": act, "out": out}


def mlp_backward(spec: MlpSpec, layers: list, cache: dict, d_out: np.ndarray,
                 d_hidden: dict | None = None) -> tuple[list, np.ndarray]:
    """Backpropagate ``d_out`` (gradient w.r.t. the activated output).

    ``d_hidden`` maps a hidden-activation index (1 = first hidden layer) to an
    extra upstream gradient, which is how auxiliary heads feed back into the
    trunk. Returns per-layer ``[dW, db]`` and the gradient w.r.t. the input.
    """
    d_hidden = d_hidden or {}
    z = cache["pre"][-1]
    if spec.output_activation == "sigmoid":
        s = cache["out"]
        dz = d_out * s * (1.0 - s)
    elif spec.output_activation == "softplus":
        dz = d_out * expit(z)
    else:
        dz = d_out
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        a = cache["act"][i]
        grads[i] = [a.T @ dz, dz.sum(axis=0)]
        da = dz @ W.T
        if i == 0:
            return grads, da
        if i in d_hidden:
            da = da + d_hidden[i]
        dz = da * (cache["pre"][i - 1] > 0)
    raise AssertionError("unreachable")
