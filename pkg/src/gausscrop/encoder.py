"""Small feed-forward encoder with hand-written backprop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gausscrop.rng import RngStream

ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass
class EncoderParams:
    """Weights ``W[l]`` with shape ``(fan_in, fan_out)`` and biases ``b[l]``.

    The activation follows every layer except the last, so the output is a
    linear embedding.
    """

    input_shape: tuple[int, int, int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        fan_in = int(np.prod(self.input_shape))
        for W, b in zip(self.weights, self.biases):
            if W.ndim != 2 or W.shape[0] != fan_in or b.shape != (W.shape[1],):
                raise ValueError(f"inconsistent layer shapes: W{W.shape}, b{b.shape}, expected fan_in {fan_in}")
            fan_in = W.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.input_shape,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )

    def to_npz_dict(self) -> dict:
        out = {"input_shape": np.array(self.input_shape), "activation": np.array(self.activation)}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out

    @classmethod
    def from_npz_dict(cls, data) -> "EncoderParams":
        n = sum(1 for k in data.keys() if k.startswith("W"))
        return cls(
            tuple(int(v) for v in data["input_shape"]),
            [np.asarray(data[f"W{i}"]) for i in range(n)],
            [np.asarray(data[f"b{i}"]) for i in range(n)],
            str(data["activation"]),
        )


def init_encoder(
    input_shape: tuple[int, int, int],
    rng: RngStream,
    hidden: tuple[int, ...] = (128,),
    embed_dim: int = 32,
    activation: str = "relu",
) -> EncoderParams:
    """He-style Gaussian initialization, zero biases."""
    sizes = [int(np.prod(input_shape)), *hidden, embed_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return EncoderParams(tuple(input_shape), weights, biases, activation)


def _act(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    return x


def _act_grad(pre: np.ndarray, post: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (pre > 0).astype(pre.dtype)
    if kind == "tanh":
        return 1.0 - post**2
    return np.ones_like(pre)


def _flatten(params: EncoderParams, views: np.ndarray) -> np.ndarray:
    views = np.asarray(views, dtype=float)
    if views.shape[1:] != params.input_shape:
        raise ValueError(f"views of shape {views.shape[1:]} do not match encoder input {params.input_shape}")
    return views.reshape(len(views), -1)


def forward_cached(params: EncoderParams, views: np.ndarray):
    """Forward pass returning the embedding and the per-layer activations needed for backprop."""
    x = _flatten(params, views)
    acts = [x]
    pres = []
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        pre = x @ W + b
        pres.append(pre)
        x = pre if i == last else _act(pre, params.activation)
        acts.append(x)
    return x, (acts, pres)


def encoder_forward(params: EncoderParams, views: np.ndarray) -> np.ndarray:
    return forward_cached(params, views)[0]


def hidden_features(params: EncoderParams, views: np.ndarray) -> np.ndarray:
    """Activations feeding the final (projection) layer."""
    _, (acts, _) = forward_cached(params, views)
    return acts[-2]


def encoder_backward(params: EncoderParams, cache, d_out: np.ndarray):
    """Gradients of a scalar loss w.r.t. weights and biases given ``d_out`` = dL/d(embedding)."""
    acts, pres = cache
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.weights)
    delta = d_out
    for i in reversed(range(len(params.weights))):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * _act_grad(pres[i - 1], acts[i], params.activation)
    return grads_w, grads_b
