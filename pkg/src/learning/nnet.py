"""
Dense ReLU networks in double precision with hand-written reverse mode.

``backward`` takes the gradient of a scalar objective with respect to the
network's pre-activation output (the logits for softmax heads), so the
caller composes the head's own derivative; for log-probabilities of sampled
actions that is ``softmax_log_prob_upstream``. Optimizer steps ascend.
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from src.utils.errors import NumericalError

logger = logging.getLogger(__name__)

OutputActivation = Literal["softmax", "linear"]


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    output_activation: OutputActivation = "linear"

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if min((self.input_dim, self.output_dim, *self.hidden)) < 1:
            raise ValueError("all layer dimensions must be >= 1")
        if self.output_activation not in ("softmax", "linear"):
            raise ValueError(f"unknown output activation {self.output_activation}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class NetworkParameters:
    weights: list[np.ndarray]  # [fan_in][fan_out] per layer
    biases: list[np.ndarray]

    def copy(self) -> "NetworkParameters":
        return NetworkParameters(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def zeros_like(self) -> "NetworkParameters":
        return NetworkParameters(
            weights=[np.zeros_like(w) for w in self.weights],
            biases=[np.zeros_like(b) for b in self.biases],
        )

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def to_dict(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.W{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out

    @classmethod
    def from_dict(
        cls, arrays: dict[str, np.ndarray], prefix: str
    ) -> "NetworkParameters":
        n_layers = sum(1 for k in arrays if k.startswith(f"{prefix}.W"))
        return cls(
            weights=[
                np.array(arrays[f"{prefix}.W{i}"], dtype=float) for i in range(n_layers)
            ],
            biases=[
                np.array(arrays[f"{prefix}.b{i}"], dtype=float) for i in range(n_layers)
            ],
        )


def init_parameters(spec: MlpSpec, rng: np.random.Generator) -> NetworkParameters:
    """He-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in spec.layer_dims:
        limit = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParameters(weights=weights, biases=biases)


def check_shapes(params: NetworkParameters, spec: MlpSpec) -> None:
    dims = spec.layer_dims
    if len(params.weights) != len(dims) or len(params.biases) != len(dims):
        raise ValueError(f"expected {len(dims)} layers, got {len(params.weights)}")
    for (fan_in, fan_out), w, b in zip(dims, params.weights, params.biases):
        if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
            raise ValueError(
                f"layer shape {w.shape}/{b.shape} does not match ({fan_in}, {fan_out})"
            )


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input of every layer
    pre_activations: list[np.ndarray]


def forward_cached(
    params: NetworkParameters, spec: MlpSpec, x: np.ndarray
) -> tuple[np.ndarray, ForwardCache]:
    """Batched forward pass over ``x`` of shape ``[B][input_dim]``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"expected input [B][{spec.input_dim}], got {x.shape}")
    inputs, pre = [], []
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0) if i < last else z
    out = softmax(a) if spec.output_activation == "softmax" else a
    return out, ForwardCache(inputs=inputs, pre_activations=pre)


def forward(params: NetworkParameters, spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    """Forward pass for a single input vector or a batch."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return forward_cached(params, spec, x[None, :])[0][0]
    return forward_cached(params, spec, x)[0]


def backward(
    params: NetworkParameters, cache: ForwardCache, upstream: np.ndarray
) -> NetworkParameters:
    """
    Parameter gradients of ``sum(upstream * z_out)`` where ``z_out`` is the
    pre-activation output, summed over the batch.
    """
    delta = np.asarray(upstream, dtype=float)
    if delta.shape != cache.pre_activations[-1].shape:
        raise ValueError(
            f"upstream gradient {delta.shape} does not match output "
            f"{cache.pre_activations[-1].shape}"
        )
    n_layers = len(params.weights)
    d_weights: list[np.ndarray] = [np.empty(0)] * n_layers
    d_biases: list[np.ndarray] = [np.empty(0)] * n_layers
    for i in range(n_layers - 1, -1, -1):
        d_weights[i] = cache.inputs[i].T @ delta
        d_biases[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (cache.pre_activations[i - 1] > 0)
    return NetworkParameters(weights=d_weights, biases=d_biases)


def softmax_log_prob_upstream(probs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Gradient of ``log softmax(z)[a]`` in the logits ``z``: one-hot minus probs."""
    probs = np.atleast_2d(probs)
    onehot = np.zeros_like(probs)
    onehot[np.arange(probs.shape[0]), np.asarray(actions, dtype=int).ravel()] = 1.0
    return onehot - probs


def gradient_norm(grads: NetworkParameters) -> float:
    return math.sqrt(math.fsum(float(np.sum(a * a)) for a in grads.arrays()))


def _checked(grads: NetworkParameters, clip: float | None) -> NetworkParameters:
    """Rejects non-finite gradients and rescales to the global-norm cap."""
    if not grads.is_finite():
        raise NumericalError("non-finite gradient")
    if clip is None:
        return grads
    norm = gradient_norm(grads)
    if norm <= clip:
        return grads
    scale = clip / norm
    return NetworkParameters(
        weights=[w * scale for w in grads.weights],
        biases=[b * scale for b in grads.biases],
    )


def sgd_step(
    params: NetworkParameters,
    grads: NetworkParameters,
    learning_rate: float,
    clip: float | None = None,
) -> NetworkParameters:
    """Ascent step ``params + lr * grads``."""
    if learning_rate <= 0:
        raise ValueError(f"learning rate must be positive, got {learning_rate}")
    grads = _checked(grads, clip)
    return NetworkParameters(
        weights=[w + learning_rate * g for w, g in zip(params.weights, grads.weights)],
        biases=[b + learning_rate * g for b, g in zip(params.biases, grads.biases)],
    )


class Optimizer:
    """Plain SGD, or SGD with heavy-ball momentum when ``momentum > 0``."""

    def __init__(
        self, kind: str = "sgd", momentum: float = 0.9, clip: float | None = None
    ):
        if kind not in ("sgd", "momentum"):
            raise ValueError(f"unknown optimizer {kind}")
        self.kind = kind
        self.momentum = momentum if kind == "momentum" else 0.0
        self.clip = clip
        self._velocity: NetworkParameters | None = None

    def step(
        self, params: NetworkParameters, grads: NetworkParameters, learning_rate: float
    ) -> NetworkParameters:
        if self.momentum == 0.0:
            return sgd_step(params, grads, learning_rate, self.clip)
        grads = _checked(grads, self.clip)
        if self._velocity is None:
            self._velocity = grads.zeros_like()
        v = self._velocity
        v.weights = [self.momentum * vw + g for vw, g in zip(v.weights, grads.weights)]
        v.biases = [self.momentum * vb + g for vb, g in zip(v.biases, grads.biases)]
        return sgd_step(params, v, learning_rate)


class Mlp:
    """A network spec bundled with its parameters."""

    def __init__(
        self, spec: MlpSpec, params: NetworkParameters | None = None, seed: int = 0
    ):
        self.spec = spec
        self.params = params if params is not None else init_parameters(
            spec, np.random.default_rng(seed)
        )
        check_shapes(self.params, spec)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self.params, self.spec, x)

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        return forward_cached(self.params, self.spec, x)

    def backward(self, cache: ForwardCache, upstream: np.ndarray) -> NetworkParameters:
        return backward(self.params, cache, upstream)
