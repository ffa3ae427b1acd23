"""Feed-forward embedding network with exact analytic gradients.

A deliberately small substrate: affine layers with an elementwise
activation on the hidden layers and a linear output, plus an SGD-with-
momentum optimizer. No autodiff — backward() implements the chain rule
explicitly so the gradient of every loss in the pipeline can be checked
against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

NORM_GUARD = 1e-12

_ACTIVATIONS = ("relu", "tanh", "identity")


class PoisonedStepError(RuntimeError):
    """An optimizer step saw a non-finite gradient; state was not touched."""


@dataclass(frozen=True)
class EncoderParams:
    """Per-layer weights (out_dim x in_dim) and biases, plus the dimension
    chain input -> hidden... -> embedding and the hidden activation tag."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    dims: tuple[int, ...]
    activation: str

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.dims) < 2 or any(d <= 0 for d in self.dims):
            raise ValueError("dims needs >= 2 positive entries")
        if len(self.weights) != len(self.dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count does not match dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.dims[i + 1], self.dims[i]):
                raise ValueError(f"layer {i} weight shape {w.shape} != "
                                 f"({self.dims[i + 1]}, {self.dims[i]})")
            if b.shape != (self.dims[i + 1],):
                raise ValueError(f"layer {i} bias shape {b.shape}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i} has non-finite entries")

    @property
    def embedding_dim(self) -> int:
        return self.dims[-1]

    @property
    def input_dim(self) -> int:
        return self.dims[0]


@dataclass(frozen=True)
class ParamGrads:
    """Gradient pytree congruent to EncoderParams."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def scaled(self, factor: float) -> "ParamGrads":
        return ParamGrads(
            weights=tuple(factor * w for w in self.weights),
            biases=tuple(factor * b for b in self.biases),
        )

    def added(self, other: "ParamGrads") -> "ParamGrads":
        return ParamGrads(
            weights=tuple(a + b for a, b in zip(self.weights, other.weights)),
            biases=tuple(a + b for a, b in zip(self.biases, other.biases)),
        )


def zero_grads(params: EncoderParams) -> ParamGrads:
    return ParamGrads(
        weights=tuple(np.zeros_like(w) for w in params.weights),
        biases=tuple(np.zeros_like(b) for b in params.biases),
    )


@dataclass(frozen=True)
class OptimizerState:
    """Momentum buffers congruent to the parameters, plus hyperparameters."""

    buffers_w: tuple[np.ndarray, ...]
    buffers_b: tuple[np.ndarray, ...]
    learning_rate: float
    momentum: float


@dataclass(frozen=True)
class EmbeddingBatch:
    """A (batch x embedding_dim) matrix plus whether rows are unit-normalized."""

    vectors: np.ndarray
    normalized: bool

    def __post_init__(self):
        if self.normalized:
            norms = np.linalg.norm(self.vectors, axis=1)
            live = norms > NORM_GUARD
            if live.any() and not np.allclose(norms[live], 1.0, atol=1e-6):
                raise ValueError("normalized flag set but row norms deviate from 1")


def init_params(dims: Sequence[int], seed: int, activation: str = "relu") -> EncoderParams:
    """Seeded init: weights ~ N(0, 1/fan_in), biases zero."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ValueError("dims needs >= 2 positive entries")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return EncoderParams(
        weights=tuple(weights), biases=tuple(biases), dims=dims, activation=activation
    )


def _act(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "tanh":
        return np.tanh(z)
    return z


def _act_grad(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "relu":
        return (z > 0.0).astype(np.float64)
    if tag == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


def normalize_rows(mat: np.ndarray) -> np.ndarray:
    """Scale rows to unit norm; rows with norm <= NORM_GUARD become all zeros."""
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    out = np.where(norms > NORM_GUARD, mat / np.where(norms > NORM_GUARD, norms, 1.0), 0.0)
    return out


def normalize_rows_backward(pre: np.ndarray, grad_post: np.ndarray) -> np.ndarray:
    """Jacobian-transpose of row normalization y = x/||x||.

    dL/dx = (g - (g . y) y) / ||x||; rows under the guard get zero gradient
    (their forward output is the constant zero row).
    """
    norms = np.linalg.norm(pre, axis=1, keepdims=True)
    live = norms > NORM_GUARD
    safe = np.where(live, norms, 1.0)
    y = np.where(live, pre / safe, 0.0)
    dot = np.sum(grad_post * y, axis=1, keepdims=True)
    return np.where(live, (grad_post - dot * y) / safe, 0.0)


@dataclass(frozen=True)
class ForwardCache:
    inputs: np.ndarray
    pre_activations: tuple[np.ndarray, ...]
    hidden: tuple[np.ndarray, ...]
    output: np.ndarray  # pre-normalization


def forward_with_cache(params: EncoderParams, inputs: np.ndarray) -> ForwardCache:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(f"inputs shape {x.shape} does not match input dim {params.input_dim}")
    pre = []
    hidden = []
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        pre.append(z)
        a = z if i == last else _act(params.activation, z)
        if i != last:
            hidden.append(a)
    return ForwardCache(inputs=x, pre_activations=tuple(pre), hidden=tuple(hidden), output=a)


def forward(params: EncoderParams, inputs: np.ndarray, normalize: bool = False) -> EmbeddingBatch:
    out = forward_with_cache(params, inputs).output
    if normalize:
        return EmbeddingBatch(vectors=normalize_rows(out), normalized=True)
    return EmbeddingBatch(vectors=out, normalized=False)


def backward(
    params: EncoderParams,
    cache: ForwardCache,
    upstream: np.ndarray,
    normalized: bool = False,
) -> tuple[ParamGrads, np.ndarray]:
    """Exact gradients of the forward composition.

    `upstream` is dL/d(output); set normalized=True when it is taken with
    respect to the unit-normalized embeddings, in which case the
    normalization Jacobian is applied first. Returns (parameter gradients,
    gradient with respect to the inputs).
    """
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != cache.output.shape:
        raise ValueError(f"upstream shape {g.shape} != output shape {cache.output.shape}")
    if normalized:
        g = normalize_rows_backward(cache.output, g)

    grads_w: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    grads_b: list[np.ndarray] = [None] * len(params.biases)  # type: ignore[list-item]
    last = len(params.weights) - 1
    for i in range(last, -1, -1):
        if i != last:
            g = g * _act_grad(params.activation, cache.pre_activations[i])
        a_prev = cache.inputs if i == 0 else cache.hidden[i - 1]
        grads_w[i] = g.T @ a_prev
        grads_b[i] = g.sum(axis=0)
        g = g @ params.weights[i]
    return ParamGrads(weights=tuple(grads_w), biases=tuple(grads_b)), g


def init_optimizer(params: EncoderParams, learning_rate: float, momentum: float) -> OptimizerState:
    return OptimizerState(
        buffers_w=tuple(np.zeros_like(w) for w in params.weights),
        buffers_b=tuple(np.zeros_like(b) for b in params.biases),
        learning_rate=float(learning_rate),
        momentum=float(momentum),
    )


def sgd_step(
    params: EncoderParams, grads: ParamGrads, state: OptimizerState
) -> tuple[EncoderParams, OptimizerState]:
    """buffer <- momentum*buffer + grad; param <- param - lr*buffer.

    Raises PoisonedStepError on any non-finite gradient entry, leaving both
    params and state untouched.
    """
    for g in list(grads.weights) + list(grads.biases):
        if not np.isfinite(g).all():
            raise PoisonedStepError("non-finite gradient entry; step aborted")
    new_bw = tuple(state.momentum * b + g for b, g in zip(state.buffers_w, grads.weights))
    new_bb = tuple(state.momentum * b + g for b, g in zip(state.buffers_b, grads.biases))
    new_w = tuple(w - state.learning_rate * b for w, b in zip(params.weights, new_bw))
    new_b = tuple(v - state.learning_rate * b for v, b in zip(params.biases, new_bb))
    return (
        EncoderParams(weights=new_w, biases=new_b, dims=params.dims,
                      activation=params.activation),
        OptimizerState(buffers_w=new_bw, buffers_b=new_bb,
                       learning_rate=state.learning_rate, momentum=state.momentum),
    )


# ---------------------------------------------------------------------------
# Checkpoints: delimited text, one array per line, floats via repr for
# bit-exact round trips.

CHECKPOINT_HEADER = "# fscilab encoder checkpoint v1"


def dump_params(params: EncoderParams) -> str:
    lines = [
        CHECKPOINT_HEADER,
        "dims," + ",".join(str(d) for d in params.dims),
        "activation," + params.activation,
    ]
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        lines.append(f"W{i}," + ",".join(repr(float(v)) for v in w.ravel()))
        lines.append(f"b{i}," + ",".join(repr(float(v)) for v in b))
    return "\n".join(lines) + "\n"


def load_params(text: str) -> EncoderParams:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ValueError(f"not a recognized encoder checkpoint (expected {CHECKPOINT_HEADER!r})")
    fields: dict[str, str] = {}
    for ln in lines[1:]:
        key, _, rest = ln.partition(",")
        fields[key] = rest
    dims = tuple(int(v) for v in fields["dims"].split(","))
    activation = fields["activation"]
    weights = []
    biases = []
    for i in range(len(dims) - 1):
        shape = (dims[i + 1], dims[i])
        w = np.array([float(v) for v in fields[f"W{i}"].split(",")]).reshape(shape)
        b = np.array([float(v) for v in fields[f"b{i}"].split(",")])
        weights.append(w)
        biases.append(b)
    return EncoderParams(
        weights=tuple(weights), biases=tuple(biases), dims=dims, activation=activation
    )
