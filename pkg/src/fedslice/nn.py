"""Minimal fully-connected regression network on flat parameter vectors.

The network is deliberately tiny (default 3-3-2-1, ReLU hidden layers,
identity output) and every operation is a pure function over a flat float64
parameter vector, which is the unit exchanged between server and clients.
Gradients are hand-written reverse mode; the optimizer is Adam.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError

DEFAULT_LAYER_SIZES = (3, 3, 2, 1)

# ReLU subgradient at exactly 0 is taken as 0 (strict > in the masks below).


def _parameter_count(layer_sizes: tuple[int, ...]) -> int:
    return sum((a + 1) * b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description: ordered layer widths, input first, output last."""

    layer_sizes: tuple[int, ...] = DEFAULT_LAYER_SIZES

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ConfigError("network needs at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise ConfigError(f"layer sizes must be positive, got {sizes}")
        if sizes[-1] != 1:
            raise ConfigError(f"output layer must have exactly 1 neuron, got {sizes[-1]}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_features(self) -> int:
        return self.layer_sizes[0]

    @property
    def param_count(self) -> int:
        return _parameter_count(self.layer_sizes)

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer, in forward order."""
        return list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))


@dataclass(frozen=True)
class ModelParams:
    """Flat, ordered vector of all weights and biases for a NetworkSpec.

    Layout is layer-major: layer 1 weights (row-major, fan_in x fan_out),
    layer 1 biases, layer 2 weights, and so on.
    """

    values: np.ndarray
    spec: NetworkSpec

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ConfigError("parameter vector must be one-dimensional")
        if values.shape[0] != self.spec.param_count:
            raise ConfigError(
                f"parameter vector has {values.shape[0]} entries, "
                f"spec {self.spec.layer_sizes} needs {self.spec.param_count}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]


def _unpack(params: ModelParams) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split the flat vector into per-layer (weights, biases) views."""
    out = []
    offset = 0
    for n_in, n_out in params.spec.layer_shapes():
        w = params.values[offset:offset + n_in * n_out].reshape(n_in, n_out)
        offset += n_in * n_out
        b = params.values[offset:offset + n_out]
        offset += n_out
        out.append((w, b))
    return out


def pack(spec: NetworkSpec, layers: list[tuple[np.ndarray, np.ndarray]]) -> ModelParams:
    """Assemble per-layer (weights, biases) arrays into a flat ModelParams."""
    chunks = []
    for (w, b), (n_in, n_out) in zip(layers, spec.layer_shapes()):
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if w.shape != (n_in, n_out) or b.shape != (n_out,):
            raise ConfigError(f"layer arrays do not match spec {spec.layer_sizes}")
        chunks.append(w.reshape(-1))
        chunks.append(b)
    return ModelParams(np.concatenate(chunks), spec)


def init_params(spec: NetworkSpec, seed_or_rng: int | np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases, drawn layer by layer in order."""
    rng = (seed_or_rng if isinstance(seed_or_rng, np.random.Generator)
           else np.random.default_rng(seed_or_rng))
    layers = []
    for n_in, n_out in spec.layer_shapes():
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_in, n_out))
        layers.append((w, np.zeros(n_out)))
    return pack(spec, layers)


def _as_batch(params: ModelParams, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.spec.n_features:
        raise ConfigError(
            f"expected feature dimension {params.spec.n_features}, got shape {x.shape}"
        )
    return x


def _forward_cached(params: ModelParams, x: np.ndarray):
    """Forward pass keeping activations and pre-activations for backprop."""
    layers = _unpack(params)
    activations = [x]
    pre_acts = []
    a = x
    for i, (w, b) in enumerate(layers):
        z = a @ w + b
        pre_acts.append(z)
        a = z if i == len(layers) - 1 else np.maximum(z, 0.0)
        activations.append(a)
    return activations, pre_acts


def forward_batch(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Predictions for a batch of feature rows; returns shape (B,)."""
    x = _as_batch(params, features)
    _, pre_acts = _forward_cached(params, x)
    return pre_acts[-1][:, 0]


def forward(params: ModelParams, x: np.ndarray) -> float:
    """Scalar prediction for a single feature vector."""
    return float(forward_batch(params, np.asarray(x, dtype=np.float64)[None, :])[0])


def param_gradients(params: ModelParams, features: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Gradient of batch-mean squared error with respect to every parameter."""
    x = _as_batch(params, features)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if y.shape[0] == 0:
        raise ValueError("gradient of an empty batch is undefined")
    if y.shape[0] != x.shape[0]:
        raise ConfigError(f"batch has {x.shape[0]} rows but {y.shape[0]} targets")

    layers = _unpack(params)
    activations, pre_acts = _forward_cached(params, x)
    pred = pre_acts[-1][:, 0]

    grads: list[np.ndarray | None] = [None] * len(layers)
    delta = ((2.0 / y.shape[0]) * (pred - y))[:, None]
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw = activations[i].T @ delta
        gb = delta.sum(axis=0)
        grads[i] = np.concatenate([gw.reshape(-1), gb])
        if i > 0:
            delta = (delta @ w.T) * (pre_acts[i - 1] > 0.0)
    return np.concatenate(grads)


def input_gradients_batch(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """d(prediction)/d(input) for each row independently; returns (B, F)."""
    x = _as_batch(params, features)
    layers = _unpack(params)
    _, pre_acts = _forward_cached(params, x)

    delta = np.ones((x.shape[0], 1))
    for i in range(len(layers) - 1, 0, -1):
        w, _ = layers[i]
        delta = (delta @ w.T) * (pre_acts[i - 1] > 0.0)
    return delta @ layers[0][0].T


def input_gradients(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """d(prediction)/d(input) for a single feature vector; returns (F,)."""
    return input_gradients_batch(params, np.asarray(x, dtype=np.float64)[None, :])[0]


@dataclass(frozen=True)
class AdamState:
    """Per-parameter Adam moments plus the shared step counter."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 0.0015
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        m = np.ascontiguousarray(self.first_moment, dtype=np.float64)
        v = np.ascontiguousarray(self.second_moment, dtype=np.float64)
        if m.shape != v.shape or m.ndim != 1:
            raise ConfigError("Adam moment vectors must be equal-length 1-D arrays")
        if self.step_count < 0:
            raise ConfigError("step_count cannot be negative")
        m.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "first_moment", m)
        object.__setattr__(self, "second_moment", v)

    @classmethod
    def fresh(cls, n_params: int, learning_rate: float = 0.0015, **kwargs) -> "AdamState":
        zeros = np.zeros(n_params)
        return cls(zeros, zeros.copy(), 0, learning_rate, **kwargs)


def adam_step(params: ModelParams, grads: np.ndarray, state: AdamState) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; returns new params and advanced state."""
    g = np.asarray(grads, dtype=np.float64).reshape(-1)
    if g.shape[0] != len(params) or state.first_moment.shape[0] != len(params):
        raise ConfigError("gradient, state and parameter lengths must agree")
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient passed to Adam")

    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_values = params.values - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.learning_rate, state.beta1, state.beta2, state.epsilon)
    return ModelParams(new_values, params.spec), new_state


def train_clients(
    params: ModelParams,
    features: list[np.ndarray],
    targets: list[np.ndarray],
    epochs: int,
    learning_rate: float = 0.0015,
    batch_size: int | None = None,
    shuffle_rngs: list[np.random.Generator] | None = None,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> list[ModelParams]:
    """Train one copy of `params` per client, all clients in lockstep.

    Every client starts from the same broadcast parameters with fresh Adam
    moments and sees only its own data, so results are mathematically
    independent per client; stacking them along a leading axis just amortizes
    array overhead. With `batch_size` set, each epoch walks a per-client
    permutation of the rows (from `shuffle_rngs`, or row order when absent);
    otherwise each epoch is one full-batch step. Clients must share a row
    count to train in lockstep.
    """
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    if not features or len(features) != len(targets):
        raise ValueError("need matching non-empty feature/target lists")
    xs = np.stack([np.asarray(f, dtype=np.float64) for f in features], axis=0)
    ys = np.stack([np.asarray(t, dtype=np.float64).reshape(-1) for t in targets], axis=0)
    n_clients, n_rows, _ = xs.shape
    if n_rows == 0:
        raise ValueError("cannot train on an empty dataset")
    if xs.shape[2] != params.spec.n_features:
        raise ConfigError(f"expected feature dimension {params.spec.n_features}, got {xs.shape}")

    shapes = params.spec.layer_shapes()
    n_layers = len(shapes)
    ws, bs, grads_w, grads_b = [], [], [], []
    mw, vw, mb, vb = [], [], [], []
    for w, b in _unpack(params):
        ws.append(np.broadcast_to(w, (n_clients, *w.shape)).copy())
        bs.append(np.broadcast_to(b, (n_clients, 1, b.shape[0])).copy())
        mw.append(np.zeros_like(ws[-1]))
        vw.append(np.zeros_like(ws[-1]))
        mb.append(np.zeros_like(bs[-1]))
        vb.append(np.zeros_like(bs[-1]))

    if batch_size is None or batch_size >= n_rows:
        batches = [np.arange(n_rows)]
        shuffle_rngs = None
    else:
        batches = [np.arange(start, min(start + batch_size, n_rows))
                   for start in range(0, n_rows, batch_size)]

    step = 0
    for _ in range(epochs):
        if shuffle_rngs is not None:
            orders = np.stack([rng.permutation(n_rows) for rng in shuffle_rngs], axis=0)
        else:
            orders = None
        for batch in batches:
            if orders is not None:
                idx = orders[:, batch]
                xb = np.take_along_axis(xs, idx[:, :, None], axis=1)
                yb = np.take_along_axis(ys, idx, axis=1)
            else:
                xb = xs[:, batch]
                yb = ys[:, batch]

            activations = [xb]
            pre_acts = []
            a = xb
            for i in range(n_layers):
                z = a @ ws[i] + bs[i]
                pre_acts.append(z)
                a = z if i == n_layers - 1 else np.maximum(z, 0.0)
                activations.append(a)

            delta = ((2.0 / yb.shape[1]) * (pre_acts[-1][:, :, 0] - yb))[:, :, None]
            for i in range(n_layers - 1, -1, -1):
                grads_w_i = activations[i].transpose(0, 2, 1) @ delta
                grads_b_i = delta.sum(axis=1, keepdims=True)
                if i > 0:
                    delta = (delta @ ws[i].transpose(0, 2, 1)) * (pre_acts[i - 1] > 0.0)
                if not (np.all(np.isfinite(grads_w_i)) and np.all(np.isfinite(grads_b_i))):
                    raise NumericError("non-finite gradient during local training")
                grads_w.insert(0, grads_w_i)
                grads_b.insert(0, grads_b_i)

            step += 1
            correction1 = 1.0 - beta1 ** step
            correction2 = 1.0 - beta2 ** step
            for i in range(n_layers):
                gw, gb = grads_w[i], grads_b[i]
                mw[i] = beta1 * mw[i] + (1.0 - beta1) * gw
                vw[i] = beta2 * vw[i] + (1.0 - beta2) * gw * gw
                mb[i] = beta1 * mb[i] + (1.0 - beta1) * gb
                vb[i] = beta2 * vb[i] + (1.0 - beta2) * gb * gb
                ws[i] = ws[i] - learning_rate * (mw[i] / correction1) / (
                    np.sqrt(vw[i] / correction2) + epsilon)
                bs[i] = bs[i] - learning_rate * (mb[i] / correction1) / (
                    np.sqrt(vb[i] / correction2) + epsilon)
            grads_w.clear()
            grads_b.clear()

    out = []
    for c in range(n_clients):
        layers = [(ws[i][c], bs[i][c, 0]) for i in range(n_layers)]
        out.append(pack(params.spec, layers))
    return out


def train_local(
    params: ModelParams,
    features: np.ndarray,
    targets: np.ndarray,
    epochs: int,
    state: AdamState | None = None,
    batch_size: int | None = None,
    shuffle_rng: np.random.Generator | None = None,
) -> ModelParams:
    """Adam training of one client for a fixed number of epochs.

    The optimizer state defaults to a fresh one so that every federated round
    starts from clean moments; the final state is discarded for the same
    reason. With the default `batch_size=None` each epoch takes one full-batch
    step; otherwise each epoch walks seeded minibatches. Deterministic given
    the data order and any provided rng.
    """
    if state is None:
        state = AdamState.fresh(len(params))
    fresh = state.step_count == 0 and not state.first_moment.any() and not state.second_moment.any()
    if fresh:
        return train_clients(
            params,
            [np.asarray(features, dtype=np.float64)],
            [np.asarray(targets, dtype=np.float64)],
            epochs,
            learning_rate=state.learning_rate,
            batch_size=batch_size,
            shuffle_rngs=None if shuffle_rng is None else [shuffle_rng],
            beta1=state.beta1,
            beta2=state.beta2,
            epsilon=state.epsilon,
        )[0]

    # Warm optimizer state: compose the granular public ops instead.
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if y.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    for _ in range(epochs):
        if batch_size is None or batch_size >= y.shape[0]:
            params, state = adam_step(params, param_gradients(params, x, y), state)
            continue
        order = (shuffle_rng.permutation(y.shape[0]) if shuffle_rng is not None
                 else np.arange(y.shape[0]))
        for start in range(0, y.shape[0], batch_size):
            idx = order[start:start + batch_size]
            params, state = adam_step(params, param_gradients(params, x[idx], y[idx]), state)
    return params


def to_bytes(params: ModelParams) -> bytes:
    """Little-endian wire format: uint32 layer sizes, then float64 values."""
    sizes = params.spec.layer_sizes
    header = struct.pack(f"<{len(sizes)}I", *sizes)
    return header + params.values.astype("<f8").tobytes()


def from_bytes(data: bytes, spec: NetworkSpec | None = None) -> ModelParams:
    """Parse the wire format back into ModelParams.

    Without an explicit spec, the layer count is recovered by scanning for the
    unique header length whose implied parameter count matches the payload.
    """
    if spec is not None:
        n = len(spec.layer_sizes)
        expected = 4 * n + 8 * spec.param_count
        if len(data) != expected:
            raise ConfigError(f"expected {expected} bytes for {spec.layer_sizes}, got {len(data)}")
        sizes = struct.unpack(f"<{n}I", data[:4 * n])
        if tuple(sizes) != spec.layer_sizes:
            raise ConfigError(f"header {sizes} does not match spec {spec.layer_sizes}")
        values = np.frombuffer(data[4 * n:], dtype="<f8")
        return ModelParams(values.astype(np.float64), spec)

    matches = []
    for n in range(2, len(data) // 4 + 1):
        sizes = struct.unpack(f"<{n}I", data[:4 * n])
        if any(s < 1 for s in sizes) or sizes[-1] != 1:
            continue
        if 4 * n + 8 * _parameter_count(sizes) == len(data):
            matches.append(sizes)
    if len(matches) != 1:
        raise ConfigError(f"cannot infer a unique architecture from {len(data)} bytes")
    return from_bytes(data, NetworkSpec(matches[0]))
