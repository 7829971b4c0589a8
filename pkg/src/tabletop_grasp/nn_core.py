"""Dense feed-forward networks with hand-written backprop and Adam.

Only what the actor-critic needs: fully connected layers with ``tanh`` or
identity activations, in float64.  ``forward`` accepts a single sample of
shape ``(in,)`` or a stack of samples ``(batch, in)``; gradients returned by
``backward`` are summed over the stack.
"""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

ACTIVATIONS = ("tanh", "identity")
CHECKPOINT_VERSION = 1


class NetworkError(ValueError):
    pass


class InvalidArchitecture(NetworkError):
    pass


class ShapeError(NetworkError):
    pass


class CacheMismatch(NetworkError):
    pass


class NonFiniteGradient(NetworkError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str = "tanh"

    @property
    def shape(self) -> Tuple[int, int]:
        return self.weights.shape


@dataclass
class MlpParams:
    layers: List[Layer]

    @property
    def layer_sizes(self) -> List[int]:
        return [self.layers[0].weights.shape[1]] + [l.weights.shape[0] for l in self.layers]

    @property
    def activations(self) -> List[str]:
        return [l.activation for l in self.layers]

    def arrays(self) -> List[np.ndarray]:
        out = []
        for l in self.layers:
            out.extend((l.weights, l.biases))
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        it = iter(arrays)
        return MlpParams([Layer(next(it), next(it), l.activation) for l in self.layers])

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def zeros_like(self) -> "MlpParams":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())


@dataclass
class ForwardCache:
    params: MlpParams
    inputs: List[np.ndarray]  # input to each layer
    pre: List[np.ndarray]  # pre-activation of each layer
    outputs: List[np.ndarray]
    batched: bool


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8


def init_params(seed: int, layer_sizes: Sequence[int], activations: Optional[Sequence[str]] = None) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases.

    Hidden layers default to ``tanh`` and the output layer to identity.
    """
    sizes = list(layer_sizes)
    if len(sizes) < 2 or any(int(s) <= 0 for s in sizes):
        raise InvalidArchitecture(f"need at least two positive layer sizes, got {sizes}")
    n_layers = len(sizes) - 1
    if activations is None:
        activations = ["tanh"] * (n_layers - 1) + ["identity"]
    activations = list(activations)
    if len(activations) != n_layers or any(a not in ACTIVATIONS for a in activations):
        raise InvalidArchitecture(f"bad activation list {activations} for {n_layers} layers")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), act))
    return MlpParams(layers)


def _activate(z: np.ndarray, act: str) -> np.ndarray:
    return np.tanh(z) if act == "tanh" else z


def forward(params: MlpParams, x) -> Tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=float)
    batched = x.ndim == 2
    h = x if batched else x[None, :]
    if h.ndim != 2 or h.shape[1] != params.layers[0].weights.shape[1]:
        raise ShapeError(
            f"input shape {x.shape} does not match layer input {params.layers[0].weights.shape[1]}"
        )
    inputs, pre, outs = [], [], []
    for layer in params.layers:
        inputs.append(h)
        z = h @ layer.weights.T + layer.biases
        h = _activate(z, layer.activation)
        pre.append(z)
        outs.append(h)
    cache = ForwardCache(params, inputs, pre, outs, batched)
    return (h if batched else h[0]), cache


def backward(params: MlpParams, cache: ForwardCache, output_gradient) -> Tuple[MlpParams, np.ndarray]:
    """Back-propagate ``dloss/doutput``.

    Returns the parameter gradients (an ``MlpParams`` of the same shapes)
    and ``dloss/dinput``.
    """
    if cache.params is not params or len(cache.inputs) != len(params.layers):
        raise CacheMismatch("cache was produced by a different parameter set")
    g = np.asarray(output_gradient, dtype=float)
    if not cache.batched:
        g = g[None, :]
    if g.shape != cache.outputs[-1].shape:
        raise ShapeError(f"output gradient shape {g.shape} != output shape {cache.outputs[-1].shape}")
    grads: List[Layer] = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        if layer.activation == "tanh":
            g = g * (1.0 - cache.outputs[i] ** 2)
        grads[i] = Layer(g.T @ cache.inputs[i], g.sum(axis=0), layer.activation)
        g = g @ layer.weights
    return MlpParams(grads), (g if cache.batched else g[0])


def init_adam(params: MlpParams, beta1: float = 0.9, beta2: float = 0.999, eps_hat: float = 1e-8) -> AdamState:
    arrays = params.arrays()
    return AdamState([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0, beta1, beta2, eps_hat)


def adam_update_(params: MlpParams, state: AdamState, grads: MlpParams, lr: float) -> None:
    """In-place variant of :func:`adam_step` for the training loop."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if len(p_arrays) != len(g_arrays) or any(p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise ShapeError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in g_arrays):
        raise NonFiniteGradient("gradient contains NaN or inf; update rejected")
    b1, b2 = state.beta1, state.beta2
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        tmp = np.multiply(g, 1.0 - b1)
        m *= b1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v *= b2
        v += tmp
        # tmp <- lr * (m / c1) / (sqrt(v / c2) + eps_hat)
        np.divide(v, c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.eps_hat
        np.divide(m, tmp, out=tmp)
        tmp *= lr / c1
        p -= tmp


def adam_step(params: MlpParams, state: AdamState, grads: MlpParams, lr: float) -> Tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update returning new params and state.

    ``m <- b1 m + (1-b1) g``, ``v <- b2 v + (1-b2) g^2`` and
    ``p <- p - lr (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps_hat)``.
    The inputs are left untouched.
    """
    new_params = params.copy()
    new_state = AdamState([a.copy() for a in state.m], [a.copy() for a in state.v],
                          state.t, state.beta1, state.beta2, state.eps_hat)
    adam_update_(new_params, new_state, grads, lr)
    return new_params, new_state


# -- checkpoints -------------------------------------------------------------

def _encode(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"].encode("ascii"), validate=True)
    a = np.frombuffer(raw, dtype="<f8").astype(float)
    shape = tuple(int(s) for s in d["shape"])
    if a.size != int(np.prod(shape)):
        raise CheckpointError(f"array payload of {a.size} values does not fill shape {shape}")
    return a.reshape(shape)


def params_to_dict(params: MlpParams) -> dict:
    return {
        "layer_sizes": params.layer_sizes,
        "activations": params.activations,
        "weights": [_encode(l.weights) for l in params.layers],
        "biases": [_encode(l.biases) for l in params.layers],
    }


def params_from_dict(d: dict) -> MlpParams:
    sizes, acts = d["layer_sizes"], d["activations"]
    layers = []
    for i, (w, b, act) in enumerate(zip(d["weights"], d["biases"], acts)):
        W, B = _decode(w), _decode(b)
        if W.shape != (sizes[i + 1], sizes[i]) or B.shape != (sizes[i + 1],) or act not in ACTIVATIONS:
            raise CheckpointError(f"layer {i} does not match declared sizes {sizes}")
        layers.append(Layer(W, B, act))
    if len(layers) != len(sizes) - 1:
        raise CheckpointError("layer count does not match layer_sizes")
    return MlpParams(layers)


def save_checkpoint(path, networks: Dict[str, MlpParams], optimizers: Optional[Dict[str, AdamState]] = None,
                    episodes: int = 0, metadata: Optional[dict] = None) -> None:
    """Write networks (and optionally their Adam state) as one JSON document.

    Arrays are stored row-major as base64 little-endian float64 so that a
    reload is bit-exact.
    """
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "episodes": int(episodes),
        "metadata": metadata or {},
        "networks": {name: params_to_dict(p) for name, p in networks.items()},
        "optimizer": {},
    }
    for name, st in (optimizers or {}).items():
        doc["optimizer"][name] = {
            "t": st.t, "beta1": st.beta1, "beta2": st.beta2, "eps_hat": st.eps_hat,
            "m": [_encode(a) for a in st.m], "v": [_encode(a) for a in st.v],
        }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


@dataclass
class Checkpoint:
    networks: Dict[str, MlpParams]
    optimizers: Dict[str, AdamState] = field(default_factory=dict)
    episodes: int = 0
    metadata: dict = field(default_factory=dict)


def load_checkpoint(path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format_version") != CHECKPOINT_VERSION:
        version = doc.get("format_version") if isinstance(doc, dict) else None
        raise CheckpointError(f"{path}: unsupported checkpoint format_version {version!r}")
    try:
        nets = {k: params_from_dict(v) for k, v in doc["networks"].items()}
        opts = {}
        for k, v in doc.get("optimizer", {}).items():
            opts[k] = AdamState([_decode(a) for a in v["m"]], [_decode(a) for a in v["v"]],
                                int(v["t"]), float(v["beta1"]), float(v["beta2"]), float(v["eps_hat"]))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CheckpointError(f"{path}: corrupted checkpoint ({exc})") from exc
    return Checkpoint(nets, opts, int(doc.get("episodes", 0)), doc.get("metadata", {}))
