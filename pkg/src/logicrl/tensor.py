"""Dense MLP forward/backward passes, optimizers, and a text checkpoint format.

Everything is float64. Parameters live in named, ordered ParamSets so that
gradients, optimizer moments and checkpoints all share one representation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional

import numpy as np

ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("identity", "softmax")

CHECKPOINT_MAGIC = "paramset-v1"


class UpdateRejected(ValueError):
    """Raised when an optimizer step would write non-finite values."""


@dataclass(frozen=True)
class MLPConfig:
    """Shape of a fully-connected net: sizes of input, hidden and output layers.

    The hidden activation applies to every layer except the last; the output
    activation is identity or softmax (softmax only for categorical heads).
    """

    layer_sizes: tuple[int, ...]
    activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("need at least input and output layer sizes")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive: {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def to_json(self) -> str:
        return json.dumps(
            {
                "layer_sizes": list(self.layer_sizes),
                "activation": self.activation,
                "output_activation": self.output_activation,
            }
        )

    @staticmethod
    def from_json(text: str) -> "MLPConfig":
        d = json.loads(text)
        return MLPConfig(
            tuple(d["layer_sizes"]), d["activation"], d["output_activation"]
        )


class ParamSet:
    """Ordered mapping of name -> float64 array; arrays must stay finite."""

    def __init__(self, entries: Iterable[tuple[str, np.ndarray]], version_tag: str = "v1"):
        self.entries: dict[str, np.ndarray] = {}
        self.version_tag = version_tag
        for name, arr in entries:
            if name in self.entries:
                raise ValueError(f"duplicate entry name {name!r}")
            arr = np.asarray(arr, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in entry {name!r}")
            self.entries[name] = arr

    def __iter__(self):
        return iter(self.entries.items())

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name]

    def names(self) -> list[str]:
        return list(self.entries)

    def copy(self) -> "ParamSet":
        return ParamSet(((n, a.copy()) for n, a in self), self.version_tag)

    def zeros_like(self) -> "ParamSet":
        return ParamSet(((n, np.zeros_like(a)) for n, a in self), self.version_tag)

    def n_params(self) -> int:
        return sum(a.size for a in self.entries.values())

    def scaled(self, factor: float) -> "ParamSet":
        return ParamSet(((n, a * factor) for n, a in self), self.version_tag)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.entries.values()])

    def with_flat(self, vec: np.ndarray) -> "ParamSet":
        """Rebuild a ParamSet from a flat vector laid out in entry order."""
        out, i = [], 0
        for name, a in self:
            out.append((name, np.asarray(vec[i : i + a.size]).reshape(a.shape)))
            i += a.size
        if i != len(vec):
            raise ValueError("flat vector length mismatch")
        return ParamSet(out, self.version_tag)

    def same_shapes(self, other: "ParamSet") -> bool:
        return self.names() == other.names() and all(
            self[n].shape == other[n].shape for n in self.entries
        )


def weight_name(layer: int) -> str:
    return f"w{layer}"


def bias_name(layer: int) -> str:
    return f"b{layer}"


def mlp_init(config: MLPConfig, seed: int, prefix: str = "", version_tag: str = "v1") -> ParamSet:
    """Glorot-uniform weights, zero biases; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    entries = []
    sizes = config.layer_sizes
    for layer in range(config.n_layers):
        fan_in, fan_out = sizes[layer], sizes[layer + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        entries.append((prefix + weight_name(layer), w))
        entries.append((prefix + bias_name(layer), np.zeros(fan_out)))
    return ParamSet(entries, version_tag)


@dataclass
class MLPCache:
    """Per-layer records from a forward pass, consumed by mlp_backward."""

    inputs: np.ndarray            # (n, d_in)
    pre: list[np.ndarray]         # pre-activation per layer, (n, d_l)
    post: list[np.ndarray]        # post-activation per layer, (n, d_l)
    single: bool                  # input was 1-D
    prefix: str = ""


def _as_batch(x: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ValueError(f"{what}: expected length {dim}, got {x.shape[0]}")
        return x[None, :], True
    if x.ndim == 2:
        if x.shape[1] != dim:
            raise ValueError(f"{what}: expected width {dim}, got {x.shape[1]}")
        return x, False
    raise ValueError(f"{what}: expected 1-D or 2-D input")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax; accepts a vector or a matrix of rows."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("softmax of empty input")
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def _activate(pre: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(pre)
    return np.maximum(pre, 0.0)


def _activation_grad(pre: np.ndarray, post: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - post * post
    return (pre > 0.0).astype(np.float64)


def mlp_forward(
    params: ParamSet, config: MLPConfig, x: np.ndarray, prefix: str = ""
) -> tuple[np.ndarray, MLPCache]:
    """Run the net on one input vector or a batch of row vectors.

    Returns the output (same leading shape as the input) and the activation
    cache needed for mlp_backward.
    """
    batch, single = _as_batch(x, config.layer_sizes[0], "mlp_forward input")
    pre_list: list[np.ndarray] = []
    post_list: list[np.ndarray] = []
    h = batch
    last = config.n_layers - 1
    for layer in range(config.n_layers):
        w = params[prefix + weight_name(layer)]
        b = params[prefix + bias_name(layer)]
        pre = h @ w + b
        if layer < last:
            post = _activate(pre, config.activation)
        elif config.output_activation == "softmax":
            post = softmax(pre)
        else:
            post = pre
        pre_list.append(pre)
        post_list.append(post)
        h = post
    cache = MLPCache(batch, pre_list, post_list, single, prefix)
    return (h[0] if single else h), cache


def mlp_backward(
    params: ParamSet,
    config: MLPConfig,
    cache: MLPCache,
    output_grad: np.ndarray,
    hidden_grads: Optional[dict[int, np.ndarray]] = None,
) -> tuple[ParamSet, np.ndarray]:
    """Backpropagate a gradient w.r.t. the net output through the cache.

    `hidden_grads` maps a layer index to an extra gradient added at that
    layer's post-activation; this is how a side head (e.g. a value head fed
    from the last hidden layer) routes its gradient into a shared trunk.
    Gradients are summed over the batch. Also returns the gradient w.r.t.
    the input batch.
    """
    if len(cache.pre) != config.n_layers:
        raise ValueError("cache does not match config")
    g, single = _as_batch(
        output_grad, config.layer_sizes[-1], "mlp_backward output_grad"
    )
    if single != cache.single or g.shape[0] != cache.inputs.shape[0]:
        raise ValueError("output_grad does not match cached batch")
    prefix = cache.prefix
    grads: dict[str, np.ndarray] = {}
    last = config.n_layers - 1
    d_post = g
    for layer in range(last, -1, -1):
        pre, post = cache.pre[layer], cache.post[layer]
        if hidden_grads and layer in hidden_grads and layer != last:
            d_post = d_post + hidden_grads[layer]
        if layer == last:
            if config.output_activation == "softmax":
                # exact softmax Jacobian-transpose product, row-wise
                dot = np.sum(d_post * post, axis=1, keepdims=True)
                d_pre = post * (d_post - dot)
            else:
                d_pre = d_post
        else:
            d_pre = d_post * _activation_grad(pre, post, config.activation)
        h_in = cache.inputs if layer == 0 else cache.post[layer - 1]
        grads[prefix + weight_name(layer)] = h_in.T @ d_pre
        grads[prefix + bias_name(layer)] = d_pre.sum(axis=0)
        d_post = d_pre @ params[prefix + weight_name(layer)].T
    ordered = [(name, grads[name]) for name in params.names()]
    input_grad = d_post[0] if cache.single else d_post
    return ParamSet(ordered, params.version_tag), input_grad


def _check_update(params: ParamSet, grads: ParamSet) -> None:
    if not params.same_shapes(grads):
        raise ValueError("gradient names/shapes do not match parameters")
    for name, g in grads:
        if not np.all(np.isfinite(g)):
            raise UpdateRejected(f"non-finite gradient in {name!r}; step skipped")


def sgd_step(params: ParamSet, grads: ParamSet, learning_rate: float) -> ParamSet:
    """One plain gradient-descent step; rejects non-finite gradients."""
    _check_update(params, grads)
    return ParamSet(
        ((n, a - learning_rate * grads[n]) for n, a in params), params.version_tag
    )


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: ParamSet,
    grads: ParamSet,
    state: AdamState,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ParamSet, AdamState]:
    """One Adam step; moment buffers live in `state` (updated copy returned)."""
    _check_update(params, grads)
    t = state.t + 1
    new_m, new_v, out = {}, {}, []
    for name, p in params:
        g = grads[name]
        m = beta1 * state.m.get(name, np.zeros_like(p)) + (1 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(p)) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        out.append((name, p - learning_rate * m_hat / (np.sqrt(v_hat) + eps)))
        new_m[name], new_v[name] = m, v
    return ParamSet(out, params.version_tag), AdamState(new_m, new_v, t)


class Optimizer:
    """Stateful SGD or Adam wrapper over one ParamSet's update stream."""

    def __init__(self, kind: str = "adam", learning_rate: float = 1e-3):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.learning_rate = learning_rate
        self.adam = AdamState()

    def step(self, params: ParamSet, grads: ParamSet) -> ParamSet:
        if self.kind == "sgd":
            return sgd_step(params, grads, self.learning_rate)
        new_params, self.adam = adam_step(params, grads, self.adam, self.learning_rate)
        return new_params

    def get_state(self) -> dict:
        return {
            "kind": self.kind,
            "learning_rate": self.learning_rate,
            "t": self.adam.t,
            "m": {n: a.tolist() for n, a in self.adam.m.items()},
            "v": {n: a.tolist() for n, a in self.adam.v.items()},
        }

    def set_state(self, state: dict) -> None:
        self.kind = state["kind"]
        self.learning_rate = state["learning_rate"]
        self.adam = AdamState(
            {n: np.asarray(a, dtype=np.float64) for n, a in state["m"].items()},
            {n: np.asarray(a, dtype=np.float64) for n, a in state["v"].items()},
            state["t"],
        )


def _format_value(v: float) -> str:
    return repr(float(v))


def save_paramset(fp: IO[str], params: ParamSet, config: Optional[MLPConfig] = None) -> None:
    """Write the text checkpoint: header lines then one decimal line per array.

    Round-trips within float64 repr precision (exact in practice).
    """
    fp.write(CHECKPOINT_MAGIC + "\n")
    fp.write(f"version_tag {params.version_tag}\n")
    fp.write("config " + (config.to_json() if config is not None else "-") + "\n")
    fp.write(f"entries {len(params)}\n")
    for name, arr in params:
        dims = " ".join(str(d) for d in arr.shape) if arr.ndim else "0"
        fp.write(f"{name} {dims}\n")
    fp.write("data\n")
    for _, arr in params:
        fp.write(" ".join(_format_value(v) for v in arr.ravel()) + "\n")


def load_paramset(fp: IO[str]) -> tuple[ParamSet, Optional[MLPConfig]]:
    """Read a checkpoint written by save_paramset."""
    magic = fp.readline().strip()
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"not a {CHECKPOINT_MAGIC} checkpoint (got {magic!r})")
    tag_line = fp.readline().strip()
    if not tag_line.startswith("version_tag "):
        raise ValueError("missing version_tag header")
    version_tag = tag_line.split(" ", 1)[1]
    cfg_line = fp.readline().strip()
    if not cfg_line.startswith("config "):
        raise ValueError("missing config header")
    cfg_text = cfg_line.split(" ", 1)[1]
    config = None if cfg_text == "-" else MLPConfig.from_json(cfg_text)
    count_line = fp.readline().strip()
    if not count_line.startswith("entries "):
        raise ValueError("missing entries header")
    n = int(count_line.split(" ", 1)[1])
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(n):
        parts = fp.readline().split()
        name, dims = parts[0], tuple(int(d) for d in parts[1:])
        shapes.append((name, () if dims == (0,) else dims))
    if fp.readline().strip() != "data":
        raise ValueError("missing data marker")
    entries = []
    for name, shape in shapes:
        values = np.fromiter((float(t) for t in fp.readline().split()), dtype=np.float64)
        size = int(np.prod(shape)) if shape else 1
        if values.size != size:
            raise ValueError(f"entry {name!r}: expected {size} values, got {values.size}")
        entries.append((name, values.reshape(shape)))
    return ParamSet(entries, version_tag), config


def save_paramset_file(path, params: ParamSet, config: Optional[MLPConfig] = None) -> None:
    with open(path, "w") as fp:
        save_paramset(fp, params, config)


def load_paramset_file(path) -> tuple[ParamSet, Optional[MLPConfig]]:
    with open(path) as fp:
        return load_paramset(fp)
