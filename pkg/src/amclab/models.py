"""Classifier architectures: build, forward, plain training, persistence.

Architectures are small conv/dense stacks described by a list of layer
descriptors. Parameters live in a plain dict of float64 arrays so that
serialization, transfer and gradient checks stay trivial.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import container
from .autodiff import Node, ShapeMismatch, Tape

_ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureSpec:
    """Ordered layer descriptors plus input shape and class count.

    Layer kinds: conv (filters, kernel, activation), pool (2x2 max),
    dropout (rate), flatten, dense (units, activation). The last layer must
    be a dense layer with ``units == num_classes`` producing raw logits.
    """

    input_shape: tuple  # (channels, height, width)
    num_classes: int
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(
            self, "layers", tuple(dict(layer) for layer in self.layers)
        )
        self.shapes()  # validate eagerly

    def shapes(self):
        """Per-layer output shapes; raises SpecError naming the bad layer."""
        if len(self.input_shape) != 3:
            raise SpecError(f"input shape must be (c,h,w), got {self.input_shape}")
        shape = self.input_shape
        out = []
        for i, layer in enumerate(self.layers):
            kind = layer.get("kind")
            if kind == "conv":
                if len(shape) != 3:
                    raise SpecError(f"layer {i}: conv after flatten")
                if layer.get("activation", "linear") not in _ACTIVATIONS:
                    raise SpecError(f"layer {i}: unknown activation {layer}")
                shape = (layer["filters"], shape[1], shape[2])
            elif kind == "pool":
                if len(shape) != 3 or shape[1] % 2 or shape[2] % 2:
                    raise SpecError(f"layer {i}: pool needs even spatial dims, have {shape}")
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
            elif kind == "dropout":
                rate = layer.get("rate")
                if not (0.0 <= rate < 1.0):
                    raise SpecError(f"layer {i}: dropout rate {rate} outside [0,1)")
            elif kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif kind == "dense":
                if len(shape) != 1:
                    raise SpecError(f"layer {i}: dense needs flattened input, have {shape}")
                if layer.get("activation", "linear") not in _ACTIVATIONS:
                    raise SpecError(f"layer {i}: unknown activation {layer}")
                shape = (layer["units"],)
            else:
                raise SpecError(f"layer {i}: unknown kind {kind!r}")
            out.append(shape)
        if not self.layers or self.layers[-1]["kind"] != "dense" \
                or self.layers[-1]["units"] != self.num_classes:
            raise SpecError("last layer must be dense with units == num_classes")
        return out

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "layers": [dict(layer) for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_shape=tuple(d["input_shape"]),
            num_classes=d["num_classes"],
            layers=tuple(d["layers"]),
        )

    def __eq__(self, other):
        if not isinstance(other, ArchitectureSpec):
            return NotImplemented
        return container.canonical_json(self.to_dict()) == container.canonical_json(other.to_dict())


@dataclass
class ModelState:
    spec: ArchitectureSpec
    params: dict
    rng_seed: int


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    learning_rate: float
    batch_size: int
    seed: int

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size <= 0:
            raise ValueError(f"batch size must be positive, got {self.batch_size}")


def target_spec(input_shape=(1, 16, 16), num_classes=4) -> ArchitectureSpec:
    """Desk-scale target: 2 conv + pool blocks, one hidden dense layer."""
    return ArchitectureSpec(
        input_shape=input_shape,
        num_classes=num_classes,
        layers=(
            {"kind": "conv", "filters": 8, "kernel": 3, "activation": "relu"},
            {"kind": "pool"},
            {"kind": "conv", "filters": 16, "kernel": 3, "activation": "relu"},
            {"kind": "pool"},
            {"kind": "flatten"},
            {"kind": "dense", "units": 64, "activation": "relu"},
            {"kind": "dense", "units": num_classes, "activation": "linear"},
        ),
    )


def proxy_spec(input_shape=(1, 16, 16), num_classes=4) -> ArchitectureSpec:
    """Substitute-model architecture: 4 conv layers and 2 dense layers,
    2x2 max pooling after every 2 conv layers, dropout rates 0.4/0.3/0.2."""
    return ArchitectureSpec(
        input_shape=input_shape,
        num_classes=num_classes,
        layers=(
            {"kind": "conv", "filters": 8, "kernel": 3, "activation": "relu"},
            {"kind": "conv", "filters": 8, "kernel": 3, "activation": "relu"},
            {"kind": "pool"},
            {"kind": "dropout", "rate": 0.4},
            {"kind": "conv", "filters": 16, "kernel": 3, "activation": "relu"},
            {"kind": "conv", "filters": 16, "kernel": 3, "activation": "relu"},
            {"kind": "pool"},
            {"kind": "dropout", "rate": 0.3},
            {"kind": "flatten"},
            {"kind": "dense", "units": 64, "activation": "relu"},
            {"kind": "dropout", "rate": 0.2},
            {"kind": "dense", "units": num_classes, "activation": "linear"},
        ),
    )


def build(spec: ArchitectureSpec, seed: int) -> ModelState:
    """Initialize parameters: Glorot-uniform weights, zero biases."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params = {}
    shape = spec.input_shape
    for i, layer in enumerate(spec.layers):
        kind = layer["kind"]
        if kind == "conv":
            f, k = layer["filters"], layer["kernel"]
            c = shape[0]
            fan_in, fan_out = c * k * k, f * k * k
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            params[f"layer{i}_w"] = rng.uniform(-lim, lim, size=(f, c, k, k))
            params[f"layer{i}_b"] = np.zeros(f)
            shape = (f, shape[1], shape[2])
        elif kind == "pool":
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif kind == "dense":
            u = layer["units"]
            fan_in = shape[0]
            lim = np.sqrt(6.0 / (fan_in + u))
            params[f"layer{i}_w"] = rng.uniform(-lim, lim, size=(fan_in, u))
            params[f"layer{i}_b"] = np.zeros(u)
            shape = (u,)
    return ModelState(spec=spec, params=params, rng_seed=seed)


def param_count(model: ModelState) -> int:
    return sum(p.size for p in model.params.values())


def forward(model: ModelState, x, tape: Tape | None = None):
    """Run the network, recording onto a tape. Returns (logits, tape).

    ``x`` may be an ndarray (a new input leaf is created) or a Node already
    recorded on ``tape`` (so attacks can reuse the input leaf for gradients).
    """
    if tape is None:
        tape = Tape(training=False)
    if isinstance(x, Node):
        h = x
    else:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1:] != model.spec.input_shape:
            raise ShapeMismatch(
                f"input shape {x.shape} does not match model input "
                f"(batch,)+{model.spec.input_shape}"
            )
        h = tape.leaf(x, name="input")
    for i, layer in enumerate(model.spec.layers):
        kind = layer["kind"]
        if kind == "conv":
            w = tape.leaf(model.params[f"layer{i}_w"], f"layer{i}_w")
            b = tape.leaf(model.params[f"layer{i}_b"], f"layer{i}_b")
            h = tape.conv2d(h, w, b)
            h = _activate(tape, h, layer.get("activation", "linear"))
        elif kind == "pool":
            h = tape.maxpool2(h)
        elif kind == "dropout":
            h = tape.dropout(h, layer["rate"])
        elif kind == "flatten":
            h = tape.reshape(h, (h.shape[0], int(np.prod(h.shape[1:]))))
        elif kind == "dense":
            w = tape.leaf(model.params[f"layer{i}_w"], f"layer{i}_w")
            b = tape.leaf(model.params[f"layer{i}_b"], f"layer{i}_b")
            h = tape.matmul(h, w)
            h = tape.add(h, b)
            h = _activate(tape, h, layer.get("activation", "linear"))
    return h, tape


def _activate(tape, h, activation):
    if activation == "relu":
        return tape.relu(h)
    if activation == "tanh":
        return tape.tanh(h)
    if activation == "sigmoid":
        return tape.sigmoid(h)
    return h


def param_grads(tape: Tape) -> dict:
    """Collect gradients of named parameter leaves after a backward sweep."""
    grads = {}
    for node in tape.nodes:
        if node.name and node.name.startswith("layer") and node.grad is not None:
            if node.name in grads:  # same parameter used by several passes
                grads[node.name] = grads[node.name] + node.grad
            else:
                grads[node.name] = node.grad
    return grads


def input_grad(tape: Tape):
    for node in tape.nodes:
        if node.name == "input":
            return node.grad
    return None


def _xy(data):
    if hasattr(data, "images"):
        return data.images, data.labels
    return data


def train_plain(model: ModelState, data, cfg: TrainConfig) -> ModelState:
    """Mini-batch SGD on the cross-entropy loss; pure function of inputs."""
    x, y = _xy(data)
    if len(x) == 0:
        raise ValueError("empty dataset")
    if cfg.batch_size > len(x):
        raise ValueError(f"batch size {cfg.batch_size} exceeds dataset size {len(x)}")
    out = ModelState(model.spec, {k: v.copy() for k, v in model.params.items()}, model.rng_seed)
    order_rng = np.random.Generator(np.random.PCG64(cfg.seed))
    drop_rng = np.random.Generator(np.random.PCG64(cfg.seed ^ 0x5DEECE66D))
    for _ in range(cfg.epochs):
        order = order_rng.permutation(len(x))
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _sgd_step(out, x[idx], y[idx], cfg.learning_rate, drop_rng)
    return out


def _sgd_step(model, xb, yb, lr, drop_rng):
    tape = Tape(training=True, rng=drop_rng)
    logits, _ = forward(model, xb, tape)
    loss = tape.cross_entropy(logits, yb)
    tape.backward(loss)
    for name, g in param_grads(tape).items():
        model.params[name] -= lr * g
    return float(loss.data)


def predict_logits(model: ModelState, x) -> np.ndarray:
    logits, _ = forward(model, x)
    return logits.data


def predict_label(model: ModelState, x) -> np.ndarray:
    # argmax breaks ties toward the lowest class index
    return predict_logits(model, x).argmax(axis=1)


def transfer_params(source: ModelState, target_spec: ArchitectureSpec) -> ModelState:
    """Value-copy of the source parameters into a fresh model of equal spec."""
    if source.spec != target_spec:
        raise SpecError("parameter transfer requires identical architecture specs")
    return ModelState(
        spec=target_spec,
        params={k: v.copy() for k, v in source.params.items()},
        rng_seed=source.rng_seed,
    )


def save(model: ModelState, path) -> None:
    header = {
        "type": "model",
        "spec": model.spec.to_dict(),
        "rng_seed": model.rng_seed,
    }
    container.write(path, header, model.params)


def load(path) -> ModelState:
    header, tensors = container.read(path)
    if header.get("type") != "model":
        raise container.ContainerError(f"not a model file: type={header.get('type')!r}", 0)
    spec = ArchitectureSpec.from_dict(header["spec"])
    expected = {
        f"layer{i}_{suffix}"
        for i, layer in enumerate(spec.layers)
        if layer["kind"] in ("conv", "dense")
        for suffix in ("w", "b")
    }
    if set(tensors) != expected:
        raise container.ContainerError(
            f"parameter names {sorted(tensors)} do not match spec", 0
        )
    return ModelState(spec=spec, params=tensors, rng_seed=header["rng_seed"])


def clone(model: ModelState) -> ModelState:
    return copy.deepcopy(model)
