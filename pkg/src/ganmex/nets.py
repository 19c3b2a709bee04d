"""Layered networks: specs, initialization, training, randomization, and
checkpointing. Classifiers and GAN components are both built from these
layers; a classifier ends in softmax and carries a class count.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import containers

NETWORK_MAGIC = b"GMXNET1"

_PARAMETERIZED = {"conv2d", "dense"}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int | None = None
    kernel: int | None = None
    stride: int = 1
    padding: int = 0
    units: int | None = None
    window: int | None = None
    p: float | None = None
    factor: int = 2

    def __post_init__(self):
        if self.kind == "conv2d":
            if not (self.out_channels and self.kernel and self.kernel > 0 and self.stride > 0):
                raise ValueError(f"conv2d layer needs positive out_channels/kernel/stride: {self}")
        elif self.kind == "dense":
            if not (self.units and self.units > 0):
                raise ValueError(f"dense layer needs positive units: {self}")
        elif self.kind == "avg_pool":
            if not (self.window and self.window > 0):
                raise ValueError(f"avg_pool layer needs a positive window: {self}")
        elif self.kind == "dropout":
            if self.p is None or not 0.0 <= self.p < 1.0:
                raise ValueError(f"dropout rate must be in [0, 1): {self}")
        elif self.kind == "upsample":
            if self.factor < 1:
                raise ValueError(f"upsample factor must be >= 1: {self}")
        elif self.kind not in {"relu", "flatten", "softmax", "sigmoid"}:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def conv(out_channels: int, kernel: int, stride: int = 1, padding: int = 0) -> LayerSpec:
    return LayerSpec("conv2d", out_channels=out_channels, kernel=kernel, stride=stride, padding=padding)


def dense(units: int) -> LayerSpec:
    return LayerSpec("dense", units=units)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def avg_pool(window: int) -> LayerSpec:
    return LayerSpec("avg_pool", window=window)


def dropout(p: float) -> LayerSpec:
    return LayerSpec("dropout", p=p)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def softmax() -> LayerSpec:
    return LayerSpec("softmax")


def sigmoid() -> LayerSpec:
    return LayerSpec("sigmoid")


def upsample(factor: int = 2) -> LayerSpec:
    return LayerSpec("upsample", factor=factor)


def reference_classifier_layers(class_count: int) -> list[LayerSpec]:
    """Small strided CNN for 16x16 inputs: two 6x6 stride-2 convs, a 64-unit
    hidden layer with dropout 0.5, and a softmax head."""
    return [
        conv(8, 6, stride=2, padding=2),
        relu(),
        conv(16, 6, stride=2, padding=2),
        relu(),
        flatten(),
        dense(64),
        relu(),
        dropout(0.5),
        dense(class_count),
        softmax(),
    ]


def linear_classifier_layers(class_count: int) -> list[LayerSpec]:
    return [flatten(), dense(class_count), softmax()]


class Network:
    """Ordered layers with named parameter tensors and a differentiable forward."""

    def __init__(
        self,
        layers: list[LayerSpec],
        input_shape: tuple[int, ...],
        class_count: int | None = None,
        seed: int = 0,
    ):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.class_count = class_count
        self.seed = seed
        self.params: dict[str, ad.Tensor] = {}
        self._names: list[str] = []
        rng = np.random.default_rng(seed)
        shape = self.input_shape  # (C, H, W) or (F,)
        counters: dict[str, int] = {}
        for spec in self.layers:
            counters[spec.kind] = counters.get(spec.kind, 0) + 1
            name = f"{'conv' if spec.kind == 'conv2d' else spec.kind}{counters[spec.kind]}"
            self._names.append(name)
            shape = self._init_layer(spec, name, shape, rng)
        self.output_shape = shape
        self.train_history: list[float] = []

    def _init_layer(self, spec, name, shape, rng):
        if spec.kind == "conv2d":
            if len(shape) != 3:
                raise ad.ShapeError(f"{name}: conv2d needs a C,H,W input, got {shape}")
            c, h, w = shape
            oh = (h + 2 * spec.padding - spec.kernel) // spec.stride + 1
            ow = (w + 2 * spec.padding - spec.kernel) // spec.stride + 1
            if oh < 1 or ow < 1:
                raise ad.ShapeError(f"{name}: kernel {spec.kernel} does not fit {h}x{w}")
            fan_in = c * spec.kernel * spec.kernel
            self.params[f"{name}.weight"] = ad.Tensor(
                rng.standard_normal((spec.out_channels, c, spec.kernel, spec.kernel))
                * np.sqrt(2.0 / fan_in)
            )
            self.params[f"{name}.bias"] = ad.Tensor(np.zeros(spec.out_channels))
            return (spec.out_channels, oh, ow)
        if spec.kind == "dense":
            if len(shape) != 1:
                raise ad.ShapeError(f"{name}: dense needs a flat input, got {shape}; add a flatten layer")
            fan_in = shape[0]
            self.params[f"{name}.weight"] = ad.Tensor(
                rng.standard_normal((fan_in, spec.units)) * np.sqrt(2.0 / fan_in)
            )
            self.params[f"{name}.bias"] = ad.Tensor(np.zeros(spec.units))
            return (spec.units,)
        if spec.kind == "avg_pool":
            c, h, w = shape
            if h % spec.window or w % spec.window:
                raise ad.ShapeError(f"{name}: window {spec.window} does not divide {h}x{w}")
            return (c, h // spec.window, w // spec.window)
        if spec.kind == "flatten":
            return (int(np.prod(shape)),)
        if spec.kind == "upsample":
            c, h, w = shape
            return (c, h * spec.factor, w * spec.factor)
        return shape

    def forward(self, x, train: bool = False, rng: np.random.Generator | None = None) -> ad.Tensor:
        """Run a batch through the layers. Dropout fires only when train=True."""
        t = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
        if t.data.shape[1:] != self.input_shape:
            raise ad.ShapeError(
                f"input shape {t.data.shape[1:]} does not match network input {self.input_shape}"
            )
        for spec, name in zip(self.layers, self._names):
            if spec.kind == "dropout" and train and spec.p > 0.0:
                if rng is None:
                    raise ValueError("dropout in training mode needs an rng")
                t = ad.dropout(t, spec.p, rng)
            else:
                t = self._apply_one(spec, name, t)
        return t

    def activations(self, x: np.ndarray) -> list[np.ndarray]:
        """Per-layer inference activations for a batch: [input, out_1, ..., out_L]."""
        acts = [np.asarray(x, dtype=np.float64)]
        t = ad.Tensor(acts[0])
        for spec, name in zip(self.layers, self._names):
            t = self._apply_one(spec, name, t)
            acts.append(t.data)
        return acts

    def _apply_one(self, spec: LayerSpec, name: str, t: ad.Tensor) -> ad.Tensor:
        if spec.kind == "conv2d":
            return ad.conv2d(
                t,
                self.params[f"{name}.weight"],
                self.params[f"{name}.bias"],
                stride=spec.stride,
                padding=spec.padding,
            )
        if spec.kind == "dense":
            return ad.matmul(t, self.params[f"{name}.weight"]) + self.params[f"{name}.bias"]
        if spec.kind == "relu":
            return ad.relu(t)
        if spec.kind == "sigmoid":
            return ad.sigmoid(t)
        if spec.kind == "softmax":
            return ad.softmax(t)
        if spec.kind == "avg_pool":
            return ad.avg_pool2d(t, spec.window)
        if spec.kind == "upsample":
            return ad.upsample2d(t, spec.factor)
        if spec.kind == "flatten":
            return ad.reshape(t, (t.data.shape[0], -1))
        return t  # dropout is inert at inference

    def parameterized_layers(self) -> list[str]:
        """Names of layers that own parameters, input to output order."""
        return [
            name
            for spec, name in zip(self.layers, self._names)
            if spec.kind in _PARAMETERIZED
        ]

    def layer_param_names(self, layer_name: str) -> list[str]:
        if layer_name not in self.parameterized_layers():
            raise KeyError(f"no parameterized layer named {layer_name!r}")
        return [f"{layer_name}.weight", f"{layer_name}.bias"]

    def param_list(self) -> list[ad.Tensor]:
        return list(self.params.values())

    def clone(self) -> "Network":
        other = Network(self.layers, self.input_shape, self.class_count, self.seed)
        for k, t in self.params.items():
            other.params[k].data = t.data.copy()
        return other


class TrainingDiverged(RuntimeError):
    """Training loss left the finite range; message reports the last good step."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0  # L2 penalty; keeps score surfaces smooth
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError(f"invalid training configuration: {self}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative: {self}")
        if self.optimizer not in {"sgd", "adam"}:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class Sgd:
    def __init__(self, params: list[ad.Tensor], lr: float, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self):
        for t in self.params:
            if t.grad is not None:
                g = t.grad + self.weight_decay * t.data
                t.data = t.data - self.lr * g


class Adam:
    def __init__(
        self, params: list[ad.Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(t.data) for t in params]
        self.v = [np.zeros_like(t.data) for t in params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, t in enumerate(self.params):
            if t.grad is None:
                continue
            g = t.grad + self.weight_decay * t.data
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            t.data = t.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(params: list[ad.Tensor], cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return Sgd(params, cfg.learning_rate, cfg.weight_decay)
    return Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)


def cross_entropy(probs: ad.Tensor, labels: np.ndarray) -> ad.Tensor:
    picked = ad.select_columns(probs, labels)
    return -ad.log(ad.maximum(picked, 1e-12)).mean()


def train_classifier(dataset, layers: list[LayerSpec], cfg: TrainConfig) -> Network:
    """Minibatch cross-entropy training; the whole run is fixed by cfg.seed."""
    n = len(dataset.labels)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if dataset.labels.max(initial=0) >= dataset.class_count:
        raise ValueError("labels exceed the declared class count")
    net = Network(layers, dataset.images.shape[1:], dataset.class_count, seed=cfg.seed)
    opt = make_optimizer(net.param_list(), cfg)
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            probs = net.forward(dataset.images[idx], train=True, rng=rng)
            loss = cross_entropy(probs, dataset.labels[idx])
            if not np.isfinite(loss.data):
                last = net.train_history[-1] if net.train_history else float("nan")
                raise TrainingDiverged(
                    f"loss became non-finite in epoch {epoch}; "
                    f"last finite epoch mean was {last}"
                )
            loss.backward()
            opt.step()
            losses.append(loss.item())
        net.train_history.append(float(np.mean(losses)))
    return net


def predict_probs(net: Network, x: np.ndarray) -> np.ndarray:
    """Class probabilities for a single image (dropout inert)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != net.input_shape:
        raise ad.ShapeError(f"input shape {x.shape} does not match network input {net.input_shape}")
    return net.forward(x[None]).data[0]


def predict_probs_batch(net: Network, images: np.ndarray, chunk: int = 512) -> np.ndarray:
    outs = [net.forward(images[i : i + chunk]).data for i in range(0, len(images), chunk)]
    return np.concatenate(outs, axis=0)


def accuracy(net: Network, dataset) -> float:
    probs = predict_probs_batch(net, dataset.images)
    return float(np.mean(probs.argmax(axis=1) == dataset.labels))


def randomize_layer(net: Network, layer_name: str, seed: int) -> Network:
    """Copy of net with the named layer's parameters resampled as Gaussians
    rescaled to the original per-tensor L2 norm. Zero-norm tensors stay zero."""
    param_names = net.layer_param_names(layer_name)  # raises on unknown layer
    out = net.clone()
    rng = np.random.default_rng(seed)
    for pname in param_names:
        orig = net.params[pname].data
        norm = np.linalg.norm(orig)
        if norm == 0.0:
            out.params[pname].data = np.zeros_like(orig)
            continue
        fresh = rng.standard_normal(orig.shape)
        out.params[pname].data = fresh * (norm / np.linalg.norm(fresh))
    return out


# ---------------------------------------------------------------------------
# checkpointing


def network_header(net: Network) -> dict:
    return {
        "layers": [spec.to_dict() for spec in net.layers],
        "input_shape": list(net.input_shape),
        "class_count": net.class_count,
        "seed": net.seed,
    }


def network_bytes(net: Network) -> bytes:
    arrays = {name: t.data for name, t in net.params.items()}
    return containers.pack(NETWORK_MAGIC, network_header(net), arrays)


def network_hash(net: Network) -> str:
    return hashlib.sha256(network_bytes(net)).hexdigest()


def save_network(net: Network, path: str) -> None:
    containers.atomic_write(path, network_bytes(net))


def network_from_payload(header: dict, arrays: dict[str, np.ndarray]) -> Network:
    try:
        layers = [LayerSpec(**d) for d in header["layers"]]
        input_shape = tuple(header["input_shape"])
        class_count = header["class_count"]
        seed = header.get("seed", 0)
    except (KeyError, TypeError) as exc:
        raise containers.ContainerError(f"malformed network header: {exc}") from None
    net = Network(layers, input_shape, class_count, seed)
    if set(arrays) != set(net.params):
        raise containers.ContainerError(
            f"parameter names {sorted(arrays)} do not match spec-derived names "
            f"{sorted(net.params)}"
        )
    for name, arr in arrays.items():
        if arr.shape != net.params[name].data.shape:
            raise containers.ContainerError(
                f"parameter {name}: shape {arr.shape} does not match "
                f"{net.params[name].data.shape}"
            )
        net.params[name].data = arr.astype(np.float64)
    return net


def load_network(path: str) -> Network:
    header, arrays = containers.read_file(path, NETWORK_MAGIC)
    return network_from_payload(header, arrays)
