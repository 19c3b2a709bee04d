"""One-vs-one attribution methods over a classifier, a baseline, and an
(original, target) class pair.

All methods differentiate or perturb the score delta f(x) = S_co(x) - S_ct(x),
where S is the network's forward output (probabilities for softmax heads).
Saliency maps are channel-summed signed per-pixel values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .baselines import BaselineSpec, make_baseline
from .datasets import LabeledDataset
from .nets import Network

DEEPLIFT_EPS = 1e-6


@dataclass
class SaliencyMap:
    values: np.ndarray  # (H, W) signed attributions, channel-aggregated
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"saliency map must be 2-D, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("saliency map contains non-finite values")


@dataclass
class MethodSpec:
    name: str  # ig | eg | deeplift | occlusion1 | deepshap
    steps: int = 200
    samples: int = 200
    background_count: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.name not in ("ig", "eg", "deeplift", "occlusion1", "deepshap"):
            raise ValueError(f"unknown attribution method {self.name!r}")
        if self.steps <= 0 or self.samples <= 0 or self.background_count <= 0:
            raise ValueError("steps/samples/background_count must be positive")

    def describe(self) -> dict:
        out = {"name": self.name}
        if self.name == "ig":
            out["steps"] = self.steps
        elif self.name == "eg":
            out.update(samples=self.samples, seed=self.seed)
        elif self.name == "deepshap":
            out.update(background_count=self.background_count, seed=self.seed)
        return out


@dataclass
class AttributionRequest:
    x: np.ndarray
    c_o: int
    c_t: int
    method: MethodSpec
    baseline: BaselineSpec

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.c_o == self.c_t:
            raise ValueError(
                f"one-vs-one attribution needs distinct classes, got c_o = c_t = {self.c_o}"
            )
        if self.baseline.target_class is not None and self.baseline.target_class != self.c_t:
            raise ValueError(
                f"baseline targets class {self.baseline.target_class} but the "
                f"request targets {self.c_t}"
            )


def channel_aggregate(raw: np.ndarray) -> np.ndarray:
    """Sum signed per-channel attributions into one value per pixel."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3:
        raise ValueError(f"expected (C, H, W) attributions, got {raw.shape}")
    return raw.sum(axis=0)


def score_delta(net: Network, x: np.ndarray, c_o: int, c_t: int) -> float:
    """S_co(x) - S_ct(x)."""
    out = net.forward(np.asarray(x, dtype=np.float64)[None]).data[0]
    return float(out[c_o] - out[c_t])


def score_delta_batch(net: Network, images: np.ndarray, c_o: int, c_t: int) -> np.ndarray:
    out = net.forward(images).data
    return out[:, c_o] - out[:, c_t]


def _delta_graph(net: Network, X: ad.Tensor, c_o: int, c_t: int) -> ad.Tensor:
    out = net.forward(X)
    n = X.data.shape[0]
    return ad.select_columns(out, np.full(n, c_o)) - ad.select_columns(out, np.full(n, c_t))


def _check_pair(x: np.ndarray, x_tilde: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    if x.shape != x_tilde.shape:
        raise ValueError(f"input {x.shape} and baseline {x_tilde.shape} shapes differ")
    return x, x_tilde


def integrated_gradients(
    net: Network, x: np.ndarray, x_tilde: np.ndarray, c_o: int, c_t: int, steps: int = 200
) -> SaliencyMap:
    """Midpoint Riemann sum of input gradients along the straight path from
    the baseline to the input, scaled by (x - x_tilde)."""
    x, x_tilde = _check_pair(x, x_tilde)
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    alphas = (np.arange(steps) + 0.5) / steps
    diff = x - x_tilde
    interpolants = ad.Tensor(x_tilde[None] + alphas[:, None, None, None] * diff[None])
    total = _delta_graph(net, interpolants, c_o, c_t).sum()
    (grads,) = ad.gradients(total, [interpolants])
    raw = diff * grads.mean(axis=0)
    return SaliencyMap(channel_aggregate(raw), {"method": "ig", "steps": steps,
                                                "c_o": c_o, "c_t": c_t})


def expected_gradients(
    net: Network,
    x: np.ndarray,
    c_o: int,
    c_t: int,
    train: LabeledDataset,
    samples: int = 200,
    seed: int = 0,
) -> SaliencyMap:
    """Monte-Carlo attribution over baselines drawn from the target class of
    the training set, with stratified interpolation coefficients."""
    x = np.asarray(x, dtype=np.float64)
    candidates = train.class_indices(c_t)
    if candidates.size == 0:
        raise ValueError(f"training set has no images of class {c_t}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(candidates, size=samples, replace=True)
    alphas = (np.arange(samples) + rng.random(samples)) / samples
    base = train.images[picks]
    diffs = x[None] - base
    interpolants = ad.Tensor(base + alphas[:, None, None, None] * diffs)
    total = _delta_graph(net, interpolants, c_o, c_t).sum()
    (grads,) = ad.gradients(total, [interpolants])
    raw = (diffs * grads).mean(axis=0)
    return SaliencyMap(channel_aggregate(raw), {"method": "eg", "samples": samples,
                                                "seed": seed, "c_o": c_o, "c_t": c_t})


def _rescale_multiplier(d_in: np.ndarray, d_out: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    """DeepLIFT rescale rule: delta-out over delta-in, or the local gradient
    where the input difference is (numerically) zero."""
    safe = np.where(np.abs(d_in) > DEEPLIFT_EPS, d_in, 1.0)
    return np.where(np.abs(d_in) > DEEPLIFT_EPS, d_out / safe, fallback)


def deeplift_rescale(
    net: Network, x: np.ndarray, x_tilde: np.ndarray, c_o: int, c_t: int
) -> SaliencyMap:
    """Rescale-rule multiplier backpropagation against an explicit baseline.

    Linear layers route multipliers through their weights exactly; elementwise
    nonlinearities use delta-out/delta-in; softmax uses the exact per-unit
    delta ratio so the summation-to-delta identity holds through the score
    delta head.
    """
    x, x_tilde = _check_pair(x, x_tilde)
    acts_x = net.activations(x[None])
    acts_b = net.activations(x_tilde[None])
    out_dim = acts_x[-1].shape[1]
    m = np.zeros((1, out_dim))
    m[0, c_o] = 1.0
    m[0, c_t] = -1.0
    for li in range(len(net.layers) - 1, -1, -1):
        spec, name = net.layers[li], net._names[li]
        in_x, in_b = acts_x[li], acts_b[li]
        out_x, out_b = acts_x[li + 1], acts_b[li + 1]
        if spec.kind == "dense":
            w = net.params[f"{name}.weight"].data
            m = m @ w.T
        elif spec.kind == "conv2d":
            w = net.params[f"{name}.weight"].data
            m = ad.conv2d_input_grad(m, w, in_x.shape, spec.stride, spec.padding)
        elif spec.kind == "relu":
            fallback = (in_x > 0.0).astype(np.float64)
            m = m * _rescale_multiplier(in_x - in_b, out_x - out_b, fallback)
        elif spec.kind == "sigmoid":
            fallback = out_x * (1.0 - out_x)
            m = m * _rescale_multiplier(in_x - in_b, out_x - out_b, fallback)
        elif spec.kind == "softmax":
            fallback = out_x * (1.0 - out_x)  # diagonal jacobian entries
            m = m * _rescale_multiplier(in_x - in_b, out_x - out_b, fallback)
        elif spec.kind == "avg_pool":
            m = np.repeat(np.repeat(m, spec.window, 2), spec.window, 3) / spec.window**2
        elif spec.kind == "upsample":
            n_, c_, h_, w_ = in_x.shape
            m = m.reshape(n_, c_, h_, spec.factor, w_, spec.factor).sum((3, 5))
        elif spec.kind == "flatten":
            m = m.reshape(in_x.shape)
        # dropout is inert at inference
    raw = m[0] * (x - x_tilde)
    return SaliencyMap(channel_aggregate(raw), {"method": "deeplift",
                                                "c_o": c_o, "c_t": c_t})


def occlusion1(
    net: Network, x: np.ndarray, x_tilde: np.ndarray, c_o: int, c_t: int
) -> SaliencyMap:
    """Per-pixel impact of replacing the pixel (all channels) with the
    baseline's value: a_i = f(x) - f(x with pixel i occluded)."""
    x, x_tilde = _check_pair(x, x_tilde)
    c, h, w = x.shape
    n = h * w
    batch = np.repeat(x[None], n, axis=0)
    rows, cols = np.divmod(np.arange(n), w)
    batch[np.arange(n), :, rows, cols] = x_tilde[:, rows, cols].T
    f_mod = score_delta_batch(net, batch, c_o, c_t)
    f_orig = score_delta(net, x, c_o, c_t)
    return SaliencyMap((f_orig - f_mod).reshape(h, w), {"method": "occlusion1",
                                                        "c_o": c_o, "c_t": c_t})


def deepshap_avg(
    net: Network, x: np.ndarray, c_o: int, c_t: int, background: list[np.ndarray]
) -> SaliencyMap:
    """Mean of rescale-rule attributions over a background set of baselines."""
    if len(background) == 0:
        raise ValueError("deepshap needs a non-empty background set")
    maps = [deeplift_rescale(net, x, b, c_o, c_t).values for b in background]
    return SaliencyMap(np.mean(maps, axis=0), {"method": "deepshap",
                                               "background_count": len(background),
                                               "c_o": c_o, "c_t": c_t})


def sample_background(
    train: LabeledDataset, target_class: int, count: int, seed: int
) -> list[np.ndarray]:
    candidates = train.class_indices(target_class)
    if candidates.size == 0:
        raise ValueError(f"training set has no images of class {target_class}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(candidates, size=count, replace=True)
    return [train.images[int(i)] for i in picks]


def compute_attribution(
    net: Network, request: AttributionRequest, train: LabeledDataset | None = None
) -> SaliencyMap:
    """Dispatch a request to the right method and stamp provenance."""
    x, c_o, c_t = request.x, request.c_o, request.c_t
    m = request.method
    if m.name == "eg":
        if train is None:
            raise ValueError("expected gradients needs the training set")
        sal = expected_gradients(net, x, c_o, c_t, train, m.samples, m.seed)
    elif m.name == "deepshap":
        if request.baseline.kind == "random_target":
            if train is None:
                raise ValueError("deepshap with sampled background needs the training set")
            background = sample_background(train, c_t, m.background_count, m.seed)
        else:
            background = [make_baseline(request.baseline, x, train)]
        sal = deepshap_avg(net, x, c_o, c_t, background)
    else:
        x_tilde = make_baseline(request.baseline, x, train)
        if m.name == "ig":
            sal = integrated_gradients(net, x, x_tilde, c_o, c_t, m.steps)
        elif m.name == "deeplift":
            sal = deeplift_rescale(net, x, x_tilde, c_o, c_t)
        else:
            sal = occlusion1(net, x, x_tilde, c_o, c_t)
    sal.provenance = {
        "method": m.describe(),
        "baseline": request.baseline.describe(),
        "c_o": c_o,
        "c_t": c_t,
        "input_shape": list(x.shape),
    }
    return sal
