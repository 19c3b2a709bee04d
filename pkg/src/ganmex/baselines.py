"""Baseline providers for perturbation-based attributions: uniform fills,
Gaussian blur, minimum-distance training sample (MDTS), random target-class
sample, and GAN-generated class-targeted baselines, plus the distance
analyses used to compare them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy import ndimage

from .datasets import LabeledDataset

if TYPE_CHECKING:
    from .gan import GanmexModel

KINDS = ("zero", "max", "blur", "mdts", "random_target", "ganmex")


@dataclass
class BaselineSpec:
    """How to produce the reference image x-tilde for an input.

    target_class is required for the class-targeted kinds (mdts,
    random_target, ganmex) and ignored otherwise. fill overrides the uniform
    value of the zero/max kinds (e.g. fill=0.5 for a mid-gray baseline).
    """

    kind: str
    target_class: int | None = None
    sigma: float = 1.0
    seed: int = 0
    fill: float | None = None
    model: "GanmexModel | None" = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if self.kind == "blur" and self.sigma <= 0:
            raise ValueError(f"blur sigma must be positive, got {self.sigma}")
        if self.kind in ("mdts", "random_target", "ganmex") and self.target_class is None:
            raise ValueError(f"baseline kind {self.kind!r} requires a target_class")

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.target_class is not None:
            out["target_class"] = self.target_class
        if self.kind == "blur":
            out["sigma"] = self.sigma
        if self.kind == "random_target":
            out["seed"] = self.seed
        if self.fill is not None:
            out["fill"] = self.fill
        return out


def gaussian_blur(x: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian over the spatial axes, truncated at 3 sigma, with
    edge-clamped borders."""
    return ndimage.gaussian_filter(x, sigma=(0, sigma, sigma), truncate=3.0, mode="nearest")


def mdts_index(x: np.ndarray, train: LabeledDataset, target_class: int) -> int:
    """Index of the closest target-class training image (ties: lowest index)."""
    candidates = train.class_indices(target_class)
    if candidates.size == 0:
        raise ValueError(f"training set has no images of class {target_class}")
    diffs = train.images[candidates] - x[None]
    dists = np.sqrt((diffs * diffs).sum(axis=(1, 2, 3)))
    return int(candidates[int(np.argmin(dists))])


def make_baseline(spec: BaselineSpec, x: np.ndarray, train: LabeledDataset | None = None) -> np.ndarray:
    """Produce the baseline image for x. Deterministic for fixed seeds/models."""
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == "zero":
        return np.full_like(x, spec.fill if spec.fill is not None else 0.0)
    if spec.kind == "max":
        return np.full_like(x, spec.fill if spec.fill is not None else 1.0)
    if spec.kind == "blur":
        return gaussian_blur(x, spec.sigma)
    if spec.kind == "mdts":
        if train is None or len(train) == 0:
            raise ValueError("mdts baseline needs a non-empty training set")
        return train.images[mdts_index(x, train, spec.target_class)].copy()
    if spec.kind == "random_target":
        if train is None or len(train) == 0:
            raise ValueError("random_target baseline needs a non-empty training set")
        candidates = train.class_indices(spec.target_class)
        if candidates.size == 0:
            raise ValueError(f"training set has no images of class {spec.target_class}")
        rng = np.random.default_rng(spec.seed)
        return train.images[int(rng.choice(candidates))].copy()
    # ganmex
    if spec.model is None:
        raise ValueError("ganmex baseline needs a trained model reference")
    return spec.model.generate(x, spec.target_class)


def baseline_distance(x: np.ndarray, x_tilde: np.ndarray) -> float:
    """Euclidean distance over all pixels and channels."""
    x, x_tilde = np.asarray(x, float), np.asarray(x_tilde, float)
    if x.shape != x_tilde.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_tilde.shape}")
    return float(np.linalg.norm((x - x_tilde).ravel()))


def edge_region_distance(x: np.ndarray, x_tilde: np.ndarray, edge_mask: np.ndarray) -> float:
    """Euclidean distance restricted to the masked pixels."""
    x, x_tilde = np.asarray(x, float), np.asarray(x_tilde, float)
    if x.shape != x_tilde.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_tilde.shape}")
    edge_mask = np.asarray(edge_mask, bool)
    if edge_mask.shape != x.shape[-2:]:
        raise ValueError(f"mask shape {edge_mask.shape} does not match image {x.shape[-2:]}")
    if not edge_mask.any():
        raise ValueError("edge mask is empty")
    diff = (x - x_tilde)[:, edge_mask]
    return float(np.linalg.norm(diff.ravel()))


def vertical_edge_mask(height: int, width: int, fraction: float = 0.25) -> np.ndarray:
    """Leftmost and rightmost `fraction` of columns."""
    cols = max(1, int(round(width * fraction)))
    mask = np.zeros((height, width), dtype=bool)
    mask[:, :cols] = True
    mask[:, width - cols:] = True
    return mask


def class_distance_stats(
    dataset: LabeledDataset, pair_samples: int = 500, seed: int = 0
) -> dict[str, float]:
    """Monte-Carlo average L2 distance between same-class pairs (D_intra) and
    cross-class pairs (D_inter)."""
    if dataset.class_count < 2:
        raise ValueError("need at least 2 classes for inter-class distances")
    rng = np.random.default_rng(seed)
    per_class = {c: dataset.class_indices(c) for c in range(dataset.class_count)}
    for c, idx in per_class.items():
        if idx.size < 2:
            raise ValueError(f"class {c} has fewer than 2 members")
    intra = []
    for _ in range(pair_samples):
        c = int(rng.integers(dataset.class_count))
        i, j = rng.choice(per_class[c], size=2, replace=False)
        intra.append(baseline_distance(dataset.images[i], dataset.images[j]))
    inter = []
    for _ in range(pair_samples):
        c1, c2 = rng.choice(dataset.class_count, size=2, replace=False)
        i = int(rng.choice(per_class[c1]))
        j = int(rng.choice(per_class[c2]))
        inter.append(baseline_distance(dataset.images[i], dataset.images[j]))
    return {"D_intra": float(np.mean(intra)), "D_inter": float(np.mean(inter))}
