"""Procedural desk-scale image datasets, plus IDX ingestion.

Images are float64 NCHW arrays in [0, 1] (1 or 3 channels). Generators are
pure functions of (parameters, seed, split): the split selects an
independent substream so train and test never share draws.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import containers

DATASET_MAGIC = b"GMXDAT1"

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, C, H, W) in [0, 1]
    labels: np.ndarray  # (N,)
    class_count: int
    split: str = "train"
    masks: np.ndarray | None = None  # (N, H, W) bool; foreground/feature pixels
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, C, H, W), got {self.images.shape}")
        if self.images.shape[1] not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {self.images.shape[1]}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("labels must be one per image")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("labels must lie in [0, class_count)")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("image values must lie in [0, 1]")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")
        if self.masks is not None:
            self.masks = np.asarray(self.masks, dtype=bool)
            n, _, h, w = self.images.shape
            if self.masks.shape != (n, h, w):
                raise ValueError("masks must be one (H, W) boolean map per image")

    def __len__(self) -> int:
        return self.images.shape[0]

    def class_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


def _split_rng(seed: int, split: str) -> np.random.Generator:
    return np.random.default_rng([seed, 0 if split == "train" else 1])


def _pixel_grid(size: int) -> np.ndarray:
    """(H, W, 2) pixel-center coordinates in unit space, xy order."""
    ys, xs = np.meshgrid(
        (np.arange(size) + 0.5) / size, (np.arange(size) + 0.5) / size, indexing="ij"
    )
    return np.stack([xs, ys], axis=-1)


def _segment_coverage(pts: np.ndarray, a: np.ndarray, b: np.ndarray, thickness: float, aa: float) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-12:
        t = np.zeros(pts.shape[:-1])
    else:
        t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[..., None] * ab
    dist = np.linalg.norm(pts - proj, axis=-1)
    return np.clip((thickness - dist) / aa + 1.0, 0.0, 1.0)


# Digit-like glyph strokes as polylines in the unit square (y grows downward).
_GLYPH_STROKES: dict[int, list[list[tuple[float, float]]]] = {
    0: [[(0.34, 0.22), (0.66, 0.22), (0.78, 0.38), (0.78, 0.62), (0.66, 0.78),
         (0.34, 0.78), (0.22, 0.62), (0.22, 0.38), (0.34, 0.22)]],
    1: [[(0.36, 0.32), (0.54, 0.2), (0.54, 0.8)]],
    2: [[(0.24, 0.34), (0.34, 0.21), (0.66, 0.21), (0.76, 0.36), (0.26, 0.79), (0.78, 0.79)]],
    3: [[(0.26, 0.22), (0.72, 0.22), (0.48, 0.46), (0.74, 0.6), (0.64, 0.8), (0.26, 0.78)]],
    4: [[(0.64, 0.8), (0.64, 0.2), (0.22, 0.62), (0.8, 0.62)]],
    5: [[(0.74, 0.21), (0.3, 0.21), (0.27, 0.48), (0.64, 0.46), (0.75, 0.62),
         (0.63, 0.79), (0.26, 0.79)]],
    6: [[(0.68, 0.2), (0.4, 0.28), (0.26, 0.52), (0.34, 0.78), (0.64, 0.79),
         (0.73, 0.62), (0.57, 0.5), (0.3, 0.56)]],
    7: [[(0.22, 0.21), (0.78, 0.21), (0.44, 0.8)]],
    8: [[(0.5, 0.21), (0.69, 0.31), (0.5, 0.46), (0.31, 0.31), (0.5, 0.21)],
        [(0.5, 0.46), (0.73, 0.62), (0.5, 0.79), (0.27, 0.62), (0.5, 0.46)]],
    9: [[(0.33, 0.79), (0.6, 0.72), (0.74, 0.46), (0.62, 0.22), (0.36, 0.24),
         (0.27, 0.4), (0.47, 0.52), (0.74, 0.46)]],
}


def _render_glyph(glyph: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Rasterize one jittered glyph to a (size, size) grayscale array."""
    pts = _pixel_grid(size)
    angle = rng.uniform(-0.3, 0.3)
    scale = rng.uniform(0.75, 1.15)
    shift = rng.uniform(-2.5, 2.5, size=2) / size
    thickness = rng.uniform(0.04, 0.068)
    brightness = rng.uniform(0.8, 1.0)
    rot = np.array(
        [[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]]
    )
    center = np.array([0.5, 0.5])
    img = np.zeros((size, size))
    aa = 0.8 / size
    for polyline in _GLYPH_STROKES[glyph]:
        p = (np.asarray(polyline) - center) * scale @ rot.T + center + shift
        for a, b in zip(p[:-1], p[1:]):
            img = np.maximum(img, _segment_coverage(pts, a, b, thickness, aa))
    img = img * brightness + rng.normal(0.0, 0.02, img.shape)
    return np.clip(img, 0.0, 1.0)


def gen_glyphs(
    class_count: int = 10,
    size: int = 16,
    per_class: int = 100,
    seed: int = 0,
    split: str = "train",
) -> LabeledDataset:
    """Grayscale digit-like glyphs with random affine jitter."""
    if not 2 <= class_count <= 10:
        raise ValueError(f"class_count must be in [2, 10], got {class_count}")
    if size < 12:
        raise ValueError(f"size must be at least 12, got {size}")
    rng = _split_rng(seed, split)
    images = np.empty((class_count * per_class, 1, size, size))
    labels = np.repeat(np.arange(class_count), per_class)
    for i, lbl in enumerate(labels):
        images[i, 0] = _render_glyph(int(lbl), size, rng)
    return LabeledDataset(
        np.clip(images, 0.0, 1.0), labels, class_count, split,
        metadata={"kind": "glyphs"},
    )


def gen_color_fruit(
    size: int = 16,
    per_class: int = 200,
    seed: int = 0,
    split: str = "train",
) -> LabeledDataset:
    """Binary round-blob dataset: class 0 red blobs, class 1 orange blobs.

    Blob position, radius, and background vary freely; the blob pixels are
    the stored ground-truth (distinguishing) mask. Blob hues are disjoint
    between the classes by construction.
    """
    rng = _split_rng(seed, split)
    n = 2 * per_class
    images = np.empty((n, 3, size, size))
    masks = np.empty((n, size, size), dtype=bool)
    labels = np.repeat(np.arange(2), per_class)
    pts = _pixel_grid(size) * size  # pixel units
    for i, lbl in enumerate(labels):
        radius = rng.uniform(3.0, 5.5)
        margin = radius + 1.0
        center = rng.uniform(margin, size - margin, size=2)
        dist = np.linalg.norm(pts - center, axis=-1)
        alpha = np.clip(radius - dist + 0.5, 0.0, 1.0)
        # cool-toned background gradient keeps its hue away from both blob hues
        top = np.array([rng.uniform(0.1, 0.35), rng.uniform(0.35, 0.65), rng.uniform(0.35, 0.65)])
        bot = np.array([rng.uniform(0.1, 0.35), rng.uniform(0.35, 0.65), rng.uniform(0.35, 0.65)])
        rows = np.linspace(0.0, 1.0, size)[:, None, None]
        bg = top[None, None, :] * (1 - rows) + bot[None, None, :] * rows
        bg = np.clip(bg + rng.normal(0.0, 0.015, bg.shape), 0.0, 1.0)
        if lbl == 0:  # red
            r = rng.uniform(0.82, 1.0)
            g = rng.uniform(0.04, 0.14)
            b = g * rng.uniform(0.0, 0.85)
        else:  # orange
            r = rng.uniform(0.9, 1.0)
            g = r * rng.uniform(0.45, 0.6)
            b = rng.uniform(0.0, 0.07)
        shade = 1.0 - 0.15 * np.clip(dist / max(radius, 1e-6), 0.0, 1.0) ** 2
        blob = np.stack([r * shade, g * shade, b * shade], axis=-1)
        img = bg * (1 - alpha[..., None]) + blob * alpha[..., None]
        images[i] = np.transpose(img, (2, 0, 1))
        masks[i] = alpha > 0.5
    return LabeledDataset(
        np.clip(images, 0.0, 1.0), labels, 2, split, masks,
        metadata={"kind": "color_fruit"},
    )


def _render_scene(scene: int, size: int, rng: np.random.Generator) -> np.ndarray:
    ys, xs = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    if scene == 0:  # horizontal stripes
        period = rng.uniform(3.4, 4.6)
        phase = rng.uniform(0.0, 1.0)
        img = 0.45 + 0.2 * np.sin(2 * np.pi * (ys / period + phase))
    elif scene == 1:  # checkerboard blocks
        block = int(rng.integers(3, 5))
        off_y, off_x = rng.integers(0, block, size=2)
        parity = ((ys + off_y) // block + (xs + off_x) // block) % 2
        img = np.where(parity == 0, 0.32, 0.62).astype(float)
    elif scene == 2:  # vertical stripes
        period = rng.uniform(3.4, 4.6)
        phase = rng.uniform(0.0, 1.0)
        img = 0.45 + 0.2 * np.sin(2 * np.pi * (xs / period + phase))
    else:  # diagonal gradient
        lo, hi = rng.uniform(0.15, 0.3), rng.uniform(0.55, 0.7)
        img = lo + (hi - lo) * (xs + ys) / (2 * (size - 1))
    return np.clip(img + rng.normal(0.0, 0.02, img.shape), 0.0, 1.0)


def _render_object(obj: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Alpha map of one foreground object at a jittered position."""
    pts = _pixel_grid(size) * size
    center = np.array([size / 2.0, size / 2.0]) + rng.uniform(-1.5, 1.5, size=2)
    if obj == 0:  # disc
        radius = rng.uniform(3.2, 3.8)
        dist = np.linalg.norm(pts - center, axis=-1)
        return np.clip(radius - dist + 0.5, 0.0, 1.0)
    if obj == 1:  # plus sign
        half_len = rng.uniform(4.4, 5.2)
        half_w = rng.uniform(0.9, 1.1)
        dx = np.abs(pts[..., 0] - center[0])
        dy = np.abs(pts[..., 1] - center[1])
        horiz = np.clip(half_len - dx + 0.5, 0, 1) * np.clip(half_w - dy + 0.5, 0, 1)
        vert = np.clip(half_w - dx + 0.5, 0, 1) * np.clip(half_len - dy + 0.5, 0, 1)
        return np.maximum(horiz, vert)
    if obj == 2:  # ring
        radius = rng.uniform(2.9, 3.5)
        width = rng.uniform(0.9, 1.2)
        dist = np.linalg.norm(pts - center, axis=-1)
        return np.clip(width - np.abs(dist - radius) + 0.5, 0.0, 1.0)
    # diagonal cross
    half_len = rng.uniform(3.2, 3.8)
    half_w = rng.uniform(0.8, 1.0)
    rel = pts - center
    u = np.abs(rel[..., 0] + rel[..., 1]) / np.sqrt(2)
    v = np.abs(rel[..., 0] - rel[..., 1]) / np.sqrt(2)
    d1 = np.clip(half_w - u + 0.5, 0, 1) * np.clip(half_len - v + 0.5, 0, 1)
    d2 = np.clip(half_w - v + 0.5, 0, 1) * np.clip(half_len - u + 0.5, 0, 1)
    return np.maximum(d1, d2)


def gen_composite(
    objects: int = 2,
    scenes: int = 2,
    size: int = 16,
    per_class: int = 100,
    seed: int = 0,
    split: str = "train",
) -> LabeledDataset:
    """Foreground objects pasted on background scene textures; every
    (object, scene) pair is its own class. The stored mask is the object's
    pixels, from which a class pair's distinguishing set is derived."""
    if objects * scenes < 4:
        raise ValueError("need at least 4 classes (objects * scenes >= 4)")
    if objects > 4 or scenes > 4:
        raise ValueError("at most 4 object shapes and 4 scene textures are defined")
    rng = _split_rng(seed, split)
    class_pairs = [(o, s) for o in range(objects) for s in range(scenes)]
    n = len(class_pairs) * per_class
    images = np.empty((n, 1, size, size))
    masks = np.empty((n, size, size), dtype=bool)
    labels = np.repeat(np.arange(len(class_pairs)), per_class)
    for i, lbl in enumerate(labels):
        obj, scene = class_pairs[lbl]
        bg = _render_scene(scene, size, rng)
        alpha = _render_object(obj, size, rng)
        value = rng.uniform(0.93, 1.0)
        images[i, 0] = bg * (1 - alpha) + value * alpha
        masks[i] = alpha > 0.5
    return LabeledDataset(
        np.clip(images, 0.0, 1.0), labels, len(class_pairs), split, masks,
        metadata={"kind": "composite", "objects": objects, "scenes": scenes,
                  "class_pairs": [list(p) for p in class_pairs]},
    )


def gen_colored_glyphs(
    class_count: int = 10,
    size: int = 16,
    per_class: int = 100,
    seed: int = 0,
    split: str = "train",
) -> LabeledDataset:
    """Glyphs rendered into one uniformly random pure color channel per image
    (red/green/blue). Labels stay the glyph class; the color id is metadata."""
    gray = gen_glyphs(class_count, size, per_class, seed, split)
    rng = _split_rng(seed + 104729, split)  # independent stream for colors
    n = len(gray)
    color_ids = rng.integers(0, 3, size=n)
    images = np.zeros((n, 3, size, size))
    for i, cid in enumerate(color_ids):
        images[i, cid] = gray.images[i, 0]
    return LabeledDataset(
        images, gray.labels, class_count, split,
        metadata={"kind": "colored_glyphs", "color_ids": color_ids.tolist()},
    )


def dominant_channel(image: np.ndarray) -> int:
    """Index of the channel with the largest total intensity."""
    return int(image.sum(axis=(1, 2)).argmax())


def pair_distinguishing_mask(ds: LabeledDataset, index: int, c_o: int, c_t: int) -> np.ndarray | None:
    """Ground-truth distinguishing pixel set for one image under a class pair.

    Composite data: pairs sharing the scene distinguish by the object pixels,
    pairs sharing the object by the scene pixels, pairs sharing neither have
    no usable mask (returns None). Other masked datasets use the stored mask
    directly.
    """
    if ds.masks is None:
        return None
    if ds.metadata.get("kind") == "composite":
        o1, s1 = ds.metadata["class_pairs"][c_o]
        o2, s2 = ds.metadata["class_pairs"][c_t]
        if s1 == s2 and o1 != o2:
            return ds.masks[index]
        if o1 == o2 and s1 != s2:
            return ~ds.masks[index]
        return None
    return ds.masks[index]


def dataset_mean(ds: LabeledDataset) -> np.ndarray:
    if len(ds) == 0:
        raise ValueError("dataset_mean of an empty dataset")
    return ds.images.mean(axis=0)


def class_pair_subset(ds: LabeledDataset, class_a: int, class_b: int) -> LabeledDataset:
    """Binary sub-dataset of two classes with labels remapped to {0, 1}."""
    keep = np.flatnonzero((ds.labels == class_a) | (ds.labels == class_b))
    labels = (ds.labels[keep] == class_b).astype(np.int64)
    masks = ds.masks[keep] if ds.masks is not None else None
    return LabeledDataset(ds.images[keep], labels, 2, ds.split, masks,
                          metadata=dict(ds.metadata, pair=[class_a, class_b]))


# ---------------------------------------------------------------------------
# IDX ingestion


def load_idx(images_path: str, labels_path: str, split: str = "train") -> LabeledDataset:
    """Read big-endian IDX image/label files (bytes scaled to [0, 1])."""
    with open(images_path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise ValueError(f"{images_path}: truncated IDX header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise ValueError(
            f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    if pixels.size != n * rows * cols:
        raise ValueError(f"{images_path}: expected {n * rows * cols} pixels, got {pixels.size}")
    images = pixels.reshape(n, 1, rows, cols).astype(np.float64) / 255.0

    with open(labels_path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ValueError(f"{labels_path}: truncated IDX header")
    magic, n_labels = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise ValueError(
            f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)
    if labels.size != n_labels:
        raise ValueError(f"{labels_path}: expected {n_labels} labels, got {labels.size}")
    if n_labels != n:
        raise ValueError(f"image count {n} does not match label count {n_labels}")
    class_count = int(labels.max()) + 1 if labels.size else 1
    return LabeledDataset(images, labels, class_count, split, metadata={"kind": "idx"})


# ---------------------------------------------------------------------------
# container persistence


def save_dataset(ds: LabeledDataset, path: str) -> None:
    header = {
        "class_count": ds.class_count,
        "split": ds.split,
        "metadata": ds.metadata,
        "has_masks": ds.masks is not None,
    }
    arrays = {"images": ds.images, "labels": ds.labels}
    if ds.masks is not None:
        arrays["masks"] = ds.masks.astype(np.uint8)
    containers.write_file(path, DATASET_MAGIC, header, arrays)


def load_dataset(path: str) -> LabeledDataset:
    header, arrays = containers.read_file(path, DATASET_MAGIC)
    try:
        masks = arrays["masks"].astype(bool) if header["has_masks"] else None
        return LabeledDataset(
            arrays["images"], arrays["labels"], header["class_count"],
            header["split"], masks, header.get("metadata", {}),
        )
    except (KeyError, ValueError) as exc:
        raise containers.ContainerError(f"malformed dataset file: {exc}") from None
