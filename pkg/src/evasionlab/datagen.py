"""Synthetic labeled datasets: planar Gaussian blobs and rendered glyph images.

Items are emitted round-robin over classes so that any prefix slice is
class-balanced and cyclically adjacent items never share a label.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LabeledDataset:
    items: tuple  # ((image, label), ...) with image (c, h, w) in [0, 1]
    n_classes: int
    input_shape: tuple[int, int, int]

    def __post_init__(self):
        if not self.items:
            raise ValueError("dataset has no items")
        seen = set()
        for img, label in self.items:
            if tuple(img.shape) != tuple(self.input_shape):
                raise ValueError("item shape does not match dataset input_shape")
            if not (0 <= label < self.n_classes):
                raise ValueError(f"label {label} outside class range")
            if img.min() < 0.0 or img.max() > 1.0:
                raise ValueError("pixel values must lie in [0, 1]")
            seen.add(label)
        if len(seen) != self.n_classes:
            raise ValueError("every class needs at least one item")

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class BlobSpec:
    """Gaussian point clouds on a small ring around the image center.

    Coordinates double as 1x1x2 images, so the blob task exercises the
    whole pipeline with a 2-dimensional attack space. The ring radius
    and noise scale are chosen so adjacent class regions sit within a
    0.05-radius max-norm ball of typical points; spreading the classes
    further makes every evasion attack on this task trivially hopeless.
    """

    n_classes: int = 3
    points_per_class: int = 100
    centroid_radius: float = 0.07
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least two blob classes")
        if self.points_per_class < 1:
            raise ValueError("points_per_class must be >= 1")
        if self.noise_sigma <= 0 or self.centroid_radius <= 0:
            raise ValueError("noise_sigma and centroid_radius must be positive")


def blob_centroids(spec: BlobSpec) -> np.ndarray:
    """Class centers, equally spaced on the ring. Shape (n_classes, 2)."""
    angles = 2.0 * np.pi * np.arange(spec.n_classes) / spec.n_classes
    return 0.5 + spec.centroid_radius * np.stack(
        [np.cos(angles), np.sin(angles)], axis=1
    )


def make_blobs(spec: BlobSpec) -> LabeledDataset:
    rng = np.random.default_rng(spec.seed)
    centers = blob_centroids(spec)
    items = []
    for _ in range(spec.points_per_class):
        for k in range(spec.n_classes):
            pt = centers[k] + rng.normal(0.0, spec.noise_sigma, size=2)
            pt = np.clip(pt, 0.0, 1.0)
            items.append((pt.reshape(1, 1, 2), k))
    return LabeledDataset(items=tuple(items), n_classes=spec.n_classes,
                          input_shape=(1, 1, 2))


# ---------------------------------------------------------------------------
# glyph images

def _coords(side: int):
    c = (np.arange(side) + 0.5) / side
    return np.meshgrid(c, c, indexing="ij")  # yy, xx


def _sdf_disc(yy, xx, cy, cx, r):
    return r - np.hypot(yy - cy, xx - cx)


def _sdf_square(yy, xx, cy, cx, half):
    return half - np.maximum(np.abs(yy - cy), np.abs(xx - cx))


def _glyph_disc(yy, xx, rng):
    cy, cx = 0.5 + rng.uniform(-0.08, 0.08, 2)
    return _sdf_disc(yy, xx, cy, cx, rng.uniform(0.24, 0.30))


def _glyph_ring(yy, xx, rng):
    cy, cx = 0.5 + rng.uniform(-0.06, 0.06, 2)
    d = np.hypot(yy - cy, xx - cx)
    r = rng.uniform(0.26, 0.32)
    return np.minimum(r - d, d - (r - 0.14))


def _glyph_square(yy, xx, rng):
    cy, cx = 0.5 + rng.uniform(-0.08, 0.08, 2)
    return _sdf_square(yy, xx, cy, cx, rng.uniform(0.20, 0.26))


def _glyph_frame(yy, xx, rng):
    cy, cx = 0.5 + rng.uniform(-0.06, 0.06, 2)
    m = np.maximum(np.abs(yy - cy), np.abs(xx - cx))
    half = rng.uniform(0.26, 0.32)
    return np.minimum(half - m, m - (half - 0.12))


def _glyph_hbar(yy, xx, rng):
    cy = 0.5 + rng.uniform(-0.12, 0.12)
    return rng.uniform(0.08, 0.12) - np.abs(yy - cy)


def _glyph_vbar(yy, xx, rng):
    cx = 0.5 + rng.uniform(-0.12, 0.12)
    return rng.uniform(0.08, 0.12) - np.abs(xx - cx)


def _glyph_cross(yy, xx, rng):
    cy, cx = 0.5 + rng.uniform(-0.06, 0.06, 2)
    w = rng.uniform(0.07, 0.10)
    return np.maximum(w - np.abs(yy - cy), w - np.abs(xx - cx))


def _glyph_diag(yy, xx, rng):
    off = rng.uniform(-0.15, 0.15)
    return rng.uniform(0.10, 0.14) - np.abs(xx - yy - off)


def _glyph_antidiag(yy, xx, rng):
    off = rng.uniform(-0.15, 0.15)
    return rng.uniform(0.10, 0.14) - np.abs(xx + yy - 1.0 - off)


def _glyph_checker(yy, xx, rng):
    f = rng.choice([2.0, 3.0])
    py, px = rng.uniform(0.0, 1.0, 2)
    s = np.sin(2 * np.pi * f * (yy + py)) * np.sin(2 * np.pi * f * (xx + px))
    return 0.35 * s


def _glyph_dots(yy, xx, rng):
    jy, jx = 0.5 + rng.uniform(-0.04, 0.04, 2)
    r = rng.uniform(0.09, 0.12)
    best = np.full_like(yy, -1.0)
    for dy in (-0.22, 0.22):
        for dx in (-0.22, 0.22):
            best = np.maximum(best, _sdf_disc(yy, xx, jy + dy, jx + dx, r))
    return best


def _glyph_triangle(yy, xx, rng):
    cy, cx = 0.5 + rng.uniform(-0.05, 0.05, 2)
    s = rng.uniform(0.26, 0.32)
    # three unnormalized half-plane margins, apex up
    a = (cy + s * 0.6) - yy
    b = yy - (cy - s * 0.6) + (xx - cx) * 1.6
    c = yy - (cy - s * 0.6) - (xx - cx) * 1.6
    return np.minimum(np.minimum(a, np.minimum(b, c) * 0.5), s)


SHAPE_FAMILIES = (
    ("disc", _glyph_disc),
    ("vbar", _glyph_vbar),
    ("ring", _glyph_ring),
    ("hbar", _glyph_hbar),
    ("square", _glyph_square),
    ("diag", _glyph_diag),
    ("cross", _glyph_cross),
    ("frame", _glyph_frame),
    ("antidiag", _glyph_antidiag),
    ("dots", _glyph_dots),
    ("checker", _glyph_checker),
    ("triangle", _glyph_triangle),
)


@dataclass(frozen=True)
class ShapeSpec:
    """Single-channel glyph images, one parametric family per class.

    Glyphs render at low contrast over a mid-gray background: the
    per-pixel class signal is a few multiples of the 0.05 attack radius,
    which keeps classification easy (the signal aggregates over many
    pixels) while leaving class boundaries genuinely reachable. High
    contrast would make every max-norm attack at that radius hopeless.
    `noise` is the per-pixel Gaussian sigma.
    """

    n_classes: int = 10
    image_side: int = 16
    samples_per_class: int = 100
    seed: int = 0
    noise: float = 0.025

    def __post_init__(self):
        if self.image_side < 8:
            raise ValueError("image_side must be >= 8")
        if not 2 <= self.n_classes <= len(SHAPE_FAMILIES):
            raise ValueError(
                f"n_classes must be in [2, {len(SHAPE_FAMILIES)}]"
            )
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")


_GLYPH_BASE = (0.32, 0.38)  # background level range
_GLYPH_AMP = (0.08, 0.14)  # glyph amplitude over the background


def render_shape(family: int, side: int, rng, noise: float = 0.025) -> np.ndarray:
    """One jittered (1, side, side) rendering of the given family index."""
    yy, xx = _coords(side)
    sdf = SHAPE_FAMILIES[family][1](yy, xx, rng)
    aa = 2.0 / side  # soft edge about a pixel wide
    cov = np.clip(0.5 + sdf / aa, 0.0, 1.0)
    img = rng.uniform(*_GLYPH_BASE) + rng.uniform(*_GLYPH_AMP) * cov
    if noise > 0:
        img += rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).reshape(1, side, side)


def make_shapes(spec: ShapeSpec) -> LabeledDataset:
    rng = np.random.default_rng(spec.seed)
    items = []
    for _ in range(spec.samples_per_class):
        for k in range(spec.n_classes):
            items.append((render_shape(k, spec.image_side, rng, spec.noise), k))
    return LabeledDataset(
        items=tuple(items),
        n_classes=spec.n_classes,
        input_shape=(1, spec.image_side, spec.image_side),
    )


# ---------------------------------------------------------------------------
# JSONL persistence

def save_dataset_jsonl(ds: LabeledDataset, path) -> None:
    """One JSON object per line: label, shape, flattened pixels."""
    with open(path, "w") as fh:
        for img, label in ds.items:
            row = {
                "label": int(label),
                "shape": list(img.shape),
                "pixels": img.reshape(-1).tolist(),
            }
            fh.write(json.dumps(row) + "\n")


def load_dataset_jsonl(path) -> LabeledDataset:
    items = []
    shape = None
    max_label = -1
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: bad JSON: {e}") from e
            try:
                label = int(row["label"])
                rshape = tuple(int(s) for s in row["shape"])
                pixels = np.array(row["pixels"], dtype=np.float64)
            except (KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}:{lineno}: malformed row: {e}") from e
            if shape is None:
                shape = rshape
            elif rshape != shape:
                raise ValueError(f"{path}:{lineno}: inconsistent image shape")
            if pixels.size != int(np.prod(rshape)):
                raise ValueError(f"{path}:{lineno}: pixel count mismatch")
            items.append((pixels.reshape(rshape), label))
            max_label = max(max_label, label)
    if not items:
        raise ValueError(f"{path}: empty dataset file")
    return LabeledDataset(
        items=tuple(items), n_classes=max_label + 1, input_shape=shape
    )
