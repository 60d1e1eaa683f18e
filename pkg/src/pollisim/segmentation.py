"""Pixel-level color segmentation.

A two-class (background / flower) naive Bayes classifier over RGB intensities,
compiled into a 24-bit lookup table so segmenting a frame is one fancy-index
per pixel.  Channel likelihoods are trained from per-image relative
frequencies so image resolution does not bias the model.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

LABEL_BACKGROUND = 0
LABEL_FLOWER = 1
NUM_LABELS = 2

_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)
_MODEL_MAGIC = b"CBM1"
_LUT_MAGIC = b"CLT1"


class EmptyClassError(ValueError):
    """A class has zero labeled pixels across every training image."""


@dataclass(frozen=True)
class ColorHistogramModel:
    """Priors p(l) and per-channel likelihoods p(r|l), p(g|l), p(b|l).

    likelihoods has shape (num_labels, 3, 256); each 256-vector sums to 1.
    """

    priors: np.ndarray
    likelihoods: np.ndarray
    smoothing: float

    def __post_init__(self):
        priors = np.asarray(self.priors, dtype=float)
        lk = np.asarray(self.likelihoods, dtype=float)
        if priors.ndim != 1 or lk.shape != (priors.size, 3, 256):
            raise ValueError("inconsistent model shapes")
        if abs(priors.sum() - 1.0) > 1e-12 or np.any(priors <= 0):
            raise ValueError("priors must be positive and sum to 1")
        if np.any(np.abs(lk.sum(axis=2) - 1.0) > 1e-9) or np.any(lk <= 0):
            raise ValueError("likelihood vectors must be positive and sum to 1")
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "likelihoods", lk)

    @property
    def num_labels(self) -> int:
        return self.priors.size


def train_color_model(labeled_images, smoothing: float = 1.0,
                      uniform_priors: bool = False) -> ColorHistogramModel:
    """Fit the color model from (image, flower-mask) pairs.

    Every pixel is labeled: mask nonzero = flower, zero = background.  For each
    image and class, channel counts get `smoothing` added to every bin and are
    normalized to a distribution before averaging across images, so each image
    contributes equal weight regardless of resolution.  Images with no pixels
    of a class contribute nothing to that class's likelihoods.
    """
    if smoothing <= 0:
        raise ValueError("smoothing pseudo-count must be positive")
    if not labeled_images:
        raise ValueError("need at least one training image")

    lk_sums = np.zeros((NUM_LABELS, 3, 256))
    lk_counts = np.zeros(NUM_LABELS, dtype=int)
    prior_sums = np.zeros(NUM_LABELS)

    for image, mask in labeled_images:
        rgb = np.asarray(getattr(image, "rgb", image))
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError("training image must be (H, W, 3)")
        labels = (np.asarray(mask) != 0).astype(np.uint8)
        if labels.shape != rgb.shape[:2]:
            raise ValueError("mask shape does not match image")
        if labels.size == 0:
            raise ValueError("empty training image")
        flat = rgb.reshape(-1, 3)
        flat_labels = labels.reshape(-1)
        class_counts = np.bincount(flat_labels, minlength=NUM_LABELS).astype(float)
        prior_sums += (class_counts + smoothing) / (flat_labels.size + NUM_LABELS * smoothing)
        for lab in range(NUM_LABELS):
            if class_counts[lab] == 0:
                continue
            pix = flat[flat_labels == lab]
            for ch in range(3):
                hist = np.bincount(pix[:, ch], minlength=256).astype(float) + smoothing
                lk_sums[lab, ch] += hist / hist.sum()
            lk_counts[lab] += 1

    for lab in range(NUM_LABELS):
        if lk_counts[lab] == 0:
            raise EmptyClassError(f"label {lab} has no pixels in any training image")

    likelihoods = lk_sums / lk_counts[:, None, None]
    if uniform_priors:
        priors = np.full(NUM_LABELS, 1.0 / NUM_LABELS)
    else:
        priors = prior_sums / len(labeled_images)
        priors = priors / priors.sum()
    return ColorHistogramModel(priors=priors, likelihoods=likelihoods, smoothing=smoothing)


def _log_scores(model: ColorHistogramModel, r, g, b):
    """Per-class log posterior scores, identical operation order for scalar and
    vectorized callers so LUT compilation is bit-exact against classify_pixel."""
    logp = np.log(model.priors)
    loglk = np.log(model.likelihoods)
    return [((logp[lab] + loglk[lab, 0][r]) + loglk[lab, 1][g]) + loglk[lab, 2][b]
            for lab in range(model.num_labels)]


def classify_pixel(model: ColorHistogramModel, pixel) -> int:
    """MAP label for one (r, g, b) pixel; ties break toward background."""
    r, g, b = int(pixel[0]), int(pixel[1]), int(pixel[2])
    scores = _log_scores(model, r, g, b)
    return int(np.argmax(np.stack(scores, axis=0), axis=0))


@dataclass(frozen=True)
class ColorLUT:
    """Packed (r, g, b) -> label table; 8 (full, 2^24 entries) or 5 bits/channel."""

    table: np.ndarray
    bits_per_channel: int = 8

    def __post_init__(self):
        table = np.asarray(self.table, dtype=np.uint8)
        expected = 1 << (3 * self.bits_per_channel)
        if table.shape != (expected,):
            raise ValueError(f"table must have {expected} entries")
        object.__setattr__(self, "table", table)

    def lookup(self, rgb: np.ndarray) -> np.ndarray:
        """Label array for an (..., 3) uint8 color array."""
        rgb = np.asarray(rgb)
        if self.bits_per_channel == 8:
            idx = (rgb[..., 0].astype(np.uint32) << 16) \
                | (rgb[..., 1].astype(np.uint32) << 8) \
                | rgb[..., 2].astype(np.uint32)
        else:
            shift = 8 - self.bits_per_channel
            bpc = self.bits_per_channel
            idx = ((rgb[..., 0] >> shift).astype(np.uint32) << (2 * bpc)) \
                | ((rgb[..., 1] >> shift).astype(np.uint32) << bpc) \
                | (rgb[..., 2] >> shift).astype(np.uint32)
        return self.table[idx]


def build_lut(model: ColorHistogramModel, bits_per_channel: int = 8) -> ColorLUT:
    """Compile the model into a lookup table over every representable color.

    For the quantized (5-bit) variant each entry holds the label of its
    quantization-bin representative color.
    """
    if bits_per_channel not in (8, 5):
        raise ValueError("bits_per_channel must be 8 or 5")
    n = 1 << bits_per_channel
    if bits_per_channel == 8:
        values = np.arange(256)
    else:
        # representative of each 5-bit bin, standard bit replication
        v = np.arange(n)
        values = (v << 3) | (v >> 2)
    table = np.empty(n * n * n, dtype=np.uint8)
    g = values[:, None]
    b = values[None, :]
    for i, r in enumerate(values):
        scores = _log_scores(model, int(r), g, b)
        table[i * n * n:(i + 1) * n * n] = np.argmax(
            np.stack(scores, axis=0), axis=0).reshape(-1)
    return ColorLUT(table=table, bits_per_channel=bits_per_channel)


def build_lut_timed(model: ColorHistogramModel, bits_per_channel: int = 8):
    """build_lut plus wall-clock build time in seconds."""
    t0 = time.perf_counter()
    lut = build_lut(model, bits_per_channel)
    return lut, time.perf_counter() - t0


def segment_image(lut: ColorLUT, image) -> np.ndarray:
    """Per-pixel labels via table lookup. Depth is ignored; output shape (H, W)."""
    rgb = np.asarray(getattr(image, "rgb", image))
    return lut.lookup(rgb)


@dataclass(frozen=True)
class PatchRegion:
    """One 8-connected mask component with its inflated bounding box.

    Box coordinates are half-open pixel ranges (x0 <= u < x1, y0 <= v < y1)
    after inflation and clipping; mask covers the box and marks component
    pixels; centroid and area describe the raw component.
    """

    x0: int
    y0: int
    x1: int
    y1: int
    mask: np.ndarray
    centroid: tuple
    area: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


def extract_patches(mask: np.ndarray, min_area: int = 50,
                    inflation: int = 4) -> list:
    """8-connected components of a binary mask, area-filtered, largest first."""
    mask = np.asarray(mask) != 0
    labeled, count = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if count == 0:
        return []
    h, w = mask.shape
    areas = ndimage.sum_labels(mask, labeled, index=np.arange(1, count + 1))
    slices = ndimage.find_objects(labeled)
    patches = []
    for i, (sl, area) in enumerate(zip(slices, areas)):
        if area < min_area:
            continue
        ys, xs = np.nonzero(labeled == i + 1)
        x0 = max(int(xs.min()) - inflation, 0)
        x1 = min(int(xs.max()) + 1 + inflation, w)
        y0 = max(int(ys.min()) - inflation, 0)
        y1 = min(int(ys.max()) + 1 + inflation, h)
        box_mask = labeled[y0:y1, x0:x1] == i + 1
        patches.append(PatchRegion(
            x0=x0, y0=y0, x1=x1, y1=y1, mask=box_mask,
            centroid=(float(xs.mean()), float(ys.mean())), area=int(area)))
    patches.sort(key=lambda p: -p.area)
    return patches


# ---------------------------------------------------------------------------
# persistence and training-data ingestion


def save_color_model(model: ColorHistogramModel, path) -> None:
    """Versioned little-endian binary: magic, label count, pseudo-count,
    priors (f64), then 3x256 likelihoods per class (f64)."""
    with open(path, "wb") as f:
        f.write(_MODEL_MAGIC)
        f.write(struct.pack("<I", model.num_labels))
        f.write(struct.pack("<d", model.smoothing))
        f.write(model.priors.astype("<f8").tobytes())
        f.write(model.likelihoods.astype("<f8").tobytes())


def load_color_model(path) -> ColorHistogramModel:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MODEL_MAGIC:
            raise ValueError(f"not a color model file (magic {magic!r})")
        (num_labels,) = struct.unpack("<I", f.read(4))
        (smoothing,) = struct.unpack("<d", f.read(8))
        priors = np.frombuffer(f.read(8 * num_labels), dtype="<f8")
        lk = np.frombuffer(f.read(8 * num_labels * 3 * 256), dtype="<f8")
    return ColorHistogramModel(priors=priors.copy(),
                               likelihoods=lk.reshape(num_labels, 3, 256).copy(),
                               smoothing=smoothing)


def save_lut(lut: ColorLUT, path) -> None:
    with open(path, "wb") as f:
        f.write(_LUT_MAGIC)
        f.write(struct.pack("<I", lut.bits_per_channel))
        f.write(lut.table.tobytes())


def load_lut(path) -> ColorLUT:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _LUT_MAGIC:
            raise ValueError(f"not a LUT file (magic {magic!r})")
        (bpc,) = struct.unpack("<I", f.read(4))
        table = np.frombuffer(f.read(), dtype=np.uint8)
    return ColorLUT(table=table.copy(), bits_per_channel=bpc)


def load_training_directory(path) -> list:
    """Read (scene, mask) PNG pairs: NAME.png paired with NAME_mask.png.

    Mask pixels nonzero = flower. Returns the list accepted by
    train_color_model.
    """
    from PIL import Image

    path = Path(path)
    pairs = []
    for mask_file in sorted(path.glob("*_mask.png")):
        scene_file = mask_file.with_name(mask_file.name[:-len("_mask.png")] + ".png")
        if not scene_file.exists():
            raise FileNotFoundError(f"no scene image for {mask_file.name}")
        rgb = np.asarray(Image.open(scene_file).convert("RGB"))
        mask = np.asarray(Image.open(mask_file).convert("L"))
        pairs.append((rgb, mask))
    if not pairs:
        raise FileNotFoundError(f"no *_mask.png files under {path}")
    return pairs
