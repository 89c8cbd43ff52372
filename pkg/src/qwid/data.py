"""Datasets: seeded synthetic weeds, a P6 pixmap directory loader, and the 60:20:20 split."""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DatasetError, MalformedImageError
from .rng import SplitMix64

CLASS_NAMES = (
    "Chinese apple",
    "Lantana",
    "Parkinsonia",
    "Parthenium",
    "Prickly acacia",
    "Rubber vine",
    "Siam weed",
    "Snake weed",
    "Negative",
)
NUM_CLASSES = len(CLASS_NAMES)
NEGATIVE = 8
NEGATIVE_FACTOR = 8


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_names: tuple[str, ...] = CLASS_NAMES

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DatasetError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DatasetError("label outside class range")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(self.class_names))


class Splits(NamedTuple):
    train: Dataset
    val: Dataset
    test: Dataset


# ------------------------------------------------------------- synthetic

# per weed class: stripe angle (deg), spatial frequency (cycles/image), RGB tint
_TEXTURES = (
    (0, 3, (0.85, 0.35, 0.30)),
    (45, 4, (0.90, 0.75, 0.25)),
    (90, 3, (0.35, 0.80, 0.30)),
    (135, 4, (0.95, 0.95, 0.80)),
    (0, 7, (0.55, 0.70, 0.25)),
    (60, 6, (0.45, 0.30, 0.65)),
    (120, 6, (0.30, 0.60, 0.75)),
    (90, 8, (0.70, 0.55, 0.40)),
)


def _render(rng: SplitMix64, label: int, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    p = rng.uniform(12)
    img = np.empty((3, size, size))
    if label == NEGATIVE:
        # soft foliage without a dominant stripe direction
        tint = 0.35 + 0.3 * rng.uniform(3)
        field = np.zeros((size, size))
        for k in range(4):
            cx, cy, r = rng.uniform(3)
            field += np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (0.02 + 0.08 * r))
        pattern = field / field.max()
    else:
        angle_deg, freq, tint = _TEXTURES[label]
        tint = np.asarray(tint)
        theta = math.radians(angle_deg + 16.0 * (p[0] - 0.5))
        f = freq * (0.9 + 0.2 * p[1])
        phase = 2 * math.pi * p[2]
        pattern = 0.5 + 0.5 * np.sin(2 * math.pi * f * (xx * math.cos(theta) + yy * math.sin(theta)) + phase)
    brightness = 0.8 + 0.3 * p[3]
    for c in range(3):
        img[c] = brightness * (0.25 + 0.6 * pattern) * tint[c]
    # a random distractor blob, then sensor noise
    bx, by, br = p[4], p[5], 0.05 + 0.1 * p[6]
    blob = np.exp(-((xx - bx) ** 2 + (yy - by) ** 2) / (2 * br**2))
    img = img * (1 - 0.5 * blob) + 0.5 * blob * p[7:10].reshape(3, 1, 1)
    img += 0.06 * rng.normal((3, size, size))
    return np.clip(img, 0.0, 1.0)


def generate_synthetic(seed: int, per_class: int, size: int = 32) -> Dataset:
    """Procedural 9-class stand-in for the weed images.

    Weed classes are oriented stripe textures with their own angle, frequency
    and tint; the Negative class is blob foliage and gets ``8 * per_class``
    images to reproduce the real dataset's imbalance.
    """
    if per_class < 1:
        raise DatasetError("per_class must be at least 1")
    rng = SplitMix64(seed)
    counts = [per_class] * (NUM_CLASSES - 1) + [NEGATIVE_FACTOR * per_class]
    labels = np.repeat(np.arange(NUM_CLASSES), counts)
    images = np.empty((len(labels), 3, size, size), np.float32)
    for i, lab in enumerate(labels):
        images[i] = _render(rng, int(lab), size)
    return Dataset(images, labels.astype(np.int64))


# ----------------------------------------------------------- pixmap files

_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s")


def read_ppm(path) -> np.ndarray:
    """Read a binary 8-bit P6 pixmap as a ``(3, H, W)`` float32 array in [0, 1]."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from e
    if raw[:2] != b"P6":
        raise MalformedImageError(f"{path}: not a binary P6 pixmap")
    m = _HEADER.match(raw)
    if not m:
        raise MalformedImageError(f"{path}: malformed P6 header")
    w, h, maxval = (int(v) for v in m.groups())
    if not 0 < maxval < 256:
        raise MalformedImageError(f"{path}: only 8-bit pixmaps are supported (maxval={maxval})")
    body = raw[m.end() : m.end() + 3 * w * h]
    if len(body) != 3 * w * h or w == 0 or h == 0:
        raise MalformedImageError(f"{path}: pixel data truncated")
    px = np.frombuffer(body, np.uint8).reshape(h, w, 3)
    return (px.transpose(2, 0, 1).astype(np.float32) / maxval)


def write_ppm(path, image: np.ndarray):
    """Write a ``(3, H, W)`` [0, 1] image as an 8-bit P6 pixmap."""
    px = np.clip(np.rint(np.asarray(image, np.float64) * 255), 0, 255).astype(np.uint8)
    _, h, w = px.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(px.transpose(1, 2, 0).tobytes())


def resize_nearest(img: np.ndarray, size: int) -> np.ndarray:
    _, h, w = img.shape
    rows = (np.arange(size) * h) // size
    cols = (np.arange(size) * w) // size
    return img[:, rows][:, :, cols]


def load_image_dir(path, size: int = 32) -> Dataset:
    """Load ``<root>/<class_name>/*.ppm``; class order is sorted directory names."""
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"{root} is not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise DatasetError(f"{root} has no class subdirectories")
    images, labels = [], []
    for label, d in enumerate(class_dirs):
        files = sorted(d.glob("*.ppm"))
        if not files:
            raise DatasetError(f"class directory {d} holds no .ppm images")
        for f in files:
            images.append(resize_nearest(read_ppm(f), size))
            labels.append(label)
    return Dataset(
        np.stack(images).astype(np.float32),
        np.array(labels, np.int64),
        tuple(d.name for d in class_dirs),
    )


def save_image_dir(ds: Dataset, path):
    root = Path(path)
    for c, name in enumerate(ds.class_names):
        (root / name).mkdir(parents=True, exist_ok=True)
    for i, (img, lab) in enumerate(zip(ds.images, ds.labels)):
        write_ppm(root / ds.class_names[lab] / f"{i:06d}.ppm", img)


# ------------------------------------------------------------------ split


def _apportion(counts: np.ndarray, frac: float, total: int, reverse_ties: bool) -> np.ndarray:
    # largest-remainder apportionment of `total` across classes
    exact = counts * frac
    quota = np.floor(exact).astype(np.int64)
    rem = exact - quota
    order = sorted(range(len(counts)), key=lambda c: (-rem[c], -c if reverse_ties else c))
    short = total - quota.sum()
    for c in order:
        if short <= 0:
            break
        if rem[c] > 0:
            quota[c] += 1
            short -= 1
    return quota


def split(ds: Dataset, seed: int, fractions=(0.6, 0.2, 0.2)) -> Splits:
    """Stratified seeded 60:20:20 split; leftovers go to train."""
    n = len(ds)
    if n == 0:
        raise DatasetError("cannot split an empty dataset")
    counts = ds.class_counts()
    small = [ds.class_names[c] for c in range(len(counts)) if 0 < counts[c] < 5]
    if small:
        warnings.warn(f"classes with fewer than 5 samples cannot be stratified well: {small}")
    n_val = int(math.floor(fractions[1] * n))
    n_test = int(math.floor(fractions[2] * n))
    val_q = _apportion(counts, fractions[1], n_val, False)
    test_q = np.minimum(_apportion(counts, fractions[2], n_test, True), counts - val_q)
    rng = SplitMix64(seed).spawn(0x5EED)
    parts = ([], [], [])
    for c in range(len(counts)):
        idx = np.flatnonzero(ds.labels == c)
        idx = idx[rng.permutation(len(idx))]
        nv, nt = int(val_q[c]), int(test_q[c])
        parts[1].extend(idx[:nv])
        parts[2].extend(idx[nv : nv + nt])
        parts[0].extend(idx[nv + nt :])
    return Splits(*(ds.subset(np.sort(np.array(p, np.int64))) for p in parts))
