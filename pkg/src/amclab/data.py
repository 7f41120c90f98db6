"""Dataset ingestion, splits, balancing, augmentation and synthetic images.

IDX is the only external raster format (big-endian MNIST container). The
synthetic generator renders class-distinct glyphs so the whole pipeline can
run self-contained at desk scale.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Dataset:
    images: np.ndarray  # (n, channels, height, width), values in [0,1]
    labels: np.ndarray  # (n,) int class indices
    name: str = "dataset"
    provenance: str = "unspecified"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"{len(self.images)} images vs {len(self.labels)} labels"
            )

    def __len__(self):
        return len(self.images)

    def subset(self, idx, provenance=None):
        return Dataset(
            self.images[idx], self.labels[idx], self.name,
            provenance or self.provenance,
        )

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0


@dataclass(frozen=True)
class SplitSpec:
    validation_fraction: float = 0.30
    attack_fraction: float = 0.30  # of the remainder, i.e. 21% of the original
    seed: int = 0

    def __post_init__(self):
        for name in ("validation_fraction", "attack_fraction"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ValueError(f"{name} must be in (0,1), got {v}")


def _read_be32(blob, pos, what):
    if pos + 4 > len(blob):
        raise IdxError(f"truncated while reading {what}", pos)
    return struct.unpack(">I", blob[pos:pos + 4])[0], pos + 4


def load_idx(images_path, labels_path) -> Dataset:
    """Parse big-endian IDX image/label files; pixels scale to [0,1]."""
    with open(images_path, "rb") as f:
        blob = f.read()
    magic, pos = _read_be32(blob, 0, "image magic")
    if magic != IDX_IMAGES_MAGIC:
        raise IdxError(f"bad image magic 0x{magic:08x}", 0)
    n, pos = _read_be32(blob, pos, "image count")
    h, pos = _read_be32(blob, pos, "row count")
    w, pos = _read_be32(blob, pos, "column count")
    if pos + n * h * w != len(blob):
        raise IdxError(
            f"image payload holds {len(blob) - pos} bytes, expected {n * h * w}",
            pos,
        )
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=pos).reshape(n, 1, h, w)

    with open(labels_path, "rb") as f:
        lblob = f.read()
    lmagic, lpos = _read_be32(lblob, 0, "label magic")
    if lmagic != IDX_LABELS_MAGIC:
        raise IdxError(f"bad label magic 0x{lmagic:08x}", 0)
    ln, lpos = _read_be32(lblob, lpos, "label count")
    if lpos + ln != len(lblob):
        raise IdxError(
            f"label payload holds {len(lblob) - lpos} bytes, expected {ln}", lpos
        )
    if ln != n:
        raise IdxError(f"label count {ln} does not match image count {n}", 4)
    labels = np.frombuffer(lblob, dtype=np.uint8, offset=lpos)
    return Dataset(pixels / 255.0, labels.astype(np.int64), name="idx")


def write_idx(ds: Dataset, images_path, labels_path) -> None:
    """Serialize a dataset to the IDX pair format (inverse of load_idx)."""
    n, c, h, w = ds.images.shape
    if c != 1:
        raise ValueError("IDX stores single-channel images")
    pixels = np.round(ds.images * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(ds.labels.astype(np.uint8).tobytes())


def split(ds: Dataset, spec: SplitSpec):
    """Split a test partition into (validation, attack_reserve, test).

    Sizes: validation = round(vf*n); attack_reserve = round(af*(n-val));
    test = remainder. Deterministic seeded shuffle; parts are disjoint and
    exhaustive.
    """
    n = len(ds)
    n_val = round(spec.validation_fraction * n)
    n_att = round(spec.attack_fraction * (n - n_val))
    n_test = n - n_val - n_att
    if min(n_val, n_att, n_test) <= 0:
        raise ValueError(f"test partition of size {n} too small to split")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    order = rng.permutation(n)
    val = ds.subset(order[:n_val], provenance="validation")
    att = ds.subset(order[n_val:n_val + n_att], provenance="attack_reserve")
    test = ds.subset(order[n_val + n_att:], provenance="test")
    return val, att, test


def balance_classes(ds: Dataset, seed: int = 0) -> Dataset:
    """Subsample every class to the minimum per-class count, seeded."""
    classes = np.arange(ds.num_classes)
    counts = np.bincount(ds.labels, minlength=len(classes))
    missing = np.where(counts == 0)[0]
    if len(missing):
        raise ValueError(f"class {missing[0]} absent from dataset")
    m = counts.min()
    rng = np.random.Generator(np.random.PCG64(seed))
    keep = []
    for c in classes:
        idx = np.where(ds.labels == c)[0]
        keep.append(rng.permutation(idx)[:m])
    keep = rng.permutation(np.concatenate(keep))
    return ds.subset(keep)


def augment_shift(ds: Dataset, max_shift: int, seed: int) -> Dataset:
    """Random per-image translation up to +/-max_shift with zero padding."""
    n, c, h, w = ds.images.shape
    if max_shift >= min(h, w):
        raise ValueError(f"max_shift {max_shift} too large for {h}x{w} images")
    if max_shift == 0:
        return replace(ds)
    rng = np.random.Generator(np.random.PCG64(seed))
    out = np.zeros_like(ds.images)
    p = max_shift
    for i in range(n):
        dy = int(rng.integers(-max_shift, max_shift + 1))
        dx = int(rng.integers(-max_shift, max_shift + 1))
        big = np.pad(ds.images[i], ((0, 0), (p, p), (p, p)))
        out[i] = big[:, p - dy:p - dy + h, p - dx:p - dx + w]
    return Dataset(out, ds.labels.copy(), ds.name, ds.provenance)


def _render_glyph(cls, side):
    img = np.zeros((side, side))
    q = side // 4
    mid = side // 2
    if cls == 0:  # horizontal bar
        img[mid - 1:mid + 1, q:side - q] = 1.0
    elif cls == 1:  # vertical bar
        img[q:side - q, mid - 1:mid + 1] = 1.0
    elif cls == 2:  # cross
        img[mid - 1:mid + 1, q:side - q] = 1.0
        img[q:side - q, mid - 1:mid + 1] = 1.0
    elif cls == 3:  # hollow square
        img[q:side - q, q:q + 2] = 1.0
        img[q:side - q, side - q - 2:side - q] = 1.0
        img[q:q + 2, q:side - q] = 1.0
        img[side - q - 2:side - q, q:side - q] = 1.0
    elif cls == 4:  # main diagonal
        for t in range(q, side - q):
            img[t, max(0, t - 1):t + 1] = 1.0
    elif cls == 5:  # anti-diagonal
        for t in range(q, side - q):
            img[t, max(0, side - t - 1):side - t + 1] = 1.0
    elif cls == 6:  # filled blob
        img[mid - q:mid + q, mid - q:mid + q] = 1.0
    elif cls == 7:  # two horizontal bars
        img[q:q + 2, q:side - q] = 1.0
        img[side - q - 2:side - q, q:side - q] = 1.0
    elif cls == 8:  # two vertical bars
        img[q:side - q, q:q + 2] = 1.0
        img[q:side - q, side - q - 2:side - q] = 1.0
    else:  # corner dots
        img[q:q + 2, q:q + 2] = 1.0
        img[side - q - 2:side - q, side - q - 2:side - q] = 1.0
    return img


def synth_generate(num_classes: int, n: int, side: int, seed: int) -> Dataset:
    """Class-distinct glyph images with seeded jitter and noise.

    Learnable by construction: a plain-trained desk-scale model reaches at
    least 0.9 clean accuracy within a few dozen epochs.
    """
    if side < 8:
        raise ValueError(f"side must be >= 8, got {side}")
    if not (1 <= num_classes <= 10):
        raise ValueError(f"num_classes must be in [1,10], got {num_classes}")
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    images = np.zeros((n, 1, side, side))
    labels = rng.integers(0, num_classes, size=n)
    for i in range(n):
        glyph = _render_glyph(int(labels[i]), side)
        dy, dx = rng.integers(-1, 2, size=2)
        glyph = np.roll(np.roll(glyph, dy, axis=0), dx, axis=1)
        noisy = glyph + 0.1 * rng.standard_normal((side, side))
        images[i, 0] = np.clip(noisy, 0.0, 1.0)
    return Dataset(images, labels, name=f"synth{num_classes}x{side}",
                   provenance="synthetic")
