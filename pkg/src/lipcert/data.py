"""Datasets: MNIST IDX files, synthetic Boolean datasets, normalization, crop augmentation."""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constructions.boolean import BooleanFunction, SymmetricBooleanFunction, boolean_cube, builtin
from .constructions.standard import impossibility_dataset, level_set

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


class IDXError(ValueError):
    pass


class IDXMagicError(IDXError):
    pass


class IDXTruncatedError(IDXError):
    pass


class IDXCountMismatchError(IDXError):
    pass


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y).astype(int)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("inputs must be (n, d) with one label per row")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError("labels outside [0, n_classes)")
        self.meta.setdefault("d", self.X.shape[1])
        self.meta.setdefault("value_range", (float(self.X.min(initial=0.0)), float(self.X.max(initial=1.0))))

    def __len__(self):
        return self.y.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def subset(self, idx):
        return type(self)(self.X[idx], self.y[idx], self.n_classes, dict(self.meta))

    def to_csv(self, path):
        """One row per sample: label, then the features."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for xi, yi in zip(self.X, self.y):
                w.writerow([int(yi)] + [repr(float(v)) for v in xi])


class BooleanDataset(LabeledDataset):
    """Points of {0,1}^d with binary labels; distinct points are at l_inf distance 1."""

    def __post_init__(self):
        super().__post_init__()
        if np.any((self.X != 0) & (self.X != 1)):
            raise ValueError("Boolean dataset inputs must be 0/1")
        if np.unique(self.X, axis=0).shape[0] != self.X.shape[0]:
            raise ValueError("Boolean dataset has duplicate points")


def read_csv_dataset(path, n_classes=None):
    rows = [r for r in csv.reader(open(path)) if r]
    y = np.array([int(r[0]) for r in rows])
    X = np.array([[float(v) for v in r[1:]] for r in rows])
    return LabeledDataset(X, y, n_classes or int(y.max()) + 1)


# -- IDX ---------------------------------------------------------------------------

def _read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expect_magic):
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise IDXTruncatedError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expect_magic:
        raise IDXMagicError(f"{path}: wrong magic {magic} (expected {expect_magic})")
    ndim = raw[3]
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IDXTruncatedError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims))
    if len(raw) - head < count:
        raise IDXTruncatedError(f"{path}: expected {count} data bytes, found {len(raw) - head}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=head).reshape(dims)


def load_mnist(images_path, labels_path) -> LabeledDataset:
    """MNIST from IDX files (optionally gzipped); pixels scaled to [0, 1], images flattened."""
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IDXCountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    shape = images.shape[1:]
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(X, labels.astype(int), 10, {"image_shape": tuple(shape), "value_range": (0.0, 1.0)})


def write_idx(path, array, magic):
    """Write a uint8 IDX file (used by tests and for exporting small subsets)."""
    a = np.asarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", (magic & ~0xFF) | a.ndim))
        fh.write(struct.pack(f">{a.ndim}I", *a.shape))
        fh.write(a.tobytes())


def find_mnist(directory, split="train"):
    """Locate the standard MNIST file pair (plain or .gz) in ``directory``."""
    prefix = "train" if split == "train" else "t10k"
    d = Path(directory)
    out = []
    for kind in ("images-idx3-ubyte", "labels-idx1-ubyte"):
        for name in (f"{prefix}-{kind}", f"{prefix}-{kind}.gz", f"{prefix}-{kind.replace('-idx', '.idx')}"):
            if (d / name).exists():
                out.append(d / name)
                break
        else:
            raise FileNotFoundError(f"no {prefix}-{kind} file in {d}")
    return tuple(out)


# -- Boolean datasets -------------------------------------------------------------

def gen_boolean_dataset(f, mode="full", levels=None, d=None) -> BooleanDataset:
    """Dataset labelled by a Boolean function.

    ``mode``: "full" (all 2^d points), "levels" (S_p u S_q, ``levels=(p, q)``
    or the separating pair of a symmetric f), "compact" (at most d + 1 points).
    ``f`` may be a builtin name, in which case ``d`` is required.
    """
    if isinstance(f, str):
        if d is None:
            raise ValueError("builtin functions need d")
        f = builtin(f, d)
    if mode == "full":
        X = boolean_cube(f.d)
    elif mode in ("levels", "compact"):
        if f.is_constant:
            raise ValueError("constant function: levels/compact datasets need both labels")
        if mode == "compact":
            X, _, _ = impossibility_dataset(f, compact=True)
        elif levels is not None:
            p, q = levels
            X = np.vstack([level_set(f.d, q), level_set(f.d, p)])
        else:
            X, _, _ = impossibility_dataset(f)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return BooleanDataset(X, f(X).astype(int), 2, {"function": repr(f), "mode": mode})


# -- preprocessing ------------------------------------------------------------------

def normalize(ds: LabeledDataset, mean=None, std=None) -> LabeledDataset:
    """(x - mean) / std with scalar or per-feature statistics; stores them in ``meta``."""
    mean = ds.X.mean() if mean is None else mean
    std = ds.X.std() if std is None else std
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std == 0):
        raise ValueError("std must be non-zero")
    out = LabeledDataset((ds.X - mean) / std, ds.y, ds.n_classes, dict(ds.meta))
    out.meta.update(mean=mean, std=std, normalized=True)
    return out


def denormalize(ds: LabeledDataset) -> LabeledDataset:
    if not ds.meta.get("normalized"):
        return ds
    meta = dict(ds.meta)
    mean, std = meta.pop("mean"), meta.pop("std")
    meta.pop("normalized")
    return LabeledDataset(ds.X * std + mean, ds.y, ds.n_classes, meta)


def eps_to_normalized(eps, std):
    """A pixel-space l_inf radius in normalized coordinates (conservative for per-feature std)."""
    return float(eps) / float(np.min(std))


def normalized_box(value_range, mean, std):
    lo, hi = value_range
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    return float(np.min((lo - mean) / std)), float(np.max((hi - mean) / std))


def augment_crop(image, pad, rng):
    """Edge-pad by ``pad`` pixels then crop a random window of the original size."""
    image = np.asarray(image)
    if pad < 0:
        raise ValueError("pad must be non-negative")
    if pad == 0:
        return image.copy()
    h, w = image.shape[-2:]
    padded = np.pad(image, [(0, 0)] * (image.ndim - 2) + [(pad, pad), (pad, pad)], mode="edge")
    i, j = rng.integers(0, 2 * pad + 1, size=2)
    return padded[..., i : i + h, j : j + w]


def crop_augmenter(image_shape, pad):
    """Batch augmenter for flattened images, for ``training.fit(augment=...)``."""
    def run(Xb, rng):
        imgs = Xb.reshape((-1,) + tuple(image_shape))
        out = np.stack([augment_crop(im, pad, rng) for im in imgs])
        return out.reshape(Xb.shape)
    return run
