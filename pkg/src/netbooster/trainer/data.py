"""Datasets: IDX file I/O, the synthetic blob generator, normalization."""

import os
import struct
from dataclasses import dataclass
from importlib import resources

import numpy as np

from ..errors import DataFormatError, UsageError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
_IDX_TYPES = {0x08: np.uint8}


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    num_classes: int = 10
    mean: np.ndarray = None
    std: np.ndarray = None

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise UsageError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise UsageError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self):
        return tuple(self.images.shape[1:])


def read_idx(path, expected_magic=None):
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 4:
        raise DataFormatError(f"{path}: file too short for IDX magic", offset=len(buf))
    magic = struct.unpack_from(">I", buf, 0)[0]
    if expected_magic is not None and magic != expected_magic:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    if magic >> 16 != 0:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}", offset=0)
    dtype_code, ndim = (magic >> 8) & 0xFF, magic & 0xFF
    if dtype_code not in _IDX_TYPES:
        raise DataFormatError(f"{path}: unsupported IDX element type 0x{dtype_code:02x}", offset=2)
    header_end = 4 + 4 * ndim
    if len(buf) < header_end:
        raise DataFormatError(f"{path}: truncated IDX dimension header", offset=len(buf))
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) < header_end + count:
        raise DataFormatError(f"{path}: truncated IDX data, expected {count} bytes after header", offset=len(buf))
    if len(buf) > header_end + count:
        raise DataFormatError(f"{path}: trailing bytes after IDX data", offset=header_end + count)
    return np.frombuffer(buf, dtype=_IDX_TYPES[dtype_code], count=count, offset=header_end).reshape(dims).copy()


def write_idx(path, array):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = (0x08 << 8) | array.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def load_idx(images_path, labels_path, split="train", num_classes=None):
    """Images scaled to [0, 1] as N x 1 x H x W float32, labels as int64."""
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(f"image count {images.shape[0]} != label count {labels.shape[0]}")
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if len(labels) else 1
    x = (images.astype(np.float32) / 255.0)[:, None, :, :]
    return Dataset(x, labels, split, num_classes)


def normalize(train, *others):
    """Standardize every split with per-channel statistics of ``train``."""
    axes = (0, 2, 3)
    mean = train.images.mean(axis=axes).astype(np.float32)
    std = (train.images.std(axis=axes) + 1e-6).astype(np.float32)
    out = []
    for ds in (train,) + others:
        x = (ds.images - mean[None, :, None, None]) / std[None, :, None, None]
        out.append(Dataset(x.astype(np.float32), ds.labels, ds.split, ds.num_classes, mean, std))
    return out


def make_blobs(n, image_size=12, num_classes=10, seed=0, split_seed=0, noise=0.18, jitter=1.0, distractors=1):
    """Gaussian class blobs rendered as uint8 images.

    Each class owns two blob centres, fixed by ``seed``. A sample draws its
    class, jitters the centres, adds ``distractors`` blobs from random other
    classes at reduced amplitude, and adds pixel noise.
    """
    proto_rng = np.random.default_rng(seed)
    margin = 1.5
    centres = proto_rng.uniform(margin, image_size - 1 - margin, size=(num_classes, 2, 2))
    sigmas = proto_rng.uniform(0.9, 1.8, size=(num_classes, 2))
    rng = np.random.default_rng([seed, split_seed])
    labels = rng.integers(0, num_classes, size=n)
    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64)
    images = np.zeros((n, image_size, image_size))

    def blob(cy, cx, sigma, amp):
        return amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))

    for k in range(n):
        c = labels[k]
        img = np.zeros((image_size, image_size))
        for b in range(2):
            cy, cx = centres[c, b] + rng.normal(0, jitter, size=2)
            img += blob(cy, cx, sigmas[c, b], rng.uniform(0.6, 1.0))
        for _ in range(distractors):
            other = (c + rng.integers(1, num_classes)) % num_classes
            b = rng.integers(0, 2)
            cy, cx = centres[other, b] + rng.normal(0, jitter, size=2)
            img += blob(cy, cx, sigmas[other, b], rng.uniform(0.3, 0.7))
        img += rng.normal(0, noise, size=img.shape)
        images[k] = img
    images = np.clip(images, 0, 1)
    return np.round(images * 255).astype(np.uint8), labels.astype(np.uint8)


IDX_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def write_synthetic_idx(out_dir, n_train=500, n_test=500, image_size=12, num_classes=10, seed=0, **kwargs):
    """Write a train/test pair of synthetic IDX files; returns the four paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, v) for k, v in IDX_NAMES.items()}
    x, y = make_blobs(n_train, image_size, num_classes, seed, split_seed=1, **kwargs)
    write_idx(paths["train_images"], x)
    write_idx(paths["train_labels"], y)
    x, y = make_blobs(n_test, image_size, num_classes, seed, split_seed=2, **kwargs)
    write_idx(paths["test_images"], x)
    write_idx(paths["test_labels"], y)
    return paths


def load_idx_pair(paths, num_classes=10):
    train = load_idx(paths["train_images"], paths["train_labels"], "train", num_classes)
    test = load_idx(paths["test_images"], paths["test_labels"], "test", num_classes)
    return normalize(train, test)


def bundled_paths():
    root = resources.files("netbooster") / "data" / "blobs500"
    return {k: str(root / v) for k, v in IDX_NAMES.items()}


def synthetic_splits(n_train=1000, n_test=1000, image_size=12, num_classes=10, seed=0, **kwargs):
    """Normalized in-memory train/test splits from the blob generator (no files)."""
    xs, ys = make_blobs(n_train, image_size, num_classes, seed, split_seed=1, **kwargs)
    xt, yt = make_blobs(n_test, image_size, num_classes, seed, split_seed=2, **kwargs)
    train = Dataset((xs.astype(np.float32) / 255.0)[:, None], ys.astype(np.int64), "train", num_classes)
    test = Dataset((xt.astype(np.float32) / 255.0)[:, None], yt.astype(np.int64), "test", num_classes)
    return normalize(train, test)
