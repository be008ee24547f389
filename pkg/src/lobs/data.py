"""Datasets: IDX ingestion, probe subsampling, and synthetic generators."""

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import IdxFormatError

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class Dataset:
    """Column-sample design matrix with integer labels and a split tag."""

    inputs: np.ndarray   # (d, n) float64
    labels: np.ndarray   # (n,) int64
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a (features, samples) matrix")
        if self.inputs.shape[1] != self.labels.shape[0]:
            raise ValueError(
                f"{self.inputs.shape[1]} samples but {self.labels.shape[0]} labels")
        if self.n == 0:
            raise ValueError("dataset must contain at least one sample")

    @property
    def n(self):
        return self.inputs.shape[1]

    @property
    def dim(self):
        return self.inputs.shape[0]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if self.n else 0

    def subsample(self, size, seed=0, split="probe"):
        """Seeded sample (without replacement) used as a probe set."""
        size = min(size, self.n)
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(self.n, size=size, replace=False))
        return Dataset(self.inputs[:, idx], self.labels[idx], split)


def _read_bytes(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(fh) as gz:
                return gz.read()
        return fh.read()


def _require(buf, offset, count, path):
    if len(buf) < offset + count:
        raise IdxFormatError(
            f"{path}: truncated, expected {count} bytes at offset {offset} "
            f"but file holds {len(buf)}", offset=len(buf))
    return buf[offset:offset + count]


def load_idx_images(path):
    """Big-endian IDX image file -> (n, rows, cols) uint8 array."""
    buf = _read_bytes(path)
    magic, n, rows, cols = struct.unpack(">IIII", _require(buf, 0, 16, path))
    if magic != IMAGE_MAGIC:
        raise IdxFormatError(
            f"{path}: bad image magic {magic} (expected {IMAGE_MAGIC})", offset=0)
    data = _require(buf, 16, n * rows * cols, path)
    return np.frombuffer(data, dtype=np.uint8).reshape(n, rows, cols)


def load_idx_labels(path):
    """Big-endian IDX label file -> (n,) uint8 array."""
    buf = _read_bytes(path)
    magic, n = struct.unpack(">II", _require(buf, 0, 8, path))
    if magic != LABEL_MAGIC:
        raise IdxFormatError(
            f"{path}: bad label magic {magic} (expected {LABEL_MAGIC})", offset=0)
    data = _require(buf, 8, n, path)
    return np.frombuffer(data, dtype=np.uint8)


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def _find_idx_file(directory, stem):
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        candidate = os.path.join(directory, name)
        if os.path.exists(candidate):
            return candidate
    raise FileNotFoundError(f"no {stem}[.gz] under {directory}")


def load_idx_pair(image_path, label_path, split):
    """Load one images/labels file pair, scaling pixels to [0, 1]."""
    images = load_idx_images(image_path)
    labels = load_idx_labels(label_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"{image_path} holds {images.shape[0]} images but {label_path} "
            f"holds {labels.shape[0]} labels", offset=None)
    inputs = images.reshape(images.shape[0], -1).T.astype(np.float64) / 255.0
    return Dataset(inputs, labels.astype(np.int64), split)


def load_mnist(directory):
    """Load an MNIST-layout IDX directory -> (train, test) datasets."""
    train = load_idx_pair(_find_idx_file(directory, MNIST_FILES["train_images"]),
                          _find_idx_file(directory, MNIST_FILES["train_labels"]),
                          "train")
    test = load_idx_pair(_find_idx_file(directory, MNIST_FILES["test_images"]),
                         _find_idx_file(directory, MNIST_FILES["test_labels"]),
                         "test")
    return train, test


# ---------------------------------------------------------------------------
# synthetic digits: a deterministic MNIST-shaped stand-in
# ---------------------------------------------------------------------------

_DIGIT_ROWS = {
    0: ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    1: ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    2: ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    3: ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    4: ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    5: ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    6: ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    7: ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    8: ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    9: ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}

IMG = 28


def _glyph_canvases():
    """10 smoothed 28x28 float canvases, one per digit."""
    canvases = np.zeros((10, IMG, IMG))
    for d, rows in _DIGIT_ROWS.items():
        bitmap = np.array([[int(ch) for ch in row] for row in rows], dtype=float)
        up = np.kron(bitmap, np.ones((3, 3)))          # 21 x 15
        canvas = np.zeros((IMG, IMG))
        r0 = (IMG - up.shape[0]) // 2
        c0 = (IMG - up.shape[1]) // 2
        canvas[r0:r0 + up.shape[0], c0:c0 + up.shape[1]] = up
        canvases[d] = _blur(canvas, 0.7)
    return canvases


def _gauss_kernel(sigma):
    radius = max(1, int(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur(img, sigma):
    if sigma <= 0:
        return img
    k = _gauss_kernel(sigma)
    pad = len(k) // 2
    tmp = np.apply_along_axis(
        lambda r: np.convolve(np.pad(r, pad, mode="edge"), k, mode="valid"),
        0, img)
    return np.apply_along_axis(
        lambda r: np.convolve(np.pad(r, pad, mode="edge"), k, mode="valid"),
        1, tmp)


def _render_batch(canvases, labels, rng):
    """Randomly warped glyph renderings for one batch of labels."""
    n = labels.shape[0]
    grid_y, grid_x = np.meshgrid(np.arange(IMG, dtype=float),
                                 np.arange(IMG, dtype=float), indexing="ij")
    center = (IMG - 1) / 2.0

    angle = rng.uniform(-0.24, 0.24, n)
    log_scale = rng.uniform(-0.2, 0.22, n)
    shear = rng.uniform(-0.22, 0.22, n)
    tx = rng.uniform(-2.8, 2.8, n)
    ty = rng.uniform(-2.8, 2.8, n)
    # inverse map: for each target pixel find the source coordinate
    cos, sin = np.cos(-angle), np.sin(-angle)
    inv_scale = np.exp(-log_scale)

    yc = grid_y[None, :, :] - center - ty[:, None, None]
    xc = grid_x[None, :, :] - center - tx[:, None, None]
    xs = (cos[:, None, None] * xc - sin[:, None, None] * yc)
    ys_ = (sin[:, None, None] * xc + cos[:, None, None] * yc)
    xs = (xs - shear[:, None, None] * ys_) * inv_scale[:, None, None] + center
    ys_ = ys_ * inv_scale[:, None, None] + center

    # smooth elastic jitter from a coarse displacement grid
    coarse = rng.normal(0.0, 1.0, (n, 2, 4, 4))
    disp = np.kron(coarse, np.ones((7, 7))) * rng.uniform(1.0, 2.2, (n, 1, 1, 1))
    xs = xs + disp[:, 0]
    ys_ = ys_ + disp[:, 1]

    x0 = np.clip(np.floor(xs).astype(int), 0, IMG - 2)
    y0 = np.clip(np.floor(ys_).astype(int), 0, IMG - 2)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys_ - y0, 0.0, 1.0)
    src = canvases[labels]                              # (n, 28, 28)
    idx = np.arange(n)[:, None, None]
    img = ((1 - fy) * (1 - fx) * src[idx, y0, x0]
           + (1 - fy) * fx * src[idx, y0, x0 + 1]
           + fy * (1 - fx) * src[idx, y0 + 1, x0]
           + fy * fx * src[idx, y0 + 1, x0 + 1])
    oob = (xs < 0) | (xs > IMG - 1) | (ys_ < 0) | (ys_ > IMG - 1)
    img[oob] = 0.0

    img *= rng.uniform(0.65, 1.0, (n, 1, 1))
    img += rng.normal(0.0, 0.05, img.shape)
    speckle = rng.random(img.shape) < 0.012
    img[speckle] = rng.uniform(0.3, 1.0, int(speckle.sum()))
    return np.clip(img, 0.0, 1.0)


def generate_synthetic_digits(directory, n_train=60000, n_test=10000, seed=1234):
    """Write a deterministic synthetic digit dataset in IDX format.

    The files mirror the MNIST layout and names exactly, so they feed the
    same loader; they are a stand-in for environments where the real files
    are not available.
    """
    os.makedirs(directory, exist_ok=True)
    canvases = _glyph_canvases()
    rng = np.random.default_rng(seed)
    for split, count in (("train", n_train), ("test", n_test)):
        labels = rng.integers(0, 10, size=count)
        images = np.empty((count, IMG, IMG), dtype=np.uint8)
        for start in range(0, count, 2048):
            batch = labels[start:start + 2048]
            rendered = _render_batch(canvases, batch, rng)
            images[start:start + 2048] = np.round(rendered * 255).astype(np.uint8)
        prefix = "train" if split == "train" else "t10k"
        write_idx_images(
            os.path.join(directory, f"{prefix}-images-idx3-ubyte"), images)
        write_idx_labels(
            os.path.join(directory, f"{prefix}-labels-idx1-ubyte"), labels)
    return directory


def gaussian_blobs(n_per_class=100, dim=2, n_classes=2,
                   separation=4.0, seed=0, split="train"):
    """Linearly separable Gaussian class blobs (for optimizer sanity tests)."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 1.0, (n_classes, dim))
    centers *= separation / np.maximum(np.linalg.norm(centers, axis=1,
                                                      keepdims=True), 1e-12)
    xs, ys = [], []
    for c in range(n_classes):
        xs.append(centers[c][:, None] + rng.normal(0.0, 0.5, (dim, n_per_class)))
        ys.append(np.full(n_per_class, c))
    return Dataset(np.concatenate(xs, axis=1), np.concatenate(ys), split)
