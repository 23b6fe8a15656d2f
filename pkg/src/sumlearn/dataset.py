"""MNIST ingestion and sum-supervised corpus construction.

A corpus example is an h x w grid of image ids plus the integer sum of the
h row-numbers the grid spells out (each row read as a w-digit number). Only
the sums are supervision; per-image ground truth stays behind
ImageStore.evaluation_labels() and is never touched by the training path.
"""

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, IdxFormatError, InsufficientDataError
from .tensorfile import load_tensors, save_tensors

IMAGE_MAGIC = 2051  # 0x00000803
LABEL_MAGIC = 2049  # 0x00000801


class ImageStore:
    """Flattened grayscale images plus held-out ground-truth labels.

    The labels ride along for evaluation and for *generating* the sum
    supervision, but training code must obtain them only through
    evaluation_labels(); an audit test enforces that no training-stage
    function references the accessor.
    """

    def __init__(self, images, true_labels, split="train"):
        images = np.asarray(images, dtype=np.float64)
        true_labels = np.array(true_labels, dtype=np.int64)  # own copy; frozen below
        if images.ndim != 2:
            raise ValueError(f"images must be 2-d (N, D), got shape {images.shape}")
        if images.shape[0] != true_labels.shape[0]:
            raise ConsistencyError(
                f"{images.shape[0]} images but {true_labels.shape[0]} labels"
            )
        self.images = images
        self.split = split
        self._true_labels = true_labels
        self._true_labels.setflags(write=False)

    def __len__(self):
        return self.images.shape[0]

    @property
    def dim(self):
        return self.images.shape[1]

    def evaluation_labels(self):
        """Ground-truth digits. Evaluation/data-generation use only."""
        return self._true_labels

    def subset(self, indices, split=None):
        return ImageStore(
            self.images[indices],
            self._true_labels[indices],
            split=self.split if split is None else split,
        )


def _open_maybe_gz(path):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_be32(f, path):
    data = f.read(4)
    if len(data) != 4:
        raise IdxFormatError(f"truncated IDX header in {path}")
    return struct.unpack(">I", data)[0]


def load_idx(images_path, labels_path, split="train"):
    """Load an IDX image/label file pair into an ImageStore.

    Pixels are scaled to [0,1]; images are flattened row-major. Accepts
    plain or gzip-compressed files.
    """
    with _open_maybe_gz(labels_path) as f:
        magic = _read_be32(f, labels_path)
        if magic != LABEL_MAGIC:
            raise IdxFormatError(f"bad label magic {magic} in {labels_path}")
        n_labels = _read_be32(f, labels_path)
        labels = np.frombuffer(f.read(n_labels), dtype=np.uint8)
        if labels.shape[0] != n_labels:
            raise IdxFormatError(f"truncated label data in {labels_path}")

    with _open_maybe_gz(images_path) as f:
        magic = _read_be32(f, images_path)
        if magic != IMAGE_MAGIC:
            raise IdxFormatError(f"bad image magic {magic} in {images_path}")
        n_images = _read_be32(f, images_path)
        rows = _read_be32(f, images_path)
        cols = _read_be32(f, images_path)
        raw = np.frombuffer(f.read(n_images * rows * cols), dtype=np.uint8)
        if raw.shape[0] != n_images * rows * cols:
            raise IdxFormatError(f"truncated image data in {images_path}")

    if n_images != n_labels:
        raise ConsistencyError(f"{n_images} images but {n_labels} labels")
    images = raw.reshape(n_images, rows * cols).astype(np.float64) / 255.0
    return ImageStore(images, labels.astype(np.int64), split=split)


@dataclass
class Example:
    """One training instance: grid of image ids and the supervised sum."""

    grid: np.ndarray  # (h, w) int64 image ids
    sum: int

    @property
    def h(self):
        return self.grid.shape[0]

    @property
    def w(self):
        return self.grid.shape[1]


@dataclass
class Corpus:
    examples: list[Example]
    oversample_factor: int = 1

    def __len__(self):
        return len(self.examples)

    def image_ids(self):
        """All ids across all grids, in corpus order (with repeats)."""
        if not self.examples:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([ex.grid.ravel() for ex in self.examples])


def positional_weight(w, j):
    """Weight 10^(w-j) of the digit in 1-based column j of a w-digit number.

    Exact integer arithmetic; no floating point even at w=10.
    """
    if not 1 <= j <= w:
        raise ValueError(f"column j={j} out of range for width w={w}")
    return 10 ** (w - j)


def _column_weights(w):
    # weights[j-1] = 10^(w-j); int64 is exact through w=10
    return 10 ** np.arange(w - 1, -1, -1, dtype=np.int64)


def grid_sum(grid, labels_per_image):
    """Sum spelled out by a grid under the given per-image digit labels."""
    grid = np.asarray(grid)
    digits = np.asarray(labels_per_image, dtype=np.int64)[grid]
    return int((digits * _column_weights(grid.shape[1])).sum())


def build_corpus(store, w, h, oversample_factor=1, seed=0):
    """Shuffle image ids, partition into h x w grids, compute exact sums.

    With oversample_factor f > 1, f independent shuffles are concatenated
    before partitioning so every image appears f times across the corpus.
    Leftover ids (count mod w*h) are discarded.
    """
    if w < 1 or h < 1:
        raise ValueError(f"grid shape must be positive, got w={w}, h={h}")
    if oversample_factor < 1:
        raise ValueError(f"oversample_factor must be >= 1, got {oversample_factor}")
    n = len(store)
    cell = w * h
    if cell > n:
        raise InsufficientDataError(f"grid needs {cell} images, store has {n}")

    rng = np.random.default_rng(seed)
    perm = np.concatenate([rng.permutation(n) for _ in range(oversample_factor)])
    n_examples = perm.shape[0] // cell
    grids = perm[: n_examples * cell].reshape(n_examples, h, w).astype(np.int64)

    labels = store.evaluation_labels()
    weights = _column_weights(w)
    sums = (labels[grids] * weights).sum(axis=(1, 2))

    examples = [Example(grid=g, sum=int(s)) for g, s in zip(grids, sums)]
    return Corpus(examples=examples, oversample_factor=oversample_factor)


def generate_synthetic(n_images, n_clusters, separation, dim, w, h, seed=0):
    """Isotropic-Gaussian stand-in data for oracle testing.

    Centroids are scaled so the minimum pairwise distance equals
    `separation`; unit noise around them. The true label of a point is the
    index of its generating Gaussian, so n_clusters=3 restricts labels to
    {0,1,2}. Returns (store, corpus) with the corpus built as build_corpus.
    """
    if n_clusters > 10:
        raise ValueError(f"n_clusters must be <= 10, got {n_clusters}")
    if separation <= 0:
        raise ValueError(f"separation must be positive, got {separation}")

    rng = np.random.default_rng(seed)
    centroids = rng.normal(size=(n_clusters, dim))
    if n_clusters > 1:
        diff = centroids[:, None, :] - centroids[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        min_dist = dist[~np.eye(n_clusters, dtype=bool)].min()
        centroids *= separation / min_dist

    labels = np.tile(np.arange(n_clusters), n_images // n_clusters + 1)[:n_images]
    labels = labels[rng.permutation(n_images)]
    points = centroids[labels] + rng.standard_normal((n_images, dim))

    store = ImageStore(points, labels, split="synthetic")
    corpus = build_corpus(store, w, h, oversample_factor=1, seed=seed)
    return store, corpus


def normalize_unit(store):
    """Min-max rescale all intensities into [0,1] (single global affine map,
    so cluster geometry is preserved). Used to make synthetic Gaussian
    stores pixel-like before the CNN."""
    lo, hi = store.images.min(), store.images.max()
    if hi <= lo:
        return store
    return ImageStore(
        (store.images - lo) / (hi - lo), store.evaluation_labels(), split=store.split
    )


def save_corpus(corpus, path):
    """Line-delimited records: `w h s id_11 ... id_hw` (row-major ids)."""
    with open(path, "w", encoding="utf-8") as f:
        for ex in corpus.examples:
            ids = " ".join(str(i) for i in ex.grid.ravel())
            f.write(f"{ex.w} {ex.h} {ex.sum} {ids}\n")


def load_corpus(path, oversample_factor=1):
    examples = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            w, h, s = int(parts[0]), int(parts[1]), int(parts[2])
            ids = np.array([int(p) for p in parts[3:]], dtype=np.int64)
            if ids.shape[0] != w * h:
                raise ConsistencyError(
                    f"line {lineno}: expected {w * h} ids, got {ids.shape[0]}"
                )
            examples.append(Example(grid=ids.reshape(h, w), sum=s))
    return Corpus(examples=examples, oversample_factor=oversample_factor)


def save_store(store, path, meta=None):
    m = dict(meta or {})
    m["split"] = store.split
    save_tensors(
        path,
        {"images": store.images, "true_labels": store.evaluation_labels()},
        meta=m,
    )


def load_store(path):
    meta, tensors = load_tensors(path)
    return ImageStore(
        tensors["images"], tensors["true_labels"], split=meta.get("split", "train")
    )
