import gzip
import struct

import numpy as np
import pytest

from sumlearn.dataset import Corpus, Example, ImageStore
from sumlearn.clustering import ClusterModel


def write_idx_pair(tmp_path, images, labels, gz=False, image_magic=2051, label_magic=2049):
    """Write a (N, rows, cols) uint8 image array and labels as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img_bytes = struct.pack(">IIII", image_magic, n, rows, cols) + images.tobytes()
    lbl_bytes = struct.pack(">II", label_magic, labels.shape[0]) + labels.tobytes()
    suffix = ".gz" if gz else ""
    img_path = tmp_path / f"images-idx3-ubyte{suffix}"
    lbl_path = tmp_path / f"labels-idx1-ubyte{suffix}"
    opener = gzip.open if gz else open
    with opener(img_path, "wb") as f:
        f.write(img_bytes)
    with opener(lbl_path, "wb") as f:
        f.write(lbl_bytes)
    return img_path, lbl_path


def store_with_labels(labels, dim=4, seed=0):
    """Store whose images are irrelevant but labels are fixed."""
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    return ImageStore(rng.random((labels.shape[0], dim)), labels)


def identity_model(labels, k=None, distance=None):
    """ClusterModel whose cluster index IS the given per-image label."""
    labels = np.asarray(labels, dtype=np.int64)
    k = k if k is not None else int(labels.max()) + 1
    if distance is None:
        distance = np.zeros(labels.shape[0])
    centroids = np.zeros((k, 2))
    return ClusterModel(
        k=k,
        centroids=centroids,
        assignment=labels.copy(),
        distance=np.asarray(distance, dtype=np.float64),
    )


def corpus_from_grids(grids):
    """Corpus from explicit (grid, sum) pairs or (grid_ids, labels) sums."""
    examples = [Example(grid=np.asarray(g, dtype=np.int64), sum=int(s)) for g, s in grids]
    return Corpus(examples=examples)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
