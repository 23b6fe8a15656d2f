"""k-means with k-means++ seeding, purity, and centroid-distance queries.

The fitted model also answers the distance-quantile queries the label
inference step uses for its radius schedule.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError
from .tensorfile import load_tensors, save_tensors


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray  # (k, d)
    assignment: np.ndarray  # (N,) int64, nearest centroid (ties -> lowest index)
    distance: np.ndarray  # (N,) Euclidean distance to own centroid
    inertia_history: list = field(default_factory=list)
    seed: int = 0

    def __len__(self):
        return self.assignment.shape[0]

    def members(self, cluster):
        return np.flatnonzero(self.assignment == cluster)

    def save(self, path, meta=None):
        m = dict(meta or {})
        m.update(k=self.k, seed=self.seed, inertia_history=self.inertia_history)
        save_tensors(
            path,
            {
                "centroids": self.centroids,
                "assignment": self.assignment,
                "distance": self.distance,
            },
            meta=m,
        )

    @classmethod
    def load(cls, path):
        meta, tensors = load_tensors(path)
        return cls(
            k=meta["k"],
            centroids=tensors["centroids"],
            assignment=tensors["assignment"],
            distance=tensors["distance"],
            inertia_history=list(meta.get("inertia_history", [])),
            seed=meta.get("seed", 0),
        )


def _sq_dists(points, centroids):
    # ||x||^2 - 2 x.c + ||c||^2, clipped against tiny negatives
    d2 = (
        (points**2).sum(axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + (centroids**2).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _plus_plus_init(points, k, rng):
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(n)]
    closest = _sq_dists(points, centroids[:1]).ravel()
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))  # all points coincide with a centroid
        else:
            idx = int(rng.choice(n, p=closest / total))
        centroids[i] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centroids[i : i + 1]).ravel())
    return centroids


def kmeans(emb, k, seed=0, max_iter=300, tol=1e-4, n_init=10):
    """Best of n_init restarts of Lloyd iterations from k-means++ seeds.

    Restarts draw from one seeded generator, so the whole fit is
    deterministic in (emb, k, seed). The restart with the lowest final
    within-cluster sum of squares wins (ties keep the earliest).
    """
    points = np.asarray(emb, dtype=np.float64)
    n = points.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds number of points {n}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    if n_init < 1:
        raise ValueError(f"n_init must be >= 1, got {n_init}")

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        model = _kmeans_single(points, k, rng, max_iter, tol)
        if best is None or model.inertia_history[-1] < best.inertia_history[-1]:
            best = model
    best.seed = seed
    return best


def _kmeans_single(points, k, rng, max_iter, tol):
    """One k-means++ seeding plus Lloyd run.

    Stops when the largest centroid shift drops below tol. Empty clusters
    are reseeded to the point currently farthest from its own centroid.
    """
    n = points.shape[0]
    centroids = _plus_plus_init(points, k, rng)
    inertia_history = []
    assign = None

    for _ in range(max_iter):
        d2 = _sq_dists(points, centroids)
        assign = d2.argmin(axis=1)
        own = d2[np.arange(n), assign]

        for c in range(k):
            if not (assign == c).any():
                far = int(own.argmax())
                centroids[c] = points[far]
                assign[far] = c
                own[far] = 0.0
        inertia_history.append(float(own.sum()))

        new_centroids = centroids.copy()
        for c in range(k):
            members = assign == c
            if members.any():
                new_centroids[c] = points[members].mean(axis=0)
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        if shift < tol:
            break

    # final assignment against the final centroids so the nearest-centroid
    # invariant holds exactly
    d2 = _sq_dists(points, centroids)
    assign = d2.argmin(axis=1).astype(np.int64)
    distance = np.sqrt(d2[np.arange(n), assign])
    inertia_history.append(float(d2[np.arange(n), assign].sum()))

    return ClusterModel(
        k=k,
        centroids=centroids,
        assignment=assign,
        distance=distance,
        inertia_history=inertia_history,
    )


def purity(model, true_labels):
    """Average over clusters of the dominant class count, divided by N."""
    labels = np.asarray(true_labels)
    if labels.shape[0] != len(model):
        raise ConsistencyError(
            f"{labels.shape[0]} labels for {len(model)} clustered images"
        )
    total = 0
    for c in range(model.k):
        members = labels[model.assignment == c]
        if members.size:
            total += int(np.bincount(members).max())
    return total / labels.shape[0]


def distance_percentiles(model, cluster, q):
    """q-quantile (linear interpolation) of member distances to centroid."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be in [0,1], got {q}")
    members = model.members(cluster)
    if members.size == 0:
        raise ValueError(f"cluster {cluster} is empty")
    return float(np.quantile(model.distance[members], q))


def save_assignment(path, assignment):
    """Flat little-endian int64 file."""
    np.asarray(assignment, dtype="<i8").tofile(path)


def load_assignment(path):
    return np.fromfile(path, dtype="<i8")
