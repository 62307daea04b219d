"""Point clouds, exact nearest neighbours and kNN graphs.

Everything here is brute force by default. Neighbour ties go to the smaller
point index so repeated runs give bit-identical tables.
"""
from __future__ import annotations

import csv
import weakref
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateError, ParameterError

# rows of the distance block processed at once, keeps memory near 64MB
_BLOCK_ELEMS = 8_000_000


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ParameterError(f"points must be an N x D array with N, D >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ParameterError("points contain non-finite coordinates")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    def with_points(self, points, **meta) -> "PointCloud":
        return PointCloud(points, {**self.meta, **meta})


@dataclass(frozen=True)
class NeighborIndex:
    k: int
    ids: np.ndarray
    dists: np.ndarray
    n_duplicates: int = 0

    def r(self, p: int, rank: int) -> float:
        """Distance from p to its rank-th neighbour, ranks start at 1."""
        return float(self.dists[p, rank - 1])


@dataclass(frozen=True)
class DirectedKnnGraph:
    n: int
    k: int
    out_edges: np.ndarray  # n x k neighbour ids

    def edges(self):
        for i in range(self.n):
            for j in self.out_edges[i]:
                yield i, int(j)


def _block_rows(n: int) -> int:
    return max(1, _BLOCK_ELEMS // max(n, 1))


def _dist_block(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # cdist works on direct differences, so d(a,b) and d(b,a) are bit-identical
    return cdist(A, B)


def distances_from(cloud: PointCloud, x) -> np.ndarray:
    """Euclidean distances from one location x to every point of the cloud."""
    return cdist(np.asarray(x, dtype=float)[None, :], cloud.points)[0]


def pairwise_distances(cloud: PointCloud) -> np.ndarray:
    X = cloud.points
    n = X.shape[0]
    D = np.zeros((n, n))
    step = _block_rows(n)
    for s in range(0, n, step):
        e = min(n, s + step)
        D[s:e, s:] = _dist_block(X[s:e], X[s:])
    # mirror the upper triangle so symmetry is exact
    iu = np.triu_indices(n, 1)
    D[iu[1], iu[0]] = D[iu]
    np.fill_diagonal(D, 0.0)
    return D


def _select_k(D: np.ndarray, k: int):
    """k smallest entries per row ordered by (distance, column)."""
    m = D.shape[0]
    kth = np.partition(D, k - 1, axis=1)[:, k - 1]
    cand = D <= kth[:, None]
    counts = cand.sum(axis=1)
    ids = np.empty((m, k), dtype=np.intp)
    dists = np.empty((m, k))
    easy = counts == k
    if easy.any():
        rows = np.nonzero(easy)[0]
        cols = np.nonzero(cand[rows])[1].reshape(len(rows), k)  # ascending column order
        vals = np.take_along_axis(D[rows], cols, axis=1)
        order = np.argsort(vals, axis=1, kind="stable")
        ids[rows] = np.take_along_axis(cols, order, axis=1)
        dists[rows] = np.take_along_axis(vals, order, axis=1)
    for r in np.nonzero(~easy)[0]:
        order = np.argsort(D[r], kind="stable")[:k]
        ids[r] = order
        dists[r] = D[r, order]
    return ids, dists


def knn_query(cloud: PointCloud, k: int) -> NeighborIndex:
    n = cloud.n
    k = int(k)
    if k < 1:
        raise ParameterError(f"k must be positive, got {k}")
    if k >= n:
        raise ParameterError(f"k={k} needs at least k+1 points, cloud has {n}")
    X = cloud.points
    ids = np.empty((n, k), dtype=np.intp)
    dists = np.empty((n, k))
    step = _block_rows(n)
    for s in range(0, n, step):
        e = min(n, s + step)
        D = _dist_block(X[s:e], X)
        D[np.arange(e - s), np.arange(s, e)] = np.inf
        ids[s:e], dists[s:e] = _select_k(D, k)
    n_dup = int(np.count_nonzero(dists[:, 0] == 0.0))
    return NeighborIndex(k, ids, dists, n_dup)


_INDEX_CACHE: "weakref.WeakKeyDictionary[PointCloud, NeighborIndex]" = weakref.WeakKeyDictionary()


def neighbors(cloud: PointCloud, k: int) -> NeighborIndex:
    """knn_query with a per-cloud cache; a smaller k reuses the stored prefix."""
    cached = _INDEX_CACHE.get(cloud)
    if cached is not None and cached.k >= k:
        if cached.k == k:
            return cached
        return NeighborIndex(k, cached.ids[:, :k], cached.dists[:, :k],
                             int(np.count_nonzero(cached.dists[:, 0] == 0.0)))
    idx = knn_query(cloud, k)
    _INDEX_CACHE[cloud] = idx
    return idx


def knn_of_point(cloud: PointCloud, p: int, k: int):
    """Neighbours of a single point, same ordering rules as knn_query."""
    if k >= cloud.n:
        raise ParameterError(f"k={k} needs at least k+1 points, cloud has {cloud.n}")
    d = distances_from(cloud, cloud.points[p])
    d[p] = np.inf
    ids, dists = _select_k(d[None, :], k)
    return ids[0], dists[0]


def eps_ball_count(cloud: PointCloud, distances, p: int, eps: float) -> int:
    """Points strictly closer than eps to p, p itself excluded.

    distances may be a full distance matrix, a single row, or None.
    """
    if eps <= 0:
        raise ParameterError("eps must be positive")
    if distances is None:
        row = distances_from(cloud, cloud.points[p])
    else:
        distances = np.asarray(distances)
        row = distances[p] if distances.ndim == 2 else distances
    mask = row < eps
    mask[p] = False
    return int(np.count_nonzero(mask))


def distance_ratio(index: NeighborIndex, p: int, i: int, j: int) -> float:
    if not (1 <= i <= index.k and 1 <= j <= index.k):
        raise ParameterError(f"ranks must lie in 1..{index.k}")
    rj = index.dists[p, j - 1]
    if rj == 0.0:
        raise DegenerateError(f"r_{j}({p}) is zero (duplicate point)")
    return float(index.dists[p, i - 1] / rj)


def knn_graph(cloud: PointCloud, k: int, index: NeighborIndex | None = None) -> DirectedKnnGraph:
    if index is None or index.k < k:
        index = knn_query(cloud, k)
    return DirectedKnnGraph(cloud.n, k, index.ids[:, :k].copy())


def graph_ball(graph: DirectedKnnGraph, i: int, r: int) -> set:
    """Vertices within r directed hops of i; r=1 gives i and its k out-neighbours."""
    if r < 0:
        raise ParameterError("r must be nonnegative")
    if r == 0:
        return set()
    seen = {i}
    frontier = deque([(i, 0)])
    while frontier:
        v, h = frontier.popleft()
        if h == r:
            continue
        for w in graph.out_edges[v]:
            w = int(w)
            if w not in seen:
                seen.add(w)
                frontier.append((w, h + 1))
    return seen


def save_csv(cloud: PointCloud, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(cloud.ambient_dim)])
        for row in cloud.points:
            w.writerow([repr(float(v)) for v in row])


def load_csv(path, **meta) -> PointCloud:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header != [f"x{j}" for j in range(len(header))]:
        raise ParameterError(f"{path}: header must be x0..x{{D-1}}, got {header[:4]}")
    pts = np.array([[float(v) for v in r] for r in body if r], dtype=float)
    return PointCloud(pts.reshape(-1, len(header)), meta)
