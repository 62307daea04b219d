"""Estimators that count points in balls: correlation integral, packing, doubling, WODCap."""
from __future__ import annotations

import numpy as np
from scipy.optimize import brentq
from scipy.special import betainc

from ..errors import DegenerateError, ParameterError
from ..geometry import PointCloud, _block_rows, _dist_block, knn_graph, neighbors
from ..report import EstimateReport, aggregate


def median_knn_radius(cloud: PointCloud, k: int) -> float:
    return float(np.median(neighbors(cloud, k).dists[:, k - 1]))


def pair_counts(cloud: PointCloud, radii):
    """Unordered pairs i < j with distance strictly below each radius, plus the diameter."""
    radii = np.asarray(radii, dtype=float)
    X = cloud.points
    n = cloud.n
    counts = np.zeros(radii.size, dtype=np.int64)
    diam = 0.0
    step = _block_rows(n)
    for s in range(0, n, step):
        e = min(n, s + step)
        D = _dist_block(X[s:e], X)
        # keep each unordered pair once: columns strictly right of the row
        cols = np.arange(n)[None, :] > np.arange(s, e)[:, None]
        vals = D[cols]
        if vals.size:
            diam = max(diam, float(vals.max()))
            counts += np.array([np.count_nonzero(vals < r) for r in radii])
    return counts, diam


def corrint_estimate(cloud: PointCloud, k1: int = 2, k2: int = 12, r1: float | None = None,
                     r2: float | None = None) -> EstimateReport:
    if r1 is None or r2 is None:
        r1, r2 = median_knn_radius(cloud, k1), median_knn_radius(cloud, k2)
    if not 0 < r1 < r2:
        raise ParameterError(f"need 0 < r1 < r2, got {r1}, {r2}")
    (c1, c2), diam = pair_counts(cloud, [r1, r2])
    if c1 == 0:
        raise DegenerateError("no pairs closer than r1")
    d = (np.log(c2) - np.log(c1)) / (np.log(r2) - np.log(r1))
    bound = 2 * np.log(cloud.n) / (np.log(diam) - np.log(r1)) if diam > r1 else np.inf
    return EstimateReport(d, None, [], {"r1": r1, "r2": r2, "count1": int(c1), "count2": int(c2),
                                        "max_reliable_dim": float(bound)})


def greedy_packing(cloud: PointCloud, r: float) -> np.ndarray:
    """Indices kept by a single pass in index order, all pairwise distances >= r."""
    X = cloud.points
    chosen = [0]
    for i in range(1, cloud.n):
        # same distance routine as the neighbour search, so a radius read off a
        # neighbour distance compares consistently with that pair
        if np.all(_dist_block(X[i:i + 1], X[chosen])[0] >= r):
            chosen.append(i)
    return np.array(chosen)


def packing_dimension(cloud: PointCloud, k1: int = 2, k2: int = 12, r1: float | None = None,
                      r2: float | None = None) -> EstimateReport:
    if r1 is None or r2 is None:
        r1, r2 = median_knn_radius(cloud, k1), median_knn_radius(cloud, k2)
    if not 0 < r1 < r2:
        raise ParameterError(f"need 0 < r1 < r2, got {r1}, {r2}")
    m1, m2 = greedy_packing(cloud, r1).size, greedy_packing(cloud, r2).size
    # M shrinks as r grows, so the raw slope is negative
    d = abs((np.log(m2) - np.log(m1)) / (np.log(r2) - np.log(r1)))
    flags = ["zero_slope"] if m1 == m2 else []
    return EstimateReport(d, None, flags, {"r1": r1, "r2": r2, "M1": int(m1), "M2": int(m2)})


def doubling_locals(cloud: PointCloud, k: int = 10) -> np.ndarray:
    g = knn_graph(cloud, k, neighbors(cloud, k))
    out = g.out_edges
    local = np.empty(cloud.n)
    for i in range(cloud.n):
        first = out[i]
        two = np.unique(np.concatenate([[i], first, out[first].ravel()]))
        local[i] = np.log2(two.size / (k + 1))
    return local


def doubling_bound(k: int) -> float:
    return float(np.log2(k + 1.0 / (k + 1)))


def doubling_dp(cloud: PointCloud, k: int = 10, subset: int | None = None, seed=0) -> EstimateReport:
    if k < 1:
        raise ParameterError("k must be at least 1")
    local = doubling_locals(cloud, k)
    use = local
    if subset is not None and subset < cloud.n:
        pick = np.random.default_rng(np.random.SeedSequence(seed)).choice(cloud.n, subset, replace=False)
        use = local[pick]
    est = float(use.mean())
    flags = ["throttled"] if est >= doubling_bound(k) - 1e-12 else []
    return EstimateReport(est, local, flags, {"bound": doubling_bound(k)})


# caps of two unit balls whose centres are one radius apart


def cap_fraction(d):
    """Share of a unit d-ball lying inside a second unit ball centred at distance 1."""
    d = np.asarray(d, dtype=float)
    return betainc((d + 1) / 2, 0.5, 0.75)


def cap_inverse(target: float, tol: float = 1e-12):
    """Dimension whose cap fraction equals target. Returns (d, flags)."""
    top = float(cap_fraction(1e-12))
    if target >= top:
        return 0.0, ["degenerate"]
    if target <= 0:
        raise DegenerateError("empty lens fraction")
    lo, hi = 1e-12, 2.0
    while cap_fraction(hi) > target:
        hi *= 2
        if hi > 1e7:
            raise DegenerateError("lens fraction too small to invert")
    d = brentq(lambda x: float(cap_fraction(x)) - target, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps,
               maxiter=1000)
    return float(d), []


def wodcap_fractions(cloud: PointCloud, k: int = 10, variant: str = "metric") -> np.ndarray:
    idx = neighbors(cloud, k)
    X = cloud.points
    frac = np.empty(cloud.n)
    for i in range(cloud.n):
        j = idx.ids[i, k - 1]
        ball_i = np.concatenate([[i], idx.ids[i]])
        if variant == "metric":
            R = idx.dists[i, k - 1]
            others = idx.ids[i, :k - 1]
            dj = _dist_block(X[j:j + 1], X[others])[0]
            lens = 2 + int(np.count_nonzero(dj <= R))  # i and j are always in the lens
        elif variant == "graph":
            ball_j = np.concatenate([[j], idx.ids[j]])
            lens = np.union1d(np.intersect1d(ball_i, ball_j), [i, j]).size
        else:
            raise ParameterError(f"variant must be metric or graph, got {variant!r}")
        frac[i] = lens / (k + 1)
    return frac


def wodcap_bound(k: int) -> float:
    return cap_inverse(2.0 / (k + 1))[0]


def wodcap_estimate(cloud: PointCloud, k: int = 10, agg: str = "mean", variant: str = "metric") -> EstimateReport:
    if k < 2:
        raise ParameterError("WODCap needs k >= 2")
    frac = wodcap_fractions(cloud, k, variant)
    target = aggregate(frac, agg)
    d, flags = cap_inverse(target)
    bound = wodcap_bound(k)
    if d >= bound - 1e-9:
        flags.append("throttled")
    return EstimateReport(d, frac, flags, {"fraction": target, "residual": abs(float(cap_fraction(d)) - target)
                                           if d > 0 else 0.0, "bound": bound})
