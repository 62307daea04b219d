"""Minimum spanning trees, kNN graph length and magnitude, with their growth-rate dimensions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import cg
from scipy.spatial import cKDTree

from .errors import ConditioningError, DegenerateError, NoLinearRegionError, ParameterError
from .geometry import PointCloud, neighbors, pairwise_distances
from .report import EstimateReport


@dataclass(frozen=True)
class WeightedTree:
    n: int
    edges: tuple  # (i, j, length) with i < j

    @property
    def lengths(self) -> np.ndarray:
        return np.array([e[2] for e in self.edges], dtype=float)


@dataclass(frozen=True)
class SubsampleSchedule:
    fractions: tuple = tuple(np.linspace(0.75, 1.0, 10))
    repeats: int = 10
    seed: int = 0

    def __post_init__(self):
        fr = np.asarray(self.fractions, dtype=float)
        if np.unique(fr).size < 2:
            raise ParameterError("a schedule needs at least two distinct fractions")
        if np.any(np.diff(fr) <= 0) or fr[0] <= 0 or fr[-1] > 1:
            raise ParameterError("fractions must increase within (0, 1]")
        if self.repeats < 1:
            raise ParameterError("repeats must be positive")


@dataclass
class MagnitudeCurve:
    t_grid: np.ndarray
    values: np.ndarray
    extra: dict = field(default_factory=dict)


def _check_distances(D):
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ParameterError("need a square distance matrix")
    if not np.all(np.isfinite(D)):
        raise ParameterError("distances must be finite")
    return D


def minimum_spanning_tree(distances) -> WeightedTree:
    """Prim's algorithm under the total order (length, min(i,j), max(i,j))."""
    D = _check_distances(distances)
    n = D.shape[0]
    if n < 2:
        raise ParameterError("need at least two vertices")
    idx = np.arange(n)
    intree = np.zeros(n, dtype=bool)
    intree[0] = True
    best = D[0].astype(float).copy()
    par = np.zeros(n, dtype=np.intp)
    best[0] = np.inf
    edges = []
    for _ in range(n - 1):
        m = best.min()
        cand = np.nonzero(best == m)[0]
        if cand.size > 1:
            lo = np.minimum(par[cand], cand)
            hi = np.maximum(par[cand], cand)
            j = int(cand[np.lexsort((hi, lo))[0]])
        else:
            j = int(cand[0])
        i = int(par[j])
        edges.append((min(i, j), max(i, j), float(D[i, j])))
        intree[j] = True
        best[j] = np.inf
        row = D[j]
        key_new = np.minimum(idx, j) * n + np.maximum(idx, j)
        key_old = np.minimum(idx, par) * n + np.maximum(idx, par)
        better = ~intree & ((row < best) | ((row == best) & (key_new < key_old)))
        best[better] = row[better]
        par[better] = j
    return WeightedTree(n, tuple(sorted(edges)))


def mst_lengths(D: np.ndarray) -> np.ndarray:
    """Edge lengths of a minimum spanning tree (the multiset does not depend on tie-breaks)."""
    n = D.shape[0]
    intree = np.zeros(n, dtype=bool)
    intree[0] = True
    best = D[0].copy()
    best[0] = np.inf
    out = np.empty(n - 1)
    for s in range(n - 1):
        j = int(np.argmin(best))
        out[s] = best[j]
        intree[j] = True
        best[j] = np.inf
        np.minimum(best, np.where(intree, np.inf, D[j]), out=best)
    return out


def alpha_weight(tree, alpha: float) -> float:
    if alpha <= 0:
        raise ParameterError("alpha must be positive")
    lengths = tree.lengths if isinstance(tree, WeightedTree) else np.asarray(tree, dtype=float)
    return float(np.sum(lengths**alpha))


def slope_to_dimension(log_n, log_e, alpha: float):
    """OLS slope m of log E against log n, then alpha / (1 - m), with hazard diagnostics."""
    log_n, log_e = np.asarray(log_n, float), np.asarray(log_e, float)
    A = np.column_stack([log_n, np.ones_like(log_n)])
    coef, res, *_ = np.linalg.lstsq(A, log_e, rcond=None)
    m = float(coef[0])
    resid = float(np.sum((A @ coef - log_e) ** 2))
    flags = []
    if abs(1 - m) < alpha / 100 or m >= 1:
        flags.append("slope_hazard")
    with np.errstate(divide="ignore"):
        d = alpha / (1 - m) if m != 1 else np.inf
    return float(d), m, resid, flags


def _schedule_sizes(n, schedule):
    sizes = [int(round(f * n)) for f in schedule.fractions]
    if min(sizes) < 16:
        raise ParameterError("the smallest subsample must hold at least 16 points")
    return sizes


def _subsample_curve(n, schedule, stat):
    rng = np.random.default_rng(np.random.SeedSequence(schedule.seed))
    log_n, log_e = [], []
    for m in _schedule_sizes(n, schedule):
        vals = []
        reps = 1 if m == n else schedule.repeats
        for _ in range(reps):
            sel = np.arange(n) if m == n else np.sort(rng.choice(n, m, replace=False))
            vals.append(np.log(stat(sel)))
        log_n.append(np.log(m))
        log_e.append(float(np.mean(vals)))
    return np.array(log_n), np.array(log_e)


def ph0_dimension(cloud: PointCloud, alpha: float = 0.5, schedule: SubsampleSchedule = SubsampleSchedule()) -> EstimateReport:
    if alpha <= 0:
        raise ParameterError("alpha must be positive")
    D = pairwise_distances(cloud)
    log_n, log_e = _subsample_curve(cloud.n, schedule,
                                    lambda sel: float(np.sum(mst_lengths(D[np.ix_(sel, sel)]) ** alpha)))
    d, m, resid, flags = slope_to_dimension(log_n, log_e, alpha)
    return EstimateReport(d, None, flags, {"slope": m, "residual": resid, "log_n": log_n, "log_E": log_e})


def knn_total_length(cloud: PointCloud, k: int = 1) -> float:
    return float(neighbors(cloud, k).dists.sum())


def _tree_length(X, k):
    # exact kd-tree search; only the lengths are used, so ties do not matter
    d, _ = cKDTree(X).query(X, k + 1)
    return float(d[:, 1:].sum())


def knn_dimension(cloud: PointCloud, k: int = 1, schedule: SubsampleSchedule = SubsampleSchedule()) -> EstimateReport:
    if k < 1 or k >= cloud.n:
        raise ParameterError("need 1 <= k < N")
    X = cloud.points
    log_n, log_e = _subsample_curve(cloud.n, schedule, lambda sel: _tree_length(X[sel], k))
    d, m, resid, flags = slope_to_dimension(log_n, log_e, 1.0)
    return EstimateReport(d, None, flags, {"slope": m, "residual": resid, "log_n": log_n, "log_L": log_e})


# magnitude

# exp(-40) is far below double precision relative to the unit diagonal; zeroing those
# entries avoids slow subnormal arithmetic in the factorisation
_EXP_CUT = 40.0


# above this share of nonzero entries the dense factorisation is cheaper than conjugate gradients
_SPARSE_DENSITY = 0.1


def magnitude(distances, t: float) -> float:
    D = _check_distances(distances)
    if t <= 0:
        raise ParameterError("t must be positive")
    n = D.shape[0]
    if n == 1:
        return 1.0
    off = ~np.eye(n, dtype=bool)
    if np.any(D[off] == 0):
        raise ConditioningError("duplicate points make the similarity matrix singular")
    tD = t * D
    keep = tD <= _EXP_CUT
    ones = np.ones(n)
    if keep.mean() <= _SPARSE_DENSITY:
        # large t: Z is a sparse, well-conditioned perturbation of the identity
        i, j = np.nonzero(keep)
        Z = csr_matrix((np.exp(-tD[i, j]), (i, j)), shape=(n, n))
        w, info = cg(Z, ones, rtol=1e-13, atol=0.0, maxiter=10 * n)
        if info == 0:
            return float(w.sum())
    Z = np.exp(-tD)
    Z[~keep] = 0.0
    try:
        c, low = cho_factor(Z, lower=True, overwrite_a=True, check_finite=False)
    except LinAlgError as exc:
        raise ConditioningError(f"similarity matrix not positive definite at t={t}: {exc}") from exc
    piv = np.diag(c) ** 2
    if piv.min() < 1e-12 * piv.max():
        raise ConditioningError(f"smallest pivot {piv.min():.3e} below the 1e-12 relative floor at t={t}")
    return float(cho_solve((c, low), ones, check_finite=False).sum())


def default_t_grid(cloud: PointCloud, factors=(0.05, 50.0), steps: int = 60) -> np.ndarray:
    r1 = float(np.median(neighbors(cloud, 1).dists[:, 0]))
    if r1 <= 0:
        raise DegenerateError("median nearest-neighbour distance is zero")
    return np.logspace(np.log10(factors[0]), np.log10(factors[1]), steps) / r1


def magnitude_curve(cloud: PointCloud, t_grid) -> MagnitudeCurve:
    D = pairwise_distances(cloud)
    return MagnitudeCurve(np.asarray(t_grid, float), np.array([magnitude(D, t) for t in t_grid]))


def linear_region_slope(log_t, log_m, threshold: float = 0.3, min_run: int = 5):
    """Slope over the flat-curvature stretch around the steepest point of the curve.

    A point is flat when its discrete second derivative is below threshold times the
    largest one on the curve. Returns (slope, start, stop) with stop inclusive.
    """
    lt, lm = np.asarray(log_t, float), np.asarray(log_m, float)
    if lt.size < 20:
        raise ParameterError("need at least 20 grid points")
    h = np.diff(lt)
    if not np.allclose(h, h[0], rtol=1e-9):
        raise ParameterError("t grid must be log-spaced")
    h = h[0]
    sd = np.full(lt.size, np.nan)
    sd[1:-1] = (lm[2:] - 2 * lm[1:-1] + lm[:-2]) / h**2
    scale = np.nanmax(np.abs(sd))
    flat = np.zeros(lt.size, dtype=bool)
    flat[1:-1] = (np.abs(sd[1:-1]) <= threshold * scale) | (np.abs(sd[1:-1]) < 1e-9)
    slope = np.gradient(lm, lt)
    # the saturation bend is the most negative curvature; the steepest point precedes it
    bend = int(np.nanargmin(sd))
    # endpoints carry no second difference, so a peak there is read from its inner neighbour
    peak = min(max(int(np.argmax(slope[: bend + 1])), 1), lt.size - 2)
    if not flat[peak]:
        raise NoLinearRegionError("the steepest point of the curve is not in a flat-curvature stretch")
    a = b = peak
    while a - 1 >= 1 and flat[a - 1]:
        a -= 1
    while b + 1 < lt.size - 1 and flat[b + 1]:
        b += 1
    if b - a + 1 < min_run:
        raise NoLinearRegionError(f"flat run of length {b - a + 1} is shorter than {min_run}")
    return float(np.polyfit(lt[a:b + 1], lm[a:b + 1], 1)[0]), a, b


def magnitude_dimension(cloud: PointCloud, t_grid=None, curvature_threshold: float = 0.3,
                        min_run: int = 5, t_factors=(0.05, 50.0), t_steps: int = 60) -> EstimateReport:
    if t_grid is None:
        t_grid = default_t_grid(cloud, t_factors, t_steps)
    curve = magnitude_curve(cloud, t_grid)
    lt, lm = np.log(curve.t_grid), np.log(curve.values)
    slope, a, b = linear_region_slope(lt, lm, curvature_threshold, min_run)
    return EstimateReport(slope, None, [], {
        "run_start_t": float(curve.t_grid[a]), "run_stop_t": float(curve.t_grid[b]), "run_length": b - a + 1,
        "saturation": float(curve.values[-1] / cloud.n), "t": curve.t_grid, "magnitude": curve.values,
    })
