"""Estimators built on the distribution of nearest-neighbour distances and their ratios."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, curve_fit, minimize_scalar
from scipy.special import gammaln

from ..errors import DegenerateError, NonConvergenceError, ParameterError
from ..geometry import NeighborIndex, PointCloud, neighbors, pairwise_distances
from ..report import EstimateReport, aggregate

XTOL = 1e-12  # root-finder tolerance on d, tighter than the 1e-9 contract


@dataclass(frozen=True)
class NeighborhoodSpec:
    mode: str = "knn"
    value: float = 10

    def __post_init__(self):
        if self.mode not in ("knn", "eps"):
            raise ParameterError(f"neighbourhood mode must be knn or eps, got {self.mode!r}")
        if self.mode == "knn" and (int(self.value) != self.value or self.value < 2):
            raise ParameterError("knn neighbourhoods need an integer k >= 2")
        if self.mode == "eps" and not self.value > 0:
            raise ParameterError("eps must be positive")


def _check_positive(d, what="neighbour distances"):
    if np.any(d <= 0):
        raise DegenerateError(f"zero {what} (duplicate points)")


def _mle_from_logs(logsum, count, corrected):
    norm = count - 1 if corrected else count
    with np.errstate(divide="ignore"):
        return np.where(logsum > 0, norm / np.where(logsum > 0, logsum, 1.0), np.inf)


def mle_local(index: NeighborIndex, p: int, spec: NeighborhoodSpec, corrected: bool = False,
              distances=None) -> float:
    """Local MLE at p. knn mode reads the index; eps mode needs a distance row or matrix."""
    if spec.mode == "knn":
        k = int(spec.value)
        if k > index.k:
            raise ParameterError(f"index holds {index.k} neighbours, need {k}")
        if corrected and k < 3:
            raise ParameterError("the corrected form needs k >= 3")
        r = index.dists[p, :k]
        _check_positive(r[:1])
        logsum = float(np.sum(np.log(r[-1] / r[:-1])))
        return float(_mle_from_logs(np.array(logsum), k - 1, corrected))
    eps = float(spec.value)
    row = np.asarray(distances)
    row = row[p] if row.ndim == 2 else row
    r = np.delete(row, p)
    r = r[r < eps]
    if r.size == 0:
        raise DegenerateError(f"no neighbours within eps of point {p}")
    _check_positive(r)
    return float(_mle_from_logs(np.array(np.log(eps / r).sum()), r.size, corrected))


def mle_locals(index: NeighborIndex, k: int, corrected: bool = False) -> np.ndarray:
    if corrected and k < 3:
        raise ParameterError("the corrected form needs k >= 3")
    if k < 2:
        raise ParameterError("MLE needs k >= 2")
    r = index.dists[:, :k]
    _check_positive(r[:, 0])
    logsum = np.log(r[:, -1:] / r[:, :-1]).sum(axis=1)
    return _mle_from_logs(logsum, k - 1, corrected)


def mle_eps_locals(cloud: PointCloud, eps: float, corrected: bool = False) -> np.ndarray:
    """Ball-form local MLE for every point; NaN where the ball holds no other point."""
    spec = NeighborhoodSpec("eps", eps)
    D = pairwise_distances(cloud)
    local = np.full(cloud.n, np.nan)
    for p in range(cloud.n):
        try:
            local[p] = mle_local(None, p, spec, corrected, D[p])
        except DegenerateError:
            pass
    return local


def mle_estimate(cloud: PointCloud, k: int = 10, agg: str = "mean", corrected: bool = False,
                 nbhd: str = "knn", eps: float | None = None) -> EstimateReport:
    diag = {}
    if nbhd == "knn":
        local = mle_locals(neighbors(cloud, k), k, corrected)
    elif nbhd == "eps":
        if eps is None:
            eps = float(np.median(neighbors(cloud, k).dists[:, k - 1]))
        local = mle_eps_locals(cloud, eps, corrected)
        diag["eps"] = eps
        diag["n_empty"] = int(np.isnan(local).sum())
        if np.isnan(local).all():
            raise DegenerateError("no point has a neighbour within eps")
    else:
        raise ParameterError(f"neighbourhood must be 'knn' or 'eps', got {nbhd!r}")
    local_ok = local[~np.isnan(local)]
    flags = []
    finite = np.isfinite(local_ok)
    if not finite.all() or local_ok.size < local.size:
        flags.append("degenerate")
    if not finite.any():
        raise DegenerateError("all neighbour distances are equal at every point")
    diag["n_infinite"] = int((~finite).sum())
    return EstimateReport(aggregate(local_ok[finite], agg), local, flags, diag)


# tight-locality estimator


def _skewed(W, Di2, Dj2, r, eps):
    """Skewed distance from x to v inside B(q, r) along the homothetic ball family.

    Balls B_t = x + (t/r)(B(q,r) - x); returns the t whose boundary contains v.
    W = |x - v|^2, Di2 = |x - q|^2, Dj2 = |v - q|^2. Written in rationalised form,
    it reduces to r W / (2 (q - x).(v - x)) when x lies on the sphere.
    """
    h = Di2 + W - Dj2
    den = h + np.sqrt(np.maximum(h * h + 4.0 * W * (r * r - Di2), 0.0))
    ok = (den > eps * r * r) & (W > 0)
    t = np.where(ok, 2.0 * r * W / np.where(ok, den, 1.0), 1.0)
    return t, ok


def tle_locals(cloud: PointCloud, k: int = 10, eps: float = 1e-6):
    if k < 2:
        raise ParameterError("TLE needs k >= 2")
    idx = neighbors(cloud, k)
    X = cloud.points
    local = np.full(cloud.n, np.nan)
    skipped = 0
    off = ~np.eye(k, dtype=bool)
    for q in range(cloud.n):
        V = X[idx.ids[q]] - X[q]
        r = idx.dists[q, k - 1]
        if r == 0:
            continue
        Di2 = np.einsum("ij,ij->i", V, V)
        G = V @ V.T
        A2 = np.maximum(Di2[:, None] + Di2[None, :] - 2 * G, 0.0)
        Z2 = np.maximum(2 * Di2[:, None] + 2 * Di2[None, :] - A2, 0.0)  # reflected point 2q - x
        total, used = 0.0, 0
        for W in (A2, Z2):
            t, ok = _skewed(W, Di2[:, None], Di2[None, :], r, eps)
            ok &= off
            skipped += int(np.count_nonzero(off & ~ok))
            total += float(np.log(t[ok] / r).sum())
            used += int(ok.sum())
        if used and total < 0:
            local[q] = -2.0 * k * (k - 1) / total
    return local, skipped


def tle_estimate(cloud: PointCloud, k: int = 10, agg: str = "mean", eps: float = 1e-6) -> EstimateReport:
    local, skipped = tle_locals(cloud, k, eps)
    ok = np.isfinite(local)
    if not ok.any():
        raise DegenerateError("no point had a usable TLE neighbourhood")
    flags = [] if ok.all() else ["degenerate"]
    return EstimateReport(aggregate(local[ok], agg), local, flags,
                          {"skipped_pairs": skipped, "excluded_points": int((~ok).sum())})


# two nearest neighbours


def twonn_from_ratios(mu, discard_fraction: float = 0.05):
    """Origin-constrained slope of -log(1 - F) against log mu."""
    if not 0 <= discard_fraction < 1:
        raise ParameterError("discard fraction must lie in [0, 1)")
    mu = np.sort(np.asarray(mu, dtype=float))
    n = mu.size
    F = np.arange(1, n + 1) / n
    # F = 1 at the last point makes -log(1-F) infinite, so it is always dropped
    keep = min(n - 1, int(np.floor(n * (1 - discard_fraction))))
    x = np.log(mu[:keep])
    y = -np.log1p(-F[:keep])
    sxx = float(x @ x)
    if sxx == 0:
        raise DegenerateError("all distance ratios equal 1")
    return float(x @ y) / sxx, keep


def twonn_estimate(cloud: PointCloud, discard_fraction: float = 0.05) -> EstimateReport:
    if cloud.n < 10:
        raise ParameterError("TwoNN needs at least 10 points")
    idx = neighbors(cloud, 2)
    _check_positive(idx.dists[:, 0])
    mu = idx.dists[:, 1] / idx.dists[:, 0]
    d, used = twonn_from_ratios(mu, discard_fraction)
    flags = ["ties_excluded"] if np.any(mu == 1) else []
    return EstimateReport(d, None, flags, {"n_used": used, "n_ties": int(np.sum(mu == 1))})


# generalised ratio estimator


def gride_loglik(d, mu, n1, n2):
    lm = np.log(mu)
    m = n2 - n1
    ll = mu.size * np.log(d) - ((n2 - 1) * d + 1) * lm.sum()
    if m > 1:
        ll += (m - 1) * np.log(np.expm1(d * lm)).sum()
    return float(ll - mu.size * (gammaln(m) + gammaln(n1) - gammaln(n2)))


def _gride_score(d, lm, n, n1, n2):
    m = n2 - n1
    s = n / d - (n2 - 1) * lm.sum()
    if m > 1:
        s += (m - 1) * np.sum(lm / -np.expm1(-d * lm))
    return s


def gride_from_ratios(mu, n1: int = 1, n2: int = 2, d_max: float = 150.0, route: str = "root"):
    """Maximum-likelihood dimension from ratios r_{n2}/r_{n1}. Returns (d, flags)."""
    mu = np.asarray(mu, dtype=float)
    if not 1 <= n1 < n2:
        raise ParameterError("need 1 <= n1 < n2")
    flags = []
    if np.any(mu <= 1):
        flags.append("ties_excluded")
        mu = mu[mu > 1]
    if mu.size == 0:
        raise DegenerateError("every ratio is a tie")
    lm = np.log(mu)
    n = mu.size
    if n2 == n1 + 1 and route == "root":
        return float(n / (n1 * lm.sum())), flags
    f = lambda d: _gride_score(d, lm, n, n1, n2)  # noqa: E731  strictly decreasing
    if route == "search":
        # value-based search only pins the maximum to about sqrt(machine eps), so it is
        # polished on the score inside a bracket around the located point
        res = minimize_scalar(lambda t: -gride_loglik(np.exp(t), mu, n1, n2),
                              bounds=(np.log(0.1), np.log(d_max)), method="bounded",
                              options={"xatol": 1e-10})
        d0 = float(np.exp(res.x))
        lo, hi = d0 / 1.01, d0 * 1.01
        if f(lo) > 0 > f(hi):
            return float(brentq(f, lo, hi, xtol=XTOL, maxiter=500)), flags
        return d0, flags + ["nonconvergent"]
    lo, hi = 0.1, d_max
    if f(lo) < 0:
        lo = 1e-3
        if f(lo) < 0:
            raise NonConvergenceError("likelihood decreasing on the whole search range")
    if f(hi) > 0:
        hi = 3 * d_max
        if f(hi) > 0:
            return float(hi), flags + ["nonconvergent"]
    return float(brentq(f, lo, hi, xtol=XTOL, maxiter=500)), flags


def gride_estimate(cloud: PointCloud, n1: int = 1, n2: int | None = None, multiplier: int = 2,
                   d_max: float = 150.0, route: str = "root") -> EstimateReport:
    n2 = n1 * multiplier if n2 is None else n2
    idx = neighbors(cloud, n2)
    _check_positive(idx.dists[:, n1 - 1])
    mu = idx.dists[:, n2 - 1] / idx.dists[:, n1 - 1]
    d, flags = gride_from_ratios(mu, n1, n2, d_max, route)
    return EstimateReport(d, None, flags, {"n1": n1, "n2": n2, "loglik": gride_loglik(d, mu[mu > 1], n1, n2)})


# minimum neighbour distance likelihood


def mind_loglik(d, rho, k):
    return float(rho.size * np.log(k * d) + (d - 1) * np.log(rho).sum()
                 + (k - 1) * np.log(-np.expm1(d * np.log(rho))).sum())


def mind_ratios(cloud: PointCloud, k: int) -> np.ndarray:
    idx = neighbors(cloud, k + 1)
    _check_positive(idx.dists[:, 0])
    return idx.dists[:, 0] / idx.dists[:, k]


def mind_mlk_from_ratios(rho, k: int, d_cap: float):
    """Root of the likelihood score on (0, d_cap]. Returns (d, flags)."""
    lr = np.log(rho)
    n = rho.size
    if np.any(lr >= 0):
        raise DegenerateError("ratios must lie strictly inside (0, 1)")

    def score(d):
        x = d * lr
        return n / d + lr.sum() - (k - 1) * np.sum(lr * np.exp(x) / -np.expm1(x))

    lo = 0.01
    if score(lo) < 0:
        lo = 1e-4
        if score(lo) < 0:
            raise NonConvergenceError("no sign change in the MiND bracket")
    if score(d_cap) > 0:
        return float(d_cap), ["throttled"]
    return float(brentq(score, lo, d_cap, xtol=XTOL, maxiter=500)), []


def mind_mli_from_ratios(rho, k: int, d_cap: int) -> int:
    lls = [mind_loglik(d, rho, k) for d in range(1, int(d_cap) + 1)]
    return int(np.argmax(lls)) + 1


def mind_ml(cloud: PointCloud, k: int = 1, version: str = "MLk", d_cap: int = 10) -> EstimateReport:
    if k < 1:
        raise ParameterError("k must be at least 1")
    rho = mind_ratios(cloud, k)
    if version == "MLk":
        d, flags = mind_mlk_from_ratios(rho, k, d_cap)
    elif version == "MLi":
        d, flags = mind_mli_from_ratios(rho, k, d_cap), []
    else:
        raise ParameterError(f"version must be MLk or MLi, got {version!r}")
    return EstimateReport(d, None, flags, {"loglik": mind_loglik(d, rho, k)})


# expected normalised distance


def idea_from_ratios(ratios) -> float:
    m = float(np.mean(ratios))
    if not 0 < m < 1:
        raise DegenerateError(f"mean normalised distance {m} outside (0, 1)")
    return m / (1 - m)


def _idea_ratios(X, k):
    c = PointCloud(X)
    idx = neighbors(c, k + 1)
    _check_positive(idx.dists[:, k])
    return idx.dists[:, :k] / idx.dists[:, k:k + 1]


def idea_estimate(cloud: PointCloud, k: int = 10) -> EstimateReport:
    d = idea_from_ratios(_idea_ratios(cloud.points, k))
    return EstimateReport(d, None, [], {"variant": "basic"})


def _idea_curve(n, a0, a1, a2, a3):
    return a0 - a1 / np.log2(n / a2 + a3)


def idea_jackknife(cloud: PointCloud, k: int = 10, p_grid=None, seed=0) -> EstimateReport:
    p_grid = np.linspace(0.1, 1.0, 10) if p_grid is None else np.asarray(p_grid, dtype=float)
    if np.any((p_grid <= 0) | (p_grid > 1)):
        raise ParameterError("p_grid must lie in (0, 1]")
    basic = idea_from_ratios(_idea_ratios(cloud.points, k))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    sizes, ests = [], []
    for p in p_grid:
        keep = rng.uniform(size=cloud.n) < p if p < 1 else np.ones(cloud.n, bool)
        kk = max(1, int(np.floor(k * np.sqrt(p))))
        if keep.sum() < kk + 2:
            continue
        try:
            ests.append(idea_from_ratios(_idea_ratios(cloud.points[keep], kk)))
            sizes.append(float(keep.sum()))
        except DegenerateError:
            continue
    diag = {"basic": basic, "sizes": sizes, "estimates": ests}
    if len(sizes) < 4:
        return EstimateReport(basic, None, ["fallback"], diag)
    sizes, ests = np.array(sizes), np.array(ests)
    try:
        popt, _ = curve_fit(_idea_curve, sizes, ests, p0=(ests[-1], 1.0, 1.0, 2.0),
                            bounds=([0, -np.inf, 1e-6, 1.0], [np.inf, np.inf, np.inf, np.inf]),
                            maxfev=20000)
    except (RuntimeError, ValueError):
        return EstimateReport(basic, None, ["fallback"], diag)
    diag["coefficients"] = [float(v) for v in popt]
    if popt[1] < 0:
        return EstimateReport(basic, None, [], diag)
    return EstimateReport(float(popt[0]), None, [], diag)


# mean-distance regression


def _log_g(k, d):
    return np.log(k) / d + gammaln(k) - gammaln(k + 1.0 / d)


def pettis_from_means(rbar, ks, max_iter: int = 100, tol: float = 1e-6):
    """Iterative regression of log r_k + log G(k, d) on log k. Returns (d, iterations, converged)."""
    ks = np.asarray(ks, dtype=float)
    lk = np.log(ks)
    lr = np.log(np.asarray(rbar, dtype=float))
    lg = np.zeros_like(lk)
    d = None
    for it in range(1, max_iter + 1):
        slope = np.polyfit(lk, lr + lg, 1)[0]
        if slope <= 0:
            raise DegenerateError("mean neighbour distance does not grow with k")
        new = 1.0 / slope
        if d is not None and abs(new - d) < tol:
            return float(new), it, True
        d = new
        lg = _log_g(ks, d)
    return float(d), max_iter, False


def pettis_estimate(cloud: PointCloud, k_min: int = 2, k_max: int = 10) -> EstimateReport:
    if k_max - k_min < 1:
        raise ParameterError("the k range needs at least two values")
    idx = neighbors(cloud, k_max)
    ks = np.arange(k_min, k_max + 1)
    rbar = idx.dists[:, k_min - 1:k_max].mean(axis=0)
    d, it, ok = pettis_from_means(rbar, ks)
    return EstimateReport(d, None, [] if ok else ["nonconvergent"], {"iterations": it})


def volume_growth_local(count1: int, count2: int, eps1: float, eps2: float) -> float:
    if not 0 < eps1 < eps2:
        raise ParameterError("need 0 < eps1 < eps2")
    if count1 <= 0:
        raise DegenerateError("the inner ball is empty")
    return float(np.log(count2 / count1) / np.log(eps2 / eps1))
