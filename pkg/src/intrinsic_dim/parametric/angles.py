"""Estimators that use angles between neighbour directions: DANCo and ESS."""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln, i0e, i1e

from ..datasets import sphere_points
from ..errors import DegenerateError, ParameterError
from ..geometry import PointCloud, neighbors
from ..report import EstimateReport, aggregate
from .distances import _check_positive, mind_loglik, mind_mlk_from_ratios

# von Mises fits


def _bessel_ratio(kappa):
    return i1e(kappa) / i0e(kappa)


def vm_kappa(rbar):
    """Solve I1(k)/I0(k) = rbar for k, elementwise, by bisection on log k."""
    rbar = np.clip(np.asarray(rbar, dtype=float), 0.0, 1 - 1e-12)
    lo = np.full(rbar.shape, -30.0)
    hi = np.full(rbar.shape, 30.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        big = _bessel_ratio(np.exp(mid)) > rbar
        hi = np.where(big, mid, hi)
        lo = np.where(big, lo, mid)
    k = np.exp(0.5 * (lo + hi))
    return np.where(rbar == 0, 0.0, k)


def vm_kl(mu1, k1, mu2, k2) -> float:
    """KL divergence between von Mises (mu1, k1) and (mu2, k2)."""
    log_ratio = (np.log(i0e(k2)) + k2) - (np.log(i0e(k1)) + k1)
    return float(log_ratio + _bessel_ratio(k1) * (k1 - k2 * np.cos(mu1 - mu2)))


def neighbour_angle_stats(X: np.ndarray, ids: np.ndarray):
    """Per point von Mises location and concentration of pairwise neighbour angles."""
    n, k = ids.shape
    iu = np.triu_indices(k, 1)
    nu = np.empty(n)
    tau = np.empty(n)
    step = max(1, 2_000_000 // (k * max(k, X.shape[1])))
    for s in range(0, n, step):
        e = min(n, s + step)
        V = X[ids[s:e]] - X[s:e, None, :]
        V /= np.linalg.norm(V, axis=2, keepdims=True)
        cos = np.clip(np.einsum("bij,bkj->bik", V, V)[:, iu[0], iu[1]], -1.0, 1.0)
        theta = np.arccos(cos)
        C, S = np.cos(theta).mean(axis=1), np.sin(theta).mean(axis=1)
        nu[s:e] = np.arctan2(S, C)
        tau[s:e] = vm_kappa(np.hypot(C, S))
    return nu, tau


def _mind_stats(X: np.ndarray, k: int, d_cap: int):
    c = PointCloud(X)
    idx = neighbors(c, k + 1)
    _check_positive(idx.dists[:, 0])
    rho = idx.dists[:, 0] / idx.dists[:, k]
    d_ml, _ = mind_mlk_from_ratios(rho, k, d_cap)
    nu, tau = neighbour_angle_stats(X, idx.ids[:, :k])
    return d_ml, float(nu.mean()), float(tau.mean()), rho


# calibration tables


def _cache_dir() -> Path:
    return Path(os.environ.get("INTRINSIC_DIM_CACHE", Path.home() / ".cache" / "intrinsic_dim"))


_CALIB: dict = {}


def calibration_table(n: int, k: int, d_cap: int, seed: int = 0, use_disk: bool = True) -> dict:
    """Statistics of uniform samples on S^m, m = 1..d_cap, keyed by m."""
    key = f"{n},{k}"
    mem_key = (key, d_cap, seed)
    if mem_key in _CALIB:
        return _CALIB[mem_key]
    path = _cache_dir() / f"danco_{n}_{k}_{d_cap}_{seed}.json"
    if use_disk and path.exists():
        table = {int(m): v for m, v in json.loads(path.read_text())[key].items()}
        _CALIB[mem_key] = table
        return table
    table = {}
    for m in range(1, d_cap + 1):
        rng = np.random.default_rng(np.random.SeedSequence([seed, n, k, m]))
        X = sphere_points(n, m, m + 1, rng)
        d_ml, nu, tau, _ = _mind_stats(X, k, d_cap)
        table[m] = {"d_ml": d_ml, "nu": nu, "tau": tau}
    if use_disk:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps({key: table}, sort_keys=True))
        except OSError:
            pass
    _CALIB[mem_key] = table
    return table


def ratio_density_kl(d1: float, d2: float, k: int) -> float:
    """KL between densities k d rho^(d-1) (1 - rho^d)^(k-1) on (0, 1)."""

    def logg(r, d):
        return np.log(k * d) + (d - 1) * np.log(r) + (k - 1) * np.log1p(-r**d)

    def integrand(r):
        a = logg(r, d1)
        return np.exp(a) * (a - logg(r, d2))

    val, _ = quad(integrand, 0.0, 1.0, limit=200)
    return max(float(val), 0.0)


def danco_from_stats(d_ml, nu, tau, table, k):
    scores = {}
    for m, st in table.items():
        scores[m] = ratio_density_kl(d_ml, st["d_ml"], k) + vm_kl(nu, tau, st["nu"], st["tau"])
    best = min(scores, key=lambda m: (scores[m], m))
    return best, scores


def danco_estimate(cloud: PointCloud, k: int = 10, d_cap: int | None = None, calib: dict | None = None,
                   seed: int = 0) -> EstimateReport:
    if k < 3:
        raise ParameterError("DANCo needs k >= 3")
    d_cap = cloud.ambient_dim if d_cap is None else int(d_cap)
    d_ml, nu, tau, rho = _mind_stats(cloud.points, k, d_cap)
    flags = []
    if not np.isfinite(tau):
        return EstimateReport(round(d_ml), None, ["fallback"], {"d_ml": d_ml})
    if calib is None:
        calib = calibration_table(cloud.n, k, d_cap, seed)
    best, scores = danco_from_stats(d_ml, nu, tau, calib, k)
    ml_int = max(range(1, d_cap + 1), key=lambda d: mind_loglik(d, rho, k))
    if best >= d_cap:
        flags.append("throttled")
    return EstimateReport(float(best), None, flags,
                          {"d_ml": d_ml, "nu": nu, "tau": tau, "d_ml_integer": ml_int,
                           "scores": {str(m): s for m, s in scores.items()}})


# expected simplex skewness


def ess_reference(d):
    """Expected |sin| of the angle at a random centre, as a function of dimension (m = 1)."""
    d = np.asarray(d, dtype=float)
    out = np.zeros_like(d)
    big = d > 1
    db = d[big]
    out[big] = np.exp(2 * gammaln(db / 2) - gammaln((db + 1) / 2) - gammaln((db - 1) / 2))
    return out


def _ess_pairs(k, limit, rng):
    iu = np.triu_indices(k, 1)
    total = iu[0].size
    if total <= limit:
        return iu
    pick = rng.choice(total, size=limit, replace=False)
    return iu[0][pick], iu[1][pick]


def ess_locals(cloud: PointCloud, k: int = 10, seed=0, pair_limit: int = 2000):
    if k < 2:
        raise ParameterError("ESS needs k >= 2")
    idx = neighbors(cloud, k)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    pi, pj = _ess_pairs(k, pair_limit, rng)
    X = cloud.points
    skew = np.full(cloud.n, np.nan)
    skipped = 0
    step = max(1, 2_000_000 // (k * max(k, X.shape[1])))
    for s in range(0, cloud.n, step):
        e = min(cloud.n, s + step)
        P = X[idx.ids[s:e]]
        U = P - P.mean(axis=1, keepdims=True)
        G = np.einsum("bij,bkj->bik", U, U)
        gii, gjj, gij = G[:, pi, pi], G[:, pj, pj], G[:, pi, pj]
        weight = np.sqrt(gii * gjj)
        area = np.sqrt(np.maximum(gii * gjj - gij**2, 0.0))
        valid = weight > 0
        skipped += int((~valid).sum())
        wsum = np.where(valid, weight, 0).sum(axis=1)
        asum = np.where(valid, area, 0).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            skew[s:e] = np.where(wsum > 0, asum / wsum, np.nan)
    return skew, skipped


def ess_invert(skew, d_max: float, grid_points: int = 20001):
    grid = np.linspace(1.0, d_max, grid_points)
    ref = ess_reference(grid)
    s = np.asarray(skew, dtype=float)
    d = np.interp(s, ref, grid)
    return d, s >= ref[-1]


def ess_estimate(cloud: PointCloud, k: int = 10, agg: str = "mean", seed=0) -> EstimateReport:
    skew, skipped = ess_locals(cloud, k, seed)
    ok = np.isfinite(skew)
    if not ok.any():
        raise DegenerateError("no usable neighbour pairs")
    d_max = 3.0 * cloud.ambient_dim
    local = np.full(cloud.n, np.nan)
    local[ok], capped = ess_invert(skew[ok], d_max)
    flags = ["throttled"] if capped.any() else []
    if not ok.all():
        flags.append("degenerate")
    return EstimateReport(aggregate(local[ok], agg), local, flags,
                          {"skipped_pairs": skipped, "at_grid_max": int(capped.sum()), "grid_max": d_max})
