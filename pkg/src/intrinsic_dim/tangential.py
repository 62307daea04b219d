"""Local PCA with pluggable eigenvalue cut-offs, and the conical estimator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, ParameterError
from .geometry import PointCloud, knn_query, pairwise_distances
from .report import EstimateReport, aggregate

THRESHOLDS = ("fo", "fan", "maxgap", "ratio", "pr", "kaiser", "brokenstick")


@dataclass(frozen=True)
class EigSpectrum:
    values: np.ndarray

    @property
    def degenerate(self) -> bool:
        return not np.any(self.values > 0)


@dataclass(frozen=True)
class ThresholdMethod:
    kind: str = "fo"
    alpha: float = 0.05          # FO fraction of the top eigenvalue; Ratio residual fraction
    gap: float = 10.0            # Fan consecutive-ratio cut
    cumulative: float = 0.8      # Fan explained-variance cut
    proportion: float = 1.0      # Kaiser multiple of the mean eigenvalue
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in THRESHOLDS:
            raise ParameterError(f"unknown threshold {self.kind!r}, expected one of {THRESHOLDS}")
        if not 0 < self.alpha < 1:
            raise ParameterError("alpha must lie in (0, 1)")
        if self.gap <= 1:
            raise ParameterError("gap threshold must exceed 1")
        if not 0 < self.cumulative < 1:
            raise ParameterError("cumulative fraction must lie in (0, 1)")
        if not 0 < self.proportion <= 1:
            raise ParameterError("Kaiser proportion must lie in (0, 1]")


def local_pca_spectrum(points) -> EigSpectrum:
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or P.shape[0] < 2:
        raise ParameterError("need at least 2 points")
    return EigSpectrum(_batch_spectra(P[None])[0])


def _batch_spectra(P: np.ndarray) -> np.ndarray:
    """Spectra for a stack of neighbourhoods, shape (B, m, D) -> (B, D)."""
    B, m, D = P.shape
    C = P - P.mean(axis=1, keepdims=True)
    if D <= m:
        S = np.einsum("bij,bik->bjk", C, C) / (m - 1)
    else:
        # same nonzero eigenvalues from the small Gram matrix
        S = np.einsum("bij,bkj->bik", C, C) / (m - 1)
    ev = np.linalg.eigvalsh(S)[:, ::-1]
    ev = np.where(ev < 0, 0.0, ev)
    out = np.zeros((B, D))
    w = min(D, ev.shape[1])
    out[:, :w] = ev[:, :w]
    return out


def _fan_gap(lam, beta):
    # first u where the next eigenvalue drops by more than a factor beta
    for u in range(lam.size - 1):
        nxt = lam[u + 1]
        if nxt == 0 or lam[u] / nxt > beta:
            return u + 1
    return lam.size


def _cumulative(lam, frac):
    c = np.cumsum(lam)
    return int(np.searchsorted(c, frac * c[-1], side="right")) + 1


def broken_stick_lengths(m: int) -> np.ndarray:
    inv = 1.0 / np.arange(1, m + 1)
    return np.cumsum(inv[::-1])[::-1] / m


def participation_ratio(lam) -> float:
    lam = np.asarray(lam, dtype=float)
    return float(lam.sum() ** 2 / (lam**2).sum())


def threshold_dimension(spectrum, method: ThresholdMethod = ThresholdMethod()) -> int:
    lam = np.asarray(spectrum.values if isinstance(spectrum, EigSpectrum) else spectrum, dtype=float)
    if not np.any(lam > 0):
        return 0
    kind = method.kind
    if kind == "fo":
        return int(np.count_nonzero(lam > method.alpha * lam[0]))
    if kind == "fan":
        return min(_fan_gap(lam, method.gap), _cumulative(lam, method.cumulative))
    if kind == "maxgap":
        pos = lam[lam > 0]
        if pos.size == 1:
            return 1
        return int(np.argmax(pos[:-1] / pos[1:])) + 1
    if kind == "ratio":
        return _cumulative(lam, 1.0 - method.alpha)
    if kind == "pr":
        return int(np.floor(participation_ratio(lam) + 0.5))
    if kind == "kaiser":
        return int(np.count_nonzero(lam > method.proportion * lam.mean()))
    # broken stick: longest prefix beating the expected stick lengths
    above = lam / lam.sum() > broken_stick_lengths(lam.size)
    return int(np.argmin(above)) if not above.all() else lam.size


def _neighbourhoods(cloud, k, nbhd, eps=None):
    """Groups of (point ids, stacked neighbourhood ids) including the centre, plus eps."""
    if nbhd == "knn":
        idx = knn_query(cloud, k)
        full = np.hstack([np.arange(cloud.n)[:, None], idx.ids])
        return [(np.arange(cloud.n), full)], None
    if nbhd == "eps":
        if eps is None:
            eps = float(np.median(knn_query(cloud, k).dists[:, -1]))
        elif not eps > 0:
            raise ParameterError("eps must be positive")
        D = pairwise_distances(cloud)
        groups = {}
        for p in range(cloud.n):
            members = np.nonzero(D[p] < eps)[0]  # contains p itself
            groups.setdefault(members.size, []).append((p, members))
        out = []
        for _, items in sorted(groups.items()):
            out.append((np.array([p for p, _ in items]), np.stack([m for _, m in items])))
        return out, eps
    raise ParameterError(f"neighbourhood must be 'knn' or 'eps', got {nbhd!r}")


def lpca_local(cloud: PointCloud, k: int = 10, method: ThresholdMethod = ThresholdMethod(),
               nbhd: str = "knn", eps: float | None = None):
    """Per-point lPCA estimates; NaN where the neighbourhood is a single point.

    With nbhd="eps" the radius defaults to the median k-th neighbour distance.
    """
    groups, eps = _neighbourhoods(cloud, k, nbhd, eps)
    X = cloud.points
    local = np.full(cloud.n, np.nan)
    degenerate = 0
    for pts, members in groups:
        if members.shape[1] < 2:
            continue
        step = max(1, 4_000_000 // (members.shape[1] * max(X.shape[1], members.shape[1])))
        for s in range(0, len(pts), step):
            spec = _batch_spectra(X[members[s:s + step]])
            for row, p in zip(spec, pts[s:s + step]):
                if not np.any(row > 0):
                    degenerate += 1
                local[p] = threshold_dimension(row, method)
    return local, eps, degenerate


def lpca_estimate(cloud: PointCloud, k: int = 10, method: ThresholdMethod = ThresholdMethod(),
                  nbhd: str = "knn", agg: str = "mean", eps: float | None = None) -> EstimateReport:
    local, eps, degenerate = lpca_local(cloud, k, method, nbhd, eps)
    ok = np.isfinite(local)
    if ok.sum() < 1 or degenerate == cloud.n:
        raise DegenerateError("every neighbourhood is degenerate")
    est = aggregate(local[ok], agg)
    flags = []
    if est >= k - 1:
        flags.append("throttled")
    if degenerate:
        flags.append("degenerate")
    diag = {"n_degenerate": degenerate, "n_singleton": int((~ok).sum()),
            "bound": min(k, cloud.ambient_dim)}
    if eps is not None:
        diag["eps"] = eps
    return EstimateReport(est, local, flags, diag)


# conical estimator


def _max_clique(adj: list[int], n: int) -> int:
    """Bitmask of one maximum clique; Bron-Kerbosch with pivoting, ties to the first found."""
    best = [0, 0]  # size, mask

    def expand(R, size, P, X):
        if P == 0 and X == 0:
            if size > best[0]:
                best[0], best[1] = size, R
            return
        if size + bin(P).count("1") <= best[0]:
            return
        PX = P | X
        u = (PX & -PX).bit_length() - 1
        pivot_n = adj[u]
        cand = P & ~pivot_n
        while cand:
            v = (cand & -cand).bit_length() - 1
            bit = 1 << v
            expand(R | bit, size + 1, P & adj[v], X & adj[v])
            P &= ~bit
            X |= bit
            cand &= ~bit

    expand(0, 0, (1 << n) - 1, 0)
    return best[1]


def _greedy_clique(G: np.ndarray, rng, restarts: int) -> int:
    n = G.shape[0]
    best = 0
    for _ in range(restarts):
        chosen = []
        for v in rng.permutation(n):
            if all(G[v, c] for c in chosen):
                chosen.append(v)
        mask = sum(1 << int(c) for c in chosen)
        if len(chosen) > bin(best).count("1"):
            best = mask
    return best


def cone_rank(directions: np.ndarray, exact_limit: int = 20, seed=0, restarts: int = 200,
              tol: float = 1e-12):
    """Span dimension of the largest set of pairwise non-acute unit directions.

    Returns (rank, set size, approximate flag).
    """
    U = np.asarray(directions, dtype=float)
    n = U.shape[0]
    if n == 0:
        return 0, 0, False
    G = (U @ U.T) <= tol
    np.fill_diagonal(G, False)
    if n <= exact_limit:
        adj = [sum(1 << int(j) for j in np.nonzero(G[i])[0]) for i in range(n)]
        mask, approx = _max_clique(adj, n), False
    else:
        mask, approx = _greedy_clique(G, np.random.default_rng(seed), restarts), True
    members = [i for i in range(n) if mask >> i & 1]
    sv = np.linalg.svd(U[members], compute_uv=False)
    rank = int(np.count_nonzero(sv > 1e-9 * max(1.0, sv[0])))
    return rank, len(members), approx


def conical_dimension(cloud: PointCloud, k: int = 10, agg: str = "mean", seed=0) -> EstimateReport:
    if k < 1:
        raise ParameterError("k must be positive")
    idx = knn_query(cloud, k)
    X = cloud.points
    local = np.empty(cloud.n)
    skipped = 0
    approx = False
    sizes = np.empty(cloud.n)
    for p in range(cloud.n):
        V = X[idx.ids[p]] - X[p]
        norms = np.linalg.norm(V, axis=1)
        keep = norms > 0
        skipped += int((~keep).sum())
        rank, size, a = cone_rank(V[keep] / norms[keep, None], seed=[seed, p])
        approx |= a
        local[p], sizes[p] = rank, size
    flags = ["approximate"] if approx else []
    est = aggregate(local, agg)
    if est >= k - 1:
        flags.append("throttled")
    return EstimateReport(est, local, flags, {"zero_directions_skipped": skipped,
                                               "mean_subset_size": float(sizes.mean())})
