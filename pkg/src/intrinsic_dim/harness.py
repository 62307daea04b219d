"""Experiment protocols: benchmark sweeps, hyperparameter selection, noise and curvature runs."""
from __future__ import annotations

import csv
import itertools
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import kstest

from .datasets import (FAMILIES, NAMED, PARABOLOID_HALF_WIDTH, DatasetSpec, add_gaussian_noise, add_outliers,
                       dataset_dims, generate)
from .errors import IDError, ParameterError
from .geometry import PointCloud
from .parametric.counting import doubling_bound, wodcap_bound
from .registry import EstimatorConfig, _lookup, run_estimator

SAMPLE_SIZES = (625, 1250, 2500, 5000)
NOISE_VARIANCES = (0.0, 0.01, 0.1, 1.0)
OUTLIER_COUNTS = (0, 25, 125, 250)
NOISE_DATASETS = {"S6": "Sphere:d=6,D=11", "S10": "Sphere:d=10,D=11", "SO4": "SOn:n=4"}

# fixed settings for the noise runs, chosen on clean S^10
NOISE_CONFIGS = (
    EstimatorConfig("lpca"),
    EstimatorConfig("mle", {"k": 10, "agg": "hmean"}),
    EstimatorConfig("ph0"),
    EstimatorConfig("knn"),
    EstimatorConfig("wodcap", {"k": 20}),
    EstimatorConfig("gride"),
    EstimatorConfig("twonn"),
    EstimatorConfig("danco"),
    EstimatorConfig("mind_ml"),
    EstimatorConfig("corrint"),
    EstimatorConfig("ess"),
    EstimatorConfig("tle"),
)


# dataset names


def parse_dataset(text: str) -> tuple[str, dict]:
    """'M7_Roll' or 'Sphere:d=6,D=11' -> (name, params)."""
    name, _, rest = text.partition(":")
    params = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq:
            raise ParameterError(f"bad dataset parameter {item!r} in {text!r}")
        num = float(value)
        params[key.strip()] = int(num) if num.is_integer() else num
    if name not in NAMED and name not in FAMILIES:
        raise ParameterError(f"unknown dataset {name!r}")
    return name, params


def dataset_truth(text: str) -> int:
    name, params = parse_dataset(text)
    return dataset_dims(name, params)[0]


def make_cloud(text: str, n: int, seed) -> PointCloud:
    name, params = parse_dataset(text)
    return generate(DatasetSpec(name, n, seed, params))


def derive_seed(master_seed: int, *parts) -> int:
    """Stable 64-bit seed from the master seed and a task key."""
    words = [int(master_seed)]
    for p in parts:
        words.append(zlib.crc32(p.encode()) if isinstance(p, str) else int(p))
    return int(np.random.SeedSequence(words).generate_state(2, np.uint32).view(np.uint64)[0])


# configuration


@dataclass(frozen=True)
class GridSpec:
    """One estimator and a grid of hyperparameter values; the last key varies fastest."""
    estimator: str
    grid: dict = field(default_factory=dict)

    def configs(self) -> list[EstimatorConfig]:
        keys = list(self.grid)
        values = [v if isinstance(v, (list, tuple)) else [v] for v in self.grid.values()]
        out = [EstimatorConfig(self.estimator, dict(zip(keys, combo))) for combo in itertools.product(*values)]
        if not out:
            raise ParameterError(f"empty grid for {self.estimator}")
        for c in out:
            c.resolved()
        return out


@dataclass(frozen=True)
class SweepConfig:
    datasets: tuple
    sample_sizes: tuple = (2500,)
    estimators: tuple = ()
    runs: int = 20
    master_seed: int = 0

    def __post_init__(self):
        if self.runs < 1:
            raise ParameterError("runs must be at least 1")
        if not self.datasets or not self.estimators:
            raise ParameterError("need at least one dataset and one estimator")
        for d in self.datasets:
            parse_dataset(d)
        for n in self.sample_sizes:
            if int(n) < 4:
                raise ParameterError(f"sample size {n} too small")


# results


@dataclass
class Row:
    dataset: str
    n: int
    estimator: str
    params: dict
    grid_index: int
    values: list  # NaN where the run failed
    condition: str = ""
    flags: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    violations: int = 0

    @property
    def ok(self) -> np.ndarray:
        v = np.asarray(self.values, dtype=float)
        return v[~np.isnan(v)]

    @property
    def n_failed(self) -> int:
        return len(self.values) - self.ok.size

    @property
    def mean(self) -> float:
        v = self.ok
        return float(v.mean()) if v.size else math.nan

    @property
    def median(self) -> float:
        v = self.ok
        return float(np.median(v)) if v.size else math.nan

    @property
    def std(self) -> float:
        v = self.ok
        if v.size == 0:
            return math.nan
        return float(v.std(ddof=1)) if v.size > 1 else 0.0

    def as_dict(self) -> dict:
        return {"dataset": self.dataset, "N": self.n, "condition": self.condition, "estimator": self.estimator,
                "params": self.params, "grid_index": self.grid_index, "mean": self.mean, "std": self.std,
                "median": self.median, "values": list(self.values), "n_failed": self.n_failed,
                "flags": sorted(set(self.flags)), "errors": self.errors, "violations": self.violations}


CSV_FIELDS = ("dataset", "N", "condition", "estimator", "params", "grid_index", "mean", "std", "median",
              "n_failed", "violations", "flags")


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def find(self, **where) -> list[Row]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in where.items())]

    @property
    def n_failed(self) -> int:
        return sum(r.n_failed for r in self.rows)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_FIELDS)
            for r in self.rows:
                d = r.as_dict()
                d["params"] = json.dumps(d["params"], sort_keys=True)
                d["flags"] = ";".join(d["flags"])
                w.writerow([d[k] for k in CSV_FIELDS])

    def to_json(self) -> str:
        return json.dumps({"meta": self.meta, "rows": [r.as_dict() for r in self.rows]}, sort_keys=True,
                          indent=1, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "ResultTable":
        data = json.loads(text)
        rows = [Row(d["dataset"], d["N"], d["estimator"], d["params"], d["grid_index"],
                    [math.nan if v is None else v for v in d["values"]], d.get("condition", ""),
                    d.get("flags", []), d.get("errors", []), d.get("violations", 0)) for d in data["rows"]]
        return cls(rows, data.get("meta", {}))


# throttle checks, run on every evaluation

_TOL = 1e-9


def throttle_violations(name: str, hyper: dict, report, ambient: int) -> int:
    if name == "lpca" and report.locals is not None:
        loc = np.asarray(report.locals, float)
        return int(np.sum(loc[np.isfinite(loc)] > min(hyper["k"], ambient)))
    if name == "wodcap":
        return int(report.estimate > wodcap_bound(hyper["k"]) + _TOL)
    if name == "doubling":
        return int(report.estimate > doubling_bound(hyper["k"]) + _TOL)
    return 0


# sweep execution


def _evaluate(cloud: PointCloud, configs):
    out = []
    for cfg in configs:
        try:
            rep = run_estimator(cloud, cfg)
            viol = throttle_violations(cfg.estimator_id, cfg.resolved(), rep, cloud.ambient_dim)
            value = float(rep.estimate) if np.isfinite(rep.estimate) else math.nan
            out.append((value, list(rep.flags), None, viol))
        except (IDError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            out.append((math.nan, [], f"{type(exc).__name__}: {exc}", 0))
    return out


def _cell_task(args):
    dataset, n, run, seed, configs, corrupt = args
    cloud = make_cloud(dataset, n, seed)
    if corrupt is not None:
        kind, level, cseed = corrupt
        cloud = add_gaussian_noise(cloud, level, cseed) if kind == "gaussian" else add_outliers(cloud, int(level),
                                                                                              cseed)
    return _evaluate(cloud, configs)


def _map(fn, tasks, jobs):
    if jobs is None or jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def bench_run(config: SweepConfig, jobs: int = 1) -> ResultTable:
    """Evaluate every (dataset, N, estimator, hyperparameters, run); one cloud per (dataset, N, run)."""
    configs = []
    for g in config.estimators:
        spec = g if isinstance(g, GridSpec) else GridSpec(g.estimator_id, dict(g.hyperparams))
        configs.extend((spec.estimator, i, c) for i, c in enumerate(spec.configs()))
    cfg_list = [c for _, _, c in configs]
    tasks = []
    for ds in config.datasets:
        for n in config.sample_sizes:
            for run in range(config.runs):
                tasks.append((ds, int(n), run, derive_seed(config.master_seed, ds, n, run), cfg_list, None))
    results = _map(_cell_task, tasks, jobs)
    table = ResultTable(meta={"master_seed": config.master_seed, "runs": config.runs})
    by_cell = {}
    for (ds, n, run, *_), res in zip(tasks, results):
        by_cell.setdefault((ds, n), []).append(res)
    for ds in config.datasets:
        for n in config.sample_sizes:
            runs = by_cell[(ds, int(n))]
            for j, (name, gi, cfg) in enumerate(configs):
                cells = [r[j] for r in runs]
                table.rows.append(Row(ds, int(n), name, cfg.resolved(), gi, [c[0] for c in cells],
                                      flags=sorted({f for c in cells for f in c[1]}),
                                      errors=[c[2] for c in cells if c[2]],
                                      violations=sum(c[3] for c in cells)))
    return table


# hyperparameter selection


def _first_argmin(scores) -> int:
    """Index of the smallest score; NaN counts as +inf and ties go to the earliest entry."""
    best, best_i = math.inf, 0
    for i, s in enumerate(scores):
        s = math.inf if s is None or math.isnan(s) else s
        if s < best:
            best, best_i = s, i
    return best_i


def hyperparam_select(table: ResultTable, truth: dict) -> list[dict]:
    """best, med_abs and med_rel choices per (dataset, N, estimator).

    best takes the grid entry whose mean is closest to the truth on that dataset. The two
    median rules fix one grid entry per (estimator, N) by the median over datasets of the
    absolute or relative error, then report that entry's mean on each dataset.
    """
    groups = {}
    for r in table.rows:
        groups.setdefault((r.estimator, r.n), {}).setdefault(r.dataset, {})[r.grid_index] = r
    if not groups:
        raise ParameterError("empty result table")
    out = []
    for (est, n), per_ds in groups.items():
        grid = sorted({gi for cells in per_ds.values() for gi in cells})
        for ds, cells in per_ds.items():
            if sorted(cells) != grid:
                raise ParameterError(f"incomplete grid for {est} on {ds} at N={n}")
        datasets = list(per_ds)

        def median_error(gi, rel):
            errs = []
            for ds in datasets:
                d = truth[ds]
                e = abs(per_ds[ds][gi].mean - d)
                errs.append(e / d if rel else e)
            return float(np.median(errs))

        pick_abs = grid[_first_argmin([median_error(gi, False) for gi in grid])]
        pick_rel = grid[_first_argmin([median_error(gi, True) for gi in grid])]
        for ds in datasets:
            cells = per_ds[ds]
            pick_best = grid[_first_argmin([abs(cells[gi].mean - truth[ds]) for gi in grid])]
            out.append({
                "dataset": ds, "N": n, "estimator": est, "truth": truth[ds],
                "best": cells[pick_best].mean, "best_std": cells[pick_best].std, "best_index": pick_best,
                "best_params": cells[pick_best].params,
                "med_abs": cells[pick_abs].mean, "med_abs_std": cells[pick_abs].std, "med_abs_index": pick_abs,
                "med_abs_params": cells[pick_abs].params,
                "med_rel": cells[pick_rel].mean, "med_rel_std": cells[pick_rel].std, "med_rel_index": pick_rel,
                "med_rel_params": cells[pick_rel].params,
            })
    return out


# noise


def select_clean_configs(grids, n: int = 2500, runs: int = 20, master_seed: int = 0, jobs: int = 1):
    """Best grid entry per estimator on clean S^10, by distance of the mean to 10."""
    s10 = NOISE_DATASETS["S10"]
    table = bench_run(SweepConfig((s10,), (n,), tuple(grids), runs, master_seed), jobs)
    chosen = []
    for row in hyperparam_select(table, {s10: 10}):
        chosen.append(EstimatorConfig(row["estimator"], row["best_params"]))
    return chosen


def noise_experiment(kind: str = "gaussian", levels=None, configs=NOISE_CONFIGS, datasets=("S6", "S10", "SO4"),
                     n: int = 2500, runs: int = 20, master_seed: int = 0, jobs: int = 1) -> ResultTable:
    """Estimates on corrupted copies of the noise datasets; rows carry median and mean."""
    if kind not in ("gaussian", "outliers"):
        raise ParameterError("kind must be gaussian or outliers")
    if levels is None:
        levels = NOISE_VARIANCES if kind == "gaussian" else OUTLIER_COUNTS
    configs = list(configs)
    for c in configs:
        c.resolved()
    tasks, keys = [], []
    for short in datasets:
        ds = NOISE_DATASETS.get(short, short)
        for level in levels:
            for run in range(runs):
                seed = derive_seed(master_seed, ds, n, run)
                cseed = derive_seed(master_seed, ds, n, run, kind, int(round(float(level) * 1000)))
                tasks.append((ds, n, run, seed, configs, (kind, level, cseed)))
                keys.append((short, level))
    results = _map(_cell_task, tasks, jobs)
    grouped = {}
    for key, res in zip(keys, results):
        grouped.setdefault(key, []).append(res)
    label = "sigma2" if kind == "gaussian" else "outliers"
    table = ResultTable(meta={"kind": kind, "master_seed": master_seed, "runs": runs})
    for short in datasets:
        for level in levels:
            runs_ = grouped[(short, level)]
            for j, cfg in enumerate(configs):
                cells = [r[j] for r in runs_]
                table.rows.append(Row(short, n, cfg.estimator_id, cfg.resolved(), 0, [c[0] for c in cells],
                                      condition=f"{label}={level}",
                                      flags=sorted({f for c in cells for f in c[1]}),
                                      errors=[c[2] for c in cells if c[2]],
                                      violations=sum(c[3] for c in cells)))
    return table


# curvature


def paraboloid_area(b: float, half_width: float = PARABOLOID_HALF_WIDTH) -> float:
    """Area of z = 2x^2 +- y^2/b^2 over the square [-w, w]^2 (2-D Gauss-Legendre quadrature)."""
    x, wts = np.polynomial.legendre.leggauss(200)
    x, wts = x * half_width, wts * half_width
    X, Y = np.meshgrid(x, x, indexing="ij")
    return float(np.sum(np.outer(wts, wts) * np.sqrt(1 + 16 * X**2 + 4 * Y**2 / b**4)))


def paraboloid_size(b: float, n_ref: int = 10000) -> int:
    """Sample size giving the same density per area as n_ref points at b = 1."""
    return int(round(n_ref * paraboloid_area(b) / paraboloid_area(1.0)))


def _pointwise_at_origin(cloud: PointCloud, cfg: EstimatorConfig) -> float:
    rep = run_estimator(cloud, cfg)
    if rep.locals is None:
        raise ParameterError(f"{cfg.estimator_id} has no per-point estimates")
    return float(np.asarray(rep.locals)[-1])


def curvature_paraboloid(estimator: str = "lpca", b_grid=(1.0, 2.0, 4.0), sign: int = 1,
                         k_grid=tuple(range(20, 170, 5)), repeats: int = 1, params: dict | None = None,
                         master_seed: int = 0, n_ref: int = 10000) -> dict:
    """Pointwise estimate at the origin for each (b, k); the origin is appended as the last point."""
    params = dict(params or {})
    rows, counts = [], {}
    for b in b_grid:
        n = paraboloid_size(b, n_ref)
        for rep in range(repeats):
            seed = derive_seed(master_seed, "Paraboloid", n, rep, int(round(b * 1000)), "+" if sign > 0 else "-")
            cloud = generate(DatasetSpec("Paraboloid", n, seed, {"b": b, "sign": sign}))
            cloud = cloud.with_points(np.vstack([cloud.points, np.zeros((1, 3))]))
            for k in k_grid:
                cfg = EstimatorConfig(estimator, {**params, "k": int(k)})
                try:
                    value = _pointwise_at_origin(cloud, cfg)
                except IDError as exc:
                    value = math.nan
                    rows.append({"b": b, "k": int(k), "repeat": rep, "estimate": value, "error": str(exc)})
                    continue
                rows.append({"b": b, "k": int(k), "repeat": rep, "estimate": value, "error": None})
                if np.isfinite(value) and round(value) == 2:
                    counts[(b, rep)] = counts.get((b, rep), 0) + 1
    summary = [{"b": b, "repeat": rep, "n_k_giving_2": counts.get((b, rep), 0)}
               for b in b_grid for rep in range(repeats)]
    return {"kind": "paraboloid_pointwise", "estimator": estimator, "sign": sign, "rows": rows,
            "summary": summary}


def torus_area_cdf(u, R: float = 2.0, r: float = 1.0):
    """CDF of |phi - pi| for points uniform in area on the torus."""
    u = np.asarray(u, dtype=float)
    return (R * u - r * np.sin(u)) / (R * np.pi)


def curvature_torus(estimator: str = "mle", k: int = 10, n: int = 10000, params: dict | None = None,
                    master_seed: int = 0, R: float = 2.0, r: float = 1.0) -> dict:
    """Per-point overestimate indicator against |phi - pi|, with a KS test against the area CDF."""
    seed = derive_seed(master_seed, "Torus", n, 0)
    cloud = generate(DatasetSpec("Torus", n, seed, {"R": R, "r": r}))
    rep = run_estimator(cloud, EstimatorConfig(estimator, {**(params or {}), "k": k}))
    if rep.locals is None:
        raise ParameterError(f"{estimator} has no per-point estimates")
    loc = np.asarray(rep.locals, dtype=float)
    u = np.abs(np.asarray(cloud.meta["tube_angle"]) - np.pi)
    over = np.isfinite(loc) & (np.round(loc) == 3)
    us = np.sort(u[over])
    cdf_rows = [{"abs_phi_minus_pi": float(x), "empirical_cdf": (i + 1) / us.size,
                 "uniform_area_cdf": float(torus_area_cdf(x, R, r))} for i, x in enumerate(us)]
    ks = kstest(us, lambda x: torus_area_cdf(x, R, r)) if us.size else None
    return {"kind": "torus_cdf", "estimator": estimator, "k": k, "n": n, "n_over": int(over.sum()),
            "ks_statistic": float(ks.statistic) if ks else math.nan,
            "ks_pvalue": float(ks.pvalue) if ks else math.nan, "rows": cdf_rows}


def curvature_experiment(kind: str, **kwargs) -> dict:
    if kind == "paraboloid_pointwise":
        return curvature_paraboloid(**kwargs)
    if kind == "torus_cdf":
        return curvature_torus(**kwargs)
    raise ParameterError("kind must be paraboloid_pointwise or torus_cdf")


def known_estimator(name: str) -> bool:
    try:
        _lookup(name)
        return True
    except IDError:
        return False
