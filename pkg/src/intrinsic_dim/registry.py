"""Estimator registry: hyperparameter schemas, defaults and dispatch."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import tangential as tg
from . import topology as tp
from .errors import ParameterError, SchemaError, UnknownEstimatorError
from .geometry import PointCloud
from .parametric import angles, counting, distances
from .parametric.distances import NeighborhoodSpec
from .report import AGGREGATIONS, EstimateReport, report_to_json


@dataclass(frozen=True)
class Param:
    kind: type
    default: Any
    choices: tuple | None = None
    optional: bool = False  # None allowed

    def coerce(self, name, value):
        if value is None:
            if self.optional:
                return None
            raise SchemaError(name, f"{name!r} may not be empty")
        try:
            if self.kind is bool:
                if isinstance(value, str):
                    low = value.strip().lower()
                    if low not in ("true", "false", "1", "0", "yes", "no"):
                        raise ValueError(value)
                    value = low in ("true", "1", "yes")
                else:
                    value = bool(value)
            elif self.kind is int:
                if isinstance(value, float) and not value.is_integer():
                    raise ValueError(value)
                value = int(float(value)) if isinstance(value, str) else int(value)
            elif self.kind is float:
                value = float(value)
            else:
                value = str(value)
        except (TypeError, ValueError):
            raise SchemaError(name, f"{name!r}: cannot read {value!r} as {self.kind.__name__}") from None
        if self.choices is not None and value not in self.choices:
            raise SchemaError(name, f"{name!r} must be one of {self.choices}, got {value!r}")
        return value


@dataclass(frozen=True)
class Entry:
    name: str
    family: str
    summary: str
    params: dict
    run: Callable[..., EstimateReport]
    stochastic: bool = False


@dataclass(frozen=True)
class EstimatorConfig:
    """Estimator name plus hyperparameters.

    neighborhood and aggregation are shorthands for the nbhd/k/eps and agg keys.
    """
    estimator_id: str
    hyperparams: dict = field(default_factory=dict)
    neighborhood: NeighborhoodSpec | None = None
    aggregation: str | None = None

    def _merged(self, entry) -> dict:
        raw = dict(self.hyperparams)
        if self.aggregation is not None:
            raw["agg"] = self.aggregation
        nb = self.neighborhood
        if nb is not None:
            if nb.mode == "knn":
                raw["k"] = int(nb.value)
                if "nbhd" in entry.params:
                    raw["nbhd"] = "knn"
            else:
                raw.update(nbhd="eps", eps=float(nb.value))
        return raw

    def resolved(self) -> dict:
        entry = _lookup(self.estimator_id)
        raw = self._merged(entry)
        for key in raw:
            if key not in entry.params:
                raise SchemaError(key, f"{self.estimator_id}: unknown hyperparameter {key!r}; "
                                       f"accepted: {sorted(entry.params)}")
        return {key: spec.coerce(key, raw.get(key, spec.default)) for key, spec in entry.params.items()}


AGG = Param(str, "mean", AGGREGATIONS)
NBHD = Param(str, "knn", ("knn", "eps"))
EPS = Param(float, None, optional=True)  # eps radius; None means the median k-th neighbour distance


def _schedule(h):
    fr = tuple(np.linspace(h["n_min"], 1.0, h["nsteps"]))
    return tp.SubsampleSchedule(fr, h["repeats"], h["seed"])


def _lpca(c, h):
    method = tg.ThresholdMethod(h["threshold"], alpha=h["alpha"], gap=h["gap"], cumulative=h["cumulative"],
                                proportion=h["proportion"])
    return tg.lpca_estimate(c, h["k"], method, h["nbhd"], h["agg"], h["eps"])


def _idea(c, h):
    if h["ver"] == "jackknife":
        return distances.idea_jackknife(c, h["k"], seed=h["seed"])
    return distances.idea_estimate(c, h["k"])


_ENTRIES = [
    Entry("lpca", "tangential", "local PCA with an eigenvalue cut-off",
          {"k": Param(int, 10), "threshold": Param(str, "fo", tg.THRESHOLDS), "alpha": Param(float, 0.05),
           "gap": Param(float, 10.0), "cumulative": Param(float, 0.8), "proportion": Param(float, 1.0),
           "nbhd": NBHD, "eps": EPS, "agg": AGG},
          _lpca),
    Entry("mle", "parametric", "nearest-neighbour distance likelihood",
          {"k": Param(int, 10), "agg": AGG, "corrected": Param(bool, False), "nbhd": NBHD, "eps": EPS},
          lambda c, h: distances.mle_estimate(c, h["k"], h["agg"], h["corrected"], h["nbhd"], h["eps"])),
    Entry("tle", "parametric", "likelihood on skewed distances inside tight neighbourhoods",
          {"k": Param(int, 10), "eps": Param(float, 1e-6), "agg": AGG},
          lambda c, h: distances.tle_estimate(c, h["k"], h["agg"], h["eps"])),
    Entry("twonn", "parametric", "ratio of the two nearest-neighbour distances",
          {"discard_fraction": Param(float, 0.05)},
          lambda c, h: distances.twonn_estimate(c, h["discard_fraction"])),
    Entry("gride", "parametric", "ratio of the n1-th and n2-th neighbour distances",
          {"n1": Param(int, 1), "multiplier": Param(int, 2), "n2": Param(int, None, optional=True),
           "d_max": Param(float, 150.0), "route": Param(str, "root", ("root", "search"))},
          lambda c, h: distances.gride_estimate(c, h["n1"], h["n2"], h["multiplier"], h["d_max"], h["route"])),
    Entry("mind_ml", "parametric", "likelihood of the normalised nearest-neighbour distance",
          {"k": Param(int, 1), "ver": Param(str, "MLk", ("MLk", "MLi")), "D": Param(int, 10)},
          lambda c, h: distances.mind_ml(c, h["k"], h["ver"], h["D"])),
    Entry("danco", "parametric", "distance and angle statistics compared with calibration spheres",
          {"k": Param(int, 10), "D": Param(int, None, optional=True), "seed": Param(int, 0)},
          lambda c, h: angles.danco_estimate(c, h["k"], h["D"], seed=h["seed"]), stochastic=True),
    Entry("ess", "parametric", "expected skewness of neighbour simplices",
          {"k": Param(int, 10), "agg": AGG, "seed": Param(int, 0)},
          lambda c, h: angles.ess_estimate(c, h["k"], h["agg"], h["seed"]), stochastic=True),
    Entry("corrint", "parametric", "growth of the correlation integral between two scales",
          {"k1": Param(int, 2), "k2": Param(int, 12)},
          lambda c, h: counting.corrint_estimate(c, h["k1"], h["k2"])),
    Entry("packing", "parametric", "growth of greedy packing numbers between two scales",
          {"k1": Param(int, 2), "k2": Param(int, 12)},
          lambda c, h: counting.packing_dimension(c, h["k1"], h["k2"])),
    Entry("doubling", "parametric", "two-step versus one-step kNN graph balls",
          {"k": Param(int, 10)},
          lambda c, h: counting.doubling_dp(c, h["k"])),
    Entry("wodcap", "parametric", "points shared by two neighbouring kNN balls",
          {"k": Param(int, 10), "agg": AGG, "variant": Param(str, "metric", ("metric", "graph"))},
          lambda c, h: counting.wodcap_estimate(c, h["k"], h["agg"], h["variant"])),
    Entry("idea", "parametric", "expected normalised neighbour distance",
          {"k": Param(int, 10), "ver": Param(str, "basic", ("basic", "jackknife")), "seed": Param(int, 0)},
          _idea, stochastic=True),
    Entry("pettis", "parametric", "regression of mean neighbour distance on k",
          {"k1": Param(int, 2), "k2": Param(int, 10)},
          lambda c, h: distances.pettis_estimate(c, h["k1"], h["k2"])),
    Entry("cdim", "tangential", "largest set of mutually non-acute neighbour directions",
          {"k": Param(int, 10), "agg": AGG, "seed": Param(int, 0)},
          lambda c, h: tg.conical_dimension(c, h["k"], h["agg"], h["seed"]), stochastic=True),
    Entry("ph0", "topological", "growth of the minimum spanning tree alpha-weight",
          {"alpha": Param(float, 0.5), "n_min": Param(float, 0.75), "nsteps": Param(int, 10),
           "repeats": Param(int, 10), "seed": Param(int, 0)},
          lambda c, h: tp.ph0_dimension(c, h["alpha"], _schedule(h)), stochastic=True),
    Entry("knn", "topological", "growth of the kNN graph total length",
          {"k": Param(int, 1), "n_min": Param(float, 0.75), "nsteps": Param(int, 10),
           "repeats": Param(int, 10), "seed": Param(int, 0)},
          lambda c, h: tp.knn_dimension(c, h["k"], _schedule(h)), stochastic=True),
    Entry("magnitude", "topological", "slope of the magnitude function",
          {"tmin": Param(float, 0.05), "tmax": Param(float, 50.0), "tsteps": Param(int, 60),
           "curv_threshold": Param(float, 0.3), "min_run": Param(int, 5)},
          lambda c, h: tp.magnitude_dimension(c, None, h["curv_threshold"], h["min_run"], (h["tmin"], h["tmax"]),
                                              h["tsteps"])),
]

REGISTRY = {e.name: e for e in _ENTRIES}


def _lookup(name: str) -> Entry:
    try:
        return REGISTRY[name]
    except KeyError:
        raise UnknownEstimatorError(f"unknown estimator {name!r}; known: {', '.join(REGISTRY)}") from None


def list_estimators() -> list[dict]:
    out = []
    for e in _ENTRIES:
        out.append({
            "name": e.name, "family": e.family, "summary": e.summary, "stochastic": e.stochastic,
            "hyperparams": {k: {"type": p.kind.__name__, "default": p.default,
                                **({"choices": list(p.choices)} if p.choices else {})}
                            for k, p in e.params.items()},
        })
    return out


def run_estimator(cloud: PointCloud, config: EstimatorConfig) -> EstimateReport:
    entry = _lookup(config.estimator_id)
    return entry.run(cloud, config.resolved())


def run_to_json(cloud: PointCloud, config: EstimatorConfig, with_locals: bool = False) -> str:
    rep = run_estimator(cloud, config)
    return report_to_json(rep, config.estimator_id, config.resolved(), with_locals)


def parse_assignments(items) -> dict:
    """['k=10', 'agg=hmean'] -> {'k': '10', 'agg': 'hmean'}."""
    out = {}
    for item in items:
        if "=" not in item:
            raise ParameterError(f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out
