"""Estimate reports, aggregation of local values, and the JSON report format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, SchemaError

AGGREGATIONS = ("mean", "median", "hmean")
FLAGS = ("throttled", "degenerate", "slope_hazard", "nonconvergent", "approximate",
         "zero_slope", "fallback", "ties_excluded")


def aggregate(values, method: str = "mean") -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ParameterError("nothing to aggregate")
    if method == "mean":
        return float(np.mean(v))
    if method == "median":
        return float(np.median(np.sort(v)))
    if method == "hmean":
        if np.any(v <= 0):
            raise ParameterError("harmonic mean needs positive values")
        return float(v.size / np.sum(1.0 / v))
    raise ParameterError(f"unknown aggregation {method!r}, expected one of {AGGREGATIONS}")


def _plain(x):
    """Convert numpy scalars and arrays to JSON-friendly python values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


@dataclass
class EstimateReport:
    estimate: float
    locals: np.ndarray | None = None
    flags: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.estimate = float(self.estimate)
        seen = []
        for f in self.flags:
            if f not in seen:
                seen.append(f)
        self.flags = seen
        if self.locals is not None:
            self.locals = np.asarray(self.locals, dtype=float)

    def to_dict(self, estimator: str = "", config: dict | None = None, with_locals: bool = True) -> dict:
        out = {
            "estimator": estimator,
            "config": _plain(config or {}),
            "estimate": self.estimate,
            "flags": list(self.flags),
            "diagnostics": _plain(self.diagnostics),
        }
        if with_locals and self.locals is not None:
            out["locals"] = [float(v) for v in self.locals]
        return out


REPORT_KEYS = ("estimator", "config", "estimate", "flags", "diagnostics", "locals")


def report_to_json(report: EstimateReport, estimator: str, config: dict, with_locals: bool = True) -> str:
    return json.dumps(report.to_dict(estimator, config, with_locals), sort_keys=True)


def report_from_json(text: str):
    """Inverse of report_to_json: returns (estimator, config, report)."""
    data = json.loads(text)
    for key in data:
        if key not in REPORT_KEYS:
            raise SchemaError(key)
    for key in ("estimator", "config", "estimate", "flags", "diagnostics"):
        if key not in data:
            raise SchemaError(key, f"missing key: {key!r}")
    locals_ = data.get("locals")
    rep = EstimateReport(data["estimate"], None if locals_ is None else np.array(locals_, dtype=float),
                         list(data["flags"]), data["diagnostics"])
    return data["estimator"], data["config"], rep
