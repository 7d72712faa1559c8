"""Intrinsic-dimension estimators and aggregation of local estimates."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import InvalidParameterError
from ..linalg import RandomStream, derive_stream
from ..neighbors import NeighborTable, knn
from .danco import danco
from .knn_based import ABID_PAIRS, abid_local, abid_pointwise, corrint_global, mle_local, mle_pointwise, twonn_pointwise
from .lpca import lpca_fo, lpca_maxgap, lpca_pointwise, lpca_ratio

__all__ = [
    "Method",
    "EstimatorConfig",
    "LidResult",
    "AGGREGATES",
    "aggregate",
    "aggregate_all",
    "run_estimator",
    "neighbors_needed",
    "lpca_maxgap",
    "lpca_ratio",
    "lpca_fo",
    "mle_local",
    "abid_local",
    "corrint_global",
    "twonn_pointwise",
    "danco",
]

AGGREGATES = ("mean", "median", "mode", "median_of_means", "mean_of_medians")
N_BLOCKS = 10
MLE_CONVENTION = "R=T_k, sum over j<k, denominator k-1"


class Method(str, enum.Enum):
    LPCA_MAXGAP = "lpca-maxgap"
    LPCA_RATIO = "lpca-ratio"
    LPCA_FO = "lpca-fo"
    MLE = "mle"
    CORRINT = "corrint"
    TWONN = "twonn"
    DANCO = "danco"
    ABID = "abid"

    @property
    def is_global(self) -> bool:
        return self in (Method.CORRINT, Method.DANCO)


# parameters each method takes, with defaults
_PARAMS: dict[Method, dict[str, Any]] = {
    Method.LPCA_MAXGAP: {"k": 100},
    Method.LPCA_RATIO: {"k": 100, "epsilon": 0.05},
    Method.LPCA_FO: {"k": 100, "epsilon": 0.05},
    Method.MLE: {"k": 100},
    Method.CORRINT: {"k1": 10, "k2": 20},
    Method.TWONN: {"k": 2, "alpha": 0.1},
    Method.DANCO: {"k": 10, "calib_sets": 500},
    Method.ABID: {"k": 100, "pairs": "all"},
}
_FIELDS = ("k", "epsilon", "alpha", "k1", "k2", "calib_sets", "pairs")


@dataclass(frozen=True)
class EstimatorConfig:
    """Method plus exactly the parameters that method uses.

    Unused parameters must be left as ``None``; missing ones take defaults.
    """

    method: Method
    k: int | None = None
    epsilon: float | None = None
    alpha: float | None = None
    k1: int | None = None
    k2: int | None = None
    calib_sets: int | None = None
    pairs: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        wanted = _PARAMS[self.method]
        for name in _FIELDS:
            value = getattr(self, name)
            if name not in wanted:
                if value is not None:
                    raise InvalidParameterError(f"{self.method.value} does not take {name}")
            elif value is None:
                object.__setattr__(self, name, wanted[name])
        if self.k is not None and (int(self.k) != self.k or self.k < 2):
            raise InvalidParameterError(f"k must be an integer >= 2, got {self.k}")
        if self.method is Method.MLE and self.k < 3:
            raise InvalidParameterError("MLE needs k >= 3")
        if self.method is Method.DANCO and self.k < 5:
            raise InvalidParameterError("DANCo needs k >= 5")
        if self.epsilon is not None and not 0 <= self.epsilon < 1:
            raise InvalidParameterError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.alpha is not None and not 0 <= self.alpha < 1:
            raise InvalidParameterError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.method is Method.CORRINT and not 1 <= self.k1 < self.k2:
            raise InvalidParameterError(f"CorrInt needs 1 <= k1 < k2, got {self.k1}, {self.k2}")
        if self.calib_sets is not None and self.calib_sets < 1:
            raise InvalidParameterError("calib_sets must be positive")
        if self.pairs is not None and self.pairs not in ABID_PAIRS:
            raise InvalidParameterError(f"pairs must be one of {ABID_PAIRS}, got {self.pairs!r}")

    def params(self) -> dict[str, Any]:
        return {name: getattr(self, name) for name in _PARAMS[self.method]}

    def to_dict(self) -> dict[str, Any]:
        return {"method": self.method.value, **self.params()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EstimatorConfig":
        return cls(**d)

    def with_k(self, k: int) -> "EstimatorConfig":
        """Copy with the neighbourhood size replaced (CorrInt: ``k2 = k``, ``k1 = k // 2``)."""
        if self.method is Method.CORRINT:
            return EstimatorConfig(self.method, k1=max(1, k // 2), k2=k)
        return EstimatorConfig(**{**self.to_dict(), "k": k})


def neighbors_needed(config: EstimatorConfig) -> int:
    if config.method is Method.CORRINT:
        return config.k2
    if config.method is Method.DANCO:
        return config.k + 1
    return config.k


def _nan_to_none(v: float) -> float | None:
    return None if v is None or not math.isfinite(v) else float(v)


@dataclass
class LidResult:
    """Per-point estimates, their aggregates and bookkeeping.

    ``per_point`` is ``None`` for global methods (CorrInt, DANCo); otherwise
    NaN entries mark points where the estimator is undefined.
    """

    per_point: np.ndarray | None
    aggregates: dict[str, float]
    defined_count: int
    config: EstimatorConfig
    provenance: dict[str, Any] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def value(self) -> float:
        return self.aggregates["mean"]

    def to_dict(self, include_points: bool = False) -> dict[str, Any]:
        d = {
            "method": self.config.method.value,
            "params": self.config.params(),
            "aggregates": {k: _nan_to_none(v) for k, v in self.aggregates.items()},
            "defined_count": self.defined_count,
            "provenance": self.provenance,
            "meta": self.meta,
        }
        if include_points and self.per_point is not None:
            d["per_point"] = [_nan_to_none(v) for v in self.per_point]
        return d

    def to_json(self, include_points: bool = False) -> str:
        return json.dumps(self.to_dict(include_points), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "LidResult":
        config = EstimatorConfig(d["method"], **d["params"])
        pts = d.get("per_point")
        per_point = None if pts is None else np.array([np.nan if v is None else v for v in pts], dtype=float)
        aggs = {k: (np.nan if v is None else v) for k, v in d["aggregates"].items()}
        return cls(per_point, aggs, d["defined_count"], config, d.get("provenance", {}), d.get("meta", {}))


def _blocks(v: np.ndarray) -> list[np.ndarray]:
    nb = min(N_BLOCKS, v.size)
    size = v.size // nb
    return [v[i * size : (i + 1) * size] if i < nb - 1 else v[i * size :] for i in range(nb)]


def aggregate(per_point, how: str) -> float:
    """Aggregate the defined (finite) entries of ``per_point``; NaN if none are defined."""
    v = np.asarray(per_point, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return float("nan")
    if how == "mean":
        return float(v.mean())
    if how == "median":
        return float(np.median(v))
    if how == "mode":
        values, counts = np.unique(np.rint(v), return_counts=True)
        return float(values[np.argmax(counts)])
    if how == "median_of_means":
        return float(np.median([b.mean() for b in _blocks(v)]))
    if how == "mean_of_medians":
        return float(np.mean([np.median(b) for b in _blocks(v)]))
    raise InvalidParameterError(f"unknown aggregation {how!r}")


def aggregate_all(per_point) -> dict[str, float]:
    return {how: aggregate(per_point, how) for how in AGGREGATES}


def run_estimator(cloud, config: EstimatorConfig, table: NeighborTable | None = None,
                  s: RandomStream | None = None, threads: int | None = None) -> LidResult:
    """Run one estimator on a cloud (a :class:`PointCloud` or a plain array).

    ``table`` may be a precomputed neighbour table with at least as many
    columns as the method needs; ``s`` seeds DANCo's calibration.
    """
    x = np.asarray(getattr(cloud, "data", cloud), dtype=float)
    n = x.shape[0]
    need = neighbors_needed(config)
    if need > n - 1:
        raise InvalidParameterError(f"{config.method.value} needs {need} neighbours but N={n}")
    if table is None:
        table = knn(x, need, threads)
    elif table.k < need:
        raise InvalidParameterError(f"neighbour table has k={table.k}, need {need}")
    table = table.truncate(need)
    m = config.method
    meta: dict[str, Any] = {}
    if m in (Method.LPCA_MAXGAP, Method.LPCA_RATIO, Method.LPCA_FO):
        variant = m.value.split("-")[1]
        per_point = lpca_pointwise(x, table.indices, variant, config.epsilon)
        meta["center"] = "point"
    elif m is Method.MLE:
        per_point = mle_pointwise(table.distances)
        meta["convention"] = MLE_CONVENTION
    elif m is Method.TWONN:
        per_point = twonn_pointwise(table.distances, config.alpha)
    elif m is Method.ABID:
        per_point = abid_pointwise(x, table.indices, config.pairs)
    elif m is Method.CORRINT:
        per_point = None
        value = corrint_global(x, table.distances, config.k1, config.k2)
    else:
        per_point = None
        s = s or derive_stream(0, "danco")
        value = danco(x, table.indices, table.distances, config.k, config.calib_sets, s)
        meta["calibration_stream"] = s.label
    if per_point is None:
        aggs = {how: value for how in AGGREGATES}
        defined = n if math.isfinite(value) else 0
        meta["per_point"] = "not-applicable"
    else:
        aggs = aggregate_all(per_point)
        defined = int(np.isfinite(per_point).sum())
    provenance = cloud.metadata() if hasattr(cloud, "metadata") else {}
    return LidResult(per_point, aggs, defined, config, provenance, meta)
