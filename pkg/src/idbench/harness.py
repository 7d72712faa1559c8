"""Sweeps over (manifold, estimator, N, k, distortion, seed) cells.

A sweep expands a :class:`SweepConfig` into cells, groups the cells that
share a point cloud, runs the groups on a worker pool and writes one record
per cell.  Records come out in cell order no matter how many workers run,
and a cell's record depends only on its coordinates, so any cell can be
recomputed on its own.  Failures become records with an ``error`` field.
"""
from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Iterator

import numpy as np

from .analysis import covariance_stats, relative_error
from .errors import IdBenchError, InvalidParameterError
from .estimators import AGGREGATES, EstimatorConfig, Method, neighbors_needed, run_estimator
from .linalg import derive_stream
from .manifolds import ManifoldSpec, PointCloud, sample
from .neighbors import default_threads, knn
from .perturb import NoiseSpec, add_noise, squeeze

SCHEMA_VERSION = 1

CSV_FIELDS = (
    "family", "n", "k_param", "k1", "k2", "d_i", "d_a", "N", "k", "method", "alpha", "epsilon_lpca",
    "distortion", "sigma2", "noise_kind", "seed", "agg_mean", "agg_median", "agg_mode", "agg_mom", "agg_mem",
    "delta_mean", "defined_count", "trace", "vdi", "r2", "wall_ms",
)
#: Columns that identify a cell; everything else is a measurement.
COORD_FIELDS = CSV_FIELDS[:16]
_INT_FIELDS = {"n", "k_param", "k1", "k2", "d_i", "d_a", "N", "k", "seed", "defined_count"}
_STR_FIELDS = {"family", "method", "distortion", "noise_kind"}
_AGG_COLUMNS = dict(zip(AGGREGATES, ("agg_mean", "agg_median", "agg_mode", "agg_mom", "agg_mem")))

DEFAULT_N_GRID = (100, 215, 464, 1000, 2154, 4642, 10000)
DEFAULT_RATIOS = (0.08, 0.1, 0.15, 0.2, 0.5, 0.99)
DEFAULT_SEEDS = (0, 1, 2)
# DANCo is far costlier than the rest, so sweeps give it a reduced grid by default
DANCO_MAX_N = 2000
DANCO_K_GRID = (10, 20)


class SweepKind(str, enum.Enum):
    FIX_K_SWEEP_N = "fixk-sweepn"
    FIX_N_SWEEP_K = "fixn-sweepk"
    FIX_RATIO_SWEEP_N = "fixratio-sweepn"


def log_grid(lo: int, hi: int, points: int) -> list[int]:
    """Distinct integers spaced logarithmically from ``lo`` to ``hi`` inclusive."""
    return sorted({int(round(v)) for v in np.geomspace(lo, hi, points)})


# --------------------------------------------------------------- distortions

@dataclass(frozen=True)
class Distortion:
    """One entry of the distortion schedule: nothing, a squeeze, or additive noise."""

    kind: str = "none"
    epsilon: float | None = None
    noise_kind: str | None = None
    sigma2: float | None = None

    def __post_init__(self):
        if self.kind == "squeeze":
            if self.epsilon is None:
                raise InvalidParameterError("squeeze needs epsilon")
        elif self.kind == "noise":
            NoiseSpec(self.noise_kind, self.sigma2)
        elif self.kind != "none":
            raise InvalidParameterError(f"unknown distortion {self.kind!r}")

    @property
    def label(self) -> str:
        if self.kind == "squeeze":
            return f"squeeze(eps={_fmt(self.epsilon)})"
        if self.kind == "noise":
            return "noise"
        return "none"

    def apply(self, cloud: PointCloud, seed: int, spec_label: str) -> PointCloud:
        if self.kind == "squeeze":
            return squeeze(cloud, self.epsilon, derive_stream(seed, f"squeeze/{spec_label}"))
        if self.kind == "noise":
            s = derive_stream(seed, f"noise/{spec_label}/{self.noise_kind}")
            return add_noise(cloud, NoiseSpec(self.noise_kind, self.sigma2), s)
        return cloud

    def to_dict(self) -> dict[str, Any]:
        return {k: v for k, v in (("kind", self.kind), ("epsilon", self.epsilon),
                                  ("noise_kind", self.noise_kind), ("sigma2", self.sigma2)) if v is not None}

    @classmethod
    def from_log(cls, log: Iterable[dict]) -> "Distortion":
        """Summarise a cloud's distortion log (the latest squeeze and noise entries win)."""
        d = cls()
        for e in log:
            if e.get("kind") == "squeeze" and d.kind == "none":
                d = cls("squeeze", epsilon=e["epsilon"])
            elif e.get("kind") == "noise":
                d = cls("noise", noise_kind=e["noise_kind"], sigma2=e["sigma2"])
        return d


def _fmt(v: float) -> str:
    return repr(float(v))


# --------------------------------------------------------------------- cells

@dataclass(frozen=True)
class Cell:
    spec: ManifoldSpec
    config: EstimatorConfig
    N: int
    distortion: Distortion
    seed: int
    ordinal: int = field(default=0, compare=False)

    @property
    def k(self) -> int:
        return self.config.k2 if self.config.method is Method.CORRINT else self.config.k

    def coords(self) -> dict[str, Any]:
        spec = self.spec
        is_noise = self.distortion.kind == "noise"
        return {
            "family": spec.family.value,
            "n": spec.n,
            "k_param": spec.k,
            "k1": spec.k1,
            "k2": spec.k2,
            "d_i": spec.d_i,
            "d_a": spec.d_a,
            "N": self.N,
            "k": self.k,
            "method": self.config.method.value,
            "alpha": self.config.alpha,
            "epsilon_lpca": self.config.epsilon,
            "distortion": self.distortion.label,
            "sigma2": self.distortion.sigma2 if is_noise else None,
            "noise_kind": self.distortion.noise_kind if is_noise else None,
            "seed": self.seed,
        }

    @property
    def digest(self) -> str:
        return coord_digest(self.coords())

    @property
    def cloud_key(self) -> tuple:
        return (self.spec, self.N, self.distortion, self.seed)


def coord_digest(coords: dict[str, Any]) -> str:
    text = "\x1f".join(_csv_value(coords.get(name)) for name in COORD_FIELDS)
    return hashlib.sha256(text.encode()).hexdigest()[:24]


def clamp_config(config: EstimatorConfig, N: int) -> EstimatorConfig:
    """Shrink the neighbourhood when it would not fit in ``N`` points.

    ``k`` becomes ``N - 2``; for CorrInt ``k2 = N - 2`` and ``k1 = k2 // 2``.
    DANCo needs one extra neighbour, so its ``k`` stops at ``N - 3``.
    """
    limit = N - 2
    m = config.method
    if m is Method.CORRINT:
        if config.k2 > limit:
            return EstimatorConfig(m, k1=max(1, limit // 2), k2=limit)
        return config
    if m is Method.DANCO:
        limit = N - 3
    if config.k is not None and config.k > limit:
        return replace(config, k=limit)
    return config


# -------------------------------------------------------------------- config

def _spec_from(d: dict | ManifoldSpec) -> ManifoldSpec:
    if isinstance(d, ManifoldSpec):
        return d
    d = dict(d)
    if "d_i" in d and "d_i_override" not in d:
        d["d_i_override"] = d.pop("d_i")
    if "d_a" in d and "ambient_target" not in d:
        d["ambient_target"] = d.pop("d_a")
    return ManifoldSpec.from_dict(d)


def _config_from(d: dict | EstimatorConfig) -> EstimatorConfig:
    return d if isinstance(d, EstimatorConfig) else EstimatorConfig.from_dict(dict(d))


@dataclass
class SweepConfig:
    """Everything needed to enumerate a sweep.

    ``squeeze`` and ``noise`` extend the distortion schedule; the clean cloud
    is included unless ``include_clean`` is false.  ``k_grid`` is used by
    ``fixn-sweepk`` and ``ratios`` by ``fixratio-sweepn``; ``fixk-sweepn``
    keeps each estimator's own ``k``.
    """

    specs: list[ManifoldSpec]
    estimators: list[EstimatorConfig]
    kind: SweepKind = SweepKind.FIX_K_SWEEP_N
    n_grid: list[int] = field(default_factory=lambda: list(DEFAULT_N_GRID))
    k_grid: list[int] = field(default_factory=lambda: [100])
    ratios: list[float] = field(default_factory=lambda: list(DEFAULT_RATIOS))
    squeeze: list[float] = field(default_factory=list)
    noise: list[dict] = field(default_factory=list)
    include_clean: bool = True
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    output: str | None = None
    danco_max_n: int | None = DANCO_MAX_N
    danco_k_grid: list[int] = field(default_factory=lambda: list(DANCO_K_GRID))

    def __post_init__(self):
        self.kind = SweepKind(self.kind)
        self.specs = [_spec_from(s) for s in self.specs]
        self.estimators = [_config_from(e) for e in self.estimators]
        for name in ("specs", "estimators", "n_grid", "seeds"):
            if not getattr(self, name):
                raise InvalidParameterError(f"sweep needs a non-empty {name}")
        if self.kind is SweepKind.FIX_N_SWEEP_K and not self.k_grid:
            raise InvalidParameterError("fixn-sweepk needs a non-empty k_grid")
        if self.kind is SweepKind.FIX_RATIO_SWEEP_N and not self.ratios:
            raise InvalidParameterError("fixratio-sweepn needs a non-empty ratios list")
        if any(int(n) != n or n < 3 for n in self.n_grid):
            raise InvalidParameterError("every N must be an integer >= 3")
        if not self.distortions():
            raise InvalidParameterError("the distortion schedule is empty")
        seen = set()
        for e in self.estimators:
            key = (e.method, e.k, e.k2, e.alpha, e.epsilon)
            if key in seen:
                raise InvalidParameterError(f"estimators {e.to_dict()} collide in the record columns")
            seen.add(key)

    def distortions(self) -> list[Distortion]:
        out = [Distortion()] if self.include_clean else []
        out += [Distortion("squeeze", epsilon=float(e)) for e in self.squeeze]
        out += [Distortion("noise", noise_kind=d["kind"], sigma2=float(d["sigma2"])) for d in self.noise]
        return out

    def grid(self, config: EstimatorConfig) -> list[tuple[int, EstimatorConfig]]:
        n_grid, k_grid = self.n_grid, self.k_grid
        if config.method is Method.DANCO:
            if self.danco_max_n is not None:
                n_grid = [N for N in n_grid if N <= self.danco_max_n]
            k_grid = self.danco_k_grid
        if self.kind is SweepKind.FIX_K_SWEEP_N:
            return [(N, config) for N in n_grid]
        if self.kind is SweepKind.FIX_N_SWEEP_K:
            return [(N, config.with_k(int(k))) for N in n_grid for k in k_grid]
        return [(N, config.with_k(max(2, int(round(r * N))))) for r in self.ratios for N in n_grid]

    def cells(self) -> list[Cell]:
        out = []
        for spec in self.specs:
            for est in self.estimators:
                for N, cfg in self.grid(est):
                    try:
                        cfg = clamp_config(cfg, N)
                    except IdBenchError:
                        pass  # surfaces as an error record when the cell runs
                    for dist in self.distortions():
                        for seed in self.seeds:
                            out.append(Cell(spec, cfg, int(N), dist, int(seed), len(out)))
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "specs": [s.to_dict() for s in self.specs],
            "estimators": [e.to_dict() for e in self.estimators],
            "kind": self.kind.value,
            "n_grid": list(self.n_grid),
            "k_grid": list(self.k_grid),
            "ratios": list(self.ratios),
            "squeeze": list(self.squeeze),
            "noise": list(self.noise),
            "include_clean": self.include_clean,
            "seeds": list(self.seeds),
            "output": self.output,
            "danco_max_n": self.danco_max_n,
            "danco_k_grid": list(self.danco_k_grid),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SweepConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidParameterError(f"unknown sweep config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "SweepConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ------------------------------------------------------------------- records

def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def make_record(coords: dict[str, Any], params: dict[str, Any], result=None, cov=None, wall_ms=None,
                error: str | None = None) -> dict[str, Any]:
    rec: dict[str, Any] = {"schema": SCHEMA_VERSION, "digest": coord_digest(coords)}
    rec.update(coords)
    aggs = result.aggregates if result is not None else {}
    for how, col in _AGG_COLUMNS.items():
        rec[col] = _num(aggs.get(how))
    d_i, d_a = coords["d_i"], coords["d_a"]
    rec["delta_mean"] = _num(relative_error(rec["agg_mean"], d_i, d_a).delta) if rec["agg_mean"] is not None else None
    rec["defined_count"] = result.defined_count if result is not None else None
    rec["trace"] = _num(cov.trace) if cov is not None else None
    rec["vdi"] = _num(cov.vdi) if cov is not None else None
    rec["r2"] = _num(cov.r2_mean) if cov is not None else None
    rec["wall_ms"] = _num(wall_ms)
    rec["params"] = params
    rec["delta"] = {how: (None if rec[col] is None else _num(relative_error(rec[col], d_i, d_a).delta))
                    for how, col in _AGG_COLUMNS.items()}
    rec["error"] = error
    return rec


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def _parse_value(name: str, text: str):
    if text == "":
        return None
    if name in _STR_FIELDS:
        return text
    if name in _INT_FIELDS:
        return int(text)
    return float(text)


def record_to_csv_row(rec: dict[str, Any]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow([_csv_value(rec.get(name)) for name in CSV_FIELDS])
    return buf.getvalue()


def csv_row_to_record(row: list[str] | str) -> dict[str, Any]:
    if isinstance(row, str):
        row = next(csv.reader([row]))
    if len(row) != len(CSV_FIELDS):
        raise InvalidParameterError(f"expected {len(CSV_FIELDS)} columns, got {len(row)}")
    return {name: _parse_value(name, text) for name, text in zip(CSV_FIELDS, row)}


def record_to_json(rec: dict[str, Any]) -> str:
    return json.dumps(rec, allow_nan=False, separators=(",", ":")) + "\n"


def csv_header() -> str:
    return ",".join(CSV_FIELDS) + "\n"


# ----------------------------------------------------------------- execution

def _run_group(cells: list[Cell], timing: bool, knn_threads: int = 1) -> list[dict[str, Any]]:
    """Build the shared cloud once and evaluate every cell on it."""
    first = cells[0]
    spec, N, dist, seed = first.cloud_key
    records = []
    try:
        cloud = sample(spec, N, derive_stream(seed, f"cloud/{spec.label}"))
        cloud = dist.apply(cloud, seed, spec.label)
        cov = covariance_stats(cloud)
    except Exception as exc:  # noqa: BLE001 -- any failure becomes a record
        msg = f"{type(exc).__name__}: {exc}"
        return [make_record(c.coords(), c.config.params(), error=msg) for c in cells]
    need = []
    for c in cells:
        try:
            need.append(neighbors_needed(c.config))
        except Exception:  # noqa: BLE001
            need.append(0)
    fit = [n for n in need if 1 <= n <= N - 1]
    table = knn(cloud.data, max(fit), threads=knn_threads) if fit else None
    for c in cells:
        t0 = time.perf_counter()
        try:
            result = run_estimator(cloud, c.config, table=table, s=derive_stream(seed, "danco"))
            wall = (time.perf_counter() - t0) * 1e3 if timing else None
            records.append(make_record(c.coords(), c.config.params(), result, cov, wall))
        except Exception as exc:  # noqa: BLE001
            records.append(make_record(c.coords(), c.config.params(), cov=cov, error=f"{type(exc).__name__}: {exc}"))
    return records


def run_cell(cell: Cell, timing: bool = False) -> dict[str, Any]:
    """Recompute one record from its coordinates alone."""
    return _run_group([cell], timing)[0]


def _groups(cells: list[Cell]) -> list[list[Cell]]:
    groups: dict[tuple, list[Cell]] = {}
    for c in cells:
        groups.setdefault(c.cloud_key, []).append(c)
    return sorted(groups.values(), key=lambda g: g[0].ordinal)


def iter_records(cells: list[Cell], threads: int | None = None, timing: bool = False) -> Iterator[dict[str, Any]]:
    """Yield records in cell order; groups run concurrently on ``threads`` workers."""
    threads = threads or default_threads()
    groups = _groups(cells)
    order = [c.ordinal for c in sorted(cells, key=lambda c: c.ordinal)]
    pending: dict[int, dict[str, Any]] = {}
    pos = 0

    def drain():
        nonlocal pos
        while pos < len(order) and order[pos] in pending:
            yield pending.pop(order[pos])
            pos += 1

    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for group, recs in zip(groups, pool.map(lambda g: _run_group(g, timing), groups)):
                pending.update({c.ordinal: r for c, r in zip(group, recs)})
                yield from drain()
    else:
        for group in groups:
            pending.update({c.ordinal: r for c, r in zip(group, _run_group(group, timing, threads))})
            yield from drain()


def completed_digests(path: Path, fmt: str) -> set[str]:
    if not path.exists() or path.stat().st_size == 0:
        return set()
    if fmt == "jsonl":
        done = set()
        with path.open() as fh:
            for line in fh:
                if line.strip():
                    done.add(json.loads(line)["digest"])
        return done
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(CSV_FIELDS):
            raise InvalidParameterError(f"{path} does not carry the expected CSV header")
        return {coord_digest(csv_row_to_record(row)) for row in reader if row}


def run_sweep(config: SweepConfig, output: str | Path | None = None, fmt: str = "jsonl",
              threads: int | None = None, timing: bool = False, resume: bool = True) -> list[dict[str, Any]]:
    """Run a sweep; with an output path, records are appended as they complete.

    Cells whose digest already appears in the output are skipped when
    ``resume`` is set.  Returns the newly computed records.
    """
    if fmt not in ("jsonl", "csv"):
        raise InvalidParameterError(f"unknown format {fmt!r}")
    out_path = Path(output or config.output) if (output or config.output) else None
    cells = config.cells()
    done = completed_digests(out_path, fmt) if (out_path and resume) else set()
    todo = [c for c in cells if c.digest not in done]
    records = []
    if out_path is None:
        return list(iter_records(todo, threads, timing))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fresh = not resume or not out_path.exists() or out_path.stat().st_size == 0
    with out_path.open("w" if fresh else "a", newline="") as fh:
        if fresh and fmt == "csv":
            fh.write(csv_header())
        for rec in iter_records(todo, threads, timing):
            fh.write(record_to_json(rec) if fmt == "jsonl" else record_to_csv_row(rec))
            fh.flush()
            records.append(rec)
    return records


def cloud_coords(cloud: PointCloud, config: EstimatorConfig, seed: int) -> dict[str, Any]:
    """Record coordinates for an estimate on a stand-alone cloud (e.g. one loaded from disk)."""
    spec = cloud.spec if isinstance(cloud.spec, ManifoldSpec) else None
    dist = Distortion.from_log(cloud.distortions)
    cell_k = config.k2 if config.method is Method.CORRINT else config.k
    is_noise = dist.kind == "noise"
    d_i = cloud.d_i
    return {
        "family": spec.family.value if spec else str(cloud.spec),
        "n": spec.n if spec else None,
        "k_param": spec.k if spec else None,
        "k1": spec.k1 if spec else None,
        "k2": spec.k2 if spec else None,
        "d_i": int(d_i) if d_i is not None and float(d_i).is_integer() else d_i,
        "d_a": cloud.d_a,
        "N": cloud.N,
        "k": cell_k,
        "method": config.method.value,
        "alpha": config.alpha,
        "epsilon_lpca": config.epsilon,
        "distortion": dist.label,
        "sigma2": dist.sigma2 if is_noise else None,
        "noise_kind": dist.noise_kind if is_noise else None,
        "seed": seed,
    }


def estimate_record(cloud: PointCloud, config: EstimatorConfig, seed: int = 0, threads: int | None = None,
                    timing: bool = False) -> dict[str, Any]:
    t0 = time.perf_counter()
    result = run_estimator(cloud, config, s=derive_stream(seed, "danco"), threads=threads)
    wall = (time.perf_counter() - t0) * 1e3 if timing else None
    return make_record(cloud_coords(cloud, config, seed), config.params(), result, covariance_stats(cloud), wall)


__all__ = [
    "SCHEMA_VERSION", "CSV_FIELDS", "SweepKind", "SweepConfig", "Distortion", "Cell", "clamp_config", "log_grid",
    "make_record", "record_to_csv_row", "csv_row_to_record", "record_to_json", "csv_header", "run_cell",
    "run_sweep", "iter_records", "estimate_record",
]
