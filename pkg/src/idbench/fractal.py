"""Hofstadter butterfly point cloud, box counting, and fractional-LID probes."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .estimators import EstimatorConfig, Method, run_estimator
from .linalg import RandomStream
from .manifolds import PointCloud
from .neighbors import knn

log = logging.getLogger(__name__)

Q_MAX_LIMIT = 200
#: Fit residual (RMS, natural-log units) above which the extreme scales are dropped.
RESIDUAL_LIMIT = 0.05
FRACTIONAL_METHODS = (Method.MLE, Method.ABID, Method.CORRINT)


@dataclass(frozen=True)
class FractalCloud:
    """Butterfly points as ``(flux, E / 4)`` pairs."""

    points: np.ndarray
    q_max: int
    k_grid: int

    def unit_square(self) -> np.ndarray:
        """Points mapped affinely into ``[0, 1]^2``."""
        return np.column_stack([self.points[:, 0], (self.points[:, 1] + 1.0) / 2.0])

    def to_point_cloud(self, dimension: float | None = None) -> PointCloud:
        meta = {"non_manifold": True, "q_max": self.q_max, "k_grid": self.k_grid}
        return PointCloud(self.points, float("nan") if dimension is None else dimension, "hofstadter",
                          lineage=f"hofstadter(q_max={self.q_max},k_grid={self.k_grid})", meta=meta)


def harper_hamiltonians(p: int, q: int, k1: np.ndarray, k2: np.ndarray) -> np.ndarray:
    """Bloch Hamiltonians at flux ``p/q`` for paired momenta ``(k1[i], k2[i])``, shape ``(B, q, q)``."""
    k1, k2 = np.asarray(k1, dtype=float), np.asarray(k2, dtype=float)
    m = np.arange(q)
    h = np.zeros((k1.size, q, q), dtype=complex)
    h[:, m, m] = 2.0 * np.cos(2.0 * np.pi * p * m[None, :] / q + k2[:, None])
    if q == 1:
        h[:, 0, 0] += 2.0 * np.cos(k1)
        return h
    h[:, m[:-1], m[1:]] += 1.0
    h[:, m[1:], m[:-1]] += 1.0
    # the magnetic unit cell closes with a Bloch phase
    h[:, 0, q - 1] += np.exp(-1j * q * k1)
    h[:, q - 1, 0] += np.exp(1j * q * k1)
    return h


def hofstadter_cloud(q_max: int = 50, k_grid: int = 8) -> FractalCloud:
    """Spectrum of the Harper model for every reduced flux ``p/q`` with ``q <= q_max``.

    Momenta run over a ``k_grid x k_grid`` grid on ``[0, 2 pi / q)^2``.  Points
    are ordered by ``(q, p, k-index)`` and de-duplicated on
    ``(flux, round(E/4 * 1e6))``, keeping the first occurrence.
    """
    if int(q_max) != q_max or not 1 <= q_max <= Q_MAX_LIMIT:
        raise InvalidParameterError(f"q_max must be an integer in [1, {Q_MAX_LIMIT}], got {q_max}")
    if int(k_grid) != k_grid or k_grid < 1:
        raise InvalidParameterError(f"k_grid must be a positive integer, got {k_grid}")
    frac = np.arange(k_grid) / k_grid
    g1, g2 = np.meshgrid(frac, frac, indexing="ij")
    g1, g2 = g1.ravel(), g2.ravel()
    chunks = []
    for q in range(1, q_max + 1):
        step = 2.0 * np.pi / q
        for p in range(q + 1):
            if math.gcd(p, q) != 1:
                continue
            e = np.linalg.eigvalsh(harper_hamiltonians(p, q, g1 * step, g2 * step)).ravel()
            chunks.append(np.column_stack([np.full(e.size, p / q), e / 4.0]))
    pts = np.vstack(chunks)
    key = np.column_stack([pts[:, 0], np.rint(pts[:, 1] * 1e6)])
    _, first = np.unique(key, axis=0, return_index=True)
    return FractalCloud(pts[np.sort(first)], int(q_max), int(k_grid))


@dataclass(frozen=True)
class BoxCountResult:
    scales: np.ndarray
    counts: np.ndarray
    dimension: float
    fit_residual: float
    used: np.ndarray = field(repr=False)
    excluded_extremes: bool = False


def occupied_boxes(points: np.ndarray, j: int) -> int:
    """Number of boxes of side ``2^-j`` on the unit grid containing at least one point."""
    n_side = 1 << j
    idx = np.minimum(np.floor(points * n_side).astype(np.int64), n_side - 1)
    flat = idx[:, 0] * n_side + idx[:, 1]
    return int(np.unique(flat).size)


def _fit(log_inv_eps: np.ndarray, log_n: np.ndarray) -> tuple[float, float]:
    slope, icept = np.polyfit(log_inv_eps, log_n, 1)
    resid = log_n - (slope * log_inv_eps + icept)
    return float(slope), float(np.sqrt(np.mean(resid**2)))


def box_count_dimension(points: np.ndarray, j_min: int = 3, j_max: int = 8) -> BoxCountResult:
    """Box-counting dimension of a planar cloud already scaled into ``[0, 1]^2``.

    Fits ``log N(eps)`` against ``log(1/eps)`` for ``eps = 2^-j``.  When the
    RMS residual exceeds :data:`RESIDUAL_LIMIT` and at least three scales
    would remain, the coarsest and finest scales are dropped and the fit is
    repeated.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidParameterError("box counting expects an (M, 2) array")
    if pts.size and (pts.min() < 0 or pts.max() > 1):
        raise InvalidParameterError("points must lie in the unit square")
    if not 2 <= j_min < j_max <= 12:
        raise InvalidParameterError(f"need 2 <= j_min < j_max <= 12, got {j_min}, {j_max}")
    if j_max - j_min + 1 < 3:
        raise InvalidParameterError("box counting needs at least three scales")
    js = np.arange(j_min, j_max + 1)
    counts = np.array([occupied_boxes(pts, j) for j in js])
    x, y = js * np.log(2.0), np.log(counts)
    used = np.ones(js.size, dtype=bool)
    slope, resid = _fit(x, y)
    excluded = False
    if resid > RESIDUAL_LIMIT and js.size - 2 >= 3:
        used[[0, -1]] = False
        slope, resid = _fit(x[used], y[used])
        excluded = True
        log.info("box counting: residual above %.2f, dropped scales 2^-%d and 2^-%d", RESIDUAL_LIMIT, js[0], js[-1])
    return BoxCountResult(2.0 ** -js.astype(float), counts, slope, resid, used, excluded)


def corrint_pointwise(x: np.ndarray, k: int, k1: int = 10, k2: int = 20) -> np.ndarray:
    """Correlation dimension inside each point's ``k``-neighbourhood (point included).

    Ranks are capped to fit the neighbourhood: ``k2 <= k`` and ``k1 < k2``.
    Neighbourhoods where the estimate is undefined give NaN.
    """
    x = np.asarray(x, dtype=float)
    k2 = min(k2, k)
    k1 = max(1, min(k1, k2 // 2))
    if k1 >= k2:
        raise InvalidParameterError(f"k={k} is too small for pointwise CorrInt")
    table = knn(x, k)
    nb = np.concatenate([np.arange(x.shape[0])[:, None], table.indices], axis=1)
    m = k + 1
    iu = np.triu_indices(m, 1)
    out = np.empty(x.shape[0])
    step = max(1, 2_000_000 // (m * m))
    for s in range(0, x.shape[0], step):
        p = x[nb[s : s + step]]
        d = np.sqrt(np.sum((p[:, :, None, :] - p[:, None, :, :]) ** 2, axis=-1))
        ranked = np.sort(d, axis=2)  # column 0 is the self-distance
        r1 = np.median(ranked[:, :, k1], axis=1)
        r2 = np.median(ranked[:, :, k2], axis=1)
        pairs = d[:, iu[0], iu[1]]
        c1 = np.sum(pairs <= r1[:, None], axis=1)
        c2 = np.sum(pairs <= r2[:, None], axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.log(c2 / c1) / np.log(r2 / r1)
        v[(c1 == 0) | (r1 <= 0) | (r1 == r2)] = np.nan
        out[s : s + step] = v
    return out


@dataclass(frozen=True)
class SuiteRow:
    method: str
    k: int
    mean: float
    std: float
    defined: int


def fractal_lid_suite(points: np.ndarray, ks=(5, 10, 20, 50, 100), n_subsample: int = 1000,
                      methods=FRACTIONAL_METHODS, s: RandomStream | None = None) -> list[SuiteRow]:
    """Mean and sample std of local estimates on a uniform subsample, per method and ``k``."""
    pts = np.asarray(points, dtype=float)
    if s is None:
        raise InvalidParameterError("a random stream is required for subsampling")
    if n_subsample > pts.shape[0]:
        raise InvalidParameterError(f"cannot subsample {n_subsample} of {pts.shape[0]} points")
    methods = [Method(m) for m in methods]
    for m in methods:
        if m not in FRACTIONAL_METHODS:
            raise InvalidParameterError(f"{m.value} does not return fractional estimates")
    sub = pts[np.sort(s.child("subsample").rng.choice(pts.shape[0], n_subsample, replace=False))]
    table = knn(sub, max(ks))
    rows = []
    for m in methods:
        for k in ks:
            if m is Method.CORRINT:
                v = corrint_pointwise(sub, k)
            else:
                v = run_estimator(sub, EstimatorConfig(m, k=k), table=table).per_point
            v = v[np.isfinite(v)]
            rows.append(SuiteRow(m.value, int(k), float(v.mean()) if v.size else float("nan"),
                                 float(v.std(ddof=1)) if v.size > 1 else float("nan"), int(v.size)))
    return rows
