"""Benchmark metrics: relative error, covariance statistics, manifold-ness, density."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import InvalidParameterError


@dataclass(frozen=True)
class RelativeError:
    delta: float
    d_hat: float
    d_i: int
    d_a: int


def relative_error(d_hat: float, d_i: int, d_a: int) -> RelativeError:
    """``delta = d_hat / d_i - 1``; NaN in, NaN out."""
    if d_i < 1 or d_a < d_i:
        raise InvalidParameterError(f"need 1 <= d_i <= d_a, got d_i={d_i}, d_a={d_a}")
    d_hat = float(d_hat) if d_hat is not None else float("nan")
    return RelativeError(d_hat / d_i - 1.0, d_hat, int(d_i), int(d_a))


@dataclass(frozen=True)
class CovStats:
    trace: float
    vdi: float
    r2_mean: float


def covariance_stats(cloud) -> CovStats:
    """Total variance, variance dispersion index and mean squared correlation.

    The covariance uses the ``1/(N-1)`` normalisation.  VDI is the
    population variance of the eigenvalues over their squared mean.  In the
    correlation average, coordinates with zero variance contribute 1 on the
    diagonal and 0 off it.
    """
    x = np.asarray(getattr(cloud, "data", cloud), dtype=float)
    if x.shape[0] < 2:
        raise InvalidParameterError("covariance needs N >= 2")
    d_a = x.shape[1]
    sigma = np.cov(x, rowvar=False).reshape(d_a, d_a)
    trace = float(np.trace(sigma))
    lam = np.clip(np.linalg.eigvalsh(sigma), 0.0, None)
    mean = lam.mean()
    vdi = float(lam.var() / mean**2) if mean > 0 else 0.0
    var = np.diag(sigma)
    live = var > 0
    denom = np.outer(var, var)
    r2 = np.zeros_like(sigma)
    both = np.outer(live, live)
    r2[both] = sigma[both] ** 2 / denom[both]
    np.fill_diagonal(r2, 1.0)
    return CovStats(trace, vdi, float(np.clip(r2, 0.0, 1.0).sum() / d_a**2))


def manifoldness_ratio(per_point) -> float:
    """Sample standard deviation of defined local estimates over their mean.

    Accepts a per-point array or anything with a ``per_point`` attribute.
    """
    v = np.asarray(getattr(per_point, "per_point", per_point), dtype=float)
    v = v[np.isfinite(v)]
    if v.size < 2:
        raise InvalidParameterError("manifold-ness ratio needs at least two defined estimates")
    mean = v.mean()
    if mean == 0:
        return float("nan")
    return float(v.std(ddof=1) / mean)


def unit_ball_volume(d: float) -> float:
    """Volume of the unit ball in ``d`` dimensions, ``pi^(d/2) / Gamma(d/2 + 1)``."""
    return float(math.exp(0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1)))


def local_density(distances: np.ndarray, d: float, n: int | None = None) -> np.ndarray:
    """Per-point density ``k / (N * Omega_d * T_k^d)`` from a neighbour distance table.

    The ``1/N`` makes the estimate a probability density.  Points whose
    ``k``-th neighbour sits at distance zero give NaN.
    """
    t = np.asarray(getattr(distances, "distances", distances), dtype=float)
    if d <= 0:
        raise InvalidParameterError(f"d must be positive, got {d}")
    n = t.shape[0] if n is None else n
    k = t.shape[1]
    tk = t[:, -1]
    with np.errstate(divide="ignore"):
        rho = k / (n * unit_ball_volume(d) * tk**d)
    rho[tk <= 0] = np.nan
    return rho


def sample_size_grid(d_i: int, ratio_min: float = 2.0, ratio_max: float = 300.0, points: int = 7) -> list[int]:
    """Sample sizes spaced logarithmically so that ``N / d_i`` runs over ``[ratio_min, ratio_max]``."""
    if d_i < 1 or not 0 < ratio_min < ratio_max or points < 2:
        raise InvalidParameterError("need d_i >= 1, 0 < ratio_min < ratio_max and points >= 2")
    grid = np.geomspace(ratio_min * d_i, ratio_max * d_i, points)
    return sorted({max(3, int(round(v))) for v in grid})


def sample_size_for_radius(k: int, d_i: float, radius: float, density: float = 1.0) -> int:
    """``N`` at which ``k`` neighbours fall inside ``radius`` for a density-``density`` manifold.

    From ``k / N = Omega_d * rho * T_k^d``; holding ``k / (N T_k^d)`` fixed
    while the radius shrinks needs exponentially more points in ``d_i``.
    """
    if k < 1 or radius <= 0 or density <= 0:
        raise InvalidParameterError("k, radius and density must be positive")
    return int(math.ceil(k / (unit_ball_volume(d_i) * density * radius**d_i)))
