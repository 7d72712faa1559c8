"""DANCo: match neighbour-distance and neighbour-angle statistics to calibrated balls.

Two statistics summarise a cloud:

* ``d_ml``: maximum-likelihood fit of ``d`` to the normalised nearest
  distances ``r = T_1 / T_{k+1}`` under ``g(r) = k d r^(d-1) (1 - r^d)^(k-1)``;
* ``(nu, tau)``: mean direction and concentration of a von Mises model
  fitted to the pairwise angles between the ``k`` neighbour offsets of each
  point, averaged over points.

For each candidate ``d`` the same statistics are measured on synthetic
neighbourhoods drawn uniformly from the unit ``d``-ball.  The estimate is the
candidate minimising the sum of the two Kullback-Leibler divergences.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar
from scipy.special import i0e, i1e

from ..errors import InvalidParameterError, ResourceLimitError
from ..linalg import RandomStream

D_CAP = 100
#: Upper bound on the number of calibration coordinates drawn in one call.
CALIB_BUDGET = 500_000_000
_LOG_D_BOUNDS = (np.log(1e-3), np.log(1e4))


def _log_g_sum(d: float, logr: np.ndarray, log1m: callable, k: int) -> float:
    return logr.size * np.log(k * d) + (d - 1) * logr.sum() + (k - 1) * log1m(d)


def fit_distance_dim(r: np.ndarray, k: int) -> float:
    """ML estimate of ``d`` from normalised distances ``r`` in ``(0, 1)``."""
    r = np.asarray(r, dtype=float)
    r = r[(r > 0) & (r < 1)]
    if r.size == 0:
        return float("nan")
    logr = np.log(r)

    def nll(t):
        d = np.exp(t)
        return -_log_g_sum(d, logr, lambda dd: np.log1p(-np.exp(dd * logr)).sum(), k)

    res = minimize_scalar(nll, bounds=_LOG_D_BOUNDS, method="bounded", options={"xatol": 1e-8})
    return float(np.exp(res.x))


def kl_distance(d1: float, d2: float, k: int) -> float:
    """KL divergence between ``g(.; k, d1)`` and ``g(.; k, d2)``.

    With ``u = r^d1 ~ Beta(1, k)`` every term reduces to a digamma identity
    except ``E log(1 - u^(d2/d1))``, which is integrated numerically.
    """
    a = d2 / d1
    harmonic = float(np.sum(1.0 / np.arange(1, k + 1)))

    def integrand(u):
        return k * (1 - u) ** (k - 1) * np.log1p(-(u**a)) if u < 1 else 0.0

    e_log, _ = quad(integrand, 0.0, 1.0, limit=200)
    return float(np.log(d1 / d2) - (d1 - d2) * harmonic / d1 + (k - 1) * (-1.0 / k - e_log))


def _log_i0(x):
    return np.log(i0e(x)) + x


def bessel_ratio(tau):
    """``A(tau) = I_1(tau) / I_0(tau)``."""
    return i1e(tau) / i0e(tau)


def inverse_bessel_ratio(rbar: np.ndarray, iters: int = 8) -> np.ndarray:
    """Solve ``A(tau) = rbar`` (Best-Fisher start, Newton polish)."""
    r = np.clip(np.asarray(rbar, dtype=float), 0.0, 1 - 1e-12)
    tau = np.where(
        r < 0.53,
        2 * r + r**3 + 5 * r**5 / 6,
        np.where(r < 0.85, -0.4 + 1.39 * r + 0.43 / (1 - r), 1 / (r**3 - 4 * r**2 + 3 * r)),
    )
    for _ in range(iters):
        a = bessel_ratio(tau)
        # A'(tau) = 1 - A/tau - A^2
        da = 1 - np.divide(a, tau, out=np.full_like(a, 0.5), where=tau > 0) - a * a
        tau = np.maximum(tau - (a - r) / np.maximum(da, 1e-300), 0.0)
    return tau


def kl_von_mises(nu1: float, tau1: float, nu2: float, tau2: float) -> float:
    return float(_log_i0(tau2) - _log_i0(tau1) + bessel_ratio(tau1) * (tau1 - tau2 * np.cos(nu1 - nu2)))


def _angle_fits(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = v.shape[1]
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    u = v / np.where(norms > 0, norms, 1.0)
    iu = np.triu_indices(k, 1)
    g = u @ np.swapaxes(u, -1, -2)
    theta = np.arccos(np.clip(g[:, iu[0], iu[1]], -1.0, 1.0))
    c, sn = np.cos(theta).mean(axis=1), np.sin(theta).mean(axis=1)
    return np.arctan2(sn, c), inverse_bessel_ratio(np.hypot(c, sn))


def _chunk(k: int, dim: int) -> int:
    return max(1, 4_000_000 // (k * max(k, dim)))


def angle_stats(offsets: np.ndarray) -> tuple[float, float]:
    """Mean von Mises ``(nu, tau)`` over neighbourhoods of shape ``(B, k, D)``."""
    v = np.asarray(offsets, dtype=float)
    step = _chunk(v.shape[1], v.shape[2])
    fits = [_angle_fits(v[s : s + step]) for s in range(0, v.shape[0], step)]
    return float(np.mean(np.concatenate([f[0] for f in fits]))), float(np.mean(np.concatenate([f[1] for f in fits])))


def ball_neighborhoods(d: int, count: int, k: int, s: RandomStream) -> tuple[np.ndarray, np.ndarray]:
    """``count`` sets of ``k + 1`` points uniform in the unit ``d``-ball about the origin.

    Returns the points and their radii, both ordered by increasing radius.
    """
    z = s.normal((count, k + 1, d))
    z /= np.linalg.norm(z, axis=-1, keepdims=True)
    rad = np.sort(s.uniform(size=(count, k + 1)) ** (1.0 / d), axis=1)
    return z * rad[..., None], rad


@lru_cache(maxsize=512)
def _calibration(seed: int, label: str, k: int, d: int, calib_sets: int) -> tuple[float, float, float]:
    s = RandomStream(seed, label).child(f"danco/calib/{d}")
    pts, rad = ball_neighborhoods(d, calib_sets, k, s)
    # the (k+1)-th radius normalises; the k closer points are the neighbours
    nu, tau = angle_stats(pts[:, :k])
    r = rad[:, 0] / rad[:, k]
    return fit_distance_dim(r, k), nu, tau


def calibration(d: int, k: int, calib_sets: int, s: RandomStream) -> tuple[float, float, float]:
    """``(d_ml, nu, tau)`` measured on uniform ``d``-ball neighbourhoods; cached."""
    return _calibration(s.master_seed, s.label, k, d, calib_sets)


def danco(x: np.ndarray, indices: np.ndarray, distances: np.ndarray, k: int, calib_sets: int,
          s: RandomStream, d_cap: int = D_CAP) -> float:
    """Global DANCo estimate; the table must hold at least ``k + 1`` neighbours."""
    x = np.asarray(x, dtype=float)
    n, d_a = x.shape
    if k < 5:
        raise InvalidParameterError(f"DANCo needs k >= 5, got {k}")
    if n <= k + 1:
        raise InvalidParameterError(f"DANCo needs N > k + 1 (N={n}, k={k})")
    if distances.shape[1] < k + 1:
        raise InvalidParameterError(f"DANCo needs a table with k + 1 = {k + 1} columns")
    if calib_sets < 1:
        raise InvalidParameterError("calib_sets must be positive")
    top = min(d_a, d_cap)
    draws = calib_sets * (k + 1) * top * (top + 1) // 2
    if draws > CALIB_BUDGET:
        raise ResourceLimitError(f"DANCo calibration needs {draws} coordinates (budget {CALIB_BUDGET})")
    with np.errstate(divide="ignore", invalid="ignore"):
        r = distances[:, 0] / distances[:, k]
    d_obs = fit_distance_dim(r[np.isfinite(r)], k)
    step = _chunk(k, d_a)
    fits = [_angle_fits(x[indices[i : i + step, :k]] - x[i : i + step, None, :]) for i in range(0, n, step)]
    nu_obs = float(np.mean(np.concatenate([f[0] for f in fits])))
    tau_obs = float(np.mean(np.concatenate([f[1] for f in fits])))
    if not np.isfinite(d_obs):
        return float("nan")
    best, best_kl = float("nan"), np.inf
    for d in range(1, top + 1):
        d_cal, nu_cal, tau_cal = calibration(d, k, calib_sets, s)
        kl = kl_distance(d_obs, d_cal, k) + kl_von_mises(nu_obs, tau_obs, nu_cal, tau_cal)
        if kl < best_kl:
            best, best_kl = float(d), kl
    return best

