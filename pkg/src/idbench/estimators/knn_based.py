"""Distance- and angle-based estimators built on a neighbour table."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata

from ..errors import InvalidParameterError

#: TwoNN returns nothing when fewer points than this survive the discard.
TWONN_MIN_RETAINED = 10


# ----------------------------------------------------------------- MLE

def mle_local(t: np.ndarray) -> float:
    """Levina-Bickel estimate from one point's ascending neighbour distances."""
    return float(mle_pointwise(np.asarray(t, dtype=float)[None, :])[0])


def mle_pointwise(distances: np.ndarray) -> np.ndarray:
    """Row-wise MLE over a ``(N, k)`` distance table.

    Uses ``R = T_k`` and averages ``log(T_k / T_j)`` over ``j < k``.  Zero
    distances (duplicate points) are left out of both sum and count.
    """
    t = np.asarray(distances, dtype=float)
    if t.shape[1] < 3:
        raise InvalidParameterError("MLE needs k >= 3")
    tk = t[:, -1:]
    inner = t[:, :-1]
    ok = inner > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        # excluded entries are replaced by T_k so they contribute log 1 = 0
        total = np.log(tk / np.where(ok, inner, tk)).sum(axis=1)
        d = ok.sum(axis=1) / total
    d[(total <= 0) | (tk[:, 0] <= 0)] = np.nan
    return d


# --------------------------------------------------------------- TwoNN

def twonn_pointwise(distances: np.ndarray, alpha: float = 0.1) -> np.ndarray:
    """Pointwise TwoNN: ``-log(1 - F(mu)) / log(mu)`` with ``mu = T_2 / T_1``.

    ``F`` is the empirical CDF of all finite ratios at plotting position
    ``rank / (n + 1)`` (average ranks for ties).  The ``ceil(alpha * n)``
    largest ratios are then discarded.  Discarded points, points with
    ``mu == 1`` and points whose nearest neighbour is a duplicate come back
    as NaN.
    """
    if not 0 <= alpha < 1:
        raise InvalidParameterError(f"alpha must lie in [0, 1), got {alpha}")
    t = np.asarray(distances, dtype=float)
    if t.shape[1] < 2:
        raise InvalidParameterError("TwoNN needs k >= 2")
    out = np.full(t.shape[0], np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = t[:, 1] / t[:, 0]
    finite = np.flatnonzero(np.isfinite(mu))
    n = finite.size
    n_drop = math.ceil(alpha * n)
    if n - n_drop < TWONN_MIN_RETAINED:
        return out
    m = mu[finite]
    f = rankdata(m, method="average") / (n + 1)
    keep = np.argsort(m, kind="stable")[: n - n_drop]
    mk, fk = m[keep], f[keep]
    with np.errstate(divide="ignore", invalid="ignore"):
        d = -np.log1p(-fk) / np.log(mk)
    d[mk <= 1] = np.nan
    out[finite[keep]] = d
    return out


def twonn_from_cdf(mu: float, f: float) -> float:
    """Single-point TwoNN formula; NaN when ``mu == 1``."""
    if mu <= 1:
        return float("nan")
    return -math.log1p(-f) / math.log(mu)


# ---------------------------------------------------------------- ABID

ABID_PAIRS = ("all", "distinct")


def abid_local(offsets: np.ndarray, pairs: str = "all") -> float:
    """Reciprocal mean squared cosine between neighbour offsets.

    ``pairs="all"`` averages over all ``m^2`` ordered pairs ``(i, j)``, i.e.
    the expectation with both offsets drawn independently from the
    neighbourhood, so the ``i == j`` terms (``cos^2 = 1``) are included.
    ``pairs="distinct"`` averages over the ``m (m - 1) / 2`` unordered pairs
    with ``i != j`` only.  Zero offsets are dropped first.
    """
    return float(_abid_batch(np.asarray(offsets, dtype=float)[None], pairs)[0])


def _abid_batch(v: np.ndarray, pairs: str = "all") -> np.ndarray:
    if pairs not in ABID_PAIRS:
        raise InvalidParameterError(f"ABID pairs must be one of {ABID_PAIRS}, got {pairs!r}")
    norms = np.linalg.norm(v, axis=-1)
    live = norms > 0
    u = np.where(live[..., None], v / np.where(live, norms, 1.0)[..., None], 0.0)
    m = live.sum(axis=-1)
    g = u @ np.swapaxes(u, -1, -2)
    total = np.sum(g * g, axis=(-1, -2))
    if pairs == "all":
        count, cos2 = m * m * 1.0, total
    else:
        count, cos2 = m * (m - 1) / 2.0, (total - m) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        d = count / cos2
    d[(m < 2) | ~(cos2 > 0)] = np.nan
    return d


def abid_pointwise(x: np.ndarray, indices: np.ndarray, pairs: str = "all") -> np.ndarray:
    n, k = indices.shape
    if k < 2:
        raise InvalidParameterError("ABID needs k >= 2")
    step = max(1, 4_000_000 // (k * max(k, x.shape[1])))
    out = np.empty(n)
    for s in range(0, n, step):
        rows = slice(s, min(s + step, n))
        out[rows] = _abid_batch(x[indices[rows]] - x[rows][:, None, :], pairs)
    return out


# ------------------------------------------------------------- CorrInt

def pair_counts(x: np.ndarray, radii) -> np.ndarray:
    """Number of unordered pairs with ``|x_i - x_j| <= r`` for each radius.

    Distances are screened through the Gram identity; pairs that land within
    rounding slack of a radius are recomputed directly.
    """
    x = np.asarray(x, dtype=float)
    radii = np.asarray(radii, dtype=float)
    n, d = x.shape
    sq = np.einsum("ij,ij->i", x, x)
    r2 = radii**2
    counts = np.zeros(radii.size, dtype=np.int64)
    step = max(1, 2_000_000 // max(n, 1))
    for s in range(0, n - 1, step):
        e = min(s + step, n - 1)
        # only partners with larger index
        q = x[s:e]
        d2 = sq[s:e, None] + sq[None, s:] - 2.0 * (q @ x[s:].T)
        upper = np.arange(n - s)[None, :] > np.arange(e - s)[:, None]
        slack = 8.0 * (d + 4) * np.finfo(float).eps * (sq[s:e, None] + sq[None, s:])
        for ir, rr in enumerate(r2):
            sure = upper & (d2 <= rr - slack)
            near = upper & (np.abs(d2 - rr) < slack)
            c = int(sure.sum())
            if near.any():
                ii, jj = np.nonzero(near)
                diff = x[s + ii] - x[s + jj]
                c += int(np.sum(np.sum(diff * diff, axis=1, dtype=np.longdouble) <= rr))
            counts[ir] += c
    return counts


def corrint_global(x: np.ndarray, distances: np.ndarray, k1: int, k2: int) -> float:
    """Correlation dimension between the median ``k1``- and ``k2``-th neighbour radii."""
    k = distances.shape[1]
    if not 1 <= k1 < k2 <= k:
        raise InvalidParameterError(f"CorrInt needs 1 <= k1 < k2 <= k (k={k}), got k1={k1}, k2={k2}")
    r1 = float(np.median(distances[:, k1 - 1]))
    r2 = float(np.median(distances[:, k2 - 1]))
    c1, c2 = pair_counts(x, [r1, r2])
    if c1 == 0 or r1 <= 0 or r1 == r2:
        return float("nan")
    # the 2 / (N (N - 1)) normalisation cancels in the ratio
    return math.log(c2 / c1) / math.log(r2 / r1)
