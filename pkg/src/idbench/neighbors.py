"""Exact Euclidean k-nearest-neighbour tables.

The scan is quadratic by design: approximate indexes would blur estimator
error with search error.  Candidates are screened with the Gram-matrix
identity ``|x-y|^2 = |x|^2 + |y|^2 - 2 x.y`` plus a rounding slack, then
re-ranked with directly computed distances summed in extended precision.
Ties go to the lower point index.
"""
from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError

THREADS_ENV = "IDBENCH_THREADS"
_BLOCK_BUDGET = 2_000_000  # entries of the per-block distance matrix


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class NeighborTable:
    k: int
    indices: np.ndarray
    distances: np.ndarray

    def truncate(self, k: int) -> "NeighborTable":
        if not 1 <= k <= self.k:
            raise InvalidParameterError(f"cannot truncate a {self.k}-table to k={k}")
        return NeighborTable(k, self.indices[:, :k], self.distances[:, :k])


def _as_array(cloud) -> np.ndarray:
    return np.asarray(getattr(cloud, "data", cloud), dtype=float)


def _block(x: np.ndarray, sq: np.ndarray, start: int, stop: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    n, d = x.shape
    q = x[start:stop]
    d2 = sq[start:stop, None] + sq[None, :] - 2.0 * (q @ x.T)
    rows = np.arange(stop - start)
    d2[rows, rows + start] = np.inf
    # worst-case rounding of the Gram identity, generously padded
    slack = 8.0 * (d + 4) * np.finfo(float).eps * (sq[start:stop] + sq.max())
    kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
    cutoff = kth + 2.0 * slack
    idx_out = np.empty((stop - start, k), dtype=np.int64)
    dist_out = np.empty((stop - start, k))
    for r in range(stop - start):
        cand = np.flatnonzero(d2[r] <= cutoff[r])
        diff = x[cand] - x[start + r]
        exact = np.sum(diff * diff, axis=1, dtype=np.longdouble)
        order = np.lexsort((cand, exact))[:k]
        idx_out[r] = cand[order]
        dist_out[r] = np.sqrt(exact[order]).astype(float)
    return idx_out, dist_out


def knn(cloud, k: int, threads: int | None = None) -> NeighborTable:
    """Exact k-NN of every point, self excluded, ascending distance, ties by index."""
    x = _as_array(cloud)
    n = x.shape[0]
    if int(k) != k or not 1 <= k <= n - 1:
        raise InvalidParameterError(f"k must satisfy 1 <= k <= N-1 (N={n}), got {k}")
    k = int(k)
    sq = np.einsum("ij,ij->i", x, x)
    step = max(1, _BLOCK_BUDGET // max(n, 1))
    bounds = [(s, min(s + step, n)) for s in range(0, n, step)]
    threads = threads or default_threads()
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: _block(x, sq, b[0], b[1], k), bounds))
    else:
        parts = [_block(x, sq, s, e, k) for s, e in bounds]
    return NeighborTable(k, np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts]))


def brute_force_knn(cloud, k: int) -> NeighborTable:
    """Reference quadratic scan, one query at a time; used to check :func:`knn`."""
    x = _as_array(cloud)
    n = x.shape[0]
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    for i in range(n):
        d = np.sqrt(np.sum((x - x[i]) ** 2, axis=1))
        d[i] = np.inf
        order = np.lexsort((np.arange(n), d))[:k]
        idx[i], dist[i] = order, d[order]
    return NeighborTable(k, idx, dist)


def cloud_digest(cloud) -> str:
    x = np.ascontiguousarray(_as_array(cloud))
    h = hashlib.sha256(f"{x.shape}".encode())
    h.update(x.astype("<f8").tobytes())
    return h.hexdigest()


def cached_knn(cloud, k: int, cache_dir: str | Path, threads: int | None = None) -> NeighborTable:
    """:func:`knn` with an on-disk cache keyed by (cloud digest, k)."""
    path = Path(cache_dir) / f"knn-{cloud_digest(cloud)[:32]}-k{k}.npz"
    if path.exists():
        with np.load(path) as f:
            return NeighborTable(k, f["indices"], f["distances"])
    table = knn(cloud, k, threads)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, indices=table.indices, distances=table.distances)
    return table
