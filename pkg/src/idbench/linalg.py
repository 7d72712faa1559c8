"""Random streams, Haar sampling on classical groups, minors and eigen-solves.

Every random draw in the package goes through :class:`RandomStream`, a
counter-based generator keyed on ``(master_seed, label)``.  Two streams with
the same key replay the same values no matter what other streams did in
between, which is what makes sweeps reproducible regardless of thread count.
"""
from __future__ import annotations

import hashlib

import numpy as np

from .errors import InvalidParameterError

__all__ = [
    "RandomStream",
    "derive_stream",
    "haar_orthogonal",
    "haar_orthogonal_batch",
    "haar_special_orthogonal",
    "haar_special_orthogonal_batch",
    "haar_unitary",
    "haar_unitary_batch",
    "batched_det",
    "minor_det",
    "sym_eig_desc",
    "PIVOT_FLOOR",
]

#: Pivots below this magnitude make a minor count as exactly zero.
PIVOT_FLOOR = 1e-12


def _key_for(master_seed: int, label: str) -> np.ndarray:
    digest = hashlib.sha256(f"{int(master_seed) & 0xFFFFFFFFFFFFFFFF}:{label}".encode()).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64).copy()


class RandomStream:
    """Deterministic random stream identified by a master seed and a label path.

    The stream wraps a Philox counter-based bit generator whose key is a hash
    of ``(master_seed, label)``.  Use :meth:`child` to derive sub-streams,
    e.g. one per row of a point cloud.
    """

    __slots__ = ("master_seed", "label", "rng")

    def __init__(self, master_seed: int, label: str):
        self.master_seed = int(master_seed)
        self.label = str(label)
        self.rng = np.random.Generator(np.random.Philox(key=_key_for(self.master_seed, self.label)))

    def child(self, sublabel: str | int) -> "RandomStream":
        return RandomStream(self.master_seed, f"{self.label}/{sublabel}")

    # thin conveniences over the numpy Generator
    def normal(self, size=None) -> np.ndarray:
        return self.rng.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self.rng.uniform(low, high, size)

    def __repr__(self) -> str:
        return f"RandomStream(master_seed={self.master_seed}, label={self.label!r})"


def derive_stream(master_seed: int, label: str) -> RandomStream:
    """Return a fresh stream for ``(master_seed, label)``."""
    return RandomStream(master_seed, label)


def _check_dim(n: int, name: str = "n") -> int:
    if int(n) != n or n < 1:
        raise InvalidParameterError(f"{name} must be a positive integer, got {n!r}")
    return int(n)


def _qr_haar(z: np.ndarray) -> np.ndarray:
    # Mezzadri: Q from QR, then fix the phase of each column by the diagonal of R.
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    if np.iscomplexobj(d):
        mag = np.abs(d)
        ph = np.where(mag > 0, d / np.where(mag > 0, mag, 1.0), 1.0)
    else:
        ph = np.where(d < 0, -1.0, 1.0)
    return q * ph[..., None, :]


def haar_orthogonal(n: int, s: RandomStream) -> np.ndarray:
    """Haar-distributed ``n x n`` orthogonal matrix."""
    n = _check_dim(n)
    return _qr_haar(s.normal((n, n)))


def haar_orthogonal_batch(n: int, streams) -> np.ndarray:
    """Stack of Haar O(n) draws, one per stream; shape ``(len(streams), n, n)``."""
    n = _check_dim(n)
    z = np.stack([st.normal((n, n)) for st in streams]) if streams else np.empty((0, n, n))
    return _qr_haar(z)


def _fix_det(o: np.ndarray) -> np.ndarray:
    det = np.linalg.det(o)
    o = o.copy()
    o[..., :, 0] *= np.where(det < 0, -1.0, 1.0)[..., None]
    return o


def haar_special_orthogonal(k: int, s: RandomStream) -> np.ndarray:
    """Haar SO(k) draw: a Haar O(k) draw with its first column negated when det = -1."""
    k = _check_dim(k, "k")
    return _fix_det(haar_orthogonal(k, s))


def haar_special_orthogonal_batch(k: int, streams) -> np.ndarray:
    k = _check_dim(k, "k")
    return _fix_det(haar_orthogonal_batch(k, streams))


def _complex_normal(s: RandomStream, shape) -> np.ndarray:
    z = s.normal((2,) + tuple(shape))
    return (z[0] + 1j * z[1]) / np.sqrt(2.0)


def haar_unitary(n: int, s: RandomStream) -> np.ndarray:
    """Haar-distributed ``n x n`` unitary matrix."""
    n = _check_dim(n)
    return _qr_haar(_complex_normal(s, (n, n)))


def haar_unitary_batch(n: int, streams) -> np.ndarray:
    n = _check_dim(n)
    if not streams:
        return np.empty((0, n, n), dtype=complex)
    return _qr_haar(np.stack([_complex_normal(st, (n, n)) for st in streams]))


def batched_det(a: np.ndarray, pivot_floor: float = PIVOT_FLOOR) -> np.ndarray:
    """Determinants of a stack of square matrices by LU with partial pivoting.

    Any matrix that meets a pivot smaller than ``pivot_floor`` in magnitude is
    reported as singular (determinant exactly 0).
    """
    a = np.array(a, dtype=float, copy=True)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise InvalidParameterError("batched_det expects a stack of square matrices")
    batch_shape = a.shape[:-2]
    m = a.shape[-1]
    a = a.reshape((-1, m, m))
    b = a.shape[0]
    det = np.ones(b)
    singular = np.zeros(b, dtype=bool)
    rows = np.arange(b)
    for c in range(m):
        piv = c + np.argmax(np.abs(a[:, c:, c]), axis=1)
        swap = piv != c
        if swap.any():
            top = a[rows, c, :].copy()
            a[rows, c, :] = a[rows, piv, :]
            a[rows, piv, :] = top
            det[swap] = -det[swap]
        p = a[:, c, c]
        small = np.abs(p) < pivot_floor
        singular |= small
        p_safe = np.where(small, 1.0, p)
        det *= p_safe
        if c + 1 < m:
            f = a[:, c + 1:, c] / p_safe[:, None]
            a[:, c + 1:, c:] -= f[:, :, None] * a[:, None, c, c:]
    det[singular] = 0.0
    return det.reshape(batch_shape)


def minor_det(m: np.ndarray, row_set, col_set) -> float:
    """Determinant of ``m[row_set][:, col_set]`` (index order is respected)."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise InvalidParameterError("minor_det expects a 2-D matrix")
    rows, cols = list(row_set), list(col_set)
    if len(rows) != len(cols):
        raise InvalidParameterError("row and column index sets must have equal size")
    if len(rows) > min(m.shape):
        raise InvalidParameterError("minor larger than the matrix")
    for idx, bound, what in ((rows, m.shape[0], "row"), (cols, m.shape[1], "column")):
        if len(set(idx)) != len(idx):
            raise InvalidParameterError(f"duplicate {what} index in {idx}")
        if any(i < 0 or i >= bound or int(i) != i for i in idx):
            raise InvalidParameterError(f"{what} index out of range in {idx}")
    if not rows:
        return 1.0
    return float(batched_det(m[np.ix_(rows, cols)]))


def sym_eig_desc(s: np.ndarray, tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and matching eigenvectors of a symmetric matrix."""
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise InvalidParameterError("sym_eig_desc expects a square matrix")
    scale = max(np.max(np.abs(s)), 1.0) if s.size else 1.0
    if s.size and np.max(np.abs(s - s.T)) > tol * scale:
        raise InvalidParameterError("matrix is not symmetric")
    w, v = np.linalg.eigh(0.5 * (s + s.T))
    return w[::-1].copy(), v[:, ::-1].copy()
