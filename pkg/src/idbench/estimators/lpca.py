"""Local PCA: dimension from the spectrum of a k-neighbourhood."""
from __future__ import annotations

import numpy as np

from ..errors import InvalidParameterError

#: Eigenvalues are floored here before spectral-gap ratios are taken.
EIG_FLOOR = 1e-30


def spectra(offsets: np.ndarray, center: str = "point") -> np.ndarray:
    """Descending covariance eigenvalues of one or many neighbourhoods.

    ``offsets`` is ``(k, d_a)`` or ``(B, k, d_a)``.  With ``center="point"``
    the covariance is taken about the query point, so curvature and radial
    structure count; ``center="mean"`` uses the neighbourhood mean instead.
    Singular values of the offset matrix are used rather than an
    eigen-solve of the covariance so that null directions come out
    non-negative.
    """
    v = np.asarray(offsets, dtype=float)
    if center == "mean":
        v = v - v.mean(axis=-2, keepdims=True)
    elif center != "point":
        raise InvalidParameterError(f"unknown lPCA centering {center!r}")
    k = v.shape[-2]
    sv = np.linalg.svd(v, compute_uv=False)
    return sv**2 / k


def maxgap_from_spectrum(eigs: np.ndarray) -> np.ndarray:
    """Index ``j`` (1-based) maximizing ``eig[j-1] / eig[j]``; first maximum wins."""
    e = np.atleast_2d(np.asarray(eigs, dtype=float))
    if e.shape[-1] < 2:
        raise InvalidParameterError("maxgap needs at least two eigenvalues")
    dead = np.all(e < EIG_FLOOR, axis=-1)
    e = np.maximum(e, EIG_FLOOR)
    j = np.argmax(e[..., :-1] / e[..., 1:], axis=-1) + 1.0
    j[dead] = np.nan
    return j if np.ndim(eigs) > 1 else j[0]


def ratio_from_spectrum(eigs: np.ndarray, epsilon: float) -> np.ndarray:
    """Smallest ``j`` whose leading eigenvalues carry at least ``1 - epsilon`` of the variance."""
    e = np.atleast_2d(np.asarray(eigs, dtype=float))
    total = e.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        cum = np.cumsum(e, axis=-1) / total
    j = np.argmax(cum >= (1 - epsilon) - 1e-12, axis=-1) + 1.0
    j[total[..., 0] <= 0] = np.nan
    return j if np.ndim(eigs) > 1 else j[0]


def fo_from_spectrum(eigs: np.ndarray, epsilon: float) -> np.ndarray:
    """Number of eigenvalues at least ``(1 - epsilon)`` times the largest."""
    e = np.atleast_2d(np.asarray(eigs, dtype=float))
    lead = e.max(axis=-1, keepdims=True)
    j = np.sum(e >= (1 - epsilon) * lead, axis=-1).astype(float)
    j[lead[..., 0] <= 0] = np.nan
    return j if np.ndim(eigs) > 1 else j[0]


def _check_eps(epsilon):
    if epsilon is None or not 0 <= epsilon < 1:
        raise InvalidParameterError(f"epsilon must lie in [0, 1), got {epsilon}")


def lpca_maxgap(offsets: np.ndarray, center: str = "point") -> float:
    if np.shape(offsets)[-2] < 2:
        raise InvalidParameterError("lPCA needs k >= 2")
    return maxgap_from_spectrum(spectra(offsets, center))


def lpca_ratio(offsets: np.ndarray, epsilon: float, center: str = "point") -> float:
    _check_eps(epsilon)
    return ratio_from_spectrum(spectra(offsets, center), epsilon)


def lpca_fo(offsets: np.ndarray, epsilon: float, center: str = "point") -> float:
    _check_eps(epsilon)
    return fo_from_spectrum(spectra(offsets, center), epsilon)


def lpca_pointwise(x: np.ndarray, indices: np.ndarray, variant: str = "maxgap", epsilon: float | None = None,
                   center: str = "point") -> np.ndarray:
    """Per-point lPCA estimates for every row of ``x``."""
    n, k = indices.shape
    if k < 2:
        raise InvalidParameterError("lPCA needs k >= 2")
    if variant != "maxgap":
        _check_eps(epsilon)
    step = max(1, 4_000_000 // (k * x.shape[1]))
    out = np.empty(n)
    for s in range(0, n, step):
        rows = slice(s, min(s + step, n))
        eigs = spectra(x[indices[rows]] - x[rows][:, None, :], center)
        if variant == "maxgap":
            out[rows] = maxgap_from_spectrum(eigs)
        elif variant == "ratio":
            out[rows] = ratio_from_spectrum(eigs, epsilon)
        elif variant == "fo":
            out[rows] = fo_from_spectrum(eigs, epsilon)
        else:
            raise InvalidParameterError(f"unknown lPCA variant {variant!r}")
    return out
