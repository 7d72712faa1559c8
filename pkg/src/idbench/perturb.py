"""Squeezing and additive Gaussian noise.

Both distortions act on the cloud as it sits in its final ambient space
(after any isometric padding) and append an entry to the distortion log.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .linalg import RandomStream
from .manifolds import PointCloud

MAX_SQUEEZE = 2.0


class NoiseKind(str, enum.Enum):
    ISOTROPIC = "isotropic"
    UNCORRELATED = "uncorrelated"
    ANISOTROPIC = "anisotropic"


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind
    sigma2: float
    label: str = "noise"

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if not self.sigma2 >= 0:
            raise InvalidParameterError(f"sigma2 must be non-negative, got {self.sigma2}")


def squeeze(cloud: PointCloud, epsilon: float, s: RandomStream) -> PointCloud:
    """Scale every coordinate by a fixed factor drawn from U[1 - eps/2, 1 + eps/2]."""
    if not 0 <= epsilon <= MAX_SQUEEZE:
        raise InvalidParameterError(f"epsilon must lie in [0, {MAX_SQUEEZE}], got {epsilon}")
    entry = {"kind": "squeeze", "epsilon": float(epsilon), "stream": s.label}
    if epsilon == 0:
        return cloud.derive(cloud.data, entry)
    diag = s.uniform(1 - epsilon / 2, 1 + epsilon / 2, size=cloud.d_a)
    return cloud.derive(cloud.data * diag, entry, squeeze_diagonal=diag)


def noise_factor(kind: NoiseKind | str, d_a: int, s: RandomStream) -> np.ndarray:
    """Matrix ``A`` with ``A A^T`` the unit-trace noise covariance for ``kind``."""
    kind = NoiseKind(kind)
    if kind is NoiseKind.ISOTROPIC:
        return np.eye(d_a) / np.sqrt(d_a)
    if kind is NoiseKind.UNCORRELATED:
        lam = s.uniform(0.0, 2.0 / d_a, size=d_a)
        return np.diag(np.sqrt(lam / lam.sum()))
    u = s.normal((d_a, d_a))
    # Tr(u u^T) is the squared Frobenius norm; u u^T itself is never formed
    return u / np.sqrt(np.sum(u * u))


def add_noise(cloud: PointCloud, noise: NoiseSpec, s: RandomStream) -> PointCloud:
    """``x -> x + sqrt(sigma2) * A z`` with ``z`` standard normal, one ``A`` per cloud."""
    entry = {"kind": "noise", "noise_kind": noise.kind.value, "sigma2": float(noise.sigma2), "stream": s.label}
    if noise.sigma2 == 0:
        return cloud.derive(cloud.data, entry)
    a = noise_factor(noise.kind, cloud.d_a, s.child("factor"))
    z = np.stack([s.child(f"row/{i}").normal(cloud.d_a) for i in range(cloud.N)])
    e = np.sqrt(noise.sigma2) * (z @ a.T)
    return cloud.derive(cloud.data + e, entry, noise_factor=a)
