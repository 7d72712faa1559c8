"""Point-cloud samplers with known intrinsic dimension.

Six embeddings of homogeneous spaces built from Haar-random group elements:

* ``st-matrix``  -- vectorized ``n x k`` orthonormal frames (Stiefel)
* ``st-vec``     -- Plücker-type minor vector of a frame plus a vectorized SO(k) element
* ``gr-proj``    -- vectorized rank-``k`` projector (Grassmannian)
* ``gr-vec``     -- all ``k x k`` minors of a frame (oriented Grassmannian)
* ``flag-vec``   -- tensor product of two minor vectors (two-step flags)
* ``pauli``      -- orbit of a fixed vector under ``U (x) conj(U) (x) U (x) conj(U)``

and four baselines (sphere, Gaussian, affine subspace, and the nonlinear
``mbeta`` family).  Every row of every sampler is drawn from its own
row-labelled sub-stream, so the output does not depend on how rows are
scheduled.
"""
from __future__ import annotations

import csv
import dataclasses
import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import InvalidParameterError, ResourceLimitError
from .linalg import (
    RandomStream,
    batched_det,
    haar_orthogonal,
    haar_orthogonal_batch,
    haar_special_orthogonal_batch,
    haar_unitary_batch,
)

#: Largest number of coordinates a minor-based embedding may produce.
MAX_COORDINATES = 10**7
#: Largest N * d_a accepted by CSV export.
MAX_CSV_CELLS = 10**7


class Family(str, enum.Enum):
    ST_MATRIX = "st-matrix"
    ST_VEC = "st-vec"
    GR_PROJ = "gr-proj"
    GR_VEC = "gr-vec"
    FLAG_VEC = "flag-vec"
    PAULI = "pauli"
    SPHERE = "sphere"
    GAUSSIAN = "gaussian"
    AFFINE = "affine"
    MBETA = "mbeta"

    @property
    def is_baseline(self) -> bool:
        return self in _BASELINES


_BASELINES = {Family.SPHERE, Family.GAUSSIAN, Family.AFFINE, Family.MBETA}
_NEEDS_K = {Family.ST_MATRIX, Family.ST_VEC, Family.GR_PROJ, Family.GR_VEC}


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    return all(n % p for p in range(2, math.isqrt(n) + 1))


@dataclass(frozen=True)
class ManifoldSpec:
    family: Family
    n: int | None = None
    k: int | None = None
    k1: int | None = None
    k2: int | None = None
    d_i_override: int | None = None
    ambient_target: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        fam = self.family

        def pos(name):
            v = getattr(self, name)
            if v is None or int(v) != v or v < 1:
                raise InvalidParameterError(f"{fam.value} requires a positive integer {name}, got {v!r}")

        if fam in _NEEDS_K:
            pos("n")
            pos("k")
            if self.k > self.n:
                raise InvalidParameterError(f"k={self.k} exceeds n={self.n}")
        elif fam is Family.FLAG_VEC:
            pos("n")
            pos("k1")
            pos("k2")
            if self.k1 + self.k2 > self.n:
                raise InvalidParameterError("flag-vec needs k1 + k2 <= n")
        elif fam is Family.PAULI:
            pos("n")
            if not is_prime(self.n):
                raise InvalidParameterError(f"pauli needs a prime n, got {self.n}")
        else:
            pos("d_i_override")
            if self.ambient_target is None:
                object.__setattr__(self, "ambient_target", min_ambient_dim(self))
        if self.ambient_target is not None:
            if int(self.ambient_target) != self.ambient_target or self.ambient_target < min_ambient_dim(self):
                raise InvalidParameterError(
                    f"ambient_target={self.ambient_target} is below the minimum {min_ambient_dim(self)}"
                )

    @property
    def d_i(self) -> int:
        return intrinsic_dim(self)

    @property
    def d_a(self) -> int:
        return self.ambient_target if self.ambient_target is not None else min_ambient_dim(self)

    @property
    def label(self) -> str:
        parts = [f"{k}={v}" for k, v in self.to_dict().items() if k != "family" and v is not None]
        return f"{self.family.value}({','.join(parts)})"

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["family"] = self.family.value
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ManifoldSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    @classmethod
    def sphere(cls, d_i: int, d_a: int | None = None) -> "ManifoldSpec":
        return cls(Family.SPHERE, d_i_override=d_i, ambient_target=d_a)

    @classmethod
    def gaussian(cls, d_i: int, d_a: int | None = None) -> "ManifoldSpec":
        return cls(Family.GAUSSIAN, d_i_override=d_i, ambient_target=d_a)

    @classmethod
    def affine(cls, d_i: int, d_a: int | None = None) -> "ManifoldSpec":
        return cls(Family.AFFINE, d_i_override=d_i, ambient_target=d_a)

    @classmethod
    def mbeta(cls, d_i: int, d_a: int | None = None) -> "ManifoldSpec":
        return cls(Family.MBETA, d_i_override=d_i, ambient_target=d_a)


def intrinsic_dim(spec: ManifoldSpec) -> int:
    fam, n, k = spec.family, spec.n, spec.k
    if fam in (Family.ST_MATRIX, Family.ST_VEC):
        return n * k - k * (k + 1) // 2
    if fam in (Family.GR_PROJ, Family.GR_VEC):
        return k * (n - k)
    if fam is Family.FLAG_VEC:
        k1, k2 = spec.k1, spec.k2
        return (k1 + k2) * n - k1 * k1 - k2 * k2 - k1 * k2
    if fam is Family.PAULI:
        if not is_prime(n):
            raise InvalidParameterError(f"pauli needs a prime n, got {n}")
        return n * n
    return int(spec.d_i_override)


def min_ambient_dim(spec: ManifoldSpec) -> int:
    fam, n, k = spec.family, spec.n, spec.k
    if fam is Family.ST_MATRIX:
        return n * k
    if fam is Family.ST_VEC:
        return math.comb(n, k) + k * k
    if fam is Family.GR_PROJ:
        return n * n
    if fam is Family.GR_VEC:
        return math.comb(n, k)
    if fam is Family.FLAG_VEC:
        return math.comb(n, spec.k1) * math.comb(n, spec.k2)
    if fam is Family.PAULI:
        return 2 * n**4
    if fam is Family.SPHERE:
        return spec.d_i_override + 1
    return int(spec.d_i_override)


@dataclass
class PointCloud:
    """An ``N x d_a`` sample matrix together with its ground truth and history.

    ``data`` is stored read-only; perturbations return new clouds with the
    distortion log extended.  ``extras`` holds in-memory auxiliaries (the
    embedding isometry, the affine constraint matrix, ...) that are not
    serialized.
    """

    data: np.ndarray
    d_i: float
    spec: ManifoldSpec | str
    lineage: str = ""
    distortions: tuple[dict, ...] = ()
    meta: dict[str, Any] = field(default_factory=dict)
    extras: dict[str, Any] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=float, order="C", copy=True)
        if data.ndim != 2:
            raise InvalidParameterError("point cloud data must be a 2-D array")
        if not np.all(np.isfinite(data)):
            raise InvalidParameterError("point cloud contains non-finite values")
        data.setflags(write=False)
        self.data = data
        self.distortions = tuple(self.distortions)

    @property
    def N(self) -> int:
        return self.data.shape[0]

    @property
    def d_a(self) -> int:
        return self.data.shape[1]

    def derive(self, data: np.ndarray, distortion: dict | None = None, **extras) -> "PointCloud":
        """New cloud with the same ground truth, optionally logging a distortion."""
        log = self.distortions + ((distortion,) if distortion is not None else ())
        return PointCloud(data, self.d_i, self.spec, self.lineage, log, dict(self.meta), {**self.extras, **extras})

    def metadata(self) -> dict[str, Any]:
        spec = self.spec.to_dict() if isinstance(self.spec, ManifoldSpec) else {"family": str(self.spec)}
        return {
            **spec,
            "d_i": self.d_i,
            "d_a": self.d_a,
            "N": self.N,
            "lineage": self.lineage,
            "distortions": list(self.distortions),
            **self.meta,
        }


def _row_streams(s: RandomStream, N: int) -> list[RandomStream]:
    if int(N) != N or N < 1:
        raise InvalidParameterError(f"N must be a positive integer, got {N!r}")
    return [s.child(f"row/{i}") for i in range(int(N))]


def _subsets(n: int, k: int) -> np.ndarray:
    return np.array(list(itertools.combinations(range(n), k)), dtype=np.intp).reshape(-1, k)


def _guard_coords(m: int) -> None:
    if m > MAX_COORDINATES:
        raise ResourceLimitError(f"embedding would need {m} coordinates (limit {MAX_COORDINATES})")


def frame_minors(frames: np.ndarray, k_cols: slice | None = None) -> np.ndarray:
    """All maximal minors of a stack of ``n x k`` frames, rows in lexicographic subset order."""
    frames = np.asarray(frames, dtype=float)
    if k_cols is not None:
        frames = frames[..., k_cols]
    n, k = frames.shape[-2:]
    _guard_coords(math.comb(n, k))
    subs = _subsets(n, k)
    if frames.ndim == 2:
        return batched_det(frames[subs, :])
    # bound the (rows, subsets, k, k) gather to a few million entries
    step = max(1, 4_000_000 // max(1, len(subs) * k * k))
    return np.concatenate([batched_det(frames[i:i + step][:, subs, :]) for i in range(0, len(frames), step)])


def _finish(spec: ManifoldSpec, data: np.ndarray, s: RandomStream, **extras) -> PointCloud:
    cloud = PointCloud(data, intrinsic_dim(spec), spec, lineage=f"{s.master_seed}:{s.label}", extras=extras)
    return embed_pad(cloud, spec.d_a, s.child("embed"))


def _check_family(spec: ManifoldSpec, fam: Family) -> None:
    if spec.family is not fam:
        raise InvalidParameterError(f"expected a {fam.value} spec, got {spec.family.value}")


def sample_st_matrix(spec: ManifoldSpec, N: int, s: RandomStream) -> PointCloud:
    _check_family(spec, Family.ST_MATRIX)
    frames = haar_orthogonal_batch(spec.n, _row_streams(s, N))[:, :, : spec.k]
    # column-stacking vectorization
    data = np.swapaxes(frames, 1, 2).reshape(N, -1)
    return _finish(spec, data, s)


def sample_gr_proj(spec: ManifoldSpec, N: int, s: RandomStream) -> PointCloud:
    _check_family(spec, Family.GR_PROJ)
    frames = haar_orthogonal_batch(spec.n, _row_streams(s, N))[:, :, : spec.k]
    proj = frames @ np.swapaxes(frames, 1, 2)
    return _finish(spec, proj.reshape(N, -1), s)


def sample_gr_vec(spec: ManifoldSpec, N: int, s: RandomStream) -> PointCloud:
    _check_family(spec, Family.GR_VEC)
    _guard_coords(math.comb(spec.n, spec.k))
    frames = haar_orthogonal_batch(spec.n, _row_streams(s, N))[:, :, : spec.k]
    return _finish(spec, frame_minors(frames), s)


def sample_st_vec(spec: ManifoldSpec, N: int, s: RandomStream) -> PointCloud:
    _check_family(spec, Family.ST_VEC)
    _guard_coords(math.comb(spec.n, spec.k))
    rows = _row_streams(s, N)
    frames = haar_orthogonal_batch(spec.n, [r.child("o") for r in rows])[:, :, : spec.k]
    rot = haar_special_orthogonal_batch(spec.k, [r.child("v") for r in rows])
    data = np.hstack([frame_minors(frames), np.swapaxes(rot, 1, 2).reshape(N, -1)])
    return _finish(spec, data, s)


def sample_flag_vec(spec: ManifoldSpec, N: int, s: RandomStream) -> PointCloud:
    _check_family(spec, Family.FLAG_VEC)
    n, k1, k2 = spec.n, spec.k1, spec.k2
    _guard_coords(math.comb(n, k1) * math.comb(n, k2))
    o = haar_orthogonal_batch(n, _row_streams(s, N))
    first = frame_minors(o, slice(0, k1))
    second = frame_minors(o, slice(k1, k1 + k2))
    data = (first[:, :, None] * second[:, None, :]).reshape(N, -1)
    return _finish(spec, data, s)


def pauli_basis(n: int) -> np.ndarray:
    """Orthonormal basis ``|a, b>``, ``a, b in Z_n``, of the n^2-dim subspace, shape ``(n*n, n**4)``.

    Basis row ``a * n + b`` is ``n**-1/2 * sum_c |c, c+a, c+b, c+a+b>`` with
    tensor indices flattened row-major.
    """
    basis = np.zeros((n * n, n**4))
    c = np.arange(n)
    for a in range(n):
        for b in range(n):
            idx = np.ravel_multi_index((c, (c + a) % n, (c + b) % n, (c + a + b) % n), (n,) * 4)
            basis[a * n + b, idx] = 1.0 / np.sqrt(n)
    return basis


def pauli_fiducial(n: int, s: RandomStream) -> np.ndarray:
    """Random complex unit vector inside the span of :func:`pauli_basis`."""
    z = s.normal((2, n * n))
    coeffs = z[0] + 1j * z[1]
    h = coeffs @ pauli_basis(n)
    return h / np.linalg.norm(h)


def apply_four_fold(u: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """``(U (x) conj U (x) U (x) conj U) vec`` by four mode contractions.

    ``u`` may be a single ``n x n`` matrix or a stack ``(B, n, n)``; ``vec``
    is a length-``n**4`` vector or a stack ``(B, n**4)``.
    """
    u = np.asarray(u)
    n = u.shape[-1]
    single = u.ndim == 2
    if single:
        u = u[None]
    v = np.asarray(vec, dtype=complex)
    t = np.broadcast_to(v.reshape((-1, n, n, n, n)), (u.shape[0], n, n, n, n))
    uc = u.conj()
    t = np.einsum("zai,zijkl->zajkl", u, t)
    t = np.einsum("zbj,zajkl->zabkl", uc, t)
    t = np.einsum("zck,zabkl->zabcl", u, t)
    t = np.einsum("zdl,zabcl->zabcd", uc, t)
    out = t.reshape(u.shape[0], -1)
    return out[0] if single else out


def realify(z: np.ndarray) -> np.ndarray:
    """Real parts followed by imaginary parts along the last axis."""
    return np.concatenate([z.real, z.imag], axis=-1)


def sample_pauli(spec: ManifoldSpec, N: int, s: RandomStream) -> PointCloud:
    _check_family(spec, Family.PAULI)
    n = spec.n
    fid = pauli_fiducial(n, s.child("pauli/fiducial"))
    us = haar_unitary_batch(n, _row_streams(s, N))
    return _finish(spec, realify(apply_four_fold(us, fid)), s, fiducial=fid)


def pauli_generator_defect(fiducial: np.ndarray, n: int) -> dict[str, float]:
    """How far the fiducial is from being fixed by the shift and clock generators."""
    shift = np.roll(np.eye(n), 1, axis=0)
    clock = np.diag(np.exp(2j * np.pi * np.arange(n) / n))
    return {
        "X": float(np.linalg.norm(apply_four_fold(shift, fiducial) - fiducial)),
        "Z": float(np.linalg.norm(apply_four_fold(clock, fiducial) - fiducial)),
    }


def _baseline_spec(fam: Family, d_i: int, d_a: int) -> ManifoldSpec:
    return ManifoldSpec(fam, d_i_override=d_i, ambient_target=d_a)


def sample_sphere(d_i: int, d_a: int, N: int, s: RandomStream) -> PointCloud:
    if d_a < d_i + 1:
        raise InvalidParameterError(f"S^{d_i} needs d_a >= {d_i + 1}")
    spec = _baseline_spec(Family.SPHERE, d_i, d_a)
    z = np.stack([r.normal(d_i + 1) for r in _row_streams(s, N)])
    return _finish(spec, z / np.linalg.norm(z, axis=1, keepdims=True), s)


def sample_gaussian(d_i: int, d_a: int, N: int, s: RandomStream) -> PointCloud:
    if d_a < d_i:
        raise InvalidParameterError("gaussian baseline needs d_a >= d_i")
    spec = _baseline_spec(Family.GAUSSIAN, d_i, d_a)
    z = np.stack([r.normal(d_i) for r in _row_streams(s, N)])
    return _finish(spec, z, s)


def sample_affine(d_i: int, d_a: int, N: int, s: RandomStream) -> PointCloud:
    """Standard-normal combinations of a basis for the nullspace of a random rank ``d_a - d_i`` matrix."""
    if not 1 <= d_i <= d_a:
        raise InvalidParameterError("affine baseline needs 1 <= d_i <= d_a")
    spec = _baseline_spec(Family.AFFINE, d_i, d_a)
    r = d_a - d_i
    sa = s.child("affine/A")
    a = sa.normal((d_a, r)) @ sa.normal((d_a, r)).T
    if r == 0:
        basis = np.eye(d_a)
    else:
        _, _, vt = np.linalg.svd(a)
        basis = vt[r:].T
    coeffs = np.stack([row.normal(d_i) for row in _row_streams(s, N)])
    cloud = PointCloud(coeffs @ basis.T, d_i, spec, lineage=f"{s.master_seed}:{s.label}",
                       extras={"constraint": a, "basis": basis})
    return cloud


def sample_mbeta(d_i: int, d_a: int, N: int, s: RandomStream) -> PointCloud:
    """``sin(cos(2 pi X))`` for X uniform on the unit cube, isometrically embedded."""
    if d_a < d_i:
        raise InvalidParameterError("mbeta baseline needs d_a >= d_i")
    spec = _baseline_spec(Family.MBETA, d_i, d_a)
    x = np.stack([r.uniform(size=d_i) for r in _row_streams(s, N)])
    cloud = _finish(spec, np.sin(np.cos(2 * np.pi * x)), s)
    cloud.meta["embedding"] = "isometric"
    return cloud


def embed_pad(cloud: PointCloud, d_a_target: int, s: RandomStream) -> PointCloud:
    """Map the cloud into ``d_a_target`` dimensions through a Haar-random isometry.

    The isometry is the first ``d_a`` rows of a Haar orthogonal matrix, so
    distances and norms are preserved.  No-op when the dimension already matches.
    """
    if d_a_target < cloud.d_a:
        raise InvalidParameterError(f"cannot embed {cloud.d_a}-dim data into {d_a_target} dimensions")
    if d_a_target == cloud.d_a:
        return cloud
    iso = haar_orthogonal(d_a_target, s)[: cloud.d_a]
    out = cloud.derive(cloud.data @ iso, isometry=iso)
    out.meta["padded_from"] = cloud.d_a
    return out


_SAMPLERS = {
    Family.ST_MATRIX: sample_st_matrix,
    Family.ST_VEC: sample_st_vec,
    Family.GR_PROJ: sample_gr_proj,
    Family.GR_VEC: sample_gr_vec,
    Family.FLAG_VEC: sample_flag_vec,
    Family.PAULI: sample_pauli,
}
_BASELINE_SAMPLERS = {
    Family.SPHERE: sample_sphere,
    Family.GAUSSIAN: sample_gaussian,
    Family.AFFINE: sample_affine,
    Family.MBETA: sample_mbeta,
}


def sample(spec: ManifoldSpec, N: int, s: RandomStream) -> PointCloud:
    """Draw ``N`` points from any family."""
    if spec.family in _SAMPLERS:
        return _SAMPLERS[spec.family](spec, N, s)
    return _BASELINE_SAMPLERS[spec.family](spec.d_i_override, spec.d_a, N, s)


# --- serialization ---------------------------------------------------------


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_cloud(cloud: PointCloud, path: str | Path) -> Path:
    """Write raw little-endian float64 row-major data plus a JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(cloud.data.astype("<f8").tobytes(order="C"))
    meta = cloud.metadata()
    if not isinstance(cloud.spec, ManifoldSpec):
        meta["provenance"] = str(cloud.spec)
    _sidecar(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return path


def load_cloud(path: str | Path) -> PointCloud:
    path = Path(path)
    meta = json.loads(_sidecar(path).read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(meta["N"], meta["d_a"])
    try:
        spec: ManifoldSpec | str = ManifoldSpec.from_dict(meta)
    except (ValueError, TypeError, KeyError):
        spec = meta.get("provenance", meta.get("family", "unknown"))
    known = {f.name for f in dataclasses.fields(ManifoldSpec)} | {"d_i", "d_a", "N", "lineage", "distortions",
                                                                   "provenance"}
    return PointCloud(
        data.astype(float),
        meta["d_i"],
        spec,
        meta.get("lineage", ""),
        tuple(meta.get("distortions", ())),
        {k: v for k, v in meta.items() if k not in known},
    )


def export_csv(cloud: PointCloud, path: str | Path) -> Path:
    if cloud.N * cloud.d_a > MAX_CSV_CELLS:
        raise ResourceLimitError("cloud too large for CSV export")
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        for row in cloud.data.tolist():
            writer.writerow([repr(v) for v in row])
    return path
