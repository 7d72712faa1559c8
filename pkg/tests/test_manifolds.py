import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from idbench.errors import InvalidParameterError, ResourceLimitError
from idbench.linalg import derive_stream, haar_orthogonal, haar_special_orthogonal, haar_unitary
from idbench.manifolds import (
    Family,
    ManifoldSpec,
    PointCloud,
    apply_four_fold,
    embed_pad,
    export_csv,
    frame_minors,
    intrinsic_dim,
    load_cloud,
    min_ambient_dim,
    pauli_basis,
    pauli_fiducial,
    pauli_generator_defect,
    realify,
    sample,
    sample_affine,
    sample_flag_vec,
    sample_gaussian,
    sample_gr_proj,
    sample_gr_vec,
    sample_mbeta,
    sample_pauli,
    sample_sphere,
    sample_st_matrix,
    sample_st_vec,
    save_cloud,
)

S = derive_stream(2024, "test")


def spec(fam, **kw):
    return ManifoldSpec(Family(fam), **kw)


# --- dimension formulas ------------------------------------------------------


def test_intrinsic_dim_examples():
    assert intrinsic_dim(spec("gr-vec", n=4, k=2)) == 4
    assert intrinsic_dim(spec("st-matrix", n=3, k=1)) == 2
    assert intrinsic_dim(spec("flag-vec", n=3, k1=1, k2=1)) == 3
    assert intrinsic_dim(spec("pauli", n=3)) == 9


def test_min_ambient_examples():
    assert min_ambient_dim(spec("gr-vec", n=6, k=3)) == 20
    assert min_ambient_dim(spec("pauli", n=2)) == 32
    assert min_ambient_dim(spec("st-vec", n=4, k=2)) == 10


def test_spec_validation():
    with pytest.raises(InvalidParameterError):
        spec("pauli", n=4)
    with pytest.raises(InvalidParameterError):
        spec("gr-vec", n=3, k=4)
    with pytest.raises(InvalidParameterError):
        spec("flag-vec", n=3, k1=2, k2=2)
    with pytest.raises(InvalidParameterError):
        spec("gr-vec", n=4, k=2, ambient_target=5)
    with pytest.raises(InvalidParameterError):
        ManifoldSpec.sphere(3, 3)


def test_spec_dict_round_trip():
    s = spec("flag-vec", n=4, k1=1, k2=2, ambient_target=30)
    assert ManifoldSpec.from_dict(s.to_dict()) == s
    assert s.label == "flag-vec(n=4,k1=1,k2=2,ambient_target=30)"


# --- Stiefel / Grassmann --------------------------------------------------------


def test_st_matrix_unit_rows_on_s2():
    c = sample_st_matrix(spec("st-matrix", n=3, k=1), 50, S)
    assert c.data.shape == (50, 3)
    assert np.allclose(np.linalg.norm(c.data, axis=1), 1, atol=1e-12)


def test_st_matrix_frames_orthonormal():
    c = sample_st_matrix(spec("st-matrix", n=4, k=2), 40, S)
    assert c.d_i == 5
    for row in c.data:
        x = row.reshape(2, 4).T  # column-stacked
        assert np.max(np.abs(x.T @ x - np.eye(2))) < 1e-9


def test_st_matrix_matches_first_columns():
    c = sample_st_matrix(spec("st-matrix", n=4, k=2), 3, S)
    o = haar_orthogonal(4, S.child("row/1"))
    assert np.allclose(c.data[1], o[:, :2].T.ravel())


def test_gr_proj_full_subspace_is_identity():
    c = sample_gr_proj(spec("gr-proj", n=3, k=3), 10, S)
    assert np.allclose(c.data, np.eye(3).ravel(), atol=1e-12)


def test_gr_proj_rank_one():
    c = sample_gr_proj(spec("gr-proj", n=3, k=1), 20, S)
    for row in c.data:
        w = np.sort(np.linalg.eigvalsh(row.reshape(3, 3)))
        assert np.allclose(w, [0, 0, 1], atol=1e-9)


def test_gr_proj_structure():
    c = sample_gr_proj(spec("gr-proj", n=5, k=2), 30, S)
    for row in c.data:
        p = row.reshape(5, 5)
        assert np.max(np.abs(p - p.T)) < 1e-12
        assert np.max(np.abs(p @ p - p)) < 1e-9
        assert abs(np.trace(p) - 2) < 1e-9
        assert abs(np.sum(p * p) - 2) < 1e-9


def test_gr_proj_invariant_under_ok():
    x = haar_orthogonal(5, S.child("gp"))[:, :2]
    q = haar_orthogonal(2, S.child("q"))
    assert np.allclose(x @ x.T, (x @ q) @ (x @ q).T, atol=1e-12)


def test_gr_vec_n2_k1_is_first_column():
    c = sample_gr_vec(spec("gr-vec", n=2, k=1), 5, S)
    o = haar_orthogonal(2, S.child("row/3"))
    assert np.allclose(c.data[3], o[:, 0], atol=1e-12)


def test_gr_vec_unit_norm():
    c = sample_gr_vec(spec("gr-vec", n=4, k=2), 100, S)
    assert c.d_a == 6
    assert np.max(np.abs(np.sum(c.data**2, axis=1) - 1)) < 1e-9


def test_gr_vec_lexicographic_coordinates():
    x = haar_orthogonal(4, S.child("lex"))[:, :2]
    got = frame_minors(x)
    subsets = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    want = [np.linalg.det(x[list(q)]) for q in subsets]
    assert np.allclose(got, want, atol=1e-12)


def test_gr_vec_so_k_invariance_and_sign_flip():
    x = haar_orthogonal(4, S.child("inv"))[:, :2]
    r = haar_special_orthogonal(2, S.child("r"))
    assert np.max(np.abs(frame_minors(x @ r) - frame_minors(x))) < 1e-9
    refl = np.diag([1.0, -1.0])
    assert np.max(np.abs(frame_minors(x @ refl) + frame_minors(x))) < 1e-9


def test_gr_vec_coordinate_guard():
    with pytest.raises(ResourceLimitError):
        sample_gr_vec(spec("gr-vec", n=40, k=20), 1, S)


def test_st_vec():
    c = sample_st_vec(spec("st-vec", n=3, k=1), 20, S)
    assert c.d_a == 4
    assert np.all(c.data[:, -1] == 1.0)
    c = sample_st_vec(spec("st-vec", n=4, k=2), 50, S)
    assert c.d_a == 10
    assert np.max(np.abs(np.sum(c.data**2, axis=1) - 3)) < 1e-8
    tail = c.data[:, 6:].reshape(-1, 2, 2)
    assert np.allclose(np.linalg.det(tail), 1.0, atol=1e-8)


# --- flags ------------------------------------------------------------------------


def test_flag_vec_outer_product_case():
    c = sample_flag_vec(spec("flag-vec", n=3, k1=1, k2=1), 4, S)
    assert c.d_i == 3
    o = haar_orthogonal(3, S.child("row/2"))
    assert np.allclose(c.data[2], np.outer(o[:, 0], o[:, 1]).ravel(), atol=1e-12)
    assert np.allclose(np.linalg.norm(c.data, axis=1), 1, atol=1e-12)


def test_flag_vec_unit_norm():
    c = sample_flag_vec(spec("flag-vec", n=4, k1=1, k2=2), 50, S)
    assert c.d_a == 24
    assert np.max(np.abs(np.sum(c.data**2, axis=1) - 1)) < 1e-8


# --- Pauli ------------------------------------------------------------------------


def kron4(u):
    uc = u.conj()
    return np.kron(np.kron(np.kron(u, uc), u), uc)


def test_pauli_basis_orthonormal():
    for n in (2, 3, 5):
        b = pauli_basis(n)
        assert np.allclose(b @ b.T, np.eye(n * n))


def test_pauli_rows():
    c = sample_pauli(spec("pauli", n=2), 30, S)
    assert c.d_a == 32 and c.d_i == 4
    assert np.max(np.abs(np.linalg.norm(c.data, axis=1) - 1)) < 1e-9


def test_pauli_identity_gives_fiducial():
    h = pauli_fiducial(3, S.child("f"))
    assert np.allclose(apply_four_fold(np.eye(3), h), h)
    assert np.allclose(realify(h)[: 81], h.real)


@pytest.mark.parametrize("n", [2, 3])
def test_pauli_mode_contraction_matches_kron(n):
    h = pauli_fiducial(n, S.child("f"))
    u = haar_unitary(n, S.child("u"))
    assert np.allclose(apply_four_fold(u, h), kron4(u) @ h, atol=1e-12)


def test_pauli_equivariance():
    h = pauli_fiducial(3, S.child("eq"))
    u1 = haar_unitary(3, S.child("u1"))
    u2 = haar_unitary(3, S.child("u2"))
    lhs = apply_four_fold(u1, apply_four_fold(u2, h))
    rhs = apply_four_fold(u1 @ u2, h)
    assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_pauli_row_is_orbit_of_fiducial():
    s = S.child("orb")
    c = sample_pauli(spec("pauli", n=3), 3, s)
    h = c.extras["fiducial"]
    u = haar_unitary(3, s.child("row/2"))
    assert np.allclose(c.data[2], realify(kron4(u) @ h), atol=1e-12)


def test_pauli_generator_defect():
    h = pauli_fiducial(3, S.child("d"))
    defect = pauli_generator_defect(h, 3)
    assert defect["X"] < 1e-12  # the shift is an exact symmetry
    assert defect["Z"] >= 0.0
    # n = 2: the clock phase omega^(-2a) is trivial
    assert pauli_generator_defect(pauli_fiducial(2, S.child("d2")), 2)["Z"] < 1e-12


def test_pauli_composite_rejected():
    with pytest.raises(InvalidParameterError):
        spec("pauli", n=9)


# --- baselines ------------------------------------------------------------------------


def test_sphere():
    c = sample_sphere(1, 2, 40, S)
    assert np.allclose(np.linalg.norm(c.data, axis=1), 1, atol=1e-10)
    c = sample_sphere(2, 3, 10_000, S)
    assert np.linalg.norm(c.data.mean(axis=0)) < 0.05
    c = sample_sphere(3, 9, 200, S)
    assert np.allclose(np.linalg.norm(c.data, axis=1), 1, atol=1e-10)
    with pytest.raises(InvalidParameterError):
        sample_sphere(3, 3, 10, S)


def test_gaussian():
    c = sample_gaussian(3, 3, 100_000, S)
    assert np.max(np.abs(np.cov(c.data.T) - np.eye(3))) < 0.02
    c = sample_gaussian(2, 5, 500, S)
    sv = np.linalg.svd(c.data, compute_uv=False)
    assert sv[2] < 1e-8 * sv[0]
    assert c.d_i == 2 and c.d_a == 5
    with pytest.raises(InvalidParameterError):
        sample_gaussian(4, 3, 10, S)


def test_affine_nullspace():
    c = sample_affine(3, 8, 200, S)
    a = c.extras["constraint"]
    assert np.linalg.matrix_rank(a) == 5
    na = np.linalg.norm(a, 2)
    for r in c.data:
        assert np.linalg.norm(a @ r) < 1e-8 * na * np.linalg.norm(r)
    full = sample_affine(4, 4, 100, S)
    assert np.linalg.matrix_rank(full.data) == 4


def test_mbeta():
    c = sample_mbeta(2, 8, 500, S)
    iso = c.extras["isometry"]
    y = c.data @ iso.T
    assert np.max(np.abs(y)) <= np.sin(1.0) + 1e-12
    assert np.max(np.abs(y @ iso - c.data)) < 1e-8
    assert c.meta["embedding"] == "isometric"
    assert np.sin(np.cos(0.0)) == pytest.approx(0.8414709848)


# --- padding, determinism, i/o ---------------------------------------------------------


def test_embed_pad():
    c = sample_gr_vec(spec("gr-vec", n=4, k=2), 50, S)
    assert embed_pad(c, 6, S) is c
    p = embed_pad(c, 15, S.child("pad"))
    assert p.d_a == 15
    assert np.allclose(np.linalg.norm(p.data, axis=1), np.linalg.norm(c.data, axis=1), rtol=1e-9)
    d0 = np.linalg.norm(c.data[3] - c.data[17])
    d1 = np.linalg.norm(p.data[3] - p.data[17])
    assert abs(d0 - d1) <= 1e-9 * d0
    with pytest.raises(InvalidParameterError):
        embed_pad(c, 5, S)


def test_ambient_target_pads():
    c = sample(spec("gr-vec", n=4, k=2, ambient_target=12), 30, S)
    assert c.d_a == 12
    assert np.allclose(np.linalg.norm(c.data, axis=1), 1)


def test_rows_do_not_depend_on_N():
    a = sample(spec("st-vec", n=4, k=2, ambient_target=12), 10, S)
    b = sample(spec("st-vec", n=4, k=2, ambient_target=12), 25, S)
    assert np.array_equal(a.data, b.data[:10])


def test_zero_points_rejected():
    with pytest.raises(InvalidParameterError):
        sample_gr_vec(spec("gr-vec", n=4, k=2), 0, S)


def test_cloud_is_read_only():
    c = sample_gr_vec(spec("gr-vec", n=4, k=2), 5, S)
    with pytest.raises(ValueError):
        c.data[0, 0] = 1.0


def test_save_load_round_trip(tmp_path):
    c = sample(spec("flag-vec", n=4, k1=1, k2=2), 20, S)
    c = c.derive(c.data * 2, {"kind": "test", "factor": 2})
    path = save_cloud(c, tmp_path / "cloud.f64")
    assert path.stat().st_size == 20 * 24 * 8
    back = load_cloud(path)
    assert np.array_equal(back.data, c.data)
    assert back.spec == c.spec
    assert back.d_i == 5
    assert back.distortions == ({"kind": "test", "factor": 2},)
    assert np.array_equal(np.frombuffer(path.read_bytes(), "<f8"), c.data.ravel())


def test_csv_export(tmp_path):
    c = sample_gaussian(2, 3, 7, S)
    p = export_csv(c, tmp_path / "c.csv")
    assert np.array_equal(np.loadtxt(p, delimiter=","), c.data)


def test_non_finite_rejected():
    with pytest.raises(InvalidParameterError):
        PointCloud(np.array([[np.nan, 0.0]]), 1, "x")


# --- structural invariants over many specs ---------------------------------------------


@st.composite
def stiefel_like(draw):
    n = draw(st.integers(1, 7))
    k = draw(st.integers(1, n))
    return n, k


@settings(max_examples=40, deadline=None)
@given(nk=stiefel_like(), seed=st.integers(0, 2**31))
def test_structure_invariants(nk, seed):
    n, k = nk
    s = derive_stream(seed, "prop")
    st_m = sample(spec("st-matrix", n=n, k=k), 4, s).data.reshape(4, k, n)
    for x in st_m:
        assert np.max(np.abs(x @ x.T - np.eye(k))) < 1e-9
    gv = sample(spec("gr-vec", n=n, k=k), 4, s).data
    assert np.max(np.abs(np.sum(gv**2, axis=1) - 1)) < 1e-8
    sv = sample(spec("st-vec", n=n, k=k), 4, s).data
    assert np.max(np.abs(np.sum(sv**2, axis=1) - 1 - k)) < 1e-8
    assert sv.shape[1] == math.comb(n, k) + k * k
