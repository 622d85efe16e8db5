import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchmin import mesh, piola, spaces
from patchmin.mesh import VertexPatch, generate_boundary_patch, validate_patch
from patchmin.piola import (
    AffineMap,
    MirrorPairing,
    PiolaError,
    SymmetrizationOp,
    affine_between,
    apply_symmetrization,
    piola_c,
    piola_d,
    piola_norm_bound,
    reflect_patch,
    transport_broken,
    transport_norm_factor,
)
from patchmin.spaces import (
    CellGeom,
    FaceGeom,
    FieldCoeffs,
    broken_space,
    build_element_space,
    diff_matrix,
)

from test_spaces import random_cell, tet_quadrature


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def eval_vector(v: FieldCoeffs, pts: np.ndarray) -> np.ndarray:
    """Pointwise values of a vector element field at cartesian points."""
    es = v.space
    frame = es.frame_coeffs(v.coeffs)
    bary = es.cell.barycentric(pts)
    vals = spaces.eval_tet_frame(es.frame_degree, bary)
    return vals @ frame.T


def frame_inner(cell: CellGeom, q: int, fa: np.ndarray, fb: np.ndarray) -> float:
    """Exact L2 product of two vector fields given as degree-``q`` frames."""
    m = 6.0 * cell.volume * spaces.ref_mass(q)
    return float(sum(fa[c] @ m @ fb[c] for c in range(3)))


def constant_field(es, u):
    """The constant field ``u`` in element-space coordinates."""
    frame = np.repeat(np.asarray(u, float)[:, None], len(spaces.tet_indices(es.frame_degree)), axis=1)
    return FieldCoeffs(es, es.coords_of_frame(frame))


def random_field(rng, es):
    return FieldCoeffs(es, rng.standard_normal(es.dim))


# ---------------------------------------------------------------------------
# affine maps
# ---------------------------------------------------------------------------

def test_affine_map_roundtrip_compose_and_eps():
    rng = np.random.default_rng(3)
    j = rng.standard_normal((3, 3)) + 2 * np.eye(3)
    m = AffineMap(j, rng.standard_normal(3))
    x = rng.standard_normal((5, 3))
    assert np.allclose(m.inverse().apply(m.apply(x)), x, atol=1e-12)
    k = AffineMap(rng.standard_normal((3, 3)) + 2 * np.eye(3), rng.standard_normal(3))
    assert np.allclose(k.compose(m).apply(x), k.apply(m.apply(x)), atol=1e-12)
    assert m.eps == (1 if np.linalg.det(j) > 0 else -1)
    flip = AffineMap(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    assert flip.eps == -1


def test_affine_from_points_and_degenerate():
    rng = np.random.default_rng(4)
    src = random_cell(rng).points
    m = AffineMap(rng.standard_normal((3, 3)) + 2 * np.eye(3), rng.standard_normal(3))
    fit = AffineMap.from_points(src, m.apply(src))
    assert np.allclose(fit.J, m.J, atol=1e-10)
    assert np.allclose(fit.b, m.b, atol=1e-10)
    flat = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]])
    with pytest.raises(PiolaError):
        AffineMap.from_points(flat, flat)


def test_affine_between_respects_vertex_map():
    rng = np.random.default_rng(5)
    src, dst = random_cell(rng), random_cell(rng)
    vm = (2, 0, 3, 1)
    m = affine_between(src, dst, vm)
    for i, j in enumerate(vm):
        assert np.allclose(m.apply(src.points[i]), dst.points[j], atol=1e-9)
    with pytest.raises(PiolaError):
        affine_between(src, dst, (0, 0, 1, 2))


# ---------------------------------------------------------------------------
# Piola transforms against pointwise pullback
# ---------------------------------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_piola_c_matches_pullback_pointwise(seed):
    rng = np.random.default_rng(seed)
    src, dst = random_cell(rng), random_cell(rng)
    m = affine_between(src, dst)
    es = build_element_space("N", 2, src)
    v = random_field(rng, es)
    w = piola_c(m, v)
    bary, _ = tet_quadrature(2)
    pts = bary @ dst.points
    expect = eval_vector(v, m.inverse().apply(pts)) @ np.linalg.inv(m.J)
    got = eval_vector(w, pts)
    assert np.allclose(got, expect, atol=1e-9 * max(1.0, np.abs(expect).max()))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_piola_d_matches_pullback_pointwise(seed):
    rng = np.random.default_rng(seed)
    src, dst = random_cell(rng), random_cell(rng)
    m = affine_between(src, dst)
    es = build_element_space("RT", 2, src)
    v = random_field(rng, es)
    w = piola_d(m, v)
    bary, _ = tet_quadrature(2)
    pts = bary @ dst.points
    expect = eval_vector(v, m.inverse().apply(pts)) @ (m.J.T / m.det)
    got = eval_vector(w, pts)
    assert np.allclose(got, expect, atol=1e-9 * max(1.0, np.abs(expect).max()))


def test_piola_rejects_scalar_fields_and_wrong_targets():
    rng = np.random.default_rng(6)
    src, dst = random_cell(rng), random_cell(rng)
    m = affine_between(src, dst)
    scal = build_element_space("P", 2, src)
    with pytest.raises(PiolaError):
        piola_c(m, random_field(rng, scal))
    es = build_element_space("N", 2, src)
    low = build_element_space("N", 1, dst)
    with pytest.raises(PiolaError):
        piola_c(m, random_field(rng, es), target=low)


def test_piola_norm_bound_is_exact_operator_norm():
    rng = np.random.default_rng(7)
    src, dst = random_cell(rng), random_cell(rng)
    m = affine_between(src, dst)
    for variant, kind, matrix in (
        ("c", "N", np.linalg.inv(m.J).T),
        ("d", "RT", m.J / m.det),
    ):
        bound = piola_norm_bound(m, variant)
        es = build_element_space(kind, 1, src)
        # attained by the constant field along the top right-singular direction
        _, _, vt = np.linalg.svd(matrix)
        v = constant_field(es, vt[0])
        w = piola_c(m, v) if variant == "c" else piola_d(m, v)
        assert w.norm() / v.norm() == pytest.approx(bound, rel=1e-11)
        for _ in range(10):
            v = random_field(rng, es)
            w = piola_c(m, v) if variant == "c" else piola_d(m, v)
            assert w.norm() <= bound * v.norm() * (1 + 1e-11)
    with pytest.raises(PiolaError):
        piola_norm_bound(m, "x")


def test_piola_c_commutes_with_curl():
    rng = np.random.default_rng(8)
    src, dst = random_cell(rng), random_cell(rng)
    m = affine_between(src, dst)
    p = 2
    n_in = build_element_space("N", p, src)
    n_out = build_element_space("N", p, dst)
    rt_in = build_element_space("RT", p, src)
    rt_out = build_element_space("RT", p, dst)
    v = random_field(rng, n_in)
    lhs = diff_matrix(n_out, rt_out) @ piola_c(m, v, target=n_out).coeffs
    curl_v = FieldCoeffs(rt_in, diff_matrix(n_in, rt_in) @ v.coeffs)
    rhs = piola_d(m, curl_v, target=rt_out).coeffs
    assert np.allclose(lhs, rhs, atol=1e-9 * np.linalg.norm(rhs))


def test_piola_d_scales_divergence():
    rng = np.random.default_rng(9)
    src, dst = random_cell(rng), random_cell(rng)
    m = affine_between(src, dst)
    p = 2
    rt_in = build_element_space("RT", p, src)
    rt_out = build_element_space("RT", p, dst)
    p_in = build_element_space("P", p, src)
    p_out = build_element_space("P", p, dst)
    v = random_field(rng, rt_in)
    lhs = diff_matrix(rt_out, p_out) @ piola_d(m, v, target=rt_out).coeffs
    div_frame = p_in.frame_coeffs(diff_matrix(rt_in, p_in) @ v.coeffs)
    compose = spaces.frame_compose_matrix(
        src, p_in.frame_degree, dst, m.inverse().apply(dst.points)
    )
    rhs = p_out.coords_of_frame(compose @ div_frame / m.det)
    assert np.allclose(lhs, rhs, atol=1e-9 * max(np.linalg.norm(rhs), 1.0))


def test_piola_c_adjoint_identity_with_curl():
    # (psi_c v, curl w) on the image cell equals eps * (v, curl(psi_c^-1 w))
    # on the source cell, including for orientation-reversing maps
    rng = np.random.default_rng(10)
    src = random_cell(rng)
    for reverse in (False, True):
        dst = random_cell(rng)
        if reverse:
            pts = dst.points.copy()
            pts[[0, 1]] = pts[[1, 0]]
            dst = CellGeom(pts)
        m = affine_between(src, dst)
        p = 1
        n_in = build_element_space("N", p, src)
        n_out = build_element_space("N", p, dst)
        rt_in = build_element_space("RT", p, src)
        rt_out = build_element_space("RT", p, dst)
        v = random_field(rng, n_in)
        w = random_field(rng, n_out)
        q = p + 1
        lhs = frame_inner(
            dst,
            q,
            n_out.frame_coeffs(piola_c(m, v, target=n_out).coeffs),
            rt_out.frame_coeffs(diff_matrix(n_out, rt_out) @ w.coeffs),
        )
        back = piola_c(m.inverse(), w, target=n_in)
        rhs = m.eps * frame_inner(
            src,
            q,
            n_in.frame_coeffs(v.coeffs),
            rt_in.frame_coeffs(diff_matrix(n_in, rt_in) @ back.coeffs),
        )
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_transport_broken_moves_every_element():
    rng = np.random.default_rng(11)
    half = generate_boundary_patch("dirichlet-fan", n=3)
    shift = AffineMap(0.5 * np.eye(3), np.array([1.0, 0.0, 0.0]))
    moved = VertexPatch(
        shift.apply(half.vertices),
        [t.vertex_ids for t in half.tets],
        center=half.center,
        gamma_ess=[half.faces[fi].ids for fi in half.ess_cone_face_ids],
    )
    src = broken_space(half, "N", 1)
    dst = broken_space(moved, "N", 1)
    maps = [shift] * half.n_tets
    v = FieldCoeffs(src, rng.standard_normal(src.dim))
    w = transport_broken(v, maps, dst, "c")
    factor = transport_norm_factor(maps, "c")
    assert factor == pytest.approx(piola_norm_bound(shift, "c"))
    assert w.norm() <= factor * v.norm() * (1 + 1e-11)
    pts = tet_quadrature(1)[0] @ dst.cells[1].points
    got = eval_vector(FieldCoeffs(dst.spaces[1], dst.block(1, w.coeffs)), pts)
    expect = eval_vector(
        FieldCoeffs(src.spaces[1], src.block(1, v.coeffs)), shift.inverse().apply(pts)
    ) @ np.linalg.inv(shift.J)
    assert np.allclose(got, expect, atol=1e-10)
    with pytest.raises(PiolaError):
        transport_broken(v, maps[:-1], dst, "c")


# ---------------------------------------------------------------------------
# reflection of patches
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def fan_pairing():
    half = generate_boundary_patch("dirichlet-fan", n=2)
    return reflect_patch(half, axis=2)


def test_reflect_single_tet_patch():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    half = VertexPatch(verts, [(0, 1, 2, 3)], gamma_ess=[(0, 1, 3), (0, 2, 3)])
    pairing = reflect_patch(half, axis=2)
    full = pairing.full
    assert full.n_tets == 2 and len(full.vertices) == 5
    assert pairing.plus == [0] and pairing.minus == [1]
    assert validate_patch(full).ok
    assert full.kind == "boundary"
    # the plane face became interior; both wall labels were mirrored
    assert len(full.interior_face_ids) == 1
    assert len(full.ess_cone_face_ids) == 4


def test_reflect_fan_patch_is_valid_and_relabelled(fan_pairing):
    half, full = fan_pairing.half, fan_pairing.full
    assert full.n_tets == 2 * half.n_tets
    report = validate_patch(full)
    assert report.ok, report.summary()
    assert full.kind == "boundary"
    # floors became interior, so the essential cone faces are the four walls
    assert len(full.ess_cone_face_ids) == 4
    assert len(full.nat_face_ids) == 0


def test_reflect_rejects_bad_geometry(bipyramid8):
    with pytest.raises(PiolaError):
        reflect_patch(bipyramid8, axis=2)  # crosses the plane
    verts = np.array([[0, 0, 1], [1, 0, 1], [0, 1, 1], [0, 0, 2.0]])
    shifted = VertexPatch(verts, [(0, 1, 2, 3)])
    with pytest.raises(PiolaError):
        reflect_patch(shifted, axis=2)  # center off the plane
    with pytest.raises(PiolaError):
        reflect_patch(shifted, axis=5)


# ---------------------------------------------------------------------------
# symmetrization operators
# ---------------------------------------------------------------------------

def plane_face_pairs(pairing):
    """(plus element, minus element, shared plane face id) in the doubled patch."""
    full = pairing.full
    out = []
    for i in range(pairing.half.n_tets):
        pe, me = pairing.plus[i], pairing.minus[i]
        shared = set(full._tet_faces[pe]) & set(full._tet_faces[me])
        for fi in shared:
            if all(abs(full.vertices[v][pairing.axis]) < 1e-12 for v in full.faces[fi].ids):
                out.append((pe, me, fi))
    return out


@pytest.mark.parametrize("variant,kind", [("c", "N"), ("d", "RT")])
def test_symmetrization_identities_and_norms(fan_pairing, variant, kind):
    rng = np.random.default_rng(12)
    half_sp = broken_space(fan_pairing.half, kind, 1)
    full_sp = broken_space(fan_pairing.full, kind, 1)
    v = FieldCoeffs(half_sp, rng.standard_normal(half_sp.dim))
    mirror = SymmetrizationOp(2, "mirror", variant)
    zero = SymmetrizationOp(2, "zero", variant)
    fold = SymmetrizationOp(2, "fold", variant)
    restrict = SymmetrizationOp(2, "restrict", variant)

    mv = apply_symmetrization(mirror, fan_pairing, v)
    assert mv.norm() ** 2 == pytest.approx(2.0 * v.norm() ** 2, rel=1e-12)
    assert mirror.norm_bound == pytest.approx(np.sqrt(2.0))

    ev = apply_symmetrization(zero, fan_pairing, v)
    assert ev.norm() == pytest.approx(v.norm(), rel=1e-12)

    # retraction identities: R(M v) = v, F(E v) = v, F(M v) = 0
    rv = apply_symmetrization(restrict, fan_pairing, mv)
    assert np.allclose(rv.coeffs, v.coeffs, atol=1e-12)
    fev = apply_symmetrization(fold, fan_pairing, ev)
    assert np.allclose(fev.coeffs, v.coeffs, atol=1e-11)
    fmv = apply_symmetrization(fold, fan_pairing, mv)
    assert np.linalg.norm(fmv.coeffs) < 1e-11 * max(v.norm(), 1.0)

    u = FieldCoeffs(full_sp, rng.standard_normal(full_sp.dim))
    fu = apply_symmetrization(fold, fan_pairing, u)
    assert fu.norm() <= np.sqrt(2.0) * u.norm() * (1 + 1e-12)
    ru = apply_symmetrization(restrict, fan_pairing, u)
    assert ru.norm() <= u.norm() * (1 + 1e-12)

    with pytest.raises(PiolaError):
        apply_symmetrization(mirror, fan_pairing, u)
    with pytest.raises(PiolaError):
        apply_symmetrization(fold, fan_pairing, v)
    with pytest.raises(PiolaError):
        SymmetrizationOp(2, "double", variant)


@pytest.mark.parametrize("variant,kind", [("c", "N"), ("d", "RT")])
def test_mirror_extension_is_conforming_across_plane(fan_pairing, variant, kind):
    rng = np.random.default_rng(13)
    half_sp = broken_space(fan_pairing.half, kind, 1)
    full_sp = broken_space(fan_pairing.full, kind, 1)
    v = FieldCoeffs(half_sp, rng.standard_normal(half_sp.dim))
    mv = apply_symmetrization(SymmetrizationOp(2, "mirror", variant), fan_pairing, v)
    full = fan_pairing.full
    for pe, me, fi in plane_face_pairs(fan_pairing):
        face = FaceGeom.from_patch(full, fi)
        fields = [
            FieldCoeffs(full_sp.spaces[t], full_sp.block(t, mv.coeffs)) for t in (pe, me)
        ]
        if variant == "c":
            jump = spaces.tangential_trace(fields[0], face) - spaces.tangential_trace(
                fields[1], face
            )
        else:
            jump = spaces.normal_trace(fields[0], face) - spaces.normal_trace(
                fields[1], face
            )
        assert np.linalg.norm(jump) < 1e-10 * max(1.0, v.norm())


@pytest.mark.parametrize("variant,kind", [("c", "N"), ("d", "RT")])
def test_fold_of_conforming_field_has_zero_plane_trace(fan_pairing, variant, kind):
    rng = np.random.default_rng(14)
    full_sp = broken_space(fan_pairing.full, kind, 1)
    conf = spaces.assemble_conforming_subspace(full_sp, gamma_faces=frozenset())
    u = FieldCoeffs(full_sp, conf.basis @ rng.standard_normal(conf.basis.shape[1]))
    w = apply_symmetrization(SymmetrizationOp(2, "fold", variant), fan_pairing, u)
    half_sp = w.space
    half = fan_pairing.half
    plane_faces = [
        fi
        for fi in half.boundary_face_ids
        if all(abs(half.vertices[v][2]) < 1e-12 for v in half.faces[fi].ids)
    ]
    assert plane_faces
    for fi in plane_faces:
        (ti,) = half.faces[fi].tets
        face = FaceGeom.from_patch(half, fi)
        f = FieldCoeffs(half_sp.spaces[ti], half_sp.block(ti, w.coeffs))
        if variant == "c":
            tr = spaces.tangential_trace(f, face)
        else:
            tr = spaces.normal_trace(f, face)
        assert np.linalg.norm(tr) < 1e-9 * max(1.0, u.norm())
