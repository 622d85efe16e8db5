import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchmin import mesh, spaces
from patchmin.spaces import (
    CellGeom,
    FaceGeom,
    FieldCoeffs,
    build_element_space,
    broken_space,
    space_dim,
)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def tet_quadrature(deg: int):
    """Gauss quadrature on the reference tetrahedron via the Duffy transform.

    Exact for polynomials of total degree <= deg.  Returns barycentric
    points and weights summing to 1/6.
    """
    m = deg + 2
    x, w = np.polynomial.legendre.leggauss(m)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    pts, wts = [], []
    for (u, wu), (v, wv), (t, wt) in itertools.product(zip(x, w), repeat=3):
        xi1 = u
        xi2 = v * (1.0 - u)
        xi3 = t * (1.0 - u) * (1.0 - v)
        jac = (1.0 - u) ** 2 * (1.0 - v)
        lam0 = 1.0 - xi1 - xi2 - xi3
        pts.append((lam0, xi1, xi2, xi3))
        wts.append(wu * wv * wt * jac)
    return np.array(pts), np.array(wts)


def quad_inner_scalar(cell, q, ca, cb, deg_extra=0):
    """Quadrature value of the L2 product of two scalar frame fields."""
    bary, w = tet_quadrature(2 * q + deg_extra)
    vals = spaces.eval_tet_frame(q, bary)
    fa = vals @ ca
    fb = vals @ cb
    return 6.0 * cell.volume * float(np.sum(w * fa * fb))


def quad_inner_vector(cell, q, ca, cb):
    n = len(spaces.tet_indices(q))
    a3 = np.asarray(ca).reshape(3, n)
    b3 = np.asarray(cb).reshape(3, n)
    return sum(quad_inner_scalar(cell, q, a3[c], b3[c]) for c in range(3))


def random_cell(rng, scale=1.0):
    # reject slivers: high-degree generator sets on flat cells are genuinely
    # ill-conditioned and the space assembly refuses them
    while True:
        pts = scale * rng.standard_normal((4, 3))
        if mesh.signed_volume(pts) == 0.0:
            continue
        if mesh.tet_shape_ratio(pts) < 8.0:
            return CellGeom(pts)


def entity_sets(patch):
    verts = sorted({v for t in patch.tets for v in t.vertex_ids})
    edges = sorted({e for t in patch.tets for e in t.edges()})
    return verts, edges


def gamma_closure(patch, gamma):
    gv, ge = set(), set()
    for fi in gamma:
        ids = patch.faces[fi].ids
        gv.update(ids)
        ge.update(tuple(sorted(e)) for e in itertools.combinations(ids, 2))
    return gv, ge


def lagrange_dim_oracle(patch, k, gamma):
    """Standard continuous-P_k dimension by entity counting."""
    verts, edges = entity_sets(patch)
    gv, ge = gamma_closure(patch, gamma)
    nv = len([v for v in verts if v not in gv])
    ne = len([e for e in edges if e not in ge])
    nf = len([f for f in patch.faces if f.index not in gamma])
    nt = patch.n_tets
    return (
        nv
        + (k - 1) * ne
        + (k - 1) * (k - 2) // 2 * nf
        + (k - 1) * (k - 2) * (k - 3) // 6 * nt
    )


def nedelec_dim_oracle(patch, p, gamma):
    verts, edges = entity_sets(patch)
    _, ge = gamma_closure(patch, gamma)
    ne = len([e for e in edges if e not in ge])
    nf = len([f for f in patch.faces if f.index not in gamma])
    nt = patch.n_tets
    return (p + 1) * ne + p * (p + 1) * nf + p * (p - 1) * (p + 1) // 2 * nt


def raviart_dim_oracle(patch, p, gamma):
    nf = len([f for f in patch.faces if f.index not in gamma])
    nt = patch.n_tets
    return (p + 2) * (p + 1) // 2 * nf + p * (p + 1) * (p + 2) // 2 * nt


# ---------------------------------------------------------------------------
# frames: integration, elevation, multiplication, restriction
# ---------------------------------------------------------------------------

def test_integrate_poly_reference_values():
    assert spaces.integrate_poly((0, 0, 0)) == pytest.approx(1.0 / 6.0)
    assert spaces.integrate_poly((1, 0, 0)) == pytest.approx(1.0 / 24.0)
    assert spaces.integrate_poly((1, 1, 0)) == pytest.approx(1.0 / 120.0)
    assert spaces.integrate_poly((0, 0)) == pytest.approx(1.0 / 2.0)
    assert spaces.integrate_poly((1, 1)) == pytest.approx(1.0 / 24.0)
    cell = CellGeom(2.0 * np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]))
    assert spaces.integrate_poly((0, 0, 0), cell=cell) == pytest.approx(8.0 * 1 / 6)
    with pytest.raises(spaces.SpaceError):
        spaces.integrate_poly((1, 0, 0), face=FaceGeom(np.eye(3)))


def test_ref_mass_matches_quadrature():
    rng = np.random.default_rng(0)
    cell = random_cell(rng)
    for q in (1, 3):
        m = 6.0 * cell.volume * spaces.ref_mass(q)
        n = m.shape[0]
        for _ in range(5):
            ca = rng.standard_normal(n)
            cb = rng.standard_normal(n)
            assert ca @ m @ cb == pytest.approx(
                quad_inner_scalar(cell, q, ca, cb), rel=1e-12, abs=1e-13
            )


def test_whitening_reproduces_l2_norm():
    rng = np.random.default_rng(1)
    cell = random_cell(rng)
    q = 4
    c = rng.standard_normal(len(spaces.tet_indices(q)))
    w = spaces.whiten_scalar(cell, q, c)
    assert np.linalg.norm(w) ** 2 == pytest.approx(
        quad_inner_scalar(cell, q, c, c), rel=1e-11
    )


def test_elevation_preserves_point_values():
    rng = np.random.default_rng(2)
    q = 2
    c = rng.standard_normal(len(spaces.tet_indices(q)))
    e = spaces.elevate_matrix(q, 3)
    bary, _ = tet_quadrature(6)
    v_lo = spaces.eval_tet_frame(q, bary) @ c
    v_hi = spaces.eval_tet_frame(q + 3, bary) @ (e @ c)
    assert np.allclose(v_lo, v_hi, atol=1e-13)


def test_linear_multiplication_matches_pointwise():
    rng = np.random.default_rng(3)
    cell = random_cell(rng)
    q = 3
    c = rng.standard_normal(len(spaces.tet_indices(q)))
    w = rng.standard_normal(4)  # vertex values of an affine function
    m = spaces.linear_mul_matrix(q, w)
    bary, _ = tet_quadrature(8)
    ell = bary @ w
    lhs = spaces.eval_tet_frame(q + 1, bary) @ (m @ c)
    rhs = ell * (spaces.eval_tet_frame(q, bary) @ c)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_monomial_in_frame_pointwise():
    rng = np.random.default_rng(4)
    cell = random_cell(rng)
    gamma = (2, 1, 1)
    c = spaces.monomial_in_frame(cell, gamma)
    bary, _ = tet_quadrature(8)
    xyz = bary @ cell.points
    direct = np.prod((xyz - cell.points[0]) ** np.asarray(gamma), axis=1)
    via_frame = spaces.eval_tet_frame(sum(gamma), bary) @ c
    assert np.allclose(direct, via_frame, atol=1e-12 * max(1, np.abs(direct).max()))


def test_derivatives_match_sympy():
    import sympy as sp

    pts = np.array([[0, 0, 0], [2, 0, 0], [0, 1, 0], [1, 1, 3]], dtype=float)
    cell = CellGeom(pts)
    x, y, z = sp.symbols("x y z")
    a = sp.Matrix(
        [[1, *map(sp.Rational, map(int, p))] for p in pts]
    ).T
    lam = a.inv() * sp.Matrix([1, x, y, z])
    q = 3
    rng = np.random.default_rng(5)
    c = rng.integers(-3, 4, len(spaces.tet_indices(q))).astype(float)
    f = sum(
        ci * spaces._multinomial(al) * math.prod(lam[i] ** al[i] for i in range(4))
        for ci, al in zip(c, spaces.tet_indices(q))
    )
    d = spaces.derivative_matrices(cell, q)
    bary, _ = tet_quadrature(6)
    xyz = bary @ cell.points
    for dim, sym in enumerate((x, y, z)):
        df = sp.lambdify((x, y, z), sp.diff(f, sym), "numpy")
        expected = df(xyz[:, 0], xyz[:, 1], xyz[:, 2])
        got = spaces.eval_tet_frame(q - 1, bary) @ (d[dim] @ c)
        assert np.allclose(got, np.broadcast_to(expected, got.shape), atol=1e-10)


def test_restriction_is_exact_on_face():
    rng = np.random.default_rng(6)
    cell = random_cell(rng)
    q = 3
    c = rng.standard_normal(len(spaces.tet_indices(q)))
    face, keep = spaces.cell_face(cell, (0, 2, 3))
    r = spaces.restrict_matrix(q, keep)
    # sample points on the face in face barycentric coordinates
    fb = np.array([[0.2, 0.3, 0.5], [0.7, 0.1, 0.2], [1 / 3, 1 / 3, 1 / 3]])
    xyz = fb @ face.points
    elem_bary = cell.barycentric(xyz)
    direct = spaces.eval_tet_frame(q, elem_bary) @ c
    restricted = np.array(
        [
            sum(
                coef * spaces._multinomial(mu) * np.prod(pt ** np.asarray(mu))
                for coef, mu in zip(r @ c, spaces.tri_indices(q))
            )
            for pt in fb
        ]
    )
    assert np.allclose(direct, restricted, atol=1e-12)


def test_frame_compose_reexpands_subcell():
    rng = np.random.default_rng(7)
    cell = random_cell(rng)
    # a sub-tetrahedron: three original vertices and the centroid
    sub_pts = np.vstack([cell.points[:3], cell.points.mean(axis=0)])
    sub = CellGeom(sub_pts)
    q = 3
    c = rng.standard_normal(len(spaces.tet_indices(q)))
    m = spaces.frame_compose_matrix(cell, q, sub)
    bary, _ = tet_quadrature(6)
    xyz = bary @ sub.points
    v_src = spaces.eval_tet_frame(q, cell.barycentric(xyz)) @ c
    v_sub = spaces.eval_tet_frame(q, bary) @ (m @ c)
    assert np.allclose(v_src, v_sub, atol=1e-11)


def test_frame_condition_is_moderate():
    # the reason for Bernstein frames: conditioning grows like 4^q, not 1e13
    assert spaces.frame_condition(4) < 1e4
    assert spaces.frame_condition(8) < 1e8


# ---------------------------------------------------------------------------
# element spaces
# ---------------------------------------------------------------------------

def test_space_dimensions():
    assert [space_dim("RT", p) for p in range(4)] == [4, 15, 36, 70]
    assert [space_dim("N", p) for p in range(4)] == [6, 20, 45, 84]
    assert [space_dim("P", p) for p in range(4)] == [1, 4, 10, 20]


@pytest.mark.parametrize("kind,degree", [("P", 2), ("RT", 0), ("RT", 2), ("N", 0), ("N", 2)])
def test_element_space_orthonormal(kind, degree):
    rng = np.random.default_rng(8)
    cell = random_cell(rng)
    es = build_element_space(kind, degree, cell)
    assert es.dim == space_dim(kind, degree)
    gram = spaces.mass_matrix(es)
    assert np.allclose(gram, np.eye(es.dim), atol=1e-10)
    # cross-check two random members against quadrature
    ca = rng.standard_normal(es.dim)
    cb = rng.standard_normal(es.dim)
    fa = es.basis @ ca
    fb = es.basis @ cb
    if es.ncomp == 3:
        val = quad_inner_vector(cell, es.frame_degree, fa, fb)
    else:
        val = quad_inner_scalar(cell, es.frame_degree, fa, fb)
    assert val == pytest.approx(float(ca @ cb), rel=1e-9, abs=1e-11)


def test_rt_membership():
    rng = np.random.default_rng(9)
    cell = random_cell(rng)
    es = build_element_space("RT", 0, cell)
    n1 = len(spaces.tet_indices(1))
    # the position field x - v0 lies in RT_0
    frame = np.zeros((3, n1))
    for c in range(3):
        mono = spaces.monomial_in_frame(cell, tuple(1 if i == c else 0 for i in range(3)))
        frame[c] = mono
    coords = es.coords_of_frame(frame)
    assert np.linalg.norm(coords) > 0
    # but (x - v0)_1 * e_1 does not
    bad = np.zeros((3, n1))
    bad[0] = frame[0]
    with pytest.raises(spaces.SpaceError):
        es.coords_of_frame(bad)


def test_n_membership():
    rng = np.random.default_rng(10)
    cell = random_cell(rng)
    es = build_element_space("N", 0, cell)
    n1 = len(spaces.tet_indices(1))
    # y cross a constant vector lies in N_0 ...
    const = np.array([0.3, -1.2, 0.7])
    frame = np.zeros((3, n1))
    for c in range(3):
        for a in range(3):
            for b in range(3):
                s = spaces._levi(c, a, b)
                if s:
                    mono = spaces.monomial_in_frame(
                        cell, tuple(1 if i == a else 0 for i in range(3))
                    )
                    frame[c] += s * const[b] * mono
    es.coords_of_frame(frame)
    # ... the radial field y does not
    radial = np.zeros((3, n1))
    for c in range(3):
        radial[c] = spaces.monomial_in_frame(
            cell, tuple(1 if i == c else 0 for i in range(3))
        )
    with pytest.raises(spaces.SpaceError):
        es.coords_of_frame(radial)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10**6), kind=st.sampled_from(["RT", "N"]), degree=st.integers(0, 3))
def test_element_space_random_cells(seed, kind, degree):
    rng = np.random.default_rng(seed)
    cell = random_cell(rng, scale=1.0 + (seed % 5))
    es = build_element_space(kind, degree, cell)
    assert es.dim == space_dim(kind, degree)
    w = es.whitened
    assert np.allclose(w.T @ w, np.eye(es.dim), atol=1e-9)


# ---------------------------------------------------------------------------
# differential operators
# ---------------------------------------------------------------------------

def test_diff_matrix_curl_and_div():
    rng = np.random.default_rng(11)
    cell = random_cell(rng)
    p = 2
    nsp = build_element_space("N", p, cell)
    rsp = build_element_space("RT", p, cell)
    psp = build_element_space("P", p, cell)
    curl = spaces.diff_matrix(nsp, rsp)   # containment is exact, no error raised
    div = spaces.diff_matrix(rsp, psp)
    # div o curl = 0
    assert np.linalg.norm(div @ curl) < 1e-9
    hsp = build_element_space("P", p + 1, cell)
    grad = spaces.diff_matrix(hsp, nsp)
    curl_grad = curl @ grad
    assert np.linalg.norm(curl_grad) < 1e-9
    # gradient of an affine function is the matching constant
    vals = cell.points @ np.array([1.0, 2.0, -0.5])  # f = x + 2y - z/2
    lin = np.zeros(len(spaces.tet_indices(1)))
    pos = {a: i for i, a in enumerate(spaces.tet_indices(1))}
    for j in range(4):
        idx = [0, 0, 0, 0]
        idx[j] = 1
        lin[pos[tuple(idx)]] = vals[j]
    f1 = build_element_space("P", 1, cell)
    fc = f1.coords_of_frame(lin)
    g = spaces.diff_matrix(f1, build_element_space("N", 0, cell)) @ fc
    gframe = build_element_space("N", 0, cell).frame_coeffs(g)
    bary, _ = tet_quadrature(3)
    v = np.stack([spaces.eval_tet_frame(1, bary) @ gframe[c] for c in range(3)], axis=1)
    assert np.allclose(v, np.array([1.0, 2.0, -0.5]), atol=1e-10)


def test_broken_diff_norms(bipyramid8):
    rng = np.random.default_rng(12)
    b = broken_space(bipyramid8, "RT", 1)
    c = rng.standard_normal(b.dim)
    d = spaces.broken_diff_whitened(b, 1)
    val = np.linalg.norm(d @ c) ** 2
    # quadrature check of the broken divergence norm
    total = 0.0
    for ti, es in enumerate(b.spaces):
        fr = es.frame_coeffs(b.block(ti, c))
        dm = spaces.derivative_matrices(es.cell, es.frame_degree)
        divf = sum(dm[cc] @ fr[cc] for cc in range(3))
        lift = spaces.elevate_matrix(es.frame_degree - 1, 1) @ divf
        total += quad_inner_scalar(es.cell, es.frame_degree, lift, lift)
    assert val == pytest.approx(total, rel=1e-10)


# ---------------------------------------------------------------------------
# traces and surface rotation
# ---------------------------------------------------------------------------

def test_tangential_trace_is_tangent_and_orientation_free():
    rng = np.random.default_rng(13)
    cell = random_cell(rng)
    es = build_element_space("N", 2, cell)
    face, _ = spaces.cell_face(cell, (1, 2, 3))
    f = FieldCoeffs(es, rng.standard_normal(es.dim))
    tr = spaces.tangential_trace(f, face)
    # pointwise tangency: components along the normal vanish
    assert np.allclose(face.normal @ tr, 0.0, atol=1e-12)


def test_trace_space_dim_and_two_sided_agreement(bipyramid8):
    p = 1
    b = broken_space(bipyramid8, "N", p)
    fi = sorted(bipyramid8.interior_face_ids)[0]
    ta, tb = bipyramid8.faces[fi].tets
    face = FaceGeom.from_patch(bipyramid8, fi)
    sa = spaces.SurfaceTraceSpace(face, p, b.spaces[ta])
    sb = spaces.SurfaceTraceSpace(face, p, b.spaces[tb])
    assert sa.dim == (p + 1) * (p + 3)
    pa = sa.whitened @ sa.whitened.T
    pb = sb.whitened @ sb.whitened.T
    assert np.linalg.norm(pa - pb) < 1e-9


def test_surface_curl_matches_volume_curl():
    rng = np.random.default_rng(14)
    cell = random_cell(rng)
    p = 2
    es = build_element_space("N", p, cell)
    f = FieldCoeffs(es, rng.standard_normal(es.dim))
    for slots in ((0, 1, 2), (1, 2, 3), (0, 2, 3)):
        face, keep = spaces.cell_face(cell, slots)
        tr = spaces.tangential_trace(f, face)
        lhs = spaces.surface_curl(face, tr)
        cf = spaces._curl_frames(es) @ f.coeffs  # (3, n(q-1))
        r = spaces.restrict_matrix(es.frame_degree - 1, keep)
        rhs = np.einsum("c,cf->f", face.normal, np.einsum("fi,ci->cf", r, cf))
        assert np.allclose(lhs, rhs, atol=1e-10 * max(1.0, np.abs(rhs).max()))


def test_surface_curl_stokes_oracle():
    rng = np.random.default_rng(15)
    cell = random_cell(rng)
    es = build_element_space("N", 2, cell)
    f = FieldCoeffs(es, rng.standard_normal(es.dim))
    face, _ = spaces.cell_face(cell, (0, 1, 3))
    tr = spaces.tangential_trace(f, face)
    rot = spaces.surface_curl(face, tr)
    q = es.frame_degree
    # area integral of the rotation from the exact frame integrals
    area_int = 0.0
    for coef, mu in zip(rot, spaces.tri_indices(q - 1)):
        num = math.prod(math.factorial(m) for m in mu)
        den = math.factorial(sum(mu) + 2)
        area_int += coef * spaces._multinomial(mu) * 2.0 * face.area * num / den
    # line integral of the tangential component around the face boundary,
    # counterclockwise w.r.t. the face normal
    x, w = np.polynomial.legendre.leggauss(q + 2)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    # vertices in counterclockwise order (flip if the chart says otherwise)
    tri2 = np.column_stack(
        [(face.points - face.points[0]) @ face.e1, (face.points - face.points[0]) @ face.e2]
    )
    order = [0, 1, 2]
    d1, d2 = tri2[1] - tri2[0], tri2[2] - tri2[0]
    if d1[0] * d2[1] - d1[1] * d2[0] < 0:
        order = [0, 2, 1]
    line_int = 0.0
    for a, bidx in zip(order, order[1:] + order[:1]):
        pa, pb = face.points[a], face.points[bidx]
        tangent = pb - pa
        for xi, wi in zip(x, w):
            pt = pa + xi * tangent
            lam = np.zeros(3)
            # face barycentric coordinates of pt
            lam[a] = 1.0 - xi
            lam[bidx] = xi
            vals = np.array(
                [
                    spaces._multinomial(mu) * np.prod(lam ** np.asarray(mu))
                    for mu in spaces.tri_indices(q)
                ]
            )
            wvec = tr @ vals
            line_int += wi * float(wvec @ tangent)
    assert area_int == pytest.approx(line_int, rel=1e-9, abs=1e-11)


# ---------------------------------------------------------------------------
# conforming subspaces and exactness
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("p", [0, 1, 2])
def test_conforming_dims_interior(bipyramid8, p):
    patch = bipyramid8
    for kind, oracle in (
        ("N", nedelec_dim_oracle),
        ("RT", raviart_dim_oracle),
    ):
        for gamma in (patch.gamma_face_ids, frozenset()):
            sub = spaces.assemble_conforming_subspace(
                broken_space(patch, kind, p), gamma
            )
            assert sub.dim == oracle(patch, p, gamma), (kind, p, len(gamma))
    for gamma in (patch.gamma_face_ids, frozenset()):
        sub = spaces.assemble_conforming_subspace(
            broken_space(patch, "P", p + 1), gamma
        )
        assert sub.dim == lagrange_dim_oracle(patch, p + 1, gamma)


@pytest.mark.parametrize("kind_fan", ["mixed-fan", "dirichlet-fan", "full-natural"])
def test_conforming_dims_boundary(fan_patches, kind_fan):
    patch = fan_patches[kind_fan]
    p = 1
    gamma = patch.gamma_face_ids
    assert spaces.assemble_conforming_subspace(
        broken_space(patch, "N", p), gamma
    ).dim == nedelec_dim_oracle(patch, p, gamma)
    assert spaces.assemble_conforming_subspace(
        broken_space(patch, "RT", p), gamma
    ).dim == raviart_dim_oracle(patch, p, gamma)
    assert spaces.assemble_conforming_subspace(
        broken_space(patch, "P", p + 1), gamma
    ).dim == lagrange_dim_oracle(patch, p + 1, gamma)


def test_conforming_fields_have_no_jumps(bipyramid8):
    rng = np.random.default_rng(16)
    patch = bipyramid8
    b = broken_space(patch, "N", 1)
    sub = spaces.assemble_conforming_subspace(b)
    c = sub.basis @ rng.standard_normal(sub.dim)
    for fi in sorted(patch.interior_face_ids):
        ta, tb = patch.faces[fi].tets
        face = FaceGeom.from_patch(patch, fi)
        tra = spaces.tangential_trace_matrix(b.spaces[ta], face) @ b.block(ta, c)
        trb = spaces.tangential_trace_matrix(b.spaces[tb], face) @ b.block(tb, c)
        assert np.allclose(tra, trb, atol=1e-10)
    for fi in sorted(patch.gamma_face_ids):
        (ta,) = patch.faces[fi].tets
        face = FaceGeom.from_patch(patch, fi)
        tra = spaces.tangential_trace_matrix(b.spaces[ta], face) @ b.block(ta, c)
        assert np.allclose(tra, 0.0, atol=1e-10)


def test_exact_sequence_interior(bipyramid8):
    rep = spaces.check_exact_sequence(bipyramid8, 1)
    assert rep["ok"]
    assert rep["dim_ker_grad"] == 0  # essential boundary kills constants
    rep_free = spaces.check_exact_sequence(bipyramid8, 1, gamma_faces=frozenset())
    assert rep_free["ok"]
    assert rep_free["dim_ker_grad"] == 1  # constants survive


def test_exact_sequence_boundary(fan_patches):
    rep = spaces.check_exact_sequence(fan_patches["mixed-fan"], 1)
    assert rep["ok"]
    assert rep["dim_ker_grad"] == 0


def test_dimension_rows(bipyramid8):
    rows = spaces.dimension_rows(bipyramid8, degrees=[0, 1], patch_id="bp8")
    assert len(rows) == 6
    for row in rows:
        assert set(row) == {
            "kind", "p", "dim_element", "dim_broken", "dim_conforming", "patch_id",
        }
        assert row["dim_broken"] == bipyramid8.n_tets * row["dim_element"]
