"""Polynomial element spaces on tetrahedra in barycentric Bernstein frames.

All fields are represented by coefficients in Bernstein frames: scaled
barycentric monomials ``mult(alpha) * lambda^alpha`` of a fixed total degree.
The frame is geometry-independent up to the volume factor, so mass matrices,
degree elevation, differentiation, face restriction, and multiplication by
affine functions are all exact rational operations.  Inner products are
evaluated through the Cholesky factor of the reference mass matrix
("whitening"), which keeps round-off at the level of the frame's modest
condition number instead of the much worse one of raw monomials.

Element spaces (full polynomials ``P``, divergence-type ``RT``, curl-type
``N``) are assembled from analytically independent generator sets and
orthonormalized in the exact metric, so coefficient 2-norms are field
L2-norms.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .mesh import VertexPatch, signed_volume, triangle_area, triangle_normal

logger = logging.getLogger(__name__)

#: Relative singular-value threshold separating range from kernel.
RANK_TOL = 1e-9

SPACE_KINDS = ("P", "RT", "N")


class SpaceError(Exception):
    """A polynomial-space construction or expansion failed."""


def space_dim(kind: str, p: int) -> int:
    """Dimension of one element space of degree ``p``."""
    if kind == "P":
        return (p + 1) * (p + 2) * (p + 3) // 6
    if kind == "RT":
        return (p + 1) * (p + 2) * (p + 4) // 2
    if kind == "N":
        return (p + 1) * (p + 3) * (p + 4) // 2
    raise SpaceError(f"unknown space kind {kind!r}")


# ---------------------------------------------------------------------------
# reference frame data (geometry independent, cached per degree)
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def tet_indices(q: int) -> tuple[tuple[int, int, int, int], ...]:
    return tuple(
        (q - i - j - k, i, j, k)
        for i in range(q + 1)
        for j in range(q + 1 - i)
        for k in range(q + 1 - i - j)
    )


@lru_cache(maxsize=None)
def tri_indices(q: int) -> tuple[tuple[int, int, int], ...]:
    return tuple(
        (q - i - j, i, j) for i in range(q + 1) for j in range(q + 1 - i)
    )


@lru_cache(maxsize=None)
def _tet_pos(q: int) -> dict:
    return {a: i for i, a in enumerate(tet_indices(q))}


@lru_cache(maxsize=None)
def _tri_pos(q: int) -> dict:
    return {a: i for i, a in enumerate(tri_indices(q))}


def _multinomial(alpha) -> int:
    num = math.factorial(sum(alpha))
    for a in alpha:
        num //= math.factorial(a)
    return num


@lru_cache(maxsize=None)
def ref_mass(q: int) -> np.ndarray:
    """Reference mass matrix of the degree-``q`` tet frame (volume factor 6|K| omitted)."""
    idx = tet_indices(q)
    denom = math.factorial(2 * q + 3)
    m = np.empty((len(idx), len(idx)))
    for i, a in enumerate(idx):
        for j, b in enumerate(idx[: i + 1]):
            num = _multinomial(a) * _multinomial(b) * math.prod(
                math.factorial(ai + bi) for ai, bi in zip(a, b)
            )
            m[i, j] = m[j, i] = float(Fraction(num, denom))
    return m


@lru_cache(maxsize=None)
def ref_face_mass(q: int) -> np.ndarray:
    """Reference mass matrix of the degree-``q`` triangle frame (area factor 2|F| omitted)."""
    idx = tri_indices(q)
    denom = math.factorial(2 * q + 2)
    m = np.empty((len(idx), len(idx)))
    for i, a in enumerate(idx):
        for j, b in enumerate(idx[: i + 1]):
            num = _multinomial(a) * _multinomial(b) * math.prod(
                math.factorial(ai + bi) for ai, bi in zip(a, b)
            )
            m[i, j] = m[j, i] = float(Fraction(num, denom))
    return m


@lru_cache(maxsize=None)
def ref_cholesky(q: int) -> np.ndarray:
    return np.linalg.cholesky(ref_mass(q))


@lru_cache(maxsize=None)
def ref_face_cholesky(q: int) -> np.ndarray:
    return np.linalg.cholesky(ref_face_mass(q))


@lru_cache(maxsize=None)
def frame_condition(q: int) -> float:
    """Condition number of the reference frame Gram matrix (logged diagnostics)."""
    s = np.linalg.svd(ref_mass(q), compute_uv=False)
    return float(s[0] / s[-1])


@lru_cache(maxsize=None)
def elevate_matrix(q: int, steps: int = 1) -> np.ndarray:
    """Exact degree elevation of the tet frame from ``q`` to ``q + steps``."""
    if steps < 0:
        raise SpaceError("cannot lower the frame degree by elevation")
    cur = np.eye(len(tet_indices(q)))
    for s in range(steps):
        deg = q + s
        src = tet_indices(deg)
        pos = _tet_pos(deg + 1)
        e = np.zeros((len(tet_indices(deg + 1)), len(src)))
        for col, a in enumerate(src):
            for j in range(4):
                b = list(a)
                b[j] += 1
                e[pos[tuple(b)], col] += (a[j] + 1) / (deg + 1)
        cur = e @ cur
    return cur


def face_elevate_matrix(q: int, steps: int = 1) -> np.ndarray:
    """Exact degree elevation of the triangle frame from ``q`` to ``q + steps``."""
    if steps < 0:
        raise SpaceError("cannot lower the frame degree by elevation")
    cur = np.eye(len(tri_indices(q)))
    for s in range(steps):
        deg = q + s
        src = tri_indices(deg)
        pos = _tri_pos(deg + 1)
        e = np.zeros((len(tri_indices(deg + 1)), len(src)))
        for col, a in enumerate(src):
            for j in range(3):
                b = list(a)
                b[j] += 1
                e[pos[tuple(b)], col] += (a[j] + 1) / (deg + 1)
        cur = e @ cur
    return cur


def linear_mul_matrix(q: int, w) -> np.ndarray:
    """Multiplication by the affine function with barycentric vertex values ``w``.

    Maps the degree-``q`` tet frame into the degree-``q + 1`` frame, exactly.
    """
    src = tet_indices(q)
    pos = _tet_pos(q + 1)
    m = np.zeros((len(tet_indices(q + 1)), len(src)))
    for col, a in enumerate(src):
        for j in range(4):
            if w[j] == 0.0:
                continue
            b = list(a)
            b[j] += 1
            m[pos[tuple(b)], col] += w[j] * (a[j] + 1) / (q + 1)
    return m


@lru_cache(maxsize=None)
def _restrict_pattern(q: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Index pairs implementing restriction to the face where slot 3 vanishes."""
    rows, cols = [], []
    tpos = _tri_pos(q)
    for col, a in enumerate(tet_indices(q)):
        if a[3] == 0:
            rows.append(tpos[a[:3]])
            cols.append(col)
    return tuple(rows), tuple(cols)


def restrict_matrix(q: int, keep_slots) -> np.ndarray:
    """Restriction of the tet frame to the face spanned by ``keep_slots``.

    ``keep_slots`` lists the three element vertex slots in the face's own
    vertex order; the slot left out is where the omitted barycentric
    coordinate vanishes.  Restriction is a plain selection because the
    Bernstein weights of tet and triangle frames coincide on the face.
    """
    keep = tuple(int(s) for s in keep_slots)
    if len(keep) != 3 or len(set(keep)) != 3:
        raise SpaceError(f"keep_slots must be three distinct slots, got {keep}")
    return _restrict_cached(q, keep)


@lru_cache(maxsize=None)
def _restrict_cached(q: int, keep: tuple[int, int, int]) -> np.ndarray:
    drop = ({0, 1, 2, 3} - set(keep)).pop()
    src = tet_indices(q)
    tpos = _tri_pos(q)
    m = np.zeros((len(tri_indices(q)), len(src)))
    for col, a in enumerate(src):
        if a[drop] == 0:
            m[tpos[tuple(a[s] for s in keep)], col] = 1.0
    return m


def eval_tet_frame(q: int, bary: np.ndarray) -> np.ndarray:
    """Evaluate every frame function at barycentric points (rows of ``bary``)."""
    idx = tet_indices(q)
    out = np.empty((len(bary), len(idx)))
    for j, a in enumerate(idx):
        out[:, j] = _multinomial(a) * np.prod(bary ** np.asarray(a), axis=1)
    return out


# ---------------------------------------------------------------------------
# geometry wrappers
# ---------------------------------------------------------------------------

class CellGeom:
    """A tetrahedron with the geometric data the frame operations need."""

    def __init__(self, points, vertex_ids=(0, 1, 2, 3)) -> None:
        self.points = np.asarray(points, dtype=float)
        if self.points.shape != (4, 3):
            raise SpaceError("a cell needs exactly 4 points in 3d")
        self.vertex_ids = tuple(int(i) for i in vertex_ids)
        vol = signed_volume(self.points)
        if vol == 0.0:
            raise SpaceError("degenerate cell")
        self.volume = abs(vol)
        self.orientation = 1 if vol > 0 else -1
        a = np.column_stack([np.ones(4), self.points])
        coeff = np.linalg.solve(a, np.eye(4))
        self.grad_bary = coeff[1:].T  # row i: gradient of barycentric i
        h = hashlib.sha256(self.points.tobytes()).hexdigest()[:16]
        self.token = h

    @classmethod
    def from_patch(cls, patch: VertexPatch, ti: int) -> "CellGeom":
        return cls(patch.tet_points(ti), patch.tets[ti].vertex_ids)

    def barycentric(self, x: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of cartesian points (rows of ``x``)."""
        x = np.atleast_2d(x)
        lam = np.empty((len(x), 4))
        for i in range(4):
            base = self.points[(i + 1) % 4]
            lam[:, i] = (x - base) @ self.grad_bary[i]
        return lam


class FaceGeom:
    """A triangle with area, fixed normal, tangent frame and barycentric gradients.

    The vertex order is ascending in global ids, which fixes the normal
    identically for the two cells sharing the face.  The tangent pair
    ``(e1, e2)`` is right-handed with the normal: ``e1 x e2 = n``.
    """

    def __init__(self, points, vertex_ids=(0, 1, 2)) -> None:
        self.points = np.asarray(points, dtype=float)
        if self.points.shape != (3, 3):
            raise SpaceError("a face needs exactly 3 points in 3d")
        self.vertex_ids = tuple(int(i) for i in vertex_ids)
        if list(self.vertex_ids) != sorted(self.vertex_ids):
            raise SpaceError("face vertex ids must be listed in ascending order")
        self.area = triangle_area(self.points)
        if self.area == 0.0:
            raise SpaceError("degenerate face")
        self.normal = triangle_normal(self.points)
        e1 = self.points[1] - self.points[0]
        e1 = e1 / np.linalg.norm(e1)
        self.e1 = e1
        self.e2 = np.cross(self.normal, e1)
        # in-plane gradients of the three barycentric coordinates
        chart = np.column_stack(
            [(self.points - self.points[0]) @ e1, (self.points - self.points[0]) @ self.e2]
        )
        a = np.column_stack([np.ones(3), chart])
        coeff = np.linalg.solve(a, np.eye(3))
        g2 = coeff[1:].T  # (3, 2)
        self.grad_bary = g2[:, :1] * e1 + g2[:, 1:] * self.e2
        self.token = hashlib.sha256(self.points.tobytes()).hexdigest()[:16]

    @classmethod
    def from_patch(cls, patch: VertexPatch, fi: int) -> "FaceGeom":
        ids = patch.faces[fi].ids
        return cls(patch.vertices[list(ids)], ids)


def cell_face(cell: CellGeom, slots) -> tuple[FaceGeom, tuple[int, ...]]:
    """Face of a cell given by three vertex slots.

    Returns the face (vertices ordered by ascending global id) together with
    the slots in that order, as needed by :func:`restrict_matrix`.
    """
    slots = [int(s) for s in slots]
    ids = [cell.vertex_ids[s] for s in slots]
    order = np.argsort(ids, kind="stable")
    keep = tuple(slots[k] for k in order)
    face = FaceGeom(cell.points[list(keep)], tuple(sorted(ids)))
    return face, keep


def patch_cell(patch: VertexPatch, ti: int) -> CellGeom:
    return CellGeom.from_patch(patch, ti)


# ---------------------------------------------------------------------------
# exact integration
# ---------------------------------------------------------------------------

def integrate_poly(exponents, cell: CellGeom | None = None, face: FaceGeom | None = None) -> float:
    """Exact integral of a reference-coordinate monomial over a cell or face.

    For three exponents the monomial lives on the reference tetrahedron and
    the value is scaled by ``6|K|``; for two exponents, on the reference
    triangle scaled by ``2|F|``.  With no geometry supplied the reference
    domain itself is used.
    """
    exponents = tuple(int(e) for e in exponents)
    if any(e < 0 for e in exponents):
        raise SpaceError("negative exponent")
    if len(exponents) == 3:
        if face is not None:
            raise SpaceError("three exponents integrate over a cell, not a face")
        num = math.prod(math.factorial(e) for e in exponents)
        val = Fraction(num, math.factorial(sum(exponents) + 3))
        scale = 6.0 * cell.volume if cell is not None else 1.0
        return scale * float(val)
    if len(exponents) == 2:
        if cell is not None:
            raise SpaceError("two exponents integrate over a face, not a cell")
        num = math.prod(math.factorial(e) for e in exponents)
        val = Fraction(num, math.factorial(sum(exponents) + 2))
        scale = 2.0 * face.area if face is not None else 1.0
        return scale * float(val)
    raise SpaceError("expected 2 (face) or 3 (cell) exponents")


def integrate_bary(cell: CellGeom, gamma) -> float:
    """Exact integral of a barycentric monomial ``lambda^gamma`` over the cell."""
    gamma = tuple(int(g) for g in gamma)
    num = math.prod(math.factorial(g) for g in gamma)
    return 6.0 * cell.volume * float(Fraction(num, math.factorial(sum(gamma) + 3)))


# ---------------------------------------------------------------------------
# geometry-dependent frame operations
# ---------------------------------------------------------------------------

def whiten_scalar(cell: CellGeom, q: int, coeffs: np.ndarray) -> np.ndarray:
    """Coordinates whose euclidean norm is the L2 norm over the cell."""
    l = ref_cholesky(q)
    return math.sqrt(6.0 * cell.volume) * (l.T @ coeffs)


def whiten_vector(cell: CellGeom, q: int, coeffs: np.ndarray) -> np.ndarray:
    l = ref_cholesky(q)
    return math.sqrt(6.0 * cell.volume) * np.einsum("ij,cjk->cik", l.T, coeffs.reshape(3, len(l), -1)).reshape(coeffs.shape)


def whiten_face_scalar(face: FaceGeom, q: int, coeffs: np.ndarray) -> np.ndarray:
    l = ref_face_cholesky(q)
    return math.sqrt(2.0 * face.area) * (l.T @ coeffs)


def whiten_face_vector(face: FaceGeom, q: int, coeffs: np.ndarray) -> np.ndarray:
    l = ref_face_cholesky(q)
    out = np.einsum("ij,cjk->cik", l.T, coeffs.reshape(3, len(l), -1))
    return math.sqrt(2.0 * face.area) * out.reshape(coeffs.shape)


def derivative_matrices(cell: CellGeom, q: int) -> np.ndarray:
    """Cartesian derivative matrices of the degree-``q`` frame, shape (3, n(q-1), n(q))."""
    if q < 1:
        return np.zeros((3, 1, len(tet_indices(0))))
    src = tet_indices(q)
    pos = _tet_pos(q - 1)
    out = np.zeros((3, len(tet_indices(q - 1)), len(src)))
    for col, a in enumerate(src):
        for i in range(4):
            if a[i] == 0:
                continue
            b = list(a)
            b[i] -= 1
            row = pos[tuple(b)]
            out[:, row, col] += q * cell.grad_bary[i]
    return out


def face_derivative_matrices(face: FaceGeom, q: int) -> np.ndarray:
    """In-plane directional derivatives (along e1, e2) of the triangle frame."""
    if q < 1:
        return np.zeros((2, 1, len(tri_indices(0))))
    src = tri_indices(q)
    pos = _tri_pos(q - 1)
    out = np.zeros((2, len(tri_indices(q - 1)), len(src)))
    dirs = (face.e1, face.e2)
    for col, a in enumerate(src):
        for i in range(3):
            if a[i] == 0:
                continue
            b = list(a)
            b[i] -= 1
            row = pos[tuple(b)]
            for d in range(2):
                out[d, row, col] += q * float(face.grad_bary[i] @ dirs[d])
    return out


def monomial_in_frame(cell: CellGeom, gamma, origin: np.ndarray | None = None) -> np.ndarray:
    """Frame coefficients of ``prod_c (x_c - origin_c)^gamma_c`` at degree ``sum(gamma)``.

    Built exactly by repeated multiplication with affine factors.
    """
    origin = cell.points[0] if origin is None else np.asarray(origin, dtype=float)
    vertex_vals = cell.points - origin  # (4, 3): values of x - origin at the vertices
    coeffs = np.ones(1)
    deg = 0
    for c, g in enumerate(gamma):
        for _ in range(int(g)):
            coeffs = linear_mul_matrix(deg, vertex_vals[:, c]) @ coeffs
            deg += 1
    return coeffs


def frame_compose_matrix(src_cell: CellGeom, q: int, dst_cell: CellGeom,
                         src_points_of_dst_vertices: np.ndarray | None = None) -> np.ndarray:
    """Re-expansion of the source frame over another cell.

    Column ``alpha`` holds the degree-``q`` coefficients, on ``dst_cell``, of
    the source frame function composed with the affine map that sends
    ``dst_cell``'s vertices to ``src_points_of_dst_vertices`` (default: the
    identity, for re-expanding over sub-cells).  Exact up to round-off.
    """
    pts = dst_cell.points if src_points_of_dst_vertices is None else np.asarray(src_points_of_dst_vertices, float)
    vals = src_cell.barycentric(pts)  # (4 dst vertices) x (4 src barycentrics)
    n_src = len(tet_indices(q))
    out = np.empty((n_src, n_src))
    # cache the per-step multiplication matrices for the four affine factors
    muls = {}

    def mul(deg: int, i: int) -> np.ndarray:
        key = (deg, i)
        if key not in muls:
            muls[key] = linear_mul_matrix(deg, vals[:, i])
        return muls[key]

    for col, a in enumerate(tet_indices(q)):
        c = np.ones(1)
        deg = 0
        for i in range(4):
            for _ in range(a[i]):
                c = mul(deg, i) @ c
                deg += 1
        out[:, col] = _multinomial(a) * c
    return out


# ---------------------------------------------------------------------------
# element spaces
# ---------------------------------------------------------------------------

@dataclass
class ElementSpace:
    """An orthonormalized polynomial space on one cell.

    ``basis`` maps space coordinates to frame coefficients (flattened
    component-major for vector kinds); ``whitened`` holds the same columns in
    whitened coordinates and is exactly orthonormal, so coefficient 2-norms
    equal L2 norms.
    """

    kind: str
    degree: int
    cell: CellGeom
    frame_degree: int
    ncomp: int
    basis: np.ndarray
    whitened: np.ndarray
    cond: float

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def frame_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        out = self.basis @ coeffs
        if self.ncomp == 3:
            return out.reshape(3, -1)
        return out

    def whiten(self, frame: np.ndarray) -> np.ndarray:
        if self.ncomp == 3:
            return whiten_vector(self.cell, self.frame_degree, frame.reshape(-1))
        return whiten_scalar(self.cell, self.frame_degree, frame)

    def coords_of_frame(self, frame: np.ndarray, check: bool = True) -> np.ndarray:
        """Expand frame coefficients in the space basis (must lie in the space)."""
        w = self.whiten(np.asarray(frame, float).reshape(-1))
        coords = self.whitened.T @ w
        if check:
            resid = float(np.linalg.norm(w - self.whitened @ coords))
            scale = max(float(np.linalg.norm(w)), 1e-30)
            if resid > 1e-8 * scale:
                raise SpaceError(
                    f"field is outside the {self.kind}_{self.degree} space "
                    f"(relative residual {resid / scale:.2e})"
                )
        return coords


_element_cache: dict[tuple, ElementSpace] = {}


def build_element_space(kind: str, degree: int, cell: CellGeom) -> ElementSpace:
    """Assemble and orthonormalize one element space.

    ``P`` is the full polynomial space of the given degree; ``RT`` and ``N``
    are the divergence- and curl-type spaces whose non-gradient parts are
    spanned by ``y * (homogeneous scalars)`` and ``y x (selected homogeneous
    fields)`` with ``y`` the position relative to the first vertex.  The
    generator count equals the space dimension by construction, and the
    singular-value spread of the whitened generators is checked before the
    basis is orthonormalized.
    """
    if kind not in SPACE_KINDS:
        raise SpaceError(f"unknown space kind {kind!r}")
    if degree < 0:
        raise SpaceError("negative degree")
    key = (cell.token, kind, degree)
    hit = _element_cache.get(key)
    if hit is not None:
        return hit

    if kind == "P":
        q = degree
        n = len(tet_indices(q))
        gen = np.eye(n)
        ncomp = 1
    else:
        q = degree + 1
        n = len(tet_indices(q))
        cols = []
        elev = elevate_matrix(degree, 1)
        # full vector polynomials of the lower degree, one component at a time
        for comp in range(3):
            for i in range(len(tet_indices(degree))):
                block = np.zeros((3, n))
                block[comp] = elev[:, i]
                cols.append(block.reshape(-1))
        y_vals = cell.points - cell.points[0]  # (4, 3) vertex values of y
        if kind == "RT":
            # y * (homogeneous degree-p monomials in the non-apex barycentrics)
            for beta in tri_indices(degree):
                base = np.zeros(len(tet_indices(degree)))
                alpha = (0, *beta)
                base[_tet_pos(degree)[alpha]] = 1.0 / _multinomial(alpha)
                block = np.empty((3, n))
                for comp in range(3):
                    block[comp] = linear_mul_matrix(degree, y_vals[:, comp]) @ base
                cols.append(block.reshape(-1))
        else:
            # y x (e_j * y^gamma) over a complement of the cross-product kernel
            pairs = [(0, g) for g in _homog_exponents(degree)]
            pairs += [(1, g) for g in _homog_exponents(degree)]
            pairs += [(2, g) for g in _homog_exponents(degree) if g[2] == 0]
            for j, g in pairs:
                mono = _y_monomial(cell, g)  # frame coeffs at degree p
                block = np.zeros((3, n))
                # (y x e_j)_c = eps_{c a j} y_a
                for c in range(3):
                    for a in range(3):
                        s = _levi(c, a, j)
                        if s:
                            block[c] += s * (linear_mul_matrix(degree, y_vals[:, a]) @ mono)
                cols.append(block.reshape(-1))
        gen = np.column_stack(cols)
        ncomp = 3

    expected = space_dim(kind, degree)
    if gen.shape[1] != expected:
        raise SpaceError(
            f"{kind}_{degree} generator count {gen.shape[1]} != dimension {expected}"
        )

    if ncomp == 1:
        z = whiten_scalar(cell, q, gen)
    else:
        z = whiten_vector(cell, q, gen)
    u, s, vt = np.linalg.svd(z, full_matrices=False)
    cond = float(s[0] / s[-1])
    if s[-1] <= RANK_TOL * s[0]:
        raise SpaceError(
            f"{kind}_{degree} generators numerically dependent (cond {cond:.2e})"
        )
    basis = gen @ (vt.T / s)
    space = ElementSpace(kind, degree, cell, q, ncomp, basis, u, cond)
    _element_cache[key] = space
    logger.debug("built %s_%d space on cell %s (cond %.2e)", kind, degree, cell.token, cond)
    return space


@lru_cache(maxsize=None)
def _homog_exponents(p: int) -> tuple[tuple[int, int, int], ...]:
    return tuple(
        (p - i - j, i, j) for i in range(p + 1) for j in range(p + 1 - i)
    )


def _levi(i: int, j: int, k: int) -> int:
    if (i, j, k) in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        return 1
    if (i, j, k) in ((0, 2, 1), (2, 1, 0), (1, 0, 2)):
        return -1
    return 0


def _y_monomial(cell: CellGeom, gamma) -> np.ndarray:
    """Frame coefficients of ``y^gamma`` (y relative to the first vertex)."""
    return monomial_in_frame(cell, gamma)


# ---------------------------------------------------------------------------
# broken spaces and fields
# ---------------------------------------------------------------------------

class BrokenSpace:
    """Per-element spaces over a patch, with stacked orthonormal coordinates."""

    def __init__(self, patch: VertexPatch, kind: str, degree: int) -> None:
        self.patch = patch
        self.kind = kind
        self.degree = degree
        self.cells = [CellGeom.from_patch(patch, ti) for ti in range(patch.n_tets)]
        self.spaces = [build_element_space(kind, degree, c) for c in self.cells]
        dims = [s.dim for s in self.spaces]
        self.offsets = np.concatenate([[0], np.cumsum(dims)])
        self.dim = int(self.offsets[-1])

    @property
    def n_elements(self) -> int:
        return len(self.spaces)

    def block(self, ti: int, coeffs: np.ndarray) -> np.ndarray:
        return coeffs[self.offsets[ti] : self.offsets[ti + 1]]

    def join(self, blocks) -> np.ndarray:
        return np.concatenate([np.asarray(b, float) for b in blocks])

    def zero(self) -> np.ndarray:
        return np.zeros(self.dim)


_broken_cache: dict[tuple, BrokenSpace] = {}


def broken_space(patch: VertexPatch, kind: str, degree: int) -> BrokenSpace:
    key = (patch.token, kind, degree)
    hit = _broken_cache.get(key)
    if hit is None:
        hit = _broken_cache[key] = BrokenSpace(patch, kind, degree)
    return hit


@dataclass
class FieldCoeffs:
    """Coefficients in the orthonormal coordinates of an element or broken space."""

    space: ElementSpace | BrokenSpace
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.dim,):
            raise SpaceError(
                f"coefficient shape {self.coeffs.shape} does not match space dim {self.space.dim}"
            )

    def norm(self) -> float:
        """The L2 norm of the field (coordinates are orthonormal)."""
        return float(np.linalg.norm(self.coeffs))

    def __add__(self, other: "FieldCoeffs") -> "FieldCoeffs":
        if other.space is not self.space:
            raise SpaceError("cannot combine fields on different spaces")
        return FieldCoeffs(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other: "FieldCoeffs") -> "FieldCoeffs":
        if other.space is not self.space:
            raise SpaceError("cannot combine fields on different spaces")
        return FieldCoeffs(self.space, self.coeffs - other.coeffs)


# ---------------------------------------------------------------------------
# traces and the surface rotation
# ---------------------------------------------------------------------------

def _face_slots(espace: ElementSpace, face: FaceGeom) -> tuple[int, ...]:
    ids = espace.cell.vertex_ids
    try:
        slots = [ids.index(v) for v in face.vertex_ids]
    except ValueError as exc:
        raise SpaceError(
            f"face {face.vertex_ids} is not a face of cell {ids}"
        ) from exc
    return tuple(slots)


def tangential_trace_matrix(espace: ElementSpace, face: FaceGeom) -> np.ndarray:
    """Matrix sending space coordinates to the tangential trace in the face frame.

    The result has shape ``(3 * n_face_frame, dim)``; the trace is the
    component of the restriction orthogonal to the face normal (independent
    of the normal's orientation).
    """
    if espace.ncomp != 3:
        raise SpaceError("tangential traces require a vector space")
    q = espace.frame_degree
    r = restrict_matrix(q, _face_slots(espace, face))
    nfq = r.shape[0]
    basis = espace.basis.reshape(3, -1, espace.dim)
    restricted = np.einsum("fi,cid->cfd", r, basis)  # (3, nfq, dim)
    n = face.normal
    proj = np.eye(3) - np.outer(n, n)
    return np.einsum("bc,cfd->bfd", proj, restricted).reshape(3 * nfq, espace.dim)


def normal_trace_matrix(espace: ElementSpace, face: FaceGeom) -> np.ndarray:
    """Matrix sending space coordinates to ``v . n_F`` in the scalar face frame."""
    if espace.ncomp != 3:
        raise SpaceError("normal traces require a vector space")
    q = espace.frame_degree
    r = restrict_matrix(q, _face_slots(espace, face))
    basis = espace.basis.reshape(3, -1, espace.dim)
    restricted = np.einsum("fi,cid->cfd", r, basis)
    return np.einsum("c,cfd->fd", face.normal, restricted)


def scalar_trace_matrix(espace: ElementSpace, face: FaceGeom) -> np.ndarray:
    if espace.ncomp != 1:
        raise SpaceError("scalar traces require a scalar space")
    r = restrict_matrix(espace.frame_degree, _face_slots(espace, face))
    return r @ espace.basis


def tangential_trace(field: FieldCoeffs, face: FaceGeom) -> np.ndarray:
    """Tangential trace of an element field, as (3, n) face-frame coefficients."""
    espace = field.space
    if not isinstance(espace, ElementSpace):
        raise SpaceError("tangential_trace acts on single-element fields")
    m = tangential_trace_matrix(espace, face)
    return (m @ field.coeffs).reshape(3, -1)


def normal_trace(field: FieldCoeffs, face: FaceGeom) -> np.ndarray:
    espace = field.space
    if not isinstance(espace, ElementSpace):
        raise SpaceError("normal_trace acts on single-element fields")
    return normal_trace_matrix(espace, face) @ field.coeffs


def surface_curl(face: FaceGeom, trace_coeffs: np.ndarray) -> np.ndarray:
    """Surface rotation of a tangential face field.

    ``trace_coeffs`` holds (3, n) face-frame coefficients of a field tangent
    to the face; the result is the scalar face-frame coefficients (one degree
    lower) of the in-plane rotation, whose sign follows the face normal via
    the right-handed tangent pair.  For a trace of a volume field ``v`` this
    equals ``(curl v) . n_F``.
    """
    trace_coeffs = np.asarray(trace_coeffs, float).reshape(3, -1)
    q = {len(tri_indices(k)): k for k in range(0, 32)}.get(trace_coeffs.shape[1])
    if q is None:
        raise SpaceError("trace coefficient length is not a triangle frame size")
    w1 = trace_coeffs.T @ face.e1
    w2 = trace_coeffs.T @ face.e2
    d = face_derivative_matrices(face, q)
    return d[0] @ w2 - d[1] @ w1


class SurfaceTraceSpace:
    """Orthonormal basis of the tangential traces of the curl-type space on a face."""

    def __init__(self, face: FaceGeom, degree: int, parent: ElementSpace) -> None:
        if parent.kind != "N" or parent.degree != degree:
            raise SpaceError("surface trace spaces need a curl-type parent of the same degree")
        self.face = face
        self.degree = degree
        t = tangential_trace_matrix(parent, face)
        w = whiten_face_vector(face, parent.frame_degree, t)
        u, s, _ = np.linalg.svd(w, full_matrices=False)
        expected = (degree + 1) * (degree + 3)
        rank = int(np.sum(s > RANK_TOL * s[0]))
        if rank != expected:
            raise SpaceError(
                f"trace space rank {rank} != expected {expected} at degree {degree}"
            )
        self.whitened = u[:, :expected]
        self.frame_degree = parent.frame_degree

    @property
    def dim(self) -> int:
        return self.whitened.shape[1]

    def distance(self, trace_coeffs: np.ndarray) -> float:
        """L2 distance of a tangential face field from the trace space."""
        w = whiten_face_vector(self.face, self.frame_degree,
                               np.asarray(trace_coeffs, float).reshape(-1))
        return float(np.linalg.norm(w - self.whitened @ (self.whitened.T @ w)))

    def contains(self, trace_coeffs: np.ndarray, tol: float = 1e-10) -> bool:
        w = np.asarray(trace_coeffs, float).reshape(-1)
        scale = max(float(np.linalg.norm(w)), 1e-30)
        return self.distance(trace_coeffs) <= tol * scale


# ---------------------------------------------------------------------------
# conforming subspaces
# ---------------------------------------------------------------------------

@dataclass
class ConformingSubspace:
    """Nullspace basis of the interface and boundary trace conditions."""

    broken: BrokenSpace
    continuity: str
    gamma: frozenset
    basis: np.ndarray  # (broken dim, conforming dim), orthonormal columns

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


_conforming_cache: dict[tuple, ConformingSubspace] = {}


def clear_caches() -> None:
    """Drop the geometry-keyed space caches (frees memory between large scans)."""
    _element_cache.clear()
    _broken_cache.clear()
    _conforming_cache.clear()


def _trace_rows(bspace: BrokenSpace, continuity: str, fi: int, ti: int) -> np.ndarray:
    patch = bspace.patch
    face = FaceGeom.from_patch(patch, fi)
    espace = bspace.spaces[ti]
    if continuity == "h1":
        rows = scalar_trace_matrix(espace, face)
        return whiten_face_scalar(face, espace.frame_degree, rows)
    if continuity == "curl":
        rows = tangential_trace_matrix(espace, face)
        return whiten_face_vector(face, espace.frame_degree, rows)
    if continuity == "div":
        rows = normal_trace_matrix(espace, face)
        return whiten_face_scalar(face, espace.frame_degree, rows)
    raise SpaceError(f"unknown continuity {continuity!r}")


def constraint_rows(bspace: BrokenSpace, continuity: str, gamma_faces) -> np.ndarray:
    """Jump rows on interior faces plus trace rows on the ``gamma`` boundary faces.

    Row blocks are whitened face-frame coordinates, so row norms are face L2
    norms of the corresponding jump.
    """
    patch = bspace.patch
    blocks = []
    for fi in sorted(patch.interior_face_ids):
        ta, tb = patch.faces[fi].tets
        rows_a = _trace_rows(bspace, continuity, fi, ta)
        rows_b = _trace_rows(bspace, continuity, fi, tb)
        block = np.zeros((rows_a.shape[0], bspace.dim))
        block[:, bspace.offsets[ta] : bspace.offsets[ta + 1]] = rows_a
        block[:, bspace.offsets[tb] : bspace.offsets[tb + 1]] = -rows_b
        blocks.append(block)
    for fi in sorted(gamma_faces):
        (ti,) = patch.faces[fi].tets
        rows = _trace_rows(bspace, continuity, fi, ti)
        block = np.zeros((rows.shape[0], bspace.dim))
        block[:, bspace.offsets[ti] : bspace.offsets[ti + 1]] = rows
        blocks.append(block)
    if not blocks:
        return np.zeros((0, bspace.dim))
    return np.vstack(blocks)


_CONTINUITY_OF_KIND = {"P": "h1", "N": "curl", "RT": "div"}


def assemble_conforming_subspace(
    bspace: BrokenSpace, gamma_faces=None, continuity: str | None = None
) -> ConformingSubspace:
    """Orthonormal basis of the conforming subspace with zero trace on ``gamma``.

    ``gamma_faces`` defaults to the patch's essential boundary; pass an
    explicit (possibly empty) set of boundary face ids to override it.
    """
    patch = bspace.patch
    if gamma_faces is None:
        gamma_faces = patch.gamma_face_ids
    gamma = frozenset(int(f) for f in gamma_faces)
    if not gamma <= patch.boundary_face_ids:
        raise SpaceError("gamma must consist of boundary faces")
    if continuity is None:
        continuity = _CONTINUITY_OF_KIND[bspace.kind]
    key = (patch.token, bspace.kind, bspace.degree, continuity, tuple(sorted(gamma)))
    hit = _conforming_cache.get(key)
    if hit is not None:
        return hit

    a = constraint_rows(bspace, continuity, gamma)
    if a.shape[0] == 0:
        basis = np.eye(bspace.dim)
    else:
        u, s, vt = np.linalg.svd(a, full_matrices=True)
        rank = int(np.sum(s > RANK_TOL * s[0])) if len(s) else 0
        basis = vt[rank:].T
    sub = ConformingSubspace(bspace, continuity, gamma, basis)
    _conforming_cache[key] = sub
    return sub


def mass_matrix(space: ElementSpace | BrokenSpace | ConformingSubspace) -> np.ndarray:
    """Gram matrix of the space's basis in the exact L2 inner product."""
    if isinstance(space, ElementSpace):
        w = space.whitened
        return w.T @ w
    if isinstance(space, BrokenSpace):
        blocks = [mass_matrix(s) for s in space.spaces]
        out = np.zeros((space.dim, space.dim))
        for ti, b in enumerate(blocks):
            sl = slice(space.offsets[ti], space.offsets[ti + 1])
            out[sl, sl] = b
        return out
    if isinstance(space, ConformingSubspace):
        return space.basis.T @ space.basis
    raise SpaceError(f"no mass matrix for {type(space).__name__}")


# ---------------------------------------------------------------------------
# differential operators between coefficient frames
# ---------------------------------------------------------------------------

def diff_matrix(espace: ElementSpace, target: ElementSpace) -> np.ndarray:
    """Exact matrix of the natural differential operator into ``target``.

    grad maps ``P`` into ``N``-type targets, curl maps ``N`` into ``RT``,
    div maps ``RT`` into ``P``; the image is expanded in the target space's
    orthonormal coordinates, with a residual check of the exact containment.
    """
    pair = (espace.kind, target.kind)
    if espace.cell.token != target.cell.token:
        raise SpaceError("diff_matrix requires spaces on the same cell")
    if pair == ("P", "N"):
        img = _grad_frames(espace)
    elif pair == ("N", "RT"):
        img = _curl_frames(espace)
    elif pair == ("RT", "P"):
        img = _div_frames(espace)
    else:
        raise SpaceError(f"no differential operator from {pair[0]} to {pair[1]}")
    steps = target.frame_degree - (espace.frame_degree - 1)
    if steps < 0:
        raise SpaceError("target frame degree too low for the differential")
    elev = elevate_matrix(espace.frame_degree - 1, steps)
    if img.ndim == 3:
        img = np.einsum("fi,cid->cfd", elev, img)
    else:
        img = np.einsum("fi,id->fd", elev, img)
    out = np.empty((target.dim, espace.dim))
    for col in range(espace.dim):
        out[:, col] = target.coords_of_frame(img[..., col])
    return out


def _grad_frames(espace: ElementSpace) -> np.ndarray:
    """Gradients of the basis, as degree-(q-1) vector frame coefficients."""
    q = espace.frame_degree
    d = derivative_matrices(espace.cell, q)
    return np.einsum("cfi,id->cfd", d, espace.basis)


def _curl_frames(espace: ElementSpace) -> np.ndarray:
    q = espace.frame_degree
    d = derivative_matrices(espace.cell, q)
    basis = espace.basis.reshape(3, -1, espace.dim)
    nf = d.shape[1]
    out = np.zeros((3, nf, espace.dim))
    for c in range(3):
        for a in range(3):
            for b in range(3):
                s = _levi(c, a, b)
                if s:
                    out[c] += s * np.einsum("fi,id->fd", d[a], basis[b])
    return out


def _div_frames(espace: ElementSpace) -> np.ndarray:
    q = espace.frame_degree
    d = derivative_matrices(espace.cell, q)
    basis = espace.basis.reshape(3, -1, espace.dim)
    return sum(np.einsum("fi,id->fd", d[c], basis[c]) for c in range(3))


def broken_diff_whitened(bspace: BrokenSpace, out_degree: int) -> np.ndarray:
    """Whitened frame coordinates of the natural differential, per element.

    Maps broken coordinates to the stacked whitened frame of degree
    ``out_degree`` (elevating each element's differential as needed):
    grad for scalar spaces, curl for ``N``, div for ``RT``.  The euclidean
    norm of the image is the broken L2 norm of the differential.
    """
    blocks = []
    for es in bspace.spaces:
        if bspace.kind == "P":
            img = _grad_frames(es)
        elif bspace.kind == "N":
            img = _curl_frames(es)
        else:
            img = _div_frames(es)
        deg = es.frame_degree - 1
        if out_degree < deg:
            raise SpaceError("cannot lower the differential's frame degree")
        elev = elevate_matrix(deg, out_degree - deg)
        if img.ndim == 3:
            lifted = np.einsum("fi,cid->cfd", elev, img)
            w = whiten_vector(es.cell, out_degree, lifted.reshape(-1, es.dim))
        else:
            lifted = elev @ img
            w = whiten_scalar(es.cell, out_degree, lifted)
        blocks.append(w.reshape(-1, es.dim))
    rows = sum(b.shape[0] for b in blocks)
    out = np.zeros((rows, bspace.dim))
    r = 0
    for ti, b in enumerate(blocks):
        out[r : r + b.shape[0], bspace.offsets[ti] : bspace.offsets[ti + 1]] = b
        r += b.shape[0]
    return out


def broken_whiten_matrix(bspace: BrokenSpace, out_degree: int | None = None) -> np.ndarray:
    """Block map from broken coordinates to stacked whitened frame coordinates."""
    blocks = []
    for es in bspace.spaces:
        deg = es.frame_degree if out_degree is None else out_degree
        elev = elevate_matrix(es.frame_degree, deg - es.frame_degree)
        if es.ncomp == 3:
            basis = es.basis.reshape(3, -1, es.dim)
            lifted = np.einsum("fi,cid->cfd", elev, basis)
            w = whiten_vector(es.cell, deg, lifted.reshape(-1, es.dim))
        else:
            lifted = elev @ es.basis
            w = whiten_scalar(es.cell, deg, lifted)
        blocks.append(w.reshape(-1, es.dim))
    rows = sum(b.shape[0] for b in blocks)
    out = np.zeros((rows, bspace.dim))
    r = 0
    for ti, b in enumerate(blocks):
        out[r : r + b.shape[0], bspace.offsets[ti] : bspace.offsets[ti + 1]] = b
        r += b.shape[0]
    return out


# ---------------------------------------------------------------------------
# exact sequence check and dimension tables
# ---------------------------------------------------------------------------

def check_exact_sequence(patch: VertexPatch, degree: int, gamma_faces=None) -> dict:
    """Verify the discrete sequence grad -> curl -> div on the patch.

    Builds the conforming scalar space of degree ``degree + 1`` and the
    conforming curl- and divergence-type spaces of degree ``degree``, and
    compares the rank of each differential with the kernel dimension of the
    next.  Returns a report dict with the dimensions, ranks and verdicts.
    """
    if gamma_faces is None:
        gamma_faces = patch.gamma_face_ids
    gamma = frozenset(int(f) for f in gamma_faces)
    h1 = assemble_conforming_subspace(broken_space(patch, "P", degree + 1), gamma)
    nc = assemble_conforming_subspace(broken_space(patch, "N", degree), gamma)
    rt = assemble_conforming_subspace(broken_space(patch, "RT", degree), gamma)

    grad_map = broken_diff_whitened(h1.broken, degree + 1) @ h1.basis
    curl_map = broken_diff_whitened(nc.broken, degree + 1) @ nc.basis
    div_map = broken_diff_whitened(rt.broken, degree) @ rt.basis

    def rank(m: np.ndarray) -> int:
        if m.size == 0 or min(m.shape) == 0:
            return 0
        s = np.linalg.svd(m, compute_uv=False)
        return int(np.sum(s > RANK_TOL * s[0])) if s[0] > 0 else 0

    r_grad = rank(grad_map)
    r_curl = rank(curl_map)
    r_div = rank(div_map)
    report = {
        "degree": degree,
        "dim_h1": h1.dim,
        "dim_curl": nc.dim,
        "dim_div": rt.dim,
        "dim_ker_grad": h1.dim - r_grad,
        "rank_grad": r_grad,
        "dim_ker_curl": nc.dim - r_curl,
        "rank_curl": r_curl,
        "dim_ker_div": rt.dim - r_div,
        "rank_div": r_div,
        "grad_curl_exact": r_grad == nc.dim - r_curl,
        "curl_div_exact": r_curl == rt.dim - r_div,
    }
    report["ok"] = bool(report["grad_curl_exact"] and report["curl_div_exact"])
    return report


def dimension_rows(patch: VertexPatch, degrees, patch_id: str = "patch") -> list[dict]:
    """Per-kind, per-degree dimension table rows for the patch."""
    rows = []
    for p in degrees:
        for kind in SPACE_KINDS:
            deg = p + 1 if kind == "P" else p
            b = broken_space(patch, kind, deg)
            conf = assemble_conforming_subspace(b)
            rows.append(
                {
                    "kind": kind,
                    "p": p,
                    "dim_element": space_dim(kind, deg),
                    "dim_broken": b.dim,
                    "dim_conforming": conf.dim,
                    "patch_id": patch_id,
                }
            )
    return rows
