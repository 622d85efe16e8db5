"""Affine maps, Piola transformations, and plane-symmetrization operators.

The covariant transform (used for curl-type fields) composes with the inverse
map and multiplies by the inverse-transposed Jacobian; the contravariant one
(divergence-type fields) multiplies by the Jacobian over its determinant.
Both preserve the polynomial families, commute with the differential
operators, and have exactly computable L2 operator norms, which is what the
stability-transfer arguments consume.

Reflections across coordinate planes get a dedicated fast path: mirroring a
patch through a plane containing its center doubles the mesh, and the four
symmetrization operators (mirror, zero-extension, fold, restriction) move
fields between the half and the doubled patch with known norm behavior.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .mesh import MeshError, VertexPatch
from . import spaces
from .spaces import (
    BrokenSpace,
    CellGeom,
    ElementSpace,
    FieldCoeffs,
    SpaceError,
    build_element_space,
    broken_space,
    frame_compose_matrix,
)

logger = logging.getLogger(__name__)

PIOLA_VARIANTS = ("c", "d")
SYM_FLAVORS = ("mirror", "zero", "fold", "restrict")


class PiolaError(Exception):
    """An affine correspondence or field transport failed."""


@dataclass(frozen=True)
class AffineMap:
    """The affine map ``x -> J x + b`` with its orientation sign."""

    J: np.ndarray
    b: np.ndarray

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.J))

    @property
    def eps(self) -> int:
        """Orientation sign of the map."""
        d = self.det
        if d == 0.0:
            raise PiolaError("singular affine map has no orientation")
        return 1 if d > 0 else -1

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, float) @ self.J.T + self.b

    def inverse(self) -> "AffineMap":
        ji = np.linalg.inv(self.J)
        return AffineMap(ji, -ji @ self.b)

    def compose(self, other: "AffineMap") -> "AffineMap":
        """The map ``self o other``."""
        return AffineMap(self.J @ other.J, self.J @ other.b + self.b)

    @classmethod
    def from_points(cls, src: np.ndarray, dst: np.ndarray) -> "AffineMap":
        """The unique affine map sending the four ``src`` points to ``dst``."""
        src = np.asarray(src, float)
        dst = np.asarray(dst, float)
        d = (src[1:] - src[0]).T
        if abs(np.linalg.det(d)) <= 0.0:
            raise PiolaError("source points are affinely dependent")
        j = (dst[1:] - dst[0]).T @ np.linalg.inv(d)
        b = dst[0] - j @ src[0]
        m = cls(j, b)
        resid = float(np.max(np.linalg.norm(m.apply(src) - dst, axis=1)))
        scale = max(1.0, float(np.max(np.abs(dst))))
        if resid > 1e-9 * scale:
            raise PiolaError(f"affine fit residual {resid:.2e}")
        return m


def affine_between(src: CellGeom, dst: CellGeom, vertex_map=None) -> AffineMap:
    """Affine map sending cell vertices onto cell vertices.

    ``vertex_map[i]`` names the slot of ``dst`` receiving slot ``i`` of
    ``src`` (identity by default).
    """
    if vertex_map is None:
        vertex_map = (0, 1, 2, 3)
    vm = tuple(int(i) for i in vertex_map)
    if sorted(vm) != [0, 1, 2, 3]:
        raise PiolaError(f"vertex_map must be a bijection of slots, got {vm}")
    return AffineMap.from_points(src.points, dst.points[list(vm)])


def piola_norm_bound(m: AffineMap, variant: str) -> float:
    """Exact L2 operator norm of the Piola transform along ``m``."""
    if variant == "c":
        s = np.linalg.svd(np.linalg.inv(m.J).T, compute_uv=False)
        return float(s[0]) * abs(m.det) ** 0.5
    if variant == "d":
        s = np.linalg.svd(m.J, compute_uv=False)
        return float(s[0]) / abs(m.det) ** 0.5
    raise PiolaError(f"unknown Piola variant {variant!r}")


def _piola_frames(m: AffineMap, src_space: ElementSpace, dst_cell: CellGeom,
                  frame: np.ndarray, variant: str) -> np.ndarray:
    """Frame coefficients on ``dst_cell`` of the transformed field."""
    if variant == "c":
        a = np.linalg.inv(m.J).T
    elif variant == "d":
        a = m.J / m.det
    else:
        raise PiolaError(f"unknown Piola variant {variant!r}")
    inv = m.inverse()
    compose = frame_compose_matrix(
        src_space.cell, src_space.frame_degree, dst_cell, inv.apply(dst_cell.points)
    )
    moved = frame @ compose.T  # (3, n): each component composed with the inverse map
    return a @ moved


def _apply_piola(m: AffineMap, v: FieldCoeffs, variant: str,
                 target: ElementSpace | None, dst_cell: CellGeom | None) -> FieldCoeffs:
    src_space = v.space
    if not isinstance(src_space, ElementSpace) or src_space.ncomp != 3:
        raise PiolaError("Piola transforms act on vector element fields")
    if target is None:
        if dst_cell is None:
            dst_cell = CellGeom(m.apply(src_space.cell.points), src_space.cell.vertex_ids)
        target = build_element_space(src_space.kind, src_space.degree, dst_cell)
    elif (target.kind, target.degree) != (src_space.kind, src_space.degree):
        raise PiolaError(
            f"target space {target.kind}_{target.degree} does not match "
            f"source {src_space.kind}_{src_space.degree}"
        )
    frame = src_space.frame_coeffs(v.coeffs)
    out = _piola_frames(m, src_space, target.cell, frame, variant)
    try:
        coords = target.coords_of_frame(out)
    except SpaceError as exc:
        raise PiolaError(f"transformed field left the target space: {exc}") from exc
    return FieldCoeffs(target, coords)


def piola_c(m: AffineMap, v: FieldCoeffs, target: ElementSpace | None = None,
            dst_cell: CellGeom | None = None) -> FieldCoeffs:
    """Covariant transform: compose with the inverse map, multiply by ``J^-T``.

    Preserves curl-type spaces and tangential-trace structure.
    """
    return _apply_piola(m, v, "c", target, dst_cell)


def piola_d(m: AffineMap, v: FieldCoeffs, target: ElementSpace | None = None,
            dst_cell: CellGeom | None = None) -> FieldCoeffs:
    """Contravariant transform: compose with the inverse map, multiply by ``J / det J``.

    Preserves divergence-type spaces and normal fluxes.
    """
    return _apply_piola(m, v, "d", target, dst_cell)


def transport_broken(field: FieldCoeffs, maps, target: BrokenSpace, variant: str) -> FieldCoeffs:
    """Transport a broken field element by element along per-element affine maps."""
    src = field.space
    if not isinstance(src, BrokenSpace):
        raise PiolaError("transport_broken acts on broken fields")
    if len(maps) != src.n_elements or target.n_elements != src.n_elements:
        raise PiolaError("one affine map per element is required")
    blocks = []
    for ti, m in enumerate(maps):
        v = FieldCoeffs(src.spaces[ti], src.block(ti, field.coeffs))
        w = _apply_piola(m, v, variant, target.spaces[ti], None)
        blocks.append(w.coeffs)
    return FieldCoeffs(target, target.join(blocks))


def transport_norm_factor(maps, variant: str) -> float:
    """Largest per-element Piola operator norm, bounding broken-norm growth."""
    return max(piola_norm_bound(m, variant) for m in maps)


# ---------------------------------------------------------------------------
# plane reflection of a patch
# ---------------------------------------------------------------------------

@dataclass
class MirrorPairing:
    """Bookkeeping of a patch doubled through a coordinate plane.

    ``plus[i]``/``minus[i]`` are the element indices, in the doubled patch, of
    the original element ``i`` and its mirror image; slot order is preserved,
    so the reflection is slot-aligned on every element pair.
    """

    axis: int
    half: VertexPatch
    full: VertexPatch
    plus: list[int]
    minus: list[int]


def reflect_patch(half: VertexPatch, axis: int) -> MirrorPairing:
    """Double a patch by reflecting it through the plane ``x_axis = 0``.

    The patch must lie in the closed half-space ``x_axis >= 0`` with its
    center on the plane; plane faces become interior faces of the doubled
    patch, all other boundary faces keep their essential/natural label and
    bequeath it to their mirror images.
    """
    if axis not in (0, 1, 2):
        raise PiolaError(f"axis must be 0, 1 or 2, got {axis}")
    scale = half.scale()
    tol = 1e-9 * scale
    coords = half.vertices[:, axis]
    if float(np.min(coords)) < -tol:
        raise PiolaError("patch crosses the reflection plane")
    if abs(float(half.vertices[half.center, axis])) > tol:
        raise PiolaError("patch center must lie on the reflection plane")

    used = sorted({v for t in half.tets for v in t.vertex_ids})
    on_plane = {v for v in used if abs(coords[v]) <= tol}
    sign = np.ones(3)
    sign[axis] = -1.0
    verts = [half.vertices[v] for v in range(len(half.vertices))]
    mirror_id: dict[int, int] = {}
    for v in used:
        if v in on_plane:
            mirror_id[v] = v
        else:
            mirror_id[v] = len(verts)
            verts.append(half.vertices[v] * sign)

    tets = [t.vertex_ids for t in half.tets]
    mirrored = [tuple(mirror_id[v] for v in t.vertex_ids) for t in half.tets]
    all_tets = tets + mirrored

    # essential labels: original non-plane essential faces and their images,
    # kept only where they remain boundary faces of the doubled mesh
    count: dict[tuple[int, ...], int] = {}
    for t in all_tets:
        for key in (
            tuple(sorted((t[0], t[1], t[2]))),
            tuple(sorted((t[0], t[1], t[3]))),
            tuple(sorted((t[0], t[2], t[3]))),
            tuple(sorted((t[1], t[2], t[3]))),
        ):
            count[key] = count.get(key, 0) + 1
    gamma_ess = []
    for fi in half.ess_cone_face_ids:
        ids = half.faces[fi].ids
        for key in (ids, tuple(sorted(mirror_id[v] for v in ids))):
            if count.get(key) == 1 and key not in gamma_ess:
                gamma_ess.append(key)

    full = VertexPatch(np.array(verts), all_tets, center=half.center, gamma_ess=gamma_ess)
    n = half.n_tets
    return MirrorPairing(axis, half, full, list(range(n)), [n + i for i in range(n)])


# ---------------------------------------------------------------------------
# symmetrization operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymmetrizationOp:
    """One plane-symmetrization operator.

    ``flavor`` is ``"mirror"`` (even reflection onto the double), ``"zero"``
    (extension by zero), ``"fold"`` (restriction minus reflected back half) or
    ``"restrict"`` (plain restriction); ``variant`` picks the covariant
    (``"c"``, curl-type) or contravariant (``"d"``, divergence-type) field
    transform under the reflection.
    """

    axis: int
    flavor: str
    variant: str

    def __post_init__(self) -> None:
        if self.flavor not in SYM_FLAVORS:
            raise PiolaError(f"unknown symmetrization flavor {self.flavor!r}")
        if self.variant not in PIOLA_VARIANTS:
            raise PiolaError(f"unknown Piola variant {self.variant!r}")

    @property
    def norm_bound(self) -> float:
        """Exact L2 operator norm (mirror doubles the squared norm)."""
        if self.flavor == "mirror":
            return float(np.sqrt(2.0))
        if self.flavor == "fold":
            return float(np.sqrt(2.0))
        return 1.0


def _reflect_element_coeffs(op_variant: str, axis: int, src: ElementSpace,
                            dst: ElementSpace) -> np.ndarray:
    """Matrix carrying coordinates on an element to its slot-aligned mirror image."""
    s = np.eye(3)
    s[axis, axis] = -1.0
    factor = s if op_variant == "c" else -s
    frame = src.basis.reshape(3, -1, src.dim)
    moved = np.einsum("bc,cfd->bfd", factor, frame).reshape(-1, src.dim)
    out = np.empty((dst.dim, src.dim))
    for col in range(src.dim):
        out[:, col] = dst.coords_of_frame(moved[:, col].reshape(3, -1))
    return out


def apply_symmetrization(op: SymmetrizationOp, pairing: MirrorPairing,
                         field: FieldCoeffs) -> FieldCoeffs:
    """Apply a symmetrization operator across the pairing's reflection plane.

    ``mirror``/``zero`` consume a field on the half patch and produce one on
    the doubled patch; ``fold``/``restrict`` go the other way.
    """
    kind = "N" if op.variant == "c" else "RT"
    space = field.space
    if not isinstance(space, BrokenSpace) or space.kind != kind:
        raise PiolaError(
            f"symmetrization variant {op.variant!r} needs a broken {kind} field"
        )
    degree = space.degree
    half_sp = broken_space(pairing.half, kind, degree)
    full_sp = broken_space(pairing.full, kind, degree)

    if op.flavor in ("mirror", "zero"):
        if space is not half_sp:
            raise PiolaError("mirror/zero extensions start from the half patch")
        out = full_sp.zero()
        for i in range(half_sp.n_elements):
            block = half_sp.block(i, field.coeffs)
            pe, me = pairing.plus[i], pairing.minus[i]
            out[full_sp.offsets[pe] : full_sp.offsets[pe + 1]] = block
            if op.flavor == "mirror":
                r = _reflect_element_coeffs(
                    op.variant, op.axis, half_sp.spaces[i], full_sp.spaces[me]
                )
                out[full_sp.offsets[me] : full_sp.offsets[me + 1]] = r @ block
        return FieldCoeffs(full_sp, out)

    if space is not full_sp:
        raise PiolaError("fold/restrict start from the doubled patch")
    out = half_sp.zero()
    for i in range(half_sp.n_elements):
        pe, me = pairing.plus[i], pairing.minus[i]
        block = full_sp.block(pe, field.coeffs).copy()
        if op.flavor == "fold":
            r = _reflect_element_coeffs(
                op.variant, op.axis, full_sp.spaces[me], half_sp.spaces[i]
            )
            block -= r @ full_sp.block(me, field.coeffs)
        out[half_sp.offsets[i] : half_sp.offsets[i + 1]] = block
    return FieldCoeffs(half_sp, out)
