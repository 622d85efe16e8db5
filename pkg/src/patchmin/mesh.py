"""Tetrahedral vertex patches: construction, validation, enumeration, colorings.

A vertex patch is the set of tetrahedra sharing one central vertex ``a``.  The
patch is *interior* when ``a`` does not lie on the boundary of the patch
subdomain and *boundary* otherwise, in which case the boundary faces through
``a`` (the "cone" faces) are partitioned into an essential part and a natural
part.  Faces not through ``a`` (the "ceiling" faces) always carry the
essential condition.

The module also provides the combinatorial devices used by the sweeping
construction: a patch enumeration whose shared-face pattern follows the
single-loop rules, edge subpatches, and two-/three-colored refinements with
orientation signs.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

#: Relative tolerance for exact geometric coincidence tests.
GEOM_TOL = 1e-12
#: Tolerance on the solid-angle closure test at the central vertex.
SOLID_ANGLE_TOL = 1e-8
#: Shape-regularity of the regular tetrahedron, the best possible value.
KAPPA_REGULAR = math.sqrt(6.0)

BOUNDARY_KINDS = ("dirichlet-fan", "mixed-fan", "full-natural")


class MeshError(Exception):
    """Invalid patch data or a construction that cannot be carried out."""


# ---------------------------------------------------------------------------
# elementary geometry
# ---------------------------------------------------------------------------

def signed_volume(pts: np.ndarray) -> float:
    """Signed volume of the tetrahedron spanned by the rows of ``pts``."""
    d = pts[1:] - pts[0]
    return float(np.linalg.det(d)) / 6.0


def triangle_area(pts: np.ndarray) -> float:
    c = np.cross(pts[1] - pts[0], pts[2] - pts[0])
    return 0.5 * float(np.linalg.norm(c))


def triangle_normal(pts: np.ndarray) -> np.ndarray:
    """Unit normal of the triangle ``pts`` in row order (right-hand rule)."""
    c = np.cross(pts[1] - pts[0], pts[2] - pts[0])
    n = np.linalg.norm(c)
    if n <= 0.0:
        raise MeshError("degenerate triangle has no normal")
    return c / n


def solid_angle(apex: np.ndarray, pts: np.ndarray) -> float:
    """Solid angle subtended at ``apex`` by the triangle ``pts``.

    Uses the van Oosterom--Strackee formula; the result is in ``[0, 2*pi)``.
    """
    r = pts - apex
    norms = np.linalg.norm(r, axis=1)
    num = abs(float(np.linalg.det(r)))
    den = (
        norms[0] * norms[1] * norms[2]
        + float(r[0] @ r[1]) * norms[2]
        + float(r[1] @ r[2]) * norms[0]
        + float(r[0] @ r[2]) * norms[1]
    )
    ang = 2.0 * math.atan2(num, den)
    return ang if ang >= 0.0 else ang + 4.0 * math.pi


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Point3:
    """A point in 3-space with finite coordinates."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise MeshError(f"non-finite point ({self.x}, {self.y}, {self.z})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @classmethod
    def from_array(cls, arr) -> "Point3":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))


@dataclass(frozen=True)
class Tetrahedron:
    """Four vertex ids together with the orientation sign of that ordering."""

    vertex_ids: tuple[int, int, int, int]
    orientation: int = 1

    def __post_init__(self) -> None:
        if len(set(self.vertex_ids)) != 4:
            raise MeshError(f"tetrahedron with repeated vertex ids {self.vertex_ids}")

    def faces(self) -> list[tuple[int, int, int]]:
        a, b, c, d = self.vertex_ids
        return [
            tuple(sorted((b, c, d))),
            tuple(sorted((a, c, d))),
            tuple(sorted((a, b, d))),
            tuple(sorted((a, b, c))),
        ]

    def edges(self) -> list[tuple[int, int]]:
        return [tuple(sorted(e)) for e in itertools.combinations(self.vertex_ids, 2)]


@dataclass
class Face:
    """A triangular face of the patch, keyed by its sorted vertex ids.

    The unit normal is fixed by the sorted-id vertex order, so both elements
    sharing an interior face agree on it.
    """

    index: int
    ids: tuple[int, int, int]
    tets: tuple[int, ...]
    normal: np.ndarray
    area: float

    @property
    def boundary(self) -> bool:
        return len(self.tets) == 1


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    """Outcome of the per-property patch validation."""

    checks: list[CheckResult]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            status = "ok" if c.passed else "FAIL"
            lines.append(f"{status:4s} {c.name}" + (f": {c.detail}" if c.detail else ""))
        return "\n".join(lines)


class VertexPatch:
    """All tetrahedra around one central vertex, with boundary-condition labels.

    Parameters
    ----------
    vertices : (n, 3) array
        Vertex coordinates; row index is the vertex id.
    tets : sequence of 4-tuples
        Vertex ids of each tetrahedron.  Every tetrahedron must contain
        ``center``.
    center : int
        Id of the central vertex.
    gamma_ess : iterable of 3-tuples, optional
        Vertex-id triples of the boundary faces through the center that carry
        the essential condition.  Ceiling faces (boundary faces avoiding the
        center) are always essential and need not be listed.

    Notes
    -----
    Construction derives the face table, the interior/boundary split, the
    patch kind, and the essential/natural partition; it raises
    :class:`MeshError` only for structurally unusable input (repeated ids,
    faces shared by three elements, labels on non-existing faces).  Geometric
    soundness is the job of :func:`validate_patch`.
    """

    def __init__(self, vertices, tets, center: int = 0, gamma_ess=()) -> None:
        self.vertices = np.asarray(vertices, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must be an (n, 3) array")
        if not np.isfinite(self.vertices).all():
            raise MeshError("non-finite vertex coordinates")
        self.center = int(center)
        if not (0 <= self.center < len(self.vertices)):
            raise MeshError(f"center id {center} out of range")

        self.tets: list[Tetrahedron] = []
        for t in tets:
            ids = tuple(int(i) for i in t)
            if len(ids) != 4:
                raise MeshError(f"tetrahedron {ids} does not have 4 vertices")
            if self.center not in ids:
                raise MeshError(f"tetrahedron {ids} does not contain the center")
            if any(not (0 <= i < len(self.vertices)) for i in ids):
                raise MeshError(f"tetrahedron {ids} references a missing vertex")
            vol = signed_volume(self.vertices[list(ids)])
            self.tets.append(Tetrahedron(ids, 1 if vol >= 0 else -1))
        if not self.tets:
            raise MeshError("patch has no tetrahedra")

        self._build_faces()
        self._classify(gamma_ess)
        self.token = self._token()

    # -- construction helpers ------------------------------------------------

    def _build_faces(self) -> None:
        by_key: dict[tuple[int, int, int], list[int]] = {}
        for ti, tet in enumerate(self.tets):
            for key in tet.faces():
                by_key.setdefault(key, []).append(ti)
        self.faces: list[Face] = []
        self.face_index: dict[tuple[int, int, int], int] = {}
        for key in sorted(by_key):
            owners = by_key[key]
            if len(owners) > 2:
                raise MeshError(f"face {key} shared by {len(owners)} tetrahedra")
            pts = self.vertices[list(key)]
            fc = Face(len(self.faces), key, tuple(owners), triangle_normal(pts), triangle_area(pts))
            self.face_index[key] = fc.index
            self.faces.append(fc)

        self.boundary_face_ids = frozenset(f.index for f in self.faces if f.boundary)
        self.interior_face_ids = frozenset(f.index for f in self.faces if not f.boundary)
        self._tet_faces = [
            tuple(self.face_index[k] for k in tet.faces()) for tet in self.tets
        ]

    def _classify(self, gamma_ess) -> None:
        boundary_vertices = set()
        for fi in self.boundary_face_ids:
            boundary_vertices.update(self.faces[fi].ids)
        self.boundary_vertex_ids = frozenset(boundary_vertices)
        self.kind = "boundary" if self.center in boundary_vertices else "interior"

        self.cone_face_ids = frozenset(
            f.index for f in self.faces if self.center in f.ids
        )
        self.ceiling_face_ids = frozenset(
            self.boundary_face_ids - self.cone_face_ids
        )
        boundary_cone = self.boundary_face_ids & self.cone_face_ids

        ess: set[int] = set()
        for key in gamma_ess:
            k = tuple(sorted(int(i) for i in key))
            fi = self.face_index.get(k)
            if fi is None:
                raise MeshError(f"essential label on unknown face {k}")
            if fi not in self.boundary_face_ids:
                raise MeshError(f"essential label on interior face {k}")
            if fi in self.ceiling_face_ids:
                continue  # ceilings are essential by definition
            ess.add(fi)
        self.ess_cone_face_ids = frozenset(ess)
        self.nat_face_ids = frozenset(boundary_cone - ess)
        #: faces carrying the essential (trace) condition: ceilings + essential cone faces
        self.gamma_face_ids = frozenset(self.boundary_face_ids - self.nat_face_ids)

    def _token(self) -> str:
        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        for tet in self.tets:
            h.update(np.asarray(tet.vertex_ids, dtype=np.int64).tobytes())
        h.update(np.asarray([self.center], dtype=np.int64).tobytes())
        h.update(np.asarray(sorted(self.ess_cone_face_ids), dtype=np.int64).tobytes())
        return h.hexdigest()[:16]

    # -- simple accessors ----------------------------------------------------

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def gamma_a_empty(self) -> bool:
        """True when the natural boundary part is empty (the zero-mean case)."""
        return not self.nat_face_ids

    def tet_points(self, ti: int) -> np.ndarray:
        return self.vertices[list(self.tets[ti].vertex_ids)]

    def tet_volume(self, ti: int) -> float:
        return abs(signed_volume(self.tet_points(ti)))

    def faces_of_tet(self, ti: int) -> tuple[int, ...]:
        return self._tet_faces[ti]

    def interior_faces_of_tet(self, ti: int) -> tuple[int, ...]:
        return tuple(fi for fi in self._tet_faces[ti] if fi in self.interior_face_ids)

    def boundary_faces_of_tet(self, ti: int) -> tuple[int, ...]:
        return tuple(fi for fi in self._tet_faces[ti] if fi in self.boundary_face_ids)

    def face_points(self, fi: int) -> np.ndarray:
        return self.vertices[list(self.faces[fi].ids)]

    def edges_through_center(self) -> list[tuple[int, int]]:
        edges = set()
        for tet in self.tets:
            for e in tet.edges():
                if self.center in e:
                    edges.add(e)
        return sorted(edges)

    def tets_with_edge(self, edge) -> list[int]:
        e = tuple(sorted(int(i) for i in edge))
        return [
            ti
            for ti, tet in enumerate(self.tets)
            if e[0] in tet.vertex_ids and e[1] in tet.vertex_ids
        ]

    def edge_is_interior(self, edge) -> bool:
        e = tuple(sorted(int(i) for i in edge))
        for fi in self.boundary_face_ids:
            if e[0] in self.faces[fi].ids and e[1] in self.faces[fi].ids:
                return False
        return True

    def scale(self) -> float:
        """A representative length: the largest element diameter."""
        return max(
            float(np.max(np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)))
            for pts in (self.tet_points(ti) for ti in range(self.n_tets))
        )

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "vertices": [[float(c) for c in v] for v in self.vertices],
            "tets": [list(t.vertex_ids) for t in self.tets],
            "center": self.center,
            "gamma_ess": sorted(
                list(self.faces[fi].ids) for fi in self.ess_cone_face_ids
            ),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VertexPatch":
        try:
            return cls(
                np.asarray(data["vertices"], dtype=float),
                data["tets"],
                int(data.get("center", 0)),
                data.get("gamma_ess", ()),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MeshError(f"malformed patch data: {exc}") from exc


def save_patch(patch: VertexPatch, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(patch.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_patch(path) -> VertexPatch:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MeshError(f"not valid JSON: {path}: {exc}") from exc
    return VertexPatch.from_dict(data)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _face_adjacency_components(patch: VertexPatch, face_ids) -> int:
    """Number of edge-connected components of a set of faces."""
    face_ids = list(face_ids)
    if not face_ids:
        return 0
    by_edge: dict[tuple[int, int], list[int]] = {}
    for fi in face_ids:
        i, j, k = patch.faces[fi].ids
        for e in ((i, j), (i, k), (j, k)):
            by_edge.setdefault(e, []).append(fi)
    adj = {fi: set() for fi in face_ids}
    for owners in by_edge.values():
        for a, b in itertools.combinations(owners, 2):
            adj[a].add(b)
            adj[b].add(a)
    seen: set[int] = set()
    comps = 0
    for start in face_ids:
        if start in seen:
            continue
        comps += 1
        stack = [start]
        seen.add(start)
        while stack:
            cur = stack.pop()
            for nxt in adj[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
    return comps


def _point_on_triangle(pt: np.ndarray, tri: np.ndarray, tol: float) -> bool:
    """Whether ``pt`` lies on the closed triangle ``tri`` (within ``tol``)."""
    n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
    nn = np.linalg.norm(n)
    if nn <= 0.0:
        return False
    n = n / nn
    if abs(float((pt - tri[0]) @ n)) > tol:
        return False
    # barycentric coordinates in the plane
    m = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    sol, *_ = np.linalg.lstsq(m, pt - tri[0], rcond=None)
    s, t = float(sol[0]), float(sol[1])
    return s >= -tol and t >= -tol and s + t <= 1.0 + tol


def validate_patch(patch: VertexPatch) -> ValidationReport:
    """Run all structural and geometric patch checks.

    Returns
    -------
    ValidationReport
        One entry per checked property; ``report.ok`` is the conjunction.

    Notes
    -----
    The checks cover: non-degenerate elements all containing the center,
    distinct vertices, conforming face contact (no hanging vertices, interior
    faces separating their two elements), face-connectedness, closedness of
    the boundary surface, solid-angle closure at the center, single-fan edge
    loops, ball topology via the Euler characteristic, a single conical
    opening for boundary patches, and connectedness of both boundary-condition
    parts.
    """
    checks: list[CheckResult] = []
    scale = patch.scale()
    tol = 1e-9 * scale

    # 1. non-degenerate elements
    vols = [signed_volume(patch.tet_points(ti)) for ti in range(patch.n_tets)]
    min_vol = min(abs(v) for v in vols)
    checks.append(
        CheckResult(
            "elements-nondegenerate",
            min_vol > (1e-12 * scale**3),
            f"min |K| = {min_vol:.3e}",
        )
    )

    # 2. distinct vertex positions
    dup = False
    used = sorted({i for t in patch.tets for i in t.vertex_ids})
    pts = patch.vertices[used]
    for i, j in itertools.combinations(range(len(used)), 2):
        if np.linalg.norm(pts[i] - pts[j]) <= tol:
            dup = True
            break
    checks.append(CheckResult("vertices-distinct", not dup))

    # 3. no hanging vertices: a vertex lying on a face must be one of its corners
    hanging = []
    for vid in used:
        p = patch.vertices[vid]
        for fc in patch.faces:
            if vid in fc.ids:
                continue
            if _point_on_triangle(p, patch.vertices[list(fc.ids)], tol):
                hanging.append((vid, fc.ids))
                break
        if hanging:
            break
    checks.append(
        CheckResult(
            "conforming-contact",
            not hanging,
            f"vertex {hanging[0][0]} lies on face {hanging[0][1]}" if hanging else "",
        )
    )

    # 4. interior faces separate their two elements
    separated = True
    for fi in patch.interior_face_ids:
        fc = patch.faces[fi]
        fpts = patch.vertices[list(fc.ids)]
        centroid = fpts.mean(axis=0)
        sides = []
        for ti in fc.tets:
            other = patch.tet_points(ti).mean(axis=0)
            sides.append(math.copysign(1.0, float((other - centroid) @ fc.normal)))
        if len(sides) == 2 and sides[0] * sides[1] > 0:
            separated = False
            break
    checks.append(CheckResult("interior-faces-separating", separated))

    # 5. face-connected through interior faces
    adj = {ti: set() for ti in range(patch.n_tets)}
    for fi in patch.interior_face_ids:
        a, b = patch.faces[fi].tets
        adj[a].add(b)
        adj[b].add(a)
    seen = {0}
    stack = [0]
    while stack:
        cur = stack.pop()
        for nxt in adj[cur]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    checks.append(
        CheckResult("face-connected", len(seen) == patch.n_tets,
                    f"{len(seen)}/{patch.n_tets} elements reached")
    )

    # 6. boundary surface closed: each boundary-face edge on exactly 2 boundary faces
    edge_count: dict[tuple[int, int], int] = {}
    for fi in patch.boundary_face_ids:
        i, j, k = patch.faces[fi].ids
        for e in ((i, j), (i, k), (j, k)):
            edge_count[e] = edge_count.get(e, 0) + 1
    closed = all(c == 2 for c in edge_count.values())
    checks.append(CheckResult("boundary-surface-closed", closed))

    # 7. solid-angle closure at the center
    omega = sum(
        solid_angle(
            patch.vertices[patch.center],
            patch.vertices[[i for i in patch.tets[ti].vertex_ids if i != patch.center]],
        )
        for ti in range(patch.n_tets)
    )
    if patch.kind == "interior":
        ok_angle = abs(omega - 4.0 * math.pi) <= SOLID_ANGLE_TOL
        detail = f"sum = {omega:.12f}, target 4*pi"
    else:
        ok_angle = omega < 4.0 * math.pi - SOLID_ANGLE_TOL
        detail = f"sum = {omega:.12f} < 4*pi"
    checks.append(CheckResult("solid-angle-closure", ok_angle, detail))

    # 8. every edge through the center carries a single fan of elements
    fans_ok = True
    for e in patch.edges_through_center():
        ok, _, closed_loop = _edge_fan(patch, e)
        if not ok or (closed_loop != patch.edge_is_interior(e)):
            fans_ok = False
            break
    checks.append(CheckResult("edge-fans-single-loop", fans_ok))

    # 9. ball topology (Euler characteristic of the cell complex)
    verts = set(used)
    edges = {e for t in patch.tets for e in t.edges()}
    euler = len(verts) - len(edges) + len(patch.faces) - patch.n_tets
    checks.append(CheckResult("euler-characteristic", euler == 1, f"chi = {euler}"))

    # 10. boundary kind: exactly one conical opening
    boundary_cone = patch.boundary_face_ids & patch.cone_face_ids
    if patch.kind == "interior":
        checks.append(
            CheckResult("conical-opening", not boundary_cone,
                        "interior patch has no boundary faces through the center")
        )
    else:
        comps = _face_adjacency_components(patch, boundary_cone)
        checks.append(
            CheckResult("conical-opening", comps == 1,
                        f"{comps} components of boundary faces through the center")
        )

    # 11. essential and natural boundary parts each connected
    gamma_comps = _face_adjacency_components(patch, patch.gamma_face_ids)
    nat_comps = _face_adjacency_components(patch, patch.nat_face_ids)
    ok_parts = gamma_comps <= 1 and nat_comps <= 1
    checks.append(
        CheckResult(
            "boundary-parts-connected",
            ok_parts,
            f"essential: {gamma_comps} component(s), natural: {nat_comps}",
        )
    )

    report = ValidationReport(checks)
    if not report.ok:
        logger.debug("patch %s failed validation:\n%s", patch.token, report.summary())
    return report


def _edge_fan(patch: VertexPatch, edge) -> tuple[bool, list[int], bool]:
    """Order the elements around ``edge`` into a fan.

    Returns ``(single_fan, ordered_tets, closed)``; ``closed`` means the fan
    wraps around (the edge is interior).
    """
    e = tuple(sorted(edge))
    tets = patch.tets_with_edge(e)
    if not tets:
        return False, [], False
    # faces containing the edge, per element
    by_face: dict[tuple[int, int, int], list[int]] = {}
    for ti in tets:
        for key in patch.tets[ti].faces():
            if e[0] in key and e[1] in key:
                by_face.setdefault(key, []).append(ti)
    adj = {ti: [] for ti in tets}
    open_ends = []
    for key, owners in by_face.items():
        if len(owners) == 2:
            adj[owners[0]].append(owners[1])
            adj[owners[1]].append(owners[0])
        else:
            open_ends.append(owners[0])
    closed = not open_ends
    start = tets[0] if closed else open_ends[0]
    order = [start]
    prev = None
    while True:
        nxts = [t for t in adj[order[-1]] if t != prev]
        if not nxts:
            break
        prev = order[-1]
        order.append(nxts[0])
        if order[-1] == start:
            order.pop()
            break
        if len(order) > len(tets):
            return False, order, closed
    return len(order) == len(tets), order, closed


# ---------------------------------------------------------------------------
# shape regularity
# ---------------------------------------------------------------------------

def tet_shape_ratio(pts: np.ndarray) -> float:
    """Diameter over inscribed-ball diameter for one tetrahedron."""
    h = max(
        float(np.linalg.norm(pts[i] - pts[j]))
        for i, j in itertools.combinations(range(4), 2)
    )
    vol = abs(signed_volume(pts))
    areas = sum(
        triangle_area(pts[[i, j, k]])
        for i, j, k in itertools.combinations(range(4), 3)
    )
    if vol <= (1e-14 * h**3):
        raise MeshError("degenerate element has unbounded shape ratio")
    rho = 2.0 * (3.0 * vol / areas)
    return h / rho


def shape_regularity(patch: VertexPatch) -> float:
    """Largest diameter-to-insphere ratio over the patch elements."""
    return max(tet_shape_ratio(patch.tet_points(ti)) for ti in range(patch.n_tets))


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def _jitter_vertices(vertices: np.ndarray, fixed: int, jitter: float, seed: int) -> np.ndarray:
    """Displace every vertex but ``fixed`` by a fraction of its nearest-neighbor gap."""
    if jitter == 0.0:
        return vertices
    rng = np.random.default_rng(seed)
    out = vertices.copy()
    n = len(vertices)
    for vid in range(n):
        if vid == fixed:
            continue
        gaps = np.linalg.norm(vertices - vertices[vid], axis=1)
        gaps[vid] = np.inf
        step = jitter * 0.35 * float(gaps.min())
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        out[vid] = vertices[vid] + step * direction
    return out


def generate_interior_patch(
    n_ring: int = 4, layers: int = 2, jitter: float = 0.0, seed: int = 0
) -> VertexPatch:
    """Build an interior patch as the cone over a triangulated sphere.

    The sphere carries two poles and ``layers - 1`` rings of ``n_ring``
    vertices, giving ``2 * n_ring * (layers - 1)`` tetrahedra around the
    central vertex at the origin.  ``jitter`` in ``[0, 1)`` displaces every
    outer vertex by that fraction (scaled by the local vertex gap) in a
    direction drawn from ``numpy.random.default_rng(seed)``.

    Raises
    ------
    MeshError
        If the requested resolution is degenerate (``n_ring < 3`` or
        ``layers < 2``) or the jittered patch fails validation.
    """
    if n_ring < 3:
        raise MeshError(f"n_ring = {n_ring} cannot triangulate a sphere ring")
    if layers < 2:
        raise MeshError(f"layers = {layers} leaves no room between the poles")
    if not (0.0 <= jitter < 1.0):
        raise MeshError(f"jitter = {jitter} outside [0, 1)")

    verts: list[np.ndarray] = [np.zeros(3)]  # center first
    top = len(verts)
    verts.append(np.array([0.0, 0.0, 1.0]))
    ring_ids = []
    for k in range(1, layers):
        theta = math.pi * k / layers
        ids = []
        for j in range(n_ring):
            phi = 2.0 * math.pi * j / n_ring
            ids.append(len(verts))
            verts.append(
                np.array(
                    [
                        math.sin(theta) * math.cos(phi),
                        math.sin(theta) * math.sin(phi),
                        math.cos(theta),
                    ]
                )
            )
        ring_ids.append(ids)
    bottom = len(verts)
    verts.append(np.array([0.0, 0.0, -1.0]))

    tris: list[tuple[int, int, int]] = []
    first = ring_ids[0]
    for j in range(n_ring):
        tris.append((top, first[j], first[(j + 1) % n_ring]))
    for upper, lower in zip(ring_ids, ring_ids[1:]):
        for j in range(n_ring):
            jn = (j + 1) % n_ring
            tris.append((upper[j], upper[jn], lower[jn]))
            tris.append((upper[j], lower[jn], lower[j]))
    last = ring_ids[-1]
    for j in range(n_ring):
        tris.append((bottom, last[(j + 1) % n_ring], last[j]))

    vertices = np.array(verts)
    vertices = _jitter_vertices(vertices, fixed=0, jitter=jitter, seed=seed)
    patch = VertexPatch(vertices, [(0, *t) for t in tris], center=0)
    report = validate_patch(patch)
    if not report.ok:
        raise MeshError(
            "generated interior patch failed validation: "
            + "; ".join(c.name for c in report.failures())
        )
    return patch


def generate_boundary_patch(
    kind: str, n: int = 4, jitter: float = 0.0, seed: int = 0
) -> VertexPatch:
    """Build a boundary patch as a fan of ``n`` tetrahedra around one edge.

    The fan spreads the floor directions over the angle ``pi * n / (n + 2)``
    in the plane ``z = 0`` with an apex vertex above, so the patch has a
    single conical opening at the center.  ``kind`` selects the
    essential/natural split of the boundary faces through the center:

    - ``"dirichlet-fan"``: all of them essential (empty natural part),
    - ``"full-natural"``: all of them natural,
    - ``"mixed-fan"``: the two lateral wall faces natural, the floor faces
      essential (requires ``n >= 2``).

    Ceiling faces are always essential.
    """
    if kind not in BOUNDARY_KINDS:
        raise MeshError(f"unknown boundary patch kind {kind!r}")
    if n < 1:
        raise MeshError("a fan needs at least one tetrahedron")
    if kind == "mixed-fan" and n < 2:
        raise MeshError("mixed-fan needs n >= 2 so both boundary parts are nonempty")

    theta_max = math.pi * n / (n + 2)
    verts = [np.zeros(3)]
    rim = []
    for i in range(n + 1):
        th = theta_max * i / n
        rim.append(len(verts))
        verts.append(np.array([math.cos(th), math.sin(th), 0.0]))
    apex = len(verts)
    verts.append(np.array([0.0, 0.0, 1.0]))

    tets = [(0, rim[i], rim[i + 1], apex) for i in range(n)]
    vertices = np.array(verts)
    vertices = _jitter_vertices(vertices, fixed=0, jitter=jitter, seed=seed)

    floors = [tuple(sorted((0, rim[i], rim[i + 1]))) for i in range(n)]
    walls = [tuple(sorted((0, rim[0], apex))), tuple(sorted((0, rim[n], apex)))]
    if kind == "dirichlet-fan":
        gamma_ess = floors + walls
    elif kind == "full-natural":
        gamma_ess = []
    else:
        gamma_ess = floors

    patch = VertexPatch(vertices, tets, center=0, gamma_ess=gamma_ess)
    report = validate_patch(patch)
    if not report.ok:
        raise MeshError(
            "generated boundary patch failed validation: "
            + "; ".join(c.name for c in report.failures())
        )
    return patch


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------

@dataclass
class PatchEnumeration:
    """An element ordering compatible with the sweeping construction.

    ``sharp[j]`` holds the interior faces that element ``order[j]`` shares
    with earlier elements, ``ext[j]`` its faces on the patch boundary.  The
    ordering satisfies: the first element has no shared face; intermediate
    elements share one or two faces but never all of their interior faces;
    only the last element shares all of its interior faces; and an element
    sharing two faces closes the loop around their common edge.
    """

    order: list[int]
    sharp: list[tuple[int, ...]]
    ext: list[tuple[int, ...]]


def _enumeration_ok(patch: VertexPatch, order: list[int]) -> tuple[bool, str]:
    """Check the loop and shared-face-count rules for a full ordering."""
    placed: set[int] = set()
    n = len(order)
    for j, ti in enumerate(order):
        interior = set(patch.interior_faces_of_tet(ti))
        sharp = {
            fi
            for fi in interior
            if all(t in placed for t in patch.faces[fi].tets if t != ti)
        }
        if j == 0:
            if sharp:
                return False, f"first element {ti} already shares faces"
        elif j < n - 1:
            if not (1 <= len(sharp) <= 2):
                return False, f"element {ti} at step {j} shares {len(sharp)} faces"
            if sharp == interior:
                return False, f"element {ti} at step {j} is fully surrounded"
        else:
            if sharp != interior:
                return False, f"last element {ti} does not close the patch"
        if len(sharp) >= 2:
            for fa, fb in itertools.combinations(sorted(sharp), 2):
                edge = tuple(sorted(set(patch.faces[fa].ids) & set(patch.faces[fb].ids)))
                if len(edge) != 2:
                    return False, "shared faces without a common edge"
                others = [t for t in patch.tets_with_edge(edge) if t != ti]
                if not all(t in placed for t in others):
                    return False, (
                        f"element {ti} closes edge {edge} before its loop is complete"
                    )
        placed.add(ti)
    return True, ""


def enumerate_patch(patch: VertexPatch) -> PatchEnumeration:
    """Order the patch elements for the face-by-face sweep.

    A depth-first search over orderings, pruned by the loop rules; valid
    patches admit such an ordering, and the result is re-verified before it
    is returned.

    Raises
    ------
    MeshError
        If no admissible ordering exists (non-conforming or exotic patches).
    """
    n = patch.n_tets
    if n == 1:
        return PatchEnumeration(
            [0], [()], [tuple(patch.boundary_faces_of_tet(0))]
        )

    def candidates(placed: set[int]) -> list[tuple[int, tuple[int, ...]]]:
        out = []
        for ti in range(n):
            if ti in placed:
                continue
            interior = set(patch.interior_faces_of_tet(ti))
            sharp = {
                fi
                for fi in interior
                if all(t in placed for t in patch.faces[fi].tets if t != ti)
            }
            last = len(placed) == n - 1
            if not placed:
                if sharp:
                    continue
            elif last:
                if sharp != interior:
                    continue
            else:
                if not (1 <= len(sharp) <= 2) or sharp == interior:
                    continue
            if len(sharp) >= 2 and not last:
                loop_ok = True
                for fa, fb in itertools.combinations(sorted(sharp), 2):
                    edge = tuple(
                        sorted(set(patch.faces[fa].ids) & set(patch.faces[fb].ids))
                    )
                    others = [t for t in patch.tets_with_edge(edge) if t != ti]
                    if not all(t in placed for t in others):
                        loop_ok = False
                        break
                if not loop_ok:
                    continue
            out.append((ti, tuple(sorted(sharp))))
        return out

    order: list[int] = []
    placed: set[int] = set()

    def search() -> bool:
        if len(order) == n:
            return True
        for ti, _ in candidates(placed):
            order.append(ti)
            placed.add(ti)
            if search():
                return True
            order.pop()
            placed.remove(ti)
        return False

    if not search():
        raise MeshError("patch admits no sweep-compatible enumeration")

    ok, why = _enumeration_ok(patch, order)
    if not ok:
        raise MeshError(f"enumeration self-check failed: {why}")

    sharp_list: list[tuple[int, ...]] = []
    placed = set()
    for ti in order:
        interior = set(patch.interior_faces_of_tet(ti))
        sharp = tuple(
            sorted(
                fi
                for fi in interior
                if all(t in placed for t in patch.faces[fi].tets if t != ti)
            )
        )
        sharp_list.append(sharp)
        placed.add(ti)
    ext = [tuple(patch.boundary_faces_of_tet(ti)) for ti in order]
    return PatchEnumeration(order, sharp_list, ext)


# ---------------------------------------------------------------------------
# edge subpatches and colored refinements
# ---------------------------------------------------------------------------

@dataclass
class EdgePatch:
    """The elements around one edge through the center, ordered into a fan."""

    edge: tuple[int, int]
    tet_ids: list[int]
    closed: bool


def edge_patch(patch: VertexPatch, edge) -> EdgePatch:
    """Collect and order the elements sharing ``edge`` (which must contain the center)."""
    e = tuple(sorted(int(i) for i in edge))
    if patch.center not in e:
        raise MeshError(f"edge {e} does not contain the center vertex")
    tets = patch.tets_with_edge(e)
    if not tets:
        raise MeshError(f"{e} is not an edge of the patch")
    ok, order, closed = _edge_fan(patch, e)
    if not ok:
        raise MeshError(f"elements around edge {e} do not form a single fan")
    return EdgePatch(e, order, closed)


@dataclass
class ColoredRefinement:
    """A refinement into cells with vertex colors and fold-map orientation signs.

    ``cells[i]`` lists vertex ids into ``vertices`` (patch vertices first,
    refinement vertices appended); ``parent[i]`` is the original element
    containing the cell, ``signs[i]`` the orientation sign of the affine map
    folding cell ``i`` onto the base cell (the last one), matching colored
    vertices.  ``colors`` maps a vertex id to its color; the shared vertices
    of all cells (the edge endpoints, or the center) carry no color.
    """

    vertices: np.ndarray
    cells: list[tuple[int, int, int, int]]
    parent: list[int]
    colors: dict[int, int]
    signs: list[int]
    base_cell: int
    kappa_factor: float
    kind: str
    edge: tuple[int, int] | None = None

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def cell_points(self, ci: int) -> np.ndarray:
        return self.vertices[list(self.cells[ci])]


def _fold_sign(
    vertices: np.ndarray, cell: tuple[int, ...], base: tuple[int, ...],
    correspondence: dict[int, int],
) -> int:
    """Orientation sign of the affine map sending ``cell`` onto ``base``."""
    src = np.array([vertices[v] for v in cell])
    dst = np.array([vertices[correspondence[v]] for v in cell])
    sv = signed_volume(src)
    dv = signed_volume(dst)
    if abs(sv) <= 0.0 or abs(dv) <= 0.0:
        raise MeshError("degenerate cell in fold-sign computation")
    return 1 if sv * dv > 0 else -1


def two_color_refine(patch: VertexPatch, base_tet: int, edge) -> ColoredRefinement:
    """Refine the fan around ``edge`` so its cells admit an alternating 2-coloring.

    The loop around an interior edge through the center is kept as is when it
    has an even number of elements; otherwise a single element other than
    ``base_tet`` is cut in two by the plane through the edge and the midpoint
    of the opposite edge.  The off-edge vertices are then colored alternately
    around the loop and every cell is assigned the orientation sign of the
    affine fold onto the (uncut) base element that fixes the edge endpoints
    and matches colors.  The shape ratio grows by a factor of at most two.
    """
    ep = edge_patch(patch, edge)
    if not ep.closed:
        raise MeshError(f"edge {ep.edge} is not interior: its fan does not close")
    if base_tet not in ep.tet_ids:
        raise MeshError(f"element {base_tet} is not in the fan around {ep.edge}")

    e0, e1 = ep.edge
    # rotate the fan so the base element comes last
    k = ep.tet_ids.index(base_tet)
    fan = ep.tet_ids[k + 1 :] + ep.tet_ids[: k + 1]

    # off-edge vertex sequence w_1 .. w_m around the loop, aligned with `fan`
    def off_vertices(ti: int) -> set[int]:
        return set(patch.tets[ti].vertex_ids) - {e0, e1}

    first_shared = off_vertices(fan[0]) & off_vertices(fan[-1])
    if len(first_shared) != 1:
        raise MeshError("fan ordering broke down around the edge")
    w = [first_shared.pop()]
    for ti in fan:
        nxt = off_vertices(ti) - {w[-1]}
        if len(nxt) != 1:
            raise MeshError("fan ordering broke down around the edge")
        w.append(nxt.pop())
    assert w[-1] == w[0]
    w.pop()

    vertices = patch.vertices
    cells: list[tuple[int, int, int, int]] = []
    parent: list[int] = []
    if len(fan) % 2 == 1:
        cut_pos = 0  # first fan position; never the base element (which is last)
        cut_ti = fan[cut_pos]
        wa, wb = w[cut_pos], w[(cut_pos + 1) % len(w)]
        mid = 0.5 * (vertices[wa] + vertices[wb])
        vertices = np.vstack([vertices, mid])
        mid_id = len(vertices) - 1
        for pos, ti in enumerate(fan):
            if pos == cut_pos:
                cells.append((e0, e1, wa, mid_id))
                parent.append(ti)
                cells.append((e0, e1, mid_id, wb))
                parent.append(ti)
            else:
                cells.append((e0, e1, w[pos], w[(pos + 1) % len(w)]))
                parent.append(ti)
        # rebuild the off-edge cycle including the midpoint
        w = w[: cut_pos + 1] + [mid_id] + w[cut_pos + 1 :]
    else:
        for pos, ti in enumerate(fan):
            cells.append((e0, e1, w[pos], w[(pos + 1) % len(w)]))
            parent.append(ti)

    m = len(cells)
    if m % 2 != 0:
        raise MeshError("parity fix failed to produce an even fan")
    colors = {w[pos]: 1 + (pos % 2) for pos in range(m)}

    base_cell = m - 1
    bw = [v for v in cells[base_cell][2:]]
    base_by_color = {colors[v]: v for v in bw}
    signs = []
    for ci, cell in enumerate(cells):
        corr = {e0: e0, e1: e1}
        for v in cell[2:]:
            corr[v] = base_by_color[colors[v]]
        signs.append(_fold_sign(vertices, cell, cells[base_cell], corr))

    kappa_before = shape_regularity(patch)
    kappa_after = max(
        tet_shape_ratio(vertices[list(c)]) for c in cells
    )
    ref = ColoredRefinement(
        vertices=vertices,
        cells=cells,
        parent=parent,
        colors=colors,
        signs=signs,
        base_cell=base_cell,
        kappa_factor=kappa_after / kappa_before,
        kind="edge",
        edge=ep.edge,
    )
    if ref.signs[base_cell] != 1:
        raise MeshError("base cell must fold onto itself with positive sign")
    return ref


def _link_mesh(patch: VertexPatch) -> tuple[list[tuple[int, int, int]], list[int]]:
    """Link triangulation of the center: one outer triangle per element."""
    tris = []
    parents = []
    for ti, tet in enumerate(patch.tets):
        outer = tuple(sorted(v for v in tet.vertex_ids if v != patch.center))
        tris.append(outer)
        parents.append(ti)
    return tris, parents


def _try_three_coloring(tris: list[tuple[int, int, int]]) -> dict[int, int] | None:
    """Backtracking proper 3-coloring of the vertices of a triangulation."""
    adj: dict[int, set[int]] = {}
    for t in tris:
        for u, v in itertools.combinations(t, 2):
            adj.setdefault(u, set()).add(v)
            adj.setdefault(v, set()).add(u)
    order = sorted(adj, key=lambda v: -len(adj[v]))
    colors: dict[int, int] = {}

    def assign(i: int) -> bool:
        if i == len(order):
            return True
        v = order[i]
        for c in (1, 2, 3):
            if all(colors.get(u) != c for u in adj[v]):
                colors[v] = c
                if assign(i + 1):
                    return True
                del colors[v]
        return False

    return colors if assign(0) else None


def three_color_refine(patch: VertexPatch, base_tet: int) -> ColoredRefinement:
    """Refine an interior patch so its cells admit an exact 3-coloring.

    The link of the center is a triangulated sphere; its vertices admit a
    proper 3-coloring exactly when every vertex has even degree.  Odd-degree
    vertices are fixed up in pairs by bisecting a link edge, which toggles
    the parity of precisely the two vertices facing that edge.  Edges of the
    base element's link triangle are never bisected, so the base element
    survives as a cell.  Every cell then receives the orientation sign of the
    color-matching affine fold onto the base cell.
    """
    if patch.kind != "interior":
        raise MeshError("three-coloring refinement applies to interior patches")
    if not (0 <= base_tet < patch.n_tets):
        raise MeshError(f"no element {base_tet} in the patch")

    tris, parents = _link_mesh(patch)
    base_tri = tris[base_tet]
    forbidden = {
        tuple(sorted(e)) for e in itertools.combinations(base_tri, 2)
    }
    vertices = patch.vertices.copy()

    def degrees() -> dict[int, int]:
        deg: dict[int, int] = {}
        edges = set()
        for t in tris:
            for e in itertools.combinations(t, 2):
                edges.add(tuple(sorted(e)))
        for u, v in edges:
            deg[u] = deg.get(u, 0) + 1
            deg[v] = deg.get(v, 0) + 1
        return deg

    def edge_owners() -> dict[tuple[int, int], list[int]]:
        own: dict[tuple[int, int], list[int]] = {}
        for i, t in enumerate(tris):
            for e in itertools.combinations(t, 2):
                own.setdefault(tuple(sorted(e)), []).append(i)
        return own

    def bisect(e: tuple[int, int]) -> None:
        nonlocal vertices
        owners = edge_owners()[e]
        if len(owners) != 2:
            raise MeshError("link edge not shared by two triangles")
        u, v = e
        mid = 0.5 * (vertices[u] + vertices[v])
        vertices = np.vstack([vertices, mid])
        mid_id = len(vertices) - 1
        for i in sorted(owners, reverse=True):
            x = next(w for w in tris[i] if w not in e)
            pi = parents[i]
            del tris[i], parents[i]
            tris.extend([tuple(sorted((u, mid_id, x))), tuple(sorted((mid_id, v, x)))])
            parents.extend([pi, pi])

    # parity fix: repeatedly bisect an allowed edge whose two facing vertices
    # are both odd; fall back to walking one odd vertex toward another.
    for _ in range(500):
        deg = degrees()
        odd = {v for v, d in deg.items() if d % 2 == 1}
        if not odd:
            break
        own = edge_owners()
        facing: dict[tuple[int, int], tuple[int, int]] = {}
        for e, owners in own.items():
            if e in forbidden or len(owners) != 2:
                continue
            xs = tuple(
                next(w for w in tris[i] if w not in e) for i in owners
            )
            facing[e] = xs
        best = None
        for e, (x, y) in facing.items():
            hits = (x in odd) + (y in odd)
            if hits == 2:
                best = e
                break
            if hits == 1 and best is None:
                best = e
        if best is None:
            raise MeshError("parity fix stalled: no usable link edge")
        bisect(best)
    else:
        raise MeshError("parity fix did not terminate")

    colors = _try_three_coloring(tris)
    if colors is None:
        raise MeshError("link triangulation admits no proper 3-coloring")

    # assemble cells, base element last
    base_pos = next(
        i for i, (t, pi) in enumerate(zip(tris, parents)) if pi == base_tet and t == base_tri
    )
    order = [i for i in range(len(tris)) if i != base_pos] + [base_pos]
    a = patch.center
    cells = [(a, *tris[i]) for i in order]
    parent = [parents[i] for i in order]
    base_cell = len(cells) - 1
    base_by_color = {colors[v]: v for v in cells[base_cell][1:]}
    signs = []
    for cell in cells:
        corr = {a: a}
        for v in cell[1:]:
            corr[v] = base_by_color[colors[v]]
        signs.append(_fold_sign(vertices, cell, cells[base_cell], corr))

    kappa_before = shape_regularity(patch)
    kappa_after = max(tet_shape_ratio(vertices[list(c)]) for c in cells)
    ref = ColoredRefinement(
        vertices=vertices,
        cells=cells,
        parent=parent,
        colors=colors,
        signs=signs,
        base_cell=base_cell,
        kappa_factor=kappa_after / kappa_before,
        kind="patch",
    )
    if ref.signs[base_cell] != 1:
        raise MeshError("base cell must fold onto itself with positive sign")
    logger.debug(
        "three-colored refinement: %d cells from %d elements (shape factor %.3f)",
        ref.n_cells, patch.n_tets, ref.kappa_factor,
    )
    return ref
