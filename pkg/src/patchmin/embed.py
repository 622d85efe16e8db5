"""Flattening boundary patches onto reference shapes.

A boundary patch with a single conical opening is equivalent, element by
element, to a *parachute*: the cone from the origin over a planar
triangulated disk placed at height one.  Embedding that disk onto the
reference triangle turns the parachute into a patch covering the reference
tetrahedron, and three successive plane reflections of the latter produce an
interior patch made of eight congruent copies.  This module provides the
two-dimensional side of the pipeline (disk meshes, triconnectivity, Tutte
embeddings, repair of chorded meshes around problematic boundary vertices)
together with the three-dimensional assembly steps and the stability-ratio
transfer check between related patches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Point, Polygon
from shapely.ops import unary_union

from . import spaces
from .mesh import VertexPatch, validate_patch
from .minimize import MinProblem, random_problem, stability_ratio
from .piola import (
    AffineMap,
    MirrorPairing,
    SymmetrizationOp,
    apply_symmetrization,
    reflect_patch,
    transport_broken,
    transport_norm_factor,
)

#: reference triangle corners: right angle first, then the hypotenuse ends
CORNER_O = np.array([0.0, 0.0])
CORNER_X = np.array([1.0, 0.0])
CORNER_Y = np.array([0.0, 1.0])

#: geometric slack accepted when checking points against planes and edges
GEOM_TOL = 1e-12

#: halving retries before giving up on fitting virtual elements
EXTEND_RETRIES = 8


class EmbedError(Exception):
    """Raised for invalid planar meshes, failed embeddings or blocked repairs."""


# ---------------------------------------------------------------------------
# planar triangulated disks
# ---------------------------------------------------------------------------

def _tri_area(pts: np.ndarray) -> float:
    """Signed area of a 2D triangle given as a (3, 2) array."""
    u, v = pts[1] - pts[0], pts[2] - pts[0]
    return 0.5 * float(u[0] * v[1] - u[1] * v[0])


class PlanarTriMesh:
    """A conforming triangulation of a planar disk with labelled boundary.

    Parameters
    ----------
    vertices : (n, 2) array
        Vertex coordinates; row index is the vertex id.
    triangles : sequence of 3-tuples
        Vertex ids of each triangle.  Any consistent orientation is accepted;
        triangles are stored counterclockwise.
    gamma_flat : iterable of 2-tuples, optional
        Boundary edges making up the first of the two boundary arcs.  The
        arc and its complement must each be contiguous along the boundary
        cycle (either may be empty).

    Notes
    -----
    Construction derives the edge table, the boundary cycle and the arc
    partition, and raises :class:`EmbedError` whenever the input is not a
    triangulated disk: zero-area triangles, edges shared by more than two
    triangles, inconsistent orientations, several boundary loops, or a
    nontrivial Euler characteristic.
    """

    def __init__(self, vertices, triangles, gamma_flat=()) -> None:
        self.vertices = np.asarray(vertices, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise EmbedError("vertices must be an (n, 2) array")
        if not np.isfinite(self.vertices).all():
            raise EmbedError("non-finite vertex coordinates")
        n = len(self.vertices)

        self.triangles: list[tuple[int, int, int]] = []
        for t in triangles:
            ids = tuple(int(i) for i in t)
            if len(ids) != 3 or len(set(ids)) != 3:
                raise EmbedError(f"triangle {ids} does not have 3 distinct vertices")
            if not all(0 <= i < n for i in ids):
                raise EmbedError(f"triangle {ids} references a missing vertex")
            area = _tri_area(self.vertices[list(ids)])
            if area == 0.0:
                raise EmbedError(f"triangle {ids} is degenerate")
            if area < 0.0:
                ids = (ids[0], ids[2], ids[1])
            self.triangles.append(ids)
        if not self.triangles:
            raise EmbedError("mesh has no triangles")

        self._build_edges()
        self._build_boundary()
        self._classify(gamma_flat)

    # -- construction helpers ------------------------------------------------

    def _build_edges(self) -> None:
        owners: dict[tuple[int, int], list[int]] = {}
        directed: set[tuple[int, int]] = set()
        for ti, tri in enumerate(self.triangles):
            for k in range(3):
                a, b = tri[k], tri[(k + 1) % 3]
                if (a, b) in directed:
                    raise EmbedError(
                        f"directed edge ({a}, {b}) repeated; orientations clash"
                    )
                directed.add((a, b))
                owners.setdefault((min(a, b), max(a, b)), []).append(ti)
        for e, own in owners.items():
            if len(own) > 2:
                raise EmbedError(f"edge {e} shared by {len(own)} triangles")
        self.edge_owners = owners
        self.edges = frozenset(owners)
        self.boundary_edges = frozenset(e for e, own in owners.items() if len(own) == 1)
        self.interior_edges = frozenset(self.edges - self.boundary_edges)

        used = set()
        for tri in self.triangles:
            used.update(tri)
        if len(used) != len(self.vertices):
            raise EmbedError("mesh has isolated vertices")
        # disk topology: V - E + T = 1 and one boundary loop (checked next)
        if len(self.vertices) - len(self.edges) + len(self.triangles) != 1:
            raise EmbedError("mesh is not a triangulated disk (Euler check)")

        # edge-connected triangle set
        adj: dict[int, list[int]] = {ti: [] for ti in range(len(self.triangles))}
        for own in owners.values():
            if len(own) == 2:
                adj[own[0]].append(own[1])
                adj[own[1]].append(own[0])
        seen = {0}
        stack = [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != len(self.triangles):
            raise EmbedError("mesh is not edge-connected")

    def _build_boundary(self) -> None:
        # with counterclockwise triangles the directed boundary edges already
        # wind counterclockwise around the disk
        succ: dict[int, int] = {}
        for tri in self.triangles:
            for k in range(3):
                a, b = tri[k], tri[(k + 1) % 3]
                if (min(a, b), max(a, b)) in self.boundary_edges:
                    if a in succ:
                        raise EmbedError(f"boundary branches at vertex {a}")
                    succ[a] = b
        start = min(succ)
        cycle = [start]
        while True:
            nxt = succ[cycle[-1]]
            if nxt == start:
                break
            if len(cycle) > len(succ):
                raise EmbedError("boundary walk does not close")
            cycle.append(nxt)
        if len(cycle) != len(succ):
            raise EmbedError("boundary has more than one loop")
        self.boundary_cycle = tuple(cycle)
        self.boundary_vertex_ids = frozenset(cycle)
        self.interior_vertex_ids = frozenset(range(len(self.vertices))) - self.boundary_vertex_ids

    def _classify(self, gamma_flat) -> None:
        flat = set()
        for e in gamma_flat:
            k = (min(int(e[0]), int(e[1])), max(int(e[0]), int(e[1])))
            if k not in self.boundary_edges:
                raise EmbedError(f"arc label on non-boundary edge {k}")
            flat.add(k)
        self.gamma_flat = frozenset(flat)
        self.gamma_sharp = frozenset(self.boundary_edges - self.gamma_flat)
        if self.gamma_flat and self.gamma_sharp:
            changes = 0
            labels = [e in self.gamma_flat for e in self.cycle_edges()]
            for prev, cur in zip(labels, labels[1:] + labels[:1]):
                changes += prev != cur
            if changes != 2:
                raise EmbedError("boundary arcs are not two contiguous runs")

    # -- accessors -----------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def cycle_edges(self) -> list[tuple[int, int]]:
        """Boundary edges as sorted pairs, in cycle order."""
        cyc = self.boundary_cycle
        return [
            (min(a, b), max(a, b))
            for a, b in zip(cyc, cyc[1:] + cyc[:1])
        ]

    def edge_length(self, e) -> float:
        a, b = e
        return float(np.linalg.norm(self.vertices[a] - self.vertices[b]))

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "vertices": [[float(c) for c in v] for v in self.vertices],
            "triangles": [list(t) for t in self.triangles],
            "gamma_flat": sorted(list(e) for e in self.gamma_flat),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PlanarTriMesh":
        try:
            return cls(data["vertices"], data["triangles"], data.get("gamma_flat", ()))
        except (KeyError, TypeError, ValueError) as exc:
            raise EmbedError(f"malformed planar mesh data: {exc}") from exc


# ---------------------------------------------------------------------------
# graph view and triconnectivity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeshGraph:
    """The undirected graph of a planar mesh, with boundary markers."""

    vertices: tuple[int, ...]
    edges: frozenset
    v_ext: frozenset
    e_ext: frozenset


def mesh_graph(m: PlanarTriMesh) -> MeshGraph:
    """Extract the vertex/edge graph of a planar mesh."""
    return MeshGraph(
        vertices=tuple(range(m.n_vertices)),
        edges=m.edges,
        v_ext=m.boundary_vertex_ids,
        e_ext=m.boundary_edges,
    )


def is_triconnected(g: MeshGraph) -> bool:
    """Whether the graph stays connected after deleting any two vertices.

    Brute force over all vertex pairs; fine for patch-sized meshes.
    """
    n = len(g.vertices)
    if n < 4:
        raise EmbedError(f"triconnectivity needs at least 4 vertices, got {n}")
    adj: dict[int, set[int]] = {v: set() for v in g.vertices}
    for a, b in g.edges:
        adj[a].add(b)
        adj[b].add(a)
    verts = list(g.vertices)
    for i, u in enumerate(verts):
        for v in verts[i + 1:]:
            remaining = [w for w in verts if w not in (u, v)]
            seen = {remaining[0]}
            stack = [remaining[0]]
            while stack:
                for nb in adj[stack.pop()]:
                    if nb not in (u, v) and nb not in seen:
                        seen.add(nb)
                        stack.append(nb)
            if len(seen) != len(remaining):
                return False
    return True


def interior_chord_check(m: PlanarTriMesh) -> list[tuple[int, int]]:
    """Interior edges whose endpoints are both boundary vertices.

    Such chords are exactly what can break triconnectivity of a disk mesh,
    and a chord-free mesh is always triconnected; the returned edges are the
    ones the extension machinery has to repair.
    """
    ext = m.boundary_vertex_ids
    return sorted(e for e in m.interior_edges if e[0] in ext and e[1] in ext)


# ---------------------------------------------------------------------------
# Tutte embedding onto the reference triangle
# ---------------------------------------------------------------------------

@dataclass
class TutteEmbedding:
    """A straight-line embedding of a disk mesh into the reference triangle.

    ``coords[i]`` is the image of vertex ``i``; ``psi[t]`` is the affine map
    ``(A, b)`` of triangle ``t`` from the source coordinates to the embedded
    ones.  ``boundary_assignment`` names the arc mapped onto the hypotenuse
    ``{y1 + y2 = 1}`` (``None`` when the boundary was split into thirds
    because one arc was empty).  ``perturbed`` flags that the plain boundary
    placement produced an inverted triangle and the convexified fallback was
    used instead.
    """

    mesh: PlanarTriMesh
    coords: np.ndarray
    boundary_assignment: str | None
    perturbed: bool = False
    psi: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.psi:
            self.psi = [
                _triangle_affine(self.mesh.vertices[list(t)], self.coords[list(t)])
                for t in self.mesh.triangles
            ]

    def apply_psi(self, tri: int, pts: np.ndarray) -> np.ndarray:
        a, b = self.psi[tri]
        return np.asarray(pts, float) @ a.T + b

    def min_area(self) -> float:
        return min(_tri_area(self.coords[list(t)]) for t in self.mesh.triangles)

    def to_dict(self) -> dict:
        out = self.mesh.to_dict()
        out["coords"] = [[float(c) for c in y] for y in self.coords]
        return out


def _triangle_affine(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = (src[1:] - src[0]).T
    a = (dst[1:] - dst[0]).T @ np.linalg.inv(d)
    return a, dst[0] - a @ src[0]


def _arc_runs(m: PlanarTriMesh, arc_choice: str) -> tuple[list[int], list[int]] | None:
    """Split the boundary cycle at the two arc junctions.

    Returns ``(chosen_run, other_run)`` as vertex lists (each run repeats its
    endpoints with the other run), or ``None`` when one arc is empty and the
    boundary must be split into thirds instead.
    """
    if arc_choice not in ("flat", "sharp"):
        raise EmbedError(f"arc_choice must be 'flat' or 'sharp', got {arc_choice!r}")
    chosen = m.gamma_flat if arc_choice == "flat" else m.gamma_sharp
    if not chosen or not (m.boundary_edges - chosen):
        return None
    cyc = list(m.boundary_cycle)
    edges = m.cycle_edges()
    nb = len(cyc)
    starts = [
        i for i in range(nb)
        if edges[i] in chosen and edges[(i - 1) % nb] not in chosen
    ]
    if len(starts) != 1:  # pragma: no cover - constructor enforces two runs
        raise EmbedError("boundary arcs are not contiguous")
    s = starts[0]
    k = len([e for e in edges if e in chosen])
    run = [cyc[(s + j) % nb] for j in range(k + 1)]
    other = [cyc[(s + k + j) % nb] for j in range(nb - k + 1)]
    return run, other


def _place_run(targets, sides, run, lengths, side_id, p0, p1) -> None:
    """Spread a vertex run from ``p0`` to ``p1`` proportionally to ``lengths``."""
    total = sum(lengths)
    cum = 0.0
    for j, v in enumerate(run):
        t = cum / total if total > 0 else j / (len(run) - 1)
        targets[v] = (1.0 - t) * p0 + t * p1
        sides[v] = (side_id, t)
        if j < len(lengths):
            cum += lengths[j]


def _boundary_targets(m: PlanarTriMesh, arc_choice: str):
    """Target positions of the boundary vertices on the reference triangle."""
    targets: dict[int, np.ndarray] = {}
    sides: dict[int, tuple[int, float]] = {}
    runs = _arc_runs(m, arc_choice)
    if runs is not None:
        run, other = runs
        if len(other) < 3:
            raise EmbedError(
                "the complementary arc has a single edge and cannot span two "
                "triangle legs"
            )
        lr = [m.edge_length((run[j], run[j + 1])) for j in range(len(run) - 1)]
        _place_run(targets, sides, run, lr, 0, CORNER_X, CORNER_Y)
        lo = [m.edge_length((other[j], other[j + 1])) for j in range(len(other) - 1)]
        cum, total = 0.0, sum(lo)
        best, best_gap = 1, float("inf")
        for j in range(1, len(other) - 1):
            cum += lo[j - 1]
            if abs(cum - 0.5 * total) < best_gap:
                best, best_gap = j, abs(cum - 0.5 * total)
        _place_run(targets, sides, other[: best + 1], lo[:best], 1, CORNER_Y, CORNER_O)
        _place_run(targets, sides, other[best:], lo[best:], 2, CORNER_O, CORNER_X)
        return targets, sides, arc_choice

    # one arc is empty: split the whole cycle into three runs by arc length
    cyc = list(m.boundary_cycle)
    nb = len(cyc)
    lengths = [m.edge_length(e) for e in m.cycle_edges()]
    total = sum(lengths)
    cuts = [0]
    for frac in (1.0 / 3.0, 2.0 / 3.0):
        best, best_gap = None, float("inf")
        run_cum = 0.0
        for j in range(nb):
            if cuts[-1] < j and abs(run_cum - frac * total) < best_gap:
                best, best_gap = j, abs(run_cum - frac * total)
            run_cum += lengths[j]
        if best is None:
            raise EmbedError("boundary cycle too short to occupy three triangle sides")
        cuts.append(best)
    i1, i2 = cuts[1], cuts[2]
    runs3 = [cyc[: i1 + 1], cyc[i1: i2 + 1], cyc[i2:] + cyc[:1]]
    corners = [CORNER_X, CORNER_Y, CORNER_O, CORNER_X]
    for side_id, run in enumerate(runs3):
        lr = [m.edge_length((run[j], run[j + 1])) for j in range(len(run) - 1)]
        _place_run(targets, sides, run, lr, side_id, corners[side_id], corners[side_id + 1])
    return targets, sides, None


#: outward unit normals of the reference-triangle sides, by side id
_SIDE_NORMALS = {
    0: np.array([1.0, 1.0]) / math.sqrt(2.0),  # hypotenuse
    1: np.array([-1.0, 0.0]),                  # left leg
    2: np.array([0.0, -1.0]),                  # bottom leg
}


def _disk_solve(tris, n: int, targets: dict[int, np.ndarray]) -> np.ndarray:
    """Uniform-weight convex-combination solve for the non-fixed vertices."""
    nbrs: dict[int, set[int]] = {v: set() for v in range(n)}
    for tri in tris:
        for k in range(3):
            nbrs[tri[k]].add(tri[(k + 1) % 3])
            nbrs[tri[k]].add(tri[(k + 2) % 3])
    coords = np.zeros((n, 2))
    interior = [v for v in range(n) if v not in targets]
    for v, pos in targets.items():
        coords[v] = pos
    if not interior:
        return coords
    index = {v: i for i, v in enumerate(interior)}
    a = np.zeros((len(interior), len(interior)))
    rhs = np.zeros((len(interior), 2))
    for v in interior:
        i = index[v]
        a[i, i] = len(nbrs[v])
        for w in nbrs[v]:
            if w in index:
                a[i, index[w]] -= 1.0
            else:
                rhs[i] += coords[w]
    try:
        coords[interior] = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - system is an M-matrix
        raise EmbedError(f"convex-combination system is singular: {exc}") from exc
    return coords


def tutte_embed(m: PlanarTriMesh, arc_choice: str = "flat") -> TutteEmbedding:
    """Embed a disk mesh into the reference triangle by a Tutte-style solve.

    Boundary vertices go onto the triangle sides, spaced proportionally to
    the source arc lengths, with the arc named by ``arc_choice`` occupying
    the hypotenuse; interior vertices solve the uniform-weight
    convex-combination system.  For triconnected meshes the result is a
    valid embedding; positivity of every image triangle is verified either
    way, and a placement on a slightly convex boundary (projected back to
    the straight sides afterwards) is tried once before giving up, flagged
    as ``perturbed``.

    A single triangle is mapped affinely, which requires the chosen arc to
    consist of exactly one edge.
    """
    if m.n_triangles == 1:
        runs = _arc_runs(m, arc_choice)
        if runs is not None:
            run, other = runs
            if len(run) != 2:
                raise EmbedError(
                    "a single triangle cannot carry a two-edge arc on the "
                    "hypotenuse without degenerating"
                )
            order = [other[1], run[0], run[1]]
        else:
            order = list(m.boundary_cycle)
        coords = np.zeros((m.n_vertices, 2))
        for pos, v in zip((CORNER_O, CORNER_X, CORNER_Y), order):
            coords[v] = pos
        emb = TutteEmbedding(m, coords, None if runs is None else arc_choice)
        if emb.min_area() <= 0.0:  # pragma: no cover - cycle order rules this out
            raise EmbedError("single-triangle affine placement degenerated")
        return emb

    targets, sides, assignment = _boundary_targets(m, arc_choice)
    coords = _disk_solve(m.triangles, m.n_vertices, targets)
    scale = float(np.max(np.abs(coords))) or 1.0
    tol = GEOM_TOL * scale
    emb = TutteEmbedding(m, coords, assignment)
    if emb.min_area() > tol:
        return emb

    # collinear boundary vertices can defeat the convex-position hypothesis;
    # bow the sides outward, re-solve, then project the boundary back
    for eps in (0.08, 0.02, 0.005):
        bowed = {
            v: targets[v] + eps * t * (1.0 - t) * _SIDE_NORMALS[side]
            for v, (side, t) in sides.items()
        }
        coords = _disk_solve(m.triangles, m.n_vertices, bowed)
        if min(_tri_area(coords[list(t)]) for t in m.triangles) <= tol:
            continue
        for v, pos in targets.items():
            coords[v] = pos
        emb = TutteEmbedding(m, coords, assignment, perturbed=True)
        if emb.min_area() > tol:
            return emb
    raise EmbedError(
        f"embedding produced a nonpositive triangle (min area {emb.min_area():.3e}); "
        "is the mesh triconnected?"
    )


# ---------------------------------------------------------------------------
# parachute patches
# ---------------------------------------------------------------------------

class ParachutePatch:
    """A boundary patch whose outer vertices all lie in the plane ``x3 = 1``.

    The patch is the cone from the origin over its *ceiling*, recorded
    separately as a planar mesh: ``ceiling_vertex_ids[i]`` is the patch
    vertex id of ceiling vertex ``i``, the ceiling triangles match the
    boundary faces opposite the center one to one, and the flat/sharp arc
    partition of the ceiling rim mirrors the natural/essential split of the
    boundary faces through the center.
    """

    def __init__(self, patch: VertexPatch, ceiling: PlanarTriMesh,
                 ceiling_vertex_ids) -> None:
        self.patch = patch
        self.ceiling = ceiling
        self.ceiling_vertex_ids = tuple(int(i) for i in ceiling_vertex_ids)
        self._check()

    def _check(self) -> None:
        p, m = self.patch, self.ceiling
        if p.kind != "boundary":
            raise EmbedError("a parachute patch is a boundary patch")
        if len(self.ceiling_vertex_ids) != m.n_vertices:
            raise EmbedError("one patch vertex id per ceiling vertex is required")
        scale = p.scale()
        if float(np.linalg.norm(p.vertices[p.center])) > 1e-9 * scale:
            raise EmbedError("parachute center must sit at the origin")
        outer = [v for v in range(len(p.vertices)) if v != p.center]
        heights = p.vertices[outer, 2]
        if float(np.max(np.abs(heights - 1.0))) > 1e-9 * scale:
            raise EmbedError("all outer vertices must lie in the plane x3 = 1")
        back = {g: i for i, g in enumerate(self.ceiling_vertex_ids)}
        planar = {g: p.vertices[g, :2] for g in self.ceiling_vertex_ids}
        for g, xy in planar.items():
            if float(np.linalg.norm(m.vertices[back[g]] - xy)) > 1e-9 * scale:
                raise EmbedError("ceiling mesh does not match the patch top view")
        ceil_faces = {
            tuple(sorted(p.faces[fi].ids)) for fi in p.ceiling_face_ids
        }
        tris = {
            tuple(sorted(self.ceiling_vertex_ids[v] for v in t)) for t in m.triangles
        }
        if ceil_faces != tris:
            raise EmbedError("ceiling mesh does not match the faces opposite the center")
        nat_edges = set()
        for fi in p.nat_face_ids:
            u, v = sorted(set(p.faces[fi].ids) - {p.center})
            nat_edges.add((min(back[u], back[v]), max(back[u], back[v])))
        if nat_edges != set(m.gamma_flat):
            raise EmbedError("flat arc does not mirror the natural boundary faces")


def _ceiling_rim_cycle(triangles: list[tuple[int, int, int]]) -> list[int]:
    """Boundary cycle of a triangle complex given only combinatorially."""
    owners: dict[tuple[int, int], int] = {}
    for tri in triangles:
        for k in range(3):
            e = tuple(sorted((tri[k], tri[(k + 1) % 3])))
            owners[e] = owners.get(e, 0) + 1
    rim = [e for e, c in owners.items() if c == 1]
    nbrs: dict[int, list[int]] = {}
    for a, b in rim:
        nbrs.setdefault(a, []).append(b)
        nbrs.setdefault(b, []).append(a)
    if any(len(v) != 2 for v in nbrs.values()):
        raise EmbedError("ceiling rim is not a single closed loop")
    start = min(nbrs)
    cycle = [start, nbrs[start][0]]
    while cycle[-1] != start:
        a, b = nbrs[cycle[-1]]
        cycle.append(b if a == cycle[-2] else a)
        if len(cycle) > 2 * len(rim):
            raise EmbedError("ceiling rim walk does not close")
    return cycle[:-1]


def parachute_from_boundary_patch(p: VertexPatch) -> tuple[ParachutePatch, list[AffineMap]]:
    """Flatten a boundary patch into an equivalent parachute.

    The ceiling topology is embedded onto the unit circle (rim vertices
    spaced proportionally to the original rim edge lengths, interior ones by
    the uniform convex-combination solve, which stays one to one for every
    triangulated disk over a strictly convex boundary) and lifted to the
    plane ``x3 = 1`` over the origin.  Returns the parachute together with
    the per-element affine maps from the original elements onto it.
    """
    if p.kind != "boundary":
        raise EmbedError("only boundary patches have a parachute form")
    report = validate_patch(p)
    if not report.ok:
        raise EmbedError(
            "patch opening is not resolvable: "
            + "; ".join(c.name for c in report.failures())
        )
    outer = sorted(set(range(len(p.vertices))) - {p.center})
    local = {g: i for i, g in enumerate(outer)}
    tris = [
        tuple(local[v] for v in p.faces[fi].ids)
        for fi in sorted(p.ceiling_face_ids)
    ]
    cycle = _ceiling_rim_cycle(tris)

    # rim onto the unit circle, arc-length proportional
    lengths = [
        float(np.linalg.norm(p.vertices[outer[a]] - p.vertices[outer[b]]))
        for a, b in zip(cycle, cycle[1:] + cycle[:1])
    ]
    total = sum(lengths)
    targets: dict[int, np.ndarray] = {}
    cum = 0.0
    for v, ln in zip(cycle, lengths):
        th = 2.0 * math.pi * cum / total
        targets[v] = np.array([math.cos(th), math.sin(th)])
        cum += ln

    coords = _disk_solve(tris, len(outer), targets)
    areas = [_tri_area(coords[list(t)]) for t in tris]
    if min(abs(a) for a in areas) <= GEOM_TOL:
        raise EmbedError("circle embedding of the ceiling degenerated")
    # the input triangles come from sorted face ids; orient them by their
    # embedded images (a fold would clash in the mesh constructor below)
    tris = [
        t if a > 0 else (t[0], t[2], t[1]) for t, a in zip(tris, areas)
    ]

    verts = np.array(p.vertices)
    verts[p.center] = 0.0
    for g, i in local.items():
        verts[g] = (*coords[i], 1.0)
    tets = []
    for ti in range(p.n_tets):
        face = tuple(sorted(set(p.tets[ti].vertex_ids) - {p.center}))
        tri = next(t for t in tris if tuple(sorted(outer[v] for v in t)) == face)
        tets.append((p.center, *(outer[v] for v in tri)))
    gamma_ess = [p.faces[fi].ids for fi in p.ess_cone_face_ids]
    patch = VertexPatch(verts, tets, center=p.center, gamma_ess=gamma_ess)
    report = validate_patch(patch)
    if not report.ok:
        raise EmbedError(
            "parachute failed validation: " + "; ".join(c.name for c in report.failures())
        )

    flat = []
    for fi in p.nat_face_ids:
        u, v = sorted(set(p.faces[fi].ids) - {p.center})
        flat.append((local[u], local[v]))
    ceiling = PlanarTriMesh(coords, tris, gamma_flat=flat)
    pp = ParachutePatch(patch, ceiling, outer)
    maps = [
        AffineMap.from_points(
            p.vertices[list(p.tets[ti].vertex_ids)],
            patch.vertices[list(p.tets[ti].vertex_ids)],
        )
        for ti in range(p.n_tets)
    ]
    return pp, maps


# ---------------------------------------------------------------------------
# problematic vertices and mesh extension
# ---------------------------------------------------------------------------

def find_problematic_vertices(pp: ParachutePatch) -> list[int]:
    """Ceiling vertices incident to an interior chord, sorted."""
    bad: set[int] = set()
    for a, b in interior_chord_check(pp.ceiling):
        bad.update((a, b))
    return sorted(bad)


def _exterior_gap(m: PlanarTriMesh, b: int) -> tuple[int, int, float, float]:
    """The open angular sector at boundary vertex ``b``.

    Returns ``(u_a, u_b, theta_a, gap)``: the rim neighbors bounding the
    sector and the start angle/width of the counterclockwise sweep from the
    edge ``b-u_a`` to ``b-u_b`` through the exterior.
    """
    inc = [t for t in m.triangles if b in t]
    wedges = {frozenset(set(t) - {b}) for t in inc}
    nbr = sorted(
        {v for t in inc for v in t if v != b},
        key=lambda v: math.atan2(*(m.vertices[v] - m.vertices[b])[::-1]),
    )
    gaps = []
    for i, u in enumerate(nbr):
        w = nbr[(i + 1) % len(nbr)]
        if frozenset((u, w)) not in wedges:
            gaps.append((u, w))
    if len(gaps) != 1:
        raise EmbedError(f"vertex {b} does not have a unique exterior opening")
    u_a, u_b = gaps[0]
    da = m.vertices[u_a] - m.vertices[b]
    db = m.vertices[u_b] - m.vertices[b]
    th_a = math.atan2(da[1], da[0])
    gap = (math.atan2(db[1], db[0]) - th_a) % (2.0 * math.pi)
    return u_a, u_b, th_a, gap


def extend_problematic_vertex(pp: ParachutePatch, b: int) -> ParachutePatch:
    """Close the boundary loop around ceiling vertex ``b`` with virtual cells.

    Three virtual triangles fill the exterior opening at ``b`` — apex angles
    half, then a quarter and a quarter of the opening — and each is divided
    into ``N`` cells sharing ``b``, where ``N`` is the number of original
    cells at ``b``.  The vertex becomes interior, so every chord through it
    disappears, no new chord is created, and the arc labels continue from
    the two absorbed rim edges onto the new rim.  The virtual cells must not
    overlap the existing disk; their radial size is halved up to
    ``EXTEND_RETRIES`` times before giving up.
    """
    m = pp.ceiling
    if b not in m.boundary_vertex_ids:
        raise EmbedError(f"vertex {b} is not on the ceiling boundary")
    if not any(b in e for e in interior_chord_check(m)):
        raise EmbedError(f"vertex {b} is not incident to an interior chord")
    n_at_b = sum(1 for t in m.triangles if b in t)
    u_a, u_b, th_a, gap = _exterior_gap(m, b)
    chords_before = len(interior_chord_check(m))

    pb = m.vertices[b]
    dom = unary_union([Polygon(m.vertices[list(t)]) for t in m.triangles])
    r0 = min(m.edge_length((b, u_a)), m.edge_length((b, u_b)))
    for attempt in range(EXTEND_RETRIES):
        r = r0 * 0.5 ** attempt
        c = pb + r * np.array([math.cos(th_a + gap / 2), math.sin(th_a + gap / 2)])
        d = pb + r * np.array([math.cos(th_a + 0.75 * gap), math.sin(th_a + 0.75 * gap)])
        chains = []
        for lo, hi in ((m.vertices[u_a], c), (c, d), (d, m.vertices[u_b])):
            chains.append([lo + (hi - lo) * j / n_at_b for j in range(n_at_b + 1)])
        new_tris_pts = [
            (pb, chain[j], chain[j + 1])
            for chain in chains
            for j in range(n_at_b)
        ]
        if any(_tri_area(np.array(t)) <= GEOM_TOL * r * r for t in new_tris_pts):
            continue
        tol_len = 1e-9 * r
        ok = True
        for t in new_tris_pts:
            poly = Polygon(t)
            if poly.intersection(dom).area > 1e-12 * poly.area:
                ok = False
                break
            for w in range(m.n_vertices):
                if w in (b, u_a, u_b):
                    continue
                if poly.distance(Point(m.vertices[w])) < tol_len:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            break
    else:
        raise EmbedError(
            f"no geometric room for virtual cells at vertex {b} after "
            f"{EXTEND_RETRIES} halvings"
        )

    # assemble the extended ceiling: chain interior points are new vertices
    new_pts: list[np.ndarray] = []
    chain_ids: list[int] = [u_a]
    for ci, chain in enumerate(chains):
        last = len(chain) - 1
        for j in range(1, last + 1):
            if ci == 2 and j == last:
                chain_ids.append(u_b)
            else:
                chain_ids.append(m.n_vertices + len(new_pts))
                new_pts.append(chain[j])
    vertices = np.vstack([m.vertices, np.array(new_pts)])
    triangles = list(m.triangles) + [
        (b, chain_ids[j], chain_ids[j + 1]) for j in range(3 * n_at_b)
    ]

    def _key(u, v):
        return (min(u, v), max(u, v))

    label_a = _key(b, u_a) in m.gamma_flat
    label_b = _key(b, u_b) in m.gamma_flat
    flat = set(m.gamma_flat) - {_key(b, u_a), _key(b, u_b)}
    for j in range(3 * n_at_b):
        keep = label_a if j < n_at_b else label_b
        if keep:
            flat.add(_key(chain_ids[j], chain_ids[j + 1]))
    ceiling = PlanarTriMesh(vertices, triangles, gamma_flat=flat)
    if len(interior_chord_check(ceiling)) >= chords_before:  # pragma: no cover
        raise EmbedError("extension failed to reduce the chord count")

    # lift to the parachute
    p = pp.patch
    cvids = list(pp.ceiling_vertex_ids)
    n_old = len(p.vertices)
    cvids += list(range(n_old, n_old + len(new_pts)))
    verts3 = np.vstack([p.vertices, [(q[0], q[1], 1.0) for q in new_pts]])
    tets = [t.vertex_ids for t in p.tets] + [
        (p.center, *(cvids[v] for v in tri)) for tri in triangles[m.n_triangles:]
    ]
    gamma_ess = [
        (p.center, cvids[u], cvids[v]) for u, v in ceiling.gamma_sharp
    ]
    patch = VertexPatch(verts3, tets, center=p.center, gamma_ess=gamma_ess)
    report = validate_patch(patch)
    if not report.ok:  # pragma: no cover - geometry was vetted above
        raise EmbedError(
            "extended parachute failed validation: "
            + "; ".join(c.name for c in report.failures())
        )
    return ParachutePatch(patch, ceiling, cvids)


# ---------------------------------------------------------------------------
# reference tetrahedron patches
# ---------------------------------------------------------------------------

def tetra_patch_from_parachute(
    pp: ParachutePatch, bc_split: str = "nat"
) -> tuple[VertexPatch, list[AffineMap]]:
    """Map a chord-free parachute onto a patch covering the reference tetrahedron.

    The ceiling is embedded onto the reference triangle and carried into the
    plane ``x1 + x2 + x3 = 1`` by ``(y1, y2) -> (1 - y1 - y2, y1, y2)``, so
    the patch fills the reference tetrahedron with its center at the origin.
    ``bc_split`` names the boundary part ("nat" or "ess") routed to the
    hypotenuse, which puts the corresponding faces into the plane
    ``{x1 = 0}``; when one part is empty the split is immaterial and the
    patch comes out with unique boundary conditions.
    """
    chords = interior_chord_check(pp.ceiling)
    if chords:
        raise EmbedError(
            f"ceiling has interior chords {chords}; extend the problematic "
            "vertices first"
        )
    if bc_split not in ("nat", "ess"):
        raise EmbedError(f"bc_split must be 'nat' or 'ess', got {bc_split!r}")
    emb = tutte_embed(pp.ceiling, "flat" if bc_split == "nat" else "sharp")

    p = pp.patch
    cvids = pp.ceiling_vertex_ids
    verts = np.zeros_like(p.vertices)
    for i, g in enumerate(cvids):
        y1, y2 = emb.coords[i]
        verts[g] = (1.0 - y1 - y2, y1, y2)
    tets = [t.vertex_ids for t in p.tets]
    gamma_ess = [
        (p.center, cvids[u], cvids[v]) for u, v in pp.ceiling.gamma_sharp
    ]
    patch = VertexPatch(verts, tets, center=p.center, gamma_ess=gamma_ess)
    report = validate_patch(patch)
    if not report.ok:
        raise EmbedError(
            "reference tetrahedron patch failed validation: "
            + "; ".join(c.name for c in report.failures())
        )
    covered = sum(patch.tet_volume(ti) for ti in range(patch.n_tets))
    if abs(covered - 1.0 / 6.0) > 1e-9:
        raise EmbedError(
            f"patch covers volume {covered:.12f} instead of the reference "
            "tetrahedron"
        )
    if pp.ceiling.gamma_flat and pp.ceiling.gamma_sharp:
        routed = patch.nat_face_ids if bc_split == "nat" else patch.ess_cone_face_ids
        for fi in routed:
            if float(np.max(np.abs(patch.face_points(fi)[:, 0]))) > 1e-9:
                raise EmbedError("routed boundary part left the plane x1 = 0")
    maps = [
        AffineMap.from_points(
            p.vertices[list(p.tets[ti].vertex_ids)],
            patch.vertices[list(p.tets[ti].vertex_ids)],
        )
        for ti in range(p.n_tets)
    ]
    return patch, maps


# ---------------------------------------------------------------------------
# octant extension of a reference tetrahedron patch
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OctantStage:
    """One reflection plane with its boundary case and element pairing."""

    axis: int
    case: str  # "nat": mirror/restrict across the plane; "ess": zero/fold
    pairing: MirrorPairing


@dataclass(frozen=True)
class OctantOperators:
    """Extension/restriction handles across three coordinate reflections.

    ``extend`` maps broken fields on the reference tetrahedron patch to the
    eight-copy interior patch (even reflection where the plane carried
    natural conditions, extension by zero where it carried essential ones);
    ``restrict`` inverts it, so ``restrict(extend(v)) == v``.  Both act on
    curl-type (``N``) and divergence-type (``RT``) fields, picking the
    matching field transform, and commute with the exterior derivative.
    """

    stages: tuple[OctantStage, ...]
    patch: VertexPatch

    def _variant(self, f) -> str:
        kind = f.space.kind
        if kind == "N":
            return "c"
        if kind == "RT":
            return "d"
        raise EmbedError(f"no reflection transform for broken {kind} fields")

    def extend(self, f):
        variant = self._variant(f)
        for st in self.stages:
            flavor = "mirror" if st.case == "nat" else "zero"
            f = apply_symmetrization(SymmetrizationOp(st.axis, flavor, variant), st.pairing, f)
        return f

    def restrict(self, f):
        variant = self._variant(f)
        for st in reversed(self.stages):
            flavor = "restrict" if st.case == "nat" else "fold"
            f = apply_symmetrization(SymmetrizationOp(st.axis, flavor, variant), st.pairing, f)
        return f

    @property
    def extension_norm_bound(self) -> float:
        out = 1.0
        for st in self.stages:
            flavor = "mirror" if st.case == "nat" else "zero"
            out *= SymmetrizationOp(st.axis, flavor, "c").norm_bound
        return out

    @property
    def restriction_norm_bound(self) -> float:
        out = 1.0
        for st in self.stages:
            flavor = "restrict" if st.case == "nat" else "fold"
            out *= SymmetrizationOp(st.axis, flavor, "c").norm_bound
        return out

    @property
    def transfer_factor(self) -> float:
        """Product of the extension and restriction norm bounds."""
        return self.extension_norm_bound * self.restriction_norm_bound


def _plane_case(patch: VertexPatch, axis: int) -> str:
    """Label carried by the boundary faces lying in the plane ``x_axis = 0``."""
    tol = 1e-9 * patch.scale()
    labels = set()
    for fi in patch.boundary_face_ids:
        if float(np.max(np.abs(patch.face_points(fi)[:, axis]))) <= tol:
            labels.add("ess" if fi in patch.gamma_face_ids else "nat")
    if not labels:
        raise EmbedError(f"no boundary faces on the reflection plane x{axis + 1} = 0")
    if len(labels) > 1:
        raise EmbedError(
            f"plane x{axis + 1} = 0 touches both essential and natural faces; "
            "plane symmetrization needs one kind per plane"
        )
    return labels.pop()


def octant_extension(
    tp: VertexPatch, bc: str | None = None
) -> tuple[VertexPatch, OctantOperators]:
    """Reflect a reference tetrahedron patch into an interior patch of 8 copies.

    Successive reflections across ``{x1 = 0}``, ``{x2 = 0}`` and ``{x3 = 0}``
    double the patch three times.  On each plane the boundary faces must
    carry a single condition: natural faces are absorbed by an even (mirror)
    extension, essential ones by extension by zero, with the matching
    restriction or odd fold going the other way.  In the mixed case the
    natural part must lie in ``{x1 = 0}`` so the first reflection removes
    it.  ``bc`` optionally asserts the expected case (``"unique"`` or
    ``"mixed"``).
    """
    mixed = bool(tp.nat_face_ids) and bool(tp.ess_cone_face_ids)
    inferred = "mixed" if mixed else "unique"
    if bc is not None and bc != inferred:
        raise EmbedError(f"patch has {inferred} boundary conditions, not {bc}")
    if mixed:
        tol = 1e-9 * tp.scale()
        for fi in tp.nat_face_ids:
            if float(np.max(np.abs(tp.face_points(fi)[:, 0]))) > tol:
                raise EmbedError(
                    "mixed boundary conditions need the natural part inside "
                    "the first reflection plane x1 = 0"
                )
    cur = tp
    stages = []
    for axis in range(3):
        case = _plane_case(cur, axis)
        pairing = reflect_patch(cur, axis)
        stages.append(OctantStage(axis, case, pairing))
        cur = pairing.full
    if cur.kind != "interior" or cur.n_tets != 8 * tp.n_tets:  # pragma: no cover
        raise EmbedError("octant extension did not close into an interior patch")
    report = validate_patch(cur)
    if not report.ok:
        raise EmbedError(
            "octant extension failed validation: "
            + "; ".join(c.name for c in report.failures())
        )
    return cur, OctantOperators(tuple(stages), cur)


# ---------------------------------------------------------------------------
# stability-ratio transfer between related patches
# ---------------------------------------------------------------------------

def ratio_transfer_test(
    patch_a: VertexPatch,
    patch_b: VertexPatch,
    transfer,
    *,
    kind: str = "hcurl-constrained",
    p: int = 1,
    n_instances: int = 20,
    delta: int = 2,
    seed: int = 0,
    tol: float = 1e-8,
) -> dict:
    """Check that measured stability ratios transfer along a patch relation.

    ``transfer`` is either the per-element affine maps of an equivalence
    (``patch_a`` element ``i`` onto ``patch_b`` element ``i``) or the
    :class:`OctantOperators` of an extension.  For each instance a random
    admissible problem on ``patch_a`` is transported to ``patch_b`` and the
    two stability ratios must satisfy ``ratio_a <= factor * ratio_b + tol``
    with ``factor`` the measured operator-norm product of the transport and
    its one-sided inverse, taken in the space the objective is measured in
    (the curl-conforming one for the constrained kind, the flux space for
    the unconstrained one).  Only the curl-type kinds are supported.
    """
    if kind not in ("hcurl-unconstrained", "hcurl-constrained"):
        raise EmbedError(f"ratio transfer supports the curl-type kinds, not {kind!r}")
    variant = "c" if kind == "hcurl-constrained" else "d"
    if isinstance(transfer, OctantOperators):
        factor = transfer.transfer_factor

        def transport(f):
            return transfer.extend(f)
    else:
        maps = list(transfer)
        if len(maps) != patch_a.n_tets or patch_b.n_tets != patch_a.n_tets:
            raise EmbedError("an equivalence needs one affine map per element")
        factor = transport_norm_factor(maps, variant) * transport_norm_factor(
            [mp.inverse() for mp in maps], variant
        )

        def transport(f):
            variant = "c" if f.space.kind == "N" else "d"
            target = spaces.broken_space(patch_b, f.space.kind, f.space.degree)
            return transport_broken(f, maps, target, variant)

    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_instances):
        prob_a = random_problem(patch_a, kind, p, rng)
        ratio_a = stability_ratio(prob_a, delta)
        data_b = {key: transport(f) for key, f in prob_a.data.items()}
        prob_b = MinProblem(patch_b, kind, p, data_b)
        ratio_b = stability_ratio(prob_b, delta)
        rows.append(
            {
                "instance": i,
                "ratio_a": ratio_a,
                "ratio_b": ratio_b,
                "bound": factor * ratio_b + tol,
                "ok": ratio_a <= factor * ratio_b + tol,
            }
        )
    return {
        "kind": kind,
        "p": p,
        "delta": delta,
        "factor": factor,
        "rows": rows,
        "ok": all(r["ok"] for r in rows),
    }


# ---------------------------------------------------------------------------
# end-to-end pipeline
# ---------------------------------------------------------------------------

@dataclass
class PipelineResult:
    """Artifacts of the boundary-patch flattening pipeline.

    ``parachute_maps`` relate the input patch to the (unextended) parachute;
    ``tetra_maps`` relate the possibly extended parachute to the reference
    tetrahedron patch.  ``chord_history`` records the interior-chord count
    before each extension round (strictly decreasing), ending with zero.
    """

    parachute: ParachutePatch
    parachute_maps: list[AffineMap]
    extended: ParachutePatch
    chord_history: list[int]
    tetra: VertexPatch
    tetra_maps: list[AffineMap]


def boundary_patch_pipeline(p: VertexPatch, bc_split: str = "nat") -> PipelineResult:
    """Run a boundary patch through parachute, chord repair and flattening.

    Extensions pick, at each round, the problematic vertex incident to the
    most chords (lowest id on ties), which resolves hub-like configurations
    in one step.
    """
    pp, maps = parachute_from_boundary_patch(p)
    cur = pp
    history = [len(interior_chord_check(cur.ceiling))]
    while True:
        chords = interior_chord_check(cur.ceiling)
        if not chords:
            break
        counts: dict[int, int] = {}
        for a, b in chords:
            counts[a] = counts.get(a, 0) + 1
            counts[b] = counts.get(b, 0) + 1
        pick = max(sorted(counts), key=lambda v: counts[v])
        cur = extend_problematic_vertex(cur, pick)
        history.append(len(interior_chord_check(cur.ceiling)))
    tetra, tmaps = tetra_patch_from_parachute(cur, bc_split)
    return PipelineResult(pp, maps, cur, history, tetra, tmaps)
