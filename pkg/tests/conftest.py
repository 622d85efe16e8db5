import math

import numpy as np
import pytest

from patchmin import mesh


@pytest.fixture(scope="session")
def bipyramid8():
    """Symmetric interior patch with 8 elements."""
    return mesh.generate_interior_patch(n_ring=4, layers=2)


@pytest.fixture(scope="session")
def bipyramid12():
    return mesh.generate_interior_patch(n_ring=6, layers=2)


@pytest.fixture(scope="session")
def jittered10():
    """Jittered interior patch with 10 elements (odd ring, for parity paths)."""
    return mesh.generate_interior_patch(n_ring=5, layers=2, jitter=0.2, seed=7)


@pytest.fixture(scope="session")
def fan_patches():
    return {
        "dirichlet-fan": mesh.generate_boundary_patch("dirichlet-fan", 4),
        "mixed-fan": mesh.generate_boundary_patch("mixed-fan", 4),
        "full-natural": mesh.generate_boundary_patch("full-natural", 4),
    }


def rng_for(name: str, seed: int) -> np.random.Generator:
    return np.random.default_rng(abs(hash((name, seed))) % 2**63)


def two_hub_disk():
    """A 9-vertex disk mesh whose six interior edges are all chords.

    Every vertex lies on the boundary, so deleting the two hubs ``0`` and
    ``1`` disconnects the graph: the canonical counterexample to
    triconnectivity of disk meshes.
    """
    from patchmin import embed

    def at(base, r, deg):
        th = math.radians(deg)
        return base + r * np.array([math.cos(th), math.sin(th)])

    a = np.array([0.0, 1.0])
    b = np.array([0.2, 0.0])
    verts = [
        a,                    # 0
        b,                    # 1
        at(a, 0.7, 140.0),    # 2
        at(a, 0.9, 200.0),    # 3
        at(b, 1.0, -160.0),   # 4
        at(a, 0.5, 80.0),     # 5
        at(a, 0.7, -10.0),    # 6
        at(b, 0.9, 10.0),     # 7
        at(b, 0.8, -60.0),    # 8
    ]
    tris = [
        (0, 2, 3),
        (0, 3, 1),
        (1, 3, 4),
        (0, 5, 6),
        (0, 6, 1),
        (1, 6, 7),
        (1, 7, 8),
    ]
    return embed.PlanarTriMesh(np.array(verts), tris)


def random_disk_mesh(rng, with_arcs: bool = False, max_tries: int = 60):
    """A random chord-free triangulated disk (boundary on a circle).

    Interior points are re-drawn until the Delaunay triangulation has no
    interior edge between boundary vertices.  With ``with_arcs`` a random
    contiguous boundary run becomes the flat arc.
    """
    from scipy.spatial import Delaunay

    from patchmin import embed

    for _ in range(max_tries):
        nb = int(rng.integers(5, 9))
        ni = int(rng.integers(3, 9))
        ang = np.sort(rng.uniform(0.0, 2.0 * np.pi, nb))
        if float(np.min(np.diff(ang, append=ang[0] + 2.0 * np.pi))) < 0.3:
            continue
        ring = np.c_[np.cos(ang), np.sin(ang)]
        inner = rng.uniform(-0.55, 0.55, (ni, 2))
        pts = np.vstack([ring, inner])
        tri = Delaunay(pts)
        try:
            m = embed.PlanarTriMesh(pts, tri.simplices)
        except embed.EmbedError:
            continue
        if embed.interior_chord_check(m):
            continue
        if min(abs(embed._tri_area(pts[list(t)])) for t in m.triangles) < 2e-3:
            continue
        if not with_arcs:
            return m
        edges = m.cycle_edges()
        # leave both arcs at least two edges so either one can span two
        # sides of the reference triangle
        k = int(rng.integers(2, len(edges) - 1))
        s = int(rng.integers(0, len(edges)))
        flat = [edges[(s + j) % len(edges)] for j in range(k)]
        return embed.PlanarTriMesh(m.vertices, m.triangles, gamma_flat=flat)
    raise RuntimeError("no chord-free disk found")
