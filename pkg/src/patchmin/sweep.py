"""Sequential element-by-element construction of a constrained minimizer.

Given a divergence-free flux with zero boundary flux and a broken target
field, the sweep visits the elements of an interior vertex patch in a
loop-compatible order and solves one small constrained minimization per
element: the curl is prescribed, the trace on the patch boundary is zero,
and traces on faces shared with already-visited elements are copied from
those elements.  The result is a curl-conforming field with the prescribed
curl whose distance to the target is controlled by the unconstrained
patch-wide minimum.

Before each solve the element data are certified compatible; the
certificate includes an explicit polynomial lifting of the face traces,
assembled by "folding" the earlier fields onto the current element with
sign-weighted covariant transports over a colored refinement of the loop
being closed.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import minimize, spaces
from .mesh import (
    ColoredRefinement,
    MeshError,
    PatchEnumeration,
    VertexPatch,
    enumerate_patch,
    three_color_refine,
    two_color_refine,
)
from .minimize import CompatibleData, MinimizeError, check_compatible_data, solve_element_min
from .piola import AffineMap, piola_c
from .spaces import BrokenSpace, FaceGeom, FieldCoeffs, broken_space

logger = logging.getLogger(__name__)

COMPAT_TOL = 1e-10
TRACE_TOL = 1e-9
DATA_TOL = 1e-8


class SweepError(Exception):
    """A sweep step received incompatible data or lost track of its order."""


@dataclass
class SweepState:
    """Progress of a sweep: fixed element fields, per-step data and checks.

    ``xi`` maps element ids to their already-fixed fields, ``r_data`` and
    ``lifts`` are indexed by enumeration position, and ``log`` collects the
    per-step records emitted by :func:`sweep_construct`.
    """

    patch: VertexPatch
    p: int
    enumeration: PatchEnumeration
    bvar: BrokenSpace
    brt: BrokenSpace
    j_field: FieldCoeffs
    chi_field: FieldCoeffs
    xi: dict[int, FieldCoeffs] = field(default_factory=dict)
    r_data: list[dict[int, np.ndarray] | None] = field(default_factory=list)
    lifts: list[FieldCoeffs | None] = field(default_factory=list)
    lift_checks: list[dict | None] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.enumeration.order)

    def element_of_step(self, step: int) -> int:
        if not 0 <= step < self.n_steps:
            raise SweepError(f"no step {step} in a {self.n_steps}-element sweep")
        return self.enumeration.order[step]


def start_sweep(
    patch: VertexPatch, j_field: FieldCoeffs, chi_field: FieldCoeffs, p: int
) -> SweepState:
    """Validate the data and set up the sweep over an interior patch.

    The flux must be a divergence-free element of the broken face-flux space
    that is flux-conforming with zero normal trace on the whole patch
    boundary; the target may be any broken curl-type field of the same
    degree.
    """
    if patch.kind != "interior":
        raise SweepError("the sweep runs on interior patches")
    bvar = broken_space(patch, "N", p)
    brt = broken_space(patch, "RT", p)
    if chi_field.space is not bvar:
        raise SweepError("the target must live in the broken curl-type space")
    if j_field.space is not brt:
        raise SweepError("the flux must live in the broken face-flux space")
    scale = max(j_field.norm(), 1.0)
    bp = broken_space(patch, "P", p)
    div = minimize.broken_diff_coords(brt, bp) @ j_field.coeffs
    if np.linalg.norm(div) > DATA_TOL * scale:
        raise SweepError("the prescribed flux is not divergence-free")
    rows = spaces.constraint_rows(brt, "div", patch.boundary_face_ids)
    if np.linalg.norm(rows @ j_field.coeffs) > DATA_TOL * scale:
        raise SweepError(
            "the prescribed flux must be flux-conforming with zero boundary flux"
        )
    enum = enumerate_patch(patch)
    n = len(enum.order)
    return SweepState(
        patch, p, enum, bvar, brt, j_field, chi_field,
        r_data=[None] * n, lifts=[None] * n, lift_checks=[None] * n,
    )


def boundary_datum(state: SweepState, step: int) -> dict[int, np.ndarray]:
    """Assemble the trace data of one step: zero outside, copied on shared faces.

    Returns face-frame coefficients keyed by face id, covering the element's
    patch-boundary faces (zero) and the faces shared with earlier elements
    (tangential trace of the neighbor's fixed field).
    """
    ti = state.element_of_step(step)
    es = state.bvar.spaces[ti]
    nfq = len(spaces.tri_indices(es.frame_degree))
    r: dict[int, np.ndarray] = {}
    for fi in state.enumeration.ext[step]:
        r[fi] = np.zeros((3, nfq))
    for fi in state.enumeration.sharp[step]:
        (other,) = [t for t in state.patch.faces[fi].tets if t != ti]
        if other not in state.xi:
            raise SweepError(
                f"step {step} needs the field on element {other}, not fixed yet"
            )
        face = FaceGeom.from_patch(state.patch, fi)
        r[fi] = spaces.tangential_trace(state.xi[other], face)
    state.r_data[step] = r
    return r


def _face_fixing_map(patch: VertexPatch, fi: int, src_ti: int, dst_ti: int) -> AffineMap:
    """The affine map between two tets sharing face ``fi`` that fixes the face."""
    ids = patch.faces[fi].ids
    src = patch.tets[src_ti].vertex_ids
    dst = patch.tets[dst_ti].vertex_ids
    (src_opp,) = [v for v in src if v not in ids]
    (dst_opp,) = [v for v in dst if v not in ids]
    pts = patch.vertices
    src_pts = np.vstack([pts[list(ids)], pts[src_opp]])
    dst_pts = np.vstack([pts[list(ids)], pts[dst_opp]])
    return AffineMap.from_points(src_pts, dst_pts)


def _whitened_trace(f: FieldCoeffs, face: FaceGeom) -> np.ndarray:
    q = f.space.frame_degree
    return spaces.whiten_face_vector(
        face, q, spaces.tangential_trace(f, face).reshape(-1)
    )


def _fold_correspondence(ref: ColoredRefinement, ci: int) -> dict[int, int]:
    """Vertex map of refinement cell ``ci`` onto the base cell, matching colors."""
    base = ref.cells[ref.base_cell]
    shared = 2 if ref.kind == "edge" else 1
    by_color = {ref.colors[v]: v for v in base[shared:]}
    corr = {v: v for v in ref.cells[ci][:shared]}
    for v in ref.cells[ci][shared:]:
        corr[v] = by_color[ref.colors[v]]
    return corr


def _folded_sum(state: SweepState, step: int, ref: ColoredRefinement) -> FieldCoeffs:
    """Signed sum of color-folded transports of the earlier fields.

    Every cell of the refinement except the base one carries the restriction
    of an already-fixed field; its transport onto the base element enters
    with a minus sign weighted by the fold orientation.  Interior faces of
    the refinement are mapped onto the shared faces twice with opposite
    signs, so only the direct neighbors' traces survive in the sum; the
    pairwise cancellation residuals are recorded per image face.
    """
    ti = state.element_of_step(step)
    es = state.bvar.spaces[ti]
    acc = np.zeros(es.dim)
    terms: list[FieldCoeffs | None] = []
    for ci in range(ref.n_cells):
        if ci == ref.base_cell:
            terms.append(None)
            continue
        parent = ref.parent[ci]
        if parent not in state.xi:
            raise SweepError(
                f"step {step} folds over element {parent}, not fixed yet"
            )
        corr = _fold_correspondence(ref, ci)
        cell_ids = ref.cells[ci]
        m = AffineMap.from_points(
            ref.vertices[list(cell_ids)],
            ref.vertices[[corr[v] for v in cell_ids]],
        )
        if m.eps != ref.signs[ci]:
            raise SweepError("fold orientation disagrees with the refinement")
        term = piola_c(m, state.xi[parent], target=es)
        terms.append(term)
        acc -= ref.signs[ci] * term.coeffs

    # pairwise cancellation on interior refinement faces through the shared
    # entity (each is mapped twice, with opposite signs)
    owners: dict[tuple[int, ...], list[int]] = {}
    shared = 2 if ref.kind == "edge" else 1
    for ci, cell in enumerate(ref.cells):
        held = cell[:shared]
        for pick in itertools.combinations(cell[shared:], 3 - shared):
            owners.setdefault(tuple(sorted((*held, *pick))), []).append(ci)
    cancel: dict[tuple[int, ...], float] = {}
    for ids, cis in owners.items():
        if len(cis) != 2 or ref.base_cell in cis:
            continue
        ca, cb = cis
        corr = _fold_correspondence(ref, ca)
        image = tuple(corr[v] for v in ids)
        slots = tuple(es.cell.vertex_ids.index(v) for v in image)
        face, _ = spaces.cell_face(es.cell, slots)
        resid = np.linalg.norm(
            ref.signs[ca] * _whitened_trace(terms[ca], face)
            + ref.signs[cb] * _whitened_trace(terms[cb], face)
        )
        cancel[ids] = float(resid)
    state.lift_checks[step] = {
        "cancellation": cancel,
        "kappa_factor": ref.kappa_factor,
        "n_cells": ref.n_cells,
    }
    return FieldCoeffs(es, acc)


def folded_lift(state: SweepState, step: int) -> FieldCoeffs:
    """A polynomial field on the step's element carrying the step's traces.

    The number of faces shared with earlier elements selects the
    construction: none gives zero, one transports the neighbor's field
    through the face-fixing affine map, two folds the loop around the shared
    edge over its two-colored refinement, and three (the final element)
    folds the whole patch over a three-colored refinement.  The resulting
    traces are verified against the step's data on every constrained face.
    """
    ti = state.element_of_step(step)
    es = state.bvar.spaces[ti]
    r = state.r_data[step]
    if r is None:
        r = boundary_datum(state, step)
    sharp = state.enumeration.sharp[step]

    if len(sharp) == 0:
        lift = FieldCoeffs(es, np.zeros(es.dim))
    elif len(sharp) == 1:
        fi = sharp[0]
        (other,) = [t for t in state.patch.faces[fi].tets if t != ti]
        if other not in state.xi:
            raise SweepError(f"step {step} lifts from element {other}, not fixed yet")
        m = _face_fixing_map(state.patch, fi, other, ti)
        lift = piola_c(m, state.xi[other], target=es)
    elif len(sharp) == 2:
        fa, fb = sharp
        edge = tuple(sorted(
            set(state.patch.faces[fa].ids) & set(state.patch.faces[fb].ids)
        ))
        if len(edge) != 2:
            raise SweepError("the two shared faces have no common edge")
        try:
            ref = two_color_refine(state.patch, ti, edge)
        except MeshError as exc:
            raise SweepError(f"step {step}: {exc}") from exc
        lift = _folded_sum(state, step, ref)
    elif len(sharp) == 3:
        try:
            ref = three_color_refine(state.patch, ti)
        except MeshError as exc:
            raise SweepError(f"step {step}: {exc}") from exc
        lift = _folded_sum(state, step, ref)
    else:
        raise SweepError(f"step {step} shares {len(sharp)} faces with earlier elements")

    scale = max([lift.norm(), 1.0] + [float(np.linalg.norm(rf)) for rf in r.values()])
    worst = 0.0
    for fi, rf in r.items():
        face = FaceGeom.from_patch(state.patch, fi)
        got = _whitened_trace(lift, face)
        want = spaces.whiten_face_vector(face, es.frame_degree, rf.reshape(-1))
        worst = max(worst, float(np.linalg.norm(got - want)))
    if worst > TRACE_TOL * scale:
        raise SweepError(
            f"step {step}: folded lift misses the trace data by {worst:.3e} "
            "(ordering or coloring bug)"
        )
    state.lifts[step] = lift
    return lift


def sweep_step(state: SweepState, step: int, with_lift: bool = True,
               compat_tol: float = COMPAT_TOL) -> minimize.MinResult:
    """Run one step: assemble data, certify it, minimize on the element."""
    ti = state.element_of_step(step)
    if ti in state.xi:
        raise SweepError(f"element {ti} was already fixed")
    es = state.bvar.spaces[ti]
    r = state.r_data[step]
    if r is None:
        r = boundary_datum(state, step)
    if with_lift:
        folded_lift(state, step)

    face_ids = tuple(state.enumeration.ext[step]) + tuple(state.enumeration.sharp[step])
    faces = tuple(FaceGeom.from_patch(state.patch, fi) for fi in face_ids)
    j_el = FieldCoeffs(state.brt.spaces[ti], state.brt.block(ti, state.j_field.coeffs))
    d = CompatibleData(es, faces, j_el, tuple(r[fi] for fi in face_ids))
    rep = check_compatible_data(d)
    if not rep.ok(compat_tol):
        raise SweepError(
            f"step {step} data failed the compatibility check: "
            f"div {rep.div_residual:.3e}, lift {rep.lift_residual:.3e}, "
            f"curl {max(rep.curl_residuals, default=0.0):.3e}"
        )
    chi_el = FieldCoeffs(es, state.bvar.block(ti, state.chi_field.coeffs))
    try:
        res = solve_element_min(d, chi_el)
    except MinimizeError as exc:
        raise SweepError(f"step {step} minimization failed: {exc}") from exc
    state.xi[ti] = res.minimizer
    cum = math.sqrt(
        sum(e["objective"] ** 2 for e in state.log) + res.objective**2
    )
    state.log.append({
        "j": step + 1,
        "element": int(ti),
        "faces_sharp": [int(fi) for fi in state.enumeration.sharp[step]],
        "compat_residuals": {
            "div": rep.div_residual,
            "lift": rep.lift_residual,
            "curl": list(rep.curl_residuals),
        },
        "objective": res.objective,
        "cumulative_norm": cum,
    })
    logger.debug(
        "sweep step %d (element %d): objective %.3e, cumulative %.3e",
        step + 1, ti, res.objective, cum,
    )
    return res


def sweep_construct(
    patch: VertexPatch, j_field: FieldCoeffs, chi_field: FieldCoeffs, p: int,
    with_lifts: bool = True,
) -> tuple[FieldCoeffs, list[dict]]:
    """Build the conforming constrained field by the full element sweep.

    Returns the assembled broken-coordinate field (conforming up to solver
    tolerance, with the prescribed curl) together with the per-step log.
    """
    state = start_sweep(patch, j_field, chi_field, p)
    for step in range(state.n_steps):
        sweep_step(state, step, with_lift=with_lifts)
    coeffs = state.bvar.zero()
    for ti, f in state.xi.items():
        coeffs[state.bvar.offsets[ti] : state.bvar.offsets[ti + 1]] = f.coeffs
    return FieldCoeffs(state.bvar, coeffs), state.log


@dataclass
class SweepReport:
    """Conformity, curl and distance diagnostics of a swept field."""

    face_jumps: dict[int, float]
    gamma_traces: dict[int, float]
    curl_residuals: tuple[float, ...]
    scale: float
    element_objectives: tuple[float, ...] | None = None
    total_objective: float | None = None
    proxy_objective: float | None = None
    ratio: float | None = None

    @property
    def max_jump(self) -> float:
        return max([*self.face_jumps.values(), *self.gamma_traces.values()], default=0.0)

    @property
    def max_curl_residual(self) -> float:
        return max(self.curl_residuals, default=0.0)


def verify_sweep(
    xi: FieldCoeffs, j_field: FieldCoeffs, patch: VertexPatch,
    chi_field: FieldCoeffs | None = None, delta: int = minimize.DEFAULT_DELTA,
) -> SweepReport:
    """Measure how well a swept field meets its contract.

    Reports per-face tangential jump norms, per-boundary-face trace norms,
    the per-element curl mismatch, and — when the target is supplied — the
    element-wise distances to it plus the ratio against the degree-boosted
    reference minimum.
    """
    bvar = xi.space
    if not isinstance(bvar, BrokenSpace) or bvar.kind != "N":
        raise SweepError("verify_sweep expects a broken curl-type field")
    p = bvar.degree
    brt = broken_space(patch, "RT", p)
    if j_field.space is not brt:
        raise SweepError("the flux must live in the broken face-flux space")

    jumps: dict[int, float] = {}
    for fi in sorted(patch.interior_face_ids):
        ta, tb = patch.faces[fi].tets
        face = FaceGeom.from_patch(patch, fi)
        ea = FieldCoeffs(bvar.spaces[ta], bvar.block(ta, xi.coeffs))
        eb = FieldCoeffs(bvar.spaces[tb], bvar.block(tb, xi.coeffs))
        jumps[fi] = float(np.linalg.norm(_whitened_trace(ea, face) - _whitened_trace(eb, face)))
    gamma: dict[int, float] = {}
    for fi in sorted(patch.gamma_face_ids):
        (ti,) = patch.faces[fi].tets
        face = FaceGeom.from_patch(patch, fi)
        el = FieldCoeffs(bvar.spaces[ti], bvar.block(ti, xi.coeffs))
        gamma[fi] = float(np.linalg.norm(_whitened_trace(el, face)))

    curls = []
    for ti in range(patch.n_tets):
        dm = spaces.diff_matrix(bvar.spaces[ti], brt.spaces[ti])
        curls.append(float(np.linalg.norm(
            dm @ bvar.block(ti, xi.coeffs) - brt.block(ti, j_field.coeffs)
        )))

    scale = max(xi.norm(), j_field.norm(), 1.0)
    report = SweepReport(jumps, gamma, tuple(curls), scale)
    if chi_field is not None:
        if chi_field.space is not bvar:
            raise SweepError("the target must live in the same broken space")
        diff = xi.coeffs - chi_field.coeffs
        report.element_objectives = tuple(
            float(np.linalg.norm(bvar.block(ti, diff))) for ti in range(patch.n_tets)
        )
        report.total_objective = float(np.linalg.norm(diff))
        problem = minimize.MinProblem(
            patch, "hcurl-constrained", p, {"chi": chi_field, "j": j_field}
        )
        proxy = minimize.reference_min(problem, delta)
        report.proxy_objective = proxy.objective
        report.ratio = minimize.objective_ratio(
            report.total_objective, proxy.objective, scale
        )
    return report
