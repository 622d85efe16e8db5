"""Scan persistence and figures: the delimited output and its rendered plot.

The stability scans produce one row per solved instance.  This module owns
the on-disk CSV dialect for those rows and the figure emitted from it, and
nothing else: the plot is rebuilt purely from the CSV, so any file honoring
the column contract renders, whether or not this package produced it.  The
timing column of the in-memory rows is deliberately not persisted — the CSV
must come out byte-identical when a scan is repeated with the same
configuration and seed.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib as mpl
from matplotlib.figure import Figure

#: persisted scan columns, in order (the reproducible subset of a scan row)
CSV_COLUMNS = (
    "patch_id",
    "kind",
    "p",
    "delta",
    "objective_discrete",
    "objective_proxy",
    "ratio",
    "kkt_residual",
    "constraint_residual",
)

#: fixed hash salt so SVG element ids depend only on the drawn content
_SVG_SALT = "patchmin"


class ReportError(Exception):
    """Malformed scan data or an unusable output target."""


def write_scan_csv(rows, path) -> int:
    """Write scan rows to ``path`` in the persistent dialect.

    Extra keys (such as ``wall_ms``) are dropped; missing ones raise.
    Returns the number of data rows written.
    """
    try:
        slim = [{c: row[c] for c in CSV_COLUMNS} for row in rows]
    except KeyError as exc:
        raise ReportError(f"scan row is missing the column {exc.args[0]!r}") from exc
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(slim)
    return len(slim)


def read_scan_csv(path) -> list[dict]:
    """Parse a scan CSV back into typed rows.

    Only ``patch_id``, ``kind``, ``p`` and ``ratio`` are required — the plot
    consumes nothing else — and unknown columns ride along untouched.  An
    empty or header-only file parses to no rows.
    """
    path = Path(path)
    if not path.exists():
        raise ReportError(f"no scan file at {path}")
    rows: list[dict] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return rows
        missing = {"patch_id", "kind", "p", "ratio"} - set(reader.fieldnames)
        if missing:
            raise ReportError(
                f"scan file {path} lacks required columns {sorted(missing)}"
            )
        for ln, raw in enumerate(reader, start=2):
            try:
                row = dict(raw)
                row["p"] = int(raw["p"])
                row["ratio"] = float(raw["ratio"])
            except (TypeError, ValueError) as exc:
                raise ReportError(f"unreadable scan row at line {ln}: {exc}") from exc
            if not math.isfinite(row["ratio"]):
                raise ReportError(f"non-finite ratio at line {ln}")
            rows.append(row)
    return rows


def scan_series(rows) -> dict[tuple[str, str], list[tuple[int, float]]]:
    """Group rows into plottable series: worst ratio per degree.

    Keys are ``(patch_id, kind)``; values are ``(p, max ratio over seeds)``
    sorted by degree.
    """
    worst: dict[tuple[str, str], dict[int, float]] = {}
    for row in rows:
        key = (str(row["patch_id"]), str(row["kind"]))
        per_p = worst.setdefault(key, {})
        per_p[row["p"]] = max(per_p.get(row["p"], -math.inf), row["ratio"])
    return {
        key: sorted(per_p.items()) for key, per_p in sorted(worst.items())
    }


def emit_plot(scan_csv, out_svg, title: str | None = None) -> dict:
    """Render the ratio-versus-degree figure for a scan CSV.

    One line per ``(patch, kind)`` series, markers at the measured degrees,
    worst ratio over the seeds at each degree.  An empty scan renders the
    bare axes.  The output is byte-identical across runs for identical
    input: ids are salted deterministically and no timestamp is embedded.
    Returns a small summary (row and series counts).
    """
    rows = read_scan_csv(scan_csv)
    series = scan_series(rows)

    fig = Figure(figsize=(6.4, 4.2))
    ax = fig.add_subplot(111)
    single_kind = len({k for _, k in series}) <= 1
    for (pid, kind), pts in series.items():
        ps = [p for p, _ in pts]
        ratios = [r for _, r in pts]
        label = pid if single_kind else f"{pid} ({kind})"
        ax.plot(ps, ratios, marker="o", linewidth=1.2, markersize=4, label=label)
    ax.set_xlabel("polynomial degree $p$")
    ax.set_ylabel("stability ratio (discrete / degree-boosted)")
    ax.set_title(title or "patch stability ratios")
    ax.grid(True, alpha=0.3)
    if series:
        ax.legend(fontsize=8, loc="best")
        ax.set_ylim(bottom=0.0)
    else:
        ax.text(0.5, 0.5, "no scan rows", ha="center", va="center",
                transform=ax.transAxes, color="0.5")
    fig.tight_layout()
    with mpl.rc_context({"svg.hashsalt": _SVG_SALT}):
        fig.savefig(out_svg, format="svg", metadata={"Date": None})
    return {"rows": len(rows), "series": len(series), "output": str(out_svg)}


def render_embedding(emb, out_svg, show_source: bool = False) -> None:
    """Draw a planar embedding (or its source mesh) to an SVG file.

    Boundary edges are drawn heavy with the flat arc highlighted, interior
    edges light; the same determinism conventions as :func:`emit_plot` apply.
    """
    mesh = emb.mesh
    coords = mesh.vertices if show_source else emb.coords
    fig = Figure(figsize=(4.8, 4.8))
    ax = fig.add_subplot(111)
    for a, b in sorted(mesh.interior_edges):
        ax.plot(*coords[[a, b]].T, color="0.65", linewidth=0.8)
    for a, b in sorted(mesh.boundary_edges):
        flat = (a, b) in mesh.gamma_flat
        ax.plot(*coords[[a, b]].T, color="tab:orange" if flat else "black",
                linewidth=1.6)
    ax.set_aspect("equal")
    ax.set_axis_off()
    fig.tight_layout()
    with mpl.rc_context({"svg.hashsalt": _SVG_SALT}):
        fig.savefig(out_svg, format="svg", metadata={"Date": None})
