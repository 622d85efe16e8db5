"""Command-line laboratory around the patch solvers.

Subcommands generate and validate patches, tabulate space dimensions, run
single minimizations and sweeps, orchestrate stability-ratio scans, embed
planar meshes, symmetrize patches across coordinate planes, and render scan
CSVs to figures.  Outputs are deterministic for a given seed.  Exit codes:
0 success, 1 a patch or mesh failed validation, 2 a solver refused or failed,
64 usage errors (unknown flags, malformed JSON, impossible configuration).
"""

from __future__ import annotations

import hashlib
import json
import platform
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import click
import matplotlib
import numpy as np

from . import __version__, embed, mesh, minimize, report, spaces
from . import sweep as sweep_lab
from .piola import PiolaError, reflect_patch

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_SOLVER = 2
EXIT_USAGE = 64


class ConfigError(Exception):
    """A scan configuration that cannot be run as requested."""


# ---------------------------------------------------------------------------
# configuration and run records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanConfig:
    """Everything a stability scan needs, hashable for reproduction.

    ``patches`` holds ``("path", file)`` or ``("gen", canonical-json)``
    entries; the remaining fields mirror the scan flags.  Construction
    enforces that every boosted degree stays under the degree cap.
    """

    patches: tuple[tuple[str, str], ...]
    degrees: tuple[int, ...]
    delta: int
    kinds: tuple[str, ...]
    seeds: int
    base_seed: int = 0
    output: str = "scan.csv"

    def __post_init__(self) -> None:
        if not self.patches:
            raise ConfigError("a scan needs at least one patch (--patch or --gen)")
        if not self.degrees or min(self.degrees) < 0:
            raise ConfigError("degrees must be a nonempty set of nonnegative integers")
        if self.delta < 1:
            raise ConfigError("the degree boost delta must be at least 1")
        cap = minimize.degree_cap()
        worst = max(self.degrees) + self.delta
        if worst > cap:
            raise ConfigError(
                f"p + delta reaches {worst}, above the degree cap {cap} "
                "(raise PATCHMIN_DEGREE_CAP to allow it)"
            )
        for kind in self.kinds:
            if kind not in minimize.KINDS:
                raise ConfigError(f"unknown problem kind {kind!r}")
        if self.seeds < 1:
            raise ConfigError("at least one seed per configuration is required")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunRecord:
    """Provenance of one scan run: enough to reproduce the CSV byte for byte.

    ``instances`` repeats the persisted per-instance summaries; ``wall_s``
    and ``environment`` document the run without affecting reproducibility.
    """

    config: dict
    config_hash: str
    version: str
    environment: str
    instances: list[dict]
    wall_s: float

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "version": self.version,
            "environment": self.environment,
            "instances": self.instances,
            "wall_s": self.wall_s,
        }


def environment_note() -> str:
    return (
        f"python {platform.python_version()}; numpy {np.__version__}; "
        f"matplotlib {matplotlib.__version__}; "
        f"{platform.system().lower()}-{platform.machine()}"
    )


# ---------------------------------------------------------------------------
# small shared helpers
# ---------------------------------------------------------------------------

def parse_degrees(text: str) -> tuple[int, ...]:
    """Parse a degree set: ``"2"``, ``"0..4"`` or ``"0,2,4"``."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..")
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError(f"empty degree range {text!r}")
            return tuple(range(lo, hi + 1))
        return tuple(sorted({int(part) for part in text.split(",")}))
    except ValueError as exc:
        raise ValueError(f"cannot parse degrees from {text!r}: {exc}") from exc


class DegreesType(click.ParamType):
    name = "degrees"

    def convert(self, value, param, ctx):
        if isinstance(value, tuple):
            return value
        try:
            return parse_degrees(value)
        except ValueError as exc:
            self.fail(str(exc), param, ctx)


DEGREES = DegreesType()


def _read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise click.UsageError(f"not valid JSON: {path}: {exc}") from exc


def _load_patch(path) -> mesh.VertexPatch:
    return mesh.VertexPatch.from_dict(_read_json(path))


def _parse_gen_spec(text: str) -> dict:
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"malformed generator JSON {text!r}: {exc}") from exc
    if not isinstance(spec, dict) or "kind" not in spec:
        raise click.UsageError("a generator spec is an object with a 'kind' key")
    allowed = {"kind", "n_ring", "layers", "n", "jitter", "seed"}
    unknown = set(spec) - allowed
    if unknown:
        raise click.UsageError(f"unknown generator keys {sorted(unknown)}")
    return spec


def _generate_patch(spec: dict) -> mesh.VertexPatch:
    kind = spec["kind"]
    if kind == "interior":
        return mesh.generate_interior_patch(
            int(spec.get("n_ring", 4)), int(spec.get("layers", 2)),
            float(spec.get("jitter", 0.0)), int(spec.get("seed", 0)),
        )
    if kind in mesh.BOUNDARY_KINDS:
        return mesh.generate_boundary_patch(
            kind, int(spec.get("n", 4)),
            float(spec.get("jitter", 0.0)), int(spec.get("seed", 0)),
        )
    raise click.UsageError(f"unknown generator kind {kind!r}")


def _resolve_patches(config: ScanConfig) -> list[tuple[str, mesh.VertexPatch]]:
    out = []
    for i, (how, what) in enumerate(config.patches):
        if how == "path":
            out.append((Path(what).stem, _load_patch(what)))
        else:
            spec = json.loads(what)
            out.append((f"{spec['kind']}-{i}", _generate_patch(spec)))
    return out


def _dump_json(data: dict, path, echo_instead: bool = False) -> None:
    text = json.dumps(data, indent=2, sort_keys=True)
    if path is None or echo_instead:
        click.echo(text)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# command tree
# ---------------------------------------------------------------------------

@click.group(help="Patch minimization laboratory.")
@click.version_option(version=__version__, prog_name="patchmin")
def cli() -> None:
    pass


@cli.group("patch", help="Generate and validate vertex patches.")
def patch_group() -> None:
    pass


@patch_group.command("gen", help="Generate a patch and write it as JSON.")
@click.option("--interior", is_flag=True, help="Interior patch (sphere cone).")
@click.option("--boundary", "boundary_kind", type=click.Choice(mesh.BOUNDARY_KINDS),
              default=None, help="Boundary patch of the given fan kind.")
@click.option("--n-ring", type=int, default=4, show_default=True,
              help="Vertices per ring (interior).")
@click.option("--layers", type=int, default=2, show_default=True,
              help="Sphere layers (interior).")
@click.option("--n", type=int, default=4, show_default=True,
              help="Fan size (boundary).")
@click.option("--jitter", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
def patch_gen(interior, boundary_kind, n_ring, layers, n, jitter, seed, output):
    if interior == (boundary_kind is not None):
        raise click.UsageError("choose exactly one of --interior or --boundary KIND")
    if interior:
        patch = mesh.generate_interior_patch(n_ring, layers, jitter, seed)
    else:
        patch = mesh.generate_boundary_patch(boundary_kind, n, jitter, seed)
    mesh.save_patch(patch, output)
    click.echo(f"wrote {patch.kind} patch ({patch.n_tets} elements) to {output}")


@patch_group.command("validate", help="Run every validation check on a patch file.")
@click.argument("patch_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def patch_validate(patch_file, as_json):
    rep = mesh.validate_patch(_load_patch(patch_file))
    if as_json:
        click.echo(json.dumps(
            {
                "ok": rep.ok,
                "checks": [
                    {"name": c.name, "passed": c.passed, "detail": c.detail}
                    for c in rep.checks
                ],
            },
            indent=2, sort_keys=True,
        ))
    else:
        click.echo(rep.summary())
    return EXIT_OK if rep.ok else EXIT_INVALID


@cli.group("spaces", help="Inspect the discrete spaces living on a patch.")
def spaces_group() -> None:
    pass


@spaces_group.command("table", help="Dimension table of the patch spaces as CSV.")
@click.option("--patch", "patch_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--p", "degrees", type=DEGREES, default="0..2", show_default=True)
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None,
              help="CSV file (stdout when omitted).")
def spaces_table(patch_file, degrees, output):
    patch = _load_patch(patch_file)
    rows = spaces.dimension_rows(patch, degrees, patch_id=Path(patch_file).stem)
    header = list(rows[0].keys())
    lines = [",".join(header)]
    lines += [",".join(str(row[c]) for c in header) for row in rows]
    text = "\n".join(lines) + "\n"
    if output is None:
        click.echo(text, nl=False)
    else:
        Path(output).write_text(text, encoding="utf-8")
        click.echo(f"wrote {len(rows)} rows to {output}")


@cli.command("minimize", help="Solve one random-data minimization on a patch.")
@click.option("--patch", "patch_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", type=click.Choice(minimize.KINDS), required=True)
@click.option("--p", "degree", type=int, default=1, show_default=True)
@click.option("--delta", type=int, default=None,
              help="Also measure the stability ratio with this degree boost.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None)
def minimize_cmd(patch_file, kind, degree, delta, seed, output):
    patch = _load_patch(patch_file)
    rng = np.random.default_rng(seed)
    problem = minimize.random_problem(patch, kind, degree, rng)
    res = minimize.solve_patch(problem)
    out = {
        "patch": Path(patch_file).stem,
        "kind": kind,
        "p": degree,
        "seed": seed,
        "objective": res.objective,
        "kkt_residual": res.kkt_residual,
        "constraint_residual": res.constraint_residual,
        "dim_feasible": res.dim_feasible,
    }
    if delta is not None:
        out["delta"] = delta
        out["ratio"] = minimize.stability_ratio(problem, delta)
    _dump_json(out, output)
    if output is not None:
        click.echo(f"objective {res.objective:.6e} -> {output}")


@cli.command("sweep", help="Run the element-by-element construction on a patch.")
@click.option("--patch", "patch_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--p", "degree", type=int, default=1, show_default=True)
@click.option("--delta", type=int, default=minimize.DEFAULT_DELTA, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None)
def sweep_cmd(patch_file, degree, delta, seed, output):
    patch = _load_patch(patch_file)
    rng = np.random.default_rng(seed)
    problem = minimize.random_problem(patch, "hcurl-constrained", degree, rng)
    xi, log = sweep_lab.sweep_construct(
        patch, problem.data["j"], problem.data["chi"], degree
    )
    rep = sweep_lab.verify_sweep(
        xi, problem.data["j"], patch, problem.data["chi"], delta
    )
    out = {
        "patch": Path(patch_file).stem,
        "p": degree,
        "seed": seed,
        "steps": len(log),
        "max_jump": rep.max_jump,
        "max_curl_residual": rep.max_curl_residual,
        "total_objective": rep.total_objective,
        "proxy_objective": rep.proxy_objective,
        "ratio": rep.ratio,
        "scale": rep.scale,
    }
    _dump_json(out, output)
    if output is not None:
        click.echo(f"sweep ratio {rep.ratio:.4f} -> {output}")


@cli.command("stability-scan", help="Measure stability ratios over degrees and seeds.")
@click.option("--patch", "patch_paths", multiple=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Patch JSON file (repeatable).")
@click.option("--gen", "gen_specs", multiple=True,
              help='Inline generator JSON, e.g. \'{"kind": "interior", "jitter": 0.2}\'.')
@click.option("--p", "degrees", type=DEGREES, default="0..2", show_default=True)
@click.option("--delta", type=int, default=minimize.DEFAULT_DELTA, show_default=True)
@click.option("--kind", "kinds", multiple=True,
              type=click.Choice(minimize.KINDS), default=("hcurl-constrained",),
              show_default=True)
@click.option("--seeds", type=int, default=5, show_default=True,
              help="Data draws per (patch, kind, degree).")
@click.option("--base-seed", type=int, default=0, show_default=True)
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--record", "record_path", type=click.Path(dir_okay=False), default=None,
              help="Also write a JSON run record.")
def stability_scan(patch_paths, gen_specs, degrees, delta, kinds, seeds,
                   base_seed, output, record_path):
    specs = [("path", p) for p in patch_paths]
    specs += [
        ("gen", json.dumps(_parse_gen_spec(g), sort_keys=True)) for g in gen_specs
    ]
    config = ScanConfig(tuple(specs), tuple(degrees), delta, tuple(kinds),
                        seeds, base_seed, str(output))
    t0 = time.perf_counter()
    rows: list[dict] = []
    for pid, patch in _resolve_patches(config):
        rows.extend(minimize.scan_rows(
            patch, pid, config.kinds, config.degrees, config.delta,
            config.seeds, config.base_seed,
        ))
        minimize.clear_caches()
    n = report.write_scan_csv(rows, output)
    wall = time.perf_counter() - t0
    if record_path is not None:
        record = RunRecord(
            config=config.to_dict(),
            config_hash=config.config_hash,
            version=__version__,
            environment=environment_note(),
            instances=[{c: row[c] for c in report.CSV_COLUMNS} for row in rows],
            wall_s=wall,
        )
        _dump_json(record.to_dict(), record_path)
    worst = max((row["ratio"] for row in rows), default=float("nan"))
    click.echo(
        f"wrote {n} rows to {output} (config {config.config_hash}, "
        f"max ratio {worst:.4f}, {wall:.1f}s)"
    )


@cli.command("tutte", help="Embed a planar disk mesh onto the reference triangle.")
@click.option("--mesh", "mesh_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--arc", type=click.Choice(("flat", "sharp")), default="flat",
              show_default=True, help="Arc routed to the hypotenuse.")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--svg", "svg_path", type=click.Path(dir_okay=False), default=None,
              help="Also draw the embedded mesh.")
def tutte_cmd(mesh_file, arc, output, svg_path):
    m = embed.PlanarTriMesh.from_dict(_read_json(mesh_file))
    emb = embed.tutte_embed(m, arc)
    out = emb.to_dict()
    out["certificate"] = {
        "requested_arc": arc,
        "assignment": emb.boundary_assignment,
        "min_area": emb.min_area(),
        "perturbed": emb.perturbed,
    }
    _dump_json(out, output)
    if svg_path is not None:
        report.render_embedding(emb, svg_path)
    click.echo(f"embedded {m.n_triangles} triangles, min area {emb.min_area():.3e}")


@cli.command("symmetrize", help="Reflect a patch across a coordinate plane.")
@click.option("--patch", "patch_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--axis", type=click.IntRange(0, 2), default=0, show_default=True)
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
def symmetrize_cmd(patch_file, axis, output):
    patch = _load_patch(patch_file)
    pairing = reflect_patch(patch, axis)
    mesh.save_patch(pairing.full, output)
    click.echo(
        f"doubled {patch.n_tets} -> {pairing.full.n_tets} elements across "
        f"x{axis + 1} = 0 -> {output}"
    )


@cli.command("report", help="Render a scan CSV to a ratio-versus-degree figure.")
@click.option("--scan", "scan_csv", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--title", default=None)
def report_cmd(scan_csv, output, title):
    info = report.emit_plot(scan_csv, output, title)
    click.echo(f"rendered {info['series']} series from {info['rows']} rows to {output}")


# ---------------------------------------------------------------------------
# entry point with the exit-code contract
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    """Run the CLI and translate failures into the documented exit codes."""
    try:
        rv = cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.Abort:
        return EXIT_USAGE
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except (ConfigError, report.ReportError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except (mesh.MeshError, embed.EmbedError, PiolaError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INVALID
    except (minimize.MinimizeError, sweep_lab.SweepError, spaces.SpaceError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_SOLVER
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
