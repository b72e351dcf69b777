"""Command-line entry point: ``leplume mesh|simulate|validate``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, dump_toml, load_config
from .errors import (
    ConfigError,
    ConvergenceError,
    FormatError,
    GeometryError,
    NonTerminationError,
    PreconditionError,
)
from .fem import ScalarField, TransportProblem, gaussian_source, simulate
from .fem.transport import TransportOperator, integrate
from .mesh import MeshGraph, Violation, validate
from .terrain import Heightmap, generate_terrain_mesh, load_heightmap
from .vtk import export_vtk, read_vtk, write_text_atomic

log = logging.getLogger("leplume")

FORMAT_VERSION = 1
EXIT_OK, EXIT_VIOLATIONS, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4
UNITS = {
    "length": "m",
    "time": "s",
    "wind": "m/s",
    "eps": "m^2/s",
    "c": "1/s",
    "concentration": "source units (q per second accumulated)",
}


def _write_manifest(out: Path, manifest: dict):
    write_text_atomic(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _mesh_stage(cfg: ScenarioConfig, out: Path, manifest: dict):
    t0 = time.perf_counter()
    hm = load_heightmap(cfg.heightmap_path)
    manifest["heightmap"] = hm.stats()
    tm = generate_terrain_mesh(hm, cfg.terrain, cfg.mesh_mode)
    manifest["timings"]["mesh_s"] = time.perf_counter() - t0
    manifest["mesh"] = {
        "status": tm.status,
        "rounds": tm.rounds,
        "n_points": tm.mesh.n_points,
        "n_tets": tm.mesh.n_tets,
        "node_counts": [
            {"iteration": i, "nodes": n, "max_error": e}
            for i, (n, e) in enumerate(zip(tm.node_counts, tm.max_errors))
        ],
    }
    export_vtk(tm.mesh, None, out / "mesh.vtk", "leplume terrain mesh")
    manifest["artifacts"].append("mesh.vtk")
    return hm, tm.mesh


def _start(cfg: ScenarioConfig, command: str) -> tuple[Path, dict]:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_text_atomic(out / "config.toml", dump_toml(cfg.to_dict()))
    manifest = {
        "format_version": FORMAT_VERSION,
        "command": command,
        "config": cfg.to_dict(),
        "units": UNITS,
        "timings": {},
        "artifacts": ["config.toml"],
    }
    return out, manifest


def cmd_mesh(cfg: ScenarioConfig) -> dict:
    """Generate the terrain mesh; writes ``mesh.vtk`` and ``manifest.json``."""
    out, manifest = _start(cfg, "mesh")
    _mesh_stage(cfg, out, manifest)
    manifest["artifacts"].append("manifest.json")
    _write_manifest(out, manifest)
    return manifest


def build_problem(cfg: ScenarioConfig, hm: Heightmap | None = None) -> TransportProblem:
    tc = cfg.transport
    source = None
    if tc.source is not None:
        x, y, z = tc.source.position
        if tc.source.above_ground:
            if hm is None:
                raise ConfigError("transport.source.above_ground needs the heightmap",
                                  "transport.source.above_ground")
            z += float(hm.sample(x, y))
        source = gaussian_source(tc.source.q, (x, y, z), tc.source.sigma)
    return TransportProblem(eps=tc.eps, dt=tc.dt, t_end=tc.t_end, beta=np.array(tc.wind), c=tc.c,
                            source=source, p=tc.p, stabilized=tc.stabilized)


def cmd_simulate(cfg: ScenarioConfig) -> dict:
    """Mesh the terrain, run the transport problem and write snapshot files."""
    out, manifest = _start(cfg, "simulate")
    hm, mesh = _mesh_stage(cfg, out, manifest)
    prob = build_problem(cfg, hm)
    op = TransportOperator(mesh, prob)
    snaps = []

    def on_snapshot(k, field):
        name = f"u_{k:06d}.vtk"
        export_vtk(mesh, field, out / name, f"leplume concentration t={field.time!r}")
        manifest["artifacts"].append(name)
        snaps.append({"step": k, "time": field.time, "file": name,
                      "max": float(field.values.max()), "integral": integrate(op, field.values)})

    t0 = time.perf_counter()
    res = simulate(mesh, prob, ScalarField(np.zeros(mesh.n_points), 0.0), cfg.solver,
                   cfg.snapshot_every, on_snapshot, op=op)
    manifest["timings"]["simulate_s"] = time.perf_counter() - t0
    manifest["snapshots"] = snaps
    manifest["solver"] = {
        "steps": res.steps,
        "per_step": [{"step": s.step, "time": s.time, "iterations": s.iterations,
                      "residual": s.residual} for s in res.stats],
    }
    manifest["artifacts"].append("manifest.json")
    _write_manifest(out, manifest)
    return manifest


def validate_arrays(points: np.ndarray, cells: np.ndarray) -> list[Violation]:
    """Structural checks on raw connectivity, then the full mesh validation."""
    bad = []
    if not np.all(np.isfinite(points)):
        bad.append(Violation("point", "points", "non-finite coordinates"))
    n = len(points)
    for i, c in enumerate(cells):
        if np.any(c < 0) or np.any(c >= n):
            bad.append(Violation("cell", f"cell {i}", f"references missing point (have {n}): {c.tolist()}"))
        elif len(set(c.tolist())) != 4:
            bad.append(Violation("cell", f"cell {i}", f"repeats a point: {c.tolist()}"))
    if bad:
        return bad
    try:
        mesh = MeshGraph.from_arrays(points, cells)
    except GeometryError as exc:
        return [Violation("geometry", "mesh", str(exc))]
    return validate(mesh)


def cmd_validate(mesh_path) -> dict:
    """Load a VTK mesh and report every violated invariant."""
    points, cells, _ = read_vtk(mesh_path)
    violations = validate_arrays(points, cells)
    return {
        "path": str(mesh_path),
        "n_points": int(len(points)),
        "n_tets": int(len(cells)),
        "violations": [str(v) for v in violations],
        "ok": not violations,
    }


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leplume", description=__doc__)
    p.add_argument("--quiet", action="store_true", help="only print errors")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("mesh", "generate a terrain mesh"),
                           ("simulate", "mesh the terrain and run the transport scenario")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True, help="scenario TOML file")
        s.add_argument("--output", help="output directory (overrides scenario.output_dir)")
        s.add_argument("--mode", choices=("single-tet", "box6"), help="initial mesh")
        s.add_argument("--snapshot-every", type=int, help="steps between snapshots")
        s.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    s = sub.add_parser("validate", help="check a VTK mesh for conformity")
    s.add_argument("mesh", help="legacy VTK file")
    s.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    def say(msg):
        if not args.quiet:
            print(msg)

    try:
        if args.command == "validate":
            report = cmd_validate(args.mesh)
            for v in report["violations"]:
                print(v)
            say(f"{report['path']}: {report['n_points']} points, {report['n_tets']} tets, "
                f"{len(report['violations'])} violations")
            return EXIT_OK if report["ok"] else EXIT_VIOLATIONS
        cfg = load_config(args.config)
        if args.output is not None:
            cfg.output_dir = Path(args.output).resolve()
        if args.mode is not None:
            cfg.mesh_mode = args.mode
        if args.snapshot_every is not None:
            if args.snapshot_every < 1:
                raise ConfigError("--snapshot-every must be positive", "scenario.snapshot_every")
            cfg.snapshot_every = args.snapshot_every
        manifest = cmd_mesh(cfg) if args.command == "mesh" else cmd_simulate(cfg)
        for row in manifest["mesh"]["node_counts"]:
            say(f"iteration {row['iteration']:3d}  nodes {row['nodes']:8d}  "
                f"max error {row['max_error']:.4g}")
        if "solver" in manifest:
            its = [s["iterations"] for s in manifest["solver"]["per_step"]]
            say(f"{manifest['solver']['steps']} steps, GMRES iterations "
                f"min/mean/max {min(its)}/{np.mean(its):.1f}/{max(its)}")
        say(f"wrote {len(manifest['artifacts'])} files to {cfg.output_dir}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, GeometryError, NonTerminationError, PreconditionError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
