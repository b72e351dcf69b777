"""Scenario configuration files (TOML).

A scenario file looks like::

    [scenario]
    heightmap = "valley.asc"      # relative to this file
    output_dir = "run"
    mesh_mode = "box6"            # or "single-tet"
    snapshot_every = 10

    [terrain]
    vertical_extent = 300.0
    error_tolerance = 2.0

    [transport]
    eps = 10.0
    dt = 60.0
    t_end = 6000.0
    wind = [2.5, 0.0, 0.0]

    [transport.source]
    q = 1.0
    position = [300.0, 500.0, 50.0]
    sigma = 40.0
    above_ground = true           # z counts from the terrain surface

    [solver]
    rel_tol = 1e-8

Omitted keys take the defaults below; :meth:`ScenarioConfig.to_dict`
echoes the fully resolved configuration.
"""
from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .fem.problem import SolverConfig
from .terrain import MODES, TerrainConfig


@dataclass
class SourceConfig:
    q: float = 1.0
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    sigma: float = 1.0
    above_ground: bool = False


@dataclass
class TransportConfig:
    eps: float = 1.0
    dt: float = 1.0
    t_end: float = 1.0
    c: float = 0.0
    p: int = 1
    wind: tuple[float, float, float] = (0.0, 0.0, 0.0)
    stabilized: bool = True
    source: SourceConfig | None = None


@dataclass
class ScenarioConfig:
    heightmap_path: Path
    terrain: TerrainConfig = field(default_factory=TerrainConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output_dir: Path = Path("run")
    snapshot_every: int = 1
    mesh_mode: str = "box6"
    seed: int = 0
    source_path: Path | None = None

    def to_dict(self) -> dict:
        tr = asdict(self.transport)
        tr["wind"] = list(tr["wind"])
        if tr["source"] is not None:
            tr["source"]["position"] = list(tr["source"]["position"])
        return {
            "scenario": {
                "heightmap": str(self.heightmap_path),
                "output_dir": str(self.output_dir),
                "mesh_mode": self.mesh_mode,
                "snapshot_every": self.snapshot_every,
                "seed": self.seed,
            },
            "terrain": asdict(self.terrain),
            "transport": tr,
            "solver": asdict(self.solver),
        }


_SECTIONS = {
    "scenario": {"heightmap", "output_dir", "mesh_mode", "snapshot_every", "seed"},
    "terrain": {"vertical_extent", "error_tolerance", "max_nodes", "max_rounds"},
    "transport": {"eps", "dt", "t_end", "c", "p", "wind", "stabilized", "source"},
    "transport.source": {"q", "position", "sigma", "above_ground"},
    "solver": {"gmres_restart", "rel_tol", "max_iter", "preconditioner"},
}


def _number(sec: dict, name: str, key: str, default, kind=float, check=None, why=""):
    where = f"{name}.{key}"
    if key not in sec:
        return default
    v = sec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}", where)
    if kind is int and not float(v).is_integer():
        raise ConfigError(f"{where}: expected an integer, got {v!r}", where)
    v = kind(v)
    if not math.isfinite(v):
        raise ConfigError(f"{where}: must be finite", where)
    if check is not None and not check(v):
        raise ConfigError(f"{where}: {why} (got {v!r})", where)
    return v


def _vector(sec: dict, name: str, key: str, default):
    where = f"{name}.{key}"
    if key not in sec:
        return default
    v = sec[key]
    if (not isinstance(v, list) or len(v) != 3
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)
            or not all(math.isfinite(x) for x in v)):
        raise ConfigError(f"{where}: expected 3 finite numbers, got {v!r}", where)
    return tuple(float(x) for x in v)


def _bool(sec: dict, name: str, key: str, default: bool) -> bool:
    if key not in sec:
        return default
    if not isinstance(sec[key], bool):
        raise ConfigError(f"{name}.{key}: expected true or false", f"{name}.{key}")
    return sec[key]


def _table(doc: dict, name: str) -> dict:
    sec = doc
    for part in name.split("."):
        sec = sec.get(part, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"{name}: expected a table", name)
    unknown = set(sec) - _SECTIONS[name]
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{name}.{key}: unknown key", f"{name}.{key}")
    return sec


def parse_config(doc: dict, base_dir: Path = Path("."), check_paths: bool = True) -> ScenarioConfig:
    """Validate a parsed TOML document; relative paths resolve against ``base_dir``."""
    unknown = set(doc) - {"scenario", "terrain", "transport", "solver"}
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{key}: unknown section", key)
    sc = _table(doc, "scenario")
    if "heightmap" not in sc:
        raise ConfigError("scenario.heightmap: required", "scenario.heightmap")
    if not isinstance(sc["heightmap"], str):
        raise ConfigError("scenario.heightmap: expected a path string", "scenario.heightmap")
    hm = (base_dir / sc["heightmap"]).resolve()
    if check_paths and not hm.is_file():
        raise ConfigError(f"scenario.heightmap: file not found: {hm}", "scenario.heightmap")
    mode = sc.get("mesh_mode", "box6")
    if mode not in MODES:
        raise ConfigError(f"scenario.mesh_mode: expected one of {MODES}, got {mode!r}",
                          "scenario.mesh_mode")
    out = sc.get("output_dir", "run")
    if not isinstance(out, str):
        raise ConfigError("scenario.output_dir: expected a path string", "scenario.output_dir")

    te = _table(doc, "terrain")
    d = TerrainConfig()
    terrain = TerrainConfig(
        vertical_extent=_number(te, "terrain", "vertical_extent", d.vertical_extent,
                                check=lambda v: v > 0, why="must be positive"),
        error_tolerance=_number(te, "terrain", "error_tolerance", d.error_tolerance,
                                check=lambda v: v > 0, why="must be positive"),
        max_nodes=_number(te, "terrain", "max_nodes", d.max_nodes, int,
                          check=lambda v: v >= 4, why="must be at least 4"),
        max_rounds=_number(te, "terrain", "max_rounds", d.max_rounds, int,
                           check=lambda v: v >= 0, why="must be non-negative"),
    )

    tr = _table(doc, "transport")
    d = TransportConfig()
    dt = _number(tr, "transport", "dt", d.dt, check=lambda v: v > 0, why="must be positive")
    transport = TransportConfig(
        eps=_number(tr, "transport", "eps", d.eps, check=lambda v: v >= 0, why="must be non-negative"),
        dt=dt,
        t_end=_number(tr, "transport", "t_end", d.t_end, check=lambda v: v >= dt * (1 - 1e-12),
                      why="must be at least transport.dt"),
        c=_number(tr, "transport", "c", d.c, check=lambda v: v >= 0, why="must be non-negative"),
        p=_number(tr, "transport", "p", d.p, int, check=lambda v: v == 1,
                  why="only linear elements (p = 1) are implemented"),
        wind=_vector(tr, "transport", "wind", d.wind),
        stabilized=_bool(tr, "transport", "stabilized", d.stabilized),
    )
    if "source" in tr:
        so = _table(doc, "transport.source")
        ds = SourceConfig()
        if "position" not in so:
            raise ConfigError("transport.source.position: required", "transport.source.position")
        transport.source = SourceConfig(
            q=_number(so, "transport.source", "q", ds.q),
            position=_vector(so, "transport.source", "position", ds.position),
            sigma=_number(so, "transport.source", "sigma", ds.sigma, check=lambda v: v > 0,
                          why="must be positive"),
            above_ground=_bool(so, "transport.source", "above_ground", ds.above_ground),
        )

    so = _table(doc, "solver")
    d = SolverConfig()
    pre = so.get("preconditioner", d.preconditioner)
    if pre not in ("none", "diagonal"):
        raise ConfigError(f"solver.preconditioner: expected 'none' or 'diagonal', got {pre!r}",
                          "solver.preconditioner")
    solver = SolverConfig(
        gmres_restart=_number(so, "solver", "gmres_restart", d.gmres_restart, int,
                              check=lambda v: v >= 1, why="must be positive"),
        rel_tol=_number(so, "solver", "rel_tol", d.rel_tol, check=lambda v: 0 < v < 1,
                        why="must lie in (0, 1)"),
        max_iter=_number(so, "solver", "max_iter", d.max_iter, int, check=lambda v: v >= 1,
                         why="must be positive"),
        preconditioner=pre,
    )
    return ScenarioConfig(
        heightmap_path=hm,
        terrain=terrain,
        transport=transport,
        solver=solver,
        output_dir=(base_dir / out).resolve(),
        snapshot_every=_number(sc, "scenario", "snapshot_every", 1, int, check=lambda v: v >= 1,
                               why="must be positive"),
        mesh_mode=mode,
        seed=_number(sc, "scenario", "seed", 0, int),
    )


def load_config(path) -> ScenarioConfig:
    """Read and validate a scenario file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", "config") from exc
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}", "config") from exc
    cfg = parse_config(doc, path.parent.resolve())
    cfg.source_path = path.resolve()
    return cfg


def dump_toml(d: dict[str, Any]) -> str:
    """Serialize a resolved config dict (as from ``to_dict``) back to TOML."""
    def val(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int, float)):
            return repr(v)
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(val(x) for x in v) + "]"
        return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'

    out = []
    for name, sec in d.items():
        sub = {k: v for k, v in sec.items() if isinstance(v, dict)}
        out.append(f"[{name}]")
        out += [f"{k} = {val(v)}" for k, v in sec.items() if not isinstance(v, dict) and v is not None]
        out.append("")
        for k, v in sub.items():
            out.append(f"[{name}.{k}]")
            out += [f"{kk} = {val(vv)}" for kk, vv in v.items()]
            out.append("")
    return "\n".join(out)
