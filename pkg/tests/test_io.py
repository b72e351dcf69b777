import json
import re
from pathlib import Path

import numpy as np
import pytest

from leplume.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_VIOLATIONS, main
from leplume.config import TransportConfig, load_config
from leplume.errors import ConfigError, FormatError
from leplume.fem import ScalarField, SolverConfig
from leplume.mesh import MeshGraph, box_mesh
from leplume.terrain import Heightmap, TerrainConfig, gaussian_hill, write_esri_ascii
from leplume.vtk import export_vtk, read_vtk


def parse_legacy_vtk(text):
    """Test-only reader: tokens after each section keyword."""
    tok = text.split()
    i = tok.index("POINTS")
    n = int(tok[i + 1])
    pts = np.array(tok[i + 3:i + 3 + 3 * n], dtype=float).reshape(n, 3)
    j = tok.index("CELLS")
    nc = int(tok[j + 1])
    raw = np.array(tok[j + 3:j + 3 + 5 * nc], dtype=np.int64).reshape(nc, 5)
    assert np.all(raw[:, 0] == 4)
    k = tok.index("CELL_TYPES")
    types = tok[k + 2:k + 2 + nc]
    data = None
    if "POINT_DATA" in tok:
        p = tok.index("POINT_DATA")
        assert tok[p + 2:p + 5] == ["SCALARS", "concentration", "double"]
        q = tok.index("LOOKUP_TABLE", p)
        data = np.array(tok[q + 2:q + 2 + int(tok[p + 1])], dtype=float)
    return pts, raw[:, 1:], types, data


@pytest.fixture
def scenario(tmp_path):
    def make(hm=None, extra="", **transport):
        hm = hm or Heightmap(np.full((5, 5), 20.0), (0.0, 0.0), 25.0)
        write_esri_ascii(hm, tmp_path / "dem.asc")
        tr = {"eps": 1.0, "dt": 10.0, "t_end": 30.0, "wind": "[1.0, 0.0, 0.0]"} | transport
        body = "\n".join(f"{k} = {v}" for k, v in tr.items())
        text = (f'[scenario]\nheightmap = "dem.asc"\noutput_dir = "out"\n\n'
                f"[terrain]\nvertical_extent = 50.0\nerror_tolerance = 5.0\n\n"
                f"[transport]\n{body}\n{extra}")
        (tmp_path / "case.toml").write_text(text)
        return tmp_path / "case.toml"
    return make


# -- config ---------------------------------------------------------------

def test_minimal_config_defaults(tmp_path):
    write_esri_ascii(gaussian_hill(n=5), tmp_path / "h.asc")
    (tmp_path / "c.toml").write_text('[scenario]\nheightmap = "h.asc"\n')
    cfg = load_config(tmp_path / "c.toml")
    assert cfg.heightmap_path == (tmp_path / "h.asc").resolve()
    assert cfg.terrain == TerrainConfig()
    assert cfg.transport == TransportConfig()
    assert cfg.transport.c == 0.0 and cfg.transport.p == 1
    assert cfg.solver == SolverConfig()
    assert (cfg.solver.gmres_restart, cfg.solver.rel_tol, cfg.solver.max_iter) == (30, 1e-8, 1000)
    assert cfg.mesh_mode == "box6" and cfg.snapshot_every == 1
    echoed = cfg.to_dict()
    assert echoed["solver"]["preconditioner"] == "diagonal"


def test_dt_zero_names_field(scenario):
    with pytest.raises(ConfigError) as info:
        load_config(scenario(dt=0.0))
    assert info.value.field == "transport.dt"
    assert "transport.dt" in str(info.value)


def test_missing_heightmap_is_path_error(tmp_path):
    (tmp_path / "c.toml").write_text('[scenario]\nheightmap = "nope.asc"\n')
    with pytest.raises(ConfigError) as info:
        load_config(tmp_path / "c.toml")
    assert info.value.field == "scenario.heightmap"
    assert "not found" in str(info.value)


def test_unknown_key_and_bad_toml(scenario, tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(scenario(extra="windy = 3\n"))
    assert info.value.field == "transport.windy"
    (tmp_path / "broken.toml").write_text("[scenario\n")
    with pytest.raises(ConfigError) as info:
        load_config(tmp_path / "broken.toml")
    assert "line 1" in str(info.value)


def test_source_table(scenario):
    cfg = load_config(scenario(extra="\n[transport.source]\nq = 2.0\nposition = [50.0, 50.0, 10.0]\n"
                                     "sigma = 15.0\nabove_ground = true\n"))
    s = cfg.transport.source
    assert (s.q, s.position, s.sigma, s.above_ground) == (2.0, (50.0, 50.0, 10.0), 15.0, True)


# -- VTK ------------------------------------------------------------------

def test_vtk_single_tet(tmp_path):
    m = MeshGraph.from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2, 3]])
    export_vtk(m, None, tmp_path / "t.vtk")
    text = (tmp_path / "t.vtk").read_text()
    assert text.startswith("# vtk DataFile Version 3.0\n")
    assert "DATASET UNSTRUCTURED_GRID" in text
    pts, cells, types, data = parse_legacy_vtk(text)
    assert len(pts) == 4 and len(cells) == 1 and types == ["10"]
    assert data is None


def test_vtk_round_trip(tmp_path):
    m = box_mesh([[0, 1], [0, 2], [0, 3]], (2, 1, 2))
    x = m.points_array()
    x = x + np.sin(7 * x) * 1e-3      # non-representable decimals
    m = MeshGraph.from_arrays(x, m.tet_array())
    f = ScalarField(np.cos(np.arange(m.n_points) / 3.0), 2.5)
    export_vtk(m, f, tmp_path / "u.vtk")
    pts, cells, _, data = parse_legacy_vtk((tmp_path / "u.vtk").read_text())
    assert np.array_equal(pts, m.points_array())
    assert np.array_equal(cells, m.tet_array())
    assert len(data) == m.n_points and np.array_equal(data, f.values)
    p2, c2, d2 = read_vtk(tmp_path / "u.vtk")
    assert np.array_equal(p2, pts) and np.array_equal(c2, cells) and np.array_equal(d2, data)


def test_vtk_field_length_mismatch(tmp_path):
    m = box_mesh([[0, 1], [0, 1], [0, 1]])
    with pytest.raises(ValueError):
        export_vtk(m, ScalarField(np.zeros(3)), tmp_path / "x.vtk")


def test_read_vtk_malformed(tmp_path):
    (tmp_path / "bad.vtk").write_text("# vtk DataFile Version 3.0\nx\nASCII\nDATASET POLYDATA\n")
    with pytest.raises(FormatError):
        read_vtk(tmp_path / "bad.vtk")


# -- CLI ------------------------------------------------------------------

def test_cli_mesh_flat(scenario, tmp_path):
    rc = main(["--quiet", "mesh", "--config", str(scenario())])
    assert rc == EXIT_OK
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["format_version"] == 1
    assert len(man["mesh"]["node_counts"]) == 1
    assert man["mesh"]["node_counts"][0]["nodes"] == 8
    assert man["units"]["length"] == "m"
    assert {"mesh.vtk", "manifest.json", "config.toml"} <= set(man["artifacts"])


def test_cli_simulate_snapshots(scenario, tmp_path):
    cfg = scenario(hm=gaussian_hill(n=9, size=200, height=30),
                   extra="\n[transport.source]\nposition = [100.0, 100.0, 10.0]\nsigma = 20.0\n"
                         "above_ground = true\n")
    rc = main(["--quiet", "simulate", "--config", str(cfg), "--snapshot-every", "1"])
    assert rc == EXIT_OK
    out = tmp_path / "out"
    assert sorted(p.name for p in out.glob("u_*.vtk")) == [f"u_{k:06d}.vtk" for k in range(4)]
    man = json.loads((out / "manifest.json").read_text())
    assert [s["step"] for s in man["snapshots"]] == [0, 1, 2, 3]
    assert len(man["solver"]["per_step"]) == 3
    assert man["snapshots"][-1]["max"] > 0
    # the config echo in the run directory re-runs the same scenario
    again = load_config(out / "config.toml")
    assert again.to_dict() == load_config(cfg).to_dict()


def test_cli_validate_corrupted(tmp_path, capsys):
    m = box_mesh([[0, 1], [0, 1], [0, 1]], (2, 1, 1))
    export_vtk(m, None, tmp_path / "m.vtk")
    assert main(["validate", str(tmp_path / "m.vtk")]) == EXIT_OK
    text = (tmp_path / "m.vtk").read_text()
    bad = re.sub(r"(CELLS \d+ \d+\n4 )(\d+)", r"\g<1>99", text)
    (tmp_path / "bad.vtk").write_text(bad)
    capsys.readouterr()
    assert main(["validate", str(tmp_path / "bad.vtk")]) == EXIT_VIOLATIONS
    out = capsys.readouterr().out
    assert "cell 0" in out and "missing point" in out


def test_cli_validate_nonconforming(tmp_path, capsys):
    # two tets of one box replaced by a split of one of them only: a hanging node
    m = box_mesh([[0, 1], [0, 1], [0, 1]])
    pts = m.points_array().tolist()
    cells = m.tet_array().tolist()
    a, b = cells[0][0], cells[0][1]
    pts.append([(pts[a][k] + pts[b][k]) / 2 for k in range(3)])
    mid = len(pts) - 1
    c = cells.pop(0)
    cells += [[mid if p == b else p for p in c], [mid if p == a else p for p in c]]
    from leplume.vtk import vtk_text
    (tmp_path / "h.vtk").write_text(vtk_text(np.array(pts), np.array(cells)))
    capsys.readouterr()
    assert main(["validate", str(tmp_path / "h.vtk")]) == EXIT_VIOLATIONS
    assert "conformity" in capsys.readouterr().out


def test_cli_exit_codes(scenario, tmp_path):
    assert main(["--quiet", "mesh", "--config", str(scenario(dt=-1.0))]) == EXIT_CONFIG
    assert main(["--quiet", "mesh", "--config", str(tmp_path / "absent.toml")]) == EXIT_CONFIG
    assert main(["--quiet", "validate", str(tmp_path / "absent.vtk")]) == EXIT_IO
    (tmp_path / "dem.asc").write_text("ncols 2\nnrows 2\n")
    (tmp_path / "c2.toml").write_text('[scenario]\nheightmap = "dem.asc"\n')
    assert main(["--quiet", "mesh", "--config", str(tmp_path / "c2.toml")]) == EXIT_IO


def test_cli_numeric_failure(scenario):
    cfg = scenario(hm=gaussian_hill(n=9, size=200, height=30), wind="[50.0, 0.0, 0.0]",
                   extra="\n[transport.source]\nposition = [100.0, 100.0, 10.0]\nsigma = 20.0\n"
                         "\n[solver]\nrel_tol = 1e-14\nmax_iter = 1\ngmres_restart = 1\n")
    assert main(["--quiet", "simulate", "--config", str(cfg)]) == EXIT_NUMERIC


def _strip_timings(path: Path):
    man = json.loads(path.read_text())
    man.pop("timings")
    return man


def test_runs_are_byte_identical(scenario, tmp_path):
    cfg = scenario(hm=gaussian_hill(n=9, size=200, height=30))
    outs = []
    for name in ("a", "b"):
        assert main(["--quiet", "mesh", "--config", str(cfg), "--output", str(tmp_path / name)]) == 0
        outs.append(tmp_path / name)
    assert (outs[0] / "mesh.vtk").read_bytes() == (outs[1] / "mesh.vtk").read_bytes()
    a, b = (_strip_timings(o / "manifest.json") for o in outs)
    a["config"]["scenario"].pop("output_dir")
    b["config"]["scenario"].pop("output_dir")
    assert a == b
