"""Heightmap ingestion and terrain-fitted tetrahedral mesh generation.

The mesh covers the bounding box of the raster from the lowest elevation up
to ``vertical_extent`` above the highest one.  After every refinement round
the ground nodes are lifted onto the raster surface; tets whose ground face
still deviates from the raster by more than the tolerance are marked for the
next round.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, GeometryError
from .mesh import FaceTag, MeshGraph, box_mesh
from .refine import RefinePlan, refine

log = logging.getLogger(__name__)

MODES = ("box6", "single-tet")


@dataclass
class Heightmap:
    """Uniform elevation raster.

    ``values[i, j]`` is the sample at ``x = origin[0] + j * cellsize``,
    ``y = origin[1] + i * cellsize`` (row 0 is the southern edge).
    """

    values: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)
    cellsize: float = 1.0
    nodata: float = -9999.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise FormatError("heightmap values must be a 2-D grid")
        if self.nrows < 2 or self.ncols < 2:
            raise FormatError(f"heightmap needs at least 2x2 samples, got {self.nrows}x{self.ncols}")
        if not self.cellsize > 0:
            raise FormatError(f"cellsize must be positive, got {self.cellsize}")
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        valid = self.valid
        if not valid.any():
            raise FormatError("heightmap has no valid samples")
        if not np.all(np.isfinite(self.values[valid])):
            raise FormatError("heightmap contains non-finite elevations")
        # interpolation grid: nodata cells take the mean of the valid ones
        self._filled = np.where(valid, self.values, self.values[valid].mean())

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return (self.values != self.nodata) & ~np.isnan(self.values)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return (x0, x0 + (self.ncols - 1) * self.cellsize,
                y0, y0 + (self.nrows - 1) * self.cellsize)

    @property
    def zmin(self) -> float:
        return float(self.values[self.valid].min())

    @property
    def zmax(self) -> float:
        return float(self.values[self.valid].max())

    def stats(self) -> dict:
        valid = self.valid
        return {"ncols": self.ncols, "nrows": self.nrows, "cellsize": self.cellsize,
                "valid": int(valid.sum()), "nodata": int((~valid).sum()),
                "zmin": self.zmin, "zmax": self.zmax}

    def sample(self, x, y) -> np.ndarray:
        """Bilinear elevation at (x, y); points outside are clamped."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        fx = np.clip((x - self.origin[0]) / self.cellsize, 0, self.ncols - 1)
        fy = np.clip((y - self.origin[1]) / self.cellsize, 0, self.nrows - 1)
        j = np.minimum(np.floor(fx).astype(int), self.ncols - 2)
        i = np.minimum(np.floor(fy).astype(int), self.nrows - 2)
        tx, ty = fx - j, fy - i
        z = self._filled
        return ((1 - tx) * (1 - ty) * z[i, j] + tx * (1 - ty) * z[i, j + 1]
                + (1 - tx) * ty * z[i + 1, j] + tx * ty * z[i + 1, j + 1])

    def sample_points(self):
        """Coordinates and elevations of all valid raster samples."""
        i, j = np.nonzero(self.valid)
        return (self.origin[0] + j * self.cellsize, self.origin[1] + i * self.cellsize,
                self.values[i, j])


@dataclass
class TerrainConfig:
    vertical_extent: float = 100.0
    error_tolerance: float = 1.0
    max_nodes: int = 50_000
    max_rounds: int = 60

    def __post_init__(self):
        if not self.vertical_extent > 0:
            raise ValueError("vertical_extent must be positive")
        if not self.error_tolerance > 0:
            raise ValueError("error_tolerance must be positive")
        if self.max_nodes < 4:
            raise ValueError("max_nodes must be at least 4")


# ----------------------------------------------------------------------
# readers


def load_heightmap(path) -> Heightmap:
    """Read an ESRI ASCII grid, or x,y,z CSV triples on a uniform grid."""
    path = Path(path)
    try:
        text = path.read_text()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not a text heightmap") from exc
    head = text.lstrip().split(None, 1)[0].lower() if text.strip() else ""
    if head == "ncols" or head == "nrows":
        return parse_esri_ascii(text, str(path))
    return parse_xyz_csv(text, str(path))


def parse_esri_ascii(text: str, name: str = "<grid>") -> Heightmap:
    lines = text.splitlines()
    header = {}
    pos = 0
    keys = {"ncols", "nrows", "xllcorner", "yllcorner", "xllcenter", "yllcenter",
            "cellsize", "nodata_value"}
    while pos < len(lines):
        parts = lines[pos].split()
        if not parts:
            pos += 1
            continue
        if parts[0].lower() not in keys:
            break
        if len(parts) != 2:
            raise FormatError(f"{name}:{pos + 1}: malformed header line {lines[pos]!r}")
        try:
            header[parts[0].lower()] = float(parts[1])
        except ValueError:
            raise FormatError(f"{name}:{pos + 1}: bad number in {lines[pos]!r}") from None
        pos += 1
    for key in ("ncols", "nrows", "cellsize"):
        if key not in header:
            raise FormatError(f"{name}: missing header field {key!r}")
    ncols, nrows, cs = int(header["ncols"]), int(header["nrows"]), header["cellsize"]
    if "xllcenter" in header:
        x0, y0 = header["xllcenter"], header.get("yllcenter", 0.0)
    else:
        x0 = header.get("xllcorner", 0.0) + cs / 2
        y0 = header.get("yllcorner", 0.0) + cs / 2
    try:
        data = np.array(" ".join(lines[pos:]).split(), dtype=float)
    except ValueError as exc:
        raise FormatError(f"{name}: non-numeric grid value ({exc})") from None
    if data.size != ncols * nrows:
        raise FormatError(f"{name}: expected {ncols * nrows} values, found {data.size}")
    # ESRI rows run north to south
    values = data.reshape(nrows, ncols)[::-1]
    return Heightmap(values, (x0, y0), cs, header.get("nodata_value", -9999.0))


def parse_xyz_csv(text: str, name: str = "<csv>") -> Heightmap:
    rows = []
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or row[0].strip().startswith("#"):
            continue
        try:
            rows.append([float(v) for v in row[:3]])
        except ValueError:
            if not rows:  # header line
                continue
            raise FormatError(f"{name}:{lineno}: expected x,y,z numbers, got {row!r}") from None
        if len(rows[-1]) != 3:
            raise FormatError(f"{name}:{lineno}: expected 3 columns")
    if len(rows) < 4:
        raise FormatError(f"{name}: too few samples")
    arr = np.array(rows)
    xs = np.unique(arr[:, 0])
    ys = np.unique(arr[:, 1])
    if len(xs) < 2 or len(ys) < 2:
        raise FormatError(f"{name}: samples do not span a 2-D grid")
    pitch = float(np.min(np.diff(xs)))
    if not np.allclose(np.diff(xs), pitch, rtol=1e-6) or not np.allclose(np.diff(ys), pitch, rtol=1e-6):
        raise FormatError(f"{name}: samples are not on a uniform square grid")
    nodata = -9999.0
    values = np.full((len(ys), len(xs)), nodata)
    j = np.rint((arr[:, 0] - xs[0]) / pitch).astype(int)
    i = np.rint((arr[:, 1] - ys[0]) / pitch).astype(int)
    values[i, j] = arr[:, 2]
    return Heightmap(values, (xs[0], ys[0]), pitch, nodata)


def write_esri_ascii(hm: Heightmap, path):
    with open(path, "w") as fh:
        fh.write(f"ncols {hm.ncols}\nnrows {hm.nrows}\n")
        fh.write(f"xllcenter {hm.origin[0]!r}\nyllcenter {hm.origin[1]!r}\n")
        fh.write(f"cellsize {hm.cellsize!r}\nNODATA_value {hm.nodata!r}\n")
        for row in hm.values[::-1]:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


# ----------------------------------------------------------------------
# synthetic terrains


def gaussian_hill(n=33, size=1000.0, height=100.0, width=None, base=0.0) -> Heightmap:
    width = size / 6 if width is None else width
    c = np.linspace(0, size, n)
    x, y = np.meshgrid(c, c)
    z = base + height * np.exp(-((x - size / 2) ** 2 + (y - size / 2) ** 2) / (2 * width ** 2))
    return Heightmap(z, (0.0, 0.0), size / (n - 1))


def valley(nx=65, ny=33, length=2000.0, width=1000.0, depth=150.0, base=0.0) -> Heightmap:
    """A valley running along x with slopes rising towards y = 0 and y = width."""
    xs = np.linspace(0, length, nx)
    ys = np.linspace(0, width, ny)
    x, y = np.meshgrid(xs, ys)
    across = (2 * (y - width / 2) / width) ** 2
    z = base + depth * across + 0.1 * depth * (x / length)
    cs = length / (nx - 1)
    if not math.isclose(cs, width / (ny - 1)):
        raise ValueError("valley grid must have square cells")
    return Heightmap(z, (0.0, 0.0), cs)


# ----------------------------------------------------------------------
# meshing


def domain_bounds(hm: Heightmap, cfg: TerrainConfig) -> np.ndarray:
    x0, x1, y0, y1 = hm.extent
    return np.array([[x0, x1], [y0, y1], [hm.zmin, hm.zmax + cfg.vertical_extent]])


def build_initial_mesh(hm: Heightmap, cfg: TerrainConfig, mode: str = "box6") -> MeshGraph:
    """Coarse conforming mesh of the terrain's bounding volume.

    ``box6`` splits the box into 6 Kuhn tets; ``single-tet`` is the corner
    tet spanned by the three box axes (4 nodes), useful for growth studies.
    """
    bounds = domain_bounds(hm, cfg)
    if mode == "box6":
        return box_mesh(bounds)
    if mode == "single-tet":
        (x0, x1), (y0, y1), (z0, z1) = bounds
        pts = [(x0, y0, z0), (x1, y0, z0), (x0, y1, z0), (x0, y0, z1)]
        return MeshGraph.from_arrays(pts, [[0, 1, 2, 3]], bounds)
    raise ValueError(f"unknown mesh mode {mode!r}; expected one of {MODES}")


def ground_faces(mesh: MeshGraph) -> list[int]:
    return [f.id for f in mesh.faces if f.alive and f.tag == FaceTag.GROUND]


def ground_points(mesh: MeshGraph) -> list[int]:
    pts = set()
    for f in ground_faces(mesh):
        pts.update(mesh.faces[f].points)
    return sorted(pts)


def _ground_face_of(mesh: MeshGraph, t: int) -> int | None:
    for f in mesh.tet(t).faces:
        if mesh.faces[f].tag == FaceTag.GROUND:
            return f
    return None


def _face_error(mesh: MeshGraph, hm: Heightmap, f: int, fitted: bool = False) -> float:
    tri = np.array([mesh.points[p] for p in mesh.faces[f].points])
    xy = tri[:, :2]
    h_vertices = hm.sample(xy[:, 0], xy[:, 1])
    if fitted:
        # heights the ground vertices take once the mesh is mapped onto the raster
        z = h_vertices
        err = 0.0
    else:
        z = tri[:, 2]
        err = float(np.max(np.abs(z - h_vertices)))
    x0, y0 = hm.origin
    cs = hm.cellsize
    lo = xy.min(axis=0)
    hi = xy.max(axis=0)
    j0 = max(int(math.ceil((lo[0] - x0) / cs - 1e-9)), 0)
    j1 = min(int(math.floor((hi[0] - x0) / cs + 1e-9)), hm.ncols - 1)
    i0 = max(int(math.ceil((lo[1] - y0) / cs - 1e-9)), 0)
    i1 = min(int(math.floor((hi[1] - y0) / cs + 1e-9)), hm.nrows - 1)
    if j1 < j0 or i1 < i0:
        return err
    jj, ii = np.meshgrid(np.arange(j0, j1 + 1), np.arange(i0, i1 + 1))
    vals = hm.values[ii, jj]
    ok = (vals != hm.nodata) & ~np.isnan(vals)
    if not ok.any():
        return err
    px = x0 + jj[ok] * cs
    py = y0 + ii[ok] * cs
    pz = vals[ok]
    # barycentric coordinates of raster points in the footprint triangle
    (ax, ay), (bx, by), (cx, cy) = xy
    det = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy)
    if abs(det) <= 1e-14 * cs * cs:
        return err
    l1 = ((by - cy) * (px - cx) + (cx - bx) * (py - cy)) / det
    l2 = ((cy - ay) * (px - cx) + (ax - cx) * (py - cy)) / det
    l3 = 1.0 - l1 - l2
    inside = (l1 >= -1e-12) & (l2 >= -1e-12) & (l3 >= -1e-12)
    if inside.any():
        surf = l1[inside] * z[0] + l2[inside] * z[1] + l3[inside] * z[2]
        err = max(err, float(np.max(np.abs(surf - pz[inside]))))
    return err


def surface_error(mesh: MeshGraph, hm: Heightmap, t: int, fitted: bool = False) -> float:
    """Max vertical deviation between the tet's ground face and the raster.

    Uses the mesh's own vertex heights, or with ``fitted`` the heights the
    ground vertices get from :func:`fit_surface`.  Zero for tets without a
    ground face.
    """
    f = _ground_face_of(mesh, t)
    if f is None:
        return 0.0
    return _face_error(mesh, hm, f, fitted)


def surface_errors(mesh: MeshGraph, hm: Heightmap, fitted: bool = False) -> dict[int, float]:
    """Surface error of every tet that owns a ground face."""
    out = {}
    for f in ground_faces(mesh):
        (t,) = mesh.face_to_tets[f]
        out[t] = _face_error(mesh, hm, f, fitted)
    return out


def mark_by_error(mesh: MeshGraph, hm: Heightmap, cfg: TerrainConfig,
                  fitted: bool = False) -> set[int]:
    if mesh.n_points >= cfg.max_nodes:
        return set()
    return {t for t, err in surface_errors(mesh, hm, fitted).items() if err > cfg.error_tolerance}


def terrain_following(points: np.ndarray, hm: Heightmap, zrange) -> np.ndarray:
    """Map reference-box points onto the terrain-following geometry.

    Each point moves vertically by ``(h - z0) * (z1 - z) / (z1 - z0)``: the
    ground plane ``z0`` lands on the raster, the lid ``z1`` stays put.
    """
    z0, z1 = zrange
    pts = np.array(points, dtype=float, copy=True)
    h = hm.sample(pts[:, 0], pts[:, 1])
    pts[:, 2] += (h - z0) * (z1 - pts[:, 2]) / (z1 - z0)
    return pts


def inverted_tets(mesh: MeshGraph, hm: Heightmap, zrange) -> set[int]:
    """Tets that would lose orientation (or degenerate) under the mapping."""
    tets = mesh.tet_array()
    if len(tets) == 0:
        return set()
    ids = np.array(mesh.live_tets())
    ref = mesh.points_array()
    phys = terrain_following(ref, hm, zrange)

    def vol(p):
        a, b, c, d = (p[tets[:, k]] for k in range(4))
        return np.einsum("ij,ij->i", b - a, np.cross(c - a, d - a)) / 6

    v0 = vol(ref)
    v1 = vol(phys)
    return set(ids[v1 <= 1e-3 * v0].tolist())


def fit_surface(mesh: MeshGraph, hm: Heightmap, zrange=None) -> MeshGraph:
    """Map the mesh in place onto the terrain (see :func:`terrain_following`).

    ``zrange`` defaults to the mesh's vertical extent.  Raises
    :class:`GeometryError` if a tet would invert.
    """
    ref = mesh.points_array()
    if zrange is None:
        zrange = (ref[:, 2].min(), ref[:, 2].max())
    bad = inverted_tets(mesh, hm, zrange)
    if bad:
        raise GeometryError(f"{len(bad)} tets invert when mapped onto the terrain")
    mesh.points = [tuple(p) for p in terrain_following(ref, hm, zrange).tolist()]
    mesh.refresh_geometry()
    return mesh


@dataclass
class TerrainMesh:
    mesh: MeshGraph
    node_counts: list[int]
    max_errors: list[float]
    status: str = "converged"
    rounds: int = 0
    reference_points: np.ndarray | None = None
    summaries: list[dict] = field(default_factory=list)

    def __iter__(self):
        # (mesh, node_counts) unpacking
        return iter((self.mesh, self.node_counts))


def generate_terrain_mesh(hm: Heightmap, cfg: TerrainConfig, mode: str = "box6") -> TerrainMesh:
    """Refine the box mesh until its ground fits the raster, then map it.

    Refinement runs on the flat reference box; each round marks the
    ground tets whose fitted face misses the raster by more than the
    tolerance (plus any tet the mapping would invert).  Stops when nothing is
    marked, the node budget is reached (status ``"budget"``) or
    ``cfg.max_rounds`` is hit (``"max_rounds"``).  The returned mesh is
    already mapped; ``reference_points`` keeps the flat coordinates.
    """
    mesh = build_initial_mesh(hm, cfg, mode)
    zrange = tuple(domain_bounds(hm, cfg)[2])
    errors = surface_errors(mesh, hm, fitted=True)
    result = TerrainMesh(mesh, [mesh.n_points], [max(errors.values(), default=0.0)])
    while True:
        marked = {t for t, e in errors.items() if e > cfg.error_tolerance}
        marked |= inverted_tets(mesh, hm, zrange)
        if not marked:
            break
        if mesh.n_points >= cfg.max_nodes:
            result.status = "budget"
            warnings.warn(f"node budget {cfg.max_nodes} exhausted with {len(marked)} tets "
                          f"above tolerance", RuntimeWarning, stacklevel=2)
            break
        if result.rounds >= cfg.max_rounds:
            result.status = "max_rounds"
            warnings.warn(f"stopped after {cfg.max_rounds} rounds", RuntimeWarning, stacklevel=2)
            break
        summary = refine(mesh, RefinePlan(marked))
        errors = surface_errors(mesh, hm, fitted=True)
        result.rounds += 1
        result.node_counts.append(mesh.n_points)
        result.max_errors.append(max(errors.values(), default=0.0))
        result.summaries.append(summary.as_dict())
        log.info("round %d: %d nodes, %d tets, max error %.4g", result.rounds,
                 mesh.n_points, mesh.n_tets, result.max_errors[-1])
    result.reference_points = mesh.points_array()
    fit_surface(mesh, hm, zrange)
    return result
