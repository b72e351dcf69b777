"""Attributed graph representation of a conforming tetrahedral mesh.

A mesh is a tri-partite graph: tetrahedron vertices point to their six edge
vertices and four face vertices, faces point to their three edges, and edges
carry the endpoint pointers.  Reverse maps (edge -> tets, face -> tets) are
kept in sync by :meth:`MeshGraph.add_tet` and :meth:`MeshGraph.remove_tet`.

Rewriting lives in :mod:`leplume.refine`; this module only stores and queries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from functools import cmp_to_key
from typing import Iterable, Sequence

import numpy as np

from .errors import GeometryError, HandleError

# local vertex pairs of the six tet edges, and local vertex triples of the
# four faces (face i is opposite vertex i)
LOCAL_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
LOCAL_FACES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))

LENGTH_RTOL = 1e-12
DEGENERACY_RTOL = 1e-14


class EdgeKind(IntEnum):
    """The AE attribute."""
    BOUNDARY = 1
    INTERIOR = 2


class FaceTag(IntEnum):
    """Boundary marker carried by faces; sub-faces inherit it on splits."""
    INTERIOR = 0
    XMIN = 1
    XMAX = 2
    YMIN = 3
    YMAX = 4
    GROUND = 5
    TOP = 6
    OTHER = 7


@dataclass(slots=True)
class EdgeRecord:
    id: int
    ip: int
    fp: int
    ae: EdgeKind = EdgeKind.INTERIOR
    midpoint_point: int | None = None
    alive: bool = True

    @property
    def br(self) -> bool:
        return self.midpoint_point is not None

    @property
    def points(self) -> tuple[int, int]:
        return self.ip, self.fp


@dataclass(slots=True)
class FaceRecord:
    id: int
    points: tuple[int, int, int]
    edges: tuple[int, int, int]
    brf: bool = False
    tag: FaceTag = FaceTag.INTERIOR
    alive: bool = True


@dataclass(slots=True)
class TetRecord:
    id: int
    points: tuple[int, int, int, int]
    edges: tuple[int, ...]
    faces: tuple[int, ...]
    r: bool = False
    # LE flags, aligned with ``edges``; longest-ness is relative to this tet
    le: tuple[bool, ...] = (False,) * 6
    alive: bool = True


@dataclass
class Violation:
    kind: str
    entity: str
    message: str

    def __str__(self):
        return f"[{self.kind}] {self.entity}: {self.message}"


def _sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def signed_volume(a, b, c, d) -> float:
    u = _sub(b, a)
    v = _sub(c, a)
    w = _sub(d, a)
    det = (u[0] * (v[1] * w[2] - v[2] * w[1])
           - u[1] * (v[0] * w[2] - v[2] * w[0])
           + u[2] * (v[0] * w[1] - v[1] * w[0]))
    return det / 6.0


def lengths_tied(la: float, lb: float) -> bool:
    return abs(la - lb) <= LENGTH_RTOL * max(la, lb)


class MeshGraph:
    """Tetrahedral mesh stored as an attributed graph.

    Handles are list indices.  Removed tets, faces and edges are tombstoned
    (``alive = False``) so handles stay stable; :meth:`compact` renumbers.
    """

    def __init__(self):
        self.points: list[tuple[float, float, float]] = []
        self.edges: list[EdgeRecord] = []
        self.faces: list[FaceRecord] = []
        self.tets: list[TetRecord] = []
        self.edge_to_tets: list[set[int]] = []
        self.face_to_tets: list[set[int]] = []
        self._edge_length: list[float] = []
        self._edge_index: dict[tuple[int, int], int] = {}
        self._face_index: dict[tuple[int, int, int], int] = {}

    # ------------------------------------------------------------------
    # construction

    @classmethod
    def from_arrays(cls, points, tets, bounds=None) -> "MeshGraph":
        """Build a mesh from coordinates and tet connectivity.

        Tets are reoriented to positive volume.  Boundary faces get a
        :class:`FaceTag` from the axis-aligned ``bounds`` plane they lie on
        (defaults to the bounding box of ``points``); AE follows from the
        boundary faces.
        """
        mesh = cls()
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        for p in pts:
            mesh.add_point(p)
        for cell in np.asarray(tets, dtype=int).reshape(-1, 4):
            ids = [int(i) for i in cell]
            if signed_volume(*(mesh.points[i] for i in ids)) < 0:
                ids[0], ids[1] = ids[1], ids[0]
            mesh.add_tet(ids)
        mesh.classify_boundary(bounds)
        return mesh

    def classify_boundary(self, bounds=None):
        """Tag boundary faces by bounding plane and set edge AE flags."""
        if bounds is None:
            arr = self.points_array()
            bounds = np.stack([arr.min(axis=0), arr.max(axis=0)], axis=1)
        bounds = np.asarray(bounds, dtype=float)
        planes = [(0, 0, FaceTag.XMIN), (0, 1, FaceTag.XMAX),
                  (1, 0, FaceTag.YMIN), (1, 1, FaceTag.YMAX),
                  (2, 0, FaceTag.GROUND), (2, 1, FaceTag.TOP)]
        scale = float(np.max(bounds[:, 1] - bounds[:, 0])) or 1.0
        for e in self.edges:
            if e.alive:
                e.ae = EdgeKind.INTERIOR
        for f in self.faces:
            if not f.alive:
                continue
            if len(self.face_to_tets[f.id]) != 1:
                f.tag = FaceTag.INTERIOR
                continue
            f.tag = FaceTag.OTHER
            for axis, side, tag in planes:
                if all(abs(self.points[p][axis] - bounds[axis, side]) <= 1e-12 * scale
                       for p in f.points):
                    f.tag = tag
                    break
            for eid in f.edges:
                self.edges[eid].ae = EdgeKind.BOUNDARY

    def add_point(self, coords) -> int:
        c = tuple(float(x) for x in coords)
        if len(c) != 3 or not all(math.isfinite(x) for x in c):
            raise GeometryError(f"point coordinates must be 3 finite numbers, got {coords!r}")
        self.points.append(c)
        return len(self.points) - 1

    def find_edge(self, a: int, b: int) -> int | None:
        return self._edge_index.get((a, b) if a < b else (b, a))

    def find_face(self, a: int, b: int, c: int) -> int | None:
        return self._face_index.get(tuple(sorted((a, b, c))))

    def get_or_create_edge(self, a: int, b: int, ae: EdgeKind = EdgeKind.INTERIOR) -> int:
        if a == b:
            raise GeometryError(f"edge endpoints coincide (point {a})")
        key = (a, b) if a < b else (b, a)
        eid = self._edge_index.get(key)
        if eid is not None:
            return eid
        eid = len(self.edges)
        self.edges.append(EdgeRecord(eid, key[0], key[1], EdgeKind(ae)))
        self.edge_to_tets.append(set())
        self._edge_length.append(math.dist(self.points[key[0]], self.points[key[1]]))
        self._edge_index[key] = eid
        return eid

    def get_or_create_face(self, a: int, b: int, c: int, tag: FaceTag = FaceTag.INTERIOR) -> int:
        key = tuple(sorted((a, b, c)))
        fid = self._face_index.get(key)
        if fid is not None:
            return fid
        edges = (self.get_or_create_edge(key[0], key[1]),
                 self.get_or_create_edge(key[0], key[2]),
                 self.get_or_create_edge(key[1], key[2]))
        fid = len(self.faces)
        self.faces.append(FaceRecord(fid, key, edges, tag=FaceTag(tag)))
        self.face_to_tets.append(set())
        self._face_index[key] = fid
        return fid

    def add_tet(self, points: Sequence[int], r: bool = False) -> int:
        pts = tuple(int(p) for p in points)
        if len(pts) != 4 or len(set(pts)) != 4:
            raise GeometryError(f"tet needs 4 distinct points, got {pts}")
        for p in pts:
            if not 0 <= p < len(self.points):
                raise HandleError(f"point {p} does not exist")
        tid = len(self.tets)
        edges = tuple(self.get_or_create_edge(pts[i], pts[j]) for i, j in LOCAL_EDGES)
        faces = tuple(self.get_or_create_face(*(pts[k] for k in lf)) for lf in LOCAL_FACES)
        tet = TetRecord(tid, pts, edges, faces, r=r)
        self.tets.append(tet)
        for e in edges:
            self.edge_to_tets[e].add(tid)
        for f in faces:
            self.face_to_tets[f].add(tid)
        tet.le = self._le_mask(tet)
        return tid

    def remove_tet(self, tid: int):
        """Tombstone a tet; edges and faces left without tets die with it."""
        tet = self.tet(tid)
        tet.alive = False
        for e in tet.edges:
            holders = self.edge_to_tets[e]
            holders.discard(tid)
            if not holders:
                rec = self.edges[e]
                rec.alive = False
                self._edge_index.pop((rec.ip, rec.fp), None)
        for f in tet.faces:
            holders = self.face_to_tets[f]
            holders.discard(tid)
            if not holders:
                rec = self.faces[f]
                rec.alive = False
                self._face_index.pop(rec.points, None)

    # ------------------------------------------------------------------
    # access

    def tet(self, t: int) -> TetRecord:
        if not 0 <= t < len(self.tets) or not self.tets[t].alive:
            raise HandleError(f"tet {t} does not exist")
        return self.tets[t]

    def edge(self, e: int) -> EdgeRecord:
        if not 0 <= e < len(self.edges) or not self.edges[e].alive:
            raise HandleError(f"edge {e} does not exist")
        return self.edges[e]

    def face(self, f: int) -> FaceRecord:
        if not 0 <= f < len(self.faces) or not self.faces[f].alive:
            raise HandleError(f"face {f} does not exist")
        return self.faces[f]

    def live_tets(self) -> list[int]:
        return [t.id for t in self.tets if t.alive]

    def live_edges(self) -> list[int]:
        return [e.id for e in self.edges if e.alive]

    def live_faces(self) -> list[int]:
        return [f.id for f in self.faces if f.alive]

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_tets(self) -> int:
        return sum(1 for t in self.tets if t.alive)

    def points_array(self) -> np.ndarray:
        return np.array(self.points, dtype=float).reshape(-1, 3)

    def tet_array(self) -> np.ndarray:
        """Live tet connectivity as an (n, 4) integer array, ascending id."""
        return np.array([t.points for t in self.tets if t.alive], dtype=np.int64).reshape(-1, 4)

    def edge_mid(self, e: int) -> tuple[float, float, float]:
        """The x, y, z edge attributes: always derived from the endpoints."""
        rec = self.edge(e)
        a, b = self.points[rec.ip], self.points[rec.fp]
        return ((a[0] + b[0]) / 2, (a[1] + b[1]) / 2, (a[2] + b[2]) / 2)

    def edge_key(self, e: int):
        """Sorted endpoint coordinates, used by the LESS order."""
        rec = self.edges[e]
        a, b = self.points[rec.ip], self.points[rec.fp]
        return (a, b) if a <= b else (b, a)

    def cached_length(self, e: int) -> float:
        return self._edge_length[e]

    def tet_volume(self, t: int) -> float:
        return signed_volume(*(self.points[p] for p in self.tet(t).points))

    def total_volume(self) -> float:
        return math.fsum(abs(signed_volume(*(self.points[p] for p in t.points)))
                         for t in self.tets if t.alive)

    def is_degenerate(self, t: int) -> bool:
        tet = self.tet(t)
        lmax = max(self._edge_length[e] for e in tet.edges)
        return abs(self.tet_volume(t)) <= DEGENERACY_RTOL * lmax ** 3

    def adjacent_faces(self, t: int, e: int) -> tuple[int, int]:
        """The two faces of tet ``t`` that contain edge ``e``."""
        tet = self.tet(t)
        try:
            k = tet.edges.index(e)
        except ValueError:
            raise HandleError(f"edge {e} is not an edge of tet {t}") from None
        i, j = LOCAL_EDGES[k]
        others = [v for v in range(4) if v not in (i, j)]
        # face opposite vertex v contains both i and j
        return tet.faces[others[0]], tet.faces[others[1]]

    def refresh_geometry(self):
        """Recompute cached edge lengths and LE flags after moving points."""
        for rec in self.edges:
            self._edge_length[rec.id] = math.dist(self.points[rec.ip], self.points[rec.fp])
        for tet in self.tets:
            if tet.alive:
                tet.le = self._le_mask(tet)

    def _le_mask(self, tet: TetRecord) -> tuple[bool, ...]:
        lens = [self._edge_length[e] for e in tet.edges]
        lmax = max(lens)
        return tuple(lmax - l <= LENGTH_RTOL * lmax for l in lens)

    # ------------------------------------------------------------------
    # maintenance

    def compact(self) -> dict[str, list[int]]:
        """Drop tombstoned tets/faces/edges and renumber densely.

        Relative order of surviving entities is preserved.  Returns the
        old-to-new maps (``-1`` for dropped entities).
        """
        emap = [-1] * len(self.edges)
        edges, elen = [], []
        for rec in self.edges:
            if rec.alive:
                emap[rec.id] = len(edges)
                elen.append(self._edge_length[rec.id])
                rec.id = len(edges)
                edges.append(rec)
        fmap = [-1] * len(self.faces)
        faces = []
        for rec in self.faces:
            if rec.alive:
                fmap[rec.id] = len(faces)
                rec.id = len(faces)
                rec.edges = tuple(emap[e] for e in rec.edges)
                faces.append(rec)
        tmap = [-1] * len(self.tets)
        tets = []
        for rec in self.tets:
            if rec.alive:
                tmap[rec.id] = len(tets)
                rec.id = len(tets)
                rec.edges = tuple(emap[e] for e in rec.edges)
                rec.faces = tuple(fmap[f] for f in rec.faces)
                tets.append(rec)
        e2t = [set() for _ in edges]
        f2t = [set() for _ in faces]
        for rec in tets:
            for e in rec.edges:
                e2t[e].add(rec.id)
            for f in rec.faces:
                f2t[f].add(rec.id)
        for rec in edges:
            if rec.midpoint_point is not None and not e2t[rec.id]:
                rec.midpoint_point = None
        self.edges, self.faces, self.tets = edges, faces, tets
        self.edge_to_tets, self.face_to_tets = e2t, f2t
        self._edge_length = elen
        self._edge_index = {(r.ip, r.fp): r.id for r in edges}
        self._face_index = {r.points: r.id for r in faces}
        return {"edges": emap, "faces": fmap, "tets": tmap}

    def copy(self) -> "MeshGraph":
        import copy
        return copy.deepcopy(self)


def less(mesh: MeshGraph, a: int, b: int) -> bool:
    """Strict total order on edges: True iff ``a`` precedes ``b``.

    Longer edges come first (lengths within ``LENGTH_RTOL`` count as equal),
    then the lexicographically smaller sorted endpoint pair, then the smaller
    handle.
    """
    if a == b:
        return False
    la, lb = mesh.cached_length(a), mesh.cached_length(b)
    if not lengths_tied(la, lb):
        return la > lb
    ka, kb = mesh.edge_key(a), mesh.edge_key(b)
    if ka != kb:
        return ka < kb
    return a < b


def less_sorted(mesh: MeshGraph, edges: Iterable[int]) -> list[int]:
    def cmp(a, b):
        if a == b:
            return 0
        return -1 if less(mesh, a, b) else 1
    return sorted(edges, key=cmp_to_key(cmp))


def edge_length(mesh: MeshGraph, e: int) -> float:
    rec = mesh.edge(e)
    return math.dist(mesh.points[rec.ip], mesh.points[rec.fp])


def longest_edges(mesh: MeshGraph, t: int) -> list[int]:
    """Edges of ``t`` tied for maximum length, LESS-ordered.

    Also refreshes the tet's LE flags.
    """
    tet = mesh.tet(t)
    if mesh.is_degenerate(t):
        raise GeometryError(f"tet {t} is degenerate")
    tet.le = mesh._le_mask(tet)
    return less_sorted(mesh, [e for e, flag in zip(tet.edges, tet.le) if flag])


def refinement_edge(mesh: MeshGraph, t: int) -> int:
    """The LESS-minimal edge of ``t``; every bisection of ``t`` uses it."""
    edges = mesh.tet(t).edges
    best = edges[0]
    for e in edges[1:]:
        if less(mesh, e, best):
            best = e
    return best


def validate(mesh: MeshGraph, require_quiescent: bool = True) -> list[Violation]:
    """Check the structural, geometric and conformity invariants.

    Violations are returned as data; an empty list means the mesh is valid.
    With ``require_quiescent`` any broken edge or face is also reported.
    """
    out: list[Violation] = []
    npts = len(mesh.points)

    def bad(kind, entity, msg):
        out.append(Violation(kind, entity, msg))

    for i, p in enumerate(mesh.points):
        if not all(math.isfinite(x) for x in p):
            bad("point", f"point {i}", "non-finite coordinates")

    for rec in mesh.edges:
        if not rec.alive:
            continue
        name = f"edge {rec.id}"
        if rec.ip == rec.fp:
            bad("edge", name, "initial and final point coincide")
            continue
        if not (0 <= rec.ip < npts and 0 <= rec.fp < npts):
            bad("edge", name, "endpoint handle out of range")
            continue
        if rec.midpoint_point is not None:
            if not 0 <= rec.midpoint_point < npts:
                bad("edge", name, "midpoint handle out of range")
            else:
                mid = mesh.edge_mid(rec.id)
                if mesh.points[rec.midpoint_point] != mid:
                    bad("midpoint", name, f"midpoint point {rec.midpoint_point} is not at {mid}")
            if require_quiescent:
                bad("broken", name, "edge is broken in a quiescent mesh")
        holders = mesh.edge_to_tets[rec.id]
        for t in holders:
            if not mesh.tets[t].alive or rec.id not in mesh.tets[t].edges:
                bad("adjacency", name, f"reverse map lists tet {t} which does not use it")
        need = 1 if rec.ae == EdgeKind.BOUNDARY else 3
        if len(holders) < need:
            bad("edge", name, f"{rec.ae.name.lower()} edge belongs to {len(holders)} tets (< {need})")

    boundary_edge_use: dict[int, int] = {}
    for rec in mesh.faces:
        if not rec.alive:
            continue
        name = f"face {rec.id}"
        pts = set()
        for e in rec.edges:
            er = mesh.edges[e]
            if not er.alive:
                bad("face", name, f"references dead edge {e}")
            pts.update((er.ip, er.fp))
        if pts != set(rec.points) or len(pts) != 3:
            bad("face", name, "edges do not bound a triangle")
        holders = mesh.face_to_tets[rec.id]
        for t in holders:
            if not mesh.tets[t].alive or rec.id not in mesh.tets[t].faces:
                bad("adjacency", name, f"reverse map lists tet {t} which does not use it")
        if rec.brf and require_quiescent:
            bad("broken", name, "face is broken in a quiescent mesh")
        if len(holders) not in (1, 2):
            bad("conformity", name, f"shared by {len(holders)} tets")
        elif len(holders) == 1:
            for e in rec.edges:
                boundary_edge_use[e] = boundary_edge_use.get(e, 0) + 1
        else:
            t1, t2 = (mesh.tets[t] for t in holders)
            a, b, c = (mesh.points[p] for p in rec.points)
            o1 = [p for p in t1.points if p not in rec.points]
            o2 = [p for p in t2.points if p not in rec.points]
            if o1 and o2:
                s1 = signed_volume(a, b, c, mesh.points[o1[0]])
                s2 = signed_volume(a, b, c, mesh.points[o2[0]])
                if s1 * s2 >= 0:
                    bad("conformity", name, "neighbouring tets lie on the same side")

    # the boundary surface of a conforming mesh is closed and edge-manifold;
    # a hanging node leaves an edge used by a single boundary face
    for e, count in boundary_edge_use.items():
        if count != 2:
            bad("conformity", f"edge {e}", f"used by {count} boundary faces (hanging node or hole)")

    for tet in mesh.tets:
        if not tet.alive:
            continue
        name = f"tet {tet.id}"
        if len(set(tet.points)) != 4:
            bad("tet", name, "repeated points")
            continue
        tet_edges = set(tet.edges)
        for f in tet.faces:
            fr = mesh.faces[f]
            if not fr.alive:
                bad("tet", name, f"references dead face {f}")
            elif not set(fr.edges) <= tet_edges:
                bad("tet", name, f"face {f} edges are not tet edges")
            if tet.id not in mesh.face_to_tets[f]:
                bad("adjacency", f"face {f}", f"reverse map misses tet {tet.id}")
        for e in tet.edges:
            if not mesh.edges[e].alive:
                bad("tet", name, f"references dead edge {e}")
            elif tet.id not in mesh.edge_to_tets[e]:
                bad("adjacency", f"edge {e}", f"reverse map misses tet {tet.id}")
        coords = [mesh.points[p] for p in tet.points]
        lmax = max(math.dist(coords[i], coords[j]) for i, j in LOCAL_EDGES)
        vol = signed_volume(*coords)
        if abs(vol) <= DEGENERACY_RTOL * lmax ** 3:
            bad("geometry", name, f"degenerate (volume {vol:.3e})")
        if tet.le != mesh._le_mask(tet):
            bad("attribute", name, "LE flags do not match the longest edges")
    return out


def dihedral_angles(coords: Sequence[Sequence[float]]) -> np.ndarray:
    """The six interior dihedral angles (radians) of a tet."""
    p = np.asarray(coords, dtype=float)
    normals = []
    for lf, opp in zip(LOCAL_FACES, range(4)):
        a, b, c = p[list(lf)]
        n = np.cross(b - a, c - a)
        if np.dot(n, p[opp] - a) > 0:
            n = -n
        normals.append(n / np.linalg.norm(n))
    out = []
    for i, j in LOCAL_EDGES:
        # edge (i, j) is shared by the faces opposite the two other vertices
        k, l = [v for v in range(4) if v not in (i, j)]
        out.append(math.pi - math.acos(max(-1.0, min(1.0, float(np.dot(normals[k], normals[l]))))))
    return np.array(out)


def box_mesh(bounds, n=(1, 1, 1)) -> MeshGraph:
    """Kuhn triangulation of an axis-aligned box: 6 tets per sub-cube.

    ``bounds`` is ``[[x0, x1], [y0, y1], [z0, z1]]``; every sub-cube is split
    along its main diagonal so neighbouring cubes conform.
    """
    import itertools

    bounds = np.asarray(bounds, dtype=float)
    nx, ny, nz = (int(k) for k in np.broadcast_to(n, 3))
    if min(nx, ny, nz) < 1 or np.any(bounds[:, 1] <= bounds[:, 0]):
        raise GeometryError(f"invalid box {bounds.tolist()} / divisions {(nx, ny, nz)}")
    xs = np.linspace(*bounds[0], nx + 1)
    ys = np.linspace(*bounds[1], ny + 1)
    zs = np.linspace(*bounds[2], nz + 1)
    pts = np.array([(x, y, z) for z in zs for y in ys for x in xs])

    def idx(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    tets = []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                for perm in itertools.permutations(range(3)):
                    c = [i, j, k]
                    path = [idx(*c)]
                    for axis in perm:
                        c[axis] += 1
                        path.append(idx(*c))
                    tets.append(path)
    return MeshGraph.from_arrays(pts, tets, bounds)
