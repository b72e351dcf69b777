"""Longest-edge bisection expressed as four graph-grammar productions.

Every production shares one right-hand side: the tet is bisected across the
matched edge ``e1``.  They differ only in their applicability predicate,
i.e. in which broken edges/faces they expect around ``e1``:

==== ===========================================================
P1   no broken edges on the tet; the tet is marked (R)
P2   some broken edge, neither face adjacent to ``e1`` broken
P3   exactly one of the two faces adjacent to ``e1`` broken
P4   both faces adjacent to ``e1`` broken
==== ===========================================================

The control loop applies productions until none is applicable anywhere.
"""
from __future__ import annotations

import heapq
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from .errors import GeometryError, HandleError, NonTerminationError, PreconditionError
from .mesh import (
    DEGENERACY_RTOL,
    EdgeKind,
    FaceTag,
    MeshGraph,
    less,
    less_sorted,
    refinement_edge,
    signed_volume,
)

log = logging.getLogger(__name__)

__all__ = [
    "ProductionKind", "Match", "RefinePlan", "RefineSummary", "less",
    "predicate_p1", "predicate_p2", "predicate_p3", "predicate_p4",
    "find_match", "apply_production", "refine", "refine_uniform",
]


class ProductionKind(Enum):
    P1 = 1
    P2 = 2
    P3 = 3
    P4 = 4


@dataclass(frozen=True)
class Match:
    tet: int
    edge: int
    kind: ProductionKind


@dataclass
class RefinePlan:
    marked: set[int]
    max_passes: int | None = None  # default 10 * (tets + marked), set by refine()

    def __post_init__(self):
        self.marked = set(int(t) for t in self.marked)
        if self.max_passes is not None and self.max_passes < 1:
            raise ValueError("max_passes must be positive")


@dataclass
class RefineSummary:
    passes: int = 0
    applied: Counter = field(default_factory=Counter)
    n_tets: int = 0
    n_points: int = 0

    @property
    def bisections(self) -> int:
        return sum(self.applied.values())

    def as_dict(self) -> dict:
        return {
            "passes": self.passes,
            "applied": {k.name: self.applied.get(k, 0) for k in ProductionKind},
            "n_tets": self.n_tets,
            "n_points": self.n_points,
        }


class _Local:
    """Attribute snapshot of one tet around a candidate edge ``e1``."""

    __slots__ = ("k", "edges", "le", "br", "brf1", "brf2", "r")

    def __init__(self, mesh: MeshGraph, t: int, e1: int):
        tet = mesh.tet(t)
        try:
            self.k = tet.edges.index(e1)
        except ValueError:
            raise HandleError(f"edge {e1} is not an edge of tet {t}") from None
        self.edges = tet.edges
        self.le = tet.le
        self.br = [mesh.edges[e].br for e in tet.edges]
        f1, f2 = mesh.adjacent_faces(t, e1)
        self.brf1 = mesh.faces[f1].brf
        self.brf2 = mesh.faces[f2].brf
        self.r = tet.r

    def others(self):
        return (j for j in range(6) if j != self.k)

    def broken_longest_precedes(self, mesh) -> bool:
        # ANY(BRj AND LEj AND LESS(E1, Ej)); LESS(E1, Ej) reads "Ej before E1"
        e1 = self.edges[self.k]
        return any(self.br[j] and self.le[j] and less(mesh, self.edges[j], e1)
                   for j in self.others())


def predicate_p1(mesh: MeshGraph, t: int, e1: int) -> bool:
    s = _Local(mesh, t, e1)
    # P1 configuration: no broken edge on the tet (keeps P1 and P2 disjoint)
    if any(s.br):
        return False
    k = s.k
    e1 = s.edges[k]
    return ((not s.br[k] and s.le[k])
            and (s.r or any(s.br[j] for j in s.others()))
            and not (s.brf1 or s.brf2)
            and not any(s.br[j] and s.le[j] for j in s.others())
            and not any(not s.br[j] and s.le[j] and less(mesh, s.edges[j], e1)
                        for j in s.others()))


def predicate_p2(mesh: MeshGraph, t: int, e1: int) -> bool:
    s = _Local(mesh, t, e1)
    if not any(s.br):
        return False
    return s.le[s.k] and not (s.brf1 or s.brf2) and not s.broken_longest_precedes(mesh)


def predicate_p3(mesh: MeshGraph, t: int, e1: int) -> bool:
    # face labels are interchangeable: exactly one adjacent face is broken
    s = _Local(mesh, t, e1)
    return s.le[s.k] and (s.brf1 != s.brf2) and not s.broken_longest_precedes(mesh)


def predicate_p4(mesh: MeshGraph, t: int, e1: int) -> bool:
    s = _Local(mesh, t, e1)
    return s.le[s.k] and s.brf1 and s.brf2 and not s.broken_longest_precedes(mesh)


PREDICATES = {
    ProductionKind.P1: predicate_p1,
    ProductionKind.P2: predicate_p2,
    ProductionKind.P3: predicate_p3,
    ProductionKind.P4: predicate_p4,
}


def classify(mesh: MeshGraph, t: int, e1: int) -> ProductionKind:
    """Production whose left-hand side matches the configuration at ``e1``."""
    tet = mesh.tet(t)
    if not any(mesh.edges[e].br for e in tet.edges):
        return ProductionKind.P1
    f1, f2 = mesh.adjacent_faces(t, e1)
    nbroken = mesh.faces[f1].brf + mesh.faces[f2].brf
    return (ProductionKind.P2, ProductionKind.P3, ProductionKind.P4)[nbroken]


def find_match(mesh: MeshGraph, t: int) -> Match | None:
    """First applicable production on ``t``, trying edges in LESS order."""
    tet = mesh.tet(t)
    edges = mesh.edges
    # every predicate needs R or some broken edge on the tet
    if not tet.r and not any(edges[e].midpoint_point is not None for e in tet.edges):
        return None
    first = refinement_edge(mesh, t)
    kind = classify(mesh, t, first)
    if PREDICATES[kind](mesh, t, first):
        return Match(t, first, kind)
    rest = less_sorted(mesh, [e for e in mesh.tet(t).edges if e != first])
    for e in rest:
        kind = classify(mesh, t, e)
        if PREDICATES[kind](mesh, t, e):
            return Match(t, e, kind)
    return None


def apply_production(mesh: MeshGraph, m: Match, check: bool = True) -> tuple[int, int]:
    """Bisect ``m.tet`` across ``m.edge`` (the shared right-hand side).

    The midpoint is reused when the edge is already broken.  The two faces
    adjacent to the edge are split; any of them still held by a neighbour is
    flagged broken.  Children start unmarked.
    """
    if check and not PREDICATES[m.kind](mesh, m.tet, m.edge):
        raise PreconditionError(f"{m.kind.name} is not applicable to tet {m.tet} at edge {m.edge}")
    tet = mesh.tet(m.tet)
    edge = mesh.edge(m.edge)
    a, b = edge.ip, edge.fp
    pts = list(tet.points)
    ia, ib = pts.index(a), pts.index(b)

    q1 = list(pts)
    q2 = list(pts)
    pa, pb = mesh.points[a], mesh.points[b]
    mid_coords = ((pa[0] + pb[0]) / 2, (pa[1] + pb[1]) / 2, (pa[2] + pb[2]) / 2)
    lmax = max(mesh.cached_length(e) for e in tet.edges)
    q1[ib] = q2[ia] = -1
    for q in (q1, q2):
        coords = [mid_coords if p < 0 else mesh.points[p] for p in q]
        if abs(signed_volume(*coords)) <= DEGENERACY_RTOL * (lmax / 2) ** 3:
            raise GeometryError(f"bisecting tet {m.tet} at edge {m.edge} creates a degenerate child")

    mid = edge.midpoint_point
    if mid is None:
        mid = mesh.add_point(mid_coords)
        edge.midpoint_point = mid
    q1[ib] = mid
    q2[ia] = mid

    mesh.get_or_create_edge(a, mid, edge.ae)
    mesh.get_or_create_edge(mid, b, edge.ae)
    split_faces = mesh.adjacent_faces(m.tet, m.edge)
    for f in split_faces:
        face = mesh.faces[f]
        opp = next(p for p in face.points if p != a and p != b)
        ae = EdgeKind.INTERIOR if face.tag == FaceTag.INTERIOR else EdgeKind.BOUNDARY
        mesh.get_or_create_edge(mid, opp, ae)
        mesh.get_or_create_face(a, mid, opp, face.tag)
        mesh.get_or_create_face(mid, b, opp, face.tag)

    # children first, so edges/faces shared with the parent survive its removal
    t1 = mesh.add_tet(q1)
    t2 = mesh.add_tet(q2)
    mesh.remove_tet(m.tet)
    for f in split_faces:
        face = mesh.faces[f]
        if face.alive:
            face.brf = True
    return t1, t2


def refine(mesh: MeshGraph, plan: RefinePlan) -> RefineSummary:
    """Drive the mesh to a conforming fixpoint after marking ``plan.marked``.

    Tets are visited in ascending handle order from a worklist seeded with
    the marked tets; every rewrite enqueues the children and every live tet
    touching the bisected edge or the split faces.  A full scan then checks
    that no production applies anywhere.  The mesh is compacted on return,
    so handles are renumbered.
    """
    for t in plan.marked:
        mesh.tet(t).r = True
    max_passes = plan.max_passes or 10 * (mesh.n_tets + len(plan.marked))
    summary = RefineSummary()
    heap = sorted(plan.marked)
    queued = set(heap)

    def push(t):
        if t not in queued:
            queued.add(t)
            heapq.heappush(heap, t)

    while True:
        summary.passes += 1
        if summary.passes > max_passes:
            raise _stuck(mesh, f"no fixpoint after {max_passes} passes")
        while heap:
            t = heapq.heappop(heap)
            queued.discard(t)
            if not mesh.tets[t].alive:
                continue
            m = find_match(mesh, t)
            if m is None:
                continue
            split_faces = mesh.adjacent_faces(t, m.edge)
            children = apply_production(mesh, m, check=False)
            summary.applied[m.kind] += 1
            for c in children:
                push(c)
            for n in mesh.edge_to_tets[m.edge]:
                push(n)
            for f in split_faces:
                for n in mesh.face_to_tets[f]:
                    push(n)
        pending = [t.id for t in mesh.tets if t.alive and find_match(mesh, t.id) is not None]
        if not pending:
            break
        log.debug("pass %d: %d tets still rewritable", summary.passes, len(pending))
        for t in pending:
            push(t)

    if any(e.alive and e.br for e in mesh.edges) or any(f.alive and f.brf for f in mesh.faces):
        raise _stuck(mesh, "fixpoint reached with broken entities left")
    mesh.compact()
    summary.n_tets = mesh.n_tets
    summary.n_points = mesh.n_points
    return summary


def _stuck(mesh, msg):
    edges = [e.id for e in mesh.edges if e.alive and e.br]
    faces = [f.id for f in mesh.faces if f.alive and f.brf]
    return NonTerminationError(f"{msg}; broken edges {edges[:20]}, broken faces {faces[:20]}",
                               edges, faces)


def refine_uniform(mesh: MeshGraph, rounds: int = 1, max_passes: int | None = None) -> list[int]:
    """Mark every tet for ``rounds`` rounds; returns node counts per round."""
    counts = []
    for _ in range(rounds):
        refine(mesh, RefinePlan(set(mesh.live_tets()), max_passes))
        counts.append(mesh.n_points)
    return counts


def refine_tets(mesh: MeshGraph, marked: Iterable[int], max_passes: int | None = None) -> RefineSummary:
    return refine(mesh, RefinePlan(set(marked), max_passes))
