import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leplume.errors import GeometryError, HandleError
from leplume.mesh import (
    EdgeKind,
    FaceTag,
    MeshGraph,
    box_mesh,
    dihedral_angles,
    edge_length,
    less,
    longest_edges,
    validate,
)


def single(points):
    return MeshGraph.from_arrays(points, [[0, 1, 2, 3]])


def edge_between(mesh, a, b):
    ia = mesh.points.index(tuple(map(float, a)))
    ib = mesh.points.index(tuple(map(float, b)))
    e = mesh.find_edge(ia, ib)
    assert e is not None
    return e


RIGHT = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]
LONG = [(0, 0, 0), (2, 0, 0), (0, 1, 0), (0, 0, 1)]
REGULAR = [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)]


# -- edge_length ----------------------------------------------------------

def test_edge_length_axis_aligned():
    m = single(LONG)
    assert edge_length(m, edge_between(m, (0, 0, 0), (2, 0, 0))) == 2.0


def test_edge_length_diagonal():
    m = MeshGraph.from_arrays([(0, 0, 0), (1, 1, 1), (1, 0, 0), (0, 1, 0)], [[0, 1, 2, 3]])
    assert edge_length(m, edge_between(m, (0, 0, 0), (1, 1, 1))) == pytest.approx(math.sqrt(3), rel=1e-15)


def test_edge_length_small_offset():
    h = 1e-3
    pts = [(1, 2, 3), (1, 2, 3 + h), (1.001, 2, 3), (1, 2.001, 3)]
    m = single(pts)
    assert edge_length(m, edge_between(m, pts[0], pts[1])) == pytest.approx(h, rel=1e-12)


def test_edge_length_unknown_handle():
    m = single(RIGHT)
    with pytest.raises(HandleError):
        edge_length(m, 999)


# -- longest_edges --------------------------------------------------------

def test_longest_edges_unique():
    pts = [(0, 0, 0), (2, 0, 0), (1, 1, 0), (1, 0, 1)]
    m = single(pts)
    assert longest_edges(m, 0) == [edge_between(m, (0, 0, 0), (2, 0, 0))]


def test_longest_edges_long_leg_is_not_longest():
    # in (0,0,0),(2,0,0),(0,1,0),(0,0,1) the two edges leaving (2,0,0) have length sqrt(5) > 2
    m = single(LONG)
    le = longest_edges(m, 0)
    expect = [edge_between(m, (2, 0, 0), (0, 0, 1)), edge_between(m, (2, 0, 0), (0, 1, 0))]
    # equal length, so lexicographic order of the sorted endpoint pairs decides
    assert le == expect
    assert edge_length(m, le[0]) == pytest.approx(math.sqrt(5), rel=1e-15)


def test_longest_edges_regular_all_six():
    m = single(REGULAR)
    le = longest_edges(m, 0)
    assert sorted(le) == sorted(m.tet(0).edges)
    assert all(less(m, le[0], e) for e in le[1:])
    assert all(m.tet(0).le)


def test_longest_edges_hypotenuses():
    m = single(RIGHT)
    # hand enumeration: three unit legs, three hypotenuses of length sqrt(2)
    hyp = [edge_between(m, a, b) for a, b in [((1, 0, 0), (0, 1, 0)), ((1, 0, 0), (0, 0, 1)),
                                              ((0, 1, 0), (0, 0, 1))]]
    le = longest_edges(m, 0)
    assert sorted(le) == sorted(hyp)
    # LESS order among equals: lexicographic on the sorted endpoint pair
    keys = [tuple(sorted((m.points[m.edge(e).ip], m.points[m.edge(e).fp]))) for e in le]
    assert keys == sorted(keys)
    for e, flag in zip(m.tet(0).edges, m.tet(0).le):
        assert flag == (e in hyp)


def test_longest_edges_degenerate():
    m = MeshGraph()
    for p in [(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0)]:
        m.add_point(p)
    t = m.add_tet([0, 1, 2, 3])
    with pytest.raises(GeometryError):
        longest_edges(m, t)


# -- less -----------------------------------------------------------------

def test_less_length_dominates():
    m = single(LONG)
    a = edge_between(m, (0, 0, 0), (2, 0, 0))
    b = edge_between(m, (0, 0, 0), (0, 1, 0))
    assert less(m, a, b) and not less(m, b, a)


def test_less_lexicographic():
    m = box_mesh([[0, 1], [0, 1], [0, 1]])
    a = edge_between(m, (0, 0, 0), (1, 0, 0))
    b = edge_between(m, (0, 0, 1), (1, 0, 1))
    assert less(m, a, b) and not less(m, b, a)


def test_less_id_tiebreak():
    # two disconnected copies of the same tet: identical geometry, distinct ids
    m = MeshGraph()
    for p in RIGHT + RIGHT:
        m.add_point(p)
    m.add_tet([0, 1, 2, 3])
    m.add_tet([4, 5, 6, 7])
    a = m.find_edge(0, 1)
    b = m.find_edge(4, 5)
    assert a < b
    assert less(m, a, b) and not less(m, b, a)


# -- validate -------------------------------------------------------------

def test_validate_single_tet():
    assert validate(single(RIGHT)) == []


def test_validate_bad_midpoint():
    m = single(RIGHT)
    e = edge_between(m, (0, 0, 0), (1, 0, 0))
    m.edge(e).midpoint_point = m.add_point((0.4, 0.0, 0.0))
    bad = validate(m, require_quiescent=False)
    assert len(bad) == 1
    assert bad[0].kind == "midpoint" and bad[0].entity == f"edge {e}"


def test_validate_inconsistent_reverse_adjacency():
    m = box_mesh([[0, 1], [0, 1], [0, 1]])
    f = next(f.id for f in m.faces if f.alive and len(m.face_to_tets[f.id]) == 2)
    m.face_to_tets[f].discard(min(m.face_to_tets[f]))
    bad = validate(m)
    assert any(v.kind == "adjacency" and v.entity == f"face {f}" for v in bad)


def test_validate_reports_broken_edges():
    m = single(RIGHT)
    e = edge_between(m, (0, 0, 0), (1, 0, 0))
    m.edge(e).midpoint_point = m.add_point((0.5, 0.0, 0.0))
    assert validate(m, require_quiescent=False) == []
    assert [v.kind for v in validate(m)] == ["broken"]


def test_validate_hanging_node():
    # a box6 with one tet replaced by its two halves: the neighbours keep the unsplit edge
    m = box_mesh([[0, 1], [0, 1], [0, 1]])
    t = m.tet(0)
    a, b = m.edge(max(t.edges, key=m.cached_length)).points
    mid = m.add_point(m.edge_mid(m.find_edge(a, b)))
    q1 = [mid if p == b else p for p in t.points]
    q2 = [mid if p == a else p for p in t.points]
    m.add_tet(q1)
    m.add_tet(q2)
    m.remove_tet(0)
    assert any(v.kind == "conformity" for v in validate(m))


# -- construction ---------------------------------------------------------

def test_box_mesh_kuhn():
    m = box_mesh([[0, 2], [0, 3], [0, 5]])
    assert (m.n_points, m.n_tets) == (8, 6)
    assert validate(m) == []
    assert m.total_volume() == pytest.approx(30.0, rel=1e-14)
    vols = [m.tet_volume(t) for t in m.live_tets()]
    assert all(v == pytest.approx(5.0, rel=1e-14) for v in vols)


def test_boundary_tags_and_ae():
    m = box_mesh([[0, 1], [0, 1], [0, 1]], (2, 2, 2))
    tags = {f.tag for f in m.faces if f.alive}
    assert tags == {FaceTag.INTERIOR, FaceTag.XMIN, FaceTag.XMAX, FaceTag.YMIN, FaceTag.YMAX,
                    FaceTag.GROUND, FaceTag.TOP}
    for e in m.edges:
        if e.alive:
            a, b = (np.array(m.points[p]) for p in e.points)
            # boundary edges lie inside one bounding plane
            on_boundary = any(a[k] == b[k] and a[k] in (0.0, 1.0) for k in range(3))
            assert (e.ae == EdgeKind.BOUNDARY) == on_boundary


def test_from_arrays_reorients():
    m = MeshGraph.from_arrays(RIGHT, [[1, 0, 2, 3]])
    assert m.tet_volume(0) > 0


def test_dihedral_regular():
    ang = dihedral_angles(REGULAR)
    assert np.allclose(ang, math.acos(1 / 3), rtol=1e-14)


def test_compact_renumbers_densely():
    m = box_mesh([[0, 1], [0, 1], [0, 1]])
    m.remove_tet(2)
    m.compact()
    assert [t.id for t in m.tets] == list(range(5))
    assert all(t.alive for t in m.tets)
    assert all(e.alive for e in m.edges) and all(f.alive for f in m.faces)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.2, 0.2), min_size=24, max_size=24),
       st.tuples(st.floats(0.5, 5), st.floats(0.5, 5), st.floats(0.5, 5)))
def test_perturbed_box_is_valid(jitter, size):
    base = box_mesh([[0, size[0]], [0, size[1]], [0, size[2]]])
    pts = base.points_array() + np.reshape(jitter, (8, 3)) * np.array(size)
    m = MeshGraph.from_arrays(pts, base.tet_array())
    if any(m.is_degenerate(t) for t in m.live_tets()):
        return
    vols = [m.tet_volume(t) for t in m.live_tets()]
    assert all(v > 0 for v in vols)
    # mid is derived: exact average of the endpoints
    for e in m.edges:
        a, b = (np.array(m.points[p]) for p in e.points)
        assert m.edge_mid(e.id) == tuple((a + b) / 2)
