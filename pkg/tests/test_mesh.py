import numpy as np
import pytest

from cornerheat import (MeshError, TriMesh, audit, build_fan_sector,
                        build_l_shape, build_notched_rectangle, build_square,
                        corner_layers, graded_refine, uniform_refine)
from cornerheat.mesh import dump_mesh, load_mesh


def test_l_shape_counts_and_area(lshape):
    report = audit(lshape)
    assert report["n_vertices"] == 21
    assert report["n_triangles"] == 24
    # Euler: V - E + (T + 1) = 2 on a simply connected mesh
    assert report["n_edges"] == 44
    assert report["n_boundary_edges"] == 16
    assert report["area"] == pytest.approx(3.0, rel=1e-14)


def test_l_shape_corner_metadata(lshape):
    assert len(lshape.corners) == 1
    c = lshape.corners[0]
    np.testing.assert_allclose(lshape.corner_position(0), [0.0, 0.0], atol=0)
    assert c.theta == pytest.approx(1.5 * np.pi)
    assert c.bisector_angle == pytest.approx(0.75 * np.pi)
    assert c.edge_angle == 0.0
    assert lshape.boundary_vertex[c.vertex]


def test_l_shape_mesh_sizes(lshape):
    assert lshape.level == 1
    # congruent right isosceles elements: every diameter is the hypotenuse
    assert lshape.h == pytest.approx(0.5 * np.sqrt(2.0), rel=1e-14)
    assert lshape.h_min == pytest.approx(lshape.h, rel=1e-14)


def test_uniform_refine_counts(lshape, lshape2):
    # midpoint per edge, 4 children per triangle
    assert lshape2.n_vertices == 21 + 44
    assert lshape2.n_triangles == 96
    assert lshape2.level == 2
    assert lshape2.h == pytest.approx(0.5 * lshape.h, rel=1e-14)
    # parent vertices keep their indices, so corner metadata survives
    assert lshape2.corners[0].vertex == lshape.corners[0].vertex
    np.testing.assert_array_equal(lshape2.vertices[:21], lshape.vertices)
    assert audit(lshape2)["area"] == pytest.approx(3.0, rel=1e-13)


def test_vertices_are_read_only(lshape):
    with pytest.raises(ValueError):
        lshape.vertices[0, 0] = 7.0


def test_square_builder():
    sq = build_square()
    report = audit(sq)
    assert report["n_vertices"] == 9
    assert report["n_triangles"] == 8
    assert report["area"] == pytest.approx(1.0)
    assert sq.corners == ()
    inner = ~sq.boundary_vertex
    assert inner.sum() == 1
    np.testing.assert_allclose(sq.vertices[inner][0], [0.5, 0.5])


def test_notched_rectangle(notched):
    report = audit(notched)
    assert report["area"] == pytest.approx(11.0, rel=1e-13)
    thetas = [c.theta for c in notched.corners]
    assert thetas == pytest.approx([1.5 * np.pi, 1.75 * np.pi, 1.75 * np.pi])
    np.testing.assert_allclose(notched.corner_position(0), [2.0, 1.0])
    np.testing.assert_allclose(notched.corner_position(1), [1.0, 2.0])
    np.testing.assert_allclose(notched.corner_position(2), [3.0, 2.0])
    # corner patches are symmetric fans: 6 slices at the apex, 7 at the ends
    for corner, slices in ((0, 6), (1, 7), (2, 7)):
        assert len(corner_layers(notched, corner).layers[0]) == slices


def test_fan_sector():
    fan = build_fan_sector(1.5 * np.pi)
    assert fan.n_triangles == 6
    assert fan.n_vertices == 8
    assert audit(fan)["area"] == pytest.approx(6 * 0.5 * np.sin(np.pi / 4))
    assert fan.corners[0].theta == pytest.approx(1.5 * np.pi)
    with pytest.raises(MeshError):
        build_fan_sector(np.pi / 3)        # not a pi/4 multiple
    with pytest.raises(MeshError):
        build_fan_sector(np.pi / 2)        # not re-entrant
    with pytest.raises(MeshError):
        build_fan_sector(2.0 * np.pi)


def test_graded_refine_pulls_vertices_toward_corner(lshape):
    uni = uniform_refine(lshape)
    graded = graded_refine(lshape, mu=0.5)
    assert graded.n_vertices == uni.n_vertices
    assert graded.h_min < uni.h_min
    # radial map: r -> radius * (r/radius)**(1/mu) inside the grading radius
    r_uni = np.linalg.norm(uni.vertices, axis=1)
    r_graded = np.linalg.norm(graded.vertices, axis=1)
    near = (r_uni > 0.0) & (r_uni < 0.5)
    np.testing.assert_allclose(
        r_graded[near], 0.5 * (r_uni[near] / 0.5) ** 2.0, rtol=1e-13)
    far = r_uni >= 0.5
    np.testing.assert_allclose(graded.vertices[far], uni.vertices[far], atol=0)
    # boundary vertices slide along rays through the corner: area is preserved
    assert audit(graded)["area"] == pytest.approx(3.0, rel=1e-13)
    assert audit(graded)["n_triangles"] == uni.n_triangles


def test_graded_refine_mu_one_is_uniform(lshape):
    g = graded_refine(lshape, mu=1.0)
    u = uniform_refine(lshape)
    np.testing.assert_array_equal(g.vertices, u.vertices)
    np.testing.assert_array_equal(g.triangles, u.triangles)


@pytest.mark.parametrize("mu", [0.0, -0.3, 1.5])
def test_graded_refine_rejects_bad_exponent(lshape, mu):
    with pytest.raises(MeshError):
        graded_refine(lshape, mu=mu)


def test_corner_layers(lshape):
    one = corner_layers(lshape, 0, depth=1)
    assert len(one.layers) == 1
    assert len(one.layers[0]) == 6
    # all layer-1 triangles touch the corner vertex
    cv = lshape.corners[0].vertex
    assert np.all(np.isin(lshape.triangles[one.layers[0]], cv).any(axis=1))
    two = corner_layers(lshape, 0, depth=2)
    assert len(np.intersect1d(two.layers[0], two.layers[1])) == 0
    with pytest.raises(MeshError):
        corner_layers(lshape, 0, depth=50)
    with pytest.raises(MeshError):
        corner_layers(lshape, 0, depth=0)


def test_constructor_rejects_bad_input():
    good_v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    segs = [((0, 0), (1, 0)), ((1, 0), (0, 1)), ((0, 1), (0, 0))]
    TriMesh(good_v, [[0, 1, 2]], segs)
    with pytest.raises(MeshError):
        TriMesh(good_v, [[0, 2, 1]], segs)         # clockwise triangle
    with pytest.raises(MeshError):
        TriMesh(good_v, [[0, 1, 3]], segs)         # index out of range
    with pytest.raises(MeshError):
        TriMesh(good_v[:, :1], [[0, 1, 2]], segs)  # wrong vertex shape


def test_constructor_rejects_untagged_boundary_vertex():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(MeshError):
        TriMesh(v, [[0, 1, 2]], segments=[((0, 0), (1, 0))])


def test_audit_detects_overshared_edge():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 2.0], [0.3, 3.0]])
    tris = [[0, 1, 2], [0, 1, 3], [0, 1, 4]]
    tags = (np.ones(5, dtype=np.uint8), np.zeros(5, dtype=np.int64))
    mesh = TriMesh(v, tris, (), boundary_tags=tags)
    with pytest.raises(MeshError, match="more than two"):
        audit(mesh)


def test_audit_detects_duplicate_vertices():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    kind = np.array([1, 1, 1, 0], dtype=np.uint8)
    seg = np.array([0, 0, 0, -1], dtype=np.int64)
    mesh = TriMesh(v, [[0, 1, 2]], (), boundary_tags=(kind, seg))
    with pytest.raises(MeshError, match="duplicate"):
        audit(mesh)


def test_audit_detects_open_boundary_loop():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]])
    kind = np.ones(4, dtype=np.uint8)
    seg = np.zeros(4, dtype=np.int64)
    mesh = TriMesh(v, [[0, 1, 2]], (), boundary_tags=(kind, seg))
    with pytest.raises(MeshError, match="closed loops"):
        audit(mesh)


def test_audit_detects_untagged_boundary():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    kind = np.zeros(3, dtype=np.uint8)
    seg = np.full(3, -1, dtype=np.int64)
    mesh = TriMesh(v, [[0, 1, 2]], (), boundary_tags=(kind, seg))
    with pytest.raises(MeshError, match="not tagged"):
        audit(mesh)


def test_dump_load_round_trip(tmp_path, notched):
    path = tmp_path / "mesh.txt"
    dump_mesh(notched, path)
    back = load_mesh(path)
    np.testing.assert_array_equal(back.vertices, notched.vertices)
    np.testing.assert_array_equal(back.triangles, notched.triangles)
    np.testing.assert_array_equal(back.boundary_kind, notched.boundary_kind)
    np.testing.assert_array_equal(back.boundary_segment, notched.boundary_segment)
    assert len(back.corners) == len(notched.corners)
    for a, b in zip(back.corners, notched.corners):
        assert a.vertex == b.vertex
        assert a.theta == b.theta
        assert a.bisector_angle == b.bisector_angle
        assert a.edge_angle == b.edge_angle
    audit(back)


def test_load_rejects_unknown_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("tmesh v9 0 0 0\n")
    with pytest.raises(MeshError, match="header"):
        load_mesh(path)
