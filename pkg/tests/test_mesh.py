import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geocurve import synth
from geocurve.errors import IndexOutOfRange, InvalidMesh, ParseError
from geocurve.mesh import (TriangleMesh, format_off, load_mesh, save_off, triangle_geometry,
                           validate)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_smallest_off(tmp_path):
    m = load_mesh(write(tmp_path, "t.off", "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"))
    assert (m.n_vertices, m.n_triangles) == (3, 1)


def test_off_comments_and_blank_lines(tmp_path):
    text = "OFF\n# comment\n\n3 1 0\n0 0 0\n1 0 0 # trailing\n0 1 0\n3 0 1 2\n"
    assert load_mesh(write(tmp_path, "t.off", text)).n_triangles == 1


def test_obj_quad_is_fan_triangulated(tmp_path):
    text = ("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\nusemtl x\n"
            "f 1/1/1 2/1/1 3/1/1 4/1/1\n")
    m = load_mesh(write(tmp_path, "q.obj", text))
    # fan at the first vertex: (0,1,2), (0,2,3)
    assert m.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_face_index_out_of_range_names_line(tmp_path):
    path = write(tmp_path, "bad.off", "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 3\n")
    with pytest.raises(ParseError) as info:
        load_mesh(path)
    assert info.value.line == 6
    assert ":6:" in str(info.value)


@pytest.mark.parametrize("text", ["", "PLY\n", "OFF\n3 1\n", "OFF\n3 1 0\n0 0\n1 0 0\n0 1 0\n3 0 1 2\n",
                                  "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 x 2\n"])
def test_malformed_off(tmp_path, text):
    with pytest.raises(ParseError):
        load_mesh(write(tmp_path, "bad.off", text))


def test_invalid_mesh_carries_report(tmp_path):
    # second triangle is degenerate (collinear)
    text = "OFF\n4 2 0\n0 0 0\n1 0 0\n0 1 0\n2 0 0\n3 0 1 2\n3 0 1 3\n"
    with pytest.raises(InvalidMesh) as info:
        load_mesh(write(tmp_path, "deg.off", text))
    assert info.value.report.degenerate_triangles == [1]


def test_single_triangle_report():
    r = validate(TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]]))
    assert r.ok and r.n_boundary_edges == 3


def test_zero_area_triangle_listed():
    m = TriangleMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]], [[0, 1, 3], [0, 1, 2]])
    r = validate(m)
    assert r.degenerate_triangles == [1] and not r.ok


def test_nonmanifold_and_unreferenced():
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [5, 5, 5]]
    m = TriangleMesh(v, [[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    r = validate(m)
    assert r.nonmanifold_edges == [(0, 1)]
    assert r.unreferenced_vertices == [5]
    assert not r.ok


def test_out_of_range_triangle_rejected():
    with pytest.raises(IndexOutOfRange):
        TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])


def test_sphere_is_closed_with_euler_two():
    m = synth.generate_sphere(3)
    r = validate(m)
    assert r.ok and r.n_boundary_edges == 0
    assert m.n_vertices - len(m.edges) + m.n_triangles == 2


def test_mesh_arrays_are_immutable(plane51):
    with pytest.raises(ValueError):
        plane51.vertices[0, 0] = 1.0


def test_equilateral_geometry():
    m = TriangleMesh([[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(3) / 2, 0]], [[0, 1, 2]])
    lengths, angles = triangle_geometry(m, 0)
    assert np.allclose(lengths, 1.0) and np.allclose(angles, math.pi / 3)


def test_right_triangle_geometry():
    m = TriangleMesh([[0, 0, 0], [3, 0, 0], [0, 4, 0]], [[0, 1, 2]])
    lengths, angles = triangle_geometry(m, 0)
    assert lengths[0] == pytest.approx(5.0)
    assert angles[0] == pytest.approx(math.pi / 2)


def test_triangle_geometry_index_checked():
    m = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    with pytest.raises(IndexOutOfRange):
        triangle_geometry(m, 1)


coord = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(coord, coord, coord), min_size=3, max_size=3))
def test_random_triangle_matches_law_of_cosines(pts):
    p = np.array(pts)
    a, b, c = (np.linalg.norm(p[(i + 2) % 3] - p[(i + 1) % 3]) for i in range(3))
    area = 0.5 * np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0]))
    if max(a, b, c) < 1e-3 or area < 1e-3 * max(a, b, c) ** 2:
        return
    lengths, angles = triangle_geometry(TriangleMesh(p, [[0, 1, 2]]), 0)
    assert np.allclose(lengths, [a, b, c])
    def corner(opp, u, w):
        return math.acos(min(1.0, max(-1.0, (u * u + w * w - opp * opp) / (2 * u * w))))

    oracle = [corner(a, b, c), corner(b, a, c), corner(c, a, b)]
    assert np.allclose(angles, oracle, atol=1e-7)
    assert abs(angles.sum() - math.pi) < 1e-9
    assert lengths[0] < lengths[1] + lengths[2]


def test_off_round_trip_bit_exact(tmp_path):
    m = synth.generate_face(synth.subject_params(5, 2, resolution=32))
    path = str(tmp_path / "f.off")
    save_off(m, path)
    first = load_mesh(path)
    save_off(first, str(tmp_path / "g.off"))
    second = load_mesh(str(tmp_path / "g.off"))
    assert np.array_equal(first.vertices, second.vertices)
    assert np.array_equal(first.triangles, m.triangles)
    assert format_off(first) == format_off(second)
    assert np.allclose(first.vertices, m.vertices, rtol=1e-8, atol=1e-9)


def test_area_invariant_under_reindexing():
    m = synth.generate_sphere(2)
    perm = np.random.default_rng(0).permutation(m.n_vertices)
    inv = np.argsort(perm)
    m2 = TriangleMesh(m.vertices[perm], inv[m.triangles])
    assert m2.area == pytest.approx(m.area, rel=1e-12)


def test_transformed_keeps_triangles(plane51):
    R = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
    m = plane51.transformed(R, [1, 2, 3])
    assert np.array_equal(m.triangles, plane51.triangles)
    assert np.allclose(m.vertices[0], R @ plane51.vertices[0] + [1, 2, 3])
