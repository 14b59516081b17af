import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geocurve import synth
from geocurve.eikonal import solve_distance
from geocurve.errors import DegenerateCurve, LevelOutOfRange
from geocurve.isocurves import (IsoGeodesicCurve, Polyline, curves_to_json, default_levels,
                                extract_descriptor_curves, extract_level_set, orient_about,
                                resample_arclength, select_primary_loop, write_curve_csv)


def barycentric(mesh, tri, p):
    a, b, c = mesh.vertices[mesh.triangles[tri]]
    T = np.column_stack([b - a, c - a])
    uv, *_ = np.linalg.lstsq(T, p - a, rcond=None)
    resid = np.linalg.norm(T @ uv - (p - a))
    return np.array([1 - uv.sum(), uv[0], uv[1]]), resid


def field_at(mesh, field, tri, p):
    w, _ = barycentric(mesh, tri, p)
    return float(w @ field.distances[mesh.triangles[tri]])


def loose(points, closed=True):
    n = len(points)
    return IsoGeodesicCurve(level=1.0, points=np.asarray(points, dtype=float), source=0,
                            triangles=np.zeros(n, dtype=np.int64), closed=closed)


def test_plane_level_is_circle(plane51, plane51_field):
    k = 0.3
    loops = extract_level_set(plane51_field, plane51, k)
    assert len(loops) == 1 and loops[0].closed
    r = np.linalg.norm(loops[0].points[:, :2], axis=1)
    assert np.max(np.abs(r - k)) / k < 0.02


def test_sphere_equator_length(sphere4, sphere4_field):
    k = math.pi / 2
    loops = extract_level_set(sphere4_field, sphere4, k)
    curve = select_primary_loop(loops, sphere4_field, sphere4, k)
    assert abs(curve.length - 2 * math.pi * math.sin(k)) / (2 * math.pi) < 0.02


@pytest.mark.parametrize("k", [0.0, -1.0])
def test_nonpositive_level_rejected(plane51, plane51_field, k):
    with pytest.raises(LevelOutOfRange):
        extract_level_set(plane51_field, plane51, k)


def test_level_at_or_beyond_max_rejected(plane51, plane51_field):
    with pytest.raises(LevelOutOfRange):
        extract_level_set(plane51_field, plane51, plane51_field.max_distance)


@pytest.mark.parametrize("k", [0.1, 0.45, 0.8, 1.05])
def test_points_on_surface_and_on_level(plane51, plane51_field, k):
    for loop in extract_level_set(plane51_field, plane51, k):
        for p, t in zip(loop.points, loop.triangles):
            w, resid = barycentric(plane51, t, p)
            assert resid < 1e-9 and w.min() > -1e-6
            assert abs(field_at(plane51, plane51_field, t, p) - k) <= 1e-6 * k


def test_resampled_points_stay_on_level(sphere4, sphere4_field):
    k = 1.0
    c = resample_arclength(select_primary_loop(extract_level_set(sphere4_field, sphere4, k),
                                               sphere4_field, sphere4, k), 100)
    for p, t in zip(c.points, c.triangles):
        w, resid = barycentric(sphere4, t, p)
        assert resid < 1e-9 and w.min() > -1e-6
        assert abs(field_at(sphere4, sphere4_field, t, p) - k) <= 1e-6 * k


def test_lower_side_on_a_fixed_hand(plane51, plane51_field):
    signs = []
    for k in (0.2, 0.5, 0.9, 1.2):  # the last levels reach past the inscribed circle
        for loop in extract_level_set(plane51_field, plane51, k):
            p = loop.points
            n = len(p) if loop.closed else len(p) - 1
            for i in range(n):
                seg = p[(i + 1) % len(p)] - p[i]
                mid = 0.5 * (p[(i + 1) % len(p)] + p[i])
                signs.append(np.sign(np.cross(seg, -mid)[2]))
    assert set(signs) == {1.0}


def test_half_plane_gives_open_chain():
    m = synth.generate_plane(21)
    src = 10  # middle of the bottom row
    f = solve_distance(m, src)
    loops = extract_level_set(f, m, 0.8)
    assert loops and not any(p.closed for p in loops)
    c = select_primary_loop(loops, f, m, 0.8)
    assert not c.closed
    r = np.linalg.norm(c.points[:, :2] - m.vertices[src, :2], axis=1)
    assert np.max(np.abs(r - 0.8)) < 0.02


def test_primary_loop_prefers_longest_closed(sphere4, sphere4_field):
    equator = extract_level_set(sphere4_field, sphere4, math.pi / 2)[0]
    ang = np.linspace(0, 2 * np.pi, 5, endpoint=False)
    spur = Polyline(np.column_stack([0.05 * np.cos(ang) + 0.9, 0.05 * np.sin(ang), 0 * ang]),
                    np.zeros(5, dtype=np.int64), np.zeros(5, dtype=np.int64), True)
    lengths = [equator.length, spur.length]
    pick = select_primary_loop([spur, equator], sphere4_field, sphere4, math.pi / 2)
    assert np.array_equal(pick.points, equator.points)
    assert lengths[0] > lengths[1]


def test_square_resampling():
    sq = loose([[-0.5, -0.5, 0], [0.5, -0.5, 0], [0.5, 0.5, 0], [-0.5, 0.5, 0]])
    out = resample_arclength(sq, 8)
    expected = [[0, 0.5], [-0.5, 0.5], [-0.5, 0], [-0.5, -0.5], [0, -0.5], [0.5, -0.5],
                [0.5, 0], [0.5, 0.5]]
    # walk direction follows the input order; the seed is the +y axis crossing
    got = out.points[:, :2]
    assert np.allclose(got[0], [0, 0.5])
    assert sorted(map(tuple, np.round(got, 12))) == sorted(map(tuple, np.array(expected, float)))
    chords = np.linalg.norm(np.roll(out.points, -1, axis=0) - out.points, axis=1)
    assert np.allclose(chords, 0.5)


def test_triangle_loop_to_eight_points():
    out = resample_arclength(loose([[0, 1, 0], [-1, -1, 0], [1.5, -0.5, 0]]), 8)
    chords = np.linalg.norm(np.roll(out.points, -1, axis=0) - out.points, axis=1)
    assert out.n_points == 8 and out.uniform
    assert chords.max() / chords.min() - 1 < 0.01


def test_irregular_circle_gets_uniform_angles():
    rng = np.random.default_rng(5)
    t = np.sort(rng.uniform(0, 2 * np.pi, 600))
    r = 2.5
    out = resample_arclength(loose(np.column_stack([r * np.cos(t), r * np.sin(t), 0 * t])), 100)
    ang = np.unwrap(np.arctan2(out.points[:, 1], out.points[:, 0]))
    steps = np.abs(np.diff(np.r_[ang, ang[0] + 2 * np.pi * np.sign(ang[1] - ang[0])]))
    assert np.max(np.abs(steps - 2 * np.pi / 100)) / (2 * np.pi / 100) < 0.01
    assert out.length == pytest.approx(2 * np.pi * r, rel=0.005)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(8, 120))
def test_resampling_properties(seed, M):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(12, 200))
    t = np.sort(rng.uniform(0, 2 * np.pi, n))
    rad = 1 + 0.3 * np.sin(3 * t + rng.uniform(0, 6))
    pts = np.column_stack([rad * np.cos(t), rad * np.sin(t), 0.2 * np.cos(2 * t)])
    c = loose(pts)
    once = resample_arclength(c, M)
    chords = np.linalg.norm(np.roll(once.points, -1, axis=0) - once.points, axis=1)
    assert chords.max() / chords.min() - 1 < 0.01
    twice = resample_arclength(once, M)
    assert np.max(np.abs(twice.points - once.points)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_resampling_preserves_length_of_dense_curves(seed):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 2 * np.pi, int(rng.integers(200, 600))))
    rad = 1 + 0.2 * np.sin(2 * t + rng.uniform(0, 6))
    c = loose(np.column_stack([rad * np.cos(t), rad * np.sin(t), 0.1 * np.cos(3 * t)]))
    once = resample_arclength(c, 100)
    assert abs(once.length - c.length) / c.length < 0.005


def test_resample_rejects_degenerate():
    with pytest.raises(DegenerateCurve):
        resample_arclength(loose([[0, 0, 0], [1e-12, 0, 0], [0, 1e-12, 0]]), 8)
    with pytest.raises(ValueError):
        resample_arclength(loose([[0, 1, 0], [1, 0, 0], [0, -1, 0]]), 7)


def test_orientation_counterclockwise():
    ang = np.linspace(0, 2 * np.pi, 20, endpoint=False)
    cw = loose(np.column_stack([np.cos(-ang), np.sin(-ang), 0 * ang]))
    out = orient_about(cw, [0, 0, 0], [0, 0, 1])
    area = np.cross(out.points, np.roll(out.points, -1, axis=0)).sum(axis=0)[2]
    assert area > 0
    assert np.array_equal(out.points[0], cw.points[0])
    assert orient_about(out, [0, 0, 0], [0, 0, 1]) is out


@pytest.fixture(scope="module")
def face_and_field():
    m = synth.generate_face(synth.subject_params(21, 0, resolution=32))
    return m, solve_distance(m, 0)


def test_face_descriptor_curves_nested(face_and_field):
    mesh, field = face_and_field
    levels = default_levels(field, 5)
    assert levels[-1] == pytest.approx(0.9 * field.max_distance)
    curves = extract_descriptor_curves(field, mesh, levels, 100)
    assert [c.level for c in curves] == levels
    lengths = [c.length for c in curves]
    assert all(a < b for a, b in zip(lengths, lengths[1:]))
    for c, k_next in zip(curves, levels[1:]):
        assert all(field_at(mesh, field, t, p) < k_next for p, t in zip(c.points, c.triangles))
    for c in curves:
        assert c.closed and c.n_points == 100
        rel = c.points - mesh.vertices[0]
        assert np.cross(rel, np.roll(rel, -1, axis=0)).sum(axis=0)[2] > 0
        assert abs(c.points[0, 0]) < 1e-9 and c.points[0, 1] > 0


def test_singleton_and_unsorted_levels(face_and_field):
    mesh, field = face_and_field
    assert len(extract_descriptor_curves(field, mesh, [0.2], 100)) == 1
    with pytest.raises(ValueError):
        extract_descriptor_curves(field, mesh, [0.4, 0.2], 100)


def test_out_of_range_level_annotated(face_and_field):
    mesh, field = face_and_field
    with pytest.raises(LevelOutOfRange) as info:
        extract_descriptor_curves(field, mesh, [0.2, 99.0], 100)
    assert info.value.level == 99.0


def test_curve_exports(tmp_path, face_and_field):
    mesh, field = face_and_field
    curves = extract_descriptor_curves(field, mesh, [0.3], 16)
    import json
    doc = json.loads(curves_to_json(curves))
    assert doc[0]["level"] == 0.3 and len(doc[0]["points"]) == 16
    write_curve_csv(curves[0], tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "x,y,z" and len(lines) == 17
