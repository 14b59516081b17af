"""Iso-geodesic level curves of a distance field on a triangle mesh."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq, least_squares

from .eikonal import GeodesicDistanceField
from .errors import DegenerateCurve, EmptyLevelSet, LevelOutOfRange
from .mesh import TriangleMesh

DEFAULT_SAMPLES = 100
DEFAULT_LEVEL_FRACTION = 0.9
MIN_SAMPLES = 8


@dataclass(frozen=True)
class Polyline:
    """One connected piece of a level set.

    ``points[i]`` lies on mesh edge ``edges[i]``; the segment from point ``i``
    to point ``i + 1`` lies inside triangle ``triangles[i]``. For closed loops
    the last point connects back to the first.
    """

    points: np.ndarray
    edges: np.ndarray
    triangles: np.ndarray
    closed: bool

    @property
    def length(self) -> float:
        return polyline_length(self.points, self.closed)


@dataclass(frozen=True)
class IsoGeodesicCurve:
    """Closed, ordered polyline at geodesic distance ``level`` from ``source``.

    ``closed`` is False when the level set ran into the mesh boundary; the
    closing chord is then implicit. ``triangles[i]`` is a mesh triangle that
    contains ``points[i]``.
    """

    level: float
    points: np.ndarray
    source: int
    triangles: np.ndarray
    uniform: bool = False
    closed: bool = True

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def length(self) -> float:
        return polyline_length(self.points, True)

    def to_dict(self) -> dict:
        return {"level": float(self.level), "points": self.points.tolist()}


def polyline_length(points: np.ndarray, closed: bool = True) -> float:
    seg = np.diff(points, axis=0)
    total = float(np.linalg.norm(seg, axis=1).sum())
    if closed and len(points) > 1:
        total += float(np.linalg.norm(points[0] - points[-1]))
    return total


def _check_level(field: GeodesicDistanceField, k: float) -> None:
    kmax = field.max_distance
    if not (k > 0.0):
        raise LevelOutOfRange(f"level {k} must be > 0 (k = 0 collapses to the reference point)")
    if not (k < kmax):
        raise LevelOutOfRange(f"level {k} must be below the max distance {kmax} (empty level set)")


def extract_level_set(field: GeodesicDistanceField, mesh: TriangleMesh, k: float) -> list[Polyline]:
    """All connected pieces of the level set ``{p : F(p) = k}`` of the linearly interpolated field.

    Vertices with value >= k count as above the level. Segments are joined
    through the mesh edges they cross and each piece is oriented so that the
    lower-valued side lies on its left with respect to the triangle winding.
    Pieces ending on the mesh boundary are returned with ``closed=False``.
    """
    _check_level(field, k)
    f = np.asarray(field.distances)
    T = mesh.triangles
    V = mesh.vertices
    ok = field.known[T].all(axis=1)
    above = f[T] >= k
    n_above = above.sum(axis=1)
    crossed = np.flatnonzero(ok & (n_above > 0) & (n_above < 3))
    if len(crossed) == 0:
        raise EmptyLevelSet(f"no triangle crosses level {k}")

    edge_id = mesh.edge_index
    point_of_edge: dict[int, np.ndarray] = {}

    def crossing(i, j):
        a, b = (i, j) if i < j else (j, i)
        e = edge_id[(a, b)]
        p = point_of_edge.get(e)
        if p is None:
            t = (k - f[a]) / (f[b] - f[a])
            p = V[a] + t * (V[b] - V[a])
            point_of_edge[e] = p
        return e

    # each crossed triangle gives one segment from its up-crossing edge to its down-crossing edge
    seg_start, seg_end, seg_tri = [], [], []
    for t in crossed.tolist():
        tri = T[t].tolist()
        up = down = None
        for s in range(3):
            i, j = tri[s], tri[(s + 1) % 3]
            ai, aj = f[i] >= k, f[j] >= k
            if not ai and aj:
                up = crossing(i, j)
            elif ai and not aj:
                down = crossing(i, j)
        seg_start.append(up)
        seg_end.append(down)
        seg_tri.append(t)

    by_edge: dict[int, list[int]] = {}
    for s, (a, b) in enumerate(zip(seg_start, seg_end)):
        by_edge.setdefault(a, []).append(s)
        by_edge.setdefault(b, []).append(s)

    visited = [False] * len(seg_tri)

    def other_edge(s, e):
        return seg_end[s] if seg_start[s] == e else seg_start[s]

    def extend(s, e):
        # walk from segment s through its endpoint edge e; returns [(edge, seg), ...]
        out = []
        while True:
            nxt = [x for x in by_edge[e] if x != s and not visited[x]]
            if not nxt:
                return out, e
            s = nxt[0]
            visited[s] = True
            out.append((e, s))
            e = other_edge(s, e)

    pieces = []
    for s0 in range(len(seg_tri)):
        if visited[s0]:
            continue
        visited[s0] = True
        fwd, end_e = extend(s0, seg_end[s0])
        bwd, beg_e = extend(s0, seg_start[s0])
        # assemble edges e_0 .. e_n and the segment joining each consecutive pair
        seq_edges = [beg_e]
        seq_segs = []
        for e, s in reversed(bwd):
            seq_segs.append(s)
            seq_edges.append(e)
        seq_segs.append(s0)
        seq_edges.append(seg_end[s0])
        for e, s in fwd:
            seq_segs.append(s)
            seq_edges.append(other_edge(s, e))
        closed = seq_edges[0] == seq_edges[-1] and len(seq_segs) > 2
        if closed:
            seq_edges = seq_edges[:-1]
        # orient so most segments run start -> end
        forward = sum(1 for i, s in enumerate(seq_segs) if seg_start[s] == seq_edges[i])
        if forward * 2 < len(seq_segs):
            if closed:
                seq_edges = [seq_edges[0]] + seq_edges[1:][::-1]
                seq_segs = seq_segs[::-1]
            else:
                seq_edges = seq_edges[::-1]
                seq_segs = seq_segs[::-1]
        pts = np.array([point_of_edge[e] for e in seq_edges])
        tris = [seg_tri[s] for s in seq_segs]
        if not closed:
            # the last point has no outgoing segment; it lies in the previous segment's triangle
            tris.append(tris[-1])
        pieces.append(Polyline(points=pts, edges=np.array(seq_edges),
                               triangles=np.array(tris), closed=closed))
    return pieces


def select_primary_loop(loops: list[Polyline], field: GeodesicDistanceField,
                        mesh: TriangleMesh, level: float | None = None) -> IsoGeodesicCurve:
    """Longest closed loop, or the longest open chain (flagged open) if none closes."""
    if not loops:
        raise EmptyLevelSet("no level-set pieces to choose from")
    closed = [p for p in loops if p.closed]
    pool = closed if closed else loops
    best = max(pool, key=lambda p: p.length)
    if level is None:
        level = float(np.mean(_interpolate_on_edges(field, mesh, best)))
    return IsoGeodesicCurve(level=float(level), points=best.points, source=field.source,
                            triangles=best.triangles, uniform=False, closed=best.closed)


def _interpolate_on_edges(field, mesh, piece):
    e = mesh.edges[piece.edges]
    f = field.distances
    V = mesh.vertices
    t = np.linalg.norm(piece.points - V[e[:, 0]], axis=1) / np.linalg.norm(
        V[e[:, 1]] - V[e[:, 0]], axis=1)
    return f[e[:, 0]] + t * (f[e[:, 1]] - f[e[:, 0]])


def orient_about(curve: IsoGeodesicCurve, center, normal) -> IsoGeodesicCurve:
    """Reverse the traversal if the curve winds clockwise about ``normal`` at ``center``."""
    p = curve.points - np.asarray(center)
    cr = np.cross(p, np.roll(p, -1, axis=0))
    if float(cr.sum(axis=0) @ np.asarray(normal)) >= 0.0:
        return curve
    order = np.r_[0, np.arange(len(p) - 1, 0, -1)]
    # reversed closed loop: new segment i is old segment n-1-i
    seg = curve.triangles[::-1] if curve.closed else curve.triangles[order]
    return replace(curve, points=curve.points[order], triangles=seg)


def _seed_position(points, cum):
    # arc position of the crossing with the half-plane x = 0, y > 0 (largest y if several)
    n = len(points)
    best = None
    for i in range(n):
        p, q = points[i], points[(i + 1) % n]
        if (p[0] <= 0.0 <= q[0] or q[0] <= 0.0 <= p[0]) and p[0] != q[0]:
            t = p[0] / (p[0] - q[0])
            y = p[1] + t * (q[1] - p[1])
            if y > 0.0 and (best is None or y > best[0]):
                best = (y, cum[i] + t * (cum[i + 1] - cum[i]))
        elif p[0] == 0.0 and q[0] == 0.0 and p[1] > 0.0:
            if best is None or p[1] > best[0]:
                best = (p[1], cum[i])
    if best is not None:
        return best[1]
    ang = np.abs(np.arctan2(points[:, 0], points[:, 1]))
    return cum[int(np.argmin(ang))]


class _ClosedPolyline:
    def __init__(self, points):
        self.p = np.asarray(points, dtype=float)
        self.n = len(self.p)
        seg = np.roll(self.p, -1, axis=0) - self.p
        self.seg = seg
        self.seglen = np.linalg.norm(seg, axis=1)
        self.cum = np.r_[0.0, np.cumsum(self.seglen)]
        self.length = float(self.cum[-1])

    def locate(self, s):
        # segment index and local parameter of arc position s (any real, wrapped)
        L = self.length
        w, r = divmod(s, L)
        j = int(np.searchsorted(self.cum, r, side="right")) - 1
        j = min(max(j, 0), self.n - 1)
        ln = self.seglen[j]
        tau = (r - self.cum[j]) / ln if ln > 0 else 0.0
        return int(w), j, min(max(tau, 0.0), 1.0)

    def point(self, s):
        _, j, tau = self.locate(s)
        return self.p[j] + tau * self.seg[j], j

    def step(self, s, ell):
        """Smallest arc position after ``s`` at chord distance ``ell`` from point(s)."""
        x, _ = self.point(s)
        w, j, tau = self.locate(s)
        base = w * self.length
        for _ in range(2 * self.n + 2):
            ln = self.seglen[j]
            if ln > 0:
                end = self.p[(j + 1) % self.n]
                if np.dot(end - x, end - x) >= ell * ell:
                    d = self.p[j] - x
                    e = self.seg[j]
                    a = float(e @ e)
                    b = 2.0 * float(d @ e)
                    c = float(d @ d) - ell * ell
                    root = (-b + math.sqrt(max(b * b - 4 * a * c, 0.0))) / (2 * a)
                    root = min(max(root, tau), 1.0)
                    return base + self.cum[j] + root * ln
            tau = 0.0
            j += 1
            if j == self.n:
                j = 0
                base += self.length
        raise DegenerateCurve("chord walk did not terminate")


def _equalize_chords(poly: _ClosedPolyline, s0: float, M: int) -> list[float]:
    # unknowns: increments of the M - 1 free arc positions (log-parametrized to keep order)
    L = poly.length

    def positions(x):
        w = np.exp(x)
        return s0 + L * np.cumsum(w[:-1]) / w.sum()

    def residual(x):
        s = np.r_[s0, positions(x), s0 + L]
        pts = np.array([poly.point(v)[0] for v in s])
        c = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        return c / c.mean() - 1.0

    sol = least_squares(residual, np.zeros(M), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return [s0, *positions(sol.x).tolist(), s0 + L]


def resample_arclength(curve: IsoGeodesicCurve, M: int = DEFAULT_SAMPLES) -> IsoGeodesicCurve:
    """Resample to ``M`` points spaced uniformly along the closed polyline.

    The first point is the crossing with the half-plane x = 0, y > 0. The
    spacing is solved so that all M chords, including the closing one, have
    equal length; resampling an already resampled curve therefore reproduces
    it.
    """
    if M < MIN_SAMPLES:
        raise ValueError(f"M must be >= {MIN_SAMPLES}")
    if curve.n_points < 3:
        raise DegenerateCurve("need at least 3 points to resample")
    poly = _ClosedPolyline(curve.points)
    L = poly.length
    if L < 1e-9:
        raise DegenerateCurve(f"curve length {L} below 1e-9")
    s0 = _seed_position(poly.p, poly.cum)

    def walk(ell):
        out = [s0]
        s = s0
        for _ in range(M):
            s = poly.step(s, ell)
            out.append(s)
        return out

    def residual(ell):
        return walk(ell)[-1] - (s0 + L)

    # chords never exceed arcs, so L / M is (up to rounding) an upper bound
    hi = (L / M) * (1.0 + 1e-9)
    lo = 0.5 * L / M
    while residual(lo) > 0 and lo > 1e-6 * hi:
        lo *= 0.5
    if residual(hi) < 0:
        raise DegenerateCurve("could not bracket the resampling chord length")
    ell = brentq(residual, lo, hi, xtol=1e-15 * L, rtol=1e-15, maxiter=200)
    positions = walk(ell)
    closing = np.linalg.norm(poly.point(positions[-2])[0] - poly.point(s0)[0])
    if abs(closing - ell) > 1e-9 * ell:
        # sharp corners make the walk jump past the closure; equalize chords directly
        positions = _equalize_chords(poly, s0, M)
    positions = positions[:M]
    pts, tris = [], []
    src_tris = curve.triangles
    for s in positions:
        p, j = poly.point(s)
        pts.append(p)
        tris.append(src_tris[j] if j < len(src_tris) else src_tris[-1])
    return replace(curve, points=np.array(pts), triangles=np.array(tris), uniform=True)


def default_levels(field: GeodesicDistanceField, K: int,
                   fraction: float = DEFAULT_LEVEL_FRACTION) -> list[float]:
    """K levels uniformly spaced in (0, fraction * max distance]."""
    if K < 1:
        raise ValueError("K must be >= 1")
    top = fraction * field.max_distance
    return [top * (i + 1) / K for i in range(K)]


def extract_descriptor_curves(field: GeodesicDistanceField, mesh: TriangleMesh,
                              levels, M: int = DEFAULT_SAMPLES) -> list[IsoGeodesicCurve]:
    """One oriented, resampled iso-geodesic curve per level, in level order."""
    levels = [float(k) for k in levels]
    if not levels:
        raise ValueError("at least one level is required")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"levels must be strictly increasing, got {levels}")
    center = mesh.vertices[field.source]
    normal = mesh.vertex_normals[field.source]
    curves = []
    for k in levels:
        try:
            loops = extract_level_set(field, mesh, k)
            curve = select_primary_loop(loops, field, mesh, level=k)
            curve = orient_about(curve, center, normal)
            curves.append(resample_arclength(curve, M))
        except (LevelOutOfRange, EmptyLevelSet, DegenerateCurve) as exc:
            err = type(exc)(f"level {k}: {exc}")
            err.level = k
            raise err from exc
    return curves


def curves_to_json(curves: list[IsoGeodesicCurve]) -> str:
    return json.dumps([c.to_dict() for c in curves], indent=1) + "\n"


def write_curve_csv(curve: IsoGeodesicCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z"])
        for p in curve.points.tolist():
            w.writerow([f"{x:.9g}" for x in p])
