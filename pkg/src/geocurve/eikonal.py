"""Fast Marching solution of the Eikonal equation |grad u| = 1 on triangle meshes.

The front is propagated from a single source vertex in order of nondecreasing
arrival value. Each triangle corner is updated from the two opposite corners
with a planar-wavefront step; obtuse corners get additional virtual stencils
obtained by unfolding neighbouring triangles into the triangle's plane.
"""

from __future__ import annotations

import heapq
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import IndexOutOfRange, NumericalFailure, ParseError
from .mesh import TriangleMesh

UNREACHED = "unreached"
GDF_MAGIC = b"GDF1"
DEFAULT_UNFOLD_CAP = 10
_OBTUSE_EPS = 1e-9
_CONE_EPS = 1e-9
DEFAULT_NEAR_SOURCE = 0.06


@dataclass(frozen=True)
class GeodesicDistanceField:
    """Per-vertex geodesic distance from ``source``.

    ``distances`` holds NaN for vertices in the Unreached state; ``known``
    is the corresponding boolean mask. ``order`` lists vertices in the order
    they were finalized. ``parents`` is only filled for debug solves: for each
    vertex, the supporting vertices whose values produced its final distance.
    """

    source: int
    distances: np.ndarray
    known: np.ndarray
    order: np.ndarray
    speed: float = 1.0
    parents: list | None = field(default=None, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.distances)

    @property
    def max_distance(self) -> float:
        return float(self.distances[self.known].max())

    @property
    def fully_reached(self) -> bool:
        return bool(self.known.all())

    def state(self, vertex: int) -> str:
        return "known" if self.known[vertex] else UNREACHED

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("vertex_index,distance\n")
            for i, (d, k) in enumerate(zip(self.distances.tolist(), self.known.tolist())):
                fh.write(f"{i},{d:.9g}\n" if k else f"{i},{UNREACHED}\n")

    def to_gdf(self, path) -> None:
        """Binary sidecar: magic ``GDF1``, uint64 vertex count, float64 LE values (NaN = unreached)."""
        with open(path, "wb") as fh:
            fh.write(GDF_MAGIC)
            fh.write(struct.pack("<Q", self.n_vertices))
            fh.write(np.asarray(self.distances, dtype="<f8").tobytes())


def read_gdf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != GDF_MAGIC:
        raise ParseError("not a GDF1 file", path=path)
    (n,) = struct.unpack("<Q", blob[4:12])
    values = np.frombuffer(blob[12:], dtype="<f8")
    if len(values) != n:
        raise ParseError(f"GDF1 header announces {n} values, found {len(values)}", path=path)
    return values.astype(np.float64)


def read_distance_csv(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "vertex_index,distance":
            raise ParseError(f"unexpected header {header!r}", 1, path)
        vals = []
        for no, line in enumerate(fh, start=2):
            _, d = line.strip().split(",")
            vals.append(math.nan if d == UNREACHED else float(d))
    return np.array(vals)


def _planar_frame(l_ab, l_ac, l_bc):
    # place A at the origin, B on +x, C in the upper half plane
    cx = (l_ac * l_ac - l_bc * l_bc + l_ab * l_ab) / (2.0 * l_ab)
    cy = math.sqrt(max(l_ac * l_ac - cx * cx, 0.0))
    return cx, cy


def local_update(d_a: float, d_b: float, l_ab: float, l_ac: float, l_bc: float) -> float:
    """Arrival time at corner C of triangle ABC from known values at A and B.

    A planar front consistent with ``d_a`` and ``d_b`` is propagated to C. The
    result is accepted only when the front's characteristic through C crosses
    the edge AB and the value does not precede either support; otherwise the
    edge-wise Dijkstra value ``min(d_a + |AC|, d_b + |BC|)`` is returned.
    Infinite supports count as unsupported.
    """
    if math.isinf(d_a) and math.isinf(d_b):
        return math.inf
    if math.isinf(d_b):
        return d_a + l_ac
    if math.isinf(d_a):
        return d_b + l_bc
    cx, cy = _planar_frame(l_ab, l_ac, l_bc)
    return _planar(d_a, d_b, l_ab, l_ac, l_bc, cx, cy)


def _planar(d_a, d_b, l_ab, l_ac, l_bc, cx, cy):
    u = d_b - d_a
    if abs(u) < l_ab and cy > 0.0:
        nx = u / l_ab
        ny = math.sqrt(1.0 - nx * nx)
        t = d_a + nx * cx + ny * cy
        foot = cx - nx * cy / ny
        if 0.0 <= foot <= l_ab and t >= d_a and t >= d_b:
            return t
    return min(d_a + l_ac, d_b + l_bc)


def _point_source(d_a, d_b, l_ab, cx, cy):
    # virtual source S with |SA| = d_a, |SB| = d_b on the far side of AB; -1 if inadmissible
    sx = (d_a * d_a - d_b * d_b + l_ab * l_ab) / (2.0 * l_ab)
    h2 = d_a * d_a - sx * sx
    if h2 < 0.0 or cy <= 0.0:
        return -1.0
    sy = -math.sqrt(h2)
    x0 = sx + (cx - sx) * (-sy) / (cy - sy)
    if not 0.0 <= x0 <= l_ab:
        return -1.0
    t = math.hypot(cx - sx, cy - sy)
    if t < d_a or t < d_b:
        return -1.0
    return t


@dataclass(frozen=True)
class VirtualStencil:
    """Update of ``target`` from supports ``a`` and ``b`` laid out in an unfolded plane."""

    triangle: int
    target: int
    a: int
    b: int
    l_ab: float
    l_ac: float
    l_bc: float


@dataclass
class UnfoldResult:
    virtual: list[VirtualStencil]
    # (triangle, obtuse corner vertex) pairs whose unfolding failed; these use edge updates only
    fallback: list[tuple[int, int]]
    # (triangle, obtuse corner vertex) pairs that received virtual stencils
    split: list[tuple[int, int]]


def _unfold_point(p, q, x_prev, lp, lq):
    # 2D point at distances lp from p and lq from q, on the side of pq opposite x_prev
    ex, ey = q[0] - p[0], q[1] - p[1]
    L = math.hypot(ex, ey)
    ex, ey = ex / L, ey / L
    nx, ny = -ey, ex
    t = (lp * lp - lq * lq + L * L) / (2.0 * L)
    h = math.sqrt(max(lp * lp - t * t, 0.0))
    if (x_prev[0] - p[0]) * nx + (x_prev[1] - p[1]) * ny > 0:
        h = -h
    return (p[0] + t * ex + h * nx, p[1] + t * ey + h * ny)


def _corners(mesh: TriangleMesh):
    # every triangle corner as (face, target c, support a, support b) with edge lengths
    T = mesh.triangles
    V = mesh.vertices
    face = np.repeat(np.arange(len(T)), 3)
    k = np.tile(np.arange(3), len(T))
    c = T[face, k]
    a = T[face, (k + 1) % 3]
    b = T[face, (k + 2) % 3]
    l_ab = np.linalg.norm(V[a] - V[b], axis=1)
    l_ac = np.linalg.norm(V[a] - V[c], axis=1)
    l_bc = np.linalg.norm(V[b] - V[c], axis=1)
    return face, c, a, b, l_ab, l_ac, l_bc


def unfold_obtuse(mesh: TriangleMesh, cap: int = DEFAULT_UNFOLD_CAP) -> UnfoldResult:
    """Virtual support edges splitting every non-acute triangle corner into acute parts.

    For a triangle ABC whose angle at C is at least pi/2, the triangles beyond
    AB are rotated into the plane of ABC one by one until a vertex D lands
    strictly inside the sector where both angles ACD and DCB are below pi/2;
    the stencils (A, D -> C) and (D, B -> C) are then emitted. Strips that
    reach the boundary or exceed ``cap`` unfolded triangles are reported
    under ``fallback``.
    """
    T = mesh.triangles.tolist()
    Vl = mesh.vertices.tolist()
    edge_tris = mesh.edge_triangles
    edge_index = mesh.edge_index
    virtual, fallback, split = [], [], []

    def dist(i, j):
        p, q = Vl[i], Vl[j]
        return math.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2)

    face, cc, aa, bb, LAB, LAC, LBC = _corners(mesh)
    cos_c = (LAC ** 2 + LBC ** 2 - LAB ** 2) / (2 * LAC * LBC)
    for i in np.flatnonzero(cos_c <= _OBTUSE_EPS).tolist():
        f, c, a, b = int(face[i]), int(cc[i]), int(aa[i]), int(bb[i])
        l_ab, l_ac, l_bc = float(LAB[i]), float(LAC[i]), float(LBC[i])
        theta = math.acos(max(-1.0, float(cos_c[i])))
        cx, cy = _planar_frame(l_ab, l_ac, l_bc)
        P2, Q2, C2 = (0.0, 0.0), (l_ab, 0.0), (cx, cy)
        cAx, cAy = -cx, -cy
        orient = 1.0 if cAx * (-cy) - cAy * (l_ab - cx) > 0 else -1.0
        lo, hi = theta - math.pi / 2 + _CONE_EPS, math.pi / 2 - _CONE_EPS
        p, q, prev_apex, prev_tri = a, b, C2, f
        found = None
        for _ in range(cap):
            key = (p, q) if p < q else (q, p)
            nxt = [g for g in edge_tris[edge_index[key]] if g != prev_tri]
            if len(nxt) != 1:
                break
            g = nxt[0]
            d = next(x for x in T[g] if x != p and x != q)
            D2 = _unfold_point(P2, Q2, prev_apex, dist(p, d), dist(q, d))
            cDx, cDy = D2[0] - cx, D2[1] - cy
            phi = orient * math.atan2(cAx * cDy - cAy * cDx, cAx * cDx + cAy * cDy)
            if lo < phi < hi and d != c:
                found = (d, D2)
                break
            if phi <= lo:
                prev_apex, P2, p = P2, D2, d
            else:
                prev_apex, Q2, q = Q2, D2, d
            prev_tri = g
        if found is None:
            fallback.append((f, c))
            continue
        d, (dx, dy) = found
        l_cd = math.hypot(dx - cx, dy - cy)
        virtual.append(VirtualStencil(f, c, a, d, math.hypot(dx, dy), l_ac, l_cd))
        virtual.append(VirtualStencil(f, c, d, b, math.hypot(l_ab - dx, dy), l_cd, l_bc))
        split.append((f, c))
    return UnfoldResult(virtual, fallback, split)


class _Stencils:
    """Flat per-stencil arrays for the propagation loop."""

    def __init__(self, mesh: TriangleMesh, unfold_cap: int):
        V = mesh.vertices
        unfold = unfold_obtuse(mesh, unfold_cap)
        face, c, a, b, l_ab, l_ac, l_bc = _corners(mesh)
        tri = mesh.triangles
        drop = np.zeros(len(face), dtype=bool)
        edge_only = np.zeros(len(face), dtype=bool)
        # split corners are served by their virtual stencils only
        for f, cv in unfold.split:
            drop[3 * f + int(np.flatnonzero(tri[f] == cv)[0])] = True
        for f, cv in unfold.fallback:
            edge_only[3 * f + int(np.flatnonzero(tri[f] == cv)[0])] = True
        keep = ~drop
        va = [vs.a for vs in unfold.virtual]
        vb = [vs.b for vs in unfold.virtual]
        vc = [vs.target for vs in unfold.virtual]
        self.a = a[keep].tolist() + va
        self.b = b[keep].tolist() + vb
        self.c = c[keep].tolist() + vc
        lab = np.concatenate([l_ab[keep], [vs.l_ab for vs in unfold.virtual]])
        lac = np.concatenate([l_ac[keep], [vs.l_ac for vs in unfold.virtual]])
        lbc = np.concatenate([l_bc[keep], [vs.l_bc for vs in unfold.virtual]])
        self.edge_only = edge_only[keep].tolist() + [False] * len(va)
        cx = (lac ** 2 - lbc ** 2 + lab ** 2) / (2.0 * lab)
        cy = np.sqrt(np.maximum(lac ** 2 - cx ** 2, 0.0))
        self.l_ab, self.l_ac, self.l_bc = lab.tolist(), lac.tolist(), lbc.tolist()
        self.cx, self.cy = cx.tolist(), cy.tolist()
        self.by_support: list[list[int]] = [[] for _ in range(mesh.n_vertices)]
        for s, (x, y) in enumerate(zip(self.a, self.b)):
            self.by_support[x].append(s)
            self.by_support[y].append(s)
        self.unfold = unfold

        edges = mesh.edges
        lengths = np.linalg.norm(V[edges[:, 0]] - V[edges[:, 1]], axis=1).tolist()
        self.neighbors: list[list[tuple[int, float]]] = [[] for _ in range(mesh.n_vertices)]
        for (x, y), ln in zip(edges.tolist(), lengths):
            self.neighbors[x].append((y, ln))
            self.neighbors[y].append((x, ln))


_STENCIL_CACHE: dict[int, tuple] = {}


def _stencils_for(mesh: TriangleMesh, unfold_cap: int) -> _Stencils:
    key = id(mesh)
    hit = _STENCIL_CACHE.get(key)
    if hit is not None and hit[0] is mesh and hit[1] == unfold_cap:
        return hit[2]
    st = _Stencils(mesh, unfold_cap)
    if len(_STENCIL_CACHE) > 64:
        _STENCIL_CACHE.clear()
    _STENCIL_CACHE[key] = (mesh, unfold_cap, st)
    return st


def solve_distance(mesh: TriangleMesh, source: int, *, debug: bool = False,
                   unfold_cap: int = DEFAULT_UNFOLD_CAP,
                   near_source: float = DEFAULT_NEAR_SOURCE) -> GeodesicDistanceField:
    """Geodesic distance from vertex ``source`` to every vertex by Fast Marching.

    Propagation covers the whole connected component of the source; vertices
    elsewhere are left Unreached. Ties in the priority queue go to the
    smallest vertex index, so results are deterministic.

    Inside a ball of radius ``near_source`` times the bounding-box diagonal,
    where the front is strongly curved, updates assume a point source instead
    of a planar front (exact on flat regions). Pass 0 to use the planar update
    everywhere.
    """
    n = mesh.n_vertices
    if not 0 <= source < n:
        raise IndexOutOfRange(f"source {source} out of range [0, {n})")
    st = _stencils_for(mesh, unfold_cap)
    near = near_source * mesh.bbox_diagonal
    inf = math.inf
    dist = [inf] * n
    known = [False] * n
    parents: list | None = [None] * n if debug else None
    order = []
    dist[source] = 0.0
    heap = [(0.0, source)]
    sa, sb, sc = st.a, st.b, st.c
    lab, lac, lbc = st.l_ab, st.l_ac, st.l_bc
    cxs, cys, edge_only = st.cx, st.cy, st.edge_only
    by_support, neighbors = st.by_support, st.neighbors
    push, pop, sqrt = heapq.heappush, heapq.heappop, math.sqrt

    while heap:
        d, v = pop(heap)
        if known[v] or d > dist[v]:
            continue
        known[v] = True
        order.append(v)
        for w, ln in neighbors[v]:
            if not known[w]:
                cand = d + ln
                if cand < dist[w]:
                    dist[w] = cand
                    push(heap, (cand, w))
                    if debug:
                        parents[w] = (v,)
        for s in by_support[v]:
            x = sb[s] if sa[s] == v else sa[s]
            if not known[x]:
                continue
            c = sc[s]
            if known[c]:
                continue
            da, db = dist[sa[s]], dist[sb[s]]
            if edge_only[s]:
                cand = min(da + lac[s], db + lbc[s])
            else:
                l = lab[s]
                cand = -1.0
                cy = cys[s]
                if da < near and db < near:
                    cand = _point_source(da, db, l, cxs[s], cy)
                u = db - da
                # inlined _planar
                if cand < 0.0 and -l < u < l and cy > 0.0:
                    nx = u / l
                    ny = sqrt(1.0 - nx * nx)
                    cx = cxs[s]
                    t = da + nx * cx + ny * cy
                    foot = cx - nx * cy / ny
                    if 0.0 <= foot <= l and t >= da and t >= db:
                        cand = t
                if cand < 0.0:
                    cand = min(da + lac[s], db + lbc[s])
            if cand != cand:
                raise NumericalFailure(f"local update produced NaN at vertex {c} (stencil {s})")
            if cand < dist[c]:
                dist[c] = cand
                push(heap, (cand, c))
                if debug:
                    parents[c] = (sa[s], sb[s])

    dist_arr = np.array(dist)
    known_arr = np.array(known)
    dist_arr[~known_arr] = np.nan
    for a in (dist_arr, known_arr):
        a.flags.writeable = False
    return GeodesicDistanceField(source=source, distances=dist_arr, known=known_arr,
                                 order=np.array(order, dtype=np.int64), parents=parents)


def edge_dijkstra(mesh: TriangleMesh, source: int) -> np.ndarray:
    """Shortest path lengths along mesh edges (used as an upper-bound oracle)."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import dijkstra

    e = mesh.edges
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    g = coo_matrix((w, (e[:, 0], e[:, 1])), shape=(mesh.n_vertices,) * 2).tocsr()
    return dijkstra(g, directed=False, indices=source)
