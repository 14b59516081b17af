"""Triangle mesh data model, OFF/OBJ ingestion and validation."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import IndexOutOfRange, InvalidMesh, ParseError

DEGENERACY_RTOL = 1e-12


def _readonly(a):
    a.flags.writeable = False
    return a


class TriangleMesh:
    """Immutable triangle surface.

    Parameters
    ----------
    vertices : array_like, shape (N, 3)
    triangles : array_like of int, shape (T, 3)
        Vertex-index triples. Indices must be in range; geometric problems
        (degenerate or non-manifold elements) are tolerated here and reported
        by :func:`validate`.
    """

    def __init__(self, vertices, triangles):
        v = np.array(vertices, dtype=np.float64)
        t = np.array(triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must have shape (N, 3), got {v.shape}")
        if t.size == 0:
            t = t.reshape(0, 3)
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError(f"triangles must have shape (T, 3), got {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise IndexOutOfRange("triangle references a vertex index out of range")
        self._vertices = _readonly(v)
        self._triangles = _readonly(t)

    @property
    def vertices(self) -> np.ndarray:
        return self._vertices

    @property
    def triangles(self) -> np.ndarray:
        return self._triangles

    @property
    def n_vertices(self) -> int:
        return len(self._vertices)

    @property
    def n_triangles(self) -> int:
        return len(self._triangles)

    def __repr__(self):
        return f"TriangleMesh(N={self.n_vertices}, T={self.n_triangles})"

    @cached_property
    def _edge_table(self):
        t = self._triangles
        # half-edge k of triangle f joins corners (k+1, k+2), i.e. it is opposite corner k
        he = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1).reshape(-1, 2)
        key = np.sort(he, axis=1)
        edges, inverse = np.unique(key, axis=0, return_inverse=True)
        return _readonly(edges), inverse.reshape(-1)

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, shape (E, 2), each row sorted."""
        return self._edge_table[0]

    @cached_property
    def edge_triangles(self) -> list[list[int]]:
        """For each row of :attr:`edges`, the incident triangle indices."""
        edges, inverse = self._edge_table
        out: list[list[int]] = [[] for _ in range(len(edges))]
        for he, e in enumerate(inverse.tolist()):
            out[e].append(he // 3)
        return out

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {(int(a), int(b)): i for i, (a, b) in enumerate(self.edges)}

    @cached_property
    def vertex_triangles(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for f, tri in enumerate(self._triangles.tolist()):
            for v in tri:
                out[v].append(f)
        return out

    @cached_property
    def vertex_neighbors(self) -> list[list[int]]:
        out: list[set[int]] = [set() for _ in range(self.n_vertices)]
        for a, b in self.edges.tolist():
            out[a].add(b)
            out[b].add(a)
        return [sorted(s) for s in out]

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        mask = np.array([len(f) == 1 for f in self.edge_triangles], dtype=bool)
        return _readonly(self.edges[mask].copy())

    @cached_property
    def triangle_areas(self) -> np.ndarray:
        p = self._vertices[self._triangles]
        cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return _readonly(0.5 * np.linalg.norm(cr, axis=1))

    @cached_property
    def bbox_diagonal(self) -> float:
        if self.n_vertices == 0:
            return 0.0
        return float(np.linalg.norm(self._vertices.max(0) - self._vertices.min(0)))

    @property
    def area(self) -> float:
        return float(self.triangle_areas.sum())

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals following the triangle winding."""
        p = self._vertices[self._triangles]
        cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        n = np.zeros_like(self._vertices)
        for k in range(3):
            np.add.at(n, self._triangles[:, k], cr)
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        norm[norm == 0] = 1.0
        return _readonly(n / norm)

    def transformed(self, rotation=None, translation=None) -> "TriangleMesh":
        v = self._vertices
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=float).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=float)
        return TriangleMesh(v, self._triangles)


@dataclass
class ValidationReport:
    n_vertices: int
    n_triangles: int
    n_boundary_edges: int
    degenerate_triangles: list[int] = field(default_factory=list)
    nonmanifold_edges: list[tuple[int, int]] = field(default_factory=list)
    unreferenced_vertices: list[int] = field(default_factory=list)
    n_components: int = 0

    @property
    def ok(self) -> bool:
        return not (self.degenerate_triangles or self.nonmanifold_edges
                    or self.unreferenced_vertices)

    def summary(self) -> str:
        return (f"V={self.n_vertices} T={self.n_triangles} "
                f"boundary_edges={self.n_boundary_edges} "
                f"degenerate={len(self.degenerate_triangles)} "
                f"nonmanifold={len(self.nonmanifold_edges)} "
                f"unreferenced={len(self.unreferenced_vertices)}")


def validate(mesh: TriangleMesh) -> ValidationReport:
    """Check the mesh invariants and report offending elements without raising."""
    t = mesh.triangles
    repeated = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
    threshold = DEGENERACY_RTOL * mesh.bbox_diagonal ** 2
    degenerate = np.flatnonzero(repeated | (mesh.triangle_areas <= threshold))

    nonmanifold = [tuple(int(x) for x in mesh.edges[i])
                   for i, tris in enumerate(mesh.edge_triangles) if len(tris) > 2]
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[t.reshape(-1)] = True

    return ValidationReport(
        n_vertices=mesh.n_vertices,
        n_triangles=mesh.n_triangles,
        n_boundary_edges=len(mesh.boundary_edges),
        degenerate_triangles=degenerate.tolist(),
        nonmanifold_edges=nonmanifold,
        unreferenced_vertices=np.flatnonzero(~used).tolist(),
        n_components=_count_components(mesh),
    )


def _count_components(mesh):
    # edge-connected triangle components, via union-find on triangles
    parent = list(range(mesh.n_triangles))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for tris in mesh.edge_triangles:
        for other in tris[1:]:
            ra, rb = find(tris[0]), find(other)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    return len({find(i) for i in range(mesh.n_triangles)})


def triangle_geometry(mesh: TriangleMesh, index: int):
    """Edge lengths and interior angles of one triangle.

    ``lengths[i]`` is the length of the edge opposite corner ``i`` and
    ``angles[i]`` the interior angle at corner ``i`` (radians).
    """
    if not 0 <= index < mesh.n_triangles:
        raise IndexOutOfRange(f"triangle index {index} out of range [0, {mesh.n_triangles})")
    p = mesh.vertices[mesh.triangles[index]]
    lengths = np.array([np.linalg.norm(p[(i + 2) % 3] - p[(i + 1) % 3]) for i in range(3)])
    angles = np.empty(3)
    for i in range(3):
        u = p[(i + 1) % 3] - p[i]
        w = p[(i + 2) % 3] - p[i]
        angles[i] = math.atan2(np.linalg.norm(np.cross(u, w)), float(np.dot(u, w)))
    return lengths, angles


def _fan(poly):
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def _parse_off(lines, path):
    def content():
        for no, raw in enumerate(lines, start=1):
            s = raw.split("#", 1)[0].strip()
            if s:
                yield no, s.split()

    it = content()
    try:
        no, toks = next(it)
    except StopIteration:
        raise ParseError("empty file", path=path) from None
    if toks[0] != "OFF":
        raise ParseError(f"expected 'OFF' header, got {toks[0]!r}", no, path)
    toks = toks[1:]
    if not toks:
        try:
            no, toks = next(it)
        except StopIteration:
            raise ParseError("missing counts line", path=path) from None
    try:
        nv, nf = int(toks[0]), int(toks[1])
    except (ValueError, IndexError):
        raise ParseError("malformed counts line", no, path) from None

    verts = []
    for _ in range(nv):
        try:
            no, toks = next(it)
        except StopIteration:
            raise ParseError(f"expected {nv} vertices, found {len(verts)}", path=path) from None
        try:
            verts.append([float(x) for x in toks[:3]])
        except ValueError:
            raise ParseError("malformed vertex line", no, path) from None
        if len(toks) < 3:
            raise ParseError("vertex line needs 3 coordinates", no, path)

    tris = []
    for _ in range(nf):
        try:
            no, toks = next(it)
        except StopIteration:
            raise ParseError(f"expected {nf} faces", path=path) from None
        try:
            n = int(toks[0])
            idx = [int(x) for x in toks[1:1 + n]]
        except ValueError:
            raise ParseError("malformed face line", no, path) from None
        if n < 3 or len(idx) != n:
            raise ParseError("face line needs at least 3 indices", no, path)
        for i in idx:
            if not 0 <= i < nv:
                raise ParseError(f"face index {i} out of range for {nv} vertices", no, path)
        tris.extend(_fan(idx))
    return verts, tris


def _parse_obj(lines, path):
    verts, tris = [], []
    for no, raw in enumerate(lines, start=1):
        toks = raw.split("#", 1)[0].split()
        if not toks:
            continue
        if toks[0] == "v":
            try:
                verts.append([float(x) for x in toks[1:4]])
            except ValueError:
                raise ParseError("malformed vertex line", no, path) from None
            if len(toks) < 4:
                raise ParseError("vertex line needs 3 coordinates", no, path)
        elif toks[0] == "f":
            idx = []
            for tok in toks[1:]:
                try:
                    i = int(tok.split("/", 1)[0])
                except ValueError:
                    raise ParseError(f"malformed face index {tok!r}", no, path) from None
                # negative indices count back from the latest vertex
                i = i - 1 if i > 0 else len(verts) + i
                if not 0 <= i < len(verts):
                    raise ParseError(f"face index {tok} out of range", no, path)
                idx.append(i)
            if len(idx) < 3:
                raise ParseError("face needs at least 3 vertices", no, path)
            tris.extend(_fan(idx))
    return verts, tris


def load_mesh(path, format: str | None = None) -> TriangleMesh:
    """Read an OFF or OBJ file; polygons are fan-triangulated at their first vertex.

    Raises :class:`ParseError` for malformed input and :class:`InvalidMesh`
    when the parsed surface fails :func:`validate`.
    """
    if format is None:
        format = os.path.splitext(str(path))[1].lstrip(".")
    format = format.upper()
    with open(path) as fh:
        lines = fh.read().splitlines()
    if format == "OFF":
        verts, tris = _parse_off(lines, path)
    elif format == "OBJ":
        verts, tris = _parse_obj(lines, path)
    else:
        raise ValueError(f"unsupported mesh format {format!r}")
    mesh = TriangleMesh(np.array(verts, dtype=float).reshape(-1, 3), tris)
    report = validate(mesh)
    if not report.ok:
        raise InvalidMesh(report)
    return mesh


def format_off(mesh: TriangleMesh) -> str:
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.edges)}"]
    lines += [" ".join(f"{x:.9g}" for x in v) for v in mesh.vertices.tolist()]
    lines += ["3 %d %d %d" % tuple(t) for t in mesh.triangles.tolist()]
    return "\n".join(lines) + "\n"


def save_off(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_off(mesh))
