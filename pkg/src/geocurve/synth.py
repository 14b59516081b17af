"""Deterministic verification meshes and a parametric synthetic face dataset."""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .mesh import TriangleMesh, load_mesh, save_off

TRAIN_EXPRESSIONS = (0, 1)


def generate_plane(n: int) -> TriangleMesh:
    """Regular ``n x n`` vertex grid on [-1, 1]^2, two triangles per cell."""
    if n < 3:
        raise ValueError("plane grid needs n >= 3")
    xs = np.linspace(-1.0, 1.0, n)
    X, Y = np.meshgrid(xs, xs)
    verts = np.column_stack([X.ravel(), Y.ravel(), np.zeros(n * n)])
    i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="ij")
    a = (i * n + j).ravel()
    b, c, d = a + 1, a + n + 1, a + n
    tris = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return TriangleMesh(verts, tris)


def _icosahedron():
    h = 1.0 / math.sqrt(5.0)
    r = 2.0 * h
    verts = [(0.0, 0.0, 1.0)]
    verts += [(r * math.cos(2 * math.pi * k / 5), r * math.sin(2 * math.pi * k / 5), h)
              for k in range(5)]
    verts += [(r * math.cos(2 * math.pi * k / 5 + math.pi / 5),
               r * math.sin(2 * math.pi * k / 5 + math.pi / 5), -h) for k in range(5)]
    verts.append((0.0, 0.0, -1.0))
    tris = []
    for k in range(5):
        u0, u1 = 1 + k, 1 + (k + 1) % 5
        l0, l1 = 6 + k, 6 + (k + 1) % 5
        tris += [(0, u0, u1), (u0, l0, u1), (u1, l0, l1), (11, l1, l0)]
    return np.array(verts), tris


def generate_sphere(subdivisions: int) -> TriangleMesh:
    """Unit icosphere with vertex 0 at the north pole (0, 0, 1)."""
    if not 0 <= subdivisions <= 7:
        raise ValueError("subdivisions must be in [0, 7]")
    verts, tris = _icosahedron()
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            idx = cache.get(key)
            if idx is None:
                p = np.add(verts[a], verts[b])
                p = p / np.linalg.norm(p)
                idx = len(verts)
                verts.append(tuple(p))
                cache[key] = idx
            return idx

        nxt = []
        for a, b, c in tris:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nxt += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        tris = nxt
    v = np.array(verts)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    t = np.array(tris)
    # outward winding: flip any triangle whose normal points toward the centre
    p = v[t]
    flip = np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p.sum(1)) < 0
    t[flip] = t[flip][:, [0, 2, 1]]
    return TriangleMesh(v, t)


def disk_grid(rings: int):
    """Planar triangulated unit disk: centre vertex plus ``rings`` circles of 6i vertices.

    Returns ``(uv, triangles)``; vertex 0 is the centre and triangles wind
    counterclockwise seen from +z.
    """
    uv = [(0.0, 0.0)]
    ring_ids = [[0]]
    for i in range(1, rings + 1):
        n = 6 * i
        start = len(uv)
        r = i / rings
        uv += [(r * math.cos(2 * math.pi * j / n), r * math.sin(2 * math.pi * j / n))
               for j in range(n)]
        ring_ids.append(list(range(start, start + n)))

    tris = []
    outer = ring_ids[1]
    for j in range(len(outer)):
        tris.append((0, outer[j], outer[(j + 1) % len(outer)]))
    for i in range(2, rings + 1):
        inner, outer = ring_ids[i - 1], ring_ids[i]
        m, n = len(inner), len(outer)
        a = b = 0
        # zipper the two rings, always advancing the side whose next vertex has the smaller angle
        while a < m or b < n:
            ta = 2 * math.pi * (a + 1) / m
            tb = 2 * math.pi * (b + 1) / n
            if b == n or (a < m and ta < tb - 1e-12):
                tris.append((inner[a], outer[b % n], inner[(a + 1) % m]))
                a += 1
            else:
                tris.append((inner[a % m], outer[b], outer[(b + 1) % n]))
                b += 1
    return np.array(uv), np.array(tris)


@dataclass
class Bump:
    u: float
    v: float
    amplitude: float
    width: float


@dataclass
class SyntheticFaceParams:
    """Shape parameters of one synthetic face scan.

    ``bumps[0]`` is the nose, centred at the origin; it has the largest
    amplitude so the apex (vertex 0) is the unique height maximum.
    """

    subject_seed: int
    expression_seed: int
    paraboloid: tuple[float, float]
    bumps: list[Bump]
    resolution: int = 40
    # pairwise expression differences reach twice this, kept under 15% of the nose
    expression_fraction: float = 0.07
    apex_index: int = 0

    def __post_init__(self):
        if self.resolution < 32:
            raise ValueError("resolution must be >= 32")
        nose = self.bumps[0].amplitude
        if any(b.amplitude >= nose for b in self.bumps[1:]):
            raise ValueError("nose bump must have the largest amplitude")
        if not 0.0 <= self.expression_fraction <= 0.15:
            raise ValueError("expression amplitude must stay within 15% of the nose bump")


def subject_params(subject_seed: int, expression_seed: int = 0, resolution: int = 40,
                   expression_fraction: float = 0.07) -> SyntheticFaceParams:
    """Draw the identity geometry of a subject from its seed."""
    rng = np.random.default_rng(subject_seed)
    c = rng.uniform(0.15, 0.45, size=2)
    nose = Bump(0.0, 0.0, rng.uniform(0.30, 0.40), rng.uniform(0.10, 0.16))
    bumps = [nose]
    # brows, cheeks, chin: jittered anchor positions
    anchors = [(-0.35, 0.35), (0.35, 0.35), (-0.40, -0.20), (0.40, -0.20), (0.0, -0.60)]
    sym_amp = rng.uniform(0.04, 0.16, size=3)
    for k, (au, av) in enumerate(anchors):
        amp = sym_amp[min(k // 2, 2)] * rng.uniform(0.85, 1.15)
        bumps.append(Bump(au + rng.uniform(-0.06, 0.06), av + rng.uniform(-0.06, 0.06),
                          float(amp), rng.uniform(0.10, 0.20)))
    return SyntheticFaceParams(
        subject_seed=subject_seed,
        expression_seed=expression_seed,
        paraboloid=(float(c[0]), float(c[1])),
        bumps=[Bump(float(b.u), float(b.v), float(b.amplitude), float(b.width)) for b in bumps],
        resolution=resolution,
        expression_fraction=expression_fraction,
    )


def _height(params: SyntheticFaceParams, u, v):
    c1, c2 = params.paraboloid
    z = -(c1 * u ** 2 + c2 * v ** 2)
    for b in params.bumps:
        z = z + b.amplitude * np.exp(-((u - b.u) ** 2 + (v - b.v) ** 2) / (2 * b.width ** 2))
    return z


def expression_displacement(params: SyntheticFaceParams, u, v):
    """Smooth height perturbation for ``params.expression_seed`` (zero for seed 0)."""
    if params.expression_seed == 0 or params.expression_fraction == 0.0:
        return np.zeros_like(u)
    rng = np.random.default_rng([params.subject_seed, params.expression_seed])
    d = np.zeros_like(u)
    for _ in range(3):
        rad = rng.uniform(0.3, 0.8)
        ang = rng.uniform(0.0, 2 * math.pi)
        w = rng.uniform(0.15, 0.30)
        s = rng.uniform(-1.0, 1.0)
        d += s * np.exp(-((u - rad * math.cos(ang)) ** 2 + (v - rad * math.sin(ang)) ** 2)
                        / (2 * w ** 2))
    # vanish at the centre so the nose tip stays the height maximum
    d *= 1.0 - np.exp(-(u ** 2 + v ** 2) / 0.2 ** 2)
    peak = np.abs(d).max()
    if peak == 0.0:
        return d
    return d * (params.expression_fraction * params.bumps[0].amplitude / peak)


def generate_face(params: SyntheticFaceParams) -> TriangleMesh:
    uv, tris = disk_grid(params.resolution)
    u, v = uv[:, 0], uv[:, 1]
    z = _height(params, u, v) + expression_displacement(params, u, v)
    return TriangleMesh(np.column_stack([u, v, z]), tris)


@dataclass
class SyntheticFace:
    face_id: str
    subject_id: str
    expression: int
    split: str
    apex_index: int
    params: SyntheticFaceParams
    mesh: TriangleMesh = field(repr=False)


def generate_dataset(subjects: int = 10, expressions: int = 7, seed: int = 7,
                     resolution: int = 40) -> list[SyntheticFace]:
    """``subjects x expressions`` synthetic scans; expressions 0 and 1 form the train split."""
    if subjects < 2 or expressions < 2:
        raise ValueError("need at least 2 subjects and 2 expressions")
    subject_seeds = np.random.SeedSequence(seed).generate_state(subjects).tolist()
    out = []
    for s, sseed in enumerate(subject_seeds):
        for e in range(expressions):
            params = subject_params(int(sseed), e, resolution)
            out.append(SyntheticFace(
                face_id=f"s{s:02d}_e{e}",
                subject_id=f"s{s:02d}",
                expression=e,
                split="train" if e in TRAIN_EXPRESSIONS else "test",
                apex_index=params.apex_index,
                params=params,
                mesh=generate_face(params),
            ))
    return out


def write_dataset(faces: list[SyntheticFace], directory, seed=None) -> str:
    """Write one OFF per face plus ``manifest.json``; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for f in faces:
        name = f"{f.face_id}.off"
        save_off(f.mesh, os.path.join(directory, name))
        entries.append({
            "face_id": f.face_id,
            "subject_id": f.subject_id,
            "expression": f.expression,
            "split": f.split,
            "apex_index": f.apex_index,
            "file": name,
            "subject_seed": f.params.subject_seed,
            "expression_seed": f.params.expression_seed,
            "params": asdict(f.params),
        })
    manifest = {"seed": seed, "faces": entries}
    path = os.path.join(directory, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def read_dataset(directory) -> list[SyntheticFace]:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    out = []
    for e in manifest["faces"]:
        p = dict(e["params"])
        p["bumps"] = [Bump(**b) for b in p["bumps"]]
        p["paraboloid"] = tuple(p["paraboloid"])
        out.append(SyntheticFace(
            face_id=e["face_id"], subject_id=e["subject_id"], expression=e["expression"],
            split=e["split"], apex_index=e["apex_index"], params=SyntheticFaceParams(**p),
            mesh=load_mesh(os.path.join(directory, e["file"]), "OFF"),
        ))
    return out
