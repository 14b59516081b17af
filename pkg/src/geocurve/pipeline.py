"""Per-face descriptors (K closed SRVF curves) and the distances between them."""

from __future__ import annotations

import contextlib
import csv
import json
from dataclasses import dataclass

import numpy as np

from .eikonal import GeodesicDistanceField, solve_distance
from .errors import (DescriptorMismatch, GeocurveError, IndexOutOfRange, PipelineError,
                     UnreachedVertices)
from .isocurves import (DEFAULT_LEVEL_FRACTION, DEFAULT_SAMPLES, default_levels,
                        extract_descriptor_curves)
from .mesh import TriangleMesh
from .srvf import PathConfig, SRVFCurve, project_closed, shape_distance, to_srvf

DEFAULT_K = 5
PROJECTION_TOL = 1e-10


def select_reference_point(mesh: TriangleMesh, manual: int | None = None) -> int:
    """Reference vertex: ``manual`` if given, else the highest vertex in z.

    Ties in z go to the smallest index.
    """
    if manual is not None:
        idx = int(manual)
        if not 0 <= idx < mesh.n_vertices:
            raise IndexOutOfRange(f"reference {idx} outside [0, {mesh.n_vertices})")
        return idx
    return int(np.argmax(mesh.vertices[:, 2]))


@contextlib.contextmanager
def stage(name: str):
    """Tag package errors with the pipeline stage; wrap anything else in PipelineError."""
    try:
        yield
    except GeocurveError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = name
        raise
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise PipelineError(name, exc) from exc


@dataclass(frozen=True)
class FaceDescriptor:
    face_id: str
    subject_id: str
    reference: int
    levels: tuple[float, ...]
    curves: tuple[SRVFCurve, ...]

    def __post_init__(self):
        if not self.curves:
            raise ValueError("a descriptor needs at least one curve")
        if len(self.levels) != len(self.curves):
            raise ValueError("one level per curve")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("levels must be strictly increasing")
        if len({c.M for c in self.curves}) != 1:
            raise ValueError("all curves must share M")

    @property
    def K(self) -> int:
        return len(self.curves)

    @property
    def M(self) -> int:
        return self.curves[0].M

    def to_dict(self) -> dict:
        return {
            "face_id": self.face_id,
            "subject_id": self.subject_id,
            "reference": self.reference,
            "K": self.K,
            "M": self.M,
            "levels": [float(k) for k in self.levels],
            "curves": [{"length": c.length, "scale_normalized": c.scale_normalized,
                        "samples": c.samples.tolist()} for c in self.curves],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FaceDescriptor":
        curves = tuple(SRVFCurve.from_samples(np.array(c["samples"], dtype=float),
                                              c["length"], c.get("scale_normalized", False))
                       for c in d["curves"])
        return cls(d["face_id"], d["subject_id"], int(d["reference"]),
                   tuple(float(k) for k in d["levels"]), curves)

    def to_json(self) -> str:
        # repr round-trips floats exactly, so reloaded descriptors give identical distances
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "FaceDescriptor":
        return cls.from_dict(json.loads(text))


def save_descriptor(desc: FaceDescriptor, path) -> None:
    with open(path, "w") as fh:
        fh.write(desc.to_json())


def load_descriptor(path) -> FaceDescriptor:
    with open(path) as fh:
        return FaceDescriptor.from_json(fh.read())


def build_descriptor(mesh: TriangleMesh, reference: int, levels=DEFAULT_K,
                     M: int = DEFAULT_SAMPLES, *, face_id: str = "", subject_id: str = "",
                     field: GeodesicDistanceField | None = None,
                     fraction: float = DEFAULT_LEVEL_FRACTION,
                     scale_normalize: bool = False) -> FaceDescriptor:
    """Distance field from ``reference``, then K closed SRVF curves.

    ``levels`` is either an int K (uniform levels up to ``fraction`` of the
    maximum distance) or an explicit increasing sequence. Pass a precomputed
    ``field`` to reuse it across level policies.
    """
    with stage("reference"):
        reference = select_reference_point(mesh, reference)
    with stage("distance"):
        if field is None:
            field = solve_distance(mesh, reference)
        elif field.source != reference:
            raise ValueError(f"field source {field.source} differs from reference {reference}")
        if not field.fully_reached:
            raise UnreachedVertices(
                f"{int((~field.known).sum())} vertices unreachable from {reference}")
    with stage("curves"):
        if isinstance(levels, (int, np.integer)):
            if levels < 1:
                raise ValueError("K must be >= 1")
            levels = default_levels(field, int(levels), fraction)
        curves = extract_descriptor_curves(field, mesh, levels, M)
    with stage("srvf"):
        qs = tuple(project_closed(to_srvf(c, scale_normalize), PROJECTION_TOL) for c in curves)
    return FaceDescriptor(face_id, subject_id, reference,
                          tuple(float(c.level) for c in curves), qs)


@dataclass(frozen=True)
class FeatureVector:
    entries: tuple[float, ...]
    probe_id: str
    gallery_id: str

    @property
    def total(self) -> float:
        return sum(self.entries)


def _check_compatible(d1: FaceDescriptor, d2: FaceDescriptor) -> None:
    if d1.K != d2.K:
        raise DescriptorMismatch(f"curve counts differ: {d1.K} vs {d2.K}")
    if d1.M != d2.M:
        raise DescriptorMismatch(f"sample counts differ: {d1.M} vs {d2.M}")


def feature_vector(probe: FaceDescriptor, gallery: FaceDescriptor,
                   config: PathConfig | None = None) -> FeatureVector:
    """Per-level shape distances, curve k of ``probe`` against curve k of ``gallery``."""
    _check_compatible(probe, gallery)
    entries = tuple(float(shape_distance(a, b, config)[0])
                    for a, b in zip(probe.curves, gallery.curves))
    return FeatureVector(entries, probe.face_id, gallery.face_id)


def face_distance(d1: FaceDescriptor, d2: FaceDescriptor,
                  config: PathConfig | None = None) -> float:
    """Sum of per-level curve distances; equals ``feature_vector(d1, d2).total``."""
    return feature_vector(d1, d2, config).total


def distance_matrix(rows: list[FaceDescriptor], cols: list[FaceDescriptor],
                    config: PathConfig | None = None) -> np.ndarray:
    return np.array([[face_distance(r, c, config) for c in cols] for r in rows])


def write_distance_matrix(matrix, row_ids, col_ids, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["face_id", *col_ids])
        for rid, row in zip(row_ids, np.asarray(matrix)):
            w.writerow([rid, *(f"{x:.9g}" for x in row)])
