"""Face comparison by the shapes of iso-geodesic curves around a reference point."""

from .classify import (ClassifierModel, LabeledGallery, curve_count_sweep, evaluate,
                       knn_classify, train_nn, train_svm)
from .eikonal import GeodesicDistanceField, solve_distance
from .errors import GeocurveError
from .isocurves import IsoGeodesicCurve, extract_descriptor_curves, extract_level_set
from .mesh import TriangleMesh, load_mesh, save_off, validate
from .pipeline import (FaceDescriptor, FeatureVector, build_descriptor, face_distance,
                       feature_vector, select_reference_point)
from .srvf import (GeodesicPath, PathConfig, SRVFCurve, align, from_srvf, geodesic_distance,
                   project_closed, shape_distance, to_srvf)
from .synth import generate_dataset, generate_face, generate_plane, generate_sphere

__version__ = "0.1.0"

__all__ = [
    "ClassifierModel", "FaceDescriptor", "FeatureVector", "GeocurveError",
    "GeodesicDistanceField", "GeodesicPath", "IsoGeodesicCurve", "LabeledGallery",
    "PathConfig", "SRVFCurve", "TriangleMesh", "align", "build_descriptor",
    "curve_count_sweep", "evaluate", "extract_descriptor_curves", "extract_level_set",
    "face_distance", "feature_vector", "from_srvf", "generate_dataset", "generate_face",
    "generate_plane", "generate_sphere", "geodesic_distance", "knn_classify", "load_mesh",
    "project_closed", "save_off", "select_reference_point", "shape_distance",
    "solve_distance", "to_srvf", "train_nn", "train_svm", "validate",
]
