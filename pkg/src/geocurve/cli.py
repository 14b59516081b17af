"""Command-line entry point: ``geocurve {synth,distance,curves,compare,experiment}``.

Exit status is 0 on success, 2 on usage errors and 1 when a pipeline stage
fails; failures name the stage on standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field

from . import classify, synth
from .eikonal import solve_distance
from .errors import GeocurveError, PipelineError
from .isocurves import DEFAULT_SAMPLES, default_levels, extract_descriptor_curves
from .mesh import load_mesh
from .pipeline import (DEFAULT_K, build_descriptor, feature_vector, load_descriptor,
                       save_descriptor, select_reference_point)

log = logging.getLogger("geocurve")


def _fmt(x: float) -> str:
    return f"{x:.9g}"


class _Failure(Exception):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause


@dataclass
class RunConfig:
    subcommand: str
    inputs: list[str] = field(default_factory=list)
    output: str | None = None
    K: int | None = None
    M: int = DEFAULT_SAMPLES
    levels: list[float] | None = None
    classifiers: list[str] = field(default_factory=lambda: list(classify.CLASSIFIERS))
    seed: int = 7
    verbosity: int = 0

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        inputs = [getattr(args, k) for k in ("mesh", "first", "second", "data")
                  if getattr(args, k, None)]
        classifiers = getattr(args, "classifiers", None)
        return cls(
            subcommand=args.command,
            inputs=inputs,
            output=getattr(args, "out", None),
            K=getattr(args, "k", None),
            M=getattr(args, "samples", DEFAULT_SAMPLES),
            levels=getattr(args, "levels", None),
            classifiers=classifiers or list(classify.CLASSIFIERS),
            seed=getattr(args, "seed", 7),
            verbosity=args.verbose,
        )


def _levels(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid level list {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("level list is empty")
    return vals


def _k_range(text: str) -> list[int]:
    try:
        return classify.parse_k_range(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _classifiers(text: str) -> list[str]:
    names = [x.strip().lower() for x in text.split(",") if x.strip()]
    bad = [n for n in names if n not in classify.CLASSIFIERS]
    if bad or not names:
        raise argparse.ArgumentTypeError(
            f"classifiers must be drawn from {','.join(classify.CLASSIFIERS)}")
    return names


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geocurve",
                                description="Face comparison by iso-geodesic curve shapes.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate the synthetic face dataset")
    s.add_argument("--subjects", type=int, default=10)
    s.add_argument("--expressions", type=int, default=7)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--resolution", type=int, default=40)
    s.add_argument("--out", default="dataset")

    d = sub.add_parser("distance", help="geodesic distance field from one vertex")
    d.add_argument("--mesh", required=True)
    d.add_argument("--source", type=int, help="source vertex (default: highest vertex)")
    d.add_argument("--out", default="distance.csv", help=".csv or .gdf")

    c = sub.add_parser("curves", help="extract resampled iso-geodesic curves")
    c.add_argument("--mesh", required=True)
    c.add_argument("--source", type=int, help="reference vertex (default: highest vertex)")
    lv = c.add_mutually_exclusive_group()
    lv.add_argument("--levels", type=_levels, help="comma-separated increasing levels")
    lv.add_argument("--k", type=_positive, help="number of automatic levels")
    c.add_argument("--samples", "-M", type=_positive, default=DEFAULT_SAMPLES)
    c.add_argument("--out", default="curves.json")
    c.add_argument("--descriptor", help="also write the face descriptor JSON here")
    c.add_argument("--face-id", default=None)
    c.add_argument("--subject-id", default="")

    m = sub.add_parser("compare", help="distance between two descriptor JSON files")
    m.add_argument("first")
    m.add_argument("second")
    m.add_argument("--out", help="write the result as JSON")

    e = sub.add_parser("experiment", help="curve-count sweep over three classifiers")
    e.add_argument("--data", help="dataset directory (default: generate from --seed)")
    e.add_argument("--subjects", type=int, default=10)
    e.add_argument("--expressions", type=int, default=7)
    e.add_argument("--seed", type=int, default=7)
    e.add_argument("--k-range", type=_k_range, default=list(range(1, 8)))
    e.add_argument("--classifiers", type=_classifiers, default=list(classify.CLASSIFIERS))
    e.add_argument("--samples", "-M", type=_positive, default=DEFAULT_SAMPLES)
    e.add_argument("--knn-k", type=_positive, default=1)
    e.add_argument("--out", default="experiment")
    return p


def cmd_synth(args) -> int:
    with _stage_of("synth"):
        faces = synth.generate_dataset(args.subjects, args.expressions, args.seed,
                                       args.resolution)
        path = synth.write_dataset(faces, args.out, seed=args.seed)
    print(f"wrote {len(faces)} meshes and {path}")
    return 0


def _load(path):
    with _stage_of("load"):
        return load_mesh(path)


def cmd_distance(args) -> int:
    mesh = _load(args.mesh)
    with _stage_of("reference"):
        source = select_reference_point(mesh, args.source)
    with _stage_of("distance"):
        fld = solve_distance(mesh, source)
    with _stage_of("write"):
        if args.out.lower().endswith(".gdf"):
            fld.to_gdf(args.out)
        else:
            fld.to_csv(args.out)
    print(f"source {source} max distance {_fmt(fld.max_distance)} -> {args.out}")
    return 0


def cmd_curves(args) -> int:
    mesh = _load(args.mesh)
    with _stage_of("reference"):
        source = select_reference_point(mesh, args.source)
    with _stage_of("distance"):
        fld = solve_distance(mesh, source)
    levels = args.levels
    with _stage_of("curves"):
        if levels is None:
            levels = default_levels(fld, args.k or DEFAULT_K)
        curves = extract_descriptor_curves(fld, mesh, levels, args.samples)
    with _stage_of("write"):
        doc = {"mesh": os.path.basename(args.mesh), "source": source, "M": args.samples,
               "curves": [c.to_dict() for c in curves]}
        with open(args.out, "w") as fh:
            json.dump(doc, fh, sort_keys=True)
            fh.write("\n")
    if args.descriptor:
        face_id = args.face_id or os.path.splitext(os.path.basename(args.mesh))[0]
        with _stage_of("descriptor"):
            desc = build_descriptor(mesh, source, [c.level for c in curves], args.samples,
                                    face_id=face_id, subject_id=args.subject_id, field=fld)
            save_descriptor(desc, args.descriptor)
    print(f"{len(curves)} curves -> {args.out}")
    return 0


def cmd_compare(args) -> int:
    with _stage_of("load"):
        a, b = load_descriptor(args.first), load_descriptor(args.second)
    with _stage_of("compare"):
        fv = feature_vector(a, b)
    print(f"face_distance {_fmt(fv.total)}")
    print("features " + " ".join(_fmt(x) for x in fv.entries))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"probe": fv.probe_id, "gallery": fv.gallery_id,
                       "face_distance": float(_fmt(fv.total)),
                       "features": [float(_fmt(x)) for x in fv.entries]}, fh, sort_keys=True)
            fh.write("\n")
    return 0


def _rounded(obj):
    if isinstance(obj, float):
        return float(_fmt(obj))
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    return obj


def cmd_experiment(args) -> int:
    with _stage_of("dataset"):
        if args.data:
            faces = synth.read_dataset(args.data)
        else:
            faces = synth.generate_dataset(args.subjects, args.expressions, args.seed)
    records = [classify.FaceRecord(f.face_id, f.subject_id, f.split, f.mesh, f.apex_index)
               for f in faces]

    def progress(K, c, rate):
        log.info("K=%d %s rate=%s", K, c, _fmt(rate))

    with _stage_of("sweep"):
        result = classify.curve_count_sweep(
            records, args.k_range, args.classifiers, M=args.samples, knn_k=args.knn_k,
            svm=classify.SVMConfig(seed=args.seed), nn=classify.NNConfig(seed=args.seed),
            progress=progress)
    with _stage_of("write"):
        os.makedirs(args.out, exist_ok=True)
        result.write_csv(os.path.join(args.out, "sweep.csv"))
        result.write_svg(os.path.join(args.out, "sweep.svg"))
        cfg = RunConfig.from_args(args)
        doc = {"config": asdict(cfg), "faces": len(records),
               "rates": [{"K": K, "classifier": c, "rate": r} for K, c, r in result.rows],
               "errors": result.errors, "evaluations": result.details}
        with open(os.path.join(args.out, "results.json"), "w") as fh:
            json.dump(_rounded(doc), fh, sort_keys=True, indent=1)
            fh.write("\n")
    for K, c, r in result.rows:
        print(f"K={K} {c} {'failed' if r is None else _fmt(r)}")
    return 0


class _stage_of:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, typ, exc, tb):
        if exc is None:
            return False
        if isinstance(exc, PipelineError):
            raise _Failure(exc.stage, exc.cause) from exc
        if isinstance(exc, (GeocurveError, OSError, ValueError, ArithmeticError, KeyError)):
            raise _Failure(getattr(exc, "stage", None) or self.name, exc) from exc
        return False


COMMANDS = {"synth": cmd_synth, "distance": cmd_distance, "curves": cmd_curves,
            "compare": cmd_compare, "experiment": cmd_experiment}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except _Failure as f:
        print(f"geocurve {args.command}: stage {f.stage} failed: {f.cause}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
