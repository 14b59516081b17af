"""Exception hierarchy shared by all geocurve modules."""


class GeocurveError(Exception):
    """Base class for every error raised by this package."""


class ParseError(GeocurveError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


class InvalidMesh(GeocurveError):
    def __init__(self, report):
        self.report = report
        super().__init__(f"mesh failed validation: {report.summary()}")


class IndexOutOfRange(GeocurveError, IndexError):
    pass


class NumericalFailure(GeocurveError):
    pass


class UnreachedVertices(GeocurveError):
    """Raised when a consumer needs a fully reached distance field."""


class LevelOutOfRange(GeocurveError, ValueError):
    pass


class EmptyLevelSet(GeocurveError):
    pass


class DegenerateCurve(GeocurveError):
    pass


class GridMismatch(GeocurveError, ValueError):
    pass


class ProjectionDivergence(GeocurveError):
    pass


class NotConverged(GeocurveError):
    pass


class DescriptorMismatch(GeocurveError, ValueError):
    pass


class EmptyGallery(GeocurveError):
    pass


class DegenerateTraining(GeocurveError):
    pass


class PipelineError(GeocurveError):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
