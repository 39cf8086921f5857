"""Exception hierarchy. Every error raised on purpose derives from StreamwayError."""

from __future__ import annotations


class StreamwayError(Exception):
    """Base class for all domain errors."""


# airspace
class ObstacleTouchesBoundary(StreamwayError):
    pass


# flow field
class SingularPoint(StreamwayError):
    pass


class InconsistentCorners(StreamwayError):
    pass


class SolverDiverged(StreamwayError):
    pass


class PhiAbsent(StreamwayError):
    pass


# corridors
class LevelOnObstacle(StreamwayError):
    pass


class BrokenContour(StreamwayError):
    pass


class DegeneratePolyline(StreamwayError):
    pass


# planner
class HorizonTooSmall(StreamwayError):
    pass


class NoFiniteValueAtStart(StreamwayError):
    pass


class RolloutStalled(StreamwayError):
    pass


# engine
class NoPathAvailable(StreamwayError):
    pass


class SnapFailure(StreamwayError):
    pass


class ReplanInfeasible(StreamwayError):
    def __init__(self, uas_id: str, message: str = ""):
        super().__init__(message or f"no feasible replan for {uas_id}")
        self.uas_id = uas_id


class UnknownUas(StreamwayError):
    pass


# scenario / IO
class ParseError(StreamwayError):
    pass


class SchemaViolation(StreamwayError):
    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class MissingArtifact(StreamwayError):
    pass


class StageError(StreamwayError):
    """Wraps a module error with the pipeline stage it came from."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
