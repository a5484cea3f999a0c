"""Exception hierarchy. Every error carries a stable ``code`` string."""

from __future__ import annotations


class StemError(Exception):
    code = "STEM_ERROR"

    def __init__(self, message: str = "", **context):
        super().__init__(message or self.code)
        self.context = context

    def __str__(self) -> str:
        base = super().__str__()
        return f"{self.code}: {base}" if base != self.code else base


# memory core
class SequenceGapError(StemError):
    code = "SEQUENCE_GAP"


class DanglingReferenceError(StemError):
    code = "DANGLING_REFERENCE"


class MalformedDeltaError(StemError):
    code = "MALFORMED_DELTA"


class CorruptSnapshotError(StemError):
    code = "CORRUPT_SNAPSHOT"


# spatial memory
class DuplicateIdError(StemError):
    code = "DUPLICATE_ID"


class OrphanCarrierError(StemError):
    code = "ORPHAN_CARRIER"


class DuplicateObjectError(StemError):
    code = "DUPLICATE_OBJECT"


class UnknownObjectError(StemError):
    code = "UNKNOWN_OBJECT"


class UnknownNodeError(StemError):
    code = "UNKNOWN_NODE"


class InvalidTransformError(StemError):
    code = "INVALID_TRANSFORM"


# alignment
class DegenerateConfigurationError(StemError):
    code = "DEGENERATE_CONFIGURATION"


class NoConvergenceError(StemError):
    code = "NO_CONVERGENCE"


class BehindCameraError(StemError):
    code = "BEHIND_CAMERA"


# embodiment
class DuplicateRobotError(StemError):
    code = "DUPLICATE_ROBOT"


class UnknownLocationError(StemError):
    code = "UNKNOWN_LOCATION"


class UnknownRobotError(StemError):
    code = "UNKNOWN_ROBOT"


class StaleTickError(StemError):
    code = "STALE_TICK"


class DetachMissingToolError(StemError):
    code = "DETACH_MISSING_TOOL"


# planning
class UnknownTemplateError(StemError):
    code = "UNKNOWN_TEMPLATE"


class NoCapableRobotError(StemError):
    code = "NO_CAPABLE_ROBOT"


class TransportFailureError(StemError):
    code = "TRANSPORT_FAILURE"


class PlannerTimeoutError(StemError):
    code = "TIMEOUT"


class HallucinationError(StemError):
    code = "HALLUCINATION"

    def __init__(self, message: str = "", violations=()):
        super().__init__(message)
        self.violations = list(violations)


# orchestration / sim
class RecoveryExhaustedError(StemError):
    code = "RECOVERY_EXHAUSTED"


class InvalidPlanError(StemError):
    code = "INVALID_PLAN"


class EmptyInputError(StemError):
    code = "EMPTY_INPUT"


class UnresolvedReferenceError(StemError):
    code = "UNRESOLVED_REFERENCE"
