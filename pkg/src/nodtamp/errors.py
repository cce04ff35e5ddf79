"""Error taxonomy with stable machine-readable kinds.

Every error carries a ``kind`` string that tools and tests key on; messages
are free-form and may change.
"""

from __future__ import annotations


class NodTampError(Exception):
    """Base error. ``kind`` is a stable identifier, never a prose message."""

    kind = "error"

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details

    def to_json(self) -> dict:
        out = {"error": self.kind, "message": str(self)}
        out.update({k: v for k, v in self.details.items() if _jsonable(v)})
        return out


def _jsonable(v) -> bool:
    return isinstance(v, (str, int, float, bool, type(None), list, dict))


class ArgumentError(NodTampError):
    kind = "argument"


class DegenerateInputError(NodTampError):
    kind = "degenerate-input"


class DataError(NodTampError):
    kind = "data"


class SchemaError(NodTampError):
    kind = "schema"


class OptimizationError(NodTampError):
    """Descent produced a non-finite residual. Carries the best pose so far."""

    kind = "optimization"

    def __init__(self, message: str, best_pose=None, step_index=None, **details):
        super().__init__(message, step_index=step_index, **details)
        self.best_pose = best_pose
        self.step_index = step_index


class EmptySegmentationError(NodTampError):
    kind = "empty-segmentation"


class PreconditionError(NodTampError):
    kind = "precondition"


class AdaptationError(NodTampError):
    kind = "adaptation"

    def __init__(self, message: str, step_index=None, **details):
        super().__init__(message, step_index=step_index, **details)
        self.step_index = step_index


class NoCandidateError(NodTampError):
    kind = "no-candidate"


class InfeasibleSkeletonError(NodTampError):
    kind = "infeasible-skeleton"


class UnreachableGoalError(NodTampError):
    kind = "unreachable-goal"


class PlanningFailureError(NodTampError):
    kind = "planning-failure"


class GenerationError(NodTampError):
    kind = "generation"
