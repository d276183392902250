"""Exception types shared across the gearbench package."""

from __future__ import annotations


class GearbenchError(Exception):
    """Base class for all gearbench errors."""


class InvalidScenario(GearbenchError):
    """Scenario config is internally inconsistent (overlaps, dangling refs, bad DAG)."""


class ObjectOutOfFrame(GearbenchError):
    """A renderable object's projected center falls outside the image bounds."""


class UnknownLabel(GearbenchError):
    """A requested label matches no object in the world."""


class CommandOutOfRange(GearbenchError):
    """A robot command exceeds the per-step motion limits."""


class CollisionRejected(GearbenchError):
    """Motion would interpenetrate an obstacle; the world advances only its step count.

    Carries the post-rejection world so callers can continue from it.
    """

    def __init__(self, message: str, world=None):
        super().__init__(message)
        self.world = world


class WrongKind(GearbenchError):
    """An object id resolves to an object of the wrong kind."""


class AnnotationOutOfBounds(GearbenchError):
    """An annotation pixel lies outside its target image."""


class DuplicateMarkerIdAcrossTriplet(GearbenchError):
    """The same marker id refers to different labels across triplet members."""


class EmptyLabelSet(GearbenchError):
    """A recognition prompt was requested with no labels."""


class MissingAnnotations(GearbenchError):
    """A reasoning prompt was requested from a triplet without markers."""


class BackendUnavailable(GearbenchError):
    """A backend could not produce a reply (network failure, timeout, exhausted retries)."""


class MalformedPoints(GearbenchError):
    """A recognition reply contained no parseable point annotations."""


class EmptyReply(GearbenchError):
    """A reasoning backend returned an empty reply."""


class ReplayMismatch(GearbenchError):
    """A replayed request diverged from the recorded one."""


class UnknownMarker(GearbenchError):
    """A marker id is absent from the annotation set."""


class UnreachableTarget(GearbenchError):
    """An approach target lies outside the workspace."""


class PolicyFailure(GearbenchError):
    """A policy raised an internal error during rollout."""


class PreconditionViolated(GearbenchError):
    """A skill was invoked in a world state that violates its precondition."""


class ConfigurationError(GearbenchError):
    """CLI / harness configuration is invalid."""
