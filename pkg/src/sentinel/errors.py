"""Exception types shared across the engine.

Parsing errors are deliberately fine-grained so that stream ingestion can
drop-and-count individual bad records instead of aborting.
"""


class SentinelError(Exception):
    """Base class for all engine errors."""


# --- ingestion ---

class MalformedJson(SentinelError):
    pass


class MissingField(SentinelError):
    def __init__(self, name: str):
        super().__init__(f"mandatory field missing after mapping: {name}")
        self.name = name


class InvalidTimestamp(SentinelError):
    pass


# --- graph construction ---

class InvalidArgument(SentinelError):
    pass


class EmptyHistogram(SentinelError):
    pass


class WindowMismatch(SentinelError):
    pass


class UnknownRole(SentinelError):
    pass


class UnknownAction(SentinelError):
    pass


# --- numeric core ---

class ShapeMismatch(SentinelError):
    pass


class NonFiniteInput(SentinelError):
    pass


class LengthMismatch(SentinelError):
    pass


class IndexOutOfRange(SentinelError):
    pass


class StaleCache(SentinelError):
    pass


class InvalidDims(SentinelError):
    pass


# --- detection loop ---

class AlreadyLabeled(SentinelError):
    pass


class UnknownAlert(SentinelError):
    pass


class NothingToTrainOn(SentinelError):
    pass


# --- persistence / evaluation ---

class VersionMismatch(SentinelError):
    pass


class CorruptCheckpoint(SentinelError):
    pass


class MismatchedRun(SentinelError):
    pass


class DegenerateLabels(SentinelError):
    pass


class InvalidConfig(SentinelError):
    pass


class UnknownActor(SentinelError):
    pass


class OutOfRange(SentinelError):
    pass
