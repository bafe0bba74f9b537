"""Exception hierarchy shared across the pipeline stages."""


class GazeegError(Exception):
    """Base class for all pipeline errors."""


# --- dataset ---

class MissingFileError(GazeegError):
    pass


class SchemaError(GazeegError):
    pass


class ClockError(GazeegError):
    pass


class CoverageError(GazeegError):
    pass


class RangeError(GazeegError):
    pass


# --- gaze ---

class GeometryError(GazeegError):
    pass


# --- eeg ---

class FilterDesignError(GazeegError):
    pass


class TooFewChannels(GazeegError):
    pass


class AllRejected(GazeegError):
    pass


class OutOfBounds(GazeegError):
    pass


# --- features ---

class DegenerateSignal(GazeegError):
    pass


class EpochTooShort(GazeegError):
    pass


class SingularCovariance(GazeegError):
    pass


class OneClassOnly(GazeegError):
    pass


class DuplicateFeatureName(GazeegError):
    pass


# --- eval ---

class TooFewSamples(GazeegError):
    pass


class NothingToReport(GazeegError):
    pass


# --- synth / config ---

class ConfigError(GazeegError):
    pass
