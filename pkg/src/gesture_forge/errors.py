"""Exception hierarchy shared by every pipeline stage."""


class GestureForgeError(Exception):
    """Base class for all errors raised by gesture_forge."""


# -- ingest ---------------------------------------------------------------

class MissingColumn(GestureForgeError, ValueError):
    pass


class NonMonotonicTimestamps(GestureForgeError, ValueError):
    pass


class MalformedRow(GestureForgeError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TooFewValidFrames(GestureForgeError, ValueError):
    pass


class DuplicateStimulusIndex(GestureForgeError, ValueError):
    pass


class NonIncreasingTimes(GestureForgeError, ValueError):
    pass


# -- event detection ------------------------------------------------------

class WindowTooLarge(GestureForgeError, ValueError):
    pass


class EvenWindow(GestureForgeError, ValueError):
    pass


# -- clustering -----------------------------------------------------------

class InvalidDamping(GestureForgeError, ValueError):
    pass


class EmptyInput(GestureForgeError, ValueError):
    pass


class InvalidAssignment(GestureForgeError, ValueError):
    pass


# -- gestures -------------------------------------------------------------

class MismatchedSizes(GestureForgeError, ValueError):
    pass


class EmptyCohort(GestureForgeError, ValueError):
    pass


# -- ranking --------------------------------------------------------------

class EmptyList(GestureForgeError, ValueError):
    pass


class LengthMismatch(GestureForgeError, ValueError):
    pass


class EmptyCandidates(GestureForgeError, ValueError):
    pass


class ExcludedSubject(GestureForgeError):
    """Raised when a subject cannot be evaluated; ``reason`` says why."""

    def __init__(self, subject_id: str, reason: str):
        super().__init__(f"{subject_id}: {reason}")
        self.subject_id = subject_id
        self.reason = reason


class NoIncludedSubjects(GestureForgeError, ValueError):
    pass


# -- synthesis ------------------------------------------------------------

class ScheduleOverflow(GestureForgeError, ValueError):
    pass
