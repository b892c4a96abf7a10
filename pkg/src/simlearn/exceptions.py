"""Exception hierarchy.

``DataError`` subclasses signal bad input data (CLI exit code 2); everything
else deriving from ``SimLearnError`` is a programming or configuration error.
"""


class SimLearnError(Exception):
    pass


class DataError(SimLearnError):
    pass


class MalformedRecord(DataError):
    def __init__(self, line_no, reason=""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: malformed record{': ' + reason if reason else ''}")


class NonMonotonicTimestamp(DataError):
    def __init__(self, student_id, line_no):
        self.student_id = student_id
        self.line_no = line_no
        super().__init__(f"line {line_no}: timestamp decreases for student {student_id!r}")


class EmptySession(DataError):
    pass


class EmptySequence(DataError):
    pass


class UnmatchedState(SimLearnError):
    def __init__(self, snapshot, matches=0):
        self.snapshot = snapshot
        super().__init__(f"state snapshot matched {matches} categories: {snapshot!r}")


class AmbiguousAction(SimLearnError):
    pass


class SchemaError(SimLearnError):
    pass


class UnknownRanking(DataError):
    pass


class ShapeMismatch(ValueError, SimLearnError):
    pass


class DivergedLoss(SimLearnError, ArithmeticError):
    pass


class EmptyNode(ValueError, SimLearnError):
    pass


class SingleClassDataset(DataError, ValueError):
    pass


class SingleClass(DataError, ValueError):
    pass


class TooFewPerClass(DataError, ValueError):
    pass


class EmptyHorizonCohort(DataError):
    pass


class WrongVariant(SimLearnError, TypeError):
    pass


class EmptyCohort(DataError):
    pass


class InvalidConfig(SimLearnError, ValueError):
    pass


class IngestWarning(UserWarning):
    pass


class IoFailure(SimLearnError, OSError):
    pass
