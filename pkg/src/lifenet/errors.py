"""Exception hierarchy.

Errors derived from :class:`ValidationError` describe bad inputs and map to
CLI exit code 1; everything else derived from :class:`LifenetError` is a
runtime failure (exit code 2).
"""

from __future__ import annotations


class LifenetError(Exception):
    """Base class for all package errors."""


class ValidationError(LifenetError, ValueError):
    """Input data or configuration violates a documented invariant."""


class NonMonotonicTime(ValidationError):
    def __init__(self, index: int, session_id: str = ""):
        self.index = index
        self.session_id = session_id
        where = f" in session {session_id!r}" if session_id else ""
        super().__init__(f"t_rel not strictly increasing at index {index}{where}")


class NonFinite(ValidationError):
    def __init__(self, index: int, field: str, session_id: str = ""):
        self.index = index
        self.field = field
        self.session_id = session_id
        where = f" in session {session_id!r}" if session_id else ""
        super().__init__(f"non-finite value in field {field!r} at index {index}{where}")


class TooShort(ValidationError):
    pass


class TooFewSessions(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class DuplicateSessionId(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class NonFiniteInput(ValidationError):
    pass


class EmptyIndexSet(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class NonFiniteGradient(ValidationError):
    pass


class EmptyBatch(ValidationError):
    pass


class ProfileOutOfRange(ValidationError):
    pass


class SingularDesign(ValidationError):
    pass


class TooFewRows(ValidationError):
    pass


class CsvFormatError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class DivergedRollout(LifenetError):
    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"rollout diverged at step {step}: |u| = {abs(value):.6g} degC exceeds 1e4")


class NonFiniteLoss(LifenetError):
    def __init__(self, epoch: int, value: float):
        self.epoch = epoch
        self.value = value
        super().__init__(f"non-finite training loss {value!r} at epoch {epoch}")


class BadStartTime(ValidationError):
    pass
