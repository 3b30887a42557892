"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class WorksheetError(Exception):
    """Base class for every error raised by this package."""


# --- specification loading ---------------------------------------------------

class SpecError(WorksheetError):
    pass


class SchemaError(SpecError):
    pass


class DuplicateNameError(SpecError):
    pass


class CycleError(SpecError):
    pass


class BadExpressionError(SpecError):
    pass


class HeaderMismatchError(SpecError):
    pass


class UnknownTypeError(SpecError):
    pass


# --- expression language ------------------------------------------------------

class ExprError(WorksheetError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int = 0, line: int = 1):
        super().__init__(f"{message} (line {line}, col {position})")
        self.position = position
        self.line = line


class TypeMismatchError(ExprError):
    pass


class UnknownReferenceError(ExprError):
    pass


# --- actions / APIs -----------------------------------------------------------

class UnknownApiError(WorksheetError):
    pass


class ArityMismatchError(WorksheetError):
    pass


class StubFailure(WorksheetError):
    pass


class ApiFailure(WorksheetError):
    pass


# --- dialogue state -----------------------------------------------------------

class StateError(WorksheetError):
    pass


class UnknownVarError(StateError):
    pass


class UnknownFieldError(StateError):
    pass


class ValueTypeError(StateError):
    """A value could not be coerced to the field's declared type."""


class DanglingReferenceError(StateError):
    pass


# --- knowledge backend --------------------------------------------------------

class KbError(WorksheetError):
    pass


class UnknownTableError(KbError):
    pass


class UnknownColumnError(KbError):
    pass


class TableParseError(KbError):
    def __init__(self, message: str, row: int, column: str | None = None):
        where = f"row {row}" + (f", column {column}" if column else "")
        super().__init__(f"{message} ({where})")
        self.row = row
        self.column = column


class TranslationFailure(KbError):
    pass


class KbFailure(KbError):
    pass


# --- backends -----------------------------------------------------------------

class BackendError(WorksheetError):
    pass


class ScriptExhausted(BackendError):
    pass


class TransportError(BackendError):
    pass


class RateLimited(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


# --- evaluation / service -----------------------------------------------------

class FixtureError(WorksheetError):
    pass


class SessionNotFound(WorksheetError):
    pass


class UnknownSpecError(WorksheetError):
    pass


class BackendInitError(WorksheetError):
    pass
