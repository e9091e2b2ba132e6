"""
Exception hierarchy.
Every failure the pipeline reports on purpose is a TaintModelError, so the CLI and
the HTTP layer can turn it into an exit code or a status code in one place.
"""

from typing import List, Optional, Sequence, Tuple

from .types import CallPath, format_call_path


class TaintModelError(Exception):
    """Base class for all expected failures."""


# ---- dsl ----

class ParseError(TaintModelError):
    def __init__(self, message: str, line: int, col: int) -> None:
        super().__init__(f"{message} at line {line}, column {col}")
        self.line = line
        self.col = col


class ValidationError(TaintModelError):
    def __init__(self, errors: Sequence[str]) -> None:
        super().__init__("program is invalid: " + "; ".join(errors))
        self.errors = list(errors)


# ---- taint engine ----

class TaintError(TaintModelError):
    """Misuse of the taint state (unknown variable, undeclared label, stack underflow)."""


class RunError(TaintModelError):
    def __init__(self, message: str, call_path: CallPath = ()) -> None:
        where = format_call_path(call_path) or "<entry>"
        super().__init__(f"{message} (call path {where})")
        self.call_path = call_path


class EvaluationError(RunError):
    """Concrete evaluation failed (division by zero, bad operand types, ...)."""


class LoopGuardError(RunError):
    def __init__(self, loop_id: int, limit: int, call_path: CallPath = ()) -> None:
        super().__init__(f"loop {loop_id} exceeded {limit} iterations", call_path)
        self.loop_id = loop_id


# ---- library database ----

class LibraryDBError(TaintModelError):
    pass


class ExternError(TaintModelError):
    pass


# ---- analysis ----

class AnalysisError(TaintModelError):
    pass


# ---- modeling ----

class FitError(TaintModelError):
    pass


class HypothesisRejected(FitError):
    pass


class UnderdeterminedError(FitError):
    def __init__(self, message: str, minimum: int) -> None:
        super().__init__(f"{message}; underdetermined: need at least {minimum} configurations")
        self.minimum = minimum


# ---- experiments ----

class IngestError(TaintModelError):
    def __init__(self, problems: List[Tuple[int, str]], path: Optional[str] = None) -> None:
        lines = [f"line {line}: {msg}" for line, msg in problems]
        prefix = f"{path}: " if path else ""
        super().__init__(prefix + "; ".join(lines))
        self.problems = problems


class DesignError(TaintModelError):
    pass


class CorpusSpecError(TaintModelError):
    pass


class ExperimentError(TaintModelError):
    """Inputs of an experiment check do not belong together."""


class ArtifactError(TaintModelError):
    """An artifact file is missing, unreadable or does not match its schema."""
