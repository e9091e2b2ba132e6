"""
In-memory store
Holds programs, taint runs and their analyses in memory (tiny database in RAM).
Thread-safe so multiple requests don’t clash.
"""

from dataclasses import dataclass, field
from threading import RLock
from time import time
from typing import Dict, Mapping, Optional
from uuid import uuid4

from .dsl import Program
from .engine import TraceReport
from .validation import ValidationReport
from .volume import DependencyReport


@dataclass
class ProgramEntry:
    id: str
    source: str
    program: Program
    validation: ValidationReport
    created_at: float = field(default_factory=time)


@dataclass
class RunEntry:
    id: str
    program_id: str
    params: Mapping[str, float]
    trace: TraceReport
    analysis: Optional[DependencyReport] = None
    created_at: float = field(default_factory=time)


class ArtifactStore:
    def __init__(self) -> None:
        self._programs: Dict[str, ProgramEntry] = {}
        self._runs: Dict[str, RunEntry] = {}
        # FastAPI can process multiple requests in parallel. Avoid race conditions
        self._lock = RLock()

    def add_program(self, source: str, program: Program, validation: ValidationReport) -> ProgramEntry:
        entry = ProgramEntry(id=str(uuid4()), source=source, program=program, validation=validation)
        with self._lock:
            self._programs[entry.id] = entry
        return entry

    def get_program(self, program_id: str) -> Optional[ProgramEntry]:
        with self._lock:
            return self._programs.get(program_id)

    def add_run(self, program_id: str, params: Mapping[str, float], trace: TraceReport) -> RunEntry:
        with self._lock:
            if program_id not in self._programs:
                raise KeyError(program_id)
            entry = RunEntry(id=str(uuid4()), program_id=program_id, params=dict(params), trace=trace)
            self._runs[entry.id] = entry
        return entry

    def get_run(self, run_id: str) -> Optional[RunEntry]:
        with self._lock:
            return self._runs.get(run_id)

    def set_analysis(self, run_id: str, report: DependencyReport) -> RunEntry:
        """Keeps the first analysis of a run."""
        with self._lock:
            run = self._runs[run_id]
            if run.analysis is None:
                run.analysis = report
            return run

    def clear(self) -> None:
        with self._lock:
            self._programs.clear()
            self._runs.clear()
