"""
Library database: performance-relevant external routines.
Each entry says which implicit parameters the library provides, which argument
slots receive a taint source (e.g. MPI_Comm_size writes label "p" into its
argument), and which parameters a call adds to the enclosing function's
dependencies (e.g. MPI_Send depends on p and on the labels of its count).

Slot numbering follows the extern() intrinsic: slot 0 is the routine name,
data arguments occupy slots 1..arity.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from pydantic import ValidationError as PydanticValidationError

from .errors import ExternError, LibraryDBError
from .schemas import LibEntry, LibraryDBDoc
from .types import EMPTY, LabelSet

logger = logging.getLogger(__name__)

DEFAULT_DB_PATH = Path(__file__).resolve().parent / "data" / "libdb.json"

Number = Union[int, float]


@dataclass(frozen=True)
class LibraryDB:
    entries: Mapping[str, LibEntry] = field(default_factory=dict)
    implicit_params: Tuple[str, ...] = ()

    def get(self, name: str) -> Optional[LibEntry]:
        return self.entries.get(name)

    def is_relevant(self, name: str) -> bool:
        """Relevant = the routine can introduce a parameter (source write or dependency template)."""
        entry = self.entries.get(name)
        return entry is not None and bool(entry.source_writes or entry.dep_template)


@dataclass(frozen=True)
class ExternOutcome:
    value: Number
    labels: LabelSet  # labels of the return value
    atoms: LabelSet  # dependency parameters added to the enclosing call-path record
    writes: Tuple[Tuple[int, Number, LabelSet], ...]  # (slot, value, labels to add)
    hint: Optional[str] = None


def build_db(doc: LibraryDBDoc) -> LibraryDB:
    declared = list(doc.implicit_params)
    if len(set(declared)) != len(declared):
        raise LibraryDBError("implicit parameters must be declared once")
    entries: Dict[str, LibEntry] = {}
    for entry in doc.entries:
        if entry.name in entries:
            raise LibraryDBError(f"duplicate library entry {entry.name!r}")
        for name in entry.implicit_params:
            if name not in declared:
                raise LibraryDBError(f"{entry.name}: implicit parameter {name!r} is not declared")
        entries[entry.name] = entry
    return LibraryDB(entries=entries, implicit_params=tuple(declared))


def load_db(path: Union[str, Path, None] = None) -> LibraryDB:
    """Load a libdb.json file (None = the bundled MPI-like database). Empty file = empty DB."""
    path = Path(path) if path is not None else DEFAULT_DB_PATH
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise LibraryDBError(f"cannot read library database {path}: {exc}") from exc
    if not text.strip():
        logger.warning("library database %s is empty", path)
        return LibraryDB()
    try:
        doc = LibraryDBDoc.model_validate(json.loads(text))
    except (json.JSONDecodeError, PydanticValidationError) as exc:
        raise LibraryDBError(f"malformed library database {path}: {exc}") from exc
    db = build_db(doc)
    logger.info("loaded %d library entr(ies) from %s", len(db.entries), path)
    return db


def apply_extern(
    entry: LibEntry,
    arg_values: Sequence[Number],
    arg_labels: Sequence[LabelSet],
    param_values: Mapping[str, Number],
) -> ExternOutcome:
    """Effect of one extern call: return value/labels, source writes and dependency atoms.
    Labels are only ever added, never removed."""
    if len(arg_values) != entry.arity or len(arg_labels) != entry.arity:
        raise ExternError(f"extern {entry.name} expects {entry.arity} argument(s), got {len(arg_values)}")

    writes: List[Tuple[int, Number, LabelSet]] = []
    for sw in entry.source_writes:
        if sw.label not in param_values:
            raise ExternError(f"extern {entry.name}: no value configured for parameter {sw.label!r}")
        writes.append((sw.arg, param_values[sw.label], frozenset({sw.label})))
    for cw in entry.constant_writes:
        writes.append((cw.arg, cw.value, EMPTY))

    atoms = set()
    for atom in entry.dep_template:
        if atom.param is not None:
            atoms.add(atom.param)
        else:
            atoms |= arg_labels[atom.arg - 1]

    labels = frozenset().union(*arg_labels) if arg_labels else EMPTY
    return ExternOutcome(
        value=entry.returns,
        labels=labels,
        atoms=frozenset(atoms),
        writes=tuple(writes),
        hint=entry.loop_semantics,
    )
