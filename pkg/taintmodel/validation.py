"""
Static validation of a parsed Program.
- unresolved call targets / extern names (errors)
- writes to undeclared variables, reads of undeclared names, shadowed globals (errors)
- recursive call cycles reachable from the entry (warnings, analysis over-approximates)
- constant-trip-count loops: literal bounds and step, loop variable untouched in the body
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Set

import networkx as nx

from .dsl import (
    BUILTINS, Assign, Call, Extern, For, Function, Index, IndexAssign, Let, Num,
    Program, Source, Var, While, calls_in, walk, write_set,
)
from .errors import ValidationError

if TYPE_CHECKING:
    from .libdb import LibraryDB

logger = logging.getLogger(__name__)


@dataclass
class ValidationReport:
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    recursion_cycles: List[List[str]] = field(default_factory=list)
    constant_loops: Dict[int, int] = field(default_factory=dict)  # loop id -> trip count
    dynamic_loops: List[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_for_errors(self) -> None:
        if self.errors:
            raise ValidationError(self.errors)


def constant_trip_count(loop) -> Optional[int]:
    """Trip count of a loop whose count is fixed by the source text, else None."""
    if not isinstance(loop, For):
        return None
    step = loop.step if loop.step is not None else Num(1)
    if not all(isinstance(e, Num) for e in (loop.start, loop.end, step)):
        return None
    if step.value <= 0 or loop.var in write_set(loop.body):
        return None
    return max(0, math.ceil((loop.end.value - loop.start.value) / step.value))


def call_graph(program: Program) -> nx.DiGraph:
    graph = nx.DiGraph()
    for fn in program.functions:
        graph.add_node(fn.name)
        for node in walk(fn.body):
            if isinstance(node, Call) and node.name in program.by_name:
                graph.add_edge(fn.name, node.name)
    return graph


def recursion_cycles(program: Program) -> List[List[str]]:
    """Call cycles reachable from the entry, each rotated to start at its smallest name."""
    graph = call_graph(program)
    if program.entry not in graph:
        return []
    reachable = nx.descendants(graph, program.entry) | {program.entry}
    cycles = []
    for cycle in nx.simple_cycles(graph.subgraph(reachable)):
        pivot = cycle.index(min(cycle))
        cycles.append(cycle[pivot:] + cycle[:pivot])
    return sorted(cycles)


def _check_function(fn: Function, program: Program, db: Optional["LibraryDB"], report: ValidationReport) -> None:
    globals_ = set(program.explicit_params)
    declared: Set[str] = set(fn.params)
    for node in walk(fn.body):
        if isinstance(node, Let):
            declared.add(node.name)
        elif isinstance(node, For):
            declared.add(node.var)

    for name in sorted(declared & globals_):
        report.errors.append(f"{fn.name}: variable {name!r} shadows global parameter")

    for node in walk(fn.body):
        where = f"{fn.name} line {node.line}"
        if isinstance(node, (Assign, IndexAssign)):
            if node.name in globals_:
                report.errors.append(f"{where}: write to read-only parameter {node.name!r}")
            elif node.name not in declared:
                report.errors.append(f"{where}: write to undeclared variable {node.name!r}")
        elif isinstance(node, (Var, Index)) and node.name not in declared | globals_:
            report.errors.append(f"{where}: read of undeclared variable {node.name!r}")
        elif isinstance(node, Source):
            if node.name not in declared | globals_:
                report.errors.append(f"{where}: source() on undeclared variable {node.name!r}")
            if node.label not in program.declared_params:
                report.errors.append(f"{where}: source() label {node.label!r} is not a declared parameter")
        elif isinstance(node, Call) and node.name not in BUILTINS:
            callee = program.by_name.get(node.name)
            if callee is None:
                report.errors.append(f"{where}: unresolved call target {node.name!r}")
            elif len(callee.params) != len(node.args):
                report.errors.append(
                    f"{where}: {node.name} expects {len(callee.params)} argument(s), got {len(node.args)}"
                )
        elif isinstance(node, Extern):
            entry = db.get(node.name) if db is not None else None
            if entry is None:
                report.errors.append(f"{where}: extern {node.name!r} is not in the library database")
            elif entry.arity != len(node.args):
                report.errors.append(
                    f"{where}: extern {node.name} expects {entry.arity} argument(s), got {len(node.args)}"
                )
        elif isinstance(node, While) and calls_in(node.cond):
            report.warnings.append(f"{where}: call in loop condition; it is counted once per iteration plus one")


def validate(program: Program, db: Optional["LibraryDB"] = None) -> ValidationReport:
    """Check a Program against itself and the library database (None = empty database)."""
    report = ValidationReport()
    if program.entry not in program.by_name:
        report.errors.append(f"program has no entry function {program.entry!r}")

    declared_implicit = set(db.implicit_params) if db is not None else set()
    for name in program.implicit_params:
        if name not in declared_implicit:
            report.errors.append(f"implicit parameter {name!r} is not declared by the library database")

    for fn in program.functions:
        _check_function(fn, program, db, report)

    report.recursion_cycles = recursion_cycles(program)
    for cycle in report.recursion_cycles:
        report.warnings.append("recursion: " + " -> ".join(cycle + [cycle[0]]))

    for loop in program.loops():
        trips = constant_trip_count(loop)
        if trips is None:
            report.dynamic_loops.append(loop.node_id)
        else:
            report.constant_loops[loop.node_id] = trips

    logger.info(
        "validated program: %d error(s), %d warning(s), %d constant / %d dynamic loop(s)",
        len(report.errors), len(report.warnings), len(report.constant_loops), len(report.dynamic_loops),
    )
    return report
