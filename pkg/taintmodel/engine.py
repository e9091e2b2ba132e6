"""
Taint engine: runs a PTL program concretely while tracking parameter labels.

- Sources: explicit parameters (labeled with their own name at start-up),
  source(var, "label") statements, and library source writes.
- Propagation: label-set union over data flow; while a tainted branch or loop
  scope is active its labels join every write (explicit control flow). With
  implicit flows on, leaving a scope also taints the static write-set of the
  arm that did not run.
- Sinks: every evaluation of a loop exit condition, and every tainted `if`.

A single run is sequential; the TraceReport it returns is never mutated again.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

from .dsl import (
    BUILTINS, Assign, Binary, Call, Expr, ExprStmt, Extern, For, Function, If, Index,
    IndexAssign, Let, Num, Program, Return, Source, Stmt, Unary, Var, While, walk, write_set,
)
from .errors import EvaluationError, ExternError, LoopGuardError, RunError, TaintError
from .libdb import LibraryDB, apply_extern
from .types import EMPTY, Arm, CallPath, LabelSet, LoopKey, SinkKind
from .validation import constant_trip_count, validate

logger = logging.getLogger(__name__)

Number = Union[int, float]
DEFAULT_MAX_TRIPS = 10 ** 8


# ---------------------------------------------------------------------------
# Runtime values and taint state
# ---------------------------------------------------------------------------

@dataclass
class PtlArray:
    """Arrays carry one label set for all elements; element writes union into it."""
    values: List[Number]
    labels: LabelSet = EMPTY


Value = Union[Number, PtlArray]


class Tainted(NamedTuple):
    value: Value
    labels: LabelSet


@dataclass
class Frame:
    function: str
    call_path: CallPath
    values: Dict[str, Value] = field(default_factory=dict)
    labels: Dict[str, LabelSet] = field(default_factory=dict)


@dataclass
class TaintState:
    declared_params: frozenset = frozenset()
    globals: Frame = field(default_factory=lambda: Frame("<globals>", ()))
    frames: List[Frame] = field(default_factory=list)
    control_stack: List[LabelSet] = field(default_factory=list)

    @property
    def frame(self) -> Frame:
        return self.frames[-1] if self.frames else self.globals

    def scope_of(self, name: str) -> Optional[Frame]:
        if name in self.frame.values:
            return self.frame
        if name in self.globals.values:
            return self.globals
        return None

    def lookup(self, name: str) -> Tainted:
        scope = self.scope_of(name)
        if scope is None:
            raise EvaluationError(f"unbound variable {name!r}", self.frame.call_path)
        value = scope.values[name]
        labels = value.labels if isinstance(value, PtlArray) else scope.labels.get(name, EMPTY)
        return Tainted(value, labels)

    def control_labels(self) -> LabelSet:
        if not self.control_stack:
            return EMPTY
        return frozenset().union(*self.control_stack)

    def write(self, name: str, value: Value, labels: LabelSet) -> None:
        """Strong update of a variable in the current frame."""
        frame = self.frame
        frame.values[name] = value
        if isinstance(value, PtlArray):
            value.labels = value.labels | labels
            frame.labels[name] = value.labels
        else:
            frame.labels[name] = labels

    def add_labels(self, name: str, labels: LabelSet) -> None:
        """Weak update: union labels into an existing variable."""
        scope = self.scope_of(name)
        if scope is None:
            return
        value = scope.values[name]
        if isinstance(value, PtlArray):
            value.labels = value.labels | labels
            scope.labels[name] = value.labels
        else:
            scope.labels[name] = scope.labels.get(name, EMPTY) | labels


def mark_source(state: TaintState, var: str, label: str) -> TaintState:
    """Attach a parameter label to a variable (union, so marking twice is a no-op)."""
    if label not in state.declared_params:
        raise TaintError(f"label {label!r} is not a declared parameter")
    if state.scope_of(var) is None:
        raise TaintError(f"cannot mark unknown variable {var!r}")
    state.add_labels(var, frozenset({label}))
    return state


def enter_control(state: TaintState, condition_labels: LabelSet) -> TaintState:
    """Open a tainted control scope; writes inside it pick up condition_labels."""
    state.control_stack.append(frozenset(condition_labels))
    return state


def exit_control(state: TaintState, untaken_writes: Iterable[str] = (), implicit: bool = True) -> TaintState:
    """Close the innermost control scope. With implicit flows on, every variable the
    untaken arm could have written also receives the scope's labels."""
    if not state.control_stack:
        raise TaintError("control stack underflow")
    labels = state.control_stack.pop()
    if implicit:
        joined = labels | state.control_labels()
        for name in sorted(untaken_writes):
            if name in state.frame.values:  # globals are read-only
                state.add_labels(name, joined)
    return state


# ---------------------------------------------------------------------------
# Expression evaluation
# ---------------------------------------------------------------------------

CallHook = Callable[[Union[Call, Extern]], Tainted]


def _number(value: Value, where: CallPath) -> Number:
    if isinstance(value, PtlArray):
        raise EvaluationError("array used where a number is expected", where)
    return value


def _arith(op: str, a: Number, b: Number, where: CallPath) -> Number:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op in ("/", "%") and b == 0:
        raise EvaluationError("division by zero", where)
    if op == "/":
        if isinstance(a, int) and isinstance(b, int):
            quotient = abs(a) // abs(b)
            return quotient if (a >= 0) == (b >= 0) else -quotient
        return a / b
    if op == "%":
        result = math.fmod(a, b)
        return int(result) if isinstance(a, int) and isinstance(b, int) else result
    if op == "<":
        return int(a < b)
    if op == "<=":
        return int(a <= b)
    if op == ">":
        return int(a > b)
    if op == ">=":
        return int(a >= b)
    if op == "==":
        return int(a == b)
    if op == "!=":
        return int(a != b)
    if op == "and":
        return int(bool(a) and bool(b))
    if op == "or":
        return int(bool(a) or bool(b))
    raise EvaluationError(f"unknown operator {op!r}", where)


def _builtin(name: str, args: Sequence[Tainted], where: CallPath) -> Tainted:
    labels = frozenset().union(*(a.labels for a in args))
    if name == "len":
        arr = args[0].value
        if not isinstance(arr, PtlArray):
            raise EvaluationError("len() expects an array", where)
        return Tainted(len(arr.values), labels)
    values = [_number(a.value, where) for a in args]
    try:
        if name == "pow":
            result = values[0] ** values[1]
            if isinstance(result, complex):
                raise EvaluationError("pow() produced a complex number", where)
        elif name == "log":
            if values[0] <= 0:
                raise EvaluationError("log() of a non-positive number", where)
            result = math.log2(values[0])
        elif name == "min":
            result = min(values)
        elif name == "max":
            result = max(values)
        elif name == "abs":
            result = abs(values[0])
        elif name == "array":
            size = int(values[0])
            if size < 0:
                raise EvaluationError("array() of negative size", where)
            return Tainted(PtlArray([0] * size, labels), labels)
        else:
            raise EvaluationError(f"unknown builtin {name!r}", where)
    except (OverflowError, ZeroDivisionError) as exc:
        raise EvaluationError(f"{name}() failed: {exc}", where) from exc
    return Tainted(result, labels)


def evaluate(state: TaintState, expr: Expr, call: Optional[CallHook] = None) -> Tainted:
    """Concrete value plus data-flow labels (control labels are not included)."""
    where = state.frame.call_path
    if isinstance(expr, Num):
        return Tainted(expr.value, EMPTY)
    if isinstance(expr, Var):
        return state.lookup(expr.name)
    if isinstance(expr, Index):
        arr = state.lookup(expr.name)
        idx = evaluate(state, expr.index, call)
        if not isinstance(arr.value, PtlArray):
            raise EvaluationError(f"{expr.name!r} is not an array", where)
        i = int(_number(idx.value, where))
        if not 0 <= i < len(arr.value.values):
            raise EvaluationError(f"index {i} out of range for {expr.name!r}", where)
        return Tainted(arr.value.values[i], arr.labels | idx.labels)
    if isinstance(expr, Unary):
        operand = evaluate(state, expr.operand, call)
        value = _number(operand.value, where)
        return Tainted(-value if expr.op == "-" else int(not value), operand.labels)
    if isinstance(expr, Binary):
        left = evaluate(state, expr.left, call)
        right = evaluate(state, expr.right, call)
        value = _arith(expr.op, _number(left.value, where), _number(right.value, where), where)
        return Tainted(value, left.labels | right.labels)
    if isinstance(expr, Call) and expr.name in BUILTINS:
        args = [evaluate(state, a, call) for a in expr.args]
        return _builtin(expr.name, args, where)
    if isinstance(expr, (Call, Extern)):
        if call is None:
            raise TaintError("calls cannot be evaluated outside a program run")
        return call(expr)
    raise EvaluationError(f"cannot evaluate {type(expr).__name__}", where)


def propagate_expr(state: TaintState, expr: Expr) -> LabelSet:
    """Labels a write of `expr` would carry: operand labels plus the active control labels."""
    return evaluate(state, expr).labels | state.control_labels()


# ---------------------------------------------------------------------------
# Trace records
# ---------------------------------------------------------------------------

@dataclass
class RunOptions:
    implicit_flows: bool = True
    max_trips: int = DEFAULT_MAX_TRIPS


@dataclass(frozen=True)
class SinkEvent:
    kind: SinkKind
    node_id: int
    call_path: CallPath
    function: str
    labels: LabelSet
    taken: Optional[bool] = None  # branch sinks only
    condition_label_count: int = 0
    hits: int = 1


@dataclass(frozen=True)
class TripCount:
    entries: int = 0
    total: int = 0
    max_per_entry: int = 0


@dataclass(frozen=True)
class BranchNote:
    node_id: int
    call_path: CallPath
    function: str
    arm: Arm
    labels: LabelSet
    skipped_loops: Tuple[int, ...] = ()  # dynamic loops in the arm; nothing is known about them


@dataclass(frozen=True)
class ExternCall:
    node_id: int
    call_path: CallPath
    function: str
    name: str
    atoms: LabelSet
    hint: Optional[str] = None
    calls: int = 1


@dataclass(frozen=True)
class FrameRecord:
    function: str
    call_path: CallPath
    context: LabelSet = EMPTY  # control labels active at entry, over all entries
    calls: int = 1


@dataclass(frozen=True)
class TraceReport:
    sink_events: Tuple[SinkEvent, ...] = ()
    trip_counts: Mapping[LoopKey, TripCount] = field(default_factory=dict)
    visited_branches: Tuple[Tuple[int, CallPath, Arm], ...] = ()
    unvisited_tainted_branches: Tuple[BranchNote, ...] = ()
    warnings: Tuple[str, ...] = ()
    frames: Tuple[FrameRecord, ...] = ()
    extern_calls: Tuple[ExternCall, ...] = ()
    result: Number = 0
    result_labels: LabelSet = EMPTY
    param_values: Mapping[str, Number] = field(default_factory=dict)
    implicit_flows: bool = True

    def loop_labels(self) -> Dict[LoopKey, LabelSet]:
        return {
            (e.node_id, e.call_path): e.labels for e in self.sink_events if e.kind == "loop_exit"
        }

    def loop_sink(self, key: LoopKey) -> Optional[SinkEvent]:
        for event in self.sink_events:
            if event.kind == "loop_exit" and (event.node_id, event.call_path) == key:
                return event
        return None


# ---------------------------------------------------------------------------
# Interpreter
# ---------------------------------------------------------------------------

class _ReturnSignal(Exception):
    def __init__(self, value: Tainted) -> None:
        self.value = value


class Interpreter:
    def __init__(
        self,
        program: Program,
        param_values: Mapping[str, Number],
        db: Optional[LibraryDB] = None,
        options: Optional[RunOptions] = None,
    ) -> None:
        self.program = program
        self.param_values = dict(param_values)
        self.db = db if db is not None else LibraryDB()
        self.options = options or RunOptions()
        self.state = TaintState(declared_params=frozenset(program.declared_params))
        # trace under construction
        self._loop_sinks: Dict[LoopKey, SinkEvent] = {}
        self._branch_sinks: Dict[Tuple[int, CallPath, bool], SinkEvent] = {}
        self._trips: Dict[LoopKey, TripCount] = {}
        self._externs: Dict[Tuple[int, CallPath], ExternCall] = {}
        self._frames: Dict[Tuple[str, CallPath], FrameRecord] = {}
        self._warnings: List[str] = []
        self._write_sets: Dict[Tuple[int, str], frozenset] = {}

    # ---- helpers ----

    @property
    def where(self) -> CallPath:
        return self.state.frame.call_path

    def _writes(self, node_id: int, arm: str, body: Tuple[Stmt, ...]) -> frozenset:
        cached = self._write_sets.get((node_id, arm))
        if cached is None:
            cached = write_set(body)
            self._write_sets[(node_id, arm)] = cached
        return cached

    def eval(self, expr: Expr) -> Tainted:
        return evaluate(self.state, expr, self._call)

    def _assign(self, name: str, result: Tainted) -> None:
        self.state.write(name, result.value, result.labels | self.state.control_labels())

    # ---- entry point ----

    def run(self) -> TraceReport:
        program = self.program
        for name in program.explicit_params:
            if name not in self.param_values:
                raise RunError(f"missing value for parameter {name!r}")
            self.state.globals.values[name] = self.param_values[name]
            self.state.globals.labels[name] = frozenset({name})

        entry = program.function(program.entry)
        result = self._invoke(entry, [], ())
        if self.state.control_stack:
            raise TaintError("control stack not empty at program exit")
        return self._report(result)

    def _report(self, result: Tainted) -> TraceReport:
        sinks = sorted(
            list(self._loop_sinks.values()) + list(self._branch_sinks.values()),
            key=lambda e: (e.kind, e.node_id, e.call_path, e.taken is True),
        )
        visited = sorted({(e.node_id, e.call_path, "then" if e.taken else "else")
                          for e in self._branch_sinks.values()})
        unvisited: List[BranchNote] = []
        for (node_id, call_path, taken), event in sorted(self._branch_sinks.items()):
            other = not taken
            if (node_id, call_path, other) in self._branch_sinks:
                continue
            node = self.program.nodes[node_id]
            block = node.then if other else node.orelse
            if block:
                skipped = tuple(n.node_id for n in walk(block)
                                if isinstance(n, (For, While)) and constant_trip_count(n) is None)
                unvisited.append(BranchNote(node_id, call_path, event.function,
                                            "then" if other else "else", event.labels, skipped))
        return TraceReport(
            sink_events=tuple(sinks),
            trip_counts=dict(sorted(self._trips.items())),
            visited_branches=tuple(visited),
            unvisited_tainted_branches=tuple(unvisited),
            warnings=tuple(self._warnings),
            frames=tuple(self._frames.values()),
            extern_calls=tuple(sorted(self._externs.values(), key=lambda x: (x.node_id, x.call_path))),
            result=_number(result.value, ()),
            result_labels=result.labels,
            param_values=dict(sorted(self.param_values.items())),
            implicit_flows=self.options.implicit_flows,
        )

    # ---- calls ----

    def _invoke(self, fn: Function, args: Sequence[Tainted], call_path: CallPath) -> Tainted:
        control = self.state.control_labels()
        frame = Frame(fn.name, call_path)
        for name, arg in zip(fn.params, args):
            frame.values[name] = arg.value
            frame.labels[name] = (arg.value.labels if isinstance(arg.value, PtlArray) else arg.labels) | control
        self.state.frames.append(frame)
        previous = self._frames.get((fn.name, call_path))
        self._frames[(fn.name, call_path)] = FrameRecord(
            fn.name, call_path,
            context=control | (previous.context if previous else EMPTY),
            calls=(previous.calls + 1) if previous else 1,
        )
        depth = len(self.state.control_stack)
        try:
            self._exec_block(fn.body)
            result = Tainted(0, EMPTY)
        except _ReturnSignal as ret:
            result = ret.value
        finally:
            del self.state.control_stack[depth:]
            self.state.frames.pop()
        return result

    def _call(self, node: Union[Call, Extern]) -> Tainted:
        if isinstance(node, Extern):
            return self._extern(node)
        args = [self.eval(a) for a in node.args]
        callee = self.program.function(node.name)
        if any(f.function == callee.name for f in self.state.frames):
            self._warnings.append(
                f"recursion at runtime: call to {callee.name} at node {node.node_id} treated as opaque"
            )
            logger.warning("recursive call to %s treated as opaque", callee.name)
            labels = frozenset().union(*(a.labels for a in args)) if args else EMPTY
            return Tainted(0, labels | self.state.control_labels())
        return self._invoke(callee, args, self.where + (node.node_id,))

    def _extern(self, node: Extern) -> Tainted:
        entry = self.db.get(node.name)
        if entry is None:
            raise ExternError(f"extern {node.name!r} is not in the library database")
        args = [self.eval(a) for a in node.args]
        outcome = apply_extern(
            entry,
            [a.value if not isinstance(a.value, PtlArray) else len(a.value.values) for a in args],
            [a.labels for a in args],
            self.param_values,
        )
        control = self.state.control_labels()
        for slot, value, labels in outcome.writes:
            target = node.args[slot - 1]
            if not isinstance(target, Var):
                raise ExternError(f"extern {node.name}: slot {slot} must be a variable")
            old = self.state.lookup(target.name).labels
            self.state.write(target.name, value, old | labels | control)
        key = (node.node_id, self.where)
        previous = self._externs.get(key)
        self._externs[key] = ExternCall(
            node_id=node.node_id,
            call_path=self.where,
            function=self.state.frame.function,
            name=node.name,
            atoms=outcome.atoms | (previous.atoms if previous else EMPTY),
            hint=outcome.hint,
            calls=(previous.calls + 1) if previous else 1,
        )
        return Tainted(outcome.value, outcome.labels | control)

    # ---- statements ----

    def _exec_block(self, body: Tuple[Stmt, ...]) -> None:
        for stmt in body:
            self._exec(stmt)

    def _exec(self, stmt: Stmt) -> None:
        if isinstance(stmt, (Let, Assign)):
            self._assign(stmt.name, self.eval(stmt.value))
        elif isinstance(stmt, IndexAssign):
            arr = self.state.lookup(stmt.name)
            idx = self.eval(stmt.index)
            value = self.eval(stmt.value)
            if not isinstance(arr.value, PtlArray):
                raise EvaluationError(f"{stmt.name!r} is not an array", self.where)
            i = int(_number(idx.value, self.where))
            if not 0 <= i < len(arr.value.values):
                raise EvaluationError(f"index {i} out of range for {stmt.name!r}", self.where)
            arr.value.values[i] = _number(value.value, self.where)
            self.state.add_labels(stmt.name, idx.labels | value.labels | self.state.control_labels())
        elif isinstance(stmt, If):
            self._exec_if(stmt)
        elif isinstance(stmt, For):
            self._exec_for(stmt)
        elif isinstance(stmt, While):
            self._exec_while(stmt)
        elif isinstance(stmt, Return):
            result = self.eval(stmt.value) if stmt.value is not None else Tainted(0, EMPTY)
            raise _ReturnSignal(Tainted(result.value, result.labels | self.state.control_labels()))
        elif isinstance(stmt, Source):
            mark_source(self.state, stmt.name, stmt.label)
        elif isinstance(stmt, ExprStmt):
            self.eval(stmt.expr)
        else:
            raise RunError(f"unknown statement {type(stmt).__name__}", self.where)

    def _exec_if(self, stmt: If) -> None:
        cond = self.eval(stmt.cond)
        taken = bool(_number(cond.value, self.where))
        labels = cond.labels | self.state.control_labels()
        if not labels:
            self._exec_block(stmt.then if taken else stmt.orelse)
            return

        key = (stmt.node_id, self.where, taken)
        previous = self._branch_sinks.get(key)
        self._branch_sinks[key] = SinkEvent(
            kind="branch",
            node_id=stmt.node_id,
            call_path=self.where,
            function=self.state.frame.function,
            labels=labels | (previous.labels if previous else EMPTY),
            taken=taken,
            condition_label_count=max(len(labels), previous.condition_label_count if previous else 0),
            hits=(previous.hits + 1) if previous else 1,
        )
        untaken = stmt.orelse if taken else stmt.then
        depth = len(self.state.control_stack)
        enter_control(self.state, cond.labels)
        try:
            self._exec_block(stmt.then if taken else stmt.orelse)
        except _ReturnSignal:
            del self.state.control_stack[depth:]
            raise
        exit_control(self.state, self._writes(stmt.node_id, "else" if taken else "then", untaken),
                     implicit=self.options.implicit_flows)

    def _record_exit_condition(self, node_id: int, labels: LabelSet) -> None:
        key = (node_id, self.where)
        previous = self._loop_sinks.get(key)
        self._loop_sinks[key] = SinkEvent(
            kind="loop_exit",
            node_id=node_id,
            call_path=self.where,
            function=self.state.frame.function,
            labels=labels | (previous.labels if previous else EMPTY),
            condition_label_count=max(len(labels), previous.condition_label_count if previous else 0),
            hits=(previous.hits + 1) if previous else 1,
        )

    def _record_trips(self, node_id: int, trips: int) -> None:
        key = (node_id, self.where)
        previous = self._trips.get(key, TripCount())
        self._trips[key] = TripCount(
            entries=previous.entries + 1,
            total=previous.total + trips,
            max_per_entry=max(previous.max_per_entry, trips),
        )

    def _loop(self, node_id: int, body: Tuple[Stmt, ...], condition: Callable[[], Tainted],
              advance: Callable[[], None]) -> None:
        """Shared loop driver: check, record sink, run body under the condition's labels."""
        depth = len(self.state.control_stack)
        scope: Optional[int] = None  # index of this loop's control entry
        trips = 0
        try:
            while True:
                cond = condition()
                labels = cond.labels | self.state.control_labels()
                self._record_exit_condition(node_id, labels)
                if cond.labels:
                    if scope is None:
                        enter_control(self.state, cond.labels)
                        scope = len(self.state.control_stack) - 1
                    else:
                        self.state.control_stack[scope] |= cond.labels
                if not _number(cond.value, self.where):
                    break
                trips += 1
                if trips > self.options.max_trips:
                    raise LoopGuardError(node_id, self.options.max_trips, self.where)
                self._exec_block(body)
                advance()
        except _ReturnSignal:
            del self.state.control_stack[depth:]
            self._record_trips(node_id, trips)
            raise
        self._record_trips(node_id, trips)
        if scope is not None:
            exit_control(self.state, self._writes(node_id, "body", body), implicit=self.options.implicit_flows)

    def _exec_for(self, stmt: For) -> None:
        start = self.eval(stmt.start)
        end = self.eval(stmt.end)
        step = self.eval(stmt.step) if stmt.step is not None else Tainted(1, EMPTY)
        if _number(step.value, self.where) <= 0:
            raise EvaluationError(f"loop {stmt.node_id} has a non-positive step", self.where)
        bound_labels = end.labels | step.labels
        self._assign(stmt.var, start)

        def condition() -> Tainted:
            current = self.state.lookup(stmt.var)
            value = int(_number(current.value, self.where) < _number(end.value, self.where))
            return Tainted(value, current.labels | bound_labels)

        def advance() -> None:
            current = self.state.lookup(stmt.var)
            self._assign(stmt.var, Tainted(_number(current.value, self.where) + step.value,
                                           current.labels | step.labels))

        self._loop(stmt.node_id, stmt.body, condition, advance)

    def _exec_while(self, stmt: While) -> None:
        self._loop(stmt.node_id, stmt.body, lambda: self.eval(stmt.cond), lambda: None)


def run(
    program: Program,
    param_values: Mapping[str, Number],
    db: Optional[LibraryDB] = None,
    opts: Optional[RunOptions] = None,
) -> TraceReport:
    """Validate, then execute the program under taint tracking."""
    validate(program, db).raise_for_errors()
    trace = Interpreter(program, param_values, db, opts).run()
    logger.info(
        "run finished: %d loop record(s), %d branch sink(s), %d warning(s)",
        len(trace.trip_counts), sum(1 for e in trace.sink_events if e.kind == "branch"), len(trace.warnings),
    )
    return trace


def perturbation_oracle(
    program: Program,
    base_config: Mapping[str, Number],
    db: Optional[LibraryDB] = None,
    deltas: Sequence[Number] = (2,),
    opts: Optional[RunOptions] = None,
) -> Dict[LoopKey, frozenset]:
    """Ground truth for loop dependencies: p influences loop L iff scaling p changes L's
    total trip count. Used by tests to check the taint analysis has no false negatives."""
    base = run(program, base_config, db, opts).trip_counts
    influence: Dict[LoopKey, set] = {key: set() for key in base}
    for param in sorted(base_config):
        for delta in deltas:
            config = dict(base_config)
            config[param] = base_config[param] * delta
            perturbed = run(program, config, db, opts).trip_counts
            for key in set(base) | set(perturbed):
                influence.setdefault(key, set())
                before = base[key].total if key in base else 0
                after = perturbed[key].total if key in perturbed else 0
                if before != after:
                    influence[key].add(param)
    return {key: frozenset(params) for key, params in sorted(influence.items())}
