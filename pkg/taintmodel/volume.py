"""
Volume analysis: loop-nest trees, symbolic compute volume, dependency structure.

- build_loop_nests: one tree per executed (function, call_path); callee trees are
  inlined at their call sites, constant-trip loops become Const nodes.
- compose_volume: siblings add, a loop multiplies its body.
- classify_dependencies: parameters that meet in one product are multiplicative,
  the rest are additive.
- analyze: the whole pipeline, producing the DependencyReport consumed by the
  modeler and the experiment module.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Set, Tuple, Union

from .dsl import (
    Expr, Extern, For, If, Program, Source, Stmt, While, calls_in, child_exprs,
)
from .engine import BranchNote, ExternCall, FrameRecord, SinkEvent, TraceReport, TripCount
from .errors import AnalysisError
from .types import EMPTY, CallPath, LabelSet, LoopKey, format_call_path, parse_call_path
from .validation import ValidationReport, constant_trip_count

logger = logging.getLogger(__name__)

Number = Union[int, float]
View = Literal["own", "inclusive"]


# ---------------------------------------------------------------------------
# Volume expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: Number


@dataclass(frozen=True)
class Unresolved:
    """g(params): an iteration count (or call count, or library cost) known only empirically.

    own_params are the labels not inherited from enclosing loops; they decide the
    over-approximation flag."""
    node_id: int
    call_path: CallPath
    params: LabelSet
    own_params: LabelSet = EMPTY
    kind: Literal["loop", "extern", "calls"] = "loop"


@dataclass(frozen=True)
class Sum:
    children: Tuple["VolumeExpr", ...]


@dataclass(frozen=True)
class Product:
    children: Tuple["VolumeExpr", ...]


VolumeExpr = Union[Const, Unresolved, Sum, Product]


def normalize(expr: VolumeExpr) -> VolumeExpr:
    """Flatten nested sums/products, fold constants (kept first), drop neutral elements."""
    if isinstance(expr, (Const, Unresolved)):
        return expr
    kind = type(expr)
    flat: List[VolumeExpr] = []
    for child in (normalize(c) for c in expr.children):
        if isinstance(child, kind):
            flat.extend(child.children)
        else:
            flat.append(child)

    others = [c for c in flat if not isinstance(c, Const)]
    constants = [c.value for c in flat if isinstance(c, Const)]
    if kind is Sum:
        folded = sum(constants)
        if folded != 0 or not others:
            others.insert(0, Const(folded))
    else:
        folded = math.prod(constants)
        if folded == 0:
            return Const(0)
        if folded != 1 or not others:
            others.insert(0, Const(folded))
    if len(others) == 1:
        return others[0]
    return kind(tuple(others))


def unresolved_terms(expr: VolumeExpr) -> List[Unresolved]:
    if isinstance(expr, Unresolved):
        return [expr]
    if isinstance(expr, Const):
        return []
    return [u for c in expr.children for u in unresolved_terms(c)]


def volume_params(expr: VolumeExpr) -> LabelSet:
    return frozenset().union(*(u.params for u in unresolved_terms(expr))) if unresolved_terms(expr) else EMPTY


def format_volume(expr: VolumeExpr) -> str:
    if isinstance(expr, Const):
        return repr(expr.value)
    if isinstance(expr, Unresolved):
        prefix = {"loop": "g", "extern": "lib", "calls": "calls"}[expr.kind]
        return f"{prefix}{expr.node_id}({','.join(sorted(expr.params))})"
    sep = " + " if isinstance(expr, Sum) else " * "
    return "(" + sep.join(format_volume(c) for c in expr.children) + ")"


# ---------------------------------------------------------------------------
# Loop-nest trees
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoopNode:
    node_id: int
    call_path: CallPath
    labels: LabelSet
    own_labels: LabelSet
    constant_trips: Optional[int]
    children: Tuple["TreeNode", ...] = ()
    header: Tuple["TreeNode", ...] = ()  # calls in a while condition


@dataclass(frozen=True)
class CallSite:
    node_id: int
    callee: str
    call_path: CallPath  # the callee's call path
    children: Tuple["TreeNode", ...] = ()


@dataclass(frozen=True)
class ExternLeaf:
    node_id: int
    call_path: CallPath
    name: str
    params: LabelSet
    hint: Optional[str] = None


TreeNode = Union[LoopNode, CallSite, ExternLeaf]


@dataclass(frozen=True)
class LoopNestTree:
    function: str
    call_path: CallPath
    context: LabelSet  # control labels active when the frame was entered
    calls: int
    children: Tuple[TreeNode, ...]


def _constant_loops(program: Program, validation: Optional[ValidationReport]) -> Dict[int, int]:
    if validation is not None:
        return dict(validation.constant_loops)
    result = {}
    for loop in program.loops():
        trips = constant_trip_count(loop)
        if trips is not None:
            result[loop.node_id] = trips
    return result


class _TreeBuilder:
    def __init__(self, program: Program, trace: TraceReport, constant_loops: Mapping[int, int], inline: bool):
        self.program = program
        self.trace = trace
        self.constant_loops = constant_loops
        self.inline = inline
        self.loop_labels = trace.loop_labels()
        self.frames = {(f.function, f.call_path) for f in trace.frames}
        self.externs = {(e.node_id, e.call_path): e for e in trace.extern_calls}

    def calls(self, exprs: Iterable[Expr], cp: CallPath, outer: LabelSet) -> List[TreeNode]:
        nodes: List[TreeNode] = []
        for expr in exprs:
            for call in calls_in(expr):
                if isinstance(call, Extern):
                    ext = self.externs.get((call.node_id, cp))
                    if ext is not None and ext.atoms:
                        nodes.append(ExternLeaf(call.node_id, cp, call.name, ext.atoms, ext.hint))
                elif self.inline:
                    callee_cp = cp + (call.node_id,)
                    if (call.name, callee_cp) in self.frames:
                        body = self.block(self.program.function(call.name).body, callee_cp, outer)
                        nodes.append(CallSite(call.node_id, call.name, callee_cp, tuple(body)))
        return nodes

    def block(self, body: Tuple[Stmt, ...], cp: CallPath, outer: LabelSet) -> List[TreeNode]:
        nodes: List[TreeNode] = []
        for stmt in body:
            if isinstance(stmt, If):
                nodes += self.calls([stmt.cond], cp, outer)
                nodes += self.block(stmt.then, cp, outer)
                nodes += self.block(stmt.orelse, cp, outer)
            elif isinstance(stmt, (For, While)):
                if isinstance(stmt, For):
                    nodes += self.calls(child_exprs(stmt), cp, outer)
                loop = self.loop(stmt, cp, outer)
                if loop is not None:
                    nodes.append(loop)
            elif not isinstance(stmt, Source):
                nodes += self.calls(child_exprs(stmt), cp, outer)
        return nodes

    def loop(self, stmt: Union[For, While], cp: CallPath, outer: LabelSet) -> Optional[LoopNode]:
        key = (stmt.node_id, cp)
        trips = self.constant_loops.get(stmt.node_id)
        if trips is None and key not in self.trace.trip_counts:
            return None  # dynamic loop that never ran here
        labels = self.loop_labels.get(key, EMPTY)
        children = self.block(stmt.body, cp, outer | labels)
        header = self.calls([stmt.cond], cp, outer | labels) if isinstance(stmt, While) else []
        return LoopNode(stmt.node_id, cp, labels, labels - outer, trips, tuple(children), tuple(header))


def _check_trace(program: Program, trace: TraceReport) -> None:
    for node_id, _ in trace.trip_counts:
        if not isinstance(program.nodes.get(node_id), (For, While)):
            raise AnalysisError(f"trace references unknown loop node {node_id}")
    for event in trace.sink_events:
        if event.node_id not in program.nodes:
            raise AnalysisError(f"trace references unknown node {event.node_id}")
    for frame in trace.frames:
        if frame.function not in program.by_name:
            raise AnalysisError(f"trace references unknown function {frame.function!r}")


def build_loop_nests(
    program: Program,
    trace: TraceReport,
    validation: Optional[ValidationReport] = None,
    inline: bool = True,
) -> List[LoopNestTree]:
    """One tree per executed (function, call_path). inline=False keeps only the
    function's own loops and library calls."""
    _check_trace(program, trace)
    builder = _TreeBuilder(program, trace, _constant_loops(program, validation), inline)
    trees = []
    for frame in trace.frames:
        children = builder.block(program.function(frame.function).body, frame.call_path, frame.context)
        trees.append(LoopNestTree(frame.function, frame.call_path, frame.context, frame.calls, tuple(children)))
    return trees


def _node_volume(node: TreeNode) -> VolumeExpr:
    if isinstance(node, ExternLeaf):
        return Unresolved(node.node_id, node.call_path, node.params, node.params, kind="extern")
    if isinstance(node, CallSite):
        return Sum(tuple(_node_volume(c) for c in node.children))
    if node.constant_trips is not None:
        count: VolumeExpr = Const(node.constant_trips)
    else:
        count = Unresolved(node.node_id, node.call_path, node.labels, node.own_labels)
    body = Sum(tuple(_node_volume(c) for c in node.children)) if node.children else Const(1)
    if not node.header:
        return Product((count, body))
    header = Sum(tuple(_node_volume(c) for c in node.header))
    return Sum((Product((count, Sum((body, header)))), header))


def compose_volume(tree: LoopNestTree) -> VolumeExpr:
    """Volume of a function record; a frame entered under tainted control is
    scaled by its call count."""
    volume: VolumeExpr = Sum(tuple(_node_volume(n) for n in tree.children))
    if tree.context:
        calls = Unresolved(tree.call_path[-1] if tree.call_path else 0, tree.call_path,
                           tree.context, tree.context, kind="calls")
        volume = Product((calls, volume))
    return normalize(volume)


# ---------------------------------------------------------------------------
# Dependency structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DependencyStructure:
    dep_params: LabelSet = EMPTY
    multiplicative: Tuple[Tuple[str, ...], ...] = ()
    additive: Tuple[str, ...] = ()
    over_approx: Tuple[LoopKey, ...] = ()

    @property
    def is_constant(self) -> bool:
        return not self.dep_params


def _monomials(expr: VolumeExpr) -> Set[LabelSet]:
    if isinstance(expr, Const):
        return {EMPTY} if expr.value != 0 else set()
    if isinstance(expr, Unresolved):
        return {expr.params}
    if isinstance(expr, Sum):
        return set().union(*(_monomials(c) for c in expr.children))
    result: Set[LabelSet] = {EMPTY}
    for child in expr.children:
        result = {a | b for a in result for b in _monomials(child)}
    return result


def classify_dependencies(
    vol: VolumeExpr,
    extern_atoms: Iterable[str] = (),
    branch_labels: LabelSet = EMPTY,
) -> DependencyStructure:
    monomials = _monomials(vol)
    atoms = frozenset(extern_atoms)
    if atoms:
        monomials.add(atoms)
    groups = sorted(
        {m for m in monomials if len(m) >= 2 and not any(m < other for other in monomials)},
        key=sorted,
    )
    in_groups = frozenset().union(*groups) if groups else EMPTY
    params = (frozenset().union(*monomials) if monomials else EMPTY) | frozenset(branch_labels)
    over = sorted({
        (u.node_id, u.call_path) for u in unresolved_terms(vol) if u.kind == "loop" and len(u.own_params) >= 2
    })
    return DependencyStructure(
        dep_params=params,
        multiplicative=tuple(tuple(sorted(g)) for g in groups),
        additive=tuple(sorted(params - in_groups)),
        over_approx=tuple(over),
    )


# ---------------------------------------------------------------------------
# Upper bound oracle
# ---------------------------------------------------------------------------

def _bound_value(expr: VolumeExpr, trace: TraceReport, calls: Mapping[CallPath, int]) -> float:
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Unresolved):
        if expr.kind == "extern":
            return 1
        if expr.kind == "calls":
            return calls.get(expr.call_path, 1)
        count = trace.trip_counts.get((expr.node_id, expr.call_path))
        if count is None:
            raise AnalysisError(f"missing trip count for loop {expr.node_id} at {format_call_path(expr.call_path)!r}")
        return count.max_per_entry
    values = [_bound_value(c, trace, calls) for c in expr.children]
    return sum(values) if isinstance(expr, Sum) else math.prod(values)


def leaf_blocks(tree: LoopNestTree, trace: TraceReport) -> Dict[LoopKey, int]:
    """Executions of every innermost loop body in the tree, as counted by the interpreter."""
    blocks: Dict[LoopKey, int] = {}

    def visit(node: TreeNode) -> bool:
        nested = [visit(c) for c in getattr(node, "children", ()) + getattr(node, "header", ())]
        if isinstance(node, LoopNode):
            if not any(nested):
                count = trace.trip_counts.get((node.node_id, node.call_path))
                blocks[(node.node_id, node.call_path)] = count.total if count else 0
            return True
        return any(nested)

    for child in tree.children:
        visit(child)
    return blocks


def upper_bound_check(vol: VolumeExpr, trace: TraceReport, blocks: Mapping[LoopKey, int]) -> bool:
    """Substitute every g by its maximum observed trip count and compare with the
    counted executions of each leaf block."""
    calls = {f.call_path: f.calls for f in trace.frames}
    bound = _bound_value(vol, trace, calls)
    return all(bound >= count for count in blocks.values())


# ---------------------------------------------------------------------------
# Dependency report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DependencyRecord:
    function: str
    call_path: CallPath
    calls: int
    context: LabelSet
    inclusive: DependencyStructure
    own: DependencyStructure
    volume: VolumeExpr
    own_volume: VolumeExpr
    loops: Mapping[LoopKey, LabelSet]
    extern_atoms: LabelSet = EMPTY
    hints: Tuple[str, ...] = ()
    branch_labels: LabelSet = EMPTY
    inclusive_branch_labels: LabelSet = EMPTY
    unvisited: Tuple[BranchNote, ...] = ()
    tree: Optional[LoopNestTree] = field(default=None, compare=False, repr=False)

    def view(self, which: View = "own") -> DependencyStructure:
        return self.own if which == "own" else self.inclusive


@dataclass(frozen=True)
class FunctionDeps:
    """All call paths of one function merged."""
    function: str
    call_paths: Tuple[CallPath, ...]
    own: DependencyStructure
    inclusive: DependencyStructure
    loops: Mapping[LoopKey, LabelSet]
    hints: Tuple[str, ...] = ()
    unvisited: Tuple[BranchNote, ...] = ()

    def view(self, which: View = "own") -> DependencyStructure:
        return self.own if which == "own" else self.inclusive


@dataclass(frozen=True)
class DependencyReport:
    params: Tuple[str, ...]
    records: Tuple[DependencyRecord, ...]
    functions: Mapping[str, FunctionDeps]
    loop_deps: Mapping[LoopKey, LabelSet]
    warnings: Tuple[str, ...] = ()

    def record(self, function: str, call_path: CallPath) -> Optional[DependencyRecord]:
        for rec in self.records:
            if rec.function == function and rec.call_path == call_path:
                return rec
        return None

    def structure(self, function: str, callpath: str = "", view: View = "own") -> Optional[DependencyStructure]:
        """Structure for a measurement series: the call-path record when `callpath`
        names one, else the function-level merge. None = function never executed."""
        if callpath:
            rec = self.record(function, parse_call_path(callpath))
            if rec is not None:
                return rec.view(view)
        merged = self.functions.get(function)
        return merged.view(view) if merged is not None else None


def merge_traces(traces: Sequence[TraceReport]) -> TraceReport:
    """Union of several runs: dependency sets only grow, trip counts accumulate."""
    if not traces:
        raise AnalysisError("no trace to analyze")
    if len(traces) == 1:
        return traces[0]

    sinks: Dict[tuple, SinkEvent] = {}
    trips: Dict[LoopKey, TripCount] = {}
    frames: Dict[Tuple[str, CallPath], FrameRecord] = {}
    externs: Dict[LoopKey, ExternCall] = {}
    visited: Set[tuple] = set()
    warnings: List[str] = []
    for trace in traces:
        for e in trace.sink_events:
            key = (e.kind, e.node_id, e.call_path, e.taken)
            prev = sinks.get(key)
            sinks[key] = e if prev is None else SinkEvent(
                e.kind, e.node_id, e.call_path, e.function, prev.labels | e.labels, e.taken,
                max(prev.condition_label_count, e.condition_label_count), prev.hits + e.hits,
            )
        for key, tc in trace.trip_counts.items():
            prev = trips.get(key, TripCount())
            trips[key] = TripCount(prev.entries + tc.entries, prev.total + tc.total,
                                   max(prev.max_per_entry, tc.max_per_entry))
        for f in trace.frames:
            prev = frames.get((f.function, f.call_path))
            frames[(f.function, f.call_path)] = f if prev is None else FrameRecord(
                f.function, f.call_path, prev.context | f.context, prev.calls + f.calls,
            )
        for x in trace.extern_calls:
            prev = externs.get((x.node_id, x.call_path))
            externs[(x.node_id, x.call_path)] = x if prev is None else ExternCall(
                x.node_id, x.call_path, x.function, x.name, prev.atoms | x.atoms, x.hint, prev.calls + x.calls,
            )
        visited.update(trace.visited_branches)
        warnings += [w for w in trace.warnings if w not in warnings]

    unvisited = {}
    for trace in traces:
        for note in trace.unvisited_tainted_branches:
            if (note.node_id, note.call_path, note.arm) not in visited:
                unvisited[(note.node_id, note.call_path, note.arm)] = note
    first = traces[0]
    return TraceReport(
        sink_events=tuple(sorted(sinks.values(), key=lambda e: (e.kind, e.node_id, e.call_path, e.taken is True))),
        trip_counts=dict(sorted(trips.items())),
        visited_branches=tuple(sorted(visited)),
        unvisited_tainted_branches=tuple(unvisited[k] for k in sorted(unvisited)),
        warnings=tuple(warnings),
        frames=tuple(frames.values()),
        extern_calls=tuple(sorted(externs.values(), key=lambda x: (x.node_id, x.call_path))),
        result=first.result,
        result_labels=first.result_labels,
        param_values=first.param_values,
        implicit_flows=first.implicit_flows,
    )


def _tree_loops(nodes: Iterable[TreeNode]) -> Dict[LoopKey, LabelSet]:
    found: Dict[LoopKey, LabelSet] = {}
    for node in nodes:
        if isinstance(node, LoopNode):
            found[(node.node_id, node.call_path)] = node.labels
            found.update(_tree_loops(node.children + node.header))
        elif isinstance(node, CallSite):
            found.update(_tree_loops(node.children))
    return found


def _tree_externs(nodes: Iterable[TreeNode]) -> List[ExternLeaf]:
    found: List[ExternLeaf] = []
    for node in nodes:
        if isinstance(node, ExternLeaf):
            found.append(node)
        elif isinstance(node, LoopNode):
            found += _tree_externs(node.children + node.header)
        elif isinstance(node, CallSite):
            found += _tree_externs(node.children)
    return found


def _merge_structures(volumes: Sequence[VolumeExpr], branch_labels: LabelSet) -> DependencyStructure:
    return classify_dependencies(normalize(Sum(tuple(volumes))), branch_labels=branch_labels)


def analyze(
    program: Program,
    traces: Union[TraceReport, Sequence[TraceReport]],
    validation: Optional[ValidationReport] = None,
) -> DependencyReport:
    """Loop nests -> volumes -> dependency structure for every executed (function, call_path)."""
    trace = merge_traces([traces] if isinstance(traces, TraceReport) else list(traces))
    inclusive_trees = build_loop_nests(program, trace, validation, inline=True)
    own_trees = build_loop_nests(program, trace, validation, inline=False)

    branches: Dict[Tuple[str, CallPath], LabelSet] = defaultdict(lambda: EMPTY)
    for event in trace.sink_events:
        if event.kind == "branch":
            branches[(event.function, event.call_path)] |= event.labels

    records: List[DependencyRecord] = []
    for inc_tree, own_tree in zip(inclusive_trees, own_trees):
        fn, cp = own_tree.function, own_tree.call_path
        own_branches = branches[(fn, cp)]
        inc_branches = frozenset().union(
            EMPTY, *(labels for (_, bcp), labels in branches.items() if bcp[:len(cp)] == cp)
        )
        volume = compose_volume(inc_tree)
        own_volume = compose_volume(own_tree)
        externs = _tree_externs(own_tree.children)
        records.append(DependencyRecord(
            function=fn,
            call_path=cp,
            calls=own_tree.calls,
            context=own_tree.context,
            inclusive=classify_dependencies(volume, branch_labels=inc_branches),
            own=classify_dependencies(own_volume, branch_labels=own_branches),
            volume=volume,
            own_volume=own_volume,
            loops=_tree_loops(own_tree.children),
            extern_atoms=frozenset().union(EMPTY, *(x.params for x in externs)),
            hints=tuple(sorted({x.hint for x in externs if x.hint})),
            branch_labels=own_branches,
            inclusive_branch_labels=inc_branches,
            unvisited=tuple(n for n in trace.unvisited_tainted_branches if n.function == fn and n.call_path == cp),
            tree=inc_tree,
        ))
    records.sort(key=lambda r: (r.function, r.call_path))

    by_function: Dict[str, List[DependencyRecord]] = defaultdict(list)
    for rec in records:
        by_function[rec.function].append(rec)
    functions: Dict[str, FunctionDeps] = {}
    for name in sorted(by_function):
        recs = by_function[name]
        own_branches = frozenset().union(*(r.branch_labels for r in recs))
        inc_branches = frozenset().union(*(r.inclusive_branch_labels for r in recs))
        loops: Dict[LoopKey, LabelSet] = {}
        for r in recs:
            loops.update(r.loops)
        functions[name] = FunctionDeps(
            function=name,
            call_paths=tuple(r.call_path for r in recs),
            own=_merge_structures([r.own_volume for r in recs], own_branches),
            inclusive=_merge_structures([r.volume for r in recs], inc_branches),
            loops=dict(sorted(loops.items())),
            hints=tuple(sorted({h for r in recs for h in r.hints})),
            unvisited=tuple(n for r in recs for n in r.unvisited),
        )

    report = DependencyReport(
        params=tuple(program.declared_params),
        records=tuple(records),
        functions=functions,
        loop_deps=trace.loop_labels(),
        warnings=trace.warnings,
    )
    logger.info(
        "analyzed %d record(s) over %d function(s); %d constant function(s)",
        len(records), len(functions), sum(1 for f in functions.values() if f.own.is_constant),
    )
    return report


@dataclass(frozen=True)
class ParamCoverage:
    param: str
    functions: int
    loops: int


def param_coverage(report: DependencyReport) -> List[ParamCoverage]:
    """How widely each parameter reaches, broadest first; parameters that reach
    nothing are candidates for removal from the experiment."""
    rows = []
    for param in report.params:
        functions = sum(1 for f in report.functions.values() if param in f.own.dep_params)
        loops = sum(1 for labels in report.loop_deps.values() if param in labels)
        rows.append(ParamCoverage(param, functions, loops))
    return sorted(rows, key=lambda r: (-r.functions, -r.loops, r.param))
