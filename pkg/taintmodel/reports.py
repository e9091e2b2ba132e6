"""
In-memory results <-> JSON artifacts.
- *_doc: dataclass -> pydantic document (what the CLI writes and the API returns)
- *_from_doc: document -> dataclass, for the stages that read an earlier stage's file
- read_doc / write_doc: schema-checked file I/O
"""

from __future__ import annotations

import json
import logging
import math
from fractions import Fraction
from pathlib import Path
from typing import List, Optional, Sequence, Type, TypeVar, Union

from pydantic import BaseModel
from pydantic import ValidationError as PydanticValidationError

from .dsl import Program
from .engine import BranchNote, ExternCall, FrameRecord, SinkEvent, TraceReport, TripCount
from .errors import ArtifactError
from .experiment import Classification, CovViolation, Design, ValidityOptions, ValidityReport
from .modeler import Hypothesis, MeasurementSet, PerfModel, SeriesModels, Term
from .schemas import (
    BehaviorChangeDoc, BranchNoteDoc, ClassificationDoc, ContentionDoc, CoverageDoc, CovViolationDoc,
    DepsDoc, DesignDoc, ExternCallDoc, FilterDoc, FrameDoc, FunctionDepsDoc, FunctionValidityDoc,
    LoopDepDoc, LoopStatsDoc, ModelDoc, ModelsDoc, RecordDoc, SeriesModelsDoc, SinkEventDoc,
    StructureDoc, TermDoc, TraceDoc, TripCountDoc, ValidationDoc, ValidityDoc, VolumeDoc,
)
from .types import LoopKey, format_call_path, parse_call_path
from .validation import ValidationReport
from .volume import (
    Const, DependencyRecord, DependencyReport, DependencyStructure, FunctionDeps, Product, Sum,
    Unresolved, VolumeExpr, format_volume, param_coverage,
)

logger = logging.getLogger(__name__)

D = TypeVar("D", bound=BaseModel)


def write_doc(doc: BaseModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(doc.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def read_doc(model: Type[D], path: Union[str, Path]) -> D:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"{path}: {exc}") from exc
    try:
        return model.model_validate(data)
    except PydanticValidationError as exc:
        raise ArtifactError(f"{path}: not a valid {model.__name__}: {exc}") from exc


def _loop_key(key: LoopKey) -> str:
    node_id, call_path = key
    return f"{node_id}@{format_call_path(call_path)}"


def _parse_loop_key(text: str) -> LoopKey:
    node_id, _, call_path = text.partition("@")
    return int(node_id), parse_call_path(call_path)


# ---------------------------------------------------------------------------
# Validation and traces
# ---------------------------------------------------------------------------

def validation_doc(report: ValidationReport) -> ValidationDoc:
    return ValidationDoc(
        ok=report.ok,
        errors=report.errors,
        warnings=report.warnings,
        recursion_cycles=report.recursion_cycles,
        constant_loops={str(k): v for k, v in sorted(report.constant_loops.items())},
        dynamic_loops=sorted(report.dynamic_loops),
    )


def _branch_doc(note: BranchNote) -> BranchNoteDoc:
    return BranchNoteDoc(
        node_id=note.node_id, callpath=format_call_path(note.call_path), function=note.function,
        arm=note.arm, labels=sorted(note.labels), skipped_loops=list(note.skipped_loops),
    )


def _branch_from_doc(doc: BranchNoteDoc) -> BranchNote:
    return BranchNote(doc.node_id, parse_call_path(doc.callpath), doc.function, doc.arm, frozenset(doc.labels),
                      tuple(doc.skipped_loops))


def trace_doc(trace: TraceReport, program: Optional[Program] = None) -> TraceDoc:
    """`program` only resolves function names of visited branches."""
    owner = program.owner if program is not None else {}
    return TraceDoc(
        param_values=dict(trace.param_values),
        implicit_flows=trace.implicit_flows,
        result=trace.result,
        result_labels=sorted(trace.result_labels),
        sink_events=[
            SinkEventDoc(
                kind=e.kind, node_id=e.node_id, callpath=format_call_path(e.call_path), function=e.function,
                labels=sorted(e.labels), taken=e.taken, condition_label_count=e.condition_label_count, hits=e.hits,
            )
            for e in trace.sink_events
        ],
        trip_counts=[
            TripCountDoc(node_id=node_id, callpath=format_call_path(cp), entries=tc.entries, total=tc.total,
                         max_per_entry=tc.max_per_entry)
            for (node_id, cp), tc in sorted(trace.trip_counts.items())
        ],
        visited_branches=[
            BranchNoteDoc(node_id=node_id, callpath=format_call_path(cp), function=owner.get(node_id, ""), arm=arm)
            for node_id, cp, arm in trace.visited_branches
        ],
        unvisited_tainted_branches=[_branch_doc(n) for n in trace.unvisited_tainted_branches],
        frames=[
            FrameDoc(function=f.function, callpath=format_call_path(f.call_path), context=sorted(f.context),
                     calls=f.calls)
            for f in trace.frames
        ],
        extern_calls=[
            ExternCallDoc(node_id=x.node_id, callpath=format_call_path(x.call_path), function=x.function,
                          name=x.name, atoms=sorted(x.atoms), hint=x.hint, calls=x.calls)
            for x in trace.extern_calls
        ],
        warnings=list(trace.warnings),
    )


def trace_from_doc(doc: TraceDoc) -> TraceReport:
    return TraceReport(
        sink_events=tuple(
            SinkEvent(e.kind, e.node_id, parse_call_path(e.callpath), e.function, frozenset(e.labels), e.taken,
                      e.condition_label_count, e.hits)
            for e in doc.sink_events
        ),
        trip_counts={
            (t.node_id, parse_call_path(t.callpath)): TripCount(t.entries, t.total, t.max_per_entry)
            for t in doc.trip_counts
        },
        visited_branches=tuple((b.node_id, parse_call_path(b.callpath), b.arm) for b in doc.visited_branches),
        unvisited_tainted_branches=tuple(_branch_from_doc(b) for b in doc.unvisited_tainted_branches),
        warnings=tuple(doc.warnings),
        frames=tuple(
            FrameRecord(f.function, parse_call_path(f.callpath), frozenset(f.context), f.calls) for f in doc.frames
        ),
        extern_calls=tuple(
            ExternCall(x.node_id, parse_call_path(x.callpath), x.function, x.name, frozenset(x.atoms), x.hint, x.calls)
            for x in doc.extern_calls
        ),
        result=doc.result,
        result_labels=frozenset(doc.result_labels),
        param_values=dict(doc.param_values),
        implicit_flows=doc.implicit_flows,
    )


# ---------------------------------------------------------------------------
# Dependency reports
# ---------------------------------------------------------------------------

def volume_doc(expr: VolumeExpr) -> VolumeDoc:
    if isinstance(expr, Const):
        return VolumeDoc(op="const", value=expr.value)
    if isinstance(expr, Unresolved):
        return VolumeDoc(
            op="unresolved", node_id=expr.node_id, callpath=format_call_path(expr.call_path),
            params=sorted(expr.params), own_params=sorted(expr.own_params), kind=expr.kind,
        )
    op = "sum" if isinstance(expr, Sum) else "product"
    return VolumeDoc(op=op, children=[volume_doc(c) for c in expr.children])


def volume_from_doc(doc: VolumeDoc) -> VolumeExpr:
    if doc.op == "const":
        return Const(doc.value)
    if doc.op == "unresolved":
        return Unresolved(doc.node_id, parse_call_path(doc.callpath), frozenset(doc.params),
                          frozenset(doc.own_params), doc.kind)
    children = tuple(volume_from_doc(c) for c in doc.children)
    return Sum(children) if doc.op == "sum" else Product(children)


def structure_doc(s: DependencyStructure) -> StructureDoc:
    return StructureDoc(
        dep_params=sorted(s.dep_params),
        multiplicative=[list(g) for g in s.multiplicative],
        additive=list(s.additive),
        over_approx=[_loop_key(k) for k in s.over_approx],
    )


def structure_from_doc(doc: StructureDoc) -> DependencyStructure:
    return DependencyStructure(
        dep_params=frozenset(doc.dep_params),
        multiplicative=tuple(tuple(g) for g in doc.multiplicative),
        additive=tuple(doc.additive),
        over_approx=tuple(_parse_loop_key(k) for k in doc.over_approx),
    )


def _loops_doc(loops) -> List[LoopDepDoc]:
    return [
        LoopDepDoc(node_id=node_id, callpath=format_call_path(cp), labels=sorted(labels))
        for (node_id, cp), labels in sorted(loops.items())
    ]


def _loops_from_doc(docs: Sequence[LoopDepDoc]):
    return {(d.node_id, parse_call_path(d.callpath)): frozenset(d.labels) for d in docs}


def deps_doc(report: DependencyReport) -> DepsDoc:
    return DepsDoc(
        params=list(report.params),
        records=[
            RecordDoc(
                function=r.function,
                callpath=format_call_path(r.call_path),
                calls=r.calls,
                context=sorted(r.context),
                own=structure_doc(r.own),
                inclusive=structure_doc(r.inclusive),
                volume=volume_doc(r.volume),
                own_volume=volume_doc(r.own_volume),
                volume_text=format_volume(r.volume),
                loops=_loops_doc(r.loops),
                extern_atoms=sorted(r.extern_atoms),
                hints=list(r.hints),
                branch_labels=sorted(r.branch_labels),
                inclusive_branch_labels=sorted(r.inclusive_branch_labels),
                unvisited=[_branch_doc(n) for n in r.unvisited],
            )
            for r in report.records
        ],
        functions=[
            FunctionDepsDoc(
                function=f.function,
                callpaths=[format_call_path(cp) for cp in f.call_paths],
                own=structure_doc(f.own),
                inclusive=structure_doc(f.inclusive),
                loops=_loops_doc(f.loops),
                hints=list(f.hints),
                unvisited=[_branch_doc(n) for n in f.unvisited],
            )
            for f in report.functions.values()
        ],
        loop_deps=_loops_doc(report.loop_deps),
        coverage=[CoverageDoc(param=c.param, functions=c.functions, loops=c.loops) for c in param_coverage(report)],
        warnings=list(report.warnings),
    )


def deps_from_doc(doc: DepsDoc) -> DependencyReport:
    records = tuple(
        DependencyRecord(
            function=r.function,
            call_path=parse_call_path(r.callpath),
            calls=r.calls,
            context=frozenset(r.context),
            inclusive=structure_from_doc(r.inclusive),
            own=structure_from_doc(r.own),
            volume=volume_from_doc(r.volume),
            own_volume=volume_from_doc(r.own_volume),
            loops=_loops_from_doc(r.loops),
            extern_atoms=frozenset(r.extern_atoms),
            hints=tuple(r.hints),
            branch_labels=frozenset(r.branch_labels),
            inclusive_branch_labels=frozenset(r.inclusive_branch_labels),
            unvisited=tuple(_branch_from_doc(n) for n in r.unvisited),
        )
        for r in doc.records
    )
    functions = {
        f.function: FunctionDeps(
            function=f.function,
            call_paths=tuple(parse_call_path(cp) for cp in f.callpaths),
            own=structure_from_doc(f.own),
            inclusive=structure_from_doc(f.inclusive),
            loops=_loops_from_doc(f.loops),
            hints=tuple(f.hints),
            unvisited=tuple(_branch_from_doc(n) for n in f.unvisited),
        )
        for f in doc.functions
    }
    return DependencyReport(
        params=tuple(doc.params),
        records=records,
        functions=functions,
        loop_deps=_loops_from_doc(doc.loop_deps),
        warnings=tuple(doc.warnings),
    )


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

def model_doc(model: PerfModel) -> ModelDoc:
    return ModelDoc(
        formula=model.formula,
        constant=model.coefficients[0],
        terms=[
            TermDoc(coefficient=c, factors=[[p, str(i), j] for p, i, j in t.factors])
            for c, t in zip(model.coefficients[1:], model.hypothesis.terms)
        ],
        smape=model.smape,
        rss=model.rss,
        adj_r2=model.adj_r2,
        params=list(model.params),
        points=model.points,
        pruned=model.pruned,
    )


def model_from_doc(doc: ModelDoc) -> PerfModel:
    terms = tuple(Term(tuple((str(p), Fraction(i), int(j)) for p, i, j in t.factors)) for t in doc.terms)
    return PerfModel(
        hypothesis=Hypothesis(terms),
        coefficients=(doc.constant,) + tuple(t.coefficient for t in doc.terms),
        smape=doc.smape,
        rss=doc.rss,
        adj_r2=doc.adj_r2,
        params=tuple(doc.params),
        points=doc.points,
        pruned=doc.pruned,
    )


def models_doc(
    results: Sequence[SeriesModels],
    ms: MeasurementSet,
    mode: str,
    terms: int = 2,
    excluded: Sequence[CovViolation] = (),
) -> ModelsDoc:
    return ModelsDoc(
        mode=mode,
        params=list(ms.params),
        metric=ms.metric,
        units=ms.units,
        terms=terms,
        excluded=[f"{v.function}@{v.callpath}" if v.callpath else v.function for v in excluded],
        series=[
            SeriesModelsDoc(
                function=r.function,
                callpath=r.callpath,
                guided=model_doc(r.guided) if r.guided is not None else None,
                blackbox=model_doc(r.blackbox) if r.blackbox is not None else None,
                errors=dict(r.errors),
            )
            for r in results
        ],
    )


def models_from_doc(doc: ModelsDoc) -> List[SeriesModels]:
    return [
        SeriesModels(
            function=s.function,
            callpath=s.callpath,
            guided=model_from_doc(s.guided) if s.guided is not None else None,
            blackbox=model_from_doc(s.blackbox) if s.blackbox is not None else None,
            errors=dict(s.errors),
        )
        for s in doc.series
    ]


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def design_doc(design: Design) -> DesignDoc:
    return DesignDoc(
        params=list(design.params),
        configs=design.as_dicts(),
        repetitions=design.repetitions,
        base_values=dict(design.base_values),
        full_size=design.full_size,
    )


def design_from_doc(doc: DesignDoc) -> Design:
    configs = tuple(sorted(tuple(sorted(c.items())) for c in doc.configs))
    return Design(tuple(doc.params), configs, doc.repetitions, dict(doc.base_values), doc.full_size)


def _cov_or_none(value: float) -> Optional[float]:
    return None if math.isnan(value) else value


def filter_doc(classification: Optional[Classification], excluded: Sequence[CovViolation] = ()) -> FilterDoc:
    return FilterDoc(
        include=classification.filter if classification is not None else [],
        excluded_by_cov=[
            CovViolationDoc(
                function=v.function,
                callpath=v.callpath,
                configs=[dict(c) for c, _ in v.configs],
                cov=[_cov_or_none(cov) for _, cov in v.configs],
                reason=v.reason,
            )
            for v in excluded
        ],
    )


def classification_doc(c: Classification) -> ClassificationDoc:
    return ClassificationDoc(
        classes=dict(c.classes),
        counts=c.counts(),
        loops=LoopStatsDoc(total=c.loops.total, statically_pruned=c.loops.statically_pruned,
                           relevant=c.loops.relevant),
        filter=c.filter,
    )


def validity_doc(report: ValidityReport, options: Optional[ValidityOptions] = None) -> ValidityDoc:
    options = options or ValidityOptions()
    return ValidityDoc(
        options={
            "rho_threshold": options.rho_threshold,
            "min_points": options.min_points,
            "smape_threshold": options.smape_threshold,
            "cov_threshold": options.cov_threshold,
        },
        entries=[
            FunctionValidityDoc(
                function=e.function,
                callpath=e.callpath,
                flagged=e.flagged,
                cov_violations=[dict(c) for c, _ in e.cov_violations],
                contention=[
                    ContentionDoc(param=s.param, rho=s.rho, points=[list(p) for p in s.points])
                    for s in e.contention
                ],
                behavior_change=BehaviorChangeDoc(
                    param=e.behavior_change.param,
                    split=e.behavior_change.split,
                    smape=e.behavior_change.smape,
                    lower_smape=e.behavior_change.lower_smape,
                    upper_smape=e.behavior_change.upper_smape,
                ) if e.behavior_change is not None else None,
                false_dependencies=list(e.false_dependencies),
                unvisited=list(e.unvisited),
            )
            for e in report.entries
        ],
    )
