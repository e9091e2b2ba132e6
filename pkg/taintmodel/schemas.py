"""
Explicit validation & Pydantic models
- Every JSON artifact the pipeline reads or writes is described here.
- All top-level documents carry schema_version so stages can refuse stale files.
- Conversions to and from the in-memory dataclasses live in reports.py.
"""

from __future__ import annotations

from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import SCHEMA_VERSION

Number = Union[int, float]


class Document(BaseModel):
    schema_version: int = Field(SCHEMA_VERSION, description="Version of the artifact layout")

    @field_validator("schema_version")
    @classmethod
    def check_version(cls, version: int) -> int:
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {version}, expected {SCHEMA_VERSION}")
        return version


# ---------------------------------------------------------------------------
# 1. Library database (libdb.json)
# ---------------------------------------------------------------------------

class SourceWrite(BaseModel):
    model_config = ConfigDict(frozen=True)
    arg: int = Field(..., ge=1, description="Argument slot receiving the parameter value and label")
    label: str = Field(..., description="Parameter label written into the slot")


class ConstantWrite(BaseModel):
    model_config = ConfigDict(frozen=True)
    arg: int = Field(..., ge=1, description="Argument slot receiving an untainted constant")
    value: Number = Field(0, description="Constant written into the slot")


class DepAtom(BaseModel):
    """Either a fixed parameter or 'the labels of argument k'."""
    model_config = ConfigDict(frozen=True)
    param: Optional[str] = Field(None, description="Fixed parameter the call depends on")
    arg: Optional[int] = Field(None, ge=1, description="Slot whose labels the call depends on")

    @model_validator(mode="after")
    def exactly_one(self) -> "DepAtom":
        if (self.param is None) == (self.arg is None):
            raise ValueError("a dependency atom names exactly one of 'param' or 'arg'")
        return self


class LibEntry(BaseModel):
    model_config = ConfigDict(frozen=True)
    name: str = Field(..., description="Routine name as used in extern(\"NAME\", ...)")
    arity: int = Field(0, ge=0, description="Number of data arguments (slots 1..arity)")
    implicit_params: List[str] = Field(default_factory=list, description="Implicit parameters this routine exposes")
    source_writes: List[SourceWrite] = Field(default_factory=list)
    constant_writes: List[ConstantWrite] = Field(default_factory=list)
    dep_template: List[DepAtom] = Field(default_factory=list)
    loop_semantics: Optional[str] = Field(None, description="Reported hint, e.g. 'log(p)'; never used for fitting")
    returns: Number = Field(0, description="Concrete return value of the call")

    @model_validator(mode="after")
    def slots_within_arity(self) -> "LibEntry":
        slots = [w.arg for w in self.source_writes] + [w.arg for w in self.constant_writes]
        slots += [a.arg for a in self.dep_template if a.arg is not None]
        for slot in slots:
            if slot > self.arity:
                raise ValueError(f"{self.name}: argument slot {slot} out of range (arity {self.arity})")
        return self


class LibraryDBDoc(Document):
    implicit_params: List[str] = Field(default_factory=list, description="Implicit parameters, declared once")
    entries: List[LibEntry] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# 2. Program validation
# ---------------------------------------------------------------------------

class ValidationDoc(Document):
    ok: bool
    errors: List[str] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)
    recursion_cycles: List[List[str]] = Field(default_factory=list)
    constant_loops: Dict[str, int] = Field(default_factory=dict, description="Loop id -> static trip count")
    dynamic_loops: List[int] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# 3. Taint run (taint.json)
# ---------------------------------------------------------------------------

class SinkEventDoc(BaseModel):
    kind: Literal["loop_exit", "branch"]
    node_id: int
    callpath: str = Field("", description="'/'-joined call-site ids, '' for the entry body")
    function: str
    labels: List[str] = Field(default_factory=list)
    taken: Optional[bool] = Field(None, description="Branch sinks only: which arm ran")
    condition_label_count: int = 0
    hits: int = Field(1, ge=1)


class TripCountDoc(BaseModel):
    node_id: int
    callpath: str = ""
    entries: int = Field(0, ge=0)
    total: int = Field(0, ge=0)
    max_per_entry: int = Field(0, ge=0)


class BranchNoteDoc(BaseModel):
    node_id: int
    callpath: str = ""
    function: str
    arm: Literal["then", "else"]
    labels: List[str] = Field(default_factory=list)
    skipped_loops: List[int] = Field(default_factory=list, description="Dynamic loops in the arm that never ran")


class FrameDoc(BaseModel):
    function: str
    callpath: str = ""
    context: List[str] = Field(default_factory=list, description="Control labels active at entry")
    calls: int = Field(1, ge=1)


class ExternCallDoc(BaseModel):
    node_id: int
    callpath: str = ""
    function: str
    name: str
    atoms: List[str] = Field(default_factory=list)
    hint: Optional[str] = None
    calls: int = Field(1, ge=1)


class TraceDoc(Document):
    param_values: Dict[str, Number] = Field(default_factory=dict)
    implicit_flows: bool = True
    result: Number = 0
    result_labels: List[str] = Field(default_factory=list)
    sink_events: List[SinkEventDoc] = Field(default_factory=list)
    trip_counts: List[TripCountDoc] = Field(default_factory=list)
    visited_branches: List[BranchNoteDoc] = Field(default_factory=list, description="Arms that ran (labels empty)")
    unvisited_tainted_branches: List[BranchNoteDoc] = Field(default_factory=list)
    frames: List[FrameDoc] = Field(default_factory=list)
    extern_calls: List[ExternCallDoc] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# 4. Dependency report (deps.json)
# ---------------------------------------------------------------------------

class VolumeDoc(BaseModel):
    op: Literal["const", "unresolved", "sum", "product"]
    value: Optional[Number] = None
    node_id: Optional[int] = None
    callpath: str = ""
    params: List[str] = Field(default_factory=list)
    own_params: List[str] = Field(default_factory=list)
    kind: Optional[Literal["loop", "extern", "calls"]] = None
    children: List["VolumeDoc"] = Field(default_factory=list)

    @model_validator(mode="after")
    def shape(self) -> "VolumeDoc":
        if self.op == "const" and self.value is None:
            raise ValueError("const volume needs a value")
        if self.op == "unresolved" and (self.node_id is None or self.kind is None):
            raise ValueError("unresolved volume needs node_id and kind")
        if self.op in ("sum", "product") and not self.children:
            raise ValueError(f"{self.op} volume needs children")
        return self


class StructureDoc(BaseModel):
    dep_params: List[str] = Field(default_factory=list)
    multiplicative: List[List[str]] = Field(default_factory=list, description="Parameter groups meeting in one product")
    additive: List[str] = Field(default_factory=list)
    over_approx: List[str] = Field(default_factory=list, description="'loop@callpath' keys whose own labels mix parameters")


class LoopDepDoc(BaseModel):
    node_id: int
    callpath: str = ""
    labels: List[str] = Field(default_factory=list)


class RecordDoc(BaseModel):
    function: str
    callpath: str = ""
    calls: int = 1
    context: List[str] = Field(default_factory=list)
    own: StructureDoc
    inclusive: StructureDoc
    volume: VolumeDoc
    own_volume: VolumeDoc
    volume_text: str = Field("", description="Readable form of the inclusive volume")
    loops: List[LoopDepDoc] = Field(default_factory=list)
    extern_atoms: List[str] = Field(default_factory=list)
    hints: List[str] = Field(default_factory=list)
    branch_labels: List[str] = Field(default_factory=list)
    inclusive_branch_labels: List[str] = Field(default_factory=list)
    unvisited: List[BranchNoteDoc] = Field(default_factory=list)


class FunctionDepsDoc(BaseModel):
    function: str
    callpaths: List[str] = Field(default_factory=list)
    own: StructureDoc
    inclusive: StructureDoc
    loops: List[LoopDepDoc] = Field(default_factory=list)
    hints: List[str] = Field(default_factory=list)
    unvisited: List[BranchNoteDoc] = Field(default_factory=list)


class CoverageDoc(BaseModel):
    param: str
    functions: int
    loops: int


class DepsDoc(Document):
    params: List[str] = Field(default_factory=list)
    records: List[RecordDoc] = Field(default_factory=list)
    functions: List[FunctionDepsDoc] = Field(default_factory=list)
    loop_deps: List[LoopDepDoc] = Field(default_factory=list)
    coverage: List[CoverageDoc] = Field(default_factory=list, description="Parameter reach, broadest first")
    warnings: List[str] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# 5. Models (models.json)
# ---------------------------------------------------------------------------

class TermDoc(BaseModel):
    coefficient: float
    factors: List[List[Union[str, int]]] = Field(
        default_factory=list, description="[parameter, polynomial exponent as 'a/b', log exponent]"
    )

    @field_validator("factors")
    @classmethod
    def check_factors(cls, factors: List[List[Union[str, int]]]) -> List[List[Union[str, int]]]:
        for factor in factors:
            if len(factor) != 3:
                raise ValueError(f"factor {factor!r} must be [param, exponent, log exponent]")
        return factors


class ModelDoc(BaseModel):
    formula: str
    constant: float = Field(..., description="c0")
    terms: List[TermDoc] = Field(default_factory=list)
    smape: float = Field(..., ge=0, description="Leave-one-config-out SMAPE")
    rss: float = Field(0.0, ge=0)
    adj_r2: float = 1.0
    params: List[str] = Field(default_factory=list)
    points: int = 0
    pruned: bool = Field(False, description="Constant by dependency analysis, no search performed")


class SeriesModelsDoc(BaseModel):
    function: str
    callpath: str = ""
    guided: Optional[ModelDoc] = None
    blackbox: Optional[ModelDoc] = None
    errors: Dict[str, str] = Field(default_factory=dict)


class ModelsDoc(Document):
    mode: Literal["guided", "blackbox", "both"]
    params: List[str] = Field(default_factory=list)
    metric: str = "time"
    units: str = "s"
    terms: int = Field(2, ge=1, description="Maximum number of terms per parameter")
    excluded: List[str] = Field(default_factory=list, description="Series dropped by the CoV filter")
    series: List[SeriesModelsDoc] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# 6. Experiments (design.json, filter.json, classification.json, validity.json)
# ---------------------------------------------------------------------------

class DesignDoc(Document):
    params: List[str]
    configs: List[Dict[str, Number]]
    repetitions: int = Field(5, ge=1)
    base_values: Dict[str, Number] = Field(default_factory=dict)
    full_size: int = Field(0, ge=0, description="Size of the unreduced cross product")

    @model_validator(mode="after")
    def complete_configs(self) -> "DesignDoc":
        for config in self.configs:
            if set(config) != set(self.params):
                raise ValueError(f"config {config} does not assign exactly {self.params}")
        return self


class CovViolationDoc(BaseModel):
    function: str
    callpath: str = ""
    configs: List[Dict[str, Number]] = Field(default_factory=list)
    cov: List[Optional[float]] = Field(default_factory=list, description="Per offending config; null = zero mean")
    reason: str


class FilterDoc(Document):
    include: List[str] = Field(default_factory=list, description="Functions to instrument")
    excluded_by_cov: List[CovViolationDoc] = Field(default_factory=list)


class LoopStatsDoc(BaseModel):
    total: int
    statically_pruned: int
    relevant: int


class ClassificationDoc(Document):
    classes: Dict[str, Literal["statically_pruned", "dynamically_pruned", "kernel", "comm_routine", "extern"]]
    counts: Dict[str, int] = Field(default_factory=dict)
    loops: LoopStatsDoc
    filter: List[str] = Field(default_factory=list)


class ContentionDoc(BaseModel):
    param: str
    rho: float
    points: List[List[float]] = Field(default_factory=list, description="[parameter value, median]")


class BehaviorChangeDoc(BaseModel):
    param: str
    split: float = Field(..., description="Last parameter value of the lower part")
    smape: float
    lower_smape: float
    upper_smape: float


class FunctionValidityDoc(BaseModel):
    function: str
    callpath: str = ""
    flagged: bool = False
    cov_violations: List[Dict[str, Number]] = Field(default_factory=list)
    contention: List[ContentionDoc] = Field(default_factory=list)
    behavior_change: Optional[BehaviorChangeDoc] = None
    false_dependencies: List[str] = Field(default_factory=list)
    unvisited: List[str] = Field(default_factory=list)


class ValidityDoc(Document):
    options: Dict[str, float] = Field(default_factory=dict)
    entries: List[FunctionValidityDoc] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# 7. Synthetic corpus (groundtruth.json)
# ---------------------------------------------------------------------------

class GroundTruthFunctionDoc(BaseModel):
    name: str
    kind: str
    function_class: Literal["statically_pruned", "dynamically_pruned", "kernel", "comm_routine", "extern"]
    params: List[str] = Field(default_factory=list)
    multiplicative: List[List[str]] = Field(default_factory=list)
    additive: List[str] = Field(default_factory=list)
    loops: Dict[str, List[str]] = Field(default_factory=dict, description="Loop id -> true parameters")
    callpath: str = ""
    constant: float
    terms: List[TermDoc] = Field(default_factory=list)
    formula: str = ""


class GroundTruthDoc(Document):
    seed: int
    functions_requested: int = Field(..., ge=1)
    params_requested: int = Field(..., ge=1)
    depth: int = Field(..., ge=1, le=4)
    constant_share: float = Field(..., ge=0, le=1)
    params: List[str] = Field(default_factory=list)
    analysis_values: Dict[str, int] = Field(default_factory=dict)
    functions: List[GroundTruthFunctionDoc] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# 8. HTTP requests
# ---------------------------------------------------------------------------

class ProgramIn(BaseModel):
    source: str = Field(..., description="PTL source text")

    @field_validator("source")
    @classmethod
    def not_blank(cls, source: str) -> str:
        if not source.strip():
            raise ValueError("source must not be empty")
        return source


class ProgramOut(BaseModel):
    program_id: str
    functions: List[str] = Field(default_factory=list)
    params: Dict[str, Literal["explicit", "implicit"]] = Field(default_factory=dict)
    validation: ValidationDoc
    source: Optional[str] = None


class RunIn(BaseModel):
    params: Dict[str, Number] = Field(default_factory=dict, description="Value per declared parameter")
    implicit_flows: bool = True
    max_trips: int = Field(10 ** 8, ge=1, description="Loop guard")


class RunSummary(BaseModel):
    run_id: str
    program_id: str
    result: Number
    loops: int
    tainted_loops: int
    warnings: List[str] = Field(default_factory=list)


class ModelsIn(BaseModel):
    measurements: str = Field(..., description="Measurement CSV text")
    run_id: Optional[str] = Field(None, description="Run whose analysis guides the modeler")
    mode: Literal["guided", "blackbox", "both"] = "guided"
    terms: int = Field(2, ge=1, le=3)
    cov_threshold: Optional[float] = Field(None, gt=0, description="Drop noisy series first")


class DesignIn(BaseModel):
    values: Dict[str, List[Number]] = Field(..., description="Candidate values per parameter")
    run_id: Optional[str] = Field(None, description="Run whose analysis reduces the design")
    repetitions: int = Field(5, ge=1)
    prune_unused: bool = False

    @field_validator("values")
    @classmethod
    def no_empty_lists(cls, values: Dict[str, List[Number]]) -> Dict[str, List[Number]]:
        for name, vals in values.items():
            if not vals:
                raise ValueError(f"parameter {name!r} has no values")
        return values


VolumeDoc.model_rebuild()
