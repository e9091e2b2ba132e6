'''
FastAPI endpoints:
POST /programs -> parse + validate PTL source (dsl.parse, validation.validate)
GET /programs/{id} -> source, functions, parameters, validation report
POST /programs/{id}/runs -> taint run with concrete parameter values (engine.run)
GET /runs/{id} -> the full trace (taint.json layout)
POST /runs/{id}/analysis -> dependency report of a run (volume.analyze)
POST /models -> fit models to measurement CSV text, guided by a run's analysis
POST /design -> experiment design, reduced by a run's analysis
'''

import logging
from functools import lru_cache

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware

from . import __version__
from .config import load_settings
from .dsl import parse
from .engine import RunOptions, run
from .errors import LibraryDBError, ParseError, TaintModelError, UnderdeterminedError
from .experiment import cov_filter, design, parse_measurements
from .libdb import LibraryDB, load_db
from .modeler import SearchSpace, model_all
from .reports import deps_doc, design_doc, models_doc, trace_doc, validation_doc
from .schemas import DepsDoc, DesignDoc, DesignIn, ModelsDoc, ModelsIn, ProgramIn, ProgramOut, RunIn, RunSummary, TraceDoc
from .store import ArtifactStore, ProgramEntry, RunEntry
from .validation import validate
from .volume import DependencyReport, analyze

logger = logging.getLogger(__name__)

app = FastAPI(title="taintmodel API", version=__version__)

# Allow everything in dev so the docs and scripts work easily
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"]
)

# Programs, runs and analyses live in memory
store = ArtifactStore()


@lru_cache(maxsize=1)
def library() -> LibraryDB:
    return load_db(load_settings().libdb)


def _http_error(exc: TaintModelError) -> HTTPException:
    if isinstance(exc, UnderdeterminedError):
        return HTTPException(status_code=422, detail=str(exc))
    if isinstance(exc, LibraryDBError):
        return HTTPException(status_code=500, detail=str(exc))
    return HTTPException(status_code=400, detail=str(exc))


def _run_or_404(run_id: str) -> RunEntry:
    entry = store.get_run(run_id)
    if entry is None:
        raise HTTPException(status_code=404, detail="Run not found")
    return entry


def _analysis(entry: RunEntry) -> DependencyReport:
    if entry.analysis is None:
        program = store.get_program(entry.program_id)
        report = analyze(program.program, entry.trace, program.validation)
        entry = store.set_analysis(entry.id, report)
    return entry.analysis


def _program_out(entry: ProgramEntry, with_source: bool = False) -> ProgramOut:
    return ProgramOut(
        program_id=entry.id,
        functions=[fn.name for fn in entry.program.functions],
        params={d.name: d.kind for d in entry.program.param_decls},
        validation=validation_doc(entry.validation),
        source=entry.source if with_source else None,
    )


@app.post("/programs", response_model=ProgramOut, status_code=201, summary="Register a PTL program")
def create_program(payload: ProgramIn) -> ProgramOut:
    try:
        program = parse(payload.source)
    except ParseError as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    try:
        report = validate(program, library())
    except TaintModelError as exc:
        raise _http_error(exc)
    entry = store.add_program(payload.source, program, report)
    return _program_out(entry)


@app.get("/programs/{program_id}", response_model=ProgramOut, summary="Get a registered program")
def get_program(program_id: str) -> ProgramOut:
    entry = store.get_program(program_id)
    if entry is None:
        raise HTTPException(status_code=404, detail="Program not found")
    return _program_out(entry, with_source=True)


@app.post("/programs/{program_id}/runs", response_model=RunSummary, status_code=201, summary="Run under taint tracking")
def create_run(program_id: str, payload: RunIn) -> RunSummary:
    entry = store.get_program(program_id)
    if entry is None:
        raise HTTPException(status_code=404, detail="Program not found")
    if not entry.validation.ok:
        raise HTTPException(status_code=409, detail="Program has validation errors; fix them before running")

    opts = RunOptions(implicit_flows=payload.implicit_flows, max_trips=payload.max_trips)
    try:
        trace = run(entry.program, payload.params, library(), opts)
    except TaintModelError as exc:
        raise _http_error(exc)
    stored = store.add_run(program_id, payload.params, trace)
    labels = trace.loop_labels()
    return RunSummary(
        run_id=stored.id,
        program_id=program_id,
        result=trace.result,
        loops=len(labels),
        tainted_loops=sum(1 for v in labels.values() if v),
        warnings=list(trace.warnings),
    )


@app.get("/runs/{run_id}", response_model=TraceDoc, summary="Get the trace of a run")
def get_run(run_id: str) -> TraceDoc:
    entry = _run_or_404(run_id)
    program = store.get_program(entry.program_id)
    return trace_doc(entry.trace, program.program)


@app.post("/runs/{run_id}/analysis", response_model=DepsDoc, summary="Dependency report of a run")
def analyze_run(run_id: str) -> DepsDoc:
    entry = _run_or_404(run_id)
    try:
        return deps_doc(_analysis(entry))
    except TaintModelError as exc:
        raise _http_error(exc)


@app.post("/models", response_model=ModelsDoc, summary="Fit performance models to measurements")
def create_models(payload: ModelsIn) -> ModelsDoc:
    if payload.run_id is None and payload.mode != "blackbox":
        raise HTTPException(status_code=400, detail=f"mode {payload.mode!r} needs a run_id")
    run_entry = _run_or_404(payload.run_id) if payload.run_id is not None else None
    try:
        deps = _analysis(run_entry) if run_entry is not None else None
        ms = parse_measurements(payload.measurements, "request")
        excluded = []
        if payload.cov_threshold is not None:
            ms, excluded = cov_filter(ms, payload.cov_threshold)
        results = model_all(ms, deps, SearchSpace(n=payload.terms), payload.mode)
    except TaintModelError as exc:
        raise _http_error(exc)
    return models_doc(results, ms, payload.mode, payload.terms, excluded)


@app.post("/design", response_model=DesignDoc, summary="Experiment design for the given parameter values")
def create_design(payload: DesignIn) -> DesignDoc:
    run_entry = _run_or_404(payload.run_id) if payload.run_id is not None else None
    try:
        deps = _analysis(run_entry) if run_entry is not None else None
        result = design(payload.values, deps, payload.repetitions, payload.prune_unused)
    except TaintModelError as exc:
        raise _http_error(exc)
    return design_doc(result)
