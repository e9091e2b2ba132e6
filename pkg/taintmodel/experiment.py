"""
Experiments around the modeler:
- design: measurement configurations reduced by the dependency structure
- ingest / write_measurements: the measurement CSV
  (header `function,callpath,<param...>,rep,value`)
- cov_filter: drop series whose repetitions disagree too much
- classify: which functions need instrumentation at all
- validate_experiment: contention, behavior changes, false dependencies
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import spearmanr

from .dsl import Extern, Program, walk
from .errors import AnalysisError, DesignError, ExperimentError, FitError, IngestError
from .libdb import LibraryDB
from .modeler import (
    Measurement, MeasurementSet, PerfModel, Points, SearchSpace, SeriesModels, base_slice, select_model,
)
from .types import FunctionClass, format_call_path
from .validation import ValidationReport
from .volume import DependencyReport, DependencyStructure, unresolved_terms

logger = logging.getLogger(__name__)

Number = Union[int, float]
Config = Tuple[Tuple[str, Number], ...]
SeriesKey = Tuple[str, str]

DEFAULT_REPETITIONS = 5
FIXED_COLUMNS = ("function", "callpath")
TRAILING_COLUMNS = ("rep", "value")


# ---------------------------------------------------------------------------
# 1. Experiment design
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Design:
    params: Tuple[str, ...]
    configs: Tuple[Config, ...]
    repetitions: int = DEFAULT_REPETITIONS
    base_values: Mapping[str, Number] = field(default_factory=dict)
    full_size: int = 0  # size of the unreduced cross product

    def __len__(self) -> int:
        return len(self.configs)

    def as_dicts(self) -> List[Dict[str, Number]]:
        return [dict(c) for c in self.configs]

    @property
    def reduction(self) -> float:
        return 1.0 - len(self.configs) / self.full_size if self.full_size else 0.0


def design_structure(deps: DependencyReport) -> DependencyStructure:
    """One structure for a whole program: every function's groups, every used parameter."""
    groups = set()
    used = set()
    for fn in deps.functions.values():
        groups.update(fn.own.multiplicative)
        used |= fn.own.dep_params
    grouped = {p for g in groups for p in g}
    return DependencyStructure(
        dep_params=frozenset(used),
        multiplicative=tuple(sorted(groups)),
        additive=tuple(sorted(used - grouped)),
    )


def _cross_groups(groups: Iterable[Sequence[str]], values: Mapping[str, Sequence[Number]]) -> List[List[str]]:
    """Each multiplicative group with at least two measured parameters, once."""
    blocks: List[List[str]] = []
    for group in groups:
        block = sorted({p for p in group if p in values})
        if len(block) >= 2 and block not in blocks:
            blocks.append(block)
    return sorted(blocks)


def design(
    param_values: Mapping[str, Sequence[Number]],
    deps: Union[DependencyReport, DependencyStructure, None] = None,
    repetitions: int = DEFAULT_REPETITIONS,
    prune_unused: bool = False,
) -> Design:
    """Cross products only where parameters interact multiplicatively; every other
    parameter gets one sweep with the rest at their base (smallest) value."""
    if not param_values:
        raise DesignError("no parameters to design for")
    values: Dict[str, List[Number]] = {}
    for name, vals in sorted(param_values.items()):
        unique = sorted(set(vals))
        if not unique:
            raise DesignError(f"parameter {name!r} has no values")
        if len(unique) < 2:
            logger.warning("parameter %s has a single value; it cannot be modeled", name)
        elif len(unique) < 5:
            logger.info("parameter %s has %d values; 5 or more are recommended", name, len(unique))
        values[name] = unique
    if repetitions < 1:
        raise DesignError("repetitions must be positive")

    params = tuple(values)
    base = {p: v[0] for p, v in values.items()}
    full_size = math.prod(len(v) for v in values.values())

    if isinstance(deps, DependencyReport):
        deps = design_structure(deps)
    if deps is None:
        blocks = [list(params)]
    else:
        blocks = _cross_groups(deps.multiplicative, values)
        in_blocks = {p for b in blocks for p in b}
        for p in params:
            if p in in_blocks:
                continue
            if p in deps.dep_params or not prune_unused:
                blocks.append([p])

    configs = set()
    for block in blocks:
        for combo in itertools.product(*[values[p] for p in block]):
            config = dict(base)
            config.update(zip(block, combo))
            configs.add(tuple(sorted(config.items())))
    if not configs:
        configs.add(tuple(sorted(base.items())))

    result = Design(params, tuple(sorted(configs)), repetitions, base, full_size)
    logger.info("design: %d configuration(s) instead of %d", len(result), full_size)
    return result


# ---------------------------------------------------------------------------
# 2. Measurement files
# ---------------------------------------------------------------------------

def _number(text: str) -> Number:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"{text!r} is not finite")
    return int(value) if value.is_integer() and "." not in text and "e" not in text.lower() else value


def parse_measurements(text: str, source: Optional[str] = None) -> MeasurementSet:
    """Parse measurement CSV text; every malformed row is reported with its line number."""
    if not text.strip():
        logger.warning("measurement file %s is empty", source or "<text>")
        return MeasurementSet(params=(), series={})

    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader)]
    if tuple(header[:2]) != FIXED_COLUMNS or tuple(header[-2:]) != TRAILING_COLUMNS or len(header) < 4:
        raise IngestError(
            [(1, "header must be 'function,callpath,<param...>,rep,value', got " + ",".join(header))], source
        )
    params = tuple(header[2:-2])
    if len(set(params)) != len(params):
        raise IngestError([(1, "duplicate parameter column")], source)

    problems: List[Tuple[int, str]] = []
    samples: Dict[SeriesKey, Dict[Config, Dict[int, float]]] = defaultdict(lambda: defaultdict(dict))
    for line, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            problems.append((line, f"expected {len(header)} column(s), got {len(row)}"))
            continue
        function, callpath = row[0].strip(), row[1].strip()
        if not function:
            problems.append((line, "empty function name"))
            continue
        try:
            config_values = [_number(cell.strip()) for cell in row[2:-2]]
            rep = int(row[-2])
            value = float(row[-1])
        except ValueError as exc:
            problems.append((line, f"non-numeric value: {exc}"))
            continue
        if any(v < 1 for v in config_values):
            problems.append((line, "parameter values must be >= 1"))
            continue
        config = tuple(sorted(zip(params, config_values)))
        reps = samples[(function, callpath)][config]
        if rep in reps:
            problems.append((line, f"duplicate repetition {rep} for {function} at {dict(config)}"))
            continue
        reps[rep] = value

    if problems:
        raise IngestError(problems, source)

    series = {
        key: tuple(
            Measurement(config, tuple(reps[r] for r in sorted(reps)))
            for config, reps in sorted(configs.items())
        )
        for key, configs in sorted(samples.items())
    }
    ms = MeasurementSet(params=params, series=series)
    logger.info("ingested %d series over %d parameter(s)", len(series), len(params))
    return ms


def ingest(path: Union[str, Path]) -> MeasurementSet:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError([(0, f"cannot read file: {exc}")], str(path)) from exc
    return parse_measurements(text, str(path))


def format_measurements(ms: MeasurementSet) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(list(FIXED_COLUMNS) + list(ms.params) + list(TRAILING_COLUMNS))
    for (function, callpath), data in sorted(ms.series.items()):
        for m in data:
            values = m.values
            for rep, sample in enumerate(m.samples):
                writer.writerow([function, callpath] + [values[p] for p in ms.params] + [rep, repr(float(sample))])
    return buffer.getvalue()


def write_measurements(ms: MeasurementSet, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(format_measurements(ms), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# 3. CoV filter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CovViolation:
    function: str
    callpath: str
    configs: Tuple[Tuple[Config, float], ...]  # offending configs with their CoV (nan = zero mean)
    reason: str


def coefficient_of_variation(samples: Sequence[float]) -> float:
    """Population standard deviation over mean; nan when the mean is zero."""
    mean = float(np.mean(samples))
    if mean == 0:
        return math.nan
    return float(np.std(samples)) / abs(mean)


def cov_filter(ms: MeasurementSet, threshold: float = 0.1) -> Tuple[MeasurementSet, List[CovViolation]]:
    kept: Dict[SeriesKey, Tuple[Measurement, ...]] = {}
    excluded: List[CovViolation] = []
    for key, data in sorted(ms.series.items()):
        offending: List[Tuple[Config, float]] = []
        zero_mean = False
        for m in data:
            if len(m.samples) < 2:
                logger.debug("%s: single sample at %s, CoV undefined", key[0], m.values)
                continue
            cov = coefficient_of_variation(m.samples)
            if math.isnan(cov):
                zero_mean = True
                offending.append((m.config, cov))
            elif cov > threshold:
                offending.append((m.config, cov))
        if offending:
            reason = "zero mean, CoV undefined" if zero_mean else f"CoV above {threshold:g}"
            excluded.append(CovViolation(key[0], key[1], tuple(offending), reason))
        else:
            kept[key] = data
    if excluded:
        logger.info("CoV filter excluded %d of %d series", len(excluded), len(ms.series))
    return MeasurementSet(ms.params, kept, ms.metric, ms.units), excluded


# ---------------------------------------------------------------------------
# 4. Instrumentation classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoopStats:
    total: int
    statically_pruned: int
    relevant: int


@dataclass(frozen=True)
class Classification:
    classes: Mapping[str, FunctionClass]
    loops: LoopStats
    externs: Tuple[str, ...] = ()

    @property
    def filter(self) -> List[str]:
        """Functions worth instrumenting."""
        return sorted(n for n, c in self.classes.items() if c in ("kernel", "comm_routine"))

    def members(self, cls: FunctionClass) -> List[str]:
        return sorted(n for n, c in self.classes.items() if c == cls)

    def counts(self) -> Dict[str, int]:
        result = {c: 0 for c in ("statically_pruned", "dynamically_pruned", "kernel", "comm_routine", "extern")}
        for c in self.classes.values():
            result[c] += 1
        return result


def classify(
    program: Program,
    validation: ValidationReport,
    deps: DependencyReport,
    db: Optional[LibraryDB] = None,
) -> Classification:
    db = db if db is not None else LibraryDB()
    unknown = sorted(set(deps.functions) - set(program.by_name))
    if unknown:
        raise AnalysisError(f"dependency record for unknown function(s): {', '.join(unknown)}")

    classes: Dict[str, FunctionClass] = {}
    externs = set()
    for fn in program.functions:
        loops = program.loops(fn.name)
        calls = [n for n in walk(fn.body) if isinstance(n, Extern)]
        externs.update(n.name for n in calls)
        static_loops = all(loop.node_id in validation.constant_loops for loop in loops)
        if static_loops and not any(db.is_relevant(n.name) for n in calls):
            classes[fn.name] = "statically_pruned"
            continue
        merged = deps.functions.get(fn.name)
        if merged is None or not merged.own.dep_params:
            classes[fn.name] = "dynamically_pruned"
            continue
        local = set()
        for rec in deps.records:
            if rec.function == fn.name:
                local |= rec.branch_labels
                for term in unresolved_terms(rec.own_volume):
                    if term.kind != "extern":
                        local |= term.params
        classes[fn.name] = "kernel" if local else "comm_routine"

    for name in sorted(externs):
        if name in classes:
            logger.warning("extern %s shares its name with a program function", name)
            continue
        classes[name] = "extern"

    relevant = {node_id for (node_id, _), labels in deps.loop_deps.items() if labels}
    stats = LoopStats(
        total=len(program.loops()),
        statically_pruned=len(validation.constant_loops),
        relevant=len(relevant),
    )
    result = Classification(dict(sorted(classes.items())), stats, tuple(sorted(externs)))
    logger.info("classification: %s", ", ".join(f"{k}={v}" for k, v in result.counts().items()))
    return result


# ---------------------------------------------------------------------------
# 5. Experiment validity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidityOptions:
    rho_threshold: float = 0.8
    min_points: int = 5
    smape_threshold: float = 0.15
    cov_threshold: float = 0.1


@dataclass(frozen=True)
class ContentionSuspicion:
    param: str
    rho: float
    points: Tuple[Tuple[float, float], ...]  # (parameter value, median)


@dataclass(frozen=True)
class BehaviorChange:
    param: str
    split: float  # last value of the lower part
    smape: float
    lower_smape: float
    upper_smape: float


@dataclass(frozen=True)
class FunctionValidity:
    function: str
    callpath: str
    cov_violations: Tuple[Tuple[Config, float], ...] = ()
    contention: Tuple[ContentionSuspicion, ...] = ()
    behavior_change: Optional[BehaviorChange] = None
    false_dependencies: Tuple[str, ...] = ()
    unvisited: Tuple[str, ...] = ()

    @property
    def flagged(self) -> bool:
        return bool(self.cov_violations or self.contention or self.behavior_change)


@dataclass(frozen=True)
class ValidityReport:
    entries: Tuple[FunctionValidity, ...]

    @property
    def flagged(self) -> List[FunctionValidity]:
        return [e for e in self.entries if e.flagged]

    def entry(self, function: str, callpath: str = "") -> Optional[FunctionValidity]:
        for e in self.entries:
            if e.function == function and e.callpath == callpath:
                return e
        return None


def split_models(results: Iterable[SeriesModels]) -> Tuple[Dict[SeriesKey, PerfModel], Dict[SeriesKey, PerfModel]]:
    """(blackbox, guided) model maps out of model_all(..., mode="both")."""
    blackbox, guided = {}, {}
    for r in results:
        if r.blackbox is not None:
            blackbox[(r.function, r.callpath)] = r.blackbox
        if r.guided is not None:
            guided[(r.function, r.callpath)] = r.guided
    return blackbox, guided


def detect_contention(pts: Points, params: Sequence[str], options: ValidityOptions) -> List[ContentionSuspicion]:
    """Monotone growth in parameters the dependency analysis proved irrelevant."""
    found = []
    for param in params:
        sliced = base_slice(pts, param, [p for p in sorted(pts.x) if p != param], minimum=options.min_points)
        values = np.unique(sliced.x[param])
        if len(values) < options.min_points:
            continue
        medians = np.array([np.median(sliced.y[sliced.x[param] == v]) for v in values])
        if np.ptp(medians) == 0:
            continue
        rho = float(spearmanr(values, medians)[0])
        if not math.isfinite(rho):
            continue
        # contention only adds cost; a falling series is not flagged
        if rho <= -options.rho_threshold:
            logger.debug("series falls with %s (rho %.2f); not contention", param, rho)
            continue
        if rho >= options.rho_threshold:
            found.append(ContentionSuspicion(
                param, rho, tuple((float(v), float(m)) for v, m in zip(values, medians))
            ))
    return found


def detect_behavior_change(
    pts: Points, params: Sequence[str], smape: float, options: ValidityOptions
) -> Optional[BehaviorChange]:
    """Single split of one parameter's range that turns a poor fit into two good ones."""
    if smape <= options.smape_threshold:
        return None
    space = SearchSpace(n=1)
    best: Optional[BehaviorChange] = None
    for param in params:
        sliced = base_slice(pts, param, [p for p in sorted(pts.x) if p != param])
        values = np.unique(sliced.x[param])
        for idx in range(2, len(values) - 3):
            split = values[idx]
            parts = []
            for mask in (sliced.x[param] <= split, sliced.x[param] > split):
                try:
                    parts.append(select_model(Points({param: sliced.x[param][mask]}, sliced.y[mask]), None, space).smape)
                except FitError:
                    parts = []
                    break
            if len(parts) != 2 or max(parts) >= smape / 2:
                continue
            candidate = BehaviorChange(param, float(split), smape, parts[0], parts[1])
            if best is None or max(parts) < max(best.lower_smape, best.upper_smape):
                best = candidate
    return best


def _unvisited_notes(deps: DependencyReport, function: str) -> Tuple[str, ...]:
    merged = deps.functions.get(function)
    if merged is None:
        return ()
    return tuple(
        f"{note.arm} arm of branch {note.node_id} never ran "
        f"(call path {format_call_path(note.call_path) or '<entry>'}, depends on {', '.join(sorted(note.labels))})"
        + (f"; loop(s) {', '.join(map(str, note.skipped_loops))} in it never ran" if note.skipped_loops else "")
        for note in merged.unvisited
    )


def validate_experiment(
    models_blackbox: Mapping[SeriesKey, PerfModel],
    models_guided: Mapping[SeriesKey, PerfModel],
    deps: DependencyReport,
    ms: MeasurementSet,
    options: Optional[ValidityOptions] = None,
) -> ValidityReport:
    options = options or ValidityOptions()
    keys = set(ms.series)
    if set(models_blackbox) != keys or set(models_guided) != keys:
        raise ExperimentError("model sets and measurements cover different functions")

    _, violations = cov_filter(ms, options.cov_threshold)
    by_key = {(v.function, v.callpath): v for v in violations}

    entries: List[FunctionValidity] = []
    for key in sorted(keys):
        function, callpath = key
        pts = Points.from_measurements(ms.series[key], ms.params)
        structure = deps.structure(function, callpath)
        dep_params = structure.dep_params if structure is not None else frozenset()
        varying = [p for p in ms.params if len(np.unique(pts.x[p])) > 1]

        outside = [p for p in varying if p not in dep_params]
        contention = detect_contention(pts, outside, options)

        guided = models_guided[key]
        modeled = [p for p in varying if p in dep_params] or varying
        change = detect_behavior_change(pts, modeled, guided.smape, options)

        false_deps = tuple(sorted(set(models_blackbox[key].hypothesis.params) - dep_params))
        violation = by_key.get(key)
        entries.append(FunctionValidity(
            function=function,
            callpath=callpath,
            cov_violations=violation.configs if violation else (),
            contention=tuple(contention),
            behavior_change=change,
            false_dependencies=false_deps,
            unvisited=_unvisited_notes(deps, function),
        ))
        if contention:
            logger.warning("%s: growth in %s although the analysis found no dependency",
                           function, ", ".join(c.param for c in contention))
        if change:
            logger.warning("%s: behavior changes at %s=%g", function, change.param, change.split)
    return ValidityReport(tuple(entries))
