"""
Command line
- run / analyze / design / model / classify / validate: one pipeline stage each,
  reading the previous stage's artifact and writing its own (JSON or CSV)
- synth corpus / synth measurements: synthetic programs and measurements
- serve: the HTTP API

Exit codes: 0 success, 1 error, 2 success with analysis warnings.
Summaries go to stdout, logs to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from .config import Settings, load_settings
from .dsl import load_program
from .engine import RunOptions, run
from .errors import TaintModelError
from .experiment import (
    ValidityOptions, classify, cov_filter, design, ingest, split_models, validate_experiment, write_measurements,
)
from .harness import Contamination, CorpusSpec, gen_corpus, gen_measurements, load_groundtruth, write_corpus
from .libdb import load_db
from .modeler import MeasurementSet, SearchSpace, model_all
from .reports import (
    classification_doc, deps_doc, deps_from_doc, design_doc, design_from_doc, filter_doc, models_doc,
    models_from_doc, read_doc, trace_doc, trace_from_doc, validity_doc, write_doc,
)
from .schemas import DepsDoc, DesignDoc, ModelsDoc, TraceDoc
from .types import ModelMode
from .validation import validate
from .volume import analyze, param_coverage

logger = logging.getLogger(__name__)

Number = Union[int, float]

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_WARNINGS = 2


class UsageError(TaintModelError):
    """Bad command line."""


@dataclass
class PipelineConfig:
    """Settings merged with the flags of one invocation."""
    libdb: Path
    out: Optional[Path] = None
    run: RunOptions = field(default_factory=RunOptions)
    space: SearchSpace = field(default_factory=SearchSpace)
    mode: ModelMode = "guided"
    cov_threshold: float = 0.1
    validity: ValidityOptions = field(default_factory=ValidityOptions)

    @classmethod
    def from_args(cls, args: argparse.Namespace, settings: Settings) -> "PipelineConfig":
        cov = getattr(args, "cov_threshold", None) or settings.cov_threshold
        return cls(
            libdb=Path(args.libdb) if getattr(args, "libdb", None) else settings.libdb,
            out=Path(args.out) if getattr(args, "out", None) else None,
            run=RunOptions(
                implicit_flows=not getattr(args, "no_implicit_flows", False),
                max_trips=getattr(args, "max_trips", None) or settings.max_trips,
            ),
            space=SearchSpace(n=getattr(args, "terms", None) or settings.terms),
            mode=getattr(args, "mode", None) or "guided",
            cov_threshold=cov,
            validity=ValidityOptions(
                rho_threshold=getattr(args, "rho", None) or ValidityOptions.rho_threshold,
                smape_threshold=getattr(args, "smape_threshold", None) or ValidityOptions.smape_threshold,
                cov_threshold=cov,
            ),
        )


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def _number(text: str) -> Number:
    value = float(text)
    return int(value) if value.is_integer() and "." not in text and "e" not in text.lower() else value


def parse_assignments(items: Sequence[str]) -> Dict[str, Number]:
    """['size=5', 'p=8'] -> {'size': 5, 'p': 8}"""
    result: Dict[str, Number] = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep or not name.strip():
            raise UsageError(f"expected name=value, got {item!r}")
        try:
            result[name.strip()] = _number(value.strip())
        except ValueError:
            raise UsageError(f"value of {name.strip()!r} is not a number: {value!r}") from None
    return result


def parse_value_lists(items: Sequence[str]) -> Dict[str, List[Number]]:
    """['p=4,8,16'] -> {'p': [4, 8, 16]}"""
    result: Dict[str, List[Number]] = {}
    for item in items:
        name, sep, values = item.partition("=")
        if not sep or not name.strip():
            raise UsageError(f"expected name=v1,v2,..., got {item!r}")
        try:
            result[name.strip()] = [_number(v.strip()) for v in values.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"values of {name.strip()!r} must be numbers: {values!r}") from None
    return result


def _out(config: PipelineConfig, default: str) -> Path:
    return config.out or Path(default)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_run(args: argparse.Namespace, config: PipelineConfig) -> int:
    program = load_program(args.program)
    trace = run(program, parse_assignments(args.param), load_db(config.libdb), config.run)
    path = write_doc(trace_doc(trace, program), _out(config, "taint.json"))
    labels = trace.loop_labels()
    print(f"result: {trace.result}")
    print(f"loops: {len(labels)} executed, {sum(1 for v in labels.values() if v)} parameter-dependent")
    for note in trace.unvisited_tainted_branches:
        skipped = f"; skipped loop(s) {', '.join(map(str, note.skipped_loops))}" if note.skipped_loops else ""
        print(f"unvisited: {note.function} branch {note.node_id} ({note.arm}) depends on {', '.join(sorted(note.labels))}{skipped}")
    for warning in trace.warnings:
        print(f"warning: {warning}")
    print(f"wrote {path}")
    return EXIT_WARNINGS if trace.warnings else EXIT_OK


def cmd_analyze(args: argparse.Namespace, config: PipelineConfig) -> int:
    program = load_program(args.program)
    trace = trace_from_doc(read_doc(TraceDoc, args.taint))
    report = analyze(program, trace, validate(program, load_db(config.libdb)))
    path = write_doc(deps_doc(report), _out(config, "deps.json"))
    for name, fn in report.functions.items():
        own = fn.own
        if own.is_constant:
            print(f"{name}: constant")
            continue
        groups = " ".join("(" + "*".join(g) + ")" for g in own.multiplicative)
        print(f"{name}: {{{', '.join(sorted(own.dep_params))}}} {groups} {' '.join(own.additive)}".rstrip())
    for row in param_coverage(report):
        print(f"param {row.param}: {row.functions} function(s), {row.loops} loop(s)")
    print(f"wrote {path}")
    return EXIT_WARNINGS if report.warnings else EXIT_OK


def cmd_design(args: argparse.Namespace, config: PipelineConfig) -> int:
    deps = deps_from_doc(read_doc(DepsDoc, args.deps)) if args.deps else None
    result = design(parse_value_lists(args.values), deps, args.repetitions, args.prune_unused)
    path = write_doc(design_doc(result), _out(config, "design.json"))
    print(f"{len(result)} configuration(s) instead of {result.full_size} ({result.reduction:.0%} fewer)")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_model(args: argparse.Namespace, config: PipelineConfig) -> int:
    deps = deps_from_doc(read_doc(DepsDoc, args.deps)) if args.deps else None
    ms, excluded = cov_filter(ingest(args.measurements), config.cov_threshold)
    for v in excluded:
        print(f"excluded {v.function}: {v.reason}")
    results = model_all(ms, deps, config.space, config.mode)
    path = write_doc(models_doc(results, ms, config.mode, config.space.n, excluded), _out(config, "models.json"))
    failed = False
    for r in results:
        for which in ("guided", "blackbox"):
            model = getattr(r, which)
            if model is not None:
                print(f"{r.function} [{which}]: {model.formula}  (smape {model.smape:.4f})")
        for which, message in r.errors.items():
            failed = True
            print(f"{r.function} [{which}]: failed: {message}")
    print(f"wrote {path}")
    return EXIT_WARNINGS if failed else EXIT_OK


def cmd_classify(args: argparse.Namespace, config: PipelineConfig) -> int:
    db = load_db(config.libdb)
    program = load_program(args.program)
    deps = deps_from_doc(read_doc(DepsDoc, args.deps))
    result = classify(program, validate(program, db), deps, db)
    path = write_doc(classification_doc(result), _out(config, "classification.json"))
    filter_path = write_doc(filter_doc(result), Path(args.filter_out))
    for cls, count in result.counts().items():
        print(f"{cls}: {count}")
    print(f"loops: {result.loops.total} total, {result.loops.statically_pruned} constant, {result.loops.relevant} relevant")
    print(f"instrument: {', '.join(result.filter) or '(nothing)'}")
    print(f"wrote {path} and {filter_path}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace, config: PipelineConfig) -> int:
    models = read_doc(ModelsDoc, args.models)
    if models.mode != "both":
        raise UsageError("validate needs models fitted with --mode both")
    blackbox, guided = split_models(models_from_doc(models))
    deps = deps_from_doc(read_doc(DepsDoc, args.deps))
    ms = ingest(args.measurements)
    modeled = set(blackbox) & set(guided)
    ms = MeasurementSet(ms.params, {k: v for k, v in ms.series.items() if k in modeled}, ms.metric, ms.units)
    report = validate_experiment(blackbox, guided, deps, ms, config.validity)
    path = write_doc(validity_doc(report, config.validity), _out(config, "validity.json"))
    for entry in report.entries:
        for s in entry.contention:
            print(f"{entry.function}: contention suspected in {s.param} (rho {s.rho:.2f})")
        if entry.behavior_change is not None:
            bc = entry.behavior_change
            print(f"{entry.function}: behavior changes at {bc.param}={bc.split:g} (smape {bc.smape:.3f})")
        if entry.cov_violations:
            print(f"{entry.function}: {len(entry.cov_violations)} noisy configuration(s)")
        if entry.false_dependencies:
            print(f"{entry.function}: black-box model uses {', '.join(entry.false_dependencies)}")
    print(f"{len(report.flagged)} of {len(report.entries)} series flagged")
    print(f"wrote {path}")
    return EXIT_WARNINGS if report.flagged else EXIT_OK


def cmd_synth(args: argparse.Namespace, config: PipelineConfig) -> int:
    if args.action == "corpus":
        spec = CorpusSpec(args.functions, args.params, args.depth, args.constant_share)
        program, gt = gen_corpus(args.seed, spec)
        ptl, truth = write_corpus(program, gt, args.out_dir)
        print(f"{len(gt.functions)} function(s), {gt.constant_share():.0%} constant")
        print(f"wrote {ptl} and {truth}")
        return EXIT_OK

    gt = load_groundtruth(args.groundtruth)
    plan = design_from_doc(read_doc(DesignDoc, args.design))
    contamination = None
    if args.contaminate:
        contamination = Contamination(args.contaminate, args.amplitude, args.shape)
    ms = gen_measurements(gt, plan, args.sigma, args.seed, contamination)
    path = write_measurements(ms, _out(config, "measurements.csv"))
    print(f"{len(ms.series)} series x {len(plan)} configuration(s) x {plan.repetitions} repetition(s)")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace, config: PipelineConfig) -> int:
    import uvicorn

    uvicorn.run("taintmodel.main:app", host=args.host, port=args.port)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="taintmodel", description="Taint-guided empirical performance modeling")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    parser.add_argument("--libdb", help="library database (default: bundled or $TAINTMODEL_LIBDB)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run a program under taint tracking")
    p.add_argument("program")
    p.add_argument("--param", action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--no-implicit-flows", action="store_true", help="ignore labels of untaken branch arms")
    p.add_argument("--max-trips", type=int, help="loop guard")
    p.add_argument("--out", help="default taint.json")
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("analyze", help="dependency report from a taint run")
    p.add_argument("taint")
    p.add_argument("program")
    p.add_argument("--out", help="default deps.json")
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("design", help="measurement configurations")
    p.add_argument("--values", action="append", required=True, metavar="NAME=V1,V2,...")
    p.add_argument("--deps", help="deps.json; without it the full cross product is used")
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--prune-unused", action="store_true", help="hold parameters no function uses at base")
    p.add_argument("--out", help="default design.json")
    p.set_defaults(handler=cmd_design)

    p = sub.add_parser("model", help="fit performance models")
    p.add_argument("measurements")
    p.add_argument("--deps", help="deps.json (required for guided and both)")
    p.add_argument("--mode", choices=("guided", "blackbox", "both"), default="guided")
    p.add_argument("--terms", type=int, help="maximum terms per parameter")
    p.add_argument("--cov-threshold", type=float)
    p.add_argument("--out", help="default models.json")
    p.set_defaults(handler=cmd_model)

    p = sub.add_parser("classify", help="which functions to instrument")
    p.add_argument("program")
    p.add_argument("deps")
    p.add_argument("--out", help="default classification.json")
    p.add_argument("--filter-out", default="filter.json")
    p.set_defaults(handler=cmd_classify)

    p = sub.add_parser("validate", help="check models and measurements for suspicious effects")
    p.add_argument("models")
    p.add_argument("deps")
    p.add_argument("measurements")
    p.add_argument("--rho", type=float, help="rank correlation threshold for contention")
    p.add_argument("--smape-threshold", type=float, help="error above which a behavior change is searched")
    p.add_argument("--cov-threshold", type=float)
    p.add_argument("--out", help="default validity.json")
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser("synth", help="synthetic corpora and measurements")
    actions = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    c = actions.add_parser("corpus")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--functions", type=int, default=20)
    c.add_argument("--params", type=int, default=2)
    c.add_argument("--depth", type=int, default=2)
    c.add_argument("--constant-share", type=float, default=0.3)
    c.add_argument("--out-dir", default=".")
    m = actions.add_parser("measurements")
    m.add_argument("groundtruth")
    m.add_argument("design")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--sigma", type=float, default=0.05)
    m.add_argument("--contaminate", metavar="PARAM", help="add growth in PARAM")
    m.add_argument("--amplitude", type=float, default=0.2)
    m.add_argument("--shape", choices=("log2^2", "linear"), default="log2^2")
    m.add_argument("--out", help="default measurements.csv")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("serve", help="start the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(handler=cmd_serve)
    return parser


def configure_logging(verbose: int, settings: Settings) -> None:
    level = settings.log_level or ("DEBUG" if verbose >= 2 else "INFO" if verbose == 1 else "WARNING")
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        settings = load_settings()
        args = build_parser().parse_args(argv)
        configure_logging(args.verbose, settings)
        config = PipelineConfig.from_args(args, settings)
        return args.handler(args, config)
    except (TaintModelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ValueError as exc:
        # pydantic settings and numeric flag errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
