"""
Synthetic workloads with known answers.
- gen_corpus: a PTL program whose functions cover every class the analysis tells
  apart (getters, constant loops, additive / multiplicative / triangular nests,
  guarded loops, communication routines), plus the GroundTruth it was built from
- gen_measurements: noisy measurements of the ground-truth models over a Design,
  with an optional contamination term that grows in one parameter
- write_corpus / load_groundtruth: app.ptl + groundtruth.json
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .dsl import Call, Program, format_program, parse, walk
from .errors import CorpusSpecError
from .experiment import Design
from .modeler import Hypothesis, Measurement, MeasurementSet, PerfModel, Term, evaluate, format_model
from .reports import read_doc, write_doc
from .schemas import GroundTruthDoc, GroundTruthFunctionDoc, TermDoc
from .types import CallPath, ContaminationShape, FunctionClass, LabelSet, format_call_path, parse_call_path
from .volume import DependencyStructure

logger = logging.getLogger(__name__)

Number = Union[int, float]

PARAM_POOL = ("size", "p", "nx", "ny", "iters", "steps")
IMPLICIT_PARAMS = frozenset({"p"})
ANALYSIS_VALUES: Mapping[str, int] = {"size": 4, "p": 4, "nx": 3, "ny": 3, "iters": 3, "steps": 2}
MAX_DEPTH = 4
RANKS_VAR = "ranks"

CONSTANT_KINDS = ("getter", "constant_loop", "dynamic_constant")
PARAMETRIC_KINDS = ("single", "additive", "multiplicative", "triangular", "guarded", "comm")
KIND_CLASS: Mapping[str, FunctionClass] = {
    "getter": "statically_pruned",
    "constant_loop": "statically_pruned",
    "dynamic_constant": "dynamically_pruned",
    "single": "kernel",
    "additive": "kernel",
    "multiplicative": "kernel",
    "triangular": "kernel",
    "guarded": "kernel",
    "comm": "comm_routine",
}


@dataclass(frozen=True)
class CorpusSpec:
    functions: int = 20
    params: int = 2
    depth: int = 2
    constant_share: float = 0.3

    @property
    def param_names(self) -> Tuple[str, ...]:
        return PARAM_POOL[:self.params]

    def check(self) -> None:
        if self.functions < 1:
            raise CorpusSpecError("a corpus needs at least one function")
        if not 1 <= self.params <= len(PARAM_POOL):
            raise CorpusSpecError(f"params must be between 1 and {len(PARAM_POOL)}, got {self.params}")
        if not 1 <= self.depth <= MAX_DEPTH:
            raise CorpusSpecError(f"nesting depth must be between 1 and {MAX_DEPTH}, got {self.depth}")
        if not 0.0 <= self.constant_share <= 1.0:
            raise CorpusSpecError(f"constant share must lie in [0, 1], got {self.constant_share}")
        if self.depth >= 2 and self.params < 2:
            raise CorpusSpecError("multiplicative nests need at least two parameters")

    @property
    def constant_count(self) -> int:
        return int(math.floor(self.constant_share * self.functions + 0.5))


@dataclass(frozen=True)
class GroundTruthFunction:
    name: str
    kind: str
    cls: FunctionClass
    params: LabelSet
    multiplicative: Tuple[Tuple[str, ...], ...]
    additive: Tuple[str, ...]
    loops: Tuple[Tuple[int, LabelSet], ...]  # (loop node id, true parameters) in source order
    call_path: CallPath
    model: PerfModel

    @property
    def structure(self) -> DependencyStructure:
        return DependencyStructure(self.params, self.multiplicative, self.additive)

    @property
    def formula(self) -> str:
        return format_model(self.model)

    def truth(self, config: Mapping[str, Number]) -> float:
        return evaluate(self.model, config)


@dataclass(frozen=True)
class GroundTruth:
    seed: int
    spec: CorpusSpec
    params: Tuple[str, ...]
    analysis_values: Mapping[str, int]
    functions: Tuple[GroundTruthFunction, ...]

    def function(self, name: str) -> GroundTruthFunction:
        for fn in self.functions:
            if fn.name == name:
                return fn
        raise KeyError(name)

    @property
    def explicit_params(self) -> Tuple[str, ...]:
        return tuple(p for p in self.params if p not in IMPLICIT_PARAMS)

    def constant_share(self) -> float:
        pruned = sum(1 for f in self.functions if f.cls in ("statically_pruned", "dynamically_pruned"))
        return pruned / len(self.functions) if self.functions else 0.0


# ---------------------------------------------------------------------------
# Corpus generation
# ---------------------------------------------------------------------------

@dataclass
class _Body:
    kind: str
    lines: List[str] = field(default_factory=list)
    loops: List[LabelSet] = field(default_factory=list)
    terms: List[Tuple[Term, float]] = field(default_factory=list)  # (term, multiplier of the unit cost)
    groups: List[Tuple[str, ...]] = field(default_factory=list)


def _term(exponents: Mapping[str, int], logs: Optional[Mapping[str, int]] = None) -> Term:
    logs = logs or {}
    names = sorted(set(exponents) | set(logs))
    return Term(tuple((p, Fraction(exponents.get(p, 0)), logs.get(p, 0)) for p in names))


class _CorpusBuilder:
    def __init__(self, spec: CorpusSpec, rng: np.random.Generator) -> None:
        self.spec = spec
        self.rng = rng
        self.params = spec.param_names
        self.explicit = [p for p in self.params if p not in IMPLICIT_PARAMS]

    def var(self, param: str) -> str:
        return RANKS_VAR if param in IMPLICIT_PARAMS else param

    def pick(self, choices: Sequence[str], count: int = 1) -> List[str]:
        return [str(c) for c in self.rng.choice(list(choices), size=count, replace=False)]

    def available(self) -> Tuple[List[str], List[str]]:
        parametric = ["single", "guarded"]
        if len(self.params) >= 2:
            parametric.append("additive")
        if self.spec.depth >= 2:
            parametric += ["multiplicative", "triangular"]
        if "p" in self.params and self.explicit:
            parametric.append("comm")
        return list(CONSTANT_KINDS), [k for k in PARAMETRIC_KINDS if k in parametric]

    def kinds(self) -> List[str]:
        constant, parametric = self.available()
        n_const = self.spec.constant_count
        chosen = constant[:n_const] + [str(k) for k in self.rng.choice(constant, size=max(0, n_const - len(constant)))]
        n_param = self.spec.functions - n_const
        chosen += parametric[:n_param] + [
            str(k) for k in self.rng.choice(parametric, size=max(0, n_param - len(parametric)))
        ]
        order = self.rng.permutation(len(chosen))
        return [chosen[i] for i in order]

    # ---- function bodies ----

    def getter(self) -> _Body:
        return _Body("getter", [f"acc = {int(self.rng.integers(1, 100))};"])

    def constant_loop(self) -> _Body:
        trips = int(self.rng.integers(2, 9))
        return _Body("constant_loop", [f"for i0 in 0..{trips} {{", "    acc = acc + i0;", "}"], [frozenset()])

    def dynamic_constant(self) -> _Body:
        a, b = (int(v) for v in self.rng.integers(1, 5, size=2))
        return _Body("dynamic_constant", [
            f"let m = {a} + {b};",
            "for i0 in 0..m {",
            "    acc = acc + 1;",
            "}",
        ], [frozenset()])

    def single(self) -> _Body:
        x = self.pick(self.params)[0]
        squared = bool(self.rng.random() < 0.3)
        bound = f"({self.var(x)} * {self.var(x)})" if squared else self.var(x)
        body = _Body("single", [f"for i0 in 0..{bound} {{", "    acc = acc + 1;"])
        if self.rng.random() < 0.5:
            # never taken at analysis sizes: leaves an unvisited tainted arm
            body.lines += ["    if (i0 > 1000) {", "        acc = acc + 2;", "    }"]
        body.lines.append("}")
        body.loops.append(frozenset({x}))
        body.terms.append((_term({x: 2 if squared else 1}), 1.0))
        return body

    def additive(self) -> _Body:
        x, y = self.pick(self.params, 2)
        body = _Body("additive")
        for idx, param in enumerate((x, y)):
            body.lines += [f"for i{idx} in 0..{self.var(param)} {{", "    acc = acc + 1;", "}"]
            body.loops.append(frozenset({param}))
            body.terms.append((_term({param: 1}), float(self.rng.uniform(0.5, 2.0))))
        return body

    def multiplicative(self) -> _Body:
        order = self.pick(self.params, len(self.params))
        levels = [order[k % len(order)] for k in range(self.spec.depth)]
        body = _Body("multiplicative")
        outer: LabelSet = frozenset()
        for depth, param in enumerate(levels):
            body.lines.append("    " * depth + f"for i{depth} in 0..{self.var(param)} {{")
            outer = outer | {param}
            body.loops.append(outer)
        body.lines.append("    " * len(levels) + "acc = acc + 1;")
        body.lines += ["    " * depth + "}" for depth in reversed(range(len(levels)))]
        body.terms.append((_term(Counter(levels)), 1.0))
        body.groups.append(tuple(sorted(set(levels))))
        return body

    def triangular(self) -> _Body:
        x = self.pick(self.params)[0]
        body = _Body("triangular", [
            f"for i0 in 0..{self.var(x)} {{",
            "    for i1 in 0..i0 {",
            "        acc = acc + 1;",
            "    }",
            "}",
        ], [frozenset({x}), frozenset({x})])
        body.terms += [(_term({x: 2}), 0.5), (_term({x: 1}), -0.5)]
        return body

    def guarded(self) -> _Body:
        x = self.pick(self.params)[0]
        body = _Body("guarded", [
            f"if ({self.var(x)} > 0) {{",
            f"    for i0 in 0..{self.var(x)} {{",
            "        acc = acc + 1;",
            "    }",
            "}",
        ], [frozenset({x})])
        body.terms.append((_term({x: 1}), 1.0))
        return body

    def comm(self) -> _Body:
        x = self.pick(self.explicit)[0]
        body = _Body("comm", [
            f"let count = {x} * 2;",
            "let buf = array(count);",
            'extern("MPI_Send", buf, count);',
        ])
        body.terms.append((_term({x: 1}, {"p": 1}), 1.0))
        body.groups.append(tuple(sorted({"p", x})))
        return body

    # ---- assembly ----

    def source(self, bodies: Sequence[_Body]) -> str:
        uses_p = "p" in self.params
        lines = [f"param {p} implicit;" if p in IMPLICIT_PARAMS else f"param {p};" for p in self.params]
        lines.append("")
        args = RANKS_VAR if uses_p else ""
        for idx, body in enumerate(bodies, start=1):
            lines.append(f"fn f{idx}({args}) {{")
            lines.append("    let acc = 0;")
            lines += ["    " + line for line in body.lines]
            lines.append("    return acc;")
            lines += ["}", ""]
        lines.append("fn main() {")
        if uses_p:
            lines += [f"    let {RANKS_VAR} = 0;", f'    extern("MPI_Comm_size", {RANKS_VAR});']
        lines += [f"    f{idx}({args});" for idx in range(1, len(bodies) + 1)]
        lines += ["}", ""]
        return "\n".join(lines)

    def truth(self, body: _Body) -> PerfModel:
        c0 = float(self.rng.uniform(1.0, 10.0)) * 1e-4
        unit = float(self.rng.uniform(1.0, 10.0)) * 1e-6
        terms = tuple(t for t, _ in body.terms)
        coefficients = (c0,) + tuple(unit * m for _, m in body.terms)
        return PerfModel(Hypothesis(terms), coefficients, params=Hypothesis(terms).params)


def gen_corpus(seed: int, spec: Optional[CorpusSpec] = None) -> Tuple[Program, GroundTruth]:
    """Deterministic per seed: the same seed and spec give the same program text."""
    spec = spec or CorpusSpec()
    spec.check()
    rng = np.random.default_rng(seed)
    builder = _CorpusBuilder(spec, rng)
    bodies = [getattr(builder, kind)() for kind in builder.kinds()]
    program = parse(builder.source(bodies))

    main = program.function(program.entry)
    call_sites = {n.name: n.node_id for n in walk(main.body) if isinstance(n, Call) and n.name in program.by_name}

    functions = []
    for idx, body in enumerate(bodies, start=1):
        name = f"f{idx}"
        loop_ids = [loop.node_id for loop in program.loops(name)]
        params = frozenset().union(*body.loops, *(set(t.params) for t, _ in body.terms))
        grouped = {p for g in body.groups for p in g}
        functions.append(GroundTruthFunction(
            name=name,
            kind=body.kind,
            cls=KIND_CLASS[body.kind],
            params=params,
            multiplicative=tuple(body.groups) if len(grouped) >= 2 else (),
            additive=tuple(sorted(params - grouped)) if len(grouped) >= 2 else tuple(sorted(params)),
            loops=tuple(zip(loop_ids, body.loops)),
            call_path=(call_sites[name],),
            model=builder.truth(body),
        ))

    gt = GroundTruth(
        seed=seed,
        spec=spec,
        params=spec.param_names,
        analysis_values={p: ANALYSIS_VALUES[p] for p in spec.param_names},
        functions=tuple(functions),
    )
    logger.info("generated corpus seed=%d: %d function(s), %d constant", seed, len(functions), spec.constant_count)
    return program, gt


# ---------------------------------------------------------------------------
# Measurements
# ---------------------------------------------------------------------------

def _shape(kind: ContaminationShape, x: float) -> float:
    if kind == "linear":
        return x
    return math.log2(x) ** 2


@dataclass(frozen=True)
class Contamination:
    """value += amplitude * truth * shape(x) / shape(x_max)"""
    param: str
    amplitude: float = 0.2
    shape: ContaminationShape = "log2^2"
    functions: Optional[Tuple[str, ...]] = None  # None = every function

    def applies_to(self, function: str) -> bool:
        return self.functions is None or function in self.functions

    def term(self, truth: float, config: Mapping[str, Number], x_max: float) -> float:
        scale = _shape(self.shape, x_max)
        if scale == 0:
            return 0.0
        return self.amplitude * truth * _shape(self.shape, float(config[self.param])) / scale


@dataclass(frozen=True)
class Piecewise:
    """Truth that switches model at `breakpoint` of `param` (upper model for values above it)."""
    param: str
    breakpoint: float
    lower: Callable[[Mapping[str, Number]], float]
    upper: Callable[[Mapping[str, Number]], float]

    def __call__(self, config: Mapping[str, Number]) -> float:
        side = self.lower if config[self.param] <= self.breakpoint else self.upper
        return float(side(config))


def _noise(rng: np.random.Generator, sigma: float) -> float:
    """N(0, sigma^2) truncated at +-3 sigma by redrawing."""
    if sigma == 0:
        return 0.0
    while True:
        eps = float(rng.normal(0.0, sigma))
        if abs(eps) <= 3 * sigma:
            return eps


def sample_series(
    truth: Callable[[Mapping[str, Number]], float],
    configs: Sequence[Tuple[Tuple[str, Number], ...]],
    repetitions: int,
    sigma: float,
    rng: np.random.Generator,
    extra: Optional[Callable[[float, Mapping[str, Number]], float]] = None,
) -> Tuple[Measurement, ...]:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    result = []
    for config in configs:
        values = dict(config)
        exact = truth(values)
        offset = extra(exact, values) if extra is not None else 0.0
        samples = []
        for _ in range(repetitions):
            value = exact * (1.0 + _noise(rng, sigma)) + offset
            while value < 0:
                value = exact * (1.0 + _noise(rng, sigma)) + offset
            samples.append(value)
        result.append(Measurement(tuple(sorted(config)), tuple(samples)))
    return tuple(result)


def gen_measurements(
    gt: GroundTruth,
    design: Design,
    sigma: float = 0.05,
    seed: int = 0,
    contamination: Optional[Contamination] = None,
) -> MeasurementSet:
    """Multiplicative Gaussian noise around every ground-truth model, one series per function."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    params = tuple(design.params)
    missing = sorted(set(gt.params) - set(params))
    if missing:
        raise CorpusSpecError(f"design has no values for parameter(s): {', '.join(missing)}")
    x_max = None
    if contamination is not None:
        if contamination.param not in params:
            raise CorpusSpecError(f"contamination parameter {contamination.param!r} is not in the design")
        x_max = max(float(dict(c)[contamination.param]) for c in design.configs)

    series: Dict[Tuple[str, str], Tuple[Measurement, ...]] = {}
    for fn in gt.functions:
        extra = None
        if contamination is not None and contamination.applies_to(fn.name):
            extra = lambda exact, values, c=contamination: c.term(exact, values, x_max)
        key = (fn.name, format_call_path(fn.call_path))
        series[key] = sample_series(fn.truth, design.configs, design.repetitions, sigma, rng, extra)
    return MeasurementSet(params=params, series=series)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def groundtruth_doc(gt: GroundTruth) -> GroundTruthDoc:
    return GroundTruthDoc(
        seed=gt.seed,
        functions_requested=gt.spec.functions,
        params_requested=gt.spec.params,
        depth=gt.spec.depth,
        constant_share=gt.spec.constant_share,
        params=list(gt.params),
        analysis_values=dict(gt.analysis_values),
        functions=[
            GroundTruthFunctionDoc(
                name=f.name,
                kind=f.kind,
                function_class=f.cls,
                params=sorted(f.params),
                multiplicative=[list(g) for g in f.multiplicative],
                additive=list(f.additive),
                loops={str(node_id): sorted(labels) for node_id, labels in f.loops},
                callpath=format_call_path(f.call_path),
                constant=f.model.coefficients[0],
                terms=[
                    TermDoc(coefficient=c, factors=[[p, str(i), j] for p, i, j in t.factors])
                    for c, t in zip(f.model.coefficients[1:], f.model.hypothesis.terms)
                ],
                formula=f.formula,
            )
            for f in gt.functions
        ],
    )


def groundtruth_from_doc(doc: GroundTruthDoc) -> GroundTruth:
    functions = []
    for f in doc.functions:
        terms = tuple(Term(tuple((str(p), Fraction(i), int(j)) for p, i, j in t.factors)) for t in f.terms)
        hypothesis = Hypothesis(terms)
        functions.append(GroundTruthFunction(
            name=f.name,
            kind=f.kind,
            cls=f.function_class,
            params=frozenset(f.params),
            multiplicative=tuple(tuple(g) for g in f.multiplicative),
            additive=tuple(f.additive),
            loops=tuple((int(k), frozenset(v)) for k, v in f.loops.items()),
            call_path=parse_call_path(f.callpath),
            model=PerfModel(hypothesis, (f.constant,) + tuple(t.coefficient for t in f.terms), params=hypothesis.params),
        ))
    spec = CorpusSpec(doc.functions_requested, doc.params_requested, doc.depth, doc.constant_share)
    return GroundTruth(doc.seed, spec, tuple(doc.params), dict(doc.analysis_values), tuple(functions))


def write_corpus(program: Program, gt: GroundTruth, out_dir: Union[str, Path]) -> Tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ptl = out / "app.ptl"
    ptl.write_text(format_program(program), encoding="utf-8")
    truth = write_doc(groundtruth_doc(gt), out / "groundtruth.json")
    return ptl, truth


def load_groundtruth(path: Union[str, Path]) -> GroundTruth:
    return groundtruth_from_doc(read_doc(GroundTruthDoc, path))
