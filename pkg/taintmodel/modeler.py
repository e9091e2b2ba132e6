"""
Empirical performance models in normal form:

    f(x_1..x_m) = c_0 + sum_k c_k * prod_l x_l^(i_kl) * log2(x_l)^(j_kl)

- enumerate_hypotheses: the search space, in canonical order
- fit: least squares on per-config medians, leave-one-config-out SMAPE
- select_model: guided by a dependency structure (restricted parameters,
  additive vs multiplicative combination, constant pruning) or black-box
- model_all: every series of a MeasurementSet, failures recorded per series
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import FitError, HypothesisRejected, UnderdeterminedError
from .types import ModelMode
from .volume import DependencyReport, DependencyStructure

logger = logging.getLogger(__name__)

Number = Union[int, float]

DEFAULT_EXPONENTS: Tuple[Fraction, ...] = tuple(
    Fraction(text) for text in (
        "0", "1/4", "1/3", "1/2", "2/3", "3/4", "1", "5/4", "4/3", "3/2",
        "5/3", "7/4", "2", "9/4", "5/2", "8/3", "11/4", "3",
    )
)
DEFAULT_LOG_EXPONENTS: Tuple[int, ...] = (0, 1, 2)
TIE_TOLERANCE = 1e-9
TOP_CANDIDATES = 3


# ---------------------------------------------------------------------------
# Measurements
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Measurement:
    config: Tuple[Tuple[str, Number], ...]  # sorted by parameter name
    samples: Tuple[float, ...]

    @property
    def values(self) -> Dict[str, Number]:
        return dict(self.config)

    @property
    def aggregate(self) -> float:
        return float(np.median(self.samples))


@dataclass(frozen=True)
class MeasurementSet:
    params: Tuple[str, ...]
    series: Mapping[Tuple[str, str], Tuple[Measurement, ...]]  # (function, callpath) -> configs
    metric: str = "time"
    units: str = "s"

    def __len__(self) -> int:
        return len(self.series)

    @property
    def functions(self) -> List[str]:
        return sorted({name for name, _ in self.series})


# ---------------------------------------------------------------------------
# Search space and hypotheses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchSpace:
    n: int = 2
    exponents: Tuple[Fraction, ...] = DEFAULT_EXPONENTS
    log_exponents: Tuple[int, ...] = DEFAULT_LOG_EXPONENTS

    def factors(self) -> List[Tuple[Fraction, int]]:
        """(i, j) pairs usable in a non-constant term, lexicographically ordered."""
        if not self.exponents or not self.log_exponents:
            raise FitError("search space needs at least one polynomial and one log exponent")
        return [
            (i, j)
            for i in sorted(set(self.exponents))
            for j in sorted(set(self.log_exponents))
            if (i, j) != (0, 0)
        ]


Factor = Tuple[str, Fraction, int]  # (parameter, polynomial exponent, log exponent)


@dataclass(frozen=True)
class Term:
    factors: Tuple[Factor, ...]  # one per parameter, sorted by parameter

    @property
    def params(self) -> Tuple[str, ...]:
        return tuple(f[0] for f in self.factors)

    def times(self, other: "Term") -> "Term":
        return Term(tuple(sorted(self.factors + other.factors)))


@dataclass(frozen=True)
class Hypothesis:
    terms: Tuple[Term, ...] = ()
    constant: bool = True

    @property
    def params(self) -> Tuple[str, ...]:
        return tuple(sorted({p for t in self.terms for p in t.params}))

    @property
    def sort_key(self) -> tuple:
        return (len(self.terms), tuple(t.factors for t in self.terms))

    @classmethod
    def of(cls, terms: Sequence[Term]) -> "Hypothesis":
        unique = sorted(set(terms), key=lambda t: t.factors)
        return cls(tuple(unique))


def enumerate_hypotheses(space: SearchSpace, params: Sequence[str]) -> Iterator[Hypothesis]:
    """Constant-only first, then every set of 1..n distinct single-factor terms.
    For several parameters the per-parameter streams are concatenated; products
    of parameters come from the combination step of select_model."""
    if not params:
        raise FitError("at least one parameter is required")
    factors = space.factors()
    yield Hypothesis()
    for param in params:
        terms = [Term(((param, i, j),)) for i, j in factors]
        for count in range(1, space.n + 1):
            for combo in itertools.combinations(terms, count):
                yield Hypothesis(combo)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerfModel:
    hypothesis: Hypothesis
    coefficients: Tuple[float, ...]  # c_0, then one per term
    smape: float = 0.0
    rss: float = 0.0
    adj_r2: float = 1.0
    params: Tuple[str, ...] = ()  # parameters the model was allowed to use
    points: int = 0
    pruned: bool = False  # constant by dependency analysis, no search performed

    @property
    def is_constant(self) -> bool:
        return not self.hypothesis.terms or all(c == 0 for c in self.coefficients[1:])

    @property
    def formula(self) -> str:
        return format_model(self)

    @property
    def selection_key(self) -> tuple:
        return (math.floor(self.smape / TIE_TOLERANCE),) + self.hypothesis.sort_key


def _factor_value(x: float, i: Fraction, j: int) -> float:
    if i.denominator == 1:
        value = x ** int(i)
    else:
        value = math.exp(float(i) * math.log(x))
    if j:
        value *= math.log2(x) ** j
    return value


def _factor_column(x: np.ndarray, i: Fraction, j: int) -> np.ndarray:
    with np.errstate(all="ignore"):
        if i.denominator == 1:
            column = x ** int(i)
        else:
            column = np.exp(float(i) * np.log(x))
        if j:
            column = column * np.log2(x) ** j
    return column


def evaluate(model: PerfModel, config: Mapping[str, Number]) -> float:
    """sum_k c_k prod x^i log2(x)^j; fractional powers via exp/ln."""
    total = model.coefficients[0] if model.hypothesis.constant else 0.0
    for coef, term in zip(model.coefficients[1:], model.hypothesis.terms):
        value = coef
        for param, i, j in term.factors:
            if param not in config:
                raise FitError(f"no value for parameter {param!r}")
            value *= _factor_value(float(config[param]), i, j)
        total += value
    return float(total)


@dataclass(frozen=True)
class Points:
    """Per-config aggregates of one series, as arrays."""
    x: Mapping[str, np.ndarray]
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    @classmethod
    def from_measurements(cls, data: Sequence[Measurement], params: Optional[Sequence[str]] = None) -> "Points":
        if not data:
            raise FitError("no measurements")
        names = list(params) if params is not None else sorted(data[0].values)
        x = {p: np.array([float(m.values[p]) for m in data]) for p in names}
        return cls(x, np.array([m.aggregate for m in data]))

    def subset(self, mask: np.ndarray) -> "Points":
        return Points({p: v[mask] for p, v in self.x.items()}, self.y[mask])


def _design(h: Hypothesis, pts: Points) -> np.ndarray:
    columns = [np.ones(len(pts))] if h.constant else []
    for term in h.terms:
        column = np.ones(len(pts))
        for param, i, j in term.factors:
            if param not in pts.x:
                raise HypothesisRejected(f"no data for parameter {param!r}")
            column = column * _factor_column(pts.x[param], i, j)
        columns.append(column)
    matrix = np.column_stack(columns)
    if not np.all(np.isfinite(matrix)):
        raise HypothesisRejected("non-finite term value")
    return matrix


def _smape(pred: np.ndarray, actual: np.ndarray) -> float:
    denom = (np.abs(pred) + np.abs(actual)) / 2.0
    with np.errstate(all="ignore"):
        ratio = np.where(denom > 0, np.abs(pred - actual) / denom, 0.0)
    return float(np.mean(ratio))


def _fit_points(h: Hypothesis, pts: Points, params: Sequence[str] = ()) -> PerfModel:
    A = _design(h, pts)
    m, k = A.shape
    if m < k + 1:
        raise UnderdeterminedError(
            f"{k} coefficient(s) need at least {k + 1} configurations, got {m}", minimum=k + 1
        )
    scale = np.max(np.abs(A), axis=0)
    if np.any(scale == 0):
        raise HypothesisRejected("all-zero term column")
    As = A / scale
    coef_scaled, _, rank, singular = np.linalg.lstsq(As, pts.y, rcond=None)
    if rank < k or singular[-1] <= singular[0] * 1e-12:
        raise HypothesisRejected("singular or ill-conditioned design matrix")
    coefficients = coef_scaled / scale
    if not np.all(np.isfinite(coefficients)):
        raise HypothesisRejected("non-finite coefficient")

    residuals = pts.y - A @ coefficients
    rss = float(residuals @ residuals)

    # leave-one-config-out predictions from the hat matrix
    q, _ = np.linalg.qr(As)
    leverage = np.sum(q * q, axis=1)
    loo = np.empty(m)
    for idx in range(m):
        if 1.0 - leverage[idx] > 1e-10:
            loo[idx] = pts.y[idx] - residuals[idx] / (1.0 - leverage[idx])
        else:
            keep = np.arange(m) != idx
            c, *_ = np.linalg.lstsq(As[keep], pts.y[keep], rcond=None)
            loo[idx] = As[idx] @ c
    smape = _smape(loo, pts.y)

    tss = float(np.sum((pts.y - pts.y.mean()) ** 2))
    dof = m - k
    if tss == 0:
        adj_r2 = 1.0 if rss == 0 else 0.0
    elif dof <= 0:
        adj_r2 = 1.0 - rss / tss
    else:
        adj_r2 = 1.0 - (rss / dof) / (tss / (m - 1))

    if not h.constant:
        coefficients = np.concatenate([[0.0], coefficients])
    return PerfModel(
        hypothesis=h,
        coefficients=tuple(float(c) for c in coefficients),
        smape=smape,
        rss=rss,
        adj_r2=adj_r2,
        params=tuple(params) or h.params,
        points=m,
    )


def fit(h: Hypothesis, data: Union[Sequence[Measurement], Points], params: Sequence[str] = ()) -> PerfModel:
    """Least-squares coefficients for one hypothesis; response = median of each config's samples."""
    pts = data if isinstance(data, Points) else Points.from_measurements(data)
    return _fit_points(h, pts, params)


def constant_model(data: Union[Sequence[Measurement], Points]) -> PerfModel:
    """c0 = median of the per-config aggregates; no search."""
    pts = data if isinstance(data, Points) else Points.from_measurements(data)
    c0 = float(np.median(pts.y))
    pred = np.full(len(pts), c0)
    residuals = pts.y - pred
    return PerfModel(
        hypothesis=Hypothesis(),
        coefficients=(c0,),
        smape=_smape(pred, pts.y),
        rss=float(residuals @ residuals),
        adj_r2=0.0,
        params=(),
        points=len(pts),
        pruned=True,
    )


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------

def _nonnegative(model: PerfModel, pts: Points) -> bool:
    """Runtime cannot be negative: check training points and the corners of their hull."""
    names = model.hypothesis.params
    tolerance = 1e-9 * max(1.0, float(np.max(np.abs(pts.y))))
    checks = [{p: float(pts.x[p][i]) for p in names} for i in range(len(pts))]
    checks += [dict(zip(names, corner)) for corner in itertools.product(
        *[(float(pts.x[p].min()), float(pts.x[p].max())) for p in names]
    )]
    return all(evaluate(model, cfg) >= -tolerance for cfg in checks)


def _try_fit(h: Hypothesis, pts: Points, params: Sequence[str]) -> Optional[PerfModel]:
    try:
        model = _fit_points(h, pts, params)
    except HypothesisRejected as exc:
        logger.debug("hypothesis rejected: %s", exc)
        return None
    return model if _nonnegative(model, pts) else None


def base_slice(pts: Points, param: str, others: Sequence[str], minimum: int = 3) -> Points:
    """Configs where every other parameter sits at its base (smallest) value; if that
    leaves too few points, medians grouped by the parameter's value."""
    mask = np.ones(len(pts), dtype=bool)
    for other in others:
        mask &= pts.x[other] == pts.x[other].min()
    sliced = pts.subset(mask)
    if len(np.unique(sliced.x[param])) >= minimum:
        return sliced
    values = np.unique(pts.x[param])
    y = np.array([np.median(pts.y[pts.x[param] == v]) for v in values])
    return Points({param: values}, y)


def _single_param(pts: Points, param: str, space: SearchSpace) -> Tuple[PerfModel, List[Hypothesis]]:
    """Best model for one parameter and its top non-constant hypotheses."""
    distinct = len(np.unique(pts.x[param]))
    if distinct < 3:
        raise UnderdeterminedError(
            f"parameter {param!r} has {distinct} distinct value(s); at least 3 are needed", minimum=3
        )
    limited = SearchSpace(min(space.n, distinct - 2), space.exponents, space.log_exponents)
    best: Optional[PerfModel] = None
    ranked: List[PerfModel] = []
    for h in enumerate_hypotheses(limited, [param]):
        model = _try_fit(h, pts, [param])
        if model is None:
            continue
        if best is None or model.selection_key < best.selection_key:
            best = model
        if h.terms:
            ranked.append(model)
            ranked.sort(key=lambda m: m.selection_key)
            del ranked[TOP_CANDIDATES:]
    if best is None:
        raise FitError(f"no admissible hypothesis for parameter {param!r}")
    logger.debug("best single-parameter model for %s: %s", param, format_model(best))
    if not best.hypothesis.terms:
        return best, []
    return best, [m.hypothesis for m in ranked]


def _group_terms(group: Sequence[str], chosen: Mapping[str, Hypothesis], expanded: bool) -> List[Term]:
    """Product terms for a multiplicative group; `expanded` also keeps every partial product."""
    subsets = [tuple(group)] if not expanded else [
        s for size in range(1, len(group) + 1) for s in itertools.combinations(group, size)
    ]
    terms: List[Term] = []
    for subset in subsets:
        for pick in itertools.product(*[chosen[p].terms for p in subset]):
            term = pick[0]
            for other in pick[1:]:
                term = term.times(other)
            terms.append(term)
    return terms


def _partitions(items: Sequence[str]) -> Iterator[List[Tuple[str, ...]]]:
    if not items:
        yield []
        return
    head, rest = items[0], items[1:]
    for partition in _partitions(rest):
        yield [(head,)] + partition
        for idx in range(len(partition)):
            yield partition[:idx] + [(head,) + partition[idx]] + partition[idx + 1:]


def _combine(
    pts: Points,
    candidates: Mapping[str, List[Hypothesis]],
    structures: Sequence[Tuple[List[Tuple[str, ...]], List[str]]],
    params: Sequence[str],
) -> Optional[PerfModel]:
    names = sorted(candidates)
    best: Optional[PerfModel] = None
    tried = set()
    too_small = 0
    for picks in itertools.product(*[candidates[p] for p in names]):
        chosen = dict(zip(names, picks))
        for groups, additive in structures:
            for variant in itertools.product((False, True), repeat=len(groups)):
                terms: List[Term] = []
                for group, expanded in zip(groups, variant):
                    terms += _group_terms(group, chosen, expanded)
                for param in additive:
                    terms += chosen[param].terms
                h = Hypothesis.of(terms)
                if h in tried:
                    continue
                tried.add(h)
                if len(h.terms) + 2 > len(pts):
                    too_small += 1
                    continue
                model = _try_fit(h, pts, params)
                if model is not None and (best is None or model.selection_key < best.selection_key):
                    best = model
    if best is None and too_small:
        minimum = min(len(h.terms) for h in tried) + 2
        raise UnderdeterminedError(
            f"combined model needs at least {minimum} configurations, got {len(pts)}", minimum=minimum
        )
    return best


def _restrict_structure(
    multiplicative: Sequence[Sequence[str]], active: Sequence[str]
) -> Tuple[List[Tuple[str, ...]], List[str]]:
    groups = []
    for group in multiplicative:
        kept = tuple(p for p in group if p in active)
        if len(kept) >= 2 and kept not in groups:
            groups.append(kept)
    grouped = {p for g in groups for p in g}
    return groups, [p for p in active if p not in grouped]


def select_model(
    data: Union[Sequence[Measurement], Points],
    dep: Optional[DependencyStructure] = None,
    space: Optional[SearchSpace] = None,
) -> PerfModel:
    """Guided when `dep` is given (constant pruning, restricted parameters,
    structure-aware combination); black-box over all varying parameters otherwise."""
    space = space or SearchSpace()
    pts = data if isinstance(data, Points) else Points.from_measurements(data)
    if len(pts) == 0:
        raise FitError("no measurements")

    varying = [p for p in sorted(pts.x) if len(np.unique(pts.x[p])) > 1]
    if dep is not None:
        if not dep.dep_params:
            return constant_model(pts)
        ignored = sorted(set(dep.dep_params) - set(pts.x))
        if ignored:
            logger.debug("dependency parameters without measurements: %s", ", ".join(ignored))
        modeled = [p for p in varying if p in dep.dep_params]
    else:
        modeled = varying

    constant_fit = _try_fit(Hypothesis(), pts, modeled) if len(pts) >= 2 else None
    if not modeled:
        return constant_fit or constant_model(pts)

    candidates: Dict[str, List[Hypothesis]] = {}
    single: Dict[str, PerfModel] = {}
    for param in modeled:
        sliced = base_slice(pts, param, [p for p in sorted(pts.x) if p != param])
        best, top = _single_param(sliced, param, space)
        single[param] = best
        if top:
            candidates[param] = top

    if not candidates:
        return constant_fit or constant_model(pts)
    active = sorted(candidates)

    if dep is not None:
        structures = [_restrict_structure(dep.multiplicative, active)]
    else:
        structures = [
            ([b for b in partition if len(b) >= 2], [b[0] for b in partition if len(b) == 1])
            for partition in _partitions(active)
        ]

    if len(active) == 1 and len(varying) == 1:
        # the slice is the whole data set; refit the top candidates directly
        models = [m for m in (_try_fit(h, pts, modeled) for h in candidates[active[0]]) if m is not None]
        best = min(models, key=lambda m: m.selection_key) if models else None
    else:
        best = _combine(pts, candidates, structures, modeled)

    if constant_fit is not None and (best is None or constant_fit.selection_key < best.selection_key):
        best = constant_fit
    if best is None:
        raise FitError("no admissible model")
    return best


# ---------------------------------------------------------------------------
# Formatting
# ---------------------------------------------------------------------------

def _format_number(value: float) -> str:
    text = f"{value:.6g}"
    if "e" in text:
        mantissa, exponent = text.split("e")
        sign = "-" if exponent.startswith("-") else ""
        text = f"{mantissa}e{sign}{exponent.lstrip('+-').lstrip('0') or '0'}"
    return text


def _format_factor(param: str, i: Fraction, j: int) -> str:
    parts = []
    if i != 0:
        if i == 1:
            parts.append(param)
        elif i.denominator == 1:
            parts.append(f"{param}^{i.numerator}")
        else:
            parts.append(f"{param}^({i.numerator}/{i.denominator})")
    if j:
        parts.append(f"log2({param})" + (f"^{j}" if j > 1 else ""))
    return " * ".join(parts)


def format_term(term: Term) -> str:
    return " * ".join(_format_factor(*f) for f in term.factors)


def format_model(model: PerfModel) -> str:
    """Canonical formula, e.g. `2.4e-8 * p^(1/4) * size^3` or `127 + 2.86 * log2(r)^2`."""
    pieces: List[str] = []
    c0 = model.coefficients[0]
    if not model.hypothesis.terms or c0 != 0:
        pieces.append(_format_number(c0))
    for coef, term in zip(model.coefficients[1:], model.hypothesis.terms):
        body = f"{_format_number(abs(coef))} * {format_term(term)}"
        if not pieces:
            pieces.append(("-" if coef < 0 else "") + body)
        else:
            pieces.append(("- " if coef < 0 else "+ ") + body)
    return " ".join(pieces)


# ---------------------------------------------------------------------------
# Whole measurement sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeriesModels:
    function: str
    callpath: str
    guided: Optional[PerfModel] = None
    blackbox: Optional[PerfModel] = None
    errors: Mapping[str, str] = field(default_factory=dict)


def model_all(
    ms: MeasurementSet,
    deps: Optional[DependencyReport] = None,
    space: Optional[SearchSpace] = None,
    mode: ModelMode = "guided",
) -> List[SeriesModels]:
    """Model every series; a failing series records its error and the rest continue."""
    if mode in ("guided", "both") and deps is None:
        raise FitError(f"mode {mode!r} needs a dependency report")
    space = space or SearchSpace()
    results: List[SeriesModels] = []
    for (function, callpath), data in sorted(ms.series.items()):
        pts = Points.from_measurements(data, ms.params)
        models: Dict[str, Optional[PerfModel]] = {"guided": None, "blackbox": None}
        errors: Dict[str, str] = {}
        wanted = ["guided", "blackbox"] if mode == "both" else [mode]
        for which in wanted:
            try:
                if which == "guided":
                    structure = deps.structure(function, callpath)
                    if structure is None:
                        logger.warning("%s was not executed during analysis; modeled as constant", function)
                        models[which] = constant_model(pts)
                    else:
                        models[which] = select_model(pts, structure, space)
                else:
                    models[which] = select_model(pts, None, space)
            except FitError as exc:
                errors[which] = str(exc)
                logger.warning("%s %s: %s", function, which, exc)
        results.append(SeriesModels(function, callpath, models["guided"], models["blackbox"], errors))
    logger.info("modeled %d series in %s mode", len(results), mode)
    return results

