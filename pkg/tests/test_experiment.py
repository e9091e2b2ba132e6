"""
Testing the experiment helpers
- experiment design reduced by the dependency structure
- the measurement CSV (parsing, errors with line numbers)
- the CoV filter
- classification of functions for instrumentation
- experiment validity: contention, behavior changes, false dependencies
"""

import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from taintmodel.dsl import parse
from taintmodel.engine import run
from taintmodel.errors import DesignError, ExperimentError, IngestError
from taintmodel.experiment import (
    ValidityOptions, classify, coefficient_of_variation, cov_filter, design, detect_contention, format_measurements,
    parse_measurements, validate_experiment,
)
from taintmodel.libdb import load_db
from taintmodel.modeler import Hypothesis, Measurement, MeasurementSet, PerfModel, Points, Term
from taintmodel.validation import validate
from taintmodel.volume import DependencyStructure, analyze

FIVE = (1, 2, 3, 4, 5)


# ---- design ----

def test_design_sizes():
    """
    Flow tested:
    1) Two additive parameters with 5 values: one sweep each through the base config, 9 configs.
    2) The same parameters multiplicative: the full 5 x 5 grid.
    3) Three additive parameters: 13 of 125.
    4) No dependency information: the full cross product.
    """
    values = {"p": FIVE, "size": FIVE}
    additive = DependencyStructure(frozenset({"p", "size"}), additive=("p", "size"))
    grouped = DependencyStructure(frozenset({"p", "size"}), multiplicative=(("p", "size"),))

    assert len(design(values, additive)) == 9
    assert len(design(values, grouped)) == 25
    assert len(design(values)) == 25

    three = design({"p": FIVE, "size": FIVE, "steps": FIVE},
                   DependencyStructure(frozenset({"p", "size", "steps"}), additive=("p", "size", "steps")))
    assert len(three) == 13
    assert three.full_size == 125
    assert three.reduction == pytest.approx(1 - 13 / 125)
    assert three.base_values == {"p": 1, "size": 1, "steps": 1}


def test_design_mixes_groups_and_sweeps():
    values = {"p": FIVE, "size": FIVE, "steps": FIVE}
    structure = DependencyStructure(
        frozenset({"p", "size", "steps"}), multiplicative=(("p", "size"),), additive=("steps",)
    )
    result = design(values, structure, repetitions=3)

    # 25 for the group plus 4 more steps values
    assert len(result) == 29
    assert result.repetitions == 3
    assert {"p": 1, "size": 1, "steps": 5} in result.as_dicts()


def test_overlapping_groups_are_crossed_separately():
    """
    Flow tested:
    1) Groups (a, b) and (b, c) share b.
    2) Each group gets its own 5 x 5 grid with the third parameter at its base value.
    3) The grids share the 5 configurations that sweep b alone: 25 + 25 - 5.
    """
    values = {"a": FIVE, "b": FIVE, "c": FIVE}
    structure = DependencyStructure(frozenset(values), multiplicative=(("a", "b"), ("b", "c")))
    result = design(values, structure)

    assert len(result) == 45
    assert {"a": 5, "b": 5, "c": 1} in result.as_dicts()
    assert {"a": 1, "b": 5, "c": 5} in result.as_dicts()
    assert {"a": 5, "b": 5, "c": 5} not in result.as_dicts()


def test_unused_parameters():
    values = {"p": FIVE, "size": FIVE, "unused": FIVE}
    structure = DependencyStructure(frozenset({"p"}), additive=("p",))

    # unused parameters are still swept unless pruned
    assert len(design(values, structure)) == 13
    assert len(design(values, structure, prune_unused=True)) == 5


def test_design_errors():
    with pytest.raises(DesignError):
        design({})
    with pytest.raises(DesignError):
        design({"p": []})
    with pytest.raises(DesignError):
        design({"p": FIVE}, repetitions=0)


@given(st.integers(1, 4), st.integers(2, 5))
def test_additive_design_size(k, v):
    names = [f"x{i}" for i in range(k)]
    structure = DependencyStructure(frozenset(names), additive=tuple(names))
    result = design({name: range(1, v + 1) for name in names}, structure)

    assert len(result) == k * v - (k - 1)


# ---- measurement files ----

CSV = """function,callpath,p,size,rep,value
kernel,,2,10,0,1.5
kernel,,2,10,1,1.7
kernel,,4,10,0,2.5
halo,3/9,2,10,0,0.25
"""


def test_parse_measurements():
    ms = parse_measurements(CSV)

    assert ms.params == ("p", "size")
    assert sorted(ms.series) == [("halo", "3/9"), ("kernel", "")]
    kernel = ms.series[("kernel", "")]
    assert kernel[0].values == {"p": 2, "size": 10}
    assert isinstance(kernel[0].values["p"], int)
    assert kernel[0].samples == (1.5, 1.7)
    assert kernel[1].aggregate == 2.5


def test_measurement_errors_carry_line_numbers():
    text = CSV + "kernel,,2\nkernel,,two,10,0,1.0\nkernel,,0,10,0,1.0\nkernel,,2,10,1,9.9\n"

    with pytest.raises(IngestError) as info:
        parse_measurements(text, "bench.csv")
    lines = [line for line, _ in info.value.problems]
    assert lines == [6, 7, 8, 9]
    assert "duplicate repetition" in info.value.problems[-1][1]
    assert str(info.value).startswith("bench.csv: line 6")


def test_bad_header():
    with pytest.raises(IngestError) as info:
        parse_measurements("name,p,value\nx,1,2\n")
    assert info.value.problems[0][0] == 1


def test_empty_measurement_file(caplog):
    with caplog.at_level(logging.WARNING):
        ms = parse_measurements("  \n")

    assert len(ms) == 0
    assert "empty" in caplog.text


def test_formatted_measurements_parse_back():
    ms = parse_measurements(CSV)
    assert parse_measurements(format_measurements(ms)) == ms


# ---- CoV ----

def test_coefficient_of_variation():
    assert coefficient_of_variation([2.0, 2.0, 2.0]) == 0.0
    assert coefficient_of_variation([1.0, 3.0]) == pytest.approx(0.5)
    assert np.isnan(coefficient_of_variation([0.0, 0.0]))


def test_cov_filter_excludes_noisy_series():
    ms = parse_measurements(
        "function,callpath,p,rep,value\n"
        "calm,,1,0,1.0\ncalm,,1,1,1.05\n"
        "noisy,,1,0,1.0\nnoisy,,1,1,3.0\n"
        "zero,,1,0,0.0\nzero,,1,1,0.0\n"
        "single,,1,0,4.0\n"
    )
    kept, excluded = cov_filter(ms, 0.1)

    assert sorted(kept.series) == [("calm", ""), ("single", "")]
    reasons = {v.function: v.reason for v in excluded}
    assert reasons["noisy"] == "CoV above 0.1"
    assert reasons["zero"] == "zero mean, CoV undefined"


samples = st.lists(st.floats(0.5, 2.0), min_size=1, max_size=4).map(tuple)
measurement_sets = st.dictionaries(
    st.sampled_from(["a", "b", "c", "d"]).map(lambda name: (name, "")),
    st.lists(samples, min_size=1, max_size=3).map(
        lambda groups: tuple(Measurement((("p", i + 1),), s) for i, s in enumerate(groups))
    ),
    max_size=4,
)


@settings(max_examples=50)
@given(measurement_sets)
def test_cov_filter_is_idempotent(series):
    ms = MeasurementSet(("p",), series)
    once, _ = cov_filter(ms, 0.1)
    twice, excluded = cov_filter(once, 0.1)

    assert twice == once
    assert excluded == []


# ---- classification ----

CLASSES = """
param size;
param p implicit;
fn getter(v) { return v; }
fn fixed() { let s = 0; for i in 0..8 { s = s + i; } return s; }
fn settle() { let a = 2; let b = 3; let m = a + b; let s = 0; for i in 0..m { s = s + 1; } }
fn sweep(n) { let s = 0; for i in 0..n { s = s + i; } }
fn exchange(count) { let buf = array(count); extern("MPI_Send", buf, count); }
fn main() {
    let ranks = 0;
    extern("MPI_Comm_size", ranks);
    getter(size);
    fixed();
    settle();
    sweep(size);
    exchange(size);
}
"""


def test_classify():
    """
    Flow tested:
    1) No loops or only constant loops, no relevant library call: statically pruned.
    2) A loop whose bound is only known at runtime but carries no label: dynamically pruned.
    3) A tainted loop: kernel. Only a tainted library call: communication routine.
    4) Library routines are listed as extern; the filter names what to instrument.
    """
    db = load_db()
    program = parse(CLASSES)
    validation = validate(program, db)
    deps = analyze(program, run(program, {"size": 4, "p": 4}, db), validation)
    result = classify(program, validation, deps, db)

    assert result.classes == {
        "MPI_Comm_size": "extern",
        "MPI_Send": "extern",
        "exchange": "comm_routine",
        "fixed": "statically_pruned",
        "getter": "statically_pruned",
        "main": "dynamically_pruned",
        "settle": "dynamically_pruned",
        "sweep": "kernel",
    }
    assert result.filter == ["exchange", "sweep"]
    assert result.members("statically_pruned") == ["fixed", "getter"]
    assert result.loops.total == 3
    assert result.loops.statically_pruned == 1
    assert result.loops.relevant == 1
    assert result.counts()["extern"] == 2


# ---- experiment validity ----

VALIDITY = """
param p;
fn kernel() { for i in 0..p { } }
fn halo() { let x = 1; }
fn main() { kernel(); halo(); }
"""

P_SWEEP = (2, 4, 8, 16, 32, 64, 128, 256)


def sweep_series(truth, sigma=0.0, seed=0):
    rng = np.random.default_rng(seed)
    return tuple(
        Measurement((("p", p),), tuple(truth(p) * (1 + sigma * rng.standard_normal()) for _ in range(5)))
        for p in P_SWEEP
    )


def p_model(smape=0.0):
    return PerfModel(Hypothesis((Term((("p", 1, 0),)),)), (0.0, 1.0), smape=smape)


def constant(value, smape=0.0):
    return PerfModel(Hypothesis(), (value,), smape=smape)


@pytest.fixture
def validity_deps():
    program = parse(VALIDITY)
    return analyze(program, run(program, {"p": 4}))


def test_contention_in_a_constant_function(validity_deps):
    """
    Flow tested:
    1) halo depends on no parameter, yet its time grows with p (shared resource).
    2) Spearman's rho over the p sweep is high, so the series is flagged.
    3) The black-box model's use of p is listed as a false dependency.
    """
    ms = MeasurementSet(("p",), {
        ("halo", ""): sweep_series(lambda p: 1 + 0.1 * np.log2(p) ** 2, sigma=0.02, seed=3),
        ("kernel", ""): sweep_series(lambda p: 0.5 * p),
    })
    blackbox = {("halo", ""): p_model(), ("kernel", ""): p_model()}
    guided = {("halo", ""): constant(1.5), ("kernel", ""): p_model()}
    report = validate_experiment(blackbox, guided, validity_deps, ms)

    halo = report.entry("halo")
    assert [c.param for c in halo.contention] == ["p"]
    assert halo.contention[0].rho >= 0.8
    assert halo.false_dependencies == ("p",)
    assert halo.flagged

    kernel = report.entry("kernel")
    assert kernel.contention == ()
    assert kernel.false_dependencies == ()
    assert not kernel.flagged
    assert [e.function for e in report.flagged] == ["halo"]


def test_validity_notes_name_loops_in_branches_that_never_ran():
    program = parse("param p; fn main() { if (p > 100) { for i in 0..p { } } }")
    [loop] = program.loops()
    deps = analyze(program, run(program, {"p": 4}))
    ms = MeasurementSet(("p",), {("main", ""): sweep_series(lambda p: 0.5 * p)})

    report = validate_experiment({("main", ""): p_model()}, {("main", ""): p_model()}, deps, ms)

    [note] = report.entry("main").unvisited
    assert note.startswith("then arm of branch")
    assert note.endswith(f"loop(s) {loop.node_id} in it never ran")


def test_falling_series_is_not_contention(caplog):
    falling = Points.from_measurements(sweep_series(lambda p: 10.0 / p), ("p",))
    rising = Points.from_measurements(sweep_series(lambda p: 1 + np.log2(p)), ("p",))

    with caplog.at_level(logging.DEBUG, logger="taintmodel.experiment"):
        assert detect_contention(falling, ["p"], ValidityOptions()) == []
    assert "falls with p" in caplog.text
    assert [s.param for s in detect_contention(rising, ["p"], ValidityOptions())] == ["p"]


def test_behavior_change_is_located(validity_deps):
    """
    Flow tested:
    1) kernel costs 50 up to p=16 and 20p beyond (a protocol switch).
    2) The guided model fits poorly over the whole range.
    3) Splitting after p=16 gives two good fits, so the split is reported there.
    """
    ms = MeasurementSet(("p",), {
        ("kernel", ""): sweep_series(lambda p: 50.0 if p <= 16 else 20.0 * p),
    })
    models = {("kernel", ""): constant(500.0, smape=0.6)}
    report = validate_experiment(models, models, validity_deps, ms)

    change = report.entry("kernel").behavior_change
    assert change is not None
    assert change.param == "p"
    assert change.split == 16
    assert change.lower_smape < 0.05 and change.upper_smape < 0.05


def test_good_fit_has_no_behavior_change(validity_deps):
    ms = MeasurementSet(("p",), {("kernel", ""): sweep_series(lambda p: 3.0 * p)})
    models = {("kernel", ""): p_model(smape=0.01)}

    assert validate_experiment(models, models, validity_deps, ms).entry("kernel").behavior_change is None


def test_mismatched_models_are_refused(validity_deps):
    ms = MeasurementSet(("p",), {("kernel", ""): sweep_series(lambda p: p)})

    with pytest.raises(ExperimentError):
        validate_experiment({}, {("kernel", ""): p_model()}, validity_deps, ms)
