"""
Testing the synthetic harness
- corpus generation is deterministic and covers every function kind
- measurements follow the ground truth (noise, contamination, piecewise truths)
- corpus files load back unchanged
"""

from collections import Counter

import numpy as np
import pytest

from taintmodel.dsl import format_program, parse
from taintmodel.errors import CorpusSpecError
from taintmodel.experiment import design
from taintmodel.harness import (
    CONSTANT_KINDS, PARAMETRIC_KINDS, Contamination, CorpusSpec, Piecewise, gen_corpus, gen_measurements,
    load_groundtruth, sample_series, write_corpus,
)

VALUES = (2, 4, 8, 16, 32)


def corpus_design(gt, repetitions=3):
    return design({p: VALUES for p in gt.params}, repetitions=repetitions)


def test_same_seed_same_corpus():
    first_program, first_gt = gen_corpus(7)
    second_program, second_gt = gen_corpus(7)

    assert format_program(first_program) == format_program(second_program)
    assert first_gt == second_gt


def test_corpus_covers_every_kind():
    """
    Flow tested:
    1) 20 functions with a 0.3 constant share: 6 constant, 14 parametric.
    2) Every constant and every parametric kind appears at least once.
    3) Each ground-truth function is called from main at its recorded call path.
    """
    program, gt = gen_corpus(7, CorpusSpec(functions=20, params=2, depth=2, constant_share=0.3))
    kinds = Counter(f.kind for f in gt.functions)

    assert CorpusSpec().constant_count == 6
    assert len(gt.functions) == 20
    assert sum(kinds[k] for k in CONSTANT_KINDS) == 6
    assert set(kinds) == set(CONSTANT_KINDS) | set(PARAMETRIC_KINDS)
    assert gt.constant_share() == pytest.approx(0.3)
    assert gt.params == ("size", "p")
    assert gt.explicit_params == ("size",)

    for fn in gt.functions:
        assert program.function(fn.name)
        (site,) = fn.call_path
        assert program.owner[site] == "main"
        assert [node_id for node_id, _ in fn.loops] == [loop.node_id for loop in program.loops(fn.name)]


def test_ground_truth_shapes():
    _, gt = gen_corpus(11, CorpusSpec(functions=30, params=3, depth=2))

    for fn in gt.functions:
        if fn.kind in CONSTANT_KINDS:
            assert fn.params == frozenset()
            assert fn.model.hypothesis.terms == ()
        if fn.kind == "comm":
            assert fn.multiplicative == (tuple(sorted(fn.params)),)
            assert "p" in fn.params
        if fn.kind == "triangular":
            (x,) = fn.params
            assert fn.additive == (x,)
            unit = fn.model.coefficients[1] / 0.5
            assert fn.truth({x: 4}) == pytest.approx(fn.model.coefficients[0] + unit * 6)
        if fn.kind == "multiplicative":
            assert len(fn.multiplicative) == 1 and fn.additive == ()


@pytest.mark.parametrize(
    "spec",
    [
        CorpusSpec(functions=0),
        CorpusSpec(params=0),
        CorpusSpec(params=7),
        CorpusSpec(depth=0),
        CorpusSpec(depth=5),
        CorpusSpec(constant_share=1.5),
        CorpusSpec(params=1, depth=2),
    ],
)
def test_bad_corpus_spec(spec):
    with pytest.raises(CorpusSpecError):
        gen_corpus(1, spec)


def test_single_parameter_corpus():
    program, gt = gen_corpus(3, CorpusSpec(functions=6, params=1, depth=1, constant_share=0.0))

    assert gt.params == ("size",)
    assert {f.kind for f in gt.functions} <= {"single", "guarded"}
    assert "MPI_Comm_size" not in format_program(program)


def test_noise_free_measurements_equal_the_truth():
    _, gt = gen_corpus(5)
    ms = gen_measurements(gt, corpus_design(gt), sigma=0.0)

    assert len(ms) == len(gt.functions)
    for fn in gt.functions:
        for m in ms.series[(fn.name, str(fn.call_path[0]))]:
            assert m.samples == (fn.truth(m.values),) * 3


def test_noise_stays_within_three_sigma():
    _, gt = gen_corpus(5)
    ms = gen_measurements(gt, corpus_design(gt, repetitions=5), sigma=0.05, seed=9)

    for fn in gt.functions:
        for m in ms.series[(fn.name, str(fn.call_path[0]))]:
            exact = fn.truth(m.values)
            assert all(abs(s / exact - 1) <= 0.15 + 1e-12 for s in m.samples)
    assert gen_measurements(gt, corpus_design(gt, 5), sigma=0.05, seed=9) == ms


def test_contamination_grows_with_its_parameter():
    """
    Flow tested:
    1) A contamination term in p is added to one function only.
    2) At the largest p the value is (1 + amplitude) times the truth.
    3) Other functions are untouched; an unknown parameter is refused.
    """
    _, gt = gen_corpus(5)
    target, other = gt.functions[0], gt.functions[1]
    contamination = Contamination("p", amplitude=0.2, functions=(target.name,))
    ms = gen_measurements(gt, corpus_design(gt, 1), sigma=0.0, contamination=contamination)

    top = {"size": 2, "p": 32}
    [hit] = [m for m in ms.series[(target.name, str(target.call_path[0]))] if m.values == top]
    assert hit.samples[0] == pytest.approx(1.2 * target.truth(top))
    [clean] = [m for m in ms.series[(other.name, str(other.call_path[0]))] if m.values == top]
    assert clean.samples[0] == pytest.approx(other.truth(top))

    with pytest.raises(CorpusSpecError):
        gen_measurements(gt, corpus_design(gt), contamination=Contamination("nx"))


def test_piecewise_truth():
    truth = Piecewise("p", 16, lambda c: 50.0, lambda c: 20.0 * c["p"])
    configs = [(("p", p),) for p in (8, 16, 32)]
    series = sample_series(truth, configs, 1, 0.0, np.random.default_rng(0))

    assert [m.samples[0] for m in series] == [50.0, 50.0, 640.0]
    with pytest.raises(ValueError):
        sample_series(truth, configs, 1, -0.1, np.random.default_rng(0))


def test_corpus_files_load_back(tmp_path):
    program, gt = gen_corpus(13)
    ptl, truth = write_corpus(program, gt, tmp_path / "corpus")

    assert ptl.name == "app.ptl" and truth.name == "groundtruth.json"
    assert parse(ptl.read_text(encoding="utf-8")) == program
    assert load_groundtruth(truth) == gt
