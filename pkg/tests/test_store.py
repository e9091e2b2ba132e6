"""
Testing in-memory store
- Register a program, add runs, attach an analysis, and look everything up again.
"""

import pytest

from taintmodel.dsl import parse
from taintmodel.engine import run
from taintmodel.store import ArtifactStore
from taintmodel.validation import validate
from taintmodel.volume import analyze

SOURCE = "param n; fn main() { for i in 0..n { } }"


def test_store_programs_and_runs():
    store = ArtifactStore()
    program = parse(SOURCE)

    entry = store.add_program(SOURCE, program, validate(program))
    assert store.get_program(entry.id) is entry
    assert entry.validation.ok

    # Runs belong to a known program and start without an analysis
    first = store.add_run(entry.id, {"n": 2}, run(program, {"n": 2}))
    second = store.add_run(entry.id, {"n": 5}, run(program, {"n": 5}))
    assert first.id != second.id
    assert store.get_run(first.id).analysis is None
    assert store.get_run(second.id).params == {"n": 5}

    # Unknown ids
    assert store.get_program("missing") is None
    assert store.get_run("missing") is None
    with pytest.raises(KeyError):
        store.add_run("missing", {}, first.trace)


def test_store_keeps_the_first_analysis():
    store = ArtifactStore()
    program = parse(SOURCE)
    entry = store.add_program(SOURCE, program, validate(program))
    stored = store.add_run(entry.id, {"n": 3}, run(program, {"n": 3}))

    report = analyze(program, stored.trace)
    assert store.set_analysis(stored.id, report).analysis is report

    # A second analysis does not replace the stored one
    other = analyze(program, run(program, {"n": 4}))
    assert store.set_analysis(stored.id, other).analysis is report

    store.clear()
    assert store.get_run(stored.id) is None
    assert store.get_program(entry.id) is None
