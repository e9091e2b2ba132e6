"""
Testing the taint engine
- label propagation: data flow, explicit control flow, implicit flows
- sinks: loop exit conditions and tainted branches
- library calls, call paths, loop guard, runtime errors
- the perturbation oracle agrees with the taint labels
"""

import pytest

from taintmodel.dsl import parse
from taintmodel.engine import (
    RunOptions, TaintState, enter_control, exit_control, mark_source, perturbation_oracle, run,
)
from taintmodel.errors import EvaluationError, LoopGuardError, RunError, TaintError, ValidationError
from taintmodel.libdb import load_db


def loop_labels_by_order(program, trace):
    """Loop labels in source order, for the entry call path of each loop's function."""
    labels = trace.loop_labels()
    return [
        next((v for (node_id, _), v in labels.items() if node_id == loop.node_id), None)
        for loop in program.loops()
    ]


def test_nested_loops_accumulate_labels():
    """
    Flow tested:
    1) Outer loop bound is n, inner bound is m.
    2) The inner exit condition runs under the outer loop's scope, so it carries n and m.
    3) Trip counts are totals over all entries.
    """
    program = parse("""
        param n;
        param m;
        fn main() {
            let s = 0;
            for i in 0..n {
                for j in 0..m {
                    s = s + 1;
                }
            }
            return s;
        }
    """)
    trace = run(program, {"n": 3, "m": 4})
    outer, inner = program.loops()

    assert trace.result == 12
    assert trace.result_labels == frozenset({"n", "m"})
    assert loop_labels_by_order(program, trace) == [frozenset({"n"}), frozenset({"n", "m"})]

    assert trace.trip_counts[(outer.node_id, ())].total == 3
    assert trace.trip_counts[(inner.node_id, ())].entries == 3
    assert trace.trip_counts[(inner.node_id, ())].total == 12
    assert trace.trip_counts[(inner.node_id, ())].max_per_entry == 4


def test_sequential_loops_stay_separate():
    program = parse("""
        param n;
        param m;
        fn main() {
            for i in 0..n { }
            for j in 0..m { }
        }
    """)
    trace = run(program, {"n": 2, "m": 5})

    assert loop_labels_by_order(program, trace) == [frozenset({"n"}), frozenset({"m"})]


def test_constant_loop_is_untainted():
    program = parse("param n; fn main() { let s = n; for i in 0..10 { s = s + 1; } }")
    trace = run(program, {"n": 7})

    assert loop_labels_by_order(program, trace) == [frozenset()]


def test_data_flow_through_arrays_and_builtins():
    program = parse("""
        param n;
        fn main() {
            let a = array(4);
            a[1] = n;
            let bound = max(a[0], 2);
            for i in 0..bound { }
            let size = len(a);
            for j in 0..size { }
        }
    """)
    trace = run(program, {"n": 9})

    # one label set per array: reading any element carries n
    first, second = loop_labels_by_order(program, trace)
    assert first == frozenset({"n"})
    # len() of an array whose length came from a constant is still tainted by its contents' labels
    assert second == frozenset({"n"})


def test_source_statement_marks_a_variable():
    program = parse("""
        param n;
        param p implicit;
        fn main() {
            let ranks = 4;
            source(ranks, "p");
            for i in 0..ranks { }
        }
    """)
    trace = run(program, {"n": 1, "p": 4}, load_db())

    assert loop_labels_by_order(program, trace) == [frozenset({"p"})]


def test_library_source_write_and_dependency_atoms():
    """
    Flow tested:
    1) MPI_Comm_size writes the configured p into `ranks` and labels it p.
    2) A loop bounded by ranks depends on p.
    3) MPI_Send records p plus the labels of its count argument.
    """
    program = parse("""
        param n;
        param p implicit;
        fn main() {
            let ranks = 0;
            extern("MPI_Comm_size", ranks);
            for i in 0..ranks { }
            let buf = array(n);
            extern("MPI_Send", buf, n);
        }
    """)
    trace = run(program, {"n": 3, "p": 8}, load_db())

    assert trace.trip_counts[(program.loops()[0].node_id, ())].total == 8
    assert loop_labels_by_order(program, trace) == [frozenset({"p"})]
    send = [x for x in trace.extern_calls if x.name == "MPI_Send"][0]
    assert send.atoms == frozenset({"p", "n"})
    assert send.function == "main"
    size = [x for x in trace.extern_calls if x.name == "MPI_Comm_size"][0]
    assert size.atoms == frozenset()


def test_branch_sink_and_unvisited_arm():
    program = parse("""
        param n;
        fn main() {
            let s = 0;
            if (n > 100) {
                for i in 0..n { s = s + 1; }
            } else {
                s = 1;
            }
            return s;
        }
    """)
    trace = run(program, {"n": 5})

    branches = [e for e in trace.sink_events if e.kind == "branch"]
    assert len(branches) == 1
    assert branches[0].labels == frozenset({"n"})
    assert branches[0].taken is False

    (note,) = trace.unvisited_tainted_branches
    assert note.arm == "then"
    assert note.labels == frozenset({"n"})
    # the loop never ran, so there is no trip count for it
    assert trace.trip_counts == {}


def test_untainted_branch_is_not_a_sink():
    program = parse("fn main() { let s = 0; if (s == 0) { s = 2; } }")
    trace = run(program, {})

    assert [e for e in trace.sink_events if e.kind == "branch"] == []
    assert trace.unvisited_tainted_branches == ()


IMPLICIT = """
    param n;
    fn main() {
        let flag = 0;
        if (n > 100) {
            flag = 1;
        }
        let k = 0;
        while (k < flag) { k = k + 1; }
    }
"""


def test_implicit_flow_taints_the_untaken_arm_writes():
    """
    Flow tested:
    1) n > 100 is false, so `flag = 1` never runs.
    2) With implicit flows on, flag still picks up n when the branch closes.
    3) With implicit flows off, the loop bounded by flag looks constant.
    """
    program = parse(IMPLICIT)

    on = run(program, {"n": 5})
    off = run(program, {"n": 5}, opts=RunOptions(implicit_flows=False))

    assert loop_labels_by_order(program, on) == [frozenset({"n"})]
    assert loop_labels_by_order(program, off) == [frozenset()]
    assert off.implicit_flows is False


def test_control_labels_reach_writes_inside_the_scope():
    program = parse("""
        param n;
        fn main() {
            let x = 0;
            if (n > 1) { x = 5; }
            for i in 0..x { }
        }
    """)
    trace = run(program, {"n": 3})

    assert loop_labels_by_order(program, trace) == [frozenset({"n"})]


def test_call_paths_separate_call_sites():
    """
    Flow tested:
    1) work is called twice with different bounds.
    2) Each call site gets its own call path and its own trip counts.
    3) Frames record how often each (function, call path) ran.
    """
    program = parse("""
        param n;
        param m;
        fn work(k) { for i in 0..k { } }
        fn main() {
            work(n);
            work(m);
        }
    """)
    trace = run(program, {"n": 2, "m": 6})
    loop = program.loops("work")[0]

    keys = sorted(k for k in trace.trip_counts if k[0] == loop.node_id)
    assert len(keys) == 2
    first, second = keys
    assert len(first[1]) == len(second[1]) == 1
    assert trace.trip_counts[first].total == 2
    assert trace.trip_counts[second].total == 6
    assert trace.loop_labels()[first] == frozenset({"n"})
    assert trace.loop_labels()[second] == frozenset({"m"})

    frames = {(f.function, f.call_path): f.calls for f in trace.frames}
    assert frames[("main", ())] == 1
    assert frames[("work", first[1])] == 1


def test_call_under_tainted_control_records_context():
    program = parse("""
        param n;
        fn tick() { return 1; }
        fn main() { for i in 0..n { tick(); } }
    """)
    trace = run(program, {"n": 4})
    frame = [f for f in trace.frames if f.function == "tick"][0]

    assert frame.calls == 4
    assert frame.context == frozenset({"n"})


def test_recursion_is_opaque_at_runtime():
    program = parse("""
        param n;
        fn down(k) { if (k > 0) { down(k - 1); } return k; }
        fn main() { down(n); }
    """)
    trace = run(program, {"n": 3})

    assert any("recursion at runtime" in w for w in trace.warnings)


def test_loop_guard():
    program = parse("fn main() { let k = 0; while (k < 1) { } }")

    with pytest.raises(LoopGuardError) as info:
        run(program, {}, opts=RunOptions(max_trips=50))
    assert info.value.loop_id == program.loops()[0].node_id


@pytest.mark.parametrize(
    "statement",
    ["let x = 1 / 0;", "let x = log(0);", "let a = array(2); let y = a[5];", "let x = 1; let y = x[0];"],
)
def test_evaluation_errors(statement):
    program = parse("fn main() { " + statement + " }")

    with pytest.raises(EvaluationError):
        run(program, {})


def test_integer_division_truncates_toward_zero():
    program = parse("fn main() { return (0 - 7) / 2; }")
    assert run(program, {}).result == -3


def test_missing_parameter_value():
    program = parse("param n; fn main() { }")

    with pytest.raises(RunError):
        run(program, {})


def test_invalid_program_is_rejected_before_running():
    program = parse("fn main() { y = 1; }")

    with pytest.raises(ValidationError):
        run(program, {})


def test_taint_state_primitives():
    """
    Flow tested:
    1) mark_source only accepts declared labels and known variables.
    2) enter_control / exit_control balance; underflow is an error.
    3) Closing a scope with implicit flows taints the untaken writes.
    """
    state = TaintState(declared_params=frozenset({"n"}))
    state.write("x", 1, frozenset())
    state.write("y", 2, frozenset())

    mark_source(state, "x", "n")
    mark_source(state, "x", "n")
    assert state.lookup("x").labels == frozenset({"n"})
    with pytest.raises(TaintError):
        mark_source(state, "x", "q")
    with pytest.raises(TaintError):
        mark_source(state, "nope", "n")

    enter_control(state, frozenset({"n"}))
    assert state.control_labels() == frozenset({"n"})
    exit_control(state, untaken_writes=["y"])
    assert state.lookup("y").labels == frozenset({"n"})
    assert state.control_stack == []
    with pytest.raises(TaintError):
        exit_control(state)


def test_oracle_agrees_with_taint_labels():
    """
    Flow tested:
    1) The oracle reruns the program with each parameter doubled.
    2) Every parameter that changes a loop's trip count must be among its taint labels.
    """
    program = parse("""
        param n;
        param m;
        fn tri(k) { for i in 0..k { for j in 0..i { } } }
        fn main() {
            for a in 0..n { for b in 0..m { } }
            tri(m);
            for c in 0..5 { }
        }
    """)
    config = {"n": 3, "m": 4}
    influence = perturbation_oracle(program, config)
    labels = run(program, config).loop_labels()

    assert influence
    for key, params in influence.items():
        assert params <= labels[key]
    constant = [k for k in influence if k[0] == program.loops("main")[2].node_id][0]
    assert influence[constant] == frozenset()


def test_unvisited_branch_names_the_loops_it_skipped():
    """
    Flow tested:
    1) n > 100 is false at n=4, so neither loop in the then arm runs.
    2) The branch note lists the loop bounded by m; nothing is known about it.
    3) The constant loop next to it is not listed, its trip count is in the source.
    """
    program = parse("""
        param n;
        param m;
        fn main() {
            if (n > 100) {
                for i in 0..m { }
                for j in 0..3 { }
            }
        }
    """)
    dynamic, constant = program.loops()

    trace = run(program, {"n": 4, "m": 5})

    [note] = trace.unvisited_tainted_branches
    assert (note.arm, note.labels) == ("then", frozenset({"n"}))
    assert note.skipped_loops == (dynamic.node_id,)
    assert constant.node_id not in note.skipped_loops
    assert trace.trip_counts == {}
