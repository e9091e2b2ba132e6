"""
Testing static validation
- errors that stop a run (unresolved names, bad writes, unknown externs)
- warnings that only weaken the analysis (recursion)
- constant-trip-count loops
"""

import pytest

from taintmodel.dsl import parse
from taintmodel.errors import ValidationError
from taintmodel.libdb import load_db
from taintmodel.validation import call_graph, constant_trip_count, recursion_cycles, validate


def test_clean_program_has_no_findings():
    program = parse("""
        param n;
        fn work(m) { let s = 0; for i in 0..m { s = s + i; } return s; }
        fn main() { work(n); }
    """)
    report = validate(program, load_db())

    assert report.ok
    assert report.errors == []
    assert report.warnings == []
    report.raise_for_errors()


@pytest.mark.parametrize(
    "body, fragment",
    [
        ("missing();", "unresolved call target 'missing'"),
        ("y = 1;", "write to undeclared variable 'y'"),
        ("n = 1;", "write to read-only parameter 'n'"),
        ("let x = z;", "read of undeclared variable 'z'"),
        ("let n = 1;", "shadows global parameter"),
        ('extern("NoSuchRoutine");', "not in the library database"),
        ('extern("MPI_Send", 1);', "expects 2 argument(s), got 1"),
        ('let v = 0; source(v, "q");', "label 'q' is not a declared parameter"),
    ],
)
def test_errors(body, fragment):
    program = parse("param n; fn main() { " + body + " }")
    report = validate(program, load_db())

    assert not report.ok
    assert any(fragment in e for e in report.errors), report.errors
    with pytest.raises(ValidationError):
        report.raise_for_errors()


def test_wrong_arity_of_program_call():
    program = parse("fn f(a, b) { } fn main() { f(1); }")
    report = validate(program)

    assert any("f expects 2 argument(s), got 1" in e for e in report.errors)


def test_implicit_parameter_must_come_from_the_library():
    program = parse("param q implicit; fn main() { }")

    assert not validate(program, load_db()).ok
    # the bundled database declares p
    assert validate(parse("param p implicit; fn main() { }"), load_db()).ok


def test_extern_without_database_is_an_error():
    program = parse('fn main() { extern("MPI_Barrier"); }')

    assert not validate(program).ok
    assert validate(program, load_db()).ok


def test_recursion_is_a_warning():
    """
    Flow tested:
    1) a -> b -> a is a cycle reachable from main.
    2) The cycle is reported once, starting at its smallest name.
    3) The program is still valid (recursion only weakens the analysis).
    """
    program = parse("""
        fn a(x) { b(x); }
        fn b(x) { a(x); }
        fn lonely() { lonely(); }
        fn main() { a(1); }
    """)
    report = validate(program)

    assert report.ok
    assert report.recursion_cycles == [["a", "b"]]
    assert "recursion: a -> b -> a" in report.warnings
    assert set(call_graph(program).successors("main")) == {"a"}
    # unreachable self-recursion is not reported
    assert recursion_cycles(program) == [["a", "b"]]


def test_call_in_while_condition_warns():
    program = parse("""
        fn more(i) { return i < 3; }
        fn main() { let i = 0; while (more(i)) { i = i + 1; } }
    """)
    report = validate(program)

    assert report.ok
    assert any("call in loop condition" in w for w in report.warnings)


@pytest.mark.parametrize(
    "loop, trips",
    [
        ("for i in 0..10 { }", 10),
        ("for i in 0..10 step 3 { }", 4),
        ("for i in 5..2 { }", 0),
        ("for i in 0..n { }", None),
        ("for i in 0..10 { i = i + 1; }", None),
        ("let k = 0; while (k < 3) { k = k + 1; }", None),
    ],
)
def test_constant_trip_count(loop, trips):
    program = parse("param n; fn main() { " + loop + " }")
    node = program.loops()[0]

    assert constant_trip_count(node) == trips
    report = validate(program)
    if trips is None:
        assert node.node_id in report.dynamic_loops
    else:
        assert report.constant_loops[node.node_id] == trips


def test_missing_entry_function_is_a_validation_error():
    """
    Flow tested:
    1) A program without main parses.
    2) Validation reports the missing entry and raises.
    3) The recursion scan starts at the entry, so it finds nothing to report.
    """
    program = parse("fn f() { f(); }")
    report = validate(program)

    assert any("no entry function 'main'" in e for e in report.errors), report.errors
    assert report.recursion_cycles == []
    with pytest.raises(ValidationError):
        report.raise_for_errors()
