"""
Testing the library database
- the bundled MPI-like entries
- loading errors (missing, malformed, inconsistent files)
- apply_extern: source writes, dependency atoms, hints
"""

import json

import pytest

from taintmodel.errors import ExternError, LibraryDBError
from taintmodel.libdb import DEFAULT_DB_PATH, apply_extern, load_db


def test_bundled_database():
    db = load_db()

    assert db.implicit_params == ("p",)
    assert db.get("MPI_Comm_size").source_writes[0].label == "p"
    assert db.get("MPI_Allreduce").loop_semantics == "log(p)"
    assert db.is_relevant("MPI_Send")
    assert db.is_relevant("MPI_Comm_size")
    # constant writes and plain routines do not introduce parameters
    assert not db.is_relevant("MPI_Comm_rank")
    assert not db.is_relevant("MPI_Wtime")
    assert not db.is_relevant("NoSuchRoutine")
    assert load_db(DEFAULT_DB_PATH) == db


def test_source_write_uses_configured_value():
    db = load_db()
    outcome = apply_extern(db.get("MPI_Comm_size"), [0], [frozenset()], {"p": 16})

    assert outcome.writes == ((1, 16, frozenset({"p"})),)
    assert outcome.atoms == frozenset()


def test_dependency_template_collects_fixed_and_argument_labels():
    """
    Flow tested:
    1) MPI_Send depends on p and on the labels of its count argument (slot 2).
    2) The buffer's labels (slot 1) are not part of the dependency.
    3) The return value carries the union of all argument labels.
    """
    db = load_db()
    outcome = apply_extern(
        db.get("MPI_Send"), [8, 8], [frozenset({"size"}), frozenset({"nx"})], {"p": 4}
    )

    assert outcome.atoms == frozenset({"p", "nx"})
    assert outcome.labels == frozenset({"size", "nx"})
    assert outcome.writes == ()
    assert outcome.hint is None


def test_hint_is_passed_through():
    db = load_db()
    outcome = apply_extern(db.get("MPI_Barrier"), [], [], {"p": 4})

    assert outcome.atoms == frozenset({"p"})
    assert outcome.hint == "log(p)"


def test_constant_write_is_untainted():
    db = load_db()
    outcome = apply_extern(db.get("MPI_Comm_rank"), [7], [frozenset({"p"})], {})

    assert outcome.writes == ((1, 0, frozenset()),)


def test_apply_extern_errors():
    db = load_db()
    with pytest.raises(ExternError):
        apply_extern(db.get("MPI_Send"), [1], [frozenset()], {"p": 4})
    with pytest.raises(ExternError):
        apply_extern(db.get("MPI_Comm_size"), [0], [frozenset()], {})


def write_db(tmp_path, doc):
    path = tmp_path / "libdb.json"
    path.write_text(json.dumps(doc) if not isinstance(doc, str) else doc, encoding="utf-8")
    return path


def test_empty_file_is_an_empty_database(tmp_path):
    db = load_db(write_db(tmp_path, "   \n"))

    assert db.entries == {}
    assert db.implicit_params == ()


@pytest.mark.parametrize(
    "doc",
    [
        "{not json",
        {"schema_version": 99, "entries": []},
        {"entries": [{"name": "X", "arity": 1, "source_writes": [{"arg": 2, "label": "p"}]}],
         "implicit_params": ["p"]},
        {"entries": [{"name": "X", "dep_template": [{"param": "p", "arg": 1}], "arity": 1}]},
        {"entries": [{"name": "X"}, {"name": "X"}]},
        {"entries": [{"name": "X", "implicit_params": ["q"]}], "implicit_params": ["p"]},
        {"entries": [], "implicit_params": ["p", "p"]},
    ],
)
def test_malformed_databases(tmp_path, doc):
    with pytest.raises(LibraryDBError):
        load_db(write_db(tmp_path, doc))


def test_missing_file(tmp_path):
    with pytest.raises(LibraryDBError):
        load_db(tmp_path / "nope.json")
