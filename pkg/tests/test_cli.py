"""
Testing the command line
- the whole pipeline, stage by stage, through files
- exit codes: 0 success, 1 error, 2 success with warnings
"""

import json

import pytest

from taintmodel.cli import EXIT_ERROR, EXIT_OK, EXIT_WARNINGS, main, parse_assignments, parse_value_lists
from taintmodel.errors import TaintModelError
from taintmodel.harness import load_groundtruth


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("LIBDB", "MAX_TRIPS", "COV_THRESHOLD", "TERMS", "LOG_LEVEL"):
        monkeypatch.delenv("TAINTMODEL_" + name, raising=False)


def test_full_pipeline(tmp_path, capsys):
    """
    Flow tested:
    1) synth corpus writes app.ptl and groundtruth.json.
    2) run -> analyze -> design -> synth measurements -> model -> validate -> classify,
       each stage reading the previous stage's file.
    3) The classification matches the classes the corpus was built with.
    """
    corpus = tmp_path / "corpus"
    app, truth = corpus / "app.ptl", corpus / "groundtruth.json"
    taint, deps, plan = tmp_path / "taint.json", tmp_path / "deps.json", tmp_path / "design.json"
    csv, models, validity = tmp_path / "m.csv", tmp_path / "models.json", tmp_path / "validity.json"
    classes, filter_file = tmp_path / "classes.json", tmp_path / "filter.json"

    assert main(["synth", "corpus", "--seed", "3", "--functions", "10", "--out-dir", str(corpus)]) == EXIT_OK
    assert main(["run", str(app), "--param", "size=4", "--param", "p=4", "--out", str(taint)]) == EXIT_OK
    assert main(["analyze", str(taint), str(app), "--out", str(deps)]) == EXIT_OK
    assert main([
        "design", "--values", "size=2,4,8,16,32", "--values", "p=2,4,8,16,32",
        "--deps", str(deps), "--repetitions", "3", "--out", str(plan),
    ]) == EXIT_OK
    assert main(["synth", "measurements", str(truth), str(plan), "--sigma", "0", "--out", str(csv)]) == EXIT_OK
    assert main(["model", str(csv), "--deps", str(deps), "--mode", "both", "--out", str(models)]) == EXIT_OK
    assert main(["validate", str(models), str(deps), str(csv), "--out", str(validity)]) == EXIT_OK
    assert main(["classify", str(app), str(deps), "--out", str(classes), "--filter-out", str(filter_file)]) == EXIT_OK

    out = capsys.readouterr().out
    assert "wrote" in out
    assert "0 of 10 series flagged" in out

    gt = load_groundtruth(truth)
    found = json.loads(classes.read_text(encoding="utf-8"))["classes"]
    for fn in gt.functions:
        assert found[fn.name] == fn.cls
    included = json.loads(filter_file.read_text(encoding="utf-8"))["include"]
    assert included == sorted(f.name for f in gt.functions if f.cls in ("kernel", "comm_routine"))

    fitted = json.loads(models.read_text(encoding="utf-8"))
    assert fitted["mode"] == "both"
    assert len(fitted["series"]) == 10


def test_run_with_runtime_recursion_warns(tmp_path, capsys):
    program = tmp_path / "rec.ptl"
    program.write_text("param n;\nfn down(k) { if (k > 0) { down(k - 1); } }\nfn main() { down(n); }\n")

    code = main(["run", str(program), "--param", "n=3", "--out", str(tmp_path / "t.json")])

    assert code == EXIT_WARNINGS
    assert "warning: recursion at runtime" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["frobnicate"],
        ["run"],
        ["run", "missing.ptl"],
        ["design", "--values", "p"],
        ["validate", "a.json", "b.json", "c.csv"],
    ],
)
def test_errors_exit_with_one(argv, capsys):
    assert main(argv) == EXIT_ERROR
    assert capsys.readouterr().err.startswith("error:")


def test_bad_program_and_bad_parameter(tmp_path):
    broken = tmp_path / "broken.ptl"
    broken.write_text("fn main() { let = 1; }")
    good = tmp_path / "good.ptl"
    good.write_text("param n; fn main() { for i in 0..n { } }")

    assert main(["run", str(broken)]) == EXIT_ERROR
    assert main(["run", str(good), "--param", "n"]) == EXIT_ERROR
    assert main(["run", str(good)]) == EXIT_ERROR  # n has no value
    assert main(["run", str(good), "--param", "n=2", "--out", str(tmp_path / "t.json")]) == EXIT_OK


def test_settings_come_from_the_environment(tmp_path, monkeypatch, capsys):
    """
    Flow tested:
    1) TAINTMODEL_MAX_TRIPS lowers the loop guard, so a long loop fails.
    2) --max-trips on the command line wins over the environment.
    3) An invalid setting is an error, not a crash.
    """
    program = tmp_path / "long.ptl"
    program.write_text("param n; fn main() { for i in 0..n { } }")
    out = str(tmp_path / "t.json")

    monkeypatch.setenv("TAINTMODEL_MAX_TRIPS", "10")
    assert main(["run", str(program), "--param", "n=50", "--out", out]) == EXIT_ERROR
    assert "exceeded 10 iterations" in capsys.readouterr().err
    assert main(["run", str(program), "--param", "n=50", "--max-trips", "100", "--out", out]) == EXIT_OK

    monkeypatch.setenv("TAINTMODEL_LOG_LEVEL", "chatty")
    assert main(["run", str(program), "--param", "n=5", "--out", out]) == EXIT_ERROR


def test_blackbox_model_without_deps(tmp_path, capsys):
    csv = tmp_path / "m.csv"
    rows = ["function,callpath,x,rep,value"] + [f"kernel,,{x},0,{3 + 2 * x}" for x in (1, 2, 3, 4, 5)]
    csv.write_text("\n".join(rows) + "\n")

    assert main(["model", str(csv), "--mode", "blackbox", "--out", str(tmp_path / "models.json")]) == EXIT_OK
    assert "kernel [blackbox]: 3 + 2 * x" in capsys.readouterr().out
    assert main(["model", str(csv), "--out", str(tmp_path / "models.json")]) == EXIT_ERROR


def test_assignment_parsing():
    assert parse_assignments(["size=5", "p=8", "h=0.5"]) == {"size": 5, "p": 8, "h": 0.5}
    assert parse_value_lists(["p=4,8,16"]) == {"p": [4, 8, 16]}
    with pytest.raises(TaintModelError):
        parse_assignments(["size=big"])
    with pytest.raises(TaintModelError):
        parse_value_lists(["=1,2"])


def run_pipeline(workdir, seed):
    """Every stage with one seed; returns the bytes of every file written."""
    corpus = workdir / "corpus"
    app, truth = corpus / "app.ptl", corpus / "groundtruth.json"
    files = {name: workdir / name for name in (
        "taint.json", "deps.json", "design.json", "m.csv", "models.json", "validity.json", "classes.json", "filter.json",
    )}
    ok = (EXIT_OK, EXIT_WARNINGS)

    assert main(["synth", "corpus", "--seed", str(seed), "--out-dir", str(corpus)]) == EXIT_OK
    assert main(["run", str(app), "--param", "size=4", "--param", "p=4", "--out", str(files["taint.json"])]) in ok
    assert main(["analyze", str(files["taint.json"]), str(app), "--out", str(files["deps.json"])]) in ok
    assert main([
        "design", "--values", "size=2,4,8,16,32", "--values", "p=2,4,8,16,32",
        "--deps", str(files["deps.json"]), "--out", str(files["design.json"]),
    ]) == EXIT_OK
    assert main([
        "synth", "measurements", str(truth), str(files["design.json"]),
        "--seed", str(seed), "--sigma", "0.02", "--out", str(files["m.csv"]),
    ]) == EXIT_OK
    assert main([
        "model", str(files["m.csv"]), "--deps", str(files["deps.json"]), "--mode", "both",
        "--out", str(files["models.json"]),
    ]) in ok
    assert main([
        "validate", str(files["models.json"]), str(files["deps.json"]), str(files["m.csv"]),
        "--out", str(files["validity.json"]),
    ]) in ok
    assert main([
        "classify", str(app), str(files["deps.json"]),
        "--out", str(files["classes.json"]), "--filter-out", str(files["filter.json"]),
    ]) == EXIT_OK

    written = {name: path.read_bytes() for name, path in files.items()}
    written["app.ptl"] = app.read_bytes()
    written["groundtruth.json"] = truth.read_bytes()
    return written


def test_pipeline_output_is_byte_identical_per_seed(tmp_path):
    """
    Flow tested:
    1) The whole pipeline runs twice with seed 7, in two directories.
    2) Every file from the corpus to the classification matches byte for byte.
    """
    first = run_pipeline(tmp_path / "first", 7)
    second = run_pipeline(tmp_path / "second", 7)

    assert first.keys() == second.keys()
    for name in first:
        assert first[name] == second[name], name


def test_constant_functions_get_constant_models(tmp_path):
    """
    Flow tested:
    1) Corpus seed 7 has 20 functions, 6 of them constant.
    2) Guided modeling gives each constant function a constant model without a search.
    """
    run_pipeline(tmp_path, 7)
    gt = load_groundtruth(tmp_path / "corpus" / "groundtruth.json")
    fitted = json.loads((tmp_path / "models.json").read_text(encoding="utf-8"))
    guided = {s["function"]: s["guided"] for s in fitted["series"]}

    constant = [fn.name for fn in gt.functions if fn.cls.endswith("pruned")]
    assert len(constant) == 6
    for name in constant:
        assert guided[name] is not None, name
        assert guided[name]["terms"] == [], name
        assert guided[name]["pruned"], name


def test_no_implicit_flows_drops_branch_condition_labels(tmp_path):
    """
    Flow tested:
    1) n > 100 is false at n=4, so `flag = 1` never runs.
    2) By default flag picks up n and so does the loop it bounds.
    3) With --no-implicit-flows the loop carries no labels.
    """
    program = tmp_path / "implicit.ptl"
    program.write_text(
        "param n;\n"
        "fn main() {\n"
        "    let flag = 0;\n"
        "    if (n > 100) { flag = 1; }\n"
        "    let k = 0;\n"
        "    while (k < flag) { k = k + 1; }\n"
        "}\n"
    )
    on, off = tmp_path / "on.json", tmp_path / "off.json"

    assert main(["run", str(program), "--param", "n=4", "--out", str(on)]) == EXIT_OK
    assert main(["run", str(program), "--param", "n=4", "--no-implicit-flows", "--out", str(off)]) == EXIT_OK

    def loop_labels(path):
        doc = json.loads(path.read_text(encoding="utf-8"))
        return doc["implicit_flows"], [e["labels"] for e in doc["sink_events"] if e["kind"] == "loop_exit"]

    assert loop_labels(on) == (True, [["n"]])
    assert loop_labels(off) == (False, [[]])


def test_run_names_loops_in_branches_that_never_ran(tmp_path, capsys):
    program = tmp_path / "guarded.ptl"
    program.write_text("param n;\nparam m;\nfn main() {\n    if (n > 100) { for i in 0..m { } }\n}\n")
    taint = tmp_path / "t.json"

    assert main(["run", str(program), "--param", "n=4", "--param", "m=5", "--out", str(taint)]) == EXIT_OK

    line = next(l for l in capsys.readouterr().out.splitlines() if l.startswith("unvisited:"))
    assert "(then) depends on n; skipped loop(s)" in line
    [note] = json.loads(taint.read_text(encoding="utf-8"))["unvisited_tainted_branches"]
    assert len(note["skipped_loops"]) == 1
