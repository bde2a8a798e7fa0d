import json
import subprocess
import sys

import pytest

from partlin.cli import run_cli

TRI = {"n": 2, "diag": ["-0.5", "-2"],
       "q": {"l": 1, "b": [{"row": 1, "poly": [{"coef": "0.7", "powers": [0]}]}]}}


@pytest.fixture
def system(tmp_path):
    def write(d, name="sys.json"):
        p = tmp_path / name
        p.write_text(json.dumps(d))
        return str(p)
    return write


def test_spectrum_writes_report(system, tmp_path):
    out = tmp_path / "o"
    assert run_cli(["spectrum", "--input", system({"n": 2, "diag": ["-1", "1"]}), "--out", str(out)]) == 0
    d = json.loads((out / "spectrum.json").read_text())
    assert [(i["lo"], i["hi"]) for i in d["intervals"]] == [(1.0, 1.0), (-1.0, -1.0)]


def test_reports_are_byte_identical(system, tmp_path):
    src = system({"n": 2, "diag": ["-2+sin(t)", "0.5"]})
    for name in ("a", "b"):
        assert run_cli(["spectrum", "--input", src, "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "spectrum.json").read_bytes() == (tmp_path / "b" / "spectrum.json").read_bytes()


def test_gaps_pass_and_fail(system, tmp_path):
    good = system({"n": 2, "diag": ["-0.5", "-2"]}, "good.json")
    assert run_cli(["gaps", "--input", good, "--condition", "3", "--out", str(tmp_path / "g")]) == 0
    bad = system({"n": 2, "diag": ["0.5", "-0.3"]}, "bad.json")
    assert run_cli(["gaps", "--input", bad, "--condition", "1", "--out", str(tmp_path / "b")]) == 1
    d = json.loads((tmp_path / "b" / "gaps.json").read_text())
    assert not d["overall"]
    assert any(c["name"].startswith("b:") and not c["satisfied"] for c in d["clauses"])


def test_gaps_ordering_failure_still_writes(system, tmp_path):
    # equal rates merge into one interval, so two intervals cannot be ordered
    src = system({"n": 2, "diag": ["-1", "-1"]})
    assert run_cli(["gaps", "--input", src, "--out", str(tmp_path)]) == 1
    assert "error" in json.loads((tmp_path / "gaps.json").read_text())


def test_conjugate_and_verify(system, tmp_path):
    src = system(TRI)
    assert run_cli(["conjugate", "--input", src, "--k", "2", "--out", str(tmp_path)]) == 0
    chain = json.loads((tmp_path / "chain.json").read_text())
    assert chain["stages"][0]["kind"] == "prop1"
    assert (tmp_path / "h_stage0.csv").exists()
    assert run_cli(["verify", "--input", src, "--k", "2", "--samples", "4", "--out", str(tmp_path)]) == 0
    v = json.loads((tmp_path / "verify.json").read_text())
    assert v["pass"] and v["residual"]["max_residual"] < 1e-6


def test_verify_fails_on_tight_tolerance(system, tmp_path):
    src = system(TRI)
    code = run_cli(["verify", "--input", src, "--k", "2", "--samples", "2", "--residual-tol", "1e-30",
                    "--out", str(tmp_path)])
    assert code == 1
    assert not json.loads((tmp_path / "verify.json").read_text())["pass"]


def test_input_errors(system, tmp_path):
    assert run_cli(["spectrum", "--input", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run_cli(["spectrum", "--input", str(bad)]) == 2
    assert run_cli(["spectrum", "--input", system({"n": 2, "diag": ["-1+"]})]) == 2
    assert run_cli(["spectrum"]) == 2
    assert run_cli(["nonsense"]) == 2


def test_help_exits_zero(capsys):
    assert run_cli(["--help"]) == 0
    assert "spectrum" in capsys.readouterr().out


def test_module_entry_point(system, tmp_path):
    src = system({"n": 2, "diag": ["-1", "1"]})
    r = subprocess.run([sys.executable, "-m", "partlin.cli", "spectrum", "--input", src, "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "spectrum.json").exists()
