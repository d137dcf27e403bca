import json
import subprocess
import sys

import pytest

from convdyn.cli import RunConfig, main
from convdyn.events import events_from_csv
from convdyn.fixtures import badge_streams, make_groups
from convdyn.segment import TurnSegment, badge_to_csv

RATES2 = "event_id,rate\n0,0.5\n1,0.5\n2,1\n3,1\n5,0.3\n6,0.3\n8,0.2\n9,0.2\n10,0.1\n11,0.1\n12,1\n13,1\n"


def run(*argv):
    return main([str(a) for a in argv])


def tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "two.json").write_text(json.dumps({"speakers": 2}))
    (d / "rates2.csv").write_text(RATES2)
    assert run("--out", d / "sim", "--config", d / "two.json", "simulate", "--rates", d / "rates2.csv",
               "--minutes", 2) == 0
    turns = [TurnSegment(k % 3, 4.0 * k, 4.0 * k + 2.5, "turn") for k in range(20)]
    for b, s in enumerate(badge_streams(turns, 85.0, speakers=3, seed=2, offsets=[0, 0.3, -0.2])):
        (d / f"badge{b}.csv").write_text(badge_to_csv(s))
    make_groups(d / "groups", n_groups=4, minutes=1, seed=1, percentiles=(50, 75))
    return d


def commands(d):
    two = ("--config", d / "two.json")
    return {
        "simulate": [*two, "simulate", "--rates", d / "rates2.csv", "--minutes", 1],
        "infer": ["infer", d / "sim" / "observations.csv", "--sweeps", 12, "--burn-in", 4, "--chains", 2],
        "segment": ["segment", d / "badge0.csv", d / "badge1.csv", d / "badge2.csv"],
        "extract": [*two, "extract", "--trajectory", d / "sim" / "trajectory.csv", "--group", "g1"],
        "survival": ["survival", "--groups", d / "groups"],
        "table1": ["table1", "--percentile", 50, "--replicates", 3, "--minutes", 1],
        "tasksim": ["tasksim", "--games", 25, "--quality", 0.5],
        "report": ["report", d / "groups"],
    }


@pytest.mark.parametrize("name", ["simulate", "infer", "segment", "extract", "survival", "table1",
                                  "tasksim", "report"])
def test_reruns_are_byte_identical(work, name):
    argv = commands(work)[name]
    a, b = work / f"{name}_a", work / f"{name}_b"
    assert run("--seed", 5, "--out", a, *argv) == 0
    assert run("--seed", 5, "--out", b, *argv) == 0
    ta, tb = tree(a), tree(b)
    assert ta == tb and "manifest.json" in ta
    manifest = json.loads(ta["manifest.json"])
    assert manifest["command"] == name and manifest["seed"] == 5
    assert set(manifest["outputs"]) == set(ta) - {"manifest.json"}
    assert set(manifest) == {"command", "version", "seed", "config", "config_hash", "inputs", "outputs"}


def test_seed_changes_outputs(work):
    argv = commands(work)["simulate"]
    run("--seed", 1, "--out", work / "s1", *argv)
    run("--seed", 2, "--out", work / "s2", *argv)
    assert (work / "s1" / "trajectory.csv").read_bytes() != (work / "s2" / "trajectory.csv").read_bytes()


def test_infer_with_two_chains_reports_psrf(work):
    run("--out", work / "inf", *commands(work)["infer"])
    header = (work / "inf" / "rates.csv").read_text().splitlines()[0]
    assert header.endswith(",psrf")
    assert "psrf" in json.loads((work / "inf" / "chain.json").read_text())


def test_extract_from_turns(work):
    (work / "turns.csv").write_text("speaker,start_s,end_s,kind\n0,0.0,3.0,turn\n1,3.5,6.0,turn\n")
    assert run("--out", work / "ex", "extract", "--turns", work / "turns.csv") == 0
    ev = events_from_csv((work / "ex" / "events.csv").read_text())
    assert [e.kind for e in ev] == ["take", "transfer", "yield"]


def test_report_contents(work):
    run("--out", work / "rep", "report", work / "groups")
    rep = json.loads((work / "rep" / "report.json").read_text())
    assert rep["groups"] == 4 and set(rep["table1"]) == {"25", "50", "75"}
    assert "baseline" in rep["survival"]
    assert (work / "rep" / "report.txt").read_text().startswith("percentile".rjust(10))


def test_usage_errors_exit_one(work, capsys):
    assert run("--out", work / "x", "simulate", "--bogus") == 1
    assert run("--out", work / "x", "frobnicate") == 1
    (work / "badcfg.json").write_text('{"sweeps": 5, "colour": "red"}')
    assert run("--config", work / "badcfg.json", "--out", work / "x", "tasksim", "--games", 2) == 1
    assert "colour" in capsys.readouterr().err
    assert run("--out", work / "x", "extract") == 1
    assert run("--dt", 0, "--out", work / "x", "tasksim", "--games", 2) == 1


def test_data_errors_exit_two_with_line_numbers(work, capsys):
    text = (work / "sim" / "observations.csv").read_text().splitlines()
    text[4] = text[4].replace(",", ";", 1)
    (work / "broken.csv").write_text("\n".join(text) + "\n")
    assert run("--out", work / "x", "infer", work / "broken.csv") == 2
    assert "broken.csv:5:" in capsys.readouterr().err
    assert run("--out", work / "x", "infer", work / "missing.csv") == 2
    (work / "empty").mkdir()
    assert run("--out", work / "x", "report", work / "empty") == 2
    assert "no group directories" in capsys.readouterr().err


def test_numerical_failure_exits_three(work):
    lines = (work / "sim" / "observations.csv").read_text().splitlines()
    f = lines[5].split(",")
    f[2] = "1e200"
    lines[5] = ",".join(f)
    (work / "absurd.csv").write_text("\n".join(lines) + "\n")
    assert run("--out", work / "x", "infer", work / "absurd.csv", "--sweeps", 3, "--burn-in", 1) == 3


def test_config_file_overrides(tmp_path):
    (tmp_path / "c.json").write_text('{"games": 7, "quality": 0.25}')
    cfg = RunConfig.load(tmp_path / "c.json")
    assert cfg.games == 7 and cfg.quality == 0.25 and cfg.sweeps == RunConfig().sweeps
    assert run("--config", tmp_path / "c.json", "--out", tmp_path / "o", "tasksim") == 0
    doc = json.loads((tmp_path / "o" / "games.json").read_text())
    assert doc["quality"] == 0.25
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["config"]["games"] == 7


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "convdyn.cli", "--out", str(tmp_path), "tasksim",
                           "--games", "3"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "games.json").is_file()
