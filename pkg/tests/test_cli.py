import csv
import json

import pytest

from osibench.cli import run, stale_inputs
from pipeline import run_pipeline


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_pipeline_outputs(workdir):
    run_pipeline(threads=2)
    report = json.loads((workdir / "report.json").read_text())
    assert {"eer", "frr_at_far", "far_at_frr"} <= report.keys()
    header = (workdir / "norm.tsv").read_text().splitlines()[0]
    assert header.endswith("transformed_score")
    manifest = json.loads((workdir / "scores.tsv.manifest.json").read_text())
    assert set(manifest["inputs"]) == {"store.osie", "plan.json", "trials.tsv"}
    assert "threads" not in manifest["config"]
    assert stale_inputs(workdir / "scores.tsv.manifest.json") == []


def test_rerun_byte_identical(tmp_path, monkeypatch):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        monkeypatch.chdir(d)
        run_pipeline(threads=1)
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1]


def test_write_once_and_force(workdir):
    args = ["simulate", "--speakers", "4", "--recs", "2", "--dim", "4", "--out", "s.osie"]
    assert run(args) == 0
    assert run(args) == 1
    assert run(args + ["--force", "--seed", "3"]) == 0


def test_stale_detection(workdir):
    run(["simulate", "--speakers", "6", "--recs", "2", "--dim", "4", "--out", "s.osie"])
    run(["build-watchlists", "--store", "s.osie", "--size", "3", "--out", "p.json"])
    run(["simulate", "--speakers", "6", "--recs", "2", "--dim", "4", "--seed", "1", "--force", "--out", "s.osie"])
    assert stale_inputs("p.json.manifest.json") == ["s.osie"]


def test_sweep_far_column_non_decreasing(workdir):
    assert run(["sweep", "--speakers", "150", "--recs", "3", "--dim", "128", "--sizes", "5,50",
                "--seed", "1", "--out", "sweep.csv"]) == 0
    rows = list(csv.DictReader(open("sweep.csv")))
    far = [float(r["far_at_frr_0.05"]) for r in rows]
    assert far == sorted(far)


def test_calibrate_and_fuse(workdir):
    run_pipeline(threads=1)
    assert run(["calibrate-train", "--scores", "scores.tsv", "--store", "store.osie", "--plan", "plan.json",
                "--cohort", "cohort.osie", "--l2", "0.01", "--out", "w.json"]) == 0
    w = json.loads((workdir / "w.json").read_text())
    assert set(w) == {"w0", "w", "b", "measure_names", "l2", "seed", "iterations"}
    assert run(["calibrate-apply", "--weights", "w.json", "--scores", "scores.tsv", "--store", "store.osie",
                "--plan", "plan.json", "--cohort", "cohort.osie", "--out", "cal.tsv"]) == 0
    assert run(["fuse", "--scores", "scores.tsv", "scores.tsv", "--out", "fused.tsv"]) == 0
    assert (workdir / "fused.tsv").read_bytes() == (workdir / "scores.tsv").read_bytes()
    assert run(["fuse", "--stores", "store.osie", "store.osie", "--plan", "plan.json", "--trials", "trials.tsv",
                "--out", "fused2.tsv"]) == 0
    assert (workdir / "fused2.tsv").read_bytes() == (workdir / "scores.tsv").read_bytes()


def test_ingest_jsonl(workdir):
    (workdir / "e.jsonl").write_text('{"speaker":"a","recording":"a1","vector":[3,4]}\n')
    assert run(["ingest", "--input", "e.jsonl", "--out", "e.osie"]) == 0
    (workdir / "bad.jsonl").write_text('{"speaker":"a","recording":"a1","vector":[0,0]}\n')
    assert run(["ingest", "--input", "bad.jsonl", "--out", "bad.osie"]) == 1


def test_usage_errors(workdir, capsys):
    assert run(["nope"]) == 1
    assert run(["eval"]) == 1
    assert run(["eval", "--scores", "missing.tsv", "--report", "r.json"]) == 1
    assert run(["build-watchlists", "--store", "x", "--out", "p.json", "--threads", "0"]) == 1
    assert "error" in capsys.readouterr().err
