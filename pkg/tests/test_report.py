import xml.etree.ElementTree as ET

import pytest

from lavt import report as rp
from lavt.harness import CONDITIONS, AggregateRow, run_matrix


@pytest.fixture(scope="module")
def tiny():
    return run_matrix([CONDITIONS["L0"], CONDITIONS["L5"]], ("A_key",), reps=1)


def test_fmt():
    assert rp._fmt(None) == "NA"
    assert rp._fmt(float("nan")) == "NA"
    assert rp._fmt(True) == "1"
    assert rp._fmt(0.1) == "0.1"
    assert rp._fmt(3) == "3"


def test_aggregate_roundtrip(tmp_path):
    rows = [AggregateRow("L0", 100.0, 0.0, 0.2, 0.05), AggregateRow("L5", 0.0, 1.0, 0.0, None)]
    path = rp.write_aggregate(rows, tmp_path / "agg.csv")
    assert path.read_text().splitlines()[0] == "cond,comp_pct,coll,laneinv,p95_x"
    assert path.read_text().splitlines()[2].endswith(",NA")
    assert rp.read_aggregate(path) == rows


def test_runs_roundtrip(tmp_path, tiny):
    path = rp.write_runs(tiny.summaries, tmp_path / "runs.csv")
    back = rp.read_runs(path)
    assert [repr(s) for s in back] == [repr(s) for s in tiny.summaries]


def test_emit_report(tmp_path, tiny):
    files = rp.emit_report(tiny.results, tmp_path)
    assert set(files) == {"aggregate", "runs", "latency", "degradation", "trajectories_A_key"}
    for name in ("degradation", "trajectories_A_key"):
        ET.parse(files[name])  # well-formed
    svg = files["trajectories_A_key"].read_text()
    assert ('class="abort"' in svg) == any(s.aborted_departure for s in tiny.summaries)
    rows = rp.read_aggregate(files["aggregate"])
    assert [r.condition for r in rows] == ["L0", "L5"]
    with pytest.raises(ValueError):
        rp.emit_report([], tmp_path)


def test_report_from_dir_reproduces_aggregate(tmp_path, tiny):
    files = rp.emit_report(tiny.results, tmp_path)
    before = files["aggregate"].read_bytes()
    files["aggregate"].unlink()
    rp.report_from_dir(tmp_path)
    assert (tmp_path / "aggregate.csv").read_bytes() == before


def test_degradation_svg_handles_no_completions():
    svg = rp.degradation_svg([AggregateRow("L5", 0.0, 1.0, 0.0, None)])
    ET.fromstring(svg)
