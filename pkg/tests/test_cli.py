import csv
import io
import json

import pytest

from fieldbench.cli import main
from fieldbench.config import BenchmarkConfig
from fieldbench.telemetry import EventLog
from fieldbench.workload import expected_record_count, run_benchmark

SMALL = ["--object-size", "4KiB", "--ios", "3"]


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_minimal_run_writes_expected_log(tmp_path, capsys):
    code, out, _ = run(["run", "--out", str(tmp_path), *SMALL], capsys)
    assert code == 0
    logs = list(tmp_path.glob("*.log"))
    assert [p.name for p in logs] == ["a_fieldio_full_s1_c1_p1_rep00.log"]
    log = EventLog.load(logs[0])
    config = BenchmarkConfig.from_dict({k: v for k, v in log.config.items() if k != "repetition"})
    assert len(log) == expected_record_count(config)
    assert out.count("\n") == 1 and "records" in out


def test_sweep_from_config_file(tmp_path, capsys):
    doc = tmp_path / "sweep.yaml"
    doc.write_text("servers: [1, 2, 4, 8]\nrepetitions: 10\nbackend: sim\nobject_size: 4KiB\nios: 2\n")
    code, out, _ = run(["run", "--config", str(doc), "--out", str(tmp_path / "o")], capsys)
    assert code == 0
    assert len(list((tmp_path / "o").glob("*.log"))) == 40
    assert len(out.splitlines()) == 40


def test_flags_override_config_file(tmp_path, capsys):
    doc = tmp_path / "c.yaml"
    doc.write_text("mode: full\nservers: 2\n")
    run(["run", "--config", str(doc), "--mode", "noindex", "--out", str(tmp_path), *SMALL], capsys)
    assert [p.name for p in tmp_path.glob("*.log")] == ["a_fieldio_noindex_s2_c1_p1_rep00.log"]


def test_invalid_object_class_is_a_config_error(tmp_path, capsys):
    code, _, err = run(["run", "--array-class", "OC_Q9", "--out", str(tmp_path)], capsys)
    assert code == 2
    assert "array_class" in err


def test_run_failure_exit_code(tmp_path, capsys, monkeypatch):
    from fieldbench.backend import MemoryBackend

    def broken(self, arr, offset, data):
        raise OSError("no space")

    monkeypatch.setattr(MemoryBackend, "array_write", broken)
    code, _, err = run(["run", "--out", str(tmp_path), *SMALL], capsys)
    assert code == 3
    assert "node=0 process=0 iteration=0" in err
    log = EventLog.load(tmp_path / "a_fieldio_full_s1_c1_p1_rep00.log")
    assert log.failure


def test_cli_output_parses_back_equal_to_in_memory_log(tmp_path, capsys):
    argv = ["run", "--backend", "sim", "--pattern", "b", "--procs-per-client", "4", "--out", str(tmp_path), *SMALL]
    assert run(argv, capsys)[0] == 0
    [path] = tmp_path.glob("*.log")
    config = BenchmarkConfig.from_dict({"backend": "sim", "pattern": "b", "procs_per_client": 4,
                                        "object_size": "4KiB", "ios": 3})
    assert EventLog.load(path) == run_benchmark(config)


def test_analyze_writes_reports_aggregate_and_figures(tmp_path, capsys):
    runs = tmp_path / "runs"
    run(["run", "--backend", "sim", "--repetitions", "3", "--out", str(runs), *SMALL], capsys)
    run(["run", "--backend", "sim", "--driver", "ior", "--out", str(runs), *SMALL], capsys)
    out_dir = tmp_path / "report"
    code, out, _ = run(["analyze", str(runs), "--out", str(out_dir)], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    gtb = [r for r in rows if r["metric"] == "global_timing_bandwidth" and r["driver"] == "fieldio"]
    assert {r["count"] for r in gtb} == {"3"}
    assert any(r["metric"] == "synchronous_bandwidth" and r["driver"] == "ior" for r in rows)
    assert (out_dir / "aggregate.csv").read_text() == out
    assert (out_dir / "bandwidth.png").stat().st_size > 0
    assert len(list(out_dir.glob("*.timeline.png"))) == 4
    report = json.loads((out_dir / "a_ior_segments_s1_c1_p1_rep00.metrics.json").read_text())
    assert report["phases"]["write"]["synchronous_bandwidth"] > 0


def test_analyze_reports_parse_error_line(tmp_path, capsys):
    run(["run", "--out", str(tmp_path), *SMALL], capsys)
    [path] = tmp_path.glob("*.log")
    lines = path.read_text().splitlines()
    lines[6] = "write,0,0,zero,IoStart,5,0"
    path.write_text("\n".join(lines) + "\n")
    code, _, err = run(["analyze", str(path), "--no-plots"], capsys)
    assert code == 4
    assert f"{path}:7" in err


def test_census_from_snapshots_and_replay(tmp_path, capsys):
    run(["run", "--mode", "noindex", "--procs-per-client", "4", "--out", str(tmp_path), *SMALL], capsys)
    run(["run", "--mode", "full", "--procs-per-client", "4", "--out", str(tmp_path), *SMALL], capsys)
    run(["run", "--pattern", "b", "--procs-per-client", "4", "--out", str(tmp_path), *SMALL], capsys)
    for snapshot in tmp_path.glob("*.census.json"):
        if snapshot.name.startswith("b_"):
            snapshot.unlink()  # force a replay from the log's config echo
    code, out, _ = run(["census", *sorted(str(p) for p in tmp_path.glob("*.log"))], capsys)
    assert code == 0
    rows = {r["source"].split("/")[-1].split("_rep")[0]: r for r in csv.DictReader(io.StringIO(out))}
    noindex = rows["a_fieldio_noindex_s1_c1_p4"]
    assert (noindex["arrays"], noindex["key_values"]) == ("12", "0")
    full = rows["a_fieldio_full_s1_c1_p4"]
    assert full["containers"] == str(1 + 2 * 4)
    b = rows["b_fieldio_full_s1_c1_p4"]
    assert b["unreferenced_arrays"] == str(2 * 3)


def test_census_direct_run(capsys):
    code, out, _ = run(["census", "--mode", "noindex", "--procs-per-client", "2", *SMALL], capsys)
    assert code == 0
    row = list(csv.DictReader(io.StringIO(out)))[0]
    assert (row["arrays"], row["key_values"], row["unreferenced_arrays"]) == ("6", "0", "0")


def test_version_and_help(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    assert "run" in capsys.readouterr().out
