"""End-to-end command line behavior against a prebuilt blob zoo."""

import json
import socket

import pytest

from evasionlab.cli import (EXIT_FAIL, EXIT_IO, EXIT_OK, EXIT_UNAVAILABLE,
                            EXIT_USAGE, UsageError, _parse_settings, main)


def _zoo_args(blob_zoo, out):
    return ["--zoo", str(blob_zoo.root.parent), "--task", "blobs",
            "--out", str(out)]


def test_usage_errors(capsys):
    assert main(["attack"]) == EXIT_USAGE  # --method is required
    assert main(["frobnicate"]) == EXIT_USAGE
    capsys.readouterr()


def test_unknown_method(blob_zoo, tmp_path, capsys):
    code = main(["attack", "--method", "GRADIENT",
                 *_zoo_args(blob_zoo, tmp_path / "o")])
    assert code == EXIT_USAGE
    assert "unknown method" in capsys.readouterr().err


def test_parse_settings():
    assert _parse_settings("0,2,4-6") == [0, 2, 4, 5, 6]
    with pytest.raises(UsageError):
        _parse_settings("x")
    with pytest.raises(UsageError):
        _parse_settings("3-x")
    with pytest.raises(UsageError):
        _parse_settings(",")


def test_attack_missing_zoo(tmp_path, capsys):
    code = main(["attack", "--method", "PRISM", "--zoo", str(tmp_path),
                 "--task", "blobs", "--out", str(tmp_path / "out")])
    assert code == EXIT_IO
    assert "zoo-build" in capsys.readouterr().err


def test_attack_writes_artifacts(blob_zoo, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["attack", "--method", "PRISM", "--setting", "0-5",
                 "--budget", "300", "--export-perturbation",
                 *_zoo_args(blob_zoo, out)])
    assert code in (EXIT_OK, EXIT_FAIL)
    lines = [json.loads(t) for t in capsys.readouterr().out.splitlines()
             if t.startswith("{")]
    assert lines
    succeeded = [d for d in lines if d.get("success")]
    assert succeeded  # the blob task is easy enough for a win somewhere
    sid = succeeded[0]["setting"]
    assert (out / f"attack_PRISM_{sid}.json").exists()
    assert (out / f"attack_PRISM_{sid}_adv.json").exists()
    assert (out / f"attack_PRISM_{sid}_pert.json").exists()
    doc = json.loads((out / f"attack_PRISM_{sid}.json").read_text())
    assert doc["method"] == "PRISM" and doc["queries"] <= 300


def test_attack_lowercase_method_and_exit_code(blob_zoo, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["attack", "--method", "prism", "--setting", "0",
                 "--budget", "5", *_zoo_args(blob_zoo, out)])
    assert code in (EXIT_OK, EXIT_FAIL)
    capsys.readouterr()


def test_bench_small_battery(blob_zoo, tmp_path, capsys):
    out = tmp_path / "bench"
    code = main(["bench", "--settings", "6", "--methods", "ENS,PRISM",
                 "--schedules", "EPPR", "--budget", "200",
                 *_zoo_args(blob_zoo, out)])
    assert code == EXIT_OK
    text = capsys.readouterr().out
    assert "ENS: success" in text and "EPPR: success" in text
    assert (out / "results.csv").exists()
    assert (out / "frontier.json").exists()
    assert (out / "pareto.svg").exists()
    rows = (out / "results.csv").read_text().splitlines()
    assert len(rows) == 1 + 6 * 3  # header + settings x (2 methods + EPPR)


def test_bench_resume_reuses_rows(blob_zoo, tmp_path, capsys):
    out = tmp_path / "bench"
    args = ["bench", "--settings", "4", "--methods", "ENS", "--schedules", "",
            "--budget", "100", *_zoo_args(blob_zoo, out)]
    assert main(args) == EXIT_OK
    first = (out / "results.csv").read_bytes()
    assert main(args + ["--resume"]) == EXIT_OK
    assert (out / "results.csv").read_bytes() == first
    capsys.readouterr()


def test_bench_rejects_method_as_schedule(blob_zoo, tmp_path, capsys):
    code = main(["bench", "--schedules", "PRISM",
                 *_zoo_args(blob_zoo, tmp_path / "x")])
    assert code == EXIT_USAGE
    capsys.readouterr()


def test_scan_writes_grids(blob_zoo, tmp_path, capsys):
    out = tmp_path / "scan"
    code = None
    for sid in range(6):
        code = main(["scan", "--method", "PRISM", "--setting", str(sid),
                     "--budget", "500", *_zoo_args(blob_zoo, out)])
        if code == EXIT_OK:
            break
    assert code == EXIT_OK
    meta = json.loads((out / "scan.json").read_text())["metadata"]
    assert meta["class_at_start"] == meta["target"]
    assert meta["class_at_adv"] == meta["target"]
    assert (out / "scan.svg").exists()
    capsys.readouterr()


def test_scan_failed_attack_exits_2(blob_zoo, tmp_path, capsys):
    # QO cannot finish its ladder in 200 queries on any setting
    code = main(["scan", "--method", "QO", "--setting", "2",
                 "--budget", "200", *_zoo_args(blob_zoo, tmp_path / "s")])
    assert code == EXIT_FAIL
    assert "no scan" in capsys.readouterr().err


def test_config_file_defaults_and_flag_priority(blob_zoo, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "task": "blobs", "zoo": str(blob_zoo.root.parent),
        "out": str(tmp_path / "cfgout"), "budget": 120, "setting": "0",
    }))
    code = main(["--config", str(cfg), "attack", "--method", "PRISM"])
    assert code in (EXIT_OK, EXIT_FAIL)
    docs = [json.loads(t) for t in capsys.readouterr().out.splitlines()
            if t.startswith("{")]
    assert docs and docs[0]["queries"] <= 120
    assert (tmp_path / "cfgout").exists()

    # explicit flag beats the config value
    code = main(["--config", str(cfg), "attack", "--method", "PRISM",
                 "--out", str(tmp_path / "flagout")])
    assert code in (EXIT_OK, EXIT_FAIL)
    assert (tmp_path / "flagout").exists()
    capsys.readouterr()


def test_config_rejects_bad_json(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{nope")
    assert main(["--config", str(cfg), "zoo-build"]) == EXIT_USAGE
    cfg.write_text("[1,2]")
    assert main(["--config", str(cfg), "zoo-build"]) == EXIT_USAGE
    assert main(["--config", str(tmp_path / "absent.json"),
                 "zoo-build"]) == EXIT_IO
    capsys.readouterr()


def test_serve_adapter_port_busy(blob_zoo, tmp_path, capsys):
    blocker = socket.socket()
    blocker.bind(("127.0.0.1", 0))
    blocker.listen(1)
    port = blocker.getsockname()[1]
    try:
        code = main(["serve-adapter", "--port", str(port),
                     *_zoo_args(blob_zoo, tmp_path / "srv")])
    finally:
        blocker.close()
    assert code == EXIT_UNAVAILABLE
    assert "cannot bind" in capsys.readouterr().err
