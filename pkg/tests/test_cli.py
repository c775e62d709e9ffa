import json
from pathlib import Path

import pytest

from conftest import build_benchmark_dbs
from scenario import record_toy_transcript, write_toy_inputs

from nlrewrite import cli


@pytest.fixture(scope="module")
def toy_dir(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("toy")
    build_benchmark_dbs(root / "databases")
    write_toy_inputs(root)
    record_toy_transcript(root)
    return root


def run_cli(*argv) -> int:
    return cli.main([str(a) for a in argv])


def test_run_happy_path(toy_dir, tmp_path, capsys):
    log = tmp_path / "run.log"
    code = run_cli("run", "--config", toy_dir / "toy.cfg", "--log", log, "--max-rounds", "2")
    assert code == 0
    lines = log.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1 + 12 + 4  # header + round 1 + round 2
    out = capsys.readouterr().out
    assert "round 1" in out and "round 2" in out


def test_run_refuses_overwrite_without_force(toy_dir, tmp_path):
    log = tmp_path / "run.log"
    assert run_cli("run", "--config", toy_dir / "toy.cfg", "--log", log) == 0
    assert run_cli("run", "--config", toy_dir / "toy.cfg", "--log", log) == 1
    assert run_cli("run", "--config", toy_dir / "toy.cfg", "--log", log, "--force") == 0


def test_check_only_writes_single_round(toy_dir, tmp_path):
    log = tmp_path / "check.log"
    assert run_cli("check", "--config", toy_dir / "toy.cfg", "--log", log) == 0
    records = [json.loads(line) for line in
               log.read_text(encoding="utf-8").splitlines()[1:]]
    assert len(records) == 12
    assert all(r["round"] == 1 and r["reflection"] is None for r in records)


def test_eval_prints_metrics_and_writes_report(toy_dir, tmp_path, capsys):
    log = tmp_path / "run.log"
    run_cli("run", "--config", toy_dir / "toy.cfg", "--log", log)
    out_json = tmp_path / "report.json"
    code = run_cli("eval", "--log", log, "--gold", toy_dir / "questions.json",
                   "--db-root", toy_dir / "databases", "--out", out_json)
    assert code == 0
    printed = capsys.readouterr().out
    assert "EX" in printed and "CP" in printed
    report = json.loads(out_json.read_text(encoding="utf-8"))
    assert 0.0 <= report["ex"] <= 1.0
    assert report["per_round"]["1"]["tokens"] > 0


def test_report_compares_two_evals(toy_dir, tmp_path, capsys):
    log = tmp_path / "run.log"
    run_cli("run", "--config", toy_dir / "toy.cfg", "--log", log)
    before = tmp_path / "before.json"
    after = tmp_path / "after.json"
    for out in (before, after):
        run_cli("eval", "--log", log, "--gold", toy_dir / "questions.json",
                "--db-root", toy_dir / "databases", "--out", out)
    capsys.readouterr()
    assert run_cli("report", "--before", before, "--after", after) == 0
    table = capsys.readouterr().out
    assert "baseline" in table and "rewritten" in table and "EM (clause-set)" in table


def test_export_flattens_log(toy_dir, tmp_path):
    log = tmp_path / "run.log"
    run_cli("run", "--config", toy_dir / "toy.cfg", "--log", log)
    out = tmp_path / "flat.tsv"
    assert run_cli("export", "--log", log, "--out", out) == 0
    assert out.read_text(encoding="utf-8").startswith("sample_id\t")


def test_init_exp_writes_snapshot(toy_dir, tmp_path):
    out = tmp_path / "experiences.json"
    assert run_cli("init-exp", "--config", toy_dir / "toy.cfg", "--out", out) == 0
    data = json.loads(out.read_text(encoding="utf-8"))
    assert len(data["experiences"]) == 8


def test_rewrite_once_debug_output(toy_dir, capsys):
    code = run_cli("rewrite-once", "--config", toy_dir / "toy.cfg",
                   "--sample-id", "toy:01")
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert "stadiums" in payload["rewritten_nl"]
    assert payload["triples"][0]["keyword"] == "stations"


def test_unknown_subcommand_exits_one(capsys):
    assert run_cli("frobnicate") == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_missing_required_flag_exits_one(capsys):
    assert run_cli("run") == 1


def test_live_backend_missing_credential_exits_one(toy_dir, tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("NO_SUCH_CREDENTIAL", raising=False)
    cfg = tmp_path / "live.cfg"
    cfg.write_text(
        (toy_dir / "toy.cfg").read_text(encoding="utf-8").replace(
            "backend = scripted",
            "backend = live\napi_base = http://127.0.0.1:9\napi_key_env = NO_SUCH_CREDENTIAL")
        .replace("transcript = transcript.json",
                 f"transcript = {toy_dir / 'transcript.json'}")
        .replace("questions = questions.json", f"questions = {toy_dir / 'questions.json'}")
        .replace("db_root = databases", f"db_root = {toy_dir / 'databases'}")
        .replace("path = preds.json", f"path = {toy_dir / 'preds.json'}"),
        encoding="utf-8")
    code = run_cli("run", "--config", cfg, "--log", tmp_path / "x.log")
    assert code == 1
    assert "credential" in capsys.readouterr().err


def test_missing_config_file_exits_one(tmp_path):
    assert run_cli("run", "--config", tmp_path / "absent.cfg") == 1
