import json
import math
import shutil
import socket
from dataclasses import replace
from pathlib import Path

import pytest

from fairprompt.cli import main
from fairprompt.errors import AuthError, ConfigError, EmptyDenominator, RunError
from fairprompt.gateway import OpenAICompatibleBackend
from fairprompt.harness import RunConfig, cmd_report, cmd_run, cmd_verify_causal, load_config, load_records

from conftest import DATA

WB = DATA / "winobias"
GRAPHS = DATA / "graphs"
ROLES = {k: k for k in ("A", "Y", "S", "PPC", "entity", "scenario", "fact", "salient")}

# (instance, polarity, task type, base correct, final correct, status) per strategy
EXPECTED = {
    "default": [
        ("wb-01", "pro", "type1", True, True, "included"),
        ("wb-02", "anti", "type1", True, False, "included"),
        ("wb-03", "pro", "type1", True, True, "included"),
        ("wb-04", "anti", "type1", True, False, "included"),
        ("wb-05", "pro", "type1", True, True, "included"),
        ("wb-06", "anti", "type1", True, False, "included"),
        ("wb-07", "pro", "type1", False, True, "included"),
        ("wb-08", "anti", "type1", None, None, "excluded"),
        ("wb-09", "pro", "type2", False, True, "included"),
        ("wb-10", "anti", "type2", False, True, "included"),
        ("wb-11", "pro", "type2", True, True, "included"),
        ("wb-12", "anti", "type2", True, True, "included"),
        ("wb-13", "pro", "type2", True, True, "included"),
        ("wb-14", "anti", "type2", True, False, "included"),
        ("wb-15", "pro", "type2", True, True, "included"),
        ("wb-16", "anti", "type2", True, True, "included"),
    ],
    "DDP": [
        ("wb-01", "pro", "type1", True, True, "included"),
        ("wb-02", "anti", "type1", True, False, "included"),
        ("wb-03", "pro", "type1", True, True, "included"),
        ("wb-04", "anti", "type1", True, True, "included"),
        ("wb-05", "pro", "type1", True, True, "included"),
        ("wb-06", "anti", "type1", True, True, "included"),
        ("wb-07", "pro", "type1", False, True, "included"),
        ("wb-08", "anti", "type1", None, None, "excluded"),
        ("wb-09", "pro", "type2", False, True, "included"),
        ("wb-10", "anti", "type2", False, False, "included"),
        ("wb-11", "pro", "type2", True, True, "included"),
        ("wb-12", "anti", "type2", True, None, "refused"),
        ("wb-13", "pro", "type2", True, True, "included"),
        ("wb-14", "anti", "type2", True, True, "included"),
        ("wb-15", "pro", "type2", True, True, "included"),
        ("wb-16", "anti", "type2", True, False, "included"),
    ],
}


def wb_config(out: Path, data_dir: Path = WB) -> RunConfig:
    cfg = load_config(data_dir / "run_config.json")
    return replace(cfg, output_dir=out)


def naive_section(rows):
    """Hand tally of accuracy and cells for one (task type, strategy) slice."""
    used = [r for r in rows if r[5] == "included"]
    acc, cells = {}, {}
    for pol in ("anti", "pro"):
        sub = [r for r in used if r[1] == pol]
        acc[pol] = 100.0 * sum(r[4] for r in sub) / len(sub)
        tally = {c: 0 for c in ("TT", "TF", "FT", "FF")}
        for r in sub:
            tally[("T" if r[3] else "F") + ("T" if r[4] else "F")] += 1
        cells[pol] = {c: 100.0 * n / len(sub) for c, n in tally.items()}
    return acc, cells


@pytest.fixture(scope="module")
def wb_run(tmp_path_factory):
    return cmd_run(wb_config(tmp_path_factory.mktemp("runs")))


def test_winobias_records_match_frozen_table(wb_run):
    got = {}
    for r in wb_run.records:
        got.setdefault(r.strategy, []).append((r.instance_id, r.polarity, r.task_type, r.base_correct, r.final_correct, r.status))
    assert got == EXPECTED
    assert list(got) == ["default", "DDP"]


def test_winobias_report_matches_hand_tally(wb_run):
    report = json.loads(wb_run.report_json)
    assert len(report["sections"]) == 4
    for sec in report["sections"]:
        rows = [r for r in EXPECTED[sec["strategy"]] if r[2] == sec["task_type"]]
        acc, cells = naive_section(rows)
        assert sec["accuracy"]["anti"] == pytest.approx(acc["anti"], abs=1e-12)
        assert sec["accuracy"]["pro"] == pytest.approx(acc["pro"], abs=1e-12)
        assert sec["accuracy"]["gap"] == pytest.approx(acc["pro"] - acc["anti"], abs=1e-12)
        for pol in cells:
            assert sec["categories"][pol] == pytest.approx(cells[pol], abs=1e-12)
        assert sec["counts"]["refused"] == sum(r[5] == "refused" for r in rows)
        assert sec["counts"]["excluded"] == sum(r[5] == "excluded" for r in rows)


def test_run_artifacts(wb_run):
    d = wb_run.run_dir
    for name in ("config.json", "records.jsonl", "report.json", "report.csv", "cache.jsonl"):
        assert (d / name).is_file()
    assert {p.name for p in (d / "transcripts").iterdir()} == {"base.jsonl", "default.jsonl", "DDP.jsonl"}
    # transcripts live in their own files, so records round-trip without them
    assert [r.to_dict() for r in load_records(d / "records.jsonl")] == [r.to_dict() for r in wb_run.records]


def test_run_is_deterministic_and_warm_cache_is_silent(tmp_path, wb_run):
    cold = cmd_run(wb_config(tmp_path))
    # identical in-flight requests are coalesced, so the call count is exact
    assert cold.backend_calls == wb_run.backend_calls == len((cold.run_dir / "cache.jsonl").read_text().splitlines())
    warm = cmd_run(wb_config(tmp_path))
    assert warm.backend_calls == 0
    for a, b in ((cold, wb_run), (warm, cold)):
        assert a.report_json == b.report_json and a.report_csv == b.report_csv
        assert (a.run_dir / "records.jsonl").read_bytes() == (b.run_dir / "records.jsonl").read_bytes()


def test_interrupted_run_resumes_to_same_report(tmp_path, wb_run):
    data = tmp_path / "data"
    shutil.copytree(WB, data)
    script = json.loads((data / "mock_script.json").read_text())
    # drop the rule answering the driver/teacher DDP question so the run dies mid-way
    kept = [r for r in script["rules"] if not r["regex"].startswith("can be either.*teacher")]
    assert len(kept) < len(script["rules"])
    (data / "mock_script.json").write_text(json.dumps({**script, "rules": kept}))
    cfg = wb_config(tmp_path / "runs", data)
    with pytest.raises(RunError, match="FixtureMiss"):
        cmd_run(cfg)
    run_dir = cfg.output_dir / cfg.run_id
    assert (run_dir / "records.jsonl").exists() and (run_dir / "cache.jsonl").stat().st_size > 0
    assert not (run_dir / "report.json").exists()
    partial_cache = len((run_dir / "cache.jsonl").read_text().splitlines())

    (data / "mock_script.json").write_text(json.dumps(script))
    resumed = cmd_run(cfg)
    assert resumed.report_json == wb_run.report_json
    assert resumed.backend_calls < wb_run.backend_calls
    # only the requests missing from the partial cache are sent again
    assert resumed.backend_calls + partial_cache == wb_run.backend_calls


def test_live_model_without_key_fails_before_any_instance(tmp_path, monkeypatch):
    monkeypatch.delenv("FAIRPROMPT_NO_KEY", raising=False)
    doc = json.loads((WB / "run_config.json").read_text())
    doc["model"] = {"kind": "openai", "name": "gpt-x", "api_key_env": "FAIRPROMPT_NO_KEY"}
    doc["output_dir"] = str(tmp_path)
    cfg = RunConfig.from_dict(doc, WB)
    with pytest.raises(AuthError):
        cmd_run(cfg)
    assert list(tmp_path.iterdir()) == []
    live = OpenAICompatibleBackend("https://llm.invalid", api_key_env="FAIRPROMPT_NO_KEY")
    with pytest.raises(AuthError):
        cmd_run(wb_config(tmp_path), backend=live)


def test_config_errors(tmp_path):
    doc = json.loads((WB / "run_config.json").read_text())
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**doc, "benchmark": {"kind": "nope", "paths": []}}, WB)
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**doc, "strategies": []}, WB)
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc, tmp_path)  # relative files do not exist there
    with pytest.raises(ConfigError):
        RunConfig.from_dict({k: v for k, v in doc.items() if k != "model"}, WB)


def test_discrim_eval_mock_run(tmp_path):
    cfg = replace(load_config(DATA / "discrim_eval" / "run_config.json"), output_dir=tmp_path)
    res = cmd_run(cfg)
    sections = json.loads(res.report_json)["sections"]
    assert len(res.records) == 810
    for sec in sections:
        assert sec["counts"] == {"total": 405, "included": 270, "excluded": 135, "refused": 0}
        assert sec["relative_gap"]["race"] == pytest.approx(1 - math.exp(-0.29), abs=1e-12)
        assert sec["relative_gap"]["age"] == pytest.approx(0.0, abs=1e-12)
        assert sec["relative_gap"]["gender"] == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------- report command


def test_cmd_report_reproduces_run_report(wb_run, tmp_path):
    written = cmd_report(wb_run.run_dir / "records.jsonl", ["json", "csv"], tmp_path)
    assert written["json"].read_text() == wb_run.report_json
    assert written["csv"].read_text() == wb_run.report_csv


def test_cmd_report_empty_records(tmp_path):
    p = tmp_path / "records.jsonl"
    p.write_text("")
    with pytest.raises(EmptyDenominator):
        cmd_report(p)
    assert main(["report", "--records", str(p)]) == 2


# ---------------------------------------------------------------- verify-causal


def test_verify_fixture_passes():
    out = cmd_verify_causal(GRAPHS / "theorem_fixture.json")
    assert out.exit_code == 0 and out.document["theorem"]["status"] == "verified"


def test_verify_counterexample_fails():
    out = cmd_verify_causal(GRAPHS / "xor_counterexample.json")
    assert out.exit_code == 1 and out.document["theorem"]["status"] == "counterexample"


def test_verify_disconnected_all_zero():
    out = cmd_verify_causal(GRAPHS / "disconnected.json", roles=ROLES)
    assert out.exit_code == 0
    theorem = out.document["theorem"]
    mis = [row["mutual_information"] for row in theorem["premises"].values()]
    mis += [theorem["conclusion"]["mutual_information"], theorem["joint_parents"]["mutual_information"]]
    assert mis and all(m == 0.0 for m in mis)


def test_verify_berkson_demand():
    marginal = cmd_verify_causal(GRAPHS / "berkson_hospital.json", independent=["X1", "X2"])
    assert marginal.exit_code == 0
    conditional = cmd_verify_causal(GRAPHS / "berkson_hospital.json", independent=["X1", "X2"], given=["S4=1"])
    assert conditional.exit_code == 1
    assert conditional.document["demand"]["mutual_information"] > 0.01


def test_verify_needs_something():
    with pytest.raises(ConfigError):
        cmd_verify_causal(GRAPHS / "disconnected.json")
    with pytest.raises(ConfigError):
        cmd_verify_causal(GRAPHS / "berkson_hospital.json", independent=["X1", "X2"], given=["S4"])


# ---------------------------------------------------------------- command line


def test_cli_verify_exit_codes(capsys):
    assert main(["verify-causal", "--graph", str(GRAPHS / "theorem_fixture.json")]) == 0
    assert main(["verify-causal", "--graph", str(GRAPHS / "xor_counterexample.json")]) == 1
    assert main(["verify-causal", "--graph", str(GRAPHS / "berkson_hospital.json"), "--independent", "X1", "X2", "--given", "S4=1"]) == 1
    assert main(["verify-causal", "--graph", str(GRAPHS / "theorem_fixture.json"), "--trials", "5"]) == 0
    assert "search_ppc" in capsys.readouterr().out


def test_cli_verify_json_document(capsys):
    assert main(["verify-causal", "--graph", str(GRAPHS / "theorem_fixture.json"), "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["exit_code"] == 0 and doc["theorem"]["status"] == "verified"


def test_cli_run_and_report(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["run", "--config", str(WB / "run_config.json")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("run ") and "winobias,type1,DDP" in out
    records = next((tmp_path / "runs").glob("*/records.jsonl"))
    assert main(["report", "--records", str(records), "--format", "csv", "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "report.csv").read_text() == (records.parent / "report.csv").read_text()


def test_cli_bad_config(tmp_path, capsys):
    bad = tmp_path / "c.json"
    bad.write_text("{oops")
    assert main(["run", "--config", str(bad)]) == 2
    assert "ParseError" in capsys.readouterr().err


def test_network_is_blocked_in_tests():
    with pytest.raises(RuntimeError, match="network"):
        socket.create_connection(("127.0.0.1", 9))
