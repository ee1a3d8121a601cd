import json

import pytest

from culrag import cli
from culrag.mock import MockProvider
from culrag.model_client import ModelTransportError


@pytest.fixture
def kb(tmp_path, e2e_dir):
    root = tmp_path / "kb"
    assert cli.main(["build-kb", "--no-pages", "--curated", str(e2e_dir / "facts.jsonl"), "--kb-root", str(root)]) == 0
    assert cli.main(["index", "--endpoint", "mock", "--kb-root", str(root)]) == 0
    return root


def run(tmp_path, kb, e2e_dir, *extra, out="run"):
    argv = [
        "run-track", "--endpoint", "mock", "--kb-root", str(kb), "--cache-dir", str(tmp_path / "cache"),
        "--dataset", str(e2e_dir / "questions.jsonl"), "--out", str(tmp_path / out), *extra,
    ]
    return cli.main(argv)


def test_build_kb_defaults_to_shipped_data(tmp_path, capsys):
    assert cli.main(["build-kb", "--kb-root", str(tmp_path / "kb")]) == 0
    countries = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert set(countries) == {"CN", "ES", "GB", "MX", "SG", "TW", "US"}


def test_index_writes_persisted_indexes(kb):
    meta = json.loads((kb / "GB" / "index" / "meta.json").read_text())
    assert meta["count"] == 3 and meta["dimension"] == 256 and meta["model_id"] == "mistral:7b"


def test_run_track_outputs_and_config_echo(tmp_path, kb, e2e_dir):
    assert run(tmp_path, kb, e2e_dir, "--prompt", "rp-v2", "--k", "2") == 0
    out = tmp_path / "run"
    config = json.loads((out / "config.json").read_text())
    assert (config["template"], config["k"], config["kb_root"]) == ("rp-v2", 2, str(kb))
    predictions = [json.loads(l) for l in (out / "predictions.jsonl").read_text().splitlines()]
    assert len(predictions) == 20
    assert set(predictions[0]) == {"id", "answer", "source_stage", "evidence"}
    assert json.loads((out / "report.json").read_text())["overall"] == "100.00"
    assert (out / "records.jsonl").exists() and (out / "report.txt").exists()


def test_missing_kb_fails_fast(tmp_path, e2e_dir, capsys):
    assert run(tmp_path, tmp_path / "nowhere", e2e_dir) == 2
    err = capsys.readouterr().err
    assert "CN" in err and "GB" in err
    assert not (tmp_path / "run").exists()


def test_missing_kb_ok_without_local_db(tmp_path, e2e_dir):
    assert run(tmp_path, tmp_path / "nowhere", e2e_dir, "--no-local-db") == 0


def test_live_search_rejected_in_runs(tmp_path, kb, e2e_dir):
    assert run(tmp_path, kb, e2e_dir, "--search", "live") == 2


def test_bad_config_file(tmp_path, kb, e2e_dir):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"k": 0}))
    assert run(tmp_path, kb, e2e_dir, "--config", str(cfg)) == 2
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(tmp_path, kb, e2e_dir, "--config", str(cfg)) == 2


def test_config_file_then_flags(tmp_path, kb, e2e_dir):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"k": 5, "template": "mp"}))
    assert run(tmp_path, kb, e2e_dir, "--config", str(cfg), "--prompt", "rp-v1") == 0
    echoed = json.loads((tmp_path / "run" / "config.json").read_text())
    assert (echoed["k"], echoed["template"]) == (5, "rp-v1")


def test_partial_failures_exit_1(tmp_path, kb, e2e_dir, monkeypatch):
    class Down(MockProvider):
        def generate(self, request):
            raise ModelTransportError("down")

    monkeypatch.setattr(cli, "_provider", lambda config, questions=(): Down())
    assert run(tmp_path, kb, e2e_dir) == 1
    predictions = (tmp_path / "run" / "predictions.jsonl").read_text().splitlines()
    assert len(predictions) == 20


def test_rag_base_mode(tmp_path, kb, e2e_dir):
    assert run(tmp_path, kb, e2e_dir, "--mode", "rag_base") == 0
    records = [json.loads(l) for l in (tmp_path / "run" / "records.jsonl").read_text().splitlines()]
    assert {r["model_id"] for r in records} == {"gemma3:4b"}


def test_evaluate_command(tmp_path, kb, e2e_dir, capsys):
    run(tmp_path, kb, e2e_dir)
    capsys.readouterr()
    argv = ["evaluate", "--dataset", str(e2e_dir / "questions.jsonl"), "--predictions", str(tmp_path / "run" / "predictions.jsonl"), "--out", str(tmp_path / "ev")]
    assert cli.main(argv) == 0
    assert "100.00" in capsys.readouterr().out
    assert json.loads((tmp_path / "ev" / "report.json").read_text())["per_language"] == {"en": "100.00", "es": "100.00", "zh": "100.00"}


def test_evaluate_track_filter(tmp_path, kb, e2e_dir):
    run(tmp_path, kb, e2e_dir)
    argv = ["evaluate", "--dataset", str(e2e_dir / "questions.jsonl"), "--predictions", str(tmp_path / "run" / "predictions.jsonl"), "--track", "mcq"]
    assert cli.main(argv) == 2  # dataset mixes tracks


def test_ablate(tmp_path, kb, e2e_dir):
    argv = [
        "ablate", "--endpoint", "mock", "--kb-root", str(kb), "--cache-dir", str(tmp_path / "cache"),
        "--dataset", str(e2e_dir / "questions.jsonl"), "--out", str(tmp_path / "ab"),
    ]
    assert cli.main(argv) == 0
    out = tmp_path / "ab"
    table = json.loads((out / "ablation.json").read_text())
    assert table["prompts"] == ["mp", "rp-v1", "rp-v2"]
    assert (out / "curve.csv").read_text().splitlines()[0] == "prompt_id,language,track,score"
    assert all((out / f"predictions.{p}.jsonl").exists() for p in table["prompts"])


def test_ask(tmp_path, kb, capsys):
    argv = [
        "ask", "--endpoint", "mock", "--kb-root", str(kb), "--cache-dir", str(tmp_path / "cache"),
        "--id", "en-GB-e02", "--question", "What number do people in the United Kingdom call for emergency services?",
        "--reference", "999",
    ]
    assert cli.main(argv) == 0
    record = json.loads(capsys.readouterr().out)
    assert (record["answer"], record["source_stage"], record["model_id"], record["kb_id"]) == ("999", "LOCAL_KB", "mistral:7b", "GB")


def test_ask_needs_locale_in_id(tmp_path, kb):
    assert cli.main(["ask", "--endpoint", "mock", "--kb-root", str(kb), "--id", "q17", "--question", "?"]) == 2
