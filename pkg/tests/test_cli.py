import json

import pytest

from eco.cli import main

TINY = {"synthetic": {"n_entities": 5, "n_dialogs": 20}, "epochs": 1, "d_model": 8, "d_ff": 16,
        "eval_every": 1, "p": 2, "max_response_len": 8}


@pytest.fixture
def corpus(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "c"), "--n-entities", "5", "--n-dialogs", "20"]) == 0
    return tmp_path / "c"


def test_synth_augment_trie(corpus, tmp_path, capsys):
    capsys.readouterr()
    rc = main(["augment", "--kb", str(corpus / "kb.json"), "--dialogs", str(corpus / "dialogs.jsonl"),
               "--p", "3", "--out", str(tmp_path / "dfn.jsonl"), "--report", str(tmp_path / "rep.json")])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["d_tr"] == 20 and summary["d_fn"] == summary["d_tr"] + summary["d_au"]
    assert json.loads((tmp_path / "rep.json").read_text())["templates"] == 20
    assert main(["trie", "dump", "--kb", str(corpus / "kb.json"), "--out", str(tmp_path / "t.json")]) == 0
    trie = json.loads((tmp_path / "t.json").read_text())
    assert sum(n["terminal"] for n in trie["nodes"]) == 5


def test_train_generate_eval(corpus, tmp_path, capsys):
    cfg = dict(TINY, kb=[str(corpus / "kb.json")], dialogs=str(corpus / "dialogs.jsonl"),
               goals=str(corpus / "goals.json"))
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    out = tmp_path / "run"
    assert main(["train", "--config", str(tmp_path / "cfg.json"), "--out-dir", str(out)]) == 0
    assert (out / "best.json").exists() and (out / "checkpoints" / "epoch001.json").exists()
    preds = tmp_path / "preds.jsonl"
    assert main(["generate", "--ckpt", str(out / "best.json"), "--kb", str(corpus / "kb.json"),
                 "--dialogs", str(corpus / "dialogs.jsonl"), "--out", str(preds)]) == 0
    rows = [json.loads(x) for x in preds.read_text().splitlines()]
    assert rows and all(r["entity_valid"] for r in rows)
    assert {"dialog_id", "turn", "generated_entity", "generated_response"} <= set(rows[0])
    capsys.readouterr()
    assert main(["eval", "--preds", str(preds), "--refs", str(corpus / "dialogs.jsonl"),
                 "--kb", str(corpus / "kb.json"), "--goals", str(corpus / "goals.json"),
                 "--report", str(tmp_path / "report.json")]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert {"bleu", "inform", "success", "score", "f1", "consistency", "split"} <= set(report)
    assert report["entity_validity"] == 100.0


def test_pipeline_writes_stage_artifacts(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps(TINY))
    out = tmp_path / "run"
    assert main(["pipeline", "--config", str(tmp_path / "cfg.json"), "--out-dir", str(out),
                 "--logits-too"]) == 0
    for name in ("kb_restaurant.json", "trie_restaurant.json", "train.jsonl", "dev.jsonl", "test.jsonl",
                 "dfn_epoch1.jsonl", "augment_report.json", "best.json", "predictions.jsonl",
                 "report.json"):
        assert (out / name).exists(), name
    report = json.loads((out / "report.json").read_text())
    assert report["test_logit_eval"] is not None


def test_ablate_table(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps(TINY))
    rc = main(["ablate", "--config", str(tmp_path / "cfg.json"), "--variants", "ECO", "w/o trie",
               "w/ LogitEval", "--seeds", "1", "2", "--out", str(tmp_path / "abl.json")])
    assert rc == 0
    table = json.loads((tmp_path / "abl.json").read_text())["table"]
    assert set(table) == {"ECO", "w/o trie", "w/ LogitEval"}
    assert len(table["ECO"]["consistency"]["runs"]) == 2
    assert table["ECO"]["entity_validity"]["mean"] == 100.0
    assert "w/o trie" in capsys.readouterr().out


def test_env_seed_override(tmp_path, monkeypatch):
    monkeypatch.setenv("ECO_SEED", "3")
    assert main(["synth", "--out", str(tmp_path / "a"), "--n-dialogs", "5"]) == 0
    monkeypatch.delenv("ECO_SEED")
    assert main(["synth", "--out", str(tmp_path / "b"), "--n-dialogs", "5", "--seed", "3"]) == 0
    assert (tmp_path / "a" / "dialogs.jsonl").read_bytes() == (tmp_path / "b" / "dialogs.jsonl").read_bytes()


def test_failing_stage_exits_nonzero(tmp_path, caplog):
    rc = main(["augment", "--kb", str(tmp_path / "missing.json"), "--dialogs", "x", "--out", "y"])
    assert rc == 1
    assert "augment failed" in caplog.text
    (tmp_path / "bad.json").write_text(json.dumps({"au_only": True, "tr_only": True}))
    assert main(["pipeline", "--config", str(tmp_path / "bad.json")]) == 1
