import json

import pytest

from sedkit import cli
from sedkit.cli import run_cli, score_manifests
from sedkit.corpus import load_manifest, write_manifest
from sedkit.errors import NumericalError

TINY_FLAGS = [
    "--d-model", "16", "--attention-heads", "2", "--lstm-hidden", "8", "--proj-dim", "8",
    "--conv-kernel", "3", "--batch-size", "8", "--max-epochs", "1", "--no-augment",
]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert run_cli(["gen-data", "--out", str(out), "--clips", "30", "--speakers", "10", "--seed", "3"]) == 0
    return out


def test_gen_data_writes_splits(corpus):
    parts = {name: load_manifest(corpus / f"{name}.jsonl") for name in ("train", "dev", "test")}
    assert sum(len(p) for p in parts.values()) == len(load_manifest(corpus / "manifest.jsonl")) == 30
    speakers = [{r.speaker for r in p} for p in parts.values()]
    assert [len(s) for s in speakers] == [6, 1, 3]
    assert not (speakers[0] & speakers[1]) and not (speakers[0] & speakers[2])


def test_unknown_subcommand(capsys):
    assert run_cli(["fly"]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_subcommand(capsys):
    assert run_cli([]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_required_option(capsys):
    assert run_cli(["score", "--hyp", "a.jsonl"]) == 1
    assert "--ref" in capsys.readouterr().err


def test_bad_probs_is_usage_error(tmp_path):
    assert run_cli(["gen-data", "--out", str(tmp_path), "--probs", "0.1,0.2"]) == 1


def test_score_identical(corpus, capsys):
    m = str(corpus / "manifest.jsonl")
    assert run_cli(["score", "--hyp", m, "--ref", m]) == 0
    out = capsys.readouterr().out
    assert "100.00" in out.splitlines()[1]


def test_score_swap_exchanges_fp_and_fn(corpus, tmp_path):
    recs = load_manifest(corpus / "manifest.jsonl")
    flipped = [r.__class__(r.id, r.audio, r.speaker, tuple(1 - v if i % 2 else v for v in r.labels)) for i, r in enumerate(recs)]
    write_manifest(tmp_path / "hyp.jsonl", flipped)
    a = score_manifests(tmp_path / "hyp.jsonl", corpus / "manifest.jsonl").counts
    b = score_manifests(corpus / "manifest.jsonl", tmp_path / "hyp.jsonl").counts
    assert (a.fp == b.fn).all() and (a.fn == b.fp).all() and (a.tp == b.tp).all() and (a.tn == b.tn).all()


def test_score_mismatched_ids(corpus, tmp_path, capsys):
    recs = load_manifest(corpus / "manifest.jsonl")
    write_manifest(tmp_path / "short.jsonl", recs[:-1])
    assert run_cli(["score", "--hyp", str(tmp_path / "short.jsonl"), "--ref", str(corpus / "manifest.jsonl")]) == 2
    assert "clip ids differ" in capsys.readouterr().err


def test_missing_file_is_data_error(tmp_path):
    assert run_cli(["score", "--hyp", str(tmp_path / "nope.jsonl"), "--ref", str(tmp_path / "nope.jsonl")]) == 2


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "gen.yaml"
    cfg.write_text("clips: 5\nseed: 9\nspeakers: 3\n")
    out = tmp_path / "data"
    assert run_cli(["gen-data", "--config", str(cfg), "--out", str(out), "--clips", "4"]) == 0
    err = capsys.readouterr().err
    assert "clips = 4 (flag)" in err and "seed = 9 (file)" in err and "seconds = 4.0 (default)" in err
    assert len(load_manifest(out / "manifest.jsonl")) == 4


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({"clipz": 3}))
    assert run_cli(["gen-data", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_train_then_eval(corpus, tmp_path):
    cfg = tmp_path / "train.yaml"
    cfg.write_text("model:\n  num_blocks: 1\n  lstm_layers: 1\ntrain:\n  lr: 0.001\n")
    out = tmp_path / "run"
    argv = ["train", "--config", str(cfg), "--train", str(corpus / "train.jsonl"), "--dev", str(corpus / "dev.jsonl"),
            "--out", str(out), *TINY_FLAGS]
    assert run_cli(argv) == 0
    assert (out / "model.sedk").exists() and (out / "history.jsonl").read_text().count("\n") == 1
    saved = json.loads((out / "config.json").read_text())
    assert saved["model"]["num_blocks"] == 1 and saved["train"]["lr"] == 0.001
    report = tmp_path / "report.jsonl"
    assert run_cli(["eval", "--ckpt", str(out / "model.sedk"), "--data", str(corpus / "test.jsonl"), "--report", str(report)]) == 0
    rec = json.loads(report.read_text())
    assert rec["tasks"] == ["p", "b", "r", "wr", "i"] and 0 <= rec["f1_final"] <= 100


def test_numerical_abort_exit_code(corpus, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("loss is nan at epoch 1, batch 0")

    monkeypatch.setattr(cli, "train", boom)
    argv = ["train", "--train", str(corpus / "train.jsonl"), "--dev", str(corpus / "dev.jsonl"), "--out", str(tmp_path), *TINY_FLAGS]
    assert run_cli(argv) == 3


def _ablate(corpus, out, *extra):
    return run_cli(["ablate", "--train", str(corpus / "train.jsonl"), "--dev", str(corpus / "dev.jsonl"),
                    "--test", str(corpus / "test.jsonl"), "--out", str(out), "--bilstm", "bi1", *TINY_FLAGS, *extra])


def test_ablate_rows_and_reproducibility(corpus, tmp_path):
    assert _ablate(corpus, tmp_path / "a", "--layers", "0,1", "--strategy", "five,single:/b") == 0
    assert _ablate(corpus, tmp_path / "b", "--layers", "0,1", "--strategy", "five,single:/b") == 0
    text = (tmp_path / "a" / "report.txt").read_text()
    assert text == (tmp_path / "b" / "report.txt").read_text()
    assert (tmp_path / "a" / "report.jsonl").read_bytes() == (tmp_path / "b" / "report.jsonl").read_bytes()
    rows = text.strip().splitlines()[1:]
    assert len(rows) == 4
    single = [r.split() for r in rows if "onlyb" in r]
    assert len(single) == 2
    assert all(cells[1] == "---" and cells[3:6] == ["---"] * 3 for cells in single)


def test_ablate_bad_axis(corpus, tmp_path):
    assert _ablate(corpus, tmp_path, "--bilstm", "sideways2") == 1
