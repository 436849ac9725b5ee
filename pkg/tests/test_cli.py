"""End-to-end command-line flows on a tiny corpus."""

from __future__ import annotations

import json

import pytest

from accentasr.cli import main
from accentasr.corpus import load_manifest
from accentasr.decode import read_hypotheses
from accentasr.reports import load_delimited


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Corpus + one trained b1 model shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cliws")
    assert main(["corpus", "gen", "--utts", "18", "--accents", "2", "--vocab", "4",
                 "--feature-dim", "5", "--tokens", "1", "2", "--frames", "2", "3",
                 "--out", str(root / "corpus/all.tsv"), "--seed", "1"]) == 0
    assert main(["corpus", "split", "--manifest", str(root / "corpus/all.tsv"),
                 "--valid-fraction", "0.25", "--seed", "0",
                 "--train", str(root / "corpus/train.tsv"),
                 "--valid", str(root / "corpus/test.tsv")]) == 0
    cfg = root / "tiny.cfg"
    cfg.write_text("epochs_pretrain = 2\nbatch_frames = 64\n"
                   "arch.invariant_hidden = 6\narch.invariant_layers = 1\n"
                   "arch.specific_hidden = 5\narch.specific_layers = 1\n"
                   "arch.disc_hidden = 5\narch.recon_hidden = 6\n"
                   "arch.recon_layers = 1\narch.encoder_hidden = 6\n"
                   "arch.encoder_layers = 1\narch.decoder_hidden = 6\n"
                   "arch.decoder_layers = 1\narch.attention_dim = 5\n"
                   "arch.token_embed_dim = 5\narch.accent_embed_dim = 3\n")
    assert main(["train", "b1", "--corpus", str(root / "corpus/train.tsv"),
                 "--out", str(root / "b1"), "--config", str(cfg),
                 "--valid", str(root / "corpus/test.tsv"), "--seed", "4"]) == 0
    return root


def test_corpus_gen_and_split_outputs(workspace):
    full = load_manifest(workspace / "corpus/all.tsv")
    assert len(full.records) == 18 and full.num_accents == 2
    train_man = load_manifest(workspace / "corpus/train.tsv")
    test_man = load_manifest(workspace / "corpus/test.tsv")
    assert len(train_man.records) + len(test_man.records) == 18
    assert test_man.feature_array(test_man.records[0]).shape[1] == 5


def test_train_artifacts(workspace):
    assert (workspace / "b1/final.ckpt").is_file()
    assert (workspace / "b1/last.ckpt").is_file()
    log = [json.loads(l) for l in
           (workspace / "b1/train.log.jsonl").read_text().splitlines()]
    assert log[0]["event"] == "start" and log[0]["mode"] == "b1"
    assert any("validation_accuracy" in rec for rec in log)
    assert log[-1]["event"] == "end"


def test_decode_evaluate_report_flow(workspace, capsys, tmp_path):
    hyps_path = tmp_path / "hyps.txt"
    code, out, _ = run(capsys, "decode", "--model", str(workspace / "b1/final.ckpt"),
                       "--corpus", str(workspace / "corpus/test.tsv"),
                       "--out", str(hyps_path), "--beam", "3")
    assert code == 0 and "decoded" in out
    hyps = read_hypotheses(hyps_path)
    test_man = load_manifest(workspace / "corpus/test.tsv")
    assert set(hyps) == {r.utt_id for r in test_man.records}

    report_path = tmp_path / "report.json"
    code, out, _ = run(capsys, "evaluate", "--refs", str(workspace / "corpus/test.tsv"),
                       "--hyps", str(hyps_path), "--report", str(report_path),
                       "--group", "0")
    assert code == 0 and "overall WER" in out and "group" in out
    doc = json.loads(report_path.read_text())
    assert "overall" in doc and "group" in doc

    table_path = tmp_path / "table.txt"
    code, out, _ = run(capsys, "report", "--format", "text-table",
                       "--out", str(table_path), f"B1={report_path}")
    assert code == 0
    text = table_path.read_text()
    assert "B1" in text and "Ave." in text

    tsv_path = tmp_path / "table.tsv"
    code, _, _ = run(capsys, "report", "--format", "delimited",
                     "--out", str(tsv_path), f"B1={report_path}")
    assert code == 0
    table = load_delimited(tsv_path.read_text())
    assert table.rows[0][0] == "B1"
    assert table.rows[0][1]["Ave."] == pytest.approx(doc["overall"]["wer"])

    curve_path = tmp_path / "curve.tsv"
    code, out, _ = run(capsys, "report", "--format", "plot",
                       "--out", str(curve_path),
                       f"B1={workspace / 'b1/train.log.jsonl'}")
    assert code == 0
    lines = curve_path.read_text().splitlines()
    assert lines[0].split("\t")[:2] == ["epoch", "step"]
    assert len(lines) == 1 + 2  # header + one row per epoch


def test_probe_and_export(workspace, capsys, tmp_path):
    code, out, _ = run(capsys, "probe", "--model", str(workspace / "b1/final.ckpt"),
                       "--corpus", str(workspace / "corpus/test.tsv"),
                       "--which", "raw", "--out", str(tmp_path / "probe.json"))
    assert code == 0
    doc = json.loads(out.strip())
    assert doc["which"] == "raw" and 0.0 <= doc["accuracy"] <= 1.0
    assert json.loads((tmp_path / "probe.json").read_text()) == doc

    code, out, _ = run(capsys, "export-embeddings", "--model",
                       str(workspace / "b1/final.ckpt"),
                       "--corpus", str(workspace / "corpus/test.tsv"),
                       "--which", "invariant", "--out", str(tmp_path / "emb.aipf"))
    assert code == 0 and "exported" in out
    assert (tmp_path / "emb.aipf").is_file()
    assert (tmp_path / "emb.aipf.labels").is_file()


def test_pseudo_label_cli(workspace, capsys, tmp_path):
    restricted = tmp_path / "restricted.tsv"
    code, out, _ = run(capsys, "corpus", "restrict",
                       "--manifest", str(workspace / "corpus/train.tsv"),
                       "--keep-accents", "0", "--out", str(restricted))
    assert code == 0
    code, out, _ = run(capsys, "pseudo-label", "--model",
                       str(workspace / "b1/final.ckpt"),
                       "--corpus", str(restricted),
                       "--out", str(tmp_path / "pl.tsv"), "--beam", "2")
    assert code == 0 and "pseudo-labeled" in out
    merged = load_manifest(tmp_path / "pl.tsv")
    assert any(r.pseudo for r in merged.records)
    assert merged.feature_array(merged.records[0]).shape[1] == 5


def test_resume_cli(workspace, capsys, tmp_path):
    out_dir = tmp_path / "run"
    cfg = tmp_path / "c.cfg"
    cfg.write_text("epochs_pretrain = 1\nbatch_frames = 64\n"
                   "arch.invariant_hidden = 6\narch.invariant_layers = 1\n"
                   "arch.specific_hidden = 5\narch.specific_layers = 1\n"
                   "arch.disc_hidden = 5\narch.recon_hidden = 6\n"
                   "arch.recon_layers = 1\narch.encoder_hidden = 6\n"
                   "arch.encoder_layers = 1\narch.decoder_hidden = 6\n"
                   "arch.decoder_layers = 1\narch.attention_dim = 5\n"
                   "arch.token_embed_dim = 5\narch.accent_embed_dim = 3\n")
    base = ["train", "b1", "--corpus", str(workspace / "corpus/train.tsv"),
            "--out", str(out_dir), "--config", str(cfg), "--seed", "2"]
    assert main(base) == 0
    capsys.readouterr()
    code, out, _ = run(capsys, *base, "--resume")  # same epoch budget: no-op run
    assert code == 0


def test_error_lines_are_single_and_coded(capsys, tmp_path):
    code, _, err = run(capsys, "decode", "--model", str(tmp_path / "no.ckpt"),
                       "--corpus", str(tmp_path / "no.tsv"),
                       "--out", str(tmp_path / "h.txt"))
    assert code == 1
    assert err.count("\n") == 1 and err.startswith("error: ")

    code, _, err = run(capsys, "evaluate", "--refs", str(tmp_path / "no.tsv"),
                       "--hyps", str(tmp_path / "no.txt"),
                       "--report", str(tmp_path / "r.json"))
    assert code == 1 and err.startswith("error: data:")

    code, _, err = run(capsys, "report", "--format", "sideways",
                       "--out", str(tmp_path / "t"), "X=y")
    assert code == 1 and err.startswith("error: validation:")

    code, _, err = run(capsys, "train", "q1")
    assert code == 2
    assert err.count("\n") == 1 and err.startswith("error: usage:")

    code, _, err = run(capsys, "recipe", "run", str(tmp_path / "none.recipe"),
                       "--out", str(tmp_path / "o"))
    assert code == 1 and err.startswith("error: recipe:")


def test_config_error_through_cli(workspace, capsys, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("epochs_pretrain = soon\n")
    code, _, err = run(capsys, "train", "b1",
                       "--corpus", str(workspace / "corpus/train.tsv"),
                       "--out", str(tmp_path / "x"), "--config", str(bad))
    assert code == 1 and err.startswith("error: config:")
