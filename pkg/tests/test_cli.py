from __future__ import annotations

import json

import pytest

from biasprune.cli import main
from biasprune.pruner import load_mask
from biasprune.runtime.checkpoint import load_checkpoint


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fx")
    assert main(["make-fixture", "--out-dir", str(out), "--seed", "0"]) == 0
    return out


def test_make_fixture_files(fixture_dir, planted):
    names = {p.name for p in fixture_dir.iterdir()}
    assert {"model.crsp", "dataset.jsonl", "instructions.json", "config.json", "NOTES.txt"} <= names
    assert load_checkpoint(fixture_dir / "model.crsp").fingerprint == planted.model.fingerprint
    assert json.loads((fixture_dir / "config.json").read_text())["output_dir"] == "run"


def test_detect_prune_eval(fixture_dir, planted, tmp_path, capsys):
    mask_path = tmp_path / "mask.json"
    assert main(["detect", "--model", str(fixture_dir / "model.crsp"), "--dataset", str(fixture_dir / "dataset.jsonl"),
                 "--instructions", str(fixture_dir / "instructions.json"), "--n", "1", "--k", "4",
                 "--out", str(mask_path)]) == 0
    mask = load_mask(mask_path)
    assert mask.ids == [planted.planted]

    for flag in ([], ["--compact"]):
        out = tmp_path / f"pruned{len(flag)}.crsp"
        assert main(["prune", "--model", str(fixture_dir / "model.crsp"), "--mask", str(mask_path),
                     "--out", str(out), *flag]) == 0
    assert load_checkpoint(tmp_path / "pruned0.crsp").lineage == planted.model.fingerprint
    # compaction renumbers channels, so the result starts a fresh lineage
    compacted = load_checkpoint(tmp_path / "pruned1.crsp")
    assert compacted.lineage is None
    assert compacted.config.ffn_width("decoder", 1) == planted.model.config.d_ff - 1

    report = tmp_path / "r.json"
    assert main(["eval", "--model", str(fixture_dir / "model.crsp"), "--dataset", str(fixture_dir / "dataset.jsonl"),
                 "--instructions", str(fixture_dir / "instructions.json"), "--method", "crispr",
                 "--mask", str(mask_path), "--report", str(report), "--table"]) == 0
    assert json.loads(report.read_text())["context_accuracy"]["ambig"] == 100.0
    assert "CRISPR" in capsys.readouterr().out


def test_detect_trial_suffix(fixture_dir, tmp_path):
    assert main(["detect", "--model", str(fixture_dir / "model.crsp"), "--dataset", str(fixture_dir / "dataset.jsonl"),
                 "--instructions", str(fixture_dir / "instructions.json"), "--n", "2", "--k", "3",
                 "--trials", "2", "--out", str(tmp_path / "m.json")]) == 0
    assert (tmp_path / "m_trial0.json").exists() and (tmp_path / "m_trial1.json").exists()


def test_errors_exit_2(tmp_path, capsys):
    assert main(["prune", "--model", str(tmp_path / "nope.crsp"), "--mask", str(tmp_path / "m.json"),
                 "--out", str(tmp_path / "o.crsp")]) == 2
    assert "error:" in capsys.readouterr().err


def test_bad_arguments_rejected():
    with pytest.raises(SystemExit):
        main(["eval", "--method", "magic"])
