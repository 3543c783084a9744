from __future__ import annotations

import json

import pytest

from biasprune.data import Dataset, InstructionSet, save_dataset, save_instructions
from biasprune.errors import BoundsError, ConfigError, StageError
from biasprune.evaluation import (
    EvalReport,
    PipelineConfig,
    evaluate,
    mean_report,
    render_accuracy_table,
    render_gold_score_table,
    run_pipeline,
    sample_detection_set,
)
from biasprune.pruner import PruneMask, apply_mask
from biasprune.runtime.checkpoint import save_checkpoint


@pytest.fixture(scope="module")
def two_templates(planted):
    return InstructionSet(planted.instructions.templates[:2])


def test_all_gold_gives_100(planted, two_templates):
    disambig = Dataset("d", tuple(planted.dataset.subset("disambig")))
    report = evaluate(planted.model, disambig, two_templates, "original")
    assert report.per_instruction_accuracy == (100.0, 100.0)
    assert report.mean_accuracy == 100.0
    assert report.context_accuracy["ambig"] is None


def test_half_correct_gives_50(planted, two_templates):
    ambig, disambig = planted.dataset.subset("ambig"), planted.dataset.subset("disambig")
    four = Dataset("four", (ambig[0], ambig[1], disambig[0], disambig[1]))
    report = evaluate(planted.model, four, two_templates, "original")
    assert report.mean_accuracy == 50.0


def test_report_invariants(planted):
    report = evaluate(planted.model, planted.dataset, planted.instructions, "original")
    accs = report.per_instruction_accuracy
    assert len(accs) == len(planted.instructions)
    assert report.mean_accuracy == sum(accs) / len(accs)
    assert all(0 <= a <= 100 for a in accs)
    assert all(0 <= v <= 100 for v in report.gold_score.values())
    n_ambig = len(planted.dataset.subset("ambig"))
    # every instance lands in exactly one context split
    mixed = (report.context_accuracy["ambig"] * n_ambig
             + report.context_accuracy["disambig"] * (len(planted.dataset) - n_ambig)) / len(planted.dataset)
    assert mixed == pytest.approx(report.mean_accuracy, abs=1e-9)
    assert EvalReport.from_json(json.loads(json.dumps(report.to_json()))) == report


def test_method_preconditions(planted, two_templates):
    with pytest.raises(ValueError):
        evaluate(planted.model, planted.dataset, two_templates, "crispr")
    masked = apply_mask(planted.model, PruneMask((), planted.model.fingerprint))
    with pytest.raises(ValueError):
        evaluate(masked, planted.dataset, two_templates, "original")
    with pytest.raises(ValueError):
        evaluate(planted.model, planted.dataset, two_templates, "magic")


def test_empty_mask_crispr_equals_original(planted, two_templates):
    original = evaluate(planted.model, planted.dataset, two_templates, "original")
    masked = apply_mask(planted.model, PruneMask((), planted.model.fingerprint))
    crispr = evaluate(masked, planted.dataset, two_templates, "crispr")
    assert crispr.per_instruction_accuracy == original.per_instruction_accuracy
    assert crispr.gold_score == original.gold_score
    assert crispr.context_accuracy == original.context_accuracy


def test_calibrated_methods_run(planted, two_templates):
    for method in ("cc", "dc"):
        report = evaluate(planted.model, planted.dataset, two_templates, method)
        assert report.method == method
        # calibration changes decisions, never the gold-label likelihood
        assert report.gold_score == evaluate(planted.model, planted.dataset, two_templates, "original").gold_score


def test_mean_report(planted, two_templates):
    r = evaluate(planted.model, planted.dataset, two_templates, "original")
    m = mean_report([r, r])
    assert m.per_instruction_accuracy == r.per_instruction_accuracy
    assert m.gold_score == r.gold_score


def test_sample_detection_set(planted):
    full = sample_detection_set(planted.dataset, len(planted.dataset), seed=4)
    assert sorted(full.ids) == sorted(planted.dataset.ids)
    a, b = sample_detection_set(planted.dataset, 10, 1), sample_detection_set(planted.dataset, 10, 1)
    assert a.ids == b.ids and len(set(a.ids)) == 10
    assert sample_detection_set(planted.dataset, 10, 2).ids != a.ids
    with pytest.raises(BoundsError):
        sample_detection_set(planted.dataset, 0, 1)
    with pytest.raises(BoundsError):
        sample_detection_set(planted.dataset, len(planted.dataset) + 1, 1)


def test_table_shapes(planted, two_templates):
    r = evaluate(planted.model, planted.dataset, two_templates, "original")
    table = render_accuracy_table({"planted": {"original": r}})
    lines = table.splitlines()
    assert [ln.split("|")[0].strip() for ln in lines[3:]] == ["Original", "CC", "DC", "CRISPR"]
    assert "65.78" in table and "BBQ-SES (ref)" in table
    gold = render_gold_score_table({"planted": {"original": r}})
    assert "planted ambig" in gold and "planted disambig" in gold
    assert [ln.split("|")[0].strip() for ln in gold.splitlines()[3:]] == ["Original", "CRISPR"]


def test_config_defaults_follow_protocol(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"model": "m.crsp", "dataset": "d.jsonl", "output_dir": "out"}))
    cfg = PipelineConfig.from_file(tmp_path / "c.json")
    assert (cfg.n, cfg.k, cfg.trials) == (50, 10, 3)
    assert cfg.model == str(tmp_path / "m.crsp")
    assert cfg.protocol()["trial_seeds"] == [0, 1, 2]
    (tmp_path / "bad.json").write_text(json.dumps({"model": "m", "dataset": "d", "output_dir": "o", "bogus": 1}))
    with pytest.raises(ConfigError):
        PipelineConfig.from_file(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        PipelineConfig("m", "d", "o", n=-1)


def test_pipeline_stage_error_names_stage(tmp_path):
    cfg = PipelineConfig(str(tmp_path / "missing.crsp"), str(tmp_path / "d.jsonl"), str(tmp_path / "out"))
    with pytest.raises(StageError) as info:
        run_pipeline(cfg)
    assert info.value.stage == "load"


def test_small_pipeline(planted, two_templates, tmp_path):
    save_checkpoint(planted.model, tmp_path / "m.crsp")
    save_dataset(planted.dataset, tmp_path / "d.jsonl")
    save_instructions(two_templates, tmp_path / "i.json")
    cfg = PipelineConfig(str(tmp_path / "m.crsp"), str(tmp_path / "d.jsonl"), str(tmp_path / "out"),
                         instructions=str(tmp_path / "i.json"), n=1, k=4, trials=2,
                         methods=("original", "crispr"), heldout_dataset=str(tmp_path / "d.jsonl"))
    result = run_pipeline(cfg)
    assert [m.ids[0] for m in result.masks] == [planted.planted] * 2
    assert result.reports["crispr"].context_accuracy["ambig"] == 100.0
    assert result.reports["crispr"].config["trials"] == 2
    names = {p.name for p in (tmp_path / "out").iterdir()}
    assert {"mask_trial0.json", "mask_trial1.json", "report_original.json", "report_crispr.json",
            "summary.json", "tables.txt", "heldout_report_original.json"} <= names
    assert str(tmp_path) not in (tmp_path / "out" / "report_crispr.json").read_text()
