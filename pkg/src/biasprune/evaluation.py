"""Evaluation protocols, the detect-prune pipeline and report rendering.

Every method predicts the argmax over the instance's own choice list. The
gold score is the length-normalised gold-label probability,
``exp(mean token log-prob)``, reported x100.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .baselines import ContentFreeBags, calibrate, calibration_table, sample_bags
from .data import CONTEXT_TYPES, Dataset, InstructionSet, default_instructions, load_dataset, load_instructions, render
from .detector import detect_multi, rank_neurons
from .errors import BiasPruneError, BoundsError, ConfigError, EvaluationError, StageError
from .pruner import DEFAULT_N, PruneMask, apply_mask, save_mask, select_top_n
from .runtime.checkpoint import Model, load_checkpoint
from .runtime.scoring import batch_label_logprobs, encode_label, encode_prompt

METHODS = ("original", "cc", "dc", "crispr")
METHOD_LABELS = {"original": "Original", "cc": "CC", "dc": "DC", "crispr": "CRISPR"}
DEFAULT_K = 10
DEFAULT_TRIALS = 3
DEFAULT_BAGS = 20
EVAL_CHUNK = 16

# Published Flan-T5-base results on three BBQ splits, displayed beside our
# numbers for orientation only. Nothing is asserted against them.
REFERENCE_ACCURACY = {
    "BBQ-SES": {"original": 65.78, "cc": 45.87, "dc": 49.12, "crispr": 72.25},
    "BBQ-AGE": {"original": 43.81, "cc": 40.80, "dc": 40.71, "crispr": 58.49},
    "BBQ-Disability": {"original": 44.02, "cc": 44.38, "dc": 44.15, "crispr": 57.94},
}
REFERENCE_GOLD_SCORE = {
    "BBQ-SES": {"original": (44.36, 71.77), "crispr": (63.14, 67.01)},
    "BBQ-AGE": {"original": (24.19, 57.47), "crispr": (58.57, 43.37)},
    "BBQ-Disability": {"original": (21.32, 59.41), "crispr": (44.93, 55.30)},
}


@dataclass(frozen=True)
class EvalReport:
    method: str
    per_instruction_accuracy: tuple[float, ...]
    mean_accuracy: float
    context_accuracy: Mapping[str, float | None]
    gold_score: Mapping[str, float | None]
    config: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        accs = tuple(float(a) for a in self.per_instruction_accuracy)
        if not accs or any(not 0.0 <= a <= 100.0 for a in accs):
            raise ValueError("accuracies must lie in [0, 100]")
        object.__setattr__(self, "per_instruction_accuracy", accs)
        object.__setattr__(self, "config", json.loads(json.dumps(dict(self.config), sort_keys=True)))

    def to_json(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "per_instruction_accuracy": list(self.per_instruction_accuracy),
            "mean_accuracy": self.mean_accuracy,
            "context_accuracy": dict(self.context_accuracy),
            "gold_score": dict(self.gold_score),
            "config": dict(self.config),
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> EvalReport:
        return cls(
            data["method"],
            tuple(data["per_instruction_accuracy"]),
            data["mean_accuracy"],
            dict(data["context_accuracy"]),
            dict(data["gold_score"]),
            dict(data.get("config", {})),
        )


def save_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _mean(values: Sequence[float]) -> float | None:
    return sum(values) / len(values) if values else None


def _check_method(model: Model, method: str) -> None:
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    modified = model.lineage is not None or bool(model.config.ffn_widths)
    if method == "crispr" and not modified:
        raise ValueError("crispr evaluation needs a masked or compacted model")
    if method != "crispr" and modified:
        raise ValueError(f"{method} evaluation needs the unmodified model")


def _chunk_scores(model: Model, prompts: Sequence[str], choice_lists: Sequence[Sequence[str]]) -> list[np.ndarray]:
    """Length-normalised log-likelihood of each instance's choices, one forward
    pass over the union of the chunk's labels."""
    labels = sorted({c for choices in choice_lists for c in choices})
    column = {c: j for j, c in enumerate(labels)}
    ids = [encode_label(model, c) for c in labels]
    summed = batch_label_logprobs(model, [encode_prompt(model, p, "") for p in prompts], ids)
    normed = summed / np.array([len(i) for i in ids], dtype=np.float64)
    return [np.array([row[column[c]] for c in choices]) for row, choices in zip(normed, choice_lists)]


def _dataset_scores(model: Model, dataset: Dataset, template: str) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    insts = list(dataset)
    for start in range(0, len(insts), EVAL_CHUNK):
        chunk = insts[start:start + EVAL_CHUNK]
        try:
            out += _chunk_scores(model, [render(template, i) for i in chunk], [i.choices for i in chunk])
        except BiasPruneError:
            # rescore one by one to name the offending instance
            for inst in chunk:
                try:
                    out += _chunk_scores(model, [render(template, inst)], [inst.choices])
                except BiasPruneError as exc:
                    raise EvaluationError(inst.id, exc) from exc
    return out


def evaluate(
    model: Model,
    dataset: Dataset,
    instructions: InstructionSet,
    method: str,
    *,
    dc_seed: int = 0,
    n_bags: int = DEFAULT_BAGS,
    config: Mapping[str, Any] | None = None,
) -> EvalReport:
    """Accuracy of ``method`` under every instruction, plus gold scores by context type."""
    _check_method(model, method)
    bags: ContentFreeBags | None = sample_bags(dataset, n_bags, dc_seed) if method == "dc" else None
    per_instruction = []
    correct_by_type: dict[str, list[float]] = {t: [] for t in CONTEXT_TYPES}
    gold_by_type: dict[str, list[float]] = {t: [] for t in CONTEXT_TYPES}
    for t_idx, template in enumerate(instructions):
        correct = 0
        table = {}
        if method in ("cc", "dc"):
            try:
                table = calibration_table(model, template, [i.choices for i in dataset], method, bags=bags)
            except BiasPruneError as exc:
                raise EvaluationError(f"<content-free, instruction {t_idx}>", exc) from exc
        for inst, scores in zip(dataset, _dataset_scores(model, dataset, template)):
            decision = np.asarray(calibrate(scores, table[inst.choices])) if table else scores
            hit = int(np.argmax(decision)) == inst.gold_index
            correct += hit
            correct_by_type[inst.context_type].append(100.0 * hit)
            gold_by_type[inst.context_type].append(100.0 * math.exp(scores[inst.gold_index]))
        per_instruction.append(100.0 * correct / len(dataset))
    echo = {
        "dataset": dataset.name,
        "n_instances": len(dataset),
        "n_instructions": len(instructions),
        **({"dc_seed": dc_seed, "dc_bags": n_bags} if method == "dc" else {}),
        **dict(config or {}),
    }
    return EvalReport(
        method,
        tuple(per_instruction),
        sum(per_instruction) / len(per_instruction),
        {t: _mean(v) for t, v in correct_by_type.items()},
        {t: _mean(v) for t, v in gold_by_type.items()},
        echo,
    )


def mean_report(reports: Sequence[EvalReport], config: Mapping[str, Any] | None = None) -> EvalReport:
    """Field-wise mean of same-method reports (used for the per-trial crispr runs)."""
    if not reports:
        raise ValueError("need at least one report")
    method = reports[0].method
    if any(r.method != method for r in reports):
        raise ValueError("reports mix methods")
    n = len(reports)
    per_instr = tuple(sum(col) / n for col in zip(*(r.per_instruction_accuracy for r in reports)))

    def field_mean(attr: str) -> dict[str, float | None]:
        out = {}
        for t in CONTEXT_TYPES:
            vals = [getattr(r, attr)[t] for r in reports]
            out[t] = None if any(v is None for v in vals) else sum(vals) / n
        return out

    return EvalReport(method, per_instr, sum(per_instr) / len(per_instr), field_mean("context_accuracy"),
                      field_mean("gold_score"), dict(config or reports[0].config))


def sample_detection_set(dataset: Dataset, k: int, seed: int) -> Dataset:
    """Uniform sample of ``k`` instances without replacement, in draw order."""
    if not 1 <= k <= len(dataset):
        raise BoundsError(f"k={k} outside [1, {len(dataset)}]")
    idx = np.random.default_rng(seed).choice(len(dataset), size=k, replace=False)
    return Dataset(f"{dataset.name}[sample seed={seed}]", tuple(dataset.instances[i] for i in idx))


@dataclass(frozen=True)
class PipelineConfig:
    """Inputs and protocol knobs; the defaults follow the standard protocol
    (10 templates, 3 trials of 10 samples, top-50 neurons)."""

    model: str
    dataset: str
    output_dir: str
    instructions: str | None = None
    n: int = DEFAULT_N
    k: int = DEFAULT_K
    trials: int = DEFAULT_TRIALS
    seed: int = 0
    detection_instructions: tuple[int, ...] | None = None
    methods: tuple[str, ...] = METHODS
    dc_bags: int = DEFAULT_BAGS
    heldout_dataset: str | None = None

    def __post_init__(self) -> None:
        if self.n < 0 or self.k < 1 or self.trials < 1 or self.dc_bags < 1:
            raise ConfigError("need n >= 0, k >= 1, trials >= 1, dc_bags >= 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}")
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.detection_instructions is not None:
            object.__setattr__(self, "detection_instructions", tuple(self.detection_instructions))

    @classmethod
    def from_file(cls, path: str | Path) -> PipelineConfig:
        """Load a JSON config; relative paths resolve against the config's directory."""
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        base = path.resolve().parent
        for key in ("model", "dataset", "output_dir", "instructions", "heldout_dataset"):
            if data.get(key) is not None:
                data[key] = str(base / data[key])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def protocol(self) -> dict[str, Any]:
        """Settings echoed into every report (no paths)."""
        return {
            "n": self.n,
            "k": self.k,
            "trials": self.trials,
            "seed": self.seed,
            "trial_seeds": [self.seed + t for t in range(self.trials)],
            "detection_instructions": list(self.detection_instructions) if self.detection_instructions else "all",
            "dc_bags": self.dc_bags,
        }


@dataclass
class PipelineResult:
    masks: list[PruneMask]
    reports: dict[str, EvalReport]
    crispr_trials: list[EvalReport]
    heldout: dict[str, EvalReport] = field(default_factory=dict)


def _stage(stage: str, context: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (BiasPruneError, OSError, ValueError) as exc:
        raise StageError(stage, context, exc) from exc


def build_mask(model: Model, dataset: Dataset, instructions: InstructionSet, *, n: int, k: int, seed: int,
               instruction_ids: Sequence[int] | None = None, trials: int | None = None) -> PruneMask:
    """One detection trial: sample k instances, score, rank, keep the top n."""
    sample = sample_detection_set(dataset, k, seed)
    score_map = detect_multi(model, sample, instructions, instruction_ids=instruction_ids, seed=seed)
    prov = {
        "dataset": dataset.name,
        "instruction_ids": score_map.provenance["instruction_ids"],
        "sample_ids": [inst.id for inst in sample],
        "seed": seed,
        "trials": trials,
    }
    if n == 0:
        return PruneMask((), model.mask_fingerprint, prov)
    return select_top_n(rank_neurons(score_map), n, model.mask_fingerprint, prov)


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """Detect, prune and evaluate; writes masks, reports, a summary and text tables."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = _stage("load", config.model, load_checkpoint, config.model)
    dataset = _stage("load", config.dataset, load_dataset, config.dataset)
    instructions = (
        _stage("load", config.instructions, load_instructions, config.instructions)
        if config.instructions else default_instructions()
    )
    protocol = config.protocol()

    masks = []
    for t in range(config.trials):
        seed = config.seed + t
        mask = _stage("detect", f"trial {t} seed {seed}", build_mask, model, dataset, instructions,
                      n=config.n, k=config.k, seed=seed, instruction_ids=config.detection_instructions,
                      trials=config.trials)
        save_mask(mask, out / f"mask_trial{t}.json")
        masks.append(mask)

    def run_methods(data: Dataset) -> tuple[dict[str, EvalReport], list[EvalReport]]:
        reports, trials = {}, []
        for method in config.methods:
            if method == "crispr":
                for t, mask in enumerate(masks):
                    pruned = _stage("prune", f"trial {t}", apply_mask, model, mask)
                    trials.append(_stage("evaluate", f"crispr trial {t} on {data.name}", evaluate, pruned, data,
                                         instructions, "crispr",
                                         config={**protocol, "trial": t, "sample_ids": mask.provenance["sample_ids"]}))
                reports["crispr"] = mean_report(trials, {**protocol, "aggregate": "mean over trials",
                                                         "sample_ids": [m.provenance["sample_ids"] for m in masks],
                                                         "dataset": data.name, "n_instances": len(data),
                                                         "n_instructions": len(instructions)})
            else:
                reports[method] = _stage("evaluate", f"{method} on {data.name}", evaluate, model, data,
                                         instructions, method, dc_seed=config.seed, n_bags=config.dc_bags,
                                         config=protocol)
        return reports, trials

    reports, crispr_trials = run_methods(dataset)
    for method, report in reports.items():
        save_report(report, out / f"report_{method}.json")
    for t, report in enumerate(crispr_trials):
        save_report(report, out / f"report_crispr_trial{t}.json")

    heldout: dict[str, EvalReport] = {}
    columns = {dataset.name: reports}
    if config.heldout_dataset:
        other = _stage("load", config.heldout_dataset, load_dataset, config.heldout_dataset)
        heldout, _ = run_methods(other)
        for method, report in heldout.items():
            save_report(report, out / f"heldout_report_{method}.json")
        columns[other.name] = heldout

    summary = {
        "protocol": protocol,
        "mean_accuracy": {d: {m: r.mean_accuracy for m, r in rs.items()} for d, rs in columns.items()},
        "gold_score": {d: {m: dict(r.gold_score) for m, r in rs.items()} for d, rs in columns.items()},
        "masks": [f"mask_trial{t}.json" for t in range(config.trials)],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    tables = render_accuracy_table(columns) + "\n\n" + render_gold_score_table(columns) + "\n"
    (out / "tables.txt").write_text(tables, encoding="utf-8")
    return PipelineResult(masks, reports, crispr_trials, heldout)


def _fmt(value: float | None) -> str:
    return "-" if value is None else f"{value:.2f}"


def _align(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = [" | ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines)


def render_accuracy_table(columns: Mapping[str, Mapping[str, EvalReport]], *, references: bool = True) -> str:
    """Mean accuracy: one row per method, one column per dataset, then reference columns."""
    names = list(columns)
    refs = list(REFERENCE_ACCURACY) if references else []
    rows = [["Method", *names, *(f"{r} (ref)" for r in refs)]]
    for method in METHODS:
        cells = [_fmt(columns[d][method].mean_accuracy) if method in columns[d] else "-" for d in names]
        rows.append([METHOD_LABELS[method], *cells, *(_fmt(REFERENCE_ACCURACY[r][method]) for r in refs)])
    return "Mean accuracy (%)\n" + _align(rows)


def render_gold_score_table(columns: Mapping[str, Mapping[str, EvalReport]], *, references: bool = True) -> str:
    """Mean gold score x100 split into ambig/disambig columns, Original and CRISPR rows."""
    names = list(columns)
    refs = list(REFERENCE_GOLD_SCORE) if references else []
    header = ["Method"]
    for d in names:
        header += [f"{d} ambig", f"{d} disambig"]
    for r in refs:
        header += [f"{r} ambig (ref)", f"{r} disambig (ref)"]
    rows = [header]
    for method in ("original", "crispr"):
        row = [METHOD_LABELS[method]]
        for d in names:
            rep = columns[d].get(method)
            row += [_fmt(rep.gold_score["ambig"]), _fmt(rep.gold_score["disambig"])] if rep else ["-", "-"]
        for r in refs:
            row += [_fmt(v) for v in REFERENCE_GOLD_SCORE[r][method]]
        rows.append(row)
    return "Mean gold score x100\n" + _align(rows)
