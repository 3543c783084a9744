"""Content-free calibration baselines (CC and DC).

Both estimate a per-class prior from inputs that carry no instance content
and divide it out of the instance's class distribution. ``cc`` uses the fixed
string "N/A"; ``dc`` averages over random bags of in-domain words.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .data import Dataset, Instance, render
from .errors import DimensionMismatchError, MissingCorpusError
from .runtime.checkpoint import Model
from .runtime.scoring import batch_label_logprobs, encode_label, encode_prompt

MODES = ("cc", "dc")
CONTENT_FREE_TEXT = "N/A"
DEFAULT_BAGS = 20
PROB_FLOOR = 1e-6


@dataclass(frozen=True)
class CalibrationVector:
    probs: tuple[float, ...]
    mode: str
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 2 or np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("calibration probabilities must be positive and sum to 1")
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    def to_json(self) -> dict[str, Any]:
        return {"mode": self.mode, "provenance": dict(self.provenance), "probabilities": list(self.probs)}


def save_calibration(cal: CalibrationVector, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cal.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def softmax(scores: Sequence[float]) -> np.ndarray:
    z = np.asarray(scores, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def _smooth(p: np.ndarray) -> np.ndarray:
    p = np.maximum(p, PROB_FLOOR)
    return p / p.sum()


@dataclass(frozen=True)
class ContentFreeBags:
    """Random in-domain word bags standing in for (context, question)."""

    bags: tuple[tuple[str, str], ...]
    seed: int


def sample_bags(dataset: Dataset, n_bags: int = DEFAULT_BAGS, seed: int = 0) -> ContentFreeBags:
    """Bags drawn from the unigram distribution of the dataset's content words.

    Context and question bags have the mean word count of the corresponding
    instance field (rounded, at least one word).
    """
    counts = Counter()
    for inst in dataset:
        counts.update(inst.context.split())
        counts.update(inst.question.split())
    words = sorted(counts)
    freq = np.array([counts[w] for w in words], dtype=np.float64)
    freq /= freq.sum()
    ctx_len = max(1, round(np.mean([len(i.context.split()) for i in dataset])))
    q_len = max(1, round(np.mean([len(i.question.split()) for i in dataset])))
    rng = np.random.default_rng(seed)
    bags = []
    for _ in range(n_bags):
        ctx = rng.choice(len(words), size=ctx_len, p=freq)
        q = rng.choice(len(words), size=q_len, p=freq)
        bags.append((" ".join(words[i] for i in ctx), " ".join(words[i] for i in q)))
    return ContentFreeBags(tuple(bags), seed)


PROMPT_CHUNK = 128


def content_free_prompts(instruction: str, classes: Sequence[str], mode: str, *,
                         bags: ContentFreeBags | None = None) -> tuple[list[str], dict[str, Any]]:
    """Prompts with content replaced by filler; the choice list stays in place."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    shell = Instance("content-free", "", "", tuple(classes), 0, "ambig")
    if mode == "cc":
        prompt = render(instruction, shell, context=CONTENT_FREE_TEXT, question=CONTENT_FREE_TEXT)
        return [prompt], {"inputs": [CONTENT_FREE_TEXT], "seed": None}
    if bags is None:
        raise MissingCorpusError("dc mode needs word bags sampled from a dataset")
    prompts = [render(instruction, shell, context=c, question=q) for c, q in bags.bags]
    return prompts, {"inputs": [f"{c} | {q}" for c, q in bags.bags], "seed": bags.seed}


def _mean_distribution(normed: np.ndarray) -> np.ndarray:
    dists = np.stack([softmax(row) for row in normed])
    # fixed summation order over prompts
    return _smooth(dists.sum(axis=0) / len(dists))


def calibration_table(
    model: Model,
    instruction: str,
    class_sets: Sequence[Sequence[str]],
    mode: str,
    *,
    bags: ContentFreeBags | None = None,
) -> dict[tuple[str, ...], CalibrationVector]:
    """Calibration vectors for many choice lists under one instruction.

    All content-free prompts are scored against the union of labels in a few
    batched passes; each choice list then reads its own rows and columns.
    """
    sets = list(dict.fromkeys(tuple(c) for c in class_sets))
    if any(len(c) < 2 for c in sets):
        raise ValueError("need at least two classes")
    labels = sorted({c for cs in sets for c in cs})
    column = {c: j for j, c in enumerate(labels)}
    label_ids = [encode_label(model, c) for c in labels]
    lengths = np.array([len(i) for i in label_ids], dtype=np.float64)
    rows: list[tuple[tuple[str, ...], list[int]]] = []
    prompts: list[list[int]] = []
    prov: dict[str, Any] = {}
    for cs in sets:
        texts, prov = content_free_prompts(instruction, cs, mode, bags=bags)
        rows.append((cs, list(range(len(prompts), len(prompts) + len(texts)))))
        prompts += [encode_prompt(model, t, "") for t in texts]
    blocks = [batch_label_logprobs(model, prompts[i:i + PROMPT_CHUNK], label_ids)
              for i in range(0, len(prompts), PROMPT_CHUNK)]
    normed = np.concatenate(blocks, axis=0) / lengths
    return {
        cs: CalibrationVector(tuple(_mean_distribution(normed[np.ix_(idx, [column[c] for c in cs])])), mode, prov)
        for cs, idx in rows
    }


def content_free_distribution(
    model: Model,
    instruction: str,
    classes: Sequence[str],
    mode: str,
    dataset: Dataset | None = None,
    seed: int = 0,
    *,
    bags: ContentFreeBags | None = None,
    n_bags: int = DEFAULT_BAGS,
) -> CalibrationVector:
    """Class prior for ``instruction`` with both context and question replaced
    by content-free text. ``bags`` lets callers reuse one dc sample."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "dc" and bags is None:
        if dataset is None:
            raise MissingCorpusError("dc mode needs a dataset to sample in-domain words from")
        bags = sample_bags(dataset, n_bags, seed)
    return calibration_table(model, instruction, [classes], mode, bags=bags)[tuple(classes)]


def calibrate(scores: Sequence[float], cal: CalibrationVector) -> list[float]:
    """softmax(scores) / p_cf, renormalised."""
    if len(scores) != len(cal.probs):
        raise DimensionMismatchError(f"{len(scores)} scores vs {len(cal.probs)} calibration entries")
    q = softmax(scores)
    out = q / np.asarray(cal.probs)
    return list(out / out.sum())
