"""Instances, datasets and instruction templates, with their file formats.

Dataset files are JSON lines, one instance per line::

    {"id": "...", "context": "...", "question": "...", "choices": [...],
     "gold_index": 0, "context_type": "ambig"}

Instruction files are a JSON array of template strings, each containing
``{context}``, ``{question}`` and ``{choices}`` exactly once.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

from .errors import DatasetError

CONTEXT_TYPES = ("ambig", "disambig")
PLACEHOLDERS = ("{context}", "{question}", "{choices}")


@dataclass(frozen=True)
class Instance:
    id: str
    context: str
    question: str
    choices: tuple[str, ...]
    gold_index: int
    context_type: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "choices", tuple(self.choices))
        if len(self.choices) < 2:
            raise DatasetError(f"{self.id}: need at least two choices")
        if len(set(self.choices)) != len(self.choices):
            raise DatasetError(f"{self.id}: choices must be pairwise distinct")
        if not 0 <= self.gold_index < len(self.choices):
            raise DatasetError(f"{self.id}: gold_index {self.gold_index} out of range")
        if self.context_type not in CONTEXT_TYPES:
            raise DatasetError(f"{self.id}: context_type must be one of {CONTEXT_TYPES}")

    @property
    def gold(self) -> str:
        return self.choices[self.gold_index]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["choices"] = list(self.choices)
        return d


@dataclass(frozen=True)
class Dataset:
    name: str
    instances: tuple[Instance, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "instances", tuple(self.instances))
        if not self.instances:
            raise DatasetError(f"dataset {self.name!r} is empty")
        ids = [inst.id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise DatasetError(f"dataset {self.name!r} has duplicate instance ids")

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[Instance]:
        return iter(self.instances)

    @property
    def ids(self) -> list[str]:
        return [inst.id for inst in self.instances]

    def subset(self, context_type: str) -> list[Instance]:
        return [inst for inst in self.instances if inst.context_type == context_type]


def render_choices(choices: Sequence[str]) -> str:
    return ", ".join(choices)


@dataclass(frozen=True)
class InstructionSet:
    templates: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "templates", tuple(self.templates))
        if not self.templates:
            raise DatasetError("instruction set is empty")
        for i, tpl in enumerate(self.templates):
            for ph in PLACEHOLDERS:
                if tpl.count(ph) != 1:
                    raise DatasetError(f"template {i} must contain {ph} exactly once")

    def __len__(self) -> int:
        return len(self.templates)

    def __getitem__(self, i: int) -> str:
        return self.templates[i]


def render(template: str, instance: Instance, *, context: str | None = None, question: str | None = None) -> str:
    """Fill a template; ``context``/``question`` override the instance's content."""
    return (
        template.replace("{context}", instance.context if context is None else context)
        .replace("{question}", instance.question if question is None else question)
        .replace("{choices}", render_choices(instance.choices))
    )


def load_dataset(path: str | Path, name: str | None = None) -> Dataset:
    path = Path(path)
    instances = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            instances.append(Instance(
                id=str(rec["id"]),
                context=rec["context"],
                question=rec["question"],
                choices=tuple(rec["choices"]),
                gold_index=int(rec["gold_index"]),
                context_type=rec["context_type"],
            ))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    return Dataset(name or path.stem, tuple(instances))


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    lines = [json.dumps(inst.to_dict(), sort_keys=True) for inst in dataset]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_instructions(path: str | Path) -> InstructionSet:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list) or not all(isinstance(t, str) for t in data):
        raise DatasetError(f"{path}: expected a JSON array of strings")
    return InstructionSet(tuple(data))


def save_instructions(instructions: InstructionSet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(list(instructions.templates), indent=2) + "\n", encoding="utf-8")


def default_instructions() -> InstructionSet:
    """The ten bundled templates."""
    raw = resources.files("biasprune.resources").joinpath("instructions.json").read_text(encoding="utf-8")
    return InstructionSet(tuple(json.loads(raw)))
