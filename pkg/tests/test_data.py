from __future__ import annotations

import pytest

from biasprune.data import (
    Dataset,
    Instance,
    InstructionSet,
    default_instructions,
    load_dataset,
    load_instructions,
    render,
    save_dataset,
    save_instructions,
)
from biasprune.errors import DatasetError


def test_instance_validation():
    with pytest.raises(DatasetError):
        Instance("a", "c", "q", ("x",), 0, "ambig")
    with pytest.raises(DatasetError):
        Instance("a", "c", "q", ("x", "x"), 0, "ambig")
    with pytest.raises(DatasetError):
        Instance("a", "c", "q", ("x", "y"), 2, "ambig")
    with pytest.raises(DatasetError):
        Instance("a", "c", "q", ("x", "y"), 0, "vague")


def test_dataset_validation():
    inst = Instance("a", "c", "q", ("x", "y"), 1, "disambig")
    with pytest.raises(DatasetError):
        Dataset("d", ())
    with pytest.raises(DatasetError):
        Dataset("d", (inst, inst))
    assert Dataset("d", (inst,)).subset("disambig") == [inst]


def test_default_instructions():
    ins = default_instructions()
    assert len(ins) == 10
    assert len(set(ins.templates)) == 10
    with pytest.raises(DatasetError):
        InstructionSet(("no placeholders",))


def test_render():
    inst = Instance("a", "ctx", "who?", ("x", "y"), 0, "ambig")
    assert render("{context}|{question}|{choices}", inst) == "ctx|who?|x, y"
    assert render("{context}|{question}|{choices}", inst, context="N/A", question="N/A") == "N/A|N/A|x, y"


def test_file_round_trips(planted, tmp_path):
    save_dataset(planted.dataset, tmp_path / "d.jsonl")
    back = load_dataset(tmp_path / "d.jsonl", name=planted.dataset.name)
    assert back == planted.dataset
    save_instructions(planted.instructions, tmp_path / "i.json")
    assert load_instructions(tmp_path / "i.json") == planted.instructions


def test_bad_dataset_line(tmp_path):
    (tmp_path / "d.jsonl").write_text('{"id": "a"}\n')
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "d.jsonl")
