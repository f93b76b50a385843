"""Loading and normalization of the three NLE datasets (e-SNLI, CoS-E, ComVE).

All datasets are normalized into a single :class:`Instance` representation:
an ordered map of named text fields, a per-instance label set, and optional
gold label / gold explanation. The normalized form roundtrips losslessly
through JSONL (see :func:`export_normalized`).
"""

from __future__ import annotations

import csv
import json
import unicodedata
from dataclasses import dataclass, field as dc_field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional


class TaskKind(str, Enum):
    NLI = "nli"
    QA = "qa"
    COMVE = "comve"


NLI_LABELS = ["entailment", "neutral", "contradiction"]
COMVE_LABELS = ["first sentence", "second sentence"]

# Required field names per task, in canonical order.
TASK_FIELDS = {
    TaskKind.NLI: ["premise", "hypothesis"],
    TaskKind.QA: ["question", "choice1", "choice2", "choice3"],
    TaskKind.COMVE: ["sent1", "sent2"],
}


class DataError(Exception):
    """Raised for unreadable files, schema violations and bad labels."""


def _norm_text(text: str) -> str:
    return unicodedata.normalize("NFC", text).strip()


@dataclass(frozen=True)
class Instance:
    """One task input with its per-instance label set."""

    id: str
    task: TaskKind
    fields: dict  # name -> text, canonical field order
    label_set: tuple
    gold_label: Optional[str] = None
    gold_nle: Optional[str] = None

    def validate(self) -> None:
        expected = TASK_FIELDS[self.task]
        if list(self.fields.keys()) != expected:
            raise DataError(
                f"instance {self.id}: fields {list(self.fields)} != expected {expected}"
            )
        for name, value in self.fields.items():
            if not value or not value.strip():
                raise DataError(f"instance {self.id}: empty field {name!r}")
        n_expected = 2 if self.task is TaskKind.COMVE else 3
        if len(self.label_set) != n_expected:
            raise DataError(
                f"instance {self.id}: label set size {len(self.label_set)}, expected {n_expected}"
            )
        if self.gold_label is not None and self.gold_label not in self.label_set:
            raise DataError(
                f"instance {self.id}: gold label {self.gold_label!r} not in label set {list(self.label_set)}"
            )

    def to_wire(self) -> dict:
        return {
            "id": self.id,
            "task": self.task.value,
            "fields": dict(self.fields),
            "label_set": list(self.label_set),
            "gold_label": self.gold_label,
            "gold_nle": self.gold_nle,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "Instance":
        inst = cls(
            id=str(obj["id"]),
            task=TaskKind(obj["task"]),
            fields=dict(obj["fields"]),
            label_set=tuple(obj["label_set"]),
            gold_label=obj.get("gold_label"),
            gold_nle=obj.get("gold_nle"),
        )
        inst.validate()
        return inst

    def with_field(self, name: str, value: str) -> "Instance":
        if name not in self.fields:
            raise DataError(f"instance {self.id}: unknown field {name!r}")
        fields = dict(self.fields)
        fields[name] = value
        return Instance(
            id=self.id,
            task=self.task,
            fields=fields,
            label_set=self.label_set,
            gold_label=self.gold_label,
            gold_nle=self.gold_nle,
        )


@dataclass
class Dataset:
    instances: list
    kind: TaskKind
    label_set: tuple
    split: str = "test"
    # (row_index, reason) for source rows dropped during load; not serialized.
    rejects: list = dc_field(default_factory=list)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.instances == other.instances
            and self.kind == other.kind
            and self.label_set == other.label_set
            and self.split == other.split
        )

    def validate(self) -> None:
        seen = set()
        for inst in self.instances:
            if inst.id in seen:
                raise DataError(f"duplicate instance id {inst.id!r}")
            seen.add(inst.id)
            inst.validate()


# Default source column names. Upstream releases vary; override via `columns`.
DEFAULT_COLUMNS = {
    TaskKind.NLI: {
        "premise": "Sentence1",
        "hypothesis": "Sentence2",
        "label": "gold_label",
        "nle": "Explanation_1",
    },
    TaskKind.QA: {
        "question": "question",
        "choices": "choices",
        "label": "answer",
        "nle": "explanation",
    },
    TaskKind.COMVE: {
        "sent1": "sent0",
        "sent2": "sent1",
        "label": "false_idx",
        "nle": "reason",
    },
}


def _dataset_label_set(kind: TaskKind) -> tuple:
    if kind is TaskKind.NLI:
        return tuple(NLI_LABELS)
    if kind is TaskKind.COMVE:
        return tuple(COMVE_LABELS)
    return ()  # CoS-E labels are per-instance choice lists


def _row_to_instance(
    kind: TaskKind, columns: dict, row: dict, row_index: int, split: str
) -> Instance:
    def col(key: str) -> str:
        return _norm_text(row.get(columns[key], "") or "")

    inst_id = _norm_text(row.get("id", "") or "") or f"{split}-{row_index:06d}"

    if kind is TaskKind.NLI:
        fields = {"premise": col("premise"), "hypothesis": col("hypothesis")}
        label_set = tuple(NLI_LABELS)
        gold = col("label").lower() or None
    elif kind is TaskKind.QA:
        raw = col("choices")
        choices = [_norm_text(c) for c in raw.split(",")] if raw else []
        if len(choices) != 3:
            raise DataError(f"row {row_index}: expected 3 choices, got {len(choices)}")
        fields = {
            "question": col("question"),
            "choice1": choices[0],
            "choice2": choices[1],
            "choice3": choices[2],
        }
        label_set = tuple(c.lower() for c in choices)
        gold = col("label").lower() or None
    else:
        fields = {"sent1": col("sent1"), "sent2": col("sent2")}
        label_set = tuple(COMVE_LABELS)
        raw_label = col("label")
        if raw_label == "":
            gold = None
        elif raw_label in ("0", "1"):
            gold = COMVE_LABELS[int(raw_label)]
        else:
            gold = raw_label.lower()
    nle = col("nle") or None
    if gold is not None and gold not in label_set:
        raise DataError(f"row {row_index}: label {gold!r} outside label set {list(label_set)}")
    inst = Instance(
        id=inst_id,
        task=kind,
        fields=fields,
        label_set=label_set,
        gold_label=gold,
        gold_nle=nle,
    )
    return inst


def load_dataset(
    path,
    kind: TaskKind,
    format: str = "csv",
    columns: Optional[dict] = None,
    split: str = "test",
) -> Dataset:
    """Load a dataset file into the normalized representation.

    ``format`` is one of ``csv``, ``tsv`` or ``jsonl`` (the normalized JSONL
    schema written by :func:`export_normalized`). Rows with missing required
    fields are dropped and reported in ``Dataset.rejects``; unknown columns
    and labels outside the label set are hard errors.
    """
    path = Path(path)
    kind = TaskKind(kind)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    if format == "jsonl":
        return _load_jsonl(path, kind, split)
    if format not in ("csv", "tsv"):
        raise DataError(f"unknown format {format!r}")
    columns = dict(DEFAULT_COLUMNS[kind], **(columns or {}))
    delim = "\t" if format == "tsv" else ","
    instances: list = []
    rejects: list = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delim)
        if reader.fieldnames is not None:
            allowed = set(columns.values()) | {"id"}
            unknown = [c for c in reader.fieldnames if c not in allowed]
            if unknown:
                raise DataError(f"unknown column {unknown[0]!r} in {path.name}")
        for row_index, row in enumerate(reader):
            try:
                inst = _row_to_instance(kind, columns, row, row_index, split)
                inst.validate()
            except DataError as exc:
                if "outside label set" in str(exc):
                    raise
                rejects.append((row_index, str(exc)))
                continue
            instances.append(inst)
    ds = Dataset(
        instances=instances,
        kind=kind,
        label_set=_dataset_label_set(kind),
        split=split,
        rejects=rejects,
    )
    ds.validate()
    return ds


def _load_jsonl(path: Path, kind: TaskKind, split: str) -> Dataset:
    instances = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path.name}:{line_no + 1}: bad JSON: {exc}") from exc
            inst = Instance.from_wire(obj)
            if inst.task is not kind:
                raise DataError(
                    f"{path.name}:{line_no + 1}: task {inst.task.value!r} != expected {kind.value!r}"
                )
            instances.append(inst)
    ds = Dataset(
        instances=instances,
        kind=kind,
        label_set=_dataset_label_set(kind),
        split=split,
    )
    ds.validate()
    return ds


def export_normalized(ds: Dataset, path) -> None:
    """Write the dataset as one JSON object per line (UTF-8, LF endings)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for inst in ds.instances:
            fh.write(json.dumps(inst.to_wire(), ensure_ascii=False) + "\n")


def write_jsonl(objs: Iterable[dict], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for obj in objs:
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_jsonl(path) -> list:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
