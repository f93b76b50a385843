"""The input reconstruction test.

Rebuild an input from the reasons stated in a generated explanation and
check that the model's prediction survives. For NLI the explanation is
parsed against a table of two-slot templates and the captures become the
new premise/hypothesis pair; for the commonsense-choice task the sensible
sentence is replaced by the explanation.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .corpus import Instance, TaskKind, COMVE_LABELS
from .lexicon import Lexicon, tokenize
from .protocol import ConformanceError, Endpoint, EndpointError, ModelOutput, ProtocolError


class ReconstructionError(Exception):
    pass


_SLOT_RE = re.compile(r"<[XY]>")


@dataclass(frozen=True)
class NleTemplate:
    id: str
    pattern: str
    reconstructable: bool = True
    label_scope: Optional[str] = None

    @property
    def n_slots(self) -> int:
        return len(_SLOT_RE.findall(self.pattern))

    @property
    def literal_length(self) -> int:
        return sum(len(lit) for lit in _SLOT_RE.split(self.pattern))

    def regex(self) -> re.Pattern:
        parts = _SLOT_RE.split(self.pattern)
        if not 1 <= self.n_slots <= 2:
            raise ReconstructionError(f"template {self.id}: need 1 or 2 slots")
        # Shortest-first captures: the first slot is non-greedy so the
        # earliest position where the remaining literals fit wins.
        pieces = [re.escape(parts[0])]
        for i, literal in enumerate(parts[1:]):
            pieces.append("(.+?)" if i < self.n_slots - 1 else "(.+)")
            pieces.append(re.escape(literal))
        return re.compile("".join(pieces), re.IGNORECASE | re.DOTALL)


@dataclass(frozen=True)
class TemplateMatch:
    template: NleTemplate
    x: str
    y: Optional[str] = None


def load_templates(path) -> list:
    templates = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        templates.append(
            NleTemplate(
                id=obj["id"],
                pattern=obj["pattern"],
                reconstructable=bool(obj.get("reconstructable", True)),
                label_scope=obj.get("label_scope"),
            )
        )
    if not templates:
        raise ReconstructionError(f"{path}: no templates")
    return templates


def default_templates() -> list:
    data = resources.files("nlecheck.data")
    with resources.as_file(data / "templates.jsonl") as path:
        return load_templates(path)


def _clean_capture(span: str) -> str:
    return span.strip().rstrip(".,;:!?").strip()


def match_template(nle: str, templates) -> Optional[TemplateMatch]:
    """First match wins after ordering by total literal length (longest first)."""
    ordered = sorted(templates, key=lambda t: (-t.literal_length, t.id))
    for template in ordered:
        m = template.regex().search(nle)
        if not m:
            continue
        captures = [_clean_capture(g) for g in m.groups()]
        if any(not c for c in captures):
            continue
        if template.n_slots == 1:
            return TemplateMatch(template=template, x=captures[0])
        return TemplateMatch(template=template, x=captures[0], y=captures[1])
    return None


def is_sentence_like(span: str, lex: Lexicon) -> bool:
    """Weak sentence test: at least one NOUN/PRON token and one VERB token."""
    tags = [lex.tags(tok.text) for tok in tokenize(span)]
    has_subject = any("NOUN" in t or "PRON" in t for t in tags)
    has_verb = any("VERB" in t for t in tags)
    return has_subject and has_verb


def _sentence_case(span: str) -> str:
    out = span[0].upper() + span[1:] if span else span
    if out and out[-1] not in ".!?":
        out += "."
    return out


def reconstruct_esnli(
    instance: Instance, nle: str, templates, lex: Lexicon
) -> Optional[Instance]:
    """Captured <X>/<Y> become the reconstructed premise/hypothesis pair."""
    if instance.task is not TaskKind.NLI:
        raise ReconstructionError(f"instance {instance.id} is not NLI")
    m = match_template(nle, templates)
    if m is None or not m.template.reconstructable or m.y is None:
        return None
    if not (is_sentence_like(m.x, lex) and is_sentence_like(m.y, lex)):
        return None
    recon = instance.with_field("premise", _sentence_case(m.x)).with_field(
        "hypothesis", _sentence_case(m.y)
    )
    recon.validate()
    return recon


def reconstruct_comve(instance: Instance, original_output: ModelOutput) -> Instance:
    """Replace the sensible sentence with the explanation.

    The predicted label marks the against-common-sense slot; that sentence
    stays put, so the expected label after reconstruction is unchanged.
    """
    if instance.task is not TaskKind.COMVE:
        raise ReconstructionError(f"instance {instance.id} is not ComVE")
    if not original_output.nle:
        raise ReconstructionError(f"instance {instance.id}: empty NLE")
    if original_output.label not in COMVE_LABELS:
        raise ReconstructionError(f"bad ComVE label {original_output.label!r}")
    sensible_field = "sent2" if original_output.label == COMVE_LABELS[0] else "sent1"
    return instance.with_field(sensible_field, original_output.nle)


@dataclass
class ReconstructionRecord:
    instance_id: str
    reconstructable: bool
    original_label: Optional[str] = None
    reconstructed_fields: Optional[dict] = None
    reconstructed_label: Optional[str] = None
    unfaithful: Optional[bool] = None  # defined iff reconstructable
    error: Optional[str] = None

    @property
    def errored(self) -> bool:
        return self.error is not None

    def to_wire(self) -> dict:
        return {
            "schema": "reconstruction-record/1",
            "instance_id": self.instance_id,
            "reconstructable": self.reconstructable,
            "original_label": self.original_label,
            "reconstructed_fields": self.reconstructed_fields,
            "reconstructed_label": self.reconstructed_label,
            "unfaithful": self.unfaithful,
            "error": self.error,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "ReconstructionRecord":
        return cls(
            instance_id=obj["instance_id"],
            reconstructable=obj["reconstructable"],
            original_label=obj.get("original_label"),
            reconstructed_fields=obj.get("reconstructed_fields"),
            reconstructed_label=obj.get("reconstructed_label"),
            unfaithful=obj.get("unfaithful"),
            error=obj.get("error"),
        )


def run_reconstruction(
    instance: Instance,
    endpoint: Endpoint,
    templates,
    lex: Lexicon,
    original: ModelOutput,
) -> ReconstructionRecord:
    record = ReconstructionRecord(
        instance_id=instance.id,
        reconstructable=False,
        original_label=original.label,
    )
    try:
        if instance.task is TaskKind.NLI:
            recon = reconstruct_esnli(instance, original.nle or "", templates, lex)
        elif instance.task is TaskKind.COMVE:
            recon = reconstruct_comve(instance, original)
        else:
            raise ReconstructionError(
                f"no reconstruction rule for task {instance.task.value}"
            )
        if recon is None:
            return record
        record.reconstructable = True
        record.reconstructed_fields = dict(recon.fields)
        pred = endpoint.predict(recon)
        record.reconstructed_label = pred.label
        # NLI: must repeat the original prediction. ComVE: must still point
        # at the nonsense slot, which equals the original prediction too.
        record.unfaithful = pred.label != original.label
    except ReconstructionError:
        record.reconstructable = False
    except (EndpointError, ConformanceError, ProtocolError) as exc:
        record.error = str(exc)
        record.reconstructable = False
        record.unfaithful = None
    return record
