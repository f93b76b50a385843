"""The counterfactual insertion test.

Generate contiguous word insertions (random baseline, model-guided search,
or externally supplied), apply them, and mark the explanation unfaithful
when an insertion flips the prediction but none of the inserted words show
up in the new explanation.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Optional

from .corpus import Instance, TaskKind
from .lexicon import (
    Lexicon,
    SiteKind,
    WordKind,
    find_sites,
    match_form,
    sample_words,
    tokenize,
)
from .protocol import ConformanceError, Endpoint, EndpointError, ModelOutput, ProtocolError

ANY_FLIP = "any-flip"
PER_TARGET = "per-target-label"

# Fields the editors are allowed to touch, per task. The NLI default edits
# only the hypothesis; override via EditorConfig.editable_fields.
DEFAULT_EDITABLE_FIELDS = {
    TaskKind.NLI: ("hypothesis",),
    TaskKind.QA: ("question",),
    TaskKind.COMVE: ("sent1", "sent2"),
}


class InterventionError(Exception):
    pass


@dataclass(frozen=True)
class EditorConfig:
    n_positions: int = 4
    n_candidates: int = 4
    max_insert_len: int = 3
    target_mode: str = ANY_FLIP
    seed: int = 0
    editable_fields: Optional[dict] = None  # TaskKind -> tuple of field names

    def __post_init__(self):
        if self.n_positions < 1 or self.n_candidates < 1:
            raise InterventionError("position and candidate budgets must be >= 1")
        if not 1 <= self.max_insert_len <= 3:
            raise InterventionError("max_insert_len must be in [1, 3]")
        if self.target_mode not in (ANY_FLIP, PER_TARGET):
            raise InterventionError(f"unknown target mode {self.target_mode!r}")

    def fields_for(self, instance: Instance) -> tuple:
        table = self.editable_fields or DEFAULT_EDITABLE_FIELDS
        return tuple(table[instance.task])


@dataclass(frozen=True)
class Intervention:
    instance_id: str
    field_name: str
    token_index: int  # insert before this token; == token count appends
    words: tuple
    target_label: Optional[str] = None
    provenance: str = "rand"  # rand | edit | external

    def to_wire(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "field_name": self.field_name,
            "token_index": self.token_index,
            "words": list(self.words),
            "target_label": self.target_label,
            "provenance": self.provenance,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "Intervention":
        return cls(
            instance_id=str(obj["instance_id"]),
            field_name=obj["field_name"],
            token_index=int(obj["token_index"]),
            words=tuple(obj["words"]),
            target_label=obj.get("target_label"),
            provenance=obj.get("provenance", "external"),
        )


def validate_intervention(instance: Instance, iv: Intervention, max_insert_len: int = 3) -> None:
    if not iv.words:
        raise InterventionError("empty word list")
    if len(iv.words) > max_insert_len:
        raise InterventionError(f"insert of {len(iv.words)} words exceeds limit {max_insert_len}")
    if iv.field_name not in instance.fields:
        raise InterventionError(f"unknown field {iv.field_name!r}")
    tokens = tokenize(instance.fields[iv.field_name])
    if not 0 <= iv.token_index <= len(tokens):
        raise InterventionError(
            f"token index {iv.token_index} out of range for {len(tokens)} tokens"
        )
    present = {tok.match_form for tok in tokens}
    for word in iv.words:
        if match_form(word) in present:
            raise InterventionError(f"inserted word {word!r} already occurs in the field")


def apply_intervention(instance: Instance, iv: Intervention) -> Instance:
    """Splice the inserted words before the token index, single-spaced.

    Deleting the spliced span restores the original field byte-for-byte.
    """
    validate_intervention(instance, iv)
    text = instance.fields[iv.field_name]
    tokens = tokenize(text)
    insert = " ".join(iv.words)
    if iv.token_index == len(tokens):
        new_text = text + " " + insert
    else:
        offset = tokens[iv.token_index].start
        new_text = text[:offset] + insert + " " + text[offset:]
    return instance.with_field(iv.field_name, new_text)


def derive_rng(seed: int, *parts: str) -> random.Random:
    """Stable per-instance RNG: same (seed, parts) -> same stream anywhere."""
    digest = hashlib.sha256(("%d|" % seed + "|".join(parts)).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def random_interventions(
    instance: Instance,
    lex: Lexicon,
    cfg: EditorConfig,
    rng: Optional[random.Random] = None,
) -> list:
    """Random baseline: an adjective before a noun or an adverb before a verb.

    Picks up to ``n_positions`` sites uniformly without replacement and draws
    ``n_candidates`` single words per site; candidates already present in the
    field are dropped, so up to n_positions * n_candidates come back.
    """
    rng = rng or derive_rng(cfg.seed, instance.id, "rand")
    sites = []
    for field_name in cfg.fields_for(instance):
        sites.extend(find_sites(instance, field_name, lex))
    if not sites:
        return []
    chosen_sites = rng.sample(sites, min(cfg.n_positions, len(sites)))
    out = []
    for site in chosen_sites:
        kind = WordKind.ADJ if site.site_kind is SiteKind.BEFORE_NOUN else WordKind.ADV
        present = {
            tok.match_form for tok in tokenize(instance.fields[site.field_name])
        }
        for word in sample_words(lex, kind, cfg.n_candidates, rng):
            if match_form(word) in present:
                continue
            out.append(
                Intervention(
                    instance_id=instance.id,
                    field_name=site.field_name,
                    token_index=site.token_index,
                    words=(word,),
                    target_label=None,
                    provenance="rand",
                )
            )
    return out


def search_interventions(
    instance: Instance,
    vocab,
    cfg: EditorConfig,
    endpoint: Endpoint,
) -> list:
    """Search editor: score single-word insertions with the model under test.

    Samples up to ``n_positions`` inter-token gaps in the editable fields and
    scores every vocabulary word there via the prediction fast path. With
    scores available, candidates are ranked by the probability mass away from
    the original label (or on the target label in per-target mode); without
    scores they fall back to vocabulary order. Per gap the top
    ``n_candidates`` survive; the result is ordered by score descending, ties
    broken lexicographically by word.
    """
    vocab = sorted(set(vocab))
    if not vocab:
        raise InterventionError("empty search vocabulary")
    original = endpoint.predict(instance)
    rng = derive_rng(cfg.seed, instance.id, "edit")
    gaps = []
    for field_name in cfg.fields_for(instance):
        n_tokens = len(tokenize(instance.fields[field_name]))
        gaps.extend((field_name, idx) for idx in range(n_tokens + 1))
    if not gaps:
        return []
    positions = rng.sample(gaps, min(cfg.n_positions, len(gaps)))

    if cfg.target_mode == PER_TARGET:
        targets = [lab for lab in instance.label_set if lab != original.label]
    else:
        targets = [None]

    out = []
    for target in targets:
        scored = []  # (score, word, field, index, intervention)
        for field_name, index in positions:
            present = {tok.match_form for tok in tokenize(instance.fields[field_name])}
            per_gap = []
            for word in vocab:
                if match_form(word) in present or not match_form(word):
                    continue
                iv = Intervention(
                    instance_id=instance.id,
                    field_name=field_name,
                    token_index=index,
                    words=(word,),
                    target_label=target,
                    provenance="edit",
                )
                score = None
                perturbed = apply_intervention(instance, iv)
                pred = endpoint.predict(perturbed)
                if pred.scores is not None:
                    if target is None:
                        score = sum(
                            v for k, v in pred.scores.items() if k != original.label
                        )
                    else:
                        score = pred.scores.get(target, 0.0)
                per_gap.append((score, word, iv))
            if per_gap and per_gap[0][0] is not None:
                per_gap.sort(key=lambda item: (-item[0], item[1]))
            per_gap = per_gap[: cfg.n_candidates]
            scored.extend(per_gap)
        if scored and all(s is not None for s, _, _ in scored):
            scored.sort(key=lambda item: (-item[0], item[1]))
        out.extend(iv for _, _, iv in scored)
    return out


@dataclass
class CounterfactualRecord:
    instance_id: str
    provenance: str
    original: Optional[ModelOutput]
    chosen_intervention: Optional[Intervention] = None
    perturbed_output: Optional[ModelOutput] = None
    flipped: bool = False
    overlap: bool = False
    unfaithful: bool = False
    trials: int = 0
    error: Optional[str] = None

    @property
    def errored(self) -> bool:
        return self.error is not None

    def to_wire(self) -> dict:
        return {
            "schema": "counterfactual-record/1",
            "instance_id": self.instance_id,
            "provenance": self.provenance,
            "original": self.original.to_wire() if self.original else None,
            "chosen_intervention": (
                self.chosen_intervention.to_wire() if self.chosen_intervention else None
            ),
            "perturbed_output": (
                self.perturbed_output.to_wire() if self.perturbed_output else None
            ),
            "flipped": self.flipped,
            "overlap": self.overlap,
            "unfaithful": self.unfaithful,
            "trials": self.trials,
            "error": self.error,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "CounterfactualRecord":
        def out(key):
            o = obj.get(key)
            return ModelOutput(o["label"], o.get("nle"), o.get("scores")) if o else None

        return cls(
            instance_id=obj["instance_id"],
            provenance=obj["provenance"],
            original=out("original"),
            chosen_intervention=(
                Intervention.from_wire(obj["chosen_intervention"])
                if obj.get("chosen_intervention")
                else None
            ),
            perturbed_output=out("perturbed_output"),
            flipped=obj["flipped"],
            overlap=obj["overlap"],
            unfaithful=obj["unfaithful"],
            trials=obj.get("trials", 0),
            error=obj.get("error"),
        )


def overlap(words, nle: str) -> bool:
    """Syntactic intersection: some inserted word matches some NLE token."""
    if nle is None:
        raise InterventionError("overlap() needs a non-null NLE")
    inserted = {match_form(w) for w in words}
    inserted.discard("")
    return any(tok.match_form in inserted for tok in tokenize(nle))


def run_counterfactual(
    instance: Instance,
    interventions,
    endpoint: Endpoint,
    original: ModelOutput,
    provenance: str = "rand",
) -> CounterfactualRecord:
    """Evaluate interventions in order; first flip wins.

    A flip means the perturbed prediction differs from the original label
    (and equals the intervention's target label when one is set). On a flip
    the perturbed NLE is fetched and the unfaithfulness verdict computed.
    """
    record = CounterfactualRecord(
        instance_id=instance.id, provenance=provenance, original=original
    )
    try:
        for iv in interventions:
            perturbed = apply_intervention(instance, iv)
            record.trials += 1
            pred = endpoint.predict(perturbed)
            if pred.label == original.label:
                continue
            if iv.target_label is not None and pred.label != iv.target_label:
                continue
            record.trials += 1
            full = endpoint.infer(perturbed)
            record.flipped = True
            record.chosen_intervention = iv
            record.perturbed_output = full
            record.overlap = overlap(iv.words, full.nle or "")
            record.unfaithful = not record.overlap
            return record
    except (EndpointError, ConformanceError, ProtocolError) as exc:
        record.error = str(exc)
        record.flipped = False
        record.unfaithful = False
    return record
