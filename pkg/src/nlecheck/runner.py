"""End-to-end execution of the faithfulness tests over a dataset.

Instances may be processed in parallel; verdict logic is order-independent
and results are always emitted in dataset order, so record files are
byte-identical for any parallelism level.
"""

from __future__ import annotations

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

from .corpus import Dataset, Instance, TaskKind
from .counterfactual import (
    CounterfactualRecord,
    EditorConfig,
    random_interventions,
    run_counterfactual,
    search_interventions,
)
from .lexicon import Lexicon, tokenize
from .protocol import (
    ConformanceError,
    Endpoint,
    EndpointError,
    ModelOutput,
    ProtocolError,
)
from .reconstruction import ReconstructionRecord, run_reconstruction


def _map_ordered(fn: Callable, items, parallelism: int) -> list:
    if parallelism <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, items))


def build_search_vocab(dataset: Dataset, lex: Lexicon, top_k: int = 50) -> list:
    """Default editor vocabulary: adjective/adverb lists plus frequent dataset words."""
    counts: Counter = Counter()
    for inst in dataset.instances:
        for text in inst.fields.values():
            for tok in tokenize(text):
                form = tok.match_form
                if len(form) >= 3:
                    counts[form] += 1
    frequent = [w for w, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]]
    return sorted(set(lex.adjectives) | set(lex.adverbs) | set(frequent))


def _fetch_original(endpoint: Endpoint, instance: Instance) -> ModelOutput:
    return endpoint.infer(instance)


def run_counterfactual_test(
    dataset: Dataset,
    endpoint: Endpoint,
    cfg: EditorConfig,
    lex: Lexicon,
    editor: str,
    parallelism: int = 1,
    vocab: Optional[list] = None,
    external: Optional[list] = None,
) -> list:
    """Run one counterfactual pass ('rand', 'edit' or 'external') over a dataset."""
    if editor == "external":
        by_instance: dict = {}
        for iv in external or []:
            by_instance.setdefault(iv.instance_id, []).append(iv)

    def one(instance: Instance) -> CounterfactualRecord:
        try:
            original = _fetch_original(endpoint, instance)
        except (EndpointError, ConformanceError, ProtocolError) as exc:
            return CounterfactualRecord(
                instance_id=instance.id, provenance=editor, original=None, error=str(exc)
            )
        if editor == "rand":
            interventions = random_interventions(instance, lex, cfg)
        elif editor == "edit":
            interventions = search_interventions(instance, vocab or [], cfg, endpoint)
        elif editor == "external":
            interventions = by_instance.get(instance.id, [])
        else:
            raise ValueError(f"unknown editor {editor!r}")
        return run_counterfactual(instance, interventions, endpoint, original, provenance=editor)

    return _map_ordered(one, dataset.instances, parallelism)


def run_reconstruction_test(
    dataset: Dataset,
    endpoint: Endpoint,
    templates,
    lex: Lexicon,
    parallelism: int = 1,
) -> list:
    if dataset.kind is TaskKind.QA:
        raise ValueError("no reconstruction rule exists for the multi-choice QA task")

    def one(instance: Instance) -> ReconstructionRecord:
        try:
            original = _fetch_original(endpoint, instance)
        except (EndpointError, ConformanceError, ProtocolError) as exc:
            return ReconstructionRecord(
                instance_id=instance.id,
                reconstructable=False,
                error=str(exc),
            )
        return run_reconstruction(instance, endpoint, templates, lex, original)

    return _map_ordered(one, dataset.instances, parallelism)
