import json
from pathlib import Path

import pytest

from nlecheck.corpus import Dataset, Instance, NLI_LABELS, COMVE_LABELS, TaskKind
from nlecheck.lexicon import default_lexicon
from nlecheck.protocol import InprocEndpoint, MockModel, MockRule

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def lex():
    return default_lexicon()


def nli_instance(iid, premise, hypothesis, gold=None, nle=None):
    return Instance(
        id=iid,
        task=TaskKind.NLI,
        fields={"premise": premise, "hypothesis": hypothesis},
        label_set=tuple(NLI_LABELS),
        gold_label=gold,
        gold_nle=nle,
    )


def qa_instance(iid, question, choices, gold=None, nle=None):
    return Instance(
        id=iid,
        task=TaskKind.QA,
        fields={
            "question": question,
            "choice1": choices[0],
            "choice2": choices[1],
            "choice3": choices[2],
        },
        label_set=tuple(c.lower() for c in choices),
        gold_label=gold,
        gold_nle=nle,
    )


def comve_instance(iid, sent1, sent2, gold=None, nle=None):
    return Instance(
        id=iid,
        task=TaskKind.COMVE,
        fields={"sent1": sent1, "sent2": sent2},
        label_set=tuple(COMVE_LABELS),
        gold_label=gold,
        gold_nle=nle,
    )


def mock_endpoint(rules, name="mock"):
    return InprocEndpoint(MockModel(name=name, rules=tuple(rules)))


def rule(label, nle, field=None, word=None):
    return MockRule(label=label, nle_template=nle, trigger_field=field, trigger_word=word)


# Deterministic synthetic NLI corpus built from words in the shipped POS
# table, so every hypothesis carries noun and verb insertion sites.
_NOUNS = ["man", "woman", "dog", "boy", "girl", "bird", "horse", "cat", "child", "friend"]
_VERBS = ["walks", "runs", "jumps", "sleeps", "plays", "sings", "eats", "drinks", "swims", "laughs"]
_PLACES = ["park", "street", "garden", "beach", "kitchen", "school", "market", "forest", "bridge", "river"]


def make_nli_dataset(n):
    instances = []
    for i in range(n):
        noun = _NOUNS[i % len(_NOUNS)]
        verb = _VERBS[(i // len(_NOUNS)) % len(_VERBS)]
        place = _PLACES[i % len(_PLACES)]
        premise = f"A {noun} {verb} near the {place}."
        hypothesis = f"The {noun} {verb} at the {place}."
        instances.append(nli_instance(f"syn-{i:04d}", premise, hypothesis, gold="neutral"))
    return Dataset(instances=instances, kind=TaskKind.NLI, label_set=tuple(NLI_LABELS))


def published_rates():
    with open(FIXTURES / "published_counterfactual_rates.json", encoding="utf-8") as fh:
        return json.load(fh)["rows"]
