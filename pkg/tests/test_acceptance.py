"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with `pytest -v -s tests/test_acceptance.py` to see the lines as the
criteria execute; without -s they appear in the captured output.
"""

import json
import random
import subprocess
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import pytest

from nlecheck.cli import main
from nlecheck.corpus import Dataset, NLI_LABELS, TaskKind, export_normalized, write_jsonl
from nlecheck.counterfactual import (
    ANY_FLIP,
    CounterfactualRecord,
    EditorConfig,
    Intervention,
    apply_intervention,
    random_interventions,
    run_counterfactual,
    search_interventions,
)
from nlecheck.lexicon import SiteKind, default_lexicon, find_sites, match_form, tokenize
from nlecheck.metrics import counterfactual_rates, reconstruction_rates, union_rates
from nlecheck.protocol import ModelOutput, StdioEndpoint, check_endpoint
from nlecheck.reconstruction import default_templates, run_reconstruction
from nlecheck.runner import run_reconstruction_test

from conftest import (
    comve_instance,
    make_nli_dataset,
    mock_endpoint,
    nli_instance,
    published_rates,
    qa_instance,
    rule,
)

BRIDGE_DIR = Path(__file__).resolve().parent.parent / "bridge"


@contextmanager
def criterion(name, limit_s):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"FAIL: {name}")
        raise
    elapsed = time.perf_counter() - start
    if elapsed >= limit_s:
        print(f"FAIL: {name} (took {elapsed:.2f}s, limit {limit_s}s)")
        raise AssertionError(f"{name}: {elapsed:.2f}s exceeds {limit_s}s budget")
    print(f"PASS: {name} ({elapsed:.2f}s)")


def test_rate_identity_against_published_rows():
    with criterion("rate identity on all 36 published rows (tol 0.02)", 1.0):
        rows = published_rates()
        assert len(rows) == 36
        for row in rows:
            derived = row["pct_counter"] * row["pct_counter_unfaith"] / 100.0
            assert abs(derived - row["pct_total_unfaith"]) <= 0.02, row


def test_union_dominance_published_and_synthetic():
    with criterion("union dominance: published triples + 1000 synthetic cases", 5.0):
        rows = published_rates()
        by_key = {(r["dataset"], r["model"], r["editor"]): r for r in rows}
        for (dataset, model, editor), row in by_key.items():
            if editor != "rand+edit":
                continue
            rand = by_key[(dataset, model, "rand")]
            edit = by_key[(dataset, model, "edit")]
            assert row["pct_total_unfaith"] >= max(
                rand["pct_total_unfaith"], edit["pct_total_unfaith"]
            )

        def record(iid, flipped, unfaithful):
            return CounterfactualRecord(
                instance_id=iid,
                provenance="rand",
                original=ModelOutput(label="neutral", nle="x"),
                flipped=flipped,
                overlap=flipped and not unfaithful,
                unfaithful=unfaithful,
            )

        rng = random.Random(17)
        for _ in range(1000):
            n = rng.randint(1, 30)
            rand_records, edit_records = [], []
            for i in range(n):
                for bucket in (rand_records, edit_records):
                    flipped = rng.random() < 0.5
                    unfaithful = flipped and rng.random() < 0.5
                    bucket.append(record(f"i{i}", flipped, unfaithful))
            union = union_rates(rand_records, edit_records)
            for single in (
                counterfactual_rates(rand_records),
                counterfactual_rates(edit_records),
            ):
                assert union.n_counter >= single.n_counter
                assert union.n_unfaithful >= single.n_unfaithful


def test_golden_scenario_counterfactual_and_reconstruction():
    with criterion("golden scenarios: insertion flip and pair reconstruction", 1.0):
        # scenario 1: inserting "blue" flips neutral -> contradiction and the
        # new explanation never mentions the inserted word
        endpoint = mock_endpoint(
            [
                rule("contradiction", "A man is not a tall person.",
                     field="hypothesis", word="blue"),
                rule("neutral", "Not all men are tall."),
            ]
        )
        inst = nli_instance(
            "g1",
            "Man in a black suit, white shirt and black bowtie playing an "
            "instrument with the rest of his symphony surrounding him.",
            "A tall person in a suit.",
        )
        original = endpoint.infer(inst)
        assert original.label == "neutral"
        iv = Intervention(
            instance_id="g1", field_name="hypothesis", token_index=5,
            words=("blue",), provenance="external",
        )
        assert (
            apply_intervention(inst, iv).fields["hypothesis"]
            == "A tall person in a blue suit."
        )
        rec = run_counterfactual(inst, [iv], endpoint, original, provenance="external")
        assert rec.flipped is True
        assert rec.perturbed_output.label == "contradiction"
        assert rec.perturbed_output.nle == "A man is not a tall person."
        assert rec.overlap is False
        assert rec.unfaithful is True

        # scenario 2: the explanation reconstructs to an exact premise and
        # hypothesis pair whose prediction no longer matches the original
        endpoint = mock_endpoint(
            [
                rule(
                    "entailment",
                    "People are talking is a rephrasing of they are having a chat.",
                    field="premise", word="are",
                ),
                rule(
                    "neutral",
                    "Just because people are talking does not mean they are having a chat.",
                ),
            ]
        )
        inst = nli_instance(
            "g2",
            "Many people standing outside of a place talking to each other in "
            "front of a building that has a sign that says `HI-POINTE.'",
            "The people are having a chat before going into the work building.",
        )
        original = endpoint.infer(inst)
        assert original.label == "neutral"
        record = run_reconstruction(
            inst, endpoint, default_templates(), default_lexicon(), original
        )
        assert record.reconstructable is True
        assert record.reconstructed_fields["premise"] == "People are talking."
        assert record.reconstructed_fields["hypothesis"] == "They are having a chat."
        assert record.reconstructed_label == "entailment"
        assert record.unfaithful is True


# Replayed insertion examples: instance, rigged rules, intervention, and the
# exact perturbed field text. Every one must come out flipped and unfaithful.
_REPLAYS = [
    (
        qa_instance(
            "a1",
            "What happens when spending money without paying someone back?",
            ["poverty", "debt", "bankruptcy"],
        ),
        [
            rule("bankruptcy",
                 "bankruptcy is the only option that is a result of spending money.",
                 field="question", word="increasingly"),
            rule("debt",
                 "debt is the only option that is not something that can be paid back."),
        ],
        ("question", 3, ("increasingly",)),
        "What happens when increasingly spending money without paying someone back?",
    ),
    (
        comve_instance("a2", "Everyone hates paying taxes", "Nobody hates paying taxes"),
        [
            rule("second sentence", "Paying taxes is a good thing",
                 field="sent2", word="ardently"),
            rule("first sentence", "Paying taxes is a good thing"),
        ],
        ("sent2", 1, ("ardently",)),
        "Nobody ardently hates paying taxes",
    ),
    (
        nli_instance(
            "a3",
            "A man wearing glasses and a ragged costume is playing a Jaguar "
            "electric guitar and singing with the accompaniment of a drummer.",
            "A man with glasses and a disheveled outfit is playing a guitar "
            "and singing along with a drummer.",
        ),
        [
            rule("neutral", "Not all ragged costumes are disheveled.",
                 field="hypothesis", word="semi-formal"),
            rule("entailment", "A ragged costume is a disheveled outfit."),
        ],
        ("hypothesis", 17, ("semi-formal",)),
        "A man with glasses and a disheveled outfit is playing a guitar "
        "and singing along with a semi-formal drummer.",
    ),
    (
        qa_instance("a4", "Where can books be read?", ["shelf", "table", "backpack"]),
        [
            rule("backpack", "books are usually stored in backpacks.",
                 field="question", word="outside"),
            rule("table", "books are usually read on a table."),
        ],
        ("question", 1, ("outside",)),
        "Where outside can books be read?",
    ),
    (
        comve_instance(
            "a5",
            "When people are hungry they drink water and do not eat food.",
            "People eat food when they are hungry.",
        ),
        [
            rule("second sentence",
                 "Eating food is not a good way to get rid of hunger.",
                 field="sent2", word="times"),
            rule("first sentence",
                 "Water is not a food and cannot satisfy people's hunger."),
        ],
        ("sent2", 3, ("so", "many", "times")),
        "People eat food so many times when they are hungry.",
    ),
    (
        nli_instance("a6", "Two women having drinks at the bar.", "Three women are at a bar."),
        [
            rule("entailment", "Two women are three women.",
                 field="hypothesis", word="together"),
            rule("contradiction", "Two women are not three women."),
        ],
        ("hypothesis", 3, ("together",)),
        "Three women are together at a bar.",
    ),
]


def test_replayed_examples_all_unfaithful():
    with criterion("replayed insertion examples unfaithful + sentence-swap pair", 1.0):
        for inst, rules, (field_name, index, words), perturbed_text in _REPLAYS:
            endpoint = mock_endpoint(rules)
            original = endpoint.infer(inst)
            iv = Intervention(
                instance_id=inst.id, field_name=field_name, token_index=index,
                words=words, provenance="external",
            )
            assert (
                apply_intervention(inst, iv).fields[field_name] == perturbed_text
            ), inst.id
            record = run_counterfactual(inst, [iv], endpoint, original, "external")
            assert record.flipped is True, inst.id
            assert record.unfaithful is True, inst.id

        # sentence-swap reconstruction: the explanation replaces the sensible
        # sentence and the prediction moves to the other slot
        endpoint = mock_endpoint(
            [
                rule("first sentence", "Monkeys have long necks.",
                     field="sent1", word="short"),
                rule("second sentence", "Monkeys have short necks."),
            ]
        )
        inst = comve_instance("a7", "Giraffes have long necks.", "Monkeys have long necks.")
        original = endpoint.infer(inst)
        assert original.label == "second sentence"
        record = run_reconstruction(
            inst, endpoint, default_templates(), default_lexicon(), original
        )
        assert record.reconstructable is True
        assert record.reconstructed_fields == {
            "sent1": "Monkeys have short necks.",
            "sent2": "Monkeys have long necks.",
        }
        assert record.reconstructed_label == "first sentence"
        assert record.unfaithful is True


def test_search_editor_matches_brute_force_oracle():
    with criterion("search editor equals brute-force flip set (10 instances)", 60.0):
        endpoint = mock_endpoint(
            [
                rule("contradiction", "That cannot be.", field="hypothesis", word="blue"),
                rule("entailment", "That must be.", field="hypothesis", word="red"),
                rule("neutral", "That may be."),
            ]
        )
        nouns = ["man", "woman", "dog", "boy", "girl", "bird", "horse", "cat", "child", "friend"]
        verbs = ["walks", "runs", "jumps", "sleeps", "plays", "sings", "eats", "swims", "laughs", "sits"]
        vocab = [
            "amber", "blue", "bright", "calm", "dim", "eager", "faint", "grand",
            "heavy", "icy", "jolly", "keen", "light", "mild", "neat", "odd",
            "plain", "quick", "red", "stern",
        ]
        assert len(vocab) <= 20
        cfg = EditorConfig(n_positions=5, n_candidates=len(vocab), target_mode=ANY_FLIP)
        for i in range(10):
            inst = nli_instance(f"o{i}", "p q", f"The {nouns[i]} {verbs[i]} here.")
            n_gaps = len(tokenize(inst.fields["hypothesis"])) + 1
            assert n_gaps <= 5
            original = endpoint.predict(inst)
            found = {
                (iv.token_index, iv.words[0])
                for iv in search_interventions(inst, vocab, cfg, endpoint)
                if endpoint.predict(apply_intervention(inst, iv)).label != original.label
            }
            brute = set()
            for index in range(n_gaps):
                for word in vocab:
                    cand = Intervention(
                        instance_id=inst.id, field_name="hypothesis",
                        token_index=index, words=(word,), provenance="edit",
                    )
                    pred = endpoint.predict(apply_intervention(inst, cand))
                    if pred.label != original.label:
                        brute.add((index, word))
            assert found == brute, inst.id


def test_random_baseline_structure():
    with criterion("random baseline structure over 1000+ interventions", 10.0):
        lex = default_lexicon()
        adjectives, adverbs = set(lex.adjectives), set(lex.adverbs)
        dataset = make_nli_dataset(120)
        cfg = EditorConfig(seed=5)
        total = 0
        for inst in dataset.instances:
            interventions = random_interventions(inst, lex, cfg)
            sites = {}
            for s in find_sites(inst, "hypothesis", lex):
                sites.setdefault((s.field_name, s.token_index), set()).add(s.site_kind)
            per_site = {}
            for iv in interventions:
                total += 1
                assert len(iv.words) == 1
                word = iv.words[0]
                present = {t.match_form for t in tokenize(inst.fields[iv.field_name])}
                assert match_form(word) not in present
                kinds = sites[(iv.field_name, iv.token_index)]
                assert (word in adjectives and SiteKind.BEFORE_NOUN in kinds) or (
                    word in adverbs and SiteKind.BEFORE_VERB in kinds
                )
                key = (iv.field_name, iv.token_index)
                per_site[key] = per_site.get(key, 0) + 1
            assert len(per_site) <= cfg.n_positions
            # a noun/verb-ambiguous token gives two sites at one index, so the
            # per-index cap is two draws of n_candidates
            assert all(v <= 2 * cfg.n_candidates for v in per_site.values())
        assert total >= 1000, total


def test_comve_reconstruction_is_total():
    with criterion("sentence-swap reconstruction covers every instance", 1.0):
        endpoint = mock_endpoint([rule("first sentence", "That makes no sense.")])
        instances = [
            comve_instance(f"c{i}", f"Sensible sentence number {i}.", f"Nonsense sentence number {i}.")
            for i in range(8)
        ]
        dataset = Dataset(
            instances=instances, kind=TaskKind.COMVE,
            label_set=("first sentence", "second sentence"),
        )
        records = run_reconstruction_test(
            dataset, endpoint, default_templates(), default_lexicon()
        )
        row = reconstruction_rates(records)
        assert row.pct_reconst == pytest.approx(100.0)


def test_run_is_deterministic_across_parallelism(tmp_path, monkeypatch):
    with criterion("byte-identical records at parallelism 1 vs 8 (100 instances)", 30.0):
        monkeypatch.delenv("NLECHECK_ENDPOINT", raising=False)
        monkeypatch.delenv("NLECHECK_SEED", raising=False)
        export_normalized(make_nli_dataset(100), tmp_path / "data.jsonl")
        rules = {
            "name": "det-fixture",
            "setup": "other",
            "rules": [
                {
                    "trigger": {"field": "hypothesis", "word": "blue"},
                    "label": "contradiction",
                    "nle": "Something looks wrong here.",
                },
                {
                    "label": "neutral",
                    "nle": "Just because people are talking does not mean "
                           "they are having a chat.",
                },
            ],
        }
        rules_path = tmp_path / "rules.json"
        rules_path.write_text(json.dumps(rules), encoding="utf-8")
        (tmp_path / "vocab.txt").write_text("blue\ngreen\n", encoding="utf-8")
        command = f"{sys.executable} -m nlecheck.cli mock-serve --rules {rules_path} --transport stdio"
        (tmp_path / "config.yaml").write_text(
            "dataset:\n"
            "  path: data.jsonl\n"
            "  kind: nli\n"
            "  format: jsonl\n"
            "endpoint:\n"
            "  transport: stdio\n"
            f"  address: \"{command}\"\n"
            "search_vocab: vocab.txt\n"
            "seed: 11\n",
            encoding="utf-8",
        )
        config = str(tmp_path / "config.yaml")
        assert main(["run", "--config", config, "--output-dir", str(tmp_path / "p1"),
                     "--parallelism", "1"]) == 0
        assert main(["run", "--config", config, "--output-dir", str(tmp_path / "p8"),
                     "--parallelism", "8"]) == 0
        for name in (
            "counterfactual_rand.jsonl",
            "counterfactual_edit.jsonl",
            "reconstruction.jsonl",
            "report.md",
            "report.json",
        ):
            p1 = (tmp_path / "p1" / name).read_bytes()
            p8 = (tmp_path / "p8" / name).read_bytes()
            assert p1 == p8, name


@pytest.mark.skipif(not BRIDGE_DIR.exists(), reason="bridge package not present")
def test_bridge_endpoint_conformance():
    with criterion("generator bridge passes the protocol conformance suite", 300.0):
        main_js = BRIDGE_DIR / "dist" / "main.js"
        checkpoint = BRIDGE_DIR / "checkpoints" / "stub.json"
        assert main_js.exists(), "bridge not built (run npm run build in bridge/)"
        instances = [
            nli_instance(
                "b1",
                "Two women having drinks at the bar.",
                "Three women are at a bar.",
            ),
            nli_instance(
                "b2",
                "A man plays a guitar on stage.",
                "A man is making music.",
            ),
        ]

        command = f"node {main_js} --checkpoint {checkpoint} --setup ST-Ra"
        with StdioEndpoint(command, timeout=60) as endpoint:
            caps = endpoint.handshake()
            assert caps.setup == "ST-Ra"
            assert caps.deterministic is True
            assert check_endpoint(endpoint, instances) == []

        # the label-conditioned setup drafts one explanation per candidate
        # label and scores them, so generations = infers * |label set|
        proc = subprocess.Popen(
            command.split(),
            stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, encoding="utf-8", bufsize=1,
        )

        def ask(obj):
            proc.stdin.write(json.dumps(obj) + "\n")
            proc.stdin.flush()
            return json.loads(proc.stdout.readline())

        try:
            first = None
            for k in range(3):
                reply = ask({
                    "id": f"r{k}", "op": "infer",
                    "instance": instances[0].to_wire(), "condition_label": None,
                })
                assert reply["error"] is None
                assert reply["label"] in NLI_LABELS
                if first is None:
                    first = reply
                else:
                    assert {k: v for k, v in reply.items() if k != "id"} == {
                        k: v for k, v in first.items() if k != "id"
                    }
            stats = ask({"id": "s", "op": "stats"})
            assert stats["error"] is None
            assert stats["stats"]["infer_calls"] == 3
            assert stats["stats"]["generation_calls"] == 3 * len(NLI_LABELS)
        finally:
            proc.kill()
