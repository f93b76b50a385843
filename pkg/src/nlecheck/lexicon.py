"""Word resources for the random insertion baseline.

The baseline inserts a random adjective before a noun or a random adverb
before a verb. Tagging is lexicon-lookup only: a shipped word -> coarse POS
table maps each token's match-form to a set of tags, unknown words get
OTHER. This trades tagging recall for zero model dependencies and full
determinism; richer tables can be substituted via the same file format.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

from .corpus import Instance

POS_TAGS = {"NOUN", "VERB", "ADJ", "ADV", "PRON", "OTHER"}

_TOKEN_RE = re.compile(r"\S+")
_EDGE_RE = re.compile(r"^[^0-9A-Za-z]+|[^0-9A-Za-z]+$")


class LexiconError(Exception):
    pass


class SiteKind(str, Enum):
    BEFORE_NOUN = "before-noun"
    BEFORE_VERB = "before-verb"


class WordKind(str, Enum):
    ADJ = "adj"
    ADV = "adv"


def match_form(word: str) -> str:
    """Lowercased word with leading/trailing non-alphanumerics stripped."""
    return _EDGE_RE.sub("", word).lower()


@dataclass(frozen=True)
class Token:
    text: str
    start: int  # byte offset of token start in the original string

    @property
    def match_form(self) -> str:
        return match_form(self.text)

    @property
    def end(self) -> int:
        return self.start + len(self.text)


def tokenize(text: str) -> list:
    """Whitespace tokenization with offsets.

    Punctuation stays attached to tokens so the original string can be
    reassembled byte-for-byte from the offsets; the match-form strips it.
    """
    return [Token(m.group(), m.start()) for m in _TOKEN_RE.finditer(text)]


@dataclass(frozen=True)
class InsertionSite:
    field_name: str
    token_index: int  # insert before this token
    site_kind: SiteKind


@dataclass(frozen=True)
class Lexicon:
    adjectives: tuple  # sorted, deduplicated, lowercase
    adverbs: tuple
    pos_table: dict  # word -> frozenset of tags

    def tags(self, word: str) -> frozenset:
        return self.pos_table.get(match_form(word), frozenset({"OTHER"}))

    def words(self, kind: WordKind) -> tuple:
        return self.adjectives if kind is WordKind.ADJ else self.adverbs


def _load_word_list(path: Path) -> tuple:
    words = set()
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
        word = line.strip()
        if not word or word.startswith("#"):
            continue
        if any(ch.isspace() for ch in word):
            raise LexiconError(f"{path.name}:{line_no + 1}: multi-token entry {word!r}")
        words.add(word.lower())
    if not words:
        raise LexiconError(f"{path.name}: empty word list")
    return tuple(sorted(words))


def _load_pos_table(path: Path) -> dict:
    table: dict = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in POS_TAGS:
            raise LexiconError(f"{path.name}:{line_no + 1}: malformed pos line {line!r}")
        word, tag = parts[0].lower(), parts[1]
        table.setdefault(word, set()).add(tag)
    return {w: frozenset(tags) for w, tags in table.items()}


def load_lexicon(adj_path, adv_path, pos_path) -> Lexicon:
    return Lexicon(
        adjectives=_load_word_list(Path(adj_path)),
        adverbs=_load_word_list(Path(adv_path)),
        pos_table=_load_pos_table(Path(pos_path)),
    )


def default_lexicon() -> Lexicon:
    """Lexicon built from the resources shipped with the package."""
    data = resources.files("nlecheck.data")
    with resources.as_file(data / "adjectives.txt") as adj, resources.as_file(
        data / "adverbs.txt"
    ) as adv, resources.as_file(data / "pos_table.tsv") as pos:
        return load_lexicon(adj, adv, pos)


def find_sites(instance: Instance, field_name: str, lex: Lexicon) -> list:
    """Insertion sites in token order: one per NOUN and one per VERB token."""
    if field_name not in instance.fields:
        raise LexiconError(f"unknown field {field_name!r} for instance {instance.id}")
    sites = []
    for index, token in enumerate(tokenize(instance.fields[field_name])):
        tags = lex.tags(token.text)
        if "NOUN" in tags:
            sites.append(InsertionSite(field_name, index, SiteKind.BEFORE_NOUN))
        if "VERB" in tags:
            sites.append(InsertionSite(field_name, index, SiteKind.BEFORE_VERB))
    return sites


def sample_words(lex: Lexicon, kind: WordKind, n: int, rng: random.Random) -> list:
    """Draw n words uniformly without replacement (with, once the list runs out)."""
    if n < 1:
        raise LexiconError(f"sample size must be >= 1, got {n}")
    pool = list(lex.words(kind))
    if not pool:
        raise LexiconError(f"empty word list for {kind.value}")
    if n <= len(pool):
        return rng.sample(pool, n)
    out = list(pool)
    rng.shuffle(out)
    out.extend(rng.choice(pool) for _ in range(n - len(pool)))
    return out
