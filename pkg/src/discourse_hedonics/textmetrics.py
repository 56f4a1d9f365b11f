"""Discourse text cleaning and per-item sentiment/topic measures.

Scoring is lexicon-driven and deliberately transparent: a word list with
polarity and subjectivity weights, a negator set, and intensifier multipliers,
all loaded from an editable CSV (``word,polarity,subjectivity,flags``).  The
rules are the simplest conventional ones: a negator in the single preceding
token flips the sign and halves the weight (``negation_factor``), an
intensifier in the preceding token scales the weight, and item polarity /
subjectivity are the clamped means over matched words.

Coarse labels use strict symmetric thresholds: positive above 0.1, negative
below -0.1, neutral otherwise.  Topic tags come from case-insensitive
whole-word keyword voting; a tied or empty vote yields ``"other"``.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import pandas as pd

from .ingest import RawDiscourseRecord, SchemaError
from . import binning

#: Polarity thresholds for the coarse sentiment label (strict inequalities).
POSITIVE_THRESHOLD = 0.1
NEGATIVE_THRESHOLD = -0.1

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)*")
_WS_RE = re.compile(r"\s+")

#: Boilerplate fragments commonly carried over from scraped page chrome.
DEFAULT_HEADER_PATTERNS = (
    r"(?i)posted by u/[\w-]+",
    r"(?i)^\s*r/[\w-]+\s*[·\-|]\s*",
    r"&amp;|&lt;|&gt;|&#x200b;|&nbsp;",
    r"\[deleted\]|\[removed\]",
)


@dataclass(frozen=True)
class CleaningConfig:
    min_len: int = 3
    header_patterns: tuple[str, ...] = DEFAULT_HEADER_PATTERNS


@dataclass(frozen=True)
class Lexicon:
    """Sentiment word list: ``entries`` maps word -> (polarity, subjectivity)."""

    entries: dict[str, tuple[float, float]]
    negators: frozenset[str]
    intensifiers: dict[str, float]

    def __post_init__(self) -> None:
        for word, (pol, subj) in self.entries.items():
            if not -1.0 <= pol <= 1.0:
                raise ValueError(f"lexicon word {word!r}: polarity {pol} outside [-1, 1]")
            if not 0.0 <= subj <= 1.0:
                raise ValueError(f"lexicon word {word!r}: subjectivity {subj} outside [0, 1]")
        for word, mult in self.intensifiers.items():
            if mult <= 0:
                raise ValueError(f"intensifier {word!r}: multiplier must be positive")


@dataclass(frozen=True)
class TopicRuleSet:
    """Keyword-voting rules: topic name -> nonempty keyword tuple."""

    topics: dict[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        for name, keywords in self.topics.items():
            if not keywords:
                raise ValueError(f"topic {name!r} has an empty keyword list")


@dataclass(frozen=True)
class DiscourseItem:
    """One cleaned, scored post/comment keyed by pseudo-time ``item_key``."""

    collection_code: str
    item_key: int
    text: str
    polarity: float
    subjectivity: float
    label: str
    topic: str


def load_lexicon(path: str | Path) -> Lexicon:
    entries: dict[str, tuple[float, float]] = {}
    negators: set[str] = set()
    intensifiers: dict[str, float] = {}
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        required = {"word", "polarity", "subjectivity", "flags"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise SchemaError(f"{path}: lexicon header must contain {sorted(required)}")
        for row in reader:
            word = row["word"].strip().lower()
            if not word:
                continue
            flags = (row["flags"] or "").strip().lower()
            if flags == "negator":
                negators.add(word)
            elif flags.startswith("intensifier:"):
                intensifiers[word] = float(flags.split(":", 1)[1])
            else:
                entries[word] = (float(row["polarity"]), float(row["subjectivity"]))
    return Lexicon(entries, frozenset(negators), intensifiers)


def load_topics(path: str | Path) -> TopicRuleSet:
    topics: dict[str, list[str]] = {}
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or not {"topic", "keyword"}.issubset(reader.fieldnames):
            raise SchemaError(f"{path}: topics header must contain ['topic', 'keyword']")
        for row in reader:
            topic = row["topic"].strip()
            keyword = row["keyword"].strip().lower()
            if topic and keyword:
                topics.setdefault(topic, []).append(keyword)
    return TopicRuleSet({name: tuple(words) for name, words in topics.items()})


def default_lexicon() -> Lexicon:
    with resources.as_file(resources.files("discourse_hedonics.data") / "default_lexicon.csv") as p:
        return load_lexicon(p)


def default_topics() -> TopicRuleSet:
    with resources.as_file(resources.files("discourse_hedonics.data") / "default_topics.csv") as p:
        return load_topics(p)


def clean_text(raw: RawDiscourseRecord, config: CleaningConfig = CleaningConfig()) -> str:
    """Strip URLs and header noise, join title and body, normalize whitespace.

    Removed spans are replaced by a space (never the empty string) so removal
    cannot splice adjacent fragments into new tokens; together with whitespace
    collapsing this makes the function idempotent.
    """
    text = f"{raw.title} {raw.body}"
    text = _URL_RE.sub(" ", text)
    for pattern in config.header_patterns:
        text = re.sub(pattern, " ", text)
    return _WS_RE.sub(" ", text).strip()


def _tokenize(text: str) -> list[str]:
    return [tok.replace("'", "") for tok in _TOKEN_RE.findall(text.lower())]


def score_sentiment(
    text: str, lexicon: Lexicon, negation_factor: float = 0.5
) -> tuple[float, float]:
    """Polarity and subjectivity of one cleaned text under ``lexicon``.

    Returns ``(0.0, 0.0)`` when no lexicon word matches.
    """
    tokens = _tokenize(text)
    polarity_terms: list[float] = []
    subjectivity_terms: list[float] = []
    for i, token in enumerate(tokens):
        hit = lexicon.entries.get(token)
        if hit is None:
            continue
        weight, subjectivity = hit
        prev = tokens[i - 1] if i > 0 else None
        if prev is not None and prev in lexicon.negators:
            weight = -weight * negation_factor
        elif prev is not None and prev in lexicon.intensifiers:
            weight = weight * lexicon.intensifiers[prev]
        polarity_terms.append(weight)
        subjectivity_terms.append(subjectivity)
    if not polarity_terms:
        return 0.0, 0.0
    polarity = sum(polarity_terms) / len(polarity_terms)
    subjectivity = sum(subjectivity_terms) / len(subjectivity_terms)
    return min(1.0, max(-1.0, polarity)), min(1.0, max(0.0, subjectivity))


def label_sentiment(polarity: float) -> str:
    if not -1.0 <= polarity <= 1.0:
        raise ValueError(f"polarity {polarity} outside [-1, 1]")
    if polarity > POSITIVE_THRESHOLD:
        return "positive"
    if polarity < NEGATIVE_THRESHOLD:
        return "negative"
    return "neutral"


def assign_topic(text: str, rules: TopicRuleSet) -> str:
    """Unique-argmax keyword vote over whole-word occurrences, else ``"other"``."""
    if not rules.topics:
        raise ValueError("topic rule set is empty")
    counts = {name: 0 for name in rules.topics}
    tokens = _tokenize(text)
    occurrences: dict[str, int] = {}
    for token in tokens:
        occurrences[token] = occurrences.get(token, 0) + 1
    for name, keywords in rules.topics.items():
        counts[name] = sum(occurrences.get(keyword, 0) for keyword in keywords)
    best = max(counts.values())
    if best == 0:
        return "other"
    winners = [name for name, c in counts.items() if c == best]
    return winners[0] if len(winners) == 1 else "other"


@dataclass
class CorpusResult:
    items: pd.DataFrame
    n_input: int
    n_duplicate_url: int
    n_too_short: int
    n_bad_thread_id: int


def score_corpus(
    records: list[RawDiscourseRecord],
    lexicon: Lexicon | None = None,
    rules: TopicRuleSet | None = None,
    cleaning: CleaningConfig = CleaningConfig(),
    negation_factor: float = 0.5,
) -> CorpusResult:
    """Clean, deduplicate, and score a raw discourse corpus.

    Duplicates are exact URL matches (first occurrence kept).  Items whose
    cleaned text is shorter than ``cleaning.min_len`` characters, or whose URL
    carries no decodable thread id, are dropped and counted.  Output rows are
    ordered by ``(collection_code, item_key)``.
    """
    lexicon = lexicon if lexicon is not None else default_lexicon()
    rules = rules if rules is not None else default_topics()
    seen_urls: set[str] = set()
    n_dup = n_short = n_bad_key = 0
    rows: list[DiscourseItem] = []
    for record in records:
        if record.url in seen_urls:
            n_dup += 1
            continue
        seen_urls.add(record.url)
        text = clean_text(record, cleaning)
        if len(text) < cleaning.min_len:
            n_short += 1
            continue
        thread_id = binning.extract_thread_id(record.url)
        if thread_id is None:
            n_bad_key += 1
            continue
        try:
            key = binning.base36_decode(thread_id)
        except ValueError:
            n_bad_key += 1
            continue
        polarity, subjectivity = score_sentiment(text, lexicon, negation_factor)
        rows.append(
            DiscourseItem(
                record.collection_code,
                key,
                text,
                polarity,
                subjectivity,
                label_sentiment(polarity),
                assign_topic(text, rules),
            )
        )
    frame = pd.DataFrame(
        {
            "collection_code": [r.collection_code for r in rows],
            "item_key": [r.item_key for r in rows],
            "text": [r.text for r in rows],
            "polarity": [r.polarity for r in rows],
            "subjectivity": [r.subjectivity for r in rows],
            "label": [r.label for r in rows],
            "topic": [r.topic for r in rows],
        }
    )
    if len(frame):
        frame = frame.sort_values(["collection_code", "item_key"], kind="stable").reset_index(
            drop=True
        )
    return CorpusResult(frame, len(records), n_dup, n_short, n_bad_key)
