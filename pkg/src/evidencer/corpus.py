"""Domain types and corpus plumbing: ingestion, segmentation, tokenization.

Everything downstream consumes the ``Sentence`` objects produced here, so the
text handling is deliberately simple and fully deterministic:

* sentences split after ``. ! ?`` when followed by whitespace and an uppercase
  letter or digit, with an abbreviation guard on ``.``;
* tokens are maximal runs of word characters; every other non-space character
  is a one-character token;
* ``normalized`` is plain lowercase, no stemming.

All offsets are unicode scalar-value offsets into the sentence text, never
bytes.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, NamedTuple


class SentenceId(NamedTuple):
    """Identity of a sentence: owning document plus position within it."""

    doc_id: str
    sent_idx: int


@dataclass(frozen=True)
class Document:
    doc_id: str
    source: str
    title: str
    text: str


@dataclass(frozen=True)
class Token:
    surface: str
    normalized: str
    start: int
    end: int


@dataclass(frozen=True)
class Sentence:
    """A tokenized corpus sentence, optionally carrying annotation spans.

    ``annotations`` is a sorted tuple of ``annotate.AnnotationSpan``; fresh
    sentences from segmentation carry none.
    """

    sentence_id: SentenceId
    text: str
    tokens: tuple[Token, ...]
    annotations: tuple = ()

    @property
    def normalized_tokens(self) -> tuple[str, ...]:
        return tuple(t.normalized for t in self.tokens)


@dataclass(frozen=True)
class Motion:
    """A debate statement: a topic (a wiki title), an optional action verb,
    and the statement text.

    ``topic_surface_forms`` holds the alternate strings under which the topic
    may appear in text, derived from the wikification redirect table.
    """

    motion_id: str
    text: str
    topic: str
    action: str | None = None
    topic_surface_forms: tuple[str, ...] = ()


class EvidenceType(str, Enum):
    STUDY = "study"
    EXPERT = "expert"


class CorpusError(ValueError):
    """Malformed corpus input. ``line`` is the 1-based input line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


_REQUIRED_FIELDS = ("doc_id", "source", "title", "text")


def ingest_corpus(lines: Iterable[str]) -> list[Document]:
    """Read newline-delimited JSON records into Documents, order preserved.

    Each record must carry the string fields doc_id, source, title and text.
    Blank lines are ignored. Raises CorpusError with the offending line
    number on malformed records, and on duplicate doc_ids (naming the id).
    """
    docs: list[Document] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"invalid JSON record: {exc.msg}", line=lineno) from exc
        if not isinstance(record, dict):
            raise CorpusError("record is not an object", line=lineno)
        for field_name in _REQUIRED_FIELDS:
            if field_name not in record:
                raise CorpusError(f"missing field {field_name!r}", line=lineno)
            if not isinstance(record[field_name], str):
                raise CorpusError(f"field {field_name!r} is not a string", line=lineno)
        doc_id = record["doc_id"]
        if not doc_id:
            raise CorpusError("empty doc_id", line=lineno)
        if doc_id in seen:
            raise CorpusError(f"duplicate doc_id {doc_id!r}", line=lineno)
        seen.add(doc_id)
        docs.append(
            Document(
                doc_id=doc_id,
                source=record["source"],
                title=record["title"],
                text=record["text"],
            )
        )
    return docs


# Word-character runs, or a single non-space symbol. Punctuation is its own
# token, so "harm." yields ["harm", "."].
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[Token]:
    """Split text into tokens with exact character spans.

    Spans are non-overlapping and strictly increasing; the normalized form is
    the lowercased surface.
    """
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        surface = m.group(0)
        tokens.append(Token(surface, surface.lower(), m.start(), m.end()))
    return tokens


_TERMINALS = frozenset(".!?")

# Guard list for the '.' splitter. Candidates are compared lowercased, with
# any leading punctuation stripped; single alphabetic characters (initials)
# are always treated as abbreviations.
_ABBREVIATIONS = frozenset(
    """
    dr mr mrs ms prof rev gen sen rep gov st jr sr vs etc e.g i.e cf al
    inc ltd co corp dept univ assn bros fig figs no nos vol vols pp ed eds
    approx est mt ft oz lb km cm mm hr min sec u.s u.k a.m p.m ph.d m.d
    b.a m.a d.c jan feb mar apr jun jul aug sep sept oct nov dec
    """.split()
)


def _is_abbreviation(text: str, dot_idx: int) -> bool:
    start = dot_idx
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    candidate = text[start:dot_idx].lstrip("\"'([{")
    if len(candidate) == 1 and candidate.isalpha():
        return True
    return candidate.lower() in _ABBREVIATIONS


def sentence_spans(text: str) -> list[tuple[int, int]]:
    """Character spans of the sentences in ``text``, whitespace-trimmed.

    A boundary is a terminal mark followed by whitespace and then an
    uppercase letter or digit; a '.' preceded by a known abbreviation or a
    single-letter initial never splits. Every non-whitespace character lands
    in exactly one span.
    """
    n = len(text)
    raw: list[tuple[int, int]] = []
    start = 0
    i = 0
    while i < n:
        ch = text[i]
        if ch in _TERMINALS:
            j = i + 1
            k = j
            while k < n and text[k].isspace():
                k += 1
            if k > j and k < n and (text[k].isupper() or text[k].isdigit()):
                if not (ch == "." and _is_abbreviation(text, i)):
                    raw.append((start, j))
                    start = k
                    i = k
                    continue
        i += 1
    if start < n:
        raw.append((start, n))

    spans = []
    for s, e in raw:
        while s < e and text[s].isspace():
            s += 1
        while e > s and text[e - 1].isspace():
            e -= 1
        if s < e:
            spans.append((s, e))
    return spans


def segment_sentences(doc: Document) -> list[Sentence]:
    """Split a document into tokenized sentences. Empty text yields []."""
    sentences = []
    for idx, (s, e) in enumerate(sentence_spans(doc.text)):
        sent_text = doc.text[s:e]
        sentences.append(
            Sentence(
                sentence_id=SentenceId(doc.doc_id, idx),
                text=sent_text,
                tokens=tuple(tokenize(sent_text)),
            )
        )
    return sentences


def normalized_phrase(text: str) -> tuple[str, ...]:
    """Normalized token tuple for a phrase string (lexicon terms, redirect
    keys, topic surface forms all share this form)."""
    return tuple(t.normalized for t in tokenize(text))
