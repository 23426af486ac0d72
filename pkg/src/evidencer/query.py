"""Query DSL, ordered slot matching, and cascade execution.

A query is an ordered sequence of slots that must appear in a sentence in
order, not necessarily adjacent. Grammar, one query per line::

    <evidence_type> ":" slot+ [gap<=N]
    slot := TOPIC | ACTION | "word" | lex(<name>) | ent(number|person|org)

Every query carries exactly one TOPIC slot, so every retrieved sentence
contains the topic. Cascade files hold a header line
``cascade <evidence_type> cap=<N>`` followed by query lines; queries run in
file order until the cap is reached.

Matching semantics are leftmost-greedy: slot occurrences are sorted by
(first, last) and each slot takes the earliest occurrence starting after the
previous slot's end that satisfies the gap bound. This canonical assignment
makes index-backed retrieval and the brute-force scan comparable element for
element.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple

from . import annotate
from .corpus import EvidenceType, Motion, Sentence, SentenceId, normalized_phrase
from .index import IndexKey, SemanticIndex

DEFAULT_CAP = 12000

SLOT_TOPIC = "topic"
SLOT_ACTION = "action"
SLOT_LITERAL = "literal"
SLOT_LEXICON = "lexicon"
SLOT_ENTITY = "entity"


class QuerySlot(NamedTuple):
    kind: str
    value: str = ""


@dataclass(frozen=True)
class Query:
    query_id: str
    evidence_type: EvidenceType
    slots: tuple[QuerySlot, ...]
    max_gap: int | None = None

    def __post_init__(self):
        topic_count = sum(1 for s in self.slots if s.kind == SLOT_TOPIC)
        if topic_count != 1:
            raise QueryValidationError(
                f"query must contain exactly one TOPIC slot, found {topic_count}"
            )
        if self.max_gap is not None and self.max_gap < 0:
            raise QueryValidationError("max_gap must be >= 0")


@dataclass(frozen=True)
class Cascade:
    evidence_type: EvidenceType
    queries: tuple[Query, ...]
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.cap <= 0:
            raise QueryValidationError("cap must be positive")
        for query in self.queries:
            if query.evidence_type != self.evidence_type:
                raise QueryValidationError(
                    f"query {query.query_id!r} has type "
                    f"{query.evidence_type.value!r}, cascade is "
                    f"{self.evidence_type.value!r}"
                )


@dataclass(frozen=True)
class Candidate:
    """A sentence matched by a query for a motion, with the matched token
    range of every slot (in slot order)."""

    motion_id: str
    sentence_ref: SentenceId
    query_id: str
    evidence_type: EvidenceType
    match_spans: tuple[tuple[int, int], ...]

    @property
    def pair(self) -> tuple[str, SentenceId]:
        return (self.motion_id, self.sentence_ref)


class QuerySyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"position {position}: {message}")
        self.position = position


class QueryValidationError(ValueError):
    pass


class QueryMotionMismatch(ValueError):
    """Query uses ACTION but the motion proposes none."""


_SLOT_RE = re.compile(
    r"""
    (?P<topic>TOPIC\b)
  | (?P<action>ACTION\b)
  | lex\((?P<lex>[^()\s]+)\)
  | ent\((?P<ent>[^()\s]+)\)
  | "(?P<lit>[^"]*)"
  | gap<=(?P<gap>\d+)
    """,
    re.VERBOSE,
)

_ENT_KINDS = frozenset(annotate.ENTITY_KINDS)


def parse_query(text: str, query_id: str | None = None) -> Query:
    """Parse one DSL line. Raises QuerySyntaxError with a character position
    on bad syntax and QueryValidationError when the TOPIC slot is missing or
    repeated."""
    head, sep, rest = text.partition(":")
    if not sep:
        raise QuerySyntaxError("expected '<evidence_type>:'", position=0)
    type_word = head.strip().lower()
    try:
        evidence_type = EvidenceType(type_word)
    except ValueError:
        raise QuerySyntaxError(
            f"unknown evidence type {head.strip()!r}", position=0
        ) from None

    offset = len(head) + 1
    slots: list[QuerySlot] = []
    max_gap: int | None = None
    pos = 0
    while pos < len(rest):
        if rest[pos].isspace():
            pos += 1
            continue
        m = _SLOT_RE.match(rest, pos)
        if m is None:
            raise QuerySyntaxError(
                f"expected a slot, found {rest[pos:].split()[0]!r}",
                position=offset + pos,
            )
        if max_gap is not None:
            raise QuerySyntaxError(
                "gap<=N must be the final element", position=offset + pos
            )
        if m.group("topic"):
            slots.append(QuerySlot(SLOT_TOPIC))
        elif m.group("action"):
            slots.append(QuerySlot(SLOT_ACTION))
        elif m.group("lex"):
            slots.append(QuerySlot(SLOT_LEXICON, m.group("lex")))
        elif m.group("ent"):
            kind = m.group("ent").lower()
            if kind not in _ENT_KINDS:
                raise QuerySyntaxError(
                    f"unknown entity kind {m.group('ent')!r}", position=offset + pos
                )
            slots.append(QuerySlot(SLOT_ENTITY, kind))
        elif m.group("lit") is not None:
            word = m.group("lit").strip().lower()
            if not word or any(ch.isspace() for ch in word):
                raise QuerySyntaxError(
                    "literal must be a single word", position=offset + pos
                )
            slots.append(QuerySlot(SLOT_LITERAL, word))
        else:
            max_gap = int(m.group("gap"))
        pos = m.end()

    if not slots:
        raise QueryValidationError("query has no slots")
    topic_count = sum(1 for s in slots if s.kind == SLOT_TOPIC)
    if topic_count != 1:
        raise QueryValidationError(
            f"query must contain exactly one TOPIC slot, found {topic_count}"
        )
    query = Query(
        query_id=query_id or "",
        evidence_type=evidence_type,
        slots=tuple(slots),
        max_gap=max_gap,
    )
    if not query.query_id:
        digest = hashlib.sha1(query_to_dsl(query).encode("utf-8")).hexdigest()
        query = Query(f"q{digest[:10]}", evidence_type, query.slots, max_gap)
    return query


def query_to_dsl(query: Query) -> str:
    """Canonical DSL line for a query; parse(print(q)) is a fixpoint."""
    parts = []
    for slot in query.slots:
        if slot.kind == SLOT_TOPIC:
            parts.append("TOPIC")
        elif slot.kind == SLOT_ACTION:
            parts.append("ACTION")
        elif slot.kind == SLOT_LITERAL:
            parts.append(f'"{slot.value}"')
        elif slot.kind == SLOT_LEXICON:
            parts.append(f"lex({slot.value})")
        else:
            parts.append(f"ent({slot.value})")
    if query.max_gap is not None:
        parts.append(f"gap<={query.max_gap}")
    return f"{query.evidence_type.value}: " + " ".join(parts)


_CASCADE_HEADER_RE = re.compile(r"cascade\s+(\w+)\s+cap=(\d+)\s*$")


def parse_cascade(lines: Iterable[str]) -> Cascade:
    """Cascade file: ``cascade <evidence_type> cap=<N>`` then query lines in
    priority order. Blank lines and ``#`` comments are skipped; queries get
    ids ``<type>-1``, ``<type>-2``, ..."""
    content = [ln.strip() for ln in lines]
    content = [ln for ln in content if ln and not ln.startswith("#")]
    if not content:
        raise QueryValidationError("empty cascade file")
    m = _CASCADE_HEADER_RE.match(content[0])
    if m is None:
        raise QueryValidationError(
            "cascade file must start with 'cascade <evidence_type> cap=<N>'"
        )
    try:
        evidence_type = EvidenceType(m.group(1).lower())
    except ValueError:
        raise QueryValidationError(f"unknown evidence type {m.group(1)!r}") from None
    cap = int(m.group(2))
    if cap <= 0:
        raise QueryValidationError("cap must be positive")
    queries = []
    for i, line in enumerate(content[1:], start=1):
        query = parse_query(line, query_id=f"{evidence_type.value}-{i}")
        if query.evidence_type != evidence_type:
            raise QueryValidationError(
                f"query {i} has type {query.evidence_type.value!r}, "
                f"cascade is {evidence_type.value!r}"
            )
        queries.append(query)
    if not queries:
        raise QueryValidationError("cascade has no queries")
    return Cascade(evidence_type=evidence_type, queries=tuple(queries), cap=cap)


def load_cascade(path) -> Cascade:
    with open(path, encoding="utf-8") as f:
        return parse_cascade(f)


def _assign_slots(occ_lists, max_gap):
    """Leftmost-greedy assignment of one occurrence per slot.

    Each occurrence list is sorted by (first, last). Returns the chosen
    spans, or None when no ordered assignment exists under the greedy rule.
    """
    spans = []
    prev_last = -1
    for occs in occ_lists:
        chosen = None
        for first, last in occs:
            if first <= prev_last:
                continue
            if spans and max_gap is not None and first - prev_last - 1 > max_gap:
                return None  # later occurrences only widen the gap
            chosen = (first, last)
            break
        if chosen is None:
            return None
        spans.append(chosen)
        prev_last = chosen[1]
    return spans


def _scan_occurrences(slot: QuerySlot, sentence: Sentence, motion: Motion):
    if slot.kind == SLOT_TOPIC:
        return annotate.topic_occurrences(sentence, motion)
    if slot.kind == SLOT_ACTION:
        if not motion.action:
            raise QueryMotionMismatch(
                f"query needs ACTION but motion {motion.motion_id!r} has none"
            )
        phrase = normalized_phrase(motion.action)
        return annotate.phrase_occurrences(sentence.normalized_tokens, phrase)
    if slot.kind == SLOT_LITERAL:
        return [
            (i, i)
            for i, norm in enumerate(sentence.normalized_tokens)
            if norm == slot.value
        ]
    role = annotate.ROLE_LEXICON if slot.kind == SLOT_LEXICON else annotate.ROLE_ENTITY
    return sorted(
        (span.first, span.last)
        for span in sentence.annotations
        if span.role == role and span.label == slot.value
    )


def match_sentence(query: Query, sentence: Sentence, motion: Motion) -> Candidate | None:
    """Match one annotated sentence; None when the slots cannot be placed."""
    occ_lists = [_scan_occurrences(slot, sentence, motion) for slot in query.slots]
    spans = _assign_slots(occ_lists, query.max_gap)
    if spans is None:
        return None
    return Candidate(
        motion_id=motion.motion_id,
        sentence_ref=sentence.sentence_id,
        query_id=query.query_id,
        evidence_type=query.evidence_type,
        match_spans=tuple(spans),
    )


def brute_force_retrieve(
    corpus: Iterable[Sentence], query: Query, motion: Motion
) -> list[Candidate]:
    """Reference semantics: match_sentence over every sentence, ascending
    sentence id. Query/motion incompatibility is rejected up front so the
    empty corpus behaves like the indexed path."""
    if any(slot.kind == SLOT_ACTION for slot in query.slots) and not motion.action:
        raise QueryMotionMismatch(
            f"query needs ACTION but motion {motion.motion_id!r} has none"
        )
    out = []
    for sentence in sorted(corpus, key=lambda s: s.sentence_id):
        candidate = match_sentence(query, sentence, motion)
        if candidate is not None:
            out.append(candidate)
    return out


def _phrase_postings(index: SemanticIndex, phrase: tuple[str, ...]):
    """Occurrences of a multi-token phrase via positional intersection of
    term postings. Returns {sentence_id: [(first, last), ...]}."""
    if not phrase:
        return {}
    starts = {
        (p.sentence_ref, p.first) for p in index.lookup(IndexKey.term(phrase[0]))
    }
    for offset, word in enumerate(phrase[1:], start=1):
        present = {
            (p.sentence_ref, p.first) for p in index.lookup(IndexKey.term(word))
        }
        starts = {(sid, i) for sid, i in starts if (sid, i + offset) in present}
    by_sentence: dict[SentenceId, set] = {}
    for sid, i in starts:
        by_sentence.setdefault(sid, set()).add((i, i + len(phrase) - 1))
    return by_sentence


def _posting_occurrences(slot: QuerySlot, index: SemanticIndex, motion: Motion):
    """Per-sentence occurrence sets for a slot, straight from the postings."""
    if slot.kind == SLOT_TOPIC:
        by_sentence: dict[SentenceId, set] = {}
        for p in index.lookup(IndexKey.wiki(motion.topic)):
            by_sentence.setdefault(p.sentence_ref, set()).add((p.first, p.last))
        for phrase in annotate.topic_phrases(motion):
            for sid, occs in _phrase_postings(index, phrase).items():
                by_sentence.setdefault(sid, set()).update(occs)
        return by_sentence
    if slot.kind == SLOT_ACTION:
        if not motion.action:
            raise QueryMotionMismatch(
                f"query needs ACTION but motion {motion.motion_id!r} has none"
            )
        return _phrase_postings(index, normalized_phrase(motion.action))
    if slot.kind == SLOT_LITERAL:
        postings = index.lookup(IndexKey.term(slot.value))
    elif slot.kind == SLOT_LEXICON:
        postings = index.lookup(IndexKey.lexicon(slot.value))
    else:
        postings = index.lookup(IndexKey.entity(slot.value))
    by_sentence = {}
    for p in postings:
        by_sentence.setdefault(p.sentence_ref, set()).add((p.first, p.last))
    return by_sentence


def retrieve_query(index: SemanticIndex, query: Query, motion: Motion) -> list[Candidate]:
    """Index-backed retrieval: intersect the slots' posting sentences, then
    place slots positionally. Equals brute_force_retrieve element-wise."""
    slot_occs = [_posting_occurrences(slot, index, motion) for slot in query.slots]
    candidates = set(slot_occs[0])
    for occs in slot_occs[1:]:
        candidates &= set(occs)
    out = []
    for sid in sorted(candidates):
        occ_lists = [sorted(occs[sid]) for occs in slot_occs]
        spans = _assign_slots(occ_lists, query.max_gap)
        if spans is not None:
            out.append(
                Candidate(
                    motion_id=motion.motion_id,
                    sentence_ref=sid,
                    query_id=query.query_id,
                    evidence_type=query.evidence_type,
                    match_spans=tuple(spans),
                )
            )
    return out


def execute_cascade(index: SemanticIndex, cascade: Cascade, motion: Motion) -> list[Candidate]:
    """Run the cascade's queries in priority order, skipping sentences
    already contributed, halting at the cap. The final query's contribution
    is truncated in ascending sentence order so the output size is exactly
    the cap whenever enough matches exist."""
    out: list[Candidate] = []
    seen: set[SentenceId] = set()
    for query in cascade.queries:
        if len(out) >= cascade.cap:
            break
        fresh = [
            c for c in retrieve_query(index, query, motion)
            if c.sentence_ref not in seen
        ]
        take = fresh[: cascade.cap - len(out)]
        out.extend(take)
        seen.update(c.sentence_ref for c in take)
    return out


def retrieve_for_motion(
    index: SemanticIndex,
    cascades: Mapping[EvidenceType, Cascade],
    motion: Motion,
) -> list[Candidate]:
    """Union of the Study and Expert cascade results with duplicate sentences
    removed; a sentence retrieved by both keeps its Study attribution."""
    study = execute_cascade(index, cascades[EvidenceType.STUDY], motion)
    expert = execute_cascade(index, cascades[EvidenceType.EXPERT], motion)
    taken = {c.sentence_ref for c in study}
    return study + [c for c in expert if c.sentence_ref not in taken]
