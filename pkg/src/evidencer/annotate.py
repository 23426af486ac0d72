"""Semantic annotation layers over tokenized sentences.

Three layers, all deterministic given the loaded resources:

* lexicon hits, greedy longest match per lexicon;
* lightweight named entities: numbers by token pattern, persons and
  organizations by gazetteer longest match;
* wiki links, greedy longest match against a redirect table, matched tokens
  consumed.

Plus topic masking, which rewrites a sentence with every topic occurrence
replaced by a mask token.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Iterable, Mapping

from .corpus import Motion, Sentence, normalized_phrase

ROLE_LEXICON = "lexicon"
ROLE_ENTITY = "entity"
ROLE_WIKI = "wiki"

ENTITY_NUMBER = "number"
ENTITY_PERSON = "person"
ENTITY_ORG = "org"
ENTITY_KINDS = (ENTITY_NUMBER, ENTITY_PERSON, ENTITY_ORG)

DEFAULT_MASK_TOKEN = "[TOPIC]"


@dataclass(frozen=True)
class AnnotationSpan:
    """An inclusive token range tagged with a semantic role.

    ``role`` is one of the ROLE_* constants; ``label`` is the lexicon name,
    the entity kind, or the canonical wiki title.
    """

    first: int
    last: int
    role: str
    label: str

    def __post_init__(self):
        if self.first < 0 or self.last < self.first:
            raise ValueError(f"invalid token range ({self.first}, {self.last})")


def _span_order(span: AnnotationSpan):
    return (span.first, span.last, span.role, span.label)


@dataclass(frozen=True)
class Lexicon:
    """A named set of normalized terms; terms may span several tokens."""

    name: str
    terms: frozenset[tuple[str, ...]]
    max_len: int

    @classmethod
    def build(cls, name: str, raw_terms: Iterable[str]) -> "Lexicon":
        if not name:
            raise ValueError("lexicon name must be nonempty")
        terms = set()
        for raw in raw_terms:
            phrase = normalized_phrase(raw)
            if not phrase:
                raise ValueError(f"lexicon {name!r} contains an empty term")
            terms.add(phrase)
        return cls(name=name, terms=frozenset(terms),
                   max_len=max((len(t) for t in terms), default=0))


def parse_lexicon(lines: Iterable[str]) -> Lexicon:
    """Lexicon file format: first line ``name=<lexicon name>``, then one term
    per line. Blank lines and ``#`` comments are skipped."""
    it = iter(lines)
    header = ""
    for raw in it:
        if raw.strip():
            header = raw.strip()
            break
    if not header.startswith("name="):
        raise ValueError("lexicon file must start with a name=<name> line")
    name = header[len("name="):].strip()
    terms = [ln.strip() for ln in it if ln.strip() and not ln.strip().startswith("#")]
    return Lexicon.build(name, terms)


def load_lexicon(path) -> Lexicon:
    with open(path, encoding="utf-8") as f:
        return parse_lexicon(f)


class RedirectTable:
    """Surface form -> canonical wiki title, keyed by normalized token tuples.

    Canonical titles always map to themselves, so every value is reachable as
    a key.
    """

    def __init__(self, pairs: Iterable[tuple[str, str]] = ()):
        self._by_phrase: dict[tuple[str, ...], str] = {}
        self._canonical: set[str] = set()
        self.max_len = 0
        for surface, canonical in pairs:
            self.add(surface, canonical)

    def add(self, surface: str, canonical: str) -> None:
        key = normalized_phrase(surface)
        if not key:
            raise ValueError("empty redirect surface form")
        if not canonical.strip():
            raise ValueError("empty canonical title")
        self._by_phrase[key] = canonical
        if canonical not in self._canonical:
            self._canonical.add(canonical)
            self_key = normalized_phrase(canonical)
            self._by_phrase.setdefault(self_key, canonical)
        self.max_len = max(self.max_len, len(key), len(normalized_phrase(canonical)))

    def __len__(self) -> int:
        return len(self._by_phrase)

    def lookup(self, phrase: tuple[str, ...]) -> str | None:
        return self._by_phrase.get(phrase)

    def canonicalize(self, title: str) -> str | None:
        """Canonical title for a surface string, or None if unknown."""
        if title in self._canonical:
            return title
        return self._by_phrase.get(normalized_phrase(title))

    def surface_forms(self, canonical: str) -> list[str]:
        """All surface strings mapping to ``canonical`` (normalized, space
        joined), sorted; includes the canonical title's own form."""
        forms = {
            " ".join(key)
            for key, value in self._by_phrase.items()
            if value == canonical
        }
        return sorted(forms)


def parse_redirects(lines: Iterable[str]) -> RedirectTable:
    """Redirect file format: tab-separated ``surface<TAB>canonical`` lines."""
    table = RedirectTable()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected surface<TAB>canonical")
        table.add(parts[0].strip(), parts[1].strip())
    return table


def load_redirects(path) -> RedirectTable:
    with open(path, encoding="utf-8") as f:
        return parse_redirects(f)


def resolve_motion(motion: Motion, table: RedirectTable) -> Motion:
    """Canonicalize the motion topic and attach its surface forms.

    The topic must be a key or value of the redirect table.
    """
    canonical = table.canonicalize(motion.topic)
    if canonical is None:
        raise ValueError(
            f"motion {motion.motion_id!r}: topic {motion.topic!r} "
            "is not in the redirect table"
        )
    return replace(
        motion,
        topic=canonical,
        topic_surface_forms=tuple(table.surface_forms(canonical)),
    )


def _greedy_spans(norm_tokens, phrases, max_len):
    """Greedy left-to-right longest match of phrase tuples over tokens.

    Yields (first, last, phrase); matched tokens are consumed, so the spans
    never overlap.
    """
    found = []
    n = len(norm_tokens)
    i = 0
    while i < n:
        matched = False
        for length in range(min(max_len, n - i), 0, -1):
            candidate = tuple(norm_tokens[i:i + length])
            if candidate in phrases:
                found.append((i, i + length - 1, candidate))
                i += length
                matched = True
                break
        if not matched:
            i += 1
    return found


def tag_lexicons(sentence: Sentence, lexicons: Iterable[Lexicon]) -> list[AnnotationSpan]:
    """One span per maximal lexicon-term occurrence, matched on normalized
    tokens. Lexicons match independently of each other, so spans from
    different lexicons may overlap; within one lexicon they never do."""
    norm = sentence.normalized_tokens
    spans = []
    for lexicon in lexicons:
        if not lexicon.terms:
            continue
        for first, last, _ in _greedy_spans(norm, lexicon.terms, lexicon.max_len):
            spans.append(AnnotationSpan(first, last, ROLE_LEXICON, lexicon.name))
    spans.sort(key=_span_order)
    return spans


_DIGITS_RE = re.compile(r"[0-9]+$")

_NUMBER_WORDS = frozenset(
    """
    zero one two three four five six seven eight nine ten eleven twelve
    thirteen fourteen fifteen sixteen seventeen eighteen nineteen twenty
    thirty forty fifty sixty seventy eighty ninety hundred thousand million
    billion trillion half quarter dozen
    """.split()
)


def _number_spans(norm: tuple[str, ...]) -> list[tuple[int, int]]:
    """Token ranges of number mentions.

    digits ((. | ,) digits)* (% | percent)?   e.g. 23%  3.5  1,000
    numberword (-? numberword)* (percent)?    e.g. twenty - three percent
    """
    spans = []
    n = len(norm)
    i = 0
    while i < n:
        if _DIGITS_RE.match(norm[i]):
            j = i
            while j + 2 < n and norm[j + 1] in (".", ",") and _DIGITS_RE.match(norm[j + 2]):
                j += 2
            if j + 1 < n and norm[j + 1] in ("%", "percent"):
                j += 1
            spans.append((i, j))
            i = j + 1
        elif norm[i] in _NUMBER_WORDS:
            j = i
            while True:
                if j + 1 < n and norm[j + 1] in _NUMBER_WORDS:
                    j += 1
                elif j + 2 < n and norm[j + 1] == "-" and norm[j + 2] in _NUMBER_WORDS:
                    j += 2
                else:
                    break
            if j + 1 < n and norm[j + 1] == "percent":
                j += 1
            spans.append((i, j))
            i = j + 1
        else:
            i += 1
    return spans


def tag_named_entities(
    sentence: Sentence,
    gazetteers: Mapping[str, Lexicon] | None = None,
) -> list[AnnotationSpan]:
    """Number spans by pattern; person/org spans by gazetteer longest match.

    ``gazetteers`` maps entity kind ("person", "org") to a Lexicon of names.
    """
    norm = sentence.normalized_tokens
    spans = [
        AnnotationSpan(first, last, ROLE_ENTITY, ENTITY_NUMBER)
        for first, last in _number_spans(norm)
    ]
    for kind, gazetteer in (gazetteers or {}).items():
        if kind not in (ENTITY_PERSON, ENTITY_ORG):
            raise ValueError(f"unknown gazetteer kind {kind!r}")
        if not gazetteer.terms:
            continue
        for first, last, _ in _greedy_spans(norm, gazetteer.terms, gazetteer.max_len):
            spans.append(AnnotationSpan(first, last, ROLE_ENTITY, kind))
    spans.sort(key=_span_order)
    return spans


def wikify(sentence: Sentence, table: RedirectTable) -> list[AnnotationSpan]:
    """Greedy left-to-right longest match against redirect keys; matched
    tokens are consumed so wiki links never overlap."""
    if len(table) == 0:
        return []
    norm = sentence.normalized_tokens
    spans = []
    for first, last, phrase in _greedy_spans(norm, set(table._by_phrase), table.max_len):
        spans.append(AnnotationSpan(first, last, ROLE_WIKI, table.lookup(phrase)))
    return spans


def annotate_sentence(
    sentence: Sentence,
    lexicons: Iterable[Lexicon] = (),
    gazetteers: Mapping[str, Lexicon] | None = None,
    table: RedirectTable | None = None,
) -> Sentence:
    """Attach all annotation layers, returning a new Sentence."""
    spans = list(tag_lexicons(sentence, lexicons))
    spans.extend(tag_named_entities(sentence, gazetteers))
    if table is not None:
        spans.extend(wikify(sentence, table))
    spans.sort(key=_span_order)
    return replace(sentence, annotations=tuple(spans))


def topic_phrases(motion: Motion) -> set[tuple[str, ...]]:
    """Normalized token tuples under which the motion topic may appear."""
    phrases = {normalized_phrase(motion.topic)}
    for form in motion.topic_surface_forms:
        phrases.add(normalized_phrase(form))
    phrases.discard(())
    return phrases


def topic_token_set(motion: Motion) -> set[str]:
    """Union of the tokens of all topic phrases (for dedup exclusion)."""
    tokens: set[str] = set()
    for phrase in topic_phrases(motion):
        tokens.update(phrase)
    return tokens


def phrase_occurrences(norm, phrase) -> list[tuple[int, int]]:
    length = len(phrase)
    if length == 0 or length > len(norm):
        return []
    return [
        (i, i + length - 1)
        for i in range(len(norm) - length + 1)
        if tuple(norm[i:i + length]) == phrase
    ]


def topic_occurrences(sentence: Sentence, motion: Motion) -> list[tuple[int, int]]:
    """Token ranges where the motion topic appears: wiki links carrying the
    topic title, plus raw occurrences of any topic surface form. Sorted and
    duplicate-free."""
    occurrences = {
        (span.first, span.last)
        for span in sentence.annotations
        if span.role == ROLE_WIKI and span.label == motion.topic
    }
    norm = sentence.normalized_tokens
    for phrase in topic_phrases(motion):
        occurrences.update(phrase_occurrences(norm, phrase))
    return sorted(occurrences)


def _merge_char_ranges(ranges: list[tuple[int, int]]) -> list[tuple[int, int]]:
    merged: list[tuple[int, int]] = []
    for s, e in sorted(ranges):
        if merged and s <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return merged


def mask_topic(sentence: Sentence, motion: Motion, mask_token: str = DEFAULT_MASK_TOKEN) -> str:
    """Sentence text with every topic occurrence replaced by ``mask_token``.

    Whitespace immediately around each replacement collapses to a single
    space (or disappears at the string boundaries); text away from the
    replacements is untouched, so a sentence without the topic comes back
    verbatim. Masking an already masked sentence is a no-op.
    """
    token_ranges = topic_occurrences(sentence, motion)
    if not token_ranges:
        return sentence.text
    char_ranges = _merge_char_ranges(
        [(sentence.tokens[f].start, sentence.tokens[l].end) for f, l in token_ranges]
    )
    text = sentence.text
    parts = []
    pos = 0
    for s, e in char_ranges:
        before = text[pos:s].rstrip()
        if parts:
            before = before.lstrip()
            parts.append(f" {before} " if before else " ")
        elif before:
            parts.append(before + " ")
        parts.append(mask_token)
        pos = e
    tail = text[pos:].lstrip()
    if tail:
        parts.append(" " + tail)
    return "".join(parts)
