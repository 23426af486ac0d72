"""Positional semantic inverted index over annotated sentences.

Keys cover surface terms and the semantic roles attached by annotation;
postings carry inclusive token ranges so ordered-occurrence queries never
re-scan sentence text.

Persistence format (little-endian throughout)::

    magic      4 bytes  "EVIX"
    version    u32      currently 1
    length     u64      payload byte count
    payload             see below
    checksum   u32      CRC-32 of every preceding byte

    payload:
      u32 doc_count, u32 sentence_count
      u32 n_sources,   n x (str doc_id, str source)
      u32 n_sentences, each:
          str doc_id, u32 sent_idx, str text,
          u32 n_tokens, n x (u32 start, u32 end),
          u32 n_spans,  n x (u8 role, str label, u32 first, u32 last)
      u32 n_keys, n x (u8 kind, str value)        sorted by (kind, value)
      per key: u32 n_postings, n x (u32 sentence_ordinal, u32 first, u32 last)

    str = u32 byte length + UTF-8 bytes. Sentences are serialized sorted by
    (doc_id, sent_idx) and postings reference them by ordinal, so saving the
    same index twice is byte-identical. Token surfaces are not stored; they
    are re-sliced from the sentence text on load.
"""

from __future__ import annotations

import io
import struct
import zlib
from typing import Iterable, Mapping, NamedTuple

from .annotate import ROLE_ENTITY, ROLE_LEXICON, ROLE_WIKI, AnnotationSpan
from .corpus import Sentence, SentenceId, Token

MAGIC = b"EVIX"
FORMAT_VERSION = 1

KIND_TERM = "term"
KIND_LEXICON = "lexicon"
KIND_ENTITY = "entity"
KIND_WIKI = "wiki"

_KIND_CODES = {KIND_TERM: 0, KIND_LEXICON: 1, KIND_ENTITY: 2, KIND_WIKI: 3}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}
_ROLE_CODES = {ROLE_LEXICON: 0, ROLE_ENTITY: 1, ROLE_WIKI: 2}
_CODE_ROLES = {v: k for k, v in _ROLE_CODES.items()}
_ROLE_TO_KIND = {ROLE_LEXICON: KIND_LEXICON, ROLE_ENTITY: KIND_ENTITY, ROLE_WIKI: KIND_WIKI}


class IndexKey(NamedTuple):
    kind: str
    value: str

    @classmethod
    def term(cls, value: str) -> "IndexKey":
        return cls(KIND_TERM, value)

    @classmethod
    def lexicon(cls, name: str) -> "IndexKey":
        return cls(KIND_LEXICON, name)

    @classmethod
    def entity(cls, kind: str) -> "IndexKey":
        return cls(KIND_ENTITY, kind)

    @classmethod
    def wiki(cls, title: str) -> "IndexKey":
        return cls(KIND_WIKI, title)


class Posting(NamedTuple):
    sentence_ref: SentenceId
    first: int
    last: int


class IndexError_(Exception):
    """Base for index build/io failures."""


class DuplicateSentenceError(IndexError_):
    pass


class IndexVersionError(IndexError_):
    """Bad magic bytes or unsupported format version."""


class IndexTruncatedError(IndexError_):
    """File ends before the declared payload does."""


class IndexChecksumError(IndexError_):
    """Stored CRC-32 does not match the file contents."""


class SemanticIndex:
    """Postings plus the sentence store they refer into.

    Immutable once built; any number of readers may share one instance.
    """

    def __init__(self):
        self.postings: dict[IndexKey, list[Posting]] = {}
        self.sentences: dict[SentenceId, Sentence] = {}
        self.doc_sources: dict[str, str] = {}

    @property
    def sentence_count(self) -> int:
        return len(self.sentences)

    @property
    def doc_count(self) -> int:
        return len({sid.doc_id for sid in self.sentences})

    def lookup(self, key: IndexKey) -> list[Posting]:
        """Postings for ``key``, sorted; missing keys yield []."""
        return self.postings.get(key, [])

    def __eq__(self, other) -> bool:
        if not isinstance(other, SemanticIndex):
            return NotImplemented
        return (
            self.postings == other.postings
            and self.sentences == other.sentences
            and self.doc_sources == other.doc_sources
        )


def build_index(
    sentences: Iterable[Sentence],
    doc_sources: Mapping[str, str] | None = None,
) -> SemanticIndex:
    """Index a stream of annotated sentences.

    Every token contributes a term posting; every annotation span contributes
    a posting under its role key. Raises DuplicateSentenceError on a repeated
    sentence id.
    """
    index = SemanticIndex()
    if doc_sources:
        index.doc_sources = dict(doc_sources)
    raw: dict[IndexKey, set[Posting]] = {}
    for sentence in sentences:
        sid = sentence.sentence_id
        if sid in index.sentences:
            raise DuplicateSentenceError(f"duplicate sentence id {sid}")
        index.sentences[sid] = sentence
        for i, token in enumerate(sentence.tokens):
            raw.setdefault(IndexKey.term(token.normalized), set()).add(Posting(sid, i, i))
        for span in sentence.annotations:
            key = IndexKey(_ROLE_TO_KIND[span.role], span.label)
            raw.setdefault(key, set()).add(Posting(sid, span.first, span.last))
    index.postings = {key: sorted(posts) for key, posts in raw.items()}
    return index


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def u8(self, v):
        self.buf.write(struct.pack("<B", v))

    def u32(self, v):
        self.buf.write(struct.pack("<I", v))

    def string(self, s: str):
        data = s.encode("utf-8")
        self.u32(len(data))
        self.buf.write(data)

    def getvalue(self) -> bytes:
        return self.buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IndexTruncatedError("unexpected end of index data")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def string(self) -> str:
        return self._take(self.u32()).decode("utf-8")


def _encode_payload(index: SemanticIndex) -> bytes:
    w = _Writer()
    w.u32(index.doc_count)
    w.u32(index.sentence_count)

    sources = sorted(index.doc_sources.items())
    w.u32(len(sources))
    for doc_id, source in sources:
        w.string(doc_id)
        w.string(source)

    sids = sorted(index.sentences)
    ordinals = {sid: i for i, sid in enumerate(sids)}
    w.u32(len(sids))
    for sid in sids:
        sentence = index.sentences[sid]
        w.string(sid.doc_id)
        w.u32(sid.sent_idx)
        w.string(sentence.text)
        w.u32(len(sentence.tokens))
        for token in sentence.tokens:
            w.u32(token.start)
            w.u32(token.end)
        w.u32(len(sentence.annotations))
        for span in sentence.annotations:
            w.u8(_ROLE_CODES[span.role])
            w.string(span.label)
            w.u32(span.first)
            w.u32(span.last)

    keys = sorted(index.postings, key=lambda k: (_KIND_CODES[k.kind], k.value))
    w.u32(len(keys))
    for key in keys:
        w.u8(_KIND_CODES[key.kind])
        w.string(key.value)
    for key in keys:
        posts = index.postings[key]
        w.u32(len(posts))
        for post in posts:
            w.u32(ordinals[post.sentence_ref])
            w.u32(post.first)
            w.u32(post.last)
    return w.getvalue()


def _decode_payload(data: bytes) -> SemanticIndex:
    r = _Reader(data)
    index = SemanticIndex()
    r.u32()  # doc_count, derived on the live object
    r.u32()  # sentence_count

    for _ in range(r.u32()):
        doc_id = r.string()
        index.doc_sources[doc_id] = r.string()

    sids: list[SentenceId] = []
    for _ in range(r.u32()):
        doc_id = r.string()
        sent_idx = r.u32()
        text = r.string()
        tokens = []
        for _ in range(r.u32()):
            start = r.u32()
            end = r.u32()
            surface = text[start:end]
            tokens.append(Token(surface, surface.lower(), start, end))
        spans = []
        for _ in range(r.u32()):
            role = _CODE_ROLES[r.u8()]
            label = r.string()
            first = r.u32()
            last = r.u32()
            spans.append(AnnotationSpan(first, last, role, label))
        sid = SentenceId(doc_id, sent_idx)
        sids.append(sid)
        index.sentences[sid] = Sentence(sid, text, tuple(tokens), tuple(spans))

    keys = []
    for _ in range(r.u32()):
        kind = _CODE_KINDS[r.u8()]
        keys.append(IndexKey(kind, r.string()))
    for key in keys:
        posts = []
        for _ in range(r.u32()):
            ordinal = r.u32()
            first = r.u32()
            last = r.u32()
            posts.append(Posting(sids[ordinal], first, last))
        index.postings[key] = posts
    return index


def save_index(index: SemanticIndex, path) -> None:
    payload = _encode_payload(index)
    head = MAGIC + struct.pack("<I", FORMAT_VERSION) + struct.pack("<Q", len(payload))
    body = head + payload
    checksum = struct.pack("<I", zlib.crc32(body))
    with open(path, "wb") as f:
        f.write(body)
        f.write(checksum)


def load_index(path) -> SemanticIndex:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8:
        raise IndexTruncatedError("file shorter than the index header")
    if data[:4] != MAGIC:
        raise IndexVersionError("not an index file (bad magic bytes)")
    version = struct.unpack("<I", data[4:8])[0]
    if version != FORMAT_VERSION:
        raise IndexVersionError(f"unsupported index format version {version}")
    if len(data) < 16:
        raise IndexTruncatedError("file shorter than the index header")
    payload_len = struct.unpack("<Q", data[8:16])[0]
    expected = 16 + payload_len + 4
    if len(data) < expected:
        raise IndexTruncatedError(
            f"file is {len(data)} bytes, header declares {expected}"
        )
    if len(data) > expected:
        raise IndexChecksumError("trailing bytes after the checksum")
    stored = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) != stored:
        raise IndexChecksumError("CRC-32 mismatch")
    return _decode_payload(data[16:-4])
