"""Synthetic corpora, queries, and candidate pools for randomized tests."""

from __future__ import annotations

import math
import random

from evidencer import annotate, query
from evidencer.corpus import EvidenceType, Motion, Sentence, SentenceId, tokenize
from evidencer.index import build_index
from evidencer.query import Candidate, Query, QuerySlot

WORDS = [f"w{i}" for i in range(60)]
PERSON_NAMES = [("pa", "pb"), ("pc",), ("pd", "pe")]
ORG_NAMES = [("oa", "ob", "oc"), ("od",)]


def make_resources(rng: random.Random):
    """Random lexicons, gazetteers, and a redirect table over the synthetic
    vocabulary. Topics get one multi-word and one single-word surface each."""
    table = annotate.RedirectTable()
    topics = []
    for t in range(3):
        canonical = f"Concept {t}"
        table.add(f"t{t}x t{t}y", canonical)
        table.add(f"t{t}z", canonical)
        topics.append(canonical)

    def lexicon(name):
        terms = rng.sample(WORDS, 6)
        terms.append(" ".join(rng.sample(WORDS, 2)))
        return annotate.Lexicon.build(name, terms)

    lexicons = [lexicon("study"), lexicon("expert"), lexicon("sentiment")]
    gazetteers = {
        annotate.ENTITY_PERSON: annotate.Lexicon.build(
            "person", [" ".join(n) for n in PERSON_NAMES]
        ),
        annotate.ENTITY_ORG: annotate.Lexicon.build(
            "org", [" ".join(n) for n in ORG_NAMES]
        ),
    }
    return lexicons, gazetteers, table, topics


def random_sentence_text(rng: random.Random, topic_idx: int | None) -> str:
    parts = []
    for _ in range(rng.randint(3, 14)):
        roll = rng.random()
        if roll < 0.70:
            parts.append(rng.choice(WORDS))
        elif roll < 0.78:
            parts.append(str(rng.randint(0, 9999)))
        elif roll < 0.82:
            parts.append(f"{rng.randint(1, 99)}%")
        elif roll < 0.88:
            parts.append(" ".join(rng.choice(PERSON_NAMES + ORG_NAMES)))
        else:
            t = rng.randrange(3)
            parts.append(rng.choice([f"t{t}x t{t}y", f"t{t}z"]))
    if topic_idx is not None:
        surface = rng.choice([f"t{topic_idx}x t{topic_idx}y", f"t{topic_idx}z"])
        parts.insert(rng.randint(0, len(parts)), surface)
    return " ".join(parts) + "."


def make_corpus(rng: random.Random, size: int, lexicons, gazetteers, table):
    """``size`` annotated sentences spread over documents of up to five
    sentences; roughly half mention some topic."""
    sentences = []
    for j in range(size):
        topic_idx = rng.randrange(3) if rng.random() < 0.5 else None
        text = random_sentence_text(rng, topic_idx)
        sid = SentenceId(f"d{j // 5:04d}", j % 5)
        sentence = Sentence(sid, text, tuple(tokenize(text)))
        sentences.append(annotate.annotate_sentence(sentence, lexicons, gazetteers, table))
    return sentences


def make_motion(rng: random.Random, table: annotate.RedirectTable, topic_idx: int) -> Motion:
    canonical = f"Concept {topic_idx}"
    motion = Motion(
        motion_id=f"m{topic_idx}",
        text=f"we should reconsider {canonical.lower()}",
        topic=canonical,
        action="reconsider" if rng.random() < 0.5 else None,
    )
    return annotate.resolve_motion(motion, table)


def random_query(rng: random.Random, lexicons, query_id: str) -> Query:
    evidence_type = rng.choice([EvidenceType.STUDY, EvidenceType.EXPERT])
    n_other = rng.randint(0, 3)
    slots = []
    for _ in range(n_other):
        roll = rng.random()
        if roll < 0.4:
            slots.append(QuerySlot(query.SLOT_LITERAL, rng.choice(WORDS)))
        elif roll < 0.75:
            slots.append(QuerySlot(query.SLOT_LEXICON, rng.choice(lexicons).name))
        else:
            slots.append(QuerySlot(query.SLOT_ENTITY, rng.choice(annotate.ENTITY_KINDS)))
    slots.insert(rng.randint(0, len(slots)), QuerySlot(query.SLOT_TOPIC))
    max_gap = rng.choice([None, None, rng.randint(1, 8)])
    return Query(query_id, evidence_type, tuple(slots), max_gap)


def corpus_and_index(rng: random.Random, size: int):
    lexicons, gazetteers, table, _ = make_resources(rng)
    sentences = make_corpus(rng, size, lexicons, gazetteers, table)
    return sentences, build_index(sentences), lexicons, table


# --- candidate pools for the labeling simulations -------------------------

STUDY_TERMS = ["finding", "result", "measure", "estimate", "count"]
FILLER = [f"f{i}" for i in range(30)]


def enrichment_pool(
    rng: random.Random,
    motions: int = 2,
    per_motion: int = 4000,
    positive_prior: float = 0.03,
):
    """Candidate pool with planted informative features.

    Positive sentences carry several study-lexicon hits, negatives rarely
    more than one, so a trained model can separate them; ground truth is a
    pair -> bool map.
    """
    study = annotate.Lexicon.build("study", STUDY_TERMS)
    sentences = {}
    pool = []
    truth = {}
    motion_map = {}
    for m in range(motions):
        topic = f"topic{m}"
        motion = Motion(f"m{m}", f"we should ban {topic}", topic)
        motion_map[motion.motion_id] = motion
        for i in range(per_motion):
            positive = rng.random() < positive_prior
            n_hits = 2 + sum(rng.random() < 0.8 for _ in range(3)) if positive \
                else int(rng.random() < 0.15)
            words = [rng.choice(FILLER) for _ in range(rng.randint(4, 9))]
            for _ in range(n_hits):
                words.insert(rng.randint(0, len(words)), rng.choice(STUDY_TERMS))
            words.insert(rng.randint(0, len(words)), topic)
            text = " ".join(words) + "."
            sid = SentenceId(f"m{m}-d{i:05d}", 0)
            sentence = Sentence(sid, text, tuple(tokenize(text)))
            sentence = annotate.annotate_sentence(sentence, [study])
            sentences[sid] = sentence
            topic_pos = next(
                j for j, tok in enumerate(sentence.tokens) if tok.normalized == topic
            )
            pool.append(
                Candidate(motion.motion_id, sid, "synth", EvidenceType.STUDY,
                          ((topic_pos, topic_pos),))
            )
            truth[(motion.motion_id, sid)] = positive
    return pool, sentences, motion_map, truth


def noisy_oracle_scorer(truth, rng: random.Random, sigma: float = 0.6824):
    """score = squashed(truth signal + gaussian noise); sigma 0.6824 puts the
    AUC near 0.85. Scores are drawn once per pair so repeated scoring is
    stable."""
    cache = {}
    for pair, positive in sorted(truth.items()):
        raw = (1.0 if positive else 0.0) + rng.gauss(0.0, sigma)
        cache[pair] = 1.0 / (1.0 + math.exp(-raw))
    return lambda candidate, sentence, motion: cache[candidate.pair]
