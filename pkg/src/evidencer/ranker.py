"""Candidate scoring and ranking.

The builtin scorer is a sparse logistic model over deterministic features;
external scorers run as subprocesses behind the JSON-lines wire protocol in
``scorer_client``. Ranked lists can be near-duplicate filtered by content
token overlap.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from . import annotate
from .corpus import Motion, Sentence, SentenceId, normalized_phrase
from .query import Candidate
from .scorer_client import ExternalScorerSession, ScorerProtocolError, ScoreRequest

log = logging.getLogger(__name__)

FeatureVector = dict[str, float]

VARIANTS = ("S+M", "MaskS+M", "MaskS")


@dataclass
class LogisticModel:
    weights: dict[str, float]
    bias: float = 0.0


@dataclass(frozen=True)
class BuiltinScorer:
    model: LogisticModel


@dataclass(frozen=True)
class ExternalScorer:
    command: tuple[str, ...]
    variant: str = "S+M"
    timeout: float = 30.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown scorer input variant {self.variant!r}")


@dataclass(frozen=True)
class FunctionScorer:
    """Test seam: score straight from a callable(candidate, sentence, motion)."""

    fn: Callable[[Candidate, Sentence, Motion], float]


ScorerSpec = BuiltinScorer | ExternalScorer | FunctionScorer


@dataclass(frozen=True)
class ScoredCandidate:
    candidate: Candidate
    score: float


@dataclass(frozen=True)
class ScoringContext:
    """Sentence store and motion registry the scorer reads texts from."""

    sentences: Mapping[SentenceId, Sentence]
    motions: Mapping[str, Motion]
    mask_token: str = annotate.DEFAULT_MASK_TOKEN

    def sentence_for(self, candidate: Candidate) -> Sentence:
        return self.sentences[candidate.sentence_ref]

    def motion_for(self, candidate: Candidate) -> Motion:
        return self.motions[candidate.motion_id]


def parse_model(lines: Iterable[str]) -> LogisticModel:
    """Model file: ``bias <value>`` then one ``feature_id <weight>`` per
    line. Ids may contain anything but a newline; the weight is the text
    after the last run of whitespace."""
    bias = 0.0
    weights: dict[str, float] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        name, _, value = line.rpartition(" ")
        name = name.strip()
        if not name:
            raise ValueError(f"line {lineno}: expected '<feature_id> <weight>'")
        try:
            number = float(value)
        except ValueError:
            raise ValueError(f"line {lineno}: bad weight {value!r}") from None
        if not math.isfinite(number):
            raise ValueError(f"line {lineno}: non-finite weight")
        if name == "bias":
            bias = number
        else:
            weights[name] = number
    return LogisticModel(weights=weights, bias=bias)


def load_model(path) -> LogisticModel:
    with open(path, encoding="utf-8") as f:
        return parse_model(f)


def save_model(model: LogisticModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"bias {model.bias!r}\n")
        for name in sorted(model.weights):
            f.write(f"{name} {model.weights[name]!r}\n")


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def logistic_score(model: LogisticModel, fv: FeatureVector) -> float:
    """sigmoid(bias + sum of weight * value), summed in feature insertion
    order so that two processes building the same vector agree bit for bit."""
    z = model.bias
    for name, value in fv.items():
        w = model.weights.get(name)
        if w is not None:
            z += w * value
    return sigmoid(z)


_LENGTH_BUCKETS = 4        # token count // 10, capped
_POSITION_BUCKETS = 4      # quartile of the first topic occurrence


def _count_terms(fv: FeatureVector, prefix: str, tokens: Iterable[str]) -> None:
    for tok in tokens:
        key = prefix + tok
        fv[key] = fv.get(key, 0.0) + 1.0


def extract_features(
    candidate: Candidate,
    sentence: Sentence,
    motion: Motion,
    mask_token: str = annotate.DEFAULT_MASK_TOKEN,
) -> FeatureVector:
    """Deterministic sparse features for one candidate.

    Token-count features come first, in text order, and use only the three
    texts the wire protocol carries (sentence, motion, masked sentence); a
    model confined to them scores identically through the builtin path and
    through a protocol plugin. ``mask_token`` must match what the protocol
    sends, or the maskterm features diverge. The remaining features need
    annotations or the matched query and are builtin-only.
    """
    fv: FeatureVector = {}
    _count_terms(fv, "term:", sentence.normalized_tokens)
    _count_terms(fv, "mterm:", normalized_phrase(motion.text))
    masked = annotate.mask_topic(sentence, motion, mask_token)
    _count_terms(fv, "maskterm:", normalized_phrase(masked))

    for span in sentence.annotations:
        if span.role == annotate.ROLE_LEXICON:
            key = f"lex:{span.label}"
        elif span.role == annotate.ROLE_ENTITY:
            key = f"ent:{span.label}"
        else:
            continue
        fv[key] = fv.get(key, 0.0) + 1.0

    n = len(sentence.tokens)
    fv[f"len:{min(n // 10, _LENGTH_BUCKETS - 1)}"] = 1.0

    topic_occs = annotate.topic_occurrences(sentence, motion)
    if topic_occs and n:
        quartile = min(int(_POSITION_BUCKETS * topic_occs[0][0] / n), _POSITION_BUCKETS - 1)
        fv[f"topicpos:{quartile}"] = 1.0

    fv[f"query:{candidate.query_id}"] = 1.0

    sentiment = [
        (s.first, s.last)
        for s in sentence.annotations
        if s.role == annotate.ROLE_LEXICON and s.label == "sentiment"
    ]
    if topic_occs and sentiment:
        gap = min(
            _token_gap(t, s) for t in topic_occs for s in sentiment
        )
        fv["topic_sentiment_gap"] = float(gap)
    return fv


def _token_gap(a: tuple[int, int], b: tuple[int, int]) -> int:
    """Tokens strictly between two ranges; 0 when adjacent or overlapping."""
    if a[0] > b[1]:
        return a[0] - b[1] - 1
    if b[0] > a[1]:
        return b[0] - a[1] - 1
    return 0


@dataclass
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 200
    l2: float = 1e-4
    seed: int = 0  # accepted for config compatibility; training is full-batch


def loss_and_gradient(
    weights: dict[str, float],
    bias: float,
    data: Sequence[tuple[FeatureVector, bool]],
    l2: float,
):
    """Mean cross-entropy with an L2 penalty on the weights (not the bias),
    plus its exact gradient."""
    n = len(data)
    grad_w = {name: 0.0 for name in weights}
    grad_b = 0.0
    loss = 0.0
    eps = 1e-12
    for fv, label in data:
        z = bias
        for name, value in fv.items():
            w = weights.get(name)
            if w is not None:
                z += w * value
        p = sigmoid(z)
        y = 1.0 if label else 0.0
        loss -= y * math.log(max(p, eps)) + (1.0 - y) * math.log(max(1.0 - p, eps))
        err = p - y
        grad_b += err
        for name, value in fv.items():
            if name in grad_w:
                grad_w[name] += err * value
    loss /= n
    grad_b /= n
    for name in grad_w:
        grad_w[name] = grad_w[name] / n + l2 * weights[name]
        loss += 0.5 * l2 * weights[name] ** 2
    return loss, grad_w, grad_b


def train_logistic(
    data: Sequence[tuple[FeatureVector, bool]],
    config: TrainConfig | None = None,
) -> LogisticModel:
    """Full-batch gradient descent on L2-regularized cross-entropy.

    The step is halved whenever it would increase the loss, so the loss is
    non-increasing across epochs. Deterministic: zero init, fixed order.
    """
    if not data:
        raise ValueError("training data is empty")
    config = config or TrainConfig()
    weights: dict[str, float] = {}
    for fv, _ in data:
        for name in fv:
            weights.setdefault(name, 0.0)
    bias = 0.0
    lr = config.learning_rate
    loss, grad_w, grad_b = loss_and_gradient(weights, bias, data, config.l2)
    for _ in range(config.epochs):
        while lr > 1e-12:
            new_w = {n: w - lr * grad_w[n] for n, w in weights.items()}
            new_b = bias - lr * grad_b
            new_loss, new_gw, new_gb = loss_and_gradient(new_w, new_b, data, config.l2)
            if new_loss <= loss + 1e-15:
                weights, bias = new_w, new_b
                loss, grad_w, grad_b = new_loss, new_gw, new_gb
                break
            lr /= 2.0
        else:
            break
    return LogisticModel(weights=weights, bias=bias)


def logistic_trainer(config: TrainConfig | None = None):
    """Trainer callable for the labeling loop: featurize labeled candidates
    and fit the builtin model."""

    def train(labeled: Sequence[tuple[Candidate, bool]], ctx: ScoringContext) -> BuiltinScorer:
        data = [
            (extract_features(c, ctx.sentence_for(c), ctx.motion_for(c),
                              ctx.mask_token), gold)
            for c, gold in labeled
        ]
        return BuiltinScorer(train_logistic(data, config))

    return train


def score_batch(
    scorer: ScorerSpec,
    candidates: Sequence[Candidate],
    ctx: ScoringContext,
) -> list[ScoredCandidate]:
    """One score per candidate, order preserved."""
    if isinstance(scorer, BuiltinScorer):
        out = []
        for c in candidates:
            fv = extract_features(
                c, ctx.sentence_for(c), ctx.motion_for(c), ctx.mask_token
            )
            out.append(ScoredCandidate(c, logistic_score(scorer.model, fv)))
        return out
    if isinstance(scorer, FunctionScorer):
        out = []
        for c in candidates:
            score = float(scorer.fn(c, ctx.sentence_for(c), ctx.motion_for(c)))
            if not (0.0 <= score <= 1.0):
                raise ScorerProtocolError(f"function scorer returned {score} for {c.pair}")
            out.append(ScoredCandidate(c, score))
        return out
    return _score_external(scorer, candidates, ctx)


def _score_external(
    scorer: ExternalScorer,
    candidates: Sequence[Candidate],
    ctx: ScoringContext,
) -> list[ScoredCandidate]:
    if not candidates:
        return []
    requests = []
    for i, c in enumerate(candidates):
        sentence = ctx.sentence_for(c)
        motion = ctx.motion_for(c)
        requests.append(
            ScoreRequest(
                request_id=str(i),
                motion=motion.text,
                sentence=sentence.text,
                masked=annotate.mask_topic(sentence, motion, ctx.mask_token),
            )
        )
    with ExternalScorerSession(scorer.command, scorer.variant, scorer.timeout) as session:
        scores = session.score(requests)
    return [ScoredCandidate(c, s) for c, s in zip(candidates, scores)]


def load_stop_words(path) -> frozenset[str]:
    with open(path, encoding="utf-8") as f:
        return frozenset(w.strip().lower() for w in f if w.strip())


def content_token_set(
    sentence: Sentence, motion: Motion, stop_words: frozenset[str]
) -> frozenset[str]:
    """Normalized word tokens minus stop words and topic tokens. Tokens with
    no word character (bare punctuation) never count as content."""
    topic_tokens = annotate.topic_token_set(motion)
    return frozenset(
        t for t in sentence.normalized_tokens
        if t not in stop_words and t not in topic_tokens and any(c.isalnum() for c in t)
    )


def overlap_fraction(a: frozenset[str], b: frozenset[str]) -> float:
    """Overlap relative to the smaller set; 1.0 when the smaller set is
    empty (an empty content set duplicates anything)."""
    smaller = min(len(a), len(b))
    if smaller == 0:
        return 1.0
    return len(a & b) / smaller


def dedup_ranked(
    ranked: Sequence[ScoredCandidate],
    ctx: ScoringContext,
    threshold: float = 0.8,
    stop_words: frozenset[str] = frozenset(),
) -> list[ScoredCandidate]:
    """Greedy top-down near-duplicate removal.

    A candidate is dropped when its content token set overlaps a retained
    higher-ranked candidate of the same motion by at least ``threshold`` of
    the smaller set. The top item always survives; the result is a
    subsequence of the input.
    """
    kept: list[ScoredCandidate] = []
    kept_sets: list[tuple[str, frozenset[str]]] = []
    for sc in ranked:
        motion = ctx.motion_for(sc.candidate)
        content = content_token_set(ctx.sentence_for(sc.candidate), motion, stop_words)
        duplicate = any(
            motion_id == sc.candidate.motion_id
            and overlap_fraction(content, other) >= threshold
            for motion_id, other in kept_sets
        )
        if not duplicate:
            kept.append(sc)
            kept_sets.append((sc.candidate.motion_id, content))
    return kept


def rank(
    candidates: Sequence[Candidate],
    scorer: ScorerSpec,
    ctx: ScoringContext,
    dedup: bool = False,
    dedup_threshold: float = 0.8,
    stop_words: frozenset[str] = frozenset(),
) -> list[ScoredCandidate]:
    """Score and sort descending; ties break by ascending sentence id, then
    motion id. Near-duplicate removal is applied afterwards when asked."""
    scored = score_batch(scorer, candidates, ctx)
    scored.sort(key=lambda sc: (-sc.score, sc.candidate.sentence_ref, sc.candidate.motion_id))
    if dedup:
        scored = dedup_ranked(scored, ctx, dedup_threshold, stop_words)
    return scored


def binarize(
    scored: Sequence[ScoredCandidate], threshold: float = 0.5
) -> list[tuple[Candidate, bool]]:
    """Positive iff score >= threshold (the boundary counts as positive)."""
    return [(sc.candidate, sc.score >= threshold) for sc in scored]
