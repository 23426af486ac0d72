"""Crowd-label aggregation and the retrospective labeling loop.

Aggregation follows a three-stage pipeline: pairwise Cohen's kappa between
annotators sharing enough items, iterated discarding of low-agreement
annotators, then per-pair majority with ties negative. Pairs short of the
trusted floor are reported for top-up instead of being emitted.

The loop ranks the candidate pool with the current scorer, labels the top k
per motion (and per evidence type), aggregates, appends the gold pairs to
the accumulated dataset, and hands the grown dataset to a trainer for the
next iteration's scorer.
"""

from __future__ import annotations

import csv
import logging
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .corpus import SentenceId
from .query import Candidate
from .ranker import ScorerSpec, ScoringContext, rank

log = logging.getLogger(__name__)

Pair = tuple[str, SentenceId]


@dataclass(frozen=True)
class LabelRecord:
    motion_id: str
    sentence_ref: SentenceId
    annotator_id: str
    label: bool  # True = positive

    @property
    def pair(self) -> Pair:
        return (self.motion_id, self.sentence_ref)


@dataclass
class AnnotatorReport:
    annotator_id: str
    pairwise: dict[str, tuple[float, int]]  # other -> (kappa, common items)
    weighted_avg_kappa: float | None
    trusted: bool


@dataclass(frozen=True)
class AggregatedLabel:
    motion_id: str
    sentence_ref: SentenceId
    gold: bool
    pos_count: int
    neg_count: int

    @property
    def trusted_total(self) -> int:
        return self.pos_count + self.neg_count

    @property
    def pair(self) -> Pair:
        return (self.motion_id, self.sentence_ref)


@dataclass
class DatasetSnapshot:
    iteration: int
    pairs: list[tuple[str, SentenceId, bool]] = field(default_factory=list)

    @property
    def positive_fraction(self) -> float:
        if not self.pairs:
            return 0.0
        return sum(1 for _, _, gold in self.pairs if gold) / len(self.pairs)

    def labeled_pairs(self) -> set[Pair]:
        return {(motion_id, sid) for motion_id, sid, _ in self.pairs}


def cohen_kappa(labels_a: Sequence[bool], labels_b: Sequence[bool]) -> float:
    """Cohen's kappa for two aligned binary label lists.

    kappa = (p_o - p_e) / (1 - p_e) with marginal chance agreement; when the
    chance agreement is exactly 1 the value is 1.0 for perfect observed
    agreement and 0.0 otherwise.
    """
    if len(labels_a) != len(labels_b):
        raise ValueError("label lists differ in length")
    n = len(labels_a)
    if n == 0:
        raise ValueError("label lists are empty")
    p_o = sum(1 for a, b in zip(labels_a, labels_b) if a == b) / n
    pa = sum(labels_a) / n
    pb = sum(labels_b) / n
    p_e = pa * pb + (1 - pa) * (1 - pb)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1 - p_e)


def _label_maps(records: Iterable[LabelRecord]) -> dict[str, dict[Pair, bool]]:
    """Per annotator: pair -> label. A repeated (annotator, pair) keeps the
    last record."""
    maps: dict[str, dict[Pair, bool]] = {}
    for rec in records:
        maps.setdefault(rec.annotator_id, {})[rec.pair] = rec.label
    return maps


def _pairwise_reports(
    maps: Mapping[str, dict[Pair, bool]],
    annotators: Sequence[str],
    min_common: int,
) -> dict[str, AnnotatorReport]:
    reports = {
        a: AnnotatorReport(a, {}, None, trusted=True) for a in annotators
    }
    ordered = sorted(annotators)
    for i, a in enumerate(ordered):
        for b in ordered[i + 1:]:
            shared = sorted(set(maps[a]) & set(maps[b]))
            if len(shared) < min_common:
                continue
            kappa = cohen_kappa(
                [maps[a][p] for p in shared], [maps[b][p] for p in shared]
            )
            reports[a].pairwise[b] = (kappa, len(shared))
            reports[b].pairwise[a] = (kappa, len(shared))
    for report in reports.values():
        total = sum(n for _, n in report.pairwise.values())
        if total:
            report.weighted_avg_kappa = (
                sum(k * n for k, n in report.pairwise.values()) / total
            )
    return reports


def filter_annotators(
    records: Iterable[LabelRecord],
    min_common: int = 50,
    min_avg_kappa: float = 0.3,
    isolated_trusted: bool = True,
    max_passes: int | None = None,
) -> tuple[set[str], list[AnnotatorReport]]:
    """Iteratively discard low-agreement annotators.

    Each pass computes pairwise kappas among the remaining annotators over
    pairs sharing at least ``min_common`` items, weight-averages them per
    annotator, and discards every annotator below ``min_avg_kappa``; the
    next pass recomputes over the survivors, until a fixed point (or
    ``max_passes``). Annotators with no qualifying pair keep the
    ``isolated_trusted`` default.

    Returns the trusted set and a report per annotator reflecting the state
    at its final evaluation.
    """
    maps = _label_maps(records)
    remaining = sorted(maps)
    final_reports: dict[str, AnnotatorReport] = {}
    passes = 0
    while True:
        reports = _pairwise_reports(maps, remaining, min_common)
        discarded = []
        for a in remaining:
            report = reports[a]
            if report.weighted_avg_kappa is None:
                report.trusted = isolated_trusted
            elif report.weighted_avg_kappa < min_avg_kappa:
                report.trusted = False
                discarded.append(a)
        final_reports.update(reports)
        remaining = [a for a in remaining if a not in discarded]
        passes += 1
        if not discarded or (max_passes is not None and passes >= max_passes):
            break
    trusted = {a for a in remaining if final_reports[a].trusted}
    ordered_reports = [final_reports[a] for a in sorted(final_reports)]
    return trusted, ordered_reports


def weighted_overall_kappa(reports: Sequence[AnnotatorReport]) -> float:
    """Average pairwise kappa over trusted annotator pairs, weighted by the
    number of items each pair shares."""
    trusted = {r.annotator_id for r in reports if r.trusted}
    by_id = {r.annotator_id: r for r in reports}
    total_kn = 0.0
    total_n = 0
    for a in sorted(trusted):
        for b, (kappa, n) in by_id[a].pairwise.items():
            if b in trusted and a < b:
                total_kn += kappa * n
                total_n += n
    if total_n == 0:
        raise ValueError("no trusted annotator pair shares enough items")
    return total_kn / total_n


def aggregate_labels(
    records: Iterable[LabelRecord],
    trusted: set[str],
    min_trusted: int = 7,
) -> tuple[list[AggregatedLabel], list[Pair]]:
    """Majority gold labels from trusted annotators; ties are negative.

    Pairs with fewer than ``min_trusted`` trusted records are returned in
    the second list (needing top-up) instead of being emitted.
    """
    votes: dict[Pair, dict[str, bool]] = {}
    for rec in records:
        if rec.annotator_id in trusted:
            votes.setdefault(rec.pair, {})[rec.annotator_id] = rec.label
    aggregated = []
    under = []
    for pair in sorted(votes):
        labels = votes[pair].values()
        pos = sum(labels)
        neg = len(labels) - pos
        if pos + neg < min_trusted:
            under.append(pair)
        else:
            aggregated.append(
                AggregatedLabel(pair[0], pair[1], gold=pos > neg,
                                pos_count=pos, neg_count=neg)
            )
    return aggregated, under


class OracleAnnotators:
    """Simulated crowd: a pool of annotators reading a ground-truth table,
    each flipping the true label with its noise rate.

    ``noise`` is either one rate for the whole pool or a map from annotator
    id (``ann-00``, ``ann-01``, ...) to its own rate. Round 0 assigns
    ``per_pair`` annotators to every requested pair; each top-up round adds
    one previously unused annotator per pair until the pool is exhausted.
    """

    def __init__(
        self,
        truth: Mapping[Pair, bool],
        noise: float | Mapping[str, float] = 0.0,
        seed: int = 0,
        pool_size: int = 12,
        per_pair: int = 10,
    ):
        if per_pair > pool_size:
            raise ValueError("per_pair cannot exceed pool_size")
        self.truth = dict(truth)
        self.annotators = [f"ann-{i:02d}" for i in range(pool_size)]
        if isinstance(noise, Mapping):
            self.noise = {a: float(noise.get(a, 0.0)) for a in self.annotators}
        else:
            self.noise = {a: float(noise) for a in self.annotators}
        for annotator, rate in self.noise.items():
            if not 0.0 <= rate < 0.5:
                raise ValueError(f"noise rate for {annotator} must be in [0, 0.5)")
        self.rng = random.Random(seed)
        self.per_pair = per_pair
        self._assigned: dict[Pair, list[str]] = {}

    def _record(self, pair: Pair, annotator: str) -> LabelRecord:
        if pair not in self.truth:
            raise KeyError(f"no ground truth for pair {pair}")
        label = self.truth[pair]
        if self.rng.random() < self.noise[annotator]:
            label = not label
        return LabelRecord(pair[0], pair[1], annotator, label)

    def annotate(self, pairs: Sequence[Pair], topup_round: int = 0) -> list[LabelRecord]:
        records = []
        for pair in pairs:
            assigned = self._assigned.setdefault(pair, [])
            if topup_round == 0:
                chosen = self.rng.sample(self.annotators, self.per_pair)
                assigned.extend(chosen)
                records.extend(self._record(pair, a) for a in chosen)
            else:
                unused = [a for a in self.annotators if a not in assigned]
                if unused:
                    extra = unused[0]
                    assigned.append(extra)
                    records.append(self._record(pair, extra))
        return records


class FileSource:
    """Annotation records read from a label records CSV; top-up rounds yield
    nothing new, so under-labeled pairs stay under-labeled for the operator."""

    def __init__(self, path):
        self.records = read_label_records(path)
        self._by_pair: dict[Pair, list[LabelRecord]] = {}
        for rec in self.records:
            self._by_pair.setdefault(rec.pair, []).append(rec)

    def annotate(self, pairs: Sequence[Pair], topup_round: int = 0) -> list[LabelRecord]:
        if topup_round > 0:
            return []
        out = []
        for pair in pairs:
            out.extend(self._by_pair.get(pair, []))
        return out


AnnotationSource = OracleAnnotators | FileSource


def _top_k_pairs(
    pool: Sequence[Candidate],
    scorer: ScorerSpec,
    ctx: ScoringContext,
    k: int,
    per_type: bool,
) -> list[Candidate]:
    """Top k of the scored pool per motion (and per evidence type)."""
    groups: dict[tuple, list[Candidate]] = {}
    for c in pool:
        key = (c.motion_id, c.evidence_type) if per_type else (c.motion_id,)
        groups.setdefault(key, []).append(c)
    selected = []
    for key in sorted(groups):
        ranked = rank(groups[key], scorer, ctx)
        if k > len(ranked):
            log.warning("top-k %d exceeds pool of %d for group %s", k, len(ranked), key)
        selected.extend(sc.candidate for sc in ranked[:k])
    return selected


def retrospective_iteration(
    pool: Sequence[Candidate],
    scorer: ScorerSpec,
    k: int,
    per_type: bool,
    source: AnnotationSource,
    accumulated: DatasetSnapshot,
    ctx: ScoringContext,
    min_common: int = 50,
    min_avg_kappa: float = 0.3,
    min_trusted: int = 7,
    max_topup_rounds: int = 8,
    prior_records: Sequence[LabelRecord] = (),
    record_sink: list[LabelRecord] | None = None,
) -> tuple[DatasetSnapshot, list[Candidate]]:
    """One labeling round: rank, label the top k, aggregate, accumulate.

    Pairs already in the accumulated dataset never re-enter the top k.
    Annotator agreement pools ``prior_records`` from earlier rounds with the
    fresh ones: a single near-unanimous batch says little about agreement
    (kappa degenerates under skewed marginals), the history does. Returns
    the grown snapshot plus the candidates whose pairs gained gold labels
    this round (for trainers that need match information).
    """
    if k <= 0:
        raise ValueError("k must be positive")
    labeled_before = accumulated.labeled_pairs()
    fresh_pool = [c for c in pool if c.pair not in labeled_before]
    selected = _top_k_pairs(fresh_pool, scorer, ctx, k, per_type)
    by_pair: dict[Pair, Candidate] = {}
    for c in selected:
        by_pair.setdefault(c.pair, c)
    want = sorted(by_pair)

    records = list(source.annotate(want, topup_round=0))
    for round_idx in range(1, max_topup_rounds + 1):
        trusted, _ = filter_annotators(
            list(prior_records) + records, min_common, min_avg_kappa
        )
        _, under = aggregate_labels(records, trusted, min_trusted)
        if not under:
            break
        extra = source.annotate(under, topup_round=round_idx)
        if not extra:
            break
        records.extend(extra)

    trusted, _ = filter_annotators(
        list(prior_records) + records, min_common, min_avg_kappa
    )
    aggregated, under = aggregate_labels(records, trusted, min_trusted)
    if under:
        log.warning("%d pairs still below %d trusted labels", len(under), min_trusted)
    if record_sink is not None:
        record_sink.extend(records)

    snapshot = DatasetSnapshot(accumulated.iteration + 1, list(accumulated.pairs))
    gained = []
    for agg in aggregated:
        snapshot.pairs.append((agg.motion_id, agg.sentence_ref, agg.gold))
        gained.append(by_pair[agg.pair])
    return snapshot, gained


Trainer = Callable[[Sequence[tuple[Candidate, bool]], ScoringContext], ScorerSpec]


def run_pool_loop(
    pool: Sequence[Candidate],
    ctx: ScoringContext,
    bootstrap_scorer: ScorerSpec,
    trainer: Trainer | None,
    k: int,
    iterations: int,
    source: AnnotationSource,
    per_type: bool = True,
    record_sink: list[LabelRecord] | None = None,
    **aggregation_knobs,
) -> list[DatasetSnapshot]:
    """Iterate retrospective labeling over a fixed candidate pool.

    Iteration 1 scores with the bootstrap scorer; each later iteration
    scores with the model the trainer fit on everything labeled so far.
    With ``trainer=None`` the bootstrap scorer is reused throughout.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    snapshots = []
    snapshot = DatasetSnapshot(0)
    scorer = bootstrap_scorer
    candidate_for: dict[Pair, Candidate] = {}
    history: list[LabelRecord] = []
    for _ in range(iterations):
        fresh: list[LabelRecord] = []
        snapshot, gained = retrospective_iteration(
            pool, scorer, k, per_type, source, snapshot, ctx,
            prior_records=history, record_sink=fresh, **aggregation_knobs,
        )
        history.extend(fresh)
        if record_sink is not None:
            record_sink.extend(fresh)
        for c in gained:
            candidate_for[c.pair] = c
        snapshots.append(snapshot)
        if trainer is not None and snapshot.pairs:
            labeled = [
                (candidate_for[(m, sid)], gold)
                for m, sid, gold in snapshot.pairs
                if (m, sid) in candidate_for
            ]
            scorer = trainer(labeled, ctx)
    return snapshots


def run_loop(
    index,
    cascades,
    motions,
    bootstrap_scorer: ScorerSpec,
    trainer: Trainer | None,
    k: int,
    iterations: int,
    source: AnnotationSource,
    per_type: bool = True,
    mask_token: str | None = None,
    record_sink: list[LabelRecord] | None = None,
    **aggregation_knobs,
) -> list[DatasetSnapshot]:
    """Full loop over an index: retrieve once per motion (retrieval does not
    depend on the model), then run the pool loop."""
    from .query import retrieve_for_motion  # local import to avoid a cycle

    pool = []
    for motion in sorted(motions, key=lambda m: m.motion_id):
        pool.extend(retrieve_for_motion(index, cascades, motion))
    ctx_kwargs = {} if mask_token is None else {"mask_token": mask_token}
    ctx = ScoringContext(
        sentences=index.sentences,
        motions={m.motion_id: m for m in motions},
        **ctx_kwargs,
    )
    return run_pool_loop(
        pool, ctx, bootstrap_scorer, trainer, k, iterations, source,
        per_type=per_type, record_sink=record_sink, **aggregation_knobs,
    )


# --- file formats -------------------------------------------------------

LABEL_HEADER = ["motion_id", "doc_id", "sent_idx", "annotator_id", "label"]
NEEDS_HEADER = ["motion_id", "doc_id", "sent_idx"]
SNAPSHOT_HEADER = ["iteration", "motion_id", "doc_id", "sent_idx", "gold"]


def read_label_records(path) -> list[LabelRecord]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = set(LABEL_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"label file missing columns: {sorted(missing)}")
        records = []
        for row in reader:
            if row["label"] not in ("pos", "neg"):
                raise ValueError(f"label must be pos or neg, got {row['label']!r}")
            records.append(
                LabelRecord(
                    motion_id=row["motion_id"],
                    sentence_ref=SentenceId(row["doc_id"], int(row["sent_idx"])),
                    annotator_id=row["annotator_id"],
                    label=row["label"] == "pos",
                )
            )
        return records


def write_label_records(records: Iterable[LabelRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LABEL_HEADER)
        for rec in records:
            writer.writerow(
                [rec.motion_id, rec.sentence_ref.doc_id, rec.sentence_ref.sent_idx,
                 rec.annotator_id, "pos" if rec.label else "neg"]
            )


def write_needs_labels(pairs: Iterable[Pair], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(NEEDS_HEADER)
        for motion_id, sid in pairs:
            writer.writerow([motion_id, sid.doc_id, sid.sent_idx])


GOLD_HEADER = ["motion_id", "doc_id", "sent_idx", "label"]


def read_gold_labels(path) -> dict[Pair, bool]:
    """Gold/truth label file: CSV motion_id,doc_id,sent_idx,label."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = set(GOLD_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"gold label file missing columns: {sorted(missing)}")
        gold = {}
        for row in reader:
            if row["label"] not in ("pos", "neg"):
                raise ValueError(f"label must be pos or neg, got {row['label']!r}")
            pair = (row["motion_id"], SentenceId(row["doc_id"], int(row["sent_idx"])))
            gold[pair] = row["label"] == "pos"
        return gold


def write_gold_labels(labels: Iterable[AggregatedLabel], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(GOLD_HEADER)
        for agg in labels:
            writer.writerow(
                [agg.motion_id, agg.sentence_ref.doc_id, agg.sentence_ref.sent_idx,
                 "pos" if agg.gold else "neg"]
            )


def write_snapshots(snapshots: Iterable[DatasetSnapshot], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SNAPSHOT_HEADER)
        for snap in snapshots:
            for motion_id, sid, gold in snap.pairs:
                writer.writerow(
                    [snap.iteration, motion_id, sid.doc_id, sid.sent_idx,
                     "pos" if gold else "neg"]
                )
