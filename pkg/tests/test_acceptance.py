"""Acceptance suite: one test per release criterion, each printing a
pass/fail line (run with ``pytest -s`` to see them as they happen).

Tolerances are pinned here and nowhere else; "exact" means ==.
"""

import json
import os
import random
import time
from fractions import Fraction

import pytest

from conftest import build_sentence
from evidencer import annotate, labeling, ranker
from evidencer.cli import main as cli_main
from evidencer.corpus import EvidenceType, Motion, SentenceId
from evidencer.index import (
    IndexChecksumError,
    IndexTruncatedError,
    IndexVersionError,
    build_index,
    load_index,
    save_index,
)
from evidencer.labeling import (
    DatasetSnapshot,
    LabelRecord,
    OracleAnnotators,
    aggregate_labels,
    cohen_kappa,
    filter_annotators,
    run_pool_loop,
)
from evidencer.query import (
    Candidate,
    Cascade,
    Query,
    brute_force_retrieve,
    execute_cascade,
    parse_query,
    retrieve_query,
)
from evidencer.ranker import (
    FunctionScorer,
    ScoredCandidate,
    ScoringContext,
    TrainConfig,
    dedup_ranked,
    logistic_trainer,
    loss_and_gradient,
    train_logistic,
)
from evidencer.evalkit import precision_at_k
from synth import (
    corpus_and_index,
    enrichment_pool,
    make_motion,
    noisy_oracle_scorer,
    random_query,
)


def report(name: str, ok: bool, detail: str = ""):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, name


# -----------------------------------------------------------------------
# Retrieval
# -----------------------------------------------------------------------


def test_oracle_equivalence_retrieval():
    """retrieve_query equals brute_force_retrieve element-wise over 50
    randomized corpora x 20 randomized queries. Exact; under 60 s."""
    started = time.monotonic()
    mismatches = 0
    rng = random.Random(20240501)
    for corpus_no in range(50):
        size = 1000 if corpus_no < 2 else rng.randint(50, 400)
        sentences, idx, lexicons, table = corpus_and_index(rng, size)
        motion = make_motion(rng, table, rng.randrange(3))
        for query_no in range(20):
            q = random_query(rng, lexicons, f"{corpus_no}-{query_no}")
            fast = retrieve_query(idx, q, motion)
            slow = brute_force_retrieve(sentences, q, motion)
            if fast != slow:
                mismatches += 1
    elapsed = time.monotonic() - started
    report(
        "oracle equivalence: retrieve_query == brute_force_retrieve (50x20)",
        mismatches == 0 and elapsed < 60.0,
        f"{elapsed:.1f}s",
    )


def test_topic_anchoring():
    """Every candidate produced by a cascade contains the motion topic,
    checked exhaustively on randomized corpora. Exact."""
    rng = random.Random(7)
    failures = 0
    checked = 0
    for trial in range(8):
        sentences, idx, lexicons, table = corpus_and_index(rng, rng.randint(80, 250))
        motion = make_motion(rng, table, rng.randrange(3))
        queries = tuple(
            Query(f"q{i}", EvidenceType.STUDY,
                  random_query(rng, lexicons, f"q{i}").slots,
                  random_query(rng, lexicons, "g").max_gap)
            for i in range(5)
        )
        for c in execute_cascade(idx, Cascade(EvidenceType.STUDY, queries, 10_000), motion):
            checked += 1
            if not annotate.topic_occurrences(idx.sentences[c.sentence_ref], motion):
                failures += 1
    report(
        "topic anchoring: every cascade candidate contains the topic",
        failures == 0 and checked > 100,
        f"{checked} candidates",
    )


def test_cascade_cap():
    """With more matches than the cap, output size is exactly the cap and
    earlier queries keep their attribution. Exact (cap=100 for speed; the
    production default is 12,000)."""
    lexicons = [annotate.Lexicon.build("study", ["research"]),
                annotate.Lexicon.build("expert", ["professor"])]
    table = annotate.RedirectTable([("gambling", "Gambling")])
    motion = annotate.resolve_motion(Motion("m", "ban gambling", "Gambling"), table)
    sentences = []
    for i in range(40):  # matched by the narrow query q1 and the broad q2
        sentences.append(
            build_sentence("professor research gambling talk", doc_id=f"a{i:03d}",
                           idx=0, lexicons=lexicons, table=table)
        )
    for i in range(130):  # matched by q2 only
        sentences.append(
            build_sentence("research gambling talk", doc_id=f"b{i:03d}", idx=0,
                           lexicons=lexicons, table=table)
        )
    idx = build_index(sentences)
    q1 = parse_query("study: lex(expert) lex(study) TOPIC", query_id="q1")
    q2 = parse_query("study: lex(study) TOPIC", query_id="q2")
    got = execute_cascade(idx, Cascade(EvidenceType.STUDY, (q1, q2), cap=100), motion)
    by_query = {"q1": 0, "q2": 0}
    for c in got:
        by_query[c.query_id] += 1
    default_cap_ok = Cascade(EvidenceType.STUDY, (q1,)).cap == 12000
    report(
        "cascade cap: exactly cap candidates, earlier-query attribution kept",
        len(got) == 100 and by_query == {"q1": 40, "q2": 60} and default_cap_ok,
    )


# -----------------------------------------------------------------------
# Dedup
# -----------------------------------------------------------------------


def test_dedup_contract():
    """On 1,000 randomized ranked lists no retained pair overlaps >= 0.8 of
    the smaller content set; the top item is always retained. Exact."""
    rng = random.Random(99)
    vocab = [f"v{i}" for i in range(14)]
    stop_words = frozenset({"v0", "v1"})
    motion = Motion("m", "ban vtopic", "vtopic")
    violations = 0
    top_dropped = 0
    for _ in range(1000):
        sentences = {}
        ranked = []
        for i in range(rng.randint(2, 14)):
            words = rng.sample(vocab, rng.randint(1, 8))
            if rng.random() < 0.3:
                words.insert(rng.randrange(len(words) + 1), "vtopic")
            s = build_sentence(" ".join(words), doc_id=f"d{i}", idx=0)
            sentences[s.sentence_id] = s
            ranked.append(
                ScoredCandidate(
                    Candidate("m", s.sentence_id, "q", EvidenceType.STUDY, ()),
                    1.0 - i * 1e-3,
                )
            )
        ctx = ScoringContext(sentences, {"m": motion})
        kept = dedup_ranked(ranked, ctx, threshold=0.8, stop_words=stop_words)
        if kept[0] != ranked[0]:
            top_dropped += 1

        def content(sc):
            tokens = sentences[sc.candidate.sentence_ref].normalized_tokens
            return frozenset(
                t for t in tokens
                if t not in stop_words and t != "vtopic" and any(c.isalnum() for c in t)
            )

        for i, a in enumerate(kept):
            for b in kept[i + 1:]:
                ca, cb = content(a), content(b)
                smaller = min(len(ca), len(cb))
                overlap = 1.0 if smaller == 0 else len(ca & cb) / smaller
                if overlap >= 0.8:
                    violations += 1
    report(
        "dedup contract: no retained pair >= 0.8 overlap, top always kept",
        violations == 0 and top_dropped == 0,
    )


# -----------------------------------------------------------------------
# Aggregation
# -----------------------------------------------------------------------


def _acceptance_label_fixture():
    """Annotators: A1..A8 follow the pattern (positive iff even item); D
    inverts it (kappa -1); F flips a balanced 22 of 60 (kappa 0.2667 < 0.3);
    E shares only 10 items with anyone (below min_common). Special pairs:
    200 = 4-4 tie, 201 = 4-3 majority over seven annotators, 202 = six
    records only, 203 = six trusted records plus the discarded D."""
    pattern = lambda i: i % 2 == 0
    sid = lambda i: SentenceId(f"p{i:03d}", 0)
    rec = lambda a, i, lab: LabelRecord("m", sid(i), a, lab)
    annotators = [f"A{j}" for j in range(1, 9)]
    records = []
    for a in annotators:
        records += [rec(a, i, pattern(i)) for i in range(60)]
    records += [rec("D", i, not pattern(i)) for i in range(60)]
    records += [
        rec("F", i, (not pattern(i)) if i < 22 else pattern(i)) for i in range(60)
    ]
    records += [rec("E", i, pattern(i)) for i in range(10)]
    records += [rec(a, 200, a in ("A1", "A2", "A3", "A4")) for a in annotators]
    records += [rec(a, 201, a in ("A1", "A2", "A3", "A4")) for a in annotators[:7]]
    records += [rec(a, 202, True) for a in annotators[:6]]
    records += [rec(a, 203, True) for a in annotators[:6]] + [rec("D", 203, True)]
    return records, sid, pattern


def test_aggregation_pipeline_fixture():
    """Hand-built label file reproduces a hand-computed gold table through
    min_common exclusion, kappa discard, the 7-trusted floor, majority, and
    tie -> negative. Exact."""
    records, sid, pattern = _acceptance_label_fixture()
    trusted, reports = filter_annotators(records, min_common=50, min_avg_kappa=0.3)
    by_id = {r.annotator_id: r for r in reports}

    # D vs A1 share the 60 patterned items (all disagreements) plus pair 203
    # (agreement): p_o = 1/61, p_e = (31^2 + 30^2)/61^2, kappa = -30/31
    structure_ok = (
        trusted == {f"A{j}" for j in range(1, 9)} | {"E"}
        and by_id["D"].trusted is False
        and by_id["F"].trusted is False
        and by_id["E"].pairwise == {}  # below min_common with everyone
        and by_id["E"].weighted_avg_kappa is None
        and by_id["D"].pairwise["A1"][1] == 61
        and abs(by_id["D"].pairwise["A1"][0] - (-30 / 31)) < 1e-12
        and abs(by_id["F"].pairwise["A1"][0] - (38 / 60 - 0.5) / 0.5) < 1e-12
    )

    aggregated, under = aggregate_labels(records, trusted, min_trusted=7)
    got = {agg.sentence_ref: agg for agg in aggregated}
    expected_ok = True
    for i in range(60):
        agg = got[sid(i)]
        want_counts = (9, 0) if i < 10 else (8, 0)
        if not pattern(i):
            want_counts = (0, want_counts[0])
        expected_ok &= agg.gold is pattern(i)
        expected_ok &= (agg.pos_count, agg.neg_count) == want_counts
    expected_ok &= got[sid(200)].gold is False  # 4-4 tie -> negative
    expected_ok &= (got[sid(200)].pos_count, got[sid(200)].neg_count) == (4, 4)
    expected_ok &= got[sid(201)].gold is True  # 4-3 majority
    expected_ok &= got[sid(201)].trusted_total == 7
    expected_ok &= sid(202) not in got and sid(203) not in got
    expected_ok &= under == [("m", sid(202)), ("m", sid(203))]
    expected_ok &= len(got) == 62

    report("aggregation fixture: hand-computed gold table reproduced",
           structure_ok and expected_ok)


def test_kappa_correctness():
    """20 hand-computed fixtures within 1e-12; symmetry and range hold on
    10,000 random label pairs."""
    tables = [
        (3, 1, 1, 3), (5, 0, 0, 5), (0, 5, 5, 0), (2, 2, 2, 2), (7, 1, 2, 0),
        (1, 0, 0, 9), (4, 3, 2, 1), (6, 2, 2, 6), (1, 1, 1, 1), (9, 0, 1, 0),
        (0, 1, 1, 8), (5, 5, 0, 0), (3, 0, 2, 5), (2, 4, 4, 2), (8, 1, 1, 2),
        (1, 2, 3, 4), (10, 5, 3, 2), (2, 0, 0, 2), (0, 0, 3, 7), (6, 1, 0, 3),
    ]
    worst = 0.0
    for n11, n10, n01, n00 in tables:
        a = [True] * (n11 + n10) + [False] * (n01 + n00)
        b = [True] * n11 + [False] * n10 + [True] * n01 + [False] * n00
        n = Fraction(n11 + n10 + n01 + n00)
        p_o = Fraction(n11 + n00) / n
        pa, pb = Fraction(n11 + n10) / n, Fraction(n11 + n01) / n
        p_e = pa * pb + (1 - pa) * (1 - pb)
        if p_e == 1:
            expected = 1.0 if p_o == 1 else 0.0
        else:
            expected = float((p_o - p_e) / (1 - p_e))
        worst = max(worst, abs(cohen_kappa(a, b) - expected))

    rng = random.Random(13)
    properties_ok = True
    for _ in range(10_000):
        n = rng.randint(1, 25)
        a = [rng.random() < 0.5 for _ in range(n)]
        b = [rng.random() < 0.5 for _ in range(n)]
        k = cohen_kappa(a, b)
        properties_ok &= k == cohen_kappa(b, a)
        properties_ok &= -1.0 - 1e-12 <= k <= 1.0 + 1e-12
    report("kappa: 20 fixtures within 1e-12, symmetry/range on 10k pairs",
           worst <= 1e-12 and properties_ok, f"worst {worst:.2e}")


# -----------------------------------------------------------------------
# Retrospective labeling
# -----------------------------------------------------------------------


def test_retrospective_enrichment():
    """Synthetic pool at 3% positive prior, bootstrap scorer with AUC near
    0.85, k=40, 3 iterations, 5 seeds: newly labeled pairs are > 15%
    positive in every iteration and the cumulative positive fraction is
    non-decreasing in at least 4 of 5 seeds. Under 120 s."""
    started = time.monotonic()
    min_new_fraction = 1.0
    monotone_seeds = 0
    for seed in range(5):
        rng = random.Random(1000 + seed)
        pool, sentences, motions, truth = enrichment_pool(
            rng, motions=2, per_motion=4000, positive_prior=0.03
        )
        ctx = ScoringContext(sentences, motions)
        bootstrap = FunctionScorer(noisy_oracle_scorer(truth, rng))
        source = OracleAnnotators(truth, noise=0.05, seed=seed,
                                  pool_size=10, per_pair=10)
        snapshots = run_pool_loop(
            pool, ctx, bootstrap,
            logistic_trainer(TrainConfig(epochs=120)),
            k=40, iterations=3, source=source, per_type=False,
        )
        previous = DatasetSnapshot(0)
        fractions = []
        for snap in snapshots:
            new = len(snap.pairs) - len(previous.pairs)
            new_pos = sum(g for _, _, g in snap.pairs) - sum(
                g for _, _, g in previous.pairs
            )
            fractions.append(new_pos / new)
            previous = snap
        min_new_fraction = min(min_new_fraction, *fractions)
        cumulative = [s.positive_fraction for s in snapshots]
        if all(b >= a for a, b in zip(cumulative, cumulative[1:])):
            monotone_seeds += 1
    elapsed = time.monotonic() - started
    report(
        "retrospective enrichment: new labels > 15% positive, cumulative "
        "non-decreasing in >= 4/5 seeds",
        min_new_fraction > 0.15 and monotone_seeds >= 4 and elapsed < 120.0,
        f"min new fraction {min_new_fraction:.2f}, monotone {monotone_seeds}/5, "
        f"{elapsed:.1f}s",
    )


# -----------------------------------------------------------------------
# Evaluation and training
# -----------------------------------------------------------------------


def test_precision_at_k_evaluator():
    """Hand-computed precision values match exactly. Large-corpus headline
    figures are documented context, deliberately not encoded as targets."""
    gold = {}
    ranked = []
    for i, label in enumerate([True, True, False, True, False, False]):
        c = Candidate("m", SentenceId(f"d{i}", 0), "q", EvidenceType.STUDY, ())
        ranked.append(ScoredCandidate(c, 1 - i / 10))
        gold[c.pair] = label
    curve = precision_at_k(ranked, gold, [1, 2, 3, 4, 5, 6])
    expected = ((1, 1.0), (2, 1.0), (3, 2 / 3), (4, 3 / 4), (5, 3 / 5), (6, 0.5))
    report("precision@k evaluator matches hand-computed fixtures",
           curve.points == expected)


def test_logistic_trainer():
    """>= 99% training accuracy on the separable 20-point set; analytic
    gradient within 1e-5 relative of central differences at 100 points."""
    rng = random.Random(5)
    data = []
    for i in range(20):
        positive = i % 2 == 0
        sign = 1.0 if positive else -1.0
        data.append(
            ({"f1": sign * rng.uniform(0.5, 1.5), "f2": sign * rng.uniform(0.2, 1.0)},
             positive)
        )
    model = train_logistic(data, TrainConfig(epochs=300))
    accuracy = sum(
        (ranker.logistic_score(model, fv) >= 0.5) == y for fv, y in data
    ) / len(data)

    h = 1e-6
    worst_rel = 0.0
    for _ in range(100):
        weights = {"f1": rng.uniform(-3, 3), "f2": rng.uniform(-3, 3)}
        bias = rng.uniform(-2, 2)
        _, grad_w, grad_b = loss_and_gradient(weights, bias, data, l2=0.01)
        for name in list(weights) + ["bias"]:
            if name == "bias":
                up = loss_and_gradient(weights, bias + h, data, 0.01)[0]
                down = loss_and_gradient(weights, bias - h, data, 0.01)[0]
                analytic = grad_b
            else:
                wu = dict(weights); wu[name] += h
                wd = dict(weights); wd[name] -= h
                up = loss_and_gradient(wu, bias, data, 0.01)[0]
                down = loss_and_gradient(wd, bias, data, 0.01)[0]
                analytic = grad_w[name]
            numeric = (up - down) / (2 * h)
            worst_rel = max(worst_rel, abs(numeric - analytic) / max(1.0, abs(numeric)))
    report(
        "logistic trainer: separable accuracy >= 0.99, gradient vs central "
        "differences within 1e-5",
        accuracy >= 0.99 and worst_rel <= 1e-5,
        f"accuracy {accuracy:.2f}, worst rel err {worst_rel:.2e}",
    )


# -----------------------------------------------------------------------
# Pipeline determinism
# -----------------------------------------------------------------------


def _run_pipeline(workdir):
    cwd = os.getcwd()
    os.chdir(workdir)
    try:
        for argv in [
            ["index", "--config", "sample_config.json"],
            ["retrieve", "--config", "sample_config.json", "--out", "candidates.csv"],
            ["rank", "--config", "sample_config.json", "--candidates",
             "candidates.csv", "--out", "ranking.csv", "--dedup"],
            ["label-loop", "--config", "sample_config.json", "--iterations", "2",
             "--snapshots", "snapshots.csv", "--records", "records.csv",
             "--seed", "11"],
            ["eval", "--config", "sample_config.json", "--ranking", "ranking.csv",
             "--gold", "truth.csv", "--ks", "1,3,5", "--out-dir", "reports"],
        ]:
            assert cli_main(argv) == 0, argv
    finally:
        os.chdir(cwd)


def test_pipeline_determinism(tmp_path):
    """The full pipeline run twice with one seed produces byte-identical
    candidate, ranking, snapshot, and report files (and index)."""
    dirs = []
    for run_no in (1, 2):
        dest = tmp_path / f"run{run_no}"
        assert cli_main(["init-sample", "--dest", str(dest)]) == 0
        _run_pipeline(dest)
        dirs.append(dest)
    compared = [
        "out/sample.evix", "candidates.csv", "ranking.csv", "snapshots.csv",
        "records.csv", "reports/builtin_corpus_precision.csv",
        "reports/builtin_corpus_diversity.csv",
    ]
    identical = all(
        (dirs[0] / rel).read_bytes() == (dirs[1] / rel).read_bytes()
        for rel in compared
    )
    report("determinism: two seeded runs are byte-identical", identical,
           f"{len(compared)} artifacts compared")


# -----------------------------------------------------------------------
# Index persistence
# -----------------------------------------------------------------------


def test_index_persistence(tmp_path):
    """Save/load round-trip is structural identity on 20 randomized indices;
    corrupted files raise the designated error kinds."""
    rng = random.Random(17)
    roundtrips_ok = True
    for i in range(20):
        _, idx, _, _ = corpus_and_index(rng, rng.randint(5, 120))
        path = tmp_path / f"idx{i}.evix"
        save_index(idx, path)
        roundtrips_ok &= load_index(path) == idx

    path = tmp_path / "victim.evix"
    _, idx, _, _ = corpus_and_index(rng, 30)
    save_index(idx, path)
    blob = path.read_bytes()

    def expect(data, error_kind):
        victim = tmp_path / "corrupt.evix"
        victim.write_bytes(data)
        try:
            load_index(victim)
        except error_kind:
            return True
        except Exception:
            return False
        return False

    errors_ok = (
        expect(b"XXXX" + blob[4:], IndexVersionError)
        and expect(blob[:4] + b"\x09\x00\x00\x00" + blob[8:], IndexVersionError)
        and expect(blob[: len(blob) // 2], IndexTruncatedError)
        and expect(blob[:3], IndexTruncatedError)
        and expect(blob[:30] + bytes([blob[30] ^ 0xFF]) + blob[31:], IndexChecksumError)
        and expect(blob + b"\x00", IndexChecksumError)
    )
    report("index persistence: 20 round-trips identical, corrupt files raise "
           "designated errors", roundtrips_ok and errors_ok)
