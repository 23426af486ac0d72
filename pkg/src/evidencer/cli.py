"""Operator command line wiring the pipeline end to end.

Stages talk through files: ingest and index the corpus, retrieve candidates
per motion, rank them, grow a labeled dataset with the retrospective loop,
and evaluate rankings against gold labels. Every command is deterministic
given the config and seed; --seed beats the config value, which beats the
EVIDENCER_SEED environment variable.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shutil
import sys
from dataclasses import dataclass, field
from importlib import resources as importlib_resources

from . import annotate, evalkit, labeling, query, ranker
from . import corpus as corpus_mod
from . import index as index_mod
from .corpus import EvidenceType, Motion, SentenceId
from .scorer_client import ScorerProtocolError


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    base_dir: str
    corpus: str
    lexicons: list[str]
    redirects: str
    cascades: dict[str, str]
    motions: str
    stop_words: str
    index_path: str
    person_gazetteer: str | None = None
    org_gazetteer: str | None = None
    k: int = 40
    per_type: bool = True
    cap: int | None = None
    dedup_threshold: float = 0.8
    binarize_threshold: float = 0.5
    min_common: int = 50
    min_avg_kappa: float = 0.3
    min_trusted: int = 7
    mask_token: str = annotate.DEFAULT_MASK_TOKEN
    seed: int | None = None
    scorer: dict = field(default_factory=dict)
    annotation_source: dict = field(default_factory=dict)

    def path(self, relative: str) -> str:
        return os.path.normpath(os.path.join(self.base_dir, relative))


_REQUIRED_KEYS = (
    "corpus", "lexicons", "redirects", "cascades", "motions",
    "stop_words", "index_path", "scorer",
)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    for key in _REQUIRED_KEYS:
        if key not in raw:
            raise ConfigError(f"config missing key {key!r}")
    known = {f for f in RunConfig.__dataclass_fields__ if f != "base_dir"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(base_dir=os.path.dirname(os.path.abspath(path)), **raw)


def _subkey(spec: dict, key: str, owner: str):
    if key not in spec:
        raise ConfigError(f"{owner} config missing key {key!r}")
    return spec[key]


def validate_config(cfg: RunConfig) -> None:
    """Check threshold ranges, file existence, and parse the input files."""
    checks = [
        (0.0 <= cfg.dedup_threshold <= 1.0, "dedup_threshold must be in [0, 1]"),
        (0.0 <= cfg.binarize_threshold <= 1.0, "binarize_threshold must be in [0, 1]"),
        (-1.0 <= cfg.min_avg_kappa <= 1.0, "min_avg_kappa must be in [-1, 1]"),
        (cfg.min_common >= 1, "min_common must be >= 1"),
        (cfg.min_trusted >= 1, "min_trusted must be >= 1"),
        (cfg.k >= 1, "k must be >= 1"),
        (cfg.cap is None or cfg.cap > 0, "cap must be positive"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)

    inputs = [cfg.corpus, cfg.redirects, cfg.motions, cfg.stop_words]
    inputs += list(cfg.lexicons)
    inputs += [p for p in (cfg.person_gazetteer, cfg.org_gazetteer) if p]
    inputs += list(cfg.cascades.values())
    if cfg.scorer.get("kind") == "builtin":
        inputs.append(_subkey(cfg.scorer, "model", "scorer"))
    source = cfg.annotation_source
    if source.get("kind") == "oracle":
        inputs.append(_subkey(source, "truth", "annotation_source"))
        noise = source.get("noise", 0.0)
        rates = noise.values() if isinstance(noise, dict) else [noise]
        if not all(0.0 <= float(r) < 0.5 for r in rates):
            raise ConfigError("annotation noise must be in [0, 0.5)")
    elif source.get("kind") == "file":
        inputs.append(_subkey(source, "path", "annotation_source"))
    for rel in inputs:
        full = cfg.path(rel)
        if not os.path.exists(full):
            raise ConfigError(f"missing input file: {full}")

    load_cascades(cfg)
    table = annotate.load_redirects(cfg.path(cfg.redirects))
    load_motions(cfg, table)
    build_scorer(cfg)


def load_motions(cfg: RunConfig, table: annotate.RedirectTable) -> dict[str, Motion]:
    """Motions CSV: motion_id,text,topic,action (action may be empty).
    Topics are canonicalized against the redirect table."""
    motions = {}
    with open(cfg.path(cfg.motions), newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        required = {"motion_id", "text", "topic", "action"}
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise ConfigError(f"motions file missing columns: {sorted(missing)}")
        for row in reader:
            motion = Motion(
                motion_id=row["motion_id"],
                text=row["text"],
                topic=row["topic"],
                action=row["action"] or None,
            )
            motions[motion.motion_id] = annotate.resolve_motion(motion, table)
    if not motions:
        raise ConfigError("motions file has no rows")
    return motions


def load_cascades(cfg: RunConfig) -> dict[EvidenceType, query.Cascade]:
    cascades = {}
    for type_name, rel in cfg.cascades.items():
        cascade = query.load_cascade(cfg.path(rel))
        if cascade.evidence_type.value != type_name:
            raise ConfigError(
                f"cascade file {rel} declares {cascade.evidence_type.value!r}, "
                f"config says {type_name!r}"
            )
        if cfg.cap is not None:
            cascade = query.Cascade(cascade.evidence_type, cascade.queries, cfg.cap)
        cascades[cascade.evidence_type] = cascade
    for required in (EvidenceType.STUDY, EvidenceType.EXPERT):
        if required not in cascades:
            raise ConfigError(f"config defines no {required.value} cascade")
    return cascades


def build_scorer(cfg: RunConfig) -> ranker.ScorerSpec:
    spec = cfg.scorer
    kind = spec.get("kind")
    if kind == "builtin":
        return ranker.BuiltinScorer(
            ranker.load_model(cfg.path(_subkey(spec, "model", "scorer")))
        )
    if kind == "external":
        return ranker.ExternalScorer(
            command=tuple(_subkey(spec, "command", "scorer")),
            variant=spec.get("variant", "S+M"),
            timeout=float(spec.get("timeout", 30.0)),
        )
    raise ConfigError(f"unknown scorer kind {kind!r}")


def build_source(cfg: RunConfig, seed: int) -> labeling.AnnotationSource:
    spec = cfg.annotation_source
    kind = spec.get("kind")
    if kind == "oracle":
        noise = spec.get("noise", 0.0)
        return labeling.OracleAnnotators(
            truth=labeling.read_gold_labels(
                cfg.path(_subkey(spec, "truth", "annotation_source"))
            ),
            noise=noise if isinstance(noise, dict) else float(noise),
            seed=seed,
            pool_size=int(spec.get("pool_size", 12)),
            per_pair=int(spec.get("per_pair", 10)),
        )
    if kind == "file":
        return labeling.FileSource(cfg.path(_subkey(spec, "path", "annotation_source")))
    raise ConfigError(f"unknown annotation source kind {kind!r}")


def _load_annotation_resources(cfg: RunConfig):
    lexicons = [annotate.load_lexicon(cfg.path(p)) for p in cfg.lexicons]
    gazetteers = {}
    if cfg.person_gazetteer:
        gazetteers[annotate.ENTITY_PERSON] = annotate.load_lexicon(cfg.path(cfg.person_gazetteer))
    if cfg.org_gazetteer:
        gazetteers[annotate.ENTITY_ORG] = annotate.load_lexicon(cfg.path(cfg.org_gazetteer))
    table = annotate.load_redirects(cfg.path(cfg.redirects))
    return lexicons, gazetteers, table


def _ingest(cfg: RunConfig) -> list[corpus_mod.Document]:
    with open(cfg.path(cfg.corpus), encoding="utf-8") as f:
        return corpus_mod.ingest_corpus(f)


def _resolve_seed(args, cfg: RunConfig) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if cfg.seed is not None:
        return cfg.seed
    return int(os.environ.get("EVIDENCER_SEED", "0"))


# --- candidate / ranking files -------------------------------------------

CANDIDATE_HEADER = ["motion_id", "doc_id", "sent_idx", "query_id", "evidence_type", "spans"]
RANKING_HEADER = ["motion_id", "doc_id", "sent_idx", "score", "query_id", "evidence_type"]


def write_candidates(candidates, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CANDIDATE_HEADER)
        for c in candidates:
            spans = "|".join(f"{a}:{b}" for a, b in c.match_spans)
            writer.writerow(
                [c.motion_id, c.sentence_ref.doc_id, c.sentence_ref.sent_idx,
                 c.query_id, c.evidence_type.value, spans]
            )


def read_candidates(path) -> list[query.Candidate]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = set(CANDIDATE_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"candidates file missing columns: {sorted(missing)}")
        out = []
        for row in reader:
            spans = tuple(
                tuple(int(x) for x in part.split(":"))
                for part in row["spans"].split("|")
                if part
            )
            out.append(
                query.Candidate(
                    motion_id=row["motion_id"],
                    sentence_ref=SentenceId(row["doc_id"], int(row["sent_idx"])),
                    query_id=row["query_id"],
                    evidence_type=EvidenceType(row["evidence_type"]),
                    match_spans=spans,
                )
            )
        return out


def write_ranking(scored, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RANKING_HEADER)
        for sc in scored:
            c = sc.candidate
            writer.writerow(
                [c.motion_id, c.sentence_ref.doc_id, c.sentence_ref.sent_idx,
                 repr(sc.score), c.query_id, c.evidence_type.value]
            )


def read_ranking(path) -> list[ranker.ScoredCandidate]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = set(RANKING_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"ranking file missing columns: {sorted(missing)}")
        out = []
        for row in reader:
            candidate = query.Candidate(
                motion_id=row["motion_id"],
                sentence_ref=SentenceId(row["doc_id"], int(row["sent_idx"])),
                query_id=row["query_id"],
                evidence_type=EvidenceType(row["evidence_type"]),
                match_spans=(),
            )
            out.append(ranker.ScoredCandidate(candidate, float(row["score"])))
        return out


# --- subcommands ----------------------------------------------------------

def cmd_ingest(args) -> int:
    cfg = load_config(args.config)
    docs = _ingest(cfg)
    sentences = [s for d in docs for s in corpus_mod.segment_sentences(d)]
    tokens = sum(len(s.tokens) for s in sentences)
    print(f"documents: {len(docs)}")
    print(f"sentences: {len(sentences)}")
    print(f"tokens: {tokens}")
    return 0


def cmd_index(args) -> int:
    cfg = load_config(args.config)
    docs = _ingest(cfg)
    lexicons, gazetteers, table = _load_annotation_resources(cfg)
    annotated = [
        annotate.annotate_sentence(s, lexicons, gazetteers, table)
        for d in docs
        for s in corpus_mod.segment_sentences(d)
    ]
    built = index_mod.build_index(annotated, {d.doc_id: d.source for d in docs})
    out = args.out or cfg.path(cfg.index_path)
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    index_mod.save_index(built, out)
    print(f"indexed {built.sentence_count} sentences from {built.doc_count} documents")
    print(f"keys: {len(built.postings)}")
    print(f"wrote {out}")
    return 0


def cmd_retrieve(args) -> int:
    cfg = load_config(args.config)
    idx = index_mod.load_index(cfg.path(cfg.index_path))
    cascades = load_cascades(cfg)
    _, _, table = _load_annotation_resources(cfg)
    motions = load_motions(cfg, table)
    if args.motion:
        if args.motion not in motions:
            raise ConfigError(f"unknown motion {args.motion!r}")
        selected = [motions[args.motion]]
    else:
        selected = [motions[k] for k in sorted(motions)]
    candidates = []
    for motion in selected:
        found = query.retrieve_for_motion(idx, cascades, motion)
        candidates.extend(found)
        print(f"{motion.motion_id}: {len(found)} candidates")
    write_candidates(candidates, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_rank(args) -> int:
    cfg = load_config(args.config)
    idx = index_mod.load_index(cfg.path(cfg.index_path))
    _, _, table = _load_annotation_resources(cfg)
    motions = load_motions(cfg, table)
    candidates = read_candidates(args.candidates)
    scorer = build_scorer(cfg)
    ctx = ranker.ScoringContext(idx.sentences, motions, cfg.mask_token)
    stop_words = ranker.load_stop_words(cfg.path(cfg.stop_words))
    by_motion: dict[str, list[query.Candidate]] = {}
    for c in candidates:
        by_motion.setdefault(c.motion_id, []).append(c)
    scored = []
    for motion_id in sorted(by_motion):
        scored.extend(
            ranker.rank(
                by_motion[motion_id], scorer, ctx,
                dedup=args.dedup,
                dedup_threshold=cfg.dedup_threshold,
                stop_words=stop_words,
            )
        )
    write_ranking(scored, args.out)
    print(f"ranked {len(candidates)} candidates -> {len(scored)} rows")
    print(f"wrote {args.out}")
    if args.binarize_out:
        with open(args.binarize_out, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(labeling.GOLD_HEADER)
            for c, positive in ranker.binarize(scored, cfg.binarize_threshold):
                writer.writerow(
                    [c.motion_id, c.sentence_ref.doc_id, c.sentence_ref.sent_idx,
                     "pos" if positive else "neg"]
                )
        print(f"wrote {args.binarize_out}")
    return 0


def cmd_label_loop(args) -> int:
    cfg = load_config(args.config)
    seed = _resolve_seed(args, cfg)
    idx = index_mod.load_index(cfg.path(cfg.index_path))
    cascades = load_cascades(cfg)
    _, _, table = _load_annotation_resources(cfg)
    motions = load_motions(cfg, table)
    scorer = build_scorer(cfg)
    source = build_source(cfg, seed)
    records: list[labeling.LabelRecord] = []
    snapshots = labeling.run_loop(
        idx, cascades, list(motions.values()),
        bootstrap_scorer=scorer,
        trainer=ranker.logistic_trainer(),
        k=args.k or cfg.k,
        iterations=args.iterations,
        source=source,
        per_type=cfg.per_type,
        mask_token=cfg.mask_token,
        record_sink=records,
        min_common=cfg.min_common,
        min_avg_kappa=cfg.min_avg_kappa,
        min_trusted=cfg.min_trusted,
    )
    for snap in snapshots:
        print(
            f"iteration {snap.iteration}: {len(snap.pairs)} labeled pairs, "
            f"positive fraction {snap.positive_fraction:.3f}"
        )
    labeling.write_snapshots(snapshots, args.snapshots)
    print(f"wrote {args.snapshots}")
    if args.records:
        labeling.write_label_records(records, args.records)
        print(f"wrote {args.records}")
    return 0


def cmd_aggregate_labels(args) -> int:
    cfg = load_config(args.config)
    records = labeling.read_label_records(args.records)
    trusted, reports = labeling.filter_annotators(
        records, cfg.min_common, cfg.min_avg_kappa
    )
    aggregated, under = labeling.aggregate_labels(records, trusted, cfg.min_trusted)
    labeling.write_gold_labels(aggregated, args.gold)
    print(f"trusted annotators: {len(trusted)} of {len(reports)}")
    print(f"gold pairs: {len(aggregated)}; under-labeled: {len(under)}")
    try:
        print(f"overall weighted kappa: {labeling.weighted_overall_kappa(reports):.4f}")
    except ValueError:
        print("overall weighted kappa: undefined (no qualifying pairs)")
    print(f"wrote {args.gold}")
    if args.needs:
        labeling.write_needs_labels(under, args.needs)
        print(f"wrote {args.needs}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    scored = read_ranking(args.ranking)
    gold = labeling.read_gold_labels(args.gold)
    ks = [int(k) for k in args.ks.split(",")]
    idx = index_mod.load_index(cfg.path(cfg.index_path))
    by_motion: dict[str, list[ranker.ScoredCandidate]] = {}
    for sc in scored:
        by_motion.setdefault(sc.candidate.motion_id, []).append(sc)
    curves = []
    provenance = []
    for motion_id in sorted(by_motion):
        ranked = by_motion[motion_id]
        curves.append(
            evalkit.precision_at_k(ranked, gold, ks, model=args.model, corpus=motion_id)
        )
        provenance.append(
            [
                (sc.candidate.sentence_ref.doc_id,
                 idx.doc_sources.get(sc.candidate.sentence_ref.doc_id, "unknown"))
                for sc in ranked
            ]
        )
    average = evalkit.average_curves(curves)
    average = evalkit.PrecisionCurve(args.model, args.corpus_name, average.points)
    diversity = evalkit.diversity_at_k(provenance, ks, model=args.model, corpus=args.corpus_name)
    written = evalkit.emit_report([average, diversity], args.out_dir)
    for k, p in average.points:
        print(f"precision@{k}: {p:.4f}")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_validate_config(args) -> int:
    cfg = load_config(args.config)
    validate_config(cfg)
    print("config OK")
    return 0


def cmd_init_sample(args) -> int:
    dest = args.dest
    os.makedirs(dest, exist_ok=True)
    root = importlib_resources.files("evidencer") / "resources"

    def copy_tree(node, target):
        for child in node.iterdir():
            target_path = os.path.join(target, child.name)
            if child.is_dir():
                os.makedirs(target_path, exist_ok=True)
                copy_tree(child, target_path)
            else:
                with importlib_resources.as_file(child) as concrete:
                    shutil.copy(concrete, target_path)

    copy_tree(root, dest)
    print(f"sample project written to {dest}")
    print(f"next: evidencer index --config {os.path.join(dest, 'sample_config.json')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evidencer",
        description="Sentence-level evidence retrieval pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        if name != "init-sample":
            p.add_argument("--config", required=True, help="path to the run config JSON")
        return p

    add("ingest", cmd_ingest, "validate the corpus file and print counts")

    p = add("index", cmd_index, "annotate the corpus and build the index")
    p.add_argument("--out", help="index output path (default: config index_path)")

    p = add("retrieve", cmd_retrieve, "run the query cascades for motions")
    p.add_argument("--motion", help="motion id (default: all motions)")
    p.add_argument("--out", required=True, help="candidates CSV output path")

    p = add("rank", cmd_rank, "score and rank a candidates file")
    p.add_argument("--candidates", required=True, help="candidates CSV input")
    p.add_argument("--out", required=True, help="ranking CSV output path")
    p.add_argument("--dedup", action="store_true",
                   help="drop near-duplicate sentences among ranked results")
    p.add_argument("--binarize-out",
                   help="also write predicted labels at the binarize threshold")

    p = add("label-loop", cmd_label_loop, "run the retrospective labeling loop")
    p.add_argument("--iterations", type=int, required=True)
    p.add_argument("--k", type=int, help="top-k to label per motion/type (default: config k)")
    p.add_argument("--snapshots", required=True, help="snapshot CSV output path")
    p.add_argument("--records", help="raw label records CSV output path")
    p.add_argument("--seed", type=int, help="seed override")

    p = add("aggregate-labels", cmd_aggregate_labels,
            "aggregate a label records file into gold labels")
    p.add_argument("--records", required=True, help="label records CSV input")
    p.add_argument("--gold", required=True, help="gold labels CSV output path")
    p.add_argument("--needs", help="needs-labels CSV output path")

    p = add("eval", cmd_eval, "precision@k and diversity reports for a ranking")
    p.add_argument("--ranking", required=True, help="ranking CSV input")
    p.add_argument("--gold", required=True, help="gold labels CSV input")
    p.add_argument("--ks", default="1,3,5", help="comma-separated k grid")
    p.add_argument("--out-dir", required=True, help="report output directory")
    p.add_argument("--model", default="builtin", help="model name for report files")
    p.add_argument("--corpus-name", default="corpus", help="corpus name for report files")

    add("validate-config", cmd_validate_config, "check the config and its files")

    p = add("init-sample", cmd_init_sample, "copy the bundled sample project")
    p.add_argument("--dest", required=True, help="destination directory")

    return parser


_ERROR_CATEGORIES = [
    (ConfigError, "config", 2),
    (corpus_mod.CorpusError, "corpus", 3),
    ((query.QuerySyntaxError, query.QueryValidationError, query.QueryMotionMismatch),
     "query", 3),
    (index_mod.IndexError_, "index", 4),
    (ScorerProtocolError, "scorer", 5),
    (FileNotFoundError, "missing file", 2),
    (ValueError, "input", 3),
]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - single funnel for exit codes
        for types, category, code in _ERROR_CATEGORIES:
            if isinstance(exc, types):
                print(f"error ({category}): {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
