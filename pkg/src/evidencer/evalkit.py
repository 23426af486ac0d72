"""Evaluation of ranked outputs: precision@k, source diversity, score
distribution comparison, and CSV report emission.

Precision is computed over labeled prefixes only; a missing gold label
inside the prefix is an error, never an implicit negative.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .corpus import SentenceId
from .ranker import ScoredCandidate

Pair = tuple[str, SentenceId]


@dataclass(frozen=True)
class PrecisionCurve:
    model: str
    corpus: str
    points: tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class DiversityCurve:
    model: str
    corpus: str
    points: tuple[tuple[int, float, float], ...]  # (k, avg docs, avg sources)


def _check_ks(ks: Sequence[int]) -> list[int]:
    ks = list(ks)
    if not ks or any(k <= 0 for k in ks):
        raise ValueError("ks must be positive")
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("ks must be strictly increasing")
    return ks


def precision_at_k(
    ranked: Sequence[ScoredCandidate],
    gold: Mapping[Pair, bool],
    ks: Sequence[int],
    model: str = "model",
    corpus: str = "corpus",
) -> PrecisionCurve:
    """precision@k = positives among the top k / k, for each k.

    Every pair in the top max(ks) must have a gold label; missing pairs are
    reported in the error.
    """
    ks = _check_ks(ks)
    depth = max(ks)
    if depth > len(ranked):
        raise ValueError(
            f"k={depth} exceeds the ranked list length {len(ranked)}"
        )
    prefix = [sc.candidate.pair for sc in ranked[:depth]]
    missing = [p for p in prefix if p not in gold]
    if missing:
        raise ValueError(f"missing gold labels for pairs: {missing}")
    points = []
    positives = 0
    labels = [gold[p] for p in prefix]
    next_k = 0
    for i, label in enumerate(labels, start=1):
        positives += bool(label)
        if next_k < len(ks) and i == ks[next_k]:
            points.append((i, positives / i))
            next_k += 1
    return PrecisionCurve(model=model, corpus=corpus, points=tuple(points))


def average_curves(curves: Sequence[PrecisionCurve]) -> PrecisionCurve:
    """Pointwise mean of curves sharing one k grid."""
    if not curves:
        raise ValueError("no curves to average")
    grid = [k for k, _ in curves[0].points]
    for curve in curves[1:]:
        if [k for k, _ in curve.points] != grid:
            raise ValueError("curves have mismatched k grids")
    points = tuple(
        (k, sum(curve.points[i][1] for curve in curves) / len(curves))
        for i, k in enumerate(grid)
    )
    return PrecisionCurve(model=curves[0].model, corpus=curves[0].corpus, points=points)


def diversity_at_k(
    ranked_lists: Sequence[Sequence[tuple[str, str]]],
    ks: Sequence[int],
    model: str = "model",
    corpus: str = "corpus",
) -> DiversityCurve:
    """Distinct documents and distinct sources among the top k, averaged
    over the per-motion lists. Lists shorter than k contribute their full
    length."""
    ks = _check_ks(ks)
    if not ranked_lists:
        raise ValueError("no ranked lists")
    points = []
    for k in ks:
        docs = 0
        sources = 0
        for ranked in ranked_lists:
            top = ranked[:k]
            docs += len({doc_id for doc_id, _ in top})
            sources += len({source for _, source in top})
        points.append((k, docs / len(ranked_lists), sources / len(ranked_lists)))
    return DiversityCurve(model=model, corpus=corpus, points=tuple(points))


def _mean_var(sample: Sequence[float]) -> tuple[float, float]:
    n = len(sample)
    mean = sum(sample) / n
    var = sum((x - mean) ** 2 for x in sample) / (n - 1)
    return mean, var


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (Lentz's method)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def welch_t_test(sample_a: Sequence[float], sample_b: Sequence[float]) -> tuple[float, float]:
    """Two-sided Welch's t-test.

    Returns (t, p) with the p-value from the Student-t distribution at the
    Welch-Satterthwaite degrees of freedom. Raises on samples shorter than
    two or with no variance anywhere.
    """
    if len(sample_a) < 2 or len(sample_b) < 2:
        raise ValueError("both samples need at least two observations")
    na, nb = len(sample_a), len(sample_b)
    mean_a, var_a = _mean_var(sample_a)
    mean_b, var_b = _mean_var(sample_b)
    if var_a == 0.0 and var_b == 0.0:
        raise ValueError("both samples are constant; t is undefined")
    sa, sb = var_a / na, var_b / nb
    t = (mean_a - mean_b) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa * sa / (na - 1) + sb * sb / (nb - 1))
    p = regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
    return t, p


def emit_report(
    curves: Iterable[PrecisionCurve | DiversityCurve],
    out_dir,
) -> list[str]:
    """One CSV per curve, named <model>_<corpus>_<metric>.csv.

    Precision files carry ``k,precision`` rows; diversity files carry
    ``k,avg_docs,avg_sources``. Emission is deterministic, so re-emitting
    the same curves rewrites identical bytes.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for curve in curves:
        if isinstance(curve, PrecisionCurve):
            name = f"{curve.model}_{curve.corpus}_precision.csv"
            header = ["k", "precision"]
            rows = [[k, repr(p)] for k, p in curve.points]
        else:
            name = f"{curve.model}_{curve.corpus}_diversity.csv"
            header = ["k", "avg_docs", "avg_sources"]
            rows = [[k, repr(d), repr(s)] for k, d, s in curve.points]
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        written.append(path)
    return written
