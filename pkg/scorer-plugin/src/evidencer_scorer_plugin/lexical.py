"""Lexical logistic scoring over the wire-protocol text fields.

This intentionally re-implements the engine's tokenizer, model file format,
and sigmoid rather than importing the engine: the plugin's contract is the
wire protocol and the documented file formats, nothing else. The feature
order (term, mterm, maskterm) mirrors the engine's canonical order so that
the float summation is bit-identical on both sides.
"""

from __future__ import annotations

import math
import re
from typing import Iterable

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

VARIANTS = ("S+M", "MaskS+M", "MaskS")

# text fields each input variant reads, in the engine's feature order
VARIANT_FIELDS = {
    "S+M": ("sentence", "motion"),
    "MaskS+M": ("motion", "masked"),
    "MaskS": ("masked",),
}

_FIELD_PREFIX = {"sentence": "term:", "motion": "mterm:", "masked": "maskterm:"}


def tokenize(text: str) -> list[str]:
    return [m.group(0).lower() for m in _TOKEN_RE.finditer(text)]


def parse_model(lines: Iterable[str]) -> tuple[float, dict[str, float]]:
    """``bias <value>`` then ``feature_id <weight>`` lines; the weight is
    whatever follows the last space, so ids may contain spaces."""
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
    return bias, weights


def load_model(path) -> tuple[float, dict[str, float]]:
    with open(path, encoding="utf-8") as f:
        return parse_model(f)


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def lexical_features(variant: str, fields: dict[str, str]) -> dict[str, float]:
    """Token counts of the variant's text fields, in canonical order."""
    fv: dict[str, float] = {}
    for field in VARIANT_FIELDS[variant]:
        prefix = _FIELD_PREFIX[field]
        for tok in tokenize(fields[field]):
            key = prefix + tok
            fv[key] = fv.get(key, 0.0) + 1.0
    return fv


def score_logistic(bias: float, weights: dict[str, float], fv: dict[str, float]) -> float:
    z = bias
    for name, value in fv.items():
        w = weights.get(name)
        if w is not None:
            z += w * value
    return sigmoid(z)
