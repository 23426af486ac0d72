"""Sentence-level evidence retrieval engine.

Subpackages: corpus ingestion (corpus), semantic annotation (annotate),
the positional inverted index (index), the query DSL and cascades (query),
scoring and ranking (ranker), crowd-label aggregation and the retrospective
labeling loop (labeling), evaluation (evalkit), and the operator CLI (cli).
"""

__version__ = "0.1.0"
