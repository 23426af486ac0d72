import sys
from importlib import resources as importlib_resources
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the synth helpers

from evidencer import annotate, corpus


RESOURCES = importlib_resources.files("evidencer") / "resources"


@pytest.fixture(scope="session")
def sample_resources():
    """Bundled sample lexicons, gazetteers, and redirect table."""
    lexicons = [
        annotate.parse_lexicon((RESOURCES / f"lexicons/{name}.lex").read_text().splitlines())
        for name in ("study", "expert", "sentiment")
    ]
    gazetteers = {
        annotate.ENTITY_PERSON: annotate.parse_lexicon(
            (RESOURCES / "gazetteers/person.lex").read_text().splitlines()
        ),
        annotate.ENTITY_ORG: annotate.parse_lexicon(
            (RESOURCES / "gazetteers/org.lex").read_text().splitlines()
        ),
    }
    table = annotate.parse_redirects((RESOURCES / "redirects.tsv").read_text().splitlines())
    return lexicons, gazetteers, table


@pytest.fixture(scope="session")
def sample_corpus():
    docs = corpus.ingest_corpus(
        (RESOURCES / "sample_corpus.jsonl").read_text().splitlines()
    )
    return docs


def build_sentence(text, doc_id="d0", idx=0, lexicons=(), gazetteers=None, table=None):
    """Tokenize and annotate a single standalone sentence."""
    sentence = corpus.Sentence(
        corpus.SentenceId(doc_id, idx), text, tuple(corpus.tokenize(text))
    )
    return annotate.annotate_sentence(sentence, lexicons, gazetteers, table)
