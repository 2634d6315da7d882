"""Shared synthetic data for the demo scripts."""

import numpy as np

from mlmkit import Document, DocumentStore
from mlmkit.evaluation import DepSentence


def patterned_demo_store(n_paragraphs: int, seed: int = 0) -> DocumentStore:
    """Paragraphs that repeat short phrases, so masked tokens are learnable."""
    rng = np.random.default_rng(seed)
    words = [f"w{chr(97 + i)}{chr(97 + j)}" for i in range(5) for j in range(5)]
    phrases = [[words[(7 * k + 3 * i) % len(words)] for i in range(5)] for k in range(20)]
    paragraphs = []
    for _ in range(n_paragraphs):
        phrase = phrases[int(rng.integers(len(phrases)))]
        paragraphs.append(" ".join(phrase * int(rng.integers(2, 5))))
    docs = []
    for i in range(0, len(paragraphs), 4):
        docs.append(Document.from_paragraphs(len(docs), paragraphs[i : i + 4]))
    return DocumentStore(documents=tuple(docs))


_LEXICON = {
    "DET": ["le", "la", "un", "une"],
    "NOUN": ["chat", "porte", "table", "arbre", "route"],
    "VERB": ["mange", "ouvre", "voit", "ferme"],
    "ADJ": ["grand", "petit", "vert"],
}


def demo_tagged_sentences(n: int, seed: int = 0) -> list[DepSentence]:
    """Sentences with a deterministic word -> tag mapping and chain trees."""
    rng = np.random.default_rng(seed)
    tags = sorted(_LEXICON)
    out = []
    for _ in range(n):
        length = int(rng.integers(3, 7))
        words, upos = [], []
        for _ in range(length):
            tag = tags[int(rng.integers(len(tags)))]
            words.append(_LEXICON[tag][int(rng.integers(len(_LEXICON[tag])))])
            upos.append(tag)
        heads = [0] + list(range(1, length))
        rels = ["root"] + ["dep"] * (length - 1)
        out.append(DepSentence(words, upos, heads, rels))
    return out


def demo_vocabulary_text() -> str:
    words = sorted({w for opts in _LEXICON.values() for w in opts})
    return " ".join(words)
