"""Synthetic toy data generators shared by training/fine-tuning tests.

The pretraining corpus repeats a small set of fixed phrases so masked tokens
are recoverable from context; the task datasets carry deterministic
word-to-label structure so tiny encoders can memorize them.
"""

import numpy as np

from mlmkit.evaluation import BioSentence, DepSentence, NliExample
from mlmkit.corpus import Document, DocumentStore


def patterned_paragraphs(n_paragraphs: int, seed: int = 0) -> list[str]:
    """Paragraphs built by repeating one of 20 five-word phrases."""
    rng = np.random.default_rng(seed)
    words = [f"w{chr(97 + i)}{chr(97 + j)}" for i in range(5) for j in range(5)]
    phrases = [
        [words[(7 * k + 3 * i) % len(words)] for i in range(5)] for k in range(20)
    ]
    paragraphs = []
    for _ in range(n_paragraphs):
        phrase = phrases[int(rng.integers(len(phrases)))]
        reps = int(rng.integers(2, 5))
        paragraphs.append(" ".join(phrase * reps))
    return paragraphs


def patterned_store(n_paragraphs: int, seed: int = 0, paragraphs_per_doc: int = 4) -> DocumentStore:
    paragraphs = patterned_paragraphs(n_paragraphs, seed)
    docs = []
    for i in range(0, len(paragraphs), paragraphs_per_doc):
        docs.append(Document.from_paragraphs(len(docs), paragraphs[i : i + paragraphs_per_doc]))
    return DocumentStore(documents=tuple(docs))


_POS_LEXICON = {
    "DET": ["le", "la", "les", "un", "une"],
    "NOUN": ["chat", "porte", "table", "arbre", "route", "maison"],
    "VERB": ["mange", "ouvre", "voit", "prend", "ferme"],
    "ADJ": ["grand", "petit", "vert", "clair"],
    "ADV": ["vite", "bien", "tard"],
}


def toy_pos_sentences(n: int, seed: int = 0) -> list[DepSentence]:
    """Deterministic word->tag mapping; trees are simple right-headed chains."""
    rng = np.random.default_rng(seed)
    tags = sorted(_POS_LEXICON)
    sentences = []
    for _ in range(n):
        length = int(rng.integers(3, 8))
        words, upos = [], []
        for _ in range(length):
            tag = tags[int(rng.integers(len(tags)))]
            options = _POS_LEXICON[tag]
            words.append(options[int(rng.integers(len(options)))])
            upos.append(tag)
        heads = [0] + list(range(1, length))
        deprels = ["root"] + ["dep"] * (length - 1)
        sentences.append(DepSentence(words, upos, heads, deprels))
    return sentences


def toy_treebank(n: int, seed: int = 0) -> list[DepSentence]:
    """Distinct sentences with random (valid) dependency trees."""
    rng = np.random.default_rng(seed)
    vocab = [f"mot{chr(97 + i)}" for i in range(26)]
    rels = ["root", "subj", "obj", "mod"]
    sentences = []
    seen = set()
    while len(sentences) < n:
        length = int(rng.integers(3, 7))
        words = tuple(vocab[int(rng.integers(len(vocab)))] for _ in range(length))
        if words in seen:
            continue
        seen.add(words)
        # random arborescence: attach each node to a previously placed node
        order = rng.permutation(length) + 1
        heads = [0] * length
        deprels = ["dep"] * length
        placed = [int(order[0])]
        heads[int(order[0]) - 1] = 0
        deprels[int(order[0]) - 1] = "root"
        for node in order[1:]:
            parent = placed[int(rng.integers(len(placed)))]
            heads[int(node) - 1] = parent
            deprels[int(node) - 1] = rels[1 + int(rng.integers(3))]
            placed.append(int(node))
        upos = ["X"] * length
        sentences.append(DepSentence(list(words), upos, heads, deprels))
    return sentences


_NER_PEOPLE = ["anna", "bruno", "celia", "david"]
_NER_PLACES = ["paris", "lyon", "nice"]
_NER_FILLER = ["va", "vers", "et", "puis", "chez", "avec", "sans", "sur"]


def toy_ner_sentences(n: int, seed: int = 0) -> list[BioSentence]:
    """Entity membership is determined by word identity."""
    rng = np.random.default_rng(seed)
    sentences = []
    for _ in range(n):
        words, tags = [], []
        for _ in range(int(rng.integers(4, 9))):
            kind = rng.random()
            if kind < 0.25:
                words.append(_NER_PEOPLE[int(rng.integers(len(_NER_PEOPLE)))])
                tags.append("B-PER")
            elif kind < 0.45:
                words.append(_NER_PLACES[int(rng.integers(len(_NER_PLACES)))])
                tags.append("B-LOC")
            else:
                words.append(_NER_FILLER[int(rng.integers(len(_NER_FILLER)))])
                tags.append("O")
        from mlmkit.evaluation import bio_to_spans

        spans, _ = bio_to_spans(tags)
        sentences.append(BioSentence(words, tags, spans))
    return sentences


def toy_nli_examples(n: int, seed: int = 0) -> list[NliExample]:
    """Label is a deterministic function of a marker word in the hypothesis."""
    rng = np.random.default_rng(seed)
    markers = {"entailment": "oui", "neutral": "peut", "contradiction": "non"}
    subjects = ["le chat", "la porte", "un arbre"]
    out = []
    labels = sorted(markers)
    for _ in range(n):
        label = labels[int(rng.integers(3))]
        subject = subjects[int(rng.integers(len(subjects)))]
        out.append(
            NliExample(
                premise=f"{subject} est la",
                hypothesis=f"{markers[label]} {subject} reste",
                label=label,
            )
        )
    return out


def all_task_words() -> list[str]:
    """Every word any toy task can produce (for vocabulary training)."""
    words = set()
    for options in _POS_LEXICON.values():
        words.update(options)
    words.update(f"mot{chr(97 + i)}" for i in range(26))
    words.update(_NER_PEOPLE + _NER_PLACES + _NER_FILLER)
    words.update(["oui", "peut", "non", "le", "chat", "la", "porte", "un", "arbre",
                  "est", "reste"])
    return sorted(words)
