"""Task-file readers and the four downstream metrics.

Formats: CoNLL-U (10 tab-separated columns, '#' comments, blank-line sentence
breaks; multiword-token ranges and empty nodes are skipped), two-column BIO
for entity spans, and three-column TSV with a header line for inference
pairs. Metrics: UPOS accuracy, UAS/LAS (no punctuation exclusion),
micro-averaged exact-match entity F1, and plain accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

NLI_LABELS = ("entailment", "neutral", "contradiction")

# Documented full-corpus reference counts for the treebank and inference
# datasets this toolkit's readers target (GSD treebank; French XNLI splits).
GSD_REFERENCE_SENTENCES = 16_342
GSD_REFERENCE_TOKENS = 389_363
XNLI_TRAIN_SIZE = 122_000
XNLI_DEV_SIZE = 2_490
XNLI_TEST_SIZE = 5_010


class ParseError(ValueError):
    pass


class MetricError(ValueError):
    pass


@dataclass
class DepSentence:
    """One dependency-annotated sentence; head 0 denotes the root."""

    words: list[str]
    upos: list[str]
    heads: list[int]
    deprels: list[str]

    def __post_init__(self):
        n = len(self.words)
        if not (len(self.upos) == len(self.heads) == len(self.deprels) == n):
            raise ParseError("column lists must have equal lengths")
        for i, h in enumerate(self.heads):
            if not 0 <= h <= n:
                raise ParseError(f"head {h} of word {i + 1} outside [0, {n}]")
            if h == i + 1:
                raise ParseError(f"word {i + 1} is its own head")

    def __len__(self) -> int:
        return len(self.words)


class EntitySpan(NamedTuple):
    type: str
    start: int
    end: int


@dataclass
class BioSentence:
    words: list[str]
    tags: list[str]
    spans: list[EntitySpan]


@dataclass
class NliExample:
    premise: str
    hypothesis: str
    label: str

    def __post_init__(self):
        if self.label not in NLI_LABELS:
            raise ParseError(f"label '{self.label}' not one of {NLI_LABELS}")


def read_conllu(path: str | Path) -> list[DepSentence]:
    """Parse CoNLL-U, keeping the ID/FORM/UPOS/HEAD/DEPREL columns of basic nodes."""
    path = Path(path)
    sentences: list[DepSentence] = []
    words: list[str] = []
    upos: list[str] = []
    heads: list[int] = []
    deprels: list[str] = []

    def close():
        nonlocal words, upos, heads, deprels
        if words:
            sentences.append(DepSentence(words, upos, heads, deprels))
            words, upos, heads, deprels = [], [], [], []

    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if line.startswith("#"):
                continue
            if not line.strip():
                close()
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise ParseError(
                    f"{path}:{lineno}: expected 10 columns, got {len(cols)}"
                )
            token_id = cols[0]
            if "-" in token_id or "." in token_id:
                continue  # multiword-token range or empty node
            try:
                head = int(cols[6])
            except ValueError:
                raise ParseError(
                    f"{path}:{lineno}: non-integer HEAD '{cols[6]}' on a basic node"
                ) from None
            words.append(cols[1])
            upos.append(cols[3])
            heads.append(head)
            deprels.append(cols[7])
    close()
    return sentences


def write_conllu(sentences: Iterable[DepSentence], path: str | Path) -> None:
    """Write sentences back out; unconsumed columns become underscores."""
    lines: list[str] = []
    for sent in sentences:
        for i, word in enumerate(sent.words):
            lines.append(
                "\t".join(
                    [
                        str(i + 1),
                        word,
                        "_",
                        sent.upos[i],
                        "_",
                        "_",
                        str(sent.heads[i]),
                        sent.deprels[i],
                        "_",
                        "_",
                    ]
                )
            )
        lines.append("")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def bio_to_spans(tags: Sequence[str], lenient: bool = True) -> tuple[list[EntitySpan], list[str]]:
    """Reconstruct entity spans from BIO tags.

    In lenient mode an I-TYPE with no matching open span starts a new span
    and is reported in the warnings list; strict mode raises instead.
    """
    spans: list[EntitySpan] = []
    warnings: list[str] = []
    open_type: str | None = None
    open_start = 0
    for i, tag in enumerate(tags):
        if tag == "O":
            if open_type is not None:
                spans.append(EntitySpan(open_type, open_start, i))
                open_type = None
            continue
        if len(tag) < 3 or tag[0] not in "BI" or tag[1] != "-":
            raise ParseError(f"malformed BIO tag '{tag}' at token {i}")
        marker, etype = tag[0], tag[2:]
        if marker == "B":
            if open_type is not None:
                spans.append(EntitySpan(open_type, open_start, i))
            open_type, open_start = etype, i
        else:  # I-
            if open_type == etype:
                continue
            message = f"I-{etype} at token {i} without an open {etype} span"
            if not lenient:
                raise ParseError(message)
            warnings.append(message)
            if open_type is not None:
                spans.append(EntitySpan(open_type, open_start, i))
            open_type, open_start = etype, i
    if open_type is not None:
        spans.append(EntitySpan(open_type, open_start, len(tags)))
    return spans, warnings


def spans_to_bio(spans: Sequence[EntitySpan], length: int) -> list[str]:
    tags = ["O"] * length
    for span in spans:
        tags[span.start] = f"B-{span.type}"
        for i in range(span.start + 1, span.end):
            tags[i] = f"I-{span.type}"
    return tags


def read_bio(path: str | Path) -> tuple[list[BioSentence], list[str]]:
    """Read two-column word/tag BIO data; returns sentences and lenient-mode warnings."""
    path = Path(path)
    sentences: list[BioSentence] = []
    warnings: list[str] = []
    words: list[str] = []
    tags: list[str] = []

    def close(lineno: int):
        nonlocal words, tags
        if words:
            try:
                spans, sent_warnings = bio_to_spans(tags, lenient=True)
            except ParseError as exc:
                raise ParseError(f"{path}: sentence ending at line {lineno}: {exc}") from None
            warnings.extend(sent_warnings)
            sentences.append(BioSentence(words, tags, spans))
            words, tags = [], []

    with path.open(encoding="utf-8") as fh:
        lineno = 0
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                close(lineno)
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 columns, got {len(cols)}")
            tag = cols[1]
            if tag != "O" and (len(tag) < 3 or tag[0] not in "BI" or tag[1] != "-"):
                raise ParseError(f"{path}:{lineno}: malformed BIO tag '{tag}'")
            words.append(cols[0])
            tags.append(tag)
        close(lineno)
    return sentences, warnings


def read_nli(path: str | Path) -> list[NliExample]:
    """Read premise/hypothesis/label rows from a 3-column TSV with a header line."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file (header line required)")
    examples: list[NliExample] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise ParseError(f"{path}:{lineno}: expected 3 columns, got {len(cols)}")
        try:
            examples.append(NliExample(premise=cols[0], hypothesis=cols[1], label=cols[2]))
        except ParseError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    return examples


def _check_aligned(gold: Sequence[DepSentence], pred: Sequence[DepSentence]) -> None:
    if len(gold) != len(pred):
        raise MetricError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise MetricError(
                f"sentence {i}: {len(g)} gold words vs {len(p)} predicted"
            )


def upos_accuracy(gold: Sequence[DepSentence], pred: Sequence[DepSentence]) -> float:
    """Fraction of words with the correct UPOS tag."""
    _check_aligned(gold, pred)
    total = correct = 0
    for g, p in zip(gold, pred):
        for gt, pt in zip(g.upos, p.upos):
            total += 1
            correct += gt == pt
    if total == 0:
        raise MetricError("no words to score")
    return correct / total


def uas_las(gold: Sequence[DepSentence], pred: Sequence[DepSentence]) -> tuple[float, float]:
    """Unlabeled and labeled attachment scores over all syntactic words."""
    _check_aligned(gold, pred)
    total = head_ok = both_ok = 0
    for g, p in zip(gold, pred):
        for i in range(len(g)):
            total += 1
            if g.heads[i] == p.heads[i]:
                head_ok += 1
                if g.deprels[i] == p.deprels[i]:
                    both_ok += 1
    if total == 0:
        raise MetricError("no words to score")
    return head_ok / total, both_ok / total


def entity_f1(
    gold_spans: Sequence[Sequence[EntitySpan]],
    pred_spans: Sequence[Sequence[EntitySpan]],
) -> tuple[float, float, float]:
    """Micro-averaged exact-match (type, start, end) precision/recall/F1."""
    if len(gold_spans) != len(pred_spans):
        raise MetricError(f"{len(gold_spans)} gold sentences vs {len(pred_spans)} predicted")
    tp = 0
    n_gold = sum(len(s) for s in gold_spans)
    n_pred = sum(len(s) for s in pred_spans)
    for g, p in zip(gold_spans, pred_spans):
        tp += len(set(g) & set(p))
    if n_gold == 0 and n_pred == 0:
        return 1.0, 1.0, 1.0
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    if precision + recall == 0.0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def nli_accuracy(gold: Sequence[str], pred: Sequence[str]) -> float:
    if len(gold) != len(pred):
        raise MetricError(f"{len(gold)} gold labels vs {len(pred)} predicted")
    if not gold:
        raise MetricError("no labels to score")
    return sum(g == p for g, p in zip(gold, pred)) / len(gold)
