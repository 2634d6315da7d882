"""Plain-text corpus handling: loading, document sampling, statistics, packing.

On-disk format: UTF-8, one paragraph per line, blank line (possibly several)
between documents. A document's byte size counts each paragraph's UTF-8 bytes
plus one separator byte per paragraph, i.e. the bytes of "para\\n" lines.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .tokenizer import Vocabulary, encode

# Stream tags for deriving independent PRNG substreams from one user seed.
_SAMPLE_STREAM = 0xD0C5


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Document:
    """One document: an ordered list of paragraph lines."""

    id: int
    paragraphs: tuple[str, ...]
    byte_size: int

    @staticmethod
    def from_paragraphs(doc_id: int, paragraphs: list[str]) -> "Document":
        size = sum(len(p.encode("utf-8")) + 1 for p in paragraphs)
        return Document(id=doc_id, paragraphs=tuple(paragraphs), byte_size=size)


@dataclass(frozen=True)
class DocumentStore:
    """Immutable ordered collection of documents."""

    documents: tuple[Document, ...]

    @property
    def doc_count(self) -> int:
        return len(self.documents)

    @property
    def total_bytes(self) -> int:
        return sum(d.byte_size for d in self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)


@dataclass(frozen=True)
class CorpusStats:
    total_bytes: int
    token_count: int
    doc_count: int
    tokens_per_doc_p5: int
    tokens_per_doc_p50: int
    tokens_per_doc_p95: int


# Published reference point for the same statistics computed on the 4GB
# Wikipedia pretraining corpus of the full-scale setup this toolkit
# miniaturizes; documentation only, never a test target.
WIKIPEDIA_REFERENCE_STATS = CorpusStats(
    total_bytes=4 * 10**9,
    token_count=990_000_000,
    doc_count=1_400_000,
    tokens_per_doc_p5=102,
    tokens_per_doc_p50=363,
    tokens_per_doc_p95=2530,
)


@dataclass(frozen=True)
class PackedSequence:
    """Model-ready token sequence: BOS + interior subwords + EOS.

    ``word_spans`` index into ``token_ids`` and partition the interior range
    [1, len-1) exactly. ``doc_id`` is the source document; sequences never mix
    documents.
    """

    token_ids: tuple[int, ...]
    word_spans: tuple[tuple[int, int], ...]
    doc_id: int


def load_corpus(path: str | Path) -> DocumentStore:
    """Read a paragraph-per-line corpus; blank lines separate documents.

    Consecutive blank lines collapse into a single boundary and trailing
    blank lines are ignored. Lines containing only whitespace count as blank.
    """
    path = Path(path)
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(f"{path}: invalid UTF-8 at byte offset {exc.start}") from exc
    documents: list[Document] = []
    current: list[str] = []
    for line in text.splitlines():
        if line.strip():
            current.append(line)
        elif current:
            documents.append(Document.from_paragraphs(len(documents), current))
            current = []
    if current:
        documents.append(Document.from_paragraphs(len(documents), current))
    return DocumentStore(documents=tuple(documents))


def save_corpus(store: DocumentStore, path: str | Path) -> None:
    """Write a store back in the paragraph-per-line format."""
    chunks = ["\n".join(doc.paragraphs) + "\n" for doc in store.documents]
    Path(path).write_text("\n".join(chunks), encoding="utf-8")


def sample_documents(store: DocumentStore, target_bytes: int, seed: int) -> DocumentStore:
    """Draw whole documents in seeded-shuffled order until `target_bytes` is reached.

    The output byte total lies in [target_bytes, target_bytes + max doc size).
    Raises when the store holds fewer bytes than requested.
    """
    if target_bytes <= 0:
        raise CorpusError(f"target_bytes must be positive, got {target_bytes}")
    available = store.total_bytes
    if available < target_bytes:
        raise CorpusError(
            f"store holds {available} bytes, fewer than the requested {target_bytes}"
        )
    rng = np.random.default_rng((seed, _SAMPLE_STREAM))
    order = rng.permutation(store.doc_count)
    picked: list[Document] = []
    total = 0
    for idx in order:
        picked.append(store.documents[idx])
        total += store.documents[idx].byte_size
        if total >= target_bytes:
            break
    return DocumentStore(documents=tuple(picked))


def _nearest_rank(sorted_values: list[int], percentile: float) -> int:
    rank = int(np.ceil(percentile / 100.0 * len(sorted_values)))
    rank = max(rank, 1)
    return sorted_values[rank - 1]


def corpus_stats(store: DocumentStore, vocab: Vocabulary) -> CorpusStats:
    """Subword-token statistics with nearest-rank tokens-per-document percentiles."""
    if store.doc_count == 0:
        raise CorpusError("cannot compute statistics for an empty store")
    per_doc = [
        sum(len(encode(vocab, p).ids) for p in doc.paragraphs) for doc in store.documents
    ]
    ordered = sorted(per_doc)
    return CorpusStats(
        total_bytes=store.total_bytes,
        token_count=sum(per_doc),
        doc_count=store.doc_count,
        tokens_per_doc_p5=_nearest_rank(ordered, 5),
        tokens_per_doc_p50=_nearest_rank(ordered, 50),
        tokens_per_doc_p95=_nearest_rank(ordered, 95),
    )


def pack_sequences(
    store: DocumentStore, vocab: Vocabulary, max_len: int
) -> Iterator[PackedSequence]:
    """Greedily pack tokenized paragraphs into BOS/EOS-framed sequences.

    A sequence holds at most max_len - 2 interior tokens and only complete
    paragraphs, except that a single paragraph longer than the budget is cut
    into successive full-budget chunks (remainder last). Sequences never
    cross document boundaries.
    """
    if max_len < 8:
        raise CorpusError(f"max_len must be at least 8, got {max_len}")
    budget = max_len - 2
    for doc in store.documents:
        interior: list[int] = []
        spans: list[tuple[int, int]] = []

        def flush():
            nonlocal interior, spans
            if interior:
                token_ids = (vocab.bos_id, *interior, vocab.eos_id)
                shifted = tuple((s + 1, e + 1) for s, e in spans)
                interior, spans = [], []
                return PackedSequence(token_ids=token_ids, word_spans=shifted, doc_id=doc.id)
            return None

        for paragraph in doc.paragraphs:
            seq = encode(vocab, paragraph)
            if not seq.ids:
                continue
            if len(seq.ids) > budget:
                out = flush()
                if out:
                    yield out
                for chunk_start in range(0, len(seq.ids), budget):
                    chunk_end = min(chunk_start + budget, len(seq.ids))
                    interior = list(seq.ids[chunk_start:chunk_end])
                    spans = _clip_spans(seq.word_spans, chunk_start, chunk_end)
                    if chunk_end < len(seq.ids):
                        out = flush()
                        if out:
                            yield out
                # the remainder chunk stays open so later paragraphs may join
                continue
            if len(interior) + len(seq.ids) > budget:
                out = flush()
                if out:
                    yield out
            offset = len(interior)
            interior.extend(seq.ids)
            spans.extend((s + offset, e + offset) for s, e in seq.word_spans)
        out = flush()
        if out:
            yield out


def _clip_spans(
    spans: list[tuple[int, int]], lo: int, hi: int
) -> list[tuple[int, int]]:
    """Intersect word spans with [lo, hi) and rebase to a lo origin."""
    out = []
    for s, e in spans:
        cs, ce = max(s, lo), min(e, hi)
        if cs < ce:
            out.append((cs - lo, ce - lo))
    return out
