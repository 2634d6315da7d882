"""Byte-pair-encoding subword tokenizer with word-boundary alignment.

Words are whitespace-delimited; each word's symbol sequence starts with the
boundary marker U+2581, so learned merges fuse the marker into word-initial
pieces and decoding can restore spaces. Because the marker only ever sits at
the front of a word's symbols, it never appears piece-internally. Encoding
keeps a (start, end) subword span per source word, which is what whole-word
masking and first-subword pooling consume downstream.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BOUNDARY = "▁"

BOS_ID = 0
PAD_ID = 1
EOS_ID = 2
UNK_ID = 3
MASK_ID = 4

SPECIAL_PIECES = ("<s>", "<pad>", "</s>", "<unk>", "<mask>")
NUM_SPECIALS = len(SPECIAL_PIECES)

_FILE_MAGIC = "bpe-vocab"
_FILE_VERSION = 1


class VocabularyError(ValueError):
    pass


class DecodeError(ValueError):
    pass


@dataclass
class TokenizedSequence:
    """Subword ids plus per-word alignment spans.

    ``word_spans[i]`` is the half-open range of ``ids`` produced by
    ``source_words[i]``; spans are contiguous and cover all of ``ids``.
    """

    ids: list[int]
    word_spans: list[tuple[int, int]]
    source_words: list[str]


@dataclass
class Vocabulary:
    """Trained subword inventory: pieces, merge rules, fixed special ids."""

    pieces: list[str]
    merges: list[tuple[str, str]]
    bos_id: int = BOS_ID
    pad_id: int = PAD_ID
    eos_id: int = EOS_ID
    unk_id: int = UNK_ID
    mask_id: int = MASK_ID
    _piece_to_id: dict[str, int] = field(repr=False, default_factory=dict)
    _merge_rank: dict[tuple[str, str], int] = field(repr=False, default_factory=dict)
    _word_cache: dict[str, tuple[int, ...]] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if self.pieces[:NUM_SPECIALS] != list(SPECIAL_PIECES):
            raise VocabularyError("first pieces must be the special tokens")
        self._piece_to_id = {p: i for i, p in enumerate(self.pieces)}
        if len(self._piece_to_id) != len(self.pieces):
            raise VocabularyError("duplicate pieces in vocabulary")
        self._merge_rank = {pair: r for r, pair in enumerate(self.merges)}

    @property
    def size(self) -> int:
        return len(self.pieces)

    def piece_id(self, piece: str) -> int:
        return self._piece_to_id.get(piece, self.unk_id)

    def is_special(self, token_id: int) -> bool:
        return token_id < NUM_SPECIALS

    def segment_word(self, word: str) -> tuple[int, ...]:
        """Subword ids for one whitespace-free word (cached)."""
        cached = self._word_cache.get(word)
        if cached is not None:
            return cached
        symbols = _word_symbols(word)
        for pair in self.merges:
            if len(symbols) < 2:
                break
            merged = pair[0] + pair[1]
            i = 0
            out = []
            while i < len(symbols):
                if (
                    i + 1 < len(symbols)
                    and symbols[i] == pair[0]
                    and symbols[i + 1] == pair[1]
                ):
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            symbols = out
        ids = tuple(self._piece_to_id.get(s, self.unk_id) for s in symbols)
        self._word_cache[word] = ids
        return ids


def _word_symbols(word: str) -> list[str]:
    """Initial symbol sequence: the boundary marker then the characters.

    The marker is always at index 0 and pair counting is per word, so every
    merge containing it keeps it piece-initial.
    """
    return [BOUNDARY] + list(word)


def _word_symbol_counts(lines: Iterable[str]) -> Counter:
    counts: Counter = Counter()
    for line in lines:
        for word in line.split():
            counts[word] += 1
    return counts


def train_vocab(
    store,
    vocab_size: int,
    max_sentences: int = 10_000_000,
    seed: int = 0,
) -> Vocabulary:
    """Learn a BPE vocabulary from at most `max_sentences` sampled lines.

    Merges are chosen greedily by descending adjacent-pair frequency over the
    sampled words; frequency ties break to the lexicographically smallest
    pair, so training is fully deterministic for a given seed and sample.
    """
    lines = [p for doc in store.documents for p in doc.paragraphs]
    if len(lines) > max_sentences:
        rng = np.random.default_rng((seed, 0xB9E))
        chosen = rng.choice(len(lines), size=max_sentences, replace=False)
        lines = [lines[i] for i in sorted(chosen)]

    word_counts = _word_symbol_counts(lines)
    symbol_seqs: dict[str, list[str]] = {w: _word_symbols(w) for w in word_counts}
    alphabet = sorted({s for seq in symbol_seqs.values() for s in seq})
    min_size = NUM_SPECIALS + len(alphabet)
    if vocab_size < min_size:
        raise VocabularyError(
            f"vocab_size {vocab_size} too small: need at least {min_size} "
            f"({NUM_SPECIALS} specials + {len(alphabet)} alphabet symbols)"
        )

    pieces = list(SPECIAL_PIECES) + alphabet
    merges: list[tuple[str, str]] = []
    while len(pieces) < vocab_size:
        pair_counts: Counter = Counter()
        for word, seq in symbol_seqs.items():
            n = word_counts[word]
            for a, b in zip(seq, seq[1:]):
                pair_counts[(a, b)] += n
        if not pair_counts:
            break
        best = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        merged = best[0] + best[1]
        pieces.append(merged)
        for word, seq in symbol_seqs.items():
            if len(seq) < 2:
                continue
            i = 0
            out = []
            while i < len(seq):
                if i + 1 < len(seq) and seq[i] == best[0] and seq[i + 1] == best[1]:
                    out.append(merged)
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            symbol_seqs[word] = out
    return Vocabulary(pieces=pieces, merges=merges)


def encode(vocab: Vocabulary, text: str) -> TokenizedSequence:
    """Segment `text` into subword ids with per-word alignment spans."""
    return encode_words(vocab, text.split())


def encode_words(vocab: Vocabulary, words: Sequence[str]) -> TokenizedSequence:
    """Like `encode` but over an explicit word list (no whitespace splitting)."""
    ids: list[int] = []
    spans: list[tuple[int, int]] = []
    for word in words:
        seg = vocab.segment_word(word)
        spans.append((len(ids), len(ids) + len(seg)))
        ids.extend(seg)
    return TokenizedSequence(ids=ids, word_spans=spans, source_words=list(words))


def decode(vocab: Vocabulary, ids: Sequence[int]) -> str:
    """Inverse of encode up to whitespace normalization; specials stripped."""
    parts: list[str] = []
    for pos, token_id in enumerate(ids):
        if not 0 <= token_id < vocab.size:
            raise DecodeError(f"id {token_id} at position {pos} out of range (vocab size {vocab.size})")
        if vocab.is_special(token_id):
            continue
        parts.append(vocab.pieces[token_id])
    return "".join(parts).replace(BOUNDARY, " ").strip(" ")


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    """Versioned text format: header, one piece per line, then merge rules."""
    path = Path(path)
    lines = [
        f"{_FILE_MAGIC} v{_FILE_VERSION} size={vocab.size} "
        f"bos={vocab.bos_id} pad={vocab.pad_id} eos={vocab.eos_id} "
        f"unk={vocab.unk_id} mask={vocab.mask_id}"
    ]
    lines.extend(vocab.pieces)
    lines.append(f"merges {len(vocab.merges)}")
    lines.extend(f"{a} {b}" for a, b in vocab.merges)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocab(path: str | Path) -> Vocabulary:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise VocabularyError(f"{path}: empty vocabulary file")
    header = lines[0].split()
    if len(header) != 8 or header[0] != _FILE_MAGIC:
        raise VocabularyError(f"{path}: not a vocabulary file")
    if header[1] != f"v{_FILE_VERSION}":
        raise VocabularyError(f"{path}: unsupported format version {header[1]}")
    fields = dict(kv.split("=") for kv in header[2:])
    size = int(fields["size"])
    pieces = lines[1 : 1 + size]
    if len(pieces) != size:
        raise VocabularyError(f"{path}: truncated piece list")
    merge_header = lines[1 + size].split()
    if merge_header[0] != "merges":
        raise VocabularyError(f"{path}: missing merges section")
    n_merges = int(merge_header[1])
    merge_lines = lines[2 + size : 2 + size + n_merges]
    if len(merge_lines) != n_merges:
        raise VocabularyError(f"{path}: truncated merges section")
    merges = []
    for ln in merge_lines:
        a, b = ln.split(" ")
        merges.append((a, b))
    return Vocabulary(pieces=pieces, merges=merges)


def vocab_hash(vocab: Vocabulary) -> str:
    """Stable content hash used for checkpoint compatibility checks."""
    import hashlib

    h = hashlib.sha256()
    for p in vocab.pieces:
        h.update(p.encode("utf-8"))
        h.update(b"\x00")
    for a, b in vocab.merges:
        h.update(a.encode("utf-8"))
        h.update(b"\x01")
        h.update(b.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()
