"""Dynamic masking for MLM training: subword and whole-word strategies.

Both strategies select 15% of candidates (tokens or words) by independent
Bernoulli draws and then corrupt each selected token independently:
80% become MASK, 10% stay unchanged, 10% become a uniformly random
non-special vocabulary id. Labels carry the original id at every selected
position and IGNORE everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import PackedSequence
from .tokenizer import NUM_SPECIALS, Vocabulary

IGNORE_INDEX = -100


class MaskingError(ValueError):
    pass


@dataclass(frozen=True)
class MaskRates:
    select: float = 0.15
    mask: float = 0.8
    keep: float = 0.1
    random: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.select <= 1.0:
            raise MaskingError(f"select rate {self.select} outside [0, 1]")
        if abs(self.mask + self.keep + self.random - 1.0) > 1e-9:
            raise MaskingError("mask + keep + random rates must sum to 1")


@dataclass
class MaskedExample:
    input_ids: np.ndarray
    labels: np.ndarray
    selected_mask: np.ndarray


@dataclass
class MaskedBatch:
    """Padded batch: PAD-filled inputs, IGNORE-filled labels, boolean mask."""

    input_ids: np.ndarray
    labels: np.ndarray
    attention_mask: np.ndarray


def _corrupt(
    ids: np.ndarray,
    selected: np.ndarray,
    vocab: Vocabulary,
    rng: np.random.Generator,
    rates: MaskRates,
) -> MaskedExample:
    labels = np.full(ids.shape, IGNORE_INDEX, dtype=np.int64)
    input_ids = ids.copy()
    positions = np.flatnonzero(selected)
    labels[positions] = ids[positions]
    if positions.size:
        u = rng.random(positions.size)
        mask_pos = positions[u < rates.mask]
        random_pos = positions[u >= rates.mask + rates.keep]
        input_ids[mask_pos] = vocab.mask_id
        if random_pos.size:
            input_ids[random_pos] = rng.integers(
                NUM_SPECIALS, vocab.size, size=random_pos.size
            )
    return MaskedExample(input_ids=input_ids, labels=labels, selected_mask=selected)


def _maskable(seq: PackedSequence) -> np.ndarray:
    ids = np.asarray(seq.token_ids, dtype=np.int64)
    maskable = np.zeros(ids.shape, dtype=bool)
    maskable[1:-1] = True  # interior only: BOS and EOS framed, no PAD yet
    if not maskable.any():
        raise MaskingError("sequence has no maskable positions")
    return maskable


def mask_subword(
    seq: PackedSequence, rng: np.random.Generator, rates: MaskRates = MaskRates(), *, vocab: Vocabulary
) -> MaskedExample:
    """Independent per-token Bernoulli selection at `rates.select`."""
    ids = np.asarray(seq.token_ids, dtype=np.int64)
    maskable = _maskable(seq)
    selected = maskable & (rng.random(ids.size) < rates.select)
    return _corrupt(ids, selected, vocab, rng, rates)


def mask_whole_word(
    seq: PackedSequence, rng: np.random.Generator, rates: MaskRates = MaskRates(), *, vocab: Vocabulary
) -> MaskedExample:
    """Per-word Bernoulli selection; all subwords of a chosen word are candidates."""
    ids = np.asarray(seq.token_ids, dtype=np.int64)
    _maskable(seq)
    selected = np.zeros(ids.size, dtype=bool)
    if seq.word_spans:
        word_draw = rng.random(len(seq.word_spans)) < rates.select
        for (start, end), hit in zip(seq.word_spans, word_draw):
            if hit:
                selected[start:end] = True
    return _corrupt(ids, selected, vocab, rng, rates)


def make_batch(
    examples: list[MaskedExample], pad_id: int, ignore_id: int = IGNORE_INDEX
) -> MaskedBatch:
    """Right-pad examples to a rectangular batch."""
    if not examples:
        raise MaskingError("cannot batch an empty example list")
    width = max(ex.input_ids.size for ex in examples)
    n = len(examples)
    input_ids = np.full((n, width), pad_id, dtype=np.int64)
    labels = np.full((n, width), ignore_id, dtype=np.int64)
    attention = np.zeros((n, width), dtype=bool)
    for row, ex in enumerate(examples):
        k = ex.input_ids.size
        input_ids[row, :k] = ex.input_ids
        labels[row, :k] = ex.labels
        attention[row, :k] = True
    return MaskedBatch(input_ids=input_ids, labels=labels, attention_mask=attention)


def masking_rng(seed: int, epoch: int, sequence_index: int) -> np.random.Generator:
    """Independent substream per (epoch, sequence index): dynamic masking."""
    return np.random.default_rng((seed, 0x3A5C, epoch, sequence_index))
