"""Dynamic masking: independent subword vs whole-word strategies.

Packs a corpus into training sequences and corrupts them both ways,
showing the 15% selection rate, the 80/10/10 corruption split, and the
all-or-none property of whole-word masking.
"""

import numpy as np

from mlmkit import (
    MaskRates,
    make_batch,
    mask_subword,
    mask_whole_word,
    pack_sequences,
    train_vocab,
)
from mlmkit.masking import masking_rng

from demo_data import patterned_demo_store

store = patterned_demo_store(n_paragraphs=200, seed=0)
vocab = train_vocab(store, vocab_size=90, seed=0)
sequences = list(pack_sequences(store, vocab, max_len=48))
print(f"{len(sequences)} packed sequences (<= 48 tokens each)")

# Each (epoch, sequence) pair owns its own PRNG substream: masking the same
# sequence in two epochs draws two different corruption patterns.
seq = sequences[0]
epoch0 = mask_whole_word(seq, masking_rng(seed=1, epoch=0, sequence_index=0), vocab=vocab)
epoch1 = mask_whole_word(seq, masking_rng(seed=1, epoch=1, sequence_index=0), vocab=vocab)
print("selection differs across epochs:", not np.array_equal(epoch0.selected_mask, epoch1.selected_mask))

# Measure the realized selection rate and corruption split over many draws.
rates = MaskRates()  # select 0.15, then 0.80 MASK / 0.10 keep / 0.10 random
selected = total = masked = kept = randomized = 0
for i, s in enumerate(sequences * 40):
    rng = masking_rng(seed=2, epoch=0, sequence_index=i)
    ex = mask_subword(s, rng, rates, vocab=vocab)
    original = np.asarray(s.token_ids)
    sel = ex.selected_mask
    selected += int(sel.sum())
    total += len(s.token_ids) - 2
    masked += int((ex.input_ids[sel] == vocab.mask_id).sum())
    kept += int((ex.input_ids[sel] == original[sel]).sum())
    randomized += int(
        ((ex.input_ids[sel] != original[sel]) & (ex.input_ids[sel] != vocab.mask_id)).sum()
    )
print(f"\nsubword selection rate: {selected / total:.4f} (target 0.15)")
print(
    f"corruption split: {masked / selected:.3f} MASK / {kept / selected:.3f} keep / "
    f"{randomized / selected:.3f} random (target 0.80/0.10/0.10)"
)

# Whole-word masking never splits a word: all of its subwords are selected
# together or not at all.
violations = 0
for i, s in enumerate(sequences * 5):
    ex = mask_whole_word(s, masking_rng(seed=3, epoch=0, sequence_index=i), vocab=vocab)
    for start, end in s.word_spans:
        hits = ex.selected_mask[start:end]
        violations += int(hits.any() and not hits.all())
print(f"\nwhole-word partial selections: {violations}")

# Batching pads to the longest row; labels carry IGNORE at non-selected and
# padded positions, and the attention mask marks real tokens.
examples = [
    mask_whole_word(s, masking_rng(4, 0, i), vocab=vocab) for i, s in enumerate(sequences[:6])
]
batch = make_batch(examples, vocab.pad_id)
print(f"\nbatch shape: {batch.input_ids.shape}, real tokens: {int(batch.attention_mask.sum())}")
