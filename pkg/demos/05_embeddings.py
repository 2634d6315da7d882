"""Frozen feature-based word embeddings.

Extracts contextual word vectors from a (randomly initialized) encoder by
averaging each subword over the last four transformer layers and then
averaging a word's subwords. Also shows first-subword pooling, the
representation fine-tuned task heads consume.
"""

import numpy as np

from mlmkit import (
    ModelConfig,
    embed_words,
    encode,
    first_subword_reps,
    forward,
    init_params,
    train_vocab,
)
from mlmkit.corpus import Document, DocumentStore
from mlmkit.masking import IGNORE_INDEX, MaskedBatch

text = "le chat ouvre la porte verte"
store = DocumentStore(documents=(Document.from_paragraphs(0, [text]),))
vocab = train_vocab(store, vocab_size=40, seed=0)

# Feature extraction needs at least four transformer layers.
config = ModelConfig(
    n_layers=4, d_model=16, n_heads=2, d_ff=32,
    vocab_size=vocab.size, max_positions=32, dropout=0.0,
)
params = init_params(config, seed=1)

seq = encode(vocab, text)
ids = np.array([[vocab.bos_id, *seq.ids, vocab.eos_id]])
batch = MaskedBatch(
    input_ids=ids,
    labels=np.full_like(ids, IGNORE_INDEX),
    attention_mask=np.ones_like(ids, dtype=bool),
)
result = forward(params, config, batch)

# Per-sentence views: one (length x d_model) grid per layer, embedding first.
hidden = [h[0] for h in result.hidden_states]
print(f"hidden states: {len(hidden)} grids of shape {hidden[0].shape}")

spans = [(s + 1, e + 1) for s, e in seq.word_spans]  # shift past BOS
vectors = embed_words(hidden, spans)
print(f"\n{len(seq.source_words)} words -> embedding matrix {vectors.shape}")
for word, vec in zip(seq.source_words, vectors):
    print(f"  {word:8s} first dims: {np.round(vec[:4], 3)}")

pooled = first_subword_reps(hidden, spans)
print(f"\nfirst-subword pooling picks final-layer rows: {pooled.shape}")
print("rows equal final layer at span starts:",
      all(np.array_equal(pooled[i], hidden[-1][s]) for i, (s, _) in enumerate(spans)))
