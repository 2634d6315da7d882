"""Fine-tuning a biaffine dependency parser head.

Starts from a randomly initialized tiny encoder, fine-tunes end to end on a
20-sentence toy treebank, and decodes trees both greedily and with the
maximum-spanning-arborescence mode.
"""

import numpy as np

from mlmkit import (
    Checkpoint,
    ModelConfig,
    OptimHyper,
    OptimState,
    biaffine_scores,
    decode_tree,
    finetune,
    first_subword_reps,
    forward,
    init_params,
    make_task_dataset,
    train_vocab,
    vocab_hash,
)
from mlmkit.evaluation import DepSentence
from mlmkit.masking import IGNORE_INDEX, MaskedBatch
from mlmkit.corpus import Document, DocumentStore

from demo_data import demo_tagged_sentences

# A toy treebank: deterministic chain trees over a small lexicon.
sentences = demo_tagged_sentences(20, seed=3)
words_text = " ".join(sorted({w for s in sentences for w in s.words}))
store = DocumentStore(documents=(Document.from_paragraphs(0, [words_text]),))
vocab = train_vocab(store, vocab_size=120, seed=0)

config = ModelConfig(
    n_layers=2, d_model=32, n_heads=4, d_ff=64,
    vocab_size=vocab.size, max_positions=64, dropout=0.0,
)
params = init_params(config, seed=5)
checkpoint = Checkpoint(
    config=config, params=params, optim=OptimState.zeros(params),
    hyper=OptimHyper(), tokenizer_hash=vocab_hash(vocab), step=0, seed=0,
)

task = make_task_dataset("parse", sentences, sentences)
print(f"treebank: {len(task.train)} sentences, {len(task.labels)} relation labels")

# Grid search over (learning rate, batch size); each cell tracks its best
# dev epoch, and the best cell overall wins.
result = finetune(
    task, checkpoint, vocab,
    grid=[(1e-3, 8), (2e-3, 8)],
    max_epochs=60, seed=7,
)
for cell in result.cells:
    print(f"lr={cell.lr:g} batch={cell.batch_size}: best epoch {cell.best_epoch}, "
          f"LAS {cell.dev_score:.4f}")
print(f"best dev LAS: {result.dev_score:.4f}")

# Decode one sentence with the fine-tuned head.
sent = sentences[0]
from mlmkit.tokenizer import encode_words

seq = encode_words(vocab, sent.words)
ids = np.array([[vocab.bos_id, *seq.ids, vocab.eos_id]])
batch = MaskedBatch(
    input_ids=ids,
    labels=np.full_like(ids, IGNORE_INDEX),
    attention_mask=np.ones_like(ids, dtype=bool),
)
out = forward(result.checkpoint.params, config, batch)
hidden = [h[0] for h in out.hidden_states]
spans = [(s + 1, e + 1) for s, e in seq.word_spans]
reps = first_subword_reps(hidden, spans)
scores = biaffine_scores(reps, result.checkpoint.head)

greedy = decode_tree(scores)
mst = decode_tree(scores, well_formed=True)
print(f"\nsentence: {' '.join(sent.words)}")
print(f"gold heads:   {sent.heads}")
print(f"greedy heads: {greedy.heads} (cycles: {greedy.cycles})")
print(f"MST heads:    {mst.heads}")
print(f"labels:       {[task.labels[i] for i in mst.labels]}")
