"""Corpus handling and subword tokenization.

Builds a small paragraph-per-line corpus, trains a BPE vocabulary on it,
and walks through encoding, alignment spans, decoding, document-level
sampling, and corpus statistics.
"""

import tempfile
from pathlib import Path

from mlmkit import (
    corpus_stats,
    decode,
    encode,
    load_corpus,
    sample_documents,
    save_vocab,
    train_vocab,
)

workdir = Path(tempfile.mkdtemp(prefix="mlmkit-demo-"))

# One paragraph per line; a blank line separates documents.
corpus_path = workdir / "corpus.txt"
corpus_path.write_text(
    "le chat ouvre la porte\n"
    "la porte reste ouverte\n"
    "\n"
    "un arbre vert pousse vite\n"
    "le chat voit un arbre\n"
    "\n"
    "la table est grande et verte\n"
)

store = load_corpus(corpus_path)
print(f"documents: {store.doc_count}, bytes: {store.total_bytes}")

# Train a byte-pair-encoding vocabulary. The size budget covers the five
# special tokens, the base alphabet, and however many merges fit.
vocab = train_vocab(store, vocab_size=80, max_sentences=1000, seed=0)
print(f"vocabulary: {vocab.size} pieces, {len(vocab.merges)} merges")
print("first merges:", vocab.merges[:5])

save_vocab(vocab, workdir / "vocab.spv")
print("saved to", workdir / "vocab.spv")

# Encoding keeps one (start, end) subword span per whitespace word.
seq = encode(vocab, "le chat voit la porte")
print("\nids:   ", seq.ids)
print("spans: ", seq.word_spans)
for word, (s, e) in zip(seq.source_words, seq.word_spans):
    print(f"  {word!r} -> pieces {[vocab.pieces[i] for i in seq.ids[s:e]]}")

# Decoding restores the text up to whitespace normalization.
print("\ndecoded:", decode(vocab, seq.ids))

# Document-level sampling draws whole documents in seeded order until the
# byte budget is reached.
sampled = sample_documents(store, target_bytes=40, seed=7)
print(f"\nsampled {sampled.doc_count} documents, {sampled.total_bytes} bytes")

# Statistics use nearest-rank percentiles of per-document token counts.
stats = corpus_stats(store, vocab)
print(
    f"tokens: {stats.token_count}, tokens/doc percentiles: "
    f"{stats.tokens_per_doc_p5}/{stats.tokens_per_doc_p50}/{stats.tokens_per_doc_p95}"
)
