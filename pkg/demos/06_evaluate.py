"""The four evaluation metrics on small worked examples.

UPOS accuracy, unlabeled/labeled attachment scores, exact-match entity F1
over BIO spans, and classification accuracy, each on inputs small enough to
verify by hand.
"""

from mlmkit.evaluation import (
    DepSentence,
    EntitySpan,
    bio_to_spans,
    entity_f1,
    nli_accuracy,
    uas_las,
    upos_accuracy,
)

# Part-of-speech tagging: fraction of correctly tagged words.
gold = [DepSentence(["le", "chat", "dort", "bien"],
                    ["DET", "NOUN", "VERB", "ADV"],
                    [2, 3, 0, 3],
                    ["det", "nsubj", "root", "advmod"])]
pred = [DepSentence(["le", "chat", "dort", "bien"],
                    ["DET", "NOUN", "VERB", "ADJ"],   # one tag wrong
                    [2, 3, 0, 2],                      # one head wrong
                    ["det", "nsubj", "root", "advmod"])]
print(f"UPOS accuracy: {upos_accuracy(gold, pred):.4f}  (3 of 4 tags right)")

# Attachment scores: UAS counts correct heads, LAS additionally requires the
# correct relation label. Every syntactic word counts.
uas, las = uas_las(gold, pred)
print(f"UAS: {uas:.4f}  LAS: {las:.4f}  (word 4 attaches wrongly)")

# Entity F1 uses exact (type, start, end) matches, micro-averaged.
gold_tags = ["B-PER", "I-PER", "O", "B-LOC"]
pred_tags = ["B-PER", "I-PER", "O", "B-ORG"]
gold_spans, _ = bio_to_spans(gold_tags)
pred_spans, _ = bio_to_spans(pred_tags)
print(f"\ngold spans: {gold_spans}")
print(f"pred spans: {pred_spans}")
p, r, f1 = entity_f1([gold_spans], [pred_spans])
print(f"precision {p:.4f}  recall {r:.4f}  F1 {f1:.4f}")

# A lenient reader repairs an I- tag with no open span and reports it.
spans, warnings = bio_to_spans(["O", "I-LOC", "O"])
print(f"\nlenient BIO repair: spans {spans}, warnings {warnings}")

# Inference accuracy over three-way labels.
acc = nli_accuracy(
    ["entailment", "neutral", "contradiction", "entailment"],
    ["entailment", "neutral", "neutral", "entailment"],
)
print(f"\nNLI accuracy: {acc:.4f}  (3 of 4)")
