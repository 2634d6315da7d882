"""Desk-scale masked-language-model toolkit.

Subword tokenization, document-level corpus handling, dynamic (whole-word)
masking, a bidirectional Transformer encoder with exact gradients, Adam
pretraining with warmup + polynomial decay and resumable checkpoints, task
fine-tuning heads (tagging, biaffine parsing, pair classification), frozen
embedding extraction, and the standard evaluation metrics.
"""

__version__ = "0.1.0"

from .corpus import (
    CorpusStats,
    Document,
    DocumentStore,
    PackedSequence,
    corpus_stats,
    load_corpus,
    pack_sequences,
    sample_documents,
)
from .evaluation import (
    DepSentence,
    EntitySpan,
    NliExample,
    entity_f1,
    nli_accuracy,
    read_bio,
    read_conllu,
    read_nli,
    uas_las,
    upos_accuracy,
)
from .finetune import (
    ParseScores,
    TaskDataset,
    biaffine_scores,
    decode_tree,
    embed_words,
    finetune,
    first_subword_reps,
    make_task_dataset,
    pair_classify_head,
    token_classify_head,
)
from .masking import (
    IGNORE_INDEX,
    MaskRates,
    MaskedBatch,
    MaskedExample,
    make_batch,
    mask_subword,
    mask_whole_word,
)
from .model import (
    BASE_CONFIG,
    LARGE_CONFIG,
    ModelConfig,
    count_params,
    forward,
    init_params,
    mlm_loss_and_grads,
)
from .tokenizer import (
    TokenizedSequence,
    Vocabulary,
    decode,
    encode,
    encode_words,
    load_vocab,
    save_vocab,
    train_vocab,
    vocab_hash,
)
from .training import (
    Checkpoint,
    OptimHyper,
    OptimState,
    PretrainRun,
    adam_step,
    load_checkpoint,
    lr_at,
    pretrain,
    save_checkpoint,
)

__all__ = [name for name in dir() if not name.startswith("_")]
