"""Task heads over the encoder, tree decoding, and the fine-tuning loop.

Heads: per-word linear classification over first-subword representations,
a biaffine arc/label scorer with a learned root vector at head index 0, and
a two-layer pair classifier over the BOS representation. Frozen feature
extraction averages each subword over the last four transformer layers and
then averages a word's subwords. Fine-tuning runs a (learning rate, batch
size) grid end to end with Adam at a fixed rate, selecting the best dev
epoch per cell and the best cell overall.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .evaluation import (
    DepSentence,
    NLI_LABELS,
    bio_to_spans,
    entity_f1,
    nli_accuracy,
    spans_to_bio,
    uas_las,
    upos_accuracy,
)
from .model import ModelConfig, Parameters, _forward_graph, tensorize
from .tokenizer import Vocabulary, encode, encode_words, vocab_hash
from .training import Checkpoint, OptimHyper, OptimState, adam_step

TASK_KINDS = ("pos", "parse", "ner", "nli")

# Default search grid when the caller does not supply one.
DEFAULT_GRID = [(lr, bs) for lr in (1e-5, 3e-5, 5e-5) for bs in (16, 32)]

_HEAD_STREAM = 0x4EAD
_SHUFFLE_STREAM = 0x5F1E
_DROP_STREAM = 0xDF01


class FinetuneError(ValueError):
    pass


# -- word representations ------------------------------------------------------


def first_subword_reps(
    hidden_states: Sequence[np.ndarray], word_spans: Sequence[tuple[int, int]]
) -> np.ndarray:
    """Final-layer vector at each word's first subword position."""
    if not word_spans:
        d = hidden_states[-1].shape[-1]
        return np.zeros((0, d))
    starts = np.array([s for s, _ in word_spans], dtype=np.int64)
    return hidden_states[-1][starts]


def embed_words(
    hidden_states: Sequence[np.ndarray], word_spans: Sequence[tuple[int, int]]
) -> np.ndarray:
    """Frozen features: mean over the last four layers, then over each word's subwords."""
    n_layers = len(hidden_states) - 1
    if n_layers < 4:
        raise FinetuneError(f"need at least 4 transformer layers, model has {n_layers}")
    stacked = np.mean([hidden_states[-k] for k in (1, 2, 3, 4)], axis=0)
    reps = [stacked[start:end].mean(axis=0) for start, end in word_spans]
    d = hidden_states[-1].shape[-1]
    return np.array(reps).reshape(len(word_spans), d)


# -- heads ---------------------------------------------------------------------


@dataclass
class ParseScores:
    """Arc and label score grids; index 0 is the virtual root on both axes."""

    arc_scores: np.ndarray  # (n+1, n+1): row = dependent, column = head
    label_scores: np.ndarray  # (n+1, n+1, L)


def _normal(rng: np.random.Generator, shape: tuple[int, ...], std: float = 0.02) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


def init_token_head(d_model: int, n_labels: int, seed: int) -> Parameters:
    rng = np.random.default_rng((seed, _HEAD_STREAM, 1))
    return {"w": _normal(rng, (d_model, n_labels)), "b": np.zeros(n_labels)}


def init_pair_head(d_model: int, seed: int, n_labels: int = 3) -> Parameters:
    rng = np.random.default_rng((seed, _HEAD_STREAM, 2))
    return {
        "w1": _normal(rng, (d_model, d_model)),
        "b1": np.zeros(d_model),
        "w2": _normal(rng, (d_model, n_labels)),
        "b2": np.zeros(n_labels),
    }


def init_biaffine_head(
    d_model: int,
    n_labels: int,
    seed: int,
    arc_dim: int | None = None,
    label_dim: int | None = None,
) -> Parameters:
    arc_dim = arc_dim if arc_dim is not None else max(1, d_model // 2)
    label_dim = label_dim if label_dim is not None else max(1, d_model // 4)
    rng = np.random.default_rng((seed, _HEAD_STREAM, 3))
    return {
        "root_vec": _normal(rng, (d_model,)),
        "arc_dep_w": _normal(rng, (d_model, arc_dim)),
        "arc_dep_b": np.zeros(arc_dim),
        "arc_head_w": _normal(rng, (d_model, arc_dim)),
        "arc_head_b": np.zeros(arc_dim),
        "arc_U": _normal(rng, (arc_dim, arc_dim)),
        "arc_u": _normal(rng, (arc_dim,)),
        "lab_dep_w": _normal(rng, (d_model, label_dim)),
        "lab_dep_b": np.zeros(label_dim),
        "lab_head_w": _normal(rng, (d_model, label_dim)),
        "lab_head_b": np.zeros(label_dim),
        "lab_U": _normal(rng, (n_labels, label_dim, label_dim)),
        "lab_dep_u": _normal(rng, (n_labels, label_dim)),
        "lab_head_u": _normal(rng, (n_labels, label_dim)),
        "lab_bias": np.zeros(n_labels),
    }


def _token_logits_graph(reps: ad.Tensor, ht: dict[str, ad.Tensor]) -> ad.Tensor:
    return reps @ ht["w"] + ht["b"]


def token_classify_head(reps: np.ndarray, head_params: Parameters) -> np.ndarray:
    """Affine map from word vectors to per-word label logits."""
    ht = tensorize(head_params, requires_grad=False)
    return _token_logits_graph(ad.constant(reps), ht).data


def _pair_logits_graph(
    bos_rep: ad.Tensor,
    ht: dict[str, ad.Tensor],
    dropout: float,
    train: bool,
    rng: np.random.Generator | None,
) -> ad.Tensor:
    x = ad.dropout(bos_rep, dropout, rng, train)
    hidden = ad.tanh(x @ ht["w1"] + ht["b1"])
    hidden = ad.dropout(hidden, dropout, rng, train)
    return hidden @ ht["w2"] + ht["b2"]


def pair_classify_head(
    bos_rep: np.ndarray,
    head_params: Parameters,
    train_mode: bool = False,
    dropout: float = 0.1,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Dropout -> affine -> tanh -> dropout -> affine over the BOS vector."""
    ht = tensorize(head_params, requires_grad=False)
    rep = np.asarray(bos_rep, dtype=np.float64).reshape(1, -1)
    out = _pair_logits_graph(ad.constant(rep), ht, dropout, train_mode, rng)
    return out.data[0]


def _biaffine_graph(reps: ad.Tensor, ht: dict[str, ad.Tensor]) -> tuple[ad.Tensor, ad.Tensor]:
    d = reps.shape[-1]
    arc_dim = ht["arc_U"].shape[0]
    x = ad.concat([ht["root_vec"].reshape((1, d)), reps], axis=0)  # (n+1, d)
    dep = ad.relu(x @ ht["arc_dep_w"] + ht["arc_dep_b"])
    head = ad.relu(x @ ht["arc_head_w"] + ht["arc_head_b"])
    head_bias = (head @ ht["arc_u"].reshape((arc_dim, 1))).swapaxes(0, 1)  # (1, n+1)
    arc = dep @ ht["arc_U"] @ head.swapaxes(0, 1) + head_bias
    n1 = arc.shape[0]
    ldim = ht["lab_U"].shape[-1]
    ldep = ad.relu(x @ ht["lab_dep_w"] + ht["lab_dep_b"])  # (n+1, ldim)
    lhead = ad.relu(x @ ht["lab_head_w"] + ht["lab_head_b"])
    bil = ldep.reshape((1, n1, ldim)) @ ht["lab_U"] @ lhead.swapaxes(0, 1).reshape((1, ldim, n1))
    label = bil.swapaxes(0, 1).swapaxes(1, 2)  # (n+1, n+1, L)
    dep_lin = (ldep @ ht["lab_dep_u"].swapaxes(0, 1)).reshape((n1, 1, -1))
    head_lin = (lhead @ ht["lab_head_u"].swapaxes(0, 1)).reshape((1, n1, -1))
    label = label + dep_lin + head_lin + ht["lab_bias"]
    return arc, label


def biaffine_scores(reps: np.ndarray, head_params: Parameters) -> ParseScores:
    """Score all head-dependent pairs; a learned root vector fills index 0."""
    if reps.shape[0] == 0:
        raise FinetuneError("biaffine scoring needs at least one word")
    ht = tensorize(head_params, requires_grad=False)
    arc, label = _biaffine_graph(ad.constant(reps), ht)
    return ParseScores(arc_scores=arc.data, label_scores=label.data)


# -- tree decoding ---------------------------------------------------------------


@dataclass
class DecodedTree:
    heads: list[int]
    labels: list[int]
    cycles: list[list[int]]


def _greedy_heads(arc: np.ndarray) -> np.ndarray:
    n1 = arc.shape[0]
    heads = np.zeros(n1, dtype=np.int64)
    for d in range(1, n1):
        row = arc[d].copy()
        row[d] = -np.inf
        heads[d] = int(np.argmax(row))  # first max = lowest head index
    return heads


def _all_cycles(heads: np.ndarray) -> list[list[int]]:
    n1 = heads.shape[0]
    color = np.zeros(n1, dtype=np.int64)  # 0 unseen, 1 on path, 2 done
    color[0] = 2
    cycles = []
    for start in range(1, n1):
        if color[start]:
            continue
        path = []
        v = start
        while color[v] == 0:
            color[v] = 1
            path.append(v)
            v = int(heads[v])
        if color[v] == 1:
            cycles.append(path[path.index(v):])
        for u in path:
            color[u] = 2
    return cycles


def _mst_heads(score: np.ndarray) -> np.ndarray:
    """Maximum spanning arborescence rooted at node 0 (Chu-Liu/Edmonds).

    score[d, h] is the weight of attaching dependent d to head h. Ties break
    toward the lowest head index at every choice point.
    """
    n1 = score.shape[0]
    best = _greedy_heads(score)
    cycles = _all_cycles(best)
    if not cycles:
        return best
    cycle = cycles[0]
    in_cycle = np.zeros(n1, dtype=bool)
    in_cycle[cycle] = True
    rest = [v for v in range(n1) if not in_cycle[v]]  # keeps 0 at index 0
    m = len(rest) + 1
    c_new = m - 1
    sub = np.full((m, m), -np.inf)
    enter_via: dict[int, int] = {}  # outside head -> cycle node it would enter at
    leave_via: dict[int, int] = {}  # outside dependent -> cycle node heading it
    for di, d in enumerate(rest):
        if d == 0:
            continue
        for hi, h in enumerate(rest):
            if h != d:
                sub[di, hi] = score[d, h]
        best_v, best_w = -1, -np.inf
        for v in sorted(cycle):
            if score[d, v] > best_w:
                best_w, best_v = score[d, v], v
        sub[di, c_new] = best_w
        leave_via[d] = best_v
    for hi, h in enumerate(rest):
        best_v, best_w = -1, -np.inf
        for v in sorted(cycle):
            w = score[v, h] - score[v, best[v]]
            if w > best_w:
                best_w, best_v = w, v
        sub[c_new, hi] = best_w
        enter_via[h] = best_v
    sub_heads = _mst_heads(sub)
    heads = best.copy()
    entry = rest[int(sub_heads[c_new])]
    heads[enter_via[entry]] = entry
    for di, d in enumerate(rest):
        if d == 0:
            continue
        h_new = int(sub_heads[di])
        heads[d] = leave_via[d] if h_new == c_new else rest[h_new]
    return heads


def decode_tree(scores: ParseScores, well_formed: bool = False) -> DecodedTree:
    """Per-dependent argmax over heads; `well_formed` switches to the MST mode.

    Greedy output may contain cycles, reported in `cycles`; the MST mode
    always returns a valid arborescence rooted at index 0.
    """
    arc = np.asarray(scores.arc_scores, dtype=np.float64)
    if not np.all(np.isfinite(arc)):
        raise FinetuneError("arc scores must be finite")
    if well_formed:
        heads = _mst_heads(arc)
        cycles: list[list[int]] = []
    else:
        heads = _greedy_heads(arc)
        cycles = _all_cycles(heads)
    n1 = arc.shape[0]
    labels = [
        int(np.argmax(scores.label_scores[d, heads[d]])) for d in range(1, n1)
    ]
    return DecodedTree(heads=[int(h) for h in heads[1:]], labels=labels, cycles=cycles)


# -- datasets --------------------------------------------------------------------


@dataclass
class TaskDataset:
    """Train/dev/test splits plus the closed label inventory for one task."""

    kind: str
    train: list
    dev: list
    test: list | None
    labels: list[str]

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise FinetuneError(f"unknown task kind '{self.kind}'")
        if not self.train or not self.dev:
            raise FinetuneError("train and dev splits must be non-empty")
        if not self.labels:
            raise FinetuneError("empty label inventory")


def make_task_dataset(kind: str, train, dev, test=None) -> TaskDataset:
    """Build a dataset with the label inventory collected across all splits."""
    splits = [train, dev] + ([test] if test else [])
    if kind == "pos":
        labels = sorted({t for split in splits for s in split for t in s.upos})
    elif kind == "parse":
        labels = sorted({r for split in splits for s in split for r in s.deprels})
    elif kind == "ner":
        types = sorted({sp.type for split in splits for s in split for sp in s.spans})
        labels = ["O"] + [f"{m}-{t}" for t in types for m in ("B", "I")]
    elif kind == "nli":
        labels = list(NLI_LABELS)
    else:
        raise FinetuneError(f"unknown task kind '{kind}'")
    return TaskDataset(kind=kind, train=list(train), dev=list(dev), test=list(test) if test else None, labels=labels)


# -- fine-tuning loop --------------------------------------------------------------


@dataclass
class _Prepared:
    """One sentence/example encoded and framed for the encoder."""

    ids: np.ndarray
    spans: list[tuple[int, int]]  # word spans in sequence coordinates
    gold: object


def _prepare_tokens(vocab: Vocabulary, words: Sequence[str], max_positions: int, what: str) -> tuple[np.ndarray, list[tuple[int, int]]]:
    seq = encode_words(vocab, words)
    ids = np.array([vocab.bos_id, *seq.ids, vocab.eos_id], dtype=np.int64)
    if ids.size > max_positions:
        raise FinetuneError(
            f"{what}: encoded length {ids.size} exceeds max_positions {max_positions}"
        )
    spans = [(s + 1, e + 1) for s, e in seq.word_spans]
    return ids, spans


def _prepare(task: TaskDataset, split, vocab: Vocabulary, config: ModelConfig) -> list[_Prepared]:
    out = []
    for i, item in enumerate(split):
        if task.kind == "nli":
            p = encode(vocab, item.premise)
            h = encode(vocab, item.hypothesis)
            ids = np.array(
                [vocab.bos_id, *p.ids, vocab.eos_id, *h.ids, vocab.eos_id],
                dtype=np.int64,
            )
            if ids.size > config.max_positions:
                raise FinetuneError(
                    f"example {i}: encoded length {ids.size} exceeds "
                    f"max_positions {config.max_positions}"
                )
            out.append(_Prepared(ids=ids, spans=[], gold=item))
        else:
            ids, spans = _prepare_tokens(vocab, item.words, config.max_positions, f"sentence {i}")
            out.append(_Prepared(ids=ids, spans=spans, gold=item))
    return out


def _pad_batch(items: list[_Prepared], pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    width = max(it.ids.size for it in items)
    ids = np.full((len(items), width), pad_id, dtype=np.int64)
    att = np.zeros((len(items), width), dtype=bool)
    for r, it in enumerate(items):
        ids[r, : it.ids.size] = it.ids
        att[r, : it.ids.size] = True
    return ids, att


def _ce_mean(logits: ad.Tensor, targets: np.ndarray) -> ad.Tensor:
    lp = ad.log_softmax(logits, axis=-1)
    picked = ad.select(lp, (np.arange(targets.size), targets))
    return -picked.mean()


def _batch_loss(
    task: TaskDataset,
    items: list[_Prepared],
    pt: dict[str, ad.Tensor],
    ht: dict[str, ad.Tensor],
    config: ModelConfig,
    vocab: Vocabulary,
    label_index: dict[str, int],
    train: bool,
    rng: np.random.Generator | None,
) -> ad.Tensor:
    ids, att = _pad_batch(items, vocab.pad_id)
    hidden, _, _ = _forward_graph(pt, config, ids, att, train, rng)
    final = hidden[-1]
    if task.kind in ("pos", "ner"):
        rows, starts, targets = [], [], []
        for r, it in enumerate(items):
            gold_tags = (
                it.gold.upos if task.kind == "pos" else spans_to_bio(it.gold.spans, len(it.gold.words))
            )
            for (s, _), tag in zip(it.spans, gold_tags):
                rows.append(r)
                starts.append(s)
                targets.append(label_index[tag])
        reps = ad.select(final, (np.array(rows), np.array(starts)))
        logits = _token_logits_graph(reps, ht)
        return _ce_mean(logits, np.array(targets))
    if task.kind == "nli":
        bos = ad.select(final, (np.arange(len(items)), np.zeros(len(items), dtype=np.int64)))
        logits = _pair_logits_graph(bos, ht, config.dropout, train, rng)
        targets = np.array([label_index[it.gold.label] for it in items])
        return _ce_mean(logits, targets)
    # parse: per-sentence biaffine over first-subword representations
    arc_losses = []
    label_losses = []
    for r, it in enumerate(items):
        starts = np.array([s for s, _ in it.spans], dtype=np.int64)
        reps = ad.select(final, (np.full(starts.size, r), starts))
        arc, label = _biaffine_graph(reps, ht)
        n = starts.size
        gold_heads = np.asarray(it.gold.heads, dtype=np.int64)
        dep_rows = np.arange(1, n + 1)
        arc_lp = ad.log_softmax(arc, axis=-1)
        arc_losses.append(ad.select(arc_lp, (dep_rows, gold_heads)))
        gold_labels = np.array([label_index[rel] for rel in it.gold.deprels])
        lab_lp = ad.log_softmax(label, axis=-1)
        label_losses.append(ad.select(lab_lp, (dep_rows, gold_heads, gold_labels)))
    arc_loss = -ad.concat(arc_losses, axis=0).mean()
    label_loss = -ad.concat(label_losses, axis=0).mean()
    return arc_loss + label_loss


def _predict_metric(
    task: TaskDataset,
    prepared: list[_Prepared],
    params: Parameters,
    head: Parameters,
    config: ModelConfig,
    vocab: Vocabulary,
    batch_size: int,
) -> float:
    """Task metric of the current model on a prepared split (no dropout)."""
    label_index = {lab: i for i, lab in enumerate(task.labels)}
    pt = tensorize(params, requires_grad=False)
    ht = tensorize(head, requires_grad=False)
    golds, preds = [], []
    for lo in range(0, len(prepared), batch_size):
        items = prepared[lo : lo + batch_size]
        ids, att = _pad_batch(items, vocab.pad_id)
        hidden, _, _ = _forward_graph(pt, config, ids, att, False, None)
        final = hidden[-1].data
        for r, it in enumerate(items):
            if task.kind == "nli":
                logits = pair_classify_head(final[r, 0], head, train_mode=False)
                golds.append(it.gold.label)
                preds.append(task.labels[int(np.argmax(logits))])
                continue
            starts = np.array([s for s, _ in it.spans], dtype=np.int64)
            reps = final[r][starts]
            if task.kind in ("pos", "ner"):
                logits = token_classify_head(reps, head)
                tags = [task.labels[int(i)] for i in np.argmax(logits, axis=-1)]
                if task.kind == "pos":
                    golds.append(it.gold)
                    preds.append(
                        DepSentence(it.gold.words, tags, it.gold.heads, it.gold.deprels)
                    )
                else:
                    golds.append(it.gold.spans)
                    preds.append(bio_to_spans(tags, lenient=True)[0])
            else:  # parse
                scores = biaffine_scores(reps, head)
                tree = decode_tree(scores, well_formed=True)
                golds.append(it.gold)
                preds.append(
                    DepSentence(
                        it.gold.words,
                        it.gold.upos,
                        tree.heads,
                        [task.labels[i] for i in tree.labels],
                    )
                )
    if task.kind == "pos":
        return upos_accuracy(golds, preds)
    if task.kind == "ner":
        return entity_f1(golds, preds)[2]
    if task.kind == "nli":
        return nli_accuracy(golds, preds)
    return uas_las(golds, preds)[1]  # LAS selects parse models


def _init_head(task: TaskDataset, config: ModelConfig, seed: int) -> tuple[Parameters, dict[str, str]]:
    n_labels = len(task.labels)
    if task.kind in ("pos", "ner"):
        head = init_token_head(config.d_model, n_labels, seed)
    elif task.kind == "nli":
        head = init_pair_head(config.d_model, seed, n_labels=n_labels)
    else:
        head = init_biaffine_head(config.d_model, n_labels, seed)
    meta = {"task": task.kind, "labels": ",".join(task.labels)}
    return head, meta


@dataclass
class FinetuneCell:
    lr: float
    batch_size: int
    best_epoch: int
    dev_score: float


@dataclass
class FinetuneResult:
    checkpoint: Checkpoint
    dev_score: float
    cells: list[FinetuneCell]


def write_results(cells: Sequence[FinetuneCell], path) -> None:
    """Tab-separated per-cell rows: lr, batch, best_epoch, dev_score."""
    lines = [
        f"{c.lr:g}\t{c.batch_size}\t{c.best_epoch}\t{c.dev_score:.6f}" for c in cells
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def finetune(
    task: TaskDataset,
    checkpoint: Checkpoint,
    vocab: Vocabulary,
    grid: Sequence[tuple[float, int]] | None = None,
    max_epochs: int = 30,
    seed: int = 0,
    warmup_steps: int = 0,
    eval_batch_size: int = 32,
) -> FinetuneResult:
    """Grid-search fine-tuning: best dev epoch per cell, best cell overall.

    Every cell trains encoder and head end to end with Adam at its fixed
    learning rate (no weight decay; optional warmup ramp, off by default).
    """
    if grid is None:
        grid = DEFAULT_GRID
    if not grid:
        raise FinetuneError("empty fine-tuning grid")
    if checkpoint.tokenizer_hash != vocab_hash(vocab):
        raise FinetuneError("checkpoint was trained with a different vocabulary")
    config = checkpoint.config
    label_index = {lab: i for i, lab in enumerate(task.labels)}
    train_prep = _prepare(task, task.train, vocab, config)
    dev_prep = _prepare(task, task.dev, vocab, config)

    cells: list[FinetuneCell] = []
    best_overall: tuple[float, Parameters, Parameters, dict[str, str]] | None = None
    for cell_idx, (lr, batch_size) in enumerate(grid):
        params = {k: v.copy() for k, v in checkpoint.params.items()}
        head, head_meta = _init_head(task, config, seed=hash_seed(seed, cell_idx))
        merged: Parameters = {**params, **{f"head.{k}": v for k, v in head.items()}}
        hyper = OptimHyper(
            peak_lr=lr if lr > 0 else 1e-30,
            warmup_steps=warmup_steps,
            total_steps=10**9,
            decay_power=0.0,
            weight_decay=0.0,
        )
        zero_lr = lr == 0.0
        state = OptimState.zeros(merged)
        best_cell: tuple[float, int, Parameters, Parameters] | None = None
        for epoch in range(1, max_epochs + 1):
            order = np.random.default_rng(
                (seed, _SHUFFLE_STREAM, cell_idx, epoch)
            ).permutation(len(train_prep))
            for bno, lo in enumerate(range(0, len(order), batch_size)):
                items = [train_prep[i] for i in order[lo : lo + batch_size]]
                pt = {k: ad.Tensor(v, requires_grad=True) for k, v in params.items()}
                ht = {k: ad.Tensor(v, requires_grad=True) for k, v in head.items()}
                rng = np.random.default_rng((seed, _DROP_STREAM, cell_idx, epoch, bno))
                loss = _batch_loss(
                    task, items, pt, ht, config, vocab, label_index, True, rng
                )
                loss.backward()
                # the MLM head does not feed the task heads; it rides along
                # with zero gradient
                grads = {k: _grad_or_zeros(t) for k, t in pt.items()}
                grads.update({f"head.{k}": _grad_or_zeros(t) for k, t in ht.items()})
                if zero_lr:
                    grads = {k: np.zeros_like(g) for k, g in grads.items()}
                adam_step(merged, grads, state, hyper)
            score = _predict_metric(
                task, dev_prep, params, head, config, vocab, eval_batch_size
            )
            if best_cell is None or score > best_cell[0]:
                best_cell = (
                    score,
                    epoch,
                    {k: v.copy() for k, v in params.items()},
                    {k: v.copy() for k, v in head.items()},
                )
        assert best_cell is not None
        score, best_epoch, cell_params, cell_head = best_cell
        cells.append(
            FinetuneCell(lr=lr, batch_size=batch_size, best_epoch=best_epoch, dev_score=score)
        )
        if best_overall is None or score > best_overall[0]:
            best_overall = (score, cell_params, cell_head, head_meta)

    assert best_overall is not None
    dev_score, out_params, out_head, out_meta = best_overall
    out = Checkpoint(
        config=config,
        params=out_params,
        optim=OptimState.zeros(out_params),
        hyper=checkpoint.hyper,
        tokenizer_hash=checkpoint.tokenizer_hash,
        step=checkpoint.step,
        seed=seed,
        masking=checkpoint.masking,
        head=out_head,
        head_meta=out_meta,
    )
    return FinetuneResult(checkpoint=out, dev_score=dev_score, cells=cells)


def hash_seed(seed: int, cell_idx: int) -> int:
    """Stable per-cell seed derivation (independent of Python hash salting)."""
    return (seed * 1_000_003 + cell_idx) & 0x7FFFFFFF


def _grad_or_zeros(t: ad.Tensor) -> np.ndarray:
    return t.grad if t.grad is not None else np.zeros_like(t.data)
