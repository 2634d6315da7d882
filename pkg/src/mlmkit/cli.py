"""Command-line pipeline driver.

One executable, seven subcommands: vocab, sample, stats, pretrain, finetune,
embed, eval. Long-form flags only; a ``--config file`` of key=value lines
supplies defaults that explicit flags override. Progress goes to stderr,
data and metrics to stdout or ``--out`` files, and every output artifact
gets a ``<name>.manifest`` recording flags, seeds, input hashes and
timestamps. Exit codes: 0 success, 1 runtime failure (single-line error on
stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import corpus_stats, load_corpus, sample_documents, save_corpus
from .evaluation import (
    entity_f1,
    nli_accuracy,
    read_bio,
    read_conllu,
    read_nli,
    uas_las,
    upos_accuracy,
)
from .finetune import embed_words, finetune, make_task_dataset, write_results
from .masking import MaskRates
from .model import ModelConfig, forward
from .masking import MaskedBatch
from .tokenizer import encode, load_vocab, save_vocab, train_vocab, vocab_hash
from .training import (
    OptimHyper,
    PretrainRun,
    load_checkpoint,
    pretrain,
    save_checkpoint,
)


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(
    out_path: Path,
    subcommand: str,
    args: argparse.Namespace,
    inputs: dict[str, Path],
    started: str,
) -> None:
    lines = [
        f"subcommand={subcommand}",
        f"tool_version={__version__}",
        f"started={started}",
        f"finished={_utc_now()}",
    ]
    skip = {"func", "config"}
    for key in sorted(vars(args)):
        if key in skip:
            continue
        lines.append(f"flag.{key}={getattr(args, key)}")
    for name in sorted(inputs):
        lines.append(f"input.{name}.sha256={_sha256(Path(inputs[name]))}")
    manifest = Path(str(out_path) + ".manifest")
    tmp = Path(str(manifest) + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp.replace(manifest)


def _emit(lines: list[str], out: str | None) -> None:
    """Metric lines go to stdout; --out additionally gets key=value records."""
    for line in lines:
        print(line)
    if out:
        kv = [line.replace("\t", "=", 1) for line in lines]
        Path(out).write_text("\n".join(kv) + "\n", encoding="utf-8")


# -- subcommands ---------------------------------------------------------------


def _cmd_vocab(args) -> int:
    started = _utc_now()
    store = load_corpus(args.corpus)
    vocab = train_vocab(store, args.size, max_sentences=args.max_sentences, seed=args.seed)
    save_vocab(vocab, args.out)
    _write_manifest(Path(args.out), "vocab", args, {"corpus": args.corpus}, started)
    print(f"pieces={vocab.size} merges={len(vocab.merges)}", file=sys.stderr)
    return 0


def _cmd_sample(args) -> int:
    started = _utc_now()
    store = load_corpus(args.corpus)
    sampled = sample_documents(store, args.target_bytes, args.seed)
    save_corpus(sampled, args.out)
    _write_manifest(Path(args.out), "sample", args, {"corpus": args.corpus}, started)
    print(
        f"documents={sampled.doc_count} bytes={sampled.total_bytes}", file=sys.stderr
    )
    return 0


def _cmd_stats(args) -> int:
    started = _utc_now()
    store = load_corpus(args.corpus)
    vocab = load_vocab(args.vocab)
    stats = corpus_stats(store, vocab)
    lines = [
        f"total_bytes={stats.total_bytes}",
        f"token_count={stats.token_count}",
        f"doc_count={stats.doc_count}",
        f"tokens_per_doc_p5={stats.tokens_per_doc_p5}",
        f"tokens_per_doc_p50={stats.tokens_per_doc_p50}",
        f"tokens_per_doc_p95={stats.tokens_per_doc_p95}",
    ]
    print("\n".join(lines))
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
        _write_manifest(
            Path(args.out), "stats", args, {"corpus": args.corpus, "vocab": args.vocab}, started
        )
    return 0


def _model_config_from_args(args, vocab_size: int) -> ModelConfig:
    d_ff = args.dff if args.dff else 4 * args.dmodel
    return ModelConfig(
        n_layers=args.layers,
        d_model=args.dmodel,
        n_heads=args.heads,
        d_ff=d_ff,
        vocab_size=vocab_size,
        max_positions=args.max_len,
        dropout=args.dropout,
    )


def _cmd_pretrain(args) -> int:
    started = _utc_now()
    store = load_corpus(args.corpus)
    vocab = load_vocab(args.vocab)
    config = _model_config_from_args(args, vocab.size)
    hyper = OptimHyper(
        peak_lr=args.peak_lr,
        warmup_steps=args.warmup,
        total_steps=args.steps,
        decay_power=args.decay_power,
        weight_decay=args.weight_decay,
    )
    log_fh = open(args.log_file, "w", encoding="utf-8") if args.log_file else None

    def log(step: int, loss: float, lr: float, tps: float) -> None:
        line = f"{step}\t{loss!r}\t{lr!r}\t{tps:.1f}"
        print(line, file=sys.stderr)
        if log_fh:
            log_fh.write(line + "\n")

    run = PretrainRun(
        store=store,
        vocab=vocab,
        config=config,
        hyper=hyper,
        masking=args.mask,
        rates=MaskRates(
            select=args.select_rate,
            mask=args.mask_rate,
            keep=args.keep_rate,
            random=args.random_rate,
        ),
        max_len=args.max_len,
        batch_size=args.batch_size,
        micro_batch=args.micro_batch,
        seed=args.seed,
        checkpoint_dir=Path(args.ckpt_dir) if args.ckpt_dir else None,
        checkpoint_every=args.ckpt_every,
        keep_last=args.keep_last,
        log_every=args.log_every,
        log_fn=log,
    )
    resume = load_checkpoint(args.resume) if args.resume else None
    try:
        ckpt = pretrain(run, resume=resume)
    finally:
        if log_fh:
            log_fh.close()
    save_checkpoint(ckpt, args.out)
    inputs = {"corpus": args.corpus, "vocab": args.vocab}
    if args.resume:
        inputs["resume"] = args.resume
    _write_manifest(Path(args.out), "pretrain", args, inputs, started)
    print(f"final_step={ckpt.step} checkpoint={args.out}", file=sys.stderr)
    return 0


def _load_task_splits(task: str, train: str, dev: str, test: str | None):
    if task in ("pos", "parse"):
        reader = read_conllu
    elif task == "ner":
        reader = lambda p: read_bio(p)[0]
    else:
        reader = read_nli
    return (
        reader(train),
        reader(dev),
        reader(test) if test else None,
    )


def _cmd_finetune(args) -> int:
    started = _utc_now()
    vocab = load_vocab(args.vocab)
    ckpt = load_checkpoint(args.checkpoint, expected_tokenizer_hash=vocab_hash(vocab))
    train_split, dev_split, test_split = _load_task_splits(
        args.task, args.train, args.dev, args.test
    )
    task = make_task_dataset(args.task, train_split, dev_split, test_split)
    lrs = [float(x) for x in args.lrs.split(",")]
    batches = [int(x) for x in args.batch_sizes.split(",")]
    grid = [(lr, bs) for lr in lrs for bs in batches]
    result = finetune(
        task,
        ckpt,
        vocab,
        grid=grid,
        max_epochs=args.epochs,
        seed=args.seed,
        warmup_steps=args.warmup_steps,
    )
    save_checkpoint(result.checkpoint, args.out)
    if args.results:
        write_results(result.cells, args.results)
    inputs = {"train": args.train, "dev": args.dev, "vocab": args.vocab, "checkpoint": args.checkpoint}
    if args.test:
        inputs["test"] = args.test
    _write_manifest(Path(args.out), "finetune", args, inputs, started)
    print(f"dev_score\t{result.dev_score:.4f}")
    return 0


def _cmd_embed(args) -> int:
    started = _utc_now()
    vocab = load_vocab(args.vocab)
    ckpt = load_checkpoint(args.checkpoint, expected_tokenizer_hash=vocab_hash(vocab))
    lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    out_rows: list[str] = []
    for sent_idx, line in enumerate(lines):
        if not line.strip():
            continue
        seq = encode(vocab, line)
        ids = np.array([[vocab.bos_id, *seq.ids, vocab.eos_id]], dtype=np.int64)
        att = np.ones_like(ids, dtype=bool)
        batch = MaskedBatch(input_ids=ids, labels=np.full_like(ids, -100), attention_mask=att)
        result = forward(ckpt.params, ckpt.config, batch, train_mode=False)
        spans = [(s + 1, e + 1) for s, e in seq.word_spans]
        hidden = [h[0] for h in result.hidden_states]
        vectors = embed_words(hidden, spans)
        for w, vec in enumerate(vectors):
            values = "\t".join(f"{x:.8f}" for x in vec)
            out_rows.append(f"{sent_idx}\t{w}\t{seq.source_words[w]}\t{values}")
    Path(args.out).write_text("\n".join(out_rows) + "\n", encoding="utf-8")
    _write_manifest(
        Path(args.out),
        "embed",
        args,
        {"input": args.input, "vocab": args.vocab, "checkpoint": args.checkpoint},
        started,
    )
    return 0


def _cmd_eval(args) -> int:
    if args.task in ("pos", "parse"):
        gold = read_conllu(args.gold)
        pred = read_conllu(args.pred)
        if args.task == "pos":
            lines = [f"UPOS\t{upos_accuracy(gold, pred):.4f}"]
        else:
            uas, las = uas_las(gold, pred)
            lines = [f"UAS\t{uas:.4f}", f"LAS\t{las:.4f}"]
    elif args.task == "ner":
        gold_sents, _ = read_bio(args.gold)
        pred_sents, _ = read_bio(args.pred)
        p, r, f1 = entity_f1([s.spans for s in gold_sents], [s.spans for s in pred_sents])
        lines = [f"precision\t{p:.4f}", f"recall\t{r:.4f}", f"F1\t{f1:.4f}"]
    else:
        gold = [ex.label for ex in read_nli(args.gold)]
        pred = [ln.strip() for ln in Path(args.pred).read_text(encoding="utf-8").splitlines() if ln.strip()]
        lines = [f"accuracy\t{nli_accuracy(gold, pred):.4f}"]
    _emit(lines, args.out)
    return 0


# -- parser ----------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file of flag defaults (flags override)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker parallelism cap (results are thread-count independent)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlmkit",
        description="Desk-scale MLM pretraining, fine-tuning and evaluation pipeline",
    )
    parser.add_argument("--version", action="version", version=f"mlmkit {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("vocab", help="train a subword vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--max-sentences", type=int, default=10_000_000)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=_cmd_vocab)

    p = sub.add_parser("sample", help="sample whole documents to a byte budget")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target-bytes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("stats", help="corpus statistics under a vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("pretrain", help="masked-language-model pretraining")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--dmodel", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--dff", type=int, default=0, help="default 4*dmodel")
    p.add_argument("--max-len", type=int, default=128)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--peak-lr", type=float, default=7e-4)
    p.add_argument("--decay-power", type=float, default=1.0)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--micro-batch", type=int, default=0)
    p.add_argument("--mask", choices=("subword", "whole-word"), default="whole-word")
    p.add_argument("--select-rate", type=float, default=0.15)
    p.add_argument("--mask-rate", type=float, default=0.8)
    p.add_argument("--keep-rate", type=float, default=0.1)
    p.add_argument("--random-rate", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=50)
    p.add_argument("--log-file")
    p.add_argument("--ckpt-dir")
    p.add_argument("--ckpt-every", type=int, default=0)
    p.add_argument("--keep-last", type=int, default=3)
    p.add_argument("--resume")
    _add_common(p)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("finetune", help="grid-search task fine-tuning")
    p.add_argument("--task", choices=("pos", "parse", "ner", "nli"), required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--test")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--results")
    p.add_argument("--lrs", default="1e-5,3e-5,5e-5")
    p.add_argument("--batch-sizes", default="16,32")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--warmup-steps", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("embed", help="extract frozen word embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True, help="one sentence per line")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("eval", help="score predictions against gold files")
    p.add_argument("--task", choices=("pos", "parse", "ner", "nli"), required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Install key=value config-file entries as subcommand defaults."""
    if "--config" not in argv:
        return
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        parser.error("--config requires a file argument")
    path = Path(argv[idx + 1])
    if not path.exists():
        parser.error(f"config file not found: {path}")
    sub_name = next((a for a in argv if not a.startswith("-")), None)
    actions = parser._subparsers._group_actions[0]  # type: ignore[union-attr]
    subparser = actions.choices.get(sub_name)
    if subparser is None:
        return
    valid = {a.dest for a in subparser._actions}
    overrides: dict[str, object] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in valid:
            parser.error(f"{path}:{lineno}: unknown config key '{key.replace('_', '-')}'")
        overrides[key] = value.strip()
    # re-run type conversion the same way argparse would for a flag, and
    # lift `required` on anything the file supplies (flags still override)
    for action in subparser._actions:
        if action.dest in overrides:
            if action.type:
                overrides[action.dest] = action.type(overrides[action.dest])
            action.required = False
    subparser.set_defaults(**overrides)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        message = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
