"""Optimizer, learning-rate schedule, pretraining loop, and checkpoints.

Adam with decoupled weight decay, a linear warmup followed by polynomial
decay to zero, and a fully resumable loop: the step-to-batch mapping and all
masking randomness derive from (seed, epoch, sequence index), so a run
restarted from a checkpoint reproduces the uninterrupted run bit for bit.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .corpus import DocumentStore, pack_sequences
from .masking import (
    IGNORE_INDEX,
    MaskRates,
    make_batch,
    mask_subword,
    mask_whole_word,
    masking_rng,
)
from .model import (
    ModelConfig,
    Parameters,
    init_params,
    mlm_loss_and_grads,
    param_shapes,
)
from .tokenizer import Vocabulary, vocab_hash

_ORDER_STREAM = 0x0DE5  # epoch-shuffling substream tag
_DROPOUT_STREAM = 0xD801


class TrainingError(RuntimeError):
    pass


class TrainingDivergedError(TrainingError):
    def __init__(self, step: int, last_checkpoint: Path | None):
        self.step = step
        self.last_checkpoint = last_checkpoint
        where = last_checkpoint if last_checkpoint else "<none written>"
        super().__init__(
            f"non-finite loss at step {step}; last good checkpoint: {where}"
        )


class CheckpointError(TrainingError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointHashError(CheckpointError):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


@dataclass(frozen=True)
class OptimHyper:
    """Adam + schedule hyperparameters (defaults mirror the full-scale run)."""

    peak_lr: float = 7e-4
    warmup_steps: int = 10_000
    total_steps: int = 100_000
    decay_power: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-6
    weight_decay: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise TrainingError("betas must lie strictly inside (0, 1)")
        if self.warmup_steps > self.total_steps:
            raise TrainingError("warmup_steps must not exceed total_steps")
        if self.peak_lr <= 0:
            raise TrainingError("peak_lr must be positive")


def lr_at(step: int, hyper: OptimHyper) -> float:
    """Linear ramp to peak over warmup, then polynomial decay to zero.

    Steps past total_steps clamp to zero (training complete).
    """
    if step < 0:
        raise TrainingError(f"negative step {step}")
    if step > hyper.total_steps:
        return 0.0
    if hyper.warmup_steps > 0 and step <= hyper.warmup_steps:
        return hyper.peak_lr * step / hyper.warmup_steps
    remaining = hyper.total_steps - step
    span = hyper.total_steps - hyper.warmup_steps
    if span == 0:
        return hyper.peak_lr
    return hyper.peak_lr * (remaining / span) ** hyper.decay_power


@dataclass
class OptimState:
    step: int
    m: Parameters
    v: Parameters

    @staticmethod
    def zeros(params: Parameters) -> "OptimState":
        return OptimState(
            step=0,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: Parameters,
    grads: Parameters,
    state: OptimState,
    hyper: OptimHyper,
) -> tuple[Parameters, OptimState]:
    """One bias-corrected Adam update with decoupled weight decay, in place.

    The learning rate is the schedule value at the (1-indexed) step being
    taken, so the update at step warmup_steps uses exactly peak_lr.
    """
    t = state.step + 1
    lr = lr_at(t, hyper)
    b1, b2 = hyper.beta1, hyper.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for tensor '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / bias1) / (np.sqrt(v / bias2) + hyper.epsilon)
        if hyper.weight_decay:
            update = update + hyper.weight_decay * p
        p -= lr * update
    state.step = t
    return params, state


@dataclass
class Checkpoint:
    """Everything needed to resume: model, optimizer, schedule, provenance."""

    config: ModelConfig
    params: Parameters
    optim: OptimState
    hyper: OptimHyper
    tokenizer_hash: str
    step: int
    seed: int
    masking: str = "whole-word"
    head: Parameters | None = None
    head_meta: dict[str, str] | None = None


_MAGIC = b"MLMK"
_FORMAT_VERSION = 1


def _header_lines(ckpt: Checkpoint) -> list[str]:
    lines = []
    c = ckpt.config
    lines.append(
        "config="
        f"{c.n_layers},{c.d_model},{c.n_heads},{c.d_ff},{c.vocab_size},"
        f"{c.max_positions},{c.dropout!r}"
    )
    h = ckpt.hyper
    lines.append(
        "hyper="
        f"{h.peak_lr!r},{h.warmup_steps},{h.total_steps},{h.decay_power!r},"
        f"{h.beta1!r},{h.beta2!r},{h.epsilon!r},{h.weight_decay!r}"
    )
    lines.append(f"tokenizer_hash={ckpt.tokenizer_hash}")
    lines.append(f"step={ckpt.step}")
    lines.append(f"seed={ckpt.seed}")
    lines.append(f"masking={ckpt.masking}")
    if ckpt.head_meta:
        for key in sorted(ckpt.head_meta):
            lines.append(f"head_meta.{key}={ckpt.head_meta[key]}")
    return lines


def _array_entries(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    entries: list[tuple[str, np.ndarray]] = []
    for name, _ in param_shapes(ckpt.config):
        entries.append((f"param.{name}", ckpt.params[name]))
    for name, _ in param_shapes(ckpt.config):
        entries.append((f"adam_m.{name}", ckpt.optim.m[name]))
    for name, _ in param_shapes(ckpt.config):
        entries.append((f"adam_v.{name}", ckpt.optim.v[name]))
    if ckpt.head:
        for name in sorted(ckpt.head):
            entries.append((f"head.{name}", ckpt.head[name]))
    return entries


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Versioned binary container with trailing CRC32."""
    entries = _array_entries(ckpt)
    lines = _header_lines(ckpt)
    for name, arr in entries:
        dims = ",".join(str(d) for d in arr.shape)
        lines.append(f"array={name}:{dims}")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    blob = bytearray()
    blob += _MAGIC
    blob += _FORMAT_VERSION.to_bytes(4, "little")
    blob += len(header).to_bytes(8, "little")
    blob += header
    for _, arr in entries:
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    blob += (zlib.crc32(bytes(blob)) & 0xFFFFFFFF).to_bytes(4, "little")
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(bytes(blob))
    tmp.replace(path)


def load_checkpoint(
    path: str | Path, expected_tokenizer_hash: str | None = None
) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:4] != _MAGIC:
        raise CheckpointIntegrityError(f"{path}: not a checkpoint file")
    version = int.from_bytes(raw[4:8], "little")
    if version != _FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, expected {_FORMAT_VERSION}"
        )
    if zlib.crc32(raw[:-4]) != int.from_bytes(raw[-4:], "little"):
        raise CheckpointIntegrityError(
            f"{path}: checksum mismatch (file truncated or corrupted)"
        )
    header_len = int.from_bytes(raw[8:16], "little")
    header_end = 16 + header_len
    fields: dict[str, str] = {}
    arrays: list[tuple[str, tuple[int, ...]]] = []
    head_meta: dict[str, str] = {}
    for line in raw[16:header_end].decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        if key == "array":
            name, _, dims = value.partition(":")
            shape = tuple(int(d) for d in dims.split(",")) if dims else ()
            arrays.append((name, shape))
        elif key.startswith("head_meta."):
            head_meta[key[len("head_meta."):]] = value
        else:
            fields[key] = value
    cfg_vals = fields["config"].split(",")
    config = ModelConfig(
        n_layers=int(cfg_vals[0]),
        d_model=int(cfg_vals[1]),
        n_heads=int(cfg_vals[2]),
        d_ff=int(cfg_vals[3]),
        vocab_size=int(cfg_vals[4]),
        max_positions=int(cfg_vals[5]),
        dropout=float(cfg_vals[6]),
    )
    hyp_vals = fields["hyper"].split(",")
    hyper = OptimHyper(
        peak_lr=float(hyp_vals[0]),
        warmup_steps=int(hyp_vals[1]),
        total_steps=int(hyp_vals[2]),
        decay_power=float(hyp_vals[3]),
        beta1=float(hyp_vals[4]),
        beta2=float(hyp_vals[5]),
        epsilon=float(hyp_vals[6]),
        weight_decay=float(hyp_vals[7]),
    )
    tokenizer_hash = fields["tokenizer_hash"]
    if expected_tokenizer_hash is not None and tokenizer_hash != expected_tokenizer_hash:
        raise CheckpointHashError(
            f"{path}: tokenizer hash mismatch: checkpoint {tokenizer_hash}, "
            f"expected {expected_tokenizer_hash}"
        )
    offset = header_end
    loaded: dict[str, np.ndarray] = {}
    for name, shape in arrays:
        nbytes = int(np.prod(shape)) * 8 if shape else 8
        block = raw[offset : offset + nbytes]
        if len(block) != nbytes:
            raise CheckpointIntegrityError(f"{path}: truncated at array {name}")
        loaded[name] = np.frombuffer(block, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(raw) - 4:
        raise CheckpointIntegrityError(f"{path}: trailing bytes after arrays")
    params = {n[len("param."):]: a for n, a in loaded.items() if n.startswith("param.")}
    m = {n[len("adam_m."):]: a for n, a in loaded.items() if n.startswith("adam_m.")}
    v = {n[len("adam_v."):]: a for n, a in loaded.items() if n.startswith("adam_v.")}
    head = {n[len("head."):]: a for n, a in loaded.items() if n.startswith("head.")}
    step = int(fields["step"])
    return Checkpoint(
        config=config,
        params=params,
        optim=OptimState(step=step, m=m, v=v),
        hyper=hyper,
        tokenizer_hash=tokenizer_hash,
        step=step,
        seed=int(fields["seed"]),
        masking=fields["masking"],
        head=head or None,
        head_meta=head_meta or None,
    )


@dataclass
class PretrainRun:
    """Inputs and knobs for one pretraining run."""

    store: DocumentStore
    vocab: Vocabulary
    config: ModelConfig
    hyper: OptimHyper
    masking: str = "whole-word"
    rates: MaskRates = field(default_factory=MaskRates)
    max_len: int = 128
    batch_size: int = 16
    micro_batch: int | None = None
    seed: int = 0
    init_seed: int | None = None
    checkpoint_dir: Path | None = None
    checkpoint_every: int = 0
    keep_last: int = 3
    log_every: int = 50
    log_fn: Callable[[int, float, float, float], None] | None = None


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng((seed, _ORDER_STREAM, epoch)).permutation(n)


def pretrain(run: PretrainRun, resume: Checkpoint | None = None) -> Checkpoint:
    """Pack, dynamically mask, and optimize for hyper.total_steps steps.

    Returns the final checkpoint. Aborts with TrainingDivergedError (carrying
    the last written checkpoint path) if the loss goes non-finite.
    """
    if run.masking not in ("subword", "whole-word"):
        raise TrainingError(f"unknown masking strategy '{run.masking}'")
    sequences = list(pack_sequences(run.store, run.vocab, run.max_len))
    if not sequences:
        raise TrainingError("corpus packed to zero sequences")
    n_seq = len(sequences)
    tok_hash = vocab_hash(run.vocab)
    mask_fn = mask_whole_word if run.masking == "whole-word" else mask_subword

    if resume is not None:
        if resume.config != run.config:
            raise TrainingError("resume checkpoint has a different model config")
        if resume.hyper != run.hyper:
            raise TrainingError("resume checkpoint has different optimizer hyperparameters")
        if resume.tokenizer_hash != tok_hash:
            raise CheckpointHashError(
                f"resume tokenizer hash mismatch: checkpoint {resume.tokenizer_hash}, "
                f"vocabulary {tok_hash}"
            )
        params = {k: v.copy() for k, v in resume.params.items()}
        state = OptimState(
            step=resume.step,
            m={k: v.copy() for k, v in resume.optim.m.items()},
            v={k: v.copy() for k, v in resume.optim.v.items()},
        )
        start_step = resume.step
    else:
        params = init_params(run.config, run.init_seed if run.init_seed is not None else run.seed)
        state = OptimState.zeros(params)
        start_step = 0

    micro = run.micro_batch if run.micro_batch else run.batch_size
    ckpt_dir = Path(run.checkpoint_dir) if run.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    last_path: Path | None = None
    epoch_cache: tuple[int, np.ndarray] | None = None

    def checkpoint_at(step: int) -> Checkpoint:
        return Checkpoint(
            config=run.config,
            params=params,
            optim=state,
            hyper=run.hyper,
            tokenizer_hash=tok_hash,
            step=step,
            seed=run.seed,
            masking=run.masking,
        )

    for step in range(start_step + 1, run.hyper.total_steps + 1):
        step_start = time.perf_counter()
        first = (step - 1) * run.batch_size
        examples = []
        for j in range(first, first + run.batch_size):
            epoch, pos = divmod(j, n_seq)
            if epoch_cache is None or epoch_cache[0] != epoch:
                epoch_cache = (epoch, _epoch_order(run.seed, epoch, n_seq))
            seq_index = int(epoch_cache[1][pos])
            rng = masking_rng(run.seed, epoch, seq_index)
            examples.append(mask_fn(sequences[seq_index], rng, run.rates, vocab=run.vocab))

        micro_batches = [
            make_batch(examples[i : i + micro], run.vocab.pad_id)
            for i in range(0, len(examples), micro)
        ]
        label_counts = [int((mb.labels != IGNORE_INDEX).sum()) for mb in micro_batches]
        total_labels = sum(label_counts)
        if total_labels == 0:
            raise TrainingError(f"step {step}: no labeled positions in batch")
        loss_acc = 0.0
        grad_acc: Parameters | None = None
        for micro_index, (mb, n_labels) in enumerate(zip(micro_batches, label_counts)):
            if n_labels == 0:
                continue
            weight = n_labels / total_labels
            loss, grads = mlm_loss_and_grads(
                params,
                run.config,
                mb,
                train_mode=True,
                rng=np.random.default_rng((run.seed, _DROPOUT_STREAM, step, micro_index)),
            )
            loss_acc += weight * loss
            if grad_acc is None:
                grad_acc = {k: weight * g for k, g in grads.items()}
            else:
                for k, g in grads.items():
                    grad_acc[k] += weight * g
        if not np.isfinite(loss_acc):
            raise TrainingDivergedError(step, last_path)
        params, state = adam_step(params, grad_acc, state, run.hyper)

        if run.log_fn and (step % run.log_every == 0 or step == run.hyper.total_steps):
            elapsed = time.perf_counter() - step_start
            tokens = sum(int(mb.attention_mask.sum()) for mb in micro_batches)
            run.log_fn(step, loss_acc, lr_at(step, run.hyper), tokens / max(elapsed, 1e-9))

        if ckpt_dir and run.checkpoint_every and step % run.checkpoint_every == 0:
            path = ckpt_dir / f"step{step:08d}.ckpt"
            save_checkpoint(checkpoint_at(step), path)
            written.append(path)
            last_path = path
            while len(written) > run.keep_last:
                old = written.pop(0)
                old.unlink(missing_ok=True)

    final = checkpoint_at(state.step)
    if ckpt_dir:
        final_path = ckpt_dir / "final.ckpt"
        save_checkpoint(final, final_path)
    return final
