"""Training variants and the SGD loop for the student models.

Four ways to supervise the same architecture:
    STANDARD_FINETUNE        gold labels as targets
    STANDARD_DISTILL         teacher labels as targets
    STEP_BY_STEP             teacher labels + teacher rationales as two
                             prefix-tagged streams, loss = label stream +
                             rationale_weight x rationale stream
    RATIONALE_INPUT_BASELINE teacher labels as targets, with the teacher
                             rationale appended to the *input* — an ablation
                             that spends the rationale at prediction time
                             instead of as a training signal

STEP_BY_STEP and STANDARD_DISTILL shuffle their label rows with the same
seeded stream, so at rationale_weight 0 the two produce identical label-row
loss trajectories — the multi-task machinery provably adds nothing when its
weight is zero. This module never imports the teacher: once a dataset
carries teacher fields, training and prediction are fully offline.
"""

from __future__ import annotations

import csv
import itertools
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import tensor as t
from .data import Dataset, Example
from .model import SeqModel, forward_logits, greedy_decode
from .tokenizer import BOS, EOS, PAD, Prefix, Vocab, decode, encode, normalize


class Variant(Enum):
    STANDARD_FINETUNE = "standard_finetune"
    STANDARD_DISTILL = "standard_distill"
    STEP_BY_STEP = "step_by_step"
    RATIONALE_INPUT_BASELINE = "rationale_input_baseline"


class MissingSupervision(ValueError):
    def __init__(self, index: int, fieldname: str):
        super().__init__(f"example {index} lacks required field {fieldname!r}")
        self.index = index
        self.field = fieldname


class EmptySelection(ValueError):
    """A loss was asked for a stream with no rows in the batch."""


class DivergenceDetected(RuntimeError):
    """Loss became non-finite; carries the history recorded so far."""

    def __init__(self, step: int, history: list):
        super().__init__(f"non-finite loss at step {step}")
        self.history = history


# Reference preset for students in the hundreds-of-millions-of-parameters
# range; the 1e-3 default below is tuned for the desk-scale toy models this
# package actually trains.
FULL_SCALE_LEARNING_RATE = 5e-5


@dataclass(frozen=True)
class TrainConfig:
    variant: Variant
    rationale_weight: float = 1.0
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    max_steps: int = 2000
    max_input_len: int = 64
    max_output_len: int = 64
    seed: int = 0
    eval_every: int = 100
    patience: int = 5

    def __post_init__(self):
        if self.rationale_weight < 0:
            raise ValueError("rationale_weight must be nonnegative")
        for name in ("learning_rate", "batch_size", "max_steps", "max_input_len",
                     "max_output_len", "eval_every", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class TrainingBatch:
    src: np.ndarray  # [B, S] encoder ids
    tgt: np.ndarray  # [B, T] full target sequences: BOS ... EOS, PAD-filled
    streams: tuple[Prefix, ...]  # per-row tag


@dataclass
class HistoryRow:
    step: int
    label_loss: float
    rationale_loss: float | None
    combined_loss: float
    val_accuracy: float | None = None


@dataclass
class TrainResult:
    model: SeqModel
    history: list[HistoryRow] = field(default_factory=list)
    best_val_accuracy: float | None = None
    best_step: int | None = None
    stopped_early: bool = False


def _require(ex: Example, index: int, fieldname: str) -> str:
    value = getattr(ex, fieldname)
    if not value:
        raise MissingSupervision(index, fieldname)
    return value


def _pad_rows(rows: Sequence[list[int]]) -> np.ndarray:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), PAD, dtype=np.int64)
    for i, row in enumerate(rows):
        out[i, : len(row)] = row
    return out


def _encode_src(vocab: Vocab, text: str, prefix: Prefix, limit: int) -> list[int]:
    return encode(vocab, text, prefix)[:limit]


def _encode_tgt(vocab: Vocab, text: str, limit: int) -> list[int]:
    body = encode(vocab, text)[: limit - 2]
    return [BOS] + body + [EOS]


def _label_row(vocab, ex, index, variant, config) -> tuple[list[int], list[int]]:
    if variant is Variant.STANDARD_FINETUNE:
        target = _require(ex, index, "gold_label")
        source = ex.input
    elif variant is Variant.RATIONALE_INPUT_BASELINE:
        target = _require(ex, index, "teacher_label")
        source = f"{ex.input} ; {_require(ex, index, 'teacher_rationale')}"
    else:
        target = _require(ex, index, "teacher_label")
        source = ex.input
    return (
        _encode_src(vocab, source, Prefix.LABEL, config.max_input_len),
        _encode_tgt(vocab, target, config.max_output_len),
    )


def _rationale_row(vocab, ex, index, config) -> tuple[list[int], list[int]]:
    rationale = _require(ex, index, "teacher_rationale")
    return (
        _encode_src(vocab, ex.input, Prefix.RATIONALE, config.max_input_len),
        _encode_tgt(vocab, rationale, config.max_output_len),
    )


def make_batches(
    dataset: Dataset,
    variant: Variant,
    vocab: Vocab,
    config: TrainConfig,
    epoch_seed: int,
) -> Iterator[TrainingBatch]:
    """One epoch of seeded, deterministic batches.

    Label-row order is drawn from a stream keyed only by (seed, epoch), so
    every variant walks identical label rows in identical order given the
    same data. STEP_BY_STEP additionally appends a batch of rationale rows
    from an independently shuffled stream: each example contributes its two
    rows somewhere in the same epoch, but never in lockstep.
    """
    n = len(dataset.examples)
    if n == 0:
        return
    label_order = list(range(n))
    random.Random(f"{config.seed}:{epoch_seed}:label").shuffle(label_order)

    if variant is Variant.STEP_BY_STEP:
        rationale_order = list(range(n))
        random.Random(f"{config.seed}:{epoch_seed}:rationale").shuffle(rationale_order)

    for start in range(0, n, config.batch_size):
        chunk = label_order[start : start + config.batch_size]
        rows = [
            _label_row(vocab, dataset.examples[i], i, variant, config) for i in chunk
        ]
        streams = [Prefix.LABEL] * len(chunk)
        if variant is Variant.STEP_BY_STEP:
            r_chunk = rationale_order[start : start + config.batch_size]
            rows += [
                _rationale_row(vocab, dataset.examples[i], i, config) for i in r_chunk
            ]
            streams += [Prefix.RATIONALE] * len(r_chunk)
        yield TrainingBatch(
            src=_pad_rows([src for src, _ in rows]),
            tgt=_pad_rows([tgt for _, tgt in rows]),
            streams=tuple(streams),
        )


def _trim_pad_columns(rows: np.ndarray) -> np.ndarray:
    """Drop trailing all-PAD columns so widths depend only on these rows.

    A mixed batch is padded to its widest row across both streams; running
    one stream at the other stream's width would change BLAS reduction
    shapes and so the result's last ulp, breaking the exact pairing between
    STEP_BY_STEP at weight zero and STANDARD_DISTILL.
    """
    content = (rows != PAD).any(axis=0)
    width = int(np.nonzero(content)[0].max()) + 1 if content.any() else 1
    return rows[:, :width]


def _stream_loss(model: SeqModel, batch: TrainingBatch, stream: Prefix) -> t.Tensor:
    rows = [i for i, tag in enumerate(batch.streams) if tag is stream]
    if not rows:
        raise EmptySelection(f"batch has no {stream.name} rows")
    src = _trim_pad_columns(batch.src[rows])
    tgt = _trim_pad_columns(batch.tgt[rows])
    tgt_in, tgt_out = tgt[:, :-1], tgt[:, 1:]
    logits = forward_logits(model, src, tgt_in)
    flat = t.reshape(logits, (-1, model.config.vocab_size))
    return t.cross_entropy(flat, tgt_out.reshape(-1), ignore_index=PAD)


def label_loss(model: SeqModel, batch: TrainingBatch) -> t.Tensor:
    """Mean cross-entropy over non-pad target tokens of the LABEL rows."""
    return _stream_loss(model, batch, Prefix.LABEL)


def rationale_loss(model: SeqModel, batch: TrainingBatch) -> t.Tensor:
    """Mean cross-entropy over non-pad target tokens of the RATIONALE rows."""
    return _stream_loss(model, batch, Prefix.RATIONALE)


def combined_loss(model: SeqModel, batch: TrainingBatch, rationale_weight: float) -> t.Tensor:
    """label_loss + rationale_weight x rationale_loss."""
    return t.add(
        label_loss(model, batch),
        t.scale(rationale_loss(model, batch), rationale_weight),
    )


def predict_label(model: SeqModel, vocab: Vocab, text: str) -> str:
    """Greedy label prediction; offline — no teacher involved anywhere."""
    return _predict(model, vocab, text, Prefix.LABEL)


def predict_rationale(model: SeqModel, vocab: Vocab, text: str) -> str:
    """Greedy rationale generation for qualitative inspection."""
    return _predict(model, vocab, text, Prefix.RATIONALE)


def _predict(model: SeqModel, vocab: Vocab, text: str, prefix: Prefix) -> str:
    src = encode(vocab, text, prefix)[: model.config.max_src_len]
    ids = greedy_decode(model, src, max_len=model.config.max_tgt_len)
    return normalize(decode(vocab, ids))


def _validation_accuracy(model: SeqModel, vocab: Vocab, examples) -> float:
    scored = [ex for ex in examples if ex.gold_label]
    if not scored:
        raise ValueError("validation set has no gold labels")
    hits = sum(
        predict_label(model, vocab, ex.input) == normalize(ex.gold_label)
        for ex in scored
    )
    return hits / len(scored)


def train(
    model: SeqModel,
    train_set: Dataset,
    config: TrainConfig,
    vocab: Vocab,
    val_set: Dataset | None = None,
) -> TrainResult:
    """SGD with momentum until max_steps or a validation-accuracy plateau.

    Validation (gold labels, prediction-path accuracy) runs every
    eval_every steps; after `patience` evaluations without a new best the
    loop stops and the best-validation parameters are restored. Without a
    validation set the loop runs to max_steps and keeps the final weights.
    """
    if not train_set.examples:
        raise ValueError("training set is empty")
    velocity = {name: np.zeros_like(p.data) for name, p in model.params.items()}
    history: list[HistoryRow] = []
    best_snapshot = None
    best_accuracy = -1.0
    best_step = None
    evals_since_best = 0
    stopped_early = False
    step = 0

    for epoch in itertools.count():
        if step >= config.max_steps or stopped_early:
            break
        for batch in make_batches(train_set, config.variant, vocab, config, epoch):
            step += 1
            model.zero_grad()
            try:
                with t.tape():
                    if config.variant is Variant.STEP_BY_STEP:
                        l_loss = label_loss(model, batch)
                        r_loss = rationale_loss(model, batch)
                        loss = t.add(l_loss, t.scale(r_loss, config.rationale_weight))
                        r_value = r_loss.item()
                    else:
                        loss = l_loss = label_loss(model, batch)
                        r_value = None
            except t.NonFiniteInput:
                # exploded activations surface inside the forward pass before
                # the loss itself can be inspected
                raise DivergenceDetected(step, history) from None
            row = HistoryRow(step, l_loss.item(), r_value, loss.item())
            if not math.isfinite(row.combined_loss):
                raise DivergenceDetected(step, history + [row])
            t.backward(loss)
            for name, p in model.params.items():
                v = velocity[name]
                v *= config.momentum
                v += p.grad
                p.data = p.data - config.learning_rate * v

            if val_set is not None and step % config.eval_every == 0:
                accuracy = _validation_accuracy(model, vocab, val_set.examples)
                row.val_accuracy = accuracy
                if accuracy > best_accuracy:
                    best_accuracy = accuracy
                    best_step = step
                    best_snapshot = {k: p.data.copy() for k, p in model.params.items()}
                    evals_since_best = 0
                else:
                    evals_since_best += 1
            history.append(row)
            if val_set is not None and evals_since_best >= config.patience:
                stopped_early = True
                break
            if step >= config.max_steps:
                break

    if best_snapshot is not None:
        for name, p in model.params.items():
            p.data = best_snapshot[name]
    return TrainResult(
        model=model,
        history=history,
        best_val_accuracy=None if best_accuracy < 0 else best_accuracy,
        best_step=best_step,
        stopped_early=stopped_early,
    )


def save_history(history: Sequence[HistoryRow], path: str | Path) -> None:
    """Loss curve as CSV; empty cells where a value was not computed."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step", "label_loss", "rationale_loss", "combined_loss", "validation_accuracy"]
        )
        for row in history:
            writer.writerow(
                [
                    row.step,
                    repr(row.label_loss),
                    "" if row.rationale_loss is None else repr(row.rationale_loss),
                    repr(row.combined_loss),
                    "" if row.val_accuracy is None else repr(row.val_accuracy),
                ]
            )
