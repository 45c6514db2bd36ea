"""Tests for batching, the two-stream loss algebra, and the training loop.

Supervision-isolation is enforced with access-tracking doubles: spy examples
record every attribute read, so a variant touching fields it must not see
fails loudly rather than silently changing the experiment's meaning.
"""

import math
import random
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from gradcheck import assert_grad_close
from stepdistill import tensor as t
from stepdistill.data import Dataset, Example, gen_arithmetic
from stepdistill.model import ModelConfig, build_model
from stepdistill.tokenizer import (
    PREFIX_LABEL,
    PREFIX_RATIONALE,
    Prefix,
    build_vocab,
    decode,
    normalize,
)
from stepdistill.trainer import (
    DivergenceDetected,
    EmptySelection,
    HistoryRow,
    MissingSupervision,
    TrainConfig,
    TrainingBatch,
    Variant,
    combined_loss,
    label_loss,
    make_batches,
    predict_label,
    predict_rationale,
    rationale_loss,
    save_history,
    train,
)


def with_teacher_fields(ds: Dataset, label_map=None) -> Dataset:
    """Copy gold supervision into the teacher fields (a perfect teacher)."""
    examples = [
        replace(
            ex,
            teacher_label=(label_map or (lambda s: s))(ex.gold_label),
            teacher_rationale=ex.gold_rationale,
        )
        for ex in ds.examples
    ]
    return Dataset(ds.name, examples, ds.split)


def vocab_for(ds: Dataset):
    corpus = []
    for ex in ds.examples:
        corpus += [ex.input, ex.gold_label or "", ex.gold_rationale or ""]
    return build_vocab(corpus, 512)


def small_model(vocab, seed=0, d=32):
    return build_model(ModelConfig(d, 1, 2, 2 * d, len(vocab), 32, 32), seed=seed)


def config(**overrides):
    base = dict(
        variant=Variant.STEP_BY_STEP,
        learning_rate=1e-2,
        batch_size=4,
        max_steps=50,
        eval_every=10**9,
        seed=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


class SpyExample:
    """Duck-typed Example recording every attribute read."""

    def __init__(self, ex: Example, log: set):
        object.__setattr__(self, "_ex", ex)
        object.__setattr__(self, "_log", log)

    def __getattr__(self, name):
        self._log.add(name)
        return getattr(self._ex, name)


def spied(ds: Dataset):
    log: set = set()
    return Dataset(ds.name, [SpyExample(ex, log) for ex in ds.examples]), log


@pytest.fixture(scope="module")
def setup():
    ds = with_teacher_fields(gen_arithmetic(seed=0, n=12, depth=2))
    return ds, vocab_for(ds)


class TestMakeBatches:
    def test_step_by_step_emits_two_rows_per_example(self, setup):
        ds, vocab = setup
        batches = list(make_batches(ds, Variant.STEP_BY_STEP, vocab, config(), 0))
        total = sum(b.src.shape[0] for b in batches)
        assert total == 2 * len(ds.examples)
        for b in batches:
            n_label = sum(tag is Prefix.LABEL for tag in b.streams)
            assert n_label == len(b.streams) - n_label  # half each

    def test_standard_variants_emit_only_label_rows(self, setup):
        ds, vocab = setup
        for variant in (Variant.STANDARD_FINETUNE, Variant.STANDARD_DISTILL):
            batches = list(make_batches(ds, variant, vocab, config(), 0))
            assert sum(b.src.shape[0] for b in batches) == len(ds.examples)
            assert all(tag is Prefix.LABEL for b in batches for tag in b.streams)

    def test_prefix_ids_at_position_zero(self, setup):
        ds, vocab = setup
        for b in make_batches(ds, Variant.STEP_BY_STEP, vocab, config(), 0):
            for row, tag in zip(b.src, b.streams):
                expected = PREFIX_LABEL if tag is Prefix.LABEL else PREFIX_RATIONALE
                assert row[0] == expected

    def test_distill_targets_are_teacher_labels_never_gold(self, setup):
        _, vocab = setup
        gold = gen_arithmetic(seed=1, n=6, depth=2)
        twisted = with_teacher_fields(gold, label_map=lambda s: "7")
        for b in make_batches(twisted, Variant.STANDARD_DISTILL, vocab, config(), 0):
            for row in b.tgt:
                assert decode(vocab, row) == "7"

    def test_same_epoch_seed_identical_batches(self, setup):
        ds, vocab = setup
        a = list(make_batches(ds, Variant.STEP_BY_STEP, vocab, config(), 3))
        b = list(make_batches(ds, Variant.STEP_BY_STEP, vocab, config(), 3))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.src, y.src)
            np.testing.assert_array_equal(x.tgt, y.tgt)
            assert x.streams == y.streams

    def test_different_epochs_reshuffle(self, setup):
        ds, vocab = setup
        a = list(make_batches(ds, Variant.STANDARD_DISTILL, vocab, config(), 0))
        b = list(make_batches(ds, Variant.STANDARD_DISTILL, vocab, config(), 1))
        assert any(
            x.src.shape != y.src.shape or not np.array_equal(x.src, y.src)
            for x, y in zip(a, b)
        )

    def test_label_stream_shared_between_distill_and_step(self, setup):
        ds, vocab = setup
        distill = list(make_batches(ds, Variant.STANDARD_DISTILL, vocab, config(), 2))
        step = list(make_batches(ds, Variant.STEP_BY_STEP, vocab, config(), 2))
        assert len(distill) == len(step)
        for d_batch, s_batch in zip(distill, step):
            n = d_batch.src.shape[0]
            label_rows = s_batch.src[:n]
            width = d_batch.src.shape[1]
            np.testing.assert_array_equal(label_rows[:, :width], d_batch.src)

    def test_rationale_rows_shuffled_independently(self, setup):
        ds, vocab = setup
        cfg = config(batch_size=len(ds.examples))
        (batch,) = make_batches(ds, Variant.STEP_BY_STEP, vocab, cfg, 0)
        n = len(ds.examples)
        label_first = [tuple(r) for r in batch.src[:n, 1:]]
        rationale_first = [tuple(r) for r in batch.src[n:, 1:]]
        assert label_first != rationale_first  # same inputs, different order
        assert sorted(label_first) == sorted(rationale_first)

    def test_baseline_concatenates_rationale_into_source(self):
        ds = with_teacher_fields(gen_arithmetic(seed=2, n=3, depth=2))
        vocab = vocab_for(ds)
        cfg = config(batch_size=1, max_input_len=64)
        batches = list(
            make_batches(ds, Variant.RATIONALE_INPUT_BASELINE, vocab, cfg, 0)
        )
        decoded = {decode(vocab, b.src[0]) for b in batches}
        expected = {
            normalize(f"{ex.input} ; {ex.teacher_rationale}") for ex in ds.examples
        }
        assert decoded == expected

    def test_missing_supervision_reports_index_and_field(self, setup):
        _, vocab = setup
        ds = gen_arithmetic(seed=3, n=3, depth=2)  # no teacher fields
        with pytest.raises(MissingSupervision) as exc:
            list(make_batches(ds, Variant.STANDARD_DISTILL, vocab, config(), 0))
        assert exc.value.field == "teacher_label"
        unlabeled = Dataset("x", [Example(input="1 + 2 + 3")])
        with pytest.raises(MissingSupervision) as exc:
            list(make_batches(unlabeled, Variant.STANDARD_FINETUNE, vocab, config(), 0))
        assert (exc.value.index, exc.value.field) == (0, "gold_label")

    def test_finetune_never_reads_teacher_fields(self, setup):
        ds, vocab = setup
        spy_ds, log = spied(ds)
        list(make_batches(spy_ds, Variant.STANDARD_FINETUNE, vocab, config(), 0))
        assert "teacher_label" not in log
        assert "teacher_rationale" not in log

    def test_distill_and_step_never_read_gold(self, setup):
        ds, vocab = setup
        for variant in (Variant.STANDARD_DISTILL, Variant.STEP_BY_STEP,
                        Variant.RATIONALE_INPUT_BASELINE):
            spy_ds, log = spied(ds)
            list(make_batches(spy_ds, variant, vocab, config(), 0))
            assert "gold_label" not in log, variant
            assert "gold_rationale" not in log, variant


class TestLosses:
    def batch(self, setup, **cfg_overrides):
        ds, vocab = setup
        cfg = config(batch_size=len(ds.examples), **cfg_overrides)
        (batch,) = make_batches(ds, Variant.STEP_BY_STEP, vocab, cfg, 0)
        return ds, vocab, batch

    def test_uniform_model_gives_log_vocab(self, setup):
        ds, vocab, batch = self.batch(setup)
        model = small_model(vocab)
        for p in model.params.values():
            p.data[:] = 0.0
        assert abs(label_loss(model, batch).item() - math.log(len(vocab))) < 1e-9
        assert abs(rationale_loss(model, batch).item() - math.log(len(vocab))) < 1e-9

    def test_label_loss_equals_direct_cross_entropy(self, setup):
        ds, vocab, batch = self.batch(setup)
        from stepdistill.model import forward_logits
        from stepdistill.tokenizer import PAD

        model = small_model(vocab, seed=3)
        # the same label rows, batched alone (so no rationale-width padding)
        cfg = config(batch_size=len(ds.examples))
        (label_only,) = make_batches(ds, Variant.STANDARD_DISTILL, vocab, cfg, 0)
        src, tgt = label_only.src, label_only.tgt
        logits = forward_logits(model, src, tgt[:, :-1])
        direct = t.cross_entropy(
            t.reshape(logits, (-1, len(vocab))), tgt[:, 1:].reshape(-1), PAD
        ).item()
        assert label_loss(model, batch).item() == direct

    def test_duplicating_rows_keeps_mean(self, setup):
        ds, vocab, batch = self.batch(setup)
        model = small_model(vocab, seed=4)
        doubled = TrainingBatch(
            src=np.concatenate([batch.src, batch.src]),
            tgt=np.concatenate([batch.tgt, batch.tgt]),
            streams=batch.streams + batch.streams,
        )
        a = label_loss(model, batch).item()
        b = label_loss(model, doubled).item()
        assert abs(a - b) < 1e-12

    def test_rationale_loss_ignores_label_rows(self, setup):
        ds, vocab, batch = self.batch(setup)
        model = small_model(vocab, seed=5)
        rows = [i for i, tag in enumerate(batch.streams) if tag is Prefix.RATIONALE]
        only_rationale = TrainingBatch(
            src=batch.src[rows],
            tgt=batch.tgt[rows],
            streams=tuple(Prefix.RATIONALE for _ in rows),
        )
        assert (
            rationale_loss(model, batch).item()
            == rationale_loss(model, only_rationale).item()
        )

    def test_combined_loss_affine_in_rationale_weight(self, setup):
        ds, vocab, batch = self.batch(setup)
        model = small_model(vocab, seed=6)
        l_value = label_loss(model, batch).item()
        r_value = rationale_loss(model, batch).item()
        for weight in (0.0, 0.5, 1.0, 2.0):
            combined = combined_loss(model, batch, weight).item()
            assert abs(combined - (l_value + weight * r_value)) <= 1e-12

    def test_combined_at_zero_weight_equals_label_loss(self, setup):
        ds, vocab, batch = self.batch(setup)
        model = small_model(vocab, seed=7)
        assert combined_loss(model, batch, 0.0).item() == label_loss(model, batch).item()

    def test_empty_selection(self, setup):
        ds, vocab, batch = self.batch(setup)
        model = small_model(vocab)
        rows = [i for i, tag in enumerate(batch.streams) if tag is Prefix.LABEL]
        label_only = TrainingBatch(
            src=batch.src[rows],
            tgt=batch.tgt[rows],
            streams=tuple(Prefix.LABEL for _ in rows),
        )
        with pytest.raises(EmptySelection):
            rationale_loss(model, label_only)

    def test_combined_gradient_matches_finite_differences(self, setup):
        ds, vocab = setup
        cfg = config(batch_size=3)
        batch = next(iter(make_batches(ds, Variant.STEP_BY_STEP, vocab, cfg, 0)))
        model = build_model(ModelConfig(8, 1, 2, 16, len(vocab), 32, 32), seed=8)

        with t.tape():
            loss = combined_loss(model, batch, 0.7)
        t.backward(loss)
        rng = random.Random(1)
        for name in ("embedding", "dec0.self.wq"):
            param = model.params[name]
            coords = [rng.randrange(param.size) for _ in range(4)]
            assert_grad_close(
                param.grad,
                lambda: combined_loss(model, batch, 0.7).item(),
                param.data,
                coords,
                tol=1e-4,
            )


class TestTrain:
    def test_overfit_eight_examples(self):
        ds = with_teacher_fields(gen_arithmetic(seed=0, n=8, depth=2))
        vocab = vocab_for(ds)
        model = small_model(vocab, seed=1)
        cfg = config(
            variant=Variant.STANDARD_FINETUNE,
            batch_size=8,
            max_steps=600,
            learning_rate=3e-3,
        )
        result = train(model, ds, cfg, vocab)
        accuracy = sum(
            predict_label(model, vocab, ex.input) == normalize(ex.gold_label)
            for ex in ds.examples
        ) / len(ds.examples)
        assert accuracy == 1.0
        assert len(result.history) == 600

    def test_two_runs_bitwise_identical(self):
        ds = with_teacher_fields(gen_arithmetic(seed=4, n=10, depth=2))
        vocab = vocab_for(ds)
        results = []
        for _ in range(2):
            model = small_model(vocab, seed=2)
            train(model, ds, config(max_steps=30), vocab)
            results.append({k: p.data.copy() for k, p in model.params.items()})
        for name in results[0]:
            np.testing.assert_array_equal(results[0][name], results[1][name])

    def test_zero_weight_step_matches_distill_label_losses(self):
        ds = with_teacher_fields(gen_arithmetic(seed=5, n=12, depth=2))
        vocab = vocab_for(ds)
        trajectories = {}
        for variant, weight in [
            (Variant.STANDARD_DISTILL, 1.0),
            (Variant.STEP_BY_STEP, 0.0),
        ]:
            model = small_model(vocab, seed=3)
            cfg = config(variant=variant, rationale_weight=weight, max_steps=40)
            result = train(model, ds, cfg, vocab)
            trajectories[variant] = [h.label_loss for h in result.history]
        assert (
            trajectories[Variant.STANDARD_DISTILL]
            == trajectories[Variant.STEP_BY_STEP]
        )

    def test_memorizes_single_rationale(self):
        ds = with_teacher_fields(gen_arithmetic(seed=3, n=1, depth=2))
        vocab = vocab_for(ds)
        model = small_model(vocab, seed=2)
        cfg = config(batch_size=1, max_steps=500, learning_rate=1e-2)
        result = train(model, ds, cfg, vocab)
        assert any(h.rationale_loss < 0.01 for h in result.history)

    def test_divergence_detected_with_partial_history(self):
        ds = with_teacher_fields(gen_arithmetic(seed=6, n=8, depth=2))
        vocab = vocab_for(ds)
        model = small_model(vocab, seed=4)
        cfg = config(learning_rate=1e6, max_steps=50)
        with pytest.raises(DivergenceDetected) as exc:
            train(model, ds, cfg, vocab)
        assert 0 < len(exc.value.history) <= 50

    def test_early_stopping_on_plateau_restores_best(self):
        ds = with_teacher_fields(gen_arithmetic(seed=7, n=8, depth=2))
        vocab = vocab_for(ds)
        # validation gold outside the vocabulary: accuracy is pinned at 0,
        # so the first evaluation is the best and patience runs out
        val = Dataset("val", [Example(input="1 + 1 + 1", gold_label="zzz qqq")])
        model = small_model(vocab, seed=5)
        cfg = config(max_steps=10_000, eval_every=2, patience=3)
        result = train(model, ds, cfg, vocab, val_set=val)
        assert result.stopped_early
        assert result.best_step == 2
        assert result.best_val_accuracy == 0.0
        assert len(result.history) == 2 * (1 + cfg.patience)

    def test_history_csv_round_trip(self, tmp_path):
        rows = [
            HistoryRow(1, 2.5, None, 2.5, None),
            HistoryRow(2, 2.0, 3.0, 5.0, 0.25),
        ]
        path = tmp_path / "history.csv"
        save_history(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "step,label_loss,rationale_loss,combined_loss,validation_accuracy"
        assert lines[1] == "1,2.5,,2.5,"
        assert lines[2] == "2,2.0,3.0,5.0,0.25"

    def test_predictions_clean_and_deterministic(self):
        ds = with_teacher_fields(gen_arithmetic(seed=8, n=4, depth=2))
        vocab = vocab_for(ds)
        model = small_model(vocab, seed=6)
        train(model, ds, config(max_steps=120, batch_size=4), vocab)
        for ex in ds.examples:
            label = predict_label(model, vocab, ex.input)
            rationale = predict_rationale(model, vocab, ex.input)
            assert label == predict_label(model, vocab, ex.input)
            assert rationale == predict_rationale(model, vocab, ex.input)
            for reserved in ("<pad>", "<bos>", "<eos>", "[label]", "[rationale]"):
                assert reserved not in label
                assert reserved not in rationale

    def test_prefixes_select_different_heads_after_overfit(self):
        ds = with_teacher_fields(gen_arithmetic(seed=9, n=2, depth=2))
        vocab = vocab_for(ds)
        model = small_model(vocab, seed=7)
        train(model, ds, config(max_steps=400, batch_size=2, learning_rate=1e-2), vocab)
        ex = ds.examples[0]
        label = predict_label(model, vocab, ex.input)
        rationale = predict_rationale(model, vocab, ex.input)
        assert label == normalize(ex.teacher_label)
        assert rationale == normalize(ex.teacher_rationale)
        assert label != rationale

    def test_prediction_invariant_to_logit_temperature(self, monkeypatch):
        ds = with_teacher_fields(gen_arithmetic(seed=10, n=4, depth=2))
        vocab = vocab_for(ds)
        model = small_model(vocab, seed=8)
        baseline = [predict_label(model, vocab, ex.input) for ex in ds.examples]

        import stepdistill.model as model_module

        original = model_module.decode_logits

        def scaled(model_arg, memory, src, tgt_in):
            return t.scale(original(model_arg, memory, src, tgt_in), 3.7)

        monkeypatch.setattr(model_module, "decode_logits", scaled)
        rescaled = [predict_label(model, vocab, ex.input) for ex in ds.examples]
        assert rescaled == baseline

    def test_trainer_importable_without_teacher_module(self):
        code = (
            "import sys\n"
            "import stepdistill.trainer\n"
            "assert 'stepdistill.teacher' not in sys.modules, 'teacher was imported'\n"
            "assert 'requests' not in sys.modules, 'teacher HTTP stack was imported'\n"
        )
        subprocess.run([sys.executable, "-c", code], check=True)
