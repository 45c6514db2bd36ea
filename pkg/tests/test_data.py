"""Tests for synthetic generators, JSONL ingestion, and split logic.

The arithmetic oracle here is deliberately independent of the library's
solver: it rewrites the expression into Python syntax and lets eval()
apply operator precedence, so any precedence or reduction bug in the
generator cannot hide.
"""

import json
import random

import pytest

from stepdistill.data import (
    ATTRIBUTES,
    ENTAILMENT_CLASSES,
    Dataset,
    Example,
    MalformedLine,
    MissingField,
    drop_inputs_seen_in,
    format_rationale,
    gen_arithmetic,
    gen_entailment,
    load_jsonl,
    mask_gold,
    save_jsonl,
    solve_arithmetic,
    solve_entailment,
    split_train_val,
    subsample,
)


def eval_expression(expression: str) -> str:
    """Independent reference: Python's own precedence rules."""
    translated = expression.replace("−", "-").replace("×", "*")
    return str(eval(translated, {"__builtins__": {}}, {}))


class TestArithmetic:
    def test_forced_example(self):
        steps, label = solve_arithmetic("7 − 2 × 3")
        assert label == "1"
        assert format_rationale(steps) == "2 × 3 = 6 ; 7 − 6 = 1"

    def test_labels_match_independent_evaluator(self):
        ds = gen_arithmetic(seed=11, n=2000, depth=4)
        for ex in ds.examples:
            assert ex.gold_label == eval_expression(ex.input), ex.input

    def test_rationale_steps_are_each_true_and_end_with_label(self):
        ds = gen_arithmetic(seed=3, n=500, depth=4)
        for ex in ds.examples:
            steps = ex.gold_rationale.split(" ; ")
            for step in steps:
                lhs, rhs = step.split(" = ")
                assert eval_expression(lhs) == rhs, step
            assert steps[-1].endswith(f"= {ex.gold_label}")

    def test_same_seed_identical(self):
        assert gen_arithmetic(5, 200) == gen_arithmetic(5, 200)

    def test_different_seeds_differ(self):
        a = gen_arithmetic(1, 200)
        b = gen_arithmetic(2, 200)
        assert [e.input for e in a.examples] != [e.input for e in b.examples]

    @pytest.mark.parametrize("depth", [2, 3, 4])
    def test_operator_count_within_depth(self, depth):
        ds = gen_arithmetic(seed=7, n=300, depth=depth)
        counts = set()
        for ex in ds.examples:
            n_ops = sum(tok in "+−×" for tok in ex.input.split())
            assert 2 <= n_ops <= depth
            counts.add(n_ops)
        assert counts == set(range(2, depth + 1))

    def test_operands_single_digit(self):
        ds = gen_arithmetic(seed=9, n=300, depth=4)
        for ex in ds.examples:
            for tok in ex.input.split():
                if tok not in "+−×":
                    assert tok.isdigit() and 0 <= int(tok) <= 9

    def test_preconditions(self):
        with pytest.raises(ValueError):
            gen_arithmetic(0, 0)
        with pytest.raises(ValueError):
            gen_arithmetic(0, 10, depth=1)
        with pytest.raises(ValueError):
            gen_arithmetic(0, 10, depth=5)

    @pytest.mark.parametrize(
        "bad",
        ["", "3 +", "+ 3 4", "3 / 4", "3 + four", "3 4", "3 + 4 5"],
    )
    def test_solver_rejects_malformed(self, bad):
        with pytest.raises(ValueError):
            solve_arithmetic(bad)

    def test_all_multiplications(self):
        steps, label = solve_arithmetic("2 × 3 × 4")
        assert label == "24"
        assert steps == ["2 × 3 = 6", "6 × 4 = 24"]

    def test_negative_intermediates(self):
        steps, label = solve_arithmetic("1 − 3 + 2")
        assert label == "0"
        assert steps == ["1 − 3 = -2", "-2 + 2 = 0"]


class TestEntailment:
    def test_contradiction_rule(self):
        text = "premise : the box is red . hypothesis : the box is blue ."
        rationale, label = solve_entailment(text)
        assert label == "contradiction"
        assert rationale == (
            "premise says the box is red ; hypothesis says blue ; colors conflict"
        )

    def test_entailment_rule(self):
        text = "premise : the box is red . hypothesis : the box is red ."
        rationale, label = solve_entailment(text)
        assert label == "entailment"
        assert rationale.endswith("colors match")

    def test_neutral_rule(self):
        text = "premise : the box is red . hypothesis : the box is big ."
        rationale, label = solve_entailment(text)
        assert label == "neutral"
        assert rationale.endswith("size not stated")

    def test_labels_match_rules(self):
        ds = gen_entailment(seed=21, n=1200)
        for ex in ds.examples:
            rationale, label = solve_entailment(ex.input)
            assert ex.gold_label == label
            assert ex.gold_rationale == rationale

    @pytest.mark.parametrize("seed", range(5))
    def test_distribution_within_5pct_of_uniform(self, seed):
        n = 900
        ds = gen_entailment(seed=seed, n=n)
        for cls in ENTAILMENT_CLASSES:
            share = sum(ex.gold_label == cls for ex in ds.examples) / n
            assert abs(share - 1 / 3) < 0.05

    def test_same_seed_identical(self):
        assert gen_entailment(4, 90) == gen_entailment(4, 90)

    def test_vocabulary_closed(self):
        values = {v for vals in ATTRIBUTES.values() for v in vals}
        ds = gen_entailment(seed=2, n=300)
        for ex in ds.examples:
            last = ex.input.split()[-2]
            assert last in values

    def test_solver_rejects_malformed(self):
        for bad in ["", "the box is red", "premise : x . hypothesis : y ."]:
            with pytest.raises(ValueError):
                solve_entailment(bad)


class TestLoadJsonl:
    def write(self, tmp_path, lines):
        path = tmp_path / "data.jsonl"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    def test_three_well_formed_lines(self, tmp_path):
        path = self.write(
            tmp_path,
            [
                json.dumps({"input": "1 + 2 + 3", "label": "6"}),
                json.dumps({"input": "2 × 2 × 2", "rationale": "2 × 2 = 4 ; 4 × 2 = 8"}),
                json.dumps({"input": "just text"}),
            ],
        )
        ds = load_jsonl(path)
        assert len(ds) == 3
        assert ds.name == "data"
        assert ds.examples[0].gold_label == "6"
        assert ds.examples[0].gold_rationale is None
        assert ds.examples[1].gold_rationale == "2 × 2 = 4 ; 4 × 2 = 8"
        assert ds.examples[2].gold_label is None

    def test_order_preserved(self, tmp_path):
        path = self.write(
            tmp_path, [json.dumps({"input": str(i)}) for i in range(50)]
        )
        ds = load_jsonl(path)
        assert [ex.input for ex in ds.examples] == [str(i) for i in range(50)]

    def test_unknown_fields_ignored(self, tmp_path):
        path = self.write(
            tmp_path, [json.dumps({"input": "x", "label": "y", "split": "weird", "id": 7})]
        )
        ds = load_jsonl(path)
        assert ds.examples[0] == Example(input="x", gold_label="y")

    def test_teacher_supervision_fills_teacher_fields(self, tmp_path):
        path = self.write(
            tmp_path, [json.dumps({"input": "x", "label": "y", "rationale": "r"})]
        )
        ex = load_jsonl(path, supervision="teacher").examples[0]
        assert (ex.gold_label, ex.gold_rationale) == (None, None)
        assert (ex.teacher_label, ex.teacher_rationale) == ("y", "r")

    def test_missing_input_reports_line_number(self, tmp_path):
        path = self.write(
            tmp_path,
            [json.dumps({"input": "ok"}), json.dumps({"label": "no input"})],
        )
        with pytest.raises(MissingField) as excinfo:
            load_jsonl(path)
        assert excinfo.value.line_no == 2
        assert excinfo.value.field == "input"

    def test_malformed_json_reports_line_number(self, tmp_path):
        path = self.write(tmp_path, [json.dumps({"input": "ok"}), "{not json"])
        with pytest.raises(MalformedLine) as excinfo:
            load_jsonl(path)
        assert excinfo.value.line_no == 2

    def test_non_object_line_rejected(self, tmp_path):
        path = self.write(tmp_path, ['["input", "x"]'])
        with pytest.raises(MalformedLine):
            load_jsonl(path)

    def test_bad_supervision_value(self, tmp_path):
        path = self.write(tmp_path, [json.dumps({"input": "x"})])
        with pytest.raises(ValueError):
            load_jsonl(path, supervision="silver")

    def test_large_file_count(self, tmp_path):
        n = 549_367
        path = tmp_path / "big.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for _ in range(n):
                fh.write('{"input": "a"}\n')
        assert len(load_jsonl(path)) == n

    def test_save_load_round_trip(self, tmp_path):
        ds = gen_arithmetic(seed=6, n=40)
        path = tmp_path / "round.jsonl"
        save_jsonl(ds, path)
        loaded = load_jsonl(path)
        assert [
            (e.input, e.gold_label, e.gold_rationale) for e in loaded.examples
        ] == [(e.input, e.gold_label, e.gold_rationale) for e in ds.examples]


class TestSplits:
    def test_ninety_ten(self):
        ds = gen_arithmetic(seed=1, n=100)
        train, val = split_train_val(ds, seed=0)
        assert (len(train), len(val)) == (90, 10)
        assert train.split == "train"
        assert val.split == "validation"

    def test_partition(self):
        ds = gen_arithmetic(seed=1, n=73)
        train, val = split_train_val(ds, seed=0)
        combined = sorted(
            [e.input for e in train.examples] + [e.input for e in val.examples]
        )
        assert combined == sorted(e.input for e in ds.examples)

    def test_deterministic_and_seed_sensitive(self):
        ds = gen_arithmetic(seed=1, n=100)
        first = split_train_val(ds, seed=3)
        again = split_train_val(ds, seed=3)
        assert first == again
        partitions = {
            tuple(e.input for e in split_train_val(ds, seed=s)[1].examples)
            for s in range(10)
        }
        assert len(partitions) == 10

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            split_train_val(Dataset("empty"), seed=0)


class TestSubsample:
    def test_floor_arithmetic(self):
        ds = gen_entailment(seed=0, n=720)
        assert len(subsample(ds, 0.125, seed=0)) == 90

    def test_identity_at_full_fraction(self):
        ds = gen_arithmetic(seed=0, n=64)
        assert subsample(ds, 1.0, seed=5).examples == ds.examples

    def test_at_least_one_kept(self):
        ds = gen_arithmetic(seed=0, n=10)
        assert len(subsample(ds, 0.01, seed=0)) == 1

    @pytest.mark.parametrize("seed", range(5))
    def test_nesting_over_grid(self, seed):
        ds = gen_arithmetic(seed=8, n=640)
        grid = [0.0625, 0.125, 0.25, 0.5, 1.0]
        previous: set = set()
        for fraction in grid:
            kept = {e.input for e in subsample(ds, fraction, seed=seed).examples}
            assert previous <= kept
            previous = kept

    def test_fraction_bounds(self):
        ds = gen_arithmetic(seed=0, n=10)
        for bad in (0.0, -0.5, 1.5):
            with pytest.raises(ValueError):
                subsample(ds, bad, seed=0)

    def test_order_preserved(self):
        ds = gen_arithmetic(seed=2, n=100)
        sub = subsample(ds, 0.5, seed=1)
        positions = [ds.examples.index(e) for e in sub.examples]
        assert positions == sorted(positions)


class TestViews:
    def test_mask_gold_strips_supervision(self):
        ds = gen_arithmetic(seed=1, n=20)
        masked = mask_gold(ds)
        assert all(
            e.gold_label is None and e.gold_rationale is None for e in masked.examples
        )
        assert [e.input for e in masked.examples] == [e.input for e in ds.examples]
        assert ds.examples[0].gold_label is not None  # original untouched

    def test_drop_inputs_seen_in(self):
        train = gen_arithmetic(seed=1, n=500, depth=2)
        test = gen_arithmetic(seed=2, n=500, depth=2)
        filtered = drop_inputs_seen_in(test, train)
        train_inputs = {e.input for e in train.examples}
        assert all(e.input not in train_inputs for e in filtered.examples)
        # depth-2 expression space is small, so collisions must exist
        assert len(filtered) < len(test)
