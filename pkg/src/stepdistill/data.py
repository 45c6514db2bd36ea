"""Synthetic tasks with derivable rationales, JSONL ingestion, splits.

Two generators cover the benchmark: integer arithmetic (expression ->
step-by-step reduction) and templated entailment over a closed world of
entities and attributes. Both label rules are pure functions of the input,
which is what lets the rule-based teacher reproduce them exactly.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

PLUS = "+"
MINUS = "−"  # − operator; ASCII "-" is kept for negative literals
TIMES = "×"  # ×

ENTAILMENT_CLASSES = ("entailment", "contradiction", "neutral")

ENTITIES = ("the box", "the cat", "the car", "the book", "the ball", "the cup")
ATTRIBUTES = {
    "color": ("red", "blue", "green", "yellow"),
    "size": ("big", "small", "huge", "tiny"),
    "material": ("wooden", "metal", "plastic", "glass"),
}
_FAMILY_OF = {v: fam for fam, vals in ATTRIBUTES.items() for v in vals}


class MalformedLine(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class MissingField(ValueError):
    def __init__(self, line_no: int, fieldname: str):
        super().__init__(f"line {line_no}: missing required field {fieldname!r}")
        self.line_no = line_no
        self.field = fieldname


@dataclass
class Example:
    """One task instance; gold_* are human labels, teacher_* come from a teacher."""

    input: str
    gold_label: str | None = None
    gold_rationale: str | None = None
    teacher_label: str | None = None
    teacher_rationale: str | None = None


@dataclass
class Dataset:
    name: str
    examples: list[Example] = field(default_factory=list)
    split: str = "train"

    def __len__(self) -> int:
        return len(self.examples)


# ---------------------------------------------------------------------------
# arithmetic task


def solve_arithmetic(expression: str) -> tuple[list[str], str]:
    """Reduce an expression to (step list, final value).

    Multiplications are reduced first, left to right, then additions and
    subtractions left to right; each reduction emits one "a op b = c" step.
    Raises ValueError on anything that is not alternating integer/operator.
    """
    toks = expression.split()
    if len(toks) < 3 or len(toks) % 2 == 0:
        raise ValueError(f"not an infix expression: {expression!r}")
    try:
        values = [int(toks[i]) for i in range(0, len(toks), 2)]
    except ValueError:
        raise ValueError(f"non-integer operand in {expression!r}") from None
    ops = [toks[i] for i in range(1, len(toks), 2)]
    if any(op not in (PLUS, MINUS, TIMES) for op in ops):
        raise ValueError(f"unknown operator in {expression!r}")

    steps = []
    i = 0
    while i < len(ops):
        if ops[i] == TIMES:
            result = values[i] * values[i + 1]
            steps.append(f"{values[i]} {TIMES} {values[i + 1]} = {result}")
            values[i : i + 2] = [result]
            ops.pop(i)
        else:
            i += 1
    acc = values[0]
    for op, v in zip(ops, values[1:]):
        result = acc + v if op == PLUS else acc - v
        steps.append(f"{acc} {op} {v} = {result}")
        acc = result
    return steps, str(acc)


def format_rationale(steps: Iterable[str]) -> str:
    return " ; ".join(steps)


def gen_arithmetic(seed: int, n: int, depth: int = 2) -> Dataset:
    """n random expressions over operands 0..9 and ops {+, −, ×}.

    ``depth`` caps the operator count; each example draws its count
    uniformly from 2..depth. Deterministic per seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 2 <= depth <= 4:
        raise ValueError("depth must be in 2..4")
    rng = random.Random(seed)
    examples = []
    for _ in range(n):
        n_ops = rng.randint(2, depth)
        toks = [str(rng.randint(0, 9))]
        for _ in range(n_ops):
            toks.append(rng.choice((PLUS, MINUS, TIMES)))
            toks.append(str(rng.randint(0, 9)))
        expression = " ".join(toks)
        steps, label = solve_arithmetic(expression)
        examples.append(
            Example(
                input=expression,
                gold_label=label,
                gold_rationale=format_rationale(steps),
            )
        )
    return Dataset(name="arithmetic", examples=examples)


# ---------------------------------------------------------------------------
# entailment task


def solve_entailment(text: str) -> tuple[str, str]:
    """Label a premise/hypothesis pair and cite the deciding fact.

    Same entity, same attribute -> entailment; same attribute family with a
    different value -> contradiction; different family -> neutral (the
    premise does not constrain it). Raises ValueError on malformed input.
    """
    try:
        premise, hypothesis = text.split(" . hypothesis : ")
        premise = premise.removeprefix("premise : ")
        hypothesis = hypothesis.removesuffix(" .")
        p_entity, p_value = premise.rsplit(" is ", 1)
        h_entity, h_value = hypothesis.rsplit(" is ", 1)
        p_family = _FAMILY_OF[p_value]
        h_family = _FAMILY_OF[h_value]
    except (ValueError, KeyError):
        raise ValueError(f"not a premise/hypothesis pair: {text!r}") from None

    cite = f"premise says {p_entity} is {p_value} ; hypothesis says {h_value}"
    if p_entity != h_entity:
        return f"{cite} ; different things compared", "neutral"
    if p_family != h_family:
        return f"{cite} ; {h_family} not stated", "neutral"
    if p_value == h_value:
        return f"{cite} ; {p_family}s match", "entailment"
    return f"{cite} ; {p_family}s conflict", "contradiction"


def gen_entailment(seed: int, n: int) -> Dataset:
    """n premise/hypothesis pairs with a balanced label assignment.

    Labels are assigned round-robin and shuffled, so the per-seed class
    distribution is always within one example of uniform.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = random.Random(seed)
    labels = [ENTAILMENT_CLASSES[i % 3] for i in range(n)]
    rng.shuffle(labels)
    families = tuple(ATTRIBUTES)
    examples = []
    for label in labels:
        entity = rng.choice(ENTITIES)
        p_family = rng.choice(families)
        p_value = rng.choice(ATTRIBUTES[p_family])
        if label == "entailment":
            h_value = p_value
        elif label == "contradiction":
            h_value = rng.choice([v for v in ATTRIBUTES[p_family] if v != p_value])
        else:
            h_family = rng.choice([f for f in families if f != p_family])
            h_value = rng.choice(ATTRIBUTES[h_family])
        text = f"premise : {entity} is {p_value} . hypothesis : {entity} is {h_value} ."
        rationale, derived = solve_entailment(text)
        assert derived == label
        examples.append(Example(input=text, gold_label=label, gold_rationale=rationale))
    return Dataset(name="entailment", examples=examples)


GENERATORS = {"arithmetic": gen_arithmetic, "entailment": gen_entailment}


# ---------------------------------------------------------------------------
# ingestion and split logic


def load_jsonl(path: str | Path, supervision: str = "gold") -> Dataset:
    """One Example per line; requires "input", takes optional "label"/"rationale".

    ``supervision`` selects which Example fields the optional values fill:
    "gold" for human-annotated files, "teacher" for extraction output.
    Unknown JSON fields are ignored.
    """
    if supervision not in ("gold", "teacher"):
        raise ValueError(f"supervision must be 'gold' or 'teacher', got {supervision!r}")
    path = Path(path)
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                raise MalformedLine(line_no, "blank line")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(line_no, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise MalformedLine(line_no, "line is not a JSON object")
            if "input" not in obj:
                raise MissingField(line_no, "input")
            ex = Example(input=str(obj["input"]))
            label = obj.get("label")
            rationale = obj.get("rationale")
            if supervision == "gold":
                ex.gold_label = None if label is None else str(label)
                ex.gold_rationale = None if rationale is None else str(rationale)
            else:
                ex.teacher_label = None if label is None else str(label)
                ex.teacher_rationale = None if rationale is None else str(rationale)
            examples.append(ex)
    return Dataset(name=path.stem, examples=examples)


def example_to_json(ex: Example, supervision: str = "gold") -> str:
    """One interchange-schema JSON line (no trailing newline)."""
    label = ex.gold_label if supervision == "gold" else ex.teacher_label
    rationale = ex.gold_rationale if supervision == "gold" else ex.teacher_rationale
    obj: dict = {"input": ex.input}
    if label is not None:
        obj["label"] = label
    if rationale is not None:
        obj["rationale"] = rationale
    return json.dumps(obj, ensure_ascii=False)


def save_jsonl(dataset: Dataset, path: str | Path, supervision: str = "gold") -> None:
    """Inverse of load_jsonl for the same interchange schema."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset.examples:
            fh.write(example_to_json(ex, supervision) + "\n")


def split_train_val(dataset: Dataset, val_fraction: float = 0.10, seed: int = 0):
    """Deterministic shuffle, floor(val_fraction * N) to validation, rest to train."""
    if not dataset.examples:
        raise ValueError("cannot split an empty dataset")
    indices = list(range(len(dataset.examples)))
    random.Random(seed).shuffle(indices)
    k = int(val_fraction * len(indices))
    val_idx, train_idx = indices[:k], indices[k:]
    train = Dataset(dataset.name, [dataset.examples[i] for i in train_idx], "train")
    val = Dataset(dataset.name, [dataset.examples[i] for i in val_idx], "validation")
    return train, val


def subsample(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Keep max(1, floor(fraction * N)) examples, nested across fractions.

    The kept set is a prefix of one seeded permutation, so for a fixed seed
    subsample(f1) is a subset of subsample(f2) whenever f1 <= f2. That makes
    adjacent points of a fraction sweep differ only by added data.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = len(dataset.examples)
    indices = list(range(n))
    random.Random(seed).shuffle(indices)
    keep = sorted(indices[: max(1, int(fraction * n))])
    return Dataset(dataset.name, [dataset.examples[i] for i in keep], dataset.split)


def mask_gold(dataset: Dataset) -> Dataset:
    """Unlabeled view: the same inputs with all gold supervision removed."""
    return Dataset(
        dataset.name,
        [replace(ex, gold_label=None, gold_rationale=None) for ex in dataset.examples],
        dataset.split,
    )


def drop_inputs_seen_in(dataset: Dataset, reference: Dataset) -> Dataset:
    """Remove examples whose input string also appears in ``reference``.

    The synthetic expression space is small enough that independently drawn
    splits would otherwise overlap; a held-out set is made genuinely held
    out by filtering against the train inputs.
    """
    seen = {ex.input for ex in reference.examples}
    return Dataset(
        dataset.name,
        [ex for ex in dataset.examples if ex.input not in seen],
        dataset.split,
    )
