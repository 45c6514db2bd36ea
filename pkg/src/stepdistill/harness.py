"""Experiment orchestration: sweeps over method x fraction x size x seed.

The harness owns everything the trainer should not know about: task setup,
teacher extraction (done once over the full training pool and shared by all
cells), nested subsampling, metrics records, resumability, and aggregation.
Training cells are deterministic given (config, seed), so a finished
records.csv is reproducible bit-for-bit in its accuracy column.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields as dataclass_fields, replace
from pathlib import Path

from .data import (
    Dataset,
    GENERATORS,
    drop_inputs_seen_in,
    load_jsonl,
    mask_gold,
    split_train_val,
    subsample,
)
from .model import SIZE_LADDER, build_model, config_for_size, param_count
from .tokenizer import Vocab, build_vocab, normalize
from .trainer import TrainConfig, Variant, predict_label, train

log = logging.getLogger(__name__)

RECORD_COLUMNS = (
    "method",
    "fraction",
    "model_size",
    "seed",
    "param_count",
    "train_examples_used",
    "test_accuracy",
    "wall_clock_seconds",
)
SUMMARY_COLUMNS = (
    "method",
    "fraction",
    "model_size",
    "mean_accuracy",
    "std_error",
    "n_seeds",
)


class NoGoldLabels(ValueError):
    """evaluate() needs gold labels on every test example."""


class ConfigError(ValueError):
    """Experiment configuration is malformed; nothing was run."""


def exact_match(prediction: str, gold: str) -> bool:
    """Case/whitespace-insensitive string equality; no numeric coercion."""
    return normalize(prediction) == normalize(gold)


def evaluate(model, vocab: Vocab, dataset: Dataset) -> float:
    """Exact-match accuracy of the label prediction path over a test split.

    Uses predict_label only: no rationales are generated and no teacher is
    consulted, mirroring how the student would actually be deployed.
    """
    if not dataset.examples:
        raise NoGoldLabels("test set is empty")
    if any(ex.gold_label is None for ex in dataset.examples):
        raise NoGoldLabels("every test example needs a gold label")
    hits = sum(
        exact_match(predict_label(model, vocab, ex.input), ex.gold_label)
        for ex in dataset.examples
    )
    return hits / len(dataset.examples)


# ---------------------------------------------------------------------------
# configuration


def _check_known_keys(obj: dict, allowed, where: str):
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


@dataclass(frozen=True)
class DataSpec:
    n_train: int = 2000
    n_test: int = 400
    seed: int = 0
    depth: int = 2
    test_fraction: float = 0.2  # used only by file-based tasks

    @classmethod
    def from_dict(cls, obj: dict) -> "DataSpec":
        _check_known_keys(obj, [f.name for f in dataclass_fields(cls)], "data")
        return cls(**obj)


@dataclass(frozen=True)
class TeacherSpec:
    kind: str = "oracle"  # oracle | remote
    noise_rate: float = 0.0
    endpoint: str = ""
    cache_dir: str = ""
    auth_env: str = "TEACHER_API_TOKEN"
    max_parallel: int = 4
    max_retries: int = 3
    timeout: float = 30.0
    template: str = ""  # prompt template name for remote; defaults to the task

    @classmethod
    def from_dict(cls, obj: dict) -> "TeacherSpec":
        _check_known_keys(obj, [f.name for f in dataclass_fields(cls)], "teacher")
        spec = cls(**obj)
        if spec.kind not in ("oracle", "remote"):
            raise ConfigError(f"teacher.kind must be oracle or remote, got {spec.kind!r}")
        if spec.kind == "remote" and not (spec.endpoint and spec.cache_dir):
            raise ConfigError("remote teacher needs endpoint and cache_dir")
        return spec


@dataclass(frozen=True)
class TrainSpec:
    learning_rate: float = 1e-2
    batch_size: int = 16
    max_steps: int = 1500
    eval_every: int = 100
    patience: int = 5
    rationale_weight: float = 1.0
    max_input_len: int = 64
    max_output_len: int = 64

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainSpec":
        _check_known_keys(obj, [f.name for f in dataclass_fields(cls)], "train")
        return cls(**obj)


@dataclass(frozen=True)
class AugmentationSpec:
    n: int
    seed: int

    @classmethod
    def from_dict(cls, obj: dict) -> "AugmentationSpec":
        _check_known_keys(obj, [f.name for f in dataclass_fields(cls)], "augmentation")
        return cls(**obj)


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    out_dir: str
    methods: tuple[Variant, ...] = (Variant.STANDARD_DISTILL, Variant.STEP_BY_STEP)
    fractions: tuple[float, ...] = (0.0625, 0.125, 0.25, 0.5, 1.0)
    sizes: tuple[str, ...] = ("small",)
    seeds: tuple[int, ...] = (0, 1, 2, 3)
    supervision: str = "labeled"  # labeled | unlabeled
    teacher: TeacherSpec = field(default_factory=TeacherSpec)
    augmentation: AugmentationSpec | None = None
    data: DataSpec = field(default_factory=DataSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    max_vocab: int = 4096
    workers: int = 1

    def __post_init__(self):
        if not (self.methods and self.fractions and self.sizes and self.seeds):
            raise ConfigError("methods, fractions, sizes, and seeds must be non-empty")
        if list(self.fractions) != sorted(set(self.fractions)):
            raise ConfigError("fractions must be strictly increasing")
        if any(not 0.0 < f <= 1.0 for f in self.fractions):
            raise ConfigError("fractions must lie in (0, 1]")
        for size in self.sizes:
            if size not in SIZE_LADDER:
                raise ConfigError(f"unknown model size {size!r}")
        if self.supervision not in ("labeled", "unlabeled"):
            raise ConfigError("supervision must be labeled or unlabeled")
        if (
            self.supervision == "unlabeled"
            and Variant.STANDARD_FINETUNE in self.methods
        ):
            raise ConfigError(
                "standard_finetune needs gold labels; drop it or use labeled mode"
            )
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        allowed = [f.name for f in dataclass_fields(cls)]
        _check_known_keys(obj, allowed, "experiment config")
        obj = dict(obj)
        if "task" not in obj or "out_dir" not in obj:
            raise ConfigError("config needs at least 'task' and 'out_dir'")
        try:
            if "methods" in obj:
                obj["methods"] = tuple(Variant(m) for m in obj["methods"])
        except ValueError as exc:
            raise ConfigError(f"unknown method: {exc}") from None
        for key in ("fractions", "sizes", "seeds"):
            if key in obj:
                obj[key] = tuple(obj[key])
        if "teacher" in obj:
            obj["teacher"] = TeacherSpec.from_dict(obj["teacher"])
        if "data" in obj:
            obj["data"] = DataSpec.from_dict(obj["data"])
        if "train" in obj:
            obj["train"] = TrainSpec.from_dict(obj["train"])
        if obj.get("augmentation") is not None:
            obj["augmentation"] = AugmentationSpec.from_dict(obj["augmentation"])
        return cls(**obj)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(obj)


@dataclass(frozen=True)
class MetricsRecord:
    method: str
    fraction: float
    model_size: str
    seed: int
    param_count: int
    train_examples_used: int
    test_accuracy: float
    wall_clock_seconds: float

    def key(self) -> tuple:
        return (self.method, self.fraction, self.model_size, self.seed)


# ---------------------------------------------------------------------------
# task setup


@dataclass
class TaskData:
    """Everything shared across sweep cells for one experiment."""

    train_pool: Dataset  # full training pool, teacher-annotated when needed
    test_set: Dataset
    vocab: Vocab
    augmented: Dataset | None = None  # extra teacher-annotated, gold-masked pool


def _needs_teacher(methods) -> bool:
    return any(m is not Variant.STANDARD_FINETUNE for m in methods)


def _annotate(dataset: Dataset, config: ExperimentConfig) -> Dataset:
    spec = config.teacher
    if spec.kind == "oracle":
        from .teacher import annotate_with_oracle

        if config.task not in GENERATORS:
            raise ConfigError(
                "the oracle teacher only knows the generated tasks; "
                "use a remote teacher for file-based tasks"
            )
        return annotate_with_oracle(
            dataset, config.task, spec.noise_rate, config.data.seed
        )
    from .teacher import RemoteTeacherConfig, TEMPLATES, annotate_with_remote

    template_name = spec.template or config.task
    if template_name not in TEMPLATES:
        raise ConfigError(
            f"no prompt template named {template_name!r}; "
            f"available: {sorted(TEMPLATES)}"
        )
    remote = RemoteTeacherConfig(
        endpoint=spec.endpoint,
        cache_dir=spec.cache_dir,
        auth_env=spec.auth_env,
        max_parallel=spec.max_parallel,
        max_retries=spec.max_retries,
        timeout=spec.timeout,
    )
    return annotate_with_remote(dataset, remote, TEMPLATES[template_name])


def setup_task(config: ExperimentConfig) -> TaskData:
    """Generate/load data, make the test set disjoint, annotate, build vocab.

    The vocabulary is built once from the full training pool (inputs, gold
    supervision, and teacher supervision), so every fraction, method, and
    seed shares one token table and model outputs stay comparable.
    """
    spec = config.data
    if config.task in GENERATORS:
        gen = GENERATORS[config.task]
        kwargs = {"depth": spec.depth} if config.task == "arithmetic" else {}
        train_pool = gen(spec.seed, spec.n_train, **kwargs)
        # disjoint seed range for the held-out draw, then drop any residual
        # input collisions so "held out" means held out
        test_set = gen(spec.seed + 10_000, spec.n_test * 2, **kwargs)
        test_set = drop_inputs_seen_in(test_set, train_pool)
        test_set = Dataset(test_set.name, test_set.examples[: spec.n_test], "test")
    else:
        full = load_jsonl(config.task)
        train_pool, test_set = split_train_val(full, spec.test_fraction, spec.seed)
        test_set = Dataset(test_set.name, test_set.examples, "test")

    augmented = None
    if _needs_teacher(config.methods):
        train_pool = _annotate(train_pool, config)
        if config.augmentation is not None:
            if config.task not in GENERATORS:
                raise ConfigError("augmentation requires a generated task")
            extra = GENERATORS[config.task](
                config.augmentation.seed,
                config.augmentation.n,
                **({"depth": spec.depth} if config.task == "arithmetic" else {}),
            )
            extra = drop_inputs_seen_in(extra, test_set)
            augmented = mask_gold(_annotate(extra, config))

    corpus: list[str] = []
    for ds in filter(None, (train_pool, augmented)):
        for ex in ds.examples:
            for part in (
                ex.input,
                ex.gold_label,
                ex.gold_rationale,
                ex.teacher_label,
                ex.teacher_rationale,
            ):
                if part:
                    corpus.append(part)
    vocab = build_vocab(corpus, config.max_vocab)
    return TaskData(train_pool=train_pool, test_set=test_set, vocab=vocab, augmented=augmented)


# ---------------------------------------------------------------------------
# sweep cells


def _cell_train_set(task: TaskData, config: ExperimentConfig, variant: Variant,
                    fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """(train split, val split) for one sweep cell.

    The subsample is keyed by seed only, so every method at a given
    (fraction, seed) trains on exactly the same examples, and fractions nest.
    """
    sub = subsample(task.train_pool, fraction, seed=seed)
    if config.supervision == "unlabeled" and variant is not Variant.STANDARD_FINETUNE:
        sub = mask_gold(sub)
    train_split, val_split = split_train_val(sub, 0.10, seed=seed)
    if config.supervision == "unlabeled":
        # no gold anywhere: early-stopping accuracy scores against the
        # teacher's labels instead
        val_split = Dataset(
            val_split.name,
            [replace(ex, gold_label=ex.teacher_label) for ex in val_split.examples],
            val_split.split,
        )
    if task.augmented is not None and variant is not Variant.STANDARD_FINETUNE:
        train_split = Dataset(
            train_split.name,
            train_split.examples + task.augmented.examples,
            train_split.split,
        )
    return train_split, val_split


def run_cell(
    task: TaskData,
    config: ExperimentConfig,
    variant: Variant,
    fraction: float,
    size: str,
    seed: int,
) -> MetricsRecord:
    """Train and evaluate one sweep cell; deterministic given its key."""
    started = time.perf_counter()
    train_split, val_split = _cell_train_set(task, config, variant, fraction, seed)
    model_config = config_for_size(
        size,
        vocab_size=len(task.vocab),
        max_src_len=config.train.max_input_len,
        max_tgt_len=config.train.max_output_len,
    )
    model = build_model(model_config, seed=seed)
    train_config = TrainConfig(
        variant=variant,
        rationale_weight=config.train.rationale_weight,
        learning_rate=config.train.learning_rate,
        batch_size=config.train.batch_size,
        max_steps=config.train.max_steps,
        max_input_len=config.train.max_input_len,
        max_output_len=config.train.max_output_len,
        seed=seed,
        eval_every=config.train.eval_every,
        patience=config.train.patience,
    )
    train(model, train_split, train_config, task.vocab, val_set=val_split)
    accuracy = evaluate(model, task.vocab, task.test_set)
    return MetricsRecord(
        method=variant.value,
        fraction=fraction,
        model_size=size,
        seed=seed,
        param_count=param_count(model_config),
        train_examples_used=len(train_split.examples),
        test_accuracy=accuracy,
        wall_clock_seconds=time.perf_counter() - started,
    )


# ---------------------------------------------------------------------------
# records file


def load_records(path: str | Path) -> list[MetricsRecord]:
    path = Path(path)
    if not path.exists():
        return []
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is not None and tuple(reader.fieldnames) != RECORD_COLUMNS:
            raise ValueError(
                f"{path} columns {reader.fieldnames} != expected {list(RECORD_COLUMNS)}"
            )
        for row in reader:
            records.append(
                MetricsRecord(
                    method=row["method"],
                    fraction=float(row["fraction"]),
                    model_size=row["model_size"],
                    seed=int(row["seed"]),
                    param_count=int(row["param_count"]),
                    train_examples_used=int(row["train_examples_used"]),
                    test_accuracy=float(row["test_accuracy"]),
                    wall_clock_seconds=float(row["wall_clock_seconds"]),
                )
            )
    return records


def _append_record(path: Path, record: MetricsRecord) -> None:
    new_file = not path.exists()
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(RECORD_COLUMNS)
        writer.writerow(
            [
                record.method,
                repr(record.fraction),
                record.model_size,
                record.seed,
                record.param_count,
                record.train_examples_used,
                repr(record.test_accuracy),
                repr(record.wall_clock_seconds),
            ]
        )
        fh.flush()


def run_experiment(config: ExperimentConfig) -> list[MetricsRecord]:
    """Full cross-product sweep with incremental flushing and resume.

    Completed cells (matched by record key in the existing records.csv) are
    skipped, so an interrupted sweep continues where it stopped. Cells may
    run on a small thread pool; records are written by this thread only, in
    submission order, keeping the file layout deterministic.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records_path = out_dir / "records.csv"
    existing = load_records(records_path)
    done = {r.key() for r in existing}

    task = setup_task(config)
    cells = [
        (variant, fraction, size, seed)
        for variant, fraction, size, seed in itertools.product(
            config.methods, config.fractions, config.sizes, config.seeds
        )
        if (variant.value, fraction, size, seed) not in done
    ]
    log.info("sweep: %d cells to run, %d already present", len(cells), len(existing))

    records = list(existing)
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        futures = [
            (cell, pool.submit(run_cell, task, config, *cell)) for cell in cells
        ]
        for (variant, fraction, size, seed), future in futures:
            try:
                record = future.result()
            except Exception:
                log.exception(
                    "cell failed: %s fraction=%s size=%s seed=%s",
                    variant.value, fraction, size, seed,
                )
                continue
            _append_record(records_path, record)
            records.append(record)
            log.info(
                "cell done: %s fraction=%s size=%s seed=%d accuracy=%.4f",
                record.method, record.fraction, record.model_size,
                record.seed, record.test_accuracy,
            )
    return records


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class SummaryRow:
    method: str
    fraction: float
    model_size: str
    mean_accuracy: float
    std_error: float
    n_seeds: int


def summarize(records: list[MetricsRecord]) -> list[SummaryRow]:
    """Mean and standard error per (method, fraction, model_size)."""
    if not records:
        raise ValueError("no records to summarize")
    groups: dict[tuple, list[float]] = {}
    for r in records:
        groups.setdefault((r.method, r.fraction, r.model_size), []).append(
            r.test_accuracy
        )
    rows = []
    for (method, fraction, size), values in sorted(groups.items()):
        n = len(values)
        mean = sum(values) / n
        if n > 1:
            variance = sum((v - mean) ** 2 for v in values) / (n - 1)
            std_error = math.sqrt(variance / n)
        else:
            std_error = 0.0
        rows.append(SummaryRow(method, fraction, size, mean, std_error, n))
    return rows


def crossover_fraction(rows: list[SummaryRow], model_size: str) -> float | None:
    """Smallest fraction where the two-stream method's mean accuracy reaches
    the best single-stream baseline mean at fraction 1.0, within one size.

    Returns None when the baseline has no fraction-1.0 entry or no fraction
    qualifies.
    """
    step_name = Variant.STEP_BY_STEP.value
    baselines = [
        r.mean_accuracy
        for r in rows
        if r.model_size == model_size and r.method != step_name and r.fraction == 1.0
    ]
    if not baselines:
        return None
    target = max(baselines)
    candidates = sorted(
        r.fraction
        for r in rows
        if r.model_size == model_size
        and r.method == step_name
        and r.mean_accuracy >= target
    )
    return candidates[0] if candidates else None


def save_summary(rows: list[SummaryRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.method,
                    repr(row.fraction),
                    row.model_size,
                    repr(row.mean_accuracy),
                    repr(row.std_error),
                    row.n_seeds,
                ]
            )


def load_summary(path: str | Path) -> list[SummaryRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is not None and tuple(reader.fieldnames) != SUMMARY_COLUMNS:
            raise ValueError(
                f"{path} columns {reader.fieldnames} != expected {list(SUMMARY_COLUMNS)}"
            )
        return [
            SummaryRow(
                method=row["method"],
                fraction=float(row["fraction"]),
                model_size=row["model_size"],
                mean_accuracy=float(row["mean_accuracy"]),
                std_error=float(row["std_error"]),
                n_seeds=int(row["n_seeds"]),
            )
            for row in reader
        ]
