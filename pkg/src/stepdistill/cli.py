"""Command-line entry point.

Subcommands cover the full pipeline: ``gen`` synthetic data, ``extract``
teacher annotations, ``train`` a single student, ``eval`` a checkpoint,
``sweep`` a whole experiment grid, and ``summarize`` its records.

Exit codes: 0 success, 1 usage error (bad flags, malformed or missing
config), 2 runtime failure (divergence, transport errors, corrupt files).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import data as data_mod
from .harness import (
    ConfigError,
    ExperimentConfig,
    crossover_fraction,
    evaluate,
    load_records,
    run_experiment,
    save_summary,
    summarize,
)
from .model import SIZE_LADDER, config_for_size, load_model
from .tokenizer import Vocab, build_vocab
from .trainer import TrainConfig, Variant, save_history, train

log = logging.getLogger(__name__)


class UsageError(Exception):
    """Bad invocation; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags by default; this interface reserves 2 for
    # runtime failures, so route parse errors through UsageError instead.
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="stepdistill", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="emit a synthetic dataset as JSONL")
    gen.add_argument("--task", required=True, choices=sorted(data_mod.GENERATORS))
    gen.add_argument("--n", type=int, required=True, help="number of examples")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--depth", type=int, default=2, help="max operator count (arithmetic)")
    gen.add_argument("--out", default="-", help="output path, '-' for stdout")

    extract = sub.add_parser("extract", help="annotate a JSONL file with teacher outputs")
    extract.add_argument("--in", dest="in_path", required=True, metavar="IN")
    extract.add_argument("--out", required=True)
    extract.add_argument("--teacher", choices=("oracle", "remote"), default="oracle")
    extract.add_argument("--task", required=True,
                         help="oracle ruleset / prompt template name")
    extract.add_argument("--noise-rate", type=float, default=0.0)
    extract.add_argument("--seed", type=int, default=0)
    extract.add_argument("--endpoint", default="")
    extract.add_argument("--cache-dir", default="")
    extract.add_argument("--auth-env", default="TEACHER_API_TOKEN")
    extract.add_argument("--max-parallel", type=int, default=4)
    extract.add_argument("--max-retries", type=int, default=3)
    extract.add_argument("--timeout", type=float, default=30.0)

    tr = sub.add_parser("train", help="train one student on a JSONL file")
    tr.add_argument("--train", dest="train_path", required=True, metavar="TRAIN")
    tr.add_argument("--variant", required=True, choices=[v.value for v in Variant])
    tr.add_argument("--size", default="small", choices=sorted(SIZE_LADDER))
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", required=True, help="output directory")
    tr.add_argument("--learning-rate", type=float, default=1e-2)
    tr.add_argument("--batch-size", type=int, default=16)
    tr.add_argument("--max-steps", type=int, default=1500)
    tr.add_argument("--eval-every", type=int, default=100)
    tr.add_argument("--patience", type=int, default=5)
    tr.add_argument("--rationale-weight", type=float, default=1.0)
    tr.add_argument("--max-input-len", type=int, default=64)
    tr.add_argument("--max-output-len", type=int, default=64)
    tr.add_argument("--val-fraction", type=float, default=0.10)
    tr.add_argument("--max-vocab", type=int, default=4096)
    tr.add_argument("--gold", default=None, metavar="JSONL",
                    help="gold-labeled JSONL supplying labels/validation when "
                         "the training file holds teacher annotations")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a gold test JSONL")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--vocab", required=True)
    ev.add_argument("--test", required=True)

    sw = sub.add_parser("sweep", help="run a full experiment grid from a config file")
    sw.add_argument("--config", required=True, help="experiment config JSON")

    sm = sub.add_parser("summarize", help="aggregate records.csv into summary.csv")
    sm.add_argument("--records", required=True)
    sm.add_argument("--out", required=True)
    return parser


def _cmd_gen(args) -> int:
    kwargs = {"depth": args.depth} if args.task == "arithmetic" else {}
    dataset = data_mod.GENERATORS[args.task](args.seed, args.n, **kwargs)
    if args.out == "-":
        for ex in dataset.examples:
            sys.stdout.write(data_mod.example_to_json(ex) + "\n")
    else:
        data_mod.save_jsonl(dataset, args.out)
    return 0


def _cmd_extract(args) -> int:
    from . import teacher as teacher_mod

    dataset = data_mod.load_jsonl(args.in_path)
    if args.teacher == "oracle":
        annotated = teacher_mod.annotate_with_oracle(
            dataset, args.task, args.noise_rate, args.seed
        )
    else:
        if not (args.endpoint and args.cache_dir):
            raise UsageError("remote extraction needs --endpoint and --cache-dir")
        if args.task not in teacher_mod.TEMPLATES:
            raise UsageError(
                f"no prompt template named {args.task!r}; "
                f"available: {sorted(teacher_mod.TEMPLATES)}"
            )
        config = teacher_mod.RemoteTeacherConfig(
            endpoint=args.endpoint,
            cache_dir=args.cache_dir,
            auth_env=args.auth_env,
            max_parallel=args.max_parallel,
            max_retries=args.max_retries,
            timeout=args.timeout,
        )
        annotated = teacher_mod.annotate_with_remote(
            dataset, config, teacher_mod.TEMPLATES[args.task]
        )
    data_mod.save_jsonl(annotated, args.out, supervision="teacher")
    log.info("extracted %d/%d examples", len(annotated.examples), len(dataset.examples))
    return 0


def _cmd_train(args) -> int:
    variant = Variant(args.variant)
    supervision = "gold" if variant is Variant.STANDARD_FINETUNE else "teacher"
    dataset = data_mod.load_jsonl(args.train_path, supervision=supervision)
    if args.gold is not None:
        gold = data_mod.load_jsonl(args.gold)
        by_input = {ex.input: ex for ex in gold.examples}
        merged = []
        for ex in dataset.examples:
            match = by_input.get(ex.input)
            if match is not None:
                ex.gold_label = match.gold_label
                ex.gold_rationale = match.gold_rationale
            merged.append(ex)
        dataset = data_mod.Dataset(dataset.name, merged, dataset.split)

    corpus = []
    for ex in dataset.examples:
        for part in (ex.input, ex.gold_label, ex.gold_rationale,
                     ex.teacher_label, ex.teacher_rationale):
            if part:
                corpus.append(part)
    vocab = build_vocab(corpus, args.max_vocab)

    train_set, val_set = data_mod.split_train_val(dataset, args.val_fraction, args.seed)
    if not any(ex.gold_label for ex in val_set.examples):
        # teacher-only data: score early stopping against the teacher's labels
        val_set = data_mod.Dataset(
            val_set.name,
            [data_mod.Example(ex.input, gold_label=ex.teacher_label,
                              teacher_label=ex.teacher_label,
                              teacher_rationale=ex.teacher_rationale)
             for ex in val_set.examples],
            val_set.split,
        )

    from .model import build_model, save_model

    model_config = config_for_size(
        args.size, vocab_size=len(vocab),
        max_src_len=args.max_input_len, max_tgt_len=args.max_output_len,
    )
    model = build_model(model_config, seed=args.seed)
    result = train(
        model,
        train_set,
        TrainConfig(
            variant=variant,
            rationale_weight=args.rationale_weight,
            learning_rate=args.learning_rate,
            batch_size=args.batch_size,
            max_steps=args.max_steps,
            max_input_len=args.max_input_len,
            max_output_len=args.max_output_len,
            seed=args.seed,
            eval_every=args.eval_every,
            patience=args.patience,
        ),
        vocab,
        val_set=val_set if val_set.examples else None,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(result.model, out_dir / "model.ckpt")
    vocab.save(out_dir / "vocab.txt")
    save_history(result.history, out_dir / "history.csv")
    print(f"best_val_accuracy={result.best_val_accuracy} best_step={result.best_step}")
    return 0


def _cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    vocab = Vocab.load(args.vocab)
    test_set = data_mod.load_jsonl(args.test)
    accuracy = evaluate(model, vocab, test_set)
    print(f"accuracy={accuracy!r}")
    return 0


def _cmd_sweep(args) -> int:
    try:
        config = ExperimentConfig.from_file(args.config)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    records = run_experiment(config)
    rows = summarize(records)
    summary_path = Path(config.out_dir) / "summary.csv"
    save_summary(rows, summary_path)
    for size in config.sizes:
        print(f"crossover[{size}]={crossover_fraction(rows, size)}")
    print(f"records={len(records)} summary={summary_path}")
    return 0


def _cmd_summarize(args) -> int:
    if not Path(args.records).exists():
        raise UsageError(f"records file not found: {args.records}")
    records = load_records(args.records)
    rows = summarize(records)
    save_summary(rows, args.out)
    for size in sorted({r.model_size for r in rows}):
        print(f"crossover[{size}]={crossover_fraction(rows, size)}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "extract": _cmd_extract,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "summarize": _cmd_summarize,
}


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        # a path the user supplied does not exist: that is a usage problem
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
