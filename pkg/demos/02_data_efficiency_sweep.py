"""How far does rationale supervision stretch a fixed labeling budget?

This runs a miniature version of the full benchmark: both training methods
across nested fractions of one training pool, a couple of seeds each, into
the same records.csv/summary.csv files the real harness produces. The
question the summary answers: at what fraction of the data does the
two-stream student reach what plain distillation needs the full set for?

Runs in three to four minutes; re-running resumes (finished cells are
skipped), and deleting the output directory starts fresh.
"""

from pathlib import Path

from stepdistill.harness import (
    DataSpec,
    ExperimentConfig,
    TrainSpec,
    crossover_fraction,
    run_experiment,
    save_summary,
    summarize,
)
from stepdistill.trainer import Variant

OUT_DIR = Path("demo_runs/data_efficiency")

config = ExperimentConfig(
    task="arithmetic",
    out_dir=str(OUT_DIR),
    methods=(Variant.STANDARD_DISTILL, Variant.STEP_BY_STEP),
    fractions=(0.25, 0.5, 1.0),
    sizes=("small",),
    seeds=(0, 1),
    data=DataSpec(n_train=800, n_test=200, seed=0),
    train=TrainSpec(
        learning_rate=1e-2,
        batch_size=32,
        max_steps=800,
        eval_every=200,
        patience=4,
        max_input_len=32,
        max_output_len=32,
    ),
)

records = run_experiment(config)
rows = summarize(records)
save_summary(rows, str(OUT_DIR / "summary.csv"))

print(f"\nrecords: {OUT_DIR / 'records.csv'}")
print(f"summary: {OUT_DIR / 'summary.csv'}")
print(f"{'method':18s} {'fraction':>8s} {'examples':>9s} {'mean acc':>9s} {'stderr':>7s}")
for row in sorted(rows, key=lambda r: (r.method, r.fraction)):
    examples = next(
        r.train_examples_used
        for r in records
        if (r.method, r.fraction) == (row.method, row.fraction)
    )
    print(f"{row.method:18s} {row.fraction:8.4f} {examples:9d} "
          f"{row.mean_accuracy:9.3f} {row.std_error:7.3f}")

crossover = crossover_fraction(rows, "small")
full_data = max(
    row.mean_accuracy
    for row in rows
    if row.method != Variant.STEP_BY_STEP.value and row.fraction == 1.0
)
print(f"\nbest single-stream accuracy with ALL the data: {full_data:.3f}")
if crossover is None:
    print("the two-stream student never reached it within this grid")
else:
    print(f"the two-stream student reached it with a fraction of {crossover} "
          f"of the training pool")
