"""Core plotting logic: summary loading, validation, and figure rendering."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

# Exact header the benchmark harness writes; consumed verbatim.
SUMMARY_COLUMNS = (
    "method",
    "fraction",
    "model_size",
    "mean_accuracy",
    "std_error",
    "n_seeds",
)

KINDS = ("fraction_curves", "size_curves", "frontier")

# Canonical ordering of the size ladder on the size axis. Sizes not listed
# here are appended alphabetically after the known ones.
SIZE_ORDER = ("small", "base", "large")

# Nominal parameter count per model size, used only to scale frontier marker
# areas. Computed as n_layers * d_model**2 from the trainer's size ladder
# (small d=64 L=2, base d=128 L=4, large d=256 L=6); embedding tables are
# excluded because they depend on the dataset vocabulary, which the summary
# file does not record.
SIZE_NOMINAL_PARAMS = {
    "small": 2 * 64**2,
    "base": 4 * 128**2,
    "large": 6 * 256**2,
}

# Marker area (matplotlib points^2) given to the largest known size; other
# sizes scale down proportionally to their nominal parameter count.
_FRONTIER_MAX_AREA = 300.0


class SchemaMismatch(ValueError):
    """The summary file does not match the expected schema.

    The message always names the offending column.
    """


@dataclass(frozen=True)
class PlotSpec:
    """What to plot and where to put it."""

    summary_path: str
    kind: str
    output_path: str
    teacher_accuracy: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {list(KINDS)}, got {self.kind!r}")
        if self.teacher_accuracy is not None and not (
            0.0 <= self.teacher_accuracy <= 1.0
        ):
            raise ValueError(
                f"teacher_accuracy must be in [0, 1], got {self.teacher_accuracy!r}"
            )


def _check_header(header: list[str] | None, path: str) -> None:
    if header is None:
        raise SchemaMismatch(f"{path}: empty file, expected columns {list(SUMMARY_COLUMNS)}")
    for name in SUMMARY_COLUMNS:
        if name not in header:
            raise SchemaMismatch(f"{path}: missing column {name!r}")
    for name in header:
        if name not in SUMMARY_COLUMNS:
            raise SchemaMismatch(f"{path}: unexpected column {name!r}")
    if tuple(header) != SUMMARY_COLUMNS:
        for got, want in zip(header, SUMMARY_COLUMNS):
            if got != want:
                raise SchemaMismatch(
                    f"{path}: column {got!r} out of order, expected {want!r}"
                )


def _parse_field(raw: str, column: str, cast, path: str, line: int):
    try:
        return cast(raw)
    except ValueError:
        raise SchemaMismatch(
            f"{path}: line {line}: column {column!r} has non-numeric value {raw!r}"
        ) from None


def load_summary_rows(path: str) -> list[dict]:
    """Read and validate a harness summary file.

    Returns one dict per data row with ``fraction``, ``mean_accuracy`` and
    ``std_error`` parsed to float and ``n_seeds`` to int. Raises
    :class:`SchemaMismatch` naming the offending column when the header or a
    field does not conform.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        _check_header(header, path)
        rows = []
        for line_no, fields in enumerate(reader, start=2):
            if not fields:
                continue
            if len(fields) != len(SUMMARY_COLUMNS):
                raise SchemaMismatch(
                    f"{path}: line {line_no}: expected {len(SUMMARY_COLUMNS)} fields, "
                    f"got {len(fields)}"
                )
            raw = dict(zip(SUMMARY_COLUMNS, fields))
            rows.append(
                {
                    "method": raw["method"],
                    "fraction": _parse_field(raw["fraction"], "fraction", float, path, line_no),
                    "model_size": raw["model_size"],
                    "mean_accuracy": _parse_field(
                        raw["mean_accuracy"], "mean_accuracy", float, path, line_no
                    ),
                    "std_error": _parse_field(
                        raw["std_error"], "std_error", float, path, line_no
                    ),
                    "n_seeds": _parse_field(raw["n_seeds"], "n_seeds", int, path, line_no),
                }
            )
    return rows


def _size_sort_key(size: str):
    try:
        return (0, SIZE_ORDER.index(size))
    except ValueError:
        return (1, size)


def _series_label(method: str, size: str, n_sizes: int) -> str:
    return method if n_sizes == 1 else f"{method} ({size})"


def _group_series(rows: list[dict]) -> list[tuple[str, str, list[dict]]]:
    """Group rows into (method, model_size, rows-sorted-by-fraction) series."""
    groups: dict[tuple[str, str], list[dict]] = {}
    for row in rows:
        groups.setdefault((row["method"], row["model_size"]), []).append(row)
    out = []
    for (method, size) in sorted(groups, key=lambda k: (k[0], _size_sort_key(k[1]))):
        series_rows = sorted(groups[(method, size)], key=lambda r: r["fraction"])
        out.append((method, size, series_rows))
    return out


def _plot_fraction_curves(ax, rows: list[dict]) -> list[dict]:
    series = _group_series(rows)
    n_sizes = len({size for _, size, _ in series})
    points = []
    for method, size, srows in series:
        xs = [r["fraction"] for r in srows]
        ys = [r["mean_accuracy"] for r in srows]
        errs = [r["std_error"] for r in srows]
        label = _series_label(method, size, n_sizes)
        if any(e != 0.0 for e in errs):
            ax.errorbar(xs, ys, yerr=errs, marker="o", capsize=3, label=label)
        else:
            ax.plot(xs, ys, marker="o", label=label)
        points.append(
            {
                "method": method,
                "model_size": size,
                "x": xs,
                "y": ys,
                "std_error": errs,
            }
        )
    ax.set_xlabel("training-set fraction")
    ax.set_ylabel("test accuracy")
    ax.set_title("Accuracy vs. training-set fraction")
    return points


def _plot_size_curves(ax, rows: list[dict], teacher_accuracy: float | None) -> list[dict]:
    top_fraction = max(r["fraction"] for r in rows)
    at_top = [r for r in rows if r["fraction"] == top_fraction]
    sizes = sorted({r["model_size"] for r in at_top}, key=_size_sort_key)
    positions = {size: i for i, size in enumerate(sizes)}
    methods = sorted({r["method"] for r in at_top})
    points = []
    for method in methods:
        mrows = sorted(
            (r for r in at_top if r["method"] == method),
            key=lambda r: _size_sort_key(r["model_size"]),
        )
        xs = [positions[r["model_size"]] for r in mrows]
        ys = [r["mean_accuracy"] for r in mrows]
        errs = [r["std_error"] for r in mrows]
        if any(e != 0.0 for e in errs):
            ax.errorbar(xs, ys, yerr=errs, marker="o", capsize=3, label=method)
        else:
            ax.plot(xs, ys, marker="o", label=method)
        points.append(
            {
                "method": method,
                "model_size": [r["model_size"] for r in mrows],
                "x": [r["model_size"] for r in mrows],
                "y": ys,
                "std_error": errs,
                "fraction": top_fraction,
            }
        )
    if teacher_accuracy is not None:
        ax.axhline(
            teacher_accuracy, linestyle="--", color="gray", label="teacher"
        )
    ax.set_xticks(range(len(sizes)))
    ax.set_xticklabels(sizes)
    ax.set_xlabel("model size")
    ax.set_ylabel("test accuracy")
    ax.set_title(f"Accuracy vs. model size (fraction {top_fraction:g})")
    return points


def _plot_frontier(ax, rows: list[dict]) -> list[dict]:
    unknown = sorted(
        {r["model_size"] for r in rows} - set(SIZE_NOMINAL_PARAMS)
    )
    if unknown:
        raise ValueError(
            f"frontier needs a nominal parameter count for every model size; "
            f"unknown size(s): {unknown}"
        )
    max_params = max(SIZE_NOMINAL_PARAMS.values())
    series = _group_series(rows)
    points = []
    # One color per method, shared across that method's sizes.
    method_colors: dict[str, object] = {}
    for method, size, srows in series:
        xs = [r["fraction"] for r in srows]
        ys = [r["mean_accuracy"] for r in srows]
        params = SIZE_NOMINAL_PARAMS[size]
        area = _FRONTIER_MAX_AREA * params / max_params
        if method not in method_colors:
            line, = ax.plot([], [])
            method_colors[method] = line.get_color()
        ax.scatter(
            xs,
            ys,
            s=area,
            alpha=0.7,
            color=method_colors[method],
            label=f"{method} ({size})",
        )
        points.append(
            {
                "method": method,
                "model_size": size,
                "x": xs,
                "y": ys,
                "std_error": [r["std_error"] for r in srows],
                "nominal_param_count": params,
            }
        )
    ax.set_xlabel("training-set fraction")
    ax.set_ylabel("test accuracy")
    ax.set_title("Accuracy frontier (marker area ∝ parameter count)")
    return points


def render(spec: PlotSpec) -> dict:
    """Render the figure described by ``spec``.

    Writes the image to ``spec.output_path`` and a machine-readable sidecar of
    the plotted points to ``spec.output_path + ".points.json"``. The sidecar
    values equal the summary values exactly. Returns the sidecar payload.
    """
    rows = load_summary_rows(spec.summary_path)
    if not rows:
        raise ValueError(f"{spec.summary_path}: no data rows to plot")

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    try:
        if spec.kind == "fraction_curves":
            points = _plot_fraction_curves(ax, rows)
        elif spec.kind == "size_curves":
            points = _plot_size_curves(ax, rows, spec.teacher_accuracy)
        else:
            points = _plot_frontier(ax, rows)
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        out_dir = os.path.dirname(os.path.abspath(spec.output_path))
        os.makedirs(out_dir, exist_ok=True)
        fig.savefig(spec.output_path, dpi=150)
    finally:
        plt.close(fig)

    sidecar = {
        "kind": spec.kind,
        "summary_path": spec.summary_path,
        "series": points,
    }
    if spec.teacher_accuracy is not None:
        sidecar["teacher_accuracy"] = spec.teacher_accuracy
    sidecar_path = spec.output_path + ".points.json"
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")
    return sidecar
