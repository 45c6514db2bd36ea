"""Command-line entry point: render one figure from a summary file."""

from __future__ import annotations

import argparse
import sys

from .plots import KINDS, PlotSpec, SchemaMismatch, render


class UsageError(Exception):
    """Bad command-line arguments."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="curveplots",
        description="Render accuracy curves from a benchmark summary.csv",
    )
    parser.add_argument(
        "--summary",
        required=True,
        metavar="PATH",
        help="input summary.csv written by the benchmark harness",
    )
    parser.add_argument(
        "--kind",
        required=True,
        choices=KINDS,
        help="which figure to render",
    )
    parser.add_argument(
        "--teacher-accuracy",
        type=float,
        default=None,
        metavar="ACC",
        help="optional teacher accuracy in [0, 1], drawn as a horizontal "
        "reference line on size curves",
    )
    parser.add_argument(
        "--out",
        required=True,
        metavar="PATH",
        help="output image path; the plotted points are also written to "
        "PATH + '.points.json'",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        try:
            spec = PlotSpec(
                summary_path=args.summary,
                kind=args.kind,
                output_path=args.out,
                teacher_accuracy=args.teacher_accuracy,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        render(spec)
        print(f"wrote {args.out} and {args.out}.points.json")
        return 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130
    except SchemaMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
