"""Render accuracy curves from a benchmark summary file.

This package consumes the ``summary.csv`` written by the benchmark harness
(columns ``method,fraction,model_size,mean_accuracy,std_error,n_seeds``) and
renders one of three figure kinds:

* ``fraction_curves`` — accuracy versus training-set fraction, one series per
  method, with standard-error bars.
* ``size_curves`` — accuracy versus model size at the largest fraction
  present, one series per method, with an optional horizontal reference line
  for the teacher's accuracy.
* ``frontier`` — accuracy versus fraction as a scatter in which marker area
  is proportional to each model size's nominal parameter count.

Every plotted point is also written to a machine-readable sidecar
(``<output>.points.json``) whose values equal the input values exactly —
no interpolation and no rescaling.
"""

from .plots import (
    KINDS,
    SIZE_NOMINAL_PARAMS,
    SIZE_ORDER,
    SUMMARY_COLUMNS,
    PlotSpec,
    SchemaMismatch,
    load_summary_rows,
    render,
)

__all__ = [
    "KINDS",
    "SIZE_NOMINAL_PARAMS",
    "SIZE_ORDER",
    "SUMMARY_COLUMNS",
    "PlotSpec",
    "SchemaMismatch",
    "load_summary_rows",
    "render",
]
