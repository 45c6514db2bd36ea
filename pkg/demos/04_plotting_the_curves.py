"""Turning a finished sweep's summary into figures.

The plotting package is deliberately separate from the training library: it
is installed on its own (``pip install -e plots/``) and reads nothing but
the ``summary.csv`` a sweep leaves behind. Run ``02_data_efficiency_sweep.py``
first so there is a summary to plot.

Three figure kinds come out of the same file: the data-efficiency curves
(accuracy vs. training fraction per method), the size curves (accuracy vs.
model size, with an optional horizontal line marking the teacher's own
accuracy), and a frontier scatter whose marker area scales with each size's
nominal parameter count. Every figure also gets a ``.points.json`` sidecar
holding exactly the numbers plotted, so downstream scripts never have to
parse pixels.
"""

import json
import sys
from pathlib import Path

try:
    from curveplots import PlotSpec, render
except ImportError:
    sys.exit(
        "curveplots is not installed; run: pip install -e plots/ --no-build-isolation"
    )

SUMMARY = Path("demo_runs/data_efficiency/summary.csv")
FIG_DIR = Path("demo_runs/figures")

if not SUMMARY.exists():
    sys.exit(f"{SUMMARY} not found; run demos/02_data_efficiency_sweep.py first")

print(f"=== plotting {SUMMARY} ===")
for kind, extra in [
    ("fraction_curves", {}),
    # The oracle teacher answers arithmetic perfectly, hence reference 1.0.
    ("size_curves", {"teacher_accuracy": 1.0}),
    ("frontier", {}),
]:
    out = FIG_DIR / f"{kind}.png"
    sidecar = render(
        PlotSpec(summary_path=str(SUMMARY), kind=kind, output_path=str(out), **extra)
    )
    print(f"{kind:16s} -> {out}  ({len(sidecar['series'])} series)")

print()
print("=== the sidecar is the plot, minus the pixels ===")
points = json.loads((FIG_DIR / "fraction_curves.png.points.json").read_text())
for series in points["series"]:
    label = series["method"]
    pairs = ", ".join(
        f"{x:g}: {y:.3f}" for x, y in zip(series["x"], series["y"])
    )
    print(f"  {label:18s} {pairs}")
print()
print("Those numbers are byte-for-byte the summary.csv values — plots can be")
print("asserted against in tests without ever diffing an image.")
