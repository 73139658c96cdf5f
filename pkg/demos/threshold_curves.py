"""Where does the tolerance line sit?

Prints bias scores for a few (correlation, gain) pairs and the boundary
correlation at which a feature of given gain starts being cut, for the three
usual tolerances. With matplotlib installed, also writes threshold_curves.svg.

    python3 demos/threshold_curves.py
"""
import sys

import numpy as np

from fairtrim.debias import DEFAULT_THRESHOLDS, bias_score, threshold_curve
from fairtrim.report import render_curve_svg, threshold_curve_samples

pairs = [(0.0, 0.5), (0.5, 0.1), (0.5, 0.02), (0.9, 0.05), (-0.9, 0.05), (1.0, 0.5)]
print("correlation   gain    score")
for c, g in pairs:
    print(f"{c:11.2f} {g:6.2f} {bias_score(c, g):8.4f}")

gains = np.array([0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0])
print("\nboundary |correlation| by gain (blank: never cut / always cut)")
print("gain    " + "  ".join(f"tau={t:<5g}" for t in DEFAULT_THRESHOLDS))
bounds = {t: threshold_curve(t, gains) for t in DEFAULT_THRESHOLDS}
for i, g in enumerate(gains):
    cells = ["" if np.isnan(bounds[t][i]) else f"{bounds[t][i]:.4f}" for t in DEFAULT_THRESHOLDS]
    print(f"{g:<7g} " + "  ".join(f"{c:<9}" for c in cells))

try:
    path = render_curve_svg(threshold_curve_samples(), "threshold_curves.svg")
    print(f"\nwrote {path}")
except ImportError:
    print("\nmatplotlib not installed; skipping the SVG", file=sys.stderr)
