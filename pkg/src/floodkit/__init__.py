"""Building-level flood claim modeling toolkit.

Layered frequency/severity framework: rainfall-extremes indicators computed
from a gridded daily precipitation archive, tail-heaviness scores from
peaks-over-threshold fits, geolocated building/surrounding features, weighted
GLMs, and an evaluation harness with stratified cross-validation. Everything
runs end-to-end on a synthetic ground-truth scenario.
"""

__version__ = "0.1.0"

# Probability clipping bound shared by the GLM solver and the metric suite.
PROB_CLIP = 1e-12
