"""
How long does a core take to reach a newly requested P-state?

Runs the compute probe on the simulation backend, switches 1.2 -> 2.4 GHz at
random moments and prints a text histogram of the wait. Because the hardware
only applies requests on a fixed update grid, the histogram comes out flat
up to the grid period.

    python demos/pstate_histogram.py [reps]
"""

import sys

from eeprobe.analysis import summarize
from eeprobe.freq_transition import measure_core_transition
from eeprobe.hwif import BackendConfig, open_backend

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 500

with open_backend(BackendConfig(kind="sim", seed=1)) as hw:
    run = measure_core_transition(hw, 1_200_000, 2_400_000, reps=reps, bin_width_us=50.0, seed=1)

s = summarize(run.samples_us)
print(f"{len(run.samples_us)} transitions, min {s.min:.0f} us, median {s.p50:.0f} us, max {s.max:.0f} us")
h = run.histogram
peak = max(h.counts)
for i, n in enumerate(h.counts):
    lo = h.origin + i * h.bin_width
    print(f"{lo:6.0f} us | {'#' * round(40 * n / peak)} {n}")
