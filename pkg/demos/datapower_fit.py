"""
Fit the XOR data-dependent power model on the simulation backend.

Sweeps the Hamming weight of the two 512-bit operands at 2.4 and 3.0 GHz,
fits intercept + v1 + v2 per frequency and prints the per-bit, per-core
coefficients next to a prediction for one operand pair.

    python demos/datapower_fit.py
"""

from eeprobe import datapower as dp
from eeprobe.hwif import BackendConfig, open_backend

CORES = 36

with open_backend(BackendConfig(kind="sim", seed=3)) as hw:
    cpus = hw.one_cpu_per_core()
    points = dp.run_sweep(hw, dp.default_sweep(duration_s=5.0), cpus=cpus)

for khz, fit in sorted(dp.fit_power_model(points, CORES).items()):
    print(f"{khz / 1e6:.1f} GHz: {fit.intercept_w:6.1f} W + {fit.coef['v1']:.3f} mW/bit (v1) "
          f"+ {fit.coef['v2']:.3f} mW/bit (v2 beyond v1), rss {fit.rss:.2f} over {fit.n} points")
    print(f"          all ones vs all zeros: {dp.predict_power(fit, 512, 512, CORES) - fit.intercept_w:.1f} W")
