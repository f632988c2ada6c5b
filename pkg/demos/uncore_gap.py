"""
Forced uncore switches seen from an LLC pointer chase.

Pins the uncore at 1.4 GHz, raises it to 2.4 GHz while the chase runs and
reports the halt (t_gap) and the delay until the switch lands (t_delay).
Detected stalls without a latency change are counted as rejected.

    python demos/uncore_gap.py
"""

from eeprobe.analysis import summarize
from eeprobe.freq_transition import measure_uncore_forced
from eeprobe.hwif import BackendConfig, open_backend

with open_backend(BackendConfig(kind="sim", seed=2)) as hw:
    run = measure_uncore_forced(hw, reps=200, seed=2)

acc = run.accepted
print(f"LLC latency {run.expected_before_cycles:.0f} -> {run.expected_after_cycles:.0f} cycles")
print(f"accepted {len(acc)}, rejected {len(run.rejected)}, missed {run.missed}")
gap = summarize([m.t_gap_us for m in acc])
delay = summarize([m.t_delay_us for m in acc])
print(f"t_gap   {gap.min:.2f} .. {gap.max:.2f} us (mean {gap.mean:.2f})")
print(f"t_delay {delay.min:.0f} .. {delay.max:.0f} us (mean {delay.mean:.0f})")
