"""Online learning vs periodic batch retraining on a drifting synthetic stream.

Three malware families appear, peak and fade over 60 days. A model trained once
on the first day never sees them; retraining helps; online updates help most.
"""
import time

from ctxwl import RelabelParams, compare_regimens, default_scenario, generate
from ctxwl.harness import prepare

t0 = time.perf_counter()
graphs = generate(default_scenario(seed=0))
stream = prepare(graphs, RelabelParams(h=2))
print(f"{len(graphs)} graphs over 60 days, prepared in {time.perf_counter() - t0:.1f} s")

reports = compare_regimens(stream)
print(f"\n{'regimen':<12}{'error':>8}{'F1':>8}")
for name, r in sorted(reports.items(), key=lambda kv: kv[1].final_error):
    print(f"{name:<12}{r.final_error:8.4f}{r.f_measure:8.4f}")

online = reports["online"]
print("\nonline cumulative error every 10 days:")
for d, e in zip(online.days, online.cum_error):
    if d % 10 == 0:
        print(f"  day {d:2d}: {e:.4f}")
